"""Reverse-mode differentiation tape.

A :class:`Tape` holds nodes in creation order, so the list itself is a
topological order: every node's parents were appended before it.
:func:`backward` walks that list once, in reverse, from the loss node.
"""
from __future__ import annotations

import numpy as np

from hct.errors import ContractError, NumericError


class Node:
    """One recorded value on a tape.

    ``vjp`` maps the upstream gradient to a tuple with one entry per parent
    (``None`` where no gradient flows). Parents that are plain arrays are
    constants and never receive gradients.
    """

    __slots__ = ("tape", "index", "value", "parents", "vjp", "name", "needs_grad")
    __array_priority__ = 100

    def __init__(self, tape, index, value, parents, vjp, name, needs_grad):
        self.tape = tape
        self.index = index
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.name = name
        self.needs_grad = needs_grad

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<Node #{self.index}{label} shape={self.shape}>"

    # operator sugar; the implementations live in hct.numerics.ops
    def __add__(self, other):
        from hct.numerics import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from hct.numerics import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from hct.numerics import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from hct.numerics import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from hct.numerics import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from hct.numerics import ops
        return ops.mul(other, self)

    def __neg__(self):
        from hct.numerics import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from hct.numerics import ops
        return ops.matmul(self, other)

    def __rmatmul__(self, other):
        from hct.numerics import ops
        return ops.matmul(other, self)


class Tape:
    """Ordered record of primitive operations plus a parameter registry.

    With ``checked=True`` every recorded value is verified finite and a
    :class:`~hct.errors.NumericError` is raised at the first NaN/Inf.
    A tape is single-owner; build one per forward pass.
    """

    def __init__(self, checked=False):
        self.checked = checked
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}

    def __len__(self):
        return len(self.nodes)

    def _push(self, value, parents, vjp, name, needs_grad):
        if self.checked and not np.all(np.isfinite(value)):
            raise NumericError(f"non-finite value recorded at node #{len(self.nodes)}")
        node = Node(self, len(self.nodes), value, parents, vjp, name, needs_grad)
        self.nodes.append(node)
        return node

    def param(self, name, value):
        if name in self.params:
            raise ContractError(f"parameter {name!r} registered twice")
        node = self._push(np.asarray(value), (), None, name, True)
        self.params[name] = node
        return node

    def constant(self, value):
        return self._push(np.asarray(value), (), None, None, False)

    def record(self, value, parents, vjp):
        needs = any(isinstance(p, Node) and p.needs_grad for p in parents)
        return self._push(value, parents, vjp if needs else None, None, needs)


class Gradients(dict):
    """Mapping of parameter name to gradient array (same shape and dtype)."""

    def flat(self):
        return np.concatenate([g.ravel() for g in self.values()]) if self else np.zeros(0)


def backward(tape: Tape, root: Node) -> Gradients:
    """Gradients of the scalar ``root`` with respect to every registered parameter.

    Parameters the root does not depend on get zero gradients.
    """
    if not isinstance(root, Node) or root.tape is not tape:
        raise ContractError("backward root must be a node of the given tape")
    if root.value.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {root.shape}")

    pending = {root.index: np.ones_like(root.value)}
    found = {}
    for node in reversed(tape.nodes[: root.index + 1]):
        g = pending.pop(node.index, None)
        if g is None:
            continue
        if node.name is not None:
            found[node.name] = g
        if node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None or not isinstance(parent, Node) or not parent.needs_grad:
                continue
            prev = pending.get(parent.index)
            pending[parent.index] = pg if prev is None else prev + pg

    grads = Gradients()
    for name, node in tape.params.items():
        g = found.get(name)
        if g is None:
            g = np.zeros_like(node.value)
        grads[name] = np.asarray(g, dtype=node.value.dtype).reshape(node.shape)
    return grads
