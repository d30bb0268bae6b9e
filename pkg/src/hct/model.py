"""The Hybrid ConvNet-Transformer network.

Data flow for a batch ``x[B, 18, n]``::

    shared 1D-ConvNet per sensor        [B, 18, n]  -> [B, 18, 22]
    + temporal position encoding
    temporal encoder (scalar tokens lifted to width d_t)  -> [B, 18, 22]
    FC reduction 22 -> 10                                 -> [B, 18, 10]
    spatial encoder over 18 sensor tokens (10 -> d_s)     -> [B, 18, d_s]
    flatten, FC stack, sigmoid (1 unit) or softmax (3)
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from hct.errors import ConfigError, ShapeError
from hct.numerics import ops
from hct.numerics.layers import dense, encoder_block, encoder_param_shapes
from hct.numerics.tape import Tape

TASK_UNITS = {"two_class": 1, "multi_class": 3}
CLASS_NAMES = {"two_class": ("healthy", "PD"), "multi_class": ("2", "2.5", "3")}


@dataclass(frozen=True)
class HctConfig:
    task: str = "two_class"
    segment_length: int = 100
    sensors: int = 18
    kernel_size: int = 3
    conv_channels: tuple = (8, 16, 16, 1)
    d_temporal: int = 16
    reduced_length: int = 10
    d_spatial: int = 16
    heads: int = 4
    head_widths: tuple = (64, 32)
    dropout: float = 0.3
    dropout_attention: bool = True
    dropout_fc: bool = True
    positional_mode: str = "scaled"  # "scaled": index / L, "raw": index
    share_reduce_fc: bool = True

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        object.__setattr__(self, "head_widths", tuple(int(w) for w in self.head_widths))
        self.validate()

    def validate(self):
        if self.task not in TASK_UNITS:
            raise ConfigError(f"task must be one of {sorted(TASK_UNITS)}, got {self.task!r}")
        if len(self.conv_channels) != 4 or self.conv_channels[-1] != 1:
            raise ConfigError("conv plan needs four layers ending in a single channel")
        if min(self.conv_channels) < 1 or self.kernel_size < 1:
            raise ConfigError("conv channels and kernel size must be positive")
        lengths = self.branch_lengths()
        if min(lengths) < 1:
            raise ConfigError(f"segment length {self.segment_length} too short for the conv plan")
        for name in ("d_temporal", "d_spatial"):
            if getattr(self, name) % self.heads:
                raise ConfigError(f"{name}={getattr(self, name)} not divisible by {self.heads} heads")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout rate must be in [0, 1)")
        if self.positional_mode not in ("scaled", "raw"):
            raise ConfigError("positional_mode must be 'scaled' or 'raw'")
        if self.reduced_length < 1 or self.sensors < 1 or any(w < 1 for w in self.head_widths):
            raise ConfigError("layer widths must be positive")

    def branch_lengths(self):
        """Sequence length after each conv and pool stage of one branch."""
        k = self.kernel_size - 1
        c1 = self.segment_length - k
        c2 = c1 - k
        p1 = c2 // 2
        c3 = p1 - k
        c4 = c3 - k
        return [c1, c2, p1, c3, c4, c4 // 2]

    @property
    def branch_output_length(self):
        return self.branch_lengths()[-1]

    @property
    def output_units(self):
        return TASK_UNITS[self.task]

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        d["head_widths"] = list(self.head_widths)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class HctParams:
    """Every learnable array of one network, keyed by a dotted name."""

    config: HctConfig
    arrays: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.arrays[name]

    def __iter__(self):
        return iter(self.arrays)

    @property
    def size(self):
        return sum(a.size for a in self.arrays.values())

    def copy(self):
        return HctParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def astype(self, dtype):
        return HctParams(self.config, {k: v.astype(dtype) for k, v in self.arrays.items()})


def param_specs(config: HctConfig):
    """Ordered ``name -> (shape, fan_in)``; ``fan_in`` is None for non-weights."""
    specs = {}
    cin = 1
    for i, cout in enumerate(config.conv_channels):
        specs[f"conv.{i}.w"] = ((config.kernel_size, cin, cout), config.kernel_size * cin)
        specs[f"conv.{i}.b"] = ((cout,), None)
        cin = cout

    def block(prefix, d):
        for name, shape in encoder_param_shapes(d).items():
            specs[f"{prefix}.{name}"] = (shape, shape[0] if len(shape) == 2 else None)

    k, dt, ds, r = config.branch_output_length, config.d_temporal, config.d_spatial, config.reduced_length
    specs["temporal.embed.w"] = ((1, dt), 1)
    specs["temporal.embed.b"] = ((dt,), None)
    block("temporal.block", dt)
    specs["temporal.unembed.w"] = ((dt, 1), dt)
    specs["temporal.unembed.b"] = ((1,), None)
    if config.share_reduce_fc:
        specs["reduce.w"] = ((k, r), k)
        specs["reduce.b"] = ((r,), None)
    else:
        specs["reduce.w"] = ((config.sensors, k, r), k)
        specs["reduce.b"] = ((config.sensors, r), None)
    specs["spatial.embed.w"] = ((r, ds), r)
    specs["spatial.embed.b"] = ((ds,), None)
    block("spatial.block", ds)
    width = config.sensors * ds
    for i, w in enumerate(config.head_widths):
        specs[f"head.{i}.w"] = ((width, w), width)
        specs[f"head.{i}.b"] = ((w,), None)
        width = w
    specs["out.w"] = ((width, config.output_units), width)
    specs["out.b"] = ((config.output_units,), None)
    return specs


def init_params(config: HctConfig, seed: int) -> HctParams:
    """LeCun-uniform weights, zero biases, unit layer-norm gains (float32)."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, (shape, fan_in) in param_specs(config).items():
        if fan_in is not None:
            limit = np.sqrt(3.0 / fan_in)
            arrays[name] = rng.uniform(-limit, limit, size=shape).astype(np.float32)
        elif name.endswith("_g"):
            arrays[name] = np.ones(shape, np.float32)
        else:
            arrays[name] = np.zeros(shape, np.float32)
    return HctParams(config, arrays)


def _group(p, prefix):
    n = len(prefix) + 1
    return {k[n:]: v for k, v in p.items() if k.startswith(prefix + ".")}


# -- stages -------------------------------------------------------------------

def conv_branch(x, p, config: HctConfig):
    """Shared 1D-ConvNet applied to every window ``x[..., n]``; returns ``[..., 22]``."""
    xv = ops.value(x)
    if xv.shape[-1] != config.segment_length:
        raise ShapeError(f"segment length {xv.shape[-1]} != {config.segment_length}")
    lead = xv.shape[:-1]
    h = ops.reshape(x, (*lead, config.segment_length, 1))
    for i in range(4):
        h = ops.selu(ops.conv1d(h, p[f"conv.{i}.w"], p[f"conv.{i}.b"]))
        if i in (1, 3):
            h = ops.maxpool1d(h)
    return ops.reshape(h, (*lead, config.branch_output_length))


def positional_encoding(length, mode="scaled", dtype=np.float32):
    """Fixed index encoding ``[0, 1, ..., L-1]``, divided by ``L`` in scaled mode."""
    idx = np.arange(length, dtype=np.float64)
    if mode == "scaled":
        idx = idx / length
    elif mode != "raw":
        raise ConfigError(f"unknown positional mode {mode!r}")
    return idx.astype(dtype)


def add_positional_encoding(x, mode="temporal", length=None, scale="scaled"):
    """Add the element index (temporal, ``x[..., L]``) or sensor index (spatial,
    ``x[..., S, d]``, same value on all features of a token)."""
    xv = ops.value(x)
    if mode == "temporal":
        n = xv.shape[-1]
        pe = positional_encoding(n, scale, xv.dtype)
    elif mode == "spatial":
        if xv.ndim < 2:
            raise ShapeError("spatial encoding expects tokens [..., S, d]")
        n = xv.shape[-2]
        pe = positional_encoding(n, scale, xv.dtype)[:, None]
    else:
        raise ConfigError(f"unknown positional encoding mode {mode!r}")
    if length is not None and n != length:
        raise ShapeError(f"{mode} encoding expects {length} positions, got {n}")
    return ops.add(x, pe)


def temporal_encode(z, p, config: HctConfig, rng=None):
    """Temporal encoder over the 22 elements of each branch output; shape preserved."""
    zv = ops.value(z)
    k = config.branch_output_length
    if zv.shape[-1] != k:
        raise ShapeError(f"temporal encoder expects {k} elements, got {zv.shape[-1]}")
    lead = zv.shape[:-1]
    tokens = ops.add(ops.matmul(ops.reshape(z, (*lead, k, 1)), p["temporal.embed.w"]), p["temporal.embed.b"])
    tokens = encoder_block(tokens, _group(p, "temporal.block"), config.heads, config.dropout, rng,
                           config.dropout_attention)
    out = ops.add(ops.matmul(tokens, p["temporal.unembed.w"]), p["temporal.unembed.b"])
    return ops.reshape(out, (*lead, k))


def reduce_fc(v, p, config: HctConfig, rng=None):
    """FC 22 -> 10 with SeLU, shared across sensors unless configured otherwise."""
    vv = ops.value(v)
    k, r = config.branch_output_length, config.reduced_length
    if vv.shape[-1] != k:
        raise ShapeError(f"reduction expects {k} elements, got {vv.shape[-1]}")
    if config.share_reduce_fc:
        d = dense(v, p["reduce.w"], p["reduce.b"], "selu")
    else:
        if vv.ndim < 2 or vv.shape[-2] != config.sensors:
            raise ShapeError("per-sensor reduction expects [..., sensors, k]")
        lead = vv.shape[:-1]
        y = ops.matmul(ops.reshape(v, (*lead, 1, k)), p["reduce.w"])
        d = ops.selu(ops.add(ops.reshape(y, (*lead, r)), p["reduce.b"]))
    if config.dropout_fc:
        d = ops.dropout(d, config.dropout, rng)
    return d


def spatial_encode(c, p, config: HctConfig, rng=None):
    """Spatial encoder over the sensor tokens ``c[..., 18, 10]`` -> ``[..., 18, d_s]``."""
    cv = ops.value(c)
    if cv.ndim < 2 or cv.shape[-2:] != (config.sensors, config.reduced_length):
        raise ShapeError(f"spatial encoder expects [..., {config.sensors}, {config.reduced_length}], "
                         f"got {cv.shape}")
    tokens = dense(c, p["spatial.embed.w"], p["spatial.embed.b"])
    tokens = add_positional_encoding(tokens, "spatial", config.sensors, config.positional_mode)
    return encoder_block(tokens, _group(p, "spatial.block"), config.heads, config.dropout, rng,
                         config.dropout_attention)


def network(x, p, config: HctConfig, rng=None, trace=None):
    """Run the full network on ``x[B, sensors, n]`` with parameter mapping ``p``.

    ``rng`` enables dropout. If ``trace`` is a dict, it receives each stage's
    output value keyed by stage name.
    """
    xv = ops.value(x)
    if xv.ndim != 3 or xv.shape[1:] != (config.sensors, config.segment_length):
        raise ShapeError(f"expected input [B, {config.sensors}, {config.segment_length}], got {xv.shape}")
    batch = xv.shape[0]

    def mark(name, node):
        if trace is not None:
            trace[name] = ops.value(node)
        return node

    y = mark("branch", conv_branch(x, p, config))
    z = mark("positional", add_positional_encoding(y, "temporal", config.branch_output_length,
                                                   config.positional_mode))
    v = mark("temporal", temporal_encode(z, p, config, rng))
    c = mark("concat", reduce_fc(v, p, config, rng))
    s = mark("spatial", spatial_encode(c, p, config, rng))
    h = mark("flat", ops.reshape(s, (batch, config.sensors * config.d_spatial)))
    for i in range(len(config.head_widths)):
        h = dense(h, p[f"head.{i}.w"], p[f"head.{i}.b"], "selu")
        if config.dropout_fc:
            h = ops.dropout(h, config.dropout, rng)
        mark(f"head.{i}", h)
    if config.output_units == 1:
        out = ops.reshape(dense(h, p["out.w"], p["out.b"], "sigmoid"), (batch,))
    else:
        out = dense(h, p["out.w"], p["out.b"], "softmax")
    return mark("output", out)


def forward(segments, params: HctParams, training=False, rng=None):
    """Class probabilities for one segment set ``[18, n]`` or a batch ``[B, 18, n]``.

    Two-class models return P(PD) per segment, multi-class models a
    probability row over stages (2, 2.5, 3). Dropout is applied only when
    ``training`` is true, which requires ``rng``.
    """
    x = getattr(segments, "data", segments)
    x = np.asarray(x)
    single = x.ndim == 2
    if single:
        x = x[None]
    if training and rng is None:
        raise ConfigError("training mode needs an rng for dropout")
    x = x.astype(next(iter(params.arrays.values())).dtype, copy=False)
    out = network(x, params.arrays, params.config, rng if training else None)
    return out[0] if single else out


def predict_proba(params: HctParams, x, batch_size=256):
    """Inference-mode probabilities for ``x[N, 18, n]``, computed in chunks."""
    x = np.asarray(x)
    chunks = [forward(x[i:i + batch_size], params) for i in range(0, len(x), batch_size)]
    if not chunks:
        shape = (0,) if params.config.output_units == 1 else (0, params.config.output_units)
        return np.zeros(shape, np.float32)
    return np.concatenate(chunks)


def predict_classes(params: HctParams, x, batch_size=256):
    """Segment classes: threshold 0.5 (two-class) or argmax (multi-class)."""
    prob = predict_proba(params, x, batch_size)
    if params.config.output_units == 1:
        return (prob >= 0.5).astype(np.int64)
    return prob.argmax(axis=1).astype(np.int64)


def record(params: HctParams, checked=False):
    """A fresh tape with every parameter registered; returns ``(tape, nodes)``."""
    tape = Tape(checked=checked)
    nodes = {name: tape.param(name, arr) for name, arr in params.arrays.items()}
    return tape, nodes


def stage_shapes(config: HctConfig, batch=1):
    """Expected output shape of every stage of :func:`network`."""
    shapes = {
        "branch": (batch, config.sensors, config.branch_output_length),
        "positional": (batch, config.sensors, config.branch_output_length),
        "temporal": (batch, config.sensors, config.branch_output_length),
        "concat": (batch, config.sensors, config.reduced_length),
        "spatial": (batch, config.sensors, config.d_spatial),
        "flat": (batch, config.sensors * config.d_spatial),
    }
    for i, w in enumerate(config.head_widths):
        shapes[f"head.{i}"] = (batch, w)
    shapes["output"] = (batch,) if config.output_units == 1 else (batch, config.output_units)
    return shapes


def class_names(config: HctConfig):
    return CLASS_NAMES[config.task]


def default_config(task: str, **overrides) -> HctConfig:
    """Model config for a dataset task name (``detection``/``staging``) or model task."""
    mapping = {"detection": "two_class", "staging": "multi_class"}
    return HctConfig(task=mapping.get(task, task), **overrides)


def task_of(config: Optional[HctConfig]):
    return {"two_class": "detection", "multi_class": "staging"}[config.task]
