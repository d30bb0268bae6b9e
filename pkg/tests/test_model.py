import dataclasses

import numpy as np
import pytest

from hct.errors import ConfigError, ShapeError
from hct.model import (
    HctConfig,
    add_positional_encoding,
    conv_branch,
    default_config,
    forward,
    init_params,
    network,
    param_specs,
    record,
    reduce_fc,
    spatial_encode,
    stage_shapes,
    temporal_encode,
)
from hct.numerics import backward, binary_cross_entropy, categorical_cross_entropy


@pytest.fixture(scope="module")
def params64():
    return init_params(default_config("detection", dropout=0.0), 0).astype(np.float64)


def batch(size, seed=0, cfg=HctConfig()):
    return np.random.default_rng(seed).standard_normal((size, cfg.sensors, cfg.segment_length)).astype(np.float32)


def test_config_invariants():
    cfg = HctConfig()
    assert cfg.branch_lengths() == [98, 96, 48, 46, 44, 22]
    assert cfg.branch_output_length == ((100 - 4) // 2 - 4) // 2 == 22
    with pytest.raises(ConfigError):
        HctConfig(d_temporal=10)
    with pytest.raises(ConfigError):
        HctConfig(conv_channels=(8, 16, 16, 2))
    with pytest.raises(ConfigError):
        HctConfig(task="three_class")
    with pytest.raises(ConfigError):
        HctConfig(segment_length=12)
    assert HctConfig.from_dict(cfg.to_dict()) == cfg


def test_init_params(two_class_params, multi_class_params):
    again = init_params(default_config("detection"), 0)
    for name in two_class_params:
        np.testing.assert_array_equal(two_class_params[name], again[name])
        assert two_class_params[name].dtype == np.float32
        assert np.all(np.isfinite(two_class_params[name]))
    for name, arr in two_class_params.arrays.items():
        if name.endswith(".b") or name.endswith("_b") or name[-3:-1] == "_b" or name.endswith("bq") \
                or name.endswith("bv") or name.endswith("bo") or "_b1" in name or "_b2" in name:
            if "ln" not in name:
                assert not arr.any(), name
    assert two_class_params["out.w"].shape[1] == 1 and two_class_params["out.b"].shape == (1,)
    assert multi_class_params["out.w"].shape[1] == 3
    different = init_params(default_config("detection"), 1)
    assert not np.array_equal(different["conv.0.w"], two_class_params["conv.0.w"])
    assert set(param_specs(HctConfig())) == set(two_class_params)


def test_conv_branch_shapes_and_sharing(two_class_params):
    cfg = two_class_params.config
    trace = {}
    x = batch(2)
    x[0, 5] = x[0, 11]
    network(x, two_class_params.arrays, cfg, trace=trace)
    y = trace["branch"]
    assert y.shape == (2, 18, 22)
    np.testing.assert_allclose(y[0, 5], y[0, 11], rtol=1e-6, atol=1e-6)
    with pytest.raises(ShapeError):
        conv_branch(np.zeros((18, 99), np.float32), two_class_params.arrays, cfg)


def test_shared_conv_mutation_moves_all_branches(two_class_params):
    cfg = two_class_params.config
    x = np.tile(batch(1)[0, :1], (18, 1))
    before = conv_branch(x, two_class_params.arrays, cfg)
    p = dict(two_class_params.arrays)
    p["conv.3.b"] = p["conv.3.b"] + 0.5
    after = conv_branch(x, p, cfg)
    assert not np.allclose(after, before)
    # BLAS may round a row differently depending on its position in the batch
    np.testing.assert_allclose(after, np.tile(after[:1], (18, 1)), rtol=1e-6, atol=1e-6)
    np.testing.assert_allclose(before, np.tile(before[:1], (18, 1)), rtol=1e-6, atol=1e-6)


def test_positional_encoding():
    out = add_positional_encoding(np.zeros(22), "temporal", 22)
    np.testing.assert_allclose(out, np.arange(22) / 22)
    twice = add_positional_encoding(out, "temporal", 22)
    assert not np.allclose(twice, out)
    tokens = add_positional_encoding(np.zeros((18, 4)), "spatial", 18)
    np.testing.assert_allclose(tokens, np.repeat(np.arange(18)[:, None] / 18, 4, axis=1))
    raw = add_positional_encoding(np.zeros(22), "temporal", 22, scale="raw")
    np.testing.assert_array_equal(raw, np.arange(22))
    with pytest.raises(ShapeError):
        add_positional_encoding(np.zeros(21), "temporal", 22)


def test_temporal_encode(params64):
    cfg = params64.config
    z = np.random.default_rng(3).standard_normal(22) + np.arange(22) / 22
    out = temporal_encode(z, params64.arrays, cfg)
    assert out.shape == (22,)
    np.testing.assert_array_equal(out, temporal_encode(z, params64.arrays, cfg))
    swapped = z.copy()
    swapped[[2, 9]] = swapped[[9, 2]]
    assert not np.allclose(temporal_encode(swapped, params64.arrays, cfg), out)
    with pytest.raises(ShapeError):
        temporal_encode(np.zeros(21), params64.arrays, cfg)


def test_reduce_fc(params64):
    cfg = dataclasses.replace(params64.config, dropout_fc=False)
    v = np.random.default_rng(4).standard_normal((18, 22))
    assert reduce_fc(v, params64.arrays, cfg).shape == (18, 10)
    zero = dict(params64.arrays, **{"reduce.w": np.zeros((22, 10)), "reduce.b": np.zeros(10)})
    np.testing.assert_array_equal(reduce_fc(v, zero, cfg), 0)
    pre = v @ params64["reduce.w"]
    np.testing.assert_allclose((2.5 * v) @ params64["reduce.w"], 2.5 * pre)


def test_reduce_fc_unshared():
    cfg = default_config("detection", share_reduce_fc=False, dropout=0.0)
    p = init_params(cfg, 0)
    assert p["reduce.w"].shape == (18, 22, 10)
    out = forward(batch(2), p)
    assert out.shape == (2,)


def test_spatial_encode(params64):
    cfg = params64.config
    c = np.random.default_rng(5).standard_normal((18, 10))
    out = spatial_encode(c, params64.arrays, cfg)
    assert out.shape == (18, 16)
    perm = np.roll(np.arange(18), 1)
    assert not np.allclose(spatial_encode(c[perm], params64.arrays, cfg), out[perm])
    zero = dict(params64.arrays, **{"spatial.embed.w": np.zeros((10, 16))})
    a = spatial_encode(c, zero, cfg)
    b = spatial_encode(c * 7 - 1, zero, cfg)
    np.testing.assert_allclose(a, b)
    with pytest.raises(ShapeError):
        spatial_encode(np.zeros((17, 10)), params64.arrays, cfg)


@pytest.mark.parametrize("task", ["detection", "staging"])
def test_forward_contract(task):
    p = init_params(default_config(task), 2)
    x = batch(5)
    out = forward(x, p)
    if task == "detection":
        assert out.shape == (5,) and np.all((out > 0) & (out < 1))
    else:
        assert out.shape == (5, 3)
        np.testing.assert_allclose(out.sum(axis=1), 1, atol=1e-6)
    np.testing.assert_array_equal(out, forward(x, p))
    assert forward(x[0], p).shape == out.shape[1:]
    trained = forward(x, p, training=True, rng=np.random.default_rng(0))
    assert not np.array_equal(trained, out)
    with pytest.raises(ConfigError):
        forward(x, p, training=True)
    with pytest.raises(ShapeError):
        forward(np.zeros((2, 17, 100), np.float32), p)


@pytest.mark.parametrize("task", ["detection", "staging"])
def test_stage_shapes(task):
    p = init_params(default_config(task), 0)
    trace = {}
    network(batch(3), p.arrays, p.config, trace=trace)
    expected = stage_shapes(p.config, 3)
    assert {k: v.shape for k, v in trace.items()} == expected


def test_variants_differ_only_in_head(two_class_params, multi_class_params):
    a, b = param_specs(two_class_params.config), param_specs(multi_class_params.config)
    assert set(a) == set(b)
    assert [k for k in a if a[k] != b[k]] == ["out.w", "out.b"]


def test_every_parameter_gets_gradient(params64):
    cfg = dataclasses.replace(params64.config, task="two_class")
    tape, nodes = record(params64)
    pred = network(batch(1, seed=9).astype(np.float64), nodes, cfg)
    grads = backward(tape, binary_cross_entropy(pred, [1]).node)
    dead = [k for k, g in grads.items() if not np.any(g)]
    assert not dead


def test_multi_class_gradient_flow():
    p = init_params(default_config("staging", dropout=0.0), 1).astype(np.float64)
    tape, nodes = record(p)
    pred = network(batch(2).astype(np.float64), nodes, p.config)
    grads = backward(tape, categorical_cross_entropy(pred, [0, 2]).node)
    assert all(np.any(g) for g in grads.values())


def test_float32_forward_stays_float32(two_class_params):
    trace = {}
    network(batch(2), two_class_params.arrays, two_class_params.config, trace=trace)
    assert all(v.dtype == np.float32 for v in trace.values())
