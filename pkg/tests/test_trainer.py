import struct
import warnings

import numpy as np
import pytest

from hct import trainer
from hct.checkpoint import MAGIC, dumps, load_checkpoint, loads, save_checkpoint
from hct.errors import ConfigError, ContractError, FormatError, TaskMismatchError
from hct.model import default_config, init_params
from hct.numerics import OptimizerState, nadam_step
from hct.synthetic import synthetic_segments
from hct.trainer import TrainConfig, TrainHistory, batch_loss, early_stop, evaluate, split_validation, train


@pytest.fixture(scope="module")
def small_data():
    return synthetic_segments(24, "detection", seed=2)


FAST = dict(batch_size=8, max_epochs=2, patience=5)


def test_train_config_invariants():
    for bad in (dict(validation_fraction=0.0), dict(validation_fraction=1.0), dict(batch_size=0),
                dict(patience=0), dict(learning_rate=-1.0)):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)
    assert TrainConfig().lr_for("two_class") == 0.0005
    assert TrainConfig().lr_for("multi_class") == 0.001
    assert TrainConfig(learning_rate=0.01).lr_for("two_class") == 0.01


def test_early_stop_examples():
    assert early_stop([1.0, 0.9, 0.8], 2) is False
    assert early_stop([0.8, 0.9, 0.95], 2) is True
    assert early_stop([0.8, 0.8 + 1e-9], 1) is True
    assert early_stop([0.8, 0.8 - 1e-9], 1) is True
    assert early_stop([0.8, 0.7], 1) is False
    assert early_stop(TrainHistory(val_loss=[1.0, 2.0, 3.0]), 2) is True


# -- checkpoints -----------------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path, multi_class_params):
    path = save_checkpoint(multi_class_params, tmp_path / "m.hct")
    back = load_checkpoint(path)
    assert back.config == multi_class_params.config
    assert list(back.arrays) == list(multi_class_params.arrays)
    for name in back:
        assert back[name].tobytes() == multi_class_params[name].tobytes()
    assert dumps(back) == path.read_bytes()


def test_checkpoint_format_errors(tmp_path, two_class_params):
    data = dumps(two_class_params)
    assert data[:4] == MAGIC
    with pytest.raises(FormatError, match="magic"):
        loads(b"XXXX" + data[4:])
    with pytest.raises(FormatError, match="version"):
        loads(MAGIC + struct.pack("<I", 99) + data[8:])
    for cut in (3, 10, len(data) // 2, len(data) - 1):
        with pytest.raises(FormatError):
            loads(data[:cut])
    with pytest.raises(FormatError):
        loads(data + b"\0")
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "absent.hct")


def test_checkpoint_task_mismatch(tmp_path, two_class_params):
    path = save_checkpoint(two_class_params, tmp_path / "b.hct")
    assert load_checkpoint(path, expected_task="detection").config.task == "two_class"
    with pytest.raises(TaskMismatchError):
        load_checkpoint(path, expected_task="multi_class")
    with pytest.raises(TaskMismatchError):
        load_checkpoint(path, expected_task="staging")


# -- training ----------------------------------------------------------------------------

def test_train_rejects_bad_input(small_data):
    cfg = default_config("detection")
    with pytest.raises(ContractError):
        train(small_data.subset(np.zeros(len(small_data), bool)), TrainConfig(**FAST), cfg)
    bad = small_data.subset(np.ones(len(small_data), bool))
    bad.y = bad.y + 1
    with pytest.raises(ContractError):
        train(bad, TrainConfig(**FAST), cfg)


def test_single_class_warns(small_data):
    one = small_data.subset(small_data.y == 1)
    with pytest.warns(RuntimeWarning, match="single class"):
        train(one, TrainConfig(batch_size=8, max_epochs=1), default_config("detection"))


def test_training_is_deterministic(small_data):
    cfg = default_config("detection")
    p1, h1 = train(small_data, TrainConfig(seed=4, **FAST), cfg)
    p2, h2 = train(small_data, TrainConfig(seed=4, **FAST), cfg)
    assert h1 == h2
    for name in p1:
        np.testing.assert_array_equal(p1[name], p2[name])
    assert h1.to_csv().splitlines()[0] == "epoch,train_loss,val_loss,val_acc"
    assert len(h1.to_csv().splitlines()) == 3


def test_validation_split_is_subject_level(small_data):
    fit, val, held = split_validation(small_data, 0.25, np.random.default_rng(0))
    assert held and not set(fit.subjects) & set(val.subjects)
    assert len(fit) + len(val) == len(small_data)
    assert set(val.y) == {0, 1}


def test_patience_one_stops_at_epoch_two(small_data, monkeypatch):
    losses = iter([1.0, 2.0, 3.0, 4.0, 5.0])
    monkeypatch.setattr(trainer, "_validation_loss", lambda p, d: (next(losses), 0.5))
    _, history = train(small_data, TrainConfig(batch_size=12, max_epochs=5, patience=1), default_config("detection"))
    assert history.stopped_epoch == 2
    assert history.best_epoch == 1
    assert len(history.val_loss) == 2


def test_best_epoch_weights_are_restored(small_data, monkeypatch):
    snapshots = []
    real = trainer._validation_loss
    fake = iter([0.9, 0.3, 0.6, 0.7])

    def spy(params, data):
        snapshots.append(params.copy())
        real(params, data)
        return next(fake), 0.0

    monkeypatch.setattr(trainer, "_validation_loss", spy)
    params, history = train(small_data, TrainConfig(batch_size=12, max_epochs=4, patience=2), default_config("detection"))
    assert history.best_epoch == 2 == int(np.argmin(history.val_loss)) + 1
    for name in params:
        np.testing.assert_array_equal(params[name], snapshots[1][name])


def test_best_epoch_has_min_validation_loss(small_data):
    params, history = train(small_data, TrainConfig(batch_size=8, max_epochs=4, patience=4, seed=1),
                            default_config("detection"))
    fit, val, _ = split_validation(small_data, 0.1, np.random.default_rng(np.random.SeedSequence(1).spawn(3)[0]))
    assert sorted(set(val.subjects)) == history.validation_subjects
    assert evaluate(params, val)[0] == pytest.approx(min(history.val_loss), rel=1e-6)
    assert history.best_epoch == int(np.argmin(history.val_loss)) + 1


def test_one_step_is_plain_nadam(small_data):
    cfg = default_config("detection", dropout=0.0)
    init = init_params(cfg, 3)
    tc = TrainConfig(batch_size=1000, max_epochs=1, dropout=0.0, seed=3)
    params, history = train(small_data, tc, cfg, init=init, validation=small_data)
    order = np.random.default_rng(np.random.SeedSequence(3).spawn(3)[1]).permutation(len(small_data))
    loss, grads = batch_loss(init, small_data.x[order], small_data.y[order])
    expected, _ = nadam_step(init.arrays, grads, OptimizerState(lr=0.0005))
    assert history.batch_loss[0] == loss.scalar
    for name in params:
        np.testing.assert_array_equal(params[name], expected[name])


def test_first_batch_loss_matches_independent_loss(small_data):
    from hct.numerics import binary_cross_entropy
    from hct.model import forward
    cfg = default_config("detection", dropout=0.0)
    init = init_params(cfg, 5)
    tc = TrainConfig(batch_size=10, max_epochs=1, dropout=0.0, seed=5)
    _, history = train(small_data, tc, cfg, init=init, validation=small_data)
    order = np.random.default_rng(np.random.SeedSequence(5).spawn(3)[1]).permutation(len(small_data))[:10]
    independent = binary_cross_entropy(forward(small_data.x[order], init), small_data.y[order]).scalar
    assert history.batch_loss[0] == pytest.approx(independent, rel=1e-6)


def test_multi_class_training_runs():
    data = synthetic_segments(18, "staging", seed=1)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        params, history = train(data, TrainConfig(batch_size=9, max_epochs=2), default_config("staging"))
    assert params.config.task == "multi_class" and history.stopped_epoch == 2
