import numpy as np
import pytest

from msfrecon import msfcnn, training
from msfrecon.dataset import TrainRecord, make_dataset
from msfrecon.errors import ConfigurationError, ContractViolation, NumericFailure
from msfrecon.msfcnn import NetworkSpec
from msfrecon.training import (AdamState, TrainConfig, TrainingDiverged, adam_step, grad_check,
                               mse_loss, read_history, train, write_history)
from oracles import central_difference, rel_err

TINY = NetworkSpec(base_channels=2, n_scales=1)


@pytest.fixture(scope="module")
def small_data():
    return make_dataset(24, 32, 1e6, seed=100)


# -- loss -------------------------------------------------------------------

def test_mse_zero_at_target(rng):
    t = rng.standard_normal((4, 4, 1))
    loss, g = mse_loss(t, t)
    assert loss == 0.0 and not np.any(g)


def test_mse_constant_offset():
    loss, _ = mse_loss(np.full((5, 3, 1), 2.5), np.full((5, 3, 1), 1.0))
    assert loss == pytest.approx(1.5 ** 2, rel=1e-15)


def test_mse_grad_finite_differences(rng):
    p, t = rng.standard_normal((2, 3, 4, 1))
    _, g = mse_loss(p, t)
    fd = central_difference(lambda z: mse_loss(z, t)[0], p, step=1e-3)
    assert rel_err(g, fd) < 1e-8


def test_mse_shape_mismatch():
    with pytest.raises(ContractViolation):
        mse_loss(np.zeros((2, 2, 1)), np.zeros((2, 3, 1)))


# -- Adam -------------------------------------------------------------------

def test_adam_zero_gradient_first_step():
    p = {"w": np.array([1.0, -2.0, 3.0])}
    new, _ = adam_step(p, {"w": np.zeros(3)}, AdamState(), 1, TrainConfig())
    assert np.array_equal(new["w"], p["w"])


def test_adam_first_step_value():
    new, _ = adam_step({"w": np.array([0.0])}, {"w": np.array([0.5])}, AdamState(), 1, TrainConfig())
    # bias corrections cancel at t=1: -lr * g / (|g| + eps)
    expect = -0.001 * 0.5 / (0.5 + 1e-8)
    assert new["w"][0] == pytest.approx(expect, rel=1e-12)
    assert new["w"][0] == pytest.approx(-0.000999999980, abs=1e-15)


def test_adam_second_step_same_size():
    cfg = TrainConfig()
    p = {"w": np.array([0.0])}
    g = {"w": np.array([0.5])}
    s = AdamState()
    p1, s = adam_step(p, g, s, 1, cfg)
    p2, s = adam_step(p1, g, s, 2, cfg)
    d1, d2 = abs(p1["w"][0] - p["w"][0]), abs(p2["w"][0] - p1["w"][0])
    assert abs(d2 - d1) < 0.01 * d1


def test_adam_first_step_bounded_by_lr(rng):
    cfg = TrainConfig()
    p = {"w": rng.standard_normal(1000)}
    g = {"w": rng.standard_normal(1000) * 10 ** rng.uniform(-6, 3, 1000)}
    new, _ = adam_step(p, g, AdamState(), 1, cfg)
    step = new["w"] - p["w"]
    assert np.all(np.abs(step) <= cfg.learning_rate + 1e-12)
    assert np.all(np.sign(step) == -np.sign(g["w"]))


def test_adam_matches_textbook_loop(rng):
    cfg = TrainConfig(learning_rate=0.01)
    w = rng.standard_normal(5)
    p, s = {"w": w.copy()}, AdamState()
    m = np.zeros(5)
    v = np.zeros(5)
    for t in range(1, 6):
        g = rng.standard_normal(5)
        p, s = adam_step(p, {"w": g}, s, t, cfg)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p["w"], w, rtol=1e-14)


def test_adam_decay_is_inverse_time():
    cfg = TrainConfig(decay=1.0)
    s = AdamState()
    p, s = adam_step({"w": np.array([0.0])}, {"w": np.array([1.0])}, s, 1, cfg)
    before = p["w"][0]
    p, s = adam_step(p, {"w": np.array([1.0])}, s, 2, cfg)
    # step 2 runs at lr / 2
    assert abs(p["w"][0] - before) == pytest.approx(0.0005, rel=1e-6)


def test_adam_rejects_bad_input():
    with pytest.raises(NumericFailure):
        adam_step({"w": np.zeros(2)}, {"w": np.array([1.0, np.nan])}, AdamState(), 1, TrainConfig())
    with pytest.raises(ContractViolation):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(2)}, AdamState(), 0, TrainConfig())


def test_adam_default_hyperparameters():
    cfg = TrainConfig()
    assert (cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps, cfg.decay) == (0.001, 0.9, 0.999, 1e-8, 0.0)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(validation_fraction=0.5)
    with pytest.raises(ConfigurationError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigurationError):
        TrainConfig.from_dict({"learning_rte": 0.1})
    assert TrainConfig.from_dict(TrainConfig(epochs=3).to_dict()) == TrainConfig(epochs=3)


# -- training loop ----------------------------------------------------------

def test_overfit_single_record():
    rec = make_dataset(1, 32, 1e6, seed=3)
    spec = NetworkSpec(base_channels=4, n_scales=1)
    _, hist = train(spec, rec, TrainConfig(epochs=200, batch_size=1))
    assert len(hist) == 200
    assert hist[-1]["train_loss"] < 0.1 * hist[0]["train_loss"]


def test_zero_learning_rate_leaves_params_bitwise(small_data):
    init = msfcnn.init_he(TINY, 0)
    p, _ = train(TINY, small_data, TrainConfig(learning_rate=0.0, epochs=2, batch_size=4), init=init)
    for k, v in init.arrays().items():
        assert np.array_equal(p.arrays()[k], v)


@pytest.mark.parametrize("shuffle", [True, False])
def test_training_is_deterministic(small_data, shuffle):
    cfg = TrainConfig(epochs=2, batch_size=4, shuffle=shuffle, seed=7)
    p1, h1 = train(TINY, small_data, cfg)
    p2, h2 = train(TINY, small_data, cfg)
    assert h1 == h2
    assert all(np.array_equal(p1.arrays()[k], p2.arrays()[k]) for k in p1.arrays())


def test_history_and_checkpoints(small_data, tmp_path):
    ck = tmp_path / "ck.msf"
    seen = []
    _, hist = train(TINY, small_data, TrainConfig(epochs=3, batch_size=8), checkpoint_path=ck,
                    progress=lambda e, h: seen.append((e, ck.is_file())))
    assert seen == [(1, True), (2, True), (3, True)]
    assert msfcnn.read_header(ck)["extra"] == {"epoch": 3}
    # 24 records, 10% validation -> 22 training records -> 3 batches per epoch
    assert [h["step"] for h in hist] == list(range(1, 10))
    assert [h["val_loss"] is not None for h in hist] == [False, False, True] * 3
    write_history(hist, tmp_path / "loss.tsv")
    assert read_history(tmp_path / "loss.tsv") == hist
    assert (tmp_path / "loss.tsv").read_text().splitlines()[0] == "step\tepoch\ttrain_loss\tval_loss"


def test_training_reduces_validation_error_across_seeds():
    data = make_dataset(60, 32, 1e6, seed=500)
    tr, val = training.split_records(data, 0.1)
    for seed in range(5):
        init = msfcnn.init_he(TINY, seed)
        init.input_scale = training.input_scale(tr)
        before = training.evaluate_loss(init, val)
        _, hist = train(TINY, data, TrainConfig(epochs=4, batch_size=8, seed=seed))
        assert hist[-1]["val_loss"] < before


def test_divergence_aborts_with_last_good(small_data):
    wild = [TrainRecord(r.input, r.target * 1e5) for r in small_data]
    with pytest.raises(TrainingDiverged) as info:
        train(TINY, wild, TrainConfig(epochs=2, batch_size=4))
    assert info.value.params is not None
    assert isinstance(info.value, NumericFailure)


def test_train_rejects_bad_datasets():
    with pytest.raises(ConfigurationError):
        train(TINY, [], TrainConfig())
    rec = TrainRecord(np.zeros((30, 30, 1)), np.zeros((30, 30, 1)))
    with pytest.raises(ContractViolation):
        train(NetworkSpec(n_scales=2), [rec, rec], TrainConfig(epochs=1))


def test_split_is_tail():
    recs = list(range(20))
    tr, va = training.split_records(recs, 0.1)
    assert tr == list(range(18)) and va == [18, 19]


# -- gradient check ---------------------------------------------------------

def test_grad_check_default_passes():
    rep = grad_check()
    assert rep.passed, rep.max_rel_error
    assert rep.worst < 1e-5
    names = set(rep.max_rel_error)
    assert "input" in names and "lift.weights" in names and "output.bias" in names


def test_grad_check_zero_network_passes():
    spec = NetworkSpec(base_channels=2, n_scales=1)
    rep = grad_check(spec, params=msfcnn.init_zeros(spec), x=np.zeros((16, 16, 1)),
                     target=np.zeros((16, 16, 1)))
    assert rep.passed and rep.worst == 0.0


def test_grad_check_catches_sign_flip():
    def corrupted(params, x, target):
        tape = []
        _, g = mse_loss(msfcnn.run(params, x, tape), target)
        grads, gx = msfcnn.backward(params, tape, g)
        grads["enc0_block1_conv2.weights"] = -grads["enc0_block1_conv2.weights"]
        return grads, gx

    rep = grad_check(gradient_fn=corrupted)
    assert not rep.passed
    assert rep.max_rel_error["enc0_block1_conv2.weights"] > 1.0
