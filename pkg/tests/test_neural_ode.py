import numpy as np
import pytest
from hypothesis import given, strategies as st

from odechan import nn_core as nn
from odechan.dataset_store import StaticSampleDb
from odechan.neural_ode import (
    OdeConfig, StepBudgetExceeded, TrainingPair, build_training_pairs, ode_solve, pair_loss,
    predict_static, predict_static_batch, scgnet_field, step_schedule, train_scgnet, ScgnetTrainConfig,
    TrainingDiverged,
)
from odechan.nn_core import Tape
from odechan.scgnet import ScgnetConfig, init_scgnet

LAM = 0.0857
SMALL = ScgnetConfig(4, 4, (8, 8), (8,))


def make_db(positions, channels=None, dims=(4, 4), seed=0):
    positions = np.asarray(positions, float)
    if positions.shape[1] == 2:
        positions = np.column_stack([positions, np.full(len(positions), 1.5)])
    if channels is None:
        r = np.random.default_rng(seed)
        channels = r.normal(size=(len(positions), *dims)) + 1j * r.normal(size=(len(positions), *dims))
    return StaticSampleDb({"n_antennas": dims[0], "n_subcarriers": dims[1]}, positions, channels)


def random_params(seed=0, config=SMALL):
    return init_scgnet(config, np.random.default_rng(seed), LAM, zero_field=False)


# ---------------------------------------------------------------- solver

@pytest.mark.parametrize("solver", ["euler", "rk4"])
@pytest.mark.parametrize("s", [0.0, 0.013, 0.5, 1.0])
def test_zero_field(solver, s):
    y0 = np.array([1.0 + 2j, -3.0])
    out = ode_solve(lambda y, th: np.zeros_like(y), y0, 0.0, s, OdeConfig(solver, 0.1))
    assert np.array_equal(out, y0)


@pytest.mark.parametrize("solver", ["euler", "rk4"])
@given(s=st.floats(0, 3))
def test_constant_field_is_exact(solver, s):
    c = np.array([0.7, -1.3 + 0.2j])
    y0 = np.array([1.0, 2.0 + 0j])
    out = ode_solve(lambda y, th: c, y0, 0.0, s, OdeConfig(solver, 0.1, 100))
    np.testing.assert_allclose(out, y0 + c * s, atol=1e-12)


def solver_errors(solver):
    return [abs(ode_solve(lambda y, th: -y, np.array([1.0]), 0.0, 1.0, OdeConfig(solver, h))[0] - np.exp(-1))
            for h in (0.1, 0.05, 0.025)]


def test_euler_order():
    e = solver_errors("euler")
    for a, b in zip(e, e[1:]):
        assert a / b == pytest.approx(2.0, rel=0.2)
        assert np.log2(a / b) >= 0.9


def test_rk4_order():
    e = solver_errors("rk4")
    for a, b in zip(e, e[1:]):
        assert a / b == pytest.approx(16.0, rel=0.2)
        assert np.log2(a / b) >= 3.5


def test_partial_last_step():
    hs = step_schedule(0.25, 0.1, 10)
    np.testing.assert_allclose(hs, [0.1, 0.1, 0.05])
    assert len(step_schedule(0.3, 0.1, 10)) == 3  # no sliver step from rounding
    assert len(step_schedule(0.0, 0.1, 10)) == 0


def test_step_budget():
    with pytest.raises(StepBudgetExceeded):
        ode_solve(lambda y, th: y, np.ones(1), 0.0, 1.05, OdeConfig("euler", 0.1, 10))
    with pytest.raises(ValueError):
        step_schedule(-1.0, 0.1, 10)


def test_non_finite_state():
    with pytest.raises(FloatingPointError):
        ode_solve(lambda y, th: np.full_like(y, np.inf), np.ones(1), 0.0, 0.1, OdeConfig("euler", 0.1))


def test_config_validation():
    with pytest.raises(ValueError):
        OdeConfig("midpoint")
    with pytest.raises(ValueError):
        OdeConfig(step=0.0)
    assert OdeConfig().resolved(LAM).step == pytest.approx(LAM / 10)


@pytest.mark.parametrize("solver", ["euler", "rk4"])
def test_additive_along_one_bearing(solver):
    p = random_params(3)
    f = scgnet_field(p)
    cfg = OdeConfig(solver, 0.002, 100)
    G0 = np.random.default_rng(1).normal(size=(4, 4)) + 0j
    whole = ode_solve(f, G0, 0.4, 0.010, cfg)
    split = ode_solve(f, ode_solve(f, G0, 0.4, 0.006, cfg), 0.4, 0.004, cfg)
    assert whole.tobytes() == split.tobytes()


# ---------------------------------------------------------------- pairs

def test_pairs_collinear():
    db = make_db([[0, 0], [1, 0], [2, 0]])
    pairs = build_training_pairs(db, 1)
    assert [(p.source_index, p.target_index) for p in pairs] == [(0, 1), (1, 0), (2, 1)]
    assert pairs[0].theta == pytest.approx(0.0) and pairs[2].theta == pytest.approx(np.pi)
    assert all(p.length == pytest.approx(1.0) for p in pairs)


def test_pairs_grid_pitch():
    xs, ys = np.meshgrid(np.arange(5) * 0.3, np.arange(4) * 0.3)
    db = make_db(np.column_stack([xs.ravel(), ys.ravel()]))
    for p in build_training_pairs(db, 1):
        assert p.length == pytest.approx(0.3, rel=1e-12)


def test_pairs_random_against_brute_force():
    r = np.random.default_rng(2)
    db = make_db(r.uniform(0, 3, size=(60, 2)))
    z = 4
    pairs = build_training_pairs(db, z)
    assert len(pairs) == 60 * z
    for p in pairs:
        d = np.sort(np.linalg.norm(db.positions - db.positions[p.source_index], axis=1))
        assert p.length <= d[z] + 1e-15  # d[0] is the source itself
        np.testing.assert_allclose(p.length, np.linalg.norm(p.target_position - p.source_position))
        dx = p.target_position - p.source_position
        assert p.theta == pytest.approx(np.arctan2(dx[1], dx[0]))


def test_pairs_insufficient_samples():
    with pytest.raises(ValueError):
        build_training_pairs(make_db([[0, 0], [1, 0]]), 2)


# ---------------------------------------------------------------- training

def test_zero_length_pairs_loss_independent_of_params():
    db = make_db([[0, 0], [1, 0]])
    pairs = [TrainingPair(0, 1, db.positions[0], db.positions[1], 0.3, 0.0)]
    cfg = OdeConfig("rk4", 0.01)
    want = np.mean((np.stack([db.channels[0].real, db.channels[0].imag]) -
                    np.stack([db.channels[1].real, db.channels[1].imag])) ** 2)
    for seed in range(3):
        assert float(pair_loss(random_params(seed), db, pairs, cfg).data) == pytest.approx(want, rel=1e-14)


def test_gradient_through_three_euler_steps():
    p = random_params(5)
    db = make_db([[0, 0], [0.024, 0.011], [0.01, -0.02]], seed=4)
    cfg = OdeConfig("euler", 0.01, 10)
    pairs = build_training_pairs(db, 1)
    assert all(2 < pr.length / cfg.step <= 3 for pr in pairs[:1])

    tape = Tape()
    loss = pair_loss(p, db, pairs, cfg, tape)
    tape.backward(loss)
    worst, eps = 0.0, 1e-6
    for t in p.params:
        flat = t.data.reshape(-1)
        num = np.zeros(flat.size)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + eps
            a = float(pair_loss(p, db, pairs, cfg).data)
            flat[k] = old - eps
            b = float(pair_loss(p, db, pairs, cfg).data)
            flat[k] = old
            num[k] = (a - b) / (2 * eps)
        worst = max(worst, np.max(np.abs(t.grad.reshape(-1) - num)) / max(np.max(np.abs(num)), 1e-8))
    assert worst < 1e-4


def test_constant_field_training_converges():
    r = np.random.default_rng(0)
    n = 30
    G = r.normal(size=(4, 4)) + 1j * r.normal(size=(4, 4))
    db = make_db(r.uniform(0, 1, size=(n, 2)), np.repeat(G[None], n, 0))
    p = init_scgnet(ScgnetConfig(4, 4, (16, 16), (16,)), np.random.default_rng(1), LAM)
    # start away from the zero field so there is something to learn
    last = p.direction[-1].weight
    last.data[:] = np.random.default_rng(2).normal(scale=0.05, size=last.shape)
    cfg = OdeConfig("euler", 0.05, 100)
    _, trace = train_scgnet(db, p, cfg, ScgnetTrainConfig(steps=500, batch_size=20, z=2, lr=1e-2, clip_norm=None))
    assert trace[0] > 0.1
    assert trace[-1] < 1e-6


def test_training_is_deterministic():
    db = make_db(np.random.default_rng(1).uniform(0, 0.1, size=(12, 2)))
    cfg = OdeConfig("rk4", LAM / 10)
    tc = ScgnetTrainConfig(steps=5, batch_size=4, z=2)
    a, ta = train_scgnet(db, random_params(0), cfg, tc)
    b, tb = train_scgnet(db, random_params(0), cfg, tc)
    assert ta == tb
    assert all(x.data.tobytes() == y.data.tobytes() for x, y in zip(a.params, b.params))


def test_divergence_is_reported():
    db = make_db(np.random.default_rng(1).uniform(0, 2, size=(12, 2)))
    p = init_scgnet(ScgnetConfig(4, 4, (8, 8), (8,), output_activation="identity", rate_gain=1e6),
                    np.random.default_rng(0), LAM, zero_field=False)
    with pytest.raises(TrainingDiverged):
        train_scgnet(db, p, OdeConfig("euler", 0.005, 1000), ScgnetTrainConfig(steps=3, batch_size=4, z=2))


# ---------------------------------------------------------------- inference

@pytest.mark.parametrize("solver", ["euler", "rk4"])
def test_predict_at_stored_sample(solver):
    db = make_db(np.random.default_rng(3).uniform(0, 1, size=(20, 2)))
    out = predict_static(db, random_params(1), db.positions[7], OdeConfig(solver, 0.01))
    assert np.array_equal(out, db.channels[7])


def test_zero_field_returns_nearest():
    db = make_db(np.random.default_rng(3).uniform(0, 1, size=(20, 2)))
    p = init_scgnet(SMALL, np.random.default_rng(0), LAM)
    targets = np.column_stack([np.random.default_rng(4).uniform(0, 1, size=(15, 2)), np.full(15, 1.5)])
    out = predict_static_batch(db, p, targets, OdeConfig("rk4", LAM / 10))
    for t, g in zip(targets, out):
        assert np.array_equal(g, db.channels[db.nearest(t)])


def test_predict_errors():
    p = random_params()
    empty = StaticSampleDb({"n_antennas": 4, "n_subcarriers": 4}, np.zeros((0, 3)), np.zeros((0, 4, 4)))
    with pytest.raises(ValueError):
        predict_static(empty, p, [0, 0, 1.5], OdeConfig("rk4", 0.01))
    db = make_db([[0, 0]])
    with pytest.raises(StepBudgetExceeded):
        predict_static(db, p, [1.0, 0, 1.5], OdeConfig("rk4", 0.01, 10))
