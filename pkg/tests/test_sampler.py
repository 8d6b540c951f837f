import numpy as np
import pytest

from tribeflow.adapt import joint_log_posterior
from tribeflow.residence import EccdfTable, rebuild
from tribeflow.sampler import (TrainConfig, fit, gibbs_pass, train, window_env_log_posterior,
                               window_env_posterior)
from tribeflow.state import Hyperparams, ModelState
from tribeflow.synth import SynthConfig, generate
from tribeflow.windows import build_windows

from conftest import make_windows
from oracles import (chain_coassignment, coassignment, hand_conditional,
                     systematic_scan_stationary)


def test_k1_weights_and_pass():
    ws = make_windows([0, 0, 1], [[0, 1], [1, 2], [2, 0]], taus=[1, 2, 3])
    st_ = ModelState.initialize(ws, Hyperparams.default(1), np.random.default_rng(0))
    before = (st_.e.copy(), st_.c.copy())
    st_.unassign(0)
    w = window_env_posterior(st_, rebuild(st_), 0)
    assert w.shape == (1,) and w[0] > 0
    st_.assign(0, 0)
    gibbs_pass(st_, rebuild(st_), np.random.default_rng(1))
    assert np.array_equal(st_.e, before[0]) and np.array_equal(st_.c, before[1])
    assert np.all(st_.assignments == 0)


def test_symmetric_state_equal_weights():
    ws = make_windows([0, 0, 0, 0, 0], [[0, 1], [1, 2], [0, 1], [1, 2], [2, 0]])
    st_ = ModelState.from_assignments(ws, Hyperparams.default(2), [0, 0, 1, 1, 0], 2)
    st_.unassign(4)
    w = window_env_posterior(st_, None, 4, nt_mode=True)
    assert w[0] == pytest.approx(w[1], rel=1e-12)


def test_hand_expanded_weights_with_gaps():
    # 3 items, 2 environments, B = 1
    ws = make_windows([0, 0, 1, 1], [[0, 1], [1, 2], [2, 0], [0, 2]], taus=[5, 1, 9, 2],
                      n_items=3)
    hyper = Hyperparams(0.7, 0.2, np.ones(2), 1, 2)
    st_ = ModelState.from_assignments(ws, hyper, [0, 1, 0, 1], 2)
    table = rebuild(st_)
    st_.unassign(3)
    got = window_env_log_posterior(st_, table, 3)
    # by hand: env 0 holds windows 0, 2 (user 0 and user 1), env 1 holds window 1 (user 0)
    # window 3: user 1, 0 -> 2, gap 2
    K, a, b = 2, 0.7, 0.2
    c0 = {0: 2, 1: 1, 2: 1}
    c1 = {0: 0, 1: 1, 2: 1}
    pi0 = (1 + a) / (1 + K * a)
    pi1 = (0 + a) / (1 + K * a)
    t0 = (c0[2] + b) / (2 * 2 + 3 * b - c0[0] - b)
    t1 = (c1[2] + b) / (2 * 1 + 3 * b - c1[0] - b)
    # tables at the last rebuild: env 0 {5, 9}, env 1 {1, 2}; gaps >= 2
    g0 = (2 + 1) / (2 + K)
    g1 = (1 + 1) / (2 + K)
    np.testing.assert_allclose(got, np.log([pi0 * t0 * g0, pi1 * t1 * g1]), rtol=1e-12)
    p = window_env_posterior(st_, None, 3, nt_mode=True)
    ref = hand_conditional(ws, hyper, np.array([0, 1, 0, 1]), 3, 2)
    np.testing.assert_allclose(p / p.sum(), ref, rtol=1e-12)


def test_fixed_seed_determinism():
    ws = build_windows(generate(SynthConfig(users=6, days=1)).log, 1)
    cfg = TrainConfig(K_init=5, total_iterations=10, adapt_every=5, seed=3, log_every=0)
    a, b = fit(ws, cfg), fit(ws, cfg)
    assert np.array_equal(a.state.assignments, b.state.assignments)
    assert np.array_equal(a.model.phi, b.model.phi)


def test_zero_iterations_freezes_initialization():
    ws = make_windows([0, 0, 1], [[0, 1], [1, 2], [2, 0]], taus=[1, 2, 3])
    r = fit(ws, TrainConfig(K_init=3, total_iterations=0, seed=0))
    init = ModelState.initialize(ws, Hyperparams.default(3), np.random.default_rng(
        np.random.SeedSequence(0).spawn(2)[0]))
    assert np.array_equal(r.state.assignments, init.assignments)
    np.testing.assert_array_equal(r.model.pi, init.pi())


def test_nt_mode_ignores_gaps():
    log = generate(SynthConfig(users=6, days=1)).log
    cfg = TrainConfig(K_init=4, total_iterations=8, adapt_every=4, seed=1, nt_mode=True,
                      log_every=0)
    a = fit(build_windows(log, 1), cfg)
    b = fit(build_windows(log, 1, use_timestamps=False), cfg)
    assert np.array_equal(a.state.assignments, b.state.assignments)
    assert a.model.nt_mode and a.eccdf is None and not a.reports


def test_counts_consistent_after_every_pass():
    ws = build_windows(generate(SynthConfig(users=8, days=1)).log, 1)
    seen = []

    def cb(event, it, state):
        state.check()
        assert state.matches_assignments()
        seen.append(event)

    fit(ws, TrainConfig(K_init=6, total_iterations=10, adapt_every=5, seed=0, log_every=0), callback=cb)
    assert seen.count("pass") == 10 and seen.count("adapt") == 2


def test_log_posterior_improves():
    ws = build_windows(generate(SynthConfig(users=10, days=2)).log, 1)
    cfg = TrainConfig(K_init=5, total_iterations=30, adapt_every=30, seed=0, nt_mode=True,
                      log_every=1)
    init = ModelState.initialize(ws, Hyperparams.default(5),
                                 np.random.default_rng(np.random.SeedSequence(0).spawn(2)[0]))
    r = fit(ws, cfg)
    values = [h[2] for h in r.history]
    assert all(np.isfinite(values))
    assert values[-1] > joint_log_posterior(init, None)


def test_config_validation():
    for bad in (dict(K_init=0), dict(B=0), dict(adapt_every=0), dict(workers=0),
                dict(total_iterations=-1), dict(total_iterations=10, adapt_every=20)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)
    ws = make_windows([0], [[0, 1]])
    with pytest.raises(ValueError):
        fit(ws, TrainConfig(B=2, total_iterations=1, adapt_every=1))


def test_train_returns_model():
    ws = make_windows([0, 0, 1], [[0, 1], [1, 2], [2, 0]], taus=[1, 2, 3])
    m = train(ws, TrainConfig(K_init=2, total_iterations=2, adapt_every=1, seed=0))
    assert m.K >= 1 and m.phi.shape[0] == 3


def test_tiny_chain_matches_exact_stationary_law():
    # general corpus: compared with the exact law of the in-order sweep
    ws = make_windows([0, 0, 0, 1, 1, 1], [[0, 1], [1, 2], [2, 0], [3, 0], [0, 2], [2, 3]],
                      n_items=4)
    hyper = Hyperparams(0.5, 0.5, np.ones(2), 1, 2)
    states, probs = systematic_scan_stationary(ws, hyper)
    st_ = ModelState.initialize(ws, hyper, np.random.default_rng(0))
    emp = chain_coassignment(st_, np.random.default_rng(1), 60_000)
    assert np.abs(emp - coassignment(states, probs)).max() < 0.02
