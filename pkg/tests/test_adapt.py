import math

import numpy as np
import pytest
from scipy.special import gammaln

from tribeflow.adapt import jlp_components, joint_log_posterior, merge_sweep, split_sweep
from tribeflow.residence import rebuild
from tribeflow.sampler import TrainConfig, adapt_step, fit
from tribeflow.state import Hyperparams, ModelState

from conftest import make_windows


def _walk(rng, n, support):
    seq = [int(rng.choice(support))]
    while len(seq) < n + 1:
        x = int(rng.choice(support))
        if x != seq[-1]:
            seq.append(x)
    return np.array([seq[:-1], seq[1:]]).T


def _jlp(state):
    return joint_log_posterior(state, rebuild(state))


def test_single_window_hand_value():
    ws = make_windows([0], [[0, 1]], taus=[3.0], n_items=3)
    st_ = ModelState.from_assignments(ws, Hyperparams.default(1), [0], 1)
    b = 0.001
    user = 0.0                                     # pi = (1 + 50) / (1 + 50)
    item = math.log(1 + b) - math.log(2 + 3 * b - 1 - b)
    prior = (math.lgamma(3 * b) - math.lgamma(2 + 3 * b)
             + 2 * (math.lgamma(1 + b) - math.lgamma(b)))
    tau = math.log(2 / 2)                          # one stored gap, at least as long
    assert _jlp(st_) == pytest.approx(user + item + prior + tau, rel=1e-12)


def test_label_permutation_invariant(rng):
    users = np.sort(rng.integers(0, 5, 80))
    ws = make_windows(users, rng.integers(0, 12, (80, 2)), taus=rng.exponential(3, 80),
                      n_users=5, n_items=12)
    z = rng.integers(0, 4, 80)
    perm = np.array([2, 0, 3, 1])
    a = ModelState.from_assignments(ws, Hyperparams.default(4), z, 4)
    b = ModelState.from_assignments(ws, Hyperparams.default(4), perm[z], 4)
    assert _jlp(a) == pytest.approx(_jlp(b), rel=1e-12)


def test_empty_environment_changes_only_prior_driven_terms(rng):
    users = np.sort(rng.integers(0, 4, 60))
    ws = make_windows(users, rng.integers(0, 8, (60, 2)), taus=rng.exponential(3, 60),
                      n_users=4, n_items=8)
    z = rng.integers(0, 3, 60)
    s3 = ModelState.from_assignments(ws, Hyperparams.default(3), z, 3)
    s4 = ModelState.from_assignments(ws, Hyperparams.default(4), z, 4)
    c3 = jlp_components(s3, rebuild(s3))
    c4 = jlp_components(s4, rebuild(s4))
    # counts-only pieces are untouched; the empty environment's item prior is log 1
    assert c4.item == pytest.approx(c3.item, rel=1e-12)
    assert c4.item_prior == pytest.approx(c3.item_prior, rel=1e-12)

    # the rest moves only through the pseudo-counts that depend on K
    def user_term(e, n, K):
        al = 50.0 / K
        return sum(e[M, u] * math.log((e[M, u] + al) / (n[u] + K * al))
                   for M in range(e.shape[0]) for u in range(e.shape[1]) if e[M, u])

    def tau_term(st_, K):
        total = 0.0
        for M in range(st_.K):
            vals = st_.residence(M)
            for t in vals:
                total += math.log((np.sum(vals >= t) + 1) / (len(vals) + K))
        return total

    assert c4.user == pytest.approx(user_term(s4.e, s4.n, 4), rel=1e-10)
    assert c3.user == pytest.approx(user_term(s3.e, s3.n, 3), rel=1e-10)
    assert c4.tau == pytest.approx(tau_term(s4, 4), rel=1e-10)
    assert c3.tau == pytest.approx(tau_term(s3, 3), rel=1e-10)


def test_merge_duplicates(rng):
    its = np.vstack([_walk(rng, 50, np.arange(10)) for _ in range(4)])
    ws = make_windows(np.repeat(np.arange(4), 50), its, taus=rng.exponential(100, 200),
                      n_items=20)
    st_ = ModelState.from_assignments(ws, Hyperparams.default(2), rng.integers(0, 2, 200), 2)
    new, rep = merge_sweep(st_, rebuild(st_))
    assert new.K == 1 and len(rep.merges) == 1
    delta = _jlp(new) - _jlp(st_)
    assert delta > 0
    assert rep.merges[0][2] == pytest.approx(delta, rel=1e-9)
    new.check()
    assert new.matches_assignments()


def test_orthogonal_not_merged(rng):
    its = np.vstack([_walk(rng, 50, np.arange(10)) for _ in range(2)]
                    + [_walk(rng, 50, np.arange(10, 20)) for _ in range(2)])
    users = np.repeat(np.arange(4), 50)
    ws = make_windows(users, its, taus=rng.exponential(100, 200), n_items=20)
    z = (users >= 2).astype(int)
    st_ = ModelState.from_assignments(ws, Hyperparams.default(2), z, 2)
    new, rep = merge_sweep(st_, rebuild(st_))
    assert new is st_ and rep.rejected == 1 and not rep.merges
    merged = ModelState.from_assignments(ws, Hyperparams.default(1), np.zeros(200, int), 1)
    assert _jlp(merged) - _jlp(st_) < 0


def test_merge_k1_noop():
    ws = make_windows([0, 0], [[0, 1], [1, 0]], taus=[1, 2])
    st_ = ModelState.from_assignments(ws, Hyperparams.default(1), [0, 0], 1)
    new, rep = merge_sweep(st_, rebuild(st_))
    assert new is st_ and rep.K_after == 1


def _split_case(rng, gaps):
    """Environment 0: five users on items 0-9 with ``gaps``; environment 1 elsewhere."""
    its = np.vstack([_walk(rng, 20, np.arange(10)) for _ in range(5)]
                    + [_walk(rng, 50, np.arange(10, 20)) for _ in range(2)])
    users = np.r_[np.repeat(np.arange(5), 20), np.repeat([5, 6], 50)]
    taus = np.r_[rng.permutation(gaps), rng.exponential(50, 100)]
    ws = make_windows(users, its, taus=taus, n_items=20)
    return ModelState.from_assignments(ws, Hyperparams.default(2), (users >= 5).astype(int), 2)


@pytest.mark.xfail(strict=True, reason=(
    "100 windows are too few: the split gains about +11 nats of gap likelihood but "
    "pays about -38 (user preference smoothing) and -30 (item prior) nats"))
def test_bimodal_split_kept_at_hundred_windows(rng):
    st_ = _split_case(rng, np.r_[np.ones(95), np.full(5, 1e6)])
    new, rep = split_sweep(st_, rebuild(st_))
    assert [s[0] for s in rep.splits] == [0]


def test_bimodal_split_rejection_matches_recomputation(rng):
    st_ = _split_case(rng, np.r_[np.ones(95), np.full(5, 1e6)])
    _, rep = split_sweep(st_, rebuild(st_))
    z = st_.assignments.copy()
    z[(z == 0) & (st_.windows.taus[:, 0] == 1e6)] = 2
    prop = ModelState.from_assignments(st_.windows, Hyperparams.default(3), z, 3)
    assert not rep.splits and _jlp(prop) - _jlp(st_) < 0


def _bimodal_by_user(rng, scale):
    """95:5 gap mix where the long gaps belong to one user of their own."""
    per, n_long = 19 * scale, 5 * scale
    its = np.vstack([_walk(rng, per, np.arange(10)) for _ in range(5)]
                    + [_walk(rng, n_long, np.arange(10))]
                    + [_walk(rng, 100, np.arange(10, 20))])
    users = np.r_[np.repeat(np.arange(5), per), np.repeat(5, n_long), np.repeat(6, 100)]
    taus = np.r_[np.ones(5 * per), np.full(n_long, 1e6), rng.exponential(50, 100)]
    ws = make_windows(users, its, taus=taus, n_items=20)
    return ModelState.from_assignments(ws, Hyperparams.default(2), (users == 6).astype(int), 2)


def test_bimodal_split_kept(rng):
    st_ = _bimodal_by_user(rng, 20)
    new, rep = split_sweep(st_, rebuild(st_))
    assert [s[0] for s in rep.splits] == [0] and new.K == 3
    moved = np.flatnonzero(new.assignments == 2)
    assert len(moved) == 100 and np.all(new.windows.taus[moved] == 1e6)
    delta = _jlp(new) - _jlp(st_)
    assert delta > 0 and rep.splits[0][2] == pytest.approx(delta, rel=1e-9)
    new.check()
    assert new.matches_assignments()


def test_constant_gaps_split_rejected(rng):
    st_ = _split_case(rng, np.ones(100))
    new, rep = split_sweep(st_, rebuild(st_))
    assert new is st_ and not rep.splits and rep.rejected == 2
    # direct recomputation of the rejected proposal for environment 0
    z = st_.assignments.copy()
    idx = np.flatnonzero(z == 0)[:5]
    z[idx] = 2
    prop = ModelState.from_assignments(st_.windows, Hyperparams.default(3), z, 3)
    assert _jlp(prop) - _jlp(st_) < 0


def test_nt_mode_never_adapts(rng):
    st_ = _split_case(rng, np.r_[np.ones(95), np.full(5, 1e6)])
    new, rep = split_sweep(st_, None)
    assert new is st_ and not rep.splits
    _, _, reps = adapt_step(st_, rebuild(st_), nt_mode=True)
    assert reps == []


def test_k_never_zero_and_counts_consistent():
    ws = make_windows(np.zeros(60, dtype=int), [[0, 1], [1, 0]] * 30, taus=np.ones(60))
    seen = []

    def cb(event, it, state):
        state.check()
        assert state.matches_assignments() and state.K >= 1
        seen.append(state.K)

    r = fit(ws, TrainConfig(K_init=8, total_iterations=20, adapt_every=5, seed=0, log_every=0),
            callback=cb)
    assert min(seen) >= 1 and r.model.K >= 1
    assert all(d > 0 for rep in r.reports for d in rep.deltas)
