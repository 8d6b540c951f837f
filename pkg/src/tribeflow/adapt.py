"""Merge and split moves that adapt the number of environments.

Both sweeps apply a move provisionally, score the joint log posterior of
model and data, and keep the move only on a strict gain.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from . import _kernels
from .residence import EccdfTable, rebuild
from .state import Hyperparams, ModelState

__all__ = [
    "AdaptReport",
    "JointLogPosterior",
    "joint_log_posterior",
    "jlp_components",
    "merge_sweep",
    "split_sweep",
    "MERGE_CANDIDATES",
    "SPLIT_MIN_WINDOWS",
    "SPLIT_FRACTION",
]

MERGE_CANDIDATES = 10
SPLIT_MIN_WINDOWS = 40
SPLIT_FRACTION = 0.05


@dataclass
class AdaptReport:
    kind: str
    merges: list = field(default_factory=list)   # (kept_env, removed_env, delta)
    splits: list = field(default_factory=list)   # (env, moved_windows, delta)
    rejected: int = 0
    K_before: int = 0
    K_after: int = 0

    @property
    def deltas(self) -> list:
        return [m[2] for m in self.merges] + [s[2] for s in self.splits]

    def summary(self) -> str:
        return (f"{self.kind}: K {self.K_before}->{self.K_after} "
                f"merges={len(self.merges)} splits={len(self.splits)} rejected={self.rejected} "
                f"deltas={[round(d, 4) for d in self.deltas]}")


@dataclass(frozen=True)
class JointLogPosterior:
    """Additive pieces of the joint log posterior."""

    user: float         # sum over windows of log pi
    item: float         # sum over windows of log transition terms
    tau: float          # sum over gaps of log ECCDF predictive
    item_prior: float   # Dirichlet-multinomial of environment item counts

    @property
    def total(self) -> float:
        return self.user + self.item + self.tau + self.item_prior


class _Work:
    """Mutable count workspace with optional spare environment slots."""

    def __init__(self, state: ModelState, eccdf, use_tau: bool, spare: int = 0):
        ws = state.windows
        K0 = state.K
        Kt = K0 + spare
        self.state = state
        self.B = ws.B
        self.users = ws.users
        self.items = ws.items
        self.taus = ws.taus
        self.use_tau = use_tau
        self.n_items = state.n_items
        self.beta = state.hyper.beta
        self.alpha_total = state.hyper.alpha * len(state.hyper.zeta)
        self.e = np.zeros((Kt, ws.n_users), dtype=np.int64)
        self.e[:K0] = state.e
        self.c = np.zeros((self.n_items, Kt), dtype=np.int64)
        self.c[:, :K0] = state.c
        self.a = np.zeros(Kt, dtype=np.int64)
        self.a[:K0] = state.a
        self.n = state.n.copy()
        self.z = state.assignments.copy()
        self.src = np.zeros((self.n_items, Kt), dtype=np.int64)
        self.dst = np.zeros((self.n_items, Kt), dtype=np.int64)
        if len(self.z):
            zr = np.repeat(self.z[:, None], self.B, axis=1)
            self.src[:, :K0] = np.bincount((self.items[:, :-1] * K0 + zr).ravel(),
                                           minlength=self.n_items * K0).reshape(self.n_items, K0)
            self.dst[:, :K0] = np.bincount((self.items[:, 1:] * K0 + zr).ravel(),
                                           minlength=self.n_items * K0).reshape(self.n_items, K0)
        self.active = np.zeros(Kt, dtype=bool)
        self.active[:K0] = True
        if use_tau:
            if eccdf is None or eccdf.K != K0:
                eccdf = rebuild(state)
            self.tables = eccdf.tables() + [np.empty(0)] * spare
        else:
            self.tables = [np.empty(0)] * Kt
        self.tail = np.array([_kernels.tail_log_sum(t) for t in self.tables])

    @property
    def K(self) -> int:
        return int(self.active.sum())

    def set_table(self, M, values):
        self.tables[M] = values
        self.tail[M] = _kernels.tail_log_sum(values)

    def components(self) -> JointLogPosterior:
        act = self.active
        K = int(act.sum())
        alpha = self.alpha_total / K
        beta = self.beta
        e = self.e[act].astype(np.float64)
        c = self.c[:, act].astype(np.float64)
        a = self.a[act].astype(np.float64)
        n = self.n.astype(np.float64)

        pi = (e + alpha) / (n[None, :] + K * alpha)
        user = float(np.sum(e * np.log(pi)))

        denom = (self.B + 1) * a + self.n_items * beta
        item = float(np.sum(self.dst[:, act] * np.log(c + beta))
                     - np.sum(self.src[:, act] * np.log(denom[None, :] - c - beta)))
        item_prior = float(np.sum(gammaln(self.n_items * beta) - gammaln(denom))
                           + np.sum(gammaln(c + beta) - gammaln(beta)))

        tau = 0.0
        if self.use_tau:
            sizes = np.array([len(self.tables[M]) for M in np.flatnonzero(act)], dtype=np.float64)
            tau = float(np.sum(self.tail[act]) - np.sum(sizes * np.log(sizes + K)))
        return JointLogPosterior(user, item, tau, item_prior)

    def jlp(self) -> float:
        return self.components().total

    # -- moves ---------------------------------------------------------------

    def move(self, idx, src_env, dst_env):
        """Relabel windows ``idx`` from ``src_env`` to ``dst_env``."""
        if len(idx) == 0:
            return
        u = self.users[idx]
        it = self.items[idx]
        np.subtract.at(self.e[src_env], u, 1)
        np.add.at(self.e[dst_env], u, 1)
        np.subtract.at(self.c[:, src_env], it.ravel(), 1)
        np.add.at(self.c[:, dst_env], it.ravel(), 1)
        np.subtract.at(self.src[:, src_env], it[:, :-1].ravel(), 1)
        np.add.at(self.src[:, dst_env], it[:, :-1].ravel(), 1)
        np.subtract.at(self.dst[:, src_env], it[:, 1:].ravel(), 1)
        np.add.at(self.dst[:, dst_env], it[:, 1:].ravel(), 1)
        self.a[src_env] -= len(idx)
        self.a[dst_env] += len(idx)
        self.z[idx] = dst_env

    def to_state(self):
        keep = np.flatnonzero(self.active)
        relabel = np.full(len(self.active), -1, dtype=np.int64)
        relabel[keep] = np.arange(len(keep))
        K = len(keep)
        st = self.state
        hyper = st.hyper.for_K(K)
        new = ModelState(st.windows, hyper, np.ascontiguousarray(self.e[keep]),
                         np.ascontiguousarray(self.c[:, keep]), self.a[keep].copy(),
                         self.n.copy(), relabel[self.z])
        if np.any(new.assignments < 0):
            raise RuntimeError("window assigned to a removed environment")
        return new


def _use_tau(state: ModelState, eccdf) -> bool:
    return state.windows.has_taus and eccdf is not None


def jlp_components(state: ModelState, eccdf=None, use_tau=None) -> JointLogPosterior:
    if use_tau is None:
        use_tau = _use_tau(state, eccdf)
    return _Work(state, eccdf, use_tau).components()


def joint_log_posterior(state: ModelState, eccdf=None, use_tau=None) -> float:
    """Joint log posterior of the current assignment.

    Sum over windows of the log window likelihood (user preference times
    no-revisit transitions times gap predictive, with point estimates
    from the current counts) plus, per environment, the log
    Dirichlet-multinomial probability of its item counts under the
    symmetric ``beta`` prior. Gap terms are included when ``eccdf`` is
    given and the windows carry gaps.
    """
    return jlp_components(state, eccdf, use_tau).total


def _cosine_pairs(phi: np.ndarray, envs: np.ndarray, limit: int):
    cols = phi[:, envs]
    norms = np.linalg.norm(cols, axis=0)
    sim = (cols.T @ cols) / np.outer(norms, norms)
    iu, ju = np.triu_indices(len(envs), k=1)
    s = sim[iu, ju]
    order = np.lexsort((ju, iu, -s))[:limit]
    return [(int(envs[iu[k]]), int(envs[ju[k]]), float(s[k])) for k in order]


def merge_sweep(state: ModelState, eccdf=None, candidates: int = MERGE_CANDIDATES):
    """Try merging the most similar environment pairs.

    Candidate pairs are the ``candidates`` pairs whose item distributions
    have the highest cosine similarity. Each merge is kept only if the
    joint log posterior strictly increases.

    Returns
    -------
    (ModelState, AdaptReport)
    """
    report = AdaptReport("merge", K_before=state.K, K_after=state.K)
    if state.K < 2:
        return state, report
    use_tau = _use_tau(state, eccdf)
    wk = _Work(state, eccdf, use_tau)
    current = wk.jlp()
    pairs = _cosine_pairs(state.phi(), np.arange(state.K), candidates)
    for i, j, _sim in pairs:
        if not (wk.active[i] and wk.active[j]):
            continue
        idx = np.flatnonzero(wk.z == j)
        old_i, old_j = wk.tables[i], wk.tables[j]
        wk.move(idx, j, i)
        wk.active[j] = False
        if use_tau:
            wk.set_table(i, np.sort(np.concatenate((old_i, old_j)), kind="stable"))
            wk.set_table(j, np.empty(0))
        proposed = wk.jlp()
        if proposed > current:
            report.merges.append((i, j, proposed - current))
            current = proposed
        else:
            wk.active[j] = True
            wk.move(idx, i, j)
            if use_tau:
                wk.set_table(i, old_i)
                wk.set_table(j, old_j)
            report.rejected += 1
    if not report.merges:
        return state, report
    new = wk.to_state()
    report.K_after = new.K
    return new, report


def split_sweep(state: ModelState, eccdf=None, min_windows: int = SPLIT_MIN_WINDOWS,
                fraction: float = SPLIT_FRACTION):
    """Try splitting off each environment's longest-gap windows.

    For every environment with at least ``min_windows`` windows, the
    ``ceil(fraction * a_M)`` windows with the largest maximum gap move to a
    new environment; the split is kept only on a strict gain. No-op without
    gaps.
    """
    report = AdaptReport("split", K_before=state.K, K_after=state.K)
    if not _use_tau(state, eccdf):
        return state, report
    targets = [M for M in range(state.K) if state.a[M] >= min_windows]
    if not targets:
        return state, report
    wk = _Work(state, eccdf, True, spare=len(targets))
    current = wk.jlp()
    slot = state.K
    for M in targets:
        idx = np.flatnonzero(wk.z == M)
        score = wk.taus[idx].max(axis=1)
        n_move = int(math.ceil(fraction * len(idx)))
        moved = np.sort(idx[np.argsort(-score, kind="stable")[:n_move]])
        old = wk.tables[M]
        moved_taus = np.sort(wk.taus[moved].ravel(), kind="stable")
        keep, missing = _kernels.multiset_remove(old, moved_taus)
        if missing:
            raise RuntimeError("gap table out of sync with assignments")
        wk.move(moved, M, slot)
        wk.active[slot] = True
        wk.set_table(M, old[keep])
        wk.set_table(slot, moved_taus)
        proposed = wk.jlp()
        if proposed > current:
            report.splits.append((M, len(moved), proposed - current))
            current = proposed
            slot += 1
        else:
            wk.move(moved, slot, M)
            wk.active[slot] = False
            wk.set_table(M, old)
            wk.set_table(slot, np.empty(0))
            report.rejected += 1
    if not report.splits:
        return state, report
    new = wk.to_state()
    report.K_after = new.K
    return new, report
