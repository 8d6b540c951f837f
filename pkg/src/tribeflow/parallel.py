"""Multi-worker training with pairwise count exchange.

Each worker owns a contiguous range of users, a replica of the global
counts and its own random stream. A round is one Gibbs pass per worker
(run on threads; the compiled kernels release the GIL), after which the
master pairs workers at random and every pair swaps what it knows about
everybody's changes. Every ``adapt_every`` rounds all workers meet at a
barrier where the master rebuilds the exact global state, runs the merge
and split sweeps and hands the result back out.

Replicas never share mutable arrays. A worker's knowledge is a table of
count deltas, one per worker, each relative to the last barrier and
stamped with a version; a pair exchange keeps the newer entry of every
row, so both partners end with identical counts.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from . import _kernels
from .residence import EccdfTable, apply_tau_delta, rebuild
from .sampler import TrainConfig, TrainResult, adapt_step, uses_taus
from .state import Hyperparams, InvariantError, ModelState
from .windows import WindowSet

__all__ = ["CountDelta", "Replica", "shard", "shard_bounds", "sync_pair", "run_parallel"]

log = logging.getLogger(__name__)


@dataclass
class CountDelta:
    """Additive change to the count matrices and the gap tables.

    ``ins_env``/``ins_tau`` list gaps to insert, ``rm_env``/``rm_tau`` gaps
    to remove.
    """

    e: np.ndarray
    c: np.ndarray
    a: np.ndarray
    n: np.ndarray
    ins_env: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    ins_tau: np.ndarray = field(default_factory=lambda: np.empty(0))
    rm_env: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    rm_tau: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def K(self) -> int:
        return int(self.e.shape[0])

    @classmethod
    def zeros(cls, K: int, n_users: int, n_items: int) -> "CountDelta":
        return cls(np.zeros((K, n_users), dtype=np.int64), np.zeros((n_items, K), dtype=np.int64),
                   np.zeros(K, dtype=np.int64), np.zeros(n_users, dtype=np.int64))

    @classmethod
    def from_assignments(cls, windows: WindowSet, z_old: np.ndarray, z_new: np.ndarray,
                         K: int) -> "CountDelta":
        """Delta taking the counts of ``windows`` under ``z_old`` to ``z_new``."""
        d = cls.zeros(K, windows.n_users, windows.n_items)
        moved = np.flatnonzero(z_old != z_new)
        if len(moved) == 0:
            return d
        u = windows.users[moved]
        old, new = z_old[moved], z_new[moved]
        slots = windows.B + 1
        U, I = windows.n_users, windows.n_items
        d.e += (np.bincount(new * U + u, minlength=K * U)
                - np.bincount(old * U + u, minlength=K * U)).reshape(K, U)
        d.a += np.bincount(new, minlength=K) - np.bincount(old, minlength=K)
        it = windows.items[moved].ravel()
        d.c += (np.bincount(it * K + np.repeat(new, slots), minlength=I * K)
                - np.bincount(it * K + np.repeat(old, slots), minlength=I * K)).reshape(I, K)
        if windows.has_taus:
            B = windows.B
            taus = windows.taus[moved].ravel()
            d.ins_env, d.ins_tau = np.repeat(new, B), taus
            d.rm_env, d.rm_tau = np.repeat(old, B), taus.copy()
        return d

    def negate(self) -> "CountDelta":
        return CountDelta(-self.e, -self.c, -self.a, -self.n,
                          self.rm_env, self.rm_tau, self.ins_env, self.ins_tau)

    def __add__(self, other: "CountDelta") -> "CountDelta":
        if other.e.shape != self.e.shape or other.c.shape != self.c.shape:
            raise ValueError("deltas have different dimensions")
        return CountDelta(self.e + other.e, self.c + other.c, self.a + other.a, self.n + other.n,
                          np.concatenate((self.ins_env, other.ins_env)),
                          np.concatenate((self.ins_tau, other.ins_tau)),
                          np.concatenate((self.rm_env, other.rm_env)),
                          np.concatenate((self.rm_tau, other.rm_tau)))

    def is_zero(self) -> bool:
        return (not self.e.any() and not self.c.any() and not self.a.any() and not self.n.any()
                and len(self.ins_env) == 0 and len(self.rm_env) == 0)

    def apply(self, state: ModelState) -> ModelState:
        """Add the count part to ``state`` in place; assignments untouched."""
        if self.e.shape != state.e.shape or self.c.shape != state.c.shape:
            raise ValueError("delta and state have different dimensions")
        state.e += self.e
        state.c += self.c
        state.a += self.a
        state.n += self.n
        if (state.e < 0).any() or (state.c < 0).any() or (state.a < 0).any() or (state.n < 0).any():
            raise InvariantError("delta drove a count negative")
        return state

    def apply_table(self, table: EccdfTable) -> EccdfTable:
        return apply_tau_delta(table, self.ins_env, self.ins_tau, self.rm_env, self.rm_tau)


# -- sharding ------------------------------------------------------------------


def _reachable_cuts(S, P, lo_size, span):
    """User boundaries splitting into ``P`` pieces sized in
    ``[lo_size, lo_size + span]``, or None."""
    U = len(S) - 1
    reach = [np.zeros(U + 1, dtype=bool)]
    reach[0][0] = True
    for _ in range(P):
        prev = np.flatnonzero(reach[-1])
        lo = np.maximum(np.searchsorted(S, S[prev] + lo_size, side="left"), prev + 1)
        hi = np.searchsorted(S, S[prev] + lo_size + span, side="right")
        ok = lo < hi
        diff = np.zeros(U + 2, dtype=np.int64)
        np.add.at(diff, lo[ok], 1)
        np.add.at(diff, hi[ok], -1)
        reach.append(np.cumsum(diff)[:U + 1] > 0)
    if not reach[P][U]:
        return None
    bounds = [U]
    for k in range(P, 0, -1):
        j = bounds[-1]
        cand = np.flatnonzero(reach[k - 1][:j])
        size = S[j] - S[cand]
        bounds.append(int(cand[(size >= lo_size) & (size <= lo_size + span)][-1]))
    return bounds[::-1]


def shard_bounds(user_counts: np.ndarray, P: int) -> List[int]:
    """User-index boundaries of ``P`` contiguous shards.

    Shard sizes (in windows) differ by at most the largest single user's
    window count. Every shard gets at least one user.
    """
    counts = np.asarray(user_counts, dtype=np.int64)
    U = len(counts)
    if P < 1:
        raise ValueError("P must be >= 1")
    if P > U:
        raise ValueError(f"cannot split {U} users into {P} shards")
    S = np.zeros(U + 1, dtype=np.int64)
    np.cumsum(counts, out=S[1:])
    N, span = int(S[-1]), int(counts.max())
    # the smallest piece lies in [N/P - span, N/P]; start near the mean
    for lo_size in range(N // P, max(-1, (N - span * P) // P - 1), -1):
        bounds = _reachable_cuts(S, P, lo_size, span)
        if bounds is not None:
            return bounds
    raise RuntimeError("no balanced partition found")  # unreachable in practice


def shard(windows: WindowSet, P: int) -> List[WindowSet]:
    """Partition windows into ``P`` shards of contiguous user ranges."""
    ub = shard_bounds(windows.user_counts, P)
    off = windows.user_offsets
    return [windows.subset(int(off[ub[k]]), int(off[ub[k + 1]])) for k in range(P)]


# -- replicas and exchange ----------------------------------------------------------


class Replica:
    """One worker's view: barrier counts plus every delta it knows of."""

    def __init__(self, wid: int, P: int, base: ModelState, base_table: Optional[EccdfTable],
                 lo: int = 0, hi: int = 0):
        self.wid = wid
        self.P = P
        self.lo, self.hi = lo, hi
        self.reset(base, base_table)

    def reset(self, base: ModelState, base_table: Optional[EccdfTable]) -> None:
        self.base = base
        self.base_table = base_table
        self.known: List[Optional[CountDelta]] = [None] * self.P
        self.versions = np.zeros(self.P, dtype=np.int64)
        self.state = base.copy()
        self.table = base_table
        self.deferred = 0

    @property
    def K(self) -> int:
        return self.base.K

    def publish(self, delta: CountDelta) -> None:
        """Replace this worker's own delta (relative to the barrier)."""
        self.known[self.wid] = delta
        self.versions[self.wid] += 1

    def total_delta(self) -> Optional[CountDelta]:
        out = None
        for d in self.known:
            if d is not None:
                out = d if out is None else out + d
        return out

    def refresh_counts(self) -> None:
        st = self.base.copy()
        st.assignments = self.state.assignments
        total = self.total_delta()
        if total is not None:
            total.apply(st)
        self.state = st

    def refresh_table(self) -> None:
        if self.base_table is None:
            return
        total = self.total_delta()
        self.table = self.base_table if total is None else total.apply_table(self.base_table)


def sync_pair(A: Replica, B: Replica):
    """Exchange knowledge so both replicas hold identical counts.

    For every worker's delta the newer version wins on both sides. A pair
    whose environment counts differ is left untouched until the next
    barrier.
    """
    if A.K != B.K:
        A.deferred += 1
        B.deferred += 1
        log.warning("workers %d and %d disagree on K (%d vs %d); sync deferred",
                    A.wid, B.wid, A.K, B.K)
        return A, B
    changed_a = changed_b = False
    for j in range(A.P):
        if A.versions[j] > B.versions[j]:
            B.known[j], B.versions[j] = A.known[j], A.versions[j]
            changed_b = True
        elif B.versions[j] > A.versions[j]:
            A.known[j], A.versions[j] = B.known[j], B.versions[j]
            changed_a = True
    if changed_a:
        A.refresh_counts()
    if changed_b:
        B.refresh_counts()
    return A, B


# -- driver ---------------------------------------------------------------------


def _rngs(seed: int, P: int):
    """Initialisation, per-worker and schedule generators.

    The first ``P + 1`` streams coincide with :func:`sampler.make_rngs`.
    """
    ss = np.random.SeedSequence(seed).spawn(P + 2)
    return (np.random.default_rng(ss[0]), [np.random.default_rng(s) for s in ss[1:P + 1]],
            np.random.default_rng(ss[P + 1]))


class _Worker:
    def __init__(self, replica: Replica, shard_ws: WindowSet, rng, use_tau: bool):
        self.replica = replica
        self.ws = shard_ws
        self.rng = rng
        self.use_tau = use_tau

    def start(self, z_global: np.ndarray) -> None:
        r = self.replica
        self.z0 = z_global[r.lo:r.hi].copy()
        self.z = self.z0.copy()

    def e_step(self) -> None:
        r = self.replica
        st = r.state
        tab = r.table if self.use_tau else EccdfTable.empty(st.K)
        uniforms = self.rng.random(len(self.ws))
        bad = _kernels.gibbs_sweep(self.ws.users, self.ws.items, self.ws.taus, self.z, st.e, st.c,
                                   st.a, st.n, st.hyper.alpha_zeta, st.hyper.beta, self.ws.B,
                                   tab.values, tab.offsets, self.use_tau, uniforms)
        if bad:
            raise InvariantError(f"worker {r.wid}: non-finite environment weights")
        r.publish(CountDelta.from_assignments(self.ws, self.z0, self.z, st.K))


def _gather(base: ModelState, workers: List[_Worker]) -> ModelState:
    """Exact global state: barrier counts plus every worker's own delta."""
    st = base.copy()
    for w in workers:
        st.assignments[w.replica.lo:w.replica.hi] = w.z
        own = w.replica.known[w.replica.wid]
        if own is not None:
            own.apply(st)
    return st


def run_parallel(windows: WindowSet, config: TrainConfig, user_ids=None, item_ids=None,
                 callback: Optional[Callable] = None) -> TrainResult:
    """Train with ``config.workers`` workers.

    With one worker the result is bit-identical to :func:`sampler.fit`.
    """
    from .adapt import joint_log_posterior

    if len(windows) == 0:
        raise ValueError("no training windows")
    if windows.B != config.B:
        raise ValueError(f"windows built with B={windows.B}, config has B={config.B}")
    P = config.workers
    bounds = shard_bounds(windows.user_counts, P)
    off = windows.user_offsets
    ranges = [(int(off[bounds[k]]), int(off[bounds[k + 1]])) for k in range(P)]
    use_tau = uses_taus(windows, config.nt_mode)

    init_rng, worker_rngs, sched_rng = _rngs(config.seed, P)
    hyper = Hyperparams.default(config.K_init, config.B)
    base = ModelState.initialize(windows, hyper, init_rng)
    base_table = rebuild(base) if use_tau else None

    workers = []
    for k, (lo, hi) in enumerate(ranges):
        rep = Replica(k, P, base, base_table, lo, hi)
        workers.append(_Worker(rep, windows.subset(lo, hi), worker_rngs[k], use_tau))
    for w in workers:
        w.start(base.assignments)

    history, reports = [], []
    pool = ThreadPoolExecutor(max_workers=P) if P > 1 else None

    def run_all(fn):
        if pool is None:
            for w in workers:
                fn(w)
            return
        futures = [pool.submit(fn, w) for w in workers]
        for k, f in enumerate(futures):
            exc = f.exception()
            if exc is not None:
                raise RuntimeError(f"worker {k} failed: {exc!r}") from exc

    try:
        state, eccdf = base, base_table
        for it in range(1, config.total_iterations + 1):
            run_all(_Worker.e_step)
            order = sched_rng.permutation(P)
            for p in range(0, P - 1, 2):
                sync_pair(workers[order[p]].replica, workers[order[p + 1]].replica)
            run_all(lambda w: w.replica.refresh_table())

            at_barrier = it % config.adapt_every == 0
            need_log = config.log_every and (it % config.log_every == 0
                                             or it == config.total_iterations)
            need_state = at_barrier or need_log or callback is not None \
                or it == config.total_iterations
            if need_state:
                state = _gather(base, workers)
                eccdf = rebuild(state) if use_tau else None
                if callback is not None:
                    callback("pass", it, state)
            if at_barrier:
                state, eccdf, reps = adapt_step(state, eccdf, config.nt_mode)
                reports.extend(reps)
                for r in reps:
                    log.info("iter=%d %s", it, r.summary())
                if callback is not None:
                    callback("adapt", it, state)
                base = state.copy()
                for w in workers:
                    w.replica.reset(base, eccdf)
                    w.start(base.assignments)
            if need_log:
                jlp = joint_log_posterior(state, eccdf)
                history.append((it, state.K, jlp))
                log.info("iter=%d K=%d joint_log_posterior=%.6f", it, state.K, jlp)
    finally:
        if pool is not None:
            pool.shutdown(wait=True)

    if config.total_iterations == 0:
        state, eccdf = base, base_table
    model = state.freeze(eccdf if eccdf is not None else EccdfTable.empty(state.K),
                         user_ids, item_ids, nt_mode=not use_tau)
    return TrainResult(model, state, eccdf, reports, history)
