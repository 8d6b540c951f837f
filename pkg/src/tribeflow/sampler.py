"""Collapsed Gibbs e-step and the outer training loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _kernels
from .residence import EccdfTable, rebuild
from .state import Hyperparams, InvariantError, ModelState
from .windows import WindowSet

__all__ = [
    "TrainConfig",
    "TrainResult",
    "make_rngs",
    "window_env_log_posterior",
    "window_env_posterior",
    "gibbs_pass",
    "fit",
    "train",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    K_init: int = 100
    B: int = 1
    total_iterations: int = 2000
    adapt_every: int = 200
    seed: int = 0
    workers: int = 1
    nt_mode: bool = False
    log_every: int = 50

    def __post_init__(self):
        if self.K_init < 1:
            raise ValueError("K_init must be >= 1")
        if self.B < 1:
            raise ValueError("B must be >= 1")
        if self.total_iterations < 0:
            raise ValueError("total_iterations must be >= 0")
        if self.adapt_every < 1:
            raise ValueError("adapt_every must be >= 1")
        if self.total_iterations and self.adapt_every > self.total_iterations:
            raise ValueError("adapt_every must not exceed total_iterations")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class TrainResult:
    model: object
    state: ModelState
    eccdf: EccdfTable
    reports: list = field(default_factory=list)
    history: list = field(default_factory=list)


def make_rngs(seed: int, workers: int):
    """Initialisation generator plus one generator per worker."""
    children = np.random.SeedSequence(seed).spawn(workers + 1)
    return np.random.default_rng(children[0]), [np.random.default_rng(s) for s in children[1:]]


def uses_taus(windows: WindowSet, nt_mode: bool) -> bool:
    return windows.has_taus and not nt_mode


def window_env_log_posterior(state: ModelState, eccdf: Optional[EccdfTable], w: int,
                             nt_mode: bool = False) -> np.ndarray:
    """Log of the unnormalised environment weights of window ``w``.

    The window's own contribution must already be removed from the counts.
    """
    ws = state.windows
    use_tau = uses_taus(ws, nt_mode) and eccdf is not None
    tab = eccdf if eccdf is not None else EccdfTable.empty(state.K)
    out = np.empty(state.K)
    _kernels.window_log_weights(ws.users[w], ws.items[w], ws.taus[w], state.e, state.c,
                                state.a, state.n, state.hyper.alpha_zeta, state.hyper.beta,
                                state.B, tab.values, tab.offsets, use_tau, out)
    if not np.all(np.isfinite(out)):
        raise InvariantError(f"non-finite environment weight for window {w}")
    return out


def window_env_posterior(state, eccdf, w, nt_mode=False) -> np.ndarray:
    return np.exp(window_env_log_posterior(state, eccdf, w, nt_mode))


def gibbs_pass(state: ModelState, eccdf: Optional[EccdfTable], rng: np.random.Generator,
               nt_mode: bool = False) -> ModelState:
    """Resample every window's environment once, in index order (in place)."""
    ws = state.windows
    use_tau = uses_taus(ws, nt_mode) and eccdf is not None
    tab = eccdf if use_tau else EccdfTable.empty(state.K)
    uniforms = rng.random(len(ws))
    bad = _kernels.gibbs_sweep(ws.users, ws.items, ws.taus, state.assignments, state.e,
                               state.c, state.a, state.n, state.hyper.alpha_zeta,
                               state.hyper.beta, ws.B, tab.values, tab.offsets, use_tau,
                               uniforms)
    if bad:
        raise InvariantError("non-finite environment weights during Gibbs pass")
    return state


def m_step(state: ModelState, nt_mode: bool) -> Optional[EccdfTable]:
    return rebuild(state) if uses_taus(state.windows, nt_mode) else None


def adapt_step(state, eccdf, nt_mode):
    """Merge then split sweep; returns (state, eccdf, [reports])."""
    from .adapt import merge_sweep, split_sweep

    if not uses_taus(state.windows, nt_mode):
        return state, eccdf, []
    state, rep_m = merge_sweep(state, eccdf)
    eccdf = rebuild(state)
    state, rep_s = split_sweep(state, eccdf)
    eccdf = rebuild(state)
    return state, eccdf, [rep_m, rep_s]


def fit(windows: WindowSet, config: TrainConfig, user_ids=None, item_ids=None,
        callback: Optional[Callable] = None) -> TrainResult:
    """Single-worker training.

    Each iteration is one Gibbs pass followed by an ECCDF rebuild. Every
    ``adapt_every`` iterations the merge and split sweeps run. ``callback``
    is called as ``callback(event, iteration, state)`` with event ``"pass"``
    after each pass and ``"adapt"`` after each adaptation round.
    """
    from .adapt import joint_log_posterior

    if len(windows) == 0:
        raise ValueError("no training windows")
    if windows.B != config.B:
        raise ValueError(f"windows built with B={windows.B}, config has B={config.B}")
    init_rng, (rng,) = make_rngs(config.seed, 1)
    hyper = Hyperparams.default(config.K_init, config.B)
    state = ModelState.initialize(windows, hyper, init_rng)
    eccdf = m_step(state, config.nt_mode)
    history, reports = [], []
    for it in range(1, config.total_iterations + 1):
        gibbs_pass(state, eccdf, rng, config.nt_mode)
        eccdf = m_step(state, config.nt_mode)
        if callback is not None:
            callback("pass", it, state)
        if it % config.adapt_every == 0:
            state, eccdf, reps = adapt_step(state, eccdf, config.nt_mode)
            reports.extend(reps)
            for r in reps:
                log.info("iter=%d %s", it, r.summary())
            if callback is not None:
                callback("adapt", it, state)
        if config.log_every and (it % config.log_every == 0 or it == config.total_iterations):
            jlp = joint_log_posterior(state, eccdf)
            history.append((it, state.K, jlp))
            log.info("iter=%d K=%d joint_log_posterior=%.6f", it, state.K, jlp)
    model = state.freeze(eccdf if eccdf is not None else EccdfTable.empty(state.K),
                         user_ids, item_ids, nt_mode=not uses_taus(windows, config.nt_mode))
    return TrainResult(model, state, eccdf, reports, history)


def train(windows: WindowSet, config: TrainConfig, user_ids=None, item_ids=None) -> object:
    """Train and return the frozen model; dispatches to the parallel driver
    when ``config.workers > 1``."""
    if config.workers > 1:
        from .parallel import run_parallel
        return run_parallel(windows, config, user_ids, item_ids).model
    return fit(windows, config, user_ids, item_ids).model
