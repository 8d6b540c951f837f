"""Next-item scoring, ranking and flow estimates from a frozen model.

A query carries the user, the last few visited items (the last one is the
current item) and optionally the gaps between them. The posterior over
environments given the history weights each environment's no-revisit
transition out of the current item.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .residence import EccdfTable
from .state import Model

__all__ = [
    "Query",
    "env_posterior_given_history",
    "env_posteriors",
    "next_item_likelihood",
    "next_item_scores",
    "rank_candidates",
    "pairwise_likelihood",
    "pairwise_matrix",
    "flow_estimate",
    "flow_matrix",
]


@dataclass(frozen=True)
class Query:
    """One prediction request.

    Attributes
    ----------
    user : int
        Dense user id; -1 for a user the model never saw.
    history : tuple of int
        Up to ``B + 1`` item ids ending with the current item.
    taus : tuple of float or None
        Gaps between consecutive history items (``len(history) - 1``).
    candidates : array of int or None
        Items to score; default is every item except the current one.
    """

    user: int
    history: tuple
    taus: Optional[tuple] = None
    candidates: Optional[np.ndarray] = None

    @property
    def current(self) -> int:
        return int(self.history[-1])


def _check(model: Model, q: Query) -> None:
    if len(q.history) == 0:
        raise ValueError("query history is empty")
    if len(q.history) > model.B + 1:
        raise ValueError(f"history has {len(q.history)} items; at most B+1={model.B + 1} allowed")
    for i in q.history:
        if not 0 <= int(i) < model.n_items:
            raise ValueError(f"unknown item {i} in history")
    if q.taus is not None and len(q.taus) != len(q.history) - 1:
        raise ValueError("need one gap per consecutive history pair")


def _log_prior(model: Model, users: np.ndarray) -> np.ndarray:
    """(Q, K) log user preference; global weights for unseen users."""
    users = np.asarray(users, dtype=np.int64)
    known = (users >= 0) & (users < model.n_users)
    known[known] = model.user_counts[users[known]] > 0
    with np.errstate(divide="ignore"):
        out = np.tile(np.log(model.env_weights), (len(users), 1))
        out[known] = np.log(model.pi[:, users[known]].T)
    return out


def _log_tau(table: EccdfTable, taus: np.ndarray, K: int) -> np.ndarray:
    """(Q, K) summed log gap likelihoods; ``taus`` is (Q, h)."""
    out = np.zeros((taus.shape[0], K))
    for M in range(K):
        vals = table.env(M)
        b = len(vals) - np.searchsorted(vals, taus, side="left")
        out[:, M] = np.log((b + 1.0) / (len(vals) + K)).sum(axis=1)
    return out


def env_posteriors(model: Model, users, histories: np.ndarray,
                   taus: Optional[np.ndarray] = None) -> np.ndarray:
    """Batched environment posteriors.

    Parameters
    ----------
    users : (Q,) int
    histories : (Q, h) int, each row ending with the current item
    taus : (Q, h - 1) float or None

    Returns
    -------
    (Q, K) array, rows summing to one.
    """
    histories = np.atleast_2d(np.asarray(histories, dtype=np.int64))
    logw = _log_prior(model, users)
    if histories.shape[1] > 1:
        lphi = np.log(model.phi)
        lstay = np.log1p(-model.phi)
        for k in range(histories.shape[1] - 1):
            logw += lphi[histories[:, k + 1]] - lstay[histories[:, k]]
    if taus is not None and not model.nt_mode and histories.shape[1] > 1:
        taus = np.asarray(taus, dtype=np.float64).reshape(histories.shape[0], -1)
        logw += _log_tau(model.eccdf, taus, model.K)
    mx = logw.max(axis=1, keepdims=True)
    w = np.exp(logw - mx)
    return w / w.sum(axis=1, keepdims=True)


def env_posterior_given_history(model: Model, q: Query) -> np.ndarray:
    """Posterior over environments for one query."""
    _check(model, q)
    taus = None if q.taus is None else np.asarray([q.taus], dtype=np.float64)
    return env_posteriors(model, [q.user], [list(q.history)], taus)[0]


def next_item_scores(model: Model, posts: np.ndarray, current: np.ndarray) -> np.ndarray:
    """(Q, n_items) unnormalised scores; the current item scores zero."""
    current = np.asarray(current, dtype=np.int64)
    weights = posts / (1.0 - model.phi[current])
    scores = weights @ model.phi.T
    scores[np.arange(len(current)), current] = 0.0
    return scores


def _candidates(model: Model, q: Query) -> np.ndarray:
    if q.candidates is None:
        cand = np.arange(model.n_items)
        return cand[cand != q.current]
    cand = np.asarray(q.candidates, dtype=np.int64)
    if len(cand) == 0:
        raise ValueError("empty candidate set")
    return cand


def _candidate_scores(model: Model, q: Query):
    post = env_posterior_given_history(model, q)
    cand = _candidates(model, q)
    phi = model.phi
    known = (cand >= 0) & (cand < model.n_items)
    rows = phi[np.where(known, cand, 0)]
    if not known.all():
        # never-seen items get each environment's smoothing floor
        rows[~known] = model.phi_floor()
    scores = rows @ (post / (1.0 - phi[q.current]))
    scores[cand == q.current] = 0.0
    return cand, scores


def next_item_likelihood(model: Model, q: Query):
    """Normalised next-item distribution over the candidates.

    Returns
    -------
    (candidates, probabilities)
    """
    _check(model, q)
    cand, scores = _candidate_scores(model, q)
    total = scores.sum()
    if total <= 0:
        raise ValueError("candidates carry no probability mass")
    return cand, scores / total


def rank_candidates(model: Model, q: Query):
    """Candidates by descending score, ties by ascending item id.

    Returns
    -------
    (items, scores) arrays in rank order.
    """
    _check(model, q)
    cand, scores = _candidate_scores(model, q)
    order = np.lexsort((cand, -scores))
    return cand[order], scores[order]


def pairwise_matrix(model: Model) -> np.ndarray:
    """Non-personalised transition probabilities ``P[d | s]``.

    Row ``s`` is proportional to ``sum_M phi_M(d) phi_M(s) P[M]`` over
    ``d != s`` and sums to one.
    """
    phi = model.phi
    S = (phi * model.env_weights[None, :]) @ phi.T
    np.fill_diagonal(S, 0.0)
    return S / S.sum(axis=1, keepdims=True)


def pairwise_likelihood(model: Model, s: int, d: int) -> float:
    if s == d:
        return 0.0
    phi = model.phi
    row = (phi * model.env_weights[None, :]) @ phi[s]
    row[s] = 0.0
    return float(row[d] / row.sum())


def flow_estimate(model: Model, src: int, dst: int, total_outflow: float) -> float:
    """Expected number of ``src -> dst`` transitions out of ``total_outflow``."""
    if total_outflow < 0:
        raise ValueError("total_outflow must be >= 0")
    if total_outflow == 0:
        return 0.0
    return float(total_outflow * pairwise_likelihood(model, src, dst))


def flow_matrix(model: Model, outflows: Sequence[float]) -> np.ndarray:
    """Expected flows for every pair given each source's total outflow."""
    outflows = np.asarray(outflows, dtype=np.float64)
    if np.any(outflows < 0):
        raise ValueError("outflows must be >= 0")
    return pairwise_matrix(model) * outflows[:, None]
