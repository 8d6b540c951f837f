"""Held-out evaluation: ranks, likelihoods, flows and rank-distribution tests."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np
from scipy import stats

from .baselines import (GravityParams, MarkovChainMLE, gravity_flow, haversine,
                        transition_counts)
from .corpus import EventLog
from .predict import env_posteriors, next_item_scores, pairwise_matrix
from .state import Model

__all__ = [
    "reciprocal_rank",
    "ranks_from_scores",
    "TestQueries",
    "build_queries",
    "Scorer",
    "TribeFlowScorer",
    "MarkovScorer",
    "PopularityScorer",
    "GravityScorer",
    "evaluate_ranking",
    "mrr",
    "precision_at",
    "pred_ll",
    "flow_mae",
    "ks_statistic",
    "test_flows",
    "model_flows",
    "gravity_flows",
    "EvalReport",
]

PRECISION_KS = (1, 5, 10)


def reciprocal_rank(scores, true_index: Optional[int]) -> float:
    """``1 / rank`` of the true candidate, counting ties against it.

    ``scores`` holds one score per candidate; ``true_index`` is the true
    destination's position among them, or None when it is not a
    candidate (the contribution is then 0).

    >>> reciprocal_rank([0.4, 0.5, 0.1], 0)
    0.5
    """
    if true_index is None:
        return 0.0
    scores = np.asarray(scores, dtype=np.float64)
    return 1.0 / int(np.sum(scores >= scores[true_index]))


def ranks_from_scores(scores: np.ndarray, true: np.ndarray, exclude: np.ndarray) -> np.ndarray:
    """Pessimistic 1-based ranks of ``true`` per row; 0 marks an absent target.

    Column ``exclude[q]`` (the current item) is not a candidate.
    """
    Q = scores.shape[0]
    rows = np.arange(Q)
    S = scores.astype(np.float64, copy=True)
    S[rows, exclude] = -np.inf
    absent = (true < 0) | (true == exclude)
    t = np.where(absent, 0, true)
    target = S[rows, t]
    ranks = np.sum(S >= target[:, None], axis=1)
    ranks[absent] = 0
    return ranks


@dataclass
class TestQueries:
    """Next-item queries cut from a held-out log.

    ``hist`` rows hold up to ``B + 1`` items ending with the current one,
    left-padded with -1; ``taus`` aligns with the gaps between them (NaN
    where missing).
    """

    __test__ = False   # not a pytest class despite the name

    users: np.ndarray
    hist: np.ndarray
    hlen: np.ndarray
    taus: Optional[np.ndarray]
    true: np.ndarray
    skipped_unseen: int = 0

    def __len__(self) -> int:
        return int(len(self.users))

    @property
    def current(self) -> np.ndarray:
        return self.hist[:, -1]


def build_queries(test: EventLog, B: int = 1) -> TestQueries:
    """One query per test transition.

    ``test`` must already use the training dictionaries (unknown items as
    -1). Queries whose history holds an unknown item are skipped and
    counted; an unknown destination stays and can never be ranked.
    """
    users, hists, hlens, taus, trues = [], [], [], [], []
    skipped = 0
    H = B + 1
    with_t = test.has_timestamps
    for u, seq in enumerate(test.items):
        seq = np.asarray(seq)
        ts = test.times[u] if with_t else None
        for k in range(len(seq) - 1):
            lo = max(0, k - B)
            h = seq[lo:k + 1]
            if np.any(h < 0):
                skipped += 1
                continue
            row = np.full(H, -1, dtype=np.int64)
            row[H - len(h):] = h
            users.append(u)
            hists.append(row)
            hlens.append(len(h))
            trues.append(seq[k + 1])
            if with_t:
                g = np.full(B, np.nan)
                if len(h) > 1:
                    g[B - (len(h) - 1):] = np.diff(ts[lo:k + 1])
                taus.append(g)
    return TestQueries(np.asarray(users, dtype=np.int64),
                       np.asarray(hists, dtype=np.int64).reshape(-1, H),
                       np.asarray(hlens, dtype=np.int64),
                       np.asarray(taus, dtype=np.float64).reshape(-1, B) if with_t else None,
                       np.asarray(trues, dtype=np.int64), skipped)


class Scorer(Protocol):
    name: str

    def scores(self, q: TestQueries, idx: np.ndarray) -> np.ndarray:
        """(len(idx), n_items) scores for the selected queries."""


class TribeFlowScorer:
    """Posterior-weighted no-revisit transition scores."""

    name = "tribeflow"

    def __init__(self, model: Model, personalized: bool = True, use_taus: bool = True):
        self.model = model
        self.personalized = personalized
        self.use_taus = use_taus

    def scores(self, q: TestQueries, idx: np.ndarray) -> np.ndarray:
        m = self.model
        out = np.empty((len(idx), m.n_items))
        users = q.users[idx] if self.personalized else np.full(len(idx), -1)
        for h in np.unique(q.hlen[idx]):
            sel = np.flatnonzero(q.hlen[idx] == h)
            rows = idx[sel]
            hist = q.hist[rows, -h:]
            taus = None
            if self.use_taus and q.taus is not None and h > 1:
                taus = q.taus[rows, -(h - 1):]
            post = env_posteriors(m, users[sel], hist, taus)
            out[sel] = next_item_scores(m, post, hist[:, -1])
        return out


class MarkovScorer:
    name = "mcmle"

    def __init__(self, chain: MarkovChainMLE):
        self.chain = chain

    def scores(self, q: TestQueries, idx: np.ndarray) -> np.ndarray:
        return self.chain.rows(q.current[idx])


class PopularityScorer:
    name = "popularity"

    def __init__(self, counts: np.ndarray):
        self.counts = np.asarray(counts, dtype=np.float64)

    def scores(self, q: TestQueries, idx: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.counts, (len(idx), len(self.counts)))


class GravityScorer:
    """Ranks destinations by gravity flow out of the current item."""

    name = "gravity"

    def __init__(self, params: GravityParams, r: np.ndarray, n: np.ndarray, latlon: np.ndarray):
        self.params = params
        self.r = np.asarray(r, dtype=np.float64)
        self.n = np.asarray(n, dtype=np.float64)
        self.latlon = latlon

    def scores(self, q: TestQueries, idx: np.ndarray) -> np.ndarray:
        cur = q.current[idx]
        dist = haversine(self.latlon[cur][:, None, :], self.latlon[None, :, :])
        ok = (dist > 0) & np.isfinite(dist)
        out = np.zeros(dist.shape)
        rs = np.broadcast_to(self.r[cur][:, None], dist.shape)
        nd = np.broadcast_to(self.n[None, :], dist.shape)
        out[ok] = gravity_flow(self.params, rs[ok], nd[ok], dist[ok])
        return out


def evaluate_ranking(scorer, q: TestQueries, batch: int = 2048) -> np.ndarray:
    """Pessimistic ranks of every query's true destination (0 = absent)."""
    ranks = np.empty(len(q), dtype=np.int64)
    for lo in range(0, len(q), batch):
        idx = np.arange(lo, min(lo + batch, len(q)))
        S = np.asarray(scorer.scores(q, idx))
        ranks[idx] = ranks_from_scores(S, q.true[idx], q.current[idx])
    return ranks


def _rr(ranks: np.ndarray) -> np.ndarray:
    ranks = np.asarray(ranks)
    rr = np.zeros(len(ranks))
    ok = ranks > 0
    rr[ok] = 1.0 / ranks[ok]
    return rr


def mrr(ranks: np.ndarray) -> float:
    if len(ranks) == 0:
        raise ValueError("no queries")
    return float(_rr(ranks).mean())


def precision_at(ranks: np.ndarray, k: int) -> float:
    """Fraction of queries whose destination is in the top ``k``."""
    ranks = np.asarray(ranks)
    return float(np.mean((ranks > 0) & (ranks <= k)))


def pred_ll(probs) -> tuple:
    """Total and mean log probability of realised transitions."""
    probs = np.asarray(probs, dtype=np.float64)
    if len(probs) == 0:
        raise ValueError("no transitions")
    with np.errstate(divide="ignore"):
        logs = np.log(probs)
    total = float(logs.sum())
    return total, total / len(probs)


def flow_mae(estimates, observed) -> float:
    """Mean absolute error over the observed pairs (aligned arrays)."""
    estimates = np.asarray(estimates, dtype=np.float64)
    observed = np.asarray(observed, dtype=np.float64)
    if estimates.shape != observed.shape:
        raise ValueError("estimates and observations are not aligned")
    if observed.size == 0:
        raise ValueError("empty flow support")
    return float(np.mean(np.abs(estimates - observed)))


def ks_statistic(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov distance between empirical CDFs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be non-empty")
    return float(stats.ks_2samp(a, b).statistic)


def test_flows(train: EventLog, test: EventLog):
    """Observed test pairs and the train-derived quantities to predict them.

    Returns
    -------
    dict with ``src``, ``dst``, ``observed`` (test counts per pair, known
    items only, no self pairs), ``train_counts`` (sparse), ``scale`` (test
    over train transition volume).
    """
    n = train.n_items
    C_tr = transition_counts(train, n)
    C_te = transition_counts(test, n).tocoo()
    keep = C_te.row != C_te.col
    n_train = float(C_tr.sum())
    if n_train == 0:
        raise ValueError("training log has no transitions")
    return {
        "src": C_te.row[keep],
        "dst": C_te.col[keep],
        "observed": C_te.data[keep].astype(np.float64),
        "train_counts": C_tr,
        "scale": float(C_te.sum()) / n_train,
    }


test_flows.__test__ = False


def model_flows(model: Model, flows: dict) -> np.ndarray:
    """Model flow estimates on the observed test pairs."""
    out = np.asarray(flows["train_counts"].sum(axis=1)).ravel() * flows["scale"]
    P = pairwise_matrix(model)
    return out[flows["src"]] * P[flows["src"], flows["dst"]]


def gravity_flows(params: GravityParams, flows: dict, latlon: np.ndarray) -> np.ndarray:
    C = flows["train_counts"]
    r = np.asarray(C.sum(axis=1)).ravel()
    m = np.asarray(C.sum(axis=0)).ravel()
    s, d = flows["src"], flows["dst"]
    dist = haversine(latlon[s], latlon[d])
    out = np.zeros(len(s))
    ok = (dist > 0) & (r[s] > 0) & (m[d] > 0)
    out[ok] = gravity_flow(params, r[s][ok], m[d][ok], dist[ok]) * flows["scale"]
    return out


@dataclass
class EvalReport:
    method: str
    ranks: np.ndarray
    predll: Optional[float] = None
    predll_mean: Optional[float] = None
    flow_mae: Optional[float] = None
    ks_statistic: Optional[float] = None
    skipped_unseen: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def rr(self) -> np.ndarray:
        return _rr(self.ranks)

    @property
    def mrr(self) -> float:
        return mrr(self.ranks)

    @property
    def n_queries(self) -> int:
        return int(len(self.ranks))

    @property
    def absent(self) -> int:
        return int(np.sum(self.ranks == 0))

    def metrics(self) -> dict:
        out = {"mrr": self.mrr}
        for k in PRECISION_KS:
            out[f"precision@{k}"] = precision_at(self.ranks, k)
        for key in ("predll", "predll_mean", "flow_mae", "ks_statistic"):
            val = getattr(self, key)
            if val is not None:
                out[key] = val
        out.update(self.extra)
        out["n_queries"] = self.n_queries
        out["absent"] = self.absent
        out["skipped_unseen"] = self.skipped_unseen
        return out

    def kv(self, keys=None) -> str:
        """``method.key=value`` lines, in a fixed key order."""
        lines = []
        for k, v in self.metrics().items():
            if keys and k not in keys:
                continue
            lines.append(f"{self.method}.{k}={_fmt(v)}")
        return "\n".join(lines)

    def table(self, keys=None) -> str:
        rows = [(k, _fmt(v)) for k, v in self.metrics().items() if not keys or k in keys]
        width = max(len(k) for k, _ in rows)
        head = f"{self.method}\n" + "-" * max(len(self.method), width + 14)
        return head + "\n" + "\n".join(f"{k:<{width}}  {v:>12}" for k, v in rows)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "nan"
    return f"{float(v):.6f}"
