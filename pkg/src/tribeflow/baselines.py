"""Comparison methods: gravity model, first-order Markov chain, popularity."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse

from .corpus import EventLog

__all__ = [
    "EARTH_RADIUS_KM",
    "haversine",
    "GeoTable",
    "GravityParams",
    "GravityFit",
    "transition_counts",
    "fit_gravity",
    "gravity_flow",
    "MarkovChainMLE",
    "mc_mle",
    "popularity_rank",
]

log = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0


def haversine(p1, p2) -> np.ndarray:
    """Great-circle distance in km between (lat, lon) points in degrees.

    Broadcasts over leading dimensions.

    >>> round(float(haversine((0.0, 0.0), (0.0, 90.0))), 1)
    10007.5
    """
    p1 = np.radians(np.asarray(p1, dtype=np.float64))
    p2 = np.radians(np.asarray(p2, dtype=np.float64))
    lat1, lon1 = p1[..., 0], p1[..., 1]
    lat2, lon2 = p2[..., 0], p2[..., 1]
    h = (np.sin((lat2 - lat1) / 2) ** 2
         + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2)
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


@dataclass(frozen=True)
class GeoTable:
    """Coordinates of items, keyed by item name."""

    names: tuple
    latlon: np.ndarray   # (n, 2) degrees

    def __post_init__(self):
        ll = self.latlon
        if ll.shape != (len(self.names), 2):
            raise ValueError("latlon must be (n, 2)")
        if np.any(~np.isfinite(ll)) or np.any(np.abs(ll[:, 0]) > 90) or np.any(np.abs(ll[:, 1]) > 180):
            raise ValueError("coordinates out of range")

    @classmethod
    def read(cls, path) -> "GeoTable":
        """Load ``item \\t lat \\t lon`` lines."""
        names, rows = [], []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise ValueError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
                try:
                    rows.append((float(parts[1]), float(parts[2])))
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: bad coordinate") from None
                names.append(parts[0])
        return cls(tuple(names), np.array(rows, dtype=np.float64).reshape(-1, 2))

    def aligned(self, item_ids) -> np.ndarray:
        """(len(item_ids), 2) coordinates; NaN rows for items not in the table."""
        index = {n: k for k, n in enumerate(self.names)}
        out = np.full((len(item_ids), 2), np.nan)
        for k, name in enumerate(item_ids):
            j = index.get(name)
            if j is not None:
                out[k] = self.latlon[j]
        return out


@dataclass(frozen=True)
class GravityParams:
    theta0: float
    theta1: float
    theta2: float
    theta3: float

    def as_array(self) -> np.ndarray:
        return np.array([self.theta0, self.theta1, self.theta2, self.theta3])


@dataclass
class GravityFit:
    params: GravityParams
    iterations: int
    converged: bool
    loglik: list          # Poisson log-likelihood after each iteration
    n_pairs: int
    excluded_zero_distance: int


def transition_counts(log_: EventLog, n_items: Optional[int] = None) -> sparse.csr_matrix:
    """Sparse (source, destination) counts of consecutive visits."""
    n = log_.n_items if n_items is None else n_items
    src, dst = [], []
    for seq in log_.items:
        seq = np.asarray(seq)
        ok = (seq[:-1] >= 0) & (seq[1:] >= 0)
        src.append(seq[:-1][ok])
        dst.append(seq[1:][ok])
    s = np.concatenate(src) if src else np.empty(0, dtype=np.int64)
    d = np.concatenate(dst) if dst else np.empty(0, dtype=np.int64)
    m = sparse.coo_matrix((np.ones(len(s), dtype=np.int64), (s, d)), shape=(n, n))
    return m.tocsr()


def _poisson_loglik(y, eta):
    return float(np.sum(y * eta - np.exp(eta)))


def fit_gravity(counts, latlon: np.ndarray, masses=None, include_zeros: bool = True,
                tol: float = 1e-8, max_iter: int = 100) -> GravityFit:
    """Poisson regression of pair counts on masses and distance.

    ``log mu = theta0 + theta1 log r_s + theta2 log n_d - theta3 log dist``,
    with ``r_s`` the source's total outflow and ``n_d`` the destination's
    total inflow in ``counts``. By default every ordered pair of distinct
    items with positive masses enters the fit, including pairs never
    observed (count zero); with ``include_zeros=False`` only pairs with a
    positive count do. Pairs at zero distance are dropped with a warning.
    Solved by iteratively reweighted least squares with step halving, so
    the log-likelihood never drops.

    Parameters
    ----------
    counts : (n, n) array or sparse matrix of transition counts
    latlon : (n, 2) item coordinates in degrees
    masses : (r, n) pair of (n,) arrays, optional
        Source and destination masses; default outflow and inflow of
        ``counts``.
    """
    C = sparse.csr_matrix(counts, dtype=np.float64)
    if masses is None:
        r = np.asarray(C.sum(axis=1)).ravel()
        m = np.asarray(C.sum(axis=0)).ravel()
    else:
        r, m = (np.asarray(x, dtype=np.float64) for x in masses)
    coo = C.tocoo()
    pos = (coo.row != coo.col) & (coo.data > 0)
    if int(pos.sum()) < 4:
        raise ValueError("need at least 4 observed pairs of distinct items")
    if include_zeros:
        src, dst = np.flatnonzero(r > 0), np.flatnonzero(m > 0)
        s = np.repeat(src, len(dst))
        d = np.tile(dst, len(src))
        keep = s != d
        s, d = s[keep], d[keep]
        y = np.asarray(C[s, d]).ravel()
    else:
        s, d, y = coo.row[pos], coo.col[pos], coo.data[pos]
    dist = haversine(latlon[s], latlon[d])
    if np.any(np.isnan(dist)):
        raise ValueError("missing coordinates for a fitted pair")
    zero = dist <= 0
    if zero.any():
        log.warning("excluding %d pairs with zero distance", int(zero.sum()))
        s, d, y, dist = s[~zero], d[~zero], y[~zero], dist[~zero]
    X = np.column_stack([np.ones(len(y)), np.log(r[s]), np.log(m[d]), -np.log(dist)])
    if np.linalg.matrix_rank(X) < 4:
        raise ValueError("gravity design matrix is rank deficient")

    beta, *_ = np.linalg.lstsq(X, np.log(y + 0.5), rcond=None)
    eta = X @ beta
    ll = _poisson_loglik(y, eta)
    history = [ll]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = np.exp(eta)
        z = eta + (y - mu) / mu
        XtW = X.T * mu
        try:
            target = np.linalg.solve(XtW @ X, XtW @ z)
        except np.linalg.LinAlgError:
            raise ValueError("gravity design matrix is singular") from None
        step = target - beta
        for _ in range(50):
            cand = beta + step
            eta_c = X @ cand
            ll_c = _poisson_loglik(y, eta_c)
            if np.isfinite(ll_c) and ll_c >= ll:
                break
            step = step / 2
        else:
            cand, eta_c, ll_c = beta, eta, ll
        change = float(np.max(np.abs(cand - beta)))
        beta, eta, ll = cand, eta_c, ll_c
        history.append(ll)
        if change < tol:
            converged = True
            break
    if not np.all(np.isfinite(beta)):
        raise ValueError("gravity fit diverged")
    return GravityFit(GravityParams(*map(float, beta)), it, converged, history, len(y),
                      int(zero.sum()))


def gravity_flow(params: GravityParams, r_s, n_d, dist) -> np.ndarray:
    """Expected flow ``exp(theta0) r_s^theta1 n_d^theta2 / dist^theta3``."""
    dist = np.asarray(dist, dtype=np.float64)
    if np.any(dist <= 0):
        raise ValueError("gravity flow undefined at zero distance")
    return (math.exp(params.theta0) * np.power(r_s, params.theta1)
            * np.power(n_d, params.theta2) / np.power(dist, params.theta3))


class MarkovChainMLE:
    """Smoothed first-order transition estimates ``(n_sd + eps) / (n_s + |items| eps)``."""

    def __init__(self, counts, eps: float = 1e-3):
        if not eps > 0:
            raise ValueError("eps must be positive")
        self.counts = sparse.csr_matrix(counts, dtype=np.float64)
        self.eps = float(eps)
        self.n_items = self.counts.shape[0]
        self.out = np.asarray(self.counts.sum(axis=1)).ravel()

    def row(self, s: int) -> np.ndarray:
        r = self.counts.getrow(s).toarray().ravel() + self.eps
        return r / (self.out[s] + self.n_items * self.eps)

    def prob(self, s: int, d: int) -> float:
        return float((self.counts[s, d] + self.eps) / (self.out[s] + self.n_items * self.eps))

    def rows(self, srcs) -> np.ndarray:
        srcs = np.asarray(srcs, dtype=np.int64)
        R = self.counts[srcs].toarray() + self.eps
        return R / (self.out[srcs] + self.n_items * self.eps)[:, None]


def mc_mle(train: EventLog, eps: float = 1e-3) -> MarkovChainMLE:
    return MarkovChainMLE(transition_counts(train), eps)


def popularity_rank(train: EventLog) -> np.ndarray:
    """Visited item ids by descending visit count, ties by ascending id."""
    counts = train.item_counts()
    ids = np.flatnonzero(counts > 0)
    return ids[np.lexsort((ids, -counts[ids]))]
