"""Sampler sufficient statistics and point estimates.

Counts follow the collapsed-Gibbs convention:

``e[M, u]``  windows of user ``u`` assigned to environment ``M``
``c[i, M]``  item slots holding item ``i`` in windows assigned to ``M``
``a[M]``     windows assigned to ``M``
``n[u]``     windows of user ``u``

``c`` is stored items-major so the per-window scan over environments reads
contiguous memory.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .windows import WindowSet

__all__ = [
    "InvariantError",
    "Hyperparams",
    "ModelState",
    "Model",
    "pi_estimate",
    "phi_estimate",
    "transition_prob",
    "transition_matrix",
]

ALPHA_SCALE = 50.0
BETA = 0.001


class InvariantError(RuntimeError):
    """Count bookkeeping went inconsistent."""


@dataclass(frozen=True)
class Hyperparams:
    alpha: float
    beta: float
    zeta: np.ndarray
    B: int
    K_init: int

    def __post_init__(self):
        if not self.alpha > 0 or not self.beta > 0:
            raise ValueError("alpha and beta must be positive")
        if np.any(np.asarray(self.zeta) <= 0):
            raise ValueError("zeta components must be positive")

    @classmethod
    def default(cls, K: int, B: int = 1, beta: float = BETA) -> "Hyperparams":
        return cls(ALPHA_SCALE / K, beta, np.ones(K), B, K)

    def for_K(self, K: int) -> "Hyperparams":
        """Same priors rescaled for ``K`` environments (alpha = 50 / K)."""
        return replace(self, alpha=ALPHA_SCALE / K, zeta=np.ones(K))

    @property
    def alpha_zeta(self) -> np.ndarray:
        return self.alpha * np.asarray(self.zeta, dtype=np.float64)


@dataclass
class ModelState:
    windows: WindowSet
    hyper: Hyperparams
    e: np.ndarray
    c: np.ndarray
    a: np.ndarray
    n: np.ndarray
    assignments: np.ndarray

    @property
    def K(self) -> int:
        return int(self.e.shape[0])

    @property
    def B(self) -> int:
        return self.windows.B

    @property
    def n_items(self) -> int:
        return int(self.c.shape[0])

    @classmethod
    def empty(cls, windows: WindowSet, hyper: Hyperparams, K: Optional[int] = None):
        K = hyper.K_init if K is None else K
        return cls(windows, hyper,
                   np.zeros((K, windows.n_users), dtype=np.int64),
                   np.zeros((windows.n_items, K), dtype=np.int64),
                   np.zeros(K, dtype=np.int64),
                   np.zeros(windows.n_users, dtype=np.int64),
                   np.full(len(windows), -1, dtype=np.int64))

    @classmethod
    def from_assignments(cls, windows: WindowSet, hyper: Hyperparams, z: np.ndarray,
                         K: Optional[int] = None) -> "ModelState":
        """Build counts from scratch for the labels ``z``."""
        z = np.asarray(z, dtype=np.int64)
        K = int(hyper.K_init if K is None else K)
        st = cls.empty(windows, hyper, K)
        st.assignments = z.copy()
        if len(z):
            np.add.at(st.e, (z, windows.users), 1)
            np.add.at(st.a, z, 1)
            np.add.at(st.n, windows.users, 1)
            np.add.at(st.c, (windows.items, np.repeat(z[:, None], windows.B + 1, axis=1)), 1)
        return st

    @classmethod
    def initialize(cls, windows: WindowSet, hyper: Hyperparams, rng: np.random.Generator):
        """Assign every window uniformly at random among ``K_init`` environments."""
        z = rng.integers(0, hyper.K_init, size=len(windows))
        return cls.from_assignments(windows, hyper, z, hyper.K_init)

    def copy(self) -> "ModelState":
        return ModelState(self.windows, self.hyper, self.e.copy(), self.c.copy(),
                          self.a.copy(), self.n.copy(), self.assignments.copy())

    # -- bookkeeping -------------------------------------------------------

    def assign(self, w: int, env: int) -> None:
        if self.assignments[w] != -1:
            raise InvariantError(f"window {w} is already assigned")
        if not 0 <= env < self.K:
            raise IndexError(f"environment {env} out of range")
        u = self.windows.users[w]
        self.e[env, u] += 1
        self.n[u] += 1
        self.a[env] += 1
        np.add.at(self.c[:, env], self.windows.items[w], 1)
        self.assignments[w] = env

    def unassign(self, w: int) -> int:
        env = int(self.assignments[w])
        if env < 0:
            raise InvariantError(f"window {w} is not assigned")
        u = self.windows.users[w]
        items = self.windows.items[w]
        col = self.c[:, env].copy()
        np.subtract.at(col, items, 1)
        if self.e[env, u] < 1 or self.n[u] < 1 or self.a[env] < 1 or np.any(col[items] < 0):
            raise InvariantError(f"count underflow unassigning window {w}")
        self.e[env, u] -= 1
        self.n[u] -= 1
        self.a[env] -= 1
        self.c[:, env] = col
        self.assignments[w] = -1
        return env

    def residence(self, M: int) -> np.ndarray:
        """Sorted gaps of the windows currently assigned to ``M``."""
        return np.sort(self.windows.taus[self.assignments == M].reshape(-1))

    def check(self) -> None:
        """Raise :class:`InvariantError` unless the count identities hold."""
        if np.any(self.e < 0) or np.any(self.c < 0) or np.any(self.a < 0) or np.any(self.n < 0):
            raise InvariantError("negative count")
        if not np.array_equal(self.e.sum(axis=1), self.a):
            raise InvariantError("sum_u e[M,u] != a[M]")
        if not np.array_equal(self.c.sum(axis=0), (self.B + 1) * self.a):
            raise InvariantError("sum_i c[i,M] != (B+1) a[M]")
        if not np.array_equal(self.e.sum(axis=0), self.n):
            raise InvariantError("sum_M e[M,u] != n[u]")

    def matches_assignments(self) -> bool:
        """Brute-force recount from labels; True when every matrix agrees."""
        ref = ModelState.from_assignments(self.windows, self.hyper, self.assignments, self.K)
        return (np.array_equal(ref.e, self.e) and np.array_equal(ref.c, self.c)
                and np.array_equal(ref.a, self.a) and np.array_equal(ref.n, self.n))

    # -- estimates -----------------------------------------------------------

    def pi(self) -> np.ndarray:
        az = self.hyper.alpha_zeta[:, None]
        return (self.e + az) / (self.n[None, :] + self.K * az)

    def phi(self) -> np.ndarray:
        denom = (self.B + 1) * self.a + self.n_items * self.hyper.beta
        return (self.c + self.hyper.beta) / denom[None, :]

    def env_weights(self) -> np.ndarray:
        tot = self.a.sum()
        if tot == 0:
            return np.full(self.K, 1.0 / self.K)
        return self.a / tot

    def freeze(self, eccdf, user_ids=None, item_ids=None, nt_mode: bool = False) -> "Model":
        from .residence import rebuild
        if eccdf is None:
            eccdf = rebuild(self)
        return Model(pi=self.pi(), phi=self.phi(), env_weights=self.env_weights(),
                     user_counts=self.n.copy(), eccdf=eccdf, hyper=self.hyper,
                     user_ids=tuple(user_ids) if user_ids is not None else None,
                     item_ids=tuple(item_ids) if item_ids is not None else None,
                     nt_mode=nt_mode)


def pi_estimate(state: ModelState, M: int, u: int) -> float:
    az = state.hyper.alpha_zeta[M]
    return float((state.e[M, u] + az) / (state.n[u] + state.K * az))


def phi_estimate(state: ModelState, M: int, i: int) -> float:
    denom = (state.B + 1) * state.a[M] + state.n_items * state.hyper.beta
    return float((state.c[i, M] + state.hyper.beta) / denom)


def transition_prob(phi_col: np.ndarray, s: int, d: int) -> float:
    """Probability of stepping from ``s`` to ``d`` in the no-revisit walk.

    ``phi_col`` is one environment's item distribution. The denominator is
    the mass of every item other than ``s`` (``1 - phi[s]`` for a normalised
    column), summed directly to avoid cancellation when ``phi[s]`` is near 1.
    """
    if s == d:
        return 0.0
    phi_col = np.asarray(phi_col, dtype=np.float64)
    other = float(phi_col[:s].sum() + phi_col[s + 1:].sum())
    if other <= 0.0:
        raise ValueError(f"phi[{s}] leaves no mass for other items")
    return float(phi_col[d] / other)


def transition_matrix(phi_col: np.ndarray) -> np.ndarray:
    """Dense transition matrix of one environment, zero diagonal."""
    phi_col = np.asarray(phi_col, dtype=np.float64)
    P = np.broadcast_to(phi_col, (len(phi_col), len(phi_col))).copy()
    np.fill_diagonal(P, 0.0)
    other = P.sum(axis=1, keepdims=True)
    if np.any(other <= 0.0):
        raise ValueError("some item leaves no mass for other items")
    return P / other


@dataclass
class Model:
    """Frozen posterior estimates used for prediction.

    pi : (K, n_users)      user preference over environments
    phi : (n_items, K)     item distribution of each environment
    env_weights : (K,)     P[M], proportional to windows assigned
    user_counts : (n_users,) training windows per user; zero marks an
                           unseen user
    """

    pi: np.ndarray
    phi: np.ndarray
    env_weights: np.ndarray
    user_counts: np.ndarray
    eccdf: object
    hyper: Hyperparams
    user_ids: Optional[tuple] = None
    item_ids: Optional[tuple] = None
    nt_mode: bool = False
    _uindex: dict = field(default=None, repr=False, compare=False)
    _iindex: dict = field(default=None, repr=False, compare=False)

    @property
    def K(self) -> int:
        return int(self.phi.shape[1])

    @property
    def n_items(self) -> int:
        return int(self.phi.shape[0])

    @property
    def n_users(self) -> int:
        return int(self.pi.shape[1])

    @property
    def B(self) -> int:
        return self.hyper.B

    def phi_floor(self) -> np.ndarray:
        """Per-environment probability of an item with zero count."""
        windows = self.env_weights * float(self.user_counts.sum())
        return self.hyper.beta / ((self.B + 1) * windows + self.n_items * self.hyper.beta)

    def user_index(self, name) -> int:
        """Dense id of a user string, -1 when unknown."""
        if self._uindex is None:
            self._uindex = {s: k for k, s in enumerate(self.user_ids or ())}
        return self._uindex.get(name, -1)

    def item_index(self, name) -> int:
        if self._iindex is None:
            self._iindex = {s: k for k, s in enumerate(self.item_ids or ())}
        return self._iindex.get(name, -1)
