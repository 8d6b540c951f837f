"""Per-environment empirical CCDF of inter-event times.

Each environment keeps the sorted multiset of inter-event times of the
windows assigned to it at the last rebuild. The predictive probability of a
gap ``tau`` under environment ``M`` is ``(b + 1) / (n_M + K)`` where ``b``
counts stored gaps at least as long as ``tau``.

Counting ties into ``b`` matters when many gaps are equal (timestamps
rounded to the second, say): with a strict count the most common value
would look like the least likely one, and an environment holding only
tied gaps would score every one of them at ``1 / (n_M + K)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels

__all__ = ["EccdfTable", "rebuild", "build_table", "tail_count", "tau_likelihood",
           "log_tau_likelihood"]


@dataclass(frozen=True)
class EccdfTable:
    """Sorted gaps of all environments packed into one array.

    ``values[offsets[M]:offsets[M + 1]]`` is environment ``M``'s table.
    """

    values: np.ndarray
    offsets: np.ndarray

    @property
    def K(self) -> int:
        return len(self.offsets) - 1

    def env(self, M: int) -> np.ndarray:
        return self.values[self.offsets[M]:self.offsets[M + 1]]

    def sizes(self) -> np.ndarray:
        return np.diff(self.offsets)

    def tables(self) -> list:
        return [self.env(M) for M in range(self.K)]

    @classmethod
    def empty(cls, K: int) -> "EccdfTable":
        return cls(np.empty(0), np.zeros(K + 1, dtype=np.int64))

    @classmethod
    def from_tables(cls, tables) -> "EccdfTable":
        sizes = np.array([len(t) for t in tables], dtype=np.int64)
        offsets = np.zeros(len(tables) + 1, dtype=np.int64)
        np.cumsum(sizes, out=offsets[1:])
        values = (np.concatenate([np.asarray(t, dtype=np.float64) for t in tables])
                  if len(tables) else np.empty(0))
        return cls(values, offsets)

    def __eq__(self, other):
        if not isinstance(other, EccdfTable):
            return NotImplemented
        return (np.array_equal(self.offsets, other.offsets)
                and np.array_equal(self.values, other.values))


def build_table(env_labels: np.ndarray, taus: np.ndarray, K: int) -> EccdfTable:
    """Group gaps by environment and sort each group.

    ``env_labels`` has one label per row of ``taus``; every gap in the row
    goes to that label. Rows labelled -1 are skipped.
    """
    B = taus.shape[1] if taus.ndim == 2 else 1
    if taus.size == 0:
        return EccdfTable.empty(K)
    labels = np.repeat(np.asarray(env_labels, dtype=np.int64), B)
    flat = taus.reshape(-1)
    if np.any(labels < 0):
        # unassigned windows contribute nothing
        flat, labels = flat[labels >= 0], labels[labels >= 0]
    order = np.lexsort((flat, labels))
    sizes = np.bincount(labels, minlength=K).astype(np.int64)
    offsets = np.zeros(K + 1, dtype=np.int64)
    np.cumsum(sizes, out=offsets[1:])
    return EccdfTable(np.ascontiguousarray(flat[order]), offsets)


def rebuild(state) -> EccdfTable:
    """Tables reflecting ``state``'s current assignment."""
    return build_table(state.assignments, state.windows.taus, state.K)


def apply_tau_delta(table: EccdfTable, ins_env, ins_val, rm_env, rm_val) -> EccdfTable:
    """Insert and remove individual gaps, returning a new table."""
    K = table.K
    ins_env = np.asarray(ins_env, dtype=np.int64)
    rm_env = np.asarray(rm_env, dtype=np.int64)
    ins_val = np.asarray(ins_val, dtype=np.float64)
    rm_val = np.asarray(rm_val, dtype=np.float64)
    if len(ins_env) == 0 and len(rm_env) == 0:
        return table
    io = np.lexsort((ins_val, ins_env))
    ins_env, ins_val = ins_env[io], ins_val[io]
    ro = np.lexsort((rm_val, rm_env))
    rm_env, rm_val = rm_env[ro], rm_val[ro]
    ins_off = np.searchsorted(ins_env, np.arange(K + 1))
    rm_off = np.searchsorted(rm_env, np.arange(K + 1))
    tables = []
    for M in range(K):
        base = table.env(M)
        add = ins_val[ins_off[M]:ins_off[M + 1]]
        rem = rm_val[rm_off[M]:rm_off[M + 1]]
        merged = np.sort(np.concatenate((base, add)), kind="stable") if len(add) else base
        if len(rem):
            keep, missing = _kernels.multiset_remove(merged, rem)
            if missing:
                raise ValueError(f"environment {M}: {missing} gaps removed that were never stored")
            merged = merged[keep]
        tables.append(merged)
    return EccdfTable.from_tables(tables)


def tail_count(table: EccdfTable, M: int, tau: float, inclusive: bool = False) -> int:
    """Number of stored gaps of environment ``M`` greater than ``tau``.

    With ``inclusive`` gaps equal to ``tau`` are counted too; this is the
    count the likelihood uses.
    """
    vals = table.env(M)
    side = "left" if inclusive else "right"
    return int(len(vals) - np.searchsorted(vals, tau, side=side))


def tau_likelihood(table: EccdfTable, M: int, tau: float, K: int) -> float:
    """Predictive probability ``(b + 1) / (n_M + K)`` of one gap under ``M``.

    Examples
    --------
    >>> t = EccdfTable.from_tables([np.array([1.0, 2.0, 2.0, 5.0])])
    >>> tau_likelihood(t, 0, 2.0, K=1)
    0.8
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    n = table.offsets[M + 1] - table.offsets[M]
    return float((tail_count(table, M, tau, inclusive=True) + 1.0) / (n + K))


def log_tau_likelihood(table: EccdfTable, M: int, taus, K: int) -> float:
    """Sum of log gap likelihoods of several gaps under ``M``."""
    if K < 1:
        raise ValueError("K must be >= 1")
    vals = table.env(M)
    taus = np.asarray(taus, dtype=np.float64)
    b = len(vals) - np.searchsorted(vals, taus, side="left")
    return float(np.sum(np.log((b + 1.0) / (len(vals) + K))))
