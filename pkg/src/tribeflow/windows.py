"""Sliding-window training tuples."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .corpus import EventLog

__all__ = ["Window", "WindowSet", "build_windows"]


class Window(NamedTuple):
    user: int
    items: tuple
    taus: tuple


@dataclass(frozen=True)
class WindowSet:
    """Flat arrays of all windows.

    Attributes
    ----------
    users : (N,) int64
    items : (N, B+1) int64
    taus : (N, B) float64, or (N, 0) for timestampless corpora
    B : int
    n_users, n_items : int
        Sizes of the dictionaries the ids refer to.
    user_counts : (n_users,) int64
        Windows per user; windows are stored grouped by user, in user order.
    """

    users: np.ndarray
    items: np.ndarray
    taus: np.ndarray
    B: int
    n_users: int
    n_items: int
    user_counts: np.ndarray

    def __len__(self) -> int:
        return int(self.users.shape[0])

    def __getitem__(self, k: int) -> Window:
        return Window(int(self.users[k]), tuple(int(i) for i in self.items[k]),
                      tuple(float(t) for t in self.taus[k]))

    @property
    def has_taus(self) -> bool:
        return self.taus.shape[1] > 0

    @property
    def user_offsets(self) -> np.ndarray:
        off = np.zeros(self.n_users + 1, dtype=np.int64)
        np.cumsum(self.user_counts, out=off[1:])
        return off

    def subset(self, lo: int, hi: int) -> "WindowSet":
        """Windows ``lo:hi`` as views; user dictionary is unchanged."""
        users = self.users[lo:hi]
        counts = np.bincount(users, minlength=self.n_users).astype(np.int64)
        return WindowSet(users, self.items[lo:hi], self.taus[lo:hi], self.B,
                         self.n_users, self.n_items, counts)

    def without_taus(self) -> "WindowSet":
        return WindowSet(self.users, self.items, np.empty((len(self), 0)), self.B,
                         self.n_users, self.n_items, self.user_counts)


def build_windows(log: EventLog, B: int = 1, use_timestamps: bool = True) -> WindowSet:
    """Cut every user's sequence into overlapping (B+1)-item windows.

    A user with ``m`` events contributes ``max(0, m - B)`` windows, one per
    start offset. Inter-event times are kept only when the log has
    timestamps and ``use_timestamps`` is set.
    """
    if B < 1:
        raise ValueError(f"B must be >= 1, got {B}")
    keep_taus = log.has_timestamps and use_timestamps
    users, items, taus = [], [], []
    counts = np.zeros(log.n_users, dtype=np.int64)
    for u, seq in enumerate(log.items):
        m = len(seq)
        if m < B + 1:
            continue
        nw = m - B
        idx = np.arange(nw)[:, None] + np.arange(B + 1)[None, :]
        items.append(seq[idx])
        users.append(np.full(nw, u, dtype=np.int64))
        if keep_taus:
            gaps = np.diff(log.times[u])
            taus.append(gaps[idx[:, :B]])
        counts[u] = nw
    if users:
        users_a = np.concatenate(users)
        items_a = np.ascontiguousarray(np.concatenate(items), dtype=np.int64)
        taus_a = (np.ascontiguousarray(np.concatenate(taus), dtype=np.float64)
                  if keep_taus else np.empty((len(users_a), 0)))
    else:
        users_a = np.empty(0, dtype=np.int64)
        items_a = np.empty((0, B + 1), dtype=np.int64)
        taus_a = np.empty((0, B if keep_taus else 0))
    return WindowSet(users_a, items_a, taus_a, B, log.n_users, log.n_items, counts)
