"""Trajectory event logs: parsing, revisit removal and temporal splitting.

Input is tab separated, one event per line::

    user <TAB> timestamp <TAB> item

or ``user <TAB> item`` for corpora without timestamps. User and item
strings are mapped to dense integer ids in order of first appearance.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence, TextIO, Union

import numpy as np

__all__ = [
    "CorpusError",
    "Event",
    "EventLog",
    "parse_events",
    "read_events",
    "serialize",
    "dedup_revisits",
    "temporal_split",
]


class CorpusError(ValueError):
    """Raised for malformed trajectory input."""


class Event(NamedTuple):
    user: str
    item: str
    timestamp: Optional[float] = None


@dataclass(frozen=True)
class EventLog:
    """Per-user, time-ordered item sequences.

    ``items[u]`` holds the dense item ids visited by dense user ``u`` and
    ``times[u]`` the matching timestamps (``None`` when the corpus has no
    timestamps). ``user_ids`` and ``item_ids`` map dense ids back to the
    original strings.
    """

    user_ids: tuple
    item_ids: tuple
    items: tuple
    times: Optional[tuple]

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def has_timestamps(self) -> bool:
        return self.times is not None

    @property
    def n_events(self) -> int:
        return int(sum(len(s) for s in self.items))

    @property
    def n_transitions(self) -> int:
        return int(sum(max(len(s) - 1, 0) for s in self.items))

    def events(self) -> Iterable[Event]:
        for u, seq in enumerate(self.items):
            ts = self.times[u] if self.times is not None else None
            for k, i in enumerate(seq):
                t = float(ts[k]) if ts is not None else None
                yield Event(self.user_ids[u], self.item_ids[i], t)

    def transitions(self):
        """Yield ``(user, src, dst, t_src, t_dst)`` tuples in user order."""
        for u, seq in enumerate(self.items):
            ts = self.times[u] if self.times is not None else None
            for k in range(len(seq) - 1):
                t0 = float(ts[k]) if ts is not None else None
                t1 = float(ts[k + 1]) if ts is not None else None
                yield u, int(seq[k]), int(seq[k + 1]), t0, t1

    def item_counts(self) -> np.ndarray:
        counts = np.zeros(self.n_items, dtype=np.int64)
        for seq in self.items:
            seq = np.asarray(seq)
            np.add.at(counts, seq[seq >= 0], 1)
        return counts

    def remap(self, user_ids: Sequence[str], item_ids: Sequence[str]) -> "EventLog":
        """Re-express this log in another dictionary.

        Users missing from ``user_ids`` are appended to the user dictionary.
        Items missing from ``item_ids`` get id ``-1``.
        """
        uindex = {s: k for k, s in enumerate(user_ids)}
        iindex = {s: k for k, s in enumerate(item_ids)}
        users = list(user_ids)
        seqs = [np.empty(0, dtype=np.int64) for _ in users]
        times = [np.empty(0) for _ in users] if self.times is not None else None
        for u, name in enumerate(self.user_ids):
            if name not in uindex:
                uindex[name] = len(users)
                users.append(name)
                seqs.append(None)
                if times is not None:
                    times.append(None)
            v = uindex[name]
            seqs[v] = np.array([iindex.get(self.item_ids[i], -1) for i in self.items[u]],
                               dtype=np.int64)
            if times is not None:
                times[v] = self.times[u]
        return EventLog(tuple(users), tuple(item_ids), tuple(seqs),
                        tuple(times) if times is not None else None)


def _looks_like_header(fields: list, timestamps: bool) -> bool:
    if fields[0].lower() != "user":
        return False
    if not timestamps:
        return True
    try:
        float(fields[1])
    except ValueError:
        return True
    return False


def _sniff(lines: list) -> bool:
    for line in lines:
        if line.strip():
            return len(line.rstrip("\r\n").split("\t")) >= 3
    return True


def parse_events(stream: Union[TextIO, bytes, str], timestamps: Optional[bool] = True) -> EventLog:
    """Parse a TSV trajectory stream into an :class:`EventLog`.

    Parameters
    ----------
    stream : file-like, bytes or str
        Lines of ``user\\ttimestamp\\titem`` (or ``user\\titem`` when
        ``timestamps`` is False). Blank lines are skipped; a leading header
        whose first column is ``user`` is skipped.
    timestamps : bool or None
        Whether the middle column is present; None decides from the
        field count of the first non-blank line.

    Returns
    -------
    EventLog
        Events grouped by user and stably sorted by timestamp (input order
        is kept for ties and for timestampless corpora).
    """
    if isinstance(stream, bytes):
        stream = io.StringIO(stream.decode("utf-8"))
    elif isinstance(stream, str):
        stream = io.StringIO(stream)
    if timestamps is None:
        lines = stream.readlines()
        timestamps = _sniff(lines)
        stream = lines

    ncols = 3 if timestamps else 2
    uindex: dict = {}
    iindex: dict = {}
    per_user_items: list = []
    per_user_times: list = []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        fields = line.split("\t")
        if lineno == 1 and len(fields) == ncols and _looks_like_header(fields, timestamps):
            continue
        if len(fields) != ncols:
            raise CorpusError(f"line {lineno}: expected {ncols} tab-separated fields, "
                              f"got {len(fields)}")
        user, item = fields[0].strip(), fields[-1].strip()
        if not user or not item:
            raise CorpusError(f"line {lineno}: empty user or item")
        if timestamps:
            try:
                t = float(fields[1])
            except ValueError:
                raise CorpusError(f"line {lineno}: bad timestamp {fields[1]!r}") from None
            if not math.isfinite(t) or t < 0:
                raise CorpusError(f"line {lineno}: timestamp must be finite and >= 0")
        u = uindex.setdefault(user, len(uindex))
        if u == len(per_user_items):
            per_user_items.append([])
            per_user_times.append([])
        per_user_items[u].append(iindex.setdefault(item, len(iindex)))
        if timestamps:
            per_user_times[u].append(t)

    items = []
    times = []
    for u in range(len(per_user_items)):
        seq = np.asarray(per_user_items[u], dtype=np.int64)
        if timestamps:
            ts = np.asarray(per_user_times[u], dtype=np.float64)
            order = np.argsort(ts, kind="stable")
            seq, ts = seq[order], ts[order]
            times.append(ts)
        items.append(seq)
    return EventLog(tuple(uindex), tuple(iindex), tuple(items),
                    tuple(times) if timestamps else None)


def read_events(path, timestamps: Optional[bool] = True) -> EventLog:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_events(fh, timestamps=timestamps)


def _fmt_time(t: float) -> str:
    s = repr(float(t))
    return s[:-2] if s.endswith(".0") else s


def serialize(log: EventLog) -> str:
    """Write the log back to TSV, grouped by user."""
    out = []
    for ev in log.events():
        if log.has_timestamps:
            out.append(f"{ev.user}\t{_fmt_time(ev.timestamp)}\t{ev.item}")
        else:
            out.append(f"{ev.user}\t{ev.item}")
    return "\n".join(out) + ("\n" if out else "")


def dedup_revisits(log: EventLog) -> EventLog:
    """Collapse runs of the same item to their first occurrence."""
    items = []
    times = [] if log.times is not None else None
    for u, seq in enumerate(log.items):
        if len(seq) == 0:
            keep = np.zeros(0, dtype=bool)
        else:
            keep = np.ones(len(seq), dtype=bool)
            keep[1:] = seq[1:] != seq[:-1]
        items.append(seq[keep])
        if times is not None:
            times.append(log.times[u][keep])
    return EventLog(log.user_ids, log.item_ids, tuple(items),
                    tuple(times) if times is not None else None)


def temporal_split(log: EventLog, fraction: float = 0.7):
    """Split transitions at a global timestamp.

    A transition is dated by its destination event. The cut is the
    timestamp of the ``ceil(fraction * T)``-th earliest transition; every
    transition at or before the cut goes to train, so ties at the cut all
    land in train. Each side keeps the full dictionaries; a user's test
    sequence starts at the source event of its first test transition.

    Returns
    -------
    (EventLog, EventLog)
        Train and test logs.
    """
    if not (0.0 < fraction < 1.0):
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    if not log.has_timestamps:
        raise ValueError("temporal_split needs timestamps")
    dst_times = [ts[1:] for ts in log.times if len(ts) > 1]
    total = int(sum(len(d) for d in dst_times))
    if total == 0:
        cut = math.inf
    else:
        allt = np.sort(np.concatenate(dst_times), kind="stable")
        cut = allt[int(math.ceil(fraction * total)) - 1]

    tr_items, tr_times, te_items, te_times = [], [], [], []
    empty_i, empty_t = np.empty(0, dtype=np.int64), np.empty(0)
    for seq, ts in zip(log.items, log.times):
        # number of transitions in train = destinations with time <= cut
        n_train = int(np.searchsorted(ts[1:], cut, side="right")) if len(ts) > 1 else 0
        if n_train > 0:
            tr_items.append(seq[: n_train + 1])
            tr_times.append(ts[: n_train + 1])
        else:
            tr_items.append(empty_i)
            tr_times.append(empty_t)
        if len(seq) - 1 > n_train:
            te_items.append(seq[n_train:])
            te_times.append(ts[n_train:])
        else:
            te_items.append(empty_i)
            te_times.append(empty_t)
    train = EventLog(log.user_ids, log.item_ids, tuple(tr_items), tuple(tr_times))
    test = EventLog(log.user_ids, log.item_ids, tuple(te_items), tuple(te_times))
    return train, test
