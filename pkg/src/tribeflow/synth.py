"""Ground-truth trajectory generator.

Users are split round-robin into groups. Each group owns a categorical
over items with lognormal popularity; a user walks by drawing the next item
from its group's categorical (with probability ``noise`` from another
group's), rejecting immediate repeats. Gaps between plays are exponential
with a group-specific rate, and users join the system one or two days apart.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .corpus import EventLog

__all__ = [
    "SynthConfig",
    "SynthCorpus",
    "generate",
    "write_corpus",
    "js_divergence",
    "min_pairwise_js",
    "two_block_corpus",
    "bimodal_gap_corpus",
]

DAY = 86400.0


@dataclass(frozen=True)
class SynthConfig:
    users: int = 50
    groups: int = 5
    items_per_group: int = 100
    n_items: int = 200
    plays_per_day: int = 100
    days: int = 5
    stagger_days: tuple = (1, 2)
    popularity_mu: float = 0.0
    popularity_sigma: float = 1.5
    rate_spread: float = 4.0
    noise: float = 0.01
    geo: bool = False
    geo_spread_km: float = 30.0
    js_floor: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("users", "groups", "items_per_group", "n_items", "plays_per_day", "days"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.items_per_group > self.n_items:
            raise ValueError("items_per_group exceeds n_items")
        if self.items_per_group < 2:
            raise ValueError("need at least two items per group")
        if not 0.0 <= self.noise < 1.0:
            raise ValueError("noise must be in [0, 1)")
        if not 0.0 <= self.js_floor < math.log(2):
            raise ValueError("js_floor must be in [0, log 2)")
        if self.rate_spread < 1.0:
            raise ValueError("rate_spread must be >= 1")

    @property
    def plays_per_user(self) -> int:
        return self.plays_per_day * self.days

    def group_rates(self) -> np.ndarray:
        """Plays per second of each group, geometric around plays_per_day."""
        base = self.plays_per_day / DAY
        if self.groups == 1:
            return np.array([base])
        half = math.sqrt(self.rate_spread)
        return base * np.geomspace(1.0 / half, half, self.groups)


@dataclass
class SynthCorpus:
    log: EventLog
    groups: np.ndarray            # ground-truth group per user
    flows: np.ndarray             # realised (src, dst) transition counts
    group_dists: np.ndarray       # (groups, n_items) categorical per group
    config: SynthConfig
    geo: Optional[np.ndarray] = None   # (n_items, 2) lat, lon degrees
    item_home: Optional[np.ndarray] = field(default=None)


def _draw_excluding(rng, cdf, prev):
    """Inverse-CDF draw that rejects ``prev``."""
    while True:
        x = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        x = min(x, len(cdf) - 1)
        if x != prev:
            return x


_MAX_REDRAWS = 100


def _group_dists(rng, config: SynthConfig) -> np.ndarray:
    dists = np.zeros((config.groups, config.n_items))
    for g in range(config.groups):
        support = rng.choice(config.n_items, size=config.items_per_group, replace=False)
        dists[g, support] = rng.lognormal(config.popularity_mu, config.popularity_sigma,
                                          size=config.items_per_group)
        dists[g] /= dists[g].sum()
    return dists


def min_pairwise_js(dists: np.ndarray) -> float:
    """Smallest Jensen-Shannon divergence between rows; inf for a single row."""
    G = dists.shape[0]
    return min((js_divergence(dists[a], dists[b]) for a in range(G) for b in range(a + 1, G)),
               default=math.inf)


def generate(config: SynthConfig = SynthConfig()) -> SynthCorpus:
    rng = np.random.default_rng(config.seed)
    G, I = config.groups, config.n_items

    for _ in range(_MAX_REDRAWS):
        dists = _group_dists(rng, config)
        if min_pairwise_js(dists) >= config.js_floor:
            break
    else:
        raise ValueError(f"group distributions never reached js_floor={config.js_floor}")
    cdfs = np.cumsum(dists, axis=1)
    rates = config.group_rates()

    gaps = rng.choice(np.asarray(config.stagger_days, dtype=np.float64), size=config.users)
    gaps[0] = 0.0
    starts = np.cumsum(gaps) * DAY

    groups = np.arange(config.users) % G
    flows = np.zeros((I, I), dtype=np.int64)
    items, times = [], []
    n = config.plays_per_user
    for u in range(config.users):
        g = groups[u]
        seq = np.empty(n, dtype=np.int64)
        prev = -1
        for k in range(n):
            src = g
            if config.noise > 0 and G > 1 and rng.random() < config.noise:
                src = int(rng.integers(0, G - 1))
                src += src >= g
            seq[k] = prev = _draw_excluding(rng, cdfs[src], prev)
        ts = starts[u] + np.cumsum(rng.exponential(1.0 / rates[g], size=n))
        np.add.at(flows, (seq[:-1], seq[1:]), 1)
        items.append(seq)
        times.append(ts)

    log = EventLog(tuple(f"u{u}" for u in range(config.users)),
                   tuple(f"i{i}" for i in range(I)), tuple(items), tuple(times))
    geo = home = None
    if config.geo:
        geo, home = _geo_table(rng, dists, config.geo_spread_km)
    return SynthCorpus(log, groups, flows, dists, config, geo, home)


def _walks(rng, dists, gaps) -> EventLog:
    """One walk per row of ``dists`` with the matching row of ``gaps``."""
    cdfs = np.cumsum(dists, axis=1)
    items, times = [], []
    for cdf, gap in zip(cdfs, gaps):
        seq = np.empty(len(gap), dtype=np.int64)
        prev = -1
        for k in range(len(gap)):
            seq[k] = prev = _draw_excluding(rng, cdf, prev)
        items.append(seq)
        times.append(np.cumsum(gap))
    return EventLog(tuple(f"u{u}" for u in range(len(items))),
                    tuple(f"i{i}" for i in range(dists.shape[1])), tuple(items), tuple(times))


def two_block_corpus(users: int = 20, plays: int = 300, block: int = 20,
                     seed: int = 0) -> EventLog:
    """Two disjoint item blocks; even users walk the first, odd users the second.

    Gaps are exponential with a shared mean of 100 s. Trained with more than
    two environments, the surplus ones duplicate the two real ones, which
    makes this a merge testbed.
    """
    rng = np.random.default_rng(seed)
    w = rng.lognormal(0.0, 1.0, size=(2, block))
    dists = np.zeros((2, 2 * block))
    dists[0, :block] = w[0] / w[0].sum()
    dists[1, block:] = w[1] / w[1].sum()
    gaps = rng.exponential(100.0, size=(users, plays))
    return _walks(rng, dists[np.arange(users) % 2], gaps)


def bimodal_gap_corpus(users: int = 20, plays: int = 300, n_items: int = 20,
                       long_users: int = 1, short_gap: float = 1.0, long_gap: float = 1e6,
                       seed: int = 0) -> EventLog:
    """One item distribution shared by all users, two gap regimes.

    The last ``long_users`` users always wait ``long_gap`` seconds between
    plays, the rest ``short_gap``. A single environment holding every
    window has a bimodal gap distribution, which makes this a split testbed.
    """
    if not 0 < long_users < users:
        raise ValueError("long_users must be in (0, users)")
    rng = np.random.default_rng(seed)
    w = rng.lognormal(0.0, 1.0, size=n_items)
    dists = np.tile(w / w.sum(), (users, 1))
    gaps = np.full((users, plays), float(short_gap))
    gaps[users - long_users:] = float(long_gap)
    return _walks(rng, dists, gaps)


def _geo_table(rng, dists, spread_km):
    """Place each item near the centre of the group that favours it most."""
    G = dists.shape[0]
    home = np.argmax(dists, axis=0)
    centres = np.column_stack([rng.uniform(-50, 50, G), rng.uniform(-120, 120, G)])
    deg = spread_km / 111.0
    latlon = centres[home] + rng.normal(0.0, deg, size=(dists.shape[1], 2))
    latlon[:, 0] = np.clip(latlon[:, 0], -90, 90)
    latlon[:, 1] = (latlon[:, 1] + 180.0) % 360.0 - 180.0
    return latlon, home


def js_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """Jensen-Shannon divergence in nats."""
    m = 0.5 * (p + q)

    def kl(x, y):
        mask = x > 0
        return float(np.sum(x[mask] * np.log(x[mask] / y[mask])))

    return 0.5 * kl(p, m) + 0.5 * kl(q, m)


def write_corpus(corpus: SynthCorpus, path, groups_path=None, geo_path=None) -> None:
    from .corpus import serialize

    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize(corpus.log))
    if groups_path is not None:
        with open(groups_path, "w", encoding="utf-8") as fh:
            for u, g in zip(corpus.log.user_ids, corpus.groups):
                fh.write(f"{u}\t{int(g)}\n")
    if geo_path is not None and corpus.geo is not None:
        with open(geo_path, "w", encoding="utf-8") as fh:
            for name, (lat, lon) in zip(corpus.log.item_ids, corpus.geo):
                fh.write(f"{name}\t{float(lat)!r}\t{float(lon)!r}\n")
