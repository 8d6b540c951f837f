import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tribeflow.synth import (DAY, SynthConfig, bimodal_gap_corpus, generate, js_divergence,
                             min_pairwise_js, two_block_corpus, write_corpus)


def test_default_corpus_size_and_shape():
    c = generate()
    assert c.log.n_events == 50 * 100 * 5 == 25_000
    assert c.log.n_users == 50 and c.log.n_items == 200
    assert c.groups.tolist() == [u % 5 for u in range(50)]
    assert c.flows.sum() == 50 * 499
    np.testing.assert_allclose(c.group_dists.sum(axis=1), 1.0)
    assert (np.count_nonzero(c.group_dists, axis=1) == 100).all()


def test_deterministic_under_seed():
    a, b = generate(SynthConfig(seed=7, days=1)), generate(SynthConfig(seed=7, days=1))
    for x, y in zip(a.log.items, b.log.items):
        np.testing.assert_array_equal(x, y)
    for x, y in zip(a.log.times, b.log.times):
        np.testing.assert_array_equal(x, y)
    c = generate(SynthConfig(seed=8, days=1))
    assert any(not np.array_equal(x, y) for x, y in zip(a.log.items, c.log.items))


@settings(max_examples=15)
@given(st.integers(0, 10_000), st.floats(0.0, 0.5))
def test_structural_invariants(seed, noise):
    c = generate(SynthConfig(users=6, groups=3, items_per_group=10, n_items=25,
                             plays_per_day=30, days=2, noise=noise, seed=seed))
    for seq, ts in zip(c.log.items, c.log.times):
        assert np.all(np.diff(ts) > 0)
        assert np.all(seq[1:] != seq[:-1])
    # users join one or two days apart; a first gap is a few minutes
    join = np.floor(np.array([ts[0] for ts in c.log.times]) / DAY)
    assert join[0] == 0 and set(np.diff(join).tolist()) <= {1.0, 2.0}
    assert min_pairwise_js(c.group_dists) >= c.config.js_floor


def test_single_group_without_noise_shares_distribution():
    c = generate(SynthConfig(groups=1, noise=0.0, users=4, days=1))
    assert c.group_dists.shape[0] == 1 and set(c.groups.tolist()) == {0}
    support = set(np.flatnonzero(c.group_dists[0]).tolist())
    for seq in c.log.items:
        assert set(seq.tolist()) <= support


def test_noise_zero_keeps_users_in_their_group_support():
    c = generate(SynthConfig(noise=0.0, days=1))
    for u, seq in enumerate(c.log.items):
        assert np.all(c.group_dists[c.groups[u], seq] > 0)


def test_item_frequencies_within_three_sigma():
    # repeat rejection makes the walk reversible with stationary law p(1 - p)
    c = generate(SynthConfig(noise=0.0, days=40, seed=1))
    for g in range(c.config.groups):
        seqs = [s for s, h in zip(c.log.items, c.groups) if h == g]
        counts = np.bincount(np.concatenate(seqs), minlength=c.config.n_items)
        N = counts.sum()
        p = c.group_dists[g]
        w = p * (1 - p)
        w = w / w.sum()
        m = w > 0
        z = (counts[m] - N * w[m]) / np.sqrt(N * w[m] * (1 - w[m]))
        assert np.abs(z).max() <= 3.0
        assert counts[~m].sum() == 0


def test_js_floor_enforced():
    assert min_pairwise_js(generate().group_dists) >= 0.1
    with pytest.raises(ValueError, match="js_floor"):
        generate(SynthConfig(groups=3, items_per_group=200, n_items=200, popularity_sigma=0.01,
                             js_floor=0.2, days=1))
    p = np.array([0.5, 0.5, 0.0])
    assert js_divergence(p, p) == 0.0
    assert js_divergence(p, np.array([0.0, 0.0, 1.0])) == pytest.approx(np.log(2))


@pytest.mark.parametrize("kw", [dict(users=0), dict(noise=1.0), dict(noise=-0.1),
                                dict(items_per_group=300), dict(items_per_group=1),
                                dict(js_floor=1.0)])
def test_invalid_configs(kw):
    with pytest.raises(ValueError):
        SynthConfig(**kw)


def test_group_rates_geometric():
    r = SynthConfig(rate_spread=4.0).group_rates()
    assert r[-1] / r[0] == pytest.approx(4.0)
    assert np.exp(np.log(r).mean()) == pytest.approx(100 / DAY)


def test_geo_variant_and_writer(tmp_path):
    c = generate(SynthConfig(geo=True, days=1))
    assert c.geo.shape == (200, 2)
    write_corpus(c, tmp_path / "c.tsv", tmp_path / "g.tsv", tmp_path / "geo.tsv")
    lines = (tmp_path / "c.tsv").read_text().splitlines()
    assert len(lines) == c.log.n_events
    assert (tmp_path / "g.tsv").read_text().splitlines()[:2] == ["u0\t0", "u1\t1"]
    name, lat, lon = (tmp_path / "geo.tsv").read_text().splitlines()[0].split("\t")
    assert name == "i0" and float(lat) == c.geo[0, 0] and float(lon) == c.geo[0, 1]


def test_auxiliary_corpora():
    tb = two_block_corpus(users=4, plays=50, block=5)
    assert set(np.concatenate(tb.items[0::2]).tolist()) <= set(range(5))
    assert set(np.concatenate(tb.items[1::2]).tolist()) <= set(range(5, 10))
    bg = bimodal_gap_corpus(users=3, plays=40, long_users=1)
    gaps = [np.diff(t) for t in bg.times]
    assert np.allclose(gaps[0], 1.0) and np.allclose(gaps[2], 1e6)
