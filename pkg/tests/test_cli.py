import time

import numpy as np
import pytest

from tribeflow import modelfile
from tribeflow.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from tribeflow.corpus import read_events, serialize
from tribeflow.sampler import TrainConfig, fit
from tribeflow.windows import build_windows

from conftest import make_log

TINY = make_log([[0, 1, 2, 0, 1, 2, 3], [3, 2, 1, 3, 2, 1], [0, 1, 0, 1, 2]],
                [[0, 5, 9, 100, 104, 110, 400], [3, 4, 5, 200, 201, 202], [7, 60, 62, 63, 900]])


@pytest.fixture
def tiny(tmp_path):
    p = tmp_path / "tiny.tsv"
    p.write_text(serialize(TINY))
    return p


@pytest.fixture(scope="module")
def synthetic(tmp_path_factory):
    d = tmp_path_factory.mktemp("syn")
    assert main(["synth", str(d / "c.tsv"), "--users", "20", "--groups", "4", "--days", "2",
                 "--plays-per-day", "60", "--seed", "2", "--geo", str(d / "geo.tsv")]) == EXIT_OK
    assert main(["split", str(d / "c.tsv"), "--train-out", str(d / "tr.tsv"),
                 "--test-out", str(d / "te.tsv")]) == EXIT_OK
    assert main(["train", str(d / "tr.tsv"), "-o", str(d / "m.bin"), "--k-init", "8",
                 "--iters", "100", "--adapt-every", "50", "--seed", "1"]) == EXIT_OK
    return d


def _train(corpus, out, *extra):
    return main(["train", str(corpus), "-o", str(out), "--k-init", "3", "--iters", "20",
                 "--adapt-every", "10", *extra])


def test_tiny_train_under_a_second(tiny, tmp_path):
    _train(tiny, tmp_path / "warm.bin")   # compile once
    t0 = time.perf_counter()
    assert _train(tiny, tmp_path / "m.bin") == EXIT_OK
    assert time.perf_counter() - t0 < 1.0
    assert modelfile.load(tmp_path / "m.bin").n_items == 4


def test_same_seed_identical_files(tiny, tmp_path):
    assert _train(tiny, tmp_path / "a.bin", "--seed", "5") == EXIT_OK
    assert _train(tiny, tmp_path / "b.bin", "--seed", "5") == EXIT_OK
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_no_timestamps_flag_matches_explicit_nt_run(tiny, tmp_path):
    assert _train(tiny, tmp_path / "nt.bin", "--no-timestamps", "--seed", "4") == EXIT_OK
    log = read_events(tiny)
    ws = build_windows(log, B=1, use_timestamps=False)
    ref = fit(ws, TrainConfig(K_init=3, total_iterations=20, adapt_every=10, seed=4,
                              nt_mode=True, log_every=50), log.user_ids, log.item_ids).model
    got = modelfile.load(tmp_path / "nt.bin")
    assert got.nt_mode and modelfile.dumps(got) == modelfile.dumps(ref)


def test_export_json(tiny, tmp_path):
    assert _train(tiny, tmp_path / "m.bin", "--export-json", str(tmp_path / "m.json")) == 0
    assert '"format_version": 1' in (tmp_path / "m.json").read_text()


def test_eval_beats_popularity_and_keys_stable(synthetic, capsys):
    d = synthetic
    args = ["eval", str(d / "m.bin"), str(d / "te.tsv"), "--train", str(d / "tr.tsv"),
            "--baseline", "popularity", "--format", "kv"]
    assert main(args) == EXIT_OK
    first = capsys.readouterr().out
    kv = dict(line.split("=") for line in first.splitlines())
    assert float(kv["model.mrr"]) > float(kv["popularity.mrr"])
    assert main(args) == EXIT_OK
    second = capsys.readouterr().out
    assert [l.split("=")[0] for l in first.splitlines()] == \
        [l.split("=")[0] for l in second.splitlines()]


def test_metric_restricts_output(synthetic, capsys):
    d = synthetic
    assert main(["eval", str(d / "m.bin"), str(d / "te.tsv"), "--metric", "mrr",
                 "--format", "kv"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 1 and lines[0].startswith("model.mrr=")


def test_gravity_baseline_needs_geo(synthetic, capsys):
    d = synthetic
    base = ["eval", str(d / "m.bin"), str(d / "te.tsv"), "--train", str(d / "tr.tsv"),
            "--baseline", "gravity"]
    assert main(base) == EXIT_USAGE
    assert main(base + ["--geo", str(d / "geo.tsv"), "--format", "kv"]) == EXIT_OK
    assert "gravity.flow_mae=" in capsys.readouterr().out


def test_predict_single_query(synthetic, tmp_path, capsys):
    model = modelfile.load(synthetic / "m.bin")
    q = tmp_path / "q.tsv"
    q.write_text(f"{model.user_ids[0]}\t{model.item_ids[0]},{model.item_ids[1]}\t30\n")
    assert main(["predict", str(synthetic / "m.bin"), str(q), "--top", "5"]) == EXIT_OK
    header, *rows = [l.split("\t") for l in capsys.readouterr().out.splitlines()]
    assert header == ["query", "rank", "item", "score"]
    assert [r[1] for r in rows] == ["1", "2", "3", "4", "5"]
    scores = [float(r[3]) for r in rows]
    assert scores == sorted(scores, reverse=True)
    assert model.item_ids[1] not in [r[2] for r in rows]


def test_synth_default_and_reproducible(tmp_path):
    a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
    assert main(["synth", str(a), "--seed", "9"]) == EXIT_OK
    assert main(["synth", str(b), "--seed", "9"]) == EXIT_OK
    assert len(a.read_text().splitlines()) == 25_000
    assert a.read_bytes() == b.read_bytes()


@pytest.mark.parametrize("argv, code", [
    (["train"], EXIT_USAGE),
    (["bogus"], EXIT_USAGE),
    (["train", "{tiny}", "-o", "{out}", "--iters", "10", "--adapt-every", "20"], EXIT_USAGE),
    (["train", "{tiny}", "-o", "{out}", "--k-init", "0"], EXIT_USAGE),
    (["synth", "{out}", "--noise", "1.5"], EXIT_USAGE),
    (["split", "{tiny}", "--fraction", "1.2", "--train-out", "{out}", "--test-out", "{out}"],
     EXIT_USAGE),
    (["train", "{missing}", "-o", "{out}"], EXIT_DATA),
    (["eval", "{bad}", "{tiny}"], EXIT_DATA),
])
def test_exit_codes(argv, code, tiny, tmp_path):
    (tmp_path / "bad.bin").write_bytes(b"not a model")
    subs = {"{tiny}": str(tiny), "{out}": str(tmp_path / "o"),
            "{missing}": str(tmp_path / "missing.tsv"), "{bad}": str(tmp_path / "bad.bin")}
    assert main([subs.get(a, a) for a in argv]) == code


def test_malformed_corpus_is_data_error(tmp_path):
    p = tmp_path / "bad.tsv"
    p.write_text("u1\tnot-a-time\ti1\n")
    assert main(["train", str(p), "-o", str(tmp_path / "m")]) == EXIT_DATA
