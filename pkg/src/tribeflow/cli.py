"""Command-line entry points.

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(unreadable or malformed input).
"""
from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional

import numpy as np

from . import modelfile
from .baselines import GeoTable, fit_gravity, mc_mle
from .corpus import CorpusError, dedup_revisits, read_events, serialize, temporal_split
from .evaluation import (EvalReport, GravityScorer, MarkovScorer, PopularityScorer,
                         TribeFlowScorer, build_queries, evaluate_ranking, flow_mae,
                         gravity_flows, ks_statistic, model_flows, pred_ll, test_flows)
from .predict import Query, pairwise_matrix, rank_candidates
from .sampler import TrainConfig, fit
from .synth import SynthConfig, generate, write_corpus
from .windows import build_windows

log = logging.getLogger("tribeflow")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read(path, timestamps: Optional[bool] = None):
    try:
        return dedup_revisits(read_events(path, timestamps=timestamps))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from None
    except CorpusError as exc:
        raise DataError(f"{path}: {exc}") from None


def _load_model(path):
    try:
        return modelfile.load(path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from None
    except modelfile.ModelFileError as exc:
        raise DataError(f"{path}: {exc}") from None


# -- train ----------------------------------------------------------------------


def cmd_train(args) -> int:
    try:
        config = TrainConfig(K_init=args.k_init, B=args.b, total_iterations=args.iters,
                             adapt_every=args.adapt_every, seed=args.seed, workers=args.workers,
                             nt_mode=args.no_timestamps, log_every=args.log_every)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    corpus = _read(args.corpus)
    ws = build_windows(corpus, config.B, use_timestamps=not args.no_timestamps)
    if len(ws) == 0:
        raise DataError(f"{args.corpus}: no user has more than B={config.B} events")
    log.info("corpus: %d users, %d items, %d windows", corpus.n_users, corpus.n_items, len(ws))
    if config.workers > 1:
        from .parallel import run_parallel
        try:
            result = run_parallel(ws, config, corpus.user_ids, corpus.item_ids)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    else:
        result = fit(ws, config, corpus.user_ids, corpus.item_ids)
    modelfile.save(result.model, args.output)
    if args.export_json:
        with open(args.export_json, "w", encoding="utf-8") as fh:
            modelfile.to_json(result.model, fh)
    log.info("wrote %s (K=%d)", args.output, result.model.K)
    return EXIT_OK


# -- eval -----------------------------------------------------------------------------


def _model_report(model, train, test, q) -> EvalReport:
    ranks = evaluate_ranking(TribeFlowScorer(model), q)
    rep = EvalReport("model", ranks, skipped_unseen=q.skipped_unseen)
    P = pairwise_matrix(model)
    s, d = _known_transitions(test)
    if len(s):
        rep.predll, rep.predll_mean = pred_ll(P[s, d])
    if train is not None:
        fl = test_flows(train, test)
        if len(fl["observed"]):
            rep.flow_mae = flow_mae(model_flows(model, fl), fl["observed"])
    return rep


def _known_transitions(test):
    src, dst = [], []
    for seq in test.items:
        seq = np.asarray(seq)
        ok = (seq[:-1] >= 0) & (seq[1:] >= 0) & (seq[:-1] != seq[1:])
        src.append(seq[:-1][ok])
        dst.append(seq[1:][ok])
    if not src:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    return np.concatenate(src), np.concatenate(dst)


def _baseline_report(name, train, test, q, geo) -> EvalReport:
    s, d = _known_transitions(test)
    if name == "mcmle":
        chain = mc_mle(train)
        rep = EvalReport(name, evaluate_ranking(MarkovScorer(chain), q),
                         skipped_unseen=q.skipped_unseen)
        if len(s):
            probs = ((np.asarray(chain.counts[s, d]).ravel() + chain.eps)
                     / (chain.out[s] + chain.n_items * chain.eps))
            rep.predll, rep.predll_mean = pred_ll(probs)
        return rep
    if name == "popularity":
        return EvalReport(name, evaluate_ranking(PopularityScorer(train.item_counts()), q),
                          skipped_unseen=q.skipped_unseen)
    # gravity
    latlon = geo.aligned(train.item_ids)
    fl = test_flows(train, test)
    try:
        g = fit_gravity(fl["train_counts"], latlon)
    except ValueError as exc:
        raise DataError(f"gravity fit failed: {exc}") from None
    C = fl["train_counts"]
    r = np.asarray(C.sum(axis=1)).ravel()
    m = np.asarray(C.sum(axis=0)).ravel()
    rep = EvalReport(name, evaluate_ranking(GravityScorer(g.params, r, m, latlon), q),
                     skipped_unseen=q.skipped_unseen)
    rep.flow_mae = flow_mae(gravity_flows(g.params, fl, latlon), fl["observed"])
    rep.extra = {"theta0": g.params.theta0, "theta1": g.params.theta1,
                 "theta2": g.params.theta2, "theta3": g.params.theta3}
    return rep


def cmd_eval(args) -> int:
    if args.baseline and not args.train:
        raise UsageError("--baseline needs --train")
    if args.baseline == "gravity" and not args.geo:
        raise UsageError("the gravity baseline needs --geo")
    model = _load_model(args.model)
    if model.item_ids is None or model.user_ids is None:
        raise DataError("model file carries no dictionaries")
    test = _read(args.test).remap(model.user_ids, model.item_ids)
    train = _read(args.train).remap(model.user_ids, model.item_ids) if args.train else None
    geo = None
    if args.geo:
        try:
            geo = GeoTable.read(args.geo)
        except OSError as exc:
            raise DataError(f"cannot read {args.geo}: {exc.strerror or exc}") from None
        except ValueError as exc:
            raise DataError(str(exc)) from None
    q = build_queries(test, model.B)
    if len(q) == 0:
        raise DataError(f"{args.test}: no test transitions")
    reports = [_model_report(model, train, test, q)]
    if args.baseline:
        base = _baseline_report(args.baseline, train, test, q, geo)
        reports[0].ks_statistic = ks_statistic(reports[0].rr, base.rr)
        reports.append(base)
    keys = set(args.metric) if args.metric else None
    out = []
    if args.format in ("table", "both"):
        out.extend(r.table(keys) + "\n" for r in reports)
    if args.format in ("kv", "both"):
        out.append("\n".join(r.kv(keys) for r in reports) + "\n")
    sys.stdout.write("\n".join(out))
    return EXIT_OK


# -- predict -----------------------------------------------------------------------------


def _parse_queries(path, model):
    queries = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from None
    with fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3):
                raise DataError(f"{path}:{lineno}: expected 2 or 3 fields")
            names = [x for x in parts[1].split(",") if x]
            if not names:
                raise DataError(f"{path}:{lineno}: empty item history")
            items = [model.item_index(x) for x in names]
            for name, i in zip(names, items):
                if i < 0:
                    raise DataError(f"{path}:{lineno}: unknown item {name!r}")
            taus = None
            if len(parts) == 3 and parts[2].strip():
                try:
                    taus = tuple(float(x) for x in parts[2].split(","))
                except ValueError:
                    raise DataError(f"{path}:{lineno}: bad gap value") from None
            q = Query(model.user_index(parts[0]), tuple(items[-(model.B + 1):]),
                      taus[-(model.B):] if taus is not None and len(items) > 1 else None)
            if q.taus is not None and len(q.taus) != len(q.history) - 1:
                raise DataError(f"{path}:{lineno}: need one gap per consecutive item pair")
            queries.append(q)
    return queries


def cmd_predict(args) -> int:
    model = _load_model(args.model)
    if model.item_ids is None:
        raise DataError("model file carries no dictionaries")
    queries = _parse_queries(args.queries, model)
    out = sys.stdout
    out.write("query\trank\titem\tscore\n")
    for k, q in enumerate(queries):
        items, scores = rank_candidates(model, q)
        top = len(items) if args.top <= 0 else min(args.top, len(items))
        for r in range(top):
            out.write(f"{k}\t{r + 1}\t{model.item_ids[items[r]]}\t{float(scores[r])!r}\n")
    return EXIT_OK


# -- synth / split ------------------------------------------------------------------------


def cmd_synth(args) -> int:
    try:
        config = SynthConfig(users=args.users, groups=args.groups,
                             items_per_group=args.items_per_group, n_items=args.n_items,
                             plays_per_day=args.plays_per_day, days=args.days, noise=args.noise,
                             geo=args.geo is not None, js_floor=args.js_floor, seed=args.seed)
        corpus = generate(config)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_corpus(corpus, args.output, args.groups_out, args.geo)
    log.info("wrote %d events to %s", corpus.log.n_events, args.output)
    return EXIT_OK


def cmd_split(args) -> int:
    if not 0.0 < args.fraction < 1.0:
        raise UsageError("--fraction must be in (0, 1)")
    corpus = _read(args.corpus, timestamps=True)
    train, test = temporal_split(corpus, args.fraction)
    for path, part in ((args.train_out, train), (args.test_out, test)):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(serialize(part))
    return EXIT_OK


# -- wiring ------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tribeflow", description="Latent-environment trajectory models.")
    p.add_argument("-v", "--verbose", action="store_true", help="progress logging to stderr")
    p.add_argument("--log", help="also write the progress log to this file")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    t = sub.add_parser("train", help="fit a model to a trajectory corpus")
    t.add_argument("corpus", help="TSV: user, [timestamp,] item")
    t.add_argument("-o", "--output", required=True, help="model file to write")
    t.add_argument("--k-init", type=int, default=100, help="initial number of environments")
    t.add_argument("--b", type=int, default=1, help="window memory B (items per window - 1)")
    t.add_argument("--iters", type=int, default=2000, help="Gibbs passes")
    t.add_argument("--adapt-every", type=int, default=200, help="passes between merge/split rounds")
    t.add_argument("--workers", type=int, default=1)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--no-timestamps", action="store_true",
                   help="ignore gaps: fixed K, no gap likelihood")
    t.add_argument("--log-every", type=int, default=50)
    t.add_argument("--export-json", help="also write a readable JSON dump here")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a held-out corpus")
    e.add_argument("model")
    e.add_argument("test", help="held-out TSV corpus")
    e.add_argument("--train", help="training corpus (needed for baselines and flows)")
    e.add_argument("--baseline", choices=("mcmle", "gravity", "popularity"))
    e.add_argument("--geo", help="TSV: item, latitude, longitude")
    e.add_argument("--metric", action="append",
                   help="restrict output to this metric (repeatable), e.g. mrr")
    e.add_argument("--format", choices=("table", "kv", "both"), default="both")
    e.set_defaults(func=cmd_eval)

    q = sub.add_parser("predict", help="rank next items for queries")
    q.add_argument("model")
    q.add_argument("queries", help="TSV: user, comma-separated items, [comma-separated gaps]")
    q.add_argument("--top", type=int, default=10, help="candidates per query (0 = all)")
    q.set_defaults(func=cmd_predict)

    s = sub.add_parser("synth", help="write a synthetic corpus with known groups")
    s.add_argument("output")
    d = SynthConfig()
    s.add_argument("--users", type=int, default=d.users)
    s.add_argument("--groups", type=int, default=d.groups)
    s.add_argument("--items-per-group", type=int, default=d.items_per_group)
    s.add_argument("--n-items", type=int, default=d.n_items)
    s.add_argument("--plays-per-day", type=int, default=d.plays_per_day)
    s.add_argument("--days", type=int, default=d.days)
    s.add_argument("--noise", type=float, default=d.noise)
    s.add_argument("--js-floor", type=float, default=d.js_floor,
                   help="minimum Jensen-Shannon divergence between group distributions")
    s.add_argument("--seed", type=int, default=d.seed)
    s.add_argument("--groups-out", help="write user-to-group ground truth here")
    s.add_argument("--geo", help="also place items on the globe and write coordinates here")
    s.set_defaults(func=cmd_synth)

    sp = sub.add_parser("split", help="temporal train/test split")
    sp.add_argument("corpus")
    sp.add_argument("--fraction", type=float, default=0.7)
    sp.add_argument("--train-out", required=True)
    sp.add_argument("--test-out", required=True)
    sp.set_defaults(func=cmd_split)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:   # usage errors and --help
        return int(exc.code or 0)
    handlers = []
    if args.verbose:
        handlers.append(logging.StreamHandler(sys.stderr))
    if args.log:
        handlers.append(logging.FileHandler(args.log, mode="w", encoding="utf-8"))
    root = logging.getLogger("tribeflow")
    for h in handlers:
        h.setFormatter(logging.Formatter("%(levelname)s %(name)s %(message)s"))
        root.addHandler(h)
    root.setLevel(logging.INFO if handlers else logging.WARNING)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"tribeflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"tribeflow: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    finally:
        for h in handlers:
            root.removeHandler(h)
            h.close()


if __name__ == "__main__":
    sys.exit(main())
