"""Next-item prediction against simple baselines.

Train on the first 70% of transitions (by time), then rank every held-out
next item. The model uses the user's last two items and the gaps between
them (B = 2). Baselines are a smoothed first-order Markov chain and global
popularity.
"""
import numpy as np

from tribeflow.baselines import mc_mle
from tribeflow.corpus import temporal_split
from tribeflow.evaluation import (EvalReport, MarkovScorer, PopularityScorer, TribeFlowScorer,
                                  build_queries, evaluate_ranking, ks_statistic)
from tribeflow.predict import Query, rank_candidates
from tribeflow.sampler import TrainConfig, fit
from tribeflow.synth import SynthConfig, generate
from tribeflow.windows import build_windows

corpus = generate(SynthConfig(seed=0))
train, test = temporal_split(corpus.log, 0.7)
print(f"train transitions {train.n_transitions}, test transitions {test.n_transitions}")

B = 2
result = fit(build_windows(train, B=B),
             TrainConfig(K_init=10, B=B, total_iterations=300, adapt_every=60, seed=0,
                         log_every=0),
             train.user_ids, train.item_ids)
model = result.model
print(f"environments after merge/split: {model.K}")
for rep in result.reports:
    if rep.deltas:
        print("  ", rep.summary())

queries = build_queries(test, B=B)
reports = [
    EvalReport("tribeflow", evaluate_ranking(TribeFlowScorer(model), queries)),
    EvalReport("mcmle", evaluate_ranking(MarkovScorer(mc_mle(train)), queries)),
    EvalReport("popularity", evaluate_ranking(PopularityScorer(train.item_counts()), queries)),
]
print()
for rep in reports:
    print(f"{rep.method:<11s} MRR {rep.mrr:.4f}  P@5 {rep.metrics()['precision@5']:.3f}")
print(f"KS(tribeflow, mcmle) = {ks_statistic(reports[0].rr, reports[1].rr):.3f}")

# one concrete query: user 3's last three plays of the training period
u = 3
hist = tuple(int(i) for i in train.items[u][-(B + 1):])
gaps = tuple(float(g) for g in np.diff(train.times[u][-(B + 1):]))
items, scores = rank_candidates(model, Query(u, hist, gaps))
print(f"\nuser {u}, history {[model.item_ids[i] for i in hist]}, gaps {np.round(gaps)} s")
for r in range(5):
    print(f"  {r + 1}. {model.item_ids[items[r]]:<6s} {scores[r]:.4f}")
