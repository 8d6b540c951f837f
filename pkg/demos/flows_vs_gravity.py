"""Aggregate flows between places: latent environments vs a gravity model.

Items get coordinates clustered by the group that favours them. Flows on
the test period are predicted by the model's pairwise transition
probabilities (times the source's outflow) and by a gravity model fitted
by Poisson regression on training counts.
"""
import numpy as np

from tribeflow.baselines import fit_gravity
from tribeflow.corpus import temporal_split
from tribeflow.evaluation import flow_mae, gravity_flows, model_flows, test_flows
from tribeflow.sampler import TrainConfig, fit
from tribeflow.synth import SynthConfig, generate
from tribeflow.windows import build_windows

corpus = generate(SynthConfig(seed=0, geo=True))
train, test = temporal_split(corpus.log, 0.7)
flows = test_flows(train, test)

grav = fit_gravity(flows["train_counts"], corpus.geo)
p = grav.params
print(f"gravity: exp({p.theta0:.2f}) r^{p.theta1:.2f} n^{p.theta2:.2f} / d^{p.theta3:.2f}  "
      f"({grav.iterations} IRLS steps, {grav.n_pairs} pairs)")

result = fit(build_windows(train, B=1, use_timestamps=False),
             TrainConfig(K_init=10, total_iterations=300, nt_mode=True, seed=0, log_every=0))

est_model = model_flows(result.model, flows)
est_grav = gravity_flows(grav.params, flows, corpus.geo)
obs = flows["observed"]
print(f"flow MAE over {len(obs)} observed pairs: "
      f"tribeflow-nt {flow_mae(est_model, obs):.3f}, gravity {flow_mae(est_grav, obs):.3f}")

# the busiest test pairs side by side
top = np.argsort(-obs, kind="stable")[:8]
print("\nsrc    dst    observed  tribeflow  gravity")
for k in top:
    s, d = corpus.log.item_ids[flows["src"][k]], corpus.log.item_ids[flows["dst"][k]]
    print(f"{s:<6s} {d:<6s} {obs[k]:8.0f} {est_model[k]:10.2f} {est_grav[k]:8.2f}")
