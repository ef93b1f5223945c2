"""Build a small federation with uneven client bias and label it with the two-model rule.

Run: python3 demos/01_build_federation.py [output_dir]
"""

# %%
import sys
from pathlib import Path

from fedfair.bias import Modification, apply_modifications
from fedfair.fairness import fairness_table
from fedfair.ingest import SyntheticSpec, generate_synthetic, write_federation
from fedfair.models import TrainConfig, trainer
from fedfair.recipes import ThresholdSearch, bias_clients
from fedfair.report import generate_datasheet, render_bias_map

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_federation")

# %% Five clients; the first two carry a SEX gap in their true labels, the rest are nearly fair.
spec = SyntheticSpec(
    n_clients=5,
    rows_per_client=(800, 1200),
    positive_rates=[{"SEX": {1: 0.7, 2: 0.3}}, {"SEX": {1: 0.6, 2: 0.4}}] + [{"SEX": {1: 0.52, 2: 0.48}}] * 3,
    seed=1,
)
fed = generate_synthetic(spec)
truth = {cid: fairness_table(fed[cid].combined(), ["SEX", "RAC1P"], level="value") for cid in fed.client_ids}
for cid, rep in truth.items():
    print(cid, {a: round(v.value, 3) for a, v in rep.attributes.items()})

# %% Flip a share of negative labels for one intersectional subgroup on every client.
fed = apply_modifications(fed, [Modification("flip", "RAC1P", 2, 0.2, secondary=("SEX", 2), seed=3)])
print(fed.metadata.modifications[0]["effects"][:3])

# %% Label clients: both models must agree on the attribute, and the smaller maximum DD must exceed 0.09.
#    Clients that miss the rule get negatives dropped at growing rates until they meet it.
trainers = [trainer("logistic", TrainConfig()), trainer("gbdt", TrainConfig(n_rounds=20))]
fed = bias_clients(fed, trainers, ["SEX", "RAC1P"], ThresholdSearch(), seed=5)
for cid, outcome in fed.metadata.threshold_rule["outcomes"].items():
    print(cid, outcome)

# %% Persist everything with a datasheet and a bias map.
write_federation(fed, out)
truth = {cid: fairness_table(fed[cid].combined(), ["SEX", "RAC1P"], level="value") for cid in fed.client_ids}
labels = {cid: o["label"] for cid, o in fed.metadata.threshold_rule["outcomes"].items()}
(out / "bias_map.svg").write_text(render_bias_map(truth, ["SEX", "RAC1P"], labels, "true-label DD"), encoding="utf-8")
(out / "datasheet.md").write_text(generate_datasheet(fed.metadata, truth), encoding="utf-8")
print("wrote", out)
