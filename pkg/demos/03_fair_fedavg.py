"""Trade accuracy for parity by weighting a disparity penalty in every local step.

Run: python3 demos/03_fair_fedavg.py
"""

# %%
from fedfair.fairness import demographic_disparity
from fedfair.fl import FairRegConfig, FLConfig, run_fair_fedavg
from fedfair.ingest import SyntheticSpec, generate_synthetic
from fedfair.models import accuracy, predict
from fedfair.tabular import Dataset

fed = generate_synthetic(SyntheticSpec(
    n_clients=4, rows_per_client=(2000, 2000), positive_rates={"SEX": {1: 0.65, 2: 0.35}}, seed=11,
))
test = Dataset.concat([fed[c].test for c in fed.client_ids])

# %% lam = 0 is plain FedAvg; larger values push the soft positive rates of the SEX groups together.
for lam in (0.0, 0.3, 0.6, 0.9):
    model, _ = run_fair_fedavg(fed, FLConfig(rounds=20, seed=1), FairRegConfig(lam=lam, target_attr="SEX"))
    preds = predict(model, test)[1]
    dd = demographic_disparity(preds, test, "SEX").dd
    print(f"lam={lam:.1f}  accuracy={accuracy(preds, test.label):.3f}  DD(SEX)={dd:.3f}")
