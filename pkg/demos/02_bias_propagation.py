"""Does FedAvg spread the bias of a few large clients to everyone else?

Run: python3 demos/02_bias_propagation.py [output_dir]
"""

# %%
import sys
from pathlib import Path

from fedfair.fl import FLConfig, evaluate_global, evaluate_models, run_fedavg
from fedfair.ingest import SyntheticSpec, generate_synthetic
from fedfair.models import TrainConfig, train_logistic
from fedfair.report import compare, emit_svg

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_propagation")
out.mkdir(parents=True, exist_ok=True)

# %% Two large, strongly biased clients and six small fair ones.
fed = generate_synthetic(SyntheticSpec(
    n_clients=8,
    rows_per_client=[(6000, 6000)] * 2 + [(1500, 1500)] * 6,
    positive_rates=[{"SEX": {1: 0.85, 2: 0.15}}] * 2 + [{"SEX": {1: 0.5, 2: 0.5}}] * 6,
    seed=3,
))

# %% Local baselines versus one global model, both scored on each client's own test split.
local = {cid: train_logistic(fed[cid], TrainConfig()) for cid in fed.client_ids}
local_eval = evaluate_models(local, fed, ["SEX"], model_id="local")
model, history = run_fedavg(fed, FLConfig(rounds=20, seed=1))
global_eval = evaluate_global(model, fed, ["SEX"])

report = compare(
    {c: e.report for c, e in local_eval.items()},
    {c: e.report for c, e in global_eval.items()},
    {c: (local_eval[c].accuracy, global_eval[c].accuracy) for c in fed.client_ids},
)
for c in report.clients:
    print(f"{c.client}: local DD {c.local['SEX']:.3f} -> global {c.global_['SEX']:.3f}")
raised = sum(c.delta["SEX"] >= 0 for c in report.clients)
print(f"global model has DD >= local DD on {raised}/{len(report.clients)} clients")

# %% Points below the diagonal are clients whose disparity grew under FedAvg.
for kind in ("scatter", "bars"):
    emit_svg(report, kind, out / f"{kind}.svg", "local vs global DD(SEX)")
(out / "history.csv").write_text(history.to_csv(), encoding="utf-8")
print("wrote", out)
