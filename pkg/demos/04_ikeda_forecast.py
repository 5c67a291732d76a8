"""Fit the Ikeda map, then let the model run on its own from the first test state.

A chaotic map amplifies every small error, so the interesting number is how many steps the
free-running forecast stays close to the truth. Writes a plot-ready CSV next to the script.

Run: python demos/04_ikeda_forecast.py [--epochs 400]
"""

import argparse
from pathlib import Path

from s2kan import config as C
from s2kan.benchmarks import multistep_forecast
from s2kan.cli import write_forecast_csv
from s2kan.training import evaluate, train

ap = argparse.ArgumentParser()
ap.add_argument("--epochs", type=int, default=400)
ap.add_argument("--seed", type=int, default=0)
ap.add_argument("--horizon", type=int, default=60)
args = ap.parse_args()

for name in ("ikeda-baseline", "ikeda-b0.1"):
    cfg = C.preset(name)
    cfg["train"]["epochs"] = args.epochs
    cfg = C.resolve(cfg, args.seed)
    data_seed, init_seed, train_seed = C.seeds(args.seed)
    data = C.build_data(cfg, data_seed)
    net, _ = train(C.build_network(cfg, init_seed), data.train,
                   C.build_train_config(cfg, train_seed))
    ref = data.dynamics.test_trajectory
    fc = multistep_forecast(net, ref[0], args.horizon, "ikeda", ref)
    out = Path(__file__).with_name(f"{name}-forecast.csv")
    write_forecast_csv(out, fc)
    s = net.active_summary()
    print(f"{name:15s} 1-step RMSE {evaluate(net, data.test).rmse:.4f}  k {s.k:4d}  "
          f"good steps {fc.accuracy_horizon:3d}  multi-step RMSE {fc.rmse:.3f}  -> {out.name}")
