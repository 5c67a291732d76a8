"""Learn sin(x)/x with one multiplication node and read the formula back out.

The gated model starts with a reciprocal, Chebyshev, Fourier and spline terms on both edges
feeding the product. Under the MDL penalty the spline and polynomial gates close, leaving a
product of a reciprocal and a sine.

Run: python demos/02_sinc.py [--epochs 2000] [--seed 1]
"""

import argparse
import time

from s2kan import config as C
from s2kan.symbolify import extract_expression
from s2kan.training import evaluate, train

ap = argparse.ArgumentParser()
ap.add_argument("--epochs", type=int, default=2000)
ap.add_argument("--seed", type=int, default=1)
args = ap.parse_args()

for name in ("sinc-baseline", "sinc"):
    cfg = C.preset(name)
    cfg["train"]["epochs"] = args.epochs
    cfg = C.resolve(cfg, args.seed)
    data_seed, init_seed, train_seed = C.seeds(args.seed)
    data = C.build_data(cfg, data_seed)
    net = C.build_network(cfg, init_seed)
    t0 = time.time()

    def progress(epoch, rec):
        if epoch % 250 == 0:
            print(f"  epoch {epoch:5d}  train mse {rec['mse_train']:.3e}  k {rec['k']:.1f}")

    print(f"{name}: {cfg['mode']}, {args.epochs} epochs")
    net, state = train(net, data.train, C.build_train_config(cfg, train_seed), progress)
    m = evaluate(net, data.test)
    s = net.active_summary()
    print(f"  test mse {m.mse:.3e}  active functions {s.active_functions}  k {s.k}  "
          f"symbolic {s.percent_symbolic:.0f}%  ({time.time() - t0:.0f}s)")
    if cfg["mode"] == "s2kan":
        print("  expression:", extract_expression(net))
