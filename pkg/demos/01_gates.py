"""A tour of the Hard Concrete gates that switch dictionary terms on and off.

Run: python demos/01_gates.py
"""

import numpy as np

from s2kan.gates import (
    GAMMA,
    TAU,
    ZETA,
    clamp_uniform,
    expected_gate,
    gate_stats,
    sample_gate,
    threshold_gate,
)

rng = np.random.default_rng(0)
u = clamp_uniform(rng.uniform(size=200_000))

print("A gate is a clipped, stretched logistic sample. For a few gate locations alpha:")
print(f"{'alpha':>7} {'P(open)':>9} {'MC P(z>0)':>10} {'MC mean z':>10} {'exactly 0':>10} "
      f"{'exactly 1':>10}")
for alpha in (-4.0, -1.6, 0.0, 1.6, 4.0):
    z, _ = sample_gate(alpha, u)
    print(f"{alpha:7.1f} {float(expected_gate(alpha)):9.4f} {(z > 0).mean():10.4f} "
          f"{z.mean():10.4f} {(z == 0).mean():10.4f} {(z == 1).mean():10.4f}")

# The closed form tracks how often the gate is open at all, which is what the penalty counts.
# The average relaxed value is smaller because open samples can still be fractional.

thr = TAU * np.log(-GAMMA / ZETA)
print(f"\nAt inference a gate is open when its probability exceeds 1/2, i.e. alpha > {thr:.4f}")
for alpha in (thr - 0.01, thr, thr + 0.01):
    print(f"  alpha={alpha:+.4f} -> gate {int(threshold_gate(alpha))}")

print("\nEntropy and decisiveness summarize a whole set of gates:")
for label, ps in [("undecided", [0.5] * 8), ("half decided", [0.001, 0.999, 0.5, 0.6] * 2),
                  ("committed", [0.0, 1.0, 0.999, 0.002] * 2)]:
    s = gate_stats(ps)
    print(f"  {label:13s} entropy {s.entropy_bits:5.2f} bits, decisiveness {s.decisiveness:.2f}")
