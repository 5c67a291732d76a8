"""Hard Concrete gates: stretched, rectified binary Concrete relaxations of on/off switches.

All functions are vectorized over ``alpha`` and take the uniform noise as an argument, so
nothing here holds RNG state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError

TAU = 2.0 / 3.0
GAMMA = -0.1
ZETA = 1.1
U_CLAMP = 1e-6
DECISIVE_LOW = 0.01
DECISIVE_HIGH = 0.99


@dataclass(frozen=True)
class GateParams:
    alpha: float = 0.0
    tau: float = TAU
    gamma: float = GAMMA
    zeta: float = ZETA

    def __post_init__(self):
        check_gate_constants(self.tau, self.gamma, self.zeta)

    @property
    def shift(self) -> float:
        """``tau * log(-gamma / zeta)``; the gate is open on average iff ``alpha`` exceeds it."""
        return self.tau * np.log(-self.gamma / self.zeta)


def check_gate_constants(tau, gamma, zeta):
    if not (tau > 0 and gamma < 0 < 1 < zeta):
        raise ConfigurationError(f"invalid gate constants tau={tau}, gamma={gamma}, zeta={zeta}")


def clamp_uniform(u):
    return np.clip(u, U_CLAMP, 1.0 - U_CLAMP)


def sample_gate(alpha, u, tau=TAU, gamma=GAMMA, zeta=ZETA):
    """Relaxed gate value and its pathwise derivative with respect to ``alpha``.

    ``u`` must lie strictly inside (0, 1); draw it through :func:`clamp_uniform`.
    """
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise ValueError("uniform draw must lie strictly inside (0, 1)")
    s = expit((np.log(u) - np.log1p(-u) + alpha) / tau)
    s_bar = s * (zeta - gamma) + gamma
    z = np.clip(s_bar, 0.0, 1.0)
    dz = np.where((s_bar > 0) & (s_bar < 1), (zeta - gamma) * s * (1.0 - s) / tau, 0.0)
    if np.ndim(z) == 0:
        return float(z), float(dz)
    return z, dz


def expected_gate(alpha, tau=TAU, gamma=GAMMA, zeta=ZETA):
    """Closed-form ``E[z] = sigmoid(alpha - tau log(-gamma/zeta))``."""
    p = expit(np.asarray(alpha, dtype=float) - tau * np.log(-gamma / zeta))
    return float(p) if np.ndim(p) == 0 else p


def expected_gate_grad(alpha, tau=TAU, gamma=GAMMA, zeta=ZETA):
    p = expected_gate(alpha, tau, gamma, zeta)
    return p * (1.0 - p)


def threshold_gate(alpha, tau=TAU, gamma=GAMMA, zeta=ZETA):
    """Deterministic inference gate ``1{E[z] > 1/2}`` as 0/1 floats."""
    z = (expected_gate(alpha, tau, gamma, zeta) > 0.5)
    return float(z) if np.ndim(z) == 0 else z.astype(float)


# scalar GateParams conveniences

def sample(g: GateParams, u):
    return sample_gate(g.alpha, u, g.tau, g.gamma, g.zeta)


def expectation(g: GateParams) -> float:
    return expected_gate(g.alpha, g.tau, g.gamma, g.zeta)


def is_open(g: GateParams) -> bool:
    return bool(threshold_gate(g.alpha, g.tau, g.gamma, g.zeta))


@dataclass
class GateStats:
    entropy_bits: float
    decisiveness: float
    per_gate_p: list = field(default_factory=list)


def binary_entropy_bits(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    out = np.zeros_like(p)
    inner = (p > 0) & (p < 1)
    q = p[inner]
    out[inner] = -(q * np.log2(q) + (1.0 - q) * np.log2(1.0 - q))
    return out


def decisiveness(ps) -> float:
    ps = np.asarray(ps, dtype=float)
    if ps.size == 0:
        return 1.0
    return float(np.mean((ps < DECISIVE_LOW) | (ps > DECISIVE_HIGH)))


def gate_stats(ps) -> GateStats:
    ps = np.asarray(ps, dtype=float).ravel()
    if np.any((ps < 0) | (ps > 1)):
        raise ValueError("gate probabilities must lie in [0, 1]")
    return GateStats(float(binary_entropy_bits(ps).sum()), decisiveness(ps), ps.tolist())
