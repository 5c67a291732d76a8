"""Softly symbolified Kolmogorov-Arnold networks."""

from .basis import ChebyshevBasis, FourierBasis, Kind, SplineBasis, SymbolicPrimitive
from .gates import GateParams, GateStats, gate_stats
from .network import DictionaryConfig, Network, NetworkSpec, parse_shape

__all__ = [
    "ChebyshevBasis", "DictionaryConfig", "FourierBasis", "GateParams", "GateStats", "Kind",
    "Network", "NetworkSpec", "SplineBasis", "SymbolicPrimitive", "gate_stats", "parse_shape",
]

__version__ = "0.1.0"
