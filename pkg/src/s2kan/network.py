"""Layered KAN whose edges carry gated activation dictionaries.

Each edge computes ``sum_m z_m c_m psi_m(x)`` over symbolic primitives, Chebyshev and Fourier
terms, plus a single gated dense term ``z_r (c_0 SiLU(x) + sum_b c_b B_b(x))``. Nodes either sum
their incoming edges or multiply two such sums (multiplication nodes of arity 2).

Parameters of a layer are stored densely: ``coef[i, j, d]`` for source node ``i``, pre-node
slot ``j`` and coefficient ``d``, and ``alpha[i, j, m]`` for gate ``m``. Slots ``0..n_sum-1`` feed
sum nodes; slots ``n_sum + 2q`` and ``n_sum + 2q + 1`` are the two factors of product node ``q``.
All edges leaving one source node observe the same preactivations, so the tracked Chebyshev /
spline domain and running range are kept per source node and shared by those edges.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lstsq

from . import gates as G
from .basis import (
    Kind,
    KnotCache,
    SplineBasis,
    SymbolicPrimitive,
    chebyshev_features,
    eval_symbolic,
    fourier_features,
    parse_kind,
    spline_features,
)
from .errors import (
    ConfigurationError,
    MalformedFileError,
    NonFiniteError,
    StaleTapeError,
    VersionMismatchError,
)

FORMAT_VERSION = 1
SYMBOLIC_FAMILIES = ("symbolic", "chebyshev", "fourier")
GRID_PAD = 0.05
REFIT_POINTS = 201
REFIT_RIDGE = 1e-12
REFIT_SLACK = 0.25  # allowed relative growth of the overlap residual
REFIT_LOG_W = (-8.0, 0.0)  # search range for the extension weight


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class TermInfo:
    family: str
    label: str
    index: int  # primitive position, Chebyshev degree or Fourier slot
    width: int  # number of coefficients
    weight: float = 1.0


@dataclass
class DictionaryConfig:
    """Shared per-edge dictionary.

    ``chebyshev_P = 0`` and ``fourier_Q = 0`` disable those families; ``spline=None`` removes
    the dense term. ``complexity_weights`` maps term labels (or family names) to positive
    weights used in the weighted active-term count.
    """

    symbolic: tuple = ()
    chebyshev_P: int = 0
    fourier_Q: int = 0
    spline: SplineBasis | None = None
    complexity_weights: dict | None = None

    def __post_init__(self):
        self.symbolic = tuple(
            p if isinstance(p, SymbolicPrimitive) else SymbolicPrimitive.parse(p)
            for p in self.symbolic)
        if self.chebyshev_P < 0 or self.fourier_Q < 0:
            raise ConfigurationError("basis sizes must be non-negative")
        if not (self.symbolic or self.chebyshev_P or self.fourier_Q or self.spline):
            raise ConfigurationError("dictionary has no terms")
        for k, w in (self.complexity_weights or {}).items():
            if not w > 0:
                raise ConfigurationError(f"complexity weight for {k!r} must be positive")

    @property
    def terms(self) -> list[TermInfo]:
        weights = self.complexity_weights or {}
        out = []

        def add(family, label, index, width):
            w = weights.get(label, weights.get(family, 1.0))
            out.append(TermInfo(family, label, index, width, float(w)))

        for s, prim in enumerate(self.symbolic):
            add("symbolic", prim.name, s, 1)
        if self.chebyshev_P:
            for p in range(self.chebyshev_P + 1):
                add("chebyshev", f"T{p}", p, 1)
        for q in range(1, self.fourier_Q + 1):
            add("fourier", f"sin({q}x)", 2 * q - 2, 1)
            add("fourier", f"cos({q}x)", 2 * q - 1, 1)
        if self.spline is not None:
            add("spline", "spline", 0, self.spline.n_coeffs)
        return out

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    @property
    def n_coeffs(self) -> int:
        return sum(t.width for t in self.terms)

    def to_dict(self) -> dict:
        return {
            "symbolic": [{"kind": p.name, "protected": p.protected} for p in self.symbolic],
            "chebyshev_P": self.chebyshev_P,
            "fourier_Q": self.fourier_Q,
            "spline": None if self.spline is None else {
                "grid_intervals": self.spline.grid_intervals, "degree": self.spline.degree,
                "lo": self.spline.lo, "hi": self.spline.hi},
            "complexity_weights": self.complexity_weights,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DictionaryConfig":
        sym = []
        for p in d.get("symbolic", []):
            if isinstance(p, dict):
                sym.append(SymbolicPrimitive(parse_kind(p["kind"]), bool(p.get("protected", True))))
            else:
                sym.append(SymbolicPrimitive.parse(p))
        spl = d.get("spline")
        if spl is True:
            spl = {}
        spline = None if not spl and spl != {} else SplineBasis(
            int(spl.get("grid_intervals", 10)), int(spl.get("degree", 3)),
            float(spl.get("lo", -1.0)), float(spl.get("hi", 1.0)))
        return cls(tuple(sym), int(d.get("chebyshev_P", 0)), int(d.get("fourier_Q", 0)),
                   spline, d.get("complexity_weights"))


@dataclass
class NetworkSpec:
    input_dim: int
    layers: list  # [(n_sum, n_mult), ...]
    dictionary: DictionaryConfig

    def __post_init__(self):
        self.layers = [tuple(int(v) for v in (w if isinstance(w, (tuple, list)) else (w, 0)))
                       for w in self.layers]
        if self.input_dim < 1 or not self.layers:
            raise ConfigurationError("network needs an input and at least one layer")
        for s, m in self.layers:
            if s < 0 or m < 0 or s + m == 0:
                raise ConfigurationError(f"invalid layer width {(s, m)}")

    @property
    def widths(self) -> list[int]:
        return [self.input_dim] + [s + m for s, m in self.layers]

    @property
    def output_dim(self) -> int:
        s, m = self.layers[-1]
        return s + m

    def shape_string(self) -> str:
        parts = [str(self.input_dim)]
        for s, m in self.layers:
            parts.append(str(s) if m == 0 else f"({s},{m})")
        return "[" + ",".join(parts) + "]"


def parse_shape(text) -> tuple[int, list]:
    """Parse ``"[2,4,(3,1),1]"`` (or a list) into ``(input_dim, [(n_sum, n_mult), ...])``."""
    if isinstance(text, (list, tuple)):
        items = list(text)
    else:
        tokens = re.findall(r"\(\s*\d+\s*,\s*\d+\s*\)|\d+", str(text))
        if not tokens:
            raise ConfigurationError(f"cannot parse shape {text!r}")
        items = [tuple(int(v) for v in re.findall(r"\d+", t)) if t.startswith("(") else int(t)
                 for t in tokens]
    if len(items) < 2:
        raise ConfigurationError(f"shape {text!r} needs at least input and output widths")
    first = items[0]
    if isinstance(first, (tuple, list)):
        raise ConfigurationError("input width cannot contain multiplication nodes")
    layers = [tuple(w) if isinstance(w, (tuple, list)) else (int(w), 0) for w in items[1:]]
    return int(first), layers


# ---------------------------------------------------------------------------
# layers and edges


@dataclass
class DictionaryTerm:
    family: str
    label: str
    gate: G.GateParams
    coeffs: np.ndarray


@dataclass
class ActivationEdge:
    layer: int
    source: int
    slot: int
    terms: list
    domain: tuple
    running_range: tuple
    replacement: object | None = None


class Layer:
    def __init__(self, n_in: int, n_sum: int, n_mult: int, dictionary: DictionaryConfig,
                 lo=-1.0, hi=1.0, dtype=float):
        self.n_in, self.n_sum, self.n_mult = n_in, n_sum, n_mult
        self.dictionary = dictionary
        terms = dictionary.terms
        self.terms = terms
        widths = np.array([t.width for t in terms])
        self.term_start = np.concatenate([[0], np.cumsum(widths)[:-1]]).astype(np.intp)
        self.term_of_coef = np.repeat(np.arange(len(terms)), widths)
        self.weights = np.array([t.weight for t in terms])
        self.family_of_term = np.array([t.family for t in terms])
        D, T = int(widths.sum()), len(terms)
        self.coef = np.zeros((n_in, self.n_pre, D), dtype=dtype)
        self.alpha = np.zeros((n_in, self.n_pre, T), dtype=dtype)
        self.lo = np.full(n_in, lo, dtype=float)
        self.hi = np.full(n_in, hi, dtype=float)
        self.range_min = np.full(n_in, np.inf)
        self.range_max = np.full(n_in, -np.inf)
        self.edge_mask = np.ones((n_in, self.n_pre), dtype=dtype)
        self.replacements: dict = {}
        self._knots = None

    @property
    def n_pre(self) -> int:
        return self.n_sum + 2 * self.n_mult

    @property
    def n_out(self) -> int:
        return self.n_sum + self.n_mult

    def has_family(self, family: str) -> bool:
        return any(t.family == family for t in self.terms)

    def features(self, x):
        """Concatenated dictionary features ``(batch, n_in, D)`` and their x-derivatives."""
        d = self.dictionary
        vals, ders = [], []
        for prim in d.symbolic:
            v, dv = eval_symbolic(prim, x)
            vals.append(v[..., None])
            ders.append(dv[..., None])
        if d.chebyshev_P:
            v, dv = chebyshev_features(x, self.lo.astype(x.dtype), self.hi.astype(x.dtype),
                                       d.chebyshev_P)
            vals.append(v)
            ders.append(dv)
        if d.fourier_Q:
            v, dv = fourier_features(x, d.fourier_Q)
            vals.append(v)
            ders.append(dv)
        if d.spline is not None:
            v, dv = spline_features(x, self.lo, self.hi, d.spline.grid_intervals, d.spline.degree,
                                    self._knot_cache(x.dtype))
            vals.append(v)
            ders.append(dv)
        if len(vals) == 1:
            return vals[0], ders[0]
        return np.concatenate(vals, axis=-1), np.concatenate(ders, axis=-1)

    def _knot_cache(self, dtype) -> KnotCache:
        c = self._knots
        if c is None or not c.matches(self.lo, self.hi, dtype):
            spl = self.dictionary.spline
            c = self._knots = KnotCache(self.lo, self.hi, spl.grid_intervals, spl.degree, dtype)
        return c

    def term_slice(self, m: int) -> slice:
        s = int(self.term_start[m])
        return slice(s, s + self.terms[m].width)


def _gate_values(layer: Layer, mode: str, fixed_open: bool, noise, consts):
    if fixed_open:
        z = np.ones_like(layer.alpha)
        return z, np.zeros_like(z)
    if mode == "deterministic":
        z = G.threshold_gate(layer.alpha, *consts).astype(layer.alpha.dtype)
        return z, np.zeros_like(z)
    if noise is None:
        raise ConfigurationError("stochastic forward needs one uniform per gate")
    u = np.asarray(noise, dtype=layer.alpha.dtype)
    if u.shape != layer.alpha.shape:
        raise ConfigurationError(f"noise shape {u.shape} does not match gates {layer.alpha.shape}")
    return G.sample_gate(layer.alpha, u, *consts)


@dataclass
class LayerRecord:
    x: np.ndarray
    feats: np.ndarray
    dfeats: np.ndarray
    z: np.ndarray
    dz: np.ndarray
    W: np.ndarray  # (n_in*D, n_pre), effective weights
    pre: np.ndarray
    rep: dict = field(default_factory=dict)  # (i, j) -> derivative d phi_ij / dx_i


@dataclass
class Tape:
    records: list
    version: int
    network_id: int
    squeeze: bool


@dataclass
class Gradients:
    coef: list
    alpha: list
    x: np.ndarray


class Network:
    """S2KAN model. ``mode`` is ``"stochastic"`` (sampled gates) or ``"deterministic"``."""

    def __init__(self, spec: NetworkSpec, gates_fixed_open: bool = False,
                 tau: float = G.TAU, gamma: float = G.GAMMA, zeta: float = G.ZETA,
                 dtype=float):
        G.check_gate_constants(tau, gamma, zeta)
        self.spec = spec
        self.gates_fixed_open = gates_fixed_open
        self.gate_constants = (tau, gamma, zeta)
        self.mode = "deterministic"
        self.version = 0
        d = spec.dictionary
        lo, hi = (d.spline.lo, d.spline.hi) if d.spline is not None else (-1.0, 1.0)
        widths = spec.widths
        self.layers = [Layer(widths[l], s, m, d, lo, hi, dtype)
                       for l, (s, m) in enumerate(spec.layers)]

    # -- construction ------------------------------------------------------

    @classmethod
    def build(cls, spec: NetworkSpec, rng=None, gates_fixed_open: bool = False,
              **gate_kw) -> "Network":
        """Fresh network with the standard initialization.

        Non-spline coefficients ~ U(-0.05, 0.05); spline terms get SiLU weight 1 and small
        uniform noise on the B-spline coefficients; gates ~ N(0, 0.1) except spline gates at -1.
        """
        rng = np.random.default_rng(rng)
        net = cls(spec, gates_fixed_open=gates_fixed_open, **gate_kw)
        for layer in net.layers:
            layer.coef[...] = rng.uniform(-0.05, 0.05, layer.coef.shape)
            layer.alpha[...] = rng.normal(0.0, 0.1, layer.alpha.shape)
            for m, t in enumerate(layer.terms):
                if t.family == "spline":
                    sl = layer.term_slice(m)
                    n_grid = spec.dictionary.spline.grid_intervals
                    layer.coef[:, :, sl.start] = 1.0
                    layer.coef[:, :, sl.start + 1:sl.stop] = rng.uniform(
                        -0.5, 0.5, layer.coef[:, :, sl.start + 1:sl.stop].shape) * 0.1 / n_grid
                    layer.alpha[:, :, m] = -1.0
        return net

    def copy(self, dtype=None) -> "Network":
        other = deserialize(serialize(self))
        other.mode = self.mode
        for a, b in zip(other.layers, self.layers):
            a.range_min[...] = b.range_min
            a.range_max[...] = b.range_max
            if dtype is not None:
                a.coef = a.coef.astype(dtype)
                a.alpha = a.alpha.astype(dtype)
                a.edge_mask = a.edge_mask.astype(dtype)
        return other

    # -- bookkeeping ---------------------------------------------------------

    @property
    def params(self) -> list[np.ndarray]:
        """Trainable arrays (views): coefficients then gate locations, per layer."""
        out = []
        for layer in self.layers:
            out.append(layer.coef)
            if not self.gates_fixed_open:
                out.append(layer.alpha)
        return out

    def touch(self):
        self.version += 1

    def n_edges(self) -> int:
        return sum(l.n_in * l.n_pre for l in self.layers)

    def n_gates(self) -> int:
        return sum(l.alpha.size for l in self.layers)

    def draw_noise(self, rng) -> list:
        """One clamped uniform per gate for a stochastic forward pass."""
        if self.gates_fixed_open:
            return [None] * len(self.layers)
        flat = G.clamp_uniform(rng.random(self.n_gates()))
        out, pos = [], 0
        for layer in self.layers:
            n = layer.alpha.size
            out.append(flat[pos:pos + n].reshape(layer.alpha.shape))
            pos += n
        return out

    def gate_probabilities(self) -> list:
        if self.gates_fixed_open:
            return [np.ones(l.alpha.shape) for l in self.layers]
        return [G.expected_gate(l.alpha, *self.gate_constants) * (l.edge_mask[..., None] > 0)
                for l in self.layers]

    def edge(self, l: int, i: int, j: int) -> ActivationEdge:
        layer = self.layers[l]
        terms = []
        for m, t in enumerate(layer.terms):
            terms.append(DictionaryTerm(
                t.family, t.label,
                G.GateParams(float(layer.alpha[i, j, m]), *self.gate_constants),
                layer.coef[i, j, layer.term_slice(m)].copy()))
        return ActivationEdge(l, i, j, terms, (float(layer.lo[i]), float(layer.hi[i])),
                              (float(layer.range_min[i]), float(layer.range_max[i])),
                              layer.replacements.get((i, j)))

    # -- forward / backward -----------------------------------------------

    def forward(self, x, noise=None, mode: str | None = None, track_range: bool = True):
        """Evaluate the network; returns ``(y, tape)``.

        ``x`` is ``(n_0,)`` or ``(batch, n_0)``. In stochastic mode ``noise`` is a list with one
        array of uniforms per layer (see :meth:`draw_noise`), shared by every sample.
        """
        mode = mode or self.mode
        x = np.asarray(x)
        if not np.issubdtype(x.dtype, np.floating):
            x = x.astype(float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise ConfigurationError(
                f"expected inputs of width {self.spec.input_dim}, got shape {x.shape}")
        if noise is None:
            noise = [None] * len(self.layers)
        dtype = self.layers[0].coef.dtype
        h = x.astype(dtype, copy=False)
        records = []
        for l, layer in enumerate(self.layers):
            if track_range:
                np.minimum(layer.range_min, h.min(axis=0), out=layer.range_min)
                np.maximum(layer.range_max, h.max(axis=0), out=layer.range_max)
            z, dz = _gate_values(layer, mode, self.gates_fixed_open, noise[l], self.gate_constants)
            feats, dfeats = layer.features(h)
            Weff = layer.coef * (z[..., layer.term_of_coef] * layer.edge_mask[..., None])
            W = Weff.transpose(0, 2, 1).reshape(-1, layer.n_pre)
            batch = h.shape[0]
            pre = feats.reshape(batch, -1) @ W
            rep = {}
            for (i, j), fit in layer.replacements.items():
                v, dv = fit.evaluate(h[:, i])
                pre[:, j] += v
                rep[(i, j)] = dv
            if not np.all(np.isfinite(pre)):
                raise NonFiniteError("non-finite activation", self._locate(l, feats, Weff, pre))
            records.append(LayerRecord(h, feats, dfeats, z, dz, W, pre, rep))
            ns = layer.n_sum
            if layer.n_mult:
                prod = pre[:, ns::2] * pre[:, ns + 1::2]
                h = np.concatenate([pre[:, :ns], prod], axis=1) if ns else prod
            else:
                h = pre
            if not np.all(np.isfinite(h)):
                raise NonFiniteError("non-finite node output", {"layer": l})
        y = h[0] if squeeze else h
        return y, Tape(records, self.version, id(self), squeeze)

    def _locate(self, l, feats, Weff, pre):
        with np.errstate(all="ignore"):
            phi = np.einsum("bid,ijd->bij", feats, Weff)
        bad = np.argwhere(~np.isfinite(phi))
        if bad.size:
            b, i, j = bad[0]
            return {"layer": l, "in": int(i), "out": int(j), "sample": int(b)}
        b, j = np.argwhere(~np.isfinite(pre))[0]
        return {"layer": l, "out": int(j), "sample": int(b)}

    def backward(self, tape: Tape, dy) -> Gradients:
        """Reverse pass: gradients of a scalar loss given ``dLoss/dy``."""
        if tape.network_id != id(self) or tape.version != self.version:
            raise StaleTapeError("tape does not match the current network parameters")
        g = np.asarray(dy, dtype=self.layers[0].coef.dtype)
        if tape.squeeze:
            g = g[None, :]
        n_layers = len(self.layers)
        dcoef = [None] * n_layers
        dalpha = [None] * n_layers
        for l in range(n_layers - 1, -1, -1):
            layer, rec = self.layers[l], tape.records[l]
            ns, nm = layer.n_sum, layer.n_mult
            batch = rec.x.shape[0]
            if nm:
                dpre = np.empty((batch, layer.n_pre), dtype=g.dtype)
                dpre[:, :ns] = g[:, :ns]
                gm = g[:, ns:]
                dpre[:, ns::2] = gm * rec.pre[:, ns + 1::2]
                dpre[:, ns + 1::2] = gm * rec.pre[:, ns::2]
            else:
                dpre = g
            D = rec.feats.shape[-1]
            dW = (rec.feats.reshape(batch, -1).T @ dpre).reshape(layer.n_in, D, layer.n_pre)
            dW = dW.transpose(0, 2, 1) * layer.edge_mask[..., None]
            dcoef[l] = dW * rec.z[..., layer.term_of_coef]
            if self.gates_fixed_open:
                dalpha[l] = np.zeros_like(layer.alpha)
            else:
                dzc = dW * layer.coef
                dz = np.add.reduceat(dzc, layer.term_start, axis=-1)
                dalpha[l] = dz * rec.dz
            dfeat = (dpre @ rec.W.T).reshape(batch, layer.n_in, D)
            g = np.einsum("bid,bid->bi", dfeat, rec.dfeats)
            for (i, j), dv in rec.rep.items():
                g[:, i] += dpre[:, j] * dv
        gx = g[0] if tape.squeeze else g
        return Gradients(dcoef, dalpha, gx)

    def __call__(self, x):
        return self.forward(x, mode="deterministic", track_range=False)[0]

    def predict(self, x):
        return self(x)

    # -- complexity accounting --------------------------------------------

    def expected_active_terms(self) -> tuple[float, float]:
        """``(k, k_weighted)``: sums of gate probabilities, unweighted and weighted."""
        k = kw = 0.0
        for layer, p in zip(self.layers, self.gate_probabilities()):
            k += float(p.sum())
            kw += float((p * layer.weights).sum())
        return k, kw

    def penalty_grad_alpha(self) -> list:
        """``d k_weighted / d alpha`` per layer (zeros for masked edges)."""
        out = []
        for layer in self.layers:
            p = G.expected_gate(layer.alpha, *self.gate_constants)
            out.append(layer.weights * p * (1.0 - p) * (layer.edge_mask[..., None] > 0))
        return out

    def family_mean_p(self) -> dict:
        ps = self.gate_probabilities()
        out = {}
        for fam in ("symbolic", "spline", "fourier", "chebyshev"):
            vals = [p[..., l.family_of_term == fam].ravel() for l, p in zip(self.layers, ps)]
            vals = np.concatenate(vals) if vals else np.empty(0)
            out[fam] = float(vals.mean()) if vals.size else float("nan")
        return out

    def layer_mean_p(self) -> list:
        return [float(p.mean()) for p in self.gate_probabilities()]

    def active_gates(self) -> list:
        """Deterministic 0/1 gate values per layer (replaced edges contribute no gates)."""
        if self.gates_fixed_open:
            return [np.ones(l.alpha.shape) * (l.edge_mask[..., None] > 0) for l in self.layers]
        return [G.threshold_gate(l.alpha, *self.gate_constants) * (l.edge_mask[..., None] > 0)
                for l in self.layers]

    def active_summary(self) -> "ModelSummary":
        per_edge = []
        n_terms = n_symbolic = 0
        k_params = 0
        active_funcs = 0
        for l, (layer, z) in enumerate(zip(self.layers, self.active_gates())):
            counts = z.sum(axis=-1).astype(int)
            for i in range(layer.n_in):
                for j in range(layer.n_pre):
                    c = int(counts[i, j]) + (1 if (i, j) in layer.replacements else 0)
                    per_edge.append(((l, i, j), c))
                    if c:
                        active_funcs += 1
            for m, t in enumerate(layer.terms):
                open_m = int(z[..., m].sum())
                n_terms += open_m
                if t.family in SYMBOLIC_FAMILIES:
                    n_symbolic += open_m
                # the dense term counts as the original-KAN parameterization: w_b, w_s, G+K coeffs
                k_params += open_m * (t.width + 1 if t.family == "spline" else 1)
            for (i, j), fit in layer.replacements.items():
                n_terms += 1
                n_symbolic += 1
                k_params += 4
        pct = 100.0 * n_symbolic / n_terms if n_terms else 0.0
        return ModelSummary(active_funcs, k_params, n_terms, pct, per_edge)

    # -- grid updates --------------------------------------------------------

    def reset_ranges(self):
        for layer in self.layers:
            layer.range_min.fill(np.inf)
            layer.range_max.fill(-np.inf)

    def grid_update(self):
        """Move Chebyshev / spline domains onto the observed preactivation ranges.

        The new domain is the running range padded by 5% on each side. Spline coefficients are
        refit by least squares so the new spline reproduces the old one where the two domains
        overlap. Over the rest of the new domain the old activation (flat, since inputs are
        clamped) enters with a small weight; without it, basis functions that barely touch the
        overlap get wild coefficients. A tiny first-difference ridge fixes anything left.
        Running ranges are reset afterwards.
        """
        d = self.spec.dictionary
        for l, layer in enumerate(self.layers):
            if not np.all(np.isfinite(layer.range_min)):
                raise ConfigurationError(f"layer {l} has no observed preactivation range")
            width = layer.range_max - layer.range_min
            pad = np.where(width > 0, GRID_PAD * width,
                           GRID_PAD * np.maximum(1.0, np.abs(layer.range_min)))
            new_lo = layer.range_min - pad
            new_hi = layer.range_max + pad
            if d.spline is not None:
                self._refit_splines(layer, new_lo, new_hi)
            layer.lo[...] = new_lo
            layer.hi[...] = new_hi
        self.reset_ranges()
        self.touch()

    def _refit_splines(self, layer: Layer, new_lo, new_hi):
        spl = self.spec.dictionary.spline
        m = [k for k, t in enumerate(layer.terms) if t.family == "spline"][0]
        sl = layer.term_slice(m)
        nb = spl.n_basis
        diff = (np.eye(nb, k=1) - np.eye(nb))[:-1]
        for i in range(layer.n_in):
            old_c = layer.coef[i, :, sl.start + 1:sl.stop].T.astype(float)  # (nb, n_pre)

            def sample(xs):
                old_B, _ = spline_features(xs, layer.lo[i], layer.hi[i], spl.grid_intervals,
                                           spl.degree)
                new_B, _ = spline_features(xs, new_lo[i], new_hi[i], spl.grid_intervals,
                                           spl.degree)
                return new_B[:, 1:], old_B[:, 1:] @ old_c

            a = max(layer.lo[i], new_lo[i])
            b = min(layer.hi[i], new_hi[i])
            grid = np.linspace(new_lo[i], new_hi[i], REFIT_POINTS)
            if b - a <= 1e-12 * max(1.0, abs(a), abs(b)):
                A, y = sample(grid)
                sol = _ridge_fit(A, y, A[:0], y[:0], diff, 0.0)
            else:
                A_in, y_in = sample(np.linspace(a, b, REFIT_POINTS))
                A_out, y_out = sample(grid[(grid < a) | (grid > b)])
                sol = _overlap_first_fit(A_in, y_in, A_out, y_out, diff)
            layer.coef[i, :, sl.start + 1:sl.stop] = sol.T


def _ridge_fit(A_in, y_in, A_out, y_out, diff, w):
    A = np.vstack([A_in, w * A_out, np.sqrt(REFIT_RIDGE) * diff])
    rhs = np.vstack([y_in, w * y_out, np.zeros((diff.shape[0], y_in.shape[1]))])
    return lstsq(A, rhs, lapack_driver="gelsd")[0]


def _overlap_first_fit(A_in, y_in, A_out, y_out, diff):
    """Match the old spline on the overlap, then lean on its clamped extension where that is free.

    The extension enters with weight w, raised (log bisection) as far as the overlap residual
    stays within REFIT_SLACK of its best value. A function the new basis represents keeps w at
    the floor and is reproduced exactly; wiggles too fine for a much coarser grid no longer get
    extrapolated into huge coefficients.
    """
    def overlap_residual(log_w):
        sol = _ridge_fit(A_in, y_in, A_out, y_out, diff, 10.0 ** log_w)
        return np.linalg.norm(A_in @ sol - y_in), sol

    best, sol = overlap_residual(-np.inf)
    if not len(y_out):
        return sol
    budget = (1 + REFIT_SLACK) * best + 1e-9 * np.linalg.norm(y_in) / np.sqrt(len(y_in))
    lo, hi = REFIT_LOG_W
    res, cand = overlap_residual(lo)
    if res > budget:
        return sol
    sol = cand
    for _ in range(24):
        mid = 0.5 * (lo + hi)
        res, cand = overlap_residual(mid)
        if res <= budget:
            lo, sol = mid, cand
        else:
            hi = mid
    return sol


@dataclass
class ModelSummary:
    active_functions: int
    k: int
    active_terms: int
    percent_symbolic: float
    per_edge: list

    def as_dict(self) -> dict:
        return {"active_functions": self.active_functions, "k": self.k,
                "active_terms": self.active_terms, "percent_symbolic": self.percent_symbolic}


# ---------------------------------------------------------------------------
# checkpoint format


def _term_record(t: TermInfo, alpha: float, coeffs) -> dict:
    rec = {"kind": t.label, "family": t.family, "alpha": float(alpha),
           "coeffs": [float(c) for c in coeffs]}
    if t.family == "chebyshev":
        rec["degree"] = t.index
    elif t.family == "fourier":
        rec["mode"] = t.index // 2 + 1
    return rec


def to_dict(net: Network) -> dict:
    tau, gamma, zeta = net.gate_constants
    layers = []
    for l, layer in enumerate(net.layers):
        edges = []
        for i in range(layer.n_in):
            for j in range(layer.n_pre):
                rec = {"in": i, "out": j,
                       "domain": [float(layer.lo[i]), float(layer.hi[i])],
                       "enabled": bool(layer.edge_mask[i, j] > 0),
                       "terms": [_term_record(t, layer.alpha[i, j, m],
                                              layer.coef[i, j, layer.term_slice(m)])
                                 for m, t in enumerate(layer.terms)]}
                if (i, j) in layer.replacements:
                    rec["replacement"] = layer.replacements[(i, j)].to_dict()
                edges.append(rec)
        layers.append({"n_sum": layer.n_sum, "n_mult": layer.n_mult,
                       "lo": [float(v) for v in layer.lo], "hi": [float(v) for v in layer.hi],
                       "edges": edges})
    return {
        "format_version": FORMAT_VERSION,
        "spec": {"input_dim": net.spec.input_dim,
                 "layers": [list(w) for w in net.spec.layers],
                 "shape": net.spec.shape_string(),
                 "dictionary": net.spec.dictionary.to_dict(),
                 "gates": {"tau": tau, "gamma": gamma, "zeta": zeta,
                           "fixed_open": net.gates_fixed_open}},
        "mode": net.mode,
        "layers": layers,
    }


def from_dict(d: dict) -> Network:
    from .symbolify import AffineSymbolic

    if not isinstance(d, dict) or "format_version" not in d:
        raise MalformedFileError("checkpoint lacks format_version")
    if d["format_version"] != FORMAT_VERSION:
        raise VersionMismatchError(
            f"checkpoint format {d['format_version']} unsupported (expected {FORMAT_VERSION})")
    try:
        s = d["spec"]
        spec = NetworkSpec(int(s["input_dim"]), [tuple(w) for w in s["layers"]],
                           DictionaryConfig.from_dict(s["dictionary"]))
        gk = s["gates"]
        net = Network(spec, gates_fixed_open=bool(gk["fixed_open"]),
                      tau=gk["tau"], gamma=gk["gamma"], zeta=gk["zeta"])
        net.mode = d.get("mode", "deterministic")
        for layer, ld in zip(net.layers, d["layers"], strict=True):
            layer.lo[...] = ld["lo"]
            layer.hi[...] = ld["hi"]
            if len(ld["edges"]) != layer.n_in * layer.n_pre:
                raise MalformedFileError("edge count does not match the network shape")
            for e in ld["edges"]:
                i, j = int(e["in"]), int(e["out"])
                layer.edge_mask[i, j] = 1.0 if e.get("enabled", True) else 0.0
                if len(e["terms"]) != len(layer.terms):
                    raise MalformedFileError(f"edge {(i, j)} has the wrong number of terms")
                for m, t in enumerate(e["terms"]):
                    layer.alpha[i, j, m] = t["alpha"]
                    layer.coef[i, j, layer.term_slice(m)] = t["coeffs"]
                if "replacement" in e:
                    layer.replacements[(i, j)] = AffineSymbolic.from_dict(e["replacement"])
    except MalformedFileError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise MalformedFileError(f"malformed checkpoint: {exc}") from exc
    return net


def serialize(net: Network) -> str:
    return json.dumps(to_dict(net))


def deserialize(text: str) -> Network:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedFileError(f"checkpoint is not valid JSON: {exc}") from exc
    return from_dict(d)


def save(net: Network, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize(net))


def load(path) -> Network:
    with open(path, encoding="utf-8") as fh:
        return deserialize(fh.read())


# convenience free functions mirroring the method API

def forward(net: Network, x, noise=None):
    return net.forward(x, noise)


def backward(net: Network, tape: Tape, dy) -> Gradients:
    return net.backward(tape, dy)


def expected_active_terms(net: Network):
    return net.expected_active_terms()


def grid_update(net: Network) -> None:
    net.grid_update()


def active_summary(net: Network) -> ModelSummary:
    return net.active_summary()


__all__ = [
    "ActivationEdge", "DictionaryConfig", "DictionaryTerm", "Gradients", "Kind", "Layer",
    "ModelSummary", "Network", "NetworkSpec", "Tape", "active_summary", "backward",
    "deserialize", "expected_active_terms", "forward", "grid_update", "load", "parse_shape",
    "save", "serialize",
]
