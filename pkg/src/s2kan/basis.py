"""Candidate univariate functions for activation dictionaries.

Three families live here:

* symbolic primitives (``1``, ``x``, ``1/x``, ``sin`` ...), optionally in protected form;
* sparse bases: Chebyshev polynomials on a tracked domain and natural-frequency Fourier modes;
* the dense term: clamped uniform B-splines plus a SiLU residual.

Every evaluator returns values together with derivatives with respect to the input, so the
network's backward pass never differentiates numerically. All evaluators broadcast over numpy
arrays; scalar inputs give scalar outputs.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, DomainViolationError

EPS_PROTECT = 1e-8
EXP_CAP = 50.0
MIN_WIDTH = 1e-12


class Kind(str, enum.Enum):
    ONE = "1"
    IDENTITY = "x"
    SQUARE = "x^2"
    CUBE = "x^3"
    RECIPROCAL = "1/x"
    SQRT = "sqrt"
    LOG1P = "log(x+1)"
    LOG = "log"
    EXP = "exp"
    SIN = "sin"
    COS = "cos"
    RECIPROCAL_SHIFTED = "1/(1+x)"
    BELL = "1/(1+x^2)"


_ALIASES = {
    "one": Kind.ONE, "const": Kind.ONE, "constant": Kind.ONE,
    "identity": Kind.IDENTITY, "id": Kind.IDENTITY,
    "square": Kind.SQUARE, "x2": Kind.SQUARE, "x**2": Kind.SQUARE,
    "cube": Kind.CUBE, "x3": Kind.CUBE, "x**3": Kind.CUBE,
    "reciprocal": Kind.RECIPROCAL, "inv": Kind.RECIPROCAL,
    "sqrt(x)": Kind.SQRT,
    "log1p": Kind.LOG1P, "log(1+x)": Kind.LOG1P,
    "log(x)": Kind.LOG, "log|x|": Kind.LOG,
    "exp(x)": Kind.EXP, "sin(x)": Kind.SIN, "cos(x)": Kind.COS,
    "reciprocal-shifted": Kind.RECIPROCAL_SHIFTED, "1/(x+1)": Kind.RECIPROCAL_SHIFTED,
    "bell": Kind.BELL, "1/(x^2+1)": Kind.BELL,
}

# Default post-hoc ranking complexities: polynomials 1, transcendental 2, rational 3.
DEFAULT_COMPLEXITY = {
    Kind.ONE: 1.0, Kind.IDENTITY: 1.0, Kind.SQUARE: 1.0, Kind.CUBE: 1.0,
    Kind.SIN: 2.0, Kind.COS: 2.0, Kind.SQRT: 2.0, Kind.EXP: 2.0, Kind.LOG: 2.0, Kind.LOG1P: 2.0,
    Kind.RECIPROCAL: 3.0, Kind.RECIPROCAL_SHIFTED: 3.0, Kind.BELL: 3.0,
}


def parse_kind(name: str | Kind) -> Kind:
    if isinstance(name, Kind):
        return name
    key = str(name).strip().replace(" ", "")
    try:
        return Kind(key)
    except ValueError:
        pass
    if key.lower() in _ALIASES:
        return _ALIASES[key.lower()]
    raise ConfigurationError(f"unknown symbolic primitive {name!r}")


@dataclass(frozen=True)
class SymbolicPrimitive:
    kind: Kind
    protected: bool = True

    @classmethod
    def parse(cls, name, protected: bool = True) -> "SymbolicPrimitive":
        return cls(parse_kind(name), protected)

    @property
    def name(self) -> str:
        return self.kind.value

    @property
    def complexity(self) -> float:
        return DEFAULT_COMPLEXITY[self.kind]

    def __call__(self, x):
        return eval_symbolic(self, x)[0]


def _out(v, d, scalar):
    if scalar:
        return float(v), float(d)
    return v, d


def _safe_denominator(u):
    small = np.abs(u) < EPS_PROTECT
    return np.where(small, np.where(u < 0, -EPS_PROTECT, EPS_PROTECT), u), small


def eval_symbolic(prim: SymbolicPrimitive, x):
    """Value and input-derivative of a primitive.

    Protected forms keep both outputs finite for any finite ``x``: reciprocals clamp the
    denominator magnitude to ``EPS_PROTECT``, ``sqrt`` acts on ``|x|``, logarithms act on
    ``max(|arg|, EPS_PROTECT)`` and ``exp`` saturates at ``EXP_CAP``. Where a protection is
    active the derivative is that of the protected expression (zero on clamped pieces).
    """
    scalar = np.ndim(x) == 0
    x = np.asarray(x, dtype=float) if not isinstance(x, np.ndarray) else x
    k = prim.kind
    if not prim.protected:
        _check_domain(k, x)

    if k is Kind.ONE:
        return _out(np.ones_like(x), np.zeros_like(x), scalar)
    if k is Kind.IDENTITY:
        return _out(x.copy(), np.ones_like(x), scalar)
    if k is Kind.SQUARE:
        return _out(x * x, 2.0 * x, scalar)
    if k is Kind.CUBE:
        return _out(x * x * x, 3.0 * x * x, scalar)
    if k is Kind.SIN:
        return _out(np.sin(x), np.cos(x), scalar)
    if k is Kind.COS:
        return _out(np.cos(x), -np.sin(x), scalar)
    if k is Kind.BELL:
        den = 1.0 + x * x
        return _out(1.0 / den, -2.0 * x / (den * den), scalar)

    if not prim.protected:
        with np.errstate(over="ignore"):
            if k is Kind.RECIPROCAL:
                return _out(1.0 / x, -1.0 / (x * x), scalar)
            if k is Kind.RECIPROCAL_SHIFTED:
                u = 1.0 + x
                return _out(1.0 / u, -1.0 / (u * u), scalar)
            if k is Kind.SQRT:
                r = np.sqrt(x)
                with np.errstate(divide="ignore"):
                    return _out(r, 0.5 / r, scalar)
            if k is Kind.LOG1P:
                return _out(np.log1p(x), 1.0 / (1.0 + x), scalar)
            if k is Kind.LOG:
                return _out(np.log(x), 1.0 / x, scalar)
            if k is Kind.EXP:
                e = np.exp(x)
                return _out(e, e, scalar)

    if k is Kind.RECIPROCAL or k is Kind.RECIPROCAL_SHIFTED:
        u = x if k is Kind.RECIPROCAL else 1.0 + x
        us, small = _safe_denominator(u)
        v = 1.0 / us
        return _out(v, np.where(small, 0.0, -v * v), scalar)
    if k is Kind.SQRT:
        ax = np.abs(x)
        return _out(np.sqrt(ax), np.sign(x) * 0.5 / np.sqrt(np.maximum(ax, EPS_PROTECT)), scalar)
    if k is Kind.LOG1P or k is Kind.LOG:
        u = 1.0 + x if k is Kind.LOG1P else x
        au = np.abs(u)
        big = au > EPS_PROTECT
        v = np.log(np.maximum(au, EPS_PROTECT))
        if k is Kind.LOG1P:
            v = np.where(u > EPS_PROTECT, np.log1p(np.maximum(x, EPS_PROTECT - 1.0)), v)
        return _out(v, np.where(big, 1.0 / np.where(big, u, 1.0), 0.0), scalar)
    if k is Kind.EXP:
        e = np.exp(np.minimum(x, EXP_CAP))
        return _out(e, np.where(x < EXP_CAP, e, 0.0), scalar)
    raise ConfigurationError(f"no evaluator for {k}")  # pragma: no cover


def _check_domain(k: Kind, x: np.ndarray) -> None:
    bad = None
    if k is Kind.RECIPROCAL or k is Kind.LOG:
        bad = (x == 0) if k is Kind.RECIPROCAL else (x <= 0)
    elif k is Kind.RECIPROCAL_SHIFTED:
        bad = x == -1
    elif k is Kind.SQRT:
        bad = x < 0
    elif k is Kind.LOG1P:
        bad = x <= -1
    if bad is not None and np.any(bad):
        raise DomainViolationError(k.value, float(np.asarray(x)[bad].flat[0]))


# ---------------------------------------------------------------------------
# Chebyshev


@dataclass(frozen=True)
class ChebyshevBasis:
    max_degree: int
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        if self.max_degree < 0:
            raise ConfigurationError("Chebyshev degree must be non-negative")
        _check_interval(self.lo, self.hi)

    @property
    def size(self) -> int:
        return self.max_degree + 1


def _check_interval(lo, hi):
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ConfigurationError(f"non-finite domain [{lo}, {hi}]")
    if np.any(np.asarray(hi) - np.asarray(lo) < MIN_WIDTH):
        raise ConfigurationError(f"degenerate domain [{lo}, {hi}]")


def chebyshev_features(x, lo, hi, degree: int):
    """``T_0..T_degree`` of the affinely rescaled, clamped input, plus d/dx.

    ``lo``/``hi`` broadcast against ``x``; outputs gain a trailing axis of length ``degree + 1``.
    The derivative carries the ``2 / (hi - lo)`` factor and is zero where ``x`` was clamped.
    """
    x = np.asarray(x, dtype=float) if not isinstance(x, np.ndarray) else x
    scale = 2.0 / (hi - lo)
    xc = np.clip(x, lo, hi)
    t = (xc - lo) * scale - 1.0
    inside = (x >= lo) & (x <= hi)
    vals = np.empty(t.shape + (degree + 1,), dtype=t.dtype)
    dts = np.empty_like(vals)
    vals[..., 0] = 1.0
    dts[..., 0] = 0.0
    if degree >= 1:
        vals[..., 1] = t
        dts[..., 1] = 1.0
    for p in range(2, degree + 1):
        vals[..., p] = 2.0 * t * vals[..., p - 1] - vals[..., p - 2]
        dts[..., p] = 2.0 * vals[..., p - 1] + 2.0 * t * dts[..., p - 1] - dts[..., p - 2]
    dx = dts * (scale * inside)[..., None]
    return vals, dx


def eval_chebyshev(basis: ChebyshevBasis, x):
    vals, dx = chebyshev_features(x, basis.lo, basis.hi, basis.max_degree)
    return vals, dx


# ---------------------------------------------------------------------------
# Fourier


@dataclass(frozen=True)
class FourierBasis:
    max_mode: int

    def __post_init__(self):
        if self.max_mode < 1:
            raise ConfigurationError("Fourier basis needs at least one mode")

    @property
    def size(self) -> int:
        return 2 * self.max_mode


def fourier_features(x, modes: int):
    """Interleaved ``sin(qx), cos(qx)`` for ``q = 1..modes`` and their derivatives."""
    x = np.asarray(x, dtype=float) if not isinstance(x, np.ndarray) else x
    q = np.arange(1, modes + 1, dtype=x.dtype)
    qx = x[..., None] * q
    s, c = np.sin(qx), np.cos(qx)
    vals = np.empty(x.shape + (2 * modes,), dtype=x.dtype)
    dx = np.empty_like(vals)
    vals[..., 0::2] = s
    vals[..., 1::2] = c
    dx[..., 0::2] = q * c
    dx[..., 1::2] = -q * s
    return vals, dx


def eval_fourier(basis: FourierBasis, x):
    return fourier_features(x, basis.max_mode)


# ---------------------------------------------------------------------------
# B-splines with SiLU residual


def silu(x):
    s = expit(x)
    return x * s, s * (1.0 + x * (1.0 - s))


def clamped_knots(lo, hi, grid_intervals: int, degree: int) -> np.ndarray:
    """Uniform breakpoints on ``[lo, hi]`` with ``degree`` repeated knots at each end.

    ``lo``/``hi`` may be arrays of shape ``(n,)``; the result is then ``(n, G + 2K + 1)``.
    """
    _check_interval(lo, hi)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    u = np.linspace(0.0, 1.0, grid_intervals + 1)
    inner = lo[..., None] + (hi - lo)[..., None] * u
    inner[..., 0] = lo
    inner[..., -1] = hi
    left = np.repeat(lo[..., None], degree, axis=-1)
    right = np.repeat(hi[..., None], degree, axis=-1)
    return np.concatenate([left, inner, right], axis=-1)


class KnotCache:
    """Knot-dependent constants of the Cox-de Boor recurrence for fixed domains.

    Building these once per domain change keeps the per-call work to the recurrence itself.
    """

    def __init__(self, lo, hi, grid_intervals: int, degree: int, dtype=float):
        self.lo = np.array(lo, dtype=dtype)
        self.hi = np.array(hi, dtype=dtype)
        self.G, self.K = grid_intervals, degree
        t = clamped_knots(self.lo, self.hi, grid_intervals, degree).astype(dtype)
        self.inv_h = grid_intervals / (self.hi - self.lo)
        n_int = grid_intervals + 2 * degree
        self.levels = []
        for k in range(1, degree + 1):
            n_b = n_int - k
            left = t[..., :n_b]
            right = t[..., k + 1:k + 1 + n_b]
            d1 = t[..., k:k + n_b] - left
            d2 = right - t[..., 1:1 + n_b]
            inv1 = np.divide(1.0, d1, out=np.zeros_like(d1), where=d1 > 0)
            inv2 = np.divide(1.0, d2, out=np.zeros_like(d2), where=d2 > 0)
            self.levels.append((n_b, inv1, left * inv1, inv2, right * inv2))
        self.arange = np.arange(n_int)
        self.knots = t
        nk = t.shape[-1]
        self.t_flat = t.reshape(-1)
        self.node_offset = (np.arange(t.size // nk) * nk).reshape(t.shape[:-1]) if t.ndim > 1 else 0

    def matches(self, lo, hi, dtype) -> bool:
        return (self.lo.dtype == dtype and np.array_equal(self.lo, lo)
                and np.array_equal(self.hi, hi))


def _spans(x, cache: KnotCache):
    lo, hi = cache.lo, cache.hi
    xc = np.clip(x, lo, hi)
    span = np.minimum(((xc - lo) * cache.inv_h).astype(np.intp), cache.G - 1) + cache.K
    return xc, span


def bspline_features_dense(x, lo, hi, grid_intervals: int, degree: int, cache: KnotCache | None = None):
    """Full-width Cox-de Boor recurrence over every knot interval (reference evaluator)."""
    x = np.asarray(x, dtype=float) if not isinstance(x, np.ndarray) else x
    if cache is None:
        cache = KnotCache(lo, hi, grid_intervals, degree, x.dtype)
    K = degree
    xc, span = _spans(x, cache)
    inside = (x >= cache.lo) & (x <= cache.hi)
    prev = (span[..., None] == cache.arange).astype(x.dtype)
    xe = xc[..., None]
    deriv = None
    for k, (n_b, inv1, left_inv1, inv2, right_inv2) in enumerate(cache.levels, start=1):
        a = prev[..., :n_b]
        b = prev[..., 1:n_b + 1]
        if k == K:
            deriv = K * (a * inv1 - b * inv2)
        prev = (xe * inv1 - left_inv1) * a + (right_inv2 - xe * inv2) * b
    return prev, deriv * inside[..., None]


def bspline_features(x, lo, hi, grid_intervals: int, degree: int, cache: KnotCache | None = None):
    """Clamped B-spline values ``B_1..B_{G+K}`` and their x-derivatives.

    ``x`` has shape ``(..., n)`` and ``lo``/``hi`` shape ``(n,)`` (or scalars). Inputs are
    clamped into ``[lo, hi]``; the derivative is zero outside the domain. Only the ``K + 1``
    bases that are nonzero on each point's knot span are computed, then scattered.
    """
    x = np.asarray(x, dtype=float) if not isinstance(x, np.ndarray) else x
    if cache is None:
        cache = KnotCache(lo, hi, grid_intervals, degree, x.dtype)
    K = degree
    xc, span = _spans(x, cache)
    base = span + cache.node_offset
    t = cache.t_flat

    def knot(off):
        return t[base + off]

    left = [None] + [xc - knot(1 - j) for j in range(1, K + 1)]
    right = [None] + [knot(j) - xc for j in range(1, K + 1)]
    N = [np.ones_like(xc)]
    lower = N
    for j in range(1, K + 1):
        if j == K:
            lower = N
        nxt = []
        saved = 0.0
        for r in range(j):
            temp = N[r] / (right[r + 1] + left[j - r])
            nxt.append(saved + right[r + 1] * temp)
            saved = left[j - r] * temp
        nxt.append(saved)
        N = nxt
    # derivative from the degree K-1 bases on the same span
    inside = ((x >= cache.lo) & (x <= cache.hi)).astype(x.dtype)
    dN = []
    for r in range(K + 1):
        d = 0.0
        if r >= 1:
            d = lower[r - 1] / (knot(r) - knot(r - K))
        if r < K:
            d = d - lower[r] / (knot(r + 1) - knot(r + 1 - K))
        dN.append(K * d * inside)
    n_basis = grid_intervals + degree
    vals = np.zeros(x.shape + (n_basis,), dtype=x.dtype)
    ders = np.zeros_like(vals)
    first = (span - K).reshape(-1) + np.arange(0, span.size * n_basis, n_basis)
    flat_v, flat_d = vals.reshape(-1), ders.reshape(-1)
    for r in range(K + 1):
        flat_v[first + r] = N[r].reshape(-1)
        flat_d[first + r] = dN[r].reshape(-1)
    return vals, ders


@dataclass(frozen=True)
class SplineBasis:
    grid_intervals: int = 10
    degree: int = 3
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        if self.grid_intervals < 1 or self.degree < 1:
            raise ConfigurationError("spline needs G >= 1 and K >= 1")
        _check_interval(self.lo, self.hi)

    @property
    def n_basis(self) -> int:
        return self.grid_intervals + self.degree

    @property
    def n_coeffs(self) -> int:
        """SiLU residual weight plus one coefficient per B-spline."""
        return self.n_basis + 1

    @property
    def knots(self) -> np.ndarray:
        return clamped_knots(self.lo, self.hi, self.grid_intervals, self.degree)

    def basis(self, x):
        return bspline_features(x, self.lo, self.hi, self.grid_intervals, self.degree)


def spline_features(x, lo, hi, grid_intervals: int, degree: int, cache: KnotCache | None = None):
    """Dense-term features ``(SiLU(x), B_1(x), ..., B_B(x))`` and their x-derivatives."""
    B, dB = bspline_features(x, lo, hi, grid_intervals, degree, cache)
    s, ds = silu(x)
    return (np.concatenate([s[..., None], B], axis=-1),
            np.concatenate([ds[..., None], dB], axis=-1))


def eval_spline(basis: SplineBasis, coeffs, x):
    """``c_0 SiLU(x) + sum_b c_b B_b(x)`` with derivatives in ``x`` and in the coefficients."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[-1] != basis.n_coeffs:
        raise ConfigurationError(
            f"spline expects {basis.n_coeffs} coefficients, got {coeffs.shape[-1]}")
    scalar = np.ndim(x) == 0
    feats, dfeats = spline_features(np.asarray(x, dtype=float), basis.lo, basis.hi,
                                    basis.grid_intervals, basis.degree)
    value = feats @ coeffs
    dvalue = dfeats @ coeffs
    if scalar:
        return float(value), float(dvalue), feats
    return value, dvalue, feats


def rebuild_knots(basis: SplineBasis, lo: float, hi: float) -> SplineBasis:
    _check_interval(lo, hi)
    return SplineBasis(basis.grid_intervals, basis.degree, float(lo), float(hi))
