"""Post-hoc symbolification of trained networks and expression extraction.

The post-hoc route fits every candidate ``c * S(a x + b) + d`` to an edge's learned activation,
ranks candidates by ``R^2 - 0.01 * complexity`` and substitutes the best one when its ``R^2``
clears a threshold. Expression extraction instead reads the open gates of an S2KAN directly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .basis import (
    Kind,
    SymbolicPrimitive,
    chebyshev_features,
    eval_symbolic,
    fourier_features,
    parse_kind,
    spline_features,
)
from .errors import ConfigurationError

N_SAMPLES = 201
A_GRID = 41
B_GRID = 41
RANK_WEIGHT = 0.01
DEFAULT_LIBRARY = ("1", "x", "x^2", "x^3", "1/x", "sqrt", "exp", "log", "sin", "cos")


@dataclass
class AffineSymbolic:
    """``c * S(a x + b) + d`` standing in for a replaced edge."""

    candidate: SymbolicPrimitive
    a: float
    b: float
    c: float
    d: float

    def evaluate(self, x):
        v, dv = eval_symbolic(self.candidate, self.a * x + self.b)
        return self.c * v + self.d, self.c * self.a * dv

    def to_dict(self) -> dict:
        return {"kind": self.candidate.name, "protected": self.candidate.protected,
                "a": self.a, "b": self.b, "c": self.c, "d": self.d}

    @classmethod
    def from_dict(cls, d: dict) -> "AffineSymbolic":
        prim = SymbolicPrimitive(parse_kind(d["kind"]), bool(d.get("protected", True)))
        return cls(prim, float(d["a"]), float(d["b"]), float(d["c"]), float(d["d"]))


@dataclass
class SymbolicFit:
    candidate: SymbolicPrimitive
    a: float
    b: float
    c: float
    d: float
    r2: float
    complexity: float
    accepted: bool = False

    @property
    def score(self) -> float:
        return self.r2 - RANK_WEIGHT * self.complexity

    def affine(self) -> AffineSymbolic:
        return AffineSymbolic(self.candidate, self.a, self.b, self.c, self.d)

    def predict(self, x):
        return self.affine().evaluate(np.asarray(x, dtype=float))[0]

    def as_dict(self) -> dict:
        return {"candidate": self.candidate.name, "a": self.a, "b": self.b, "c": self.c,
                "d": self.d, "r2": self.r2, "complexity": self.complexity,
                "score": self.score, "accepted": self.accepted}


def r_squared(y, y_hat) -> float:
    y = np.asarray(y, dtype=float)
    sse = float(np.sum((y - y_hat) ** 2))
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst <= 1e-300:
        return 1.0 if sse <= 1e-24 * max(1.0, float(np.sum(y * y))) else 0.0
    return 1.0 - sse / sst


def _profile(U, y):
    """Closed-form ``(c, d, sse)`` for regressing ``y`` on rows of ``U`` plus an intercept."""
    um = U.mean(axis=-1, keepdims=True)
    ym = y.mean()
    du = U - um
    var = np.sum(du * du, axis=-1)
    cov = du @ (y - ym)
    ok = var > 1e-300 * U.shape[-1]
    c = np.where(ok, cov / np.where(ok, var, 1.0), 0.0)
    d = ym - c * um[..., 0]
    sst = float(np.sum((y - ym) ** 2))
    sse = np.where(ok, sst - c * cov, sst)
    return c, d, np.maximum(sse, 0.0)


def _sse_at(prim, x, y, a, b):
    with np.errstate(all="ignore"):
        U = eval_symbolic(prim, a * x + b)[0][None, :]
    if not np.all(np.isfinite(U)):
        return np.inf, 0.0, float(np.mean(y))
    c, d, _ = _profile(U, y)
    resid = y - (c[0] * U[0] + d[0])
    return float(resid @ resid), float(c[0]), float(d[0])


def fit_candidate(x, y, candidate, complexity: float | None = None) -> SymbolicFit:
    """Fit ``c * S(a x + b) + d`` to samples by grid search over ``(a, b)`` then refinement.

    ``a`` runs over a signed log grid on ``[0.1, 10]``, ``b`` over the sample domain widened by
    one width on each side; ``(c, d)`` come from linear least squares at each point. The best
    grid point is polished by alternating 1-D minimizations until the relative improvement
    drops below 1e-6.
    """
    prim = candidate if isinstance(candidate, SymbolicPrimitive) else SymbolicPrimitive.parse(candidate)
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size < 10 or x.size != y.size:
        raise ConfigurationError("fit_candidate needs at least 10 paired samples")
    lo, hi = float(x.min()), float(x.max())
    if hi - lo <= 1e-12:
        raise ConfigurationError("degenerate samples: x is constant")
    if complexity is None:
        complexity = prim.complexity

    if prim.kind is Kind.ONE:
        c, d = 0.0, float(y.mean())
        fit = SymbolicFit(prim, 1.0, 0.0, c, d, 0.0, complexity)
        fit.r2 = r_squared(y, np.full_like(y, d))
        return fit

    mags = np.logspace(-1, 1, A_GRID)
    a_grid = np.concatenate([-mags[::-1], mags])
    w = hi - lo
    b_grid = np.linspace(lo - w, hi + w, B_GRID)
    A, B = np.meshgrid(a_grid, b_grid, indexing="ij")
    with np.errstate(all="ignore"):
        U = eval_symbolic(prim, A[..., None] * x + B[..., None])[0]
    U = U.reshape(-1, x.size)
    finite = np.all(np.isfinite(U), axis=-1)
    U = np.where(finite[:, None], U, 0.0)
    _, _, sse = _profile(U, y)
    sse = np.where(finite, sse, np.inf)
    best = int(np.argmin(sse))
    a, b = float(A.ravel()[best]), float(B.ravel()[best])
    cur = float(sse[best])

    da = max(abs(a) * (mags[1] / mags[0] - 1.0), 1e-3)
    db = b_grid[1] - b_grid[0]
    for _ in range(200):
        ra = minimize_scalar(lambda v: _sse_at(prim, x, y, v, b)[0],
                             bounds=(a - da, a + da), method="bounded",
                             options={"xatol": 1e-12 * max(1.0, abs(a))})
        if ra.fun < cur:
            a = float(ra.x)
        rb = minimize_scalar(lambda v: _sse_at(prim, x, y, a, v)[0],
                             bounds=(b - db, b + db), method="bounded",
                             options={"xatol": 1e-12 * max(1.0, abs(b))})
        if rb.fun < min(cur, ra.fun):
            b = float(rb.x)
        new = _sse_at(prim, x, y, a, b)[0]
        improved = (cur - new) / max(cur, 1e-300)
        cur = min(cur, new)
        if improved < 1e-6:
            break
    _, c, d = _sse_at(prim, x, y, a, b)
    fit = SymbolicFit(prim, a, b, c, d, 0.0, float(complexity))
    fit.r2 = r_squared(y, fit.predict(x))
    return fit


def _library(library):
    return [p if isinstance(p, SymbolicPrimitive) else SymbolicPrimitive.parse(p)
            for p in (library or DEFAULT_LIBRARY)]


def best_fit(x, y, library=None, complexities=None, threshold: float = 0.0):
    """Fit every candidate, rank them and mark the winner accepted iff its R^2 > threshold."""
    complexities = complexities or {}
    fits = [fit_candidate(x, y, p, complexities.get(p.name)) for p in _library(library)]
    fits.sort(key=lambda f: f.score, reverse=True)
    if fits and fits[0].r2 > threshold:
        fits[0].accepted = True
    return fits


def edge_activation(net, l: int, i: int, j: int, x):
    """Deterministic activation ``phi_lij`` evaluated at source values ``x``."""
    layer = net.layers[l]
    x = np.asarray(x, dtype=float)
    if (i, j) in layer.replacements:
        return layer.replacements[(i, j)].evaluate(x)[0]
    X = np.tile(x[:, None], (1, layer.n_in))
    feats, _ = layer.features(X)
    z = net.active_gates()[l][i, j]
    w = layer.coef[i, j] * z[layer.term_of_coef] * layer.edge_mask[i, j]
    return feats[:, i, :] @ w


@dataclass
class SymbolifyReport:
    threshold: float
    edges: list = field(default_factory=list)
    n_replaced: int = 0
    test_r2_before: float | None = None
    test_r2_after: float | None = None

    def as_dict(self) -> dict:
        return {"threshold": self.threshold, "n_replaced": self.n_replaced,
                "test_r2_before": self.test_r2_before, "test_r2_after": self.test_r2_after,
                "edges": self.edges}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)


def symbolify_network(net, library=None, threshold: float = 0.95, complexities=None,
                      test_data=None):
    """Replace each edge by its top-ranked symbolic fit when that fit's R^2 exceeds ``threshold``.

    Returns a modified copy of ``net`` and a :class:`SymbolifyReport`.
    """
    new = net.copy()
    new.mode = "deterministic"
    report = SymbolifyReport(threshold)
    if test_data is not None:
        report.test_r2_before = _r2_on(net, test_data)
    for l, layer in enumerate(new.layers):
        for i in range(layer.n_in):
            xs = np.linspace(layer.lo[i], layer.hi[i], N_SAMPLES)
            for j in range(layer.n_pre):
                if layer.edge_mask[i, j] == 0:
                    continue
                ys = edge_activation(net, l, i, j, xs)
                fits = best_fit(xs, ys, library, complexities, threshold)
                chosen = fits[0]
                entry = {"edge": [l, i, j], "candidates": [f.as_dict() for f in fits],
                         "chosen": chosen.candidate.name if chosen.accepted else None}
                report.edges.append(entry)
                if chosen.accepted:
                    layer.edge_mask[i, j] = 0.0
                    layer.replacements[(i, j)] = chosen.affine()
                    report.n_replaced += 1
    new.touch()
    if test_data is not None:
        report.test_r2_after = _r2_on(new, test_data)
    return new, report


def _r2_on(net, data) -> float:
    X, Y = data.as_pair() if hasattr(data, "as_pair") else data
    with np.errstate(all="ignore"):
        pred = net(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float)
    if not np.all(np.isfinite(pred)):
        return float("-inf")
    return 1.0 - float(np.sum((Y - pred) ** 2)) / float(np.sum((Y - Y.mean(axis=0)) ** 2))


# ---------------------------------------------------------------------------
# expression trees


def _fmt(v: float) -> str:
    return f"{v:.6g}"


class Expr:
    def evaluate(self, X):  # pragma: no cover - interface
        raise NotImplementedError

    def to_dict(self) -> dict:  # pragma: no cover - interface
        raise NotImplementedError


@dataclass
class Var(Expr):
    index: int
    name: str

    def evaluate(self, X):
        return X[:, self.index]

    def __str__(self):
        return self.name

    def to_dict(self):
        return {"type": "var", "index": self.index, "name": self.name}


@dataclass
class Const(Expr):
    value: float

    def evaluate(self, X):
        return np.full(X.shape[0], self.value)

    def __str__(self):
        return _fmt(self.value)

    def to_dict(self):
        return {"type": "const", "value": self.value}


@dataclass
class Sum(Expr):
    children: list

    def evaluate(self, X):
        out = np.zeros(X.shape[0])
        for c in self.children:
            out = out + c.evaluate(X)
        return out

    def __str__(self):
        return " + ".join(str(c) for c in self.children) if self.children else "0"

    def to_dict(self):
        return {"type": "sum", "children": [c.to_dict() for c in self.children]}


@dataclass
class Product(Expr):
    children: list

    def evaluate(self, X):
        out = np.ones(X.shape[0])
        for c in self.children:
            out = out * c.evaluate(X)
        return out

    def __str__(self):
        return "·".join(f"({c})" for c in self.children)

    def to_dict(self):
        return {"type": "product", "children": [c.to_dict() for c in self.children]}


@dataclass
class Term(Expr):
    """``coef * psi(arg)`` for one open dictionary term (or an affine replacement)."""

    family: str
    label: str
    coef: float
    arg: Expr
    params: dict = field(default_factory=dict)

    def _psi(self, u):
        p = self.params
        if self.family == "symbolic":
            return eval_symbolic(SymbolicPrimitive(parse_kind(p["kind"]), p["protected"]), u)[0]
        if self.family == "chebyshev":
            return chebyshev_features(u, p["lo"], p["hi"], p["degree"])[0][..., p["degree"]]
        if self.family == "fourier":
            return fourier_features(u, p["mode"])[0][..., p["slot"]]
        if self.family == "spline":
            feats, _ = spline_features(u, p["lo"], p["hi"], p["grid_intervals"], p["degree"])
            return feats @ np.asarray(p["coeffs"])
        raise ValueError(self.family)

    def evaluate(self, X):
        u = self.arg.evaluate(X)
        if self.family == "affine":
            p = self.params
            prim = SymbolicPrimitive(parse_kind(p["kind"]), p["protected"])
            return self.coef * eval_symbolic(prim, p["a"] * u + p["b"])[0] + p["d"]
        return self.coef * self._psi(u)

    def __str__(self):
        a = str(self.arg)
        inner = a if isinstance(self.arg, (Var, Const)) else f"({a})"
        c = _fmt(self.coef)
        p = self.params
        f = self.family
        if f == "symbolic":
            k = p["kind"]
            body = {
                "1": "1", "x": inner, "x^2": f"{inner}^2", "x^3": f"{inner}^3",
                "1/x": f"1/{inner}", "sqrt": f"sqrt({a})", "log(x+1)": f"log({a} + 1)",
                "log": f"log|{a}|", "exp": f"exp({a})", "sin": f"sin({a})", "cos": f"cos({a})",
                "1/(1+x)": f"1/(1 + {a})", "1/(1+x^2)": f"1/(1 + {inner}^2)",
            }[k]
        elif f == "chebyshev":
            mid = 0.5 * (p["lo"] + p["hi"])
            half = 0.5 * (p["hi"] - p["lo"])
            body = f"T{p['degree']}(({a} - {_fmt(mid)})/{_fmt(half)})"
        elif f == "fourier":
            q = p["mode"]
            fn = "sin" if p["slot"] % 2 == 0 else "cos"
            body = f"{fn}({a})" if q == 1 else f"{fn}({q}·{inner})"
        elif f == "spline":
            body = f"spline[{_fmt(p['lo'])}, {_fmt(p['hi'])}]({a})"
        else:
            body = f"{p['kind']}[{_fmt(p['a'])}·{inner} + {_fmt(p['b'])}]"
            s = f"{c}·{body}"
            return s + (f" + {_fmt(p['d'])}" if p["d"] else "")
        return f"{c}·{body}"

    def to_dict(self):
        return {"type": "term", "family": self.family, "label": self.label, "coef": self.coef,
                "params": _jsonable(self.params), "arg": self.arg.to_dict()}


def _jsonable(d):
    return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in d.items()}


@dataclass
class Expression:
    outputs: list
    input_names: list

    def evaluate(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.stack([o.evaluate(X) for o in self.outputs], axis=1)

    def __str__(self):
        if len(self.outputs) == 1:
            return str(self.outputs[0])
        return "\n".join(f"y{k + 1} = {o}" for k, o in enumerate(self.outputs))

    def to_dict(self):
        return {"inputs": self.input_names, "outputs": [o.to_dict() for o in self.outputs]}

    def contains(self, family: str, label: str | None = None) -> bool:
        def walk(e):
            if isinstance(e, Term):
                if e.family == family and (label is None or e.label == label):
                    return True
                return walk(e.arg)
            if isinstance(e, (Sum, Product)):
                return any(walk(c) for c in e.children)
            return False
        return any(walk(o) for o in self.outputs)


def extract_expression(net, input_names=None) -> Expression:
    """Nested sum/product expression built from the deterministic (thresholded) network."""
    n0 = net.spec.input_dim
    if input_names is None:
        input_names = ["x"] if n0 == 1 else [f"x{k + 1}" for k in range(n0)]
    nodes: list[Expr] = [Var(k, input_names[k]) for k in range(n0)]
    gates_open = net.active_gates()
    for l, layer in enumerate(net.layers):
        z = gates_open[l]
        slots = []
        for j in range(layer.n_pre):
            parts = []
            for i in range(layer.n_in):
                if (i, j) in layer.replacements:
                    r = layer.replacements[(i, j)]
                    parts.append(Term("affine", r.candidate.name, r.c, nodes[i],
                                      {"kind": r.candidate.name, "protected": r.candidate.protected,
                                       "a": r.a, "b": r.b, "d": r.d}))
                if layer.edge_mask[i, j] == 0:
                    continue
                for m, t in enumerate(layer.terms):
                    if z[i, j, m] == 0:
                        continue
                    coeffs = layer.coef[i, j, layer.term_slice(m)].astype(float)
                    parts.append(_term_expr(t, coeffs, layer, i, nodes[i], net))
            slots.append(Sum(parts) if len(parts) != 1 else parts[0] if parts else Const(0.0))
        new_nodes = list(slots[:layer.n_sum])
        for q in range(layer.n_mult):
            a, b = slots[layer.n_sum + 2 * q], slots[layer.n_sum + 2 * q + 1]
            new_nodes.append(Product([a, b]))
        nodes = [_simplify(n) for n in new_nodes]
    return Expression(nodes, list(input_names))


def _simplify(e: Expr) -> Expr:
    if isinstance(e, Sum) and not e.children:
        return Const(0.0)
    if isinstance(e, Product) and any(isinstance(c, Const) and c.value == 0 for c in e.children):
        return Const(0.0)
    return e


def _term_expr(t, coeffs, layer, i, arg, net) -> Term:
    if t.family == "symbolic":
        prim = net.spec.dictionary.symbolic[t.index]
        return Term("symbolic", t.label, float(coeffs[0]), arg,
                    {"kind": prim.name, "protected": prim.protected})
    if t.family == "chebyshev":
        return Term("chebyshev", t.label, float(coeffs[0]), arg,
                    {"degree": t.index, "lo": float(layer.lo[i]), "hi": float(layer.hi[i])})
    if t.family == "fourier":
        return Term("fourier", t.label, float(coeffs[0]), arg,
                    {"mode": t.index // 2 + 1, "slot": t.index})
    spl = net.spec.dictionary.spline
    return Term("spline", t.label, 1.0, arg,
                {"lo": float(layer.lo[i]), "hi": float(layer.hi[i]),
                 "grid_intervals": spl.grid_intervals, "degree": spl.degree,
                 "coeffs": coeffs})
