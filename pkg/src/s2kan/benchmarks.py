"""Task data: sinc, Nguyen F1-F10, the Ikeda map, a three-species food chain, tabular CSVs.

Also hosts multi-step forecasting for the dynamical systems.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError, NonFiniteError
from .training import Dataset


# ---------------------------------------------------------------------------
# symbolic regression targets


def sinc(x):
    return np.sin(x) / x


def gen_sinc(n_train: int = 1024, n_test: int = 256, domain=(1.0, 15.0), seed: int = 0):
    rng = np.random.default_rng(seed)
    lo, hi = domain
    xs = rng.uniform(lo, hi, n_train + n_test)
    X = xs[:, None]
    y = sinc(xs)[:, None]
    return (Dataset(X[:n_train], y[:n_train], "train"),
            Dataset(X[n_train:], y[n_train:], "test"))


@dataclass(frozen=True)
class NguyenProblem:
    name: str
    expression: str
    n_vars: int
    domain: tuple
    fn: object = field(repr=False, compare=False, default=None)

    def __call__(self, X):
        X = np.atleast_2d(X)
        return self.fn(*[X[:, k] for k in range(self.n_vars)])


def _poly(deg):
    return lambda x: sum(x ** p for p in range(1, deg + 1))


NGUYEN = {
    "F1": NguyenProblem("F1", "x^3 + x^2 + x", 1, (-1.0, 1.0), _poly(3)),
    "F2": NguyenProblem("F2", "x^4 + x^3 + x^2 + x", 1, (-1.0, 1.0), _poly(4)),
    "F3": NguyenProblem("F3", "x^5 + x^4 + x^3 + x^2 + x", 1, (-1.0, 1.0), _poly(5)),
    "F4": NguyenProblem("F4", "x^6 + x^5 + x^4 + x^3 + x^2 + x", 1, (-1.0, 1.0), _poly(6)),
    "F5": NguyenProblem("F5", "sin(x^2) cos(x) - 1", 1, (-1.0, 1.0),
                        lambda x: np.sin(x * x) * np.cos(x) - 1.0),
    "F6": NguyenProblem("F6", "sin(x) + sin(x + x^2)", 1, (-1.0, 1.0),
                        lambda x: np.sin(x) + np.sin(x + x * x)),
    "F7": NguyenProblem("F7", "log(x + 1) + log(x^2 + 1)", 1, (0.0, 2.0),
                        lambda x: np.log(x + 1.0) + np.log(x * x + 1.0)),
    "F8": NguyenProblem("F8", "sqrt(x)", 1, (0.0, 4.0), lambda x: np.sqrt(x)),
    "F9": NguyenProblem("F9", "sin(x) + sin(y^2)", 2, (-1.0, 1.0),
                        lambda x, y: np.sin(x) + np.sin(y * y)),
    "F10": NguyenProblem("F10", "2 sin(x) cos(y)", 2, (-math.pi, math.pi),
                         lambda x, y: 2.0 * np.sin(x) * np.cos(y)),
}


def gen_nguyen(problem: str, n_train: int = 1024, n_test: int = 256, seed: int = 0):
    key = problem.upper() if problem.upper() in NGUYEN else problem.upper().replace("NGUYEN-", "")
    if key not in NGUYEN:
        raise ConfigurationError(f"unknown Nguyen problem {problem!r}")
    p = NGUYEN[key]
    rng = np.random.default_rng(seed)
    lo, hi = p.domain
    X = rng.uniform(lo, hi, (n_train + n_test, p.n_vars))
    y = p(X)[:, None]
    return (Dataset(X[:n_train], y[:n_train], "train"),
            Dataset(X[n_train:], y[n_train:], "test"))


# ---------------------------------------------------------------------------
# dynamical systems


@dataclass
class IkedaConfig:
    mu: float = 0.9
    n_points: int = 10_000
    transient_discard: int = 1_000
    initial: tuple = (0.1, 0.1)
    train_fraction: float = 0.8
    seed: int = 0


def ikeda_step(state, cfg: IkedaConfig | None = None):
    """One application of the Ikeda map; vectorized over leading axes of ``state``."""
    mu = (cfg or IkedaConfig()).mu
    s = np.asarray(state, dtype=float)
    x, y = s[..., 0], s[..., 1]
    phi = 0.4 - 6.0 / (1.0 + x * x + y * y)
    c, sn = np.cos(phi), np.sin(phi)
    return np.stack([1.0 + mu * (x * c - y * sn), mu * (x * sn + y * c)], axis=-1)


@dataclass
class EcosystemConfig:
    K: float = 0.98
    x_p: float = 0.4
    y_p: float = 2.009
    x_q: float = 0.08
    y_q: float = 2.876
    N_0: float = 0.16129
    P_0: float = 0.5
    dt: float = 0.1
    n_points: int = 10_000
    transient_discard: int = 2_000
    initial: tuple = (0.7, 0.2, 0.8)  # on the chaotic attractor; (0.5, 0.5, 0.5) loses Q
    train_fraction: float = 0.8
    seed: int = 0


def ecosystem_rhs(state, cfg: EcosystemConfig | None = None):
    """Producer/herbivore/carnivore vector field; vectorized over leading axes."""
    c = cfg or EcosystemConfig()
    s = np.asarray(state, dtype=float)
    N, P, Q = s[..., 0], s[..., 1], s[..., 2]
    fN = N / (N + c.N_0)
    fP = P / (P + c.P_0)
    dN = N * (1.0 - N / c.K) - c.x_p * c.y_p * fN * P
    dP = c.x_p * P * (c.y_p * fN - 1.0) - c.x_q * c.y_q * fP * Q
    dQ = c.x_q * Q * (c.y_q * fP - 1.0)
    return np.stack([dN, dP, dQ], axis=-1)


def rk4_step(f, state, dt: float):
    k1 = f(state)
    k2 = f(state + 0.5 * dt * k1)
    k3 = f(state + 0.5 * dt * k2)
    k4 = f(state + dt * k3)
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass
class DynamicsData:
    system: str
    train: Dataset
    test: Dataset
    trajectory: np.ndarray  # every retained state, shape (n_points + 1, dim)
    split_index: int  # first test state in ``trajectory``
    dt: float | None
    config: dict

    @property
    def test_trajectory(self) -> np.ndarray:
        return self.trajectory[self.split_index:]


def split_indices(n: int, train_fraction: float):
    cut = int(round(n * train_fraction))
    return np.arange(cut), np.arange(cut, n)


def gen_dynamics_dataset(system: str, cfg=None) -> DynamicsData:
    """Trajectory, contiguous train/test split, and one-step supervision pairs.

    Ikeda pairs map ``state_n -> state_{n+1}``; ecosystem pairs map ``state -> d state/dt``
    sampled along an RK4 trajectory.
    """
    if system == "ikeda":
        cfg = cfg or IkedaConfig()
        s = np.asarray(cfg.initial, dtype=float)
        for _ in range(cfg.transient_discard):
            s = ikeda_step(s, cfg)
        traj = np.empty((cfg.n_points + 1, 2))
        traj[0] = s
        for t in range(cfg.n_points):
            traj[t + 1] = ikeda_step(traj[t], cfg)
        inputs, targets = traj[:-1], traj[1:]
        dt = None
    elif system == "ecosystem":
        cfg = cfg or EcosystemConfig()
        f = lambda s: ecosystem_rhs(s, cfg)  # noqa: E731
        s = np.asarray(cfg.initial, dtype=float)
        for _ in range(cfg.transient_discard):
            s = rk4_step(f, s, cfg.dt)
        traj = np.empty((cfg.n_points + 1, 3))
        traj[0] = s
        for t in range(cfg.n_points):
            traj[t + 1] = rk4_step(f, traj[t], cfg.dt)
        inputs, targets = traj[:-1], f(traj[:-1])
        dt = cfg.dt
    else:
        raise ConfigurationError(f"unknown dynamical system {system!r}")
    if not np.all(np.isfinite(traj)):
        raise NonFiniteError("trajectory escaped to non-finite values", {"system": system})
    tr, te = split_indices(len(inputs), cfg.train_fraction)
    return DynamicsData(system, Dataset(inputs[tr], targets[tr], "train"),
                        Dataset(inputs[te], targets[te], "test"), traj, len(tr), dt, asdict(cfg))


@dataclass
class ForecastResult:
    trajectory: np.ndarray  # predicted states, step 0 = initial
    reference: np.ndarray
    rmse: float
    accuracy_horizon: int
    diverged_at: int | None = None

    @property
    def abs_err(self) -> np.ndarray:
        n = len(self.trajectory)
        with np.errstate(over="ignore"):  # a huge but finite state gives an infinite error
            return np.sqrt(np.mean((self.trajectory - self.reference[:n]) ** 2, axis=1))


def multistep_forecast(model, initial, horizon: int, system: str, reference,
                       dt: float | None = None, threshold_frac: float = 0.1) -> ForecastResult:
    """Autonomous rollout of ``model`` from ``initial`` for ``horizon`` steps.

    Ikeda models are iterated as maps; ecosystem models are treated as vector fields and
    integrated with RK4 at ``dt``. The RMSE covers steps ``1..horizon`` (or the finite prefix
    if the rollout diverges). The accuracy horizon is the first step whose error (RMS over
    components) exceeds ``threshold_frac`` times the reference's pooled standard deviation.
    """
    reference = np.asarray(reference, dtype=float)
    if len(reference) < horizon + 1:
        raise ConfigurationError("reference trajectory shorter than the forecast horizon")
    if system == "ecosystem" and dt is None:
        raise ConfigurationError("vector-field forecasts need dt")

    def f(s):
        return np.asarray(model(s[None, :]), dtype=float)[0]

    traj = [np.asarray(initial, dtype=float)]
    diverged = None
    with np.errstate(all="ignore"):
        for t in range(horizon):
            s = traj[-1]
            try:
                nxt = f(s) if system == "ikeda" else rk4_step(f, s, dt)
            except (NonFiniteError, FloatingPointError):
                nxt = np.full_like(s, np.nan)
            if not np.all(np.isfinite(nxt)):
                diverged = t + 1
                break
            traj.append(nxt)
    traj = np.array(traj)
    ref = reference[:len(traj)]
    with np.errstate(over="ignore"):
        err = np.sqrt(np.mean((traj - ref) ** 2, axis=1))
        rmse = float(np.sqrt(np.mean((traj[1:] - ref[1:]) ** 2))) if len(traj) > 1 \
            else float("nan")
    scale = float(np.sqrt(np.mean(np.var(reference[:horizon + 1], axis=0))))
    over = np.nonzero(err[1:] > threshold_frac * scale)[0]
    acc = int(over[0]) if over.size else len(traj) - 1
    return ForecastResult(traj, reference[:horizon + 1], rmse, acc, diverged)


# ---------------------------------------------------------------------------
# tabular data

CONCRETE_COLUMNS = ["cement", "slag", "fly_ash", "water", "superplasticizer",
                    "coarse_aggregate", "fine_aggregate", "age"]
CONCRETE_TARGET = "strength"
CONCRETE_DERIVED = ["water_cement", "water_binder", "binder", "total_aggregate", "log_age"]
_CONCRETE_ALIASES = {
    "cement": "cement", "blastfurnaceslag": "slag", "slag": "slag", "flyash": "fly_ash",
    "water": "water", "superplasticizer": "superplasticizer",
    "coarseaggregate": "coarse_aggregate", "fineaggregate": "fine_aggregate", "age": "age",
    "concretecompressivestrength": "strength", "strength": "strength", "csmpa": "strength",
}

SUPERCONDUCTOR_COLUMNS = ["number_of_elements", "wtd_mean_Valence", "entropy_Valence",
                          "wtd_mean_fie", "mean_ElectronAffinity"]
SUPERCONDUCTOR_TARGET = "critical_temp"


def _norm(name: str) -> str:
    return "".join(ch for ch in name.lower().split("(")[0] if ch.isalnum())


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise DataError(f"{path} is empty")
    return rows[0], rows[1:]


def _column_matrix(header, rows, wanted, resolve):
    index = {}
    for k, h in enumerate(header):
        key = resolve(h)
        if key is not None and key not in index:
            index[key] = k
    missing = [w for w in wanted if w not in index]
    if missing:
        raise DataError(f"missing columns: {missing}")
    out = np.empty((len(rows), len(wanted)))
    for r, row in enumerate(rows):
        for c, w in enumerate(wanted):
            cell = row[index[w]] if index[w] < len(row) else ""
            try:
                out[r, c] = float(cell)
            except ValueError:
                raise DataError(f"non-numeric cell {cell!r} in column {w!r}, data row {r + 1}")
    return out


def _resolve_concrete(h):
    n = _norm(h)
    for k, v in _CONCRETE_ALIASES.items():
        if n.startswith(k):
            return v
    return None


def concrete_features(raw: np.ndarray) -> np.ndarray:
    """Append the derived columns (water/cement, water/binder, binder, aggregate, log age)."""
    cement, slag, fly, water = raw[:, 0], raw[:, 1], raw[:, 2], raw[:, 3]
    bad = np.nonzero(cement == 0)[0]
    if bad.size:
        raise DataError(f"cement = 0 in rows {(bad + 1).tolist()}; water/cement undefined")
    binder = cement + slag + fly
    derived = np.column_stack([water / cement, water / binder, binder,
                               raw[:, 5] + raw[:, 6], np.log(raw[:, 7] + 1.0)])
    return np.column_stack([raw, derived])


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X):
        std = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(std > 0, std, 1.0))

    def __call__(self, X):
        return (X - self.mean) / self.std


@dataclass
class TabularTask:
    name: str
    feature_names: list
    train: Dataset
    test: Dataset
    scaler: Standardizer


def load_tabular(task: str, path, seed: int = 0, test_fraction: float = 0.2,
                 n_train: int = 1000, n_test: int = 1000) -> TabularTask:
    """Read a concrete or superconductor CSV, derive features, split and standardize."""
    header, rows = _read_csv(path)
    rng = np.random.default_rng(seed)
    if task == "concrete":
        M = _column_matrix(header, rows, CONCRETE_COLUMNS + [CONCRETE_TARGET], _resolve_concrete)
        X = concrete_features(M[:, :8])
        y = M[:, 8]
        perm = rng.permutation(len(X))
        cut = int(round(len(X) * (1.0 - test_fraction)))
        tr, te = perm[:cut], perm[cut:]
        names = CONCRETE_COLUMNS + CONCRETE_DERIVED
    elif task == "superconductor":
        wanted = SUPERCONDUCTOR_COLUMNS + [SUPERCONDUCTOR_TARGET]
        lookup = {c.lower(): c for c in wanted}
        M = _column_matrix(header, rows, wanted, lambda h: lookup.get(h.strip().lower()))
        X, y = M[:, :5], M[:, 5]
        if len(X) < n_train + n_test:
            raise DataError(f"need {n_train + n_test} rows, file has {len(X)}")
        perm = rng.permutation(len(X))
        tr, te = perm[:n_train], perm[n_train:n_train + n_test]
        names = list(SUPERCONDUCTOR_COLUMNS)
    else:
        raise ConfigurationError(f"unknown tabular task {task!r}")
    scaler = Standardizer.fit(X[tr])
    return TabularTask(task, names, Dataset(scaler(X[tr]), y[tr], "train"),
                       Dataset(scaler(X[te]), y[te], "test"), scaler)


def gen_superconductor_surrogate(n_train: int = 1000, n_test: int = 1000, seed: int = 0,
                                 noise: float = 0.05):
    """Five standardized features with an additive target the symbolic library can express.

    Stand-in for the superconductor table when the real file is absent; feature 4 is a
    distractor.
    """
    rng = np.random.default_rng(seed)
    X = rng.uniform(-2.0, 2.0, (n_train + n_test, 5))
    y = 1.5 * X[:, 0] - X[:, 1] ** 2 + 0.8 * np.sin(X[:, 2]) + 0.5 * X[:, 4]
    y = y + noise * rng.normal(size=len(y))
    scaler = Standardizer.fit(X[:n_train])
    Xs = scaler(X)
    return (Dataset(Xs[:n_train], y[:n_train], "train"),
            Dataset(Xs[n_train:], y[n_train:], "test"))


# ---------------------------------------------------------------------------
# dataset cache files


def write_dataset_csv(path, data: Dataset, meta: dict) -> None:
    """CSV with a ``# {json}`` metadata line, a header row and full-precision values."""
    d_in, d_out = data.inputs.shape[1], data.targets.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow([f"x{k}" for k in range(d_in)] + [f"y{k}" for k in range(d_out)])
        for xi, yi in zip(data.inputs, data.targets):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(v)) for v in yi])


def read_dataset_csv(path):
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    meta = json.loads(first[1:].strip()) if first.startswith("#") else {}
    header, rows = _read_csv(path)
    try:
        M = np.array([[float(c) for c in r] for r in rows])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    n_in = sum(1 for h in header if h.startswith("x"))
    return Dataset(M[:, :n_in], M[:, n_in:], meta.get("split", "train")), meta
