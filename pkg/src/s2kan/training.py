"""MDL objective, Adam training loop and per-epoch gate diagnostics."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import gates as G
from .errors import ConfigurationError, NonFiniteError

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    split: str = "train"

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        t = np.asarray(self.targets, dtype=float)
        self.targets = t[:, None] if t.ndim == 1 else t
        if self.inputs.shape[0] != self.targets.shape[0] or self.inputs.shape[0] < 1:
            raise ConfigurationError("inputs and targets must have the same positive length")
        if not (np.all(np.isfinite(self.inputs)) and np.all(np.isfinite(self.targets))):
            raise ConfigurationError("dataset contains NaN or inf")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def as_pair(self):
        return self.inputs, self.targets


@dataclass
class EarlyStop:
    decisiveness_threshold: float = 0.99
    patience: int | None = None  # None -> min(500, 0.05 * epochs)


@dataclass
class TrainConfig:
    beta: float = 0.0
    epochs: int = 10_000
    batch_size: int = 128
    warmup_epochs: int = 200
    learning_rate: float = 1e-3
    grid_update_schedule: list | None = None  # None -> 10 updates spread over epochs 0..49
    early_stop: EarlyStop | None = field(default_factory=EarlyStop)
    seed: int = 0
    n_train: int | None = None
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.beta < 0 or self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigurationError("invalid training configuration")
        if isinstance(self.early_stop, dict):
            self.early_stop = EarlyStop(**self.early_stop)

    @property
    def patience(self) -> int:
        if self.early_stop is not None and self.early_stop.patience is not None:
            return int(self.early_stop.patience)
        return max(1, int(min(500, 0.05 * self.epochs)))

    @property
    def schedule(self) -> list[int]:
        if self.grid_update_schedule is None:
            return list(range(0, 50, 5))
        return sorted(int(e) for e in self.grid_update_schedule)


def mdl_loss(y, y_hat, k_weighted: float, n_train: int, beta: float):
    """``(loss, mse, penalty)`` with ``penalty = beta * k_w * ln(n) / (2n)``."""
    y = np.asarray(y, dtype=float)
    r = np.asarray(y_hat, dtype=float) - y
    mse = float(np.mean(r * r))
    penalty = mdl_penalty(k_weighted, n_train, beta)
    return mse + penalty, mse, penalty


def mdl_penalty(k_weighted: float, n_train: int, beta: float) -> float:
    if n_train < 2:
        raise ConfigurationError("the MDL penalty needs n_train >= 2")
    return beta * k_weighted * math.log(n_train) / (2.0 * n_train)


class Adam:
    """Plain Adam over a list of numpy arrays updated in place."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads):
        self.t += 1
        b1, b2 = self.b1, self.b2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        step = self.lr / c1
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p -= step * m / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainState:
    epoch: int = 0
    history: list = field(default_factory=list)
    optimizer: Adam | None = None
    stopped_early: bool = False
    initial: dict | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([h[name] for h in self.history])


def gate_record(net) -> dict:
    """Snapshot of gate statistics: k, k_weighted, expected parameter count, entropy, means."""
    k, kw = net.expected_active_terms()
    ps = np.concatenate([p.ravel() for p in net.gate_probabilities()]) if net.n_gates() else np.empty(0)
    stats = G.gate_stats(ps)
    k_params = 0.0
    for layer, p in zip(net.layers, net.gate_probabilities()):
        sizes = np.array([t.width + 1 if t.family == "spline" else 1 for t in layer.terms])
        k_params += float((p * sizes).sum())
    rec = {"k": k, "k_weighted": kw, "k_params": k_params,
           "entropy_bits": stats.entropy_bits, "decisiveness": stats.decisiveness}
    for fam, v in net.family_mean_p().items():
        rec[f"p_{fam}_mean"] = v
    for l, v in enumerate(net.layer_mean_p()):
        rec[f"p_layer{l}_mean"] = v
    return rec


def train(net, data: Dataset, cfg: TrainConfig, callback=None):
    """Mini-batch Adam on coefficients and gate locations under the MDL objective.

    Gate noise and shuffling come from one generator seeded with ``cfg.seed``. The data term's
    gate gradient is pathwise through the sampled gates; the penalty's flows through the
    closed-form gate expectations. Returns ``(net, TrainState)``.
    """
    X, Y = data.as_pair()
    if X.shape[1] != net.spec.input_dim or Y.shape[1] != net.spec.output_dim:
        raise ConfigurationError(
            f"data shapes {X.shape}/{Y.shape} do not match network {net.spec.shape_string()}")
    n = X.shape[0]
    n_train = cfg.n_train or n
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(net.params, cfg.learning_rate, cfg.adam_betas, cfg.adam_eps)
    state = TrainState(optimizer=opt, initial=gate_record(net))
    schedule = set(cfg.schedule)
    pen_scale = math.log(n_train) / (2.0 * n_train) if n_train >= 2 else 0.0
    train_gates = not net.gates_fixed_open
    streak = 0
    net.mode = "stochastic"
    net.reset_ranges()
    try:
        for epoch in range(cfg.epochs):
            if epoch in schedule:
                if not np.all(np.isfinite(net.layers[0].range_min)):
                    net.forward(X, mode="deterministic")
                net.grid_update()
            beta = 0.0 if epoch < cfg.warmup_epochs else cfg.beta
            perm = rng.permutation(n)
            sq_sum = 0.0
            for start in range(0, n, cfg.batch_size):
                idx = perm[start:start + cfg.batch_size]
                xb, yb = X[idx], Y[idx]
                noise = net.draw_noise(rng)
                where = {"epoch": epoch, "batch": start // cfg.batch_size}
                try:
                    y_hat, tape = net.forward(xb, noise)
                except NonFiniteError as exc:
                    raise NonFiniteError(exc.message, {**where, **(exc.where or {})}) from exc
                r = y_hat - yb
                sq = float(np.sum(r * r))
                if not math.isfinite(sq):
                    raise NonFiniteError("non-finite loss", where)
                sq_sum += sq
                grads = net.backward(tape, r * (2.0 / r.size))
                gl = []
                pen = net.penalty_grad_alpha() if (train_gates and beta > 0) else None
                for l in range(len(net.layers)):
                    gl.append(grads.coef[l])
                    if train_gates:
                        ga = grads.alpha[l]
                        if pen is not None:
                            ga = ga + (beta * pen_scale) * pen[l]
                        gl.append(ga)
                opt.step(gl)
                net.touch()
            rec = gate_record(net)
            mse = sq_sum / (n * Y.shape[1])
            rec = {"epoch": epoch, "mse_train": mse,
                   "penalty": beta * rec["k_weighted"] * pen_scale, **rec}
            state.history.append(rec)
            state.epoch = epoch + 1
            if callback is not None:
                callback(epoch, rec)
            if cfg.early_stop is not None and train_gates and epoch >= cfg.warmup_epochs:
                streak = streak + 1 if rec["decisiveness"] > cfg.early_stop.decisiveness_threshold else 0
                if streak >= cfg.patience:
                    state.stopped_early = True
                    log.info("early stop at epoch %d (decisiveness %.4f)", epoch, rec["decisiveness"])
                    break
    finally:
        net.mode = "deterministic"
    return net, state


@dataclass
class Metrics:
    mse: float
    rmse: float
    r2: float

    def as_dict(self) -> dict:
        return {"mse": self.mse, "rmse": self.rmse, "r2": self.r2}


def regression_metrics(y, y_hat) -> Metrics:
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float).reshape(y.shape)
    r = y - y_hat
    mse = float(np.mean(r * r))
    sst = float(np.sum((y - y.mean(axis=0)) ** 2))
    r2 = 1.0 - float(np.sum(r * r)) / sst if sst > 0 else float("nan")
    return Metrics(mse, math.sqrt(mse), r2)


def evaluate(net, data: Dataset) -> Metrics:
    """Deterministic-mode MSE, RMSE and R^2 (NaN R^2 for constant targets)."""
    X, Y = data.as_pair()
    with np.errstate(all="ignore"):
        pred = net(X)
    return regression_metrics(Y, pred)


HISTORY_BASE_COLUMNS = [
    "epoch", "mse_train", "penalty", "k", "k_weighted", "k_params", "entropy_bits",
    "decisiveness", "p_symbolic_mean", "p_spline_mean", "p_fourier_mean", "p_chebyshev_mean",
]


def history_columns(history) -> list[str]:
    if not history:
        return list(HISTORY_BASE_COLUMNS)
    layer_cols = sorted((c for c in history[0] if c.startswith("p_layer")),
                        key=lambda c: int(c[len("p_layer"):-len("_mean")]))
    return HISTORY_BASE_COLUMNS + layer_cols


def write_history_csv(history, path) -> None:
    cols = history_columns(history)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for rec in history:
            w.writerow([repr(rec[c]) if isinstance(rec[c], float) else rec[c] for c in cols])


def read_history_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "epoch" else float(v)) for k, v in r.items()} for r in rows]
