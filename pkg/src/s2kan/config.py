"""Run configurations: TOML-shaped dictionaries, defaults, presets and object builders.

A run config is a nested dictionary with the keys below. Anything left out takes the default;
a minimal preset names only the task and what differs from the defaults.

    task = "sinc"              # sinc | nguyen-F1..F10 | ikeda | ecosystem | concrete | superconductor
    mode = "s2kan"             # s2kan | baseline | baseline+symbolify
    seed = 0                   # required, no default
    shape = "[1,(0,1)]"
    [dictionary]  symbolic, chebyshev_P, fourier_Q, spline, grid_intervals, degree, complexity_weights
    [train]       beta, epochs, batch_size, warmup_epochs, learning_rate, grid_update_schedule,
                  early_stop, decisiveness_threshold, patience
    [data]        n_train, n_test, path, surrogate, params
    [symbolify]   thresholds, library, complexities
    [forecast]    horizon, threshold_frac
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .basis import SplineBasis
from .benchmarks import (
    NGUYEN,
    EcosystemConfig,
    IkedaConfig,
    gen_dynamics_dataset,
    gen_nguyen,
    gen_sinc,
    gen_superconductor_surrogate,
    load_tabular,
)
from .errors import ConfigurationError
from .network import DictionaryConfig, Network, NetworkSpec, parse_shape
from .symbolify import DEFAULT_LIBRARY
from .training import EarlyStop, TrainConfig

MODES = ("s2kan", "baseline", "baseline+symbolify")

DEFAULTS = {
    "mode": "s2kan",
    "dictionary": {"symbolic": [], "chebyshev_P": 0, "fourier_Q": 0, "spline": True,
                   "grid_intervals": 10, "degree": 3, "complexity_weights": {}},
    "train": {"beta": 0.0, "epochs": 10_000, "batch_size": 128, "warmup_epochs": 200,
              "learning_rate": 1e-3, "grid_update_schedule": list(range(0, 50, 5)),
              "early_stop": True, "decisiveness_threshold": 0.99, "patience": -1},
    "data": {"n_train": 1024, "n_test": 256, "path": "", "surrogate": False, "params": {}},
    "symbolify": {"thresholds": [0.5, 0.95], "library": list(DEFAULT_LIBRARY),
                  "complexities": {}},
    "forecast": {"horizon": -1, "threshold_frac": 0.1},
}

TASKS = ("sinc", "ikeda", "ecosystem", "concrete", "superconductor") + tuple(
    f"nguyen-{k}" for k in NGUYEN)

_SECTION_KEYS = {k: set(v) for k, v in DEFAULTS.items() if isinstance(v, dict)}
_TOP_KEYS = {"task", "mode", "seed", "shape", "description"} | set(_SECTION_KEYS)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "params" \
                and k != "complexity_weights" and k != "complexities":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


# ---------------------------------------------------------------------------
# presets

NGUYEN_LIBRARY = ["1", "x", "x^2", "sin", "cos"]
NGUYEN_SHAPES = {"S": [1], "L": [3, 1], "LM": [[3, 1], 1]}
BETAS = {"b0": 0.0, "b0.1": 0.1, "b0.5": 0.5, "b1": 1.0, "b10": 10.0}


def _shape(n0: int, hidden: list) -> str:
    parts = [str(n0)] + [f"({w[0]},{w[1]})" if isinstance(w, list) else str(w) for w in hidden]
    return "[" + ",".join(parts) + "]"


def _build_presets() -> dict:
    p = {}
    p["sinc"] = {
        "task": "sinc", "shape": "[1,(0,1)]",
        "dictionary": {"symbolic": ["1/x"], "chebyshev_P": 6, "fourier_Q": 4},
        "train": {"beta": 1.0, "epochs": 2000, "batch_size": 32, "warmup_epochs": 100,
                  "early_stop": False},
    }
    p["sinc-baseline"] = {"task": "sinc", "mode": "baseline", "shape": "[1,(0,1)]",
                          "train": {"epochs": 2000, "batch_size": 32}}
    for key, prob in NGUYEN.items():
        for sname, hidden in NGUYEN_SHAPES.items():
            shape = _shape(prob.n_vars, hidden)
            base = f"nguyen-{key}-{sname}"
            p[f"{base}-baseline"] = {"task": f"nguyen-{key}", "mode": "baseline+symbolify",
                                     "shape": shape}
            for tag in ("b0.1", "b1", "b10"):
                p[f"{base}-{tag}"] = {
                    "task": f"nguyen-{key}", "shape": shape,
                    "dictionary": {"symbolic": NGUYEN_LIBRARY, "chebyshev_P": 11, "fourier_Q": 6},
                    "train": {"beta": BETAS[tag]},
                }
    dyn = {
        "ikeda": ("[2,4,4,4,2]", ["sqrt", "1/(1+x^2)"], {"baseline": 4000, "b0": 20_000,
                                                          "b0.1": 4000}),
        "ecosystem": ("[3,3,3,3]", ["1", "x", "x^2", "1/(1+x)"], {"baseline": 10_000,
                                                                   "b0": 15_000,
                                                                   "b0.1": 10_000}),
    }
    for task, (shape, lib, epochs) in dyn.items():
        # no periodic grid updates: one initial fit of the domains to the data
        train = {"early_stop": False, "grid_update_schedule": [0]}
        p[f"{task}-baseline"] = {"task": task, "mode": "baseline", "shape": shape,
                                 "train": {**train, "epochs": epochs["baseline"]}}
        for tag in ("b0", "b0.1"):
            p[f"{task}-{tag}"] = {
                "task": task, "shape": shape,
                "dictionary": {"symbolic": lib, "chebyshev_P": 4, "fourier_Q": 4},
                "train": {**train, "beta": BETAS[tag], "epochs": epochs[tag]},
            }
    real = {"epochs": 5000, "batch_size": 64, "warmup_epochs": 500, "early_stop": False}
    p["concrete-baseline"] = {"task": "concrete", "mode": "baseline", "shape": "[13,32,1]",
                              "train": dict(real)}
    for tag in ("b0.1", "b0.5"):
        p[f"concrete-{tag}"] = {
            "task": "concrete", "shape": "[13,32,1]",
            "dictionary": {"symbolic": ["1", "x", "x^2", "sqrt", "log(x+1)"], "fourier_Q": 2},
            "train": {**real, "beta": BETAS[tag]},
        }
    sc_lib = ["1", "x", "x^2", "sqrt", "log(x+1)", "x^3", "exp"]
    p["superconductor-baseline"] = {"task": "superconductor", "mode": "baseline",
                                    "shape": "[5,5,1]", "train": dict(real),
                                    "data": {"n_train": 1000, "n_test": 1000}}
    for tag in ("b0.1", "b0.5"):
        p[f"superconductor-{tag}"] = {
            "task": "superconductor", "shape": "[5,5,1]",
            "dictionary": {"symbolic": sc_lib, "fourier_Q": 2},
            "train": {**real, "beta": BETAS[tag]},
            "data": {"n_train": 1000, "n_test": 1000},
        }
    for depth, shape in (("shallow", "[5,5,1]"), ("deep", "[5,5,5,1]")):
        p[f"gate-dynamics-{depth}"] = {
            "task": "superconductor", "shape": shape,
            "dictionary": {"symbolic": sc_lib, "fourier_Q": 2},
            "train": {**real, "beta": 0.5, "early_stop": True},
            "data": {"n_train": 1000, "n_test": 1000},
        }
    return p


PRESETS = _build_presets()


def preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r} (see list-presets)")
    return copy.deepcopy(PRESETS[name])


# ---------------------------------------------------------------------------
# resolution and validation


def resolve(cfg: dict, seed: int | None = None) -> dict:
    """Fill defaults, apply the seed override and validate. Errors name the offending field."""
    unknown = set(cfg) - _TOP_KEYS
    if unknown:
        raise ConfigurationError(f"unknown field(s) {sorted(unknown)}")
    for sec, keys in _SECTION_KEYS.items():
        if sec in cfg:
            if not isinstance(cfg[sec], dict):
                raise ConfigurationError(f"[{sec}] must be a table")
            bad = set(cfg[sec]) - keys
            if bad:
                raise ConfigurationError(f"unknown field(s) in [{sec}]: {sorted(bad)}")
    out = _merge(DEFAULTS, cfg)
    if seed is not None:
        out["seed"] = seed
    if "seed" not in out or out["seed"] is None:
        raise ConfigurationError("seed is not set (use --seed or a seed field)")
    if not isinstance(out["seed"], int) or isinstance(out["seed"], bool) or out["seed"] < 0:
        raise ConfigurationError("seed must be a non-negative integer")
    if "task" not in out:
        raise ConfigurationError("task is not set")
    if out["task"] not in TASKS:
        raise ConfigurationError(f"task: unknown task id {out['task']!r}")
    if out["mode"] not in MODES:
        raise ConfigurationError(f"mode: expected one of {MODES}, got {out['mode']!r}")
    if "shape" not in out:
        raise ConfigurationError("shape is not set")
    n0, layers = parse_shape(out["shape"])
    expected = task_dims(out["task"])
    if expected is not None and (n0, sum(layers[-1])) != expected:
        raise ConfigurationError(
            f"shape: {out['shape']} does not match task {out['task']} dims {expected}")
    t = out["train"]
    for key in ("epochs", "batch_size", "warmup_epochs"):
        if not isinstance(t[key], int) or t[key] < (1 if key == "batch_size" else 0):
            raise ConfigurationError(f"train.{key} must be a non-negative integer")
    if not t["beta"] >= 0:
        raise ConfigurationError("train.beta must be non-negative")
    if not t["learning_rate"] > 0:
        raise ConfigurationError("train.learning_rate must be positive")
    d = out["dictionary"]
    for key in ("chebyshev_P", "fourier_Q"):
        if not isinstance(d[key], int) or d[key] < 0:
            raise ConfigurationError(f"dictionary.{key} must be a non-negative integer")
    if out["mode"] != "s2kan":
        # baseline: spline-only, gates fixed open, no regularization
        out["dictionary"] = {**d, "symbolic": [], "chebyshev_P": 0, "fourier_Q": 0,
                             "spline": True}
        out["train"] = {**t, "beta": 0.0, "early_stop": False}
    try:
        build_dictionary(out)
    except ConfigurationError as exc:
        raise ConfigurationError(f"dictionary: {exc}") from exc
    return out


def task_dims(task: str):
    if task == "sinc":
        return (1, 1)
    if task.startswith("nguyen-"):
        return (NGUYEN[task[len("nguyen-"):]].n_vars, 1)
    return {"ikeda": (2, 2), "ecosystem": (3, 3), "concrete": (13, 1),
            "superconductor": (5, 1)}.get(task)


def build_dictionary(cfg: dict) -> DictionaryConfig:
    d = cfg["dictionary"]
    spline = SplineBasis(int(d["grid_intervals"]), int(d["degree"])) if d["spline"] else None
    return DictionaryConfig(tuple(d["symbolic"]), int(d["chebyshev_P"]), int(d["fourier_Q"]),
                            spline, dict(d["complexity_weights"]) or None)


def build_train_config(cfg: dict, seed: int) -> TrainConfig:
    t = cfg["train"]
    es = None
    if t["early_stop"]:
        es = EarlyStop(float(t["decisiveness_threshold"]),
                       None if t["patience"] < 0 else int(t["patience"]))
    return TrainConfig(beta=float(t["beta"]), epochs=int(t["epochs"]),
                       batch_size=int(t["batch_size"]), warmup_epochs=int(t["warmup_epochs"]),
                       learning_rate=float(t["learning_rate"]),
                       grid_update_schedule=list(t["grid_update_schedule"]),
                       early_stop=es, seed=seed)


def seeds(seed: int) -> tuple[int, int, int]:
    """Independent (data, init, training) seeds derived from the single run seed."""
    ss = np.random.SeedSequence(seed).spawn(3)
    return tuple(int(s.generate_state(1)[0]) for s in ss)


def build_network(cfg: dict, init_seed: int) -> Network:
    n0, layers = parse_shape(cfg["shape"])
    spec = NetworkSpec(n0, layers, build_dictionary(cfg))
    return Network.build(spec, np.random.default_rng(init_seed),
                         gates_fixed_open=cfg["mode"] != "s2kan")


@dataclass
class TaskData:
    train: object
    test: object
    dynamics: object = None
    meta: dict | None = None


def build_data(cfg: dict, data_seed: int) -> TaskData:
    task, d = cfg["task"], cfg["data"]
    params = dict(d["params"])
    if task == "sinc":
        tr, te = gen_sinc(int(d["n_train"]), int(d["n_test"]),
                          tuple(params.get("domain", (1.0, 15.0))), seed=data_seed)
        return TaskData(tr, te, meta={"generator": "sinc"})
    if task.startswith("nguyen-"):
        tr, te = gen_nguyen(task[len("nguyen-"):], int(d["n_train"]), int(d["n_test"]),
                            seed=data_seed)
        return TaskData(tr, te, meta={"generator": task})
    if task in ("ikeda", "ecosystem"):
        cls = IkedaConfig if task == "ikeda" else EcosystemConfig
        try:
            sys_cfg = cls(**params)
        except TypeError as exc:
            raise ConfigurationError(f"data.params: {exc}") from exc
        dyn = gen_dynamics_dataset(task, sys_cfg)
        return TaskData(dyn.train, dyn.test, dyn, meta={"generator": task, **dyn.config})
    if d["path"]:
        tab = load_tabular(task, d["path"], seed=data_seed, n_train=int(d["n_train"]),
                           n_test=int(d["n_test"]))
        return TaskData(tab.train, tab.test, meta={"generator": task, "path": d["path"],
                                                   "features": tab.feature_names})
    if task == "superconductor":
        tr, te = gen_superconductor_surrogate(int(d["n_train"]), int(d["n_test"]), data_seed)
        return TaskData(tr, te, meta={"generator": "superconductor-surrogate"})
    raise ConfigurationError(f"data.path: task {task} needs a CSV file")
