"""Command-line front end.

    s2kan list-presets
    s2kan train (--preset NAME | --config FILE) --seed N --out RUN_DIR
    s2kan eval RUN_DIR|CHECKPOINT [--data CSV] [--format json|csv] [--out FILE]
    s2kan forecast RUN_DIR|CHECKPOINT --system ikeda|ecosystem [--horizon N] [--out CSV]
    s2kan symbolify RUN_DIR|CHECKPOINT [--threshold T] [--library ...] [--out DIR]
    s2kan report RUN_DIR... [--format markdown|csv]

Every command exits 0 on success, 2 on usage or configuration errors and 1 on runtime errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import config as C
from .benchmarks import (
    EcosystemConfig,
    IkedaConfig,
    gen_dynamics_dataset,
    multistep_forecast,
    read_dataset_csv,
    write_dataset_csv,
)
from .errors import ConfigurationError, S2KANError
from .network import load, save
from .symbolify import extract_expression, symbolify_network
from .training import evaluate, train, write_history_csv

log = logging.getLogger("s2kan")

CHECKPOINT = "checkpoint.json"
CONFIG = "config.toml"
METRICS = "metrics.json"
HISTORY = "history.csv"


class UsageError(S2KANError):
    pass


# ---------------------------------------------------------------------------
# helpers


def load_config_file(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigurationError(f"config file {path} not found") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n",
                          encoding="utf-8")


def _resolve_checkpoint(target) -> tuple[Path, Path | None]:
    p = Path(target)
    if p.is_dir():
        ck = p / CHECKPOINT
        if not ck.exists():
            raise UsageError(f"{p} has no {CHECKPOINT}")
        return ck, p
    if not p.exists():
        raise UsageError(f"checkpoint {p} not found")
    run = p.parent if (p.parent / CONFIG).exists() else None
    return p, run


def _run_config(run: Path | None) -> dict | None:
    if run is None or not (run / CONFIG).exists():
        return None
    return load_config_file(run / CONFIG)


def _forecast_metrics(net, dyn, cfg) -> tuple[dict, object]:
    ref = dyn.test_trajectory
    horizon = cfg["forecast"]["horizon"]
    horizon = len(ref) - 1 if horizon < 0 else min(horizon, len(ref) - 1)
    fc = multistep_forecast(net, ref[0], horizon, dyn.system, ref, dyn.dt,
                            cfg["forecast"]["threshold_frac"])
    return {"multistep_rmse": fc.rmse, "accuracy_horizon": fc.accuracy_horizon,
            "forecast_horizon": horizon, "diverged_at": fc.diverged_at}, fc


def write_forecast_csv(path, fc) -> None:
    dim = fc.trajectory.shape[1]
    err = fc.abs_err
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["step"] + [f"pred_x{k}" for k in range(dim)]
                   + [f"ref_x{k}" for k in range(dim)] + ["abs_err"])
        for t in range(len(fc.trajectory)):
            w.writerow([t] + [repr(float(v)) for v in fc.trajectory[t]]
                       + [repr(float(v)) for v in fc.reference[t]] + [repr(float(err[t]))])


# ---------------------------------------------------------------------------
# commands


def cmd_train(cfg: dict, out, seed: int | None = None) -> Path:
    """Train one run and write its directory; returns the directory path."""
    cfg = C.resolve(cfg, seed)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    data_seed, init_seed, train_seed = C.seeds(cfg["seed"])
    data = C.build_data(cfg, data_seed)
    net = C.build_network(cfg, init_seed)
    tcfg = C.build_train_config(cfg, train_seed)
    log.info("training %s (%s, %s) for %d epochs", cfg["task"], cfg["mode"], cfg["shape"],
             tcfg.epochs)
    net, state = train(net, data.train, tcfg)

    (out / CONFIG).write_text(tomli_w.dumps(cfg), encoding="utf-8")
    (out / "seed.txt").write_text(f"{cfg['seed']}\n", encoding="utf-8")
    save(net, out / CHECKPOINT)
    write_history_csv(state.history, out / HISTORY)
    meta = {**(data.meta or {}), "seed": data_seed}
    write_dataset_csv(out / "train.csv", data.train, {**meta, "split": "train"})
    write_dataset_csv(out / "test.csv", data.test, {**meta, "split": "test"})

    summary = net.active_summary()
    metrics = {
        "task": cfg["task"], "mode": cfg["mode"], "shape": cfg["shape"],
        "beta": cfg["train"]["beta"], "seed": cfg["seed"],
        "epochs_run": state.epoch, "stopped_early": state.stopped_early,
        "train": evaluate(net, data.train).as_dict(),
        "test": evaluate(net, data.test).as_dict(),
        **summary.as_dict(),
    }
    if data.dynamics is not None:
        fm, fc = _forecast_metrics(net, data.dynamics, cfg)
        metrics.update(fm)
        write_forecast_csv(out / "forecast.csv", fc)
    if cfg["mode"] == "baseline+symbolify":
        sym = {}
        for t in cfg["symbolify"]["thresholds"]:
            new, rep = symbolify_network(net, cfg["symbolify"]["library"], float(t),
                                         cfg["symbolify"]["complexities"] or None, data.test)
            save(new, out / f"symbolified-t{t}.json")
            _write_json(out / f"symbolify-t{t}.json", rep.as_dict())
            sym[str(t)] = {"test_r2": rep.test_r2_after, "n_replaced": rep.n_replaced,
                           "percent_symbolic": new.active_summary().percent_symbolic}
        metrics["symbolify"] = sym
    _write_json(out / METRICS, metrics)
    return out


def cmd_eval(target, data_path=None, fmt="json", out=None) -> dict:
    ck, run = _resolve_checkpoint(target)
    if data_path is None:
        if run is None or not (run / "test.csv").exists():
            raise UsageError("no dataset given and no test.csv next to the checkpoint")
        data_path = run / "test.csv"
    net = load(ck)
    data, _ = read_dataset_csv(data_path)
    m = evaluate(net, data).as_dict()
    text = _format_metrics(m, fmt)
    sys.stdout.write(text)
    out = Path(out) if out else ck.parent / f"eval.{fmt}"
    out.write_text(text, encoding="utf-8")
    return m


def _format_metrics(m: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(m, indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(m))
        w.writerow([repr(float(v)) for v in m.values()])
        return buf.getvalue()
    raise UsageError(f"unsupported format {fmt!r} (json or csv)")


def cmd_forecast(target, system: str, horizon: int | None = None, out=None,
                 threshold_frac: float = 0.1) -> dict:
    ck, run = _resolve_checkpoint(target)
    if system not in ("ikeda", "ecosystem"):
        raise UsageError(f"unknown system {system!r} (ikeda or ecosystem)")
    cfg = _run_config(run)
    params = {}
    if cfg is not None and cfg.get("task") == system:
        params = dict(cfg.get("data", {}).get("params", {}))
    cls = IkedaConfig if system == "ikeda" else EcosystemConfig
    dyn = gen_dynamics_dataset(system, cls(**params))
    net = load(ck)
    if net.spec.input_dim != dyn.trajectory.shape[1]:
        raise UsageError(f"checkpoint has {net.spec.input_dim} inputs; {system} needs "
                         f"{dyn.trajectory.shape[1]}")
    ref = dyn.test_trajectory
    h = len(ref) - 1 if horizon is None or horizon < 0 else min(horizon, len(ref) - 1)
    fc = multistep_forecast(net, ref[0], h, system, ref, dyn.dt, threshold_frac)
    out = Path(out) if out else ck.parent / "forecast.csv"
    write_forecast_csv(out, fc)
    if fc.diverged_at is not None:
        print(f"warning: forecast diverged at step {fc.diverged_at}; file truncated",
              file=sys.stderr)
    res = {"rmse": fc.rmse, "accuracy_horizon": fc.accuracy_horizon, "horizon": h,
           "diverged_at": fc.diverged_at, "file": str(out)}
    print(json.dumps(res, indent=2))
    return res


def cmd_symbolify(target, threshold: float = 0.95, library=None, data_path=None,
                  out=None) -> dict:
    ck, run = _resolve_checkpoint(target)
    net = load(ck)
    out = Path(out) if out else ck.parent
    out.mkdir(parents=True, exist_ok=True)
    if not net.gates_fixed_open:
        expr = extract_expression(net)
        _write_json(out / "expression.json", expr.to_dict())
        print(str(expr))
        return {"expression": str(expr)}
    if data_path is None and run is not None and (run / "test.csv").exists():
        data_path = run / "test.csv"
    test = read_dataset_csv(data_path)[0] if data_path else None
    new, rep = symbolify_network(net, library, threshold, None, test)
    save(new, out / f"symbolified-t{threshold}.json")
    _write_json(out / f"symbolify-t{threshold}.json", rep.as_dict())
    res = {"threshold": threshold, "n_replaced": rep.n_replaced,
           "test_r2_before": rep.test_r2_before, "test_r2_after": rep.test_r2_after}
    print(json.dumps(res, indent=2, default=_json_default))
    return res


REPORT_COLUMNS = ["run", "task", "mode", "shape", "beta", "r2", "rmse", "active_funcs", "k",
                  "percent_symbolic"]


def report_rows(runs) -> list[dict]:
    rows = []
    for r in runs:
        p = Path(r)
        mp = p / METRICS
        if not mp.exists():
            raise UsageError(f"{p} is not a run directory (no {METRICS})")
        m = json.loads(mp.read_text(encoding="utf-8"))
        row = {"run": p.name, "task": m["task"], "mode": m["mode"], "shape": m["shape"],
               "beta": m["beta"], "r2": m["test"]["r2"], "rmse": m["test"]["rmse"],
               "active_funcs": m["active_functions"], "k": m["k"],
               "percent_symbolic": m["percent_symbolic"]}
        if "multistep_rmse" in m:
            row["multistep_rmse"] = m["multistep_rmse"]
        for t, s in m.get("symbolify", {}).items():
            row[f"r2_t{t}"] = s["test_r2"]
        rows.append(row)
    return rows


def cmd_report(runs, fmt="markdown") -> str:
    if not runs:
        raise UsageError("report needs at least one run directory")
    rows = report_rows(runs)
    cols = list(REPORT_COLUMNS)
    for r in rows:
        cols += [c for c in r if c not in cols]

    def cell(v):
        if v is None:
            return ""
        if isinstance(v, float):
            return f"{v:.4g}" if fmt == "markdown" else repr(v)
        return str(v)

    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([cell(r.get(c)) for c in cols])
        text = buf.getvalue()
    elif fmt == "markdown":
        lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
        lines += ["| " + " | ".join(cell(r.get(c)) for c in cols) + " |" for r in rows]
        text = "\n".join(lines) + "\n"
    else:
        raise UsageError(f"unsupported format {fmt!r} (markdown or csv)")
    sys.stdout.write(text)
    return text


def cmd_list_presets() -> list[str]:
    names = sorted(C.PRESETS)
    for n in names:
        print(n)
    return names


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="s2kan", description="Train and inspect gated KANs.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a preset or a TOML config")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config")
    src.add_argument("--preset")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, help="override train.epochs")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset CSV")
    p.add_argument("target")
    p.add_argument("--data")
    p.add_argument("--format", default="json", choices=["json", "csv"])
    p.add_argument("--out")

    p = sub.add_parser("forecast", help="autonomous multi-step forecast")
    p.add_argument("target")
    p.add_argument("--system", required=True)
    p.add_argument("--horizon", type=int)
    p.add_argument("--threshold-frac", type=float, default=0.1)
    p.add_argument("--out")

    p = sub.add_parser("symbolify", help="post-hoc symbolification or expression extraction")
    p.add_argument("target")
    p.add_argument("--threshold", type=float, default=0.95)
    p.add_argument("--library", nargs="+")
    p.add_argument("--data")
    p.add_argument("--out")

    p = sub.add_parser("report", help="comparison table over run directories")
    p.add_argument("runs", nargs="+")
    p.add_argument("--format", default="markdown", choices=["markdown", "csv"])

    sub.add_parser("list-presets", help="print preset names")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "train":
            cfg = C.preset(args.preset) if args.preset else load_config_file(args.config)
            if args.epochs is not None:
                cfg.setdefault("train", {})["epochs"] = args.epochs
            out = cmd_train(cfg, args.out, args.seed)
            print(out)
        elif args.command == "eval":
            cmd_eval(args.target, args.data, args.format, args.out)
        elif args.command == "forecast":
            cmd_forecast(args.target, args.system, args.horizon, args.out, args.threshold_frac)
        elif args.command == "symbolify":
            cmd_symbolify(args.target, args.threshold, args.library, args.data, args.out)
        elif args.command == "report":
            cmd_report(args.runs, args.format)
        elif args.command == "list-presets":
            cmd_list_presets()
    except (ConfigurationError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except S2KANError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
