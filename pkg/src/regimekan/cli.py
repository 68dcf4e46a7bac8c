"""Command-line entry point.

    regimekan simulate --out runs/a
    regimekan ingest   --data runs/a/simulated.csv --out runs/a
    regimekan train    --out runs/a --seed 42
    regimekan evaluate --out runs/a
    regimekan backtest --data runs/a/simulated.csv --out runs/a
    regimekan explain  --out runs/a
    regimekan report   --out runs/a

Every command accepts ``--seed``, ``--config`` and ``--out``; ``--set key=value``
overrides single config entries. Exit status is 0 on success, 1 on data or
schema errors, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile

import numpy as np

from . import checkpoint
from .charts import backtest_charts
from .config import ConfigError, RunConfig, dump_config, load_config
from .data import engineer_features, load_ohlcv, prepare, save_feature_matrix, load_feature_matrix
from .evaluation import evaluate_predictions, kan_fit_predict, walk_forward
from .explain import attribution_table, extract_rules
from .model import RegimeKAN
from .synth import MarkovSpec, TransitionSpec, gen_markov, gen_smooth_transition, write_simulation
from .training import train, tune_sparsity

COMMANDS = ("ingest", "train", "evaluate", "backtest", "explain", "simulate", "report")

FEATURES = "features.csv"
CHECKPOINT = "model.ckpt"


class CommandError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# atomic output helpers
# ---------------------------------------------------------------------------


def _tmp_path(path: str) -> str:
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), prefix=".tmp-",
                               suffix=os.path.splitext(path)[1])
    os.close(fd)
    return tmp


def write_text(path: str, text: str) -> None:
    tmp = _tmp_path(path)
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_json(path: str, obj) -> None:
    write_text(path, json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def write_csv(path: str, rows: list[dict]) -> None:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: "" if v is None else (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    write_text(path, buf.getvalue())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _out(cfg: RunConfig, name: str) -> str:
    return os.path.join(cfg.out, name)


def _need(path: str, hint: str) -> str:
    if not os.path.exists(path):
        raise CommandError(f"missing {path} ({hint})")
    return path


def _data_path(cfg: RunConfig) -> str:
    if not cfg.data.path:
        raise CommandError("no input data: pass --data or set data.path")
    return _need(cfg.data.path, "input data file")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_ingest(cfg: RunConfig) -> list[str]:
    frame = load_ohlcv(_data_path(cfg), cfg.data.delimiter)
    fm = prepare(frame, cfg.data.k, cfg.fractions())
    target = _out(cfg, FEATURES)
    tmp = _tmp_path(target)
    sidecar_tmp = save_feature_matrix(fm, tmp, extra={"config": cfg.echo(), "source": frame.source_id,
                                                      "dropped_rows": frame.dropped_rows})
    os.replace(sidecar_tmp, os.path.splitext(target)[0] + ".json")
    os.replace(tmp, target)
    return [target]


def _features(cfg: RunConfig):
    return load_feature_matrix(_need(_out(cfg, FEATURES), "run 'ingest' first"))


def _pipeline_state(fm, cfg: RunConfig) -> checkpoint.PipelineState:
    if fm.scaler is None or fm.target_scaler is None:
        raise CommandError("feature bundle has no scaler statistics")
    return checkpoint.PipelineState(list(fm.names), fm.scaler, fm.target_scaler, list(fm.selected), cfg.seed)


def cmd_train(cfg: RunConfig) -> list[str]:
    fm = _features(cfg)
    tc = cfg.train_config()
    log = io.StringIO()
    if cfg.train.tune_sparsity:
        lam, model, report = tune_sparsity(lambda l: RegimeKAN(cfg.model_config(fm.X.shape[1]), l), fm, tc)
        cfg.train.lambda_sparsity = lam
    else:
        model, report = train(RegimeKAN(cfg.model_config(fm.X.shape[1]), tc.lambda_sparsity), fm, tc, log=log)
    ckpt = _out(cfg, CHECKPOINT)
    checkpoint.save(model, _pipeline_state(fm, cfg), ckpt, config=cfg.echo())
    rep = _out(cfg, "train_report.json")
    write_json(rep, _jsonable({"config": cfg.echo(), "report": report.to_dict(),
                               "n_parameters": model.n_parameters}))
    write_text(_out(cfg, "train.log"), log.getvalue())
    return [ckpt, rep]


def _load_model(cfg: RunConfig):
    model, state, _ = checkpoint.load(_need(_out(cfg, CHECKPOINT), "run 'train' first"))
    return model, state


def _check_simplex(probs: np.ndarray) -> None:
    if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-9):
        raise CommandError("regime probabilities left the simplex")


def cmd_evaluate(cfg: RunConfig) -> list[str]:
    fm = _features(cfg)
    model, state = _load_model(cfg)
    X, y = fm.part("test")
    yhat = state.target_scaler.inverse_transform(model.predict(X))
    y_ret = state.target_scaler.inverse_transform(y)
    probs = model.regime_probs(fm.X)
    _check_simplex(probs)
    metrics = evaluate_predictions(y_ret, yhat, cfg.backtest.rf)
    test_probs = probs[fm.mask("test")]
    out = {
        "config": cfg.echo(),
        "split": "test",
        "n": int(y.size),
        "metrics": metrics,
        "regime_occupancy": np.bincount(np.argmax(test_probs, axis=1), minlength=model.config.n_regimes).tolist(),
        "mean_regime_probs": test_probs.mean(axis=0).tolist(),
    }
    path = _out(cfg, "metrics.json")
    write_json(path, _jsonable(out))
    regimes = [{"date": str(d), "split": str(s), **{f"p{k}": float(p[k]) for k in range(p.size)},
                "regime": int(np.argmax(p))} for d, s, p in zip(fm.dates, fm.split, probs)]
    write_csv(_out(cfg, "regimes.csv"), regimes)
    return [path, _out(cfg, "regimes.csv")]


def cmd_backtest(cfg: RunConfig) -> list[str]:
    frame = load_ohlcv(_data_path(cfg), cfg.data.delimiter)
    fm = engineer_features(frame)
    fit = kan_fit_predict(cfg.data.k, cfg.model_config(cfg.data.k), cfg.train_config(max_epochs=cfg.backtest.max_epochs))
    report = walk_forward(fm, fit, cfg.walk_forward_config())
    payload = _jsonable({"config": cfg.echo()} | report.to_dict())
    paths = [_out(cfg, "backtest.json"), _out(cfg, "backtest.csv"), _out(cfg, "backtest_windows.csv")]
    write_json(paths[0], payload)
    write_csv(paths[1], payload["rows"])
    write_csv(paths[2], payload["per_window"])
    for key, svg in backtest_charts(payload["per_window"]).items():
        p = _out(cfg, f"backtest_{key}.svg")
        write_text(p, svg)
        paths.append(p)
    return paths


def cmd_explain(cfg: RunConfig) -> list[str]:
    fm = _features(cfg)
    model, state = _load_model(cfg)
    X, _ = fm.part("test")
    rules = extract_rules(model, X, fm.names, cfg.attribution_config(), to_returns=state.target_scaler.inverse_transform)
    probs = model.regime_probs(X)
    _check_simplex(probs)
    path = _out(cfg, "rules.json")
    write_json(path, _jsonable({"config": cfg.echo(), "rules": rules.to_json()}))
    table = _out(cfg, "attribution.csv")
    write_csv(table, attribution_table(rules))
    return [path, table]


def cmd_simulate(cfg: RunConfig) -> list[str]:
    s = cfg.simulate
    try:
        mu = [float(v) for v in s.mu.split(",")]
        sigma = [float(v) for v in s.sigma.split(",")]
    except ValueError:
        raise ConfigError("simulate.mu and simulate.sigma must be comma-separated numbers") from None
    if s.kind == "markov":
        k = len(mu)
        A = np.full((k, k), (1.0 - s.persistence) / max(k - 1, 1))
        np.fill_diagonal(A, s.persistence if k > 1 else 1.0)
        _, labels, frame = gen_markov(MarkovSpec(A, np.array(mu), np.array(sigma), s.T, cfg.seed))
    elif s.kind == "lstar":
        if len(mu) < 2:
            raise ConfigError("lstar needs two means in simulate.mu")
        _, labels, frame = gen_smooth_transition(TransitionSpec(s.gamma, s.c, mu[0], mu[1], sigma=sigma[0],
                                                                T=s.T, seed=cfg.seed))
    else:
        raise ConfigError(f"unknown simulate.kind '{s.kind}' (markov or lstar)")
    target = _out(cfg, "simulated.csv")
    tmp = _tmp_path(target)
    sidecar = write_simulation(frame, labels, tmp, extra={"config": cfg.echo()})
    os.replace(sidecar, os.path.splitext(target)[0] + ".labels.json")
    os.replace(tmp, target)
    return [target]


def _read_json(path):
    if not os.path.exists(path):
        return None
    with open(path) as fh:
        return json.load(fh)


def _fmt(v):
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def cmd_report(cfg: RunConfig) -> list[str]:
    lines = ["# Run summary", ""]
    found = False
    tr = _read_json(_out(cfg, "train_report.json"))
    if tr:
        found = True
        r = tr["report"]
        lines += ["## Training", "",
                  f"- parameters: {tr['n_parameters']}",
                  f"- epochs run: {r['stopped_epoch']} (best epoch {r['best_epoch']})",
                  f"- best validation loss: {_fmt(r['best_val_loss'])}",
                  f"- clipped steps: {r['n_clipped']} of {r['steps']}", ""]
    m = _read_json(_out(cfg, "metrics.json"))
    if m:
        found = True
        lines += ["## Test split", "", "| metric | value |", "|---|---|"]
        lines += [f"| {k} | {_fmt(v)} |" for k, v in m["metrics"].items()]
        lines += ["", f"Regime occupancy on test rows: {m['regime_occupancy']}", ""]
    b = _read_json(_out(cfg, "backtest.json"))
    if b:
        found = True
        lines += ["## Walk-forward", "", f"{len(b['windows'])} windows x {b['config']['n_runs']} runs", "",
                  "| metric | mean | std |", "|---|---|---|"]
        lines += [f"| {k} | {_fmt(v['mean'])} | {_fmt(v['std'])} |" for k, v in b["aggregate"].items()]
        lines.append("")
    rules = _read_json(_out(cfg, "rules.json"))
    if rules:
        found = True
        lines += ["## Regime rules", ""] + [f"- `{r['rule_string']}`" for r in rules["rules"]] + [""]
    if not found:
        raise CommandError(f"no artifacts found in {cfg.out}")
    path = _out(cfg, "report.md")
    write_text(path, "\n".join(lines))
    return [path]


HANDLERS = {
    "ingest": cmd_ingest, "train": cmd_train, "evaluate": cmd_evaluate, "backtest": cmd_backtest,
    "explain": cmd_explain, "simulate": cmd_simulate, "report": cmd_report,
}


HELP = {
    "ingest": "load OHLCV data and write the feature bundle",
    "train": "fit a model on the feature bundle",
    "evaluate": "test-split metrics for the trained model",
    "backtest": "walk-forward evaluation with charts",
    "explain": "per-regime Shapley rules",
    "simulate": "write a synthetic regime-switching OHLCV file",
    "report": "summarise existing artifacts",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="seed for every random draw")
    common.add_argument("--config", help="flat 'section.key = value' config file")
    common.add_argument("--out", help="output directory (default: $REGIMEKAN_OUT or ./out)")
    common.add_argument("--data", help="OHLCV input file (same as data.path)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config entry")
    common.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    parser = argparse.ArgumentParser(prog="regimekan", description="Regime-aware spline forecasting pipeline.")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=HELP[name])
    return parser


def resolve_config(args) -> RunConfig:
    overrides = []
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides.append((k, v))
    if args.data is not None:
        overrides.append(("data.path", args.data))
    if args.seed is not None:
        overrides.append(("seed", str(args.seed)))
    if args.out is not None:
        overrides.append(("out", args.out))
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
        if args.print_config:
            sys.stdout.write(dump_config(cfg))
            return 0
        os.makedirs(cfg.out, exist_ok=True)
        for path in HANDLERS[args.command](cfg):
            print(path)
    except (ConfigError, ValueError, KeyError, OSError, CommandError, checkpoint.CheckpointError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"regimekan {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
