"""Regression and trading metrics, and walk-forward backtesting."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from .data import FeatureMatrix, select_k_best, standardize

TRADING_DAYS = 252


class SizingError(ValueError):
    pass


class LookaheadError(AssertionError):
    pass


def _pair(y, yhat):
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    yhat = np.asarray(yhat, dtype=np.float64).reshape(-1)
    if y.shape != yhat.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {yhat.shape}")
    if y.size == 0:
        raise ValueError("empty series")
    return y, yhat


def regression_metrics(y, yhat) -> dict:
    """``mse, rmse, mae, r2``; ``r2`` is None when ``y`` is constant."""
    y, yhat = _pair(y, yhat)
    err = yhat - y
    mse = float(np.mean(err * err))
    sst = float(np.sum((y - y.mean()) ** 2))
    r2 = None if sst == 0 else 1.0 - float(np.sum(err * err)) / sst
    return {"mse": mse, "rmse": float(np.sqrt(mse)), "mae": float(np.mean(np.abs(err))), "r2": r2}


def strategy_returns(yhat, y) -> np.ndarray:
    """Unit long/short by forecast sign; zero forecast means no position."""
    y, yhat = _pair(y, yhat)
    return np.sign(yhat) * y


def sharpe_ratio(r, rf: float = 0.0, trading_days: int = TRADING_DAYS):
    r = np.asarray(r, dtype=np.float64)
    if r.size < 2:
        return None
    sd = float(np.std(r, ddof=1))
    if sd == 0:
        return None
    return (float(np.mean(r)) - rf) / sd * np.sqrt(trading_days)


def win_rate(r) -> float:
    r = np.asarray(r, dtype=np.float64)
    return 100.0 * float(np.count_nonzero(r > 0)) / r.size


def direction_accuracy(yhat, y) -> float:
    y, yhat = _pair(y, yhat)
    return 100.0 * float(np.mean(np.sign(yhat) == np.sign(y)))


def cumulative_return(r) -> float:
    return float(np.prod(1.0 + np.asarray(r, dtype=np.float64)) - 1.0)


def value_path(r) -> np.ndarray:
    return np.concatenate([[1.0], np.cumprod(1.0 + np.asarray(r, dtype=np.float64))])


def max_drawdown_of_path(v) -> float:
    v = np.asarray(v, dtype=np.float64)
    return float(np.min(v / np.maximum.accumulate(v) - 1.0))


def max_drawdown(r) -> float:
    return max_drawdown_of_path(value_path(r))


def profit_factor(r):
    r = np.asarray(r, dtype=np.float64)
    losses = float(-np.sum(r[r < 0]))
    if losses == 0:
        return None
    return float(np.sum(r[r > 0])) / losses


def trading_metrics(r, rf: float = 0.0, trading_days: int = TRADING_DAYS, yhat=None, y=None) -> dict:
    """Financial summary of a trade return series.

    Undefined ratios are None. ``direction_accuracy`` needs ``yhat`` and ``y``.
    """
    r = np.asarray(r, dtype=np.float64).reshape(-1)
    if r.size == 0:
        raise ValueError("empty return series")
    wins, losses = r[r > 0], r[r < 0]
    out = {
        "sharpe": sharpe_ratio(r, rf, trading_days),
        "win_rate": win_rate(r),
        "cumulative_return": cumulative_return(r),
        "max_drawdown": max_drawdown(r),
        "profit_factor": profit_factor(r),
        "total_trades": int(r.size),
        "profitable_trades": int(wins.size),
        "avg_return": float(np.mean(r)),
        "avg_win": float(np.mean(wins)) if wins.size else None,
        "avg_loss": float(np.mean(losses)) if losses.size else None,
    }
    if yhat is not None and y is not None:
        out["direction_accuracy"] = direction_accuracy(yhat, y)
    return out


def evaluate_predictions(y, yhat, rf: float = 0.0) -> dict:
    """Regression plus trading metrics for return-unit forecasts."""
    y, yhat = _pair(y, yhat)
    return regression_metrics(y, yhat) | trading_metrics(strategy_returns(yhat, y), rf, yhat=yhat, y=y)


# ---------------------------------------------------------------------------
# walk-forward
# ---------------------------------------------------------------------------

METRIC_KEYS = ("mse", "rmse", "mae", "r2", "sharpe", "direction_accuracy", "win_rate", "cumulative_return",
               "max_drawdown", "profit_factor", "avg_return")


@dataclass
class WalkForwardConfig:
    train_len: int = 252
    test_len: int = 63
    n_windows: int | None = None
    n_runs: int = 5
    val_fraction: float = 0.15
    rf: float = 0.0
    seed: int = 0


@dataclass
class Window:
    index: int
    train: slice
    test: slice


@dataclass
class BacktestReport:
    config: dict
    windows: list[dict] = field(default_factory=list)
    rows: list[dict] = field(default_factory=list)
    per_window: list[dict] = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)
    pooled: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def plan_windows(n_rows: int, train_len: int, test_len: int, n_windows: int | None = None) -> list[Window]:
    if train_len < 1 or test_len < 1:
        raise SizingError("train_len and test_len must be >= 1")
    feasible = max(0, (n_rows - train_len) // test_len)
    if feasible == 0 or (n_windows is not None and n_windows > feasible):
        raise SizingError(f"{n_rows} rows allow at most {feasible} windows of {train_len}+{test_len}")
    count = feasible if n_windows is None else n_windows
    out = []
    for w in range(count):
        s = w * test_len
        out.append(Window(w, slice(s, s + train_len), slice(s + train_len, s + train_len + test_len)))
    return out


def assert_no_overlap(dates, window: Window) -> None:
    train = set(np.asarray(dates)[window.train].tolist())
    test = np.asarray(dates)[window.test].tolist()
    shared = train.intersection(test)
    if shared:
        raise LookaheadError(f"window {window.index}: {len(shared)} test timestamps inside the training window")
    if max(train) >= min(test):
        raise LookaheadError(f"window {window.index}: test starts before training ends")


def window_matrix(fm: FeatureMatrix, window: Window, val_fraction: float = 0.15) -> FeatureMatrix:
    """Rows of one window tagged train/val/test; val is the tail of the training span."""
    n_train = window.train.stop - window.train.start
    n_val = max(1, int(np.floor(val_fraction * n_train)))
    idx = np.arange(window.train.start, window.test.stop)
    split = np.array(["train"] * (n_train - n_val) + ["val"] * n_val + ["test"] * (window.test.stop - window.test.start))
    return replace(fm.rows(idx), split=split)


FitPredict = Callable[[FeatureMatrix, int], np.ndarray]


def _mean_std(values):
    vals = [v for v in values if v is not None and np.isfinite(v)]
    if not vals:
        return None, None
    sd = float(np.std(vals, ddof=1)) if len(vals) > 1 else None
    return float(np.mean(vals)), sd


def walk_forward(fm: FeatureMatrix, fit_predict: FitPredict, config: WalkForwardConfig | None = None) -> BacktestReport:
    """Rolling train/test evaluation repeated over ``n_runs`` seeds.

    ``fm`` holds raw engineered features with return-unit targets; each window
    redoes selection and scaling on its own training rows. ``fit_predict(wm, seed)``
    trains on ``wm``'s train/val rows and returns return-unit forecasts for its test rows.
    """
    config = config or WalkForwardConfig()
    if config.n_runs < 1:
        raise SizingError("n_runs must be >= 1")
    windows = plan_windows(len(fm), config.train_len, config.test_len, config.n_windows)
    report = BacktestReport(config=asdict(config))
    pooled_r, pooled_y, pooled_hat = [], [], []
    for w in windows:
        assert_no_overlap(fm.dates, w)
        report.windows.append({
            "window": w.index,
            "train_start": str(fm.dates[w.train.start]), "train_end": str(fm.dates[w.train.stop - 1]),
            "test_start": str(fm.dates[w.test.start]), "test_end": str(fm.dates[w.test.stop - 1]),
        })
        wm = window_matrix(fm, w, config.val_fraction)
        y_test = fm.y[w.test]
        for run in range(config.n_runs):
            seed = config.seed + 1000 * run + w.index
            yhat = np.asarray(fit_predict(wm, seed), dtype=np.float64)
            m = evaluate_predictions(y_test, yhat, config.rf)
            report.rows.append({"window": w.index, "run": run, "seed": seed} | {k: m[k] for k in METRIC_KEYS}
                               | {"total_trades": m["total_trades"], "profitable_trades": m["profitable_trades"]})
            r = strategy_returns(yhat, y_test)
            if run == 0:
                pooled_r.append(r)
                pooled_y.append(y_test)
                pooled_hat.append(yhat)
    for w in windows:
        rows = [r for r in report.rows if r["window"] == w.index]
        entry = {"window": w.index}
        for k in METRIC_KEYS:
            entry[f"{k}_mean"], entry[f"{k}_std"] = _mean_std([r[k] for r in rows])
        report.per_window.append(entry)
    for k in METRIC_KEYS:
        run_means = []
        for run in range(config.n_runs):
            vals = [r[k] for r in report.rows if r["run"] == run and r[k] is not None]
            run_means.append(float(np.mean(vals)) if vals else None)
        mean, sd = _mean_std(run_means)
        report.aggregate[k] = {"mean": mean, "std": sd}
    r_all, y_all, h_all = map(np.concatenate, (pooled_r, pooled_y, pooled_hat))
    report.pooled = trading_metrics(r_all, config.rf, yhat=h_all, y=y_all)
    return report


def kan_fit_predict(k: int = 8, model_config=None, train_config=None) -> FitPredict:
    """Window trainer for the regime network: select ``k`` features, standardize, train, forecast."""
    from .model import ModelConfig, RegimeKAN
    from .training import TrainConfig, train

    def fit(wm: FeatureMatrix, seed: int) -> np.ndarray:
        prepared = standardize(select_k_best(wm, min(k, len(wm.names))))
        mc = replace(model_config or ModelConfig(), input_dim=prepared.X.shape[1], seed=seed)
        tc = replace(train_config or TrainConfig(), seed=seed)
        model = RegimeKAN(mc, tc.lambda_sparsity)
        model, _ = train(model, prepared, tc)
        Xte, _ = prepared.part("test")
        return prepared.target_scaler.inverse_transform(model.predict(Xte))

    return fit
