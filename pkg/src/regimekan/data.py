"""OHLCV ingestion, lookahead-safe feature engineering, splitting and scaling."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field, replace
from datetime import datetime

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

logger = logging.getLogger(__name__)

PRICE_COLUMNS = ("open", "high", "low", "close", "adj_close")
NUMERIC_COLUMNS = PRICE_COLUMNS + ("volume",)

_ALIASES = {
    "date": "date",
    "open": "open",
    "high": "high",
    "low": "low",
    "close": "close",
    "close*": "close",
    "adj close": "adj_close",
    "adj close**": "adj_close",
    "adj_close": "adj_close",
    "adjclose": "adj_close",
    "volume": "volume",
}
REQUIRED = ("date", "open", "high", "low", "close", "volume")

FEATURE_NAMES = (
    "ret_lag_1",
    "ret_lag_2",
    "ret_lag_3",
    "roll_mean_5",
    "roll_std_5",
    "roll_std_20",
    "OC_spread",
    "HL_spread",
    "price_velocity",
    "price_acceleration",
    "momentum_state",
    "volatility_ratio",
    "ATR_14",
    "volume_z_20",
    "day_of_week",
)
# first row index with a complete closed-left history for every feature
WARMUP = 21


class SchemaError(ValueError):
    pass


class EmptyInput(ValueError):
    pass


class InsufficientData(ValueError):
    pass


class SplitError(ValueError):
    pass


@dataclass
class MarketFrame:
    """Daily OHLCV rows in ascending date order, forward-filled."""

    data: pd.DataFrame
    source_id: str = ""
    dropped_rows: int = 0

    def __len__(self):
        return len(self.data)

    @property
    def dates(self) -> np.ndarray:
        return self.data["date"].to_numpy()

    def column(self, name: str) -> np.ndarray:
        return self.data[name].to_numpy(dtype=np.float64)

    def truncate(self, n: int) -> "MarketFrame":
        return MarketFrame(self.data.iloc[:n].reset_index(drop=True), self.source_id, self.dropped_rows)


@dataclass
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Scaler":
        x = np.asarray(x, dtype=np.float64)
        return cls(x.mean(axis=0), x.std(axis=0))

    def transform(self, x):
        x = np.asarray(x, dtype=np.float64)
        safe = np.where(self.std > 0, self.std, 1.0)
        return np.where(self.std > 0, (x - self.mean) / safe, 0.0)

    def inverse_transform(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": np.atleast_1d(self.mean).tolist(), "std": np.atleast_1d(self.std).tolist()}

    @classmethod
    def from_dict(cls, d: dict, scalar: bool = False) -> "Scaler":
        mean, std = np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64)
        if scalar:
            return cls(mean.reshape(()), std.reshape(()))
        return cls(mean, std)


@dataclass
class FeatureMatrix:
    names: list[str]
    X: np.ndarray
    y: np.ndarray
    dates: np.ndarray
    split: np.ndarray | None = None
    scaler: Scaler | None = None
    target_scaler: Scaler | None = None
    selected: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.y)

    def mask(self, tag: str) -> np.ndarray:
        if self.split is None:
            raise SplitError("split tags not assigned")
        return self.split == tag

    def part(self, tag: str) -> tuple[np.ndarray, np.ndarray]:
        m = self.mask(tag)
        return self.X[m], self.y[m]

    def rows(self, idx) -> "FeatureMatrix":
        return replace(self, X=self.X[idx], y=self.y[idx], dates=self.dates[idx],
                       split=None if self.split is None else self.split[idx])


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------


def _parse_date(text: str):
    text = str(text).strip()
    for fmt in ("%Y-%m-%d", "%b %d, %Y"):
        try:
            return datetime.strptime(text, fmt).date()
        except ValueError:
            pass
    try:
        return datetime.fromisoformat(text).date()
    except ValueError:
        raise SchemaError(f"unrecognised date {text!r} (expected ISO-8601 or 'Mon DD, YYYY')") from None


def _to_number(series: pd.Series) -> pd.Series:
    cleaned = series.astype(str).str.replace(",", "", regex=False).str.strip()
    return pd.to_numeric(cleaned, errors="coerce")


def load_ohlcv(path, delimiter: str = ",") -> MarketFrame:
    """Read a delimited OHLCV file, sort by date and forward-fill gaps.

    A missing adjusted close column is filled from close.
    """
    raw = pd.read_csv(path, sep=delimiter, dtype=str, keep_default_na=False, skipinitialspace=True)
    rename = {}
    for col in raw.columns:
        key = _ALIASES.get(col.strip().lower())
        if key and key not in rename.values():
            rename[col] = key
    raw = raw.rename(columns=rename)
    for col in REQUIRED:
        if col not in raw.columns:
            raise SchemaError(f"missing required column '{col}'")
    if "adj_close" not in raw.columns:
        raw["adj_close"] = raw["close"]
    if raw.empty:
        raise EmptyInput(f"{path}: no data rows")

    df = pd.DataFrame({"date": [_parse_date(d) for d in raw["date"]]})
    for col in NUMERIC_COLUMNS:
        df[col] = _to_number(raw[col]).to_numpy()
    df = df.sort_values("date", kind="mergesort").drop_duplicates("date", keep="last").reset_index(drop=True)
    df[list(NUMERIC_COLUMNS)] = df[list(NUMERIC_COLUMNS)].ffill()
    complete = df[list(NUMERIC_COLUMNS)].notna().all(axis=1).to_numpy()
    first = int(np.argmax(complete)) if complete.any() else len(df)
    dropped = first
    df = df.iloc[first:].reset_index(drop=True)
    if df.empty:
        raise EmptyInput(f"{path}: zero parseable rows")
    if (df[list(PRICE_COLUMNS)] <= 0).any().any():
        raise SchemaError("non-positive price after forward-fill")
    if (df["volume"] < 0).any():
        raise SchemaError("negative volume")
    if dropped:
        logger.info("dropped %d leading rows with unfillable cells", dropped)
    return MarketFrame(df, source_id=os.path.basename(str(path)), dropped_rows=dropped)


def frame_from_arrays(dates, open_, high, low, close, volume, adj_close=None, source_id="") -> MarketFrame:
    df = pd.DataFrame(
        {
            "date": list(dates),
            "open": np.asarray(open_, dtype=np.float64),
            "high": np.asarray(high, dtype=np.float64),
            "low": np.asarray(low, dtype=np.float64),
            "close": np.asarray(close, dtype=np.float64),
            "adj_close": np.asarray(close if adj_close is None else adj_close, dtype=np.float64),
            "volume": np.asarray(volume, dtype=np.float64),
        }
    )
    return MarketFrame(df, source_id=source_id)


def write_ohlcv(frame: MarketFrame, path) -> None:
    out = frame.data.copy()
    out["date"] = [str(d) for d in out["date"]]
    out = out.rename(columns={"date": "Date", "open": "Open", "high": "High", "low": "Low",
                              "close": "Close", "adj_close": "Adj Close", "volume": "Volume"})
    out.to_csv(path, index=False, float_format="%.10g")


# ---------------------------------------------------------------------------
# target and features
# ---------------------------------------------------------------------------


def compute_target(frame: MarketFrame) -> np.ndarray:
    """Next-day fractional return; the last row has no target and is omitted."""
    close = frame.column("close")
    if close.size < 2:
        raise InsufficientData("need at least 2 rows to form a next-day return")
    return (close[1:] - close[:-1]) / close[:-1]


def _closed_left(values: np.ndarray, window: int, reducer) -> np.ndarray:
    """``reducer`` over ``values[t - window : t]`` for each t (NaN where unavailable)."""
    out = np.full(values.shape, np.nan)
    if values.size > window:
        out[window:] = reducer(sliding_window_view(values, window)[:-1])
    return out


def _mean(w):
    return w.mean(axis=-1)


def _std(w):
    return w.std(axis=-1, ddof=1)


def feature_table(frame: MarketFrame) -> np.ndarray:
    """All features for every row of ``frame`` (NaN where history is short)."""
    o, h, l, c = (frame.column(k) for k in ("open", "high", "low", "close"))
    v = frame.column("volume")
    n = c.size
    ret = np.full(n, np.nan)
    ret[1:] = c[1:] / c[:-1] - 1.0

    def lag(x, k):
        out = np.full(n, np.nan)
        out[k:] = x[: n - k]
        return out

    roll_mean_5 = _closed_left(ret, 5, _mean)
    roll_std_5 = _closed_left(ret, 5, _std)
    roll_std_20 = _closed_left(ret, 20, _std)
    velocity = _closed_left(ret, 3, _mean)
    accel = velocity - lag(velocity, 1)
    tr = np.full(n, np.nan)
    prev_c = lag(c, 1)
    tr[1:] = np.maximum.reduce([h[1:] - l[1:], np.abs(h[1:] - prev_c[1:]), np.abs(l[1:] - prev_c[1:])])
    atr = _closed_left(tr / c, 14, _mean)
    vol_mean = _closed_left(v, 20, _mean)
    vol_std = _closed_left(v, 20, _std)
    with np.errstate(divide="ignore", invalid="ignore"):
        vol_ratio = np.where(roll_std_20 > 0, roll_std_5 / roll_std_20, 1.0)
        vol_z = np.where(vol_std > 0, (v - vol_mean) / vol_std, 0.0)
    vol_ratio[np.isnan(roll_std_20)] = np.nan
    vol_z[np.isnan(vol_std)] = np.nan
    dow = np.array([pd.Timestamp(d).dayofweek for d in frame.dates], dtype=np.float64)

    cols = [
        lag(ret, 1),
        lag(ret, 2),
        lag(ret, 3),
        roll_mean_5,
        roll_std_5,
        roll_std_20,
        (c - o) / o,
        (h - l) / c,
        velocity,
        accel,
        np.sign(roll_mean_5),
        vol_ratio,
        atr,
        vol_z,
        dow,
    ]
    return np.column_stack(cols)


def engineer_features(frame: MarketFrame) -> FeatureMatrix:
    """Feature rows paired with their next-day return target.

    Rows without full history, and the final row (no future close), are dropped.
    """
    if len(frame) < WARMUP + 2:
        raise InsufficientData(f"need at least {WARMUP + 2} rows, got {len(frame)}")
    table = feature_table(frame)
    y = compute_target(frame)
    rows = slice(WARMUP, len(frame) - 1)
    X = table[rows]
    if np.isnan(X).any():
        raise InsufficientData("incomplete feature history after warm-up")
    return FeatureMatrix(list(FEATURE_NAMES), X, y[rows], frame.dates[rows])


def temporal_split(fm: FeatureMatrix, fractions=(0.70, 0.15, 0.15)) -> FeatureMatrix:
    if abs(sum(fractions) - 1.0) > 1e-9 or len(fractions) != 3:
        raise SplitError("fractions must be three values summing to 1")
    n = len(fm)
    n_train = int(np.floor(fractions[0] * n))
    n_val = int(np.floor(fractions[1] * n))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) <= 0:
        raise SplitError(f"split of {n} rows leaves an empty block ({n_train}/{n_val}/{n_test})")
    split = np.array(["train"] * n_train + ["val"] * n_val + ["test"] * n_test)
    return replace(fm, split=split)


def f_regression_scores(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Univariate regression F statistic per column: ``r^2 / (1 - r^2) * (n - 2)``."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    xc = X - X.mean(axis=0)
    yc = y - y.mean()
    sxx = (xc * xc).sum(axis=0)
    syy = (yc * yc).sum()
    scores = np.zeros(X.shape[1])
    for j in range(X.shape[1]):
        if sxx[j] <= 0 or syy <= 0:
            continue
        r2 = (xc[:, j] @ yc) ** 2 / (sxx[j] * syy)
        scores[j] = np.inf if r2 >= 1.0 else r2 / (1.0 - r2) * (n - 2)
    return scores


def select_k_best(fm: FeatureMatrix, k: int) -> FeatureMatrix:
    """Keep the ``k`` columns with the largest train-set F statistic (original order kept)."""
    if k > len(fm.names) or k < 1:
        raise ValueError(f"k={k} outside 1..{len(fm.names)}")
    Xtr, ytr = fm.part("train")
    scores = f_regression_scores(Xtr, ytr)
    order = sorted(range(len(scores)), key=lambda j: (-scores[j], j))
    keep = sorted(order[:k])
    names = [fm.names[j] for j in keep]
    return replace(fm, names=names, X=fm.X[:, keep], selected=names)


def standardize(fm: FeatureMatrix) -> FeatureMatrix:
    Xtr, ytr = fm.part("train")
    scaler = Scaler.fit(Xtr)
    target_scaler = Scaler.fit(ytr)
    return replace(fm, X=scaler.transform(fm.X), y=target_scaler.transform(fm.y),
                   scaler=scaler, target_scaler=target_scaler)


def prepare(frame: MarketFrame, k: int = 8, fractions=(0.70, 0.15, 0.15)) -> FeatureMatrix:
    """Features, split, selection and scaling in the order the model expects."""
    fm = temporal_split(engineer_features(frame), fractions)
    return standardize(select_k_best(fm, k))


@dataclass
class StateMatrix:
    window: np.ndarray


def build_state_matrix(frame: MarketFrame, n: int, t: int | None = None) -> StateMatrix:
    """Rows ``i = 1..n``: log ratios of close, high and low between days ``t-i+1`` and ``t-i``."""
    t = len(frame) - 1 if t is None else t
    if n < 1 or t - n < 0 or t >= len(frame):
        raise InsufficientData(f"state matrix of {n} rows needs {n + 1} days of history at t={t}")
    cols = [frame.column(k) for k in ("close", "high", "low")]
    rows = []
    for i in range(1, n + 1):
        rows.append([np.log(x[t - i + 1] / x[t - i]) for x in cols])
    return StateMatrix(np.array(rows))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def save_feature_matrix(fm: FeatureMatrix, csv_path, extra: dict | None = None) -> str:
    """Columnar CSV plus a JSON sidecar with scaler statistics and split boundaries."""
    df = pd.DataFrame(fm.X, columns=fm.names)
    df.insert(0, "date", [str(d) for d in fm.dates])
    df["target"] = fm.y
    if fm.split is not None:
        df["split"] = fm.split
    df.to_csv(csv_path, index=False, float_format="%.17g")
    sidecar = os.path.splitext(str(csv_path))[0] + ".json"
    meta = {
        "names": fm.names,
        "selected": fm.selected,
        "scaler": fm.scaler.to_dict() if fm.scaler else None,
        "target_scaler": fm.target_scaler.to_dict() if fm.target_scaler else None,
        "split_boundaries": _split_boundaries(fm),
    }
    if extra:
        meta.update(extra)
    with open(sidecar, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    return sidecar


def _split_boundaries(fm: FeatureMatrix) -> dict:
    if fm.split is None:
        return {}
    out = {}
    for tag in ("train", "val", "test"):
        idx = np.flatnonzero(fm.split == tag)
        if idx.size:
            out[tag] = {"start": str(fm.dates[idx[0]]), "end": str(fm.dates[idx[-1]]), "rows": int(idx.size)}
    return out


def load_feature_matrix(csv_path) -> FeatureMatrix:
    df = pd.read_csv(csv_path, float_precision="round_trip")
    sidecar = os.path.splitext(str(csv_path))[0] + ".json"
    with open(sidecar) as fh:
        meta = json.load(fh)
    names = meta["names"]
    return FeatureMatrix(
        names=names,
        X=df[names].to_numpy(dtype=np.float64),
        y=df["target"].to_numpy(dtype=np.float64),
        dates=np.array([_parse_date(d) for d in df["date"]]),
        split=df["split"].to_numpy(dtype=str) if "split" in df else None,
        scaler=Scaler.from_dict(meta["scaler"]) if meta.get("scaler") else None,
        target_scaler=Scaler.from_dict(meta["target_scaler"], scalar=True) if meta.get("target_scaler") else None,
        selected=meta.get("selected", []),
    )
