"""Benchmark targets, samplers, the synthetic recurrence series, CSV
ingestion, and sliding-window datasets."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .optim import make_rng


@dataclass(frozen=True)
class TargetFunction:
    name: str
    input_dim: int
    fn: object                       # callable [N, input_dim] -> [N]
    domain: tuple = (-1.0, 1.0)      # per-axis sampling interval

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.input_dim:
            raise ValueError(
                f"target {self.name!r} expects {self.input_dim} columns, "
                f"got {X.shape[1]}")
        return self.fn(X)


def _heaviside(X):
    return (X[:, 0] > 0).astype(np.float64)


def _exp_sin_2d(X):
    return np.exp(np.sin(np.pi * X[:, 0]) + X[:, 1] ** 2)


def _xy(X):
    return X[:, 0] * X[:, 1]


def _exp_4d(X):
    return np.exp(0.5 * (np.sin(np.pi * (X[:, 0] ** 2 + X[:, 1] ** 2))
                         + X[:, 2] * X[:, 3]))


def _exp_100d(X):
    return np.exp(np.mean(np.sin(np.pi * X / 2.0) ** 2, axis=1))


_TARGETS = {
    "heaviside": TargetFunction("heaviside", 1, _heaviside),
    "exp_sin_2d": TargetFunction("exp_sin_2d", 2, _exp_sin_2d),
    "xy": TargetFunction("xy", 2, _xy),
    "exp_4d": TargetFunction("exp_4d", 4, _exp_4d),
    "exp_100d": TargetFunction("exp_100d", 100, _exp_100d),
}


def builtin_target(name: str) -> TargetFunction:
    try:
        return _TARGETS[name]
    except KeyError:
        raise ValueError(
            f"unknown target {name!r}; available: {sorted(_TARGETS)}") from None


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    seed: int


def sample_dataset(target: TargetFunction, n_train: int, n_test: int,
                   seed: int) -> Dataset:
    """I.i.d. uniform draws over the target's domain, labels attached."""
    if n_train <= 0 or n_test <= 0:
        raise ValueError("n_train and n_test must be positive")
    rng = make_rng(seed)
    lo, hi = target.domain
    x_train = rng.uniform(lo, hi, (n_train, target.input_dim))
    x_test = rng.uniform(lo, hi, (n_test, target.input_dim))
    return Dataset(x_train, target(x_train), x_test, target(x_test), seed)


# ---------------------------------------------------------------------------
# Synthetic delay-recurrence series
# ---------------------------------------------------------------------------

@dataclass
class SeriesSpec:
    """Recurrence s_new = c1*x0*x1 + c2*sin(x2*x3) + c3*sin(x4) + noise,
    over a length-5 delay line seeded uniformly in [init_low, init_high]."""
    coeffs: tuple = (0.1, 0.1, 1.0)
    noise: float = 0.0
    length: int = 200
    seed: int = 0
    init_low: float = 0.0
    init_high: float = 0.2

    def __post_init__(self):
        if self.length < 6:
            raise ValueError("series length must be at least 6")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")

    def as_dict(self) -> dict:
        return {"coeffs": list(self.coeffs), "noise": self.noise,
                "length": self.length, "seed": self.seed,
                "init_low": self.init_low, "init_high": self.init_high}


def generate_series(spec: SeriesSpec) -> np.ndarray:
    """Emit the generated values (the delay-line warmup is not included)."""
    rng = make_rng(spec.seed)
    c1, c2, c3 = spec.coeffs
    state = rng.uniform(spec.init_low, spec.init_high, 5)
    out = np.empty(spec.length)
    for i in range(spec.length):
        x0, x1, x2, x3, x4 = state
        nxt = c1 * x0 * x1 + c2 * np.sin(x2 * x3) + c3 * np.sin(x4)
        if spec.noise > 0:
            nxt += rng.normal(0.0, spec.noise)
        out[i] = nxt
        state[:-1] = state[1:]
        state[-1] = nxt
    return out


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def load_csv_series(path, column: str) -> np.ndarray:
    """Ordered numeric column from a headered CSV file."""
    values = []
    bad_rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty file, header row required")
        if column not in reader.fieldnames:
            raise ValueError(
                f"{path}: column {column!r} not found; "
                f"available: {reader.fieldnames}")
        for rownum, row in enumerate(reader, start=2):
            raw = row.get(column)
            try:
                values.append(float(raw))
            except (TypeError, ValueError):
                bad_rows.append(rownum)
    if bad_rows:
        shown = ", ".join(map(str, bad_rows[:10]))
        more = "" if len(bad_rows) <= 10 else f" (+{len(bad_rows) - 10} more)"
        raise ValueError(
            f"{path}: non-numeric {column!r} values at rows {shown}{more}")
    return np.asarray(values, dtype=np.float64)


# ---------------------------------------------------------------------------
# Sliding windows
# ---------------------------------------------------------------------------

@dataclass
class WindowDataset:
    """Stride-1 windows with one-step targets and a contiguous split.

    Window j covers series[j : j+T] and its target is series[j+T]; a
    window belongs to the training split iff its target index is below
    ``split_index``.  When normalization is on, min-max scaling is fitted
    on the training prefix of the series only and stored for inversion.
    """
    windows: np.ndarray            # [N, T, 1], possibly normalized
    targets: np.ndarray            # [N, 1], possibly normalized
    split_index: int               # series index of the first test target
    window_len: int
    scale: tuple | None = None     # (lo, hi) of the fitted min-max map
    raw_series: np.ndarray = field(default=None, repr=False)

    @property
    def target_indices(self) -> np.ndarray:
        return np.arange(len(self.targets)) + self.window_len

    @property
    def _train_mask(self) -> np.ndarray:
        return self.target_indices < self.split_index

    @property
    def train_windows(self):
        return self.windows[self._train_mask]

    @property
    def train_targets(self):
        return self.targets[self._train_mask]

    @property
    def test_windows(self):
        return self.windows[~self._train_mask]

    @property
    def test_targets(self):
        return self.targets[~self._train_mask]

    @property
    def raw_test_targets(self):
        return self.raw_series[self.target_indices[~self._train_mask]]

    def denormalize(self, values: np.ndarray) -> np.ndarray:
        if self.scale is None:
            return np.asarray(values, dtype=np.float64)
        lo, hi = self.scale
        return np.asarray(values, dtype=np.float64) * (hi - lo) + lo


def make_windows(series: np.ndarray, window_len: int, split,
                 normalize: bool = False) -> WindowDataset:
    series = np.asarray(series, dtype=np.float64).ravel()
    n = len(series)
    if window_len < 1:
        raise ValueError("window length must be at least 1")
    if n < window_len + 1:
        raise ValueError(
            f"series of length {n} too short for window length {window_len}")
    if isinstance(split, float):
        split_index = int(round(n * split))
    else:
        split_index = int(split)
    if not (window_len < split_index <= n):
        raise ValueError(
            f"split index {split_index} must lie in ({window_len}, {n}]")
    scale = None
    scaled = series
    if normalize:
        lo = float(series[:split_index].min())
        hi = float(series[:split_index].max())
        if hi == lo:
            hi = lo + 1.0
        scale = (lo, hi)
        scaled = (series - lo) / (hi - lo)
    n_windows = n - window_len
    windows = np.empty((n_windows, window_len, 1))
    for j in range(n_windows):
        windows[j, :, 0] = scaled[j:j + window_len]
    targets = scaled[window_len:].reshape(-1, 1).copy()
    return WindowDataset(windows=windows, targets=targets,
                         split_index=split_index, window_len=window_len,
                         scale=scale, raw_series=series)
