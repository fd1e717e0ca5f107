"""Forecasting harness: one-step-ahead prediction with recurrent models.

Training uses windows whose targets lie in the contiguous train prefix;
evaluation predicts each test target from its true preceding values
(teacher forcing), and metrics are computed in the original scale.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .metrics import Metrics, compute_metrics
from .models import LSTMCellParams, XNetInit, sequence_forward
from .optim import TrainConfig, make_rng, train
from .targets import WindowDataset, make_windows


@dataclass
class ForecastConfig:
    name: str = "lstm"
    window: int = 5
    hidden: int = 10
    head: str = "affine"              # "affine" or "xnet"
    head_basis: int = 10
    head_init: dict = field(default_factory=dict)
    iterations: int = 5000
    lr: float = 1e-2
    seed: int = 0
    normalize: bool = False
    split: object = 0.8               # fraction of the series, or an index
    batch_size: int | None = 32
    lr_decay_every: int | None = None
    lr_decay_factor: float = 0.5
    log_every: int = 100

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be at least 1")
        if self.hidden < 1:
            raise ValueError("hidden size must be at least 1")

    def as_dict(self) -> dict:
        return {
            "name": self.name, "window": self.window, "hidden": self.hidden,
            "head": self.head, "head_basis": self.head_basis,
            "head_init": dict(self.head_init),
            "iterations": self.iterations, "lr": self.lr, "seed": self.seed,
            "normalize": self.normalize, "split": self.split,
            "batch_size": self.batch_size,
            "lr_decay_every": self.lr_decay_every,
            "lr_decay_factor": self.lr_decay_factor,
            "log_every": self.log_every,
        }


@dataclass
class ForecastResult:
    name: str
    predictions: np.ndarray       # test-split predictions, original scale
    actual: np.ndarray            # raw test targets
    metrics: Metrics
    history: list
    config: dict
    model: LSTMCellParams = field(repr=False, default=None)


def _train_model(windows_ds: WindowDataset, cfg: ForecastConfig):
    rng_model = make_rng(cfg.seed)
    head_init = XNetInit(**cfg.head_init) if cfg.head_init else None
    model = LSTMCellParams(1, cfg.hidden, rng=rng_model, head=cfg.head,
                           head_basis=cfg.head_basis, head_init=head_init)
    train_w = windows_ds.train_windows
    train_y = windows_ds.train_targets
    n_train = len(train_w)
    if n_train == 0:
        raise ValueError("no training windows; series too short for split")
    batch = cfg.batch_size if cfg.batch_size and cfg.batch_size < n_train else None

    def loss_builder(m, rng, step):
        if batch is None:
            w, y = train_w, train_y
        else:
            idx = rng.integers(0, n_train, batch)
            w, y = train_w[idx], train_y[idx]
        pred = sequence_forward(m, w)
        return ad.mean_(ad.square(ad.sub(pred, y)))

    tcfg = TrainConfig(iterations=cfg.iterations, lr=cfg.lr, seed=cfg.seed,
                       lr_decay_every=cfg.lr_decay_every,
                       lr_decay_factor=cfg.lr_decay_factor,
                       log_every=cfg.log_every)
    result = train(model, loss_builder, tcfg)
    return model, result


def run_forecast(series: np.ndarray, cfg: ForecastConfig) -> ForecastResult:
    series = np.asarray(series, dtype=np.float64).ravel()
    if len(series) <= cfg.window + 1:
        raise ValueError(
            f"series of length {len(series)} too short for window {cfg.window}")
    ds = make_windows(series, cfg.window, cfg.split, normalize=cfg.normalize)
    model, result = _train_model(ds, cfg)
    raw_pred = sequence_forward(model, ds.test_windows).value.ravel()
    predictions = ds.denormalize(raw_pred)
    actual = ds.raw_test_targets
    metrics = compute_metrics(predictions, actual, elapsed=result.elapsed_s)
    return ForecastResult(name=cfg.name, predictions=predictions,
                          actual=actual, metrics=metrics,
                          history=result.history, config=cfg.as_dict(),
                          model=model)


def compare_models(series: np.ndarray, cfgs: list[ForecastConfig],
                   base_seed: int | None = None,
                   reference_rows: dict | None = None) -> dict:
    """Run each config on the same series and assemble an aligned table.

    Per-model seeds derive from the base seed plus the model index, so
    entries are independent yet reproducible.  ``reference_rows`` are
    echoed verbatim, marked as not computed here.
    """
    if len(cfgs) < 2:
        raise ValueError("compare_models needs at least two configs")
    results = []
    for i, cfg in enumerate(cfgs):
        if base_seed is not None:
            cfg = ForecastConfig(**{**cfg.as_dict(), "seed": base_seed + i})
        results.append(run_forecast(series, cfg))
    table = {
        "models": [
            {"name": r.name, **r.metrics.as_dict(), "computed": True}
            for r in results
        ],
    }
    if reference_rows:
        table["reference"] = [
            {"name": key, **{k: v for k, v in row.items() if k != "computed"},
             "computed": False, "note": "reference, not computed"}
            for key, row in reference_rows.items()
        ]
    return {"table": table, "results": results}
