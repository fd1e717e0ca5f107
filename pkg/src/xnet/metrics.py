"""Error metrics and experiment reports shared by all harnesses."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np


@dataclass(frozen=True)
class Metrics:
    mse: float
    rmse: float
    mae: float
    wall_time_s: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


def compute_metrics(pred, actual, elapsed: float = 0.0) -> Metrics:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    actual = np.asarray(actual, dtype=np.float64).ravel()
    if pred.shape != actual.shape:
        raise ValueError(
            f"length mismatch: {pred.shape[0]} predictions vs "
            f"{actual.shape[0]} actuals")
    if pred.size == 0:
        raise ValueError("metrics need at least one sample")
    err = pred - actual
    mse = float(np.mean(err * err))
    return Metrics(mse=mse, rmse=float(np.sqrt(mse)),
                   mae=float(np.mean(np.abs(err))),
                   wall_time_s=float(elapsed))


@dataclass
class RunReport:
    """Everything needed to reproduce and compare one experiment run."""
    experiment_id: str
    config: dict
    metrics: Metrics
    seed: int
    artifacts: list = field(default_factory=list)
    reference: dict | None = None     # published values this run is compared to
    extra: dict = field(default_factory=dict)
    code_version: str = ""

    def __post_init__(self):
        if not self.code_version:
            from . import __version__
            self.code_version = __version__

    def to_dict(self) -> dict:
        return {
            "experiment_id": self.experiment_id,
            "config": self.config,
            "metrics": self.metrics.as_dict(),
            "seed": self.seed,
            "artifacts": list(self.artifacts),
            "reference": self.reference,
            "extra": self.extra,
            "code_version": self.code_version,
        }

    @classmethod
    def from_dict(cls, blob: dict) -> "RunReport":
        return cls(experiment_id=blob["experiment_id"], config=blob["config"],
                   metrics=Metrics(**blob["metrics"]), seed=blob["seed"],
                   artifacts=list(blob.get("artifacts", [])),
                   reference=blob.get("reference"),
                   extra=blob.get("extra", {}),
                   code_version=blob.get("code_version", ""))


def emit_report(report: RunReport, out_dir) -> str:
    """Write report.json into ``out_dir``; returns the file path."""
    if not os.path.isdir(out_dir):
        raise FileNotFoundError(f"output directory does not exist: {out_dir}")
    path = os.path.join(out_dir, "report.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    return path


def load_report(path) -> RunReport:
    with open(path, encoding="utf-8") as fh:
        return RunReport.from_dict(json.load(fh))


def write_csv(path, header, rows) -> str:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) if isinstance(v, (float, np.floating))
                              else str(v) for v in row) + "\n")
    return str(path)


def write_loss_history(path, history) -> str:
    return write_csv(path, ["step", "loss"], history)
