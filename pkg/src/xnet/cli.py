"""Command-line entry point: config-driven experiment runs.

Commands: ``fit`` (function approximation), ``pinn`` (Poisson solve),
``ts`` (forecasting comparison), ``gradcheck`` (derivative self-test).
Configs are TOML; unknown keys are rejected with their path.  Exit codes:
0 success, 1 acceptance threshold missed (or gradcheck failure), 2 usage
or validation error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from . import autodiff as ad
from . import kernels
from .metrics import (RunReport, compute_metrics, emit_report, write_csv,
                      write_loss_history)
from .models import (MLPModel, XNetInit, XNetModel, bspline_fit,
                     fit_linear_coefficients, save_checkpoint)
from .optim import DivergenceError, TrainConfig, make_rng, mse_loss_builder, split_rng, train
from .pinn import PinnProblem, solve_poisson
from .references import reference_for
from .targets import (SeriesSpec, builtin_target, generate_series,
                      load_csv_series, sample_dataset)
from .timeseries import ForecastConfig, compare_models, run_forecast


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Config validation: nested allowed-key schemas
# ---------------------------------------------------------------------------

_SCALAR = None

_INIT_KEYS = dict.fromkeys(["weight_mode", "weight_scale", "offset_range",
                            "bandwidth", "coeff_mode", "pair_frac"], _SCALAR)
_TRAIN_KEYS = dict.fromkeys(["iterations", "lr", "batch_size",
                             "lr_decay_every", "lr_decay_factor", "log_every",
                             "stop_loss", "max_loss"], _SCALAR)

_SCHEMAS = {
    "fit": {
        "kind": _SCALAR, "seed": _SCALAR, "out_dir": _SCALAR,
        "reference_key": _SCALAR,
        "target": dict.fromkeys(["name", "n_train", "n_test"], _SCALAR),
        "model": {"type": _SCALAR, "basis": _SCALAR, "widths": _SCALAR,
                  "grid": _SCALAR, "degree": _SCALAR, "init": _INIT_KEYS},
        "train": _TRAIN_KEYS,
        "init_solve": dict.fromkeys(["enabled", "ridge", "subsample"], _SCALAR),
        "eval": {"grid_points": _SCALAR},
        "acceptance": {"max_mse": _SCALAR},
    },
    "pinn": {
        "kind": _SCALAR, "seed": _SCALAR, "out_dir": _SCALAR,
        "reference_key": _SCALAR,
        "problem": dict.fromkeys(["n_interior", "n_boundary", "alpha"], _SCALAR),
        "model": {"type": _SCALAR, "basis": _SCALAR, "widths": _SCALAR,
                  "init": _INIT_KEYS},
        "train": _TRAIN_KEYS,
        "solver": dict.fromkeys(["linear_init", "linear_init_ridge",
                                 "resolve_every", "fused", "grid_n"], _SCALAR),
        "acceptance": {"max_mse": _SCALAR},
    },
    "ts": {
        "kind": _SCALAR, "seed": _SCALAR, "out_dir": _SCALAR,
        "series": dict.fromkeys(["source", "length", "noise", "coeffs",
                                 "init_low", "init_high", "path", "column"],
                                _SCALAR),
        "window": dict.fromkeys(["size", "split", "normalize"], _SCALAR),
        "models": {**dict.fromkeys(["name", "head", "hidden", "head_basis",
                                    "iterations", "lr", "batch_size",
                                    "lr_decay_every", "lr_decay_factor",
                                    "log_every"], _SCALAR),
                   "head_init": _INIT_KEYS},
        "acceptance": {"max_mse": _SCALAR, "require_ordering": _SCALAR},
    },
    "gradcheck": {"kind": _SCALAR, "seed": _SCALAR, "out_dir": _SCALAR},
}


def _validate_table(table, allowed, path):
    for key, value in table.items():
        where = f"{path}.{key}" if path else key
        if key not in allowed:
            raise ConfigError(f"unknown config key: {where}")
        schema = allowed[key]
        if isinstance(schema, dict):
            entries = value if isinstance(value, list) else [value]
            for i, entry in enumerate(entries):
                if not isinstance(entry, dict):
                    raise ConfigError(f"{where}: expected a table")
                suffix = f"{where}[{i}]" if isinstance(value, list) else where
                _validate_table(entry, schema, suffix)


def load_config(path, kind=None) -> dict:
    with open(path, "rb") as fh:
        cfg = tomllib.load(fh)
    cfg_kind = cfg.get("kind", kind)
    if cfg_kind not in _SCHEMAS:
        raise ConfigError(f"kind must be one of {sorted(_SCHEMAS)}, "
                          f"got {cfg_kind!r}")
    if kind is not None and cfg_kind != kind:
        raise ConfigError(f"config kind {cfg_kind!r} does not match "
                          f"command {kind!r}")
    _validate_table(cfg, _SCHEMAS[cfg_kind], "")
    return cfg


def _resolve_seed(cfg, seed_flag):
    if seed_flag is not None:
        return int(seed_flag)
    if "seed" in cfg:
        return int(cfg["seed"])
    raise ConfigError("no seed given: set 'seed' in the config or pass --seed")


def _resolve_out_dir(cfg, out_flag, experiment_id):
    base = out_flag or cfg.get("out_dir") or os.environ.get("XNET_OUT_DIR")
    out = Path(base) if base else Path("runs") / experiment_id
    if base:
        out = Path(base) / experiment_id
    out.mkdir(parents=True, exist_ok=True)
    return out


def _train_cfg(cfg, seed, defaults=None) -> TrainConfig:
    t = dict(defaults or {})
    t.update(cfg.get("train", {}))
    t.setdefault("iterations", 1000)
    return TrainConfig(seed=seed, **t)


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def _dense_grid(target, points_per_axis):
    lo, hi = target.domain
    if target.input_dim == 1:
        xs = np.linspace(lo, hi, points_per_axis * points_per_axis)
        return xs.reshape(-1, 1)
    if target.input_dim == 2:
        axis = np.linspace(lo, hi, points_per_axis)
        gx, gy = np.meshgrid(axis, axis, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel()])
    return None


def run_fit(cfg: dict, seed=None, out_flag=None,
            experiment_id="fit") -> RunReport:
    seed = _resolve_seed(cfg, seed)
    out_dir = _resolve_out_dir(cfg, out_flag, experiment_id)
    tgt_cfg = cfg.get("target", {})
    target = builtin_target(tgt_cfg.get("name", ""))
    data = sample_dataset(target, int(tgt_cfg.get("n_train", 1000)),
                          int(tgt_cfg.get("n_test", 1000)), seed)
    model_cfg = cfg.get("model", {})
    mtype = model_cfg.get("type", "xnet")
    grid_pts = int(cfg.get("eval", {}).get("grid_points", 100))
    grid = _dense_grid(target, grid_pts)
    artifacts = []
    extra = {}

    t0 = time.perf_counter()
    if mtype == "bspline":
        if target.input_dim != 1:
            raise ConfigError("bspline model applies to 1D targets only")
        fit = bspline_fit(data.x_train[:, 0], data.y_train,
                          grid_size=int(model_cfg.get("grid", 200)),
                          degree=int(model_cfg.get("degree", 3)),
                          domain=target.domain)
        elapsed = time.perf_counter() - t0
        pred_test = fit(data.x_test[:, 0])
        model = fit
        history = []
    else:
        rng_model = split_rng(seed, 2)[1]
        if mtype == "xnet":
            init = XNetInit(**model_cfg.get("init", {}))
            model = XNetModel(target.input_dim, int(model_cfg["basis"]),
                              rng=rng_model, init=init)
        elif mtype == "mlp":
            model = MLPModel(list(model_cfg["widths"]), rng=rng_model)
        else:
            raise ConfigError(f"unknown model type {mtype!r}")
        kernels.warmup()
        solve_cfg = cfg.get("init_solve", {})
        t0 = time.perf_counter()
        if solve_cfg.get("enabled", False):
            if mtype != "xnet":
                raise ConfigError("init_solve applies to the xnet model only")
            train_mse = fit_linear_coefficients(
                model, data.x_train, data.y_train,
                ridge=float(solve_cfg.get("ridge", 1e-9)),
                subsample=solve_cfg.get("subsample"),
                rng=make_rng(seed + 1))
            extra["init_solve_train_mse"] = train_mse
        tcfg = _train_cfg(cfg, seed)
        result = train(model, mse_loss_builder(model, data.x_train,
                                               data.y_train), tcfg)
        elapsed = result.elapsed_s
        history = result.history
        extra["final_train_loss"] = result.final_loss
        extra["steps_run"] = result.steps_run
        pred_test = model.forward(data.x_test).value.ravel()

    metrics = compute_metrics(pred_test, data.y_test, elapsed=elapsed)
    if grid is not None:
        grid_y = target(grid)
        grid_pred = model(grid[:, 0]) if mtype == "bspline" \
            else model.forward(grid).value.ravel()
        extra["grid_mse"] = float(np.mean((grid_pred - grid_y) ** 2))
        cols = (["x", "target", "predicted"] if target.input_dim == 1
                else ["x", "y", "target", "predicted"])
        rows = (zip(grid[:, 0], grid_y, grid_pred) if target.input_dim == 1
                else zip(grid[:, 0], grid[:, 1], grid_y, grid_pred))
        artifacts.append(write_csv(out_dir / "grid.csv", cols, rows))
    if history:
        artifacts.append(write_loss_history(out_dir / "loss_history.csv",
                                            history))
    if mtype != "bspline":
        ckpt = out_dir / "checkpoint.json"
        save_checkpoint(model, ckpt, seed=seed)
        artifacts.append(str(ckpt))

    report = RunReport(
        experiment_id=experiment_id, config=cfg, metrics=metrics, seed=seed,
        artifacts=artifacts,
        reference=reference_for(cfg.get("reference_key", "")),
        extra=extra)
    emit_report(report, out_dir)
    return report


# ---------------------------------------------------------------------------
# pinn
# ---------------------------------------------------------------------------

def run_pinn(cfg: dict, seed=None, out_flag=None,
             experiment_id="pinn") -> RunReport:
    seed = _resolve_seed(cfg, seed)
    out_dir = _resolve_out_dir(cfg, out_flag, experiment_id)
    p = cfg.get("problem", {})
    problem = PinnProblem(n_interior=int(p.get("n_interior", 2500)),
                          n_boundary=int(p.get("n_boundary", 200)),
                          alpha=float(p.get("alpha", 0.01)))
    model_cfg = dict(cfg.get("model", {}))
    solver = cfg.get("solver", {})
    tcfg = _train_cfg(cfg, seed)
    model, report = solve_poisson(
        model_cfg, problem, tcfg, experiment_id=experiment_id,
        out_dir=str(out_dir),
        reference_key=cfg.get("reference_key"),
        linear_init=bool(solver.get("linear_init", False)),
        linear_init_ridge=float(solver.get("linear_init_ridge", 1e-10)),
        resolve_every=solver.get("resolve_every"),
        fused=bool(solver.get("fused", False)),
        grid_n=int(solver.get("grid_n", 100)))
    report.config = cfg
    ckpt = out_dir / "checkpoint.json"
    save_checkpoint(model, ckpt, seed=seed)
    report.artifacts.append(str(ckpt))
    emit_report(report, out_dir)
    return report


# ---------------------------------------------------------------------------
# ts
# ---------------------------------------------------------------------------

def _load_series(cfg_series: dict, seed: int):
    source = cfg_series.get("source", "synthetic")
    if source == "synthetic":
        spec = SeriesSpec(
            coeffs=tuple(cfg_series.get("coeffs", (0.1, 0.1, 1.0))),
            noise=float(cfg_series.get("noise", 0.0)),
            length=int(cfg_series.get("length", 200)),
            seed=seed,
            init_low=float(cfg_series.get("init_low", 0.0)),
            init_high=float(cfg_series.get("init_high", 0.2)))
        return generate_series(spec), spec.as_dict()
    if source == "csv":
        path = cfg_series.get("path")
        if not path:
            raise ConfigError("series.path required for csv source")
        series = load_csv_series(path, cfg_series.get("column", "close"))
        return series, {"path": str(path), "column":
                        cfg_series.get("column", "close")}
    raise ConfigError(f"unknown series source {source!r}")


def run_ts(cfg: dict, seed=None, out_flag=None, experiment_id="ts") -> dict:
    seed = _resolve_seed(cfg, seed)
    out_dir = _resolve_out_dir(cfg, out_flag, experiment_id)
    series, series_desc = _load_series(cfg.get("series", {}), seed)
    win = cfg.get("window", {})
    model_tables = cfg.get("models", [])
    if not isinstance(model_tables, list) or len(model_tables) < 1:
        raise ConfigError("ts config needs at least one [[models]] table")
    fcfgs = []
    for i, m in enumerate(model_tables):
        fcfgs.append(ForecastConfig(
            name=m.get("name", f"model{i}"),
            window=int(win.get("size", 5)),
            hidden=int(m.get("hidden", 10)),
            head=m.get("head", "affine"),
            head_basis=int(m.get("head_basis", 10)),
            head_init=m.get("head_init", {}),
            iterations=int(m.get("iterations", 5000)),
            lr=float(m.get("lr", 1e-2)),
            seed=seed + i,
            normalize=bool(win.get("normalize", False)),
            split=win.get("split", 0.8),
            batch_size=m.get("batch_size", 32),
            lr_decay_every=m.get("lr_decay_every"),
            lr_decay_factor=float(m.get("lr_decay_factor", 0.5)),
            log_every=int(m.get("log_every", 100))))
    kernels.warmup()
    if len(fcfgs) == 1:
        results = [run_forecast(series, fcfgs[0])]
        table = {"models": [{"name": results[0].name,
                             **results[0].metrics.as_dict(),
                             "computed": True}]}
    else:
        out = compare_models(series, fcfgs)
        results, table = out["results"], out["table"]
    for r in results:
        path = write_csv(out_dir / f"predictions_{r.name}.csv",
                         ["index", "actual", "predicted"],
                         zip(range(len(r.actual)), r.actual, r.predictions))
        write_loss_history(out_dir / f"loss_history_{r.name}.csv", r.history)
    report = {"experiment_id": experiment_id, "seed": seed,
              "series": series_desc, "config": cfg, "table": table}
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
    return {"report": report, "results": results, "out_dir": str(out_dir)}


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------

def _fd_grad(build_loss, param, h=1e-5):
    num = np.zeros_like(param.value)
    it = np.nditer(param.value, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = param.value.copy()
        param.value = old.copy()
        param.value[i] += h
        up = float(build_loss().value)
        param.value = old.copy()
        param.value[i] -= h
        dn = float(build_loss().value)
        param.value = old
        num[i] = (up - dn) / (2 * h)
    return num


def run_gradcheck(seed: int = 1234, verbose: bool = True) -> list:
    """Finite-difference check of every op's reverse gradient; returns the
    list of failures as (op, relative_error)."""
    rng = make_rng(seed)
    failures = []

    unary = ["sin", "cos", "exp", "tanh", "sigmoid", "square", "softplus",
             "neg"]
    binary = ["add", "sub", "mul", "div"]
    for trial in range(10):
        x = ad.parameter(rng.uniform(-2, 2, (3, 4)), "x")
        y = ad.parameter(rng.uniform(0.5, 2, (3, 4)), "y")
        for op in unary:
            def loss(op=op):
                return ad.mean_(ad.square(getattr(ad, op)(x)))
            g = ad.backward(loss())[x]
            num = _fd_grad(loss, x)
            rel = np.max(np.abs(g - num) / (np.abs(num) + 1e-8))
            if rel > 1e-6:
                failures.append((op, rel))
        for op in binary:
            def loss(op=op):
                return ad.mean_(ad.square(getattr(ad, op)(x, y)))
            for p in (x, y):
                g = ad.backward(loss())[p]
                num = _fd_grad(loss, p)
                rel = np.max(np.abs(g - num) / (np.abs(num) + 1e-8))
                if rel > 1e-6:
                    failures.append((op, rel))
    # matmul and reductions
    a = ad.parameter(rng.uniform(-1, 1, (3, 4)), "a")
    b = ad.parameter(rng.uniform(-1, 1, (4, 2)), "b")

    def mm_loss():
        return ad.mean_(ad.square(ad.matmul(a, b)))
    for p in (a, b):
        g = ad.backward(mm_loss())[p]
        num = _fd_grad(mm_loss, p)
        rel = np.max(np.abs(g - num) / (np.abs(num) + 1e-8))
        if rel > 1e-6:
            failures.append(("matmul", rel))

    # fused basis-layer ops against the model forward
    model = XNetModel(2, 5, rng=rng)
    X = rng.uniform(-1, 1, (20, 2))
    yv = rng.uniform(-1, 1, 20)

    def fit_loss():
        return ad.mean_(ad.square(ad.sub(model.forward(X),
                                         yv.reshape(-1, 1))))
    for p in model.parameters():
        g = ad.backward(fit_loss())[p]
        num = _fd_grad(fit_loss, p)
        rel = np.max(np.abs(g - num) / (np.abs(num) + 1e-7))
        if rel > 1e-6:
            failures.append((f"cauchy_basis_sum/{p.name}", rel))

    def lap_loss():
        return ad.mean_(ad.square(model.laplacian_fused(X)))
    for p in model.parameters():
        g = ad.backward(lap_loss())[p]
        num = _fd_grad(lap_loss, p, h=1e-6)
        rel = np.max(np.abs(g - num) / (np.abs(num) + 1e-5))
        if rel > 1e-5:
            failures.append((f"cauchy_basis_lap/{p.name}", rel))

    # nested-dual second derivative vs finite differences
    def f_scalar(v):
        s = ad.sum_(ad.mul(v, np.array([1.0, 0.7])))
        return ad.mul(ad.sin(s), ad.exp(ad.mul(0.3, s)))
    for trial in range(5):
        x0 = rng.uniform(-1.5, 1.5, 2)
        direction = rng.uniform(-1, 1, 2)
        got = ad.directional_derivative(f_scalar, x0, direction, order=2)
        h = 1e-4
        num = (float(f_scalar(x0 + h * direction))
               - 2.0 * float(f_scalar(x0))
               + float(f_scalar(x0 - h * direction))) / (h * h)
        rel = abs(got - num) / (abs(num) + 1e-8)
        if rel > 1e-5:
            failures.append(("nested_dual_order2", rel))

    if verbose:
        for op, rel in failures:
            print(f"FAIL {op}: relative error {rel:.3e}")
        if not failures:
            print("all derivative checks passed")
    return failures


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _check_acceptance(cfg, report) -> bool:
    acc = cfg.get("acceptance", {})
    ok = True
    if isinstance(report, RunReport):
        max_mse = acc.get("max_mse")
        if max_mse is not None and report.metrics.mse > float(max_mse):
            print(f"acceptance miss: mse {report.metrics.mse:.4e} > "
                  f"{float(max_mse):.4e}")
            ok = False
    else:  # ts dict report
        by_name = {row["name"]: row for row in report["table"]["models"]}
        for name, lim in acc.get("max_mse", {}).items():
            if name in by_name and by_name[name]["mse"] > float(lim):
                print(f"acceptance miss: {name} mse "
                      f"{by_name[name]['mse']:.4e} > {float(lim):.4e}")
                ok = False
        order = acc.get("require_ordering")
        if order:
            mses = [by_name[n]["mse"] for n in order if n in by_name]
            if any(a >= b for a, b in zip(mses, mses[1:])):
                print(f"acceptance miss: ordering {order} violated: {mses}")
                ok = False
    return ok


def _run_one(command, path, seed, out):
    cfg = load_config(path, command)
    experiment_id = Path(path).stem
    if command == "fit":
        report = run_fit(cfg, seed, out, experiment_id)
        print(f"{experiment_id}: mse {report.metrics.mse:.4e} "
              f"rmse {report.metrics.rmse:.4e} mae {report.metrics.mae:.4e} "
              f"time {report.metrics.wall_time_s:.1f}s")
    elif command == "pinn":
        report = run_pinn(cfg, seed, out, experiment_id)
        print(f"{experiment_id}: grid mse {report.metrics.mse:.4e} "
              f"time {report.metrics.wall_time_s:.1f}s")
    elif command == "ts":
        outcome = run_ts(cfg, seed, out, experiment_id)
        report = outcome["report"]
        for row in report["table"]["models"]:
            print(f"{experiment_id}/{row['name']}: mse {row['mse']:.4e} "
                  f"rmse {row['rmse']:.4e} mae {row['mae']:.4e}")
    else:
        raise ConfigError(f"unknown command {command!r}")
    return 0 if _check_acceptance(cfg, report) else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="xnet", description="Config-driven benchmark runner")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("fit", "pinn", "ts"):
        p = sub.add_parser(name)
        p.add_argument("--config", nargs="+", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--jobs", type=int, default=1)
    g = sub.add_parser("gradcheck")
    g.add_argument("--seed", type=int, default=1234)
    args = parser.parse_args(argv)

    if args.command == "gradcheck":
        failures = run_gradcheck(seed=args.seed)
        return 1 if failures else 0

    try:
        if args.jobs > 1 and len(args.config) > 1:
            with concurrent.futures.ProcessPoolExecutor(args.jobs) as pool:
                codes = list(pool.map(
                    _run_one_star,
                    [(args.command, p, args.seed, args.out)
                     for p in args.config]))
            return max(codes)
        codes = [_run_one(args.command, p, args.seed, args.out)
                 for p in args.config]
        return max(codes)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 1


def _run_one_star(args):
    try:
        return _run_one(*args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
