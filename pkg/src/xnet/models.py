"""Network definitions and the 1D spline baseline.

XNet is a single hidden layer of rational "bump" units: unit k projects
the input onto a direction, then applies

    phi(z) = (lambda1 * z + lambda2) / (z^2 + d^2)

with trainable lambda1, lambda2 and bandwidth d per unit.  The lambdas
double as output weights; a lone global bias completes the model.  The
bandwidth is stored through a softplus reparameterization so |d| stays
above ``D_MIN`` under unconstrained optimization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline

from . import autodiff as ad
from . import kernels
from .autodiff import Dual, Node, ShapeError

D_MIN = 1e-4


@dataclass
class CauchyParams:
    """Scalar parameters of one rational unit."""
    lambda1: float
    lambda2: float
    d: float

    def __post_init__(self):
        if abs(self.d) < D_MIN:
            raise ValueError(f"|d| must be >= {D_MIN}, got {self.d}")


def cauchy_eval(z, p: CauchyParams):
    """Evaluate the rational unit at z (scalar or array)."""
    return (p.lambda1 * z + p.lambda2) / (z * z + p.d * p.d)


def _rho_for_bandwidth(d0: float) -> float:
    if d0 <= D_MIN:
        raise ValueError(f"initial bandwidth must exceed {D_MIN}, got {d0}")
    return float(np.log(np.expm1(d0 - D_MIN)))


@dataclass
class XNetInit:
    """Initialization hyperparameters, recorded with every run.

    ``weight_mode`` 'normal' draws projection entries from
    N(0, 1/input_dim); 'unit_sphere' draws uniform directions scaled by
    ``weight_scale``.  ``coeff_mode`` 'normal' draws the lambdas from
    N(0, 1/num_basis); 'zeros' starts the output exactly at the bias.
    ``pair_frac`` confines that fraction of the units to 2D coordinate
    subspaces (spread evenly over all pairs), a structural prior for
    inputs whose interactions are low-dimensional.
    """
    weight_mode: str = "normal"
    weight_scale: float = 1.0
    offset_range: float = 1.0
    bandwidth: float = 1.0
    coeff_mode: str = "normal"
    pair_frac: float = 0.0

    def as_dict(self):
        return {
            "weight_mode": self.weight_mode,
            "weight_scale": self.weight_scale,
            "offset_range": self.offset_range,
            "bandwidth": self.bandwidth,
            "coeff_mode": self.coeff_mode,
            "pair_frac": self.pair_frac,
        }


class XNetModel:
    """Single hidden layer of rational bump units with a global bias."""

    def __init__(self, input_dim: int, num_basis: int, rng=None,
                 init: XNetInit | None = None):
        if input_dim < 1 or num_basis < 1:
            raise ValueError("input_dim and num_basis must be positive")
        self.input_dim = input_dim
        self.num_basis = num_basis
        self.init = init or XNetInit()
        rng = rng or np.random.default_rng(0)
        K, D = num_basis, input_dim

        ini = self.init
        if ini.weight_mode == "normal":
            w = rng.normal(0.0, 1.0 / np.sqrt(D), (K, D)) * ini.weight_scale
        elif ini.weight_mode == "unit_sphere":
            w = rng.normal(0.0, 1.0, (K, D))
            w /= np.linalg.norm(w, axis=1, keepdims=True)
            w *= ini.weight_scale
        else:
            raise ValueError(f"unknown weight_mode {ini.weight_mode!r}")
        if ini.pair_frac > 0.0 and D > 2:
            from itertools import combinations
            pairs = list(combinations(range(D), 2))
            per = int(ini.pair_frac * K) // len(pairs)
            pos = 0
            for (i, j) in pairs:
                wp = rng.normal(0.0, 1.0, (per, 2))
                wp /= np.linalg.norm(wp, axis=1, keepdims=True)
                w[pos:pos + per] = 0.0
                w[pos:pos + per, i] = wp[:, 0] * ini.weight_scale
                w[pos:pos + per, j] = wp[:, 1] * ini.weight_scale
                pos += per
        b = rng.uniform(-ini.offset_range, ini.offset_range, K)
        if ini.coeff_mode == "normal":
            lam1 = rng.normal(0.0, 1.0 / np.sqrt(K), K)
            lam2 = rng.normal(0.0, 1.0 / np.sqrt(K), K)
        elif ini.coeff_mode == "zeros":
            lam1 = np.zeros(K)
            lam2 = np.zeros(K)
        else:
            raise ValueError(f"unknown coeff_mode {ini.coeff_mode!r}")
        rho = np.full(K, _rho_for_bandwidth(ini.bandwidth))

        self.w = ad.parameter(w, "w")
        self.b = ad.parameter(b, "b")
        self.lam1 = ad.parameter(lam1, "lam1")
        self.lam2 = ad.parameter(lam2, "lam2")
        self.rho = ad.parameter(rho, "rho")
        self.c0 = ad.parameter(np.zeros(()), "c0")

    def parameters(self) -> list[Node]:
        return [self.w, self.b, self.lam1, self.lam2, self.rho, self.c0]

    def param_count(self) -> int:
        return self.num_basis * (self.input_dim + 4) + 1

    def bandwidth_node(self) -> Node:
        return ad.add(ad.softplus(self.rho), D_MIN)

    def bandwidths(self) -> np.ndarray:
        return D_MIN + np.logaddexp(0.0, self.rho.value)

    def set_bandwidths(self, d: np.ndarray) -> None:
        d = np.asarray(d, dtype=np.float64)
        if np.any(d <= D_MIN):
            raise ValueError(f"bandwidths must exceed {D_MIN}")
        self.rho.value = np.log(np.expm1(d - D_MIN))

    def forward(self, x):
        """Batched output [N, 1]; differentiable in parameters and input.

        Plain array/Node input takes the fused kernel; Dual input builds
        the layer from elementary ops so directional derivatives flow.
        """
        if isinstance(x, Dual):
            self._check_cols(_dual_primal_shape(x))
            return self._forward_composed(x)
        xv = x.value if isinstance(x, Node) else np.asarray(x)
        self._check_cols(xv.shape)
        x_node = x if isinstance(x, Node) else ad.constant(xv)
        return self._forward_fused(x_node)

    def _check_cols(self, shape):
        if len(shape) != 2 or shape[1] != self.input_dim:
            raise ShapeError(
                f"expected input of shape [batch, {self.input_dim}], got {shape}")

    def _forward_fused(self, x_node: Node) -> Node:
        d_node = self.bandwidth_node()
        ins = (x_node, self.w, self.b, self.lam1, self.lam2, d_node)

        def forward():
            Xv, Wv, bv, l1, l2, dv = (n.value for n in ins)
            return kernels.basis_sum_forward(Xv, Wv, bv, l1, l2, dv)

        def vjp(g, out, Xv, Wv, bv, l1, l2, dv):
            g = np.ascontiguousarray(g)
            gW, gb, gl1, gl2, gd = kernels.basis_sum_backward(
                Xv, Wv, bv, l1, l2, dv, g)
            gX = kernels.basis_sum_backward_x(Xv, Wv, bv, l1, l2, dv, g)
            return gX, gW, gb, gl1, gl2, gd

        s = ad.fused_node("cauchy_basis_sum", ins, forward, vjp)
        return ad.reshape(ad.add(s, self.c0), (x_node.value.shape[0], 1))

    def _forward_composed(self, x):
        d = self.bandwidth_node()
        z = ad.add(ad.matmul(x, ad.transpose(self.w)), self.b)
        num = ad.add(ad.mul(z, self.lam1), self.lam2)
        den = ad.add(ad.square(z), ad.square(d))
        y = ad.sum_(ad.div(num, den), axis=1, keepdims=True)
        return ad.add(y, self.c0)

    def laplacian_fused(self, x) -> Node:
        """Exact Laplacian of the output over rows of x, shape [N, 1].

        Single fused pass over the units using the closed-form second
        derivative of the rational activation; gradients flow to every
        parameter (and the input) through the recorded VJP.
        """
        x_node = x if isinstance(x, Node) else ad.constant(np.asarray(x))
        self._check_cols(x_node.value.shape)
        d_node = self.bandwidth_node()
        ins = (x_node, self.w, self.b, self.lam1, self.lam2, d_node)

        def forward():
            Xv, Wv, bv, l1, l2, dv = (n.value for n in ins)
            return kernels.lap_sum_forward(Xv, Wv, bv, l1, l2, dv)

        def vjp(g, out, Xv, Wv, bv, l1, l2, dv):
            g = np.ascontiguousarray(g)
            gW, gb, gl1, gl2, gd = kernels.lap_sum_backward(
                Xv, Wv, bv, l1, l2, dv, g)
            gX = kernels.lap_sum_backward_x(Xv, Wv, bv, l1, l2, dv, g)
            return gX, gW, gb, gl1, gl2, gd

        s = ad.fused_node("cauchy_basis_lap", ins, forward, vjp)
        return ad.reshape(s, (x_node.value.shape[0], 1))

    def config(self) -> dict:
        return {"input_dim": self.input_dim, "num_basis": self.num_basis,
                "init": self.init.as_dict()}


def _dual_primal_shape(x):
    p = x.primal
    while isinstance(p, Dual):
        p = p.primal
    return p.value.shape if isinstance(p, Node) else np.asarray(p).shape


def xnet_forward(model: XNetModel, x):
    return model.forward(x)


def fit_linear_coefficients(model: XNetModel, X, y, ridge: float = 1e-9,
                            subsample: int | None = None, rng=None) -> float:
    """Ridge least-squares solve of the output coefficients.

    The layer output is linear in (lambda1, lambda2, c0); with the
    projections and bandwidths held fixed this solves that linear
    subproblem exactly (primal form when units are few, dual form when
    the basis outnumbers the samples).  Returns the achieved training MSE.
    Used as a data-dependent initialization before gradient training.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if subsample is not None and subsample < len(X):
        rng = rng or np.random.default_rng(0)
        idx = rng.permutation(len(X))[:subsample]
        Xs, ys = X[idx], y[idx]
    else:
        Xs, ys = X, y
    d = model.bandwidths()
    P1, P2 = kernels.basis_features(Xs, model.w.value, model.b.value, d)
    n = len(Xs)
    m = 2 * model.num_basis + 1
    if m <= n:
        A = np.concatenate([P1, P2, np.ones((n, 1))], axis=1)
        G = A.T @ A
        G[np.diag_indices_from(G)] += ridge
        coef = np.linalg.solve(G, A.T @ ys)
    else:
        G = P1 @ P1.T + P2 @ P2.T + 1.0
        G[np.diag_indices_from(G)] += ridge
        alpha = np.linalg.solve(G, ys)
        coef = np.concatenate([P1.T @ alpha, P2.T @ alpha, [alpha.sum()]])
    K = model.num_basis
    model.lam1.value = np.ascontiguousarray(coef[:K])
    model.lam2.value = np.ascontiguousarray(coef[K:2 * K])
    model.c0.value = np.asarray(coef[2 * K])
    P1f, P2f = kernels.basis_features(X, model.w.value, model.b.value, d)
    resid = P1f @ model.lam1.value + P2f @ model.lam2.value + float(model.c0.value) - y
    return float(np.mean(resid * resid))


# ---------------------------------------------------------------------------
# MLP baseline
# ---------------------------------------------------------------------------

class MLPModel:
    """Dense tanh stack with a linear head, e.g. widths [2, 20, 20, 1]."""

    def __init__(self, widths: list[int], rng=None):
        if len(widths) < 2:
            raise ValueError("widths must list at least input and output sizes")
        self.widths = list(widths)
        rng = rng or np.random.default_rng(0)
        self.weights = []
        self.biases = []
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            std = np.sqrt(2.0 / (fan_in + fan_out))
            self.weights.append(
                ad.parameter(rng.normal(0.0, std, (fan_in, fan_out)), f"W{i}"))
            self.biases.append(ad.parameter(np.zeros(fan_out), f"b{i}"))

    def parameters(self) -> list[Node]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def param_count(self) -> int:
        return sum(i * o + o for i, o in zip(self.widths[:-1], self.widths[1:]))

    def forward(self, x):
        if not isinstance(x, (Node, Dual)):
            x = ad.constant(np.asarray(x))
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ad.add(ad.matmul(h, w), b)
            if i != last:
                h = ad.tanh(h)
        return h

    def config(self) -> dict:
        return {"widths": self.widths}


def mlp_forward(model: MLPModel, x):
    return model.forward(x)


# ---------------------------------------------------------------------------
# LSTM cell and sequence heads
# ---------------------------------------------------------------------------

class LSTMCellParams:
    """Gate weights over [input, hidden] concatenation plus a readout head.

    ``head`` is either an affine map hidden -> 1 or an XNet over the
    final hidden state.
    """

    GATES = ("i", "f", "g", "o")

    def __init__(self, input_size: int, hidden_size: int, rng=None,
                 head: str = "affine", head_basis: int = 10,
                 head_init: XNetInit | None = None):
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.head_kind = head
        rng = rng or np.random.default_rng(0)
        D, H = input_size, hidden_size
        std = 1.0 / np.sqrt(D + H)
        self.gate_w = {}
        self.gate_b = {}
        for gate in self.GATES:
            self.gate_w[gate] = ad.parameter(
                rng.normal(0.0, std, (D + H, H)), f"W_{gate}")
            self.gate_b[gate] = ad.parameter(np.zeros(H), f"b_{gate}")
        if head == "affine":
            self.head_w = ad.parameter(rng.normal(0.0, 1.0 / np.sqrt(H), (H, 1)),
                                       "head_w")
            self.head_b = ad.parameter(np.zeros(1), "head_b")
            self.head_model = None
        elif head == "xnet":
            self.head_model = XNetModel(H, head_basis, rng=rng,
                                        init=head_init or XNetInit())
            self.head_w = None
            self.head_b = None
        else:
            raise ValueError(f"unknown head {head!r}")

    def parameters(self) -> list[Node]:
        out = []
        for gate in self.GATES:
            out.extend([self.gate_w[gate], self.gate_b[gate]])
        if self.head_kind == "affine":
            out.extend([self.head_w, self.head_b])
        else:
            out.extend(self.head_model.parameters())
        return out

    def param_count(self) -> int:
        D, H = self.input_size, self.hidden_size
        gates = 4 * ((D + H) * H + H)
        if self.head_kind == "affine":
            return gates + H + 1
        return gates + self.head_model.param_count()

    def apply_head(self, h):
        if self.head_kind == "affine":
            return ad.add(ad.matmul(h, self.head_w), self.head_b)
        return self.head_model.forward(h)

    def config(self) -> dict:
        cfg = {"input_size": self.input_size, "hidden_size": self.hidden_size,
               "head": self.head_kind}
        if self.head_kind == "xnet":
            cfg["head_basis"] = self.head_model.num_basis
            cfg["head_init"] = self.head_model.init.as_dict()
        return cfg


def lstm_step(p: LSTMCellParams, x_t, h_prev, c_prev):
    """Standard gated recurrence; returns (h_t, c_t)."""
    if not isinstance(x_t, Node):
        x_t = ad.constant(np.asarray(x_t))
    if not isinstance(h_prev, Node):
        h_prev = ad.constant(np.asarray(h_prev))
    if not isinstance(c_prev, Node):
        c_prev = ad.constant(np.asarray(c_prev))
    xh = ad.concat(x_t, h_prev, axis=1)
    i = ad.sigmoid(ad.add(ad.matmul(xh, p.gate_w["i"]), p.gate_b["i"]))
    f = ad.sigmoid(ad.add(ad.matmul(xh, p.gate_w["f"]), p.gate_b["f"]))
    g = ad.tanh(ad.add(ad.matmul(xh, p.gate_w["g"]), p.gate_b["g"]))
    o = ad.sigmoid(ad.add(ad.matmul(xh, p.gate_w["o"]), p.gate_b["o"]))
    c_t = ad.add(ad.mul(f, c_prev), ad.mul(i, g))
    h_t = ad.mul(o, ad.tanh(c_t))
    return h_t, c_t


def sequence_forward(p: LSTMCellParams, windows: np.ndarray) -> Node:
    """Run the recurrence over [N, T, D] windows; head output [N, 1]."""
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 3 or windows.shape[2] != p.input_size:
        raise ShapeError(
            f"expected windows [N, T, {p.input_size}], got {windows.shape}")
    n, T, _ = windows.shape
    if T < 1:
        raise ValueError("window length must be at least 1")
    h = ad.constant(np.zeros((n, p.hidden_size)))
    c = ad.constant(np.zeros((n, p.hidden_size)))
    for t in range(T):
        h, c = lstm_step(p, windows[:, t, :], h, c)
    return p.apply_head(h)


def sequence_predict(p: LSTMCellParams, window: np.ndarray) -> float:
    """One-step prediction from a single [T, D] window."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2:
        raise ShapeError(f"expected window [T, D], got {window.shape}")
    if window.shape[0] < 1:
        raise ValueError("window must contain at least one step")
    out = sequence_forward(p, window[None, :, :])
    return float(out.value[0, 0])


# ---------------------------------------------------------------------------
# 1D clamped B-spline least-squares baseline
# ---------------------------------------------------------------------------

@dataclass
class BSplineFit1D:
    grid_size: int
    degree: int
    knots: np.ndarray
    coef: np.ndarray
    domain: tuple = (-1.0, 1.0)

    @property
    def n_basis(self) -> int:
        return len(self.knots) - self.degree - 1

    def design_matrix(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return BSpline.design_matrix(x, self.knots, self.degree).toarray()

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return self.design_matrix(np.atleast_1d(x)) @ self.coef


def _clamped_knots(lo: float, hi: float, grid_size: int, degree: int):
    interior = np.linspace(lo, hi, grid_size + 1)
    return np.concatenate([np.full(degree, lo), interior, np.full(degree, hi)])


def bspline_fit(xs, ys, grid_size: int, degree: int = 3,
                domain: tuple | None = None) -> BSplineFit1D:
    """Least-squares spline on a uniform clamped knot vector."""
    xs = np.asarray(xs, dtype=np.float64).ravel()
    ys = np.asarray(ys, dtype=np.float64).ravel()
    if len(xs) != len(ys):
        raise ValueError("xs and ys must have equal length")
    lo, hi = domain if domain is not None else (xs.min(), xs.max())
    if not (hi > lo):
        raise ValueError("degenerate domain")
    knots = _clamped_knots(lo, hi, grid_size, degree)
    n_basis = len(knots) - degree - 1
    if len(xs) < n_basis:
        raise ValueError(
            f"need at least {n_basis} samples for grid_size={grid_size}, "
            f"degree={degree}; got {len(xs)} (try a smaller grid)")
    A = BSpline.design_matrix(xs, knots, degree).toarray()
    coef, _, rank, _ = np.linalg.lstsq(A, ys, rcond=None)
    if rank < n_basis:
        raise ValueError(
            f"rank-deficient design matrix (rank {rank} < {n_basis} basis "
            f"functions); try a smaller grid than G={grid_size}")
    return BSplineFit1D(grid_size=grid_size, degree=degree, knots=knots,
                        coef=coef, domain=(float(lo), float(hi)))


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------
# Flat parameter order: the concatenation of each parameter node's
# raveled values in parameters() order.

def _flat_params(model) -> list[float]:
    return np.concatenate(
        [p.value.ravel() for p in model.parameters()]).tolist()


def _load_flat(model, flat):
    flat = np.asarray(flat, dtype=np.float64)
    pos = 0
    for p in model.parameters():
        n = p.value.size
        p.value = np.ascontiguousarray(
            flat[pos:pos + n].reshape(p.value.shape))
        pos += n
    if pos != flat.size:
        raise ValueError(f"checkpoint holds {flat.size} values, model needs {pos}")


_MODEL_TYPES = {"xnet", "mlp", "lstm"}


def save_checkpoint(model, path, seed=None):
    if isinstance(model, XNetModel):
        mtype = "xnet"
    elif isinstance(model, MLPModel):
        mtype = "mlp"
    elif isinstance(model, LSTMCellParams):
        mtype = "lstm"
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    blob = {"model_type": mtype, "config": model.config(),
            "params": _flat_params(model), "seed": seed}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh)


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        blob = json.load(fh)
    mtype = blob["model_type"]
    cfg = blob["config"]
    if mtype == "xnet":
        model = XNetModel(cfg["input_dim"], cfg["num_basis"],
                          init=XNetInit(**cfg["init"]))
    elif mtype == "mlp":
        model = MLPModel(cfg["widths"])
    elif mtype == "lstm":
        head_init = cfg.get("head_init")
        model = LSTMCellParams(
            cfg["input_size"], cfg["hidden_size"], head=cfg["head"],
            head_basis=cfg.get("head_basis", 10),
            head_init=XNetInit(**head_init) if head_init else None)
    else:
        raise ValueError(f"unknown model_type {mtype!r}")
    _load_flat(model, blob["params"])
    return model, blob.get("seed")
