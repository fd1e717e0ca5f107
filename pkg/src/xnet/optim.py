"""Adam optimizer, training loop, and the seeded RNG contract.

All random draws in the library flow through numpy Generators backed by
PCG64 (64-bit state, seedable, splittable via SeedSequence.spawn); a run
is reproduced bit-for-bit by its recorded seed on the same platform.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Node, backward

ADAM_DEFAULTS = {"lr": 1e-3, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8}


class TrainingError(RuntimeError):
    """Raised when training cannot continue (non-finite gradients)."""


class DivergenceError(RuntimeError):
    """Loss exceeded the guard threshold or became non-finite."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def split_rng(seed: int, n: int) -> list[np.random.Generator]:
    """Independent child streams derived from one seed."""
    return [np.random.Generator(np.random.PCG64(s))
            for s in np.random.SeedSequence(seed).spawn(n)]


@dataclass
class AdamState:
    lr: float = ADAM_DEFAULTS["lr"]
    beta1: float = ADAM_DEFAULTS["beta1"]
    beta2: float = ADAM_DEFAULTS["beta2"]
    eps: float = ADAM_DEFAULTS["eps"]
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params: list[Node], lr=ADAM_DEFAULTS["lr"],
                   beta1=ADAM_DEFAULTS["beta1"], beta2=ADAM_DEFAULTS["beta2"],
                   eps=ADAM_DEFAULTS["eps"]) -> "AdamState":
        return cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps,
                   m=[np.zeros_like(p.value) for p in params],
                   v=[np.zeros_like(p.value) for p in params])

    def reset_slot(self, index: int) -> None:
        """Clear one parameter's moments (after an external reset of it)."""
        self.m[index][...] = 0.0
        self.v[index][...] = 0.0


def adam_step(state: AdamState, params: list[Node], grads: list[np.ndarray],
              lr: float | None = None):
    """One bias-corrected Adam update; mutates params in place.

    Raises TrainingError naming the offending parameter if any gradient
    is non-finite.
    """
    if len(grads) != len(params):
        raise ValueError("grads must align with params")
    state.step += 1
    t = state.step
    lr = state.lr if lr is None else lr
    b1, b2, eps = state.beta1, state.beta2, state.eps
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.value.shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match parameter "
                f"{p.name!r} shape {p.value.shape}")
        if not np.isfinite(g).all():
            raise TrainingError(
                f"non-finite gradient for parameter {p.name!r} at step {t}")
        m = state.m[i]
        v = state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.value = p.value - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


@dataclass
class TrainConfig:
    iterations: int
    lr: float = ADAM_DEFAULTS["lr"]
    seed: int = 0
    batch_size: int | None = None      # None: full batch
    lr_decay_every: int | None = None  # constant schedule when None
    lr_decay_factor: float = 0.5
    log_every: int = 100
    loss: str = "mse"
    stop_loss: float | None = None     # early stop once loss falls below
    max_loss: float = 1e12             # divergence guard
    beta1: float = ADAM_DEFAULTS["beta1"]
    beta2: float = ADAM_DEFAULTS["beta2"]
    eps: float = ADAM_DEFAULTS["eps"]

    def __post_init__(self):
        if self.iterations <= 0:
            raise ValueError("iterations must be positive")

    def lr_at(self, step: int) -> float:
        if not self.lr_decay_every:
            return self.lr
        return self.lr * self.lr_decay_factor ** (step // self.lr_decay_every)

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations, "lr": self.lr, "seed": self.seed,
            "batch_size": self.batch_size,
            "lr_decay_every": self.lr_decay_every,
            "lr_decay_factor": self.lr_decay_factor,
            "log_every": self.log_every, "loss": self.loss,
            "stop_loss": self.stop_loss, "max_loss": self.max_loss,
            "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
        }


@dataclass
class TrainResult:
    history: list          # (step, loss) pairs at log_every cadence
    final_loss: float
    steps_run: int
    elapsed_s: float


def train(model, loss_builder, cfg: TrainConfig,
          callback=None, step_hook=None) -> TrainResult:
    """Generic Adam loop over a rebuilt-per-step loss graph.

    ``loss_builder(model, rng, step)`` must return a scalar Node.  The
    loop is deterministic given the config seed; training aborts with
    DivergenceError (carrying the partial history) when the loss passes
    ``max_loss`` or becomes non-finite.  ``step_hook(model, state, step)``
    runs before each step and may rewrite parameters (it must reset the
    matching moment slots through ``state.reset_slot``).
    """
    params = model.parameters()
    state = AdamState.for_params(params, lr=cfg.lr, beta1=cfg.beta1,
                                 beta2=cfg.beta2, eps=cfg.eps)
    rng = make_rng(cfg.seed)
    history = []
    loss_val = float("nan")
    t0 = time.perf_counter()
    step = 0
    for step in range(1, cfg.iterations + 1):
        if step_hook is not None:
            step_hook(model, state, step)
        loss_node = loss_builder(model, rng, step)
        if not isinstance(loss_node, Node):
            raise TypeError("loss_builder must return a Node")
        loss_val = float(np.asarray(loss_node.value).reshape(()))
        if not np.isfinite(loss_val) or loss_val > cfg.max_loss:
            history.append((step, loss_val))
            raise DivergenceError(
                f"loss {loss_val!r} tripped the divergence guard at step {step}",
                history)
        grad_map = backward(loss_node)
        grads = [grad_map[p] for p in params]
        adam_step(state, params, grads, lr=cfg.lr_at(step))
        if step % cfg.log_every == 0 or step == cfg.iterations:
            history.append((step, loss_val))
            if callback is not None:
                callback(step, loss_val)
        if cfg.stop_loss is not None and loss_val < cfg.stop_loss:
            if not history or history[-1][0] != step:
                history.append((step, loss_val))
            break
    return TrainResult(history=history, final_loss=loss_val,
                       steps_run=step, elapsed_s=time.perf_counter() - t0)


def mse_loss_builder(model, X, y):
    """Full-batch squared-error loss over a fixed dataset."""
    from . import autodiff as ad
    X = np.asarray(X, dtype=np.float64)
    y_col = np.asarray(y, dtype=np.float64).reshape(-1, 1)

    def build(m, rng, step):
        pred = m.forward(X)
        return ad.mean_(ad.square(ad.sub(pred, y_col)))

    return build
