"""Adam optimizer over named parameter dicts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError


@dataclass
class AdamState:
    """First/second moment accumulators plus hyperparameters.

    ``step`` starts at 0 and increases by one per ``adam_step`` call.
    """

    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray], **hyper) -> "AdamState":
        state = cls(**hyper)
        state.m = {k: np.zeros_like(p) for k, p in params.items()}
        state.v = {k: np.zeros_like(p) for k, p in params.items()}
        return state


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float | None = None,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new params and mutated state.

    ``lr`` overrides the stored learning rate for this step (warmup schedules).
    """
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            raise ShapeError(f"missing gradient for parameter {name!r}")
        if g.shape != p.shape or state.m[name].shape != p.shape:
            raise ShapeError(f"adam_step: shape mismatch for {name!r}: param {p.shape}, grad {g.shape}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    step_lr = state.lr if lr is None else lr
    bias1 = 1.0 - b1**t
    bias2 = 1.0 - b2**t
    new_params = {}
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        new_params[name] = p - step_lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
    return new_params, state
