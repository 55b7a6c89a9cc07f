"""Parameter update rules: Adam, RMSprop, SGD with momentum."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import NonFiniteError, ShapeError, Tensor


@dataclass
class Adam:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class RMSprop:
    decay: float = 0.9
    eps: float = 1e-8


@dataclass
class SGD:
    momentum: float = 0.0


@dataclass
class OptimizerState:
    """Algorithm spec plus per-parameter accumulators, keyed by name."""

    algorithm: Adam | RMSprop | SGD
    learning_rate: float
    step_count: int = 0
    slots: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")

    def _slot(self, name: str, like: np.ndarray, keys: tuple[str, ...]) -> dict[str, np.ndarray]:
        entry = self.slots.get(name)
        if entry is None:
            entry = {k: np.zeros_like(like) for k in keys}
            self.slots[name] = entry
        return entry


def optimizer_step(state: OptimizerState, params: dict[str, Tensor],
                   grads: dict[str, np.ndarray]) -> None:
    """Apply one in-place update; rejects NaN gradients before touching anything."""
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if params[name].shape != np.shape(g):
            raise ShapeError(
                f"parameter {name!r} has shape {params[name].shape}, gradient {np.shape(g)}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"gradient for {name!r} is not finite; no update applied")

    state.step_count += 1
    t = state.step_count
    lr = state.learning_rate
    alg = state.algorithm
    for name, g in grads.items():
        p = params[name]
        g = np.asarray(g, dtype=p.data.dtype)
        if isinstance(alg, Adam):
            slot = state._slot(name, p.data, ("m", "v"))
            slot["m"] = alg.beta1 * slot["m"] + (1 - alg.beta1) * g
            slot["v"] = alg.beta2 * slot["v"] + (1 - alg.beta2) * g * g
            m_hat = slot["m"] / (1 - alg.beta1 ** t)
            v_hat = slot["v"] / (1 - alg.beta2 ** t)
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + alg.eps)
        elif isinstance(alg, RMSprop):
            slot = state._slot(name, p.data, ("v",))
            slot["v"] = alg.decay * slot["v"] + (1 - alg.decay) * g * g
            p.data = p.data - lr * g / (np.sqrt(slot["v"]) + alg.eps)
        elif isinstance(alg, SGD):
            slot = state._slot(name, p.data, ("vel",))
            slot["vel"] = alg.momentum * slot["vel"] + g
            p.data = p.data - lr * slot["vel"]
        else:
            raise TypeError(f"unknown optimizer algorithm {alg!r}")
