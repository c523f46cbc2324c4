from dataclasses import dataclass, field
from typing import Any, Dict

import numpy as np


@dataclass
class OptimizerState:
    """SGD with momentum and polynomial learning-rate decay"""
    lr0: float
    total_steps: int
    power: float = 0.9
    momentum: float = 0.9
    velocities: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {self.total_steps}")
        if self.lr0 < 0:
            raise ValueError(f"Learning rate must be non-negative, got {self.lr0}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"Momentum must be in [0, 1), got {self.momentum}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "lr0": self.lr0,
            "total_steps": self.total_steps,
            "power": self.power,
            "momentum": self.momentum,
            "step": self.step,
            "velocities": {name: v.tolist() for name, v in self.velocities.items()},
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "OptimizerState":
        return cls(
            lr0=float(data["lr0"]),
            total_steps=int(data["total_steps"]),
            power=float(data["power"]),
            momentum=float(data["momentum"]),
            velocities={name: np.array(v, dtype=np.float64) for name, v in data["velocities"].items()},
            step=int(data["step"]),
        )


def lr_at(state: OptimizerState, t: int) -> float:
    """lr0 * (1 - t/T)^power for 0 <= t <= T"""
    if t < 0 or t > state.total_steps:
        raise ValueError(f"Step {t} outside the schedule [0, {state.total_steps}]")
    return state.lr0 * (1.0 - t / state.total_steps) ** state.power


def sgd_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: OptimizerState) -> OptimizerState:
    """
    In-place update v <- mu v + g, p <- p - lr v for every parameter in `grads`.

    Parameters without a gradient entry are left untouched.
    """
    lr = lr_at(state, state.step)
    for name, g in grads.items():
        p = params[name]
        if p.shape != g.shape:
            raise ValueError(f"Gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        v = state.velocities.get(name)
        if v is None:
            v = state.velocities[name] = np.zeros_like(p)
        v *= state.momentum
        v += g
        p -= lr * v
    state.step += 1
    return state
