"""Adam with decoupled weight decay, plus the step-halving learning rate rule.

The optimizer is constructed from named parameter groups so its moment
state can be serialized by name. A parameter whose gradient is missing at
step time is an error rather than a silent skip; anything intentionally
frozen belongs to a different optimizer (or none).
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .tensor import GradientError
from .nn import Parameter

__all__ = ["Adam", "lr_halving_schedule"]


def lr_halving_schedule(step: int, initial_lr: float, half_period: int) -> float:
    """Learning rate after ``step`` updates: halved once per full period."""
    if half_period < 1:
        raise ValueError(f"halving period must be >= 1, got {half_period}")
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    return initial_lr * 0.5 ** (step // half_period)


class Adam:
    """Adam over named parameter groups, each with its own base rate.

    ``groups`` maps a group label to (base_lr, [(name, parameter), ...]).
    ``step(lr_scale)`` applies one update with every group's rate scaled by
    the same factor, which is how schedules act on multi-rate setups. Weight
    decay is decoupled: it subtracts lr * decay * value directly instead of
    entering the moment estimates.
    """

    def __init__(
        self,
        groups: dict[str, tuple[float, Sequence[tuple[str, Parameter]]]],
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.groups = {
            label: (float(lr), list(params)) for label, (lr, params) in groups.items()
        }
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.state: dict[str, dict] = {}
        seen: set[str] = set()
        for _, params in self.groups.values():
            for name, p in params:
                if name in seen:
                    raise ValueError(f"parameter {name!r} appears in two groups")
                seen.add(name)
                self.state[name] = {
                    "m": np.zeros(p.shape),
                    "v": np.zeros(p.shape),
                    "t": 0,
                }

    @classmethod
    def single_group(
        cls,
        named_params: Iterable[tuple[str, Parameter]],
        lr: float,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ) -> "Adam":
        return cls({"all": (lr, list(named_params))}, betas, eps, weight_decay)

    def zero_grad(self) -> None:
        for _, params in self.groups.values():
            for _, p in params:
                p.grad = None

    def step(self, lr_scale: float = 1.0) -> None:
        b1, b2 = self.betas
        for label, (base_lr, params) in self.groups.items():
            lr = base_lr * lr_scale
            for name, p in params:
                if p.grad is None:
                    raise GradientError(
                        f"adam: parameter {name!r} (group {label!r}) has no gradient"
                    )
                st = self.state[name]
                st["t"] += 1
                t = st["t"]
                g = p.grad
                st["m"] = b1 * st["m"] + (1.0 - b1) * g
                st["v"] = b2 * st["v"] + (1.0 - b2) * (g * g)
                m_hat = st["m"] / (1.0 - b1**t)
                v_hat = st["v"] / (1.0 - b2**t)
                update = m_hat / (np.sqrt(v_hat) + self.eps)
                if self.weight_decay:
                    update = update + self.weight_decay * p.data
                p.data -= lr * update

    def state_dict(self) -> dict:
        return {
            name: {"m": st["m"].copy(), "v": st["v"].copy(), "t": st["t"]}
            for name, st in self.state.items()
        }

    def load_state_dict(self, state: dict) -> None:
        if set(state) != set(self.state):
            missing = set(self.state) - set(state)
            extra = set(state) - set(self.state)
            raise ValueError(
                f"optimizer state mismatch: missing {sorted(missing)}, "
                f"unexpected {sorted(extra)}"
            )
        for name, st in state.items():
            own = self.state[name]
            if st["m"].shape != own["m"].shape:
                raise ValueError(
                    f"optimizer state for {name!r} has shape {st['m'].shape}, "
                    f"expected {own['m'].shape}"
                )
            own["m"] = st["m"].copy()
            own["v"] = st["v"].copy()
            own["t"] = int(st["t"])
