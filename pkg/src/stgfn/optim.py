"""AdamW with decoupled weight decay and a reduce-on-plateau LR schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


class MissingGradientError(RuntimeError):
    pass


class AdamW:
    """AdamW over a fixed, ordered list of parameter tensors.

    Weight decay multiplies the parameter by ``1 - lr * weight_decay`` before
    the Adam update; it never touches the moment estimates.
    """

    def __init__(
        self,
        params,
        lr: float = 1e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 1e-4,
    ):
        if lr < 0:
            raise ValueError(f"invalid learning rate {lr}")
        self.params: list[Tensor] = list(params)
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        missing = [p.name or f"#{i}" for i, p in enumerate(self.params) if p.grad is None]
        if missing:
            raise MissingGradientError(f"no gradient for parameter(s): {', '.join(missing)}")
        b1, b2 = self.betas
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - b1**t
        bc2 = 1.0 - b2**t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if self.weight_decay:
                p.data *= 1.0 - self.lr * self.weight_decay
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_dict(self) -> dict:
        return {
            "lr": self.lr,
            "betas": list(self.betas),
            "eps": self.eps,
            "weight_decay": self.weight_decay,
            "step_count": self.step_count,
            "m": [x.copy() for x in self.m],
            "v": [x.copy() for x in self.v],
        }

    def load_state_dict(self, state: dict) -> None:
        if len(state["m"]) != len(self.params):
            raise ValueError("optimizer state does not match the parameter list")
        for p, m in zip(self.params, state["m"]):
            if m.shape != p.shape:
                raise ValueError(f"moment shape {m.shape} != parameter shape {p.shape}")
        self.lr = float(state["lr"])
        self.betas = tuple(state["betas"])
        self.eps = float(state["eps"])
        self.weight_decay = float(state["weight_decay"])
        self.step_count = int(state["step_count"])
        self.m = [np.array(x, dtype=np.float64) for x in state["m"]]
        self.v = [np.array(x, dtype=np.float64) for x in state["v"]]


@dataclass
class PlateauScheduler:
    """Multiply the optimizer LR by ``factor`` once ``patience`` epochs in a
    row fail to improve the monitored loss by more than ``delta``."""

    optimizer: AdamW
    patience: int = 5
    factor: float = 0.1
    delta: float = 0.0
    best: float = math.inf
    bad_epochs: int = 0
    history: list[float] = field(default_factory=list)

    def step(self, value: float) -> float:
        if value < self.best - self.delta:
            self.best = value
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            self.optimizer.lr *= self.factor
            self.bad_epochs = 0
        self.history.append(self.optimizer.lr)
        return self.optimizer.lr

    def state_dict(self) -> dict:
        return {
            "patience": self.patience,
            "factor": self.factor,
            "delta": self.delta,
            "best": self.best,
            "bad_epochs": self.bad_epochs,
            "history": list(self.history),
        }

    def load_state_dict(self, state: dict) -> None:
        self.patience = int(state["patience"])
        self.factor = float(state["factor"])
        self.delta = float(state["delta"])
        self.best = float(state["best"])
        self.bad_epochs = int(state["bad_epochs"])
        self.history = [float(x) for x in state["history"]]
