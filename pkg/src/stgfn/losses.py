"""Composite objective: outcome BCE + utility MSE + lambda * gap penalty.

The gap penalty compares the predicted and the true absolute utility gap
per dialogue, ``(|u_A_hat - u_B_hat| - |u_A - u_B|)**2``, so its minimum
sits at the observed disparity rather than at equal shares.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

BCE_EPS = 1e-12


class LossContractError(ValueError):
    pass


@dataclass(frozen=True)
class UtilityPair:
    u_a: float
    u_b: float

    def __post_init__(self):
        if not (np.isfinite(self.u_a) and np.isfinite(self.u_b)):
            raise LossContractError("utilities must be finite")

    @property
    def gap(self) -> float:
        return abs(self.u_a - self.u_b)


@dataclass
class LossBreakdown:
    outcome: float
    utility: float
    fairness: float
    lam: float
    total: float
    # graph node for backward; never serialized
    total_tensor: Tensor | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("total_tensor")
        return d


def _pairs(u) -> Tensor:
    if isinstance(u, UtilityPair):
        return T.Tensor([[u.u_a, u.u_b]])
    t = T.as_tensor(u)
    return T.reshape(t, (1, 2)) if t.ndim == 1 else t


def outcome_loss(prob, y) -> Tensor:
    """Mean binary cross-entropy, probabilities clamped to [eps, 1 - eps]."""
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if not np.all((y == 0) | (y == 1)):
        raise LossContractError(f"labels must be 0 or 1, got {np.unique(y)}")
    p = T.clamp(T.reshape(T.as_tensor(prob), y.shape), BCE_EPS, 1.0 - BCE_EPS)
    ll = T.add(T.mul(T.log(p), y), T.mul(T.log(T.sub(1.0, p)), 1.0 - y))
    return T.mul(T.mean(ll), -1.0)


def utility_loss(u_hat, u) -> Tensor:
    """Squared error averaged over both agents and the batch."""
    return T.mean(T.square(T.sub(_pairs(u_hat), _pairs(u).data)))


def _gap(u: Tensor) -> Tensor:
    return T.abs_(T.sub(T.getitem(u, (slice(None), 0)), T.getitem(u, (slice(None), 1))))


def fairness_loss(u_hat, u) -> Tensor:
    """Batch mean of (predicted gap - true gap)^2."""
    u_hat, u = _pairs(u_hat), _pairs(u)
    true_gap = np.abs(u.data[:, 0] - u.data[:, 1])
    return T.mean(T.square(T.sub(_gap(u_hat), true_gap)))


def composite_loss(prob, y, u_hat, u, lam: float, weights: tuple[float, float] = (1.0, 1.0)) -> LossBreakdown:
    """Assemble outcome + utility + lam * fairness on the tape.

    ``weights`` scales the outcome and utility terms (both 1 by default).
    """
    if lam < 0:
        raise LossContractError(f"fairness weight must be non-negative, got {lam}")
    l_out = outcome_loss(prob, y)
    l_util = utility_loss(u_hat, u)
    l_fair = fairness_loss(u_hat, u)
    w_out, w_util = weights
    total = T.add(T.add(T.mul(l_out, w_out), T.mul(l_util, w_util)), T.mul(l_fair, lam))
    return LossBreakdown(
        outcome=float(l_out.data),
        utility=float(l_util.data),
        fairness=float(l_fair.data),
        lam=float(lam),
        total=float(total.data),
        total_tensor=total,
    )


@dataclass
class FairnessCurve:
    grid: np.ndarray
    fairness: np.ndarray  # (grid - true_gap)^2
    mse_to_mean: np.ndarray | None  # (grid - mean_gap)^2


def fairness_curve(true_gap: float, grid, mean_gap: float | None = None) -> FairnessCurve:
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        raise LossContractError("grid must be non-empty")
    fair = (grid - true_gap) ** 2
    mse = (grid - mean_gap) ** 2 if mean_gap is not None else None
    return FairnessCurve(grid, fair, mse)
