"""Precision-weighted fusion of candidate controller commands.

The fused command minimizes ``sum_p (u - u_p)' G_p (u - u_p)``, whose
closed form ``(sum G_p)^-1 sum G_p u_p`` is the mean of the product of
Gaussians N(u_p, G_p^-1).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import FactorizationError, NoConfidenceError, ValidationError


@dataclass(frozen=True)
class ControllerOutput:
    command: np.ndarray
    weight: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        u = np.atleast_1d(np.asarray(self.command, dtype=float))
        g = np.atleast_2d(np.asarray(self.weight, dtype=float))
        if g.shape != (u.shape[0], u.shape[0]):
            raise ValidationError(f"weight shape {g.shape} does not match command length {u.shape[0]}")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(g))):
            raise ValidationError(f"controller {self.source_id!r} produced non-finite values")
        object.__setattr__(self, "command", u)
        object.__setattr__(self, "weight", 0.5 * (g + g.T))
        object.__setattr__(self, "source_id", str(self.source_id))


@dataclass(frozen=True)
class FusedCommand:
    command: np.ndarray
    combined_precision: np.ndarray
    per_controller_share: tuple
    source_ids: tuple


def gamma_from_cov(cov) -> np.ndarray:
    """Fusion weight: the (symmetrized) inverse of a predicted covariance."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    try:
        chol = np.linalg.cholesky(0.5 * (cov + cov.T))
    except np.linalg.LinAlgError as exc:
        raise FactorizationError("covariance is singular; cannot form a fusion weight") from exc
    inv_chol = np.linalg.solve(chol, np.eye(cov.shape[0]))
    gamma = inv_chol.T @ inv_chol
    return 0.5 * (gamma + gamma.T)


def fuse(outputs: Sequence[ControllerOutput]) -> FusedCommand:
    """Fuse candidate commands.

    Summation runs in sorted ``source_id`` order so the result does not depend
    on the order of ``outputs``. Raises :class:`NoConfidenceError` when the
    summed precision is not positive-definite.
    """
    if len(outputs) == 0:
        raise ValidationError("fuse needs at least one controller output")
    dim = outputs[0].command.shape[0]
    if any(o.command.shape[0] != dim for o in outputs):
        raise ValidationError("controller commands differ in dimension")
    ordered = sorted(outputs, key=lambda o: o.source_id)
    precision = np.zeros((dim, dim))
    info = np.zeros(dim)
    for o in ordered:
        precision += o.weight
        info += o.weight @ o.command
    precision = 0.5 * (precision + precision.T)
    scale = np.max(np.abs(precision))
    if scale == 0.0 or not np.isfinite(scale):
        raise NoConfidenceError("all fusion weights are zero")
    try:
        chol = np.linalg.cholesky(precision)
    except np.linalg.LinAlgError as exc:
        raise NoConfidenceError("summed fusion precision is singular") from exc
    if np.min(np.diag(chol)) ** 2 <= 1e-14 * scale:
        raise NoConfidenceError("summed fusion precision is numerically singular")
    y = np.linalg.solve(chol, info)
    command = np.linalg.solve(chol.T, y)
    total = float(np.trace(precision))
    shares = tuple(float(np.trace(o.weight)) / total for o in ordered)
    return FusedCommand(command=command, combined_precision=precision,
                        per_controller_share=shares,
                        source_ids=tuple(o.source_id for o in ordered))
