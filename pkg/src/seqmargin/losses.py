"""Scalar margin losses and the full / per-task objective built from them."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .datamodel import JointDataset


@dataclass(frozen=True)
class LossSpec:
    kind: str
    beta: float          # smoothness of the scalar loss
    G: float             # loss(u) >= G * max(0, -u)
    mu_plus: float = 1.0
    mu_minus: float = 1.0
    u_bar: float = 0.0

    def __post_init__(self):
        if self.kind not in ("logistic", "exponential"):
            raise ValueError(f"unknown loss kind {self.kind!r}")


LOGISTIC = LossSpec("logistic", beta=0.25, G=1.0)
# not globally smooth; only used for projection-style experiments
EXPONENTIAL = LossSpec("exponential", beta=np.inf, G=1.0)


def loss_value(spec: LossSpec, u):
    u = np.asarray(u, dtype=float)
    if spec.kind == "logistic":
        return np.logaddexp(0.0, -u)
    return np.exp(-u)


def loss_derivative(spec: LossSpec, u):
    u = np.asarray(u, dtype=float)
    if spec.kind == "logistic":
        return -expit(-u)
    return -np.exp(-u)


def loss_second_derivative(spec: LossSpec, u):
    u = np.asarray(u, dtype=float)
    if spec.kind == "logistic":
        return expit(u) * expit(-u)
    return np.exp(-u)


def _check_dim(ds: JointDataset, w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (ds.d,):
        raise ValueError(f"weight has shape {w.shape}, dataset dimension is {ds.d}")
    return w


def rows_loss(spec: LossSpec, X: np.ndarray, w: np.ndarray) -> float:
    return float(np.sum(loss_value(spec, X @ w)))


def rows_gradient(spec: LossSpec, X: np.ndarray, w: np.ndarray) -> np.ndarray:
    return loss_derivative(spec, X @ w) @ X


def rows_hessian(spec: LossSpec, X: np.ndarray, w: np.ndarray) -> np.ndarray:
    c = loss_second_derivative(spec, X @ w)
    return (X * c[:, None]).T @ X


def joint_loss(spec: LossSpec, ds: JointDataset, w) -> float:
    return rows_loss(spec, ds.X, _check_dim(ds, w))


def task_loss(spec: LossSpec, ds: JointDataset, m: int, w) -> float:
    return rows_loss(spec, ds.task_X(m), _check_dim(ds, w))


def task_losses(spec: LossSpec, ds: JointDataset, w) -> np.ndarray:
    """Loss of every task at ``w`` (length M)."""
    w = _check_dim(ds, w)
    per_point = loss_value(spec, ds.X @ w)
    return np.array([per_point[idx].sum() for idx in ds.partition.index_sets])


def joint_gradient(spec: LossSpec, ds: JointDataset, w) -> np.ndarray:
    return rows_gradient(spec, ds.X, _check_dim(ds, w))


def task_gradient(spec: LossSpec, ds: JointDataset, m: int, w) -> np.ndarray:
    if not 0 <= m < ds.M:
        raise IndexError(f"task {m} outside [0, {ds.M})")
    return rows_gradient(spec, ds.task_X(m), _check_dim(ds, w))


def joint_hessian(spec: LossSpec, ds: JointDataset, w) -> np.ndarray:
    return rows_hessian(spec, ds.X, _check_dim(ds, w))


def smoothness_constants(spec: LossSpec, ds: JointDataset):
    """Return ``(sigma_max, beta_m, B)``.

    ``sigma_max`` is the top singular value of the data matrix, ``beta_m`` the
    smoothness of each task loss and ``B`` their sum.
    """
    sigma_max = float(np.linalg.norm(ds.X, 2))
    beta_m = np.array([spec.beta * np.linalg.norm(ds.task_X(m), 2) ** 2 for m in range(ds.M)])
    return sigma_max, beta_m, float(beta_m.sum())
