"""Training objectives.

Latitude-weighted MSE drives the deterministic curriculum; the
almost-fair CRPS drives ensemble fine-tuning.  Both are expressed in
the autodiff op set so gradients flow to every model parameter.

    afCRPS = (1/M) sum_j |x_j - y|
             - (1 - eps) / (2 M (M-1)) sum_j sum_k |x_j - x_k|

with eps = (1 - alpha_loss) / M.  alpha_loss = 1 recovers the fair
CRPS, which is degenerate when all members but one sit on the target;
alpha_loss slightly below 1 (default 0.95) removes that pathology.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T

__all__ = [
    "LossConfig",
    "cosine_weights",
    "weighted_mse",
    "afcrps",
    "afcrps_field",
    "afcrps_field_np",
]


def cosine_weights(latitudes_deg) -> np.ndarray:
    """Per-row weights w_j = N cos(phi_j) / sum_k cos(phi_k).

    Normalized so the weights sum to the row count; uniform weighting is
    then the identity in every weighted mean.
    """
    lat = np.asarray(latitudes_deg, dtype=np.float64)
    if np.any(np.abs(lat) >= 90.0):
        raise ValueError("pole rows (|lat| >= 90) have zero or negative weight")
    c = np.cos(np.deg2rad(lat))
    return lat.size * c / c.sum()


@dataclass
class LossConfig:
    alpha_loss: float = 0.95
    m_ens: int = 10
    weights: np.ndarray | None = None

    def __post_init__(self):
        if not (0.0 < self.alpha_loss <= 1.0):
            raise ValueError(f"alpha_loss must be in (0, 1], got {self.alpha_loss}")
        if self.m_ens < 1:
            raise ValueError("m_ens must be >= 1")

    @property
    def epsilon(self) -> float:
        return (1.0 - self.alpha_loss) / self.m_ens


def weighted_mse(prediction, target, weights=None) -> T.Tensor:
    """Row-weighted mean squared error; differentiable."""
    prediction = prediction if isinstance(prediction, T.Tensor) else T.Tensor(prediction)
    target = target if isinstance(target, T.Tensor) else T.Tensor(target)
    if prediction.shape != target.shape:
        raise T.ShapeError(f"weighted_mse: prediction {prediction.shape} != target {target.shape}")
    err = T.sub(prediction, target)
    return T.weighted_mean(T.mul(err, err), weights)


def _afcrps_terms(members: list[T.Tensor], target: T.Tensor, alpha_loss: float,
                  weights=None) -> T.Tensor:
    m = len(members)
    term1 = None
    for xj in members:
        a = T.weighted_mean(T.absolute(T.sub(xj, target)), weights)
        term1 = a if term1 is None else T.add(term1, a)
    term1 = T.scale(term1, 1.0 / m)
    if m == 1:
        # Eq. for the spread term is undefined at M=1; defined as 0 so
        # the loss degrades to the MAE
        return term1
    eps = (1.0 - alpha_loss) / m
    pair_sum = None
    for j in range(m):
        for k in range(j + 1, m):
            d = T.weighted_mean(T.absolute(T.sub(members[j], members[k])), weights)
            pair_sum = d if pair_sum is None else T.add(pair_sum, d)
    # ordered double sum = 2x the j<k sum
    term2 = T.scale(pair_sum, 2.0 * (1.0 - eps) / (2.0 * m * (m - 1)))
    return T.sub(term1, term2)


def afcrps(ensemble, target, alpha_loss: float = 0.95) -> T.Tensor:
    """Almost-fair CRPS of a scalar (or elementwise-averaged) ensemble.

    `ensemble` is (M, ...) with the target shaped like one member.
    Returns a scalar Tensor; differentiable almost everywhere (the
    |.| subgradient at ties is taken as 0).
    """
    ens = ensemble if isinstance(ensemble, T.Tensor) else T.Tensor(np.asarray(ensemble))
    tgt = target if isinstance(target, T.Tensor) else T.Tensor(np.asarray(target))
    m = ens.shape[0]
    if m == 0:
        raise ValueError("afcrps: ensemble must have at least one member")
    if ens.shape[1:] != tgt.shape:
        raise T.ShapeError(f"afcrps: members {ens.shape[1:]} != target {tgt.shape}")
    members = T.split_members(ens, m)
    return _afcrps_terms(members, tgt, alpha_loss)


def afcrps_field(ensemble, target, weights=None, alpha_loss: float = 0.95) -> T.Tensor:
    """Pointwise afCRPS averaged over (V, H, W) with row weights.

    ensemble: (M, V, H, W); target: (V, H, W).  Equals the plain mean
    of pointwise scores when weights are uniform.
    """
    ens = ensemble if isinstance(ensemble, T.Tensor) else T.Tensor(np.asarray(ensemble))
    tgt = target if isinstance(target, T.Tensor) else T.Tensor(np.asarray(target))
    if ens.data.ndim != tgt.data.ndim + 1 or ens.shape[1:] != tgt.shape:
        raise T.ShapeError(f"afcrps_field: ensemble {ens.shape} vs target {tgt.shape}")
    members = T.split_members(ens, ens.shape[0])
    return _afcrps_terms(members, tgt, alpha_loss, weights)


def afcrps_field_np(ensemble: np.ndarray, target: np.ndarray, weights=None,
                    alpha_loss: float = 0.95) -> float:
    """Fast numpy evaluation of afcrps_field (no gradients); used by the
    verification pipeline where fields are large and numerous."""
    ens = np.asarray(ensemble, dtype=np.float64)
    tgt = np.asarray(target, dtype=np.float64)
    m = ens.shape[0]
    if ens.shape[1:] != tgt.shape:
        raise ValueError(f"afcrps_field_np: ensemble {ens.shape} vs target {tgt.shape}")
    term1 = np.abs(ens - tgt[None]).mean(axis=0)
    if m > 1:
        eps = (1.0 - alpha_loss) / m
        pair = np.abs(ens[:, None] - ens[None, :]).sum(axis=(0, 1))
        term2 = (1.0 - eps) / (2.0 * m * (m - 1)) * pair
    else:
        term2 = 0.0
    point = term1 - term2
    if weights is None:
        return float(point.mean())
    w = np.asarray(weights, dtype=np.float64)
    wfull = w.reshape((1,) * (point.ndim - 2) + (-1, 1))
    return float((point * wfull).sum() * (w.size / (w.sum() * point.size)))
