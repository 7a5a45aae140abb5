"""Ensemble verification: RMSE, CRPS, spread-skill, rank histograms,
kinetic-energy spectra."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
from scipy.stats import chisquare

from .losses import afcrps_field_np
from .rng import RngKey, Role, uniform_stream

__all__ = [
    "Spectrum",
    "VerificationReport",
    "ensemble_metrics",
    "rank_histogram",
    "ke_spectrum",
    "velocity_from_vorticity",
    "spectral_centroid",
]


@dataclass
class Spectrum:
    """Ring-summed kinetic energy per integer wavenumber."""

    energy: np.ndarray  # index n -> E(n)

    @property
    def total(self) -> float:
        return float(self.energy.sum())

    def centroid(self) -> float:
        n = np.arange(self.energy.size)
        return float((n * self.energy).sum() / self.energy.sum())


def ke_spectrum(u: np.ndarray, v: np.ndarray) -> Spectrum:
    """Isotropic (annulus-binned) kinetic-energy spectrum.

    Normalized so that sum_n E(n) equals the domain-mean kinetic energy
    (Parseval).  Ring n collects modes with n - 1/2 < |k| <= n + 1/2.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.ndim != 2 or u.shape != v.shape or u.shape[0] != u.shape[1]:
        raise ValueError(f"ke_spectrum expects square 2D u, v; got {u.shape}, {v.shape}")
    n = u.shape[0]
    uh = np.fft.fft2(u) / (n * n)
    vh = np.fft.fft2(v) / (n * n)
    e2 = 0.5 * (np.abs(uh) ** 2 + np.abs(vh) ** 2)
    kx = np.fft.fftfreq(n, d=1.0 / n)
    kmag = np.hypot(*np.meshgrid(kx, kx, indexing="ij"))
    rings = np.rint(kmag).astype(int)
    nmax = rings.max()
    energy = np.bincount(rings.ravel(), weights=e2.ravel(), minlength=nmax + 1)
    return Spectrum(energy=energy)


def velocity_from_vorticity(zeta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Invert lap(psi) = zeta on the periodic grid; u = -dpsi/dy, v = dpsi/dx."""
    zeta = np.asarray(zeta, dtype=np.float64)
    n = zeta.shape[-1]
    kx = np.fft.fftfreq(n, d=1.0 / n)
    ky = np.fft.rfftfreq(n, d=1.0 / n)
    kxg, kyg = np.meshgrid(kx, ky, indexing="ij")
    k2 = kxg**2 + kyg**2
    k2[0, 0] = 1.0
    zh = sfft.rfft2(zeta)
    ph = -zh / k2
    u = -sfft.irfft2(1j * kyg * ph, s=zeta.shape[-2:])
    v = sfft.irfft2(1j * kxg * ph, s=zeta.shape[-2:])
    return u, v


def spectral_centroid(field: np.ndarray) -> float:
    """KE-spectrum centroid of a vorticity difference field."""
    u, v = velocity_from_vorticity(field)
    return ke_spectrum(u, v).centroid()


def rank_histogram(forecasts: np.ndarray, truth: np.ndarray,
                   tie_key: RngKey | None = None) -> np.ndarray:
    """Counts of the truth's rank among sorted members, (M+1) bins.

    Ties are broken uniformly at random from a dedicated keyed stream, so
    exchangeable inputs yield a flat histogram even for degenerate
    ensembles.
    """
    fc = np.asarray(forecasts)
    tr = np.asarray(truth)
    if fc.shape[1:] != tr.shape:
        raise ValueError(f"rank_histogram: forecasts {fc.shape} vs truth {tr.shape}")
    m = fc.shape[0]
    flat_f = fc.reshape(m, -1)
    flat_t = tr.reshape(-1)
    below = (flat_f < flat_t).sum(axis=0)
    ties = (flat_f == flat_t).sum(axis=0)
    ranks = below.astype(np.int64)
    tied = ties > 0
    if np.any(tied):
        if tie_key is None:
            tie_key = RngKey(0, layer_id=101, role=Role.INIT_PERTURBATION)
        u = uniform_stream(tie_key, int(tied.sum()))
        # uniform position among the tied members (+1 possible slots)
        ranks[tied] += np.floor(u * (ties[tied] + 1)).astype(np.int64)
    return np.bincount(ranks, minlength=m + 1)


def rank_histogram_pvalue(counts: np.ndarray) -> float:
    """Chi-square p-value against the uniform histogram."""
    counts = np.asarray(counts, dtype=np.float64)
    return float(chisquare(counts).pvalue)


@dataclass
class LeadMetrics:
    rmse_det: float | None
    rmse_ens_mean: float
    crps: float
    spread: float
    ssr: float
    rank_histogram: list[int]
    samples: int


@dataclass
class VerificationReport:
    variables: list[str]
    leads: list[int]
    cells: dict[str, LeadMetrics] = field(default_factory=dict)

    @staticmethod
    def key(variable: str, lead: int) -> str:
        return f"{variable}@{lead}"

    def get(self, variable: str, lead: int) -> LeadMetrics:
        return self.cells[self.key(variable, lead)]

    def to_dict(self) -> dict:
        return {
            "variables": self.variables,
            "leads": self.leads,
            "cells": {k: vars(v) for k, v in self.cells.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "VerificationReport":
        d = json.loads(text)
        rep = cls(variables=d["variables"], leads=d["leads"])
        rep.cells = {k: LeadMetrics(**v) for k, v in d["cells"].items()}
        return rep

    def flat_table(self) -> str:
        """One row per variable-lead-metric, tab-separated, for plotting."""
        lines = ["variable\tlead\tmetric\tvalue"]
        for k, cell in sorted(self.cells.items()):
            var, lead = k.rsplit("@", 1)
            for metric in ("rmse_det", "rmse_ens_mean", "crps", "spread", "ssr"):
                val = getattr(cell, metric)
                if val is not None:
                    lines.append(f"{var}\t{lead}\t{metric}\t{val:.10g}")
        return "\n".join(lines) + "\n"


def _weighted_rmse(err2: np.ndarray, weights) -> float:
    """err2: (..., H, W) squared errors; row-weighted mean then sqrt."""
    if weights is None:
        return float(np.sqrt(err2.mean()))
    w = np.asarray(weights, dtype=np.float64)
    wfull = w.reshape((1,) * (err2.ndim - 2) + (-1, 1))
    return float(np.sqrt((err2 * wfull).sum() * (w.size / (w.sum() * err2.size))))


def ensemble_metrics(forecasts: np.ndarray, truth: np.ndarray,
                     weights=None, alpha_loss: float = 0.95,
                     variables: list[str] | None = None,
                     deterministic: np.ndarray | None = None,
                     tie_seed: int = 0) -> VerificationReport:
    """Per-variable, per-lead verification of an ensemble run.

    forecasts: (M, T, V, H, W); truth: (T, V, H, W); optional
    deterministic run (T, V, H, W) for the baseline RMSE row.
    Spread is sqrt of the weighted-mean per-point ensemble variance
    (M-1 divisor); SSR = spread / rmse_ens_mean.
    """
    fc = np.asarray(forecasts, dtype=np.float64)
    tr = np.asarray(truth, dtype=np.float64)
    if fc.ndim != 5 or fc.shape[1:] != tr.shape:
        raise ValueError(f"ensemble_metrics: forecasts {fc.shape} vs truth {tr.shape}")
    m, t, v, h, w = fc.shape
    if m < 2:
        raise ValueError("spread metrics require at least 2 members")
    if variables is None:
        variables = [f"var{i}" for i in range(v)]
    report = VerificationReport(variables=list(variables), leads=list(range(1, t + 1)))
    for iv, var in enumerate(variables):
        for it in range(t):
            ens = fc[:, it, iv]  # (M, H, W)
            obs = tr[it, iv]
            mean = ens.mean(axis=0)
            rmse = _weighted_rmse((mean - obs) ** 2, weights)
            var_pt = ens.var(axis=0, ddof=1)
            if weights is None:
                spread = float(np.sqrt(var_pt.mean()))
            else:
                wv = np.asarray(weights, dtype=np.float64)
                spread = float(np.sqrt((var_pt * wv[:, None]).sum()
                                       * (wv.size / (wv.sum() * var_pt.size))))
            if rmse == 0.0:
                raise ZeroDivisionError(
                    f"SSR undefined: ensemble-mean RMSE is 0 for {var} lead {it + 1}"
                )
            crps = afcrps_field_np(ens[:, None], obs[None], weights=weights,
                                   alpha_loss=alpha_loss)
            tie_key = RngKey(tie_seed, layer_id=iv, step_index=it,
                             role=Role.INIT_PERTURBATION)
            hist = rank_histogram(ens, obs, tie_key=tie_key)
            rmse_det = None
            if deterministic is not None:
                rmse_det = _weighted_rmse((deterministic[it, iv] - obs) ** 2, weights)
            report.cells[report.key(var, it + 1)] = LeadMetrics(
                rmse_det=rmse_det,
                rmse_ens_mean=rmse,
                crps=crps,
                spread=spread,
                ssr=spread / rmse,
                rank_histogram=[int(c) for c in hist],
                samples=int(obs.size),
            )
    return report
