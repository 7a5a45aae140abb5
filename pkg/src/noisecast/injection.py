"""Hierarchical noise injection layers.

Each decoder level carries one injection layer that adds a learned
stochastic residual to its feature map:

    out = features + alpha * R (.) S (.) M

where R is per-pixel Gaussian noise, S is a style field derived from a
per-level latent tensor through a bias-free linear map, and M is a
learned per-channel modulation.  The latent tensor is the compact,
archivable identity of an ensemble member: storing it (plus the R key)
is enough to regenerate, rescale, or interpolate the member later.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .rng import RngKey, Role, gaussian_stream

__all__ = [
    "LatentTensor",
    "InjectionLayer",
    "PerturbationRecord",
    "sample_latents",
    "apply_beta",
]


@dataclass
class LatentTensor:
    """Per-level stochastic input Z, shape (H, W, d_z)."""

    level: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 3:
            raise ValueError(f"latent values must be (H, W, d_z), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"latent tensor at level {self.level} contains non-finite values")

    @property
    def grid(self) -> tuple[int, int]:
        return self.values.shape[:2]

    @property
    def d_z(self) -> int:
        return self.values.shape[2]


@dataclass
class PerturbationRecord:
    """What was added at one level of one forward step.

    The perturbation is recomputable exactly from (latent, rng_key_R,
    layer parameters); `perturbation` is kept for in-memory diagnostics
    and is not what gets archived.
    """

    level: int
    latent: LatentTensor
    rng_key_r: RngKey
    style: np.ndarray | None = None
    perturbation: np.ndarray | None = None


class InjectionLayer:
    """Learned stochastic residual at one decoder level.

    Parameters: `style_w` maps d_z latent channels to C feature channels
    per spatial location (a 1x1 convolution, no bias -- an all-zero
    latent must give exactly zero style so the deterministic limit is
    bit-exact); `mod` is the (1,C,1,1) channel modulation.  `alpha` is a
    fixed scale and never receives gradients.

    `spatial_latents=False` restores the broadcast style-vector mode
    where the latent is a flat d_z vector and S has shape (B,C,1,1).
    """

    def __init__(self, level: int, channels: int, d_z: int, alpha: float = 0.235,
                 spatial_latents: bool = True, dtype=np.float32, init_key: RngKey | None = None):
        self.level = level
        self.channels = channels
        self.d_z = d_z
        self.alpha = float(alpha)
        self.spatial_latents = spatial_latents
        if init_key is None:
            init_key = RngKey(0, layer_id=level, role=Role.LATENT)
        # small-variance init keeps the layer near-identity at step 0
        w = gaussian_stream(init_key, channels * d_z).reshape(channels, d_z) * 0.02
        self.style_w = T.Tensor(w.astype(dtype), requires_grad=True)
        self.mod = T.Tensor(np.ones((1, channels, 1, 1), dtype=dtype), requires_grad=True)

    def parameters(self) -> dict[str, T.Tensor]:
        return {
            f"inject{self.level}.style_w": self.style_w,
            f"inject{self.level}.mod": self.mod,
        }

    def style(self, z_batch: T.Tensor) -> T.Tensor:
        """Style field from latents (B, d_z, H, W) -> (B, C, H, W)."""
        return T.conv1x1(z_batch, self.style_w)

    def forward(self, features: T.Tensor, z: LatentTensor, key_r: RngKey,
                record: bool = True) -> tuple[T.Tensor, PerturbationRecord]:
        b, c, h, w = features.shape
        if c != self.channels:
            raise T.ShapeError(
                f"injection level {self.level}: features have {c} channels, layer expects {self.channels}"
            )
        if z.level != self.level:
            raise ValueError(f"latent level {z.level} fed to injection level {self.level}")
        if self.spatial_latents and z.grid != (h, w):
            raise T.ShapeError(
                f"injection level {self.level}: latent grid {z.grid} != feature grid {(h, w)}"
            )

        zv = z.values  # (H, W, d_z) or (1, 1, d_z) in vector mode
        zt = T.Tensor(
            np.broadcast_to(zv.transpose(2, 0, 1)[None], (b, self.d_z, zv.shape[0], zv.shape[1])).astype(features.dtype)
        )
        s = self.style(zt)  # (B, C, H, W) or (B, C, 1, 1)

        r = gaussian_stream(key_r, b * c * h * w).reshape(b, c, h, w).astype(features.dtype)
        noise = T.Tensor(r)

        pert = T.scale(T.mul(T.mul(noise, s), self.mod), self.alpha)
        out = T.add(features, pert)

        rec = PerturbationRecord(level=self.level, latent=z, rng_key_r=key_r)
        if record:
            rec.style = np.array(s.data[0] if b == 1 else s.data)
            rec.perturbation = np.array(pert.data)
        return out, rec


def sample_latents(key: RngKey, level_grids: dict[int, tuple[int, int]], d_z: int,
                   spatial: bool = True) -> dict[int, LatentTensor]:
    """Independent standard-normal latents for each injection level.

    Deterministic in the key; levels draw from streams differing only in
    layer_id, so they are mutually independent.
    """
    if key.role != Role.LATENT:
        raise ValueError(f"latent sampling requires a LATENT-role key, got {key.role!r}")
    out = {}
    for level, (h, w) in sorted(level_grids.items()):
        shape = (h, w, d_z) if spatial else (1, 1, d_z)
        vals = gaussian_stream(key.child(layer_id=level), int(np.prod(shape))).reshape(shape)
        out[level] = LatentTensor(level=level, values=vals.astype(np.float32))
    return out


def apply_beta(latents: dict[int, LatentTensor], beta) -> dict[int, LatentTensor]:
    """Scale each level's latent by its beta factor; inputs unmodified."""
    beta = tuple(float(b) for b in beta)
    if len(beta) != len(latents):
        raise ValueError(f"expected {len(latents)} beta factors, got {len(beta)}")
    if not all(np.isfinite(beta)):
        raise ValueError(f"beta factors must be finite, got {beta}")
    out = {}
    for (level, z), b in zip(sorted(latents.items()), beta):
        out[level] = LatentTensor(level=level, values=z.values * np.float32(b))
    return out
