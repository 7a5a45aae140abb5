"""Synthetic truth: stochastically forced 2D barotropic vorticity flow.

Pseudo-spectral solver on a doubly periodic [0, 2pi)^2 grid:

    d(zeta)/dt = -J(psi, zeta) + nu lap(zeta) - mu zeta + f,   lap(psi) = zeta
    dc/dt      = -u . grad(c) + kappa lap(c)

with band-limited Gaussian forcing f redrawn once per analysis stride
(white in time at the stride scale).  The stochastic forcing makes the
one-stride-ahead distribution genuinely random, so a deterministic
predictor has irreducible error -- exactly the spread a calibrated
ensemble has to learn.  Every trajectory is a pure function of
(config, seed, trajectory id), so any sample can be regenerated
bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.fft as sfft

from .rng import RngKey, Role, gaussian_stream

__all__ = ["SystemConfig", "Simulator", "BlowUpError"]


class BlowUpError(RuntimeError):
    """Raised when the integration produces non-finite values or the CFL
    condition is violated; carries a spectrum snapshot for diagnosis."""

    def __init__(self, message, spectrum=None):
        super().__init__(message)
        self.spectrum = spectrum


@dataclass
class SystemConfig:
    grid: int = 64
    viscosity: float = 1e-4
    drag: float = 0.02
    forcing_band: tuple[float, float] = (3.0, 5.0)
    forcing_std: float = 0.3
    tracer_diffusivity: float = 1e-4
    dt: float = 0.01
    stride: int = 20           # integrator steps per analysis step
    spinup_strides: int = 1000
    cfl_limit: float = 0.5

    @property
    def n_vars(self) -> int:
        return 3  # vorticity, tracer, speed

    def to_dict(self):
        d = asdict(self)
        d["forcing_band"] = list(self.forcing_band)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["forcing_band"] = tuple(d.get("forcing_band", (3.0, 5.0)))
        return cls(**d)


class Simulator:
    """Batched integrator: evolves T independent trajectories in lockstep.

    Each trajectory b uses forcing streams keyed by (seed, trajectory_id[b],
    stride index), so results are independent of how trajectories are
    grouped into batches.
    """

    def __init__(self, config: SystemConfig, seed: int, trajectory_ids):
        self.config = config
        self.seed = int(seed)
        self.traj_ids = list(int(t) for t in trajectory_ids)
        n = config.grid
        kx = np.fft.fftfreq(n, d=1.0 / n)
        ky = np.fft.rfftfreq(n, d=1.0 / n)
        self.kx, self.ky = np.meshgrid(kx, ky, indexing="ij")
        self.k2 = self.kx**2 + self.ky**2
        self.k2_safe = self.k2.copy()
        self.k2_safe[0, 0] = 1.0
        kmax = n // 2
        self.dealias = (np.abs(self.kx) <= (2.0 / 3.0) * kmax) & (np.abs(self.ky) <= (2.0 / 3.0) * kmax)
        kmag = np.sqrt(self.k2)
        lo, hi = config.forcing_band
        self.force_mask = (kmag >= lo) & (kmag <= hi)
        self.dx = 2.0 * np.pi / n
        # state: spectral vorticity and tracer, (T, n, n//2+1) complex128
        self.zh = None
        self.ch = None
        self.stride_index = 0

    # -- initialization ------------------------------------------------

    def _band_noise(self, key: RngKey, mask: np.ndarray, std: float) -> np.ndarray:
        """Real field with support on `mask` in spectral space, unit-free
        normalization to the requested physical standard deviation."""
        n = self.config.grid
        white = gaussian_stream(key, n * n).reshape(n, n)
        wh = sfft.rfft2(white)
        wh *= mask
        f = sfft.irfft2(wh, s=(n, n))
        s = f.std()
        if s > 0:
            f *= std / s
        return f

    def init_state(self):
        """Vorticity from band noise, tracer from large-scale noise."""
        n = self.config.grid
        t = len(self.traj_ids)
        z0 = np.empty((t, n, n))
        c0 = np.empty((t, n, n))
        kmag2 = self.k2
        tracer_mask = (kmag2 > 0) & (kmag2 <= 4.0**2)
        for b, tid in enumerate(self.traj_ids):
            kz = RngKey(self.seed, member_id=tid, layer_id=1, step_index=0,
                        role=Role.INIT_PERTURBATION)
            kc = RngKey(self.seed, member_id=tid, layer_id=2, step_index=0,
                        role=Role.INIT_PERTURBATION)
            z0[b] = self._band_noise(kz, self.force_mask, 1.0)
            c0[b] = self._band_noise(kc, tracer_mask, 1.0)
        self.zh = sfft.rfft2(z0)
        self.ch = sfft.rfft2(c0)
        self.stride_index = 0

    def reset_tracer(self):
        """Redraw the tracer from its initial distribution (used after
        spin-up: a passive tracer homogenizes over long integrations)."""
        n = self.config.grid
        tracer_mask = (self.k2 > 0) & (self.k2 <= 4.0**2)
        c0 = np.empty((len(self.traj_ids), n, n))
        for b, tid in enumerate(self.traj_ids):
            kc = RngKey(self.seed, member_id=tid, layer_id=3,
                        step_index=self.stride_index, role=Role.INIT_PERTURBATION)
            c0[b] = self._band_noise(kc, tracer_mask, 1.0)
        self.ch = sfft.rfft2(c0)

    # -- dynamics ------------------------------------------------------

    def _forcing(self, stride_index: int) -> np.ndarray:
        """Spectral forcing for one stride, per trajectory."""
        cfg = self.config
        n = cfg.grid
        if cfg.forcing_std == 0.0:
            return np.zeros((len(self.traj_ids), n, n // 2 + 1), np.complex128)
        out = np.empty((len(self.traj_ids), n, n // 2 + 1), np.complex128)
        for b, tid in enumerate(self.traj_ids):
            key = RngKey(self.seed, member_id=tid, layer_id=0,
                         step_index=stride_index, role=Role.DATA_FORCING)
            out[b] = sfft.rfft2(self._band_noise(key, self.force_mask, cfg.forcing_std))
        return out

    def _rhs(self, zh, ch, fh):
        cfg = self.config
        n = cfg.grid
        ph = -zh / self.k2_safe
        t = zh.shape[0]
        fields = np.empty((6, t, n, n // 2 + 1), np.complex128)
        fields[0] = 1j * self.ky * ph      # u = -dpsi/dy -> sign below
        fields[1] = 1j * self.kx * ph
        fields[2] = 1j * self.kx * zh
        fields[3] = 1j * self.ky * zh
        fields[4] = 1j * self.kx * ch
        fields[5] = 1j * self.ky * ch
        phys = sfft.irfft2(fields, s=(n, n))
        u = -phys[0]
        v = phys[1]
        prods = np.empty((2, t, n, n))
        prods[0] = u * phys[2] + v * phys[3]
        prods[1] = u * phys[4] + v * phys[5]
        nl = sfft.rfft2(prods)
        nl *= self.dealias
        nl[:, :, 0, 0] = 0.0  # exact mean conservation for both fields
        dzh = -nl[0] - cfg.viscosity * self.k2 * zh - cfg.drag * zh + fh
        dch = -nl[1] - cfg.tracer_diffusivity * self.k2 * ch
        return dzh, dch, u, v

    def velocity(self):
        """Physical u, v from the current spectral vorticity."""
        n = self.config.grid
        ph = -self.zh / self.k2_safe
        u = -sfft.irfft2(1j * self.ky * ph, s=(n, n))
        v = sfft.irfft2(1j * self.kx * ph, s=(n, n))
        return u, v

    def states(self) -> np.ndarray:
        """Current (T, 3, n, n) state: vorticity, tracer, speed."""
        n = self.config.grid
        z = sfft.irfft2(self.zh, s=(n, n))
        c = sfft.irfft2(self.ch, s=(n, n))
        u, v = self.velocity()
        return np.stack([z, c, np.hypot(u, v)], axis=1).astype(np.float32)

    def step_stride(self):
        """Advance all trajectories one analysis stride (RK4 substeps)."""
        cfg = self.config
        dt = cfg.dt
        fh = self._forcing(self.stride_index)
        for _ in range(cfg.stride):
            zh, ch = self.zh, self.ch
            k1z, k1c, u, v = self._rhs(zh, ch, fh)
            k2z, k2c, _, _ = self._rhs(zh + 0.5 * dt * k1z, ch + 0.5 * dt * k1c, fh)
            k3z, k3c, _, _ = self._rhs(zh + 0.5 * dt * k2z, ch + 0.5 * dt * k2c, fh)
            k4z, k4c, _, _ = self._rhs(zh + dt * k3z, ch + dt * k3c, fh)
            self.zh = zh + (dt / 6.0) * (k1z + 2 * k2z + 2 * k3z + k4z)
            self.ch = ch + (dt / 6.0) * (k1c + 2 * k2c + 2 * k3c + k4c)
        self.stride_index += 1
        speed = max(np.max(np.abs(u)), np.max(np.abs(v)))
        cfl = speed * dt / self.dx
        if not np.isfinite(cfl) or cfl >= cfg.cfl_limit:
            spec = self.kinetic_energy_spectrum()
            raise BlowUpError(
                f"integration unstable at stride {self.stride_index}: CFL={cfl:.3f}",
                spectrum=spec,
            )

    # -- diagnostics ---------------------------------------------------

    def kinetic_energy(self) -> np.ndarray:
        u, v = self.velocity()
        return 0.5 * (u**2 + v**2).mean(axis=(1, 2))

    def enstrophy(self) -> np.ndarray:
        n = self.config.grid
        z = sfft.irfft2(self.zh, s=(n, n))
        return 0.5 * (z**2).mean(axis=(1, 2))

    def kinetic_energy_spectrum(self) -> np.ndarray:
        """Ring-binned KE spectrum averaged over trajectories."""
        from .metrics import ke_spectrum

        u, v = self.velocity()
        spectra = [ke_spectrum(u[b], v[b]).energy for b in range(u.shape[0])]
        return np.mean(spectra, axis=0)
