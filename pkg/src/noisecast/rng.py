"""Deterministic counter-based random numbers.

Every random draw in the project is addressed by an :class:`RngKey`, a
five-field tuple identifying *which* stream is wanted (seed, ensemble
member, injection layer, forecast step, role).  Streams are generated by
Philox4x32-10 with the key tuple packed into the counter block, so any
draw can be regenerated in isolation -- no stateful generator has to be
replayed from the start.  Normal variates come from a branch-free
Box-Muller transform, which keeps sequences bit-identical across runs.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

__all__ = ["Role", "RngKey", "gaussian_stream", "uniform_stream"]

_PHILOX_M0 = np.uint64(0xD2511F53)
_PHILOX_M1 = np.uint64(0xCD9E8D57)
_PHILOX_W0 = np.uint32(0x9E3779B9)
_PHILOX_W1 = np.uint32(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)


class Role(enum.IntEnum):
    """What a random stream is used for; part of the stream address."""

    LATENT = 0
    PIXEL_NOISE = 1
    DATA_FORCING = 2
    INIT_PERTURBATION = 3


@dataclass(frozen=True)
class RngKey:
    """Address of an independent random stream.

    Distinct key tuples give statistically independent streams; the same
    tuple always reproduces the identical sequence.
    """

    global_seed: int
    member_id: int = 0
    layer_id: int = 0
    step_index: int = 0
    role: Role = Role.LATENT

    def __post_init__(self):
        for name in ("member_id", "layer_id", "step_index"):
            v = getattr(self, name)
            if not (0 <= v < 2**32):
                raise ValueError(f"{name} must fit in 32 bits, got {v}")
        if not (0 <= self.global_seed < 2**64):
            raise ValueError("global_seed must fit in 64 bits")

    def child(self, **kwargs) -> "RngKey":
        """Derived key with some fields replaced."""
        fields = dict(
            global_seed=self.global_seed,
            member_id=self.member_id,
            layer_id=self.layer_id,
            step_index=self.step_index,
            role=self.role,
        )
        fields.update(kwargs)
        return RngKey(**fields)

    def pack(self) -> tuple[int, int, int, int, int]:
        """Five u64 words, the on-disk representation."""
        return (
            self.global_seed,
            self.member_id,
            self.layer_id,
            self.step_index,
            int(self.role),
        )

    @classmethod
    def unpack(cls, words) -> "RngKey":
        s, m, l, t, r = (int(w) for w in words)
        return cls(s, m, l, t, Role(r))


def _philox_blocks(key: RngKey, n_blocks: int) -> np.ndarray:
    """Philox4x32-10 keystream.

    Counter layout: c0 = running block index, c1 = step_index,
    c2 = member_id, c3 = (role << 24) | layer_id.  The 64-bit seed is the
    Philox key.  Returns uint32 array of shape (n_blocks, 4).
    """
    k0 = np.uint32(key.global_seed & 0xFFFFFFFF)
    k1 = np.uint32((key.global_seed >> 32) & 0xFFFFFFFF)

    c0 = np.arange(n_blocks, dtype=np.uint32)
    c1 = np.full(n_blocks, key.step_index, dtype=np.uint32)
    c2 = np.full(n_blocks, key.member_id, dtype=np.uint32)
    c3 = np.full(n_blocks, (int(key.role) << 24) | key.layer_id, dtype=np.uint32)

    for _ in range(10):
        p0 = c0.astype(np.uint64) * _PHILOX_M0
        p1 = c2.astype(np.uint64) * _PHILOX_M1
        hi0 = (p0 >> np.uint64(32)).astype(np.uint32)
        lo0 = (p0 & _MASK32).astype(np.uint32)
        hi1 = (p1 >> np.uint64(32)).astype(np.uint32)
        lo1 = (p1 & _MASK32).astype(np.uint32)
        c0 = hi1 ^ c1 ^ k0
        c1 = lo1
        c2 = hi0 ^ c3 ^ k1
        c3 = lo0
        k0 = np.uint32(np.uint64(k0) + np.uint64(_PHILOX_W0) & _MASK32)
        k1 = np.uint32(np.uint64(k1) + np.uint64(_PHILOX_W1) & _MASK32)
    return np.stack([c0, c1, c2, c3], axis=1)


def uniform_stream(key: RngKey, n: int) -> np.ndarray:
    """n uniforms on (0, 1], float64, bit-identical for identical keys."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n == 0:
        return np.zeros(0)
    n_blocks = -(-n // 4)
    words = _philox_blocks(key, n_blocks).reshape(-1)[:n]
    # (x + 1) / 2^32 maps uint32 onto (0, 1]; excluding 0 keeps log() finite
    return (words.astype(np.float64) + 1.0) * (2.0**-32)


def gaussian_stream(key: RngKey, n: int) -> np.ndarray:
    """n standard-normal samples, float64.

    Box-Muller on consecutive uniform pairs; the sequence for (key, n) is
    a prefix of the sequence for (key, n + k), and identical keys always
    yield bit-identical output.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n == 0:
        return np.zeros(0)
    n_pairs = -(-n // 2)
    u = uniform_stream(key, 2 * n_pairs).reshape(-1, 2)
    r = np.sqrt(-2.0 * np.log(u[:, 0]))
    theta = (2.0 * np.pi) * u[:, 1]
    out = np.empty(2 * n_pairs)
    out[0::2] = r * np.cos(theta)
    out[1::2] = r * np.sin(theta)
    return out[:n]
