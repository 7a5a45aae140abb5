"""Dataset generation, on-disk format, and split handling.

File layout (little-endian):

    magic  b"NCDS"
    u32    version = 1
    u64    header length in bytes
    header structured text (key: value lines; config, seed, counts)
    records, fixed size, one per sample:
        u64 x5   generator RngKey (seed, trajectory, layer, stride, role)
        u32      trajectory id
        u32      stride index
        f32      state at t,   (V, n, n) row-major
        f32      state at t+1, (V, n, n) row-major

A structured-text manifest next to the file records counts, split
boundaries, and SHA-256 checksums.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from .dynamics import Simulator, SystemConfig
from .rng import RngKey, Role

__all__ = ["DatasetWriter", "Dataset", "generate_dataset", "make_splits"]

MAGIC = b"NCDS"
VERSION = 1


def _sha256(path: str, skip: int = 0) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        f.seek(skip)
        while True:
            chunk = f.read(1 << 20)
            if not chunk:
                break
            h.update(chunk)
    return h.hexdigest()


@dataclass
class _Layout:
    n_vars: int
    grid: int

    @property
    def state_bytes(self) -> int:
        return self.n_vars * self.grid * self.grid * 4

    @property
    def record_bytes(self) -> int:
        return 5 * 8 + 2 * 4 + 2 * self.state_bytes


class DatasetWriter:
    """Writes records at fixed offsets so trajectories end up contiguous
    (trajectory-major) even though generation runs all trajectories in
    lockstep, stride by stride."""

    def __init__(self, path: str, config: SystemConfig, seed: int):
        self.path = path
        self.config = config
        self.seed = seed
        self.layout = _Layout(config.n_vars, config.grid)
        self.count = 0
        self._records_by_traj: dict[int, int] = {}
        header = dict(config=config.to_dict(), seed=seed)
        htext = json.dumps(header, sort_keys=True).encode()
        self._f = open(path, "wb")
        self._f.write(MAGIC)
        self._f.write(np.uint32(VERSION).tobytes())
        self._f.write(np.uint64(len(htext)).tobytes())
        self._f.write(htext)
        self._data_offset = self._f.tell()

    def add(self, key: RngKey, traj: int, stride: int,
            state_t: np.ndarray, state_t1: np.ndarray, record_index: int | None = None):
        for s in (state_t, state_t1):
            assert s.shape == (self.layout.n_vars, self.layout.grid, self.layout.grid)
        buf = bytearray()
        buf += np.asarray(key.pack(), dtype="<u8").tobytes()
        buf += np.asarray([traj, stride], dtype="<u4").tobytes()
        buf += state_t.astype("<f4").tobytes()
        buf += state_t1.astype("<f4").tobytes()
        if record_index is not None:
            self._f.seek(self._data_offset + record_index * self.layout.record_bytes)
        self._f.write(bytes(buf))
        self.count += 1
        self._records_by_traj[traj] = self._records_by_traj.get(traj, 0) + 1

    def close(self, split_fractions=(0.8, 0.1, 0.1)) -> dict:
        self._f.close()
        splits = make_splits(sorted(self._records_by_traj.items()), split_fractions)
        manifest = {
            "format": "noisecast-dataset",
            "version": VERSION,
            "records": self.count,
            "grid": self.layout.grid,
            "n_vars": self.layout.n_vars,
            "seed": self.seed,
            "stride": self.config.stride,
            "splits": splits,
            "sha256": _sha256(self.path),
        }
        with open(self.path + ".manifest.json", "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
        return manifest


def make_splits(records_by_traj: list[tuple[int, int]], fractions) -> dict:
    """Assign whole trajectories to contiguous train/val/test blocks.

    Trajectories are independent by construction, so splitting at
    trajectory boundaries guarantees zero leakage; within the file each
    split is one contiguous block of records.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {fractions}")
    total = sum(n for _, n in records_by_traj)
    if total < len(fractions):
        raise ValueError("too few records to split")
    names = ["train", "val", "test"][: len(fractions)]
    targets = np.cumsum([f * total for f in fractions])
    splits = {}
    start = 0
    cursor = 0
    ti = 0
    for name, tgt in zip(names, targets):
        count = 0
        while ti < len(records_by_traj) and (cursor + records_by_traj[ti][1] <= tgt + 1e-6
                                             or name == names[-1]):
            cursor += records_by_traj[ti][1]
            count += records_by_traj[ti][1]
            ti += 1
        splits[name] = [int(start), int(start + count)]
        start += count
    if ti < len(records_by_traj):  # leftovers go to the last split
        extra = sum(n for _, n in records_by_traj[ti:])
        splits[names[-1]][1] += int(extra)
    return splits


class Dataset:
    """Memory-mapped reader."""

    def __init__(self, path: str):
        self.path = path
        with open(path, "rb") as f:
            magic = f.read(4)
            if magic != MAGIC:
                raise ValueError(f"{path}: not a dataset file (magic {magic!r})")
            version = int(np.frombuffer(f.read(4), "<u4")[0])
            if version != VERSION:
                raise ValueError(f"{path}: unsupported dataset version {version}")
            hlen = int(np.frombuffer(f.read(8), "<u8")[0])
            header = json.loads(f.read(hlen).decode())
            self._data_offset = 4 + 4 + 8 + hlen
        self.config = SystemConfig.from_dict(header["config"])
        self.seed = header["seed"]
        self.layout = _Layout(self.config.n_vars, self.config.grid)
        size = os.path.getsize(path) - self._data_offset
        if size % self.layout.record_bytes:
            raise ValueError(f"{path}: truncated record region")
        self.count = size // self.layout.record_bytes
        self._mm = np.memmap(path, mode="r", offset=self._data_offset, dtype=np.uint8)
        mpath = path + ".manifest.json"
        self.manifest = None
        if os.path.exists(mpath):
            with open(mpath) as f:
                self.manifest = json.load(f)

    def splits(self) -> dict:
        if self.manifest is None:
            raise ValueError("no manifest next to dataset file")
        return self.manifest["splits"]

    def split_indices(self, name: str) -> range:
        lo, hi = self.splits()[name]
        return range(lo, hi)

    def record(self, i: int):
        if not (0 <= i < self.count):
            raise IndexError(i)
        rb = self.layout.record_bytes
        raw = self._mm[i * rb : (i + 1) * rb]
        key = RngKey.unpack(np.frombuffer(raw[:40], "<u8"))
        traj, stride = np.frombuffer(raw[40:48], "<u4")
        sb = self.layout.state_bytes
        v, n = self.layout.n_vars, self.layout.grid
        x = np.frombuffer(raw[48 : 48 + sb], "<f4").reshape(v, n, n)
        y = np.frombuffer(raw[48 + sb : 48 + 2 * sb], "<f4").reshape(v, n, n)
        return key, int(traj), int(stride), x, y

    def pair(self, i: int):
        _, _, _, x, y = self.record(i)
        return x, y

    def batch(self, indices):
        xs, ys = [], []
        for i in indices:
            x, y = self.pair(i)
            xs.append(x)
            ys.append(y)
        return np.stack(xs), np.stack(ys)

    def trajectory_segment(self, start_index: int, length: int):
        """Consecutive truth states starting at a record's input state.

        Requires the records to be consecutive strides of one trajectory;
        returns (length+1, V, n, n)."""
        _, traj0, stride0, x0, _ = self.record(start_index)
        states = [x0]
        for off in range(length):
            _, traj, stride, _, y = self.record(start_index + off)
            if traj != traj0 or stride != stride0 + off:
                raise ValueError("records are not a contiguous trajectory segment")
            states.append(y)
        return np.stack(states)


def generate_dataset(path: str, config: SystemConfig, seed: int,
                     n_trajectories: int = 24, samples_per_traj: int = 1000,
                     fractions=(20 / 24, 2 / 24, 2 / 24), progress=None) -> dict:
    """Integrate trajectories in lockstep and write the dataset file.

    Spin-up strides are discarded; the tracer is redrawn after spin-up
    (a passive tracer homogenizes over the long spin-up integration).
    """
    sim = Simulator(config, seed, list(range(n_trajectories)))
    sim.init_state()
    for s in range(config.spinup_strides):
        sim.step_stride()
        if progress and s % 200 == 0:
            progress(f"spin-up stride {s}/{config.spinup_strides}")
    sim.reset_tracer()

    writer = DatasetWriter(path, config, seed)
    prev = sim.states()
    prev_stride = sim.stride_index
    for s in range(samples_per_traj):
        sim.step_stride()
        cur = sim.states()
        for b in range(n_trajectories):
            key = RngKey(seed, member_id=b, layer_id=0, step_index=prev_stride,
                         role=Role.DATA_FORCING)
            writer.add(key, b, prev_stride, prev[b], cur[b],
                       record_index=b * samples_per_traj + s)
        prev = cur
        prev_stride = sim.stride_index
        if progress and s % 100 == 0:
            progress(f"sampling stride {s}/{samples_per_traj}")
    return writer.close(fractions)
