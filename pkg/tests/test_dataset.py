"""Dataset file-format roundtrip, split hygiene, and regeneration tests."""

import hashlib
import json

import numpy as np
import pytest

from noisecast.dataset import Dataset, DatasetWriter, generate_dataset, make_splits
from noisecast.dynamics import SystemConfig
from noisecast.rng import RngKey, Role


def _tiny_config():
    return SystemConfig(grid=32, dt=0.01, stride=5, spinup_strides=3)


def _generate(tmp_path, name="data.bin", seed=123, n_traj=4, samples=12,
              fractions=(0.5, 0.25, 0.25)):
    path = str(tmp_path / name)
    manifest = generate_dataset(path, _tiny_config(), seed=seed,
                                n_trajectories=n_traj, samples_per_traj=samples,
                                fractions=fractions)
    return path, manifest


def test_roundtrip_counts_shapes_and_keys(tmp_path):
    path, manifest = _generate(tmp_path)
    ds = Dataset(path)
    assert ds.count == 48 == manifest["records"]
    key, traj, stride, x, y = ds.record(0)
    assert x.shape == y.shape == (3, 32, 32)
    assert x.dtype == np.float32
    assert key.role == Role.DATA_FORCING
    assert key.member_id == traj
    assert key.step_index == stride
    # trajectory-major layout: record i belongs to trajectory i // samples
    for i in range(ds.count):
        _, traj, stride, _, _ = ds.record(i)
        assert traj == i // 12
        assert stride == 3 + (i % 12)  # strides resume after spin-up


def test_consecutive_records_chain(tmp_path):
    path, _ = _generate(tmp_path)
    ds = Dataset(path)
    for i in range(11):
        _, _, _, _, y = ds.record(i)
        _, _, _, x_next, _ = ds.record(i + 1)
        assert np.array_equal(y, x_next)


def test_regeneration_bytewise_identical(tmp_path):
    p1, m1 = _generate(tmp_path, "a.bin")
    p2, m2 = _generate(tmp_path, "b.bin")
    assert m1["sha256"] == m2["sha256"]
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_manifest_checksum_matches_file(tmp_path):
    path, manifest = _generate(tmp_path)
    actual = hashlib.sha256(open(path, "rb").read()).hexdigest()
    assert manifest["sha256"] == actual
    with open(path + ".manifest.json") as f:
        assert json.load(f) == manifest


def test_splits_cover_file_without_overlap(tmp_path):
    path, manifest = _generate(tmp_path)
    splits = Dataset(path).splits()
    assert splits == manifest["splits"]
    bounds = [splits[k] for k in ("train", "val", "test")]
    assert bounds[0][0] == 0
    assert bounds[-1][1] == 48
    for (_, hi), (lo, _) in zip(bounds, bounds[1:]):
        assert hi == lo
    # whole-trajectory splits: boundaries fall on trajectory edges
    for lo, hi in bounds:
        assert lo % 12 == 0 and hi % 12 == 0


def test_make_splits_example():
    counts = [(t, 1000) for t in range(10)]
    splits = make_splits(counts, (0.8, 0.1, 0.1))
    assert splits == {"train": [0, 8000], "val": [8000, 9000], "test": [9000, 10000]}


def test_make_splits_leftovers_go_to_last():
    counts = [(t, 7) for t in range(5)]
    splits = make_splits(counts, (0.5, 0.3, 0.2))
    assert splits["train"][1] % 7 == 0
    assert splits["test"][1] == 35
    total = sum(hi - lo for lo, hi in splits.values())
    assert total == 35


def test_make_splits_rejects_bad_fractions():
    with pytest.raises(ValueError):
        make_splits([(0, 10)], (0.5, 0.4))


def test_trajectory_segment_contiguous_and_guarded(tmp_path):
    path, _ = _generate(tmp_path)
    ds = Dataset(path)
    seg = ds.trajectory_segment(2, 4)
    assert seg.shape == (5, 3, 32, 32)
    for off in range(4):
        _, _, _, x, y = ds.record(2 + off)
        assert np.array_equal(seg[off], x)
        assert np.array_equal(seg[off + 1], y)
    with pytest.raises(ValueError):
        ds.trajectory_segment(10, 4)  # crosses a trajectory boundary


def test_batch_reader(tmp_path):
    path, _ = _generate(tmp_path)
    ds = Dataset(path)
    xs, ys = ds.batch([0, 5, 17])
    assert xs.shape == ys.shape == (3, 3, 32, 32)
    assert np.array_equal(xs[1], ds.pair(5)[0])


def test_reader_rejects_wrong_magic(tmp_path):
    path = str(tmp_path / "junk.bin")
    with open(path, "wb") as f:
        f.write(b"XXXX" + b"\0" * 64)
    with pytest.raises(ValueError, match="magic"):
        Dataset(path)


def test_split_indices_named_ranges(tmp_path):
    path, _ = _generate(tmp_path)
    ds = Dataset(path)
    idx = ds.split_indices("val")
    assert list(idx) == list(range(*ds.splits()["val"]))
