import numpy as np
import pytest

from noisecast.rng import RngKey, Role, gaussian_stream, uniform_stream


KEY = RngKey(global_seed=1234, member_id=3, layer_id=2, step_index=17, role=Role.LATENT)


def test_same_key_bit_identical():
    a = gaussian_stream(KEY, 1000)
    b = gaussian_stream(KEY, 1000)
    assert np.max(np.abs(a - b)) == 0.0


def test_prefix_property():
    short = gaussian_stream(KEY, 123)
    long = gaussian_stream(KEY, 1000)
    assert np.array_equal(short, long[:123])


def test_empty_and_negative():
    assert gaussian_stream(KEY, 0).size == 0
    with pytest.raises(ValueError):
        gaussian_stream(KEY, -1)


@pytest.mark.parametrize("field", ["member_id", "layer_id", "step_index", "role", "global_seed"])
def test_distinct_keys_uncorrelated(field):
    n = 100_000
    a = gaussian_stream(KEY, n)
    if field == "role":
        other = KEY.child(role=Role.PIXEL_NOISE)
    elif field == "global_seed":
        other = KEY.child(global_seed=999)
    else:
        other = KEY.child(**{field: getattr(KEY, field) + 1})
    b = gaussian_stream(other, n)
    rho = np.corrcoef(a, b)[0, 1]
    assert abs(rho) < 0.05
    assert np.any(a != b)


def test_moments():
    n = 1_000_000
    x = gaussian_stream(KEY, n)
    assert abs(x.mean()) < 4.0 / np.sqrt(n)
    assert abs(x.var() - 1.0) < 0.01


def test_uniform_range():
    u = uniform_stream(KEY, 100_000)
    assert u.min() > 0.0 and u.max() <= 1.0
    assert abs(u.mean() - 0.5) < 0.01


def test_key_validation():
    with pytest.raises(ValueError):
        RngKey(global_seed=-1)
    with pytest.raises(ValueError):
        RngKey(global_seed=0, member_id=2**32)


def test_pack_unpack_roundtrip():
    assert RngKey.unpack(KEY.pack()) == KEY
