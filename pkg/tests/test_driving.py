import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quenched_asip import driving


def test_constant_window_negative_indices():
    sys = driving.constant("doubling")
    assert sys.parameter_window(-3, 3) == ["doubling"] * 7


def test_period_two():
    sys = driving.periodic(["beta2", "beta3"])
    assert sys.parameter_window(0, 3) == ["beta2", "beta3", "beta2", "beta3"]


def test_iid_frequencies():
    sys = driving.iid(["a", "b"], seed=42)
    sym = sys.symbols(0, 10_000)
    assert abs(sym.mean() - 0.5) < 0.02


def test_rotation_rule():
    alpha = (5 ** 0.5 - 1) / 2
    sys = driving.rotation(["a", "b", "c"], alpha)
    expected = [["a", "b", "c"][int(((i * alpha) % 1.0) * 3)] for i in range(-20, 21)]
    assert sys.parameter_window(-20, 20) == expected


def test_window_order_error():
    with pytest.raises(ValueError):
        driving.constant("a").parameter_window(3, 2)


@pytest.mark.parametrize("kw", [
    dict(kind="bogus", alphabet=("a",)),
    dict(kind="iid-bernoulli", alphabet=()),
    dict(kind="irrational-rotation", alphabet=("a", "b")),
    dict(kind="irrational-rotation", alphabet=("a", "b"), rotation_angle=1.5),
    dict(kind="finite-periodic", alphabet=("a",), period=0),
])
def test_invalid_systems(kw):
    with pytest.raises(ValueError):
        driving.DrivingSystem(**kw)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 64 - 1), i0=st.integers(-10 ** 12, 10 ** 12), n=st.integers(1, 64))
def test_iid_shift_compatible(seed, i0, n):
    sys = driving.iid(["a", "b", "c"], seed)
    w = sys.parameter_window(i0, i0 + n)
    assert sys.parameter_window(i0 + 1, i0 + n + 1)[:-1] == w[1:]
    assert sys.parameter_at(i0) == w[0]


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32), i=st.integers(-10 ** 6, 10 ** 6))
def test_iid_deterministic(seed, i):
    a = driving.iid(["a", "b"], seed)
    b = driving.iid(["a", "b"], seed)
    assert a.parameter_window(i, i + 20) == b.parameter_window(i, i + 20)


@settings(max_examples=30, deadline=None)
@given(period=st.integers(1, 7), i=st.integers(-1000, 1000))
def test_periodicity(period, i):
    sys = driving.DrivingSystem("finite-periodic", tuple("abcdefg"), period=period)
    assert sys.parameter_at(i + period) == sys.parameter_at(i)


def test_iid_neighbours_uncorrelated():
    sym = driving.iid(["a", "b"], seed=3).symbols(-50_000, 50_000).astype(float)
    r = np.corrcoef(sym[:-1], sym[1:])[0, 1]
    assert abs(r) < 4 / np.sqrt(sym.size)
