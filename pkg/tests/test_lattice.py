import math

import pytest

from fermidiag.lattice import (
    Momentum,
    ball_points,
    build_fermi_system,
    in_northern_half,
    transfer_set,
)


def brute_force_ball(radius):
    """Independent enumeration by a plain triple loop."""
    r = int(math.floor(radius)) + 1
    out = []
    for x in range(-r, r + 1):
        for y in range(-r, r + 1):
            for z in range(-r, r + 1):
                if x * x + y * y + z * z <= radius * radius:
                    out.append((x, y, z))
    return out


@pytest.mark.parametrize("k_fermi,expected", [(0.0, 1), (1.0, 7), (1.415, 19)])
def test_fermi_ball_counts(k_fermi, expected):
    sys = build_fermi_system(k_fermi, 1.0)
    assert sys.N == expected
    assert len(brute_force_ball(k_fermi)) == expected
    assert set((k.x, k.y, k.z) for k in sys.fermi_ball) == set(brute_force_ball(k_fermi))


def test_scaling_constants():
    sys = build_fermi_system(1.415, 1.0)
    assert sys.hbar == 19 ** (-1.0 / 3.0)
    assert sys.kappa == 1.415 * 19 ** (-1.0 / 3.0)


def test_fermi_ball_symmetries():
    ball = set(build_fermi_system(1.415, 1.0).fermi_ball)
    for k in ball:
        assert -k in ball
        assert Momentum(k.y, k.z, k.x) in ball
        assert Momentum(-k.x, k.y, k.z) in ball


@pytest.mark.parametrize(
    "k,expected",
    [
        ((0, 0, 1), True),
        ((0, 0, 0), False),
        ((1, 0, 0), True),
        ((-1, 0, 0), False),
        ((0, 1, 0), True),
        ((0, -1, 0), False),
        ((5, -2, 0), False),
        ((-3, 1, 0), True),
    ],
)
def test_northern_half_examples(k, expected):
    assert in_northern_half(Momentum(*k)) is expected


def test_northern_half_partitions_pairs():
    # exactly one of k, -k lies in the selected half-space
    for x in range(-3, 4):
        for y in range(-3, 4):
            for z in range(-3, 4):
                k = Momentum(x, y, z)
                if k.norm_sq == 0:
                    assert not in_northern_half(k)
                    continue
                assert in_northern_half(k) != in_northern_half(-k)


def test_transfer_set_radius_one():
    sys = build_fermi_system(1.0, 1.0)
    assert set(transfer_set(sys)) == {
        Momentum(0, 0, 1),
        Momentum(0, 1, 0),
        Momentum(1, 0, 0),
    }


def test_transfer_set_radius_half_is_empty():
    sys = build_fermi_system(1.0, 0.5)
    assert transfer_set(sys) == ()


def test_transfer_set_radius_one_and_a_half():
    sys = build_fermi_system(1.0, 1.5)
    ts = transfer_set(sys)
    assert len(ts) == 9
    expected = [
        k
        for k in (Momentum(*t) for t in brute_force_ball(1.5))
        if in_northern_half(k)
    ]
    assert set(ts) == set(expected)


def test_deterministic_order():
    pts = ball_points(2.0)
    assert pts == sorted(pts, key=lambda k: k.sort_key)
    assert pts == ball_points(2.0)


def test_momentum_arithmetic():
    a, b = Momentum(1, 2, 3), Momentum(-1, 0, 2)
    assert a + b == Momentum(0, 2, 5)
    assert a - b == Momentum(2, 2, 1)
    assert -a == Momentum(-1, -2, -3)
    assert a.dot((1.0, 1.0, 1.0)) == 6.0
    assert a.norm_sq == 14
    assert a.norm == pytest.approx(math.sqrt(14))


def test_invalid_parameters():
    with pytest.raises(ValueError):
        build_fermi_system(-1.0, 1.0)
    with pytest.raises(ValueError):
        build_fermi_system(1.0, 0.0)
