"""Forward-mode dual numbers checked against central finite differences."""

import numpy as np
import pytest

from tensegrity_nav import fmad

LANES = 3
H = 1e-6


def _fd(f, x, h=H):
    return (f(x + h) - f(x - h)) / (2.0 * h)


def _lift(x, lane=0):
    return fmad.seed_scalar(x, lane, LANES)


def test_seed_scalar_layout():
    d = fmad.seed_scalar(2.5, 1, LANES)
    assert fmad.value(d) == 2.5
    dot = fmad.tangent(d, LANES)
    assert dot.shape == (LANES,)
    assert dot[0] == 0.0 and dot[1] == 1.0 and dot[2] == 0.0


def test_value_tangent_on_plain_arrays():
    x = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(fmad.value(x), x)
    assert np.array_equal(fmad.tangent(x, LANES), np.zeros((LANES, 2, 3)))


def test_polynomial_derivative():
    f = lambda x: x * x * x - 4.0 * x + 1.0
    for x in np.linspace(-2.0, 2.0, 9):
        d = f(_lift(float(x)))
        assert fmad.value(d) == pytest.approx(f(x))
        assert fmad.tangent(d, LANES)[0] == pytest.approx(3 * x * x - 4, rel=1e-12)


def test_division_and_power():
    g = lambda x: (x + 2.0) / (x * x + 1.0) + x ** 3
    for x in [0.3, 1.7, -0.9]:
        d = g(_lift(x))
        # central differences carry ~1e-8 relative truncation error themselves
        assert fmad.tangent(d, LANES)[0] == pytest.approx(_fd(g, x), rel=1e-6)


def test_rtruediv():
    h = lambda x: 5.0 / x
    d = h(_lift(2.0))
    assert fmad.value(d) == 2.5
    assert fmad.tangent(d, LANES)[0] == pytest.approx(-5.0 / 4.0)


def test_scalar_dual_broadcasts_against_array():
    # a scalar dual combined with a matrix must broadcast its tangent too
    a = np.arange(12.0).reshape(3, 4) + 1.0
    d = _lift(2.0) * a
    assert d.shape == (3, 4)
    assert fmad.tangent(d, LANES).shape == (LANES, 3, 4)
    assert np.allclose(fmad.tangent(d, LANES)[0], a)
    assert np.allclose(fmad.tangent(d, LANES)[1], 0.0)


def test_array_dual_plus_scalar_dual():
    base = fmad.Dual(np.ones(4), np.zeros((LANES, 4)))
    s = _lift(3.0)
    out = base + s
    assert np.allclose(fmad.value(out), 4.0)
    assert np.allclose(fmad.tangent(out, LANES)[0], 1.0)


def test_comparisons_use_primal():
    d = _lift(2.0)
    assert (d > 1.0) and (d >= 2.0) and not (d < 0.0)
    arr = fmad.Dual(np.array([1.0, 3.0]), np.zeros((LANES, 2)))
    assert np.array_equal(arr > 2.0, np.array([False, True]))


def test_where_selects_tangent():
    x = _lift(1.5)
    lo = x * 2.0
    hi = x * 10.0
    picked = fmad.where(np.array(True), lo, hi)
    assert fmad.tangent(picked, LANES)[0] == pytest.approx(2.0)


def test_maximum_tie_takes_first():
    a = _lift(1.0)
    b = fmad.Dual(1.0, np.zeros(LANES))
    out = fmad.maximum(a, b)
    # equal primals: the first argument's tangent must win
    assert fmad.tangent(out, LANES)[0] == 1.0
    out2 = fmad.minimum(a, b)
    assert fmad.tangent(out2, LANES)[0] == 1.0


def test_maximum_fd_away_from_kink():
    f = lambda x: np.maximum(x * x, 1.0 - x)
    for x in [0.2, 0.9, 2.0, -3.0]:
        d = fmad.maximum(_lift(x) * _lift(x), 1.0 - _lift(x))
        assert fmad.tangent(d, LANES)[0] == pytest.approx(_fd(f, x), rel=1e-6)


def test_clip_inside_and_outside():
    inside = fmad.clip(_lift(0.5), 0.0, 1.0)
    assert fmad.tangent(inside, LANES)[0] == 1.0
    outside = fmad.clip(_lift(2.0), 0.0, 1.0)
    assert fmad.tangent(outside, LANES)[0] == 0.0


def test_sqrt_absolute_sign():
    d = fmad.sqrt(_lift(4.0))
    assert fmad.value(d) == 2.0
    assert fmad.tangent(d, LANES)[0] == pytest.approx(0.25)
    n = fmad.absolute(_lift(-3.0))
    assert fmad.value(n) == 3.0
    assert fmad.tangent(n, LANES)[0] == -1.0
    assert fmad.sign(_lift(-3.0)) == -1.0


def test_matmul_both_sides():
    rng = np.random.default_rng(7)
    m = rng.normal(size=(3, 3))
    v0 = rng.normal(size=3)

    def f(t):
        return m @ (v0 * t)

    t0 = 0.8
    dual_v = fmad.Dual(v0 * t0, np.stack([v0, np.zeros(3), np.zeros(3)]))
    out = m @ dual_v
    fd = _fd(lambda t: f(t), t0)
    assert np.allclose(fmad.tangent(out, LANES)[0], fd, atol=1e-6)

    out2 = dual_v @ m
    fd2 = _fd(lambda t: (v0 * t) @ m, t0)
    assert np.allclose(fmad.tangent(out2, LANES)[0], fd2, atol=1e-6)


def test_stack_and_concatenate():
    a = _lift(1.0) * np.ones(2)
    b = _lift(2.0) * np.ones(2)
    s = fmad.stack([a, b], axis=0)
    assert s.shape == (2, 2)
    assert fmad.tangent(s, LANES).shape == (LANES, 2, 2)
    # lane 0 tangent: d/dx of [x*1, 2x*1] at seeds... a seeded lane 0, b lane 0
    assert np.allclose(fmad.tangent(s, LANES)[0], [[1, 1], [1, 1]])
    c = fmad.concatenate([a, b], axis=-1)
    assert c.shape == (4,)
    s_last = fmad.stack([a, b], axis=-1)
    assert s_last.shape == (2, 2)


def test_getitem_setitem():
    d = fmad.Dual(np.arange(4.0), np.ones((LANES, 4)))
    sub = d[1:3]
    assert sub.shape == (2,)
    assert np.allclose(fmad.tangent(sub, LANES), 1.0)
    d[0] = 5.0
    assert fmad.value(d)[0] == 5.0
    assert np.allclose(fmad.tangent(d, LANES)[:, 0], 0.0)


def test_reductions_and_vector_helpers():
    rng = np.random.default_rng(11)
    for _ in range(20):
        a0 = rng.normal(size=(4, 3))
        b0 = rng.normal(size=(4, 3))
        t0 = rng.uniform(0.5, 1.5)

        def make(t):
            return a0 * t, b0 * (t * t)

        a = fmad.Dual(a0 * t0, np.stack([a0, np.zeros_like(a0), np.zeros_like(a0)]))
        b = fmad.Dual(b0 * t0 * t0,
                      np.stack([2 * t0 * b0, np.zeros_like(b0), np.zeros_like(b0)]))

        s = fmad.sum_(a * b)
        fd = _fd(lambda t: np.sum(make(t)[0] * make(t)[1]), t0)
        assert fmad.tangent(s, LANES)[0] == pytest.approx(fd, rel=1e-5)

        d = fmad.dot_last(a, b)
        fd_d = _fd(lambda t: np.sum(make(t)[0] * make(t)[1], axis=-1), t0)
        assert np.allclose(fmad.tangent(d, LANES)[0], fd_d, atol=1e-5)

        n = fmad.norm_last(a)
        fd_n = _fd(lambda t: np.linalg.norm(make(t)[0], axis=-1), t0)
        assert np.allclose(fmad.tangent(n, LANES)[0], fd_n, atol=1e-5)

        c = fmad.cross(a, b)
        fd_c = _fd(lambda t: np.cross(make(t)[0], make(t)[1]), t0)
        assert np.allclose(np.asarray(fmad.value(c)), np.cross(a0 * t0, b0 * t0 * t0),
                           atol=1e-12)
        assert np.allclose(fmad.tangent(c, LANES)[0], fd_c, atol=1e-5)


def test_multi_lane_independence():
    x = fmad.seed_scalar(1.2, 0, LANES)
    y = fmad.seed_scalar(0.7, 1, LANES)
    z = fmad.seed_scalar(-0.4, 2, LANES)
    out = x * y + y * z + z * x
    grad = fmad.tangent(out, LANES)
    assert grad[0] == pytest.approx(0.7 + (-0.4))   # d/dx = y + z
    assert grad[1] == pytest.approx(1.2 + (-0.4))   # d/dy = x + z
    assert grad[2] == pytest.approx(0.7 + 1.2)      # d/dz = y + x
