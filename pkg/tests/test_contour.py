import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from matscat.contour import argument_count, axis_minima, cauchy_rectangle, pole_order_spread, residue
from matscat.errors import ContourError


def test_residue_simple_pole():
    c = 0.3 + 1.2j
    fn = lambda z: 3.0 / (z - c) + np.exp(z)
    r = residue(fn, c, 0.4)
    assert abs(r.value - 3.0) < 1e-12
    assert r.nodes >= 128


def test_residue_matrix_valued():
    M = np.array([[1.0, 2j], [-2j, 5.0]])
    fn = lambda z: M[None] / (z - 1j)[:, None, None] + np.eye(2)[None] * z[:, None, None] ** 2
    r = residue(fn, 1j, 0.5)
    assert np.allclose(r.value, M, atol=1e-12)


def test_residue_rejects_bad_radius():
    with pytest.raises(ContourError):
        residue(lambda z: 1 / z, 0j, 0.0)


def test_pole_order_spread():
    simple = pole_order_spread(lambda z: 1 / (z - 1j) + 1 / (z - 3j), 1j, 0.4)
    double = pole_order_spread(lambda z: 1 / (z - 1j) ** 2, 1j, 0.4)
    assert simple[2] < simple[0] / 3
    assert double[2] > double[0]


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.floats(-0.9, 0.9), st.floats(0.1, 1.9)), min_size=0, max_size=4))
def test_argument_count_polynomial(roots):
    zs = [complex(a, b) for a, b in roots]
    if any(abs(z - w) < 1e-3 for i, z in enumerate(zs) for w in zs[:i]):
        return
    fn = lambda k: np.prod([k - z for z in zs], axis=0) * np.ones_like(k) + 0 * k
    assert argument_count(fn, (-1, 1), (0, 2)) == len(zs)


def test_argument_count_excludes_outside_zero():
    fn = lambda k: (k - 0.5j) * (k - 3j) * (k + 2)
    assert argument_count(fn, (-1, 1), (0.1, 2)) == 1


def test_cauchy_rectangle_entire_function():
    fn = lambda k: np.stack([np.exp(1j * k), np.sin(k) * k], axis=-1)
    zs = np.array([0.2 - 0.3j, -0.4 - 0.1j, 0.5 - 0.45j, 0.95 - 0.02j])
    got = cauchy_rectangle(fn, (-1, 1), (-0.5, 0.0), zs)
    assert np.allclose(got, fn(zs), atol=1e-12)
    with pytest.raises(ContourError):
        cauchy_rectangle(fn, (-1, 1), (-0.5, 0.0), [2.0])


def test_axis_minima():
    g = lambda x: np.abs(np.sin(3 * x))
    mins = axis_minima(g, 0.6, 2.5, n=50)
    assert np.allclose([x for x, _ in mins], [np.pi / 3, 2 * np.pi / 3], atol=1e-7)
    # a decreasing start counts as an endpoint minimum
    assert axis_minima(lambda x: x, 0.0, 1.0, n=10)[0][0] == pytest.approx(0.0, abs=1e-6)
