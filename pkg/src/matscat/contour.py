"""Contour quadrature: residues on circles, argument-principle counts, Cauchy integrals.

All routines take vectorised callables ``fn(ks) -> array`` whose leading axis
matches ``ks``; matrix-valued functions return shape ``(len(ks), n, n)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.optimize import minimize_scalar

from .errors import ContourError


@dataclass(frozen=True, eq=False)
class Residue:
    """Trapezoid estimate of (1/2 pi i) times the contour integral over a circle."""

    value: np.ndarray
    center: complex
    radius: float
    nodes: int
    change: float


def circle_points(center: complex, radius: float, m: int, offset: float = 0.0) -> np.ndarray:
    theta = 2 * np.pi * (np.arange(m) + offset) / m
    return center + radius * np.exp(1j * theta)


def residue(fn, center: complex, radius: float, *, m: int = 64, tol: float = 1e-9,
            max_m: int = 2048) -> Residue:
    """Residue of ``fn`` at ``center`` by the periodic trapezoid rule.

    The node count starts at ``m`` and doubles (reusing previous nodes) until
    two successive estimates differ by less than ``tol`` relative to the
    larger of the estimate norm and one.
    """
    if radius <= 0:
        raise ContourError("contour radius must be positive")
    z = circle_points(center, radius, m)
    acc = np.tensordot(z - center, np.asarray(fn(z)), axes=(0, 0))
    value = acc / m
    change = math.inf
    while m < max_m:
        z = circle_points(center, radius, m, offset=0.5)
        acc = acc + np.tensordot(z - center, np.asarray(fn(z)), axes=(0, 0))
        m *= 2
        new = acc / m
        change = float(np.max(np.abs(new - value)))
        value = new
        if change <= tol * max(1.0, float(np.max(np.abs(value)))):
            break
    return Residue(np.asarray(value), complex(center), float(radius), m, change)


def pole_order_spread(fn, center: complex, radius: float, *, m: int = 32) -> list[float]:
    """Spread of (k - center) fn(k) on circles of radius r, r/2, r/4.

    For a simple pole the spread shrinks roughly in proportion to the radius;
    for a higher-order pole it grows.
    """
    out = []
    for r in (radius, radius / 2, radius / 4):
        z = circle_points(center, r, m)
        vals = np.asarray(fn(z))
        g = (z - center).reshape((m,) + (1,) * (vals.ndim - 1)) * vals
        out.append(float(np.max(np.abs(g - g.mean(axis=0)))))
    return out


def _edge_phase(fn, a: complex, b: complex, n: int, max_depth: int = 12) -> float:
    """Total change of arg fn along the segment a -> b, refining where the phase jumps."""
    ts = np.linspace(0.0, 1.0, n + 1)
    vals = np.asarray(fn(a + (b - a) * ts), dtype=complex)
    total = 0.0
    stack = [(ts[i], ts[i + 1], vals[i], vals[i + 1], 0) for i in range(n)]
    while stack:
        t0, t1, v0, v1, depth = stack.pop()
        if v0 == 0 or v1 == 0:
            raise ContourError("function vanishes on the contour")
        d = float(np.angle(v1 / v0))
        if abs(d) < np.pi / 4 or depth >= max_depth:
            if depth >= max_depth and abs(d) > np.pi / 2:
                raise ContourError("phase unresolved on contour (zero too close to the edge?)")
            total += d
            continue
        tm = 0.5 * (t0 + t1)
        vm = complex(np.asarray(fn(np.array([a + (b - a) * tm])))[0])
        stack.append((t0, tm, v0, vm, depth + 1))
        stack.append((tm, t1, vm, v1, depth + 1))
    return total


def argument_count(fn, x_range: tuple[float, float], y_range: tuple[float, float], *, n: int = 48) -> int:
    """Number of zeros (with multiplicity) of scalar ``fn`` inside a rectangle."""
    (x0, x1), (y0, y1) = x_range, y_range
    corners = [complex(x0, y0), complex(x1, y0), complex(x1, y1), complex(x0, y1)]
    total = sum(_edge_phase(fn, corners[i], corners[(i + 1) % 4], n) for i in range(4))
    count = total / (2 * np.pi)
    if abs(count - round(count)) > 0.1:
        raise ContourError(f"winding number {count:.3f} is not an integer")
    return int(round(count))


def cauchy_rectangle(fn, x_range: tuple[float, float], y_range: tuple[float, float], zs, *,
                     n: int = 64):
    """Evaluate fn at interior points ``zs`` from its boundary values (Cauchy's formula).

    Each edge uses ``n``-point Gauss-Legendre quadrature.  The quadrature
    sum is divided by the same rule applied to the constant 1 (barycentric
    form), which keeps points close to the boundary accurate.  ``fn``
    returns arrays with leading axis matching its argument.
    """
    zs = np.atleast_1d(np.asarray(zs, dtype=complex))
    (x0, x1), (y0, y1) = x_range, y_range
    if np.any((zs.real <= x0) | (zs.real >= x1) | (zs.imag <= y0) | (zs.imag >= y1)):
        raise ContourError("evaluation points must lie strictly inside the rectangle")
    t, w = leggauss(n)
    corners = [complex(x0, y0), complex(x1, y0), complex(x1, y1), complex(x0, y1)]
    nodes, weights = [], []
    for i in range(4):
        a, b = corners[i], corners[(i + 1) % 4]
        nodes.append(a + (b - a) * (t + 1) / 2)
        weights.append((b - a) / 2 * w)
    nodes = np.concatenate(nodes)
    weights = np.concatenate(weights)
    vals = np.asarray(fn(nodes))
    kern = weights[None, :] / (nodes[None, :] - zs[:, None])
    num = np.tensordot(kern, vals, axes=(1, 0))
    den = kern.sum(axis=1).reshape((-1,) + (1,) * (num.ndim - 1))
    return num / den


def axis_minima(g, lo: float, hi: float, *, n: int = 200, xatol: float = 1e-13, rel_dip: float = 1e-9):
    """Refined local minima of a real function on [lo, hi].

    ``g`` is vectorised.  A coarse scan locates candidate minima, which are
    then polished with bounded Brent minimisation.  A candidate must lie
    below its lower neighbour by more than ``rel_dip`` relative, so that
    rounding noise on flat stretches is ignored.  Returns a list of
    ``(x, g(x))`` pairs in increasing x.
    """
    xs = np.linspace(lo, hi, n)
    vals = np.asarray(g(xs), dtype=float)
    out = []
    for i in range(n):
        left = vals[i - 1] if i > 0 else math.inf
        right = vals[i + 1] if i < n - 1 else math.inf
        if vals[i] <= left and vals[i] < right and min(left, right) - vals[i] > rel_dip * abs(vals[i]):
            a, b = xs[max(i - 1, 0)], xs[min(i + 1, n - 1)]
            res = minimize_scalar(lambda x: float(np.asarray(g(np.array([x])))[0]), bounds=(a, b),
                                  method="bounded", options={"xatol": xatol, "maxiter": 200})
            out.append((float(res.x), float(res.fun)))
    return out
