"""Jost solutions of -f'' + V f = k^2 f and matrix Wronskians.

``f_plus(k, x)`` behaves like ``exp(ikx) I`` as x -> +inf and ``f_minus(k, x)``
like ``exp(-ikx) I`` as x -> -inf.  Two methods are used:

* ``ode-backward`` (Im k >= 0): integrate inward from the top of the support
  in the interaction picture ``f = e^{ik(x-x0)} a + e^{-ik(x-x0)} b``.  The
  unwanted mode decays in the integration direction, so this is stable, and
  the amplitudes ``a, b`` stay slowly varying at large real k.
* ``volterra`` (any k, mandatory for -gamma < Im k < 0): Neumann iteration
  of the Volterra equation on a composite trapezoid grid, with Richardson
  extrapolation over a step-halved grid.

``f_minus`` is computed as the mirror image of ``f_plus`` for V(-x).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ContinuationError, ScatteringError, VolterraDivergence
from .potentials import DecayCertificate, PotentialModel


@dataclass(frozen=True)
class SolverOptions:
    """Numerical knobs shared by the Jost solvers."""

    rtol: float = 1e-12
    volterra_step: float | None = None
    volterra_tol: float = 1e-13
    max_iter: int = 200
    max_nodes: int = 1200
    batch: int = 128
    threads: int = 1


DEFAULT_OPTIONS = SolverOptions()


@dataclass(frozen=True)
class WaveNumber:
    k: complex
    region: str


def classify(k: complex, gamma: float | None = None) -> str:
    """Return 'real-axis', 'upper-half-plane' or 'lower-strip'."""
    k = complex(k)
    if k.imag > 0:
        return "upper-half-plane"
    if k.imag == 0:
        return "real-axis"
    if gamma is not None and -k.imag >= gamma:
        raise ContinuationError(f"Im k = {k.imag:g} is outside the strip Im k > -{gamma:g}")
    return "lower-strip"


def wavenumber(k: complex, cert: DecayCertificate | None = None) -> WaveNumber:
    if complex(k) == 0:
        raise ValueError("k = 0 is not supported")
    region = classify(k, None if cert is None else cert.gamma)
    if region == "lower-strip" and cert is not None and not cert.expmoment_finite:
        raise ContinuationError(f"no finite exponential moment at gamma={cert.gamma}")
    return WaveNumber(complex(k), region)


@dataclass(frozen=True, eq=False)
class JostEvaluation:
    """Value and x-derivative of a Jost solution at (k, x)."""

    k: complex
    x: float
    side: str
    f: np.ndarray
    fprime: np.ndarray
    method: str
    err_est: float
    region: str


# --------------------------------------------------------------------------- helpers


def _sin_over_k(k: complex, d):
    """sin(k d)/k with a series near k d = 0."""
    z = k * d
    small = np.abs(z) < 1e-4
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(small, d * (1 - z * z / 6), np.sin(z) / k)
    return out


def _free_step(k, d, f, fp):
    """Propagate (f, f') across a potential-free interval of signed length d."""
    c = np.cos(k * d)[..., None, None]
    s = np.sin(k * d)[..., None, None]
    sk = _sin_over_k(k, d)[..., None, None]
    kk = np.asarray(k)[..., None, None]
    return c * f + sk * fp, -kk * s * f + c * fp


def effective_support(model: PotentialModel, cert: DecayCertificate):
    """Interval outside of which V is treated as zero (truncated at cert.x_max)."""
    if model.is_zero:
        return None
    lo, hi = model.support
    if not math.isfinite(hi):
        hi = cert.x_max
    if not math.isfinite(lo):
        lo = -cert.x_max
    if model.line == "half":
        lo = max(lo, 0.0)
    if hi <= lo:
        return None
    return lo, hi


def _check_k(ks):
    ks = np.atleast_1d(np.asarray(ks, dtype=complex))
    if np.any(ks == 0):
        raise ValueError("k = 0 is not supported")
    return ks


def _require_strip(ks, cert: DecayCertificate):
    worst = -float(np.min(ks.imag)) if ks.size else 0.0
    if worst <= 0:
        return
    if not cert.expmoment_finite:
        raise ContinuationError(f"Im k < 0 requested but exponential moment at gamma={cert.gamma} is infinite")
    if worst >= cert.gamma:
        raise ContinuationError(f"Im k = {-worst:g} outside the certified strip Im k > -{cert.gamma:g}")


# --------------------------------------------------------------------------- ODE


def _ode_segment(model, ks, x0, x1, f, fp, rtol, gram=None):
    """Integrate from x0 to x1 on a segment where V is smooth.

    Returns (f, fp, gram) at x1; ``gram`` accumulates int_{x1}^{x0} f^H f dx
    when integrating downward.
    """
    nk, n = f.shape[0], f.shape[-1]
    kk = ks[:, None, None]
    a0 = 0.5 * (f + fp / (1j * kk))
    b0 = 0.5 * (f - fp / (1j * kk))
    seg_lo, seg_hi = min(x0, x1), max(x0, x1)
    core = nk * 2 * n * n
    half = 1.0 / (2j * kk)

    def rhs(x, y):
        Y = y[:core].reshape(nk, 2, n, n)
        side = -1 if x >= seg_hi else (1 if x <= seg_lo else 0)
        V = model.evaluate(x, side)
        E = np.exp(1j * kk * (x - x0))
        ff = E * Y[:, 0] + Y[:, 1] / E
        Vf = np.matmul(V, ff) * half
        out = np.empty((nk, 2, n, n), dtype=complex)
        out[:, 0] = Vf / E
        out[:, 1] = -Vf * E
        if gram is None:
            return out.ravel()
        dG = -np.matmul(np.conj(np.swapaxes(ff, -1, -2)), ff)
        return np.concatenate([out.ravel(), dG.ravel()])

    scale = np.maximum(np.abs(a0).max(axis=(1, 2)), np.abs(b0).max(axis=(1, 2)))
    scale = np.maximum(scale, 1e-300)
    atol = np.repeat(scale * rtol * 1e-3, 2 * n * n)
    y0 = np.concatenate([a0[:, None], b0[:, None]], axis=1).ravel()
    if gram is not None:
        y0 = np.concatenate([y0, gram.ravel()])
        atol = np.concatenate([atol, np.repeat(scale**2 * rtol * 1e-3 * abs(x1 - x0), n * n)])
    sol = solve_ivp(rhs, (x0, x1), y0, method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        raise ScatteringError(f"ODE integration failed on [{seg_lo:g}, {seg_hi:g}]: {sol.message}")
    y = sol.y[:, -1]
    Y = y[:core].reshape(nk, 2, n, n)
    E = np.exp(1j * kk * (x1 - x0))
    f1 = E * Y[:, 0] + Y[:, 1] / E
    fp1 = 1j * kk * (E * Y[:, 0] - Y[:, 1] / E)
    g1 = None if gram is None else y[core:].reshape(nk, n, n)
    return f1, fp1, g1


def _ode_plus_batch(model, cert, ks, xs, rtol, gram=False):
    nk, nx, n = len(ks), len(xs), model.n
    f_out = np.empty((nk, nx, n, n), dtype=complex)
    fp_out = np.empty_like(f_out)
    eye = np.eye(n)
    supp = effective_support(model, cert)
    kk = ks[:, None, None]
    top = supp[1] if supp else 0.0
    f = np.exp(1j * kk * top) * eye
    fp = 1j * kk * f
    G = None
    if gram:
        kap = ks.imag
        if np.any(kap <= 0):
            raise ValueError("Gram integrals need Im k > 0")
        G = (np.exp(-2 * kap * top) / (2 * kap))[:, None, None] * eye

    above = xs >= top
    if np.any(above):
        e = np.exp(1j * ks[:, None] * xs[None, above])[..., None, None]
        f_out[:, above] = e * eye
        fp_out[:, above] = 1j * ks[:, None, None, None] * e * eye
    below = np.sort(np.unique(xs[~above]))[::-1]
    if below.size == 0:
        return f_out, fp_out, G

    lo_eff = supp[0] if supp else top
    stops = set(below.tolist())
    if supp:
        stops.update(p for p in model.breakpoints() if below[-1] < p < top)
        if below[-1] < lo_eff < top:
            stops.add(lo_eff)
        max_im = float(np.max(np.abs(ks.imag))) if nk else 0.0
        chunk = 2.0 if max_im <= 5 else 10.0 / max_im
        a = top
        while a - chunk > max(below[-1], lo_eff):
            a -= chunk
            stops.add(a)
    stops = sorted(stops, reverse=True)

    x_cur = top
    values = {}
    for x_next in stops:
        if x_next >= x_cur:
            values[x_next] = (f, fp)
            continue
        if not supp or x_cur <= lo_eff or model.vanishes_on(x_next, x_cur):
            f, fp = _free_step(ks, np.full(nk, x_next - x_cur), f, fp)
            if G is not None:
                G = G + _free_gram(ks, f, fp, x_cur - x_next)
        else:
            f, fp, G = _ode_segment(model, ks, x_cur, x_next, f, fp, rtol, G)
        x_cur = x_next
        values[x_next] = (f, fp)
    for j, x in enumerate(xs):
        if not above[j]:
            f_out[:, j], fp_out[:, j] = values[float(x)]
    return f_out, fp_out, G


def _free_gram(ks, f, fp, length):
    """int over [x, x+length] of f^H f for free propagation starting from (f, fp) at x."""
    from numpy.polynomial.legendre import leggauss

    t, w = leggauss(24)
    t = 0.5 * length * (t + 1)
    w = 0.5 * length * w
    acc = 0
    for tj, wj in zip(t, w):
        g, _ = _free_step(ks, np.full(len(ks), tj), f, fp)
        acc = acc + wj * np.matmul(np.conj(np.swapaxes(g, -1, -2)), g)
    return acc


# --------------------------------------------------------------------------- Volterra


def _composite_grid(stops, step, factor):
    nodes, sides, stop_index = [], [], {}
    for s0, s1 in zip(stops[:-1], stops[1:]):
        m = max(1, int(math.ceil((s1 - s0) / step - 1e-9))) * factor
        seg = s0 + (s1 - s0) * np.arange(m + 1) / m
        stop_index.setdefault(s0, len(nodes))
        side = np.zeros(m + 1, dtype=int)
        side[0], side[-1] = 1, -1
        nodes.extend(seg.tolist())
        sides.extend(side.tolist())
    stop_index.setdefault(stops[-1], len(nodes) - 1)
    return np.asarray(nodes), np.asarray(sides), stop_index


def _volterra_solve(model, k, t, sides, tol, max_iter):
    N, n = len(t), model.n
    V = np.empty((N, n, n), dtype=complex)
    for s in (-1, 0, 1):
        sel = sides == s
        if np.any(sel):
            V[sel] = model.evaluate(t[sel], s)
    dt = np.diff(t)
    c = np.zeros(N)
    c[:-1] += dt / 2
    c[1:] += dt / 2
    D = t[None, :] - t[:, None]
    upper = np.triu(np.ones((N, N), dtype=bool), 1)
    W = np.where(upper, _sin_over_k(k, D) * c[None, :], 0.0)
    eye = np.eye(n)
    E = np.exp(1j * k * t)[:, None, None] * eye
    F = E.copy()
    trace = []
    for _ in range(max_iter):
        G = np.matmul(V, F)
        Fn = E + (W @ G.reshape(N, -1)).reshape(N, n, n)
        delta = float(np.max(np.abs(Fn - F)))
        trace.append(delta)
        F = Fn
        scale = float(np.max(np.abs(F)))
        if not math.isfinite(delta) or (len(trace) > 20 and delta > 1e6 * max(trace[0], 1e-300)):
            raise VolterraDivergence("Volterra iteration diverged (gamma or x_max too small?)", trace)
        if delta <= tol * max(scale, 1.0):
            break
    else:
        raise VolterraDivergence(f"Volterra iteration did not converge in {max_iter} iterations", trace)
    G = np.matmul(V, F)
    cd = np.zeros(N)
    cd[:-1] = dt / 2
    Wc = np.where(upper, np.cos(k * D) * c[None, :], 0.0) + np.diag(cd)
    Fp = 1j * k * E - (Wc @ G.reshape(N, -1)).reshape(N, n, n)
    return F, Fp, trace[-1]


def _volterra_plus(model, cert, k, xs, opts: SolverOptions):
    nx, n = len(xs), model.n
    eye = np.eye(n)
    f_out = np.empty((nx, n, n), dtype=complex)
    fp_out = np.empty_like(f_out)
    err = np.zeros(nx)
    supp = effective_support(model, cert)
    top = supp[1] if supp else -math.inf
    above = xs >= top
    f_out[above] = np.exp(1j * k * xs[above])[:, None, None] * eye
    fp_out[above] = 1j * k * f_out[above]
    if np.all(above):
        return f_out, fp_out, err
    lo = supp[0]
    start = max(float(xs[~above].min()), lo)
    stops = {start, top}
    stops.update(p for p in model.breakpoints() if start < p < top)
    stops.update(float(x) for x in xs[~above] if x > start)
    stops = sorted(stops)

    step = opts.volterra_step or min(0.01, 0.02 / max(abs(k), 1e-12))
    step = max(step, (top - start) / opts.max_nodes)
    sols = []
    for factor in (1, 2):
        t, sides, idx = _composite_grid(stops, step, factor)
        F, Fp, last = _volterra_solve(model, k, t, sides, opts.volterra_tol, opts.max_iter)
        sols.append((F, Fp, idx, last))
    (F1, Fp1, i1, _), (F2, Fp2, i2, last) = sols
    for j, x in enumerate(xs):
        if above[j]:
            continue
        xe = max(float(x), start)
        a, b = i1[xe], i2[xe]
        fr = F2[b] + (F2[b] - F1[a]) / 3
        fpr = Fp2[b] + (Fp2[b] - Fp1[a]) / 3
        e = max(np.abs(F2[b] - F1[a]).max(), np.abs(Fp2[b] - Fp1[a]).max() / max(abs(k), 1)) / 3 + last
        if x < start:
            fr, fpr = _free_step(np.asarray(k), np.asarray(x - start), fr, fpr)
            e *= math.exp(abs(k.imag) * (start - x))
        f_out[j], fp_out[j], err[j] = fr, fpr, e
    return f_out, fp_out, err


# --------------------------------------------------------------------------- public API


def _map(fn, items, threads):
    if threads and threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def jost_plus_arrays(model: PotentialModel, cert: DecayCertificate, ks, xs, *,
                     opts: SolverOptions = DEFAULT_OPTIONS, method: str | None = None):
    """Vectorised f_plus: returns (f, fp, err) with shapes (nk, nx, n, n) and (nk, nx).

    ``method=None`` picks ``ode-backward`` for Im k >= 0 and ``volterra`` otherwise.
    """
    ks = _check_k(ks)
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    if model.line == "half" and np.any(xs < 0):
        raise ValueError("half-line Jost solutions are defined for x >= 0")
    _require_strip(ks, cert)
    nk, nx, n = len(ks), len(xs), model.n
    f = np.empty((nk, nx, n, n), dtype=complex)
    fp = np.empty_like(f)
    err = np.zeros((nk, nx))
    if method == "volterra":
        vol = np.ones(nk, dtype=bool)
    elif method in (None, "ode-backward", "ode"):
        vol = ks.imag < 0
        if method is not None and np.any(vol):
            raise ValueError("backward ODE integration is unstable for Im k < 0; use volterra")
    else:
        raise ValueError(f"unknown method {method!r}")

    ode_idx = np.flatnonzero(~vol)
    if ode_idx.size:
        order = ode_idx[np.argsort(np.abs(ks[ode_idx].real), kind="stable")]
        chunks = [order[i:i + opts.batch] for i in range(0, len(order), opts.batch)]
        res = _map(lambda idx: _ode_plus_batch(model, cert, ks[idx], xs, opts.rtol)[:2], chunks, opts.threads)
        for idx, (fb, fpb) in zip(chunks, res):
            f[idx], fp[idx] = fb, fpb
            err[idx] = opts.rtol * 10 * np.maximum(np.abs(fb).max(axis=(-1, -2)), 1.0)
    vol_idx = np.flatnonzero(vol)
    res = _map(lambda i: _volterra_plus(model, cert, ks[i], xs, opts), list(vol_idx), opts.threads)
    for i, (fb, fpb, eb) in zip(vol_idx, res):
        f[i], fp[i], err[i] = fb, fpb, eb
    if not model.bounded:
        err += cert.tol
    return f, fp, err


def jost_minus_arrays(model: PotentialModel, cert: DecayCertificate, ks, xs, *,
                      opts: SolverOptions = DEFAULT_OPTIONS, method: str | None = None):
    """Vectorised f_minus via the mirror model V(-x)."""
    if model.line != "full":
        raise ValueError("f_minus is defined for full-line models")
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    if method == "ode-forward":
        method = "ode"
    g, gp, err = jost_plus_arrays(model.mirrored(), cert, ks, -xs, opts=opts, method=method)
    return g, -gp, err


def _evaluations(side, ks, xs, f, fp, err, method, cert):
    out = []
    for j, x in enumerate(xs):
        out.append(JostEvaluation(complex(ks[0]), float(x), side, f[0, j], fp[0, j], method,
                                  float(err[0, j]), classify(ks[0])))
    return out


def jost_plus(model: PotentialModel, cert: DecayCertificate, k: complex, xs, *,
              opts: SolverOptions = DEFAULT_OPTIONS, method: str | None = None) -> list[JostEvaluation]:
    """f_plus(k, x) and its derivative at each x in ``xs``."""
    wn = wavenumber(k, cert)
    ks = np.array([wn.k])
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    f, fp, err = jost_plus_arrays(model, cert, ks, xs, opts=opts, method=method)
    tag = method or ("volterra" if wn.k.imag < 0 else "ode-backward")
    return _evaluations("+", ks, xs, f, fp, err, tag, cert)


def jost_minus(model: PotentialModel, cert: DecayCertificate, k: complex, xs, *,
               opts: SolverOptions = DEFAULT_OPTIONS, method: str | None = None) -> list[JostEvaluation]:
    """f_minus(k, x) and its derivative at each x in ``xs``."""
    wn = wavenumber(k, cert)
    ks = np.array([wn.k])
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    f, fp, err = jost_minus_arrays(model, cert, ks, xs, opts=opts, method=method)
    tag = method or ("volterra" if wn.k.imag < 0 else "ode-forward")
    return _evaluations("-", ks, xs, f, fp, err, tag, cert)


def dagger(m):
    return np.conj(np.swapaxes(m, -1, -2))


def wronskian_arrays(gf, gfp, hf, hfp):
    """[g^H; h] = g^H h' - g'^H h, broadcasting over leading axes."""
    return np.matmul(dagger(gf), hfp) - np.matmul(dagger(gfp), hf)


def wronskian(g: JostEvaluation, h: JostEvaluation, *, rtol: float = 1e-9) -> np.ndarray:
    """Matrix Wronskian [g^H; h].  ``g`` must sit at conj(k_h) or -conj(k_h)."""
    if g.f.shape != h.f.shape:
        raise ValueError("dimension mismatch")
    if abs(g.x - h.x) > 1e-12 * max(1.0, abs(g.x)):
        raise ValueError(f"Wronskian needs a common x (got {g.x} and {h.x})")
    target = np.conj(h.k)
    if min(abs(g.k - target), abs(g.k + target)) > rtol * max(1.0, abs(h.k)):
        raise ValueError("g must be evaluated at conj(k) or -conj(k) of h")
    return wronskian_arrays(g.f, g.fprime, h.f, h.fprime)


def gram_plus(model: PotentialModel, cert: DecayCertificate, k: complex, *,
              opts: SolverOptions = DEFAULT_OPTIONS):
    """Return (f(k,0), f'(k,0), int_0^inf f_plus(k,x)^H f_plus(k,x) dx) for Im k > 0."""
    ks = _check_k([k])
    if ks[0].imag <= 0:
        raise ValueError("Gram integral needs Im k > 0")
    f, fp, G = _ode_plus_batch(model, cert, ks, np.array([0.0]), opts.rtol, gram=True)
    return f[0, 0], fp[0, 0], G[0]


def jost_arrays(model: PotentialModel, cert: DecayCertificate, ks, xs, *, side: str = "+",
                opts: SolverOptions = DEFAULT_OPTIONS):
    """f_plus or f_minus on a set of wavenumbers, skipping duplicates.

    For real scalar V, f(-conj k, x) = conj f(k, x), so only wavenumbers
    with Re k >= 0 are integrated.  Matrix models are always integrated
    at every requested k.
    """
    ks = _check_k(ks)
    mirror = model.is_real and model.n == 1
    base = np.where(ks.real < 0, -np.conj(ks), ks) if mirror else ks
    uniq, inv = np.unique(base, return_inverse=True)
    solver = jost_plus_arrays if side == "+" else jost_minus_arrays
    f, fp, err = solver(model, cert, uniq, xs, opts=opts)
    f, fp, err = f[inv], fp[inv], err[inv]
    if mirror:
        flip = (ks.real < 0)[:, None, None, None]
        f = np.where(flip, np.conj(f), f)
        fp = np.where(flip, np.conj(fp), fp)
    return f, fp, err
