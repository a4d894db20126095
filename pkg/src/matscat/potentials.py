"""Hermitian matrix potentials, presets, and decay certificates.

A :class:`PotentialModel` is an immutable description of an ``n x n``
Hermitian potential ``V(x)`` on the half line ``[0, inf)`` or on the full
line.  Evaluation is vectorised over ``x`` and supports one-sided limits at
the breakpoints where ``V`` (or ``V'``) is discontinuous, which the ODE and
Volterra solvers need for piecewise-smooth integration.

Presets
-------
``zero``            V = 0
``square_well``     V = v0 on [a, b] (v0 Hermitian n x n or scalar)
``diagonal_decay``  V = diag(v_l exp(-2 gamma |x|)), optionally cut off at |x| = cutoff
``sech2``           V = -2 kappa^2 sech^2(kappa x), scalar, full line
``grid``            piecewise-linear interpolation of samples, zero outside the sample range
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Mapping

import numpy as np
from scipy import integrate

from .errors import PotentialError

HERMITIAN_TOL = 1e-12
PRESETS = ("zero", "square_well", "diagonal_decay", "sech2")


def _as_matrix(value, n=None) -> np.ndarray:
    m = np.asarray(value, dtype=complex)
    if m.ndim == 0:
        m = m * np.eye(n or 1)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise PotentialError(f"expected a square matrix, got shape {m.shape}")
    return m


def _hermitize(m: np.ndarray, what: str) -> np.ndarray:
    defect = np.max(np.abs(m - np.conj(np.swapaxes(m, -1, -2)))) if m.size else 0.0
    if defect > HERMITIAN_TOL:
        raise PotentialError(f"{what} is not Hermitian (defect {defect:.3e})")
    return 0.5 * (m + np.conj(np.swapaxes(m, -1, -2)))


@dataclass(frozen=True, eq=False)
class PotentialModel:
    """Matrix potential with exact support metadata.

    ``support`` is ``None`` for the zero potential and otherwise a pair
    ``(lo, hi)``; infinite endpoints mean the potential only decays.
    """

    n: int
    kind: str
    params: Mapping[str, Any]
    line: str = "half"
    support: tuple[float, float] | None = None
    _data: Mapping[str, Any] = field(default_factory=dict, repr=False)

    @property
    def bounded(self) -> bool:
        return self.support is None or all(map(math.isfinite, self.support))

    @property
    def is_zero(self) -> bool:
        return self.support is None

    @property
    def is_real(self) -> bool:
        """True when V(x) is real symmetric, so f_plus(-conj k) = conj f_plus(k)."""
        if self.kind == "square_well":
            return not np.any(self._data["v0"].imag)
        if self.kind == "grid":
            return not np.any(self._data["vs"].imag)
        return True

    def evaluate(self, x, side: int = 0) -> np.ndarray:
        """Return V at ``x`` with shape ``x.shape + (n, n)``.

        ``side=-1`` / ``+1`` select left / right limits at breakpoints.
        """
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape + (self.n, self.n), dtype=complex)
        if self.is_zero:
            return out
        d = self._data
        if self.kind == "square_well":
            a, b = self.support
            if side > 0:
                inside = (x >= a) & (x < b)
            elif side < 0:
                inside = (x > a) & (x <= b)
            else:
                inside = (x >= a) & (x <= b)
            out[inside] = d["v0"]
        elif self.kind == "diagonal_decay":
            lo, hi = self.support
            if side > 0:
                inside = (x >= lo) & (x < hi)
            elif side < 0:
                inside = (x > lo) & (x <= hi)
            else:
                inside = (x >= lo) & (x <= hi)
            prof = np.exp(-2.0 * d["gamma"] * np.abs(x))
            for l, v in enumerate(d["v"]):
                out[..., l, l] = np.where(inside, v * prof, 0.0)
        elif self.kind == "sech2":
            kap = d["kappa"]
            out[..., 0, 0] = -2.0 * kap**2 / np.cosh(np.clip(kap * x, -350, 350)) ** 2
        elif self.kind == "grid":
            xs, vs = d["xs"], d["vs"]
            lo, hi = xs[0], xs[-1]
            flat = vs.reshape(len(xs), -1)
            vals = np.stack([np.interp(x, xs, flat[:, j].real) + 1j * np.interp(x, xs, flat[:, j].imag)
                             for j in range(flat.shape[1])], axis=-1)
            if side > 0:
                inside = (x >= lo) & (x < hi)
            elif side < 0:
                inside = (x > lo) & (x <= hi)
            else:
                inside = (x >= lo) & (x <= hi)
            out[inside] = vals.reshape(x.shape + (self.n, self.n))[inside]
        else:  # pragma: no cover - guarded by constructors
            raise PotentialError(f"unknown kind {self.kind!r}")
        return out

    __call__ = evaluate

    def breakpoints(self) -> np.ndarray:
        """Points where V or V' may be discontinuous (finite support ends included)."""
        if self.is_zero:
            return np.empty(0)
        if self.kind == "grid":
            return np.asarray(self._data["xs"], dtype=float)
        pts = []
        if self.kind == "diagonal_decay" and self.support[0] < 0 < self.support[1]:
            pts.append(0.0)
        pts.extend(p for p in self.support if math.isfinite(p))
        return np.unique(np.asarray(pts, dtype=float))

    def vanishes_on(self, lo: float, hi: float) -> bool:
        """True when V is identically zero on the open interval (lo, hi)."""
        if self.is_zero:
            return True
        s_lo, s_hi = self.support
        return hi <= s_lo or lo >= s_hi

    def mirrored(self) -> "PotentialModel":
        """The full-line model x -> V(-x)."""
        p = dict(self.params)
        if self.kind == "zero":
            return make_preset("zero", {"n": self.n}, line="full")
        if self.kind == "square_well":
            p["a"], p["b"] = -self.params["b"], -self.params["a"]
            return make_preset("square_well", p, line="full")
        if self.kind in ("sech2", "diagonal_decay"):
            return make_preset(self.kind, p, line="full")
        xs, vs = self._data["xs"], self._data["vs"]
        return grid_potential(-xs[::-1], vs[::-1], line="full")

    def to_json(self) -> dict:
        from .serialize import encode_matrix

        params = {}
        for key, val in self.params.items():
            if key in ("v0",):
                params[key] = encode_matrix(_as_matrix(val, self.n))
            elif key == "vs":
                params[key] = [encode_matrix(m) for m in np.asarray(val)]
            elif key == "xs":
                params[key] = [float(v) for v in val]
            elif key == "v":
                params[key] = [float(v) for v in val]
            else:
                params[key] = val
        return {"n": self.n, "kind": self.kind, "line": self.line, "params": params}


def make_preset(name: str, params: Mapping[str, Any] | None = None, *, n: int | None = None,
                line: str | None = None) -> PotentialModel:
    """Build and validate a preset potential."""
    params = dict(params or {})
    if n is not None:
        params.setdefault("n", n)
    if name not in PRESETS:
        raise PotentialError(f"unknown preset {name!r}; choose from {PRESETS}")
    if line is None:
        line = "full" if name == "sech2" else params.pop("line", "half")
    params.pop("line", None)
    if line not in ("half", "full"):
        raise PotentialError(f"line must be 'half' or 'full', got {line!r}")

    if name == "zero":
        nn = int(params.get("n", 1))
        if nn < 1:
            raise PotentialError("n must be positive")
        return PotentialModel(nn, "zero", MappingProxyType({"n": nn}), line, None)

    if name == "square_well":
        a, b = float(params.get("a", 0.0)), float(params.get("b", 1.0))
        if not a < b:
            raise PotentialError(f"degenerate interval [{a}, {b}]")
        nn = params.get("n")
        v0 = _as_matrix(params.get("v0", -1.0), nn)
        if nn is not None and v0.shape[0] != int(nn):
            raise PotentialError("v0 shape does not match n")
        v0 = _hermitize(v0, "v0")
        if line == "half" and a < 0:
            raise PotentialError("half-line potentials need a >= 0")
        stored = {"v0": v0, "a": a, "b": b, "n": v0.shape[0]}
        return PotentialModel(v0.shape[0], "square_well", MappingProxyType(stored), line, (a, b),
                              MappingProxyType({"v0": v0}))

    if name == "diagonal_decay":
        v = np.atleast_1d(np.asarray(params["v"], dtype=float))
        gamma = float(params.get("gamma", 1.0))
        if gamma < 0:
            raise PotentialError("decay rate gamma must be >= 0")
        cutoff = params.get("cutoff")
        cutoff = math.inf if cutoff is None else float(cutoff)
        if cutoff <= 0:
            raise PotentialError("cutoff must be positive")
        if not math.isfinite(cutoff) and gamma == 0:
            raise PotentialError("diagonal_decay without cutoff needs gamma > 0")
        support = (0.0, cutoff) if line == "half" else (-cutoff, cutoff)
        stored = {"v": tuple(v), "gamma": gamma, "cutoff": None if math.isinf(cutoff) else cutoff}
        return PotentialModel(len(v), "diagonal_decay", MappingProxyType(stored), line, support,
                              MappingProxyType({"v": v, "gamma": gamma}))

    # sech2
    if line != "full":
        raise PotentialError("sech2 is a full-line preset")
    kappa = float(params.get("kappa", 1.0))
    if kappa <= 0:
        raise PotentialError("kappa must be positive")
    return PotentialModel(1, "sech2", MappingProxyType({"kappa": kappa}), "full",
                          (-math.inf, math.inf), MappingProxyType({"kappa": kappa}))


def grid_potential(xs, vs, *, line: str = "half") -> PotentialModel:
    """Piecewise-linear potential through samples ``vs[i]`` at ``xs[i]``."""
    xs = np.asarray(xs, dtype=float)
    vs = np.asarray(vs, dtype=complex)
    if vs.ndim == 1:
        vs = vs[:, None, None]
    if xs.ndim != 1 or len(xs) < 2 or vs.shape[0] != len(xs) or vs.shape[1] != vs.shape[2]:
        raise PotentialError("grid needs >= 2 samples and matching (N, n, n) matrices")
    if np.any(np.diff(xs) <= 0):
        raise PotentialError("grid samples must be strictly increasing")
    if line == "half" and xs[0] < 0:
        raise PotentialError("half-line grid must start at x >= 0")
    vs = _hermitize(vs, "grid sample")
    n = vs.shape[1]
    stored = {"xs": xs, "vs": vs}
    return PotentialModel(n, "grid", MappingProxyType(stored), line, (float(xs[0]), float(xs[-1])),
                          MappingProxyType(stored))


def potential_from_json(obj: Mapping[str, Any]) -> PotentialModel:
    """Inverse of :meth:`PotentialModel.to_json`; complex entries are ``[re, im]`` pairs."""
    from .serialize import decode_matrix, decode_scalar

    kind = obj.get("kind")
    n = obj.get("n")
    line = obj.get("line")
    params = dict(obj.get("params") or {})
    if kind == "grid":
        if "csv" in params:
            return load_potential_csv(params["csv"], n=n, line=line or "half")
        xs = params["xs"]
        vs = [decode_matrix(m, n) for m in params["vs"]]
        return grid_potential(xs, vs, line=line or "half")
    if "v0" in params:
        params["v0"] = decode_matrix(params["v0"], n)
    for key in ("a", "b", "gamma", "kappa", "cutoff"):
        if key in params and params[key] is not None:
            params[key] = decode_scalar(params[key]).real
    if n is not None:
        params["n"] = n
    return make_preset(kind, params, line=line)


def load_potential_csv(path, *, n: int | None = None, line: str = "half") -> PotentialModel:
    """Read a grid potential: columns x, then n^2 (re, im) pairs in row-major order."""
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    m = (data.shape[1] - 1) // 2
    nn = int(round(math.sqrt(m)))
    if nn * nn != m or data.shape[1] != 1 + 2 * m or (n is not None and nn != n):
        raise PotentialError(f"CSV has {data.shape[1]} columns, expected 1 + 2 n^2")
    vals = data[:, 1::2] + 1j * data[:, 2::2]
    return grid_potential(data[:, 0], vals.reshape(-1, nn, nn), line=line)


def save_potential_csv(path, xs, vs) -> None:
    vs = np.asarray(vs, dtype=complex)
    flat = vs.reshape(len(xs), -1)
    cols = [np.asarray(xs, dtype=float)]
    for j in range(flat.shape[1]):
        cols += [flat[:, j].real, flat[:, j].imag]
    n = vs.shape[1]
    names = ["x"] + [f"V{l + 1}{s + 1}_{part}" for l in range(n) for s in range(n) for part in ("re", "im")]
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=",".join(names), fmt="%.17g")


# --------------------------------------------------------------------------- decay


@dataclass(frozen=True)
class DecayCertificate:
    """Numerically evaluated moments of a potential.

    ``expmoment`` is ``math.inf`` when the tail ratio test fails.
    ``x_max`` is the truncation point used by the Jost solvers: the support
    end for compact potentials, otherwise the point beyond which the moment
    tails are below ``tol``.
    """

    gamma: float
    moment1: float
    expmoment: float
    x_max: float
    tol: float
    tail_rate: float | None = None

    @property
    def expmoment_finite(self) -> bool:
        return math.isfinite(self.expmoment)


def _abs_sum(model: PotentialModel, x) -> np.ndarray:
    return np.abs(model.evaluate(x)).sum(axis=(-1, -2))


def _tail_fit(model: PotentialModel, gamma: float, sign: float) -> tuple[float, float, float]:
    """Fit log(sum|V| e^{2 gamma |x|}) ~ alpha + beta |x| over the last decade of the sample range.

    Returns (alpha, beta, R).  The range end R is the first power of two
    beyond which sum|V| has dropped below 1e-30 of its peak (capped at 1024).
    """
    peak = max(float(_abs_sum(model, np.linspace(-8, 8, 401)).max()), 1e-300)
    r = 8.0
    while r < 1024 and _abs_sum(model, sign * r) > 1e-30 * peak:
        r *= 2
    xs = np.linspace(r / 10, r, 64)
    g = _abs_sum(model, sign * xs)
    ok = g > 0
    if ok.sum() < 8:
        return -math.inf, -math.inf, r
    logs = np.log(g[ok]) + 2 * gamma * xs[ok]
    beta, alpha = np.polyfit(xs[ok], logs, 1)
    return float(alpha), float(beta), r


def certify_decay(model: PotentialModel, gamma: float, tol: float = 1e-10) -> DecayCertificate:
    """Evaluate sum_ls int (1+|x|)|V_ls| dx and sum_ls int |V_ls| e^{2 gamma |x|} dx.

    Integrals run over [0, inf) for half-line models and over the real line
    otherwise.  Unbounded tails are classified by a log-linear ratio test
    against exp(-eps |x|) with eps = 1e-2.
    """
    if gamma < 0:
        raise PotentialError("gamma must be >= 0")
    if model.is_zero:
        return DecayCertificate(gamma, 0.0, 0.0, 0.0, tol)

    eps = 1e-2
    lo, hi = model.support
    if model.line == "half":
        lo = max(lo, 0.0)
    bps = model.breakpoints()

    def moment(weight, a, b):
        pts = [p for p in bps if a < p < b]
        f = lambda x: float(_abs_sum(model, x)) * weight(x)
        val, _ = integrate.quad(f, a, b, points=pts or None, epsrel=tol, epsabs=tol * 1e-3, limit=500)
        return val

    w1 = lambda x: 1.0 + abs(x)
    wg = lambda x: math.exp(2.0 * gamma * abs(x))

    if model.bounded:
        m1 = moment(w1, lo, hi)
        me = moment(wg, lo, hi)
        return DecayCertificate(gamma, m1, me, max(abs(lo), abs(hi)), tol)

    # unbounded tails: truncate where the fitted tail drops below tol
    cuts, finite, rates = [], True, []
    for sign, end in ((1.0, hi), (-1.0, lo)):
        if math.isfinite(end):
            cuts.append(abs(end))
            continue
        a0, b0, r0 = _tail_fit(model, 0.0, sign)
        if not b0 < -eps:
            raise PotentialError("potential tail is not exponentially decaying; first moment may diverge")
        rates.append(-b0)
        # tail of (1 + x) e^{alpha + beta x} is bounded by (1 + X + 1/|beta|) e^{alpha + beta X}/|beta|
        x_cut = r0 / 10
        while (1 + x_cut + 1 / -b0) * math.exp(a0 + b0 * x_cut) / -b0 > tol and x_cut < r0:
            x_cut += 0.25
        ag, bg, rg = _tail_fit(model, gamma, sign)
        if not bg < -eps:
            finite = False
        else:
            xg = rg / 10
            while math.exp(ag + bg * xg) / -bg > tol and xg < 50 * rg:
                xg += 0.25
            x_cut = max(x_cut, min(xg, rg))
        cuts.append(x_cut)
    x_hi = cuts[0] if math.isinf(hi) else hi
    x_lo = -cuts[1] if math.isinf(lo) else lo
    m1 = moment(w1, x_lo, x_hi)
    me = moment(wg, x_lo, x_hi) if finite else math.inf
    return DecayCertificate(gamma, m1, me, max(abs(x_lo), abs(x_hi)), tol, min(rates) if rates else None)
