"""Half-line Marchenko reconstruction for the Dirichlet condition.

Kernel::

    Omega(s) = (1/2 pi) int (S(k) + I) e^{iks} dk + sum_j C_j^2 e^{-k_j s}

with S(-k) = S(k)^{-1}.  The transformation kernel solves

    K(x, y) + Omega(x + y) + int_x^X K(x, t) Omega(t + y) dt = 0,   y >= x,

and V(x) = -2 d/dx K(x, x).

Truncating the k-integral at |k| = K leaves a 1/k tail from the jump of V
at the support edges.  The tail is modelled by ``c1/(mu + ik) + c2/(mu + ik)^2``
(fitted on K/2 <= |k| <= K) whose Fourier transform over the whole real line
is known in closed form; only the smooth remainder is summed numerically.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import ReconstructionError, StageError
from .halfline import BoundaryCondition, dirichlet, extract_scattering_data, s_evaluator
from .jost import DEFAULT_OPTIONS, SolverOptions, dagger
from .potentials import DecayCertificate, PotentialModel


@dataclass(frozen=True)
class MarchenkoSettings:
    K: float = 1000.0
    dk: float = 0.25
    h: float = 0.005
    x_max: float = 3.0
    mu: float = 1.0
    tail_model: bool = True
    include_bound_states: bool = True
    k_max: float | None = None

    def k_grid(self) -> np.ndarray:
        """Positive midpoint grid (m + 1/2) dk below K; k = 0 is never sampled."""
        return np.arange(self.dk / 2, self.K, self.dk)


@dataclass(frozen=True, eq=False)
class MarchenkoKernel:
    s: np.ndarray
    Omega: np.ndarray
    h: float
    K: float
    dk: float
    tail: tuple | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.Omega.shape[-1]


def build_kernel(ks, S, bound_states, *, h: float, x_max: float, K: float | None = None,
                 mu: float = 1.0, tail_model: bool = True, tail_tol: float = 0.1,
                 decay_tol: float | None = 1e-2) -> MarchenkoKernel:
    """Omega on s = 0, h, ..., 2 x_max from S on a uniform positive midpoint grid.

    ``bound_states`` is an iterable of ``(kj, Cj2)`` pairs.  A complete data
    set gives an Omega that decays over [0, 2 x_max]; when the last tenth of
    the grid exceeds ``decay_tol`` times the peak a bound state is probably
    missing and ReconstructionError is raised (``decay_tol=None`` skips this).
    """
    ks = np.asarray(ks, dtype=float)
    S = np.asarray(S, dtype=complex)
    if S.ndim == 1:
        S = S[:, None, None]
    n = S.shape[-1]
    nx = int(round(x_max / h))
    if abs(nx * h - x_max) > 1e-9 * x_max:
        raise ReconstructionError("x_max must be a multiple of h")
    s = np.arange(2 * nx + 1) * h
    eye = np.eye(n)
    Omega = np.zeros((len(s), n, n), dtype=complex)
    tail = None
    diag = {}
    if len(ks):
        dk = float(ks[1] - ks[0]) if len(ks) > 1 else 2 * float(ks[0])
        if np.any(np.abs(np.diff(ks) - dk) > 1e-9 * dk) or abs(ks[0] - dk / 2) > 1e-9 * dk:
            raise ReconstructionError("S must be sampled on the midpoint grid (m + 1/2) dk")
        K = float(ks[-1] + dk / 2) if K is None else K
        kk = np.concatenate([-ks[::-1], ks])
        D = np.concatenate([np.linalg.inv(S[::-1]), S]) + eye
        flat = D.reshape(len(kk), -1)
        if tail_model:
            sel = np.abs(kk) >= K / 2
            z = mu + 1j * kk
            basis = np.stack([1 / z, 1 / z**2], axis=1)
            coef, *_ = np.linalg.lstsq(basis[sel], flat[sel], rcond=None)
            fit = flat[sel] - basis[sel] @ coef
            norm = np.linalg.norm(flat[sel])
            rel = float(np.linalg.norm(fit) / norm) if norm > 0 else 0.0
            diag["tail_fit_residual"] = rel
            if rel > tail_tol:
                raise ReconstructionError(f"K={K:g} too small: 1/k tail model misfit {rel:.2e}")
            flat = flat - basis @ coef
            c1, c2 = coef[0].reshape(n, n), coef[1].reshape(n, n)
            tail = (c1, c2, mu)
        Om = (np.exp(1j * np.outer(s, kk)) @ flat) * (dk / (2 * np.pi))
        Omega += Om.reshape(len(s), n, n)
        if tail is not None:
            e = np.exp(-mu * s)[:, None, None]
            Omega += c1 * e + c2 * (s[:, None, None] * e)
    else:
        dk = 0.0
        K = 0.0 if K is None else K
    for kj, C2 in bound_states:
        Omega += np.asarray(C2, dtype=complex).reshape(n, n) * np.exp(-kj * s)[:, None, None]
    diag["hermitian_defect"] = float(np.max(np.abs(Omega - dagger(Omega)))) if Omega.size else 0.0
    Omega = 0.5 * (Omega + dagger(Omega))
    peak = float(np.max(np.abs(Omega))) if Omega.size else 0.0
    diag["tail_value"] = float(np.max(np.abs(Omega[-max(1, len(s) // 10):]))) if Omega.size else 0.0
    diag["peak"] = peak
    if decay_tol is not None and peak > 0 and diag["tail_value"] > decay_tol * peak:
        raise ReconstructionError(f"Omega does not decay (tail {diag['tail_value']:.2e}, peak {peak:.2e}): "
                                  "missing bound state or x_max too small")
    return MarchenkoKernel(s, Omega, h, K, dk, tail, diag)


@dataclass(frozen=True, eq=False)
class ReconstructionResult:
    """Reconstructed potential: node values via 4th-order differences, plus exact cell averages."""

    xs: np.ndarray
    V: np.ndarray
    x_cells: np.ndarray
    V_cells: np.ndarray
    Kdiag: np.ndarray
    defect: float
    hermitian_defect: float
    condition: float

    def to_json(self) -> dict:
        from .serialize import encode_matrix
        return {"x": self.xs.tolist(), "V": [encode_matrix(v) for v in self.V],
                "defect": self.defect, "hermitian_defect": self.hermitian_defect, "condition": self.condition}


def _diag_derivative(Kd, h):
    """-2 dK(x,x)/dx: centered 4th order inside, 2nd-order one-sided at the ends."""
    N = len(Kd)
    d = np.empty_like(Kd)
    if N >= 5:
        d[2:-2] = (-Kd[4:] + 8 * Kd[3:-1] - 8 * Kd[1:-3] + Kd[:-4]) / (12 * h)
        d[1] = (Kd[2] - Kd[0]) / (2 * h)
        d[-2] = (Kd[-1] - Kd[-3]) / (2 * h)
        d[0] = (-3 * Kd[0] + 4 * Kd[1] - Kd[2]) / (2 * h)
        d[-1] = (3 * Kd[-1] - 4 * Kd[-2] + Kd[-3]) / (2 * h)
    else:
        d[:] = np.gradient(Kd, h, axis=0)
    return -2 * d


def solve_marchenko(kernel: MarchenkoKernel, *, max_condition: float = 1e12,
                    max_defect: float = 1e-8) -> ReconstructionResult:
    """Dense per-x block solves of the trapezoid-discretised Marchenko equation.

    The largest system (x = 0) supplies the reported condition number and
    residual; either one beyond its limit raises ReconstructionError.
    """
    h, n = kernel.h, kernel.n
    N = (len(kernel.s) + 1) // 2
    OmT = np.swapaxes(kernel.Omega, -1, -2)
    eye = np.eye(n)
    Kd = np.empty((N, n, n), dtype=complex)
    defect, cond = 0.0, 1.0
    for i in range(N):
        m = N - i
        idx = 2 * i + np.arange(m)[:, None] + np.arange(m)[None, :]
        w = np.full(m, h)
        w[0] = w[-1] = h / 2
        if m == 1:
            w[0] = 0.0
        H = OmT[idx] * w[None, :, None, None]
        G = np.einsum("ljab->lajb", H).reshape(m * n, m * n) + np.eye(m * n)
        rhs = -OmT[2 * i + np.arange(m)].reshape(m * n, n)
        X = np.linalg.solve(G, rhs)
        Kd[i] = X[:n].T
        if i == 0:
            cond = float(np.linalg.cond(G))
            defect = float(np.max(np.abs(G @ X - rhs)))
    if not np.all(np.isfinite(Kd)):
        raise ReconstructionError("Marchenko solve produced non-finite values")
    if cond > max_condition:
        raise ReconstructionError(f"ill-conditioned discretisation (condition {cond:.2e})")
    if defect > max_defect * max(1.0, float(np.max(np.abs(kernel.Omega), initial=0.0))):
        raise ReconstructionError(f"discrete Marchenko defect {defect:.2e} above tolerance")
    xs = np.arange(N) * h
    V = _diag_derivative(Kd, h)
    herm = float(np.max(np.abs(V - dagger(V))))
    V = 0.5 * (V + dagger(V))
    Vc = -2 * np.diff(Kd, axis=0) / h
    Vc = 0.5 * (Vc + dagger(Vc))
    return ReconstructionResult(xs, V, xs[:-1] + h / 2, Vc, Kd, defect, herm, cond)


# --------------------------------------------------------------------------- comparison and round trip


def cell_averages(model: PotentialModel, edges) -> np.ndarray:
    """Exact-to-quadrature averages of V over each cell [edges[i], edges[i+1]]."""
    edges = np.asarray(edges, dtype=float)
    t, w = leggauss(8)
    bps = model.breakpoints()
    out = np.zeros((len(edges) - 1, model.n, model.n), dtype=complex)
    for i, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
        pts = [a] + [p for p in bps if a < p < b] + [b]
        acc = 0
        for u, v in zip(pts[:-1], pts[1:]):
            x = 0.5 * (v - u) * (t + 1) + u
            vals = model.evaluate(x)  # Gauss nodes are interior, so jumps are never sampled
            acc = acc + np.tensordot(0.5 * (v - u) * w, vals, axes=(0, 0))
        out[i] = acc / (b - a)
    return out


def compare(result: ReconstructionResult, model: PotentialModel, *, exclusion: float = 0.05) -> dict:
    """L1 error of cell averages and sup error of node values away from jumps."""
    h = result.xs[1] - result.xs[0]
    exact_cells = cell_averages(model, result.xs)
    err_cells = np.abs(result.V_cells - exact_cells).max(axis=(-2, -1))
    l1 = float(np.sum(err_cells) * h)
    bps = model.breakpoints()
    away = np.ones(len(result.xs), dtype=bool)
    for p in bps:
        away &= np.abs(result.xs - p) > exclusion
    err_nodes = np.abs(result.V - model.evaluate(result.xs)).max(axis=(-2, -1))
    sup = float(err_nodes[away].max()) if np.any(away) else math.nan
    return {"L1": l1, "sup_away_from_jumps": sup, "exclusion": exclusion}


@dataclass(frozen=True, eq=False)
class RoundtripReport:
    metrics: dict
    bound_states: list
    kernel: MarchenkoKernel
    result: ReconstructionResult
    settings: MarchenkoSettings
    timing: dict

    def to_json(self) -> dict:
        """Deterministic part of the report (timings are kept separate)."""
        s = self.settings
        return {"metrics": self.metrics,
                "bound_states": [{"kj": kj, "Cj2": _enc(C2)} for kj, C2 in self.bound_states],
                "settings": {"K": s.K, "dk": s.dk, "h": s.h, "x_max": s.x_max, "mu": s.mu,
                             "tail_model": s.tail_model, "include_bound_states": s.include_bound_states},
                "kernel": self.kernel.diagnostics,
                "solve": {"defect": self.result.defect, "hermitian_defect": self.result.hermitian_defect,
                          "condition": self.result.condition}}


def _enc(m):
    from .serialize import encode_matrix
    return encode_matrix(m)


def bound_state_bound(model: PotentialModel) -> float:
    """sqrt(max negative eigenvalue of V) bounds every k_j; sampled for non-constant V."""
    if model.is_zero:
        return 0.0
    lo, hi = model.support
    hi = hi if math.isfinite(hi) else 50.0
    xs = np.linspace(max(lo, 0.0), hi, 2001)
    w = np.linalg.eigvalsh(model.evaluate(xs))
    return math.sqrt(max(0.0, -float(w.min())))


def roundtrip(model: PotentialModel, cert: DecayCertificate, bc: BoundaryCondition | None = None,
              settings: MarchenkoSettings = MarchenkoSettings(), *,
              opts: SolverOptions = DEFAULT_OPTIONS) -> RoundtripReport:
    """Forward data -> extracted {S, k_j, C_j} -> kernel -> Marchenko solve -> comparison."""
    bc = bc or dirichlet(model.n)
    if not bc.is_dirichlet:
        raise ValueError("reconstruction is implemented for the Dirichlet condition only")
    timing = {}
    t0 = time.perf_counter()
    try:
        s_eval = s_evaluator(bc, model, cert, opts=opts)
        k_top = settings.k_max or bound_state_bound(model) + 0.5
        k_top = min(k_top, cert.gamma * (1 - 1e-6))
        data = extract_scattering_data(s_eval, cert, k_top, ks_real=settings.k_grid())
    except Exception as exc:
        raise StageError("extract", exc) from exc
    timing["extract"] = time.perf_counter() - t0
    bstates = [(b.kj, b.C2) for b in data.bound_states]
    t0 = time.perf_counter()
    try:
        kernel = build_kernel(data.ks.real, data.S, bstates if settings.include_bound_states else [],
                              h=settings.h, x_max=settings.x_max, K=settings.K, mu=settings.mu,
                              tail_model=settings.tail_model,
                              decay_tol=1e-2 if settings.include_bound_states else None)
    except Exception as exc:
        raise StageError("kernel", exc) from exc
    timing["kernel"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    try:
        result = solve_marchenko(kernel)
    except Exception as exc:
        raise StageError("solve", exc) from exc
    timing["solve"] = time.perf_counter() - t0
    metrics = compare(result, model)
    return RoundtripReport(metrics, bstates, kernel, result, settings, timing)
