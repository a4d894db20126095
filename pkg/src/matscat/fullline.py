"""Full-line problem: transition coefficients, scattering quartet, weights, Weyl matrix.

With the Wronskian ``[g^H; h] = g^H h' - g'^H h``::

    A(k) =  (1/2ik) [f_-(-conj k)^H; f_+(k)]      T_+ = A^{-1},  S_- = B A^{-1}
    B(k) = -(1/2ik) [f_-(conj k)^H;  f_+(k)]      T_- = D^{-1},  S_+ = C D^{-1}
    C(k) = -B(conj k)^H,   D(k) = A(-conj k)^H

The assembled scattering matrix is the 2n x 2n block ``[[T_+, S_+], [S_-, T_-]]``.
Bound states are the zeros ``i k_j`` of ``det A``.  At a bound state the
residues ``R^+ = Res T_+`` and ``R^- = Res T_-`` satisfy

    f_+(i k_j, x) R^+ = i f_-(i k_j, x) N^-,    f_-(i k_j, x) R^- = i f_+(i k_j, x) N^+

with positive semidefinite weights ``N^- = -i B(i k_j) R^+`` and
``N^+ = -i C(i k_j) R^-``.  (Columns of ``R^+`` lie in ker A(i k_j), those of
``R^-`` in ker A(i k_j)^H; in the scalar case the two residues coincide.)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import contour
from .errors import BoundStateError, ContinuationError, NearSingularError, NoPoleError, ScatteringError, WronskianError
from .jost import DEFAULT_OPTIONS, SolverOptions, dagger, jost_arrays, wronskian_arrays
from .potentials import DecayCertificate, PotentialModel
from .serialize import encode_matrix, encode_scalar

WRONSKIAN_TOL = 1e-8
SINGULAR_TOL = 1e-12
KERNEL_TOL = 1e-8


def _check_full(model):
    if model.line != "full":
        raise ValueError("full-line scattering needs a full-line potential")


def check_points(model: PotentialModel, cert: DecayCertificate) -> np.ndarray:
    """x = 0 followed by three further points spread over the potential's range."""
    if model.is_zero:
        span = 1.0
    else:
        lo, hi = model.support
        span = max(1.0, min(max(abs(lo), abs(hi)), cert.x_max))
    return np.array([0.0, 0.37 * span, -0.61 * span, 1.3 * span])


@dataclass(frozen=True, eq=False)
class TransitionCoefficients:
    k: complex
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    wronskian_defect: float

    def to_json(self) -> dict:
        return {"k": encode_scalar(self.k), "A": encode_matrix(self.A), "B": encode_matrix(self.B),
                "C": encode_matrix(self.C), "D": encode_matrix(self.D),
                "wronskian_defect": self.wronskian_defect}


def _wr(gf, gfp, hf, hfp):
    """Wronskians at every x (axis 1) plus a relative x-constancy defect per k."""
    W = wronskian_arrays(gf, gfp, hf, hfp)
    size = (np.linalg.norm(gf, 2, axis=(-2, -1)) * np.linalg.norm(hfp, 2, axis=(-2, -1))
            + np.linalg.norm(gfp, 2, axis=(-2, -1)) * np.linalg.norm(hf, 2, axis=(-2, -1)))
    ref = np.maximum(np.linalg.norm(W[:, 0], 2, axis=(-2, -1)), 1e-300)
    dev = np.abs(W - W[:, :1]).max(axis=(-2, -1))
    defect = (dev / np.maximum(ref[:, None], 1e-3 * size)).max(axis=1)
    return W[:, 0], defect, size[:, 0]


def coefficient_arrays(model: PotentialModel, cert: DecayCertificate, ks, *, xs=None, parts: str = "ABCD",
                       opts: SolverOptions = DEFAULT_OPTIONS, tol: float = WRONSKIAN_TOL):
    """A, B, C, D of shape (nk, n, n) plus per-k Wronskian defects and scales of A.

    Only the coefficients named in ``parts`` are computed (others are None);
    A and D need f_+- in the closed upper half plane only, B and C also at
    conj k.
    """
    _check_full(model)
    ks = np.atleast_1d(np.asarray(ks, dtype=complex))
    xs = check_points(model, cert) if xs is None else np.atleast_1d(np.asarray(xs, dtype=float))
    kc = np.conj(ks)
    # (f_- wavenumber, f_+ wavenumber) for each Wronskian
    pairs = {"A": (-kc, ks), "B": (kc, ks), "D": (ks, -kc), "C": (ks, kc)}
    wanted = [p for p in "ABCD" if p in parts]
    wm = np.concatenate([pairs[p][0] for p in wanted])
    wp = np.concatenate([pairs[p][1] for p in wanted])
    uniq_m, inv_m = np.unique(wm, return_inverse=True)
    uniq_p, inv_p = np.unique(wp, return_inverse=True)
    fm, fmd, _ = jost_arrays(model, cert, uniq_m, xs, side="-", opts=opts)
    fp, fpd, _ = jost_arrays(model, cert, uniq_p, xs, side="+", opts=opts)
    nk = len(ks)
    kk = ks[:, None, None]
    out = dict.fromkeys("ABCD")
    defects = [np.zeros(nk)]
    scale = None
    for i, p in enumerate(wanted):
        im, ip = inv_m[i * nk:(i + 1) * nk], inv_p[i * nk:(i + 1) * nk]
        W, d, size = _wr(fm[im], fmd[im], fp[ip], fpd[ip])
        defects.append(d)
        if p == "A":
            out["A"] = W / (2j * kk)
            scale = size / (2 * np.abs(ks))
        elif p == "B":
            out["B"] = -W / (2j * kk)
        elif p == "D":
            out["D"] = dagger(W / (-2j * np.conj(kk)))
        else:
            out["C"] = dagger(W / (2j * np.conj(kk)))
    defect = np.max(defects, axis=0)
    if np.any(defect > tol):
        j = int(np.argmax(defect))
        raise WronskianError(f"Wronskian not x-independent at k={ks[j]:.6g} (relative defect {defect[j]:.2e})")
    return out["A"], out["B"], out["C"], out["D"], defect, scale


def coefficients(model: PotentialModel, cert: DecayCertificate, k: complex, *,
                 opts: SolverOptions = DEFAULT_OPTIONS) -> TransitionCoefficients:
    A, B, C, D, defect, _ = coefficient_arrays(model, cert, [k], opts=opts)
    return TransitionCoefficients(complex(k), A[0], B[0], C[0], D[0], float(defect[0]))


@dataclass(frozen=True, eq=False)
class ScatteringQuartet:
    ks: np.ndarray
    Tplus: np.ndarray
    Tminus: np.ndarray
    Sminus: np.ndarray
    Splus: np.ndarray

    @property
    def assembled(self) -> np.ndarray:
        top = np.concatenate([self.Tplus, self.Splus], axis=-1)
        bottom = np.concatenate([self.Sminus, self.Tminus], axis=-1)
        return np.concatenate([top, bottom], axis=-2)

    def unitarity_defect(self) -> float:
        S = self.assembled
        return float(np.max(np.abs(dagger(S) @ S - np.eye(S.shape[-1])))) if len(self.ks) else 0.0

    def to_json(self) -> list[dict]:
        return [{"k": encode_scalar(k), "Tplus": encode_matrix(tp), "Tminus": encode_matrix(tm),
                 "Sminus": encode_matrix(sm), "Splus": encode_matrix(sp)}
                for k, tp, tm, sm, sp in zip(self.ks, self.Tplus, self.Tminus, self.Sminus, self.Splus)]


def _inv_checked(M, ks, what):
    sv = np.linalg.svd(M, compute_uv=False)
    bad = sv[:, -1] < SINGULAR_TOL * np.maximum(sv[:, 0], 1.0)
    if np.any(bad):
        raise NearSingularError(f"{what} is singular at k={ks[np.flatnonzero(bad)[0]]:.6g}: near bound state")
    return np.linalg.inv(M)


def quartet(model: PotentialModel, cert: DecayCertificate, ks, *,
            opts: SolverOptions = DEFAULT_OPTIONS) -> ScatteringQuartet:
    """T+-, S+- on a k-grid."""
    ks = np.atleast_1d(np.asarray(ks, dtype=complex))
    A, B, C, D, _, _ = coefficient_arrays(model, cert, ks, opts=opts)
    Ai = _inv_checked(A, ks, "A(k)")
    Di = _inv_checked(D, ks, "D(k)")
    return ScatteringQuartet(ks, Ai, Di, B @ Ai, C @ Di)


def t_evaluator(model, cert, *, opts: SolverOptions = DEFAULT_OPTIONS):
    """Vectorised ks -> stacked (T_+, T_-) of shape (len(ks), 2, n, n)."""
    def evaluate(ks):
        A, _, _, D, _, _ = coefficient_arrays(model, cert, ks, parts="AD", opts=opts, tol=math.inf)
        return np.stack([np.linalg.inv(A), np.linalg.inv(D)], axis=1)
    return evaluate


def sminus_evaluator(model, cert, *, opts: SolverOptions = DEFAULT_OPTIONS):
    """Vectorised ks -> S_-(ks) = B A^{-1}."""
    def evaluate(ks):
        A, B, _, _, _, _ = coefficient_arrays(model, cert, ks, parts="AB", opts=opts, tol=math.inf)
        return B @ np.linalg.inv(A)
    evaluate.n = model.n
    evaluate.model = model
    return evaluate


# --------------------------------------------------------------------------- bound states


def _a_profile(model, cert, opts):
    def g(kappas):
        ks = 1j * np.asarray(kappas, dtype=float)
        A, _, _, _, _, scale = coefficient_arrays(model, cert, ks, parts="A", opts=opts, tol=math.inf)
        return np.linalg.svd(A, compute_uv=False)[:, -1] / np.maximum(scale, 1.0)
    return g


def _polish(model, cert, kap, opts, max_iter=8):
    """Secant refinement of an imaginary-axis zero of det A (see halfline._polish)."""
    A, *_ = coefficient_arrays(model, cert, [1j * kap], parts="A", opts=opts, tol=math.inf)
    u, _, vh = np.linalg.svd(A[0])
    u0, v0 = u[:, -1], vh[-1].conj()

    def h(x):
        Ax, *_ = coefficient_arrays(model, cert, [1j * x], parts="A", opts=opts, tol=math.inf)
        return complex(u0.conj() @ Ax[0] @ v0)

    x0, x1 = kap, kap * (1 + 1e-6)
    h0, h1 = h(x0), h(x1)
    for _ in range(max_iter):
        if h1 == h0:
            break
        x2 = x1 - (h1 * (x1 - x0) / (h1 - h0)).real
        if abs(x2 - kap) > 1e-4 * kap:
            return kap
        x0, h0, x1 = x1, h1, x2
        h1 = h(x1)
        if abs(x1 - x0) <= 4e-16 * x1:
            break
    return x1 if abs(h1) <= abs(h(kap)) else kap


def find_bound_states_fullline(model: PotentialModel, cert: DecayCertificate, k_max: float, *,
                               opts: SolverOptions = DEFAULT_OPTIONS, n_scan: int | None = None,
                               verify: bool = True) -> list[float]:
    """Zeros i k_j of det A(k) with 0 < k_j <= k_max, in increasing order.

    Zeros are cross-checked against the argument principle for det A and
    against the poles of T_- = D^{-1} located independently on the same axis.
    """
    _check_full(model)
    n_scan = n_scan or max(200, int(40 * k_max))
    lo = k_max / n_scan / 4
    g = _a_profile(model, cert, opts)
    # coarse Brent, then secant polish; the kernel test is applied at the polished point
    cands = [_polish(model, cert, kap, opts) for kap, val in contour.axis_minima(g, lo, k_max, n=n_scan, xatol=1e-7)
             if val < 1e-3]
    roots = [kap for kap in cands if g(np.array([kap]))[0] < KERNEL_TOL]
    if verify:
        def det(ks):
            A, *_ = coefficient_arrays(model, cert, ks, parts="A", opts=opts, tol=math.inf)
            return np.linalg.det(A)

        def inv_norm_tminus(kappas):
            _, _, _, D, _, scale = coefficient_arrays(model, cert, 1j * np.asarray(kappas), parts="AD", opts=opts,
                                                      tol=math.inf)
            return 1.0 / np.linalg.norm(np.linalg.inv(D), 2, axis=(-2, -1)) / np.maximum(scale, 1.0)

        mult = 0
        for r in roots:
            A, *_ = coefficient_arrays(model, cert, [1j * r], parts="A", opts=opts, tol=math.inf)
            sv = np.linalg.svd(A[0], compute_uv=False)
            mult += max(1, int(np.sum(sv < 1e-6 * max(sv[0], 1.0))))
        count = contour.argument_count(det, (-0.5 * k_max, 0.5 * k_max), (lo, k_max))
        if count != mult:
            raise BoundStateError(f"argument principle counts {count} zeros of det A, found {mult}")
        poles = [kap for kap, val in contour.axis_minima(inv_norm_tminus, lo, k_max, n=n_scan) if val < KERNEL_TOL]
        if len(poles) != len(roots) or any(abs(a - b) > 1e-6 * max(1, a) for a, b in zip(roots, poles)):
            raise BoundStateError(f"zeros of det A {roots} do not match poles of T_- {poles}")
    return roots


@dataclass(frozen=True, eq=False)
class BoundStateFullLine:
    kj: float
    Rplus: np.ndarray
    Rminus: np.ndarray
    Nplus: np.ndarray
    Nminus: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"kj": self.kj, "Rplus": encode_matrix(self.Rplus), "Rminus": encode_matrix(self.Rminus),
                "Nplus": encode_matrix(self.Nplus), "Nminus": encode_matrix(self.Nminus),
                "diagnostics": self.diagnostics}


def _psd_check(N, what, tol=1e-6):
    herm = float(np.max(np.abs(N - dagger(N))))
    Nh = 0.5 * (N + dagger(N))
    w = np.linalg.eigvalsh(Nh)
    scale = max(float(np.abs(w).max()), 1e-300)
    if herm > tol * scale or w.min() < -tol * scale:
        raise ScatteringError(f"{what} is not positive semidefinite (eigenvalues {w}, hermitian defect {herm:.2e})")
    return Nh, herm


def residues_t(model: PotentialModel, cert: DecayCertificate, kj: float, radius: float | None = None, *,
               others=(), opts: SolverOptions = DEFAULT_OPTIONS, tol: float = 1e-9):
    """(R^+, R^-, contour.Residue) for T_+- at i kj."""
    gaps = [abs(kj - o) for o in others if o != kj]
    r_max = min([kj] + gaps)
    r = 0.5 * r_max if radius is None else radius
    if r >= r_max:
        raise ValueError(f"radius {r:g} must be below min(kj, gap) = {r_max:g}")
    res = contour.residue(t_evaluator(model, cert, opts=opts), 1j * kj, r, tol=tol)
    Rp, Rm = res.value[0], res.value[1]
    if max(np.abs(Rp).max(), np.abs(Rm).max()) < 1e-10:
        raise NoPoleError(f"T has no pole at i{kj:g}")
    return Rp, Rm, res


def weights_from_scattering(model: PotentialModel, cert: DecayCertificate, kj: float, *,
                            radius: float | None = None, others=(),
                            opts: SolverOptions = DEFAULT_OPTIONS) -> BoundStateFullLine:
    """R^+- by contour integration and N^- = -i B(i kj) R^+, N^+ = -i C(i kj) R^-."""
    _check_full(model)
    if not cert.expmoment_finite or cert.gamma <= kj:
        raise ContinuationError(f"B(i kj) needs gamma > kj (gamma={cert.gamma:g}, kj={kj:g})")
    Rp, Rm, res = residues_t(model, cert, kj, radius, others=others, opts=opts)
    _, B, C, _, defect, _ = coefficient_arrays(model, cert, [1j * kj], parts="BC", opts=opts)
    Nm, hm = _psd_check(-1j * B[0] @ Rp, "N^-")
    Np, hp = _psd_check(-1j * C[0] @ Rm, "N^+")
    return BoundStateFullLine(float(kj), Rp, Rm, Np, Nm,
                              {"radius": res.radius, "nodes": res.nodes, "residue_change": res.change,
                               "wronskian_defect": float(defect[0]), "hermitian_defect": max(hm, hp)})


@dataclass(frozen=True, eq=False)
class DirectWeight:
    N: np.ndarray
    residual: float
    rank: int


def weights_direct(model: PotentialModel, cert: DecayCertificate, kj: float, R, *, side: str = "-",
                   xs=None, opts: SolverOptions = DEFAULT_OPTIONS, tol: float = 1e-6) -> DirectWeight:
    """Least-squares N from f_+(i kj, x) R = i f_-(i kj, x) N  (side '-'),
    or f_-(i kj, x) R = i f_+(i kj, x) N  (side '+'), stacked over sample points.
    """
    _check_full(model)
    if xs is None:
        # beyond ~3/kj one of the two sides is dominated by the exponentially small mode
        span = max(0.5, min(max(cert.x_max, 1.0), 3.0 / kj))
        xs = np.linspace(-span, span, 8)
    xs = np.asarray(xs, dtype=float)
    k = np.array([1j * kj])
    fplus, _, _ = jost_arrays(model, cert, k, xs, side="+", opts=opts)
    fminus, _, _ = jost_arrays(model, cert, k, xs, side="-", opts=opts)
    lhs_f, rhs_f = (fplus[0], fminus[0]) if side == "-" else (fminus[0], fplus[0])
    R = np.asarray(R, dtype=complex)
    rows, rhs = [], []
    for Fl, Fr in zip(lhs_f, rhs_f):
        w = 1.0 / max(np.linalg.norm(Fr, 2), np.linalg.norm(Fl @ R, 2), 1e-300)
        rows.append(1j * Fr * w)
        rhs.append(Fl @ R * w)
    M, b = np.concatenate(rows), np.concatenate(rhs)
    N, _, rank, sv = np.linalg.lstsq(M, b, rcond=None)
    if rank < model.n:
        raise BoundStateError("stacked system is rank deficient; sample more x points")
    resid = float(np.linalg.norm(M @ N - b) / max(np.linalg.norm(b), 1e-300))
    if resid > tol:
        raise BoundStateError(f"weight equation residual {resid:.2e} exceeds {tol:g}")
    return DirectWeight(N, resid, int(rank))


# --------------------------------------------------------------------------- normalized Jost, Weyl


@dataclass(frozen=True, eq=False)
class NormalizedJost:
    k: complex
    xs: np.ndarray
    f0plus: np.ndarray
    f0minus: np.ndarray
    relation_defect: float | None = None


def jost_normalized(model: PotentialModel, cert: DecayCertificate, k: complex, xs, *, verify: bool = False,
                    opts: SolverOptions = DEFAULT_OPTIONS) -> NormalizedJost:
    """f_0+ = f_+ T_+ and f_0- = f_- T_-; optionally check f_0+- = f_-+(-k) + f_-+(k) S_-+."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    q = quartet(model, cert, [k], opts=opts)
    kk = np.array([complex(k)])
    fplus, _, _ = jost_arrays(model, cert, kk, xs, side="+", opts=opts)
    fminus, _, _ = jost_arrays(model, cert, kk, xs, side="-", opts=opts)
    f0p = fplus[0] @ q.Tplus[0]
    f0m = fminus[0] @ q.Tminus[0]
    defect = None
    if verify:
        gm, _, _ = jost_arrays(model, cert, -kk, xs, side="-", opts=opts)
        gp, _, _ = jost_arrays(model, cert, -kk, xs, side="+", opts=opts)
        alt_p = gm[0] + fminus[0] @ q.Sminus[0]
        alt_m = gp[0] + fplus[0] @ q.Splus[0]
        scale = max(np.abs(f0p).max(), np.abs(f0m).max(), 1.0)
        defect = float(max(np.abs(alt_p - f0p).max(), np.abs(alt_m - f0m).max()) / scale)
    return NormalizedJost(complex(k), xs, f0p, f0m, defect)


@dataclass(frozen=True, eq=False)
class WeylMatrixValue:
    k: complex
    M: np.ndarray
    method: str

    def to_json(self) -> dict:
        return {"k": encode_scalar(self.k), "M": encode_matrix(self.M), "method": self.method}


def check_right_supported(model: PotentialModel) -> None:
    if not model.is_zero and model.support[0] < 0:
        raise ValueError("Weyl matrix from S_- needs a potential vanishing on (-inf, 0)")


def weyl_from_reflection(sminus_eval, k: complex) -> WeylMatrixValue:
    """M(k) = (I + S_-(k)) [ik (I - S_-(k))]^{-1} from the left reflection coefficient alone.

    Evaluators built by :func:`sminus_evaluator` carry their model, which is
    checked to vanish on (-inf, 0).
    """
    model = getattr(sminus_eval, "model", None)
    if model is not None:
        check_right_supported(model)
    k = complex(k)
    Sm = np.asarray(sminus_eval(np.array([k])))[0]
    eye = np.eye(Sm.shape[-1])
    denom = 1j * k * (eye - Sm)
    sv = np.linalg.svd(denom, compute_uv=False)
    if sv[-1] < SINGULAR_TOL * max(sv[0], 1.0):
        raise NearSingularError(f"I - S_-(k) is singular at k={k:.6g}: Weyl pole")
    return WeylMatrixValue(k, (eye + Sm) @ np.linalg.inv(denom), "reflection")


def weyl_direct(model: PotentialModel, cert: DecayCertificate, k: complex, *,
                opts: SolverOptions = DEFAULT_OPTIONS) -> WeylMatrixValue:
    """M(k) = f_+(k, 0) f_+'(k, 0)^{-1}."""
    f, fp, _ = jost_arrays(model, cert, [complex(k)], [0.0], side="+", opts=opts)
    return WeylMatrixValue(complex(k), f[0, 0] @ np.linalg.inv(fp[0, 0]), "direct")
