"""Half-line problem: Jost matrix, scattering matrix, bound states, normalization matrices.

Conventions
-----------
The boundary condition ``-B^H psi(0) + A^H psi'(0) = 0`` is parametrised by a
unitary ``U`` through ``A = (U + I)/2`` and ``B = (i/2)(U - I)``.  The Jost
matrix is ``J(k) = f(-conj k, 0)^H B - f'(-conj k, 0)^H A`` and the
scattering matrix ``S(k) = -J(-k) J(k)^{-1}``.  Bound states sit at ``k = i k_j``
where ``det J`` vanishes; their normalization matrices can be obtained
either from the Gram integral of ``f_plus(i k_j, .)`` or from the residue
``C_j^2 = -i Res S``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import contour
from .errors import BoundaryError, BoundStateError, ContinuationError, ContourError, NearSingularError, NoPoleError
from .jost import DEFAULT_OPTIONS, SolverOptions, dagger, gram_plus, jost_arrays
from .potentials import DecayCertificate, PotentialModel
from .serialize import encode_matrix, encode_scalar

UNITARY_TOL = 1e-10
SINGULAR_TOL = 1e-12
KERNEL_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class BoundaryCondition:
    U: np.ndarray
    A: np.ndarray
    B: np.ndarray

    @property
    def n(self) -> int:
        return self.U.shape[0]

    @property
    def is_dirichlet(self) -> bool:
        return bool(np.allclose(self.U, -np.eye(self.n), atol=1e-12))

    def to_json(self) -> dict:
        return {"U": encode_matrix(self.U)}


def boundary_from_unitary(U, tol: float = UNITARY_TOL) -> BoundaryCondition:
    """Boundary matrices A = (U + I)/2, B = (i/2)(U - I) from a unitary U.

    Inputs within ``tol`` of unitary are replaced by their polar factor so the
    derived identities hold to rounding error.
    """
    U = np.atleast_2d(np.asarray(U, dtype=complex))
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        raise BoundaryError(f"U must be square, got shape {U.shape}")
    n = U.shape[0]
    eye = np.eye(n)
    defect = float(np.max(np.abs(U.conj().T @ U - eye)))
    if defect > tol:
        raise BoundaryError(f"U is not unitary (defect {defect:.3e})")
    w, _, vh = np.linalg.svd(U)
    U = w @ vh
    A = 0.5 * (U + eye)
    B = 0.5j * (U - eye)
    sa = np.max(np.abs(A.conj().T @ B - B.conj().T @ A))
    nm = np.max(np.abs(A.conj().T @ A + B.conj().T @ B - eye))
    if max(sa, nm) > 1e-12:  # pragma: no cover - guaranteed by construction
        raise BoundaryError("boundary matrices violate the self-adjointness identities")
    return BoundaryCondition(U, A, B)


def dirichlet(n: int = 1) -> BoundaryCondition:
    return boundary_from_unitary(-np.eye(n))


def neumann(n: int = 1) -> BoundaryCondition:
    return boundary_from_unitary(np.eye(n))


# --------------------------------------------------------------------------- Jost matrix


@dataclass(frozen=True, eq=False)
class JostMatrixValue:
    k: complex
    J: np.ndarray
    detJ: complex
    scale: float
    err_est: float


def _f_at_zero(model, cert, ws, opts):
    f, fp, err = jost_arrays(model, cert, ws, [0.0], opts=opts)
    return f[:, 0], fp[:, 0], err[:, 0]


def _jost_parts(bc: BoundaryCondition, model, cert, ks, opts):
    f, fp, err = _f_at_zero(model, cert, -np.conj(ks), opts)
    J = dagger(f) @ bc.B - dagger(fp) @ bc.A
    scale = _scale(bc, ks, f, fp)
    return J, scale, err * scale


def _scale(bc, ks, f, fp):
    """Size of the terms in J: independent of whether f(0) itself is small."""
    w = np.maximum(1.0, np.abs(ks))
    size = np.maximum(np.linalg.norm(f, 2, axis=(-2, -1)), np.linalg.norm(fp, 2, axis=(-2, -1)) / w)
    return size * (np.linalg.norm(bc.B, 2) + w * np.linalg.norm(bc.A, 2))


def _check_dims(bc, model):
    if bc.n != model.n:
        raise BoundaryError(f"boundary dimension {bc.n} does not match potential dimension {model.n}")
    if model.line != "half":
        raise ValueError("half-line scattering needs a half-line potential")


def jost_matrix_arrays(bc: BoundaryCondition, model: PotentialModel, cert: DecayCertificate, ks, *,
                       opts: SolverOptions = DEFAULT_OPTIONS) -> np.ndarray:
    _check_dims(bc, model)
    return _jost_parts(bc, model, cert, np.atleast_1d(np.asarray(ks, dtype=complex)), opts)[0]


def jost_matrix(bc: BoundaryCondition, model: PotentialModel, cert: DecayCertificate, k: complex, *,
                opts: SolverOptions = DEFAULT_OPTIONS) -> JostMatrixValue:
    """J(k) = f(-conj k, 0)^H B - f'(-conj k, 0)^H A."""
    _check_dims(bc, model)
    J, scale, err = _jost_parts(bc, model, cert, np.array([complex(k)]), opts)
    return JostMatrixValue(complex(k), J[0], complex(np.linalg.det(J[0])), float(scale[0]), float(err[0]))


# --------------------------------------------------------------------------- scattering matrix


def scattering_matrix_arrays(bc: BoundaryCondition, model: PotentialModel, cert: DecayCertificate, ks, *,
                             opts: SolverOptions = DEFAULT_OPTIONS, check: bool = True) -> np.ndarray:
    """S(k) = -J(-k) J(k)^{-1} for each k in ``ks``."""
    _check_dims(bc, model)
    ks = np.atleast_1d(np.asarray(ks, dtype=complex))
    J, scale, _ = _jost_parts(bc, model, cert, np.concatenate([ks, -ks]), opts)
    Jk, Jm = J[: len(ks)], J[len(ks):]
    if check:
        smin = np.linalg.svd(Jk, compute_uv=False)[:, -1]
        bad = smin < SINGULAR_TOL * scale[: len(ks)]
        if np.any(bad):
            k_bad = ks[np.flatnonzero(bad)[0]]
            raise NearSingularError(f"J(k) is singular at k={k_bad:.6g}: near bound state or spectral singularity")
    return -np.linalg.solve(Jk.swapaxes(-1, -2), Jm.swapaxes(-1, -2)).swapaxes(-1, -2)


def scattering_matrix(bc: BoundaryCondition, model: PotentialModel, cert: DecayCertificate, k: complex, *,
                      opts: SolverOptions = DEFAULT_OPTIONS) -> np.ndarray:
    return scattering_matrix_arrays(bc, model, cert, [k], opts=opts)[0]


def s_evaluator(bc: BoundaryCondition, model: PotentialModel, cert: DecayCertificate, *,
                opts: SolverOptions = DEFAULT_OPTIONS, check: bool = False):
    """Vectorised callable ks -> S(ks), shape (len(ks), n, n)."""
    def evaluate(ks):
        return scattering_matrix_arrays(bc, model, cert, ks, opts=opts, check=check)

    evaluate.n = model.n
    evaluate.cert = cert
    return evaluate


@dataclass(frozen=True, eq=False)
class HalfLineScattering:
    ks: np.ndarray
    S: np.ndarray

    def unitarity_defect(self) -> float:
        eye = np.eye(self.S.shape[-1])
        return float(np.max(np.abs(dagger(self.S) @ self.S - eye))) if len(self.ks) else 0.0

    def to_json(self) -> list[dict]:
        return [{"k": encode_scalar(k), "matrix": encode_matrix(m)} for k, m in zip(self.ks, self.S)]


def scattering_grid(bc, model, cert, ks, *, opts: SolverOptions = DEFAULT_OPTIONS) -> HalfLineScattering:
    ks = np.atleast_1d(np.asarray(ks, dtype=complex))
    return HalfLineScattering(ks, scattering_matrix_arrays(bc, model, cert, ks, opts=opts))


# --------------------------------------------------------------------------- bound states


@dataclass(frozen=True, eq=False)
class BoundStateHalfLine:
    """Bound state at k = i kj.  Fields other than ``kj`` are filled in as they are computed."""

    kj: float
    multiplicity: int = 1
    residual: float = 0.0
    P: np.ndarray | None = None
    C: np.ndarray | None = None
    C2: np.ndarray | None = None
    resS: np.ndarray | None = None
    err_est: float = 0.0
    simple: bool | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {"kj": self.kj, "multiplicity": self.multiplicity, "err_est": self.err_est}
        for key in ("C2", "P", "resS", "C"):
            val = getattr(self, key)
            if val is not None:
                out["Cj2" if key == "C2" else key if key != "P" else "Pj"] = encode_matrix(val)
        if self.diagnostics:
            out["diagnostics"] = self.diagnostics
        return out


def _sigma_profile(bc, model, cert, opts):
    def g(kappas):
        J, scale, _ = _jost_parts(bc, model, cert, 1j * np.asarray(kappas, dtype=float), opts)
        return np.linalg.svd(J, compute_uv=False)[:, -1] / scale
    return g


def _det_fn(bc, model, cert, opts):
    def det(ks):
        J, scale, _ = _jost_parts(bc, model, cert, np.asarray(ks, dtype=complex), opts)
        return np.linalg.det(J / scale[:, None, None])
    return det


def _polish(bc, model, cert, kap, opts, max_iter: int = 8):
    """Secant iteration on h(kappa) = u^H J(i kappa) v with (u, v) the smallest singular pair.

    Brent minimisation of the singular value stalls at ~sqrt(eps) relative
    accuracy; h is analytic and crosses zero linearly, so the secant step
    reaches rounding level in a few iterations.
    """
    J, scale, _ = _jost_parts(bc, model, cert, np.array([1j * kap]), opts)
    u, _, vh = np.linalg.svd(J[0])
    u0, v0 = u[:, -1], vh[-1].conj()

    def h(x):
        Jx, sc, _ = _jost_parts(bc, model, cert, np.array([1j * x]), opts)
        return complex(u0.conj() @ Jx[0] @ v0) / sc[0]

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


def contour_radius(kj: float, others, gamma: float) -> float:
    """Default radius 0.5 min(gamma - kj, gap to the nearest other pole, kj)."""
    return 0.5 * _radius_bound(kj, others, gamma)


def _radius_bound(kj, others, gamma):
    gaps = [abs(kj - o) for o in others if o != kj]
    return min(gamma - kj, min(gaps, default=math.inf), kj)


def find_bound_states(bc: BoundaryCondition, model: PotentialModel, cert: DecayCertificate, k_max: float, *,
                      opts: SolverOptions = DEFAULT_OPTIONS, n_scan: int | None = None,
                      verify: bool = True) -> list[BoundStateHalfLine]:
    """Zeros of det J(i kappa) for kappa in (0, k_max], in increasing order.

    Candidates come from minima of the scale-relative smallest singular value
    of J(i kappa).  The count is cross-checked against the argument principle
    for det J on a box around the segment; when the strip certificate allows
    it, pole simplicity of S is checked on shrinking circles.
    """
    _check_dims(bc, model)
    if k_max <= 0:
        raise ValueError("k_max must be positive")
    n_scan = n_scan or max(200, int(40 * k_max))
    lo = k_max / n_scan / 4
    g = _sigma_profile(bc, model, cert, opts)
    found = []
    # coarse Brent, then secant polish; the kernel test is applied at the polished point
    for kap, val in contour.axis_minima(g, lo, k_max, n=n_scan, xatol=1e-7):
        if val > 1e-3:
            continue
        kap = _polish(bc, model, cert, kap, opts)
        J, scale, _ = _jost_parts(bc, model, cert, np.array([1j * kap]), opts)
        sv = np.linalg.svd(J[0], compute_uv=False) / scale[0]
        if sv[-1] > KERNEL_TOL:
            continue
        mult = int(np.sum(sv < 1e-6))
        found.append(BoundStateHalfLine(kap, max(mult, 1), float(sv[-1])))

    if verify:
        total = sum(b.multiplicity for b in found)
        count = contour.argument_count(_det_fn(bc, model, cert, opts), (-0.5 * k_max, 0.5 * k_max), (lo, k_max))
        if count != total:
            raise BoundStateError(f"argument principle counts {count} zeros but {total} were refined "
                                  f"(kappa = {[b.kj for b in found]})")
        if found and cert.expmoment_finite:
            s_eval = s_evaluator(bc, model, cert, opts=opts)
            kjs = [b.kj for b in found]
            checked = []
            for b in found:
                if cert.gamma <= b.kj:
                    checked.append(b)
                    continue
                r = 0.5 * contour_radius(b.kj, kjs, cert.gamma)
                spread = contour.pole_order_spread(s_eval, 1j * b.kj, r)
                simple = spread[2] <= 0.5 * spread[0] + 1e-12
                checked.append(BoundStateHalfLine(b.kj, b.multiplicity, b.residual, simple=simple,
                                                  diagnostics={"pole_spread": spread}))
            found = checked
    return found


# --------------------------------------------------------------------------- normalization


def _kernel_projection(J, scale):
    u, s, _ = np.linalg.svd(J)
    ker = u[:, s < KERNEL_TOL * scale]
    return ker @ ker.conj().T


def _inv_sqrt(M):
    w, v = np.linalg.eigh(0.5 * (M + M.conj().T))
    if w.min() <= 0:
        raise BoundStateError(f"Gram restriction is not positive definite (min eigenvalue {w.min():.3e})")
    return (v / np.sqrt(w)) @ v.conj().T


def normalization_direct(bc: BoundaryCondition, model: PotentialModel, cert: DecayCertificate, kj: float, *,
                         opts: SolverOptions = DEFAULT_OPTIONS) -> BoundStateHalfLine:
    """P_j onto ker J(i kj)^H and C_j = P_j (P_j G P_j + I - P_j)^{-1/2} P_j-structured.

    G is the Gram integral of f_plus(i kj, x) over [0, inf); beyond the
    certified truncation point the free tail is integrated exactly.
    """
    _check_dims(bc, model)
    k = 1j * float(kj)
    f0, fp0, G = gram_plus(model, cert, k, opts=opts)
    J = dagger(f0) @ bc.B - dagger(fp0) @ bc.A
    scale = float(_scale(bc, np.array([k]), f0[None], fp0[None])[0])
    P = _kernel_projection(J, scale)
    rank = int(round(np.trace(P).real))
    if rank == 0:
        raise BoundStateError(f"J(i {kj:g}) has trivial kernel; not a bound state")
    eye = np.eye(model.n)
    C = P @ _inv_sqrt(P @ G @ P + eye - P)
    C = 0.5 * (C + C.conj().T)
    err = opts.rtol * 10 * np.linalg.norm(G, 2)
    if not model.bounded:
        err += math.exp(-2 * kj * cert.x_max)
    return BoundStateHalfLine(float(kj), rank, float(np.linalg.svd(J, compute_uv=False)[-1] / scale), P=P, C=C,
                              C2=C @ C, err_est=float(err), diagnostics={"gram": encode_matrix(G)})


@dataclass(frozen=True, eq=False)
class ResidueNormalization:
    C2: np.ndarray
    res: np.ndarray
    radius: float
    nodes: int
    change: float
    hermitian_defect: float
    pole: float


def normalization_from_residue(s_eval, kj: float, radius: float, *, m: int = 64, tol: float = 1e-9,
                               psd_tol: float = 1e-6) -> ResidueNormalization:
    """C_j^2 = -i Res_{k = i kj} S(k) from a circle of the given radius."""
    center = 1j * float(kj)
    cert = getattr(s_eval, "cert", None)
    if cert is not None:
        if not cert.expmoment_finite:
            raise ContinuationError("residue extraction needs a finite exponential moment")
        if radius >= cert.gamma - kj:
            raise ContourError(f"radius {radius:g} reaches outside the strip (gamma - kj = {cert.gamma - kj:g})")
    if radius >= kj:
        raise ContourError(f"radius {radius:g} reaches the real axis")
    stacked = contour.residue(lambda z: _with_moment(s_eval, z, center), center, radius, m=m, tol=tol)
    res = contour.Residue(stacked.value[0], stacked.center, stacked.radius, stacked.nodes, stacked.change)
    # a simple pole at p gives Res[(k - c) S] = (p - c) Res[S]
    tr = np.trace(res.value)
    shift = complex(np.trace(stacked.value[1]) / tr) if abs(tr) > 0 else 0j
    probe = np.asarray(s_eval(contour.circle_points(center, radius, 8)))
    size = radius * float(np.max(np.abs(probe)))
    if float(np.max(np.abs(res.value))) <= 1e-8 * max(size, 1e-300):
        raise NoPoleError(f"no pole of S inside the circle |k - i{kj:g}| = {radius:g}")
    C2 = -1j * res.value
    defect = float(np.max(np.abs(C2 - C2.conj().T)))
    C2 = 0.5 * (C2 + C2.conj().T)
    w = np.linalg.eigvalsh(C2)
    if w.min() < -psd_tol * max(abs(w).max(), 1e-300):
        raise ContourError(f"residue matrix is not positive semidefinite (eigenvalues {w}); contour contamination?")
    return ResidueNormalization(C2, res.value, res.radius, res.nodes, res.change, defect, float((center + shift).imag))


def _with_moment(s_eval, z, center):
    S = np.asarray(s_eval(z))
    return np.stack([S, (z - center)[:, None, None] * S], axis=1)


def _psd_sqrt(M):
    w, v = np.linalg.eigh(M)
    w = np.clip(w, 0, None)
    return (v * np.sqrt(w)) @ v.conj().T


def _range_projection(M, rel=KERNEL_TOL):
    w, v = np.linalg.eigh(M)
    keep = v[:, w > rel * max(abs(w).max(), 1e-300)]
    return keep @ keep.conj().T


# --------------------------------------------------------------------------- scattering data


@dataclass(frozen=True, eq=False)
class ScatteringData:
    """Scattering data {S(k) on a real grid, (k_j, C_j)} of a half-line problem."""

    ks: np.ndarray
    S: np.ndarray
    bound_states: list

    def to_json(self) -> dict:
        return {"S": HalfLineScattering(self.ks, self.S).to_json(),
                "bound_states": [b.to_json() for b in self.bound_states]}


def pole_scan(s_eval, k_max: float, *, n_scan: int | None = None, threshold: float = 1e-6) -> list[float]:
    """Poles of S on the positive imaginary axis from minima of 1/||S(i kappa)||."""
    n_scan = n_scan or max(100, int(20 * k_max))
    lo = k_max / n_scan / 4

    def g(kappas):
        S = np.asarray(s_eval(1j * np.asarray(kappas, dtype=float)))
        return 1.0 / np.linalg.norm(S, 2, axis=(-2, -1))

    return [kap for kap, val in contour.axis_minima(g, lo, k_max, n=n_scan) if val < threshold]


def reconcile(detj_roots, poles, tol: float = 1e-8) -> list[tuple[float, float]]:
    """Pair det-J zeros with S poles; raise if the counts or positions disagree."""
    detj_roots, poles = sorted(detj_roots), sorted(poles)
    if len(detj_roots) != len(poles):
        raise BoundStateError(f"pole scan found {len(poles)} poles but det J has {len(detj_roots)} zeros")
    pairs = list(zip(detj_roots, poles))
    for a, b in pairs:
        if abs(a - b) > tol * max(1.0, a):
            raise BoundStateError(f"det J zero {a:.12g} and S pole {b:.12g} do not match")
    return pairs


def extract_scattering_data(s_eval, cert: DecayCertificate, k_max: float, *, ks_real=None,
                            n_scan: int | None = None, detj_roots=None, radius: float | None = None,
                            tol: float = 1e-9) -> ScatteringData:
    """Recover {S(k), k_j, C_j} from an S evaluator alone.

    Poles are located where ||S(i kappa)|| blows up on (0, min(k_max, gamma));
    the normalization matrices come from contour residues.  When
    ``detj_roots`` is given the two pole lists are reconciled.
    """
    if not cert.expmoment_finite or cert.gamma <= 0:
        raise ContinuationError("S on the imaginary axis needs a finite exponential moment with gamma > 0")
    k_hi = min(k_max, cert.gamma * (1 - 1e-6))
    poles = pole_scan(s_eval, k_hi, n_scan=n_scan)
    states = []
    floor = 1e-3
    for kj in poles:
        r_max = _radius_bound(kj, poles, cert.gamma)
        r = radius if radius is not None else 0.5 * r_max
        diag = {}
        if r > r_max:
            raise ContourError(f"radius {r:g} exceeds min(gamma - kj, gap, kj) = {r_max:g}")
        if r < floor:
            diag["warning"] = "near-coincident poles: merged contour"
            r = floor
        rn = normalization_from_residue(s_eval, kj, r, tol=tol)
        kj = rn.pole
        P = _range_projection(rn.C2)
        diag.update({"radius": rn.radius, "nodes": rn.nodes, "residue_change": rn.change,
                     "hermitian_defect": rn.hermitian_defect})
        states.append(BoundStateHalfLine(kj, int(round(np.trace(P).real)), P=P, C=_psd_sqrt(rn.C2), C2=rn.C2,
                                         resS=rn.res, err_est=max(rn.change, 1e-10), diagnostics=diag))
    if detj_roots is not None:
        reconcile(detj_roots, [b.kj for b in states], tol=1e-8)
    if ks_real is None:
        ks = np.empty(0)
        S = np.empty((0, s_eval.n, s_eval.n), dtype=complex)
    else:
        ks = np.asarray(ks_real, dtype=complex)
        S = np.asarray(s_eval(ks))
    return ScatteringData(ks, S, states)
