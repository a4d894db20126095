import numpy as np
import pytest

from matscat import marchenko as mk
from matscat.errors import ReconstructionError, StageError
from matscat.halfline import boundary_from_unitary
from matscat.potentials import certify_decay, make_preset

import oracles as O

# lighter than the defaults; the default-resolution round trip runs in the acceptance suite
FAST = mk.MarchenkoSettings(K=300.0, dk=0.25, h=0.01, x_max=2.0)


def well(v0):
    m = make_preset("square_well", {"v0": v0, "a": 0.0, "b": 1.0})
    return m, certify_decay(m, 4.0)


@pytest.fixture(scope="module")
def deep_roundtrip():
    return mk.roundtrip(*well(-4.0), settings=FAST)


@pytest.fixture(scope="module")
def shallow_roundtrip():
    return mk.roundtrip(*well(-1.0), settings=FAST)


# --------------------------------------------------------------------------- kernel


def test_zero_data_gives_zero_kernel_and_potential():
    ks = FAST.k_grid()
    kern = mk.build_kernel(ks, -np.ones(len(ks)), [], h=0.02, x_max=1.0)
    assert np.abs(kern.Omega).max() < 1e-13
    res = mk.solve_marchenko(kern)
    assert np.abs(res.V).max() < 1e-10 and np.abs(res.V_cells).max() < 1e-10


def test_single_bound_state_kernel():
    kern = mk.build_kernel([], np.zeros((0, 1, 1)), [(1.0, 2.0)], h=0.01, x_max=2.0, decay_tol=None)
    assert np.allclose(kern.Omega[:, 0, 0], 2 * np.exp(-kern.s), atol=1e-15)


def test_kernel_matches_analytic_transform():
    beta = 1.5
    ks = mk.MarchenkoSettings(K=400.0, dk=0.05).k_grid()
    S = -(ks + 1j * beta) / (ks - 1j * beta)
    kern = mk.build_kernel(ks, S, [], h=0.01, x_max=2.0, K=400.0)
    assert np.abs(kern.Omega[:, 0, 0] - O.reflection_kernel(kern.s, beta)).max() < 1e-5
    assert kern.diagnostics["hermitian_defect"] < 1e-12


def test_kernel_stable_under_resolution():
    ks, S = _well_data(-1.0, mk.MarchenkoSettings(K=300.0, dk=0.25))
    coarse = mk.build_kernel(ks, S, [], h=0.02, x_max=2.0)
    fine = mk.build_kernel(ks, S, [], h=0.002, x_max=2.0)
    assert np.allclose(coarse.Omega, fine.Omega[::10], atol=1e-14)


def test_kernel_rejects_bad_grids():
    with pytest.raises(ReconstructionError):
        mk.build_kernel([0.1, 0.3, 0.6], np.ones(3), [], h=0.01, x_max=1.0)
    with pytest.raises(ReconstructionError):
        mk.build_kernel([], np.zeros((0, 1, 1)), [], h=0.03, x_max=1.0)


def test_tail_misfit_detected():
    ks = mk.MarchenkoSettings(K=20.0, dk=0.25).k_grid()
    S = -np.exp(2j * np.sin(ks))
    with pytest.raises(ReconstructionError, match="tail"):
        mk.build_kernel(ks, S, [], h=0.01, x_max=1.0)


def test_missing_bound_state_detected():
    ks, S = _well_data(-4.0, FAST)
    with pytest.raises(ReconstructionError, match="decay"):
        mk.build_kernel(ks, S, [], h=0.01, x_max=2.0)
    kern = mk.build_kernel(ks, S, [], h=0.01, x_max=2.0, decay_tol=None)
    assert kern.diagnostics["tail_value"] > 1e-2 * kern.diagnostics["peak"]


def _well_data(v0, settings):
    from matscat.halfline import dirichlet, scattering_matrix_arrays
    m, c = well(v0)
    ks = settings.k_grid()
    return ks, scattering_matrix_arrays(dirichlet(m.n), m, c, ks)


# --------------------------------------------------------------------------- solver


def test_degenerate_kernel_solution():
    X = 2.0
    kern = mk.build_kernel([], np.zeros((0, 1, 1)), [(1.0, 2.0)], h=0.005, x_max=X, decay_tol=None)
    res = mk.solve_marchenko(kern)
    exact = O.degenerate_marchenko_potential(res.xs, 2.0, 1.0, X)
    assert np.abs(res.V[:, 0, 0] - exact).max() < 1e-4
    assert res.hermitian_defect < 1e-12
    assert np.abs(res.V.imag).max() < 1e-12


def test_refinement_contracts_error():
    X = 2.0
    errs = []
    for h in (0.02, 0.01, 0.005):
        kern = mk.build_kernel([], np.zeros((0, 1, 1)), [(1.0, 2.0)], h=h, x_max=X, decay_tol=None)
        res = mk.solve_marchenko(kern)
        errs.append(np.abs(res.V[:, 0, 0] - O.degenerate_marchenko_potential(res.xs, 2.0, 1.0, X)).max())
    assert errs[0] / errs[1] >= 2 and errs[1] / errs[2] >= 2


def test_solver_limits():
    kern = mk.build_kernel([], np.zeros((0, 1, 1)), [(1.0, 2.0)], h=0.01, x_max=1.0, decay_tol=None)
    with pytest.raises(ReconstructionError, match="ill-conditioned"):
        mk.solve_marchenko(kern, max_condition=1.0)
    res = mk.solve_marchenko(kern)
    assert res.defect < 1e-12 and res.condition < 1e3


def test_matrix_kernel_gives_hermitian_potential():
    C2 = np.array([[2.0, 0.5 - 0.5j], [0.5 + 0.5j, 1.0]])
    kern = mk.build_kernel([], np.zeros((0, 2, 2)), [(1.0, C2), (0.6, np.diag([0.3, 0.0]))], h=0.01,
                           x_max=1.5, decay_tol=None)
    res = mk.solve_marchenko(kern)
    assert res.hermitian_defect < 1e-10
    assert np.array_equal(res.V, np.conj(np.swapaxes(res.V, -1, -2)))


# --------------------------------------------------------------------------- comparison helpers


def test_cell_averages_exact_for_step():
    m, _ = well(-2.0)
    avg = mk.cell_averages(m, [0.0, 0.5, 0.75, 1.25, 2.0])[:, 0, 0]
    assert np.allclose(avg, [-2.0, -2.0, -1.0, 0.0], atol=1e-14)


def test_compare_reports_zero_for_exact_result():
    m, _ = well(-1.0)
    xs = np.arange(0, 201) * 0.01
    exact_cells = mk.cell_averages(m, xs)
    res = mk.ReconstructionResult(xs, m.evaluate(xs), xs[:-1] + 0.005, exact_cells, np.zeros_like(exact_cells),
                                  0.0, 0.0, 1.0)
    met = mk.compare(res, m)
    assert met["L1"] < 1e-15 and met["sup_away_from_jumps"] == 0.0


# --------------------------------------------------------------------------- round trips


def test_roundtrip_shallow_well(shallow_roundtrip):
    rep = shallow_roundtrip
    assert rep.bound_states == []
    assert rep.metrics["L1"] < 2e-3 and rep.metrics["sup_away_from_jumps"] < 1e-3
    assert np.abs(rep.result.V.imag).max() < 1e-12


def test_roundtrip_deep_well_and_ablation(deep_roundtrip):
    rep = deep_roundtrip
    assert len(rep.bound_states) == 1
    assert rep.metrics["L1"] < 1e-2
    ablated = mk.roundtrip(*well(-4.0), settings=mk.MarchenkoSettings(**{**FAST.__dict__,
                                                                           "include_bound_states": False}))
    assert ablated.metrics["L1"] > 0.1
    assert ablated.metrics["L1"] > 100 * rep.metrics["L1"]


def test_roundtrip_diagonal_matches_scalar_blocks(shallow_roundtrip, deep_roundtrip):
    rep = mk.roundtrip(*well(np.diag([-1.0, -4.0])), settings=FAST)
    for ch, scalar in enumerate((shallow_roundtrip, deep_roundtrip)):
        assert np.abs(rep.result.V[:, ch, ch] - scalar.result.V[:, 0, 0]).max() < 1e-6
    assert np.abs(rep.result.V[:, 0, 1]).max() < 1e-10


def test_roundtrip_report_json(shallow_roundtrip):
    js = shallow_roundtrip.to_json()
    assert set(js) == {"metrics", "bound_states", "settings", "kernel", "solve"}
    assert js["settings"]["K"] == 300.0


def test_roundtrip_requires_dirichlet():
    with pytest.raises(ValueError):
        mk.roundtrip(*well(-1.0), boundary_from_unitary([[1.0]]), FAST)


def test_roundtrip_stage_error():
    m, c = well(-1.0)
    with pytest.raises(StageError) as info:
        mk.roundtrip(m, c, settings=mk.MarchenkoSettings(K=300.0, dk=0.25, h=0.03, x_max=1.0))
    assert info.value.stage == "kernel"
