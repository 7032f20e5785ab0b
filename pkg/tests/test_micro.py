import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reinflow.constitutive import Bingham, Newtonian
from reinflow.exceptions import ReinflowError
from reinflow.micro import (HomogenizedLaw, RVEProblem, friction_coefficient, homogenized_flux,
                            seepage_flux, solve_boundary_layer, solve_cell,
                            tangent_permeability)
from reinflow.newton import SolverConfig

# Frozen reference values.  Default meshes (h = 0.07 for the cell, 0.05 for
# the boundary-layer stack) and Richardson extrapolation of the h/2, h/4
# runs (observed order 2).
K_025_DEFAULT = 0.04035839604971604
K_025_EXTRAPOLATED = 0.039804082756393515
K_0125_EXTRAPOLATED = 0.1298959799648038
C_BL_025_DEFAULT = -0.3046410956754978
C_BL_025_EXTRAPOLATED = -0.3038249458876249

BINGHAM = Bingham(20.0, 20.0, 15.0)


def dilute_square_array_permeability(xi, mu=1.0):
    """Series for a square array of cylinders in the dilute limit, for the
    stress law tau = mu D (effective Stokes viscosity mu / 2)."""
    c = math.pi * xi**2
    series = -math.log(c) - 1.476 + 2 * c - 1.774 * c**2 + 4.076 * c**3
    return (2.0 / mu) * xi**2 / (8 * c) * series


@pytest.fixture(scope="module")
def newtonian_cell():
    return RVEProblem(0.25, Newtonian(1.0))


@pytest.fixture(scope="module")
def bingham_cell():
    return RVEProblem(0.25, BINGHAM, config=SolverConfig(tol_rel=1e-12, tol_abs=1e-16))


def test_zero_driving_gives_zero_fields(newtonian_cell):
    sol = solve_cell(newtonian_cell, g=(0.3, -1.0), rhob=(0.3, -1.0))
    assert np.all(sol.u == 0) and np.all(sol.p == 0)


def test_reflection_symmetry(newtonian_cell):
    rve = newtonian_cell
    sol = solve_cell(rve, g=(-1.0, 0.0))
    X = rve.mesh.nodes[rve.op.vspace.nodes]
    u = sol.u.reshape(-1, 2)
    order = np.lexsort(np.round(X, 9).T)
    mirror = np.lexsort(np.round(X * (1, -1), 9).T)
    np.testing.assert_allclose(u[order, 0], u[mirror, 0], atol=1e-8 * np.abs(u).max())
    np.testing.assert_allclose(u[order, 1], -u[mirror, 1], atol=1e-8 * np.abs(u).max())
    assert abs(sol.flux[1]) < 1e-8 * np.linalg.norm(sol.flux)
    assert sol.flux[0] > 0


def test_linear_scaling(newtonian_cell):
    a = newtonian_cell.solve((0.4, -0.3))
    b = newtonian_cell.solve((0.8, -0.6))
    np.testing.assert_allclose(b.u, 2 * a.u, rtol=0, atol=1e-12 * np.abs(b.u).max())


def test_subscale_pressure_zero_mean_and_divergence_free(newtonian_cell):
    sol = newtonian_cell.solve((1.0, 0.5))
    w = newtonian_cell._p_weights
    assert abs(w @ sol.p) < 1e-12
    assert np.abs(newtonian_cell.divergence_residual(sol)).max() < 1e-12


def test_permeability_symmetric_isotropic(newtonian_cell):
    K = tangent_permeability(newtonian_cell)
    k = K[0, 0]
    assert abs(K[0, 1] - K[1, 0]) < 1e-6 * k
    assert abs(K[0, 1]) < 1e-8 * k and abs(K[1, 1] - k) < 1e-8 * k
    assert np.all(np.linalg.eigvalsh(K) > 0)


def test_permeability_matches_flux_finite_difference(newtonian_cell):
    K = tangent_permeability(newtonian_cell)
    base = np.array([0.2, -0.7])
    h = 1e-3
    for k in range(2):
        e = np.eye(2)[k] * h
        fd = (seepage_flux(newtonian_cell, newtonian_cell.solve(base + e))
              - seepage_flux(newtonian_cell, newtonian_cell.solve(base - e))) / (2 * h)
        np.testing.assert_allclose(fd, K[:, k], rtol=1e-10, atol=1e-10 * K[0, 0])


def test_permeability_golden_value(newtonian_cell):
    assert newtonian_cell.porosity == pytest.approx(0.8058857161731094, rel=1e-12)
    k = tangent_permeability(newtonian_cell)[0, 0]
    assert k == pytest.approx(K_025_DEFAULT, rel=1e-9)
    assert abs(k - K_025_EXTRAPOLATED) / K_025_EXTRAPOLATED < 0.02


@pytest.mark.slow
def test_fine_mesh_permeability_matches_dilute_series():
    rve = RVEProblem(0.125, Newtonian(1.0), target_h=0.0175)
    k = tangent_permeability(rve)[0, 0]
    oracle = dilute_square_array_permeability(0.125)
    assert abs(k - oracle) / oracle < 2e-3
    assert abs(K_0125_EXTRAPOLATED - oracle) / oracle < 5e-4


def test_permeability_decreases_with_radius():
    ks = [tangent_permeability(RVEProblem(xi, Newtonian(1.0)))[0, 0]
          for xi in (0.125, 0.2, 0.25, 0.3, 0.35)]
    assert np.all(np.diff(ks) < 0)


def test_permeability_inverse_in_viscosity():
    k1 = tangent_permeability(RVEProblem(0.25, Newtonian(1.0)))[0, 0]
    k20 = tangent_permeability(RVEProblem(0.25, Newtonian(20.0)))[0, 0]
    assert k20 == pytest.approx(k1 / 20, rel=1e-12)


def test_homogenized_law_linearity(rng):
    hl = HomogenizedLaw(xi=0.25, mu=1.0).fit()
    K = hl.permeability_
    rhob = np.array([0.5, 0.0])
    for g in rng.normal(size=(10, 2)):
        w, _ = homogenized_flux(hl, g, rhob)
        np.testing.assert_allclose(w, K @ (rhob - g), rtol=1e-10, atol=1e-14)


def test_homogenized_law_cache_hit_is_identical():
    hl = HomogenizedLaw(xi=0.25, mu=20.0, tau0=20.0, m=15.0).fit()
    f = np.array([[30.0, 5.0]])
    a = hl.evaluate(f)
    n = hl.n_cell_solves_
    b = hl.evaluate(f)
    assert hl.n_cell_solves_ == n
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()


def test_bingham_zero_yield_equals_newtonian(rng):
    plain = RVEProblem(0.25, Newtonian(3.0))
    degenerate = RVEProblem(0.25, Bingham(3.0, 0.0, 15.0))
    for f in rng.normal(size=(3, 2)):
        a, b = plain.solve(f), degenerate.solve(f)
        np.testing.assert_allclose(b.flux, a.flux, rtol=1e-10, atol=1e-10 * np.abs(a.flux).max())
    Kp = plain.tangent(a)
    assert np.abs(degenerate.tangent(b) - Kp).max() < 1e-10 * np.abs(Kp).max()


def test_bingham_tangent_matches_finite_difference(bingham_cell):
    f = np.array([30.0, 10.0])
    sol = bingham_cell.solve(f)
    K = bingham_cell.tangent(sol)
    h = 1e-4 * np.linalg.norm(f)
    for k in range(2):
        e = np.eye(2)[k] * h
        fd = (bingham_cell.solve(f + e, sol).flux - bingham_cell.solve(f - e, sol).flux) / (2 * h)
        assert np.linalg.norm(fd - K[:, k]) / np.linalg.norm(K[:, k]) < 1e-6


def test_bingham_tangent_symmetric_positive(bingham_cell):
    K = bingham_cell.tangent(bingham_cell.solve((25.0, -40.0)))
    assert abs(K[0, 1] - K[1, 0]) < 1e-6 * np.abs(K).max()
    assert np.all(np.linalg.eigvalsh(0.5 * (K + K.T)) > 0)


def test_bingham_high_force_direction_approaches_newtonian(bingham_cell):
    d = np.array([math.cos(0.3), math.sin(0.3)])
    k_newton = tangent_permeability(RVEProblem(0.25, Newtonian(20.0)))
    target = k_newton @ d
    target /= np.linalg.norm(target)
    errs = []
    for mag in (1e2, 1e4, 1e6):
        w = bingham_cell.solve(mag * d).flux
        errs.append(np.linalg.norm(w / np.linalg.norm(w) - target))
    assert errs[-1] < errs[0] and errs[-1] < 1e-3


def test_warm_start_matches_cold_start(bingham_cell):
    cold = bingham_cell.solve((40.0, 0.0))
    prev = bingham_cell.solve((35.0, 2.0))
    bingham_cell.tangent(prev)
    warm = bingham_cell.solve((40.0, 0.0), prev)
    assert np.linalg.norm(warm.flux - cold.flux) < 1e-9 * np.linalg.norm(cold.flux)
    assert warm.iterations <= cold.iterations


def test_cell_size_scaling():
    hl1 = HomogenizedLaw(xi=0.25, mu=20.0, tau0=20.0, m=15.0).fit()
    hl2 = HomogenizedLaw(xi=0.25, mu=20.0, tau0=20.0, m=15.0, cell_size=0.5).fit()
    f = np.array([[40.0, 12.0]])
    w1, K1 = hl1.evaluate(0.5 * f)
    w2, K2 = hl2.evaluate(f)
    np.testing.assert_allclose(w2, 0.5 * w1, rtol=1e-12)
    np.testing.assert_allclose(K2, 0.25 * K1, rtol=1e-12)


def test_threaded_evaluation_matches_serial():
    F = np.array([[30.0, 0.0], [0.0, 45.0], [20.0, -20.0], [60.0, 5.0]])
    a = HomogenizedLaw(xi=0.25, mu=20.0, tau0=20.0, m=15.0).fit().evaluate(F, keys=range(4))
    b = HomogenizedLaw(xi=0.25, mu=20.0, tau0=20.0, m=15.0, n_threads=3).fit().evaluate(
        F, keys=range(4))
    for x, y in zip(a, b):
        assert x.tobytes() == y.tobytes()


def test_estimator_api():
    hl = HomogenizedLaw(xi=0.125, mu=2.0)
    assert hl.get_params()["xi"] == 0.125
    hl.set_params(mu=4.0).fit()
    X = np.array([[1.0, 0.0], [0.0, 2.0]])
    np.testing.assert_allclose(hl.predict(X), X @ hl.permeability_.T)
    assert HomogenizedLaw.from_law(0.25, BINGHAM).law == BINGHAM
    with pytest.raises(ValueError):
        hl.evaluate(np.ones((2, 3)))


def test_unfitted_law_rejected():
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        HomogenizedLaw().evaluate([[1.0, 0.0]])


@settings(max_examples=15)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.1, 10))
def test_newtonian_flux_linear_in_force(fx, fy, a):
    hl = _shared_newtonian_law()
    w1, _ = hl.evaluate([[fx, fy]])
    w2, _ = hl.evaluate([[a * fx, a * fy]])
    np.testing.assert_allclose(w2, a * w1, rtol=1e-12, atol=1e-15)


_LAW = {}


def _shared_newtonian_law():
    if "n" not in _LAW:
        _LAW["n"] = HomogenizedLaw(xi=0.25, mu=1.0).fit()
    return _LAW["n"]


# --- boundary layer ----------------------------------------------------------


@pytest.mark.parametrize("xi", [0.125, 0.25, 0.35])
def test_boundary_layer_constant_negative(xi):
    bl = solve_boundary_layer(xi)
    assert bl.C_bl < 0 and bl.beta > 0


def test_boundary_layer_without_obstacle():
    # without bars the stack is a sheared film of unit depth: C_bl = -1
    assert solve_boundary_layer(0.0, target_h=0.1).C_bl == pytest.approx(-1.0, rel=1e-10)


def test_boundary_layer_small_obstacle_tends_to_empty_cell():
    # 2D Stokes drag on a small cylinder decays only like 1 / ln(1 / xi),
    # so the approach to the empty-stack value is slow but monotone
    c = [solve_boundary_layer(xi, target_h=0.1).C_bl for xi in (0.1, 0.03, 0.01, 0.001)]
    assert np.all(np.diff(c) < 0) and c[-1] > -1.0


def test_boundary_layer_golden_value():
    bl = solve_boundary_layer(0.25)
    assert bl.C_bl == pytest.approx(C_BL_025_DEFAULT, rel=1e-9)
    assert abs(bl.C_bl - C_BL_025_EXTRAPOLATED) / abs(C_BL_025_EXTRAPOLATED) < 5e-3


def test_boundary_layer_truncation():
    c4 = solve_boundary_layer(0.25, free_cells=4).C_bl
    c6 = solve_boundary_layer(0.25, free_cells=6).C_bl
    assert abs(c6 - c4) / abs(c4) < 1e-2


def test_friction_scales_with_viscosity():
    c = solve_boundary_layer(0.25).C_bl
    assert friction_coefficient(2.0, c) == 2 * friction_coefficient(1.0, c)
    b1 = solve_boundary_layer(0.25, Newtonian(1.0)).beta
    b2 = solve_boundary_layer(0.25, Newtonian(2.0)).beta
    assert b2 == 2 * b1


def test_friction_requires_negative_constant():
    with pytest.raises(ReinflowError):
        friction_coefficient(1.0, 0.1)


def test_boundary_layer_rejects_bingham():
    with pytest.raises(ValueError):
        solve_boundary_layer(0.25, BINGHAM)
