import numpy as np
import pytest

from branchlab import (
    RateProfile,
    TorusGrid,
    assemble_tilted,
    constant_media,
    effective_diffusivity,
    effective_drift,
    principal_eigen,
    solve_cell_problem,
    stationary_density,
)
from branchlab.homogenization import build_K, drift_field


def _triple(media, grid, zeta):
    op = assemble_tilted(media, grid, zeta)
    return op, principal_eigen(op)


def test_constant_media_cell_problem_is_trivial():
    media = constant_media(1, a=1.5, b=0.3, alpha=0.4, beta=0.0)
    grid = TorusGrid(1, 64)
    zeta = np.array([0.8])
    op, trip = _triple(media, grid, zeta)
    eta, ell, V = solve_cell_problem(media, grid, zeta, trip)
    # V = b + a zeta is position independent, so the corrector vanishes
    np.testing.assert_allclose(V, 0.3 + 1.5 * 0.8, atol=1e-10)
    np.testing.assert_allclose(ell, [0.3 + 1.5 * 0.8], atol=1e-10)
    assert np.max(np.abs(eta - eta.mean(axis=0))) < 1e-9
    xi, _, _ = effective_diffusivity(media, grid, zeta, trip)
    np.testing.assert_allclose(xi, [[1.5]], atol=1e-9)


def test_effective_drift_is_mu_gradient(cosine_media, cosine_profile_small):
    prof = cosine_profile_small
    h = 5e-4
    for z in (-0.6, 0.4):
        zeta = np.array([z])
        ell = prof.ell(zeta)
        fd = (prof.mu(np.array([z + h])) - prof.mu(np.array([z - h]))) / (2 * h)
        assert ell[0] == pytest.approx(fd, abs=5e-6)


def test_effective_diffusivity_is_mu_hessian(cosine_profile_small):
    prof = cosine_profile_small
    h = 5e-3
    z = 0.3
    xi = prof.xi(np.array([z]))
    fd = (prof.mu(np.array([z + h])) - 2 * prof.mu(np.array([z]))
          + prof.mu(np.array([z - h]))) / h ** 2
    assert fd > 0
    assert xi[0, 0] == pytest.approx(fd, abs=5e-5)


def test_cell_operator_annihilates_constants(cosine_media):
    grid = TorusGrid(1, 48)
    zeta = np.array([0.5])
    op, trip = _triple(cosine_media, grid, zeta)
    K = build_K(cosine_media, grid, zeta, trip)
    ones = np.ones(grid.size)
    assert np.max(np.abs(K.sparse @ ones)) < 1e-9


def test_stationary_density_normalized(cosine_media):
    grid = TorusGrid(1, 48)
    op, trip = _triple(cosine_media, grid, np.array([0.2]))
    psi = stationary_density(trip)
    assert np.all(psi > 0)
    assert grid.integrate(psi) == pytest.approx(1.0, abs=1e-12)


def test_drift_field_constant_media():
    media = constant_media(1, a=2.0, b=-0.4, alpha=0.3, beta=0.0)
    grid = TorusGrid(1, 32)
    zeta = np.array([0.25])
    op, trip = _triple(media, grid, zeta)
    V = drift_field(media, grid, zeta, trip)
    np.testing.assert_allclose(V, -0.4 + 2.0 * 0.25, atol=1e-10)


def test_effective_drift_api_matches_cell_solution(cosine_media):
    grid = TorusGrid(1, 48)
    zeta = np.array([0.5])
    op, trip = _triple(cosine_media, grid, zeta)
    _, ell, _ = solve_cell_problem(cosine_media, grid, zeta, trip)
    ell2 = effective_drift(cosine_media, grid, zeta, trip)
    np.testing.assert_allclose(ell, ell2, atol=1e-13)


def test_diffusivity_2d_positive_definite():
    doc = {"dimension": 2,
           "a": [[1.0, 0.1], [0.1, 1.0]],
           "b": 0.0,
           "alpha": {"const": 0.4, "terms": [{"k": [1, 1], "cos": 0.2}]},
           "beta": 0.0}
    from branchlab import parse_media_spec
    media = parse_media_spec(doc)
    grid = TorusGrid(2, 24)
    zeta = np.array([0.2, -0.1])
    op, trip = _triple(media, grid, zeta)
    xi, eta, ell = effective_diffusivity(media, grid, zeta, trip)
    assert xi.shape == (2, 2)
    np.testing.assert_allclose(xi, xi.T, atol=1e-12)
    w = np.linalg.eigvalsh(xi)
    assert np.all(w > 0)
