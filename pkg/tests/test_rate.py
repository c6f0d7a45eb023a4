import numpy as np
import pytest

from branchlab import (
    RateProfile,
    ReachabilityError,
    TorusGrid,
    constant_media,
    kernel_asymptotic,
    legendre_transform,
)
from branchlab.rate_function import (
    aronson_bound,
    calibrate_aronson,
    effective_velocity,
    front_normalizer,
)


@pytest.fixture(scope="module")
def const_profile():
    # a=1, b=1, r=0.5: mu(zeta) = zeta^2/2 + zeta + 1/2, so
    # Phi(c) = (c-1)^2/2 - 1/2 with minimizer zeta_hat = c - 1
    media = constant_media(1, a=1.0, b=1.0, alpha=0.5, beta=0.0)
    return RateProfile(media, n=32)


def test_constant_rate_closed_form(const_profile):
    for c, phi_exact in ((1.0, -0.5), (0.0, 0.0), (2.0, 0.0), (3.0, 1.5)):
        pt = legendre_transform(const_profile, np.array([c]))
        assert pt.value == pytest.approx(phi_exact, abs=1e-9)
        assert pt.zeta_hat[0] == pytest.approx(c - 1.0, abs=1e-7)


def test_zero_drift_examples():
    # a=1, b=0, r=0.5: Phi(c) = c^2/2 - 1/2; Phi(1)=0 with zeta_hat=1,
    # Phi(0)=-1/2
    media = constant_media(1, a=1.0, b=0.0, alpha=0.5, beta=0.0)
    prof = RateProfile(media, n=32)
    p1 = legendre_transform(prof, np.array([1.0]))
    assert p1.value == pytest.approx(0.0, abs=1e-9)
    assert p1.zeta_hat[0] == pytest.approx(1.0, abs=1e-7)
    p0 = legendre_transform(prof, np.array([0.0]))
    assert p0.value == pytest.approx(-0.5, abs=1e-10)
    assert p0.zeta_hat[0] == pytest.approx(0.0, abs=1e-7)


def test_legendre_involution(cosine_profile_small):
    prof = cosine_profile_small
    zeta = np.array([0.7])
    c = prof.ell(zeta)
    pt = legendre_transform(prof, c)
    # the transform inverts ell: recover the tilt and the pairing value
    assert pt.zeta_hat[0] == pytest.approx(0.7, abs=1e-6)
    assert pt.value == pytest.approx(float(zeta @ c) - prof.mu(zeta), abs=1e-8)


def test_effective_velocity_is_ell_at_zero(cosine_profile_small):
    v = effective_velocity(cosine_profile_small)
    np.testing.assert_allclose(v, cosine_profile_small.ell(np.zeros(1)),
                               atol=1e-13)
    pt = legendre_transform(cosine_profile_small, v)
    assert pt.value == pytest.approx(-cosine_profile_small.mu(np.zeros(1)),
                                     abs=1e-8)
    assert np.max(np.abs(pt.zeta_hat)) < 1e-6


def test_unreachable_velocity_raises(cosine_profile_small):
    with pytest.raises(ReachabilityError):
        legendre_transform(cosine_profile_small, np.array([50.0]))


def test_kernel_asymptotic_heat_kernel_value():
    # r=0: the asymptotic must reduce to the whole-line heat kernel,
    # (2 pi t)^{-1/2} at x=y=0, t=1
    media = constant_media(1, a=1.0, b=0.0, alpha=0.0, beta=0.0)
    prof = RateProfile(media, n=32)
    val = kernel_asymptotic(prof, 1.0, np.array([0.0]), np.array([0.0]))
    assert val == pytest.approx(1.0 / np.sqrt(2.0 * np.pi), abs=1e-9)
    assert val == pytest.approx(0.398942, abs=1e-6)


def test_kernel_asymptotic_with_growth():
    # r=0.5, t=2, x=y=0: (4 pi)^{-1/2} e^{1} = 0.7668131
    media = constant_media(1, a=1.0, b=0.0, alpha=0.5, beta=0.0)
    prof = RateProfile(media, n=32)
    val = kernel_asymptotic(prof, 2.0, np.array([0.0]), np.array([0.0]))
    expected = np.exp(1.0) / np.sqrt(4.0 * np.pi)
    assert val == pytest.approx(expected, abs=1e-8)
    assert val == pytest.approx(0.7668131, abs=1e-6)


def test_front_normalizer_constant_media():
    # closed form: (2 pi t)^{-d/2} det(D^2 Phi(vbar))^{1/2} e^{-t Phi(y/t + vbar)}
    # with a=1, r=0.5: D^2 Phi = 1, Phi(v) = v^2/2 - 1/2
    media = constant_media(1, a=1.0, b=0.0, alpha=0.5, beta=0.0)
    prof = RateProfile(media, n=32)
    t, y = 4.0, np.array([1.0])
    got = front_normalizer(prof, t, y)
    phi_v = (1.0 / 4.0) ** 2 / 2.0 - 0.5
    expected = (2 * np.pi * t) ** -0.5 * np.exp(-t * phi_v)
    assert got == pytest.approx(expected, rel=1e-7)
    assert got == pytest.approx(1.3007152, rel=1e-6)


def test_aronson_bound_dominates_asymptotic(cosine_profile_small):
    prof = cosine_profile_small
    pts = [(t, np.array([0.2]), np.array([y]))
           for t in (1.0, 2.0, 5.0) for y in (0.0, 0.5, 1.5)]
    reference = [(t, x, y, kernel_asymptotic(prof, t, x, y))
                 for (t, x, y) in pts]
    c_env = calibrate_aronson(prof, reference)
    assert c_env is not None
    for (t, x, y, v) in reference:
        assert aronson_bound(prof, c_env, t, x, y) >= v * (1.0 - 1e-9)


def test_kernel_asymptotic_matches_pde_column(cosine_profile_small):
    from branchlab import kernel_column

    prof = cosine_profile_small
    t = 8.0
    cells = 24
    grid = TorusGrid(1, prof.grid.n, cells=cells,
                     origin=(-(cells // 2),))
    x0 = np.array([0.0])
    col = kernel_column(prof.media, grid, x0, [t], dt=2e-3)[0]
    for y in (0.0, 1.0, 2.0):
        idx = grid.flat_index(grid.node_index(np.array([y])))
        asym = kernel_asymptotic(prof, t, x0, np.array([y]))
        assert float(col[idx]) == pytest.approx(asym, rel=5e-3)
