"""Acceptance suite: the advertised behavior guarantees, one line each.

Every test pins its grids, step sizes, seeds, and tolerances; nothing is
tuned at run time. Wall-clock budgets are asserted where the guarantee
includes one. Two sub-clauses that are unattainable in double precision
(see the strict xfails and their reasons) are kept as separate lines so
the main criterion lines stay honest.
"""

import json
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from branchlab import (
    GammaEvaluator,
    RateProfile,
    SimConfig,
    TorusGrid,
    assemble_raw_moment,
    constant_media,
    effective_velocity,
    legendre_transform,
    make_cube_target,
    parse_media_spec,
    run_replicas,
    solve_hierarchy,
    total_moment_fk,
)
from branchlab.intermittency import region_scan
from branchlab.moments import check_local_limit
from branchlab.rate_function import compare_kernel

CONFIGS = os.path.join(os.path.dirname(__file__), "..", "configs")


def test_criterion_01_constant_media_closed_forms():
    t0 = time.monotonic()
    for b in (0.0, 0.7):
        for r in (0.0, 0.5):
            media = constant_media(1, a=1.0, b=b, alpha=r, beta=0.0)
            prof = RateProfile(media, n=256)
            for z in (-2.0, -1.0, 0.0, 1.0, 2.0):
                mu = prof.mu(np.array([z]))
                assert abs(mu - (z * z / 2 + b * z + r)) < 1e-6
            vbar = effective_velocity(prof)
            assert abs(vbar[0] - b) < 1e-6
            for c in (-1.0, 0.0, 0.5, 1.7):
                pt = legendre_transform(prof, np.array([c]))
                assert abs(pt.value - ((c - b) ** 2 / 2 - r)) < 1e-6
                assert abs(pt.zeta_hat[0] - (c - b)) < 1e-6
    assert time.monotonic() - t0 < 10.0


def test_criterion_02_drift_diffusivity_match_mu_derivatives(cosine_profile):
    t0 = time.monotonic()
    prof = cosine_profile
    tilts = np.linspace(-2.0, 2.0, 9)
    h_grad, h_hess = 1e-4, 5e-3
    for z in tilts:
        ell = prof.ell(np.array([z]))[0]
        fd1 = (prof.mu(np.array([z + h_grad]))
               - prof.mu(np.array([z - h_grad]))) / (2 * h_grad)
        assert abs(ell - fd1) < 1e-5
        xi = prof.xi(np.array([z]))[0, 0]
        fd2 = (prof.mu(np.array([z + h_hess])) - 2 * prof.mu(np.array([z]))
               + prof.mu(np.array([z - h_hess]))) / h_hess ** 2
        assert fd2 > 0
        assert abs(xi - fd2) < 1e-4
    assert time.monotonic() - t0 < 60.0


def test_criterion_03_legendre_hessian_duality(cosine_profile):
    prof = cosine_profile
    for z in np.linspace(-2.0, 2.0, 9):
        zeta = np.array([z])
        v = prof.ell(zeta)
        lt = legendre_transform(prof, v)
        residual = abs(lt.value + prof.mu(zeta) - float(zeta @ v))
        assert residual < 1e-9
        # D2Phi(ell(zeta)) is the inverse of Xi at the recovered tilt
        det_prod = float(np.linalg.det(prof.xi(zeta))
                         / np.linalg.det(prof.xi(lt.zeta_hat)))
        assert abs(det_prod - 1.0) < 1e-6


def test_criterion_04_kernel_asymptotics_ratio(cosine_profile):
    t0 = time.monotonic()
    rows = compare_kernel(cosine_profile, (5.0, 10.0, 20.0), 0.0,
                          (0.0, 1.0, 2.0, 3.0), cells=40, dt=1e-3, n=256)
    dev = {}
    for r in rows:
        dev.setdefault(r["y"], {})[r["t"]] = abs(r["ratio"] - 1.0)
        if r["t"] == 20.0:
            assert 0.9 <= r["ratio"] <= 1.1
    for y, per_t in dev.items():
        assert per_t[20.0] < per_t[10.0] < per_t[5.0], \
            f"ratio deviation not improving with t at y={y}: {per_t}"
    assert time.monotonic() - t0 < 300.0


def test_criterion_05_moment_limits_homogeneous_oracle(yule_media):
    t0 = time.monotonic()
    grid = TorusGrid(1, 16)
    table = total_moment_fk(yule_media, grid, 5, dt=5e-5, tail_tol=1e-8)
    for k in range(2, 6):
        err = float(np.max(np.abs(table.f(k) - math.factorial(k))))
        assert err < 1e-6, f"f_{k} off by {err:.3e}"
    t_obs = 8.0
    fields = solve_hierarchy(yule_media, grid, "total", 5, [t_obs], dt=1e-3)
    scaled = [float(f.values[0].mean()) * math.exp(-f.order * t_obs)
              for f in fields]
    for k in (1, 2, 3):
        rel = abs(scaled[k - 1] - math.factorial(k)) / math.factorial(k)
        assert rel < 1e-3, f"scaled moment k={k} off by {rel:.3e}"
    # the k=4,5 scaled moments still carry their exact transient factor
    # (1 - e^-t)^{k-1}; verify the solver against that closed form here
    # and leave the limit comparison to the strict xfail below
    for k in (4, 5):
        exact = math.factorial(k) * (1.0 - math.exp(-t_obs)) ** (k - 1)
        rel = abs(scaled[k - 1] - exact) / exact
        assert rel < 1e-4, f"transient moment k={k} off by {rel:.3e}"
    assert time.monotonic() - t0 < 120.0


@pytest.mark.xfail(strict=True, reason=(
    "at t=8 the exact scaled moment is k!(1-e^-t)^{k-1}, which sits "
    "(k-1)e^-8 ~ 1.0e-3 (k=4) and 1.3e-3 (k=5) below k!; no solver can "
    "close a gap that the exact transient leaves above the 1e-3 target"))
def test_criterion_05_scaled_moments_k4_k5_reach_limits(yule_media):
    grid = TorusGrid(1, 16)
    fields = solve_hierarchy(yule_media, grid, "total", 5, [8.0], dt=1e-3)
    for k in (4, 5):
        scaled = float(fields[k - 1].values[0].mean()) * math.exp(-k * 8.0)
        rel = abs(scaled - math.factorial(k)) / math.factorial(k)
        assert rel < 1e-3


def _gamma2_bruteforce(v, r=1.0):
    """Dense (w, u) scan with one zoom pass, using the closed-form gamma_1."""

    def g1(c):
        return r - c ** 2 / 2.0

    def scan(w_lo, w_hi, u_lo, u_hi, n):
        w = np.linspace(w_lo, w_hi, n)[:, None]
        u = np.linspace(u_lo, u_hi, n)[None, :]
        vals = u * 2.0 * g1((v - w) / u) + (1.0 - u) * g1(w / (1.0 - u))
        i, j = np.unravel_index(np.argmax(vals), vals.shape)
        return float(vals[i, j]), float(w[i, 0]), float(u[0, j])

    best, w0, u0 = scan(-4.0, 4.0, 1e-3, 1.0 - 1e-9, 400)
    dw, du = 8.0 / 399 * 1.5, (1.0 - 1e-3) / 399 * 1.5
    zoom, _, _ = scan(w0 - dw, w0 + dw, max(u0 - du, 1e-4),
                      min(u0 + du, 1.0 - 1e-9), 400)
    return max(best, zoom, 2.0 * g1(v))


def test_criterion_06_gamma_recursion_homogeneous_oracle():
    t0 = time.monotonic()
    media = constant_media(1, a=1.0, b=0.0, alpha=1.0, beta=0.0)
    prof = RateProfile(media, n=32)
    v_grid = np.linspace(-2.2, 2.2, 41)
    cell = v_grid[1] - v_grid[0]
    ev = GammaEvaluator(prof, 2, v_grid)
    for v, closed in ((0.5, 1.75), (1.5, 0.0)):
        got = ev.gamma(np.array([v]), 2)
        brute = _gamma2_bruteforce(v)
        assert abs(got - closed) < 1e-3
        assert abs(got - brute) < 1e-3
        assert abs(brute - closed) < 1e-3
    # closed-form linear branch 3r - 2 sqrt(r) |v| between sqrt(r) and 2 sqrt(r)
    for v in (1.2, 1.5, 1.8):
        got = ev.gamma(np.array([v]), 2)
        assert abs(got - (3.0 - 2.0 * v)) < 1e-3
    gap = ev.gap(np.array([1.5]), 2)
    assert abs(gap - 0.25) < 1e-3
    rep = region_scan(ev)
    assert abs(rep.g1_boundary_radius - math.sqrt(2.0)) <= cell
    assert abs(rep.inner_radius[1] - 1.0) <= cell
    assert time.monotonic() - t0 < 180.0


def test_criterion_07_region_properties_cosine(cosine_profile_small):
    prof = cosine_profile_small
    vbar = prof.ell(np.zeros(1))
    mu0 = prof.mu(np.zeros(1))
    v_grid = vbar[0] + np.linspace(-2.2, 2.2, 41)
    ev = GammaEvaluator(prof, 3, v_grid)
    rep = region_scan(ev)
    for k in (2, 3):
        jensen = rep.gamma[k - 1] - k * rep.gamma[0]
        assert np.min(jensen) >= -1e-8, f"Jensen floor violated at k={k}"
        assert np.max(rep.gamma[k - 1]) <= k * mu0 + 1e-8, f"cap violated at k={k}"
        assert np.min(rep.gamma[k - 1] - rep.gamma[k - 2]) >= -1e-8, \
            f"monotonicity in k violated at k={k}"
    for alpha in (0.25, 0.5, 0.75):
        for k in (1, 2, 3):
            for v in v_grid[::4]:
                inner = vbar + alpha * (np.array([v]) - vbar)
                assert ev.gamma(inner, k) >= ev.gamma(np.array([v]), k) - 1e-8, \
                    f"radial monotonicity violated at k={k}, v={v}, alpha={alpha}"
    assert rep.nesting_violations == 0


def test_criterion_08_monte_carlo_vs_theory(cosine_media, cosine_profile):
    t0 = time.monotonic()
    R, seed = 10_000, 42
    # (a) binary fission at unit rate: geometric population at t=2
    yule = constant_media(1, a=1.0, b=0.0, alpha=1.0, beta=0.0)
    stats = run_replicas(SimConfig(media=yule, times=(2.0,), dt=2e-3,
                                   n_replicas=R, seed=seed))
    m1 = stats.get("total", 2.0, 1)
    m2 = stats.get("total", 2.0, 2)
    e2 = math.exp(2.0)
    assert abs(m1.mean - e2) < 3 * m1.se
    assert abs(m2.mean - 2.0 * e2 ** 2) < 3 * m2.se
    # the geometric law pins the second moment exactly; this form is
    # seed-robust where the 2e^4 comparison above rides its fluctuation
    assert abs(m2.mean - (2.0 * e2 ** 2 - e2)) < 3 * m2.se
    # (b) critical medium (alpha = beta): total mass is a martingale
    crit = parse_media_spec({
        "dimension": 1,
        "a": 1.0, "b": 0.0,
        "alpha": {"const": 0.5, "terms": [{"k": [1], "cos": 0.3}]},
        "beta": {"const": 0.5, "terms": [{"k": [1], "cos": 0.3}]}})
    cstat = run_replicas(SimConfig(media=crit, times=(2.0,), dt=2e-3,
                                   n_replicas=R, seed=seed))
    cm = cstat.get("total", 2.0, 1)
    assert abs(cm.mean - 1.0) < 3 * cm.se
    # (c) + (d) one cosine-media run, both horizons and all targets
    prof = cosine_profile
    mu0 = prof.mu(np.zeros(1))
    trip = prof.triple(np.zeros(1))
    phi0 = float(np.asarray(trip.phi).ravel()[0])  # node at x=0
    cs = run_replicas(SimConfig(
        media=cosine_media, times=(6.0, 10.0), dt=5e-3, n_replicas=R,
        seed=seed, targets=("total",
                            make_cube_target(np.array([0.0])),
                            make_cube_target(np.array([2.0])))))
    tot = cs.get("total", 6.0, 1)
    z_total = (tot.mean - phi0 * math.exp(6.0 * mu0)) / tot.se
    assert abs(z_total) < 3
    cells = 24
    grid = TorusGrid(1, 256, cells=cells, origin=(-(cells // 2),))
    for y in (0.0, 2.0):
        ref_field = solve_hierarchy(cosine_media, grid,
                                    ("cube", np.array([y])), 1, [10.0],
                                    dt=1e-3)[0]
        ref = float(ref_field.values[0][
            grid.flat_index(grid.node_index(np.zeros(1)))])
        est = cs.get(f"cube@{y:g}", 10.0, 1)
        assert abs(est.mean - ref) < 3 * est.se, \
            f"cube count at y={y}: {est.mean:.4f} vs PDE {ref:.4f} (se {est.se:.4f})"
    assert time.monotonic() - t0 < 600.0


def test_criterion_09_front_convergence(cosine_media, cosine_profile):
    prof = cosine_profile
    mu0 = prof.mu(np.zeros(1))
    trip = prof.triple(np.zeros(1))
    phi = np.asarray(trip.phi).ravel()
    grid = TorusGrid(1, 256)
    times = [0.25, 0.5, 10.0]
    field = solve_hierarchy(cosine_media, grid, "total", 1, times, dt=1e-3)[0]
    dev = {t: float(np.max(np.abs(field.values[i] * math.exp(-mu0 * t) - phi)))
           for i, t in enumerate(times)}
    # the transient is visible while it is above the time-stepping bias
    assert dev[0.5] < dev[0.25]
    # and the scaled first moment has converged to phi uniformly
    assert dev[10.0] < 1e-6
    rows = check_local_limit(prof, 1, (10.0, 20.0, 40.0), math.sqrt,
                             x0=0.0, cells=40, dt=2e-3)
    devs = [r["deviation"] for r in rows]
    assert devs[2] < devs[1] < devs[0], \
        f"local-limit ratio not approaching its limit monotonically: {devs}"


@pytest.mark.xfail(strict=True, reason=(
    "the slow mode decays like e^{-19.7 t}, which is below double precision "
    "by t=5; what remains at t in {5,10} is the O(dt^2) time-stepping bias "
    "in mu, and that deviation grows linearly in t instead of shrinking"))
def test_criterion_09_sup_deviation_shrinks_from_t5_to_t10(cosine_media,
                                                           cosine_profile):
    prof = cosine_profile
    mu0 = prof.mu(np.zeros(1))
    phi = np.asarray(prof.triple(np.zeros(1)).phi).ravel()
    grid = TorusGrid(1, 256)
    field = solve_hierarchy(cosine_media, grid, "total", 1, [5.0, 10.0],
                            dt=1e-3)[0]
    dev5 = float(np.max(np.abs(field.values[0] * math.exp(-5.0 * mu0) - phi)))
    dev10 = float(np.max(np.abs(field.values[1] * math.exp(-10.0 * mu0) - phi)))
    assert dev10 < dev5


def test_criterion_10_validate_determinism_across_threads(tmp_path):
    outs = {}
    for tag, threads in (("one", "1"), ("eight", "8")):
        out = tmp_path / tag
        env = dict(os.environ)
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "BRANCHLAB_THREADS"):
            env[var] = threads
        r = subprocess.run(
            [sys.executable, "-m", "branchlab.cli", "validate",
             "--media", os.path.join(CONFIGS, "cosine.json"),
             "--seed", "42", "--out", str(out)],
            capture_output=True, text=True, env=env)
        assert r.returncode == 0, r.stdout + r.stderr
        assert r.stdout.strip().endswith("PASS")
        outs[tag] = (r.stdout, (out / "validate.json").read_bytes())
    assert outs["one"][0] == outs["eight"][0]
    assert outs["one"][1] == outs["eight"][1]
