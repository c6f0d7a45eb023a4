"""Command line driver.

Subcommands cover the laboratory workflows: principal eigenvalue scans
(eig), homogenized coefficients (homog), rate function scans (rate),
kernel validation tables (kernel), moment hierarchies and f_k tables
(moments), gamma/region maps (gamma), Monte Carlo runs (sim), and the
self-check suites (validate).

Every data command writes CSV files plus a JSON sidecar carrying the
media hash and the full parameter echo; outputs contain no timestamps,
so a rerun with the sidecar parameters reproduces the bytes exactly.
Exit codes: 0 success, 1 check/computation failure, 2 usage errors.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .branching_sim import CensoringError, SimConfig, run_replicas
from .intermittency import GammaEvaluator, region_scan
from .moments import assemble_raw_moment, solve_hierarchy, total_moment_fk
from .periodic_media import MediaConfigError, TorusGrid, parse_media_spec
from .rate_function import (RateProfile, ReachabilityError, compare_kernel,
                            effective_velocity, legendre_transform)
from .torus_spectral import (EigenConvergenceError, SemigroupInstabilityError,
                             assemble_tilted, evolve_semigroup)


class UsageError(Exception):
    pass


def _threads():
    raw = os.environ.get("BRANCHLAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _load_media(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise UsageError(f"cannot read media config {path}: {e}") from None
    try:
        return parse_media_spec(text)
    except MediaConfigError as e:
        raise UsageError(f"bad media config {path}: {e}") from None


def _default_grid(media):
    return 128 if media.dimension == 1 else 32


def _vector(text, d, name):
    parts = [p for p in text.replace(" ", "").split(",") if p]
    if len(parts) != d:
        raise UsageError(f"{name} needs {d} comma-separated values, got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise UsageError(f"{name}: cannot parse {text!r}") from None


def _float_list(text, name):
    try:
        return tuple(float(p) for p in text.replace(" ", "").split(",") if p)
    except ValueError:
        raise UsageError(f"{name}: cannot parse {text!r}") from None


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")


def _json_text(obj):
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _write_sidecar(outdir, command, media, params, outputs, summary=None):
    doc = {
        "command": command,
        "media_hash": media.media_hash(),
        "media": media.to_config(),
        "parameters": params,
        "outputs": sorted(outputs),
    }
    if summary is not None:
        doc["summary"] = summary
    path = os.path.join(outdir, f"{command}.json")
    with open(path, "w") as fh:
        fh.write(_json_text(doc))
    return path


def _ensure_out(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


# ---------------------------------------------------------------- commands

def cmd_eig(args):
    media = _load_media(args.media)
    d = media.dimension
    n = args.grid or _default_grid(media)
    zetas = [_vector(z, d, "--zeta") for z in (args.zeta or ["0" + ",0" * (d - 1)])]
    profile = RateProfile(media, n=n)

    def solve(z):
        tr = profile.triple(np.asarray(z))
        return tr

    nt = _threads()
    if nt > 1 and len(zetas) > 1:
        with ThreadPoolExecutor(max_workers=nt) as ex:
            triples = list(ex.map(solve, zetas))
    else:
        triples = [solve(z) for z in zetas]
    outdir = _ensure_out(args)
    header = [f"zeta{j}" for j in range(d)] + ["mu", "residual", "residual_star"]
    rows = [list(z) + [tr.mu, tr.residual, tr.residual_star]
            for z, tr in zip(zetas, triples)]
    csv_path = os.path.join(outdir, "eig.csv")
    _write_csv(csv_path, header, rows)
    outputs = ["eig.csv"]
    if args.dump_eigenfunctions:
        ef_header = [f"zeta{j}" for j in range(d)] + [f"x{j}" for j in range(d)] \
            + ["phi", "phi_star"]
        ef_rows = []
        for z, tr in zip(zetas, triples):
            pts = tr.grid.points()
            phi = np.asarray(tr.phi).ravel()
            phis = np.asarray(tr.phi_star).ravel()
            for i in range(pts.shape[0]):
                ef_rows.append(list(z) + list(pts[i]) + [phi[i], phis[i]])
        _write_csv(os.path.join(outdir, "eigenfunctions.csv"), ef_header, ef_rows)
        outputs.append("eigenfunctions.csv")
    params = {"media": args.media, "grid": n,
              "zeta": [list(z) for z in zetas],
              "dump_eigenfunctions": bool(args.dump_eigenfunctions)}
    summary = {"mu": [tr.mu for tr in triples]}
    _write_sidecar(outdir, "eig", media, params, outputs, summary)
    return 0


def cmd_homog(args):
    media = _load_media(args.media)
    d = media.dimension
    n = args.grid or _default_grid(media)
    zetas = [_vector(z, d, "--zeta") for z in (args.zeta or ["0" + ",0" * (d - 1)])]
    profile = RateProfile(media, n=n)
    outdir = _ensure_out(args)
    header = [f"zeta{j}" for j in range(d)] + ["mu"] \
        + [f"ell{j}" for j in range(d)] \
        + [f"xi{i}{j}" for i in range(d) for j in range(d)]
    rows = []
    for z in zetas:
        za = np.asarray(z)
        mu = profile.mu(za)
        ell = profile.ell(za)
        xi = profile.xi(za)
        rows.append(list(z) + [mu] + list(ell) + list(xi.ravel()))
    csv_path = os.path.join(outdir, "homog.csv")
    _write_csv(csv_path, header, rows)
    params = {"media": args.media, "grid": n, "zeta": [list(z) for z in zetas]}
    _write_sidecar(outdir, "homog", media, params, ["homog.csv"])
    return 0


def cmd_rate(args):
    media = _load_media(args.media)
    d = media.dimension
    n = args.grid or _default_grid(media)
    if not args.v:
        raise UsageError("rate: pass at least one velocity with --v")
    vels = [_vector(v, d, "--v") for v in args.v]
    profile = RateProfile(media, n=n)
    vbar = effective_velocity(profile)
    outdir = _ensure_out(args)
    header = [f"v{j}" for j in range(d)] + ["phi"] \
        + [f"zeta_hat{j}" for j in range(d)] + ["gamma1", "newton_iterations"]
    rows = []
    for v in vels:
        lt = legendre_transform(profile, np.asarray(v))
        rows.append(list(v) + [lt.value] + list(lt.zeta_hat)
                    + [-lt.value, lt.iterations])
    csv_path = os.path.join(outdir, "rate.csv")
    _write_csv(csv_path, header, rows)
    params = {"media": args.media, "grid": n, "v": [list(v) for v in vels]}
    summary = {"vbar": list(vbar),
               "mu0": profile.mu(np.zeros(d))}
    _write_sidecar(outdir, "rate", media, params, ["rate.csv"], summary)
    return 0


def cmd_kernel(args):
    media = _load_media(args.media)
    if media.dimension != 1:
        raise UsageError("kernel tables are 1-d only")
    n = args.grid or _default_grid(media)
    times = _float_list(args.times, "--times")
    ys = _float_list(args.ys, "--ys")
    profile = RateProfile(media, n=n)
    rows = compare_kernel(profile, times, args.x0, ys,
                          cells=args.cells, dt=args.dt, n=n)
    outdir = _ensure_out(args)
    csv_path = os.path.join(outdir, "kernel.csv")
    _write_csv(csv_path, ["t", "y", "pde", "asymptotic", "ratio"],
               [[r["t"], r["y"], r["pde"], r["asymptotic"], r["ratio"]] for r in rows])
    params = {"media": args.media, "grid": n, "times": list(times),
              "ys": list(ys), "x0": args.x0, "cells": args.cells, "dt": args.dt}
    _write_sidecar(outdir, "kernel", media, params, ["kernel.csv"])
    return 0


def cmd_moments(args):
    media = _load_media(args.media)
    d = media.dimension
    n = args.grid or (64 if d == 1 else 24)
    times = _float_list(args.times, "--times")
    grid = TorusGrid(d, n)
    if args.target == "total":
        target = "total"
    else:
        target = ("cube", _vector(args.corner, d, "--corner"))
    x0 = np.asarray(_vector(args.x0, d, "--x0"))
    fields = solve_hierarchy(media, grid, target, args.kmax, times, dt=args.dt)
    idx = grid.flat_index(grid.node_index(x0))
    outdir = _ensure_out(args)
    rows = []
    for ti, t in enumerate(times):
        for k in range(1, args.kmax + 1):
            raw = assemble_raw_moment([f.values[ti] for f in fields[:k]], k)
            rows.append([t, k, float(fields[k - 1].values[ti][idx]), float(raw[idx])])
    csv_path = os.path.join(outdir, "moments.csv")
    _write_csv(csv_path, ["t", "k", "mbar_k", "raw_k"], rows)
    outputs = ["moments.csv"]
    summary = {}
    if args.fk:
        fk = total_moment_fk(media, grid, args.kmax, dt=args.fk_dt)
        fk_rows = []
        for k in range(1, args.kmax + 1):
            vals = np.asarray(fk.f(k)).ravel()
            fk_rows.append([k, float(vals[idx]), float(vals.min()), float(vals.max()),
                            fk.horizons[k - 1], fk.tails[k - 1]])
        _write_csv(os.path.join(outdir, "fk.csv"),
                   ["k", "fk_at_x0", "fk_min", "fk_max", "horizon", "tail"], fk_rows)
        outputs.append("fk.csv")
        summary["mu"] = fk.mu
    params = {"media": args.media, "grid": n, "kmax": args.kmax,
              "times": list(times), "target": args.target, "corner": args.corner,
              "x0": args.x0, "dt": args.dt, "fk": bool(args.fk), "fk_dt": args.fk_dt}
    _write_sidecar(outdir, "moments", media, params, outputs, summary or None)
    return 0


def cmd_gamma(args):
    media = _load_media(args.media)
    d = media.dimension
    n = args.grid or (64 if d == 1 else 16)
    profile = RateProfile(media, n=n)
    vbar = profile.ell(np.zeros(d))
    axis = np.linspace(args.vmin, args.vmax, args.vcount)
    if d == 1:
        v_grid = vbar[0] + axis if args.relative else axis
    else:
        a0 = (vbar[0] + axis) if args.relative else axis
        a1 = (vbar[1] + axis) if args.relative else axis
        g0, g1m = np.meshgrid(a0, a1, indexing="ij")
        v_grid = np.stack([g0.ravel(), g1m.ravel()], axis=-1)
    ev = GammaEvaluator(profile, args.kmax, v_grid,
                        gamma1_nodes=args.gamma1_nodes)
    rep = region_scan(ev)
    outdir = _ensure_out(args)
    header = [f"v{j}" for j in range(d)] + ["k", "gamma_k", "gap"] \
        + [f"argsup_w{j}" for j in range(d)] + ["argsup_u", "boundary_flag"]
    rows = []
    nodes = np.atleast_2d(rep.v_nodes.reshape(-1, d) if d > 1
                          else rep.v_nodes[:, np.newaxis])
    for i in range(nodes.shape[0]):
        for k in range(1, args.kmax + 1):
            if k == 1:
                diag = [math.nan] * d + [math.nan, "exact"]
            else:
                dd = ev.diagnostics[k]
                diag = list(np.atleast_1d(dd["argsup_w"][i])) \
                    + [float(dd["argsup_u"][i]), dd["flag"][i]]
            rows.append(list(nodes[i]) + [k, rep.gamma[k - 1, i], rep.gap[k - 1, i]]
                        + diag)
    _write_csv(os.path.join(outdir, "gamma.csv"), header, rows)
    reg_header = [f"v{j}" for j in range(d)] \
        + [f"in_G{k}" for k in range(1, args.kmax + 1)]
    reg_rows = [list(nodes[i]) + [int(rep.members[k - 1, i])
                                  for k in range(1, args.kmax + 1)]
                for i in range(nodes.shape[0])]
    _write_csv(os.path.join(outdir, "regions.csv"), reg_header, reg_rows)
    params = {"media": args.media, "grid": n, "kmax": args.kmax,
              "vmin": args.vmin, "vmax": args.vmax, "vcount": args.vcount,
              "relative": bool(args.relative), "gamma1_nodes": args.gamma1_nodes}
    summary = {"mu0": rep.mu0, "vbar": list(rep.vbar),
               "g1_boundary_radius": rep.g1_boundary_radius,
               "inner_radius": list(rep.inner_radius),
               "nesting_violations": rep.nesting_violations}
    _write_sidecar(outdir, "gamma", media, params,
                   ["gamma.csv", "regions.csv"], summary)
    return 0


def _parse_sim_target(text, d):
    if text == "total":
        return "total"
    parts = text.split(":")
    if parts[0] != "cube" or len(parts) not in (2, 3):
        raise UsageError(f"target must be 'total' or 'cube:corner[:velocity]', got {text!r}")
    corner = _vector(parts[1], d, "cube corner")
    vel = _vector(parts[2], d, "cube velocity") if len(parts) == 3 else None
    return ("cube", corner, vel)


def cmd_sim(args):
    media = _load_media(args.media)
    d = media.dimension
    times = _float_list(args.times, "--times")
    targets = tuple(_parse_sim_target(t, d) for t in (args.target or ["total"]))
    x0 = _vector(args.x0, d, "--x0") if args.x0 else None
    try:
        cfg = SimConfig(media=media, times=times, dt=args.dt,
                        n_replicas=args.replicas, seed=args.seed,
                        targets=targets, x0=x0, cap=args.cap,
                        chunk_size=args.chunk_size)
    except ValueError as e:
        raise UsageError(f"sim: {e}") from None
    stats = run_replicas(cfg)
    outdir = _ensure_out(args)
    rows = []
    for label in stats.estimates:
        for t in stats.estimates[label]:
            for p, mom in stats.estimates[label][t].items():
                rows.append([t, label, p, mom.mean, mom.variance, mom.n,
                             mom.se, stats.n_censored])
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    csv_path = os.path.join(outdir, "sim.csv")
    _write_csv(csv_path, ["t", "target", "power", "mean", "variance",
                          "n_replicas", "se", "censored_count"], rows)
    params = {"media": args.media, "times": list(times), "dt": args.dt,
              "replicas": args.replicas, "seed": args.seed,
              "target": list(args.target or ["total"]), "x0": args.x0,
              "cap": args.cap, "chunk_size": args.chunk_size}
    summary = {"n_used": stats.n_used, "n_censored": stats.n_censored}
    _write_sidecar(outdir, "sim", media, params, ["sim.csv"], summary)
    return 0


# ---------------------------------------------------------------- validate

def _check(name, value, bound):
    value = float(value)
    bound = float(bound)
    return {"name": name, "value": value, "bound": bound,
            "ok": bool(value <= bound)}


def _media_is_constant(media):
    fields = [s for row in media.a for s in row] + list(media.b) \
        + [media.alpha, media.beta]
    return all(f.is_constant for f in fields)


def _suite_duality(media, n, seed):
    d = media.dimension
    profile = RateProfile(media, n=n)
    checks = []
    z_list = [np.zeros(d)]
    z1 = np.zeros(d)
    z1[0] = 0.4
    z_list.append(z1)
    for i, z in enumerate(z_list):
        tr = profile.triple(z)
        checks.append(_check(f"eig_residual_zeta{i}",
                             max(tr.residual, tr.residual_star), 1e-10))
    op = assemble_tilted(media, profile.grid, z1)
    pts = profile.grid.points()
    f = 1.0 + 0.5 * np.cos(2.0 * np.pi * pts[:, 0])
    g = 1.0 + 0.25 * np.sin(2.0 * np.pi * pts[:, 0])
    lhs = float(np.sum(g * (op.sparse @ f)))
    rhs = float(np.sum(f * (op.transposed().sparse @ g)))
    checks.append(_check("adjoint_pairing",
                         abs(lhs - rhs) / max(1.0, abs(lhs)), 1e-11))
    for i, z in enumerate(z_list):
        v = profile.ell(z)
        lt = legendre_transform(profile, v)
        resid = abs(lt.value + profile.mu(z) - float(np.sum(z * v)))
        checks.append(_check(f"legendre_identity_zeta{i}", resid, 1e-9))
        det_prod = float(np.linalg.det(profile.xi(z))
                         / np.linalg.det(profile.xi(lt.zeta_hat)))
        checks.append(_check(f"hessian_product_zeta{i}", abs(det_prod - 1.0), 1e-6))
    vbar = profile.ell(np.zeros(d))
    lt0 = legendre_transform(profile, vbar)
    checks.append(_check("phi_at_vbar",
                         abs(lt0.value + profile.mu(np.zeros(d))), 1e-8))
    if _media_is_constant(media):
        a0 = media.a_values(np.zeros((1, d)))[0]
        b0 = media.b_values(np.zeros((1, d)))[0]
        r0 = float(media.rate(np.zeros((1, d)))[0])
        expect = 0.5 * float(z1 @ a0 @ z1) + float(b0 @ z1) + r0
        checks.append(_check("mu_closed_form", abs(profile.mu(z1) - expect), 1e-6))
    return checks


def _suite_kernel(media, n, seed):
    d = media.dimension
    checks = []
    if d == 1:
        profile = RateProfile(media, n=64)
        rows = compare_kernel(profile, (4.0, 8.0), 0.0, (0.0, 1.0),
                              cells=12, dt=2e-3, n=64)
        dev = {4.0: 0.0, 8.0: 0.0}
        for r in rows:
            dev[r["t"]] = max(dev[r["t"]], abs(r["ratio"] - 1.0))
        checks.append(_check("ratio_window_t8", dev[8.0], 0.5))
        checks.append(_check("ratio_trend", dev[8.0] - dev[4.0], 0.05))
    grid = TorusGrid(d, 32 if d == 1 else 16)
    op = assemble_tilted(media, grid, np.zeros(d))
    u0 = np.ones(grid.size)
    coarse = evolve_semigroup(op, u0, [2.0], dt=2e-3)[0]
    fine = evolve_semigroup(op, u0, [2.0], dt=1e-3)[0]
    m_c = grid.integrate(coarse)
    m_f = grid.integrate(fine)
    checks.append(_check("mass_dt_refinement", abs(m_c - m_f) / abs(m_f), 1e-4))
    checks.append(_check("positivity", -float(np.min(fine)), 1e-8))
    return checks


def _suite_moments(media, n, seed):
    d = media.dimension
    grid = TorusGrid(d, 16 if d == 1 else 12)
    t = 2.0
    fields = solve_hierarchy(media, grid, "total", 3, [t], dt=1e-3)
    m1 = fields[0].values[0]
    m2 = fields[1].values[0]
    checks = [_check("m1_positive", -float(np.min(m1)), 1e-12)]
    raw2 = m2 + m1
    checks.append(_check("raw_second_jensen",
                         float(np.max(m1 ** 2 - raw2)), 1e-10))
    coarse = solve_hierarchy(media, grid, "total", 1, [t], dt=2e-3)[0].values[0]
    rel = float(np.max(np.abs(coarse - m1)) / np.max(np.abs(m1)))
    checks.append(_check("m1_dt_refinement", rel, 1e-4))
    if media.alpha.is_constant and media.beta.is_constant and media.beta.const == 0 \
            and media.alpha.const > 0:
        al = media.alpha.const
        for k in range(1, 4):
            exact = math.factorial(k) * math.exp(k * al * t) \
                * (1.0 - math.exp(-al * t)) ** (k - 1)
            got = float(fields[k - 1].values[0][0])
            checks.append(_check(f"pure_birth_mbar{k}",
                                 abs(got - exact) / exact, 2e-4))
    return checks


def _suite_gamma(media, n, seed):
    d = media.dimension
    profile = RateProfile(media, n=48 if d == 1 else 16)
    vbar = profile.ell(np.zeros(d))
    mu0 = profile.mu(np.zeros(d))
    is_const = _media_is_constant(media)
    r0 = float(media.rate(np.zeros((1, d)))[0]) if is_const else None
    span = 2.2
    if is_const and r0 is not None and r0 > 0:
        span = max(2.2, 2.2 * math.sqrt(r0))
    # 2-d scans cost ~quadratically in nodes; 9 per axis keeps the suite
    # under a minute while still spanning the regions
    axis = np.linspace(-span, span, 23 if d == 1 else 9)
    if d == 1:
        v_grid = vbar[0] + axis
    else:
        g0, g1m = np.meshgrid(vbar[0] + axis, vbar[1] + axis, indexing="ij")
        v_grid = np.stack([g0.ravel(), g1m.ravel()], axis=-1)
    ev = GammaEvaluator(profile, 2, v_grid, gamma1_nodes=129)
    rep = region_scan(ev)
    checks = [
        _check("jensen_floor",
               -float(np.min(rep.gamma[1] - 2.0 * rep.gamma[0])), 1e-8),
        _check("cap_at_vbar",
               float(np.max(rep.gamma[1])) - 2.0 * mu0, 1e-7),
        _check("gamma2_at_vbar",
               abs(ev.gamma(np.atleast_1d(vbar), 2) - 2.0 * mu0), 1e-6),
        _check("monotone_in_k",
               -float(np.min(rep.gamma[1] - rep.gamma[0])), 1e-8),
        _check("nesting_violations", rep.nesting_violations, 0),
    ]
    if is_const and r0 is not None and r0 > 0:
        root = math.sqrt(r0)
        v_probe = np.atleast_1d(vbar).copy()
        v_probe[0] += 1.5 * root
        g2 = ev.gamma(v_probe, 2)
        expected = 3.0 * r0 - 2.0 * root * 1.5 * root
        scale = max(1.0, r0)
        checks.append(_check("closed_form_gamma2",
                             abs(g2 - expected), 1e-3 * scale))
        gap = ev.gap(v_probe, 2)
        checks.append(_check("closed_form_gap",
                             abs(gap - 0.25 * r0), 1e-3 * scale))
    return checks


def _suite_simulation(media, n, seed):
    d = media.dimension
    cfg = SimConfig(media=media, times=(1.0,), dt=5e-3, n_replicas=400,
                    seed=seed, targets=("total",))
    stats = run_replicas(cfg)
    stats2 = run_replicas(cfg)
    same = np.array_equal(stats.raw.counts, stats2.raw.counts)
    grid = TorusGrid(d, 32 if d == 1 else 16)
    m1 = solve_hierarchy(media, grid, "total", 1, [1.0], dt=1e-3)[0].values[0]
    idx = grid.flat_index(grid.node_index(np.zeros(d)))
    mom = stats.get("total", 1.0, 1)
    z = abs(mom.mean - float(m1[idx])) / max(mom.se, 1e-9)
    return [
        _check("determinism", 0.0 if same else 1.0, 0.0),
        _check("censored_replicas", stats.n_censored, 0.0),
        _check("mean_total_z", z, 4.0),
    ]


_SUITES = {
    "duality": _suite_duality,
    "kernel": _suite_kernel,
    "moments": _suite_moments,
    "gamma": _suite_gamma,
    "simulation": _suite_simulation,
}


def cmd_validate(args):
    media = _load_media(args.media)
    suites = args.suite or sorted(_SUITES)
    for s in suites:
        if s not in _SUITES:
            raise UsageError(f"unknown suite {s!r}; choose from {sorted(_SUITES)}")
    n = args.grid or (64 if media.dimension == 1 else 16)
    report = {"command": "validate", "media_hash": media.media_hash(),
              "parameters": {"media": args.media, "suite": list(suites),
                             "grid": n, "seed": args.seed},
              "suites": {}}
    all_ok = True
    failed = 0
    total = 0
    for s in suites:
        checks = _SUITES[s](media, n, args.seed)
        ok = all(c["ok"] for c in checks)
        report["suites"][s] = {"checks": checks, "ok": ok}
        all_ok = all_ok and ok
        total += len(checks)
        failed += sum(1 for c in checks if not c["ok"])
    report["ok"] = all_ok
    text = _json_text(report)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "validate.json"), "w") as fh:
            fh.write(text)
    sys.stdout.write(text)
    sys.stdout.write("PASS\n" if all_ok else f"FAIL ({failed} of {total} checks)\n")
    return 0 if all_ok else 1


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(
        prog="branchlab",
        description="numerical laboratory for branching diffusions in periodic media")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--media", required=True, help="path to a media JSON config")
        sp.add_argument("--grid", type=int, default=None, help="nodes per unit cell")
        if out_required:
            sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("eig", help="principal eigenvalue of the tilted operator")
    common(sp)
    sp.add_argument("--zeta", action="append", help="tilt vector, comma separated")
    sp.add_argument("--dump-eigenfunctions", action="store_true")
    sp.set_defaults(func=cmd_eig)

    sp = sub.add_parser("homog", help="effective drift and diffusivity")
    common(sp)
    sp.add_argument("--zeta", action="append")
    sp.set_defaults(func=cmd_homog)

    sp = sub.add_parser("rate", help="rate function scan")
    common(sp)
    sp.add_argument("--v", action="append", help="velocity, comma separated")
    sp.set_defaults(func=cmd_rate)

    sp = sub.add_parser("kernel", help="kernel asymptotics vs time stepping")
    common(sp)
    sp.add_argument("--times", required=True)
    sp.add_argument("--ys", required=True)
    sp.add_argument("--x0", type=float, default=0.0)
    sp.add_argument("--cells", type=int, default=24)
    sp.add_argument("--dt", type=float, default=1e-3)
    sp.set_defaults(func=cmd_kernel)

    sp = sub.add_parser("moments", help="moment hierarchy and f_k table")
    common(sp)
    sp.add_argument("--kmax", type=int, default=3)
    sp.add_argument("--times", required=True)
    sp.add_argument("--target", choices=["total", "cube"], default="total")
    sp.add_argument("--corner", default="0")
    sp.add_argument("--x0", default="0")
    sp.add_argument("--dt", type=float, default=1e-3)
    sp.add_argument("--fk", action="store_true", help="also compute the f_k limits")
    sp.add_argument("--fk-dt", type=float, default=5e-4)
    sp.set_defaults(func=cmd_moments)

    sp = sub.add_parser("gamma", help="moment rates gamma_k and regions G_k")
    common(sp)
    sp.add_argument("--kmax", type=int, default=2)
    sp.add_argument("--vmin", type=float, default=-2.2)
    sp.add_argument("--vmax", type=float, default=2.2)
    sp.add_argument("--vcount", type=int, default=41)
    sp.add_argument("--relative", action="store_true",
                    help="velocity grid is relative to vbar")
    sp.add_argument("--gamma1-nodes", type=int, default=257)
    sp.set_defaults(func=cmd_gamma)

    sp = sub.add_parser("sim", help="Monte Carlo branching diffusion")
    common(sp)
    sp.add_argument("--times", required=True)
    sp.add_argument("--dt", type=float, default=1e-3)
    sp.add_argument("--replicas", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--target", action="append",
                    help="'total' or 'cube:corner[:velocity]'")
    sp.add_argument("--x0", default=None)
    sp.add_argument("--cap", type=int, default=1_000_000)
    sp.add_argument("--chunk-size", type=int, default=256)
    sp.set_defaults(func=cmd_sim)

    sp = sub.add_parser("validate", help="run self-check suites")
    sp.add_argument("--media", required=True)
    sp.add_argument("--grid", type=int, default=None)
    sp.add_argument("--out", default=None)
    sp.add_argument("--seed", type=int, default=42)
    sp.add_argument("--suite", action="append",
                    help="duality, kernel, moments, gamma, simulation")
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except MediaConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (EigenConvergenceError, SemigroupInstabilityError, ReachabilityError,
            CensoringError, NotImplementedError, RuntimeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
