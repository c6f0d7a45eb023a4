"""Moment Lyapunov exponents gamma_k and intermittency regions.

gamma_1(v) = -Phi(v) is the exponential rate of the first moment in the
moving frame at velocity v. Higher moments obey the variational recursion

    gamma_k(v) = sup_{w, u in (0,1)} [ u (gamma_{k-1} + gamma_1)((v-w)/u)
                                       + (1-u) gamma_1(w / (1-u)) ],

with the degenerate path w = v(1-u), u -> 1 supplying the boundary
candidate gamma_{k-1}(v) + gamma_1(v) (and u -> 0 supplying gamma_1(v)).
The sets G_k = {gamma_1 >= 0, gamma_k = k gamma_1} are closed, nested and
shrink to the front velocity vbar; outside them moments grow faster than
the k-th power of the mean, the intermittency signature.

Evaluation is table-driven: gamma_1 is tabulated over the reachable
velocity range and extended quadratically beyond it, each gamma_k is
tabulated on the scan grid, and every evaluation is floored by the exact
candidates so the Jensen bound gamma_k >= k gamma_1 holds by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline
from scipy.optimize import minimize

from .rate_function import ReachabilityError, legendre_transform


class _Bicubic:
    """Node-exact tensor spline on a rectangular grid, NaN outside the hull.

    RegularGridInterpolator's cubic mode fits local windows and can miss the
    node values themselves by ~1e-5 on coarse grids, which is fatal for the
    gamma identities checked at vbar. FITPACK with s=0 interpolates exactly.
    """

    def __init__(self, ax0, ax1, vals):
        kx = min(3, len(ax0) - 1)
        ky = min(3, len(ax1) - 1)
        self._sp = RectBivariateSpline(ax0, ax1, vals, kx=kx, ky=ky, s=0)
        self._lo = (float(ax0[0]), float(ax1[0]))
        self._hi = (float(ax0[-1]), float(ax1[-1]))

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=float)
        out = np.asarray(self._sp(pts[:, 0], pts[:, 1], grid=False), dtype=float)
        bad = ((pts[:, 0] < self._lo[0]) | (pts[:, 0] > self._hi[0])
               | (pts[:, 1] < self._lo[1]) | (pts[:, 1] > self._hi[1]))
        if np.any(bad):
            out[bad] = np.nan
        return out


def gamma1(profile, v):
    """First-moment rate gamma_1(v) = -Phi(v)."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    return -legendre_transform(profile, v).value


class _Gamma1Table:
    """Tabulated gamma_1 with quadratic decay beyond the reachable range."""

    def __init__(self, profile, nodes_per_axis=257, zeta_margin=0.5):
        self.profile = profile
        d = profile.dimension
        zb = profile.zeta_box - zeta_margin
        vbar = profile.ell(np.zeros(d))
        if d == 1:
            c_lo = float(profile.ell(np.array([-zb]))[0])
            c_hi = float(profile.ell(np.array([zb]))[0])
            self.c_nodes = np.linspace(c_lo, c_hi, nodes_per_axis)
            vals = np.empty(nodes_per_axis)
            zets = np.empty(nodes_per_axis)
            for i, c in enumerate(self.c_nodes):
                lt = legendre_transform(profile, np.array([c]))
                vals[i] = -lt.value
                zets[i] = float(lt.zeta_hat[0])
            self.values = vals
            self.zetas = zets
            self._spline = CubicSpline(self.c_nodes, vals, extrapolate=False)
            self._xi_lo = float(profile.xi(np.array([zets[0]]))[0, 0])
            self._xi_hi = float(profile.xi(np.array([zets[-1]]))[0, 0])
        else:
            span = 0.9 * zb * np.sqrt(np.diag(profile.xi(np.zeros(d))))
            n = max(33, nodes_per_axis // 6)
            while True:
                axes = [np.linspace(vbar[j] - span[j], vbar[j] + span[j], n)
                        for j in range(d)]
                try:
                    corners = [np.array([axes[0][i], axes[1][j]])
                               for i in (0, -1) for j in (0, -1)]
                    for c in corners:
                        legendre_transform(profile, c)
                    break
                except ReachabilityError:
                    span *= 0.8
            vals = np.empty((n, n))
            zets = np.empty((n, n, d))
            for i, c0 in enumerate(axes[0]):
                for j, c1 in enumerate(axes[1]):
                    lt = legendre_transform(profile, np.array([c0, c1]))
                    vals[i, j] = -lt.value
                    zets[i, j] = lt.zeta_hat
            self.c_axes = axes
            self.values = vals
            self.zetas = zets
            self._interp = _Bicubic(axes[0], axes[1], vals)
            self._xi_max = float(np.max(np.linalg.eigvalsh(profile.xi(np.zeros(d)))))
        self.vbar = vbar
        self.mu0 = profile.mu(np.zeros(d))

    def __call__(self, c):
        c = np.asarray(c, dtype=float)
        d = self.profile.dimension
        if d == 1:
            flat = np.atleast_1d(c).ravel()
            out = self._spline(flat)
            lo, hi = self.c_nodes[0], self.c_nodes[-1]
            below = flat < lo
            above = flat > hi
            if np.any(below):
                s = flat[below] - lo
                out[below] = self.values[0] - self.zetas[0] * s - s ** 2 / (2 * self._xi_lo)
            if np.any(above):
                s = flat[above] - hi
                out[above] = self.values[-1] - self.zetas[-1] * s - s ** 2 / (2 * self._xi_hi)
            return out.reshape(np.shape(c)) if np.shape(c) else float(out[0])
        pts = c.reshape(-1, d)
        out = self._interp(pts)
        bad = ~np.isfinite(out)
        if np.any(bad):
            lows = np.array([ax[0] for ax in self.c_axes])
            highs = np.array([ax[-1] for ax in self.c_axes])
            clamped = np.clip(pts[bad], lows, highs)
            idx = [np.clip(np.round((clamped[:, j] - lows[j])
                                    / (self.c_axes[j][1] - self.c_axes[j][0])).astype(int),
                           0, len(self.c_axes[j]) - 1) for j in range(d)]
            base = self.values[idx[0], idx[1]]
            zet = self.zetas[idx[0], idx[1]]
            step = pts[bad] - clamped
            out[bad] = (base - np.sum(zet * step, axis=1)
                        - np.sum(step ** 2, axis=1) / (2 * self._xi_max))
        shape = c.shape[:-1] if c.ndim > 1 else ()
        return out.reshape(shape) if shape else float(out[0])


def _u_grid(u_min, n_mid=20, n_edge=10):
    lo = np.linspace(u_min, 0.1, n_edge)
    mid = np.linspace(0.12, 0.88, n_mid)
    hi = 1.0 - np.linspace(0.1, u_min, n_edge)
    return np.unique(np.concatenate([lo, mid, hi]))


@dataclass
class RegionReport:
    """Outcome of an intermittency region scan on one velocity grid."""

    v_nodes: np.ndarray
    vbar: np.ndarray
    mu0: float
    gamma: np.ndarray       # (k_max, n_nodes)
    gap: np.ndarray         # (k_max, n_nodes), gap[0] is identically 0
    members: np.ndarray     # boolean (k_max, n_nodes), G_k membership
    inner_radius: np.ndarray
    g1_boundary_radius: float
    nesting_violations: int
    escape_order: np.ndarray  # smallest k with positive gap, 0 if none up to k_max


class GammaEvaluator:
    """Builds gamma_k tables over a velocity grid and evaluates them anywhere.

    The sup in the recursion is located by a coarse vectorized scan over
    (w, u) followed by Nelder-Mead polish; the search box doubles when the
    maximizer saturates a face. Every evaluation takes the max with the
    exact boundary candidates, so gamma_k >= gamma_{k-1} + gamma_1 >=
    k gamma_1 holds pointwise.
    """

    def __init__(self, profile, k_max, v_grid, u_min=1e-3, gamma1_nodes=257):
        if k_max < 1:
            raise ValueError("k_max must be at least 1")
        self.profile = profile
        self.k_max = k_max
        self.u_min = float(u_min)
        self.d = profile.dimension
        self.g1 = _Gamma1Table(profile, nodes_per_axis=gamma1_nodes)
        self.mu0 = self.g1.mu0
        self.vbar = self.g1.vbar
        if self.d == 1:
            self.v_nodes = np.unique(np.asarray(v_grid, dtype=float).ravel())
        else:
            self.v_nodes = np.asarray(v_grid, dtype=float)
            if self.v_nodes.ndim != 2 or self.v_nodes.shape[1] != 2:
                raise ValueError("for d=2 pass velocity nodes of shape (n, 2)")
        self._tables = {}
        self._splines = {}
        self._g1_exact = {}
        for k in range(2, k_max + 1):
            self._build_level(k)

    # -- evaluation ------------------------------------------------------

    def _gamma1_at(self, v):
        """gamma_1 at an explicit point: exact Legendre value, memoized.

        The interpolation table serves the optimizer's inner scans; point
        evaluations go through the solver so identities like
        gamma_k(vbar) = k mu(0) hold to solver precision, not table
        precision. Unreachable velocities fall back to the table's
        quadratic extension.
        """
        key = tuple(np.round(np.atleast_1d(v), 12))
        val = self._g1_exact.get(key)
        if val is None:
            try:
                val = gamma1(self.profile, v)
            except ReachabilityError:
                val = float(self.g1(v if self.d > 1 else float(np.atleast_1d(v)[0])))
            self._g1_exact[key] = val
        return val

    def gamma(self, v, k):
        if k < 1 or k > self.k_max:
            raise ValueError(f"k={k} outside 1..{self.k_max}")
        v = np.atleast_1d(np.asarray(v, dtype=float))
        if k == 1:
            return float(self._gamma1_at(v))
        g1v = float(self._gamma1_at(v))
        cands = [float(k) * g1v, self.gamma(v, k - 1) + g1v, g1v]
        interp = self._splines.get(k)
        if interp is not None:
            val = interp(v[0]) if self.d == 1 else interp(v[np.newaxis, :])[0]
            if np.isfinite(val):
                cands.append(float(val))
        return max(cands)

    def gap(self, v, k, tol=None):
        """Non-negative intermittency gap gamma_k - k gamma_1, snapped to zero."""
        if tol is None:
            tol = 1e-5 * max(1.0, k * abs(self.mu0))
        raw = self.gamma(v, k) - k * self.gamma(v, 1)
        raw = max(raw, 0.0)
        return 0.0 if raw < tol else raw

    # -- table construction ----------------------------------------------

    def _objective_factory(self, k):
        g1 = self.g1
        prev_eval = (lambda c: self._eval_level(k - 1, c))

        def val(v, w, u):
            c1 = (v - w) / u if self.d == 1 else (v - w) / u[..., None]
            c2 = w / (1.0 - u) if self.d == 1 else w / (1.0 - u)[..., None]
            return u * (prev_eval(c1) + g1(c1)) + (1.0 - u) * g1(c2)

        return val

    def _eval_level(self, k, c):
        """Vectorized gamma_k with the k*gamma_1 floor, for use inside scans."""
        if k == 1:
            return self.g1(c)
        spline = self._splines[k]
        c_arr = np.asarray(c, dtype=float)
        floor = k * self.g1(c_arr)
        if self.d == 1:
            vals = spline(c_arr)
        else:
            vals = spline(c_arr.reshape(-1, 2)).reshape(c_arr.shape[:-1])
        return np.where(np.isfinite(vals), np.maximum(vals, floor), floor)

    def _search_halfwidth(self, k):
        cutoff = -3.0 * k * max(abs(self.mu0), 0.1)
        if self.d == 1:
            sel = self.g1.c_nodes[self.g1.values >= cutoff]
            diam = (sel[-1] - sel[0]) if sel.size >= 2 else \
                (self.g1.c_nodes[-1] - self.g1.c_nodes[0])
        else:
            mask = self.g1.values >= cutoff
            if np.any(mask):
                i0, i1 = np.where(mask)
                diam = max(self.g1.c_axes[0][i0.max()] - self.g1.c_axes[0][i0.min()],
                           self.g1.c_axes[1][i1.max()] - self.g1.c_axes[1][i1.min()])
            else:
                diam = self.g1.c_axes[0][-1] - self.g1.c_axes[0][0]
        return 4.0 * max(diam, 0.5)

    def _optimize_node(self, k, v, objective, M):
        u_min = self.u_min
        for _ in range(3):
            ug = _u_grid(u_min)
            if self.d == 1:
                wg = v + np.linspace(-M, M, 81)
                W, U = np.meshgrid(wg, ug, indexing="ij")
            else:
                w0 = v[0] + np.linspace(-M, M, 31)
                w1 = v[1] + np.linspace(-M, M, 31)
                W0, W1, U = np.meshgrid(w0, w1, ug, indexing="ij")
                W = np.stack([W0, W1], axis=-1)
            vals = objective(v, W, U)
            best = np.unravel_index(np.nanargmax(vals), vals.shape)
            if self.d == 1:
                w_best, u_best = W[best], U[best]
                saturated = abs(w_best - v) >= 0.98 * M
            else:
                w_best, u_best = W[best[0], best[1], best[2]], U[best]
                saturated = np.max(np.abs(w_best - v)) >= 0.98 * M
            if not saturated:
                break
            M *= 2.0
        coarse_val = float(vals[best])

        def neg(x):
            w = x[:-1] if self.d > 1 else x[0]
            u = x[-1]
            if not (u_min <= u <= 1.0 - u_min):
                return 1e30
            if np.max(np.abs(np.atleast_1d(w) - v)) > 4.0 * M:
                return 1e30
            return -float(objective(v, w, u))

        x0 = np.concatenate([np.atleast_1d(w_best), [u_best]])
        res = minimize(neg, x0, method="Nelder-Mead",
                       options={"xatol": 1e-9, "fatol": 1e-11, "maxiter": 600})
        if -float(res.fun) > coarse_val:
            w_fin = res.x[0] if self.d == 1 else res.x[:-1].copy()
            return -float(res.fun), w_fin, float(res.x[-1])
        return coarse_val, w_best, float(u_best)

    def _build_level(self, k):
        objective = self._objective_factory(k)
        M = self._search_halfwidth(k)
        nodes = self.v_nodes
        n = nodes.shape[0]
        table = np.empty(n)
        argsup_w = np.empty((n, self.d))
        argsup_u = np.empty(n)
        flags = np.empty(n, dtype=object)
        for i in range(n):
            v = nodes[i] if self.d > 1 else float(nodes[i])
            interior, w_arg, u_arg = self._optimize_node(k, v, objective, M)
            varr = np.atleast_1d(v)
            boundary = self.gamma(varr, k - 1) + self.gamma(varr, 1)
            low_u = self.gamma(varr, 1)
            table[i] = max(interior, boundary, low_u)
            # boundary limits: (w, u) = (v(1-u), u) with u -> 1, or u -> 0
            if table[i] == interior:
                argsup_w[i], argsup_u[i], flags[i] = np.atleast_1d(w_arg), u_arg, "interior"
            elif table[i] == boundary:
                argsup_w[i], argsup_u[i], flags[i] = 0.0, 1.0, "u->1"
            else:
                argsup_w[i], argsup_u[i], flags[i] = varr, 0.0, "u->0"
        self.diagnostics = getattr(self, "diagnostics", {})
        self.diagnostics[k] = {"argsup_w": argsup_w, "argsup_u": argsup_u,
                               "flag": flags}
        self._tables[k] = table
        if self.d == 1:
            self._splines[k] = CubicSpline(nodes, table, extrapolate=False)
        else:
            ax0 = np.unique(nodes[:, 0])
            ax1 = np.unique(nodes[:, 1])
            if ax0.size * ax1.size != n:
                raise ValueError("d=2 velocity nodes must form a tensor grid")
            grid_vals = table.reshape(ax0.size, ax1.size)
            self._splines[k] = _Bicubic(ax0, ax1, grid_vals)

    def table(self, k):
        if k == 1:
            if self.d == 1:
                return np.array([self.gamma(np.array([v]), 1) for v in self.v_nodes])
            return np.array([self.gamma(v, 1) for v in self.v_nodes])
        return self._tables[k].copy()


def intermittency_gap(evaluator, v, k, tol=None):
    return evaluator.gap(np.atleast_1d(np.asarray(v, dtype=float)), k, tol=tol)


def region_scan(evaluator, g1_tol=1e-9):
    """Membership masks and radii of the intermittency regions G_k."""
    nodes = evaluator.v_nodes
    k_max = evaluator.k_max
    d = evaluator.d
    n = nodes.shape[0]
    gamma = np.empty((k_max, n))
    gap = np.zeros((k_max, n))
    for i in range(n):
        v = np.atleast_1d(nodes[i])
        for k in range(1, k_max + 1):
            gamma[k - 1, i] = evaluator.gamma(v, k)
            if k >= 2:
                gap[k - 1, i] = evaluator.gap(v, k)
    scale = max(1.0, abs(evaluator.mu0))
    g1_ok = gamma[0] >= -g1_tol * scale
    members = np.empty((k_max, n), dtype=bool)
    members[0] = g1_ok
    for k in range(2, k_max + 1):
        members[k - 1] = g1_ok & (gap[k - 1] == 0.0)
    if d == 1:
        radii = np.abs(nodes - evaluator.vbar[0])
    else:
        radii = np.linalg.norm(nodes - evaluator.vbar[np.newaxis, :], axis=1)
    inner = np.empty(k_max)
    for k in range(1, k_max + 1):
        outside = radii[~members[k - 1]]
        inner[k - 1] = float(np.min(outside)) if outside.size else float(np.max(radii))
    g1_boundary = float(np.max(radii[members[0]])) if np.any(members[0]) else 0.0
    violations = 0
    for k in range(2, k_max + 1):
        violations += int(np.sum(members[k - 1] & ~members[k - 2]))
    escape = np.zeros(n, dtype=int)
    for i in range(n):
        for k in range(2, k_max + 1):
            if gap[k - 1, i] > 0.0:
                escape[i] = k
                break
    return RegionReport(v_nodes=nodes.copy(), vbar=evaluator.vbar.copy(),
                        mu0=evaluator.mu0, gamma=gamma, gap=gap, members=members,
                        inner_radius=inner, g1_boundary_radius=g1_boundary,
                        nesting_violations=violations, escape_order=escape)
