"""Discrete tilted generators on the torus and their principal eigenpairs.

The generator L = (1/2) sum a_ij d2_ij + sum b_i d_i + r(x) is discretized
with second-order central differences on a uniform periodic grid. Conjugating
by exp(zeta.x) gives the tilted operator

    A_zeta f = (1/2) sum a_ij d2_ij f + sum_i (b + a zeta)_i d_i f
               + ((1/2) zeta.a.zeta + b.zeta + r) f

whose principal eigenvalue mu(zeta) drives all large-deviation quantities.
The discrete adjoint is the plain matrix transpose under rectangle-rule
quadrature, so the adjoint eigenvector comes from the same factorization
machinery applied to A^T.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .periodic_media import TorusGrid, sample_field


class EigenConvergenceError(RuntimeError):
    pass


class SemigroupInstabilityError(RuntimeError):
    pass


def _neighbor_indices(grid):
    """Flat indices of +/- neighbors along each axis with periodic wrap."""
    m = grid.nodes_per_axis
    if grid.dimension == 1:
        i = np.arange(m)
        return [(np.roll(i, -1), np.roll(i, 1))]
    i = np.arange(m * m).reshape(m, m)
    up0 = np.roll(i, -1, axis=0).ravel()
    dn0 = np.roll(i, 1, axis=0).ravel()
    up1 = np.roll(i, -1, axis=1).ravel()
    dn1 = np.roll(i, 1, axis=1).ravel()
    return [(up0, dn0), (up1, dn1)]


def assemble_operator(grid, a_nodes, drift_nodes, potential_nodes):
    """Sparse matrix of (1/2) a:D2 + drift.D1 + potential from nodal fields.

    a_nodes has shape (d, d, size), drift_nodes (d, size), potential (size,).
    Row i applies the stencil with coefficients frozen at node i.
    """
    d = grid.dimension
    size = grid.size
    h = grid.h
    rows, cols, vals = [], [], []
    idx = np.arange(size)
    nbrs = _neighbor_indices(grid)
    diag = np.asarray(potential_nodes, dtype=float).copy()
    for ax in range(d):
        up, dn = nbrs[ax]
        coef2 = 0.5 * a_nodes[ax, ax] / h ** 2
        coef1 = drift_nodes[ax] / (2.0 * h)
        rows.extend([idx, idx])
        cols.extend([up, dn])
        vals.extend([coef2 + coef1, coef2 - coef1])
        diag -= 2.0 * coef2
    if d == 2:
        up0, dn0 = nbrs[0]
        up1, dn1 = nbrs[1]
        cross = a_nodes[0, 1] / (4.0 * h ** 2)
        if np.any(cross != 0.0):
            rows.extend([idx, idx, idx, idx])
            cols.extend([up0[up1], dn0[dn1], up0[dn1], dn0[up1]])
            vals.extend([cross, cross, -cross, -cross])
    rows.append(idx)
    cols.append(idx)
    vals.append(diag)
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(size, size),
    )
    return mat.tocsr()


@dataclass
class TiltedOperator:
    """Discrete A_zeta together with the grid and media it came from."""

    media: object
    grid: TorusGrid
    zeta: np.ndarray
    sparse: sp.csr_matrix
    potential: np.ndarray  # nodal zeroth-order coefficient, used by growth guards
    _dense: np.ndarray = None

    @property
    def matrix(self):
        if self._dense is None:
            if self.grid.size > 8192:
                raise MemoryError("dense matrix requested for more than 8192 nodes; use .sparse")
            self._dense = self.sparse.toarray()
        return self._dense

    def apply(self, v):
        return self.sparse @ v

    def transposed(self):
        return TiltedOperator(self.media, self.grid, self.zeta,
                              self.sparse.T.tocsr(), self.potential)


def assemble_tilted(media, grid, zeta):
    """Tilted generator A_zeta on the grid; grid must resolve the media."""
    if media.dimension != grid.dimension:
        raise ValueError("media and grid dimensions differ")
    kmax = media.max_wavenumber
    if grid.n < 2 * kmax + 2:
        raise ValueError(
            f"grid with n={grid.n} cannot resolve wave number {kmax}; need n >= {2 * kmax + 2}")
    zeta = np.atleast_1d(np.asarray(zeta, dtype=float))
    if zeta.shape != (media.dimension,):
        raise ValueError(f"zeta must have shape ({media.dimension},)")
    pts = grid.points()
    d = media.dimension
    size = grid.size
    a_nodes = np.empty((d, d, size))
    av = media.a_values(pts)
    for i in range(d):
        for j in range(d):
            a_nodes[i, j] = av[:, i, j]
    b_nodes = media.b_values(pts).T  # (d, size)
    azeta = np.einsum("ij...,j->i...", a_nodes, zeta)
    drift = b_nodes + azeta
    potential = (0.5 * np.einsum("i,i...->...", zeta, azeta)
                 + np.einsum("i,i...->...", zeta, b_nodes)
                 + media.rate(pts))
    mat = assemble_operator(grid, a_nodes, drift, potential)
    return TiltedOperator(media=media, grid=grid, zeta=zeta, sparse=mat,
                          potential=potential)


class SemigroupStepper:
    """Crank-Nicolson stepper for du/dt = A u + source(t)."""

    def __init__(self, matrix, dt):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.dt = dt
        self.A = matrix.tocsr() if not sp.issparse(matrix) else matrix
        n = self.A.shape[0]
        eye = sp.identity(n, format="csc")
        self._lu = spla.splu((eye - 0.5 * dt * self.A).tocsc())

    def step(self, u, source=None):
        rhs = u + 0.5 * self.dt * (self.A @ u)
        if source is not None:
            rhs = rhs + self.dt * source
        return self._lu.solve(rhs)


def _steps_for(times, dt):
    steps = []
    for t in times:
        k = t / dt
        rk = round(k)
        if abs(k - rk) > 1e-6:
            raise ValueError(f"sample time {t} is not a multiple of dt={dt}")
        steps.append(int(rk))
    if steps != sorted(steps):
        raise ValueError("sample times must be increasing")
    return steps


def evolve_semigroup(op, initial, times, dt=1e-3, transpose=False, guard=True):
    """Crank-Nicolson evolution of the semigroup from `initial`.

    Returns an array of shape (len(times), size) with the solution at each
    requested time (times must be multiples of dt). With transpose=True the
    adjoint system is evolved, which turns a delta column into the kernel
    row y -> u(t, x0, y).
    """
    times = list(times)
    steps = _steps_for(times, dt)
    mat = op.sparse.T.tocsr() if transpose else op.sparse
    stepper = SemigroupStepper(mat, dt)
    u = np.asarray(initial, dtype=float).ravel().copy()
    if u.size != op.grid.size:
        raise ValueError("initial data does not match grid size")
    growth_rate = float(np.max(op.potential)) + 1.0
    ref_norm = float(np.max(np.abs(u)))
    out = np.empty((len(times), u.size))
    next_sample = 0
    if steps and steps[0] == 0:
        out[0] = u
        next_sample = 1
    total = steps[-1] if steps else 0
    for n in range(1, total + 1):
        u = stepper.step(u)
        if guard:
            cur = np.max(np.abs(u))
            # envelope over elapsed time, not per step: transients of
            # underresolved initial data may wiggle within the envelope
            cap = ref_norm * np.exp(growth_rate * n * dt) * (1.0 + 1e-9)
            if not np.isfinite(cur) or (ref_norm > 0 and cur > cap):
                raise SemigroupInstabilityError(
                    f"norm {cur:.3e} at t={n * dt:.6g} exceeds the growth envelope "
                    f"{cap:.3e} (rate = max potential + 1)")
        while next_sample < len(steps) and steps[next_sample] == n:
            out[next_sample] = u
            next_sample += 1
    return out


def delta_vector(grid, x):
    """Rectangle-rule delta located at the grid node nearest-equal to x."""
    v = np.zeros(grid.size)
    v[grid.flat_index(grid.node_index(x))] = 1.0 / grid.quad_weight()
    return v


@dataclass
class EigenTriple:
    """Principal eigenvalue with direct and adjoint eigenvectors.

    phi and phi_star are grid-shaped, normalized so that the rectangle-rule
    integrals satisfy int(phi * phi_star) = 1 and int(phi_star) = 1.
    """

    mu: float
    phi: np.ndarray
    phi_star: np.ndarray
    residual: float
    residual_star: float
    grid: TorusGrid


def _vec_norm(v):
    # fixed-order reduction; never routed through threaded BLAS
    return float(np.sqrt(np.sum(v * v)))


def _power_seed(op, blocks=12, block_steps=20, dt=0.005):
    stepper = SemigroupStepper(op.sparse, dt)
    v = np.full(op.grid.size, 1.0)
    v /= _vec_norm(v)
    for _ in range(blocks):
        for _ in range(block_steps):
            v = stepper.step(v)
        nrm = _vec_norm(v)
        if not np.isfinite(nrm) or nrm == 0:
            raise EigenConvergenceError("power seed diverged")
        v /= nrm
    return v


def _shifted_solve(matrix, sigma, rhs):
    n = matrix.shape[0]
    eye = sp.identity(n, format="csc")
    lu = spla.splu((matrix - sigma * eye).tocsc())
    return lu.solve(rhs)


def principal_eigen(op, tol=1e-10, max_iter=60):
    """Perron eigenpair of A_zeta and of its transpose.

    Seeded by power iteration on the Crank-Nicolson propagator (which
    isolates the rightmost branch), then refined with Rayleigh-quotient
    inverse iteration. The transpose problem reuses the converged shift.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    A = op.sparse
    v = _power_seed(op)
    sigma = float(np.sum(v * (A @ v)))
    scale = max(1.0, abs(sigma))
    residual = np.inf
    for _ in range(max_iter):
        try:
            w = _shifted_solve(A, sigma, v)
        except RuntimeError:
            sigma *= 1.0 + 1e-12
            sigma += 1e-12
            continue
        nrm = _vec_norm(w)
        if not np.isfinite(nrm) or nrm == 0:
            raise EigenConvergenceError("inverse iteration produced a non-finite vector")
        v = w / nrm
        if np.sum(v) < 0:
            v = -v
        sigma_new = float(np.sum(v * (A @ v)))
        residual = float(np.max(np.abs(A @ v - sigma_new * v))) / max(1.0, abs(sigma_new))
        sigma = sigma_new
        if residual < tol:
            break
    else:
        raise EigenConvergenceError(
            f"eigen iteration stalled at residual {residual:.3e} (tol {tol:.1e})")
    if np.min(v) <= 0:
        raise EigenConvergenceError(
            "principal eigenvector changes sign; Perron branch not isolated")
    # adjoint vector: inverse iteration at the converged eigenvalue
    At = A.T.tocsr()
    w = v.copy()
    residual_star = np.inf
    shift = sigma
    for _ in range(max_iter):
        try:
            w_new = _shifted_solve(At, shift, w)
        except RuntimeError:
            shift += tol * max(1.0, abs(sigma))
            continue
        nrm = _vec_norm(w_new)
        if not np.isfinite(nrm) or nrm == 0:
            raise EigenConvergenceError("adjoint inverse iteration failed")
        w = w_new / nrm
        if np.sum(w) < 0:
            w = -w
        residual_star = float(np.max(np.abs(At @ w - sigma * w))) / max(1.0, abs(sigma))
        if residual_star < tol:
            break
        shift = float(np.sum(w * (At @ w)))
    else:
        raise EigenConvergenceError(
            f"adjoint iteration stalled at residual {residual_star:.3e}")
    if np.min(w) <= 0:
        raise EigenConvergenceError(
            "adjoint eigenvector changes sign; Perron branch not isolated")
    grid = op.grid
    wsum = grid.integrate(w)
    phi_star = w / wsum
    c = grid.integrate(v * phi_star)
    phi = v / c
    return EigenTriple(mu=sigma, phi=phi.reshape(grid.shape),
                       phi_star=phi_star.reshape(grid.shape),
                       residual=residual, residual_star=residual_star, grid=grid)


def kernel_column(media, grid, x0, times, dt=1e-3):
    """Whole-box transition kernel slice y -> u(t, x0, y) for each time.

    Computed by evolving the adjoint semigroup from a delta at x0, which
    yields one row of the kernel in a single sweep. The grid may cover
    several periods of the media to emulate free space.
    """
    op = assemble_tilted(media, grid, np.zeros(media.dimension))
    delta = delta_vector(grid, x0)
    return evolve_semigroup(op, delta, times, dt=dt, transpose=True)
