"""Effective drift and diffusivity of the tilted, h-transformed motion.

Conjugating A_zeta by its principal eigenfunction phi_zeta and removing the
eigenvalue leaves a drift-only generator

    K_zeta = (1/2) sum a_ij d2_ij + sum_i V_i d_i,
    V = b + a (zeta + grad log phi_zeta),

whose invariant density is psi* = phi_zeta phi*_zeta. The mean drift
ell(zeta) = int V psi* equals the gradient of mu at zeta, and the covariance
of the homogenized motion is

    Xi = int (I + grad eta)^T a (I + grad eta) psi*,

where the corrector solves the cell problem K_zeta eta_j = ell_j - V_j with
zero psi*-average. Xi equals the Hessian of mu, so these routines double as
derivative oracles for the rate function.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .torus_spectral import TiltedOperator, assemble_operator


def _central_gradient(values, grid):
    """Central-difference gradient of a grid-shaped field, shape (d,) + shape."""
    v = values.reshape(grid.shape)
    out = np.empty((grid.dimension,) + grid.shape)
    for ax in range(grid.dimension):
        out[ax] = (np.roll(v, -1, axis=ax) - np.roll(v, 1, axis=ax)) / (2.0 * grid.h)
    return out


def drift_field(media, grid, zeta, triple):
    """Nodal drift V = b + a (zeta + grad log phi), shape (d, size)."""
    zeta = np.atleast_1d(np.asarray(zeta, dtype=float))
    pts = grid.points()
    d = grid.dimension
    av = media.a_values(pts)  # (size, d, d)
    bv = media.b_values(pts)  # (size, d)
    glog = _central_gradient(np.log(triple.phi), grid).reshape(d, -1)
    shifted = zeta[np.newaxis, :] + glog.T  # (size, d)
    V = bv + np.einsum("nij,nj->ni", av, shifted)
    return V.T.copy()


def build_K(media, grid, zeta, triple):
    """Drift-only generator K_zeta as a TiltedOperator (zero potential)."""
    pts = grid.points()
    d = grid.dimension
    size = grid.size
    a_nodes = np.empty((d, d, size))
    av = media.a_values(pts)
    for i in range(d):
        for j in range(d):
            a_nodes[i, j] = av[:, i, j]
    V = drift_field(media, grid, zeta, triple)
    mat = assemble_operator(grid, a_nodes, V, np.zeros(size))
    return TiltedOperator(media=media, grid=grid,
                          zeta=np.atleast_1d(np.asarray(zeta, dtype=float)),
                          sparse=mat, potential=np.zeros(size))


def stationary_density(triple):
    """psi* = phi phi*, the invariant density of K_zeta (integrates to one)."""
    return triple.phi * triple.phi_star


def effective_drift(media, grid, zeta, triple):
    """ell(zeta) = int V psi*, the group velocity dmu/dzeta."""
    V = drift_field(media, grid, zeta, triple)
    psi = stationary_density(triple).ravel()
    w = grid.quad_weight()
    return np.array([float(np.sum(V[i] * psi) * w) for i in range(grid.dimension)])


def solve_cell_problem(media, grid, zeta, triple, solvability_tol=1e-10):
    """Corrector eta with K eta_j = ell_j - V_j and int eta_j psi* = 0.

    The singular system is closed with a bordered matrix: the column augments
    range(K) in the direction psi*, the row pins the psi*-average of eta.
    Returns (eta, ell, V) with eta of shape (d,) + grid.shape.
    """
    K = build_K(media, grid, zeta, triple)
    V = drift_field(media, grid, zeta, triple)
    psi = stationary_density(triple).ravel()
    w = grid.quad_weight()
    d = grid.dimension
    ell = np.array([float(np.sum(V[i] * psi) * w) for i in range(d)])
    rhs_all = ell[:, np.newaxis] - V
    for j in range(d):
        resid = abs(float(np.sum(rhs_all[j] * psi) * w))
        if resid > solvability_tol * max(1.0, float(np.max(np.abs(V[j])))):
            raise RuntimeError(
                f"cell problem solvability residual {resid:.3e} exceeds {solvability_tol:.1e} "
                f"in component {j}")
    col = sp.csc_matrix(psi[:, np.newaxis])
    row = sp.csc_matrix((psi * w)[np.newaxis, :])
    bordered = sp.bmat([[K.sparse, col], [row, None]], format="csc")
    lu = spla.splu(bordered)
    eta = np.empty((d,) + grid.shape)
    for j in range(d):
        sol = lu.solve(np.concatenate([rhs_all[j], [0.0]]))
        eta[j] = sol[:-1].reshape(grid.shape)
    return eta, ell, V


def effective_diffusivity(media, grid, zeta, triple, asymmetry_tol=1e-8):
    """Homogenized covariance Xi(zeta); equals the Hessian of mu at zeta.

    Assembled as int (I + grad eta)^T a (I + grad eta) psi* with the
    corrector from the cell problem; symmetrized, with the raw asymmetry
    checked against `asymmetry_tol`.
    """
    eta, ell, _ = solve_cell_problem(media, grid, zeta, triple)
    d = grid.dimension
    psi = stationary_density(triple).ravel()
    w = grid.quad_weight()
    pts = grid.points()
    av = media.a_values(pts)  # (size, d, d)
    G = np.empty((d, d, grid.size))  # G[p, i] = delta_pi + d_p eta_i
    for i in range(d):
        ge = _central_gradient(eta[i], grid).reshape(d, -1)
        for p in range(d):
            G[p, i] = (1.0 if p == i else 0.0) + ge[p]
    xi = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            integrand = np.zeros(grid.size)
            for p in range(d):
                for q in range(d):
                    integrand += G[p, i] * av[:, p, q] * G[q, j]
            xi[i, j] = float(np.sum(integrand * psi) * w)
    asym = float(np.max(np.abs(xi - xi.T)))
    if asym > asymmetry_tol * max(1.0, float(np.max(np.abs(xi)))):
        raise RuntimeError(f"effective diffusivity asymmetry {asym:.3e} exceeds tolerance")
    xi = 0.5 * (xi + xi.T)
    evals = np.linalg.eigvalsh(xi)
    if evals[0] <= 0:
        raise RuntimeError(f"effective diffusivity not positive definite: spectrum {evals}")
    return xi, eta, ell
