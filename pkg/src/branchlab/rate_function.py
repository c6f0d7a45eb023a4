"""Rate function of the branching front via Legendre duality.

Phi(c) = sup_zeta (zeta.c - mu(zeta)) is computed by solving grad mu = c
with a damped Newton method, using ell(zeta) for the gradient and Xi(zeta)
for the Hessian. Around the optimal tilt the transition kernel obeys

    u(t, x, y) ~ (2 pi t)^{-d/2} det(Xi_zh)^{-1/2} e^{-t Phi((y-x)/t)}
                 phi_zh(x) phi*_zh(y),

and the minimizer vbar of Phi (where Phi = -mu(0)) is the velocity of the
population's center of mass.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .homogenization import effective_diffusivity, effective_drift
from .periodic_media import TorusGrid, trig_interpolate
from .torus_spectral import assemble_tilted, kernel_column, principal_eigen


class ReachabilityError(RuntimeError):
    """Newton iterate left the trusted tilt box."""


class _Record:
    __slots__ = ("triple", "ell", "xi", "eta")

    def __init__(self, triple):
        self.triple = triple
        self.ell = None
        self.xi = None
        self.eta = None


class RateProfile:
    """Memoized evaluator of mu(zeta), ell(zeta) = grad mu and Xi(zeta) = D2 mu.

    Eigenpairs are solved once per tilt on a fixed grid and cached under a
    rounded key; concurrent readers share the cache (insert-if-absent under
    a lock, so duplicated work is possible but results are consistent).
    """

    def __init__(self, media, n=256, eig_tol=1e-10, zeta_box=6.0):
        media.validate()
        self.media = media
        self.grid = TorusGrid(media.dimension, n)
        self.eig_tol = eig_tol
        self.zeta_box = float(zeta_box)
        self._records = {}
        self._lock = threading.Lock()

    @property
    def dimension(self):
        return self.media.dimension

    def _key(self, zeta):
        z = np.atleast_1d(np.asarray(zeta, dtype=float))
        return tuple(round(float(v), 12) for v in z)

    def _record(self, zeta):
        key = self._key(zeta)
        rec = self._records.get(key)
        if rec is None:
            if np.max(np.abs(np.asarray(key))) > self.zeta_box + 1e-9:
                raise ReachabilityError(
                    f"tilt {key} outside trusted box |zeta| <= {self.zeta_box}")
            op = assemble_tilted(self.media, self.grid, np.asarray(key))
            triple = principal_eigen(op, tol=self.eig_tol)
            with self._lock:
                rec = self._records.setdefault(key, _Record(triple))
        return rec

    def triple(self, zeta):
        return self._record(zeta).triple

    def mu(self, zeta):
        return self._record(zeta).triple.mu

    def ell(self, zeta):
        rec = self._record(zeta)
        if rec.ell is None:
            z = np.asarray(self._key(zeta))
            rec.ell = effective_drift(self.media, self.grid, z, rec.triple)
        return rec.ell.copy()

    def xi(self, zeta):
        rec = self._record(zeta)
        if rec.xi is None:
            z = np.asarray(self._key(zeta))
            xi, eta, ell = effective_diffusivity(self.media, self.grid, z, rec.triple)
            rec.xi = xi
            rec.eta = eta
            if rec.ell is None:
                rec.ell = ell
        return rec.xi.copy()

    def cached_tilts(self):
        return sorted(self._records.keys())


@dataclass
class LegendrePoint:
    value: float          # Phi(c)
    zeta_hat: np.ndarray  # optimal tilt, grad Phi(c)
    gradient_norm: float  # residual |ell(zeta_hat) - c|
    iterations: int


def legendre_transform(profile, c, tol=1e-8, max_iter=50, stall_cap=1e-5):
    """Phi(c) and the optimal tilt, by damped Newton on grad mu = c.

    The objective g(zeta) = zeta.c - mu(zeta) is concave; steps are halved
    until g increases. Iterates escaping the profile's tilt box raise
    ReachabilityError (the velocity c is not reachable on this profile).

    tol bounds the gradient |ell(zeta) - c| at the accepted tilt where
    attainable. ell is not the exact derivative of the discrete mu (they
    agree only to the O(h^2) consistency of the two discretizations), so
    near the optimum the objective may stop improving while the gradient
    is still above tol; such stalls are accepted as converged as long as
    the gradient is below stall_cap, and the achieved gradient is reported
    in the result.
    """
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if c.shape != (profile.dimension,):
        raise ValueError(f"velocity must have shape ({profile.dimension},)")
    vbar = profile.ell(np.zeros(profile.dimension))
    xi0 = profile.xi(np.zeros(profile.dimension))
    zeta = np.linalg.solve(xi0, c - vbar)
    box = profile.zeta_box
    if np.max(np.abs(zeta)) > box:
        raise ReachabilityError(
            f"initial Newton guess {zeta} outside |zeta| <= {box}; velocity {c} unreachable")

    def g_of(z):
        return float(z @ c) - profile.mu(z)

    g = g_of(zeta)
    grad = c - profile.ell(zeta)
    for it in range(1, max_iter + 1):
        if np.max(np.abs(grad)) < tol:
            return LegendrePoint(value=g, zeta_hat=zeta,
                                 gradient_norm=float(np.max(np.abs(grad))), iterations=it)
        step = np.linalg.solve(profile.xi(zeta), grad)
        s = 1.0
        stalled = False
        while True:
            trial = zeta + s * step
            if np.max(np.abs(trial)) > box:
                raise ReachabilityError(
                    f"Newton iterate {trial} left |zeta| <= {box} for velocity {c}")
            g_trial = g_of(trial)
            if g_trial >= g - 1e-14 * max(1.0, abs(g)):
                break
            s *= 0.5
            if s < 2 ** -30:
                stalled = True
                break
        if stalled:
            if np.max(np.abs(grad)) <= stall_cap:
                return LegendrePoint(value=g, zeta_hat=zeta,
                                     gradient_norm=float(np.max(np.abs(grad))),
                                     iterations=it)
            raise RuntimeError(
                f"Newton line search failed at zeta={zeta}, c={c}: "
                f"gradient {np.max(np.abs(grad)):.3e} above stall cap {stall_cap:.1e}")
        zeta, g = trial, g_trial
        grad = c - profile.ell(zeta)
    if np.max(np.abs(grad)) < stall_cap:
        return LegendrePoint(value=g, zeta_hat=zeta,
                             gradient_norm=float(np.max(np.abs(grad))), iterations=max_iter)
    raise RuntimeError(
        f"Legendre Newton did not converge for c={c}: residual {np.max(np.abs(grad)):.3e}")


def effective_velocity(profile, consistency_tol=1e-8):
    """vbar = ell(0), checked against the duality identity Phi(vbar) = -mu(0)."""
    vbar = profile.ell(np.zeros(profile.dimension))
    lt = legendre_transform(profile, vbar)
    mismatch = abs(lt.value + profile.mu(np.zeros(profile.dimension)))
    if mismatch > consistency_tol:
        raise RuntimeError(
            f"Phi(vbar) + mu(0) = {mismatch:.3e} exceeds {consistency_tol:.1e}")
    return vbar


def _interp_eigenfunction(values, grid, x):
    return float(trig_interpolate(values, grid, np.atleast_1d(x)))


def kernel_asymptotic(profile, t, x, y):
    """Sharp kernel asymptotic at (t, x, y); x, y are points in R^d."""
    if t <= 0:
        raise ValueError("t must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    d = profile.dimension
    c = (y - x) / t
    lt = legendre_transform(profile, c)
    triple = profile.triple(lt.zeta_hat)
    xi = profile.xi(lt.zeta_hat)
    det_xi = float(np.linalg.det(xi))
    pref = (2.0 * np.pi * t) ** (-0.5 * d) / np.sqrt(det_xi)
    phi_x = _interp_eigenfunction(triple.phi, profile.grid, np.mod(x, 1.0))
    phi_star_y = _interp_eigenfunction(triple.phi_star, profile.grid, np.mod(y, 1.0))
    return pref * np.exp(-t * lt.value) * phi_x * phi_star_y


def aronson_bound(profile, c_env, t, x, y):
    """Gaussian envelope c t^{-d/2} exp(-t Phi(vbar) - |y-x|^2 / (c t))."""
    if t <= 0 or c_env <= 0:
        raise ValueError("t and the envelope constant must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    d = profile.dimension
    phi_min = -profile.mu(np.zeros(d))  # Phi(vbar) = -mu(0)
    dist2 = float(np.sum((y - x) ** 2))
    return c_env * t ** (-0.5 * d) * np.exp(-t * phi_min - dist2 / (c_env * t))


def calibrate_aronson(profile, reference, candidates=(1, 2, 4, 8)):
    """Smallest envelope constant dominating reference kernel values.

    `reference` is an iterable of (t, x, y, value); returns the first
    candidate c for which the envelope is >= value at every point, or None.
    """
    reference = list(reference)
    for c_env in candidates:
        if all(aronson_bound(profile, c_env, t, x, y) >= v * (1.0 - 1e-12)
               for (t, x, y, v) in reference):
            return c_env
    return None


def front_normalizer(profile, t, y):
    """g(t, y) = (2 pi t)^{-d/2} det(D2 Phi(vbar))^{1/2} exp(-t Phi(y/t + vbar))."""
    if t <= 0:
        raise ValueError("t must be positive")
    y = np.atleast_1d(np.asarray(y, dtype=float))
    d = profile.dimension
    vbar = profile.ell(np.zeros(d))
    xi0 = profile.xi(np.zeros(d))
    det_d2phi = 1.0 / float(np.linalg.det(xi0))
    lt = legendre_transform(profile, y / t + vbar)
    return (2.0 * np.pi * t) ** (-0.5 * d) * np.sqrt(det_d2phi) * np.exp(-t * lt.value)


def compare_kernel(profile, times, x0, ys, cells=24, dt=1e-3, n=None):
    """Kernel validation table: PDE solution vs sharp asymptotic.

    The PDE reference runs on a periodic box of `cells` unit cells centered
    near x0 so that wrap-around images are exponentially negligible for the
    requested (t, y) range. Returns a list of rows
    (t, y, pde, asymptotic, ratio).
    """
    if profile.dimension != 1:
        raise NotImplementedError("kernel comparison tables are 1-d only")
    n = n or profile.grid.n
    origin = (round(float(x0) - cells / 2),)
    grid = TorusGrid(1, n, cells=cells, origin=origin)
    samples = kernel_column(profile.media, grid, np.atleast_1d(float(x0)), times, dt=dt)
    rows = []
    for it, t in enumerate(times):
        field = samples[it]
        for y in ys:
            idx = grid.flat_index(grid.node_index(np.atleast_1d(float(y))))
            pde = float(field[idx])
            asym = kernel_asymptotic(profile, t, np.atleast_1d(float(x0)),
                                     np.atleast_1d(float(y)))
            rows.append({"t": float(t), "y": float(y), "pde": pde,
                         "asymptotic": asym, "ratio": pde / asym})
    return rows
