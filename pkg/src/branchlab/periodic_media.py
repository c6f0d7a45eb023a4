"""Periodic coefficient fields on the unit torus.

Media are finite trigonometric series with period one in every coordinate,
which makes them exactly representable on any uniform grid finer than the
Nyquist limit. A media specification bundles the diffusion matrix a(x),
the drift b(x) and the branching/killing rates alpha(x), beta(x).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np


class MediaConfigError(ValueError):
    """Raised when a media document is malformed or violates positivity."""


def _as_wavevector(k, dim):
    if isinstance(k, (int, np.integer)):
        k = [int(k)]
    k = tuple(int(v) for v in k)
    if len(k) != dim:
        raise MediaConfigError(f"wave vector {k} has length {len(k)}, expected {dim}")
    return k


@dataclass(frozen=True)
class TrigSeries:
    """Finite trigonometric polynomial c0 + sum_k [c_k cos(2pi k.x) + s_k sin(2pi k.x)]."""

    dimension: int
    const: float = 0.0
    terms: tuple = ()  # tuple of (wavevector, cos_amp, sin_amp)

    def __post_init__(self):
        norm = tuple(
            (_as_wavevector(k, self.dimension), float(c), float(s))
            for (k, c, s) in self.terms
        )
        object.__setattr__(self, "terms", norm)

    @property
    def is_constant(self):
        return all(c == 0.0 and s == 0.0 for (_, c, s) in self.terms)

    @property
    def max_wavenumber(self):
        """Largest |k_j| over all terms, 0 for a constant."""
        m = 0
        for (k, c, s) in self.terms:
            if c == 0.0 and s == 0.0:
                continue
            m = max(m, max(abs(v) for v in k))
        return m

    def __call__(self, x):
        """Evaluate at points x of shape (..., d); d may be dropped when d == 1."""
        x = np.asarray(x, dtype=float)
        if self.dimension == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., np.newaxis]
        if x.shape[-1] != self.dimension:
            raise ValueError(f"points have dimension {x.shape[-1]}, series has {self.dimension}")
        out = np.full(x.shape[:-1], self.const, dtype=float)
        for (k, c, s) in self.terms:
            phase = 2.0 * np.pi * (x @ np.asarray(k, dtype=float))
            if c != 0.0:
                out += c * np.cos(phase)
            if s != 0.0:
                out += s * np.sin(phase)
        return out

    def to_config(self):
        cfg = {"const": self.const}
        if self.terms:
            cfg["terms"] = [
                {"k": list(k), "cos": c, "sin": s} for (k, c, s) in self.terms
            ]
        return cfg

    @classmethod
    def constant(cls, value, dimension):
        return cls(dimension=dimension, const=float(value))

    @classmethod
    def from_config(cls, obj, dimension):
        if isinstance(obj, (int, float)):
            return cls.constant(obj, dimension)
        if not isinstance(obj, dict):
            raise MediaConfigError(f"series must be a number or an object, got {type(obj).__name__}")
        unknown = set(obj) - {"const", "terms"}
        if unknown:
            raise MediaConfigError(f"unknown series keys {sorted(unknown)}")
        terms = []
        for t in obj.get("terms", ()):
            if "k" not in t:
                raise MediaConfigError("series term missing wave vector 'k'")
            terms.append((_as_wavevector(t["k"], dimension),
                          float(t.get("cos", 0.0)), float(t.get("sin", 0.0))))
        return cls(dimension=dimension, const=float(obj.get("const", 0.0)), terms=tuple(terms))


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid on a periodic box of integer side length `cells`.

    Node coordinates per axis are i*h with h = 1/n, i = 0..n*cells-1. The
    unit cell case (cells=1) is the torus [0,1)^d; larger boxes tile the
    same 1-periodic media and serve as whole-space surrogates.
    """

    dimension: int
    n: int
    cells: int = 1
    origin: tuple = None

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise MediaConfigError(f"dimension {self.dimension} not supported (only 1 and 2)")
        if self.n < 4:
            raise ValueError("need at least 4 nodes per axis")
        if self.origin is None:
            object.__setattr__(self, "origin", (0.0,) * self.dimension)
        else:
            org = tuple(float(v) for v in self.origin)
            if any(abs(v - round(v)) > 1e-12 for v in org):
                raise ValueError("grid origin must have integer coordinates")
            object.__setattr__(self, "origin", org)

    @property
    def h(self):
        return 1.0 / self.n

    @property
    def nodes_per_axis(self):
        return self.n * self.cells

    @property
    def size(self):
        return self.nodes_per_axis ** self.dimension

    @property
    def length(self):
        """Side length of the periodic box."""
        return float(self.cells)

    def axis(self, j=0):
        return self.origin[j] + np.arange(self.nodes_per_axis) * self.h

    def points(self):
        """All node coordinates, shape (size, d), C-order flattening."""
        axes = [self.axis(j) for j in range(self.dimension)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @property
    def shape(self):
        return (self.nodes_per_axis,) * self.dimension

    def quad_weight(self):
        """Rectangle-rule weight per node."""
        return self.h ** self.dimension

    def integrate(self, values):
        return float(np.sum(values) * self.quad_weight())

    def node_index(self, x):
        """Index of the node at coordinate x (must lie on the grid)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        idx = []
        for j in range(self.dimension):
            r = (x[j] - self.origin[j]) / self.h
            i = int(round(r))
            if abs(r - i) > 1e-9:
                raise ValueError(f"coordinate {x[j]} is not a grid node")
            idx.append(i % self.nodes_per_axis)
        return tuple(idx)

    def flat_index(self, idx):
        if self.dimension == 1:
            return idx[0]
        return idx[0] * self.nodes_per_axis + idx[1]


def sample_field(series, grid):
    """Sample a TrigSeries on every node, returned with the grid's shape."""
    vals = series(grid.points())
    return vals.reshape(grid.shape)


def trig_interpolate(values, grid, x):
    """Trigonometric interpolation of grid data at arbitrary points.

    Exact (to roundoff) for band-limited data sampled above the Nyquist
    rate, which covers eigenfunctions of smooth media for the resolutions
    used here. `values` is grid-shaped, `x` has shape (..., d).
    """
    x = np.asarray(x, dtype=float)
    d = grid.dimension
    if d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., np.newaxis]
    period = grid.length
    rel = (x - np.asarray(grid.origin)) / period  # in units of the box
    m = grid.nodes_per_axis
    coef = np.fft.fftn(np.asarray(values, dtype=float).reshape(grid.shape)) / grid.size
    freqs = np.fft.fftfreq(m, d=1.0 / m)  # integer modes
    # Nyquist mode of an even-length transform must act as a pure cosine.
    out_shape = x.shape[:-1]
    pts = rel.reshape(-1, d)
    result = np.zeros(pts.shape[0], dtype=complex)
    if d == 1:
        phase = np.exp(2j * np.pi * np.outer(pts[:, 0], freqs))
        if m % 2 == 0:
            ny = m // 2
            phase[:, ny] = np.cos(2 * np.pi * pts[:, 0] * ny)
        # einsum (optimize off) keeps the reduction order fixed regardless of
        # BLAS thread settings, which the reproducibility contract relies on
        result = np.einsum("pi,i->p", phase, coef)
    else:
        phase0 = np.exp(2j * np.pi * np.outer(pts[:, 0], freqs))
        phase1 = np.exp(2j * np.pi * np.outer(pts[:, 1], freqs))
        if m % 2 == 0:
            ny = m // 2
            phase0[:, ny] = np.cos(2 * np.pi * pts[:, 0] * ny)
            phase1[:, ny] = np.cos(2 * np.pi * pts[:, 1] * ny)
        result = np.einsum("pi,ij,pj->p", phase0, coef, phase1)
    return result.real.reshape(out_shape)


@dataclass(frozen=True)
class MediaSpec:
    """Periodic media: diffusion a(x), drift b(x), branching alpha(x), killing beta(x)."""

    dimension: int
    a: tuple  # d x d nested tuple of TrigSeries, symmetric
    b: tuple  # d TrigSeries
    alpha: TrigSeries
    beta: TrigSeries
    _hash: str = field(default=None, compare=False, repr=False)

    def rate(self, x):
        """Net growth rate r(x) = alpha(x) - beta(x)."""
        return self.alpha(x) - self.beta(x)

    @property
    def max_wavenumber(self):
        fields = [s for row in self.a for s in row] + list(self.b) + [self.alpha, self.beta]
        return max(f.max_wavenumber for f in fields)

    def a_values(self, x):
        """Diffusion matrix at points x, shape (..., d, d)."""
        x = np.asarray(x, dtype=float)
        base = self.a[0][0](x)
        out = np.empty(base.shape + (self.dimension, self.dimension))
        for i in range(self.dimension):
            for j in range(self.dimension):
                out[..., i, j] = self.a[i][j](x) if j >= i else out[..., j, i]
        return out

    def b_values(self, x):
        x = np.asarray(x, dtype=float)
        base = self.b[0](x)
        out = np.empty(base.shape + (self.dimension,))
        for i in range(self.dimension):
            out[..., i] = self.b[i](x)
        return out

    def to_config(self):
        return {
            "dimension": self.dimension,
            "a": [[s.to_config() for s in row] for row in self.a],
            "b": [s.to_config() for s in self.b],
            "alpha": self.alpha.to_config(),
            "beta": self.beta.to_config(),
        }

    def media_hash(self):
        if self._hash is None:
            blob = json.dumps(self.to_config(), sort_keys=True, separators=(",", ":"))
            digest = hashlib.sha256(blob.encode()).hexdigest()[:16]
            object.__setattr__(self, "_hash", digest)
        return self._hash

    def validate(self, probe_n=64):
        """Check symmetry/positivity on a probe grid; raise on the first offender."""
        grid = TorusGrid(self.dimension, probe_n)
        pts = grid.points()
        av = self.a_values(pts)
        if self.dimension == 1:
            bad = np.argmin(av[:, 0, 0])
            if av[bad, 0, 0] <= 0:
                raise MediaConfigError(
                    f"diffusion a is not positive at x={pts[bad]}: a={av[bad,0,0]:.6g}")
        else:
            tr = av[:, 0, 0] + av[:, 1, 1]
            det = av[:, 0, 0] * av[:, 1, 1] - av[:, 0, 1] ** 2
            lam_min = 0.5 * (tr - np.sqrt(np.maximum(tr ** 2 - 4 * det, 0.0)))
            lam_min = np.where(det <= 0, -np.abs(det), lam_min)
            bad = int(np.argmin(lam_min))
            if lam_min[bad] <= 0:
                raise MediaConfigError(
                    f"diffusion a is not positive definite at x={pts[bad]}: "
                    f"eigenvalue {lam_min[bad]:.6g}")
        for name, series in (("alpha", self.alpha), ("beta", self.beta)):
            vals = series(pts)
            bad = int(np.argmin(vals))
            if vals[bad] < 0:
                raise MediaConfigError(
                    f"{name} is negative at x={pts[bad]}: {name}={vals[bad]:.6g}")
        return True


def _parse_a(obj, dim):
    if isinstance(obj, (int, float)):
        # isotropic shorthand: scalar times identity
        rows = []
        for i in range(dim):
            rows.append(tuple(
                TrigSeries.constant(obj if i == j else 0.0, dim) for j in range(dim)))
        return tuple(rows)
    if dim == 1 and isinstance(obj, dict):
        # bare series shorthand for the single entry
        obj = [[obj]]
    if not isinstance(obj, list) or len(obj) != dim:
        raise MediaConfigError(f"'a' must be a {dim}x{dim} nested list or a scalar")
    rows = []
    for i, row in enumerate(obj):
        if not isinstance(row, list) or len(row) != dim:
            raise MediaConfigError(f"'a' row {i} must have {dim} entries")
        rows.append(tuple(TrigSeries.from_config(e, dim) for e in row))
    a = tuple(rows)
    for i in range(dim):
        for j in range(i + 1, dim):
            if a[i][j].to_config() != a[j][i].to_config():
                raise MediaConfigError(f"'a' must be symmetric: entries ({i},{j}) and ({j},{i}) differ")
    return a


def parse_media_spec(document):
    """Build a validated MediaSpec from a JSON document, path text, or dict."""
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as e:
            raise MediaConfigError(f"invalid JSON: {e}") from None
    if not isinstance(document, dict):
        raise MediaConfigError("media document must be a JSON object")
    missing = {"dimension", "a", "b", "alpha", "beta"} - set(document)
    if missing:
        raise MediaConfigError(f"media document missing keys {sorted(missing)}")
    dim = document["dimension"]
    if not isinstance(dim, int) or dim < 1:
        raise MediaConfigError(f"dimension must be a positive integer, got {dim!r}")
    if dim > 2:
        raise MediaConfigError(f"dimension {dim} not supported (only 1 and 2)")
    a = _parse_a(document["a"], dim)
    b_obj = document["b"]
    if isinstance(b_obj, (int, float)):
        b_obj = [b_obj] * dim
    if not isinstance(b_obj, list) or len(b_obj) != dim:
        raise MediaConfigError(f"'b' must be a list of {dim} series or a scalar")
    b = tuple(TrigSeries.from_config(e, dim) for e in b_obj)
    alpha = TrigSeries.from_config(document["alpha"], dim)
    beta = TrigSeries.from_config(document["beta"], dim)
    media = MediaSpec(dimension=dim, a=a, b=b, alpha=alpha, beta=beta)
    media.validate()
    return media


def constant_media(dimension=1, a=1.0, b=0.0, alpha=0.0, beta=0.0):
    """Convenience constructor for spatially homogeneous media."""
    doc = {"dimension": dimension, "a": a, "b": b, "alpha": alpha, "beta": beta}
    return parse_media_spec(doc)
