"""Direct simulation of branching diffusions in periodic media.

Each replica starts from a single particle. Particles diffuse by
Euler-Maruyama with the media drift and a pointwise Cholesky factor of
a(x); binary branching at rate alpha(x) and killing at rate beta(x) are
applied per step by exact thinning of the combined event clock, with
rates frozen at the pre-move position.

Replicas are advanced in chunks. Chunk c draws from its own Philox
stream seeded by SeedSequence(entropy=seed, spawn_key=(c,)), and the
particle array keeps a canonical order (per replica: survivors first,
then daughters in parent order), so runs are reproducible bit for bit
for a fixed seed and chunk size, independent of BLAS threading.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .periodic_media import TorusGrid


class CensoringError(RuntimeError):
    """Raised when more than the tolerated fraction of replicas hit the cap."""


def make_cube_target(corner, velocity=None):
    """Count particles in corner + velocity*t + [0,1)^d (velocity None = fixed cube)."""
    corner = tuple(float(c) for c in corner)
    vel = None if velocity is None else tuple(float(v) for v in velocity)
    return ("cube", corner, vel)


def _target_label(target):
    if target == ("total",):
        return "total"
    _, corner, vel = target
    lab = "cube@" + ",".join(f"{c:g}" for c in corner)
    if vel is not None:
        lab += "+t*" + ",".join(f"{v:g}" for v in vel)
    return lab


def _normalize_target(spec):
    if spec == "total" or spec == ("total",):
        return ("total",)
    if isinstance(spec, tuple) and spec and spec[0] == "cube":
        return make_cube_target(spec[1], spec[2] if len(spec) > 2 else None)
    if isinstance(spec, dict) and spec.get("kind") == "cube":
        return make_cube_target(spec["corner"], spec.get("velocity"))
    raise ValueError(f"unknown count target {spec!r}")


@dataclass(frozen=True)
class SimConfig:
    media: object
    times: tuple
    dt: float
    n_replicas: int
    seed: int
    targets: tuple = ("total",)
    x0: tuple = None
    cap: int = 1_000_000
    chunk_size: int = 256
    collect_final_positions: bool = False

    def __post_init__(self):
        d = self.media.dimension
        times = tuple(float(t) for t in self.times)
        if not times or any(t <= 0 for t in times) or list(times) != sorted(set(times)):
            raise ValueError("times must be strictly increasing and positive")
        object.__setattr__(self, "times", times)
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        for t in times:
            s = round(t / self.dt)
            if abs(t - s * self.dt) > 1e-9:
                raise ValueError(f"sample time {t} is not a multiple of dt={self.dt}")
        probe = TorusGrid(d, 256 if d == 1 else 64).points()
        mx = float(np.max(self.media.alpha(probe) + self.media.beta(probe)))
        if self.dt * mx >= 0.1:
            raise ValueError(
                f"dt={self.dt} too coarse: dt*(alpha+beta) reaches {self.dt * mx:.3f}, need < 0.1")
        object.__setattr__(self, "targets",
                           tuple(_normalize_target(t) for t in self.targets))
        x0 = (0.0,) * d if self.x0 is None else tuple(float(v) for v in self.x0)
        if len(x0) != d:
            raise ValueError(f"x0 must have {d} coordinates")
        object.__setattr__(self, "x0", x0)

    def step_counts(self):
        return [round(t / self.dt) for t in self.times]


@dataclass
class Ensemble:
    """Live particles of one chunk: positions (m, d) and owning replica ids."""

    positions: np.ndarray
    replica: np.ndarray

    @property
    def size(self):
        return self.positions.shape[0]


def _diffusion_step(av, z):
    """sqrt(a) @ z per particle, symmetric square root in closed form."""
    d = z.shape[1]
    if d == 1:
        return np.sqrt(av[:, 0, 0])[:, np.newaxis] * z
    det = av[:, 0, 0] * av[:, 1, 1] - av[:, 0, 1] ** 2
    s = np.sqrt(np.maximum(det, 0.0))
    tau = np.sqrt(av[:, 0, 0] + av[:, 1, 1] + 2.0 * s)
    out = np.empty_like(z)
    out[:, 0] = ((av[:, 0, 0] + s) * z[:, 0] + av[:, 0, 1] * z[:, 1]) / tau
    out[:, 1] = (av[:, 0, 1] * z[:, 0] + (av[:, 1, 1] + s) * z[:, 1]) / tau
    return out


def step_ensemble(ens, media, dt, rng):
    """One Euler step with branching/killing; returns the new canonical ensemble."""
    m = ens.size
    if m == 0:
        return ens
    pos = ens.positions
    al = media.alpha(pos)
    be = media.beta(pos)
    tot = al + be
    z = rng.standard_normal((m, pos.shape[1]))
    u = rng.random(m)
    moved = pos + media.b_values(pos) * dt \
        + math.sqrt(dt) * _diffusion_step(media.a_values(pos), z)
    p_event = -np.expm1(-tot * dt)
    frac = np.divide(al, tot, out=np.zeros_like(al), where=tot > 0)
    branch = u < p_event * frac
    die = (u < p_event) & ~branch
    keep = ~die
    pos2 = np.concatenate([moved[keep], moved[branch]])
    rep2 = np.concatenate([ens.replica[keep], ens.replica[branch]])
    order = np.argsort(rep2, kind="stable")
    return Ensemble(pos2[order], rep2[order])


@dataclass
class SimResult:
    times: tuple
    target_labels: tuple
    counts: np.ndarray      # (n_replicas, n_times, n_targets), -1 where censored
    censored: np.ndarray    # (n_replicas,) bool
    media_hash: str
    config: SimConfig
    final_positions: np.ndarray = None
    final_replicas: np.ndarray = None


def _count_target(ens, target, t, n_rep):
    if target == ("total",):
        return np.bincount(ens.replica, minlength=n_rep)
    _, corner, vel = target
    lo = np.asarray(corner, dtype=float)
    if vel is not None:
        lo = lo + np.asarray(vel) * t
    inside = np.all((ens.positions >= lo) & (ens.positions < lo + 1.0), axis=1)
    return np.bincount(ens.replica[inside], minlength=n_rep)


def run_replicas(config, powers=(1, 2, 3)):
    """Simulate all replicas and aggregate count statistics.

    Returns CountStatistics; the raw per-replica integer counts stay
    available on its `.raw` attribute.
    """
    return count_statistics(_run_raw(config), powers=powers)


def _run_raw(config):
    media = config.media
    d = media.dimension
    sample_steps = config.step_counts()
    total_steps = sample_steps[-1]
    n_times = len(config.times)
    n_targets = len(config.targets)
    R = config.n_replicas
    counts = np.zeros((R, n_times, n_targets), dtype=np.int64)
    censored = np.zeros(R, dtype=bool)
    fin_pos, fin_rep = [], []
    n_chunks = (R + config.chunk_size - 1) // config.chunk_size
    for c in range(n_chunks):
        r0 = c * config.chunk_size
        r1 = min(R, r0 + config.chunk_size)
        n_rep = r1 - r0
        rng = np.random.Generator(np.random.Philox(
            np.random.SeedSequence(entropy=config.seed, spawn_key=(c,))))
        ens = Ensemble(np.tile(np.asarray(config.x0), (n_rep, 1)),
                       np.arange(n_rep, dtype=np.int64))
        cens = np.zeros(n_rep, dtype=bool)
        next_sample = 0
        for s in range(1, total_steps + 1):
            ens = step_ensemble(ens, media, config.dt, rng)
            pop = np.bincount(ens.replica, minlength=n_rep)
            over = pop > config.cap
            if np.any(over):
                cens |= over
                live = ~cens[ens.replica]
                ens = Ensemble(ens.positions[live], ens.replica[live])
            while next_sample < n_times and sample_steps[next_sample] == s:
                t = config.times[next_sample]
                for kj, target in enumerate(config.targets):
                    counts[r0:r1, next_sample, kj] = _count_target(ens, target, t, n_rep)
                if config.collect_final_positions and next_sample == n_times - 1:
                    good = ~cens[ens.replica]
                    fin_pos.append(ens.positions[good].copy())
                    fin_rep.append(ens.replica[good] + r0)
                next_sample += 1
        counts[r0 + np.where(cens)[0], :, :] = -1
        censored[r0:r1] = cens
    frac = float(np.mean(censored))
    if frac > 0.01:
        raise CensoringError(
            f"{frac:.1%} of replicas exceeded the population cap {config.cap}")
    result = SimResult(times=config.times,
                       target_labels=tuple(_target_label(t) for t in config.targets),
                       counts=counts, censored=censored,
                       media_hash=media.media_hash(), config=config)
    if config.collect_final_positions:
        result.final_positions = (np.concatenate(fin_pos) if fin_pos
                                  else np.empty((0, d)))
        result.final_replicas = (np.concatenate(fin_rep) if fin_rep
                                 else np.empty(0, dtype=np.int64))
    return result


@dataclass(frozen=True)
class MomentEstimate:
    mean: float
    variance: float
    se: float
    n: int


@dataclass
class CountStatistics:
    estimates: dict          # label -> time -> power -> MomentEstimate
    n_used: int
    n_censored: int
    media_hash: str
    raw: SimResult = None

    def get(self, label, t, power):
        return self.estimates[label][float(t)][int(power)]


def count_statistics(result, powers=(1, 2, 3)):
    """Sample moments of the counts over uncensored replicas, with standard errors.

    Sums run over replicas in index order with compensated summation, so the
    result does not depend on how the simulation work was scheduled.
    """
    mask = ~result.censored
    n = int(mask.sum())
    if n < 2:
        raise ValueError("need at least two uncensored replicas")
    est = {}
    for kj, label in enumerate(result.target_labels):
        per_t = {}
        for ti, t in enumerate(result.times):
            vals = result.counts[mask, ti, kj].astype(float)
            ent = {}
            for p in powers:
                xs = vals ** p
                mean = math.fsum(xs) / n
                var = max((math.fsum(xs * xs) - n * mean ** 2) / (n - 1), 0.0)
                ent[int(p)] = MomentEstimate(mean, var, math.sqrt(var / n), n)
            per_t[float(t)] = ent
        est[label] = per_t
    return CountStatistics(estimates=est, n_used=n,
                           n_censored=int(result.censored.sum()),
                           media_hash=result.media_hash, raw=result)


def compare_to_theory(stats, references, media_hash=None):
    """z-scores of Monte Carlo estimates against reference values.

    references: iterable of dicts with keys target, time, power, value.
    A media_hash argument guards against scoring a run of the wrong media.
    """
    if media_hash is not None and media_hash != stats.media_hash:
        raise ValueError(
            f"media hash mismatch: statistics from {stats.media_hash}, expected {media_hash}")
    rows = []
    for ref in references:
        mom = stats.get(ref["target"], ref["time"], ref["power"])
        diff = mom.mean - ref["value"]
        if mom.se > 0:
            z = diff / mom.se
        else:
            z = 0.0 if diff == 0 else math.inf
        rows.append({"target": ref["target"], "time": float(ref["time"]),
                     "power": int(ref["power"]), "value": float(ref["value"]),
                     "estimate": mom.mean, "se": mom.se, "z": z})
    return rows
