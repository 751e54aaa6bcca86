"""Spatial Poisson model for the first crack on the specimen surface.

With the rate per unit surface taken as h_SN(n; s(x)) / area, where area is
the surface measure where the unit stress exceeds beta, the first-crack time
has survival

    P(N > n) = exp( (1/area) * integral log(1 - F_SN(n; s(x))) dS )

and density P(N > n) * (1/area) * integral h_SN(n; s(x)) dS.  Surface
integrals are quadrature sums over mesh nodes.  Because the elasticity
problem is linear, site stresses are T times a unit profile, where T is the
experiment's gross traction.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import bisect

from . import sn
from .fem import MaterialParams, UnitStressField, experiment_traction, solve_unit_stress
from .geometry import SpecimenGeometry, TriMesh, mesh_geometry
from .sn import SNParams
from .stress import (
    DEFAULT_SUBGRID,
    SurfaceQuadrature,
    averaged_profile,
    build_surface_quadrature,
    highly_stressed_volume,
    nodal_effective_stress,
)

DEFAULT_CENSOR = 1e7
DEFAULT_DELTA_GRID = (0.0, 0.00625, 0.0125, 0.025, 0.05)


@dataclass(frozen=True)
class PoissonParams:
    sn: SNParams
    beta: float
    delta: float = 0.0

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not self.delta >= 0:
            raise ValueError(f"delta must be non-negative, got {self.delta}")

    @classmethod
    def from_values(cls, A1, A2, A3, q, tau, beta, delta=0.0) -> "PoissonParams":
        return cls(SNParams(A1, A2, A3, q, tau), beta, delta)


@dataclass(frozen=True)
class Experiment:
    S_max: float
    R: float
    n: float
    failed: bool
    specimen: str = ""

    def __post_init__(self):
        if not self.n > 0:
            raise ValueError(f"cycle count must be positive, got {self.n}")
        if not self.R < 1:
            raise ValueError(f"stress ratio must be < 1, got {self.R}")
        if not self.S_max > 0:
            raise ValueError(f"S_max must be positive, got {self.S_max}")


@dataclass(frozen=True)
class SpecimenCache:
    """Precomputed per-specimen quantities shared by all likelihood calls."""

    name: str
    geometry: SpecimenGeometry
    field: UnitStressField
    quadrature: SurfaceQuadrature
    pointwise: np.ndarray
    profiles: Mapping = field(default_factory=dict)
    subgrid: int = DEFAULT_SUBGRID

    @property
    def mesh(self) -> TriMesh:
        return self.field.mesh

    @property
    def width_ratio(self) -> float:
        return self.geometry.width_ratio

    @property
    def deltas(self) -> np.ndarray:
        return np.array(sorted(self.profiles))

    def exact_profile(self, delta: float) -> np.ndarray:
        if delta == 0:
            return self.pointwise
        for d, v in self.profiles.items():
            if math.isclose(d, delta, rel_tol=0, abs_tol=1e-12):
                return v
        return averaged_profile(self.field, delta, self.subgrid).values

    def profile(self, delta: float) -> np.ndarray:
        """Averaged unit profile at ``delta``.

        Exact on the precomputed grid, linearly interpolated in delta between
        grid points.
        """
        if delta == 0:
            return self.pointwise
        grid = self.deltas
        for d in grid:
            if abs(d - delta) <= 1e-12:
                return self.profiles[d]
        if len(grid) < 2 or delta < grid[0] or delta > grid[-1]:
            raise ValueError(f"delta={delta} outside the precomputed grid {grid.tolist()}")
        k = int(np.searchsorted(grid, delta))
        d0, d1 = grid[k - 1], grid[k]
        t = (delta - d0) / (d1 - d0)
        return (1 - t) * self.profiles[d0] + t * self.profiles[d1]

    def with_deltas(self, deltas) -> "SpecimenCache":
        profiles = dict(self.profiles)
        for d in deltas:
            d = float(d)
            if not any(abs(d - k) <= 1e-12 for k in profiles):
                profiles[d] = self.exact_profile(d)
        return replace(self, profiles=profiles)

    def stressed_area(self, beta: float) -> float:
        return highly_stressed_volume(self.pointwise, self.quadrature, beta)


def build_specimen_cache(geom: SpecimenGeometry, level: int = 2, name: str = "",
                         material: MaterialParams | None = None,
                         deltas: Sequence[float] = (0.0,), subgrid: int = DEFAULT_SUBGRID,
                         mesh: TriMesh | None = None) -> SpecimenCache:
    mesh = mesh if mesh is not None else mesh_geometry(geom, level)
    unit = solve_unit_stress(mesh, material)
    quad = build_surface_quadrature(mesh, geom.thickness)
    cache = SpecimenCache(name, geom, unit, quad, nodal_effective_stress(unit), {}, subgrid)
    cache = cache.with_deltas(deltas)
    return cache


def uniform_cache(geom: SpecimenGeometry, level: int = 0, name: str = "") -> SpecimenCache:
    """Cache with the exact uniform unit stress of a rectangular strip."""
    if geom.has_notch:
        raise ValueError("uniform_cache needs an un-notched strip (w_min == w_max)")
    mesh = mesh_geometry(geom, level)
    ones = np.ones(mesh.n_nodes)
    unit = UnitStressField(mesh, ones, np.zeros_like(ones), np.zeros_like(ones))
    quad = build_surface_quadrature(mesh, geom.thickness)
    return SpecimenCache(name, geom, unit, quad, ones, {})


# ---------------------------------------------------------------- evaluation


def _site_sums(n, T, prof, w, snp: SNParams):
    """Per-row sums of w*log(1 - F) and w*h over sites above the fatigue limit."""
    n, T = np.broadcast_arrays(np.asarray(n, dtype=float), np.asarray(T, dtype=float))
    shape = n.shape
    n, T = n.ravel(), T.ravel()
    active = prof * T.max() > snp.A3
    if not np.any(active):
        return np.zeros(shape), np.zeros(shape)
    s = T[:, None] * prof[active][None, :]
    lsf, h = sn.log_sf_and_hazard(n[:, None], s, snp)
    wa = w[active]
    return (lsf @ wa).reshape(shape), (h @ wa).reshape(shape)


def _out(x):
    x = np.asarray(x)
    return x if x.ndim else float(x)


def survival(n, T, cache: SpecimenCache, p: PoissonParams):
    """Probability that no crack has initiated after ``n`` cycles at traction ``T``."""
    if np.any(np.asarray(T) <= 0):
        raise ValueError("traction must be positive")
    area = cache.stressed_area(p.beta)
    lsum, _ = _site_sums(n, T, cache.profile(p.delta), cache.quadrature.weights, p.sn)
    return _out(np.exp(lsum / area))


def log_survival(n, T, cache: SpecimenCache, p: PoissonParams):
    area = cache.stressed_area(p.beta)
    lsum, _ = _site_sums(n, T, cache.profile(p.delta), cache.quadrature.weights, p.sn)
    return _out(lsum / area)


def first_crack_density(n, T, cache: SpecimenCache, p: PoissonParams):
    """Density of the first-crack cycle count."""
    area = cache.stressed_area(p.beta)
    lsum, hsum = _site_sums(n, T, cache.profile(p.delta), cache.quadrature.weights, p.sn)
    return _out(np.exp(lsum / area) * hsum / area)


@dataclass(frozen=True)
class ExperimentArrays:
    S_max: np.ndarray
    R: np.ndarray
    n: np.ndarray
    failed: np.ndarray

    @classmethod
    def from_experiments(cls, data: Sequence[Experiment]) -> "ExperimentArrays":
        return cls(np.array([e.S_max for e in data], dtype=float),
                   np.array([e.R for e in data], dtype=float),
                   np.array([e.n for e in data], dtype=float),
                   np.array([bool(e.failed) for e in data], dtype=bool))

    def traction(self, q: float, width_ratio: float) -> np.ndarray:
        return experiment_traction(self.S_max, self.R, q, width_ratio)


def group_by_specimen(data: Sequence[Experiment], caches) -> list[tuple[ExperimentArrays, SpecimenCache]]:
    """Pair experiment arrays with their specimen cache, in first-seen order."""
    if isinstance(caches, SpecimenCache):
        return [(ExperimentArrays.from_experiments(data), caches)] if len(data) else []
    order: dict[str, list[Experiment]] = {}
    for e in data:
        order.setdefault(e.specimen, []).append(e)
    groups = []
    for key, rows in order.items():
        if key not in caches:
            raise KeyError(f"no specimen cache for specimen id {key!r}")
        groups.append((ExperimentArrays.from_experiments(rows), caches[key]))
    return groups


def poisson_terms(arr: ExperimentArrays, cache: SpecimenCache, p: PoissonParams,
                  profile: np.ndarray | None = None) -> np.ndarray:
    """Per-experiment log-likelihood contributions of the spatial Poisson model."""
    if len(arr.n) == 0:
        return np.zeros(0)
    area = cache.stressed_area(p.beta)
    prof = cache.profile(p.delta) if profile is None else profile
    T = arr.traction(p.sn.q, cache.width_ratio)
    lsum, hsum = _site_sums(arr.n, T, prof, cache.quadrature.weights, p.sn)
    terms = lsum / area
    with np.errstate(divide="ignore"):
        log_rate = np.log(hsum / area)
    return np.where(arr.failed, terms + log_rate, terms)


def poisson_log_likelihood(data, caches, p: PoissonParams) -> float:
    """Log-likelihood of censored first-crack data under the spatial Poisson model.

    ``data`` is a sequence of :class:`Experiment` (or the pre-grouped output of
    :func:`group_by_specimen`); ``caches`` a single cache or a mapping from
    specimen id to cache.  Each specimen uses its own stressed_area(beta).  A failure
    that is impossible (all stresses at or below A3) gives ``-inf``.
    """
    groups = data if _is_grouped(data) else group_by_specimen(data, caches)
    total = 0.0
    for arr, cache in groups:
        total += float(np.sum(poisson_terms(arr, cache, p)))
    return total


def max_stress_terms(arr: ExperimentArrays, cache: SpecimenCache, snp: SNParams,
                     delta: float = 0.0, profile: np.ndarray | None = None) -> np.ndarray:
    prof = cache.profile(delta) if profile is None else profile
    s = arr.traction(snp.q, cache.width_ratio) * float(np.max(prof))
    lf = np.asarray(sn.log_pdf(arr.n, s, snp))
    ls = np.asarray(sn.log_sf(arr.n, s, snp))
    return np.where(arr.failed, lf, ls)


def max_stress_log_likelihood(data, caches, snp: SNParams, delta: float = 0.0) -> float:
    """Censored lognormal likelihood at the peak averaged stress of each specimen."""
    groups = data if _is_grouped(data) else group_by_specimen(data, caches)
    total = 0.0
    for arr, cache in groups:
        total += float(np.sum(max_stress_terms(arr, cache, snp, delta)))
    return total


def _is_grouped(data) -> bool:
    return (isinstance(data, list) and len(data) > 0 and isinstance(data[0], tuple)
            and len(data[0]) == 2 and isinstance(data[0][0], ExperimentArrays))


# ---------------------------------------------------------------- simulation


@dataclass(frozen=True)
class LifeDraw:
    cycles: float
    failed: bool
    u: float


def sample_life(T: float, cache: SpecimenCache, p: PoissonParams, rng=None,
                n_censor: float = DEFAULT_CENSOR) -> LifeDraw:
    """Draw a first-crack life by inverting the survival function.

    A uniform draw U at or below survival(n_censor) is a run-out at
    ``n_censor``; otherwise survival(n) = U is solved by bisection in log n.
    """
    rng = np.random.default_rng(rng)
    u = float(rng.uniform())
    log_u = math.log(u) if u > 0 else -np.inf
    area = cache.stressed_area(p.beta)
    prof = cache.profile(p.delta)
    w = cache.quadrature.weights

    def g(log10_n):
        lsum, _ = _site_sums(10.0 ** log10_n, T, prof, w, p.sn)
        return float(lsum) / area - log_u

    hi = math.log10(n_censor)
    if g(hi) >= 0:
        return LifeDraw(float(n_censor), False, u)
    lo = hi - 1.0
    while g(lo) < 0:
        lo -= 1.0
        if lo < -30:
            raise RuntimeError("could not bracket the sampled life")
    root = bisect(g, lo, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=200)
    return LifeDraw(10.0 ** root, True, u)


def simulate_experiments(S_max, R, cache: SpecimenCache, p: PoissonParams, seed=None,
                         n_censor: float = DEFAULT_CENSOR, specimen: str | None = None
                         ) -> list[Experiment]:
    """One simulated experiment per (S_max, R) pair, deterministic given ``seed``."""
    S_max, R = np.broadcast_arrays(np.asarray(S_max, float), np.asarray(R, float))
    rng = np.random.default_rng(seed)
    spec = cache.name if specimen is None else specimen
    out = []
    for s, r in zip(S_max.ravel(), R.ravel()):
        T = float(experiment_traction(s, r, p.sn.q, cache.width_ratio))
        draw = sample_life(T, cache, p, rng, n_censor)
        out.append(Experiment(float(s), float(r), draw.cycles, draw.failed, spec))
    return out
