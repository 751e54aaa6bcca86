"""Maximum-likelihood calibration, profile likelihood in delta, and AIC."""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logit

from .poisson import (
    DEFAULT_DELTA_GRID,
    Experiment,
    PoissonParams,
    SpecimenCache,
    build_specimen_cache,
    _site_sums,
    group_by_specimen,
    max_stress_terms,
    poisson_terms,
)
from .sn import SNParams

log = logging.getLogger(__name__)

PARAM_NAMES = ("A1", "A2", "A3", "q", "tau", "beta", "delta")

DEFAULT_BOUNDS = {
    "A1": (2.0, 13.0),
    "A2": (-7.0, 0.0),
    "A3": (20.0, 40.0),
    "q": (0.1, 1.0),
    "tau": (0.01, 1.5),
    "beta": (0.01, 5.0),
    "delta": (0.0, 0.05),
}

MODELS = ("poisson", "max_stress")

PROFILE_DROP = 1.92  # half the 95% chi-square(1) quantile


def aic(p: int, loglik: float) -> float:
    """Akaike information criterion 2 (p - log L*)."""
    if p < 1:
        raise ValueError("number of parameters must be at least 1")
    return 2.0 * (p - loglik)


@dataclass
class FitResult:
    estimates: dict
    max_loglik: float
    aic: float
    n_free: int
    free: tuple
    converged: bool
    n_evals: int
    bounds: dict
    model: str
    seed: int | None = None
    mesh_level: int | None = None
    starts: list = field(default_factory=list)

    def params(self) -> PoissonParams:
        e = self.estimates
        return PoissonParams.from_values(e["A1"], e["A2"], e["A3"], e["q"], e["tau"],
                                         e.get("beta", 1.0), e.get("delta", 0.0))

    def sn_params(self) -> SNParams:
        e = self.estimates
        return SNParams(e["A1"], e["A2"], e["A3"], e["q"], e["tau"])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bounds"] = {k: list(v) for k, v in self.bounds.items()}
        d["free"] = list(self.free)
        return d


def _default_free(model: str, delta_free: bool) -> tuple:
    names = ["A1", "A2", "A3", "q", "tau"]
    if model == "poisson":
        names.append("beta")
    if delta_free:
        names.append("delta")
    return tuple(names)


class BetaPlateaus:
    """Piecewise-constant structure of stressed_area(beta) over a bounded beta range.

    The stressed area changes only where beta crosses a site stress, so the
    range splits into intervals on which every specimen's area is constant.
    """

    def __init__(self, caches: Sequence[SpecimenCache], lo: float, hi: float):
        cuts = [lo, hi]
        for c in caches:
            v = np.asarray(c.pointwise)
            cuts.extend(v[(v > lo) & (v < hi)].tolist())
        edges = np.unique(cuts)
        self.lower = edges[:-1]
        self.upper = edges[1:]
        self.mid = 0.5 * (self.lower + self.upper)
        self.areas = np.array([[float(np.dot(c.quadrature.weights, c.pointwise > b))
                                 for b in self.mid] for c in caches])

    def best(self, lsums: Sequence[float], n_failed: Sequence[int], log_rates: float):
        """(log-likelihood, beta) maximized over plateaus for fixed S-N parameters."""
        g = self.areas
        with np.errstate(divide="ignore", invalid="ignore"):
            ll = (np.asarray(lsums)[:, None] / g - np.asarray(n_failed)[:, None] * np.log(g)).sum(0)
        ll = np.where(np.all(g > 0, axis=0), ll + log_rates, -np.inf)
        j = int(np.argmax(ll))
        return float(ll[j]), float(self.mid[j])


class _Objective:
    """Negative log-likelihood over the logistic-transformed free parameters."""

    def __init__(self, groups, model, free, fixed, bounds, profile_beta=False):
        self.groups = groups
        self.model = model
        self.fixed = fixed
        self.plateaus = None
        if profile_beta:
            free = tuple(k for k in free if k != "beta")
            self.plateaus = BetaPlateaus([c for _, c in groups], *bounds["beta"])
        self.free = free
        self.lo = np.array([bounds[k][0] for k in free])
        self.hi = np.array([bounds[k][1] for k in free])
        self.n_evals = 0
        self.beta_hat = None

    def _profiled(self, snp: SNParams, delta: float, exact_delta: bool) -> float:
        lsums, n_failed, log_rates = [], [], 0.0
        for arr, cache in self.groups:
            prof = cache.exact_profile(delta) if exact_delta else cache.profile(delta)
            T = arr.traction(snp.q, cache.width_ratio)
            lsum, hsum = _site_sums(arr.n, T, prof, cache.quadrature.weights, snp)
            with np.errstate(divide="ignore"):
                log_rates += float(np.sum(np.log(hsum[arr.failed])))
            lsums.append(float(np.sum(lsum)))
            n_failed.append(int(np.sum(arr.failed)))
        if not math.isfinite(log_rates):
            return -math.inf
        ll, self.beta_hat = self.plateaus.best(lsums, n_failed, log_rates)
        return ll

    def to_x(self, z):
        return self.lo + (self.hi - self.lo) * expit(z)

    def to_z(self, x):
        u = (np.asarray(x, float) - self.lo) / (self.hi - self.lo)
        return logit(np.clip(u, 1e-9, 1 - 1e-9))

    def values(self, x) -> dict:
        v = dict(self.fixed)
        v.update(zip(self.free, np.asarray(x, float).tolist()))
        return v

    def loglik(self, values: dict, exact_delta: bool = False) -> float:
        try:
            snp = SNParams(values["A1"], values["A2"], values["A3"], values["q"], values["tau"])
            delta = values.get("delta", 0.0)
            if self.plateaus is not None and "beta" not in values:
                return self._profiled(snp, delta, exact_delta)
            total = 0.0
            for arr, cache in self.groups:
                prof = cache.exact_profile(delta) if exact_delta else cache.profile(delta)
                if self.model == "poisson":
                    p = PoissonParams(snp, values["beta"], delta)
                    terms = poisson_terms(arr, cache, p, prof)
                else:
                    terms = max_stress_terms(arr, cache, snp, delta, prof)
                total += float(np.sum(terms))
        except ValueError:
            return -math.inf
        return total if math.isfinite(total) else -math.inf

    def __call__(self, z):
        self.n_evals += 1
        ll = self.loglik(self.values(self.to_x(z)))
        return -ll if math.isfinite(ll) else 1e300


def _nelder_mead(obj, z, maxfev, xatol, fatol):
    """Nelder-Mead restarted from its own result until the objective stalls."""
    f_prev = obj(z)
    res = None
    for _ in range(6):
        res = minimize(obj, z, method="Nelder-Mead",
                       options=dict(maxfev=maxfev, xatol=xatol, fatol=fatol,
                                    adaptive=len(z) > 2))
        z = res.x
        if f_prev - res.fun < fatol:
            break
        f_prev = res.fun
    return z, float(res.fun), bool(res.success)


def _feasible(obj: _Objective, x: np.ndarray) -> np.ndarray:
    """Lower A3 toward its bound until every failure is possible, if needed.

    A failure has zero likelihood only when no site stress exceeds A3, so
    lowering A3 is the one move that always restores a finite likelihood.
    """
    if math.isfinite(obj.loglik(obj.values(x))) or "A3" not in obj.free:
        return x
    j = obj.free.index("A3")
    y = np.array(x, float)
    for _ in range(30):
        y[j] = obj.lo[j] + 0.5 * (y[j] - obj.lo[j])
        if math.isfinite(obj.loglik(obj.values(y))):
            return y
    return x


def mle(data: Sequence[Experiment], caches, model: str = "poisson", *,
        free: Sequence[str] | None = None, fixed: Mapping | None = None,
        bounds: Mapping | None = None, delta: float | str = 0.0,
        n_starts: int = 8, seed: int | None = 0, x0: Mapping | None = None,
        maxfev: int = 6000, xatol: float = 1e-7, fatol: float = 1e-8,
        mesh_level: int | None = None, profile_beta: bool = True,
        beta_scan: int = 6) -> FitResult:
    """Maximum-likelihood fit with multi-start Nelder-Mead.

    Parameters are mapped to open boxes with a logistic transform.  ``delta``
    is either a fixed value or ``"free"``; a free delta uses the caches'
    delta-grid profiles (linear in delta) and the reported log-likelihood is
    re-evaluated with the exact averaged profile at the estimate.
    ``x0`` (partial dicts allowed) is tried as the first start.

    With ``profile_beta`` (Poisson model, beta free) beta is maximized out
    exactly for each trial of the other parameters: stressed_area(beta) is a step
    function, and on each step the likelihood is known in closed form.  The
    reported beta is the midpoint of the optimal step.  Before the profiled
    search, ``beta_scan`` fixed-beta fits on an even beta grid supply an
    extra start, since the likelihood can have separate modes trading beta
    against tau.
    """
    if model not in MODELS:
        raise ValueError(f"model must be one of {MODELS}")
    if not data:
        raise ValueError("dataset is empty")
    delta_free = delta == "free"
    bounds = {**DEFAULT_BOUNDS, **(bounds or {})}
    for k, (lo, hi) in bounds.items():
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise ValueError(f"bounds for {k} must be finite with lower < upper")
    if isinstance(caches, SpecimenCache):
        caches_in = caches
    else:
        caches_in = dict(caches)
    if delta_free:
        grid = DEFAULT_DELTA_GRID
        lo, hi = bounds["delta"]
        grid = sorted(set(grid) | {lo, hi})
        if isinstance(caches_in, SpecimenCache):
            caches_in = caches_in.with_deltas(grid)
        else:
            caches_in = {k: c.with_deltas(grid) for k, c in caches_in.items()}
    groups = group_by_specimen(data, caches_in)

    free = tuple(free) if free is not None else _default_free(model, delta_free)
    fixed = dict(fixed or {})
    if not delta_free:
        fixed["delta"] = float(delta)
    needed = [k for k in PARAM_NAMES if not (model == "max_stress" and k == "beta")]
    missing = [k for k in needed if k not in free and k not in fixed]
    if missing:
        raise ValueError(f"parameters neither free nor fixed: {missing}")
    use_profile = profile_beta and model == "poisson" and "beta" in free
    obj = _Objective(groups, model, free, fixed, bounds, profile_beta=use_profile)
    rng = np.random.default_rng(seed)

    starts = []
    if x0:
        base = [x0.get(k, 0.5 * (bounds[k][0] + bounds[k][1])) for k in obj.free]
        starts.append(_feasible(obj, np.clip(base, obj.lo + 1e-6 * (obj.hi - obj.lo),
                                             obj.hi - 1e-6 * (obj.hi - obj.lo))))
    while len(starts) < n_starts:
        for _ in range(200):
            cand = obj.lo + (obj.hi - obj.lo) * rng.uniform(0.05, 0.95, len(obj.free))
            if math.isfinite(obj.loglik(obj.values(cand))):
                break
        starts.append(_feasible(obj, cand))

    records = []
    extra_evals = 0
    if use_profile and beta_scan > 0:
        # Fixed-beta fits are smooth in the other parameters; chaining them over
        # a beta grid seeds the profiled search near each local mode.
        peak = min(float(np.max(c.pointwise)) for _, c in groups)
        b_lo, b_hi = bounds["beta"][0], min(bounds["beta"][1], peak)
        scan_best, scan_ll, x_cur = None, -math.inf, starts[0]
        for b in np.linspace(b_lo, b_hi, beta_scan + 2)[1:-1]:
            sub = _Objective(groups, model, obj.free, {**fixed, "beta": float(b)}, bounds)
            z, fun, _ = _nelder_mead(sub, sub.to_z(x_cur), maxfev, xatol, fatol)
            extra_evals += sub.n_evals
            ll = -fun if fun < 1e299 else -math.inf
            records.append(dict(start=sub.values(x_cur), loglik=ll, beta_fixed=float(b)))
            if ll > scan_ll:
                scan_best, scan_ll = sub.to_x(z), ll
            if math.isfinite(ll):
                x_cur = sub.to_x(z)
        if scan_best is not None:
            starts.insert(0, scan_best)

    best_x, best_ll, converged = None, -math.inf, False
    for x_start in starts:
        z, fun, success = _nelder_mead(obj, obj.to_z(x_start), maxfev, xatol, fatol)
        ll = -fun if fun < 1e299 else -math.inf
        records.append(dict(start=obj.values(x_start), loglik=ll))
        if ll > best_ll:
            best_x, best_ll, converged = obj.to_x(z), ll, success

    if best_x is None:
        log.warning("all starts stayed in the zero-likelihood region")
        best_x = starts[0]
    values = obj.values(best_x)
    final_ll = obj.loglik(values, exact_delta=delta_free) if best_ll > -math.inf else -math.inf
    if use_profile:
        values["beta"] = obj.beta_hat if obj.beta_hat is not None else 0.5 * sum(bounds["beta"])
        values = {k: values[k] for k in PARAM_NAMES if k in values}
    n_free = len(free)
    return FitResult(
        estimates=values,
        max_loglik=final_ll,
        aic=aic(n_free, final_ll) if math.isfinite(final_ll) else math.inf,
        n_free=n_free,
        free=free,
        converged=converged and math.isfinite(final_ll),
        n_evals=obj.n_evals + extra_evals,
        bounds={k: tuple(bounds[k]) for k in free},
        model=model,
        seed=seed,
        mesh_level=mesh_level,
        starts=records,
    )


@dataclass
class ProfileLikelihood:
    deltas: np.ndarray
    logliks: np.ndarray
    fits: list
    interval: tuple
    best_delta: float

    def rows(self) -> list[tuple[float, float]]:
        return list(zip(self.deltas.tolist(), self.logliks.tolist()))


def drop_interval(xs, ys, drop: float = PROFILE_DROP) -> tuple[float, float]:
    """Range of x where the profile stays within ``drop`` of its maximum.

    Crossings between grid points are located by linear interpolation; if the
    profile never falls below the cut on one side the grid end is returned.
    """
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    k = int(np.nanargmax(ys))
    cut = ys[k] - drop
    lo = xs[0]
    for i in range(k, 0, -1):
        if ys[i - 1] < cut:
            t = (ys[i] - cut) / (ys[i] - ys[i - 1])
            lo = xs[i] - t * (xs[i] - xs[i - 1])
            break
    hi = xs[-1]
    for i in range(k, len(xs) - 1):
        if ys[i + 1] < cut:
            t = (ys[i] - cut) / (ys[i] - ys[i + 1])
            hi = xs[i] + t * (xs[i + 1] - xs[i])
            break
    return float(lo), float(hi)


def profile_likelihood_delta(data, caches, delta_grid: Sequence[float],
                             model: str = "poisson", **mle_kwargs) -> ProfileLikelihood:
    """Maximized log-likelihood over the other parameters at each fixed delta."""
    grid = sorted(float(d) for d in delta_grid)
    if not grid:
        raise ValueError("delta grid is empty")
    if grid[0] < 0:
        raise ValueError("delta values must be non-negative")
    if isinstance(caches, SpecimenCache):
        caches = caches.with_deltas(grid)
    else:
        caches = {k: c.with_deltas(grid) for k, c in caches.items()}
    fits = []
    x0 = mle_kwargs.pop("x0", None)
    for d in grid:
        fit = mle(data, caches, model, delta=d, x0=x0, **mle_kwargs)
        fits.append(fit)
        if math.isfinite(fit.max_loglik):
            x0 = fit.estimates
    ll = np.array([f.max_loglik for f in fits])
    interval = drop_interval(grid, ll)
    return ProfileLikelihood(np.array(grid), ll, fits, interval, grid[int(np.nanargmax(ll))])


@dataclass
class ConvergenceRow:
    level: int
    n_triangles: int
    fit: FitResult


def mesh_convergence(data, geometries: Mapping, levels: Sequence[int] = (0, 1, 2, 3, 4),
                     model: str = "poisson", material=None, **mle_kwargs) -> list[ConvergenceRow]:
    """Refit at successive uniform refinements of each specimen mesh.

    ``geometries`` maps specimen id to geometry.  The fit at each level warm
    starts from the previous level's estimate.
    """
    rows = []
    x0 = mle_kwargs.pop("x0", None)
    for level in levels:
        caches = {k: build_specimen_cache(g, level, k, material) for k, g in geometries.items()}
        fit = mle(data, caches, model, x0=x0, mesh_level=level, **mle_kwargs)
        n_tri = sum(c.mesh.n_triangles for c in caches.values())
        rows.append(ConvergenceRow(level, n_tri, fit))
        log.info("level %d: %d triangles, loglik %.4f", level, n_tri, fit.max_loglik)
        x0 = fit.estimates
    return rows
