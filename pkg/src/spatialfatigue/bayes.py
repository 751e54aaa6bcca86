"""Bayesian inference for the spatial Poisson model.

Uniform priors on a box, adaptive random-walk Metropolis, posterior summaries,
DIC and the Laplace-Metropolis estimate of the log marginal likelihood.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from .poisson import (
    PoissonParams,
    SpecimenCache,
    group_by_specimen,
    poisson_terms,
    survival,
)
from .fem import experiment_traction
from .stress import EmptyRegionError

SAMPLED = ("A1", "A2", "A3", "q", "tau", "beta")


class InitializationError(RuntimeError):
    pass


class SingularCovarianceError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class PriorBox:
    """Independent uniform priors; defaults are the box used for the pooled data."""

    lower: tuple = (2.0, -7.0, 20.0, 0.1, 0.01, 0.01)
    upper: tuple = (13.0, 0.0, 40.0, 1.0, 1.5, 5.0)
    names: tuple = SAMPLED

    def __post_init__(self):
        if not (len(self.lower) == len(self.upper) == len(self.names)):
            raise ValueError("prior bounds and names must have equal length")
        for n, lo, hi in zip(self.names, self.lower, self.upper):
            if not lo < hi:
                raise ValueError(f"prior for {n}: lower bound must be below upper")

    @property
    def dim(self) -> int:
        return len(self.names)

    def contains(self, x) -> bool:
        x = np.asarray(x)
        return bool(np.all(x > np.asarray(self.lower)) and np.all(x < np.asarray(self.upper)))

    def log_density(self) -> float:
        return -float(np.sum(np.log(np.subtract(self.upper, self.lower))))

    def sample(self, rng, size=None) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(size, self.dim) if size else self.dim)


@dataclass
class Chain:
    """Post burn-in samples of an adaptive Metropolis run."""

    samples: np.ndarray
    log_lik: np.ndarray
    log_post: np.ndarray
    acceptance_rate: float
    seed: int | None
    burn_in: int
    names: tuple = SAMPLED
    proposal_cov: np.ndarray | None = None
    delta: float = 0.0

    def __len__(self) -> int:
        return len(self.samples)

    def thinned(self, stride: int) -> "Chain":
        s = slice(None, None, max(1, int(stride)))
        return Chain(self.samples[s], self.log_lik[s], self.log_post[s], self.acceptance_rate,
                     self.seed, self.burn_in, self.names, self.proposal_cov, self.delta)


def random_walk_metropolis(log_lik: Callable[[np.ndarray], float], x0, lower, upper,
                           n_iter: int, seed: int | None = None, burn_in_frac: float = 0.2,
                           target_accept: float = 0.23, init_cov=None,
                           names: Sequence[str] | None = None) -> Chain:
    """Gaussian random-walk Metropolis on a box with adaptation during burn-in.

    The target is exp(log_lik) times a uniform density on the box; proposals
    outside the box are rejected.  During burn-in the proposal covariance is
    (2.38^2/d) * lambda^2 * S, where S is the running sample covariance
    (diagonal for the first half of burn-in, full afterwards) and lambda is
    tuned toward ``target_accept``.  Both are frozen after burn-in.
    """
    rng = np.random.default_rng(seed)
    lower = np.asarray(lower, float)
    upper = np.asarray(upper, float)
    x = np.asarray(x0, float).copy()
    d = len(x)
    names = tuple(names) if names is not None else tuple(f"x{i}" for i in range(d))
    log_prior = -float(np.sum(np.log(upper - lower)))
    ll = float(log_lik(x))
    if not (np.all(x > lower) and np.all(x < upper)) or not math.isfinite(ll):
        raise InitializationError("starting point has zero posterior density")

    n_burn = int(burn_in_frac * n_iter)
    n_keep = n_iter - n_burn
    cov = (np.diag(((upper - lower) / 20.0) ** 2) if init_cov is None
           else np.atleast_2d(np.asarray(init_cov, float)))
    base = 2.38 ** 2 / d
    log_lam = 0.0
    prop_chol = np.linalg.cholesky(base * cov)

    mean = x.copy()
    m2 = np.zeros((d, d))
    count = 1
    samples = np.empty((n_keep, d))
    lls = np.empty(n_keep)
    accepted = 0
    for it in range(n_iter):
        y = x + prop_chol @ rng.standard_normal(d)
        acc = False
        if np.all(y > lower) and np.all(y < upper):
            ly = float(log_lik(y))
            if math.isfinite(ly) and math.log(rng.uniform()) < ly - ll:
                x, ll, acc = y, ly, True
        else:
            # Keep the random stream aligned whether or not the proposal was in the box.
            rng.uniform()
        if it < n_burn:
            count += 1
            dx = x - mean
            mean += dx / count
            m2 += np.outer(dx, x - mean)
            log_lam += ((1.0 if acc else 0.0) - target_accept) / (it + 1) ** 0.6
            if it >= 10 * d:
                emp = m2 / (count - 1)
                if it < n_burn // 2:
                    emp = np.diag(np.diag(emp))
                emp = emp + 1e-10 * np.diag(np.diag(emp) + 1e-12)
                try:
                    prop_chol = np.linalg.cholesky(base * math.exp(2 * log_lam) * emp)
                except np.linalg.LinAlgError:
                    pass
            elif acc or it % 10 == 0:
                prop_chol = np.linalg.cholesky(base * math.exp(2 * log_lam) * cov)
        else:
            k = it - n_burn
            samples[k] = x
            lls[k] = ll
            accepted += acc
    rate = accepted / n_keep if n_keep else float("nan")
    return Chain(samples, lls, lls + log_prior, rate, seed, n_burn, names,
                 prop_chol @ prop_chol.T)


def mcmc(data, caches, prior: PriorBox | None = None, delta: float = 0.0,
         n_iter: int = 20000, seed: int | None = 0, x0=None, **kwargs) -> Chain:
    """Sample (A1, A2, A3, q, tau, beta) with delta held fixed."""
    if n_iter < 1000:
        raise ValueError("n_iter must be at least 1000")
    prior = prior or PriorBox()
    if isinstance(caches, SpecimenCache):
        caches = caches.with_deltas([delta])
    else:
        caches = {k: c.with_deltas([delta]) for k, c in caches.items()}
    groups = group_by_specimen(data, caches)
    loglik = make_loglik(groups, delta)

    rng = np.random.default_rng(seed)
    start = None
    if x0 is not None and prior.contains(x0) and math.isfinite(loglik(np.asarray(x0, float))):
        start = np.asarray(x0, float)
    else:
        for _ in range(100):
            cand = prior.sample(rng)
            if math.isfinite(loglik(cand)):
                start = cand
                break
    if start is None:
        raise InitializationError("no prior draw out of 100 gave a finite likelihood")
    chain = random_walk_metropolis(loglik, start, prior.lower, prior.upper, n_iter,
                                   seed=seed, names=prior.names, **kwargs)
    chain.delta = delta
    return chain


def make_loglik(groups, delta: float) -> Callable[[np.ndarray], float]:
    """Log-likelihood of pre-grouped data as a function of the sampled vector."""

    def loglik(x) -> float:
        try:
            p = PoissonParams.from_values(*np.asarray(x, float).tolist(), delta)
            total = 0.0
            for arr, cache in groups:
                total += float(np.sum(poisson_terms(arr, cache, p)))
        except (ValueError, EmptyRegionError):
            return -math.inf
        return total if math.isfinite(total) else -math.inf

    return loglik


@dataclass
class PosteriorSummary:
    names: tuple
    mean: np.ndarray
    sd: np.ndarray
    quantiles: dict
    corr: np.ndarray
    degenerate: tuple
    histograms: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "mean": self.mean.tolist(),
            "sd": self.sd.tolist(),
            "quantiles": {k: v.tolist() for k, v in self.quantiles.items()},
            "corr": self.corr.tolist(),
            "degenerate": list(self.degenerate),
        }


def posterior_summary(chain: Chain, bins: int = 40) -> PosteriorSummary:
    """Marginal moments, 2.5/50/97.5% quantiles, histograms and Pearson correlations.

    Parameters with zero spread get zero correlation with everything else and
    are listed in ``degenerate``.
    """
    x = np.asarray(chain.samples, float)
    mean = x.mean(axis=0)
    sd = x.std(axis=0, ddof=1) if len(x) > 1 else np.zeros(x.shape[1])
    q = np.percentile(x, [2.5, 50, 97.5], axis=0)
    quantiles = {"2.5%": q[0], "50%": q[1], "97.5%": q[2]}
    degen = sd <= 1e-14 * np.maximum(np.abs(mean), 1.0)
    d = x.shape[1]
    corr = np.eye(d)
    ok = ~degen
    if ok.sum() > 1:
        sub = np.clip(np.corrcoef(x[:, ok], rowvar=False), -1.0, 1.0)
        np.fill_diagonal(sub, 1.0)
        corr[np.ix_(ok, ok)] = sub
    hists = {}
    for j, name in enumerate(chain.names):
        counts, edges = np.histogram(x[:, j], bins=bins)
        hists[name] = (counts, edges)
    return PosteriorSummary(tuple(chain.names), mean, sd, quantiles, corr,
                            tuple(n for n, g in zip(chain.names, degen) if g), hists)


@dataclass(frozen=True)
class DICResult:
    dic: float
    p_d: float
    mean_deviance: float
    deviance_at_point: float
    fallback: bool


def dic(chain: Chain, loglik: Callable[[np.ndarray], float]) -> DICResult:
    """Deviance information criterion 2 * mean(D) - D(posterior mean).

    If the posterior mean has zero likelihood, the deviance at the sample with
    the highest posterior density is used instead and ``fallback`` is set.
    """
    dbar = float(np.mean(-2.0 * chain.log_lik))
    point = chain.samples.mean(axis=0)
    ll = float(loglik(point))
    fallback = not math.isfinite(ll)
    if fallback:
        ll = float(chain.log_lik[int(np.argmax(chain.log_post))])
    dhat = -2.0 * ll
    return DICResult(2 * dbar - dhat, dbar - dhat, dbar, dhat, fallback)


def laplace_metropolis_logml(chain: Chain) -> float:
    """Laplace-Metropolis log marginal likelihood from posterior samples.

    (d/2) log(2 pi) + (1/2) log det(sample covariance) + max(log-lik + log-prior).
    """
    x = np.asarray(chain.samples, float)
    d = x.shape[1]
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0 or not math.isfinite(logdet):
        raise SingularCovarianceError(
            "posterior sample covariance is singular; run a longer chain")
    return 0.5 * d * math.log(2 * math.pi) + 0.5 * logdet + float(np.max(chain.log_post))


@dataclass
class SurvivalBand:
    n_grid: np.ndarray
    curves: np.ndarray
    reference: np.ndarray | None = None


def posterior_survival_band(chain: Chain, cache: SpecimenCache, S_max: float, R: float,
                            n_grid, stride: int = 10, reference: PoissonParams | None = None,
                            delta: float | None = None) -> SurvivalBand:
    """Survival curves over ``n_grid`` for every ``stride``-th posterior sample."""
    delta = chain.delta if delta is None else delta
    cache = cache.with_deltas([delta])
    n_grid = np.asarray(n_grid, float)
    sub = chain.thinned(stride)
    curves = np.empty((len(sub), len(n_grid)))
    for i, x in enumerate(sub.samples):
        p = PoissonParams.from_values(*x.tolist(), delta)
        T = experiment_traction(S_max, R, p.sn.q, cache.width_ratio)
        curves[i] = survival(n_grid, T, cache, p)
    ref = None
    if reference is not None:
        T = experiment_traction(S_max, R, reference.sn.q, cache.width_ratio)
        ref = np.asarray(survival(n_grid, T, cache.with_deltas([reference.delta]), reference))
    return SurvivalBand(n_grid, curves, ref)
