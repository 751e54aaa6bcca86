import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from spatialfatigue import sn
from spatialfatigue.fem import MaterialParams, assemble_solve, experiment_traction, recover_stress
from spatialfatigue.geometry import mesh_geometry
from spatialfatigue.poisson import (
    Experiment, PoissonParams, build_specimen_cache, first_crack_density, group_by_specimen,
    log_survival, max_stress_log_likelihood, poisson_log_likelihood, poisson_terms,
    sample_life, simulate_experiments, survival, uniform_cache,
)
from spatialfatigue.stress import EmptyRegionError, nodal_effective_stress

P = PoissonParams.from_values(6.0, -1.2, 40.0, 0.6, 0.23, 1.9)


def sn_oracle(p, s):
    log_mean = p.sn.A1 + p.sn.A2 * math.log10(s - p.sn.A3)
    return stats.lognorm(s=p.sn.tau * math.log(10), scale=10 ** log_mean)


def test_param_validation():
    with pytest.raises(ValueError):
        PoissonParams.from_values(6, -1.2, 40, 0.6, 0.23, 0.0)
    with pytest.raises(ValueError):
        PoissonParams.from_values(6, -1.2, 40, 0.6, 0.23, 1.0, -0.1)
    with pytest.raises(ValueError):
        Experiment(40.0, 1.0, 1e5, True)
    with pytest.raises(ValueError):
        Experiment(40.0, 0.0, 0.0, True)


@pytest.mark.parametrize("T", [41.0, 45.0, 60.0])
def test_uniform_strip_consistency(strip_cache, T):
    p = PoissonParams.from_values(6.0, -1.2, 40.0, 0.6, 0.23, 0.5)
    n = np.geomspace(1e3, 1e8, 25)
    ref = sn_oracle(p, T)
    assert np.allclose(survival(n, T, strip_cache, p), ref.sf(n), rtol=0, atol=1e-10)
    assert np.allclose(first_crack_density(n, T, strip_cache, p), ref.pdf(n), rtol=1e-10,
                       atol=1e-300)


def test_below_limit_everywhere(spec2_cache):
    T = 0.99 * P.sn.A3 / spec2_cache.pointwise.max()
    n = np.array([1e3, 1e6, 1e9])
    assert np.all(survival(n, T, spec2_cache, P) == 1.0)
    assert np.all(first_crack_density(n, T, spec2_cache, P) == 0.0)


def test_survival_monotone_on_specimen2(spec2_cache):
    assert survival(1e7, 25.0, spec2_cache, P) < survival(1e5, 25.0, spec2_cache, P)
    n = np.geomspace(1e3, 1e8, 40)
    for T in (15.0, 20.0, 30.0):
        s = survival(n, T, spec2_cache, P)
        assert np.all(np.diff(s) <= 0) and np.all((s >= 0) & (s <= 1))
    Ts = np.linspace(14, 40, 30)
    s = np.array([survival(1e6, t, spec2_cache, P) for t in Ts])
    assert np.all(np.diff(s) <= 0)


@settings(max_examples=30, deadline=None)
@given(log_n=st.floats(4, 7.5), T=st.floats(15, 35))
def test_density_is_minus_survival_derivative(spec2_cache, log_n, T):
    n = 10 ** log_n
    rho = first_crack_density(n, T, spec2_cache, P)
    h = 1e-4 * n
    fd = -(survival(n + h, T, spec2_cache, P) - survival(n - h, T, spec2_cache, P)) / (2 * h)
    if rho < 1e-250:
        return
    assert fd == pytest.approx(rho, rel=1e-4)


def test_empty_region_propagates(spec2_cache):
    p = PoissonParams.from_values(6.0, -1.2, 40.0, 0.6, 0.23, 10.0)
    with pytest.raises(EmptyRegionError):
        survival(1e5, 20.0, spec2_cache, p)


def test_loglik_trivial_cases(spec2_cache):
    assert poisson_log_likelihood([], spec2_cache, P) == 0.0
    low = Experiment(10.0, 0.0, 1e7, False, "specimen2")
    assert poisson_log_likelihood([low], spec2_cache, P) == 0.0
    assert max_stress_log_likelihood([low], spec2_cache, P.sn) == 0.0
    impossible = Experiment(10.0, 0.0, 1e5, True, "specimen2")
    assert poisson_log_likelihood([impossible], spec2_cache, P) == -math.inf
    assert max_stress_log_likelihood([impossible], spec2_cache, P.sn) == -math.inf


def _strip_data(cache, p, m=60, seed=3):
    rng = np.random.default_rng(seed)
    S = rng.uniform(45, 90, m)
    R = rng.choice([-1.0, 0.1, 0.5], m)
    return simulate_experiments(S, R, cache, p, seed=seed, n_censor=3e6)


def test_uniform_strip_likelihood_equals_sn_likelihood(strip_cache):
    p = PoissonParams.from_values(6.0, -1.2, 40.0, 0.6, 0.23, 0.5)
    data = _strip_data(strip_cache, p)
    assert 0 < sum(e.failed for e in data) < len(data)
    manual = 0.0
    for e in data:
        s = e.S_max * (1 - e.R) ** 0.6
        if s <= p.sn.A3:
            assert not e.failed  # below the limit only run-outs occur; they contribute 0
            continue
        d = sn_oracle(p, s)
        manual += d.logpdf(e.n) if e.failed else d.logsf(e.n)
    assert poisson_log_likelihood(data, strip_cache, p) == pytest.approx(manual, rel=1e-10)
    assert max_stress_log_likelihood(data, strip_cache, p.sn) == pytest.approx(manual, rel=1e-10)


def test_likelihood_decomposition(spec2_cache):
    rng = np.random.default_rng(7)
    S = rng.uniform(20, 45, 50)
    R = rng.choice([-1.0, -0.3, 0.1, 0.5], 50)
    data = simulate_experiments(S, R, spec2_cache, P, seed=11, n_censor=1e6)
    assert 0 < sum(e.failed for e in data) < 50
    total = 0.0
    for e in data:
        T = experiment_traction(e.S_max, e.R, P.sn.q, spec2_cache.width_ratio)
        if e.failed:
            total += math.log(first_crack_density(e.n, T, spec2_cache, P))
        else:
            total += math.log(survival(e.n, T, spec2_cache, P))
    assert poisson_log_likelihood(data, spec2_cache, P) == pytest.approx(total, rel=1e-10)


def test_max_stress_uses_peak_site(spec2_cache):
    data = [Experiment(30.0, 0.1, 2e5, True, "x"), Experiment(25.0, -1.0, 1e7, False, "x")]
    peak = spec2_cache.pointwise.max()
    s = [experiment_traction(e.S_max, e.R, P.sn.q, spec2_cache.width_ratio) * peak for e in data]
    expected = sn.censored_log_likelihood([e.n for e in data], s, [e.failed for e in data], P.sn)
    assert max_stress_log_likelihood(data, spec2_cache, P.sn) == pytest.approx(expected, rel=1e-12)


def test_sample_life_below_limit_is_runout(spec2_cache):
    for seed in range(5):
        d = sample_life(5.0, spec2_cache, P, seed, n_censor=1e7)
        assert not d.failed and d.cycles == 1e7


def test_sample_life_inverts_survival(spec2_cache):
    rng = np.random.default_rng(5)
    for _ in range(20):
        d = sample_life(25.0, spec2_cache, P, rng, n_censor=1e8)
        if d.failed:
            assert survival(d.cycles, 25.0, spec2_cache, P) == pytest.approx(d.u, abs=1e-8)


def test_sampled_lives_follow_sn_on_uniform_strip(strip):
    cache = uniform_cache(strip, level=0)
    p = PoissonParams.from_values(6.0, -1.2, 40.0, 0.6, 0.23, 0.5)
    T = 50.0
    rng = np.random.default_rng(2024)
    draws = np.array([sample_life(T, cache, p, rng, n_censor=1e12).cycles for _ in range(10_000)])
    ks = stats.kstest(draws, sn_oracle(p, T).cdf).statistic
    assert ks < 0.02


def test_simulation_is_deterministic(spec2_cache):
    a = simulate_experiments([30.0, 35.0], [0.1, -1.0], spec2_cache, P, seed=9)
    b = simulate_experiments([30.0, 35.0], [0.1, -1.0], spec2_cache, P, seed=9)
    assert a == b


def test_scaling_shortcut_matches_direct_solve(specimen2):
    mesh = mesh_geometry(specimen2, 1)
    mat = MaterialParams()
    cache = build_specimen_cache(specimen2, 1, mesh=mesh)
    T = 23.7
    direct = nodal_effective_stress(recover_stress(mesh, assemble_solve(mesh, mat, T), mat))
    assert np.allclose(T * cache.pointwise, direct, rtol=1e-8, atol=1e-8)


def test_profile_interpolation(spec2_cache):
    c = spec2_cache
    assert np.array_equal(c.profile(0.0125), c.profiles[0.0125])
    mid = c.profile(0.01875)
    assert np.allclose(mid, 0.5 * (c.profiles[0.0125] + c.profiles[0.025]))
    with pytest.raises(ValueError, match="outside"):
        c.profile(0.2)
    assert np.array_equal(c.exact_profile(0.0), c.pointwise)


def test_grouping_by_specimen(spec2_cache, strip_cache):
    data = [Experiment(30.0, 0.1, 1e5, True, "specimen2"),
            Experiment(50.0, 0.1, 1e5, True, "strip"),
            Experiment(31.0, 0.1, 2e5, False, "specimen2")]
    caches = {"specimen2": spec2_cache, "strip": strip_cache}
    groups = group_by_specimen(data, caches)
    assert [c.name for _, c in groups] == ["specimen2", "strip"]
    assert len(groups[0][0].n) == 2
    with pytest.raises(KeyError):
        group_by_specimen([Experiment(30.0, 0.1, 1e5, True, "other")], caches)
    # Per-specimen stressed area: pooled likelihood is the sum of the parts.
    p = PoissonParams.from_values(6.0, -1.2, 40.0, 0.6, 0.23, 0.5)
    pooled = poisson_log_likelihood(data, caches, p)
    parts = (poisson_log_likelihood([data[0], data[2]], spec2_cache, p)
             + poisson_log_likelihood([data[1]], strip_cache, p))
    assert pooled == pytest.approx(parts, rel=1e-14)


def test_log_survival_and_terms_consistent(spec2_cache):
    n = np.array([1e5, 1e6])
    assert np.allclose(np.exp(log_survival(n, 25.0, spec2_cache, P)), survival(n, 25.0, spec2_cache, P))
    arr = group_by_specimen([Experiment(30.0, 0.1, 1e5, False)], spec2_cache)[0][0]
    T = experiment_traction(30.0, 0.1, P.sn.q, spec2_cache.width_ratio)
    assert poisson_terms(arr, spec2_cache, P)[0] == pytest.approx(
        log_survival(1e5, T, spec2_cache, P), rel=1e-14)


def test_likelihood_converges_under_refinement(specimen2):
    base = build_specimen_cache(specimen2, 1)
    rng = np.random.default_rng(1)
    data = simulate_experiments(rng.uniform(22, 40, 40), rng.choice([-1.0, 0.1], 40), base, P,
                                seed=1)
    lls = [poisson_log_likelihood(data, build_specimen_cache(specimen2, k), P) for k in (2, 3, 4)]
    d = np.abs(np.diff(lls))
    assert d[1] <= d[0]
