"""Command-line pipeline: mesh, solve, fit, profile, mcmc, survival, simulate, converge.

Every command reads a JSON run configuration (``--config``) and writes
UTF-8 CSV/JSON products under ``--out`` (default: the config's ``out_dir``).
Exit status is 0 on success and 2 on invalid input.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import bayes, calibrate, io
from .fem import export_field_csv, experiment_traction
from .geometry import GeometryError, export_mesh_csv, mesh_geometry
from .poisson import (
    DEFAULT_CENSOR,
    PoissonParams,
    build_specimen_cache,
    group_by_specimen,
    simulate_experiments,
    survival,
)
from .stress import EmptyRegionError, averaged_profile, export_profile_csv

log = logging.getLogger("spatialfatigue")

COMMANDS = ("mesh", "solve", "fit", "profile", "mcmc", "survival", "simulate", "converge")


def _delta_arg(text: str):
    if text == "free":
        return "free"
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("delta must be a length in inches or 'free'") from None
    if value < 0:
        raise argparse.ArgumentTypeError("delta must be non-negative")
    return value


def _add_globals(p: argparse.ArgumentParser, suppress: bool):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", default=d(None), help="JSON run configuration")
    p.add_argument("--out", default=d(None), help="output directory")
    p.add_argument("--seed", type=int, default=d(None), help="random seed")
    p.add_argument("--mesh-level", type=int, default=d(None), help="uniform refinement level")
    p.add_argument("--delta", type=_delta_arg, default=d(None),
                   help="averaging length in inches, or 'free' (fit only)")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spatialfatigue", description=__doc__.splitlines()[0])
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "mesh": "mesh each configured specimen and export node/triangle/edge CSVs",
        "solve": "solve the unit-traction problem and export stress fields and site profiles",
        "fit": "maximum-likelihood fit to the configured datasets",
        "profile": "profile log-likelihood over the delta grid",
        "mcmc": "sample the posterior with adaptive random-walk Metropolis",
        "survival": "survival probability over a stress-by-cycles grid",
        "simulate": "simulate a censored dataset from given parameters",
        "converge": "refit over successive mesh refinements",
    }
    subs = {}
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        _add_globals(p, suppress=True)
        subs[name] = p
    for name in ("fit", "profile", "converge"):
        subs[name].add_argument("--model", choices=("poisson", "max-stress", "max_stress"),
                                default="poisson")
        subs[name].add_argument("--data", nargs="*", default=None, help="dataset CSV files")
    subs["mcmc"].add_argument("--data", nargs="*", default=None, help="dataset CSV files")
    subs["mcmc"].add_argument("--start", default=None, help="fit JSON used as starting point")
    subs["mcmc"].add_argument("--n-iter", type=int, default=None)
    subs["survival"].add_argument("--params", required=True, help="fit JSON with estimates")
    subs["survival"].add_argument("--chain", default=None, help="chain CSV for a posterior band")
    subs["survival"].add_argument("--specimen", default=None)
    subs["converge"].add_argument("--levels", type=int, nargs="*", default=None)
    return parser


# ---------------------------------------------------------------- helpers


def _level(args, cfg) -> int:
    level = cfg.mesh_level if args.mesh_level is None else args.mesh_level
    if level < 0:
        raise ValueError("mesh level must be non-negative")
    return level


def _out(args, cfg) -> Path:
    out = Path(args.out) if args.out else cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed(args, section: dict, default=0):
    return args.seed if args.seed is not None else section.get("seed", default)


def _caches(cfg, level, deltas=(0.0,)):
    return {k: build_specimen_cache(g, level, k, cfg.material, deltas)
            for k, g in cfg.specimens.items()}


def _dataset(args, cfg):
    paths = args.data if args.data else cfg.datasets
    data = []
    for p in paths:
        data.extend(io.read_dataset(p))
    if not data:
        raise ValueError("dataset is empty")
    if len(cfg.specimens) == 1:
        only = next(iter(cfg.specimens))
        missing = {e.specimen for e in data} - {only}
        if missing and not (missing == {""}):
            raise ValueError(f"dataset names specimens {sorted(missing)} not in the config")
        data = [e if e.specimen == only else type(e)(e.S_max, e.R, e.n, e.failed, only)
                for e in data]
    else:
        unknown = {e.specimen for e in data} - set(cfg.specimens)
        if unknown:
            raise ValueError(f"dataset names specimens {sorted(unknown)} not in the config")
    return data


def _model(args) -> str:
    return args.model.replace("-", "_")


def _mle_kwargs(cfg, args) -> dict:
    opt = cfg.optimizer
    kw = dict(seed=_seed(args, opt))
    for k in ("n_starts", "maxfev", "beta_scan"):
        if k in opt:
            kw[k] = int(opt[k])
    if "bounds" in opt:
        kw["bounds"] = {k: tuple(v) for k, v in opt["bounds"].items()}
    return kw


def _params_from(est: dict, delta=None) -> PoissonParams:
    return PoissonParams.from_values(est["A1"], est["A2"], est["A3"], est["q"], est["tau"],
                                     est.get("beta", 1.0),
                                     est.get("delta", 0.0) if delta is None else delta)


# ---------------------------------------------------------------- commands


def cmd_mesh(args, cfg):
    out = _out(args, cfg)
    level = _level(args, cfg)
    for name, geom in cfg.specimens.items():
        mesh = mesh_geometry(geom, level)
        export_mesh_csv(mesh, out / "mesh", name)
        print(f"{name}: level {level}, {mesh.n_nodes} nodes, {mesh.n_triangles} triangles")


def cmd_solve(args, cfg):
    out = _out(args, cfg)
    level = _level(args, cfg)
    delta = 0.0 if args.delta in (None, "free") else args.delta
    for name, cache in _caches(cfg, level).items():
        export_field_csv(cache.field, out / f"{name}_field.csv")
        avg = cache.pointwise if delta == 0 else averaged_profile(cache.field, delta).values
        export_profile_csv(out / f"{name}_profile.csv", cache.mesh, cache.quadrature,
                           cache.pointwise, avg)
        k = int(np.argmax(avg))
        x, y = cache.mesh.nodes[cache.quadrature.sites[k]]
        print(f"{name}: peak unit effective stress {avg[k]:.6g} at ({x:.6g}, {y:.6g})")


def cmd_fit(args, cfg):
    out = _out(args, cfg)
    level = _level(args, cfg)
    data = _dataset(args, cfg)
    delta = 0.0 if args.delta is None else args.delta
    caches = _caches(cfg, level)
    fit = calibrate.mle(data, caches, _model(args), delta=delta, mesh_level=level,
                        **_mle_kwargs(cfg, args))
    io.write_json(out / "fit.json", fit.to_dict())
    print(f"loglik {fit.max_loglik:.6f}  aic {fit.aic:.6f}  converged {fit.converged}")
    for k, v in fit.estimates.items():
        print(f"  {k} = {v:.6g}")


def cmd_profile(args, cfg):
    out = _out(args, cfg)
    level = _level(args, cfg)
    data = _dataset(args, cfg)
    caches = _caches(cfg, level)
    prof = calibrate.profile_likelihood_delta(data, caches, cfg.delta_grid, _model(args),
                                              **_mle_kwargs(cfg, args))
    io.write_profile_csv(out / "profile.csv", prof.deltas, prof.logliks)
    io.write_json(out / "profile.json", {"interval": prof.interval, "best_delta": prof.best_delta,
                                         "fits": [f.to_dict() for f in prof.fits]})
    print(f"best delta {prof.best_delta:g}; 1.92-drop interval "
          f"[{prof.interval[0]:g}, {prof.interval[1]:g}]")


def cmd_mcmc(args, cfg):
    out = _out(args, cfg)
    level = _level(args, cfg)
    data = _dataset(args, cfg)
    if args.delta == "free":
        raise ValueError("mcmc needs a fixed delta")
    delta = 0.0 if args.delta is None else args.delta
    m = cfg.mcmc
    prior = bayes.PriorBox()
    if "prior" in m:
        lo, hi = list(prior.lower), list(prior.upper)
        for k, (a, b) in m["prior"].items():
            j = prior.names.index(k)
            lo[j], hi[j] = a, b
        prior = bayes.PriorBox(tuple(lo), tuple(hi))
    x0 = None
    if args.start:
        est = io.read_json(args.start)["estimates"]
        x0 = [est[k] for k in prior.names]
    caches = {k: c.with_deltas([delta]) for k, c in _caches(cfg, level).items()}
    n_iter = args.n_iter or int(m.get("n_iter", 20000))
    chain = bayes.mcmc(data, caches, prior, delta, n_iter, _seed(args, m), x0=x0,
                       burn_in_frac=float(m.get("burn_in_frac", 0.2)))
    summary = bayes.posterior_summary(chain)
    loglik = bayes.make_loglik(group_by_specimen(data, caches), delta)
    d = bayes.dic(chain, loglik)
    try:
        logml = bayes.laplace_metropolis_logml(chain)
    except bayes.SingularCovarianceError as exc:
        log.warning("%s", exc)
        logml = None
    io.write_chain_csv(out / "chain.csv", chain.samples, chain.log_post)
    io.write_histograms_csv(out / "histograms.csv", summary.histograms)
    io.write_json(out / "posterior.json", {
        **summary.to_dict(), "acceptance_rate": chain.acceptance_rate, "burn_in": chain.burn_in,
        "seed": chain.seed, "delta": delta, "n_iter": n_iter,
        "dic": d.dic, "p_d": d.p_d, "dic_fallback": d.fallback, "log_marginal_likelihood": logml,
    })
    print(f"acceptance {chain.acceptance_rate:.3f}  DIC {d.dic:.4f}  "
          f"log ML {logml if logml is None else round(logml, 4)}")


def _grid(spec, default):
    spec = default if spec is None else spec
    if isinstance(spec, dict):
        f = np.geomspace if spec.get("log", False) else np.linspace
        return f(float(spec["min"]), float(spec["max"]), int(spec["num"]))
    return np.asarray(spec, float)


def cmd_survival(args, cfg):
    out = _out(args, cfg)
    level = _level(args, cfg)
    s = cfg.survival
    fit = io.read_json(args.params)
    delta = None if args.delta in (None, "free") else args.delta
    p = _params_from(fit["estimates"], delta)
    name = args.specimen or s.get("specimen") or next(iter(cfg.specimens))
    cache = build_specimen_cache(cfg.geometry(name), level, name, cfg.material, [p.delta])
    R = float(s.get("ratio_r", 0.0))
    n_grid = _grid(s.get("n"), {"min": 1e3, "max": 1e7, "num": 41, "log": True})
    s_max = _grid(s.get("s_max"), {"min": 20.0, "max": 80.0, "num": 31})
    T = experiment_traction(s_max, R, p.sn.q, cache.width_ratio)
    surv = np.array([survival(n_grid, t, cache, p) for t in np.atleast_1d(T)])
    io.write_survival_grid_csv(out / "survival_grid.csv", s_max, np.atleast_1d(T), n_grid, surv)
    if args.chain:
        samples, log_post = io.read_chain_csv(args.chain)
        chain = bayes.Chain(samples, log_post, log_post, float("nan"), None, 0,
                            delta=p.delta)
        band_s = float(s.get("band_s_max", s_max[len(s_max) // 2]))
        band = bayes.posterior_survival_band(chain, cache, band_s, R, n_grid,
                                             int(s.get("stride", 10)), reference=p)
        io.write_band_csv(out / "survival_band.csv", n_grid, band.curves)
        io.write_band_csv(out / "survival_reference.csv", n_grid, [band.reference])
    print(f"survival grid {len(s_max)} x {len(n_grid)} written for {name}")


def cmd_simulate(args, cfg):
    out = _out(args, cfg)
    level = _level(args, cfg)
    s = cfg.simulate
    if "params" not in s:
        raise ValueError("simulate.params is required")
    delta = None if args.delta in (None, "free") else args.delta
    p = _params_from(s["params"], delta)
    name = s.get("specimen") or next(iter(cfg.specimens))
    cache = build_specimen_cache(cfg.geometry(name), level, name, cfg.material, [p.delta])
    S = np.asarray(s.get("s_max", [40.0]), float)
    R = np.asarray(s.get("ratio_r", [0.0]), float)
    reps = int(s.get("replicates", 1))
    # Full factorial design over the listed R values and S_max levels.
    RR, SS = np.meshgrid(R, S, indexing="ij")
    SS = np.repeat(SS.ravel(), reps)
    RR = np.repeat(RR.ravel(), reps)
    data = simulate_experiments(SS, RR, cache, p, seed=_seed(args, s),
                                n_censor=float(s.get("n_censor", DEFAULT_CENSOR)), specimen=name)
    path = io.write_dataset(out / s.get("output", "simulated.csv"), data)
    print(f"{len(data)} experiments ({sum(e.failed for e in data)} failures) -> {path}")


def cmd_converge(args, cfg):
    out = _out(args, cfg)
    data = _dataset(args, cfg)
    levels = args.levels if args.levels else cfg.optimizer.get("levels", [0, 1, 2, 3, 4])
    delta = 0.0 if args.delta in (None, "free") else args.delta
    rows = calibrate.mesh_convergence(data, cfg.specimens, levels, _model(args),
                                      cfg.material, delta=delta, **_mle_kwargs(cfg, args))
    io.write_convergence_csv(out / "convergence.csv", rows)
    for r in rows:
        print(f"level {r.level}: {r.n_triangles} triangles, A3 {r.fit.estimates['A3']:.6g}, "
              f"loglik {r.fit.max_loglik:.6f}")


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if not args.config:
            raise io.ConfigError("--config is required")
        cfg = io.load_config(args.config)
        HANDLERS[args.command](args, cfg)
    except (io.ConfigError, GeometryError, EmptyRegionError, FileNotFoundError, KeyError,
            ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
