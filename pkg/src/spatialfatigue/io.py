"""File formats: dataset CSV, run configuration, and exported data products.

All files are UTF-8.  Numbers are written in positional notation with the
shortest representation that round-trips, so a write followed by a read
reproduces every value exactly.
"""

from __future__ import annotations

import csv
import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fem import MaterialParams
from .geometry import GeometryError, SpecimenGeometry, build_geometry
from .poisson import DEFAULT_DELTA_GRID, Experiment

DATASET_HEADER = ("specimen_id", "s_max_ksi", "ratio_r", "cycles", "failed")
PROFILE_HEADER = ("delta_in", "loglik")
BAND_HEADER = ("n", "curve_id", "survival")
GRID_HEADER = ("s_max_ksi", "traction_ksi", "n", "survival")
CONVERGENCE_HEADER = ("level", "n_triangles", "A1", "A2", "A3", "q", "tau", "beta", "delta",
                      "loglik", "aic")
CHAIN_COLUMNS = ("A1", "A2", "A3", "q", "tau", "beta", "log_post")


class ConfigError(ValueError):
    pass


def fmt(x) -> str:
    """Shortest round-trip positional decimal string."""
    x = float(x)
    if not math.isfinite(x):
        return repr(x)
    return np.format_float_positional(x, unique=True, trim="-")


def _write_rows(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return path


def _read_rows(path, header) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != tuple(header):
            raise ValueError(f"{path}: expected header {','.join(header)}, "
                             f"got {','.join(reader.fieldnames or [])}")
        return list(reader)


# ---------------------------------------------------------------- dataset


def write_dataset(path, data: Sequence[Experiment]) -> Path:
    rows = ((e.specimen, e.S_max, e.R, e.n, "1" if e.failed else "0") for e in data)
    return _write_rows(path, DATASET_HEADER, rows)


def read_dataset(path) -> list[Experiment]:
    """Read experiments; raises ValueError naming the offending line."""
    out = []
    for i, row in enumerate(_read_rows(path, DATASET_HEADER), start=2):
        try:
            flag = row["failed"].strip()
            if flag not in ("0", "1"):
                raise ValueError(f"failed must be 0 or 1, got {flag!r}")
            out.append(Experiment(float(row["s_max_ksi"]), float(row["ratio_r"]),
                                  float(row["cycles"]), flag == "1", row["specimen_id"].strip()))
        except (TypeError, ValueError) as exc:
            raise ValueError(f"{path}, line {i}: {exc}") from None
    return out


# ---------------------------------------------------------------- configuration


@dataclass
class RunConfig:
    """Settings for a CLI run; relative paths resolve against the config file."""

    specimens: dict
    material: MaterialParams = field(default_factory=MaterialParams)
    mesh_level: int = 2
    delta_grid: tuple = DEFAULT_DELTA_GRID
    datasets: tuple = ()
    optimizer: dict = field(default_factory=dict)
    mcmc: dict = field(default_factory=dict)
    simulate: dict = field(default_factory=dict)
    survival: dict = field(default_factory=dict)
    out_dir: Path = Path("out")
    base_dir: Path = Path(".")

    def geometry(self, name: str | None = None) -> SpecimenGeometry:
        if name is None:
            if len(self.specimens) != 1:
                raise ConfigError("several specimens configured; name one")
            return next(iter(self.specimens.values()))
        if name not in self.specimens:
            raise ConfigError(f"specimen {name!r} is not configured")
        return self.specimens[name]


def _positive(section: str, values: Mapping, keys: Sequence[str]):
    for k in keys:
        if k in values and not (isinstance(values[k], (int, float)) and values[k] > 0):
            raise ConfigError(f"{section}.{k} must be a positive number")


def _load_geometry(entry, base: Path) -> SpecimenGeometry:
    if isinstance(entry, str):
        path = (base / entry)
        if not path.exists():
            raise ConfigError(f"geometry file not found: {path}")
        entry = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(entry, Mapping):
        raise ConfigError("geometry must be a file path or a key/value record")
    if "geometry" in entry and isinstance(entry["geometry"], str):
        return _load_geometry(entry["geometry"], base)
    try:
        return build_geometry(dict(entry))
    except (GeometryError, TypeError) as exc:
        raise ConfigError(f"invalid geometry: {exc}") from None


def parse_config(raw: Mapping, base_dir: Path = Path(".")) -> RunConfig:
    base_dir = Path(base_dir)
    if "specimens" in raw:
        specimens = {str(k): _load_geometry(v, base_dir) for k, v in raw["specimens"].items()}
    elif "geometry" in raw:
        specimens = {str(raw.get("name", "specimen")): _load_geometry(raw["geometry"], base_dir)}
    else:
        raise ConfigError("config needs 'specimens' or 'geometry'")
    if not specimens:
        raise ConfigError("no specimens configured")
    mat = raw.get("material", {})
    try:
        material = MaterialParams(**mat)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid material: {exc}") from None
    level = raw.get("mesh_level", 2)
    if not isinstance(level, int) or level < 0:
        raise ConfigError("mesh_level must be a non-negative integer")
    grid = tuple(float(d) for d in raw.get("delta_grid", DEFAULT_DELTA_GRID))
    if not grid or min(grid) < 0:
        raise ConfigError("delta_grid must be non-empty and non-negative")
    datasets = tuple(base_dir / p for p in raw.get("datasets", ()))
    for p in datasets:
        if not p.exists():
            raise ConfigError(f"dataset not found: {p}")
    optimizer = dict(raw.get("optimizer", {}))
    _positive("optimizer", optimizer, ("n_starts", "maxfev"))
    for k, b in optimizer.get("bounds", {}).items():
        if len(b) != 2 or not b[0] < b[1]:
            raise ConfigError(f"optimizer.bounds.{k} must be [lower, upper] with lower < upper")
    mcmc = dict(raw.get("mcmc", {}))
    _positive("mcmc", mcmc, ("n_iter", "stride"))
    if "burn_in_frac" in mcmc and not 0 <= mcmc["burn_in_frac"] < 1:
        raise ConfigError("mcmc.burn_in_frac must lie in [0, 1)")
    simulate = dict(raw.get("simulate", {}))
    _positive("simulate", simulate, ("replicates", "n_censor"))
    survival = dict(raw.get("survival", {}))
    out_dir = base_dir / raw.get("out_dir", "out")
    return RunConfig(specimens, material, level, grid, datasets, optimizer, mcmc,
                     simulate, survival, out_dir, base_dir)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(raw, path.parent)


# ---------------------------------------------------------------- products


def _jsonable(x):
    if isinstance(x, Mapping):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, Path):
        return str(x)
    return x


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_profile_csv(path, deltas, logliks) -> Path:
    return _write_rows(path, PROFILE_HEADER, zip(deltas, logliks))


def read_profile_csv(path) -> tuple[np.ndarray, np.ndarray]:
    rows = _read_rows(path, PROFILE_HEADER)
    return (np.array([float(r["delta_in"]) for r in rows]),
            np.array([float(r["loglik"]) for r in rows]))


def write_chain_csv(path, samples, log_post) -> Path:
    return _write_rows(path, CHAIN_COLUMNS,
                       (list(s) + [lp] for s, lp in zip(np.asarray(samples), log_post)))


def read_chain_csv(path) -> tuple[np.ndarray, np.ndarray]:
    rows = _read_rows(path, CHAIN_COLUMNS)
    arr = np.array([[float(r[c]) for c in CHAIN_COLUMNS] for r in rows]).reshape(-1, 7)
    return arr[:, :6], arr[:, 6]


def write_histograms_csv(path, histograms: Mapping) -> Path:
    rows = []
    for name, (counts, edges) in histograms.items():
        for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
            rows.append((name, lo, hi, c))
    return _write_rows(path, ("parameter", "bin_lower", "bin_upper", "count"), rows)


def write_band_csv(path, n_grid, curves) -> Path:
    rows = ((n, str(i), s) for i, curve in enumerate(curves) for n, s in zip(n_grid, curve))
    return _write_rows(path, BAND_HEADER, rows)


def read_band_csv(path) -> tuple[np.ndarray, np.ndarray]:
    rows = _read_rows(path, BAND_HEADER)
    ids = sorted({int(r["curve_id"]) for r in rows})
    n = np.array(sorted({float(r["n"]) for r in rows}))
    curves = np.empty((len(ids), len(n)))
    col = {v: j for j, v in enumerate(n)}
    for r in rows:
        curves[int(r["curve_id"]), col[float(r["n"])]] = float(r["survival"])
    return n, curves


def write_survival_grid_csv(path, s_max, traction, n_grid, surv) -> Path:
    rows = ((s, t, n, v) for s, t, row in zip(s_max, traction, surv)
            for n, v in zip(n_grid, row))
    return _write_rows(path, GRID_HEADER, rows)


def read_survival_grid_csv(path):
    rows = _read_rows(path, GRID_HEADER)
    s = np.array(sorted({float(r["s_max_ksi"]) for r in rows}))
    n = np.array(sorted({float(r["n"]) for r in rows}))
    grid = np.empty((len(s), len(n)))
    si = {v: i for i, v in enumerate(s)}
    ni = {v: j for j, v in enumerate(n)}
    for r in rows:
        grid[si[float(r["s_max_ksi"])], ni[float(r["n"])]] = float(r["survival"])
    return s, n, grid


def write_convergence_csv(path, rows) -> Path:
    out = []
    for r in rows:
        e = r.fit.estimates
        out.append([str(r.level), str(r.n_triangles)]
                   + [e.get(k, math.nan) for k in CONVERGENCE_HEADER[2:9]]
                   + [r.fit.max_loglik, r.fit.aic])
    return _write_rows(path, CONVERGENCE_HEADER, out)
