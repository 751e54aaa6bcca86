import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spatialfatigue import io
from spatialfatigue.cli import main
from spatialfatigue.poisson import Experiment

TRUE = {"A1": 6.0, "A2": -1.2, "A3": 40.0, "q": 0.6, "tau": 0.23, "beta": 0.5}


def write_config(tmp_path, **extra):
    raw = {"geometry": {"preset": "strip"}, "name": "strip", "mesh_level": 0,
           "out_dir": "out", **extra}
    path = tmp_path / "run.json"
    path.write_text(json.dumps(raw), encoding="utf-8")
    return path


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


finite = st.floats(1e-3, 1e9, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(finite, st.floats(-5, 0.99), finite, st.booleans(),
                          st.sampled_from(["strip", "specimen2", "a b"])), min_size=1, max_size=20))
def test_dataset_round_trip(tmp_path_factory, rows):
    data = [Experiment(*r) for r in rows]
    path = tmp_path_factory.mktemp("ds") / "d.csv"
    io.write_dataset(path, data)
    assert io.read_dataset(path) == data


def test_dataset_header_and_errors(tmp_path):
    path = io.write_dataset(tmp_path / "d.csv", [Experiment(45.5, 0.1, 123456.0, True, "s2")])
    text = path.read_text(encoding="utf-8")
    assert text == "specimen_id,s_max_ksi,ratio_r,cycles,failed\ns2,45.5,0.1,123456,1\n"
    bad = tmp_path / "bad.csv"
    bad.write_text("specimen_id,s_max_ksi,ratio_r,cycles,failed\ns2,45,0.1,1e5,1\ns2,45,0.1,-3,0\n")
    with pytest.raises(ValueError, match="line 3"):
        io.read_dataset(bad)
    bad.write_text("specimen_id,s_max_ksi,ratio_r,cycles,failed\ns2,45,0.1,1e5,yes\n")
    with pytest.raises(ValueError, match="failed must be 0 or 1"):
        io.read_dataset(bad)
    bad.write_text("id,s,r,n,f\n")
    with pytest.raises(ValueError, match="expected header"):
        io.read_dataset(bad)


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_fmt_round_trips(x):
    assert float(io.fmt(x)) == x


def test_config_validation(tmp_path):
    with pytest.raises(io.ConfigError, match="specimens"):
        io.parse_config({})
    with pytest.raises(io.ConfigError, match="mesh_level"):
        io.parse_config({"geometry": {"preset": "strip"}, "mesh_level": -1})
    with pytest.raises(io.ConfigError, match="delta_grid"):
        io.parse_config({"geometry": {"preset": "strip"}, "delta_grid": [-0.1]})
    with pytest.raises(io.ConfigError, match="invalid geometry"):
        io.parse_config({"geometry": {"preset": "nope"}})
    with pytest.raises(io.ConfigError, match="bounds"):
        io.parse_config({"geometry": {"preset": "strip"}, "optimizer": {"bounds": {"A1": [3, 2]}}})
    (tmp_path / "g.json").write_text(json.dumps({"preset": "specimen2"}))
    cfg = io.parse_config({"specimens": {"s2": "g.json"}}, tmp_path)
    assert cfg.geometry().notch_radius == 0.76


def test_missing_config_exits_2(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert main(["mesh", "--config", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err
    assert main(["mesh"]) == 2


def test_empty_dataset_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path)
    empty = tmp_path / "empty.csv"
    io.write_dataset(empty, [])
    assert main(["fit", "--config", str(cfg), "--data", str(empty)]) == 2
    assert "empty" in capsys.readouterr().err


def test_simulate_is_byte_deterministic(tmp_path):
    cfg = write_config(tmp_path, simulate={"params": TRUE, "s_max": [50.0, 60.0, 80.0],
                                           "ratio_r": [0.1, -1.0], "replicates": 3})
    main(["simulate", "--config", str(cfg), "--seed", "7", "--out", str(tmp_path / "a")])
    main(["simulate", "--config", str(cfg), "--seed", "7", "--out", str(tmp_path / "b")])
    a = (tmp_path / "a" / "simulated.csv").read_bytes()
    assert a == (tmp_path / "b" / "simulated.csv").read_bytes()
    data = io.read_dataset(tmp_path / "a" / "simulated.csv")
    assert len(data) == 18 and {e.specimen for e in data} == {"strip"}


def test_solve_on_strip_gives_uniform_stress(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["solve", "--config", str(cfg)]) == 0
    rows = read_csv(tmp_path / "out" / "strip_field.csv")
    sx = np.array([float(r["sigma_x"]) for r in rows])
    assert np.allclose(sx, 1.0, atol=1e-10)
    prof = read_csv(tmp_path / "out" / "strip_profile.csv")
    assert np.allclose([float(r["sigma_eff_unit"]) for r in prof], 1.0, atol=1e-10)


def test_solve_specimen2_peaks_at_notch_root(tmp_path, capsys):
    cfg = tmp_path / "s2.json"
    cfg.write_text(json.dumps({"geometry": {"preset": "specimen2"}, "name": "s2", "mesh_level": 1}))
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out
    x, y = map(float, out.split(" at (")[1].rstrip(")\n").split(", "))
    # Notch root: x = 0, y = half the minimum width.
    assert x == pytest.approx(0.0, abs=1e-9) and y == pytest.approx(1.5, abs=1e-9)


def test_fit_models_agree_on_strip(tmp_path):
    cfg = write_config(tmp_path, simulate={"params": TRUE, "s_max": [60.0, 70.0, 90.0, 120.0],
                                           "ratio_r": [0.1, -1.0], "replicates": 10},
                       optimizer={"n_starts": 1, "maxfev": 3000})
    main(["simulate", "--config", str(cfg), "--seed", "1"])
    data = str(tmp_path / "out" / "simulated.csv")
    res = {}
    for model in ("poisson", "max-stress"):
        out = tmp_path / model
        assert main(["fit", "--config", str(cfg), "--data", data, "--model", model,
                     "--out", str(out)]) == 0
        res[model] = io.read_json(out / "fit.json")
    a, b = res["poisson"], res["max-stress"]
    assert a["max_loglik"] == pytest.approx(b["max_loglik"], abs=1e-6)
    # The extra threshold parameter costs exactly 2 AIC units.
    assert a["aic"] - b["aic"] == pytest.approx(2.0, abs=1e-5)


def test_survival_grid_is_monotone(tmp_path):
    cfg = write_config(tmp_path, survival={"ratio_r": 0.1, "s_max": {"min": 45, "max": 90, "num": 6},
                                           "n": {"min": 1e3, "max": 1e8, "num": 21, "log": True}})
    params = tmp_path / "fit.json"
    io.write_json(params, {"estimates": TRUE})
    assert main(["survival", "--config", str(cfg), "--params", str(params)]) == 0
    s, n, grid = io.read_survival_grid_csv(tmp_path / "out" / "survival_grid.csv")
    assert grid.shape == (6, 21)
    assert np.all(np.diff(grid, axis=1) <= 0)
    assert np.all(np.diff(grid, axis=0) <= 0)
    assert np.all((grid >= 0) & (grid <= 1))


def test_csv_product_round_trips(tmp_path):
    d, ll = [0.0, 0.0125], [-10.5, -9.25]
    assert [list(v) for v in io.read_profile_csv(io.write_profile_csv(tmp_path / "p.csv", d, ll))] \
        == [d, ll]
    x = np.random.default_rng(0).normal(size=(5, 6))
    lp = np.arange(5.0)
    xs, lps = io.read_chain_csv(io.write_chain_csv(tmp_path / "c.csv", x, lp))
    assert np.array_equal(xs, x) and np.array_equal(lps, lp)
    n = np.array([1e3, 1e4])
    curves = np.array([[1.0, 0.5], [0.9, 0.1]])
    n2, c2 = io.read_band_csv(io.write_band_csv(tmp_path / "b.csv", n, curves))
    assert np.array_equal(n2, n) and np.array_equal(c2, curves)
    doc = io.read_json(io.write_json(tmp_path / "j.json", {"a": np.float64(1.5), "b": math.inf,
                                                          "c": np.arange(2)}))
    assert doc == {"a": 1.5, "b": "inf", "c": [0, 1]}
