import json
import math

import numpy as np
import pytest

from fracpoincare import io
from fracpoincare.cli import main
from fracpoincare.experiments import ConfigError, ExperimentConfig, drift, run_experiment
from fracpoincare.geometry import DomainSpec, build_domain, from_mask
from fracpoincare.kernel import FracParams, GridFunction, gagliardo_improved


@pytest.fixture
def square_files(tmp_path):
    d = build_domain(DomainSpec("unit_square", 1 / 8))
    dom = tmp_path / "sq.json"
    io.save_domain(d, dom)
    u = GridFunction.from_callable(d, lambda x, y: x + 0.5 * y * y)
    fn = tmp_path / "u.csv"
    io.save_function(u, fn, str(dom))
    return d, u, str(dom), str(fn)


def write_config(tmp_path, name, **kw):
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(dict(name=name, output=str(tmp_path / name), **kw)))
    return str(path)


# -- io -------------------------------------------------------------------------------


def test_domain_round_trip(tmp_path):
    for d in (build_domain(DomainSpec("slit_square", 1 / 4)),
              build_domain(DomainSpec("rooms_passages", 1 / 64, s=1.5, K=1)),
              from_mask(np.array([[1, 1, 0], [1, 1, 1]], bool), 0.5, (1.0, -1.0), [(0, 1)], kind="custom")):
        path = tmp_path / "d.json"
        io.save_domain(d, path)
        e = io.load_domain(path)
        assert np.array_equal(e.mask, d.mask) and e.h == d.h and e.origin == d.origin
        assert e.blocked_edges == d.blocked_edges
        assert np.array_equal(e.dist, d.dist)


def test_function_round_trip(square_files):
    d, u, _, fn = square_files
    v = io.load_function(fn, d)
    assert np.array_equal(v.values, u.values)


def test_function_must_cover_domain(tmp_path, square_files):
    d, _, _, _ = square_files
    bad = tmp_path / "bad.csv"
    bad.write_text("cell_index,value\n0,1.0\n")
    with pytest.raises(ValueError):
        io.load_function(bad, d)


def test_jsonable_inf():
    assert json.loads(io.dumps({"a": math.inf, "b": np.float64(2.0)})) == {"a": "inf", "b": 2.0}


# -- config ---------------------------------------------------------------------------


def test_config_defaults_and_overrides():
    cfg = ExperimentConfig.from_dict({"name": "lipschitz_comparability", "family": {"count": 4}})
    assert cfg.options["family"] == {"kind": "random_bandlimited", "count": 4}
    assert cfg.h_list == [1 / 64, 1 / 128] and cfg.params.tau == 1.0
    assert cfg.threshold("drift") == 0.10


@pytest.mark.parametrize("bad", [
    {"name": "nope"},
    {"name": "slit_divergence", "h_list": [1 / 16, 1 / 8]},
    {"name": "slit_divergence", "params": {"delta": 2.0}},
])
def test_config_errors(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(bad)


def test_drift():
    assert drift(2.0, 2.2) == pytest.approx(0.1)
    assert drift(1.0, 1.0) == 0.0
    assert drift(0.0, 1.0) == math.inf


# -- experiments ------------------------------------------------------------------------


def test_slit_divergence_small(tmp_path):
    res = run_experiment({"name": "slit_divergence", "h_list": [1 / 8, 1 / 16, 1 / 32],
                          "output": str(tmp_path / "slit")})
    fulls = [r["full"] for r in res.rows]
    assert all(b > a for a, b in zip(fulls, fulls[1:]))
    assert (tmp_path / "slit.csv").exists() and (tmp_path / "slit_summary.json").exists()
    summary = json.loads((tmp_path / "slit_summary.json").read_text())
    assert summary["checks"]["full_strictly_increasing"] is True


def test_rooms_blowup_reports_construction_failure(tmp_path):
    res = run_experiment({"name": "rooms_blowup", "K_list": [4], "output": str(tmp_path / "rooms")})
    assert not res.passed
    assert "budget" in res.rows[0]["error"] or "cells" in res.rows[0]["error"]


def test_rooms_blowup_feasible_tower(tmp_path):
    res = run_experiment({"name": "rooms_blowup", "s": 1.5, "K_list": [1, 2], "ascent_steps": 0,
                          "params": {"tau": 1.0}, "output": str(tmp_path / "rooms")})
    assert res.checks["all_levels_built"]
    est = res.checks["estimates"]
    assert all(x > 0 for x in est)


def test_truncation_equivalence_small(tmp_path):
    res = run_experiment({"name": "truncation_equivalence", "count": 10, "max_points": 16,
                          "output": str(tmp_path / "tr")})
    assert res.passed and res.checks["instances"] == 10


def test_riesz_checks_small(tmp_path):
    res = run_experiment({"name": "riesz_checks", "h_list": [1 / 16, 1 / 32], "family": {"count": 2},
                          "output": str(tmp_path / "rz")})
    assert res.checks["homogeneous"] and res.checks["representation_finite"]


# -- CLI ----------------------------------------------------------------------------------


def test_cli_domain_build_and_info(tmp_path, capsys):
    out = tmp_path / "dom"
    assert main(["domain", "build", "--kind", "slit_square", "--h", "1/8", "--out", str(out)]) == 0
    assert main(["domain", "info", "--domain", f"{out}.json"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["holes"] == 0 and info["active"] == 256


def test_cli_seminorm_matches_library(square_files, capsys):
    d, u, dom, fn = square_files
    assert main(["seminorm", "improved", "--domain", dom, "--function", fn, "--tau", "0.5"]) == 0
    got = json.loads(capsys.readouterr().out)["value"]
    assert got == gagliardo_improved(u, FracParams(tau=0.5)).value


def test_cli_density_csv(square_files, tmp_path):
    _, _, dom, fn = square_files
    out = tmp_path / "g"
    assert main(["seminorm", "density", "--domain", dom, "--function", fn, "--format", "csv",
                 "--out", str(out)]) == 0
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0] == "cell_index,value" and len(lines) == 65


def test_cli_riesz_and_poincare(square_files, capsys):
    _, _, dom, fn = square_files
    assert main(["riesz", "--domain", dom, "--function", fn, "--delta", "1"]) == 0
    assert main(["poincare", "ratio", "--domain", dom, "--function", fn]) == 0
    assert main(["poincare", "estimate", "--domain", dom, "--count", "3", "--ascent-steps", "1"]) == 0
    out = capsys.readouterr().out
    assert '"ratio"' in out


def test_cli_truncation_random_instance(capsys):
    assert main(["truncation", "run", "--seed", "5"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["pass"] is True and rep["seed"] == 5


def test_cli_truncation_lemma_precondition(square_files, capsys):
    _, _, dom, fn = square_files
    # omega = u - min u vanishes on one cell only
    assert main(["truncation", "lemma", "--domain", dom, "--function", fn]) == 1


def test_cli_necessity_square(square_files, capsys):
    _, _, dom, _ = square_files
    assert main(["necessity", "probe", "--domain", dom, "--omega", "0.5", "0.5", "--d", "0.2",
                 "--b0", "0.1", "0.1", "0.06"]) == 0
    assert json.loads(capsys.readouterr().out)["empty"] is True


@pytest.mark.parametrize("argv", [
    ["seminorm", "full"],
    ["domain", "build", "--kind", "unit_square"],
    ["domain", "build", "--kind", "unit_square", "--h", "0.3"],
    ["seminorm", "full", "--bogus"],
    ["experiment", "run"],
])
def test_cli_usage_errors(argv):
    assert main(argv) == 2


def test_cli_bad_params(square_files):
    _, _, dom, fn = square_files
    assert main(["seminorm", "full", "--domain", dom, "--function", fn, "--delta", "1.5"]) == 2
    assert main(["seminorm", "full", "--domain", dom, "--function", fn, "--threads", "0"]) == 2


def test_cli_experiment_config_error(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"name": "slit_divergence", "h_list": [0.1, 0.2]}))
    assert main(["experiment", "run", "--config", str(path)]) == 2


@pytest.mark.parametrize("name, extra", [
    ("slit_divergence", {"h_list": [1 / 8, 1 / 16]}),
    ("lipschitz_comparability", {"h_list": [1 / 8, 1 / 16], "family": {"count": 3}}),
    ("john_stability", {"h_list": [1 / 8, 1 / 16], "family": {"count": 2}, "riesz_family": {"count": 2},
                        "ascent_steps": 2}),
])
def test_cli_threads_bit_identical(tmp_path, name, extra):
    cfg = write_config(tmp_path, name, **extra)
    outs = []
    for t in ("1", "3"):
        prefix = tmp_path / f"{name}_t{t}"
        main(["experiment", "run", "--config", cfg, "--threads", t, "--out", str(prefix)])
        outs.append(((tmp_path / f"{name}_t{t}.csv").read_bytes(),
                     (tmp_path / f"{name}_t{t}_summary.json").read_bytes()))
    assert outs[0] == outs[1]
