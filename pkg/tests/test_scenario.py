import copy
import json
from pathlib import Path

import numpy as np
import pytest

from cldnudge import scenario
from cldnudge.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main
from cldnudge.config import from_dict, load_config, loads
from cldnudge.exceptions import ConfigurationError
from cldnudge.operator import read_record_csv, write_record_csv
from cldnudge.population import PsdState

SMALL = {
    "name": "small",
    "shapes": [
        {"eta": 0.5, "g": 0.1, "r_min": 0.1, "r_max": 0.2, "r_lo": -0.5},
        {"eta": 2.0, "g": 0.2, "r_min": 0.1, "r_max": 0.2, "r_lo": -0.5},
    ],
    "growth": {"T": 0.2, "m": 2, "f_poly": [1.0]},
    "seeds": [{"center": 0.05}, {"center": 0.15}],
    "grid": {"dx": 0.01, "dt": 0.01, "d_ell": 0.02, "n_phi": 32, "n_theta": 32},
    "observer": {"mu": 0.001, "n_iterations": 3, "checkpoints": [1]},
    "diagnostics": {"n_max": 50},
}


def small(**changes):
    d = copy.deepcopy(SMALL)
    for path, value in changes.items():
        node = d
        *head, last = path.split("__")
        for key in head:
            node = node[int(key)] if isinstance(node, list) else node[key]
        node[last] = value
    return d


def write_cfg(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


def test_table1_preset():
    cfg = load_config("table1")
    s1, s2 = cfg.shapes
    assert (s1.eta, s1.g, s1.r_min, s1.r_max) == (0.5, 0.1, 0.1, 0.2)
    assert (s2.eta, s2.g, s2.r_min, s2.r_max) == (2.0, 0.2, 0.1, 0.2)
    assert cfg.growth.T == 1.0 and cfg.growth.m == 2 and cfg.growth.f_poly == (1.0,)
    assert cfg.grid.dx == cfg.grid.dt == 0.01
    assert cfg.observer.mu == 0.001 and cfg.observer.initial_guess == "zero"
    assert [s.center for s in cfg.seeds] == [0.05, 0.15]
    assert load_config("table1_shrinking").shapes[1].g == -0.2


@pytest.mark.parametrize("preset", ["table1", "table1_shrinking"])
def test_config_round_trip(preset, tmp_path):
    cfg = load_config(preset)
    assert loads(cfg.dumps()) == cfg
    p = tmp_path / "c.json"
    p.write_text(cfg.dumps())
    assert load_config(p) == cfg and load_config(p).digest() == cfg.digest()


def test_empty_file_is_parse_error(tmp_path):
    p = tmp_path / "empty.json"
    p.write_text("")
    with pytest.raises(ConfigurationError, match="parse error at line 1"):
        load_config(p)


@pytest.mark.parametrize("changes,needle", [
    ({"grid__dx": 0}, "grid.dx"),
    ({"grid__dt": -0.1}, "grid.dt"),
    ({"observer__mu": "big"}, "observer.mu"),
    ({"shapes__1__eta": 0}, "shapes[2].eta"),
    ({"growth__m": 1.5}, "growth.m"),
    ({"seeds__0__width": 0}, "seeds[1].width"),
    ({"grid__colour": 1}, "colour"),
    ({"banana": 1}, "banana"),
])
def test_validation_names_the_field(changes, needle):
    with pytest.raises(ConfigurationError, match=needle.replace("[", r"\[").replace(".", r"\.")):
        from_dict(small(**changes))


def test_missing_pieces():
    d = small()
    d["shapes"] = d["shapes"][:1]
    with pytest.raises(ConfigurationError, match="shapes"):
        from_dict(d)
    with pytest.raises(ConfigurationError, match="not found"):
        load_config("/nonexistent/cfg.json")


def test_seed_psd(table1_model):
    cfg = from_dict(small())
    dom = table1_model.domains[1]
    from cldnudge.config import SeedConfig
    assert np.all(scenario.make_seed_psd(SeedConfig(0.15, 0.01, 0.0), dom).values == 0)
    psd = scenario.make_seed_psd(SeedConfig(0.15, 0.01, 2.0), dom)
    assert dom.grid[np.argmax(psd.values)] == pytest.approx(0.15, abs=dom.dx / 2)
    assert psd.values.sum() * dom.dx == pytest.approx(2.0)
    assert np.all(psd.values[dom.grid >= dom.r_max - 1e-12] == 0)
    strip = scenario.make_seed_psd(cfg.seeds[0], table1_model.domains[0])
    assert table1_model.domains[0].grid[np.argmax(strip.values)] < table1_model.domains[0].r_min
    with pytest.raises(ConfigurationError):
        scenario.make_seed_psd(SeedConfig(5.0), dom)


def test_zero_seeds_give_zero_record(tmp_path):
    cfg = from_dict(small(seeds__0__amplitude=0.0, seeds__1__amplitude=0.0))
    res = scenario.simulate(cfg, tmp_path)
    assert np.all(res["record"] == 0) and res["energy"] == 0.0


def test_shrinking_population_leaves_the_window(tmp_path):
    cfg = load_config("table1_shrinking")
    res = scenario.simulate(cfg, tmp_path)
    dom = res["model"].domains[1]
    counts = [np.sum(s[1][dom.window]) * dom.dx for s in res["trajectory"]]
    assert counts[-1] < counts[0]
    # the wrapped interpolation tail may leak back in at the 1e-7 level
    assert np.all(np.diff(counts) <= 1e-6 * counts[0])


def test_simulate_estimate_diagnose(tmp_path):
    cfg = from_dict(small())
    res = scenario.simulate(cfg, tmp_path)
    assert res["energy"] > 0
    n_t = res["times"].size
    truth = list((tmp_path / "truth").glob("*.csv"))
    assert len(truth) == 2 * n_t
    est = scenario.estimate(cfg, tmp_path)
    assert est["warnings"] == []
    edir = tmp_path / "estimate"
    assert sorted(p.name for p in edir.glob("iter_*")) == [
        f"iter_{k:04d}_psi{i}.csv" for k in (0, 1, 3) for i in (1, 2)]
    lines = (edir / "metrics.csv").read_text().splitlines()
    assert lines[0] == "iteration,L2_err_1,L2_err_2,peak_err_1,peak_err_2,innovation"
    assert len(lines) == 1 + 4
    header = (edir / "plot_shape1.csv").read_text().splitlines()[0]
    assert header == "r,truth,iter_0,iter_1,iter_3"
    diag = scenario.diagnose(cfg, tmp_path)
    report = (tmp_path / "diagnostics" / "report.txt").read_text()
    assert "condition_satisfied: True" in report and "ratio_limits_separated: True" in report
    assert diag["condition"].satisfied


def test_zero_iterations_echo_guess(tmp_path):
    cfg = from_dict(small(observer__n_iterations=0, observer__checkpoints=[]))
    scenario.simulate(cfg, tmp_path)
    hist = scenario.estimate(cfg, tmp_path)["history"]
    assert hist.n_iterations == 0 and all(np.all(v == 0) for v in hist.estimates[0])


def test_condition_violation_warns_and_continues(tmp_path):
    cfg = from_dict(small(shapes__1__eta=0.5))
    scenario.simulate(cfg, tmp_path)
    res = scenario.estimate(cfg, tmp_path)
    assert res["warnings"] and not res["condition"].satisfied
    assert "WARNING" in (tmp_path / "estimate" / "report.txt").read_text()
    assert res["history"].n_iterations == 3


def test_grid_mismatch_lists_both_grids(tmp_path):
    scenario.simulate(from_dict(small()), tmp_path)
    other = from_dict(small(grid__d_ell=0.01))
    with pytest.raises(ConfigurationError) as err:
        scenario.estimate(other, tmp_path)
    msg = str(err.value)
    assert "record has" in msg and "config expects" in msg
    assert "41 chords" in msg and "81 chords" in msg


def test_manifest_lists_every_file(tmp_path):
    cfg = from_dict(small())
    scenario.simulate(cfg, tmp_path)
    scenario.estimate(cfg, tmp_path)
    scenario.diagnose(cfg, tmp_path)
    scenario.write_kernels(cfg, tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    listed = [f["path"] for f in manifest["files"]]
    on_disk = sorted(p.relative_to(tmp_path).as_posix() for p in tmp_path.rglob("*") if p.is_file())
    assert sorted(listed) == on_disk
    assert len(listed) == len(set(listed))
    assert manifest["config_hash"] == cfg.digest()
    assert [r["command"] for r in manifest["runs"]] == ["simulate", "estimate", "diagnose", "kernel"]
    sim = manifest["runs"][0]
    assert sim["domains"][0]["override"] is True
    assert sim["domains"][0]["literal_r_lo"] == pytest.approx(0.1 - 0.1 * 0.2 / 0.01)


def _csv_bytes(root: Path):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*.csv"))}


def test_determinism(tmp_path):
    cfg = from_dict(small())
    for sub in ("a", "b"):
        scenario.simulate(cfg, tmp_path / sub)
        scenario.estimate(cfg, tmp_path / sub)
    assert _csv_bytes(tmp_path / "a") == _csv_bytes(tmp_path / "b")


def test_csv_format(tmp_path):
    cfg = from_dict(small())
    scenario.simulate(cfg, tmp_path)
    raw = (tmp_path / "record.csv").read_bytes()
    assert b"\r" not in raw
    r, v = PsdState.read_csv(tmp_path / "truth" / scenario.snapshot_name(1, 0.0))
    assert r.size == scenario.model_from_config(cfg).domains[0].n


# command line ----------------------------------------------------------------


def test_cli_full_cycle(tmp_path, capsys):
    cfg = write_cfg(tmp_path, small())
    out = tmp_path / "run"
    for verb in ("kernel", "simulate", "estimate", "diagnose"):
        assert main([verb, "--config", str(cfg), "--out", str(out), "--threads", "1"]) == EXIT_OK
    text = capsys.readouterr().out
    assert "output_energy:" in text and "condition_satisfied: True" in text
    assert (out / "kernel_shape1.csv").is_file() and (out / "estimate" / "metrics.csv").is_file()


def test_cli_global_flags_before_verb(tmp_path):
    cfg = write_cfg(tmp_path, small())
    assert main(["--config", str(cfg), "--out", str(tmp_path / "o"), "simulate"]) == EXIT_OK


def test_cli_config_error(tmp_path, capsys):
    cfg = write_cfg(tmp_path, small(grid__dx=0))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "grid.dx" in capsys.readouterr().err
    assert main(["estimate", "--config", str(write_cfg(tmp_path, small(), "ok.json")),
                 "--out", str(tmp_path / "none")]) == EXIT_CONFIG


def test_cli_numerical_abort(tmp_path, capsys):
    cfg = write_cfg(tmp_path, small())
    out = tmp_path / "run"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    t, ell, rec = read_record_csv(out / "record.csv")
    write_record_csv(out / "bad.csv", t, ell, np.full_like(rec, 1e308))
    code = main(["estimate", "--config", str(cfg), "--out", str(out),
                 "--record", str(out / "bad.csv")])
    assert code == EXIT_NUMERICAL
    assert "step" in capsys.readouterr().err


def test_cli_requires_verb():
    with pytest.raises(SystemExit):
        main([])
