import csv
import json

import numpy as np
import pytest
import yaml

from partialreset import cli
from partialreset.cli import (ConfigError, PRESETS, child_rng, load_config, main, run_single,
                              run_sweep, run_theory, summarize, validate)


def write_cfg(tmp_path, doc, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return str(path)


SMALL = {
    "N": 8, "seed": 7,
    "coupling": {"kind": "homogeneous", "eps": 0.03},
    "rise": {"family": "Ub", "b": -3.0},
    "reset": {"kind": "linear", "c": 0.3},
    "initial": {"kind": "uniform-random"},
    "duration": {"events": 3000, "stop_when_periodic": True},
    "sweep": {"c": [0.0, 0.4, 0.9], "runs": 3},
}


# ---------------------------------------------------------------- validation

@pytest.mark.parametrize("patch,field", [
    ({"bogus": 1}, "bogus"),
    ({"rise": {"family": "Ub", "b": -3.0, "gamma": 1}}, "rise.gamma"),
    ({"rise": {"family": "Nope"}}, "rise.family"),
    ({"rise": {"family": "LIF", "E_eq": 0.5}}, "rise"),
    ({"coupling": {"kind": "homogeneous", "eps": 0.2}}, "coupling"),
    ({"coupling": {"kind": "meta", "sizes": [3, 3], "eps": 0.01}}, "coupling.sizes"),
    ({"reset": {"kind": "linear"}}, "reset.c"),
    ({"initial": {"kind": "explicit", "phases": [1.0, 0.5]}}, "initial.phases"),
    ({"N": 0}, "N"),
    ({"N": "ten"}, "N"),
])
def test_invalid_configs_name_the_field(patch, field):
    doc = dict(SMALL)
    doc.update(patch)
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        cfg = validate(doc)
        run_single(cfg)


def test_seed_required_for_random_fields():
    doc = dict(SMALL)
    del doc["seed"]
    with pytest.raises(ConfigError, match="seed"):
        validate(doc)


def test_explicit_initial_state_needs_no_seed():
    doc = dict(SMALL, initial={"kind": "explicit", "phases": list(np.linspace(1, 0.1, 8))})
    del doc["seed"]
    res = run_single(validate(doc))
    assert res.error == "" and sum(res.partition.sizes) == 8


def test_config_error_exit_code(tmp_path, capsys):
    path = write_cfg(tmp_path, dict(SMALL, extra=3))
    assert main(["simulate", path, "--out-dir", str(tmp_path)]) == 2
    assert "extra" in capsys.readouterr().err


def test_missing_config_exit_code(tmp_path):
    assert main(["simulate", "--out-dir", str(tmp_path)]) == 2


def test_preset_override_merges(tmp_path):
    path = write_cfg(tmp_path, {"N": 20, "reset": {"kind": "linear", "c": 0.1}})
    cfg = load_config(path, "fig3")
    assert cfg.n == 20 and cfg.raw["reset"]["c"] == 0.1
    assert cfg.raw["rise"] == PRESETS["fig3"]["rise"]


def test_all_presets_validate():
    for name in PRESETS:
        cfg = load_config(None, name)
        assert cfg.rise() is not None and len(cfg.c_grid()) == PRESETS[name]["sweep"]["c"]["num"]


# ---------------------------------------------------------------- runs

def test_child_rng_is_pure():
    a = child_rng(1, 2, 3).uniform(size=4)
    b = child_rng(1, 2, 3).uniform(size=4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, child_rng(1, 3, 2).uniform(size=4))


def test_fig3_stable_synchrony_at_weak_reset():
    res = run_single(load_config(None, "fig3").with_c(0.025))
    assert res.partition.periodic and res.partition.sizes == (50,)


def test_fig3_splay_at_strong_reset():
    res = run_single(load_config(None, "fig3").with_c(0.7))
    assert res.partition.periodic and res.partition.sizes == (1,) * 50


def test_single_unit_config():
    cfg = validate({"N": 1, "coupling": {"kind": "homogeneous", "eps": 0.0},
                    "rise": {"family": "identity"}, "reset": {"kind": "linear", "c": 0.5},
                    "initial": {"kind": "explicit", "phases": [1.0]},
                    "duration": {"events": 20}})
    res = run_single(cfg, keep_log=True)
    assert res.partition.periodic and res.partition.sizes == (1,)
    assert np.allclose(np.diff(res.log.times), 1.0)


def test_one_point_sweep_equals_single_run():
    cfg = validate(dict(SMALL, sweep={"c": [0.3], "runs": 1}))
    [swept] = run_sweep(cfg)
    single = run_single(cfg.with_c(0.3))
    assert cli.run_row(swept) == cli.run_row(single)


def test_sweep_rows_and_aggregates():
    cfg = validate(SMALL)
    seen = []
    results = run_sweep(cfg, rows_out=seen.append)
    assert [(r.point, r.run) for r in results] == [(p, r) for p in range(3) for r in range(3)]
    assert seen == results
    summary = summarize(results)
    assert [row["runs"] for row in summary] == [3, 3, 3]
    for row in summary:
        mx = [r.partition.max_size for r in results if r.point == row["point"]]
        assert row["max_max_size"] == max(mx) and row["min_max_size"] == min(mx)


def test_random_coupling_drawn_per_run():
    doc = dict(SMALL, coupling={"kind": "random-uniform", "eps_min": 0.02, "eps_max": 0.04})
    cfg = validate(doc)
    a = run_single(cfg, 0, 0, keep_log=True)
    b = run_single(cfg, 0, 1, keep_log=True)
    assert a.log.times != b.log.times


# ---------------------------------------------------------------- verbs and files

def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_simulate_writes_log_and_summary(tmp_path):
    path = write_cfg(tmp_path, dict(SMALL, output={"snapshot_every": 5}))
    assert main(["simulate", path, "--out-dir", str(tmp_path)]) == 0
    lines = (tmp_path / "events.jsonl").read_text().splitlines()
    recs = [json.loads(x) for x in lines]
    assert any("section" in r for r in recs) and any("members" in r for r in recs)
    [row] = read_csv(tmp_path / "summary.csv")
    assert int(row["events"]) == sum("members" in r for r in recs)


def test_sweep_is_worker_independent(tmp_path):
    path = write_cfg(tmp_path, SMALL)
    one, two = tmp_path / "one", tmp_path / "two"
    assert main(["sweep", path, "--out-dir", str(one)]) == 0
    assert main(["sweep", path, "--out-dir", str(two), "--workers", "2"]) == 0
    for name in ("sweep_runs.csv", "sweep_summary.csv"):
        assert (one / name).read_bytes() == (two / name).read_bytes()
    assert len(read_csv(one / "sweep_runs.csv")) == 9


def test_seed_flag_changes_results(tmp_path):
    path = write_cfg(tmp_path, SMALL)
    assert main(["sweep", path, "--out-dir", str(tmp_path / "a"), "--seed", "1"]) == 0
    assert main(["sweep", path, "--out-dir", str(tmp_path / "b"), "--seed", "2"]) == 0
    assert ((tmp_path / "a" / "sweep_runs.csv").read_bytes()
            != (tmp_path / "b" / "sweep_runs.csv").read_bytes())


def test_theory_ub_curve(tmp_path):
    assert main(["theory", "--preset", "fig3", "--out-dir", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "bifurcation.csv")
    assert len(rows) == 49
    c = [float(r["c_cr"]) for r in rows]
    assert all(x > y for x, y in zip(c, c[1:]))


def test_theory_strongly_convex_shrinks_first_point():
    cfg = load_config(None, "fig3")
    raw = dict(cfg.raw, rise={"family": "Ub", "b": -20.0}, coupling={"kind": "homogeneous",
                                                                       "eps": 0.01})
    text = run_theory(validate(raw))["bifurcation.csv"]
    c2 = float(text.splitlines()[1].split(",")[1])
    assert c2 < 0.01


def test_theory_bounds_bracket_band():
    out = run_theory(load_config(None, "fig6"))
    lines = out["bounds.csv"].splitlines()
    assert lines[0] == "# kind=dcpd"
    rows = list(csv.DictReader(lines[1:]))
    assert len(rows) == 99
    for r in rows:
        assert float(r["c_stable"]) <= float(r["c_unstable"]) + 1e-12


def test_theory_unclassified_function():
    cfg = validate(dict(SMALL, rise={"family": "QIF", "alpha": 2.0, "beta": -0.5}))
    assert run_theory(cfg)["bounds.csv"].startswith("# bounds unavailable")


def test_classify_verb(tmp_path):
    path = write_cfg(tmp_path, dict(SMALL, rise={"family": "LIF", "E_eq": 1.4}))
    assert main(["classify", path, "--out-dir", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "shape.json").read_text())
    assert doc["concave"] and doc["icpd"] and not doc["dcpd"]


def test_module_entry_point(tmp_path):
    import subprocess
    import sys
    path = write_cfg(tmp_path, SMALL)
    proc = subprocess.run([sys.executable, "-m", "partialreset", "classify", path,
                           "--out-dir", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
