import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mkvlan import cli
from mkvlan.cli import ExperimentConfig, histogram_table, main, qq_pairs, run
from mkvlan.errors import ConfigError, PropagationError

BASE = {
    "run": {"subcommand": "simulate", "seed": 5},
    "model": {"id": "mean_field_ou", "kappa": 0.5, "init_mean": 1.0, "init_std": 0.7},
    "theta": {"theta1": 1.0, "theta2": 1.0},
    "sim": {"n_particles": 20, "n_steps": 5},
    "experiment": {"replications": 6, "ns": "10, 20", "n_of_n": "10:4, 20:8", "reps": 3, "probes": 10},
}


def make(**over):
    raw = json.loads(json.dumps(BASE))
    for key, val in over.items():
        sec, _, name = key.partition("__")
        raw.setdefault(sec, {})[name] = val
    return ExperimentConfig.from_mapping(raw)


def quiet(*a, **k):
    pass


def test_defaults_filled_and_round_trips():
    cfg = make()
    assert cfg["sim"]["substeps"] == 8 and cfg["run"]["format"] == "both"
    assert ExperimentConfig.from_ini(cfg.to_ini()) == cfg
    assert ExperimentConfig.from_json(cfg.to_json()) == cfg
    assert ExperimentConfig.from_ini(cfg.to_ini()).to_ini() == cfg.to_ini()


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**64 - 1), t1=st.floats(-9, 9), t2=st.floats(0.01, 9), n=st.integers(1, 500),
       kappa=st.floats(-2, 2), scheme=st.sampled_from(["euler", "exact"]), tang=st.booleans())
def test_round_trip_identity(seed, t1, t2, n, kappa, scheme, tang):
    cfg = make(run__seed=seed, theta__theta1=t1, theta__theta2=t2, sim__n_particles=n, model__kappa=kappa,
               sim__scheme=scheme, experiment__with_tangents=tang)
    assert ExperimentConfig.from_ini(cfg.to_ini()) == cfg
    assert ExperimentConfig.from_json(cfg.to_json()) == cfg
    assert ExperimentConfig.from_json(cfg.to_json()).digest() == cfg.digest()


@pytest.mark.parametrize("over,path", [
    ({"run__seed": -1}, "run.seed"),
    ({"sim__n_particles": "many"}, "sim.n_particles"),
    ({"sim__bogus": 1}, "sim.bogus"),
    ({"model__id": "nope"}, "model.id"),
    ({"model__eps": 0.3}, "model.eps"),
    ({"run__format": "xml"}, "run.format"),
    ({"experiment__n_of_n": "10:4"}, "experiment.n_of_n"),
    ({"theta__box1": "1, 2, 3"}, "theta.box1"),
])
def test_schema_errors_name_the_key(over, path):
    with pytest.raises(ConfigError) as err:
        make(**over)
    assert err.value.key == path


def test_missing_seed_is_an_error():
    raw = json.loads(json.dumps(BASE))
    del raw["run"]["seed"]
    with pytest.raises(ConfigError, match="run.seed"):
        ExperimentConfig.from_mapping(raw)


def test_simulate_outputs_and_provenance(tmp_path):
    assert run(make(), tmp_path, threads=1, log=quiet) == 0
    names = {p.name for p in tmp_path.iterdir()}
    assert names == {"trajectories.csv", "trajectories.bin", "summary.json", "provenance.json"}
    prov = json.loads((tmp_path / "provenance.json").read_text())
    assert prov["seed"] == 5 and prov["config_sha256"] == make().digest()
    assert set(prov["outputs"]) == names - {"provenance.json"}
    assert "t" in (tmp_path / "trajectories.csv").read_text().splitlines()[0]


def test_format_selection(tmp_path):
    assert run(make(run__subcommand="fisher"), tmp_path, threads=1, fmt="json", log=quiet) == 0
    assert not list(tmp_path.glob("*.csv")) and (tmp_path / "fisher.json").exists()


def test_every_subcommand_runs(tmp_path):
    for sub in cli.SUBCOMMANDS:
        over = {"run__subcommand": sub}
        if sub == "validate-model":
            over["model__id"] = "tanh_interaction"
            over["model__kappa"] = 1.0
        raw_ok = run(make(**over) if sub != "validate-model" else
                     ExperimentConfig.from_mapping({**BASE, "run": {"subcommand": sub, "seed": 1},
                                                    "model": {"id": "tanh_interaction"}}),
                     tmp_path / sub, threads=1, log=quiet)
        assert raw_ok == 0, sub


def test_validation_failure_exits_1(tmp_path, monkeypatch):
    class Broken(cli.MODEL_REGISTRY["tanh_interaction"]):
        def d_drift_dtheta1(self, theta1, x, mu):
            return 2 * super().d_drift_dtheta1(theta1, x, mu)

    monkeypatch.setitem(cli.MODEL_REGISTRY, "tanh_interaction", Broken)
    cfg = ExperimentConfig.from_mapping({"run": {"subcommand": "validate-model", "seed": 1},
                                         "model": {"id": "tanh_interaction"}, "experiment": {"probes": 5}})
    assert run(cfg, tmp_path, threads=1, log=quiet) == 1
    assert list(tmp_path.iterdir()) == []


def test_numerical_failure_exits_2_and_cleans_up(tmp_path, monkeypatch):
    def boom(cfg, out, threads):
        out.csv("partial.csv", "a\n")
        raise PropagationError(3, 0.5)

    monkeypatch.setitem(cli.COMMANDS, "simulate", boom)
    assert run(make(), tmp_path, threads=1, log=quiet) == 2
    assert list(tmp_path.iterdir()) == []


def test_unwritable_output_dir_exits_1():
    # /proc refuses new directories even for root
    assert run(make(), "/proc/mkvlan-out", threads=1, log=quiet) == 1


def test_output_dir_that_is_a_file(tmp_path):
    f = tmp_path / "file"
    f.write_text("x")
    assert run(make(), f, threads=1, log=quiet) == 1
    assert f.read_text() == "x"


def test_threads_resolution(monkeypatch):
    monkeypatch.setenv("MKV_LAN_THREADS", "3")
    assert cli.resolve_threads(None) == 3
    assert cli.resolve_threads(2) == 2
    monkeypatch.setenv("MKV_LAN_THREADS", "x")
    with pytest.raises(ConfigError):
        cli.resolve_threads(None)
    with pytest.raises(ConfigError):
        cli.resolve_threads(0)


def test_main_entry_point(tmp_path, capsys):
    ini = tmp_path / "c.ini"
    ini.write_text(make().to_ini())
    assert main(["fisher", "--config", str(ini), "--out", str(tmp_path / "o"), "--threads", "1", "--seed", "9"]) == 0
    prov = json.loads((tmp_path / "o" / "provenance.json").read_text())
    assert prov["seed"] == 9 and prov["subcommand"] == "fisher"
    bad = tmp_path / "bad.ini"
    bad.write_text("[run]\n")
    assert main(["--config", str(bad)]) == 1
    assert main(["--config", str(tmp_path / "missing.ini")]) == 1


def test_histogram_edge_cases():
    assert histogram_table([], 0.0, 1.0) == []
    assert histogram_table([2.0, 2.0, 2.0], 0.0, 1.0) == [(2.0, 3, 1.0)]
    assert qq_pairs([], 0.0, 1.0) == []


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=2, max_size=200), st.floats(-3, 3), st.floats(0.1, 10))
def test_histogram_target_is_a_density_on_the_window(z, mean, var):
    rows = histogram_table(z, mean, var)
    if len(rows) == 1:
        return
    width = (max(z) - min(z)) / cli.HIST_BINS
    assert sum(r[1] for r in rows) == len(z)
    assert sum(r[2] for r in rows) * width == pytest.approx(1.0, rel=1e-9)


def test_qq_positions():
    z = np.array([3.0, 1.0, 2.0])
    pairs = qq_pairs(z, 0.0, 1.0)
    assert [p[1] for p in pairs] == [1.0, 2.0, 3.0]
    assert pairs[1][0] == pytest.approx(0.0)
    assert pairs[0][0] == pytest.approx(-0.9674215661017010, rel=1e-9)
