import json

import numpy as np
import pytest

from viralsde import (
    PRESETS,
    ConfigError,
    ControlWeights,
    ModelParams,
    NoiseParams,
    RunConfig,
    TimeGrid,
    config_to_dict,
    dump_config,
    parse_config,
    parse_sweep_spec,
    preset,
)
from viralsde.cli import load_config, main, sweep_rows, transition_bracket

T2 = dict(omega=10, beta=0.005, mu=0.1, mu1=0.6, alpha=0.24, p=0.795, q=0.28)
EX2 = {**T2, "beta": 0.05, "mu": 0.1, "mu1": 0.1}

# name -> (rates, (sigma1, sigma2), initial state, weights)
PRESET_TABLE = {
    # baseline rates, sigma = 0.1, initial value (100, 100, 100)
    "example1": (T2, (0.1, 0.1), (100, 100, 100), None),
    # beta = 0.05, mu = mu1 = 0.1 with sigma = 0.1
    "example2": (EX2, (0.1, 0.1), (100, 100, 100), None),
    # same rates, sigma1 = 0.5, sigma2 = 0.8
    "example3": (EX2, (0.5, 0.8), (100, 100, 100), None),
    # immune-clearance cases (p, q) with their initial values
    "example4_i": ({**EX2, "p": 0.25, "q": 0.1}, (0.1, 0.1), (200, 40, 100), None),
    "example4_ii": ({**EX2, "p": 0.45, "q": 0.25}, (0.1, 0.1), (200, 300, 300), None),
    "example4_iii": ({**EX2, "p": 0.8, "q": 0.4}, (0.1, 0.1), (200, 600, 600), None),
    # treatment runs: A1 = 10, A2 = 5 and (300, 80, 50); A1 = 10, A2 = 5 and (200, 100, 30)
    "fig66a": (EX2, (0.05, 0.05), (300, 80, 50), (10, 5)),
    "fig66b": (EX2, (0.05, 0.05), (200, 100, 30), (10, 5)),
    "figlkm_a": (EX2, (0.05, 0.05), (200, 100, 30), (3, 3)),
    "figlkm_b": (EX2, (0.05, 0.05), (200, 100, 30), (1, 0.8)),
}


@pytest.mark.parametrize("name", sorted(PRESET_TABLE))
def test_preset_values(name):
    rates, sig, init, weights = PRESET_TABLE[name]
    c = preset(name)
    assert c.params == ModelParams(**rates)
    assert (c.noise.sigma1, c.noise.sigma2) == sig
    assert tuple(c.initial) == init
    if weights is None:
        assert c.control is None
    else:
        assert (c.control.weights.a1, c.control.weights.a2) == weights
        assert c.control.adjoint_n == (0.01, 0.02, 0.03)


def test_example4_alias():
    assert preset("example4") == preset("example4_iii")


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_round_trip(name):
    c = preset(name)
    again = parse_config(dump_config(c))
    assert again == c
    assert parse_config(config_to_dict(again)) == c


def test_defaults():
    c = parse_config("{}")
    assert c == RunConfig()
    assert c.grid == TimeGrid(0, 100, 0.01)


def test_overrides_merge_with_preset():
    c = parse_config({"preset": "example2", "noise": {"sigma2": 0.8}, "retention": "thinned:5"})
    assert c.noise == NoiseParams(0.1, 0.8)
    assert c.retention == ("thinned", 5)
    assert c.params.beta == 0.05


@pytest.mark.parametrize(
    "doc, path",
    [
        ({"params": {"beta": -1}}, "params.beta"),
        ({"params": {"betta": 1}}, "params.betta"),
        ({"nosie": {}}, "nosie"),
        ({"n_paths": 0}, "n_paths"),
        ({"n_paths": 2.5}, "n_paths"),
        ({"retention": "most"}, "retention"),
        ({"grid": {"dt": 0.3, "t_end": 1}}, "grid"),
        ({"control": {"weights": {"a1": -1}}}, "control.weights.a1"),
        ({"control": {"adjoint_n": [1, 2]}}, "control.adjoint_n"),
        ({"initial": {"s": -5}}, "initial.s"),
        ({"preset": "nope"}, "preset"),
        ({"noise": {"sigma1": "big"}}, "noise.sigma1"),
    ],
)
def test_rejections_name_the_field(doc, path):
    with pytest.raises(ConfigError) as err:
        parse_config(doc)
    assert err.value.path.startswith(path)
    assert path in str(err.value)


def test_malformed_text():
    with pytest.raises(ConfigError):
        parse_config("{not json")


def test_sweep_spec():
    spec = parse_sweep_spec({"axes": [{"name": "noise.sigma", "min": 0.05, "max": 1.0, "count": 4, "spacing": "log"}]})
    assert np.allclose(spec.axes[0].values(), np.geomspace(0.05, 1, 4))
    with pytest.raises(ConfigError):
        parse_sweep_spec({"axes": [{"name": "noise.sigma", "min": 0, "max": 1, "count": 1}]})
    with pytest.raises(ConfigError):
        parse_sweep_spec({"axes": [{"name": "params.zeta", "min": 0, "max": 1, "count": 3}]})
    axes = [{"name": "noise.sigma1", "min": 0, "max": 1, "count": 2}] * 3
    with pytest.raises(ConfigError):
        parse_sweep_spec({"axes": axes})


def test_flag_overrides():
    c = load_config(preset_name="fig66a", seed=9, paths=7, dt=0.02, t_end=4, out="x")
    assert (c.base_seed, c.n_paths, c.output_dir) == (9, 7, "x")
    assert c.grid == TimeGrid(0, 4, 0.02)
    assert (c.control.sweep.base_seed, c.control.sweep.n_paths) == (9, 7)
    with pytest.raises(ConfigError):
        load_config(preset_name="example1", dt=0.3, t_end=1)


def test_cli_analyze(tmp_path):
    assert main(["analyze", "--preset", "example1", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "analysis.json").read_text())
    assert doc["r0"] == pytest.approx(0.1524, abs=1e-4)
    assert doc["stability"]["condition_a"]["holds"] and doc["stability"]["condition_b"]["holds"]
    assert main(["analyze", "--preset", "example2", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "analysis.json").read_text())
    assert doc["r0"] == pytest.approx(3.53, abs=0.01)
    assert not doc["stability"]["condition_a"]["holds"] and not doc["stability"]["condition_b"]["holds"]


def test_cli_analyze_zero_noise(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"noise": {"sigma1": 0, "sigma2": 0}, "output_dir": str(tmp_path)}))
    assert main(["analyze", "--config", str(cfg)]) == 0
    doc = json.loads((tmp_path / "analysis.json").read_text())
    assert doc["stability"]["condition_a"]["rhs"] == 0
    assert doc["stability"]["matrix"]["d1"] == pytest.approx(2 * (0.24 - 0.795 - 0.1))


def test_cli_exit_codes(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"params": {"beta": -1}}')
    assert main(["analyze", "--config", str(bad)]) == 2
    assert main(["analyze", "--config", str(tmp_path / "missing.json")]) == 4
    assert main(["control", "--preset", "example1", "--out", str(tmp_path)]) == 2
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["analyze", "--preset", "example1", "--out", str(blocker / "sub")]) == 4


def test_cli_simulate_reproducible(tmp_path, capsys):
    args = ["simulate", "--preset", "example2", "--paths", "4", "--t-end", "2", "--seed", "3"]
    cfg = tmp_path / "c.json"
    cfg.write_text('{"retention": "all"}')
    assert main(args + ["--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    out = capsys.readouterr().out
    assert "extinction_probability=" in out
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == ["stats.json", "trajectory_00000.csv", "trajectory_00001.csv",
                     "trajectory_00002.csv", "trajectory_00003.csv"]
    for name in files[1:]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_cli_single_deterministic_path_is_euler(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"preset": "example2", "noise": {"sigma1": 0, "sigma2": 0},
                               "retention": "all", "n_paths": 1, "grid": {"t_end": 1, "dt": 0.1}}))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    rows = np.loadtxt(tmp_path / "trajectory_00000.csv", delimiter=",", skiprows=1)
    p = preset("example2").params
    x = np.array([100.0, 100.0, 100.0])
    for row in rows[1:]:
        s, i, b = x
        x = x + 0.1 * np.array([p.omega - p.beta * s * b - p.mu * s,
                                p.beta * s * b - (p.p + p.mu) * i,
                                p.alpha * i - (p.q + p.mu1) * b])
        assert np.allclose(row[1:], x, rtol=1e-13)


def test_cli_control(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"preset": "fig66a", "grid": {"t_end": 2}}))
    assert main(["control", "--config", str(cfg), "--paths", "10", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "control.json").read_text())
    assert doc["converged"] and set(doc["scenarios"]) == {"none", "immuno_only", "antiviral_only", "combined"}
    assert (tmp_path / "scenarios.csv").exists()


def test_cli_control_non_convergence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"preset": "fig66a", "grid": {"t_end": 2},
                               "control": {"sweep": {"max_iterations": 1}}}))
    assert main(["control", "--config", str(cfg), "--paths", "5", "--out", str(tmp_path)]) == 3
    assert json.loads((tmp_path / "control.json").read_text())["converged"] is False


def test_single_cell_sweep_matches_analyze_and_simulate(tmp_path):
    base = load_config(preset_name="example2", paths=5, t_end=2)
    spec = parse_sweep_spec({"axes": [{"name": "noise.sigma", "min": 0.1, "max": 0.1, "count": 2}]})
    row = sweep_rows(base, spec)[0]
    assert main(["simulate", "--preset", "example2", "--paths", "5", "--t-end", "2", "--out", str(tmp_path)]) == 0
    stats = json.loads((tmp_path / "stats.json").read_text())
    assert row["extinction_probability"] == stats["extinction_probability"]
    assert row["terminal_mean_B"] == stats["mean"][-1][2]
    assert main(["analyze", "--preset", "example2", "--out", str(tmp_path)]) == 0
    an = json.loads((tmp_path / "analysis.json").read_text())
    assert row["condition_a"] == an["stability"]["condition_a"]["holds"]
    assert row["negative_definite"] == an["stability"]["negative_definite"]


def test_cli_sweep(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"axes": [{"name": "noise.sigma", "min": 0.0, "max": 1.0, "count": 3}],
                                "metrics": ["extinction_probability", "terminal_mean_B"]}))
    assert main(["sweep", "--preset", "example2", "--spec", str(spec), "--paths", "20",
                 "--dt", "0.05", "--out", str(tmp_path)]) == 0
    rows = np.genfromtxt(tmp_path / "sweep.csv", delimiter=",", names=True)
    assert rows["extinction_probability"][0] == 0.0
    doc = json.loads((tmp_path / "sweep.json").read_text())
    assert "transition_bracket" in doc
    bad = tmp_path / "bad.json"
    bad.write_text('{"axes": []}')
    assert main(["sweep", "--preset", "example2", "--spec", str(bad)]) == 2


def test_transition_bracket():
    rows = [{"x": 0.1, "e": 0.0}, {"x": 0.2, "e": 0.3}, {"x": 0.3, "e": 0.7}, {"x": 0.4, "e": 1.0}]
    assert transition_bracket(rows, "x", "e") == (0.2, 0.3)
    assert transition_bracket(rows[:2], "x", "e") is None


def test_control_weights_in_config_are_validated():
    with pytest.raises(ConfigError):
        parse_config({"control": {"weights": {"u2_max": 0}}})
    c = parse_config({"control": {}})
    assert c.control.weights == ControlWeights()
