import numpy as np
import pytest
import yaml

from odechan import cli
from odechan.angular_delay import forward_values, inverse_values
from odechan.baselines import nmse, read_report_csv
from odechan.config import ConfigError, RunConfig, config_from_dict, load_config, save_config
from odechan.dataset_store import TrajectoryDataset, read_db, write_trajectories
from odechan.positioning import PositionerConfig, init_positioner, save_positioner

TINY = {
    "dims": [4, 4],
    "density": 2.0,
    "scgnet": {"scattering_hidden": [8, 8], "direction_hidden": [8]},
    "train_scgnet": {"steps": 3, "batch_size": 4, "z": 2, "curriculum_steps": 0, "curriculum_start": None},
    "positioner": {"hidden": [8, 8]},
    "train_positioner": {"steps": 3, "batch_size": 8},
    "lstm": {"hidden": 8, "seq_len": 4, "steps": 3, "batch_size": 4},
    "trajectories": {"n": 3, "length": 6},
    "benchmark": {"seq_len": 4, "n_test_positions": 5},
}


def write_config(path, data):
    path.write_text(yaml.safe_dump(data))
    return str(path)


# ---------------------------------------------------------------- config

def test_defaults_round_trip(tmp_path):
    cfg = config_from_dict({})
    save_config(cfg, tmp_path / "c.yaml")
    assert load_config(tmp_path / "c.yaml") == cfg
    assert cfg.to_text() == RunConfig().to_text()


def test_every_field_has_a_default():
    assert config_from_dict(None).to_dict() == RunConfig().to_dict()


@pytest.mark.parametrize("data, name", [
    ({"bogus": 1}, "bogus"),
    ({"ode": {"solver": "midpoint"}}, "ode.solver"),
    ({"ode": {"nope": 1}}, "ode.nope"),
    ({"density": -1.0}, "density"),
    ({"dims": [4]}, "dims"),
    ({"train_scgnet": {"steps": "many"}}, "train_scgnet.steps"),
    ({"train_scgnet": {"lr_final": "x"}}, "train_scgnet.lr_final"),
    ({"iteration": {"eta": 0}}, "iteration.eta"),
    ({"version": 2}, "version"),
    ({"benchmark": {"seq_len": 50}}, "benchmark.seq_len"),
])
def test_validation_names_the_field(data, name):
    with pytest.raises(ConfigError) as err:
        config_from_dict(data)
    assert err.value.field == name


def test_ints_promote_to_floats():
    assert config_from_dict({"density": 25}).density == 25.0


# ---------------------------------------------------------------- exit codes

def test_missing_input_exit_code(tmp_path, capsys):
    assert cli.main(["sample", "--output-dir", str(tmp_path)]) == cli.EXIT_MISSING
    assert "missing input" in capsys.readouterr().err
    assert cli.main(["sample", "--config", str(tmp_path / "none.yaml")]) == cli.EXIT_MISSING


def test_config_error_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.yaml", {"train_scgnet": {"batch": 3}})
    assert cli.main(["generate", "--config", cfg]) == cli.EXIT_CONFIG
    assert "train_scgnet.batch" in capsys.readouterr().err


def test_dims_mismatch_is_config_error(tmp_path):
    out = str(tmp_path)
    assert cli.main(["generate", "--output-dir", out]) == 0
    cfg = write_config(tmp_path / "c.yaml", {"dims": [4, 4], "output_dir": out})
    assert cli.main(["sample", "--config", cfg]) == cli.EXIT_CONFIG


def test_runtime_error_exit_code(tmp_path):
    out = str(tmp_path)
    cfg = write_config(tmp_path / "c.yaml", {**TINY, "output_dir": out})
    assert cli.main(["generate", "--config", cfg]) == 0
    assert cli.main(["trajectories", "--config", cfg, "--speed", "1e5", "1e5", "--interval", "1.0"]) == cli.EXIT_RUNTIME


def test_missing_artifacts_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.yaml", {**TINY, "output_dir": str(tmp_path)})
    assert cli.main(["generate", "--config", cfg]) == 0
    assert cli.main(["evaluate", "--config", cfg, "--methods", "lstm"]) == cli.EXIT_MISSING
    assert "lstm" in capsys.readouterr().err


# ---------------------------------------------------------------- pipeline

STAGES = [
    ["generate"], ["sample"], ["trajectories", "--split", "train"], ["trajectories", "--split", "test"],
    ["train-scgnet"], ["train-positioner"], ["train-lstm"], ["predict", "--seq-len", "4"],
    ["evaluate"], ["evaluate", "--task", "static", "--out", "{out}/static.csv"],
]
OUTPUTS = ["scene.yaml", "db.socdb", "train_trajectories.soctrj", "test_trajectories.soctrj", "scgnet.ckpt",
           "scgnet_loss.csv", "positioner.ckpt", "positioner_loss.csv", "lstm.ckpt", "lstm_loss.csv",
           "predictions.npy", "predictions.csv", "benchmark.csv", "static.csv"]


def run_pipeline(out, config):
    for stage in STAGES:
        argv = [a.format(out=out) for a in stage] + ["--config", config, "--output-dir", str(out)]
        assert cli.main(argv) == 0, stage


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("runs")
    cfg = write_config(base / "tiny.yaml", TINY)
    run_pipeline(base / "a", cfg)
    run_pipeline(base / "b", cfg)
    # re-run from the echoed configuration
    run_pipeline(base / "c", str(base / "a" / "config.yaml"))
    return base


def test_pipeline_produces_benchmark(pipeline_runs):
    rows = read_report_csv(pipeline_runs / "a" / "benchmark.csv")
    assert {r["method"] for r in rows} == {"proposed", "nn_db", "lstm", "ar"}
    assert len(rows) == 4 * 3
    static = read_report_csv(pipeline_runs / "a" / "static.csv")
    assert {r["method"] for r in static} == {"ode", "nn_db"} and len(static) == 10


@pytest.mark.parametrize("name", OUTPUTS)
def test_pipeline_byte_identical(pipeline_runs, name):
    a = (pipeline_runs / "a" / name).read_bytes()
    assert a == (pipeline_runs / "b" / name).read_bytes()


@pytest.mark.parametrize("name", OUTPUTS)
def test_config_echo_reproduces(pipeline_runs, name):
    assert (pipeline_runs / "a" / name).read_bytes() == (pipeline_runs / "c" / name).read_bytes()


def test_config_echo_is_effective_config(pipeline_runs):
    cfg = load_config(pipeline_runs / "a" / "config.yaml")
    assert cfg.dims == [4, 4] and cfg.output_dir == str(pipeline_runs / "a")
    assert cfg.scene.path == str(pipeline_runs / "a" / "scene.yaml")


def test_predict_diagnostics(pipeline_runs):
    lines = (pipeline_runs / "a" / "predictions.csv").read_text().splitlines()
    assert lines[0].split(",")[:4] == ["trajectory", "x", "y", "z"]
    assert len(lines) == 4
    assert np.load(pipeline_runs / "a" / "predictions.npy").shape == (3, 4, 4)


def test_predict_stationary_at_stored_point(pipeline_runs, tmp_path):
    """A UE parked on a stored sample, located exactly, is predicted without error."""
    src = pipeline_runs / "a"
    db = read_db(src / "db.socdb")
    k = 3
    # a positioner that always answers the stored position
    p = init_positioner(PositionerConfig(4, 4, (8, 8)), np.random.default_rng(0))
    for t in p.params:
        t.data[:] = 0
    p.head.bias.data[:] = db.positions[k]
    save_positioner(p, tmp_path / "pos.ckpt")
    H = inverse_values(db.channels[k])
    n = 5
    trj = TrajectoryDataset({"n_antennas": 4, "n_subcarriers": 4}, np.arange(n) * 1e-3, np.zeros(1), np.zeros(1),
                            np.repeat(db.positions[k][None, None], n, 1), np.repeat(H[None, None], n, 1))
    write_trajectories(trj, tmp_path / "seq.soctrj")
    argv = ["predict", "--config", str(src / "config.yaml"), "--db", str(src / "db.socdb"),
            "--model", str(src / "scgnet.ckpt"), "--positioner", str(tmp_path / "pos.ckpt"),
            "--sequence", str(tmp_path / "seq.soctrj"), "--out", str(tmp_path / "pred.npy"),
            "--output-dir", str(tmp_path)]
    assert cli.main(argv) == 0
    pred = np.load(tmp_path / "pred.npy")[0]
    assert nmse(pred, forward_values(H)) < 1e-20
