"""Command-line entry point; one subcommand per pipeline stage.

Exit codes: 0 success, 2 usage, 3 missing input file, 4 invalid configuration,
5 runtime failure (e.g. training divergence, step budget exceeded).
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import baselines as bl
from .benchmark import (STATIC_METHODS, TRAJECTORY_METHODS, Artifacts, BenchmarkConfig, MissingArtifacts,
                        run_benchmark)
from .channel_oracle import load_scene, random_scene, save_scene
from .config import ConfigError, RunConfig, config_from_dict, load_config, save_config
from .dataset_store import (generate_trajectories, read_db, read_trajectories, sample_static_db,
                            static_channels, write_db, write_trajectories)
from .doppler import DopplerConfig
from .neural_ode import OdeConfig, ScgnetTrainConfig, train_scgnet, write_loss_trace
from .pipeline import predict_mobile
from .positioning import (IterationConfig, PositionerConfig, PositionerTrainConfig, init_positioner,
                          load_positioner, save_positioner, train_positioner)
from .scgnet import ScgnetConfig, init_scgnet, load_scgnet, save_scgnet
from .seeding import substream

log = logging.getLogger("odechan")

EXIT_MISSING, EXIT_CONFIG, EXIT_RUNTIME = 3, 4, 5


class MissingInput(FileNotFoundError):
    pass


def _need(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingInput(f"missing input file: {path}")
    return path


def _config(args) -> RunConfig:
    cfg = load_config(_need(args.config)) if args.config else config_from_dict({})
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "density", None) is not None:
        cfg.density = args.density
    if getattr(args, "output_dir", None):
        cfg.output_dir = args.output_dir
    return cfg.validate()


def _finish(cfg: RunConfig) -> None:
    """Echo the effective configuration next to the outputs."""
    cfg.out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, cfg.out / "config.yaml")


def _path(arg, cfg: RunConfig, default: str) -> Path:
    return Path(arg) if arg else cfg.out / default


def _scene(cfg: RunConfig, arg=None):
    path = _need(arg or cfg.scene.path or cfg.out / "scene.yaml")
    scene = load_scene(path)
    cfg.scene.path = str(path)  # the echoed config names the scene actually used
    if [scene.n_antennas, scene.n_subcarriers] != list(cfg.dims):
        raise ConfigError("dims", f"{cfg.dims} disagrees with the scene ({scene.n_antennas}, {scene.n_subcarriers})")
    return scene


def _ode(cfg: RunConfig, scene) -> OdeConfig:
    return OdeConfig(cfg.ode.solver, cfg.ode.step, cfg.ode.max_steps).resolved(scene.wavelength)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------- commands

def cmd_generate(args) -> None:
    cfg = _config(args)
    if args.scene:
        cfg.scene.preset = args.scene
    seed = cfg.scene.seed if cfg.scene.seed is not None else cfg.seed
    n_t, n_c = cfg.dims
    rng = substream(seed, "scene")
    if cfg.scene.preset == "toy":
        scene = random_scene(rng, 6, n_antennas=n_t, n_subcarriers=n_c, area=(10.0, 5.0),
                             bs_distance=30.0, scatterer_radius=(10.0, 40.0))
    else:
        scene = random_scene(rng, 24, n_antennas=n_t, n_subcarriers=n_c)
    out = _path(args.out, cfg, "scene.yaml")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_scene(scene, out)
    cfg.scene.path = str(out)
    _finish(cfg)
    print(f"scene {scene.fingerprint()} with {scene.n_paths} paths -> {out}")


def cmd_sample(args) -> None:
    cfg = _config(args)
    scene = _scene(cfg, args.scene)
    db = sample_static_db(scene, cfg.density, cfg.seed)
    out = _path(args.out, cfg, "db.socdb")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_db(db, out)
    _finish(cfg)
    print(f"{len(db)} samples at density {cfg.density} -> {out}")


def cmd_trajectories(args) -> None:
    cfg = _config(args)
    scene = _scene(cfg, args.scene)
    t = cfg.trajectories
    speed = args.speed if args.speed is not None else t.speed_range
    interval = args.interval if args.interval is not None else t.interval_s
    trj = generate_trajectories(scene, args.n or t.n, t.length, interval, tuple(speed), cfg.seed,
                                stream=f"trajectories-{args.split}")
    out = _path(args.out, cfg, f"{args.split}_trajectories.soctrj")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_trajectories(trj, out)
    _finish(cfg)
    print(f"{len(trj)} trajectories x {trj.length} samples -> {out}")


def cmd_train_scgnet(args) -> None:
    cfg = _config(args)
    scene = _scene(cfg)
    db = read_db(_need(_path(args.db, cfg, "db.socdb")))
    s = cfg.scgnet
    net_cfg = ScgnetConfig(*cfg.dims, tuple(s.scattering_hidden), tuple(s.direction_hidden),
                           s.combine_mode, s.output_activation, s.rate_gain)
    rms = float(np.sqrt(np.mean(np.abs(db.channels) ** 2)))
    params = init_scgnet(net_cfg, substream(cfg.seed, "init"), scene.wavelength, 1.0 / rms)
    t = cfg.train_scgnet
    train = ScgnetTrainConfig(t.steps, t.batch_size, t.z, t.lr, t.lr_final, t.clip_norm, cfg.seed,
                              t.curriculum_start, t.curriculum_steps)
    params, trace = train_scgnet(db, params, _ode(cfg, scene), train,
                                 log=lambda k, v: k % 100 == 0 and log.info("scgnet step %d mse %.4g", k, v))
    out = _path(args.out, cfg, "scgnet.ckpt")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_scgnet(params, out)
    write_loss_trace(out.with_name("scgnet_loss.csv"), trace)
    _finish(cfg)
    print(f"trained SCGnet for {len(trace)} steps, final mse {trace[-1] if trace else float('nan'):.4g} -> {out}")


def cmd_train_positioner(args) -> None:
    cfg = _config(args)
    db = read_db(_need(_path(args.db, cfg, "db.socdb")))
    pcfg = PositionerConfig(*cfg.dims, tuple(cfg.positioner.hidden), cfg.positioner.input_mode)
    params = init_positioner(pcfg, substream(cfg.seed, "init"))
    t = cfg.train_positioner
    train = PositionerTrainConfig(t.steps, t.batch_size, t.lr, t.clip_norm, t.val_fraction, cfg.seed)
    params, report = train_positioner(db, params, train,
                                      log=lambda k, v: k % 100 == 0 and log.info("positioner step %d mse %.4g", k, v))
    out = _path(args.out, cfg, "positioner.ckpt")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_positioner(params, out)
    write_loss_trace(out.with_name("positioner_loss.csv"), report.loss_trace)
    _finish(cfg)
    print(f"positioner held-out median error {report.val_median:.4g} m -> {out}")


def cmd_train_lstm(args) -> None:
    cfg = _config(args)
    trj = read_trajectories(_need(_path(args.trajectories, cfg, "train_trajectories.soctrj")))
    L = cfg.lstm
    params = bl.init_lstm_baseline(bl.LstmBaselineConfig(*cfg.dims, L.hidden), substream(cfg.seed, "init"))
    windows = bl.sequence_windows(trj.angular_delay(), L.seq_len)
    params, trace = bl.lstm_baseline_train(params, windows, bl.LstmTrainConfig(L.steps, L.batch_size, L.lr,
                                                                               L.clip_norm, cfg.seed))
    out = _path(args.out, cfg, "lstm.ckpt")
    out.parent.mkdir(parents=True, exist_ok=True)
    bl.save_lstm_baseline(params, out)
    write_loss_trace(out.with_name("lstm_loss.csv"), trace)
    _finish(cfg)
    print(f"trained LSTM predictor on {len(windows)} windows -> {out}")


def cmd_predict(args) -> None:
    cfg = _config(args)
    scene = _scene(cfg)
    db = read_db(_need(_path(args.db, cfg, "db.socdb")))
    scg = load_scgnet(_need(_path(args.model, cfg, "scgnet.ckpt")))
    pos = load_positioner(_need(_path(args.positioner, cfg, "positioner.ckpt")))
    trj = read_trajectories(_need(_path(args.sequence, cfg, "test_trajectories.soctrj")))
    n = args.seq_len or trj.length
    if not 2 <= n <= trj.length:
        raise ConfigError("seq_len", f"must be in [2, {trj.length}]")
    dop = DopplerConfig.for_scene(scene, cfg.doppler.phi)
    it = IterationConfig(cfg.iteration.eta, cfg.iteration.max_iterations)
    ode = _ode(cfg, scene)
    preds, rows = [], []
    for k in range(len(trj)):
        t_next = trj.times[n] if n < trj.length else None
        r = predict_mobile(db, scg, pos, trj.channels[k, :n], trj.times[:n], ode, it, dop,
                           scene.ue_area, scene.ue_height, t_next)
        preds.append(r.G)
        rows.append([k, *(repr(float(v)) for v in r.position), *(repr(float(v)) for v in r.velocity),
                     r.source_index, repr(r.length), repr(r.iteration.t_next), r.iteration.iterations,
                     int(r.iteration.converged)])
    out = _path(args.out, cfg, "predictions.npy")
    out.parent.mkdir(parents=True, exist_ok=True)
    np.save(out, np.stack(preds))
    _write_csv(out.with_suffix(".csv"),
               ["trajectory", "x", "y", "z", "vx", "vy", "vz", "source_index", "length", "t_next",
                "iterations", "converged"], rows)
    _finish(cfg)
    print(f"predicted {len(preds)} mobile channels -> {out}")


def cmd_evaluate(args) -> None:
    cfg = _config(args)
    task = args.task or cfg.benchmark.task
    if args.methods:
        methods = tuple(args.methods.split(","))
    elif task == cfg.benchmark.task:
        methods = tuple(cfg.benchmark.methods)
    else:  # task switched on the command line: every method of that task
        methods = STATIC_METHODS if task == "static" else TRAJECTORY_METHODS
    bench = BenchmarkConfig(task, methods, cfg.benchmark.seq_len, cfg.benchmark.ar_window,
                            density=cfg.density, seed=cfg.seed)
    scene = _scene(cfg)
    out_dir = cfg.out
    art = Artifacts(doppler=DopplerConfig.for_scene(scene, cfg.doppler.phi), ode=_ode(cfg, scene),
                    iteration=IterationConfig(cfg.iteration.eta, cfg.iteration.max_iterations),
                    ue_area=scene.ue_area, ue_height=scene.ue_height)
    loaders = {
        "db": (out_dir / "db.socdb", read_db),
        "scgnet": (out_dir / "scgnet.ckpt", load_scgnet),
        "positioner": (out_dir / "positioner.ckpt", load_positioner),
        "lstm": (out_dir / "lstm.ckpt", bl.load_lstm_baseline),
        "trajectories": (out_dir / "test_trajectories.soctrj", read_trajectories),
    }
    for name, (path, loader) in loaders.items():
        if path.exists():
            setattr(art, name, loader(path))
    if task == "static":
        rng = substream(cfg.seed, "test-positions")
        xmin, xmax, ymin, ymax = scene.ue_area
        n = cfg.benchmark.n_test_positions
        xy = rng.uniform(size=(n, 2)) * [xmax - xmin, ymax - ymin] + [xmin, ymin]
        art.test_positions = np.column_stack([xy, np.full(n, scene.ue_height)])
        art.test_channels = static_channels(scene, art.test_positions)
    reports = run_benchmark(bench, art)
    out = _path(args.out, cfg, "benchmark.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    bl.write_report_csv(out, reports)
    _finish(cfg)
    for r in reports:
        print(f"{r.method:>9s}  mean NMSE {r.mean:.4g}  ({len(r.samples)} samples)")
    print(f"-> {out}")


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="odechan", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="run configuration (YAML); defaults apply when omitted")
        p.add_argument("--output-dir", dest="output_dir", help="override output_dir")
        p.add_argument("--seed", type=int, help="override the run seed")
        p.set_defaults(func=fn)
        return p

    p = add("generate", cmd_generate, "build a scatterer scene")
    p.add_argument("--scene", choices=("toy", "default"), help="scene preset")
    p.add_argument("--out")
    p = add("sample", cmd_sample, "sample the static channel database")
    p.add_argument("--density", type=float, help="samples per square meter")
    p.add_argument("--scene")
    p.add_argument("--out")
    p = add("trajectories", cmd_trajectories, "generate uniform-motion channel sequences")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--speed", type=float, nargs=2, metavar=("LOW", "HIGH"))
    p.add_argument("--interval", type=float, help="sampling interval in seconds")
    p.add_argument("--n", type=int, help="number of trajectories")
    p.add_argument("--scene")
    p.add_argument("--out")
    p = add("train-scgnet", cmd_train_scgnet, "train the spatial gradient network")
    p.add_argument("--db")
    p.add_argument("--out")
    p = add("train-positioner", cmd_train_positioner, "train the LSTM positioner")
    p.add_argument("--db")
    p.add_argument("--out")
    p = add("train-lstm", cmd_train_lstm, "train the LSTM sequence predictor baseline")
    p.add_argument("--trajectories")
    p.add_argument("--out")
    p = add("predict", cmd_predict, "predict the next mobile channel of each sequence")
    p.add_argument("--db")
    p.add_argument("--model", help="SCGnet checkpoint")
    p.add_argument("--positioner")
    p.add_argument("--sequence", help=".soctrj file")
    p.add_argument("--seq-len", dest="seq_len", type=int, help="samples used as the measured history")
    p.add_argument("--out")
    p = add("evaluate", cmd_evaluate, "benchmark methods and write an NMSE report")
    p.add_argument("--methods", help="comma separated, e.g. proposed,nn_db,lstm,ar")
    p.add_argument("--task", choices=("static", "trajectory"))
    p.add_argument("--density", type=float, help="density label recorded in the report")
    p.add_argument("--out")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except MissingInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifacts as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (RuntimeError, FloatingPointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
