"""Toy-scale experiments: lazily trained models and the benchmark sweeps built on them.

Everything follows the default run configuration: toy_scene(seed) (8 x 8, 10 m x 5 m,
6 scatterers plus LOS) and the training recipes in ``RunConfig``.
"""
from __future__ import annotations

import time
from functools import cached_property

import numpy as np

from . import baselines as bl
from .benchmark import Artifacts, BenchmarkConfig, run_benchmark
from .channel_oracle import toy_scene
from .config import RunConfig
from .dataset_store import generate_trajectories, sample_static_db, static_channels
from .doppler import DopplerConfig
from .neural_ode import OdeConfig, ScgnetTrainConfig, predict_static_batch, train_scgnet
from .positioning import (IterationConfig, PositionerConfig, PositionerTrainConfig, init_positioner,
                          iterate_position, train_positioner)
from .scgnet import ScgnetConfig, init_scgnet
from .seeding import substream

N_TEST_POSITIONS = 200
N_TRAJECTORIES = 200
SEQ_LEN = 10


def log(msg: str) -> None:
    print(f"[toy {time.strftime('%H:%M:%S')}] {msg}", flush=True)


class ToyRun:
    """Each model is trained on first use and cached for the lifetime of the object."""

    def __init__(self, seed: int = 0):
        self.cfg = RunConfig()
        self.seed = seed
        self.scene = toy_scene(seed)
        self.ode = OdeConfig(self.cfg.ode.solver, self.cfg.ode.step, self.cfg.ode.max_steps).resolved(
            self.scene.wavelength)
        self.doppler = DopplerConfig.for_scene(self.scene, self.cfg.doppler.phi)
        self.iteration = IterationConfig(self.cfg.iteration.eta, self.cfg.iteration.max_iterations)
        self.timings: dict[str, float] = {}
        self._dbs: dict[float, object] = {}
        self._scgnets: dict[float, tuple] = {}
        self._trajectories: dict[tuple, object] = {}
        self._benchmarks: dict[tuple, dict] = {}

    # ------------------------------------------------------------ data

    def db(self, density: float):
        if density not in self._dbs:
            self._dbs[density] = sample_static_db(self.scene, density, self.seed)
        return self._dbs[density]

    @cached_property
    def test_positions(self) -> np.ndarray:
        rng = substream(self.seed, "test")
        xmin, xmax, ymin, ymax = self.scene.ue_area
        xy = rng.uniform(size=(N_TEST_POSITIONS, 2)) * [xmax - xmin, ymax - ymin] + [xmin, ymin]
        return np.column_stack([xy, np.full(N_TEST_POSITIONS, self.scene.ue_height)])

    @cached_property
    def test_channels(self) -> np.ndarray:
        return static_channels(self.scene, self.test_positions)

    def trajectories(self, speed: float, interval: float):
        key = (speed, interval)
        if key not in self._trajectories:
            self._trajectories[key] = generate_trajectories(
                self.scene, N_TRAJECTORIES, SEQ_LEN + 1, interval, (speed, speed), self.seed, stream="trajectories-test")
        return self._trajectories[key]

    # ------------------------------------------------------------ models

    def scgnet(self, density: float):
        """(params, loss trace) trained at ``density``; z = 4 at density >= 50, else 2."""
        if density not in self._scgnets:
            t = self.cfg.train_scgnet
            db = self.db(density)
            params = self.fresh_scgnet(density)
            z = t.z if density >= 50 else 2
            train = ScgnetTrainConfig(t.steps, t.batch_size, z, t.lr, t.lr_final, t.clip_norm, self.seed,
                                      t.curriculum_start, t.curriculum_steps)
            t0 = time.time()
            params, trace = train_scgnet(db, params, self.ode, train)
            self.timings[f"scgnet@{density:g}"] = time.time() - t0
            log(f"SCGnet density {density:g}: {len(trace)} steps in {time.time() - t0:.0f} s")
            self._scgnets[density] = (params, trace, train)
        return self._scgnets[density]

    def fresh_scgnet(self, density: float):
        """Untrained (zero-field) SCGnet with the same init as :meth:`scgnet`."""
        c = self.cfg.scgnet
        db = self.db(density)
        net = ScgnetConfig(*self.cfg.dims, tuple(c.scattering_hidden), tuple(c.direction_hidden),
                           c.combine_mode, c.output_activation, c.rate_gain)
        rms = float(np.sqrt(np.mean(np.abs(db.channels) ** 2)))
        return init_scgnet(net, substream(self.seed, "init"), self.scene.wavelength, 1.0 / rms)

    def static_nmse(self, density: float) -> tuple[np.ndarray, np.ndarray]:
        """Per-position NMSE of (ODE prediction, nearest stored sample) on the held-out positions."""
        params = self.scgnet(density)[0]
        db = self.db(density)
        ode = predict_static_batch(db, params, self.test_positions, self.ode)
        nn_db = db.channels[[db.nearest(p) for p in self.test_positions]]
        return bl.nmse_samples(ode, self.test_channels), bl.nmse_samples(nn_db, self.test_channels)

    def train_positioner(self, db=None, seed: int | None = None, steps: int | None = None):
        c, t = self.cfg.positioner, self.cfg.train_positioner
        seed = self.seed if seed is None else seed
        params = init_positioner(PositionerConfig(*self.cfg.dims, tuple(c.hidden), c.input_mode),
                                 substream(seed, "init"))
        train = PositionerTrainConfig(steps or t.steps, t.batch_size, t.lr, t.clip_norm, t.val_fraction, seed)
        db = self.db(self.cfg.density) if db is None else db
        t0 = time.time()
        params, report = train_positioner(db, params, train)
        log(f"positioner ({len(report.train_index)} train samples, seed {seed}): median "
            f"{report.val_median * 100:.2f} cm in {time.time() - t0:.0f} s")
        return params, report

    @cached_property
    def positioner(self):
        return self.train_positioner()

    @cached_property
    def lstm(self):
        L = self.cfg.lstm
        train_trj = generate_trajectories(self.scene, 200, 2 * SEQ_LEN, 1e-3, (10.0, 40.0), self.seed,
                                          stream="trajectories-train")
        windows = bl.sequence_windows(train_trj.angular_delay(), L.seq_len)
        params = bl.init_lstm_baseline(bl.LstmBaselineConfig(*self.cfg.dims, L.hidden), substream(self.seed, "init"))
        t0 = time.time()
        params, trace = bl.lstm_baseline_train(params, windows, bl.LstmTrainConfig(
            L.steps, L.batch_size, L.lr, L.clip_norm, self.seed))
        log(f"LSTM predictor: {len(windows)} windows, {len(trace)} steps in {time.time() - t0:.0f} s")
        return params

    def trajectory_benchmark(self, speed: float, interval: float) -> dict[str, float]:
        """Mean NMSE per method for next-sample prediction; cached per condition."""
        key = (speed, interval)
        if key not in self._benchmarks:
            self._benchmarks[key] = self._run_trajectory_benchmark(speed, interval)
        return self._benchmarks[key]

    def _run_trajectory_benchmark(self, speed: float, interval: float) -> dict[str, float]:
        art = Artifacts(db=self.db(self.cfg.density), scgnet=self.scgnet(self.cfg.density)[0],
                        positioner=self.positioner[0], lstm=self.lstm, trajectories=self.trajectories(speed, interval),
                        doppler=self.doppler, ode=self.ode, iteration=self.iteration,
                        ue_area=self.scene.ue_area, ue_height=self.scene.ue_height)
        t0 = time.time()
        reps = run_benchmark(BenchmarkConfig(seq_len=SEQ_LEN, speed=speed, seed=self.seed), art)
        out = {r.method: r.mean for r in reps}
        log(f"trajectory benchmark {speed:g} m/s, {interval * 1e3:g} ms in {time.time() - t0:.0f} s: "
            + ", ".join(f"{k} {v:.3f}" for k, v in out.items()))
        return out

    def positioning_errors(self, speed: float, interval: float, n: int = SEQ_LEN) -> tuple[np.ndarray, np.ndarray]:
        """Per-trajectory error at the n-th sample: (fitted line after iteration, single-point)."""
        params = self.positioner[0]
        trj = self.trajectories(speed, interval)
        iterated, single = np.empty(len(trj)), np.empty(len(trj))
        for k in range(len(trj)):
            res = iterate_position(params, trj.channels[k, :n], trj.times[:n], self.iteration, self.doppler)
            truth = trj.positions[k, n - 1]
            iterated[k] = np.linalg.norm(res.fit.at(trj.times[n - 1]) - truth)
            single[k] = np.linalg.norm(res.positions[0][n - 1] - truth)
        return iterated, single
