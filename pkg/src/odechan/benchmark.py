"""Orchestrates the method comparisons and emits NMSE reports.

Two tasks:

* ``static``: held-out positions with known coordinates; the ODE prediction from
  the nearest stored sample against that sample itself.
* ``trajectory``: next-step prediction after a measured sequence; the proposed
  pipeline against the nearest stored sample at the true next position, the LSTM
  predictor and the AR model.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .angular_delay import forward_values
from .baselines import NmseReport, ar_baseline, lstm_baseline_predict, nmse_samples
from .neural_ode import OdeConfig, predict_static_batch
from .pipeline import predict_mobile

STATIC_METHODS = ("ode", "nn_db")
TRAJECTORY_METHODS = ("proposed", "nn_db", "lstm", "ar")

REQUIRED = {
    ("static", "ode"): ("db", "scgnet", "test_positions", "test_channels"),
    ("static", "nn_db"): ("db", "test_positions", "test_channels"),
    ("trajectory", "proposed"): ("db", "scgnet", "positioner", "trajectories", "doppler"),
    ("trajectory", "nn_db"): ("db", "trajectories"),
    ("trajectory", "lstm"): ("lstm", "trajectories"),
    ("trajectory", "ar"): ("trajectories",),
}


class MissingArtifacts(RuntimeError):
    def __init__(self, missing: Sequence[str]):
        self.missing = list(missing)
        super().__init__("missing artifacts: " + ", ".join(self.missing))


@dataclass(frozen=True)
class BenchmarkConfig:
    task: str = "trajectory"
    methods: tuple[str, ...] = TRAJECTORY_METHODS
    seq_len: int = 10
    ar_window: int = 7
    density: float | None = None
    speed: float | None = None
    seed: int | None = None

    def __post_init__(self):
        allowed = STATIC_METHODS if self.task == "static" else TRAJECTORY_METHODS
        if self.task not in ("static", "trajectory"):
            raise ValueError(f"unknown task {self.task!r}")
        bad = [m for m in self.methods if m not in allowed]
        if bad:
            raise ValueError(f"methods {bad} not available for task {self.task!r}")


@dataclass
class Artifacts:
    db: object = None
    scgnet: object = None
    positioner: object = None
    lstm: object = None
    trajectories: object = None
    test_positions: np.ndarray | None = None
    test_channels: np.ndarray | None = None
    doppler: object = None
    ode: OdeConfig | None = None
    iteration: object = None
    ue_area: tuple | None = None
    ue_height: float = 1.5
    extra: dict = field(default_factory=dict)


def check_artifacts(config: BenchmarkConfig, art: Artifacts) -> None:
    missing = []
    for m in config.methods:
        for name in REQUIRED[(config.task, m)]:
            if getattr(art, name) is None and f"{name} (for {m})" not in missing:
                missing.append(f"{name} (for {m})")
    if missing:
        raise MissingArtifacts(missing)


def ar_window_predict(seq: np.ndarray, window: int) -> np.ndarray:
    """AR over the last ``window`` samples with order floor(window / 2)."""
    w = seq[-min(window, len(seq)):]
    return ar_baseline(w, max(1, len(w) // 2))[0]


def run_benchmark(config: BenchmarkConfig, art: Artifacts) -> list[NmseReport]:
    check_artifacts(config, art)
    tag = dict(density=config.density, speed=config.speed, seed=config.seed)
    reports = []
    if config.task == "static":
        for m in config.methods:
            if m == "ode":
                pred = predict_static_batch(art.db, art.scgnet, art.test_positions, art.ode)
            else:
                pred = art.db.channels[[art.db.nearest(p) for p in art.test_positions]]
            reports.append(NmseReport(m, nmse_samples(pred, art.test_channels), **tag))
        return reports

    trj = art.trajectories
    L = config.seq_len
    if trj.length < L + 1:
        raise ValueError(f"trajectories hold {trj.length} samples, need seq_len + 1 = {L + 1}")
    G_all = forward_values(trj.channels[:, :L + 1])
    truth = G_all[:, L]
    for m in config.methods:
        if m == "proposed":
            pred = np.stack([
                predict_mobile(art.db, art.scgnet, art.positioner, trj.channels[k, :L], trj.times[:L],
                               art.ode, art.iteration, art.doppler, art.ue_area, art.ue_height,
                               t_next=trj.times[L]).G
                for k in range(len(trj))])
        elif m == "nn_db":
            pred = art.db.channels[[art.db.nearest(p) for p in trj.positions[:, L]]]
        elif m == "lstm":
            pred = lstm_baseline_predict(art.lstm, G_all[:, :L])
        else:
            pred = np.stack([ar_window_predict(G_all[k, :L], config.ar_window) for k in range(len(trj))])
        reports.append(NmseReport(m, nmse_samples(pred, truth), seq_len=L, **tag))
    return reports
