"""Mobile prediction from a measured channel sequence: locate and fit motion,
integrate the static channel to the extrapolated position, re-apply Doppler."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .doppler import DopplerConfig, apply_doppler, compensation_matrix, velocity_polar
from .neural_ode import OdeConfig, planar_bearing, predict_static
from .positioning import IterationConfig, IterationResult, PositionerParams, iterate_position
from .scgnet import ScgnetParams


@dataclass
class MobilePrediction:
    G: np.ndarray  # predicted mobile angular-delay channel at t_next
    position: np.ndarray
    velocity: np.ndarray
    source_index: int
    length: float  # integration length from the nearest stored sample
    theta: float
    iteration: IterationResult


def clamp_to_area(pos, ue_area, height: float) -> np.ndarray:
    xmin, xmax, ymin, ymax = ue_area
    return np.array([np.clip(pos[0], xmin, xmax), np.clip(pos[1], ymin, ymax), height])


def predict_mobile(db, scgnet: ScgnetParams, positioner: PositionerParams, channel_seq, times,
                   ode_cfg: OdeConfig, it_cfg: IterationConfig, doppler_cfg: DopplerConfig,
                   ue_area, ue_height: float, t_next: float | None = None) -> MobilePrediction:
    it = iterate_position(positioner, channel_seq, times, it_cfg, doppler_cfg, t_next)
    # the UE is known to stay inside the served area
    x = clamp_to_area(it.position, ue_area, ue_height)
    src = db.nearest(x)
    G_static = predict_static(db, scgnet, x, ode_cfg)
    G = apply_doppler(G_static, compensation_matrix(*velocity_polar(it.velocity), doppler_cfg))
    return MobilePrediction(G, x, it.velocity, src, float(np.linalg.norm(x - db.positions[src])),
                            planar_bearing(db.positions[src], x), it)
