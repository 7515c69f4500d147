"""Grid-indexed Doppler compensation and elimination in the angular-delay domain.

Each angular-delay bin (z, q) is treated as one path arriving from the grid
angle theta_z with the grid delay tau_q, so the mobile channel is
approximately ``G_mobile = G o D`` with

    D[z, q] = exp(-j 2 pi (v / lambda) cos(theta_v - theta_z + phi) tau_q)

and ``E = conj(D)`` undoes it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .angular_delay import angle_grid, delay_grid


@dataclass(frozen=True)
class DopplerConfig:
    wavelength: float
    bandwidth: float
    n_antennas: int
    n_subcarriers: int
    phi: float = 0.0

    def __post_init__(self):
        if not self.wavelength > 0:
            raise ValueError("wavelength must be > 0")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be > 0")

    @classmethod
    def for_scene(cls, scene, phi: float = 0.0) -> "DopplerConfig":
        return cls(scene.wavelength, scene.bandwidth, scene.n_antennas, scene.n_subcarriers, phi)


def _phase(v_u: float, theta_v: float, cfg: DopplerConfig) -> np.ndarray:
    if v_u < 0:
        raise ValueError("speed must be >= 0")
    ang = np.cos(theta_v - angle_grid(cfg.n_antennas) + cfg.phi)
    tau = delay_grid(cfg.n_subcarriers, cfg.bandwidth)
    return 2 * np.pi * (v_u / cfg.wavelength) * np.outer(ang, tau)


def compensation_matrix(v_u: float, theta_v: float, cfg: DopplerConfig) -> np.ndarray:
    return np.exp(-1j * _phase(v_u, theta_v, cfg))


def elimination_matrix(v_u: float, theta_v: float, cfg: DopplerConfig) -> np.ndarray:
    return np.exp(1j * _phase(v_u, theta_v, cfg))


def velocity_polar(v) -> tuple[float, float]:
    """(speed, planar bearing) of a velocity vector."""
    v = np.asarray(v, dtype=np.float64)
    return float(np.hypot(v[0], v[1])), float(np.arctan2(v[1], v[0]))


def _hadamard(G, M) -> np.ndarray:
    G = np.asarray(G.values if hasattr(G, "values") else G)
    M = np.asarray(M)
    if G.shape[-2:] != M.shape:
        raise ValueError(f"channel shape {G.shape} does not match matrix shape {M.shape}")
    return G * M


def apply_doppler(G, D) -> np.ndarray:
    return _hadamard(G, D)


def remove_doppler(G_mobile, E) -> np.ndarray:
    return _hadamard(G_mobile, E)
