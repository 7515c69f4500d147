"""Antenna-frequency <-> angular-delay transforms and their grids."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .channel_oracle import ChannelMatrix


@dataclass
class AngularDelayChannel:
    values: np.ndarray  # complex [N_t, N_c]
    angle_grid: np.ndarray
    delay_grid: np.ndarray
    bandwidth: float

    @property
    def real(self) -> np.ndarray:
        return self.values.real

    @property
    def imag(self) -> np.ndarray:
        return self.values.imag

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def angle_shift(n_antennas: int) -> int:
    return (n_antennas - 1) // 2


@lru_cache(maxsize=32)
def dft_matrices(n_antennas: int, n_subcarriers: int) -> tuple[np.ndarray, np.ndarray]:
    """Unitary (V, F).

    V[k, z] = exp(-j 2 pi k (z - floor((N_t - 1) / 2)) / N_t) / sqrt(N_t), so that
    row z of V^H H peaks at the grid angle of :func:`grid_angle`.
    F[l, q] = exp(-j 2 pi l q / N_c) / sqrt(N_c).
    """
    if n_antennas < 1 or n_subcarriers < 1:
        raise ValueError("dimensions must be >= 1")
    k = np.arange(n_antennas)[:, None]
    z = np.arange(n_antennas)[None, :]
    V = np.exp(-2j * np.pi * k * (z - angle_shift(n_antennas)) / n_antennas) / np.sqrt(n_antennas)
    l = np.arange(n_subcarriers)[:, None]
    q = np.arange(n_subcarriers)[None, :]
    F = np.exp(-2j * np.pi * l * q / n_subcarriers) / np.sqrt(n_subcarriers)
    V.setflags(write=False)
    F.setflags(write=False)
    return V, F


def _values(x) -> np.ndarray:
    return np.asarray(x.values if hasattr(x, "values") else x)


def forward_values(H: np.ndarray) -> np.ndarray:
    """V^H H F for one matrix or a stack [..., N_t, N_c]."""
    V, F = dft_matrices(H.shape[-2], H.shape[-1])
    return V.conj().T @ H @ F


def inverse_values(G: np.ndarray) -> np.ndarray:
    V, F = dft_matrices(G.shape[-2], G.shape[-1])
    return V @ G @ F.conj().T


def angle_grid(n_antennas: int) -> np.ndarray:
    arg = 2.0 / n_antennas * (np.arange(n_antennas) - angle_shift(n_antennas))
    return np.arccos(np.clip(arg, -1.0, 1.0))


def delay_grid(n_subcarriers: int, bandwidth: float) -> np.ndarray:
    return np.arange(n_subcarriers) / bandwidth


def grid_angle(z: int, n_antennas: int) -> float:
    if not 0 <= z < n_antennas:
        raise IndexError(f"angle index {z} outside [0, {n_antennas})")
    return float(angle_grid(n_antennas)[z])


def grid_delay(q: int, bandwidth: float, n_subcarriers: int | None = None) -> float:
    if q < 0 or (n_subcarriers is not None and q >= n_subcarriers):
        raise IndexError(f"delay index {q} outside [0, {n_subcarriers})")
    return q / bandwidth


def to_angular_delay(H, bandwidth: float, dims: tuple[int, int] | None = None) -> AngularDelayChannel:
    values = _values(H)
    if values.ndim != 2:
        raise ValueError("expected a single N_t x N_c matrix")
    if dims is not None and values.shape != tuple(dims):
        raise ValueError(f"channel shape {values.shape} does not match configured {dims}")
    n_t, n_c = values.shape
    return AngularDelayChannel(forward_values(values), angle_grid(n_t), delay_grid(n_c, bandwidth), bandwidth)


def from_angular_delay(G, dims: tuple[int, int] | None = None) -> ChannelMatrix:
    values = _values(G)
    if values.ndim != 2:
        raise ValueError("expected a single N_t x N_c matrix")
    if dims is not None and values.shape != tuple(dims):
        raise ValueError(f"channel shape {values.shape} does not match configured {dims}")
    return ChannelMatrix(inverse_values(values))
