"""Deterministic single-bounce multipath channel generator.

A scene holds a BS with a ULA, a set of point scatterers and a rectangular
UE area.  Every UE position yields an LOS path (optional) plus one bounce
path per scatterer; the static and mobile CFRs and the exact spatial
derivative of the static CFR follow in closed form.

Conventions
-----------
* AoA ``theta`` is the angle between the array axis and the direction from
  the BS toward the point the path arrives from (the UE for LOS, the
  scatterer for a bounce path).
* Antenna phases use the center wavelength; the propagation phase uses the
  per-subcarrier wavelength.
* Subcarrier ``l`` sits at ``f_c + ((N_c - 1) / 2 - l) * B / N_c``: a grid
  centered on ``f_c`` with frequency decreasing in ``l``.  With this order
  column ``q`` of ``V^H H F`` collects delay ``q / B``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

SPEED_OF_LIGHT = 299_792_458.0
SCENE_FORMAT_VERSION = 1


def wrap_angle(a):
    """Map angles to [-pi, pi)."""
    return (np.asarray(a, dtype=np.float64) + np.pi) % (2 * np.pi) - np.pi


def direction_vector(theta_m: float) -> np.ndarray:
    """Unit planar displacement for bearing ``theta_m``."""
    return np.array([np.cos(theta_m), np.sin(theta_m), 0.0])


@dataclass
class ScattererScene:
    bs_position: np.ndarray
    array_axis: np.ndarray
    scatterer_positions: np.ndarray  # [S, 3]
    reflectivity: np.ndarray  # [S]
    n_antennas: int = 64
    n_subcarriers: int = 64
    center_frequency: float = 3.5e9
    bandwidth: float = 100e6
    include_los: bool = True
    los_reflectivity: float = 1.0
    ue_area: tuple[float, float, float, float] = (0.0, 120.0, 0.0, 60.0)  # xmin, xmax, ymin, ymax
    ue_height: float = 1.5

    def __post_init__(self):
        self.bs_position = np.asarray(self.bs_position, dtype=np.float64).reshape(3)
        axis = np.asarray(self.array_axis, dtype=np.float64).reshape(3)
        self.array_axis = axis / np.linalg.norm(axis)
        self.scatterer_positions = np.asarray(self.scatterer_positions, dtype=np.float64).reshape(-1, 3)
        self.reflectivity = np.asarray(self.reflectivity, dtype=np.float64).reshape(-1)
        self.ue_area = tuple(float(v) for v in self.ue_area)
        self.validate()

    def validate(self) -> None:
        if self.n_antennas < 2:
            raise ValueError("n_antennas must be >= 2")
        if self.n_subcarriers < 1:
            raise ValueError("n_subcarriers must be >= 1")
        if len(self.reflectivity) != len(self.scatterer_positions):
            raise ValueError("one reflectivity per scatterer required")
        if np.any(self.reflectivity <= 0):
            raise ValueError("reflectivity must be > 0")
        if not self.include_los and len(self.reflectivity) == 0:
            raise ValueError("scene without LOS needs at least one scatterer")
        if self.center_frequency <= 0 or self.bandwidth <= 0:
            raise ValueError("center_frequency and bandwidth must be > 0")
        xmin, xmax, ymin, ymax = self.ue_area
        if not (xmax >= xmin and ymax >= ymin):
            raise ValueError("ue_area must be (xmin, xmax, ymin, ymax) with max >= min")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.center_frequency

    @property
    def antenna_spacing(self) -> float:
        return self.wavelength / 2

    @property
    def subcarrier_frequencies(self) -> np.ndarray:
        df = self.bandwidth / self.n_subcarriers
        l = np.arange(self.n_subcarriers)
        return self.center_frequency + ((self.n_subcarriers - 1) / 2 - l) * df

    @property
    def subcarrier_wavelengths(self) -> np.ndarray:
        return SPEED_OF_LIGHT / self.subcarrier_frequencies

    @property
    def area(self) -> float:
        xmin, xmax, ymin, ymax = self.ue_area
        return (xmax - xmin) * (ymax - ymin)

    @property
    def n_paths(self) -> int:
        return len(self.reflectivity) + int(self.include_los)

    def contains(self, pos, tol: float = 1e-9) -> bool:
        xmin, xmax, ymin, ymax = self.ue_area
        return (xmin - tol <= pos[0] <= xmax + tol) and (ymin - tol <= pos[1] <= ymax + tol)

    def ue_position(self, x: float, y: float) -> np.ndarray:
        return np.array([x, y, self.ue_height])

    def to_dict(self) -> dict:
        return {
            "version": SCENE_FORMAT_VERSION,
            "bs_position": [float(v) for v in self.bs_position],
            "array_axis": [float(v) for v in self.array_axis],
            "n_antennas": int(self.n_antennas),
            "n_subcarriers": int(self.n_subcarriers),
            "center_frequency": float(self.center_frequency),
            "bandwidth": float(self.bandwidth),
            "include_los": bool(self.include_los),
            "los_reflectivity": float(self.los_reflectivity),
            "ue_area": [float(v) for v in self.ue_area],
            "ue_height": float(self.ue_height),
            "scatterers": [[float(a) for a in p] + [float(r)]
                           for p, r in zip(self.scatterer_positions, self.reflectivity)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScattererScene":
        version = d.get("version")
        if version != SCENE_FORMAT_VERSION:
            raise ValueError(f"unsupported scene version {version!r}")
        table = np.asarray(d.get("scatterers", []), dtype=np.float64).reshape(-1, 4)
        return cls(
            bs_position=d["bs_position"],
            array_axis=d["array_axis"],
            scatterer_positions=table[:, :3],
            reflectivity=table[:, 3],
            n_antennas=int(d["n_antennas"]),
            n_subcarriers=int(d["n_subcarriers"]),
            center_frequency=float(d["center_frequency"]),
            bandwidth=float(d["bandwidth"]),
            include_los=bool(d["include_los"]),
            los_reflectivity=float(d.get("los_reflectivity", 1.0)),
            ue_area=tuple(d["ue_area"]),
            ue_height=float(d["ue_height"]),
        )

    def to_text(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=None, width=120)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def save_scene(scene: ScattererScene, path) -> None:
    Path(path).write_text(scene.to_text())


def load_scene(path) -> ScattererScene:
    return ScattererScene.from_dict(yaml.safe_load(Path(path).read_text()))


@dataclass
class PathSet:
    aoa: np.ndarray  # radians, angle to array axis
    length: np.ndarray  # meters
    gain: np.ndarray  # xi / d
    reflectivity: np.ndarray
    sources: np.ndarray  # [P, 3] point the UE sees the path leave from (BS or scatterer)
    is_los: np.ndarray  # bool [P]

    @property
    def delay(self) -> np.ndarray:
        return self.length / SPEED_OF_LIGHT

    def __len__(self) -> int:
        return len(self.length)


@dataclass
class ChannelMatrix:
    values: np.ndarray  # complex [N_t, N_c]
    wavelengths: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def real(self) -> np.ndarray:
        return self.values.real

    @property
    def imag(self) -> np.ndarray:
        return self.values.imag

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass
class UeState:
    position: np.ndarray
    speed: float = 0.0
    direction: float = 0.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        if self.speed < 0:
            raise ValueError("speed must be >= 0")
        self.direction = float(wrap_angle(self.direction))


def _aoa(scene: ScattererScene, points: np.ndarray) -> np.ndarray:
    r = points - scene.bs_position
    n = np.linalg.norm(r, axis=-1)
    return np.arccos(np.clip(r @ scene.array_axis / n, -1.0, 1.0))


def compute_paths(scene: ScattererScene, x_u) -> PathSet:
    """LOS first (if enabled), then one bounce path per scatterer in index order."""
    x_u = np.asarray(x_u, dtype=np.float64).reshape(3)
    if not scene.contains(x_u):
        raise ValueError(f"UE position {x_u} outside the UE area {scene.ue_area}")
    to_bs = np.linalg.norm(x_u - scene.bs_position)
    if to_bs == 0:
        raise ValueError("UE coincides with the BS")
    s = scene.scatterer_positions
    leg_ue = np.linalg.norm(s - x_u, axis=1)
    if np.any(leg_ue == 0):
        raise ValueError("UE coincides with a scatterer")
    leg_bs = np.linalg.norm(s - scene.bs_position, axis=1)

    lengths, refl, sources, aoa, los = [], [], [], [], []
    if scene.include_los:
        lengths.append([to_bs])
        refl.append([scene.los_reflectivity])
        sources.append(scene.bs_position[None, :])
        aoa.append(_aoa(scene, x_u[None, :]))
        los.append([True])
    lengths.append(leg_bs + leg_ue)
    refl.append(scene.reflectivity)
    sources.append(s)
    aoa.append(_aoa(scene, s))
    los.append(np.zeros(len(s), dtype=bool))
    length = np.concatenate(lengths)
    xi = np.concatenate(refl)
    return PathSet(
        aoa=np.concatenate(aoa),
        length=length,
        gain=xi / length,
        reflectivity=xi,
        sources=np.concatenate(sources).reshape(-1, 3),
        is_los=np.concatenate(los).astype(bool),
    )


def array_response(theta, n_antennas: int, wavelength: float, spacing: float) -> np.ndarray:
    """ULA steering vector, entry k = exp(-j 2 pi k d cos(theta) / lambda)."""
    k = np.arange(n_antennas)
    return np.exp(-2j * np.pi * k * spacing * np.cos(theta) / wavelength)


def _steering(scene: ScattererScene, aoa: np.ndarray) -> np.ndarray:
    k = np.arange(scene.n_antennas)[:, None]
    return np.exp(-2j * np.pi * k * scene.antenna_spacing * np.cos(aoa)[None, :] / scene.wavelength)


def _cfr(scene: ScattererScene, paths: PathSet, extra_length: np.ndarray) -> ChannelMatrix:
    lam = scene.subcarrier_wavelengths
    A = _steering(scene, paths.aoa)  # [N_t, P]
    phase = paths.gain[:, None] * np.exp(
        -2j * np.pi * (paths.length + extra_length)[:, None] / lam[None, :])  # [P, N_c]
    return ChannelMatrix(A @ phase, lam)


def static_cfr(paths: PathSet, scene: ScattererScene) -> ChannelMatrix:
    if len(paths) == 0:
        raise ValueError("empty path set")
    return _cfr(scene, paths, np.zeros(len(paths)))


def mobile_cfr(paths: PathSet, ue: UeState, scene: ScattererScene) -> ChannelMatrix:
    """Static CFR with each path's length advanced by v cos(theta_v - theta_p) tau_p."""
    if len(paths) == 0:
        raise ValueError("empty path set")
    shift = ue.speed * np.cos(ue.direction - paths.aoa) * paths.delay
    return _cfr(scene, paths, shift)


def channel_at(scene: ScattererScene, x_u) -> ChannelMatrix:
    return static_cfr(compute_paths(scene, x_u), scene)


def analytic_spatial_gradient(scene: ScattererScene, x_u, theta_m: float) -> ChannelMatrix:
    """Exact derivative of the static CFR along the planar direction ``theta_m``.

    Per path: d(length)/dm is the projection of the motion on the unit vector
    from the path source to the UE; the gain xi/d and the propagation phase
    follow by the chain rule.  The LOS AoA also moves with the UE, so its
    steering vector contributes a term as well.
    """
    x_u = np.asarray(x_u, dtype=np.float64).reshape(3)
    paths = compute_paths(scene, x_u)
    m = direction_vector(theta_m)
    lam = scene.subcarrier_wavelengths
    d = paths.length

    r_src = x_u - paths.sources
    u = r_src / np.linalg.norm(r_src, axis=1, keepdims=True)
    dd = u @ m  # [P]

    # d cos(aoa)/dm, nonzero for LOS only
    dcos = np.zeros(len(paths))
    if np.any(paths.is_los):
        r = x_u - scene.bs_position
        n = np.linalg.norm(r)
        a = scene.array_axis
        dcos[paths.is_los] = (a @ m) / n - (a @ r) * (r @ m) / n ** 3

    A = _steering(scene, paths.aoa)  # [N_t, P]
    k = np.arange(scene.n_antennas)[:, None]
    dA = A * (-2j * np.pi * k * scene.antenna_spacing / scene.wavelength) * dcos[None, :]

    phase = paths.gain[:, None] * np.exp(-2j * np.pi * d[:, None] / lam[None, :])  # [P, N_c]
    dphase = phase * ((-1.0 / d)[:, None] - 2j * np.pi / lam[None, :]) * dd[:, None]
    return ChannelMatrix(A @ dphase + dA @ phase, lam)


# ---------------------------------------------------------------- scene builders

def random_scene(rng: np.random.Generator, n_scatterers: int, *, n_antennas: int = 64,
                 n_subcarriers: int = 64, area: tuple[float, float] = (120.0, 60.0),
                 bs_distance: float = 40.0, bs_height: float = 10.0,
                 scatterer_radius: tuple[float, float] = (15.0, 60.0),
                 center_frequency: float = 3.5e9, bandwidth: float = 100e6,
                 include_los: bool = True, ue_height: float = 1.5) -> ScattererScene:
    """BS west of the UE area with its array along y; scatterers in a ring around the area."""
    w, h = area
    cx, cy = w / 2, h / 2
    bs = np.array([-bs_distance, cy, bs_height])
    half_diag = 0.5 * np.hypot(w, h)
    r_lo, r_hi = scatterer_radius
    pts = np.empty((n_scatterers, 3))
    for k in range(n_scatterers):
        phi = rng.uniform(-np.pi, np.pi)
        rad = half_diag + rng.uniform(r_lo, r_hi)
        pts[k] = (cx + rad * np.cos(phi), cy + rad * np.sin(phi), rng.uniform(0.0, 20.0))
    refl = rng.uniform(0.3, 1.0, size=n_scatterers)
    return ScattererScene(
        bs_position=bs, array_axis=[0.0, 1.0, 0.0], scatterer_positions=pts, reflectivity=refl,
        n_antennas=n_antennas, n_subcarriers=n_subcarriers, center_frequency=center_frequency,
        bandwidth=bandwidth, include_los=include_los, ue_area=(0.0, w, 0.0, h), ue_height=ue_height,
    )


def default_scene(seed: int = 0) -> ScattererScene:
    """120 m x 60 m area, 64 antennas x 64 subcarriers, 24 scatterers + LOS = 25 paths."""
    return random_scene(np.random.default_rng(seed), 24)


def toy_scene(seed: int = 0) -> ScattererScene:
    """8 x 8 dims, 10 m x 5 m area, 6 scatterers + LOS."""
    return random_scene(np.random.default_rng(seed), 6, n_antennas=8, n_subcarriers=8,
                        area=(10.0, 5.0), bs_distance=30.0, scatterer_radius=(10.0, 40.0))
