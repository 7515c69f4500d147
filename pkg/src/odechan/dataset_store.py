"""Historical static-channel database, trajectories and their binary files.

File layouts (all little-endian):

``.socdb``   magic ``SOCDB1`` | u32 header length | JSON header |
             u64 N | positions f8[N,3] | G.real f8[N,Nt,Nc] | G.imag f8[N,Nt,Nc]
``.soctrj``  magic ``SOCTRJ`` | u32 header length | JSON header |
             u64 n | u64 L | times f8[L] | speeds f8[n] | directions f8[n] |
             positions f8[n,L,3] | H.real f8[n,L,Nt,Nc] | H.imag f8[n,L,Nt,Nc]
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .angular_delay import forward_values
from .channel_oracle import (ScattererScene, UeState, compute_paths, mobile_cfr, static_cfr,
                             wrap_angle)
from .seeding import substream

DB_MAGIC = b"SOCDB1"
TRJ_MAGIC = b"SOCTRJ"


def static_channels(scene: ScattererScene, positions: np.ndarray) -> np.ndarray:
    """Angular-delay channels [N, Nt, Nc] at each position."""
    H = np.stack([static_cfr(compute_paths(scene, p), scene).values for p in positions])
    return forward_values(H)


@dataclass
class StaticSampleDb:
    header: dict
    positions: np.ndarray  # [N, 3]
    channels: np.ndarray  # complex [N, Nt, Nc], angular-delay domain
    _tree: cKDTree | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.channels = np.asarray(self.channels, dtype=np.complex128)
        if self.channels.shape[0] != len(self.positions):
            raise ValueError("one channel per position required")
        dims = (self.header.get("n_antennas"), self.header.get("n_subcarriers"))
        if len(self.channels) and self.channels.shape[1:] != dims:
            raise ValueError(f"channel dims {self.channels.shape[1:]} disagree with header {dims}")

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def dims(self) -> tuple[int, int]:
        return self.header["n_antennas"], self.header["n_subcarriers"]

    @property
    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.positions)
        return self._tree

    def neighbors(self, pos, k: int, exclude: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """k nearest records ordered by (distance, index)."""
        n = len(self)
        want = k + (exclude is not None)
        if want > n:
            raise ValueError(f"need {want} records, database holds {n}")
        pos = np.asarray(pos, dtype=np.float64)
        probe = min(n, want + 8)
        while True:
            _, idx = self.tree.query(pos, k=probe)
            idx = np.atleast_1d(idx)
            dist = np.linalg.norm(self.positions[idx] - pos, axis=1)
            order = np.lexsort((idx, dist))
            idx, dist = idx[order], dist[order]
            # the tie group at the cut must be complete before trusting the order
            if probe == n or dist[-1] > dist[want - 1]:
                break
            probe = min(n, 2 * probe)
        keep = idx != exclude if exclude is not None else np.ones(len(idx), bool)
        return idx[keep][:k], dist[keep][:k]

    def nearest(self, pos) -> int:
        if len(self) == 0:
            raise ValueError("empty database")
        idx, _ = self.neighbors(pos, 1)
        return int(idx[0])


def sample_static_db(scene: ScattererScene, density: float, seed: int) -> StaticSampleDb:
    """floor(density * area) uniform random positions over the UE area."""
    if density <= 0:
        raise ValueError("density must be > 0")
    if scene.area <= 0:
        raise ValueError("scene UE area is zero")
    n = int(np.floor(density * scene.area + 1e-9))
    rng = substream(seed, "sampling")
    xmin, xmax, ymin, ymax = scene.ue_area
    xy = rng.uniform(size=(n, 2)) * [xmax - xmin, ymax - ymin] + [xmin, ymin]
    positions = np.column_stack([xy, np.full(n, scene.ue_height)])
    header = {
        "n_antennas": scene.n_antennas,
        "n_subcarriers": scene.n_subcarriers,
        "center_frequency": scene.center_frequency,
        "bandwidth": scene.bandwidth,
        "scene_hash": scene.fingerprint(),
        "seed": int(seed),
        "density": float(density),
        "subcarrier_layout": "centered-descending",
    }
    return StaticSampleDb(header, positions, static_channels(scene, positions))


def _write_blob(fh, magic: bytes, header: dict) -> None:
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    fh.write(magic)
    fh.write(struct.pack("<I", len(blob)))
    fh.write(blob)


def _read_header(raw: bytes, magic: bytes, path) -> tuple[dict, int]:
    if raw[:len(magic)] != magic:
        raise ValueError(f"{path}: bad magic, expected {magic!r}")
    (n,) = struct.unpack_from("<I", raw, len(magic))
    start = len(magic) + 4
    return json.loads(raw[start:start + n].decode()), start + n


def _f8(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


class _Reader:
    def __init__(self, raw: bytes, offset: int):
        self.raw, self.offset = raw, offset

    def u64(self) -> int:
        (v,) = struct.unpack_from("<Q", self.raw, self.offset)
        self.offset += 8
        return v

    def f8(self, shape) -> np.ndarray:
        count = int(np.prod(shape))
        a = np.frombuffer(self.raw, dtype="<f8", count=count, offset=self.offset)
        self.offset += 8 * count
        return a.astype(np.float64).reshape(shape)


def write_db(db: StaticSampleDb, path) -> None:
    with open(path, "wb") as fh:
        _write_blob(fh, DB_MAGIC, db.header)
        fh.write(struct.pack("<Q", len(db)))
        fh.write(_f8(db.positions))
        fh.write(_f8(db.channels.real))
        fh.write(_f8(db.channels.imag))


def read_db(path) -> StaticSampleDb:
    raw = Path(path).read_bytes()
    header, offset = _read_header(raw, DB_MAGIC, path)
    r = _Reader(raw, offset)
    n = r.u64()
    nt, nc = header["n_antennas"], header["n_subcarriers"]
    positions = r.f8((n, 3))
    re = r.f8((n, nt, nc))
    im = r.f8((n, nt, nc))
    if r.offset != len(raw):
        raise ValueError(f"{path}: trailing bytes")
    return StaticSampleDb(header, positions, re + 1j * im)


# ---------------------------------------------------------------- trajectories

@dataclass
class TrajectoryDataset:
    header: dict
    times: np.ndarray  # [L]
    speeds: np.ndarray  # [n]
    directions: np.ndarray  # [n]
    positions: np.ndarray  # [n, L, 3]
    channels: np.ndarray  # complex [n, L, Nt, Nc], mobile CFR (antenna-frequency)

    def __len__(self) -> int:
        return len(self.speeds)

    @property
    def length(self) -> int:
        return len(self.times)

    def velocity(self, k: int) -> np.ndarray:
        th = self.directions[k]
        return self.speeds[k] * np.array([np.cos(th), np.sin(th), 0.0])

    def angular_delay(self) -> np.ndarray:
        return forward_values(self.channels)


def generate_trajectories(scene: ScattererScene, n: int, length: int, interval_s: float,
                          speed_range: tuple[float, float], seed: int,
                          max_retries: int = 1000, stream: str = "trajectories") -> TrajectoryDataset:
    """Uniform linear motion, x(t) = x0 + v t with t = k * interval_s.

    ``stream`` names the random substream, so train and test sets drawn from the
    same seed stay independent.
    """
    if length < 1 or interval_s <= 0:
        raise ValueError("length must be >= 1 and interval_s > 0")
    rng = substream(seed, stream)
    times = np.arange(length) * interval_s
    xmin, xmax, ymin, ymax = scene.ue_area
    speeds = np.empty(n)
    dirs = np.empty(n)
    pos = np.empty((n, length, 3))
    chans = np.empty((n, length, scene.n_antennas, scene.n_subcarriers), dtype=np.complex128)
    for k in range(n):
        for _ in range(max_retries):
            x0 = np.array([rng.uniform(xmin, xmax), rng.uniform(ymin, ymax), scene.ue_height])
            th = float(wrap_angle(rng.uniform(-np.pi, np.pi)))
            v = rng.uniform(*speed_range)
            track = x0 + np.outer(times, v * np.array([np.cos(th), np.sin(th), 0.0]))
            if all(scene.contains(p) for p in (track[0], track[-1])):
                break
        else:
            raise RuntimeError(f"could not fit trajectory {k} inside the UE area after {max_retries} draws")
        speeds[k], dirs[k], pos[k] = v, th, track
        for j, p in enumerate(track):
            chans[k, j] = mobile_cfr(compute_paths(scene, p), UeState(p, v, th), scene).values
    header = {
        "n_antennas": scene.n_antennas,
        "n_subcarriers": scene.n_subcarriers,
        "center_frequency": scene.center_frequency,
        "bandwidth": scene.bandwidth,
        "scene_hash": scene.fingerprint(),
        "seed": int(seed),
        "interval_s": float(interval_s),
        "speed_range": [float(s) for s in speed_range],
        "stream": stream,
    }
    return TrajectoryDataset(header, times, speeds, dirs, pos, chans)


def write_trajectories(ds: TrajectoryDataset, path) -> None:
    with open(path, "wb") as fh:
        _write_blob(fh, TRJ_MAGIC, ds.header)
        fh.write(struct.pack("<QQ", len(ds), ds.length))
        for a in (ds.times, ds.speeds, ds.directions, ds.positions, ds.channels.real, ds.channels.imag):
            fh.write(_f8(a))


def read_trajectories(path) -> TrajectoryDataset:
    raw = Path(path).read_bytes()
    header, offset = _read_header(raw, TRJ_MAGIC, path)
    r = _Reader(raw, offset)
    n, L = r.u64(), r.u64()
    nt, nc = header["n_antennas"], header["n_subcarriers"]
    times = r.f8((L,))
    speeds = r.f8((n,))
    dirs = r.f8((n,))
    pos = r.f8((n, L, 3))
    re = r.f8((n, L, nt, nc))
    im = r.f8((n, L, nt, nc))
    if r.offset != len(raw):
        raise ValueError(f"{path}: trailing bytes")
    return TrajectoryDataset(header, times, speeds, dirs, pos, re + 1j * im)
