"""Fixed-step ODE integration along a straight displacement, SCGnet training
by backpropagation through the unrolled solver, and static prediction from
the nearest stored sample."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, replace
from typing import Callable, Sequence

import numpy as np

from . import nn_core as nn
from .dataset_store import StaticSampleDb
from .nn_core import Tape, Tensor
from .scgnet import ScgnetParams, direction_map, field, pack, unpack
from .seeding import substream

SOLVERS = ("euler", "rk4")


class StepBudgetExceeded(RuntimeError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class OdeConfig:
    solver: str = "rk4"
    step: float | None = None  # meters; None resolves to wavelength / 10
    max_steps: int = 1000

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}")
        if self.step is not None and not self.step > 0:
            raise ValueError("step must be > 0")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")

    def resolved(self, wavelength: float) -> "OdeConfig":
        return self if self.step is not None else replace(self, step=wavelength / 10.0)

    @property
    def max_length(self) -> float:
        return self.max_steps * self.step


@dataclass
class TrainingPair:
    source_index: int
    target_index: int
    source_position: np.ndarray
    target_position: np.ndarray
    theta: float
    length: float


# ---------------------------------------------------------------- schedules

def step_schedule(s: float, step: float, max_steps: int) -> np.ndarray:
    """Full steps of ``step`` then one partial step covering s mod step."""
    if s < 0 or not np.isfinite(s):
        raise ValueError(f"integration length must be finite and >= 0, got {s}")
    ratio = s / step
    n_full = round(ratio)
    if abs(ratio - n_full) > 1e-9 * max(1.0, ratio):
        n_full = math.floor(ratio)
    rem = s - n_full * step
    steps = [step] * n_full + ([rem] if rem > 1e-12 * step else [])
    if len(steps) > max_steps:
        raise StepBudgetExceeded(f"length {s:.6g} m needs {len(steps)} steps > max_steps={max_steps}")
    return np.array(steps, dtype=np.float64)


def batch_schedule(lengths: Sequence[float], step: float, max_steps: int) -> np.ndarray:
    """[n_steps, B] step sizes; shorter paths are padded with zero-length (no-op) steps."""
    rows = [step_schedule(float(s), step, max_steps) for s in lengths]
    n = max((len(r) for r in rows), default=0)
    hs = np.zeros((n, len(rows)))
    for j, r in enumerate(rows):
        hs[:len(r), j] = r
    return hs


# ---------------------------------------------------------------- integrators

def ode_solve(field_fn: Callable, y0, theta: float, s: float, cfg: OdeConfig):
    """Integrate y' = field_fn(y, theta) over length s; works on any numpy array."""
    if cfg.step is None:
        raise ValueError("OdeConfig.step is unresolved")
    y = np.array(y0, copy=True)
    for h in step_schedule(s, cfg.step, cfg.max_steps):
        if cfg.solver == "euler":
            y = y + h * field_fn(y, theta)
        else:
            k1 = field_fn(y, theta)
            k2 = field_fn(y + 0.5 * h * k1, theta)
            k3 = field_fn(y + 0.5 * h * k2, theta)
            k4 = field_fn(y + h * k3, theta)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise FloatingPointError("non-finite ODE state")
    return y


def integrate(f: Callable[[Tensor], Tensor], y: Tensor, hs: np.ndarray, solver: str,
              tape: Tape | None = None) -> Tensor:
    """Batched fixed-step integration on Tensors; ``hs`` is [n_steps, B]."""
    for h in hs:
        h = h[:, None]
        if solver == "euler":
            y = nn.add(y, nn.scale(f(y), h, tape), tape)
        elif solver == "rk4":
            k1 = f(y)
            k2 = f(nn.add(y, nn.scale(k1, 0.5 * h, tape), tape))
            k3 = f(nn.add(y, nn.scale(k2, 0.5 * h, tape), tape))
            k4 = f(nn.add(y, nn.scale(k3, h, tape), tape))
            acc = nn.add(nn.add(k1, nn.scale(k2, 2.0, tape), tape),
                         nn.add(nn.scale(k3, 2.0, tape), k4, tape), tape)
            y = nn.add(y, nn.scale(acc, h / 6.0, tape), tape)
        else:
            raise ValueError(f"unknown solver {solver!r}")
    return y


def scgnet_field(params: ScgnetParams) -> Callable:
    """Adapter turning SCGnet into a numpy field (G, theta) -> dG/dm for :func:`ode_solve`."""
    cfg = params.config

    def f(G, theta):
        Dm = direction_map(params, theta)
        out = field(params, Tensor(pack(G)[None, :]), Dm)
        return unpack(out.data[0], cfg.n_antennas, cfg.n_subcarriers)
    return f


def solve_batch(params: ScgnetParams, G0: np.ndarray, thetas, lengths, cfg: OdeConfig,
                tape: Tape | None = None) -> Tensor:
    """Integrate a batch of complex channels [B, N_t, N_c]; returns the packed end states."""
    hs = batch_schedule(lengths, cfg.step, cfg.max_steps)
    y0 = Tensor(pack(G0))
    if len(hs) == 0:
        return y0
    Dm = direction_map(params, np.asarray(thetas, dtype=np.float64), tape)
    return integrate(lambda y: field(params, y, Dm, tape), y0, hs, cfg.solver, tape)


# ---------------------------------------------------------------- training

def planar_bearing(src, dst) -> float:
    d = np.asarray(dst, dtype=np.float64) - np.asarray(src, dtype=np.float64)
    return float(np.arctan2(d[1], d[0]))


def build_training_pairs(db: StaticSampleDb, z: int) -> list[TrainingPair]:
    if z < 1:
        raise ValueError("z must be >= 1")
    if len(db) <= z:
        raise ValueError(f"database holds {len(db)} samples, need more than z={z}")
    pairs = []
    for i, p in enumerate(db.positions):
        idx, dist = db.neighbors(p, z, exclude=i)
        for j, d in zip(idx, dist):
            q = db.positions[j]
            pairs.append(TrainingPair(i, int(j), p, q, planar_bearing(p, q), float(d)))
    return pairs


@dataclass(frozen=True)
class ScgnetTrainConfig:
    steps: int = 2000
    batch_size: int = 20
    z: int = 4
    lr: float = 1e-3
    lr_final: float | None = None  # cosine decay from lr to lr_final when set
    clip_norm: float | None = 1.0
    seed: int = 0
    # pair-length curriculum: the admissible pair length grows linearly from
    # curriculum_start (meters) to the longest pair over curriculum_steps
    curriculum_start: float | None = None
    curriculum_steps: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def lr_at(self, step: int) -> float:
        if self.lr_final is None:
            return self.lr
        frac = step / max(1, self.steps - 1)
        return self.lr_final + 0.5 * (self.lr - self.lr_final) * (1 + math.cos(math.pi * frac))

    def max_length(self, step: int, longest: float) -> float:
        if self.curriculum_start is None or step >= self.curriculum_steps:
            return longest
        frac = step / max(1, self.curriculum_steps)
        return self.curriculum_start + (longest - self.curriculum_start) * frac


def pair_loss(params: ScgnetParams, db: StaticSampleDb, pairs: Sequence[TrainingPair],
              cfg: OdeConfig, tape: Tape | None = None) -> Tensor:
    src = db.channels[[p.source_index for p in pairs]]
    tgt = db.channels[[p.target_index for p in pairs]]
    y = solve_batch(params, src, [p.theta for p in pairs], [p.length for p in pairs], cfg, tape)
    return nn.mse(y, pack(tgt), tape)


def batch_order(lengths: Sequence[float], train: ScgnetTrainConfig) -> list[np.ndarray]:
    """Minibatch pair indices per step, drawn from the "batching" substream.

    Without a curriculum this is epoch-wise shuffling; with one, each batch is
    drawn without replacement among the pairs admissible at that step.
    """
    rng = substream(train.seed, "batching")
    lengths = np.asarray(lengths, dtype=np.float64)
    order = np.argsort(lengths, kind="stable")
    sorted_len = lengths[order]
    out, perm = [], np.empty(0, dtype=np.int64)
    for step in range(train.steps):
        n_ok = int(np.searchsorted(sorted_len, train.max_length(step, sorted_len[-1]), side="right"))
        if n_ok < len(lengths):
            n_ok = max(n_ok, min(train.batch_size, len(lengths)))
            out.append(np.sort(order[rng.choice(n_ok, size=min(train.batch_size, n_ok), replace=False)]))
            continue
        if len(perm) < min(train.batch_size, len(lengths)):
            perm = np.concatenate([perm, rng.permutation(len(lengths))])
        out.append(perm[:train.batch_size])
        perm = perm[train.batch_size:]
    return out


def train_scgnet(db: StaticSampleDb, params: ScgnetParams, cfg: OdeConfig,
                 train: ScgnetTrainConfig, opt: nn.Adam | None = None,
                 pairs: Sequence[TrainingPair] | None = None,
                 log: Callable[[int, float], None] | None = None) -> tuple[ScgnetParams, list[float]]:
    """Adam on the integrate-then-MSE objective; returns (params, per-step loss)."""
    if pairs is None:
        pairs = build_training_pairs(db, train.z)
    if not pairs:
        raise ValueError("no training pairs")
    if opt is None:
        opt = nn.Adam(params.params, lr=train.lr, clip_norm=train.clip_norm)
    trace: list[float] = []
    for step, idx in enumerate(batch_order([p.length for p in pairs], train)):
        opt.zero_grad()
        opt.lr = train.lr_at(step)
        tape = Tape()
        try:
            loss = pair_loss(params, db, [pairs[k] for k in idx], cfg, tape)
            tape.backward(loss)
        except FloatingPointError as exc:
            raise TrainingDiverged(f"step {step}: {exc} (last loss {trace[-1] if trace else 'n/a'})") from exc
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingDiverged(f"step {step}: loss is {value}")
        opt.step()
        trace.append(value)
        if log is not None:
            log(step, value)
    return params, trace


def write_loss_trace(path, trace: Sequence[float]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "mse"])
        for k, v in enumerate(trace):
            w.writerow([k, repr(float(v))])


# ---------------------------------------------------------------- inference

def predict_static_batch(db: StaticSampleDb, params: ScgnetParams, targets, cfg: OdeConfig,
                         chunk: int = 256) -> np.ndarray:
    """Predicted angular-delay channels [T, N_t, N_c] at each target position."""
    if len(db) == 0:
        raise ValueError("empty database")
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    src = np.array([db.nearest(t) for t in targets], dtype=np.int64)
    thetas = np.array([planar_bearing(db.positions[i], t) for i, t in zip(src, targets)])
    lengths = np.linalg.norm(targets - db.positions[src], axis=1)
    nt, nc = params.config.n_antennas, params.config.n_subcarriers
    out = np.empty((len(targets), nt, nc), dtype=np.complex128)
    for a in range(0, len(targets), chunk):
        sl = slice(a, a + chunk)
        y = solve_batch(params, db.channels[src[sl]], thetas[sl], lengths[sl], cfg)
        out[sl] = unpack(y.data, nt, nc)
    return out


def predict_static(db: StaticSampleDb, params: ScgnetParams, target_pos, cfg: OdeConfig) -> np.ndarray:
    return predict_static_batch(db, params, [target_pos], cfg)[0]
