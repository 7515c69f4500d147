"""Channel-to-position LSTM and iterative Doppler elimination with a
least-squares uniform-motion fit over a measured channel sequence."""
from __future__ import annotations

import csv
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import nn_core as nn
from .angular_delay import forward_values
from .doppler import DopplerConfig, elimination_matrix, remove_doppler, velocity_polar
from .nn_core import DenseLayer, LstmCellParams, Tape, Tensor
from .seeding import substream

INPUT_MODES = ("column_per_cell", "full_matrix_per_cell")


@dataclass(frozen=True)
class PositionerConfig:
    n_antennas: int = 64
    n_subcarriers: int = 64
    hidden: tuple[int, int] = (256, 128)
    input_mode: str = "column_per_cell"

    def __post_init__(self):
        if self.input_mode not in INPUT_MODES:
            raise ValueError(f"input_mode must be one of {INPUT_MODES}")
        if len(self.hidden) != 2:
            raise ValueError("two LSTM layers expected")

    @property
    def step_input(self) -> int:
        n = 2 * self.n_antennas
        return n if self.input_mode == "column_per_cell" else n * self.n_subcarriers

    def param_shapes(self):
        h1, h2 = self.hidden
        return (nn.lstm_shapes(self.step_input, h1) + nn.lstm_shapes(h1, h2)
                + nn.mlp_shapes([h2, 3]))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PositionerConfig":
        d = dict(d)
        d["hidden"] = tuple(d["hidden"])
        return cls(**d)


@dataclass
class PositionerParams:
    config: PositionerConfig
    lstm1: LstmCellParams
    lstm2: LstmCellParams
    head: DenseLayer
    input_scale: float = 1.0
    out_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    out_scale: np.ndarray = field(default_factory=lambda: np.ones(3))

    @property
    def params(self) -> list[Tensor]:
        return self.lstm1.params + self.lstm2.params + self.head.params


def init_positioner(config: PositionerConfig, rng: np.random.Generator) -> PositionerParams:
    h1, h2 = config.hidden
    return PositionerParams(
        config=config,
        lstm1=nn.init_lstm_cell(rng, config.step_input, h1, name="lstm1"),
        lstm2=nn.init_lstm_cell(rng, h1, h2, name="lstm2"),
        head=nn.init_dense(rng, h2, 3, activation="identity", name="head"),
    )


def cell_inputs(G: np.ndarray, input_mode: str) -> list[np.ndarray]:
    """Per-cell inputs for a batch [B, N_t, N_c]: one interleaved re/im column per
    subcarrier, or the whole packed matrix as a single step."""
    B = G.shape[0]
    parts = np.stack([G.real, G.imag], axis=-1)  # [B, N_t, N_c, 2]
    if input_mode == "full_matrix_per_cell":
        return [parts.reshape(B, -1)]
    return [parts[:, :, q, :].reshape(B, -1) for q in range(G.shape[2])]


def _forward_normalized(params: PositionerParams, G: np.ndarray, tape: Tape | None) -> Tensor:
    cfg = params.config
    if G.shape[1:] != (cfg.n_antennas, cfg.n_subcarriers):
        raise ValueError(f"channel shape {G.shape[1:]} does not match positioner dims")
    B = G.shape[0]
    h1 = c1 = Tensor(np.zeros((B, cfg.hidden[0])))
    h2 = c2 = Tensor(np.zeros((B, cfg.hidden[1])))
    for x in cell_inputs(G, cfg.input_mode):
        h1, c1 = nn.lstm_step(params.lstm1, Tensor(x * params.input_scale), h1, c1, tape)
        h2, c2 = nn.lstm_step(params.lstm2, h1, h2, c2, tape)
    return nn.linear(h2, params.head, tape)


def positioner_forward_batch(params: PositionerParams, G) -> np.ndarray:
    G = np.asarray(G, dtype=np.complex128)
    out = _forward_normalized(params, G, None).data
    return out * params.out_scale + params.out_offset


def positioner_forward(params: PositionerParams, G) -> np.ndarray:
    G = np.asarray(G.values if hasattr(G, "values") else G, dtype=np.complex128)
    return positioner_forward_batch(params, G[None])[0]


# ---------------------------------------------------------------- training

@dataclass(frozen=True)
class PositionerTrainConfig:
    steps: int = 3000
    batch_size: int = 64
    lr: float = 1e-3
    clip_norm: float = 5.0
    val_fraction: float = 0.2
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PositionerReport:
    train_index: np.ndarray
    val_index: np.ndarray
    loss_trace: list[float]
    val_errors: np.ndarray  # Euclidean errors on the held-out split, meters

    @property
    def val_median(self) -> float:
        return float(np.median(self.val_errors)) if len(self.val_errors) else float("nan")


def split_indices(n: int, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = substream(seed, "split").permutation(n)
    n_val = int(np.floor(val_fraction * n))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def fit_normalization(params: PositionerParams, G: np.ndarray, pos: np.ndarray) -> None:
    rms = float(np.sqrt(np.mean(np.abs(G) ** 2)))
    params.input_scale = 1.0 / rms if rms > 0 else 1.0
    params.out_offset = pos.mean(axis=0)
    std = pos.std(axis=0)
    params.out_scale = np.where(std > 0, std, 1.0)


def train_positioner(db, params: PositionerParams, train: PositionerTrainConfig,
                     opt: nn.Adam | None = None, normalize: bool = True,
                     log: Callable[[int, float], None] | None = None) -> tuple[PositionerParams, PositionerReport]:
    """Adam on the position MSE (in normalized coordinates) over an 80/20 split of ``db``."""
    tr, va = split_indices(len(db), train.val_fraction, train.seed)
    if len(tr) == 0:
        raise ValueError("empty training split")
    G_tr, P_tr = db.channels[tr], db.positions[tr]
    if normalize:
        fit_normalization(params, G_tr, P_tr)
    target = (P_tr - params.out_offset) / params.out_scale
    if opt is None:
        opt = nn.Adam(params.params, lr=train.lr, clip_norm=train.clip_norm)
    rng = substream(train.seed, "batching")
    trace: list[float] = []
    perm = np.empty(0, dtype=np.int64)
    for step in range(train.steps):
        if len(perm) < min(train.batch_size, len(tr)):
            perm = np.concatenate([perm, rng.permutation(len(tr))])
        idx, perm = perm[:train.batch_size], perm[train.batch_size:]
        opt.zero_grad()
        tape = Tape()
        try:
            out = _forward_normalized(params, G_tr[idx], tape)
            loss = nn.mse(out, target[idx], tape)
            tape.backward(loss)
        except FloatingPointError as exc:
            raise RuntimeError(f"positioner training diverged at step {step}: {exc}") from exc
        opt.step()
        trace.append(float(loss.data))
        if log is not None:
            log(step, trace[-1])
    errors = np.empty(0)
    if len(va):
        errors = np.linalg.norm(positioner_forward_batch(params, db.channels[va]) - db.positions[va], axis=1)
    return params, PositionerReport(tr, va, trace, errors)


def save_positioner(params: PositionerParams, path) -> None:
    nn.save_checkpoint(path, "positioner", params.config.to_dict(), params.params, {
        "input_scale": params.input_scale,
        "out_offset": [float(v) for v in params.out_offset],
        "out_scale": [float(v) for v in params.out_scale],
    })


def load_positioner(path) -> PositionerParams:
    header, arrays = nn.load_checkpoint(path)
    if header["kind"] != "positioner":
        raise ValueError(f"{path}: checkpoint holds a {header['kind']!r}, not a positioner")
    params = init_positioner(PositionerConfig.from_dict(header["config"]), np.random.default_rng(0))
    for p, a in zip(params.params, arrays, strict=True):
        if p.shape != a.shape:
            raise ValueError(f"{path}: parameter {p.name} has shape {a.shape}, expected {p.shape}")
        p.data = a
    extra = header["extra"]
    params.input_scale = extra["input_scale"]
    params.out_offset = np.array(extra["out_offset"])
    params.out_scale = np.array(extra["out_scale"])
    return params


# ---------------------------------------------------------------- motion fit

@dataclass
class LinearFit:
    v: np.ndarray  # m/s
    sigma: np.ndarray  # intercept, meters

    def at(self, t: float) -> np.ndarray:
        return self.v * t + self.sigma


def least_squares_velocity(positions, times) -> LinearFit:
    """Ordinary least squares x = v t + sigma, per coordinate."""
    X = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    t = np.asarray(times, dtype=np.float64)
    if len(t) != len(X):
        raise ValueError("one time per position required")
    if len(t) < 2 or np.ptp(t) == 0:
        raise ValueError("need at least two distinct times")
    tc = t - t.mean()
    v = tc @ (X - X.mean(axis=0)) / (tc @ tc)
    return LinearFit(v, X.mean(axis=0) - v * t.mean())


@dataclass(frozen=True)
class IterationConfig:
    eta: float = 0.1
    max_iterations: int = 20

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class IterationResult:
    position: np.ndarray  # extrapolated to t_next
    velocity: np.ndarray
    fit: LinearFit
    t_next: float
    iterations: int  # refinement iterations after the initial fit
    converged: bool
    delta_v: list[float]  # |v^i - v^{i-1}| per refinement
    positions: list[np.ndarray]  # per-sample positions of every iterate, [n, 3] each
    fits: list[LinearFit]


def iterate_position(params: PositionerParams, channel_seq: Sequence, times, cfg: IterationConfig,
                     doppler_cfg: DopplerConfig, t_next: float | None = None) -> IterationResult:
    """Position every sample, fit uniform motion, eliminate Doppler with the fitted
    velocity and repeat until the velocity settles; channels are antenna-frequency."""
    H = np.stack([np.asarray(h.values if hasattr(h, "values") else h) for h in channel_seq])
    t = np.asarray(times, dtype=np.float64)
    if len(H) < 2:
        raise ValueError("sequence length must be >= 2")
    if len(t) != len(H) or np.any(np.diff(t) <= 0):
        raise ValueError("times must be strictly increasing, one per channel")
    if t_next is None:
        t_next = t[-1] + (t[-1] - t[0]) / (len(t) - 1)

    G = forward_values(H)
    X = positioner_forward_batch(params, G)
    fit = least_squares_velocity(X, t)
    positions, fits, deltas = [X], [fit], []
    converged = False
    while len(deltas) < cfg.max_iterations:
        E = elimination_matrix(*velocity_polar(fit.v), doppler_cfg)
        G = remove_doppler(G, E)
        X = positioner_forward_batch(params, G)
        new = least_squares_velocity(X, t)
        deltas.append(float(np.linalg.norm(new.v - fit.v)))
        fit = new
        positions.append(X)
        fits.append(fit)
        if deltas[-1] < cfg.eta:
            converged = True
            break
    if not converged:
        warnings.warn(f"velocity did not settle within {cfg.max_iterations} iterations "
                      f"(last |dv| = {deltas[-1]:.3g} m/s)", RuntimeWarning, stacklevel=2)
    return IterationResult(fit.at(t_next), fit.v, fit, float(t_next), len(deltas), converged,
                           deltas, positions, fits)


def write_iteration_csv(path, result: IterationResult, truth=None) -> None:
    """iteration, |dv|, mean per-sample position error (blank without ground truth)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "delta_v", "position_error"])
        for i, X in enumerate(result.positions):
            dv = "" if i == 0 else repr(result.delta_v[i - 1])
            err = "" if truth is None else repr(float(np.mean(np.linalg.norm(X - truth, axis=1))))
            w.writerow([i, dv, err])
