"""NMSE metrics and the comparison predictors: nearest stored sample,
a one-layer LSTM sequence predictor and a per-entry autoregressive model."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import nn_core as nn
from .nn_core import DenseLayer, LstmCellParams, Tape, Tensor
from .scgnet import pack, unpack
from .seeding import substream

REPORT_HEADER = ("method", "density", "speed", "seq_len", "sample_id", "nmse")


# ---------------------------------------------------------------- metrics

def nmse_samples(pred, truth) -> np.ndarray:
    """Per-sample sum|y - y_hat|^2 / sum|y|^2 over the trailing two axes."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    axes = (-2, -1) if truth.ndim >= 2 else (-1,)
    den = np.sum(np.abs(truth) ** 2, axis=axes)
    if np.any(den == 0):
        raise ValueError("truth has zero norm")
    return np.sum(np.abs(truth - pred) ** 2, axis=axes) / den


def nmse(pred, truth) -> float:
    """Mean of the per-sample NMSE ratios (a single matrix gives its own ratio)."""
    return float(np.mean(nmse_samples(pred, truth)))


@dataclass
class NmseReport:
    method: str
    samples: np.ndarray
    density: float | None = None
    speed: float | None = None
    seq_len: int | None = None
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if np.any(self.samples < 0):
            raise ValueError("NMSE samples must be >= 0")

    @property
    def mean(self) -> float:
        return float(np.mean(self.samples))

    @property
    def fingerprint(self) -> dict:
        return {"method": self.method, "density": self.density, "speed": self.speed,
                "seq_len": self.seq_len, "seed": self.seed}


def _cell(v) -> str:
    return "" if v is None else repr(v) if isinstance(v, float) else str(v)


def write_report_csv(path, reports: Sequence[NmseReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for r in reports:
            for k, v in enumerate(r.samples):
                w.writerow([r.method, _cell(r.density), _cell(r.speed), _cell(r.seq_len), k, repr(float(v))])


def read_report_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------- nearest stored sample

def nn_db_baseline(db, target_pos) -> np.ndarray:
    if len(db) == 0:
        raise ValueError("empty database")
    return db.channels[db.nearest(target_pos)].copy()


# ---------------------------------------------------------------- autoregressive

def ar_baseline(sequence, order: int, rcond: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """One-step AR(order) extrapolation fitted per entry by least squares.

    ``sequence`` is complex [L, ...]; returns (prediction, singular mask).  Entries
    with rank-deficient normal equations use the minimum-norm fit, which still
    extrapolates exactly whatever recurrence the data pins down; entries with no
    usable history at all (all-zero normal matrix) repeat the last value.
    """
    x = np.asarray(sequence, dtype=np.complex128)
    L = x.shape[0]
    if order < 1:
        raise ValueError("order must be >= 1")
    if L < order + 1:
        raise ValueError(f"sequence length {L} < order + 1 = {order + 1}")
    flat = x.reshape(L, -1).T  # [E, L]
    # rows t = order..L-1: x_t = sum_k a_k x_{t-k}
    A = np.stack([flat[:, order - k:L - k] for k in range(1, order + 1)], axis=-1)  # [E, M, p]
    y = flat[:, order:]  # [E, M]
    AhA = np.einsum("emi,emj->eij", A.conj(), A)
    Ahy = np.einsum("emi,em->ei", A.conj(), y)
    sv = np.linalg.svd(AhA, compute_uv=False)
    singular = sv[:, -1] <= rcond * np.maximum(sv[:, 0], np.finfo(float).tiny)
    empty = sv[:, 0] <= np.finfo(float).tiny
    a = (np.linalg.pinv(AhA, rcond=rcond, hermitian=True) @ Ahy[..., None])[..., 0]  # [E, p]
    recent = flat[:, ::-1][:, :order]  # x_{L-1}, x_{L-2}, ...
    pred = np.where(empty, flat[:, -1], np.sum(a * recent, axis=1))
    return pred.reshape(x.shape[1:]), singular.reshape(x.shape[1:])


# ---------------------------------------------------------------- LSTM sequence predictor

@dataclass(frozen=True)
class LstmBaselineConfig:
    n_antennas: int = 64
    n_subcarriers: int = 64
    hidden: int = 384

    @property
    def n_io(self) -> int:
        return 2 * self.n_antennas * self.n_subcarriers

    def param_shapes(self):
        return nn.lstm_shapes(self.n_io, self.hidden) + nn.mlp_shapes([self.hidden, self.n_io])

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LstmBaselineParams:
    config: LstmBaselineConfig
    cell: LstmCellParams
    head: DenseLayer
    input_scale: float = 1.0

    @property
    def params(self) -> list[Tensor]:
        return self.cell.params + self.head.params


def init_lstm_baseline(config: LstmBaselineConfig, rng: np.random.Generator) -> LstmBaselineParams:
    return LstmBaselineParams(
        config=config,
        cell=nn.init_lstm_cell(rng, config.n_io, config.hidden, name="lstm"),
        head=nn.init_dense(rng, config.hidden, config.n_io, activation="identity", name="head"),
    )


def _lstm_forward(params: LstmBaselineParams, seqs: np.ndarray, tape: Tape | None) -> Tensor:
    """Scaled packed prediction for a batch of sequences [B, L, N_t, N_c]."""
    cfg = params.config
    if seqs.shape[2:] != (cfg.n_antennas, cfg.n_subcarriers):
        raise ValueError(f"sequence dims {seqs.shape[2:]} do not match the predictor config")
    B = seqs.shape[0]
    h = c = Tensor(np.zeros((B, cfg.hidden)))
    for k in range(seqs.shape[1]):
        h, c = nn.lstm_step(params.cell, Tensor(pack(seqs[:, k]) * params.input_scale), h, c, tape)
    return nn.linear(h, params.head, tape)


def lstm_baseline_predict(params: LstmBaselineParams, seqs) -> np.ndarray:
    seqs = np.asarray(seqs, dtype=np.complex128)
    out = _lstm_forward(params, seqs, None).data / params.input_scale
    return unpack(out, params.config.n_antennas, params.config.n_subcarriers)


@dataclass(frozen=True)
class LstmTrainConfig:
    steps: int = 2000
    batch_size: int = 32
    lr: float = 1e-3
    clip_norm: float = 5.0
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def sequence_windows(channels: np.ndarray, seq_len: int) -> np.ndarray:
    """All windows of seq_len + 1 consecutive samples from [n, L, N_t, N_c] trajectories."""
    n, L = channels.shape[:2]
    if L < seq_len + 1:
        raise ValueError(f"trajectories of length {L} are too short for seq_len={seq_len}")
    return np.concatenate([channels[:, a:a + seq_len + 1] for a in range(L - seq_len)])


def lstm_baseline_train(params: LstmBaselineParams, windows: np.ndarray, train: LstmTrainConfig,
                        log: Callable[[int, float], None] | None = None) -> tuple[LstmBaselineParams, list[float]]:
    """MSE between the predicted and the true last sample of each window [N, L+1, N_t, N_c]."""
    windows = np.asarray(windows, dtype=np.complex128)
    rms = float(np.sqrt(np.mean(np.abs(windows) ** 2)))
    params.input_scale = 1.0 / rms if rms > 0 else 1.0
    opt = nn.Adam(params.params, lr=train.lr, clip_norm=train.clip_norm)
    rng = substream(train.seed, "batching")
    trace: list[float] = []
    perm = np.empty(0, dtype=np.int64)
    for step in range(train.steps):
        if len(perm) < min(train.batch_size, len(windows)):
            perm = np.concatenate([perm, rng.permutation(len(windows))])
        idx, perm = perm[:train.batch_size], perm[train.batch_size:]
        batch = windows[idx]
        opt.zero_grad()
        tape = Tape()
        try:
            out = _lstm_forward(params, batch[:, :-1], tape)
            loss = nn.mse(out, pack(batch[:, -1]) * params.input_scale, tape)
            tape.backward(loss)
        except FloatingPointError as exc:
            raise RuntimeError(f"LSTM baseline training diverged at step {step}: {exc}") from exc
        opt.step()
        trace.append(float(loss.data))
        if log is not None:
            log(step, trace[-1])
    return params, trace


def save_lstm_baseline(params: LstmBaselineParams, path) -> None:
    nn.save_checkpoint(path, "lstm_baseline", params.config.to_dict(), params.params,
                       {"input_scale": params.input_scale})


def load_lstm_baseline(path) -> LstmBaselineParams:
    header, arrays = nn.load_checkpoint(path)
    if header["kind"] != "lstm_baseline":
        raise ValueError(f"{path}: checkpoint holds a {header['kind']!r}, not an LSTM baseline")
    params = init_lstm_baseline(LstmBaselineConfig(**header["config"]), np.random.default_rng(0))
    for p, a in zip(params.params, arrays, strict=True):
        if p.shape != a.shape:
            raise ValueError(f"{path}: parameter {p.name} has shape {a.shape}, expected {p.shape}")
        p.data = a
    params.input_scale = header["extra"]["input_scale"]
    return params
