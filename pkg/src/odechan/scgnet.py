"""Spatial channel gradient network.

Two MLPs feed a fixed Hadamard combination layer:

* the scattering net maps the (scaled) angular-delay channel to two
  coefficient maps ``C1`` (the -1/d role) and ``C2`` (the phase-rate role),
* the direction net maps the (sin, cos) embedding of the motion bearing to
  a per-bin map ``Dm`` (the d(length)/dm role).

``C2`` is the second scattering-net channel multiplied by ``rate_gain * rho`` with
``rho = -2 pi / lambda_c`` so that the net only has to produce O(1) values.

With ``output_activation="tanh"`` both nets end in tanh: ``Dm`` stays in
(-1, 1) like the direction cosine it stands for, and the phase rate of every
bin is bounded by ``rate_gain * 2 pi / lambda_c``.  That keeps the rotation
inside the stability region of the fixed-step solvers; unbounded outputs let
rates of weakly constrained (low-energy) bins drift until RK4 diverges.

Channels are packed as float vectors of length ``2 * N_t * N_c`` with real
and imaginary parts interleaved per entry, i.e. ``G.reshape(N_t, N_c, 2)``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import nn_core as nn
from .nn_core import DenseLayer, Tape, Tensor

COMBINE_MODES = ("corrected_analytic", "paper_literal")


@dataclass(frozen=True)
class ScgnetConfig:
    n_antennas: int = 64
    n_subcarriers: int = 64
    scattering_hidden: tuple[int, ...] = (256, 768, 512, 256)
    direction_hidden: tuple[int, ...] = (512, 256)
    combine_mode: str = "corrected_analytic"
    output_activation: str = "tanh"
    rate_gain: float = 2.0

    def __post_init__(self):
        if self.combine_mode not in COMBINE_MODES:
            raise ValueError(f"combine_mode must be one of {COMBINE_MODES}")
        if self.output_activation not in ("tanh", "identity"):
            raise ValueError("output_activation must be tanh or identity")
        if not self.rate_gain > 0:
            raise ValueError("rate_gain must be > 0")

    @property
    def n_bins(self) -> int:
        return self.n_antennas * self.n_subcarriers

    @property
    def scattering_sizes(self) -> list[int]:
        return [2 * self.n_bins, *self.scattering_hidden, 2 * self.n_bins]

    @property
    def direction_sizes(self) -> list[int]:
        return [2 * self.n_antennas, *self.direction_hidden, self.n_bins]

    def param_shapes(self):
        return nn.mlp_shapes(self.scattering_sizes) + nn.mlp_shapes(self.direction_sizes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scattering_hidden"] = list(self.scattering_hidden)
        d["direction_hidden"] = list(self.direction_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScgnetConfig":
        d = dict(d)
        d["scattering_hidden"] = tuple(d["scattering_hidden"])
        d["direction_hidden"] = tuple(d["direction_hidden"])
        return cls(**d)


@dataclass
class ScgnetParams:
    config: ScgnetConfig
    scattering: list[DenseLayer]
    direction: list[DenseLayer]
    rho: float
    input_scale: float = 1.0

    def __post_init__(self):
        if not self.rho < 0:
            raise ValueError("rho must be negative")
        if not self.input_scale > 0:
            raise ValueError("input_scale must be positive")

    @property
    def combine_mode(self) -> str:
        return self.config.combine_mode

    @property
    def params(self) -> list[Tensor]:
        return [p for layer in self.scattering + self.direction for p in layer.params]


def init_scgnet(config: ScgnetConfig, rng: np.random.Generator, wavelength: float,
                input_scale: float = 1.0, zero_field: bool = True) -> ScgnetParams:
    """Glorot init; with ``zero_field`` the last direction layer starts at zero, so
    the untrained field vanishes and prediction starts from the nearest sample."""
    act = config.output_activation
    params = ScgnetParams(
        config=config,
        scattering=nn.init_mlp(rng, config.scattering_sizes, name="scattering", out_activation=act),
        direction=nn.init_mlp(rng, config.direction_sizes, name="direction", out_activation=act),
        rho=-2 * np.pi / wavelength,
        input_scale=input_scale,
    )
    if zero_field:
        params.direction[-1].weight.data[:] = 0.0
        params.direction[-1].bias.data[:] = 0.0
    return params


def pack(G) -> np.ndarray:
    """complex [..., N_t, N_c] -> float [..., 2 N_t N_c] (interleaved re/im)."""
    G = np.asarray(G)
    return np.stack([G.real, G.imag], axis=-1).reshape(*G.shape[:-2], -1)


def unpack(y: np.ndarray, n_antennas: int, n_subcarriers: int) -> np.ndarray:
    y = np.asarray(y).reshape(*np.shape(y)[:-1], n_antennas, n_subcarriers, 2)
    return y[..., 0] + 1j * y[..., 1]


def direction_embedding(theta_m, n_antennas: int) -> np.ndarray:
    """[sin, cos, sin, cos, ...] repeated n_antennas times; batched over theta."""
    theta = np.asarray(theta_m, dtype=np.float64)
    pair = np.stack([np.sin(theta), np.cos(theta)], axis=-1)
    return np.tile(pair, n_antennas)


def combine(C1: Tensor, C2: Tensor, Gr: Tensor, Gi: Tensor, Dm: Tensor, mode: str,
            tape: Tape | None = None) -> tuple[Tensor, Tensor]:
    """The fixed combination layer; returns (d Re G / dm, d Im G / dm)."""
    a = nn.mul(C1, Gr, tape)
    b = nn.mul(C2, Gi, tape)
    if mode == "corrected_analytic":
        re = nn.sub(a, b, tape)
        im = nn.add(nn.mul(C2, Gr, tape), nn.mul(C1, Gi, tape), tape)
    elif mode == "paper_literal":
        re = nn.add(a, b, tape)
        im = nn.sub(a, b, tape)
    else:
        raise ValueError(f"unknown combine mode {mode!r}")
    return nn.mul(re, Dm, tape), nn.mul(im, Dm, tape)


def direction_map(params: ScgnetParams, theta_m, tape: Tape | None = None) -> Tensor:
    """Dm for a batch of bearings, shape [B, N_t N_c]."""
    emb = direction_embedding(np.atleast_1d(theta_m), params.config.n_antennas)
    return nn.mlp(Tensor(emb), params.direction, tape)


def field(params: ScgnetParams, y: Tensor, Dm: Tensor, tape: Tape | None = None) -> Tensor:
    """dG/dm for packed channels ``y`` [B, 2 N_t N_c] given a precomputed direction map."""
    if y.data.ndim != 2 or y.shape[1] != 2 * params.config.n_bins:
        raise ValueError(f"packed channel shape {y.shape} does not match config dims")
    coeff = nn.mlp(nn.scale(y, params.input_scale, tape), params.scattering, tape)
    C1, P2 = nn.split_channels(coeff, 2, tape)
    C2 = nn.scale(P2, params.rho * params.config.rate_gain, tape)
    Gr, Gi = nn.split_channels(y, 2, tape)
    re, im = combine(C1, C2, Gr, Gi, Dm, params.combine_mode, tape)
    return nn.interleave([re, im], tape)


def scgnet_forward(params: ScgnetParams, G, theta_m: float) -> np.ndarray:
    """Spatial gradient of one angular-delay channel (complex [N_t, N_c])."""
    values = np.asarray(G.values if hasattr(G, "values") else G)
    cfg = params.config
    if values.shape != (cfg.n_antennas, cfg.n_subcarriers):
        raise ValueError(f"channel shape {values.shape} does not match config dims")
    Dm = direction_map(params, theta_m)
    out = field(params, Tensor(pack(values)[None, :]), Dm)
    return unpack(out.data[0], cfg.n_antennas, cfg.n_subcarriers)


def scgnet_gradients(params: ScgnetParams, G, theta_m: float, upstream) -> list[np.ndarray]:
    """Parameter gradients of <upstream, scgnet_forward(G, theta_m)>.

    ``upstream`` is complex [N_t, N_c] (real part pairs with d Re, imaginary with d Im).
    """
    values = np.asarray(G.values if hasattr(G, "values") else G)
    for p in params.params:
        p.zero_grad()
    tape = Tape()
    Dm = direction_map(params, theta_m, tape)
    out = field(params, Tensor(pack(values)[None, :]), Dm, tape)
    tape.backward(out, pack(np.asarray(upstream))[None, :])
    return [np.zeros_like(p.data) if p.grad is None else p.grad for p in params.params]


def save_scgnet(params: ScgnetParams, path) -> None:
    nn.save_checkpoint(path, "scgnet", params.config.to_dict(), params.params,
                       {"rho": params.rho, "input_scale": params.input_scale})


def load_scgnet(path) -> ScgnetParams:
    header, arrays = nn.load_checkpoint(path)
    if header["kind"] != "scgnet":
        raise ValueError(f"{path}: checkpoint holds a {header['kind']!r}, not an scgnet")
    config = ScgnetConfig.from_dict(header["config"])
    params = init_scgnet(config, np.random.default_rng(0), 1.0,
                         input_scale=header["extra"]["input_scale"])
    params.rho = header["extra"]["rho"]
    for p, a in zip(params.params, arrays, strict=True):
        if p.shape != a.shape:
            raise ValueError(f"{path}: parameter {p.name} has shape {a.shape}, expected {p.shape}")
        p.data = a
    return params
