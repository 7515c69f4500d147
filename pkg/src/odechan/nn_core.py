"""Small float64 tensor/tape substrate for the networks in this package.

Only the ops the models need are implemented: fused dense layers, a fused
LSTM step, elementwise add/sub/mul/scale, channel split/interleave and MSE.
Every op takes an optional ``tape``; when given, a backward closure is
recorded and :meth:`Tape.backward` replays them in reverse.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

ACTIVATIONS = ("tanh", "identity")
CHECKPOINT_MAGIC = b"SOCNN1"


class Tensor:
    """A float64 array plus an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Records backward closures for one forward pass; single use."""

    def __init__(self):
        self._ops: list[Callable[[], None]] = []
        self._consumed = False

    def __len__(self) -> int:
        return len(self._ops)

    def record(self, backward_fn: Callable[[], None]) -> None:
        if self._consumed:
            raise RuntimeError("tape already consumed by backward()")
        self._ops.append(backward_fn)

    def backward(self, out: Tensor, grad=None) -> None:
        if self._consumed:
            raise RuntimeError("tape already consumed by backward()")
        if not self._ops:
            raise RuntimeError("backward() called before any forward op was recorded")
        if grad is None:
            grad = np.ones_like(out.data)
        out.grad = np.asarray(grad, dtype=np.float64)
        for fn in reversed(self._ops):
            fn()
        self._consumed = True


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _finite(y: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(y).all():
        raise FloatingPointError(f"non-finite values produced by {op}")
    return y


def _result(data: np.ndarray, parents: Sequence[Tensor], op: str) -> Tensor:
    return Tensor(_finite(data, op), requires_grad=any(p.requires_grad for p in parents))


# ---------------------------------------------------------------- layers

@dataclass
class DenseLayer:
    weight: Tensor  # [out, in]
    bias: Tensor  # [out]
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight.data.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError("dense layer weight/bias shapes disagree")

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    @property
    def params(self) -> list[Tensor]:
        return [self.weight, self.bias]

    @property
    def n_params(self) -> int:
        return self.out_features * self.in_features + self.out_features


@dataclass
class LstmCellParams:
    """Stacked gate weights, rows ordered input, forget, candidate, output."""

    weight: Tensor  # [4H, I+H]
    bias: Tensor  # [4H]
    input_size: int
    hidden_size: int

    def __post_init__(self):
        h, i = self.hidden_size, self.input_size
        if self.weight.shape != (4 * h, i + h) or self.bias.shape != (4 * h,):
            raise ValueError("LSTM cell parameter shapes disagree with its sizes")

    @property
    def params(self) -> list[Tensor]:
        return [self.weight, self.bias]

    @property
    def n_params(self) -> int:
        return 4 * ((self.input_size + self.hidden_size) * self.hidden_size + self.hidden_size)


def glorot_uniform(rng: np.random.Generator, n_out: int, n_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_out, n_in))


def init_dense(rng, n_in: int, n_out: int, activation: str = "tanh", name: str = "") -> DenseLayer:
    return DenseLayer(
        Tensor(glorot_uniform(rng, n_out, n_in), requires_grad=True, name=f"{name}.weight"),
        Tensor(np.zeros(n_out), requires_grad=True, name=f"{name}.bias"),
        activation,
    )


def init_mlp(rng, sizes: Sequence[int], name: str = "mlp",
             out_activation: str = "identity") -> list[DenseLayer]:
    """tanh on every hidden layer, ``out_activation`` on the last."""
    layers = []
    for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        act = out_activation if k == len(sizes) - 2 else "tanh"
        layers.append(init_dense(rng, a, b, act, name=f"{name}.{k}"))
    return layers


def init_lstm_cell(rng, input_size: int, hidden_size: int, name: str = "lstm") -> LstmCellParams:
    w = glorot_uniform(rng, 4 * hidden_size, input_size + hidden_size)
    return LstmCellParams(
        Tensor(w, requires_grad=True, name=f"{name}.weight"),
        Tensor(np.zeros(4 * hidden_size), requires_grad=True, name=f"{name}.bias"),
        input_size,
        hidden_size,
    )


# ---------------------------------------------------------------- ops

def linear(x: Tensor, layer: DenseLayer, tape: Tape | None = None) -> Tensor:
    """activation(x @ W.T + b) for a batch ``x`` of shape [B, in]."""
    x = _as_tensor(x)
    if x.data.ndim != 2 or x.shape[1] != layer.in_features:
        raise ValueError(f"dense input shape {x.shape} does not match in_features={layer.in_features}")
    W, b = layer.weight, layer.bias
    y = x.data @ W.data.T + b.data
    if layer.activation == "tanh":
        y = np.tanh(y)
    out = _result(y, (x, W, b), "linear")
    if tape is not None:
        def backward():
            g = out.grad
            if g is None:
                return
            if layer.activation == "tanh":
                g = g * (1.0 - out.data * out.data)
            _accumulate(W, g.T @ x.data)
            _accumulate(b, g.sum(axis=0))
            if x.requires_grad:
                _accumulate(x, g @ W.data)
        tape.record(backward)
    return out


def mlp(x: Tensor, layers: Sequence[DenseLayer], tape: Tape | None = None) -> Tensor:
    for layer in layers:
        x = linear(x, layer, tape)
    return x


def dense_forward(layer: DenseLayer, x, tape: Tape | None = None) -> Tensor:
    """Single-vector convenience wrapper around :func:`linear`."""
    x = _as_tensor(x)
    if x.data.ndim != 1:
        return linear(x, layer, tape)
    if x.shape[0] != layer.in_features:
        raise ValueError(f"dense input length {x.shape[0]} != {layer.in_features}")
    return _reshape(linear(_reshape(x, (1, -1), tape), layer, tape), (-1,), tape)


def _reshape(x: Tensor, shape, tape: Tape | None) -> Tensor:
    out = Tensor(x.data.reshape(shape), requires_grad=x.requires_grad)
    if tape is not None:
        def backward():
            if out.grad is not None:
                _accumulate(x, out.grad.reshape(x.shape))
        tape.record(backward)
    return out


def add(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = _result(a.data + b.data, (a, b), "add")
    if tape is not None:
        def backward():
            if out.grad is not None:
                _accumulate(a, _unbroadcast(out.grad, a.shape))
                _accumulate(b, _unbroadcast(out.grad, b.shape))
        tape.record(backward)
    return out


def sub(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = _result(a.data - b.data, (a, b), "sub")
    if tape is not None:
        def backward():
            if out.grad is not None:
                _accumulate(a, _unbroadcast(out.grad, a.shape))
                _accumulate(b, _unbroadcast(-out.grad, b.shape))
        tape.record(backward)
    return out


def mul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """Hadamard product (numpy broadcasting allowed)."""
    a, b = _as_tensor(a), _as_tensor(b)
    out = _result(a.data * b.data, (a, b), "mul")
    if tape is not None:
        def backward():
            if out.grad is not None:
                _accumulate(a, _unbroadcast(out.grad * b.data, a.shape))
                _accumulate(b, _unbroadcast(out.grad * a.data, b.shape))
        tape.record(backward)
    return out


def scale(a: Tensor, c, tape: Tape | None = None) -> Tensor:
    """Multiply by a constant (scalar or broadcastable array, never differentiated)."""
    a = _as_tensor(a)
    c = np.asarray(c, dtype=np.float64)
    out = _result(a.data * c, (a,), "scale")
    if tape is not None:
        def backward():
            if out.grad is not None:
                _accumulate(a, _unbroadcast(out.grad * c, a.shape))
        tape.record(backward)
    return out


def split_channels(x: Tensor, k: int, tape: Tape | None = None) -> list[Tensor]:
    """[B, n*k] interleaved -> k tensors of shape [B, n]."""
    x = _as_tensor(x)
    B = x.shape[0]
    view = x.data.reshape(B, -1, k)
    outs = [Tensor(view[:, :, j].copy(), requires_grad=x.requires_grad) for j in range(k)]
    if tape is not None:
        def backward():
            if all(o.grad is None for o in outs):
                return
            g = np.zeros_like(view)
            for j, o in enumerate(outs):
                if o.grad is not None:
                    g[:, :, j] = o.grad
            _accumulate(x, g.reshape(x.shape))
        tape.record(backward)
    return outs


def interleave(parts: Sequence[Tensor], tape: Tape | None = None) -> Tensor:
    """Inverse of :func:`split_channels`."""
    parts = [_as_tensor(p) for p in parts]
    stacked = np.stack([p.data for p in parts], axis=-1)
    out = _result(stacked.reshape(stacked.shape[0], -1), parts, "interleave")
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            g = out.grad.reshape(stacked.shape)
            for j, p in enumerate(parts):
                _accumulate(p, g[..., j])
        tape.record(backward)
    return out


def mse(a: Tensor, target, tape: Tape | None = None) -> Tensor:
    """Mean over every element of (a - target)**2; target is a constant."""
    a = _as_tensor(a)
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    diff = a.data - t
    out = _result(np.asarray(np.mean(diff * diff)), (a,), "mse")
    if tape is not None:
        def backward():
            if out.grad is not None:
                _accumulate(a, out.grad * (2.0 / diff.size) * diff)
        tape.record(backward)
    return out


def sum_all(a: Tensor, tape: Tape | None = None) -> Tensor:
    a = _as_tensor(a)
    out = _result(np.asarray(a.data.sum()), (a,), "sum")
    if tape is not None:
        def backward():
            if out.grad is not None:
                _accumulate(a, np.broadcast_to(out.grad, a.shape).copy())
        tape.record(backward)
    return out


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def lstm_step(cell: LstmCellParams, x: Tensor, h: Tensor, c: Tensor,
              tape: Tape | None = None) -> tuple[Tensor, Tensor]:
    """One LSTM step on a batch; returns (h', c')."""
    x, h, c = _as_tensor(x), _as_tensor(h), _as_tensor(c)
    H = cell.hidden_size
    if x.data.ndim != 2 or x.shape[1] != cell.input_size:
        raise ValueError(f"LSTM input shape {x.shape} does not match input_size={cell.input_size}")
    if h.shape != (x.shape[0], H) or c.shape != (x.shape[0], H):
        raise ValueError("LSTM state shape mismatch")
    W, b = cell.weight, cell.bias
    xh = np.concatenate([x.data, h.data], axis=1)
    z = xh @ W.data.T + b.data
    i = _sigmoid(z[:, :H])
    f = _sigmoid(z[:, H:2 * H])
    g = np.tanh(z[:, 2 * H:3 * H])
    o = _sigmoid(z[:, 3 * H:])
    c_new = f * c.data + i * g
    tc = np.tanh(c_new)
    parents = (x, h, c, W, b)
    c_out = _result(c_new, parents, "lstm_step")
    h_out = _result(o * tc, parents, "lstm_step")
    if tape is not None:
        def backward():
            dh, dc = h_out.grad, c_out.grad
            if dh is None and dc is None:
                return
            dh = np.zeros_like(tc) if dh is None else dh
            dc_tot = dh * o * (1.0 - tc * tc)
            if dc is not None:
                dc_tot = dc_tot + dc
            dz = np.concatenate([
                dc_tot * g * i * (1.0 - i),
                dc_tot * c.data * f * (1.0 - f),
                dc_tot * i * (1.0 - g * g),
                dh * tc * o * (1.0 - o),
            ], axis=1)
            _accumulate(W, dz.T @ xh)
            _accumulate(b, dz.sum(axis=0))
            dxh = dz @ W.data
            _accumulate(x, dxh[:, :cell.input_size])
            _accumulate(h, dxh[:, cell.input_size:])
            _accumulate(c, dc_tot * f)
        tape.record(backward)
    return h_out, c_out


# ---------------------------------------------------------------- optimizer

@dataclass
class Adam:
    """Adam with bias correction and optional global-norm clipping."""

    params: list[Tensor]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = None
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros_like(p.data) for p in self.params]
            self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, grads: Sequence[np.ndarray | None] | None = None) -> float:
        """Apply one update; returns the (pre-clip) global gradient norm."""
        if grads is None:
            grads = [p.grad for p in self.params]
        if len(grads) != len(self.params):
            raise ValueError("one gradient per parameter required")
        grads = [np.zeros_like(p.data) if g is None else np.asarray(g, dtype=np.float64)
                 for p, g in zip(self.params, grads)]
        for p, g in zip(self.params, grads):
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        norm = float(np.sqrt(sum(float(np.vdot(g, g)) for g in grads)))
        if self.clip_norm is not None and norm > self.clip_norm:
            grads = [g * (self.clip_norm / norm) for g in grads]
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for k, (p, g) in enumerate(zip(self.params, grads)):
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            m_hat = self.m[k] / bc1
            v_hat = self.v[k] / bc2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return norm


# ---------------------------------------------------------------- counting / io

def mlp_shapes(sizes: Sequence[int]) -> list[tuple[int, ...]]:
    shapes: list[tuple[int, ...]] = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        shapes += [(b, a), (b,)]
    return shapes


def lstm_shapes(input_size: int, hidden_size: int) -> list[tuple[int, ...]]:
    return [(4 * hidden_size, input_size + hidden_size), (4 * hidden_size,)]


def count_params(config) -> int:
    """Exact parameter total for a config exposing ``param_shapes()``, a layer, a shape tuple, or a list of these."""
    if hasattr(config, "param_shapes"):
        return int(sum(int(np.prod(s)) for s in config.param_shapes()))
    if isinstance(config, (DenseLayer, LstmCellParams)):
        return config.n_params
    if isinstance(config, Tensor):
        return config.size
    if isinstance(config, tuple) and all(isinstance(d, (int, np.integer)) for d in config):
        return int(np.prod(config))  # a bare shape
    if isinstance(config, Iterable):
        return int(sum(count_params(c) for c in config))
    raise TypeError(f"cannot count parameters of {type(config).__name__}")


def save_checkpoint(path, kind: str, config: dict, params: Sequence[Tensor], extra: dict | None = None) -> None:
    """Write magic, u32 header length, JSON header, then each parameter as raw <f8."""
    header = {
        "kind": kind,
        "config": config,
        "extra": extra or {},
        "shapes": [list(p.shape) for p in params],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for p in params:
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict, list[np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:6] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a SOCNN1 checkpoint")
    (n,) = struct.unpack_from("<I", raw, 6)
    header = json.loads(raw[10:10 + n].decode())
    offset = 10 + n
    arrays = []
    for shape in header["shapes"]:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).astype(np.float64)
        arrays.append(arr.reshape(shape))
        offset += 8 * count
    if offset != len(raw):
        raise ValueError(f"{path}: trailing bytes after parameter data")
    return header, arrays
