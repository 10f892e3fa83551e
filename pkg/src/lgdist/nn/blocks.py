"""Differentiable building blocks: dense layers, attention, layer norm,
adaptive layer-norm conditioning, positional encodings, dropout.

Initialization is truncated normal (std 0.02) for projections and zeros for
biases and conditioning gates; every conditioned block is therefore exactly
the identity map at initialization.
"""

from __future__ import annotations

import numpy as np

from lgdist.errors import ShapeError
from lgdist.nn import tensor as T
from lgdist.nn.tensor import Tensor
from lgdist.rng import truncated_normal

INIT_STD = 0.02
LAYER_NORM_EPS = 1e-5


class Parameter(Tensor):
    def __init__(self, data: np.ndarray, name: str):
        super().__init__(data, requires_grad=True, name=name)


class Module:
    """Lightweight container; parameters are discovered by attribute walk."""

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        for value in vars(self).values():
            if isinstance(value, Parameter):
                out.append(value)
            elif isinstance(value, Module):
                out.extend(value.parameters())
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        out.extend(item.parameters())
                    elif isinstance(item, Parameter):
                        out.append(item)
        return out

    def named_parameters(self) -> list[tuple[str, Parameter]]:
        return [(p.name, p) for p in self.parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


class Dense(Module):
    def __init__(self, in_dim, out_dim, rng, name, zero_init=False, dtype=np.float32):
        if zero_init:
            w = np.zeros((in_dim, out_dim), dtype=dtype)
        else:
            w = truncated_normal(rng, (in_dim, out_dim), INIT_STD, dtype=dtype)
        self.weight = Parameter(w, f"{name}.weight")
        self.bias = Parameter(np.zeros(out_dim, dtype=dtype), f"{name}.bias")

    def __call__(self, x):
        return T.add(T.matmul(x, self.weight), self.bias)


class LayerNorm(Module):
    """Last-axis layer normalization, optionally with learned gain/bias."""

    def __init__(self, dim, name, affine=True, dtype=np.float32):
        self.affine = affine
        if affine:
            self.gain = Parameter(np.ones(dim, dtype=dtype), f"{name}.gain")
            self.bias = Parameter(np.zeros(dim, dtype=dtype), f"{name}.bias")

    def __call__(self, x):
        y = T.normalize(x, eps=LAYER_NORM_EPS)
        if self.affine:
            y = T.add(T.mul(y, self.gain), self.bias)
        return y


def dropout(x, p: float, rng: np.random.Generator | None):
    """Inverted dropout; pass rng=None for eval mode (identity)."""
    if rng is None or p <= 0.0:
        return x
    x = T.lift(x)
    keep = (rng.random(x.shape) >= p).astype(x.dtype.type) / x.dtype.type(1.0 - p)
    return T.mul(x, Tensor(keep))


class SelfAttention(Module):
    """Multi-head scaled dot-product self-attention over (B, T, width) tokens."""

    def __init__(self, width, heads, rng, name, dtype=np.float32):
        if width % heads != 0:
            raise ShapeError(f"heads ({heads}) must divide width ({width})")
        self.width = width
        self.heads = heads
        self.qkv = Dense(width, 3 * width, rng, f"{name}.qkv", dtype=dtype)
        self.proj = Dense(width, width, rng, f"{name}.proj", dtype=dtype)

    def __call__(self, x):
        b, t, w = x.shape
        if w != self.width:
            raise ShapeError(f"token width {w} != attention width {self.width}")
        h = self.heads
        dk = w // h
        qkv = self.qkv(x)  # (B, T, 3w)
        qkv = T.reshape(qkv, (b, t, 3, h, dk))
        qkv = T.transpose(qkv, (2, 0, 3, 1, 4))  # (3, B, h, T, dk)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / float(np.sqrt(dk)))
        att = T.softmax(scores, axis=-1)  # (B, h, T, T)
        mixed = T.matmul(att, v)  # (B, h, T, dk)
        mixed = T.reshape(T.transpose(mixed, (0, 2, 1, 3)), (b, t, w))
        return self.proj(mixed)


class MlpBlock(Module):
    def __init__(self, width, rng, name, hidden_mult=4, activation="gelu", out_dim=None, dtype=np.float32):
        hidden = width * hidden_mult
        self.activation = activation
        self.fc1 = Dense(width, hidden, rng, f"{name}.fc1", dtype=dtype)
        self.fc2 = Dense(hidden, out_dim if out_dim is not None else width, rng, f"{name}.fc2", dtype=dtype)

    def __call__(self, x, drop_p=0.0, rng=None):
        h = self.fc1(x)
        h = T.gelu(h) if self.activation == "gelu" else T.tanh(h)
        h = dropout(h, drop_p, rng)
        return self.fc2(h)


class TransformerLayer(Module):
    """Pre-norm residual block: x + attn(ln(x)), then x + mlp(ln(x))."""

    def __init__(self, width, heads, rng, name, activation="tanh", dtype=np.float32):
        self.ln1 = LayerNorm(width, f"{name}.ln1", dtype=dtype)
        self.attn = SelfAttention(width, heads, rng, f"{name}.attn", dtype=dtype)
        self.ln2 = LayerNorm(width, f"{name}.ln2", dtype=dtype)
        self.mlp = MlpBlock(width, rng, f"{name}.mlp", activation=activation, dtype=dtype)

    def __call__(self, x, drop_p=0.0, rng=None):
        x = T.add(x, dropout(self.attn(self.ln1(x)), drop_p, rng))
        x = T.add(x, dropout(self.mlp(self.ln2(x), drop_p, rng), drop_p, rng))
        return x


class DiTBlock(Module):
    """Pre-norm transformer block modulated by a condition vector (adaLN-Zero).

    The modulation projection is zero-initialized, so scale, shift, and both
    residual gates start at zero and the block is the identity map.
    """

    def __init__(self, width, cond_dim, heads, rng, name, dtype=np.float32):
        self.width = width
        self.mod = Dense(cond_dim, 6 * width, rng, f"{name}.mod", zero_init=True, dtype=dtype)
        self.ln1 = LayerNorm(width, f"{name}.ln1", affine=False, dtype=dtype)
        self.attn = SelfAttention(width, heads, rng, f"{name}.attn", dtype=dtype)
        self.ln2 = LayerNorm(width, f"{name}.ln2", affine=False, dtype=dtype)
        self.mlp = MlpBlock(width, rng, f"{name}.mlp", activation="gelu", dtype=dtype)

    def __call__(self, x, cond, drop_p=0.0, rng=None):
        # cond: (B, cond_dim) -> six (B, 1, width) modulation vectors
        m = self.mod(T.silu(cond))
        b = m.shape[0]
        m = T.reshape(m, (b, 1, 6, self.width))
        shift1, scale1, gate1 = m[:, :, 0], m[:, :, 1], m[:, :, 2]
        shift2, scale2, gate2 = m[:, :, 3], m[:, :, 4], m[:, :, 5]
        h = T.add(T.mul(self.ln1(x), T.add(scale1, 1.0)), shift1)
        x = T.add(x, T.mul(gate1, dropout(self.attn(h), drop_p, rng)))
        h = T.add(T.mul(self.ln2(x), T.add(scale2, 1.0)), shift2)
        x = T.add(x, T.mul(gate2, dropout(self.mlp(h, drop_p, rng), drop_p, rng)))
        return x


class AdaLnFinal(Module):
    """Condition-modulated final norm plus zero-initialized output head."""

    def __init__(self, width, cond_dim, out_dim, rng, name, dtype=np.float32):
        self.width = width
        self.mod = Dense(cond_dim, 2 * width, rng, f"{name}.mod", zero_init=True, dtype=dtype)
        self.ln = LayerNorm(width, f"{name}.ln", affine=False, dtype=dtype)
        self.head = Dense(width, out_dim, rng, f"{name}.head", zero_init=True, dtype=dtype)

    def __call__(self, x, cond):
        m = self.mod(T.silu(cond))
        b = m.shape[0]
        m = T.reshape(m, (b, 1, 2, self.width))
        shift, scale = m[:, :, 0], m[:, :, 1]
        y = T.add(T.mul(self.ln(x), T.add(scale, 1.0)), shift)
        return self.head(y)


# ---------------------------------------------------------------------------
# positional and timestep encodings (constants, not parameters)
# ---------------------------------------------------------------------------


def sincos_1d(positions: np.ndarray, dim: int, dtype=np.float32) -> np.ndarray:
    """[sin(p*w_0)..sin(p*w_{k-1}), cos(p*w_0)..cos(p*w_{k-1})], w_i = 10000^(-2i/dim)."""
    if dim % 2 != 0:
        raise ShapeError(f"encoding dim must be even, got {dim}")
    pos = np.asarray(positions, dtype=np.float64)
    k = dim // 2
    freqs = 10000.0 ** (-2.0 * np.arange(k) / dim)
    args = pos[..., None] * freqs
    return np.concatenate([np.sin(args), np.cos(args)], axis=-1).astype(dtype)


def sincos_2d(rows: np.ndarray, cols: np.ndarray, dim: int, dtype=np.float32) -> np.ndarray:
    """First half encodes the row coordinate, second half the column."""
    if dim % 4 != 0:
        raise ShapeError(f"2D encoding dim must be divisible by 4, got {dim}")
    half = dim // 2
    return np.concatenate(
        [sincos_1d(rows, half, dtype=dtype), sincos_1d(cols, half, dtype=dtype)], axis=-1
    )


def sincos_2d_positional_encoding(row: int, col: int, dim: int) -> np.ndarray:
    """Single-coordinate convenience wrapper around sincos_2d."""
    return sincos_2d(np.asarray([row]), np.asarray([col]), dim)[0]
