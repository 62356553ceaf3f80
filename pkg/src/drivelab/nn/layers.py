"""Network building blocks: dense layers, attention, pooling, encoders.

Weight matrices use uniform fan-in initialization from an explicit seeded
generator. Encoder blocks are pre-norm: x + sublayer(layernorm(x)), with a
final normalization after the stack.
"""

from __future__ import annotations

import numpy as np

from .tensor import (
    Tensor,
    add,
    as_tensor,
    concat,
    constant,
    dropout,
    fully_masked_rows,
    masked_max,
    masked_softmax,
    matmul,
    mean,
    mul,
    parameter,
    power,
    relu,
    reshape,
    take_rows,
    tensor_sum,
    transpose,
)


class Module:
    """Minimal container: tracks parameters and the train/eval flag."""

    def _children(self):
        for name, attr in vars(self).items():
            if isinstance(attr, (Module, Tensor)):
                yield name, attr
            elif isinstance(attr, (list, tuple)):
                for i, item in enumerate(attr):
                    if isinstance(item, (Module, Tensor)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> dict:
        out = {}
        for name, child in self._children():
            full = f"{prefix}{name}"
            if isinstance(child, Tensor):
                if child.requires_grad:
                    out[full] = child
            else:
                out.update(child.named_parameters(prefix=f"{full}."))
        return out

    def parameters(self) -> list:
        return list(self.named_parameters().values())

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def set_training(self, flag: bool):
        for _, child in self._children():
            if isinstance(child, Module):
                child.set_training(flag)
        self.training = flag
        return self

    training: bool = False


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    scale = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-scale, scale, size=shape)


class Dense(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        self.weight = parameter(uniform_init(rng, in_dim, (in_dim, out_dim)))
        self.bias = parameter(np.zeros(out_dim)) if bias else None

    def __call__(self, x) -> Tensor:
        out = matmul(as_tensor(x), self.weight)
        return add(out, self.bias) if self.bias is not None else out


class MLP(Module):
    """Dense stack with rectified-linear activations between layers."""

    def __init__(self, sizes, rng: np.random.Generator):
        if len(sizes) < 2:
            raise ValueError("MLP needs at least input and output sizes")
        self.layers = [Dense(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]

    def __call__(self, x) -> Tensor:
        h = as_tensor(x)
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i + 1 < len(self.layers):
                h = relu(h)
        return h


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = parameter(np.ones(dim))
        self.beta = parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x) -> Tensor:
        x = as_tensor(x)
        mu = mean(x, axis=-1, keepdims=True)
        centered = add(x, mul(mu, -1.0))
        var = mean(mul(centered, centered), axis=-1, keepdims=True)
        inv = power(add(var, constant(self.eps)), -0.5)
        return add(mul(mul(centered, inv), self.gamma), self.beta)


def attention_encode(q, k, v, key_mask=None, causal: bool = False):
    """Scaled dot-product attention on already-projected q, k, v.

    Shapes: (..., Nq, d) for q and (..., Nk, d) for k and v; `key_mask` is a
    boolean (..., Nk) array marking rows that may be attended to. A causal
    mask additionally forbids queries from seeing later positions. Returns
    (features, flags) where flags marks query rows with no valid keys at
    all; those rows come out as exact zeros.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    d = q.shape[-1]
    scores = mul(matmul(q, transpose(k, (*range(k.value.ndim - 2), k.value.ndim - 1, k.value.ndim - 2))), 1.0 / np.sqrt(d))
    nq, nk = scores.shape[-2], scores.shape[-1]
    mask = np.ones(scores.shape, dtype=bool)
    if key_mask is not None:
        key_mask = np.asarray(key_mask, dtype=bool)
        mask = mask & np.broadcast_to(key_mask[..., None, :], scores.shape)
    if causal:
        tri = np.tril(np.ones((nq, nk), dtype=bool))
        mask = mask & tri
    weights = masked_softmax(scores, mask, axis=-1)
    flags = fully_masked_rows(mask, axis=-1)
    return matmul(weights, v), flags, weights


def maxpool_aggregate(features, member_mask) -> Tensor:
    """Elementwise max over group members: (G, V, D) + (G, V) -> (G, D).

    The subgradient routes to the argmax member. An empty group is an error.
    """
    features = as_tensor(features)
    mask = np.asarray(member_mask, dtype=bool)
    return masked_max(features, mask[..., None], axis=-2)


class MultiHeadAttention(Module):
    def __init__(self, dim: int, heads: int, dropout_rate: float, rng: np.random.Generator):
        if dim % heads != 0:
            raise ValueError("head count must divide the feature size")
        self.heads = heads
        self.dim = dim
        self.dropout_rate = dropout_rate
        self.wq = Dense(dim, dim, rng)
        self.wk = Dense(dim, dim, rng)
        self.wv = Dense(dim, dim, rng)
        self.wo = Dense(dim, dim, rng)

    def _split(self, x: Tensor, batch: int, n: int) -> Tensor:
        dh = self.dim // self.heads
        return transpose(reshape(x, (batch, n, self.heads, dh)), (0, 2, 1, 3))

    def __call__(self, x_q, x_kv, key_mask=None, causal: bool = False, rng=None) -> Tensor:
        x_q, x_kv = as_tensor(x_q), as_tensor(x_kv)
        b, nq, _ = x_q.shape
        nk = x_kv.shape[1]
        q = self._split(self.wq(x_q), b, nq)
        k = self._split(self.wk(x_kv), b, nk)
        v = self._split(self.wv(x_kv), b, nk)
        km = None if key_mask is None else np.asarray(key_mask, dtype=bool)[:, None, :]
        out, _, weights = attention_encode(q, k, v, key_mask=km, causal=causal)
        if self.training and self.dropout_rate > 0.0:
            # dropout on attention weights, recombined with values
            weights = dropout(weights, self.dropout_rate, rng, self.training)
            out = matmul(weights, v)
        out = reshape(transpose(out, (0, 2, 1, 3)), (b, nq, self.dim))
        return self.wo(out)


class FeedForward(Module):
    def __init__(self, dim: int, rng: np.random.Generator, expansion: int = 2):
        self.inner = Dense(dim, expansion * dim, rng)
        self.outer = Dense(expansion * dim, dim, rng)

    def __call__(self, x) -> Tensor:
        return self.outer(relu(self.inner(x)))


class TransformerEncoderLayer(Module):
    """Pre-norm block: attention and feed-forward sublayers with residuals."""

    def __init__(self, dim: int, heads: int, dropout_rate: float, rng: np.random.Generator):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, dropout_rate, rng)
        self.norm2 = LayerNorm(dim)
        self.ff = FeedForward(dim, rng)
        self.dropout_rate = dropout_rate

    def __call__(self, x, key_mask=None, causal: bool = False, rng=None) -> Tensor:
        h = self.norm1(x)
        x = add(x, dropout(self.attn(h, h, key_mask=key_mask, causal=causal, rng=rng), self.dropout_rate, rng, self.training))
        x = add(x, dropout(self.ff(self.norm2(x)), self.dropout_rate, rng, self.training))
        return x


class TransformerEncoder(Module):
    def __init__(self, dim: int, heads: int, n_layers: int, dropout_rate: float, rng: np.random.Generator):
        self.blocks = [TransformerEncoderLayer(dim, heads, dropout_rate, rng) for _ in range(n_layers)]
        self.final_norm = LayerNorm(dim)

    def __call__(self, x, key_mask=None, causal: bool = False, rng=None) -> Tensor:
        h = as_tensor(x)
        for block in self.blocks:
            h = block(h, key_mask=key_mask, causal=causal, rng=rng)
        return self.final_norm(h)


class Embedding(Module):
    def __init__(self, count: int, dim: int, rng: np.random.Generator):
        self.table = parameter(uniform_init(rng, dim, (count, dim)))

    def __call__(self, idx) -> Tensor:
        return take_rows(self.table, np.asarray(idx, dtype=np.intp))
