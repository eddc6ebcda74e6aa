"""Per-node multihead cross-attention over the recurrent hidden sequence.

Tensors here are laid out B x N x T x D. Attention never mixes nodes: for
node ``n`` only ``h_seq[:, n]`` and ``m[:, n]`` are read. There is no
positional encoding.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import numerics as nx
from .numerics import Tensor

NORM_EPS = 1e-5


class UntrainedStatisticsWarning(UserWarning):
    """Evaluation-mode normalization ran before any running statistics existed."""


@dataclass
class NormContext:
    """Running-statistics plumbing for the normalization layers.

    In training mode each normalization layer writes its batch mean and
    variance into ``batch_stats``; the trainer folds them into the running
    buffers. In evaluation mode the running buffers are read.
    """

    training: bool = False
    buffers: Mapping[str, np.ndarray] | None = None
    mode: str = "batch"
    eps: float = NORM_EPS
    batch_stats: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    flagged: bool = False


def normalize(x, scale, shift, name: str, ctx: NormContext) -> Tensor:
    x = nx.as_tensor(x)
    if ctx.mode == "layer":
        mu = nx.mean(x, axis=-1, keepdims=True)
        centered = x - mu
        var = nx.mean(nx.square(centered), axis=-1, keepdims=True)
        return centered / nx.sqrt(var + ctx.eps) * scale + shift
    if ctx.mode != "batch":
        raise ValueError(f"unknown normalization mode {ctx.mode!r}")
    axes = tuple(range(x.ndim - 1))
    if ctx.training:
        mu = nx.mean(x, axis=axes)
        centered = x - mu
        var = nx.mean(nx.square(centered), axis=axes)
        ctx.batch_stats[name] = (mu.data.copy(), var.data.copy())
        return centered / nx.sqrt(var + ctx.eps) * scale + shift
    buffers = ctx.buffers or {}
    if f"{name}.mean" not in buffers or not buffers.get("norm.updates", np.zeros(1))[0] > 0:
        if not ctx.flagged:
            warnings.warn(
                "normalization evaluated without running statistics; using mean 0, var 1",
                UntrainedStatisticsWarning,
                stacklevel=2,
            )
            ctx.flagged = True
        d = x.shape[-1]
        mu, var = np.zeros(d, dtype=x.data.dtype), np.ones(d, dtype=x.data.dtype)
    else:
        mu, var = buffers[f"{name}.mean"], buffers[f"{name}.var"]
    return (x - mu) / np.sqrt(var + ctx.eps) * scale + shift


def _split_heads(x: Tensor, heads: int) -> Tensor:
    """B x N x T x D -> B x N x heads x T x d_k."""
    b, n, t, d = x.shape
    return nx.transpose(nx.reshape(x, (b, n, t, heads, d // heads)), (0, 1, 3, 2, 4))


def cross_attention(
    q_src,
    k_src,
    v_src,
    p: Mapping[str, Tensor],
    heads: int,
    output_proj: bool = True,
    return_weights: bool = False,
):
    """softmax(Q K^T / sqrt(d_k)) V per node and head; heads concatenated.

    ``p`` carries ``wq``, ``wk``, ``wv`` and, with ``output_proj``, ``wo``.
    Sources are B x N x T x D.
    """
    q_src, k_src, v_src = nx.as_tensor(q_src), nx.as_tensor(k_src), nx.as_tensor(v_src)
    d = q_src.shape[-1]
    if d % heads:
        raise ValueError(f"hidden size {d} not divisible by {heads} heads")
    dk = d // heads
    q = _split_heads(q_src @ p["wq"], heads)
    k = _split_heads(k_src @ p["wk"], heads)
    v = _split_heads(v_src @ p["wv"], heads)
    logits = (q @ nx.transpose(k, (0, 1, 2, 4, 3))) * (1.0 / np.sqrt(dk))
    weights = nx.softmax(logits, axis=-1)  # B x N x heads x T x T
    out = nx.transpose(weights @ v, (0, 1, 3, 2, 4))
    b, n, t = out.shape[:3]
    out = nx.reshape(out, (b, n, t, d))
    if output_proj:
        out = out @ p["wo"]
    return (out, weights) if return_weights else out


def feedforward(x, p: Mapping[str, Tensor]) -> Tensor:
    return nx.relu(x @ p["ff1.W"] + p["ff1.b"]) @ p["ff2.W"] + p["ff2.b"]


def ffn_residual_norm(attended, value_input, p: Mapping[str, Tensor], ctx: NormContext, prefix: str) -> Tensor:
    r1 = normalize(nx.add(attended, value_input), p["norm1.scale"], p["norm1.shift"], f"{prefix}.norm1", ctx)
    return normalize(r1 + feedforward(r1, p), p["norm2.scale"], p["norm2.shift"], f"{prefix}.norm2", ctx)


# which stream feeds (query, key, value) in the first layer
SOURCES = {
    "full": ("h", "h", "m"),
    "no_nmpl": ("h", "h", "h"),
    "query": ("m", "h", "h"),
    "key": ("h", "m", "h"),
}


def nawg_stack(
    h_seq,
    m,
    layers: list[Mapping[str, Tensor]],
    heads: int,
    ctx: NormContext,
    variant: str = "full",
    output_proj: bool = True,
    prefix: str = "nawg",
) -> Tensor:
    """Stack of cross-attention + feedforward blocks.

    Query/key sources stay fixed across layers; from the second layer on the
    value stream (and residual) is the previous layer's output.
    """
    streams = {"h": nx.as_tensor(h_seq), "m": None if m is None else nx.as_tensor(m)}
    q_name, k_name, v_name = SOURCES[variant]
    value = streams[v_name]
    for i, p in enumerate(layers):
        attended = cross_attention(streams[q_name], streams[k_name], value, p, heads, output_proj)
        value = ffn_residual_norm(attended, value, p, ctx, f"{prefix}.{i}")
    return value
