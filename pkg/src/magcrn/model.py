"""Full forecaster: adaptive graph -> GCRN -> hypernetwork maps -> attention -> head."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Mapping

import numpy as np

from . import numerics as nx
from .agl import adaptive_adjacency, embedding_bound
from .gcrn import GATES, encode_sequence, pool_bound
from .nawg import NormContext, nawg_stack
from .nmpl import generate_filters, hyper_bound, node_specific_maps
from .numerics import Tensor
from .seeds import label_rng

VARIANTS = ("full", "no_nmpl", "no_nawg", "query", "key")
ABLATIONS = ("no_nawg", "no_nmpl", "query", "key")


@dataclass(frozen=True)
class ModelConfig:
    num_nodes: int
    embed_dim: int = 8
    hidden_dim: int = 64
    input_dim: int = 1
    horizon_in: int = 12
    horizon_out: int = 12
    filter_len: int = 9
    heads: int = 4
    attn_layers: int = 2
    ffn_dim: int = 0  # 0 -> hidden_dim
    gcrn_layers: int = 1
    variant: str = "full"
    seed: int = 0
    precision: str = "float64"
    theta_source: str = "candidate"
    output_proj: bool = True
    norm_mode: str = "batch"
    norm_momentum: float = 0.1
    self_loops: bool = False
    per_horizon_head: bool = False

    @property
    def d_ff(self) -> int:
        return self.ffn_dim or self.hidden_dim

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64

    @property
    def uses_nmpl(self) -> bool:
        return self.variant != "no_nmpl"

    @property
    def uses_nawg(self) -> bool:
        return self.variant != "no_nawg"

    def errors(self) -> list[str]:
        errs = []
        for name in ("num_nodes", "embed_dim", "hidden_dim", "input_dim", "horizon_in",
                     "horizon_out", "filter_len", "heads", "gcrn_layers"):
            if getattr(self, name) < 1:
                errs.append(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.attn_layers < (1 if self.uses_nawg else 0):
            errs.append(f"attn_layers must be >= 1, got {self.attn_layers}")
        if self.ffn_dim < 0:
            errs.append(f"ffn_dim must be >= 0, got {self.ffn_dim}")
        if self.filter_len % 2 == 0:
            errs.append(f"filter_len must be odd, got {self.filter_len}")
        if self.heads >= 1 and self.hidden_dim % self.heads:
            errs.append(f"hidden_dim {self.hidden_dim} not divisible by heads {self.heads}")
        if self.variant not in VARIANTS:
            errs.append(f"unknown variant {self.variant!r}; expected one of {', '.join(VARIANTS)}")
        elif self.uses_nawg and self.horizon_in != self.horizon_out:
            errs.append("attention variants need horizon_in == horizon_out")
        if self.precision not in ("float64", "float32"):
            errs.append(f"precision must be float64 or float32, got {self.precision!r}")
        if self.theta_source not in ("candidate", "update"):
            errs.append(f"theta_source must be candidate or update, got {self.theta_source!r}")
        if self.norm_mode not in ("batch", "layer"):
            errs.append(f"norm_mode must be batch or layer, got {self.norm_mode!r}")
        if not 0.0 < self.norm_momentum <= 1.0:
            errs.append(f"norm_momentum must be in (0, 1], got {self.norm_momentum}")
        return errs

    def validate(self) -> "ModelConfig":
        errs = self.errors()
        if errs:
            raise ValueError("invalid model config:\n  " + "\n  ".join(errs))
        return self

    def with_variant(self, variant: str) -> "ModelConfig":
        return replace(self, variant=variant)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def pemsd4_config(**overrides) -> ModelConfig:
    """PeMSD4 row of the reported hyperparameters, with a two-layer GCRN."""
    base = dict(num_nodes=307, embed_dim=8, hidden_dim=64, filter_len=9, attn_layers=2,
                heads=4, horizon_in=12, horizon_out=12, gcrn_layers=2)
    base.update(overrides)
    return ModelConfig(**base)


def tiny_config(**overrides) -> ModelConfig:
    """Gradient-check configuration."""
    base = dict(num_nodes=4, embed_dim=3, hidden_dim=6, input_dim=1, horizon_in=3,
                horizon_out=3, filter_len=3, heads=2, attn_layers=1)
    base.update(overrides)
    return ModelConfig(**base)


# ---------------------------------------------------------------- parameters

def param_bounds(cfg: ModelConfig) -> dict[str, tuple[tuple[int, ...], float, float]]:
    """name -> (shape, low, high) for every tensor the variant registers.

    Registration order is deterministic and is the checkpoint order.
    """
    n, c, d, f = cfg.num_nodes, cfg.embed_dim, cfg.hidden_dim, cfg.input_dim
    spec: dict[str, tuple[tuple[int, ...], float, float]] = {}

    def uni(name, shape, bound):
        spec[name] = (tuple(shape), -bound, bound)

    uni("agl.E", (n, c), embedding_bound(c))
    for layer in range(cfg.gcrn_layers):
        d_in = (f if layer == 0 else d) + d
        bound = pool_bound(c, d_in)
        for g in GATES:
            uni(f"gcrn.{layer}.{g}.W", (c, d_in, d), bound)
            uni(f"gcrn.{layer}.{g}.b", (c, d), bound)
    if cfg.uses_nmpl:
        d_in = (f if cfg.gcrn_layers == 1 else d) + d
        uni("nmpl.U", (d_in * d, cfg.horizon_out * cfg.filter_len), hyper_bound(d_in, d))
    if cfg.uses_nawg:
        dff = cfg.d_ff
        for layer in range(cfg.attn_layers):
            p = f"nawg.{layer}"
            names = ("wq", "wk", "wv", "wo") if cfg.output_proj else ("wq", "wk", "wv")
            for w in names:
                uni(f"{p}.{w}", (d, d), 1.0 / np.sqrt(d))
            uni(f"{p}.ff1.W", (d, dff), 1.0 / np.sqrt(d))
            uni(f"{p}.ff1.b", (dff,), 1.0 / np.sqrt(d))
            uni(f"{p}.ff2.W", (dff, d), 1.0 / np.sqrt(dff))
            uni(f"{p}.ff2.b", (d,), 1.0 / np.sqrt(dff))
            for norm in ("norm1", "norm2"):
                spec[f"{p}.{norm}.scale"] = ((d,), 1.0, 1.0)
                spec[f"{p}.{norm}.shift"] = ((d,), 0.0, 0.0)
    if cfg.per_horizon_head:
        uni("out.W", (cfg.horizon_out, d), 1.0 / np.sqrt(d))
        uni("out.b", (cfg.horizon_out,), 1.0 / np.sqrt(d))
    else:
        uni("out.W", (d, 1), 1.0 / np.sqrt(d))
        uni("out.b", (1,), 1.0 / np.sqrt(d))
    return spec


def init(cfg: ModelConfig, seed: int | None = None) -> dict[str, np.ndarray]:
    cfg.validate()
    seed = cfg.seed if seed is None else seed
    params = {}
    for name, (shape, low, high) in param_bounds(cfg).items():
        if low == high:
            params[name] = np.full(shape, low, dtype=cfg.dtype)
        else:
            params[name] = label_rng(seed, name).uniform(low, high, size=shape).astype(cfg.dtype)
    return params


def init_buffers(cfg: ModelConfig) -> dict[str, np.ndarray]:
    buffers = {"norm.updates": np.zeros(1)}
    if cfg.uses_nawg and cfg.norm_mode == "batch":
        for layer in range(cfg.attn_layers):
            for norm in ("norm1", "norm2"):
                buffers[f"nawg.{layer}.{norm}.mean"] = np.zeros(cfg.hidden_dim)
                buffers[f"nawg.{layer}.{norm}.var"] = np.ones(cfg.hidden_dim)
    return buffers


def update_buffers(buffers: dict[str, np.ndarray], batch_stats, momentum: float) -> None:
    """Fold batch statistics into the running averages in place."""
    for name, (mu, var) in sorted(batch_stats.items()):
        buffers[f"{name}.mean"] = (1.0 - momentum) * buffers[f"{name}.mean"] + momentum * mu
        buffers[f"{name}.var"] = (1.0 - momentum) * buffers[f"{name}.var"] + momentum * var
    if batch_stats:
        buffers["norm.updates"] = buffers["norm.updates"] + 1.0


def count_params(params: Mapping[str, np.ndarray]) -> int:
    return int(sum(np.asarray(v).size for v in params.values()))


MODULE_OF = {"agl": "agl", "gcrn": "gcrn", "nmpl": "nmpl", "nawg": "nawg", "out": "output"}


def param_breakdown(cfg: ModelConfig) -> dict[str, int]:
    """Scalar counts grouped by module (agl, gcrn, nmpl, nawg, output)."""
    counts = dict.fromkeys(MODULE_OF.values(), 0)
    for name, (shape, _, _) in param_bounds(cfg).items():
        counts[MODULE_OF[name.split(".")[0]]] += int(np.prod(shape))
    return counts


# ---------------------------------------------------------------- forward

def _gcrn_layers(p: Mapping[str, Tensor], cfg: ModelConfig):
    return [
        {g: (p[f"gcrn.{layer}.{g}.W"], p[f"gcrn.{layer}.{g}.b"]) for g in GATES}
        for layer in range(cfg.gcrn_layers)
    ]


def _nawg_layers(p: Mapping[str, Tensor], cfg: ModelConfig):
    out = []
    for layer in range(cfg.attn_layers):
        prefix = f"nawg.{layer}."
        out.append({k[len(prefix):]: v for k, v in p.items() if k.startswith(prefix)})
    return out


def output_layer(features, p: Mapping[str, Tensor], cfg: ModelConfig) -> Tensor:
    """B x N x T x D features -> B x T x N predictions."""
    if cfg.per_horizon_head:
        pred = nx.einsum("bntd,td->bnt", features, p["out.W"]) + p["out.b"]
    else:
        b, n, t, _ = features.shape
        pred = nx.reshape(features @ p["out.W"] + p["out.b"], (b, n, t))
    return nx.transpose(pred, (0, 2, 1))


def forward(
    params: Mapping[str, Tensor | np.ndarray],
    x,
    cfg: ModelConfig,
    ctx: NormContext | None = None,
) -> Tensor:
    """Predictions B x T_out x N (normalized scale) for input B x T_in x N x F.

    ``ctx`` selects training/evaluation normalization; default is evaluation
    with no running statistics.
    """
    p = {k: nx.as_tensor(v) for k, v in params.items()}
    ctx = ctx or NormContext(mode=cfg.norm_mode)
    x = nx.as_tensor(x)
    if x.ndim != 4 or x.shape[1:] != (cfg.horizon_in, cfg.num_nodes, cfg.input_dim):
        raise ValueError(
            f"input shape {x.shape} != (B, {cfg.horizon_in}, {cfg.num_nodes}, {cfg.input_dim})"
        )
    E = p["agl.E"]
    A = adaptive_adjacency(E, cfg.self_loops)
    enc = encode_sequence(x, A, E, _gcrn_layers(p, cfg), cfg.hidden_dim, cfg.theta_source)
    h_seq = nx.transpose(enc.h_seq, (0, 2, 1, 3))  # B x N x T x D
    m = None
    if cfg.uses_nmpl:
        F = generate_filters(enc.theta.theta, p["nmpl.U"], cfg.horizon_out, cfg.filter_len)
        m = node_specific_maps(enc.h_last, F)
    if cfg.uses_nawg:
        features = nawg_stack(h_seq, m, _nawg_layers(p, cfg), cfg.heads, ctx,
                              cfg.variant, cfg.output_proj)
    else:
        features = m
    return output_layer(features, p, cfg)
