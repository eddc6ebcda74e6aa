"""Graph convolutional GRU with node-adaptive parameters.

Each gate owns a weight pool ``W`` (C x D_in x D_out) and a bias pool ``b``
(C x D_out). Per-node parameters are synthesized from the node embeddings,
``theta[n] = sum_c E[n, c] W[c]``, once per forward pass and shared across
all time steps.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import numerics as nx
from .numerics import Tensor

GATES = ("z", "r", "h")

_ACTIVATIONS = {
    "sigmoid": nx.sigmoid,
    "tanh": nx.tanh,
    "identity": lambda x: x,
}


@dataclass
class NodeParams:
    theta: Tensor  # N x D_in x D_out
    omega: Tensor  # N x D_out


@dataclass
class GcrnOutput:
    h_seq: Tensor  # B x T x N x D
    h_last: Tensor  # B x N x D
    theta: NodeParams  # node parameters handed to the hypernetwork


def node_params(E, W, b) -> NodeParams:
    E, W, b = nx.as_tensor(E), nx.as_tensor(W), nx.as_tensor(b)
    if W.ndim != 3 or b.ndim != 2 or E.shape[1] != W.shape[0] or W.shape[0] != b.shape[0]:
        raise ValueError(
            f"pool shapes disagree: E{E.shape}, W{W.shape}, b{b.shape}"
        )
    if W.shape[2] != b.shape[1]:
        raise ValueError(f"weight pool output {W.shape[2]} != bias pool output {b.shape[1]}")
    c, d_in, d_out = W.shape
    theta = nx.reshape(E @ nx.reshape(W, (c, d_in * d_out)), (E.shape[0], d_in, d_out))
    return NodeParams(theta, E @ b)


def napl_gcn(A, x_cat, theta, omega, activation: str = "identity") -> Tensor:
    """act((A x_cat)[n] theta[n] + omega[n]) for every node n.

    ``x_cat`` is N x D_in or batched B x N x D_in.
    """
    A, x_cat = nx.as_tensor(A), nx.as_tensor(x_cat)
    return _node_affine(A @ x_cat, theta, omega, activation)


def _node_affine(ax: Tensor, theta, omega, activation: str) -> Tensor:
    if ax.ndim == 2:
        out = nx.reshape(nx.reshape(ax, (ax.shape[0], 1, -1)) @ theta, (ax.shape[0], -1))
    else:
        # node axis first so each node's matrix applies to its own batch slice
        out = nx.transpose(nx.transpose(ax, (1, 0, 2)) @ theta, (1, 0, 2))
    return _ACTIVATIONS[activation](out + omega)


def gru_step(x_t, h_prev, A, gates: Mapping[str, NodeParams]) -> Tensor:
    h_prev = nx.as_tensor(h_prev)
    xh = nx.concat([x_t, h_prev], axis=-1)
    # z and r read the same aggregated input
    axh = nx.as_tensor(A) @ xh
    z = _node_affine(axh, gates["z"].theta, gates["z"].omega, "sigmoid")
    r = _node_affine(axh, gates["r"].theta, gates["r"].omega, "sigmoid")
    xrh = nx.concat([x_t, r * h_prev], axis=-1)
    h_cand = napl_gcn(A, xrh, gates["h"].theta, gates["h"].omega, "tanh")
    return z * h_prev + (1.0 - z) * h_cand


def layer_node_params(E, pools: Mapping[str, tuple]) -> dict[str, NodeParams]:
    return {g: node_params(E, *pools[g]) for g in GATES}


def encode_sequence(
    x,
    A,
    E,
    layers: list[Mapping[str, tuple]],
    hidden_dim: int,
    theta_source: str = "candidate",
) -> GcrnOutput:
    """Unroll the cell over ``x`` (B x T x N x F) starting from zero state.

    ``layers`` holds one ``{gate: (W, b)}`` mapping per stacked layer; layer
    ``l > 0`` reads the hidden sequence of layer ``l - 1``. The node
    parameters returned for the hypernetwork come from the last layer's
    candidate gate (or update gate with ``theta_source='update'``).
    """
    x = nx.as_tensor(x)
    batch, steps, nodes, _ = x.shape
    inputs = [x[:, t] for t in range(steps)]
    gates = None
    for pools in layers:
        gates = layer_node_params(E, pools)
        h = Tensor(np.zeros((batch, nodes, hidden_dim)), dtype=x.data.dtype)
        states = []
        for x_t in inputs:
            h = gru_step(x_t, h, A, gates)
            states.append(h)
        inputs = states
    source = {"candidate": "h", "update": "z"}[theta_source]
    return GcrnOutput(nx.stack(inputs, axis=1), inputs[-1], gates[source])


def pool_bound(embed_dim: int, d_in: int) -> float:
    return 1.0 / np.sqrt(embed_dim * d_in)
