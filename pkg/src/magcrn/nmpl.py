"""Hypernetwork filters: node parameters -> per-node, per-horizon 1D kernels."""
from __future__ import annotations

import numpy as np

from . import numerics as nx
from .numerics import Tensor


def generate_filters(theta, U, horizon: int, filter_len: int) -> Tensor:
    """F = reshape(flatten(theta) @ U, N x horizon x filter_len).

    ``theta`` is N x D_in x D (flattened row-major over (D_in, D)) or
    already N x (D_in * D).
    """
    theta, U = nx.as_tensor(theta), nx.as_tensor(U)
    n = theta.shape[0]
    flat = theta if theta.ndim == 2 else nx.reshape(theta, (n, -1))
    if flat.shape[1] != U.shape[0] or U.shape[1] != horizon * filter_len:
        raise ValueError(
            f"hypernetwork shape {U.shape} incompatible with node params {flat.shape} "
            f"and {horizon} filters of length {filter_len}"
        )
    return nx.reshape(flat @ U, (n, horizon, filter_len))


def node_specific_maps(h_last, F) -> Tensor:
    """M[..., n, t, :] = conv1d_same(h_last[..., n, :], F[n, t]).

    ``h_last`` is N x D or B x N x D; the result gains a horizon axis before D.
    """
    h_last = nx.as_tensor(h_last)
    shape = h_last.shape[:-1] + (1, h_last.shape[-1])
    return nx.conv1d_same(nx.reshape(h_last, shape), F)


def hyper_bound(d_in: int, hidden_dim: int) -> float:
    return 1.0 / np.sqrt(d_in * hidden_dim)
