"""Adaptive graph learning: adjacency from trainable node embeddings."""
from __future__ import annotations

import numpy as np

from . import numerics as nx
from .numerics import Tensor


def adaptive_adjacency(E, self_loops: bool = False) -> Tensor:
    """A = softmax_rows(relu(E E^T)).

    The row-stochastic ``A`` is used as-is by the graph convolution. With
    ``self_loops`` an identity is added after normalization (rows then sum
    to 2); that mode exists for comparison only.
    """
    E = nx.as_tensor(E)
    A = nx.softmax_rows(nx.relu(E @ nx.transpose(E)))
    if self_loops:
        A = A + np.eye(E.shape[0], dtype=A.data.dtype)
    return A


def embedding_bound(embed_dim: int) -> float:
    return 1.0 / np.sqrt(embed_dim)
