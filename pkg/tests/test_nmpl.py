import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from magcrn import numerics as nx
from magcrn.nmpl import generate_filters, node_specific_maps

import oracles


def test_zero_hypernetwork_zero_filters():
    F = generate_filters(np.ones((3, 2, 2)), np.zeros((4, 6)), 2, 3)
    assert F.shape == (3, 2, 3) and not F.data.any()


def test_identity_hypernetwork():
    F = generate_filters(np.array([[1.0, 2.0]]), np.eye(2), 1, 2)
    np.testing.assert_array_equal(F.data, [[[1.0, 2.0]]])


def test_flatten_is_row_major():
    theta = np.arange(6.0).reshape(1, 2, 3)
    U = np.eye(6)[:, :3]
    np.testing.assert_array_equal(generate_filters(theta, U, 1, 3).data, [[[0.0, 1.0, 2.0]]])


def test_shape_mismatch():
    with pytest.raises(ValueError, match="hypernetwork"):
        generate_filters(np.ones((3, 4)), np.ones((5, 6)), 2, 3)
    with pytest.raises(ValueError):
        generate_filters(np.ones((3, 4)), np.ones((4, 5)), 2, 3)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_filters_match_loop(seed):
    rng = np.random.default_rng(seed)
    theta, U = rng.normal(size=(3, 2, 3)), rng.normal(size=(6, 6))
    np.testing.assert_allclose(generate_filters(theta, U, 2, 3).data,
                               oracles.filters(theta.reshape(3, -1), U, 2, 3), atol=1e-12)


def test_delta_filters_copy_state():
    h = np.random.default_rng(0).normal(size=(2, 5))
    F = np.zeros((2, 3, 3))
    F[..., 1] = 1.0
    M = node_specific_maps(h, F).data
    assert M.shape == (2, 3, 5)
    for t in range(3):
        np.testing.assert_array_equal(M[:, t], h)


def test_zero_state_zero_maps():
    F = np.random.default_rng(1).normal(size=(2, 3, 3))
    assert not node_specific_maps(np.zeros((2, 5)), F).data.any()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_maps_match_loop(seed):
    rng = np.random.default_rng(seed)
    h, F = rng.normal(size=(2, 5)), rng.normal(size=(2, 3, 3))
    M = node_specific_maps(h, F).data
    for n in range(2):
        for t in range(3):
            np.testing.assert_allclose(M[n, t], oracles.conv1d_same(h[n], F[n, t]), atol=1e-12)
    # batched input reuses per-node filters for every sample
    Mb = node_specific_maps(np.stack([h, 2 * h]), F).data
    np.testing.assert_allclose(Mb[1], 2 * M, atol=1e-12)


def test_composed_gradients():
    rng = np.random.default_rng(2)
    params = {"theta": rng.normal(size=(2, 2, 3)), "U": rng.normal(size=(6, 6)), "h": rng.normal(size=(2, 2, 3))}
    w = rng.normal(size=(2, 2, 2, 3))

    def loss(p):
        return nx.tsum(node_specific_maps(p["h"], generate_filters(p["theta"], p["U"], 2, 3)) * w)

    leaves = nx.leaves(params)
    g = nx.gradients(loss(leaves), leaves)
    num = nx.finite_diff_gradient(lambda p: float(loss(p).data), params)
    for k in params:
        assert nx.relative_error(g[k], num[k]) < 1e-7, k
