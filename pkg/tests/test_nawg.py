import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from magcrn import numerics as nx
from magcrn.nawg import (
    NORM_EPS,
    NormContext,
    UntrainedStatisticsWarning,
    cross_attention,
    ffn_residual_norm,
    nawg_stack,
)

import oracles


def layer_params(rng, d, dff=None, zero_qk=False, zero_ffn=False):
    dff = dff or d
    p = {k: rng.normal(size=(d, d)) / np.sqrt(d) for k in ("wq", "wk", "wv", "wo")}
    if zero_qk:
        p["wq"] = np.zeros((d, d))
        p["wk"] = np.zeros((d, d))
    p.update({"ff1.W": rng.normal(size=(d, dff)), "ff1.b": rng.normal(size=dff),
              "ff2.W": rng.normal(size=(dff, d)), "ff2.b": rng.normal(size=d)})
    if zero_ffn:
        p.update({k: np.zeros_like(v) for k, v in p.items() if k.startswith("ff")})
    p.update({"norm1.scale": np.ones(d), "norm1.shift": np.zeros(d),
              "norm2.scale": np.ones(d), "norm2.shift": np.zeros(d)})
    return p


def identity_ctx(prefix, d, layers=1):
    buf = {"norm.updates": np.ones(1)}
    for i in range(layers):
        for n in ("norm1", "norm2"):
            buf[f"{prefix}.{i}.{n}.mean"] = np.zeros(d)
            buf[f"{prefix}.{i}.{n}.var"] = np.full(d, 1.0 - NORM_EPS)
    return NormContext(training=False, buffers=buf)


def test_single_position_attention_is_one():
    rng = np.random.default_rng(0)
    p = layer_params(rng, 4)
    h, m = rng.normal(size=(2, 3, 1, 4)), rng.normal(size=(2, 3, 1, 4))
    out, w = cross_attention(h, h, m, p, heads=2, return_weights=True)
    np.testing.assert_array_equal(w.data, 1.0)
    np.testing.assert_allclose(out.data, m @ p["wv"] @ p["wo"], atol=1e-12)


def test_zero_query_key_uniform_weights():
    rng = np.random.default_rng(1)
    p = layer_params(rng, 4, zero_qk=True)
    h, m = rng.normal(size=(1, 2, 5, 4)), rng.normal(size=(1, 2, 5, 4))
    out, w = cross_attention(h, h, m, p, heads=2, return_weights=True)
    np.testing.assert_allclose(w.data, 0.2, atol=1e-15)
    mean_v = (m @ p["wv"]).mean(axis=2, keepdims=True)
    np.testing.assert_allclose(out.data, np.broadcast_to(mean_v @ p["wo"], out.shape), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.booleans())
def test_multihead_matches_loop(seed, proj):
    rng = np.random.default_rng(seed)
    p = layer_params(rng, 4)
    q, k, v = (rng.normal(size=(1, 2, 3, 4)) for _ in range(3))
    out = cross_attention(q, k, v, p, heads=2, output_proj=proj).data
    for n in range(2):
        ref = oracles.multihead(q[0, n], k[0, n], v[0, n], p["wq"], p["wk"], p["wv"], p["wo"] if proj else None, 2)
        np.testing.assert_allclose(out[0, n], ref, atol=1e-12)


def test_heads_must_divide_hidden():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(1, 1, 2, 6))
    with pytest.raises(ValueError, match="divisible"):
        cross_attention(x, x, x, layer_params(rng, 6), heads=4)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 30.0))
def test_attention_rows_are_distributions(seed, scale):
    rng = np.random.default_rng(seed)
    p = layer_params(rng, 4)
    x, y = scale * rng.normal(size=(2, 3, 5, 4)), rng.normal(size=(2, 3, 5, 4))
    _, w = cross_attention(x, x, y, p, heads=2, return_weights=True)
    assert np.all(w.data >= 0)
    np.testing.assert_allclose(w.data.sum(axis=-1), 1.0, atol=1e-12)


def test_node_isolation():
    rng = np.random.default_rng(2)
    p = layer_params(rng, 4)
    h, m = rng.normal(size=(1, 3, 4, 4)), rng.normal(size=(1, 3, 4, 4))
    base = cross_attention(h, h, m, p, heads=2).data
    h2, m2 = h.copy(), m.copy()
    h2[:, 1] += 5.0
    m2[:, 1] -= 3.0
    moved = cross_attention(h2, h2, m2, p, heads=2).data
    np.testing.assert_array_equal(base[:, [0, 2]], moved[:, [0, 2]])


def test_time_permutation_equivariance():
    rng = np.random.default_rng(3)
    p = layer_params(rng, 4)
    h, m = rng.normal(size=(2, 2, 5, 4)), rng.normal(size=(2, 2, 5, 4))
    perm = np.array([3, 0, 4, 1, 2])
    a = cross_attention(h, h, m, p, heads=2).data[:, :, perm]
    b = cross_attention(h[:, :, perm], h[:, :, perm], m[:, :, perm], p, heads=2).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_residual_only_with_identity_norm():
    rng = np.random.default_rng(4)
    p = layer_params(rng, 4, zero_ffn=True)
    att, val = rng.normal(size=(1, 2, 3, 4)), rng.normal(size=(1, 2, 3, 4))
    out = ffn_residual_norm(att, val, p, identity_ctx("x", 4), "x.0").data
    np.testing.assert_allclose(out, att + val, atol=1e-12)
    out = ffn_residual_norm(-val, val, p, identity_ctx("x", 4), "x.0").data
    np.testing.assert_allclose(out, 0.0, atol=1e-15)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_batch_statistics_match_oracle(seed):
    rng = np.random.default_rng(seed)
    p = layer_params(rng, 4)
    p["norm1.scale"], p["norm2.shift"] = rng.normal(size=4), rng.normal(size=4)
    att, val = rng.normal(size=(2, 2, 3, 4)), rng.normal(size=(2, 2, 3, 4))
    ctx = NormContext(training=True)
    out = ffn_residual_norm(att, val, p, ctx, "x.0").data
    r1 = oracles._batch_norm(att + val, p["norm1.scale"], p["norm1.shift"])
    ffn = np.maximum(r1 @ p["ff1.W"] + p["ff1.b"], 0) @ p["ff2.W"] + p["ff2.b"]
    ref = oracles._batch_norm(r1 + ffn, p["norm2.scale"], p["norm2.shift"])
    np.testing.assert_allclose(out, ref, atol=1e-10)
    mu, var = ctx.batch_stats["x.0.norm1"]
    flat = (att + val).reshape(-1, 4)
    np.testing.assert_allclose(mu, flat.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(var, flat.var(axis=0), atol=1e-12)


def test_untrained_statistics_flagged():
    rng = np.random.default_rng(5)
    p = layer_params(rng, 4, zero_ffn=True)
    att, val = rng.normal(size=(1, 1, 2, 4)), rng.normal(size=(1, 1, 2, 4))
    ctx = NormContext(training=False, buffers={"norm.updates": np.zeros(1)})
    with pytest.warns(UntrainedStatisticsWarning):
        out = ffn_residual_norm(att, val, p, ctx, "x.0").data
    assert ctx.flagged
    s = 1 / np.sqrt(1 + NORM_EPS)
    np.testing.assert_allclose(out, (att + val) * s * s, atol=1e-12)


def test_layer_norm_mode_rows_standardized():
    rng = np.random.default_rng(6)
    p = layer_params(rng, 4)
    out = ffn_residual_norm(rng.normal(size=(1, 2, 3, 4)), rng.normal(size=(1, 2, 3, 4)), p,
                            NormContext(mode="layer"), "x.0").data
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)


def test_single_layer_stack_is_direct_composition():
    rng = np.random.default_rng(7)
    p = layer_params(rng, 4)
    h, m = rng.normal(size=(2, 2, 3, 4)), rng.normal(size=(2, 2, 3, 4))
    out = nawg_stack(h, m, [p], heads=2, ctx=NormContext(training=True)).data
    ref = ffn_residual_norm(cross_attention(h, h, m, p, 2), m, p, NormContext(training=True), "nawg.0").data
    np.testing.assert_array_equal(out, ref)


def test_second_layer_uniform_attention_averages_first_output():
    rng = np.random.default_rng(8)
    p1, p2 = layer_params(rng, 4), layer_params(rng, 4, zero_qk=True)
    p2["wv"], p2["wo"] = np.eye(4), np.eye(4)
    h, m = rng.normal(size=(1, 2, 3, 4)), rng.normal(size=(1, 2, 3, 4))
    first = nawg_stack(h, m, [p1], heads=2, ctx=NormContext(training=True)).data
    attended = cross_attention(h, h, first, p2, 2).data
    np.testing.assert_allclose(attended, np.broadcast_to(first.mean(axis=2, keepdims=True), first.shape), atol=1e-12)
    two = nawg_stack(h, m, [p1, p2], heads=2, ctx=NormContext(training=True)).data
    ref = ffn_residual_norm(attended, first, p2, NormContext(training=True), "nawg.1").data
    np.testing.assert_allclose(two, ref, atol=1e-12)


@pytest.mark.parametrize("variant", ["full", "no_nmpl", "query", "key"])
def test_stack_shape_and_gradients(variant):
    rng = np.random.default_rng(9)
    layers = [layer_params(rng, 4, dff=3) for _ in range(2)]
    h, m = rng.normal(size=(2, 2, 3, 4)), rng.normal(size=(2, 2, 3, 4))
    params = {f"{i}.{k}": v for i, p in enumerate(layers) for k, v in p.items()}
    params["h"], params["m"] = h, m
    w = rng.normal(size=(2, 2, 3, 4))

    def loss(q):
        ls = [{k[2:]: v for k, v in q.items() if k.startswith(f"{i}.")} for i in range(2)]
        out = nawg_stack(q["h"], q["m"], ls, 2, NormContext(training=True), variant)
        return nx.tsum(out * w)

    leaves = nx.leaves(params)
    assert loss(leaves).data.shape == ()
    g = nx.gradients(loss(leaves), leaves)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        num = nx.finite_diff_gradient(lambda q: float(loss(q).data), params)
    for k in params:
        if variant == "no_nmpl" and k == "m":
            assert not g[k].any()
        assert nx.relative_error(g[k], num[k]) < 1e-6, k
