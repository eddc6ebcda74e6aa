import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from magcrn.data import (
    DAY,
    RawSeries,
    Scaler,
    SeriesFormatError,
    SynthSpec,
    interpolate_missing,
    load_dataset,
    load_series,
    prepare,
    split,
    split_sizes,
    synth_generate,
    window_count,
    windows,
    write_manifest,
    write_series,
)


def test_load_well_formed(tmp_path):
    f = tmp_path / "s.txt"
    f.write_text("3 2\n1,2\n3,4\n5,6\n")
    np.testing.assert_array_equal(load_series(f).values, [[1, 2], [3, 4], [5, 6]])


def test_blank_cell_is_missing(tmp_path):
    f = tmp_path / "s.txt"
    f.write_text("2 2\n1,\n3,4\n")
    v = load_series(f).values
    assert np.isnan(v[0, 1]) and np.isnan(v).sum() == 1


def test_whitespace_separated(tmp_path):
    f = tmp_path / "s.txt"
    f.write_text("2 3\n1 2 3\n4 na 6\n")
    v = load_series(f).values
    assert v.shape == (2, 3) and np.isnan(v[1, 1])


def test_header_row_mismatch_names_line(tmp_path):
    f = tmp_path / "s.txt"
    f.write_text("3 2\n1,2\n3,4\n")
    with pytest.raises(SeriesFormatError, match="line"):
        load_series(f)
    f.write_text("2 2\n1,2\n3,4,5\n")
    with pytest.raises(SeriesFormatError, match="line 3"):
        load_series(f)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 30), st.integers(1, 6), st.integers(0, 10_000))
def test_round_trip_bitwise(tmp_path_factory, rows, cols, seed):
    rng = np.random.default_rng(seed)
    m = rng.normal(scale=rng.uniform(1e-3, 1e6), size=(rows, cols))
    m[rng.uniform(size=m.shape) < 0.1] = np.nan
    f = tmp_path_factory.mktemp("rt") / "s.txt"
    write_series(f, m)
    back = load_series(f).values
    assert back.tobytes() == m.tobytes()


def test_manifest_resolves_relative_path(tmp_path):
    write_series(tmp_path / "s.txt", np.ones((4, 2)))
    write_manifest(tmp_path / "m.txt", "s.txt", kind="speed", interval=5)
    raw = load_dataset(tmp_path / "m.txt")
    assert raw.kind == "speed" and raw.values.shape == (4, 2)


def col(values):
    return RawSeries(np.array(values, float)[:, None])


def test_interpolation_examples():
    np.testing.assert_array_equal(interpolate_missing(col([1, np.nan, 3])).values[:, 0], [1, 2, 3])
    np.testing.assert_array_equal(interpolate_missing(col([np.nan, 5, np.nan])).values[:, 0], [5, 5, 5])
    # two-point linear formula: 0 + (6 - 0) * k / 3
    np.testing.assert_array_equal(interpolate_missing(col([0, np.nan, np.nan, 6])).values[:, 0], [0, 2, 4, 6])


def test_fully_missing_node_named():
    raw = RawSeries(np.array([[1.0, np.nan], [2.0, np.nan]]))
    with pytest.raises(ValueError, match="node 1"):
        interpolate_missing(raw)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_interpolated_runs_are_straight(seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(60, 3)) * 50
    mask = rng.uniform(size=v.shape) < 0.3
    mask[::7] = False  # keep some anchors per node
    v[mask] = np.nan
    out = interpolate_missing(RawSeries(v)).values
    assert not np.isnan(out).any()
    for n in range(3):
        gap = np.isnan(v[:, n])
        seen = np.flatnonzero(~gap)
        for a, b in zip(seen[:-1], seen[1:]):
            if b - a > 1:
                d2 = np.diff(out[a:b + 1, n], n=2)
                assert np.max(np.abs(d2)) < 1e-9 * max(1.0, np.abs(out[a:b + 1, n]).max())


def test_split_sizes():
    assert split_sizes(16992) == (10195, 3398, 3399)
    assert split_sizes(100) == (60, 20, 20)
    assert split_sizes(101) == (60, 20, 21)


def test_split_too_short():
    with pytest.raises(ValueError, match="val split"):
        split(RawSeries(np.ones((100, 1))), min_length=24)


def test_split_chronological():
    raw = RawSeries(np.arange(100.0)[:, None])
    tr, va, te = split(raw)
    assert tr.values[-1, 0] == 59 and va.values[0, 0] == 60 and te.values[0, 0] == 80


def test_window_counts():
    assert window_count(24, 12, 12) == 1
    assert window_count(30, 12, 12) == 7
    assert len(windows(np.zeros((30, 2)), Scaler(0.0, 1.0))) == 7


def test_windows_normalized_inputs_raw_targets():
    values = np.arange(60.0).reshape(30, 2)
    s = Scaler(10.0, 2.0)
    w = windows(values, s, 12, 12)
    np.testing.assert_array_equal(w[3].x[..., 0], (values[3:15] - 10) / 2)
    np.testing.assert_array_equal(w[3].y, values[15:27])


def test_prepare_scaler_uses_train_only_and_windows_stay_inside_splits():
    # 200 steps -> 120 / 40 / 40; a jump after the train split must not reach the scaler
    v = np.zeros((200, 2))
    v[:120] = np.arange(120)[:, None] % 2
    v[120:] = 100.0 + np.arange(80)[:, None]
    data = prepare(RawSeries(v), 12, 12)
    assert data.scaler.mean == pytest.approx(0.5) and data.scaler.std == pytest.approx(0.5)
    assert (len(data.x_train), len(data.x_val), len(data.x_test)) == (97, 17, 17)
    # first val window starts at the val boundary and its target lies within val
    np.testing.assert_array_equal(data.y_val[0][:, 0], 100.0 + np.arange(12, 24))
    np.testing.assert_array_equal(data.y_val[-1][-1, 0], 100.0 + 39)


def test_scaler_round_trip():
    rng = np.random.default_rng(0)
    v = rng.normal(5, 3, size=(50, 4))
    for per_node in (False, True):
        s = Scaler.fit(v, per_node)
        np.testing.assert_allclose(s.inverse(s.transform(v)), v, atol=1e-12)
        mean, std = s.arrays()
        s2 = Scaler.from_arrays(mean, std)
        np.testing.assert_array_equal(s2.transform(v), s.transform(v))
    assert Scaler.fit(v).std == pytest.approx(v.std(ddof=0))


def test_scaler_rejects_constant():
    with pytest.raises(ValueError, match="zero variance"):
        Scaler.fit(np.ones((10, 2)))


def test_synth_exact_sinusoid():
    spec = SynthSpec(nodes=3, length=2 * DAY, seed=1, noise=0.0, mixing=0.0, second_harmonic=False, trend=False)
    v = synth_generate(spec).values
    t = np.arange(v.shape[0])
    X = np.column_stack([np.ones_like(t), np.sin(2 * np.pi * t / DAY), np.cos(2 * np.pi * t / DAY)])
    for n in range(3):
        coef, *_ = np.linalg.lstsq(X, v[:, n], rcond=None)
        assert np.max(np.abs(X @ coef - v[:, n])) < 1e-8


def test_synth_deterministic_and_variance_order():
    spec = SynthSpec(nodes=5, length=4 * DAY, seed=3)
    assert synth_generate(spec).values.tobytes() == synth_generate(spec).values.tobytes()
    amps = np.array([10.0, 50.0, 20.0, 80.0, 35.0])
    v = synth_generate(SynthSpec(nodes=5, length=4 * DAY, seed=3, mixing=0.0, second_harmonic=False,
                                 trend=False, amplitudes=amps)).values
    np.testing.assert_array_equal(np.argsort(v.var(axis=0)), np.argsort(amps))


def test_synth_rejects_empty():
    with pytest.raises(ValueError):
        synth_generate(SynthSpec(nodes=0, length=10))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.booleans())
def test_scaler_standardizes_train_split(seed, per_node):
    raw = synth_generate(SynthSpec(nodes=4, length=500, seed=seed))
    train_part, _, _ = split(raw)
    z = Scaler.fit(train_part.values, per_node).transform(train_part.values)
    axis = 0 if per_node else None
    assert np.max(np.abs(z.mean(axis=axis))) < 1e-9
    assert np.max(np.abs(z.std(axis=axis) - 1.0)) < 1e-9
