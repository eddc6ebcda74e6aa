"""Series I/O, gap repair, chronological split, z-scoring, windowing, synthesis.

Series file format::

    <rows> <cols>
    v11,v12,...
    v21,v22,...

Cells may be separated by commas or whitespace. Empty, ``na``, ``nan`` and
unparseable cells load as NaN (missing).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .seeds import label_rng

MISSING_TOKENS = {"", "na", "nan", "null", "none", "?"}


class SeriesFormatError(ValueError):
    pass


@dataclass
class RawSeries:
    values: np.ndarray  # T_total x N, NaN marks missing
    interval: int = 5
    kind: str = "flow"

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.values.shape[1]


# ---------------------------------------------------------------- file formats

def _parse_cell(token: str) -> float:
    token = token.strip()
    if token.lower() in MISSING_TOKENS:
        return math.nan
    try:
        return float(token)
    except ValueError:
        return math.nan


def _split_row(line: str) -> list[str]:
    line = line.rstrip("\r\n")
    if "," in line:
        return line.split(",")
    return line.split()


def load_series(path, interval: int = 5, kind: str = "flow") -> RawSeries:
    path = Path(path)
    with path.open() as fh:
        lines = fh.readlines()
    if not lines:
        raise SeriesFormatError(f"{path}, line 1: empty file, expected a 'rows cols' header")
    try:
        rows, cols = (int(t) for t in lines[0].split())
    except ValueError:
        raise SeriesFormatError(f"{path}, line 1: header must be 'rows cols', got {lines[0].strip()!r}")
    # exactly `rows` lines follow the header; an empty line is a row of one missing cell
    body = [ln.rstrip("\r\n") for ln in lines[1:rows + 1]]
    if len(body) < rows:
        raise SeriesFormatError(
            f"{path}, line {len(lines) + 1}: header declares {rows} rows but file has {len(body)}"
        )
    extra = [i for i, ln in enumerate(lines[rows + 1:], rows + 2) if ln.strip()]
    if extra:
        raise SeriesFormatError(f"{path}, line {extra[0]}: header declares {rows} rows but more follow")
    values = np.empty((rows, cols))
    for r, line in enumerate(body):
        cells = _split_row(line) if line.strip() else [""] * (1 if cols == 1 else 0)
        if len(cells) != cols:
            raise SeriesFormatError(f"{path}, line {r + 2}: expected {cols} cells, found {len(cells)}")
        values[r] = [_parse_cell(c) for c in cells]
    return RawSeries(values, interval=interval, kind=kind)


def _format_cell(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def write_series(path, series: RawSeries | np.ndarray) -> None:
    values = series.values if isinstance(series, RawSeries) else np.asarray(series, dtype=float)
    rows, cols = values.shape
    lines = [f"{rows} {cols}"]
    lines.extend(",".join(_format_cell(v) for v in row) for row in values)
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class Manifest:
    path: Path
    kind: str = "flow"
    interval: int = 5


def read_manifest(path) -> Manifest:
    path = Path(path)
    entries = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise SeriesFormatError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        entries[key] = value
    unknown = set(entries) - {"path", "kind", "interval"}
    if unknown or "path" not in entries:
        raise SeriesFormatError(f"{path}: manifest needs 'path' and only path/kind/interval keys")
    series_path = Path(entries["path"])
    if not series_path.is_absolute():
        series_path = path.parent / series_path
    return Manifest(series_path, entries.get("kind", "flow"), int(entries.get("interval", 5)))


def write_manifest(path, series_path, kind: str = "flow", interval: int = 5) -> None:
    Path(path).write_text(f"path={series_path}\nkind={kind}\ninterval={interval}\n")


def is_manifest(path) -> bool:
    with Path(path).open() as fh:
        return "=" in fh.readline()


def load_dataset(path) -> RawSeries:
    """Load a series file directly or through a manifest."""
    if is_manifest(path):
        m = read_manifest(path)
        return load_series(m.path, interval=m.interval, kind=m.kind)
    return load_series(path)


# ---------------------------------------------------------------- cleaning

def interpolate_missing(raw: RawSeries) -> RawSeries:
    """Linear interpolation inside gaps, constant extension at the edges."""
    values = raw.values.copy()
    t = np.arange(raw.length, dtype=float)
    for n in range(raw.num_nodes):
        col = values[:, n]
        seen = ~np.isnan(col)
        if not seen.any():
            raise ValueError(f"node {n} has no observed values")
        if seen.all():
            continue
        # np.interp holds the edge values constant outside the observed range
        col[~seen] = np.interp(t[~seen], t[seen], col[seen])
    return RawSeries(values, raw.interval, raw.kind)


def split(raw: RawSeries, ratios=(6, 2, 2), min_length: int = 0) -> tuple[RawSeries, RawSeries, RawSeries]:
    """Chronological train/val/test split; train and val take the floor shares."""
    total = raw.length
    weights = np.asarray(ratios, dtype=float)
    n_train = int(math.floor(total * weights[0] / weights.sum()))
    n_val = int(math.floor(total * weights[1] / weights.sum()))
    bounds = [(0, n_train), (n_train, n_train + n_val), (n_train + n_val, total)]
    parts = []
    for name, (a, b) in zip(("train", "val", "test"), bounds):
        if b - a < min_length:
            raise ValueError(f"{name} split has {b - a} steps, needs at least {min_length}")
        parts.append(RawSeries(raw.values[a:b], raw.interval, raw.kind))
    return tuple(parts)


def split_sizes(total: int, ratios=(6, 2, 2)) -> tuple[int, int, int]:
    w = np.asarray(ratios, dtype=float)
    a = int(math.floor(total * w[0] / w.sum()))
    b = int(math.floor(total * w[1] / w.sum()))
    return a, b, total - a - b


@dataclass
class Scaler:
    mean: np.ndarray | float
    std: np.ndarray | float

    @classmethod
    def fit(cls, values: np.ndarray, per_node: bool = False) -> "Scaler":
        if per_node:
            mean, std = values.mean(axis=0), values.std(axis=0)
        else:
            mean, std = float(values.mean()), float(values.std())
        if np.any(np.asarray(std) <= 0):
            raise ValueError("cannot fit scaler: zero variance in training split")
        return cls(mean, std)

    def transform(self, values):
        return (values - self.mean) / self.std

    def inverse(self, values):
        """Works on arrays and on tensors (last axis = nodes)."""
        return values * self.std + self.mean

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.atleast_1d(np.asarray(self.mean, float)), np.atleast_1d(np.asarray(self.std, float))

    @classmethod
    def from_arrays(cls, mean: np.ndarray, std: np.ndarray) -> "Scaler":
        if mean.size == 1:
            return cls(float(mean[0]), float(std[0]))
        return cls(mean.copy(), std.copy())


# ---------------------------------------------------------------- windows

@dataclass(frozen=True)
class ForecastWindow:
    x: np.ndarray  # T_in x N x 1, normalized
    y: np.ndarray  # T_out x N, original scale


def window_count(length: int, t_in: int, t_out: int) -> int:
    return max(length - (t_in + t_out) + 1, 0)


def windows(segment: RawSeries | np.ndarray, scaler: Scaler, t_in: int = 12, t_out: int = 12) -> list[ForecastWindow]:
    values = segment.values if isinstance(segment, RawSeries) else np.asarray(segment, float)
    if values.shape[0] < t_in + t_out:
        raise ValueError(f"segment of length {values.shape[0]} shorter than {t_in + t_out}")
    normed = scaler.transform(values)
    out = []
    for i in range(window_count(values.shape[0], t_in, t_out)):
        x = normed[i:i + t_in, :, None]
        y = values[i + t_in:i + t_in + t_out]
        out.append(ForecastWindow(x, y))
    return out


def stack_windows(ws: list[ForecastWindow]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([w.x for w in ws]), np.stack([w.y for w in ws])


@dataclass
class PreparedData:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    scaler: Scaler

    @property
    def num_nodes(self) -> int:
        return self.y_train.shape[-1]

    def split_arrays(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        return getattr(self, f"x_{name}"), getattr(self, f"y_{name}")


def prepare(raw: RawSeries, t_in: int = 12, t_out: int = 12, ratios=(6, 2, 2), per_node: bool = False) -> PreparedData:
    """Interpolate, split, fit the scaler on train, window every split."""
    clean = interpolate_missing(raw)
    train, val, test = split(clean, ratios, min_length=t_in + t_out)
    scaler = Scaler.fit(train.values, per_node=per_node)
    arrays = [stack_windows(windows(s, scaler, t_in, t_out)) for s in (train, val, test)]
    return PreparedData(*arrays[0], *arrays[1], *arrays[2], scaler=scaler)


# ---------------------------------------------------------------- synthesis

DAY = 288  # 5-minute steps per day


@dataclass
class SynthSpec:
    """Node-heterogeneous daily-periodic series.

    Per node ``n``: ``level_n + a_n sin(2 pi t/288 + phi_n) + b_n sin(4 pi t/288 + psi_n)
    + trend_n t/length`` plus ``mixing`` times the mean clean signal of its two
    ring neighbours, plus Gaussian noise. Unset per-node arrays are drawn
    from the seed.
    """

    nodes: int
    length: int
    seed: int = 0
    noise: float = 1.0
    mixing: float = 0.3
    second_harmonic: bool = True
    trend: bool = True
    amplitudes: np.ndarray | None = None
    levels: np.ndarray | None = None
    extra: dict = field(default_factory=dict)


def synth_generate(spec: SynthSpec) -> RawSeries:
    if spec.nodes < 1 or spec.length < 1:
        raise ValueError("synthetic series needs nodes >= 1 and length >= 1")
    rng = label_rng(spec.seed, "synth")
    n = spec.nodes
    amp = rng.uniform(20.0, 100.0, n) if spec.amplitudes is None else np.asarray(spec.amplitudes, float)
    amp2 = rng.uniform(0.1, 0.5, n) * amp if spec.second_harmonic else np.zeros(n)
    phase = rng.uniform(0.0, 2 * np.pi, n)
    phase2 = rng.uniform(0.0, 2 * np.pi, n)
    trend = rng.uniform(-0.2, 0.2, n) * amp if spec.trend else np.zeros(n)
    level = 1.5 * amp if spec.levels is None else np.asarray(spec.levels, float)
    noise_draw = rng.standard_normal((spec.length, n))

    t = np.arange(spec.length, dtype=float)[:, None]
    clean = (
        amp * np.sin(2 * np.pi * t / DAY + phase)
        + amp2 * np.sin(4 * np.pi * t / DAY + phase2)
        + trend * t / spec.length
    )
    coupling = 0.5 * (np.roll(clean, 1, axis=1) + np.roll(clean, -1, axis=1)) if n > 1 else np.zeros_like(clean)
    values = level + clean + spec.mixing * coupling + spec.noise * noise_draw
    return RawSeries(values, interval=5, kind="flow")
