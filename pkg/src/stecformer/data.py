"""CSV ingestion, chronological 7:1:2 splits, z-score normalization, windows, synthetic data."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class RawSeries:
    values: np.ndarray                      # [rows, V]
    columns: list[str]
    timestamps: list[str] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("values must be a [rows, V] matrix")
        if len(self.columns) != self.values.shape[1]:
            raise ValueError(f"{len(self.columns)} column names for {self.values.shape[1]} columns")
        if self.timestamps is not None and len(self.timestamps) != len(self.values):
            raise ValueError("timestamps and values differ in length")

    def __len__(self):
        return len(self.values)

    @property
    def V(self) -> int:
        return self.values.shape[1]

    def slice(self, start: int, stop: int) -> "RawSeries":
        ts = self.timestamps[start:stop] if self.timestamps is not None else None
        return RawSeries(self.values[start:stop], list(self.columns), ts, dict(self.meta))


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def load_csv(path) -> RawSeries:
    """Read a header-row CSV; a non-numeric first column is taken as timestamps.

    Rows with empty cells and non-numeric cells are errors (file line numbers
    are reported, the header being line 1).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    if len(body) < 2:
        raise ValueError(f"{path}: need at least 2 data rows, found {len(body)}")

    has_ts = not _is_number(body[0][0].strip()) if body[0] and body[0][0].strip() else False
    first = 1 if has_ts else 0
    columns = header[first:]
    values = np.empty((len(body), len(columns)))
    timestamps = [] if has_ts else None
    for r, row in enumerate(body):
        line = r + 2
        if len(row) != len(header):
            raise ValueError(f"{path}: line {line} has {len(row)} cells, header has {len(header)}")
        if has_ts:
            timestamps.append(row[0].strip())
        for c, cell in enumerate(row[first:]):
            cell = cell.strip()
            if cell == "":
                raise ValueError(f"{path}: missing value at line {line}, column {columns[c]!r}")
            try:
                values[r, c] = float(cell)
            except ValueError:
                raise ValueError(f"{path}: cannot parse {cell!r} at line {line}, "
                                 f"column {columns[c]!r}") from None
    if not np.isfinite(values).all():
        bad = np.argwhere(~np.isfinite(values))[0]
        raise ValueError(f"{path}: non-finite value at line {bad[0] + 2}, column {columns[bad[1]]!r}")
    return RawSeries(values, columns, timestamps)


def write_csv(path, series: RawSeries) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        ts = series.timestamps is not None
        w.writerow((["date"] if ts else []) + list(series.columns))
        for i, row in enumerate(series.values):
            w.writerow(([series.timestamps[i]] if ts else []) + [repr(float(v)) for v in row])


def split_712(series: RawSeries, min_rows: int = 0) -> tuple[RawSeries, RawSeries, RawSeries]:
    """Contiguous chronological train/val/test of floor(0.7n), floor(0.1n) and the rest."""
    n = len(series)
    if n < max(min_rows, 3):
        raise ValueError(f"series has {n} rows, need at least {max(min_rows, 3)}")
    n_train = (7 * n) // 10
    n_val = n // 10
    return (series.slice(0, n_train), series.slice(n_train, n_train + n_val),
            series.slice(n_train + n_val, n))


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, train: RawSeries) -> "NormStats":
        mean = train.values.mean(axis=0)
        std = train.values.std(axis=0)
        flat = [train.columns[i] for i in np.flatnonzero(std <= 0)]
        if flat:
            raise ValueError(f"constant column(s) in training split: {flat}")
        return cls(mean, std)

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values) - self.mean) / self.std

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}


def normalize(series: RawSeries, stats: NormStats) -> RawSeries:
    ts = list(series.timestamps) if series.timestamps is not None else None
    return RawSeries(stats.transform(series.values), list(series.columns), ts, dict(series.meta))


@dataclass
class WindowSample:
    input: np.ndarray                       # [T_in, V]
    target: np.ndarray                      # [T_pred, V]
    start: int


def _window_starts(n: int, T_in: int, T_pred: int, stride: int) -> range:
    if stride < 1:
        raise ValueError("stride must be positive")
    if n < T_in + T_pred:
        raise ValueError(f"split of length {n} shorter than T_in + T_pred = {T_in + T_pred}")
    return range(0, n - T_in - T_pred + 1, stride)


def windows(split, T_in: int, T_pred: int, stride: int = 1) -> list[WindowSample]:
    values = split.values if isinstance(split, RawSeries) else np.asarray(split)
    return [WindowSample(values[s:s + T_in], values[s + T_in:s + T_in + T_pred], s)
            for s in _window_starts(len(values), T_in, T_pred, stride)]


def window_arrays(split, T_in: int, T_pred: int, stride: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Stacked inputs ``[n, T_in, V]`` and targets ``[n, T_pred, V]`` (copies)."""
    values = split.values if isinstance(split, RawSeries) else np.asarray(split)
    starts = np.asarray(_window_starts(len(values), T_in, T_pred, stride))
    idx = starts[:, None] + np.arange(T_in + T_pred)[None, :]
    block = values[idx]
    return block[:, :T_in].copy(), block[:, T_in:].copy()


# ---------------------------------------------------------------- synthetic data

@dataclass
class SynthSpec:
    """Sources are sinusoids plus optional AR(1) drift; variables mix sources through ``mixing``.

    ``x(t) = mixing @ s(t) + noise * eps(t)`` with
    ``s_j(t) = amplitude_j * sin(2 pi t / period_j + phase_j) + r_j(t)``.
    """
    V: int
    length: int
    periods: list[float]
    amplitudes: list[float]
    noise: list[float]
    mixing: list[list[float]] | None = None
    phases: list[float] | None = None
    ar_coef: float = 0.0
    ar_scale: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("periods", "amplitudes", "noise"):
            if len(getattr(self, name)) != self.V:
                raise ValueError(f"{name} needs {self.V} entries")
        if self.mixing is not None and np.shape(self.mixing) != (self.V, self.V):
            raise ValueError(f"mixing must be {self.V}x{self.V}")
        if self.length < 2:
            raise ValueError("length must be at least 2")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "SynthSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def synth_dataset(spec: SynthSpec) -> RawSeries:
    rng = np.random.default_rng(spec.seed)
    V, n = spec.V, spec.length
    t = np.arange(n)[:, None]
    phases = np.asarray(spec.phases) if spec.phases is not None else np.zeros(V)
    src = np.asarray(spec.amplitudes) * np.sin(2 * np.pi * t / np.asarray(spec.periods) + phases)
    if spec.ar_scale > 0:
        r = np.zeros((n, V))
        eps = rng.normal(scale=spec.ar_scale, size=(n, V))
        for i in range(1, n):
            r[i] = spec.ar_coef * r[i - 1] + eps[i]
        src = src + r
    mixing = np.eye(V) if spec.mixing is None else np.asarray(spec.mixing, dtype=np.float64)
    values = src @ mixing.T
    noise = np.asarray(spec.noise)
    if np.any(noise > 0):
        values = values + rng.normal(size=(n, V)) * noise
    return RawSeries(values, [f"x{i}" for i in range(V)], None, {"mixing": mixing})


def default_synth_spec(seed: int = 0, V: int = 8, length: int = 4000) -> SynthSpec:
    """The desk-scale preset: eight variables driven by eight mixed sources."""
    rng = np.random.default_rng(1000 + seed)
    periods = [24.0, 48.0, 96.0, 32.0, 24.0, 64.0, 16.0, 48.0][:V]
    amplitudes = list(np.round(rng.uniform(0.5, 1.5, size=V), 3))
    mixing = np.eye(V) * 0.6 + rng.uniform(0.0, 0.4, size=(V, V)) * (rng.random((V, V)) < 0.3)
    return SynthSpec(V=V, length=length, periods=periods, amplitudes=amplitudes,
                     noise=[0.1] * V, mixing=mixing.tolist(),
                     phases=list(np.round(rng.uniform(0, 2 * np.pi, size=V), 3)),
                     ar_coef=0.98, ar_scale=0.02, seed=seed)


# ---------------------------------------------------------------- presets

PRESETS: dict[str, dict] = {
    "ettm2": {"T_in": 96, "horizons": [96, 192, 336, 720]},
    "ecl": {"T_in": 96, "horizons": [96, 192, 336, 720]},
    "exchange": {"T_in": 96, "horizons": [96, 192, 336, 720]},
    "weather": {"T_in": 96, "horizons": [96, 192, 336, 720]},
    "ili": {"T_in": 36, "horizons": [24, 36, 48, 60]},
    "synthetic": {"T_in": 96, "horizons": [96]},
}
