"""Windowed, normalised response datasets.

Binary dataset file layout (integers and floats little-endian)::

    b"NLDS"                     4 bytes magic
    u32 version                 currently 1
    u32 count                   number of windows
    u32 window_len
    f64 rate                    Hz
    u32 n, n bytes              UTF-8 JSON with dataset attributes
    count x window:
        u32 n, n bytes          UTF-8 JSON window metadata; keys "meta",
                                "split", "scale_min", "scale_max", "degenerate"
        window_len x f64        samples
    u32 crc32                   zlib.crc32 of every preceding byte
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import struct
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dynamics import DT_INT, OUTPUT_RATE, Model, apply_damage, simulate_batch
from .errors import (
    ChecksumError,
    DomainError,
    FileFormatError,
    ParseError,
    TruncatedFileError,
    VersionMismatchError,
)
from .excitation import AmplitudeRange, TimeSeries, add_measurement_noise, draw_amplitude, scale_to_peak, white_noise

logger = logging.getLogger(__name__)

MAGIC = b"NLDS"
VERSION = 1
WINDOW_LEN = 500
SPLITS = ("train", "val", "score", "none")


@dataclass(frozen=True, eq=False)
class Window:
    """One response segment with its provenance and min-max scale record."""

    values: np.ndarray
    meta: dict = field(default_factory=dict)
    scale_min: float | None = None
    scale_max: float | None = None
    degenerate: bool = False

    def __len__(self):
        return len(self.values)

    @property
    def normalized(self):
        return self.scale_min is not None

    def denormalize(self):
        if not self.normalized:
            return self.values.copy()
        if self.degenerate:
            return np.full(len(self.values), self.scale_min)
        return self.scale_min + self.values * (self.scale_max - self.scale_min)


@dataclass
class Dataset:
    windows: list
    window_len: int
    rate: float
    splits: list = None
    attrs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.splits is None:
            self.splits = ["none"] * len(self.windows)
        if len(self.splits) != len(self.windows):
            raise DomainError("one split label per window is required")
        for w in self.windows:
            if len(w) != self.window_len:
                raise DomainError(f"window of length {len(w)} in a dataset of length {self.window_len}")

    def __len__(self):
        return len(self.windows)

    @property
    def labels(self):
        return [w.meta.get("damage", 0.0) for w in self.windows]

    def indices(self, split=None, damage=None, dof=None):
        out = []
        for i, w in enumerate(self.windows):
            if split is not None and self.splits[i] != split:
                continue
            if damage is not None and not math.isclose(w.meta.get("damage", 0.0), damage, abs_tol=1e-12):
                continue
            if dof is not None and w.meta.get("dof", 0) != dof:
                continue
            out.append(i)
        return out

    def array(self, idx=None):
        idx = range(len(self.windows)) if idx is None else idx
        return np.stack([self.windows[i].values for i in idx]) if len(idx) else np.zeros((0, self.window_len))

    def levels(self, split=None):
        return sorted({self.windows[i].meta.get("damage", 0.0) for i in self.indices(split=split)})

    def subset(self, idx):
        return Dataset([self.windows[i] for i in idx], self.window_len, self.rate,
                       [self.splits[i] for i in idx], dict(self.attrs))

    def __add__(self, other):
        if (self.window_len, self.rate) != (other.window_len, other.rate):
            raise DomainError("cannot concatenate datasets with different window length or rate")
        return Dataset(self.windows + other.windows, self.window_len, self.rate,
                       self.splits + other.splits, {**other.attrs, **self.attrs})


# --------------------------------------------------------------------------
# windowing


def segment(series, window_len: int = WINDOW_LEN, meta=None):
    """Consecutive non-overlapping windows; the trailing remainder is dropped."""
    x = series.samples if isinstance(series, TimeSeries) else np.asarray(series, dtype=float)
    if window_len < 1:
        raise DomainError("window_len must be >= 1")
    if len(x) < window_len:
        raise DomainError(f"series of length {len(x)} is shorter than window_len {window_len}")
    n = len(x) // window_len
    return [Window(x[i * window_len : (i + 1) * window_len].copy(), dict(meta or {})) for i in range(n)]


def minmax_normalize(window):
    """Map a window affinely onto [0, 1] using its own extrema.

    Constant windows map to 0.5 and are flagged degenerate.
    """
    if not isinstance(window, Window):
        window = Window(np.asarray(window, dtype=float))
    x = window.values
    if len(x) == 0:
        raise DomainError("cannot normalise an empty window")
    lo = float(np.min(x))
    hi = float(np.max(x))
    if hi == lo:
        return replace(window, values=np.full(len(x), 0.5), scale_min=lo, scale_max=hi, degenerate=True)
    return replace(window, values=(x - lo) / (hi - lo), scale_min=lo, scale_max=hi, degenerate=False)


def split(dataset: Dataset, train_fraction: float = 0.8, seed=0, subset=None):
    """Randomly assign ``round(N f)`` windows to "train" and the rest to "val".

    Only the windows in ``subset`` (default: all) are reassigned.
    """
    idx = list(range(len(dataset))) if subset is None else list(subset)
    if len(idx) < 2 and train_fraction < 1.0:
        raise DomainError("need at least 2 windows to split")
    if not (0.0 < train_fraction <= 1.0):
        raise DomainError("train_fraction must lie in (0, 1]")
    n_train = int(round(len(idx) * train_fraction))
    perm = np.random.default_rng(seed).permutation(len(idx))
    splits = list(dataset.splits)
    for rank, j in enumerate(perm):
        splits[idx[j]] = "train" if rank < n_train else "val"
    return Dataset(list(dataset.windows), dataset.window_len, dataset.rate, splits, dict(dataset.attrs))


# --------------------------------------------------------------------------
# benchmark generation


def window_streams(seed: int, stream: int, level: float, index: int, n_dof: int):
    """Independent generators for one simulated window.

    Returns ``(amplitude_rng, excitation_rng, [noise_rng per dof])``; the
    keys make generation independent of order and batching.
    """
    level_code = int(round(level * 1e6))
    ss = np.random.SeedSequence([int(seed), int(stream), level_code, int(index)])
    children = ss.spawn(2 + n_dof)
    gens = [np.random.default_rng(c) for c in children]
    return gens[0], gens[1], gens[2:]


def build_benchmark(
    model: Model,
    levels,
    n_windows: int,
    amplitude: AmplitudeRange,
    seed: int = 0,
    stream: int = 0,
    noise_level: float = 0.1,
    window_len: int = WINDOW_LEN,
    output_rate: float = OUTPUT_RATE,
    dt_int: float = DT_INT,
    split_label: str = "none",
    batch: int = 250,
    blowup: float = 10.0,
):
    """Simulate ``n_windows`` noisy, normalised windows per damage level.

    For each window: draw a peak acceleration, generate white noise at the
    integration rate, scale it to the peak, integrate the damaged model from
    rest, sample the displacement at ``output_rate``, add measurement noise
    and min-max normalise. Multi-DOF systems yield one window per DOF.
    """
    if n_windows < 1:
        raise DomainError("n_windows must be >= 1")
    levels = [float(d) for d in levels]
    for d in levels:
        apply_damage(model, d)  # validates the level
    duration = window_len / output_rate
    n_exc = int(round(duration / dt_int))
    windows = []
    for level in levels:
        for start in range(0, n_windows, batch):
            idx = range(start, min(start + batch, n_windows))
            accels, peaks, noise_rngs = [], [], []
            for i in idx:
                r_amp, r_exc, r_noise = window_streams(seed, stream, level, i, model.n_dof)
                peak = draw_amplitude(amplitude, r_amp)
                accels.append(scale_to_peak(white_noise(n_exc, dt_int, r_exc), peak).samples)
                peaks.append(peak)
                noise_rngs.append(r_noise)
            resp = simulate_batch(model, np.stack(accels), dt_int, damage=level, dt_int=dt_int,
                                  output_rate=output_rate, blowup=blowup)
            for j, i in enumerate(idx):
                for dof in range(model.n_dof):
                    clean = TimeSeries(resp[j, dof, :window_len], 1.0 / output_rate)
                    noisy = add_measurement_noise(clean, noise_level, noise_rngs[j][dof])
                    meta = {
                        "system": model.name,
                        "dof": dof,
                        "damage": level,
                        "peak": peaks[j],
                        "seed": int(seed),
                        "stream": int(stream),
                        "index": int(i),
                    }
                    windows.append(minmax_normalize(Window(noisy.samples, meta)))
        logger.info("built %d windows at damage %.3f", n_windows * model.n_dof, level)
    attrs = {"system": model.name, "n_dof": model.n_dof, "noise_level": noise_level}
    return Dataset(windows, window_len, output_rate, [split_label] * len(windows), attrs)


# --------------------------------------------------------------------------
# persistence


def _json_bytes(obj):
    return json.dumps(obj, sort_keys=True, allow_nan=False).encode("utf-8")


def save(dataset: Dataset, path):
    parts = [
        MAGIC,
        struct.pack("<IIId", VERSION, len(dataset), dataset.window_len, float(dataset.rate)),
    ]
    attrs = _json_bytes(dataset.attrs)
    parts += [struct.pack("<I", len(attrs)), attrs]
    for w, s in zip(dataset.windows, dataset.splits):
        meta = _json_bytes({
            "meta": w.meta,
            "split": s,
            "scale_min": w.scale_min,
            "scale_max": w.scale_max,
            "degenerate": bool(w.degenerate),
        })
        parts += [struct.pack("<I", len(meta)), meta, np.ascontiguousarray(w.values, dtype="<f8").tobytes()]
    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load(path) -> Dataset:
    data = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise TruncatedFileError(f"{path}: truncated at byte {len(data)} (needed {pos + n})")
        out = data[pos : pos + n]
        pos += n
        return out

    if take(4) != MAGIC:
        raise FileFormatError(f"{path}: not a dataset file (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise VersionMismatchError(f"{path}: dataset format version {version}, expected {VERSION}")
    count, window_len, rate = struct.unpack("<IId", take(16))
    try:
        attrs = json.loads(take(struct.unpack("<I", take(4))[0]))
        windows, splits = [], []
        for _ in range(count):
            rec = json.loads(take(struct.unpack("<I", take(4))[0]))
            values = np.frombuffer(take(8 * window_len), dtype="<f8").astype(float)
            windows.append(Window(values, rec["meta"], rec["scale_min"], rec["scale_max"], rec["degenerate"]))
            splits.append(rec["split"])
    except TruncatedFileError:
        if len(data) >= 8 and struct.unpack("<I", data[-4:])[0] == zlib.crc32(data[:-4]):
            raise FileFormatError(f"{path}: inconsistent window table") from None
        raise
    except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
        raise ChecksumError(f"{path}: corrupted content ({exc})") from None
    end = pos
    (crc,) = struct.unpack("<I", take(4))
    if crc != zlib.crc32(data[:end]):
        raise ChecksumError(f"{path}: checksum mismatch")
    if pos != len(data):
        raise FileFormatError(f"{path}: {len(data) - pos} trailing bytes")
    return Dataset(windows, window_len, rate, splits, attrs)


# --------------------------------------------------------------------------
# external measurements


def _sniff_delimiter(line):
    for d in (",", ";", "\t"):
        if d in line:
            return d
    return None


def ingest_external(path, window_len: int, rate: float, damage: float = 0.0, split_label="none",
                    delimiter=None, source=None):
    """Read a delimited text file, one column per channel, into a dataset.

    An optional non-numeric first row is treated as a header. Each column is
    segmented into ``window_len`` windows and normalised.
    """
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise DomainError(f"{path}: empty file")
    if delimiter is None:
        delimiter = _sniff_delimiter(lines[0])
    if delimiter is None:
        rows = [ln.split() for ln in lines]
    else:
        rows = list(csv.reader(io.StringIO("\n".join(lines)), delimiter=delimiter))
    header = None
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        header = [c.strip() for c in rows[0]]
        rows = rows[1:]
    if not rows:
        raise DomainError(f"{path}: no data rows")
    width = len(header) if header else len(rows[0])
    data = np.empty((len(rows), width))
    first = 2 if header else 1
    for r, row in enumerate(rows):
        if len(row) != width:
            raise ParseError(f"expected {width} columns, found {len(row)}", row=r + first)
        try:
            data[r] = [float(c) for c in row]
        except ValueError as exc:
            raise ParseError(f"non-numeric cell ({exc})", row=r + first) from None
    if not np.all(np.isfinite(data)):
        bad = int(np.argwhere(~np.isfinite(data))[0, 0])
        raise ParseError("non-finite value", row=bad + first)
    windows = []
    for ch in range(width):
        meta = {"system": source or Path(path).stem, "dof": ch, "damage": float(damage)}
        if header:
            meta["channel"] = header[ch]
        for i, w in enumerate(segment(TimeSeries(data[:, ch], 1.0 / rate), window_len, meta)):
            w.meta["index"] = i
            windows.append(minmax_normalize(w))
    attrs = {"source": str(path), "n_dof": width}
    return Dataset(windows, window_len, rate, [split_label] * len(windows), attrs)
