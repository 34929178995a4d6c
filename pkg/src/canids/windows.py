"""Sliding-window builders over labeled traffic.

Two window shapes are produced: w x 29 binary grids of stacked
identifier bits, and plain identifier sequences.  A window is labeled 1
if any frame inside it carries an attack label, 0 otherwise.  The grid
builder supports both the coarse stride (step = window, no overlap) and
the dense stride (step 1), which guarantees that any attack run no
longer than the window is fully contained in at least one window.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import IO

import numpy as np

from .core import EXTENDED_ID_BITS, TrafficLog, id_bits_matrix

logger = logging.getLogger(__name__)

DEFAULT_GRID_WINDOW = 29
DEFAULT_SEQUENCE_WINDOW = 16

_GRID_MAGIC = b"IDBG"
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class BitGridSet:
    """Stacked id-bit windows: grids[g, i, j] is bit j of the id of the
    i-th frame in window g."""

    grids: np.ndarray
    labels: np.ndarray
    starts: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.grids.ndim != 3 or self.grids.shape[2] != EXTENDED_ID_BITS:
            raise ValueError("grids must have shape (count, window, 29)")
        if self.labels.shape != (self.grids.shape[0],):
            raise ValueError("labels length must match grid count")
        if self.starts is not None and self.starts.shape != self.labels.shape:
            raise ValueError("starts length must match grid count")

    def __len__(self) -> int:
        return self.grids.shape[0]

    @property
    def window(self) -> int:
        return self.grids.shape[1]


@dataclass(frozen=True)
class IdSequenceSet:
    """Windows of raw identifiers with binary any-attack labels."""

    ids: np.ndarray
    labels: np.ndarray
    starts: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.ids.ndim != 2:
            raise ValueError("ids must have shape (count, window)")
        if self.labels.shape != (self.ids.shape[0],):
            raise ValueError("labels length must match sequence count")
        if self.starts is not None and self.starts.shape != self.labels.shape:
            raise ValueError("starts length must match sequence count")

    def __len__(self) -> int:
        return self.ids.shape[0]

    @property
    def window(self) -> int:
        return self.ids.shape[1]


def _window_layout(n: int, window: int, step: int) -> np.ndarray:
    if window < 1:
        raise ValueError("window must be >= 1")
    if step < 1:
        raise ValueError("step must be >= 1")
    if n < window:
        return np.empty(0, dtype=np.int64)
    return np.arange(0, n - window + 1, step, dtype=np.int64)


def window_count(n: int, window: int, step: int) -> int:
    """Number of full windows over n frames: floor((n - window)/step) + 1,
    or zero when n < window."""
    return len(_window_layout(n, window, step))


def _attack_flags(log: TrafficLog) -> np.ndarray:
    if not log.is_labeled:
        raise ValueError("log must be labeled")
    return np.array([lf.label.is_attack for lf in log], dtype=bool)


def _window_labels(attack: np.ndarray, starts: np.ndarray, window: int) -> np.ndarray:
    cum = np.concatenate([[0], np.cumsum(attack)])
    return (cum[starts + window] - cum[starts] > 0).astype(np.uint8)


def build_bit_grids(
    log: TrafficLog, window: int = DEFAULT_GRID_WINDOW, step: int = DEFAULT_GRID_WINDOW
) -> BitGridSet:
    """Stack consecutive frame ids into w x 29 bit grids over the
    time-ordered log.  Trailing frames that do not fill a window are
    dropped."""
    attack = _attack_flags(log)
    starts = _window_layout(len(log), window, step)
    if len(starts) == 0:
        if len(log):
            logger.warning("log of %d frames is shorter than window %d", len(log), window)
        return BitGridSet(
            grids=np.zeros((0, window, EXTENDED_ID_BITS), dtype=np.uint8),
            labels=np.zeros(0, dtype=np.uint8),
            starts=starts,
        )
    ids = np.array([lf.frame.can_id for lf in log], dtype=np.int64)
    bits = id_bits_matrix(ids)
    grids = bits[starts[:, None] + np.arange(window)]
    return BitGridSet(grids=grids, labels=_window_labels(attack, starts, window), starts=starts)


def build_id_sequences(
    log: TrafficLog, window: int = DEFAULT_SEQUENCE_WINDOW, step: int = 1
) -> IdSequenceSet:
    """Group consecutive identifiers into fixed-length sequences."""
    attack = _attack_flags(log)
    starts = _window_layout(len(log), window, step)
    if len(starts) == 0:
        if len(log):
            logger.warning("log of %d frames is shorter than window %d", len(log), window)
        return IdSequenceSet(
            ids=np.zeros((0, window), dtype=np.int64),
            labels=np.zeros(0, dtype=np.uint8),
            starts=starts,
        )
    ids = np.array([lf.frame.can_id for lf in log], dtype=np.int64)
    seqs = ids[starts[:, None] + np.arange(window)]
    return IdSequenceSet(ids=seqs, labels=_window_labels(attack, starts, window), starts=starts)


def save_bit_grids(grids: BitGridSet, grid_stream: IO[bytes], label_stream: IO[bytes]) -> None:
    """Persist grids as packed bitmaps plus a label vector file.

    Grid file layout: 4-byte magic, u32 version, u32 count, u32 window,
    then ceil(window*29/8) bytes per grid, rows packed MSB-first.
    Label file layout: u32 count, then one byte per grid.
    """
    count, window = len(grids), grids.window
    header = np.array([_FORMAT_VERSION, count, window], dtype="<u4")
    grid_stream.write(_GRID_MAGIC)
    grid_stream.write(header.tobytes())
    for g in range(count):
        grid_stream.write(np.packbits(grids.grids[g].reshape(-1)).tobytes())
    label_stream.write(np.array([count], dtype="<u4").tobytes())
    label_stream.write(grids.labels.astype(np.uint8).tobytes())


def load_bit_grids(grid_stream: IO[bytes], label_stream: IO[bytes]) -> BitGridSet:
    """Read grids written by save_bit_grids.  Window start offsets are
    not part of the on-disk format."""
    magic = grid_stream.read(4)
    if magic != _GRID_MAGIC:
        raise ValueError("not a packed bit-grid file")
    version, count, window = np.frombuffer(grid_stream.read(12), dtype="<u4")
    if version != _FORMAT_VERSION:
        raise ValueError(f"unsupported bit-grid format version {version}")
    per_grid = (window * EXTENDED_ID_BITS + 7) // 8
    raw = grid_stream.read(int(per_grid) * int(count))
    if len(raw) != per_grid * count:
        raise ValueError("truncated bit-grid file")
    packed = np.frombuffer(raw, dtype=np.uint8).reshape(count, per_grid)
    bits = np.unpackbits(packed, axis=1)[:, : window * EXTENDED_ID_BITS]
    grids = bits.reshape(count, window, EXTENDED_ID_BITS)
    (label_count,) = np.frombuffer(label_stream.read(4), dtype="<u4")
    if label_count != count:
        raise ValueError("label file count does not match grid file")
    labels = np.frombuffer(label_stream.read(int(count)), dtype=np.uint8)
    if len(labels) != count:
        raise ValueError("truncated label file")
    return BitGridSet(grids=grids, labels=labels.copy(), starts=None)


def save_id_sequences(seqs: IdSequenceSet, stream: IO[str]) -> None:
    """Persist sequences as CSV: start, id0..id{w-1}, label."""
    window = seqs.window
    header = ["start"] + [f"id{i}" for i in range(window)] + ["label"]
    stream.write(",".join(header) + "\n")
    starts = seqs.starts if seqs.starts is not None else np.full(len(seqs), -1, dtype=np.int64)
    for g in range(len(seqs)):
        row = [str(int(starts[g]))]
        row.extend(str(int(v)) for v in seqs.ids[g])
        row.append(str(int(seqs.labels[g])))
        stream.write(",".join(row) + "\n")


def load_id_sequences(stream: IO[str]) -> IdSequenceSet:
    header = stream.readline().strip().split(",")
    if len(header) < 3 or header[0] != "start" or header[-1] != "label":
        raise ValueError("not an id-sequence file")
    window = len(header) - 2
    starts, rows, labels = [], [], []
    for line in stream:
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != window + 2:
            raise ValueError(f"sequence row has {len(parts)} fields, expected {window + 2}")
        starts.append(int(parts[0]))
        rows.append([int(v) for v in parts[1:-1]])
        labels.append(int(parts[-1]))
    return IdSequenceSet(
        ids=np.array(rows, dtype=np.int64).reshape(len(labels), window),
        labels=np.array(labels, dtype=np.uint8),
        starts=np.array(starts, dtype=np.int64),
    )
