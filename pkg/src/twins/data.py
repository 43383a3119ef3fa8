"""CSV ingestion, chronological splits, standardization, window sampling,
and synthetic generators with non-stationary periodic structure."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

STD_FLOOR = 1e-8


@dataclass
class RawSeries:
    names: list
    values: np.ndarray       # (C, N) float64


@dataclass
class SplitDataset:
    train: np.ndarray        # (C, n_train), standardized
    val: np.ndarray
    test: np.ndarray
    mean: np.ndarray         # (C, 1) train mean, raw units
    scale: np.ndarray        # (C, 1) divisor actually used: max(std, floor)

    def destandardize(self, x: np.ndarray) -> np.ndarray:
        return x * self.scale + self.mean


@dataclass
class WindowBatch:
    inputs: np.ndarray       # (B, 1, C, L)
    targets: np.ndarray      # (B, C, T)
    starts: np.ndarray       # (B,) window start offsets


def load_csv(path: str) -> RawSeries:
    """Header + numeric rows; a leading date column is detected and dropped.

    Any unparseable or missing cell is a hard error naming its position.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: no data rows")

    def numeric(cell: str) -> bool:
        try:
            float(cell)
            return True
        except ValueError:
            return False

    has_date = not numeric(rows[0][0])
    first_col = 1 if has_date else 0
    names = [h.strip() for h in header[first_col:]]
    width = len(header)
    out = np.empty((len(rows), len(names)))
    for i, row in enumerate(rows):
        line = i + 2  # 1-based, after the header line
        if len(row) != width:
            raise ValueError(
                f"{path}: ragged row {line}: {len(row)} cells, expected {width}"
            )
        for j, cell in enumerate(row[first_col:]):
            cell = cell.strip()
            if cell == "" or cell.lower() == "nan":
                raise ValueError(
                    f"{path}: missing value at row {line}, column {j + first_col + 1}"
                )
            try:
                out[i, j] = float(cell)
            except ValueError:
                raise ValueError(
                    f"{path}: non-numeric cell at row {line}, "
                    f"column {j + first_col + 1}: {cell!r}"
                ) from None
    return RawSeries(names, out.T.copy())


def split_standardize(raw: RawSeries, ratios=(0.6, 0.2, 0.2)) -> SplitDataset:
    """Chronological split; all splits standardized by train-split stats."""
    if sum(ratios) > 1.0 + 1e-9:
        raise ValueError(f"split ratios {ratios} sum past 1")
    N = raw.values.shape[1]
    n_train = int(N * ratios[0])
    n_val = int(N * ratios[1])
    n_test = int(N * ratios[2])
    if min(n_train, n_val, n_test) < 1:
        raise ValueError(
            f"empty split: sizes {(n_train, n_val, n_test)} from N={N}"
        )
    train_raw = raw.values[:, :n_train]
    mean = train_raw.mean(axis=1, keepdims=True)
    scale = np.maximum(train_raw.std(axis=1, keepdims=True), STD_FLOOR)
    std = lambda a: (a - mean) / scale
    return SplitDataset(
        train=std(train_raw),
        val=std(raw.values[:, n_train:n_train + n_val]),
        test=std(raw.values[:, n_train + n_val:n_train + n_val + n_test]),
        mean=mean, scale=scale,
    )


def window_count(length: int, L: int, T: int, stride: int = 1) -> int:
    if length < L + T:
        return 0
    return (length - L - T) // stride + 1


def make_windows(values: np.ndarray, L: int, T: int, stride: int = 1) -> WindowBatch:
    """Lookback/target pairs at every stride offset of one split."""
    C, n = values.shape
    count = window_count(n, L, T, stride)
    if count == 0:
        raise ValueError(
            f"split of length {n} too short for L={L}, T={T}"
        )
    starts = np.arange(count) * stride
    inputs = np.empty((count, 1, C, L))
    targets = np.empty((count, C, T))
    for i, s in enumerate(starts):
        inputs[i, 0] = values[:, s:s + L]
        targets[i] = values[:, s + L:s + L + T]
    return WindowBatch(inputs, targets, starts)


def synth_multiperiod(length: int, channels: int, components,
                      lag_per_channel: int = 0, noise_std: float = 0.0,
                      seed: int = 0,
                      names: Optional[list] = None) -> RawSeries:
    """Sum of sinusoids, each optionally active only on a sub-range.

    Channel c is the same composite signal delayed by c*lag_per_channel
    samples, plus independent Gaussian noise. Bitwise deterministic per seed.
    """
    comps = list(components)
    if not comps:
        raise ValueError("components must be non-empty")
    for period, _, _ in comps:
        if period < 2:
            raise ValueError(f"component period must be >= 2, got {period}")

    def f(u: np.ndarray) -> np.ndarray:
        total = np.zeros_like(u)
        for period, amplitude, active in comps:
            wave = amplitude * np.sin(2.0 * np.pi * u / period)
            if active is not None:
                lo, hi = active
                wave = wave * ((u >= lo) & (u < hi))
            total += wave
        return total

    t = np.arange(length, dtype=np.float64)
    values = np.stack([f(t - c * lag_per_channel) for c in range(channels)])
    if noise_std > 0.0:
        rng = np.random.default_rng(seed)
        values = values + rng.normal(0.0, noise_std, size=values.shape)
    if names is None:
        names = [f"ch{c}" for c in range(channels)]
    return RawSeries(names, values)
