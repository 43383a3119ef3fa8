"""Multi-scale convolution embedding with one shared kernel store.

A bank of nested kernels of widths 1, 3, 7, ..., 2^n - 1, all views into a
single parameter array: the width-(2^i - 1) kernel is the centered slice of
the widest one. Each input series is convolved with every width and the
results are summed, so coarse trend and fine oscillation land in the same
d-dimensional point feature.

Point maps are (d, C, L); an arbitrary batch prefix in front of that is
allowed everywhere (shapes below are written for the unbatched case).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class WaveletKernelBank:
    base_weights: Tensor          # (d, 1, K_max), the single shared store
    num_scales: int
    kernel_sizes: list            # [1, 3, 7, ..., 2^n - 1]
    d: int


def _as_rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


def build_kernel_bank(d: int, num_scales: int, init_seed=0) -> WaveletKernelBank:
    """Widths 2^i - 1 for i = 1..num_scales; init uniform in +-1/sqrt(K_max)."""
    if num_scales < 1:
        raise ValueError(f"num_scales must be >= 1, got {num_scales}")
    if d < 1:
        raise ValueError(f"embed width d must be >= 1, got {d}")
    sizes = [2 ** i - 1 for i in range(1, num_scales + 1)]
    k_max = sizes[-1]
    rng = _as_rng(init_seed)
    bound = 1.0 / np.sqrt(k_max)
    w = rng.uniform(-bound, bound, size=(d, 1, k_max))
    return WaveletKernelBank(Tensor(w, requires_grad=True), num_scales, sizes, d)


def extract_scale_kernel(bank: WaveletKernelBank, i: int) -> Tensor:
    """Centered slice of width 2^i - 1; gradients flow into the shared store."""
    if not 1 <= i <= bank.num_scales:
        raise ValueError(
            f"scale index {i} out of range 1..{bank.num_scales}"
        )
    k_i = bank.kernel_sizes[i - 1]
    k_max = bank.kernel_sizes[-1]
    start = (k_max - k_i) // 2
    return ad.narrow(bank.base_weights, axis=2, start=start, length=k_i)


def _swap_last3_front2(x: Tensor) -> Tensor:
    # (..., a, b, L) -> (..., b, a, L)
    n = x.ndim
    axes = tuple(range(n - 3)) + (n - 2, n - 3, n - 1)
    return ad.transpose(x, axes)


def wconv_embed(x: Tensor, bank: WaveletKernelBank) -> Tensor:
    """(1, C, L) raw series -> (d, C, L) point features, summed over scales.

    Channel independent: every series is convolved with the same bank.
    """
    if x.ndim < 3 or x.shape[-3] != 1:
        raise ValueError(
            f"wconv_embed expects (..., 1, C, L), got {x.shape}"
        )
    xc = _swap_last3_front2(x)  # (..., C, 1, L)
    out = None
    for i in range(1, bank.num_scales + 1):
        kern = extract_scale_kernel(bank, i)       # (d, 1, 2^i - 1)
        y = ad.conv1d(xc, kern)                    # (..., C, d, L)
        out = y if out is None else ad.add(out, y)
    return _swap_last3_front2(out)                 # (..., d, C, L)


def init_position_table(d: int, L: int, rng) -> Tensor:
    """Trainable (d, L) table, small uniform init."""
    rng = _as_rng(rng)
    return Tensor(rng.uniform(-0.02, 0.02, size=(d, L)), requires_grad=True)


def add_position(x: Tensor, pos: Tensor) -> Tensor:
    """Add a (d, L) table to a (d, C, L) point map, broadcast over C."""
    if pos.ndim != 2:
        raise ValueError(f"position table must be (d, L), got {pos.shape}")
    d, L = pos.shape
    if x.shape[-3] != d or x.shape[-1] != L:
        raise ValueError(
            f"position table {pos.shape} does not match point map {x.shape}"
        )
    return ad.add(x, ad.reshape(pos, (d, 1, L)))


def linear_patch_embed(x: Tensor, patch_len: int, stride: int,
                       w: Tensor, b: Tensor) -> Tensor:
    """Baseline embedding: one shared affine map per raw patch.

    (1, C, L) -> (C, P, D) with P = L / patch_len; w is (patch_len, D).
    """
    if stride != patch_len:
        raise ValueError(
            f"patches are non-overlapping: stride {stride} != patch_len {patch_len}"
        )
    if x.ndim < 3 or x.shape[-3] != 1:
        raise ValueError(f"linear_patch_embed expects (..., 1, C, L), got {x.shape}")
    L = x.shape[-1]
    if L % patch_len != 0:
        raise ValueError(f"L={L} not divisible by patch_len={patch_len}")
    if w.ndim != 2 or w.shape[0] != patch_len:
        raise ValueError(f"weight must be (patch_len, D), got {w.shape}")
    C = x.shape[-2]
    P = L // patch_len
    lead = x.shape[:-3]
    xg = ad.reshape(x, lead + (C, P, patch_len))
    return ad.add(ad.matmul(xg, w), b)
