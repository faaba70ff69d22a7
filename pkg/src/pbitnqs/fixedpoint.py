"""Saturating s{6}{3} fixed-point numbers.

A value is stored as a signed 10-bit integer ``raw`` and read as
``raw * 2**-3``: one sign bit, six integer bits, three fraction bits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

FRAC_BITS = 3
INT_BITS = 6
TOTAL_BITS = 1 + INT_BITS + FRAC_BITS
SCALE = 1 << FRAC_BITS
LSB = 1.0 / SCALE
RAW_MIN = -(1 << (TOTAL_BITS - 1))
RAW_MAX = (1 << (TOTAL_BITS - 1)) - 1
MIN_VALUE = RAW_MIN * LSB
MAX_VALUE = RAW_MAX * LSB


@dataclass(frozen=True, order=True)
class FixedPoint:
    raw: int

    def __post_init__(self):
        if not RAW_MIN <= self.raw <= RAW_MAX:
            raise ValueError(f"raw value {self.raw} outside [{RAW_MIN}, {RAW_MAX}]")

    @property
    def value(self) -> float:
        return self.raw * LSB

    def __float__(self) -> float:
        return self.value

    def __repr__(self) -> str:
        return f"FixedPoint({self.value:g})"


def quantize_raw(x):
    """Round to the nearest multiple of 1/8 (ties to even) and saturate.

    Works elementwise on arrays; returns raw integers as ``int16``.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot quantize non-finite values")
    x = np.clip(x, MIN_VALUE - 1.0, MAX_VALUE + 1.0)
    raw = np.clip(np.rint(x * SCALE), RAW_MIN, RAW_MAX)
    return raw.astype(np.int16)


def quantize(x: float) -> FixedPoint:
    if not math.isfinite(x):
        raise ValueError(f"cannot quantize non-finite value {x!r}")
    return FixedPoint(int(quantize_raw(x)))


def quantize_values(x) -> np.ndarray:
    """Quantize and return float values (the dequantized representation)."""
    return quantize_raw(x).astype(np.float64) * LSB


def saturate_raw(raw):
    return np.clip(raw, RAW_MIN, RAW_MAX)
