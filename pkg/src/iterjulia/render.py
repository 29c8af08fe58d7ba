"""Escape-time pictures of the iterated filled Julia sets, written as binary PPM."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .poly_core import FAMILY_ESCAPE_RADIUS, BoundedSequence, advance

__all__ = ["Palette", "RenderSpec", "escape_times", "render", "to_ppm"]


class Palette(str, enum.Enum):
    ESCAPE_TIME = "ESCAPE_TIME"
    BINARY = "BINARY"


@dataclass(frozen=True)
class RenderSpec:
    time_index: int = 0
    center: complex = 0j
    half_width: float = 2.0
    width: int = 256
    height: int = 256
    max_horizon: int = 1000
    palette: Palette = Palette.ESCAPE_TIME
    radius: float = FAMILY_ESCAPE_RADIUS

    def __post_init__(self):
        if self.width < 16 or self.height < 16:
            raise ValueError("render needs at least 16x16 pixels")
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")
        if self.time_index < 0 or self.max_horizon < 0:
            raise ValueError("time_index and max_horizon must be non-negative")

    def pixel_centers(self) -> np.ndarray:
        hx = self.half_width
        hy = self.half_width * self.height / self.width
        xs = self.center.real + hx * ((np.arange(self.width) + 0.5) / self.width * 2 - 1)
        ys = self.center.imag + hy * (1 - (np.arange(self.height) + 0.5) / self.height * 2)
        return xs[None, :] + 1j * ys[:, None]


def escape_times(seq: BoundedSequence, spec: RenderSpec) -> np.ndarray:
    """Steps after ``time_index`` until escape; -1 where the orbit stays bounded."""
    if spec.time_index > len(seq):
        raise ValueError(f"time {spec.time_index} beyond the realized length {len(seq)}")
    end = min(len(seq), spec.time_index + spec.max_horizon)
    z = spec.pixel_centers().ravel().copy()
    n = z.size
    logdz, phase = np.zeros(n), np.ones(n, dtype=complex)
    alive = np.abs(z) <= spec.radius
    crit, esc = np.zeros(n, dtype=bool), np.full(n, -1, dtype=np.int64)
    esc[~alive] = spec.time_index
    with np.errstate(all="ignore"):
        advance(seq.window(spec.time_index, end), z, logdz, phase, alive, crit, esc,
                spec.time_index, radius=spec.radius)
    steps = np.where(alive, -1, esc - spec.time_index)
    return steps.reshape(spec.height, spec.width)


def render(seq: BoundedSequence, spec: RenderSpec) -> np.ndarray:
    """RGB image; bounded orbits are black, fast escapes bright."""
    steps = escape_times(seq, spec)
    escaped = steps >= 0
    if spec.palette is Palette.BINARY:
        level = np.where(escaped, 255, 0)
    else:
        slowest = max(1, int(steps.max()))
        level = np.where(escaped, 255 - np.floor(254 * steps / slowest), 0)
    return np.repeat(level.astype(np.uint8)[:, :, None], 3, axis=2)


def to_ppm(rgb: np.ndarray) -> bytes:
    h, w, _ = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode() + np.ascontiguousarray(rgb, dtype=np.uint8).tobytes()
