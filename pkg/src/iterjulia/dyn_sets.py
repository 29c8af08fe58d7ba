"""Survival sets, petal geometry and area estimation."""
from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cloud import PointCloud
from .poly_core import (
    FAMILY_BOUNDS,
    FAMILY_ESCAPE_RADIUS,
    P1,
    P2,
    BoundedSequence,
    SequenceBounds,
    escape_radius,
    eval_op,
)

__all__ = [
    "Method",
    "PointCloud",
    "PetalModel",
    "MeasureReport",
    "seed_disc",
    "survival_set",
    "petal_contains",
    "verify_petal",
    "PetalCheck",
    "measure",
    "lemma21_decay",
    "Lemma21Fit",
    "lemma22_shrink",
    "FitFailure",
    "DISC_RADIUS",
    "DISC_AREA",
    "classification_stability",
]

DISC_RADIUS = 1 / 3
DISC_AREA = math.pi / 9


class Method(str, enum.Enum):
    GRID = "GRID"
    MONTE_CARLO = "MONTE_CARLO"


class FitFailure(RuntimeError):
    pass


def seed_disc(center: complex = 0j, radius: float = DISC_RADIUS, resolution: int = 512,
              method: Method | str = Method.GRID, seed: int = 0, n_points: int | None = None,
              t0: int = 0) -> PointCloud:
    """Sample ``D(center, radius)``.

    GRID keeps the centres of the ``resolution x resolution`` square cells
    covering the bounding box that fall inside the closed disc; each point
    stands for one cell.  MONTE_CARLO draws ``n_points`` (default
    ``resolution**2``) uniform points, each weighted ``area / n_points``.
    """
    method = Method(method)
    if not radius > 0:
        raise ValueError("radius must be positive")
    if method is Method.GRID:
        if resolution < 2:
            raise ValueError("resolution must be >= 2")
        h = 2 * radius / resolution
        u = -radius + (np.arange(resolution) + 0.5) * h
        x, y = np.meshgrid(u, u)
        pts = (x + 1j * y).ravel()
        pts = pts[np.abs(pts) <= radius]
        cloud = PointCloud(z0=pts + center, cell_area=h * h, t0=t0,
                           region=f"disc({center.real!r},{center.imag!r},{radius!r})/grid{resolution}")
    else:
        n = resolution**2 if n_points is None else n_points
        rng = np.random.default_rng(seed)
        r = radius * np.sqrt(rng.random(n))
        th = 2 * math.pi * rng.random(n)
        cloud = PointCloud(z0=center + r * np.exp(1j * th), cell_area=math.pi * radius**2 / n, t0=t0,
                           region=f"disc({center.real!r},{center.imag!r},{radius!r})/mc{n}")
    cloud.method = method.value
    cloud.seed = seed
    return cloud


def survival_set(seq: BoundedSequence, m: int, n: int, cloud: PointCloud,
                 radius: float = FAMILY_ESCAPE_RADIUS) -> PointCloud:
    """Transport ``cloud`` (seeded at time ``m``) to time ``n``; survivors are alive."""
    if cloud.m != m:
        raise ValueError(f"cloud lives at time {cloud.m}, not {m}")
    return cloud.transport(seq, n, radius=radius)


@dataclass(frozen=True)
class PetalModel:
    """Attracting petal of ``P2`` at 0, described in the coordinate ``w = -1/z``.

    ``U = {Re w > threshold} U {|Im w| > cusp_width + cusp_growth * log1p(threshold - Re w)}``.
    Its complement near 0 is a cusp along the positive real axis.  With
    ``cusp_growth = 0`` and ``cusp_width = inf`` this is the plain disc
    ``Re(-1/z) > threshold``.
    """

    threshold: float = 5.0
    cusp_width: float = 1.0
    cusp_growth: float = 2.0

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")

    @property
    def bounding_radius(self) -> float:
        return 1 / min(self.threshold, self.cusp_width)

    def contains(self, z):
        z = np.asarray(z, dtype=complex)
        nz = z != 0
        with np.errstate(divide="ignore", invalid="ignore"):
            w = -1 / np.where(nz, z, 1)
        x, y = w.real, w.imag
        prof = self.cusp_width + self.cusp_growth * np.log1p(np.maximum(0.0, self.threshold - x))
        return nz & ((x > self.threshold) | (np.abs(y) > prof))


def petal_contains(petal: PetalModel, z) -> bool | np.ndarray:
    out = petal.contains(z)
    return bool(out) if out.ndim == 0 else out


@dataclass
class PetalCheck:
    ok: bool
    counterexample: complex | None = None
    n_samples: int = 0

    def __bool__(self) -> bool:
        return self.ok


def sample_petal(petal: PetalModel, n: int, rng: np.random.Generator) -> np.ndarray:
    r = petal.bounding_radius
    out: list[np.ndarray] = []
    have = 0
    while have < n:
        z = rng.uniform(-r, r, 4 * n) + 1j * rng.uniform(-r, r, 4 * n)
        z = z[petal.contains(z)]
        out.append(z)
        have += z.size
    return np.concatenate(out)[:n]


def verify_petal(petal: PetalModel, n_samples: int = 10_000, n_steps: int = 100,
                 seed: int = 0) -> PetalCheck:
    """Monte-Carlo check that ``P2`` keeps petal points in the petal and that
    ``P2 / 12`` sends them into ``D(0, 1/3)``."""
    if n_samples < 1 or n_steps < 1:
        raise ValueError("n_samples and n_steps must be >= 1")
    rng = np.random.default_rng(seed)
    z0 = sample_petal(petal, n_samples, rng)
    bad = np.abs(z0 * (1 + z0) / 12) >= DISC_RADIUS
    z = z0.copy()
    for _ in range(n_steps):
        with np.errstate(over="ignore", invalid="ignore"):
            z = np.where(bad, 0, eval_op(P2, z))
        bad |= ~petal.contains(z)
    if bad.any():
        return PetalCheck(False, complex(z0[np.argmax(bad)]), n_samples)
    return PetalCheck(True, None, n_samples)


@dataclass
class MeasureReport:
    value: float
    cell_area: float
    n_points: int
    seed: int = 0
    method: str = Method.GRID.value
    flag: str = ""
    time_index: int = 0
    count: int = 0

    @property
    def sigma(self) -> float:
        """Binomial standard error (zero for GRID)."""
        if self.method != Method.MONTE_CARLO.value or self.n_points == 0:
            return 0.0
        total = self.n_points * self.cell_area
        p = self.count / self.n_points
        return total * math.sqrt(p * (1 - p) / self.n_points)

    def to_json(self) -> str:
        d = asdict(self)
        d.pop("count")
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MeasureReport":
        d = json.loads(text)
        rep = cls(**d)
        rep.count = round(rep.value / rep.cell_area) if rep.cell_area else 0
        return rep


def measure(cloud: PointCloud, flag_predicate: Callable[[PointCloud], np.ndarray] | np.ndarray | None = None,
            flag: str = "") -> MeasureReport:
    """Count of points satisfying the predicate times the cell area."""
    if flag_predicate is None:
        mask = np.ones(len(cloud), dtype=bool)
    elif callable(flag_predicate):
        mask = np.asarray(flag_predicate(cloud), dtype=bool)
    else:
        mask = np.asarray(flag_predicate, dtype=bool)
    count = int(np.count_nonzero(mask))
    return MeasureReport(
        value=count * cloud.cell_area, cell_area=cloud.cell_area, n_points=len(cloud),
        seed=int(cloud.seed), method=Method(cloud.method).value,
        flag=flag, time_index=int(cloud.m), count=count,
    )


@dataclass
class Lemma21Fit:
    lambda_hat: float
    c_hat: float
    slope: float
    intercept: float
    Ns: list[int]
    measures: list[float]
    radius: float
    continuation_max: list[float] = field(default_factory=list)

    def __iter__(self):
        return iter((self.lambda_hat, self.c_hat))


def _random_admissible(bounds: SequenceBounds, n: int, rng: np.random.Generator):
    from .poly_core import general

    ops = []
    for _ in range(n):
        d = int(rng.integers(2, bounds.d + 1))
        lead = rng.uniform(1 / bounds.K, bounds.K) * np.exp(2j * np.pi * rng.random())
        low = bounds.M * np.sqrt(rng.random(d)) * np.exp(2j * np.pi * rng.random(d))
        ops.append(general([*low, lead]))
    return ops


def lemma21_decay(seq_prefix_P1_count: int = 32, bounds: SequenceBounds = FAMILY_BOUNDS,
                  trials: int = 8, resolution: int = 512, n_min: int = 4, k1_iterations: int = 200,
                  continuation: int = 8, seed: int = 0) -> Lemma21Fit:
    """Fit ``m(S^N \\ K1) ~ c * lambda**-N`` for sequences starting with ``N`` copies of ``P1``.

    ``S^N`` is the survival set for the escape radius of ``bounds`` and ``K1``
    is approximated by ``k1_iterations`` of ``P1`` with radius 13.  For each of
    ``trials`` random admissible continuations, the part of the continued
    sequence's survival set outside ``K1`` is also measured; it can never
    exceed ``m(S^N \\ K1)`` and is reported for reference.
    """
    if seq_prefix_P1_count < 1 or trials < 1:
        raise ValueError("need a positive prefix length and trial count")
    R = escape_radius(bounds)
    cloud = seed_disc(0j, R, resolution)
    k1 = seed_disc(0j, R, resolution)
    seq_k1 = BoundedSequence(bounds, [P1] * k1_iterations)
    k1.transport(seq_k1, k1_iterations, radius=FAMILY_ESCAPE_RADIUS)
    in_k1 = k1.alive

    Ns = list(range(max(1, n_min), seq_prefix_P1_count + 1))
    if len(Ns) < 2:
        raise FitFailure(f"prefix length {seq_prefix_P1_count} leaves fewer than two fit points (N starts at {n_min})")
    seq = BoundedSequence(bounds, [P1] * seq_prefix_P1_count)
    measures: list[float] = []
    cont_max: list[float] = []
    rng = np.random.default_rng(seed)
    snaps: dict[int, np.ndarray] = {}
    cloud.transport(seq, seq_prefix_P1_count, radius=R, record=Ns,
                    on_record=lambda t: snaps.__setitem__(t, cloud.alive.copy()))
    for N in Ns:
        leak = snaps[N] & ~in_k1
        measures.append(float(np.count_nonzero(leak) * cloud.cell_area))
    for N in (Ns[0], Ns[-1]):
        worst = 0.0
        for _ in range(trials):
            pts = PointCloud(z0=cloud.z0[snaps[N] & ~in_k1], cell_area=cloud.cell_area)
            cont = BoundedSequence(bounds, [P1] * N + _random_admissible(bounds, continuation, rng))
            pts.transport(cont, len(cont), radius=R)
            worst = max(worst, float(np.count_nonzero(pts.alive) * cloud.cell_area))
        cont_max.append(worst)

    ns = np.array(Ns, dtype=float)
    ms = np.array(measures)
    pos = ms > 0
    if np.count_nonzero(pos) < 2:
        raise FitFailure("fewer than two positive leakage measures; raise the resolution or lower N")
    slope, intercept = np.polyfit(ns[pos], np.log(ms[pos]), 1)
    lam = math.exp(-slope)
    c = float(np.max(ms[pos] * lam ** ns[pos])) * (1 + 1e-12)
    return Lemma21Fit(lam, c, float(slope), float(intercept), Ns, measures, R, cont_max)


def lemma22_shrink(V: PointCloud, petal: PetalModel, m_list: Sequence[int],
                   designated: complex | None = None) -> list[float]:
    """Measure of ``V`` landing outside the translated petal after ``P1**m``.

    The translation sends the image of ``designated`` (default: centroid of
    ``V``) to the cusp tip at 0.
    """
    z0 = V.z0
    zd = complex(np.mean(z0)) if designated is None else complex(designated)
    out = []
    steps = sorted(set(int(m) for m in m_list))
    if steps and steps[0] < 0:
        raise ValueError("m must be >= 0")
    cur, cur_d, done = z0.copy(), zd, 0
    values: dict[int, float] = {}
    for m in steps:
        for _ in range(m - done):
            cur = eval_op(P1, cur)
            cur_d = eval_op(P1, cur_d)
        done = m
        leaked = ~petal.contains(cur - cur_d)
        values[m] = float(np.count_nonzero(leaked) * V.cell_area)
    for m in m_list:
        out.append(values[int(m)])
    return out


def classification_stability(seq: BoundedSequence, times: Sequence[int], n_points: int = 10_000,
                             seed: int = 0, radius: float = FAMILY_ESCAPE_RADIUS,
                             horizon: int | None = None) -> dict:
    """Count alive/escaped flips of random time-0 points across ``times``.

    Each point is transported (frozen once outside ``radius``) to every time
    ``m`` in ``times`` and then
    classified afresh from there, iterating to ``horizon``.  Invariance of the
    filled Julia sets means the fresh classification at ``m`` and at ``n``
    agree for every pair of times; any disagreement is a flip.
    """
    horizon = len(seq) if horizon is None else horizon
    times = sorted({int(t) for t in times if 0 <= t <= horizon})
    rng = np.random.default_rng(seed)
    r = radius * np.sqrt(rng.random(n_points))
    z0 = r * np.exp(2j * np.pi * rng.random(n_points))
    base = PointCloud(z0=z0, cell_area=math.pi * radius**2 / n_points)
    positions: dict[int, np.ndarray] = {}
    base.transport(seq, times[-1] if times else 0, radius=radius, record=times,
                   on_record=lambda t: positions.__setitem__(t, base.z.copy()))
    verdicts = []
    for t in times:
        fresh = PointCloud(z0=positions[t], cell_area=base.cell_area, t0=t)
        with np.errstate(all="ignore"):
            fresh.transport(seq, horizon, radius=radius)
        verdicts.append(fresh.alive & (np.abs(positions[t]) <= radius))
    flips = 0
    pairs = 0
    for a in range(len(verdicts)):
        for b in range(a + 1, len(verdicts)):
            flips += int(np.count_nonzero(verdicts[a] != verdicts[b]))
            pairs += 1
    return {"points": n_points, "times": times, "pairs": pairs, "flips": flips,
            "alive_fraction": float(np.mean(verdicts[0])) if verdicts else 0.0}
