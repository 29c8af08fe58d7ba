"""Weighted point samples of planar regions carrying per-point orbit state."""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .poly_core import DEFAULT_CRIT_TOL, FAMILY_ESCAPE_RADIUS, BoundedSequence, advance

__all__ = ["PointCloud", "Snapshot"]


@dataclass
class Snapshot:
    z: np.ndarray
    logdz: np.ndarray
    phase: np.ndarray
    alive: np.ndarray


@dataclass
class PointCloud:
    """A sample of a region introduced at time ``t0``.

    ``z``, ``logdz`` and ``phase`` hold the orbit state at time ``m``:
    ``Q_{t0,m}(z0)`` and its derivative as ``exp(logdz) * phase``.  Boolean
    ``marks`` carry set-membership flags (for instance ``"B1_2"``).
    """

    z0: np.ndarray
    cell_area: float
    region: str = ""
    t0: int = 0
    ids: np.ndarray | None = None
    z: np.ndarray | None = None
    logdz: np.ndarray | None = None
    phase: np.ndarray | None = None
    alive: np.ndarray | None = None
    crit: np.ndarray | None = None
    escaped_at: np.ndarray | None = None
    m: int | None = None
    method: str = "GRID"
    seed: int = 0
    marks: dict[str, np.ndarray] = field(default_factory=dict)
    snapshots: dict[int, Snapshot] = field(default_factory=dict)

    def __post_init__(self):
        if not self.cell_area > 0:
            raise ValueError("cell_area must be positive")
        self.z0 = np.asarray(self.z0, dtype=complex)
        n = self.z0.size
        if self.ids is None:
            self.ids = np.arange(n, dtype=np.int64)
        if self.z is None:
            self.z = self.z0.copy()
        if self.logdz is None:
            self.logdz = np.zeros(n)
        if self.phase is None:
            self.phase = np.ones(n, dtype=complex)
        if self.alive is None:
            self.alive = np.ones(n, dtype=bool)
        if self.crit is None:
            self.crit = np.zeros(n, dtype=bool)
        if self.escaped_at is None:
            self.escaped_at = np.full(n, -1, dtype=np.int64)
        if self.m is None:
            self.m = self.t0

    def __len__(self) -> int:
        return self.z0.size

    @property
    def escaped(self) -> np.ndarray:
        return ~self.alive

    @property
    def dz(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.logdz) * self.phase

    def snapshot(self) -> Snapshot:
        return Snapshot(self.z.copy(), self.logdz.copy(), self.phase.copy(), self.alive.copy())

    def transport(self, seq: BoundedSequence, n: int, radius: float = FAMILY_ESCAPE_RADIUS,
                  crit_tol: float = DEFAULT_CRIT_TOL, record=(), on_record=None) -> "PointCloud":
        """Advance every point from the current time to time ``n`` in place.

        Snapshots are stored for every time listed in ``record``.
        """
        record = set(record)

        def hook(t):
            self.m = t
            if t in record:
                self.snapshots[t] = self.snapshot()
            if on_record is not None:
                on_record(t)

        advance(seq.window(self.m, n), self.z, self.logdz, self.phase, self.alive, self.crit,
                self.escaped_at, self.m, radius=radius, crit_tol=crit_tol,
                record=record, on_record=hook)
        self.m = n
        return self

    def at(self, t: int) -> Snapshot:
        if t == self.m:
            return self.snapshot()
        return self.snapshots[t]

    def subset(self, mask) -> "PointCloud":
        mask = np.asarray(mask)
        return PointCloud(
            z0=self.z0[mask], cell_area=self.cell_area, region=self.region, t0=self.t0,
            ids=self.ids[mask], z=self.z[mask], logdz=self.logdz[mask], phase=self.phase[mask],
            alive=self.alive[mask], crit=self.crit[mask], escaped_at=self.escaped_at[mask],
            m=self.m, method=self.method, seed=self.seed, marks={k: v[mask] for k, v in self.marks.items()},
            snapshots={t: Snapshot(s.z[mask], s.logdz[mask], s.phase[mask], s.alive[mask])
                       for t, s in self.snapshots.items()},
        )

    def flag_bits(self) -> tuple[list[str], np.ndarray]:
        names = ["escaped", "crit_flagged", *sorted(self.marks)]
        bits = self.escaped.astype(np.int64) | (self.crit.astype(np.int64) << 1)
        for j, name in enumerate(names[2:], start=2):
            bits |= self.marks[name].astype(np.int64) << j
        return names, bits

    def to_csv(self) -> str:
        """``id,re,im,flags`` rows at the current time; flag bit names in a header comment."""
        names, bits = self.flag_bits()
        buf = io.StringIO()
        buf.write(f"# time={self.m} t0={self.t0} cell_area={self.cell_area!r} region={self.region}\n")
        buf.write("# flags=" + ",".join(names) + "\n")
        buf.write("id,re,im,flags\n")
        for i, zz, b in zip(self.ids, self.z, bits):
            buf.write(f"{i},{float(zz.real)!r},{float(zz.imag)!r},{b}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "PointCloud":
        meta: dict[str, str] = {}
        names: list[str] = []
        rows = []
        for line in text.splitlines():
            if line.startswith("# flags="):
                names = line[len("# flags="):].split(",")
            elif line.startswith("#"):
                for tok in line[1:].split():
                    k, _, v = tok.partition("=")
                    meta[k] = v
            elif line and not line.startswith("id,"):
                i, re_, im_, b = line.split(",")
                rows.append((int(i), complex(float(re_), float(im_)), int(b)))
        ids = np.array([r[0] for r in rows], dtype=np.int64)
        z = np.array([r[1] for r in rows], dtype=complex)
        bits = np.array([r[2] for r in rows], dtype=np.int64)
        t = int(meta.get("time", 0))
        cloud = cls(z0=z.copy(), cell_area=float(meta.get("cell_area", 1.0)),
                    region=meta.get("region", ""), t0=t, ids=ids, m=t)
        cloud.alive = (bits & 1) == 0
        cloud.crit = (bits & 2) != 0
        for j, name in enumerate(names[2:], start=2):
            cloud.marks[name] = ((bits >> j) & 1).astype(bool)
        return cloud
