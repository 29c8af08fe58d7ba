"""Invariant sequences of unit line fields carried by sampled orbits.

A sample is a point of some cloud at some realized time ``m`` together with
the value ``mu`` of the Beltrami coefficient there.  Along one orbit the
coefficient transforms by the ratio ``Q'/conj(Q')`` (forward) or its
reciprocal (backward), so every sample of one id is fixed by its value at the
id's origin time.
"""
from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud
from .construction import StageState, _newton_pullback
from .dyn_sets import DISC_RADIUS
from .poly_core import DEFAULT_CRIT_TOL, BoundedSequence, OrbitState, compose_orbit, dumps_sequence, eval_deriv, eval_op

__all__ = [
    "LineFieldError",
    "LineFieldSample",
    "LineFieldFamily",
    "pullback",
    "pushforward",
    "pushforward_sample",
    "assemble_family",
    "verify_invariance",
    "invariance_report",
    "restrict_to_julia",
    "plan_hash",
    "ID_STRIDE",
]

# ids of disc D^i samples start at i * ID_STRIDE; time-0 samples keep their cloud id
ID_STRIDE = 10_000_000


class LineFieldError(RuntimeError):
    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code


def plan_hash(seq: BoundedSequence) -> str:
    return hashlib.sha256(dumps_sequence(seq).encode()).hexdigest()


def pullback(mu_at_image: complex, q_deriv: complex, crit_tol: float = DEFAULT_CRIT_TOL) -> complex:
    """``mu(Q(z)) * conj(Q'(z)) / Q'(z)``."""
    if abs(q_deriv) < crit_tol:
        raise LineFieldError("CRITICAL_POINT", f"|Q'| = {abs(q_deriv):.3g}")
    u = q_deriv / abs(q_deriv)
    return mu_at_image * (u.conjugate() / u)


def pushforward(mu: complex, q_deriv: complex, crit_tol: float = DEFAULT_CRIT_TOL) -> complex:
    if abs(q_deriv) < crit_tol:
        raise LineFieldError("CRITICAL_POINT", f"|Q'| = {abs(q_deriv):.3g}")
    u = q_deriv / abs(q_deriv)
    return mu * (u / u.conjugate())


@dataclass(frozen=True)
class LineFieldSample:
    id: int
    m: int
    z: complex
    mu: complex
    origin_stage: int


def pushforward_sample(s: LineFieldSample, seq: BoundedSequence, n: int,
                       crit_tol: float = DEFAULT_CRIT_TOL) -> LineFieldSample:
    if n < s.m:
        raise ValueError("pushforward needs n >= s.m")
    st = compose_orbit(seq, s.m, n, OrbitState(z=s.z, dz=1 + 0j, m=s.m), radius=math.inf)
    if st.deriv_overflow or abs(st.dz) < crit_tol:
        raise LineFieldError("CRITICAL_POINT", f"sample {s.id} at time {s.m}")
    return LineFieldSample(s.id, n, st.z, pushforward(s.mu, st.dz, crit_tol), s.origin_stage)


@dataclass
class LineFieldFamily:
    """Columnar store of samples keyed by ``(m, id)``."""

    m: np.ndarray
    id: np.ndarray
    z: np.ndarray
    mu: np.ndarray
    origin_stage: np.ndarray
    plan_sha256: str = ""
    anchor: np.ndarray | None = None  # time-s1 position per row, nan if none

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=np.int64)
        self.id = np.asarray(self.id, dtype=np.int64)
        self.z = np.asarray(self.z, dtype=complex)
        self.mu = np.asarray(self.mu, dtype=complex)
        self.origin_stage = np.asarray(self.origin_stage, dtype=np.int64)
        if self.anchor is None:
            self.anchor = np.full(self.m.size, np.nan + 0j)

    def __len__(self) -> int:
        return self.m.size

    @property
    def samples(self) -> dict[tuple[int, int], LineFieldSample]:
        return {(int(m), int(i)): LineFieldSample(int(i), int(m), complex(z), complex(mu), int(o))
                for m, i, z, mu, o in zip(self.m, self.id, self.z, self.mu, self.origin_stage)}

    def times(self) -> list[int]:
        return sorted(set(self.m.tolist()))

    def support(self) -> np.ndarray:
        return self.mu != 0

    def copy(self) -> "LineFieldFamily":
        return LineFieldFamily(self.m.copy(), self.id.copy(), self.z.copy(), self.mu.copy(),
                               self.origin_stage.copy(), self.plan_sha256, self.anchor.copy())

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# plan_sha256={self.plan_sha256}\n")
        buf.write("m,id,re_z,im_z,re_mu,im_mu,origin_stage\n")
        for m, i, z, mu, o in zip(self.m, self.id, self.z, self.mu, self.origin_stage):
            buf.write(f"{m},{i},{float(z.real)!r},{float(z.imag)!r},{float(mu.real)!r},{float(mu.imag)!r},{o}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "LineFieldFamily":
        plan = ""
        lines = text.splitlines()
        body = []
        for line in lines:
            if line.startswith("# plan_sha256="):
                plan = line.split("=", 1)[1].strip()
            elif line and not line.startswith("#") and not line.startswith("m,"):
                body.append(line)
        if not body:
            return cls(*(np.zeros(0) for _ in range(5)), plan_sha256=plan)
        arr = np.loadtxt(io.StringIO("\n".join(body)), delimiter=",", ndmin=2)
        return cls(m=arr[:, 0].astype(np.int64), id=arr[:, 1].astype(np.int64),
                   z=arr[:, 2] + 1j * arr[:, 3], mu=arr[:, 4] + 1j * arr[:, 5],
                   origin_stage=arr[:, 6].astype(np.int64), plan_sha256=plan)


# -- assembly ---------------------------------------------------------------------


def _support_points(state: StageState, k: int) -> np.ndarray:
    d = state.discs[k]
    return state.b_full(k) & d.alive & ~d.crit


def _inherit(state: StageState, i: int, p: np.ndarray,
             init: Callable[[np.ndarray], np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Value of the field at time ``tau_i`` on points ``p`` of ``D^i``.

    Points lying in the image of an older ``B^k`` inherit the transported value
    of their unique preimage there; everything else is new mass with value
    ``init(p)`` and origin stage ``i``.
    """
    mu = init(p).astype(complex)
    origin = np.full(p.size, i, dtype=np.int64)
    found = np.zeros(p.size, dtype=bool)
    tau_i = state.params[i - 1].tau
    for k in range(1, i):
        d = state.discs[k]
        keep = _support_points(state, k)
        if not keep.any():
            continue
        snap = d.at(tau_i)
        img = snap.z[keep]
        scale = 2 * math.sqrt(d.cell_area) * np.exp(snap.logdz[keep])
        tree = cKDTree(np.column_stack([img.real, img.imag]))
        todo = np.flatnonzero(~found)
        if todo.size == 0:
            break
        dist, nn = tree.query(np.column_stack([p[todo].real, p[todo].imag]))
        cand = dist <= scale[nn]
        if not cand.any():
            continue
        rows = todo[cand]
        guess = d.z0[keep][nn[cand]]
        tau_k = state.params[k - 1].tau
        y, conv = _newton_pullback(state.seq, tau_k, tau_i, p[rows], guess)
        ok = conv & (np.abs(y) < DISC_RADIUS)
        if not ok.any():
            continue
        rows, y = rows[ok], y[ok]
        probe = PointCloud(z0=y, cell_area=d.cell_area, t0=tau_k)
        state._catch_up(probe)
        inb = state.b_full(k, probe) & probe.alive & ~probe.crit
        if not inb.any():
            continue
        rows, y = rows[inb], y[inb]
        snap_y = probe.at(tau_i)
        ph = snap_y.phase[inb]
        mu_k, org_k = _inherit(state, k, y, init)
        mu[rows] = mu_k * ph * ph
        origin[rows] = org_k
        found[rows] = True
    return mu, origin


def _pick(mask: np.ndarray, limit: int | None) -> np.ndarray:
    idx = np.flatnonzero(mask)
    if limit is not None and idx.size > limit:
        idx = idx[np.linspace(0, idx.size - 1, limit).round().astype(np.int64)]
    return idx


def assemble_family(state: StageState, max_points_per_cloud: int | None = None,
                    angle: Callable[[np.ndarray], np.ndarray] | None = None) -> LineFieldFamily:
    """Build the sampled invariant family on every realized event time.

    ``angle`` replaces the initial field ``mu = 1`` with ``exp(2i * angle(z))``.
    """
    if not state.params:
        raise ValueError("assemble_family needs at least one realized stage")

    def init(z):
        z = np.asarray(z)
        if angle is None:
            return np.ones(z.shape, dtype=complex)
        return np.exp(2j * np.asarray(angle(z), dtype=float))

    times = state.event_times()
    s1 = state.s1
    cols: dict[str, list] = {k: [] for k in ("m", "id", "z", "mu", "origin", "anchor")}

    def emit(cloud: PointCloud, idx: np.ndarray, ids: np.ndarray, mu_t0: np.ndarray,
             origin: np.ndarray, anchor: np.ndarray):
        for t in times:
            if t < cloud.t0:
                continue
            snap = cloud.at(t)
            ph = snap.phase[idx]
            cols["m"].append(np.full(idx.size, t))
            cols["id"].append(ids)
            cols["z"].append(snap.z[idx])
            mu = mu_t0 * ph * ph
            cols["mu"].append(mu / np.abs(mu))
            cols["origin"].append(origin)
            cols["anchor"].append(anchor)

    # time-0 samples: first stage whose B-set the orbit enters
    t0 = state.time0
    first = np.zeros(len(t0), dtype=np.int64)
    for i in range(len(state.params), 0, -1):
        inside = t0.marks[f"inD{i}"] & state.b_full(i, t0)
        first = np.where(inside, i, first)
    idx = _pick((first > 0) & t0.alive & ~t0.crit, max_points_per_cloud)
    if idx.size:
        mu0 = np.empty(idx.size, dtype=complex)
        org = np.empty(idx.size, dtype=np.int64)
        for i in np.unique(first[idx]):
            sel = first[idx] == i
            snap = t0.at(state.params[i - 1].tau)
            mu_tau, org[sel] = _inherit(state, int(i), snap.z[idx[sel]], init)
            ph = snap.phase[idx[sel]]
            mu0[sel] = mu_tau * np.conj(ph) ** 2
        emit(t0, idx, t0.ids[idx], mu0, org, t0.at(s1).z[idx])

    for i, d in sorted(state.discs.items()):
        idx = _pick(_support_points(state, i), max_points_per_cloud)
        if idx.size == 0:
            continue
        mu_tau, org = _inherit(state, i, d.z0[idx], init)
        anchor = d.z0[idx] if i == 1 else np.full(idx.size, np.nan + 0j)
        emit(d, idx, i * ID_STRIDE + d.ids[idx], mu_tau, org, anchor)

    cat = {k: np.concatenate(v) if v else np.zeros(0) for k, v in cols.items()}
    order = np.lexsort((cat["id"], cat["m"]))
    return LineFieldFamily(m=cat["m"][order], id=cat["id"][order], z=cat["z"][order],
                           mu=cat["mu"][order], origin_stage=cat["origin"][order],
                           plan_sha256=plan_hash(state.seq), anchor=cat["anchor"][order])


# -- verification ---------------------------------------------------------------------


def _one_shot_derivative(seq: BoundedSequence, m: int, n: int, z: np.ndarray) -> np.ndarray:
    """``Q'_{m,n}`` as a plain product, independent of the log-polar transport."""
    dz = np.ones(z.size, dtype=complex)
    z = z.copy()
    with np.errstate(all="ignore"):
        for op in seq.window(m, n):
            dz *= eval_deriv(op, z)
            z = eval_op(op, z)
    return dz


def _triples(fam: LineFieldFamily, pairs: int, seed: int):
    rng = np.random.default_rng(seed)
    sup = np.flatnonzero(fam.support())
    if sup.size == 0 or pairs <= 0:
        return []
    order = sup[np.lexsort((fam.m[sup], fam.id[sup]))]
    ids, start, count = np.unique(fam.id[order], return_index=True, return_counts=True)
    pick = rng.integers(0, ids.size, size=pairs)
    a = rng.random(pairs)
    b = rng.random(pairs)
    ra = start[pick] + (a * count[pick]).astype(np.int64)
    rb = start[pick] + (b * count[pick]).astype(np.int64)
    lo = np.where(fam.m[order[ra]] <= fam.m[order[rb]], order[ra], order[rb])
    hi = np.where(fam.m[order[ra]] <= fam.m[order[rb]], order[rb], order[ra])
    return list(zip(lo.tolist(), hi.tolist()))


def invariance_report(fam: LineFieldFamily, seq: BoundedSequence, pairs: int = 10_000, seed: int = 0,
                      crit_tol: float = DEFAULT_CRIT_TOL) -> dict:
    """Residuals of ``Q_{m,n}^* mu_n = mu_m`` on random same-id sample pairs,
    plus the modulus and injectivity audits."""
    trip = _triples(fam, pairs, seed)
    res = np.zeros(len(trip))
    if trip:
        lo = np.array([t[0] for t in trip])
        hi = np.array([t[1] for t in trip])
        groups: dict[tuple[int, int], list[int]] = {}
        for k, (a, b) in enumerate(zip(fam.m[lo], fam.m[hi])):
            groups.setdefault((int(a), int(b)), []).append(k)
        for (m, n), ks in groups.items():
            ks = np.array(ks)
            dz = _one_shot_derivative(seq, m, n, fam.z[lo[ks]])
            bad = ~(np.abs(dz) >= crit_tol) | ~np.isfinite(dz)
            u = np.where(bad, 1, dz / np.where(bad, 1, np.abs(dz)))
            pulled = fam.mu[hi[ks]] * np.conj(u) / u
            r = np.abs(pulled - fam.mu[lo[ks]])
            res[ks] = np.where(bad, np.inf, r)
    sup = fam.support()
    mod_dev = float(np.max(np.abs(np.abs(fam.mu[sup]) - 1))) if sup.any() else 0.0
    collisions = 0
    for t in fam.times():
        rows = sup & (fam.m == t)
        z = fam.z[rows]
        if z.size < 2:
            continue
        pts = np.column_stack([z.real, z.imag])
        d, _ = cKDTree(pts).query(pts, k=2)
        # relative to the slice: late slices are contracted far below 1e-12
        tol = 1e-12 * float(np.abs(z).max())
        collisions += int(np.count_nonzero(d[:, 1] <= tol) // 2)
    return {
        "pairs": len(trip),
        "seed": seed,
        "max_residual": float(res.max()) if res.size else 0.0,
        "mean_residual": float(res.mean()) if res.size else 0.0,
        "max_modulus_deviation": mod_dev,
        "collisions": collisions,
    }


def verify_invariance(fam: LineFieldFamily, pairs: int, seq: BoundedSequence | None = None,
                      seed: int = 0) -> float:
    """Maximum invariance residual over ``pairs`` random ``(m, n, id)`` triples."""
    if seq is None:
        raise ValueError("verify_invariance needs the sequence the family was built on")
    return invariance_report(fam, seq, pairs, seed)["max_residual"]


def restrict_to_julia(fam: LineFieldFamily, state: StageState) -> LineFieldFamily:
    """Zero ``mu`` off the Julia-proximate samples.

    A sample keeps its value when its orbit is bounded through the realized
    horizon and its time-``s1`` anchor lies within a recorded witness's
    radius (``1/i`` for a stage-``i`` witness) of that witness.  Mass first
    introduced at a later stage has no time-``s1`` anchor; it is kept when its
    origin stage recorded witnesses.
    """
    out = fam.copy()
    keep = out.mu != 0
    wit = state.witnesses
    anchored = ~np.isnan(out.anchor.real)
    near = np.zeros(len(out), dtype=bool)
    for w in wit:
        near |= anchored & (np.abs(out.anchor - w.w) < 1.0 / w.stage)
    staged = {w.stage for w in wit}
    unanchored_ok = ~anchored & np.isin(out.origin_stage, list(staged))
    keep &= near | unanchored_ok
    out.mu = np.where(keep, out.mu, 0)
    return out
