"""Polynomials, bounded sequences, compositions and escape radii.

Every other module in the package consumes the types defined here.  Scalar
helpers (``compose_orbit``) work on :class:`OrbitState`; the vectorised
engine used for point clouds lives in :func:`advance`.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "PolyKind",
    "PolynomialOp",
    "SequenceBounds",
    "BoundedSequence",
    "OrbitState",
    "P1",
    "P2",
    "P2_SCALED",
    "FAMILY_BOUNDS",
    "FAMILY_ESCAPE_RADIUS",
    "DEFAULT_CRIT_TOL",
    "p1_shifted",
    "general",
    "eval_op",
    "eval_deriv",
    "compose_orbit",
    "escape_radius",
    "advance",
    "grand_orbit_flags",
    "dumps_sequence",
    "loads_sequence",
    "SequenceParseError",
]

DEFAULT_CRIT_TOL = 1e-300
FAMILY_ESCAPE_RADIUS = 13.0


class PolyKind(enum.Enum):
    P1 = "P1"
    P2 = "P2"
    P1_SHIFTED = "P1+"
    P2_SCALED = "P2/12"
    GENERAL = "GEN"


@dataclass(frozen=True)
class PolynomialOp:
    kind: PolyKind
    shift: complex = 0j
    coeffs: tuple[complex, ...] = ()

    def __post_init__(self):
        if self.kind is PolyKind.P1_SHIFTED and not abs(self.shift) < 1 / 3:
            raise ValueError(f"P1 shift must satisfy |c| < 1/3, got {self.shift!r}")
        if self.kind is PolyKind.GENERAL:
            coeffs = tuple(complex(c) for c in self.coeffs)
            if len(coeffs) < 3 or coeffs[-1] == 0:
                raise ValueError("general polynomial needs degree >= 2 and a nonzero leading coefficient")
            object.__setattr__(self, "coeffs", coeffs)

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1 if self.kind is PolyKind.GENERAL else 2

    def coefficients(self) -> tuple[complex, ...]:
        """Ascending coefficients, whatever the kind."""
        if self.kind is PolyKind.P1:
            return (0j, 0.5 + 0j, 0.5 + 0j)
        if self.kind is PolyKind.P2:
            return (0j, 1 + 0j, 1 + 0j)
        if self.kind is PolyKind.P1_SHIFTED:
            return (complex(self.shift), 0.5 + 0j, 0.5 + 0j)
        if self.kind is PolyKind.P2_SCALED:
            return (0j, 1 / 12 + 0j, 1 / 12 + 0j)
        return self.coeffs

    def __call__(self, z):
        return eval_op(self, z)


P1 = PolynomialOp(PolyKind.P1)
P2 = PolynomialOp(PolyKind.P2)
P2_SCALED = PolynomialOp(PolyKind.P2_SCALED)


def p1_shifted(c: complex) -> PolynomialOp:
    return PolynomialOp(PolyKind.P1_SHIFTED, shift=complex(c))


def general(coeffs: Iterable[complex]) -> PolynomialOp:
    return PolynomialOp(PolyKind.GENERAL, coeffs=tuple(coeffs))


def eval_op(op: PolynomialOp, z):
    """Value of ``op`` at ``z`` (scalar or ndarray)."""
    k = op.kind
    if k is PolyKind.P1:
        return 0.5 * z * (1 + z)
    if k is PolyKind.P2:
        return z * (1 + z)
    if k is PolyKind.P1_SHIFTED:
        return 0.5 * z * (1 + z) + op.shift
    if k is PolyKind.P2_SCALED:
        return z * (1 + z) / 12
    acc = op.coeffs[-1] * (z * 0 + 1)
    for c in op.coeffs[-2::-1]:
        acc = acc * z + c
    return acc


def eval_deriv(op: PolynomialOp, z):
    k = op.kind
    if k is PolyKind.P1 or k is PolyKind.P1_SHIFTED:
        return 0.5 * (1 + 2 * z)
    if k is PolyKind.P2:
        return 1 + 2 * z
    if k is PolyKind.P2_SCALED:
        return (1 + 2 * z) / 12
    n = len(op.coeffs) - 1
    acc = n * op.coeffs[-1] * (z * 0 + 1)
    for j in range(n - 1, 0, -1):
        acc = acc * z + j * op.coeffs[j]
    return acc


@dataclass(frozen=True)
class SequenceBounds:
    d: int = 2
    K: float = 12.0
    M: float = 0.5

    def __post_init__(self):
        if self.d < 2 or self.K < 1 or self.M < 0:
            raise ValueError(f"invalid bounds d={self.d} K={self.K} M={self.M}")

    def admits(self, op: PolynomialOp) -> bool:
        coeffs = op.coefficients()
        if not 2 <= len(coeffs) - 1 <= self.d:
            return False
        lead = abs(coeffs[-1])
        return 1 / self.K <= lead < self.K and all(abs(c) <= self.M for c in coeffs[:-1])


# (1/12)P2 has leading coefficient 1/12, hence K = 12; P2 = z + z^2 has a unit
# linear coefficient, hence M = 1.
FAMILY_BOUNDS = SequenceBounds(d=2, K=12.0, M=1.0)


@dataclass
class BoundedSequence:
    """Ops ``P_1, P_2, ...``; ``seq[m]`` is ``P_m`` (1-indexed)."""

    bounds: SequenceBounds = FAMILY_BOUNDS
    ops: list[PolynomialOp] = field(default_factory=list)

    def __post_init__(self):
        ops, self.ops = list(self.ops), []
        self.extend(ops)

    def append(self, op: PolynomialOp) -> None:
        if not self.bounds.admits(op):
            raise ValueError(f"{op} violates bounds {self.bounds}")
        self.ops.append(op)

    def extend(self, ops: Iterable[PolynomialOp]) -> None:
        for op in ops:
            self.append(op)

    def __len__(self) -> int:
        return len(self.ops)

    def __getitem__(self, m: int) -> PolynomialOp:
        if not 1 <= m <= len(self.ops):
            raise IndexError(f"P_{m} is not realized (length {len(self.ops)})")
        return self.ops[m - 1]

    def window(self, m: int, n: int) -> list[PolynomialOp]:
        """The ops ``P_{m+1}, ..., P_n`` making up ``Q_{m,n}``."""
        if not 0 <= m <= n:
            raise IndexError(f"need 0 <= m <= n, got m={m}, n={n}")
        if n > len(self.ops):
            raise IndexError(f"Q_{{{m},{n}}} needs P_{n} but only {len(self.ops)} ops are realized")
        return self.ops[m:n]

    def runs(self, m: int, n: int) -> list[tuple[PolynomialOp, int]]:
        """Run-length encoding of ``window(m, n)``."""
        out: list[tuple[PolynomialOp, int]] = []
        for op in self.window(m, n):
            if out and out[-1][0] == op:
                out[-1] = (op, out[-1][1] + 1)
            else:
                out.append((op, 1))
        return out


@dataclass(frozen=True)
class OrbitState:
    z: complex
    dz: complex = 1 + 0j
    m: int = 0
    escaped_at: int | None = None
    deriv_overflow: bool = False


def compose_orbit(seq: BoundedSequence, m: int, n: int, state: OrbitState,
                  radius: float = FAMILY_ESCAPE_RADIUS) -> OrbitState:
    """Apply ``P_{m+1}, ..., P_n`` to ``state``, accumulating the derivative.

    Iteration stops at the first time ``|z| > radius``; the returned state is
    then the one at that time, with ``escaped_at`` set.
    """
    if state.m != m:
        raise ValueError(f"state lives at time {state.m}, not {m}")
    ops = seq.window(m, n)
    z, dz, overflow = complex(state.z), complex(state.dz), state.deriv_overflow
    if state.escaped_at is not None:
        return state
    t = m
    for op in ops:
        t += 1
        f = complex(eval_deriv(op, z))
        z = complex(eval_op(op, z))
        dz = dz * f
        if not overflow and not (math.isfinite(dz.real) and math.isfinite(dz.imag)):
            overflow = True
        if abs(z) > radius:
            return OrbitState(z, dz, t, t, overflow)
    return OrbitState(z, dz, t, None, overflow)


def escape_radius(bounds: SequenceBounds) -> float:
    """A radius beyond which every admissible polynomial at least doubles ``|z|``.

    From ``|P(z)| >= |z|^d / K - M d |z|^(d-1)`` with ``|z| >= K (M d + 2)``.
    """
    return max(1.0, bounds.K * (bounds.M * bounds.d + 2))


def advance(ops: Sequence[PolynomialOp], z, logdz, phase, alive, crit, escaped_at,
            t0: int, radius: float = FAMILY_ESCAPE_RADIUS, crit_tol: float = DEFAULT_CRIT_TOL,
            record: Iterable[int] = (), on_record=None) -> None:
    """Vectorised in-place orbit update over arrays.

    The derivative is tracked in log-polar form (``logdz``, unit ``phase``) so
    that deep compositions neither underflow nor overflow.  Escaped points are
    frozen at their first value outside ``radius``.  ``on_record(t)`` is called
    after step ``t`` for each ``t`` in ``record`` (and for ``t0`` if listed).
    """
    record = set(record)
    log_tol = math.log(crit_tol)
    if on_record is not None and t0 in record:
        on_record(t0)
    act = np.flatnonzero(alive)
    za, la, pa = z[act], logdz[act], phase[act]
    t = t0
    for op in ops:
        t += 1
        if act.size:
            f = eval_deriv(op, za)
            za = eval_op(op, za)
            af = np.abs(f)
            with np.errstate(divide="ignore", invalid="ignore"):
                la = la + np.log(af)
                pa = np.where(af > 0, pa * (f / np.where(af > 0, af, 1.0)), pa)
            bad = la < log_tol
            if bad.any():
                crit[act[bad]] = True
            out = np.abs(za) > radius
            if out.any():
                idx = act[out]
                z[idx], logdz[idx], phase[idx] = za[out], la[out], pa[out]
                alive[idx] = False
                escaped_at[idx] = t
                keep = ~out
                act, za, la, pa = act[keep], za[keep], la[keep], pa[keep]
        if on_record is not None and t in record:
            z[act], logdz[act], phase[act] = za, la, pa
            on_record(t)
    z[act], logdz[act], phase[act] = za, la, pa


def grand_orbit_flags(seq: BoundedSequence, points, crit_tol: float = DEFAULT_CRIT_TOL,
                      n: int | None = None, radius: float = FAMILY_ESCAPE_RADIUS):
    """Flag cloud points whose composition derivative drops below ``crit_tol``.

    This is the finite-precision stand-in for lying on the grand orbit of a
    critical point.  The cloud is transported from its current time to ``n``
    (default: end of the realized sequence) and returned.
    """
    n = len(seq) if n is None else n
    points.transport(seq, n, radius=radius, crit_tol=crit_tol)
    return points


class SequenceParseError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def dumps_sequence(seq: BoundedSequence) -> str:
    b = seq.bounds
    lines = [f"BOUNDS {b.d} {_fmt(b.K)} {_fmt(b.M)}"]
    for op in seq.ops:
        if op.kind is PolyKind.P1_SHIFTED:
            lines.append(f"P1+ {_fmt(op.shift.real)} {_fmt(op.shift.imag)}")
        elif op.kind is PolyKind.GENERAL:
            parts = " ".join(f"{_fmt(c.real)} {_fmt(c.imag)}" for c in op.coeffs)
            lines.append(f"GEN {parts}")
        else:
            lines.append(op.kind.value)
    return "\n".join(lines) + "\n"


_SIMPLE = {"P1": P1, "P2": P2, "P2/12": P2_SCALED}


def loads_sequence(text: str) -> BoundedSequence:
    seq: BoundedSequence | None = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        head, *rest = line.split()
        try:
            if head == "BOUNDS":
                if seq is not None:
                    raise SequenceParseError(lineno, "duplicate BOUNDS header")
                d, K, M = rest
                seq = BoundedSequence(SequenceBounds(int(d), float(K), float(M)))
                continue
            if seq is None:
                raise SequenceParseError(lineno, "missing BOUNDS header")
            if head in _SIMPLE and not rest:
                op = _SIMPLE[head]
            elif head == "P1+" and len(rest) == 2:
                op = p1_shifted(complex(float(rest[0]), float(rest[1])))
            elif head == "GEN" and len(rest) >= 6 and len(rest) % 2 == 0:
                vals = [float(v) for v in rest]
                op = general(complex(a, b) for a, b in zip(vals[::2], vals[1::2]))
            else:
                raise SequenceParseError(lineno, f"unrecognized op {line!r}")
            seq.append(op)
        except SequenceParseError:
            raise
        except ValueError as exc:
            raise SequenceParseError(lineno, str(exc)) from exc
    if seq is None:
        raise SequenceParseError(0, "empty sequence file")
    return seq
