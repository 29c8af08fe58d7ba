"""Acceptance criteria 1-10; each test prints one PASS/FAIL line.

Run ``pytest tests/test_acceptance.py`` for the summary section, or execute
this file directly to print the lines without pytest.
"""
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from iterjulia.cli import main
from iterjulia.construction import ConstructionConfig, certify_positive_area, construct
from iterjulia.dyn_sets import PetalModel, classification_stability, lemma21_decay, lemma22_shrink, seed_disc
from iterjulia.line_fields import assemble_family, invariance_report
from iterjulia.poly_core import P1, P2, P2_SCALED, FAMILY_ESCAPE_RADIUS, eval_op, p1_shifted

DISC_AREA = math.pi / 9
RESOLUTION = 256

# pinned tolerances and budgets
ESCAPE_TARGET = 1e6
ESCAPE_STEPS = 40
ESCAPE_SECONDS = 10.0
LEMMA21_SECONDS = 300.0
LEMMA22_SECONDS = 120.0
LEMMA22_FRACTION = 0.01
STAGE1_SECONDS = 300.0
STAGES_SECONDS = 1800.0
INVARIANCE_TOL = 1e-9
INVARIANCE_TRIPLES = 10_000
STABILITY_POINTS = 10_000


def record(number: int, ok: bool, detail: str) -> None:
    line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'} {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


@pytest.fixture(scope="module")
def two_stage():
    start = time.perf_counter()
    state = construct(ConstructionConfig(resolution=RESOLUTION, max_stages=2))
    return state, time.perf_counter() - start


@pytest.fixture(scope="module")
def three_stage():
    start = time.perf_counter()
    state = construct(ConstructionConfig(resolution=RESOLUTION, max_stages=3))
    return state, time.perf_counter() - start


def _family_step(z, kind, shift):
    out = np.empty_like(z)
    for k, op in enumerate((P1, P1, P2, P2_SCALED)):
        sel = kind == k
        out[sel] = eval_op(op, z[sel]) + (shift[sel] if k == 1 else 0)
    return out


def test_escape_radius():
    """Each point follows its own random sequence; the slowest map alone is run on all points too."""
    rng = np.random.default_rng(2024)
    n = 10_000
    start = time.perf_counter()
    r = np.sqrt(rng.uniform(FAMILY_ESCAPE_RADIUS**2, 20.0**2, n))
    z0 = r * np.exp(2j * np.pi * rng.random(n))
    z0[0] = np.nextafter(FAMILY_ESCAPE_RADIUS, 20.0)
    z = z0.copy()
    done = np.zeros(n, bool)
    for _ in range(ESCAPE_STEPS):
        kind = rng.integers(0, 4, n)
        shift = np.sqrt(rng.random(n)) / 3 * np.exp(2j * np.pi * rng.random(n)) * (1 - 1e-12)
        live = ~done
        z[live] = _family_step(z[live], kind[live], shift[live])
        done |= np.abs(z) > ESCAPE_TARGET
    slow = z0.copy()
    slow_done = np.zeros(n, bool)
    for _ in range(ESCAPE_STEPS):
        live = ~slow_done
        slow[live] = eval_op(P2_SCALED, slow[live])
        slow_done |= np.abs(slow) > ESCAPE_TARGET
    worst = np.full(n, -1 / 3 * (1 - 1e-12), dtype=complex)
    adv = z0.copy()
    adv_done = np.zeros(n, bool)
    for _ in range(ESCAPE_STEPS):
        live = ~adv_done
        adv[live] = eval_op(p1_shifted(worst[0]), adv[live])
        adv_done |= np.abs(adv) > ESCAPE_TARGET
    elapsed = time.perf_counter() - start
    ok = done.all() and slow_done.all() and adv_done.all() and elapsed < ESCAPE_SECONDS
    record(1, ok, f"random={done.mean():.4f} slowest-map={slow_done.mean():.4f} "
                  f"shifted-P1={adv_done.mean():.4f} escaped within {ESCAPE_STEPS} steps, {elapsed:.2f}s")


def test_decay_of_survival_leakage():
    start = time.perf_counter()
    fit = lemma21_decay(32, resolution=512, n_min=4)
    elapsed = time.perf_counter() - start
    ok = fit.lambda_hat > 1 and fit.slope < 0 and fit.Ns[0] == 4 and elapsed < LEMMA21_SECONDS
    record(2, ok, f"lambda_hat={fit.lambda_hat:.4f} slope={fit.slope:.4f} N=4..32, {elapsed:.1f}s")


def test_cusp_leakage_shrinks():
    start = time.perf_counter()
    disc = seed_disc(0j, 1 / 3, 512)
    steps = [10, 20, 40, 80]
    leak = lemma22_shrink(disc, PetalModel(), steps)
    elapsed = time.perf_counter() - start
    ok = (all(b <= a for a, b in zip(leak, leak[1:])) and leak[-1] < LEMMA22_FRACTION * DISC_AREA
          and elapsed < LEMMA22_SECONDS)
    record(3, ok, f"leakage at m={steps}: {[f'{x:.3g}' for x in leak]}, {elapsed:.1f}s")


def test_stage_one_bounds():
    start = time.perf_counter()
    state = construct(ConstructionConfig(resolution=RESOLUTION, max_stages=1))
    elapsed = time.perf_counter() - start
    p = state.params[0]
    t0 = state.time0
    snap = t0.at(p.tau)
    survival_leak = np.count_nonzero(snap.alive & ~t0.marks["inD1"]) * t0.cell_area
    d = state.discs[1]
    b12 = DISC_AREA - np.count_nonzero(~state.b_mask(1, 2)) * d.cell_area
    ok = survival_leak < 0.25 and b12 > DISC_AREA - p.eps / 4 and elapsed < STAGE1_SECONDS
    record(4, ok, f"s1={p.s} m(S\\E)={survival_leak:.4g}<0.25 m(B12)={b12:.12f}>"
                  f"{DISC_AREA - p.eps / 4:.12f}, {elapsed:.1f}s")


def _all_positive(state):
    return {f"{n}.{k}": h["margin"] for n, hyp in state.hypotheses.items() for k, h in hyp.items()}


def test_induction_hypotheses(two_stage, three_stage):
    lines = []
    ok = True
    for label, (state, elapsed) in (("2-stage", two_stage), ("3-stage", three_stage)):
        margins = _all_positive(state)
        last = state.hypotheses[state.n_stages]
        stage_ok = (len(last) == 8 and all(m > 0 for m in margins.values())
                    and all(h["pass"] for h in last.values()) and elapsed < STAGES_SECONDS)
        ok &= stage_ok
        lines.append(f"{label} min-margin={min(margins.values()):.3g} "
                     f"H3 worst={last['3']['measure']:.12f}>{last['3']['measure_bound']:.12f} "
                     f"H8 collisions={last['8']['value']} {elapsed:.0f}s")
    record(5, ok, "; ".join(lines))


def test_positive_area(three_stage):
    state, _ = three_stage
    cert = certify_positive_area(state)
    ok = all(c["grid_measure"] >= c["bound"] > 0 and c["mc_measure"] - 3 * c["mc_sigma"] > 0 for c in cert)
    detail = "; ".join(f"n={c['n']} grid={c['grid_measure']:.12f}>={c['bound']:.12f} "
                       f"mc={c['mc_measure']:.5f}+-{3 * c['mc_sigma']:.5f} (mc_within_bound={c['mc_within_bound']})"
                       for c in cert)
    record(6, ok, detail)


def test_line_field_invariance(two_stage):
    state, _ = two_stage
    fam = assemble_family(state)
    rep = invariance_report(fam, state.seq, INVARIANCE_TRIPLES, seed=0)
    ok = (rep["pairs"] >= INVARIANCE_TRIPLES and rep["max_residual"] < INVARIANCE_TOL
          and rep["max_modulus_deviation"] < INVARIANCE_TOL and rep["collisions"] == 0)
    record(7, ok, f"triples={rep['pairs']} max_residual={rep['max_residual']:.3g} "
                  f"max||mu|-1|={rep['max_modulus_deviation']:.3g} samples={len(fam)}")


def test_support_coverage(three_stage):
    state, _ = three_stage
    cert = certify_positive_area(state)
    ok = all(c["K_minus_F"] < c["K_bound"] for c in cert)
    record(8, ok, "; ".join(f"n={c['n']} m(K\\F)={c['K_minus_F']:.4g}<{c['K_bound']:.4g}" for c in cert))


def test_classification_stability(three_stage):
    state, _ = three_stage
    times = sorted({0} | {t for p in state.params for t in (p.tau, p.kappa, p.end)})
    stab = classification_stability(state.seq, times, STABILITY_POINTS, seed=0)
    record(9, stab["flips"] == 0, f"points={stab['points']} times={len(stab['times'])} "
                                  f"pairs={stab['pairs']} flips={stab['flips']}")


def test_determinism(tmp_path):
    names = ("sequence.txt", "stage_log.json", "family.csv")
    for run in ("a", "b"):
        assert main(["construct", "--seed", "11", "--out", str(tmp_path / run)]) == 0
    same = {n: (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names}
    record(10, all(same.values()), " ".join(f"{n}={'identical' if v else 'differs'}" for n, v in same.items()))


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
