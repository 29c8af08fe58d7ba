import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iterjulia.construction import replay
from iterjulia.line_fields import (
    ID_STRIDE,
    LineFieldError,
    LineFieldFamily,
    LineFieldSample,
    assemble_family,
    invariance_report,
    pullback,
    pushforward,
    pushforward_sample,
    restrict_to_julia,
    verify_invariance,
)
from iterjulia.poly_core import FAMILY_BOUNDS, P1, BoundedSequence, eval_deriv, eval_op


def test_pullback_examples():
    assert pullback(1, 2) == 1
    assert pullback(1, 1j) == pytest.approx(-1)
    with pytest.raises(LineFieldError) as err:
        pullback(1, 0)
    assert err.value.code == "CRITICAL_POINT"


@settings(max_examples=100, deadline=None)
@given(st.floats(-np.pi, np.pi), st.complex_numbers(min_magnitude=1e-6, max_magnitude=1e6))
def test_pushforward_inverts_pullback(theta, q):
    mu = np.exp(1j * theta)
    back = pullback(pushforward(mu, q), q)
    assert abs(back - mu) < 1e-12 and abs(abs(pushforward(mu, q)) - 1) < 1e-12


def test_pushforward_sample_identity_and_inverse():
    seq = BoundedSequence(FAMILY_BOUNDS, [P1] * 6)
    s = LineFieldSample(id=4, m=2, z=0.1 + 0.05j, mu=np.exp(0.3j), origin_stage=1)
    assert pushforward_sample(s, seq, 2) == s
    out = pushforward_sample(s, seq, 6)
    dz, z = 1, s.z
    for _ in range(4):
        dz *= eval_deriv(P1, z)
        z = eval_op(P1, z)
    assert out.z == pytest.approx(z) and out.id == 4 and out.origin_stage == 1
    assert pullback(out.mu, dz) == pytest.approx(s.mu, abs=1e-12)


def test_pushforward_sample_at_critical_point():
    seq = BoundedSequence(FAMILY_BOUNDS, [P1])
    with pytest.raises(LineFieldError):
        pushforward_sample(LineFieldSample(0, 0, -0.5, 1, 1), seq, 1)


def test_functoriality():
    rng = np.random.default_rng(2)
    seq = BoundedSequence(FAMILY_BOUNDS, [P1] * 8)
    for _ in range(200):
        z = complex(*(0.3 * rng.random(2) - 0.15))
        mu_n = np.exp(2j * np.pi * rng.random())
        zs, ds = [z], []
        for _ in range(8):
            ds.append(eval_deriv(P1, zs[-1]))
            zs.append(eval_op(P1, zs[-1]))
        step = mu_n
        for d in reversed(ds):
            step = pullback(step, d)
        assert abs(step - pullback(mu_n, np.prod(ds))) < 1e-10


@pytest.fixture(scope="module")
def family(small_state):
    return assemble_family(small_state, max_points_per_cloud=1500)


def test_family_shape(family, small_state):
    assert len(family) > 0
    assert set(family.times()) <= set(small_state.event_times())
    assert np.all(np.abs(np.abs(family.mu) - 1) < 1e-12)
    assert set(np.unique(family.origin_stage)) <= {1, 2}
    # stage-one disc samples start at tau_1 with mu = 1
    tau1 = small_state.params[0].tau
    rows = (family.m == tau1) & (family.id // ID_STRIDE == 1)
    assert rows.any() and np.all(family.mu[rows] == 1)


def test_invariance(family, small_state):
    rep = invariance_report(family, small_state.seq, 10_000, seed=1)
    assert rep["pairs"] == 10_000
    assert rep["max_residual"] < 1e-9 and rep["collisions"] == 0
    assert verify_invariance(family, 500, small_state.seq) < 1e-9


def test_single_step_pairs_are_exact(small_state):
    p = small_state.params[0]
    fam = assemble_family(small_state, max_points_per_cloud=300)
    sub = (fam.m == 0) | (fam.m == p.tau)
    keep = LineFieldFamily(fam.m[sub], fam.id[sub], fam.z[sub], fam.mu[sub], fam.origin_stage[sub])
    assert invariance_report(keep, small_state.seq, 2000)["max_residual"] < 1e-12


def test_same_time_pairs_have_zero_residual(family, small_state):
    sel = family.m == family.m.max()
    one = LineFieldFamily(family.m[sel], family.id[sel], family.z[sel], family.mu[sel], family.origin_stage[sel])
    assert invariance_report(one, small_state.seq, 300)["max_residual"] == 0


def test_old_mass_preserved(small_state):
    first = replay(_prefix(small_state), small_state.params[:1], small_state.config)
    f1 = assemble_family(first)
    f2 = assemble_family(small_state)
    end1 = small_state.params[0].end
    k1 = {(m, i): mu for m, i, mu in zip(f1.m, f1.id, f1.mu) if m <= end1}
    k2 = {(m, i): mu for m, i, mu in zip(f2.m, f2.id, f2.mu) if m <= end1}
    common = set(k1) & set(k2)
    assert len(common) > 1000
    assert all(k1[key] == k2[key] for key in common)


def _prefix(state):
    return BoundedSequence(state.seq.bounds, state.seq.ops[: state.params[0].end])


def test_initial_angle_option(small_state):
    fam = assemble_family(small_state, max_points_per_cloud=200, angle=lambda z: np.angle(z))
    assert np.all(np.abs(np.abs(fam.mu) - 1) < 1e-12)
    assert invariance_report(fam, small_state.seq, 1000)["max_residual"] < 1e-9
    tau1 = small_state.params[0].tau
    rows = (fam.m == tau1) & (fam.id // ID_STRIDE == 1) & (fam.origin_stage == 1)
    assert np.allclose(fam.mu[rows], np.exp(2j * np.angle(fam.z[rows])))


def test_csv_roundtrip(family):
    back = LineFieldFamily.from_csv(family.to_csv())
    for name in ("m", "id", "z", "mu", "origin_stage"):
        assert np.array_equal(getattr(back, name), getattr(family, name))
    assert back.plan_sha256 == family.plan_sha256 and len(back.plan_sha256) == 64


def test_restrict_to_julia(family, small_state):
    r = restrict_to_julia(family, small_state)
    sup = r.support()
    assert np.all(np.abs(np.abs(r.mu[sup]) - 1) < 1e-12)
    assert np.all(r.mu[~sup] == 0)
    # samples far from every recorded witness lose their value
    far = family.copy()
    far.anchor = np.full(len(far), 50 + 0j)
    far.origin_stage[:] = 1
    assert not restrict_to_julia(far, small_state).support().any()
    # stage-one anchors inside D(0,1/3) are within 1 of the stage-one witnesses
    rows = family.id // ID_STRIDE == 1
    assert r.support()[rows].all()
