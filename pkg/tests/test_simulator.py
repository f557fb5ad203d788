import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noncollision import simulator as sim
from noncollision.gerver import fixed_point
from noncollision.kepler import DelaunayElliptic, elliptic_to_cartesian

MU, CHI = 1e-3, 1e4


@pytest.fixture(scope="module")
def shot():
    """First local map at mu = 1e-3, phased for a horizontal exit."""
    fp = fixed_point(0.5)
    s = sim.lift_gerver(0.5, MU, CHI, 1)
    d, res = sim.shoot_phase(s, math.pi, sim.DEFAULT, fp.collision1.alpha)
    return sim.shift_phase(s, d), res


def _kepler_state(ell, mu=1e-3, chi=1e4, far=-50.0):
    q = elliptic_to_cartesian(DelaunayElliptic(1.0, ell, 0.8, 0.3))
    return sim.PhaseState(q.q, q.p, np.array([far, 0.0]), np.array([0.0, 0.0]), mu, chi)


vectors = st.lists(st.floats(-3, 3), min_size=8, max_size=8)


@given(vectors, st.floats(1e-5, 1e-2))
def test_relative_split_reconstruction(v, mu):
    s = sim.PhaseState(v[0:2], v[2:4], v[4:6], v[6:8], mu, 1e4)
    Q3, v3, Q4, v4 = s.Q3, s.v3, s.Q4_abs, s.v4
    r = sim.relative_split(s).reconstruct()
    for a, b in zip(r, (Q3, v3, Q4, v4)):
        assert np.allclose(a, b, rtol=1e-15, atol=1e-15)


@given(vectors, st.floats(1e-5, 1e-2))
def test_rhs_is_the_energy_gradient(v, mu):
    s = sim.PhaseState(v[0:2], v[2:4], v[4:6], v[6:8], mu, 1e4)
    if min(np.hypot(*s.Q3), np.hypot(*s.Q4), np.hypot(*(s.Q3 - s.Q4))) < 0.1:
        return
    f = sim.hamiltonian_rhs(s)
    y = s.vector
    assert np.allclose(f[[0, 1, 4, 5]], y[[2, 3, 6, 7]])
    h = 1e-6
    for i, j in ((0, 2), (1, 3), (4, 6), (5, 7)):
        yp, ym = y.copy(), y.copy()
        yp[i] += h
        ym[i] -= h
        dH = (sim.total_energy(sim.PhaseState.from_vector(yp, mu, 1e4))
              - sim.total_energy(sim.PhaseState.from_vector(ym, mu, 1e4))) / (2 * h)
        assert abs(f[j] + dH) <= 1e-6 * max(1.0, abs(dH))


@given(vectors, st.sampled_from([0.0, -1e4]))
def test_rebase_keeps_the_physical_state(v, origin):
    s = sim.PhaseState(v[0:2], v[2:4], v[4:6], v[6:8], 1e-3, 1e4)
    r = s.rebased(origin)
    assert np.allclose(r.Q4_abs, s.Q4_abs, atol=1e-9)
    assert r.origin4 == origin


@settings(max_examples=10)
@given(st.floats(-math.pi, math.pi), st.floats(0.5, 8.0))
def test_reversibility_on_kepler_segments(ell, T):
    s = _kepler_state(ell)
    fwd = sim.integrate_for(s, T)
    back = sim.integrate_for(fwd, -T)
    assert np.abs(back.vector - s.vector).max() <= 1e-8
    assert abs(back.t - s.t) <= 1e-12


@settings(max_examples=10)
@given(st.floats(-math.pi, math.pi), st.floats(0.5, 8.0))
def test_energy_conservation_on_segments(ell, T):
    s = _kepler_state(ell)
    out, info = sim.integrate_for(s, T, return_info=True)
    assert abs(out.energy - s.energy) <= 1e-9
    assert info.energy_drift <= 1e-9


@settings(max_examples=5)
@given(st.floats(0.6, 1.4), st.floats(0.15, 0.95), st.floats(-math.pi, math.pi))
def test_kepler_period_and_drift(L, eG, g):
    r = sim.kepler_run(DelaunayElliptic(L, 0.0, L * eG, g), 10)
    assert r.period_error <= 1e-8
    assert r.energy_drift <= 1e-10


@settings(max_examples=10)
@given(st.floats(-1e-4, 1e-4))
def test_section_idempotence(d):
    s = sim.shift_phase(sim.lift_gerver(0.5, MU, CHI, 1), d)
    sec = sim.SectionSpec(sim.SectionKind.X4_MINUS2, +1)
    out = sim.integrate_to_section(s, sec, 0.0)
    assert out is s


@settings(max_examples=10)
@given(st.floats(-math.pi, math.pi))
def test_event_residuals(ell):
    s = _kepler_state(ell)
    sec = sim.SectionSpec(sim.SectionKind.PERICENTER3, +1)
    out = sim.integrate_to_section(s, sec, 20.0)
    assert abs(sec.residual(out)) <= 1e-12
    assert sec.rate(out) > 0


def test_no_crossing_raises():
    s = _kepler_state(0.0)
    sec = sim.SectionSpec(sim.SectionKind.X3_MINUS2, -1)
    with pytest.raises(sim.NoCrossingError):
        sim.integrate_to_section(s, sec, 5.0)


@given(vectors, st.floats(1.01, 50), st.floats(1.01, 50))
def test_renormalize_homogeneity(v, a, b):
    s = sim.PhaseState(v[0:2], v[2:4], v[4:6], v[6:8], 1e-3, 1e4, t=2.0)
    ab, _ = sim.renormalize(s, a * b)
    twice, _ = sim.renormalize(sim.renormalize(s, a)[0], b)
    # the reflection squares to the identity
    flip = np.array([1.0, -1.0])
    assert np.allclose(twice.Q3 * flip, ab.Q3, rtol=1e-12, atol=1e-12)
    assert np.allclose(twice.v3 * flip, ab.v3, rtol=1e-12, atol=1e-12)
    assert np.allclose(twice.Q4_abs * flip, ab.Q4_abs, rtol=1e-12, atol=1e-9)
    assert twice.chi == pytest.approx(ab.chi, rel=1e-12)
    assert twice.t == pytest.approx(ab.t, rel=1e-12)


@given(st.floats(-2.0, -0.51))
def test_renormalize_resets_energy(E3):
    # apocenter-like radius keeps the kinetic term well away from zero
    r = 0.5 / (-E3)
    q = np.array([0.0, r])
    v = np.array([math.sqrt(2 * (E3 + 1 / r)), 0.0])
    s = sim.PhaseState(q, v, np.array([-2.0, 0.3]), np.array([1.0, 0.0]), 1e-3, 1e4)
    out, lam = sim.renormalize(s)
    assert lam == pytest.approx(2 * abs(E3))
    assert out.E3() == pytest.approx(-0.5, abs=1e-12)
    assert out.chi == pytest.approx(lam * 1e4)


def test_renormalize_rejects_contraction():
    q = np.array([0.0, 1.0])
    s = sim.PhaseState(q, np.array([1.0, 0.0]), np.array([-2.0, 0.0]), np.array([1.0, 0.0]), 1e-3, 1e4)
    with pytest.raises(sim.NotExpandingError):
        sim.renormalize(s)


def test_renormalize_derivative_by_finite_differences():
    s = sim.lift_gerver(0.5, 1e-4, 1e4, collision=2, x4=-2 / 3)
    J = sim.finite_diff_jacobian(lambda z: sim.renormalize(z, 3.0)[0], s, x_in=-2 / 3,
                                 direction=int(np.sign(s.v4[0])))
    r = math.sqrt(3.0)
    assert np.abs(J.matrix - np.diag([r, 1, -r, -1, -r, -1])).max() <= 1e-6
    assert not J.flagged


def test_section_coordinates_round_trip():
    s = sim.lift_gerver(0.5, MU, CHI, 1)
    X = sim.section_coordinates(s)
    back = sim.state_from_coordinates(X, s.energy, MU, CHI, -2.0, +1, guess=s)
    assert np.allclose(back.vector, s.vector, atol=1e-10)


def test_lift_gerver_meets_at_the_collision_point():
    s = sim.lift_gerver(0.5, MU, CHI, 1)
    tau, psi = sim.meeting_residual(s, 1)
    assert abs(tau) <= 1e-9
    assert psi == pytest.approx(fixed_point(0.5).psi1, abs=1e-9)


def test_local_map_encounter(shot, tmp_path):
    s, _ = shot
    log_ = sim.EventLog()
    rec = sim.TrajectoryRecorder(every=5)
    res = sim.local_map(s, sim.DEFAULT, log_, rec)
    assert res.omega == 4
    assert 0.01 * MU <= res.min_distance <= 100 * MU
    assert res.energy_drift <= 1e-9
    names = log_.sections()
    assert names.count("RelDist entry") == 1 and names.count("RelDist exit") == 1
    assert names.index("RelDist entry") < names.index("RelDist exit")
    assert abs(sim.wrap_angle(res.theta_out - math.pi)) <= 1e-9
    assert res.state.v4[0] < 0 and abs(res.state.Q4_abs[0] + 2.0) <= 1e-9

    log_.write_jsonl(tmp_path / "ev.jsonl")
    recs = [json.loads(line) for line in open(tmp_path / "ev.jsonl")]
    assert {"section", "state", "H", "delaunay"} <= set(recs[0])
    rec.write_csv(tmp_path / "tr.csv")
    header = next(csv.reader(open(tmp_path / "tr.csv")))
    assert header == list(sim.TrajectoryRecorder.HEADER)


def test_alpha_prediction_improves_with_mu():
    fp = fixed_point(0.5)
    errs = []
    for mu in (1e-3, 1e-4):
        s = sim.lift_gerver(0.5, mu, 10 / mu, 1)
        _, res = sim.shoot_phase(s, math.pi, sim.DEFAULT, fp.collision1.alpha)
        errs.append(abs(sim.wrap_angle(res.alpha_measured - res.alpha_predicted)))
    assert errs[1] < errs[0]


def test_printed_alpha_halves_the_deflection(shot):
    _, res = shot
    sp = sim.relative_split(res.entry)
    # the rotation angle is measured from the identity, so wrap before comparing
    full = abs(sim.wrap_angle(sim.alpha_prediction(sp, MU)))
    half = abs(sim.wrap_angle(sim.alpha_prediction(sp, MU, printed=True)))
    assert abs(sim.wrap_angle(res.alpha_measured - res.alpha_predicted)) < 0.01
    assert half < full
    assert abs(sim.wrap_angle(res.alpha_measured - sim.alpha_prediction(sp, MU, printed=True))) > 0.1


def test_global_map_round_trip():
    # chi = 1e3 keeps the aimed return cheap; an unaimed exit escapes
    fp = fixed_point(0.5)
    s = sim.lift_gerver(0.5, MU, 1e3, 1)
    _, res = sim.shoot_phase(s, math.pi, sim.DEFAULT, fp.collision1.alpha)
    aim = sim.aim_global(res.state, fp.delaunay["4-2"][2])
    g = aim.result
    assert abs(aim.dtheta) <= 10 / s.chi
    out = g.state
    assert out.origin4 == 0.0
    assert abs(out.Q4[0] + 2.0) <= 1e-9 and out.v4[0] > 0
    assert g.energy_drift <= 1e-9
    assert abs(g.dE3) <= 10 * MU
    assert g.q1_pericenter > 0


def test_parameter_and_input_checks(shot):
    s, _ = shot
    with pytest.raises(ValueError):
        sim.local_map(sim.PhaseState(s.Q3, s.v3, s.Q4, s.v4, 0.5, CHI))
    with pytest.raises(ValueError):
        sim.local_map(sim.PhaseState(s.Q3, s.v3, s.Q4, s.v4, MU, 10.0))
    with pytest.raises(ValueError):
        sim.local_map(sim.PhaseState(s.Q3, s.v3, s.Q4 + 0.5, s.v4, MU, CHI))
    far = sim.PhaseState(np.array([0.0, 1.99]), s.v3, s.Q4, s.v4, MU, CHI)
    with pytest.raises(sim.DegenerateInputError):
        sim.local_map(far)
    with pytest.raises(ValueError):
        sim.SimConfig(kappa=0.6)
    with pytest.raises(ValueError):
        sim.SectionSpec(sim.SectionKind.X4_MINUS2, 2)
    with pytest.raises(ValueError):
        sim.SectionSpec(sim.SectionKind.X4_MINUS2_OVER_LAMBDA)
    with pytest.raises(ValueError):
        sim.PhaseState(s.Q3, s.v3, s.Q4, s.v4, -1.0, CHI)
    with pytest.raises(ValueError):
        sim.finite_diff_jacobian("nope", s)


def test_convergence_study_validates_lists():
    with pytest.raises(ValueError):
        sim.convergence_study([])
    with pytest.raises(ValueError):
        sim.convergence_study([1e-4, 1e-3])
    with pytest.raises(ValueError):
        sim.convergence_study([1e-3, 1e-4], [1e4])


def test_convergence_study_local_rows():
    rows, verdicts = sim.convergence_study([1e-3, 1e-4], do_global=False)
    assert all(not r.error for r in rows)
    assert rows[1].local_error < rows[0].local_error
    assert verdicts["local_error_decreasing"]
