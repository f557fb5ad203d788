import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from noncollision.kepler import (
    CartesianOrbitState,
    DelaunayElliptic,
    DelaunayHyperbolic,
    Frame,
    asymptote_angles,
    cartesian_to_delaunay,
    delaunay_derivatives,
    elliptic_to_cartesian,
    hyperbolic_to_cartesian,
    solve_kepler_elliptic,
    solve_kepler_hyperbolic,
    state_jacobian,
    wrap_angle,
)

angles = st.floats(-math.pi, math.pi)
frames = st.sampled_from([Frame.RIGHT, Frame.LEFT])


@st.composite
def ellipses(draw):
    L = draw(st.floats(0.5, 2.0))
    # |G| bounded away from 0: the radial orbit has no Delaunay chart
    G = L * draw(st.floats(0.05, 0.95)) * draw(st.sampled_from([-1, 1]))
    return DelaunayElliptic(L, draw(angles), G, draw(angles))


@st.composite
def hyperbolas(draw):
    return DelaunayHyperbolic(draw(st.floats(0.5, 2.0)), draw(st.floats(-5, 5)),
                              draw(st.floats(0.05, 2)) * draw(st.sampled_from([-1, 1])),
                              draw(angles), draw(frames))


@given(st.floats(-50, 50), st.floats(0, 0.99))
def test_elliptic_kepler_residual(ell, e):
    u = solve_kepler_elliptic(ell, e)
    assert abs(wrap_angle(u - e * math.sin(u) - ell)) <= 1e-13


@given(st.floats(-50, 50), st.floats(1.001, 10))
def test_hyperbolic_kepler_residual(ell, e):
    u = solve_kepler_hyperbolic(ell, e)
    assert abs(u - e * math.sinh(u) - ell) <= 1e-13 * max(1.0, abs(ell))


def test_solver_domains():
    with pytest.raises(ValueError):
        solve_kepler_elliptic(0.1, 1.0)
    with pytest.raises(ValueError):
        solve_kepler_hyperbolic(0.1, 1.0)
    assert solve_kepler_hyperbolic(0.0, 2.0) == 0.0


def _conditioning(st_):
    # the energy 1/2 v^2 - 1/r loses digits like 1/r close to the focus
    return max(1.0, 1.0 / float(np.hypot(*st_.q)))


@given(ellipses())
def test_elliptic_round_trip(el):
    st_ = elliptic_to_cartesian(el)
    back = cartesian_to_delaunay(st_, "elliptic")
    tol = 1e-10 * _conditioning(st_)
    assert abs(back.L - el.L) <= tol
    assert abs(back.G - el.G) <= tol
    assert abs(wrap_angle(back.ell - el.ell)) <= tol
    assert abs(wrap_angle(back.g - el.g)) <= tol


@given(hyperbolas())
def test_hyperbolic_round_trip(hy):
    st_ = hyperbolic_to_cartesian(hy)
    back = cartesian_to_delaunay(st_, "hyperbolic", hy.frame)
    tol = 1e-10 * _conditioning(st_)
    assert abs(back.L - hy.L) <= tol
    assert abs(back.G - hy.G) <= tol
    assert abs(back.ell - hy.ell) <= tol
    assert abs(wrap_angle(back.g - hy.g)) <= tol


@given(ellipses(), st.floats(0.5, 2.0))
def test_rescaled_mass_round_trip(el, k):
    st_ = elliptic_to_cartesian(el, k)
    assert abs(st_.energy(k) - k**2 * el.E) <= 1e-10 * k**2
    back = cartesian_to_delaunay(st_, "elliptic", k=k)
    assert abs(back.L - el.L) <= 1e-10


@given(ellipses())
def test_energy_and_angular_momentum(el):
    st_ = elliptic_to_cartesian(el)
    # near-radial orbits pass pericenter fast; scale by the kinetic term
    scale = max(1.0, float(st_.p @ st_.p))
    assert abs(st_.energy() + 0.5 / el.L**2) <= 1e-12 * scale
    assert abs(st_.angular_momentum() - el.G) <= 1e-12 * scale


@given(st.one_of(ellipses(), hyperbolas()))
def test_jacobian_determinant_is_unit(el):
    J = state_jacobian(el)
    assert abs(abs(np.linalg.det(J)) - 1.0) <= 1e-6


@given(st.one_of(ellipses(), hyperbolas()))
def test_poisson_brackets(el):
    # {ell, L} and {g, G} are each +-1 and every other bracket vanishes.  The
    # clockwise ellipse flips the (g, G) pair, so the signs differ per chart
    # and fix the sign of det J.
    J = state_jacobian(el)
    Jinv = np.linalg.inv(J)
    Om = np.block([[np.zeros((2, 2)), np.eye(2)], [-np.eye(2), np.zeros((2, 2))]])
    P = Jinv @ Om @ Jinv.T
    s1 = math.copysign(1.0, P[1, 0])
    s2 = math.copysign(1.0, P[3, 2])
    want = np.zeros((4, 4))
    want[1, 0], want[0, 1] = s1, -s1
    want[3, 2], want[2, 3] = s2, -s2
    conv = elliptic_to_cartesian if isinstance(el, DelaunayElliptic) else hyperbolic_to_cartesian
    assert np.allclose(P, want, atol=1e-8 * _conditioning(conv(el)))
    assert math.copysign(1.0, np.linalg.det(J)) == -s1 * s2
    expected = {"elliptic": (1, -1), Frame.RIGHT: (1, 1), Frame.LEFT: (1, -1)}
    key = "elliptic" if isinstance(el, DelaunayElliptic) else el.frame
    assert (s1, s2) == expected[key]


def _fd_position(el, i, h):
    vals = [el.L, el.ell, el.G, el.g]

    def pos(d):
        v = list(vals)
        v[i] += d
        new = type(el)(*v) if isinstance(el, DelaunayElliptic) else DelaunayHyperbolic(*v, el.frame)
        conv = elliptic_to_cartesian if isinstance(el, DelaunayElliptic) else hyperbolic_to_cartesian
        return conv(new).q

    return (pos(h) - pos(-h)) / (2 * h)


# finite differences need curvature bounded away from the radial limit
smooth = st.one_of(ellipses().filter(lambda e: abs(e.G) > 0.3 * e.L), hyperbolas().filter(lambda h: abs(h.G) > 0.3))


@given(smooth)
def test_first_derivatives_match_fd(el):
    d1 = delaunay_derivatives(el)
    for i in range(4):
        assert np.allclose(d1[:, i], _fd_position(el, i, 1e-6), atol=1e-6 * max(1.0, np.abs(d1).max()))


@given(smooth)
def test_second_derivatives_match_fd_of_first(el):
    _, d2 = delaunay_derivatives(el, order=2)
    assert np.allclose(d2, np.transpose(d2, (0, 2, 1)), atol=1e-10)
    h = 1e-6
    vals = [el.L, el.ell, el.G, el.g]
    for j in range(4):
        vp, vm = list(vals), list(vals)
        vp[j] += h
        vm[j] -= h
        mk = (lambda v: DelaunayElliptic(*v)) if isinstance(el, DelaunayElliptic) else (
            lambda v: DelaunayHyperbolic(*v, el.frame))
        fd = (delaunay_derivatives(mk(vp)) - delaunay_derivatives(mk(vm))) / (2 * h)
        assert np.allclose(d2[:, :, j], fd, atol=1e-5 * max(1.0, np.abs(d2).max()))


def test_asymptotes_of_horizontal_traveler():
    # the incoming-horizontal hyperbola in the right frame
    hy = DelaunayHyperbolic(1.0, -3.0, 0.7, -math.atan(0.7), Frame.RIGHT)
    st_ = hyperbolic_to_cartesian(hy)
    th_in, th_out = asymptote_angles(st_)
    assert abs(wrap_angle(th_in)) < 1e-12 or abs(wrap_angle(th_in - math.pi)) < 1e-12
    with pytest.raises(ValueError):
        asymptote_angles(CartesianOrbitState(np.array([1.0, 0.0]), np.array([0.0, 1.0])))


def test_invalid_elements():
    with pytest.raises(ValueError):
        DelaunayElliptic(1.0, 0.0, 1.5, 0.0)
    with pytest.raises(ValueError):
        DelaunayHyperbolic(-1.0, 0.0, 0.5, 0.0)
