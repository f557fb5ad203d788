"""Gerver's idealized collision map (mu = 0, chi = infinity).

Two unit masses meet at an intersection point of the captured body's ellipse
and the traveler's hyperbola, both focused at Q2.  The collision is elastic,
so it only rotates the relative velocity by an angle alpha; alpha is fixed by
asking the traveler to leave along the horizontal, heading left.

Polar angles psi are measured counterclockwise from the +y axis, so a point
at angle psi is r (-sin psi, cos psi).  In this convention

    r3 = G3^2 / (1 - e3 sin(psi + g3)),   r4 = G4^2 / (1 - e4 sin(psi - g4)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .kepler import (
    CartesianOrbitState,
    DelaunayElliptic,
    DelaunayHyperbolic,
    Frame,
    asymptote_angles,
    cartesian_to_delaunay,
    wrap_angle,
)

__all__ = [
    "GerverError",
    "OrbitTriple",
    "CollisionEvent",
    "GerverFixedPoint",
    "elastic_collision",
    "polar_radius",
    "polar_state",
    "orbit_intersections",
    "incoming_G4",
    "collide_at",
    "gerver_map",
    "fixed_point",
    "double_collision",
    "gerver_derivative",
    "gerver_derivative_fd",
]


class GerverError(RuntimeError):
    pass


@dataclass(frozen=True)
class OrbitTriple:
    """Slow variables (E3, e3, g3) of the captured body.

    ``spin`` is the sign of G3, which the triple alone does not determine.
    ``None`` lets :func:`gerver_map` pick the Gerver convention (+1 before the
    first collision, -1 before the second).
    """

    E3: float
    e3: float
    g3: float
    spin: int | None = None

    def __post_init__(self):
        if not self.E3 < 0:
            raise ValueError(f"E3 must be negative, got {self.E3}")
        if not 0.0 <= self.e3 < 1.0:
            raise ValueError(f"e3 must lie in [0, 1), got {self.e3}")

    @property
    def L3(self) -> float:
        return 1.0 / math.sqrt(-2.0 * self.E3)

    def G3(self, spin: int | None = None) -> float:
        s = spin if spin is not None else (self.spin if self.spin is not None else 1)
        return s * self.L3 * math.sqrt(1.0 - self.e3**2)

    def as_array(self) -> np.ndarray:
        return np.array([self.E3, self.e3, self.g3])


@dataclass(frozen=True)
class CollisionEvent:
    psi: float
    alpha: float
    point: np.ndarray
    v3_minus: np.ndarray
    v4_minus: np.ndarray
    v3_plus: np.ndarray
    v4_plus: np.ndarray
    j: int = 1
    omega: int = 4


@dataclass(frozen=True)
class GerverFixedPoint:
    eps0: float
    eps1: float
    collision_point_1: np.ndarray
    collision_point_2: np.ndarray
    p1: float
    p2: float
    lambda0: float
    psi1: float
    psi2: float
    e4_star: float
    e4_starstar: float
    collision1: CollisionEvent
    collision2: CollisionEvent
    # Delaunay data (L, u, G, g) before/after each collision, keyed like "3-1" (body 3, before, collision 1)
    delaunay: dict = field(default_factory=dict)

    @property
    def x_star(self) -> OrbitTriple:
        return OrbitTriple(-0.5, self.eps0, math.pi / 2, spin=1)


# --- elementary geometry ------------------------------------------------------


def elastic_collision(v3m, v4m, alpha: float):
    """Rotate the relative velocity by alpha, keeping the center-of-mass velocity."""
    v3m = np.asarray(v3m, dtype=float)
    v4m = np.asarray(v4m, dtype=float)
    d = v3m - v4m
    nd = math.hypot(d[0], d[1])
    if nd == 0.0:
        raise GerverError("zero relative velocity: collision rotation undefined")
    c, s = math.cos(alpha), math.sin(alpha)
    n = np.array([c * d[0] - s * d[1], s * d[0] + c * d[1]]) / nd
    vc = 0.5 * (v3m + v4m)
    return vc + 0.5 * nd * n, vc - 0.5 * nd * n


def _sign_for(el) -> float:
    return 1.0 if isinstance(el, DelaunayElliptic) else -1.0


def polar_radius(el, psi: float) -> float:
    """Radius of a focus-centered conic at polar angle psi.

    ``el`` is a DelaunayElliptic (captured body) or a right-frame
    DelaunayHyperbolic (traveler); the mean anomaly is ignored.
    """
    den = 1.0 - el.e * math.sin(psi + _sign_for(el) * el.g)
    if not den > 0:
        raise GerverError(f"psi={psi} is not on this branch of the conic")
    return el.G**2 / den


def polar_state(el, psi: float) -> CartesianOrbitState:
    """Position and velocity on a conic at polar angle psi (k = 1)."""
    r = polar_radius(el, psi)
    rdot = el.e / el.G * math.cos(psi + _sign_for(el) * el.g)
    rhat = np.array([-math.sin(psi), math.cos(psi)])
    phat = np.array([-math.cos(psi), -math.sin(psi)])
    return CartesianOrbitState(r * rhat, rdot * rhat + el.G / r * phat)


class Intersections(list):
    """Sorted list of intersection angles; ``tangent`` flags a double root."""

    tangent: bool = False


def orbit_intersections(ellipse, hyperbola) -> Intersections:
    """Polar angles in [0, 2 pi) where the two conics meet.

    Equal radii reduce to a sin psi + b cos psi = c, so there are at most two
    solutions; both denominators are then automatically positive.
    """
    G3, e3, g3 = ellipse.G, ellipse.e, ellipse.g
    G4, e4, g4 = hyperbola.G, hyperbola.e, hyperbola.g
    a = -(G3**2) * e4 * math.cos(g4) + G4**2 * e3 * math.cos(g3)
    b = G3**2 * e4 * math.sin(g4) + G4**2 * e3 * math.sin(g3)
    c = G4**2 - G3**2
    rr = math.hypot(a, b)
    out = Intersections()
    if rr == 0.0 or abs(c) > rr:
        return out
    phase = math.atan2(b, a)
    s = math.asin(c / rr)
    cands = [(s - phase) % (2 * math.pi), (math.pi - s - phase) % (2 * math.pi)]
    if abs(abs(c) - rr) <= 1e-14 * rr:
        out.tangent = True
        cands = cands[:1]
    for psi in sorted(cands):
        if 1.0 - e3 * math.sin(psi + g3) > 0 and 1.0 - e4 * math.sin(psi - g4) > 0:
            out.append(psi)
    return out


def incoming_G4(L4: float, r: float, psi: float) -> float:
    """Positive angular momentum of the incoming-horizontal hyperbola through (r, psi).

    With tan g4 = -G4/L4 the polar equation collapses to the quadratic
    G^2 + (r cos psi / L4) G - r (1 - sin psi) = 0.
    """
    b = r * math.cos(psi) / L4
    c = r * (1.0 - math.sin(psi))
    return 0.5 * (-b + math.sqrt(b * b + 4.0 * c))


def _incoming_hyperbola(L4: float, G4: float) -> DelaunayHyperbolic:
    return DelaunayHyperbolic(L4, 0.0, G4, -math.atan(G4 / L4), Frame.RIGHT)


# --- one collision --------------------------------------------------------------


def _outgoing_angle(q, v) -> float:
    st = CartesianOrbitState(q, v)
    if st.energy() <= 0:
        return math.nan
    return asymptote_angles(st)[1]


def _solve_alpha(q, v3m, v4m, traveler: int, alpha_ref: float | None) -> float:
    """Root of theta_out(alpha) - pi for the traveler, continuous with alpha_ref."""

    def f(al):
        v3p, v4p = elastic_collision(v3m, v4m, al)
        th = _outgoing_angle(q, v4p if traveler == 4 else v3p)
        return math.nan if math.isnan(th) else wrap_angle(th - math.pi)

    n = 720
    grid = np.linspace(0.0, 2 * math.pi, n + 1)
    vals = [f(a) for a in grid]
    roots = []
    for a0, a1, f0, f1 in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if math.isnan(f0) or math.isnan(f1) or f0 * f1 > 0 or abs(f0 - f1) > math.pi:
            continue
        if f0 == 0.0:
            roots.append(a0)
            continue
        roots.append(brentq(f, a0, a1, xtol=1e-15, rtol=1e-15))
    if not roots:
        raise GerverError("no rotation angle makes the traveler leave horizontally")
    if alpha_ref is None:
        # Gerver's branch: the captured body keeps the larger share of the turn
        return min(roots, key=lambda a: abs(wrap_angle(a - math.pi / 2)))
    return min(roots, key=lambda a: abs(wrap_angle(a - alpha_ref)))


def collide_at(
    x: OrbitTriple,
    psi: float,
    omega: int = 4,
    spin: int = 1,
    alpha_ref: float | None = None,
):
    """Collision at polar angle psi on the ellipse of ``x``.

    The traveler arrives on the incoming-horizontal hyperbola of energy -E3
    through the collision point.  Returns the post-collision triple of the
    captured body and the :class:`CollisionEvent`.
    """
    if omega not in (3, 4):
        raise ValueError("omega must be 3 or 4")
    L3 = x.L3
    G3 = spin * L3 * math.sqrt(1.0 - x.e3**2)
    ell = DelaunayElliptic(L3, 0.0, G3, x.g3)
    s3 = polar_state(ell, psi)
    r = math.hypot(*s3.q)
    G4 = incoming_G4(L3, r, psi)
    s4 = polar_state(_incoming_hyperbola(L3, G4), psi)
    alpha = _solve_alpha(s3.q, s3.p, s4.p, omega, alpha_ref)
    v3p, v4p = elastic_collision(s3.p, s4.p, alpha)
    captured = v3p if omega == 4 else v4p
    st = CartesianOrbitState(s3.q, captured)
    if st.energy() >= 0:
        raise GerverError("captured body is not elliptic after the exchange")
    el = cartesian_to_delaunay(st, "elliptic")
    out = OrbitTriple(el.E, el.e, el.g, spin=1 if el.G > 0 else -1)
    ev = CollisionEvent(psi, alpha, s3.q, s3.p, s4.p, v3p, v4p, omega=omega)
    return out, ev


def _default_spin(x: OrbitTriple, j: int) -> int:
    if x.spin is not None:
        return x.spin
    return 1 if j == 1 else -1


def psi_from_e4(x: OrbitTriple, e4: float, j: int, spin: int | None = None) -> float:
    """Collision angle selected by (e4, j).

    j = 1 picks the intersection with the larger y coordinate, j = 2 the one
    with the smaller; at the fixed point these are the first and second
    collision points.
    """
    if not e4 > 1:
        raise ValueError("e4 must exceed 1")
    spin = _default_spin(x, j) if spin is None else spin
    L = x.L3
    ell = DelaunayElliptic(L, 0.0, spin * L * math.sqrt(1 - x.e3**2), x.g3)
    hyp = _incoming_hyperbola(L, L * math.sqrt(e4 * e4 - 1.0))
    pts = orbit_intersections(ell, hyp)
    if not pts:
        raise GerverError("orbits do not intersect")
    pts = sorted(pts, key=lambda p: -polar_radius(ell, p) * math.cos(p))
    if j - 1 >= len(pts):
        raise GerverError(f"intersection j={j} does not exist")
    return pts[j - 1]


def gerver_map(
    x: OrbitTriple,
    e4: float | None = None,
    j: int = 1,
    omega: int = 4,
    *,
    psi: float | None = None,
    alpha_ref: float | None = None,
) -> OrbitTriple:
    """The Gerver map G_{e4, j, omega}; pass ``psi`` instead of ``e4`` to fix the angle."""
    if j not in (1, 2):
        raise ValueError("j must be 1 or 2")
    spin = _default_spin(x, j)
    if psi is None:
        if e4 is None:
            raise ValueError("give either e4 or psi")
        psi = psi_from_e4(x, e4, j, spin)
    out, _ = collide_at(x, psi, omega, spin, alpha_ref)
    return out


# --- fixed point ------------------------------------------------------------------


def fixed_point(eps0: float = 0.5) -> GerverFixedPoint:
    """Closed-form Gerver data for the two-collision cycle."""
    if not 0.0 < eps0 < math.sqrt(0.5):
        raise ValueError("eps0 must lie in (0, sqrt(2)/2)")
    eps1 = math.sqrt(1.0 - eps0**2)
    X, Y = -eps0 * eps1, eps0 + eps1
    R = math.hypot(X, Y)
    disc = math.sqrt(Y * Y + 4.0 * (X + R))
    p1, p2 = 0.5 * (-Y + disc), 0.5 * (-Y - disc)
    pt1 = np.array([X, Y])
    pt2 = np.array([eps0**2, 0.0])
    psi1 = math.atan2(-X, Y) % (2 * math.pi)
    psi2 = 1.5 * math.pi

    x1 = OrbitTriple(-0.5, eps0, math.pi / 2, spin=1)
    x2, ev1 = collide_at(x1, psi1, 4, 1)
    x3, ev2 = collide_at(x2, psi2, 4, -1)
    ev1 = replace(ev1, j=1)
    ev2 = replace(ev2, j=2)

    def dl(q, v, kind):
        st = CartesianOrbitState(q, v)
        el = cartesian_to_delaunay(st, kind)
        return (el.L, el.u, el.G, el.g)

    data = {
        "3-1": dl(pt1, ev1.v3_minus, "elliptic"),
        "4-1": dl(pt1, ev1.v4_minus, "hyperbolic"),
        "3+1": dl(pt1, ev1.v3_plus, "elliptic"),
        "4+1": dl(pt1, ev1.v4_plus, "hyperbolic"),
        "3-2": dl(ev2.point, ev2.v3_minus, "elliptic"),
        "4-2": dl(ev2.point, ev2.v4_minus, "hyperbolic"),
        "3+2": dl(ev2.point, ev2.v3_plus, "elliptic"),
        "4+2": dl(ev2.point, ev2.v4_plus, "hyperbolic"),
    }
    return GerverFixedPoint(
        eps0=eps0,
        eps1=eps1,
        collision_point_1=pt1,
        collision_point_2=pt2,
        p1=p1,
        p2=p2,
        lambda0=eps1**2 / eps0**2,
        psi1=psi1,
        psi2=psi2,
        e4_star=math.sqrt(1.0 + p1 * p1),
        e4_starstar=math.sqrt(1.0 + 2.0 * eps0**2),
        collision1=ev1,
        collision2=ev2,
        delaunay=data,
    )


def double_collision(x: OrbitTriple, psi1: float, psi2: float, reflect: bool = True, alpha_refs=None):
    """Two Gerver collisions at fixed polar angles, optionally followed by g3 -> -g3."""
    a1, a2 = alpha_refs if alpha_refs is not None else (None, None)
    y, _ = collide_at(replace(x, spin=1 if x.spin is None else x.spin), psi1, 4, 1 if x.spin is None else x.spin, a1)
    z, _ = collide_at(y, psi2, 4, y.spin, a2)
    if reflect:
        z = OrbitTriple(z.E3, z.e3, -z.g3, spin=-z.spin)
    return z


# --- derivative of the composed map in (psi1, psi2) -------------------------------


def _polar_r3(E, G, g, psi):
    e = np.sqrt(1 + 2 * E * G * G)
    return G * G / (1 - e * np.sin(psi + g))


def _polar_r4(E, G, g, psi):
    # traveler energy is -E, so its eccentricity uses 1 - 2 E G^2
    e = np.sqrt(1 - 2 * E * G * G)
    return G * G / (1 - e * np.sin(psi - g))


def _polar_rdot3(E, G, g, psi):
    return np.sqrt(1 + 2 * E * G * G) / G * np.cos(psi + g)


def _polar_rdot4(E, G, g, psi):
    return np.sqrt(1 - 2 * E * G * G) / G * np.cos(psi - g)


def collision_residuals(Zm, Zt, Zp):
    """Residuals (F, I) of the polar collision system.

    Zm = (E3-, G3-, g3-, psi), Zt = (G4-, g4-), Zp = (E3+, G3+, g3+, G4+, g4+);
    the traveler's energy is -E3 on both sides.  F holds angular momentum,
    radial momentum, continuity of r3, r3+ = r4+ and the horizontal outgoing
    asymptote; I holds the horizontal incoming asymptote and r3- = r4-.
    Works on complex input so Jacobians can use the complex step.
    """
    E3m, G3m, g3m, psi = Zm
    G4m, g4m = Zt
    E3p, G3p, g3p, G4p, g4p = Zp
    F = [
        G3p + G4p - G3m - G4m,
        _polar_rdot3(E3p, G3p, g3p, psi)
        + _polar_rdot4(E3p, G4p, g4p, psi)
        - _polar_rdot3(E3m, G3m, g3m, psi)
        - _polar_rdot4(E3m, G4m, g4m, psi),
        _polar_r3(E3p, G3p, g3p, psi) - _polar_r3(E3m, G3m, g3m, psi),
        _polar_r3(E3p, G3p, g3p, psi) - _polar_r4(E3p, G4p, g4p, psi),
        g4p - np.arctan(G4p * np.sqrt(-2 * E3p)),
    ]
    I = [
        g4m + np.arctan(G4m * np.sqrt(-2 * E3m)),
        _polar_r3(E3m, G3m, g3m, psi) - _polar_r4(E3m, G4m, g4m, psi),
    ]
    return np.array(F), np.array(I)


def collision_jacobians(Zm, Zt, Zp, h: float = 1e-30):
    """Complex-step Jacobians of the residuals w.r.t. the three variable blocks."""
    z = np.concatenate([Zm, Zt, Zp]).astype(complex)
    cols_F, cols_I = [], []
    for k in range(z.size):
        zk = z.copy()
        zk[k] += 1j * h
        F, I = collision_residuals(zk[:4], zk[4:6], zk[6:])
        cols_F.append(F.imag / h)
        cols_I.append(I.imag / h)
    JF = np.array(cols_F).T
    JI = np.array(cols_I).T
    return {
        "F_m": JF[:, :4],
        "F_t": JF[:, 4:6],
        "F_p": JF[:, 6:],
        "I_m": JI[:, :4],
        "I_t": JI[:, 4:6],
    }


def _collision_point_values(x: OrbitTriple, psi: float, spin: int, alpha_ref=None):
    """Numerical values of (Zm, Zt, Zp) at an actual collision."""
    out, ev = collide_at(x, psi, 4, spin, alpha_ref)
    L3 = x.L3
    G3m = spin * L3 * math.sqrt(1 - x.e3**2)
    st4m = cartesian_to_delaunay(CartesianOrbitState(ev.point, ev.v4_minus), "hyperbolic")
    st4p = cartesian_to_delaunay(CartesianOrbitState(ev.point, ev.v4_plus), "hyperbolic")
    st3p = cartesian_to_delaunay(CartesianOrbitState(ev.point, ev.v3_plus), "elliptic")
    Zm = [x.E3, G3m, x.g3, psi]
    Zt = [st4m.G, st4m.g]
    Zp = [st3p.E, st3p.G, st3p.g, st4p.G, st4p.g]
    return Zm, Zt, Zp, out, ev


def _collision_dZp_dZm(Zm, Zt, Zp) -> np.ndarray:
    """dZ+/dZ- from the implicit function theorem (5x4)."""
    J = collision_jacobians(Zm, Zt, Zp)
    Fm, Ft, Fp, Im, It = J["F_m"], J["F_t"], J["F_p"], J["I_m"], J["I_t"]
    if np.linalg.cond(Fp) > 1e12 or np.linalg.cond(It) > 1e12:
        raise GerverError("degenerate collision configuration (singular dF/dZ+)")
    dZt = -np.linalg.solve(It, Im)
    return -np.linalg.solve(Fp, Fm + Ft @ dZt)


def _triple_jac(E, G) -> np.ndarray:
    """d(e, g)/d(E, G, g) for e = sqrt(1 + 2 E G^2)."""
    e = math.sqrt(1 + 2 * E * G * G)
    return np.array([[G * G / e, 2 * E * G / e, 0.0], [0.0, 0.0, 1.0]])


def gerver_derivative(eps0: float = 0.5, reflect: bool = False) -> np.ndarray:
    """2x2 matrix d(e3, g3)/d(psi1, psi2) after both collisions at the fixed point.

    Row i holds the derivatives with respect to psi_i; columns are (e3, g3),
    matching the layout of the published matrix.  With ``reflect`` the final
    g3 -> -g3 is included.
    """
    fp = fixed_point(eps0)
    x1 = fp.x_star
    Zm1, Zt1, Zp1, x2, _ = _collision_point_values(x1, fp.psi1, 1)
    Zm2, Zt2, Zp2, _, _ = _collision_point_values(x2, fp.psi2, -1)
    D1 = _collision_dZp_dZm(Zm1, Zt1, Zp1)
    D2 = _collision_dZp_dZm(Zm2, Zt2, Zp2)
    out2 = _triple_jac(Zp2[0], Zp2[1]) @ D2[:3, :]  # d(e, g)'' / d(E, G, g, psi)_2
    d_psi2 = out2[:, 3]
    d_psi1 = out2[:, :3] @ D1[:3, 3]
    M = np.vstack([d_psi1, d_psi2])
    if reflect:
        M[:, 1] *= -1
    return M


def gerver_derivative_fd(eps0: float = 0.5, h: float = 1e-5, reflect: bool = False) -> np.ndarray:
    """Central differences of the composed Cartesian collision map (oracle)."""
    fp = fixed_point(eps0)
    refs = (fp.collision1.alpha, fp.collision2.alpha)

    def F(p1, p2):
        z = double_collision(fp.x_star, p1, p2, reflect=reflect, alpha_refs=refs)
        return np.array([z.e3, z.g3])

    rows = []
    for i in range(2):
        d = np.zeros(2)
        d[i] = h
        a = np.array([fp.psi1, fp.psi2])
        f1 = (F(*(a + d)) - F(*(a - d))) / (2 * h)
        f2 = (F(*(a + 2 * d)) - F(*(a - 2 * d))) / (4 * h)
        rows.append((4 * f1 - f2) / 3)
    return np.vstack(rows)
