"""Kepler and Delaunay machinery for the two-center problem.

Elliptic orbits (the captured body) use the clockwise-rotated ellipse

    q = Rcw(g) (L^2 (cos u - e), L G sin u),

and hyperbolic orbits (the traveler) come in two frames.  In the right frame
the focus is Q2 and the basic hyperbola is reflected about the y-axis before a
counterclockwise rotation by g; in the left frame the focus is Q1 and there is
no reflection.  All formulas are for m k = 1; pass ``k`` to rescale a state to
another attracting mass (positions scale by 1/k, velocities by k).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Frame",
    "KeplerSolverError",
    "DelaunayElliptic",
    "DelaunayHyperbolic",
    "CartesianOrbitState",
    "solve_kepler_elliptic",
    "solve_kepler_hyperbolic",
    "elliptic_to_cartesian",
    "hyperbolic_to_cartesian",
    "cartesian_to_delaunay",
    "delaunay_derivatives",
    "state_jacobian",
    "asymptote_angles",
    "wrap_angle",
]

TWO_PI = 2.0 * math.pi
MAX_ITER = 100


class Frame(enum.Enum):
    """Which center is the focus of a hyperbolic arc."""

    RIGHT = "right"  # focus Q2 at the origin, reflected picture
    LEFT = "left"  # focus Q1, coordinates relative to Q1


class KeplerSolverError(RuntimeError):
    pass


def wrap_angle(x: float) -> float:
    """Map an angle to (-pi, pi]."""
    y = math.remainder(x, TWO_PI)
    return math.pi if y == -math.pi else y


@dataclass(frozen=True)
class DelaunayElliptic:
    L: float
    ell: float
    G: float
    g: float

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError(f"L must be positive, got {self.L}")
        if abs(self.G) > self.L * (1 + 1e-14):
            raise ValueError(f"|G| <= L violated: G={self.G}, L={self.L}")

    @property
    def e(self) -> float:
        return math.sqrt(max(0.0, 1.0 - (self.G / self.L) ** 2))

    @property
    def E(self) -> float:
        return -0.5 / self.L**2

    @property
    def a(self) -> float:
        return self.L**2

    @property
    def b(self) -> float:
        return abs(self.L * self.G)

    @property
    def u(self) -> float:
        return solve_kepler_elliptic(self.ell, self.e)


@dataclass(frozen=True)
class DelaunayHyperbolic:
    L: float
    ell: float
    G: float
    g: float
    frame: Frame = Frame.RIGHT

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError(f"L must be positive, got {self.L}")
        if not isinstance(self.frame, Frame):
            raise TypeError("frame must be a Frame member")

    @property
    def e(self) -> float:
        return math.sqrt(1.0 + (self.G / self.L) ** 2)

    @property
    def E(self) -> float:
        return 0.5 / self.L**2

    @property
    def u(self) -> float:
        return solve_kepler_hyperbolic(self.ell, self.e)


@dataclass(frozen=True)
class CartesianOrbitState:
    q: np.ndarray
    p: np.ndarray

    def energy(self, k: float = 1.0) -> float:
        return 0.5 * float(self.p @ self.p) - k / float(np.hypot(*self.q))

    def angular_momentum(self) -> float:
        return float(self.q[0] * self.p[1] - self.q[1] * self.p[0])


# --- Kepler equations --------------------------------------------------------


def solve_kepler_elliptic(ell: float, e: float) -> float:
    """Solve u - e sin u = ell for the eccentric anomaly u.

    The mean anomaly is reduced to [-pi, pi] before the Newton iteration and
    the winding number is added back, so the residual of the reduced equation
    is at round-off level for any |ell|.
    """
    if not 0.0 <= e < 1.0:
        raise ValueError(f"elliptic solver needs 0 <= e < 1, got {e}")
    n = round(ell / TWO_PI)
    m = ell - n * TWO_PI
    if m == 0.0:
        return n * TWO_PI
    # root lies in [m - e, m + e] intersected with [-pi, pi]
    lo, hi = max(-math.pi, m - e), min(math.pi, m + e)
    u = m
    for _ in range(MAX_ITER):
        f = u - e * math.sin(u) - m
        if f > 0:
            hi = u
        else:
            lo = u
        fp = 1.0 - e * math.cos(u)
        step = f / fp
        un = u - step
        if not lo <= un <= hi:
            un = 0.5 * (lo + hi)
        done = abs(un - u) <= 4e-16 * max(1.0, abs(u)) or hi - lo <= 4e-16
        u = un
        if done:
            break
    if abs(u - e * math.sin(u) - m) > 1e-13:
        raise KeplerSolverError(f"elliptic Kepler solve failed: ell={ell}, e={e}")
    return u + n * TWO_PI


def solve_kepler_hyperbolic(ell: float, e: float) -> float:
    """Solve u - e sinh u = ell for the hyperbolic anomaly u.

    The left side is strictly decreasing in u, so the root is unique; u and
    ell have opposite signs.
    """
    if not e > 1.0:
        raise ValueError(f"hyperbolic solver needs e > 1, got {e}")
    if ell == 0.0:
        return 0.0
    s = -math.copysign(1.0, ell)
    a = abs(ell)
    # |u| solves e sinh x - x = a with x >= 0; bracket [0, hi]
    lo = 0.0
    hi = max(1.0, math.log(2.0 * a / e + 1.8) + 1.0)
    while e * math.sinh(hi) - hi < a:
        hi *= 2.0
    x = min(max(math.log(2.0 * a / e + 1.8), lo), hi)
    for _ in range(MAX_ITER):
        f = e * math.sinh(x) - x - a
        if f > 0:
            hi = x
        else:
            lo = x
        fp = e * math.cosh(x) - 1.0
        xn = x - f / fp
        if not lo <= xn <= hi:
            xn = 0.5 * (lo + hi)
        done = abs(xn - x) <= 4e-16 * max(1.0, x) or hi - lo <= 4e-16 * max(1.0, x)
        x = xn
        if done:
            break
    if abs(e * math.sinh(x) - x - a) > 1e-13 * max(1.0, a):
        raise KeplerSolverError(f"hyperbolic Kepler solve failed: ell={ell}, e={e}")
    return s * x


# --- conversions -------------------------------------------------------------


def _rot_ccw(g: float) -> np.ndarray:
    c, s = math.cos(g), math.sin(g)
    return np.array([[c, -s], [s, c]])


def _frame_matrix(kind: str, g: float) -> np.ndarray:
    """Matrix taking the basic (X, Y) conic to the physical frame."""
    if kind == "elliptic":
        return _rot_ccw(-g)
    if kind == Frame.RIGHT:
        return _rot_ccw(g) @ np.diag([-1.0, 1.0])
    return _rot_ccw(g)


def elliptic_to_cartesian(el: DelaunayElliptic, k: float = 1.0) -> CartesianOrbitState:
    L, G, e = el.L, el.G, el.e
    u = el.u
    cu, su = math.cos(u), math.sin(u)
    den = 1.0 - e * cu
    M = _frame_matrix("elliptic", el.g)
    q = M @ np.array([L * L * (cu - e), L * G * su])
    p = M @ np.array([-su / L, G * cu / L**2]) / den
    return CartesianOrbitState(q / k, p * k)


def hyperbolic_to_cartesian(hy: DelaunayHyperbolic, k: float = 1.0) -> CartesianOrbitState:
    L, G, e = hy.L, hy.G, hy.e
    u = hy.u
    ch, sh = math.cosh(u), math.sinh(u)
    udot = -1.0 / (L**3 * (1.0 - e * ch))
    M = _frame_matrix(hy.frame, hy.g)
    q = M @ np.array([L * L * (ch - e), L * G * sh])
    p = M @ np.array([L * L * sh, L * G * ch]) * udot
    return CartesianOrbitState(q / k, p * k)


def cartesian_to_delaunay(
    state: CartesianOrbitState,
    kind: str = "elliptic",
    frame: Frame = Frame.RIGHT,
    k: float = 1.0,
):
    """Invert the Delaunay-to-Cartesian maps.

    ``kind`` is "elliptic" or "hyperbolic"; ``frame`` is only used for
    hyperbolic arcs.  Angles come back in (-pi, pi].
    """
    q = np.asarray(state.q, dtype=float) * k
    p = np.asarray(state.p, dtype=float) / k
    r = math.hypot(q[0], q[1])
    if r == 0.0:
        raise ValueError("collision state (|q| = 0) has no Delaunay elements")
    E = 0.5 * float(p @ p) - 1.0 / r
    h = float(q[0] * p[1] - q[1] * p[0])
    ev = (float(p @ p) - 1.0 / r) * q - float(q @ p) * p
    if kind == "elliptic":
        if not E < 0:
            raise ValueError(f"elliptic conversion needs negative energy, got {E}")
        L = 1.0 / math.sqrt(-2.0 * E)
        G = h
        e = math.sqrt(max(0.0, 1.0 - (G / L) ** 2))
        g = -math.atan2(ev[1], ev[0]) if e > 1e-14 else 0.0
        X, Y = _frame_matrix("elliptic", g).T @ q
        cu = X / L**2 + e
        su = Y / (L * G) if G != 0 else math.copysign(math.sqrt(max(0.0, 1 - cu * cu)), float(q @ p))
        u = math.atan2(su, cu)
        return DelaunayElliptic(L, u - e * math.sin(u), G, wrap_angle(g))
    if kind != "hyperbolic":
        raise ValueError(f"unknown orbit kind {kind!r}")
    if not E > 0:
        raise ValueError(f"hyperbolic conversion needs positive energy, got {E}")
    L = 1.0 / math.sqrt(2.0 * E)
    if frame == Frame.RIGHT:
        G = h
        g = math.atan2(ev[1], ev[0])
    else:
        G = -h
        g = math.atan2(ev[1], ev[0]) - math.pi
    e = math.sqrt(1.0 + (G / L) ** 2)
    X, Y = np.linalg.solve(_frame_matrix(frame, g), q)
    if G != 0:
        u = math.asinh(Y / (L * G))
    else:
        # radial orbit: u grows through zero at pericenter
        u = math.copysign(math.acosh(max(1.0, X / L**2 + e)), float(q @ p))
    return DelaunayHyperbolic(L, u - e * math.sinh(u), G, wrap_angle(g), frame)


def asymptote_angles(state: CartesianOrbitState, k: float = 1.0) -> tuple[float, float]:
    """Directions (theta_in, theta_out) of the velocity at t -> -inf and +inf.

    Only defined for positive Kepler energy about the origin.  Angles are
    measured counterclockwise from +x and returned in (-pi, pi].
    """
    q = np.asarray(state.q, dtype=float)
    p = np.asarray(state.p, dtype=float)
    r = math.hypot(q[0], q[1])
    v2 = float(p @ p)
    if 0.5 * v2 - k / r <= 0:
        raise ValueError("asymptote angles need a hyperbolic state")
    h = float(q[0] * p[1] - q[1] * p[0])
    ev = ((v2 - k / r) * q - float(q @ p) * p) / k
    e = math.hypot(ev[0], ev[1])
    nu = math.acos(-1.0 / e)
    s = 1.0 if h >= 0 else -1.0
    peri = math.atan2(ev[1], ev[0])
    return wrap_angle(peri - s * nu + math.pi), wrap_angle(peri + s * nu)


# --- analytic derivatives -----------------------------------------------------
#
# Both conics share the template X = L^2 (C(u) - e), Y = L G S(u),
# Phi = u - e S(u) - ell = 0 with e^2 = 1 + sigma G^2 / L^2, where
# (C, S) = (cos, sin), sigma = -1 for the ellipse and (cosh, sinh), sigma = +1
# for the hyperbola.  The mean-anomaly rate is -sigma / L^3.

_VARS = ("L", "ell", "G", "g")


def _conic_parts(L, G, u, sigma):
    if sigma < 0:
        C, S = math.cos(u), math.sin(u)
    else:
        C, S = math.cosh(u), math.sinh(u)
    e = math.sqrt(1.0 + sigma * (G / L) ** 2)
    eL = -sigma * G * G / (L**3 * e)
    eG = sigma * G / (L * L * e)
    eLL = 3 * sigma * G * G / (L**4 * e) - G**4 / (L**6 * e**3)
    eLG = -2 * sigma * G / (L**3 * e) + G**3 / (L**5 * e**3)
    eGG = sigma / (L * L * e**3)

    # partials of F = (X, Y) in (L, G, u); index order L=0, G=1, u=2
    F1 = np.array(
        [
            [2 * L * (C - e) - L * L * eL, -L * L * eG, sigma * L * L * S],
            [G * S, L * S, L * G * C],
        ]
    )
    F2 = np.zeros((2, 3, 3))
    F2[0] = [
        [2 * (C - e) - 4 * L * eL - L * L * eLL, -2 * L * eG - L * L * eLG, 2 * sigma * L * S],
        [-2 * L * eG - L * L * eLG, -L * L * eGG, 0.0],
        [2 * sigma * L * S, 0.0, sigma * L * L * C],
    ]
    F2[1] = [
        [0.0, S, G * C],
        [S, 0.0, L * C],
        [G * C, L * C, sigma * L * G * S],
    ]
    # implicit u(L, ell, G): variables ordered (L, ell, G)
    Pu = 1.0 - e * C
    Puu = -e * sigma * S
    Px = np.array([-eL * S, -1.0, -eG * S])
    Pxu = np.array([-eL * C, 0.0, -eG * C])
    Pxx = np.array(
        [
            [-eLL * S, 0.0, -eLG * S],
            [0.0, 0.0, 0.0],
            [-eLG * S, 0.0, -eGG * S],
        ]
    )
    ux = -Px / Pu
    uxx = -(Pxx + np.outer(Pxu, ux) + np.outer(ux, Pxu) + Puu * np.outer(ux, ux)) / Pu
    return F1, F2, ux, uxx


def _basic_derivatives(L, G, u, sigma):
    """Total first/second derivatives of (X, Y) in (L, ell, G)."""
    F1, F2, ux, uxx = _conic_parts(L, G, u, sigma)
    # map (L, ell, G) -> explicit slots (L, G) with ell having no explicit part
    E = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])  # 3x2 selector
    Fx = F1[:, :2]  # explicit partials in (L, G)
    Fu = F1[:, 2]
    D1 = Fx @ E.T + np.outer(Fu, ux)  # 2x3
    Fxx = F2[:, :2, :2]
    Fxu = F2[:, :2, 2]
    Fuu = F2[:, 2, 2]
    D2 = np.einsum("cij,ai,bj->cab", Fxx, E, E)
    cross = np.einsum("ci,ai->ca", Fxu, E)  # 2x3
    D2 += cross[:, :, None] * ux[None, None, :] + cross[:, None, :] * ux[None, :, None]
    D2 += Fuu[:, None, None] * np.outer(ux, ux)[None] + Fu[:, None, None] * uxx[None]
    return D1, D2


def _elements(el):
    if isinstance(el, DelaunayElliptic):
        return el.L, el.G, el.g, el.u, -1.0, "elliptic"
    return el.L, el.G, el.g, el.u, 1.0, el.frame


def delaunay_derivatives(el, order: int = 1):
    """Analytic derivatives of the position Q in (L, ell, G, g).

    Returns ``d1`` of shape (2, 4) with ``d1[:, i] = dQ/dx_i``; for order 2
    also ``d2`` of shape (2, 4, 4).  Works for elliptic elements and for
    hyperbolic elements in either frame (m k = 1).
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    L, G, g, u, sigma, kind = _elements(el)
    M = _frame_matrix(kind, g)
    J = np.array([[0.0, -1.0], [1.0, 0.0]])
    # dM/dg = +J M for counterclockwise frames, -J M for the clockwise ellipse
    Jg = -J if kind == "elliptic" else J
    D1, D2 = _basic_derivatives(L, G, u, sigma)
    if G == 0:
        Xb = np.array([L * L * ((math.cos(u) if sigma < 0 else math.cosh(u)) - 1.0), 0.0])
    else:
        e = math.sqrt(1.0 + sigma * (G / L) ** 2)
        C = math.cos(u) if sigma < 0 else math.cosh(u)
        S = math.sin(u) if sigma < 0 else math.sinh(u)
        Xb = np.array([L * L * (C - e), L * G * S])
    Q = M @ Xb
    d1 = np.zeros((2, 4))
    d1[:, [0, 1, 2]] = M @ D1
    d1[:, 3] = Jg @ Q
    if order == 1:
        return d1
    d2 = np.zeros((2, 4, 4))
    d2[:, :3, :3] = np.einsum("ij,jab->iab", M, D2)
    for a in range(3):
        d2[:, a, 3] = d2[:, 3, a] = Jg @ d1[:, a]
    d2[:, 3, 3] = -Q
    return d1, d2


def state_jacobian(el, k: float = 1.0) -> np.ndarray:
    """4x4 Jacobian d(q, p)/d(L, ell, G, g), built from the analytic Q derivatives.

    Uses p = nu dQ/d ell with mean-anomaly rate nu = -sigma / L^3.
    """
    L, _, _, _, sigma, _ = _elements(el)
    d1, d2 = delaunay_derivatives(el, order=2)
    nu = -sigma / L**3
    dp = nu * d2[:, 1, :]
    dp[:, 0] += 3.0 * sigma / L**4 * d1[:, 1]
    return np.vstack([d1 / k, dp * k])
