"""Direct simulation of the two-center-two-body problem at finite (mu, chi).

Units follow the rescaled Hamiltonian

    H = |v3|^2/2 + |v4|^2/2 - sum_i (1/|Qi| + 1/|Qi + (chi, 0)|) - mu/|Q3 - Q4|,

with unit-mass fixed centers Q2 = (0, 0) and Q1 = (-chi, 0).  The traveler's
position is stored relative to the center it is closer to (``origin4`` is the
x coordinate of that center), so nothing is lost to rounding on the far side.

Inside a sphere of radius ``rho_q1`` around Q1 the traveler's swing is done
with an exact Kepler arc about Q1 wrapped in two half kicks from the other
forces.  The pericenter there is O(1/chi^2) and no explicit integrator would
step through it honestly.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from . import _integrator as _k
from .gerver import OrbitTriple, fixed_point, gerver_map, orbit_intersections, polar_radius, polar_state
from .kepler import (
    CartesianOrbitState,
    DelaunayElliptic,
    DelaunayHyperbolic,
    Frame,
    asymptote_angles,
    cartesian_to_delaunay,
    elliptic_to_cartesian,
    hyperbolic_to_cartesian,
    wrap_angle,
)

log = logging.getLogger(__name__)

__all__ = [
    "SimulationError",
    "CollisionError",
    "EscapeError",
    "NoCrossingError",
    "IntegrationError",
    "NotExpandingError",
    "DegenerateInputError",
    "ShootingError",
    "SimConfig",
    "PhaseState",
    "SectionKind",
    "SectionSpec",
    "Jacobian6",
    "RelativeSplit",
    "EventLog",
    "TrajectoryRecorder",
    "hamiltonian_rhs",
    "total_energy",
    "integrate_to_section",
    "integrate_for",
    "kepler_run",
    "local_map",
    "global_map",
    "renormalize",
    "section_coordinates",
    "state_from_coordinates",
    "finite_diff_jacobian",
    "relative_split",
    "alpha_prediction",
    "lift_gerver",
    "shift_phase",
    "meeting_residual",
    "shoot_phase",
    "aim_global",
    "shoot_double_step",
    "convergence_study",
]

TWO_PI = 2.0 * math.pi
COORDS = ("L3", "ell3", "G3", "g3", "G4", "g4")
ANGLE_SLOTS = (1, 3, 5)


# --- errors -----------------------------------------------------------------------


class SimulationError(RuntimeError):
    """Base class; ``context`` carries whatever diagnostics were at hand."""

    def __init__(self, msg: str, **context):
        super().__init__(msg)
        self.context = context


class CollisionError(SimulationError):
    pass


class EscapeError(SimulationError):
    pass


class NoCrossingError(SimulationError):
    pass


class IntegrationError(SimulationError):
    pass


class NotExpandingError(SimulationError):
    pass


class DegenerateInputError(SimulationError):
    pass


class ShootingError(SimulationError):
    pass


# --- configuration and state --------------------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    rtol: float = 1e-12
    atol: float = 1e-12
    # the excursion to Q1 spans thousands of Q3 periods; 1e-12 drifts ~1e-8 in H
    rtol_global: float = 1e-14
    atol_global: float = 1e-14
    # pure Kepler runs promise 1e-10 in H; 1e-12 gives ~4e-10 at e ~ 0.98
    rtol_kepler: float = 1e-13
    atol_kepler: float = 1e-13
    h0: float = 1e-3
    max_steps: int = 50_000_000
    event_tol: float = 1e-12
    kappa: float = 0.45
    rho_q1: float = 1.0  # patched-conic sphere around Q1
    escape_factor: float = 10.0
    energy_tol: float = 1e-9
    y_bound: float = 10.0
    mu_max: float = 1e-2
    chi_min: float = 1e2
    boundq3_delta: float = 0.05
    collision_factor: float = 1e-3  # local map rejects min distance below this times mu
    t_max_local: float = 200.0

    def __post_init__(self):
        if not 1.0 / 3.0 < self.kappa < 0.5:
            raise ValueError(f"kappa must lie in (1/3, 1/2), got {self.kappa}")


DEFAULT = SimConfig()


@dataclass(frozen=True)
class PhaseState:
    """Cartesian state plus the system parameters.

    ``Q4`` is relative to the point (origin4, 0), which is 0 (Q2) or -chi (Q1).
    Use :attr:`Q4_abs` for the absolute position.
    """

    Q3: np.ndarray
    v3: np.ndarray
    Q4: np.ndarray
    v4: np.ndarray
    mu: float
    chi: float
    t: float = 0.0
    origin4: float = 0.0

    def __post_init__(self):
        for name in ("Q3", "v3", "Q4", "v4"):
            a = np.array(getattr(self, name), dtype=float).reshape(2)
            object.__setattr__(self, name, a)
        if not self.mu >= 0:
            raise ValueError(f"mu must be nonnegative, got {self.mu}")
        if not self.chi > 0:
            raise ValueError(f"chi must be positive, got {self.chi}")

    @property
    def Q4_abs(self) -> np.ndarray:
        return self.Q4 + np.array([self.origin4, 0.0])

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.Q3, self.v3, self.Q4, self.v4])

    @classmethod
    def from_vector(cls, y, mu, chi, t=0.0, origin4=0.0) -> "PhaseState":
        y = np.asarray(y, dtype=float)
        return cls(y[0:2], y[2:4], y[4:6], y[6:8], mu, chi, t, origin4)

    @property
    def energy(self) -> float:
        return total_energy(self)

    def E3(self) -> float:
        """Kepler energy of the captured body about Q2."""
        return 0.5 * float(self.v3 @ self.v3) - 1.0 / float(np.hypot(*self.Q3))

    def rebased(self, origin4: float) -> "PhaseState":
        """Same physical state with Q4 stored relative to another center."""
        dx = self.origin4 - origin4
        return replace(self, Q4=self.Q4 + np.array([dx, 0.0]), origin4=origin4)

    def swapped(self) -> "PhaseState":
        """Exchange the labels of the two moving bodies (needs origin4 = 0)."""
        s = self.rebased(0.0)
        return replace(s, Q3=s.Q4, v3=s.v4, Q4=s.Q3, v4=s.v3)

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "Q3": self.Q3.tolist(),
            "v3": self.v3.tolist(),
            "Q4": self.Q4_abs.tolist(),
            "v4": self.v4.tolist(),
            "mu": self.mu,
            "chi": self.chi,
        }


def check_parameters(s: PhaseState, cfg: SimConfig = DEFAULT):
    if not 0 < s.mu <= cfg.mu_max:
        raise ValueError(f"mu={s.mu} outside (0, {cfg.mu_max}]")
    if not s.chi >= cfg.chi_min:
        raise ValueError(f"chi={s.chi} below the floor {cfg.chi_min}")


def hamiltonian_rhs(s: PhaseState) -> np.ndarray:
    """Time derivative of (Q3, v3, Q4, v4)."""
    out = np.empty(8)
    d = _k.rhs(s.vector, s.mu, s.chi, s.origin4, False, out)
    if d < _k.DIST_FLOOR:
        raise CollisionError("pair distance below the hard floor", distance=d)
    return out


def total_energy(s: PhaseState) -> float:
    return float(_k.energy(s.vector, s.mu, s.chi, s.origin4))


# --- sections ---------------------------------------------------------------------


class SectionKind(enum.Enum):
    X4_MINUS2 = "x4=-2"
    X4_HALF_CHI = "x4=-chi/2"
    RELDIST = "|Q3-Q4|=mu^kappa"
    X4_MINUS2_OVER_LAMBDA = "x4=-2/lambda"
    X3_MINUS2 = "x3=-2"
    PERICENTER3 = "Q3.v3=0"
    Q1_SPHERE = "|Q4-Q1|=rho"


@dataclass(frozen=True)
class SectionSpec:
    kind: SectionKind
    direction: int = 0
    kappa: float = 0.45
    lam: float | None = None
    rho: float = 1.0

    def __post_init__(self):
        if self.direction not in (-1, 0, 1):
            raise ValueError("direction must be -1, 0 or +1")
        if not 1.0 / 3.0 < self.kappa < 0.5:
            raise ValueError(f"kappa must lie in (1/3, 1/2), got {self.kappa}")
        if self.kind == SectionKind.X4_MINUS2_OVER_LAMBDA and not (self.lam and self.lam > 0):
            raise ValueError("the -2/lambda section needs lambda > 0")

    def encode(self, s: PhaseState) -> tuple[int, float, float]:
        k = self.kind
        if k == SectionKind.X4_MINUS2:
            return _k.EV_X4, -2.0, self.direction
        if k == SectionKind.X4_HALF_CHI:
            return _k.EV_X4, -0.5 * s.chi, self.direction
        if k == SectionKind.X4_MINUS2_OVER_LAMBDA:
            return _k.EV_X4, -2.0 / self.lam, self.direction
        if k == SectionKind.RELDIST:
            return _k.EV_RELDIST, s.mu**self.kappa, self.direction
        if k == SectionKind.X3_MINUS2:
            return _k.EV_X3, -2.0, self.direction
        if k == SectionKind.PERICENTER3:
            return _k.EV_PERI3, 0.0, self.direction
        return _k.EV_R1, self.rho, self.direction

    def residual(self, s: PhaseState) -> float:
        kind, val, _ = self.encode(s)
        return float(_k.event_value(kind, val, s.vector, s.chi, s.origin4))

    def rate(self, s: PhaseState) -> float:
        """d/dt of the event function, for the direction test at a section point."""
        kind, val, _ = self.encode(s)
        f = hamiltonian_rhs(s)
        h = 1e-7
        y = s.vector
        gp = _k.event_value(kind, val, y + h * f, s.chi, s.origin4)
        gm = _k.event_value(kind, val, y - h * f, s.chi, s.origin4)
        return (gp - gm) / (2 * h)


# --- logs -------------------------------------------------------------------------


def _elements_record(s: PhaseState) -> dict:
    out = {}
    try:
        el = cartesian_to_delaunay(CartesianOrbitState(s.Q3, s.v3), "elliptic")
        out["Q3"] = {"frame": "elliptic", "L": el.L, "ell": el.ell, "G": el.G, "g": el.g}
    except ValueError:
        out["Q3"] = None
    frame = Frame.RIGHT if s.origin4 == 0.0 else Frame.LEFT
    k = 1.0 + s.mu if frame == Frame.RIGHT else 1.0
    try:
        hy = cartesian_to_delaunay(CartesianOrbitState(s.Q4, s.v4), "hyperbolic", frame, k=k)
        out["Q4"] = {"frame": frame.value, "L": hy.L, "ell": hy.ell, "G": hy.G, "g": hy.g}
    except ValueError:
        out["Q4"] = None
    return out


@dataclass
class EventLog:
    records: list = field(default_factory=list)

    def add(self, section: str, s: PhaseState, **extra):
        rec = {"section": section, "state": s.to_dict(), "H": total_energy(s)}
        rec["delaunay"] = _elements_record(s)
        rec.update(extra)
        self.records.append(rec)

    def sections(self) -> list[str]:
        return [r["section"] for r in self.records]

    def write_jsonl(self, path):
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r, sort_keys=True) + "\n")


@dataclass
class TrajectoryRecorder:
    every: int = 1
    capacity: int = 200_000
    rows: list = field(default_factory=list)

    HEADER = ("t", "Q3x", "Q3y", "v3x", "v3y", "Q4x", "Q4y", "v4x", "v4y", "H")

    def buffer(self) -> np.ndarray:
        return np.zeros((max(1, self.capacity - len(self.rows)), 10))

    def take(self, buf: np.ndarray, n: int, origin4: float):
        for row in buf[:n]:
            r = row.copy()
            r[5] += origin4
            self.rows.append(r)

    def add_state(self, s: PhaseState):
        a = s.Q4_abs
        self.rows.append(np.array([s.t, *s.Q3, *s.v3, *a, *s.v4, total_energy(s)]))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.HEADER)
            for r in self.rows:
                w.writerow([repr(float(x)) for x in r])


# --- core integration ----------------------------------------------------------------


@dataclass(frozen=True)
class SegmentInfo:
    status: int
    event: int
    nsteps: int
    energy_drift: float
    min_rel: float
    t_min_rel: float


_STATUS_ERRORS = {
    _k.ST_COLLISION: CollisionError,
    _k.ST_ESCAPE: EscapeError,
    _k.ST_UNDERFLOW: IntegrationError,
    _k.ST_MAXSTEPS: IntegrationError,
}


def _run(
    s: PhaseState,
    events: list[tuple[int, float, float]],
    t_end: float,
    cfg: SimConfig,
    recorder: TrajectoryRecorder | None = None,
    frozen: bool = False,
    mu: float | None = None,
    escape: bool = True,
) -> tuple[PhaseState, SegmentInfo]:
    ev = np.array(events, dtype=float).reshape(-1, 3)
    mu_eff = s.mu if mu is None else mu
    if recorder is not None:
        buf = recorder.buffer()
        every = recorder.every
    else:
        buf = np.zeros((1, 10))
        every = 0
    esc = cfg.escape_factor * s.chi if (escape and math.isfinite(s.chi)) else 0.0
    st, idx, t, y, _, nsteps, nrec, mrel, tmrel, _, dH = _k.integrate(
        s.vector, s.t, mu_eff, s.chi, s.origin4, frozen, ev, t_end,
        cfg.rtol, cfg.atol, cfg.h0, cfg.max_steps, esc, cfg.event_tol, every, buf,
    )
    if recorder is not None:
        recorder.take(buf, nrec, s.origin4)
    out = PhaseState.from_vector(y, s.mu, s.chi, t, s.origin4)
    info = SegmentInfo(int(st), int(idx), int(nsteps), float(dH), float(mrel), float(tmrel))
    if st in _STATUS_ERRORS:
        raise _STATUS_ERRORS[st](
            f"integration stopped with status {st}", state=out.to_dict(), steps=int(nsteps)
        )
    return out, info


def integrate_to_section(
    s: PhaseState,
    sec: SectionSpec,
    t_max: float,
    cfg: SimConfig = DEFAULT,
    log_: EventLog | None = None,
    recorder: TrajectoryRecorder | None = None,
    return_info: bool = False,
):
    """Flow ``s`` forward until it crosses ``sec`` in the requested direction.

    ``t_max`` is a duration.  A state already on the section (residual within
    the event tolerance) whose crossing direction matches is returned as is.
    """
    g = sec.residual(s)
    if abs(g) <= cfg.event_tol and (sec.direction == 0 or sec.rate(s) * sec.direction > 0):
        info = SegmentInfo(_k.ST_EVENT, 0, 0, 0.0, math.nan, s.t)
        return (s, info) if return_info else s
    out, info = _run(s, [sec.encode(s)], s.t + t_max, cfg, recorder)
    if info.status == _k.ST_TMAX:
        raise NoCrossingError(f"no crossing of {sec.kind.value} within t_max={t_max}", state=out.to_dict())
    if log_ is not None:
        log_.add(sec.kind.value, out, direction=sec.direction)
    return (out, info) if return_info else out


def integrate_for(s: PhaseState, duration: float, cfg: SimConfig = DEFAULT, recorder=None, return_info=False):
    """Plain flow for a fixed duration (negative runs backward)."""
    out, info = _run(s, [], s.t + duration, cfg, recorder, escape=False)
    return (out, info) if return_info else out


@dataclass(frozen=True)
class KeplerRunResult:
    state: PhaseState
    periods: int
    period: float
    period_error: float
    energy_drift: float
    nsteps: int


def kepler_run(
    el: DelaunayElliptic,
    periods: int = 10,
    cfg: SimConfig = DEFAULT,
    log_: EventLog | None = None,
    recorder: TrajectoryRecorder | None = None,
) -> KeplerRunResult:
    """Sanity run: Q3 alone about Q2, with Q1 removed and the traveler parked.

    The orbit is followed from pericenter to pericenter.  The period error is
    measured on the first return against 2 pi L^3.
    """
    if periods < 1:
        raise ValueError("periods must be at least 1")
    start = replace(el, ell=0.0)
    st = elliptic_to_cartesian(start)
    cfg = replace(cfg, rtol=cfg.rtol_kepler, atol=cfg.atol_kepler)
    s = PhaseState(st.q, st.p, np.array([1e6, 0.0]), np.zeros(2), 0.0, math.inf)
    if recorder is not None:
        recorder.add_state(s)
    H0 = s.energy
    sec = (_k.EV_PERI3, 0.0, 1.0)
    T = TWO_PI * el.L**3
    cur, first, steps = s, math.nan, 0
    for k in range(periods):
        cur, info = _run(cur, [sec], cur.t + 2.0 * T, cfg, recorder, frozen=True, mu=0.0, escape=False)
        if info.status == _k.ST_TMAX:
            raise NoCrossingError("no pericenter passage within two periods", state=cur.to_dict())
        steps += info.nsteps
        if k == 0:
            first = cur.t
        if log_ is not None:
            log_.add(SectionKind.PERICENTER3.value, cur, direction=1, passage=k + 1)
    return KeplerRunResult(cur, periods, first, abs(first - T), abs(cur.energy - H0), steps)


# --- relative motion -------------------------------------------------------------------


@dataclass(frozen=True)
class RelativeSplit:
    Qplus: np.ndarray
    vplus: np.ndarray
    Qminus: np.ndarray
    vminus: np.ndarray
    G_in: float
    L_in: float

    def reconstruct(self):
        """Back to (Q3, v3, Q4, v4)."""
        return (
            self.Qplus + self.Qminus,
            0.5 * (self.vplus + self.vminus),
            self.Qplus - self.Qminus,
            0.5 * (self.vplus - self.vminus),
        )

    def energy(self, mu: float) -> float:
        return 0.25 * float(self.vminus @ self.vminus) - mu / (2.0 * float(np.hypot(*self.Qminus)))


def relative_split(s: PhaseState) -> RelativeSplit:
    Q4 = s.Q4_abs
    vp, vm = s.v3 + s.v4, s.v3 - s.v4
    Qp, Qm = 0.5 * (s.Q3 + Q4), 0.5 * (s.Q3 - Q4)
    G_in = 2.0 * float(vm[0] * Qm[1] - vm[1] * Qm[0])
    eps = 0.25 * float(vm @ vm) - s.mu / (2.0 * float(np.hypot(*Qm))) if np.any(Qm) else math.inf
    L_in = 1.0 / (2.0 * math.sqrt(eps)) if eps > 0 else math.nan
    return RelativeSplit(Qp, vp, Qm, vm, G_in, L_in)


def alpha_prediction(split: RelativeSplit, mu: float, printed: bool = False) -> float:
    """Rotation of v_- across an encounter predicted by the relative Kepler hyperbola.

    With 1/(4 L^2) = v_-^2/4 - mu/(2|Q_-|) and G = 2 v_- x Q_-, the relative
    hyperbola has e^2 = 1 + (G / (2 mu L))^2.  ``printed=True`` drops the 2,
    which halves the deflection (kept for comparison).
    """
    scale = 1.0 if printed else 2.0
    return (math.pi + 2.0 * math.atan(split.G_in / (scale * mu * split.L_in))) % TWO_PI


def _relative_pericenter(s: PhaseState) -> float:
    """Closest approach of the pure two-body relative motion through s."""
    d = s.Q3 - s.Q4_abs
    w = s.v3 - s.v4
    k = 2.0 * s.mu
    r = float(np.hypot(*d))
    h = float(d[0] * w[1] - d[1] * w[0])
    eps = 0.5 * float(w @ w) - k / r
    e = math.sqrt(max(0.0, 1.0 + 2.0 * eps * h * h / (k * k)))
    return h * h / (k * (1.0 + e))


# --- local map ----------------------------------------------------------------------


@dataclass(frozen=True)
class LocalMapResult:
    state: PhaseState
    omega: int
    min_distance: float
    dwell_time: float
    alpha_measured: float
    alpha_predicted: float
    theta_out: float
    rel_energy_drift: float
    energy_drift: float
    entry: PhaseState | None
    exit: PhaseState | None


def _on_section_x4(s: PhaseState, x: float, direction: int, tol: float = 1e-9):
    if abs(s.Q4_abs[0] - x) > tol or s.v4[0] * direction <= 0:
        raise ValueError(f"state is not on the section x4={x} with direction {direction}")


def _traveler_theta_out(s: PhaseState) -> float:
    return asymptote_angles(CartesianOrbitState(s.Q4_abs, s.v4), k=1.0 + s.mu)[1]


def local_map(
    s: PhaseState,
    cfg: SimConfig = DEFAULT,
    log_: EventLog | None = None,
    recorder: TrajectoryRecorder | None = None,
) -> LocalMapResult:
    """From {x4 = -2, moving right} through the encounter back to {x = -2, moving left}.

    Whichever body leaves is relabeled Q4 (omega = 3 means the labels swapped).
    """
    check_parameters(s, cfg)
    _on_section_x4(s, -2.0, +1)
    if float(np.hypot(*s.Q3)) > 2.0 - cfg.boundq3_delta:
        raise DegenerateInputError("captured body too close to the section", r3=float(np.hypot(*s.Q3)))
    rad = s.mu**cfg.kappa
    exit4 = (_k.EV_X4, -2.0, -1)
    exit3 = (_k.EV_X3, -2.0, -1)
    t_end = s.t + cfg.t_max_local
    cur = s
    entry = exit_ = None
    min_d = math.inf
    dH = 0.0
    H0 = total_energy(s)
    inside = float(np.hypot(*(s.Q3 - s.Q4_abs))) < rad
    while True:
        rel = (_k.EV_RELDIST, rad, +1 if inside else -1)
        cur, info = _run(cur, [rel, exit4, exit3], t_end, cfg, recorder)
        dH = max(dH, abs(total_energy(cur) - H0), info.energy_drift)
        min_d = min(min_d, info.min_rel)
        if info.status == _k.ST_TMAX:
            raise NoCrossingError("local map did not reach the exit section", state=cur.to_dict())
        if info.event == 0:
            if inside:
                exit_ = cur
                if log_ is not None:
                    log_.add("RelDist exit", cur, direction=+1)
            else:
                entry = cur
                min_d = min(min_d, _relative_pericenter(cur))
                if log_ is not None:
                    log_.add("RelDist entry", cur, direction=-1)
            inside = not inside
            continue
        omega = 4 if info.event == 1 else 3
        break
    if min_d < cfg.collision_factor * s.mu:
        raise CollisionError("encounter closer than the collision floor", min_distance=min_d)
    out = cur if omega == 4 else cur.swapped()
    if log_ is not None:
        log_.add("x4=-2" if omega == 4 else "x3=-2 (relabeled)", out, direction=-1, omega=omega)
    a_meas = a_pred = dwell = drift = math.nan
    if entry is not None and exit_ is not None:
        sp_in, sp_out = relative_split(entry), relative_split(exit_)
        a, b = sp_in.vminus, sp_out.vminus
        a_meas = math.atan2(a[0] * b[1] - a[1] * b[0], float(a @ b)) % TWO_PI
        a_pred = alpha_prediction(sp_in, s.mu)
        dwell = exit_.t - entry.t
        drift = abs(sp_out.energy(s.mu) - sp_in.energy(s.mu))
    return LocalMapResult(
        state=out,
        omega=omega,
        min_distance=min_d,
        dwell_time=dwell,
        alpha_measured=a_meas,
        alpha_predicted=a_pred,
        theta_out=_traveler_theta_out(out),
        rel_energy_drift=drift,
        energy_drift=dH,
        entry=entry,
        exit=exit_,
    )


# --- global map ---------------------------------------------------------------------


@dataclass(frozen=True)
class GlobalMapResult:
    state: PhaseState
    dE3: float
    dG3: float
    dg3: float
    theta_out_in: float  # outgoing asymptote of the input traveler about Q2
    theta_in_out: float  # incoming asymptote of the returned traveler about Q2
    q1_pericenter: float
    energy_drift: float
    nsteps: int


def _external_accel_q4(s: PhaseState) -> np.ndarray:
    """Acceleration of Q4 from everything except Q1 (s must be rebased on Q1)."""
    d2 = s.Q4 + np.array([s.origin4, 0.0])
    a = -d2 / float(np.hypot(*d2)) ** 3
    if s.mu:
        d = s.Q3 - s.Q4_abs
        a = a + s.mu * d / float(np.hypot(*d)) ** 3
    return a


def _q1_passage(s: PhaseState, cfg: SimConfig):
    """Carry the traveler through the rho-sphere around Q1 with kick / Kepler / kick."""
    assert s.origin4 == -s.chi

    def arc(q, p):
        hy = cartesian_to_delaunay(CartesianOrbitState(q, p), "hyperbolic", Frame.LEFT)
        dt = 2.0 * abs(hy.ell) * hy.L**3
        out = hyperbolic_to_cartesian(replace(hy, ell=-hy.ell))
        return out, dt, hy

    _, dt0, _ = arc(s.Q4, s.v4)
    p_half = s.v4 + 0.5 * dt0 * _external_accel_q4(s)
    out, dt, hy = arc(s.Q4, p_half)
    # the captured body keeps moving meanwhile; Q4 is far so its pull is dropped
    s3, _ = _run(s, [], s.t + dt, cfg, frozen=True, mu=0.0, escape=False)
    mid = replace(s3, Q4=out.q, v4=out.p)
    v_out = out.p + 0.5 * dt * _external_accel_q4(mid)
    res = replace(mid, v4=v_out)
    rp = hy.L**2 * (hy.e - 1.0)
    return res, rp


def _q3_elements(s: PhaseState):
    return cartesian_to_delaunay(CartesianOrbitState(s.Q3, s.v3), "elliptic")


def global_map(
    s: PhaseState,
    cfg: SimConfig = DEFAULT,
    x_return: float = -2.0,
    log_: EventLog | None = None,
    recorder: TrajectoryRecorder | None = None,
) -> GlobalMapResult:
    """From {x4 = -2, moving left} around Q1 and back to {x4 = x_return, moving right}."""
    check_parameters(s, cfg)
    _on_section_x4(s, -2.0, -1)
    cfg = replace(cfg, rtol=cfg.rtol_global, atol=cfg.atol_global)
    st4 = CartesianOrbitState(s.Q4_abs, s.v4)
    if st4.energy(1.0 + s.mu) <= 0:
        raise ValueError("traveler is not hyperbolic about Q2")
    if abs(s.Q4_abs[1]) > cfg.y_bound:
        raise ValueError(f"|y4| exceeds the bound {cfg.y_bound}")
    H0 = total_energy(s)
    el0 = _q3_elements(s)
    th_out = asymptote_angles(st4, k=1.0 + s.mu)[1]
    chi = s.chi
    t_cap = s.t + 20.0 * chi + 1e3
    half = -0.5 * chi
    steps = 0
    drift = 0.0

    def seg(cur, events):
        nonlocal steps, drift
        out, info = _run(cur, events, t_cap, cfg, recorder)
        steps += info.nsteps
        drift = max(drift, abs(total_energy(out) - H0))
        if info.status == _k.ST_TMAX:
            raise NoCrossingError("global map ran out of time", state=out.to_dict())
        return out, info

    cur, _ = seg(s, [(_k.EV_X4, half, -1)])
    cur = cur.rebased(-chi)
    if log_ is not None:
        log_.add("x4=-chi/2", cur, direction=-1)
    cur, info = seg(cur, [(_k.EV_R1, cfg.rho_q1, -1), (_k.EV_X4, half, +1)])
    rp = math.nan
    if info.event == 0:
        if log_ is not None:
            log_.add("|Q4-Q1|=rho entry", cur, direction=-1)
        cur, rp = _q1_passage(cur, cfg)
        drift = max(drift, abs(total_energy(cur) - H0))
        if log_ is not None:
            log_.add("|Q4-Q1|=rho exit", cur, direction=+1, q1_pericenter=rp)
        cur, _ = seg(cur, [(_k.EV_X4, half, +1)])
    cur = cur.rebased(0.0)
    if log_ is not None:
        log_.add("x4=-chi/2", cur, direction=+1)
    cur, _ = seg(cur, [(_k.EV_X4, x_return, +1)])
    if log_ is not None:
        log_.add(f"x4={x_return:g}", cur, direction=+1)
    el1 = _q3_elements(cur)
    th_in = asymptote_angles(CartesianOrbitState(cur.Q4_abs, cur.v4), k=1.0 + s.mu)[0]
    return GlobalMapResult(
        state=cur,
        dE3=cur.E3() - s.E3(),
        dG3=el1.G - el0.G,
        dg3=wrap_angle(el1.g - el0.g),
        theta_out_in=th_out,
        theta_in_out=th_in,
        q1_pericenter=rp,
        energy_drift=drift,
        nsteps=steps,
    )


# --- renormalization -----------------------------------------------------------------


def renormalize(s: PhaseState, lam: float | None = None) -> tuple[PhaseState, float]:
    """Zoom so the captured energy is -1/2 again, then reflect across the x-axis.

    Returns the new state and lambda.  ``lam`` can be frozen for
    differentiation; by default lambda = 2|E3|.
    """
    if lam is None:
        lam = 2.0 * abs(s.E3())
    if not lam > 1.0:
        raise NotExpandingError(f"lambda={lam} does not expand", lam=lam)
    R = np.array([1.0, -1.0])
    sq = math.sqrt(lam)
    out = PhaseState(
        Q3=lam * s.Q3 * R,
        v3=s.v3 * R / sq,
        Q4=lam * s.Q4 * R,
        v4=s.v4 * R / sq,
        mu=s.mu,
        chi=lam * s.chi,
        t=s.t * lam**1.5,
        origin4=lam * s.origin4,
    )
    return out, lam


# --- section coordinates -----------------------------------------------------------


def section_coordinates(s: PhaseState) -> np.ndarray:
    """(L3, ell3, G3, g3, G4, g4): Q3 about Q2, Q4 in the right frame with k = 1 + mu."""
    el = _q3_elements(s)
    s0 = s.rebased(0.0)
    hy = cartesian_to_delaunay(CartesianOrbitState(s0.Q4, s0.v4), "hyperbolic", Frame.RIGHT, k=1.0 + s.mu)
    return np.array([el.L, el.ell, el.G, el.g, hy.G, hy.g])


def state_from_coordinates(
    X,
    H: float,
    mu: float,
    chi: float,
    x4: float = -2.0,
    direction: int = +1,
    guess: PhaseState | None = None,
    t: float = 0.0,
) -> PhaseState:
    """Invert :func:`section_coordinates` on {x4 = const} ∩ {H = const}.

    The traveler's (L4, ell4) are solved so that it sits on the section with
    the requested direction and the total energy is H.  ``guess`` supplies the
    starting (L4, ell4).
    """
    L3, l3, G3, g3, G4, g4 = map(float, X)
    k4 = 1.0 + mu
    q3 = elliptic_to_cartesian(DelaunayElliptic(L3, l3, G3, g3))
    if guess is not None:
        g0 = guess.rebased(0.0)
        hy0 = cartesian_to_delaunay(CartesianOrbitState(g0.Q4, g0.v4), "hyperbolic", Frame.RIGHT, k=k4)
        L4, l4 = hy0.L, hy0.ell
    else:
        L4, l4 = 1.0, 0.0

    def traveler(L, l):
        return hyperbolic_to_cartesian(DelaunayHyperbolic(L, l, G4, g4, Frame.RIGHT), k=k4)

    def ell_on_section(L, start):
        # x4 is monotone along each branch; Newton on ell with dx/dell = v_x dt/dell
        l = start
        for _ in range(100):
            st = traveler(L, l)
            dtdl = -(L**3) / k4**2
            step = (st.q[0] - x4) / (st.p[0] * dtdl)
            l -= step
            if abs(step) < 1e-15 * max(1.0, abs(l)):
                break
        st = traveler(L, l)
        if st.p[0] * direction <= 0 or abs(st.q[0] - x4) > 1e-12:
            raise ValueError("could not place the traveler on the section")
        return l, st

    def energy_gap(L, start):
        l, st = ell_on_section(L, start)
        s = PhaseState(q3.q, q3.p, st.q, st.p, mu, chi, t)
        return total_energy(s) - H, l, s

    L = L4
    gap, l4, s = energy_gap(L, l4)
    for _ in range(60):
        dL = 1e-7 * L
        gap2, _, _ = energy_gap(L + dL, l4)
        slope = (gap2 - gap) / dL
        L_new = L - gap / slope
        gap, l4, s = energy_gap(L_new, l4)
        if abs(L_new - L) < 1e-15 * L and abs(gap) < 1e-14:
            break
        L = L_new
        if abs(gap) < 1e-15:
            break
    return s


# --- finite-difference Jacobians ------------------------------------------------------


@dataclass(frozen=True)
class Jacobian6:
    matrix: np.ndarray
    steps: np.ndarray
    consistency: float
    flagged: bool
    section: str = ""
    frame: str = "right"

    def singular_values(self) -> np.ndarray:
        return np.linalg.svd(self.matrix, compute_uv=False)


def _coord_diff(a, b):
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    for i in ANGLE_SLOTS:
        d[i] = wrap_angle(d[i])
    return d


def finite_diff_jacobian(
    fmap: Callable[[PhaseState], PhaseState] | str,
    s: PhaseState,
    h: float = 1e-6,
    cfg: SimConfig = DEFAULT,
    x_in: float = -2.0,
    direction: int = +1,
    tol: float = 1e-4,
) -> Jacobian6:
    """Central differences in section coordinates, one Richardson step.

    ``fmap`` is "local", "global", "composed" or a callable taking and
    returning a PhaseState.  Inputs are perturbed on {x4 = x_in} ∩ {H = H(s)}.
    """
    if isinstance(fmap, str):
        name = fmap
        table = {
            "local": lambda z: local_map(z, cfg).state,
            "global": lambda z: global_map(z, cfg).state,
            "composed": lambda z: global_map(local_map(z, cfg).state, cfg).state,
        }
        if name not in table:
            raise ValueError(f"unknown map {name!r}")
        fmap = table[name]
        if name == "global":
            direction = -1
    X0 = section_coordinates(s)
    H0 = total_energy(s)
    steps = h * np.maximum(1.0, np.abs(X0))

    def column(i, hi):
        Xp, Xm = X0.copy(), X0.copy()
        Xp[i] += hi
        Xm[i] -= hi
        sp = state_from_coordinates(Xp, H0, s.mu, s.chi, x_in, direction, guess=s, t=s.t)
        sm = state_from_coordinates(Xm, H0, s.mu, s.chi, x_in, direction, guess=s, t=s.t)
        yp = section_coordinates(fmap(sp))
        ym = section_coordinates(fmap(sm))
        return _coord_diff(yp, ym) / (2 * hi)

    D1 = np.empty((6, 6))
    D2 = np.empty((6, 6))
    for i in range(6):
        D1[:, i] = column(i, steps[i])
        D2[:, i] = column(i, 0.5 * steps[i])
    J = (4.0 * D2 - D1) / 3.0
    big = np.abs(J) >= 1e-3 * np.abs(J).max()
    rel = np.abs(D1 - D2)[big] / np.abs(J)[big]
    cons = float(rel.max()) if rel.size else 0.0
    return Jacobian6(J, steps, cons, cons > tol, section=f"x4={x_in:g}")


# --- Gerver data at finite mu ----------------------------------------------------------


def _hyperbola_incoming(L4: float, G4: float) -> DelaunayHyperbolic:
    return DelaunayHyperbolic(L4, 0.0, G4, -math.atan(G4 / L4), Frame.RIGHT)


def _ell_at_point(el, psi: float, kind: str) -> float:
    st = polar_state(el, psi)
    return cartesian_to_delaunay(st, kind, Frame.RIGHT).ell


def _ell_at_x(hy: DelaunayHyperbolic, x: float, ell_start: float) -> float:
    """Mean anomaly before ell_start (earlier on the incoming branch) where x4 = x."""

    def f(l):
        return hyperbolic_to_cartesian(replace(hy, ell=l)).q[0] - x

    a, b = ell_start, ell_start + 1.0
    while f(b) > 0:
        b += 2.0 * (b - a)
        if b - a > 1e6:
            raise ValueError("traveler never reaches the section")
    return brentq(f, a, b, xtol=1e-15, rtol=1e-15)


def lift_gerver(
    eps0: float,
    mu: float,
    chi: float,
    collision: int = 1,
    G4: float | None = None,
    dphase: float = 0.0,
    x4: float = -2.0,
) -> PhaseState:
    """Gerver's pre-collision configuration placed on the section at finite (mu, chi).

    Q3 sits on its pre-collision ellipse and Q4 on the incoming-horizontal
    hyperbola; both are timed (as unit-mass Kepler motions) to reach the
    collision point together.  ``dphase`` then shifts Q3's mean anomaly.
    """
    fp = fixed_point(eps0)
    key = "1" if collision == 1 else "2"
    L3, _, G3, g3 = fp.delaunay["3-" + key]
    L4, _, G4_fp, _ = fp.delaunay["4-" + key]
    G4 = G4_fp if G4 is None else G4
    ell3 = DelaunayElliptic(L3, 0.0, G3, g3)
    hy = _hyperbola_incoming(L4, G4)
    pts = orbit_intersections(ell3, hy)
    if not pts:
        raise ValueError("orbits do not intersect for this G4")
    pts = sorted(pts, key=lambda p: -polar_radius(ell3, p) * math.cos(p))
    psi = pts[collision - 1] if len(pts) >= collision else pts[-1]
    l4P = _ell_at_point(hy, psi, "hyperbolic")
    l4 = _ell_at_x(hy, x4, l4P)
    t4 = (l4 - l4P) * L4**3
    l3P = _ell_at_point(ell3, psi, "elliptic")
    l3 = l3P - t4 / L3**3 + dphase
    q3 = elliptic_to_cartesian(replace(ell3, ell=l3))
    q4 = hyperbolic_to_cartesian(replace(hy, ell=l4))
    return PhaseState(q3.q, q3.p, q4.q, q4.p, mu, chi, 0.0)


def shift_phase(s: PhaseState, dphase: float) -> PhaseState:
    """Move Q3 along its Kepler ellipse by dphase in mean anomaly."""
    el = _q3_elements(s)
    q = elliptic_to_cartesian(replace(el, ell=el.ell + dphase))
    return replace(s, Q3=q.q, v3=q.p)


def rotate_traveler(s: PhaseState, dtheta: float) -> PhaseState:
    c, sn = math.cos(dtheta), math.sin(dtheta)
    v = np.array([c * s.v4[0] - sn * s.v4[1], sn * s.v4[0] + c * s.v4[1]])
    return replace(s, v4=v)


def traveler_G4(s: PhaseState) -> float:
    """Unit-mass angular momentum of the traveler about Q2."""
    q = s.Q4_abs
    return float(q[0] * s.v4[1] - q[1] * s.v4[0])


def meeting_residual(s: PhaseState, j: int) -> tuple[float, float]:
    """Kepler-predicted timing mismatch at the j-th orbit intersection.

    Both bodies are treated as unit-mass Kepler motions about Q2.  Returns
    (t3 - t4 wrapped to half a period, psi).  Zero means they would meet.
    """
    el3 = _q3_elements(s)
    hy = cartesian_to_delaunay(CartesianOrbitState(s.Q4_abs, s.v4), "hyperbolic", Frame.RIGHT)
    pts = orbit_intersections(el3, hy)
    if not pts:
        raise ValueError("orbits do not intersect")
    pts = sorted(pts, key=lambda p: -polar_radius(el3, p) * math.cos(p))
    psi = pts[min(j, len(pts)) - 1]
    t4 = (hy.ell - _ell_at_point(hy, psi, "hyperbolic")) * hy.L**3
    T3 = TWO_PI * el3.L**3
    t3 = ((_ell_at_point(el3, psi, "elliptic") - el3.ell) % TWO_PI) * el3.L**3
    return math.remainder(t3 - t4, T3), psi


# --- shooting ----------------------------------------------------------------------------


def _scan_roots(f, xs, jump=math.pi):
    vals = []
    for x in xs:
        try:
            vals.append(f(x))
        except (SimulationError, ValueError):
            vals.append(math.nan)
    out = []
    for x0, x1, f0, f1 in zip(xs[:-1], xs[1:], vals[:-1], vals[1:]):
        if math.isnan(f0) or math.isnan(f1) or f0 * f1 > 0 or abs(f0 - f1) > jump:
            continue
        out.append((x0, x1))
    return out


def shoot_phase(
    s: PhaseState,
    theta_target: float = math.pi,
    cfg: SimConfig = DEFAULT,
    alpha_ref: float | None = None,
    width: float = 30.0,
    n_scan: int = 81,
    center: float = 0.0,
) -> tuple[float, LocalMapResult]:
    """Shift Q3's phase so the traveler leaves the local map along theta_target.

    Scans the shift over center ± width*mu (sinh-spaced) and keeps the omega = 4 root whose
    measured rotation angle is nearest ``alpha_ref``.
    """
    cache = {}

    def run(d):
        if d not in cache:
            cache[d] = local_map(shift_phase(s, d), cfg)
        return cache[d]

    def f(d):
        r = run(d)
        if r.omega != 4:
            return math.nan
        return wrap_angle(r.theta_out - theta_target)

    # dense near the center: the whole range of alpha can sit within a few mu
    xs = center + s.mu * width * np.sinh(np.linspace(-6.0, 6.0, n_scan)) / math.sinh(6.0)
    brackets = _scan_roots(f, list(xs))
    if not brackets:
        raise ShootingError("no phase shift gives the requested exit angle", mu=s.mu)
    roots = []
    for a, b in brackets:
        d = brentq(f, a, b, xtol=1e-18, rtol=1e-15, maxiter=200)
        roots.append((d, run(d)))
    if alpha_ref is None:
        return min(roots, key=lambda r: abs(r[0] - center))
    return min(roots, key=lambda r: abs(wrap_angle(r[1].alpha_measured - alpha_ref)))


def _kepler_miss_q1(s: PhaseState) -> float:
    """y of the traveler's unit-mass Kepler orbit about Q2 when it reaches x = -chi."""
    hy = cartesian_to_delaunay(CartesianOrbitState(s.Q4_abs, s.v4), "hyperbolic", Frame.RIGHT)

    def x_of(l):
        return hyperbolic_to_cartesian(replace(hy, ell=l)).q[0] + s.chi

    a = hy.ell
    b = a - 1.0
    while x_of(b) > 0:
        b -= 2.0 * (a - b)
    l = brentq(x_of, b, a, xtol=1e-14)
    return float(hyperbolic_to_cartesian(replace(hy, ell=l)).q[1])


def _solve_bracketed(f, x0, step, ftol=0.0, xtol=0.0, max_iter=60):
    """Secant from (x0, x0 + step), switching to Illinois once a sign change is found.

    Stops when |f| <= ftol or the bracket is narrower than xtol.
    """
    x_a, f_a = x0, f(x0)
    if abs(f_a) <= ftol:
        return x_a
    x_b = x0 + step
    f_b = f(x_b)
    bracketed = False
    side = 0
    for _ in range(max_iter):
        if abs(f_b) <= ftol:
            return x_b
        if not math.isfinite(f_b):
            x_b = 0.5 * (x_a + x_b)
            f_b = f(x_b)
            continue
        if bracketed and abs(x_b - x_a) <= xtol:
            return x_b if abs(f_b) < abs(f_a) else x_a
        if f_b == f_a:
            raise ShootingError("flat residual while shooting", x=x_b, f=f_b)
        x_c = x_b - f_b * (x_b - x_a) / (f_b - f_a)
        if not bracketed:
            lim = 8.0 * abs(x_b - x_a) + abs(step)
            x_c = x_b + max(-lim, min(lim, x_c - x_b))
        f_c = f(x_c)
        if not math.isfinite(f_c):
            x_c = 0.5 * (x_b + x_c)
            f_c = f(x_c)
        if f_c * f_b < 0:
            x_a, f_a = x_b, f_b
            bracketed = True
            side = 0
        elif bracketed:
            # keep the old end, halve its weight (Illinois)
            f_a *= 0.5 if side == 1 else 1.0
            side = 1
        else:
            x_a, f_a = x_b, f_b
        x_b, f_b = x_c, f_c
    raise ShootingError("root finder did not converge", x=x_b, f=f_b)


@dataclass(frozen=True)
class AimResult:
    dtheta: float
    state: PhaseState  # rotated input of the global map
    result: GlobalMapResult


def aim_global(
    s: PhaseState,
    target_G4: float,
    cfg: SimConfig = DEFAULT,
    x_return: float = -2.0,
    ftol: float = 1e-9,
    guess: float | None = None,
) -> AimResult:
    """Rotate the traveler's velocity at the local-map exit so 𝔾 returns it with G4 = target.

    The rotation is the only free knob, so the returned ``dtheta`` is the
    defect a true orbit would absorb upstream.
    """
    g_miss = lambda d: _kepler_miss_q1(rotate_traveler(s, d))
    d0 = _solve_bracketed(g_miss, 0.0, 1.0 / s.chi, ftol=1e-9)
    cache = {}

    def f(d):
        if d not in cache:
            try:
                cache[d] = global_map(rotate_traveler(s, d), cfg, x_return)
            except (SimulationError, ValueError):
                cache[d] = None
        r = cache[d]
        if r is None:
            return math.nan
        return traveler_G4(r.state) - target_G4

    d = _solve_bracketed(f, d0 if guess is None else guess, 0.2 / s.chi**2, ftol=ftol, xtol=1e-10 / s.chi**2)
    if cache.get(d) is None:
        f(d)
    return AimResult(d, rotate_traveler(s, d), cache[d])


def _asymptote_gain(s: PhaseState, h: float = 1e-7) -> float:
    """d(theta_out)/d(velocity rotation) at the local-map exit."""
    a = _traveler_theta_out(rotate_traveler(s, h))
    b = _traveler_theta_out(rotate_traveler(s, -h))
    return wrap_angle(a - b) / (2 * h)


@dataclass(frozen=True)
class StepReport:
    phase_shift: float
    defect_dtheta: float
    local: LocalMapResult
    aim: AimResult


def _one_step(s, target_G4, cfg, alpha_ref, x_return=-2.0, passes=2, center=0.0):
    """Local map with the phase tuned for the aim, then 𝔾 aimed at target_G4."""
    theta = math.pi
    d = center
    for _ in range(passes):
        d, loc = shoot_phase(s, theta, cfg, alpha_ref, center=d, width=30.0 if theta == math.pi else 5.0)
        aim = aim_global(loc.state, target_G4, cfg, x_return)
        theta = loc.theta_out + aim.dtheta * _asymptote_gain(loc.state)
    return StepReport(d, aim.dtheta, loc, aim)


@dataclass(frozen=True)
class DoubleStepReport:
    mu: float
    chi: float
    eps0: float
    G4_start: float
    timing_residual: float
    energy_multiplier: float
    lam: float
    e3: float
    g3: float
    E3_after: float
    step2_phase_correction: float
    defects: tuple
    final_state: PhaseState
    next_timing_residual: float
    runtime: float

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("final_state")
        d["final_state"] = self.final_state.to_dict()
        return d


def shoot_double_step(
    eps0: float = 0.5,
    mu: float = 1e-4,
    chi: float = 1e4,
    cfg: SimConfig = DEFAULT,
    tol: float = 1e-6,
    max_outer: int = 12,
    s0: PhaseState | None = None,
) -> DoubleStepReport:
    """One Gerver double step at finite (mu, chi), closed by shooting.

    Step 1 solves a 2-D problem in (ell3, e4): the phase of Q3 (through the
    exit angle) makes the traveler come back with the incoming G4 of the
    second collision, and the traveler's starting e4 (through the energy
    exchanged at the first collision) fixes Q3's phase on its return.  Step 2
    only needs an O(mu) phase correction of Q3, which is reported.
    """
    t_start = time.perf_counter()
    fp = fixed_point(eps0)
    G4_2 = fp.delaunay["4-2"][2]
    lam0 = fp.lambda0
    G4_1 = fp.delaunay["4-1"][2]
    a1, a2 = fp.collision1.alpha, fp.collision2.alpha

    def base(G4):
        if s0 is not None:
            return _with_traveler_G4(s0, G4)
        return lift_gerver(eps0, mu, chi, 1, G4=G4)

    cache = {}

    def step1(G4):
        if G4 not in cache:
            rep = _one_step(base(G4), G4_2, cfg, a1)
            tau, _ = meeting_residual(rep.aim.result.state, 2)
            cache[G4] = (tau, rep)
        return cache[G4]

    # Newton on the timing residual; the slope is taken from a nearby pair
    G4 = G4_1
    tau, rep1 = step1(G4)
    hG = 1e-7
    for _ in range(max_outer):
        if abs(tau) < tol:
            break
        tau_h, _ = step1(G4 + hG)
        slope = (tau_h - tau) / hG
        if slope == 0 or not math.isfinite(slope):
            raise ShootingError("flat timing residual", G4=G4)
        G4 = G4 - tau / slope
        tau, rep1 = step1(G4)
        hG = max(1e-10, min(1e-7, abs(tau / slope)))
    else:
        if abs(tau) >= tol:
            raise ShootingError("timing residual did not converge", tau=tau, G4=G4)

    s1 = rep1.aim.result.state
    E3_start = base(G4).E3()
    # second collision: x_return is -2/lambda with lambda from the expected energy
    lam_guess = lam0
    rep2 = None
    for _ in range(3):
        target = -G4_1 / math.sqrt(lam_guess)
        rep2 = _one_step(s1, target, cfg, a2, x_return=-2.0 / lam_guess)
        lam_new = 2.0 * abs(rep2.aim.result.state.E3())
        if abs(lam_new - lam_guess) < 1e-12:
            break
        lam_guess = lam_new
    pre = rep2.aim.result.state
    E3_pre = pre.E3()
    post, lam = renormalize(pre)
    # the section was placed with the last lambda guess; report the residual gap
    el = _q3_elements(post)
    e3 = math.sqrt(max(0.0, 1.0 - (el.G / el.L) ** 2))
    try:
        nxt, _ = meeting_residual(post, 1)
    except ValueError:
        nxt = math.nan
    return DoubleStepReport(
        mu=mu,
        chi=chi,
        eps0=eps0,
        G4_start=G4,
        timing_residual=tau,
        energy_multiplier=E3_pre / E3_start,
        lam=lam,
        e3=e3,
        g3=el.g,
        E3_after=post.E3(),
        step2_phase_correction=rep2.phase_shift,
        defects=(rep1.defect_dtheta, rep2.defect_dtheta),
        final_state=post,
        next_timing_residual=nxt,
        runtime=time.perf_counter() - t_start,
    )


def _with_traveler_G4(s: PhaseState, G4: float) -> PhaseState:
    """Replace the traveler by the incoming-horizontal hyperbola with this G4 through the same x."""
    hy0 = cartesian_to_delaunay(CartesianOrbitState(s.Q4_abs, s.v4), "hyperbolic", Frame.RIGHT)
    hy = _hyperbola_incoming(hy0.L, G4)
    x = s.Q4_abs[0]
    l = _ell_at_x(hy, x, -50.0)
    q = hyperbolic_to_cartesian(replace(hy, ell=l))
    return replace(s, Q4=q.q, v4=q.p, origin4=0.0)


# --- convergence study ---------------------------------------------------------------------


@dataclass
class StudyRow:
    mu: float
    chi: float
    local_error: float = math.nan
    E3_err: float = math.nan
    e3_err: float = math.nan
    g3_err: float = math.nan
    min_distance: float = math.nan
    dwell_time: float = math.nan
    alpha_error: float = math.nan
    rel_energy_drift: float = math.nan
    dE3_over_mu: float = math.nan
    theta_in_return: float = math.nan
    theta_out_dev: float = math.nan
    global_energy_drift: float = math.nan
    error: str = ""


def local_vs_gerver(eps0: float, mu: float, chi: float, cfg: SimConfig = DEFAULT):
    """Shoot the first local map for a horizontal exit and compare with 𝐆."""
    fp = fixed_point(eps0)
    s = lift_gerver(eps0, mu, chi, 1)
    d, res = shoot_phase(s, math.pi, cfg, fp.collision1.alpha)
    ref = gerver_map(OrbitTriple(-0.5, eps0, math.pi / 2, spin=1), psi=fp.psi1)
    el = _q3_elements(res.state)
    e3 = math.sqrt(max(0.0, 1.0 - (el.G / el.L) ** 2))
    diff = np.array([el.E - ref.E3, e3 - ref.e3, wrap_angle(el.g - ref.g3)])
    return diff, d, res


def convergence_study(
    mu_list,
    chi_list=None,
    eps0: float = 0.5,
    cfg: SimConfig = DEFAULT,
    do_global: bool = True,
    noise: float = 0.1,
):
    """Run local (and global) comparisons over paired (mu, chi) lists.

    ``chi_list`` defaults to 10/mu.  Returns (rows, verdicts); failures are
    stored per row.
    """
    mu_list = list(mu_list)
    if not mu_list:
        raise ValueError("empty mu list")
    chi_list = [10.0 / m for m in mu_list] if chi_list is None else list(chi_list)
    if len(chi_list) != len(mu_list):
        raise ValueError("mu and chi lists must have the same length")
    if any(b > a for a, b in zip(mu_list, mu_list[1:])):
        raise ValueError("mu list must be decreasing")
    if any(b < a for a, b in zip(chi_list, chi_list[1:])):
        raise ValueError("chi list must be increasing")
    fp = fixed_point(eps0)
    rows = []
    for mu, chi in zip(mu_list, chi_list):
        row = StudyRow(mu, chi)
        try:
            diff, _, res = local_vs_gerver(eps0, mu, chi, cfg)
            row.E3_err, row.e3_err, row.g3_err = map(float, diff)
            row.local_error = float(np.linalg.norm(diff))
            row.min_distance = res.min_distance
            row.dwell_time = res.dwell_time
            row.alpha_error = abs(wrap_angle(res.alpha_measured - res.alpha_predicted))
            row.rel_energy_drift = res.rel_energy_drift
            if do_global:
                aim = aim_global(res.state, fp.delaunay["4-2"][2], cfg)
                g = aim.result
                row.dE3_over_mu = abs(g.dE3) / mu
                row.theta_in_return = abs(wrap_angle(g.theta_in_out))
                row.theta_out_dev = abs(wrap_angle(g.theta_out_in - math.pi))
                row.global_energy_drift = g.energy_drift
        except (SimulationError, ValueError) as exc:
            row.error = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows, study_verdicts(rows, noise)


def study_verdicts(rows, noise: float = 0.1) -> dict:
    ok = [r for r in rows if not r.error]

    def decreasing(col, strict=True):
        v = [getattr(r, col) for r in ok]
        if len(v) < 2 or any(math.isnan(x) for x in v):
            return False
        if strict:
            return all(b < a for a, b in zip(v, v[1:]))
        return all(b <= a * (1 + noise) for a, b in zip(v, v[1:]))

    out = {"local_error_decreasing": decreasing("local_error")}
    band = [r.dE3_over_mu for r in ok if not math.isnan(r.dE3_over_mu)]
    out["dE3_over_mu_band"] = bool(band) and max(band) <= 4.0 * min(band)
    out["theta_in_return_decreasing"] = decreasing("theta_in_return")
    out["theta_out_dev_decreasing"] = decreasing("theta_out_dev", strict=False)
    return out
