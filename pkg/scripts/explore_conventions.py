"""Print the sign conventions that the printed tables pin down.

Shows the Poisson-bracket pattern of each Delaunay chart, the two
elimination variants of l_hat next to the printed covectors, and the
energy-phase derivative against its finite-difference oracle.
"""

import math

import numpy as np

from noncollision.hyperbolicity import PRINTED, energy_phase_derivative, energy_phase_derivative_fd, l_hat, u_hat
from noncollision.kepler import DelaunayElliptic, DelaunayHyperbolic, Frame, state_jacobian

OMEGA = np.block([[np.zeros((2, 2)), np.eye(2)], [-np.eye(2), np.zeros((2, 2))]])


def brackets(el):
    Jinv = np.linalg.inv(state_jacobian(el))
    P = Jinv @ OMEGA @ Jinv.T
    return P[1, 0], P[3, 2], np.linalg.det(state_jacobian(el))


def main():
    charts = {
        "ellipse": DelaunayElliptic(1.0, 0.4, 0.6, 0.3),
        "hyperbola right": DelaunayHyperbolic(1.0, -0.7, 0.8, -0.2, Frame.RIGHT),
        "hyperbola left": DelaunayHyperbolic(1.0, 0.5, 0.8, 2.0, Frame.LEFT),
    }
    print("chart              {l,L}   {g,G}   det J")
    for name, el in charts.items():
        a, b, d = brackets(el)
        print(f"{name:18s} {a:+.3f}  {b:+.3f}  {d:+.3f}")

    print("\nl_hat (ell3, G4, g4): printed / printed elimination / section elimination")
    for j in (1, 2):
        pr = PRINTED[f"l_hat_{j}"]
        a, b = l_hat(j, elimination="printed"), l_hat(j, elimination="section")
        for c in ("ell3", "G4", "g4"):
            print(f"  j={j} {c:4s} {pr[c]:>6s}  {a[c]:+.4f}  {b[c]:+.4f}")

    print("\nu_hat (L3, G4, g4): printed / computed")
    for j in (1, 2):
        pr = PRINTED[f"u_hat_{j}"]
        v = u_hat(j)
        print("  j=%d " % j + "  ".join(f"{c}: {pr[c]} vs {v[c]:+.4f}" for c in pr))

    print("\ndE3+/dpsi: bordered system / finite differences")
    for j in (1, 2):
        print(f"  j={j} {energy_phase_derivative(j):+.6f}  {energy_phase_derivative_fd(j):+.6f}")
    print(f"  sqrt(3) = {math.sqrt(3):.6f}")


if __name__ == "__main__":
    main()
