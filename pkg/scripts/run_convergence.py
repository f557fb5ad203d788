"""Local and global convergence sweeps, including the chi sensitivity of dE3.

    python scripts/run_convergence.py --schedule ten-over-mu
    python scripts/run_convergence.py --schedule fixed --chi 1e4
    python scripts/run_convergence.py --scan-mu 2.5e-4 --scan-chi 3.6e4,3.8e4,4e4,4.2e4,4.4e4

Writes one CSV per run into --out.
"""

import argparse
import csv
import time
from dataclasses import asdict, fields
from pathlib import Path

from noncollision.simulator import StudyRow, convergence_study


def floats(text):
    return [float(t) for t in text.split(",") if t]


def write(path, rows, verdicts=None):
    cols = [f.name for f in fields(StudyRow)]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, cols)
        w.writeheader()
        for r in rows:
            w.writerow(asdict(r))
        for k, v in sorted((verdicts or {}).items()):
            fh.write(f"# verdict {k}: {v}\n")
    print(f"wrote {path}")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--mu", type=floats, default=[1e-3, 5e-4, 2.5e-4, 1.25e-4])
    ap.add_argument("--schedule", choices=["ten-over-mu", "fixed"], default="ten-over-mu")
    ap.add_argument("--chi", type=float, default=1e4, help="chi for the fixed schedule")
    ap.add_argument("--no-global", action="store_true")
    ap.add_argument("--scan-mu", type=float, help="run a chi scan at this mu instead of a sweep")
    ap.add_argument("--scan-chi", type=floats, default=[3.6e4, 3.8e4, 4e4, 4.2e4, 4.4e4])
    ap.add_argument("--out", type=Path, default=Path("out"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    t = time.perf_counter()

    if args.scan_mu is not None:
        rows = []
        for chi in args.scan_chi:
            r, _ = convergence_study([args.scan_mu], [chi])
            rows += r
            print(f"chi={chi:g} dE3/mu={r[0].dE3_over_mu:.4g} theta_in={r[0].theta_in_return:.3g}", flush=True)
        write(args.out / f"chi_scan_mu{args.scan_mu:g}.csv", rows)
    else:
        chis = None if args.schedule == "ten-over-mu" else [args.chi] * len(args.mu)
        rows, verdicts = convergence_study(args.mu, chis, do_global=not args.no_global)
        for r in rows:
            print(f"mu={r.mu:g} chi={r.chi:g} local={r.local_error:.3e} dE3/mu={r.dE3_over_mu:.4g} "
                  f"theta_in={r.theta_in_return:.3g} {r.error}")
        print(verdicts)
        write(args.out / f"convergence_{args.schedule}.csv", rows, verdicts)
    print(f"runtime {time.perf_counter() - t:.1f}s")


if __name__ == "__main__":
    main()
