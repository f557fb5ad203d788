"""One shot Gerver double step per mu at fixed chi, with JSON summaries.

    python scripts/run_shooting.py --mu 1e-4,1e-5 --chi 1e4
"""

import argparse
import json
import math
from pathlib import Path

from noncollision.gerver import fixed_point
from noncollision.simulator import shoot_double_step, wrap_angle


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--mu", default="1e-4,1e-5")
    ap.add_argument("--chi", type=float, default=1e4)
    ap.add_argument("--eps0", type=float, default=0.5)
    ap.add_argument("--out", type=Path, default=Path("out"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    lam0 = fixed_point(args.eps0).lambda0
    for mu in (float(m) for m in args.mu.split(",")):
        rep = shoot_double_step(args.eps0, mu, args.chi)
        s = rep.summary()
        s["multiplier_dev"] = abs(rep.energy_multiplier / lam0 - 1)
        s["eg_dev"] = max(abs(rep.e3 - args.eps0), abs(wrap_angle(rep.g3 - math.pi / 2)))
        path = args.out / f"double_step_mu{mu:g}.json"
        path.write_text(json.dumps(s, indent=2, sort_keys=True, default=float) + "\n")
        print(f"mu={mu:g} multiplier={rep.energy_multiplier:.5f} e3={rep.e3:.5f} g3={rep.g3:.5f} "
              f"eg_dev={s['eg_dev']:.2e} runtime={rep.runtime:.0f}s -> {path}")


if __name__ == "__main__":
    main()
