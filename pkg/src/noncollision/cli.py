"""Command-line front end: ``noncollision verify|simulate|study``.

Exit codes: 0 all pass, 2 verification failure, 3 runtime error, 64 usage error.
Report files are written with sorted keys and no timestamps, so the same
config and seed give byte-identical files.  Runtimes go to stdout only.
"""

from __future__ import annotations

import csv
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import click

from . import simulator as sim
from .gerver import fixed_point
from .kepler import DelaunayElliptic
from .verification import run_suite

EXIT_OK, EXIT_FAIL, EXIT_RUNTIME, EXIT_USAGE = 0, 2, 3, 64


@dataclass
class RunConfig:
    eps0: float = 0.5
    mu: float = 1e-4
    chi: float = 1e4
    kappa: float = 0.45
    tol: float | None = None
    seed: int = 0
    out: str = "out"
    mu_list: list = field(default_factory=lambda: [1e-3, 3e-4, 1e-4])
    chi_list: list | None = None
    periods: int = 10
    L: float = 1.0
    G: float = 0.8
    g: float = 0.0
    every: int = 1
    with_global: bool = True

    def validate(self):
        if not 0.0 < self.eps0 < math.sqrt(0.5):
            raise click.UsageError(f"eps0={self.eps0} outside (0, sqrt(2)/2)")
        if not 1.0 / 3.0 < self.kappa < 0.5:
            raise click.UsageError(f"kappa={self.kappa} outside (1/3, 1/2)")
        if self.tol is not None and not self.tol > 0:
            raise click.UsageError("tol must be positive")
        if self.every < 1:
            raise click.UsageError("every must be at least 1")

    def sim_config(self) -> sim.SimConfig:
        return sim.SimConfig(kappa=self.kappa)

    def check_physical(self, mu, chi):
        cfg = self.sim_config()
        if not 0.0 < mu <= cfg.mu_max:
            raise click.UsageError(f"mu={mu} outside (0, {cfg.mu_max}]")
        if not chi >= cfg.chi_min:
            raise click.UsageError(f"chi={chi} below the floor {cfg.chi_min}")


def _parse_list(text):
    if text is None:
        return None
    items = [t for t in text.replace(" ", "").split(",") if t]
    try:
        return [float(t) for t in items]
    except ValueError as exc:
        raise click.UsageError(f"bad number list {text!r}") from exc


def _build_config(config_path, **flags) -> RunConfig:
    base = {}
    if config_path:
        try:
            base = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise click.UsageError(f"cannot read config {config_path}: {exc}") from exc
        if not isinstance(base, dict):
            raise click.UsageError("config must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = set(base) - known
    if unknown:
        raise click.UsageError(f"unknown config keys: {sorted(unknown)}")
    for key in ("mu_list", "chi_list"):
        if isinstance(flags.get(key), str):
            flags[key] = _parse_list(flags[key])
    # flags win over the file
    base.update({k: v for k, v in flags.items() if v is not None and k in known})
    cfg = RunConfig(**base)
    cfg.validate()
    return cfg


def _write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def common_options(fn):
    opts = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), help="JSON config; flags win."),
        click.option("--out", type=str, help="Output directory."),
        click.option("--eps0", type=float, help="Gerver parameter eps0."),
        click.option("--mu", type=float, help="Mass ratio mu."),
        click.option("--chi", type=float, help="Distance between the centers."),
        click.option("--kappa", type=float, help="Encounter-sphere exponent."),
        click.option("--seed", type=int, help="Seed for randomized checks."),
        click.option("--tol", type=float, help="Override tolerance (suite specific)."),
        click.option("--json", "as_json", is_flag=True, help="Print the summary as JSON."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _emit(summary: dict, as_json: bool):
    if as_json:
        click.echo(json.dumps(summary, sort_keys=True))
    else:
        click.echo(" ".join(f"{k}={v}" for k, v in summary.items()))


@click.group()
def cli():
    """Gerver maps, hyperbolicity checks and a finite-mass simulator."""


# --- verify -------------------------------------------------------------------------------


@cli.command()
@click.argument("suite", type=click.Choice(["gerver", "hyperbolicity", "kepler", "all"]))
@common_options
def verify(suite, config_path, out, eps0, mu, chi, kappa, seed, tol, as_json):
    """Run a verification suite and write a JSON report of records."""
    cfg = _build_config(config_path, out=out, eps0=eps0, mu=mu, chi=chi, kappa=kappa, seed=seed, tol=tol)
    recs = run_suite(suite, cfg.eps0, cfg.seed, cfg.tol)
    outdir = Path(cfg.out)
    report = []
    for r in recs:
        d = r.to_dict()
        d.pop("runtime")
        report.append(d)
    _write_json(outdir / f"verify_{suite}.json", report)
    failed = [r.name for r in recs if not r.passed]
    for r in recs:
        mark = "PASS" if r.passed else "FAIL"
        if not as_json:
            click.echo(f"{mark} {r.name} [{r.provenance}] computed={r.to_dict()['computed']} "
                       f"expected={r.to_dict()['expected']} tol={r.tolerance:g} ({r.runtime:.3f}s)")
    _emit({"suite": suite, "records": len(recs), "failed": len(failed),
           "report": str(outdir / f"verify_{suite}.json")}, as_json)
    return EXIT_FAIL if failed else EXIT_OK


# --- simulate -------------------------------------------------------------------------------


def _shot_local(cfg: RunConfig, scfg):
    fp = fixed_point(cfg.eps0)
    s = sim.lift_gerver(cfg.eps0, cfg.mu, cfg.chi, 1)
    d, _ = sim.shoot_phase(s, math.pi, scfg, fp.collision1.alpha)
    return sim.shift_phase(s, d), d


@cli.command()
@click.argument("kind", type=click.Choice(["kepler", "local", "global"]))
@common_options
@click.option("--periods", type=int, help="Kepler run: number of periods.")
@click.option("--L", "L", type=float, help="Kepler run: Delaunay L.")
@click.option("--G", "G", type=float, help="Kepler run: Delaunay G.")
@click.option("--g", "g", type=float, help="Kepler run: Delaunay g.")
@click.option("--every", type=int, help="Record every n-th accepted step.")
def simulate(kind, config_path, out, eps0, mu, chi, kappa, seed, tol, as_json, periods, L, G, g, every):
    """Integrate one trajectory; write trajectory.csv and events.jsonl."""
    cfg = _build_config(config_path, out=out, eps0=eps0, mu=mu, chi=chi, kappa=kappa, seed=seed, tol=tol,
                        periods=periods, L=L, G=G, g=g, every=every)
    scfg = cfg.sim_config()
    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    log_ = sim.EventLog()
    rec = sim.TrajectoryRecorder(every=cfg.every)
    if kind == "kepler":
        if not abs(cfg.G) < cfg.L:
            raise click.UsageError("Kepler run needs |G| < L")
        if cfg.periods < 1:
            raise click.UsageError("periods must be at least 1")
        r = sim.kepler_run(DelaunayElliptic(cfg.L, 0.0, cfg.G, cfg.g), cfg.periods, scfg, log_, rec)
        summary = {"kind": kind, "energy_drift": r.energy_drift, "period_error": r.period_error,
                   "sections": len(log_.records), "steps": r.nsteps}
        passed = r.energy_drift <= (cfg.tol or 1e-10)
    else:
        cfg.check_physical(cfg.mu, cfg.chi)
        s, d = _shot_local(cfg, scfg)
        rec.add_state(s)
        log_.add(sim.SectionKind.X4_MINUS2.value, s, direction=1)
        res = sim.local_map(s, scfg, log_, rec)
        summary = {"kind": kind, "phase_shift": d, "omega": res.omega, "min_distance": res.min_distance,
                   "alpha_measured": res.alpha_measured, "alpha_predicted": res.alpha_predicted,
                   "theta_out": res.theta_out, "energy_drift": res.energy_drift}
        drift = res.energy_drift
        if kind == "global":
            g_res = sim.global_map(res.state, scfg, log_=log_, recorder=rec)
            summary.update({"dE3_over_mu": g_res.dE3 / cfg.mu, "theta4_in_return": g_res.theta_in_out,
                            "theta4_out_dev": sim.wrap_angle(g_res.theta_out_in - math.pi),
                            "q1_pericenter": g_res.q1_pericenter, "global_energy_drift": g_res.energy_drift})
            drift = max(drift, g_res.energy_drift)
        summary["sections"] = len(log_.records)
        passed = drift <= (cfg.tol or scfg.energy_tol)
    rec.write_csv(outdir / "trajectory.csv")
    log_.write_jsonl(outdir / "events.jsonl")
    _write_json(outdir / "summary.json", summary)
    _emit(summary, as_json)
    return EXIT_OK if passed else EXIT_FAIL


# --- study ----------------------------------------------------------------------------------

CONVERGENCE_SCHEMA = {
    "mu": "mass ratio",
    "chi": "distance between the centers",
    "local_error": "Euclidean norm of (E3, e3, g3) local map minus Gerver map",
    "E3_err": "E3 difference, local map minus Gerver map",
    "e3_err": "e3 difference",
    "g3_err": "g3 difference (wrapped)",
    "min_distance": "closest approach |Q3 - Q4| in the encounter",
    "dwell_time": "time spent inside |Q3 - Q4| < mu^kappa",
    "alpha_error": "measured minus predicted rotation of the relative velocity (wrapped, abs)",
    "rel_energy_drift": "change of the relative-motion energy across the encounter",
    "dE3_over_mu": "|E3 change over the global map| / mu",
    "theta_in_return": "|incoming asymptote angle of the returning traveler|",
    "theta_out_dev": "|outgoing asymptote of the traveler minus pi| at the global-map entry",
    "global_energy_drift": "total energy drift over the global map",
    "error": "failure message for this cell, empty on success",
}

SHOOT_SCHEMA = {
    "mu": "mass ratio",
    "chi": "distance between the centers",
    "G4_start": "traveler angular momentum found by the outer shooting loop",
    "timing_residual": "meeting-time residual of the second collision",
    "energy_multiplier": "E3 after two collisions divided by E3 before",
    "e3": "captured eccentricity after renormalization",
    "g3": "captured argument of pericenter after renormalization",
    "E3_after": "captured energy after renormalization",
    "step2_phase_correction": "phase shift of Q3 needed at the second collision",
    "defect1": "residual velocity rotation needed after step 1",
    "defect2": "residual velocity rotation needed after step 2",
    "multiplier_dev": "|energy_multiplier / lambda0 - 1|",
    "eg_dev": "max(|e3 - eps0|, |g3 - pi/2|)",
    "error": "failure message for this cell, empty on success",
}


def _write_table(path: Path, schema: dict, rows: list[dict], verdicts: dict):
    cols = list(schema)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in cols])
        for k in sorted(verdicts):
            fh.write(f"# verdict {k}: {verdicts[k]}\n")
    _write_json(path.with_suffix(".schema.json"),
                {"columns": schema, "comments": "lines starting with '# verdict' hold monotonicity verdicts"})


@cli.command()
@click.argument("kind", type=click.Choice(["convergence", "shoot"]))
@common_options
@click.option("--mu-list", "mu_list", type=str, help="Comma-separated decreasing mu values.")
@click.option("--chi-list", "chi_list", type=str, help="Comma-separated chi values (default 10/mu).")
@click.option("--no-global", "no_global", is_flag=True, help="Convergence: skip the global map.")
def study(kind, config_path, out, eps0, mu, chi, kappa, seed, tol, as_json, mu_list, chi_list, no_global):
    """Parameter sweeps; writes a CSV table plus a schema sidecar."""
    cfg = _build_config(config_path, out=out, eps0=eps0, mu=mu, chi=chi, kappa=kappa, seed=seed, tol=tol,
                        mu_list=mu_list, chi_list=chi_list, with_global=False if no_global else None)
    if not cfg.mu_list:
        raise click.UsageError("mu list is empty")
    if cfg.chi_list is not None and not cfg.chi_list:
        raise click.UsageError("chi list is empty")
    chis = cfg.chi_list if cfg.chi_list is not None else [10.0 / m for m in cfg.mu_list]
    if len(chis) != len(cfg.mu_list):
        raise click.UsageError("mu and chi lists differ in length")
    for m, c in zip(cfg.mu_list, chis):
        cfg.check_physical(m, c)
    scfg = cfg.sim_config()
    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    if kind == "convergence":
        try:
            rows, verdicts = sim.convergence_study(cfg.mu_list, chis, cfg.eps0, scfg, do_global=cfg.with_global)
        except ValueError as exc:
            raise click.UsageError(str(exc)) from exc
        table = [asdict(r) for r in rows]
        _write_table(outdir / "convergence.csv", CONVERGENCE_SCHEMA, table, verdicts)
    else:
        lam0 = fixed_point(cfg.eps0).lambda0
        table = []
        for m, c in zip(cfg.mu_list, chis):
            row = {k: math.nan for k in SHOOT_SCHEMA}
            row.update(mu=m, chi=c, error="")
            try:
                rep = sim.shoot_double_step(cfg.eps0, m, c, scfg)
                row.update({k: getattr(rep, k) for k in ("G4_start", "timing_residual", "energy_multiplier", "e3",
                                                          "g3", "E3_after", "step2_phase_correction")})
                row["defect1"], row["defect2"] = map(float, rep.defects)
                row["multiplier_dev"] = abs(rep.energy_multiplier / lam0 - 1.0)
                row["eg_dev"] = max(abs(rep.e3 - cfg.eps0), abs(sim.wrap_angle(rep.g3 - math.pi / 2)))
                click.echo(f"shoot mu={m:g} chi={c:g} runtime={rep.runtime:.1f}s", err=True)
            except sim.SimulationError as exc:
                row["error"] = f"{type(exc).__name__}: {exc}"
            table.append(row)
        ok = [r for r in table if not r["error"]]
        verdicts = {
            "multiplier_within_20pct": bool(ok) and all(r["multiplier_dev"] <= 0.2 for r in ok),
            "eg_within_0.05": bool(ok) and all(r["eg_dev"] <= 0.05 for r in ok),
            "deviations_shrink": len(ok) >= 2 and all(
                b["eg_dev"] < a["eg_dev"] and b["multiplier_dev"] < a["multiplier_dev"] for a, b in zip(ok, ok[1:])
            ),
        }
        _write_table(outdir / "shoot.csv", SHOOT_SCHEMA, table, verdicts)
    ok_cells = sum(1 for r in table if not r["error"])
    _emit({"kind": kind, "cells": len(table), "succeeded": ok_cells, **verdicts}, as_json)
    return EXIT_OK if ok_cells else EXIT_RUNTIME


def main(argv=None):
    try:
        code = cli.main(args=argv, prog_name="noncollision", standalone_mode=False)
    except click.UsageError as exc:
        exc.show()
        sys.exit(EXIT_USAGE)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        sys.exit(EXIT_RUNTIME)
    except sim.SimulationError as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        click.echo(json.dumps(exc.context, sort_keys=True, default=str), err=True)
        sys.exit(EXIT_RUNTIME)
    except (ValueError, RuntimeError, OSError) as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    sys.exit(code if isinstance(code, int) else EXIT_OK)


if __name__ == "__main__":
    main()
