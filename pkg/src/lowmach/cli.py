"""Command line entry point: ``lowmach <subcommand> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import closure, compressible, entropy, harness, incompressible
from .config import load_config
from .errors import DomainError
from .fields import write_snapshot

log = logging.getLogger("lowmach")


def _global_flags(p: argparse.ArgumentParser, suppress: bool):
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    p.add_argument("--config", help="INI configuration file", **({} if not suppress else kw))
    p.add_argument("--seed", type=int, help="random seed (u64)", **({"default": 0} if not suppress else kw))
    p.add_argument("--out", help="output directory (overrides [output] dir)", **kw)
    p.add_argument("--threads", type=int, help="parallel eps runs in a sweep",
                   **({"default": 1} if not suppress else kw))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lowmach", description=__doc__)
    _global_flags(ap, suppress=False)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        _global_flags(sp, suppress=True)
        return sp

    add("simulate-compressible", "run the compressible solver for the configured setup")
    add("simulate-limit", "run the incompressible limit solver and write snapshots")
    add("sweep", "Mach sweep against a shared limit trajectory")
    sp = add("verify-inequalities", "randomised checks of the inequality toolbox")
    sp.add_argument("--trials", type=int, default=10_000)
    sp = add("closure-solve", "solve d a^gamma + a - 1 = 0 on (0, 1)")
    sp.add_argument("--d", type=float, required=True)
    sp.add_argument("--gamma", type=float, required=True)
    sp = add("dump", "write initial data, or convert a saved state, to columnar text")
    sp.add_argument("--state", help="npz checkpoint to convert (default: configured initial data)")
    sp.add_argument("--file", default=None, help="output file name")
    return ap


def _out_dir(args, cfg) -> Path:
    out = Path(getattr(args, "out", None) or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _initial_state(cfg, params):
    """Conserved initial data for the configured IC kind; returns ``(state, limit_state)``."""
    grid = cfg.grid()
    kind = cfg.ic_kind
    if kind == "well_prepared":
        alpha0, u0 = harness.default_limit_ic(grid, cfg.alpha_amp, cfg.u_amp)
        lim = incompressible.prepare_initial(grid, alpha0, u0, params)
        return harness.make_well_prepared(grid, lim, params, cfg.ic_mode, floor=cfg.solver.floor), lim
    if kind == "rest":
        return compressible.rest_state(grid, params), None
    if kind == "shear":
        y = grid.coords()[-1]
        u = np.zeros((grid.dim,) + grid.shape)
        u[0] = cfg.u_amp * np.sin(2 * np.pi * y / grid.lengths[-1])
        return compressible.from_primitive(grid, 0.5, params.rho_plus_limit, u, params), None
    if kind == "pulse":
        return harness.acoustic_pulse(grid, params, cfg.pulse_amp, cfg.pulse_width), None
    raise DomainError(f"unknown IC kind {kind!r}")


def cmd_simulate_compressible(args, cfg):
    grid = cfg.grid()
    params = cfg.params
    state, lim = _initial_state(cfg, params)
    traj = None
    if lim is not None:
        traj = incompressible.run_limit(grid, lim, params, cfg.solver.t_end, cfg.solver.cadence)
    res = compressible.run(grid, state, params, cfg.solver, limit=traj, snapshot_times=cfg.snapshot_times)
    out = _out_dir(args, cfg)
    res.report.write_csv(out / f"entropy_{params.eps:g}.csv")
    res.report.write_json(out / "summary.json")
    for t, st in res.snapshots.items():
        prim = closure.reconstruct(st.R_plus, st.R_minus, st.m, params)
        write_snapshot(out / f"compressible_t{t:.4f}.txt", grid,
                       {"R_plus": st.R_plus, "R_minus": st.R_minus, "alpha_plus": prim.alpha_plus,
                        "p": prim.p, "u": prim.u}, time=t)
    print(f"steps {res.steps}  t {res.t:.6g}  aborted {res.aborted}  "
          f"max budget excess {res.max_budget_excess:.3e}  max mass drift {res.max_mass_drift:.3e}")
    return 1 if res.aborted else 0


def cmd_simulate_limit(args, cfg):
    grid = cfg.grid()
    params = cfg.params
    alpha0, u0 = harness.default_limit_ic(grid, cfg.alpha_amp, cfg.u_amp)
    lim = incompressible.prepare_initial(grid, alpha0, u0, params)
    traj = incompressible.run_limit(grid, lim, params, cfg.solver.t_end, cfg.solver.cadence)
    out = _out_dir(args, cfg)
    for i, t in enumerate(traj.times):
        write_snapshot(out / f"limit_t{t:.4f}.txt", grid,
                       {"alpha_plus": traj.alpha[i], "u": traj.u[i], "Pi": traj.Pi[i]}, time=t)
    summary = {"times": traj.times, "kinetic": traj.kinetic, "alpha_mass": traj.alpha_mass,
               "max_div": traj.max_div, "alpha_excursion": traj.max_alpha_excursion,
               "steps": traj.steps, "projections": traj.projections}
    (out / "limit_summary.json").write_text(json.dumps(entropy._jsonable(summary), indent=2))
    print(f"limit run: {traj.steps} steps, max ||div u|| {traj.max_div:.3e}, "
          f"kinetic {traj.kinetic[0]:.6g} -> {traj.kinetic[-1]:.6g}")
    return 0


def cmd_sweep(args, cfg):
    out = _out_dir(args, cfg)
    rep = harness.mach_sweep(cfg.grid(), cfg.params, cfg.eps_list, cfg.solver.t_end, cfg.solver.cadence,
                             mode=cfg.ic_mode, config=cfg.solver, threads=getattr(args, "threads", 1),
                             out_dir=out)
    for r in rep.rows:
        print(f"eps {r['eps']:<6g} sup E1 {r['sup_E1']:.4e}  int|div u|^2 {r['div_int']:.4e}  "
              f"sup L2 {r['sup_l2_plus']:.4e}/{r['sup_l2_minus']:.4e}  steps {r['steps']}")
    for name, c in rep.checks.items():
        print(f"{'PASS' if c['passed'] else 'FAIL'} {name}")
    print("slopes: " + ", ".join(f"{k} {v:.3f}" for k, v in rep.slopes.items()))
    return 0 if rep.passed else 1


def cmd_verify(args, cfg):
    rep = harness.verify_inequalities(getattr(args, "seed", 0), args.trials)
    for line in rep.lines():
        print(line)
    return 0 if rep.passed else 1


def cmd_closure(args, cfg):
    r = closure.solve_alpha(args.d, args.gamma)
    print(f"root {r.a:.17g}")
    print(f"residual {r.residual:.3e}")
    print(f"iterations {r.iterations}")
    return 0


def cmd_dump(args, cfg):
    grid = cfg.grid()
    params = cfg.params
    out = _out_dir(args, cfg)
    if args.state:
        state, t = compressible.ConservedField.load(args.state)
        name = args.file or Path(args.state).with_suffix(".txt").name
    else:
        state, _ = _initial_state(cfg, params)
        t = 0.0
        name = args.file or "initial.txt"
    prim = closure.reconstruct(state.R_plus, state.R_minus, state.m, params)
    path = write_snapshot(out / name, grid, {"R_plus": state.R_plus, "R_minus": state.R_minus,
                                             "alpha_plus": prim.alpha_plus, "p": prim.p, "u": prim.u}, time=t)
    print(path)
    return 0


COMMANDS = {
    "simulate-compressible": cmd_simulate_compressible,
    "simulate-limit": cmd_simulate_limit,
    "sweep": cmd_sweep,
    "verify-inequalities": cmd_verify,
    "closure-solve": cmd_closure,
    "dump": cmd_dump,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(getattr(args, "config", None))
        return COMMANDS[args.command](args, cfg)
    except (DomainError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
