"""Command line entry point: ``fsibeam {run,sweep,study-envelope,study-projector,validate}``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 contact halt (``events.json`` is written before exiting).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from . import diagnostics as diag
from .fields import ContainerGrid, CouplePair, lift
from .geometry import EnvelopeError, positive_part_shift
from .solver.config import ConfigError, RunConfig, load_config
from .solver.coupled import CouplingError
from .solver.fluid import LinearSolveError
from .solver.initial import InitialDataError, initial_triple
from .store import RunManifest, StoreError, load_trajectory, run_and_store

log = logging.getLogger("fsibeam")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CONTACT = 0, 2, 3, 4
NUMERICAL_ERRORS = (CouplingError, LinearSolveError, EnvelopeError, FloatingPointError, np.linalg.LinAlgError)


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _float_list(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="TOML run configuration")
    common.add_argument("--dt", type=float, help="override grid.dt")
    common.add_argument("--nx", type=int, help="override grid.nx")
    common.add_argument("--nz", type=int, help="override grid.nz")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    common.add_argument("-q", "--quiet", action="store_true", help="only warnings and errors")

    output = argparse.ArgumentParser(add_help=False)
    output.add_argument("--out", required=True, type=Path, help="output directory (created atomically)")
    output.add_argument("--force", action="store_true", help="replace an existing output directory")

    p = argparse.ArgumentParser(prog="fsibeam", description="Channel flow over an elastic beam.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="check a config and its initial data")
    sub.add_parser("run", parents=[common, output], help="integrate one configuration")
    s = sub.add_parser("sweep", parents=[common, output], help="damping sweep with Cauchy diagnostics")
    s.add_argument("--gammas", type=_float_list, help="comma list, strictly decreasing")
    s.add_argument("--delta", type=float, help="envelope gap for the sweep report")
    s.add_argument("--workers", type=int, default=1)
    e = sub.add_parser("study-envelope", parents=[common, output], help="lower envelopes of one trajectory")
    e.add_argument("--delta", type=_float_list, help="comma list of gaps (default: sweep.deltas)")
    e.add_argument("--from-run", type=Path, help="reuse a stored run directory instead of integrating")
    j = sub.add_parser("study-projector", parents=[common, output], help="competitor error against height gap")
    j.add_argument("--levels", default="2,8", help="first,last exponent j of the gap 2^-j")
    j.add_argument("--s", type=float, default=0.1, help="Sobolev index")
    return p


def configure_logging(verbose: int, quiet: bool) -> None:
    level = logging.WARNING if quiet else (logging.DEBUG if verbose > 1 else logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stdout, force=True)


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config)
    grid = {k: getattr(args, k) for k in ("dt", "nx", "nz") if getattr(args, k) is not None}
    if grid:
        cfg = cfg.with_overrides(grid=grid)
    if getattr(args, "gammas", None):
        cfg = cfg.with_overrides(sweep={"gammas": args.gammas})
    return cfg


@contextmanager
def atomic_directory(target: Path, force: bool = False):
    """Yield a scratch directory that is renamed to ``target`` on exit.

    The rename also happens when a ``CliError`` (such as a contact halt)
    escapes, so partial but consistent results are kept; any other
    exception discards the scratch directory.
    """
    target = Path(target)
    if target.exists() and any(target.iterdir()) and not force:
        raise CliError(f"output directory {target} exists and is not empty (use --force)", EXIT_CONFIG)
    target.parent.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))

    def commit():
        if target.exists():
            shutil.rmtree(target)
        os.replace(scratch, target)

    try:
        yield scratch
    except CliError:
        commit()
        raise
    except BaseException:
        shutil.rmtree(scratch, ignore_errors=True)
        raise
    commit()


# ---------------------------------------------------------------------------
# subcommands


def cmd_validate(args, cfg: RunConfig) -> int:
    triple = initial_triple(cfg)
    h = 1 + triple.eta0
    print(f"config {args.config}: ok (hash {cfg.config_hash()})")
    print(f"  grid {cfg.grid.nx}x{cfg.grid.nz}, dt={cfg.grid.dt:g}, steps={cfg.grid.n_steps}")
    print(f"  initial min height {h.min():.6g}, max |velocity| {np.abs(triple.eta1).max():.3g}")
    return EXIT_OK


def _report_run(traj, out: Path) -> None:
    led = diag.energy_ledger(traj)
    s = led.summary()
    print(f"run {traj.config.name}: {len(traj.steps)} steps to t={traj.samples[-1].t:.6g}")
    print(f"  energy {s['initial_energy']:.6e} -> {s['final_energy']:.6e}, "
          f"relative ledger residual {s['final_relative_residual']:.3e}")
    print(f"  min height {traj.min_heights().min():.6g}; output {out}")


def cmd_run(args, cfg: RunConfig) -> int:
    with atomic_directory(args.out, args.force) as tmp:
        traj, manifest = run_and_store(cfg, tmp)
        if traj.halted:
            ev = traj.events[0]
            raise CliError(f"contact at t={ev.time:.6g}, x={ev.x:.4g}; events.json written", EXIT_CONTACT)
    _report_run(traj, args.out)
    return EXIT_OK


def _sweep_member(config_dict: dict, base_dir: str, root: str) -> str:
    cfg = RunConfig.from_dict(config_dict, base_dir)
    run_and_store(cfg, root)
    return root


def cmd_sweep(args, cfg: RunConfig) -> int:
    gammas = list(cfg.sweep.gammas)
    delta = args.delta if args.delta is not None else cfg.sweep.deltas[-1]
    with atomic_directory(args.out, args.force) as tmp:
        members = [diag.member_config(cfg, g) for g in gammas]
        roots = [str(tmp / "members" / f"gamma_{g:g}") for g in gammas]
        jobs = [(m.to_dict(), m.base_dir, r) for m, r in zip(members, roots)]
        if args.workers > 1:
            with ProcessPoolExecutor(max_workers=args.workers) as pool:
                list(pool.map(_sweep_member, *zip(*jobs)))
        else:
            for job in jobs:
                _sweep_member(*job)
        trajectories = [load_trajectory(r) for r in roots]
        report = diag.gamma_sweep(cfg, gammas, delta, trajectories=trajectories)
        paths = report.write(tmp)
        index = RunManifest.for_config(cfg, tmp)
        for p in paths.values():
            index.add_file(p)
        for r in roots:
            index.add_file(Path(r) / RunManifest.FILENAME)
        index.status = "complete"
        index.write()
    print(f"sweep over gammas {gammas}: report in {args.out / 'sweep_report.json'}")
    for a, b, v, w in zip(gammas, gammas[1:], report.cauchy_velocity, report.cauchy_beam):
        print(f"  {a:g} vs {b:g}: velocity {v:.4e}, beam {w:.4e}")
    checks = report.to_dict()["checks"]
    print("  checks: " + ", ".join(f"{k}={'ok' if v else 'FAILED'}" for k, v in checks.items()))
    return EXIT_OK


def cmd_study_envelope(args, cfg: RunConfig) -> int:
    deltas = args.delta or list(cfg.sweep.deltas)
    with atomic_directory(args.out, args.force) as tmp:
        if args.from_run:
            traj = load_trajectory(args.from_run)
        else:
            traj, _ = run_and_store(cfg, tmp / "run")
        rows = diag.envelope_study(traj, deltas)
        for r in rows:
            r["envelope"].to_json(tmp / "envelopes", stem=f"delta_{r['delta']:g}")
        table = {k: [r[k] for r in rows] for k in rows[0] if k != "envelope"}
        diag.write_table(tmp / "tables" / "envelope.csv", table, traj.config.config_hash())
        summary = {"deltas": deltas, "row_bound_spread": diag.row_bound_spread(rows),
                   "rows": [{k: v for k, v in r.items() if k != "envelope"} for r in rows]}
        diag.write_json(tmp / "envelope_report.json", summary)
    for r in rows:
        print(f"delta {r['delta']:g}: eps={r['epsilon']:.4g} N={r['N']} gap={r['max_gap']:.4g} "
              f"violations={r['below_violations'] + r['gap_violations']}")
    print(f"row-bound spread across deltas: {summary['row_bound_spread']:.3%}")
    return EXIT_OK


def projector_pair(cfg: RunConfig):
    """Lift-field test pair on the container built from the initial data."""
    triple = initial_triple(cfg)
    grid = diag.container_for(cfg)
    h = 1 + triple.eta0
    d = triple.eta1
    if not np.any(d):
        d = np.sin(2 * np.pi * grid.x / grid.L)
    lam = 0.5 * float(h.min())
    return CouplePair(lift(d, lam, grid, h), d), h


def cmd_study_projector(args, cfg: RunConfig) -> int:
    from .fields import SobolevConfig

    try:
        j0, j1 = (int(v) for v in args.levels.split(","))
    except ValueError as exc:
        raise CliError(f"--levels must be 'first,last', got {args.levels!r}", EXIT_CONFIG) from exc
    pair, h = projector_pair(cfg)
    L = cfg.params.L
    levels = list(range(j0, j1 + 1))
    family = [positive_part_shift(h, 2.0**-j, L) for j in levels]
    rows = diag.projector_error_study(pair, h, family, SobolevConfig(s=args.s), labels=[str(j) for j in levels])
    with atomic_directory(args.out, args.force) as tmp:
        diag.write_table(tmp / "tables" / "projector.csv",
                         {"j": levels, "gap": [r.gap for r in rows], "error": [r.error for r in rows]},
                         cfg.config_hash())
        diag.write_json(tmp / "projector_report.json", {"s": args.s, "rows": rows})
    for r in rows:
        print(f"j={r.label}: gap {r.gap:.4e}  error {r.error:.4e}")
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "run": cmd_run,
    "sweep": cmd_sweep,
    "study-envelope": cmd_study_envelope,
    "study-projector": cmd_study_projector,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, InitialDataError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CliError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except StoreError as exc:
        print(f"storage error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
