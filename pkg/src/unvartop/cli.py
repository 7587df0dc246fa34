"""Command-line front end.

``unvartop run`` resolves a problem (built-in example or config file),
executes the optimization loop, and writes the delimited history, the final
topology image, per-step field snapshots, and report figures into the
output directory.

Exit codes: 0 = run completed with a converged final step; 1 = run finished
with iteration-cap warnings or aborted (partial outputs are kept); 2 =
usage error; 3 = output I/O failure.

Only the standard library is imported at module level so that the
``UNVARTOP_THREADS`` environment variable can cap the numeric libraries'
thread pools before any of them load.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from typing import Optional

EXIT_OK = 0
EXIT_WARNINGS = 1
EXIT_USAGE = 2
EXIT_IO = 3

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)

SOLVERS = ("direct", "iterative")
ROOTFINDERS = ("bisection", "regula-falsi", "anderson-bjorck")
CONSTRAINTS = ("bisection", "augmented")
MODELS = ("plane-stress", "plane-strain")
KINDS = ("compliance", "multiload", "mechanism", "thermal")

# keys a config file may set; the seven grid/schedule numbers are fixed by
# the positional arguments and may not be restated
_CONFIG_KEYS = (
    "example",
    "problem",
    "solver",
    "rootfind",
    "constraint",
    "model",
    "out",
    "snapshots",
    "report",
)
_POSITIONAL_KEYS = ("nelx", "nely", "nsteps", "vol0", "vol", "k", "tau")


class UsageError(Exception):
    """Bad command line, config file, or environment value."""


@dataclasses.dataclass
class RunConfig:
    """Fully-resolved run request."""

    nelx: int
    nely: int
    nsteps: int
    vol0: float
    vol: float
    k: float
    tau: float
    example: str = "cantilever"
    problem: Optional[str] = None
    solver: str = "direct"
    rootfind: str = "bisection"
    constraint: str = "bisection"
    model: str = "plane-stress"
    out: str = "."
    snapshots: bool = True
    report: bool = True


def configure_threads(env=None) -> Optional[int]:
    """Apply UNVARTOP_THREADS to the numeric libraries' thread-pool caps.

    Unset, empty, or 0 leaves the libraries on automatic sizing.  Returns
    the applied cap, if any.
    """
    env = os.environ if env is None else env
    raw = env.get("UNVARTOP_THREADS", "").strip()
    if raw == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(
            f"UNVARTOP_THREADS must be a non-negative integer, got {raw!r}"
        ) from None
    if n < 0:
        raise UsageError(f"UNVARTOP_THREADS must be non-negative, got {n}")
    if n == 0:
        return None
    for var in _THREAD_VARS:
        env[var] = str(n)
    return n


def _parse_bool(raw: str, key: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"config key {key} wants a boolean, got {raw!r}")


def _read_config_file(path: str) -> dict:
    """Parse a flat key=value config file (blank lines and # comments ok)."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if key in _POSITIONAL_KEYS:
            raise UsageError(
                f"{path}:{lineno}: {key} is fixed by the positional arguments "
                "and may not appear in a config file"
            )
        if key not in _CONFIG_KEYS:
            raise UsageError(
                f"{path}:{lineno}: unknown config key {key!r}; "
                f"valid keys: {', '.join(_CONFIG_KEYS)}"
            )
        if key in values:
            raise UsageError(f"{path}:{lineno}: duplicate config key {key!r}")
        values[key] = raw
    return values


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unvartop",
        description="2D topology optimization with unilevel variational updates.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser(
        "run",
        help="optimize one problem and write its outputs",
        description=(
            "Run the optimization loop on a built-in example "
            "(--example; default cantilever: left edge clamped, downward "
            "point load at the bottom-right corner) or on settings from "
            "a key=value config file (--config).  Built-in examples: "
            "cantilever, cantilever-mid, mbb, lshape, bridge, gripper, "
            "michell-multiload, inverter; geometry comes from NELX/NELY, "
            "mechanism examples default to spring stiffness 0.01."
        ),
    )
    src = run_p.add_mutually_exclusive_group()
    src.add_argument("--example", help="built-in example name")
    src.add_argument("--config", help="key=value config file")
    run_p.add_argument("nelx", type=int, help="elements along x")
    run_p.add_argument("nely", type=int, help="elements along y")
    run_p.add_argument("nsteps", type=int, help="pseudo-time steps")
    run_p.add_argument("vol0", type=float, help="initial void fraction")
    run_p.add_argument("vol", type=float, help="final void fraction")
    run_p.add_argument("k", type=float, help="schedule curvature (0 = linear)")
    run_p.add_argument("tau", type=float, help="smoothing strength")
    run_p.add_argument("--problem", choices=KINDS, help="expected problem kind")
    run_p.add_argument("--solver", choices=SOLVERS, default=None)
    run_p.add_argument("--rootfind", choices=ROOTFINDERS, default=None)
    run_p.add_argument("--constraint", choices=CONSTRAINTS, default=None)
    run_p.add_argument("--model", choices=MODELS, default=None)
    run_p.add_argument("--out", default=None, help="output directory")
    run_p.add_argument(
        "--no-snapshots",
        action="store_true",
        help="skip per-step field snapshot files",
    )
    run_p.add_argument(
        "--no-report", action="store_true", help="skip PNG report figures"
    )
    return parser


def parse_config(argv) -> RunConfig:
    """Resolve argv (plus any config file) into a RunConfig."""
    parser = _build_parser()
    args = parser.parse_args(argv)

    file_values = _read_config_file(args.config) if args.config else {}
    cfg = RunConfig(
        nelx=args.nelx,
        nely=args.nely,
        nsteps=args.nsteps,
        vol0=args.vol0,
        vol=args.vol,
        k=args.k,
        tau=args.tau,
    )
    for key in ("example", "problem", "solver", "rootfind", "constraint", "model", "out"):
        flag = getattr(args, key if key != "example" else "example")
        if flag is not None:
            setattr(cfg, key, flag)
        elif key in file_values:
            setattr(cfg, key, file_values[key])
    for key in ("snapshots", "report"):
        if key in file_values:
            setattr(cfg, key, _parse_bool(file_values[key], key))
    if args.no_snapshots:
        cfg.snapshots = False
    if args.no_report:
        cfg.report = False

    if cfg.problem is not None and cfg.problem not in KINDS:
        raise UsageError(f"unknown problem kind {cfg.problem!r}")
    for key, valid in (
        ("solver", SOLVERS),
        ("rootfind", ROOTFINDERS),
        ("constraint", CONSTRAINTS),
        ("model", MODELS),
    ):
        if getattr(cfg, key) not in valid:
            raise UsageError(
                f"invalid {key} {getattr(cfg, key)!r}; expected one of {valid}"
            )
    return cfg


def run_command(cfg: RunConfig) -> int:
    """Execute a resolved run request; returns the process exit code."""
    import warnings as _warnings

    from .optimizer import (
        ConstraintInfeasible,
        DegenerateField,
        RunOptions,
        TimeSchedule,
        run,
    )
    from .fem import SolveFailure
    from .output import chi_to_pgm, write_history, write_snapshot
    from .problems import example_library

    try:
        problem = example_library(cfg.example, cfg.nelx, cfg.nely, model=cfg.model)
        schedule = TimeSchedule(cfg.vol0, cfg.vol, cfg.nsteps, cfg.k)
        options = RunOptions(
            tau=cfg.tau,
            solver=cfg.solver,
            rootfind=cfg.rootfind,
            constraint=cfg.constraint,
        )
    except (KeyError, ValueError) as exc:
        msg = exc.args[0] if exc.args else str(exc)
        raise UsageError(msg) from None
    if cfg.problem is not None and cfg.problem != problem.kind:
        raise UsageError(
            f"--problem {cfg.problem} does not match example "
            f"{cfg.example!r} (kind {problem.kind})"
        )

    try:
        os.makedirs(cfg.out, exist_ok=True)
    except OSError as exc:
        print(f"unvartop: cannot create output directory: {exc}", file=sys.stderr)
        return EXIT_IO

    with _warnings.catch_warnings(record=True) as caught:
        _warnings.simplefilter("always", RuntimeWarning)
        try:
            history = run(problem, schedule, options)
        except (ConstraintInfeasible, DegenerateField, SolveFailure) as exc:
            print(f"unvartop: run failed: {exc}", file=sys.stderr)
            return EXIT_WARNINGS
    for w in caught:
        print(f"unvartop: warning: {w.message}", file=sys.stderr)

    try:
        write_history(history, os.path.join(cfg.out, "history.csv"))
        with open(os.path.join(cfg.out, "topology.pgm"), "wb") as f:
            f.write(chi_to_pgm(history.final_chi, cfg.nelx, cfg.nely))
        if cfg.snapshots:
            for snap in history.snapshots:
                write_snapshot(
                    snap.psi,
                    snap.chi,
                    snap.u,
                    cfg.nelx,
                    cfg.nely,
                    snap.step,
                    cfg.out,
                )
        if cfg.report:
            from .report import render_report

            render_report(history, cfg.nelx, cfg.nely, cfg.out)
    except OSError as exc:
        print(f"unvartop: cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_IO

    last = history.records[-1]
    status = "converged" if history.completed else (
        "aborted" if history.aborted else "finished with warnings"
    )
    print(
        f"unvartop: {status}; {len(history.records)} iterations, "
        f"final void fraction {history.final_vol:.6f} "
        f"(target {last.t_ref:g}), outputs in {cfg.out}"
    )
    return EXIT_OK if history.completed else EXIT_WARNINGS


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        configure_threads()
        cfg = parse_config(argv)
        return run_command(cfg)
    except UsageError as exc:
        print(f"unvartop: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        code = exc.code
        return code if isinstance(code, int) else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
