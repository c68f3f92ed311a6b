"""Command-line entry point: ``convergence``, ``solve`` and ``check`` subcommands."""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import logging
import sys
from pathlib import Path

from .assembly import ModelParams
from .harness import (
    compute_errors,
    convergence_study,
    export_vtk,
    report,
    run_property_suite,
    solve_level,
)
from .manufactured import exact_case_2d
from .mesh import build_rect_mesh, refine_uniform
from .solver import ConvergenceError, LinearSolverError, SolverConfig

_SECTION = "run"
RUN_DEFAULTS = {"degree": 0, "nx": 4, "ny": 2, "refinements": 0, "diagonal": "crossed",
                "method": "newton"}


def _coerce(raw: str, default):
    if isinstance(default, tuple):
        parts = [p for p in raw.replace(",", " ").split() if p]
        return tuple(float(p) for p in parts)
    if isinstance(default, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


def read_config(path) -> tuple[ModelParams, SolverConfig, dict]:
    """Parse a flat ``key = value`` file into model, solver and run settings.

    Keys are the field names of :class:`ModelParams` and :class:`SolverConfig`
    plus ``degree``, ``nx``, ``ny``, ``refinements``, ``diagonal`` and
    ``method``.  Missing keys keep their defaults; unknown keys are an error.
    ``gravity`` takes two numbers separated by a comma or whitespace.
    """
    text = Path(path).read_text()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    parser.read_string(f"[{_SECTION}]\n{text}")
    entries = dict(parser[_SECTION])

    sections = {}
    for cls in (ModelParams, SolverConfig):
        defaults = {f.name: getattr(cls(), f.name) for f in dataclasses.fields(cls)}
        sections[cls] = {k: _coerce(entries.pop(k), defaults[k]) for k in list(entries) if k in defaults}
    run = dict(RUN_DEFAULTS)
    for key in list(entries):
        if key in RUN_DEFAULTS:
            run[key] = _coerce(entries.pop(key), RUN_DEFAULTS[key])
    if entries:
        raise ValueError(f"unknown configuration keys: {', '.join(sorted(entries))}")
    if run["degree"] not in (0, 1):
        raise ValueError("degree must be 0 or 1")
    if run["method"] not in ("newton", "picard"):
        raise ValueError("method must be 'newton' or 'picard'")
    return ModelParams(**sections[ModelParams]), SolverConfig(**sections[SolverConfig]), run


def _cmd_convergence(args) -> int:
    study = convergence_study(args.degree, args.levels)
    text = report(study, args.report)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_solve(args) -> int:
    params, config, run = read_config(args.config)
    mesh = build_rect_mesh(run["nx"], run["ny"], exact_case_2d().rect, diagonal=run["diagonal"])
    for _ in range(run["refinements"]):
        mesh = refine_uniform(mesh)
    case = exact_case_2d(params)
    spaces, result = solve_level(mesh, run["degree"], case, config, method=run["method"])
    row = compute_errors(result.state, case, spaces, result.iterations)
    print(f"dofs {row.dofs}  h {row.h:.4f}  iterations {row.iterations}")
    print(f"e_curl_s {row.e_omega:.2e}  e_rdiv {row.e_u:.2e}  e0 {row.e_p:.2e}  "
          f"e1 {row.e_T:.2e}  div_inf {row.div_inf:.2e}")
    if args.vtk:
        export_vtk(result.state, spaces, args.vtk)
    return 0


def _cmd_check(args) -> int:
    results = run_property_suite()
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="brinkman-mfem", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = parser.add_subparsers(dest="command", required=True)

    conv = sub.add_parser("convergence", help="error history on uniformly refined meshes")
    conv.add_argument("--degree", type=int, choices=(0, 1), required=True)
    conv.add_argument("--levels", type=int, default=4)
    conv.add_argument("--report", choices=("csv", "md"), default="md")
    conv.add_argument("--out", help="write the table here instead of stdout")
    conv.set_defaults(func=_cmd_convergence)

    solve = sub.add_parser("solve", help="single solve configured by a key=value file")
    solve.add_argument("--config", required=True)
    solve.add_argument("--vtk", help="write the solution as legacy VTK")
    solve.set_defaults(func=_cmd_solve)

    check = sub.add_parser("check", help="run the property suite")
    check.set_defaults(func=_cmd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "levels", 1) < 1:
        print("error: --levels must be at least 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ConvergenceError, LinearSolverError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
