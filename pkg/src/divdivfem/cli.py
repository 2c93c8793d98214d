"""Command line driver: element cards, sequence verification, solves, and
convergence studies with CSV artifacts."""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import polyalg as pa
from .assembly import assemble_hybrid, assemble_mixed, build_global_spaces, dump_system
from .biharmonic import (ERROR_COLUMNS, compare_solutions, convergence_rates,
                         default_case, error_report, postprocess_deflection,
                         solve_hybrid, solve_mixed)
from .complexes import (check_commuting_diagram, check_global_fem_complex,
                        check_local_fem_complexes, check_poly_complexes)
from .element import DivDivElement, divdiv_dof_counts, random_triangle
from .mesh import load_mesh, refine_uniform


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.12e}"
    return str(x)


def _parse_int_list(text: str) -> list:
    """Accept "3", "3,4,5", or "3..5"."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(part) for part in text.split(",") if part]


# -- describe-element -----------------------------------------------------------


def cmd_describe_element(args) -> int:
    l, k = args.l, args.k
    counts = divdiv_dof_counts(l, k)
    rng = np.random.default_rng(args.seed)
    conds, defects = [], []
    for _ in range(args.triangles):
        el = DivDivElement(random_triangle(rng), l, k)
        conds.append(el.cond)
        defects.append(el.duality_error)
    dim = sum(counts.values())
    print(f"div-div conforming tensor element, l = {l}, k = {k}")
    print(f"dimension: {dim}")
    print(f"vertex dofs: {counts['vertex']} (3 components at 3 vertices)")
    print(f"edge dofs: {counts['edge_nn'] + counts['edge_shear']} "
          f"({l - 1} normal-normal moments and {l} shear moments per edge)")
    print(f"interior dofs: {counts['interior_hess'] + counts['interior_xperp']} "
          f"({counts['interior_hess']} Hessian moments, "
          f"{counts['interior_xperp']} sym(x-perp outer .) moments)")
    print(f"dof matrix condition over {args.triangles} random triangles: "
          f"median {np.median(conds):.3e}, max {np.max(conds):.3e}")
    print(f"duality defect: max {np.max(defects):.3e}")
    return 0


# -- verify-complexes -----------------------------------------------------------


def cmd_verify_complexes(args) -> int:
    mesh = load_mesh(args.mesh)
    failures = 0
    for k in _parse_int_list(args.k):
        reports = [check_poly_complexes(k, seed=args.seed)]
        ls = [args.l] if args.l is not None else [k - 1, k]
        for l in ls:
            reports.append(check_local_fem_complexes(l, k, seed=args.seed))
        l_glob = args.l if args.l is not None else k
        reports.append(check_global_fem_complex(mesh, l_glob, k))
        reports.append(check_commuting_diagram(mesh, l_glob, k, seed=args.seed))
        for rep in reports:
            for line in rep.lines():
                print(line)
            failures += len(rep.failures())
    if failures:
        print(f"{failures} check(s) failed")
        return 1
    print("all checks passed")
    return 0


# -- solve ----------------------------------------------------------------------


def _resolve_mesh(spec: str, level: int | None = None):
    if spec == "square":
        if level is None:
            raise ValueError("the square family needs a level")
        return load_mesh(f"square:{level}")
    mesh = load_mesh(spec)
    for _ in range(level or 0):
        mesh = refine_uniform(mesh)
    return mesh


def _solve_once(mesh, l, k, case, hybrid, postprocess):
    quad = 2 * (l + 3) + 4
    dofmap = build_global_spaces(mesh, l, k)
    system = assemble_mixed(dofmap, case.f, load_quad_degree=quad)
    sol = solve_mixed(system)
    ustar = postprocess_deflection(dofmap, sol) if postprocess else None
    row = error_report(dofmap, sol, case, ustar=ustar)
    extra = {"residual": sol.residual}
    if hybrid:
        dofmap_h = build_global_spaces(mesh, l, k, hybrid=True)
        system_h = assemble_hybrid(dofmap_h, case.f, load_quad_degree=quad)
        sol_h = solve_hybrid(system_h)
        dev_s, dev_u = compare_solutions(dofmap, sol, dofmap_h, sol_h)
        extra.update(residual_hybrid=sol_h.residual,
                     hybrid_dev_sigma=dev_s, hybrid_dev_u=dev_u)
    return dofmap, system, sol, row, extra


def _row_cells(row, extra, hybrid):
    cells = [_fmt(v) for v in row.values()]
    if hybrid:
        cells += [_fmt(extra["hybrid_dev_sigma"]), _fmt(extra["hybrid_dev_u"])]
    return cells


def _header(hybrid):
    cols = list(ERROR_COLUMNS)
    if hybrid:
        cols += ["hybrid_dev_sigma", "hybrid_dev_u"]
    return cols


def cmd_solve(args) -> int:
    case = default_case()
    mesh = _resolve_mesh(args.mesh, args.level)
    dofmap, system, sol, row, extra = _solve_once(
        mesh, args.l, args.k, case, args.hybrid, args.postprocess)
    print(",".join(_header(args.hybrid)))
    print(",".join(_row_cells(row, extra, args.hybrid)))
    print(f"# solver residual {extra['residual']:.3e}", file=sys.stderr)
    if args.dump_system:
        paths = dump_system(system, args.dump_system)
        print(f"# wrote {', '.join(paths)}", file=sys.stderr)
    ok = extra["residual"] <= 1e-10
    if args.hybrid:
        ok = ok and extra["hybrid_dev_sigma"] <= 1e-8 \
            and extra["hybrid_dev_u"] <= 1e-8
    return 0 if ok else 1


# -- study ----------------------------------------------------------------------


@dataclass
class StudyConfig:
    """Batch configuration; file format is one "key = value" pair per line."""

    l: int = 3
    k: int = 3
    levels: tuple = (4, 8, 16)
    mesh: str = "square"
    hybrid: bool = False
    postprocess: bool = True
    complexes: bool = False
    out: str = "results"
    seed: int = 0

    def validate(self):
        if self.k < 3:
            raise ValueError("need k >= 3")
        if self.l < self.k - 1:
            raise ValueError("need l >= k - 1")
        if len(self.levels) < 2:
            raise ValueError("need at least two levels to observe rates")

    @classmethod
    def from_file(cls, path) -> "StudyConfig":
        cfg = cls()
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key in ("l", "k", "seed"):
                cfg = replace(cfg, **{key: int(value)})
            elif key == "levels":
                cfg = replace(cfg, levels=tuple(_parse_int_list(value)))
            elif key in ("hybrid", "postprocess", "complexes"):
                cfg = replace(cfg, **{key: value.lower() in ("1", "true", "yes")})
            elif key in ("mesh", "out"):
                cfg = replace(cfg, **{key: value})
            else:
                raise ValueError(f"unknown config key {key!r}")
        return cfg


def run_study(config: StudyConfig) -> int:
    config.validate()
    case = default_case()
    outdir = Path(config.out)
    outdir.mkdir(parents=True, exist_ok=True)
    failures = []

    rows, extras = [], []
    for level in config.levels:
        mesh = _resolve_mesh(config.mesh, level)
        dofmap, system, sol, row, extra = _solve_once(
            mesh, config.l, config.k, case, config.hybrid, config.postprocess)
        rows.append(row)
        extras.append(extra)
        print(f"level {level}: h = {row.h:.4e}, unknowns = {row.dofs}, "
              f"residual = {extra['residual']:.2e}")
        if extra["residual"] > 1e-10:
            failures.append(f"solver residual at level {level}")
        if config.hybrid:
            if extra["hybrid_dev_sigma"] > 1e-8 or extra["hybrid_dev_u"] > 1e-8:
                failures.append(f"hybrid deviation at level {level}")

    header = _header(config.hybrid)
    lines = [",".join(header)]
    for row, extra in zip(rows, extras):
        lines.append(",".join(_row_cells(row, extra, config.hybrid)))
    (outdir / "errors.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    rate_cols = [c for c in ERROR_COLUMNS[2:]]
    lines = [",".join(["h_coarse", "h_fine"] + ["rate_" + c for c in rate_cols])]
    for h0, h1, rates in convergence_rates(rows):
        cells = [_fmt(h0), _fmt(h1)]
        cells += ["" if rates[c] is None else _fmt(rates[c]) for c in rate_cols]
        lines.append(",".join(cells))
    (outdir / "rates.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    if config.complexes:
        mesh = _resolve_mesh(config.mesh, config.levels[0]) \
            if config.mesh != "square" else _resolve_mesh("square", 2)
        for rep in (check_poly_complexes(config.k, seed=config.seed),
                    check_local_fem_complexes(config.l, config.k, seed=config.seed),
                    check_global_fem_complex(mesh, config.l, config.k),
                    check_commuting_diagram(mesh, config.l, config.k,
                                            seed=config.seed)):
            if not rep.ok:
                failures.extend(f"{rep.title}: {c.description}"
                                for c in rep.failures())

    import scipy

    manifest = [f"package divdivfem {__version__}",
                f"numpy {np.__version__}", f"scipy {scipy.__version__}"]
    manifest += [f"{f.name} = {getattr(config, f.name)}" for f in fields(config)]
    (outdir / "manifest.txt").write_text("\n".join(manifest) + "\n",
                                         encoding="utf-8")

    if failures:
        for name in failures:
            print(f"FAILED: {name}")
        return 1
    print(f"study complete; artifacts in {outdir}")
    return 0


def cmd_study(args) -> int:
    config = StudyConfig.from_file(args.config) if args.config else StudyConfig()
    overrides = {}
    if args.l is not None:
        overrides["l"] = args.l
    if args.k is not None:
        overrides["k"] = args.k
    if args.levels is not None:
        overrides["levels"] = tuple(_parse_int_list(args.levels))
    if args.mesh is not None:
        overrides["mesh"] = args.mesh
    if args.out is not None:
        overrides["out"] = args.out
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.hybrid:
        overrides["hybrid"] = True
    if args.postprocess:
        overrides["postprocess"] = True
    if args.no_postprocess:
        overrides["postprocess"] = False
    if args.complexes:
        overrides["complexes"] = True
    config = replace(config, **overrides)
    return run_study(config)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="divdivfem",
        description="div-div conforming tensor elements and the mixed "
                    "clamped-plate solver")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("describe-element", help="print the element reference card")
    p.add_argument("--l", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--triangles", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_describe_element)

    p = sub.add_parser("verify-complexes",
                       help="rank-verify the polynomial and element sequences")
    p.add_argument("--k", default="3..5", help='"3", "3,4", or "3..5"')
    p.add_argument("--l", type=int, default=None)
    p.add_argument("--mesh", default="square:2", help='"square:n" or a mesh file')
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify_complexes)

    p = sub.add_parser("solve", help="one solve of the manufactured case")
    p.add_argument("--mesh", default="square:4", help='"square:n" or a mesh file')
    p.add_argument("--level", type=int, default=None,
                   help="refinements when --mesh is a file")
    p.add_argument("--l", type=int, default=3)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--hybrid", action="store_true")
    p.add_argument("--postprocess", action="store_true")
    p.add_argument("--dump-system", default=None, metavar="PREFIX",
                   help="write the sparse blocks as row/col/value text")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("study", help="convergence study with CSV artifacts")
    p.add_argument("--config", default=None, help="key = value file")
    p.add_argument("--l", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--levels", default=None, help='"4,8,16" or "2..5"')
    p.add_argument("--mesh", default=None,
                   help='"square" for the unit square family, or a mesh file')
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--hybrid", action="store_true")
    p.add_argument("--postprocess", action="store_true")
    p.add_argument("--no-postprocess", action="store_true")
    p.add_argument("--complexes", action="store_true")
    p.set_defaults(func=cmd_study)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
