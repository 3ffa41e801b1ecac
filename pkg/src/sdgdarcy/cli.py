"""Command line front end: run benchmarks, list them, audit meshes.

SDG_THREADS caps the BLAS/OpenMP thread pools.  The variables must be in
the environment before numpy loads, so they are set at import time; a
process that imported numpy earlier is unaffected (best effort).
"""

from __future__ import annotations

import os

if os.environ.get("SDG_THREADS"):
    for _var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
        "VECLIB_MAXIMUM_THREADS",
    ):
        os.environ.setdefault(_var, os.environ["SDG_THREADS"])

import argparse
import json
import math
import sys
from dataclasses import dataclass

from . import io as artifacts
from .adaptivity import ADAPTIVE, UNIFORM, AmrConfig, amr_loop
from .benchmarks import BENCHMARKS, get_benchmark
from .errors import ConfigError, IoError, MeshError, SingularK, SolverError
from .geometry import FRACTURE, build_initial_mesh, check_regularity

_CONFIG_TYPES = {
    "benchmark": str,
    "k": int,
    "mode": str,
    "theta": (int, float),
    "max_dofs": int,
    "max_iterations": int,
    "h0": (int, float),
    "out": str,
    "export_fields": bool,
    "dump_system": bool,
    "seed": int,
}


@dataclass(frozen=True)
class RunConfig:
    """Validated inputs of one `run` invocation."""

    benchmark: str
    k: int = 1
    mode: str = ADAPTIVE
    theta: float = 0.5
    max_dofs: int = 200_000
    max_iterations: int = 30
    h0: float = None  # None: the benchmark's default mesh size
    out: str = "out"
    export_fields: bool = False
    dump_system: bool = False
    seed: int = 0  # reserved for test utilities


def load_config(path) -> dict:
    """Parse a JSON config file; unknown or mistyped keys are rejected."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from err
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    for key, value in doc.items():
        if key not in _CONFIG_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        want = _CONFIG_TYPES[key]
        bad = isinstance(value, bool) and want is not bool
        if bad or not isinstance(value, want):
            raise ConfigError(
                f"config key {key!r} has the wrong type: {type(value).__name__}"
            )
    return doc


def _resolve_run_config(args) -> RunConfig:
    doc = load_config(args.config) if args.config else {}
    overrides = {
        "benchmark": args.benchmark,
        "k": args.k,
        "mode": args.mode,
        "theta": args.theta,
        "max_dofs": args.max_dofs,
        "out": args.out,
        "export_fields": args.export_fields,
        "dump_system": args.dump_system,
    }
    for key, value in overrides.items():
        if value is not None:
            doc[key] = value
    if "benchmark" not in doc:
        raise ConfigError("no benchmark selected; pass --benchmark or a config file")
    return RunConfig(**doc)


def _exporter(cfg: RunConfig):
    def callback(record, mesh, sol, bd, system):
        tag = f"{record.iteration:04d}"
        if cfg.export_fields:
            artifacts.export_mesh_json(mesh, os.path.join(cfg.out, f"mesh_{tag}.json"))
            artifacts.export_solution(mesh, sol, os.path.join(cfg.out, f"fields_{tag}"))
        if cfg.dump_system:
            artifacts.dump_system(system, os.path.join(cfg.out, f"system_{tag}.txt"))

    return callback


def _cmd_run(args) -> int:
    cfg = _resolve_run_config(args)
    spec, exact, h_default = get_benchmark(cfg.benchmark)
    amr = AmrConfig(
        theta=float(cfg.theta),
        mode=cfg.mode,
        max_dofs=cfg.max_dofs,
        max_iterations=cfg.max_iterations,
        k=cfg.k,
    )
    h0 = float(cfg.h0) if cfg.h0 is not None else h_default
    mesh = build_initial_mesh(spec.domain, h0)
    os.makedirs(cfg.out, exist_ok=True)
    callback = _exporter(cfg) if cfg.export_fields or cfg.dump_system else None
    hist = amr_loop(mesh, spec, amr, exact=exact, callback=callback)

    artifacts.write_history_csv(hist, os.path.join(cfg.out, "history.csv"))
    if hist.records and float(hist.column("eta").max()) > 0.0:
        artifacts.write_convergence_svg(
            hist, amr.k, os.path.join(cfg.out, "convergence.svg"), title=cfg.benchmark
        )
    for r in hist.records:
        err = "" if math.isnan(r.err_sdg) else f"  err={r.err_sdg:.4e}  EI={r.EI:.3f}"
        print(
            f"it {r.iteration:3d}  N={r.N:7d}  elements={r.n_elements:6d}"
            f"  eta={r.eta:.4e}{err}"
        )
    print(f"wrote {os.path.join(cfg.out, 'history.csv')}")
    if hist.failure is not None:
        print(f"halted: {hist.failure}", file=sys.stderr)
        return 1
    return 0


def _cmd_list(args) -> int:
    for name in BENCHMARKS:
        spec, exact, h0 = get_benchmark(name)
        tag = "exact solution" if exact is not None else "no exact solution"
        nf = len(spec.domain.fractures)
        print(f"{name:12s} h0={h0:<6g} {nf} fracture(s), {tag}")
    return 0


def _cmd_check(args) -> int:
    spec, exact, h0 = get_benchmark(args.benchmark)
    mesh = build_initial_mesh(spec.domain, h0)
    sub = mesh.subdivision  # raises if fracture alignment is inconsistent
    rep = check_regularity(mesh)
    nfr = sub.edges_of_kind(FRACTURE).size
    print(f"benchmark {args.benchmark}: {mesh.n_elements} elements, "
          f"{sub.n_triangles} triangles, {sub.n_edges} edges "
          f"({nfr} on fractures)")
    print(f"h in [{rep.h_min:.6g}, {rep.h_max:.6g}]  "
          f"rho_E={rep.rho_E:.4f}  rho_S={rep.rho_S:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="sdg-darcy",
        description="Staggered DG solver for Darcy flow in fractured media",
    )
    subs = p.add_subparsers(dest="command", required=True)

    run = subs.add_parser("run", help="run a benchmark and write artifacts")
    run.add_argument("--config", help="JSON config file (schema in the README)")
    run.add_argument("--benchmark", help="benchmark name (see list-benchmarks)")
    run.add_argument("--k", type=int, default=None, help="polynomial order (1 or 2)")
    run.add_argument("--mode", choices=(ADAPTIVE, UNIFORM), default=None)
    run.add_argument("--theta", type=float, default=None, help="Dorfler bulk fraction")
    run.add_argument("--max-dofs", type=int, default=None, dest="max_dofs")
    run.add_argument("--out", default=None, help="output directory (default: out)")
    run.add_argument(
        "--export-fields",
        action="store_const",
        const=True,
        default=None,
        dest="export_fields",
        help="write per-iteration mesh JSON and VTK field files",
    )
    run.add_argument(
        "--dump-system",
        action="store_const",
        const=True,
        default=None,
        dest="dump_system",
        help="write the reduced sparse system per iteration",
    )
    run.set_defaults(func=_cmd_run)

    ls = subs.add_parser("list-benchmarks", help="print the available benchmarks")
    ls.set_defaults(func=_cmd_list)

    chk = subs.add_parser("check", help="mesh construction and regularity audit")
    chk.add_argument("--benchmark", required=True)
    chk.set_defaults(func=_cmd_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (MeshError, SolverError, IoError, SingularK) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
