"""Configuration-driven command-line driver.

Subcommands: ``solve`` (one boundary-domain solve), ``verify`` (one of the
identity suites), ``convergence`` (refinement sweep).  Configuration is a
plain ``key = value`` text file; every tolerance used in reports is written
next to the measured value, and identical configurations produce
bit-identical output files.

Exit codes: 0 success, 1 numeric failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import bdie, linalg, verify
from .coeff import (
    COEFFICIENT_PRESETS,
    SOLUTION_PRESETS,
    make_manufactured,
    preset_coefficient,
)
from .errors import ConfigurationError, SingularMatrixError
from .mesh import dump_mesh, generate_cube_mesh, generate_sphere_boundary
from .quadrature import QuadConfig

_DOMAINS = ("cube", "sphere_boundary")
_SOLVERS = ("lu", "gmres")
_SUITES = ("jumps", "green", "relations", "reduction")


@dataclass(frozen=True)
class RunConfig:
    domain: str = "cube"
    refinement: int = 2
    coefficient: str = "exp_x3"
    problem: str = "x1_squared"  # solution preset name, "zero", or "raw"
    dirichlet_value: float = 0.0  # raw constant data for problem = raw
    neumann_value: float = 0.0
    solver: str = "lu"
    seed: int = 0
    jump_level: int = 3
    surface_order: int = 4
    surface_singular_order: int = 6
    volume_order: int = 2
    volume_singular_order: int = 4
    near_ratio: float = 0.5
    dump_mesh: bool = False
    dump_system: bool = False

    def quad_config(self) -> QuadConfig:
        return QuadConfig(
            surface_order=self.surface_order,
            surface_singular_order=self.surface_singular_order,
            volume_order=self.volume_order,
            volume_singular_order=self.volume_singular_order,
            near_ratio=self.near_ratio,
        )


_INT_KEYS = {"refinement", "seed", "jump_level", "surface_order", "surface_singular_order", "volume_order", "volume_singular_order"}
_FLOAT_KEYS = {"near_ratio", "dirichlet_value", "neumann_value"}
_BOOL_KEYS = {"dump_mesh", "dump_system"}


def parse_config(path) -> RunConfig:
    """Read a key = value file; unknown keys and bad values are errors."""
    known = {f.name for f in fields(RunConfig)}
    values = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigurationError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            if key in _INT_KEYS:
                values[key] = int(value)
            elif key in _FLOAT_KEYS:
                values[key] = float(value)
            elif key in _BOOL_KEYS:
                if value.lower() not in ("true", "false", "0", "1"):
                    raise ValueError(value)
                values[key] = value.lower() in ("true", "1")
            else:
                values[key] = value
        except ValueError as exc:
            raise ConfigurationError(f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
    return validate_config(RunConfig(**values))


def validate_config(config: RunConfig) -> RunConfig:
    if config.domain not in _DOMAINS:
        raise ConfigurationError(f"domain must be one of {_DOMAINS}, got {config.domain!r}")
    if config.refinement < 1:
        raise ConfigurationError("refinement must be >= 1")
    if config.coefficient not in COEFFICIENT_PRESETS:
        raise ConfigurationError(
            f"coefficient must be one of {COEFFICIENT_PRESETS}, got {config.coefficient!r}"
        )
    if config.problem not in ("zero", "raw") and config.problem not in SOLUTION_PRESETS:
        raise ConfigurationError(
            f"problem must be 'zero', 'raw' or one of {SOLUTION_PRESETS}, got {config.problem!r}"
        )
    if config.solver not in _SOLVERS:
        raise ConfigurationError(f"solver must be one of {_SOLVERS}, got {config.solver!r}")
    return config


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _build_mesh(config: RunConfig):
    if config.domain == "cube":
        return generate_cube_mesh(config.refinement)
    return generate_sphere_boundary(config.refinement, "bottom_cap_dirichlet")


def _build_problem(config: RunConfig):
    if config.problem in ("zero", "raw"):
        return None
    return make_manufactured(config.coefficient, config.problem)


def _raw_data(config: RunConfig, mesh):
    phi0 = lambda p: np.full(len(p), config.dirichlet_value)
    psi0 = lambda p: np.full(len(p), config.neumann_value)
    return bdie.extend_boundary_data(mesh, phi0, psi0)


def cmd_solve(config: RunConfig, out_dir: Path) -> int:
    mesh = _build_mesh(config)
    problem = _build_problem(config)
    cfg = config.quad_config()
    out_dir.mkdir(parents=True, exist_ok=True)

    if config.domain == "sphere_boundary":
        if config.coefficient != "constant_one":
            raise ConfigurationError(
                "coefficient: boundary-only solves use the Laplace reduction and need constant_one"
            )
        A, system = bdie.assemble_laplace_bie(mesh, preset_coefficient("constant_one"), cfg)
        if problem is None:
            data = (
                _raw_data(config, mesh)
                if config.problem == "raw"
                else bdie.extend_boundary_data(
                    mesh, lambda p: np.zeros(len(p)), lambda p: np.zeros(len(p))
                )
            )
            f = None
        else:
            data = bdie.boundary_data_from_problem(mesh, problem)
            probe = problem.source_f(mesh.vertices)
            if np.abs(probe).max() > 1e-13:
                raise ConfigurationError(
                    "problem: boundary-only solves need a source-free (harmonic) problem"
                )
            f = None
        rhs = bdie.laplace_bie_rhs(system, f, data)
        x = linalg.lu_solve(A, rhs)
        residual = float(np.abs(A @ x - rhs).max())
        dofs = system.dofs
        summary = {
            "domain": config.domain,
            "refinement": config.refinement,
            "n_dof": len(x),
            "n_psi": dofs.n_psi,
            "n_phi": dofs.n_phi,
            "solution_norm_inf": float(np.abs(x).max()) if len(x) else 0.0,
            "residual_inf": residual,
            "condition_estimate": linalg.condition_estimate(A),
        }
        blocks = [("psi", np.arange(dofs.n_psi), x[: dofs.n_psi]), ("phi", np.arange(dofs.n_phi), x[dofs.n_psi :])]
    else:
        data = _raw_data(config, mesh) if config.problem == "raw" else None
        report = verify.run_solve(
            mesh, problem, cfg, solver=config.solver, data=data,
            coefficient=preset_coefficient(config.coefficient),
        )
        dofs = report.system.dofs
        summary = {
            "domain": config.domain,
            "refinement": config.refinement,
            "n_dof": dofs.n_total,
            "n_u": dofs.n_u,
            "n_psi": dofs.n_psi,
            "n_phi": dofs.n_phi,
            "solution_norm_inf": float(np.abs(report.x).max()) if dofs.n_total else 0.0,
            "residual_inf": report.residual,
            "condition_estimate": report.condition,
        }
        if report.iterations is not None:
            summary["gmres_iterations"] = report.iterations
        for key, value in sorted(report.errors.items()):
            summary[key] = value
        x = report.x
        blocks = [
            ("u", dofs.interior, x[dofs.slice_u]),
            ("psi", dofs.psi_panels, x[dofs.slice_psi]),
            ("phi", dofs.phi_vertices, x[dofs.slice_phi]),
        ]
        if config.dump_system:
            _write_csv(
                out_dir / "matrix.txt",
                [f"c{j}" for j in range(dofs.n_total)],
                report.system.matrix,
            )
            _write_csv(out_dir / "rhs.txt", ["rhs"], [[v] for v in report.system.rhs])

    _write_csv(out_dir / "summary.csv", list(summary), [list(summary.values())])
    rows = [(name, int(idx), val) for name, ids, vals in blocks for idx, val in zip(ids, vals)]
    _write_csv(out_dir / "solution.csv", ["block", "index", "value"], rows)
    if config.dump_mesh:
        dump_mesh(mesh, out_dir / "mesh.txt")
    for key, value in summary.items():
        print(f"{key} = {_fmt(value)}")
    return 0


def cmd_verify(config: RunConfig, suite: str, out_dir: Path) -> int:
    cfg = config.quad_config()
    if suite == "jumps":
        rows = verify.jump_suite(
            level=config.jump_level,
            coefficient=config.coefficient if config.coefficient != "constant_one" else "linear_half_x3",
            cfg=replace(cfg, surface_order=max(cfg.surface_order, 6)),
        )
    elif suite == "green":
        rows = verify.green_suite(n=config.refinement if config.refinement >= 2 else 4, cfg=cfg)
    elif suite == "relations":
        rows = verify.relations_suite(seed=config.seed, cfg=cfg)
    elif suite == "reduction":
        rows = verify.reduction_suite(n=config.refinement, cfg=cfg)
    else:
        raise ConfigurationError(f"suite must be one of {_SUITES}, got {suite!r}")
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(
        out_dir / "report.csv",
        ["check", "value", "tolerance", "passed"],
        [(r.name, r.value, r.tolerance, r.passed) for r in rows],
    )
    width = max(len(r.name) for r in rows)
    for r in rows:
        print(f"{r.name:{width}s}  {r.value:12.5e}  tol {r.tolerance:12.5e}  {'pass' if r.passed else 'FAIL'}")
    return 0 if verify.all_passed(rows) else 1


def cmd_convergence(config: RunConfig, levels, out_dir: Path) -> int:
    if len(levels) < 2:
        raise ConfigurationError("convergence needs at least two refinement levels")
    problem = _build_problem(config)
    if problem is None:
        raise ConfigurationError("convergence needs a manufactured problem, not 'zero'")
    if config.domain != "cube":
        raise ConfigurationError("convergence sweeps run on the cube domain")
    rows, orders = verify.convergence_study(problem, levels, config.quad_config(), config.solver)
    out_dir.mkdir(parents=True, exist_ok=True)
    header = [
        "n", "h", "n_dof", "u_l2_rel", "u_max_rel", "trace_l2_rel",
        "conormal_l2_rel", "residual", "condition", "exact_triple_residual",
    ]
    table = [
        (r.n, r.h, r.n_dof, r.u_l2_rel, r.u_max_rel, r.trace_l2_rel,
         r.conormal_l2_rel, r.residual, r.condition, r.exact_triple_residual)
        for r in rows
    ]
    order_row = ["order", "", "", *(orders[k][-1] for k in ("u_l2_rel", "u_max_rel", "trace_l2_rel", "conormal_l2_rel")), "", "", orders["exact_triple_residual"][-1]]
    _write_csv(out_dir / "convergence.csv", header, table + [order_row])
    for line in table:
        print(",".join(_fmt(v) for v in line))
    print("observed order (u, L2):", " ".join(f"{o:.3f}" for o in orders["u_l2_rel"]))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="bdie3d", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("solve", "verify", "convergence"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None, help="key = value configuration file")
        p.add_argument("--out", type=Path, default=Path("bdie3d-out"), help="output directory")
        if name == "verify":
            p.add_argument("--suite", choices=_SUITES, required=True)
        if name == "convergence":
            p.add_argument("--levels", type=str, required=True, help="comma-separated, e.g. 2,4,8")
    args = parser.parse_args(argv)

    try:
        config = parse_config(args.config) if args.config else RunConfig()
        if args.command == "solve":
            return cmd_solve(config, args.out)
        if args.command == "verify":
            return cmd_verify(config, args.suite, args.out)
        levels = [int(tok) for tok in args.levels.split(",") if tok.strip()]
        return cmd_convergence(config, levels, args.out)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (SingularMatrixError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
