"""Verification suites for the identities behind the integral formulation.

Each suite returns a list of :class:`CheckRow` so the command-line driver and
the acceptance tests share one implementation.  Rows always carry the
tolerance they were checked against.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree

from . import bdie, linalg
from .coeff import (
    CoefficientField,
    ManufacturedProblem,
    make_manufactured,
    preset_coefficient,
)
from .mesh import (
    DomainMesh,
    NEUMANN,
    generate_cube_mesh,
    generate_sphere_boundary,
    triangle_centroids,
    triangle_diameters,
)
from .potentials import (
    NODAL,
    PANEL,
    boundary_adjoint_double_layer,
    boundary_double_layer,
    boundary_single_layer,
    double_layer,
    nodal_density,
    one_sided_conormal,
    one_sided_trace,
    panel_density,
    parametrix_newton,
    remainder_potential,
    single_layer,
    surface_operator_matrix,
    volume_operator_matrix,
)
from .quadrature import QuadConfig, gauss_tet, tet_batch_points


@dataclass(frozen=True)
class CheckRow:
    name: str
    value: float
    tolerance: float
    passed: bool


def _row(name: str, value: float, tol: float) -> CheckRow:
    return CheckRow(name, float(value), float(tol), bool(value <= tol))


def all_passed(rows) -> bool:
    return all(r.passed for r in rows)


# ---------------------------------------------------------------------------
# sample points


def fibonacci_directions(n: int) -> np.ndarray:
    """n well-spread unit directions (golden spiral)."""
    k = np.arange(n)
    z = 1.0 - 2.0 * (k + 0.5) / n
    r = np.sqrt(1.0 - z**2)
    golden = np.pi * (3.0 - np.sqrt(5.0))
    return np.column_stack([r * np.cos(golden * k), r * np.sin(golden * k), z])


def sphere_sample_panels(mesh: DomainMesh, n: int):
    """Panels nearest to n fixed directions: comparable across levels."""
    centroids = triangle_centroids(mesh)
    idx = cKDTree(centroids).query(fibonacci_directions(n))[1]
    return centroids[idx], mesh.triangle_normal[idx]


# ---------------------------------------------------------------------------
# jump relations (sphere)


def _jump_errors(level: int, coeff: CoefficientField, n_samples: int, cfg: QuadConfig):
    """Normalized errors of the four jump identities at one refinement level."""
    sph = generate_sphere_boundary(level)
    pts, nrm = sphere_sample_panels(sph, n_samples)

    def phi(p):
        return p[..., 2]

    psi = panel_density(sph, np.ones(len(sph.boundary_triangles)))
    phi_vals = phi(pts)
    dna = np.sum(coeff.grad(pts) * nrm, axis=-1)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        gpV, _ = one_sided_trace(sph, "single", psi, pts, nrm, "+", coeff, cfg)
        gmV, _ = one_sided_trace(sph, "single", psi, pts, nrm, "-", coeff, cfg)
        gpW, _ = one_sided_trace(sph, "double", phi, pts, nrm, "+", coeff, cfg)
        gmW, _ = one_sided_trace(sph, "double", phi, pts, nrm, "-", coeff, cfg)
        tpV, _ = one_sided_conormal(sph, "single", psi, pts, nrm, "+", coeff, cfg)
        tmV, _ = one_sided_conormal(sph, "single", psi, pts, nrm, "-", coeff, cfg)
        tpW, _ = one_sided_conormal(sph, "double", phi, pts, nrm, "+", coeff, cfg)
        tmW, _ = one_sided_conormal(sph, "double", phi, pts, nrm, "-", coeff, cfg)

    wop = boundary_double_layer(sph, phi, pts, coeff, cfg)
    errs = {
        "gammaV_continuity": np.abs(gpV - gmV).max() / np.abs(gpV).max(),
        "gammaW_jump": np.abs((gpW - gmW) + phi_vals).max() / np.abs(phi_vals).max(),
        "conormalV_jump": np.abs((tpV - tmV) - 1.0).max(),
        "conormalW_jump": np.abs((tpW - tmW) + dna * phi_vals).max()
        / np.abs(dna * phi_vals).max(),
        "traceW_formula_plus": np.abs(gpW - (-0.5 * phi_vals + wop)).max()
        / np.abs(phi_vals).max(),
        "traceW_formula_minus": np.abs(gmW - (0.5 * phi_vals + wop)).max()
        / np.abs(phi_vals).max(),
    }
    return errs


JUMP_IDENTITIES = ("gammaV_continuity", "gammaW_jump", "conormalV_jump", "conormalW_jump")


def jump_suite(
    level: int = 3,
    coefficient: str = "linear_half_x3",
    n_samples: int = 20,
    cfg: QuadConfig | None = None,
    tol: float = 5e-2,
    decrease_factor: float = 1.5,
    check_refinement: bool = True,
) -> list[CheckRow]:
    """Jump/trace identities of the layer potentials on the icosphere.

    One-sided values come from normal-offset evaluation with Richardson
    extrapolation; densities are phi = x3 (nodal) and psi = 1 (panel).
    """
    cfg = cfg or QuadConfig(surface_order=6)
    coeff = preset_coefficient(coefficient)
    errs = _jump_errors(level, coeff, n_samples, cfg)
    rows = [_row(f"L{level}:{k}", errs[k], tol) for k in JUMP_IDENTITIES]
    rows += [_row(f"L{level}:{k}", errs[k], tol) for k in errs if k not in JUMP_IDENTITIES]
    if check_refinement:
        errs2 = _jump_errors(level + 1, coeff, n_samples, cfg)
        rows += [_row(f"L{level + 1}:{k}", errs2[k], tol) for k in JUMP_IDENTITIES]
        for k in JUMP_IDENTITIES:
            # decrease by >= factor: check errs2 <= errs / factor
            rows.append(_row(f"decrease:{k}", errs2[k] * decrease_factor, errs[k]))
    return rows


# ---------------------------------------------------------------------------
# constant Green identity (cube)


def constant_green_residual(
    mesh: DomainMesh, coeff: CoefficientField, probes, cfg: QuadConfig
) -> float:
    """Max of |1 + R 1 + W 1| at interior probes (third Green identity for
    the constant field, which has zero source and conormal data)."""

    def one(p):
        return np.ones(p.shape[:-1])

    def zero_grad(p):
        return np.zeros(p.shape)

    return bdie.third_green_residual(mesh, coeff, one, zero_grad, None, probes, cfg)


def green_suite(
    n: int = 4,
    presets=("constant_one", "exp_x3", "quadratic_1px1sq"),
    cfg: QuadConfig | None = None,
    tol: float = 5e-2,
    check_refinement: bool = True,
) -> list[CheckRow]:
    """Constant Green identity on the cube, fixed probe set across levels."""
    cfg = cfg or QuadConfig()
    coarse = generate_cube_mesh(n)
    probes = coarse.vertices[coarse.vertex_class == 0]
    rows = []
    fine = generate_cube_mesh(2 * n) if check_refinement else None
    for name in presets:
        coeff = preset_coefficient(name)
        e_c = constant_green_residual(coarse, coeff, probes, cfg)
        rows.append(_row(f"n={n}:a={name}", e_c, tol))
        if fine is not None:
            e_f = constant_green_residual(fine, coeff, probes, cfg)
            rows.append(_row(f"decrease:a={name}", e_f, e_c))
    return rows


# ---------------------------------------------------------------------------
# relation-path versus direct-kernel-path oracles


def relations_suite(
    seed: int = 0,
    cfg: QuadConfig | None = None,
    surface_tol: float = 1e-10,
    volume_tol: float = 1e-6,
    n_points: int = 10,
) -> list[CheckRow]:
    """Every parametrix operator evaluated both ways at random points.

    The relation path goes through the Laplace-kernel operators with
    rescaled densities; the direct path integrates the parametrix kernels.
    Both use identical quadrature point sets.
    """
    cfg = cfg or QuadConfig()
    rng = np.random.default_rng(seed)
    coeff = preset_coefficient("exp_x3")
    rows = []

    cube = generate_cube_mesh(2)
    rho_vol = bdie.VolumeDensity(values=rng.uniform(-1.0, 1.0, len(cube.vertices)))
    pts_vol = rng.uniform(0.15, 0.85, (n_points, 3))
    for name, op in (("newton_potential", parametrix_newton), ("remainder_potential", remainder_potential)):
        rel = np.atleast_1d(op(cube, rho_vol, pts_vol, coeff, cfg, path="relation"))
        direct = np.atleast_1d(op(cube, rho_vol, pts_vol, coeff, cfg, path="direct"))
        scale = max(np.abs(direct).max(), 1e-30)
        rows.append(_row(name, np.abs(rel - direct).max() / scale, volume_tol))

    sph = generate_sphere_boundary(2)
    rho_nodal = nodal_density(sph, rng.uniform(-1.0, 1.0, len(sph.vertices)))
    rho_panel = panel_density(sph, rng.uniform(-1.0, 1.0, len(sph.boundary_triangles)))
    radii = np.concatenate([rng.uniform(0.3, 0.7, n_points // 2), rng.uniform(1.4, 2.5, n_points - n_points // 2)])
    pts_off = fibonacci_directions(n_points) * radii[:, None]
    for name, op, rho in (
        ("single_layer", single_layer, rho_panel),
        ("double_layer", double_layer, rho_nodal),
    ):
        rel = np.atleast_1d(op(sph, rho, pts_off, coeff, cfg, path="relation"))
        direct = np.atleast_1d(op(sph, rho, pts_off, coeff, cfg, path="direct"))
        scale = max(np.abs(direct).max(), 1e-30)
        rows.append(_row(name, np.abs(rel - direct).max() / scale, surface_tol))

    panel_ids = rng.choice(len(sph.boundary_triangles), n_points, replace=False)
    pts_on = triangle_centroids(sph)[panel_ids]
    nrm_on = sph.triangle_normal[panel_ids]
    for name, vals in (
        (
            "boundary_single_layer",
            (
                boundary_single_layer(sph, rho_panel, pts_on, coeff, cfg, path="relation"),
                boundary_single_layer(sph, rho_panel, pts_on, coeff, cfg, path="direct"),
            ),
        ),
        (
            "boundary_double_layer",
            (
                boundary_double_layer(sph, rho_nodal, pts_on, coeff, cfg, path="relation"),
                boundary_double_layer(sph, rho_nodal, pts_on, coeff, cfg, path="direct"),
            ),
        ),
        (
            "boundary_adjoint_double_layer",
            (
                boundary_adjoint_double_layer(sph, rho_panel, pts_on, nrm_on, coeff, cfg, path="relation"),
                boundary_adjoint_double_layer(sph, rho_panel, pts_on, nrm_on, coeff, cfg, path="direct"),
            ),
        ),
    ):
        rel, direct = (np.atleast_1d(v) for v in vals)
        scale = max(np.abs(direct).max(), 1e-30)
        rows.append(_row(name, np.abs(rel - direct).max() / scale, surface_tol))
    return rows


# ---------------------------------------------------------------------------
# constant-coefficient reduction


def reduction_suite(
    n: int = 2,
    cfg: QuadConfig | None = None,
    block_tol: float = 1e-14,
    solution_tol: float = 1e-6,
) -> list[CheckRow]:
    """a = 1: remainder blocks vanish, the system splits into the boundary
    integral equation, and the two solution paths agree at interior nodes."""
    cfg = cfg or QuadConfig()
    one = preset_coefficient("constant_one")
    mesh = generate_cube_mesh(n)
    problem = make_manufactured("constant_one", "x3")
    system = bdie.assemble_M12(mesh, one, cfg)
    data = bdie.boundary_data_from_problem(mesh, problem)
    bdie.attach_rhs(system, problem.source_f, data)
    dofs = system.dofs

    # remainder blocks through the kernel path (not the constant shortcut)
    targets = np.vstack([system.interior_points, system.boundary_points])
    R = volume_operator_matrix(mesh, one, cfg, "remainder", targets)
    rows = [_row("remainder_blocks_zero", np.abs(R).max(), block_tol)]

    # independently assembled BIE blocks match the system sub-blocks
    A_bie, bie_system = bdie.assemble_laplace_bie(mesh, one, cfg)
    sub = np.hstack(
        [
            system.matrix[dofs.n_u :, dofs.slice_psi],
            system.matrix[dofs.n_u :, dofs.slice_phi],
        ]
    )
    rows.append(_row("bie_subblock_match", np.abs(A_bie - sub).max(), block_tol))

    # full solve equals BIE solve + representation formula
    x_full = linalg.lu_solve(system.matrix, system.rhs)
    rhs_b = bdie.laplace_bie_rhs(bie_system, problem.source_f, data)
    x_b = linalg.lu_solve(A_bie, rhs_b)
    u_bie = bdie.laplace_representation(bie_system, x_b, problem.source_f, data)
    scale = max(np.abs(x_full[dofs.slice_u]).max(), 1e-30)
    rows.append(
        _row("solution_match_interior", np.abs(x_full[dofs.slice_u] - u_bie).max() / scale, solution_tol)
    )
    bnd = np.abs(np.concatenate([x_full[dofs.slice_psi], x_full[dofs.slice_phi]]) - x_b)
    rows.append(_row("solution_match_boundary", bnd.max() / max(np.abs(x_b).max(), 1e-30), solution_tol))

    # zero data gives the zero solution
    zero = bdie.extend_boundary_data(
        mesh, lambda p: np.zeros(len(p)), lambda p: np.zeros(len(p))
    )
    bdie.attach_rhs(system, None, zero)
    x0 = linalg.lu_solve(system.matrix, system.rhs)
    rows.append(_row("zero_data_zero_solution", np.abs(x0).max(), 1e-8))
    return rows


# ---------------------------------------------------------------------------
# solve driver, error norms and convergence studies


def volume_l2_error(mesh: DomainMesh, u_values: np.ndarray, exact_fn, order: int = 2):
    """Relative L2(volume) distance between a P1 field and a closed form."""
    rule = gauss_tet(order)
    verts = mesh.vertices[mesh.tetrahedra]
    pts, w = tet_batch_points(verts, rule)
    uh = np.einsum("qk,tk->tq", rule.points, u_values[mesh.tetrahedra])
    ue = exact_fn(pts)
    err = np.sqrt(np.sum(w * (uh - ue) ** 2))
    ref = np.sqrt(np.sum(w * ue**2))
    return err, err / max(ref, 1e-300)


def boundary_errors(system: bdie.BdieSystem, sol, data, problem: ManufacturedProblem):
    """L2 errors of the recovered Cauchy data against the exact one."""
    mesh = system.mesh
    trace, conormal = bdie.recover_cauchy_data(system, sol, data)
    areas = 0.5 * np.linalg.norm(
        np.cross(
            mesh.vertices[mesh.boundary_triangles[:, 1]] - mesh.vertices[mesh.boundary_triangles[:, 0]],
            mesh.vertices[mesh.boundary_triangles[:, 2]] - mesh.vertices[mesh.boundary_triangles[:, 0]],
        ),
        axis=1,
    )
    cent = triangle_centroids(mesh)
    nrm = mesh.triangle_normal
    t_exact = problem.coefficient.value(cent) * np.sum(problem.exact_grad_u(cent) * nrm, axis=-1)
    trace_at_centroids = trace[mesh.boundary_triangles].mean(axis=1)
    u_exact_cent = problem.exact_u(cent)
    err_trace = np.sqrt(np.sum(areas * (trace_at_centroids - u_exact_cent) ** 2))
    ref_trace = np.sqrt(np.sum(areas * u_exact_cent**2))
    err_con = np.sqrt(np.sum(areas * (conormal - t_exact) ** 2))
    ref_con = np.sqrt(np.sum(areas * t_exact**2))
    return {
        "trace_l2_rel": err_trace / max(ref_trace, 1e-300),
        "conormal_l2_rel": err_con / max(ref_con, 1e-300),
    }


@dataclass
class SolveReport:
    system: bdie.BdieSystem
    solution: bdie.SolutionTriple
    data: bdie.BoundaryData
    x: np.ndarray
    residual: float
    condition: float
    iterations: int | None
    errors: dict


def run_solve(
    mesh: DomainMesh,
    problem: ManufacturedProblem | None,
    cfg: QuadConfig | None = None,
    solver: str = "lu",
    estimate_condition: bool = True,
    data: bdie.BoundaryData | None = None,
    coefficient: CoefficientField | None = None,
) -> SolveReport:
    """Assemble, solve and post-process one boundary-domain problem.

    ``problem=None`` runs with the supplied raw boundary data (zero data
    when ``data`` is also None); error columns need a manufactured problem.
    """
    cfg = cfg or QuadConfig()
    coeff = problem.coefficient if problem else (coefficient or preset_coefficient("constant_one"))
    system = bdie.assemble_M12(mesh, coeff, cfg)
    if problem is None:
        if data is None:
            data = bdie.extend_boundary_data(
                mesh, lambda p: np.zeros(len(p)), lambda p: np.zeros(len(p))
            )
        f = None
    else:
        data = bdie.boundary_data_from_problem(mesh, problem)
        f = problem.source_f
    bdie.attach_rhs(system, f, data)
    iterations = None
    if solver == "lu":
        x = linalg.lu_solve(system.matrix, system.rhs)
    elif solver == "gmres":
        res = linalg.gmres_solve(system.matrix, system.rhs, tol=1e-10, max_iter=1000)
        if not res.converged:
            raise linalg.SingularMatrixError(
                f"gmres did not converge in {res.iterations} iterations"
            )
        x, iterations = res.x, res.iterations
    else:
        raise ValueError(f"unknown solver {solver!r}")
    residual = float(np.abs(system.matrix @ x - system.rhs).max())
    sol = bdie.split_solution(system, x, data)
    errors = {}
    if problem is not None:
        _, l2_rel = volume_l2_error(mesh, sol.u.values, problem.exact_u)
        scale = max(np.abs(problem.exact_u(mesh.vertices)).max(), 1e-300)
        errors = {
            "u_l2_rel": l2_rel,
            "u_max_rel": float(np.abs(sol.u.values - problem.exact_u(mesh.vertices)).max() / scale),
        }
        errors.update(boundary_errors(system, sol, data, problem))
    cond = linalg.condition_estimate(system.matrix) if estimate_condition else np.nan
    return SolveReport(system, sol, data, x, residual, cond, iterations, errors)


@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    h: float
    n_dof: int
    u_l2_rel: float
    u_max_rel: float
    trace_l2_rel: float
    conormal_l2_rel: float
    residual: float
    condition: float
    exact_triple_residual: float


def convergence_study(
    problem: ManufacturedProblem,
    levels,
    cfg: QuadConfig | None = None,
    solver: str = "lu",
) -> tuple[list[ConvergenceRow], dict]:
    """Solve on a sequence of cube refinements and report observed orders."""
    cfg = cfg or QuadConfig()
    rows = []
    for n in levels:
        mesh = generate_cube_mesh(int(n))
        report = run_solve(mesh, problem, cfg, solver)
        xe = bdie.interpolate_exact_triple(report.system, problem, report.data)
        triple_res = float(np.abs(report.system.matrix @ xe - report.system.rhs).max())
        rows.append(
            ConvergenceRow(
                n=int(n),
                h=1.0 / int(n),
                n_dof=report.system.dofs.n_total,
                u_l2_rel=report.errors["u_l2_rel"],
                u_max_rel=report.errors["u_max_rel"],
                trace_l2_rel=report.errors["trace_l2_rel"],
                conormal_l2_rel=report.errors["conormal_l2_rel"],
                residual=report.residual,
                condition=report.condition,
                exact_triple_residual=triple_res,
            )
        )
    orders = {}
    for field in ("u_l2_rel", "u_max_rel", "trace_l2_rel", "conormal_l2_rel", "exact_triple_residual"):
        errs = [getattr(r, field) for r in rows]
        ratios = [
            np.log2(errs[i] / errs[i + 1]) / np.log2(rows[i + 1].n / rows[i].n)
            for i in range(len(rows) - 1)
        ]
        orders[field] = ratios
    return rows, orders
