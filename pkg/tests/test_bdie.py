import numpy as np
import pytest

from bdie3d import bdie, linalg
from bdie3d.coeff import make_manufactured, preset_coefficient
from bdie3d.mesh import (
    BOUNDARY_D,
    BOUNDARY_N,
    INTERFACE,
    generate_cube_mesh,
    generate_sphere_boundary,
    triangle_areas,
    triangle_centroids,
)
from bdie3d.potentials import (
    BoundaryDensity,
    boundary_double_layer,
    boundary_single_layer,
    double_layer,
    nodal_density,
    panel_density,
    remainder_potential,
    single_layer,
)
from bdie3d.quadrature import QuadConfig
from bdie3d.verify import reduction_suite, run_solve

ONE = preset_coefficient("constant_one")
EXP = preset_coefficient("exp_x3")


def zeros(p):
    return np.zeros(p.shape[:-1])


@pytest.fixture(scope="module")
def cube2():
    return generate_cube_mesh(2)


@pytest.fixture(scope="module")
def manufactured():
    return make_manufactured("exp_x3", "x1_squared")


@pytest.fixture(scope="module")
def system2(cube2, manufactured):
    return bdie.assemble_M12(cube2, manufactured.coefficient, QuadConfig())


# ---------------------------------------------------------------------------
# boundary data extension


def test_extend_zero_data_is_zero(cube2):
    data = bdie.extend_boundary_data(cube2, zeros, zeros)
    assert np.all(data.Phi0_ext == 0.0)
    assert np.all(data.Psi0_ext == 0.0)


def test_extension_matches_data_and_restricts_back(cube2, manufactured):
    data = bdie.boundary_data_from_problem(cube2, manufactured)
    v = cube2.vertices
    d_vertices = np.flatnonzero(
        (cube2.vertex_class == BOUNDARY_D) | (cube2.vertex_class == INTERFACE)
    )
    # bottom-face values match x1^2, Neumann interior vertices carry zero
    assert np.abs(data.Phi0_ext[d_vertices] - v[d_vertices, 0] ** 2).max() == 0.0
    free = cube2.vertex_class == BOUNDARY_N
    assert np.all(data.Phi0_ext[free] == 0.0)
    # restriction round-trip is exact
    assert np.array_equal(data.Phi0_ext[d_vertices], data.phi0)
    n_panels = cube2.triangle_part == 1
    assert np.array_equal(data.Psi0_ext[n_panels], data.psi0)
    assert np.all(data.Psi0_ext[~n_panels] == 0.0)


def test_extension_rejects_wrong_lengths(cube2):
    with pytest.raises(ValueError):
        bdie.extend_boundary_data(cube2, np.zeros(3), zeros)


# ---------------------------------------------------------------------------
# right-hand side


def test_rhs_zero_data_gives_zero(system2):
    data = bdie.extend_boundary_data(system2.mesh, zeros, zeros)
    F0_int, F0_trc = bdie.assemble_rhs_F0(system2, None, data)
    assert np.all(F0_int == 0.0)
    assert np.all(F0_trc == 0.0)


def test_rhs_gauss_integral_on_ball():
    # a=1, f=0, Psi0=0 and Phi0=1 on the whole sphere boundary: the interior
    # value of F0 = -W_Delta(1) is +1
    from bdie3d.mesh import generate_ball_mesh

    ball = generate_ball_mesh(2)
    system = bdie.assemble_M12(ball, ONE, QuadConfig())
    nv = len(ball.vertices)
    Phi0 = np.zeros(nv)
    Phi0[ball.vertex_class != 0] = 1.0
    data = bdie.BoundaryData(
        phi0=np.zeros(0),
        psi0=np.zeros((ball.triangle_part == 1).sum()),
        Phi0_ext=Phi0,
        Psi0_ext=np.zeros(len(ball.boundary_triangles)),
    )
    F0_int, _ = bdie.assemble_rhs_F0(system, None, data)
    assert abs(F0_int[0] - 1.0) <= 0.01  # the center vertex is interior


# ---------------------------------------------------------------------------
# system assembly


def test_constant_coefficient_structure(cube2):
    system = bdie.assemble_M12(cube2, ONE, QuadConfig())
    dofs = system.dofs
    assert np.array_equal(system.matrix[dofs.slice_u, dofs.slice_u], np.eye(dofs.n_u))
    assert np.abs(system.R_int).max() == 0.0
    assert np.abs(system.R_bnd).max() == 0.0


def test_n1_cube_has_no_interior_unknowns():
    mesh = generate_cube_mesh(1)
    system = bdie.assemble_M12(mesh, EXP, QuadConfig())
    dofs = system.dofs
    assert dofs.n_u == 0
    assert dofs.n_psi == 2 and dofs.n_phi == 4
    assert system.matrix.shape == (6, 6)
    data = bdie.extend_boundary_data(mesh, zeros, zeros)
    bdie.attach_rhs(system, None, data)
    x = linalg.lu_solve(system.matrix, system.rhs)
    assert np.all(x == 0.0)


def test_system_is_square_and_finite(system2):
    dofs = system2.dofs
    assert system2.matrix.shape == (dofs.n_total, dofs.n_total)
    assert np.all(np.isfinite(system2.matrix))


def test_matrix_rows_match_pointwise_operators(cube2, manufactured, system2):
    """Matrix action on the exact interpolant reproduces the collocated
    operator values computed with the pointwise evaluators at finer
    quadrature (matrix-free oracle).

    The operator applies V to psi and W to phi (the unknown parts only);
    only the remainder sees the full trace, whose known part is added back.
    """
    cfg_fine = QuadConfig(surface_order=6, volume_order=4, volume_singular_order=8, near_ratio=1.0)
    data = bdie.boundary_data_from_problem(cube2, manufactured)
    x = bdie.interpolate_exact_triple(system2, manufactured, data)
    sol = bdie.split_solution(system2, x, data)
    dofs = system2.dofs
    coeff = manufactured.coefficient

    lhs = system2.matrix @ x
    lhs[: dofs.n_u] += system2.R_int @ data.Phi0_ext
    lhs[dofs.n_u :] += system2.R_bnd @ data.Phi0_ext

    k = min(3, dofs.n_u)
    y_int = system2.interior_points[:k]
    direct = (
        sol.u.values[dofs.interior[:k]]
        + remainder_potential(cube2, sol.u, y_int, coeff, cfg_fine)
        - single_layer(cube2, sol.psi, y_int, coeff, cfg_fine)
        + double_layer(cube2, sol.phi, y_int, coeff, cfg_fine)
    )
    scale = np.abs(direct).max()
    assert np.abs(lhs[:k] - direct).max() <= 0.10 * scale

    m = dofs.n_psi
    y_bnd = system2.boundary_points[m : m + 3]  # vertex collocation points
    c = system2.trace_coeff[m : m + 3]
    phi_at = sol.phi.values[dofs.phi_vertices[:3]]
    direct_b = (
        c * phi_at
        + remainder_potential(cube2, sol.u, y_bnd, coeff, cfg_fine)
        - boundary_single_layer(cube2, sol.psi, y_bnd, coeff, cfg_fine)
        + boundary_double_layer(cube2, sol.phi, y_bnd, coeff, cfg_fine)
    )
    scale_b = np.abs(direct_b).max()
    assert np.abs(lhs[dofs.n_u + m : dofs.n_u + m + 3] - direct_b).max() <= 0.10 * scale_b


# ---------------------------------------------------------------------------
# solve, recovery, representation


def test_zero_data_solve_is_exactly_zero(cube2, manufactured, system2):
    data = bdie.extend_boundary_data(cube2, zeros, zeros)
    bdie.attach_rhs(system2, None, data)
    x = linalg.lu_solve(system2.matrix, system2.rhs)
    assert np.all(x == 0.0)


def test_recovered_cauchy_data(cube2, manufactured, system2):
    data = bdie.boundary_data_from_problem(cube2, manufactured)
    bdie.attach_rhs(system2, manufactured.source_f, data)
    x = linalg.lu_solve(system2.matrix, system2.rhs)
    sol = bdie.split_solution(system2, x, data)
    trace, conormal = bdie.recover_cauchy_data(system2, sol, data)
    dofs = system2.dofs
    d_vertices = np.flatnonzero(
        (cube2.vertex_class == BOUNDARY_D) | (cube2.vertex_class == INTERFACE)
    )
    # on Dirichlet vertices phi vanishes, so the trace is the given data
    assert np.array_equal(trace[d_vertices], data.Phi0_ext[d_vertices])
    # recovered data approximates the exact Cauchy data
    u_exact = manufactured.exact_u(cube2.vertices)
    assert np.abs(trace[dofs.phi_vertices] - u_exact[dofs.phi_vertices]).max() <= 0.1
    cent = triangle_centroids(cube2)[dofs.psi_panels]
    nrm = cube2.triangle_normal[dofs.psi_panels]
    t_exact = manufactured.coefficient.value(cent) * np.sum(
        manufactured.exact_grad_u(cent) * nrm, axis=-1
    )
    assert np.abs(conormal[dofs.psi_panels] - t_exact).max() <= 0.2


def test_zero_triple_recovers_zero(cube2, system2):
    data = bdie.extend_boundary_data(cube2, zeros, zeros)
    x = np.zeros(system2.dofs.n_total)
    sol = bdie.split_solution(system2, x, data)
    trace, conormal = bdie.recover_cauchy_data(system2, sol, data)
    assert np.all(trace == 0.0) and np.all(conormal == 0.0)


def test_representation_formula_reproduces_interior_values(manufactured):
    # exact interpolated Cauchy data isolates the formula from solve error
    mesh = generate_cube_mesh(3)
    system = bdie.assemble_M12(mesh, manufactured.coefficient, QuadConfig())
    data = bdie.boundary_data_from_problem(mesh, manufactured)
    x = bdie.interpolate_exact_triple(system, manufactured, data)
    sol = bdie.split_solution(system, x, data)
    y = np.array([[0.41, 0.52, 0.47], [0.3, 0.6, 0.55]])
    vals = bdie.representation_formula(system, sol, data, manufactured.source_f, y)
    exact = manufactured.exact_u(y)
    assert np.abs(vals - exact).max() <= 0.05 * max(1.0, np.abs(exact).max())


def test_representation_constant_identity(cube2):
    # u = 1 with any coefficient: zero source, zero conormal, unit trace
    system = bdie.assemble_M12(cube2, EXP, QuadConfig())
    nv = len(cube2.vertices)
    Phi0 = np.where(cube2.vertex_class != 0, 1.0, 0.0)
    data = bdie.BoundaryData(
        phi0=Phi0[(cube2.vertex_class == BOUNDARY_D) | (cube2.vertex_class == INTERFACE)],
        psi0=np.zeros((cube2.triangle_part == 1).sum()),
        Phi0_ext=Phi0,
        Psi0_ext=np.zeros(len(cube2.boundary_triangles)),
    )
    u_full = np.ones(nv)
    sol = bdie.SolutionTriple(
        u=bdie.VolumeDensity(values=u_full),
        psi=BoundaryDensity("panel", "dirichlet", np.zeros(len(cube2.boundary_triangles))),
        phi=BoundaryDensity("nodal", "neumann", np.zeros(nv)),
    )
    val = bdie.representation_formula(system, sol, data, None, np.array([0.5, 0.5, 0.5]))
    assert abs(val - 1.0) <= 5e-2


def test_representation_rejects_exterior_points(cube2, manufactured, system2):
    data = bdie.extend_boundary_data(cube2, zeros, zeros)
    sol = bdie.split_solution(system2, np.zeros(system2.dofs.n_total), data)
    with pytest.raises(ValueError):
        bdie.representation_formula(system2, sol, data, None, np.array([2.0, 0.0, 0.0]))


# ---------------------------------------------------------------------------
# third Green identity


def test_third_green_constant_field_on_sphere():
    sph = generate_sphere_boundary(3)
    probes = np.array([[0.0, 0.0, 0.0], [0.3, -0.2, 0.1]])
    res = bdie.third_green_residual(
        sph, ONE, lambda p: np.ones(p.shape[:-1]), lambda p: np.zeros(p.shape), None, probes
    )
    assert res <= 5e-2


def test_third_green_constant_field_on_cube_variable_coefficient():
    lin = preset_coefficient("linear_half_x3")
    cube = generate_cube_mesh(4)
    probes = cube.vertices[cube.vertex_class == 0]
    res = bdie.third_green_residual(
        cube, lin, lambda p: np.ones(p.shape[:-1]), lambda p: np.zeros(p.shape), None, probes
    )
    assert res <= 5e-2


def test_third_green_manufactured_residual_decreases(manufactured):
    probes = np.array([[0.5, 0.5, 0.5], [0.25, 0.5, 0.75]])
    res = []
    for n in (2, 4):
        mesh = generate_cube_mesh(n)
        res.append(
            bdie.third_green_residual(
                mesh,
                manufactured.coefficient,
                manufactured.exact_u,
                manufactured.exact_grad_u,
                manufactured.source_f,
                probes,
            )
        )
    assert res[1] <= res[0] / 1.5


def test_third_green_boundary_only_requires_compatible_fields():
    sph = generate_sphere_boundary(2)
    with pytest.raises(ValueError):
        bdie.third_green_residual(
            sph, EXP, lambda p: np.ones(p.shape[:-1]), lambda p: np.zeros(p.shape), None,
            np.zeros((1, 3)),
        )


# ---------------------------------------------------------------------------
# constant-coefficient reduction


def test_reduction_suite_passes():
    rows = reduction_suite(n=2)
    for row in rows:
        assert row.passed, f"{row.name}: {row.value} > {row.tolerance}"


def test_laplace_bie_rejects_variable_coefficients(cube2):
    from bdie3d.errors import ConfigurationError

    with pytest.raises(ConfigurationError):
        bdie.assemble_laplace_bie(cube2, EXP, QuadConfig())


def test_laplace_bie_dirichlet_dominant_sphere():
    """Harmonic field on the sphere with an artificial cap partition: the
    solved conormal density approximates the outward normal component."""
    problem = make_manufactured("constant_one", "x3")
    sph = generate_sphere_boundary(3, "bottom_cap_dirichlet")
    A, system = bdie.assemble_laplace_bie(sph, ONE, QuadConfig())
    data = bdie.boundary_data_from_problem(sph, problem)
    rhs = bdie.laplace_bie_rhs(system, None, data)
    x = linalg.lu_solve(A, rhs)
    dofs = system.dofs
    nrm = sph.triangle_normal[dofs.psi_panels]
    areas = triangle_areas(sph)[dofs.psi_panels]
    psi = x[: dofs.n_psi]
    exact = nrm[:, 2]
    rel = np.sqrt(np.sum(areas * (psi - exact) ** 2) / np.sum(areas * exact**2))
    assert rel <= 0.15


def test_exact_triple_residual_decreases(manufactured):
    res = []
    for n in (2, 4):
        mesh = generate_cube_mesh(n)
        system = bdie.assemble_M12(mesh, manufactured.coefficient, QuadConfig())
        data = bdie.boundary_data_from_problem(mesh, manufactured)
        bdie.attach_rhs(system, manufactured.source_f, data)
        x = bdie.interpolate_exact_triple(system, manufactured, data)
        res.append(np.abs(system.matrix @ x - system.rhs).max())
    assert res[1] <= res[0] / 1.5


def test_run_solve_reports_errors(cube2, manufactured):
    report = run_solve(cube2, manufactured, QuadConfig())
    assert report.errors["u_l2_rel"] <= 0.2
    assert report.residual <= 1e-10 * np.abs(report.system.matrix).max()
    assert report.condition > 1.0
