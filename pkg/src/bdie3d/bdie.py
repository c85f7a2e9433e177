"""Assembly and solution of the segregated boundary-domain collocation system.

The unknown vector stacks three blocks: the interior field values u at
interior mesh vertices, the conormal density psi (piecewise constant on
Dirichlet-part panels) and the trace density phi (piecewise linear at
Neumann-part vertices away from the interface).  Equation one is the
representation identity collocated at interior vertices; equation two is its
boundary trace collocated at Dirichlet panel centroids (paired with psi) and
free Neumann vertices (paired with phi).

The boundary trace of u is eliminated through the data segregation
``trace(u) = Phi0 + phi`` with ``Phi0`` the zero extension of the Dirichlet
data, so the remainder operator columns at Dirichlet/interface vertices move
to the right-hand side.  At polyhedron vertices the trace coefficient of the
double layer is the interior solid angle fraction (1/2 only at smooth
points), computed from the discrete Gauss integral; using the flat 1/2 there
would stall convergence on the cube's edges and corners.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .coeff import CoefficientField, ManufacturedProblem
from .errors import ConfigurationError
from .mesh import (
    DIRICHLET,
    INTERFACE,
    INTERIOR,
    NEUMANN,
    BOUNDARY_D,
    BOUNDARY_N,
    DomainMesh,
    triangle_centroids,
)
from .potentials import (
    BoundaryDensity,
    NODAL,
    PANEL,
    SUPPORT_D,
    SUPPORT_N,
    VolumeDensity,
    _ScaledDensity,
    double_layer,
    nodal_density,
    panel_density,
    parametrix_newton,
    remainder_potential,
    single_layer,
    solid_angle_fraction,
    surface_operator_matrix,
    volume_operator_matrix,
)
from .quadrature import QuadConfig, tet_barycentric


@dataclass(frozen=True)
class DofMap:
    """Index bookkeeping for the three solution blocks."""

    interior: np.ndarray  # vertex ids carrying u unknowns
    psi_panels: np.ndarray  # Dirichlet panel ids carrying psi unknowns
    phi_vertices: np.ndarray  # free Neumann vertex ids carrying phi unknowns

    @property
    def n_u(self) -> int:
        return len(self.interior)

    @property
    def n_psi(self) -> int:
        return len(self.psi_panels)

    @property
    def n_phi(self) -> int:
        return len(self.phi_vertices)

    @property
    def n_total(self) -> int:
        return self.n_u + self.n_psi + self.n_phi

    @property
    def slice_u(self):
        return slice(0, self.n_u)

    @property
    def slice_psi(self):
        return slice(self.n_u, self.n_u + self.n_psi)

    @property
    def slice_phi(self):
        return slice(self.n_u + self.n_psi, self.n_total)


def build_dof_map(mesh: DomainMesh) -> DofMap:
    interior = np.flatnonzero(mesh.vertex_class == INTERIOR)
    psi_panels = np.flatnonzero(mesh.triangle_part == DIRICHLET)
    phi_vertices = np.flatnonzero(mesh.vertex_class == BOUNDARY_N)
    return DofMap(interior, psi_panels, phi_vertices)


@dataclass(frozen=True)
class BoundaryData:
    """Given boundary data and its zero extensions to the whole boundary.

    ``Phi0_ext`` is nodal over all mesh vertices: the Dirichlet values at
    Dirichlet/interface vertices, zero elsewhere.  ``Psi0_ext`` is panel-wise:
    the Neumann values on Neumann panels, zero on Dirichlet panels.
    """

    phi0: np.ndarray  # values at Dirichlet/interface vertices (restriction)
    psi0: np.ndarray  # values at Neumann panels (restriction)
    Phi0_ext: np.ndarray  # (nv,) nodal zero extension
    Psi0_ext: np.ndarray  # (nf,) panel zero extension


def extend_boundary_data(mesh: DomainMesh, phi0_source, psi0_source) -> BoundaryData:
    """Zero extensions of Dirichlet data (nodal) and Neumann data (panel).

    ``phi0_source`` is a callable or values at the Dirichlet/interface
    vertices; ``psi0_source`` a callable (evaluated at panel centroids,
    normals available via the mesh) or values at Neumann panels.
    """
    d_vertices = np.flatnonzero(
        (mesh.vertex_class == BOUNDARY_D) | (mesh.vertex_class == INTERFACE)
    )
    n_panels = np.flatnonzero(mesh.triangle_part == NEUMANN)

    Phi0 = np.zeros(len(mesh.vertices))
    if callable(phi0_source):
        Phi0[d_vertices] = np.asarray(phi0_source(mesh.vertices[d_vertices]), dtype=float)
    else:
        vals = np.asarray(phi0_source, dtype=float)
        if vals.shape != d_vertices.shape:
            raise ValueError(
                f"need {len(d_vertices)} Dirichlet vertex values, got {vals.shape}"
            )
        Phi0[d_vertices] = vals

    Psi0 = np.zeros(len(mesh.boundary_triangles))
    if callable(psi0_source):
        cent = triangle_centroids(mesh)[n_panels]
        Psi0[n_panels] = np.asarray(psi0_source(cent), dtype=float)
    else:
        vals = np.asarray(psi0_source, dtype=float)
        if vals.shape != n_panels.shape:
            raise ValueError(f"need {len(n_panels)} Neumann panel values, got {vals.shape}")
        Psi0[n_panels] = vals

    return BoundaryData(Phi0[d_vertices].copy(), Psi0[n_panels].copy(), Phi0, Psi0)


def boundary_data_from_problem(mesh: DomainMesh, problem: ManufacturedProblem) -> BoundaryData:
    return extend_boundary_data(
        mesh, problem.exact_u, lambda cent: _conormal_at_centroids(mesh, problem, cent)
    )


def _conormal_at_centroids(mesh, problem, cent):
    # centroids arrive in Neumann-panel order; recover their normals
    n_panels = np.flatnonzero(mesh.triangle_part == NEUMANN)
    nrm = mesh.triangle_normal[n_panels]
    a = problem.coefficient.value(cent)
    return a * np.sum(problem.exact_grad_u(cent) * nrm, axis=-1)


@dataclass
class BdieSystem:
    """Assembled collocation system with its building blocks.

    The stored full operator blocks (columns over all vertices / panels)
    serve right-hand-side assembly, the Laplace reduction and the
    equivalence diagnostics without re-integration.
    """

    mesh: DomainMesh
    coeff: CoefficientField
    cfg: QuadConfig
    dofs: DofMap
    matrix: np.ndarray
    interior_points: np.ndarray
    boundary_points: np.ndarray
    trace_coeff: np.ndarray  # c(y) at boundary collocation points
    R_int: np.ndarray  # (n_u, nv) remainder block rows at interior nodes
    R_bnd: np.ndarray  # (n_psi+n_phi, nv)
    V_int: np.ndarray  # (n_u, nf) single-layer panel columns
    V_bnd: np.ndarray
    W_int: np.ndarray  # (n_u, nv) double-layer nodal columns
    W_bnd: np.ndarray
    rhs: np.ndarray | None = None


def assemble_M12(mesh: DomainMesh, coeff: CoefficientField, cfg: QuadConfig | None = None) -> BdieSystem:
    """Assemble the two-equation block matrix (no right-hand side yet).

    Boundary-only meshes are accepted for constant coefficients (the
    remainder vanishes and no interior unknowns exist), which is the
    boundary-integral reduction setting.
    """
    if not mesh.has_volume and not coeff.is_constant:
        raise ValueError("a variable-coefficient system needs a volume mesh")
    cfg = cfg or QuadConfig()
    dofs = build_dof_map(mesh)
    nv = len(mesh.vertices)

    interior_points = mesh.vertices[dofs.interior]
    centroids = triangle_centroids(mesh)[dofs.psi_panels]
    vertex_points = mesh.vertices[dofs.phi_vertices]
    boundary_points = np.vstack([centroids, vertex_points]) if dofs.n_psi + dofs.n_phi else np.zeros((0, 3))

    # trace coefficient: exactly 1/2 at panel centroids (smooth points),
    # solid angle fraction at mesh vertices
    c = np.empty(dofs.n_psi + dofs.n_phi)
    c[: dofs.n_psi] = 0.5
    if dofs.n_phi:
        c[dofs.n_psi :] = solid_angle_fraction(mesh, vertex_points, cfg)

    if coeff.is_constant:
        R_int = np.zeros((dofs.n_u, nv))
        R_bnd = np.zeros((len(boundary_points), nv))
    else:
        R_int = volume_operator_matrix(mesh, coeff, cfg, "remainder", interior_points) if dofs.n_u else np.zeros((0, nv))
        R_bnd = volume_operator_matrix(mesh, coeff, cfg, "remainder", boundary_points)

    nf = len(mesh.boundary_triangles)
    if dofs.n_u:
        V_int = surface_operator_matrix(mesh, coeff, cfg, "single", PANEL, interior_points, on_surface=False)
        W_int = surface_operator_matrix(mesh, coeff, cfg, "double", NODAL, interior_points, on_surface=False)
    else:
        V_int = np.zeros((0, nf))
        W_int = np.zeros((0, nv))
    V_bnd = surface_operator_matrix(mesh, coeff, cfg, "single", PANEL, boundary_points, on_surface=True)
    W_bnd = surface_operator_matrix(mesh, coeff, cfg, "double", NODAL, boundary_points, on_surface=True)

    n = dofs.n_total
    A = np.zeros((n, n))
    su, sp, sf = dofs.slice_u, dofs.slice_psi, dofs.slice_phi
    # equation one rows
    A[su, su] = np.eye(dofs.n_u) + R_int[:, dofs.interior]
    A[su, sp] = -V_int[:, dofs.psi_panels]
    A[su, sf] = R_int[:, dofs.phi_vertices] + W_int[:, dofs.phi_vertices]
    # equation two rows
    rows = slice(dofs.n_u, n)
    A[rows, su] = R_bnd[:, dofs.interior]
    A[rows, sp] = -V_bnd[:, dofs.psi_panels]
    A[rows, sf] = R_bnd[:, dofs.phi_vertices] + W_bnd[:, dofs.phi_vertices]
    A[range(dofs.n_u + dofs.n_psi, n), range(dofs.n_u + dofs.n_psi, n)] += c[dofs.n_psi :]

    return BdieSystem(
        mesh=mesh,
        coeff=coeff,
        cfg=cfg,
        dofs=dofs,
        matrix=A,
        interior_points=interior_points,
        boundary_points=boundary_points,
        trace_coeff=c,
        R_int=R_int,
        R_bnd=R_bnd,
        V_int=V_int,
        V_bnd=V_bnd,
        W_int=W_int,
        W_bnd=W_bnd,
    )


def _newton_source_terms(system: BdieSystem, f):
    """Parametrix Newton potential of the source at both collocation families."""
    mesh, coeff, cfg = system.mesh, system.coeff, system.cfg
    if f is None:
        return np.zeros(system.dofs.n_u), np.zeros(len(system.boundary_points))
    if not mesh.has_volume:
        raise ValueError("a nonzero source needs a volume mesh")
    pf_int = (
        np.atleast_1d(parametrix_newton(mesh, f, system.interior_points, coeff, cfg))
        if system.dofs.n_u
        else np.zeros(0)
    )
    pf_bnd = np.atleast_1d(parametrix_newton(mesh, f, system.boundary_points, coeff, cfg))
    return pf_int, pf_bnd


def _phi0_at_boundary_points(system: BdieSystem, data: BoundaryData) -> np.ndarray:
    """Nodal interpolation of the extended Dirichlet data at collocation points."""
    mesh, dofs = system.mesh, system.dofs
    tri = mesh.boundary_triangles[dofs.psi_panels]
    at_centroids = data.Phi0_ext[tri].mean(axis=1)
    at_vertices = data.Phi0_ext[dofs.phi_vertices]
    return np.concatenate([at_centroids, at_vertices])


def assemble_rhs_F0(system: BdieSystem, f, data: BoundaryData):
    """F0 at interior nodes and its trace at boundary collocation points.

    F0 combines the Newton potential of the source with the layer potentials
    of the extended boundary data; the trace uses the jump formula for the
    double layer with the local trace coefficient.
    """
    pf_int, pf_bnd = _newton_source_terms(system, f)
    F0_int = pf_int + system.V_int @ data.Psi0_ext - system.W_int @ data.Phi0_ext
    phi0_at = _phi0_at_boundary_points(system, data)
    F0_trc = (
        pf_bnd
        + system.V_bnd @ data.Psi0_ext
        - ((system.trace_coeff - 1.0) * phi0_at + system.W_bnd @ data.Phi0_ext)
    )
    return F0_int, F0_trc


def attach_rhs(system: BdieSystem, f, data: BoundaryData) -> BdieSystem:
    """Build the right-hand side for given source and boundary data."""
    F0_int, F0_trc = assemble_rhs_F0(system, f, data)
    phi0_at = _phi0_at_boundary_points(system, data)
    rhs1 = F0_int - system.R_int @ data.Phi0_ext
    rhs2 = F0_trc - phi0_at - system.R_bnd @ data.Phi0_ext
    system.rhs = np.concatenate([rhs1, rhs2])
    return system


@dataclass(frozen=True)
class SolutionTriple:
    """Interior field plus the segregated boundary densities."""

    u: VolumeDensity  # values over all mesh vertices (trace included)
    psi: BoundaryDensity  # panel density supported on the Dirichlet part
    phi: BoundaryDensity  # nodal density supported on the free Neumann part


def split_solution(system: BdieSystem, x: np.ndarray, data: BoundaryData) -> SolutionTriple:
    mesh, dofs = system.mesh, system.dofs
    u_full = data.Phi0_ext.copy()  # boundary trace = Phi0 + phi
    u_full[dofs.interior] = x[dofs.slice_u]
    u_full[dofs.phi_vertices] += x[dofs.slice_phi]
    psi_full = np.zeros(len(mesh.boundary_triangles))
    psi_full[dofs.psi_panels] = x[dofs.slice_psi]
    phi_full = np.zeros(len(mesh.vertices))
    phi_full[dofs.phi_vertices] = x[dofs.slice_phi]
    return SolutionTriple(
        u=VolumeDensity(values=u_full),
        psi=BoundaryDensity(PANEL, SUPPORT_D, psi_full),
        phi=BoundaryDensity(NODAL, SUPPORT_N, phi_full),
    )


def interpolate_exact_triple(
    system: BdieSystem, problem: ManufacturedProblem, data: BoundaryData
) -> np.ndarray:
    """Nodal/centroid interpolant of the exact solution triple.

    u at interior vertices, psi = conormal derivative minus Psi0 at Dirichlet
    panel centroids, phi = trace minus Phi0 at free Neumann vertices.
    """
    mesh, dofs = system.mesh, system.dofs
    x = np.zeros(dofs.n_total)
    x[dofs.slice_u] = problem.exact_u(mesh.vertices[dofs.interior])
    cent = triangle_centroids(mesh)[dofs.psi_panels]
    nrm = mesh.triangle_normal[dofs.psi_panels]
    a = problem.coefficient.value(cent)
    t_exact = a * np.sum(problem.exact_grad_u(cent) * nrm, axis=-1)
    x[dofs.slice_psi] = t_exact - data.Psi0_ext[dofs.psi_panels]
    x[dofs.slice_phi] = (
        problem.exact_u(mesh.vertices[dofs.phi_vertices])
        - data.Phi0_ext[dofs.phi_vertices]
    )
    return x


def recover_cauchy_data(system: BdieSystem, sol: SolutionTriple, data: BoundaryData):
    """Full Cauchy data on the boundary from the segregated solution."""
    trace = data.Phi0_ext + sol.phi.values
    conormal = data.Psi0_ext + sol.psi.values
    return trace, conormal


def locate_point(mesh: DomainMesh, y) -> int:
    """Index of a tetrahedron containing y, or -1."""
    y = np.asarray(y, dtype=float)
    verts = mesh.vertices[mesh.tetrahedra]
    centroids = verts.mean(axis=1)
    tree = cKDTree(centroids)
    # a few nearest candidates suffice on quasi-uniform meshes
    for t in tree.query(y, k=min(32, len(centroids)))[1].ravel():
        lam = tet_barycentric(y, verts[t])
        if np.all(lam >= -1e-10):
            return int(t)
    return -1


def representation_formula(
    system: BdieSystem, sol: SolutionTriple, data: BoundaryData, f, y
) -> float | np.ndarray:
    """Field value inside the domain reconstructed from the solved densities.

    u(y) = P f - R u + V(T u) - W(trace u), with the Cauchy data assembled
    from the segregated unknowns and the data extensions.
    """
    mesh, coeff, cfg = system.mesh, system.coeff, system.cfg
    pts = np.atleast_2d(np.asarray(y, dtype=float))
    for p in pts:
        if locate_point(mesh, p) < 0:
            raise ValueError(f"evaluation point {p} lies outside the domain")
    trace, conormal = recover_cauchy_data(system, sol, data)
    trace_density = BoundaryDensity(NODAL, "all", trace)
    conormal_density = BoundaryDensity(PANEL, "all", conormal)
    val = -np.atleast_1d(remainder_potential(mesh, sol.u, pts, coeff, cfg))
    val += np.atleast_1d(single_layer(mesh, conormal_density, pts, coeff, cfg))
    val -= np.atleast_1d(double_layer(mesh, trace_density, pts, coeff, cfg))
    if f is not None:
        val += np.atleast_1d(parametrix_newton(mesh, f, pts, coeff, cfg))
    return val if np.asarray(y).ndim > 1 else float(val[0])


def third_green_residual(
    mesh: DomainMesh,
    coeff: CoefficientField,
    u_fn,
    grad_u_fn,
    source_fn,
    probes,
    cfg: QuadConfig | None = None,
) -> float:
    """Max residual of the representation identity for a closed-form field.

    Evaluates u + R u - V(T u) + W(trace u) - P(A u) at interior probe
    points with all densities taken in closed form; boundary-only meshes are
    accepted when the volume terms vanish identically (constant coefficient,
    zero source).
    """
    cfg = cfg or QuadConfig()
    pts = np.atleast_2d(np.asarray(probes, dtype=float))
    normals = mesh.triangle_normal

    def conormal_factor(p, tri_ids):
        return coeff.value(p) * np.sum(grad_u_fn(p) * normals[tri_ids], axis=-1)

    conormal = _ScaledDensity(lambda p: np.ones(p.shape[:-1]), conormal_factor)
    res = np.asarray(u_fn(pts), dtype=float).copy()
    res -= np.atleast_1d(single_layer(mesh, conormal, pts, coeff, cfg))
    res += np.atleast_1d(double_layer(mesh, u_fn, pts, coeff, cfg))
    if mesh.has_volume:
        res += np.atleast_1d(remainder_potential(mesh, u_fn, pts, coeff, cfg))
        if source_fn is not None:
            res -= np.atleast_1d(parametrix_newton(mesh, source_fn, pts, coeff, cfg))
    else:
        if not coeff.is_constant:
            raise ValueError("boundary-only mesh needs a constant coefficient")
        if source_fn is not None and np.any(np.asarray(source_fn(pts)) != 0.0):
            raise ValueError("boundary-only mesh needs a source-free field")
    return float(np.abs(res).max())


def assemble_laplace_bie(
    mesh: DomainMesh, coeff: CoefficientField, cfg: QuadConfig | None = None
):
    """Boundary-only system of the constant-coefficient reduction.

    With a = 1 the remainder vanishes and the boundary-trace equation
    decouples: collocation of [-V_laplace, cI + W_laplace] at the same
    boundary points as the full system.  Returns (matrix, system) where
    ``system`` carries the blocks for right-hand side assembly and the
    interior representation.
    """
    cfg = cfg or QuadConfig()
    if not coeff.is_constant or coeff.value(np.zeros(3)) != 1.0:
        raise ConfigurationError("the boundary integral reduction requires a = 1")
    system = assemble_M12(mesh, coeff, cfg)
    dofs = system.dofs
    n_b = dofs.n_psi + dofs.n_phi
    A = np.zeros((n_b, n_b))
    A[:, : dofs.n_psi] = -system.V_bnd[:, dofs.psi_panels]
    A[:, dofs.n_psi :] = system.W_bnd[:, dofs.phi_vertices]
    A[range(dofs.n_psi, n_b), range(dofs.n_psi, n_b)] += system.trace_coeff[dofs.n_psi :]
    return A, system


def laplace_bie_rhs(system: BdieSystem, f, data: BoundaryData) -> np.ndarray:
    _, F0_trc = assemble_rhs_F0(system, f, data)
    return F0_trc - _phi0_at_boundary_points(system, data)


def laplace_representation(system: BdieSystem, x_b: np.ndarray, f, data: BoundaryData) -> np.ndarray:
    """Interior nodal values via u = F0 + V psi - W phi (constant a)."""
    dofs = system.dofs
    F0_int, _ = assemble_rhs_F0(system, f, data)
    psi = x_b[: dofs.n_psi]
    phi = x_b[dofs.n_psi :]
    return (
        F0_int
        + system.V_int[:, dofs.psi_panels] @ psi
        - system.W_int[:, dofs.phi_vertices] @ phi
    )
