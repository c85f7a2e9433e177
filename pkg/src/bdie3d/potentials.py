"""Parametrix-based volume and surface potentials.

Kernels follow the convention d = x - y with x the integration variable:

* fundamental solution        F(x-y) = -1 / (4 pi |x-y|)
* parametrix                  P(x,y) = F(x-y) / a(x)
* remainder                   R(x,y) = -grad(ln a)(x) . (x-y) / (4 pi r^3)
                                       + lap(ln a)(x) / (4 pi r)

Each variable-coefficient operator is evaluated through its relation to the
Laplace-kernel operator (density rescaled by 1/a, plus a single-layer
correction carrying d(ln a)/dn for the double layer); the ``path="direct"``
variant integrates the parametrix kernel itself and serves as an oracle.
Evaluation points may lie on, near, or far from the integration elements;
singular and near-singular elements are handled by the adaptive point sets
from :mod:`bdie3d.quadrature`.

All functions are pure; evaluation over targets can be parallelized freely.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.sparse import coo_matrix
from scipy.spatial import cKDTree

from .coeff import CoefficientField, preset_coefficient
from .errors import SingularityError
from .mesh import (
    DomainMesh,
    BOUNDARY_D,
    BOUNDARY_N,
    DIRICHLET,
    INTERFACE,
    INTERIOR,
    NEUMANN,
)
from .quadrature import (
    QuadConfig,
    gauss_tet,
    gauss_triangle,
    point_tet_distance,
    point_triangle_distance,
    tet_batch_points,
    tet_rule_for_point,
    triangle_barycentric,
    triangle_batch_points,
    triangle_rule_for_point,
)

_INV4PI = 1.0 / (4.0 * np.pi)
_LAPLACE = preset_coefficient("constant_one")

NODAL = "nodal"
PANEL = "panel"
SUPPORT_ALL = "all"
SUPPORT_D = "dirichlet"
SUPPORT_N = "neumann"


# ---------------------------------------------------------------------------
# kernels (spec-level, pointwise)


def kernel_fundamental(x, y):
    """Fundamental solution of the Laplacian, -1/(4 pi |x-y|)."""
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    r = np.linalg.norm(d, axis=-1)
    if np.any(r == 0.0):
        raise SingularityError("kernel evaluated at x == y")
    return -_INV4PI / r


def kernel_parametrix(x, y, coeff: CoefficientField):
    """Parametrix kernel, fundamental solution divided by a at the
    integration point x (not at y)."""
    return kernel_fundamental(x, y) / coeff.value(np.asarray(x, dtype=float))


def kernel_remainder(x, y, coeff: CoefficientField):
    """Remainder kernel of the parametrix; O(1/r^2) at the diagonal."""
    x = np.asarray(x, dtype=float)
    d = x - np.asarray(y, dtype=float)
    r = np.linalg.norm(d, axis=-1)
    if np.any(r == 0.0):
        raise SingularityError("kernel evaluated at x == y")
    gl = coeff.grad_log(x)
    ll = coeff.laplacian_log(x)
    return -np.sum(gl * d, axis=-1) * _INV4PI / r**3 + ll * _INV4PI / r


# ---------------------------------------------------------------------------
# densities


@dataclass(frozen=True)
class BoundaryDensity:
    """Discrete function on the boundary.

    ``nodal`` densities are continuous piecewise-linear in the boundary
    vertices (trace-space type), ``panel`` densities are constant per
    triangle (conormal-space type).  ``values`` is indexed by mesh vertices
    (nodal) or boundary triangles (panel); entries outside the support part
    must vanish.
    """

    kind: str
    support: str
    values: np.ndarray


@dataclass(frozen=True)
class VolumeDensity:
    """Piecewise-linear volume density (vertex values) or a closed form."""

    values: np.ndarray | None = None
    fn: Callable | None = None


def _nodal_allowed(mesh: DomainMesh, support: str) -> np.ndarray:
    cls = mesh.vertex_class
    if support == SUPPORT_ALL:
        return cls != INTERIOR
    if support == SUPPORT_N:
        return cls == BOUNDARY_N
    if support == SUPPORT_D:
        return (cls == BOUNDARY_D) | (cls == INTERFACE)
    raise ValueError(f"unknown support {support!r}")


def _panel_allowed(mesh: DomainMesh, support: str) -> np.ndarray:
    if support == SUPPORT_ALL:
        return np.ones(len(mesh.boundary_triangles), dtype=bool)
    if support == SUPPORT_N:
        return mesh.triangle_part == NEUMANN
    if support == SUPPORT_D:
        return mesh.triangle_part == DIRICHLET
    raise ValueError(f"unknown support {support!r}")


def nodal_density(mesh: DomainMesh, source, support: str = SUPPORT_ALL) -> BoundaryDensity:
    """Continuous piecewise-linear density from a callable or vertex values.

    Values outside the support part are zeroed, which realizes the
    vanishing-at-interface condition for Neumann-part densities.
    """
    if callable(source):
        vals = np.asarray(source(mesh.vertices), dtype=float)
    else:
        vals = np.asarray(source, dtype=float).copy()
    if vals.shape != (len(mesh.vertices),):
        raise ValueError("nodal density needs one value per mesh vertex")
    vals = np.where(_nodal_allowed(mesh, support), vals, 0.0)
    return BoundaryDensity(NODAL, support, vals)


def panel_density(mesh: DomainMesh, source, support: str = SUPPORT_ALL) -> BoundaryDensity:
    """Panel-wise constant density from a callable (at centroids) or values."""
    if callable(source):
        centroids = mesh.vertices[mesh.boundary_triangles].mean(axis=1)
        vals = np.asarray(source(centroids), dtype=float)
    else:
        vals = np.asarray(source, dtype=float).copy()
    if vals.shape != (len(mesh.boundary_triangles),):
        raise ValueError("panel density needs one value per boundary triangle")
    vals = np.where(_panel_allowed(mesh, support), vals, 0.0)
    return BoundaryDensity(PANEL, support, vals)


def validate_boundary_density(mesh: DomainMesh, rho: BoundaryDensity) -> None:
    """Raise if values violate the support constraints of the density space."""
    if rho.kind == NODAL:
        bad = ~_nodal_allowed(mesh, rho.support) & (rho.values != 0.0)
    else:
        bad = ~_panel_allowed(mesh, rho.support) & (rho.values != 0.0)
    if np.any(bad):
        raise ValueError(
            f"{rho.kind} density with support {rho.support!r} has "
            f"{int(bad.sum())} nonzero values outside its support"
        )


def volume_density(mesh: DomainMesh, source) -> VolumeDensity:
    if callable(source):
        return VolumeDensity(fn=source)
    vals = np.asarray(source, dtype=float)
    if vals.shape != (len(mesh.vertices),):
        raise ValueError("volume density needs one value per mesh vertex")
    return VolumeDensity(values=vals)


@dataclass(frozen=True)
class _ScaledDensity:
    """Density multiplied pointwise by a coefficient-dependent factor.

    Used by the Laplace relations: rho/a for single layers and the Newton
    potential, rho * d(ln a)/dn for the double-layer correction.
    """

    base: object
    factor: Callable  # (points, tri_ids or tet_ids) -> factors


@dataclass(frozen=True)
class _ShiftedDensity:
    """Density minus a constant.

    Double-layer gradients are evaluated with the density value at the
    trace point subtracted (the constant's double layer is locally constant,
    so its gradient vanishes identically); this removes the dominant part of
    the near-boundary quadrature error.
    """

    base: object
    shift: float


# ---------------------------------------------------------------------------
# surface evaluation engine


class _SurfaceField:
    """Geometry, rule points and coefficient samples for one boundary mesh."""

    def __init__(self, mesh: DomainMesh, coeff: CoefficientField, cfg: QuadConfig):
        self.mesh = mesh
        self.coeff = coeff
        self.cfg = cfg
        tri = mesh.boundary_triangles
        self.verts = mesh.vertices[tri]  # (nf, 3, 3)
        self.normals = mesh.triangle_normal
        e = self.verts
        self.diam = np.maximum(
            np.linalg.norm(e[:, 1] - e[:, 0], axis=1),
            np.maximum(
                np.linalg.norm(e[:, 2] - e[:, 1], axis=1),
                np.linalg.norm(e[:, 0] - e[:, 2], axis=1),
            ),
        )
        self.centroid = e.mean(axis=1)
        self.radius = np.linalg.norm(e - self.centroid[:, None, :], axis=2).max(axis=1)
        self.rule = gauss_triangle(cfg.surface_order)
        self.pts, self.w = triangle_batch_points(self.verts, self.rule)  # (nf,nq,..)
        self.a = coeff.value(self.pts)
        self.dlna = np.sum(coeff.grad_log(self.pts) * self.normals[:, None, :], axis=-1)
        # clamp keeps the regular sweep finite on panels that get corrected anyway
        self.clamp = 0.05 * self.diam
        self.tree = cKDTree(self.centroid)
        self.query_radius = float(np.max(cfg.near_ratio * self.diam + self.radius)) * (1 + 1e-9)

    def density_at(self, rho, tri_ids, bary, pts):
        if isinstance(rho, _ScaledDensity):
            return self.density_at(rho.base, tri_ids, bary, pts) * rho.factor(pts, tri_ids)
        if isinstance(rho, _ShiftedDensity):
            return self.density_at(rho.base, tri_ids, bary, pts) - rho.shift
        if callable(rho):
            return np.asarray(rho(pts), dtype=float)
        if rho.kind == NODAL:
            vals = rho.values[self.mesh.boundary_triangles[tri_ids]]
            return np.sum(vals * bary, axis=-1)
        return rho.values[tri_ids]

    def regular_density(self, rho):
        nf, nq = self.w.shape
        tri_ids = np.broadcast_to(np.arange(nf)[:, None], (nf, nq))
        bary = np.broadcast_to(self.rule.points[None, :, :], (nf, nq, 3))
        return self.density_at(rho, tri_ids, bary, self.pts)


def _surf_kernel(kind, d, r, src_n, src_a, src_dlna, tgt_n=None, tgt_a=None, strong=True):
    """Surface kernels per unit density; shapes broadcast, d = x - y."""
    if kind == "single":
        return _INV4PI / (src_a * r)
    if kind == "double":
        weak = -_INV4PI * src_dlna / r
        if not strong:
            return weak
        nd = np.sum(src_n * d, axis=-1)
        return -_INV4PI * nd / r**3 + weak
    if kind == "adjoint":
        if not strong:
            return np.zeros_like(r)
        nd = np.sum(tgt_n * d, axis=-1)
        return tgt_a * _INV4PI * nd / (src_a * r**3)
    if kind == "conormal_double":
        nd = np.sum(src_n * d, axis=-1)
        td = np.sum(tgt_n * d, axis=-1)
        nn = np.sum(src_n * tgt_n, axis=-1)
        return tgt_a * _INV4PI * (nn / r**3 - 3.0 * nd * td / r**5 - src_dlna * td / r**3)
    raise ValueError(f"unknown surface kernel {kind!r}")


_NEEDS_TGT = {"adjoint", "conormal_double"}


def _surface_potential(
    field: _SurfaceField,
    kind: str,
    rho,
    targets: np.ndarray,
    *,
    tgt_normals=None,
    tgt_a=None,
    on_surface: bool = False,
    chunk: int = 32,
) -> np.ndarray:
    cfg = field.cfg
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    m = len(targets)
    nf, nq = field.w.shape

    rho_reg = field.regular_density(rho)
    flat_pts = field.pts.reshape(-1, 3)
    flat_wq = (field.w * rho_reg).reshape(-1)
    flat_n = np.repeat(field.normals, nq, axis=0)
    flat_a = field.a.reshape(-1)
    flat_dlna = field.dlna.reshape(-1)
    flat_clamp = np.repeat(field.clamp, nq)

    if tgt_normals is not None:
        tgt_normals = np.atleast_2d(np.asarray(tgt_normals, dtype=float))
    if tgt_a is not None:
        tgt_a = np.atleast_1d(np.asarray(tgt_a, dtype=float))

    out = np.zeros(m)
    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        d = flat_pts[None, :, :] - targets[lo:hi, None, :]
        r = np.maximum(np.linalg.norm(d, axis=-1), flat_clamp[None, :])
        tn = tgt_normals[lo:hi, None, :] if tgt_normals is not None else None
        ta = tgt_a[lo:hi, None] if tgt_a is not None else None
        K = _surf_kernel(kind, d, r, flat_n[None, :, :], flat_a[None, :], flat_dlna[None, :], tn, ta)
        out[lo:hi] = K @ flat_wq

    # per-target corrections on singular / near-singular panels
    for i in range(m):
        y = targets[i]
        tn = tgt_normals[i] if tgt_normals is not None else None
        ta = tgt_a[i] if tgt_a is not None else None
        for f in field.tree.query_ball_point(y, field.query_radius):
            tri = field.verts[f]
            diam = field.diam[f]
            dist = point_triangle_distance(y, tri)
            if dist > cfg.near_ratio * diam:
                continue
            if dist <= cfg.on_element_tol * max(diam, 1.0) and not on_surface:
                raise ValueError(
                    "evaluation point lies on the boundary; use the boundary operator"
                )
            # remove this panel's regular contribution
            d = field.pts[f] - y
            r = np.maximum(np.linalg.norm(d, axis=-1), field.clamp[f])
            K = _surf_kernel(kind, d, r, field.normals[f], field.a[f], field.dlna[f], tn, ta)
            out[i] -= K @ (field.w[f] * rho_reg[f])
            # add the adapted one
            pts, w, bary = triangle_rule_for_point(tri, y, cfg)
            vals = field.density_at(rho, np.full(len(pts), f), bary, pts)
            a_x = field.coeff.value(pts)
            dlna_x = field.coeff.grad_log(pts) @ field.normals[f]
            strong = _strong_term(kind, y, tri, field.normals[f], tn, diam)
            d = pts - y
            r = np.linalg.norm(d, axis=-1)
            K = _surf_kernel(kind, d, r, field.normals[f], a_x, dlna_x, tn, ta, strong=strong)
            out[i] += K @ (w * vals)
    return out


def _strong_term(kind, y, tri, panel_normal, tgt_normal, diam) -> bool:
    """False when the r^-3 part of a double-layer kernel vanishes identically.

    Flat-panel principal-value self terms: the strong part is zero whenever
    the panel lies in the plane through y orthogonal to the relevant normal.
    """
    tol = 1e-12 * max(diam, 1.0)
    if kind == "double":
        return abs(float(panel_normal @ (tri[0] - y))) > tol
    if kind == "adjoint":
        if tgt_normal is None:
            return True
        return bool(np.max(np.abs((tri - y) @ tgt_normal)) > tol)
    return True


# ---------------------------------------------------------------------------
# volume evaluation engine


class _VolumeField:
    """Geometry, rule points and coefficient samples for one volume mesh."""

    def __init__(self, mesh: DomainMesh, coeff: CoefficientField, cfg: QuadConfig):
        if not mesh.has_volume:
            raise ValueError("volume potentials need a mesh with tetrahedra")
        self.mesh = mesh
        self.coeff = coeff
        self.cfg = cfg
        tet = mesh.tetrahedra
        self.verts = mesh.vertices[tet]  # (nt, 4, 3)
        diffs = [
            self.verts[:, i] - self.verts[:, j]
            for i in range(4)
            for j in range(i + 1, 4)
        ]
        self.diam = np.max([np.linalg.norm(e, axis=1) for e in diffs], axis=0)
        self.centroid = self.verts.mean(axis=1)
        self.radius = np.linalg.norm(self.verts - self.centroid[:, None, :], axis=2).max(axis=1)
        self.rule = gauss_tet(cfg.volume_order)
        self.pts, self.w = tet_batch_points(self.verts, self.rule)
        self.a = coeff.value(self.pts)
        self.grad_log = coeff.grad_log(self.pts)
        self.lap_log = coeff.laplacian_log(self.pts)
        self.clamp = 0.05 * self.diam
        self.tree = cKDTree(self.centroid)
        self.query_radius = float(np.max(cfg.near_ratio * self.diam + self.radius)) * (1 + 1e-9)

    def density_at(self, rho, tet_ids, bary, pts):
        if isinstance(rho, _ScaledDensity):
            return self.density_at(rho.base, tet_ids, bary, pts) * rho.factor(pts, tet_ids)
        if callable(rho):
            return np.asarray(rho(pts), dtype=float)
        if rho.fn is not None:
            return np.asarray(rho.fn(pts), dtype=float)
        vals = rho.values[self.mesh.tetrahedra[tet_ids]]
        return np.sum(vals * bary, axis=-1)

    def regular_density(self, rho):
        nt, nq = self.w.shape
        tet_ids = np.broadcast_to(np.arange(nt)[:, None], (nt, nq))
        bary = np.broadcast_to(self.rule.points[None, :, :], (nt, nq, 4))
        return self.density_at(rho, tet_ids, bary, self.pts)


def _vol_kernel(kind, d, r, a_x, grad_log_x, lap_log_x):
    """Volume kernels per unit density; d = x - y."""
    if kind == "newton":
        return -_INV4PI / (a_x * r)
    if kind == "remainder":
        gd = np.sum(grad_log_x * d, axis=-1)
        return -_INV4PI * gd / r**3 + _INV4PI * lap_log_x / r
    raise ValueError(f"unknown volume kernel {kind!r}")


def _volume_potential(
    field: _VolumeField, kind: str, rho, targets: np.ndarray, *, chunk: int = 32
) -> np.ndarray:
    cfg = field.cfg
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    m = len(targets)
    nt, nq = field.w.shape

    rho_reg = field.regular_density(rho)
    flat_pts = field.pts.reshape(-1, 3)
    flat_wq = (field.w * rho_reg).reshape(-1)
    flat_a = field.a.reshape(-1)
    flat_gl = field.grad_log.reshape(-1, 3)
    flat_ll = field.lap_log.reshape(-1)
    flat_clamp = np.repeat(field.clamp, nq)

    out = np.zeros(m)
    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        d = flat_pts[None, :, :] - targets[lo:hi, None, :]
        r = np.maximum(np.linalg.norm(d, axis=-1), flat_clamp[None, :])
        K = _vol_kernel(kind, d, r, flat_a[None, :], flat_gl[None, :, :], flat_ll[None, :])
        out[lo:hi] = K @ flat_wq

    for i in range(m):
        y = targets[i]
        for t in field.tree.query_ball_point(y, field.query_radius):
            tet = field.verts[t]
            if point_tet_distance(y, tet) > cfg.near_ratio * field.diam[t]:
                continue
            d = field.pts[t] - y
            r = np.maximum(np.linalg.norm(d, axis=-1), field.clamp[t])
            K = _vol_kernel(kind, d, r, field.a[t], field.grad_log[t], field.lap_log[t])
            out[i] -= K @ (field.w[t] * rho_reg[t])
            pts, w, bary = tet_rule_for_point(tet, y, cfg)
            vals = field.density_at(rho, np.full(len(pts), t), bary, pts)
            a_x = field.coeff.value(pts)
            gl_x = field.coeff.grad_log(pts)
            ll_x = field.coeff.laplacian_log(pts)
            d = pts - y
            r = np.linalg.norm(d, axis=-1)
            K = _vol_kernel(kind, d, r, a_x, gl_x, ll_x)
            out[i] += K @ (w * vals)
    return out


def _relation_remainder(field: _VolumeField, rho, targets, chunk: int = 32) -> np.ndarray:
    """Remainder potential through its Newtonian-potential relation.

    div_y of the Newtonian potential of rho*grad(ln a), taken analytically on
    the kernel (grad_y F = -(x-y)/(4 pi r^3)), minus the Newtonian potential
    of rho*lap(ln a).  Shares the adapted point sets with the direct path.
    """
    cfg = field.cfg
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    m = len(targets)
    nt, nq = field.w.shape

    rho_reg = field.regular_density(rho)
    flat_pts = field.pts.reshape(-1, 3)
    flat_w = field.w.reshape(-1)
    vec_density = (field.grad_log * (field.w * rho_reg)[..., None]).reshape(-1, 3)
    scal_density = (field.lap_log * field.w * rho_reg).reshape(-1)
    flat_clamp = np.repeat(field.clamp, nq)

    out = np.zeros(m)
    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        d = flat_pts[None, :, :] - targets[lo:hi, None, :]
        r = np.maximum(np.linalg.norm(d, axis=-1), flat_clamp[None, :])
        grad_newton = -d / (4.0 * np.pi * r[..., None] ** 3)
        term1 = np.sum(np.sum(grad_newton * vec_density[None, :, :], axis=-1), axis=-1)
        term2 = (-_INV4PI / r) @ scal_density
        out[lo:hi] = term1 - term2
    for i in range(m):
        y = targets[i]
        for t in field.tree.query_ball_point(y, field.query_radius):
            tet = field.verts[t]
            if point_tet_distance(y, tet) > cfg.near_ratio * field.diam[t]:
                continue
            d = field.pts[t] - y
            r = np.maximum(np.linalg.norm(d, axis=-1), field.clamp[t])
            gn = -d / (4.0 * np.pi * r[..., None] ** 3)
            wr = field.w[t] * rho_reg[t]
            out[i] -= np.sum(gn * (field.grad_log[t] * wr[:, None])) - (-_INV4PI / r) @ (
                field.lap_log[t] * wr
            )
            pts, w, bary = tet_rule_for_point(tet, y, cfg)
            vals = field.density_at(rho, np.full(len(pts), t), bary, pts)
            gl_x = field.coeff.grad_log(pts)
            ll_x = field.coeff.laplacian_log(pts)
            d = pts - y
            r = np.linalg.norm(d, axis=-1)
            gn = -d / (4.0 * np.pi * r[:, None] ** 3)
            wv = w * vals
            out[i] += np.sum(gn * (gl_x * wv[:, None])) - (-_INV4PI / r) @ (ll_x * wv)
    return out


# ---------------------------------------------------------------------------
# public operators


def _scalarize(values: np.ndarray, targets) -> np.ndarray | float:
    if np.asarray(targets).ndim == 1:
        return float(values[0])
    return values


def _inv_a_factor(coeff):
    return lambda pts, ids: 1.0 / coeff.value(pts)


def newtonian_potential(mesh: DomainMesh, rho, targets, cfg: QuadConfig | None = None):
    """Newtonian volume potential of the Laplacian (kernel -1/(4 pi r))."""
    cfg = cfg or QuadConfig()
    field = _VolumeField(mesh, _LAPLACE, cfg)
    return _scalarize(_volume_potential(field, "newton", rho, targets), targets)


def parametrix_newton(
    mesh: DomainMesh,
    rho,
    targets,
    coeff: CoefficientField,
    cfg: QuadConfig | None = None,
    path: str = "relation",
):
    """Parametrix-based Newton potential; relation path integrates rho/a
    against the Laplace kernel, direct path integrates the parametrix."""
    cfg = cfg or QuadConfig()
    field = _VolumeField(mesh, coeff, cfg)
    if path == "relation":
        scaled = _ScaledDensity(rho, _inv_a_factor(coeff))
        lap = _VolumeField(mesh, _LAPLACE, cfg)
        return _scalarize(_volume_potential(lap, "newton", scaled, targets), targets)
    if path == "direct":
        return _scalarize(_volume_potential(field, "newton", rho, targets), targets)
    raise ValueError(f"unknown path {path!r}")


def remainder_potential(
    mesh: DomainMesh,
    rho,
    targets,
    coeff: CoefficientField,
    cfg: QuadConfig | None = None,
    path: str = "relation",
):
    """Remainder potential; identically zero for constant coefficients."""
    cfg = cfg or QuadConfig()
    if coeff.is_constant:
        t = np.atleast_2d(np.asarray(targets, dtype=float))
        return _scalarize(np.zeros(len(t)), targets)
    field = _VolumeField(mesh, coeff, cfg)
    if path == "relation":
        return _scalarize(_relation_remainder(field, rho, targets), targets)
    if path == "direct":
        return _scalarize(_volume_potential(field, "remainder", rho, targets), targets)
    raise ValueError(f"unknown path {path!r}")


def single_layer(
    mesh: DomainMesh,
    rho,
    targets,
    coeff: CoefficientField,
    cfg: QuadConfig | None = None,
    path: str = "relation",
):
    """Single-layer potential at off-boundary points.

    Raises ``ValueError`` for points on the boundary; use
    :func:`boundary_single_layer` there.
    """
    cfg = cfg or QuadConfig()
    if path == "relation":
        field = _SurfaceField(mesh, _LAPLACE, cfg)
        rho = _ScaledDensity(rho, _inv_a_factor(coeff))
    elif path == "direct":
        field = _SurfaceField(mesh, coeff, cfg)
    else:
        raise ValueError(f"unknown path {path!r}")
    return _scalarize(_surface_potential(field, "single", rho, targets), targets)


def double_layer(
    mesh: DomainMesh,
    rho,
    targets,
    coeff: CoefficientField,
    cfg: QuadConfig | None = None,
    path: str = "relation",
):
    """Double-layer potential at off-boundary points.

    Relation path: Laplace double layer of rho minus Laplace single layer of
    rho * d(ln a)/dn.
    """
    cfg = cfg or QuadConfig()
    if path == "relation":
        field = _SurfaceField(mesh, _LAPLACE, cfg)
        first = _surface_potential(field, "double", rho, targets)
        dlna = _dlna_factor(mesh, coeff)
        second = _surface_potential(field, "single", _ScaledDensity(rho, dlna), targets)
        return _scalarize(first - second, targets)
    if path == "direct":
        field = _SurfaceField(mesh, coeff, cfg)
        return _scalarize(_surface_potential(field, "double", rho, targets), targets)
    raise ValueError(f"unknown path {path!r}")


def _dlna_factor(mesh: DomainMesh, coeff: CoefficientField):
    normals = mesh.triangle_normal

    def factor(pts, tri_ids):
        return np.sum(coeff.grad_log(pts) * normals[tri_ids], axis=-1)

    return factor


def boundary_single_layer(
    mesh: DomainMesh,
    rho,
    targets,
    coeff: CoefficientField,
    cfg: QuadConfig | None = None,
    path: str = "relation",
):
    """Direct boundary value of the single-layer potential (continuous
    across the boundary); targets may lie on the surface."""
    cfg = cfg or QuadConfig()
    if path == "relation":
        field = _SurfaceField(mesh, _LAPLACE, cfg)
        rho = _ScaledDensity(rho, _inv_a_factor(coeff))
    elif path == "direct":
        field = _SurfaceField(mesh, coeff, cfg)
    else:
        raise ValueError(f"unknown path {path!r}")
    return _scalarize(_surface_potential(field, "single", rho, targets, on_surface=True), targets)


def boundary_double_layer(
    mesh: DomainMesh,
    rho,
    targets,
    coeff: CoefficientField,
    cfg: QuadConfig | None = None,
    path: str = "relation",
):
    """Principal-value double-layer boundary operator.

    Flat-panel self terms of the strong part vanish identically and are set
    to exact zero; the weak 1/r correction carrying d(ln a)/dn is integrated
    with the Duffy rule.
    """
    cfg = cfg or QuadConfig()
    if path == "relation":
        field = _SurfaceField(mesh, _LAPLACE, cfg)
        first = _surface_potential(field, "double", rho, targets, on_surface=True)
        second = _surface_potential(
            field, "single", _ScaledDensity(rho, _dlna_factor(mesh, coeff)), targets, on_surface=True
        )
        return _scalarize(first - second, targets)
    if path == "direct":
        field = _SurfaceField(mesh, coeff, cfg)
        return _scalarize(_surface_potential(field, "double", rho, targets, on_surface=True), targets)
    raise ValueError(f"unknown path {path!r}")


def boundary_adjoint_double_layer(
    mesh: DomainMesh,
    rho,
    targets,
    target_normals,
    coeff: CoefficientField,
    cfg: QuadConfig | None = None,
    path: str = "relation",
):
    """Principal-value conormal derivative of the single layer at the
    boundary; targets must carry normals (panel centroids)."""
    cfg = cfg or QuadConfig()
    t = np.atleast_2d(np.asarray(targets, dtype=float))
    a_y = coeff.value(t)
    if path == "relation":
        field = _SurfaceField(mesh, _LAPLACE, cfg)
        rho = _ScaledDensity(rho, _inv_a_factor(coeff))
    elif path == "direct":
        field = _SurfaceField(mesh, coeff, cfg)
    else:
        raise ValueError(f"unknown path {path!r}")
    vals = _surface_potential(
        field, "adjoint", rho, targets, tgt_normals=target_normals, tgt_a=a_y, on_surface=True
    )
    return _scalarize(vals, targets)


# ---------------------------------------------------------------------------
# one-sided traces and conormal derivatives by offset evaluation


def richardson_extrapolate(offsets, values):
    """Polynomial extrapolation of values(offsets) to offset -> 0.

    ``values`` has the offsets on the last axis.  Returns the extrapolated
    limit and the magnitude of the last Neville correction (error estimate).
    Warns when the corrections stop decreasing.
    """
    e = np.asarray(offsets, dtype=float)
    v = np.asarray(values, dtype=float)
    k = len(e)
    if k < 2:
        return v[..., 0], np.full(v.shape[:-1], np.inf)
    T = [v[..., i] for i in range(k)]
    diag = [T[0]]
    for j in range(1, k):
        newT = []
        for i in range(j, k):
            num = e[i] * T[i - 1] - e[i - j] * T[i]
            newT.append(num / (e[i] - e[i - j]))
        T = [None] * j + newT
        diag.append(T[k - 1])
    corrections = np.stack([np.abs(diag[j + 1] - diag[j]) for j in range(k - 1)], axis=-1)
    last = corrections[..., -1]
    if k >= 3 and np.any(corrections[..., -1] > corrections[..., -2] * (1 + 1e-9)):
        warnings.warn(
            "trace extrapolation residual is not decreasing; "
            "offsets may be under-resolved for this mesh",
            stacklevel=2,
        )
    return diag[-1], last


def trace_offsets(mesh: DomainMesh, points) -> np.ndarray:
    """Default offset ladder: local panel diameter times (0.8, 0.4, 0.2, 0.1)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    centroids = mesh.vertices[mesh.boundary_triangles].mean(axis=1)
    tree = cKDTree(centroids)
    _, idx = tree.query(pts)
    v = mesh.vertices[mesh.boundary_triangles[idx]]
    diam = np.maximum(
        np.linalg.norm(v[:, 1] - v[:, 0], axis=1),
        np.maximum(
            np.linalg.norm(v[:, 2] - v[:, 1], axis=1),
            np.linalg.norm(v[:, 0] - v[:, 2], axis=1),
        ),
    )
    return diam[:, None] * np.array([0.8, 0.4, 0.2, 0.1])[None, :]


def _check_offsets(mesh, points, offsets) -> np.ndarray:
    offs = np.asarray(offsets, dtype=float)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if offs.ndim == 1:
        offs = np.broadcast_to(offs, (len(pts), len(offs))).copy()
    if np.any(np.diff(offs, axis=1) >= 0):
        raise ValueError("offsets must be strictly decreasing")
    local = trace_offsets(mesh, points)[:, -1]  # panel diameter / 10
    if np.any(offs[:, -1] < local * (1 - 1e-9)):
        raise ValueError("smallest offset must be at least a tenth of the panel size")
    return offs


def _density_surface_value(mesh: DomainMesh, rho, points) -> np.ndarray:
    """Value of a boundary density at (near-)surface points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if callable(rho):
        return np.asarray(rho(pts), dtype=float)
    centroids = mesh.vertices[mesh.boundary_triangles].mean(axis=1)
    idx = cKDTree(centroids).query(pts)[1]
    if rho.kind == PANEL:
        return rho.values[idx]
    out = np.empty(len(pts))
    for i, (p, f) in enumerate(zip(pts, idx)):
        tri = mesh.boundary_triangles[f]
        lam = triangle_barycentric(p, mesh.vertices[tri])
        out[i] = float(rho.values[tri] @ lam)
    return out


def one_sided_trace(
    mesh: DomainMesh,
    layer: str,
    rho,
    points,
    normals,
    side: str,
    coeff: CoefficientField,
    cfg: QuadConfig | None = None,
    offsets=None,
):
    """One-sided boundary trace of a layer potential by offset extrapolation.

    ``side`` "+" approaches from inside the domain (against the outward
    normal), "-" from outside.  For the double layer the density value at
    the trace point is split off and carried by the unit density, which
    keeps the extrapolated part small near the surface.  Returns
    (values, error_estimates).
    """
    cfg = cfg or QuadConfig()
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    nrm = np.atleast_2d(np.asarray(normals, dtype=float))
    offs = _check_offsets(mesh, points, offsets if offsets is not None else trace_offsets(mesh, pts))
    sgn = -1.0 if side == "+" else 1.0
    field = _SurfaceField(mesh, _LAPLACE, cfg)
    m, k = offs.shape
    lim = np.empty(m)
    err = np.empty(m)
    if layer == "single":
        scaled = _ScaledDensity(rho, _inv_a_factor(coeff))
        for i in range(m):
            targets = pts[i] + sgn * offs[i][:, None] * nrm[i]
            vals = _surface_potential(field, "single", scaled, targets)
            lim[i], err[i] = richardson_extrapolate(offs[i], vals)
        return lim, err
    if layer != "double":
        raise ValueError(f"unknown layer {layer!r}")
    shifts = _density_surface_value(mesh, rho, pts)
    ones = panel_density(mesh, np.ones(len(mesh.boundary_triangles)))
    dlna = _ScaledDensity(rho, _dlna_factor(mesh, coeff))
    for i in range(m):
        targets = pts[i] + sgn * offs[i][:, None] * nrm[i]
        vals = _surface_potential(field, "double", _ShiftedDensity(rho, shifts[i]), targets)
        vals += shifts[i] * _surface_potential(field, "double", ones, targets)
        vals -= _surface_potential(field, "single", dlna, targets)
        lim[i], err[i] = richardson_extrapolate(offs[i], vals)
    return lim, err


def one_sided_conormal(
    mesh: DomainMesh,
    layer: str,
    rho,
    points,
    normals,
    side: str,
    coeff: CoefficientField,
    cfg: QuadConfig | None = None,
    offsets=None,
):
    """One-sided conormal derivative a n . grad of a layer potential.

    Realized without hypersingular quadrature: the gradient field is
    evaluated at points offset along the normal and Richardson-extrapolated
    to the surface.  The double-layer gradient uses the constant-subtracted
    density (the constant's double layer has vanishing gradient), which is
    what makes the extrapolation stable.  Returns (values, error_estimates).
    """
    cfg = cfg or QuadConfig()
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    nrm = np.atleast_2d(np.asarray(normals, dtype=float))
    offs = _check_offsets(mesh, points, offsets if offsets is not None else trace_offsets(mesh, pts))
    sgn = -1.0 if side == "+" else 1.0
    field = _SurfaceField(mesh, _LAPLACE, cfg)
    a_ref = coeff.value(pts)
    m, k = offs.shape
    lim = np.empty(m)
    err = np.empty(m)
    if layer == "single":
        scaled = _ScaledDensity(rho, _inv_a_factor(coeff))
        for i in range(m):
            targets = pts[i] + sgn * offs[i][:, None] * nrm[i]
            vals = _surface_potential(
                field, "adjoint", scaled, targets,
                tgt_normals=np.broadcast_to(nrm[i], (k, 3)), tgt_a=np.full(k, a_ref[i]),
            )
            lim[i], err[i] = richardson_extrapolate(offs[i], vals)
        return lim, err
    if layer != "double":
        raise ValueError(f"unknown layer {layer!r}")
    shifts = _density_surface_value(mesh, rho, pts)
    dlna = _ScaledDensity(rho, _dlna_factor(mesh, coeff))
    for i in range(m):
        targets = pts[i] + sgn * offs[i][:, None] * nrm[i]
        tn = np.broadcast_to(nrm[i], (k, 3))
        ta = np.full(k, a_ref[i])
        vals = _surface_potential(
            field, "conormal_double", _ShiftedDensity(rho, shifts[i]), targets,
            tgt_normals=tn, tgt_a=ta,
        )
        vals -= _surface_potential(field, "adjoint", dlna, targets, tgt_normals=tn, tgt_a=ta)
        lim[i], err[i] = richardson_extrapolate(offs[i], vals)
    return lim, err


def one_sided_conormal_W(mesh, rho, points, normals, side, coeff, cfg=None, offsets=None):
    """Conormal derivative of the double-layer potential, one-sided limit."""
    return one_sided_conormal(mesh, "double", rho, points, normals, side, coeff, cfg, offsets)


def solid_angle_fraction(mesh: DomainMesh, points, cfg: QuadConfig | None = None) -> np.ndarray:
    """Interior solid angle fraction at boundary points via the Gauss integral.

    Computed as minus the principal-value Laplace double layer of the unit
    density; 1/2 at smooth boundary points, 1/4 on cube edges, 1/8 at cube
    corners.
    """
    cfg = cfg or QuadConfig()
    field = _SurfaceField(mesh, _LAPLACE, cfg)
    ones = panel_density(mesh, np.ones(len(mesh.boundary_triangles)))
    vals = _surface_potential(field, "double", ones, points, on_surface=True)
    out = -vals
    return out if np.asarray(points).ndim > 1 else float(out[0])


# ---------------------------------------------------------------------------
# dense operator matrices (basis-resolved evaluation)


def _scatter_matrix_surface(field: _SurfaceField, basis: str):
    nf, nq = field.w.shape
    if basis == PANEL:
        rows = np.arange(nf * nq)
        cols = np.repeat(np.arange(nf), nq)
        data = field.w.reshape(-1)
        return coo_matrix((data, (rows, cols)), shape=(nf * nq, nf)).tocsr()
    tri = field.mesh.boundary_triangles
    rows = np.repeat(np.arange(nf * nq), 3)
    cols = np.repeat(tri, nq, axis=0).reshape(-1)
    data = (field.w[..., None] * field.rule.points[None, :, :]).reshape(-1)
    return coo_matrix((data, (rows, cols)), shape=(nf * nq, len(field.mesh.vertices))).tocsr()


def surface_operator_matrix(
    mesh: DomainMesh,
    coeff: CoefficientField,
    cfg: QuadConfig,
    kind: str,
    basis: str,
    targets,
    *,
    tgt_normals=None,
    on_surface: bool = True,
    chunk: int = 32,
) -> np.ndarray:
    """Dense matrix of a boundary operator against P0 or P1 boundary basis.

    Rows are evaluation points (which may lie on the surface), columns are
    panels (P0) or mesh vertices (P1 hat traces).
    """
    field = _SurfaceField(mesh, coeff, cfg)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    m = len(targets)
    nf, nq = field.w.shape
    scatter = _scatter_matrix_surface(field, basis)
    ncols = scatter.shape[1]
    tri = mesh.boundary_triangles

    flat_pts = field.pts.reshape(-1, 3)
    flat_n = np.repeat(field.normals, nq, axis=0)
    flat_a = field.a.reshape(-1)
    flat_dlna = field.dlna.reshape(-1)
    flat_clamp = np.repeat(field.clamp, nq)

    tgt_a = coeff.value(targets) if kind in _NEEDS_TGT else None
    if tgt_normals is not None:
        tgt_normals = np.atleast_2d(np.asarray(tgt_normals, dtype=float))

    out = np.zeros((m, ncols))
    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        d = flat_pts[None, :, :] - targets[lo:hi, None, :]
        r = np.maximum(np.linalg.norm(d, axis=-1), flat_clamp[None, :])
        tn = tgt_normals[lo:hi, None, :] if tgt_normals is not None else None
        ta = tgt_a[lo:hi, None] if tgt_a is not None else None
        K = _surf_kernel(kind, d, r, flat_n[None], flat_a[None], flat_dlna[None], tn, ta)
        out[lo:hi] = K @ scatter

    for i in range(m):
        y = targets[i]
        tn = tgt_normals[i] if tgt_normals is not None else None
        ta = tgt_a[i] if tgt_a is not None else None
        for f in field.tree.query_ball_point(y, field.query_radius):
            tverts = field.verts[f]
            diam = field.diam[f]
            dist = point_triangle_distance(y, tverts)
            if dist > cfg.near_ratio * diam:
                continue
            if dist <= cfg.on_element_tol * max(diam, 1.0) and not on_surface:
                raise ValueError("matrix target lies on the boundary")
            d = field.pts[f] - y
            r = np.maximum(np.linalg.norm(d, axis=-1), field.clamp[f])
            K = _surf_kernel(kind, d, r, field.normals[f], field.a[f], field.dlna[f], tn, ta)
            if basis == PANEL:
                out[i, f] -= K @ field.w[f]
            else:
                out[i, tri[f]] -= (K * field.w[f]) @ field.rule.points
            pts, w, bary = triangle_rule_for_point(tverts, y, cfg)
            a_x = field.coeff.value(pts)
            dlna_x = field.coeff.grad_log(pts) @ field.normals[f]
            strong = _strong_term(kind, y, tverts, field.normals[f], tn, diam)
            d = pts - y
            r = np.linalg.norm(d, axis=-1)
            K = _surf_kernel(kind, d, r, field.normals[f], a_x, dlna_x, tn, ta, strong=strong)
            if basis == PANEL:
                out[i, f] += K @ w
            else:
                out[i, tri[f]] += (K * w) @ bary
    return out


def volume_operator_matrix(
    mesh: DomainMesh,
    coeff: CoefficientField,
    cfg: QuadConfig,
    kind: str,
    targets,
    *,
    chunk: int = 32,
) -> np.ndarray:
    """Dense matrix of a volume operator against the P1 vertex basis."""
    field = _VolumeField(mesh, coeff, cfg)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    m = len(targets)
    nt, nq = field.w.shape
    nv = len(mesh.vertices)
    tets = mesh.tetrahedra

    rows = np.repeat(np.arange(nt * nq), 4)
    cols = np.repeat(tets, nq, axis=0).reshape(-1)
    data = (field.w[..., None] * field.rule.points[None, :, :]).reshape(-1)
    scatter = coo_matrix((data, (rows, cols)), shape=(nt * nq, nv)).tocsr()

    flat_pts = field.pts.reshape(-1, 3)
    flat_a = field.a.reshape(-1)
    flat_gl = field.grad_log.reshape(-1, 3)
    flat_ll = field.lap_log.reshape(-1)
    flat_clamp = np.repeat(field.clamp, nq)

    out = np.zeros((m, nv))
    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        d = flat_pts[None, :, :] - targets[lo:hi, None, :]
        r = np.maximum(np.linalg.norm(d, axis=-1), flat_clamp[None, :])
        K = _vol_kernel(kind, d, r, flat_a[None], flat_gl[None], flat_ll[None])
        out[lo:hi] = K @ scatter

    for i in range(m):
        y = targets[i]
        for t in field.tree.query_ball_point(y, field.query_radius):
            tverts = field.verts[t]
            if point_tet_distance(y, tverts) > cfg.near_ratio * field.diam[t]:
                continue
            d = field.pts[t] - y
            r = np.maximum(np.linalg.norm(d, axis=-1), field.clamp[t])
            K = _vol_kernel(kind, d, r, field.a[t], field.grad_log[t], field.lap_log[t])
            out[i, tets[t]] -= (K * field.w[t]) @ field.rule.points
            pts, w, bary = tet_rule_for_point(tverts, y, cfg)
            a_x = field.coeff.value(pts)
            gl_x = field.coeff.grad_log(pts)
            ll_x = field.coeff.laplacian_log(pts)
            d = pts - y
            r = np.linalg.norm(d, axis=-1)
            K = _vol_kernel(kind, d, r, a_x, gl_x, ll_x)
            out[i, tets[t]] += (K * w) @ bary
    return out
