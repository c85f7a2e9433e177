"""Numerical integration on triangles and tetrahedra.

Three regimes are covered, matching what layer/volume potentials need:

* regular symmetric Gauss rules on reference elements,
* weakly singular integrands (1/r on surfaces, up to 1/r^2 in volumes) with
  the evaluation point on the element, via Duffy transforms that absorb the
  singularity into the Jacobian,
* near-singular integrands (evaluation point off the element but closer than
  ``near_ratio`` times the element diameter) via graded dyadic subdivision
  toward the closest point.

All rules store full barycentric coordinates; weights sum to the reference
measure (1/2 for triangles, 1/6 for tetrahedra).  Physical weights returned
by the adaptive routines include all Jacobian factors, so integrals are plain
weighted sums of kernel values.  Everything here is a pure function of its
inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class QuadRule:
    """Quadrature rule in barycentric coordinates on a reference element."""

    points: np.ndarray  # (n, k) barycentric, k = 3 (triangle) or 4 (tet)
    weights: np.ndarray  # (n,), sums to the reference measure
    order: int  # polynomial exactness degree


@dataclass(frozen=True)
class QuadConfig:
    """Quadrature orders and near-singularity handling parameters.

    ``*_singular_order`` counts tensor Gauss-Legendre points per axis in the
    Duffy rules.  Elements are subdivided while the evaluation point is
    closer than ``near_ratio`` times the (sub)element diameter.
    """

    surface_order: int = 4
    surface_singular_order: int = 6
    volume_order: int = 2
    volume_singular_order: int = 4
    near_ratio: float = 0.5
    max_depth: int = 12
    on_element_tol: float = 1e-12


def _perms_of_bary(coords, weight):
    """Distinct permutations of one barycentric tuple, each with `weight`."""
    from itertools import permutations

    seen = sorted(set(permutations(coords)))
    return [list(p) for p in seen], [weight] * len(seen)


# normalized weights (summing to 1); scaled by the reference measure below
_TRI_RULES = {
    1: ([(1 / 3, 1 / 3, 1 / 3)], [1.0]),
    2: _perms_of_bary((2 / 3, 1 / 6, 1 / 6), 1 / 3),
    4: (
        _perms_of_bary(
            (1 - 2 * 0.445948490915965, 0.445948490915965, 0.445948490915965),
            0.223381589678011,
        )[0]
        + _perms_of_bary(
            (1 - 2 * 0.091576213509771, 0.091576213509771, 0.091576213509771),
            0.109951743655322,
        )[0],
        [0.223381589678011] * 3 + [0.109951743655322] * 3,
    ),
    6: (
        _perms_of_bary(
            (1 - 2 * 0.063089014491502, 0.063089014491502, 0.063089014491502),
            0.050844906370207,
        )[0]
        + _perms_of_bary(
            (1 - 2 * 0.249286745170910, 0.249286745170910, 0.249286745170910),
            0.116786275726379,
        )[0]
        + _perms_of_bary(
            (1 - 0.310352451033785 - 0.053145049844816, 0.310352451033785, 0.053145049844816),
            0.082851075618374,
        )[0],
        [0.050844906370207] * 3 + [0.116786275726379] * 3 + [0.082851075618374] * 6,
    ),
}

_TET_A2 = (5.0 + 3.0 * np.sqrt(5.0)) / 20.0
_TET_B2 = (5.0 - np.sqrt(5.0)) / 20.0
_TET_RULES = {
    1: ([(0.25, 0.25, 0.25, 0.25)], [1.0]),
    2: _perms_of_bary((_TET_A2, _TET_B2, _TET_B2, _TET_B2), 0.25),
    4: (
        _perms_of_bary(
            (0.0673422422100983, 0.3108859192633005, 0.3108859192633005, 0.3108859192633005),
            0.1126879257180162,
        )[0]
        + _perms_of_bary(
            (0.7217942490673264, 0.0927352503108912, 0.0927352503108912, 0.0927352503108912),
            0.0734930431163619,
        )[0]
        + _perms_of_bary(
            (0.4544962958743506, 0.4544962958743506, 0.0455037041256494, 0.0455037041256494),
            0.0425460207770812,
        )[0],
        [0.1126879257180162] * 4 + [0.0734930431163619] * 4 + [0.0425460207770812] * 6,
    ),
}


def _freeze(rule: QuadRule) -> QuadRule:
    rule.points.setflags(write=False)
    rule.weights.setflags(write=False)
    return rule


@lru_cache(maxsize=None)
def gauss_triangle(order: int) -> QuadRule:
    """Symmetric Gauss rule on the reference triangle, exact to `order`."""
    if order not in _TRI_RULES:
        raise ValueError(f"unsupported triangle rule order {order}; supported: {sorted(_TRI_RULES)}")
    pts, w = _TRI_RULES[order]
    return _freeze(QuadRule(np.asarray(pts, dtype=float), 0.5 * np.asarray(w, dtype=float), order))


@lru_cache(maxsize=None)
def gauss_tet(order: int) -> QuadRule:
    """Symmetric Gauss rule on the reference tetrahedron, exact to `order`."""
    if order not in _TET_RULES:
        raise ValueError(f"unsupported tet rule order {order}; supported: {sorted(_TET_RULES)}")
    pts, w = _TET_RULES[order]
    return _freeze(QuadRule(np.asarray(pts, dtype=float), np.asarray(w, dtype=float) / 6.0, order))


@lru_cache(maxsize=None)
def gauss_legendre_01(n: int):
    """Gauss-Legendre nodes/weights shifted to [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def duffy_triangle(n: int) -> QuadRule:
    """Tensor rule on the reference triangle, singular vertex first.

    The map (u, v) -> (1-u, u(1-v), uv) in barycentric coordinates carries a
    Jacobian factor u that cancels a 1/r singularity at vertex 0.
    """
    u, wu = gauss_legendre_01(n)
    v, wv = gauss_legendre_01(n)
    U, V = np.meshgrid(u, v, indexing="ij")
    WU, WV = np.meshgrid(wu, wv, indexing="ij")
    bary = np.stack([1.0 - U, U * (1.0 - V), U * V], axis=-1).reshape(-1, 3)
    w = (WU * WV * U).reshape(-1)
    return _freeze(QuadRule(bary, w, 2 * n - 2))


@lru_cache(maxsize=None)
def duffy_tet(n: int) -> QuadRule:
    """Tensor rule on the reference tet, singular vertex first.

    Jacobian factor u^2 v cancels singularities up to 1/r^2 at vertex 0.
    """
    u, wu = gauss_legendre_01(n)
    U, V, W = np.meshgrid(u, u, u, indexing="ij")
    WU, WV, WW = np.meshgrid(wu, wu, wu, indexing="ij")
    bary = np.stack(
        [1.0 - U, U * (1.0 - V), U * V * (1.0 - W), U * V * W], axis=-1
    ).reshape(-1, 4)
    w = (WU * WV * WW * U**2 * V).reshape(-1)
    return _freeze(QuadRule(bary, w, 2 * n - 2))


# ---------------------------------------------------------------------------
# geometry helpers


def triangle_area(verts: np.ndarray) -> float:
    return 0.5 * float(np.linalg.norm(np.cross(verts[1] - verts[0], verts[2] - verts[0])))


def triangle_diameter(verts: np.ndarray) -> float:
    return float(
        max(
            np.linalg.norm(verts[1] - verts[0]),
            np.linalg.norm(verts[2] - verts[1]),
            np.linalg.norm(verts[0] - verts[2]),
        )
    )


def tet_volume(verts: np.ndarray) -> float:
    return float(np.linalg.det(verts[1:] - verts[0]) / 6.0)


def tet_diameter(verts: np.ndarray) -> float:
    d = 0.0
    for i in range(4):
        for j in range(i + 1, 4):
            d = max(d, float(np.linalg.norm(verts[i] - verts[j])))
    return d


def closest_point_on_triangle(p: np.ndarray, verts: np.ndarray) -> np.ndarray:
    """Closest point of a (possibly degenerate) triangle to p.

    Voronoi-region walk, cf. Ericson, Real-Time Collision Detection 5.1.5.
    """
    a, b, c = verts
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = float(ab @ ap), float(ac @ ap)
    if d1 <= 0.0 and d2 <= 0.0:
        return a
    bp = p - b
    d3, d4 = float(ab @ bp), float(ac @ bp)
    if d3 >= 0.0 and d4 <= d3:
        return b
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        denom = d1 - d3
        return a + (d1 / denom) * ab if denom != 0.0 else a
    cp = p - c
    d5, d6 = float(ab @ cp), float(ac @ cp)
    if d6 >= 0.0 and d5 <= d6:
        return c
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        denom = d2 - d6
        return a + (d2 / denom) * ac if denom != 0.0 else a
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        denom = (d4 - d3) + (d5 - d6)
        return b + ((d4 - d3) / denom) * (c - b) if denom != 0.0 else b
    denom = va + vb + vc
    if denom == 0.0:
        return a
    v = vb / denom
    w = vc / denom
    return a + ab * v + ac * w


def point_triangle_distance(p: np.ndarray, verts: np.ndarray) -> float:
    return float(np.linalg.norm(p - closest_point_on_triangle(p, verts)))


def triangle_barycentric(p: np.ndarray, verts: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of the in-plane projection of p."""
    a, b, c = verts
    ab, ac, ap = b - a, c - a, p - a
    m = np.array([[ab @ ab, ab @ ac], [ab @ ac, ac @ ac]])
    rhs = np.array([ab @ ap, ac @ ap])
    uv = np.linalg.solve(m, rhs)
    return np.array([1.0 - uv[0] - uv[1], uv[0], uv[1]])


def tet_barycentric(p: np.ndarray, verts: np.ndarray) -> np.ndarray:
    m = np.vstack([np.ones(4), verts.T])
    rhs = np.concatenate([[1.0], p])
    return np.linalg.solve(m, rhs)


def point_tet_distance(p: np.ndarray, verts: np.ndarray) -> float:
    bary = tet_barycentric(p, verts)
    if np.all(bary >= -1e-12):
        return 0.0
    faces = ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))
    return min(point_triangle_distance(p, verts[list(f)]) for f in faces)


# ---------------------------------------------------------------------------
# adaptive point sets
#
# Sub-elements are tracked by the barycentric coordinates of their vertices
# in the parent element, so the returned `bary` block always refers to the
# parent (which is what shape-function evaluation needs).

_TRI_CHILDREN = None
_TET_CHILDREN = None


def _tri_children():
    global _TRI_CHILDREN
    if _TRI_CHILDREN is None:
        e = np.eye(3)
        m01, m12, m02 = (e[0] + e[1]) / 2, (e[1] + e[2]) / 2, (e[0] + e[2]) / 2
        _TRI_CHILDREN = [
            np.array([e[0], m01, m02]),
            np.array([m01, e[1], m12]),
            np.array([m02, m12, e[2]]),
            np.array([m01, m12, m02]),
        ]
    return _TRI_CHILDREN


def _tet_children():
    global _TET_CHILDREN
    if _TET_CHILDREN is None:
        e = np.eye(4)
        m = {}
        for i in range(4):
            for j in range(i + 1, 4):
                m[(i, j)] = (e[i] + e[j]) / 2
        corners = [
            np.array([e[0], m[(0, 1)], m[(0, 2)], m[(0, 3)]]),
            np.array([e[1], m[(0, 1)], m[(1, 2)], m[(1, 3)]]),
            np.array([e[2], m[(0, 2)], m[(1, 2)], m[(2, 3)]]),
            np.array([e[3], m[(0, 3)], m[(1, 3)], m[(2, 3)]]),
        ]
        # central octahedron split along the (m01, m23) diagonal
        ring = [m[(0, 2)], m[(1, 2)], m[(1, 3)], m[(0, 3)]]
        center = [
            np.array([m[(0, 1)], m[(2, 3)], ring[k], ring[(k + 1) % 4]])
            for k in range(4)
        ]
        _TET_CHILDREN = corners + center
    return _TET_CHILDREN


def _emit_triangle(parent_verts, B, rule):
    """Evaluate `rule` on the sub-triangle with parent-bary vertices B."""
    bary = rule.points @ B  # (n, 3) in parent coordinates
    pts = bary @ parent_verts
    area = triangle_area(B @ parent_verts)
    w = rule.weights * (2.0 * area)
    return pts, w, bary


def _emit_tet(parent_verts, B, rule):
    bary = rule.points @ B
    pts = bary @ parent_verts
    vol = abs(tet_volume(B @ parent_verts))
    w = rule.weights * (6.0 * vol)
    return pts, w, bary


def triangle_rule_for_point(verts: np.ndarray, y: np.ndarray, cfg: QuadConfig):
    """Quadrature point set on a triangle adapted to evaluation point y.

    Returns ``(points, weights, bary)`` where `bary` is barycentric in the
    original triangle.  Dispatch: y on the closure -> Duffy (split at y when
    it is not a vertex); y within ``near_ratio`` diameters -> graded
    quadrisection; otherwise the regular surface rule.
    """
    verts = np.asarray(verts, dtype=float)
    y = np.asarray(y, dtype=float)
    regular = gauss_triangle(cfg.surface_order)
    duffy = duffy_triangle(cfg.surface_singular_order)
    out = []

    def visit(B, depth):
        sub = B @ verts
        # cheap far-field reject: dist >= |y-c| - R and diam <= 2R
        c = sub.mean(axis=0)
        R = np.sqrt(((sub - c) ** 2).sum(axis=1).max())
        lb = np.sqrt(((y - c) ** 2).sum()) - R
        if lb >= cfg.near_ratio * 2.0 * R and lb > 0.0:
            out.append(_emit_triangle(verts, B, regular))
            return
        diam = triangle_diameter(sub)
        d = point_triangle_distance(y, sub)
        if d <= cfg.on_element_tol * max(diam, 1.0):
            lam = triangle_barycentric(y, sub)
            k = int(np.argmax(lam))
            if lam[k] >= 1.0 - 1e-9:
                order = [k, (k + 1) % 3, (k + 2) % 3]
                out.append(_emit_triangle(verts, B[order], duffy))
            else:
                area = triangle_area(sub)
                lam_parent = lam @ B
                for i in range(3):
                    Bsub = np.array([lam_parent, B[i], B[(i + 1) % 3]])
                    if triangle_area(Bsub @ verts) > 1e-12 * area:
                        out.append(_emit_triangle(verts, Bsub, duffy))
            return
        if d < cfg.near_ratio * diam and depth < cfg.max_depth:
            for C in _tri_children():
                visit(C @ B, depth + 1)
            return
        out.append(_emit_triangle(verts, B, regular))

    visit(np.eye(3), 0)
    pts = np.concatenate([o[0] for o in out])
    w = np.concatenate([o[1] for o in out])
    bary = np.concatenate([o[2] for o in out])
    return pts, w, bary


def tet_rule_for_point(verts: np.ndarray, y: np.ndarray, cfg: QuadConfig):
    """Quadrature point set on a tetrahedron adapted to evaluation point y.

    Same contract as :func:`triangle_rule_for_point`.  A point inside the tet
    (or on a face/edge) splits it into up to four sub-tets coned at y, each
    integrated with the Duffy collapse.
    """
    verts = np.asarray(verts, dtype=float)
    y = np.asarray(y, dtype=float)
    regular = gauss_tet(cfg.volume_order)
    duffy = duffy_tet(cfg.volume_singular_order)
    out = []

    def visit(B, depth):
        sub = B @ verts
        c = sub.mean(axis=0)
        R = np.sqrt(((sub - c) ** 2).sum(axis=1).max())
        lb = np.sqrt(((y - c) ** 2).sum()) - R
        if lb >= cfg.near_ratio * 2.0 * R and lb > 0.0:
            out.append(_emit_tet(verts, B, regular))
            return
        diam = tet_diameter(sub)
        lam = tet_barycentric(y, sub)
        on_closure = np.all(lam >= -cfg.on_element_tol)
        if on_closure:
            k = int(np.argmax(lam))
            if lam[k] >= 1.0 - 1e-9:
                order = [k] + [i for i in range(4) if i != k]
                out.append(_emit_tet(verts, B[order], duffy))
            else:
                vol = abs(tet_volume(sub))
                lam_parent = lam @ B
                faces = ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))
                for f in faces:
                    Bsub = np.vstack([lam_parent[None, :], B[list(f)]])
                    if abs(tet_volume(Bsub @ verts)) > 1e-12 * vol:
                        out.append(_emit_tet(verts, Bsub, duffy))
            return
        d = point_tet_distance(y, sub)
        if d < cfg.near_ratio * diam and depth < cfg.max_depth:
            for C in _tet_children():
                visit(C @ B, depth + 1)
            return
        out.append(_emit_tet(verts, B, regular))

    visit(np.eye(4), 0)
    pts = np.concatenate([o[0] for o in out])
    w = np.concatenate([o[1] for o in out])
    bary = np.concatenate([o[2] for o in out])
    return pts, w, bary


# ---------------------------------------------------------------------------
# integral front ends


def integrate_triangle(verts, kernel, order: int = 4) -> float:
    """Regular Gauss integration of kernel(x) over one triangle."""
    verts = np.asarray(verts, dtype=float)
    rule = gauss_triangle(order)
    pts, w, _ = _emit_triangle(verts, np.eye(3), rule)
    return float(w @ kernel(pts))


def integrate_tet(verts, kernel, order: int = 2) -> float:
    verts = np.asarray(verts, dtype=float)
    rule = gauss_tet(order)
    pts, w, _ = _emit_tet(verts, np.eye(4), rule)
    return float(w @ kernel(pts))


def singular_triangle_integral(verts, y, kernel, cfg: QuadConfig | None = None) -> float:
    """Integrate a weakly singular kernel over a triangle containing y.

    The triangle is split at y (unless y is a vertex) and each piece is
    integrated with the Duffy transform.  Raises ``ValueError`` when y lies
    outside the closed triangle.
    """
    cfg = cfg or QuadConfig()
    verts = np.asarray(verts, dtype=float)
    y = np.asarray(y, dtype=float)
    d = point_triangle_distance(y, verts)
    if d > cfg.on_element_tol * max(triangle_diameter(verts), 1.0):
        raise ValueError("singular point lies outside the closed triangle")
    pts, w, _ = triangle_rule_for_point(verts, y, cfg)
    return float(w @ kernel(pts))


def near_singular_triangle_integral(verts, y, kernel, cfg: QuadConfig | None = None) -> float:
    """Integrate over a triangle with y on, near, or far from the element."""
    cfg = cfg or QuadConfig()
    pts, w, _ = triangle_rule_for_point(np.asarray(verts, float), np.asarray(y, float), cfg)
    return float(w @ kernel(pts))


def near_singular_tet_integral(verts, y, kernel, cfg: QuadConfig | None = None) -> float:
    """Integrate a (possibly 1/r^2-singular) kernel over a tetrahedron.

    y may be a vertex, inside, on a face, near the element, or far away;
    the point set adapts accordingly.  Integrability of the kernel is the
    caller's responsibility.
    """
    cfg = cfg or QuadConfig()
    pts, w, _ = tet_rule_for_point(np.asarray(verts, float), np.asarray(y, float), cfg)
    return float(w @ kernel(pts))


def triangle_batch_points(verts_batch: np.ndarray, rule: QuadRule):
    """Regular rule applied to a batch of triangles.

    Returns ``(points (ne, nq, 3), weights (ne, nq))`` with Jacobians folded
    into the weights.
    """
    pts = np.einsum("qk,nkd->nqd", rule.points, verts_batch)
    e1 = verts_batch[:, 1] - verts_batch[:, 0]
    e2 = verts_batch[:, 2] - verts_batch[:, 0]
    area = 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)
    w = rule.weights[None, :] * (2.0 * area)[:, None]
    return pts, w


def tet_batch_points(verts_batch: np.ndarray, rule: QuadRule):
    pts = np.einsum("qk,nkd->nqd", rule.points, verts_batch)
    vol = np.abs(np.linalg.det(verts_batch[:, 1:] - verts_batch[:, :1])) / 6.0
    w = rule.weights[None, :] * (6.0 * vol)[:, None]
    return pts, w
