"""Volume/boundary discretizations of the computational domains.

Two domain families are provided: the unit cube ``[0,1]^3`` (tetrahedral
volume mesh plus triangulated boundary, Dirichlet/Neumann partition) and the
unit sphere (boundary-only icosphere).  A coned ball mesh built on top of the
icosphere is available for volume-potential oracles with closed-form values.
Meshes are immutable after generation.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

# triangle part tags
DIRICHLET = 0
NEUMANN = 1

# vertex class tags
INTERIOR = 0
BOUNDARY_D = 1
BOUNDARY_N = 2
INTERFACE = 3

CUBE_PARTITIONS = ("bottom_face_dirichlet",)
SPHERE_PARTITIONS = ("all_neumann", "bottom_cap_dirichlet")


@dataclass(frozen=True)
class DomainMesh:
    """Tetrahedral volume mesh with a partitioned triangulated boundary.

    ``boundary_triangles`` are oriented so that
    ``cross(v1 - v0, v2 - v0)`` points out of the volume; ``triangle_normal``
    stores the unit outward normals.  Boundary-only meshes (sphere) carry
    empty volume arrays.
    """

    vertices: np.ndarray  # (nv, 3) float
    tetrahedra: np.ndarray  # (nt, 4) int, positively oriented
    boundary_triangles: np.ndarray  # (nf, 3) int, outward oriented
    triangle_part: np.ndarray  # (nf,) int, DIRICHLET or NEUMANN
    triangle_normal: np.ndarray  # (nf, 3) float, unit outward
    vertex_class: np.ndarray  # (nv,) int
    kind: str  # "cube", "sphere" or "ball"
    level: int  # subdivisions per edge (cube) / refinement level (sphere, ball)
    partition: str

    @property
    def has_volume(self) -> bool:
        return self.tetrahedra.shape[0] > 0

    def __repr__(self):  # keep pytest output short
        return (
            f"DomainMesh({self.kind}, level={self.level}, nv={len(self.vertices)}, "
            f"nt={len(self.tetrahedra)}, nf={len(self.boundary_triangles)})"
        )


def triangle_areas(mesh: DomainMesh) -> np.ndarray:
    v = mesh.vertices[mesh.boundary_triangles]
    return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)


def triangle_centroids(mesh: DomainMesh) -> np.ndarray:
    return mesh.vertices[mesh.boundary_triangles].mean(axis=1)


def triangle_diameters(mesh: DomainMesh) -> np.ndarray:
    v = mesh.vertices[mesh.boundary_triangles]
    e = np.stack(
        [v[:, 1] - v[:, 0], v[:, 2] - v[:, 1], v[:, 0] - v[:, 2]], axis=1
    )
    return np.linalg.norm(e, axis=2).max(axis=1)


def tet_volumes(mesh: DomainMesh) -> np.ndarray:
    v = mesh.vertices[mesh.tetrahedra]
    return np.linalg.det(v[:, 1:] - v[:, :1]) / 6.0


def tet_centroids(mesh: DomainMesh) -> np.ndarray:
    return mesh.vertices[mesh.tetrahedra].mean(axis=1)


def tet_diameters(mesh: DomainMesh) -> np.ndarray:
    v = mesh.vertices[mesh.tetrahedra]
    pairs = list(itertools.combinations(range(4), 2))
    d = np.stack([np.linalg.norm(v[:, i] - v[:, j], axis=1) for i, j in pairs], axis=1)
    return d.max(axis=1)


def boundary_vertex_ids(mesh: DomainMesh) -> np.ndarray:
    return np.flatnonzero(mesh.vertex_class != INTERIOR)


def _classify_vertices(nv: int, tris: np.ndarray, part: np.ndarray) -> np.ndarray:
    cls = np.full(nv, INTERIOR, dtype=np.int8)
    on_d = np.zeros(nv, dtype=bool)
    on_n = np.zeros(nv, dtype=bool)
    d_tris = tris[part == DIRICHLET]
    n_tris = tris[part == NEUMANN]
    on_d[np.unique(d_tris)] = True
    on_n[np.unique(n_tris)] = True
    cls[on_d & ~on_n] = BOUNDARY_D
    cls[on_n & ~on_d] = BOUNDARY_N
    cls[on_d & on_n] = INTERFACE
    return cls


def _boundary_faces_of_tets(vertices: np.ndarray, tets: np.ndarray):
    """Faces belonging to exactly one tet, oriented outward via the owner."""
    faces = {}
    local = ((1, 2, 3, 0), (0, 2, 3, 1), (0, 1, 3, 2), (0, 1, 2, 3))
    for t, tet in enumerate(tets):
        for a, b, c, opp in local:
            key = tuple(sorted((tet[a], tet[b], tet[c])))
            if key in faces:
                faces[key] = None  # interior face, seen twice
            else:
                faces[key] = (tet[a], tet[b], tet[c], tet[opp])
    tris = []
    for key, payload in sorted(faces.items()):
        if payload is None:
            continue
        i, j, k, opp = payload
        n = np.cross(vertices[j] - vertices[i], vertices[k] - vertices[i])
        centroid = (vertices[i] + vertices[j] + vertices[k]) / 3.0
        if np.dot(n, centroid - vertices[opp]) < 0.0:
            j, k = k, j
        tris.append((i, j, k))
    return np.asarray(tris, dtype=np.int64)


def _outward_normals(vertices: np.ndarray, tris: np.ndarray) -> np.ndarray:
    v = vertices[tris]
    n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def generate_cube_mesh(n: int, partition: str = "bottom_face_dirichlet") -> DomainMesh:
    """Structured unit-cube mesh, n subdivisions per edge.

    Each grid cell is split into 6 tetrahedra around its main diagonal (Kuhn
    subdivision), which yields a conforming mesh with every boundary square
    cut into two triangles.  The Dirichlet part is the face x3 = 0, the
    remaining five faces are Neumann.
    """
    if n < 1:
        raise ValueError(f"cube subdivision count must be >= 1, got {n}")
    if partition not in CUBE_PARTITIONS:
        raise ValueError(f"unknown cube partition {partition!r}; known: {CUBE_PARTITIONS}")

    m = n + 1
    grid = np.arange(m) / n
    xs, ys, zs = np.meshgrid(grid, grid, grid, indexing="ij")
    vertices = np.column_stack([xs.ravel(), ys.ravel(), zs.ravel()])

    def vid(i, j, k):
        return (i * m + j) * m + k

    tets = []
    axes = np.eye(3, dtype=int)
    for i in range(n):
        for j in range(n):
            for k in range(n):
                base = np.array([i, j, k])
                for perm in itertools.permutations(range(3)):
                    p0 = base
                    p1 = p0 + axes[perm[0]]
                    p2 = p1 + axes[perm[1]]
                    p3 = p2 + axes[perm[2]]
                    quad = [vid(*p0), vid(*p1), vid(*p2), vid(*p3)]
                    # odd permutations give negatively oriented tets; swap to fix
                    parity = sum(
                        1
                        for a in range(3)
                        for b in range(a + 1, 3)
                        if perm[a] > perm[b]
                    )
                    if parity % 2 == 1:
                        quad[1], quad[2] = quad[2], quad[1]
                    tets.append(quad)
    tetrahedra = np.asarray(tets, dtype=np.int64)

    tris = _boundary_faces_of_tets(vertices, tetrahedra)
    normals = _outward_normals(vertices, tris)
    centroids = vertices[tris].mean(axis=1)
    part = np.where(centroids[:, 2] < 1e-12, DIRICHLET, NEUMANN).astype(np.int8)
    cls = _classify_vertices(len(vertices), tris, part)

    return DomainMesh(
        vertices=vertices,
        tetrahedra=tetrahedra,
        boundary_triangles=tris,
        triangle_part=part,
        triangle_normal=normals,
        vertex_class=cls,
        kind="cube",
        level=n,
        partition=partition,
    )


_ICO_T = (1.0 + np.sqrt(5.0)) / 2.0
_ICO_VERTS = np.array(
    [
        [-1, _ICO_T, 0], [1, _ICO_T, 0], [-1, -_ICO_T, 0], [1, -_ICO_T, 0],
        [0, -1, _ICO_T], [0, 1, _ICO_T], [0, -1, -_ICO_T], [0, 1, -_ICO_T],
        [_ICO_T, 0, -1], [_ICO_T, 0, 1], [-_ICO_T, 0, -1], [-_ICO_T, 0, 1],
    ],
    dtype=float,
)
_ICO_FACES = np.array(
    [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ],
    dtype=np.int64,
)


def _icosphere(level: int):
    verts = _ICO_VERTS / np.linalg.norm(_ICO_VERTS, axis=1, keepdims=True)
    faces = _ICO_FACES.copy()
    vlist = [v for v in verts]
    for _ in range(level):
        midpoint: dict[tuple[int, int], int] = {}

        def mid(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            if key not in midpoint:
                p = vlist[a] + vlist[b]
                vlist.append(p / np.linalg.norm(p))
                midpoint[key] = len(vlist) - 1
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]
        faces = np.asarray(new_faces, dtype=np.int64)
    verts = np.asarray(vlist)
    # enforce outward orientation
    v = verts[faces]
    n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    inward = np.einsum("ij,ij->i", n, v.mean(axis=1)) < 0.0
    faces[inward] = faces[inward][:, [0, 2, 1]]
    return verts, faces


def generate_sphere_boundary(level: int, partition: str = "all_neumann") -> DomainMesh:
    """Boundary-only icosphere, ``level`` subdivision rounds of the icosahedron.

    All triangles are Neumann by default; ``bottom_cap_dirichlet`` tags the
    panels with centroid x3 < -0.5 as the Dirichlet part (used for mixed-BVP
    tests on the sphere).
    """
    if level < 0:
        raise ValueError("refinement level must be >= 0")
    if partition not in SPHERE_PARTITIONS:
        raise ValueError(f"unknown sphere partition {partition!r}; known: {SPHERE_PARTITIONS}")
    verts, faces = _icosphere(level)
    normals = _outward_normals(verts, faces)
    if partition == "bottom_cap_dirichlet":
        centroids = verts[faces].mean(axis=1)
        part = np.where(centroids[:, 2] < -0.5, DIRICHLET, NEUMANN).astype(np.int8)
    else:
        part = np.full(len(faces), NEUMANN, dtype=np.int8)
    cls = _classify_vertices(len(verts), faces, part)
    return DomainMesh(
        vertices=verts,
        tetrahedra=np.zeros((0, 4), dtype=np.int64),
        boundary_triangles=faces,
        triangle_part=part,
        triangle_normal=normals,
        vertex_class=cls,
        kind="sphere",
        level=level,
        partition=partition,
    )


def generate_ball_mesh(level: int) -> DomainMesh:
    """Unit-ball volume mesh: every icosphere panel coned to the center.

    Supplies the tetrahedral domain with closed-form potential values used by
    the volume-quadrature oracles; all panels are Neumann.
    """
    surf = generate_sphere_boundary(level)
    nv = len(surf.vertices)
    vertices = np.vstack([surf.vertices, np.zeros(3)])
    f = surf.boundary_triangles
    # (v0, v2, v1, center) is positively oriented for outward-oriented panels
    tets = np.column_stack([f[:, 0], f[:, 2], f[:, 1], np.full(len(f), nv)])
    cls = np.concatenate([surf.vertex_class, [INTERIOR]])
    return DomainMesh(
        vertices=vertices,
        tetrahedra=tets,
        boundary_triangles=f,
        triangle_part=surf.triangle_part,
        triangle_normal=surf.triangle_normal,
        vertex_class=cls,
        kind="ball",
        level=level,
        partition=surf.partition,
    )


def refine(mesh: DomainMesh) -> DomainMesh:
    """Uniform refinement by regeneration; part tags are inherited."""
    if mesh.kind == "cube":
        return generate_cube_mesh(2 * mesh.level, mesh.partition)
    if mesh.kind == "sphere":
        return generate_sphere_boundary(mesh.level + 1, mesh.partition)
    if mesh.kind == "ball":
        return generate_ball_mesh(mesh.level + 1)
    raise ValueError(f"cannot refine mesh of kind {mesh.kind!r}")


def dump_mesh(mesh: DomainMesh, path) -> None:
    """Plain-text dump, one section per array, for external visualization."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"vertices {len(mesh.vertices)}\n")
        for v in mesh.vertices:
            fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        fh.write(f"tets {len(mesh.tetrahedra)}\n")
        for t in mesh.tetrahedra:
            fh.write(" ".join(str(i) for i in t) + "\n")
        fh.write(f"tris {len(mesh.boundary_triangles)}\n")
        for t in mesh.boundary_triangles:
            fh.write(" ".join(str(i) for i in t) + "\n")
        fh.write(f"part {len(mesh.triangle_part)}\n")
        for p in mesh.triangle_part:
            fh.write(f"{int(p)}\n")
        fh.write(f"normals {len(mesh.triangle_normal)}\n")
        for v in mesh.triangle_normal:
            fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
