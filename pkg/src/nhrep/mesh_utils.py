"""Shared triangle-mesh machinery: edge maps, dihedral angles, sampling.

Everything here works on bare (vertices, triangles) arrays so it can serve
both the labeled input meshes and extracted isosurfaces.
"""

from __future__ import annotations

import numpy as np

from .errors import BoundaryEdge, TopologyError

Array = np.ndarray


def edge_key(i: int, j: int) -> tuple[int, int]:
    return (i, j) if i < j else (j, i)


def build_edge_map(triangles: Array) -> dict[tuple[int, int], list[int]]:
    """Map each undirected edge to the list of incident triangle indices."""
    edges: dict[tuple[int, int], list[int]] = {}
    for t, (i, j, k) in enumerate(triangles):
        for a, b in ((i, j), (j, k), (k, i)):
            edges.setdefault(edge_key(int(a), int(b)), []).append(t)
    return edges


def check_closed_manifold(triangles: Array) -> None:
    """Raise TopologyError unless every edge has exactly two incident faces
    traversed once in each direction (closed, consistently oriented)."""
    directed: dict[tuple[int, int], int] = {}
    for i, j, k in triangles:
        for a, b in ((int(i), int(j)), (int(j), int(k)), (int(k), int(i))):
            directed[(a, b)] = directed.get((a, b), 0) + 1
    for (a, b), cnt in directed.items():
        if cnt > 1:
            raise TopologyError(f"edge ({a},{b}) traversed {cnt} times in the same direction")
        rev = directed.get((b, a), 0)
        if rev == 0:
            raise TopologyError(f"edge ({a},{b}) is open or flipped: no opposite traversal")
        if rev > 1:
            raise TopologyError(f"edge ({b},{a}) traversed {rev} times in the same direction")


def face_normals(vertices: Array, triangles: Array, normalized: bool = True) -> Array:
    v0 = vertices[triangles[:, 0]]
    v1 = vertices[triangles[:, 1]]
    v2 = vertices[triangles[:, 2]]
    n = np.cross(v1 - v0, v2 - v0)
    if normalized:
        lens = np.linalg.norm(n, axis=1)
        lens = np.where(lens > 0, lens, 1.0)
        n = n / lens[:, None]
    return n


def face_areas(vertices: Array, triangles: Array) -> Array:
    v0 = vertices[triangles[:, 0]]
    v1 = vertices[triangles[:, 1]]
    v2 = vertices[triangles[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(v1 - v0, v2 - v0), axis=1)


def interior_dihedral_deg(
    vertices: Array,
    triangles: Array,
    edge: tuple[int, int],
    faces: list[int],
    normals: Array | None = None,
) -> float:
    """Interior dihedral angle in degrees across ``edge``, in (0, 360).

    Measured inside the solid assuming outward-oriented triangles: 90 for a
    box edge, 180 for coplanar faces, 270 for a re-entrant step.
    """
    if len(faces) != 2:
        raise BoundaryEdge(f"edge {edge} has {len(faces)} incident faces, need 2")
    fa, fb = faces
    if normals is None:
        sub = triangles[[fa, fb]]
        na, nb = face_normals(vertices, sub)
    else:
        na, nb = normals[fa], normals[fb]
    # Edge direction as traversed by face fa (consistent orientation means
    # fb traverses it the other way round).
    tri = triangles[fa]
    a, b = edge
    for u, v in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
        if {int(u), int(v)} == {a, b}:
            e = vertices[int(v)] - vertices[int(u)]
            break
    else:
        raise TopologyError(f"edge {edge} not found in face {fa}")
    elen = np.linalg.norm(e)
    if elen == 0:
        raise TopologyError(f"edge {edge} has zero length")
    e = e / elen
    sin_d = float(np.dot(np.cross(na, nb), e))
    cos_d = float(np.dot(na, nb))
    return 180.0 - np.degrees(np.arctan2(sin_d, cos_d))


def sample_on_triangles(
    vertices: Array,
    triangles: Array,
    count: int,
    rng: np.random.Generator,
) -> tuple[Array, Array]:
    """Area-uniform samples on a triangle soup: (points, face index per point)."""
    areas = face_areas(vertices, triangles)
    total = areas.sum()
    if total <= 0:
        raise ValueError("triangle set has zero total area")
    faces = rng.choice(len(triangles), size=count, p=areas / total)
    u = rng.random(count)
    v = rng.random(count)
    su = np.sqrt(u)
    b0 = 1.0 - su
    b1 = su * (1.0 - v)
    b2 = su * v
    tri = triangles[faces]
    pts = (
        b0[:, None] * vertices[tri[:, 0]]
        + b1[:, None] * vertices[tri[:, 1]]
        + b2[:, None] * vertices[tri[:, 2]]
    )
    return pts, faces


def triangle_areas_positive(vertices: Array, triangles: Array, floor: float = 1e-12) -> Array:
    """Boolean mask of triangles whose area exceeds ``floor``."""
    return face_areas(vertices, triangles) > floor


def write_obj(path, vertices: Array, triangles: Array, normals: Array | None = None) -> None:
    """Indexed triangle text output (positions, optional per-vertex normals)."""
    with open(path, "w", encoding="utf-8") as f:
        for v in vertices:
            f.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        if normals is not None:
            for n in normals:
                f.write(f"vn {float(n[0])!r} {float(n[1])!r} {float(n[2])!r}\n")
        for t in triangles:
            i, j, k = (int(t[0]) + 1, int(t[1]) + 1, int(t[2]) + 1)
            if normals is not None:
                f.write(f"f {i}//{i} {j}//{j} {k}//{k}\n")
            else:
                f.write(f"f {i} {j} {k}\n")
