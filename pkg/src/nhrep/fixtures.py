"""Desk-scale solid fixtures with analytic occupancy/SDF oracles.

All closed fixtures are built pre-normalized (centered, max half-extent
0.9) so their analytic oracles work directly in the training frame.
"""

from __future__ import annotations

import numpy as np

from .brep_io import BRepMesh
from .patch_graph import CONCAVE, CONVEX, GraphEdge, PatchGraph

Array = np.ndarray


def _mesh(verts, tris, patches, planar=None, uv=None) -> BRepMesh:
    return BRepMesh(
        vertices=np.asarray(verts, dtype=np.float64),
        triangles=np.asarray(tris, dtype=np.int64),
        face_patch=np.asarray(patches, dtype=np.int64),
        planar=None if planar is None else np.asarray(planar, dtype=bool),
        uv=uv or {},
    )


def box_mesh(lo, hi) -> BRepMesh:
    """Axis-aligned box; patches 0..5 = -x,+x,-y,+y,-z,+z."""
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    v = np.array([
        [x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
        [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1],
    ])
    quads = [
        ([0, 4, 7, 3], 0),   # -x
        ([1, 2, 6, 5], 1),   # +x
        ([0, 1, 5, 4], 2),   # -y
        ([2, 3, 7, 6], 3),   # +y
        ([0, 3, 2, 1], 4),   # -z
        ([4, 5, 6, 7], 5),   # +z
    ]
    tris, patches = [], []
    for (a, b, c, d), p in quads:
        tris += [[a, b, c], [a, c, d]]
        patches += [p, p]
    return _mesh(v, tris, patches)


def cube_mesh(half: float = 0.9) -> BRepMesh:
    return box_mesh((-half, -half, -half), (half, half, half))


def cube_inside(pts: Array, half: float = 0.9) -> Array:
    return np.abs(np.asarray(pts)).max(axis=-1) < half


def box_sdf(pts: Array, half: float = 0.9) -> Array:
    """Exact signed distance to the cube boundary."""
    q = np.abs(np.asarray(pts, dtype=float)) - half
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(q.max(axis=-1), 0.0)
    return outside + inside


def cube_field_max(pts: Array, half: float = 0.5) -> Array:
    """max(|x|,|y|,|z|) - half: the crease-carrying cube implicit."""
    return np.abs(np.asarray(pts, dtype=float)).max(axis=-1) - half


def cube_field_max_grad(pts: Array, half: float = 0.5) -> tuple[Array, Array]:
    p = np.asarray(pts, dtype=float)
    a = np.abs(p)
    vals = a.max(axis=-1) - half
    best = a.argmax(axis=-1)
    g = np.zeros_like(p)
    idx = np.arange(len(p))
    g[idx, best] = np.sign(p[idx, best])
    return vals, g


def sphere_sdf(pts: Array, radius: float = 0.5, center=(0.0, 0.0, 0.0)) -> Array:
    return np.linalg.norm(np.asarray(pts, dtype=float) - np.asarray(center), axis=-1) - radius


def sphere_sdf_grad(pts: Array, radius: float = 0.5, center=(0.0, 0.0, 0.0)) -> tuple[Array, Array]:
    d = np.asarray(pts, dtype=float) - np.asarray(center)
    r = np.linalg.norm(d, axis=-1)
    safe = np.where(r > 0, r, 1.0)
    return r - radius, d / safe[:, None]


def plane_field(pts: Array, axis: int = 0, offset: float = 0.0) -> Array:
    return np.asarray(pts, dtype=float)[..., axis] - offset


def _circle_ring(radius: float, z: float, segments: int) -> Array:
    th = 2.0 * np.pi * np.arange(segments) / segments
    return np.column_stack([radius * np.cos(th), radius * np.sin(th), np.full(segments, z)])


def cylinder_mesh(radius: float = 0.9, half_height: float = 0.9, segments: int = 32) -> BRepMesh:
    """Closed cylinder; patches: 0 side (curved), 1 bottom, 2 top."""
    bot = _circle_ring(radius, -half_height, segments)
    top = _circle_ring(radius, half_height, segments)
    cb = np.array([[0.0, 0.0, -half_height]])
    ct = np.array([[0.0, 0.0, half_height]])
    v = np.vstack([bot, top, cb, ct])
    ib, it = 0, segments
    icb, ict = 2 * segments, 2 * segments + 1
    tris, patches, planar = [], [], []
    for i in range(segments):
        j = (i + 1) % segments
        tris += [[ib + i, ib + j, it + j], [ib + i, it + j, it + i]]
        patches += [0, 0]
        planar += [False, False]
    for i in range(segments):
        j = (i + 1) % segments
        tris.append([icb, ib + j, ib + i])
        patches.append(1)
        planar.append(True)
        tris.append([ict, it + i, it + j])
        patches.append(2)
        planar.append(True)
    return _mesh(v, tris, patches, planar)


def _square_rim(half: float, z: float, segments: int) -> Array:
    """Square boundary sampled at circle angles; corners land exactly when
    segments is a multiple of 8."""
    th = 2.0 * np.pi * np.arange(segments) / segments
    c, s = np.cos(th), np.sin(th)
    scale = half / np.maximum(np.abs(c), np.abs(s))
    return np.column_stack([scale * c, scale * s, np.full(segments, z)])


def cube_minus_cylinder_mesh(
    half: float = 0.9, radius: float = 0.4, segments: int = 32
) -> BRepMesh:
    """Cube with a cylindrical hole drilled along z.

    Patches: 0..3 sides (-x,+x,-y,+y), 4 bottom ring, 5 top ring,
    6 hole wall (curved).
    """
    assert segments % 8 == 0, "segments must be a multiple of 8 to hit square corners"
    sq_b = _square_rim(half, -half, segments)
    sq_t = _square_rim(half, half, segments)
    ci_b = _circle_ring(radius, -half, segments)
    ci_t = _circle_ring(radius, half, segments)
    v = np.vstack([sq_b, sq_t, ci_b, ci_t])
    iqb, iqt, icb, ict = 0, segments, 2 * segments, 3 * segments

    tris, patches, planar = [], [], []

    def quad(a, b, c, d, p, flat=True):
        tris.append([a, b, c])
        tris.append([a, c, d])
        patches.extend([p, p])
        planar.extend([flat, flat])

    # Angle index -> which box side (0:-x,1:+x,2:-y,3:+y) a rim segment lies on.
    def side_of(i):
        th = 2.0 * np.pi * (i + 0.5) / segments
        c, s = np.cos(th), np.sin(th)
        if abs(c) >= abs(s):
            return 1 if c > 0 else 0
        return 3 if s > 0 else 2

    for i in range(segments):
        j = (i + 1) % segments
        quad(iqb + i, iqb + j, iqt + j, iqt + i, side_of(i))          # outer walls
        quad(iqt + i, iqt + j, ict + j, ict + i, 5)                    # top ring
        quad(iqb + j, iqb + i, icb + i, icb + j, 4)                    # bottom ring
        quad(icb + i, ict + i, ict + j, icb + j, 6, flat=False)        # hole wall
    return _mesh(v, tris, patches, planar)


def cube_minus_cylinder_inside(pts: Array, half: float = 0.9, radius: float = 0.4) -> Array:
    p = np.asarray(pts, dtype=float)
    in_box = np.abs(p).max(axis=-1) < half
    out_cyl = p[..., 0] ** 2 + p[..., 1] ** 2 > radius**2
    return in_box & out_cyl


def triangulate_polygon(poly: Array) -> list[tuple[int, int, int]]:
    """Ear-clip a simple CCW polygon into triangles (indices into poly)."""
    poly = np.asarray(poly, dtype=float)
    idx = list(range(len(poly)))

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    def inside(p, a, b, c):
        d1 = cross(a, b, p)
        d2 = cross(b, c, p)
        d3 = cross(c, a, p)
        return d1 >= 0 and d2 >= 0 and d3 >= 0

    tris = []
    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 10000:
            raise ValueError("polygon triangulation failed (not simple or not CCW?)")
        n = len(idx)
        for k in range(n):
            i0, i1, i2 = idx[(k - 1) % n], idx[k], idx[(k + 1) % n]
            a, b, c = poly[i0], poly[i1], poly[i2]
            if cross(a, b, c) <= 0:
                continue
            if any(
                inside(poly[j], a, b, c)
                for j in idx
                if j not in (i0, i1, i2)
            ):
                continue
            tris.append((i0, i1, i2))
            del idx[k]
            break
        else:
            raise ValueError("no ear found; polygon is not simple CCW")
    tris.append(tuple(idx))
    return tris


def extrude_polygon(poly: Array, z0: float, z1: float) -> BRepMesh:
    """Extrude a CCW simple polygon along z.

    Patches: one per polygon edge (0..n-1), then bottom cap (n), top cap (n+1).
    """
    poly = np.asarray(poly, dtype=float)
    n = len(poly)
    bot = np.column_stack([poly, np.full(n, z0)])
    top = np.column_stack([poly, np.full(n, z1)])
    v = np.vstack([bot, top])
    tris, patches = [], []
    for i in range(n):
        j = (i + 1) % n
        tris += [[i, j, n + j], [i, n + j, n + i]]
        patches += [i, i]
    for a, b, c in triangulate_polygon(poly):
        tris.append([a, c, b])            # bottom cap, normal -z
        patches.append(n)
        tris.append([n + a, n + b, n + c])  # top cap, normal +z
        patches.append(n + 1)
    return _mesh(v, tris, patches)


def l_bracket_mesh(
    width: float = 1.8, height: float = 1.8, thickness: float = 0.72, depth: float = 1.8
) -> BRepMesh:
    """L-shaped extrusion with one concave edge, centered at the origin.

    Patches 0..5 follow the cross-section edges (the concave edge sits
    between patches 2 and 3); 6/7 are the caps.
    """
    w, h, t = width, height, thickness
    poly = np.array([
        [0, 0], [w, 0], [w, t], [t, t], [t, h], [0, h],
    ]) - np.array([w / 2, h / 2])
    return extrude_polygon(poly, -depth / 2, depth / 2)


def l_bracket_inside(
    pts: Array,
    width: float = 1.8,
    height: float = 1.8,
    thickness: float = 0.72,
    depth: float = 1.8,
) -> Array:
    p = np.asarray(pts, dtype=float)
    x = p[..., 0] + width / 2
    y = p[..., 1] + height / 2
    z = p[..., 2]
    in_bounds = (x > 0) & (x < width) & (y > 0) & (y < height) & (np.abs(z) < depth / 2)
    in_cut = (x > thickness) & (y > thickness)
    return in_bounds & ~in_cut


def star_prism_mesh(points: int = 5, r_outer: float = 0.9, r_inner: float = 0.45,
                    half_depth: float = 0.9) -> BRepMesh:
    """Star-profile prism: wall convexity alternates around the ring, which
    drives tree construction into patch decomposition."""
    n = 2 * points
    th = 2.0 * np.pi * np.arange(n) / n
    r = np.where(np.arange(n) % 2 == 0, r_outer, r_inner)
    poly = np.column_stack([r * np.cos(th), r * np.sin(th)])
    return extrude_polygon(poly, -half_depth, half_depth)


def boss_plate_mesh(
    half: float = 0.9,
    plate_top: float = 0.0,
    plate_bottom: float = -0.6,
    boss_radius: float = 0.4,
    boss_top: float = 0.5,
    segments: int = 32,
) -> BRepMesh:
    """Plate with a cylindrical boss: the plate's top ring has a convex outer
    rim and a concave inner rim (the decomposition testbed).  The ring is
    triangulated in two radial bands so it has interior faces away from
    both rims.

    Patches: 0..3 plate sides, 4 plate bottom, 5 plate top ring,
    6 boss wall (curved), 7 boss cap.
    """
    assert segments % 8 == 0
    sq_b = _square_rim(half, plate_bottom, segments)
    sq_t = _square_rim(half, plate_top, segments)
    mid = _square_rim(half, plate_top, segments)
    mid[:, :2] = 0.5 * (sq_t[:, :2] + _circle_ring(boss_radius, plate_top, segments)[:, :2])
    ci_b = _circle_ring(boss_radius, plate_top, segments)
    ci_t = _circle_ring(boss_radius, boss_top, segments)
    cc = np.array([[0.0, 0.0, plate_bottom], [0.0, 0.0, boss_top]])
    v = np.vstack([sq_b, sq_t, mid, ci_b, ci_t, cc])
    iqb, iqt, imd = 0, segments, 2 * segments
    icb, ict = 3 * segments, 4 * segments
    icen_b, icen_t = 5 * segments, 5 * segments + 1

    tris, patches, planar = [], [], []

    def quad(a, b, c, d, p, flat=True):
        tris.append([a, b, c])
        tris.append([a, c, d])
        patches.extend([p, p])
        planar.extend([flat, flat])

    def side_of(i):
        th = 2.0 * np.pi * (i + 0.5) / segments
        c, s = np.cos(th), np.sin(th)
        if abs(c) >= abs(s):
            return 1 if c > 0 else 0
        return 3 if s > 0 else 2

    for i in range(segments):
        j = (i + 1) % segments
        quad(iqb + i, iqb + j, iqt + j, iqt + i, side_of(i))          # plate walls
        quad(iqt + i, iqt + j, imd + j, imd + i, 5)                    # ring, outer band
        quad(imd + i, imd + j, icb + j, icb + i, 5)                    # ring, inner band
        quad(icb + i, icb + j, ict + j, ict + i, 6, flat=False)        # boss wall
        tris.append([icen_b, iqb + j, iqb + i])                        # plate bottom fan
        patches.append(4)
        planar.append(True)
        tris.append([icen_t, ict + i, ict + j])                        # boss cap fan
        patches.append(7)
        planar.append(True)
    return _mesh(v, tris, patches, planar)


def ridge_pair_mesh(n: int = 16, waves: int = 2, amp: float = 0.3) -> BRepMesh:
    """Two sheets meeting along a wavy ridge whose dihedral oscillates
    about 180 degrees.  Open surface: only the shared chain matters.
    Patches: 0 left sheet, 1 right sheet."""
    y = np.linspace(-0.9, 0.9, n + 1)
    ridge_z = amp * np.sin(2.0 * np.pi * waves * np.arange(n + 1) / n + np.pi / (2 * n))
    left = np.column_stack([np.full(n + 1, -0.9), y, np.zeros(n + 1)])
    ridge = np.column_stack([np.zeros(n + 1), y, ridge_z])
    right = np.column_stack([np.full(n + 1, 0.9), y, np.zeros(n + 1)])
    v = np.vstack([left, ridge, right])
    il, ig, ir = 0, n + 1, 2 * (n + 1)
    tris, patches = [], []
    for j in range(n):
        tris += [[il + j, ig + j, ig + j + 1], [il + j, ig + j + 1, il + j + 1]]
        patches += [0, 0]
        tris += [[ig + j, ir + j, ir + j + 1], [ig + j, ir + j + 1, ig + j + 1]]
        patches += [1, 1]
    return _mesh(v, tris, patches)


def fold_pair_mesh(fold_deg: float = 25.0) -> BRepMesh:
    """Two rectangles meeting at a fold of ``fold_deg`` below flat (i.e.
    dihedral 180 - fold_deg): just under the sharpness threshold when
    fold_deg < 30."""
    a = np.radians(fold_deg)
    v = np.array([
        [0, 0, 0], [0, 1, 0],
        [-1, 0, 0], [-1, 1, 0],
        [np.cos(a), 0, np.sin(a)], [np.cos(a), 1, np.sin(a)],
    ])
    tris = [[2, 0, 1], [2, 1, 3], [0, 4, 5], [0, 5, 1]]
    patches = [0, 0, 1, 1]
    return _mesh(v, tris, patches)


def icosphere_mesh(subdiv: int = 3, radius: float = 0.9, patches_by_hemisphere: bool = False) -> BRepMesh:
    """Subdivided icosahedron projected to a sphere; one patch, or two split
    at the equator when ``patches_by_hemisphere``."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=float)
    faces = [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ]
    verts = verts / np.linalg.norm(verts, axis=1)[:, None]
    vlist = [tuple(v) for v in verts]
    cache: dict[tuple[int, int], int] = {}

    def midpoint(i, j):
        key = (min(i, j), max(i, j))
        if key in cache:
            return cache[key]
        m = np.array(vlist[i]) + np.array(vlist[j])
        m = m / np.linalg.norm(m)
        vlist.append(tuple(m))
        cache[key] = len(vlist) - 1
        return cache[key]

    for _ in range(subdiv):
        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]
        faces = new_faces

    v = radius * np.array(vlist)
    tris = np.array(faces, dtype=np.int64)
    if patches_by_hemisphere:
        cz = v[tris].mean(axis=1)[:, 2]
        patches = (cz >= 0).astype(np.int64)
    else:
        patches = np.zeros(len(tris), dtype=np.int64)
    return _mesh(v, tris, patches, planar=np.zeros(len(tris), dtype=bool))


def two_cubes_mesh(gap: float = 0.4, half: float = 0.6) -> BRepMesh:
    """Two disjoint cubes in one mesh (12 patches, two graph components)."""
    a = box_mesh((-2 * half - gap, -half, -half), (-gap, half, half))
    b = box_mesh((gap, -half, -half), (gap + 2 * half, half, half))
    nv = len(a.vertices)
    return _mesh(
        np.vstack([a.vertices, b.vertices]),
        np.vstack([a.triangles, b.triangles + nv]),
        np.concatenate([a.face_patch, b.face_patch + 6]),
    )


def notched_prism_graph() -> PatchGraph:
    """Eight-patch ring whose notch walls share concave curves with the
    notch floor: the canonical mixed max/min construction example."""
    g = PatchGraph(n_patches=8)
    labels = [CONVEX, CONVEX, CONVEX, CONVEX, CONCAVE, CONVEX, CONCAVE, CONVEX]
    for i in range(8):
        j = (i + 1) % 8
        g.edges.append(GraphEdge(i, j, labels[i]))
    return g


def all_concave_graph(n: int = 4) -> PatchGraph:
    """Ring of patches joined only by concave curves."""
    g = PatchGraph(n_patches=n)
    for i in range(n):
        g.edges.append(GraphEdge(i, (i + 1) % n, CONCAVE))
    return g
