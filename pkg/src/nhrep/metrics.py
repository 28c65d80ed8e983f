"""Conversion-quality metrics: two-sided point distances, normal errors,
sharp-feature distances/angles, signed-distance error, and occupancy IoU.

Field-vs-mesh metrics need a ground-truth signed distance; it comes from
exact closest-point distance to the triangles with the sign decided by a
majority vote of axis-ray crossing parities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import mesh_utils as mu
from .errors import EmptySet, NoFeatures, OpenGroundTruth, TopologyError

Array = np.ndarray

SHARP_ANGLE_DEG = 30.0       # |180 - dihedral| at or above this is a sharp edge
FEATURE_INTERVAL = 0.004     # arc-length spacing of feature samples
SDF_EPS = 1e-9               # relative-error guard in the distance metric


@dataclass
class MetricsReport:
    cd: float
    hd: float
    nae: float
    fcd: float | None
    fae: float | None
    de: float | None
    iou: float | None

    CSV_HEADER = "cd,hd,nae_deg,fcd,fae_deg,de,iou"

    def csv_row(self) -> str:
        def fmt(v):
            return "" if v is None else repr(float(v))

        return ",".join(fmt(v) for v in (self.cd, self.hd, self.nae, self.fcd,
                                         self.fae, self.de, self.iou))


def sample_mesh(vertices: Array, triangles: Array, count: int, seed: int = 0):
    """Area-uniform points with face normals."""
    rng = np.random.default_rng(seed)
    pts, faces = mu.sample_on_triangles(vertices, triangles, count, rng)
    normals = mu.face_normals(vertices, triangles)[faces]
    return pts, normals


def chamfer_hausdorff(pe: Array, pg: Array) -> tuple[float, float]:
    """Two-sided mean (CD) and max (HD) nearest-neighbor distances."""
    pe, pg = np.atleast_2d(pe), np.atleast_2d(pg)
    if len(pe) == 0 or len(pg) == 0:
        raise EmptySet("chamfer/hausdorff needs nonempty point sets")
    d_eg, _ = cKDTree(pg).query(pe)
    d_ge, _ = cKDTree(pe).query(pg)
    cd = 0.5 * (d_eg.mean() + d_ge.mean())
    hd = max(d_eg.max(), d_ge.max())
    return float(cd), float(hd)


def normal_angle_error(pe: Array, ne: Array, pg: Array, ng: Array) -> float:
    """Two-sided mean angle (degrees) between normals at nearest pairs."""
    if len(pe) == 0 or len(pg) == 0:
        raise EmptySet("normal error needs nonempty point sets")
    _, i_eg = cKDTree(pg).query(pe)
    _, i_ge = cKDTree(pe).query(pg)
    a = np.degrees(np.arccos(np.clip(np.einsum("ij,ij->i", ne, ng[i_eg]), -1.0, 1.0)))
    b = np.degrees(np.arccos(np.clip(np.einsum("ij,ij->i", ng, ne[i_ge]), -1.0, 1.0)))
    return float(0.5 * (a.mean() + b.mean()))


# ---------------------------------------------------------------------------
# Sharp-feature sampling
# ---------------------------------------------------------------------------

def _sharp_edges(vertices: Array, triangles: Array, threshold: float):
    edge_map = mu.build_edge_map(np.asarray(triangles))
    normals = mu.face_normals(vertices, triangles)
    out = []
    for edge, faces in edge_map.items():
        if len(faces) != 2:
            continue
        gamma = mu.interior_dihedral_deg(vertices, triangles, edge, faces, normals)
        if abs(180.0 - gamma) >= threshold:
            out.append((edge, gamma))
    return out


def feature_points(
    vertices: Array,
    triangles: Array,
    threshold: float = SHARP_ANGLE_DEG,
    interval: float = FEATURE_INTERVAL,
):
    """Resample sharp edge chains at fixed arc-length spacing.

    Returns (points, dihedral per point in degrees); raises NoFeatures when
    the mesh has no edge at or past the sharpness threshold."""
    sharp = _sharp_edges(vertices, triangles, threshold)
    if not sharp:
        raise NoFeatures(f"no edge deviates from flat by >= {threshold} degrees")

    adj: dict[int, list[int]] = {}
    for k, ((u, v), _) in enumerate(sharp):
        adj.setdefault(u, []).append(k)
        adj.setdefault(v, []).append(k)
    junctions = {v for v, inc in adj.items() if len(inc) != 2}

    used = [False] * len(sharp)
    pts_out, ang_out = [], []

    def resample(chain_verts: list[int], chain_angles: list[float]):
        p = vertices[chain_verts]
        seg = np.linalg.norm(np.diff(p, axis=0), axis=1)
        total = seg.sum()
        if total == 0:
            return
        n = max(int(np.ceil(total / interval)) + 1, 2)
        s = np.linspace(0.0, total, n)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        seg_idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
        local = (s - cum[seg_idx]) / np.where(seg[seg_idx] > 0, seg[seg_idx], 1.0)
        pts_out.append(p[seg_idx] + local[:, None] * (p[seg_idx + 1] - p[seg_idx]))
        ang_out.append(np.array(chain_angles)[seg_idx])

    def walk(start: int, k: int):
        chain_v = [start]
        chain_a = []
        v = start
        while True:
            used[k] = True
            (a, b), gamma = sharp[k]
            nxt = b if a == v else a
            chain_v.append(nxt)
            chain_a.append(gamma)
            v = nxt
            if v in junctions:
                break
            cand = [i for i in adj[v] if not used[i]]
            if not cand:
                break
            k = cand[0]
        resample(chain_v, chain_a)

    for v in sorted(junctions):
        for k in adj[v]:
            if not used[k]:
                walk(v, k)
    for k in range(len(sharp)):
        if not used[k]:
            walk(sharp[k][0][0], k)

    return np.vstack(pts_out), np.concatenate(ang_out)


def feature_metrics(
    mesh_e,
    mesh_g,
    threshold: float = SHARP_ANGLE_DEG,
    interval: float = FEATURE_INTERVAL,
) -> tuple[float, float]:
    """Feature Chamfer distance and mean absolute dihedral error (degrees)
    between the sharp-edge samplings of two meshes.

    Both arguments need .vertices/.triangles.  Raises NoFeatures when either
    side has no sharp edges (the metrics are then absent, not zero)."""
    fe, ae = feature_points(mesh_e.vertices, mesh_e.triangles, threshold, interval)
    fg, ag = feature_points(mesh_g.vertices, mesh_g.triangles, threshold, interval)
    d_eg, i_eg = cKDTree(fg).query(fe)
    d_ge, i_ge = cKDTree(fe).query(fg)
    fcd = 0.5 * (d_eg.mean() + d_ge.mean())
    fae = 0.5 * (np.abs(ae - ag[i_eg]).mean() + np.abs(ag - ae[i_ge]).mean())
    return float(fcd), float(fae)


# ---------------------------------------------------------------------------
# Ground-truth signed distance
# ---------------------------------------------------------------------------

def _closest_point_dist(p: Array, a: Array, b: Array, c: Array) -> Array:
    """Exact point-triangle distances; all inputs (M, 3)."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    # Vertex regions
    m_a = (d1 <= 0) & (d2 <= 0)
    m_b = (d3 >= 0) & (d4 <= d3)
    m_c = (d6 >= 0) & (d5 <= d6)
    # Edge regions
    m_ab = (~m_a) & (~m_b) & (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    w_ab = d1 / np.where((d1 - d3) != 0, d1 - d3, 1.0)
    m_ac = (~m_a) & (~m_c) & (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    w_ac = d2 / np.where((d2 - d6) != 0, d2 - d6, 1.0)
    m_bc = (~m_b) & (~m_c) & (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
    denom_bc = (d4 - d3) + (d5 - d6)
    w_bc = (d4 - d3) / np.where(denom_bc != 0, denom_bc, 1.0)

    # Interior
    denom = va + vb + vc
    safe = np.where(denom != 0, denom, 1.0)
    v = vb / safe
    w = vc / safe
    closest = a + v[:, None] * ab + w[:, None] * ac

    sel = m_bc
    closest[sel] = b[sel] + w_bc[sel, None] * (c[sel] - b[sel])
    sel = m_ac
    closest[sel] = a[sel] + w_ac[sel, None] * ac[sel]
    sel = m_ab
    closest[sel] = a[sel] + w_ab[sel, None] * ab[sel]
    closest[m_c] = c[m_c]
    closest[m_b] = b[m_b]
    closest[m_a] = a[m_a]
    return np.linalg.norm(p - closest, axis=1)


def unsigned_distance_to_mesh(points: Array, vertices: Array, triangles: Array,
                              chunk: int = 2048) -> Array:
    """Exact distance from each point to the triangle soup (all pairs,
    chunked; meant for modest triangle counts)."""
    points = np.atleast_2d(points)
    tv = vertices[triangles]
    out = np.empty(len(points))
    nt = len(triangles)
    for s in range(0, len(points), chunk):
        p = points[s:s + chunk]
        m = len(p)
        pp = np.repeat(p, nt, axis=0)
        a = np.tile(tv[:, 0], (m, 1))
        b = np.tile(tv[:, 1], (m, 1))
        c = np.tile(tv[:, 2], (m, 1))
        d = _closest_point_dist(pp, a, b, c).reshape(m, nt)
        out[s:s + chunk] = d.min(axis=1)
    return out


def _ray_crossings(points: Array, vertices: Array, triangles: Array, axis: int,
                   chunk: int = 2048) -> Array:
    """Number of triangle crossings along +axis from each point."""
    others = [d for d in range(3) if d != axis]
    tv = vertices[triangles]
    a2 = tv[:, 0][:, others]
    b2 = tv[:, 1][:, others]
    c2 = tv[:, 2][:, others]
    az = tv[:, 0][:, axis]
    bz = tv[:, 1][:, axis]
    cz = tv[:, 2][:, axis]
    e1 = b2 - a2
    e2 = c2 - a2
    denom = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    ok = np.abs(denom) > 1e-14
    safe = np.where(ok, denom, 1.0)
    counts = np.zeros(len(points), dtype=np.int64)
    for s in range(0, len(points), chunk):
        p = points[s:s + chunk]
        q = p[:, others]
        dp = q[:, None, :] - a2[None, :, :]
        u = (dp[:, :, 0] * e2[None, :, 1] - dp[:, :, 1] * e2[None, :, 0]) / safe[None, :]
        v = (e1[None, :, 0] * dp[:, :, 1] - e1[None, :, 1] * dp[:, :, 0]) / safe[None, :]
        hit = ok[None, :] & (u >= 0) & (v >= 0) & (u + v <= 1)
        tz = az[None, :] + u * (bz - az)[None, :] + v * (cz - az)[None, :]
        hit &= tz > p[:, axis][:, None]
        counts[s:s + chunk] = hit.sum(axis=1)
    return counts


def inside_mesh(points: Array, vertices: Array, triangles: Array) -> Array:
    """Point-in-solid via majority vote of three axis-ray parities.

    Queries are nudged by a fixed sub-tolerance offset so that symmetric
    points whose rays graze edges on all three axes still vote correctly."""
    nudged = np.atleast_2d(points) + np.array([1.1e-9, -0.9e-9, 1.3e-9])
    votes = sum(
        (_ray_crossings(nudged, vertices, triangles, axis) % 2).astype(int)
        for axis in range(3)
    )
    return votes >= 2


def signed_distance_to_mesh(points: Array, vertices: Array, triangles: Array) -> Array:
    d = unsigned_distance_to_mesh(points, vertices, triangles)
    return np.where(inside_mesh(points, vertices, triangles), -d, d)


def _require_closed(mesh) -> None:
    try:
        mu.check_closed_manifold(np.asarray(mesh.triangles))
    except TopologyError as err:
        raise OpenGroundTruth(str(err)) from None


def distance_error(field, mesh_g, n_samples: int = 2**17, seed: int = 0) -> float:
    """Mean relative deviation of the field from the mesh's signed distance
    over uniform box samples: |F_g - f| / (|F_g| + eps)."""
    _require_closed(mesh_g)
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1.0, 1.0, (n_samples, 3))
    f_g = signed_distance_to_mesh(pts, np.asarray(mesh_g.vertices), np.asarray(mesh_g.triangles))
    f_e = field.values(pts)
    return float(np.mean(np.abs(f_g - f_e) / (np.abs(f_g) + SDF_EPS)))


def occupancy_iou(field, mesh_g, n_samples: int = 2**17, seed: int = 0) -> float:
    """Monte-Carlo intersection-over-union of the inside volumes."""
    _require_closed(mesh_g)
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1.0, 1.0, (n_samples, 3))
    in_g = inside_mesh(pts, np.asarray(mesh_g.vertices), np.asarray(mesh_g.triangles))
    in_e = field.values(pts) < 0
    union = np.count_nonzero(in_g | in_e)
    if union == 0:
        return 1.0
    return float(np.count_nonzero(in_g & in_e) / union)


def evaluate_conversion(
    mesh_e,
    field,
    mesh_g,
    n_surface: int = 50000,
    seed: int = 0,
) -> MetricsReport:
    """Full report comparing an extracted mesh + field against ground truth."""
    pe, ne = sample_mesh(np.asarray(mesh_e.vertices), np.asarray(mesh_e.triangles),
                         n_surface, seed)
    pg, ng = sample_mesh(np.asarray(mesh_g.vertices), np.asarray(mesh_g.triangles),
                         n_surface, seed + 1)
    cd, hd = chamfer_hausdorff(pe, pg)
    nae = normal_angle_error(pe, ne, pg, ng)
    try:
        fcd, fae = feature_metrics(mesh_e, mesh_g)
    except NoFeatures:
        fcd = fae = None
    de = iou = None
    if field is not None:
        de = distance_error(field, mesh_g, seed=seed)
        iou = occupancy_iou(field, mesh_g, seed=seed)
    return MetricsReport(cd=cd, hd=hd, nae=nae, fcd=fcd, fae=fae, de=de, iou=iou)
