"""Feature-curve classification and the patch adjacency multigraph.

Feature curves are chains of mesh edges shared by two patches.  Each curve
is convex, concave, or smooth according to the interior dihedral angle
relative to 180 degrees; mixed chains are split into homogeneous runs so
that every graph edge carries a single label.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import mesh_utils as mu
from .brep_io import BRepMesh
from .errors import BoundaryEdge

# Width of the band around 180 degrees treated as smooth.  Thin enough to
# stay well below the 30-degree sharpness threshold, wide enough to absorb
# tessellation noise.
SMOOTH_BAND_DEG = 5.0

CONVEX = "convex"
CONCAVE = "concave"
SMOOTH = "smooth"
HYBRID = "hybrid"


@dataclass
class FeatureCurve:
    """A maximal homogeneous chain of patch-boundary edges."""

    patches: tuple[int, int]
    edge_chain: list[tuple[int, int]]     # ordered vertex pairs
    angles: list[float]                   # interior dihedral per edge, degrees
    curve_type: str

    def __len__(self) -> int:
        return len(self.edge_chain)


@dataclass
class GraphEdge:
    a: int
    b: int
    label: str                  # convex | concave | smooth
    curve: FeatureCurve | None = None

    def other(self, v: int) -> int:
        return self.b if v == self.a else self.a


@dataclass
class PatchGraph:
    """Undirected multigraph over patch ids with typed edges."""

    n_patches: int
    edges: list[GraphEdge] = field(default_factory=list)

    def incident(self, v: int, within: set[int] | None = None) -> list[GraphEdge]:
        out = []
        for e in self.edges:
            if v not in (e.a, e.b):
                continue
            if within is not None and (e.a not in within or e.b not in within):
                continue
            out.append(e)
        return out

    def incident_labels(self, v: int, within: set[int] | None = None) -> set[str]:
        return {e.label for e in self.incident(v, within)}

    def components(self, within: set[int] | None = None) -> list[set[int]]:
        verts = set(range(self.n_patches)) if within is None else set(within)
        adj: dict[int, set[int]] = {v: set() for v in verts}
        for e in self.edges:
            if e.a in verts and e.b in verts:
                adj[e.a].add(e.b)
                adj[e.b].add(e.a)
        seen: set[int] = set()
        comps = []
        for v in sorted(verts):
            if v in seen:
                continue
            stack, comp = [v], set()
            while stack:
                u = stack.pop()
                if u in comp:
                    continue
                comp.add(u)
                stack.extend(adj[u] - comp)
            seen |= comp
            comps.append(comp)
        return comps

    def dump(self) -> str:
        """Text adjacency listing for the CLI inspect command."""
        lines = [f"patches {self.n_patches}"]
        for e in self.edges:
            n = len(e.curve.edge_chain) if e.curve is not None else 0
            lines.append(f"{e.a} {e.b} {e.label} edges={n}")
        return "\n".join(lines)


def classify_angle(gamma: float, band: float = SMOOTH_BAND_DEG) -> str:
    if gamma < 180.0 - band:
        return CONVEX
    if gamma > 180.0 + band:
        return CONCAVE
    return SMOOTH


def classify_angles(angles, band: float = SMOOTH_BAND_DEG) -> str:
    """Curve-level label: convex curves may contain smooth points but no
    concave ones, and vice versa; both kinds present means hybrid."""
    has_cvx = any(a < 180.0 - band for a in angles)
    has_ccv = any(a > 180.0 + band for a in angles)
    if has_cvx and has_ccv:
        return HYBRID
    if has_cvx:
        return CONVEX
    if has_ccv:
        return CONCAVE
    return SMOOTH


def dihedral_angle(mesh: BRepMesh, edge: tuple[int, int]) -> float:
    """Interior dihedral angle across one mesh edge, degrees in (0, 360)."""
    a, b = int(edge[0]), int(edge[1])
    faces = mu.build_edge_map(mesh.triangles).get(mu.edge_key(a, b))
    if faces is None or len(faces) != 2:
        raise BoundaryEdge(f"edge ({a},{b}) does not have two incident faces")
    return mu.interior_dihedral_deg(mesh.vertices, mesh.triangles, (a, b), faces)


def _chain_edges(edges: list[tuple[int, int]], corners: set[int]) -> list[list[tuple[int, int]]]:
    """Order a set of edges into chains, splitting at corner vertices.

    Handles open paths, closed loops, and degree>2 junctions (treated as
    corners).  Edge orientation within a chain follows the walk.
    """
    adj: dict[int, list[int]] = {}
    for idx, (u, v) in enumerate(edges):
        adj.setdefault(u, []).append(idx)
        adj.setdefault(v, []).append(idx)
    breakpoints = set(corners)
    for v, inc in adj.items():
        if len(inc) != 2:
            breakpoints.add(v)

    used = [False] * len(edges)
    chains: list[list[tuple[int, int]]] = []

    def walk(start_vertex: int, start_edge: int):
        chain = []
        v = start_vertex
        e = start_edge
        while True:
            used[e] = True
            u, w = edges[e]
            nxt = w if u == v else u
            chain.append((v, nxt))
            v = nxt
            if v in breakpoints:
                break
            candidates = [i for i in adj[v] if not used[i]]
            if not candidates:
                break
            e = candidates[0]
        return chain

    # Open chains first, anchored at breakpoints.
    for v in sorted(breakpoints):
        for e in sorted(adj.get(v, [])):
            if not used[e]:
                chains.append(walk(v, e))
    # Remaining edges form pure loops.
    for e, done in enumerate(used):
        if not done:
            chains.append(walk(edges[e][0], e))
    return chains


def extract_feature_curves(mesh: BRepMesh, band: float = SMOOTH_BAND_DEG) -> list[FeatureCurve]:
    """All patch-boundary curves, split at feature corners and at
    convex/concave sign changes so each returned curve is homogeneous."""
    edge_map = mu.build_edge_map(mesh.triangles)
    normals = mu.face_normals(mesh.vertices, mesh.triangles)

    vert_patches: dict[int, set[int]] = {}
    for t, tri in enumerate(mesh.triangles):
        p = int(mesh.face_patch[t])
        for v in tri:
            vert_patches.setdefault(int(v), set()).add(p)
    corners = {v for v, ps in vert_patches.items() if len(ps) >= 3}

    by_pair: dict[tuple[int, int], list[tuple[int, int]]] = {}
    angle_of: dict[tuple[int, int], float] = {}
    for (u, v), faces in edge_map.items():
        if len(faces) != 2:
            continue
        pa, pb = int(mesh.face_patch[faces[0]]), int(mesh.face_patch[faces[1]])
        if pa == pb:
            continue
        pair = (min(pa, pb), max(pa, pb))
        by_pair.setdefault(pair, []).append((u, v))
        angle_of[(u, v)] = mu.interior_dihedral_deg(
            mesh.vertices, mesh.triangles, (u, v), faces, normals
        )

    curves: list[FeatureCurve] = []
    for pair in sorted(by_pair):
        for chain in _chain_edges(by_pair[pair], corners):
            angles = [angle_of[mu.edge_key(*e)] for e in chain]
            if classify_angles(angles, band) != HYBRID:
                curves.append(FeatureCurve(pair, chain, angles, classify_angles(angles, band)))
                continue
            # Split a hybrid chain into maximal runs of one edge class.
            run_edges: list[tuple[int, int]] = [chain[0]]
            run_angles: list[float] = [angles[0]]
            run_cls = classify_angle(angles[0], band)
            for e, g in zip(chain[1:], angles[1:]):
                cls = classify_angle(g, band)
                if cls == run_cls:
                    run_edges.append(e)
                    run_angles.append(g)
                else:
                    curves.append(FeatureCurve(pair, run_edges, run_angles, run_cls))
                    run_edges, run_angles, run_cls = [e], [g], cls
            curves.append(FeatureCurve(pair, run_edges, run_angles, run_cls))
    return curves


def build_patch_graph(
    mesh: BRepMesh,
    band: float = SMOOTH_BAND_DEG,
    force_smooth_pairs: set[tuple[int, int]] | None = None,
) -> PatchGraph:
    """One vertex per patch, one labeled edge per (split) feature curve.

    ``force_smooth_pairs`` marks patch pairs whose shared curves are smooth
    by construction (internal boundaries introduced by patch decomposition),
    overriding the measured dihedral.
    """
    graph = PatchGraph(n_patches=mesh.n_patches)
    for c in extract_feature_curves(mesh, band):
        label = c.curve_type
        if force_smooth_pairs and c.patches in force_smooth_pairs:
            label = SMOOTH
        graph.edges.append(GraphEdge(c.patches[0], c.patches[1], label, c))
    return graph


def merge_smooth_patches(graph: PatchGraph, mesh: BRepMesh) -> tuple[PatchGraph, BRepMesh]:
    """Union patches whose every shared curve is smooth; relabel the mesh.

    Transitive: chains of smooth-only adjacency collapse into one patch.
    Idempotent, and the patch count never increases.
    """
    labels_by_pair: dict[tuple[int, int], set[str]] = {}
    for e in graph.edges:
        pair = (min(e.a, e.b), max(e.a, e.b))
        labels_by_pair.setdefault(pair, set()).add(e.label)

    parent = list(range(graph.n_patches))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for (a, b), labels in labels_by_pair.items():
        if labels == {SMOOTH}:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)

    roots = sorted({find(p) for p in range(graph.n_patches)})
    remap = {r: i for i, r in enumerate(roots)}
    new_face_patch = np.array([remap[find(int(p))] for p in mesh.face_patch], dtype=np.int64)
    new_mesh = replace(mesh, face_patch=new_face_patch)
    return build_patch_graph(new_mesh), new_mesh
