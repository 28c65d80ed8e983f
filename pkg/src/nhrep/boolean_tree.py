"""Boolean tree construction over the patch graph, patch decomposition,
slot grouping, and expression evaluation/serialization.

The tree is grown recursively: at a node with operation ``op``, the patches
that share no curve of ``edgetype(op)`` (convex for max, concave for min)
peel off as leaves of a child node carrying the opposite operation; when no
patch qualifies, either the whole remaining component is concave-only (the
node flips to min) or one mixed patch is decomposed until its subpatches
have single-convexity boundaries.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import networkx as nx
import numpy as np

from . import mesh_utils as mu
from .brep_io import BRepMesh
from .errors import ArityMismatch, DecompositionFailure, ParseError
from .patch_graph import (
    CONCAVE,
    CONVEX,
    SMOOTH,
    SMOOTH_BAND_DEG,
    GraphEdge,
    PatchGraph,
    build_patch_graph,
    classify_angle,
)

log = logging.getLogger(__name__)

MAX = "max"
MIN = "min"
GROUP_LIMIT = 6   # largest number of subpatches sharing one function slot

_EDGETYPE = {MAX: CONVEX, MIN: CONCAVE}
_OPPOSITE = {MAX: MIN, MIN: MAX}


@dataclass
class Leaf:
    slot: int
    subpatch: int | None = None
    leaf_id: int = -1


@dataclass
class Node:
    op: str
    children: list = field(default_factory=list)
    virtual: bool = False


@dataclass
class BooleanTree:
    root: Node | Leaf

    def __post_init__(self):
        self._number_leaves()

    def _number_leaves(self):
        self.leaves: list[Leaf] = []

        def visit(n):
            if isinstance(n, Leaf):
                n.leaf_id = len(self.leaves)
                self.leaves.append(n)
            else:
                for c in n.children:
                    visit(c)

        visit(self.root)

    @property
    def n_slots(self) -> int:
        return max(leaf.slot for leaf in self.leaves) + 1

    def leaf_slots(self) -> np.ndarray:
        return np.array([leaf.slot for leaf in self.leaves], dtype=np.int64)

    def structure(self):
        """Hashable (op, ...) nesting for structural comparison."""

        def enc(n):
            if isinstance(n, Leaf):
                return ("f", n.slot)
            return (n.op, tuple(enc(c) for c in n.children))

        return enc(self.root)

    def __eq__(self, other):
        return isinstance(other, BooleanTree) and self.structure() == other.structure()


@dataclass
class DecomposedPatchSet:
    """Subpatches covering the boundary exactly once, each inside one
    original patch."""

    faces: list[np.ndarray | None]   # triangle ids per subpatch (None: graph-only)
    parent_patch: list[int]

    def __len__(self):
        return len(self.parent_patch)


@dataclass
class ConstructResult:
    tree: BooleanTree
    patch_set: DecomposedPatchSet
    mesh: BRepMesh | None     # relabeled by subpatch id (faces may be split)
    graph: PatchGraph         # adjacency of the decomposed patch set
    notes: list[str]


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def evaluate_tree(tree: BooleanTree, leaf_values) -> tuple[float, int]:
    """Compose leaf values through the tree.

    Returns (root value, active leaf id); ties resolve to the lowest leaf id.
    """
    vals = np.asarray(leaf_values, dtype=float).reshape(-1)
    if vals.shape[0] != tree.n_slots:
        raise ArityMismatch(f"got {vals.shape[0]} values for {tree.n_slots} slots")

    def visit(n) -> tuple[float, int]:
        if isinstance(n, Leaf):
            return float(vals[n.slot]), n.leaf_id
        results = [visit(c) for c in n.children]
        best = max(r[0] for r in results) if n.op == MAX else min(r[0] for r in results)
        active = min(lid for v, lid in results if v == best)
        return best, active

    return visit(tree.root)


def evaluate_tree_batch(tree: BooleanTree, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized composition: values is (N, n_slots); returns (h, active
    leaf id) per row with the same tie rule as evaluate_tree."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[1] != tree.n_slots:
        raise ArityMismatch(f"expected (N, {tree.n_slots}) values, got {values.shape}")
    n_leaves = len(tree.leaves)

    def visit(n) -> tuple[np.ndarray, np.ndarray]:
        if isinstance(n, Leaf):
            return values[:, n.slot], np.full(len(values), n.leaf_id, dtype=np.int64)
        vs, ls = zip(*(visit(c) for c in n.children))
        V = np.stack(vs)          # (C, N)
        L = np.stack(ls)
        ext = V.max(axis=0) if n.op == MAX else V.min(axis=0)
        masked = np.where(V == ext[None, :], L, n_leaves)
        return ext, masked.min(axis=0)

    return visit(tree.root)


def active_slots(tree: BooleanTree, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(h, slot of the active leaf) per row."""
    h, act = evaluate_tree_batch(tree, values)
    return h, tree.leaf_slots()[act]


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def serialize_tree(tree: BooleanTree) -> str:
    """Canonical prefix form; virtual and single-child nodes collapse away."""

    def emit(n) -> str:
        if isinstance(n, Leaf):
            return f"f{n.slot}"
        if len(n.children) == 1:
            return emit(n.children[0])
        return f"{n.op}(" + ",".join(emit(c) for c in n.children) + ")"

    return emit(tree.root)


def parse_tree(text: str) -> BooleanTree:
    """Inverse of serialize_tree for the canonical grammar
    ``expr := f<int> | ('max'|'min') '(' expr (',' expr)* ')'``."""
    s = text.replace(" ", "")
    pos = 0

    def fail(msg):
        raise ParseError(f"{msg} at position {pos} in {text!r}")

    def parse_expr():
        nonlocal pos
        if s.startswith("max(", pos) or s.startswith("min(", pos):
            op = s[pos:pos + 3]
            pos += 4
            children = [parse_expr()]
            while pos < len(s) and s[pos] == ",":
                pos += 1
                children.append(parse_expr())
            if pos >= len(s) or s[pos] != ")":
                fail("expected ')'")
            pos += 1
            return Node(op, children)
        if pos < len(s) and s[pos] == "f":
            pos += 1
            start = pos
            while pos < len(s) and s[pos].isdigit():
                pos += 1
            if pos == start:
                fail("expected slot number after 'f'")
            return Leaf(slot=int(s[start:pos]))
        fail("expected 'max(', 'min(', or leaf")

    root = parse_expr()
    if pos != len(s):
        fail("trailing characters")
    return BooleanTree(root)


# ---------------------------------------------------------------------------
# Construction state
# ---------------------------------------------------------------------------

@dataclass
class _State:
    edges: list[GraphEdge]
    parent: dict[int, int]
    mesh: BRepMesh | None
    notes: list[str]
    next_id: int

    def incident_labels(self, v: int, within: set[int]) -> list[str]:
        return [
            e.label
            for e in self.edges
            if v in (e.a, e.b) and e.a in within and e.b in within
        ]

    def has_label(self, within: set[int], label: str) -> bool:
        return any(
            e.label == label and e.a in within and e.b in within for e in self.edges
        )

    def components(self, within: set[int]) -> list[set[int]]:
        adj: dict[int, set[int]] = {v: set() for v in within}
        for e in self.edges:
            if e.a in within and e.b in within:
                adj[e.a].add(e.b)
                adj[e.b].add(e.a)
        seen: set[int] = set()
        comps = []
        for v in sorted(within):
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

    def mixed_vertices(self, within: set[int]) -> list[int]:
        out = []
        for v in sorted(within):
            labels = self.incident_labels(v, within)
            if CONVEX in labels and CONCAVE in labels:
                out.append(v)
        return out


def mixed_vertex_count(graph: PatchGraph) -> int:
    """Vertices touching both convex and concave edges (decomposition
    strictly reduces this)."""
    count = 0
    for v in range(graph.n_patches):
        labels = graph.incident_labels(v)
        if CONVEX in labels and CONCAVE in labels:
            count += 1
    return count


# ---------------------------------------------------------------------------
# Patch decomposition
# ---------------------------------------------------------------------------

def _patch_boundary_types(
    mesh: BRepMesh, patch: int, band: float
) -> dict[tuple[int, int], str]:
    """Feature type of every edge the patch shares with another patch."""
    edge_map = mu.build_edge_map(mesh.triangles)
    normals = mu.face_normals(mesh.vertices, mesh.triangles)
    out: dict[tuple[int, int], str] = {}
    for edge, faces in edge_map.items():
        if len(faces) != 2:
            continue
        pa, pb = int(mesh.face_patch[faces[0]]), int(mesh.face_patch[faces[1]])
        if patch not in (pa, pb) or pa == pb:
            continue
        gamma = mu.interior_dihedral_deg(mesh.vertices, mesh.triangles, edge, faces, normals)
        out[edge] = classify_angle(gamma, band)
    return out


def _split_mixed_faces(
    mesh: BRepMesh, patch: int, boundary: dict[tuple[int, int], str]
) -> BRepMesh:
    """Centroid-split every patch triangle touching both convex and concave
    boundary edges, so each face can be anchored to a single side."""
    verts = [mesh.vertices]
    tris: list[np.ndarray] = []
    patches: list[int] = []
    planar: list[bool] = []
    next_vert = len(mesh.vertices)
    for t, tri in enumerate(mesh.triangles):
        p = int(mesh.face_patch[t])
        types = set()
        if p == patch:
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                lab = boundary.get(mu.edge_key(int(a), int(b)))
                if lab in (CONVEX, CONCAVE):
                    types.add(lab)
        if len(types) < 2:
            tris.append(tri)
            patches.append(p)
            planar.append(bool(mesh.planar[t]))
            continue
        centroid = mesh.vertices[tri].mean(axis=0)
        verts.append(centroid[None, :])
        c = next_vert
        next_vert += 1
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            tris.append(np.array([a, b, c]))
            patches.append(p)
            planar.append(bool(mesh.planar[t]))
    return BRepMesh(
        vertices=np.vstack(verts),
        triangles=np.vstack(tris),
        face_patch=np.array(patches, dtype=np.int64),
        planar=np.array(planar, dtype=bool),
        uv={k: v.copy() for k, v in mesh.uv.items()},
    )


def decompose_patch(
    mesh: BRepMesh, patch: int, band: float = SMOOTH_BAND_DEG
) -> tuple[BRepMesh, list[np.ndarray]]:
    """Split one patch so no subpatch boundary mixes convex and concave
    feature segments.

    Faces adjacent to convex (resp. concave) boundary edges are anchored to
    opposite sides of a min-cut over the patch's dual graph, with pairwise
    capacity equal to the shared edge length (so the cut minimizes its
    total boundary length and stays coherent); each side then falls apart
    into edge-connected subpatches.  Returns the relabeled mesh (the
    decomposed patch's faces get fresh ids after the current maximum) and
    the new face-id sets.
    """
    boundary = _patch_boundary_types(mesh, patch, band)
    types = set(boundary.values())
    if not (CONVEX in types and CONCAVE in types):
        raise DecompositionFailure(
            f"patch {patch} boundary is homogeneous ({sorted(types)}); nothing to separate"
        )

    mesh = _split_mixed_faces(mesh, patch, boundary)
    faces_p = mesh.patch_faces(patch)
    edge_map = mu.build_edge_map(mesh.triangles)

    anchors: dict[int, str] = {}
    for t in faces_p:
        tri = mesh.triangles[t]
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            lab = boundary.get(mu.edge_key(int(a), int(b)))
            if lab in (CONVEX, CONCAVE):
                anchors[int(t)] = lab

    g = nx.DiGraph()
    for edge, faces in edge_map.items():
        if len(faces) != 2:
            continue
        fa, fb = faces
        if mesh.face_patch[fa] != patch or mesh.face_patch[fb] != patch:
            continue
        length = float(np.linalg.norm(mesh.vertices[edge[0]] - mesh.vertices[edge[1]]))
        cap = max(length, 1e-12)
        g.add_edge(int(fa), int(fb), capacity=cap)
        g.add_edge(int(fb), int(fa), capacity=cap)
    for t in faces_p:
        g.add_node(int(t))
    for t, lab in anchors.items():
        if lab == CONVEX:
            g.add_edge("S", t, capacity=float("inf"))
        else:
            g.add_edge(t, "T", capacity=float("inf"))

    _, (reach, other) = nx.minimum_cut(g, "S", "T")
    side = {int(t): (0 if t in reach else 1) for t in faces_p}

    # Edge-connected components within each side become the subpatches.
    adj: dict[int, set[int]] = {int(t): set() for t in faces_p}
    for edge, faces in edge_map.items():
        if len(faces) == 2:
            fa, fb = int(faces[0]), int(faces[1])
            if fa in adj and fb in adj and side[fa] == side[fb]:
                adj[fa].add(fb)
                adj[fb].add(fa)
    seen: set[int] = set()
    groups: list[list[int]] = []
    for t in sorted(adj):
        if t in seen:
            continue
        stack, comp = [t], []
        while stack:
            u = stack.pop()
            if u in seen:
                continue
            seen.add(u)
            comp.append(u)
            stack.extend(adj[u] - seen)
        groups.append(sorted(comp))

    if len(groups) < 2:
        raise DecompositionFailure(f"min-cut failed to split patch {patch}")
    for comp in groups:
        touched = set()
        for t in comp:
            tri = mesh.triangles[t]
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                lab = boundary.get(mu.edge_key(int(a), int(b)))
                if lab in (CONVEX, CONCAVE):
                    touched.add(lab)
        if len(touched) > 1:
            raise DecompositionFailure(
                f"patch {patch}: a subpatch still touches both convex and concave boundary"
            )

    new_face_patch = mesh.face_patch.copy()
    base = mesh.n_patches
    out_faces = []
    for k, comp in enumerate(groups):
        new_face_patch[comp] = base + k
        out_faces.append(np.array(comp, dtype=np.int64))
    return replace(mesh, face_patch=new_face_patch), out_faces


# ---------------------------------------------------------------------------
# Tree construction
# ---------------------------------------------------------------------------

def _rebuild_edges(state: _State, band: float) -> None:
    """Re-extract the patch graph from the working mesh; boundaries between
    subpatches of the same original patch are smooth by construction."""
    pairs = set()
    ids = sorted(state.parent)
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            if state.parent[a] == state.parent[b]:
                pairs.add((a, b))
    graph = build_patch_graph(state.mesh, band, force_smooth_pairs=pairs)
    state.edges = graph.edges


def _decompose_in_graph(state: _State, v: int) -> list[int]:
    """Mesh-free fallback: split vertex v so one side keeps the convex
    edges (plus smooth), the other the concave, joined by a smooth edge."""
    va, vb = state.next_id, state.next_id + 1
    state.next_id += 2
    new_edges = []
    for e in state.edges:
        if v not in (e.a, e.b):
            new_edges.append(e)
            continue
        other = e.other(v)
        target = vb if e.label == CONCAVE else va
        new_edges.append(GraphEdge(target, other, e.label, e.curve))
    new_edges.append(GraphEdge(va, vb, SMOOTH))
    state.edges = new_edges
    state.parent[va] = state.parent[v]
    state.parent[vb] = state.parent[v]
    del state.parent[v]
    return [va, vb]


def _decompose_in_mesh(state: _State, v: int, band: float) -> list[int]:
    new_mesh, groups = decompose_patch(state.mesh, v, band)
    base = new_mesh.n_patches - len(groups)
    new_ids = list(range(base, base + len(groups)))
    # The old id disappears from the mesh; keep ids unique by leaving a hole.
    for nid in new_ids:
        state.parent[nid] = state.parent[v]
    del state.parent[v]
    state.mesh = new_mesh
    state.next_id = max(state.next_id, base + len(groups))
    _rebuild_edges(state, band)
    return new_ids


def _pick_decomposition_vertex(
    state: _State, within: set[int], rng: np.random.Generator | None
) -> int:
    mixed = state.mixed_vertices(within)
    if not mixed:
        raise DecompositionFailure("no patch touches both convex and concave curves")
    if rng is not None:
        return int(rng.choice(mixed))
    # Most mixed boundary first: max of min(#convex, #concave).
    def score(v):
        labels = state.incident_labels(v, within)
        return min(labels.count(CONVEX), labels.count(CONCAVE))

    return max(mixed, key=lambda v: (score(v), -v))


def _construct_node(
    state: _State,
    within: set[int],
    parent: Node,
    rng: np.random.Generator | None,
    band: float,
    depth: int = 0,
) -> None:
    if depth > 10000:
        raise DecompositionFailure("tree construction failed to terminate")
    excluded = _EDGETYPE[parent.op]
    q = sorted(
        v for v in within if excluded not in state.incident_labels(v, within)
    )
    if q:
        child = Node(_OPPOSITE[parent.op])
        parent.children.append(child)
        for v in q:
            child.children.append(Leaf(slot=v, subpatch=v))
        rest = within - set(q)
        for comp in state.components(rest):
            _construct_node(state, comp, child, rng, band, depth + 1)
        return

    if not state.has_label(within, CONVEX):
        # Concave-only component: it belongs under a min node directly.
        if parent.op == MIN:
            for v in sorted(within):
                parent.children.append(Leaf(slot=v, subpatch=v))
            if depth > 0:
                state.notes.append(
                    f"concave-only component {sorted(within)} flattened into a non-root min node"
                )
        else:  # pragma: no cover - unreachable: empty q under max implies convex edges
            child = Node(MIN)
            parent.children.append(child)
            for v in sorted(within):
                child.children.append(Leaf(slot=v, subpatch=v))
        return

    v = _pick_decomposition_vertex(state, within, rng)
    if state.mesh is not None:
        new_ids = _decompose_in_mesh(state, v, band)
    else:
        new_ids = _decompose_in_graph(state, v)
    state.notes.append(f"decomposed patch {v} into {new_ids}")
    updated = (within - {v}) | set(new_ids)
    for comp in state.components(updated):
        _construct_node(state, comp, parent, rng, band, depth + 1)


def _relabel_contiguous(state: _State, tree: BooleanTree) -> tuple[DecomposedPatchSet, BRepMesh | None]:
    ids = sorted(state.parent)
    remap = {old: new for new, old in enumerate(ids)}
    for leaf in tree.leaves:
        leaf.slot = remap[leaf.slot]
        leaf.subpatch = remap[leaf.subpatch]
    mesh = None
    faces: list[np.ndarray | None]
    if state.mesh is not None:
        new_face_patch = np.array(
            [remap[int(p)] for p in state.mesh.face_patch], dtype=np.int64
        )
        mesh = replace(state.mesh, face_patch=new_face_patch)
        faces = [mesh.patch_faces(remap[old]) for old in ids]
    else:
        faces = [None] * len(ids)
    dps = DecomposedPatchSet(faces=faces, parent_patch=[state.parent[old] for old in ids])
    return dps, mesh


def construct_tree(
    graph: PatchGraph,
    mesh: BRepMesh | None = None,
    rng: np.random.Generator | None = None,
    band: float = SMOOTH_BAND_DEG,
) -> ConstructResult:
    """Build the patch-based Boolean tree for a patch graph.

    The root is a min node combining connected components (virtual, hence
    elided, when there is only one).  When decomposition is required, the
    mesh is split by min-cut if given; otherwise the graph vertex is split
    symbolically.  Pass ``rng`` to randomize the decomposition patch choice
    instead of the deterministic most-mixed-first rule.
    """
    state = _State(
        edges=list(graph.edges),
        parent={v: v for v in range(graph.n_patches)},
        mesh=mesh,
        notes=[],
        next_id=graph.n_patches,
    )
    comps = state.components(set(state.parent))
    root = Node(MIN, virtual=len(comps) == 1)
    for comp in comps:
        _construct_node(state, comp, root, rng, band)
    tree = BooleanTree(root)
    dps, out_mesh = _relabel_contiguous(state, tree)
    if out_mesh is not None:
        pairs = {
            (i, j)
            for i in range(len(dps))
            for j in range(i + 1, len(dps))
            if dps.parent_patch[i] == dps.parent_patch[j]
        }
        out_graph = build_patch_graph(out_mesh, band, force_smooth_pairs=pairs)
    else:
        out_graph = _graph_from_state(state)
    return ConstructResult(tree=tree, patch_set=dps, mesh=out_mesh, graph=out_graph, notes=state.notes)


def _graph_from_state(state: _State) -> PatchGraph:
    ids = sorted(state.parent)
    remap = {old: new for new, old in enumerate(ids)}
    g = PatchGraph(n_patches=len(ids))
    for e in state.edges:
        g.edges.append(GraphEdge(remap[e.a], remap[e.b], e.label, e.curve))
    return g


# ---------------------------------------------------------------------------
# Slot grouping
# ---------------------------------------------------------------------------

def group_patches(patch_set: DecomposedPatchSet, graph: PatchGraph) -> dict[int, int]:
    """Greedy coloring of the decomposed-patch adjacency: adjacent patches
    never share a slot and no slot holds more than GROUP_LIMIT patches."""
    n = len(patch_set)
    neighbors: dict[int, set[int]] = {v: set() for v in range(n)}
    for e in graph.edges:
        if e.a != e.b:
            neighbors[e.a].add(e.b)
            neighbors[e.b].add(e.a)
    order = sorted(range(n), key=lambda v: (-len(neighbors[v]), v))
    color: dict[int, int] = {}
    counts: dict[int, int] = {}
    for v in order:
        taken = {color[u] for u in neighbors[v] if u in color}
        c = 0
        while c in taken or counts.get(c, 0) >= GROUP_LIMIT:
            c += 1
        color[v] = c
        counts[c] = counts.get(c, 0) + 1
    return {v: color[v] for v in range(n)}


def rewire_leaves(tree: BooleanTree, grouping: dict[int, int]) -> BooleanTree:
    """Point each leaf at its grouped function slot (subpatch ids stay)."""
    for leaf in tree.leaves:
        leaf.slot = grouping[leaf.subpatch]
    return tree
