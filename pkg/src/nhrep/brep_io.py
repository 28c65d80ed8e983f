"""Labeled-mesh input format, normalization, and surface sampling.

The ``brep-mesh v1`` text format (the discrete stand-in for a segmented
solid boundary):

    brepmesh 1
    vertices <V>
    x y z                      (V lines)
    triangles <T>
    i j k patch [planar]       (T lines; planar defaults to 1)
    uv <patch> <K>             (optional, repeatable)
    vi u v                     (K lines)

Lines starting with '#' and blank lines are ignored.  Vertex indices are
0-based.  ``planar`` controls how sample normals are taken: flat face
normals (1) or barycentric per-patch vertex normals (0).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import mesh_utils as mu
from .errors import DegenerateGeometry, LabelError, ParseError, QuotaError

Array = np.ndarray

SAMPLESET_MAGIC = b"NHSS"
SAMPLESET_VERSION = 1


@dataclass
class SimilarityTransform:
    """x' = scale * x + offset (uniform scale, no rotation)."""

    scale: float = 1.0
    offset: Array = field(default_factory=lambda: np.zeros(3))

    def apply(self, pts: Array) -> Array:
        return self.scale * np.asarray(pts, dtype=float) + self.offset

    def invert(self, pts: Array) -> Array:
        return (np.asarray(pts, dtype=float) - self.offset) / self.scale

    @property
    def is_identity(self) -> bool:
        return self.scale == 1.0 and not self.offset.any()


@dataclass
class BRepMesh:
    """Closed, consistently oriented triangle mesh with per-face patch labels."""

    vertices: Array                      # (V, 3) float64
    triangles: Array                     # (T, 3) int
    face_patch: Array                    # (T,) int, ids 0..L-1
    planar: Array | None = None          # (T,) bool, default all planar
    uv: dict[int, Array] = field(default_factory=dict)  # patch -> (K, 3) rows of (vi, u, v)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        self.face_patch = np.asarray(self.face_patch, dtype=np.int64).reshape(-1)
        if self.planar is None:
            self.planar = np.ones(len(self.triangles), dtype=bool)
        else:
            self.planar = np.asarray(self.planar, dtype=bool).reshape(-1)

    @property
    def n_patches(self) -> int:
        return int(self.face_patch.max()) + 1 if len(self.face_patch) else 0

    def patch_faces(self, patch: int) -> Array:
        return np.nonzero(self.face_patch == patch)[0]

    def validate(self) -> None:
        if len(self.triangles) == 0:
            raise ParseError("mesh has no triangles")
        if self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices):
            raise ParseError("triangle vertex index out of range")
        mu.check_closed_manifold(self.triangles)
        labels = np.unique(self.face_patch)
        if labels.min() != 0 or not np.array_equal(labels, np.arange(len(labels))):
            missing = sorted(set(range(int(labels.max()) + 1)) - set(labels.tolist()))
            raise LabelError(f"patch ids not contiguous from 0; unused ids: {missing}")


@dataclass
class SampleSet:
    """Surface samples with oriented normals and local feature size."""

    points: Array       # (N, 3)
    normals: Array      # (N, 3) unit
    patch_of: Array     # (N,) int
    sigma: Array        # (N,) nearest-neighbor distance within the set
    seed: int = 0


def load_brep(path) -> BRepMesh:
    """Parse and validate a ``brep-mesh v1`` file."""
    verts: list[list[float]] = []
    tris: list[list[int]] = []
    patches: list[int] = []
    planar: list[bool] = []
    uv: dict[int, list[list[float]]] = {}

    with open(path, "r", encoding="utf-8") as f:
        lines = f.readlines()

    def bad(lineno, msg):
        return ParseError(f"{path}:{lineno}: {msg}")

    it = iter(enumerate(lines, start=1))

    def next_content():
        for no, raw in it:
            s = raw.split("#", 1)[0].strip()
            if s:
                return no, s
        return None, None

    no, s = next_content()
    if s is None or s.split() != ["brepmesh", "1"]:
        raise bad(no or 1, "expected header 'brepmesh 1'")

    no, s = next_content()
    while s is not None:
        parts = s.split()
        if parts[0] == "vertices":
            try:
                count = int(parts[1])
            except (IndexError, ValueError):
                raise bad(no, "vertices section needs a count") from None
            for _ in range(count):
                no, s = next_content()
                if s is None:
                    raise bad(no or 0, "unexpected end of file in vertices")
                xyz = s.split()
                if len(xyz) != 3:
                    raise bad(no, f"expected 'x y z', got {s!r}")
                try:
                    verts.append([float(v) for v in xyz])
                except ValueError:
                    raise bad(no, f"bad float in {s!r}") from None
        elif parts[0] == "triangles":
            try:
                count = int(parts[1])
            except (IndexError, ValueError):
                raise bad(no, "triangles section needs a count") from None
            for _ in range(count):
                no, s = next_content()
                if s is None:
                    raise bad(no or 0, "unexpected end of file in triangles")
                cols = s.split()
                if len(cols) not in (4, 5):
                    raise bad(no, f"expected 'i j k patch [planar]', got {s!r}")
                try:
                    vals = [int(c) for c in cols]
                except ValueError:
                    raise bad(no, f"bad integer in {s!r}") from None
                tris.append(vals[:3])
                patches.append(vals[3])
                planar.append(bool(vals[4]) if len(vals) == 5 else True)
        elif parts[0] == "uv":
            try:
                patch, count = int(parts[1]), int(parts[2])
            except (IndexError, ValueError):
                raise bad(no, "uv section needs 'uv <patch> <count>'") from None
            rows = uv.setdefault(patch, [])
            for _ in range(count):
                no, s = next_content()
                if s is None:
                    raise bad(no or 0, "unexpected end of file in uv block")
                cols = s.split()
                if len(cols) != 3:
                    raise bad(no, f"expected 'vi u v', got {s!r}")
                try:
                    rows.append([float(cols[0]), float(cols[1]), float(cols[2])])
                except ValueError:
                    raise bad(no, f"bad number in {s!r}") from None
        else:
            raise bad(no, f"unknown section {parts[0]!r}")
        no, s = next_content()

    if not verts:
        raise ParseError(f"{path}: no vertices")
    mesh = BRepMesh(
        vertices=np.array(verts, dtype=np.float64),
        triangles=np.array(tris, dtype=np.int64),
        face_patch=np.array(patches, dtype=np.int64),
        planar=np.array(planar, dtype=bool),
        uv={p: np.array(rows, dtype=np.float64) for p, rows in uv.items()},
    )
    mesh.validate()
    return mesh


def save_brep(path, mesh: BRepMesh) -> None:
    """Write the canonical form of the ``brep-mesh v1`` format."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("brepmesh 1\n")
        f.write(f"vertices {len(mesh.vertices)}\n")
        for v in mesh.vertices:
            f.write(f"{float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        f.write(f"triangles {len(mesh.triangles)}\n")
        for t, p, fl in zip(mesh.triangles, mesh.face_patch, mesh.planar):
            f.write(f"{int(t[0])} {int(t[1])} {int(t[2])} {int(p)} {int(fl)}\n")
        for patch in sorted(mesh.uv):
            rows = mesh.uv[patch]
            f.write(f"uv {patch} {len(rows)}\n")
            for vi, u, v in rows:
                f.write(f"{int(vi)} {float(u)!r} {float(v)!r}\n")


def normalize(mesh: BRepMesh) -> tuple[BRepMesh, SimilarityTransform]:
    """Center the bounding box at the origin and scale the longest half-extent
    to 0.9.  Returns the transform that was applied."""
    if len(mesh.vertices) == 0:
        raise DegenerateGeometry("empty mesh")
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    half = (hi - lo).max() / 2.0
    if half <= 0:
        raise DegenerateGeometry("bounding box has zero extent")
    center = (lo + hi) / 2.0
    scale = 0.9 / half
    offset = -scale * center
    out = BRepMesh(
        vertices=scale * mesh.vertices + offset,
        triangles=mesh.triangles.copy(),
        face_patch=mesh.face_patch.copy(),
        planar=mesh.planar.copy(),
        uv={p: a.copy() for p, a in mesh.uv.items()},
    )
    return out, SimilarityTransform(scale=scale, offset=offset)


def _patch_vertex_normals(mesh: BRepMesh, patch_tris: Array) -> dict[int, Array]:
    """Area-weighted vertex normals restricted to one patch's faces."""
    tris = mesh.triangles[patch_tris]
    n = mu.face_normals(mesh.vertices, tris, normalized=False)  # area-weighted
    acc: dict[int, Array] = {}
    for row, tri in enumerate(tris):
        for vi in tri:
            vi = int(vi)
            if vi in acc:
                acc[vi] = acc[vi] + n[row]
            else:
                acc[vi] = n[row].copy()
    for vi, vec in acc.items():
        ln = np.linalg.norm(vec)
        acc[vi] = vec / ln if ln > 0 else np.array([0.0, 0.0, 1.0])
    return acc


def sample_surface(mesh: BRepMesh, total: int, seed: int = 0) -> SampleSet:
    """Area-uniform per-patch sampling with quota ceil(total/L), floor 50.

    Normals come from the face plane on planar faces and from barycentric
    per-patch vertex normals on curved ones.  ``sigma`` is each sample's
    nearest-neighbor distance within the full set.
    """
    L = mesh.n_patches
    if total < 50 * L:
        raise QuotaError(f"total={total} below the 50-per-patch floor for L={L}")
    quota = max(50, -(-total // L))  # ceil
    rng = np.random.default_rng(seed)

    pts_all, nrm_all, pid_all = [], [], []
    for patch in range(L):
        faces = mesh.patch_faces(patch)
        tris = mesh.triangles[faces]
        pts, local_face = mu.sample_on_triangles(mesh.vertices, tris, quota, rng)
        flat = mesh.planar[faces][local_face]
        fnorm = mu.face_normals(mesh.vertices, tris)[local_face]
        normals = fnorm.copy()
        if not flat.all():
            vnorm = _patch_vertex_normals(mesh, faces)
            curved = np.nonzero(~flat)[0]
            # Recover barycentric weights of the curved samples.
            for s in curved:
                tri = tris[local_face[s]]
                a, b, c = (mesh.vertices[int(v)] for v in tri)
                m = np.column_stack([b - a, c - a])
                w, *_ = np.linalg.lstsq(m, pts[s] - a, rcond=None)
                bary = np.array([1.0 - w[0] - w[1], w[0], w[1]])
                n = sum(bary[t] * vnorm[int(tri[t])] for t in range(3))
                ln = np.linalg.norm(n)
                normals[s] = n / ln if ln > 0 else fnorm[s]
        pts_all.append(pts)
        nrm_all.append(normals)
        pid_all.append(np.full(quota, patch, dtype=np.int64))

    points = np.concatenate(pts_all)
    normals = np.concatenate(nrm_all)
    patch_of = np.concatenate(pid_all)
    if len(points) >= 2:
        d, _ = cKDTree(points).query(points, k=2)
        sigma = d[:, 1]
    else:
        sigma = np.zeros(len(points))
    return SampleSet(points=points, normals=normals, patch_of=patch_of, sigma=sigma, seed=seed)


def save_samples(path, s: SampleSet) -> None:
    """Binary layout: 16-byte header (magic 'NHSS', uint32 version,
    uint64 count), then uint64 seed, points (count*3 f8), normals
    (count*3 f8), patch_of (count i4), sigma (count f8).  Little-endian."""
    n = len(s.points)
    with open(path, "wb") as f:
        f.write(SAMPLESET_MAGIC)
        f.write(struct.pack("<IQ", SAMPLESET_VERSION, n))
        f.write(struct.pack("<Q", s.seed))
        f.write(np.ascontiguousarray(s.points, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(s.normals, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(s.patch_of, dtype="<i4").tobytes())
        f.write(np.ascontiguousarray(s.sigma, dtype="<f8").tobytes())


def load_samples(path) -> SampleSet:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != SAMPLESET_MAGIC:
            raise ParseError(f"{path}: bad magic {magic!r}")
        version, n = struct.unpack("<IQ", f.read(12))
        if version != SAMPLESET_VERSION:
            raise ParseError(f"{path}: unsupported version {version}")
        (seed,) = struct.unpack("<Q", f.read(8))
        pts = np.frombuffer(f.read(n * 24), dtype="<f8").reshape(n, 3).copy()
        nrm = np.frombuffer(f.read(n * 24), dtype="<f8").reshape(n, 3).copy()
        pid = np.frombuffer(f.read(n * 4), dtype="<i4").astype(np.int64)
        sig = np.frombuffer(f.read(n * 8), dtype="<f8").copy()
    return SampleSet(points=pts, normals=nrm, patch_of=pid, sigma=sig, seed=seed)
