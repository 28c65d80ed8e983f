import numpy as np
import pytest

from nhrep.brep_io import (
    load_brep,
    load_samples,
    normalize,
    sample_surface,
    save_brep,
    save_samples,
)
from nhrep.errors import (
    DegenerateGeometry,
    LabelError,
    ParseError,
    QuotaError,
    TopologyError,
)
from nhrep.fixtures import box_mesh, cube_mesh, icosphere_mesh


def write_cube(path, mesh=None):
    save_brep(path, mesh if mesh is not None else cube_mesh())
    return path


def test_load_cube_roundtrip(tmp_path):
    path = write_cube(tmp_path / "cube.brepmesh")
    mesh = load_brep(path)
    assert mesh.n_patches == 6
    assert len(mesh.triangles) == 12
    # save(load(x)) is bit-identical for canonical files
    out = tmp_path / "again.brepmesh"
    save_brep(out, mesh)
    assert out.read_bytes() == path.read_bytes()


def test_load_open_mesh_raises(tmp_path):
    mesh = cube_mesh()
    broken = mesh.triangles[:-1]
    bad = tmp_path / "open.brepmesh"
    with open(bad, "w") as f:
        f.write("brepmesh 1\n")
        f.write(f"vertices {len(mesh.vertices)}\n")
        for v in mesh.vertices:
            f.write(f"{v[0]} {v[1]} {v[2]}\n")
        f.write(f"triangles {len(broken)}\n")
        for t, p in zip(broken, mesh.face_patch):
            f.write(f"{t[0]} {t[1]} {t[2]} {p}\n")
    with pytest.raises(TopologyError) as err:
        load_brep(bad)
    assert "(" in str(err.value)  # names the offending edge


def test_load_flipped_triangle_raises(tmp_path):
    mesh = cube_mesh()
    tris = mesh.triangles.copy()
    tris[0] = tris[0][::-1]
    mesh.triangles = tris
    bad = tmp_path / "flipped.brepmesh"
    save_brep(bad, mesh)
    with pytest.raises(TopologyError):
        load_brep(bad)


def test_load_bad_labels_raises(tmp_path):
    mesh = cube_mesh()
    fp = mesh.face_patch.copy()
    fp[fp == 3] = 9  # leave a hole in the id range
    mesh.face_patch = fp
    bad = tmp_path / "labels.brepmesh"
    save_brep(bad, mesh)
    with pytest.raises(LabelError):
        load_brep(bad)


def test_parse_error_reports_line(tmp_path):
    bad = tmp_path / "garbage.brepmesh"
    bad.write_text("brepmesh 1\nvertices 2\n0 0 0\nnot numbers here\n")
    with pytest.raises(ParseError) as err:
        load_brep(bad)
    assert "4" in str(err.value)


def test_uv_blocks_roundtrip(tmp_path):
    mesh = cube_mesh()
    mesh.uv = {2: np.array([[0.0, 0.25, 0.75], [1.0, 0.5, 0.5]])}
    path = tmp_path / "uv.brepmesh"
    save_brep(path, mesh)
    back = load_brep(path)
    assert set(back.uv) == {2}
    np.testing.assert_allclose(back.uv[2], mesh.uv[2])


def test_normalize_unit_cube_from_02():
    mesh = box_mesh((0, 0, 0), (2, 2, 2))
    out, t = normalize(mesh)
    np.testing.assert_allclose(out.vertices.min(axis=0), [-0.9] * 3, atol=1e-12)
    np.testing.assert_allclose(out.vertices.max(axis=0), [0.9] * 3, atol=1e-12)
    assert t.scale == pytest.approx(0.9)
    np.testing.assert_allclose(t.offset, [-0.9, -0.9, -0.9], atol=1e-12)
    # invertible
    np.testing.assert_allclose(t.invert(out.vertices), mesh.vertices, atol=1e-12)


def test_normalize_identity_when_already_normalized():
    out, t = normalize(cube_mesh(0.9))
    assert t.scale == 1.0
    assert not t.offset.any()


def test_normalize_degenerate_raises():
    mesh = cube_mesh()
    mesh.vertices = np.zeros_like(mesh.vertices)
    with pytest.raises(DegenerateGeometry):
        normalize(mesh)


def test_sample_counts_and_normals_cube():
    mesh = cube_mesh()
    s = sample_surface(mesh, 50000, seed=1)
    quota = -(-50000 // 6)  # 8334
    assert len(s.points) == 6 * quota
    for p in range(6):
        assert np.count_nonzero(s.patch_of == p) == quota
    # all normals axis-aligned unit vectors
    assert np.allclose(np.abs(s.normals).max(axis=1), 1.0, atol=1e-12)
    assert np.allclose(np.linalg.norm(s.normals, axis=1), 1.0, atol=1e-9)
    assert (np.abs(s.points) <= 0.9 + 1e-12).all()
    assert s.sigma.min() > 0


def test_sample_quota_error():
    with pytest.raises(QuotaError):
        sample_surface(cube_mesh(), 100)


def test_sphere_sample_normals_radial():
    mesh = icosphere_mesh(subdiv=4, radius=0.9)
    s = sample_surface(mesh, 5000, seed=0)
    radial = s.points / np.linalg.norm(s.points, axis=1, keepdims=True)
    dots = np.einsum("ij,ij->i", s.normals, radial)
    err = np.degrees(np.arccos(np.clip(dots, -1, 1)))
    assert np.max(np.abs(1 - dots)) < 1e-3, f"max normal deviation {err.max():.3f} deg"


def test_area_fair_sampling_on_split_patch():
    # one cube face split into two equal-area halves by x sign
    mesh = cube_mesh()
    s = sample_surface(mesh, 60000, seed=3)
    top = s.points[s.patch_of == 5]
    frac = np.count_nonzero(top[:, 0] > 0) / len(top)
    assert abs(frac - 0.5) < 0.05


def test_sampleset_binary_roundtrip(tmp_path):
    s = sample_surface(cube_mesh(), 600, seed=9)
    path = tmp_path / "samples.nhss"
    save_samples(path, s)
    back = load_samples(path)
    np.testing.assert_array_equal(back.points, s.points)
    np.testing.assert_array_equal(back.normals, s.normals)
    np.testing.assert_array_equal(back.patch_of, s.patch_of)
    np.testing.assert_array_equal(back.sigma, s.sigma)
    assert back.seed == 9
    with open(path, "rb") as f:
        assert f.read(4) == b"NHSS"
