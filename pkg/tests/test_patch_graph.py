import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nhrep.errors import BoundaryEdge
from nhrep.fixtures import (
    cube_mesh,
    cylinder_mesh,
    icosphere_mesh,
    l_bracket_mesh,
    ridge_pair_mesh,
    two_cubes_mesh,
)
from nhrep.patch_graph import (
    CONCAVE,
    CONVEX,
    SMOOTH,
    build_patch_graph,
    classify_angles,
    dihedral_angle,
    extract_feature_curves,
    merge_smooth_patches,
)


def test_dihedral_cube_edge_is_90():
    mesh = cube_mesh()
    curves = extract_feature_curves(mesh)
    gamma = dihedral_angle(mesh, curves[0].edge_chain[0])
    assert gamma == pytest.approx(90.0, abs=1e-9)


def test_dihedral_coplanar_is_180():
    mesh = cube_mesh()
    # the two triangles of one face share an in-face edge
    tri0, tri1 = mesh.triangles[0], mesh.triangles[1]
    shared = sorted(set(tri0.tolist()) & set(tri1.tolist()))
    assert len(shared) == 2
    assert dihedral_angle(mesh, tuple(shared)) == pytest.approx(180.0, abs=1e-9)


def test_dihedral_reentrant_is_270():
    mesh = l_bracket_mesh()
    curves = extract_feature_curves(mesh)
    concave = [c for c in curves if c.curve_type == CONCAVE]
    assert len(concave) == 1
    gamma = dihedral_angle(mesh, concave[0].edge_chain[0])
    assert gamma == pytest.approx(270.0, abs=1e-9)


def test_dihedral_boundary_edge_raises():
    mesh = ridge_pair_mesh()  # open sheet pair
    with pytest.raises(BoundaryEdge):
        dihedral_angle(mesh, (0, 1))  # eave boundary edge


def test_cube_has_12_convex_curves():
    curves = extract_feature_curves(cube_mesh())
    assert len(curves) == 12
    assert all(c.curve_type == CONVEX for c in curves)


def test_cylinder_two_closed_convex_rims():
    curves = extract_feature_curves(cylinder_mesh(segments=24))
    assert len(curves) == 2
    for c in curves:
        assert c.curve_type == CONVEX
        assert len(c.edge_chain) == 24  # full loop, no corner splits


def test_ridge_wave_splits_into_alternating_curves():
    mesh = ridge_pair_mesh(n=16, waves=2, amp=0.3)
    curves = [c for c in extract_feature_curves(mesh) if c.patches == (0, 1)]
    assert len(curves) >= 2
    labels = [c.curve_type for c in curves]
    assert CONVEX in labels and CONCAVE in labels
    for a, b in zip(labels, labels[1:]):
        assert a != b  # maximal runs never repeat


def test_curve_classification_bands():
    assert classify_angles([90, 170, 178]) == CONVEX
    assert classify_angles([270, 190]) == CONCAVE
    assert classify_angles([178, 182]) == SMOOTH
    assert classify_angles([90, 270]) == "hybrid"


def test_build_graph_cube():
    g = build_patch_graph(cube_mesh())
    assert g.n_patches == 6
    assert len(g.edges) == 12
    assert all(e.label == CONVEX for e in g.edges)
    # every face touches 4 others
    for v in range(6):
        assert len(g.incident(v)) == 4


def test_two_disjoint_cubes_give_two_components():
    g = build_patch_graph(two_cubes_mesh())
    comps = g.components()
    assert len(comps) == 2
    assert sorted(map(len, comps)) == [6, 6]


def test_orientation_independence_under_cyclic_relabel():
    mesh = l_bracket_mesh()
    before = sorted(
        (c.patches, c.curve_type) for c in extract_feature_curves(mesh)
    )
    rolled = mesh
    rolled.triangles = np.roll(mesh.triangles, 1, axis=1)
    after = sorted(
        (c.patches, c.curve_type) for c in extract_feature_curves(rolled)
    )
    assert before == after


def test_merge_smooth_hemispheres():
    mesh = icosphere_mesh(subdiv=4, patches_by_hemisphere=True)
    g = build_patch_graph(mesh)
    assert g.n_patches == 2
    assert {e.label for e in g.edges} == {SMOOTH}
    g2, m2 = merge_smooth_patches(g, mesh)
    assert g2.n_patches == 1
    assert m2.n_patches == 1


def test_merge_smooth_cube_unchanged():
    mesh = cube_mesh()
    g = build_patch_graph(mesh)
    g2, m2 = merge_smooth_patches(g, mesh)
    assert g2.n_patches == 6
    np.testing.assert_array_equal(m2.face_patch, mesh.face_patch)


def test_merge_smooth_idempotent():
    mesh = icosphere_mesh(subdiv=4, patches_by_hemisphere=True)
    g, m = merge_smooth_patches(build_patch_graph(mesh), mesh)
    g2, m2 = merge_smooth_patches(g, m)
    assert g2.n_patches == g.n_patches
    np.testing.assert_array_equal(m2.face_patch, m.face_patch)


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=2))
def test_cyclic_roll_preserves_cube_labels(k):
    mesh = cube_mesh()
    mesh.triangles = np.roll(mesh.triangles, k, axis=1)
    curves = extract_feature_curves(mesh)
    assert len(curves) == 12
    assert all(c.curve_type == CONVEX for c in curves)
