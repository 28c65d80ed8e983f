"""Shared fixtures: desk-scale conversions are trained once per session and
reused by the ops, trainer, and acceptance tests."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import pytest

from nhrep.boolean_tree import (
    BooleanTree,
    construct_tree,
    group_patches,
    rewire_leaves,
)
from nhrep.brep_io import BRepMesh, SampleSet, sample_surface
from nhrep.checkpoint import FieldCheckpoint
from nhrep.field import LossWeights
from nhrep.fixtures import (
    cube_inside,
    cube_mesh,
    cube_minus_cylinder_inside,
    cube_minus_cylinder_mesh,
    l_bracket_inside,
    l_bracket_mesh,
)
from nhrep.patch_graph import build_patch_graph
from nhrep.trainer import desk_config, train

FIXTURES = {
    "cube": (cube_mesh, cube_inside),
    "cube_minus_cylinder": (cube_minus_cylinder_mesh, cube_minus_cylinder_inside),
    "l_bracket": (l_bracket_mesh, l_bracket_inside),
}

DESK_SEED = 7
DESK_ITERATIONS = 3000


@dataclass
class Converted:
    name: str
    ckpt: FieldCheckpoint
    tree: BooleanTree
    grouping: dict
    mesh: BRepMesh           # relabeled by subpatch
    source_mesh: BRepMesh    # original fixture mesh
    inside: callable         # analytic occupancy oracle
    log_rows: list
    minutes: float


def _perturb_samples(samples: SampleSet, rng: np.random.Generator) -> SampleSet:
    """Position noise U[-0.018, 0.018] along normals plus normal tilts
    uniform within +/-3 degrees."""
    shift = rng.uniform(-0.018, 0.018, len(samples.points))
    pts = samples.points + shift[:, None] * samples.normals
    axis = rng.normal(size=samples.normals.shape)
    axis -= np.einsum("ij,ij->i", axis, samples.normals)[:, None] * samples.normals
    lens = np.linalg.norm(axis, axis=1)
    axis /= np.where(lens > 0, lens, 1.0)[:, None]
    ang = np.radians(rng.uniform(-3.0, 3.0, len(pts)))
    normals = np.cos(ang)[:, None] * samples.normals + np.sin(ang)[:, None] * axis
    return SampleSet(points=pts, normals=normals, patch_of=samples.patch_of,
                     sigma=samples.sigma, seed=samples.seed)


def convert_fixture(name: str, noisy: bool = False, iterations: int = DESK_ITERATIONS,
                    log_path=None) -> Converted:
    mesh_fn, inside = FIXTURES[name]
    source = mesh_fn()
    res = construct_tree(build_patch_graph(source), source)
    grouping = group_patches(res.patch_set, res.graph)
    tree = rewire_leaves(res.tree, grouping)
    cfg = desk_config(seed=DESK_SEED, iterations=iterations)
    samples = sample_surface(res.mesh, cfg.sample_count, seed=cfg.seed)
    weights = LossWeights()
    if noisy:
        samples = _perturb_samples(samples, np.random.default_rng(DESK_SEED + 1))
        weights = LossWeights(use_correction=False)
    t0 = time.time()
    ckpt = train(res.mesh, tree, grouping, cfg, weights=weights,
                 samples=samples, log_path=log_path)
    minutes = (time.time() - t0) / 60.0
    rows = []
    if log_path is not None:
        import csv

        with open(log_path, "r", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
    return Converted(
        name=name, ckpt=ckpt, tree=tree, grouping=grouping, mesh=res.mesh,
        source_mesh=source, inside=inside, log_rows=rows, minutes=minutes,
    )


@pytest.fixture(scope="session")
def converted(tmp_path_factory):
    """Factory returning (and caching) desk-scale conversions by name."""
    cache: dict = {}
    base = tmp_path_factory.mktemp("trained")

    def get(name: str, noisy: bool = False) -> Converted:
        key = (name, noisy)
        if key not in cache:
            log = base / f"{name}{'_noisy' if noisy else ''}.csv"
            cache[key] = convert_fixture(name, noisy=noisy, log_path=log)
        return cache[key]

    return get
