"""Batch assembly and the Adam schedule producing a trained checkpoint.

Per-iteration batches follow the three-pool protocol: a per-patch
stratified surface batch, local samples perturbed along random directions
by each point's own feature size, and box-clipped Gaussian global samples.
The eikonal term sees local + global points; the off-surface term sees
global points only.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field as dc_field, replace

import numpy as np

from .boolean_tree import BooleanTree, serialize_tree
from .brep_io import BRepMesh, SampleSet, SimilarityTransform, sample_surface
from .checkpoint import FieldCheckpoint
from .errors import NonFiniteLoss
from .field import (
    LossWeights,
    NeuralField,
    TrainBatch,
    batch_loss,
    geometric_init,
)

log = logging.getLogger(__name__)

__all__ = [
    "LossWeights",
    "TrainBatch",
    "TrainConfig",
    "desk_config",
    "load_config",
    "make_batch",
    "save_config",
    "total_loss",
    "train",
]


@dataclass
class TrainConfig:
    iterations: int = 15000
    lr: float = 0.005
    lr_halving_period: int = 2000
    batch_surface: int = 16384
    local_samples: int = 16384
    global_samples: int = 2048
    global_stdev: float = 1.8
    correction_start: int = 10000
    seed: int = 0
    hidden: tuple = (256, 256, 256)
    init_radius: float = 0.5
    sample_count: int = 50000

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        for name in ("lr", "lr_halving_period", "batch_surface",
                     "local_samples", "global_samples", "global_stdev"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        self.correction_start = min(self.correction_start, max(self.iterations, 0))
        self.hidden = tuple(int(h) for h in self.hidden)


def desk_config(seed: int = 0, iterations: int = 3000) -> TrainConfig:
    """Single-core-friendly setup for the small fixtures: the narrow
    network from the size study, reduced batches, and the default
    schedule compressed (halving every tenth of the run, correction
    enabled at two thirds)."""
    return TrainConfig(
        iterations=iterations,
        lr_halving_period=max(1, iterations // 10),
        batch_surface=2048,
        local_samples=2048,
        global_samples=2048,
        correction_start=max(1, iterations * 2 // 3),
        seed=seed,
        hidden=(64, 64, 64),
    )


def save_config(path, cfg: TrainConfig) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for key, val in asdict(cfg).items():
            if isinstance(val, tuple):
                val = ",".join(str(v) for v in val)
            f.write(f"{key}={val}\n")


def load_config(path) -> TrainConfig:
    defaults = TrainConfig()
    kwargs = {}
    with open(path, "r", encoding="utf-8") as f:
        for raw in f:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if not hasattr(defaults, key):
                raise ValueError(f"unknown config key {key!r}")
            if key == "hidden":
                kwargs[key] = tuple(int(v) for v in val.split(",") if v)
            elif isinstance(getattr(defaults, key), int):
                kwargs[key] = int(val)
            else:
                kwargs[key] = float(val)
    return TrainConfig(**kwargs)


def _patch_pools(samples: SampleSet) -> list[np.ndarray]:
    n_patches = int(samples.patch_of.max()) + 1
    return [np.nonzero(samples.patch_of == p)[0] for p in range(n_patches)]


def make_batch(
    samples: SampleSet,
    cfg: TrainConfig,
    rng: np.random.Generator,
    grouping: dict[int, int] | None = None,
    pools: list[np.ndarray] | None = None,
) -> TrainBatch:
    """One training batch: stratified surface points (ceil(batch/L) per
    patch), local perturbations sized by each point's sigma, and clipped
    Gaussian global points."""
    if pools is None:
        pools = _patch_pools(samples)
    L = len(pools)
    quota = -(-cfg.batch_surface // L)
    picks = []
    for pool in pools:
        picks.append(rng.choice(pool, size=quota, replace=len(pool) < quota))
    idx = np.concatenate(picks)
    surface = samples.points[idx]
    normals = samples.normals[idx]
    patches = samples.patch_of[idx]
    slots = (
        np.array([grouping[int(p)] for p in patches], dtype=np.int64)
        if grouping is not None
        else patches.astype(np.int64)
    )

    ns = len(surface)
    if cfg.local_samples == ns:
        li = np.arange(ns)
    else:
        li = rng.integers(0, ns, size=cfg.local_samples)
    dirs = rng.normal(size=(len(li), 3))
    lens = np.linalg.norm(dirs, axis=1)
    dirs /= np.where(lens > 0, lens, 1.0)[:, None]
    mags = rng.normal(0.0, 1.0, size=len(li)) * samples.sigma[idx[li]]
    local_pts = surface[li] + mags[:, None] * dirs

    global_pts = rng.normal(0.0, cfg.global_stdev, size=(cfg.global_samples, 3))
    np.clip(global_pts, -1.0, 1.0, out=global_pts)

    return TrainBatch(
        surface=surface,
        normals=normals,
        slots=slots,
        local_pts=local_pts,
        global_pts=global_pts,
    )


def total_loss(
    field: NeuralField,
    tree: BooleanTree,
    batch: TrainBatch,
    weights: LossWeights | None = None,
    iteration: int = 0,
    correction_start: int = 10000,
) -> tuple[float, dict]:
    """Scalar objective plus the per-term breakdown; the correction term
    switches on only once ``iteration`` reaches ``correction_start``."""
    terms, _ = batch_loss(
        field,
        tree,
        batch,
        weights,
        include_correction=iteration >= correction_start,
        want_grads=False,
    )
    return terms["total"], terms


def train(
    mesh: BRepMesh,
    tree: BooleanTree,
    grouping: dict[int, int] | None,
    cfg: TrainConfig,
    weights: LossWeights | None = None,
    transform: SimilarityTransform | None = None,
    samples: SampleSet | None = None,
    log_path=None,
) -> FieldCheckpoint:
    """Fit the shared MLP to one decomposed, relabeled mesh.

    Deterministic for a fixed seed in single-threaded mode.  A non-finite
    loss aborts with the last checkpointed parameters.  ``log_path``
    receives a CSV breakdown every 100 iterations.
    """
    weights = weights or LossWeights()
    rng = np.random.default_rng(cfg.seed)
    if samples is None:
        samples = sample_surface(mesh, cfg.sample_count, seed=cfg.seed)
    pools = _patch_pools(samples)

    n_slots = tree.n_slots
    field = geometric_init([3, *cfg.hidden, n_slots], cfg.init_radius, seed=cfg.seed)

    beta1, beta2, eps = 0.9, 0.999, 1e-8
    m = [np.zeros_like(p) for p in field.params()]
    v = [np.zeros_like(p) for p in field.params()]

    rows = []
    snapshot = field.copy()
    aborted = False
    for t in range(cfg.iterations):
        batch = make_batch(samples, cfg, rng, grouping, pools)
        lr = cfg.lr * 0.5 ** (t // cfg.lr_halving_period)
        try:
            terms, grads = batch_loss(
                field,
                tree,
                batch,
                weights,
                include_correction=t >= cfg.correction_start,
                want_grads=True,
            )
        except NonFiniteLoss as err:
            log.warning("aborting at iteration %d: %s", t, err)
            field = snapshot
            aborted = True
            break
        if t % 100 == 0:
            snapshot = field.copy()
            rows.append({"iter": t, "lr": lr, **terms})
        params = field.params()
        step = t + 1
        for i, (p, g) in enumerate(zip(params, grads)):
            m[i] = beta1 * m[i] + (1 - beta1) * g
            v[i] = beta2 * v[i] + (1 - beta2) * g * g
            mhat = m[i] / (1 - beta1**step)
            vhat = v[i] / (1 - beta2**step)
            p -= lr * mhat / (np.sqrt(vhat) + eps)

    if not aborted and cfg.iterations > 0:
        batch = make_batch(samples, cfg, rng, grouping, pools)
        final, _ = batch_loss(
            field, tree, batch, weights,
            include_correction=cfg.iterations >= cfg.correction_start, want_grads=False,
        )
        rows.append({"iter": cfg.iterations, "lr": lr, **final})

    if log_path is not None and rows:
        with open(log_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)

    config_echo = {
        **{k: (list(vv) if isinstance(vv, tuple) else vv) for k, vv in asdict(cfg).items()},
        "weights": asdict(weights),
        "grouping": {str(k): int(vv) for k, vv in (grouping or {}).items()},
        "aborted": aborted,
    }
    return FieldCheckpoint(
        field=field,
        expression=serialize_tree(tree),
        transform=transform or SimilarityTransform(),
        config=config_echo,
    )
