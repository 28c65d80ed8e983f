"""Neural halfspace representations of manifold solids.

Pipeline: load a labeled boundary mesh, classify its feature curves, build
the alternating max/min Boolean tree over (sub)patches, fit one shared MLP
emitting all leaf implicit functions, then extract feature-preserving
isosurfaces and run implicit queries, Booleans, offsets, and blends.
"""

from .brep_io import (
    BRepMesh,
    SampleSet,
    SimilarityTransform,
    load_brep,
    load_samples,
    normalize,
    sample_surface,
    save_brep,
    save_samples,
)
from .boolean_tree import (
    BooleanTree,
    DecomposedPatchSet,
    construct_tree,
    decompose_patch,
    evaluate_tree,
    group_patches,
    parse_tree,
    serialize_tree,
)
from .checkpoint import FieldCheckpoint, load_checkpoint, save_checkpoint
from .field import NeuralField, evaluate_h, forward, geometric_init, input_gradient, loss_gradients
from .isosurface import GridSpec, IsoMesh, dual_contour, edge_intersections, extract
from .metrics import (
    MetricsReport,
    chamfer_hausdorff,
    distance_error,
    feature_metrics,
    normal_angle_error,
    occupancy_iou,
)
from .patch_graph import (
    FeatureCurve,
    PatchGraph,
    build_patch_graph,
    dihedral_angle,
    extract_feature_curves,
    merge_smooth_patches,
)
from .trainer import LossWeights, TrainConfig, make_batch, total_loss, train

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
