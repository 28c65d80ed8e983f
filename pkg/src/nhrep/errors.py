"""Exception types raised across the conversion pipeline."""


class NHRepError(Exception):
    """Base class for all library errors."""


class ParseError(NHRepError):
    """Malformed input file or expression string."""


class TopologyError(NHRepError):
    """Mesh is open, non-manifold, or inconsistently oriented."""


class LabelError(NHRepError):
    """Patch labels are missing, duplicated, or non-contiguous."""


class DegenerateGeometry(NHRepError):
    """Geometry has zero extent and cannot be normalized."""


class QuotaError(NHRepError):
    """Requested sample count cannot satisfy the per-patch floor."""


class BoundaryEdge(NHRepError):
    """Dihedral angle requested on an edge without two incident faces."""


class DecompositionFailure(NHRepError):
    """Patch decomposition could not separate convex from concave boundary."""


class ArityMismatch(NHRepError):
    """Leaf value vector length does not match the tree's slot count."""


class NonFiniteLoss(NHRepError):
    """A NaN or Inf appeared during loss evaluation."""


class EmptyLevelSet(NHRepError):
    """No sign change found anywhere on the sampling grid."""


class EmptySet(NHRepError):
    """A metric was asked to compare empty point sets."""


class NoFeatures(NHRepError):
    """A mesh has no sharp feature edges; feature metrics are undefined."""


class OpenGroundTruth(NHRepError):
    """Ground-truth mesh is not closed; signed queries are undefined."""


class CheckpointError(NHRepError):
    """Checkpoint file is malformed or has an unsupported version."""


class FrameMismatchWarning(UserWarning):
    """Two fields being combined carry different normalization transforms."""
