"""Implicit-field evaluators and the application operations: inside/outside
query, Booleans between fields, offset extraction, and crease blending.

Every evaluator exposes ``values(points) -> (N,)`` and
``gradients(points) -> ((N,), (N, 3))``; extraction, metrics, and queries
consume that protocol.  The composite's sign convention: negative inside.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .boolean_tree import BooleanTree, Leaf, evaluate_tree_batch, parse_tree
from .checkpoint import FieldCheckpoint
from .errors import FrameMismatchWarning
from .field import NeuralField, _forward_cache, _selected_input_gradient, forward, input_gradient
from .isosurface import GridSpec, IsoMesh, extract

Array = np.ndarray

_CHUNK = 65536


def _chunked(pts, fn):
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    if len(pts) <= _CHUNK:
        return fn(pts)
    parts = [fn(pts[s:s + _CHUNK]) for s in range(0, len(pts), _CHUNK)]
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate(col) for col in zip(*parts))
    return np.concatenate(parts)


class TreeField:
    """Composite of a neural field through its Boolean tree."""

    def __init__(self, field: NeuralField, tree: BooleanTree, transform=None):
        if field.n_outputs != tree.n_slots:
            raise ValueError(
                f"field emits {field.n_outputs} values, tree needs {tree.n_slots}"
            )
        self.field = field
        self.tree = tree
        self.transform = transform
        self._slots = tree.leaf_slots()

    @classmethod
    def from_checkpoint(cls, ckpt: FieldCheckpoint) -> "TreeField":
        return cls(ckpt.field, parse_tree(ckpt.expression), ckpt.transform)

    def values(self, pts) -> Array:
        def run(p):
            cache = _forward_cache(self.field, p)
            h, _ = evaluate_tree_batch(self.tree, cache.y)
            return h

        return _chunked(pts, run)

    def gradients(self, pts):
        def run(p):
            cache = _forward_cache(self.field, p)
            h, act = evaluate_tree_batch(self.tree, cache.y)
            g, _ = _selected_input_gradient(self.field, cache, self._slots[act])
            return h, g

        return _chunked(pts, run)


class AnalyticField:
    """Closed-form field from value (and optionally gradient) callables."""

    def __init__(self, value_fn, grad_fn=None, transform=None, fd_step: float = 1e-6):
        self.value_fn = value_fn
        self.grad_fn = grad_fn
        self.transform = transform
        self.fd_step = fd_step

    def values(self, pts) -> Array:
        return np.asarray(self.value_fn(np.atleast_2d(np.asarray(pts, dtype=float))))

    def gradients(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.grad_fn is not None:
            out = self.grad_fn(pts)
            if isinstance(out, tuple):
                return out
            return self.values(pts), out
        vals = self.values(pts)
        g = np.zeros_like(pts)
        for d in range(3):
            e = np.zeros(3)
            e[d] = self.fd_step
            g[:, d] = (self.value_fn(pts + e) - self.value_fn(pts - e)) / (2 * self.fd_step)
        return vals, g


_BOOLEAN_OPS = ("union", "intersection", "a_minus_b")


class BooleanField:
    """min/max composition of two fields (union / intersection / difference)."""

    def __init__(self, a, b, op: str):
        if op not in _BOOLEAN_OPS:
            raise ValueError(f"op must be one of {_BOOLEAN_OPS}")
        self.a = a
        self.b = b
        self.op = op
        ta = getattr(a, "transform", None)
        tb = getattr(b, "transform", None)
        if ta is not None and tb is not None:
            if ta.scale != tb.scale or (np.asarray(ta.offset) != np.asarray(tb.offset)).any():
                warnings.warn(
                    "operand normalization frames differ; the Boolean is taken "
                    "in the shared evaluation frame",
                    FrameMismatchWarning,
                    stacklevel=2,
                )

    def _combine(self, va, vb):
        if self.op == "union":
            return np.minimum(va, vb), va <= vb
        if self.op == "intersection":
            return np.maximum(va, vb), va >= vb
        return np.maximum(va, -vb), va >= -vb  # a_minus_b

    def values(self, pts) -> Array:
        v, _ = self._combine(self.a.values(pts), self.b.values(pts))
        return v

    def gradients(self, pts):
        va, ga = self.a.gradients(pts)
        vb, gb = self.b.gradients(pts)
        v, from_a = self._combine(va, vb)
        sign_b = -1.0 if self.op == "a_minus_b" else 1.0
        g = np.where(from_a[:, None], ga, sign_b * gb)
        return v, g


class OffsetField:
    """Level shift: the isovalue-t surface of the base field at zero."""

    def __init__(self, base, t: float):
        self.base = base
        self.t = t
        self.transform = getattr(base, "transform", None)

    def values(self, pts) -> Array:
        return self.base.values(pts) - self.t

    def gradients(self, pts):
        v, g = self.base.gradients(pts)
        return v - self.t, g


@dataclass
class BlendConfig:
    """Crease-rounding radius for the blended composite."""

    rho: float = 0.05

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")


def blend_pair(f, g, s: float, rho: float):
    """Blended binary max (s=+1) / min (s=-1):
    f + g + s*sqrt(f^2 + g^2 + srho*(srho-|srho|)/(8 rho^2)), srho = f^2+g^2-rho^2.

    Exact far from the crease (reduces to max/min when srho >= 0) and
    rounded within distance about rho of it."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    srho_neg = np.minimum(f * f + g * g - rho * rho, 0.0)
    inner = f * f + g * g + srho_neg * srho_neg / (4.0 * rho * rho)
    return f + g + s * np.sqrt(inner)


def blend_pair_grad(f, g, gf, gg, s: float, rho: float):
    """Value and gradient of blend_pair given operand values/gradients."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    srho_neg = np.minimum(f * f + g * g - rho * rho, 0.0)
    inner = f * f + g * g + srho_neg * srho_neg / (4.0 * rho * rho)
    root = np.sqrt(inner)
    safe = np.where(root > 0, root, 1.0)
    scale = 1.0 + srho_neg / (2.0 * rho * rho)
    db_df = 1.0 + s * f * scale / safe
    db_dg = 1.0 + s * g * scale / safe
    val = f + g + s * root
    grad = db_df[:, None] * gf + db_dg[:, None] * gg
    return val, grad


class BlendedTreeField:
    """Composite with every max/min rewritten as a left fold of binary
    rho-blends (children in stored tree order, i.e. ascending leaf ids)."""

    def __init__(self, field: NeuralField, tree: BooleanTree, cfg: BlendConfig,
                 transform=None):
        self.field = field
        self.tree = tree
        self.cfg = cfg
        self.transform = transform

    def _eval(self, pts):
        y = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        jac = input_gradient(self.field, y)          # (N, n, 3)
        vals = forward(self.field, y)                # (N, n)

        def visit(node):
            if isinstance(node, Leaf):
                return vals[:, node.slot], jac[:, node.slot, :]
            s = 1.0 if node.op == "max" else -1.0
            v, g = visit(node.children[0])
            for child in node.children[1:]:
                cv, cg = visit(child)
                v, g = blend_pair_grad(v, cv, g, cg, s, self.cfg.rho)
            return v, g

        return visit(self.tree.root)

    def values(self, pts) -> Array:
        return _chunked(pts, lambda p: self._eval(p)[0])

    def gradients(self, pts):
        return _chunked(pts, self._eval)


# ---------------------------------------------------------------------------
# Application operations
# ---------------------------------------------------------------------------

def op_query(ckpt: FieldCheckpoint, points) -> tuple[Array, Array]:
    """Composite values and inside/outside signs (negative = inside)."""
    fld = TreeField.from_checkpoint(ckpt)
    vals = fld.values(points)
    return vals, np.sign(vals)


def op_boolean(ckpt_a: FieldCheckpoint, ckpt_b: FieldCheckpoint, op: str) -> BooleanField:
    return BooleanField(
        TreeField.from_checkpoint(ckpt_a), TreeField.from_checkpoint(ckpt_b), op
    )


def op_offset(ckpt: FieldCheckpoint, t: float, spec: GridSpec | None = None) -> IsoMesh:
    """Extract the isovalue-t surface (sharp offsets via dual contouring)."""
    spec = spec or GridSpec()
    fld = TreeField.from_checkpoint(ckpt)
    return extract(OffsetField(fld, t), spec)


def op_blend(ckpt: FieldCheckpoint, cfg: BlendConfig | None = None) -> BlendedTreeField:
    cfg = cfg or BlendConfig()
    return BlendedTreeField(
        ckpt.field, parse_tree(ckpt.expression), cfg, ckpt.transform
    )
