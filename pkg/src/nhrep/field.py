"""Shared MLP emitting all leaf implicit values, with exact input
gradients and hand-derived parameter gradients of gradient-dependent
losses.

The network is a SoftPlus MLP (identity output).  Training losses contain
terms in d(output)/d(input), so dL/dtheta needs reverse-mode applied over
the combined forward + input-gradient computation; the chain is written out
explicitly for this fixed architecture and checked against finite
differences in the test suite.  All math is float64: the finite-difference
gradient contract is not meetable in single precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.special import expit as sigmoid

from .boolean_tree import BooleanTree, evaluate_tree_batch
from .errors import ArityMismatch, NonFiniteLoss

Array = np.ndarray

DEFAULT_HIDDEN = (256, 256, 256)


def softplus(t: Array) -> Array:
    """ln(1 + e^t), overflow-safe for large |t|."""
    return np.logaddexp(0.0, t)


@dataclass
class NeuralField:
    """MLP parameters; weights[l] has shape (fan_in, fan_out)."""

    weights: list[Array]
    biases: list[Array]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_outputs(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def n_hidden(self) -> int:
        return len(self.weights) - 1

    def copy(self) -> "NeuralField":
        return NeuralField(
            [w.copy() for w in self.weights], [b.copy() for b in self.biases]
        )

    def params(self) -> list[Array]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


@dataclass
class _Cache:
    x: Array
    acts: list[Array]     # post-softplus activations per hidden layer
    sigs: list[Array]     # sigmoid(z) = softplus'(z) per hidden layer
    y: Array


def random_field(layer_sizes, seed: int = 0, scale: float = 1.0) -> NeuralField:
    """Plain Gaussian init, used by gradient-contract tests."""
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        ws.append(rng.normal(0.0, scale / np.sqrt(fan_in), size=(fan_in, fan_out)))
        bs.append(rng.normal(0.0, 0.1, size=fan_out))
    return NeuralField(ws, bs)


def geometric_init(
    layer_sizes, radius: float, seed: int = 0, sharpness: float = 100.0,
    calibration: int = 4096,
) -> NeuralField:
    """Initialize so every output approximates ||x|| - radius.

    Hidden layers get zero-mean Gaussians with variance 2/fan_out and zero
    bias; ``sharpness`` rescales the first layer up and the output layer
    down by the same factor, driving the plain SoftPlus units into their
    asymptotic (ReLU-like) regime the spherical start relies on without
    changing the activation.  The output layer is then ridge-fit to the
    sphere's signed distance over ``calibration`` box samples (plus a tiny
    per-channel jitter), which keeps the approximation tight at small
    widths where fixed constants drift.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    last = len(layer_sizes) - 2
    for l, (fan_in, fan_out) in enumerate(zip(layer_sizes[:-1], layer_sizes[1:])):
        if l == last:
            w = rng.normal(np.sqrt(np.pi / fan_in), 1e-5, size=(fan_in, fan_out))
            b = np.full(fan_out, -radius, dtype=np.float64)
        else:
            w = rng.normal(0.0, np.sqrt(2.0 / fan_out), size=(fan_in, fan_out))
            b = np.zeros(fan_out)
        ws.append(w)
        bs.append(b)
    ws[0] = ws[0] * sharpness
    ws[last] = ws[last] / sharpness
    field = NeuralField(ws, bs)

    if calibration:
        x = rng.uniform(-1.0, 1.0, (calibration, 3))
        feats = _forward_cache(field, x).acts[-1]
        design = np.column_stack([feats, np.ones(len(x))])
        target = np.linalg.norm(x, axis=1) - radius
        lam = 1e-8 * len(x)
        ata = design.T @ design + lam * np.eye(design.shape[1])
        coef = np.linalg.solve(ata, design.T @ target)
        n_out = layer_sizes[-1]
        jitter = rng.normal(0.0, 1e-5, size=(len(coef) - 1, n_out))
        field.weights[-1] = coef[:-1, None] + jitter
        field.biases[-1] = np.full(n_out, coef[-1])
    return field


# ---------------------------------------------------------------------------
# Forward / input gradients
# ---------------------------------------------------------------------------

def _forward_cache(f: NeuralField, x: Array) -> _Cache:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    a = x
    acts, sigs = [], []
    for w, b in zip(f.weights[:-1], f.biases[:-1]):
        z = a @ w + b
        acts.append(softplus(z))
        sigs.append(sigmoid(z))
        a = acts[-1]
    y = a @ f.weights[-1] + f.biases[-1]
    return _Cache(x=x, acts=acts, sigs=sigs, y=y)


def forward(f: NeuralField, x: Array) -> Array:
    """Implicit values at x; (n,) for a single point, (N, n) for a batch."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    y = _forward_cache(f, x).y
    return y[0] if single else y


def input_gradient(f: NeuralField, x: Array) -> Array:
    """Full Jacobian d(outputs)/d(point): (n, 3), or (N, n, 3) for a batch.

    Forward-mode with the three coordinate tangents."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    cache = _forward_cache(f, x)
    n_pts = len(cache.x)
    # Tangents as (N, 3, width): d(z_0)/dx_d is row d of W0.
    t = np.broadcast_to(f.weights[0][None], (n_pts, *f.weights[0].shape))
    for l in range(f.n_hidden):
        t = t * cache.sigs[l][:, None, :]
        t = t @ f.weights[l + 1]
    jac = np.transpose(t, (0, 2, 1))  # (N, n, 3)
    return jac[0] if single else jac


def _selected_input_gradient(f: NeuralField, cache: _Cache, sel: Array):
    """Gradient of output channel sel[p] at each point p.

    Returns (g, (us, vs)): the (N, 3) gradients plus the intermediate
    arrays of the reverse sweep, reused by the second-order pass.
    us[l] is the adjoint arriving above softplus at hidden layer l,
    vs[l] = sigs[l] * us[l] the one below it."""
    us: list[Array] = [None] * f.n_hidden
    vs: list[Array] = [None] * f.n_hidden
    u = f.weights[-1].T[sel]                      # (N, H_last)
    for l in range(f.n_hidden - 1, -1, -1):
        us[l] = u
        vs[l] = cache.sigs[l] * u
        u = vs[l] @ f.weights[l].T                # W0 maps down to (N, 3)
    return u, (us, vs)


def selected_gradient(f: NeuralField, x: Array, sel: Array) -> Array:
    """d y[p, sel[p]] / d x[p] for each point p: (N, 3)."""
    cache = _forward_cache(f, np.asarray(x, dtype=np.float64))
    g, _ = _selected_input_gradient(f, cache, np.asarray(sel, dtype=np.int64))
    return g


def evaluate_h(f: NeuralField, tree: BooleanTree, x: Array):
    """Composite value, its (sub)gradient, and the active leaf id.

    Batched: x (N, 3) gives ((N,), (N, 3), (N,)).  A single point gives
    scalars.  Ties between equal leaf values resolve to the lowest leaf id,
    and the gradient follows that leaf."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    cache = _forward_cache(f, x)
    if cache.y.shape[1] != tree.n_slots:
        raise ArityMismatch(f"field emits {cache.y.shape[1]} values, tree has {tree.n_slots} slots")
    h, act = evaluate_tree_batch(tree, cache.y)
    slots = tree.leaf_slots()[act]
    g, _ = _selected_input_gradient(f, cache, slots)
    if single:
        return float(h[0]), g[0], int(act[0])
    return h, g, act


# ---------------------------------------------------------------------------
# Losses and their parameter gradients
# ---------------------------------------------------------------------------

@dataclass
class LossWeights:
    """Term weights and switches for the six-part objective."""

    alpha: float = 100.0               # off-surface sharpness
    beta: float = 100.0                # correction penalty
    correction_tolerance: float = 1e-5
    use_position: bool = True
    use_normal: bool = True
    use_eikonal: bool = True
    use_offsurface: bool = True
    use_consistency: bool = True
    use_correction: bool = True        # noise mode turns this off


@dataclass
class TrainBatch:
    surface: Array            # (Ns, 3)
    normals: Array            # (Ns, 3)
    slots: Array              # (Ns,) function slot per surface point
    local_pts: Array          # (Nl, 3)
    global_pts: Array         # (Ng, 3)


TERM_NAMES = ("position", "normal", "eikonal", "offsurface", "consistency", "correction")


def _zero_grads(f: NeuralField) -> list[Array]:
    out = []
    for w, b in zip(f.weights, f.biases):
        out += [np.zeros_like(w), np.zeros_like(b)]
    return out


def _accumulate_param_grads(
    f: NeuralField,
    cache: _Cache,
    gy: Array | None,
    sel: Array | None,
    q: Array | None,
    grads: list[Array],
    chain=None,
) -> None:
    """Add d(loss)/d(params) given output cotangents ``gy`` (N, n) and
    cotangents ``q`` (N, 3) of the selected-channel input gradient.

    Reverse mode over the joint forward + input-gradient graph: the
    input-gradient chain (u_l, v_l) is differentiated first, and its
    z-level contributions merge into one reverse sweep of the forward
    chain.  ``grads`` interleaves (dW, db) per layer.
    """
    k = f.n_hidden
    gz_extra = [None] * k  # inner-chain contributions to each z_l adjoint

    if q is not None and k == 0:
        # Linear net: the selected gradient is a column of the only matrix.
        tmp = np.zeros((f.n_outputs, 3))
        np.add.at(tmp, sel, q)
        grads[0] += tmp.T
        q = None
    if q is not None:
        if chain is None:
            _, chain = _selected_input_gradient(f, cache, sel)
        us, vs = chain
        # g = v_0 @ W0^T
        grads[0] += np.einsum("pd,pj->dj", q, vs[0])
        gv = q @ f.weights[0]                       # adjoint of v_0
        for l in range(k):
            gs = gv * us[l]                         # adjoint of sigs[l]
            gu = gv * cache.sigs[l]                 # adjoint of u_l
            gz_extra[l] = gs * cache.sigs[l] * (1.0 - cache.sigs[l])
            if l + 1 < k:
                # u_l = v_{l+1} @ W_{l+1}^T
                grads[2 * (l + 1)] += np.einsum("pi,pj->ij", gu, vs[l + 1])
                gv = gu @ f.weights[l + 1]
            else:
                # u_{k-1} gathers columns of the output weight matrix
                tmp = np.zeros((f.n_outputs, f.weights[-1].shape[0]))
                np.add.at(tmp, sel, gu)
                grads[2 * (l + 1)] += tmp.T

    ga = None
    if gy is not None:
        grads[2 * k] += cache.acts[-1].T @ gy
        grads[2 * k + 1] += gy.sum(axis=0)
        ga = gy @ f.weights[-1].T
    for l in range(k - 1, -1, -1):
        gz = None
        if ga is not None:
            gz = ga * cache.sigs[l]
        if gz_extra[l] is not None:
            gz = gz_extra[l] if gz is None else gz + gz_extra[l]
        if gz is None:
            continue
        below = cache.acts[l - 1] if l > 0 else cache.x
        grads[2 * l] += below.T @ gz
        grads[2 * l + 1] += gz.sum(axis=0)
        ga = gz @ f.weights[l].T if l > 0 else None


def batch_loss(
    f: NeuralField,
    tree: BooleanTree,
    batch: TrainBatch,
    weights: LossWeights | None = None,
    include_correction: bool = True,
    want_grads: bool = False,
):
    """Six-term objective over one batch; optionally also dL/dtheta.

    Returns (terms dict incl. 'total', grads or None).  ``include_correction``
    gates the correction term by iteration on top of its on/off switch."""
    w = weights or LossWeights()
    slots = tree.leaf_slots()
    terms = {name: 0.0 for name in TERM_NAMES}
    grads = _zero_grads(f) if want_grads else None

    def check_finite(y, pts):
        if not np.isfinite(y).all():
            bad = int(np.argwhere(~np.isfinite(y).all(axis=1))[0, 0])
            raise NonFiniteLoss(f"non-finite field value at point {pts[bad].tolist()}")

    ns = len(batch.surface)
    if ns:
        cache = _forward_cache(f, batch.surface)
        check_finite(cache.y, batch.surface)
        sel = np.asarray(batch.slots, dtype=np.int64)
        h, act_leaf = evaluate_tree_batch(tree, cache.y)
        act = slots[act_leaf]
        idx = np.arange(ns)
        f_sel = cache.y[idx, sel]
        diff = f_sel - h

        gy = np.zeros_like(cache.y) if want_grads else None
        q = None
        chain = None

        if w.use_position:
            terms["position"] = float(np.mean(np.abs(f_sel) + np.abs(h)))
            if want_grads:
                np.add.at(gy, (idx, sel), np.sign(f_sel) / ns)
                np.add.at(gy, (idx, act), np.sign(h) / ns)
        if w.use_consistency:
            terms["consistency"] = float(np.mean(np.abs(diff)))
            if want_grads:
                c = np.sign(diff) / ns
                np.add.at(gy, (idx, sel), c)
                np.add.at(gy, (idx, act), -c)
        if w.use_correction and include_correction:
            violating = np.abs(diff) >= w.correction_tolerance
            nd = int(violating.sum())
            if nd:
                terms["correction"] = float(
                    w.beta * np.abs(h[violating] - f_sel[violating]).sum() / nd
                )
                if want_grads:
                    c = np.where(violating, w.beta * np.sign(h - f_sel) / nd, 0.0)
                    np.add.at(gy, (idx, act), c)
                    np.add.at(gy, (idx, sel), -c)
        if w.use_normal:
            g_n, chain = _selected_input_gradient(f, cache, sel)
            d = g_n - batch.normals
            norms = np.linalg.norm(d, axis=1)
            terms["normal"] = float(norms.mean())
            if want_grads:
                safe = np.where(norms > 1e-300, norms, 1.0)
                q = d / (safe * ns)[:, None]
        if want_grads:
            _accumulate_param_grads(f, cache, gy, sel, q, grads, chain=chain)

    nl, ng = len(batch.local_pts), len(batch.global_pts)
    if (nl + ng) and (w.use_eikonal or w.use_offsurface):
        pts = np.vstack([batch.local_pts, batch.global_pts])
        cache = _forward_cache(f, pts)
        check_finite(cache.y, pts)
        h, act_leaf = evaluate_tree_batch(tree, cache.y)
        act = slots[act_leaf]
        gy = np.zeros_like(cache.y) if want_grads else None
        q = None
        chain = None

        if w.use_eikonal:
            g_e, chain = _selected_input_gradient(f, cache, act)
            norms = np.linalg.norm(g_e, axis=1)
            terms["eikonal"] = float(np.mean((norms - 1.0) ** 2))
            if want_grads:
                safe = np.where(norms > 1e-300, norms, 1.0)
                q = (2.0 * (norms - 1.0) / safe / (nl + ng))[:, None] * g_e
        if w.use_offsurface and ng:
            hg = h[nl:]
            eo = np.exp(-w.alpha * np.abs(hg))
            terms["offsurface"] = float(eo.mean())
            if want_grads:
                rows = nl + np.arange(ng)
                np.add.at(gy, (rows, act[nl:]), -w.alpha * np.sign(hg) * eo / ng)
        if want_grads:
            _accumulate_param_grads(f, cache, gy, act, q, grads, chain=chain)

    terms["total"] = float(sum(terms[name] for name in TERM_NAMES))
    return terms, grads


def loss_gradients(
    f: NeuralField,
    tree: BooleanTree,
    batch: TrainBatch,
    weights: LossWeights | None = None,
    include_correction: bool = True,
) -> tuple[dict, list[Array]]:
    """dL/dtheta of the active loss terms (with the loss breakdown).

    The gradient list interleaves (dW, db) per layer, matching
    NeuralField.params() order."""
    terms, grads = batch_loss(
        f, tree, batch, weights, include_correction=include_correction, want_grads=True
    )
    return terms, grads
