import numpy as np
import pytest

from nhrep.boolean_tree import parse_tree
from nhrep.errors import ArityMismatch, NonFiniteLoss
from nhrep.field import (
    LossWeights,
    NeuralField,
    TrainBatch,
    batch_loss,
    evaluate_h,
    forward,
    geometric_init,
    input_gradient,
    loss_gradients,
    random_field,
    selected_gradient,
    softplus,
)

RNG = np.random.default_rng(99)


def unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def make_batch(n_slots, ns=24, nl=16, ng=12, seed=0):
    rng = np.random.default_rng(seed)
    return TrainBatch(
        surface=rng.uniform(-0.8, 0.8, (ns, 3)),
        normals=unit(rng.normal(size=(ns, 3))),
        slots=rng.integers(0, n_slots, ns),
        local_pts=rng.uniform(-1, 1, (nl, 3)),
        global_pts=rng.uniform(-1, 1, (ng, 3)),
    )


# ---------------------------------------------------------------------------
# Activation and forward
# ---------------------------------------------------------------------------

def test_softplus_values():
    assert softplus(np.array(0.0)) == pytest.approx(np.log(2.0), abs=1e-15)
    assert softplus(np.array(50.0)) == pytest.approx(50.0, abs=1e-12)
    assert softplus(np.array(-800.0)) == 0.0  # no overflow


def test_zero_weight_net_outputs_bias():
    f = NeuralField(
        weights=[np.zeros((3, 8)), np.zeros((8, 2))],
        biases=[np.zeros(8), np.array([0.25, -1.5])],
    )
    y = forward(f, RNG.uniform(-1, 1, (5, 3)))
    np.testing.assert_allclose(y, [[0.25 + 8 * 0 * np.log(2), -1.5]] * 5)


def test_linear_net_gradient_exact():
    w = np.array([[1.0, -2.0], [0.5, 3.0], [2.0, 0.0]])
    f = NeuralField(weights=[w], biases=[np.zeros(2)])
    x = RNG.uniform(-1, 1, 3)
    np.testing.assert_allclose(forward(f, x), x @ w)
    np.testing.assert_allclose(input_gradient(f, x), w.T, atol=1e-15)


def test_sigmoid_at_zero_is_half():
    # softplus'(0) = 1/(1+e^0) = 0.5: check via the Jacobian of a 1-layer net
    f = NeuralField(
        weights=[np.eye(3), np.ones((3, 1))],
        biases=[np.zeros(3), np.zeros(1)],
    )
    jac = input_gradient(f, np.zeros(3))
    np.testing.assert_allclose(jac, 0.5 * np.ones((1, 3)), atol=1e-15)


def test_jacobian_matches_finite_differences():
    f = random_field([3, 16, 16, 4], seed=2)
    x = RNG.uniform(-1, 1, (8, 3))
    jac = input_gradient(f, x)
    h = 1e-6
    for d in range(3):
        e = np.zeros(3)
        e[d] = h
        fd = (forward(f, x + e) - forward(f, x - e)) / (2 * h)
        assert np.abs(jac[:, :, d] - fd).max() < 1e-8


def test_selected_gradient_matches_jacobian_rows():
    f = random_field([3, 16, 16, 4], seed=3)
    x = RNG.uniform(-1, 1, (32, 3))
    sel = RNG.integers(0, 4, 32)
    jac = input_gradient(f, x)
    g = selected_gradient(f, x, sel)
    np.testing.assert_allclose(g, jac[np.arange(32), sel], atol=1e-14)


# ---------------------------------------------------------------------------
# Geometric initialization
# ---------------------------------------------------------------------------

def test_geometric_init_sphere_correlation():
    f = geometric_init([3, 256, 256, 256, 3], radius=0.5, seed=11)
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (10000, 3))
    target = np.linalg.norm(x, axis=1) - 0.5
    y = forward(f, x)
    for i in range(3):
        assert np.corrcoef(y[:, i], target)[0, 1] > 0.9


def test_geometric_init_signs():
    for seed in range(3):
        f = geometric_init([3, 256, 256, 256, 2], radius=0.5, seed=seed)
        at_center = forward(f, np.zeros(3))
        assert (at_center < 0).all()
        corner = forward(f, np.ones(3))
        assert (corner > 0).all()


def test_geometric_init_requires_positive_radius():
    with pytest.raises(ValueError):
        geometric_init([3, 16, 16, 1], radius=0.0)


# ---------------------------------------------------------------------------
# Composite evaluation
# ---------------------------------------------------------------------------

def test_evaluate_h_single_slot():
    f = random_field([3, 16, 16, 1], seed=4)
    tree = parse_tree("f0")
    x = RNG.uniform(-1, 1, 3)
    h, grad, leaf = evaluate_h(f, tree, x)
    assert h == pytest.approx(forward(f, x)[0])
    np.testing.assert_allclose(grad, input_gradient(f, x)[0], atol=1e-14)
    assert leaf == 0


def test_evaluate_h_active_branch_gradient():
    f = random_field([3, 16, 16, 2], seed=5)
    tree = parse_tree("min(f0,f1)")
    x = RNG.uniform(-1, 1, (40, 3))
    h, grad, act = evaluate_h(f, tree, x)
    y = forward(f, x)
    jac = input_gradient(f, x)
    which = np.where(y[:, 0] <= y[:, 1], 0, 1)  # ties go to the lower index
    np.testing.assert_allclose(h, y[np.arange(40), which])
    np.testing.assert_allclose(grad, jac[np.arange(40), which], atol=1e-14)
    np.testing.assert_array_equal(act, which)


def test_evaluate_h_tie_gradient_lowest_index():
    # both outputs identical by construction: shared weights
    w_out = np.ones((8, 2))
    f = NeuralField(
        weights=[RNG.normal(size=(3, 8)), w_out],
        biases=[RNG.normal(size=8), np.zeros(2)],
    )
    tree = parse_tree("min(f0,f1)")
    h, grad, act = evaluate_h(f, tree, np.array([0.3, -0.2, 0.5]))
    assert act == 0


def test_evaluate_h_arity_mismatch():
    f = random_field([3, 8, 8, 3], seed=6)
    with pytest.raises(ArityMismatch):
        evaluate_h(f, parse_tree("min(f0,f1)"), np.zeros(3))


def test_directional_fd_of_composite():
    f = random_field([3, 16, 16, 3], seed=7)
    tree = parse_tree("max(f0,min(f1,f2))")
    rng = np.random.default_rng(8)
    x = rng.uniform(-0.9, 0.9, (64, 3))
    h, grad, act = evaluate_h(f, tree, x)
    step = 1e-4
    d = unit(rng.normal(size=(64, 3)))
    hp, _, actp = evaluate_h(f, tree, x + step * d)
    hm, _, actm = evaluate_h(f, tree, x - step * d)
    stable = (actp == act) & (actm == act)
    fd = (hp - hm) / (2 * step)
    an = np.einsum("ij,ij->i", grad, d)
    rel = np.abs(fd[stable] - an[stable]) / np.maximum(np.abs(fd[stable]), 1e-12)
    assert rel.max() < 1e-5


# ---------------------------------------------------------------------------
# Loss terms and parameter gradients
# ---------------------------------------------------------------------------

def test_perfect_fit_zero_loss_terms():
    # plane x0 = 0: exact linear slab via a single linear layer
    w = np.zeros((3, 1))
    w[0, 0] = 1.0
    f = NeuralField(weights=[w], biases=[np.zeros(1)])
    tree = parse_tree("f0")
    rng = np.random.default_rng(1)
    pts = rng.uniform(-1, 1, (32, 3))
    pts[:, 0] = 0.0
    batch = TrainBatch(
        surface=pts,
        normals=np.tile([1.0, 0, 0], (32, 1)),
        slots=np.zeros(32, dtype=int),
        local_pts=rng.uniform(-1, 1, (16, 3)),
        global_pts=rng.uniform(-1, 1, (16, 3)),
    )
    terms, grads = batch_loss(f, tree, batch, LossWeights(), want_grads=True)
    assert terms["position"] == 0.0
    assert terms["normal"] == pytest.approx(0.0, abs=1e-15)
    assert terms["eikonal"] == pytest.approx(0.0, abs=1e-15)
    assert terms["consistency"] == 0.0
    assert terms["correction"] == 0.0
    # position/normal/eikonal/consistency gradients all vanish; only the
    # off-surface term pulls
    wo = LossWeights(use_offsurface=False)
    _, g2 = batch_loss(f, tree, batch, wo, want_grads=True)
    assert max(np.abs(g).max() for g in g2) == 0.0


def test_offsurface_term_at_zero_field():
    f = NeuralField(weights=[np.zeros((3, 1))], biases=[np.zeros(1)])
    tree = parse_tree("f0")
    batch = make_batch(1)
    terms, _ = batch_loss(f, tree, batch, LossWeights())
    assert terms["offsurface"] == pytest.approx(1.0)  # exp(0) mean


def test_loss_gradients_match_finite_differences():
    tree = parse_tree("max(f0,f1,min(f2,f3))")
    f = random_field([3, 16, 16, 4], seed=10)
    w = LossWeights()
    batch = make_batch(4, seed=20)
    terms, grads = loss_gradients(f, tree, batch, w)

    def total():
        t, _ = batch_loss(f, tree, batch, w, want_grads=False)
        return t["total"]

    h = 1e-6
    fd_all, an_all = [], []
    for p, g in zip(f.params(), grads):
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + h
            lp = total()
            p[idx] = old - h
            lm = total()
            p[idx] = old
            fd_all.append((lp - lm) / (2 * h))
            an_all.append(g[idx])
    fd_all, an_all = np.array(fd_all), np.array(an_all)
    rel = np.linalg.norm(an_all - fd_all) / np.linalg.norm(fd_all)
    assert rel < 1e-4


def test_loss_switches_disable_terms():
    tree = parse_tree("max(f0,f1)")
    f = random_field([3, 8, 8, 2], seed=12)
    batch = make_batch(2, seed=3)
    w = LossWeights(use_normal=False, use_eikonal=False, use_offsurface=False)
    terms, _ = batch_loss(f, tree, batch, w)
    assert terms["normal"] == 0.0
    assert terms["eikonal"] == 0.0
    assert terms["offsurface"] == 0.0
    assert terms["position"] > 0


def test_non_finite_raises():
    f = random_field([3, 8, 8, 1], seed=13)
    f.weights[0][0, 0] = np.nan
    tree = parse_tree("f0")
    with pytest.raises(NonFiniteLoss):
        batch_loss(f, tree, make_batch(1), LossWeights())
