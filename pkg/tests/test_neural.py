import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from safetrain.dynamics import AffineLaw, ControllerPartition, SystemModel, step
from safetrain.geometry import Box
from safetrain.neural import (GlobalController, OutsideSafeSet, ProjectionInfeasible, ReluNet,
                              TrainConfig, compose_global, constrained_train, deviation_bound,
                              enumerate_regions, forward, generate_expert_data, mse_loss_and_grad,
                              project_weights, reach_check, reached_states, safe_train)
from safetrain.neural.regions import locate_region
from safetrain.neural.training import TrainingDiverged, activation_penalty

seeds = st.integers(0, 2**31 - 1)


def _random_box(rng, n, lo=-1.0, hi=1.0):
    a = rng.uniform(lo, hi, n)
    return Box(a, a + rng.uniform(0.2, 1.0, n))


def _zero_gain_partition(rng, n, m=1):
    # K straddles zero, so W2' = 0 with b2' inside the b range is always feasible
    Klo = -rng.uniform(0.1, 1.0, m * n)
    Khi = rng.uniform(0.1, 1.0, m * n)
    blo = rng.uniform(-1.0, 0.0, m)
    return ControllerPartition(0, Box(np.r_[Klo, blo], np.r_[Khi, blo + rng.uniform(0.1, 1.0, m)]),
                               m=m, n=n)


def test_forward_single_relu():
    net = ReluNet([[1.0]], [0.0], [[1.0]], [0.0])
    assert forward(net, [-2.0]) == pytest.approx([0.0])
    assert forward(net, [3.0]) == pytest.approx([3.0])
    zero = ReluNet(np.zeros((4, 2)), np.zeros(4), np.zeros((1, 4)), [0.7])
    assert forward(zero, [5.0, -3.0]) == pytest.approx([0.7])


def test_net_shape_check_and_round_trip():
    with pytest.raises(ValueError):
        ReluNet(np.zeros((3, 2)), np.zeros(2), np.zeros((1, 3)), [0.0])
    net = ReluNet.init(3, 1, 4, seed=5)
    back = ReluNet.from_dict(net.to_dict())
    assert np.array_equal(back.params(), net.params())


def _finite_difference(f, theta, eps=1e-6):
    g = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = eps
        g[i] = (f(theta + e) - f(theta - e)) / (2 * eps)
    return g


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_mse_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    net = ReluNet.init(3, 2, 4, seed=seed % 1000)
    X = rng.normal(size=(12, 3))
    U = rng.normal(size=(12, 2))
    _, grad = mse_loss_and_grad(net, X, U)
    fd = _finite_difference(lambda th: mse_loss_and_grad(net.with_params(th), X, U)[0], net.params())
    # kinks are hit with probability zero at these scales
    assert np.allclose(grad.params(), fd, rtol=1e-5, atol=1e-7)


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_activation_penalty_gradient(seed):
    rng = np.random.default_rng(seed)
    net = ReluNet.init(2, 1, 4, seed=seed % 1000)
    V = rng.uniform(-1, 1, (4, 2))
    _, grad = activation_penalty(net, V, 0.3)
    fd = _finite_difference(lambda th: activation_penalty(net.with_params(th), V, 0.3)[0], net.params())
    assert np.allclose(grad.params(), fd, rtol=1e-5, atol=1e-7)
    assert np.all(grad.W2 == 0) and np.all(grad.b2 == 0)


def test_zero_hyperplanes_give_one_region():
    net = ReluNet(np.zeros((3, 2)), [0.5, 1.0, 2.0], [[1.0, -1.0, 0.5]], [0.25])
    regs = enumerate_regions(net, Box([0.0, 0.0], [1.0, 1.0]))
    assert len(regs) == 1
    assert regs[0].pattern == (True, True, True)
    assert np.allclose(regs[0].law.K, 0.0)
    assert regs[0].law.b == pytest.approx([0.5 - 1.0 + 1.0 + 0.25])


def test_single_kink_splits_interval():
    net = ReluNet([[1.0]], [0.0], [[1.0]], [0.0])
    regs = enumerate_regions(net, Box([-1.0], [1.0]))
    spans = [(float(r.vertices().min()), float(r.vertices().max())) for r in regs]
    assert spans == [(-1.0, 0.0), (0.0, 1.0)]
    assert regs[0].law.K[0, 0] == 0.0 and regs[1].law.K[0, 0] == 1.0


def test_enumeration_rejects_wrong_dimension():
    with pytest.raises(ValueError):
        enumerate_regions(ReluNet.init(2, 1), Box([0.0], [1.0]))


@settings(max_examples=15, deadline=None)
@given(seeds, st.sampled_from([2, 3]))
def test_random_points_fall_in_one_region_with_matching_law(seed, n):
    rng = np.random.default_rng(seed)
    net = ReluNet(rng.normal(size=(4, n)), rng.normal(size=4) * 0.3, rng.normal(size=(1, 4)),
                  rng.normal(size=1))
    q = _random_box(rng, n)
    regs = enumerate_regions(net, q)
    X = rng.uniform(q.lo, q.hi, (2000, n))
    pats = [r.pattern for r in regs]
    assert pats == sorted(pats)
    for x in X:
        hits = [r for r in regs if r.contains(x, tol=0.0)]
        # interior points lie in exactly one cell; ties go to the first pattern
        r = locate_region(regs, x)
        assert r is not None
        if hits:
            assert r is hits[0]
        if len(hits) == 1:
            assert r.pattern == net.pattern(x)
        assert np.allclose(r.law(x), forward(net, x), atol=1e-9)


def test_projection_hand_example():
    # h(x) = x on [0, 1], gain 2, partition allows gain in [-1, 1] and bias 0
    net = ReluNet([[1.0]], [0.0], [[2.0]], [0.0])
    P = ControllerPartition(0, Box([-1.0, 0.0], [1.0, 0.0]), m=1, n=1)
    proj = project_weights(net, Box([0.0], [1.0]), P)
    assert proj.W2[0, 0] == pytest.approx(1.0, abs=1e-8)
    assert proj.b2[0] == pytest.approx(0.0, abs=1e-12)
    assert proj.bound == pytest.approx(1.0, abs=1e-8)
    out = proj.apply(net)
    X = np.linspace(0, 1, 1000)[:, None]
    assert np.max(np.abs(forward(out, X) - forward(net, X))) <= proj.bound + 1e-12


def test_projection_is_identity_for_safe_net():
    net = ReluNet([[1.0]], [0.0], [[0.5]], [0.0])
    P = ControllerPartition(0, Box([-1.0, -1.0], [1.0, 1.0]), m=1, n=1)
    proj = project_weights(net, Box([0.0], [1.0]), P)
    assert proj.bound == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(proj.W2, net.W2) and np.allclose(proj.b2, net.b2)
    assert deviation_bound(net, net, enumerate_regions(net, Box([0.0], [1.0]))) == 0.0


def test_projection_infeasible_lists_regions():
    # two regions with gains 0 and 1 cannot both have gain in [5, 6]
    net = ReluNet([[1.0]], [0.0], [[1.0]], [0.0])
    P = ControllerPartition(0, Box([5.0, -1.0], [6.0, 1.0]), m=1, n=1)
    with pytest.raises(ProjectionInfeasible) as exc:
        project_weights(net, Box([-1.0], [1.0]), P)
    assert exc.value.regions


@settings(max_examples=20, deadline=None)
@given(seeds, st.sampled_from([1, 2]))
def test_random_projection_laws_inside_and_bound_holds(seed, n):
    rng = np.random.default_rng(seed)
    net = ReluNet(rng.normal(size=(4, n)), rng.normal(size=4) * 0.3, rng.normal(size=(1, 4)) * 2,
                  rng.normal(size=1))
    q = _random_box(rng, n)
    P = _zero_gain_partition(rng, n)
    proj = project_weights(net, q, P)
    out = proj.apply(net)
    Klo, Khi = P.K_bounds()
    blo, bhi = P.b_bounds()
    for r in enumerate_regions(net, q):
        # replay W2' G + ... independently of the solver
        K = proj.W2 @ r.G
        b = proj.W2 @ r.g + proj.b2
        assert np.all(K >= Klo - 1e-7) and np.all(K <= Khi + 1e-7)
        assert np.all(b >= blo - 1e-7) and np.all(b <= bhi + 1e-7)
    X = rng.uniform(q.lo, q.hi, (1000, n))
    dev = np.abs(forward(out, X) - forward(net, X)).sum(axis=1)
    assert dev.max() <= proj.bound + 1e-7
    # hidden layer untouched, so activation patterns agree everywhere
    assert all(out.pattern(x) == net.pattern(x) for x in X[:100])


def test_zero_epochs_returns_copy_and_nan_raises():
    net = ReluNet.init(1, 1, 4, seed=1)
    X = np.linspace(0, 1, 10)[:, None]
    out, hist = constrained_train(net, X, 2 * X, epochs=0, lr=0.1)
    assert hist == [] and out is not net
    assert np.array_equal(out.params(), net.params())
    with pytest.raises(TrainingDiverged):
        constrained_train(net, X, np.full_like(X, np.nan), epochs=3, lr=0.1)


def test_affine_target_is_learned():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, (128, 2))
    U = X @ np.array([[0.7], [-0.4]]) + 0.3
    net, hist = constrained_train(ReluNet.init(2, 1, 4, seed=0), X, U, epochs=2000, lr=0.05)
    assert hist[-1] < 1e-4
    assert hist[-1] < hist[0]


def test_activation_penalty_keeps_neurons_on():
    rng = np.random.default_rng(1)
    X = rng.uniform(-1, 1, (64, 2))
    U = np.abs(X[:, :1])  # wants a kink
    V = Box([-1.0, -1.0], [1.0, 1.0]).vertices()
    net, _ = constrained_train(ReluNet.init(2, 1, 4, seed=2), X, U, 3000, 0.05, V,
                               active_weight=50.0, active_margin=0.1)
    assert activation_penalty(net, V, 0.0)[0] == pytest.approx(0.0, abs=1e-6)
    assert len(enumerate_regions(net, Box([-1.0, -1.0], [1.0, 1.0]))) == 1


def test_expert_labels_replay_and_are_deterministic():
    model = SystemModel.integrator_chain(2, m=2, dt=0.1)
    q = Box([0.0, 0.0], [0.5, 0.5])
    P = ControllerPartition(0, Box([-0.2] * 4 + [-1.0, -1.0], [0.2] * 4 + [2.0, 2.0]), m=2, n=2)
    goal = Box([0.8, 0.8], [1.0, 1.0])
    d1 = generate_expert_data(q, P, model, goal, 40, seed=3)
    d2 = generate_expert_data(q, P, model, goal, 40, seed=3)
    assert np.array_equal(d1.X, d2.X) and np.array_equal(d1.U, d2.U)
    for x, u, th in zip(d1.X, d1.U, d1.thetas):
        assert q.contains(x)
        assert P.bounds.contains(th)
        assert np.allclose(AffineLaw.from_flat(th, 2, 2)(x), u, atol=1e-12)
    # the goal is up and to the right, so the expert pushes that way
    assert np.all(d1.U > 0)


def test_expert_prefers_centre_law_when_costs_tie():
    model = SystemModel.integrator_chain(1, m=1, dt=0.1)
    P = ControllerPartition(0, Box([0.0, -1.0], [0.0, 1.0]), m=1, n=1)
    # every candidate attains zero goal distance at t = 0
    d = generate_expert_data(Box([0.4], [0.6]), P, model, Box([0.0], [1.0]), 10)
    assert np.allclose(d.thetas, P.bounds.center)


def test_unicycle_expert_goes_straight_when_aligned():
    model = SystemModel.unicycle(v=1.0, dt=0.1)
    q = Box([0.0, 0.45, 0.0], [0.05, 0.55, 0.0])
    P = ControllerPartition(0, Box([0.0, 0.0, 0.0, -1.0], [0.0, 0.0, 0.0, 1.0]))
    d = generate_expert_data(q, P, model, Box([2.0, 0.0, 0.0], [3.0, 1.0, 6.3]), 20,
                             ignore_axes=[2])
    assert np.allclose(d.U, 0.0)


@settings(max_examples=8, deadline=None)
@given(seeds)
def test_safe_train_laws_lie_in_partition(seed):
    rng = np.random.default_rng(seed)
    model = SystemModel.integrator_chain(2, m=1, dt=0.1)
    q = _random_box(rng, 2)
    P = _zero_gain_partition(rng, 2)
    cfg = TrainConfig(hidden=4, epochs=200, samples=32, seed=seed % 100)
    res = safe_train(q, P, model, Box([2.0, 2.0], [3.0, 3.0]), cfg)
    Klo, Khi = P.K_bounds()
    blo, bhi = P.b_bounds()
    for r in enumerate_regions(res.net, q):
        assert np.all(r.law.K >= Klo - 1e-7) and np.all(r.law.K <= Khi + 1e-7)
        assert np.all(r.law.b >= blo - 1e-7) and np.all(r.law.b <= bhi + 1e-7)
    assert res.partition == P.id and res.bound >= 0.0


def _two_module_controller():
    a, b = Box([0.0], [1.0]), Box([1.0], [2.0])
    na = ReluNet([[1.0]], [0.0], [[1.0]], [0.0])
    nb = ReluNet([[1.0]], [0.0], [[-1.0]], [5.0])
    return compose_global({0: na, 1: nb}, {0: a, 1: b}), na, nb


def test_dispatch_interior_face_and_outside():
    gc, na, nb = _two_module_controller()
    assert gc([0.5]) == pytest.approx(forward(na, [0.5]))
    assert gc([1.5]) == pytest.approx(forward(nb, [1.5]))
    assert gc.locate([1.0]).state == 0
    with pytest.raises(OutsideSafeSet):
        gc([2.5])
    with pytest.raises(KeyError):
        compose_global({0: na}, {0: Box([0.0], [1.0]), 1: Box([1.0], [2.0])})


def test_literal_gated_sum_differs_only_on_faces():
    gc, _, _ = _two_module_controller()
    X = np.linspace(0.0, 2.0, 10001)
    for x in X:
        if gc.literal_output([x]) != pytest.approx(gc([x])):
            assert x == 1.0


def test_controller_round_trip_on_random_points():
    rng = np.random.default_rng(4)
    boxes = {0: Box([0.0, 0.0, 0.0], [1.0, 1.0, 3.0]), 1: Box([1.0, 0.0, 3.0], [2.0, 1.0, 6.0])}
    nets = {k: ReluNet.init(3, 1, 4, seed=k) for k in boxes}
    gc = compose_global(nets, boxes, Box([0.0, 0.0, 0.0], [2.0, 1.0, 6.0]), circular=[2])
    back = GlobalController.from_dict(gc.to_dict())
    X = np.vstack([rng.uniform(b.lo, b.hi, (50, 3)) for b in boxes.values()])
    for x in X:
        assert np.array_equal(gc(x), back(x))
    # the circular axis wraps before dispatch
    assert np.array_equal(gc([0.5, 0.5, 6.5]), gc([0.5, 0.5, 0.5]))


def test_reach_check_constructed_contraction():
    model = SystemModel.integrator_chain(1, m=1, dt=1.0)
    # posts are padded outward by a hair, so keep the image off the goal faces
    q = Box([0.1], [0.9])
    net = ReluNet(np.zeros((2, 1)), [0.0, 0.0], [[0.0, 0.0]], [1.0])  # u = 1
    assert reach_check(q, net, model, [Box([1.0], [2.0])])
    assert not reach_check(q, net, model, [])
    assert not reach_check(q, net, model, [Box([1.0], [1.5])])
    cands = {3: Box([1.0], [1.5]), 4: Box([1.5], [2.0]), 5: Box([2.5], [3.0])}
    assert reached_states(q, net, model, cands) == (3, 4)


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_reach_check_true_implies_simulated_containment(seed):
    rng = np.random.default_rng(seed)
    model = SystemModel.integrator_chain(2, m=2, dt=0.1)
    q = _random_box(rng, 2)
    net = ReluNet(rng.normal(size=(4, 2)), rng.normal(size=4) * 0.3, rng.normal(size=(2, 4)),
                  rng.normal(size=2))
    cover = Box(q.lo - rng.uniform(0, 0.5, 2), q.hi + rng.uniform(0, 0.5, 2))
    Q = [Box(cover.lo, [cover.center[0], cover.hi[1]]), Box([cover.center[0], cover.lo[1]], cover.hi)]
    if not reach_check(q, net, model, Q):
        return
    X = rng.uniform(q.lo, q.hi, (1000, 2))
    for x in X:
        y = step(model, x, forward(net, x))
        assert any(b.contains(y, tol=1e-9) for b in Q)
