import tracemalloc
from types import SimpleNamespace

import numpy as np
import pytest

from metadrn import meta
from metadrn import tensor as T
from metadrn.meta import InnerLoopConfig, MetaState
from metadrn.params import ParamSet
from metadrn.tensor import Tensor


def quad_params(theta=1.0):
    return ParamSet(w=Tensor(np.array(theta, dtype=np.float64), requires_grad=True))


def quad_loss(params, samples):
    w = params["w"]
    return w * w


TOY = [SimpleNamespace(support=["s"], query=["q"])]
CFG = InnerLoopConfig(alpha=0.1, steps=1)


def test_inner_adapt_one_and_two_steps():
    assert meta.inner_adapt(quad_params(), ["s"], CFG, quad_loss)["w"].item() == pytest.approx(0.8, abs=1e-12)
    two = meta.inner_adapt(quad_params(), ["s"], InnerLoopConfig(alpha=0.1, steps=2), quad_loss)
    assert two["w"].item() == pytest.approx(0.64, abs=1e-12)


def test_inner_adapt_zero_rate_is_identity():
    assert meta.inner_adapt(quad_params(0.37), ["s"], InnerLoopConfig(alpha=0.0), quad_loss)["w"].item() == 0.37


def test_maml_quadratic():
    g = meta.maml_meta_grad(quad_params(), TOY, CFG, quad_loss)
    assert abs(g.theta["w"] - 1.28) <= 1e-6


def test_fomaml_quadratic():
    g = meta.fomaml_meta_grad(quad_params(), TOY, CFG, quad_loss)
    assert abs(g.theta["w"] - 1.6) <= 1e-6


def test_metasgd_quadratic():
    alpha = ParamSet(w=Tensor(np.array(0.1), requires_grad=True))
    g = meta.metasgd_meta_grad(quad_params(), alpha, TOY, CFG, quad_loss)
    assert abs(g.theta["w"] - 1.28) <= 1e-6
    assert abs(g.alpha["w"] - (-3.2)) <= 1e-6


def test_reptile_quadratic_and_outer_step():
    cfg = InnerLoopConfig(alpha=0.1, steps=2)
    g = meta.reptile_meta_grad(quad_params(), TOY, cfg, quad_loss)
    assert abs(g.theta["w"] - 0.36) <= 1e-6
    state = meta.apply_sgd(MetaState(quad_params()), g, lr=0.5)
    # theta + beta * (theta' - theta) = 1 + 0.5 * (0.64 - 1)
    assert state.theta["w"].item() == pytest.approx(0.82, abs=1e-12)


def test_reptile_converged_task_gives_zero():
    g = meta.reptile_meta_grad(quad_params(0.0), TOY, CFG, quad_loss)
    assert g.theta["w"] == 0.0


@pytest.mark.parametrize("theta,alpha,lam", [(1.0, 0.1, 1.0), (-2.0, 0.05, 3.0), (0.5, 0.2, 0.5)])
def test_all_closed_forms(theta, alpha, lam):
    def loss(params, samples):
        return T.scalar_mul(params["w"] * params["w"], lam)

    cfg = InnerLoopConfig(alpha=alpha)
    tp = theta * (1 - 2 * alpha * lam)
    assert abs(meta.maml_meta_grad(quad_params(theta), TOY, cfg, loss).theta["w"] - (1 - 2 * alpha * lam) * 2 * lam * tp) <= 1e-8
    assert abs(meta.fomaml_meta_grad(quad_params(theta), TOY, cfg, loss).theta["w"] - 2 * lam * tp) <= 1e-8
    a = ParamSet(w=Tensor(np.array(alpha), requires_grad=True))
    g = meta.metasgd_meta_grad(quad_params(theta), a, TOY, cfg, loss)
    assert abs(g.alpha["w"] - 2 * lam * tp * (-2 * lam * theta)) <= 1e-8
    r = meta.reptile_meta_grad(quad_params(theta), TOY, InnerLoopConfig(alpha=alpha, steps=3), loss)
    assert abs(r.theta["w"] - (theta - theta * (1 - 2 * alpha * lam) ** 3)) <= 1e-8


def test_maml_zero_rate_equals_plain_gradient():
    g = meta.maml_meta_grad(quad_params(0.7), TOY, InnerLoopConfig(alpha=0.0), quad_loss)
    assert g.theta["w"] == pytest.approx(1.4, abs=1e-15)


def test_missing_query_raises():
    with pytest.raises(ValueError, match="query"):
        meta.maml_meta_grad(quad_params(), [SimpleNamespace(support=["s"], query=[])], CFG, quad_loss)


def test_unknown_algorithm():
    with pytest.raises(ValueError, match="unknown algorithm"):
        meta.check_algorithm("protonet")


# ---- real model -----------------------------------------------------------

@pytest.fixture(scope="module")
def setup64(tiny_model, small_dataset):
    theta = tiny_model.init(11).astype(np.float64)
    classes = small_dataset.classes_in("train")

    def task(cls, support_id, query_ids):
        return SimpleNamespace(support=[small_dataset.get(cls, support_id)],
                               query=[small_dataset.get(cls, k) for k in query_ids])

    tasks = [task(classes[0], 1, [2, 3]), task(classes[1], 4, [5, 6])]
    return tiny_model, theta, tasks


def test_maml_equals_fomaml_at_zero_rate(setup64):
    model, theta, tasks = setup64
    cfg = InnerLoopConfig(alpha=0.0)
    a = meta.maml_meta_grad(theta, tasks, cfg, model.loss)
    b = meta.fomaml_meta_grad(theta, tasks, cfg, model.loss)
    for k in a.theta:
        np.testing.assert_array_equal(a.theta[k], b.theta[k])


def test_reptile_single_step_is_joint_training(setup64):
    model, theta, tasks = setup64
    alpha, beta = 0.05, 0.3
    g = meta.reptile_meta_grad(theta, tasks, InnerLoopConfig(alpha=alpha, steps=1), model.loss)
    reptile = meta.apply_sgd(MetaState(theta), g, beta).theta
    joint = {k: np.zeros_like(v.data) for k, v in theta.items()}
    for t in tasks:
        leaves = theta.detached()
        grads = T.backward(model.loss(leaves, t.support), leaves)
        for k in joint:
            joint[k] += grads[k].data / len(tasks)
    assert not np.array_equal(reptile["head.conv1.weight"].data, theta["head.conv1.weight"].data)
    for k, v in theta.items():
        expected = v.data - beta * alpha * joint[k]
        assert np.abs(reptile[k].data - expected).max() <= 1e-6


def test_maml_matches_finite_differences(setup64):
    model, theta, tasks = setup64
    task = tasks[:1]
    cfg = InnerLoopConfig(alpha=0.5)
    analytic = meta.maml_meta_grad(theta, task, cfg, model.loss)
    first = meta.fomaml_meta_grad(theta, task, cfg, model.loss)

    def meta_loss(arrays):
        params = ParamSet.from_arrays(arrays)
        adapted = meta.inner_adapt(params, task[0].support, cfg, model.loss)
        with T.no_grad():
            return model.loss(adapted, task[0].query).item()

    rng = np.random.default_rng(0)
    names = sorted(theta)
    arrays = {k: v.data.copy() for k, v in theta.items()}
    got, fd, fo = [], [], []
    for _ in range(10):
        k = names[rng.integers(len(names))]
        i = rng.integers(arrays[k].size)
        flat = arrays[k].reshape(-1)
        orig, eps = flat[i], 1e-6
        flat[i] = orig + eps
        hi = meta_loss(arrays)
        flat[i] = orig - eps
        lo = meta_loss(arrays)
        flat[i] = orig
        fd.append((hi - lo) / (2 * eps))
        got.append(analytic.theta[k].reshape(-1)[i])
        fo.append(first.theta[k].reshape(-1)[i])
    got, fd, fo = map(np.array, (got, fd, fo))
    assert np.linalg.norm(got - fd) / np.linalg.norm(fd) <= 1e-3
    # the first-order approximation is measurably worse, so the check is discriminating
    assert np.linalg.norm(fo - fd) / np.linalg.norm(fd) > 1e-2


def _snapshot(ps):
    return {k: v.data.copy() for k, v in ps.items()}


@pytest.mark.parametrize("algorithm", meta.ALGORITHMS)
def test_meta_step_does_not_mutate_input(setup64, algorithm):
    model, theta, tasks = setup64
    state = meta.initial_state(algorithm, theta.detached(), 1e-3)
    before = _snapshot(state.theta)
    meta.meta_gradient(algorithm, state, tasks, InnerLoopConfig(alpha=0.01, steps=2 if algorithm == "reptile" else 1),
                       model.loss)
    after = _snapshot(state.theta)
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_identical_tasks_average_to_single_task(setup64):
    model, theta, tasks = setup64
    one = meta.maml_meta_grad(theta, tasks[:1], CFG, model.loss)
    two = meta.maml_meta_grad(theta, [tasks[0], tasks[0]], CFG, model.loss)
    for k in one.theta:
        np.testing.assert_array_equal(one.theta[k], two.theta[k])


def test_constant_metasgd_rates_match_maml(setup64):
    model, theta, tasks = setup64
    cfg = InnerLoopConfig(alpha=0.02)
    m = meta.maml_meta_grad(theta, tasks, cfg, model.loss)
    s = meta.metasgd_meta_grad(theta, meta.init_alpha(theta, 0.02), tasks, cfg, model.loss)
    assert set(s.alpha) == set(theta)
    for k in m.theta:
        np.testing.assert_allclose(s.theta[k], m.theta[k], rtol=1e-9, atol=1e-12)
        assert s.alpha[k].shape == theta[k].shape


def test_first_order_uses_less_memory(setup64):
    model, theta, tasks = setup64

    def peak(fn):
        tracemalloc.start()
        fn(theta, tasks[:1], CFG, model.loss)
        _, top = tracemalloc.get_traced_memory()
        tracemalloc.stop()
        return top

    assert peak(meta.fomaml_meta_grad) < peak(meta.maml_meta_grad)


def test_eval_adaptation_uses_learned_rates(setup64):
    model, theta, tasks = setup64
    cfg = InnerLoopConfig(alpha=0.01)
    zero = MetaState(theta, meta.init_alpha(theta, 0.0))
    adapted = meta.adapt_for_eval("metasgd", zero, tasks[0].support, cfg, model.loss)
    assert all(np.array_equal(adapted[k].data, theta[k].data) for k in theta)
    moved = meta.adapt_for_eval("maml", MetaState(theta), tasks[0].support, cfg, model.loss)
    assert not np.array_equal(moved["head.conv1.weight"].data, theta["head.conv1.weight"].data)


def test_clamp_alpha():
    state = MetaState(quad_params(), ParamSet(w=Tensor(np.array([-0.2, 0.3]), requires_grad=True)))
    clamped = meta.clamp_alpha(state)
    np.testing.assert_array_equal(clamped.alpha["w"].data, [0.0, 0.3])
    assert clamped.theta is state.theta
