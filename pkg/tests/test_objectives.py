import math

import numpy as np
import pytest

from golden import FIXTURES, dirichlet_counts
from parablock.errors import BatchError, PartitionError, ShapeError
from parablock.objectives import (
    BatchSampler, LogisticObjective, MLPObjective, QuadraticObjective, SyntheticDataset, data_suite,
    dirichlet_partition, estimate_sigma_g, finite_difference_grad, global_grad, global_loss,
    gradient_rel_error, hessian_top_eigenvalue, make_classification, quadratic_minimum,
    quadratic_suite, smoothness_constant,
)


def test_quadratic_values():
    q = QuadraticObjective(np.zeros(2), 1.0)
    assert q.loss(np.array([3.0, 4.0])) == 12.5
    assert q.grad(np.array([3.0, 4.0])).tolist() == [3.0, 4.0]
    c = np.array([1.0, -2.0])
    q = QuadraticObjective(c, [2.0, 5.0])
    assert q.loss(c) == 0 and not q.grad(c).any()


def test_quadratic_shape_checks():
    with pytest.raises(ShapeError):
        QuadraticObjective(np.zeros(2), 1.0).loss(np.zeros(3))
    with pytest.raises(ValueError):
        QuadraticObjective(np.zeros(2), -1.0)


def _mlp_forward_loss(theta, X, y, p, h, C):
    """Independent per-sample loop, no vectorisation or shared helpers."""
    W1 = [[theta[j * h + k] for k in range(h)] for j in range(p)]
    o = p * h
    b1 = [theta[o + k] for k in range(h)]
    o += h
    W2 = [[theta[o + k * C + c] for c in range(C)] for k in range(h)]
    o += h * C
    b2 = [theta[o + c] for c in range(C)]
    total = 0.0
    for x, label in zip(X, y):
        hid = [math.tanh(sum(x[j] * W1[j][k] for j in range(p)) + b1[k]) for k in range(h)]
        logits = [sum(hid[k] * W2[k][c] for k in range(h)) + b2[c] for c in range(C)]
        m = max(logits)
        lse = m + math.log(sum(math.exp(z - m) for z in logits))
        total += lse - logits[label]
    return total / len(y)


def test_mlp_matches_straight_line_forward():
    ds = make_classification(8, 3, 3, seed=3)
    obj = MLPObjective(ds.features, ds.labels, 3, hidden=4)
    theta = np.random.default_rng(3).standard_normal(obj.dim)
    ref = _mlp_forward_loss(theta, ds.features, ds.labels, 3, 4, 3)
    assert obj.loss(theta) == pytest.approx(ref, rel=1e-12)


def test_logistic_reference_class_forward():
    X = np.array([[1.0, 2.0]])
    obj = LogisticObjective(X, np.array([0]), 3)
    theta = np.array([0.5, -1.0, 0.25, 0.0])   # W = [[0.5, -1], [0.25, 0]]
    z = np.array([0.0, 1.0, -1.0])
    assert obj.loss(theta) == pytest.approx(np.log(np.exp(z).sum()) - z[0], rel=1e-14)


@pytest.mark.parametrize("kind", ["quadratic", "logistic", "mlp"])
def test_gradients_match_finite_differences(kind):
    rng = np.random.default_rng(5)
    ds = make_classification(30, 4, 3, seed=5)
    obj = {"quadratic": QuadraticObjective(rng.standard_normal(6), rng.uniform(0.1, 3, 6)),
           "logistic": LogisticObjective(ds.features, ds.labels, 3),
           "mlp": MLPObjective(ds.features, ds.labels, 3, hidden=5)}[kind]
    for _ in range(5):
        assert gradient_rel_error(obj, rng.standard_normal(obj.dim)) <= 1e-5


def test_minibatch_gradient_is_subset_mean():
    ds = make_classification(20, 3, 2, seed=1)
    obj = LogisticObjective(ds.features, ds.labels, 2)
    theta = np.random.default_rng(0).standard_normal(obj.dim)
    per = [LogisticObjective(ds.features[[i]], ds.labels[[i]], 2).grad(theta) for i in (2, 7)]
    assert np.allclose(obj.grad(theta, [2, 7]), np.mean(per, axis=0), rtol=1e-13, atol=1e-15)
    with pytest.raises(BatchError):
        obj.grad(theta, [])


def test_noise_is_unbiased_with_vector_variance_sigma_sq():
    q = QuadraticObjective(np.zeros(8), 1.0, noise_sigma=0.5)
    theta = np.ones(8)
    rng = np.random.default_rng(0)
    draws = np.stack([q.grad(theta, rng=rng) for _ in range(20000)]) - theta
    assert np.abs(draws.mean(axis=0)).max() < 0.02
    assert np.mean(np.sum(draws ** 2, axis=1)) == pytest.approx(0.25, rel=0.03)
    assert np.array_equal(q.grad(theta), theta)     # no rng -> exact


def test_batch_sampler_epochs():
    s = BatchSampler(10, 4, np.random.default_rng(0))
    epoch = np.concatenate([s.next(), s.next()])
    assert len(set(epoch.tolist())) == 8
    assert len(s.next()) == 4                       # reshuffled, not a short tail
    assert len(BatchSampler(3, 10, np.random.default_rng(0)).next()) == 3
    with pytest.raises(BatchError):
        BatchSampler(0, 1, np.random.default_rng(0))


def test_sigma_g_examples():
    assert estimate_sigma_g(quadratic_suite(3, 4, identical=True), np.ones(4)) == 0
    two = [QuadraticObjective(np.array([1.0]), 1.0), QuadraticObjective(np.array([-1.0]), 1.0)]
    assert estimate_sigma_g(two, np.zeros(1)) == 1.0
    objs = quadratic_suite(5, 6, seed=17, shared_curvature=False)
    theta = np.random.default_rng(17).standard_normal(6)
    G = np.stack([o.curvature * (theta - o.center) for o in objs])
    direct = np.mean(np.sum((G - G.mean(axis=0)) ** 2, axis=1))
    assert estimate_sigma_g(objs, theta) == pytest.approx(direct, rel=1e-12)


def test_quadratic_suite_hits_sigma_g_exactly():
    objs = quadratic_suite(4, 16, seed=2, sigma_g=1.0)
    for theta in (np.zeros(16), np.full(16, 3.0)):
        assert estimate_sigma_g(objs, theta) == pytest.approx(1.0, rel=1e-12)


def test_quadratic_minimum():
    objs = quadratic_suite(3, 5, seed=4, shared_curvature=False)
    theta, fstar = quadratic_minimum(objs)
    assert np.abs(global_grad(objs, theta)).max() < 1e-12
    assert fstar == pytest.approx(global_loss(objs, theta))


def test_smoothness_constants():
    assert smoothness_constant([QuadraticObjective(np.zeros(2), [2.0, 5.0])]) == (5.0, "exact")
    assert smoothness_constant([QuadraticObjective(np.zeros(2), 0.0)])[0] == 0.0
    ds = make_classification(50, 4, 2, seed=9, unit_norm=True)
    obj = LogisticObjective(ds.features, ds.labels, 2)
    L, kind = smoothness_constant([obj])
    assert kind == "bound" and L <= 0.25 + 1e-12
    rng = np.random.default_rng(9)
    for _ in range(3):
        assert hessian_top_eigenvalue(obj, rng.standard_normal(obj.dim)) <= L + 1e-6


def test_mlp_smoothness_is_an_estimate():
    objs, _, _ = data_suite("mlp", 2, n_samples=40, n_features=3, n_classes=2, hidden=3, seed=1)
    L, kind = smoothness_constant(objs, probes=2)
    assert kind == "estimate" and L > 0


def test_dataset_csv_roundtrip(tmp_path):
    ds = make_classification(12, 3, 4, seed=0)
    ds.to_csv(tmp_path / "d.csv")
    back = SyntheticDataset.from_csv(tmp_path / "d.csv", n_classes=4)
    assert np.array_equal(back.features, ds.features) and np.array_equal(back.labels, ds.labels)
    assert back.class_counts().tolist() == [3, 3, 3, 3]


def test_dirichlet_large_alpha_is_balanced():
    y = np.arange(10000) % 2
    ds = SyntheticDataset(np.zeros((10000, 1)), y, 2)
    H = dirichlet_partition(ds, 1e6, 2, seed=0).class_histogram(y, 2)
    assert np.all(np.abs(H / 5000 - 0.5) <= 0.05)


def test_dirichlet_single_client_and_errors():
    ds = make_classification(20, 2, 2, seed=0)
    assert dirichlet_partition(ds, 0.5, 1, seed=0).counts().tolist() == [20]
    with pytest.raises(PartitionError):
        dirichlet_partition(ds, 0.0, 2, seed=0)
    with pytest.raises(PartitionError):
        dirichlet_partition(ds, 0.5, 21, seed=0)


def test_dirichlet_no_empty_clients():
    ds = make_classification(12, 2, 3, seed=1)
    for seed in range(20):
        part = dirichlet_partition(ds, 0.01, 6, seed=seed, max_redraws=2)
        assert part.counts().min() >= 1 and part.counts().sum() == 12


def test_dirichlet_golden_counts():
    frozen = np.loadtxt(FIXTURES / "dirichlet_alpha0.1_seed13.csv", delimiter=",", dtype=np.int64)
    assert np.array_equal(dirichlet_counts(), frozen)


def test_finite_difference_restores_theta():
    q = QuadraticObjective(np.zeros(3), 1.0)
    theta = np.array([1.0, 2.0, 3.0])
    assert np.allclose(finite_difference_grad(q, theta), theta, atol=1e-8)
    assert theta.tolist() == [1.0, 2.0, 3.0]
