import numpy as np
import pytest

from icl_lab.tasks import (
    FunctionInstance,
    TaskFamily,
    TaskSpec,
    default_task,
    evaluate_function,
    sample_function,
)


def test_linear_weight_moments():
    # Monte Carlo moment check: w ~ N(0, I_20) over many draws.
    spec = default_task(TaskFamily.LINEAR_REGRESSION)
    rng = np.random.default_rng(0)
    n_draws = 6000  # 6000 * 20 = 120k coordinates
    ws = np.stack([sample_function(spec, rng).w for _ in range(n_draws)])
    n = ws.size
    # 3-sigma bands for the sample mean and sample variance of N(0,1) data.
    assert abs(ws.mean()) < 3.0 / np.sqrt(n)
    assert abs(ws.var() - 1.0) < 3.0 * np.sqrt(2.0 / n)


def test_sparse_linear_keeps_exactly_k():
    spec = default_task(TaskFamily.SPARSE_LINEAR_REGRESSION)
    rng = np.random.default_rng(1)
    for _ in range(50):
        fn = sample_function(spec, rng)
        assert np.count_nonzero(fn.w) == spec.k


def test_sparse_support_uniform():
    spec = TaskSpec(TaskFamily.SPARSE_LINEAR_REGRESSION, d=6, n_points=4, k=1)
    rng = np.random.default_rng(2)
    counts = np.zeros(6)
    n = 6000
    for _ in range(n):
        counts[np.flatnonzero(sample_function(spec, rng).w)] += 1
    # Each coordinate retained with probability 1/6.
    assert np.all(np.abs(counts / n - 1 / 6) < 4 * np.sqrt((1 / 6) * (5 / 6) / n))


def test_mqar_unit_norms():
    spec = default_task(TaskFamily.VECTOR_MQAR)
    fn = sample_function(spec, np.random.default_rng(3))
    assert np.allclose(np.linalg.norm(fn.keys, axis=1), 1.0, atol=1e-9)
    assert np.allclose(np.linalg.norm(fn.values, axis=1), 1.0, atol=1e-9)


def test_tree_shape():
    spec = default_task(TaskFamily.DECISION_TREE)
    fn = sample_function(spec, np.random.default_rng(4))
    assert fn.tree_index.shape == (2 ** spec.depth - 1,)
    assert fn.tree_leaf.shape == (2 ** spec.depth,)
    assert fn.tree_index.min() >= 0 and fn.tree_index.max() < spec.d


def test_parity_set_size():
    spec = default_task(TaskFamily.SPARSE_PARITY)
    fn = sample_function(spec, np.random.default_rng(5))
    assert fn.parity_set.shape == (spec.k,)
    assert len(set(fn.parity_set.tolist())) == spec.k


def test_cot_weight_scales():
    spec = default_task(TaskFamily.CHAIN_OF_THOUGHT_IO)
    rng = np.random.default_rng(6)
    w1 = np.stack([sample_function(spec, rng).w1 for _ in range(2000)])
    # First-layer entries have variance 2/h.
    n = w1.size
    assert abs(w1.var() - 2.0 / spec.hidden_width) < 4 * (2.0 / spec.hidden_width) * np.sqrt(2.0 / n)


def test_rejects_bad_specs():
    with pytest.raises(ValueError):
        TaskSpec(TaskFamily.SPARSE_LINEAR_REGRESSION, d=5, n_points=10, k=6)
    with pytest.raises(ValueError):
        TaskSpec(TaskFamily.DECISION_TREE, d=5, n_points=10, depth=0)
    with pytest.raises(ValueError):
        TaskSpec(TaskFamily.ORTHOGONAL_OUTLIER, d=5, n_points=10, outlier_p=1.5)
    with pytest.raises(ValueError):
        TaskSpec(TaskFamily.VECTOR_MQAR, d=5, n_points=10, n_pairs=4, n_queries=2)


def test_evaluate_linear_basis_vector():
    fn = FunctionInstance(TaskFamily.LINEAR_REGRESSION, w=np.eye(5)[0])
    x = np.zeros(5)
    x[0] = 2.0
    assert evaluate_function(fn, x) == 2.0


def test_evaluate_depth_one_tree():
    # Root splits on coordinate 2 (0-based); x[2] = 0.3 > 0 goes right.
    fn = FunctionInstance(
        TaskFamily.DECISION_TREE,
        tree_index=np.array([2]),
        tree_leaf=np.array([-0.5, 0.7]),
    )
    x = np.zeros(5)
    x[2] = 0.3
    assert evaluate_function(fn, x) == pytest.approx(0.7)
    x[2] = -0.3
    assert evaluate_function(fn, x) == pytest.approx(-0.5)


def test_evaluate_parity_product():
    fn = FunctionInstance(TaskFamily.SPARSE_PARITY, parity_set=np.array([0, 3]))
    x = np.array([-1.0, 1.0, 1.0, -1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0])
    assert evaluate_function(fn, x) == 1.0
    x[3] = 1.0
    assert evaluate_function(fn, x) == -1.0


def test_evaluate_cot_zero_input():
    fn = FunctionInstance(
        TaskFamily.CHAIN_OF_THOUGHT_IO,
        w1=np.random.default_rng(7).standard_normal((8, 10)),
        w2=np.random.default_rng(8).standard_normal(8),
    )
    s, y = evaluate_function(fn, np.zeros(10))
    assert np.all(s == 0.0)
    assert y == 0.0


def test_evaluate_two_nn_matches_manual():
    rng = np.random.default_rng(9)
    fn = FunctionInstance(
        TaskFamily.TWO_NN_REGRESSION,
        w1=rng.standard_normal((4, 3)),
        w2=rng.standard_normal(4),
    )
    x = rng.standard_normal(3)
    manual = sum(fn.w2[i] * max(fn.w1[i] @ x, 0.0) for i in range(4))
    assert evaluate_function(fn, x) == pytest.approx(manual, rel=1e-12)


def test_evaluate_dimension_mismatch():
    fn = FunctionInstance(TaskFamily.LINEAR_REGRESSION, w=np.ones(5))
    with pytest.raises(ValueError):
        evaluate_function(fn, np.ones(4))


def test_mqar_lookup_returns_paired_value():
    spec = TaskSpec(TaskFamily.VECTOR_MQAR, d=8, n_points=6, n_pairs=4, n_queries=2)
    fn = sample_function(spec, np.random.default_rng(10))
    for j in range(spec.n_pairs):
        assert np.array_equal(evaluate_function(fn, fn.keys[j]), fn.values[j])
