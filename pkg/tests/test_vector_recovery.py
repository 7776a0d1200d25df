import math

import numpy as np
import pytest

from config import DEFAULT_CONSTANTS
from errors import ConfigError, InsufficientDataError
from lib.mixture_instance import MixtureInstance, SparseVector, planted_separable_instance
from mixture_oracle import ExactCountOracle, SampledMixtureOracle, default_batchsize
from vector_recovery import (LabeledQuerySet, decode_forced_labels, hard_threshold, inf_value, match_and_error,
                             num_gaussian_queries, one_stage_recover, onebit_estimate, truncated_gaussian,
                             two_stage_recover)


@pytest.fixture
def separable_instance():
    return planted_separable_instance(30, 3, 2, np.random.default_rng(12))


# Test case 1: Query counts and the forcing entry
def test_query_parameters():
    assert num_gaussian_queries(3, 0.1) == math.ceil(40.0 * 3 / 0.1 * math.log(3 / 0.1 + math.e))
    assert num_gaussian_queries(3, 0.05) > num_gaussian_queries(3, 0.1)
    assert inf_value(4, 0.5) == pytest.approx(10.0 * 6.0 * 2.0 / 0.5)
    with pytest.raises(ConfigError):
        num_gaussian_queries(0, 0.1)
    with pytest.raises(ConfigError):
        inf_value(4, 0.0)

    values = truncated_gaussian(np.random.default_rng(0), (2000, 5), 1.0)
    assert values.shape == (2000, 5)
    assert np.abs(values).max() <= 1.0


# Test case 2: Hard thresholding and forced-label decoding
def test_threshold_and_decode():
    np.testing.assert_array_equal(hard_threshold(np.array([0.1, -0.9, 0.5, 0.2]), 2), [0.0, -0.9, 0.5, 0.0])
    np.testing.assert_array_equal(hard_threshold(np.array([0.1, -0.9]), 5), [0.1, -0.9])
    np.testing.assert_array_equal(decode_forced_labels(np.array([1, 2, 1, 0]), 1), [-1, 1, -1, 1])


# Test case 3: The estimator averages y_i v_i over the target support
def test_onebit_mechanics():
    queries = np.array([[1.0, 2.0, 5.0],
                        [3.0, -1.0, 5.0],
                        [0.0, 1.0, 5.0]])
    lqs = LabeledQuerySet(queries, [1, -1, 1], (0, 1))
    estimate = onebit_estimate(lqs, 2)
    # (1 - 3 + 0, 2 + 1 + 1) / 3 = (-2/3, 4/3), normalized, nothing on coordinate 2
    expected = np.array([-1.0, 2.0, 0.0]) / np.sqrt(5.0)
    np.testing.assert_allclose(estimate.to_dense(), expected)
    assert estimate.is_unit()

    with pytest.raises(InsufficientDataError):
        onebit_estimate(LabeledQuerySet(np.zeros((0, 3)), [], (0,)), 1)
    with pytest.raises(InsufficientDataError):
        onebit_estimate(LabeledQuerySet([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0]], [1, -1], (0, 1)), 2)
    with pytest.raises(ConfigError):
        LabeledQuerySet(queries, [1, 0, 1], (0,))
    with pytest.raises(ConfigError):
        LabeledQuerySet(queries, [1, 1], (0,))


# Test case 4: Noiseless labels give a close estimate
def test_onebit_accuracy():
    beta = SparseVector(20, {3: 0.6, 11: -0.8})
    queries = truncated_gaussian(np.random.default_rng(3), (4000, 20), 6.0)
    labels = np.where(queries @ beta.to_dense() >= 0, 1, -1)
    estimate = onebit_estimate(LabeledQuerySet(queries, labels, range(20)), 2)
    assert estimate.support == (3, 11)
    assert np.linalg.norm(estimate.to_dense() - beta.to_dense()) < 0.05


# Test case 5: Matching estimates to components
def test_match_and_error():
    truth = [SparseVector(3, {0: 1.0}), SparseVector(3, {1: 0.6, 2: 0.8})]
    estimates = [np.array([0.0, 0.6, 0.8]), np.array([1.0, 0.0, 0.0])]
    sigma, errors, worst = match_and_error(estimates, truth)
    assert sigma == (1, 0)
    np.testing.assert_allclose(errors, [0.0, 0.0], atol=1e-12)
    assert worst == pytest.approx(0.0, abs=1e-12)

    # The true vectors are normalized before comparison
    _, errors, _ = match_and_error([np.array([1.0, 0.0])], [np.array([3.0, 0.0])])
    np.testing.assert_allclose(errors, [0.0], atol=1e-12)
    with pytest.raises(ConfigError):
        match_and_error(estimates, truth[:1])


# Test case 6: Two-stage recovery on a separable instance
def test_two_stage_recovery(separable_instance):
    oracle = SampledMixtureOracle(separable_instance, seed=5)
    result = two_stage_recover(oracle, 3, 2, seed=5, num_queries=2000)
    assert result.max_error < 0.25
    assert len(result.label_sets) == 2 and all(len(lqs) == 2000 for lqs in result.label_sets)
    assert sorted(result.queries_used) == ['recovery', 'support-puff', 'support-ruff', 'total']
    T = default_batchsize(2, DEFAULT_CONSTANTS.failure_budget, 2 * 2000)
    assert result.queries_used['recovery'] == 2 * 2 * 2000 * T


# Test case 7: The error shrinks as the number of queries grows
@pytest.mark.slow
def test_error_trend():
    budgets = (400, 1600, 5000, 6400)
    errors = {m: [] for m in budgets}
    for seed in range(30):
        instance = planted_separable_instance(50, 3, 2, np.random.default_rng(100 + seed))
        for m in budgets:
            result = two_stage_recover(ExactCountOracle(instance, seed=seed), 3, 2, seed=seed, num_queries=m)
            errors[m].append(result.max_error)
    medians = {m: np.median(errors[m]) for m in budgets}
    assert medians[5000] <= 0.2
    assert medians[1600] <= 0.8 * medians[400]
    assert medians[6400] <= 0.8 * medians[1600]


# Test case 8: Single-stage labels agree with two-stage labels on the same Gaussian rows
@pytest.mark.slow
@pytest.mark.parametrize("seed", range(10))
def test_one_stage_matches_two_stage(seed):
    instance = planted_separable_instance(50, 3, 2, np.random.default_rng(100 + seed))
    one = one_stage_recover(ExactCountOracle(instance, seed=seed), 3, 2, seed=seed, num_blocks=300)
    gaussian = [lqs.queries for lqs in one.label_sets]
    two = two_stage_recover(ExactCountOracle(instance, seed=seed), 3, 2, seed=seed, gaussian_queries=gaussian)
    assert one.support.canonical() == two.support.canonical()
    for a, b in zip(one.label_sets, two.label_sets):
        np.testing.assert_array_equal(a.labels, b.labels)
    for a, b in zip(one.estimates, two.estimates):
        np.testing.assert_array_equal(a.to_dense(), b.to_dense())

    design = one.design
    T = default_batchsize(2, DEFAULT_CONSTANTS.failure_budget, design.num_queries)
    assert one.queries_used['recovery'] == 2 * T * design.num_queries


# Test case 9: The single-stage design is fixed by the seed
def test_one_stage_design_is_deterministic(separable_instance):
    a = one_stage_recover(ExactCountOracle(separable_instance, seed=0), 3, 2, seed=4, num_blocks=20)
    b = one_stage_recover(SampledMixtureOracle(separable_instance, seed=7), 3, 2, seed=4, num_blocks=20)
    for x, y in zip(a.label_sets, b.label_sets):
        np.testing.assert_array_equal(x.queries, y.queries)
    with pytest.raises(ConfigError):
        one_stage_recover(ExactCountOracle(separable_instance), 3, 2, seed=4, num_blocks=0)


# Test case 10: A single component needs no forcing entries
def test_single_component():
    instance = MixtureInstance((SparseVector(12, {2: 0.6, 7: -0.8}),))
    one = one_stage_recover(ExactCountOracle(instance, seed=2), 2, 1, seed=2, num_blocks=2000)
    two = two_stage_recover(ExactCountOracle(instance, seed=2), 2, 1, seed=2, num_queries=2000)
    assert one.max_error < 0.1 and two.max_error < 0.1
    np.testing.assert_array_equal(one.rep_signs, two.rep_signs)


# Test case 11: The estimation error decays like m^(-1/2)
def test_onebit_error_rate():
    budgets = (100, 400, 1600, 6400)
    errors = {m: [] for m in budgets}
    for seed in range(30):
        rng = np.random.default_rng(seed)
        beta = planted_separable_instance(50, 5, 1, rng).components[0]
        queries = truncated_gaussian(rng, (budgets[-1], 50), 6.0)
        labels = np.where(queries @ beta.to_dense() >= 0, 1, -1)
        for m in budgets:
            estimate = onebit_estimate(LabeledQuerySet(queries[:m], labels[:m], beta.support), 5)
            errors[m].append(np.linalg.norm(estimate.to_dense() - beta.to_dense()))
    medians = np.array([np.median(errors[m]) for m in budgets])
    assert np.all(np.diff(medians) <= 0)
    # Four times the queries halve the error
    ratios = medians[1:] / medians[:-1]
    assert np.all((ratios >= 0.3) & (ratios <= 0.8))


# Test case 12: Forced labels are the answers of the target component
@pytest.mark.parametrize("ell", [2, 3])
def test_forced_label_decoding(ell):
    rng = np.random.default_rng(ell)
    instance = planted_separable_instance(30, 3, ell, rng)
    x = instance.support_matrix()
    b = instance.dense_matrix()
    reps = [int(np.flatnonzero((x[:, t] == 1) & (x.sum(axis=1) == 1))[0]) for t in range(ell)]
    oracle = ExactCountOracle(instance, seed=0)
    inf = inf_value(3, instance.mu_min)
    for t in range(ell):
        gauss = truncated_gaussian(rng, (1000, 30), 6.0)
        others = [u for u in range(ell) if u != t]
        queries = gauss.copy()
        queries[:, [reps[u] for u in others]] = inf
        forced_positive = sum(int(b[reps[u], u] > 0) for u in others)
        counts = oracle.estimate_counts_batch(queries, 1)
        labels = decode_forced_labels(counts.pos, forced_positive)
        np.testing.assert_array_equal(labels, np.where(gauss @ b[:, t] >= 0, 1, -1))
