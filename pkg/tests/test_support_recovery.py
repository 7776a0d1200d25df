import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from errors import AssumptionViolatedError, InconsistencyError
from lib.mixture_instance import (MixtureInstance, SparseVector, enumerate_support_patterns, instance_from_supports,
                                  planted_separable_instance)
from mixture_oracle import ExactCountOracle, SampledMixtureOracle
from set_families import construct_ruff
from support_recovery import (SupportMatrix, build_gram, compute_s_sizes, factorize_support, plan_support_queries,
                              recover_rep_signs, recover_support, representatives, support_and_signs,
                              support_stage)


def planted_x(seed):
    rng = np.random.default_rng(seed)
    ell = int(rng.integers(1, 5))
    n = int(rng.integers(ell, 51))
    x = (rng.random((n, ell)) < 0.3).astype(np.int64)
    x[rng.choice(n, size=ell, replace=False)] = np.eye(ell, dtype=np.int64)
    return x


def columns(x):
    return sorted(tuple(np.flatnonzero(x[:, t])) for t in range(x.shape[1]))


# Test case 1: The factorization inverts X X^T for separable X
def test_factorization_recovers_x():
    for seed in range(500):
        x = planted_x(seed)
        recovered = factorize_support(x @ x.T, x.shape[1])
        assert columns(recovered.x) == columns(x)
        assert sorted(recovered.reps) == sorted(representatives(x))


# Test case 2: Factorization of arbitrary separable matrices
@settings(max_examples=100, deadline=None)
@given(n=st.integers(min_value=1, max_value=12), ell=st.integers(min_value=1, max_value=3), data=st.data())
def test_factorization_property(n, ell, data):
    if ell > n:
        ell = n
    x = np.array(data.draw(st.lists(st.lists(st.integers(0, 1), min_size=ell, max_size=ell),
                                    min_size=n, max_size=n)), dtype=np.int64).reshape(n, ell)
    x[:ell] = np.eye(ell, dtype=np.int64)
    recovered = factorize_support(x @ x.T, ell)
    np.testing.assert_array_equal(recovered.x @ recovered.x.T, x @ x.T)
    assert columns(recovered.x) == columns(x)


# Test case 3: Gram assembly by inclusion-exclusion
def test_build_gram():
    s = np.array([1, 2, 0])
    union = np.array([[1, 2, 1],
                      [2, 2, 2],
                      [1, 2, 0]])
    z = build_gram(s, union)
    np.testing.assert_array_equal(z, [[1, 1, 0], [1, 2, 0], [0, 0, 0]])

    with pytest.raises(InconsistencyError):
        build_gram(np.array([1, 1]), np.array([[1, 3], [3, 1]]))


# Test case 4: Gram matrices without enough private coordinates
def test_factorization_errors():
    # Both coordinates used by both components: no private coordinate at all
    z = np.array([[2, 2], [2, 2]])
    with pytest.raises(AssumptionViolatedError):
        factorize_support(z, 2)
    with pytest.raises(AssumptionViolatedError):
        representatives(np.array([[1, 1], [1, 0]]))


# Test case 5: |S(i)| from the RUFF battery with exact counts
def test_s_sizes_exact():
    instance = planted_separable_instance(40, 3, 3, np.random.default_rng(2), overlap=2)
    oracle = ExactCountOracle(instance, seed=0)
    ruff = construct_ruff(40, 9, 0.5, seed=5)
    s_sizes = compute_s_sizes(oracle, ruff, 10)
    np.testing.assert_array_equal(s_sizes, instance.support_matrix().sum(axis=1))
    assert oracle.ledger.snapshot() == {'total': 2 * 10 * ruff.m, 'support-ruff': 2 * 10 * ruff.m}

    # Without rows there is no evidence
    empty = construct_ruff(40, 9, 0.5, seed=5, m=0)
    np.testing.assert_array_equal(compute_s_sizes(oracle, empty, 10), np.zeros(40))


# Test case 6: Exhaustive small sweep with exact counts
@pytest.mark.parametrize("n", [3, 4, 5, 6])
@pytest.mark.parametrize("ell", [1, 2])
def test_exhaustive_small_supports(n, ell):
    for i, supports in enumerate(enumerate_support_patterns(n, 2, ell)):
        instance = instance_from_supports(n, supports, np.random.default_rng(i))
        oracle = ExactCountOracle(instance, seed=i)
        recovered = recover_support(oracle, 2, ell, seed=i)
        assert recovered.canonical() == sorted(tuple(s) for s in supports)


# Test case 7: Desk-scale recovery with sampled counts
@pytest.mark.parametrize("ell", [2, 3])
def test_sampled_support_recovery(ell):
    exact = 0
    for seed in range(50):
        instance = planted_separable_instance(100, 3, ell, np.random.default_rng(seed))
        oracle = SampledMixtureOracle(instance, seed=seed)
        try:
            recovered = recover_support(oracle, 3, ell, seed=seed)
        except (AssumptionViolatedError, InconsistencyError):
            continue
        truth = [tuple(beta.support) for beta in instance.components]
        exact += recovered.canonical() == sorted(truth)
    assert exact >= 48


# Test case 8: Representative signs read from isolating RUFF rows
def test_rep_signs():
    instance = MixtureInstance((SparseVector(8, {0: -0.6, 3: 0.8}), SparseVector(8, {3: 0.6, 5: 0.8}),
                                SparseVector(8, {6: -1.0})))
    oracle = ExactCountOracle(instance, seed=0)
    stage, signs = support_and_signs(oracle, 2, 3, seed=4)
    expected = [int(np.sign(instance.dense_matrix()[rep, :].sum())) for rep in stage.support.reps]
    np.testing.assert_array_equal(signs, expected)
    # The signs reuse the RUFF answers
    assert 'sign' not in oracle.ledger.snapshot()

    calls = oracle.ledger.total_oracle_calls
    fresh = recover_rep_signs(oracle, stage.support, stage.ruff, 10)
    np.testing.assert_array_equal(fresh, expected)
    assert oracle.ledger.snapshot()['sign'] == oracle.ledger.total_oracle_calls - calls


# Test case 9: The plan matches the charged calls
def test_plan_matches_ledger():
    instance = planted_separable_instance(60, 3, 2, np.random.default_rng(8))
    oracle = ExactCountOracle(instance, seed=0)
    stage = support_stage(oracle, 3, 2, seed=8)
    plan = plan_support_queries(60, 3, 2)
    ledger = oracle.ledger.snapshot()
    assert ledger['support-ruff'] == plan['calls_ruff']
    assert ledger['support-puff'] == plan['calls_puff']
    assert stage.batchsizes == {'ruff': plan['T_ruff'], 'puff': plan['T_puff']}
    assert stage.ruff.m == plan['m_ruff'] and stage.puff.m == plan['m_puff']


# Test case 10: Support queries grow like k^3 up to logarithmic factors
def test_query_growth_in_k():
    ratio = plan_support_queries(200, 6, 2)['calls'] / plan_support_queries(200, 3, 2)['calls']
    assert 4 <= ratio <= 16


# Test case 11: Support matrix helpers
def test_support_matrix():
    support = SupportMatrix(np.array([[1, 0], [1, 1], [0, 0], [0, 1]]), (0, 3))
    assert (support.n, support.ell) == (4, 2)
    assert support.column(1) == (1, 3)
    np.testing.assert_array_equal(support.union(), [0, 1, 3])
    assert support.canonical() == [(0, 1), (1, 3)]


# Test case 12: The assembled Gram matrix is X X^T, hence symmetric and positive semidefinite
@pytest.mark.parametrize("ell", [2, 3])
def test_gram_is_psd(ell):
    for seed in range(10):
        instance = planted_separable_instance(40, 3, ell, np.random.default_rng(seed), overlap=2)
        stage = support_stage(ExactCountOracle(instance, seed=seed), 3, ell, seed=seed)
        z = stage.gram
        np.testing.assert_array_equal(z, z.T)
        assert np.linalg.eigvalsh(z.astype(np.float64)).min() >= -1e-9
        x = instance.support_matrix()
        np.testing.assert_array_equal(z, x @ x.T)
