import dataclasses
import logging
import os
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from errors import ConfigError, InsufficientDataError, MalformedDataError
from experiments import MOVIELENS, ExperimentConfig, run_experiment
from movielens import (GENRES, PreferenceOracle, default_paths, eligible_pairs, evaluate_preferences,
                       genre_sizes, ingest_movielens, movielens_experiment, prediction_metrics, read_ratings,
                       recover_preferences)

FIXTURE = Path(__file__).parent / "data" / "movielens"
RATINGS = str(FIXTURE / "ratings.csv")
MOVIES = str(FIXTURE / "movies.csv")


@pytest.fixture
def pref():
    return ingest_movielens(RATINGS, MOVIES, (1, 2), min_common=10)


def liked(pref, user):
    return {pref.genres[g] for g in np.flatnonzero(pref.preferences[user])}


def genre_vector(*names):
    return np.array([1 if g in names else 0 for g in GENRES])


# Test case 1: Ingestion of the fixture
def test_ingest_fixture(pref):
    assert GENRES == tuple(sorted(GENRES)) and len(GENRES) == 20
    assert pref.users == (1, 2) and pref.n == 20
    # Movie 21 has a mean rating of 4.2 and movie 22 no ratings at all
    np.testing.assert_array_equal(pref.movie_ids, np.arange(1, 21))
    np.testing.assert_array_equal(pref.common, np.arange(12))
    np.testing.assert_array_equal(pref.tests[0], np.arange(12, 16))
    np.testing.assert_array_equal(pref.tests[1], np.arange(16, 20))
    assert liked(pref, 0) == {"Action", "Drama"}
    assert liked(pref, 1) == {"Comedy", "Drama"}
    np.testing.assert_array_equal(pref.features[4], genre_vector("Action", "Comedy"))
    # A rating of exactly 3 counts as a like
    assert pref.likes[0, 9] == 1
    # Unrated movies are marked -1
    assert pref.likes[1, 12] == -1
    np.testing.assert_array_equal(pref.like_counts(pref.common), [1, 1, 2, 0, 2, 1, 1, 2, 0, 1, 1, 0])


# Test case 2: Pairs ranked by the number of common movies
def test_eligible_pairs():
    ratings = read_ratings(RATINGS)
    assert eligible_pairs(ratings, 10) == [(1, 3), (2, 3), (1, 2)]
    assert eligible_pairs(ratings, 17) == [(1, 3)]
    assert ingest_movielens(RATINGS, MOVIES, min_common=10).users == (1, 3)
    with pytest.raises(InsufficientDataError):
        ingest_movielens(RATINGS, MOVIES, min_common=100)
    with pytest.raises(InsufficientDataError):
        ingest_movielens(RATINGS, MOVIES, (1, 2), min_common=13)
    with pytest.raises(ConfigError):
        ingest_movielens(RATINGS, MOVIES, (1, 1), min_common=10)


# Test case 3: Shuffled input rows give the same instance
def test_order_independence(tmp_path, pref):
    for name in ("ratings.csv", "movies.csv"):
        lines = (FIXTURE / name).read_text().splitlines()
        rows = lines[1:]
        np.random.default_rng(3).shuffle(rows)
        (tmp_path / name).write_text("\n".join([lines[0]] + rows) + "\n")
    shuffled = ingest_movielens(str(tmp_path / "ratings.csv"), str(tmp_path / "movies.csv"), (1, 2), 10)
    for f in ("preferences", "movie_ids", "features", "likes", "common"):
        np.testing.assert_array_equal(getattr(shuffled, f), getattr(pref, f))
    for a, b in zip(shuffled.tests, pref.tests):
        np.testing.assert_array_equal(a, b)


# Test case 4: Malformed rows are reported with their line numbers
def test_malformed_files(tmp_path):
    header = "userId,movieId,rating,timestamp\n"
    path = tmp_path / "ratings.csv"
    path.write_text(header + "1,1,4.0,0\n1,abc,4.0,0\n2,1,7.5,0\n")
    with pytest.raises(MalformedDataError) as info:
        read_ratings(str(path))
    assert info.value.line_numbers == [3, 4]

    path.write_text(header + "1,1,4.0,0\n1,2,4.0,0,9\n")
    with pytest.raises(MalformedDataError) as info:
        read_ratings(str(path))
    assert 3 in info.value.line_numbers

    path.write_text("userId,movieId\n1,1\n")
    with pytest.raises(MalformedDataError):
        read_ratings(str(path))

    movies = tmp_path / "movies.csv"
    movies.write_text("movieId,title,genres\n1,A,Action\n2,B,Cartoon|Comedy\n")
    with pytest.raises(MalformedDataError) as info:
        ingest_movielens(RATINGS, str(movies), (1, 2))
    assert info.value.line_numbers == [3]

    with pytest.raises(ConfigError):
        read_ratings(str(tmp_path / "missing.csv"))


# Test case 5: Users per genre from the like counts
def test_genre_sizes(pref):
    oracle = PreferenceOracle(pref, seed=0, exact=True)
    sizes = genre_sizes(pref, oracle, pref.common, 10)
    expected = dict(zip(GENRES, sizes))
    assert (expected["Action"], expected["Comedy"], expected["Drama"], expected["Horror"]) == (1, 1, 2, 0)
    assert sizes.sum() == 4
    np.testing.assert_array_equal(genre_sizes(pref, oracle, [], 10), np.zeros(20))


# Test case 6: Exact recovery on the fixture, with exact and sampled like counts
@pytest.mark.parametrize("exact", [True, False])
def test_recover_preferences(pref, exact):
    oracle = PreferenceOracle(pref, seed=4, exact=exact)
    recovered = recover_preferences(pref, oracle, pref.common, pref.common, 200)
    np.testing.assert_array_equal(recovered, pref.preferences)
    metrics = evaluate_preferences(pref, recovered)
    assert [m['accuracy'] for m in metrics] == [1.0, 1.0]
    assert [m['precision'] for m in metrics] == [1.0, 1.0]
    assert [m['recall'] for m in metrics] == [1.0, 1.0]
    assert oracle.ledger.snapshot() == {'total': 2 * 12 * 200, 'recovery': 2 * 12 * 200}


# Test case 7: The better assignment of recovered rows to users is used
def test_evaluate_swapped(pref):
    swapped = pref.preferences[::-1]
    assert [m['accuracy'] for m in evaluate_preferences(pref, swapped)] == [1.0, 1.0]
    # Nothing predicted positive: all-dislike baseline
    metrics = prediction_metrics(pref, 0, np.zeros(20))
    assert metrics == {'accuracy': 0.5, 'precision': 0.0, 'recall': 0.0}


# Test case 8: Zero movies reproduce the all-dislike baseline
def test_experiment_baseline(pref):
    table = movielens_experiment(pref, 0, 0, seeds=[0, 1], exact=True)
    assert list(table.columns) == ['pair', 'user', 'm1', 'm2', 'accuracy', 'precision', 'recall']
    assert list(table['pair']) == ['1-2', '1-2'] and list(table['user']) == [1, 2]
    np.testing.assert_allclose(table['accuracy'], [0.5, 0.5])
    np.testing.assert_allclose(table['precision'], [0.0, 0.0])


# Test case 9: Genres that cannot be aligned are left out with a warning
def test_unaligned_genres(pref, caplog):
    with caplog.at_level(logging.WARNING, logger="movielens"):
        table = movielens_experiment(pref, 12, 0, seeds=[0], exact=True)
    assert any("Comedy" in record.getMessage() for record in caplog.records)
    np.testing.assert_allclose(table['accuracy'], [1.0, 0.75])

    table = movielens_experiment(pref, 6, 6, seeds=range(5))
    assert len(table) == 2
    assert table['accuracy'].between(0.0, 1.0).all()
    with pytest.raises(InsufficientDataError):
        movielens_experiment(pref, 10, 3, seeds=[0])
    with pytest.raises(ConfigError):
        movielens_experiment(pref, 1, 1, seeds=[])


# Test case 10: The oracle answers for common movies only
def test_preference_oracle(pref):
    oracle = PreferenceOracle(pref, seed=1)
    assert {oracle.respond(0) for _ in range(50)} == {1, -1}
    assert oracle.respond(2) == 1
    assert oracle.ledger.total_oracle_calls == 51
    with pytest.raises(ConfigError):
        oracle.like_counts([12], 5)
    with pytest.raises(ConfigError):
        oracle.like_counts([0], 0)
    with pytest.raises(ConfigError):
        dataclasses.replace(pref, tests=(pref.common[:1], pref.tests[1]))


# Test case 11: A movielens config writes the table
def test_movielens_config(tmp_path):
    out = tmp_path / "movielens.csv"
    cfg = ExperimentConfig(MOVIELENS, ratings=RATINGS, movies=MOVIES, users=(1, 2), min_common=10, m1=0, m2=0,
                           seeds=(0,), exact_oracle=True, out=str(out))
    run_experiment(cfg)
    written = pd.read_csv(out)
    assert list(written['accuracy']) == [0.5, 0.5]


# Test case 12: Numbers of the published table on the real dataset, when available
@pytest.mark.skipif(not os.path.exists(default_paths()[0]), reason="ml-latest-small is not available")
def test_real_dataset():
    ratings, movies = default_paths()
    pref = ingest_movielens(ratings, movies, (68, 448), min_common=1)
    baseline = movielens_experiment(pref, 0, 0, seeds=[0])
    np.testing.assert_allclose(baseline['accuracy'], [0.300, 0.435], atol=0.05)
    table = movielens_experiment(pref, 10, 20, seeds=range(100))
    np.testing.assert_allclose(table['accuracy'], [0.670, 0.528], atol=0.15)
