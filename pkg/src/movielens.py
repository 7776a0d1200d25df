"""
MovieLens genre preferences

Treats a pair of MovieLens users as a mixture of two classifiers over genre indicator vectors.
A movie is a query, the genres a user likes form the hidden support, and the oracle replays the
like (+1) or dislike (-1) of a uniformly chosen user of the pair. The support pipeline for two
components recovers which genres each user likes:

1. Over m1 movies, the number of users liking each genre follows from the like counts of the
   movies containing it (the RUFF role).
2. Over m2 movies, genres liked by exactly one user are grouped: a movie whose liked genres are
   {g0, g} is liked by one user iff g0 and g belong to the same user (the PUFF role).

A user is predicted to like a movie iff the movie has a genre in their recovered set.
"""
from __future__ import annotations

import logging
import os
import re
from dataclasses import dataclass
from itertools import combinations

import numpy as np
import pandas as pd

from config import FAILURE_BUDGET, data_dir
from errors import ConfigError, InsufficientDataError, MalformedDataError
from lib.random_streams import stream_rng, substream
from mixture_oracle import QueryLedger, default_batchsize

logger = logging.getLogger(__name__)

# The 20 genre strings of ml-latest-small, in lexicographic order
GENRES = tuple(sorted((
    "(no genres listed)", "Action", "Adventure", "Animation", "Children", "Comedy", "Crime", "Documentary",
    "Drama", "Fantasy", "Film-Noir", "Horror", "IMAX", "Musical", "Mystery", "Romance", "Sci-Fi", "Thriller",
    "War", "Western",
)))
MEAN_RATING_RANGE = (2.5, 3.5)
LIKE_THRESHOLD = 3.0
MIN_COMMON_MOVIES = 500
DATASET_NAME = "ml-latest-small"


@dataclass
class PreferenceInstance:
    """
    Genre preferences and like labels of a user pair over the filtered movies
    """
    genres: tuple
    users: tuple
    preferences: np.ndarray
    movie_ids: np.ndarray
    features: np.ndarray
    likes: np.ndarray
    common: np.ndarray
    tests: tuple

    def __post_init__(self):
        self.preferences = np.asarray(self.preferences, dtype=np.int64)
        self.features = np.asarray(self.features, dtype=np.int64)
        self.likes = np.asarray(self.likes, dtype=np.int64)
        if not np.all(np.isin(self.preferences, (0, 1))) or not np.all(np.isin(self.features, (0, 1))):
            raise ConfigError("Preference and genre vectors must be binary.")
        if self.preferences.shape != (2, len(self.genres)):
            raise ConfigError("Expected one preference vector per user over all genres.")
        for test in self.tests:
            if np.intersect1d(test, self.common).size:
                raise ConfigError("Test movies must not be rated by both users.")

    @property
    def n(self) -> int:
        return len(self.genres)

    def like_counts(self, movies) -> np.ndarray:
        """
        Number of users of the pair liking each of the given movies
        """
        return (self.likes[:, np.asarray(movies, dtype=np.int64)] == 1).sum(axis=0)


# ================================================================
# Ingestion
# ================================================================
def _read_table(path: str, columns: tuple) -> pd.DataFrame:
    try:
        table = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.ParserError as exc:
        lines = [int(x) for x in re.findall(r"line (\d+)", str(exc))]
        raise MalformedDataError(f"{path}: {exc}", lines) from exc
    except OSError as exc:
        raise ConfigError(f"Cannot read {path}: {exc}") from exc
    missing = [c for c in columns if c not in table.columns]
    if missing:
        raise MalformedDataError(f"{path}: missing columns {', '.join(missing)}.", [1])
    return table


def _bad_lines(mask: pd.Series) -> list:
    # Data rows start on line 2, after the header
    return [int(i) + 2 for i in np.flatnonzero(mask.to_numpy())]


def read_ratings(path: str) -> pd.DataFrame:
    """
    :return: Ratings with integer userId and movieId and float rating.
    """
    table = _read_table(path, ('userId', 'movieId', 'rating', 'timestamp'))
    out = pd.DataFrame({
        'userId': pd.to_numeric(table['userId'], errors='coerce'),
        'movieId': pd.to_numeric(table['movieId'], errors='coerce'),
        'rating': pd.to_numeric(table['rating'], errors='coerce'),
    })
    bad = out.isna().any(axis=1) | ~out['rating'].between(0.0, 5.0)
    bad |= (out['userId'] % 1 != 0) | (out['movieId'] % 1 != 0)
    if bad.any():
        lines = _bad_lines(bad)
        raise MalformedDataError(f"{path}: malformed ratings on lines {lines[:10]}.", lines)
    return out.astype({'userId': np.int64, 'movieId': np.int64})


def read_movies(path: str) -> pd.DataFrame:
    """
    :return: Movies with integer movieId and the list of their genres.
    """
    table = _read_table(path, ('movieId', 'title', 'genres'))
    ids = pd.to_numeric(table['movieId'], errors='coerce')
    genres = table['genres'].str.split('|')
    unknown = genres.map(lambda gs: any(g not in GENRES for g in gs))
    bad = ids.isna() | (ids % 1 != 0) | unknown
    if bad.any():
        lines = _bad_lines(bad)
        raise MalformedDataError(f"{path}: malformed movies on lines {lines[:10]}.", lines)
    return pd.DataFrame({'movieId': ids.astype(np.int64), 'genres': genres})


def common_counts(ratings: pd.DataFrame) -> pd.Series:
    """
    Number of commonly rated movies for every user pair with at least one
    """
    by_user = ratings.groupby('userId')['movieId'].apply(frozenset)
    counts = {}
    for (u, a), (w, b) in combinations(by_user.items(), 2):
        common = len(a & b)
        if common:
            counts[(int(u), int(w))] = common
    return pd.Series(counts, dtype=np.int64)


def eligible_pairs(ratings: pd.DataFrame, min_common: int = MIN_COMMON_MOVIES) -> list:
    """
    User pairs with at least min_common commonly rated movies, most common first
    """
    counts = common_counts(ratings)
    counts = counts[counts >= min_common]
    return sorted(counts.index, key=lambda pair: (-counts[pair], pair))


def build_preference_instance(ratings: pd.DataFrame, movies: pd.DataFrame, users: tuple,
                              min_common: int = MIN_COMMON_MOVIES) -> PreferenceInstance:
    """
    Filter the movies and build the preference instance of one user pair
    :param ratings: Parsed ratings
    :param movies: Parsed movies
    :param users: The two user ids
    :param min_common: Required number of movies rated by both users
    :return: The preference instance
    """
    ratings = ratings[ratings['movieId'].isin(movies['movieId'])]
    means = ratings.groupby('movieId')['rating'].mean()
    low, high = MEAN_RATING_RANGE
    kept = np.sort(means.index[(means >= low) & (means <= high)].to_numpy())
    movies = movies.set_index('movieId').loc[kept]
    features = np.zeros((kept.size, len(GENRES)), dtype=np.int64)
    position = {g: j for j, g in enumerate(GENRES)}
    for i, genres in enumerate(movies['genres']):
        features[i, [position[g] for g in genres]] = 1

    index = pd.Series(np.arange(kept.size), index=kept)
    likes = np.full((2, kept.size), -1, dtype=np.int64)
    preferences = np.zeros((2, len(GENRES)), dtype=np.int64)
    for u, user in enumerate(users):
        own = ratings[(ratings['userId'] == user) & ratings['movieId'].isin(kept)]
        if own.empty:
            raise InsufficientDataError(f"User {user} rated none of the filtered movies.")
        rows = index[own['movieId']].to_numpy()
        likes[u, rows] = (own['rating'].to_numpy() >= LIKE_THRESHOLD).astype(np.int64)
        rated = features[rows]
        liked = rated[likes[u, rows] == 1]
        # Genres without rated movies stay at 0
        total = rated.sum(axis=0)
        preferences[u] = (total > 0) & (2 * liked.sum(axis=0) >= total)

    rated_by = likes >= 0
    common = np.flatnonzero(rated_by[0] & rated_by[1])
    if common.size < min_common:
        raise InsufficientDataError(
            f"Users {users[0]} and {users[1]} share {common.size} rated movies, below {min_common}.")
    tests = tuple(np.flatnonzero(rated_by[u] & ~rated_by[1 - u]) for u in range(2))
    logger.info("Users %s: %d filtered movies, %d rated by both, %d and %d test movies", users, kept.size,
                common.size, tests[0].size, tests[1].size)
    return PreferenceInstance(GENRES, tuple(int(u) for u in users), preferences, kept, features, likes, common,
                              tests)


def ingest_movielens(ratings_path: str, movies_path: str, users: tuple = None,
                     min_common: int = MIN_COMMON_MOVIES) -> PreferenceInstance:
    """
    Read the MovieLens files and build the preference instance of a user pair
    :param ratings_path: CSV with userId,movieId,rating,timestamp
    :param movies_path: CSV with movieId,title,genres
    :param users: The user pair; the pair with the most common movies is chosen if omitted
    :param min_common: Required number of movies rated by both users
    :return: The preference instance
    """
    ratings = read_ratings(ratings_path).sort_values(['userId', 'movieId'], kind='stable')
    movies = read_movies(movies_path).sort_values('movieId', kind='stable')
    if users is None:
        pairs = eligible_pairs(ratings, min_common)
        if not pairs:
            raise InsufficientDataError(f"No user pair shares {min_common} rated movies.")
        users = pairs[0]
    if len(users) != 2 or users[0] == users[1]:
        raise ConfigError("Exactly two distinct users are required.")
    return build_preference_instance(ratings, movies, tuple(users), min_common)


# ================================================================
# Oracle
# ================================================================
class PreferenceOracle:
    """
    Replays the like of a uniformly chosen user of the pair for movies both users rated
    """

    def __init__(self, pref: PreferenceInstance, seed=None, exact: bool = False, ledger: QueryLedger = None):
        self.pref = pref
        self.rng = np.random.default_rng(seed)
        self.exact = exact
        self.ledger = ledger if ledger is not None else QueryLedger()
        self._common = set(int(i) for i in pref.common)

    def __check__(self, movies: np.ndarray) -> np.ndarray:
        movies = np.atleast_1d(np.asarray(movies, dtype=np.int64))
        if any(int(i) not in self._common for i in movies):
            raise ConfigError("The oracle only answers for movies rated by both users.")
        return movies

    def respond(self, movie: int) -> int:
        movie = self.__check__(movie)[0]
        user = self.rng.integers(2)
        self.ledger.charge("recovery", 1)
        return 1 if self.pref.likes[user, movie] == 1 else -1

    def like_counts(self, movies, T: int) -> np.ndarray:
        """
        Estimate how many users like each movie from T answers per movie
        """
        if T < 1:
            raise ConfigError("The batchsize must be at least 1.")
        movies = self.__check__(movies)
        self.ledger.charge("recovery", T * movies.size)
        truth = self.pref.like_counts(movies)
        if self.exact:
            return truth
        liked = self.rng.binomial(T, truth / 2.0)
        return np.clip(np.floor(2.0 * liked / T + 0.5), 0, 2).astype(np.int64)


# ================================================================
# Recovery
# ================================================================
def _threshold_level(counts: np.ndarray) -> int:
    """
    Largest h such that at least half of the counts reach h
    """
    if counts.size == 0:
        return 0
    levels = [h for h in (1, 2) if np.mean(counts >= h) >= 0.5]
    return max(levels, default=0)


def genre_sizes(pref: PreferenceInstance, oracle: PreferenceOracle, movies, T: int) -> np.ndarray:
    """
    Number of users liking each genre, estimated from the like counts of the given movies
    """
    movies = np.asarray(movies, dtype=np.int64)
    sizes = np.zeros(pref.n, dtype=np.int64)
    if movies.size == 0:
        return sizes
    counts = oracle.like_counts(movies, T)
    features = pref.features[movies]
    for g in range(pref.n):
        sizes[g] = _threshold_level(counts[features[:, g] == 1])
    return sizes


def recover_preferences(pref: PreferenceInstance, oracle: PreferenceOracle, m1_movies, m2_movies,
                        T: int) -> np.ndarray:
    """
    Recover the liked genres of both users, up to swapping the users
    :param pref: The preference instance (only genre vectors of the queried movies are read)
    :param oracle: The preference oracle
    :param m1_movies: Movies used to count the users liking each genre
    :param m2_movies: Movies used to group the genres liked by one user
    :param T: Answers per movie
    :return: Binary array of shape (2, genres)
    """
    sizes = genre_sizes(pref, oracle, m1_movies, T)
    both = sizes == 2
    single = np.flatnonzero(sizes == 1)
    recovered = np.zeros((2, pref.n), dtype=np.int64)
    recovered[:, both] = 1
    if single.size == 0:
        return recovered

    m2_movies = np.asarray(m2_movies, dtype=np.int64)
    counts = oracle.like_counts(m2_movies, T) if m2_movies.size else np.zeros(0, dtype=np.int64)
    liked_any = sizes > 0
    # Genres of every alignment movie among those liked by someone
    liked_sets = [frozenset(int(g) for g in np.flatnonzero(pref.features[i] & liked_any)) for i in m2_movies]

    def union_size(a: int, b: int) -> int:
        hits = np.array([s == {a, b} for s in liked_sets], dtype=bool)
        return _threshold_level(counts[hits]) if hits.any() else 0

    owner = {int(single[0]): 0}
    pending = [int(g) for g in single[1:]]
    progress = True
    while pending and progress:
        progress = False
        for g in list(pending):
            for anchor, side in list(owner.items()):
                size = union_size(anchor, g)
                if size in (1, 2):
                    owner[g] = side if size == 1 else 1 - side
                    pending.remove(g)
                    progress = True
                    break
    if pending:
        logger.warning("Could not assign genres %s to a user; they are left out",
                       ", ".join(pref.genres[g] for g in pending))
    for g, side in owner.items():
        recovered[side, g] = 1
    return recovered


# ================================================================
# Evaluation
# ================================================================
def prediction_metrics(pref: PreferenceInstance, user: int, genres: np.ndarray) -> dict:
    """
    Accuracy, precision and recall of predicting the user's test likes from a genre set
    """
    test = pref.tests[user]
    truth = pref.likes[user, test] == 1
    predicted = (pref.features[test] @ np.asarray(genres, dtype=np.int64)) > 0
    tp = int(np.sum(predicted & truth))
    accuracy = float(np.mean(predicted == truth)) if test.size else float('nan')
    precision = tp / int(predicted.sum()) if predicted.any() else 0.0
    recall = tp / int(truth.sum()) if truth.any() else 0.0
    return {'accuracy': accuracy, 'precision': precision, 'recall': recall}


def evaluate_preferences(pref: PreferenceInstance, recovered: np.ndarray) -> list:
    """
    Metrics for both users under the assignment of recovered rows with the higher mean accuracy
    :return: One metrics dict per user
    """
    best = None
    for order in ((0, 1), (1, 0)):
        metrics = [prediction_metrics(pref, u, recovered[order[u]]) for u in range(2)]
        score = np.nanmean([m['accuracy'] for m in metrics])
        if best is None or score > best[0]:
            best = (score, metrics)
    return best[1]


def movielens_experiment(pref: PreferenceInstance, m1: int, m2: int, seeds, T: int = None,
                         exact: bool = False) -> pd.DataFrame:
    """
    Recover the preferences of a user pair from random movies and validate them on the test movies
    :param pref: The preference instance
    :param m1: Movies used to count users per genre
    :param m2: Movies used to group genres
    :param seeds: Seeds of the movie draws and oracle answers
    :param T: Answers per movie (from the failure budget by default)
    :param exact: Use exact like counts
    :return: Table with one row per user: metrics averaged over the seeds
    """
    seeds = list(seeds)
    if not seeds:
        raise ConfigError("At least one seed is required.")
    if m1 < 0 or m2 < 0:
        raise ConfigError("m1 and m2 must be nonnegative.")
    if m1 + m2 > pref.common.size:
        raise InsufficientDataError(f"m1 + m2 = {m1 + m2} exceeds the {pref.common.size} common movies.")
    T = T if T is not None else default_batchsize(2, FAILURE_BUDGET, max(m1 + m2, 1))
    rows = []
    for seed in seeds:
        chosen = stream_rng(seed, 'movies').choice(pref.common, size=m1 + m2, replace=False)
        oracle = PreferenceOracle(pref, substream(seed, 'oracle'), exact)
        recovered = recover_preferences(pref, oracle, chosen[:m1], chosen[m1:], T)
        for u, metrics in enumerate(evaluate_preferences(pref, recovered)):
            rows.append({'seed': seed, 'user': pref.users[u], **metrics})
    table = pd.DataFrame(rows).groupby('user', sort=False)[['accuracy', 'precision', 'recall']].mean()
    table = table.reset_index()
    table.insert(0, 'pair', f"{pref.users[0]}-{pref.users[1]}")
    table.insert(2, 'm1', m1)
    table.insert(3, 'm2', m2)
    logger.info("m1=%d, m2=%d: accuracy %s", m1, m2,
                ", ".join(f"{u}: {a:.3f}" for u, a in zip(table['user'], table['accuracy'])))
    return table


def default_paths() -> tuple:
    root = os.path.join(data_dir(), DATASET_NAME)
    return os.path.join(root, 'ratings.csv'), os.path.join(root, 'movies.csv')


def movielens_from_config(cfg) -> pd.DataFrame:
    """
    Run the MovieLens experiment of a config with kind = movielens
    """
    ratings_path, movies_path = default_paths()
    pref = ingest_movielens(cfg.ratings or ratings_path, cfg.movies or movies_path,
                            tuple(cfg.users) or None, cfg.min_common)
    return movielens_experiment(pref, cfg.m1, cfg.m2, cfg.seeds, exact=cfg.exact_oracle)
