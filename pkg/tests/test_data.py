import math
from functools import partial

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmarl.data import (
    CityTable,
    DatasetError,
    MovieLensData,
    build_covid_env,
    build_movielens_env,
    haversine_matrix,
    load_cities,
    load_ratings,
    pearson_matrix,
    pearson_similarity,
    prepare_movielens,
    resolve_item,
    top_positive,
)
from gmarl.envs import ReplayEnv, generate_episode
from gmarl.graph_env import check_adjacency, dump_trajectory, load_trajectory

NAN = np.nan


def write_movielens(root, n_users=40, n_items=30, seed=0):
    rng = np.random.default_rng(seed)
    taste = rng.standard_normal(n_users)
    rows = []
    for u in range(1, n_users + 1):
        rated = rng.choice(np.arange(2, n_items + 1), size=rng.integers(6, 15), replace=False)
        if u <= 32:
            rated = np.append(rated, 1)  # item 1 is the target
        for i in rated:
            r = int(np.clip(np.round(3 + taste[u - 1] * (1 if i % 2 else -1) + rng.normal(0, 0.7)), 1, 5))
            rows.append((u, int(i), r, 880000000 + len(rows)))
    root.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows).to_csv(root / "u.data", sep="\t", header=False, index=False)
    titles = ["Star Wars (1977)"] + [f"Movie {i} (1990)" for i in range(2, n_items + 1)]
    (root / "u.item").write_text("".join(f"{i}|{t}|01-Jan-1990||\n" for i, t in enumerate(titles, 1)), encoding="latin-1")
    return root


@pytest.fixture(scope="module")
def movielens(tmp_path_factory):
    return MovieLensData.from_dir(write_movielens(tmp_path_factory.mktemp("ml") / "ml-100k"))


def write_cities(path, n=45, days=120, seed=0, missing=0):
    rng = np.random.default_rng(seed)
    lat = rng.uniform(25, 48, n)
    lon = rng.uniform(-120, -70, n)
    cases = rng.poisson(rng.uniform(1, 200, n)[:, None] * np.linspace(0.1, 1, days)[None, :])
    df = pd.DataFrame(cases, columns=[f"d{d}" for d in range(days)])
    df.insert(0, "lon", lon)
    df.insert(0, "lat", lat)
    df.insert(0, "city", [f"c{i}" for i in range(n)])
    if missing:
        df.loc[: missing - 1, "lat"] = NAN
    df.to_csv(path, index=False)
    return path


@pytest.fixture(scope="module")
def cities(tmp_path_factory):
    return load_cities(write_cities(tmp_path_factory.mktemp("covid") / "cities.csv"))


# -- Pearson -------------------------------------------------------------------------


def test_pearson_examples():
    u = np.array([1.0, 4.0, NAN, 2.0, 5.0])
    assert math.isclose(pearson_similarity(u, u), 1.0)
    c = np.array([-1.0, 2.0, 0.5, -1.5])
    assert math.isclose(pearson_similarity(c, -c), -1.0)
    assert math.isclose(pearson_similarity([1, 2, 3], [2, 4, 6]), 1.0)


def test_pearson_degenerate_cases():
    assert pearson_similarity([1, NAN, 3], [NAN, 2, 3]) == 0.0  # one co-rated item
    assert pearson_similarity([3, 3, 3], [1, 2, 5]) == 0.0  # no variance
    assert pearson_similarity([NAN, NAN], [NAN, NAN]) == 0.0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_similarity_matrix_matches_pairwise(seed):
    rng = np.random.default_rng(seed)
    R = rng.integers(1, 6, (8, 12)).astype(float)
    R[rng.random(R.shape) < 0.5] = NAN
    S = pearson_matrix(R)
    for i in range(8):
        for j in range(8):
            want = 0.0 if i == j else pearson_similarity(R[i], R[j])
            assert abs(S[i, j] - want) < 1e-10


def test_top_positive():
    w = np.array([0.3, -0.9, 0.8, 0.0, 0.5, 0.1])
    np.testing.assert_array_equal(top_positive(w, 2), [0, 0, 0.8, 0, 0.5, 0])
    np.testing.assert_array_equal(top_positive(w, 10), [0.3, 0, 0.8, 0, 0.5, 0.1])


# -- MovieLens -------------------------------------------------------------------------


def test_rating_table_validation(tmp_path):
    bad = tmp_path / "u.data"
    bad.write_text("1\t1\t6\t0\n")
    with pytest.raises(DatasetError):
        load_ratings(bad)
    bad.write_text("1\t1\t3\t0\n1\t1\t4\t1\n")
    with pytest.raises(DatasetError):
        load_ratings(bad)
    with pytest.raises(FileNotFoundError):
        MovieLensData.from_dir(tmp_path / "nothing")


def test_item_lookup(movielens):
    assert resolve_item(movielens.ratings, movielens.titles, "Star Wars") == 1
    assert resolve_item(movielens.ratings, movielens.titles, 7) == 7
    with pytest.raises(DatasetError):
        resolve_item(movielens.ratings, movielens.titles, "Casablanca")


def test_movielens_env_structure(movielens):
    state, spec, truths = build_movielens_env(movielens, n_init=10, edges=5, seed=3)
    check_adjacency(state.adj)
    assert np.all(state.adj >= 0)
    assert state.n == 10 and len(truths) == 22 == len(spec.replay_vectors)
    for t, a in enumerate(spec.replay_vectors):
        assert a.size == 10 + t
        assert np.all(a >= 0) and np.count_nonzero(a) <= 5
    target = movielens.ratings[movielens.ratings["item"] == 1]["rating"]
    all_values = np.concatenate([state.signal, truths])
    np.testing.assert_allclose(np.sort(all_values), np.sort(target.to_numpy() - target.mean()), atol=1e-12)


def test_initial_graph_keeps_top_positive_per_user(movielens):
    pool = prepare_movielens(movielens)
    state, _, _ = build_movielens_env(pool, n_init=12, edges=3, seed=1)
    init = np.random.default_rng(1).permutation(len(pool.users))[:12]
    S = pool.similarity[np.ix_(init, init)]
    for i in range(12):
        top = np.flatnonzero(top_positive(S[i], 3))
        np.testing.assert_array_equal(state.adj[i, top], S[i, top])
    # union symmetrization: an edge exists only if one endpoint ranks the other
    kept = np.array([top_positive(row, 3) > 0 for row in S])
    np.testing.assert_array_equal(state.adj > 0, kept | kept.T)


def test_movielens_env_is_deterministic_and_shuffled(movielens):
    a = build_movielens_env(movielens, n_init=10, edges=5, seed=4)
    b = build_movielens_env(movielens, n_init=10, edges=5, seed=4)
    c = build_movielens_env(movielens, n_init=10, edges=5, seed=5)
    np.testing.assert_array_equal(a[0].adj, b[0].adj)
    np.testing.assert_array_equal(a[2], b[2])
    assert all(np.array_equal(x, y) for x, y in zip(a[1].replay_vectors, b[1].replay_vectors))
    assert not np.array_equal(a[0].signal, c[0].signal) or not np.array_equal(a[2], c[2])


def test_target_ratings_do_not_shape_the_graph(movielens):
    altered = movielens.ratings.copy()
    on_target = altered["item"] == 1
    altered.loc[on_target, "rating"] = 6 - altered.loc[on_target, "rating"]
    a = build_movielens_env(movielens, n_init=10, edges=5, seed=2)
    b = build_movielens_env(MovieLensData(altered, movielens.titles), n_init=10, edges=5, seed=2)
    np.testing.assert_array_equal(a[0].adj, b[0].adj)
    assert all(np.array_equal(x, y) for x, y in zip(a[1].replay_vectors, b[1].replay_vectors))


def test_user_without_overlap_attaches_to_nobody():
    rows = [(u, i, 1 + (u * i) % 5, 0) for u in range(1, 7) for i in range(2, 6)]
    rows += [(u, 1, 1 + u % 5, 0) for u in range(1, 8)]
    rows += [(7, 9, 4, 0)]  # user 7 shares no rated item (besides the target) with anyone
    data = MovieLensData(pd.DataFrame(rows, columns=["user", "item", "rating", "timestamp"]))
    pool = prepare_movielens(data, item=1)
    k = int(np.flatnonzero(pool.users == 7)[0])
    assert not np.any(pool.similarity[k])
    for seed in range(10):
        state, spec, _ = build_movielens_env(pool, n_init=3, edges=2, seed=seed)
        order = np.random.default_rng(seed).permutation(len(pool.users))
        for t, u in enumerate(order[3:]):
            if u == k:
                assert not np.any(spec.replay_vectors[t])


def test_too_few_users_rejected(movielens):
    with pytest.raises(DatasetError):
        build_movielens_env(movielens, n_init=32, edges=5)


def test_replay_env_runs_and_dumps(movielens):
    env = ReplayEnv(partial(build_movielens_env, prepare_movielens(movielens), 10, 5))
    ep = generate_episode(env, 15, 0)
    assert ep.horizon == 15 and np.all(np.isfinite(ep.features))
    vectors, truths, _ = load_trajectory(dump_trajectory(ep.transitions))
    np.testing.assert_array_equal(truths, ep.truths)
    for a, tr in zip(vectors, ep.transitions):
        np.testing.assert_array_equal(a, tr.attachment)


# -- COVID -----------------------------------------------------------------------------


def test_haversine_against_law_of_cosines():
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.uniform(-80, 80, 20), rng.uniform(-180, 180, 20)])
    D = haversine_matrix(pts)
    lat, lon = np.radians(pts).T
    cosc = np.sin(lat)[:, None] * np.sin(lat) + np.cos(lat)[:, None] * np.cos(lat) * np.cos(lon[:, None] - lon)
    oracle = 6371.0088 * np.arccos(np.clip(cosc, -1, 1))
    off = ~np.eye(20, dtype=bool)
    np.testing.assert_allclose(D[off], oracle[off], rtol=1e-8)
    assert math.isclose(haversine_matrix([[0, 0], [0, 90]])[0, 1], math.pi / 2 * 6371.0088)


def test_covid_env_structure(cities):
    state, spec, truths = build_covid_env(cities, n_init=30, k=5, day=100, seed=0)
    check_adjacency(state.adj)
    assert set(np.unique(state.adj)) <= {0.0, 1.0}
    assert np.all(np.diag(state.adj) == 0)
    assert np.count_nonzero(state.adj, axis=1).min() >= 5
    for t, a in enumerate(spec.replay_vectors):
        assert a.size == 30 + t and np.count_nonzero(a) == 5 and set(np.unique(a)) <= {0.0, 1.0}
    assert len(truths) == 15
    assert abs(state.signal.mean()) < 1e-12 and math.isclose(state.signal.std(), 1.0)


def test_covid_arrivals_attach_to_nearest_existing(cities):
    state, spec, _ = build_covid_env(cities, n_init=30, k=5, seed=1)
    order = np.random.default_rng(1).permutation(len(cities.ids))
    D = haversine_matrix(cities.coords)
    existing = list(order[:30])
    for c, a in zip(order[30:], spec.replay_vectors):
        picked = set(np.array(existing)[a > 0])
        others = set(existing) - picked
        assert max(D[c, list(picked)]) <= min(D[c, list(others)])
        existing.append(c)


def test_covid_shuffle_and_determinism(cities):
    a = build_covid_env(cities, seed=0)
    b = build_covid_env(cities, seed=0)
    c = build_covid_env(cities, seed=1)
    np.testing.assert_array_equal(a[2], b[2])
    assert not np.array_equal(a[2], c[2])


def test_covid_bad_day(cities):
    with pytest.raises(DatasetError):
        build_covid_env(cities, day=500)


def test_missing_coordinates_skipped_with_warning(tmp_path):
    path = write_cities(tmp_path / "c.csv", n=40, missing=3)
    with pytest.warns(UserWarning, match="missing coordinates"):
        table = load_cities(path)
    assert isinstance(table, CityTable) and len(table.ids) == 37


def test_negative_cases_rejected(tmp_path):
    path = tmp_path / "neg.csv"
    path.write_text("city,lat,lon,d0\na,1,2,-3\nb,2,3,4\n")
    with pytest.raises(DatasetError):
        load_cities(path)
