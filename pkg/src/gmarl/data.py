"""Real-data environments: MovieLens-100K cold-start users and COVID city counts.

Both builders return ``(initial_state, replay_attachment_spec, truths)`` so the
episode replays through the same environment code as the synthetic runs.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .graph_env import AttachmentKind, AttachmentSpec, ExpandingGraphState, as_rng


EARTH_RADIUS_KM = 6371.0088


class DatasetError(ValueError):
    pass


# -- MovieLens ---------------------------------------------------------------------


def load_ratings(path) -> pd.DataFrame:
    """``u.data``: tab-separated user, item, rating, timestamp."""
    df = pd.read_csv(path, sep="\t", header=None, names=["user", "item", "rating", "timestamp"])
    if not df["rating"].between(1, 5).all():
        raise DatasetError(f"{path}: ratings outside 1..5")
    if df.duplicated(["user", "item"]).any():
        raise DatasetError(f"{path}: duplicate (user, item) pairs")
    return df


def load_item_titles(path) -> dict:
    """``u.item``: pipe-separated, id first and title second (latin-1)."""
    items = pd.read_csv(path, sep="|", header=None, encoding="latin-1", usecols=[0, 1], names=["item", "title"])
    return dict(zip(items["item"], items["title"]))


def resolve_item(ratings: pd.DataFrame, titles: dict | None, item) -> int:
    """Item id from an id or a title fragment; ties go to the most-rated match."""
    if isinstance(item, (int, np.integer)):
        return int(item)
    if titles is None:
        raise DatasetError("item given by title but no u.item titles were loaded")
    key = str(item).lower()
    matches = [i for i, t in titles.items() if key in str(t).lower()]
    if not matches:
        raise DatasetError(f"no item title contains {item!r}")
    counts = ratings["item"].value_counts()
    return int(max(matches, key=lambda i: counts.get(i, 0)))


def pearson_similarity(u, v) -> float:
    """Pearson correlation over items rated by both (NaN marks unrated).

    Returns 0 when fewer than 2 items overlap or either side has no variance.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    both = ~np.isnan(u) & ~np.isnan(v)
    if both.sum() < 2:
        return 0.0
    du = u[both] - u[both].mean()
    dv = v[both] - v[both].mean()
    den = np.sqrt((du @ du) * (dv @ dv))
    if den <= 1e-12:
        return 0.0
    return float(du @ dv / den)


def pearson_matrix(R) -> np.ndarray:
    """All-pairs co-rated Pearson correlations of the rows of R (NaN = unrated).

    Vectorized version of :func:`pearson_similarity`; diagonal set to 0.
    """
    R = np.asarray(R, dtype=float)
    mask = (~np.isnan(R)).astype(float)
    X = np.nan_to_num(R)
    n = mask @ mask.T
    su = X @ mask.T  # sum of row-u ratings on items co-rated with v
    suu = (X * X) @ mask.T
    suv = X @ X.T
    with np.errstate(divide="ignore", invalid="ignore"):
        cov = suv - su * su.T / n
        var_u = suu - su**2 / n
        var_v = var_u.T
        den = np.sqrt(var_u * var_v)
        corr = np.where((n >= 2) & (var_u > 1e-12) & (var_v > 1e-12), cov / den, 0.0)
    corr = np.clip(np.nan_to_num(corr), -1.0, 1.0)
    np.fill_diagonal(corr, 0.0)
    return corr


def top_positive(weights: np.ndarray, k: int) -> np.ndarray:
    """Keep the k largest strictly positive entries of a vector, zero the rest."""
    w = np.where(weights > 0, weights, 0.0)
    if np.count_nonzero(w) > k:
        keep = np.argsort(-w, kind="stable")[:k]
        out = np.zeros_like(w)
        out[keep] = w[keep]
        w = out
    return w


def sparsify_union(S: np.ndarray, k: int) -> np.ndarray:
    """Each node keeps its top-k positive similarities; symmetrize by union."""
    keep = np.array([top_positive(row, k) > 0 for row in S])
    keep = keep | keep.T
    A = np.where(keep, np.maximum(S, 0.0), 0.0)
    np.fill_diagonal(A, 0.0)
    return A


@dataclass
class MovieLensData:
    ratings: pd.DataFrame
    titles: dict | None = None

    @classmethod
    def from_dir(cls, root) -> "MovieLensData":
        from pathlib import Path

        root = Path(root)
        data, item = root / "u.data", root / "u.item"
        if not data.exists():
            raise FileNotFoundError(f"MovieLens ratings not found at {data} (expected the ml-100k u.data file)")
        return cls(load_ratings(data), load_item_titles(item) if item.exists() else None)


@dataclass
class MovieLensPool:
    """Users who rated one item, their pairwise similarity and centered ratings."""

    users: np.ndarray
    similarity: np.ndarray
    signal: np.ndarray
    item_id: int


def prepare_movielens(data: MovieLensData, item="Star Wars") -> MovieLensPool:
    """Similarities use every other item, so the target rating never leaks into
    the graph. Signal = rating minus the item's mean."""
    ratings = data.ratings
    item_id = resolve_item(ratings, data.titles, item)
    target = ratings[ratings["item"] == item_id]
    if target.empty:
        raise DatasetError(f"item {item!r} has no ratings")
    users = np.sort(target["user"].unique())
    others = ratings[(ratings["item"] != item_id) & ratings["user"].isin(users)]
    R = others.pivot(index="user", columns="item", values="rating").reindex(users).to_numpy(dtype=float)
    y = target.set_index("user")["rating"].reindex(users).to_numpy(dtype=float)
    return MovieLensPool(users, pearson_matrix(R), y - target["rating"].mean(), item_id)


def build_movielens_env(data, n_init=200, edges=20, item="Star Wars", seed=0, horizon=None):
    """Cold-start user graph for one item.

    ``data`` is a :class:`MovieLensData` or an already prepared pool. Users who
    rated the item are split into ``n_init`` initial users and a random
    arrival order; each arrival links to its ``edges`` most similar existing
    users (positive correlations only).
    """
    pool = data if isinstance(data, MovieLensPool) else prepare_movielens(data, item)
    S, y = pool.similarity, pool.signal
    if len(pool.users) <= n_init:
        raise DatasetError(f"only {len(pool.users)} users rated item {pool.item_id}; need more than {n_init}")
    rng = as_rng(seed)
    order = rng.permutation(len(pool.users))
    init, arrivals = order[:n_init], order[n_init:]
    if horizon is not None:
        arrivals = arrivals[:horizon]
    A0 = sparsify_union(S[np.ix_(init, init)], edges)
    vectors = []
    existing = list(init)
    for u in arrivals:
        vectors.append(top_positive(S[u, existing], edges))
        existing.append(u)
    spec = AttachmentSpec(AttachmentKind.REPLAY, replay_vectors=tuple(vectors))
    return ExpandingGraphState(A0, y[init]), spec, y[arrivals]


# -- COVID ---------------------------------------------------------------------------


@dataclass
class CityTable:
    ids: np.ndarray
    coords: np.ndarray  # (n, 2) degrees: lat, lon
    cases: np.ndarray  # (n, days)


def load_cities(path) -> CityTable:
    """CSV with header: city id, lat, lon, then one column per day."""
    df = pd.read_csv(path)
    if df.shape[1] < 4:
        raise DatasetError(f"{path}: expected id, lat, lon and at least one day column")
    coords = df.iloc[:, 1:3].apply(pd.to_numeric, errors="coerce")
    bad = coords.isna().any(axis=1).to_numpy()
    if bad.any():
        warnings.warn(f"{path}: skipping {int(bad.sum())} rows with missing coordinates", stacklevel=2)
    df = df.loc[~bad]
    cases = df.iloc[:, 3:].to_numpy(dtype=float)
    if (cases < 0).any():
        raise DatasetError(f"{path}: negative case counts")
    return CityTable(df.iloc[:, 0].to_numpy(), df.iloc[:, 1:3].to_numpy(dtype=float), cases)


def haversine_matrix(coords_deg) -> np.ndarray:
    """Great-circle distances (km) between all pairs of (lat, lon) points."""
    lat, lon = np.radians(np.asarray(coords_deg, dtype=float)).T
    dlat = lat[:, None] - lat[None, :]
    dlon = lon[:, None] - lon[None, :]
    h = np.sin(dlat / 2) ** 2 + np.cos(lat)[:, None] * np.cos(lat)[None, :] * np.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def nearest(dist_row: np.ndarray, candidates, k: int) -> np.ndarray:
    """Indices (into ``candidates``) of the k closest candidates; ties by position."""
    d = dist_row[np.asarray(candidates)]
    return np.argsort(d, kind="stable")[:k]


def build_covid_env(cities: CityTable, n_init=30, k=5, day=100, seed=0, horizon=None):
    """City graph: symmetrized k-NN (binary) over a random initial subset; arrivals attach to k nearest."""
    n = len(cities.ids)
    if not 0 <= day < cities.cases.shape[1]:
        raise DatasetError(f"day {day} outside 0..{cities.cases.shape[1] - 1}")
    if n <= n_init:
        raise DatasetError(f"{n} cities available; need more than {n_init}")
    D = haversine_matrix(cities.coords)
    np.fill_diagonal(D, np.inf)
    rng = as_rng(seed)
    order = rng.permutation(n)
    init, arrivals = order[:n_init], order[n_init:]
    if horizon is not None:
        arrivals = arrivals[:horizon]
    A0 = np.zeros((n_init, n_init))
    for i, c in enumerate(init):
        A0[i, nearest(D[c], init, k)] = 1.0
    A0 = np.maximum(A0, A0.T)
    np.fill_diagonal(A0, 0.0)
    raw = cities.cases[:, day]
    mu, sd = raw[init].mean(), raw[init].std()
    z = (raw - mu) / (sd if sd > 0 else 1.0)
    vectors = []
    existing = list(init)
    for c in arrivals:
        a = np.zeros(len(existing))
        a[nearest(D[c], existing, k)] = 1.0
        vectors.append(a)
        existing.append(c)
    spec = AttachmentSpec(AttachmentKind.REPLAY, replay_vectors=tuple(vectors))
    return ExpandingGraphState(A0, z[init]), spec, z[arrivals]
