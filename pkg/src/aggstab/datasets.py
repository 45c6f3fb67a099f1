"""Ratings ingestion, Pearson item-similarity graphs, and desk-scale regression tasks."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import Graph, graph_from_json, graph_to_json
from .model import aggregate


class DataError(Exception):
    """A dataset is structurally valid but semantically unusable for the request."""


@dataclass(frozen=True)
class RatingsTable:
    """(user, item, rating, timestamp) tuples with distinct-id counts."""

    entries: list[tuple[int, int, float, int]]
    user_count: int
    item_count: int


@dataclass(frozen=True)
class SimilarityGraphConfig:
    min_common: int = 2
    top_k: int | None = 40
    negative_policy: str = "zero"  # zero | absolute

    def __post_init__(self):
        if self.min_common < 2:
            raise ValueError("min_common must be >= 2")
        if self.top_k is not None and self.top_k < 1:
            raise ValueError("top_k must be >= 1 when present")
        if self.negative_policy not in ("zero", "absolute"):
            raise ValueError(f"unknown negative_policy {self.negative_policy!r}")


@dataclass
class RegressionTask:
    """Graph-signal inputs with scalar targets and a train/test split."""

    graph: Graph
    samples: list[tuple[np.ndarray, float, list[int] | None]]
    train_idx: list[int] = field(default_factory=list)
    test_idx: list[int] = field(default_factory=list)

    def __post_init__(self):
        for x, _, _ in self.samples:
            if x.shape != (self.graph.n,):
                raise ValueError("sample signal length must match the graph")
        combined = sorted(self.train_idx + self.test_idx)
        if combined != list(range(len(self.samples))):
            raise ValueError("train/test split must partition the samples")


def parse_movielens(path) -> RatingsTable:
    """Read tab-separated "user item rating timestamp" lines into a table."""
    path = Path(path)
    entries: list[tuple[int, int, float, int]] = []
    seen: set[tuple[int, int]] = set()
    users: set[int] = set()
    items: set[int] = set()
    with path.open("r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
            try:
                user, item = int(parts[0]), int(parts[1])
                rating = float(parts[2])
                timestamp = int(parts[3])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed field ({exc})") from None
            if not 1.0 <= rating <= 5.0:
                raise ValueError(f"{path}:{lineno}: rating {rating} outside [1, 5]")
            if (user, item) in seen:
                raise ValueError(f"{path}:{lineno}: duplicate (user, item) pair ({user}, {item})")
            seen.add((user, item))
            users.add(user)
            items.add(item)
            entries.append((user, item, rating, timestamp))
    return RatingsTable(entries=entries, user_count=len(users), item_count=len(items))


def serialize_movielens(table: RatingsTable, path) -> None:
    """Write the wire format back out; parse(serialize(t)) == t."""
    with Path(path).open("w", encoding="ascii") as fh:
        for user, item, rating, timestamp in table.entries:
            fh.write(f"{user}\t{item}\t{rating!r}\t{timestamp}\n")


def _ratings_by_item(table: RatingsTable, wanted: set[int]) -> dict[int, dict[int, float]]:
    by_item: dict[int, dict[int, float]] = {m: {} for m in wanted}
    for user, item, rating, _ in table.entries:
        if item in wanted:
            by_item[item][user] = rating
    return by_item


def pearson_similarity_graph(table: RatingsTable, movies, cfg: SimilarityGraphConfig) -> Graph:
    """Item graph weighted by Pearson correlation over co-raters.

    Pairs with fewer than min_common co-raters (or a constant co-rating
    vector, where the correlation is undefined) get weight zero.  Negative
    correlations follow cfg.negative_policy, and top_k keeps each node's k
    largest weights before re-symmetrizing by the elementwise max.
    """
    movies = list(movies)
    if not movies:
        raise ValueError("movie list must be nonempty")
    seen_items = {item for _, item, _, _ in table.entries}
    missing = [m for m in movies if m not in seen_items]
    if missing:
        raise DataError(f"movies absent from the ratings table: {missing}")
    by_item = _ratings_by_item(table, set(movies))
    n = len(movies)
    w = np.zeros((n, n))
    for i in range(n):
        ri = by_item[movies[i]]
        for j in range(i + 1, n):
            rj = by_item[movies[j]]
            common = sorted(ri.keys() & rj.keys())
            if len(common) < cfg.min_common:
                continue
            xi = np.array([ri[u] for u in common])
            xj = np.array([rj[u] for u in common])
            sx, sy = xi.std(), xj.std()
            if sx == 0.0 or sy == 0.0:
                continue
            corr = float(((xi - xi.mean()) * (xj - xj.mean())).mean() / (sx * sy))
            if corr < 0:
                corr = 0.0 if cfg.negative_policy == "zero" else abs(corr)
            w[i, j] = w[j, i] = corr
    if cfg.top_k is not None and cfg.top_k < n - 1:
        kept = np.zeros_like(w)
        for i in range(n):
            order = np.argsort(w[i])[::-1][: cfg.top_k]
            kept[i, order] = w[i, order]
        w = np.maximum(kept, kept.T)
    np.fill_diagonal(w, 0.0)
    return Graph(n=n, shift=w, labels=[str(m) for m in movies])


def most_rated_items(table: RatingsTable, count: int) -> list[int]:
    """Item ids sorted by rating count (descending), ties by id."""
    tally: dict[int, int] = {}
    for _, item, _, _ in table.entries:
        tally[item] = tally.get(item, 0) + 1
    return sorted(tally, key=lambda m: (-tally[m], m))[:count]


def build_rating_task(table: RatingsTable, graph: Graph, target_item: int,
                      min_ratings_per_user: int = 1, *, seed: int = 0) -> RegressionTask:
    """One sample per user who rated the target: input is the user's ratings
    on the graph's movies with the target entry zeroed, target is the rating.

    Users with fewer than min_ratings_per_user ratings among the graph's
    movies are dropped.  The 90/10 train/test split uses a seeded shuffle.
    """
    if graph.labels is None:
        raise ValueError("graph must carry movie-id labels")
    node_of = {int(lbl): idx for idx, lbl in enumerate(graph.labels)}
    if target_item not in node_of:
        raise ValueError(f"target item {target_item} is not a node of the graph")
    target_node = node_of[target_item]
    per_user: dict[int, dict[int, float]] = {}
    for user, item, rating, _ in table.entries:
        if item in node_of:
            per_user.setdefault(user, {})[node_of[item]] = rating
    samples = []
    for user in sorted(per_user):
        ratings = per_user[user]
        if target_node not in ratings or len(ratings) < min_ratings_per_user:
            continue
        x = np.zeros(graph.n)
        for node, rating in ratings.items():
            x[node] = rating
        target = x[target_node]
        x[target_node] = 0.0
        samples.append((x, float(target), None))
    if not samples:
        raise DataError(f"target item {target_item} was rated by no qualifying user")
    order = np.random.default_rng(seed).permutation(len(samples))
    n_test = max(1, int(round(0.1 * len(samples)))) if len(samples) > 1 else 0
    test_idx = sorted(int(i) for i in order[:n_test])
    train_idx = sorted(int(i) for i in order[n_test:])
    return RegressionTask(graph=graph, samples=samples, train_idx=train_idx, test_idx=test_idx)


def synthetic_source_localization(graph: Graph, diffusion_steps: int, samples: int,
                                  seed: int) -> RegressionTask:
    """Inputs S^t applied to a one-hot source, targets the source index."""
    if diffusion_steps < 0:
        raise ValueError("diffusion_steps must be >= 0")
    if samples < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(samples):
        source = int(rng.integers(graph.n))
        steps = int(rng.integers(diffusion_steps + 1))
        delta = np.zeros(graph.n)
        delta[source] = 1.0
        x = aggregate(graph.shift, delta, steps)[:, steps]
        rows.append((x, float(source), None))
    order = rng.permutation(samples)
    n_test = max(1, int(round(0.1 * samples))) if samples > 1 else 0
    test_idx = sorted(int(i) for i in order[:n_test])
    train_idx = sorted(int(i) for i in order[n_test:])
    return RegressionTask(graph=graph, samples=rows, train_idx=train_idx, test_idx=test_idx)


def task_to_json(task: RegressionTask) -> str:
    doc = {
        "graph": json.loads(graph_to_json(task.graph)),
        "samples": [
            {"input": x.tolist(), "target": t, "mask": mask}
            for x, t, mask in task.samples
        ],
        "split": {"train": task.train_idx, "test": task.test_idx},
    }
    return json.dumps(doc, sort_keys=True)


def task_from_json(text: str) -> RegressionTask:
    doc = json.loads(text)
    graph = graph_from_json(json.dumps(doc["graph"]))
    samples = [
        (np.array(s["input"], dtype=np.float64), float(s["target"]), s.get("mask"))
        for s in doc["samples"]
    ]
    return RegressionTask(graph=graph, samples=samples,
                          train_idx=list(doc["split"]["train"]),
                          test_idx=list(doc["split"]["test"]))
