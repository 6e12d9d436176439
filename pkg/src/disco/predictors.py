"""Performance predictors: kNN, ridge-stabilized least squares, bagged
regression trees, and the anchor-weighted sum.

A trained PredictorModel optionally bundles the PCA projection used on its
training features; ``predict`` then accepts raw signatures and projects
them itself.  All stored arrays are float64 so that a serialized model
reproduces in-memory predictions bit for bit.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dten
from .errors import (
    DimensionMismatch,
    EmptyModel,
    InvalidConfig,
    InvariantViolation,
    MissingWeights,
    SchemaError,
    TooFewModels,
)
from .selection import AnchorSubset
from .signatures import PcaProjection, pca_arrays, pca_from_arrays, pca_transform

KINDS = ("knn", "linear", "random_forest", "weighted_sum")

RIDGE_EPSILON = 1e-8


@dataclass
class ForestConfig:
    n_trees: int = 200
    min_leaf: int = 2
    # Fraction of features examined per split.  1.0 (all features, i.e.
    # bagged CART) is the default: with few source models and many projected
    # dimensions, per-split feature subsampling forces splits onto
    # components that do not generalize across a chronological model split.
    feature_frac: float = 1.0
    bootstrap: bool = True


@dataclass
class Tree:
    """Flat node table in preorder; feature == -1 marks a leaf."""

    feature: np.ndarray     # (nodes,) int32
    threshold: np.ndarray   # (nodes,) float64
    left: np.ndarray        # (nodes,) int32, -1 for leaves
    right: np.ndarray       # (nodes,) int32
    value: np.ndarray       # (nodes,) float64 leaf means (0 elsewhere)


@dataclass
class PredictorModel:
    kind: str
    projection: PcaProjection | None = None
    # knn payload
    knn_vectors: np.ndarray | None = None
    knn_performances: np.ndarray | None = None
    k_neighbors: int = 5
    # linear payload
    linear_weights: np.ndarray | None = None
    linear_intercept: float = 0.0
    # forest payload
    trees: list[Tree] = field(default_factory=list)
    forest_config: ForestConfig | None = None
    # weighted-sum payload
    anchor_weights: np.ndarray | None = None


def _fit_linear(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float]:
    a = np.column_stack([x, np.ones(x.shape[0])])
    gram = a.T @ a
    gram[np.diag_indices_from(gram)] += RIDGE_EPSILON
    w = np.linalg.solve(gram, a.T @ y)
    return w[:-1], float(w[-1])


def _best_split(x: np.ndarray, y: np.ndarray, feats: np.ndarray,
                min_leaf: int) -> tuple[int, float] | None:
    """Lowest-SSE threshold over the candidate features; None if no valid cut."""
    n = y.size
    xs = x[:, feats]
    order = np.argsort(xs, axis=0, kind="stable")
    xs = np.take_along_axis(xs, order, axis=0)
    ys = y[order]
    cy = np.cumsum(ys, axis=0)
    cy2 = np.cumsum(ys * ys, axis=0)
    tot_y, tot_y2 = cy[-1], cy2[-1]

    counts = np.arange(1, n, dtype=np.float64)
    left = cy2[:-1] - cy[:-1] ** 2 / counts[:, None]
    right = (tot_y2 - cy2[:-1]) - (tot_y - cy[:-1]) ** 2 / (n - counts)[:, None]
    cost = left + right
    pos_ok = (counts >= min_leaf) & (counts <= n - min_leaf)
    cut_ok = xs[1:] > xs[:-1]
    cost[~(pos_ok[:, None] & cut_ok)] = np.inf

    best: tuple[float, int, float] | None = None
    for j in range(feats.size):
        i = int(cost[:, j].argmin())
        c = float(cost[i, j])
        if np.isfinite(c) and (best is None or c < best[0]):
            best = (c, int(feats[j]), float(0.5 * (xs[i, j] + xs[i + 1, j])))
    if best is None:
        return None
    return best[1], best[2]


def _grow_tree(x: np.ndarray, y: np.ndarray, cfg: ForestConfig,
               rng: np.random.Generator) -> Tree:
    d = x.shape[1]
    mtry = d if cfg.feature_frac >= 1.0 else max(1, int(d * cfg.feature_frac))
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []

    def build(rows: np.ndarray) -> int:
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        ys = y[rows]
        if rows.size < 2 * cfg.min_leaf or np.all(ys == ys[0]):
            value[node] = float(ys.mean())
            return node
        feats = (np.arange(d) if mtry == d
                 else np.sort(rng.choice(d, size=mtry, replace=False)))
        split = _best_split(x[rows], ys, feats, cfg.min_leaf)
        if split is None:
            value[node] = float(ys.mean())
            return node
        f, t = split
        mask = x[rows, f] <= t
        feature[node] = f
        threshold[node] = t
        left[node] = build(rows[mask])
        right[node] = build(rows[~mask])
        return node

    build(np.arange(x.shape[0]))
    return Tree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        value=np.asarray(value),
    )


def _fit_one_tree(x: np.ndarray, y: np.ndarray, cfg: ForestConfig,
                  seed: int, index: int) -> Tree:
    rng = np.random.default_rng(np.random.SeedSequence((seed, index)))
    if cfg.bootstrap:
        rows = rng.integers(0, x.shape[0], size=x.shape[0])
        return _grow_tree(x[rows], y[rows], cfg, rng)
    return _grow_tree(x, y, cfg, rng)


def tree_predict(tree: Tree, z: np.ndarray) -> float:
    node = 0
    while tree.feature[node] >= 0:
        node = tree.left[node] if z[tree.feature[node]] <= tree.threshold[node] \
            else tree.right[node]
    return float(tree.value[node])


def train(kind: str, features: np.ndarray, performances: Sequence[float],
          config: dict | ForestConfig | None = None, seed: int = 0,
          projection: PcaProjection | None = None,
          threads: int = 1) -> PredictorModel:
    """Fit a predictor on (already projected) source features.

    ``projection``, when given, is bundled so that ``predict`` can consume
    raw signatures.  Forest trees use per-tree RNG streams derived from
    (seed, tree index), so the result is independent of thread count.
    """
    if kind not in ("knn", "linear", "random_forest"):
        raise InvalidConfig(f"train does not handle kind {kind!r}")
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(performances, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionMismatch("features must form a 2-D matrix")
    if x.shape[0] != y.size:
        raise DimensionMismatch(f"{x.shape[0]} feature rows vs {y.size} performances")
    if x.shape[0] < 2:
        raise TooFewModels(f"training needs at least 2 models, got {x.shape[0]}")
    if (y < 0).any() or (y > 1).any():
        raise InvariantViolation("performances must lie in [0, 1]")

    model = PredictorModel(kind=kind, projection=projection)
    if kind == "knn":
        cfg = dict(config or {})
        model.k_neighbors = int(cfg.get("k_neighbors", 5))
        if not 1 <= model.k_neighbors <= x.shape[0]:
            raise InvalidConfig(f"k_neighbors={model.k_neighbors} not in [1, {x.shape[0]}]")
        model.knn_vectors = x.copy()
        model.knn_performances = y.copy()
    elif kind == "linear":
        model.linear_weights, model.linear_intercept = _fit_linear(x, y)
    else:
        cfg = config if isinstance(config, ForestConfig) else ForestConfig(**(config or {}))
        if cfg.n_trees < 1 or cfg.min_leaf < 1:
            raise InvalidConfig("forest needs n_trees >= 1 and min_leaf >= 1")
        model.forest_config = cfg
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                model.trees = list(pool.map(
                    lambda t: _fit_one_tree(x, y, cfg, seed, t), range(cfg.n_trees)))
        else:
            model.trees = [_fit_one_tree(x, y, cfg, seed, t) for t in range(cfg.n_trees)]
    return model


def _features_for(model: PredictorModel, signature: np.ndarray) -> np.ndarray:
    z = np.asarray(signature, dtype=np.float64).ravel()
    if model.projection is not None:
        return pca_transform(model.projection, z)
    return z


def predict(model: PredictorModel, signature: np.ndarray) -> float:
    """Predicted full-benchmark performance for one signature, in [0, 1]."""
    if model.kind == "knn":
        if model.knn_vectors is None:
            raise EmptyModel("knn payload missing")
        z = _features_for(model, signature)
        if z.size != model.knn_vectors.shape[1]:
            raise DimensionMismatch(
                f"feature length {z.size} != stored {model.knn_vectors.shape[1]}")
        d2 = ((model.knn_vectors - z) ** 2).sum(axis=1)
        order = np.lexsort((np.arange(d2.size), d2))  # distance, then stored index
        value = float(model.knn_performances[order[:model.k_neighbors]].mean())
    elif model.kind == "linear":
        if model.linear_weights is None:
            raise EmptyModel("linear payload missing")
        z = _features_for(model, signature)
        if z.size != model.linear_weights.size:
            raise DimensionMismatch(
                f"feature length {z.size} != weights {model.linear_weights.size}")
        value = float(z @ model.linear_weights + model.linear_intercept)
    elif model.kind == "random_forest":
        if not model.trees:
            raise EmptyModel("forest payload missing")
        z = _features_for(model, signature)
        value = float(np.mean([tree_predict(t, z) for t in model.trees]))
    else:
        raise InvalidConfig(f"predict does not handle kind {model.kind!r}")
    return float(np.clip(value, 0.0, 1.0))


def predict_weighted_sum(subset: AnchorSubset, correctness_on_subset: Sequence[int]) -> float:
    """Anchor-weighted accuracy: sum of weights times correctness bits."""
    if subset.weights is None:
        raise MissingWeights(f"subset from {subset.method!r} carries no weights")
    w = np.asarray(subset.weights, dtype=np.float64)
    s = np.asarray(correctness_on_subset, dtype=np.float64)
    if w.size != s.size:
        raise DimensionMismatch(f"{w.size} weights vs {s.size} correctness bits")
    if abs(float(w.sum()) - 1.0) > 1e-9:
        raise MissingWeights("weights must sum to 1")
    return float(np.clip(float(w @ s), 0.0, 1.0))


# --- serialization -----------------------------------------------------------

def _forest_table(trees: list[Tree]) -> tuple[np.ndarray, list[int]]:
    rows = []
    offsets = [0]
    for t in trees:
        n = t.feature.size
        table = np.column_stack([
            np.arange(n, dtype=np.float64), t.feature.astype(np.float64),
            t.threshold, t.left.astype(np.float64), t.right.astype(np.float64),
            t.value,
        ])
        rows.append(table)
        offsets.append(offsets[-1] + n)
    return np.vstack(rows), offsets


def _forest_from_table(table: np.ndarray, offsets: list[int]) -> list[Tree]:
    trees = []
    for a, b in zip(offsets[:-1], offsets[1:]):
        block = table[a:b]
        trees.append(Tree(
            feature=block[:, 1].astype(np.int32),
            threshold=block[:, 2].copy(),
            left=block[:, 3].astype(np.int32),
            right=block[:, 4].astype(np.int32),
            value=block[:, 5].copy(),
        ))
    return trees


def save_predictor(model: PredictorModel, path: str | Path,
                   provenance: dict | None = None) -> None:
    header: dict = {"kind": model.kind, "config": {}}
    if provenance is not None:
        header["provenance"] = provenance
    arrays: dict[str, np.ndarray] = {}
    if model.projection is not None:
        arrays.update(pca_arrays(model.projection))
    if model.kind == "knn":
        header["config"]["k_neighbors"] = model.k_neighbors
        arrays["knn_vectors"] = model.knn_vectors
        arrays["knn_performances"] = model.knn_performances.reshape(1, -1)
    elif model.kind == "linear":
        arrays["linear_weights"] = model.linear_weights.reshape(1, -1)
        arrays["linear_intercept"] = np.asarray([[model.linear_intercept]])
    elif model.kind == "random_forest":
        cfg = model.forest_config or ForestConfig()
        header["config"] = {
            "n_trees": cfg.n_trees, "min_leaf": cfg.min_leaf,
            "feature_frac": cfg.feature_frac, "bootstrap": cfg.bootstrap,
        }
        table, offsets = _forest_table(model.trees)
        header["tree_offsets"] = offsets
        arrays["forest_nodes"] = table
    elif model.kind == "weighted_sum":
        arrays["ws_weights"] = model.anchor_weights.reshape(1, -1)
    else:
        raise InvalidConfig(f"cannot serialize kind {model.kind!r}")
    dten.write_bundle(path, header, arrays)


def load_predictor(path: str | Path) -> PredictorModel:
    header, arrays = dten.read_bundle(path)
    kind = header.get("kind")
    if kind not in KINDS:
        raise SchemaError(f"{path}: unknown predictor kind {kind!r}")
    model = PredictorModel(kind=kind)
    if "pca_components" in arrays:
        model.projection = pca_from_arrays(arrays)
    if kind == "knn":
        model.k_neighbors = int(header["config"]["k_neighbors"])
        model.knn_vectors = arrays["knn_vectors"]
        model.knn_performances = arrays["knn_performances"].ravel()
    elif kind == "linear":
        model.linear_weights = arrays["linear_weights"].ravel()
        model.linear_intercept = float(arrays["linear_intercept"][0, 0])
    elif kind == "random_forest":
        model.forest_config = ForestConfig(**header["config"])
        model.trees = _forest_from_table(arrays["forest_nodes"], header["tree_offsets"])
    else:
        model.anchor_weights = arrays["ws_weights"].ravel()
    return model
