"""Random forest of Gini decision trees, written for small tabular data.

Trees are grown recursively on bootstrap samples with sqrt(d) candidate
features per split and then flattened into arrays for prediction.  Each
tree draws from its own stream keyed by ``(seed, tree index)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def gini(counts) -> float:
    counts = np.asarray(counts, dtype=float)
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - np.sum(p * p))


def best_split(x, y_idx, n_classes, features, min_leaf):
    """Lowest weighted-Gini threshold over ``features``.

    Returns ``(feature, threshold, score)`` or ``None`` if no split keeps
    ``min_leaf`` samples on both sides.
    """
    n = y_idx.size
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y_idx] = 1.0
    best = None
    for f in features:
        order = np.argsort(x[:, f], kind="stable")
        xs = x[order, f]
        left = np.cumsum(onehot[order], axis=0)[:-1]  # counts with i+1 samples on the left
        total = left[-1] + onehot[order[-1]]
        right = total - left
        nl = np.arange(1, n)
        nr = n - nl
        ok = (xs[1:] > xs[:-1]) & (nl >= min_leaf) & (nr >= min_leaf)
        if not np.any(ok):
            continue
        gl = 1.0 - np.sum((left / nl[:, None]) ** 2, axis=1)
        gr = 1.0 - np.sum((right / nr[:, None]) ** 2, axis=1)
        score = (nl * gl + nr * gr) / n
        score = np.where(ok, score, np.inf)
        i = int(np.argmin(score))
        if best is None or score[i] < best[2] - 1e-15:
            best = (int(f), float(0.5 * (xs[i] + xs[i + 1])), float(score[i]))
    return best


@dataclass
class Tree:
    """Flattened binary tree; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (n_nodes, n_classes) class histogram of training samples

    def apply(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        node = np.zeros(x.shape[0], dtype=int)
        active = self.feature[node] >= 0
        while np.any(active):
            idx = np.flatnonzero(active)
            f = self.feature[node[idx]]
            go_left = x[idx, f] <= self.threshold[node[idx]]
            node[idx] = np.where(go_left, self.left[node[idx]], self.right[node[idx]])
            active = self.feature[node] >= 0
        return node

    def predict_proba(self, x) -> np.ndarray:
        c = self.counts[self.apply(x)]
        return c / c.sum(axis=1, keepdims=True)

    def to_json(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "counts": self.counts.astype(int).tolist(),
        }

    @classmethod
    def from_json(cls, d) -> "Tree":
        return cls(np.array(d["feature"], dtype=int), np.array(d["threshold"], dtype=float),
                   np.array(d["left"], dtype=int), np.array(d["right"], dtype=int),
                   np.array(d["counts"], dtype=float))


def grow_tree(x, y_idx, n_classes, rng, max_features, min_leaf=2, max_depth=None) -> Tree:
    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(np.bincount(y_idx[idx], minlength=n_classes))
        return len(feature) - 1

    stack = [(new_node(np.arange(y_idx.size)), np.arange(y_idx.size), 0)]
    while stack:
        node, idx, depth = stack.pop()
        if np.count_nonzero(counts[node]) <= 1 or idx.size < 2 * min_leaf:
            continue
        if max_depth is not None and depth >= max_depth:
            continue
        feats = rng.choice(x.shape[1], size=max_features, replace=False)
        split = best_split(x[idx], y_idx[idx], n_classes, feats, min_leaf)
        if split is None:
            continue
        f, t, score = split
        if score >= gini(counts[node]) - 1e-15:
            continue
        mask = x[idx, f] <= t
        li, ri = idx[mask], idx[~mask]
        feature[node], threshold[node] = f, t
        lnode = new_node(li)
        rnode = new_node(ri)
        left[node], right[node] = lnode, rnode
        stack.append((rnode, ri, depth + 1))
        stack.append((lnode, li, depth + 1))
    return Tree(np.array(feature, dtype=int), np.array(threshold), np.array(left, dtype=int),
                np.array(right, dtype=int), np.array(counts, dtype=float))


@dataclass
class ForestConfig:
    n_estimators: int = 1000
    min_leaf: int = 2
    max_features: str | int = "sqrt"
    max_depth: int | None = None
    bootstrap: bool = True
    seed: int = 0

    def n_features(self, d: int) -> int:
        if self.max_features == "sqrt":
            return max(1, int(math.floor(math.sqrt(d))))
        return max(1, min(d, int(self.max_features)))


@dataclass
class Forest:
    classes: list
    trees: list = field(default_factory=list)
    config: ForestConfig = field(default_factory=ForestConfig)
    task: str = ""

    def predict_proba(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        total = np.zeros((x.shape[0], len(self.classes)))
        for t in self.trees:
            total += t.predict_proba(x)
        return total / len(self.trees)

    def predict(self, x) -> list:
        p = self.predict_proba(x)
        return [self.classes[i] for i in np.argmax(p, axis=1)]

    def to_json(self) -> dict:
        return {
            "task": self.task,
            "classes": self.classes,
            "config": self.config.__dict__,
            "trees": [t.to_json() for t in self.trees],
        }

    @classmethod
    def from_json(cls, d) -> "Forest":
        return cls(list(d["classes"]), [Tree.from_json(t) for t in d["trees"]], ForestConfig(**d["config"]),
                   d.get("task", ""))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "Forest":
        return cls.from_json(json.loads(Path(path).read_text()))


def train_forest(x, labels, config: ForestConfig = ForestConfig(), task: str = "") -> Forest:
    x = np.asarray(x, dtype=float)
    labels = list(labels)
    classes = sorted(set(labels), key=str)
    lookup = {c: i for i, c in enumerate(classes)}
    y_idx = np.array([lookup[c] for c in labels], dtype=int)
    n = y_idx.size
    m = config.n_features(x.shape[1])
    trees = []
    for t in range(config.n_estimators):
        rng = np.random.default_rng([config.seed, t])
        idx = rng.integers(0, n, size=n) if config.bootstrap else np.arange(n)
        trees.append(grow_tree(x[idx], y_idx[idx], len(classes), rng, m, config.min_leaf, config.max_depth))
    return Forest(classes, trees, config, task)


def subset_accuracy(y_true, y_pred) -> float:
    """Fraction of exact label matches."""
    y_true, y_pred = list(y_true), list(y_pred)
    return float(np.mean([a == b for a, b in zip(y_true, y_pred)]))


def jaccard_score(y_true, y_pred, positive=1) -> float:
    """|true positives| / |predicted or actual positives| for a binary label."""
    t = np.array([v == positive for v in y_true])
    p = np.array([v == positive for v in y_pred])
    union = np.count_nonzero(t | p)
    return 1.0 if union == 0 else float(np.count_nonzero(t & p) / union)


def train_test_split(n: int, test_fraction: float = 0.25, seed: int = 0, strata=None) -> tuple:
    """Index arrays ``(train, test)``; stratified by ``strata`` when given."""
    rng = np.random.default_rng(seed)
    if strata is None:
        perm = rng.permutation(n)
        k = int(round(test_fraction * n))
        return np.sort(perm[k:]), np.sort(perm[:k])
    strata = np.asarray(strata)
    train, test = [], []
    for s in sorted(set(strata.tolist()), key=str):
        idx = np.flatnonzero(strata == s)
        idx = idx[rng.permutation(idx.size)]
        k = int(round(test_fraction * idx.size))
        test.extend(idx[:k])
        train.extend(idx[k:])
    return np.sort(np.array(train, dtype=int)), np.sort(np.array(test, dtype=int))
