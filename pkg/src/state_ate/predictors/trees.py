"""Histogram-based gradient-boosted regression trees with squared loss.

Features are quantile-binned once; every tree is grown level-wise to a
fixed depth and stored as a complete binary tree in heap order.  A node
that finds no admissible split routes all of its rows left
(threshold = number of bins), which keeps prediction a fixed number of
vectorised gathers per tree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TreeParams:
    n_trees: int = 200
    max_depth: int = 4
    learning_rate: float = 0.1
    subsample: float = 0.8
    max_bins: int = 64
    min_samples_leaf: int = 20
    l2: float = 1.0

    def __post_init__(self):
        if not 1 <= self.max_depth <= 8:
            raise ValueError("max_depth must be in [1, 8]")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must be in (0, 1]")
        if self.n_trees < 1 or self.max_bins < 2:
            raise ValueError("need n_trees >= 1 and max_bins >= 2")


class GradientBoostedTrees:
    def __init__(self, params: TreeParams | None = None, seed: int | np.random.SeedSequence = 0):
        self.params = params or TreeParams()
        self.seed = seed

    # binning -----------------------------------------------------------
    def _make_edges(self, X: np.ndarray) -> list[np.ndarray]:
        qs = np.linspace(0.0, 1.0, self.params.max_bins + 1)[1:-1]
        return [np.unique(np.quantile(X[:, j], qs)) for j in range(X.shape[1])]

    def _bin(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(X.shape, dtype=np.int64)
        for j, e in enumerate(self.edges_):
            out[:, j] = np.searchsorted(e, X[:, j], side="right")
        return out

    # fitting -----------------------------------------------------------
    def fit(self, X: np.ndarray, y: np.ndarray) -> GradientBoostedTrees:
        p = self.params
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        n, d = X.shape
        B = p.max_bins
        rng = np.random.default_rng(self.seed)

        self.edges_ = self._make_edges(X)
        bins = self._bin(X)
        flat_base = bins + (np.arange(d) * B)[None, :]
        self.init_ = float(np.mean(y))
        pred = np.full(n, self.init_)

        n_internal = 2 ** p.max_depth - 1
        n_leaves = 2 ** p.max_depth
        self.features_ = np.zeros((p.n_trees, n_internal), dtype=np.int64)
        self.thresholds_ = np.full((p.n_trees, n_internal), B, dtype=np.int64)
        self.leaves_ = np.zeros((p.n_trees, n_leaves))

        m = n if p.subsample >= 1 else max(2 * p.min_samples_leaf, int(round(p.subsample * n)))
        for t in range(p.n_trees):
            rows = np.sort(rng.permutation(n)[:m]) if m < n else np.arange(n)
            resid = y[rows] - pred[rows]
            base = flat_base[rows]
            bins_rows = bins[rows]
            node = np.zeros(m, dtype=np.int64)
            for level in range(p.max_depth):
                n_nodes = 2 ** level
                offset = n_nodes - 1
                idx = (node[:, None] * (d * B) + base).ravel()
                size = n_nodes * d * B
                g = np.bincount(idx, weights=np.repeat(resid, d), minlength=size).reshape(n_nodes, d, B)
                c = np.bincount(idx, minlength=size).reshape(n_nodes, d, B).astype(float)
                gl = np.cumsum(g, axis=2)
                cl = np.cumsum(c, axis=2)
                gt = gl[:, :1, -1:]
                ct = cl[:, :1, -1:]
                gr = gt - gl
                cr = ct - cl
                gain = gl**2 / (cl + p.l2) + gr**2 / (cr + p.l2) - gt**2 / (ct + p.l2)
                ok = (cl >= p.min_samples_leaf) & (cr >= p.min_samples_leaf)
                gain = np.where(ok, gain, -np.inf).reshape(n_nodes, d * B)
                best = np.argmax(gain, axis=1)
                best_gain = gain[np.arange(n_nodes), best]
                split = best_gain > 1e-12 * np.maximum(1.0, gt.ravel() ** 2 / (ct.ravel() + p.l2))
                feat = np.where(split, best // B, 0)
                thr = np.where(split, best % B, B)
                self.features_[t, offset:offset + n_nodes] = feat
                self.thresholds_[t, offset:offset + n_nodes] = thr
                go_right = bins_rows[np.arange(m), feat[node]] > thr[node]
                node = 2 * node + go_right
            sums = np.bincount(node, weights=resid, minlength=n_leaves)
            counts = np.bincount(node, minlength=n_leaves)
            self.leaves_[t] = p.learning_rate * sums / (counts + p.l2)
            pred += self._tree_predict(t, bins)
        return self

    def _tree_predict(self, t: int, bins: np.ndarray) -> np.ndarray:
        n = len(bins)
        rows = np.arange(n)
        node = np.zeros(n, dtype=np.int64)
        feats = self.features_[t]
        thrs = self.thresholds_[t]
        for level in range(self.params.max_depth):
            h = node + (2 ** level - 1)
            node = 2 * node + (bins[rows, feats[h]] > thrs[h])
        return self.leaves_[t][node]

    def predict(self, X: np.ndarray) -> np.ndarray:
        bins = self._bin(np.asarray(X, dtype=float))
        out = np.full(len(bins), self.init_)
        for t in range(self.params.n_trees):
            out += self._tree_predict(t, bins)
        return out
