"""Histogram gradient-boosted regression trees (squared loss).

Features are binned once per fit on quantile thresholds of the training
data; each tree is grown level-wise to a fixed depth using per-node
gradient histograms built with ``np.bincount``.  Trees are stored as
complete binary heaps so prediction is a handful of vectorised gathers.

Ties in split gain resolve to the lowest feature index, then the lowest
threshold (``np.argmax`` returns the first maximum of the flattened
``(feature, bin)`` table).
"""

from __future__ import annotations

import numpy as np


def quantile_thresholds(col: np.ndarray, max_bins: int) -> np.ndarray:
    """Split candidates for one feature; a row goes left when ``x <= t``."""
    u = np.unique(col)
    if u.size <= max_bins:
        return u[:-1]
    qs = np.quantile(col, np.linspace(0.0, 1.0, max_bins + 1)[1:-1], method="lower")
    return np.unique(qs)


class BoostedTrees:
    """Least-squares gradient boosting with depth-limited histogram trees.

    Parameters
    ----------
    depth : int
        Depth of every tree (``2**depth`` leaves).
    rounds : int
        Number of boosting rounds.
    learning_rate : float
        Shrinkage applied to every tree.
    min_leaf : int
        Minimum number of training rows on each side of a split.
    max_bins : int
        Maximum number of histogram bins per feature.
    """

    def __init__(self, depth=3, rounds=200, learning_rate=0.1, min_leaf=5, max_bins=128):
        self.depth = int(depth)
        self.rounds = int(rounds)
        self.learning_rate = float(learning_rate)
        self.min_leaf = int(min_leaf)
        self.max_bins = int(max_bins)

    def _bin(self, X):
        out = np.empty(X.shape, dtype=np.intp)
        for j, t in enumerate(self.thresholds_):
            out[:, j] = np.searchsorted(t, X[:, j], side="left")
        return out

    def fit(self, X, y, groups=None):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        n, F = X.shape
        B = self.max_bins
        L = 2 ** self.depth
        self.thresholds_ = [quantile_thresholds(X[:, j], B) for j in range(F)]
        bins = self._bin(X)
        flat = (bins + np.arange(F) * B).ravel()
        rows = np.arange(n)

        self.init_ = float(np.mean(y))
        pred = np.full(n, self.init_)
        feats = np.zeros((self.rounds, L - 1), dtype=np.intp)
        thrs = np.zeros((self.rounds, L - 1), dtype=np.intp)
        values = np.zeros((self.rounds, L))
        for r in range(self.rounds):
            g = y - pred
            gw = np.repeat(g, F)
            node = np.zeros(n, dtype=np.intp)
            for d in range(self.depth):
                width = 2 ** d
                idx = np.repeat(node * (F * B), F) + flat
                shape = (width, F, B)
                sums = np.bincount(idx, weights=gw, minlength=width * F * B).reshape(shape)
                cnts = np.bincount(idx, minlength=width * F * B).reshape(shape)
                sl = np.cumsum(sums, axis=2)
                nl = np.cumsum(cnts, axis=2)
                s_tot = sl[:, :1, -1:]
                n_tot = nl[:, :1, -1:]
                sr = s_tot - sl
                nr = n_tot - nl
                ok = (nl >= self.min_leaf) & (nr >= self.min_leaf)
                with np.errstate(divide="ignore", invalid="ignore"):
                    gain = np.where(ok, sl * sl / nl + sr * sr / nr, -np.inf)
                gain = gain.reshape(width, F * B)
                best = np.argmax(gain, axis=1)
                base = (s_tot * s_tot / np.maximum(n_tot, 1)).ravel()
                split = gain[np.arange(width), best] > base + 1e-15 * np.abs(base)
                f = np.where(split, best // B, 0)
                t = np.where(split, best % B, B)
                heap = width - 1 + np.arange(width)
                feats[r, heap] = f
                thrs[r, heap] = t
                node = 2 * node + (bins[rows, f[node]] > t[node])
            leaf_sum = np.bincount(node, weights=g, minlength=L)
            leaf_cnt = np.bincount(node, minlength=L)
            vals = self.learning_rate * leaf_sum / np.maximum(leaf_cnt, 1)
            values[r] = vals
            pred = pred + vals[node]
        self.feats_ = feats
        self.thrs_ = thrs
        self.values_ = values
        self.train_pred_ = pred
        return self

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        bins = self._bin(X)
        n = X.shape[0]
        R = self.rounds
        node = np.zeros((R, n), dtype=np.intp)
        cols = np.arange(n)[None, :]
        tree = np.arange(R)[:, None]
        for d in range(self.depth):
            heap = 2 ** d - 1 + node
            f = self.feats_[tree, heap]
            t = self.thrs_[tree, heap]
            node = 2 * node + (bins[cols, f] > t)
        return self.init_ + self.values_[tree, node].sum(axis=0)
