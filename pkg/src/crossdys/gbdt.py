"""Multiclass gradient-boosted trees with learned default directions for missing values.

Exact greedy split search: for every feature the present values are scanned
in sorted order while the rows missing that feature are sent wholly left and
then wholly right; the better routing becomes the node's default direction.
Missing cells are NaN.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

TIE_TOL = 1e-10


class TrainingError(ValueError):
    pass


@dataclass
class TrainConfig:
    rounds: int = 100
    max_depth: int = 3
    learning_rate: float = 0.3
    reg_lambda: float = 1.0
    gamma: float = 0.0
    min_child_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")

    def replace(self, **kw) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **kw})


@dataclass
class TrainMatrix:
    X: np.ndarray
    y: np.ndarray
    column_names: list[str]
    groups: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=int)
        if self.X.ndim != 2 or self.X.shape[0] == 0:
            raise TrainingError("empty training matrix")
        if self.X.shape[0] != self.y.size:
            raise TrainingError("X and y lengths differ")
        if self.X.shape[1] != len(self.column_names):
            raise TrainingError("column_names does not match X width")
        if np.any(np.isinf(self.X)):
            raise TrainingError("infinite feature values")
        if np.any(np.all(np.isnan(self.X), axis=1)):
            raise TrainingError("training rows need at least one present cell")

    @classmethod
    def from_masked(cls, values, mask, y, column_names, groups=None) -> "TrainMatrix":
        X = np.where(np.asarray(mask, dtype=bool), np.asarray(values, dtype=float), np.nan)
        return cls(X, y, list(column_names), groups)

    @property
    def mask(self) -> np.ndarray:
        return ~np.isnan(self.X)


@dataclass
class Leaf:
    weight: float
    sum_grad: float = 0.0
    sum_hess: float = 0.0
    count: int = 0


@dataclass
class Split:
    feature: int
    threshold: float
    default_left: bool
    gain: float
    left: "Leaf | Split"
    right: "Leaf | Split"
    sum_grad: float = 0.0
    sum_hess: float = 0.0
    count: int = 0


TreeNode = Leaf | Split


@dataclass
class SplitCandidate:
    feature: int
    threshold: float
    default_left: bool
    gain: float


def split_gain(gl, hl, gr, hr, lam, gamma):
    g, h = gl + gr, hl + hr
    return 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - g * g / (h + lam)) - gamma


def _presort(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(X, axis=0, kind="stable").T  # (d, n), NaN last
    xs = np.take_along_axis(X.T, order, axis=1)
    return order, xs


def _best_split(order, xs, g, h, in_node, cfg: TrainConfig) -> SplitCandidate | None:
    """Best (feature, threshold, default) over all features for the rows in ``in_node``.

    Preference among equal gains: lower feature index, default left, smaller threshold.
    """
    d, n = xs.shape
    lam, gamma, mcw = cfg.reg_lambda, cfg.gamma, cfg.min_child_weight
    node_g, node_h = float(np.sum(g[in_node])), float(np.sum(h[in_node]))
    node_n = int(np.count_nonzero(in_node))

    valid = in_node[order] & ~np.isnan(xs)
    gs = np.where(valid, g[order], 0.0)
    hs = np.where(valid, h[order], 0.0)
    cg, ch, cn = np.cumsum(gs, axis=1), np.cumsum(hs, axis=1), np.cumsum(valid, axis=1)
    pres_g, pres_h, pres_n = cg[:, -1:], ch[:, -1:], cn[:, -1:]
    miss_g, miss_h, miss_n = node_g - pres_g, node_h - pres_h, node_n - pres_n

    v = np.where(valid, xs, np.inf)
    nxt = np.minimum.accumulate(v[:, ::-1], axis=1)[:, ::-1]
    nxt = np.concatenate([nxt[:, 1:], np.full((d, 1), np.inf)], axis=1)
    boundary = valid & (nxt > xs)
    with np.errstate(invalid="ignore"):
        thr = xs + (nxt - xs) / 2.0
    thr = np.where(thr > xs, thr, nxt)  # adjacent doubles
    thr = np.where(np.isinf(nxt), np.inf, thr)

    # column 0: no present value goes left (threshold -inf)
    zeros = np.zeros((d, 1))
    lg_p = np.concatenate([zeros, cg], axis=1)
    lh_p = np.concatenate([zeros, ch], axis=1)
    ln_p = np.concatenate([zeros, cn], axis=1)
    cand = np.concatenate([np.ones((d, 1), dtype=bool), boundary], axis=1)
    thr = np.concatenate([np.full((d, 1), -np.inf), thr], axis=1)

    best = None
    gains = []
    for default_left in (True, False):
        gl = lg_p + (miss_g if default_left else 0.0)
        hl = lh_p + (miss_h if default_left else 0.0)
        nl = ln_p + (miss_n if default_left else 0)
        gr, hr, nr = node_g - gl, node_h - hl, node_n - nl
        ok = cand & (nl > 0) & (nr > 0) & (hl >= mcw) & (hr >= mcw)
        gain = np.where(ok, split_gain(gl, hl, gr, hr, lam, gamma), -np.inf)
        gains.append(gain)
    top = max(float(np.max(gains[0])), float(np.max(gains[1])))
    if not np.isfinite(top) or top <= 0:
        return None
    cut = top - TIE_TOL * max(1.0, abs(top))
    for j in range(d):
        for k, default_left in enumerate((True, False)):
            hits = np.flatnonzero(gains[k][j] >= cut)
            if hits.size:
                p = hits[0]
                best = SplitCandidate(j, float(thr[j, p]), default_left, float(gains[k][j, p]))
                return best
    return None


def find_split(x, g, h, cfg: TrainConfig | None = None) -> SplitCandidate | None:
    """Best split of a single feature column (NaN = missing); None if no split helps."""
    cfg = cfg or TrainConfig()
    X = np.asarray(x, dtype=float).reshape(-1, 1)
    order, xs = _presort(X)
    return _best_split(order, xs, np.asarray(g, float), np.asarray(h, float),
                       np.ones(X.shape[0], dtype=bool), cfg)


def _goes_left(col: np.ndarray, threshold: float, default_left: bool) -> np.ndarray:
    miss = np.isnan(col)
    with np.errstate(invalid="ignore"):
        left = col < threshold
    return np.where(miss, default_left, left)


def _grow(X, order, xs, g, h, in_node, depth, cfg: TrainConfig) -> TreeNode:
    G, H = float(np.sum(g[in_node])), float(np.sum(h[in_node]))
    count = int(np.count_nonzero(in_node))
    leaf = Leaf(-G / (H + cfg.reg_lambda) * cfg.learning_rate, G, H, count)
    if depth >= cfg.max_depth or count < 2:
        return leaf
    cand = _best_split(order, xs, g, h, in_node, cfg)
    if cand is None:
        return leaf
    go_left = _goes_left(X[:, cand.feature], cand.threshold, cand.default_left)
    left = _grow(X, order, xs, g, h, in_node & go_left, depth + 1, cfg)
    right = _grow(X, order, xs, g, h, in_node & ~go_left, depth + 1, cfg)
    return Split(cand.feature, cand.threshold, cand.default_left, cand.gain, left, right, G, H, count)


def tree_output(node: TreeNode, X: np.ndarray) -> np.ndarray:
    out = np.empty(X.shape[0])
    _fill(node, X, np.arange(X.shape[0]), out)
    return out


def _fill(node, X, idx, out):
    if isinstance(node, Leaf):
        out[idx] = node.weight
        return
    left = _goes_left(X[idx, node.feature], node.threshold, node.default_left)
    _fill(node.left, X, idx[left], out)
    _fill(node.right, X, idx[~left], out)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - np.max(z, axis=1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=1, keepdims=True)


@dataclass
class Ensemble:
    trees: list[tuple[int, TreeNode]]
    n_classes: int
    learning_rate: float
    base_score: np.ndarray
    column_names: list[str] = field(default_factory=list)

    @property
    def n_rounds(self) -> int:
        return len(self.trees) // self.n_classes

    def _check(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.column_names and X.shape[1] != len(self.column_names):
            raise ValueError(f"row width {X.shape[1]} != {len(self.column_names)} training columns")
        return X

    def margins(self, X, mask=None, n_rounds: int | None = None) -> np.ndarray:
        X = self._check(X)
        if mask is not None:
            X = np.where(np.asarray(mask, dtype=bool), X, np.nan)
        out = np.tile(np.asarray(self.base_score, float), (X.shape[0], 1))
        limit = len(self.trees) if n_rounds is None else n_rounds * self.n_classes
        for cls, tree in self.trees[:limit]:
            out[:, cls] += tree_output(tree, X)
        return out

    def predict_proba(self, X, mask=None) -> np.ndarray:
        return softmax(self.margins(X, mask))

    def predict(self, X, mask=None) -> np.ndarray:
        return np.argmax(self.predict_proba(X, mask), axis=1)

    def to_dict(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "learning_rate": self.learning_rate,
            "base_score": [float(b) for b in self.base_score],
            "column_names": list(self.column_names),
            "trees": [{"class": c, "tree": node_to_dict(t)} for c, t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Ensemble":
        return cls(
            trees=[(t["class"], node_from_dict(t["tree"])) for t in d["trees"]],
            n_classes=d["n_classes"],
            learning_rate=d["learning_rate"],
            base_score=np.array(d["base_score"], dtype=float),
            column_names=list(d["column_names"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _num_out(x: float):
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")


def node_to_dict(node: TreeNode) -> dict:
    if isinstance(node, Leaf):
        return {"leaf": node.weight, "sum_grad": node.sum_grad, "sum_hess": node.sum_hess, "count": node.count}
    return {
        "feature": node.feature,
        "threshold": _num_out(node.threshold),
        "default": "left" if node.default_left else "right",
        "gain": node.gain,
        "sum_grad": node.sum_grad,
        "sum_hess": node.sum_hess,
        "count": node.count,
        "left": node_to_dict(node.left),
        "right": node_to_dict(node.right),
    }


def node_from_dict(d: dict) -> TreeNode:
    if "leaf" in d:
        return Leaf(d["leaf"], d.get("sum_grad", 0.0), d.get("sum_hess", 0.0), d.get("count", 0))
    return Split(d["feature"], float(d["threshold"]), d["default"] == "left", d["gain"],
                 node_from_dict(d["left"]), node_from_dict(d["right"]),
                 d.get("sum_grad", 0.0), d.get("sum_hess", 0.0), d.get("count", 0))


def iter_splits(node: TreeNode) -> Iterable[Split]:
    if isinstance(node, Split):
        yield node
        yield from iter_splits(node.left)
        yield from iter_splits(node.right)


def class_priors_logit(y: np.ndarray, n_classes: int) -> np.ndarray:
    counts = np.bincount(y, minlength=n_classes).astype(float)
    return np.log(np.maximum(counts / counts.sum(), 1e-6))


def train(m: TrainMatrix, cfg: TrainConfig | None = None, n_classes: int | None = None) -> Ensemble:
    """Softmax boosting: one tree per class per round on g = p - y, h = p(1 - p)."""
    cfg = cfg or TrainConfig()
    X, y = m.X, m.y
    if X.shape[0] < 2:
        raise TrainingError("need at least 2 training rows")
    K = n_classes or int(y.max()) + 1
    if K < 2 or np.unique(y).size < 2:
        raise TrainingError("need at least 2 distinct classes in the labels")
    if y.min() < 0 or y.max() >= K:
        raise TrainingError(f"labels must lie in 0..{K - 1}")
    Y = np.eye(K)[y]
    base = class_priors_logit(y, K)
    margin = np.tile(base, (X.shape[0], 1))
    order, xs = _presort(X)
    everyone = np.ones(X.shape[0], dtype=bool)
    trees: list[tuple[int, TreeNode]] = []
    for _ in range(cfg.rounds):
        P = softmax(margin)
        grown = []
        for k in range(K):
            g = P[:, k] - Y[:, k]
            h = P[:, k] * (1.0 - P[:, k])
            grown.append(_grow(X, order, xs, g, h, everyone, 0, cfg))
        for k, tree in enumerate(grown):
            margin[:, k] += tree_output(tree, X)
            trees.append((k, tree))
    return Ensemble(trees, K, cfg.learning_rate, base, list(m.column_names))


def predict(e: Ensemble, X, mask=None) -> np.ndarray:
    """Class probabilities (rows sum to 1)."""
    return e.predict_proba(X, mask)


def gain_importance(e: Ensemble) -> dict[str, float]:
    """Total split gain per column; unused columns score 0."""
    scores = dict.fromkeys(e.column_names, 0.0)
    for _, tree in e.trees:
        for s in iter_splits(tree):
            name = e.column_names[s.feature]
            scores[name] += s.gain
    return scores


def parse_rounds_grid(text: str) -> list[int]:
    """'100:1000:100' (inclusive) or '100,200,500'."""
    if ":" in text:
        lo, hi, step = (int(x) for x in text.split(":"))
        return list(range(lo, hi + 1, step))
    return [int(x) for x in text.split(",") if x.strip()]


def grid_search(m: TrainMatrix, rounds_grid: Sequence[int], evaluate: Callable[[TrainConfig], float],
                base: TrainConfig | None = None) -> TrainConfig:
    """Round count with the best ``evaluate`` score; ties go to fewer rounds."""
    base = base or TrainConfig()
    if not rounds_grid:
        raise ValueError("empty rounds grid")
    best_cfg, best_score = None, -np.inf
    for rounds in sorted(rounds_grid):
        cfg = base.replace(rounds=rounds)
        score = evaluate(cfg)
        if score > best_score:
            best_cfg, best_score = cfg, score
    return best_cfg
