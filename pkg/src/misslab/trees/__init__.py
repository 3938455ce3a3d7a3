"""From-scratch CART trees, bagged forests with OOB error, and boosted trees.

Mixed-type features are passed as a float64 matrix of metric values and
integer level codes; a :class:`FeatureSet` declares which columns are
categorical and how they split (ordered threshold vs one-vs-rest). Models are
immutable after fitting and fully determined by (data, config, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ._kernels import (LEAF, build_tree_gh, build_tree_gini, leaf_class_counts,
                        leaf_sd_stats, route_rows, seen_level_masks,
                        sorted_positions)

REGRESSION = "regression"
CLASSIFICATION = "classification"

ONE_VS_REST_MAX_LEVELS = 12  # nominal features above this split on ordered codes
MAX_LEVEL_CODE = 63  # seen-level bitmask width


@dataclass(frozen=True)
class FeatureSet:
    """Per-feature typing for split search and unseen-level routing."""

    names: tuple[str, ...]
    levels: np.ndarray      # int64; 0 for metric features
    split_kind: np.ndarray  # int8; 1 = one-vs-rest equality split

    @classmethod
    def build(cls, names, levels, nominal=()):
        levels = np.asarray(levels, dtype=np.int64)
        kind = np.zeros(len(names), dtype=np.int8)
        for i, name in enumerate(names):
            if name in nominal and 0 < levels[i] <= ONE_VS_REST_MAX_LEVELS:
                kind[i] = 1
        return cls(tuple(names), levels, kind)

    @property
    def n_features(self) -> int:
        return len(self.names)

    @property
    def is_categorical(self) -> np.ndarray:
        return self.levels > 0


def _seen_masks(X: np.ndarray, fs: FeatureSet) -> np.ndarray:
    return seen_level_masks(X, fs.levels)


@dataclass(frozen=True)
class TreeConfig:
    max_depth: int = 0   # 0 = unlimited
    min_leaf: int = 1
    mtry: int = 0        # 0 = all features
    seed: int = 0


@dataclass
class TreeModel:
    """Flat-array binary tree; leaves keep their training-row index segments."""

    task: str
    feature: np.ndarray
    kind: np.ndarray
    thr: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    node_start: np.ndarray
    node_count: np.ndarray
    row_perm: np.ndarray
    fs: FeatureSet
    seen_mask: np.ndarray
    n_classes: int = 0
    leaf_counts: np.ndarray | None = None  # (n_nodes, K) class counts at leaves
    leaf_sd: np.ndarray | None = None      # per-node sd of training targets

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def leaf_ids(self) -> np.ndarray:
        return np.nonzero(self.feature == LEAF)[0]

    def route(self, X: np.ndarray) -> np.ndarray:
        """Leaf node id for every row of X."""
        return route_rows(np.ascontiguousarray(X, dtype=np.float64),
                          self.feature, self.kind, self.thr, self.left,
                          self.right, self.node_count,
                          self.fs.is_categorical, self.seen_mask)

    def predict(self, X: np.ndarray) -> np.ndarray:
        leaves = self.route(X)
        vals = self.value[leaves]
        return vals.astype(np.int64) if self.task == CLASSIFICATION else vals

    def leaf_members(self, node: int) -> np.ndarray:
        """Training-row positions (into the fitting sample) held by a node."""
        s = self.node_start[node]
        return self.row_perm[s:s + self.node_count[node]]

    # -- structured-text round trip ------------------------------------------

    def to_dict(self) -> dict:
        d = {
            "task": self.task,
            "feature_names": list(self.fs.names),
            "feature_levels": self.fs.levels.tolist(),
            "split_kind": self.fs.split_kind.tolist(),
            "seen_mask": self.seen_mask.tolist(),
            "n_classes": self.n_classes,
            "nodes": {
                "feature": self.feature.tolist(),
                "kind": self.kind.tolist(),
                "thr": self.thr.tolist(),
                "left": self.left.tolist(),
                "right": self.right.tolist(),
                "value": self.value.tolist(),
                "count": self.node_count.tolist(),
            },
        }
        if self.leaf_counts is not None:
            d["leaf_counts"] = self.leaf_counts.tolist()
        if self.leaf_sd is not None:
            d["leaf_sd"] = self.leaf_sd.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TreeModel":
        fs = FeatureSet(tuple(d["feature_names"]),
                        np.asarray(d["feature_levels"], dtype=np.int64),
                        np.asarray(d["split_kind"], dtype=np.int8))
        nodes = d["nodes"]
        n_nodes = len(nodes["feature"])
        count = np.asarray(nodes["count"], dtype=np.int64)
        return cls(
            task=d["task"],
            feature=np.asarray(nodes["feature"], dtype=np.int32),
            kind=np.asarray(nodes["kind"], dtype=np.int8),
            thr=np.asarray(nodes["thr"], dtype=np.float64),
            left=np.asarray(nodes["left"], dtype=np.int32),
            right=np.asarray(nodes["right"], dtype=np.int32),
            value=np.asarray(nodes["value"], dtype=np.float64),
            node_start=np.zeros(n_nodes, dtype=np.int64),
            node_count=count,
            row_perm=np.empty(0, dtype=np.int64),
            fs=fs,
            seen_mask=np.asarray(d["seen_mask"], dtype=np.int64),
            n_classes=int(d.get("n_classes", 0)),
            leaf_counts=(np.asarray(d["leaf_counts"], dtype=np.float64)
                         if "leaf_counts" in d else None),
            leaf_sd=(np.asarray(d["leaf_sd"], dtype=np.float64)
                     if "leaf_sd" in d else None),
        )

    @classmethod
    def from_nested(cls, spec: dict, fs: FeatureSet, task: str,
                    n_classes: int = 0) -> "TreeModel":
        """Build a tree from a nested rule dict (for shipped generator models).

        Internal nodes: {"feature": name, "op": "le"|"eq", "value": v,
        "left": ..., "right": ...}; leaves: {"probs": [...]} for
        classification or {"mean": m, "sd": s} for regression, optionally
        with a relative "weight".
        """
        nodes: list[dict] = []

        def walk(node):
            idx = len(nodes)
            nodes.append(node)
            if "feature" in node:
                walk(node["left"])
                nodes[idx]["_left"] = idx + 1
                r = len(nodes)
                walk(node["right"])
                nodes[idx]["_right"] = r
            return idx

        walk(spec)
        n = len(nodes)
        feature = np.full(n, LEAF, dtype=np.int32)
        kind = np.zeros(n, dtype=np.int8)
        thr = np.zeros(n, dtype=np.float64)
        left = np.full(n, LEAF, dtype=np.int32)
        right = np.full(n, LEAF, dtype=np.int32)
        value = np.zeros(n, dtype=np.float64)
        count = np.zeros(n, dtype=np.int64)
        leaf_counts = np.zeros((n, n_classes)) if task == CLASSIFICATION else None
        leaf_sd = np.zeros(n) if task == REGRESSION else None
        name_to_idx = {nm: i for i, nm in enumerate(fs.names)}
        for i, node in enumerate(nodes):
            if "feature" in node:
                feature[i] = name_to_idx[node["feature"]]
                kind[i] = 1 if node.get("op", "le") == "eq" else 0
                thr[i] = float(node["value"])
                left[i] = node["_left"]
                right[i] = node["_right"]
            else:
                w = float(node.get("weight", 1.0))
                count[i] = max(1, round(1000 * w))
                if task == CLASSIFICATION:
                    probs = np.asarray(node["probs"], dtype=np.float64)
                    if probs.shape != (n_classes,) or abs(probs.sum() - 1.0) > 1e-6:
                        raise ValueError(f"leaf probs must be a length-{n_classes} simplex")
                    probs = probs / probs.sum()
                    leaf_counts[i] = probs * count[i]
                    value[i] = float(np.argmax(probs))
                else:
                    value[i] = float(node["mean"])
                    leaf_sd[i] = float(node["sd"])
        # propagate counts to internal nodes (children are built after parents)
        for i in range(n - 1, -1, -1):
            if feature[i] != LEAF:
                count[i] = count[left[i]] + count[right[i]]
        seen = np.array([(np.int64(1) << np.int64(max(l, 1))) - 1 if l > 0 else 0
                         for l in fs.levels], dtype=np.int64)
        return cls(task=task, feature=feature, kind=kind, thr=thr, left=left,
                   right=right, value=value, node_start=np.zeros(n, dtype=np.int64),
                   node_count=count, row_perm=np.empty(0, dtype=np.int64), fs=fs,
                   seen_mask=seen, n_classes=n_classes, leaf_counts=leaf_counts,
                   leaf_sd=leaf_sd)


def _leaf_stats(model: TreeModel, y: np.ndarray) -> None:
    if model.task == CLASSIFICATION:
        model.leaf_counts = leaf_class_counts(model.feature, model.node_start,
                                              model.node_count, model.row_perm,
                                              y, model.n_classes)
    else:
        model.leaf_sd = leaf_sd_stats(model.feature, model.node_start,
                                      model.node_count, model.row_perm, y)


def _presort(X: np.ndarray) -> np.ndarray:
    """(p, n) row positions sorted ascending per feature (stable)."""
    return np.vstack([np.argsort(X[:, f], kind="stable") for f in range(X.shape[1])])


def _base_ranks(X: np.ndarray) -> np.ndarray:
    """(p, n) rank of every row within each feature's stable sort order."""
    p, n = X.shape[1], X.shape[0]
    ranks = np.empty((p, n), dtype=np.int64)
    ar = np.arange(n)
    for f in range(p):
        ranks[f, np.argsort(X[:, f], kind="stable")] = ar
    return ranks


def _subset_sorted(ranks: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Presorted-position matrix for the row subset/multiset ``rows``."""
    p = ranks.shape[0]
    n_base = ranks.shape[1]
    S = np.empty((p, rows.shape[0]), dtype=np.int64)
    for f in range(p):
        S[f] = sorted_positions(ranks[f, rows], n_base)
    return S


def fit_tree(X: np.ndarray, y: np.ndarray, task: str, fs: FeatureSet,
             config: TreeConfig = TreeConfig(), n_classes: int = 0,
             _S: np.ndarray | None = None) -> TreeModel:
    """Greedy CART fit (SSE for regression, Gini for classification)."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("cannot fit a tree on empty data")
    if X.shape[1] != fs.n_features:
        raise ValueError("X width does not match the feature set")
    seen = _seen_masks(X, fs)
    S = _presort(X) if _S is None else _S
    XF = np.asfortranarray(X)  # split scans walk columns
    if task == CLASSIFICATION:
        y = np.asarray(y, dtype=np.int64)
        K = n_classes if n_classes > 0 else int(y.max()) + 1
        out = build_tree_gini(XF, y, K, S, fs.split_kind, fs.levels,
                              config.max_depth, config.min_leaf, config.mtry,
                              _kernel_seed(config.seed))
    elif task == REGRESSION:
        y = np.asarray(y, dtype=np.float64)
        K = 0
        out = build_tree_gh(XF, y, np.ones_like(y), S, fs.split_kind, fs.levels,
                            config.max_depth, config.min_leaf, 0.0, 0.0,
                            config.mtry, _kernel_seed(config.seed))
    else:
        raise ValueError(f"unknown task {task!r}")
    feature, kind, thr, left, right, value, start, count, perm, n_nodes = out
    model = TreeModel(task, feature, kind, thr, left, right, value, start,
                      count, perm, fs, seen, n_classes=K)
    _leaf_stats(model, y)
    return model


def _kernel_seed(seed) -> int:
    return int(np.uint32(seed))


def _auto_mtry(p: int, task: str) -> int:
    if task == CLASSIFICATION:
        return max(1, int(np.floor(np.sqrt(p))))
    return max(1, p // 3)


@dataclass(frozen=True)
class ForestConfig:
    num_trees: int = 100
    mtry: int = 0             # 0 = floor(sqrt(p)) classification, floor(p/3) regression
    sample_fraction: float = 1.0
    replace: bool = True
    min_leaf: int = 0         # 0 = 5 for regression, 1 for classification
    max_depth: int = 0
    seed: int = 0


@dataclass
class ForestModel:
    task: str
    trees: list[TreeModel]
    boot_index: list[np.ndarray]  # per tree, rows of the fitting sample drawn
    config: ForestConfig
    oob_error: float
    n_classes: int = 0

    def to_dict(self) -> dict:
        return {"task": self.task, "n_classes": self.n_classes,
                "oob_error": self.oob_error,
                "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        trees = [TreeModel.from_dict(td) for td in d["trees"]]
        return cls(task=d["task"], trees=trees,
                   boot_index=[np.empty(0, dtype=np.int64) for _ in trees],
                   config=ForestConfig(num_trees=len(trees)),
                   oob_error=float(d.get("oob_error", np.nan)),
                   n_classes=int(d.get("n_classes", 0)))


def fit_forest(X: np.ndarray, y: np.ndarray, task: str, fs: FeatureSet,
               config: ForestConfig = ForestConfig(), n_classes: int = 0) -> ForestModel:
    """Bagged CART forest with per-tree RNG streams and OOB error."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    n = X.shape[0]
    if n == 0:
        raise ValueError("cannot fit a forest on empty data")
    if config.num_trees < 1:
        raise ValueError("num_trees must be >= 1")
    mtry = config.mtry or _auto_mtry(fs.n_features, task)
    if mtry > fs.n_features:
        raise ValueError("mtry exceeds the number of features")
    min_leaf = config.min_leaf or (1 if task == CLASSIFICATION else 5)
    tree_cfg = TreeConfig(max_depth=config.max_depth, min_leaf=min_leaf, mtry=mtry)
    if task == CLASSIFICATION:
        y = np.asarray(y, dtype=np.int64)
        K = n_classes if n_classes > 0 else int(y.max()) + 1
    else:
        y = np.asarray(y, dtype=np.float64)
        K = 0
    n_draw = max(1, int(round(config.sample_fraction * n)))

    ranks = _base_ranks(X)
    children = np.random.SeedSequence(config.seed).spawn(config.num_trees)
    trees: list[TreeModel] = []
    boots: list[np.ndarray] = []
    if task == CLASSIFICATION:
        votes = np.zeros((n, K))
        probsum = np.zeros((n, K))
        oob_any = np.zeros(n, dtype=bool)
    else:
        pred_sum = np.zeros(n)
        pred_cnt = np.zeros(n)
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        if config.replace:
            boot = rng.integers(0, n, size=n_draw)
        else:
            boot = rng.permutation(n)[:n_draw]
        boot = np.sort(boot)
        tcfg = replace_seed(tree_cfg, int(child.generate_state(1)[0]))
        tree = fit_tree(X[boot], y[boot], task, fs, tcfg, n_classes=K,
                        _S=_subset_sorted(ranks, boot))
        trees.append(tree)
        boots.append(boot)
        in_bag = np.zeros(n, dtype=bool)
        in_bag[boot] = True
        oob = ~in_bag
        if oob.any():
            leaves = tree.route(X[oob])
            if task == CLASSIFICATION:
                cls_pred = tree.value[leaves].astype(np.int64)
                votes[np.nonzero(oob)[0], cls_pred] += 1.0
                cnts = tree.leaf_counts[leaves]
                probsum[oob] += cnts / cnts.sum(axis=1, keepdims=True)
                oob_any |= oob
            else:
                pred_sum[oob] += tree.value[leaves]
                pred_cnt[oob] += 1.0

    if task == CLASSIFICATION:
        if oob_any.any():
            pred = _vote(votes[oob_any], probsum[oob_any])
            oob_error = float(np.mean(pred != y[oob_any]))
        else:
            oob_error = float("nan")
    else:
        have = pred_cnt > 0
        if have.any():
            resid = pred_sum[have] / pred_cnt[have] - y[have]
            oob_error = float(np.mean(resid ** 2))
        else:
            oob_error = float("nan")
    return ForestModel(task, trees, boots, config, oob_error, n_classes=K)


def replace_seed(cfg: TreeConfig, seed: int) -> TreeConfig:
    return replace(cfg, seed=seed)


def _vote(votes: np.ndarray, probsum: np.ndarray) -> np.ndarray:
    # majority vote; ties broken by summed per-tree class mass, then lowest code
    t = votes.sum(axis=1, keepdims=True) + 1.0
    return np.argmax(votes + probsum / t, axis=1)


def predict_forest(model: ForestModel, X: np.ndarray) -> np.ndarray:
    """Mean over trees (regression) or majority vote (classification)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    n = X.shape[0]
    if model.task == CLASSIFICATION:
        votes = np.zeros((n, model.n_classes))
        probsum = np.zeros((n, model.n_classes))
        for tree in model.trees:
            leaves = tree.route(X)
            votes[np.arange(n), tree.value[leaves].astype(np.int64)] += 1.0
            cnts = tree.leaf_counts[leaves]
            probsum += cnts / np.maximum(cnts.sum(axis=1, keepdims=True), 1e-12)
        return _vote(votes, probsum)
    total = np.zeros(n)
    for tree in model.trees:
        total += tree.value[tree.route(X)]
    return total / len(model.trees)


def forest_class_probs(model: ForestModel, X: np.ndarray) -> np.ndarray:
    """Average leaf class frequencies over trees (generator draws use this)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    probs = np.zeros((X.shape[0], model.n_classes))
    for tree in model.trees:
        cnts = tree.leaf_counts[tree.route(X)]
        probs += cnts / np.maximum(cnts.sum(axis=1, keepdims=True), 1e-12)
    return probs / len(model.trees)


# ---------------------------------------------------------------------------
# gradient boosting


SQUARED = "squared"
LOGISTIC = "logistic"
SOFTMAX = "softmax"


@dataclass(frozen=True)
class GbmConfig:
    eta: float = 0.3
    lam: float = 1.0          # L2 penalty on leaf weights
    max_depth: int = 6
    subsample: float = 0.7
    n_rounds: int = 100
    min_child_weight: float = 1.0
    min_leaf: int = 1
    seed: int = 0


@dataclass
class GbmModel:
    loss: str
    base_score: np.ndarray      # scalar array, or per-class log-priors for softmax
    rounds: list                # list of TreeModel (squared/logistic) or list[TreeModel] per class
    config: GbmConfig
    fs: FeatureSet
    n_classes: int = 0
    train_loss: np.ndarray | None = None  # loss after each round


def fit_gbm(X: np.ndarray, y: np.ndarray, task: str, fs: FeatureSet,
            config: GbmConfig = GbmConfig(), n_classes: int = 0) -> GbmModel:
    """Second-order boosted trees: leaf weight w = sum(grad-target)/(sum(h)+lam)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    n = X.shape[0]
    if n == 0:
        raise ValueError("cannot fit a GBM on empty data")
    if not (0.0 < config.subsample <= 1.0):
        raise ValueError("subsample must be in (0, 1]")
    if config.eta <= 0.0:
        raise ValueError("eta must be positive")
    if config.n_rounds < 0:
        raise ValueError("n_rounds must be >= 0")
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    n_sub = max(1, int(round(config.subsample * n)))
    tree_seed = lambda: int(rng.integers(0, 2 ** 32))  # noqa: E731
    ranks = _base_ranks(X)
    full_seen = _seen_masks(X, fs)

    def build(rows, t, h):
        Xs = np.asfortranarray(X[rows])
        out = build_tree_gh(Xs, t[rows], h[rows], _subset_sorted(ranks, rows),
                            fs.split_kind, fs.levels, config.max_depth,
                            config.min_leaf, config.min_child_weight,
                            config.lam, 0, tree_seed())
        feature, kind, thr, left, right, value, start, count, perm, _ = out
        seen = full_seen if len(rows) == n else _seen_masks(Xs, fs)
        return TreeModel(REGRESSION, feature, kind, thr, left, right, value,
                         start, count, perm, fs, seen)

    if task == REGRESSION:
        loss = SQUARED
        y = np.asarray(y, dtype=np.float64)
        base = float(np.mean(y))
        F = np.full(n, base)
        rounds = []
        losses = []
        for _ in range(config.n_rounds):
            rows = rng.permutation(n)[:n_sub]
            t = y - F                      # negative gradient
            h = np.ones(n)
            tree = build(rows, t, h)
            F += config.eta * tree.value[tree.route(X)]
            rounds.append(tree)
            losses.append(float(np.mean((y - F) ** 2)))
        return GbmModel(loss, np.array([base]), rounds, config, fs,
                        train_loss=np.asarray(losses))

    y = np.asarray(y, dtype=np.int64)
    K = n_classes if n_classes > 0 else int(y.max()) + 1
    counts = np.bincount(y, minlength=K)
    absent = [k for k in range(K) if counts[k] == 0]
    if absent:
        raise ValueError(f"classes absent from training data: {absent}")

    if K == 2:
        loss = LOGISTIC
        p0 = counts[1] / n
        base = float(np.log(p0 / (1.0 - p0))) if 0 < p0 < 1 else 0.0
        F = np.full(n, base)
        yf = y.astype(np.float64)
        rounds = []
        losses = []
        for _ in range(config.n_rounds):
            rows = rng.permutation(n)[:n_sub]
            p = 1.0 / (1.0 + np.exp(-F))
            t = yf - p
            h = np.maximum(p * (1.0 - p), 1e-6)
            tree = build(rows, t, h)
            F += config.eta * tree.value[tree.route(X)]
            p = np.clip(1.0 / (1.0 + np.exp(-F)), 1e-12, 1 - 1e-12)
            losses.append(float(-np.mean(yf * np.log(p) + (1 - yf) * np.log(1 - p))))
            rounds.append(tree)
        return GbmModel(loss, np.array([base]), rounds, config, fs, n_classes=K,
                        train_loss=np.asarray(losses))

    loss = SOFTMAX
    priors = counts / n
    base = np.log(priors)
    F = np.tile(base, (n, 1))
    onehot = np.zeros((n, K))
    onehot[np.arange(n), y] = 1.0
    rounds = []
    losses = []
    for _ in range(config.n_rounds):
        expF = np.exp(F - F.max(axis=1, keepdims=True))
        P = expF / expF.sum(axis=1, keepdims=True)
        round_trees = []
        for k in range(K):
            rows = rng.permutation(n)[:n_sub]
            t = onehot[:, k] - P[:, k]
            h = np.maximum(P[:, k] * (1.0 - P[:, k]), 1e-6)
            tree = build(rows, t, h)
            F[:, k] += config.eta * tree.value[tree.route(X)]
            round_trees.append(tree)
        rounds.append(round_trees)
        expF = np.exp(F - F.max(axis=1, keepdims=True))
        P = np.clip(expF / expF.sum(axis=1, keepdims=True), 1e-12, 1.0)
        losses.append(float(-np.mean(np.log(P[np.arange(n), y]))))
    return GbmModel(loss, base, rounds, config, fs, n_classes=K,
                    train_loss=np.asarray(losses))


def predict_gbm_margin(model: GbmModel, X: np.ndarray) -> np.ndarray:
    """Raw accumulated score: base + eta * sum of leaf weights."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    n = X.shape[0]
    eta = model.config.eta
    if model.loss == SOFTMAX:
        F = np.tile(model.base_score, (n, 1))
        for round_trees in model.rounds:
            for k, tree in enumerate(round_trees):
                F[:, k] += eta * tree.value[tree.route(X)]
        return F
    F = np.full(n, model.base_score[0])
    for tree in model.rounds:
        F += eta * tree.value[tree.route(X)]
    return F


def predict_gbm(model: GbmModel, X: np.ndarray) -> np.ndarray:
    """Values for squared loss, class codes for logistic/softmax."""
    F = predict_gbm_margin(model, X)
    if model.loss == SQUARED:
        return F
    if model.loss == LOGISTIC:
        return (F >= 0.0).astype(np.int64)
    return np.argmax(F, axis=1).astype(np.int64)
