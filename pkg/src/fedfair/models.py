"""Local models: L2-regularized logistic regression and second-order boosted trees.

Both models carry their feature :class:`Encoding` (one-hot categoricals in
schema order and value order, standardized numerics) so prediction on a new
dataset cannot silently use a different column layout.

Linear parameters are handled as one flat vector ``theta = [w..., b]``; that
vector is what the federated engine averages.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import SchemaError, TrainingError
from .seeding import derive_seed, make_rng
from .tabular import Dataset, SplitSet

LOGIT_CLAMP = 30.0


@dataclass(frozen=True)
class EncodedColumn:
    name: str
    kind: str
    values: tuple[int, ...] = ()
    mean: float = 0.0
    std: float = 1.0


@dataclass(frozen=True)
class Encoding:
    columns: tuple[EncodedColumn, ...]

    @property
    def dim(self) -> int:
        return sum(len(c.values) if c.kind == "categorical" else 1 for c in self.columns)

    @property
    def feature_names(self) -> list[str]:
        out = []
        for c in self.columns:
            if c.kind == "categorical":
                out += [f"{c.name}={v}" for v in c.values]
            else:
                out.append(c.name)
        return out

    def to_dict(self) -> dict:
        return {"columns": [asdict(c) for c in self.columns]}

    @classmethod
    def from_dict(cls, d) -> "Encoding":
        return cls(tuple(
            EncodedColumn(c["name"], c["kind"], tuple(c["values"]), c["mean"], c["std"])
            for c in d["columns"]
        ))


def fit_encoding(
    datasets: Dataset | Sequence[Dataset],
    include_sensitive: bool = True,
    exclude: Sequence[str] = (),
) -> Encoding:
    """Encoding from the schema plus numeric statistics pooled over ``datasets``.

    Numeric mean/std are combined from per-dataset counts and sums, the way a
    server would aggregate client statistics.
    """
    if isinstance(datasets, Dataset):
        datasets = [datasets]
    first = datasets[0]
    skip = set(exclude) | (set() if include_sensitive else set(first.sensitive_attrs))
    cols = []
    for c in first.schema:
        if c.name in skip:
            continue
        if c.is_categorical:
            cols.append(EncodedColumn(c.name, "categorical", c.allowed_values))
            continue
        n = sum(len(d) for d in datasets)
        s = sum(float(np.sum(d.columns[c.name])) for d in datasets)
        mean = s / n if n else 0.0
        ss = sum(float(np.sum((d.columns[c.name] - mean) ** 2)) for d in datasets)
        std = math.sqrt(ss / n) if n else 1.0
        cols.append(EncodedColumn(c.name, "numeric", (), mean, std if std > 0 else 1.0))
    return Encoding(tuple(cols))


def encode(enc: Encoding, ds: Dataset) -> np.ndarray:
    X = np.zeros((len(ds), enc.dim))
    j = 0
    for c in enc.columns:
        if c.name not in ds.columns or ds.column_schema(c.name).kind != c.kind:
            raise SchemaError(f"dataset does not match model encoding at column {c.name!r}")
        col = ds.columns[c.name]
        if c.kind == "categorical":
            for v in c.values:
                X[:, j] = col == v
                j += 1
        else:
            X[:, j] = (col - c.mean) / c.std
            j += 1
    return X


def sigmoid(z):
    z = np.clip(z, -LOGIT_CLAMP, LOGIT_CLAMP)
    return 1.0 / (1.0 + np.exp(-z))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    batch_size: int = 64
    epochs: int = 5
    l2_penalty: float = 0.0
    optimizer: str = "sgd"
    momentum: float = 0.9
    seed: int = 0
    include_sensitive: bool = True
    exclude_columns: tuple[str, ...] = ()
    # boosted trees
    n_rounds: int = 50
    max_depth: int = 3
    min_child_rows: int = 5
    tree_learning_rate: float = 0.3
    reg_lambda: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "exclude_columns", tuple(self.exclude_columns))
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise TrainingError("learning_rate, batch_size must be positive; epochs >= 0")
        if self.optimizer not in ("sgd", "momentum"):
            raise TrainingError(f"unknown optimizer {self.optimizer!r}")
        if self.l2_penalty < 0 or self.n_rounds < 0 or self.max_depth < 0 or self.min_child_rows < 1:
            raise TrainingError("invalid regularization or tree settings")

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


# ---------------------------------------------------------------- logistic regression


def loss_and_grad(theta: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float = 0.0):
    """Mean cross-entropy + (l2/2)||w||^2 and its gradient; the bias is unpenalized."""
    w, b = theta[:-1], theta[-1]
    z = X @ w + b
    p = sigmoid(z)
    zc = np.clip(z, -LOGIT_CLAMP, LOGIT_CLAMP)
    # log(1 + e^z) - y z, evaluated stably
    loss = float(np.mean(np.logaddexp(0.0, zc) - y * zc)) + 0.5 * l2 * float(w @ w)
    r = (p - y) / len(y)
    grad = np.empty_like(theta)
    grad[:-1] = X.T @ r + l2 * w
    grad[-1] = r.sum()
    return loss, grad


def init_params(dim: int, seed: int) -> np.ndarray:
    """Small random weights (N(0, 0.01^2)) and zero bias."""
    theta = np.zeros(dim + 1)
    theta[:-1] = make_rng(seed).normal(scale=0.01, size=dim)
    return theta


def local_seed(seed: int, round_index: int, client_index: int) -> int:
    """Seed for batch shuffling of one local update (shared by FL and local training)."""
    return derive_seed(seed, "local", round_index, client_index)


BatchGrad = Callable[[np.ndarray, np.ndarray], np.ndarray]


def local_update(
    theta: np.ndarray,
    X: np.ndarray,
    y: np.ndarray,
    config: TrainConfig,
    seed: int,
    epochs: int | None = None,
    batch_grad: BatchGrad | None = None,
) -> np.ndarray:
    """Run mini-batch descent from ``theta`` and return the new parameters.

    ``batch_grad(theta, idx)`` overrides the plain cross-entropy gradient on
    the rows ``idx``. Rows are reshuffled each epoch; momentum state starts
    at zero on every call.
    """
    theta = np.array(theta, dtype=float, copy=True)
    rng = make_rng(seed)
    velocity = np.zeros_like(theta)
    N = len(y)
    for _ in range(config.epochs if epochs is None else epochs):
        perm = rng.permutation(N)
        for start in range(0, N, config.batch_size):
            idx = perm[start : start + config.batch_size]
            if batch_grad is None:
                g = loss_and_grad(theta, X[idx], y[idx], config.l2_penalty)[1]
            else:
                g = batch_grad(theta, idx)
            if config.optimizer == "momentum":
                velocity = config.momentum * velocity + g
                g = velocity
            theta -= config.learning_rate * g
    return theta


@dataclass
class LinearModel:
    weights: np.ndarray
    bias: float
    encoding: Encoding
    train_loss: float = math.nan
    validation_loss: float = math.nan

    @property
    def params(self) -> np.ndarray:
        return np.append(self.weights, self.bias)

    def with_params(self, theta: np.ndarray) -> "LinearModel":
        return LinearModel(np.array(theta[:-1]), float(theta[-1]), self.encoding)

    def logits(self, ds: Dataset) -> np.ndarray:
        return encode(self.encoding, ds) @ self.weights + self.bias

    def to_dict(self) -> dict:
        return {
            "type": "linear",
            "weights": [float(w) for w in self.weights],
            "bias": float(self.bias),
            "encoding": self.encoding.to_dict(),
        }

    @classmethod
    def from_dict(cls, d) -> "LinearModel":
        return cls(np.asarray(d["weights"], dtype=float), float(d["bias"]), Encoding.from_dict(d["encoding"]))


def _train_part(data: SplitSet | Dataset) -> tuple[Dataset, Dataset | None]:
    if isinstance(data, SplitSet):
        return data.train, data.validation
    return data, None


def _check_trainable(train: Dataset) -> None:
    if len(train) == 0:
        raise TrainingError("training split is empty")
    if len(np.unique(train.label)) < 2:
        raise TrainingError("training split holds a single label class (degenerate fit)")


def train_logistic(data: SplitSet | Dataset, config: TrainConfig = TrainConfig(), encoding: Encoding | None = None) -> LinearModel:
    """Mini-batch gradient descent on L2-regularized cross-entropy.

    Same seeds as a one-round, one-client federated run: initial weights from
    ``derive_seed(seed, "init")`` and shuffling from ``local_seed(seed, 0, 0)``.
    """
    train, val = _train_part(data)
    _check_trainable(train)
    enc = encoding or fit_encoding(train, config.include_sensitive, config.exclude_columns)
    X, y = encode(enc, train), train.label.astype(float)
    theta0 = init_params(enc.dim, derive_seed(config.seed, "init"))
    theta = local_update(theta0, X, y, config, local_seed(config.seed, 0, 0))
    model = LinearModel(theta[:-1].copy(), float(theta[-1]), enc)
    model.train_loss = loss_and_grad(theta, X, y, config.l2_penalty)[0]
    if val is not None and len(val):
        model.validation_loss = loss_and_grad(theta, encode(enc, val), val.label.astype(float), config.l2_penalty)[0]
    return model


def logistic_gradient(model: LinearModel, batch: Dataset, l2: float = 0.0) -> np.ndarray:
    """Exact gradient ``[dL/dw..., dL/db]`` of the batch loss at the model's parameters."""
    if len(batch) == 0:
        raise SchemaError("batch must be non-empty")
    X = encode(model.encoding, batch)
    return loss_and_grad(model.params, X, batch.label.astype(float), l2)[1]


# ---------------------------------------------------------------- boosted trees


@dataclass
class Tree:
    """Flat binary tree; ``feature[i] == -1`` marks a leaf. Rows with x <= threshold go left."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            n = node[rows]
            go_left = X[rows, self.feature[n]] <= self.threshold[n]
            node[rows] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return self.value[node]

    @property
    def depth(self) -> int:
        def d(i):
            return 0 if self.feature[i] < 0 else 1 + max(d(self.left[i]), d(self.right[i]))

        return d(0)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value")}

    @classmethod
    def from_dict(cls, d) -> "Tree":
        return cls(
            np.asarray(d["feature"], np.int64), np.asarray(d["threshold"], float),
            np.asarray(d["left"], np.int64), np.asarray(d["right"], np.int64),
            np.asarray(d["value"], float),
        )


def _best_split(X, g, h, idx, reg_lambda, min_child):
    G, H = g[idx].sum(), h[idx].sum()
    parent = G * G / (H + reg_lambda)
    best = (1e-12, -1, 0.0)
    for j in range(X.shape[1]):
        order = idx[np.argsort(X[idx, j], kind="stable")]
        xs = X[order, j]
        GL, HL = np.cumsum(g[order])[:-1], np.cumsum(h[order])[:-1]
        n_left = np.arange(1, len(order))
        ok = (xs[:-1] < xs[1:]) & (n_left >= min_child) & (len(order) - n_left >= min_child)
        if not ok.any():
            continue
        GR, HR = G - GL, H - HL
        gain = GL * GL / (HL + reg_lambda) + GR * GR / (HR + reg_lambda) - parent
        gain = np.where(ok, gain, -np.inf)
        i = int(np.argmax(gain))
        if gain[i] > best[0]:
            best = (float(gain[i]), j, float((xs[i] + xs[i + 1]) / 2.0))
    return best


def _grow_tree(X, g, h, config: TrainConfig) -> Tree:
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        for lst, v in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1), (value, 0.0)):
            lst.append(v)
        return len(feature) - 1

    def grow(idx, depth):
        node = new_node()
        G, H = g[idx].sum(), h[idx].sum()
        value[node] = -G / (H + config.reg_lambda)
        if depth >= config.max_depth or len(idx) < 2 * config.min_child_rows:
            return node
        gain, j, thr = _best_split(X, g, h, idx, config.reg_lambda, config.min_child_rows)
        if j < 0:
            return node
        feature[node], threshold[node] = j, thr
        mask = X[idx, j] <= thr
        left[node] = grow(idx[mask], depth + 1)
        right[node] = grow(idx[~mask], depth + 1)
        return node

    grow(np.arange(len(X)), 0)
    return Tree(
        np.asarray(feature, np.int64), np.asarray(threshold, float),
        np.asarray(left, np.int64), np.asarray(right, np.int64), np.asarray(value, float),
    )


@dataclass
class TreeEnsemble:
    trees: list[Tree]
    learning_rate: float
    base_score: float
    encoding: Encoding

    def logits(self, ds: Dataset) -> np.ndarray:
        X = encode(self.encoding, ds)
        out = np.full(len(X), self.base_score)
        for t in self.trees:
            out += self.learning_rate * t.predict(X)
        return out

    def to_dict(self) -> dict:
        return {
            "type": "trees",
            "learning_rate": self.learning_rate,
            "base_score": self.base_score,
            "trees": [t.to_dict() for t in self.trees],
            "encoding": self.encoding.to_dict(),
        }

    @classmethod
    def from_dict(cls, d) -> "TreeEnsemble":
        return cls(
            [Tree.from_dict(t) for t in d["trees"]], float(d["learning_rate"]),
            float(d["base_score"]), Encoding.from_dict(d["encoding"]),
        )


def train_gbdt(data: SplitSet | Dataset, config: TrainConfig = TrainConfig(), encoding: Encoding | None = None) -> TreeEnsemble:
    """Newton boosting on logistic loss with exact greedy splits.

    Each round fits one tree to the loss gradients g = p - y and hessians
    h = p(1 - p); leaf weight is -sum(g) / (sum(h) + reg_lambda). There is
    no sampling, so the result does not depend on the seed.
    """
    train, _ = _train_part(data)
    _check_trainable(train)
    enc = encoding or fit_encoding(train, config.include_sensitive, config.exclude_columns)
    X, y = encode(enc, train), train.label.astype(float)
    mean = float(y.mean())
    base = math.log(mean / (1.0 - mean))
    F = np.full(len(y), base)
    trees = []
    for _ in range(config.n_rounds):
        p = sigmoid(F)
        tree = _grow_tree(X, p - y, p * (1.0 - p), config)
        trees.append(tree)
        F = F + config.tree_learning_rate * tree.predict(X)
    return TreeEnsemble(trees, config.tree_learning_rate, base, enc)


# ---------------------------------------------------------------- shared


Model = LinearModel | TreeEnsemble


def predict(model: Model, dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Probabilities and hard labels (1 iff p >= 0.5)."""
    p = sigmoid(model.logits(dataset))
    return p, (p >= 0.5).astype(np.int64)


def accuracy(preds, labels) -> float:
    preds, labels = np.asarray(preds).ravel(), np.asarray(labels).ravel()
    if len(preds) != len(labels):
        raise SchemaError("preds and labels differ in length")
    return float(np.mean(preds == labels)) if len(preds) else math.nan


def model_from_dict(d) -> Model:
    return LinearModel.from_dict(d) if d["type"] == "linear" else TreeEnsemble.from_dict(d)


TRAINERS = {"logistic": train_logistic, "gbdt": train_gbdt}


def trainer(kind: str, config: TrainConfig) -> Callable[[SplitSet], Model]:
    fn = TRAINERS[kind]

    def train(split):
        return fn(split, config)

    train.__name__ = kind
    return train


# ---------------------------------------------------------------- hyperparameter search


@dataclass
class SearchResult:
    best: dict
    trials: list[dict] = field(default_factory=list)


def hyperparameter_search(
    objective: Callable[[dict], tuple[float, float | None]],
    space: dict[str, list],
    mode: str = "grid",
    n_iter: int = 10,
    seed: int = 0,
    max_disparity: float | None = None,
) -> SearchResult:
    """Grid or seeded random search maximizing validation accuracy.

    ``objective(params)`` returns ``(val_accuracy, val_disparity)``. With
    ``max_disparity`` set, only trials at or under it compete on accuracy;
    if none qualifies the lowest-disparity trial wins.
    """
    keys = sorted(space)
    if mode == "grid":
        combos = [dict(zip(keys, vals)) for vals in itertools.product(*[space[k] for k in keys])]
    elif mode == "random":
        rng = make_rng(seed)
        combos = [{k: space[k][int(rng.integers(len(space[k])))] for k in keys} for _ in range(n_iter)]
    else:
        raise SchemaError(f"search mode must be grid or random, got {mode!r}")
    trials = []
    for params in combos:
        acc, dd = objective(params)
        trials.append({"params": params, "accuracy": acc, "disparity": dd})
    pool = trials
    if max_disparity is not None:
        ok = [t for t in trials if t["disparity"] is not None and t["disparity"] <= max_disparity]
        if not ok:
            best = min(trials, key=lambda t: (t["disparity"], -t["accuracy"]))
            return SearchResult(best["params"], trials)
        pool = ok
    best = max(pool, key=lambda t: t["accuracy"])
    return SearchResult(best["params"], trials)


def with_params(config: TrainConfig, params: dict) -> TrainConfig:
    return replace(config, **params)
