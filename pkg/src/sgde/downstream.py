"""Classifiers and federated baselines that consume real or synthetic data."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DataError, PlanError
from .nn import AdamHyper, AdamState, NetworkArch, adam_step, backward_per_example, forward
from .nn import init_params, ordered_mean
from .schema import LabeledDataset

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Model:
    arch: NetworkArch
    params: np.ndarray

    def predict_proba(self, features) -> np.ndarray:
        return forward(self.arch, self.params, features).output

    def predict(self, features) -> np.ndarray:
        return np.argmax(self.predict_proba(features), axis=1)


def logreg_arch(n_features: int, n_classes: int) -> NetworkArch:
    return NetworkArch.dense((n_features, n_classes), output="softmax")


def cross_entropy_grads(arch: NetworkArch, params: np.ndarray,
                        data: LabeledDataset) -> np.ndarray:
    """Per-example gradients of softmax cross-entropy."""
    probs = forward(arch, params, data.features).output
    onehot = np.eye(arch.output_width)[data.labels]
    return backward_per_example(arch, params, data.features, probs - onehot, wrt="logits")


def full_batch_gradient(arch: NetworkArch, params: np.ndarray, data: LabeledDataset) -> np.ndarray:
    return ordered_mean(cross_entropy_grads(arch, params, data))


def fit_full_batch(arch: NetworkArch, params: np.ndarray, data: LabeledDataset, epochs: int,
                   hyper: AdamHyper) -> np.ndarray:
    state = AdamState.fresh(params.size, hyper)
    for _ in range(epochs):
        params, state = adam_step(state, params, full_batch_gradient(arch, params, data))
    return params


def train_logreg(dataset: LabeledDataset, epochs: int = 300, lr: float = 0.05,
                 seed: int = 0) -> Model:
    """Multinomial logistic regression fitted with full-batch Adam."""
    if len(np.unique(dataset.labels)) < 2:
        raise DataError("logistic regression needs at least two classes present")
    arch = logreg_arch(dataset.features.shape[1], dataset.n_classes)
    params = init_params(arch, seed)
    return Model(arch, fit_full_batch(arch, params, dataset, epochs, AdamHyper(learning_rate=lr)))


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    f1: float
    auc: float
    absent_classes: tuple[int, ...] = ()

    def __post_init__(self):
        for name in ("accuracy", "f1", "auc"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    @property
    def score(self) -> float:
        return (self.accuracy + self.f1 + self.auc) / 3.0

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "f1": self.f1, "auc": self.auc}

    @staticmethod
    def mean(items: Sequence["Metrics"]) -> "Metrics":
        items = list(items)
        absent = sorted({c for m in items for c in m.absent_classes})
        return Metrics(float(np.mean([m.accuracy for m in items])),
                       float(np.mean([m.f1 for m in items])),
                       float(np.mean([m.auc for m in items])), tuple(absent))


def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def roc_auc(y_true: np.ndarray, scores: np.ndarray) -> Optional[float]:
    """Rank-statistic ROC-AUC with midranks for ties; None if one class is missing."""
    y = np.asarray(y_true, dtype=bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    r = _midranks(np.asarray(scores, dtype=np.float64))
    return float((r[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def f1_for_class(y_true: np.ndarray, y_pred: np.ndarray, c: int) -> float:
    tp = int(np.sum((y_pred == c) & (y_true == c)))
    fp = int(np.sum((y_pred == c) & (y_true != c)))
    fn = int(np.sum((y_pred != c) & (y_true == c)))
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 2 * tp / denom


def classification_metrics(y_true, proba: np.ndarray, positive: Optional[int] = None) -> Metrics:
    y_true = np.asarray(y_true, dtype=np.int64)
    if y_true.size == 0:
        raise DataError("cannot evaluate on an empty dataset")
    n_classes = proba.shape[1]
    y_pred = np.argmax(proba, axis=1)
    acc = float(np.mean(y_pred == y_true))
    present = set(np.unique(y_true).tolist())
    absent = tuple(c for c in range(n_classes) if c not in present)
    if n_classes == 2:
        pos = 1 if positive is None else positive
        f1 = f1_for_class(y_true, y_pred, pos)
        auc = roc_auc(y_true == pos, proba[:, pos])
        auc = 0.5 if auc is None else auc
    else:
        f1 = float(np.mean([f1_for_class(y_true, y_pred, c) for c in range(n_classes)]))
        aucs = [roc_auc(y_true == c, proba[:, c]) for c in range(n_classes)]
        defined = [a for a in aucs if a is not None]
        auc = float(np.mean(defined)) if defined else 0.5
    return Metrics(acc, f1, auc, absent)


def evaluate(model: Model, dataset: LabeledDataset) -> Metrics:
    """Accuracy, F1 (positive class when binary, macro otherwise) and AUC.

    AUC is one-vs-rest macro for more than two classes. A split lacking a
    class reports it in ``absent_classes``; its F1 term counts as 0 and an
    undefined AUC falls back to 0.5.
    """
    if len(dataset) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    return classification_metrics(dataset.labels, model.predict_proba(dataset.features),
                                  dataset.positive_index)


Trainer = Callable[[LabeledDataset, int], Model]


def stratified_folds(labels: np.ndarray, k: int, seed: int) -> list[np.ndarray]:
    labels = np.asarray(labels)
    n = labels.shape[0]
    if n < k:
        raise DataError(f"need at least k={k} examples, got {n}")
    rng = np.random.default_rng(seed)
    counts = np.bincount(labels)
    folds: list[list[int]] = [[] for _ in range(k)]
    if counts[counts > 0].min() < k:
        log.warning("a class has fewer than %d members; using unstratified folds", k)
        for i, idx in enumerate(rng.permutation(n)):
            folds[i % k].append(int(idx))
    else:
        pos = 0
        for c in np.flatnonzero(counts):
            for idx in rng.permutation(np.flatnonzero(labels == c)):
                folds[pos % k].append(int(idx))
                pos += 1
    return [np.array(sorted(f), dtype=np.int64) for f in folds]


def kfold_cv(dataset: LabeledDataset, k: int = 10, trainer: Trainer | None = None,
             seed: int = 0) -> Metrics:
    """Mean of fold metrics over stratified k-fold cross-validation."""
    trainer = trainer or (lambda d, s: train_logreg(d, seed=s))
    folds = stratified_folds(dataset.labels, k, seed)
    results = []
    for i, test_idx in enumerate(folds):
        train_idx = np.concatenate([f for j, f in enumerate(folds) if j != i])
        model = trainer(dataset.subset(train_idx), seed + i)
        results.append(evaluate(model, dataset.subset(test_idx)))
    return Metrics.mean(results)


def fedavg_round(global_params: np.ndarray | None, client_params: Sequence[np.ndarray],
                 weights: Sequence[float]) -> np.ndarray:
    """Weighted average ``sum_k p_k w_k`` of client parameter vectors."""
    w = np.asarray(weights, dtype=np.float64)
    if len(client_params) == 0 or w.shape != (len(client_params),):
        raise PlanError("one weight per client is required")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise PlanError(f"client weights must be non-negative and sum to 1 (sum={w.sum()})")
    stacked = np.vstack(client_params)
    if global_params is not None and stacked.shape[1] != np.asarray(global_params).size:
        raise PlanError("client and global parameter vectors differ in length")
    return w @ stacked


@dataclass
class ClientSplit:
    train: LabeledDataset
    validation: LabeledDataset


@dataclass
class FederationPlan:
    clients: list[ClientSplit]
    weights: Optional[Sequence[float]] = None  # default p_k = n_k / n
    rounds_max: int = 500
    local_epochs: int = 1
    patience: int = 10
    learning_rate: float = 0.01

    def client_weights(self) -> np.ndarray:
        if self.weights is not None:
            return np.asarray(self.weights, dtype=np.float64)
        n_k = np.array([len(c.train) for c in self.clients], dtype=np.float64)
        return n_k / n_k.sum()


@dataclass
class FedAvgResult:
    model: Model
    rounds_run: int
    best_round: int
    scores: list[float] = field(default_factory=list)

    def __iter__(self):
        return iter((self.model, self.rounds_run))


def run_fedavg(plan: FederationPlan, arch: NetworkArch, seed: int) -> FedAvgResult:
    """FedAvg with early stopping on the mean client validation score.

    Each client restarts Adam every round and runs ``local_epochs`` full-batch
    steps from the broadcast parameters.
    """
    if not plan.clients:
        raise PlanError("federation has no clients")
    weights = plan.client_weights()
    hyper = AdamHyper(learning_rate=plan.learning_rate)
    params = init_params(arch, seed)
    best, best_score, best_round = params, -np.inf, 0
    since_best, scores, rounds = 0, [], 0
    while rounds < plan.rounds_max:
        local = [fit_full_batch(arch, params, c.train, plan.local_epochs, hyper)
                 for c in plan.clients]
        params = fedavg_round(params, local, weights)
        rounds += 1
        model = Model(arch, params)
        score = float(np.mean([evaluate(model, c.validation).score for c in plan.clients]))
        scores.append(score)
        if score > best_score:
            best, best_score, best_round, since_best = params, score, rounds, 0
        else:
            since_best += 1
        if since_best >= plan.patience:
            break
    return FedAvgResult(Model(arch, best), rounds, best_round, scores)
