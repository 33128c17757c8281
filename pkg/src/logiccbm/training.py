"""Losses, optimizers, and the deterministic training loop.

The loop runs minibatch gradient descent on the combined class/concept
loss, with hand-written backward passes through the head, logic stack and
encoder. Runs are bit-reproducible for a fixed seed and config: shuffle
order, parameter init and gradient reduction order are all fixed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .datasets import ConceptDataset
from .errors import EmptyDataset, InvalidLabel, NonFiniteLoss, ShapeMismatch
from .logic import stack_backward_batch
from .model import DualHeadModel, LogicCbmModel, Model, VanillaCbmModel

BCE_EPS = 1e-7


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 64
    optimizer: str = "adam"  # "adam" | "sgd_momentum"
    learning_rate: float = 0.01
    momentum: float = 0.9
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.0
    alpha: float = 0.01
    beta: float = 0.0
    seed: int = 0
    shuffle: bool = True
    trainable_prefixes: Optional[tuple[str, ...]] = None  # None trains everything
    # experiment-level settings consumed by the CLI model builder
    gate_subset: str = "full16"
    layer_widths: tuple[int, ...] = ()
    pairing: str = "random"  # "random" | "cp" | "correlated"

    def __post_init__(self):
        if self.epochs < 0:
            raise ShapeMismatch(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ShapeMismatch(f"batch_size must be >= 1, got {self.batch_size}")
        if self.alpha < 0 or self.beta < 0:
            raise ShapeMismatch("alpha and beta must be non-negative")
        if self.optimizer not in ("adam", "sgd_momentum"):
            raise ShapeMismatch(f"unknown optimizer {self.optimizer!r}")
        if self.pairing not in ("random", "cp", "correlated"):
            raise ShapeMismatch(f"unknown pairing mode {self.pairing!r}")


@dataclass
class EpochStats:
    epoch: int
    total_loss: float
    ce_loss: float
    bce_loss: float
    train_acc: float
    val_acc: Optional[float]

    def to_record(self) -> dict:
        return {
            "epoch": self.epoch,
            "total_loss": self.total_loss,
            "ce_loss": self.ce_loss,
            "bce_loss": self.bce_loss,
            "train_acc": self.train_acc,
            "val_acc": self.val_acc,
        }


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: Optional[int] = None
    wall_clock_sec: float = 0.0
    checkpoint_path: Optional[str] = None


# --- losses ---

def _bce_mean(concepts: np.ndarray, targets: np.ndarray) -> float:
    c = np.clip(concepts, BCE_EPS, 1.0 - BCE_EPS)
    return float(-(targets * np.log(c) + (1.0 - targets) * np.log(1.0 - c)).mean())


def _ce_single(probs: np.ndarray, y_true: int) -> float:
    if not 0 <= y_true < len(probs):
        raise InvalidLabel(f"label {y_true} outside [0, {len(probs)})")
    return float(-np.log(probs[y_true]))


def loss_total(
    probs: np.ndarray,
    concepts: np.ndarray,
    y_true: int,
    c_true: np.ndarray,
    alpha: float,
) -> tuple[float, float, float]:
    """Combined loss for one sample: (total, cross-entropy, concept BCE)."""
    probs = np.asarray(probs, dtype=np.float64)
    concepts = np.asarray(concepts, dtype=np.float64)
    c_true = np.asarray(c_true, dtype=np.float64)
    if concepts.shape != c_true.shape:
        raise ShapeMismatch(
            f"concepts shape {concepts.shape} does not match targets {c_true.shape}"
        )
    ce = _ce_single(probs, int(y_true))
    bce = _bce_mean(concepts, c_true)
    return ce + alpha * bce, ce, bce


def loss_finetune(
    probs1: np.ndarray,
    probs2: np.ndarray,
    concepts: np.ndarray,
    y_true: int,
    c_true: np.ndarray,
    alpha: float,
    beta: float,
) -> float:
    """Dual-head finetuning loss: CE(head1) + alpha*CE(head2) + beta*BCE."""
    concepts = np.asarray(concepts, dtype=np.float64)
    c_true = np.asarray(c_true, dtype=np.float64)
    if concepts.shape != c_true.shape:
        raise ShapeMismatch(
            f"concepts shape {concepts.shape} does not match targets {c_true.shape}"
        )
    ce1 = _ce_single(np.asarray(probs1, dtype=np.float64), int(y_true))
    ce2 = _ce_single(np.asarray(probs2, dtype=np.float64), int(y_true))
    return ce1 + alpha * ce2 + beta * _bce_mean(concepts, c_true)


def _onehot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def _ce_batch(logits: np.ndarray, labels: np.ndarray) -> float:
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    return float((logz - shifted[np.arange(len(labels)), labels]).mean())


def _bce_grad(concepts: np.ndarray, targets: np.ndarray, scale: float) -> np.ndarray:
    c = np.clip(concepts, BCE_EPS, 1.0 - BCE_EPS)
    return scale * (c - targets) / (c * (1.0 - c))


# --- per-model gradient computation ---

def _grads_logic(model: LogicCbmModel, x: np.ndarray, c_true: np.ndarray,
                 y: np.ndarray, alpha: float):
    fwd = model.forward_batch(x)
    n_batch, k = c_true.shape
    ce = _ce_batch(fwd.logits, y)
    bce = _bce_mean(fwd.concepts, c_true)

    d_logits = (fwd.probs - _onehot(y, model.n_classes)) / n_batch
    grads = {
        "head.W": d_logits.T @ fwd.predicates,
        "head.b": d_logits.sum(axis=0) if model.head.use_bias else np.zeros(model.n_classes),
    }
    d_predicates = d_logits @ model.head.weights
    layer_grads, d_concepts = stack_backward_batch(fwd.layer_caches, d_predicates,
                                                   model.passthrough)
    for i, g in enumerate(layer_grads):
        grads[f"layer{i}.logits"] = g
    d_concepts = d_concepts + _bce_grad(fwd.concepts, c_true, alpha / (n_batch * k))
    for name, g in model.encoder.backward(fwd.encoder_cache, d_concepts).items():
        grads[f"encoder.{name}"] = g
    return ce + alpha * bce, ce, bce, grads


def _grads_vanilla(model: VanillaCbmModel, x: np.ndarray, c_true: np.ndarray,
                   y: np.ndarray, alpha: float):
    concepts, logits, probs, enc_cache = model.forward_batch(x)
    n_batch, k = c_true.shape
    ce = _ce_batch(logits, y)
    bce = _bce_mean(concepts, c_true)

    head_in = model.head_input(concepts)
    d_logits = (probs - _onehot(y, model.n_classes)) / n_batch
    grads = {
        "head.W": d_logits.T @ head_in,
        "head.b": d_logits.sum(axis=0) if model.head.use_bias else np.zeros(model.n_classes),
    }
    # thresholded concepts block the head gradient; BCE still trains the encoder
    d_concepts = d_logits @ model.head.weights if model.mode == "soft" else 0.0
    d_concepts = d_concepts + _bce_grad(concepts, c_true, alpha / (n_batch * k))
    for name, g in model.encoder.backward(enc_cache, d_concepts).items():
        grads[f"encoder.{name}"] = g
    return ce + alpha * bce, ce, bce, grads


def _grads_dual(model: DualHeadModel, x: np.ndarray, c_true: np.ndarray,
                y: np.ndarray, alpha: float, beta: float):
    concepts, logits1, logits2, probs1, probs2, enc_cache, caches = model.forward_batch(x)
    n_batch, k = c_true.shape
    ce1 = _ce_batch(logits1, y)
    ce2 = _ce_batch(logits2, y)
    bce = _bce_mean(concepts, c_true)
    onehot = _onehot(y, model.n_classes)

    d_logits1 = (probs1 - onehot) / n_batch
    d_logits2 = alpha * (probs2 - onehot) / n_batch
    head_in = model.base.head_input(concepts)
    grads = {
        "head1.W": d_logits1.T @ head_in,
        "head1.b": d_logits1.sum(axis=0) if model.base.head.use_bias else np.zeros(model.n_classes),
        "head2.W": d_logits2.T @ caches[-1].zhat,
        "head2.b": d_logits2.sum(axis=0) if model.logic_head.use_bias else np.zeros(model.n_classes),
    }
    d_predicates = d_logits2 @ model.logic_head.weights
    layer_grads, d_concepts2 = stack_backward_batch(caches, d_predicates, model.passthrough)
    for i, g in enumerate(layer_grads):
        grads[f"layer{i}.logits"] = g
    d_concepts = d_concepts2
    if model.base.mode == "soft":
        d_concepts = d_concepts + d_logits1 @ model.base.head.weights
    d_concepts = d_concepts + _bce_grad(concepts, c_true, beta / (n_batch * k))
    for name, g in model.encoder.backward(enc_cache, d_concepts).items():
        grads[f"encoder.{name}"] = g
    total = ce1 + alpha * ce2 + beta * bce
    return total, ce1 + alpha * ce2, bce, grads


def compute_gradients(model: Model, x, c_true, y, alpha: float, beta: float = 0.0):
    """Loss parts and parameter gradients for one batch: (total, ce, bce, grads)."""
    x = np.asarray(x, dtype=np.float64)
    c_true = np.asarray(c_true, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    if isinstance(model, LogicCbmModel):
        return _grads_logic(model, x, c_true, y, alpha)
    if isinstance(model, VanillaCbmModel):
        return _grads_vanilla(model, x, c_true, y, alpha)
    return _grads_dual(model, x, c_true, y, alpha, beta)


# --- optimizers ---

class SgdMomentum:
    def __init__(self, params: dict[str, np.ndarray], lr: float, momentum: float,
                 weight_decay: float):
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name in params:
            g = grads[name] + self.weight_decay * params[name]
            self.velocity[name] = self.momentum * self.velocity[name] + g
            params[name] -= self.lr * self.velocity[name]


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float,
                 betas: tuple[float, float], weight_decay: float, eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.weight_decay = weight_decay
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name in params:
            g = grads[name] + self.weight_decay * params[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            params[name] -= self.lr * (self.m[name] / bc1) / (np.sqrt(self.v[name] / bc2) + self.eps)


def _make_optimizer(config: TrainConfig, params: dict[str, np.ndarray]):
    if config.optimizer == "adam":
        return Adam(params, config.learning_rate, config.betas, config.weight_decay)
    return SgdMomentum(params, config.learning_rate, config.momentum, config.weight_decay)


# --- evaluation ---

def predict_probs(model: Model, inputs: np.ndarray) -> np.ndarray:
    """Class probabilities; dual-head models predict from the logic head."""
    if isinstance(model, LogicCbmModel):
        return model.forward_batch(inputs).probs
    if isinstance(model, VanillaCbmModel):
        return model.forward_batch(inputs)[2]
    return model.forward_batch(inputs)[4]


def concept_activations(model: Model, inputs: np.ndarray) -> np.ndarray:
    if isinstance(model, LogicCbmModel):
        return model.forward_batch(inputs).concepts
    return model.forward_batch(inputs)[0]


@dataclass
class EvalResult:
    accuracy: float
    per_class_accuracy: dict[str, float]
    mean_concept_error: float
    n_samples: int


def evaluate(model: Model, dataset: ConceptDataset) -> EvalResult:
    """Accuracy, per-class accuracy and mean concept error on a dataset."""
    if dataset.n_samples == 0:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    probs = predict_probs(model, dataset.inputs)
    predicted = probs.argmax(axis=1)
    correct = predicted == dataset.labels
    per_class = {}
    for index, name in enumerate(dataset.class_names):
        mask = dataset.labels == index
        if mask.any():
            per_class[name] = float(correct[mask].mean())
    acts = concept_activations(model, dataset.inputs)
    concept_err = float(np.abs(acts - dataset.concepts).mean()) if acts.shape == dataset.concepts.shape else float("nan")
    return EvalResult(float(correct.mean()), per_class, concept_err, dataset.n_samples)


# --- the loop ---

def train(model: Model, dataset: ConceptDataset, config: TrainConfig) -> tuple[Model, TrainReport]:
    """Train a copy of the model; returns (best model, per-epoch report).

    Model selection keeps the highest validation accuracy, falling back to
    the last epoch when the dataset has no validation rows.
    """
    start = time.perf_counter()
    train_set = dataset.subset("train")
    if train_set.n_samples == 0:
        raise EmptyDataset("dataset has no training rows")
    val_set = dataset.subset("val")
    if train_set.input_dim != _model_input_dim(model):
        raise ShapeMismatch(
            f"dataset inputs have dim {train_set.input_dim}, model expects "
            f"{_model_input_dim(model)}"
        )

    model = model.copy()
    report = TrainReport()
    if config.epochs == 0:
        report.wall_clock_sec = time.perf_counter() - start
        return model, report

    params = model.parameters()
    if config.trainable_prefixes is not None:
        params = {name: arr for name, arr in params.items()
                  if any(name.startswith(p) for p in config.trainable_prefixes)}
        if not params:
            raise ShapeMismatch(
                f"no parameters match trainable prefixes {config.trainable_prefixes}"
            )
    optimizer = _make_optimizer(config, params)
    x_all, c_all, y_all = train_set.inputs, train_set.concepts, train_set.labels
    n = train_set.n_samples

    best_val = -np.inf
    best_model = None
    for epoch in range(config.epochs):
        if config.shuffle:
            order = np.random.default_rng((config.seed, epoch)).permutation(n)
        else:
            order = np.arange(n)
        ce_sum = bce_sum = 0.0
        for start_idx in range(0, n, config.batch_size):
            idx = order[start_idx:start_idx + config.batch_size]
            total, ce, bce, grads = compute_gradients(
                model, x_all[idx], c_all[idx], y_all[idx], config.alpha, config.beta
            )
            if not np.isfinite(total):
                raise NonFiniteLoss(
                    f"non-finite loss {total} at epoch {epoch}, batch {start_idx // config.batch_size}"
                )
            optimizer.step(params, grads)
            ce_sum += ce * len(idx)
            bce_sum += bce * len(idx)

        ce_mean, bce_mean = ce_sum / n, bce_sum / n
        weight = config.beta if isinstance(model, DualHeadModel) else config.alpha
        train_acc = evaluate(model, train_set).accuracy
        val_acc = evaluate(model, val_set).accuracy if val_set.n_samples else None
        report.epochs.append(EpochStats(
            epoch=epoch,
            total_loss=ce_mean + weight * bce_mean,
            ce_loss=ce_mean,
            bce_loss=bce_mean,
            train_acc=train_acc,
            val_acc=val_acc,
        ))
        if val_acc is not None and val_acc > best_val:
            best_val = val_acc
            best_model = model.copy()
            report.best_epoch = epoch

    if best_model is None:
        best_model = model
        report.best_epoch = config.epochs - 1
    report.wall_clock_sec = time.perf_counter() - start
    return best_model, report


def _model_input_dim(model: Model) -> int:
    return model.encoder.spec.input_dim


def train_with_restarts(
    model_factory: Callable[[int], Model],
    dataset: ConceptDataset,
    config: TrainConfig,
    restarts: int = 1,
    target_accuracy: float = 1.0,
) -> tuple[Model, TrainReport, int]:
    """Multi-start training: re-initialize until the train fit is exact.

    The weighted-max neuron gives gradient only to each sample's argmax
    gate, so tiny truth-table problems have init-dependent local optima
    (a gate covering three corners can win early and block the rest).
    Restarting from fresh seeds is the standard escape; attempt seeds are
    derived deterministically from config.seed. Returns the first attempt
    reaching target train accuracy, else the best attempt seen.
    """
    best = None
    for attempt in range(max(restarts, 1)):
        seed = config.seed + 1000 * attempt
        model = model_factory(seed)
        trained, report = train(model, dataset, replace(config, seed=seed))
        acc = evaluate(trained, dataset.subset("train")).accuracy
        if best is None or acc > best[0]:
            best = (acc, trained, report, attempt)
        if acc >= target_accuracy:
            break
    _, model, report, attempt = best
    return model, report, attempt
