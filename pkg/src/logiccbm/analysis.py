"""Interpretability and audit tooling for trained models.

Two distinct gate readouts are exposed: symbolic extraction hardens each
neuron to the argmax of its mixture (input-independent), while the gate
distribution records the argmax of the weighted gate values per sample
(input-dependent). Interventions and the concept-correction metric replace
unit activations with values derived from ground-truth concepts and re-run
only the class head.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from math import ceil
from typing import Optional, Sequence, Union

import numpy as np

from .datasets import ConceptDataset
from .errors import (
    EmptyDataset,
    MissingConceptGroundTruth,
    SameClass,
    ShapeMismatch,
)
from .formulas import Binary, ConceptRef, FormulaAst, formula_eval
from .logic import harden
from .model import DualHeadModel, LogicCbmModel, Model, VanillaCbmModel, softmax_rows
from .training import concept_activations, predict_probs


# --- symbolic extraction ---

@dataclass
class ClassFormula:
    class_index: int
    items: list[tuple[float, FormulaAst]]  # (head weight, formula), |weight| descending


def _logic_parts(model: Union[LogicCbmModel, DualHeadModel]):
    if isinstance(model, LogicCbmModel):
        return model.layers, model.head, model.passthrough
    if isinstance(model, DualHeadModel):
        return model.logic_layers, model.logic_head, model.passthrough
    raise ShapeMismatch(f"model kind {model.kind!r} has no logic layers to extract")


def neuron_formulas(model: Union[LogicCbmModel, DualHeadModel]) -> list[FormulaAst]:
    """Hardened symbolic formula of every final-layer neuron."""
    layers, _, passthrough = _logic_parts(model)
    hardened = [harden(layer.mixture) for layer in layers]
    memo: dict[tuple[int, int], FormulaAst] = {}

    def build(layer_index: int, neuron_index: int) -> FormulaAst:
        key = (layer_index, neuron_index)
        if key not in memo:
            left, right = layers[layer_index].plan.pairs[neuron_index]
            memo[key] = Binary(
                hardened[layer_index][neuron_index],
                resolve(layer_index, left),
                resolve(layer_index, right),
            )
        return memo[key]

    def resolve(layer_index: int, input_index: int) -> FormulaAst:
        if layer_index == 0:
            return ConceptRef(input_index)
        prev_width = layers[layer_index - 1].neuron_count
        if input_index < prev_width:
            return build(layer_index - 1, input_index)
        if not passthrough:
            raise ShapeMismatch(f"input index {input_index} exceeds layer width {prev_width}")
        return ConceptRef(input_index - prev_width)

    final = len(layers) - 1
    return [build(final, i) for i in range(layers[final].neuron_count)]


def extract_formulas(model: Union[LogicCbmModel, DualHeadModel], top_w: int) -> list[ClassFormula]:
    """Per class, the top_w hardened predicates ranked by |head weight|."""
    _, head, _ = _logic_parts(model)
    formulas = neuron_formulas(model)
    out = []
    for class_index in range(head.weights.shape[0]):
        row = head.weights[class_index]
        order = np.argsort(-np.abs(row), kind="stable")
        items = [(float(row[j]), formulas[j]) for j in order[:max(top_w, 0)]]
        out.append(ClassFormula(class_index, items))
    return out


# --- concept alignment ---

@dataclass
class AlignmentReport:
    per_class: dict[str, float]
    mean: Optional[float]
    skipped_singletons: list[str] = field(default_factory=list)
    zero_vector_samples: dict[str, int] = field(default_factory=dict)


def concept_alignment(groups: dict[str, np.ndarray]) -> AlignmentReport:
    """Mean pairwise cosine similarity of activations within each class.

    Classes with fewer than two usable samples are skipped and reported;
    zero vectors (undefined cosine) are dropped from the pair set.
    """
    per_class: dict[str, float] = {}
    singletons: list[str] = []
    zero_counts: dict[str, int] = {}
    for name, acts in groups.items():
        acts = np.asarray(acts, dtype=np.float64)
        if acts.ndim != 2:
            raise ShapeMismatch(f"class {name!r}: activations must be (n, k)")
        norms = np.linalg.norm(acts, axis=1)
        zero = norms == 0.0
        if zero.any():
            zero_counts[name] = int(zero.sum())
        usable = acts[~zero]
        if usable.shape[0] < 2:
            singletons.append(name)
            continue
        unit = usable / np.linalg.norm(usable, axis=1, keepdims=True)
        sim = unit @ unit.T
        upper = sim[np.triu_indices(len(usable), k=1)]
        per_class[name] = float(upper.mean())
    mean = float(np.mean(list(per_class.values()))) if per_class else None
    return AlignmentReport(per_class, mean, singletons, zero_counts)


def concept_alignment_for(model: Model, dataset: ConceptDataset) -> AlignmentReport:
    """Alignment of the model's concept activations grouped by true class."""
    if dataset.n_samples == 0:
        raise EmptyDataset("cannot score alignment on an empty dataset")
    acts = concept_activations(model, dataset.inputs)
    groups = {}
    for index, name in enumerate(dataset.class_names):
        mask = dataset.labels == index
        if mask.any():
            groups[name] = acts[mask]
    return concept_alignment(groups)


# --- interventions ---

def _check_gt(model: Model, dataset: ConceptDataset) -> None:
    k = model.encoder.spec.concept_dim
    if dataset.n_concepts != k:
        raise MissingConceptGroundTruth(
            f"dataset provides {dataset.n_concepts} ground-truth concepts, model has {k}"
        )


def _unit_space(model: Model):
    """(number of intervenable units, is_predicate_space)."""
    if isinstance(model, VanillaCbmModel):
        return model.encoder.spec.concept_dim, False
    layers, _, _ = _logic_parts(model)
    return layers[-1].neuron_count, True


def _head_of(model: Model):
    if isinstance(model, VanillaCbmModel):
        return model.head
    return _logic_parts(model)[1]


def _unit_activations(model: Model, x_row: np.ndarray) -> np.ndarray:
    """The activation vector the final head consumes, for one sample."""
    x = np.asarray(x_row, dtype=np.float64)[None, :]
    if isinstance(model, VanillaCbmModel):
        concepts, _, _, _ = model.forward_batch(x)
        return model.head_input(concepts)[0]
    if isinstance(model, LogicCbmModel):
        return model.forward_batch(x).predicates[0]
    return model.forward_batch(x)[6][-1].zhat[0]


def _corrected_unit_value(model: Model, unit: int, concept_gt: np.ndarray,
                          formulas: Optional[list[FormulaAst]]) -> float:
    if isinstance(model, VanillaCbmModel):
        return float(concept_gt[unit])
    assignment = [int(round(v)) for v in concept_gt]
    return float(formula_eval(formulas[unit], assignment))


def _apply_units(model: Model, x_row: np.ndarray, concept_gt: np.ndarray,
                 units: Sequence[int],
                 formulas: Optional[list[FormulaAst]] = None) -> tuple[int, int, np.ndarray, np.ndarray]:
    """Replace the chosen units with ground-truth-derived values, re-run the head.

    Returns (pre_class, post_class, pre_probs, post_probs).
    """
    head = _head_of(model)
    activations = _unit_activations(model, x_row)
    pre_logits = head.logits(activations[None, :])[0]
    pre_probs = softmax_rows(pre_logits[None, :])[0]
    patched = activations.copy()
    for unit in units:
        patched[unit] = _corrected_unit_value(model, int(unit), concept_gt, formulas)
    post_logits = head.logits(patched[None, :])[0]
    post_probs = softmax_rows(post_logits[None, :])[0]
    return int(pre_probs.argmax()), int(post_probs.argmax()), pre_probs, post_probs


def intervene(model: Model, sample: np.ndarray, concept_gt: np.ndarray,
              count: int, seed: int = 0) -> tuple[int, int]:
    """Replace `count` random units with ground-truth values; re-run the head.

    Vanilla models replace concept activations directly; logic models
    replace ceil(count/2) predicate activations with the hardened gate
    evaluated on the ground-truth constituents.
    """
    concept_gt = np.asarray(concept_gt, dtype=np.float64)
    if concept_gt.shape != (model.encoder.spec.concept_dim,):
        raise ShapeMismatch(
            f"concept ground truth shape {concept_gt.shape} does not match model "
            f"concept dim {model.encoder.spec.concept_dim}"
        )
    n_units, predicate_space = _unit_space(model)
    wanted = count if not predicate_space else ceil(count / 2)
    if wanted > n_units:
        warnings.warn(
            f"requested {wanted} interventions but only {n_units} units exist; clamping"
        )
        wanted = n_units
    rng = np.random.default_rng(seed)
    units = rng.choice(n_units, size=wanted, replace=False) if wanted else []
    formulas = neuron_formulas(model) if predicate_space else None
    pre, post, _, _ = _apply_units(model, sample, concept_gt, units, formulas)
    return pre, post


@dataclass
class SuccessRatioReport:
    ratio: Optional[float]  # None when nothing was misclassified
    n_misclassified: int
    n_corrected: int
    count: int


def _analysis_rows(dataset: ConceptDataset) -> ConceptDataset:
    test = dataset.subset("test")
    return test if test.n_samples else dataset


def intervention_success_ratio(model: Model, dataset: ConceptDataset, count: int,
                               seed: int = 0) -> SuccessRatioReport:
    """Fraction of misclassified test samples fixed by a `count` intervention.

    Unit choices are prefixes of one per-sample permutation, so sweeping
    over increasing counts reuses previously chosen units.
    """
    _check_gt(model, dataset)
    rows = _analysis_rows(dataset)
    if rows.n_samples == 0:
        raise EmptyDataset("no rows to intervene on")
    n_units, predicate_space = _unit_space(model)
    wanted = count if not predicate_space else ceil(count / 2)
    wanted = min(wanted, n_units)
    formulas = neuron_formulas(model) if predicate_space else None

    probs = predict_probs(model, rows.inputs)
    predicted = probs.argmax(axis=1)
    misclassified = np.flatnonzero(predicted != rows.labels)
    if misclassified.size == 0:
        return SuccessRatioReport(None, 0, 0, count)
    corrected = 0
    for i in misclassified:
        perm = np.random.default_rng((seed, int(i))).permutation(n_units)
        _, post, _, _ = _apply_units(model, rows.inputs[i], rows.concepts[i],
                                     perm[:wanted], formulas)
        if post == rows.labels[i]:
            corrected += 1
    return SuccessRatioReport(corrected / misclassified.size, int(misclassified.size),
                              corrected, count)


# --- misleading unit + concept correction gain ---

def misleading_unit(head_weights: np.ndarray, y_true: int, y_pred: int) -> int:
    """Unit with the largest |weight difference| between the two class rows."""
    if y_true == y_pred:
        raise SameClass("true and predicted class coincide; no misleading unit")
    w = np.asarray(head_weights, dtype=np.float64)
    diffs = np.abs(w[y_true] - w[y_pred])
    return int(diffs.argmax())  # first max -> lowest index


@dataclass
class CcgSample:
    index: int
    pre_confidence: float
    post_confidence: float
    unit: int
    corrected: bool


@dataclass
class CcgReport:
    value: Optional[float]  # None when no sample was corrected
    n_corrected: int
    n_evaluated: int
    samples: list[CcgSample] = field(default_factory=list)


def ccg(model: Model, dataset: ConceptDataset, include_correct: bool = False) -> CcgReport:
    """Concept Correction Gain: confidence gained by fixing the most
    misleading unit, averaged over samples whose prediction flips to the
    true class.

    By default only misclassified samples are evaluated; include_correct
    additionally records already-correct samples (they can never enter the
    corrected set).
    """
    _check_gt(model, dataset)
    rows = _analysis_rows(dataset)
    if rows.n_samples == 0:
        raise EmptyDataset("no rows to evaluate")
    head = _head_of(model)
    _, predicate_space = _unit_space(model)
    formulas = neuron_formulas(model) if predicate_space else None

    probs = predict_probs(model, rows.inputs)
    predicted = probs.argmax(axis=1)
    samples: list[CcgSample] = []
    gains: list[float] = []
    n_evaluated = 0
    for i in range(rows.n_samples):
        y_true = int(rows.labels[i])
        y_pred = int(predicted[i])
        if y_pred == y_true and not include_correct:
            continue
        n_evaluated += 1
        if y_pred == y_true:
            unit = int(np.abs(head.weights[y_true] - head.weights[y_pred]).argmax())
        else:
            unit = misleading_unit(head.weights, y_true, y_pred)
        pre, post, pre_probs, post_probs = _apply_units(
            model, rows.inputs[i], rows.concepts[i], [unit], formulas
        )
        corrected = (pre != y_true) and (post == y_true)
        if corrected:
            gains.append(float(post_probs[y_true] - pre_probs[y_true]))
        samples.append(CcgSample(
            index=i,
            pre_confidence=float(pre_probs[y_true]),
            post_confidence=float(post_probs[y_true]),
            unit=unit,
            corrected=corrected,
        ))
    value = float(np.mean(gains)) if gains else None
    return CcgReport(value, len(gains), n_evaluated, samples)


# --- gate usage histograms ---

@dataclass
class GateHistogram:
    frequencies: dict[int, float]  # gate id -> fraction of (sample, neuron) slots
    total: int
    label: Optional[str] = None


def _histogram(active_ids: np.ndarray, subset_ids: Sequence[int], label=None) -> GateHistogram:
    total = active_ids.size
    freqs = {int(gid): float((active_ids == gid).sum() / total) for gid in subset_ids}
    return GateHistogram(freqs, int(total), label)


def gate_distribution(model: Union[LogicCbmModel, DualHeadModel], dataset: ConceptDataset,
                      group_by_class: bool = False):
    """Histogram of the input-dependent active gate over samples and neurons.

    The active gate of a neuron on a sample is the argmax of the weighted
    gate values (ties to the lowest gate id), recorded across all layers.
    """
    if dataset.n_samples == 0:
        raise EmptyDataset("no rows to build a gate distribution from")
    layers, _, passthrough = _logic_parts(model)
    if isinstance(model, LogicCbmModel):
        caches = model.forward_batch(dataset.inputs).layer_caches
    else:
        caches = model.forward_batch(dataset.inputs)[6]
    subset_ids = layers[0].mixture.subset.ids
    ids_arr = np.asarray(subset_ids)
    active = np.concatenate([ids_arr[cache.jstar] for cache in caches], axis=1)  # (B, total p)
    if not group_by_class:
        return _histogram(active, subset_ids)
    out = {}
    for index, name in enumerate(dataset.class_names):
        mask = dataset.labels == index
        if mask.any():
            out[name] = _histogram(active[mask], subset_ids, label=name)
    return out
