"""Synthetic benchmark generators and CSV ingestion.

Datasets are three-tuples of optional features (what the model sees),
binary ground-truth concepts, and class labels. The CLEVR-style generator
builds classes from boolean formulas over object-presence concepts: each
sample's ground-truth concepts satisfy its class formula, and the feature
copy carries optional bit-flip noise to play the role of an imperfect
observation.
"""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import (
    EmptyDataset,
    NonBinaryConcept,
    OverlappingClasses,
    ParseError,
    ShapeMismatch,
    UnknownLabel,
    UnsatisfiableClass,
    UnsupportedArity,
)
from .formulas import FormulaAst, satisfying_assignments

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class LogicClassSpec:
    class_name: str
    formula: FormulaAst


@dataclass
class ConceptDataset:
    concepts: np.ndarray                 # (n, k) binary ground truths
    labels: np.ndarray                   # (n,) class indices
    features: Optional[np.ndarray] = None  # (n, m) model inputs; concepts if absent
    splits: Optional[np.ndarray] = None  # (n,) tags from SPLITS; all-train if absent
    concept_names: list[str] = field(default_factory=list)
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.concepts = np.asarray(self.concepts, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.intp)
        if self.concepts.ndim != 2:
            raise ShapeMismatch(f"concepts must be (n, k), got shape {self.concepts.shape}")
        n = self.concepts.shape[0]
        if self.labels.shape != (n,):
            raise ShapeMismatch(f"labels shape {self.labels.shape} does not match n={n}")
        if not np.isin(self.concepts, (0.0, 1.0)).all():
            raise NonBinaryConcept("ground-truth concepts must be 0/1")
        if self.features is not None:
            self.features = np.asarray(self.features, dtype=np.float64)
            if self.features.ndim != 2 or self.features.shape[0] != n:
                raise ShapeMismatch(f"features shape {self.features.shape} does not match n={n}")
        if self.splits is None:
            self.splits = np.full(n, "train", dtype=object)
        else:
            self.splits = np.asarray(self.splits, dtype=object)
            if self.splits.shape != (n,):
                raise ShapeMismatch(f"splits shape {self.splits.shape} does not match n={n}")
            bad = set(self.splits) - set(SPLITS)
            if bad:
                raise ParseError(f"unknown split tags {sorted(bad)}")
        if not self.concept_names:
            self.concept_names = [f"c{i + 1}" for i in range(self.concepts.shape[1])]
        if not self.class_names:
            self.class_names = [str(i) for i in range(int(self.labels.max()) + 1 if n else 0)]
        if n and int(self.labels.max()) >= len(self.class_names):
            raise UnknownLabel(
                f"label {int(self.labels.max())} outside {len(self.class_names)} classes"
            )

    @property
    def n_samples(self) -> int:
        return self.concepts.shape[0]

    @property
    def n_concepts(self) -> int:
        return self.concepts.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def inputs(self) -> np.ndarray:
        """What models consume: features when present, else the concepts."""
        return self.features if self.features is not None else self.concepts

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, split: str) -> "ConceptDataset":
        mask = self.splits == split
        return ConceptDataset(
            concepts=self.concepts[mask],
            labels=self.labels[mask],
            features=None if self.features is None else self.features[mask],
            splits=self.splits[mask],
            concept_names=list(self.concept_names),
            class_names=list(self.class_names),
        )

    def split_sizes(self) -> dict[str, int]:
        return {s: int((self.splits == s).sum()) for s in SPLITS}


def gen_truth_table(arity: int) -> ConceptDataset:
    """All 2^arity boolean rows labeled by input parity."""
    if arity not in (2, 3):
        raise UnsupportedArity(f"arity must be 2 or 3, got {arity}")
    rows = np.array(
        [[(i >> (arity - 1 - b)) & 1 for b in range(arity)] for i in range(2 ** arity)],
        dtype=np.float64,
    )
    labels = rows.sum(axis=1).astype(np.intp) % 2
    return ConceptDataset(
        concepts=rows,
        labels=labels,
        concept_names=[f"c{i + 1}" for i in range(arity)],
        class_names=["0", "1"],
    )


def gen_clevr_logic(
    specs: Sequence[LogicClassSpec],
    k: int,
    per_class: int = 20,
    noise_flip_prob: float = 0.0,
    seed: int = 0,
) -> ConceptDataset:
    """Sample per-class concept vectors from each formula's satisfying set.

    Class formulas must be mutually exclusive over {0,1}^k. Ground-truth
    concepts always satisfy their class formula; the feature copy has each
    bit independently flipped with probability noise_flip_prob.
    """
    if not specs:
        raise EmptyDataset("need at least one class spec")
    sat_sets = []
    for spec in specs:
        sat = satisfying_assignments(spec.formula, k)
        if not sat:
            raise UnsatisfiableClass(f"class {spec.class_name!r} has no satisfying assignment")
        sat_sets.append(sat)
    for i in range(len(specs)):
        for j in range(i + 1, len(specs)):
            shared = set(sat_sets[i]) & set(sat_sets[j])
            if shared:
                witness = sorted(shared)[0]
                raise OverlappingClasses(
                    f"classes {specs[i].class_name!r} and {specs[j].class_name!r} "
                    f"share satisfying assignment {witness}"
                )
    rng = np.random.default_rng(seed)
    concepts, labels = [], []
    for class_index, sat in enumerate(sat_sets):
        choices = rng.integers(0, len(sat), size=per_class)
        for c in choices:
            concepts.append(sat[c])
            labels.append(class_index)
    concepts = np.array(concepts, dtype=np.float64)
    flips = rng.random(concepts.shape) < noise_flip_prob
    features = np.abs(concepts - flips.astype(np.float64))
    return ConceptDataset(
        concepts=concepts,
        labels=np.array(labels, dtype=np.intp),
        features=features,
        concept_names=[f"c{i + 1}" for i in range(k)],
        class_names=[s.class_name for s in specs],
    )


# --- CSV interchange ---

def _hash_split(seed: int, row_index: int) -> str:
    digest = hashlib.sha256(f"{seed}:{row_index}".encode()).digest()
    u = int.from_bytes(digest[:8], "big") / 2**64
    if u < 0.8:
        return "train"
    if u < 0.9:
        return "val"
    return "test"


def load_csv(path_or_file, split_seed: int = 0) -> ConceptDataset:
    """Read the delimited dataset format.

    Columns: ``c:<name>`` binary concepts, ``label``, optional ``x:<name>``
    features and ``split``. Without a split column rows get a deterministic
    80/10/10 assignment hashed from the row index.
    """
    if hasattr(path_or_file, "read"):
        text = path_or_file.read()
    else:
        with open(path_or_file, "r", encoding="utf-8", newline="") as fh:
            text = fh.read()
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty CSV file") from None
    concept_cols = [(i, name[2:]) for i, name in enumerate(header) if name.startswith("c:")]
    feature_cols = [(i, name[2:]) for i, name in enumerate(header) if name.startswith("x:")]
    label_col = [i for i, name in enumerate(header) if name == "label"]
    split_col = [i for i, name in enumerate(header) if name == "split"]
    if not concept_cols:
        raise ParseError("no concept columns (expected headers prefixed 'c:')")
    if not label_col:
        raise ParseError("no 'label' column")

    concepts, features, raw_labels, splits = [], [], [], []
    for row_index, row in enumerate(reader):
        if len(row) != len(header):
            raise ParseError(f"row {row_index + 2}: expected {len(header)} cells, got {len(row)}")
        crow = []
        for col, _ in concept_cols:
            cell = row[col].strip()
            if cell not in ("0", "1"):
                raise NonBinaryConcept(
                    f"row {row_index + 2}, column {header[col]!r}: {cell!r} is not 0/1"
                )
            crow.append(float(cell))
        concepts.append(crow)
        if feature_cols:
            try:
                features.append([float(row[col]) for col, _ in feature_cols])
            except ValueError as exc:
                raise ParseError(f"row {row_index + 2}: bad feature value ({exc})") from None
        label = row[label_col[0]].strip()
        if not label:
            raise UnknownLabel(f"row {row_index + 2}: empty label")
        raw_labels.append(label)
        if split_col:
            tag = row[split_col[0]].strip()
            if tag not in SPLITS:
                raise ParseError(f"row {row_index + 2}: unknown split {tag!r}")
            splits.append(tag)
        else:
            splits.append(_hash_split(split_seed, row_index))
    if not concepts:
        raise EmptyDataset("CSV contains a header but no rows")

    # integer-looking labels sort numerically, anything else lexically
    unique = sorted(set(raw_labels), key=lambda s: (0, int(s), "") if s.lstrip("-").isdigit() else (1, 0, s))
    label_to_index = {name: i for i, name in enumerate(unique)}
    labels = np.array([label_to_index[l] for l in raw_labels], dtype=np.intp)

    return ConceptDataset(
        concepts=np.array(concepts, dtype=np.float64),
        labels=labels,
        features=np.array(features, dtype=np.float64) if feature_cols else None,
        splits=np.array(splits, dtype=object),
        concept_names=[name for _, name in concept_cols],
        class_names=unique,
    )


def save_csv(dataset: ConceptDataset, path_or_file) -> None:
    """Write the dataset in the same delimited format load_csv reads."""
    header = (
        [f"x:{i + 1}" for i in range(dataset.features.shape[1])] if dataset.features is not None else []
    )
    header += [f"c:{name}" for name in dataset.concept_names]
    header += ["label", "split"]

    def write(fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(dataset.n_samples):
            row = []
            if dataset.features is not None:
                row += [repr(float(v)) for v in dataset.features[i]]
            row += [str(int(v)) for v in dataset.concepts[i]]
            row.append(dataset.class_names[dataset.labels[i]])
            row.append(str(dataset.splits[i]))
            writer.writerow(row)

    if hasattr(path_or_file, "write"):
        write(path_or_file)
    else:
        with open(path_or_file, "w", encoding="utf-8", newline="") as fh:
            write(fh)
