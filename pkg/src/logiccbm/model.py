"""Model assembly: encoders, logic stack, class heads, checkpoints.

Three architectures are provided: the logic-layer classifier, a plain
linear concept-bottleneck baseline, and a dual-head variant that attaches
a logic classification head next to an existing linear head for
finetuning. All parameters are float64 numpy arrays; forward passes are
pure and safe to run concurrently, training mutates under exclusive
access.
"""

from __future__ import annotations

import base64
import copy
import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    CheckpointIOError,
    CorruptChecksum,
    SchemaVersionMismatch,
    ShapeMismatch,
)
from .gates import GateSubset, gate_subset
from .logic import (
    GateMixture,
    LogicLayer,
    PairingPlan,
    init_mixture,
    pair_random,
    stack_backward_batch,
    stack_forward_batch,
)

CHECKPOINT_SCHEMA_VERSION = 1


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# --- encoders ---

ENCODER_KINDS = ("identity", "linear_sigmoid", "mlp_sigmoid")


@dataclass(frozen=True)
class EncoderSpec:
    kind: str
    input_dim: int
    concept_dim: int
    hidden_dims: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise ShapeMismatch(f"unknown encoder kind {self.kind!r}")
        if self.kind == "identity" and self.input_dim != self.concept_dim:
            raise ShapeMismatch(
                f"identity encoder requires input_dim == concept_dim, got "
                f"{self.input_dim} != {self.concept_dim}"
            )
        if self.kind != "mlp_sigmoid" and self.hidden_dims:
            raise ShapeMismatch("hidden_dims only apply to mlp_sigmoid encoders")


class Encoder:
    """Maps raw features to concept activations in [0, 1]."""

    def __init__(self, spec: EncoderSpec, params: dict[str, np.ndarray]):
        self.spec = spec
        self.params = params

    @classmethod
    def create(cls, spec: EncoderSpec, rng: np.random.Generator) -> "Encoder":
        params: dict[str, np.ndarray] = {}
        if spec.kind == "linear_sigmoid":
            bound = 1.0 / np.sqrt(spec.input_dim)
            params["W"] = rng.uniform(-bound, bound, size=(spec.concept_dim, spec.input_dim))
            params["b"] = np.zeros(spec.concept_dim)
        elif spec.kind == "mlp_sigmoid":
            dims = [spec.input_dim, *spec.hidden_dims, spec.concept_dim]
            for i in range(len(dims) - 1):
                bound = 1.0 / np.sqrt(dims[i])
                params[f"W{i}"] = rng.uniform(-bound, bound, size=(dims[i + 1], dims[i]))
                params[f"b{i}"] = np.zeros(dims[i + 1])
        return cls(spec, params)

    def forward_batch(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Returns (concepts clamped to [0,1], cache for backward)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise ShapeMismatch(
                f"encoder expects (B, {self.spec.input_dim}) inputs, got shape {x.shape}"
            )
        if self.spec.kind == "identity":
            return np.clip(x, 0.0, 1.0), [x]
        if self.spec.kind == "linear_sigmoid":
            c = sigmoid(x @ self.params["W"].T + self.params["b"])
            return c, [x, c]
        hidden = [x]
        h = x
        n_layers = len(self.spec.hidden_dims) + 1
        for i in range(n_layers - 1):
            h = np.maximum(h @ self.params[f"W{i}"].T + self.params[f"b{i}"], 0.0)
            hidden.append(h)
        c = sigmoid(h @ self.params[f"W{n_layers - 1}"].T + self.params[f"b{n_layers - 1}"])
        hidden.append(c)
        return c, hidden

    def backward(self, cache: list[np.ndarray], d_concepts: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients given the gradient at the concept output."""
        if self.spec.kind == "identity":
            return {}
        if self.spec.kind == "linear_sigmoid":
            x, c = cache
            ds = d_concepts * c * (1.0 - c)
            return {"W": ds.T @ x, "b": ds.sum(axis=0)}
        hidden = cache
        x, inner, c = hidden[0], hidden[1:-1], hidden[-1]
        n_layers = len(self.spec.hidden_dims) + 1
        grads: dict[str, np.ndarray] = {}
        ds = d_concepts * c * (1.0 - c)
        for i in range(n_layers - 1, -1, -1):
            upstream_in = hidden[i]
            grads[f"W{i}"] = ds.T @ upstream_in
            grads[f"b{i}"] = ds.sum(axis=0)
            if i > 0:
                ds = (ds @ self.params[f"W{i}"]) * (hidden[i] > 0)
        return grads


# --- logic CBM ---

@dataclass
class ClassHead:
    weights: np.ndarray  # (n, units)
    bias: np.ndarray     # (n,)
    use_bias: bool = True

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeMismatch(
                f"head weights {self.weights.shape} and bias {self.bias.shape} disagree"
            )

    def logits(self, units: np.ndarray) -> np.ndarray:
        out = units @ self.weights.T
        if self.use_bias:
            out = out + self.bias
        return out

    @classmethod
    def create(cls, n_classes: int, n_units: int, rng: np.random.Generator,
               use_bias: bool = True) -> "ClassHead":
        bound = 1.0 / np.sqrt(n_units)
        return cls(rng.uniform(-bound, bound, size=(n_classes, n_units)),
                   np.zeros(n_classes), use_bias)


@dataclass
class LogicForward:
    concepts: np.ndarray
    predicates: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    encoder_cache: list[np.ndarray]
    layer_caches: list


class LogicCbmModel:
    """Encoder -> logic layers -> linear class head -> softmax."""

    kind = "logic_cbm"

    def __init__(
        self,
        encoder: Encoder,
        layers: Sequence[LogicLayer],
        head: ClassHead,
        passthrough: bool = False,
        seed: int = 0,
        config_digest: Optional[str] = None,
    ):
        if not layers:
            raise ShapeMismatch("logic model needs at least one logic layer")
        self.encoder = encoder
        self.layers = list(layers)
        self.head = head
        self.passthrough = passthrough
        self.seed = seed
        self.config_digest = config_digest
        self._check_dims()

    def _check_dims(self):
        k = self.encoder.spec.concept_dim
        width = k
        for index, layer in enumerate(self.layers):
            if index > 0 and self.passthrough:
                width += k
            if layer.plan.input_width != width:
                raise ShapeMismatch(
                    f"layer {index} expects width {layer.plan.input_width}, chain gives {width}"
                )
            width = layer.neuron_count
        if self.head.weights.shape[1] != width:
            raise ShapeMismatch(
                f"head expects {self.head.weights.shape[1]} predicates, stack yields {width}"
            )

    @property
    def gate_subset(self) -> GateSubset:
        return self.layers[0].mixture.subset

    @property
    def n_classes(self) -> int:
        return self.head.weights.shape[0]

    def forward_batch(self, x: np.ndarray) -> LogicForward:
        concepts, enc_cache = self.encoder.forward_batch(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        predicates, caches = stack_forward_batch(concepts, self.layers, self.passthrough)
        logits = self.head.logits(predicates)
        return LogicForward(concepts, predicates, logits, softmax_rows(logits), enc_cache, caches)

    def forward(self, x: Sequence[float]) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Single-sample pass: (concepts, predicates, logits, probs)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1:
            raise ShapeMismatch(f"expected a 1-D feature vector, got shape {x.shape}")
        out = self.forward_batch(x[None, :])
        return out.concepts[0], out.predicates[0], out.logits[0], out.probs[0]

    def parameters(self) -> dict[str, np.ndarray]:
        params = {f"encoder.{k}": v for k, v in self.encoder.params.items()}
        for i, layer in enumerate(self.layers):
            params[f"layer{i}.logits"] = layer.mixture.logits
        params["head.W"] = self.head.weights
        params["head.b"] = self.head.bias
        return params

    def copy(self) -> "LogicCbmModel":
        return copy.deepcopy(self)

    def to_state(self) -> dict:
        return {
            "encoder": _encoder_state(self.encoder),
            "passthrough": self.passthrough,
            "gate_subset": {"name": self.gate_subset.name, "ids": list(self.gate_subset.ids)},
            "plans": [
                {"input_width": l.plan.input_width, "pairs": [list(p) for p in l.plan.pairs]}
                for l in self.layers
            ],
            "use_head_bias": self.head.use_bias,
            "dims": {
                "m": self.encoder.spec.input_dim,
                "k": self.encoder.spec.concept_dim,
                "p": [l.neuron_count for l in self.layers],
                "n": self.n_classes,
                "q": len(self.gate_subset),
            },
        }

    @classmethod
    def from_state(cls, state: dict, tensors: dict[str, np.ndarray],
                   seed: int, config_digest: Optional[str]) -> "LogicCbmModel":
        encoder = _encoder_from_state(state["encoder"], tensors, prefix="encoder.")
        subset = gate_subset(state["gate_subset"]["ids"])
        if state["gate_subset"]["name"] != "custom":
            subset = gate_subset(state["gate_subset"]["name"])
        layers = []
        for i, plan_state in enumerate(state["plans"]):
            plan = PairingPlan(
                tuple(tuple(p) for p in plan_state["pairs"]), plan_state["input_width"]
            )
            layers.append(LogicLayer(plan, GateMixture(tensors[f"layer{i}.logits"], subset)))
        head = ClassHead(tensors["head.W"], tensors["head.b"], state["use_head_bias"])
        return cls(encoder, layers, head, state["passthrough"], seed, config_digest)


class VanillaCbmModel:
    """Encoder -> linear head -> softmax; soft or thresholded concepts."""

    kind = "vanilla_cbm"

    def __init__(self, encoder: Encoder, head: ClassHead, mode: str = "soft",
                 seed: int = 0, config_digest: Optional[str] = None):
        if mode not in ("soft", "boolean"):
            raise ShapeMismatch(f"unknown vanilla mode {mode!r}")
        if head.weights.shape[1] != encoder.spec.concept_dim:
            raise ShapeMismatch(
                f"head expects {head.weights.shape[1]} concepts, encoder yields "
                f"{encoder.spec.concept_dim}"
            )
        self.encoder = encoder
        self.head = head
        self.mode = mode
        self.seed = seed
        self.config_digest = config_digest

    @property
    def n_classes(self) -> int:
        return self.head.weights.shape[0]

    def head_input(self, concepts: np.ndarray) -> np.ndarray:
        if self.mode == "boolean":
            return (concepts >= 0.5).astype(np.float64)
        return concepts

    def forward_batch(self, x: np.ndarray):
        concepts, enc_cache = self.encoder.forward_batch(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        logits = self.head.logits(self.head_input(concepts))
        return concepts, logits, softmax_rows(logits), enc_cache

    def forward(self, x: Sequence[float]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Single-sample pass: (concepts, logits, probs)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1:
            raise ShapeMismatch(f"expected a 1-D feature vector, got shape {x.shape}")
        concepts, logits, probs, _ = self.forward_batch(x[None, :])
        return concepts[0], logits[0], probs[0]

    def parameters(self) -> dict[str, np.ndarray]:
        params = {f"encoder.{k}": v for k, v in self.encoder.params.items()}
        params["head.W"] = self.head.weights
        params["head.b"] = self.head.bias
        return params

    def copy(self) -> "VanillaCbmModel":
        return copy.deepcopy(self)

    def to_state(self) -> dict:
        return {
            "encoder": _encoder_state(self.encoder),
            "mode": self.mode,
            "use_head_bias": self.head.use_bias,
            "dims": {
                "m": self.encoder.spec.input_dim,
                "k": self.encoder.spec.concept_dim,
                "n": self.n_classes,
            },
        }

    @classmethod
    def from_state(cls, state: dict, tensors: dict[str, np.ndarray],
                   seed: int, config_digest: Optional[str]) -> "VanillaCbmModel":
        encoder = _encoder_from_state(state["encoder"], tensors, prefix="encoder.")
        head = ClassHead(tensors["head.W"], tensors["head.b"], state["use_head_bias"])
        return cls(encoder, head, state["mode"], seed, config_digest)


class DualHeadModel:
    """A vanilla CBM plus a logic head sharing the same encoder.

    Head 1 is the original linear head, head 2 the logic head used for
    inference after finetuning.
    """

    kind = "dual_head"

    def __init__(self, base: VanillaCbmModel, logic_layers: Sequence[LogicLayer],
                 logic_head: ClassHead, passthrough: bool = False,
                 seed: int = 0, config_digest: Optional[str] = None):
        self.base = base
        self.logic_layers = list(logic_layers)
        self.logic_head = logic_head
        self.passthrough = passthrough
        self.seed = seed
        self.config_digest = config_digest

    @property
    def encoder(self) -> Encoder:
        return self.base.encoder

    @property
    def n_classes(self) -> int:
        return self.base.n_classes

    def forward_batch(self, x: np.ndarray):
        concepts, enc_cache = self.encoder.forward_batch(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        logits1 = self.base.head.logits(self.base.head_input(concepts))
        predicates, caches = stack_forward_batch(concepts, self.logic_layers, self.passthrough)
        logits2 = self.logic_head.logits(predicates)
        return concepts, logits1, logits2, softmax_rows(logits1), softmax_rows(logits2), enc_cache, caches

    def forward(self, x: Sequence[float]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Single-sample pass: (concepts, probs_head1, probs_head2)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1:
            raise ShapeMismatch(f"expected a 1-D feature vector, got shape {x.shape}")
        concepts, _, _, probs1, probs2, _, _ = self.forward_batch(x[None, :])
        return concepts[0], probs1[0], probs2[0]

    def parameters(self) -> dict[str, np.ndarray]:
        params = {f"encoder.{k}": v for k, v in self.encoder.params.items()}
        params["head1.W"] = self.base.head.weights
        params["head1.b"] = self.base.head.bias
        for i, layer in enumerate(self.logic_layers):
            params[f"layer{i}.logits"] = layer.mixture.logits
        params["head2.W"] = self.logic_head.weights
        params["head2.b"] = self.logic_head.bias
        return params

    def copy(self) -> "DualHeadModel":
        return copy.deepcopy(self)

    def to_state(self) -> dict:
        subset = self.logic_layers[0].mixture.subset
        return {
            "base": self.base.to_state(),
            "passthrough": self.passthrough,
            "gate_subset": {"name": subset.name, "ids": list(subset.ids)},
            "plans": [
                {"input_width": l.plan.input_width, "pairs": [list(p) for p in l.plan.pairs]}
                for l in self.logic_layers
            ],
            "use_logic_head_bias": self.logic_head.use_bias,
        }

    @classmethod
    def from_state(cls, state: dict, tensors: dict[str, np.ndarray],
                   seed: int, config_digest: Optional[str]) -> "DualHeadModel":
        base_tensors = {k: v for k, v in tensors.items() if k.startswith("encoder.")}
        base_tensors["head.W"] = tensors["head1.W"]
        base_tensors["head.b"] = tensors["head1.b"]
        base = VanillaCbmModel.from_state(state["base"], base_tensors, seed, None)
        subset = gate_subset(state["gate_subset"]["ids"])
        if state["gate_subset"]["name"] != "custom":
            subset = gate_subset(state["gate_subset"]["name"])
        layers = []
        for i, plan_state in enumerate(state["plans"]):
            plan = PairingPlan(
                tuple(tuple(p) for p in plan_state["pairs"]), plan_state["input_width"]
            )
            layers.append(LogicLayer(plan, GateMixture(tensors[f"layer{i}.logits"], subset)))
        head = ClassHead(tensors["head2.W"], tensors["head2.b"], state["use_logic_head_bias"])
        return cls(base, layers, head, state["passthrough"], seed, config_digest)


Model = LogicCbmModel | VanillaCbmModel | DualHeadModel


# --- builders ---

def make_random_plans(concept_dim: int, widths: Sequence[int], passthrough: bool,
                      seed: int) -> list[PairingPlan]:
    """Random pairing plans for a stack of the given layer widths."""
    plans = []
    input_width = concept_dim
    for i, width in enumerate(widths):
        if i > 0 and passthrough:
            input_width += concept_dim
        plans.append(pair_random(input_width, width, seed + i))
        input_width = width
    return plans


def build_logic_cbm(
    encoder_spec: EncoderSpec,
    plans: Sequence[PairingPlan],
    n_classes: int,
    subset: GateSubset,
    passthrough: bool = False,
    seed: int = 0,
    use_head_bias: bool = True,
    config_digest: Optional[str] = None,
) -> LogicCbmModel:
    rng = np.random.default_rng(seed)
    encoder = Encoder.create(encoder_spec, rng)
    layers = [LogicLayer(plan, init_mixture(plan.neuron_count, subset, rng)) for plan in plans]
    head = ClassHead.create(n_classes, plans[-1].neuron_count, rng, use_head_bias)
    return LogicCbmModel(encoder, layers, head, passthrough, seed, config_digest)


def build_vanilla_cbm(
    encoder_spec: EncoderSpec,
    n_classes: int,
    mode: str = "soft",
    seed: int = 0,
    use_head_bias: bool = True,
    config_digest: Optional[str] = None,
) -> VanillaCbmModel:
    rng = np.random.default_rng(seed)
    encoder = Encoder.create(encoder_spec, rng)
    head = ClassHead.create(n_classes, encoder_spec.concept_dim, rng, use_head_bias)
    return VanillaCbmModel(encoder, head, mode, seed, config_digest)


def build_dual_head(
    base: VanillaCbmModel,
    plans: Sequence[PairingPlan],
    subset: GateSubset,
    passthrough: bool = False,
    seed: int = 0,
    use_head_bias: bool = True,
    config_digest: Optional[str] = None,
) -> DualHeadModel:
    rng = np.random.default_rng(seed)
    layers = [LogicLayer(plan, init_mixture(plan.neuron_count, subset, rng)) for plan in plans]
    head = ClassHead.create(base.n_classes, plans[-1].neuron_count, rng, use_head_bias)
    return DualHeadModel(base, layers, head, passthrough, seed, config_digest)


def predicate_class_head(n_classes: int, n_units: int, scale: float = 4.0) -> ClassHead:
    """Fixed wiring that reads predicates directly as class scores.

    With one unit per class the head is a scaled identity; for a binary
    task driven by a single predicate, class 1 scores the predicate and
    class 0 its complement. Used by the logic-recovery benchmarks, where
    only the gate logits are learned.
    """
    if n_units == n_classes:
        return ClassHead(scale * np.eye(n_classes), np.zeros(n_classes))
    if n_units == 1 and n_classes == 2:
        return ClassHead(np.array([[-scale], [scale]]), np.array([scale, 0.0]))
    raise ShapeMismatch(
        f"predicate-class wiring needs one unit per class (or 1 unit, 2 classes); "
        f"got {n_units} units, {n_classes} classes"
    )


# --- encoder (de)serialization helpers ---

def _encoder_state(encoder: Encoder) -> dict:
    return {
        "kind": encoder.spec.kind,
        "input_dim": encoder.spec.input_dim,
        "concept_dim": encoder.spec.concept_dim,
        "hidden_dims": list(encoder.spec.hidden_dims),
    }


def _encoder_from_state(state: dict, tensors: dict[str, np.ndarray], prefix: str) -> Encoder:
    spec = EncoderSpec(state["kind"], state["input_dim"], state["concept_dim"],
                       tuple(state["hidden_dims"]))
    params = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
    return Encoder(spec, params)


# --- checkpoint io ---

def _encode_tensor(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return {
        "dtype": "<f8",
        "shape": list(arr.shape),
        "data": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def _decode_tensor(entry: dict) -> np.ndarray:
    raw = base64.b64decode(entry["data"])
    arr = np.frombuffer(raw, dtype=entry["dtype"]).copy()
    return arr.reshape(entry["shape"])


def _canonical_json(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def checkpoint_save(model: Model, path) -> None:
    """Write a versioned, checksummed container that round-trips bit-exactly."""
    payload = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "kind": model.kind,
        "state": model.to_state(),
        "seed": model.seed,
        "config_digest": model.config_digest,
        "tensors": {name: _encode_tensor(arr) for name, arr in model.parameters().items()},
    }
    payload["checksum"] = hashlib.sha256(_canonical_json(payload).encode()).hexdigest()
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True)
    except OSError as exc:
        raise CheckpointIOError(f"cannot write checkpoint {path}: {exc}") from exc


def checkpoint_load(path) -> Model:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise CheckpointIOError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptChecksum(f"checkpoint {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or "checksum" not in payload:
        raise CorruptChecksum(f"checkpoint {path} is missing its checksum")
    stored = payload.pop("checksum")
    actual = hashlib.sha256(_canonical_json(payload).encode()).hexdigest()
    if stored != actual:
        raise CorruptChecksum(f"checkpoint {path} failed checksum verification")
    version = payload.get("schema_version")
    if version != CHECKPOINT_SCHEMA_VERSION:
        raise SchemaVersionMismatch(
            f"checkpoint schema version {version}, expected {CHECKPOINT_SCHEMA_VERSION}"
        )
    tensors = {name: _decode_tensor(entry) for name, entry in payload["tensors"].items()}
    kind = payload["kind"]
    classes = {cls.kind: cls for cls in (LogicCbmModel, VanillaCbmModel, DualHeadModel)}
    if kind not in classes:
        raise CorruptChecksum(f"checkpoint {path} has unknown model kind {kind!r}")
    return classes[kind].from_state(payload["state"], tensors, payload["seed"],
                                    payload["config_digest"])
