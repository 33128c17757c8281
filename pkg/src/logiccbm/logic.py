"""Differentiable logic layer: pairing, gate mixtures, forward/backward.

Each logic neuron consumes one (left, right) pair of its input vector and
holds a learnable distribution over gate types. Its activation is the
maximum of the distribution-weighted gate values; the backward pass sends
gradient through the argmax branch only (ties break to the lowest gate id),
chaining through the full softmax Jacobian for the mixture logits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DegenerateConceptSpace,
    EmptyActivations,
    InvalidSize,
    ShapeMismatch,
    StaleCache,
)
from .gates import GateSubset, eval_gates_batch, gate_subset

MIXTURE_INIT_SCALE = 0.01


@dataclass(frozen=True)
class PairingPlan:
    pairs: tuple[tuple[int, int], ...]
    input_width: int

    def __post_init__(self):
        if len(self.pairs) < 1:
            raise InvalidSize("pairing plan needs at least one neuron")
        for left, right in self.pairs:
            if not (0 <= left < self.input_width and 0 <= right < self.input_width):
                raise ShapeMismatch(
                    f"pair ({left}, {right}) outside input width {self.input_width}"
                )
            if left == right:
                raise ShapeMismatch(f"pair ({left}, {right}) must use distinct indices")

    @property
    def neuron_count(self) -> int:
        return len(self.pairs)

    @property
    def lefts(self) -> np.ndarray:
        return np.array([p[0] for p in self.pairs], dtype=np.intp)

    @property
    def rights(self) -> np.ndarray:
        return np.array([p[1] for p in self.pairs], dtype=np.intp)


@dataclass(frozen=True)
class CpMatrix:
    weights: np.ndarray  # (p, k)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
            raise ShapeMismatch(f"CP matrix must be 2-D and non-empty, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ShapeMismatch("CP matrix entries must be finite")
        object.__setattr__(self, "weights", w)


@dataclass
class GateMixture:
    logits: np.ndarray  # (p, q)
    subset: GateSubset

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.ndim != 2 or self.logits.shape[1] != len(self.subset):
            raise ShapeMismatch(
                f"logits shape {self.logits.shape} incompatible with subset of size {len(self.subset)}"
            )

    @property
    def neuron_count(self) -> int:
        return self.logits.shape[0]

    def distribution(self) -> np.ndarray:
        """Row-softmax of the logits: per-neuron gate probabilities."""
        return _softmax_rows(self.logits)


def init_mixture(neuron_count: int, subset: GateSubset, rng: np.random.Generator) -> GateMixture:
    """Near-uniform mixture: logits i.i.d. uniform in [-0.01, 0.01]."""
    logits = rng.uniform(-MIXTURE_INIT_SCALE, MIXTURE_INIT_SCALE, size=(neuron_count, len(subset)))
    return GateMixture(logits, subset)


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


# --- pairing strategies ---

def _argtop2_low_ties(row: np.ndarray) -> tuple[int, int]:
    # stable sort of the negated row puts the lower index first on ties
    order = np.argsort(-row, kind="stable")
    return int(order[0]), int(order[1])


def pair_random(input_width: int, neuron_count: int, seed: int) -> PairingPlan:
    """Uniform random distinct pairs, stored left < right; deterministic in seed."""
    if input_width < 2:
        raise DegenerateConceptSpace(f"need at least 2 inputs to pair, got {input_width}")
    if neuron_count < 1:
        raise InvalidSize(f"neuron_count must be >= 1, got {neuron_count}")
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(neuron_count):
        left, right = rng.choice(input_width, size=2, replace=False)
        pairs.append((int(min(left, right)), int(max(left, right))))
    return PairingPlan(tuple(pairs), input_width)


def pair_from_cp(cp: CpMatrix) -> PairingPlan:
    """Top-2 weights per CP row; ties break toward the lower index."""
    k = cp.weights.shape[1]
    if k < 2:
        raise DegenerateConceptSpace(f"CP matrix needs k >= 2 columns, got {k}")
    pairs = tuple(_argtop2_low_ties(row) for row in cp.weights)
    return PairingPlan(pairs, k)


def pair_correlated(
    concept_activations: np.ndarray,
    neuron_count: int,
    samples_per_draw: int,
    seed: int,
) -> PairingPlan:
    """Pair the two most active concepts, averaged over random sample subsets.

    Each neuron draws its own subset of rows, averages activations per
    concept, and takes the top two of the mean vector.
    """
    acts = np.asarray(concept_activations, dtype=np.float64)
    if acts.ndim != 2:
        raise ShapeMismatch(f"activations must be (n, k), got shape {acts.shape}")
    n, k = acts.shape
    if n < 1:
        raise EmptyActivations("need at least one activation row")
    if k < 2:
        raise DegenerateConceptSpace(f"need at least 2 concepts, got {k}")
    if neuron_count < 1:
        raise InvalidSize(f"neuron_count must be >= 1, got {neuron_count}")
    rng = np.random.default_rng(seed)
    draw = min(max(int(samples_per_draw), 1), n)
    pairs = []
    for _ in range(neuron_count):
        rows = rng.choice(n, size=draw, replace=False)
        mean = acts[rows].mean(axis=0)
        pairs.append(_argtop2_low_ties(mean))
    return PairingPlan(tuple(pairs), k)


# --- forward / backward ---

@dataclass
class LayerCache:
    plan: PairingPlan
    subset: GateSubset
    g: np.ndarray            # (p, q) softmax rows
    a_vals: np.ndarray       # (B, p) left pair values
    b_vals: np.ndarray       # (B, p) right pair values
    jstar: np.ndarray        # (B, p) argmax gate column per neuron
    vals_at_jstar: np.ndarray  # (B, p) raw gate value at the argmax
    zhat: np.ndarray         # (B, p) neuron outputs


def layer_forward_batch(
    inputs: np.ndarray, plan: PairingPlan, mixture: GateMixture
) -> tuple[np.ndarray, LayerCache]:
    """Vectorized forward pass over a (B, width) input block."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeMismatch(f"expected (B, width) inputs, got shape {x.shape}")
    if x.shape[1] != plan.input_width:
        raise ShapeMismatch(
            f"input width {x.shape[1]} does not match plan width {plan.input_width}"
        )
    if mixture.neuron_count != plan.neuron_count:
        raise ShapeMismatch(
            f"mixture has {mixture.neuron_count} neurons, plan has {plan.neuron_count}"
        )
    x = np.clip(x, 0.0, 1.0)
    a = x[:, plan.lefts]
    b = x[:, plan.rights]
    vals = eval_gates_batch(mixture.subset.coefficients, a, b)  # (B, p, q)
    g = mixture.distribution()
    weighted = g[None, :, :] * vals
    # argmax with ties broken to the lowest gate id, not the lowest column
    id_order = np.argsort(mixture.subset.ids, kind="stable")
    jstar = id_order[np.argmax(weighted[..., id_order], axis=2)]
    zhat = np.take_along_axis(weighted, jstar[..., None], axis=2)[..., 0]
    vals_at_jstar = np.take_along_axis(vals, jstar[..., None], axis=2)[..., 0]
    cache = LayerCache(
        plan=plan, subset=mixture.subset, g=g,
        a_vals=a, b_vals=b, jstar=jstar,
        vals_at_jstar=vals_at_jstar, zhat=zhat,
    )
    return zhat, cache


def layer_forward(
    inputs: Sequence[float], plan: PairingPlan, mixture: GateMixture
) -> tuple[np.ndarray, LayerCache]:
    """Single-vector forward pass; returns (predicate vector, cache)."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeMismatch(f"expected a 1-D input vector, got shape {x.shape}")
    zhat, cache = layer_forward_batch(x[None, :], plan, mixture)
    return zhat[0], cache


def layer_backward_batch(
    cache: LayerCache, upstream: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients (grad_logits (p, q), grad_input (B, width)) for a batch.

    Gradient flows through each neuron's argmax gate only; the logits
    gradient chains through the softmax Jacobian of the whole row.
    """
    u = np.asarray(upstream, dtype=np.float64)
    if u.shape != cache.zhat.shape:
        raise StaleCache(
            f"upstream shape {u.shape} does not match cached outputs {cache.zhat.shape}"
        )
    n_batch, p = u.shape
    q = cache.g.shape[1]
    neuron_idx = np.broadcast_to(np.arange(p), (n_batch, p))
    g_at_jstar = cache.g[neuron_idx, cache.jstar]

    # d zhat / d g_{j*} = gate value; chain through the softmax Jacobian.
    e = u * cache.vals_at_jstar
    w = e * g_at_jstar
    grad_logits = np.zeros((p, q))
    np.add.at(grad_logits, (neuron_idx.ravel(), cache.jstar.ravel()), w.ravel())
    grad_logits -= w.sum(axis=0)[:, None] * cache.g

    # d zhat / d (a, b) = g_{j*} * gate polynomial gradient at the argmax.
    coeffs = cache.subset.coefficients
    ka = coeffs[cache.jstar, 1]
    kb = coeffs[cache.jstar, 2]
    kab = coeffs[cache.jstar, 3]
    ga = u * g_at_jstar * (ka + kab * cache.b_vals)
    gb = u * g_at_jstar * (kb + kab * cache.a_vals)

    grad_input = np.zeros((n_batch, cache.plan.input_width))
    lefts, rights = cache.plan.lefts, cache.plan.rights
    for i in range(p):  # fixed order keeps accumulation deterministic
        grad_input[:, lefts[i]] += ga[:, i]
        grad_input[:, rights[i]] += gb[:, i]
    return grad_logits, grad_input


def layer_backward(cache: LayerCache, upstream: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Single-vector backward pass; returns (grad_logits, grad_input)."""
    u = np.asarray(upstream, dtype=np.float64)
    if u.ndim != 1:
        raise StaleCache(f"expected a 1-D upstream vector, got shape {u.shape}")
    grad_logits, grad_input = layer_backward_batch(cache, u[None, :])
    return grad_logits, grad_input[0]


@dataclass
class LogicLayer:
    plan: PairingPlan
    mixture: GateMixture

    def __post_init__(self):
        if self.plan.neuron_count != self.mixture.neuron_count:
            raise ShapeMismatch(
                f"plan has {self.plan.neuron_count} neurons, mixture has {self.mixture.neuron_count}"
            )

    @property
    def neuron_count(self) -> int:
        return self.plan.neuron_count


def stack_forward_batch(
    inputs: np.ndarray, layers: Sequence[LogicLayer], passthrough: bool
) -> tuple[np.ndarray, list[LayerCache]]:
    """Apply logic layers in sequence over a (B, k) concept block.

    With passthrough, every layer after the first sees
    [previous outputs ‖ original concepts].
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeMismatch(f"expected (B, k) inputs, got shape {x.shape}")
    concepts = np.clip(x, 0.0, 1.0)
    current = concepts
    caches = []
    for index, layer in enumerate(layers):
        if index > 0 and passthrough:
            current = np.concatenate([current, concepts], axis=1)
        if current.shape[1] != layer.plan.input_width:
            raise ShapeMismatch(
                f"layer {index}: input width {current.shape[1]} does not match "
                f"plan width {layer.plan.input_width}"
            )
        current, cache = layer_forward_batch(current, layer.plan, layer.mixture)
        caches.append(cache)
    return current, caches


def stack_forward(
    inputs: Sequence[float], layers: Sequence[LogicLayer], passthrough: bool
) -> tuple[np.ndarray, list[LayerCache]]:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeMismatch(f"expected a 1-D concept vector, got shape {x.shape}")
    out, caches = stack_forward_batch(x[None, :], layers, passthrough)
    return out[0], caches


def stack_backward_batch(
    caches: Sequence[LayerCache], upstream: np.ndarray, passthrough: bool
) -> tuple[list[np.ndarray], np.ndarray]:
    """Reverse the stack: per-layer logits gradients plus concept gradient."""
    grad_logits_per_layer: list[Optional[np.ndarray]] = [None] * len(caches)
    u = np.asarray(upstream, dtype=np.float64)
    k = caches[0].plan.input_width
    grad_concepts = np.zeros((u.shape[0], k))
    for index in range(len(caches) - 1, -1, -1):
        grad_logits, grad_input = layer_backward_batch(caches[index], u)
        grad_logits_per_layer[index] = grad_logits
        if index > 0 and passthrough:
            prev_width = caches[index - 1].zhat.shape[1]
            u = grad_input[:, :prev_width]
            grad_concepts += grad_input[:, prev_width:]
        elif index > 0:
            u = grad_input
        else:
            grad_concepts += grad_input
    return grad_logits_per_layer, grad_concepts


def harden(mixture: GateMixture) -> list[int]:
    """Argmax gate id per neuron; ties break to the lowest gate id."""
    ids = np.array(mixture.subset.ids)
    hardened = []
    for row in mixture.logits:
        winners = ids[row == row.max()]
        hardened.append(int(winners.min()))
    return hardened
