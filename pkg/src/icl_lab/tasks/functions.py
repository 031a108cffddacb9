"""Sampling and evaluation of the latent functions behind each prompt."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from icl_lab.tasks.spec import TaskFamily, TaskSpec


@dataclass
class FunctionInstance:
    """One sampled function; only the fields of its family are populated.

    Coordinate indices (``tree_index``, ``parity_set``) are 0-based.
    """

    family: TaskFamily
    w: Optional[np.ndarray] = None            # (d,) linear weight
    w1: Optional[np.ndarray] = None           # (h, d) first layer
    w2: Optional[np.ndarray] = None           # (h,) second layer
    tree_index: Optional[np.ndarray] = None   # (2**depth - 1,) int, heap order
    tree_leaf: Optional[np.ndarray] = None    # (2**depth,) leaf values
    parity_set: Optional[np.ndarray] = None   # (k,) int
    keys: Optional[np.ndarray] = None         # (n_pairs, d) unit norm
    values: Optional[np.ndarray] = None       # (n_pairs, d) unit norm
    extra: dict = field(default_factory=dict)


def _unit_rows(a: np.ndarray) -> np.ndarray:
    return a / np.linalg.norm(a, axis=-1, keepdims=True)


def sample_function(spec: TaskSpec, rng: np.random.Generator) -> FunctionInstance:
    """Draw a function from the family's distribution.

    Linear weights are standard Gaussian; the sparse variant keeps k uniformly
    chosen coordinates and zeroes the rest.  Two-layer-net weights are unit
    Gaussian; the chain-of-thought variant scales the first layer to variance
    2/h and draws the output vector from N(0, I_h).  Decision trees get
    Gaussian leaves and uniform coordinate indices.  MQAR keys/values are
    uniform on the unit sphere (Gaussian draw, then normalized).
    """
    f = spec.family
    d = spec.d
    if f is TaskFamily.LINEAR_REGRESSION or f is TaskFamily.ORTHOGONAL_OUTLIER \
            or f is TaskFamily.MANY_OUTLIER:
        return FunctionInstance(family=f, w=rng.standard_normal(d))
    if f is TaskFamily.SPARSE_LINEAR_REGRESSION:
        w = rng.standard_normal(d)
        keep = rng.choice(d, size=spec.k, replace=False)
        sparse = np.zeros(d)
        sparse[keep] = w[keep]
        return FunctionInstance(family=f, w=sparse)
    if f is TaskFamily.TWO_NN_REGRESSION:
        h = spec.hidden_width
        return FunctionInstance(
            family=f,
            w1=rng.standard_normal((h, d)),
            w2=rng.standard_normal(h),
        )
    if f is TaskFamily.DECISION_TREE:
        n_internal = 2 ** spec.depth - 1
        return FunctionInstance(
            family=f,
            tree_index=rng.integers(0, d, size=n_internal),
            tree_leaf=rng.standard_normal(2 ** spec.depth),
        )
    if f is TaskFamily.SPARSE_PARITY:
        return FunctionInstance(
            family=f, parity_set=np.sort(rng.choice(d, size=spec.k, replace=False))
        )
    if f is TaskFamily.CHAIN_OF_THOUGHT_IO:
        h = spec.hidden_width
        return FunctionInstance(
            family=f,
            w1=rng.standard_normal((h, d)) * np.sqrt(2.0 / h),
            w2=rng.standard_normal(h),
        )
    if f is TaskFamily.VECTOR_MQAR:
        return FunctionInstance(
            family=f,
            keys=_unit_rows(rng.standard_normal((spec.n_pairs, d))),
            values=_unit_rows(rng.standard_normal((spec.n_pairs, d))),
        )
    raise ValueError(f"unknown family {f}")


def _tree_lookup(fn: FunctionInstance, x: np.ndarray) -> float:
    # Heap layout: node j has children 2j+1 (left) and 2j+2 (right);
    # step right when the indexed coordinate is positive.
    node = 0
    n_internal = fn.tree_index.shape[0]
    while node < n_internal:
        coord = fn.tree_index[node]
        node = 2 * node + 2 if x[coord] > 0 else 2 * node + 1
    return float(fn.tree_leaf[node - n_internal])


def evaluate_function(fn: FunctionInstance, x: np.ndarray):
    """Exact label for one input.

    Returns a scalar for most families, an ``(s, y)`` pair for
    chain-of-thought, and the paired value vector for MQAR (``x`` must then
    equal one of the stored keys).
    """
    f = fn.family
    if f in (TaskFamily.LINEAR_REGRESSION, TaskFamily.SPARSE_LINEAR_REGRESSION,
             TaskFamily.ORTHOGONAL_OUTLIER, TaskFamily.MANY_OUTLIER):
        if x.shape[-1] != fn.w.shape[0]:
            raise ValueError(f"x has dim {x.shape[-1]}, expected {fn.w.shape[0]}")
        return float(fn.w @ x)
    if f is TaskFamily.TWO_NN_REGRESSION:
        if x.shape[-1] != fn.w1.shape[1]:
            raise ValueError(f"x has dim {x.shape[-1]}, expected {fn.w1.shape[1]}")
        return float(fn.w2 @ np.maximum(fn.w1 @ x, 0.0))
    if f is TaskFamily.DECISION_TREE:
        if x.shape[-1] <= fn.tree_index.max():
            raise ValueError(f"x has dim {x.shape[-1]}, tree indexes beyond it")
        return _tree_lookup(fn, x)
    if f is TaskFamily.SPARSE_PARITY:
        if x.shape[-1] <= fn.parity_set.max():
            raise ValueError(f"x has dim {x.shape[-1]}, parity set indexes beyond it")
        return float(np.prod(x[fn.parity_set]))
    if f is TaskFamily.CHAIN_OF_THOUGHT_IO:
        if x.shape[-1] != fn.w1.shape[1]:
            raise ValueError(f"x has dim {x.shape[-1]}, expected {fn.w1.shape[1]}")
        s = np.maximum(fn.w1 @ x, 0.0)
        return s, float(fn.w2 @ s)
    if f is TaskFamily.VECTOR_MQAR:
        if x.shape[-1] != fn.keys.shape[1]:
            raise ValueError(f"x has dim {x.shape[-1]}, expected {fn.keys.shape[1]}")
        match = np.flatnonzero(np.all(fn.keys == x, axis=1))
        if match.size == 0:
            raise ValueError("x does not match any stored key")
        return fn.values[match[0]].copy()
    raise ValueError(f"unknown family {f}")


def two_nn_forward(w1: np.ndarray, w2: np.ndarray, xs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Batched two-layer ReLU net: returns hidden activations and outputs."""
    s = np.maximum(xs @ w1.T, 0.0)
    return s, s @ w2
