"""Prompt sampling: inputs, labels, and outlier replacement."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from icl_lab.tasks.functions import FunctionInstance, evaluate_function, sample_function
from icl_lab.tasks.spec import TaskFamily, TaskSpec


@dataclass
class PromptInstance:
    """A realized prompt: sampled function, inputs, and label payloads.

    ``xs`` holds the x-position token contents (outlier replacements already
    applied).  ``ys`` holds the label-token payloads, one row per example:
    scalar tasks store shape (N, 1); outlier and MQAR tasks store the full
    d-wide payload.  ``outlier_mask`` marks replaced dummy pairs, which are
    excluded from every loss.  For MQAR the first ``n_pairs`` rows are keys
    with their values and the remaining rows are queries with their targets.
    """

    fn: FunctionInstance
    xs: np.ndarray                      # (N, d)
    ys: np.ndarray                      # (N, label_width)
    outlier_mask: np.ndarray            # (N,) bool
    s_hidden: Optional[np.ndarray] = None  # (N, h) chain-of-thought hidden features

    @property
    def n_points(self) -> int:
        return self.xs.shape[0]


def _project_out(vec: np.ndarray, w: np.ndarray) -> np.ndarray:
    return vec - (vec @ w) / (w @ w) * w


def sample_prompt(
    spec: TaskSpec,
    rng: np.random.Generator,
    ortho_y_denominator: str = "x",
) -> PromptInstance:
    """Sample one prompt: function, i.i.d. inputs, labels, outlier dummies.

    Inputs are Gaussian for regression and chain-of-thought, uniform on
    {-1, 1}^d for parity, and unit-sphere for MQAR.  Orthogonal-outlier pairs
    are replaced with probability p by
    ``((a_x u + b_x v)/(a_x^2 + b_x^2), (a_y u + b_y v)/(a_x^2 + b_x^2))``
    with u, v the residuals of two Gaussian draws projected off w; the
    y-denominator reuses the x coefficients as printed in the source
    construction (pass ``ortho_y_denominator="y"`` for the a_y^2 + b_y^2
    variant).  Many-outlier pairs become (all-ones, one-hot) with
    probability p.  Draw order is fixed, so (spec, seed) determines the
    prompt bit-for-bit.
    """
    fn = sample_function(spec, rng)
    f = spec.family
    n = spec.n_points
    d = spec.d
    mask = np.zeros(n, dtype=bool)

    if f is TaskFamily.VECTOR_MQAR:
        query_idx = rng.choice(spec.n_pairs, size=spec.n_queries, replace=False)
        xs = np.concatenate([fn.keys, fn.keys[query_idx]], axis=0)
        ys = np.concatenate([fn.values, fn.values[query_idx]], axis=0)
        return PromptInstance(fn=fn, xs=xs, ys=ys.copy(), outlier_mask=mask)

    if f is TaskFamily.SPARSE_PARITY:
        xs = rng.choice(np.array([-1.0, 1.0]), size=(n, d))
    else:
        xs = rng.standard_normal((n, d))

    if f is TaskFamily.CHAIN_OF_THOUGHT_IO:
        h = spec.hidden_width
        s_hidden = np.empty((n, h))
        ys = np.empty((n, 1))
        for i in range(n):
            s, y = evaluate_function(fn, xs[i])
            s_hidden[i] = s
            ys[i, 0] = y
        return PromptInstance(fn=fn, xs=xs, ys=ys, outlier_mask=mask, s_hidden=s_hidden)

    labels = np.array([evaluate_function(fn, xs[i]) for i in range(n)])

    if f is TaskFamily.ORTHOGONAL_OUTLIER:
        if ortho_y_denominator not in ("x", "y"):
            raise ValueError("ortho_y_denominator must be 'x' or 'y'")
        w = fn.w
        u = _project_out(rng.standard_normal(d), w)
        v = _project_out(rng.standard_normal(d), w)
        mask = rng.random(n) < spec.outlier_p
        coeffs = rng.standard_normal((n, 4))  # a_x, b_x, a_y, b_y per pair
        ys_wide = np.zeros((n, d))
        ys_wide[:, 0] = labels
        for i in np.flatnonzero(mask):
            a_x, b_x, a_y, b_y = coeffs[i]
            denom_x = a_x ** 2 + b_x ** 2
            denom_y = denom_x if ortho_y_denominator == "x" else a_y ** 2 + b_y ** 2
            xs[i] = (a_x * u + b_x * v) / denom_x
            ys_wide[i] = (a_y * u + b_y * v) / denom_y
        return PromptInstance(fn=fn, xs=xs, ys=ys_wide, outlier_mask=mask)

    if f is TaskFamily.MANY_OUTLIER:
        mask = rng.random(n) < spec.outlier_p
        ys_wide = np.zeros((n, d))
        ys_wide[:, 0] = labels
        xs[mask] = 1.0
        ys_wide[mask] = 0.0
        ys_wide[mask, 0] = 1.0  # one-hot label token replaces the padded scalar
        return PromptInstance(fn=fn, xs=xs, ys=ys_wide, outlier_mask=mask)

    return PromptInstance(fn=fn, xs=xs, ys=labels[:, None], outlier_mask=mask)
