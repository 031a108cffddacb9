"""Task losses over prediction slots (numpy reference implementation)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from icl_lab.tasks.prompts import PromptInstance
from icl_lab.tasks.spec import TaskFamily, TaskSpec
from icl_lab.tasks.tokens import TokenSequence, build_token_sequence


@dataclass(frozen=True)
class TaskLoss:
    value: float
    scored_examples: int

    @property
    def degenerate(self) -> bool:
        """True when every position was masked out (loss defined as 0)."""
        return self.scored_examples == 0


def slots_per_example(spec: TaskSpec) -> int:
    return 2 if spec.family is TaskFamily.CHAIN_OF_THOUGHT_IO else 1


def _cross_entropy(logits: np.ndarray, class_onehot: np.ndarray) -> np.ndarray:
    # Two-class cross-entropy from raw logits, numerically stable.
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    return logz - (shifted * class_onehot).sum(axis=1)


def example_losses(
    spec: TaskSpec, predictions: np.ndarray, seq: TokenSequence
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-example loss and scored flag, grouping prediction slots.

    Regression-like tasks use the squared error summed over output
    components; chain-of-thought sums its s-slot and y-slot errors into one
    per-example value; parity uses two-class cross-entropy.  Returns arrays of
    length ``n_example_slots``.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    if predictions.ndim == 1:
        predictions = predictions[:, None]
    if predictions.shape != seq.targets.shape:
        raise ValueError(
            f"predictions shape {predictions.shape} does not match "
            f"targets shape {seq.targets.shape}"
        )
    if spec.family is TaskFamily.SPARSE_PARITY:
        slot_err = _cross_entropy(predictions, seq.targets)
    else:
        slot_err = ((predictions - seq.targets) ** 2).sum(axis=1)

    n_examples = int(seq.example_index.max()) + 1
    per_example = np.zeros(n_examples)
    np.add.at(per_example, seq.example_index, np.where(seq.loss_mask, slot_err, 0.0))
    scored = np.zeros(n_examples, dtype=bool)
    scored[seq.example_index[seq.loss_mask]] = True
    return per_example, scored


def task_loss(
    spec: TaskSpec, predictions: np.ndarray, prompt: PromptInstance
) -> TaskLoss:
    """Mean loss over unmasked examples of one prompt.

    A fully masked prompt is degenerate: the loss is defined as 0 and
    ``scored_examples`` is 0 so callers can resample or skip it.
    """
    seq = build_token_sequence(prompt, spec)
    per_example, scored = example_losses(spec, predictions, seq)
    count = int(scored.sum())
    if count == 0:
        return TaskLoss(0.0, 0)
    return TaskLoss(float(per_example[scored].mean()), count)
