"""Evaluation protocol: fresh prompts, per-position loss curves, task metrics."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np
import torch

from icl_lab.models import SequenceModel
from icl_lab.tasks import (
    TaskFamily,
    TaskSpec,
    build_token_sequence,
    example_losses,
    sample_prompt,
)

DEFAULT_EVAL_PROMPTS = 1280

SeedLike = Union[int, Sequence[int]]


@dataclass
class EvalReport:
    """Aggregate of fresh-prompt evaluation for one (model, task) pair.

    ``per_position`` holds the mean loss of each in-context example slot
    (each query, for MQAR), averaged over the prompts where that slot was
    scored; ``overall`` is the unmasked-count-weighted mean of the same
    values.  ``task_metric`` carries parity accuracy or MQAR mean squared
    error where applicable.
    """

    family: str
    model_id: str
    n_prompts: int
    seed: Union[int, tuple]
    per_position: List[float]
    per_position_counts: List[int]
    overall: float
    task_metric: dict = field(default_factory=dict)
    degenerate_resampled: int = 0

    def to_json(self, path: str) -> None:
        payload = dataclasses.asdict(self)
        payload["seed"] = list(self.seed) if isinstance(self.seed, tuple) else self.seed
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)

    @classmethod
    def from_json(cls, path: str) -> "EvalReport":
        with open(path) as fh:
            payload = json.load(fh)
        if isinstance(payload.get("seed"), list):
            payload["seed"] = tuple(payload["seed"])
        return cls(**payload)

    def write_curve_csv(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write("position,mean_loss\n")
            for i, value in enumerate(self.per_position):
                fh.write(f"{i},{value!r}\n")


def read_curve_csv(path: str) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "position,mean_loss":
            raise ValueError(f"unexpected curve header {header!r}")
        return np.array([float(line.split(",")[1]) for line in fh if line.strip()])


def _seed_tuple(seed: SeedLike) -> tuple:
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(s) for s in seed)


def _model_dtype(model) -> torch.dtype:
    for p in model.parameters():
        return p.dtype
    return torch.float64


def model_predictions(
    model: SequenceModel, tokens: np.ndarray, predict_at: np.ndarray
) -> np.ndarray:
    """Forward a numpy token batch through a model without mutating it."""
    dtype = _model_dtype(model)
    with torch.inference_mode():
        out = model(
            torch.from_numpy(np.ascontiguousarray(tokens)).to(dtype),
            torch.from_numpy(np.ascontiguousarray(predict_at)),
        )
    return out.double().numpy()


def _sample_scoreable(
    spec: TaskSpec, base: tuple, index: int, ortho_y_denominator: str
):
    """Sample a prompt, resampling the rare fully-masked degenerate ones."""
    for attempt in range(1000):
        rng = np.random.default_rng((*base, index, attempt))
        prompt = sample_prompt(spec, rng, ortho_y_denominator=ortho_y_denominator)
        if not prompt.outlier_mask.all():
            return prompt, attempt
    raise RuntimeError("could not sample a scoreable prompt in 1000 attempts")


def evaluate(
    model: SequenceModel,
    spec: TaskSpec,
    n_prompts: int = DEFAULT_EVAL_PROMPTS,
    seed: SeedLike = 0,
    batch_size: int = 64,
    ortho_y_denominator: str = "x",
) -> EvalReport:
    """Mean per-position loss over fresh prompts from the training distribution."""
    base = _seed_tuple(seed)
    width = model.in_width
    if width < spec.token_width:
        raise ValueError(
            f"model read-in width {width} below task token width {spec.token_width}"
        )
    n_slots = spec.n_example_slots
    loss_sum = np.zeros(n_slots)
    count = np.zeros(n_slots, dtype=np.int64)
    correct_sum = 0
    correct_count = 0
    resampled = 0

    done = 0
    while done < n_prompts:
        chunk = min(batch_size, n_prompts - done)
        prompts = []
        for j in range(chunk):
            prompt, attempt = _sample_scoreable(spec, base, done + j, ortho_y_denominator)
            resampled += attempt
            prompts.append(prompt)
        seqs = [build_token_sequence(p, spec, width) for p in prompts]
        tokens = np.stack([s.tokens for s in seqs])
        preds = model_predictions(model, tokens, seqs[0].predict_at)
        for p, s, pred in zip(prompts, seqs, preds):
            per_example, scored = example_losses(spec, pred, s)
            loss_sum[scored] += per_example[scored]
            count[scored] += 1
            if spec.family is TaskFamily.SPARSE_PARITY:
                cls_true = s.targets.argmax(axis=1)
                cls_pred = pred.argmax(axis=1)
                correct_sum += int(((cls_true == cls_pred) & s.loss_mask).sum())
                correct_count += int(s.loss_mask.sum())
        done += chunk

    per_position = np.divide(
        loss_sum, count, out=np.full(n_slots, np.nan), where=count > 0
    )
    overall = float(loss_sum.sum() / count.sum())
    metric = {}
    if spec.family is TaskFamily.SPARSE_PARITY:
        metric["accuracy"] = correct_sum / correct_count
    elif spec.family is TaskFamily.VECTOR_MQAR:
        metric["mse"] = overall
    arch = getattr(model, "arch", "model")
    return EvalReport(
        family=spec.family.value,
        model_id=getattr(arch, "value", str(arch)),
        n_prompts=n_prompts,
        seed=base if len(base) > 1 else base[0],
        per_position=per_position.tolist(),
        per_position_counts=count.tolist(),
        overall=overall,
        task_metric=metric,
        degenerate_resampled=resampled,
    )


def parity_accuracy(
    model: SequenceModel,
    spec: TaskSpec,
    n_prompts: int = DEFAULT_EVAL_PROMPTS,
    seed: SeedLike = 0,
) -> float:
    """Fraction of correct argmax class predictions over unmasked positions."""
    if spec.family is not TaskFamily.SPARSE_PARITY:
        raise ValueError("parity_accuracy requires a SparseParity task")
    return evaluate(model, spec, n_prompts=n_prompts, seed=seed).task_metric["accuracy"]


def convergence_time(
    snapshots,
    threshold: float,
    max_iter: int,
    metric: str = "eval_accuracy",
) -> int:
    """First snapshot iteration crossing the threshold.

    Accuracy-like metrics cross upward (>=), loss-like metrics downward (<=).
    Returns ``max_iter`` as the failed-to-converge sentinel.
    """
    if hasattr(snapshots, "snapshots"):
        snapshots = snapshots.snapshots
    snapshots = list(snapshots)
    if not snapshots:
        raise ValueError("empty snapshot log")
    upward = "accuracy" in metric
    for snap in sorted(snapshots, key=lambda s: s["iteration"]):
        if metric not in snap:
            continue
        value = snap[metric]
        if (value >= threshold) if upward else (value <= threshold):
            return int(snap["iteration"])
    return max_iter
