"""Meta-training loop: fresh prompts each step, Adam, clipping, curriculum.

The reference loop is sequential and deterministic; prompt generation is
stateless (seeded per iteration and batch index), so runs can resume from a
checkpoint and reproduce an uninterrupted trajectory exactly.  The optimizer
step is the single writer to model parameters.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import torch

from icl_lab.models import ModelConfig, SequenceModel, build_model
from icl_lab.models.config import ArchitectureId
from icl_lab.tasks import (
    TaskFamily,
    TaskSpec,
    build_token_sequence,
    sample_prompt,
    slots_per_example,
)

# Seed-stream tags keep prompt, dataset, and evaluation draws disjoint.
_STREAM_FRESH = 0
_STREAM_DATASET = 1
_STREAM_EVAL = 2

METRICS_SCHEMA = 1


class TrainingDiverged(RuntimeError):
    """Raised when the loss stops being finite; carries a diagnostic snapshot."""

    def __init__(self, iteration: int, loss: float, grad_norm: float, lr: float):
        self.iteration = iteration
        self.loss = loss
        self.grad_norm = grad_norm
        self.lr = lr
        super().__init__(
            f"non-finite loss {loss} at iteration {iteration} "
            f"(grad_norm={grad_norm:.4g}, lr={lr:g})"
        )


@dataclass(frozen=True)
class CurriculumSchedule:
    """Staged growth of input dimension and point count.

    Every ``stage_length`` iterations both quantities advance one stage, for
    ``n_stages`` stages total; per-stage increments default to
    ceil(range / n_stages) so the targets are reached exactly at the last
    stage, but can be pinned explicitly (``d_step``, ``n_step``) to realize
    other schedules.
    """

    d_start: int
    d_end: int
    n_start: int
    n_end: int
    n_stages: int = 15
    stage_length: int = 2000
    d_step: Optional[int] = None
    n_step: Optional[int] = None

    def __post_init__(self) -> None:
        if self.d_start > self.d_end:
            raise ValueError("d_start must not exceed d_end")
        if self.n_start > self.n_end:
            raise ValueError("n_start must not exceed n_end")
        if self.n_stages < 1 or self.stage_length < 1:
            raise ValueError("n_stages and stage_length must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "CurriculumSchedule":
        return cls(**data)

    @classmethod
    def for_task(cls, task: TaskSpec, n_stages: int = 15, stage_length: int = 2000):
        """Default ramp: dimension from min(5, d) and points from ceil(N/4)."""
        return cls(
            d_start=min(5, task.d),
            d_end=task.d,
            n_start=max(2, math.ceil(task.n_points / 4)),
            n_end=task.n_points,
            n_stages=n_stages,
            stage_length=stage_length,
        )


def curriculum_at(schedule: CurriculumSchedule, iteration: int) -> Tuple[int, int]:
    """Current (dimension, point count); clamps at the targets."""
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    stage = min(iteration // schedule.stage_length, schedule.n_stages)
    d_step = schedule.d_step
    if d_step is None:
        d_step = math.ceil((schedule.d_end - schedule.d_start) / schedule.n_stages)
    n_step = schedule.n_step
    if n_step is None:
        n_step = math.ceil((schedule.n_end - schedule.n_start) / schedule.n_stages)
    d_cur = min(schedule.d_start + stage * d_step, schedule.d_end)
    n_cur = min(schedule.n_start + stage * n_step, schedule.n_end)
    return d_cur, n_cur


@dataclass
class TrainConfig:
    task: TaskSpec
    arch: ArchitectureId
    model: ModelConfig
    iterations: int
    batch_size: int = 64
    learning_rate: float = 1e-4
    lr_sweep: Optional[Tuple[float, ...]] = None
    grad_clip_norm: float = 10.0
    curriculum: Optional[CurriculumSchedule] = None
    seed: int = 0
    log_every: int = 50
    eval_every: int = 0        # 0 disables periodic evaluation
    eval_prompts: int = 256
    stop_metric: Optional[str] = None   # "eval_loss" or "eval_accuracy"
    stop_threshold: Optional[float] = None
    dataset_size: Optional[int] = None  # fixed-dataset (epoch) training
    epochs: Optional[int] = None
    ortho_y_denominator: str = "x"

    def __post_init__(self) -> None:
        self.arch = ArchitectureId(self.arch)
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.grad_clip_norm <= 0:
            raise ValueError("grad_clip_norm must be > 0")
        if (self.dataset_size is None) != (self.epochs is None):
            raise ValueError("dataset_size and epochs must be set together")
        if self.dataset_size is not None and self.curriculum is not None:
            raise ValueError("fixed-dataset training does not support a curriculum")
        if self.stop_metric not in (None, "eval_loss", "eval_accuracy"):
            raise ValueError(f"unknown stop_metric {self.stop_metric!r}")

    @property
    def total_iterations(self) -> int:
        if self.dataset_size is None:
            return self.iterations
        steps_per_epoch = math.ceil(self.dataset_size / self.batch_size)
        return steps_per_epoch * self.epochs


@dataclass
class MetricsLog:
    """Per-iteration training records plus periodic evaluation snapshots."""

    records: List[dict] = field(default_factory=list)
    snapshots: List[dict] = field(default_factory=list)

    def write_jsonl(self, path: str) -> None:
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps({"schema": METRICS_SCHEMA, "kind": "train", **rec}) + "\n")
            for snap in self.snapshots:
                fh.write(json.dumps({"schema": METRICS_SCHEMA, "kind": "eval", **snap}) + "\n")

    @classmethod
    def read_jsonl(cls, path: str) -> "MetricsLog":
        log = cls()
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                kind = obj.pop("kind")
                obj.pop("schema", None)
                (log.records if kind == "train" else log.snapshots).append(obj)
        return log


# -- optimizer ---------------------------------------------------------------


@dataclass
class AdamState:
    m: Dict[str, torch.Tensor]
    v: Dict[str, torch.Tensor]
    t: int = 0

    @classmethod
    def for_params(cls, params: Dict[str, torch.Tensor]) -> "AdamState":
        return cls(
            m={k: torch.zeros_like(p) for k, p in params.items()},
            v={k: torch.zeros_like(p) for k, p in params.items()},
        )


def clip_gradients(grads, max_norm: float) -> float:
    """Scale gradients in place to a global L2 norm of ``max_norm``;
    returns the pre-clip norm.  Zero gradients pass through untouched."""
    if max_norm <= 0:
        raise ValueError("max_norm must be > 0")
    grads = list(grads)
    total = math.sqrt(sum(float((g.double() ** 2).sum()) for g in grads))
    if total > max_norm:
        scale = max_norm / total
        with torch.no_grad():
            for g in grads:
                g.mul_(scale)
    return total


def adam_step(
    state: AdamState,
    params: Dict[str, torch.Tensor],
    grads: Dict[str, torch.Tensor],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update with a fixed learning rate."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            m = state.m[name]
            v = state.v[name]
            m.mul_(beta1).add_(g, alpha=1.0 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
            p.addcdiv_(m / bc1, (v / bc2).sqrt().add_(eps), value=-lr)


# -- batching ----------------------------------------------------------------


@dataclass
class Batch:
    tokens: torch.Tensor        # (B, T, W) float32
    predict_at: torch.Tensor    # (P,) long
    targets: torch.Tensor       # (B, P, r) float32
    mask: torch.Tensor          # (B, P) float32, 1 = scored
    slots_per_example: int


def build_batch(prompts, spec: TaskSpec, token_width: int) -> Batch:
    seqs = [build_token_sequence(p, spec, token_width) for p in prompts]
    tokens = np.stack([s.tokens for s in seqs]).astype(np.float32)
    targets = np.stack([s.targets for s in seqs]).astype(np.float32)
    mask = np.stack([s.loss_mask for s in seqs]).astype(np.float32)
    return Batch(
        tokens=torch.from_numpy(tokens),
        predict_at=torch.from_numpy(seqs[0].predict_at),
        targets=torch.from_numpy(targets),
        mask=torch.from_numpy(mask),
        slots_per_example=slots_per_example(spec),
    )


def batch_loss(family: TaskFamily, preds: torch.Tensor, batch: Batch) -> torch.Tensor:
    """Mean over unmasked examples per prompt, then mean over the batch.

    Squared error summed over output components for regression-like tasks;
    two-class cross-entropy for parity.  Fully masked prompts contribute 0.
    """
    if family is TaskFamily.SPARSE_PARITY:
        slot = torch.logsumexp(preds, dim=-1) - (preds * batch.targets).sum(dim=-1)
    else:
        slot = ((preds - batch.targets) ** 2).sum(dim=-1)
    slot = slot * batch.mask
    scored_examples = batch.mask.sum(dim=-1) / batch.slots_per_example
    per_prompt = slot.sum(dim=-1) / scored_examples.clamp_min(1.0)
    return per_prompt.mean()


# -- the loop ----------------------------------------------------------------


@dataclass
class TrainResult:
    model: SequenceModel
    metrics: MetricsLog
    adam: AdamState
    iterations_run: int
    stopped_early: bool = False


def _prompt_rng(seed: int, stream: int, *key: int) -> np.random.Generator:
    return np.random.default_rng((seed, stream, *key))


def _fresh_prompts(config: TrainConfig, spec: TaskSpec, iteration: int, count: int):
    return [
        sample_prompt(
            spec,
            _prompt_rng(config.seed, _STREAM_FRESH, iteration, j),
            ortho_y_denominator=config.ortho_y_denominator,
        )
        for j in range(count)
    ]


def _dataset_prompts(config: TrainConfig, iteration: int):
    steps_per_epoch = math.ceil(config.dataset_size / config.batch_size)
    epoch = iteration // steps_per_epoch
    step = iteration % steps_per_epoch
    order = _prompt_rng(config.seed, _STREAM_DATASET, epoch).permutation(config.dataset_size)
    idx = order[step * config.batch_size : (step + 1) * config.batch_size]
    return [
        sample_prompt(
            config.task,
            _prompt_rng(config.seed, _STREAM_DATASET, 0, int(i)),
            ortho_y_denominator=config.ortho_y_denominator,
        )
        for i in idx
    ]


def make_model(config: TrainConfig) -> SequenceModel:
    """Build the model for a training config, sized to the task."""
    task = config.task
    needed = task.sequence_length
    model_cfg = config.model
    if model_cfg.max_seq_len < needed:
        model_cfg = dataclasses.replace(model_cfg, max_seq_len=needed)
    return build_model(
        config.arch, model_cfg, task.token_width, task.output_width, seed=config.seed
    )


def train(
    config: TrainConfig,
    model: Optional[SequenceModel] = None,
    adam: Optional[AdamState] = None,
    start_iteration: int = 0,
    on_record: Optional[Callable[[dict], None]] = None,
    on_snapshot: Optional[Callable[[dict, SequenceModel], None]] = None,
    checkpoint_every: int = 0,
    on_checkpoint: Optional[Callable[[SequenceModel, AdamState, int], None]] = None,
) -> TrainResult:
    """Run the meta-training loop.

    Each iteration samples a fresh batch of prompts at the current curriculum
    size (or draws from the fixed dataset in epoch mode), takes one clipped
    Adam step on the masked mean loss, and logs.  Deterministic for a given
    config: prompt draws, initialization, and updates all derive from
    ``config.seed``.
    """
    from icl_lab.evaluation import evaluate  # local import to avoid a cycle

    task = config.task
    if model is None:
        model = make_model(config)
    params = dict(model.named_parameters())
    if adam is None:
        adam = AdamState.for_params(params)
    metrics = MetricsLog()
    total = config.total_iterations
    start_time = time.monotonic()
    stopped_early = False
    grad_norm = 0.0
    iteration = start_iteration

    for iteration in range(start_iteration, total):
        if config.dataset_size is not None:
            spec_cur = task
            d_cur, n_cur = task.d, task.n_points
            prompts = _dataset_prompts(config, iteration)
        else:
            if config.curriculum is not None:
                d_cur, n_cur = curriculum_at(config.curriculum, iteration)
            else:
                d_cur, n_cur = task.d, task.n_points
            spec_cur = task if (d_cur, n_cur) == (task.d, task.n_points) else task.resized(d_cur, n_cur)
            prompts = _fresh_prompts(config, spec_cur, iteration, config.batch_size)

        batch = build_batch(prompts, spec_cur, task.token_width)
        preds = model(batch.tokens, batch.predict_at)
        loss = batch_loss(task.family, preds, batch)
        loss_val = loss.item()
        if not math.isfinite(loss_val):
            raise TrainingDiverged(iteration, loss_val, grad_norm, config.learning_rate)

        for p in params.values():
            p.grad = None
        loss.backward()
        grads = {k: p.grad for k, p in params.items()}
        grad_norm = clip_gradients(grads.values(), config.grad_clip_norm)
        adam_step(adam, params, grads, config.learning_rate)

        if config.log_every and (iteration % config.log_every == 0 or iteration == total - 1):
            record = {
                "iteration": iteration,
                "loss": loss_val,
                "grad_norm": grad_norm,
                "d_cur": d_cur,
                "n_cur": n_cur,
                "elapsed_s": time.monotonic() - start_time,
            }
            metrics.records.append(record)
            if on_record:
                on_record(record)

        if (
            checkpoint_every
            and on_checkpoint
            and (iteration + 1) % checkpoint_every == 0
        ):
            on_checkpoint(model, adam, iteration + 1)

        is_last = iteration == total - 1
        if config.eval_every and ((iteration + 1) % config.eval_every == 0 or is_last):
            report = evaluate(
                model,
                task,
                n_prompts=config.eval_prompts,
                seed=(config.seed, _STREAM_EVAL, iteration + 1),
                ortho_y_denominator=config.ortho_y_denominator,
            )
            snap = {"iteration": iteration + 1, "eval_loss": report.overall}
            if task.family is TaskFamily.SPARSE_PARITY:
                snap["eval_accuracy"] = report.task_metric["accuracy"]
            metrics.snapshots.append(snap)
            if on_snapshot:
                on_snapshot(snap, model)
            if config.stop_metric and config.stop_threshold is not None:
                value = snap.get(config.stop_metric)
                if value is not None:
                    crossed = (
                        value >= config.stop_threshold
                        if "accuracy" in config.stop_metric
                        else value <= config.stop_threshold
                    )
                    if crossed:
                        stopped_early = True
                        break

    iterations_run = (iteration + 1 - start_iteration) if total > start_iteration else 0
    return TrainResult(
        model=model,
        metrics=metrics,
        adam=adam,
        iterations_run=iterations_run,
        stopped_early=stopped_early,
    )
