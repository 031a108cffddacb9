"""Experiment configuration: flat dotted-key files, presets, resolution.

Config files are JSON objects whose keys are dotted paths
(``task.family``, ``model.embed_dim``, ``train.learning_rate``).  A named
preset supplies defaults; explicit keys win.  ``train.curriculum`` is
either ``"auto"`` (derived from the task), ``"none"``, or a group of
``train.curriculum.*`` keys.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

from icl_lab.models import ArchitectureId, ModelConfig
from icl_lab.tasks import TaskFamily, TaskSpec, default_task
from icl_lab.training import CurriculumSchedule, TrainConfig

LR_SWEEP_DEFAULT = (5e-5, 1e-4, 2e-4, 4e-4)
# Four log-spaced points in [1e-4, 1e-2], the fixed-dataset retrieval sweep.
MQAR_LR_SWEEP = tuple(10 ** e for e in (-4.0, -10.0 / 3, -8.0 / 3, -2.0))
# Depth/width trade-off at a fixed parameter budget: (n_layers, embed_dim).
MAMBA_SIZE_ABLATION = ((4, 128), (2, 192), (8, 96), (16, 64))


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field."""


@dataclass
class TrainParams:
    iterations: int = 20_000
    batch_size: int = 64
    learning_rate: float = 1e-4
    lr_sweep: Optional[tuple] = None
    grad_clip_norm: float = 10.0
    seed: int = 0
    log_every: int = 50
    eval_every: int = 2000
    eval_prompts: int = 256
    checkpoint_every: int = 0
    stop_metric: Optional[str] = None
    stop_threshold: Optional[float] = None
    dataset_size: Optional[int] = None
    epochs: Optional[int] = None
    ortho_y_denominator: str = "x"
    curriculum: object = "auto"  # "auto" | "none" | CurriculumSchedule

    @classmethod
    def from_dict(cls, data: dict) -> "TrainParams":
        data = dict(data)
        if isinstance(data.get("curriculum"), dict):
            data["curriculum"] = CurriculumSchedule.from_dict(data["curriculum"])
        if isinstance(data.get("lr_sweep"), list):
            data["lr_sweep"] = tuple(data["lr_sweep"])
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown train fields: {sorted(unknown)}")
        params = cls(**data)
        if params.curriculum not in ("auto", "none") and not isinstance(
            params.curriculum, CurriculumSchedule
        ):
            raise ConfigError(f"train.curriculum: bad value {params.curriculum!r}")
        return params


@dataclass
class EvalParams:
    n_prompts: int = 1280
    seed: int = 10_000

    @classmethod
    def from_dict(cls, data: dict) -> "EvalParams":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown eval fields: {sorted(unknown)}")
        return cls(**data)


@dataclass
class ExperimentConfig:
    task: TaskSpec
    arch: ArchitectureId
    model: ModelConfig
    train: TrainParams = field(default_factory=TrainParams)
    eval: EvalParams = field(default_factory=EvalParams)
    out_dir: Optional[str] = None
    preset: Optional[str] = None

    def resolved_curriculum(self) -> Optional[CurriculumSchedule]:
        if self.train.curriculum == "none":
            return None
        if self.train.curriculum == "auto":
            if self.train.dataset_size is not None:
                return None
            if self.task.family is TaskFamily.VECTOR_MQAR:
                return None
            return CurriculumSchedule.for_task(self.task)
        return self.train.curriculum

    def to_train_config(self, learning_rate: Optional[float] = None) -> TrainConfig:
        t = self.train
        return TrainConfig(
            task=self.task,
            arch=self.arch,
            model=self.model,
            iterations=t.iterations,
            batch_size=t.batch_size,
            learning_rate=learning_rate or t.learning_rate,
            lr_sweep=t.lr_sweep,
            grad_clip_norm=t.grad_clip_norm,
            curriculum=self.resolved_curriculum(),
            seed=t.seed,
            log_every=t.log_every,
            eval_every=t.eval_every,
            eval_prompts=t.eval_prompts,
            stop_metric=t.stop_metric,
            stop_threshold=t.stop_threshold,
            dataset_size=t.dataset_size,
            epochs=t.epochs,
            ortho_y_denominator=t.ortho_y_denominator,
        )

    def to_flat(self) -> dict:
        flat = {"arch": self.arch.value}
        if self.preset:
            flat["preset"] = self.preset
        if self.out_dir:
            flat["out_dir"] = self.out_dir
        for key, value in self.task.to_dict().items():
            flat[f"task.{key}"] = value
        for key, value in self.model.to_dict().items():
            if value is not None:
                flat[f"model.{key}"] = value
        for f in dataclasses.fields(TrainParams):
            value = getattr(self.train, f.name)
            if value is None:
                continue
            if isinstance(value, CurriculumSchedule):
                for ck, cv in value.to_dict().items():
                    if cv is not None:
                        flat[f"train.curriculum.{ck}"] = cv
            elif isinstance(value, tuple):
                flat[f"train.{f.name}"] = list(value)
            else:
                flat[f"train.{f.name}"] = value
        for f in dataclasses.fields(EvalParams):
            flat[f"eval.{f.name}"] = getattr(self.eval, f.name)
        return flat

    def content_hash(self) -> str:
        flat = {k: v for k, v in self.to_flat().items() if k != "out_dir"}
        blob = json.dumps(flat, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    # Fields that do not alter the per-iteration trajectory; a checkpoint may
    # be resumed under a config differing only in these (e.g. more iterations).
    _RESUME_NEUTRAL = (
        "out_dir", "preset", "train.iterations", "train.epochs",
        "train.log_every", "train.eval_every", "train.eval_prompts",
        "train.checkpoint_every", "train.stop_metric", "train.stop_threshold",
        "eval.n_prompts", "eval.seed",
    )

    def resume_hash(self) -> str:
        flat = {
            k: v for k, v in self.to_flat().items() if k not in self._RESUME_NEUTRAL
        }
        blob = json.dumps(flat, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _unflatten(flat: dict) -> dict:
    nested: dict = {}
    for key, value in flat.items():
        parts = key.split(".")
        node = nested
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{key}: conflicts with scalar key")
        node[parts[-1]] = value
    return nested


# Named presets as flat dotted dicts; user keys override these.
PRESETS: dict = {}


def _size_preset(name: str, n_layers: int, embed_dim: int) -> None:
    PRESETS[name] = {
        "model.n_layers": n_layers,
        "model.embed_dim": embed_dim,
        "model.n_heads": 8,
        "train.iterations": 500_000,
        "train.batch_size": 64,
        "train.learning_rate": 1e-4,
        "train.lr_sweep": list(LR_SWEEP_DEFAULT),
        "train.curriculum": "auto",
    }


_size_preset("paper-standard", 12, 768)
_size_preset("paper-small", 8, 512)
_size_preset("paper-x-small", 4, 256)
_size_preset("paper-xx-small", 2, 128)


def _cot_preset(name: str, n_layers: int, embed_dim: int, n_heads: int) -> None:
    PRESETS[name] = {
        "task.family": "ChainOfThoughtIO",
        "task.d": 10,
        "task.n_points": 101,
        "task.hidden_width": 8,
        "model.n_layers": n_layers,
        "model.embed_dim": embed_dim,
        "model.n_heads": n_heads,
        "train.iterations": 500_000,
        "train.batch_size": 64,
        "train.learning_rate": 1e-4,
        "train.curriculum": "auto",
    }


_cot_preset("cot-standard", 12, 256, 8)
_cot_preset("cot-small", 6, 128, 4)
_cot_preset("cot-tiny", 3, 64, 2)

PRESETS["mqar-paper"] = {
    "task.family": "VectorMQAR",
    "task.d": 20,
    "task.n_points": 48,
    "task.n_pairs": 32,
    "task.n_queries": 16,
    "model.n_layers": 4,
    "model.embed_dim": 64,
    "model.n_heads": 8,
    "train.dataset_size": 300_000,
    "train.epochs": 64,
    "train.iterations": 0,
    "train.batch_size": 64,
    "train.learning_rate": 1e-3,
    "train.lr_sweep": list(MQAR_LR_SWEEP),
    "train.curriculum": "none",
}

PRESETS["mamba-ablation"] = {
    "arch": "Mamba",
    "model.n_layers": MAMBA_SIZE_ABLATION[0][0],
    "model.embed_dim": MAMBA_SIZE_ABLATION[0][1],
    "model.n_heads": 8,
    "train.curriculum": "auto",
}

PRESETS["desk"] = {
    "model.n_layers": 2,
    "model.embed_dim": 128,
    "model.n_heads": 8,
    "train.iterations": 20_000,
    "train.batch_size": 64,
    "train.learning_rate": 1e-4,
    "train.eval_every": 2000,
    "train.eval_prompts": 256,
    "train.curriculum": "auto",
}


def living_presets_doc() -> str:
    lines = ["presets:"]
    for name in sorted(PRESETS):
        entry = PRESETS[name]
        layers = entry.get("model.n_layers")
        dim = entry.get("model.embed_dim")
        size = f"{layers} layers x {dim} dim" if layers else ""
        lines.append(f"  {name:<16} {size}")
    return "\n".join(lines)


def resolve_config(flat: dict, preset: Optional[str] = None) -> ExperimentConfig:
    """Merge preset defaults under explicit keys and build the config."""
    flat = dict(flat)
    preset = preset or flat.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(
                f"preset: unknown name {preset!r} (have {sorted(PRESETS)})"
            )
        flat = {**PRESETS[preset], **flat}
        flat["preset"] = preset

    nested = _unflatten(flat)
    task_data = nested.get("task")
    if not task_data or "family" not in task_data:
        raise ConfigError("task.family: required")
    if set(task_data) == {"family"}:
        task = default_task(task_data["family"])
    else:
        try:
            task = TaskSpec.from_dict(task_data)
        except ValueError as err:
            raise ConfigError(f"task: {err}") from err

    arch_name = nested.get("arch")
    if not arch_name:
        raise ConfigError("arch: required")
    try:
        arch = ArchitectureId(arch_name)
    except ValueError as err:
        raise ConfigError(f"arch: unknown architecture {arch_name!r}") from err

    model_data = dict(nested.get("model", {}))
    if "n_layers" not in model_data or "embed_dim" not in model_data:
        raise ConfigError("model.n_layers and model.embed_dim: required")
    model_data.setdefault("max_seq_len", task.sequence_length)
    try:
        model = ModelConfig.from_dict(model_data)
    except ValueError as err:
        raise ConfigError(f"model: {err}") from err

    try:
        train = TrainParams.from_dict(nested.get("train", {}))
    except (TypeError, ValueError) as err:
        raise ConfigError(f"train: {err}") from err
    try:
        eval_params = EvalParams.from_dict(nested.get("eval", {}))
    except (TypeError, ValueError) as err:
        raise ConfigError(f"eval: {err}") from err

    leftover = set(nested) - {"task", "arch", "model", "train", "eval", "out_dir", "preset"}
    if leftover:
        raise ConfigError(f"unknown top-level keys: {sorted(leftover)}")

    config = ExperimentConfig(
        task=task,
        arch=arch,
        model=model,
        train=train,
        eval=eval_params,
        out_dir=nested.get("out_dir"),
        preset=preset,
    )
    # Constructing the training config surfaces cross-field errors early.
    try:
        config.to_train_config()
    except ValueError as err:
        raise ConfigError(f"train: {err}") from err
    return config


def load_config(path: str, preset: Optional[str] = None) -> ExperimentConfig:
    with open(path) as fh:
        try:
            flat = json.load(fh)
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: not valid JSON ({err})") from err
    if not isinstance(flat, dict):
        raise ConfigError(f"{path}: expected a JSON object of dotted keys")
    return resolve_config(flat, preset=preset)


def save_config(config: ExperimentConfig, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(config.to_flat(), fh, indent=2, sort_keys=True)
        fh.write("\n")
