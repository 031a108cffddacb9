"""Versioned binary checkpoint container.

A checkpoint is a zip of named float64 arrays plus a JSON manifest recording
the architecture, model configuration, widths, init seed, and iteration
count.  Optimizer moments and generator states ride along under reserved
prefixes so a training run can resume exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
import torch

from icl_lab.models.config import ArchitectureId, ModelConfig
from icl_lab.models.model import SequenceModel, build_model

FORMAT_VERSION = 1
_PARAM = "param/"
_ADAM_M = "adam_m/"
_ADAM_V = "adam_v/"


@dataclass
class Checkpoint:
    manifest: dict
    params: Dict[str, np.ndarray]
    adam_m: Dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: Dict[str, np.ndarray] = field(default_factory=dict)
    adam_t: int = 0
    numpy_rng_state: Optional[dict] = None
    torch_rng_state: Optional[np.ndarray] = None


def save_checkpoint(
    path: str,
    model: SequenceModel,
    iteration: int,
    seed: int,
    adam_m: Optional[Dict[str, torch.Tensor]] = None,
    adam_v: Optional[Dict[str, torch.Tensor]] = None,
    adam_t: int = 0,
    numpy_rng_state: Optional[dict] = None,
    torch_rng_state: Optional[torch.Tensor] = None,
) -> None:
    manifest = {
        "format_version": FORMAT_VERSION,
        "architecture": model.arch.value,
        "model_config": model.cfg.to_dict(),
        "in_width": model.in_width,
        "out_width": model.out_width,
        "init_seed": model.init_seed,
        "seed": seed,
        "iteration": iteration,
        "adam_t": adam_t,
    }
    if numpy_rng_state is not None:
        manifest["numpy_rng_state"] = numpy_rng_state
    arrays = {"manifest": np.frombuffer(json.dumps(manifest).encode(), dtype=np.uint8)}
    for name, p in model.named_parameters():
        arrays[_PARAM + name] = p.detach().cpu().double().numpy()
    for prefix, table in ((_ADAM_M, adam_m), (_ADAM_V, adam_v)):
        if table:
            for name, t in table.items():
                arrays[prefix + name] = t.detach().cpu().double().numpy()
    if torch_rng_state is not None:
        arrays["torch_rng_state"] = torch_rng_state.numpy()
    np.savez(path, **arrays)


def load_checkpoint(path: str) -> Checkpoint:
    with np.load(path) as data:
        manifest = json.loads(bytes(data["manifest"]).decode())
        if manifest.get("format_version") != FORMAT_VERSION:
            raise ValueError(
                f"unsupported checkpoint format {manifest.get('format_version')!r}"
            )
        ckpt = Checkpoint(manifest=manifest, params={}, adam_t=manifest.get("adam_t", 0))
        for key in data.files:
            if key.startswith(_PARAM):
                ckpt.params[key[len(_PARAM):]] = data[key]
            elif key.startswith(_ADAM_M):
                ckpt.adam_m[key[len(_ADAM_M):]] = data[key]
            elif key.startswith(_ADAM_V):
                ckpt.adam_v[key[len(_ADAM_V):]] = data[key]
        if "torch_rng_state" in data.files:
            ckpt.torch_rng_state = data["torch_rng_state"]
        ckpt.numpy_rng_state = manifest.get("numpy_rng_state")
    return ckpt


def restore_model(ckpt: Checkpoint, dtype: torch.dtype = torch.float32) -> SequenceModel:
    """Rebuild the model named by a checkpoint manifest and load its weights."""
    cfg = ModelConfig.from_dict(ckpt.manifest["model_config"])
    model = build_model(
        ArchitectureId(ckpt.manifest["architecture"]),
        cfg,
        ckpt.manifest["in_width"],
        ckpt.manifest["out_width"],
        seed=ckpt.manifest.get("init_seed", 0),
    )
    model = model.to(dtype)
    state = {name: torch.from_numpy(arr).to(dtype) for name, arr in ckpt.params.items()}
    missing = set(dict(model.named_parameters())) ^ set(state)
    if missing:
        raise ValueError(f"checkpoint parameters do not match model: {sorted(missing)}")
    model.load_state_dict(state, strict=False)  # buffers (masks) are not stored
    return model
