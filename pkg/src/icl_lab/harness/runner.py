"""Experiment orchestration: run, persist artifacts, sweep."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from typing import List, Optional

from icl_lab.evaluation import EvalReport, evaluate
from icl_lab.flops import flops_report
from icl_lab.harness.config import (
    LR_SWEEP_DEFAULT,
    MAMBA_SIZE_ABLATION,
    ConfigError,
    ExperimentConfig,
    save_config,
)
from icl_lab.models import ArchitectureId, load_checkpoint, restore_model, save_checkpoint
from icl_lab.tasks import TaskFamily
from icl_lab.training import AdamState, MetricsLog, TrainingDiverged, make_model, train

OUTPUT_ROOT_ENV = "ICL_LAB_OUT"
MANIFEST_SCHEMA = 1

CONFIG_FILE = "config.json"
MANIFEST_FILE = "manifest.json"
METRICS_FILE = "metrics.jsonl"
EVAL_FILE = "eval.json"
CURVE_FILE = "curve.csv"
FLOPS_FILE = "flops.json"
CHECKPOINT_FILE = "checkpoint.npz"


@dataclass
class RunResult:
    status: str                 # "completed" | "aborted" | "dry-run" | "reused"
    out_dir: str
    config: ExperimentConfig
    final_eval: Optional[EvalReport] = None
    metrics: Optional[MetricsLog] = None
    error: Optional[str] = None

    @property
    def final_metric(self) -> Optional[float]:
        if self.final_eval is None:
            return None
        if "accuracy" in self.final_eval.task_metric:
            return self.final_eval.task_metric["accuracy"]
        return self.final_eval.overall


def default_out_dir(config: ExperimentConfig) -> str:
    root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
    name = (
        f"{config.task.family.value}-{config.arch.value}"
        f"-seed{config.train.seed}-{config.content_hash()[:8]}"
    )
    return os.path.join(root, name)


def _write_manifest(out_dir: str, payload: dict) -> None:
    with open(os.path.join(out_dir, MANIFEST_FILE), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(out_dir: str) -> dict:
    with open(os.path.join(out_dir, MANIFEST_FILE)) as fh:
        return json.load(fh)


def _completed_result(config: ExperimentConfig, out_dir: str) -> RunResult:
    return RunResult(
        status="reused",
        out_dir=out_dir,
        config=config,
        final_eval=EvalReport.from_json(os.path.join(out_dir, EVAL_FILE)),
        metrics=MetricsLog.read_jsonl(os.path.join(out_dir, METRICS_FILE)),
    )


def run_experiment(
    config: ExperimentConfig,
    out_dir: Optional[str] = None,
    dry_run: bool = False,
    resume: bool = False,
    reuse_existing: bool = False,
    quiet: bool = True,
) -> RunResult:
    """Train per config, evaluate, and persist every artifact.

    Re-running with the same config and seed reproduces identical metrics
    (timestamps aside); with ``reuse_existing`` a completed matching run is
    loaded instead of recomputed.  A non-finite loss aborts with a snapshot
    in the manifest.
    """
    out_dir = out_dir or config.out_dir or default_out_dir(config)
    os.makedirs(out_dir, exist_ok=True)
    config = dataclasses.replace(config, out_dir=out_dir)

    manifest_path = os.path.join(out_dir, MANIFEST_FILE)
    if reuse_existing and os.path.exists(manifest_path):
        manifest = read_manifest(out_dir)
        if (
            manifest.get("status") == "completed"
            and manifest.get("config_hash") == config.content_hash()
        ):
            return _completed_result(config, out_dir)

    save_config(config, os.path.join(out_dir, CONFIG_FILE))
    train_config = config.to_train_config()
    task = config.task

    report = flops_report(
        config.arch,
        config.model,
        L=task.sequence_length,
        batch_size=train_config.batch_size,
        iterations=train_config.total_iterations,
    )
    with open(os.path.join(out_dir, FLOPS_FILE), "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")

    base_manifest = {
        "schema": MANIFEST_SCHEMA,
        "config": config.to_flat(),
        "config_hash": config.content_hash(),
        "train_seed": config.train.seed,
        "eval_seed": config.eval.seed,
        "total_iterations": train_config.total_iterations,
    }

    if dry_run:
        _write_manifest(out_dir, {**base_manifest, "status": "dry-run"})
        return RunResult(status="dry-run", out_dir=out_dir, config=config)

    ckpt_path = os.path.join(out_dir, CHECKPOINT_FILE)
    model = None
    adam = None
    start_iteration = 0
    if resume and os.path.exists(ckpt_path):
        ckpt = load_checkpoint(ckpt_path)
        if ckpt.manifest.get("resume_hash") not in (None, config.resume_hash()):
            raise ConfigError("resume: checkpoint belongs to a different config")
        model = restore_model(ckpt)
        params = dict(model.named_parameters())
        adam = AdamState.for_params(params)
        import torch

        for name in params:
            adam.m[name] = torch.from_numpy(ckpt.adam_m[name]).float()
            adam.v[name] = torch.from_numpy(ckpt.adam_v[name]).float()
        adam.t = ckpt.adam_t
        start_iteration = int(ckpt.manifest["iteration"])

    def save_ckpt(mdl, adam_state, iteration):
        save_checkpoint(
            ckpt_path,
            mdl,
            iteration=iteration,
            seed=config.train.seed,
            adam_m=adam_state.m,
            adam_v=adam_state.v,
            adam_t=adam_state.t,
        )
        # Tag with the trajectory hash so resume can refuse mismatched runs.
        _append_hash_to_checkpoint(ckpt_path, config.resume_hash())

    def on_record(record: dict) -> None:
        if not quiet:
            print(
                f"iter {record['iteration']:>7d}  loss {record['loss']:.5f}  "
                f"grad {record['grad_norm']:.3f}  d {record['d_cur']} n {record['n_cur']}",
                flush=True,
            )

    try:
        result = train(
            train_config,
            model=model,
            adam=adam,
            start_iteration=start_iteration,
            on_record=on_record,
            checkpoint_every=config.train.checkpoint_every,
            on_checkpoint=save_ckpt if config.train.checkpoint_every else None,
        )
    except TrainingDiverged as err:
        _write_manifest(
            out_dir,
            {
                **base_manifest,
                "status": "aborted",
                "diverged_at": err.iteration,
                "loss": err.loss,
                "grad_norm": err.grad_norm,
                "learning_rate": err.lr,
            },
        )
        return RunResult(
            status="aborted", out_dir=out_dir, config=config, error=str(err)
        )

    metrics_path = os.path.join(out_dir, METRICS_FILE)
    if resume and start_iteration > 0 and os.path.exists(metrics_path):
        earlier = MetricsLog.read_jsonl(metrics_path)
        result.metrics.records = earlier.records + result.metrics.records
        result.metrics.snapshots = earlier.snapshots + result.metrics.snapshots
    result.metrics.write_jsonl(metrics_path)

    final_iteration = start_iteration + result.iterations_run
    save_ckpt(result.model, result.adam, final_iteration)

    final_eval = evaluate(
        result.model,
        task,
        n_prompts=config.eval.n_prompts,
        seed=config.eval.seed,
        ortho_y_denominator=config.train.ortho_y_denominator,
    )
    final_eval.to_json(os.path.join(out_dir, EVAL_FILE))
    final_eval.write_curve_csv(os.path.join(out_dir, CURVE_FILE))

    _write_manifest(
        out_dir,
        {
            **base_manifest,
            "status": "completed",
            "iterations_run": final_iteration,
            "stopped_early": result.stopped_early,
            "final_eval_overall": final_eval.overall,
            "task_metric": final_eval.task_metric,
            "files": [
                CONFIG_FILE, METRICS_FILE, EVAL_FILE, CURVE_FILE,
                FLOPS_FILE, CHECKPOINT_FILE,
            ],
        },
    )
    return RunResult(
        status="completed",
        out_dir=out_dir,
        config=config,
        final_eval=final_eval,
        metrics=result.metrics,
    )


def _append_hash_to_checkpoint(path: str, config_hash: str) -> None:
    import numpy as np

    with np.load(path) as data:
        arrays = {k: data[k] for k in data.files}
    manifest = json.loads(bytes(arrays["manifest"]).decode())
    manifest["resume_hash"] = config_hash
    arrays["manifest"] = np.frombuffer(json.dumps(manifest).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


@dataclass
class SweepResult:
    axis: str
    runs: List[dict] = field(default_factory=list)

    @property
    def best(self) -> Optional[dict]:
        scored = [r for r in runs_ok(self.runs)]
        if not scored:
            return None
        maximize = scored[0]["metric_name"] == "accuracy"
        return max(scored, key=lambda r: r["metric"]) if maximize else min(
            scored, key=lambda r: r["metric"]
        )

    def table(self) -> str:
        lines = [f"{'value':>16}  {'status':>10}  {'metric':>12}"]
        for run in self.runs:
            metric = run.get("metric")
            metric_s = f"{metric:.6g}" if metric is not None else "-"
            lines.append(f"{str(run['value']):>16}  {run['status']:>10}  {metric_s:>12}")
        best = self.best
        if best is not None:
            lines.append(f"best: {best['value']} ({best['metric']:.6g})")
        return "\n".join(lines)


def runs_ok(runs: List[dict]) -> List[dict]:
    return [r for r in runs if r["status"] in ("completed", "reused") and r.get("metric") is not None]


def _axis_values(config: ExperimentConfig, axis: str, values):
    if values is not None:
        return list(values)
    if axis == "lr":
        return list(config.train.lr_sweep or LR_SWEEP_DEFAULT)
    if axis == "architecture":
        return [a.value for a in ArchitectureId]
    if axis == "size":
        return [list(pair) for pair in MAMBA_SIZE_ABLATION]
    raise ConfigError(f"sweep axis {axis!r} not one of lr, architecture, size")


def _apply_axis(config: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if axis == "lr":
        return dataclasses.replace(
            config, train=dataclasses.replace(config.train, learning_rate=float(value))
        )
    if axis == "architecture":
        return dataclasses.replace(config, arch=ArchitectureId(value))
    if axis == "size":
        n_layers, embed_dim = value
        return dataclasses.replace(
            config,
            model=dataclasses.replace(
                config.model, n_layers=int(n_layers), embed_dim=int(embed_dim)
            ),
        )
    raise ConfigError(f"sweep axis {axis!r} not one of lr, architecture, size")


def sweep(
    config: ExperimentConfig,
    axis: str,
    values=None,
    out_dir: Optional[str] = None,
    reuse_existing: bool = False,
    quiet: bool = True,
) -> SweepResult:
    """Run one experiment per axis value; report the best final metric.

    Individual failures are recorded in the summary without aborting the
    remaining points.
    """
    values = _axis_values(config, axis, values)
    root = out_dir or config.out_dir or default_out_dir(config) + f"-sweep-{axis}"
    os.makedirs(root, exist_ok=True)
    result = SweepResult(axis=axis)
    for value in values:
        tag = "x".join(str(v) for v in value) if isinstance(value, (list, tuple)) else str(value)
        point_dir = os.path.join(root, f"{axis}-{tag}")
        point_config = dataclasses.replace(_apply_axis(config, axis, value), out_dir=None)
        entry = {"value": value, "out_dir": point_dir}
        try:
            run = run_experiment(
                point_config,
                out_dir=point_dir,
                reuse_existing=reuse_existing,
                quiet=quiet,
            )
            entry["status"] = run.status
            entry["metric"] = run.final_metric
            entry["metric_name"] = (
                "accuracy"
                if run.final_eval and "accuracy" in run.final_eval.task_metric
                else "loss"
            )
            if run.error:
                entry["error"] = run.error
        except Exception as err:  # keep sweeping; report per-point failure
            entry["status"] = "failed"
            entry["metric"] = None
            entry["metric_name"] = "loss"
            entry["error"] = str(err)
        result.runs.append(entry)
    with open(os.path.join(root, "sweep.json"), "w") as fh:
        json.dump({"axis": axis, "runs": result.runs}, fh, indent=2)
        fh.write("\n")
    return result


def evaluate_checkpoint(
    checkpoint_path: str,
    config: ExperimentConfig,
    n_prompts: Optional[int] = None,
    seed: Optional[int] = None,
) -> EvalReport:
    """Evaluate a stored checkpoint on a task."""
    model = restore_model(load_checkpoint(checkpoint_path))
    return evaluate(
        model,
        config.task,
        n_prompts=n_prompts or config.eval.n_prompts,
        seed=seed if seed is not None else config.eval.seed,
        ortho_y_denominator=config.train.ortho_y_denominator,
    )
