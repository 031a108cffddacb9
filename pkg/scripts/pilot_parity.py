"""Pilot runs to size the desk-scale parity and retrieval experiments."""

import json
import sys
import time

from icl_lab.models import ArchitectureId, ModelConfig
from icl_lab.tasks import TaskFamily, TaskSpec
from icl_lab.training import CurriculumSchedule, TrainConfig, train

PARITY = TaskSpec(TaskFamily.SPARSE_PARITY, d=10, n_points=64, k=2)
MQAR = TaskSpec(TaskFamily.VECTOR_MQAR, d=20, n_points=48, n_pairs=32, n_queries=16)


def mamba_cfg(embed=64, state=8, layers=2):
    return ModelConfig(n_layers=layers, embed_dim=embed, n_heads=8,
                       state_dim=state, max_seq_len=160)


def run(tag, config):
    t0 = time.time()

    def on_snap(snap, model):
        print(f"[{tag}] iter {snap['iteration']:>6} "
              f"acc={snap.get('eval_accuracy', float('nan')):.3f} "
              f"loss={snap['eval_loss']:.4f} ({time.time()-t0:.0f}s)", flush=True)

    result = train(config, on_snapshot=on_snap)
    last = result.metrics.snapshots[-1] if result.metrics.snapshots else {}
    print(f"[{tag}] done iters={result.iterations_run} early={result.stopped_early} "
          f"last={json.dumps(last)} wall={time.time()-t0:.0f}s", flush=True)
    return result


def parity_variant(tag, lr, curriculum, seed=0, iters=5000, batch=16):
    cfg = TrainConfig(
        task=PARITY, arch=ArchitectureId.MAMBA, model=mamba_cfg(),
        iterations=iters, batch_size=batch, learning_rate=lr,
        grad_clip_norm=10.0, curriculum=curriculum, seed=seed,
        log_every=0, eval_every=250, eval_prompts=128,
        stop_metric="eval_accuracy", stop_threshold=0.92,
    )
    return run(tag, cfg)


def main():
    which = sys.argv[1] if len(sys.argv) > 1 else "all"
    curr = CurriculumSchedule(d_start=5, d_end=10, n_start=16, n_end=64,
                              n_stages=15, stage_length=150)
    if which in ("all", "parity"):
        parity_variant("lr2e-4-curr", 2e-4, curr)
        parity_variant("lr4e-4-curr", 4e-4, curr)
        parity_variant("lr4e-4-nocurr", 4e-4, None)
    if which in ("all", "mqar"):
        for arch, tag in ((ArchitectureId.TRANSFORMER, "mqar-tf"),
                          (ArchitectureId.MAMBA, "mqar-mamba")):
            cfg = TrainConfig(
                task=MQAR, arch=arch, model=mamba_cfg(layers=4),
                iterations=0, dataset_size=30_000, epochs=2,
                batch_size=64, learning_rate=1e-3, grad_clip_norm=10.0,
                seed=0, log_every=0, eval_every=100, eval_prompts=128,
            )
            run(tag, cfg)


if __name__ == "__main__":
    main()
