"""Second parity pilot: slower curriculum stages so each difficulty can grok."""

import time

from icl_lab.models import ArchitectureId, ModelConfig
from icl_lab.tasks import TaskFamily, TaskSpec
from icl_lab.training import CurriculumSchedule, TrainConfig, train

PARITY = TaskSpec(TaskFamily.SPARSE_PARITY, d=10, n_points=64, k=2)
CURR = CurriculumSchedule(d_start=5, d_end=10, n_start=16, n_end=64,
                          n_stages=5, stage_length=800)


def run(tag, arch, lr, batch, iters, embed=64, curriculum=CURR, seed=0):
    cfg = TrainConfig(
        task=PARITY, arch=arch,
        model=ModelConfig(n_layers=2, embed_dim=embed, n_heads=8, state_dim=8,
                          max_seq_len=160),
        iterations=iters, batch_size=batch, learning_rate=lr, grad_clip_norm=10.0,
        curriculum=curriculum, seed=seed, log_every=0, eval_every=250,
        eval_prompts=128, stop_metric="eval_accuracy", stop_threshold=0.93,
    )
    t0 = time.time()

    def snap(s, m):
        print(f"[{tag}] iter {s['iteration']:>6} acc={s['eval_accuracy']:.3f} "
              f"loss={s['eval_loss']:.4f} ({time.time()-t0:.0f}s)", flush=True)

    r = train(cfg, on_snapshot=snap)
    print(f"[{tag}] done early={r.stopped_early} iters={r.iterations_run} "
          f"wall={time.time()-t0:.0f}s", flush=True)
    return r


if __name__ == "__main__":
    run("V1-b16-lr4e-4", ArchitectureId.MAMBA, 4e-4, 16, 10000)
    run("V2-b32-lr4e-4", ArchitectureId.MAMBA, 4e-4, 32, 8000)
    run("V3-b16-lr1e-3", ArchitectureId.MAMBA, 1e-3, 16, 8000)
