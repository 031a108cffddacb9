"""Acceptance gate: one test per criterion, printed as PASS/FAIL lines.

Criteria 5-7 train models from scratch and are marked ``slow``; their
completed runs are cached under ``tests/.acceptance_cache`` (override with
``ICL_LAB_ACCEPT_CACHE``) keyed by the full config hash, so re-invocations
reuse finished artifacts.  Run with ``pytest tests/test_acceptance.py -v -s``.
"""

import math
import os
import statistics

import numpy as np
import pytest
import torch

from helpers import (
    analytic_gradients,
    finite_difference_gradients,
    lti_convolution_oracle,
    max_relative_error,
)
from icl_lab.evaluation import convergence_time, evaluate
from icl_lab.flops import mamba_block_mults, training_flops, transformer_block_mults
from icl_lab.harness import resolve_config, run_experiment
from icl_lab.models import (
    ArchitectureId,
    ModelConfig,
    build_model,
    lti_scan,
    selective_scan,
)
from icl_lab.tasks import (
    TaskFamily,
    TaskSpec,
    build_token_sequence,
    default_task,
    evaluate_function,
    sample_prompt,
    task_loss,
)
from icl_lab.training import TrainConfig, batch_loss, build_batch, train
from test_blocks import BLOCK_FACTORIES

CACHE_DIR = os.environ.get(
    "ICL_LAB_ACCEPT_CACHE",
    os.path.join(os.path.dirname(__file__), ".acceptance_cache"),
)

slow = pytest.mark.slow


def _report(criterion: str, passed: bool, detail: str) -> None:
    print(f"[{criterion}] {'PASS' if passed else 'FAIL'}: {detail}", flush=True)


def _cached_run(flat: dict, name: str):
    config = resolve_config(flat)
    out_dir = os.path.join(CACHE_DIR, f"{name}-{config.content_hash()[:10]}")
    result = run_experiment(config, out_dir=out_dir, reuse_existing=True)
    assert result.status in ("completed", "reused"), (
        f"{name}: run {result.status}: {result.error}"
    )
    return result


# ---------------------------------------------------------------------------
# Criterion 1: generator property suite over >= 1000 seeded prompts per family.
# ---------------------------------------------------------------------------


def _independent_labels(spec, prompt):
    """Vectorized label recomputation, independent of evaluate_function."""
    f = spec.family
    xs = prompt.xs
    fn = prompt.fn
    if f in (TaskFamily.LINEAR_REGRESSION, TaskFamily.SPARSE_LINEAR_REGRESSION,
             TaskFamily.ORTHOGONAL_OUTLIER, TaskFamily.MANY_OUTLIER):
        return xs @ fn.w
    if f is TaskFamily.TWO_NN_REGRESSION:
        return np.maximum(xs @ fn.w1.T, 0.0) @ fn.w2
    if f is TaskFamily.SPARSE_PARITY:
        return np.prod(xs[:, fn.parity_set], axis=1)
    if f is TaskFamily.DECISION_TREE:
        node = np.zeros(xs.shape[0], dtype=np.int64)
        n_internal = fn.tree_index.shape[0]
        for _ in range(spec.depth):
            coord = fn.tree_index[node]
            node = 2 * node + np.where(xs[np.arange(xs.shape[0]), coord] > 0, 2, 1)
        return fn.tree_leaf[node - n_internal]
    if f is TaskFamily.CHAIN_OF_THOUGHT_IO:
        return np.maximum(xs @ fn.w1.T, 0.0) @ fn.w2
    raise AssertionError(f)


def test_c1_generator_property_suite():
    n_prompts = 1000
    checked = 0
    for family in TaskFamily:
        spec = default_task(family)
        for seed in range(n_prompts):
            rng = np.random.default_rng((991, int(checked), seed))
            prompt = sample_prompt(spec, rng)
            unmasked = ~prompt.outlier_mask
            if family is TaskFamily.VECTOR_MQAR:
                assert np.allclose(np.linalg.norm(prompt.xs, axis=1), 1.0, atol=1e-9)
                assert np.allclose(np.linalg.norm(prompt.ys, axis=1), 1.0, atol=1e-9)
                keys = prompt.xs[: spec.n_pairs]
                for j in range(spec.n_queries):
                    hit = np.flatnonzero(
                        np.all(keys == prompt.xs[spec.n_pairs + j], axis=1)
                    )
                    assert hit.size == 1
                    assert np.array_equal(
                        prompt.ys[spec.n_pairs + j], prompt.ys[hit[0]]
                    )
            elif family is TaskFamily.CHAIN_OF_THOUGHT_IO:
                expect = _independent_labels(spec, prompt)
                assert np.allclose(prompt.ys[:, 0], expect, atol=1e-12, rtol=0)
                for i in range(0, spec.n_points, 25):
                    s, y = evaluate_function(prompt.fn, prompt.xs[i])
                    assert np.array_equal(prompt.s_hidden[i], s)
                    assert prompt.ys[i, 0] == y
            else:
                expect = _independent_labels(spec, prompt)
                assert np.allclose(
                    prompt.ys[unmasked, 0], expect[unmasked], atol=1e-12, rtol=0
                )
                for i in np.flatnonzero(unmasked)[:: max(1, spec.n_points // 8)]:
                    assert prompt.ys[i, 0] == evaluate_function(prompt.fn, prompt.xs[i])
            if family is TaskFamily.SPARSE_LINEAR_REGRESSION:
                assert np.count_nonzero(prompt.fn.w) == spec.k
            if family is TaskFamily.SPARSE_PARITY:
                assert prompt.fn.parity_set.shape == (spec.k,)
                assert set(np.unique(prompt.ys)) <= {-1.0, 1.0}
            if family is TaskFamily.ORTHOGONAL_OUTLIER:
                w = prompt.fn.w
                wn = np.linalg.norm(w)
                for i in np.flatnonzero(prompt.outlier_mask):
                    xv, yv = prompt.xs[i], prompt.ys[i]
                    assert abs(xv @ w) <= 1e-6 * np.linalg.norm(xv) * wn
                    assert abs(yv @ w) <= 1e-6 * np.linalg.norm(yv) * wn
            if family in (TaskFamily.ORTHOGONAL_OUTLIER, TaskFamily.MANY_OUTLIER):
                if prompt.outlier_mask.any() and unmasked.any():
                    seq = build_token_sequence(prompt, spec)
                    preds = np.array(seq.targets)
                    base = task_loss(spec, preds, prompt)
                    preds[prompt.outlier_mask] += 77.0
                    assert task_loss(spec, preds, prompt).value == base.value
        checked += 1
    _report("C1", True, f"{n_prompts} prompts x {checked} families, all invariants hold")


# ---------------------------------------------------------------------------
# Criterion 2: SSM equivalences in wide precision.
# ---------------------------------------------------------------------------


def test_c2_ssm_equivalences():
    worst_conv = 0.0
    rng = np.random.default_rng(202)
    for _ in range(100):
        T = int(rng.integers(2, 65))
        D = int(rng.integers(1, 5))
        N = int(rng.integers(1, 9))
        x = rng.standard_normal((2, T, D))
        a_bar = rng.uniform(0.0, 1.0, (D, N))
        b_bar = rng.standard_normal((D, N))
        c = rng.standard_normal((D, N))
        d_skip = rng.standard_normal(D)
        oracle = lti_convolution_oracle(x, a_bar, b_bar, c, d_skip)
        got = lti_scan(
            *(torch.from_numpy(v) for v in (x, a_bar, b_bar, c, d_skip)), impl="ref"
        ).numpy()
        worst_conv = max(worst_conv, float(np.abs(got - oracle).max()))
    assert worst_conv <= 1e-10

    worst_frozen = 0.0
    g = torch.Generator().manual_seed(203)
    for _ in range(20):
        B, T, D, N = 2, 24, 3, 5
        u = torch.randn(B, T, D, generator=g, dtype=torch.float64)
        delta0 = torch.rand(D, generator=g, dtype=torch.float64) + 0.05
        A = -torch.rand(D, N, generator=g, dtype=torch.float64) - 0.1
        B0 = torch.randn(N, generator=g, dtype=torch.float64)
        C0 = torch.randn(N, generator=g, dtype=torch.float64)
        skip = torch.randn(D, generator=g, dtype=torch.float64)
        frozen = selective_scan(
            u, delta0.expand(B, T, D), A, B0.expand(B, T, N), C0.expand(B, T, N),
            skip, impl="ref",
        )
        lti = lti_scan(
            u, torch.exp(delta0[:, None] * A), delta0[:, None] * B0.expand(D, N),
            C0.expand(D, N), skip, impl="ref",
        )
        worst_frozen = max(worst_frozen, float((frozen - lti).abs().max()))
    assert worst_frozen <= 1e-8
    _report(
        "C2",
        True,
        f"scan vs convolution {worst_conv:.2e} (<=1e-10); "
        f"frozen selective vs LTI {worst_frozen:.2e} (<=1e-8)",
    )


# ---------------------------------------------------------------------------
# Criterion 3: finite-difference gradient agreement, blocks and full models.
# ---------------------------------------------------------------------------


def _model_gradcheck(arch) -> float:
    cfg = ModelConfig(
        n_layers=1, embed_dim=8, n_heads=2, state_dim=4, max_seq_len=8,
        scan_impl="ref",
    )
    model = build_model(arch, cfg, in_width=3, out_width=1, seed=11).double()
    g = torch.Generator().manual_seed(12)
    tokens = torch.randn(2, 6, 3, generator=g, dtype=torch.float64)
    predict_at = torch.tensor([0, 2, 4])
    targets = torch.randn(2, 3, 1, generator=g, dtype=torch.float64)

    def loss_fn():
        return ((model(tokens, predict_at) - targets) ** 2).mean()

    params = dict(model.named_parameters())
    fd = finite_difference_gradients(loss_fn, params)
    an = analytic_gradients(loss_fn, params)
    return max_relative_error(fd, an)


def test_c3_gradient_correctness():
    worst = {}
    for name, factory in sorted(BLOCK_FACTORIES.items()):
        block = factory(torch.Generator().manual_seed(13)).double()
        g = torch.Generator().manual_seed(14)
        x = torch.randn(2, 6, 8, generator=g, dtype=torch.float64)
        weight = torch.randn(2, 6, 8, generator=g, dtype=torch.float64)
        params = dict(block.named_parameters())
        loss_fn = lambda: (block(x) * weight).sum()  # noqa: E731
        err = max_relative_error(
            finite_difference_gradients(loss_fn, params),
            analytic_gradients(loss_fn, params),
        )
        worst[f"block:{name}"] = err
    for arch in ArchitectureId:
        worst[f"model:{arch.value}"] = _model_gradcheck(arch)
    top = max(worst.values())
    assert top <= 1e-4, worst
    _report(
        "C3",
        True,
        f"{len(worst)} gradient checks, worst rel err {top:.2e} (<=1e-4)",
    )


# ---------------------------------------------------------------------------
# Criterion 4: FLOPs exactness.
# ---------------------------------------------------------------------------


def test_c4_flops_exactness():
    rng = np.random.default_rng(404)
    for _ in range(20):
        L = int(rng.integers(1, 500))
        D = int(rng.integers(1, 500))
        N = int(rng.integers(1, 64))
        E = int(rng.integers(1, 4))
        R = int(rng.integers(1, 8))
        assert transformer_block_mults(L, D) == 12 * L * D**2 + 2 * L**2 * D
        assert (
            mamba_block_mults(L, D, N, E, R)
            == 2 * L * E * D**2 + 7 * L * E * D * N + 2 * R * L * E * D + L * E * D**2
        )
    cfg = ModelConfig(n_layers=2, embed_dim=16, n_heads=2, state_dim=4)
    one = training_flops(ArchitectureId.MAMBAFORMER, cfg, 10, 4, 1)
    for k in (0, 1, 3, 17):
        assert training_flops(ArchitectureId.MAMBAFORMER, cfg, 10, 4, k) == k * one
    kinds_mults = 2 * (transformer_block_mults(10, 16))
    assert training_flops(ArchitectureId.TRANSFORMER, cfg, 10, 1, 1) == 6 * kinds_mults
    _report("C4", True, "20 random tuples exact; x6 rule and iteration linearity hold")


# ---------------------------------------------------------------------------
# Criterion 8: determinism of experiment runs.
# ---------------------------------------------------------------------------


def test_c8_determinism(tmp_path):
    flat = {
        "arch": "StandardHybrid",
        "task.family": "LinearRegression",
        "task.d": 3,
        "task.n_points": 5,
        "model.n_layers": 1,
        "model.embed_dim": 8,
        "model.n_heads": 2,
        "model.state_dim": 4,
        "train.iterations": 40,
        "train.batch_size": 8,
        "train.log_every": 1,
        "train.eval_every": 20,
        "train.eval_prompts": 16,
        "train.curriculum": "none",
        "train.seed": 5,
        "eval.n_prompts": 32,
    }
    config = resolve_config(flat)
    a = run_experiment(config, out_dir=str(tmp_path / "a"))
    b = run_experiment(config, out_dir=str(tmp_path / "b"))
    losses_a = [r["loss"] for r in a.metrics.records]
    losses_b = [r["loss"] for r in b.metrics.records]
    assert losses_a == losses_b
    assert [s["eval_loss"] for s in a.metrics.snapshots] == [
        s["eval_loss"] for s in b.metrics.snapshots
    ]
    # fixed-dataset (epoch) mode as well
    flat_mqar = {
        "arch": "Mamba",
        "task.family": "VectorMQAR",
        "task.d": 4,
        "task.n_points": 6,
        "task.n_pairs": 4,
        "task.n_queries": 2,
        "model.n_layers": 1,
        "model.embed_dim": 8,
        "model.n_heads": 2,
        "model.state_dim": 2,
        "train.dataset_size": 32,
        "train.epochs": 2,
        "train.iterations": 0,
        "train.batch_size": 8,
        "train.log_every": 1,
        "train.eval_every": 0,
        "train.curriculum": "none",
        "eval.n_prompts": 16,
    }
    config2 = resolve_config(flat_mqar)
    c = run_experiment(config2, out_dir=str(tmp_path / "c"))
    d = run_experiment(config2, out_dir=str(tmp_path / "d"))
    assert [r["loss"] for r in c.metrics.records] == [r["loss"] for r in d.metrics.records]
    _report("C8", True, "identical loss sequences across reruns (fresh and epoch modes)")


# ---------------------------------------------------------------------------
# Criterion 9: outlier masking changes nothing at masked positions.
# ---------------------------------------------------------------------------


def test_c9_outlier_mask_behavioral():
    spec = default_task(TaskFamily.MANY_OUTLIER)
    prompts = [sample_prompt(spec, np.random.default_rng((909, j))) for j in range(4)]
    batch = build_batch(prompts, spec, spec.token_width)
    g = torch.Generator().manual_seed(909)
    preds = torch.randn(batch.targets.shape, generator=g)
    base = float(batch_loss(spec.family, preds, batch))
    bumped = preds.clone()
    bumped[batch.mask == 0] += 1e6
    after = float(batch_loss(spec.family, bumped, batch))
    assert after == base  # exactly zero change
    _report("C9", True, f"masked-position perturbation changed loss by {after - base!r}")


# ---------------------------------------------------------------------------
# Criterion 5: desk-scale linear-regression ICL (Transformer and Mamba).
#
# NOTE: the stated threshold (overall eval loss <= 1.0 at d=5, N=11) lies
# below the information floor for this prompt length: the best possible
# predictor (min-norm least squares on each prefix) averages
# sum_{i=1..11} max(5-i+1, 0)/11 = 15/11 ~= 1.364 over all positions.  The
# test computes that oracle alongside the models and asserts the stated
# threshold anyway; it is expected to fail, with both models close to the
# oracle and ~3.4x better than the zero predictor.
# ---------------------------------------------------------------------------

C5_ITERATIONS = 6000

C5_BASE = {
    "task.family": "LinearRegression",
    "task.d": 5,
    "task.n_points": 11,
    "model.n_layers": 2,
    "model.embed_dim": 128,
    "model.n_heads": 8,
    "model.state_dim": 8,
    "train.iterations": C5_ITERATIONS,
    "train.batch_size": 32,
    "train.learning_rate": 1e-4,
    "train.log_every": 200,
    "train.eval_every": 1000,
    "train.eval_prompts": 256,
    "train.curriculum": "none",
    "train.seed": 1,
    "eval.n_prompts": 1280,
    "eval.seed": 555,
}


def _bayes_floor_linear(d, n_points, trials=4000, seed=3):
    rng = np.random.default_rng(seed)
    total = np.zeros(n_points)
    for _ in range(trials):
        w = rng.standard_normal(d)
        X = rng.standard_normal((n_points, d))
        y = X @ w
        for i in range(n_points):
            pred = 0.0 if i == 0 else X[i] @ np.linalg.lstsq(X[:i], y[:i], rcond=None)[0]
            total[i] += (pred - y[i]) ** 2
    return float(total.mean() / trials)


@slow
def test_c5_linear_regression_icl():
    floor = _bayes_floor_linear(5, 11)
    results = {}
    for arch in ("Transformer", "Mamba"):
        run = _cached_run({**C5_BASE, "arch": arch}, f"c5-{arch.lower()}")
        results[arch] = run.final_eval.overall
    baseline = 5.0  # zero predictor: E[(w.x)^2] = d
    detail = (
        f"overall eval loss Transformer {results['Transformer']:.3f}, "
        f"Mamba {results['Mamba']:.3f}; zero-predictor {baseline:.1f}; "
        f"least-squares oracle floor {floor:.3f}; stated target <= 1.0"
    )
    passed = all(v <= 1.0 for v in results.values())
    _report("C5", passed, detail)
    for arch, value in results.items():
        assert value <= 1.0, (
            f"{arch}: overall eval loss {value:.3f} vs stated target 1.0 "
            f"(information floor for d=5, N=11 is {floor:.3f}; "
            f"the zero-predictor baseline is {baseline:.1f})"
        )


# ---------------------------------------------------------------------------
# Criterion 6: sparse-parity separation (the long-pole test).
# ---------------------------------------------------------------------------

C6_BUDGET = 8000          # iterations; final values pinned after piloting
C6_LR_MAMBA = 4e-4
C6_SEEDS = (0, 1, 2)
C6_THRESHOLD = 0.9
C6_TRANSFORMER_CEILING = 0.6
C6_LR_SWEEP = (5e-5, 1e-4, 2e-4, 4e-4)

C6_BASE = {
    "task.family": "SparseParity",
    "task.d": 10,
    "task.n_points": 64,
    "task.k": 2,
    "model.n_heads": 8,
    "model.state_dim": 8,
    "train.iterations": C6_BUDGET,
    "train.batch_size": 16,
    "train.grad_clip_norm": 10.0,
    "train.log_every": 250,
    "train.eval_every": 250,
    "train.eval_prompts": 256,
    "train.curriculum.d_start": 5,
    "train.curriculum.d_end": 10,
    "train.curriculum.n_start": 16,
    "train.curriculum.n_end": 64,
    "train.curriculum.n_stages": 15,
    "train.curriculum.stage_length": 150,
    "eval.n_prompts": 1280,
    "eval.seed": 666,
}


def _parity_run(name, arch, embed_dim, lr, seed, stop=True):
    flat = {
        **C6_BASE,
        "arch": arch,
        "model.n_layers": 2,
        "model.embed_dim": embed_dim,
        "train.learning_rate": lr,
        "train.seed": seed,
    }
    if stop:
        flat["train.stop_metric"] = "eval_accuracy"
        flat["train.stop_threshold"] = 0.92
    return _cached_run(flat, name)


@slow
def test_c6_sparse_parity_separation():
    mamba_times = []
    for seed in C6_SEEDS:
        run = _parity_run(f"c6-mamba-s{seed}", "Mamba", 64, C6_LR_MAMBA, seed)
        mamba_times.append(
            convergence_time(run.metrics.snapshots, C6_THRESHOLD, C6_BUDGET)
        )
    mamba_median = statistics.median(mamba_times)

    mf_run = _parity_run("c6-mambaformer", "MambaFormer", 64, C6_LR_MAMBA, 0)
    mf_time = convergence_time(mf_run.metrics.snapshots, C6_THRESHOLD, C6_BUDGET)

    tf_peaks = {}
    for lr in C6_LR_SWEEP:
        run = _parity_run(f"c6-tf-lr{lr:g}", "Transformer", 128, lr, 0, stop=False)
        tf_peaks[lr] = max(
            s["eval_accuracy"] for s in run.metrics.snapshots if "eval_accuracy" in s
        )
    tf_best = max(tf_peaks.values())

    detail = (
        f"Mamba convergence iters {mamba_times} (median {mamba_median}), "
        f"MambaFormer {mf_time}, budget {C6_BUDGET}; "
        f"Transformer peak accuracy per lr {tf_peaks} (ceiling {C6_TRANSFORMER_CEILING})"
    )
    passed = (
        mamba_median < C6_BUDGET and mf_time < C6_BUDGET
        and tf_best <= C6_TRANSFORMER_CEILING
    )
    _report("C6", passed, detail)
    assert mamba_median < C6_BUDGET, detail
    assert mf_time < C6_BUDGET, detail
    assert tf_best <= C6_TRANSFORMER_CEILING, detail


# ---------------------------------------------------------------------------
# Criterion 7: MQAR separation.
# ---------------------------------------------------------------------------

C7_BASE = {
    "task.family": "VectorMQAR",
    "task.d": 20,
    "task.n_points": 48,
    "task.n_pairs": 32,
    "task.n_queries": 16,
    "model.n_layers": 4,
    "model.embed_dim": 64,
    "model.n_heads": 8,
    "model.state_dim": 8,
    "train.dataset_size": 30_000,
    "train.epochs": 16,
    "train.iterations": 0,
    "train.batch_size": 64,
    "train.learning_rate": 1e-3,
    "train.log_every": 100,
    "train.eval_every": 469,  # once per epoch
    "train.eval_prompts": 256,
    "train.curriculum": "none",
    "train.seed": 0,
    "eval.n_prompts": 1280,
    "eval.seed": 777,
}


class _ZeroMqar(torch.nn.Module):
    arch = "zero"
    in_width = 20

    def forward(self, tokens, predict_at):
        return torch.zeros(tokens.shape[0], len(predict_at), 20, dtype=tokens.dtype)


def test_c7_mqar_zero_predictor_sanity():
    spec = default_task(TaskFamily.VECTOR_MQAR)
    report = evaluate(_ZeroMqar(), spec, n_prompts=256, seed=7)
    assert abs(report.task_metric["mse"] - 1.0) <= 1e-6
    _report("C7a", True, f"zero-predictor MQAR MSE {report.task_metric['mse']:.9f} (= 1 +- 1e-6)")


@slow
def test_c7_mqar_separation():
    runs = {}
    for arch, early_stop in (("Mamba", False), ("MambaFormer", True), ("Transformer", True)):
        flat = {**C7_BASE, "arch": arch}
        if early_stop:
            # Only shortens the winners' training; cannot help the ratio.
            flat["train.stop_metric"] = "eval_loss"
            flat["train.stop_threshold"] = 5e-4
        runs[arch] = _cached_run(flat, f"c7-{arch.lower()}")
    mse = {a: r.final_eval.task_metric["mse"] for a, r in runs.items()}
    ratio_mf = mse["Mamba"] / mse["MambaFormer"]
    ratio_tf = mse["Mamba"] / mse["Transformer"]
    detail = (
        f"test MSE: Mamba {mse['Mamba']:.3e}, MambaFormer {mse['MambaFormer']:.3e}, "
        f"Transformer+PE {mse['Transformer']:.3e}; ratios {ratio_mf:.1f}x / {ratio_tf:.1f}x "
        f"(need >= 10x)"
    )
    passed = ratio_mf >= 10.0 and ratio_tf >= 10.0
    _report("C7", passed, detail)
    assert ratio_mf >= 10.0, detail
    assert ratio_tf >= 10.0, detail
