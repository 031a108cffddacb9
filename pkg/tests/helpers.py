"""Shared test oracles: finite differences and convolution-kernel SSM."""

from __future__ import annotations

from typing import Callable, Dict

import numpy as np
import torch


def finite_difference_gradients(
    loss_fn: Callable[[], torch.Tensor],
    params: Dict[str, torch.Tensor],
    eps: float = 1e-5,
) -> Dict[str, torch.Tensor]:
    """Central finite differences of a scalar loss w.r.t. every parameter."""
    grads = {}
    with torch.no_grad():
        for name, p in params.items():
            g = torch.zeros_like(p)
            flat = p.view(-1)
            gflat = g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = loss_fn().item()
                flat[i] = orig - eps
                down = loss_fn().item()
                flat[i] = orig
                gflat[i] = (up - down) / (2.0 * eps)
            grads[name] = g
    return grads


def max_relative_error(
    reference: Dict[str, torch.Tensor], candidate: Dict[str, torch.Tensor]
) -> float:
    """Worst elementwise relative error with a floor tied to the gradient scale,
    so near-zero entries are compared absolutely."""
    global_scale = max(
        (t.abs().max().item() for t in candidate.values()), default=1.0
    )
    floor = 1e-4 * max(1.0, global_scale)
    worst = 0.0
    for name, ref in reference.items():
        cand = candidate[name]
        denom = torch.maximum(torch.maximum(ref.abs(), cand.abs()),
                              torch.full_like(ref, floor))
        worst = max(worst, ((ref - cand).abs() / denom).max().item())
    return worst


def analytic_gradients(
    loss_fn: Callable[[], torch.Tensor], params: Dict[str, torch.Tensor]
) -> Dict[str, torch.Tensor]:
    for p in params.values():
        if p.grad is not None:
            p.grad = None
    loss_fn().backward()
    return {name: p.grad.detach().clone() for name, p in params.items()}


def lti_convolution_oracle(
    x: np.ndarray,
    a_bar: np.ndarray,
    b_bar: np.ndarray,
    c: np.ndarray,
    d_skip: np.ndarray,
) -> np.ndarray:
    """Evaluate the time-invariant SSM as an explicit causal convolution.

    Kernel position l carries c * a_bar^l * b_bar summed over states; output
    adds the skip term.  Pure numpy float64; independent of the scan code.
    """
    B, T, D = x.shape
    kernel = np.empty((T, D))
    power = np.ones_like(a_bar)
    for l in range(T):
        kernel[l] = (c * power * b_bar).sum(axis=1)
        power = power * a_bar
    y = np.zeros_like(x)
    for t in range(T):
        for l in range(t + 1):
            y[:, t] += kernel[l] * x[:, t - l]
    return y + x * d_skip
