"""Token-sequence construction: the flattened model input for one prompt."""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import TextIO, Tuple, Union

import numpy as np

from icl_lab.tasks.prompts import PromptInstance
from icl_lab.tasks.spec import TaskFamily, TaskSpec


@dataclass
class TokenSequence:
    """Flattened prompt plus the bookkeeping needed to score predictions.

    The model's output is read at each ``predict_at`` position and scored
    against the matching row of ``targets``.  ``loss_mask`` is False at
    outlier positions, which must contribute exactly zero loss.
    ``example_index`` maps each prediction slot back to its in-context
    example (chain-of-thought has two slots per example).
    """

    tokens: np.ndarray        # (T, W)
    predict_at: np.ndarray    # (P,) int
    targets: np.ndarray       # (P, output_width); parity rows are one-hot classes
    loss_mask: np.ndarray     # (P,) bool, True = scored
    example_index: np.ndarray  # (P,) int

    @property
    def seq_len(self) -> int:
        return self.tokens.shape[0]


def _pad_rows(rows: np.ndarray, width: int) -> np.ndarray:
    rows = np.atleast_2d(rows)
    if rows.shape[1] > width:
        raise ValueError(f"payload width {rows.shape[1]} exceeds token width {width}")
    if rows.shape[1] == width:
        return rows.astype(np.float64, copy=True)
    out = np.zeros((rows.shape[0], width))
    out[:, : rows.shape[1]] = rows
    return out


def build_token_sequence(
    prompt: PromptInstance,
    spec: TaskSpec,
    token_width: int | None = None,
) -> TokenSequence:
    """Lay out one prompt as a token matrix.

    Standard tasks alternate x and label tokens (T = 2N); chain-of-thought
    inserts the hidden feature between them (T = 3N, predictions read at both
    the x-slot and the s-slot); MQAR lays out all key-value pairs followed by
    the queries, with predictions read at each query position.  Scalar labels
    are zero-padded to the token width.  ``token_width`` may widen the layout
    (used while the dimension curriculum is below its target).
    """
    width = spec.token_width if token_width is None else token_width
    if width < spec.token_width:
        raise ValueError(f"token_width {width} below natural width {spec.token_width}")
    f = spec.family
    n = prompt.n_points

    if f is TaskFamily.CHAIN_OF_THOUGHT_IO:
        xs = _pad_rows(prompt.xs, width)
        ss = _pad_rows(prompt.s_hidden, width)
        ys = _pad_rows(prompt.ys, width)
        tokens = np.empty((3 * n, width))
        tokens[0::3] = xs
        tokens[1::3] = ss
        tokens[2::3] = ys
        predict_at = np.empty(2 * n, dtype=np.int64)
        predict_at[0::2] = 3 * np.arange(n)      # predict s from the x prefix
        predict_at[1::2] = 3 * np.arange(n) + 1  # predict y from the s prefix
        targets = np.empty((2 * n, width))
        targets[0::2] = ss
        targets[1::2] = ys
        example_index = np.repeat(np.arange(n), 2)
        loss_mask = np.ones(2 * n, dtype=bool)
        return TokenSequence(tokens, predict_at, targets, loss_mask, example_index)

    if f is TaskFamily.VECTOR_MQAR:
        n_pairs = spec.n_pairs
        keys = _pad_rows(prompt.xs[:n_pairs], width)
        values = _pad_rows(prompt.ys[:n_pairs], width)
        queries = _pad_rows(prompt.xs[n_pairs:], width)
        tokens = np.empty((2 * n_pairs + spec.n_queries, width))
        tokens[0 : 2 * n_pairs : 2] = keys
        tokens[1 : 2 * n_pairs : 2] = values
        tokens[2 * n_pairs :] = queries
        predict_at = 2 * n_pairs + np.arange(spec.n_queries, dtype=np.int64)
        targets = prompt.ys[n_pairs:].astype(np.float64, copy=True)
        loss_mask = np.ones(spec.n_queries, dtype=bool)
        example_index = np.arange(spec.n_queries, dtype=np.int64)
        return TokenSequence(tokens, predict_at, targets, loss_mask, example_index)

    xs = _pad_rows(prompt.xs, width)
    ys = _pad_rows(prompt.ys, width)
    tokens = np.empty((2 * n, width))
    tokens[0::2] = xs
    tokens[1::2] = ys
    predict_at = 2 * np.arange(n, dtype=np.int64)
    loss_mask = ~prompt.outlier_mask
    example_index = np.arange(n, dtype=np.int64)

    if f is TaskFamily.SPARSE_PARITY:
        targets = np.zeros((n, 2))
        cls = ((prompt.ys[:, 0] + 1.0) / 2.0).astype(np.int64)
        targets[np.arange(n), cls] = 1.0
    elif f is TaskFamily.MANY_OUTLIER:
        targets = prompt.ys.astype(np.float64, copy=True)
    else:
        targets = prompt.ys[:, :1].astype(np.float64, copy=True)
    return TokenSequence(tokens, predict_at, targets, loss_mask, example_index)


def dump_prompt_csv(
    dest: Union[str, TextIO],
    prompt: PromptInstance,
    spec: TaskSpec,
    seed: int,
    token_width: int | None = None,
) -> None:
    """Write a prompt's token matrix as CSV with an identifying header."""
    seq = build_token_sequence(prompt, spec, token_width)
    own = isinstance(dest, str)
    fh = open(dest, "w") if own else dest
    try:
        fh.write(f"family={spec.family.value},d={spec.d},N={spec.n_points},seed={seed}\n")
        for row in seq.tokens:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    finally:
        if own:
            fh.close()


def load_prompt_csv(src: Union[str, TextIO]) -> Tuple[dict, np.ndarray]:
    """Parse a prompt dump back into its header fields and token matrix."""
    own = isinstance(src, str)
    fh = open(src) if own else src
    try:
        header = fh.readline().strip()
        meta = {}
        for item in header.split(","):
            key, value = item.split("=")
            meta[key] = value if key == "family" else int(value)
        tokens = np.array(
            [[float(v) for v in line.split(",")] for line in fh if line.strip()]
        )
        return meta, tokens
    finally:
        if own:
            fh.close()


def dumps_prompt_csv(prompt: PromptInstance, spec: TaskSpec, seed: int) -> str:
    buf = io.StringIO()
    dump_prompt_csv(buf, prompt, spec, seed)
    return buf.getvalue()
