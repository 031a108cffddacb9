"""Synthetic in-context-learning task suite.

Sampling, evaluation, token layout, and loss are pure functions of
(spec, generator state): no shared mutable state, safe to call from any
number of workers, and bit-reproducible from a seed.
"""

from icl_lab.tasks.functions import (
    FunctionInstance,
    evaluate_function,
    sample_function,
)
from icl_lab.tasks.loss import TaskLoss, example_losses, slots_per_example, task_loss
from icl_lab.tasks.prompts import PromptInstance, sample_prompt
from icl_lab.tasks.spec import (
    OUTLIER_FAMILIES,
    REGRESSION_FAMILIES,
    TaskFamily,
    TaskSpec,
    default_task,
)
from icl_lab.tasks.tokens import (
    TokenSequence,
    build_token_sequence,
    dump_prompt_csv,
    dumps_prompt_csv,
    load_prompt_csv,
)

__all__ = [
    "FunctionInstance",
    "OUTLIER_FAMILIES",
    "PromptInstance",
    "REGRESSION_FAMILIES",
    "TaskFamily",
    "TaskLoss",
    "TaskSpec",
    "TokenSequence",
    "build_token_sequence",
    "default_task",
    "dump_prompt_csv",
    "dumps_prompt_csv",
    "evaluate_function",
    "example_losses",
    "load_prompt_csv",
    "sample_function",
    "sample_prompt",
    "slots_per_example",
    "task_loss",
]
