"""Desk-scale laboratory for in-context-learning experiments.

Trains and evaluates sequence architectures (decoder-only Transformer, LTI
and selective state-space models, Mamba, and attention/Mamba hybrids) on a
suite of nine synthetic in-context-learning tasks, with a shared training
protocol, evaluation protocol, and an analytic FLOPs cost model.
"""

__version__ = "0.1.0"

from icl_lab.tasks import TaskFamily, TaskSpec

__all__ = ["TaskFamily", "TaskSpec", "__version__"]
