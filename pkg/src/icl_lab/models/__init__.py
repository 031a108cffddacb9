"""Sequence-model architectures with exact gradients."""

from icl_lab.models.blocks import (
    CausalConv1d,
    CausalSelfAttention,
    LTISSMCore,
    MambaBlock,
    MLPBlock,
    ResidualBlock,
    S4Block,
    SelectiveSSMCore,
)
from icl_lab.models.checkpoint import (
    Checkpoint,
    load_checkpoint,
    restore_model,
    save_checkpoint,
)
from icl_lab.models.config import ArchitectureId, ModelConfig, layout
from icl_lab.models.model import SequenceModel, build_model
from icl_lab.models.scan import (
    HAS_NUMBA,
    SCAN_IMPLS,
    linear_scan,
    lti_scan,
    scan_parallel,
    scan_ref,
    selective_scan,
)

__all__ = [
    "ArchitectureId",
    "CausalConv1d",
    "CausalSelfAttention",
    "Checkpoint",
    "HAS_NUMBA",
    "LTISSMCore",
    "MLPBlock",
    "MambaBlock",
    "ModelConfig",
    "ResidualBlock",
    "S4Block",
    "SCAN_IMPLS",
    "SelectiveSSMCore",
    "SequenceModel",
    "build_model",
    "layout",
    "linear_scan",
    "load_checkpoint",
    "lti_scan",
    "restore_model",
    "save_checkpoint",
    "scan_parallel",
    "scan_ref",
    "selective_scan",
]
