"""vdslim: compress-and-recover toolkit for temporal video denoisers.

Pipeline pieces: physics-informed sensor noise synthesis, a minimal
reverse-mode tensor engine, a 5-frame two-stage cascade denoiser, proximal
sparse training, structured channel pruning, and Charbonnier knowledge
distillation, plus clip/model serialization and a CLI binding them together.
"""

__version__ = "0.1.0"

from .tensor import Tensor, GradTape
from .network import (
    LayerSpec,
    BlockSpec,
    NetworkSpec,
    Model,
    build,
    builtin_spec_path,
    count_params,
    denoise_clip,
    forward_block,
    forward_cascade,
    load_network_spec,
    resolve_spec,
    save_network_spec,
)
from .noise import NoiseParams, ParamRanges, corrupt_clip, corrupt_clip_awgn, sample_params
from .metrics import MetricReport, charbonnier, evaluate, psnr, ssim
from .sparsity import SparsityConfig, lambda_schedule, prox_soft_threshold, train_sparse
from .pruning import (
    LayerSparsity,
    PruningPlan,
    analyze_sparsity,
    apply_plan,
    plan_channels,
    plan_to_spec,
)
from .distill import (
    DistillConfig,
    FileTeacher,
    NetworkTeacher,
    OracleTeacher,
    Teacher,
    distill_loss,
    train_distill,
    train_supervised,
)
from .clipio import read_clip, read_model, write_clip, write_model
from .estimators import (
    CascadeDenoiser,
    ClipCorruptor,
    DistillStudent,
    SparsityPruner,
)

__all__ = [
    "Tensor",
    "GradTape",
    "LayerSpec",
    "BlockSpec",
    "NetworkSpec",
    "Model",
    "build",
    "builtin_spec_path",
    "count_params",
    "denoise_clip",
    "forward_block",
    "forward_cascade",
    "load_network_spec",
    "resolve_spec",
    "save_network_spec",
    "NoiseParams",
    "ParamRanges",
    "corrupt_clip",
    "corrupt_clip_awgn",
    "sample_params",
    "MetricReport",
    "charbonnier",
    "evaluate",
    "psnr",
    "ssim",
    "SparsityConfig",
    "lambda_schedule",
    "prox_soft_threshold",
    "train_sparse",
    "LayerSparsity",
    "PruningPlan",
    "analyze_sparsity",
    "apply_plan",
    "plan_channels",
    "plan_to_spec",
    "DistillConfig",
    "FileTeacher",
    "NetworkTeacher",
    "OracleTeacher",
    "Teacher",
    "distill_loss",
    "train_distill",
    "train_supervised",
    "read_clip",
    "read_model",
    "write_clip",
    "write_model",
    "CascadeDenoiser",
    "ClipCorruptor",
    "DistillStudent",
    "SparsityPruner",
    "__version__",
]
