"""Group-robustness toolkit for embedding-space classifiers.

Trains a small adapter that debiases frozen image embeddings against
natural-language sub-population descriptions, and benchmarks it against
label-based robust-training baselines (tail-risk and chi-square-ball
reweighting, two-phase upweighting) under worst-group evaluation.
"""

from .adapter import (
    AdapterMLP,
    GradCheckReport,
    OptimizerState,
    backward,
    forward,
    grad_check,
    init_adapter,
    load_checkpoint,
    save_checkpoint,
    step,
)
from .dro import DroConfig, DualState, chi2_risk, cvar_risk, train_dro, train_two_phase
from .ldro import LdroRun, eta_sweep, train_ldro, train_stacked
from .losses import (
    LdroConfig,
    cosine_sim,
    cross_entropy_logits,
    entropy_loss,
    ldro_objective,
    softmax,
)
from .report import EpochRow, TrainReport, read_metric_log, write_metric_log
from .store import (
    EmbeddingMatrix,
    GroupedDataset,
    PromptSet,
    load_prompt_set,
    load_split,
    read_embeddings,
    read_metadata,
    save_prompt_set,
    save_split,
    write_embeddings,
    write_metadata,
)
from .synth import SynthConfig, SynthResult, attr_from_group, generate, group_probe
from .zeroshot import (
    Classifier,
    EvalReport,
    ModelCandidate,
    evaluate,
    predict,
    select_model,
    write_report,
)

__version__ = "0.1.0"

__all__ = [
    "AdapterMLP",
    "Classifier",
    "DroConfig",
    "DualState",
    "EmbeddingMatrix",
    "EpochRow",
    "EvalReport",
    "GradCheckReport",
    "GroupedDataset",
    "LdroConfig",
    "LdroRun",
    "ModelCandidate",
    "OptimizerState",
    "PromptSet",
    "SynthConfig",
    "SynthResult",
    "TrainReport",
    "attr_from_group",
    "backward",
    "chi2_risk",
    "cosine_sim",
    "cross_entropy_logits",
    "cvar_risk",
    "entropy_loss",
    "eta_sweep",
    "evaluate",
    "forward",
    "generate",
    "grad_check",
    "group_probe",
    "init_adapter",
    "ldro_objective",
    "load_checkpoint",
    "load_prompt_set",
    "load_split",
    "predict",
    "read_embeddings",
    "read_metadata",
    "read_metric_log",
    "save_checkpoint",
    "save_prompt_set",
    "save_split",
    "select_model",
    "softmax",
    "step",
    "train_dro",
    "train_ldro",
    "train_stacked",
    "train_two_phase",
    "write_embeddings",
    "write_metadata",
    "write_metric_log",
    "write_report",
]
