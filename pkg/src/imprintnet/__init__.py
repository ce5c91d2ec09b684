"""Low-shot classification by weight imprinting.

A small neural network with an L2-normalized embedding and a cosine
classifier head learns the populous classes; a scarce class is then added
by imprinting its head column from the averaged embeddings of a handful of
examples, optionally followed by fine-tuning. The package also carries the
evaluation protocol that compares this against joint training from
scratch: stratified k-fold cross-validation, n-shot subsampling, uniform
class oversampling, and per-class sensitivity/PPV reporting.
"""

from .data import (CsvParseError, DataError, Dataset, FoldPlan,
                   StratificationError, SyntheticSpec, load_csv,
                   oversample_batches, save_csv, select_nshot,
                   shuffled_batches, stratified_kfold, synth_generate,
                   train_val_split)
from .estimator import EmbeddingClassifier
from .harness import (CsvSource, ExperimentConfig, build_fold_plan,
                      load_dataset, novel_sensitivity_by_seed, nshot_sweep,
                      resolve_novel_class, run_experiment,
                      run_imprinted_pipeline, run_joint_pipeline,
                      write_results, write_summary_csv)
from .imprinting import (DegenerateImprintError, compute_imprinted_vector,
                         imprint_extend_head, imprint_pipeline)
from .metrics import (accuracy, confusion_matrix, macro_average, mean_std,
                      per_class_ppv, per_class_sensitivity, ppv, sensitivity)
from .network import (ModelParams, NetworkSpec, forward_embed,
                      forward_logits, head_logits, init_params,
                      load_checkpoint, save_checkpoint)
from .optim import MomentumSgd, StepDecaySchedule
from .seeding import derive_rng, derive_seed, seed_sequence
from .tensor import (Tensor, grad_check, l2_normalize, no_grad,
                     softmax_cross_entropy)
from .training import (TrainingDivergedError, TrainResult, TrainSettings,
                       evaluate_accuracy, train)

__version__ = "1.0.0"

__all__ = [
    "CsvParseError",
    "CsvSource",
    "DataError",
    "Dataset",
    "DegenerateImprintError",
    "EmbeddingClassifier",
    "ExperimentConfig",
    "FoldPlan",
    "ModelParams",
    "MomentumSgd",
    "NetworkSpec",
    "StepDecaySchedule",
    "StratificationError",
    "SyntheticSpec",
    "Tensor",
    "TrainResult",
    "TrainSettings",
    "TrainingDivergedError",
    "accuracy",
    "build_fold_plan",
    "compute_imprinted_vector",
    "confusion_matrix",
    "derive_rng",
    "derive_seed",
    "evaluate_accuracy",
    "forward_embed",
    "forward_logits",
    "grad_check",
    "head_logits",
    "imprint_extend_head",
    "imprint_pipeline",
    "init_params",
    "l2_normalize",
    "load_checkpoint",
    "load_csv",
    "load_dataset",
    "macro_average",
    "mean_std",
    "no_grad",
    "novel_sensitivity_by_seed",
    "nshot_sweep",
    "oversample_batches",
    "per_class_ppv",
    "per_class_sensitivity",
    "ppv",
    "resolve_novel_class",
    "run_experiment",
    "run_imprinted_pipeline",
    "run_joint_pipeline",
    "save_checkpoint",
    "save_csv",
    "seed_sequence",
    "select_nshot",
    "sensitivity",
    "shuffled_batches",
    "softmax_cross_entropy",
    "stratified_kfold",
    "synth_generate",
    "train",
    "train_val_split",
    "write_results",
    "write_summary_csv",
]
