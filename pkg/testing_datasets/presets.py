"""
Named experiment scales. "reference" is the full-size setup used by the acceptance
trends; "quick" and "smoke" shrink everything for interactive runs and the default test suite.
"""

from typing import Any, Dict

import config
from tc_core.models import DatasetConfig, ExperimentConfig, LossConfig, RegressorConfig, TrainConfig

EXPERIMENT_PRESETS: Dict[str, Dict[str, Any]] = {
    "reference": {
        "dataset": {},
        "train": {},
        "finetune_iterations": config.FINETUNE_ITERATIONS,
    },

    "quick": {
        "dataset": {"train_sequences": 20, "val_sequences": 5, "sequence_length": 200},
        "train": {"iterations": 600, "eval_every": 100},
        "finetune_iterations": 200,
    },

    "smoke": {
        "dataset": {"train_sequences": 4, "val_sequences": 2, "sequence_length": 40, "feature_dim": 6},
        "train": {"iterations": 30, "eval_every": 10, "labeled_batch_size": 16, "unlabeled_sequence_length": 8},
        "loss": {"triplet_samples_per_sequence": 8},
        "hidden_dims": [8],
        "finetune_iterations": 10,
    },
}

# Seeds / grids per preset name; the reference grid is the full sweep
SWEEP_GRIDS: Dict[str, Dict[str, list]] = {
    "reference": {"seeds": list(config.SWEEP_SEEDS), "fractions": list(config.SWEEP_FRACTIONS),
                  "lambdas": list(config.SWEEP_LAMBDAS)},
    "quick": {"seeds": [0, 1, 2], "fractions": list(config.SWEEP_FRACTIONS), "lambdas": list(config.SWEEP_LAMBDAS)},
    "smoke": {"seeds": [0, 1], "fractions": [0.1, 1.0], "lambdas": [0.0, 0.1]},
}


def experiment_preset(name: str) -> ExperimentConfig:
    """Build the ExperimentConfig of a named preset."""
    if name not in EXPERIMENT_PRESETS:
        raise ValueError(f"Preset '{name}' not found. Available presets: {list(EXPERIMENT_PRESETS)}")
    preset = EXPERIMENT_PRESETS[name]
    dataset = DatasetConfig(**preset.get("dataset", {}))
    regressor = RegressorConfig(
        input_dim=dataset.feature_dim,
        hidden_dims=preset.get("hidden_dims", list(config.HIDDEN_DIMS)),
    )
    train = TrainConfig(
        **preset.get("train", {}),
        loss=LossConfig(**preset.get("loss", {})),
        regressor=regressor,
    )
    return ExperimentConfig(
        dataset=dataset,
        train=train,
        finetune_iterations=preset["finetune_iterations"],
        finetune_label_fraction=config.FINETUNE_LABELS_PER_SEQUENCE / dataset.sequence_length,
    )
