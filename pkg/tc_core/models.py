"""
Pydantic models for run configuration and manifests.
Validators enforce the invariants of each configuration block.
"""

from typing import Dict, List, Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

import config


class RegressorConfig(BaseModel):
    """Shape of the feedforward heading regressor (output dim fixed at 2)."""
    model_config = ConfigDict(frozen=True)

    input_dim: int = config.FEATURE_DIM
    hidden_dims: List[int] = Field(default_factory=lambda: list(config.HIDDEN_DIMS))
    activation: Literal["tanh", "relu"] = config.ACTIVATION
    init_scale: float = config.INIT_SCALE
    seed: int = 0

    @field_validator("input_dim")
    @classmethod
    def _positive_input(cls, v: int) -> int:
        if v < 1:
            raise ValueError(f"input_dim must be >= 1, got {v}")
        return v

    @field_validator("hidden_dims")
    @classmethod
    def _positive_hidden(cls, v: List[int]) -> List[int]:
        if any(h < 1 for h in v):
            raise ValueError(f"every hidden dim must be >= 1, got {v}")
        return v

    @field_validator("init_scale")
    @classmethod
    def _non_negative_scale(cls, v: float) -> float:
        if v < 0:
            raise ValueError(f"init_scale must be >= 0, got {v}")
        return v

    @property
    def layer_dims(self) -> List[int]:
        return [self.input_dim, *self.hidden_dims, 2]


class LossConfig(BaseModel):
    """Hyperparameters of the combined objective."""
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    lambda_: float = Field(default=config.LAMBDA, alias="lambda")
    alpha: float = config.ALPHA
    margin: float = config.MARGIN
    variant: Literal["pairwise", "triplet"] = config.VARIANT
    triplet_samples_per_sequence: int = config.TRIPLETS_PER_SEQUENCE
    near_window: int = config.TRIPLET_NEAR_WINDOW
    supervised_weight: float = 1.0

    @model_validator(mode="after")
    def _check_ranges(self) -> "LossConfig":
        if self.lambda_ < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lambda_}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if self.margin < 0:
            raise ValueError(f"margin must be >= 0, got {self.margin}")
        if self.variant == "triplet" and self.triplet_samples_per_sequence < 1:
            raise ValueError("triplet_samples_per_sequence must be >= 1 for the triplet variant")
        if self.near_window < 1:
            raise ValueError(f"near_window must be >= 1, got {self.near_window}")
        if self.supervised_weight < 0:
            raise ValueError(f"supervised_weight must be >= 0, got {self.supervised_weight}")
        return self


class OptimizerConfig(BaseModel):
    """Adam settings."""
    model_config = ConfigDict(frozen=True)

    learning_rate: float = config.LEARNING_RATE
    beta1: float = config.BETA1
    beta2: float = config.BETA2
    epsilon: float = config.EPSILON

    @model_validator(mode="after")
    def _check_ranges(self) -> "OptimizerConfig":
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError(f"betas must lie in [0, 1), got ({self.beta1}, {self.beta2})")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        return self


class TrainConfig(BaseModel):
    """One training or fine-tuning run. The three seeds feed independent streams."""
    model_config = ConfigDict(frozen=True)

    iterations: int = config.TRAIN_ITERATIONS
    labeled_batch_size: int = config.LABELED_BATCH_SIZE
    unlabeled_sequence_length: int = config.UNLABELED_SEQUENCE_LENGTH
    eval_every: int = config.EVAL_EVERY
    loss: LossConfig = Field(default_factory=LossConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    regressor: RegressorConfig = Field(default_factory=RegressorConfig)
    init_seed: int = 0
    labeled_stream_seed: int = 1
    unlabeled_stream_seed: int = 2

    @model_validator(mode="after")
    def _check_ranges(self) -> "TrainConfig":
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.labeled_batch_size < 1:
            raise ValueError(f"labeled_batch_size must be >= 1, got {self.labeled_batch_size}")
        if self.unlabeled_sequence_length < 2:
            raise ValueError(f"unlabeled_sequence_length must be >= 2, got {self.unlabeled_sequence_length}")
        if self.loss.variant == "triplet" and self.unlabeled_sequence_length < 3:
            raise ValueError("triplet variant needs unlabeled_sequence_length >= 3")
        if self.eval_every < 1:
            raise ValueError(f"eval_every must be >= 1, got {self.eval_every}")
        return self

    def with_lambda(self, value: float) -> "TrainConfig":
        return self.model_copy(update={"loss": self.loss.model_copy(update={"lambda_": value})})

    def with_seeds(self, seed: int) -> "TrainConfig":
        """Derive the three stream seeds from one run seed."""
        return self.model_copy(update={
            "init_seed": 3 * seed,
            "labeled_stream_seed": 3 * seed + 1,
            "unlabeled_stream_seed": 3 * seed + 2,
        })


class DatasetConfig(BaseModel):
    """Synthetic dataset generation settings."""
    model_config = ConfigDict(frozen=True)

    train_sequences: int = config.TRAIN_SEQUENCES
    val_sequences: int = config.VAL_SEQUENCES
    sequence_length: int = config.SEQUENCE_LENGTH
    label_fraction: float = 1.0
    feature_dim: int = config.FEATURE_DIM
    noise_std: float = config.NOISE_STD
    max_heading_step: float = config.MAX_HEADING_STEP
    speed: float = 1.0
    label_source: Literal["truth", "motion"] = "truth"
    motion_window: int = 2
    domain_seed: int = 0
    seed: int = 0

    @model_validator(mode="after")
    def _check_ranges(self) -> "DatasetConfig":
        if self.train_sequences < 1:
            raise ValueError("need at least one training sequence")
        if self.val_sequences < 0:
            raise ValueError(f"val_sequences must be >= 0, got {self.val_sequences}")
        if self.sequence_length < 2:
            raise ValueError(f"sequence_length must be >= 2, got {self.sequence_length}")
        if not 0.0 <= self.label_fraction <= 1.0:
            raise ValueError(f"label_fraction must lie in [0, 1], got {self.label_fraction}")
        if self.feature_dim < 1:
            raise ValueError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.speed <= 0:
            raise ValueError(f"speed must be > 0, got {self.speed}")
        return self


class ExperimentConfig(BaseModel):
    """Shared settings for the sweep presets."""
    model_config = ConfigDict(frozen=True)

    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    finetune_iterations: int = config.FINETUNE_ITERATIONS
    finetune_label_fraction: float = config.FINETUNE_LABELS_PER_SEQUENCE / config.SEQUENCE_LENGTH
    four_setting_label_fraction: float = 0.02  # 10 labels/sequence, 500 labeled samples over 50 sequences
    lambda_label_fraction: float = config.LAMBDA_SWEEP_LABEL_FRACTION
    lambda_loss: LossConfig = Field(default_factory=lambda: LossConfig(
        variant=config.LAMBDA_SWEEP_VARIANT, alpha=config.LAMBDA_SWEEP_ALPHA, margin=config.LAMBDA_SWEEP_MARGIN))
    lambda_window: int = config.LAMBDA_SWEEP_WINDOW
    lambda_heading_step: float = config.LAMBDA_SWEEP_HEADING_STEP
    circle_radius: float = 5.0
    circle_frames: int = 200
    shift_seed: int = 1
    shift_strength: float = config.SHIFT_STRENGTH
    ssl_lambda: float = config.LAMBDA

    @field_validator("shift_strength")
    @classmethod
    def _strength_in_range(cls, v: float) -> float:
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"shift_strength must lie in [0, 1], got {v}")
        return v

    @field_validator("lambda_window")
    @classmethod
    def _window_long_enough(cls, v: int) -> int:
        if v < 3:
            raise ValueError(f"lambda_window must be >= 3, got {v}")
        return v


class RunManifest(BaseModel):
    """Record written next to every CLI output."""
    format: str = config.MANIFEST_FORMAT
    command: str
    config: Dict[str, str] = Field(default_factory=dict)
    seeds: Dict[str, int] = Field(default_factory=dict)
    inputs: List[str] = Field(default_factory=list)
    outputs: List[str] = Field(default_factory=list)
    duration_s: float = 0.0
    format_versions: Dict[str, str] = Field(default_factory=dict)
