# Configuration file for the heading regression experiments
# Change the defaults here to switch the reference setup easily!

import os
from dataclasses import dataclass, field

from dotenv import load_dotenv

env_path = os.path.join(os.path.dirname(os.path.abspath(__file__)), '.env')
# Variables already set in the shell win over the repo .env
load_dotenv(env_path, override=False)

# Synthetic data
FEATURE_DIM = 16
SEQUENCE_LENGTH = 500  # ~500 frames per filmed sequence
TRAIN_SEQUENCES = 50
VAL_SEQUENCES = 10
NOISE_STD = 0.05
MAX_HEADING_STEP = 0.1  # rad per frame for random walks
FINETUNE_LABELS_PER_SEQUENCE = 6

# Model
HIDDEN_DIMS = [32, 32]
ACTIVATION = "tanh"
INIT_SCALE = 1.0

# Losses
LAMBDA = 0.1
ALPHA = 0.5
MARGIN = 0.05
VARIANT = "triplet"
TRIPLETS_PER_SEQUENCE = 32
TRIPLET_NEAR_WINDOW = 3
# Longer windows fall back to sampled triplets drawn from a fixed-seed generator
EXHAUSTIVE_TRIPLET_MAX_FRAMES = 64
SIDE_TRIPLET_SEED = 0

# Optimiser (Adam)
LEARNING_RATE = 1e-3
BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8

# Training loop
TRAIN_ITERATIONS = 2000
FINETUNE_ITERATIONS = 500
LABELED_BATCH_SIZE = 64
UNLABELED_SEQUENCE_LENGTH = 32
EVAL_EVERY = 100

# Experiment presets
SWEEP_SEEDS = [0, 1, 2, 3, 4]
SWEEP_FRACTIONS = [0.01, 0.1, 1.0]
SWEEP_LAMBDAS = [0.0, 0.1, 10.0]

# Domain shift: 0 leaves the source domain unchanged, 1 is the strongest supported shift
SHIFT_STRENGTH = 0.3

# Lambda sweep: slowly turning walks and a long pairwise window with slow similarity decay,
# so a heavily weighted continuity term can pull every output of a sequence together
LAMBDA_SWEEP_LABEL_FRACTION = 0.01
LAMBDA_SWEEP_VARIANT = "pairwise"
LAMBDA_SWEEP_ALPHA = 0.01
LAMBDA_SWEEP_MARGIN = 0.0
LAMBDA_SWEEP_WINDOW = 128
LAMBDA_SWEEP_HEADING_STEP = 0.3

# Formats
DATASET_FORMAT = "tempocont-dataset v1"
CHECKPOINT_FORMAT = "tempocont-checkpoint v1"
MANIFEST_FORMAT = "tempocont-manifest v1"


def _env_flag(name: str) -> bool:
    return (os.getenv(name) or "0").strip().lower() in ("1", "true", "yes")


@dataclass
class EnvSettings:
    """Settings read from the environment (or the repo .env) when instantiated."""
    seed: int = field(default_factory=lambda: int(os.getenv("TEMPOCONT_SEED") or 0))
    log_level: str = field(default_factory=lambda: (os.getenv("TEMPOCONT_LOG_LEVEL") or "INFO").upper())
    run_slow: bool = field(default_factory=lambda: _env_flag("TEMPOCONT_RUN_SLOW"))
