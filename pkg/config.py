"""
Configuration module for the RGVAE knowledge-graph toolkit.
"""

import os
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables
load_dotenv()


def _env_float(name: str, default: float) -> float:
    value = os.getenv(name)
    if value is None or value == "":
        return default
    try:
        return float(value)
    except ValueError:
        raise ValueError(f"{name} must be a number, got {value!r}")


def _env_int(name: str, default: int) -> int:
    value = os.getenv(name)
    if value is None or value == "":
        return default
    try:
        return int(value)
    except ValueError:
        raise ValueError(f"{name} must be an integer, got {value!r}")


def _env_bool(name: str, default: bool) -> bool:
    value = os.getenv(name)
    if value is None or value == "":
        return default
    return value.strip().lower() in ("1", "true", "yes", "on")


# Project paths
PROJECT_ROOT = Path(__file__).parent
DATA_DIR = Path(os.getenv("RGVAE_DATA_DIR", PROJECT_ROOT / "data"))
OUTPUT_DIR = Path(os.getenv("RGVAE_OUTPUT_DIR", PROJECT_ROOT / "output"))
CHECKPOINT_DIR = OUTPUT_DIR / "checkpoints"
REPORT_DIR = OUTPUT_DIR / "reports"

# Create directories if not exist
for dir_path in [DATA_DIR, OUTPUT_DIR, CHECKPOINT_DIR, REPORT_DIR]:
    dir_path.mkdir(exist_ok=True, parents=True)

# Dataset file names inside a dataset directory
SPLIT_FILES = {
    'train': 'train.txt',
    'valid': 'valid.txt',
    'test': 'test.txt',
}
TYPE_FILE = 'entity2type.txt'
LABEL_FILE = 'entity2label.txt'

# RGVAE hyperparameters (initial values of the model)
N_NODES = _env_int("RGVAE_N_NODES", 2)
D_Z = _env_int("RGVAE_D_Z", 100)
D_H = _env_int("RGVAE_D_H", 512)
DROPOUT = _env_float("RGVAE_DROPOUT", 0.2)
BETA = _env_float("RGVAE_BETA", 1.0)
DELTA = _env_float("RGVAE_DELTA", 0.0)
PERMINV = _env_bool("RGVAE_PERMINV", True)
CLIPGRAD = _env_bool("RGVAE_CLIPGRAD", True)
CLIPGRAD_MAX_NORM = 1.0
ENCODER = os.getenv("RGVAE_ENCODER", "mlp")
INIT_GAIN = _env_float("RGVAE_INIT_GAIN", 0.01)
PROB_CLIP = 1e-7

# Graph matching
MATCH_ITERATIONS = _env_int("RGVAE_MATCH_ITERATIONS", 40)

# Optimizer (Adam + gradient centralization + lookahead)
LEARNING_RATE = _env_float("RGVAE_LR", 3e-5)
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
LOOKAHEAD_K = _env_int("RGVAE_LOOKAHEAD_K", 6)
LOOKAHEAD_ALPHA = _env_float("RGVAE_LOOKAHEAD_ALPHA", 0.5)
USE_GRADIENT_CENTRALIZATION = _env_bool("RGVAE_USE_GC", True)

# Training
EPOCHS = _env_int("RGVAE_EPOCHS", 60)
BATCH_SIZE = _env_int("RGVAE_BATCH_SIZE", 64)
SEED = _env_int("RGVAE_SEED", 7)

# DistMult baselines
DISTMULT_DIM = _env_int("RGVAE_DISTMULT_DIM", 256)
NEGATIVES_PER_POSITIVE = _env_int("RGVAE_NEGATIVES", 10)
DISTMULT_LR = _env_float("RGVAE_DISTMULT_LR", 0.01)
DISTMULT_LOGVAR_INIT = -6.0

# Link prediction
LP_FRACTION = _env_float("RGVAE_LP_FRACTION", 1.0)
LP_CANDIDATE_BATCH = _env_int("RGVAE_LP_BATCH", 1024)
LP_WORKERS = _env_int("RGVAE_LP_WORKERS", 1)
HITS_AT = (1, 3, 10)

# Latent-space experiments
INTERPOLATION_STEPS = 10
CONFIDENCE_BOUND = 1.96
GENERATION_ATTEMPT_FACTOR = 200
GENERATION_BATCH = 256
KEY_TYPE = os.getenv("RGVAE_KEY_TYPE", "people")

# Logging
LOG_LEVEL = os.getenv("RGVAE_LOG_LEVEL", "INFO")
LOG_FILE = OUTPUT_DIR / "rgvae.log"

# Streamlit configuration
PAGE_TITLE = "RGVAE Experiment Dashboard"
PAGE_ICON = "🕸️"
LAYOUT = "wide"
