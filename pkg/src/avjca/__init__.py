"""Joint cross-attentional audio-visual fusion for speaker verification."""

from .errors import AvjcaError, ContractError, DimensionError, FormatError
from .features import (
    SyntheticConfig,
    Trial,
    UtteranceFeatures,
    make_trials,
    read_features,
    read_trials,
    synth_dataset,
    write_features,
    write_scores,
)
from .metrics import EerResult, compute_eer, eer_oracle
from .pipeline import embed_utterances, evaluate_pipeline
from .training import ModelCheckpoint, TrainConfig, desk_config, fit, load_model, save_model

__version__ = "0.1.0"
