"""Cloned hidden Markov models: block-sparse HMMs with deterministic emissions."""

from chmm.errors import ChmmError, ImpossibleSequenceError
from chmm.inference import (
    EvidenceSequence,
    Soft,
    bits_per_symbol,
    forward,
    forward_backward,
    log_likelihood,
    smoothed,
    viterbi,
)
from chmm.io import load_model, save_model
from chmm.learning import (
    EmConfig,
    OnlineEmConfig,
    TrainReport,
    fit_batch_em,
    fit_online_em,
    fit_with_early_stopping,
    test_bps,
)
from chmm.model import (
    Alphabet,
    BlockStructure,
    BlockTransitionModel,
    CloneLayout,
    allocate_clones_by_frequency,
    allocate_clones_by_ngram,
    init_random,
)

__version__ = "0.1.0"

__all__ = [
    "Alphabet", "BlockStructure", "BlockTransitionModel", "ChmmError", "CloneLayout", "EmConfig",
    "EvidenceSequence", "ImpossibleSequenceError", "OnlineEmConfig", "Soft", "TrainReport",
    "allocate_clones_by_frequency", "allocate_clones_by_ngram", "bits_per_symbol", "fit_batch_em",
    "fit_online_em", "fit_with_early_stopping", "forward", "forward_backward", "init_random",
    "load_model", "log_likelihood", "save_model", "smoothed", "test_bps", "viterbi",
]
