"""Stage 3: quality criteria, SVM ranking and final nugget selection."""

from .criteria import complexity, count_syllables, reading_level, score_criteria
from .mining import mine_negatives
from .ranking import SelectionConfig, rank_common, rank_dogmatiq, rank_sample, select, vectors_from_provenance
from .svm import SvmHyperparams, SvmModel, TrainingError, holdout_accuracy, train_from_arrays, train_svm

__all__ = [
    "SelectionConfig",
    "SvmHyperparams",
    "SvmModel",
    "TrainingError",
    "complexity",
    "count_syllables",
    "holdout_accuracy",
    "mine_negatives",
    "rank_common",
    "rank_dogmatiq",
    "rank_sample",
    "reading_level",
    "score_criteria",
    "select",
    "train_from_arrays",
    "train_svm",
    "vectors_from_provenance",
]
