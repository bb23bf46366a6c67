"""Personalized feature translation: source-free per-subject adaptation.

A frozen feature extractor and classifier are trained on labeled source
subjects; a lightweight residual translator is pretrained to swap subject
style between source subjects while preserving the predicted class, then
personalized per target subject from neutral-only samples. Everything runs
on a small taped autodiff engine over numpy arrays.
"""

from .losses import LossWeights, cross_entropy, kl_divergence, source_total, style_loss, target_loss
from .models import Classifier, FeatureExtractor, LayeredFeatures, Translator, count_cost, set_frozen
from .numerics import NumericError, ShapeError, Tape, TapeError, Tensor, backward, forward_op
from .optim import Adam, ReduceLROnPlateau
from .pairing import Pair, PairingConfig, pair_cosine, pair_landmark, pair_random, procrustes_residual
from .pipeline import (EvalReport, EvalRow, TrainConfig, adapt_target, evaluate, oracle_finetune,
                       predict, pretrain_translator, run_benchmark, train_source_classifier)
from .synthdata import Dataset, DatasetSpec, Sample, SubjectProfile, generate_dataset

__version__ = "0.1.0"
