"""Desk-scale text VAEs with dilated causal CNN decoders.

A float64 autodiff tape, LSTM/CNN sequence decoders, ELBO training with KL
annealing, a semi-supervised variant with a Gumbel-softmax label relaxation,
unsupervised clustering with a clamped categorical KL, and a CLI.
"""

from .autodiff import Tape, Tensor, conv1d_causal, grad_check, matmul, softmax_cross_entropy
from .data import Batch, Document, SyntheticSpec, Vocabulary, batchify, build_vocab, generate_synthetic
from .layers import DecoderArch, LstmParams, effective_receptive_field
from .models import (
    EvalResult,
    GaussianPosterior,
    LanguageModel,
    LossBreakdown,
    ModelConfig,
    VaeModel,
    eval_nll_ppl,
    kl_to_standard_normal,
    reparameterize,
)
from .semisup import SemiVae, clamped_categorical_kl, cluster_evaluate, gumbel_softmax
from .training import Schedule, TrainConfig, adam_step, kl_weight, learning_rate, train_lm, train_vae

__all__ = [
    "Tape", "Tensor", "conv1d_causal", "grad_check", "matmul", "softmax_cross_entropy",
    "Batch", "Document", "SyntheticSpec", "Vocabulary", "batchify", "build_vocab", "generate_synthetic",
    "DecoderArch", "LstmParams", "effective_receptive_field",
    "EvalResult", "GaussianPosterior", "LanguageModel", "LossBreakdown", "ModelConfig", "VaeModel",
    "eval_nll_ppl", "kl_to_standard_normal", "reparameterize",
    "SemiVae", "clamped_categorical_kl", "cluster_evaluate", "gumbel_softmax",
    "Schedule", "TrainConfig", "adam_step", "kl_weight", "learning_rate", "train_lm", "train_vae",
]

__version__ = "0.1.0"
