"""Shared helpers: tiny corpora and models small enough for exhaustive
finite-difference checks.

Gradient checks are run at generic smooth points: zero-initialized hidden
biases are offset by a small constant so no ReLU pre-activation sits within
the finite-difference step of its kink (which would bias the numeric
derivative without indicating any defect in the backward rules).
"""

import numpy as np
import pytest

from textvae import DecoderArch, LanguageModel, ModelConfig, VaeModel
from textvae.data import SyntheticSpec, batchify, generate_synthetic
from textvae.semisup import SemiVae

RELU_BIAS_OFFSET = 0.05


def clear_relu_kinks(model) -> None:
    for name, t in model.params.items():
        if name.endswith(".0.b"):
            t.data += RELU_BIAS_OFFSET


def uniform_chain(v: int) -> np.ndarray:
    return np.full((v, v), 1.0 / v)


def cycle_chain(v: int) -> np.ndarray:
    m = np.zeros((v, v))
    for i in range(v):
        m[i, (i + 1) % v] = 1.0
    return m


def tiny_corpus(num_classes=2, vocab_size=6, docs_per_class=8, length=(3, 5), seed=1):
    spec = SyntheticSpec(
        num_classes=num_classes,
        vocab_size=vocab_size,
        transitions=[uniform_chain(vocab_size)] * num_classes,
        length_min=length[0],
        length_max=length[1],
        docs_per_class=docs_per_class,
        seed=seed,
    )
    return generate_synthetic(spec)


def tiny_batch(seed=1, batch_size=4, **kwargs):
    docs, vocab, _ = tiny_corpus(seed=seed, **kwargs)
    return batchify(docs, batch_size, np.random.default_rng(0))[0], vocab


def tiny_cnn_arch(k=2, dilations=(1, 2), c_ext=6, c_int=4) -> DecoderArch:
    return DecoderArch(kind="cnn", filter_size=k, dilations=dilations, channels_ext=c_ext, channels_int=c_int)


def tiny_lstm_arch(hidden=5) -> DecoderArch:
    return DecoderArch(kind="lstm", lstm_hidden=hidden)


def tiny_vae(vocab_size=10, arch=None, seed=0, z_dim=3, **overrides) -> VaeModel:
    config = ModelConfig(
        vocab_size=vocab_size,
        decoder=arch or tiny_cnn_arch(),
        embed_dim=overrides.pop("embed_dim", 5),
        encoder_hidden=overrides.pop("encoder_hidden", 6),
        posterior_hidden=overrides.pop("posterior_hidden", 6),
        z_dim=z_dim,
        **overrides,
    )
    model = VaeModel(config, seed=seed)
    clear_relu_kinks(model)
    return model


def tiny_lm(vocab_size=10, arch=None, seed=0, **overrides) -> LanguageModel:
    config = ModelConfig(
        vocab_size=vocab_size,
        decoder=arch or tiny_cnn_arch(),
        embed_dim=overrides.pop("embed_dim", 5),
        lstm_dropout=overrides.pop("lstm_dropout", 0.0),
        **overrides,
    )
    model = LanguageModel(config, seed=seed)
    clear_relu_kinks(model)
    return model


def tiny_semi(vocab_size=9, num_classes=3, arch=None, seed=0, z_dim=2, **overrides) -> SemiVae:
    config = ModelConfig(
        vocab_size=vocab_size,
        decoder=arch or tiny_cnn_arch(c_ext=5, c_int=4),
        embed_dim=overrides.pop("embed_dim", 4),
        encoder_hidden=overrides.pop("encoder_hidden", 5),
        posterior_hidden=overrides.pop("posterior_hidden", 5),
        classifier_hidden=overrides.pop("classifier_hidden", 4),
        z_dim=z_dim,
        num_classes=num_classes,
        **overrides,
    )
    model = SemiVae(config, seed=seed)
    clear_relu_kinks(model)
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def cycle_lm_setup():
    """LSTM-LM trained to near-zero loss on a deterministic cycle corpus.

    Session-scoped: the trained model backs both the entropy-floor check and
    the beam-search cycle-reproduction check.
    """
    from textvae.training import Schedule, TrainConfig, train_lm

    v = 8
    start = np.zeros(v)
    start[0] = 1.0
    spec = SyntheticSpec(
        num_classes=1,
        vocab_size=v,
        transitions=[cycle_chain(v)],
        length_min=12,
        length_max=12,
        docs_per_class=200,
        seed=5,
        start=[start],
    )
    docs, vocab, info = generate_synthetic(spec)
    train, val = docs[:160], docs[160:]
    cfg = TrainConfig(
        seed=1,
        batch_size=32,
        base_lr=3e-3,
        beta1=0.9,
        schedule=Schedule(epochs=100, kl_anneal_iters=200, lr_half_start_epoch=80),
    )
    model = LanguageModel(
        ModelConfig(
            vocab_size=vocab.size,
            decoder=DecoderArch(kind="lstm", lstm_hidden=32),
            embed_dim=12,
            lstm_dropout=0.0,
            drop_word=0.0,
        ),
        seed=1,
    )
    result = train_lm(model, train, val, cfg)
    return {"model": model, "vocab": vocab, "docs": docs, "result": result, "info": info}
