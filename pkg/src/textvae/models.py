"""Generative text models: autoregressive language models and VAEs with an
LSTM encoder and either an LSTM or a dilated-causal-CNN decoder.

Conditioning conventions: a CNN decoder sees the latent vector concatenated
onto every input embedding; an LSTM decoder additionally starts from an
initial state computed from the latent by an MLP.  A language model is the
same decoder with zero-width conditioning.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Batch, Document, PAD_ID, UNK_ID, batchify
from .errors import ConfigError, DimensionError, InputError
from .layers import (
    DecoderArch,
    LstmParams,
    MlpParams,
    ParamSet,
    ResidualBlockParams,
    drop_word,
    lstm_sequence,
    lstm_encode,
    mlp,
)
from .rng import derive_rng

# hyperparameter selection sets from the original recipe; desk-scale runs may
# override freely, these are the documented defaults and search ranges
Z_DIM_CHOICES = (32, 64)
LSTM_DROPOUT_CHOICES = (0.3, 0.5)
DROP_WORD_CHOICES = (0.0, 0.3, 0.5, 0.7)


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions and rates for one model; shared by all model kinds."""

    vocab_size: int
    decoder: DecoderArch
    embed_dim: int = 32
    encoder_hidden: int = 64
    posterior_hidden: int = 64
    z_dim: int = 32
    num_classes: int = 0  # > 0 enables the label-conditioned (semi) variant
    classifier_hidden: int = 64
    lstm_dropout: float = 0.3
    cnn_dropout: float = 0.1
    drop_word: float = 0.0

    def __post_init__(self):
        if self.vocab_size < 4:
            raise ConfigError(f"vocab_size must cover the reserved ids, got {self.vocab_size}")
        if self.drop_word > 0 and self.decoder.kind != "lstm":
            raise ConfigError("drop-word applies to LSTM decoders only")
        for rate in (self.lstm_dropout, self.cnn_dropout, self.drop_word):
            if not 0.0 <= rate < 1.0:
                raise ConfigError(f"rates must be in [0, 1), got {rate}")


@dataclass
class GaussianPosterior:
    """Diagonal Gaussian q(z|x) as (mean, log variance), each [batch, z_dim]."""

    mu: Tensor
    logvar: Tensor


def reparameterize(post: GaussianPosterior, eps: np.ndarray | Tensor) -> Tensor:
    """z = mu + exp(logvar / 2) * eps; differentiable in mu and logvar."""
    eps_t = eps if isinstance(eps, Tensor) else Tensor(eps)
    if eps_t.shape != post.mu.shape:
        raise DimensionError(f"eps shape {eps_t.shape} does not match mu shape {post.mu.shape}")
    return post.mu + ad.exp(0.5 * post.logvar) * eps_t


def kl_to_standard_normal(post: GaussianPosterior) -> Tensor:
    """KL(q || N(0, I)) summed over z dimensions, one value per example."""
    term = post.mu * post.mu + ad.exp(post.logvar) - 1.0 - post.logvar
    return (0.5 * term).sum(axis=1)


@dataclass
class LossBreakdown:
    """ELBO pieces in nats per document (batch means); total is exact."""

    reconstruction: Tensor
    kl: Tensor
    kl_weight: float
    total: Tensor = field(init=False)

    def __post_init__(self):
        self.total = self.reconstruction + self.kl_weight * self.kl


# ---------------------------------------------------------------------------
# decoder stacks


class _CnnDecoder:
    def __init__(self, params: ParamSet, arch: DecoderArch, in_dim: int, vocab_size: int, dropout_rate: float):
        self.arch = arch
        self.dropout_rate = dropout_rate
        self.w_in = params.new("dec_cnn.in.w", (arch.channels_ext, in_dim, 1))
        self.b_in = params.new("dec_cnn.in.b", (arch.channels_ext,), init="zeros")
        self.blocks = [
            ResidualBlockParams.create(
                params, f"dec_cnn.block{i}", arch.channels_ext, arch.channels_int, arch.filter_size, d
            )
            for i, d in enumerate(arch.dilations)
        ]
        self.w_out = params.new("dec_head.w", (arch.channels_ext, vocab_size))
        self.b_out = params.new("dec_head.b", (vocab_size,), init="zeros")

    def logits(self, cond: Tensor, z: Tensor | None, dropout_rng) -> Tensor:
        from .layers import residual_block

        batch, T, _ = cond.shape
        x = cond.transpose(0, 2, 1)
        x = ad.conv1d_causal(x, self.w_in, 1) + self.b_in.reshape(1, -1, 1)
        for block in self.blocks:
            if dropout_rng is not None and self.dropout_rate > 0:
                x = ad.dropout(x, self.dropout_rate, dropout_rng)
            x = residual_block(block, x)
        x = ad.relu(x)
        h = x.transpose(0, 2, 1).reshape(batch * T, self.arch.channels_ext)
        out = ad.matmul(h, self.w_out) + self.b_out
        return out.reshape(batch, T, -1)


class _LstmDecoder:
    def __init__(self, params: ParamSet, arch: DecoderArch, in_dim: int, vocab_size: int, dropout_rate: float,
                 state_dim: int = 0, posterior_hidden: int = 0):
        self.arch = arch
        self.dropout_rate = dropout_rate
        self.lstm = LstmParams.create(params, "dec_lstm", in_dim, arch.lstm_hidden)
        self.w_out = params.new("dec_head.w", (arch.lstm_hidden, vocab_size))
        self.b_out = params.new("dec_head.b", (vocab_size,), init="zeros")
        self.state_mlp: MlpParams | None = None
        if state_dim > 0:
            self.state_mlp = MlpParams.create(
                params, "dec_state", [state_dim, posterior_hidden, 2 * arch.lstm_hidden]
            )

    def logits(self, cond: Tensor, z: Tensor | None, dropout_rng) -> Tensor:
        batch, T, _ = cond.shape
        h0 = c0 = None
        if z is not None:
            if self.state_mlp is None:
                raise ConfigError("decoder was built without latent conditioning")
            state = mlp(self.state_mlp, z)
            hd = self.arch.lstm_hidden
            h0, c0 = state[:, :hd], state[:, hd:]
        x = cond
        if dropout_rng is not None and self.dropout_rate > 0:
            x = ad.dropout(x, self.dropout_rate, dropout_rng)
        hs = lstm_sequence(self.lstm, x, h0, c0)
        out = ad.matmul(hs.reshape(batch * T, self.arch.lstm_hidden), self.w_out) + self.b_out
        return out.reshape(batch, T, -1)


def _build_decoder(params: ParamSet, config: ModelConfig, in_dim: int, conditioned: bool):
    if config.decoder.kind == "cnn":
        return _CnnDecoder(params, config.decoder, in_dim, config.vocab_size, config.cnn_dropout)
    state_dim = (config.z_dim + config.num_classes) if conditioned else 0
    return _LstmDecoder(
        params,
        config.decoder,
        in_dim,
        config.vocab_size,
        config.lstm_dropout,
        state_dim=state_dim,
        posterior_hidden=config.posterior_hidden,
    )


def _tile_over_time(v: Tensor, T: int) -> Tensor:
    batch, width = v.shape
    return ad.broadcast_to(v.reshape(batch, 1, width), (batch, T, width))


def _masked_recon_rows(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    batch, T, v = logits.shape
    rows = ad.cross_entropy_rows(logits.reshape(batch * T, v), targets.reshape(-1), mask.reshape(-1))
    return rows.reshape(batch, T).sum(axis=1)


# ---------------------------------------------------------------------------
# language model


class LanguageModel:
    """Plain autoregressive model: p(x) = prod_t p(x_t | x_<t)."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.params = ParamSet(seed)
        self.embedding = self.params.new("dec_embedding", (config.vocab_size, config.embed_dim))
        self.decoder = _build_decoder(self.params, config, config.embed_dim, conditioned=False)

    def logits(self, input_ids: np.ndarray, dropout_rng=None) -> Tensor:
        emb = ad.embedding(self.embedding, np.asarray(input_ids, dtype=np.int64))
        return self.decoder.logits(emb, None, dropout_rng)

    def logits_from_embeddings(self, emb: Tensor, dropout_rng=None) -> Tensor:
        """Decoder applied to already-embedded inputs; the causality-probe surface."""
        return self.decoder.logits(emb, None, dropout_rng)

    def loss(self, batch: Batch, dropout_rng=None, drop_word_rng=None) -> Tensor:
        """Masked cross-entropy, mean nats per document."""
        inputs = batch.decoder_inputs()
        if drop_word_rng is not None and self.config.drop_word > 0:
            inputs = drop_word(inputs, self.config.drop_word, drop_word_rng, PAD_ID, UNK_ID)
        logits = self.logits(inputs, dropout_rng)
        recon = _masked_recon_rows(logits, batch.targets(), batch.target_mask())
        return recon.mean()

    def doc_scores(self, batch: Batch, eps_mode: str = "mean", eps_rng=None) -> tuple[np.ndarray, np.ndarray]:
        logits = self.logits(batch.decoder_inputs())
        recon = _masked_recon_rows(logits, batch.targets(), batch.target_mask())
        return recon.data.copy(), np.zeros(batch.size)

    def checkpoint_config(self) -> dict[str, str]:
        return _config_to_strings("lm", self.config)


# ---------------------------------------------------------------------------
# VAE


class VaeModel:
    """Latent-variable model: z ~ N(0, I), x ~ decoder(x_<t, z)."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        if config.num_classes:
            raise ConfigError("VaeModel is unconditional; use SemiVae for labeled variants")
        self.config = config
        self.params = ParamSet(seed)
        self.enc_embedding = self.params.new("enc_embedding", (config.vocab_size, config.embed_dim))
        self.enc_lstm = LstmParams.create(self.params, "enc_lstm", config.embed_dim, config.encoder_hidden)
        self.posterior_mlp = MlpParams.create(
            self.params, "posterior", [config.encoder_hidden, config.posterior_hidden, 2 * config.z_dim]
        )
        self.dec_embedding = self.params.new("dec_embedding", (config.vocab_size, config.embed_dim))
        self.decoder = _build_decoder(self.params, config, config.embed_dim + config.z_dim, conditioned=True)

    def encode(self, batch: Batch, dropout_rng=None) -> GaussianPosterior:
        """Last encoder state -> MLP -> (mu, logvar)."""
        emb = ad.embedding(self.enc_embedding, batch.tokens)
        if dropout_rng is not None and self.config.lstm_dropout > 0:
            emb = ad.dropout(emb, self.config.lstm_dropout, dropout_rng)
        h = lstm_encode(self.enc_lstm, emb, batch.lengths)
        stats = mlp(self.posterior_mlp, h)
        zd = self.config.z_dim
        return GaussianPosterior(mu=stats[:, :zd], logvar=stats[:, zd:])

    def decode_logits(self, z: Tensor, input_ids: np.ndarray, dropout_rng=None) -> Tensor:
        """Logits [batch, T, V]; position t sees tokens < t plus z."""
        input_ids = np.asarray(input_ids, dtype=np.int64)
        emb = ad.embedding(self.dec_embedding, input_ids)
        cond = ad.concat([emb, _tile_over_time(z, input_ids.shape[1])], axis=2)
        return self.decoder.logits(cond, z, dropout_rng)

    def decode_logits_from_embeddings(self, emb: Tensor, z: Tensor, dropout_rng=None) -> Tensor:
        cond = ad.concat([emb, _tile_over_time(z, emb.shape[1])], axis=2)
        return self.decoder.logits(cond, z, dropout_rng)

    def elbo_loss(
        self,
        batch: Batch,
        eps: np.ndarray,
        kl_weight: float,
        dropout_rng=None,
        drop_word_rng=None,
    ) -> LossBreakdown:
        """Single-sample ELBO estimate; total = recon + kl_weight * kl, batch means."""
        if not 0.0 <= kl_weight <= 1.0:
            raise ConfigError(f"kl_weight must lie in [0, 1], got {kl_weight}")
        post = self.encode(batch, dropout_rng)
        z = reparameterize(post, eps)
        inputs = batch.decoder_inputs()
        if drop_word_rng is not None and self.config.drop_word > 0:
            inputs = drop_word(inputs, self.config.drop_word, drop_word_rng, PAD_ID, UNK_ID)
        logits = self.decode_logits(z, inputs, dropout_rng)
        recon = _masked_recon_rows(logits, batch.targets(), batch.target_mask()).mean()
        kl = kl_to_standard_normal(post).mean()
        return LossBreakdown(reconstruction=recon, kl=kl, kl_weight=kl_weight)

    def doc_scores(self, batch: Batch, eps_mode: str = "mean", eps_rng=None) -> tuple[np.ndarray, np.ndarray]:
        """Per-document (reconstruction, KL) in nats, forward only."""
        post = self.encode(batch)
        if eps_mode == "mean":
            z = post.mu
        elif eps_mode == "sample":
            rng = eps_rng if eps_rng is not None else derive_rng(0)
            z = reparameterize(post, rng.standard_normal(post.mu.shape))
        else:
            raise ConfigError(f"eps_mode must be 'mean' or 'sample', got {eps_mode!r}")
        logits = self.decode_logits(z, batch.decoder_inputs())
        recon = _masked_recon_rows(logits, batch.targets(), batch.target_mask())
        kl = kl_to_standard_normal(post)
        return recon.data.copy(), kl.data.copy()

    def checkpoint_config(self) -> dict[str, str]:
        return _config_to_strings("vae", self.config)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalResult:
    """Variational-bound NLL with its decomposition; Table-style reporting."""

    nll: float  # recon + kl, mean nats per document
    kl: float
    recon: float
    ppl: float  # exp(total nats / total predicted tokens)
    n_docs: int
    n_tokens: int
    eps_mode: str


def eval_nll_ppl(model, docs: list[Document], eps_mode: str = "mean", batch_size: int = 64, seed: int = 0) -> EvalResult:
    """Bound-based NLL/PPL over a corpus; KL reported separately.

    NLL uses kl_weight = 1.  In 'mean' mode the reconstruction term is scored
    at z = mu with the KL added analytically; 'sample' mode draws one seeded
    z per document.  Predicted tokens per document = length - 1 (EOS is
    predicted, BOS is input only).
    """
    if not docs:
        raise InputError("cannot evaluate an empty corpus")
    total_recon = total_kl = 0.0
    n_tokens = 0
    for i, batch in enumerate(batchify(docs, batch_size)):
        recon, kl = model.doc_scores(batch, eps_mode=eps_mode, eps_rng=derive_rng(seed, i))
        total_recon += recon.sum()
        total_kl += kl.sum()
        n_tokens += int((batch.lengths - 1).sum())
    n = len(docs)
    return EvalResult(
        nll=float((total_recon + total_kl) / n),
        kl=float(total_kl / n),
        recon=float(total_recon / n),
        ppl=float(np.exp((total_recon + total_kl) / n_tokens)),
        n_docs=n,
        n_tokens=n_tokens,
        eps_mode=eps_mode,
    )


# ---------------------------------------------------------------------------
# config (de)serialization shared with checkpoints


def _config_to_strings(kind: str, c: ModelConfig) -> dict[str, str]:
    d = c.decoder
    return {
        "kind": kind,
        "vocab_size": str(c.vocab_size),
        "embed_dim": str(c.embed_dim),
        "encoder_hidden": str(c.encoder_hidden),
        "posterior_hidden": str(c.posterior_hidden),
        "z_dim": str(c.z_dim),
        "num_classes": str(c.num_classes),
        "classifier_hidden": str(c.classifier_hidden),
        "lstm_dropout": repr(c.lstm_dropout),
        "cnn_dropout": repr(c.cnn_dropout),
        "drop_word": repr(c.drop_word),
        "decoder_kind": d.kind,
        "decoder_name": d.name,
        "filter_size": str(d.filter_size),
        "dilations": ",".join(str(x) for x in d.dilations),
        "channels_ext": str(d.channels_ext),
        "channels_int": str(d.channels_int),
        "lstm_hidden": str(d.lstm_hidden),
    }


def config_from_strings(entries: dict[str, str]) -> tuple[str, ModelConfig]:
    dilations = tuple(int(x) for x in entries["dilations"].split(",") if x)
    arch = DecoderArch(
        kind=entries["decoder_kind"],
        filter_size=int(entries["filter_size"]),
        dilations=dilations,
        channels_ext=int(entries["channels_ext"]),
        channels_int=int(entries["channels_int"]),
        lstm_hidden=int(entries["lstm_hidden"]),
        name=entries.get("decoder_name", "custom"),
    )
    config = ModelConfig(
        vocab_size=int(entries["vocab_size"]),
        decoder=arch,
        embed_dim=int(entries["embed_dim"]),
        encoder_hidden=int(entries["encoder_hidden"]),
        posterior_hidden=int(entries["posterior_hidden"]),
        z_dim=int(entries["z_dim"]),
        num_classes=int(entries["num_classes"]),
        classifier_hidden=int(entries["classifier_hidden"]),
        lstm_dropout=float(entries["lstm_dropout"]),
        cnn_dropout=float(entries["cnn_dropout"]),
        drop_word=float(entries["drop_word"]),
    )
    return entries["kind"], config


def build_model(kind: str, config: ModelConfig, seed: int = 0):
    from .semisup import SemiVae

    if kind == "lm":
        return LanguageModel(config, seed)
    if kind == "vae":
        return VaeModel(config, seed)
    if kind == "semi":
        return SemiVae(config, seed)
    raise ConfigError(f"unknown model kind {kind!r}")
