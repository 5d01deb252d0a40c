"""Label-aware VAE: labeled bound L(x, y), unlabeled bound U(x) with a
Gumbel-softmax relaxation over the label, the joint objective J, and the
unsupervised-clustering variant with a clamped categorical KL.

Sign conventions: L and U are lower bounds to be maximized; training code
minimizes their negations.  The exact enumeration over classes is kept next
to the relaxed path as the test oracle for U.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Batch, Document, PAD_ID, UNK_ID, batchify
from .errors import ConfigError, DimensionError, InputError, ParameterError
from .layers import LstmParams, MlpParams, ParamSet, drop_word, lstm_encode, mlp
from .models import (
    GaussianPosterior,
    ModelConfig,
    _build_decoder,
    _config_to_strings,
    _masked_recon_rows,
    _tile_over_time,
    kl_to_standard_normal,
    reparameterize,
)

GUMBEL_EPS = 1e-12


def one_hot(labels: np.ndarray, num_classes: int) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise IndexError(f"label {int(labels.max())} outside {num_classes} classes")
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return Tensor(out)


def gumbel_noise(rng: np.random.Generator, shape) -> np.ndarray:
    u = np.clip(rng.random(shape), GUMBEL_EPS, 1.0 - GUMBEL_EPS)
    return -np.log(-np.log(u))


def gumbel_softmax(logits: Tensor, tau: float, rng: np.random.Generator | None = None,
                   noise: np.ndarray | None = None) -> Tensor:
    """Differentiable relaxed sample: softmax((logits + g) / tau), g ~ Gumbel(0,1).

    Rows are proper distributions for any tau > 0 and concentrate on exact
    categorical samples as tau -> 0.  Pass `noise` to pin the draw.
    """
    if tau <= 0:
        raise ParameterError(f"gumbel-softmax temperature must be positive, got {tau}")
    if noise is None:
        if rng is None:
            raise ParameterError("gumbel_softmax needs an rng or explicit noise")
        noise = gumbel_noise(rng, logits.shape)
    if noise.shape != logits.shape:
        raise DimensionError(f"noise shape {noise.shape} does not match logits {logits.shape}")
    return ad.softmax((logits + Tensor(noise)) * (1.0 / tau), axis=-1)


def categorical_kl_rows(q: Tensor, prior: np.ndarray) -> Tensor:
    """KL(q || prior) per row for a [batch, c] matrix of distributions."""
    log_prior = Tensor(np.log(np.asarray(prior, dtype=np.float64))[None, :])
    return (q * (ad.log(q) - log_prior)).sum(axis=1)


def clamped_categorical_kl(q: Tensor, prior: np.ndarray, gamma: float) -> Tensor:
    """max(gamma, batch-mean KL(q || prior)); no gradient below the clamp."""
    if gamma < 0:
        raise ParameterError(f"gamma must be >= 0, got {gamma}")
    return ad.clamp_min(categorical_kl_rows(q, prior).mean(), gamma)


@dataclass
class BoundParts:
    """One lower bound (batch mean) with its reconstruction/KL decomposition."""

    value: Tensor  # the bound; maximize this
    recon: Tensor  # batch-mean reconstruction nats (positive)
    kl_z: Tensor  # batch-mean KL(q(z|x,y) || N(0,I))
    kl_y: Tensor | None = None  # categorical term, unlabeled bound only
    q_y: Tensor | None = None  # classifier output, unlabeled bound only


@dataclass
class SemiObjectiveTerms:
    """Pieces of J = E[L] + E[U] + alpha * E[log q(y|x)]; loss = -J."""

    labeled_bound: Tensor | None
    unlabeled_bound: Tensor | None
    classifier_loglik: Tensor | None
    alpha: float
    j: Tensor = field(init=False)
    loss: Tensor = field(init=False)

    def __post_init__(self):
        total = Tensor(0.0)
        if self.labeled_bound is not None:
            total = total + self.labeled_bound
        if self.unlabeled_bound is not None:
            total = total + self.unlabeled_bound
        if self.classifier_loglik is not None and self.alpha != 0.0:
            total = total + self.alpha * self.classifier_loglik
        self.j = total
        self.loss = -total


class SemiVae:
    """VAE over (y, z): discrete class plus continuous code, uniform p(y).

    The classifier shares the encoder LSTM; q(z|x, y) conditions on the class
    by concatenating y with the last encoder state, and the decoder sees
    (y ⊕ z) appended to every input embedding exactly as the plain VAE
    treats z.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        if config.num_classes < 1:
            raise ConfigError("SemiVae needs num_classes >= 1")
        self.config = config
        c = config.num_classes
        self.prior_y = np.full(c, 1.0 / c)
        self.params = ParamSet(seed)
        self.enc_embedding = self.params.new("enc_embedding", (config.vocab_size, config.embed_dim))
        self.enc_lstm = LstmParams.create(self.params, "enc_lstm", config.embed_dim, config.encoder_hidden)
        self.classifier_mlp = MlpParams.create(
            self.params, "classifier", [config.encoder_hidden, config.classifier_hidden, c]
        )
        self.posterior_mlp = MlpParams.create(
            self.params, "posterior", [config.encoder_hidden + c, config.posterior_hidden, 2 * config.z_dim]
        )
        self.dec_embedding = self.params.new("dec_embedding", (config.vocab_size, config.embed_dim))
        self.decoder = _build_decoder(self.params, config, config.embed_dim + config.z_dim + c, conditioned=True)

    # -- encoder side --

    def _encoder_state(self, batch: Batch, dropout_rng=None) -> Tensor:
        emb = ad.embedding(self.enc_embedding, batch.tokens)
        if dropout_rng is not None and self.config.lstm_dropout > 0:
            emb = ad.dropout(emb, self.config.lstm_dropout, dropout_rng)
        return lstm_encode(self.enc_lstm, emb, batch.lengths)

    def classifier_logits(self, batch: Batch, dropout_rng=None) -> Tensor:
        return mlp(self.classifier_mlp, self._encoder_state(batch, dropout_rng))

    def classify(self, batch: Batch, dropout_rng=None) -> Tensor:
        """q(y|x): softmax over classes, rows sum to one."""
        return ad.softmax(self.classifier_logits(batch, dropout_rng), axis=-1)

    def encode(self, batch: Batch, y: Tensor, dropout_rng=None) -> GaussianPosterior:
        """q(z|x, y) from the last encoder state concatenated with y."""
        h = self._encoder_state(batch, dropout_rng)
        stats = mlp(self.posterior_mlp, ad.concat([h, y], axis=1))
        zd = self.config.z_dim
        return GaussianPosterior(mu=stats[:, :zd], logvar=stats[:, zd:])

    # -- decoder side --

    def decode_logits(self, z: Tensor, y: Tensor, input_ids: np.ndarray, dropout_rng=None) -> Tensor:
        input_ids = np.asarray(input_ids, dtype=np.int64)
        emb = ad.embedding(self.dec_embedding, input_ids)
        cond_vec = ad.concat([z, y], axis=1)
        cond = ad.concat([emb, _tile_over_time(cond_vec, input_ids.shape[1])], axis=2)
        return self.decoder.logits(cond, cond_vec, dropout_rng)

    # -- bounds --

    def _bound_rows(self, batch: Batch, y: Tensor, eps: np.ndarray, kl_weight: float,
                    dropout_rng=None, drop_word_rng=None) -> tuple[Tensor, Tensor, Tensor]:
        """Per-document (L, recon, kl_z) for a fixed (possibly soft) label."""
        post = self.encode(batch, y, dropout_rng)
        z = reparameterize(post, eps)
        inputs = batch.decoder_inputs()
        if drop_word_rng is not None and self.config.drop_word > 0:
            inputs = drop_word(inputs, self.config.drop_word, drop_word_rng, PAD_ID, UNK_ID)
        logits = self.decode_logits(z, y, inputs, dropout_rng)
        recon = _masked_recon_rows(logits, batch.targets(), batch.target_mask())
        kl = kl_to_standard_normal(post)
        bound = -recon - kl_weight * kl
        return bound, recon, kl

    def labeled_bound(self, batch: Batch, eps: np.ndarray, kl_weight: float = 1.0,
                      dropout_rng=None, drop_word_rng=None) -> BoundParts:
        """L(x, y) = E_q(z|x,y)[log p(x|y,z)] - kl_weight * KL, batch mean."""
        if batch.labels is None:
            raise InputError("labeled_bound needs a batch with labels")
        y = one_hot(batch.labels, self.config.num_classes)
        rows, recon, kl = self._bound_rows(batch, y, eps, kl_weight, dropout_rng, drop_word_rng)
        return BoundParts(value=rows.mean(), recon=recon.mean(), kl_z=kl.mean())

    def unlabeled_bound(self, batch: Batch, eps: np.ndarray, tau: float,
                        rng: np.random.Generator | None = None, noise: np.ndarray | None = None,
                        kl_weight: float = 1.0, gamma: float | None = None,
                        num_samples: int = 1, dropout_rng=None, drop_word_rng=None) -> BoundParts:
        """Relaxed U(x): L(x, y~GumbelSoftmax(q(y|x))) - KL(q(y|x) || p(y)).

        Gradients reach the classifier through both the soft label and the
        categorical KL.  gamma switches the KL term to the clustering clamp
        max(gamma, KL).  num_samples averages independent relaxed draws.
        """
        q_logits = self.classifier_logits(batch, dropout_rng)
        q = ad.softmax(q_logits, axis=-1)
        c = self.config.num_classes
        total = None
        recon_total = None
        klz_total = None
        for s in range(num_samples):
            ns = None
            if noise is not None:
                ns = noise if num_samples == 1 else noise[s]
            y_soft = gumbel_softmax(q_logits, tau, rng=rng, noise=ns)
            rows, recon, kl = self._bound_rows(batch, y_soft, eps, kl_weight, dropout_rng, drop_word_rng)
            total = rows if total is None else total + rows
            recon_total = recon if recon_total is None else recon_total + recon
            klz_total = kl if klz_total is None else klz_total + kl
        scale = 1.0 / num_samples
        expected_l = (scale * total).mean()
        if gamma is None:
            kl_y = categorical_kl_rows(q, self.prior_y).mean()
        else:
            kl_y = clamped_categorical_kl(q, self.prior_y, gamma)
        return BoundParts(
            value=expected_l - kl_y,
            recon=(scale * recon_total).mean(),
            kl_z=(scale * klz_total).mean(),
            kl_y=kl_y,
            q_y=q,
        )

    def exact_unlabeled_bound(self, batch: Batch, eps: np.ndarray, kl_weight: float = 1.0,
                              gamma: float | None = None, dropout_rng=None) -> BoundParts:
        """Enumerated U(x) = sum_y q(y|x) L(x, y) - KL term; the oracle path."""
        q = self.classify(batch, dropout_rng)
        c = self.config.num_classes
        expected = None
        recon_total = None
        klz_total = None
        for cls in range(c):
            y = one_hot(np.full(batch.size, cls), c)
            rows, recon, kl = self._bound_rows(batch, y, eps, kl_weight, dropout_rng)
            w = q[:, cls : cls + 1].reshape(batch.size)
            expected = w * rows if expected is None else expected + w * rows
            recon_total = w * recon if recon_total is None else recon_total + w * recon
            klz_total = w * kl if klz_total is None else klz_total + w * kl
        if gamma is None:
            kl_y = categorical_kl_rows(q, self.prior_y).mean()
        else:
            kl_y = clamped_categorical_kl(q, self.prior_y, gamma)
        return BoundParts(
            value=expected.mean() - kl_y,
            recon=recon_total.mean(),
            kl_z=klz_total.mean(),
            kl_y=kl_y,
            q_y=q,
        )

    def classifier_loglik(self, batch: Batch, dropout_rng=None) -> Tensor:
        """Mean log q(y|x) on labeled data (the alpha term of J)."""
        if batch.labels is None:
            raise InputError("classifier_loglik needs labels")
        logits = self.classifier_logits(batch, dropout_rng)
        ce = ad.softmax_cross_entropy(logits, batch.labels)
        return (-1.0 / batch.size) * ce

    def semi_objective(self, labeled: Batch | None, unlabeled: Batch | None, alpha: float,
                       eps_labeled: np.ndarray | None = None, eps_unlabeled: np.ndarray | None = None,
                       tau: float = 1.0, rng: np.random.Generator | None = None,
                       noise: np.ndarray | None = None, kl_weight: float = 1.0,
                       gamma: float | None = None, num_samples: int = 1,
                       dropout_rng=None, drop_word_rng=None) -> SemiObjectiveTerms:
        """J = E[L(x,y)] + E[U(x)] + alpha E[log q(y|x)]; minimize -J."""
        if alpha < 0:
            raise ParameterError(f"alpha must be >= 0, got {alpha}")
        if (labeled is None or labeled.size == 0) and alpha > 0:
            raise InputError("alpha > 0 requires a non-empty labeled batch")
        l_term = loglik = None
        if labeled is not None and labeled.size:
            l_term = self.labeled_bound(labeled, eps_labeled, kl_weight, dropout_rng, drop_word_rng).value
            if alpha > 0:
                loglik = self.classifier_loglik(labeled, dropout_rng)
        u_term = None
        if unlabeled is not None and unlabeled.size:
            u_term = self.unlabeled_bound(
                unlabeled, eps_unlabeled, tau, rng=rng, noise=noise, kl_weight=kl_weight,
                gamma=gamma, num_samples=num_samples, dropout_rng=dropout_rng, drop_word_rng=drop_word_rng
            ).value
        return SemiObjectiveTerms(
            labeled_bound=l_term, unlabeled_bound=u_term, classifier_loglik=loglik, alpha=alpha
        )

    # -- evaluation --

    def predict_classes(self, docs: list[Document], batch_size: int = 64) -> np.ndarray:
        out = []
        for batch in batchify(docs, batch_size):
            out.append(np.argmax(self.classify(batch).data, axis=1))
        return np.concatenate(out)

    def class_probabilities(self, docs: list[Document], batch_size: int = 64) -> np.ndarray:
        out = []
        for batch in batchify(docs, batch_size):
            out.append(self.classify(batch).data.copy())
        return np.concatenate(out, axis=0)

    def doc_scores(self, batch: Batch, eps_mode: str = "mean", eps_rng=None) -> tuple[np.ndarray, np.ndarray]:
        """Per-document (recon, kl) under the enumerated bound, for eval_nll_ppl.

        recon = sum_y q(y|x) recon_y; kl = sum_y q(y|x) KL_z(y) + KL(q(y|x)||p(y)),
        so recon + kl = -U(x) with z at the posterior mean (or sampled).
        """
        q = self.classify(batch)
        c = self.config.num_classes
        recon_acc = np.zeros(batch.size)
        kl_acc = np.zeros(batch.size)
        for cls in range(c):
            y = one_hot(np.full(batch.size, cls), c)
            post = self.encode(batch, y)
            if eps_mode == "mean":
                z = post.mu
            elif eps_mode == "sample":
                rng = eps_rng if eps_rng is not None else np.random.default_rng(0)
                z = reparameterize(post, rng.standard_normal(post.mu.shape))
            else:
                raise ConfigError(f"eps_mode must be 'mean' or 'sample', got {eps_mode!r}")
            logits = self.decode_logits(z, y, batch.decoder_inputs())
            recon = _masked_recon_rows(logits, batch.targets(), batch.target_mask())
            kl = kl_to_standard_normal(post)
            w = q.data[:, cls]
            recon_acc += w * recon.data
            kl_acc += w * kl.data
        kl_y = categorical_kl_rows(q, self.prior_y).data
        return recon_acc, kl_acc + kl_y

    def checkpoint_config(self) -> dict[str, str]:
        return _config_to_strings("semi", self.config)


# ---------------------------------------------------------------------------
# clustering evaluation


@dataclass
class ClusterReport:
    accuracy: float
    cluster_labels: dict[int, int | None]  # cluster id -> assigned true label
    empty_clusters: list[int]
    n_test: int


def cluster_evaluate(model: SemiVae, validation: list[Document], test: list[Document],
                     batch_size: int = 64) -> ClusterReport:
    """Label clusters by their most confident validation member, score on test.

    For each cluster i, among validation documents whose argmax class is i,
    the one with the highest q(y_i|x) donates its true label to the cluster.
    Clusters no validation document lands in stay unlabeled and contribute
    only errors on test; they are flagged in the report.
    """
    if any(d.label is None for d in validation) or any(d.label is None for d in test):
        raise InputError("cluster evaluation needs labeled validation and test sets")
    q_val = model.class_probabilities(validation, batch_size)
    assign = np.argmax(q_val, axis=1)
    labels = np.array([d.label for d in validation])
    c = model.config.num_classes
    cluster_labels: dict[int, int | None] = {}
    empty: list[int] = []
    for i in range(c):
        members = np.where(assign == i)[0]
        if members.size == 0:
            cluster_labels[i] = None
            empty.append(i)
            continue
        best = members[np.argmax(q_val[members, i])]
        cluster_labels[i] = int(labels[best])
    q_test = model.class_probabilities(test, batch_size)
    pred_cluster = np.argmax(q_test, axis=1)
    true = np.array([d.label for d in test])
    pred = np.array([-1 if cluster_labels[int(k)] is None else cluster_labels[int(k)] for k in pred_cluster])
    return ClusterReport(
        accuracy=float((pred == true).mean()),
        cluster_labels=cluster_labels,
        empty_clusters=empty,
        n_test=len(test),
    )
