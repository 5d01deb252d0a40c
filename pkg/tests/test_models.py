"""VAE and language-model contracts: posterior, reparameterization, KL closed
form vs Monte Carlo, decoder causality and conditioning, ELBO, evaluation."""

import numpy as np
import pytest

from textvae import autodiff as ad
from textvae.autodiff import Tape, Tensor, grad_check
from textvae.data import batchify
from textvae.errors import ConfigError, DimensionError, InputError
from textvae.models import (
    GaussianPosterior,
    LossBreakdown,
    eval_nll_ppl,
    kl_to_standard_normal,
    reparameterize,
)
from conftest import tiny_batch, tiny_cnn_arch, tiny_corpus, tiny_lm, tiny_lstm_arch, tiny_vae


# ---------------------------------------------------------------------------
# posterior pieces


def test_reparameterize_zero_eps_returns_mu(rng):
    post = GaussianPosterior(mu=Tensor(rng.standard_normal((3, 2))), logvar=Tensor(rng.standard_normal((3, 2))))
    z = reparameterize(post, np.zeros((3, 2)))
    assert np.array_equal(z.data, post.mu.data)


def test_reparameterize_unit_sigma_adds_eps(rng):
    mu = rng.standard_normal((2, 3))
    eps = rng.standard_normal((2, 3))
    z = reparameterize(GaussianPosterior(Tensor(mu), Tensor(np.zeros((2, 3)))), eps)
    assert np.allclose(z.data, mu + eps, rtol=0, atol=1e-15)


def test_reparameterize_shape_mismatch():
    post = GaussianPosterior(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
    with pytest.raises(DimensionError):
        reparameterize(post, np.zeros((3, 2)))


def test_reparameterize_sample_mean_clt():
    mu = np.array([[0.7, -1.2]])
    logvar = np.array([[0.4, -0.6]])
    post = GaussianPosterior(Tensor(np.repeat(mu, 10_000, axis=0)), Tensor(np.repeat(logvar, 10_000, axis=0)))
    eps = np.random.default_rng(17).standard_normal((10_000, 2))
    z = reparameterize(post, eps).data
    sigma = np.exp(0.5 * logvar)
    bound = 3 * sigma / np.sqrt(10_000)
    assert np.all(np.abs(z.mean(axis=0) - mu) <= bound)


def test_kl_zero_for_standard_posterior():
    post = GaussianPosterior(Tensor(np.zeros((4, 3))), Tensor(np.zeros((4, 3))))
    assert np.allclose(kl_to_standard_normal(post).data, 0.0)


def test_kl_closed_form_half():
    post = GaussianPosterior(Tensor([[1.0]]), Tensor([[0.0]]))
    assert kl_to_standard_normal(post).data[0] == pytest.approx(0.5, abs=1e-15)


def test_kl_closed_form_matches_monte_carlo():
    # E_q[log q - log p] estimated with 100k samples per posterior
    gen = np.random.default_rng(29)
    n = 100_000
    for _ in range(8):
        mu = gen.uniform(-2, 2, size=3)
        logvar = gen.uniform(-1.5, 1.5, size=3)
        sigma = np.exp(0.5 * logvar)
        z = mu + sigma * gen.standard_normal((n, 3))
        log_q = -0.5 * (((z - mu) / sigma) ** 2 + logvar + np.log(2 * np.pi)).sum(axis=1)
        log_p = -0.5 * (z**2 + np.log(2 * np.pi)).sum(axis=1)
        diffs = log_q - log_p
        mc, se = diffs.mean(), diffs.std(ddof=1) / np.sqrt(n)
        closed = kl_to_standard_normal(
            GaussianPosterior(Tensor(mu[None, :]), Tensor(logvar[None, :]))
        ).data[0]
        assert abs(closed - mc) <= 3 * se


# ---------------------------------------------------------------------------
# encode


def test_encode_duplicated_rows_identical():
    batch, vocab = tiny_batch(seed=2)
    batch.tokens[1] = batch.tokens[0]
    batch.lengths[1] = batch.lengths[0]
    batch.mask[1] = batch.mask[0]
    model = tiny_vae(vocab_size=vocab.size)
    post = model.encode(batch)
    assert np.array_equal(post.mu.data[0], post.mu.data[1])
    assert np.array_equal(post.logvar.data[0], post.logvar.data[1])


def test_encode_zero_posterior_mlp_gives_standard_posterior():
    batch, vocab = tiny_batch(seed=2)
    model = tiny_vae(vocab_size=vocab.size)
    for name, t in model.params.items():
        if name.startswith("posterior"):
            t.data[...] = 0.0
    post = model.encode(batch)
    assert np.all(post.mu.data == 0.0) and np.all(post.logvar.data == 0.0)


def test_encode_rejects_out_of_vocab_token():
    batch, vocab = tiny_batch(seed=2)
    model = tiny_vae(vocab_size=vocab.size)
    batch.tokens[0, 1] = vocab.size + 3
    with pytest.raises(IndexError):
        model.encode(batch)


def test_kl_gradient_reaches_encoder_parameters():
    batch, vocab = tiny_batch(seed=3)
    model = tiny_vae(vocab_size=vocab.size, seed=5)
    with Tape() as tape:
        kl = kl_to_standard_normal(model.encode(batch)).mean()
        tape.backward(kl)
    grads = [model.params[n].grad for n in ("enc_lstm.wx", "enc_embedding")]
    assert all(g is not None and np.any(g != 0) for g in grads)
    err = grad_check(
        lambda *_: kl_to_standard_normal(model.encode(batch)).mean(), list(model.params.values())
    )
    assert err <= 1e-4


# ---------------------------------------------------------------------------
# decoding: causality and conditioning


@pytest.mark.parametrize("arch_factory", [tiny_cnn_arch, tiny_lstm_arch])
def test_decoder_causality_over_embeddings(arch_factory, rng):
    batch, vocab = tiny_batch(seed=4, length=(6, 6))
    model = tiny_vae(vocab_size=vocab.size, arch=arch_factory())
    T = batch.tokens.shape[1] - 1
    emb = Tensor(rng.standard_normal((batch.size, T, model.config.embed_dim)))
    z = Tensor(rng.standard_normal((batch.size, model.config.z_dim)))
    for t in (0, T // 2, T - 1):
        with Tape() as tape:
            logits = model.decode_logits_from_embeddings(emb, z)
            tape.backward(logits[:, t, :].sum())
        assert np.all(emb.grad[:, t + 1 :, :] == 0.0), f"t={t}"
        emb.grad = None


def test_decoder_z_conditioning_is_live(rng):
    batch, vocab = tiny_batch(seed=5)
    model = tiny_vae(vocab_size=vocab.size, seed=1)
    inputs = batch.decoder_inputs()
    z1 = Tensor(rng.standard_normal((batch.size, model.config.z_dim)))
    z2 = Tensor(z1.data + 1.0)
    l1 = model.decode_logits(z1, inputs)
    l2 = model.decode_logits(z2, inputs)
    assert not np.allclose(l1.data, l2.data)


def test_scnn_receptive_field_limits_sensitivity(rng):
    # SCNN: logits at t are exactly insensitive to embeddings before t-14
    arch = tiny_cnn_arch(k=3, dilations=(1, 2, 4), c_ext=8, c_int=6)
    model = tiny_vae(vocab_size=12, arch=arch)
    T = 20
    emb = Tensor(rng.standard_normal((1, T, model.config.embed_dim)))
    z = Tensor(rng.standard_normal((1, model.config.z_dim)))
    t = T - 1
    with Tape() as tape:
        logits = model.decode_logits_from_embeddings(emb, z)
        tape.backward(logits[:, t, :].sum())
    support = np.where(np.any(emb.grad[0] != 0.0, axis=1))[0]
    assert support.min() == t - 14
    assert support.max() == t


# ---------------------------------------------------------------------------
# ELBO


def test_elbo_kl_weight_zero_is_autoencoder_limit(rng):
    batch, vocab = tiny_batch(seed=6)
    model = tiny_vae(vocab_size=vocab.size)
    eps = rng.standard_normal((batch.size, model.config.z_dim))
    parts = model.elbo_loss(batch, eps, kl_weight=0.0)
    assert parts.total.item() == parts.reconstruction.item()


def test_elbo_zero_kl_when_posterior_is_prior(rng):
    batch, vocab = tiny_batch(seed=6)
    model = tiny_vae(vocab_size=vocab.size)
    for name, t in model.params.items():
        if name.startswith("posterior"):
            t.data[...] = 0.0
    eps = rng.standard_normal((batch.size, model.config.z_dim))
    parts = model.elbo_loss(batch, eps, kl_weight=1.0)
    assert parts.kl.item() == pytest.approx(0.0, abs=1e-12)
    assert parts.total.item() == pytest.approx(parts.reconstruction.item(), rel=1e-15)


def test_elbo_decomposition_identity(rng):
    batch, vocab = tiny_batch(seed=7)
    model = tiny_vae(vocab_size=vocab.size, seed=3)
    eps = rng.standard_normal((batch.size, model.config.z_dim))
    parts = model.elbo_loss(batch, eps, kl_weight=0.37)
    assert parts.total.item() == pytest.approx(
        parts.reconstruction.item() + 0.37 * parts.kl.item(), rel=1e-15
    )


def test_elbo_rejects_bad_kl_weight(rng):
    batch, vocab = tiny_batch(seed=7)
    model = tiny_vae(vocab_size=vocab.size)
    with pytest.raises(ConfigError):
        model.elbo_loss(batch, np.zeros((batch.size, model.config.z_dim)), kl_weight=1.5)


@pytest.mark.parametrize("arch_factory", [tiny_cnn_arch, tiny_lstm_arch])
def test_elbo_full_gradient_check(arch_factory, rng):
    batch, vocab = tiny_batch(seed=8, vocab_size=5, length=(3, 4))
    model = tiny_vae(vocab_size=vocab.size, arch=arch_factory(), seed=2)
    eps = rng.standard_normal((batch.size, model.config.z_dim))
    err = grad_check(
        lambda *_: model.elbo_loss(batch, eps, kl_weight=0.8).total, list(model.params.values())
    )
    assert err <= 1e-4


def test_elbo_pad_columns_do_not_change_loss(rng):
    batch, vocab = tiny_batch(seed=9)
    model = tiny_vae(vocab_size=vocab.size)
    eps = rng.standard_normal((batch.size, model.config.z_dim))
    base = model.elbo_loss(batch, eps, 1.0).total.item()
    # widen with two PAD columns and scribble on PAD positions
    tokens = np.pad(batch.tokens, ((0, 0), (0, 2)))
    mask = np.pad(batch.mask, ((0, 0), (0, 2)))
    tokens[~mask] = 3  # arbitrary non-PAD id in masked region
    from textvae.data import Batch

    scribbled = Batch(tokens=tokens, lengths=batch.lengths, mask=mask, labels=batch.labels, doc_ids=batch.doc_ids)
    assert model.elbo_loss(scribbled, eps, 1.0).total.item() == pytest.approx(base, rel=1e-14)


# ---------------------------------------------------------------------------
# language model


def test_lm_uniform_logits_give_log_v():
    batch, vocab = tiny_batch(seed=10)
    model = tiny_lm(vocab_size=vocab.size)
    for name in ("dec_head.w", "dec_head.b"):
        model.params[name].data[...] = 0.0
    loss = model.loss(batch)
    per_token = loss.item() * batch.size / batch.target_mask().sum()
    assert per_token == pytest.approx(np.log(vocab.size), rel=1e-12)


def test_lm_loss_gradients(rng):
    batch, vocab = tiny_batch(seed=11, vocab_size=5, length=(3, 4))
    model = tiny_lm(vocab_size=vocab.size, arch=tiny_lstm_arch(4))
    err = grad_check(lambda *_: model.loss(batch), list(model.params.values()))
    assert err <= 1e-4


# ---------------------------------------------------------------------------
# evaluation


def test_eval_decomposition_and_nonnegative_kl():
    docs, vocab, _ = tiny_corpus(seed=12, docs_per_class=6)
    model = tiny_vae(vocab_size=vocab.size, seed=7)
    res = eval_nll_ppl(model, docs)
    assert res.kl >= 0.0
    assert res.nll == pytest.approx(res.recon + res.kl, abs=1e-9)
    assert res.ppl == pytest.approx(np.exp(res.nll * res.n_docs / res.n_tokens), rel=1e-12)


def test_eval_lm_kl_component_zero():
    docs, vocab, _ = tiny_corpus(seed=13, docs_per_class=5)
    model = tiny_lm(vocab_size=vocab.size)
    res = eval_nll_ppl(model, docs)
    assert res.kl == 0.0


def test_eval_empty_corpus_rejected():
    model = tiny_lm(vocab_size=8)
    with pytest.raises(InputError):
        eval_nll_ppl(model, [])


def test_eval_sample_mode_seeded_deterministic():
    docs, vocab, _ = tiny_corpus(seed=14, docs_per_class=4)
    model = tiny_vae(vocab_size=vocab.size, seed=1)
    a = eval_nll_ppl(model, docs, eps_mode="sample", seed=5)
    b = eval_nll_ppl(model, docs, eps_mode="sample", seed=5)
    c = eval_nll_ppl(model, docs, eps_mode="sample", seed=6)
    assert a.nll == b.nll
    assert a.nll != c.nll


# ---------------------------------------------------------------------------
# ELBO validity against grid-integrated marginal likelihood (tiny scale)


def grid_log_marginal_and_elbo(model, batch, half_width=6.0, n=41):
    """Brute-force z-grid oracle: (log p(x), exact ELBO) for one document."""
    zd = model.config.z_dim
    axes = [np.linspace(-half_width, half_width, n)] * zd
    mesh = np.meshgrid(*axes, indexing="ij")
    zs = np.stack([m.ravel() for m in mesh], axis=1)
    dz = (2 * half_width / (n - 1)) ** zd
    g = zs.shape[0]
    inputs = np.repeat(batch.decoder_inputs(), g, axis=0)
    targets = np.repeat(batch.targets(), g, axis=0)
    mask = np.repeat(batch.target_mask(), g, axis=0)
    logits = model.decode_logits(Tensor(zs), inputs)
    b, T, v = logits.shape
    rows = ad.cross_entropy_rows(logits.reshape(b * T, v), targets.reshape(-1), mask.reshape(-1))
    log_px_given_z = -rows.data.reshape(b, T).sum(axis=1)
    log_prior = -0.5 * (zs**2).sum(axis=1) - 0.5 * zd * np.log(2 * np.pi)
    log_px = np.log(np.exp(log_px_given_z + log_prior).sum() * dz)
    post = model.encode(batch)
    mu, logvar = post.mu.data[0], post.logvar.data[0]
    log_q = (
        -0.5 * (((zs - mu) / np.exp(0.5 * logvar)) ** 2).sum(axis=1)
        - 0.5 * (logvar + np.log(2 * np.pi)).sum()
    )
    q = np.exp(log_q)
    expected_ll = (q * log_px_given_z).sum() * dz
    kl = kl_to_standard_normal(post).data[0]
    return log_px, expected_ll - kl


def test_elbo_lower_bounds_grid_marginal():
    gen = np.random.default_rng(31)
    wins = 0
    trials = 12
    for trial in range(trials):
        docs, vocab, _ = tiny_corpus(seed=100 + trial, vocab_size=4, docs_per_class=1, length=(2, 2), num_classes=1)
        model = tiny_vae(vocab_size=vocab.size, z_dim=2, seed=trial, embed_dim=3, encoder_hidden=4)
        # vary the weights so posteriors differ across trials
        for t in model.params.values():
            t.data *= gen.uniform(0.5, 3.0)
        batch = batchify(docs, 1)[0]
        log_px, elbo = grid_log_marginal_and_elbo(model, batch)
        if elbo <= log_px + 1e-6:
            wins += 1
    assert wins >= 0.95 * trials


def test_loss_breakdown_total_is_exact():
    parts = LossBreakdown(reconstruction=Tensor(2.5), kl=Tensor(1.25), kl_weight=0.4)
    assert parts.total.item() == 2.5 + 0.4 * 1.25
