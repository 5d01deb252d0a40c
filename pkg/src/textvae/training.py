"""Optimization recipe: Adam with bias correction, linear KL-weight annealing
from 0.01, learning-rate halving every 2 epochs after epoch 30, temperature
annealing for relaxed label sampling, drop-word wiring, LM pretraining for
encoder initialization, and deterministic manifests.

All randomness is derived from (seed, tag, epoch, batch) keys, so two runs
with the same seed are bit-identical.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as rngmod
from .autodiff import Tape, Tensor
from .data import Document, batchify
from .errors import ConfigError, InputError, NumericError
from .layers import LstmParams
from .models import LanguageModel, ModelConfig, VaeModel, eval_nll_ppl
from .rng import derive_rng
from .semisup import SemiVae

# selection ranges from the original recipe (defaults marked by TrainConfig)
LR_CHOICES = (2e-3, 1e-3, 7.5e-4)
BETA1_CHOICES = (0.5, 0.9)
KL_ANNEAL_CHOICES = (10_000, 40_000, 80_000)


@dataclass
class Schedule:
    """Per-run schedule knobs; defaults follow the published recipe."""

    epochs: int = 40
    kl_anneal_iters: int = 40_000
    kl_floor: float = 0.01
    lr_half_start_epoch: int = 30
    lr_half_every: int = 2
    tau_start: float = 1.0
    tau_min: float = 0.1
    tau_decay: float = 3.0


def kl_weight(iteration: int, schedule: Schedule) -> float:
    """Linear ramp from kl_floor at iteration 0 to 1.0 at kl_anneal_iters."""
    if schedule.kl_anneal_iters <= 0:
        raise ConfigError(f"kl_anneal_iters must be positive, got {schedule.kl_anneal_iters}")
    floor = schedule.kl_floor
    return min(1.0, floor + (1.0 - floor) * iteration / schedule.kl_anneal_iters)


def learning_rate(epoch: int, schedule: Schedule, base_lr: float) -> float:
    """base_lr before the halving epoch, then halved every lr_half_every epochs."""
    start = schedule.lr_half_start_epoch
    if epoch < start:
        return base_lr
    return base_lr * 0.5 ** ((epoch - start) // schedule.lr_half_every + 1)


def tau_value(progress: float, schedule: Schedule) -> float:
    """Relaxation temperature at training progress in [0, 1]."""
    return max(schedule.tau_min, schedule.tau_start * np.exp(-schedule.tau_decay * progress))


@dataclass
class TrainConfig:
    base_lr: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    clip_norm: float | None = 5.0  # None disables (finite-difference parity)
    alpha: float = 1.0  # classifier weight in J
    gamma: float | None = None  # clustering KL clamp; None = plain KL
    eval_batch_size: int = 64
    gumbel_samples: int = 1
    seed: int = 0
    schedule: Schedule = field(default_factory=Schedule)


# ---------------------------------------------------------------------------
# Adam


class OptimState:
    """Per-parameter first/second moments plus the shared step counter."""

    def __init__(self, params: dict[str, Tensor], lr: float, beta1: float = 0.5,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.step = 0
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps


def adam_step(state: OptimState, params: dict[str, Tensor], grads: dict[str, np.ndarray]) -> OptimState:
    """Bias-corrected Adam update, in place; aborts on non-finite gradients."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        m = state.m[name] = b1 * state.m[name] + (1 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return state


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return grads
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}


# ---------------------------------------------------------------------------
# manifests


@dataclass
class RunManifest:
    """Per-epoch training log; determinism is judged on records_text().

    Record fields: epoch, lr, kl_weight, train_recon, train_kl, train_total,
    val_recon, val_kl, val_total, and val_accuracy when labels exist.  The
    config snapshot, seed, and wall clock ride along as '#' comment lines and
    are excluded from the determinism comparison (wall clock cannot repeat).
    """

    config_snapshot: dict[str, str]
    seed: int
    records: list[dict[str, float]] = field(default_factory=list)
    wall_clock_s: float = 0.0
    diverged_at: int | None = None

    def records_text(self) -> str:
        lines = []
        for rec in self.records:
            lines.append(" ".join(f"{k}={_fmt(v)}" for k, v in rec.items()))
        if self.diverged_at is not None:
            lines.append(f"diverged_at={self.diverged_at}")
        return "\n".join(lines) + ("\n" if lines else "")

    def to_text(self) -> str:
        head = [f"# seed={self.seed}"]
        head += [f"# config: {k}={v}" for k, v in sorted(self.config_snapshot.items())]
        tail = f"# wall_clock_s={self.wall_clock_s:.3f}\n"
        return "\n".join(head) + "\n" + self.records_text() + tail

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


@dataclass
class TrainResult:
    manifest: RunManifest
    best_params: dict[str, np.ndarray]
    best_val_total: float
    model: object

    def restore_best(self) -> None:
        for name, tensor in self.model.params.items():
            tensor.data = self.best_params[name].copy()


# ---------------------------------------------------------------------------
# shared loop


def _run_training(model, make_units, step_fn, validate_fn, cfg: TrainConfig) -> TrainResult:
    """Generic epoch loop: shuffle, step, clip, Adam, validate, keep the best.

    make_units(epoch, rng) yields the per-iteration work items; step_fn returns
    (loss Tensor, metrics dict) and validate_fn a metrics dict containing
    'total' (the best-checkpoint criterion, computed without label peeking for
    unsupervised runs).
    """
    sched = cfg.schedule
    manifest = RunManifest(config_snapshot=model.checkpoint_config(), seed=cfg.seed)
    state = OptimState(model.params.tensors, cfg.base_lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    best = {k: t.data.copy() for k, t in model.params.items()}
    best_total = float("inf")
    start = time.perf_counter()
    iteration = 0
    total_iters = None
    for epoch in range(sched.epochs):
        state.lr = learning_rate(epoch, sched, cfg.base_lr)
        units = make_units(epoch, derive_rng(cfg.seed, rngmod.SHUFFLE, epoch))
        if total_iters is None:
            total_iters = max(1, len(units) * sched.epochs)
        sums: dict[str, float] = {}
        count = 0
        diverged = False
        for b, unit in enumerate(units):
            w = kl_weight(iteration, sched)
            tau = tau_value(iteration / total_iters, sched)
            model.params.zero_grads()
            with Tape() as tape:
                loss, metrics = step_fn(unit, epoch=epoch, batch=b, kl_w=w, tau=tau)
                if not np.isfinite(loss.data).all():
                    diverged = True
                    break
                tape.backward(loss)
            grads = {k: t.grad for k, t in model.params.items() if t.grad is not None}
            if cfg.clip_norm is not None:
                grads = clip_gradients(grads, cfg.clip_norm)
            adam_step(state, model.params.tensors, grads)
            for k, v in metrics.items():
                sums[k] = sums.get(k, 0.0) + v
            count += 1
            iteration += 1
        if diverged:
            manifest.diverged_at = epoch
            break
        record = {"epoch": epoch, "lr": state.lr, "kl_weight": kl_weight(iteration - 1, sched) if count else kl_weight(0, sched)}
        for k, v in sums.items():
            record[f"train_{k}"] = v / max(count, 1)
        val = validate_fn()
        for k, v in val.items():
            record[f"val_{k}"] = v
        manifest.records.append(record)
        if val["total"] < best_total:
            best_total = val["total"]
            best = {k: t.data.copy() for k, t in model.params.items()}
    manifest.wall_clock_s = time.perf_counter() - start
    if best_total == float("inf"):
        best_total = float("nan")
    return TrainResult(manifest=manifest, best_params=best, best_val_total=best_total, model=model)


# ---------------------------------------------------------------------------
# model-specific drivers


def train_lm(model: LanguageModel, train_docs: list[Document], val_docs: list[Document],
             cfg: TrainConfig) -> TrainResult:
    def make_units(epoch, rng):
        return batchify(train_docs, cfg.batch_size, rng)

    def step(unit, *, epoch, batch, kl_w, tau):
        del kl_w, tau
        loss = model.loss(
            unit,
            dropout_rng=derive_rng(cfg.seed, rngmod.DROPOUT, epoch, batch),
            drop_word_rng=derive_rng(cfg.seed, rngmod.DROP_WORD, epoch, batch),
        )
        return loss, {"recon": loss.item(), "kl": 0.0, "total": loss.item()}

    def validate():
        res = eval_nll_ppl(model, val_docs, batch_size=cfg.eval_batch_size)
        return {"recon": res.recon, "kl": res.kl, "total": res.nll, "ppl": res.ppl}

    return _run_training(model, make_units, step, validate, cfg)


def train_vae(model: VaeModel, train_docs: list[Document], val_docs: list[Document],
              cfg: TrainConfig) -> TrainResult:
    def make_units(epoch, rng):
        return batchify(train_docs, cfg.batch_size, rng)

    def step(unit, *, epoch, batch, kl_w, tau):
        del tau
        eps = derive_rng(cfg.seed, rngmod.EPS, epoch, batch).standard_normal((unit.size, model.config.z_dim))
        parts = model.elbo_loss(
            unit,
            eps,
            kl_w,
            dropout_rng=derive_rng(cfg.seed, rngmod.DROPOUT, epoch, batch),
            drop_word_rng=derive_rng(cfg.seed, rngmod.DROP_WORD, epoch, batch),
        )
        metrics = {"recon": parts.reconstruction.item(), "kl": parts.kl.item(), "total": parts.total.item()}
        return parts.total, metrics

    def validate():
        res = eval_nll_ppl(model, val_docs, batch_size=cfg.eval_batch_size)
        return {"recon": res.recon, "kl": res.kl, "total": res.nll, "ppl": res.ppl}

    return _run_training(model, make_units, step, validate, cfg)


def train_semi(model: SemiVae, labeled_docs: list[Document] | None, unlabeled_docs: list[Document],
               val_docs: list[Document], cfg: TrainConfig) -> TrainResult:
    """Joint objective over labeled and unlabeled corpora; also the clustering
    driver (labeled_docs=None, alpha=0, gamma set).

    The best checkpoint is chosen by the label-free unlabeled bound on the
    validation set, so held-out labels never steer training.
    """
    if labeled_docs is None:
        labeled_docs = []
    if cfg.alpha > 0 and not labeled_docs:
        raise InputError("alpha > 0 requires labeled documents")

    def make_units(epoch, rng):
        unl = batchify(unlabeled_docs, cfg.batch_size, rng)
        if not labeled_docs:
            return [(None, u) for u in unl]
        lab = batchify(labeled_docs, min(cfg.batch_size, len(labeled_docs)), rng)
        return [(lab[i % len(lab)], u) for i, u in enumerate(unl)]

    def step(unit, *, epoch, batch, kl_w, tau):
        lab, unl = unit
        eps_l = None
        if lab is not None:
            eps_l = derive_rng(cfg.seed, rngmod.EPS, epoch, batch, 0).standard_normal((lab.size, model.config.z_dim))
        eps_u = derive_rng(cfg.seed, rngmod.EPS, epoch, batch, 1).standard_normal((unl.size, model.config.z_dim))
        terms = model.semi_objective(
            lab,
            unl,
            cfg.alpha,
            eps_labeled=eps_l,
            eps_unlabeled=eps_u,
            tau=tau,
            rng=derive_rng(cfg.seed, rngmod.GUMBEL, epoch, batch),
            kl_weight=kl_w,
            gamma=cfg.gamma,
            num_samples=cfg.gumbel_samples,
            dropout_rng=derive_rng(cfg.seed, rngmod.DROPOUT, epoch, batch),
            drop_word_rng=derive_rng(cfg.seed, rngmod.DROP_WORD, epoch, batch),
        )
        metrics = {
            "total": terms.loss.item(),
            "recon": -(terms.unlabeled_bound.item() if terms.unlabeled_bound is not None else 0.0),
            "kl": 0.0,
        }
        return terms.loss, metrics

    def validate():
        total_neg_u = 0.0
        for i, vb in enumerate(batchify(val_docs, cfg.eval_batch_size)):
            recon, kl = model.doc_scores(vb)
            total_neg_u += float(recon.sum() + kl.sum())
        out = {"total": total_neg_u / len(val_docs)}
        out["recon"] = out["total"]
        out["kl"] = 0.0
        if all(d.label is not None for d in val_docs):
            pred = model.predict_classes(val_docs, cfg.eval_batch_size)
            truth = np.array([d.label for d in val_docs])
            out["accuracy"] = float((pred == truth).mean())
        return out

    return _run_training(model, make_units, step, validate, cfg)


def train_classifier(model: SemiVae, labeled_docs: list[Document], val_docs: list[Document],
                     cfg: TrainConfig) -> TrainResult:
    """Supervised-only baseline: cross-entropy on q(y|x), nothing generative."""
    if not labeled_docs:
        raise InputError("classifier training needs labeled documents")

    def make_units(epoch, rng):
        return batchify(labeled_docs, min(cfg.batch_size, len(labeled_docs)), rng)

    def step(unit, *, epoch, batch, kl_w, tau):
        del kl_w, tau
        loglik = model.classifier_loglik(unit, dropout_rng=derive_rng(cfg.seed, rngmod.DROPOUT, epoch, batch))
        loss = -loglik
        return loss, {"total": loss.item(), "recon": loss.item(), "kl": 0.0}

    def validate():
        pred = model.predict_classes(val_docs, cfg.eval_batch_size)
        truth = np.array([d.label for d in val_docs])
        acc = float((pred == truth).mean())
        ce = 0.0
        for vb in batchify(val_docs, cfg.eval_batch_size):
            ce += -model.classifier_loglik(vb).item() * vb.size
        return {"total": ce / len(val_docs), "accuracy": acc, "recon": 0.0, "kl": 0.0}

    return _run_training(model, make_units, step, validate, cfg)


# ---------------------------------------------------------------------------
# encoder initialization from a pretrained language model


def init_encoder_from_lm(model, lm: LanguageModel) -> None:
    """Copy LM embedding + LSTM weights into a VAE/SemiVae encoder, bit-exact."""
    if lm.config.decoder.kind != "lstm":
        raise ConfigError("encoder initialization requires an LSTM language model")
    if not isinstance(lm.decoder.lstm, LstmParams):
        raise ConfigError("language model has no LSTM to copy")
    pairs = [
        ("enc_embedding", "dec_embedding"),
        ("enc_lstm.wx", "dec_lstm.wx"),
        ("enc_lstm.wh", "dec_lstm.wh"),
        ("enc_lstm.b", "dec_lstm.b"),
    ]
    for dst, src in pairs:
        dst_t = model.params[dst]
        src_t = lm.params[src]
        if dst_t.data.shape != src_t.data.shape:
            raise ConfigError(
                f"encoder/{dst} shape {dst_t.data.shape} does not match LM/{src} {src_t.data.shape}"
            )
        dst_t.data = src_t.data.copy()


def pretrain_lm_then_init_encoder(train_docs: list[Document], val_docs: list[Document],
                                  vae_config: ModelConfig, cfg: TrainConfig,
                                  lm_epochs: int | None = None, model_kind: str = "vae"):
    """Train an LSTM-LM, then build a fresh VAE whose encoder starts from it.

    Decoder and posterior MLP stay freshly initialized.  Returns
    (model, lm, lm_result).
    """
    lm_arch_hidden = vae_config.encoder_hidden
    from .layers import DecoderArch

    lm_config = ModelConfig(
        vocab_size=vae_config.vocab_size,
        decoder=DecoderArch(kind="lstm", lstm_hidden=lm_arch_hidden),
        embed_dim=vae_config.embed_dim,
        encoder_hidden=vae_config.encoder_hidden,
        lstm_dropout=vae_config.lstm_dropout,
        drop_word=0.0,
    )
    lm = LanguageModel(lm_config, seed=cfg.seed)
    lm_cfg = cfg
    if lm_epochs is not None:
        lm_cfg = replace(cfg, schedule=replace(cfg.schedule, epochs=lm_epochs))
    lm_result = train_lm(lm, train_docs, val_docs, lm_cfg)
    lm_result.restore_best()
    if model_kind == "vae":
        model = VaeModel(vae_config, seed=cfg.seed)
    elif model_kind == "semi":
        model = SemiVae(vae_config, seed=cfg.seed)
    else:
        raise ConfigError(f"unknown model kind {model_kind!r}")
    init_encoder_from_lm(model, lm)
    return model, lm, lm_result
