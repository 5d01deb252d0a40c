"""Command-line surface.

Commands: train-lm, train-vae, train-semi, cluster, eval, generate,
export-latent, probe-arch.  Exit codes are a stable contract: 0 success,
1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from .checkpoint import load_model, save_model
from .config import RunConfig, parse_config
from .data import Vocabulary, batchify, build_vocab, read_corpus
from .errors import ConfigError, InputError, NumericError, ParameterError, ParseError, UsageError
from .generate import MAX_LENGTH_CAP, beam_search
from .layers import DecoderArch, NAMED_DILATIONS
from .models import LanguageModel, VaeModel, eval_nll_ppl
from .probes import probe_arch
from .rng import derive_rng
from .semisup import SemiVae, cluster_evaluate
from .training import (
    TrainConfig,
    pretrain_lm_then_init_encoder,
    train_classifier,
    train_lm,
    train_semi,
    train_vae,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        raise UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="textvae", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", default=None, help="INI config file")
            sp.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default=".", help="output directory")

    for name in ("train-lm", "train-vae", "train-semi", "cluster"):
        sp = sub.add_parser(name)
        common(sp)
        if name == "train-semi":
            sp.add_argument("--labeled", required=True, help="labeled corpus path")
        if name == "cluster":
            sp.add_argument("--restarts", type=int, default=1)

    sp = sub.add_parser("eval")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--vocab", required=True)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--labeled", action="store_true")
    sp.add_argument("--eps-mode", choices=("mean", "sample"), default="mean")
    sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("generate")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--vocab", required=True)
    sp.add_argument("--beam", type=int, default=10)
    sp.add_argument("--max-len", type=int, default=MAX_LENGTH_CAP)
    sp.add_argument("--label", type=int, default=None)
    sp.add_argument("--all-labels", action="store_true", help="one line per class with z fixed")
    sp.add_argument("--z-source", choices=("prior", "zeros"), default="prior")
    sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("export-latent")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--vocab", required=True)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--labeled", action="store_true")
    sp.add_argument("--out-file", required=True)

    sp = sub.add_parser("probe-arch")
    sp.add_argument("--name", choices=sorted(NAMED_DILATIONS), default=None)
    sp.add_argument("--config", default=None)
    sp.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE")
    sp.add_argument("--seed", type=int, default=0)
    return p


# ---------------------------------------------------------------------------
# helpers


def _load_data(rc: RunConfig, labeled: bool):
    train_path = rc.data.get("train")
    if not train_path:
        raise ConfigError("config [data] section must name a train corpus")
    vocab_path = rc.data.get("vocab")
    if vocab_path:
        vocab = Vocabulary.load(vocab_path)
    else:
        with open(train_path, encoding="utf-8") as fh:
            texts = (line.partition("\t")[2] if labeled else line for line in fh)
            vocab = build_vocab(texts, rc.vocab_cap())
    num_classes = int(rc.model_entries.get("num_classes", 0)) or None
    train = read_corpus(train_path, vocab, labeled=labeled, num_classes=num_classes)
    valid_path = rc.data.get("valid")
    valid = read_corpus(valid_path, vocab, labeled=labeled, num_classes=num_classes) if valid_path else train
    return vocab, train, valid


def _finish_training(result, vocab, out_dir: str, tag: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    result.restore_best()
    save_model(os.path.join(out_dir, f"{tag}.ckpt"), result.model)
    result.manifest.save(os.path.join(out_dir, f"{tag}.manifest"))
    vocab.save(os.path.join(out_dir, f"{tag}.vocab"))
    last = result.manifest.records[-1] if result.manifest.records else {}
    print(f"saved {tag}.ckpt best_val_total={result.best_val_total!r}")
    if last:
        print("final " + " ".join(f"{k}={v}" for k, v in last.items()))


# ---------------------------------------------------------------------------
# commands


def _cmd_train_lm(args) -> int:
    rc = parse_config(args.config, args.override)
    vocab, train, valid = _load_data(rc, rc.labeled())
    cfg = rc.train_config(args.seed)
    model = LanguageModel(rc.model_config(vocab.size), seed=args.seed)
    result = train_lm(model, train, valid, cfg)
    _finish_training(result, vocab, args.out, "lm")
    return EXIT_OK


def _cmd_train_vae(args) -> int:
    rc = parse_config(args.config, args.override)
    vocab, train, valid = _load_data(rc, rc.labeled())
    cfg = rc.train_config(args.seed)
    model = VaeModel(rc.model_config(vocab.size), seed=args.seed)
    result = train_vae(model, train, valid, cfg)
    _finish_training(result, vocab, args.out, "vae")
    return EXIT_OK


def _cmd_train_semi(args) -> int:
    rc = parse_config(args.config, args.override)
    vocab, unlabeled, valid = _load_data(rc, labeled=False)
    mc = rc.model_config(vocab.size)
    if mc.num_classes < 1:
        raise ConfigError("train-semi needs model.num_classes >= 1")
    labeled = read_corpus(args.labeled, vocab, labeled=True, num_classes=mc.num_classes)
    cfg = rc.train_config(args.seed)
    model = SemiVae(mc, seed=args.seed)
    result = train_semi(model, labeled, unlabeled, valid, cfg)
    _finish_training(result, vocab, args.out, "semi")
    return EXIT_OK


def _cmd_cluster(args) -> int:
    rc = parse_config(args.config, args.override)
    vocab, train, valid = _load_data(rc, labeled=False)
    mc = rc.model_config(vocab.size)
    if mc.num_classes < 1:
        raise ConfigError("cluster needs model.num_classes >= 1")
    from dataclasses import replace

    best = None
    for restart in range(args.restarts):
        seed = args.seed + restart
        cfg = replace(rc.train_config(seed), alpha=0.0)  # clustering optimizes U(x) alone
        model, _, _ = pretrain_lm_then_init_encoder(train, valid, mc, cfg, model_kind="semi")
        result = train_semi(model, None, train, valid, cfg)
        if best is None or result.best_val_total < best.best_val_total:
            best = result
    _finish_training(best, vocab, args.out, "cluster")
    return EXIT_OK


def _cmd_eval(args) -> int:
    model = load_model(args.checkpoint)
    vocab = Vocabulary.load(args.vocab)
    num_classes = model.config.num_classes or None
    docs = read_corpus(args.corpus, vocab, labeled=args.labeled, num_classes=num_classes)
    res = eval_nll_ppl(model, docs, eps_mode=args.eps_mode, seed=args.seed)
    print(f"NLL {res.nll:.4f} (KL {res.kl:.4f})  PPL {res.ppl:.4f}")
    print(f"recon {res.recon:.4f}  docs {res.n_docs}  tokens {res.n_tokens}  eps_mode={res.eps_mode}")
    print(f"exact nll={res.nll!r} recon={res.recon!r} kl={res.kl!r} ppl={res.ppl!r}")
    if isinstance(model, SemiVae) and args.labeled:
        report = cluster_evaluate(model, docs, docs)
        print(f"cluster accuracy {report.accuracy:.4f}"
              + (f"  empty_clusters={report.empty_clusters}" if report.empty_clusters else ""))
    return EXIT_OK


def _cmd_generate(args) -> int:
    model = load_model(args.checkpoint)
    vocab = Vocabulary.load(args.vocab)
    z = None
    if isinstance(model, (VaeModel, SemiVae)):
        if args.z_source == "prior":
            z = derive_rng(args.seed, 0x5A).standard_normal(model.config.z_dim)
        else:
            z = np.zeros(model.config.z_dim)
    labels: list[int | None]
    if args.all_labels:
        if not isinstance(model, SemiVae):
            raise UsageError("--all-labels needs a label-conditioned checkpoint")
        labels = list(range(model.config.num_classes))
    else:
        labels = [args.label]
    for label in labels:
        tokens = beam_search(model, z=z, label=label, beam=args.beam, max_len=args.max_len)
        text = " ".join(vocab.token(t) for t in tokens)
        prefix = f"[class {label}] " if label is not None else ""
        print(prefix + text)
    return EXIT_OK


def _cmd_export_latent(args) -> int:
    model = load_model(args.checkpoint)
    if isinstance(model, LanguageModel):
        raise UsageError("export-latent needs a VAE checkpoint")
    vocab = Vocabulary.load(args.vocab)
    num_classes = model.config.num_classes or None
    docs = read_corpus(args.corpus, vocab, labeled=args.labeled, num_classes=num_classes)
    with open(args.out_file, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["doc_id", "label"] + [f"mu_{i}" for i in range(model.config.z_dim)])
        for batch in batchify(docs, 64):
            if isinstance(model, SemiVae):
                q = model.classify(batch)
                post = model.encode(batch, q)
            else:
                post = model.encode(batch)
            labels = batch.labels if batch.labels is not None else [-1] * batch.size
            for doc_id, label, row in zip(batch.doc_ids, labels, post.mu.data):
                writer.writerow([int(doc_id), int(label)] + [repr(float(v)) for v in row])
    print(f"wrote {len(docs)} rows to {args.out_file}")
    return EXIT_OK


def _cmd_probe_arch(args) -> int:
    if args.name:
        arch = DecoderArch.named(args.name, channels_ext=16, channels_int=8)
    else:
        rc = parse_config(args.config, args.override)
        arch = rc.decoder_arch()
        if arch.kind != "cnn":
            raise UsageError("probe-arch needs a cnn decoder config")
    report = probe_arch(arch, seed=args.seed)
    for line in report.lines():
        print(line)
    if not report.ok:
        raise NumericError("empirical receptive field disagrees with the analytic window")
    return EXIT_OK


_COMMANDS = {
    "train-lm": _cmd_train_lm,
    "train-vae": _cmd_train_vae,
    "train-semi": _cmd_train_semi,
    "cluster": _cmd_cluster,
    "eval": _cmd_eval,
    "generate": _cmd_generate,
    "export-latent": _cmd_export_latent,
    "probe-arch": _cmd_probe_arch,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        return _COMMANDS[args.command](args)
    except (UsageError, ConfigError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InputError, ParseError, OSError, IndexError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
