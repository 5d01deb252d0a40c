"""Run configuration files: INI-style sections of key = value pairs.

Sections
  [model]    vocab_cap, embed_dim, encoder_hidden, posterior_hidden, z_dim,
             num_classes, classifier_hidden, lstm_dropout, cnn_dropout, drop_word
  [decoder]  kind (lstm|cnn), name (SCNN|MCNN|LCNN|VLCNN|custom), filter_size,
             dilations (comma separated), channels_ext, channels_int, lstm_hidden
  [train]    lr, beta1, beta2, adam_eps, batch_size, clip_norm (or 'none'),
             alpha, gamma (or 'none'), gumbel_samples, eval_batch_size
  [schedule] epochs, kl_anneal_iters, kl_floor, lr_half_start_epoch,
             lr_half_every, tau_start, tau_min, tau_decay
  [data]     train, valid, test (corpus paths), vocab (path, else built from
             the training corpus), labeled (true|false)

Every key has a default; --override SECTION.KEY=VALUE entries win over the
file.  Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass

from .errors import ConfigError
from .layers import DecoderArch, NAMED_DILATIONS
from .models import ModelConfig
from .training import Schedule, TrainConfig

_KNOWN = {
    "model": {
        "vocab_cap", "embed_dim", "encoder_hidden", "posterior_hidden", "z_dim",
        "num_classes", "classifier_hidden", "lstm_dropout", "cnn_dropout", "drop_word",
    },
    "decoder": {"kind", "name", "filter_size", "dilations", "channels_ext", "channels_int", "lstm_hidden"},
    "train": {
        "lr", "beta1", "beta2", "adam_eps", "batch_size", "clip_norm",
        "alpha", "gamma", "gumbel_samples", "eval_batch_size",
    },
    "schedule": {
        "epochs", "kl_anneal_iters", "kl_floor", "lr_half_start_epoch",
        "lr_half_every", "tau_start", "tau_min", "tau_decay",
    },
    "data": {"train", "valid", "test", "vocab", "labeled"},
}


@dataclass
class RunConfig:
    """Everything a training command needs except the seed (a CLI flag)."""

    model_entries: dict[str, str]
    decoder_entries: dict[str, str]
    train_entries: dict[str, str]
    schedule_entries: dict[str, str]
    data: dict[str, str]

    def decoder_arch(self) -> DecoderArch:
        e = self.decoder_entries
        kind = e.get("kind", "cnn")
        name = e.get("name", "custom")
        if name in NAMED_DILATIONS:
            return DecoderArch.named(
                name,
                channels_ext=int(e.get("channels_ext", 64)),
                channels_int=int(e.get("channels_int", 32)),
            )
        dilations = tuple(int(x) for x in e.get("dilations", "1,2,4").split(",") if x.strip())
        return DecoderArch(
            kind=kind,
            filter_size=int(e.get("filter_size", 3)),
            dilations=dilations if kind == "cnn" else tuple(),
            channels_ext=int(e.get("channels_ext", 64)),
            channels_int=int(e.get("channels_int", 32)),
            lstm_hidden=int(e.get("lstm_hidden", 64)),
            name=name,
        )

    def model_config(self, vocab_size: int) -> ModelConfig:
        e = self.model_entries
        return ModelConfig(
            vocab_size=vocab_size,
            decoder=self.decoder_arch(),
            embed_dim=int(e.get("embed_dim", 32)),
            encoder_hidden=int(e.get("encoder_hidden", 64)),
            posterior_hidden=int(e.get("posterior_hidden", 64)),
            z_dim=int(e.get("z_dim", 32)),
            num_classes=int(e.get("num_classes", 0)),
            classifier_hidden=int(e.get("classifier_hidden", 64)),
            lstm_dropout=float(e.get("lstm_dropout", 0.3)),
            cnn_dropout=float(e.get("cnn_dropout", 0.1)),
            drop_word=float(e.get("drop_word", 0.0)),
        )

    def vocab_cap(self) -> int:
        return int(self.model_entries.get("vocab_cap", 20_000))

    def train_config(self, seed: int) -> TrainConfig:
        e = self.train_entries
        s = self.schedule_entries

        def opt_float(key: str, default):
            raw = e.get(key)
            if raw is None:
                return default
            return None if raw.lower() == "none" else float(raw)

        schedule = Schedule(
            epochs=int(s.get("epochs", 40)),
            kl_anneal_iters=int(s.get("kl_anneal_iters", 40_000)),
            kl_floor=float(s.get("kl_floor", 0.01)),
            lr_half_start_epoch=int(s.get("lr_half_start_epoch", 30)),
            lr_half_every=int(s.get("lr_half_every", 2)),
            tau_start=float(s.get("tau_start", 1.0)),
            tau_min=float(s.get("tau_min", 0.1)),
            tau_decay=float(s.get("tau_decay", 3.0)),
        )
        return TrainConfig(
            base_lr=float(e.get("lr", 1e-3)),
            beta1=float(e.get("beta1", 0.5)),
            beta2=float(e.get("beta2", 0.999)),
            adam_eps=float(e.get("adam_eps", 1e-8)),
            batch_size=int(e.get("batch_size", 32)),
            clip_norm=opt_float("clip_norm", 5.0),
            alpha=float(e.get("alpha", 1.0)),
            gamma=opt_float("gamma", None),
            eval_batch_size=int(e.get("eval_batch_size", 64)),
            gumbel_samples=int(e.get("gumbel_samples", 1)),
            seed=seed,
            schedule=schedule,
        )

    def labeled(self) -> bool:
        return self.data.get("labeled", "false").lower() in ("true", "1", "yes")


def _validate(section: str, key: str) -> None:
    if section not in _KNOWN:
        raise ConfigError(f"unknown config section [{section}]")
    if key not in _KNOWN[section]:
        raise ConfigError(f"unknown key {key!r} in section [{section}]")


def parse_config(path: str | None, overrides: list[str] | None = None) -> RunConfig:
    sections: dict[str, dict[str, str]] = {name: {} for name in _KNOWN}
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ConfigError(f"cannot read config file {path}")
        for section in parser.sections():
            for key, value in parser.items(section):
                _validate(section, key)
                sections[section][key] = value
    for item in overrides or []:
        target, sep, value = item.partition("=")
        if not sep or "." not in target:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        section, _, key = target.partition(".")
        _validate(section, key)
        sections[section][key] = value
    return RunConfig(
        model_entries=sections["model"],
        decoder_entries=sections["decoder"],
        train_entries=sections["train"],
        schedule_entries=sections["schedule"],
        data=sections["data"],
    )
