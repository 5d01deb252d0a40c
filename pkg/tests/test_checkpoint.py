"""Checkpoint binary format: bit-exact round trips and error handling."""

import struct

import numpy as np
import pytest

from textvae.checkpoint import MAGIC, load_checkpoint, load_model, save_checkpoint, save_model
from textvae.errors import ConfigError
from textvae.models import eval_nll_ppl
from conftest import tiny_corpus, tiny_lm, tiny_semi, tiny_vae


def test_raw_round_trip_bit_exact(tmp_path, rng):
    params = {
        "a.w": rng.standard_normal((3, 4)),
        "b": rng.standard_normal(7) * 1e-17,  # denormal-ish values survive
        "scalar": np.array(3.5),
    }
    config = {"kind": "vae", "note": "x=1,y=2"}
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, config, params)
    config2, params2 = load_checkpoint(path)
    assert config2 == config
    assert set(params2) == set(params)
    for k in params:
        assert params2[k].dtype == np.float64
        assert params2[k].shape == params[k].shape
        assert np.array_equal(params2[k], params[k])
        assert params2[k].tobytes() == np.asarray(params[k], dtype="<f8").tobytes()


@pytest.mark.parametrize("factory", [tiny_vae, tiny_lm, tiny_semi])
def test_model_round_trip_reproduces_eval_bitwise(factory, tmp_path):
    docs, vocab, _ = tiny_corpus(seed=21, vocab_size=5, docs_per_class=6, num_classes=3)
    model = factory(vocab_size=vocab.size, seed=4)
    path = tmp_path / "model.ckpt"
    save_model(path, model)
    loaded = load_model(path)
    assert type(loaded) is type(model)
    for name, t in model.params.items():
        assert np.array_equal(t.data, loaded.params[name].data)
    a = eval_nll_ppl(model, docs)
    b = eval_nll_ppl(loaded, docs)
    assert a.nll == b.nll and a.kl == b.kl and a.ppl == b.ppl  # bit-exact


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ConfigError, match="magic"):
        load_checkpoint(path)


def test_bad_version_rejected(tmp_path):
    path = tmp_path / "v9.ckpt"
    path.write_bytes(MAGIC + struct.pack("<I", 9) + struct.pack("<I", 0) + struct.pack("<I", 0))
    with pytest.raises(ConfigError, match="version"):
        load_checkpoint(path)


def test_mismatched_parameters_rejected(tmp_path):
    model = tiny_vae(vocab_size=8)
    path = tmp_path / "m.ckpt"
    config = model.checkpoint_config()
    arrays = {k: t.data for k, t in model.params.items()}
    arrays.pop("dec_head.b")
    save_checkpoint(path, config, arrays)
    with pytest.raises(ConfigError, match="dec_head.b"):
        load_model(path)


def test_checkpoint_is_little_endian_on_disk(tmp_path):
    path = tmp_path / "le.ckpt"
    save_checkpoint(path, {}, {"x": np.array([1.0])})
    raw = path.read_bytes()
    assert raw[:4] == MAGIC
    assert raw[4:8] == struct.pack("<I", 1)  # version field little-endian
    assert raw[-8:] == struct.pack("<d", 1.0)  # float64 payload little-endian
