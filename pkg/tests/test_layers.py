"""LSTM cell/scan, residual blocks, MLPs, drop-word, receptive fields."""

import numpy as np
import pytest

from textvae import autodiff as ad
from textvae.autodiff import Tape, Tensor, grad_check
from textvae.data import PAD_ID, UNK_ID
from textvae.errors import ConfigError, InputError, ParameterError
from textvae.layers import (
    DecoderArch,
    LstmParams,
    MlpParams,
    NAMED_DILATIONS,
    ParamSet,
    ResidualBlockParams,
    drop_word,
    effective_receptive_field,
    lstm_encode,
    lstm_step,
    mlp,
    residual_block,
)


def make_lstm(input_dim=3, hidden=4, seed=0) -> tuple[ParamSet, LstmParams]:
    ps = ParamSet(seed)
    return ps, LstmParams.create(ps, "lstm", input_dim, hidden)


# ---------------------------------------------------------------------------
# LSTM


def test_lstm_forget_bias_initialized_to_one():
    _, p = make_lstm(hidden=4)
    assert np.all(p.b.data[4:8] == 1.0)
    assert np.all(p.b.data[:4] == 0.0) and np.all(p.b.data[8:] == 0.0)


def test_lstm_step_zero_params_zero_state_gives_zero():
    _, p = make_lstm()
    for t in (p.wx, p.wh, p.b):
        t.data[...] = 0.0
    h, c = lstm_step(p, Tensor(np.ones((2, 3))), Tensor(np.zeros((2, 4))), Tensor(np.zeros((2, 4))))
    assert np.all(h.data == 0.0)


def test_lstm_carry_through_when_forget_open_input_closed():
    _, p = make_lstm()
    for t in (p.wx, p.wh):
        t.data[...] = 0.0
    p.b.data[...] = 0.0
    p.b.data[0:4] = -1e9  # input gate shut
    p.b.data[4:8] = 1e9  # forget gate saturated open
    c0 = np.random.default_rng(0).standard_normal((2, 4))
    _, c1 = lstm_step(p, Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))), Tensor(c0))
    assert np.allclose(c1.data, c0, rtol=0, atol=1e-12)


def test_lstm_bptt_gradients_over_four_steps(rng):
    ps, p = make_lstm()
    x = Tensor(rng.standard_normal((2, 4, 3)))

    def f(*_):
        h = Tensor(np.zeros((2, 4)))
        c = Tensor(np.zeros((2, 4)))
        for t in range(4):
            h, c = lstm_step(p, x[:, t, :], h, c)
        return (h * h).sum()

    err = grad_check(f, [x, *ps.values()])
    assert err <= 1e-4


def test_lstm_encode_single_step_matches_cell(rng):
    ps, p = make_lstm()
    emb = Tensor(rng.standard_normal((3, 1, 3)))
    enc = lstm_encode(p, emb, np.array([1, 1, 1]))
    h, _ = lstm_step(p, emb[:, 0, :], Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 4))))
    assert np.allclose(enc.data, h.data, rtol=0, atol=0)


def test_lstm_encode_identical_rows_identical_outputs(rng):
    _, p = make_lstm()
    row = rng.standard_normal((1, 5, 3))
    emb = Tensor(np.concatenate([row, row], axis=0))
    out = lstm_encode(p, emb, np.array([4, 4]))
    assert np.array_equal(out.data[0], out.data[1])


def test_lstm_encode_ignores_padding_tail(rng):
    _, p = make_lstm()
    base = rng.standard_normal((1, 6, 3))
    junk = base.copy()
    junk[0, 3:, :] = rng.standard_normal((3, 3)) * 50
    full = lstm_encode(p, Tensor(base), np.array([3]))
    padded = lstm_encode(p, Tensor(junk), np.array([3]))
    # oracle: plain loop truncated at the true length
    h = Tensor(np.zeros((1, 4)))
    c = Tensor(np.zeros((1, 4)))
    for t in range(3):
        h, c = lstm_step(p, Tensor(base[:, t, :]), h, c)
    assert np.array_equal(full.data, padded.data)
    assert np.allclose(full.data, h.data, rtol=0, atol=0)


def test_lstm_encode_rejects_zero_length(rng):
    _, p = make_lstm()
    with pytest.raises(InputError):
        lstm_encode(p, Tensor(rng.standard_normal((2, 3, 3))), np.array([2, 0]))


# ---------------------------------------------------------------------------
# residual block


def make_block(c_ext=4, c_int=3, k=3, dilation=2, seed=0):
    ps = ParamSet(seed)
    return ps, ResidualBlockParams.create(ps, "block", c_ext, c_int, k, dilation)


def test_residual_block_zero_weights_is_identity(rng):
    ps, block = make_block()
    for t in ps.values():
        t.data[...] = 0.0
    x = Tensor(rng.standard_normal((2, 4, 6)))
    out = residual_block(block, x)
    assert np.array_equal(out.data, x.data)  # bit-identical


def test_residual_block_causality(rng):
    ps, block = make_block(dilation=3)
    x = Tensor(rng.standard_normal((1, 4, 14)))
    t = 6
    with Tape() as tape:
        out = residual_block(block, x)
        tape.backward(out[:, :, t].sum())
    assert np.all(x.grad[:, :, t + 1 :] == 0.0)


def test_residual_block_gradients(rng):
    ps, block = make_block(c_ext=3, c_int=2, k=2)
    x = Tensor(rng.standard_normal((1, 3, 5)))
    w = rng.standard_normal((1, 3, 5))
    err = grad_check(lambda *_: (residual_block(block, x) * Tensor(w)).sum(), [x, *ps.values()])
    assert err <= 1e-4


def test_residual_block_channel_mismatch(rng):
    _, block = make_block(c_ext=4)
    with pytest.raises(Exception, match="channel"):
        residual_block(block, Tensor(rng.standard_normal((1, 5, 6))))


# ---------------------------------------------------------------------------
# receptive field


def test_effective_receptive_field_named_sizes():
    assert effective_receptive_field(3, [1, 2, 4]) == 15
    assert effective_receptive_field(3, [1, 2, 4, 8, 16]) == 63
    assert effective_receptive_field(3, NAMED_DILATIONS["LCNN"]) == 125
    assert effective_receptive_field(3, NAMED_DILATIONS["VLCNN"]) == 187


def test_effective_receptive_field_k1_and_empty():
    assert effective_receptive_field(1, [1, 5, 9]) == 1
    assert effective_receptive_field(3, []) == 1


def test_effective_receptive_field_validation():
    with pytest.raises(ParameterError):
        effective_receptive_field(0, [1])
    with pytest.raises(ParameterError):
        effective_receptive_field(2, [1, 0])


def test_named_arch_schedules_enforced():
    arch = DecoderArch.named("MCNN")
    assert arch.dilations == (1, 2, 4, 8, 16) and arch.receptive_field == 63
    with pytest.raises(ConfigError):
        DecoderArch(kind="cnn", name="SCNN", dilations=(1, 2))
    with pytest.raises(ConfigError):
        DecoderArch.named("XXL")


# ---------------------------------------------------------------------------
# drop-word


def test_drop_word_rate_zero_is_identity():
    tokens = np.array([[1, 5, 6, 2, 0, 0]])
    out = drop_word(tokens, 0.0, np.random.default_rng(0), PAD_ID, UNK_ID)
    assert np.array_equal(out, tokens)


def test_drop_word_rejects_rate_one():
    with pytest.raises(ParameterError):
        drop_word(np.array([1, 2]), 1.0, np.random.default_rng(0), PAD_ID, UNK_ID)


def test_drop_word_replacement_fraction():
    tokens = np.full(10_000, 7)
    out = drop_word(tokens, 0.5, np.random.default_rng(11), PAD_ID, UNK_ID)
    frac = (out == UNK_ID).mean()
    assert abs(frac - 0.5) <= 0.02


def test_drop_word_never_touches_pad():
    tokens = np.zeros(500, dtype=np.int64)  # all PAD
    out = drop_word(tokens, 0.9, np.random.default_rng(3), PAD_ID, UNK_ID)
    assert np.all(out == PAD_ID)


def test_drop_word_leaves_input_array_alone():
    tokens = np.array([4, 5, 6, 4, 5, 6])
    snapshot = tokens.copy()
    drop_word(tokens, 0.8, np.random.default_rng(1), PAD_ID, UNK_ID)
    assert np.array_equal(tokens, snapshot)


# ---------------------------------------------------------------------------
# MLP


def test_mlp_zero_single_layer_gives_zero(rng):
    ps = ParamSet(0)
    p = MlpParams.create(ps, "m", [3, 2])
    for t in ps.values():
        t.data[...] = 0.0
    out = mlp(p, Tensor(rng.standard_normal((4, 3))))
    assert np.all(out.data == 0.0)


def test_mlp_identity_single_layer(rng):
    ps = ParamSet(0)
    p = MlpParams.create(ps, "m", [3, 3])
    p.layers[0][0].data[...] = np.eye(3)
    p.layers[0][1].data[...] = 0.0
    x = rng.standard_normal((2, 3))
    assert np.array_equal(mlp(p, Tensor(x)).data, x)


def test_mlp_two_layer_gradients(rng):
    ps = ParamSet(0)
    p = MlpParams.create(ps, "m", [3, 4, 2])
    p.layers[0][1].data += 0.05  # keep ReLU inputs off the kink
    x = Tensor(rng.standard_normal((3, 3)))
    err = grad_check(lambda *_: (mlp(p, x) * mlp(p, x)).sum(), [x, *ps.values()])
    assert err <= 1e-4
