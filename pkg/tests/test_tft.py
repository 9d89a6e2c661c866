import json
import math

import numpy as np
import pytest

from conftest import tiny_config
from tecfusion import autodiff as ad
from tecfusion.autodiff import Tensor, grad_check
from tecfusion.config import ModelConfig
from tecfusion.errors import CheckpointError, InvalidArgumentError, InvalidMaskError, MissingSeedError, ShapeError
from tecfusion.timeseries import NormalizationStats
from tecfusion.tft import (
    Batch,
    Checkpoint,
    ParamRegistry,
    TemporalFusionTransformer,
    causal_decoder_mask,
    load_checkpoint,
    quantile_loss,
    save_checkpoint,
)
from tecfusion.tft.layers import (
    Context,
    GateAddNorm,
    GatedResidualNetwork,
    InterpretableMultiHeadAttention,
    LSTMStack,
    VariableSelectionNetwork,
)

EVAL = Context()


def small_model(L=8, H=2, hidden=8, dropout=0.0, n_static=3, n_enc=4, n_dec=2, layers=1):
    cfg = ModelConfig(
        hidden_size=hidden, attention_heads=2, lstm_layers=layers, dropout_rate=dropout,
        encoder_steps=L, decoder_steps=H,
    )
    return TemporalFusionTransformer(cfg, n_static, n_enc, n_dec)


def random_batch(model, B, seed=0):
    rng = np.random.default_rng(seed)
    c = model.config
    return Batch(
        rng.normal(size=(B, model.n_static)),
        rng.normal(size=(B, c.encoder_steps, model.n_encoder)),
        rng.normal(size=(B, c.decoder_steps, model.n_decoder)),
        rng.normal(size=(B, c.decoder_steps, 2)),
    )


def layer_norm_np(x):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + 1e-8)


# gated residual network -----------------------------------------------------------------

def test_grn_with_closed_gate_is_normalized_skip():
    reg = ParamRegistry()
    grn = GatedResidualNetwork(reg, "g", 3, 5, 4)
    p = reg.initialize(0)
    # zero the value half of the fused GLU projection so the gate passes nothing
    p["g.gate.glu.weight"].value[:, 4:] = 0.0
    p["g.gate.glu.bias"].value[4:] = 0.0
    x = np.random.default_rng(1).normal(size=(6, 3))
    skip = x @ p["g.skip.weight"].value + p["g.skip.bias"].value
    np.testing.assert_allclose(grn(p, Tensor(x), EVAL).value, layer_norm_np(skip), atol=1e-10)


def test_grn_identity_skip_when_widths_match():
    reg = ParamRegistry()
    grn = GatedResidualNetwork(reg, "g", 4, 5, 4)
    assert "g.skip.weight" not in reg.specs
    p = reg.initialize(0)
    p["g.gate.glu.weight"].value[:, 4:] = 0.0
    p["g.gate.glu.bias"].value[4:] = 0.0
    x = np.random.default_rng(2).normal(size=(2, 4))
    np.testing.assert_allclose(grn(p, Tensor(x), EVAL).value, layer_norm_np(x), atol=1e-10)


def test_grn_context_errors():
    reg = ParamRegistry()
    with_ctx = GatedResidualNetwork(reg, "a", 3, 4, 4, n_context=2)
    without = GatedResidualNetwork(reg, "b", 3, 4, 4)
    p = reg.initialize(0)
    x = Tensor(np.ones((2, 3)))
    with pytest.raises(ShapeError):
        with_ctx(p, x, EVAL, Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        without(p, x, EVAL, Tensor(np.ones((2, 2))))
    assert with_ctx(p, x, EVAL, Tensor(np.ones((2, 2)))).shape == (2, 4)


# variable selection --------------------------------------------------------------------

def test_selection_weights_are_a_simplex():
    reg = ParamRegistry()
    vsn = VariableSelectionNetwork(reg, "v", 5, 6, n_context=6)
    p = reg.initialize(3)
    rng = np.random.default_rng(0)
    combined, w = vsn(p, Tensor(rng.normal(size=(4, 7, 5, 6))), EVAL, Tensor(rng.normal(size=(4, 1, 6))))
    assert combined.shape == (4, 7, 6)
    assert w.shape == (4, 7, 5)
    assert np.all(w.value >= 0)
    np.testing.assert_allclose(w.value.sum(-1), 1.0, atol=1e-12)


def test_single_variable_gets_full_weight():
    reg = ParamRegistry()
    vsn = VariableSelectionNetwork(reg, "v", 1, 4)
    p = reg.initialize(0)
    emb = np.random.default_rng(0).normal(size=(3, 1, 4))
    combined, w = vsn(p, Tensor(emb), EVAL)
    np.testing.assert_array_equal(w.value, 1.0)
    # the combination is then just the per-variable GRN output
    alone = vsn.per_var(p, Tensor(emb.transpose(1, 0, 2)), EVAL).value.transpose(1, 0, 2)[:, 0]
    np.testing.assert_allclose(combined.value, alone, atol=1e-12)


def test_per_variable_grns_are_independent():
    reg = ParamRegistry()
    vsn = VariableSelectionNetwork(reg, "v", 3, 4)
    p = reg.initialize(0)
    assert reg.specs["v.var.fc_in.weight"].shape == (3, 4, 4)
    emb = np.random.default_rng(0).normal(size=(2, 3, 4))
    x = Tensor(emb.transpose(1, 0, 2))
    stacked = vsn.per_var(p, x, EVAL).value
    for v in range(3):
        h = emb[:, v] @ p["v.var.fc_in.weight"].value[v] + p["v.var.fc_in.bias"].value[v, 0]
        h = np.where(h > 0, h, np.expm1(np.minimum(h, 0)))
        h = h @ p["v.var.fc_hidden.weight"].value[v] + p["v.var.fc_hidden.bias"].value[v, 0]
        z = h @ p["v.var.gate.glu.weight"].value[v] + p["v.var.gate.glu.bias"].value[v, 0]
        glu = 1 / (1 + np.exp(-z[:, :4])) * z[:, 4:]
        out = layer_norm_np(emb[:, v] + glu) * p["v.var.gate.norm.scale"].value[v, 0] + p["v.var.gate.norm.shift"].value[v, 0]
        np.testing.assert_allclose(stacked[v], out, atol=1e-10)


# LSTM -------------------------------------------------------------------------------

def lstm_oracle(x, w_in, w_rec, bias, h, c):
    """Textbook LSTM cell loop with gate order input, forget, cell, output."""
    n = h.shape[-1]
    sig = lambda z: 1 / (1 + np.exp(-z))  # noqa: E731
    out = []
    for t in range(x.shape[1]):
        z = x[:, t] @ w_in + h @ w_rec + bias
        i, f, g, o = sig(z[:, :n]), sig(z[:, n : 2 * n]), np.tanh(z[:, 2 * n : 3 * n]), sig(z[:, 3 * n :])
        c = f * c + i * g
        h = o * np.tanh(c)
        out.append(h)
    return np.stack(out, 1), h, c


def test_lstm_matches_cell_oracle():
    reg = ParamRegistry()
    lstm = LSTMStack(reg, "l", 3, 5, 2)
    p = reg.initialize(4)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 6, 3))
    states = [(rng.normal(size=(2, 5)), rng.normal(size=(2, 5))) for _ in range(2)]
    seq, final = lstm(p, Tensor(x), [(Tensor(h), Tensor(c)) for h, c in states])
    mid, h0, c0 = lstm_oracle(x, p["l.l0.w_in"].value, p["l.l0.w_rec"].value, p["l.l0.bias"].value, *states[0])
    top, h1, c1 = lstm_oracle(mid, p["l.l1.w_in"].value, p["l.l1.w_rec"].value, p["l.l1.bias"].value, *states[1])
    np.testing.assert_allclose(seq.value, top, atol=1e-12)
    np.testing.assert_allclose(final[0][1].value, c0, atol=1e-12)
    np.testing.assert_allclose(final[1][0].value, h1, atol=1e-12)


def test_lstm_with_zero_weights_halves_the_cell():
    reg = ParamRegistry()
    lstm = LSTMStack(reg, "l", 2, 3, 1)
    p = reg.initialize(0)
    for t in p.values():
        t.value[...] = 0.0
    c0 = np.array([[0.4, -1.0, 2.0]])
    seq, final = lstm(p, Tensor(np.ones((1, 2, 2))), [(Tensor(np.zeros((1, 3))), Tensor(c0))])
    np.testing.assert_allclose(final[0][1].value, c0 / 4)
    np.testing.assert_allclose(seq.value[0, 0], 0.5 * np.tanh(c0[0] / 2))


def test_zero_weight_lstm_block_reduces_to_normalized_inputs():
    reg = ParamRegistry()
    lstm = LSTMStack(reg, "l", 4, 4, 2)
    gate = GateAddNorm(reg, "g", 4, 4)
    p = reg.initialize(0)
    for name, t in p.items():
        if not name.endswith(".scale"):
            t.value[...] = 0.0
    x = np.random.default_rng(0).normal(size=(2, 5, 4))
    zeros = Tensor(np.zeros((2, 4)))
    seq, _ = lstm(p, Tensor(x), [(zeros, zeros)] * 2)
    np.testing.assert_array_equal(seq.value, 0.0)
    np.testing.assert_allclose(gate(p, seq, Tensor(x), EVAL).value, layer_norm_np(x), atol=1e-12)


def test_lstm_gradients():
    reg = ParamRegistry()
    lstm = LSTMStack(reg, "l", 2, 3, 1)
    names = list(reg.specs)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 4, 2))

    def loss(w_in, w_rec, bias, h0, c0):
        p = dict(zip(names, (w_in, w_rec, bias)))
        seq, _ = lstm(p, Tensor(x), [(h0, c0)])
        return ad.sum_(ad.square(seq))

    point = [rng.normal(scale=0.5, size=reg.specs[n].shape) for n in names]
    point += [rng.normal(size=(2, 3)), rng.normal(size=(2, 3))]
    assert grad_check(loss, point) < 1e-6


# attention ------------------------------------------------------------------------------

def test_causal_mask_pattern():
    m = causal_decoder_mask(3, 2)
    assert m.shape == (2, 5)
    assert m.tolist() == [[False] * 4 + [True], [False] * 5]


def test_attention_rows_and_masked_entries():
    reg = ParamRegistry()
    mha = InterpretableMultiHeadAttention(reg, "a", 8, 2)
    p = reg.initialize(1)
    rng = np.random.default_rng(0)
    keys = rng.normal(size=(3, 6, 8))
    mask = causal_decoder_mask(4, 2)
    out, w = mha(p, Tensor(keys[:, 4:]), Tensor(keys), mask)
    assert out.shape == (3, 2, 8)
    assert w.shape == (3, 2, 2, 6)
    np.testing.assert_allclose(w.value.sum(-1), 1.0, atol=1e-12)
    assert np.all(w.value[..., mask] == 0.0)


def test_uniform_attention_averages_values():
    reg = ParamRegistry()
    mha = InterpretableMultiHeadAttention(reg, "a", 4, 2)
    p = reg.initialize(2)
    for name in ("a.query.weight", "a.query.bias", "a.key.weight", "a.key.bias"):
        p[name].value[...] = 0.0
    keys = np.random.default_rng(1).normal(size=(1, 5, 4))
    mask = causal_decoder_mask(3, 2)
    out, w = mha(p, Tensor(keys[:, 3:]), Tensor(keys), mask)
    np.testing.assert_allclose(w.value[0, :, 0], [[0.25] * 4 + [0.0]] * 2)
    v = keys[0] @ p["a.value.weight"].value + p["a.value.bias"].value
    expected = v[:4].mean(0) @ p["a.out.weight"].value + p["a.out.bias"].value
    np.testing.assert_allclose(out.value[0, 0], expected, atol=1e-12)


def test_fully_masked_row_rejected():
    reg = ParamRegistry()
    mha = InterpretableMultiHeadAttention(reg, "a", 4, 2)
    p = reg.initialize(0)
    x = Tensor(np.ones((1, 3, 4)))
    mask = np.zeros((3, 3), dtype=bool)
    mask[1] = True
    with pytest.raises(InvalidMaskError):
        mha(p, x, x, mask)


# full model -------------------------------------------------------------------------------

def expected_parameter_count(S, E, D, h, heads=2, layers=2, quantiles=3, targets=2):
    """Independent tally of the architecture's weights."""
    linear = lambda i, o, bias=True: i * o + (o if bias else 0)  # noqa: E731
    gan = lambda i, o: linear(i, 2 * o) + 2 * o  # noqa: E731

    def grn(i, hid, o, ctx=0):
        return (linear(i, o) if i != o else 0) + linear(i, hid) + ctx * hid + linear(hid, hid) + gan(hid, o)

    def vsn(v, ctx=0):
        return grn(v * h, h, v, ctx) + v * grn(h, h, h)

    def lstm(i):
        return sum((i if k == 0 else h) * 4 * h + h * 4 * h + 4 * h for k in range(layers))

    d = h // heads
    attention = 2 * linear(h, heads * d) + linear(h, d) + linear(d, h)
    return (
        2 * h * (S + E + D)
        + vsn(S) + vsn(E, h) + vsn(D, h)
        + 4 * grn(h, h, h)
        + 2 * lstm(h)
        + gan(h, h)
        + grn(h, h, h, h)
        + attention + gan(h, h)
        + grn(h, h, h)
        + gan(h, h)
        + linear(h, targets * quantiles)
    )


def test_parameter_count_golden():
    cfg = ModelConfig(hidden_size=64, encoder_steps=27, decoder_steps=24)
    model = TemporalFusionTransformer(cfg, 5, 19, 4)
    assert model.parameter_count == expected_parameter_count(5, 19, 4, 64)
    assert model.parameter_count == 913138
    assert model.init_params(0).count() == 913138


def test_forward_shape_and_record():
    model = small_model(L=27, H=24, hidden=16, n_static=5, n_enc=7, n_dec=4)
    p = model.init_params(0)
    out, rec = model.forward(p, random_batch(model, 3))
    assert out.shape == (3, 24, 2, 3)
    assert rec.attention.shape == (3, 2, 24, 51)
    np.testing.assert_allclose(rec.encoder_weights.sum(-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(rec.static_weights.sum(-1), 1.0, atol=1e-12)


def test_same_seed_same_parameters_and_outputs():
    model = small_model()
    a, b = model.init_params(7), model.init_params(7)
    assert all(np.array_equal(a[n].value, b[n].value) for n in a)
    batch = random_batch(model, 2)
    np.testing.assert_array_equal(model.predict(a, batch), model.predict(b, batch))
    assert not np.array_equal(model.init_params(8)["output.head.weight"].value, a["output.head.weight"].value)


def test_decoder_is_causal():
    model = small_model(H=4)
    p = model.init_params(0)
    batch = random_batch(model, 2)
    base = model.predict(p, batch)
    changed = Batch(batch.static, batch.encoder, batch.decoder.copy())
    changed.decoder[:, 2] += 5.0
    out = model.predict(p, changed)
    np.testing.assert_array_equal(out[:, :2], base[:, :2])
    assert not np.allclose(out[:, 2:], base[:, 2:])


def test_train_mode_needs_seed_and_eval_is_deterministic():
    model = small_model(dropout=0.2)
    p = model.init_params(0)
    batch = random_batch(model, 2)
    with pytest.raises(MissingSeedError):
        model.forward(p, batch, mode="train")
    a = model.forward(p, batch, "train", np.random.default_rng(1))[0].value
    b = model.forward(p, batch, "train", np.random.default_rng(1))[0].value
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, model.forward(p, batch)[0].value)
    with pytest.raises(InvalidArgumentError):
        model.forward(p, batch, mode="test")


def test_batch_shape_checked():
    model = small_model()
    batch = random_batch(model, 2)
    with pytest.raises(ShapeError):
        model.forward(model.init_params(0), Batch(batch.static, batch.encoder[:, 1:], batch.decoder))


def test_full_model_gradients():
    model = small_model(L=8, H=2, hidden=8)
    params = model.init_params(0)
    names = list(params)
    batch = random_batch(model, 2)

    def loss(*tensors):
        p = dict(zip(names, tensors))
        out, _ = model.forward(_Params(p), batch)
        return quantile_loss(out, batch.targets, model.config.quantiles) + ad.mean(ad.square(out)) * 0.1

    point = [params[n].value for n in names]
    assert grad_check(loss, point, coords=400, seed=0) < 1e-4


class _Params(dict):
    @property
    def dtype(self):
        return next(iter(self.values())).value.dtype


# loss ------------------------------------------------------------------------------------

def test_pinball_examples():
    assert quantile_loss(Tensor(np.array([[0.0]])), np.array([1.0]), [0.5]).value == 0.5
    assert quantile_loss(Tensor(np.array([[1.0]])), np.array([0.0]), [0.9]).value == pytest.approx(0.1)
    assert quantile_loss(Tensor(np.array([[0.0]])), np.array([1.0]), [0.9]).value == pytest.approx(0.9)
    assert quantile_loss(Tensor(np.array([[2.0]])), np.array([2.0]), [0.1]).value == 0.0


def test_pinball_matches_brute_force():
    rng = np.random.default_rng(0)
    pred, y, qs = rng.normal(size=(4, 3, 3)), rng.normal(size=(4, 3)), [0.1, 0.5, 0.9]
    brute = np.mean(
        [max(q * (y[i, j] - pred[i, j, k]), (q - 1) * (y[i, j] - pred[i, j, k]))
         for i in range(4) for j in range(3) for k, q in enumerate(qs)]
    )
    assert quantile_loss(Tensor(pred), y, qs).value == pytest.approx(brute, abs=1e-14)


def test_pinball_validation():
    with pytest.raises(InvalidArgumentError):
        quantile_loss(Tensor(np.zeros((2, 1))), np.zeros(2), [1.0])
    with pytest.raises(ShapeError):
        quantile_loss(Tensor(np.zeros((2, 2))), np.zeros(3), [0.1, 0.9])


# checkpoints ------------------------------------------------------------------------------

def make_checkpoint():
    cfg = tiny_config()
    model = TemporalFusionTransformer(cfg.model, 5, 3, 4)
    stats = NormalizationStats.from_dict({})
    return Checkpoint(cfg, model.init_params(3), stats, 3, tuple("abcde"), ("x", "y", "z"), tuple("pqrs"))


def test_checkpoint_round_trip(tmp_path):
    ck = make_checkpoint()
    path = tmp_path / "ck.json"
    save_checkpoint(ck, path)
    loaded = load_checkpoint(path, expected_config=ck.config)
    assert loaded.encoder_names == ck.encoder_names and loaded.seed == 3
    for name, t in ck.params.items():
        np.testing.assert_array_equal(loaded.params[name].value, t.value)
    rng = np.random.default_rng(0)
    batch = Batch(rng.normal(size=(2, 5)), rng.normal(size=(2, 6, 3)), rng.normal(size=(2, 4, 4)))
    np.testing.assert_array_equal(ck.model().predict(ck.params, batch), loaded.model().predict(loaded.params, batch))


def test_checkpoint_mismatches(tmp_path):
    ck = make_checkpoint()
    path = tmp_path / "ck.json"
    save_checkpoint(ck, path)
    with pytest.raises(CheckpointError):
        load_checkpoint(path, expected_config=tiny_config(hidden=16))
    data = json.loads(path.read_text())
    data["parameters"]["output.head.weight"]["shape"] = [4, 6]
    path.write_text(json.dumps(data))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    data["parameters"].pop("output.head.weight")
    path.write_text(json.dumps(data))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    path.write_text(json.dumps({"format": "other"}))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_lstm_initial_uniform_bound():
    reg = ParamRegistry()
    LSTMStack(reg, "l", 3, 16, 1)
    w = reg.initialize(0)["l.l0.w_in"].value
    assert np.abs(w).max() <= 1 / math.sqrt(16)
