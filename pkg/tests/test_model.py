import math

import numpy as np
import pytest

from roi_attend.dsp import FeatureSequence
from roi_attend.model import (
    AttentionTrace,
    ModelConfig,
    ModelParams,
    NoAttentionError,
    NumericError,
    Variant,
    attention_step,
    encode,
    forward,
    init_params,
    lstm_forward,
    make_dropout_mask,
    param_shapes,
)
from roi_attend.numerics import SeededRng, ShapeError


def zero_params(cfg: ModelConfig) -> ModelParams:
    return ModelParams({k: np.zeros(s) for k, s in param_shapes(cfg).items()})


def feats(T, d, seed=0, n_pad=0):
    rng = SeededRng(seed)
    pad = np.zeros(T, dtype=bool)
    if n_pad:
        pad[-n_pad:] = True
    return FeatureSequence(rng.normal(size=(T, d)), np.arange(T) * 160, pad)


class TestVariant:
    def test_parse_and_model_numbers(self):
        assert Variant.parse("uni_attention").model_number == 1
        assert Variant.parse("bi_attention").model_number == 2
        assert Variant.parse("uni_plain").model_number == 3
        assert Variant.parse("bi_plain").model_number == 4

    def test_flags(self):
        assert Variant.BI_ATTENTION.bidirectional and Variant.BI_ATTENTION.has_attention
        assert not Variant.UNI_PLAIN.bidirectional and not Variant.UNI_PLAIN.has_attention

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            Variant.parse("lstm9000")


class TestModelConfig:
    def test_six_classes_pinned(self):
        with pytest.raises(ValueError):
            ModelConfig(n_classes=5)

    def test_size_invariants(self):
        for bad in (
            dict(enc_hidden=0),
            dict(dec_hidden=0),
            dict(dec_steps=0),
            dict(dropout_rate=1.0),
            dict(dropout_rate=-0.1),
        ):
            with pytest.raises(ValueError):
                ModelConfig(**bad)

    def test_encoder_width_doubles_for_bi(self):
        assert ModelConfig(variant=Variant.UNI_ATTENTION, enc_hidden=4).enc_width == 4
        assert ModelConfig(variant=Variant.BI_ATTENTION, enc_hidden=4).enc_width == 8


class TestParams:
    def test_shapes_for_bi_attention(self):
        cfg = ModelConfig(variant=Variant.BI_ATTENTION, input_dim=13, enc_hidden=4, dec_hidden=3)
        shapes = param_shapes(cfg)
        assert shapes["enc_fw.W"] == (13, 16)
        assert shapes["enc_bw.W"] == (13, 16)
        assert shapes["attn.w"] == (3 + 8,)
        assert shapes["attn.b"] == (1,)
        assert shapes["dec.W"] == (8, 12)
        assert shapes["out.W"] == (3, 6)

    def test_plain_variant_has_no_scorer(self):
        cfg = ModelConfig(variant=Variant.UNI_PLAIN)
        assert not any(k.startswith("attn.") for k in param_shapes(cfg))

    def test_mlp_scorer_shapes(self):
        cfg = ModelConfig(
            variant=Variant.UNI_ATTENTION, enc_hidden=4, dec_hidden=3, attn_hidden=5
        )
        shapes = param_shapes(cfg)
        assert shapes["attn.W1"] == (7, 5)
        assert shapes["attn.b1"] == (5,)
        assert shapes["attn.w2"] == (5,)
        assert shapes["attn.b2"] == (1,)

    def test_init_ranges_and_forget_bias(self):
        cfg = ModelConfig(variant=Variant.BI_ATTENTION, enc_hidden=4, dec_hidden=4)
        params = init_params(cfg, SeededRng(0))
        H = cfg.enc_hidden
        for name in ("enc_fw", "enc_bw", "dec"):
            b = params[f"{name}.b"]
            hid = b.size // 4
            np.testing.assert_array_equal(b[hid : 2 * hid], 1.0)
            assert not b[:hid].any() and not b[2 * hid :].any()
        k = 1.0 / math.sqrt(13)
        W = params["enc_fw.W"]
        assert W.min() >= -k and W.max() <= k
        ku = 1.0 / math.sqrt(H)
        assert params["enc_fw.U"].min() >= -ku and params["enc_fw.U"].max() <= ku
        assert not params["attn.b"].any()

    def test_init_deterministic(self):
        cfg = ModelConfig(variant=Variant.UNI_ATTENTION)
        a = init_params(cfg, SeededRng(3))
        b = init_params(cfg, SeededRng(3))
        for name in a.names():
            np.testing.assert_array_equal(a[name], b[name])

    def test_vector_roundtrip_bitwise(self):
        cfg = ModelConfig(variant=Variant.BI_ATTENTION, enc_hidden=3, dec_hidden=2)
        params = init_params(cfg, SeededRng(1))
        back = ModelParams.from_vector(cfg, params.to_vector())
        for name in params.names():
            np.testing.assert_array_equal(params[name], back[name])

    def test_shape_validation(self):
        cfg = ModelConfig(variant=Variant.UNI_PLAIN)
        params = init_params(cfg, SeededRng(0))
        params.arrays["out.W"] = np.zeros((2, 2))
        with pytest.raises(ShapeError):
            params.validate_shapes(cfg)


class TestLstmForward:
    def test_zero_weights_annihilate(self):
        rng = SeededRng(2)
        seq = rng.normal(size=(3, 5))
        outs, (h, c) = lstm_forward(seq, np.zeros((5, 16)), np.zeros((4, 16)), np.zeros(16))
        assert not outs.any() and not h.any() and not c.any()

    def test_scalar_hand_oracle(self):
        # d = H = 1, only the input->g weight set; gates i,f,o all sigmoid(0) = 0.5.
        W = np.array([[0.0, 0.0, 1.0, 0.0]])
        U = np.zeros((1, 4))
        b = np.zeros(4)
        outs, (h, c) = lstm_forward(np.array([[0.5]]), W, U, b)
        c_want = 0.5 * math.tanh(0.5)  # 0.231059...
        h_want = 0.5 * math.tanh(c_want)  # 0.113516...
        assert c[0] == pytest.approx(c_want, abs=1e-12)
        assert h[0] == pytest.approx(h_want, abs=1e-12)
        assert c_want == pytest.approx(0.231059, abs=1e-6)
        assert h_want == pytest.approx(0.113516, abs=1e-6)

    def test_state_threading_matches_stepwise_calls(self):
        rng = SeededRng(4)
        W, U, b = rng.normal(size=(3, 8)), rng.normal(size=(2, 8)), rng.normal(size=8)
        seq = rng.normal(size=(4, 3))
        full, (h, c) = lstm_forward(seq, W, U, b)
        h_step = c_step = np.zeros(2)
        for t in range(4):
            out_t, (h_step, c_step) = lstm_forward(seq[t : t + 1], W, U, b, h0=h_step, c0=c_step)
            np.testing.assert_allclose(out_t[0], full[t], atol=1e-12)
        np.testing.assert_allclose(h_step, h, atol=1e-12)
        np.testing.assert_allclose(c_step, c, atol=1e-12)

    def test_shape_error_names_shapes(self):
        with pytest.raises(ShapeError) as exc:
            lstm_forward(np.zeros((3, 5)), np.zeros((4, 16)), np.zeros((4, 16)), np.zeros(16))
        assert "(4, 16)" in str(exc.value)


class TestEncode:
    def test_bi_width_doubles(self):
        cfg = ModelConfig(variant=Variant.BI_ATTENTION, input_dim=6, enc_hidden=4)
        out = encode(feats(5, 6), init_params(cfg, SeededRng(0)), cfg)
        assert out.p.shape == (5, 8)
        assert out.x == 5 and out.width == 8

    def test_zero_params_yield_zero_outputs(self):
        for variant in (Variant.UNI_PLAIN, Variant.BI_PLAIN):
            cfg = ModelConfig(variant=variant, input_dim=6, enc_hidden=4)
            out = encode(feats(5, 6), zero_params(cfg), cfg)
            assert not out.p.any()

    def test_uni_equals_forward_half_of_bi(self):
        uni = ModelConfig(variant=Variant.UNI_ATTENTION, input_dim=6, enc_hidden=4)
        bi = ModelConfig(variant=Variant.BI_ATTENTION, input_dim=6, enc_hidden=4)
        u_params = init_params(uni, SeededRng(5))
        b_params = zero_params(bi)
        for part in ("W", "U", "b"):
            b_params.arrays[f"enc_fw.{part}"] = u_params[f"enc_fw.{part}"].copy()
        f = feats(5, 6, seed=1)
        p_uni = encode(f, u_params, uni).p
        p_bi = encode(f, b_params, bi).p
        np.testing.assert_array_equal(p_bi[:, :4], p_uni)
        assert not p_bi[:, 4:].any()

    def test_directional_symmetry(self):
        # Reverse the input and swap the direction blocks: p time-reverses
        # with its forward/backward halves exchanged.
        cfg = ModelConfig(variant=Variant.BI_ATTENTION, input_dim=6, enc_hidden=4)
        params = init_params(cfg, SeededRng(6))
        swapped = params.copy()
        for part in ("W", "U", "b"):
            swapped.arrays[f"enc_fw.{part}"] = params[f"enc_bw.{part}"].copy()
            swapped.arrays[f"enc_bw.{part}"] = params[f"enc_fw.{part}"].copy()
        f = feats(5, 6, seed=2)
        rev = FeatureSequence(f.frames[::-1].copy(), f.frame_times, f.pad_mask)
        p = encode(f, params, cfg).p
        q = encode(rev, swapped, cfg).p
        np.testing.assert_allclose(q[:, :4], p[::-1, 4:], atol=1e-12)
        np.testing.assert_allclose(q[:, 4:], p[::-1, :4], atol=1e-12)


class TestAttentionStep:
    def _cfg(self, enc_hidden=2, dec_hidden=3, attn_hidden=0):
        return ModelConfig(
            variant=Variant.UNI_ATTENTION,
            input_dim=4,
            enc_hidden=enc_hidden,
            dec_hidden=dec_hidden,
            attn_hidden=attn_hidden,
        )

    def test_zero_scorer_gives_uniform_weights_and_mean_context(self):
        cfg = self._cfg()
        rng = SeededRng(7)
        p = rng.normal(size=(6, 2))
        a, context = attention_step(p, np.zeros(3), zero_params(cfg), cfg)
        np.testing.assert_allclose(a, np.full(6, 1 / 6), atol=1e-12)
        np.testing.assert_allclose(context, p.mean(axis=0), atol=1e-12)

    def test_hand_computed_two_frame_case(self):
        cfg = self._cfg()
        params = zero_params(cfg)
        params.arrays["attn.w"][3 + 1] = math.log(3.0)  # score = ln 3 * p[:, 1]
        p = np.array([[1.0, 0.0], [0.0, 1.0]])
        a, context = attention_step(p, np.zeros(3), params, cfg)
        np.testing.assert_allclose(a, [0.25, 0.75], atol=1e-12)
        np.testing.assert_allclose(context, [0.25, 0.75], atol=1e-12)

    def test_one_hot_selection_reproduces_frame(self):
        cfg = self._cfg()
        params = zero_params(cfg)
        params.arrays["attn.w"][3] = 1.0  # score = p[:, 0]
        rng = SeededRng(8)
        p = rng.normal(size=(5, 2))
        p[3, 0] = 1000.0  # score gap underflows every other weight to zero
        a, context = attention_step(p, np.zeros(3), params, cfg)
        assert a[3] == pytest.approx(1.0, abs=1e-9)
        np.testing.assert_allclose(context, p[3], atol=1e-9)

    def test_weighted_sum_is_permutation_invariant(self):
        cfg = self._cfg()
        params = init_params(cfg, SeededRng(9))
        rng = SeededRng(10)
        p = rng.normal(size=(7, 2))
        a, context = attention_step(p, rng.normal(size=3), params, cfg)
        perm = SeededRng(11).permutation(7)
        np.testing.assert_allclose(a[perm] @ p[perm], context, atol=1e-12)

    def test_mlp_scorer_path(self):
        cfg = self._cfg(attn_hidden=4)
        params = init_params(cfg, SeededRng(12))
        rng = SeededRng(13)
        a, context = attention_step(rng.normal(size=(6, 2)), rng.normal(size=3), params, cfg)
        assert a.shape == (6,)
        assert abs(a.sum() - 1.0) <= 1e-9

    def test_plain_variant_has_no_attention(self):
        cfg = ModelConfig(variant=Variant.UNI_PLAIN, enc_hidden=2, dec_hidden=3)
        with pytest.raises(NoAttentionError):
            attention_step(np.zeros((4, 2)), np.zeros(3), zero_params(self._cfg()), cfg)

    def test_empty_sequence_rejected(self):
        cfg = self._cfg()
        with pytest.raises(ShapeError):
            attention_step(np.zeros((0, 2)), np.zeros(3), zero_params(cfg), cfg)

    def test_o_prev_dimension_checked(self):
        cfg = self._cfg()
        with pytest.raises(ShapeError):
            attention_step(np.zeros((4, 2)), np.zeros(5), zero_params(cfg), cfg)


ALL_VARIANTS = list(Variant)


class TestForward:
    def _cfg(self, variant, **kw):
        kw.setdefault("input_dim", 5)
        kw.setdefault("enc_hidden", 3)
        kw.setdefault("dec_hidden", 4)
        return ModelConfig(variant=variant, **kw)

    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    def test_zero_params_give_uniform_posterior(self, variant):
        cfg = self._cfg(variant)
        res = forward(feats(6, 5), zero_params(cfg), cfg)
        np.testing.assert_allclose(res.posterior, np.full(6, 1 / 6), atol=1e-12)
        if variant.has_attention:
            np.testing.assert_allclose(res.trace.a[0], np.full(6, 1 / 6), atol=1e-12)
        else:
            assert res.trace is None

    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    def test_posterior_sums_to_one(self, variant):
        cfg = self._cfg(variant)
        params = init_params(cfg, SeededRng(14))
        for seed in range(5):
            res = forward(feats(7, 5, seed=seed), params, cfg)
            assert abs(res.posterior.sum() - 1.0) <= 1e-9
            assert res.posterior.min() >= 0.0

    def test_eval_mode_is_bitwise_deterministic(self):
        cfg = self._cfg(Variant.BI_ATTENTION, dec_steps=2)
        params = init_params(cfg, SeededRng(15))
        f = feats(6, 5, seed=3)
        r1 = forward(f, params, cfg)
        r2 = forward(f, params, cfg)
        np.testing.assert_array_equal(r1.posterior, r2.posterior)
        np.testing.assert_array_equal(r1.trace.a, r2.trace.a)
        np.testing.assert_array_equal(r1.trace.context, r2.trace.context)

    def test_train_mode_without_dropout_equals_eval(self):
        cfg = self._cfg(Variant.UNI_ATTENTION, dropout_rate=0.0)
        params = init_params(cfg, SeededRng(16))
        f = feats(6, 5, seed=4)
        np.testing.assert_array_equal(
            forward(f, params, cfg, mode="train").posterior,
            forward(f, params, cfg, mode="eval").posterior,
        )

    def test_train_mode_with_dropout_needs_rng(self):
        cfg = self._cfg(Variant.UNI_ATTENTION, dropout_rate=0.5)
        params = init_params(cfg, SeededRng(17))
        with pytest.raises(ValueError):
            forward(feats(6, 5), params, cfg, mode="train")
        r = forward(feats(6, 5), params, cfg, mode="train", rng=SeededRng(18))
        assert abs(r.posterior.sum() - 1.0) <= 1e-9

    def test_bad_mode_rejected(self):
        cfg = self._cfg(Variant.UNI_PLAIN)
        with pytest.raises(ValueError):
            forward(feats(6, 5), zero_params(cfg), cfg, mode="predict")

    def test_attention_trace_shapes_over_decoder_steps(self):
        cfg = self._cfg(Variant.BI_ATTENTION, dec_steps=3)
        params = init_params(cfg, SeededRng(19))
        res = forward(feats(6, 5, seed=5), params, cfg)
        assert res.trace.e.shape == (3, 6)
        assert res.trace.a.shape == (3, 6)
        assert res.trace.context.shape == (3, 6)  # bi width = 2 * 3
        sums = res.trace.a.sum(axis=1)
        np.testing.assert_allclose(sums, 1.0, atol=1e-9)

    def test_masked_padding_zeroes_attention_exactly(self):
        cfg = self._cfg(Variant.BI_ATTENTION, mask_padding=True, dec_steps=2)
        params = init_params(cfg, SeededRng(20))
        f = feats(8, 5, seed=6, n_pad=3)
        res = forward(f, params, cfg)
        assert not res.trace.a[:, -3:].any()
        np.testing.assert_allclose(res.trace.a.sum(axis=1), 1.0, atol=1e-9)

    def test_unmasked_padding_keeps_positive_weights(self):
        cfg = self._cfg(Variant.BI_ATTENTION, mask_padding=False)
        params = init_params(cfg, SeededRng(21))
        res = forward(feats(8, 5, seed=7, n_pad=3), params, cfg)
        assert res.trace.a[0, -3:].min() > 0.0

    def test_nan_input_raises_numeric_error(self):
        cfg = self._cfg(Variant.UNI_PLAIN)
        params = init_params(cfg, SeededRng(22))
        bad = feats(6, 5, seed=8)
        bad.frames[2, 2] = np.nan
        with pytest.raises(NumericError):
            forward(bad, params, cfg)

    def test_nan_parameter_raises_numeric_error(self):
        cfg = self._cfg(Variant.UNI_PLAIN)
        params = init_params(cfg, SeededRng(23))
        params.arrays["out.b"][0] = np.nan
        with pytest.raises(NumericError):
            forward(feats(6, 5, seed=9), params, cfg)

    def test_plain_array_input_accepted(self):
        cfg = self._cfg(Variant.UNI_ATTENTION)
        params = init_params(cfg, SeededRng(24))
        res = forward(SeededRng(25).normal(size=(6, 5)), params, cfg)
        assert res.posterior.shape == (6,)


class TestDropoutMask:
    def test_rate_zero_gives_none(self):
        cfg = ModelConfig(variant=Variant.UNI_PLAIN, dropout_rate=0.0)
        assert make_dropout_mask(cfg, (2, 5), SeededRng(0)) is None

    def test_inverted_scaling_values(self):
        cfg = ModelConfig(variant=Variant.UNI_PLAIN, enc_hidden=8, dropout_rate=0.25)
        mask = make_dropout_mask(cfg, (4, 10), SeededRng(1))
        assert mask.shape == (4, 10, 8)
        vals = set(np.unique(mask).tolist())
        assert vals <= {0.0, 1.0 / 0.75}

    def test_keep_fraction_near_rate(self):
        cfg = ModelConfig(variant=Variant.UNI_PLAIN, enc_hidden=64, dropout_rate=0.5)
        mask = make_dropout_mask(cfg, (10, 50), SeededRng(2))
        keep = float((mask > 0).mean())
        assert 0.45 < keep < 0.55


class TestAttentionTrace:
    def test_row_sum_validation(self):
        with pytest.raises(ValueError):
            AttentionTrace(e=np.zeros((1, 3)), a=np.array([[0.5, 0.2, 0.2]]), context=np.zeros((1, 2)))

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            AttentionTrace(e=np.zeros((1, 2)), a=np.array([[1.5, -0.5]]), context=np.zeros((1, 2)))
