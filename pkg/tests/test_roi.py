import json
import re

import numpy as np
import pytest

from roi_attend.dsp import FeatureSequence, FrameConfig
from roi_attend.model import ModelConfig, ModelParams, NoAttentionError, Variant, param_shapes
from roi_attend.numerics import SeededRng
from roi_attend.roi import (
    AttentionMap,
    RoiRegion,
    attention_json,
    detect_roi,
    dump_attention_json,
    expand_to_samples,
    extract_attention,
    render_svg,
)
from roi_attend.training import Checkpoint, TrainConfig

FRAME = 320
STEP = 160


def amap(weights, frame_len=FRAME, step=STEP, pad=None):
    weights = np.asarray(weights, dtype=np.float64)
    x = weights.shape[0]
    if pad is None:
        pad = np.zeros(x, dtype=bool)
    return AttentionMap(weights, np.arange(x) * step, frame_len, np.asarray(pad, dtype=bool))


def zero_checkpoint(variant=Variant.BI_ATTENTION, input_dim=4, frame_cfg=FrameConfig(), **kw):
    cfg = ModelConfig(variant=variant, input_dim=input_dim, enc_hidden=2, dec_hidden=2,
                      dropout_rate=0.0, **kw)
    params = ModelParams({k: np.zeros(s) for k, s in param_shapes(cfg).items()})
    return Checkpoint(model_cfg=cfg, params=params, train_cfg=TrainConfig(), frame_cfg=frame_cfg)


def feats(T, d=4, n_pad=0, seed=0):
    pad = np.zeros(T, dtype=bool)
    if n_pad:
        pad[-n_pad:] = True
    return FeatureSequence(SeededRng(seed).normal(size=(T, d)), np.arange(T) * STEP, pad)


class TestAttentionMap:
    def test_properties(self):
        m = amap([0.25, 0.25, 0.25, 0.25])
        assert m.x == 4
        assert m.step == STEP
        assert m.frame_len == FRAME

    def test_single_frame_step_falls_back_to_frame_len(self):
        assert amap([1.0]).step == FRAME

    def test_silence_mass_sums_pad_frames(self):
        m = amap([0.4, 0.3, 0.2, 0.1], pad=[False, False, True, True])
        assert m.silence_mass() == pytest.approx(0.3)
        assert amap([0.5, 0.5]).silence_mass() == 0.0

    def test_validation(self):
        with pytest.raises(ValueError):
            amap([0.7, 0.7])  # sums to 1.4
        with pytest.raises(ValueError):
            amap([1.5, -0.5])
        with pytest.raises(ValueError):
            AttentionMap(np.full((2, 2), 0.25), np.arange(2), FRAME, np.zeros(2, dtype=bool))
        with pytest.raises(ValueError):
            AttentionMap(np.array([1.0]), np.arange(2), FRAME, np.zeros(1, dtype=bool))
        with pytest.raises(ValueError):
            amap([1.0], frame_len=0)


class TestExtractAttention:
    def test_zero_params_give_uniform_weights(self):
        ckpt = zero_checkpoint()
        maps = extract_attention(ckpt, feats(5))
        assert len(maps) == 1
        np.testing.assert_allclose(maps[0].weights, np.full(5, 0.2), atol=1e-12)

    def test_padding_attended_by_default(self):
        # padded frames stay in the softmax unless masking is turned on,
        # which is what makes the silence-mass diagnostic meaningful
        ckpt = zero_checkpoint()
        maps = extract_attention(ckpt, feats(5, n_pad=2))
        np.testing.assert_allclose(maps[0].weights, np.full(5, 0.2), atol=1e-12)
        assert maps[0].silence_mass() == pytest.approx(0.4)

    def test_padding_excluded_when_masking_enabled(self):
        ckpt = zero_checkpoint(mask_padding=True)
        maps = extract_attention(ckpt, feats(5, n_pad=2))
        np.testing.assert_allclose(maps[0].weights, [1 / 3, 1 / 3, 1 / 3, 0.0, 0.0], atol=1e-12)
        assert maps[0].silence_mass() == 0.0

    def test_one_map_per_decoder_step(self):
        ckpt = zero_checkpoint(dec_steps=2)
        maps = extract_attention(ckpt, feats(4))
        assert len(maps) == 2

    def test_frame_len_defaults_to_checkpoint_settings(self):
        maps = extract_attention(zero_checkpoint(), feats(4))
        assert maps[0].frame_len == 320

    def test_explicit_frame_len_wins(self):
        maps = extract_attention(zero_checkpoint(), feats(4), frame_len=400)
        assert maps[0].frame_len == 400

    def test_missing_frame_settings_require_frame_len(self):
        ckpt = zero_checkpoint(frame_cfg=None)
        with pytest.raises(ValueError, match="frame_len"):
            extract_attention(ckpt, feats(4))
        assert extract_attention(ckpt, feats(4), frame_len=320)[0].frame_len == 320

    def test_plain_variants_refused_by_model_number(self):
        ckpt = zero_checkpoint(Variant.UNI_PLAIN)
        with pytest.raises(NoAttentionError, match="model 3"):
            extract_attention(ckpt, feats(4))
        with pytest.raises(NoAttentionError, match="model 4"):
            extract_attention(zero_checkpoint(Variant.BI_PLAIN), feats(4))

    def test_coefficient_mismatch_rejected(self):
        with pytest.raises(ValueError, match="coefficients"):
            extract_attention(zero_checkpoint(input_dim=13), feats(4, d=4))


class TestExpandToSamples:
    def test_single_full_frame(self):
        out = expand_to_samples(amap([1.0]), 320)
        np.testing.assert_array_equal(out, np.ones(320))

    def test_non_overlapping_frames(self):
        out = expand_to_samples(amap([0.3, 0.7], frame_len=4, step=4), 8)
        np.testing.assert_allclose(out, [0.3] * 4 + [0.7] * 4)

    def test_half_overlap_averages(self):
        out = expand_to_samples(amap([0.2, 0.8], frame_len=4, step=2), 6)
        np.testing.assert_allclose(out, [0.2, 0.2, 0.5, 0.5, 0.8, 0.8])

    def test_mass_conserved_without_overlap(self):
        m = amap([0.1, 0.2, 0.3, 0.4], frame_len=5, step=5)
        out = expand_to_samples(m, 20)
        assert out.sum() / 5 == pytest.approx(1.0)

    def test_uncovered_samples_are_zero(self):
        m = AttentionMap(np.array([0.5, 0.5]), np.array([0, 8]), 4, np.zeros(2, dtype=bool))
        out = expand_to_samples(m, 12)
        np.testing.assert_array_equal(out[4:8], np.zeros(4))
        np.testing.assert_allclose(out[:4], 0.5)
        np.testing.assert_allclose(out[8:], 0.5)

    def test_trailing_pad_frames_skipped(self):
        m = amap([0.6, 0.4], pad=[False, True])
        out = expand_to_samples(m, STEP)  # clip ends before the pad frame starts
        np.testing.assert_allclose(out, 0.6)

    def test_real_frame_beyond_clip_rejected(self):
        m = amap([0.6, 0.4])
        with pytest.raises(ValueError, match="frame 1"):
            expand_to_samples(m, STEP)

    def test_nonpositive_length_rejected(self):
        with pytest.raises(ValueError):
            expand_to_samples(amap([1.0]), 0)

    def test_tail_frame_clamped_to_clip(self):
        out = expand_to_samples(amap([0.5, 0.5]), STEP + 10)
        assert out.shape == (STEP + 10,)
        assert np.isfinite(out).all()


class TestDetectRoi:
    def test_uniform_attention_has_no_regions(self):
        roi = detect_roi(amap(np.full(5, 0.2)), ratio=2.0)
        assert roi.regions == []
        assert roi.threshold == pytest.approx(0.4)
        assert not roi.salient.any()

    def test_exactly_at_threshold_is_not_salient(self):
        roi = detect_roi(amap([0.5, 0.5, 0.0, 0.0]), ratio=2.0)
        assert roi.regions == []

    def test_one_hot_gives_one_full_mass_region(self):
        w = np.zeros(6)
        w[3] = 1.0
        roi = detect_roi(amap(w), ratio=2.0)
        assert len(roi.regions) == 1
        r = roi.regions[0]
        assert (r.start_frame, r.end_frame) == (3, 4)
        assert r.start_sample == 3 * STEP
        assert r.end_sample == 3 * STEP + FRAME
        assert r.mass == pytest.approx(1.0)

    def test_single_peak_among_noise(self):
        roi = detect_roi(amap([0.05] * 8 + [0.6]), ratio=2.0)
        assert len(roi.regions) == 1
        assert roi.regions[0].start_frame == 8
        assert roi.regions[0].mass == pytest.approx(0.6)

    def test_maximal_runs_merge_adjacent_frames(self):
        w = np.array([0.3, 0.3, 0.05, 0.3, 0.05, 0, 0, 0, 0, 0])
        roi = detect_roi(amap(w), ratio=2.0)  # threshold 0.2
        assert [(r.start_frame, r.end_frame) for r in roi.regions] == [(0, 2), (3, 4)]
        assert roi.regions[0].mass == pytest.approx(0.6)
        assert roi.regions[0].end_sample == STEP + FRAME
        assert roi.total_mass() == pytest.approx(0.9)

    def test_higher_ratio_selects_subset(self):
        w = SeededRng(3).uniform(size=20)
        w = w / w.sum()
        loose = detect_roi(amap(w), ratio=1.2).salient
        tight = detect_roi(amap(w), ratio=2.5).salient
        assert (tight & ~loose).sum() == 0

    def test_masses_bounded_by_total(self):
        w = SeededRng(4).uniform(size=30)
        w = w / w.sum()
        roi = detect_roi(amap(w), ratio=1.5)
        for r in roi.regions:
            assert 0.0 < r.mass <= 1.0
        assert roi.total_mass() <= 1.0 + 1e-12

    def test_silence_mass_carried_through(self):
        m = amap([0.1, 0.2, 0.3, 0.4], pad=[False, False, False, True])
        assert detect_roi(m).silence_mass == pytest.approx(0.4)

    def test_ratio_must_be_positive(self):
        for bad in (0.0, -1.0):
            with pytest.raises(ValueError):
                detect_roi(amap([1.0]), ratio=bad)


class TestJsonExport:
    def _payload(self):
        m = amap([0.05] * 8 + [0.6], pad=[False] * 8 + [False])
        return attention_json("clips/x.wav", m, detect_roi(m, ratio=2.0))

    def test_payload_keys_and_values(self):
        p = self._payload()
        assert set(p) == {"path", "x", "frame_len", "step", "weights", "regions", "silence_mass"}
        assert p["path"] == "clips/x.wav"
        assert p["x"] == 9
        assert p["frame_len"] == FRAME
        assert p["step"] == STEP
        assert len(p["weights"]) == 9
        assert p["regions"] == [{"start": 8 * STEP, "end": 8 * STEP + FRAME, "mass": pytest.approx(0.6)}]
        assert p["silence_mass"] == 0.0

    def test_dump_is_parseable_and_deterministic(self):
        p = self._payload()
        text = dump_attention_json(p)
        assert text == dump_attention_json(self._payload())
        assert text.endswith("\n")
        assert json.loads(text)["x"] == 9

    def test_dump_orders_keys(self):
        text = dump_attention_json(self._payload())
        keys = re.findall(r'"(\w+)":', text.split("[")[0])
        assert keys == sorted(keys)


class TestRenderSvg:
    def _scene(self, n=1600, peak=True):
        rng = SeededRng(5)
        samples = 0.1 * rng.normal(size=n)
        x = (n - FRAME) // STEP + 1
        w = np.full(x, 0.5 / max(x - 1, 1))
        w[x // 2] = 0.5 + w[0]
        w = w / w.sum()
        m = AttentionMap(w, np.arange(x) * STEP, FRAME, np.zeros(x, dtype=bool))
        return samples, m, detect_roi(m, ratio=2.0)

    def test_two_panels_without_spectrogram(self):
        samples, m, roi = self._scene()
        svg = render_svg(samples, m, roi)
        assert svg.count("<g id=") == 2
        assert '<g id="waveform">' in svg
        assert '<g id="attention">' in svg
        assert '<g id="spectrogram">' not in svg
        assert svg.startswith("<svg ")
        assert svg.rstrip().endswith("</svg>")

    def test_spectrogram_panel_added(self):
        samples, m, roi = self._scene()
        spec = SeededRng(6).uniform(size=(m.x, 20)) + 0.1
        svg = render_svg(samples, m, roi, spectrogram=spec)
        assert svg.count("<g id=") == 3
        assert '<g id="spectrogram">' in svg

    def test_byte_determinism(self):
        samples, m, roi = self._scene()
        assert render_svg(samples, m, roi) == render_svg(samples, m, roi)

    def test_regions_shaded_in_both_signal_panels(self):
        samples, m, roi = self._scene()
        assert len(roi.regions) >= 1
        svg = render_svg(samples, m, roi)
        assert svg.count('fill="#e8a23d"') == 2 * len(roi.regions)

    def test_threshold_line_drawn_dashed(self):
        samples, m, roi = self._scene()
        assert 'stroke-dasharray="4,3"' in render_svg(samples, m, roi)

    def test_silent_clip_draws_flat_midline(self):
        m = amap([1.0])
        svg = render_svg(np.zeros(FRAME), m, detect_roi(m, ratio=2.0))
        polygon = re.search(r'<polygon points="([^"]+)"', svg).group(1)
        ys = {pt.split(",")[1] for pt in polygon.split(" ")}
        assert len(ys) == 1  # every envelope point sits on the midline

    def test_empty_samples_rejected(self):
        m = amap([1.0])
        with pytest.raises(ValueError):
            render_svg(np.zeros(0), m, detect_roi(m))

    def test_real_frame_past_clip_end_rejected(self):
        m = amap([0.5, 0.5])
        with pytest.raises(ValueError, match="beyond"):
            render_svg(np.zeros(100), m, detect_roi(m))
