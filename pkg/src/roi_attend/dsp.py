"""Audio ingestion and the MFCC front end.

Pipeline: 16-bit mono PCM WAV -> float samples in [-1, 1] -> zero padding to a
common length -> 20 ms frames with 10 ms step -> per-frame pre-emphasis,
Hamming window, power spectrum, triangular mel filterbank (HTK mel scale),
log with floor, orthonormal DCT-II, first `n_mfcc` coefficients.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np
from scipy.fft import dct

__all__ = [
    "WavFormatError",
    "UnsupportedWavError",
    "TruncationRefusedError",
    "TooShortError",
    "FrameConfigError",
    "AudioClip",
    "FrameConfig",
    "FeatureSequence",
    "read_wav",
    "read_wav_file",
    "write_wav",
    "write_wav_file",
    "pad_to_length",
    "frame_signal",
    "mel_filterbank",
    "mfcc",
    "extract_features",
    "extract_corpus_features",
    "power_spectrogram",
    "save_feature_cache",
    "load_feature_cache",
]


class WavFormatError(ValueError):
    """Byte stream is not a well-formed RIFF/WAVE file."""


class UnsupportedWavError(ValueError):
    """Well-formed WAV, but not PCM 16-bit mono (rejected, never converted)."""


class TruncationRefusedError(ValueError):
    """pad_to_length was asked to shorten a clip."""


class TooShortError(ValueError):
    """Clip shorter than a single analysis frame."""


class FrameConfigError(ValueError):
    """FrameConfig values are inconsistent with each other or the signal."""


@dataclass
class AudioClip:
    """Mono audio: float64 samples in [-1, 1] plus the sampling rate.

    `original_len` is filled in by pad_to_length so downstream code can tell
    genuine signal from appended zeros.
    """

    samples: np.ndarray
    sample_rate: int
    source_id: str = ""
    original_len: int | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("AudioClip samples must be 1-D")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    def __len__(self) -> int:
        return self.samples.shape[0]


@dataclass
class FrameConfig:
    frame_len_ms: float = 20.0
    step_ms: float = 10.0
    n_mfcc: int = 13
    n_mels: int = 26
    fft_size: int = 512
    preemphasis: float = 0.97
    expected_sample_rate: int = 16000
    allow_any_rate: bool = False

    def __post_init__(self):
        if not 0 < self.step_ms <= self.frame_len_ms:
            raise FrameConfigError(
                f"step_ms must satisfy 0 < step ({self.step_ms}) <= frame length ({self.frame_len_ms})"
            )
        if self.n_mfcc > self.n_mels:
            raise FrameConfigError(f"n_mfcc ({self.n_mfcc}) must be <= n_mels ({self.n_mels})")
        if not 0.0 <= self.preemphasis < 1.0:
            raise FrameConfigError("preemphasis must be in [0, 1)")

    def frame_len(self, sample_rate: int) -> int:
        """Frame length in samples (ms -> samples, rounded to nearest)."""
        return int(round(self.frame_len_ms * sample_rate / 1000.0))

    def frame_step(self, sample_rate: int) -> int:
        return int(round(self.step_ms * sample_rate / 1000.0))


@dataclass
class FeatureSequence:
    """T x n_mfcc feature matrix plus per-frame bookkeeping.

    frame_times: start sample index of each frame (constant stride).
    pad_mask: True for frames lying entirely inside appended zero padding.
    """

    frames: np.ndarray
    frame_times: np.ndarray
    pad_mask: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.frame_times = np.asarray(self.frame_times, dtype=np.int64)
        self.pad_mask = np.asarray(self.pad_mask, dtype=bool)
        t = self.frames.shape[0]
        if self.frame_times.shape != (t,) or self.pad_mask.shape != (t,):
            raise ValueError("frame_times/pad_mask length must equal frame count")
        if t > 1:
            strides = np.diff(self.frame_times)
            if strides.min() <= 0 or strides.min() != strides.max():
                raise ValueError("frame_times must increase with a constant positive stride")

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def n_mfcc(self) -> int:
        return self.frames.shape[1]


# -- WAV I/O ---------------------------------------------------------------

_PCM_FORMAT = 1


def read_wav(data: bytes, source_id: str = "") -> AudioClip:
    """Parse a RIFF/WAVE byte stream. Only PCM 16-bit mono is accepted.

    Samples are converted to float64 by dividing the int16 value by 32768.
    """
    if len(data) < 12 or data[0:4] != b"RIFF":
        head = data[0:4].decode("ascii", errors="replace") if len(data) >= 4 else repr(data)
        raise WavFormatError(f"not a RIFF stream (leading bytes {head!r})")
    if data[8:12] != b"WAVE":
        raise WavFormatError("RIFF stream is not WAVE format")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        (chunk_size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + chunk_size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise WavFormatError("fmt chunk too small")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            payload = body
        pos += 8 + chunk_size + (chunk_size & 1)  # chunks are word-aligned

    if fmt is None:
        raise WavFormatError("missing fmt chunk")
    if payload is None:
        raise WavFormatError("missing data chunk")
    audio_format, channels, sample_rate, _byte_rate, _block_align, bits = fmt
    if audio_format != _PCM_FORMAT:
        raise UnsupportedWavError(f"only PCM is supported, got format tag {audio_format}")
    if channels != 1:
        raise UnsupportedWavError(f"only mono is supported, got {channels} channels (not downmixed)")
    if bits != 16:
        raise UnsupportedWavError(f"only 16-bit samples are supported, got {bits}-bit")
    if len(payload) < 2:
        raise WavFormatError("data chunk holds no samples")
    raw = np.frombuffer(payload[: len(payload) - (len(payload) % 2)], dtype="<i2")
    return AudioClip(raw.astype(np.float64) / 32768.0, int(sample_rate), source_id=source_id)


def read_wav_file(path) -> AudioClip:
    with open(path, "rb") as fh:
        return read_wav(fh.read(), source_id=str(path))


def write_wav(samples: np.ndarray, sample_rate: int) -> bytes:
    """Encode float samples (clamped to [-1, 1]) as PCM 16-bit mono WAV."""
    clamped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    ints = np.clip(np.rint(clamped * 32768.0), -32768, 32767).astype("<i2")
    payload = ints.tobytes()
    hdr = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    fmt = b"fmt " + struct.pack("<IHHIIHH", 16, _PCM_FORMAT, 1, sample_rate, sample_rate * 2, 2, 16)
    return hdr + fmt + b"data" + struct.pack("<I", len(payload)) + payload


def write_wav_file(path, samples: np.ndarray, sample_rate: int) -> None:
    with open(path, "wb") as fh:
        fh.write(write_wav(samples, sample_rate))


# -- padding and framing -----------------------------------------------------


def pad_to_length(clips: list[AudioClip], target: int | None = None) -> list[AudioClip]:
    """Append zeros so every clip has exactly `target` samples.

    target defaults to the longest clip. Shortening is refused.
    """
    if not clips:
        return []
    longest = max(len(c) for c in clips)
    if target is None:
        target = longest
    if target < longest:
        raise TruncationRefusedError(
            f"target {target} would truncate a clip of length {longest}; refusing"
        )
    out = []
    for c in clips:
        n = len(c)
        padded = np.concatenate([c.samples, np.zeros(target - n)]) if n < target else c.samples.copy()
        out.append(replace(c, samples=padded, original_len=n if c.original_len is None else c.original_len))
    return out


def frame_signal(clip: AudioClip, cfg: FrameConfig) -> tuple[np.ndarray, np.ndarray]:
    """Slice a clip into overlapping frames.

    Returns (frames, frame_times) where frames is T x L and frame i starts at
    sample i*S. T = 1 + floor((N - L) / S); a trailing partial frame is dropped.
    """
    _check_rate(clip, cfg)
    length = cfg.frame_len(clip.sample_rate)
    step = cfg.frame_step(clip.sample_rate)
    n = len(clip)
    if n < length:
        raise TooShortError(f"clip has {n} samples, shorter than one {length}-sample frame")
    count = 1 + (n - length) // step
    idx = np.arange(count)[:, None] * step + np.arange(length)[None, :]
    return clip.samples[idx], np.arange(count, dtype=np.int64) * step


def _check_rate(clip: AudioClip, cfg: FrameConfig) -> None:
    if not cfg.allow_any_rate and clip.sample_rate != cfg.expected_sample_rate:
        raise UnsupportedWavError(
            f"clip rate {clip.sample_rate} Hz != expected {cfg.expected_sample_rate} Hz "
            "(set allow_any_rate to accept)"
        )


# -- mel / MFCC ---------------------------------------------------------------

LOG_FLOOR = 1e-10


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, fft_size: int, sample_rate: int) -> np.ndarray:
    """Triangular filters on the HTK mel scale, spanning 0 Hz to Nyquist.

    Triangles are sampled at the exact FFT bin frequencies (no bin snapping).
    Returns an n_mels x (fft_size//2 + 1) weight matrix.
    """
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2))
    bin_hz = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    fb = np.zeros((n_mels, bin_hz.size))
    for m in range(n_mels):
        lo, center, hi = edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]
        rising = (bin_hz - lo) / (center - lo)
        falling = (hi - bin_hz) / (hi - center)
        fb[m] = np.maximum(0.0, np.minimum(rising, falling))
    return fb


def _preemphasize(frames: np.ndarray, coeff: float) -> np.ndarray:
    # Applied within each frame: y[0] = x[0], y[n] = x[n] - a*x[n-1].
    if coeff == 0.0:
        return frames
    out = frames.copy()
    out[:, 1:] -= coeff * frames[:, :-1]
    return out


def mfcc(
    frames: np.ndarray,
    sample_rate: int,
    cfg: FrameConfig,
    frame_times: np.ndarray | None = None,
    original_len: int | None = None,
) -> FeatureSequence:
    """MFCCs for pre-cut frames (one row per frame, as from frame_signal).

    pad_mask marks frames starting at or beyond `original_len`; without that
    length every frame counts as genuine signal.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise ValueError("frames must be a non-empty T x L array")
    t, length = frames.shape
    if cfg.fft_size < length:
        raise FrameConfigError(f"fft_size {cfg.fft_size} < frame length {length}")
    if frame_times is None:
        frame_times = np.arange(t, dtype=np.int64) * cfg.frame_step(sample_rate)

    windowed = _preemphasize(frames, cfg.preemphasis) * np.hamming(length)
    power = np.abs(np.fft.rfft(windowed, n=cfg.fft_size, axis=1)) ** 2
    fb = mel_filterbank(cfg.n_mels, cfg.fft_size, sample_rate)
    logmel = np.log(np.maximum(power @ fb.T, LOG_FLOOR))
    coeffs = dct(logmel, type=2, norm="ortho", axis=1)[:, : cfg.n_mfcc]

    times = np.asarray(frame_times, dtype=np.int64)
    cutoff = original_len if original_len is not None else times[-1] + length + 1
    return FeatureSequence(frames=coeffs, frame_times=times, pad_mask=times >= cutoff)


def extract_features(clip: AudioClip, cfg: FrameConfig) -> FeatureSequence:
    """Full front end for one (possibly padded) clip."""
    frames, times = frame_signal(clip, cfg)
    return mfcc(frames, clip.sample_rate, cfg, frame_times=times, original_len=clip.original_len)


def extract_corpus_features(clips: list[AudioClip], cfg: FrameConfig, target: int | None = None) -> list[FeatureSequence]:
    """Pad every clip to the corpus maximum (or `target`), then extract MFCCs."""
    return [extract_features(c, cfg) for c in pad_to_length(clips, target)]


def power_spectrogram(clip: AudioClip, cfg: FrameConfig) -> tuple[np.ndarray, np.ndarray]:
    """Windowed power spectra per frame (for plotting). Returns (T x K, frame_times)."""
    frames, times = frame_signal(clip, cfg)
    if cfg.fft_size < frames.shape[1]:
        raise FrameConfigError(f"fft_size {cfg.fft_size} < frame length {frames.shape[1]}")
    windowed = _preemphasize(frames, cfg.preemphasis) * np.hamming(frames.shape[1])
    return np.abs(np.fft.rfft(windowed, n=cfg.fft_size, axis=1)) ** 2, times


# -- feature cache ("ROIF") ----------------------------------------------------

ROIF_MAGIC = b"ROIF"
ROIF_VERSION = 1


class FeatureCacheError(ValueError):
    """Feature cache bytes are malformed or from an unknown version."""


def save_feature_cache(seq: FeatureSequence) -> bytes:
    """Little-endian: magic, version u32, T u32, n_mfcc u32, T*n float64, T mask bytes."""
    head = ROIF_MAGIC + struct.pack("<III", ROIF_VERSION, seq.T, seq.n_mfcc)
    body = np.ascontiguousarray(seq.frames, dtype="<f8").tobytes()
    mask = seq.pad_mask.astype(np.uint8).tobytes()
    return head + body + mask


def load_feature_cache(data: bytes, step: int) -> FeatureSequence:
    """Inverse of save_feature_cache; `step` rebuilds frame_times (i*step)."""
    if len(data) < 16 or data[:4] != ROIF_MAGIC:
        raise FeatureCacheError("bad feature cache magic")
    version, t, n = struct.unpack_from("<III", data, 4)
    if version != ROIF_VERSION:
        raise FeatureCacheError(f"unsupported feature cache version {version}")
    need = 16 + t * n * 8 + t
    if len(data) < need:
        raise FeatureCacheError(f"truncated feature cache ({len(data)} bytes, need {need})")
    frames = np.frombuffer(data, dtype="<f8", count=t * n, offset=16).reshape(t, n).copy()
    mask = np.frombuffer(data, dtype=np.uint8, count=t, offset=16 + t * n * 8).astype(bool)
    return FeatureSequence(frames=frames, frame_times=np.arange(t, dtype=np.int64) * step, pad_mask=mask)
