"""Training: cross-entropy loss, hand-derived backprop through the decoder,
attention block, dropout, and encoder, SGD/Adam with global-norm clipping,
and a binary checkpoint format.

Reproducibility contract: a single counter-based rng seeded from
TrainConfig.seed drives, in this order, parameter init, then per epoch one
shuffle permutation, then per batch one dropout mask (only when dropout_rate
is nonzero). Same seed + same data = bit-identical loss history.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .dsp import FeatureSequence, FrameConfig
from .model import (
    ModelConfig,
    ModelParams,
    Variant,
    _attention_backward,
    _encode_backward,
    _forward_batch,
    _lstm_seq_backward,
    _lstm_step_backward,
    init_params,
    make_dropout_mask,
    param_shapes,
)
from .numerics import GradCheckReport, SeededRng, ShapeError, grad_check

__all__ = [
    "TrainConfig",
    "TrainingError",
    "GRAD_CHECK_TOL",
    "Checkpoint",
    "CheckpointFormatError",
    "CheckpointVersionError",
    "cross_entropy",
    "loss_and_grads",
    "stack_dataset",
    "fit_standardizer",
    "apply_standardizer",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "block_relative_errors",
    "gradient_check_suite",
]

PROB_FLOOR = 1e-12
STD_FLOOR = 1e-8
GRAD_CHECK_TOL = 1e-4


class TrainingError(RuntimeError):
    """Non-finite loss or gradient; carries the epoch/batch it appeared in."""

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 30
    batch_size: int = 16
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    grad_clip: float = 5.0
    shuffle: bool = True
    standardize: bool = True

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive (or None to disable)")


# -- loss and gradients ------------------------------------------------------


def cross_entropy(probs, labels):
    """Mean negative log likelihood; probabilities are floored at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim == 1:
        probs = probs[None, :]
        labels = np.asarray([labels])
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != probs.shape[0]:
        raise ShapeError(f"{labels.shape[0]} labels for {probs.shape[0]} probability rows")
    picked = probs[np.arange(probs.shape[0]), labels]
    return float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())


def loss_and_grads(X, pad, y, params: ModelParams, cfg: ModelConfig, dropout_mask=None):
    """Forward + full backward on one batch. Returns (loss, grads dict)."""
    B = X.shape[0]
    probs, _, cache = _forward_batch(X, pad, params, cfg, dropout_mask=dropout_mask, want_cache=True)
    y = np.asarray(y, dtype=np.int64)
    picked = probs[np.arange(B), y]
    loss = float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())

    grads = params.zeros_like()
    dlogits = probs.copy()
    dlogits[np.arange(B), y] -= 1.0
    dlogits /= B
    # rows where the picked probability hit the floor have locally constant loss
    dlogits[picked <= PROB_FLOOR] = 0.0

    h_final = cache["h_final"]
    grads["out.W"] += h_final.T @ dlogits
    grads["out.b"] += dlogits.sum(axis=0)
    dh_final = dlogits @ params["out.W"].T

    p = cache["p"]
    if cfg.variant.has_attention:
        dp = np.zeros_like(p)
        dh = dh_final
        dc = np.zeros_like(dh)
        for step in reversed(range(cfg.dec_steps)):
            dcontext, dh_prev, dc_prev = _lstm_step_backward(
                cache["dec_caches"][step], dh, dc,
                params["dec.W"], params["dec.U"],
                grads["dec.W"], grads["dec.U"], grads["dec.b"],
            )
            do_prev, dp_step = _attention_backward(dcontext, cache["att_caches"][step], params, cfg, grads)
            dp += dp_step
            if step > 0:
                # h<step-1> feeds both the next cell update and the attention query
                dh = dh_prev + do_prev
                dc = dc_prev
    else:
        dH_out = np.zeros_like(p[:, :, : cfg.dec_hidden])
        dH_out[:, -1, :] = dh_final
        dp, _, _ = _lstm_seq_backward(
            cache["dec_caches"], dH_out,
            params["dec.W"], params["dec.U"],
            grads["dec.W"], grads["dec.U"], grads["dec.b"],
        )

    if dropout_mask is not None:
        dp = dp * dropout_mask
    _encode_backward(dp, cache["enc_caches"], params, cfg, grads)
    return loss, grads


def _global_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def _clip_grads(grads, clip) -> float:
    norm = _global_norm(grads)
    if clip is not None and norm > clip:
        scale = clip / norm
        for g in grads.values():
            g *= scale
    return norm


# -- optimizers ---------------------------------------------------------------


class _Sgd:
    kind = "sgd"

    def __init__(self, cfg: TrainConfig):
        self.lr = cfg.lr
        self.t = 0

    def step(self, params: ModelParams, grads):
        self.t += 1
        for name, arr in params.arrays.items():
            arr -= self.lr * grads[name]

    def state_arrays(self):
        return {}, {}


class _Adam:
    kind = "adam"

    def __init__(self, cfg: TrainConfig, params: ModelParams):
        self.lr = cfg.lr
        self.b1 = cfg.beta1
        self.b2 = cfg.beta2
        self.eps = cfg.eps
        self.t = 0
        self.m = params.zeros_like()
        self.v = params.zeros_like()

    def step(self, params: ModelParams, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, arr in params.arrays.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            arr -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self):
        return self.m, self.v


def _make_optimizer(cfg: TrainConfig, params: ModelParams):
    if cfg.optimizer == "adam":
        return _Adam(cfg, params)
    return _Sgd(cfg)


# -- dataset stacking and standardization -------------------------------------


def stack_dataset(entries):
    """(FeatureSequence, label) pairs -> (X (N,T,d), pad (N,T), y (N,)).

    All sequences must already share one padded length.
    """
    if not entries:
        raise ValueError("empty training set")
    feats = []
    pads = []
    labels = []
    for seq, label in entries:
        if not isinstance(seq, FeatureSequence):
            raise TypeError("entries must pair a FeatureSequence with a label")
        feats.append(seq.frames)
        pads.append(seq.pad_mask)
        labels.append(int(label))
    shapes = {f.shape for f in feats}
    if len(shapes) != 1:
        raise ShapeError(f"feature sequences disagree in shape: {sorted(shapes)}")
    X = np.stack(feats)
    pad = np.stack(pads)
    y = np.asarray(labels, dtype=np.int64)
    if y.min() < 0 or y.max() > 5:
        raise ValueError("labels must lie in 0..5")
    return X, pad, y


def fit_standardizer(X):
    """Per-coefficient mean/std over every frame of the training set."""
    flat = X.reshape(-1, X.shape[-1])
    mean = flat.mean(axis=0)
    std = np.maximum(flat.std(axis=0), STD_FLOOR)
    return {"mean": mean, "std": std}


def apply_standardizer(X, stats):
    if stats is None:
        return X
    return (X - stats["mean"]) / stats["std"]


# -- checkpoint ----------------------------------------------------------------


CHECKPOINT_MAGIC = b"ROIC"
CHECKPOINT_VERSION = 1


class CheckpointFormatError(ValueError):
    """Checkpoint bytes are not a well-formed container."""


class CheckpointVersionError(CheckpointFormatError):
    """Container version is one this code does not read."""


@dataclass
class Checkpoint:
    model_cfg: ModelConfig
    params: ModelParams
    train_cfg: TrainConfig
    frame_cfg: FrameConfig | None = None
    epoch: int = 0
    loss_history: list = field(default_factory=list)
    rng_state: dict | None = None
    feature_stats: dict | None = None
    optimizer_kind: str = "adam"
    optimizer_t: int = 0
    optimizer_m: dict = field(default_factory=dict)
    optimizer_v: dict = field(default_factory=dict)


def _config_text(pairs: dict) -> bytes:
    lines = []
    for key in sorted(pairs):
        val = pairs[key]
        if isinstance(val, bool):
            txt = "true" if val else "false"
        elif isinstance(val, float):
            txt = repr(val)
        else:
            txt = str(val)
        lines.append(f"{key}={txt}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def _parse_config_text(data: bytes) -> dict:
    out = {}
    for line in data.decode("utf-8").splitlines():
        if not line:
            continue
        if "=" not in line:
            raise CheckpointFormatError(f"bad config line {line!r}")
        key, _, val = line.partition("=")
        out[key] = val
    return out


def _model_cfg_to_pairs(cfg: ModelConfig) -> dict:
    return {
        "variant": cfg.variant.value,
        "input_dim": cfg.input_dim,
        "enc_hidden": cfg.enc_hidden,
        "dec_hidden": cfg.dec_hidden,
        "attn_hidden": cfg.attn_hidden,
        "dropout_rate": float(cfg.dropout_rate),
        "n_classes": cfg.n_classes,
        "dec_steps": cfg.dec_steps,
        "mask_padding": cfg.mask_padding,
    }


def _model_cfg_from_pairs(pairs: dict) -> ModelConfig:
    try:
        return ModelConfig(
            variant=Variant.parse(pairs["variant"]),
            input_dim=int(pairs["input_dim"]),
            enc_hidden=int(pairs["enc_hidden"]),
            dec_hidden=int(pairs["dec_hidden"]),
            attn_hidden=int(pairs["attn_hidden"]),
            dropout_rate=float(pairs["dropout_rate"]),
            n_classes=int(pairs["n_classes"]),
            dec_steps=int(pairs["dec_steps"]),
            mask_padding=pairs["mask_padding"] == "true",
        )
    except KeyError as exc:
        raise CheckpointFormatError(f"model config missing key {exc}") from None


def _train_cfg_to_pairs(cfg: TrainConfig) -> dict:
    return {
        "lr": float(cfg.lr),
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "optimizer": cfg.optimizer,
        "beta1": float(cfg.beta1),
        "beta2": float(cfg.beta2),
        "eps": float(cfg.eps),
        "seed": cfg.seed,
        "grad_clip": float(cfg.grad_clip) if cfg.grad_clip is not None else "none",
        "shuffle": cfg.shuffle,
        "standardize": cfg.standardize,
    }


def _train_cfg_from_pairs(pairs: dict) -> TrainConfig:
    try:
        clip = pairs["grad_clip"]
        return TrainConfig(
            lr=float(pairs["lr"]),
            epochs=int(pairs["epochs"]),
            batch_size=int(pairs["batch_size"]),
            optimizer=pairs["optimizer"],
            beta1=float(pairs["beta1"]),
            beta2=float(pairs["beta2"]),
            eps=float(pairs["eps"]),
            seed=int(pairs["seed"]),
            grad_clip=None if clip == "none" else float(clip),
            shuffle=pairs["shuffle"] == "true",
            standardize=pairs["standardize"] == "true",
        )
    except KeyError as exc:
        raise CheckpointFormatError(f"train config missing key {exc}") from None


def _frame_cfg_to_pairs(cfg: FrameConfig) -> dict:
    return {
        "frame_len_ms": float(cfg.frame_len_ms),
        "step_ms": float(cfg.step_ms),
        "n_mfcc": cfg.n_mfcc,
        "n_mels": cfg.n_mels,
        "fft_size": cfg.fft_size,
        "preemphasis": float(cfg.preemphasis),
        "expected_sample_rate": cfg.expected_sample_rate,
        "allow_any_rate": cfg.allow_any_rate,
    }


def _frame_cfg_from_pairs(pairs: dict) -> FrameConfig:
    try:
        return FrameConfig(
            frame_len_ms=float(pairs["frame_len_ms"]),
            step_ms=float(pairs["step_ms"]),
            n_mfcc=int(pairs["n_mfcc"]),
            n_mels=int(pairs["n_mels"]),
            fft_size=int(pairs["fft_size"]),
            preemphasis=float(pairs["preemphasis"]),
            expected_sample_rate=int(pairs["expected_sample_rate"]),
            allow_any_rate=pairs["allow_any_rate"] == "true",
        )
    except KeyError as exc:
        raise CheckpointFormatError(f"frame config missing key {exc}") from None


def _pack_named_arrays(arrays: dict) -> bytes:
    chunks = [struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        nb = name.encode("utf-8")
        a = np.ascontiguousarray(arr, dtype="<f8")
        chunks.append(struct.pack("<I", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<I", a.ndim))
        if a.ndim:
            chunks.append(struct.pack(f"<{a.ndim}I", *a.shape))
        chunks.append(a.tobytes(order="C"))
    return b"".join(chunks)


class _Cursor:
    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointFormatError(f"truncated {self.what}: wanted {n} more bytes at offset {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def done(self) -> bool:
        return self.pos == len(self.data)


def _unpack_named_arrays(data: bytes, what: str) -> dict:
    cur = _Cursor(data, what)
    count = cur.u32()
    out = {}
    for _ in range(count):
        name = cur.take(cur.u32()).decode("utf-8")
        ndim = cur.u32()
        shape = struct.unpack(f"<{ndim}I", cur.take(4 * ndim)) if ndim else ()
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(cur.take(8 * size), dtype="<f8").reshape(shape).copy()
        out[name] = arr
    if not cur.done():
        raise CheckpointFormatError(f"{what} has {len(data) - cur.pos} trailing bytes")
    return out


def save_checkpoint(ckpt: Checkpoint) -> bytes:
    sections: list[tuple[str, bytes]] = []
    sections.append(("model_config", _config_text(_model_cfg_to_pairs(ckpt.model_cfg))))
    sections.append(("train_config", _config_text(_train_cfg_to_pairs(ckpt.train_cfg))))
    if ckpt.frame_cfg is not None:
        sections.append(("frame_config", _config_text(_frame_cfg_to_pairs(ckpt.frame_cfg))))
    sections.append(("params", _pack_named_arrays(ckpt.params.arrays)))
    opt = struct.pack("<I", len(ckpt.optimizer_kind)) + ckpt.optimizer_kind.encode("utf-8")
    opt += struct.pack("<Q", ckpt.optimizer_t)
    opt += _pack_named_arrays(ckpt.optimizer_m)
    opt += _pack_named_arrays(ckpt.optimizer_v)
    sections.append(("optimizer", opt))
    sections.append(("meta", _config_text({"epoch": ckpt.epoch})))
    if ckpt.rng_state is not None:
        sections.append(("rng_state", json.dumps(ckpt.rng_state, sort_keys=True, separators=(",", ":")).encode("utf-8")))
    hist = np.asarray(ckpt.loss_history, dtype="<f8")
    sections.append(("loss_history", struct.pack("<I", hist.size) + hist.tobytes()))
    if ckpt.feature_stats is not None:
        sections.append(("feature_stats", _pack_named_arrays(ckpt.feature_stats)))

    out = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION), struct.pack("<I", len(sections))]
    for name, payload in sections:
        nb = name.encode("utf-8")
        out.append(struct.pack("<I", len(nb)))
        out.append(nb)
        out.append(struct.pack("<Q", len(payload)))
        out.append(payload)
    return b"".join(out)


_KNOWN_SECTIONS = {
    "model_config",
    "train_config",
    "frame_config",
    "params",
    "optimizer",
    "meta",
    "rng_state",
    "loss_history",
    "feature_stats",
}


def load_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < 4 or data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"bad checkpoint magic {data[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    cur = _Cursor(data, "checkpoint")
    cur.take(4)
    version = cur.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"checkpoint version {version} not supported (expected {CHECKPOINT_VERSION})")
    n_sections = cur.u32()
    sections: dict[str, bytes] = {}
    for _ in range(n_sections):
        name = cur.take(cur.u32()).decode("utf-8")
        payload = cur.take(cur.u64())
        if name not in _KNOWN_SECTIONS:
            raise CheckpointFormatError(f"unknown checkpoint section {name!r}")
        if name in sections:
            raise CheckpointFormatError(f"duplicate checkpoint section {name!r}")
        sections[name] = payload
    if not cur.done():
        raise CheckpointFormatError(f"checkpoint has {len(data) - cur.pos} trailing bytes")
    for required in ("model_config", "train_config", "params", "optimizer", "meta", "loss_history"):
        if required not in sections:
            raise CheckpointFormatError(f"checkpoint missing section {required!r}")

    model_cfg = _model_cfg_from_pairs(_parse_config_text(sections["model_config"]))
    train_cfg = _train_cfg_from_pairs(_parse_config_text(sections["train_config"]))
    frame_cfg = None
    if "frame_config" in sections:
        frame_cfg = _frame_cfg_from_pairs(_parse_config_text(sections["frame_config"]))

    params = ModelParams(_unpack_named_arrays(sections["params"], "params section"))
    params.validate_shapes(model_cfg)

    ocur = _Cursor(sections["optimizer"], "optimizer section")
    kind = ocur.take(ocur.u32()).decode("utf-8")
    opt_t = ocur.u64()
    rest = ocur.data[ocur.pos :]
    # the two moment blobs sit back to back; parse the first to find the seam
    m_arrays, m_len = _split_arrays(rest)
    v_arrays = _unpack_named_arrays(rest[m_len:], "optimizer second moments")

    meta = _parse_config_text(sections["meta"])
    epoch = int(meta.get("epoch", "0"))

    rng_state = None
    if "rng_state" in sections:
        try:
            rng_state = json.loads(sections["rng_state"].decode("utf-8"))
        except json.JSONDecodeError as exc:
            raise CheckpointFormatError(f"rng_state is not valid JSON: {exc}") from None

    hcur = _Cursor(sections["loss_history"], "loss history")
    n_hist = hcur.u32()
    hist = np.frombuffer(hcur.take(8 * n_hist), dtype="<f8").tolist()
    if not hcur.done():
        raise CheckpointFormatError("loss history has trailing bytes")

    stats = None
    if "feature_stats" in sections:
        stats = _unpack_named_arrays(sections["feature_stats"], "feature stats")
        if set(stats) != {"mean", "std"}:
            raise CheckpointFormatError("feature stats must hold exactly 'mean' and 'std'")

    return Checkpoint(
        model_cfg=model_cfg,
        params=params,
        train_cfg=train_cfg,
        frame_cfg=frame_cfg,
        epoch=epoch,
        loss_history=hist,
        rng_state=rng_state,
        feature_stats=stats,
        optimizer_kind=kind,
        optimizer_t=opt_t,
        optimizer_m=m_arrays,
        optimizer_v=v_arrays,
    )


def _split_arrays(data: bytes):
    """Parse one named-array blob off the front; return (arrays, bytes consumed)."""
    cur = _Cursor(data, "array blob")
    count = cur.u32()
    out = {}
    for _ in range(count):
        name = cur.take(cur.u32()).decode("utf-8")
        ndim = cur.u32()
        shape = struct.unpack(f"<{ndim}I", cur.take(4 * ndim)) if ndim else ()
        size = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(cur.take(8 * size), dtype="<f8").reshape(shape).copy()
    return out, cur.pos


# -- the loop ------------------------------------------------------------------


def train(train_set, model_cfg: ModelConfig, train_cfg: TrainConfig, frame_cfg=None, on_epoch=None) -> Checkpoint:
    """Fit one model. on_epoch(epoch, mean_loss, params, feature_stats) runs
    after each epoch; a truthy return stops early. Returns the checkpoint.
    """
    X, pad, y = stack_dataset(train_set)
    rng = SeededRng(train_cfg.seed)
    params = init_params(model_cfg, rng)
    stats = fit_standardizer(X) if train_cfg.standardize else None
    X = apply_standardizer(X, stats)
    opt = _make_optimizer(train_cfg, params)

    n = X.shape[0]
    loss_history: list[float] = []
    last_epoch = 0
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(n) if train_cfg.shuffle else np.arange(n)
        total = 0.0
        for batch_no, start in enumerate(range(0, n, train_cfg.batch_size)):
            idx = order[start : start + train_cfg.batch_size]
            mask = make_dropout_mask(model_cfg, (idx.size, X.shape[1]), rng)
            loss, grads = loss_and_grads(X[idx], pad[idx], y[idx], params, model_cfg, dropout_mask=mask)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss}", epoch=epoch, batch=batch_no)
            norm = _clip_grads(grads, train_cfg.grad_clip)
            if not np.isfinite(norm):
                raise TrainingError(f"non-finite gradient norm {norm}", epoch=epoch, batch=batch_no)
            opt.step(params, grads)
            total += loss * idx.size
        mean_loss = total / n
        loss_history.append(mean_loss)
        last_epoch = epoch + 1
        if on_epoch is not None and on_epoch(epoch, mean_loss, params, stats):
            break

    m, v = opt.state_arrays()
    return Checkpoint(
        model_cfg=model_cfg,
        params=params,
        train_cfg=train_cfg,
        frame_cfg=frame_cfg,
        epoch=last_epoch,
        loss_history=loss_history,
        rng_state=rng.get_state(),
        feature_stats=stats,
        optimizer_kind=opt.kind,
        optimizer_t=opt.t,
        optimizer_m=m,
        optimizer_v=v,
    )


# -- gradient verification ------------------------------------------------------


def block_relative_errors(cfg: ModelConfig, report: GradCheckReport) -> dict:
    """One relative error per parameter block: ||fd - an|| over
    max(||fd||, ||an||, 1e-8), from a whole-vector GradCheckReport."""
    out = {}
    pos = 0
    for name, shape in param_shapes(cfg).items():
        size = int(np.prod(shape))
        fd = report.fd[pos : pos + size]
        an = report.analytic[pos : pos + size]
        diff = float(np.linalg.norm(fd - an))
        denom = max(float(np.linalg.norm(fd)), float(np.linalg.norm(an)), 1e-8)
        out[name] = diff / denom
        pos += size
    return out


def gradient_check_suite(seed: int = 0, h: float = 1e-5):
    """Finite-difference check of the full backward pass, one case per variant
    plus masked-padding and deeper-scorer cases.

    Returns [(name, report, block_errs)] where block_errs maps each parameter
    block to a norm-based relative error. The pass/fail gate lives on the
    block level: individual coordinates whose true gradient is at or below
    the central-difference noise floor (the attention scorer bias is exactly
    zero by softmax shift invariance) make per-coordinate ratios meaningless
    at small h, while a real backward bug still shows up as a block error
    orders of magnitude above the tolerance.
    """
    base = dict(input_dim=13, enc_hidden=4, dec_hidden=4, dropout_rate=0.0, n_classes=6)
    cases = [
        ("uni_attention", ModelConfig(variant=Variant.UNI_ATTENTION, dec_steps=2, **base)),
        ("bi_attention", ModelConfig(variant=Variant.BI_ATTENTION, dec_steps=2, **base)),
        ("uni_plain", ModelConfig(variant=Variant.UNI_PLAIN, **base)),
        ("bi_plain", ModelConfig(variant=Variant.BI_PLAIN, **base)),
        ("bi_attention_masked", ModelConfig(variant=Variant.BI_ATTENTION, dec_steps=2, mask_padding=True, **base)),
        ("uni_attention_mlp_scorer", ModelConfig(variant=Variant.UNI_ATTENTION, dec_steps=2, attn_hidden=3, **base)),
    ]
    results = []
    for offset, (name, cfg) in enumerate(cases):
        rng = SeededRng(seed + offset)
        B, T = 3, 6
        X = rng.normal(size=(B, T, cfg.input_dim))
        pad = np.zeros((B, T), dtype=bool)
        if cfg.mask_padding:
            pad[0, -2:] = True
            pad[1, -1] = True
        y = np.array([0, 3, 5])
        params = init_params(cfg, rng)
        theta = params.to_vector()

        def f(vec, _cfg=cfg, _X=X, _pad=pad, _y=y):
            p = ModelParams.from_vector(_cfg, vec)
            loss, _ = loss_and_grads(_X, _pad, _y, p, _cfg)
            return loss

        _, grads = loss_and_grads(X, pad, y, params, cfg)
        analytic = np.concatenate([grads[k].ravel() for k in params.names()])
        report = grad_check(f, theta, analytic, h=h)
        results.append((name, report, block_relative_errors(cfg, report)))
    return results
