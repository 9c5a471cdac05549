"""Command line front end.

Every knob is a flat dotted configuration key (section.name). Values come
from, in rising precedence: built-in defaults, a --config file of key=value
lines, the ROI_ATTEND_CACHE environment variable (paths.cache_dir only), and
--section.key=value tokens on the command line.

Each run writes into <paths.output_dir>/<command>-<12 hex chars>, the hash
taken over the full effective configuration, so identical invocations land in
the same directory and differing ones never collide.

Exit codes: 0 success, 1 runtime failure, 2 bad usage or configuration.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .dataset import (
    SyntheticSpec,
    generate_synthetic,
    loso_folds,
    manifest_csv,
    scan_corpus,
    write_synthetic_corpus,
)
from .dsp import (
    FeatureCacheError,
    FrameConfig,
    extract_features,
    load_feature_cache,
    pad_to_length,
    power_spectrogram,
    read_wav_file,
    save_feature_cache,
)
from .evaluation import (
    AGGREGATION_MODES,
    ConfusionMatrix,
    EvalItem,
    aggregate,
    evaluate_fold,
    fold_csv,
    matrix_csv,
    parse_fold_csv,
    per_emotion_report,
    summary_text,
)
from .model import ModelConfig, Variant
from .roi import attention_json, detect_roi, dump_attention_json, extract_attention, render_svg
from .training import (
    GRAD_CHECK_TOL,
    TrainConfig,
    gradient_check_suite,
    load_checkpoint,
    save_checkpoint,
    train,
)

CACHE_ENV = "ROI_ATTEND_CACHE"

COMMANDS = ("synth", "features", "train", "eval-loso", "explain", "gradcheck", "report")


class UsageError(ValueError):
    """Bad flags or configuration; maps to exit code 2."""


# key -> (type tag, default). Model input width always follows frame.n_mfcc.
_SCHEMA = {
    "frame.frame_len_ms": ("float", 20.0),
    "frame.step_ms": ("float", 10.0),
    "frame.n_mfcc": ("int", 13),
    "frame.n_mels": ("int", 26),
    "frame.fft_size": ("int", 512),
    "frame.preemphasis": ("float", 0.97),
    "frame.expected_sample_rate": ("int", 16000),
    "frame.allow_any_rate": ("bool", False),
    "model.variant": ("str", "bi_attention"),
    "model.enc_hidden": ("int", 64),
    "model.dec_hidden": ("int", 64),
    "model.attn_hidden": ("int", 0),
    "model.dropout_rate": ("float", 0.1),
    "model.dec_steps": ("int", 1),
    "model.mask_padding": ("bool", False),
    "train.lr": ("float", 1e-3),
    "train.epochs": ("int", 30),
    "train.batch_size": ("int", 16),
    "train.optimizer": ("str", "adam"),
    "train.beta1": ("float", 0.9),
    "train.beta2": ("float", 0.999),
    "train.eps": ("float", 1e-8),
    "train.seed": ("int", 0),
    "train.grad_clip": ("float", 5.0),
    "train.shuffle": ("bool", True),
    "train.standardize": ("bool", True),
    "synth.n_clips_per_class": ("int", 10),
    "synth.sample_rate": ("int", 16000),
    "synth.clip_len": ("int", 8000),
    "synth.burst_len": ("int", 1600),
    "synth.noise_amplitude": ("float", 0.01),
    "synth.seed": ("int", 0),
    "synth.n_actors": ("int", 5),
    "synth.actor_base": ("int", 9001),
    "synth.min_clip_len": ("int", 0),
    "eval.mode": ("str", "sum_then_normalize"),
    "eval.parallel": ("int", 0),
    "eval.folds": ("int", 0),
    "roi.ratio": ("float", 2.0),
    "paths.corpus_dir": ("str", ""),
    "paths.cache_dir": ("str", ""),
    "paths.output_dir": ("str", "runs"),
    "paths.checkpoint": ("str", ""),
    "paths.wav": ("str", ""),
    "paths.folds_dir": ("str", ""),
}


def _coerce(key: str, raw: str):
    if key not in _SCHEMA:
        raise UsageError(f"unknown configuration key '{key}'")
    kind, _ = _SCHEMA[key]
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError:
        raise UsageError(f"bad value '{raw}' for key '{key}' (expected {kind})") from None


def _defaults() -> dict:
    return {k: v for k, (_, v) in _SCHEMA.items()}


def _read_config_file(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise UsageError(f"{path}:{lineno}: expected key=value, got '{stripped}'")
        key, _, val = stripped.partition("=")
        out[key.strip()] = _coerce(key.strip(), val)
    return out


# Bare spellings accepted for often-typed flags.
_FLAG_ALIASES = {"folds": "eval.folds", "parallel": "eval.parallel", "ratio": "roi.ratio"}


def _parse_overrides(tokens: list) -> dict:
    out = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--"):
            raise UsageError(f"unexpected argument '{tok}'")
        body = tok[2:]
        if "=" in body:
            key, _, val = body.partition("=")
            i += 1
        else:
            key = body
            if i + 1 >= len(tokens):
                raise UsageError(f"flag --{key} is missing a value")
            val = tokens[i + 1]
            i += 2
        key = _FLAG_ALIASES.get(key, key)
        if "." not in key:
            raise UsageError(f"unknown flag --{key} (configuration keys are section.name)")
        out[key] = _coerce(key, val)
    return out


def effective_config(config_file: str | None, override_tokens: list) -> dict:
    cfg = _defaults()
    if config_file:
        cfg.update(_read_config_file(config_file))
    env_cache = os.environ.get(CACHE_ENV, "")
    if env_cache:
        cfg["paths.cache_dir"] = env_cache
    cfg.update(_parse_overrides(override_tokens))
    return cfg


def _canonical(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def run_id(command: str, cfg: dict) -> str:
    blob = command + "\n" + "\n".join(f"{k}={_canonical(cfg[k])}" for k in sorted(cfg)) + "\n"
    return f"{command}-{hashlib.sha256(blob.encode('utf-8')).hexdigest()[:12]}"


def _run_dir(command: str, cfg: dict) -> Path:
    d = Path(cfg["paths.output_dir"]) / run_id(command, cfg)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_atomic(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    if isinstance(data, bytes):
        tmp.write_bytes(data)
    else:
        tmp.write_text(data)
    os.replace(tmp, path)


# -- config -> dataclasses -----------------------------------------------------


def _frame_cfg(cfg: dict) -> FrameConfig:
    try:
        return FrameConfig(
            frame_len_ms=cfg["frame.frame_len_ms"],
            step_ms=cfg["frame.step_ms"],
            n_mfcc=cfg["frame.n_mfcc"],
            n_mels=cfg["frame.n_mels"],
            fft_size=cfg["frame.fft_size"],
            preemphasis=cfg["frame.preemphasis"],
            expected_sample_rate=cfg["frame.expected_sample_rate"],
            allow_any_rate=cfg["frame.allow_any_rate"],
        )
    except ValueError as exc:
        raise UsageError(f"bad frame settings: {exc}") from None


def _model_cfg(cfg: dict) -> ModelConfig:
    try:
        variant = Variant.parse(cfg["model.variant"])
    except ValueError as exc:
        raise UsageError(f"bad value for key 'model.variant': {exc}") from None
    try:
        return ModelConfig(
            variant=variant,
            input_dim=cfg["frame.n_mfcc"],
            enc_hidden=cfg["model.enc_hidden"],
            dec_hidden=cfg["model.dec_hidden"],
            attn_hidden=cfg["model.attn_hidden"],
            dropout_rate=cfg["model.dropout_rate"],
            dec_steps=cfg["model.dec_steps"],
            mask_padding=cfg["model.mask_padding"],
        )
    except ValueError as exc:
        raise UsageError(f"bad model settings: {exc}") from None


def _train_cfg(cfg: dict) -> TrainConfig:
    try:
        return TrainConfig(
            lr=cfg["train.lr"],
            epochs=cfg["train.epochs"],
            batch_size=cfg["train.batch_size"],
            optimizer=cfg["train.optimizer"],
            beta1=cfg["train.beta1"],
            beta2=cfg["train.beta2"],
            eps=cfg["train.eps"],
            seed=cfg["train.seed"],
            grad_clip=cfg["train.grad_clip"] if cfg["train.grad_clip"] > 0 else None,
            shuffle=cfg["train.shuffle"],
            standardize=cfg["train.standardize"],
        )
    except ValueError as exc:
        raise UsageError(f"bad training settings: {exc}") from None


def _synth_spec(cfg: dict) -> SyntheticSpec:
    try:
        return SyntheticSpec(
            n_clips_per_class=cfg["synth.n_clips_per_class"],
            sample_rate=cfg["synth.sample_rate"],
            clip_len=cfg["synth.clip_len"],
            burst_len=cfg["synth.burst_len"],
            noise_amplitude=cfg["synth.noise_amplitude"],
            seed=cfg["synth.seed"],
            n_actors=cfg["synth.n_actors"],
            actor_base=cfg["synth.actor_base"],
            min_clip_len=cfg["synth.min_clip_len"] or None,
        )
    except ValueError as exc:
        raise UsageError(f"bad synthesis settings: {exc}") from None


def _require(cfg: dict, key: str) -> str:
    val = cfg[key]
    if not val:
        raise UsageError(f"'{key}' must be set for this command")
    return val


# -- shared corpus loading -------------------------------------------------------


def _corpus_features(corpus_dir: str, cache_dir: str, frame_cfg: FrameConfig):
    """Manifest plus per-clip features, every clip zero-padded to the corpus
    maximum. Cached .roif files are keyed by clip stem and pad target, so a
    corpus change invalidates them naturally."""
    manifest, skipped = scan_corpus(corpus_dir)
    for name in skipped:
        print(f"skipping unparseable name: {name}", file=sys.stderr)
    clips = [read_wav_file(e.path) for e in manifest.entries]
    target = max(len(c) for c in clips)
    step = frame_cfg.frame_step(frame_cfg.expected_sample_rate)
    feats = []
    cache = Path(cache_dir) if cache_dir else None
    if cache is not None:
        cache.mkdir(parents=True, exist_ok=True)
    for clip, entry in zip(clips, manifest.entries):
        cpath = None
        if cache is not None:
            stem = Path(entry.path).stem
            cpath = cache / f"{stem}.{target}.roif"
            if cpath.exists():
                try:
                    seq = load_feature_cache(cpath.read_bytes(), step)
                    if seq.n_mfcc == frame_cfg.n_mfcc:
                        feats.append(seq)
                        continue
                except FeatureCacheError as exc:
                    print(f"recomputing {cpath.name}: {exc}", file=sys.stderr)
        seq = extract_features(pad_to_length([clip], target=target)[0], frame_cfg)
        if cpath is not None:
            _write_atomic(cpath, save_feature_cache(seq))
        feats.append(seq)
    return manifest, feats, target


# -- commands ---------------------------------------------------------------------


def _cmd_synth(cfg: dict) -> int:
    out = _run_dir("synth", cfg)
    clips = generate_synthetic(_synth_spec(cfg))
    write_synthetic_corpus(clips, out)
    print(f"wrote {len(clips)} clips to {out}")
    return 0


def _cmd_features(cfg: dict) -> int:
    corpus = _require(cfg, "paths.corpus_dir")
    cache = _require(cfg, "paths.cache_dir")
    frame_cfg = _frame_cfg(cfg)
    out = _run_dir("features", cfg)
    manifest, feats, target = _corpus_features(corpus, cache, frame_cfg)
    _write_atomic(out / "manifest.csv", manifest_csv(manifest))
    print(f"cached features for {len(feats)} clips (pad target {target} samples) in {cache}")
    return 0


def _train_one(entries, feats, model_cfg, train_cfg, frame_cfg, verbose=True):
    train_set = [(f, int(e.emotion)) for e, f in zip(entries, feats)]
    hook = None
    if verbose:
        def hook(epoch, mean_loss, params, stats):
            print(f"epoch {epoch + 1}/{train_cfg.epochs} loss {mean_loss:.6f}")
            return False
    return train(train_set, model_cfg, train_cfg, frame_cfg=frame_cfg, on_epoch=hook)


def _cmd_train(cfg: dict) -> int:
    corpus = _require(cfg, "paths.corpus_dir")
    frame_cfg = _frame_cfg(cfg)
    model_cfg = _model_cfg(cfg)
    train_cfg = _train_cfg(cfg)
    out = _run_dir("train", cfg)
    manifest, feats, _ = _corpus_features(corpus, cfg["paths.cache_dir"], frame_cfg)
    ckpt = _train_one(manifest.entries, feats, model_cfg, train_cfg, frame_cfg)
    _write_atomic(out / "checkpoint.roic", save_checkpoint(ckpt))
    hist = "epoch,loss\n" + "".join(
        f"{i + 1},{repr(v)}\n" for i, v in enumerate(ckpt.loss_history)
    )
    _write_atomic(out / "loss_history.csv", hist)
    print(f"checkpoint: {out / 'checkpoint.roic'}")
    return 0


def _fold_worker(payload):
    subject, train_set, items, model_cfg, train_cfg, frame_cfg = payload
    ckpt = train(train_set, model_cfg, train_cfg, frame_cfg=frame_cfg)
    result = evaluate_fold(ckpt, items, subject)
    return subject, fold_csv(result), result.confusion.counts


def _cmd_eval_loso(cfg: dict) -> int:
    corpus = _require(cfg, "paths.corpus_dir")
    mode = cfg["eval.mode"]
    if mode not in AGGREGATION_MODES:
        raise UsageError(f"eval.mode must be one of {AGGREGATION_MODES}, got '{mode}'")
    frame_cfg = _frame_cfg(cfg)
    model_cfg = _model_cfg(cfg)
    base_train_cfg = _train_cfg(cfg)
    out = _run_dir("eval-loso", cfg)
    manifest, feats, _ = _corpus_features(corpus, cfg["paths.cache_dir"], frame_cfg)
    folds = loso_folds(manifest)
    limit = cfg["eval.folds"]
    if limit < 0:
        raise UsageError(f"eval.folds must be >= 0, got {limit}")
    if limit:
        folds = folds[:limit]

    payloads = []
    for i, fold in enumerate(folds):
        # each fold gets its own seed so folds are independent but reproducible
        tc = replace(base_train_cfg, seed=base_train_cfg.seed + i)
        train_set = [(feats[j], int(manifest.entries[j].emotion)) for j in fold.train_indices]
        items = [
            EvalItem(manifest.entries[j].path, feats[j], int(manifest.entries[j].emotion))
            for j in fold.test_indices
        ]
        payloads.append((fold.held_out_subject, train_set, items, model_cfg, tc, frame_cfg))

    completed: list[str] = []
    matrices: list[ConfusionMatrix] = []
    failed = None
    try:
        if cfg["eval.parallel"] > 0:
            with ProcessPoolExecutor(max_workers=cfg["eval.parallel"]) as pool:
                results = pool.map(_fold_worker, payloads)
                for subject, csv_text, counts in results:
                    _write_atomic(out / f"fold-{subject}.csv", csv_text)
                    completed.append(subject)
                    matrices.append(ConfusionMatrix(counts))
                    _write_atomic(out / "MANIFEST", "".join(s + "\n" for s in completed))
                    print(f"fold {subject}: done ({len(completed)}/{len(folds)})")
        else:
            for payload in payloads:
                subject, csv_text, counts = _fold_worker(payload)
                _write_atomic(out / f"fold-{subject}.csv", csv_text)
                completed.append(subject)
                matrices.append(ConfusionMatrix(counts))
                _write_atomic(out / "MANIFEST", "".join(s + "\n" for s in completed))
                print(f"fold {subject}: done ({len(completed)}/{len(folds)})")
    except Exception as exc:  # partial fold results stay on disk for `report`
        failed = exc

    if failed is not None:
        print(f"evaluation stopped after {len(completed)}/{len(folds)} folds: {failed}", file=sys.stderr)
        return 1

    for agg_mode in AGGREGATION_MODES:
        report = aggregate(matrices, agg_mode)
        _write_atomic(out / f"aggregate-{agg_mode}.csv", matrix_csv(report.rates))
    selected = aggregate(matrices, mode)
    text = summary_text(selected) + "\n" + per_emotion_report(selected, model_cfg.variant.model_number)
    _write_atomic(out / "summary.txt", text)
    print(text, end="")
    print(f"results: {out}")
    return 0


def _cmd_report(cfg: dict) -> int:
    folds_dir = Path(_require(cfg, "paths.folds_dir"))
    mode = cfg["eval.mode"]
    if mode not in AGGREGATION_MODES:
        raise UsageError(f"eval.mode must be one of {AGGREGATION_MODES}, got '{mode}'")
    fold_files = sorted(folds_dir.glob("fold-*.csv"))
    if not fold_files:
        raise FileNotFoundError(f"no fold-*.csv files under {folds_dir}")
    matrices = []
    for path in fold_files:
        _, true, pred, _ = parse_fold_csv(path.read_text())
        cm = ConfusionMatrix()
        for t, p in zip(true, pred):
            cm.add(int(t), int(p))
        matrices.append(cm)
    out = _run_dir("report", cfg)
    for agg_mode in AGGREGATION_MODES:
        report = aggregate(matrices, agg_mode)
        _write_atomic(out / f"aggregate-{agg_mode}.csv", matrix_csv(report.rates))
    selected = aggregate(matrices, mode)
    model_cfg = _model_cfg(cfg)
    text = summary_text(selected) + "\n" + per_emotion_report(selected, model_cfg.variant.model_number)
    _write_atomic(out / "summary.txt", text)
    print(text, end="")
    print(f"results: {out}")
    return 0


def _cmd_explain(cfg: dict) -> int:
    ckpt_path = _require(cfg, "paths.checkpoint")
    wav_path = _require(cfg, "paths.wav")
    ckpt = load_checkpoint(Path(ckpt_path).read_bytes())
    if not ckpt.model_cfg.variant.has_attention:
        raise UsageError(
            f"checkpoint holds variant '{ckpt.model_cfg.variant.value}' "
            f"(model {ckpt.model_cfg.variant.model_number}), which produces no attention weights"
        )
    frame_cfg = ckpt.frame_cfg if ckpt.frame_cfg is not None else _frame_cfg(cfg)
    clip = read_wav_file(wav_path)
    features = extract_features(clip, frame_cfg)
    spec, _ = power_spectrogram(clip, frame_cfg)
    out = _run_dir("explain", cfg)
    maps = extract_attention(ckpt, features)
    for step_no, amap in enumerate(maps, start=1):
        roi = detect_roi(amap, ratio=cfg["roi.ratio"])
        payload = attention_json(wav_path, amap, roi)
        _write_atomic(out / f"attention-step{step_no}.json", dump_attention_json(payload))
        _write_atomic(out / f"roi-step{step_no}.svg", render_svg(clip.samples, amap, roi, spectrogram=spec))
        spans = ", ".join(f"[{r.start_sample}, {r.end_sample})" for r in roi.regions) or "none"
        print(f"step {step_no}: {len(roi.regions)} region(s) {spans}, silence mass {roi.silence_mass:.4f}")
    print(f"results: {out}")
    return 0


def _cmd_gradcheck(cfg: dict) -> int:
    failed = False
    for name, report, blocks in gradient_check_suite(seed=cfg["train.seed"]):
        worst_block = max(blocks, key=blocks.get)
        err = blocks[worst_block]
        ok = err < GRAD_CHECK_TOL
        failed = failed or not ok
        status = "ok" if ok else "FAIL"
        print(
            f"{name}: worst block {worst_block} rel err {err:.3e} "
            f"({status}, tol {GRAD_CHECK_TOL:.0e}; per-coordinate max {report.max_rel_err:.3e})"
        )
    return 1 if failed else 0


_HANDLERS = {
    "synth": _cmd_synth,
    "features": _cmd_features,
    "train": _cmd_train,
    "eval-loso": _cmd_eval_loso,
    "explain": _cmd_explain,
    "gradcheck": _cmd_gradcheck,
    "report": _cmd_report,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roi-attend",
        description="Attention-based region-of-interest detection for speech emotion recognition.",
        epilog="All settings are --section.key=value overrides; see README for the key list.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "synth": "generate a labelled synthetic test corpus",
        "features": "compute and cache MFCC features for a corpus",
        "train": "train one model on a corpus",
        "eval-loso": "leave-one-subject-out evaluation over a corpus",
        "explain": "attention weights and regions of interest for one clip",
        "gradcheck": "verify analytic gradients against finite differences",
        "report": "rebuild aggregate tables from stored fold csv files",
    }
    for name in COMMANDS:
        sp = sub.add_parser(name, help=helps[name], add_help=True)
        sp.add_argument("--config", default=None, help="key=value configuration file")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    ns, leftover = parser.parse_known_args(argv)
    cfg = effective_config(ns.config, leftover)
    return _HANDLERS[ns.command](cfg)


def entrypoint(argv=None) -> int:
    try:
        return main(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 130
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(entrypoint())
