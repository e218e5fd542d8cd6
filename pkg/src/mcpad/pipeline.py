"""End-to-end pipeline stages behind the CLI: synth -> preprocess ->
extract -> train (baselines / MC-CNN) -> eval -> report. Every stage is a
pure function of (inputs on disk, configuration); reruns write identical
bytes.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import classical, mccnn
from .config import (
    RunConfig,
    align_targets,
    glcm_config,
    lbp_config,
    mccnn_config,
    synth_config,
    write_lock,
)
from .dataset import (
    ChannelId,
    Manifest,
    load_manifest,
    read_sample,
    sample_frames,
    save_manifest,
    synth_generate,
    write_sample,
)
from .evaluation import (
    ProtocolSpec,
    ScoreEntry,
    build_report,
    load_scores,
    make_grandtest,
    make_loo,
    roc,
    save_protocol,
    save_scores,
    write_metrics_csv,
    write_per_pai_csv,
    write_report_json,
    write_roc_csv,
)
from .features import (
    iqm_features,
    lbp_histogram,
    rdwt_haralick_features,
    read_feature_table,
    write_feature_table,
)
from .preprocess import align_color, landmarks_path, load_landmarks, preprocess_sample
from .dataset import AttackType


class ValidationError(ValueError):
    """A required upstream artifact or argument is missing/invalid."""


EXTRACTORS = ("lbp", "iqm", "rdwt-haralick")
PIPELINES = ("iqm-lbp-lr", "rdwt-haralick-svm")

_EXTRACTOR_CHANNELS = {
    "lbp": (ChannelId.DEPTH, ChannelId.INFRARED, ChannelId.THERMAL),
    "rdwt-haralick": (ChannelId.GRAY, ChannelId.DEPTH, ChannelId.INFRARED, ChannelId.THERMAL),
    "iqm": (ChannelId.COLOR,),
}

_PIPELINE_LAYOUT = {
    "iqm-lbp-lr": {
        "classifier": "lr",
        "channels": (
            (ChannelId.COLOR, "iqm"),
            (ChannelId.DEPTH, "lbp"),
            (ChannelId.INFRARED, "lbp"),
            (ChannelId.THERMAL, "lbp"),
        ),
    },
    "rdwt-haralick-svm": {
        "classifier": "svm",
        "channels": (
            (ChannelId.GRAY, "rdwt-haralick"),
            (ChannelId.DEPTH, "rdwt-haralick"),
            (ChannelId.INFRARED, "rdwt-haralick"),
            (ChannelId.THERMAL, "rdwt-haralick"),
        ),
    },
}


def _require(path: Path, kind: str) -> Path:
    if not path.exists():
        raise ValidationError(f"missing {kind}: {path}")
    return path


def data_root(cfg: RunConfig) -> Path:
    return Path(cfg.paths.data_root)


def out_root(cfg: RunConfig) -> Path:
    return Path(cfg.paths.out_root)


def proc_dir(cfg: RunConfig) -> Path:
    return out_root(cfg) / "proc"


def features_dir(cfg: RunConfig) -> Path:
    return out_root(cfg) / "features" / cfg.protocol.name


def feature_table_path(cfg: RunConfig, split: str, channel: ChannelId, extractor: str) -> Path:
    return features_dir(cfg) / f"{split}_{channel.label}_{extractor}.mcfv"


# --------------------------------------------------------------------------
# synth / preprocess
# --------------------------------------------------------------------------

def cmd_synth(cfg: RunConfig) -> Manifest:
    root = data_root(cfg)
    samples = root / "samples"
    manifest = synth_generate(synth_config(cfg), samples)
    save_manifest(manifest, root / "manifest.csv")
    write_lock(root, cfg, "synth")
    return manifest


def cmd_preprocess(cfg: RunConfig) -> Manifest:
    raw_manifest = load_manifest(_require(data_root(cfg) / "manifest.csv", "raw manifest"))
    targets = align_targets(cfg)
    out = proc_dir(cfg)
    samples_dir = out / "samples"
    samples_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for entry in raw_manifest:
        raw = read_sample(entry.path, meta=entry.meta)
        lm_file = _require(landmarks_path(entry.path), "landmarks file")
        landmarks = load_landmarks(lm_file)
        frame_count = raw.frame_count(next(iter(raw.channels)))
        indices = sample_frames(frame_count, cfg.preprocess.frames)
        processed, _dropped = preprocess_sample(
            raw, landmarks, targets, mad_span=cfg.preprocess.mad_span, frame_indices=indices
        )
        path = samples_dir / f"{entry.sample_id}.mcpd"
        write_sample(processed, path)
        entries.append(type(entry)(entry.sample_id, path.resolve(), entry.meta))
    manifest = Manifest(entries)
    save_manifest(manifest, out / "manifest.csv")
    write_lock(out, cfg, "preprocess")
    return manifest


# --------------------------------------------------------------------------
# protocols
# --------------------------------------------------------------------------

def build_protocol(cfg: RunConfig, manifest: Manifest) -> ProtocolSpec:
    name = cfg.protocol.name
    if name == "grandtest":
        spec = make_grandtest(manifest, ratios=cfg.protocol.ratios, seed=cfg.seed)
    else:
        attack = AttackType.from_label(name[len("LOO_"):])
        spec = make_loo(manifest, attack, seed=cfg.seed, ratios=cfg.protocol.ratios)
    proto_dir = out_root(cfg) / "protocols"
    proto_dir.mkdir(parents=True, exist_ok=True)
    save_protocol(spec, proto_dir / f"{spec.name}.json")
    return spec


def _load_proc(cfg: RunConfig) -> tuple[Manifest, ProtocolSpec]:
    manifest = load_manifest(_require(proc_dir(cfg) / "manifest.csv", "preprocessed manifest"))
    return manifest, build_protocol(cfg, manifest)


# --------------------------------------------------------------------------
# feature extraction
# --------------------------------------------------------------------------

def _extract_one(args) -> tuple[str, list[int], dict[str, np.ndarray]]:
    """Per-sample feature worker: returns (sample_id, frame indices,
    {channel-label: (F, dim) features})."""
    cfg, extractor, sample_path, raw_path, channels = args
    out: dict[str, np.ndarray] = {}
    if extractor == "iqm":
        raw = read_sample(raw_path)
        landmarks = load_landmarks(landmarks_path(raw_path))
        frame_count = raw.frame_count(next(iter(raw.channels)))
        indices = sample_frames(frame_count, cfg.preprocess.frames)
        stack, _ = align_color(raw, landmarks, align_targets(cfg), frame_indices=indices)
        rows = [
            iqm_features(stack[i], measures=cfg.features.iqm_measures)
            for i in range(stack.shape[0])
        ]
        out[ChannelId.COLOR.label] = np.stack(rows)
        frames = list(range(stack.shape[0]))
        return sample_path, frames, out

    sample = read_sample(sample_path)
    frames = None
    for ch in channels:
        stack = sample.channels[ch]
        if extractor == "lbp":
            feats = [lbp_histogram(stack[i], lbp_config(cfg)) for i in range(stack.shape[0])]
        else:
            feats = [
                rdwt_haralick_features(stack[i].astype(np.float64), glcm_config(cfg))
                for i in range(stack.shape[0])
            ]
        out[ch.label] = np.stack(feats)
        frames = list(range(stack.shape[0]))
    return sample_path, frames, out


def cmd_extract(cfg: RunConfig, extractor: str, jobs: int = 1) -> None:
    if extractor not in EXTRACTORS:
        raise ValidationError(f"unknown extractor {extractor!r} (choose from {EXTRACTORS})")
    channels = _EXTRACTOR_CHANNELS[extractor]
    proc_manifest, protocol = _load_proc(cfg)
    raw_manifest = None
    if extractor == "iqm":
        raw_manifest = load_manifest(_require(data_root(cfg) / "manifest.csv", "raw manifest"))

    tasks = []
    metas = []
    for entry in proc_manifest:
        raw_path = raw_manifest.by_id(entry.sample_id).path if raw_manifest else None
        target_path = raw_path if extractor == "iqm" else entry.path
        tasks.append((cfg, extractor, str(target_path), str(raw_path) if raw_path else None, channels))
        metas.append(entry)

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_extract_one, tasks))
    else:
        results = [_extract_one(task) for task in tasks]

    out_dir = features_dir(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    for ch in channels:
        per_split: dict[str, tuple[list, list]] = {s: ([], []) for s in ("train", "dev", "eval")}
        for entry, (_, frames, features) in zip(metas, results):
            split = protocol.split_of(entry.sample_id)
            table, rows = per_split[split]
            table.append(features[ch.label])
            rows.extend((entry.sample_id, fidx) for fidx in frames)
        for split, (table, rows) in per_split.items():
            if not table:
                continue
            write_feature_table(
                feature_table_path(cfg, split, ch, extractor), np.concatenate(table), rows
            )
    write_lock(out_dir, cfg, f"extract:{extractor}")


# --------------------------------------------------------------------------
# baselines
# --------------------------------------------------------------------------

def _labels_for_rows(manifest: Manifest, rows: list[tuple[str, int]]) -> np.ndarray:
    lookup = {e.sample_id: (1 if e.meta.is_bonafide else 0) for e in manifest}
    return np.array([lookup[sid] for sid, _ in rows], dtype=np.int64)


def _entries_for_rows(manifest: Manifest, rows, scores) -> list[ScoreEntry]:
    lookup = {e.sample_id: e.meta for e in manifest}
    return [
        ScoreEntry(
            score=float(s),
            label=lookup[sid].label,
            attack_type=lookup[sid].attack_type,
            sample_id=sid,
            frame_idx=fidx,
            client_id=lookup[sid].client_id,
        )
        for (sid, fidx), s in zip(rows, scores)
    ]


def cmd_train_baseline(cfg: RunConfig, pipeline: str) -> Path:
    if pipeline not in PIPELINES:
        raise ValidationError(f"unknown pipeline {pipeline!r} (choose from {PIPELINES})")
    layout = _PIPELINE_LAYOUT[pipeline]
    manifest, _protocol = _load_proc(cfg)
    base_dir = out_root(cfg) / "baselines" / pipeline
    scores_dir = base_dir / "scores"
    models_dir = base_dir / "models"
    scores_dir.mkdir(parents=True, exist_ok=True)
    models_dir.mkdir(parents=True, exist_ok=True)

    fused: dict[str, dict[tuple[str, int], list[float]]] = {"dev": {}, "eval": {}}
    row_order: dict[str, list[tuple[str, int]]] = {}
    normalizer_info = {}
    for channel, extractor in layout["channels"]:
        tables = {}
        rows = {}
        for split in ("train", "dev", "eval"):
            path = _require(feature_table_path(cfg, split, channel, extractor), "feature table")
            tables[split], rows[split] = read_feature_table(path)
        y_train = _labels_for_rows(manifest, rows["train"])

        # Histogram features can carry dimensions the fit population never
        # touches; scale those by 1 instead of the floor (see standardize_fit).
        if layout["classifier"] == "lr":
            standardizer = classical.standardize_fit(
                tables["train"], y_train, classical.POP_BONAFIDE_ONLY, degenerate_scale=1.0
            )
            model = classical.lr_train(
                tables["train"], y_train,
                l2=cfg.classifiers.lr.l2,
                epochs=cfg.classifiers.lr.epochs,
                lr=cfg.classifiers.lr.learning_rate,
                standardizer=standardizer,
            )
            raw_scores = {s: classical.lr_score(model, tables[s]) for s in tables}
        else:
            standardizer = classical.standardize_fit(
                tables["train"], y_train, classical.POP_ALL, degenerate_scale=1.0
            )
            model = classical.svm_train(
                tables["train"], y_train,
                c=cfg.classifiers.svm.c,
                epochs=cfg.classifiers.svm.epochs,
                lr=cfg.classifiers.svm.learning_rate,
                standardizer=standardizer,
            )
            raw_scores = {s: classical.svm_score(model, tables[s]) for s in tables}
        classical.save_model(model, models_dir / f"{channel.label}.mclm")

        fit_scores = np.concatenate([raw_scores["train"], raw_scores["dev"]])
        normalizer = classical.score_normalize_fit(fit_scores)
        classical.save_model(normalizer, models_dir / f"{channel.label}.norm.mclm")
        normalizer_info[channel.label] = {"min": normalizer.lo, "max": normalizer.hi}

        for split in ("dev", "eval"):
            normalized = classical.score_normalize_apply(normalizer, raw_scores[split])
            entries = _entries_for_rows(manifest, rows[split], normalized)
            save_scores(entries, scores_dir / f"{channel.label}_{split}.csv")
            row_order.setdefault(split, rows[split])
            if rows[split] != row_order[split]:
                raise ValidationError("feature tables disagree on row order across channels")
            for key, score in zip(rows[split], normalized):
                fused[split].setdefault(key, []).append(float(score))

    for split in ("dev", "eval"):
        keys = row_order[split]
        fused_scores = [classical.fuse_mean(fused[split][key]) for key in keys]
        entries = _entries_for_rows(manifest, keys, fused_scores)
        save_scores(entries, scores_dir / f"fused_{split}.csv")

    info = {
        "pipeline": pipeline,
        "classifier": layout["classifier"],
        "channels": [ch.label for ch, _ in layout["channels"]],
        "normalizers": normalizer_info,
        "normalizer_fit": "train+dev",
    }
    tmp = base_dir / "pipeline.json.tmp"
    tmp.write_text(json.dumps(info, indent=1, sort_keys=True) + "\n")
    os.replace(tmp, base_dir / "pipeline.json")
    write_lock(base_dir, cfg, f"train-baseline:{pipeline}")
    return base_dir


# --------------------------------------------------------------------------
# MC-CNN
# --------------------------------------------------------------------------

@dataclass
class _SplitArrays:
    frames: dict[ChannelId, np.ndarray]
    labels: np.ndarray
    rows: list[tuple[str, int]]


def _split_arrays(
    cfg: RunConfig, manifest: Manifest, protocol: ProtocolSpec, channels, split: str
) -> _SplitArrays:
    stacks: dict[ChannelId, list[np.ndarray]] = {ch: [] for ch in channels}
    labels = []
    rows = []
    for entry in manifest:
        if protocol.split_of(entry.sample_id) != split:
            continue
        sample = read_sample(entry.path, meta=entry.meta)
        count = sample.frame_count(channels[0])
        for ch in channels:
            stacks[ch].append(mccnn.frames_to_input(sample.channels[ch]))
        labels.extend([1 if entry.meta.is_bonafide else 0] * count)
        rows.extend((entry.sample_id, i) for i in range(count))
    if not rows:
        raise ValidationError(f"split {split!r} is empty")
    return _SplitArrays(
        frames={ch: np.concatenate(stacks[ch]) for ch in channels},
        labels=np.array(labels, dtype=np.int64),
        rows=rows,
    )


def mccnn_run_label(net_cfg) -> str:
    """Self-describing output tag, e.g. ``GDIT_C1-B1`` or ``G_none``: channel
    initials plus the adapt set, so ablation runs share one output root."""
    channels = "".join(ch.label[0].upper() for ch in net_cfg.channels)
    adapt = "-".join(sorted(net_cfg.adapt)) if net_cfg.adapt else "none"
    return f"{channels}_{adapt}"


def mccnn_out_dir(cfg: RunConfig) -> Path:
    return out_root(cfg) / "mccnn" / mccnn_run_label(mccnn_config(cfg))


def cmd_train_mccnn(cfg: RunConfig) -> Path:
    manifest, protocol = _load_proc(cfg)
    net_cfg = mccnn_config(cfg)
    load_channels = tuple(dict.fromkeys((*net_cfg.channels, ChannelId.GRAY)))
    train_data = _split_arrays(cfg, manifest, protocol, load_channels, "train")
    dev_data = _split_arrays(cfg, manifest, protocol, load_channels, "dev")
    eval_data = _split_arrays(cfg, manifest, protocol, load_channels, "eval")

    if cfg.mccnn.pretrain:
        backbone, pretrain_losses = mccnn.pretrain_reference(
            train_data.frames[ChannelId.GRAY], train_data.labels, net_cfg
        )
    else:
        backbone, pretrain_losses = mccnn.init_backbone(net_cfg), []

    out = out_root(cfg) / "mccnn" / mccnn_run_label(net_cfg)
    out.mkdir(parents=True, exist_ok=True)
    init_model = mccnn.build_model(net_cfg, backbone)
    mccnn.save_model(init_model, out / "init.mcnn")

    result = mccnn.train(
        mccnn.TrainData(
            train_x={ch: train_data.frames[ch] for ch in net_cfg.channels},
            train_y=train_data.labels,
            dev_x={ch: dev_data.frames[ch] for ch in net_cfg.channels},
            dev_y=dev_data.labels,
        ),
        net_cfg,
        backbone,
    )
    mccnn.save_model(result.model, out / "model.mcnn")

    for split, data in (("dev", dev_data), ("eval", eval_data)):
        scores = mccnn.predict(result.model, {ch: data.frames[ch] for ch in net_cfg.channels})
        save_scores(_entries_for_rows(manifest, data.rows, scores), out / f"scores_{split}.csv")

    history_lines = ["epoch,train_loss,dev_acer,dev_tau"]
    for i, loss in enumerate(pretrain_losses):
        history_lines.append(f"pretrain_{i},{loss!r},,")
    for record in result.history:
        history_lines.append(
            f"{record['epoch']},{record['train_loss']!r},{record['dev_acer']!r},{record['dev_tau']!r}"
        )
    tmp = out / "history.csv.tmp"
    tmp.write_text("\n".join(history_lines) + "\n")
    os.replace(tmp, out / "history.csv")
    write_lock(out, cfg, "train-mccnn")
    return out


# --------------------------------------------------------------------------
# eval / report
# --------------------------------------------------------------------------

def cmd_eval(
    cfg: RunConfig,
    protocol_name: str,
    dev_scores_path: str | Path,
    eval_scores_path: str | Path,
    name: str | None = None,
) -> Path:
    dev_entries = load_scores(_require(Path(dev_scores_path), "dev score file"))
    eval_entries = load_scores(_require(Path(eval_scores_path), "eval score file"))
    report = build_report(dev_entries, eval_entries, cfg.protocol.bpcer_target, protocol_name)
    label = name or Path(dev_scores_path).stem.replace("_dev", "")
    out = out_root(cfg) / "eval" / f"{protocol_name}_{label}"
    out.mkdir(parents=True, exist_ok=True)
    write_report_json(report, out / "report.json")
    write_metrics_csv(report, out / "metrics.csv")
    write_per_pai_csv(report, out / "per_pai.csv")
    write_roc_csv(roc(eval_entries), out / "roc.csv")
    write_lock(out, cfg, f"eval:{protocol_name}:{label}")
    return out


def cmd_report(cfg: RunConfig) -> Path:
    eval_root = out_root(cfg) / "eval"
    _require(eval_root, "eval outputs")
    rows = []
    for metrics_file in sorted(eval_root.glob("*/metrics.csv")):
        experiment = metrics_file.parent.name
        with open(metrics_file, newline="") as fh:
            reader = csv.DictReader(fh)
            for line in reader:
                rows.append(
                    [experiment, line["split"], line["apcer"], line["bpcer"], line["acer"], line["threshold"]]
                )
    out = out_root(cfg) / "report"
    out.mkdir(parents=True, exist_ok=True)
    lines = ["experiment,split,apcer,bpcer,acer,threshold"]
    lines.extend(",".join(row) for row in rows)
    tmp = out / "summary.csv.tmp"
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, out / "summary.csv")
    write_lock(out, cfg, "report")
    return out / "summary.csv"
