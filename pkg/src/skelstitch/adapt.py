"""Segmentation training drivers: supervised and zero-shot, linear or end-to-end."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (Batch, LabeledSegment, SkeletonSequence, TrimmedClip, UntrimmedSequence,
                   fmt_float)
from .errors import EmptyDataset, FormatError, LabelOutOfRange, ValidationError
from .learner import SGD, Encoder, SegmentationHead, SegmentationModel
from .metrics import Segment, argmax_labels, extract_segments
from .stitch import StitchConfig, derive_rng, expand_dataset

log = logging.getLogger(__name__)

MODES = ("linear", "e2e")
STRATEGIES = ("supervised", "zero_shot")


@dataclass(frozen=True)
class AdaptConfig:
    mode: str = "e2e"
    strategy: str = "supervised"
    epochs: int = 30
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    schedule: str = "cosine"  # or "constant"
    seed: int = 0
    # zero-shot data generation
    expand_count: int = 200
    n_min: int = 2
    n_max: int = 5
    stitch: StitchConfig = field(default_factory=StitchConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.schedule not in ("cosine", "constant"):
            raise ValidationError(f"unknown schedule {self.schedule!r}")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")

    def lr_at(self, epoch):
        if self.schedule == "constant" or self.epochs <= 1:
            return self.lr
        return 0.5 * self.lr * (1 + math.cos(math.pi * epoch / self.epochs))


@dataclass(frozen=True, eq=False)
class SegmentationResult:
    scores: np.ndarray          # T x K
    labels: np.ndarray          # T
    segments: tuple[Segment, ...]


def build_model(encoder: Encoder, classes: int, mode: str, seed=0) -> SegmentationModel:
    """Fresh head over a private copy of ``encoder``; E2E adds the dilated stage."""
    rng = np.random.default_rng(seed)
    head = SegmentationHead(encoder.out_dim, classes, temporal=(mode == "e2e"), rng=rng)
    return SegmentationModel(copy.deepcopy(encoder), head)


def train_segmentation(model: SegmentationModel, data, cfg: AdaptConfig = AdaptConfig(),
                       history=None) -> SegmentationModel:
    """Per-frame cross-entropy, one SGD step per sequence, seeded shuffling.

    In linear mode only the head is updated; encoder parameters are left
    untouched. ``history`` receives the mean loss of every epoch.
    """
    data = list(data)
    if not data:
        raise EmptyDataset("no training sequences")
    labels = []
    for n, u in enumerate(data):
        y = u.frame_labels()
        if y.min() < 0 or y.max() >= model.classes:
            raise LabelOutOfRange(f"sequence {n}: labels must lie in [0, {model.classes})")
        labels.append(y)
    train_encoder = cfg.mode == "e2e"
    params = list(model.head.named_parameters("head."))
    if train_encoder:
        params = list(model.encoder.named_parameters("encoder.")) + params
    opt = SGD(params, lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    rng = derive_rng(cfg.seed, 40_000)
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr_at(epoch)
        total = 0.0
        for n in rng.permutation(len(data)):
            model.zero_grad()
            total += model.loss_and_backward(data[n].sequence.frames, labels[n], train_encoder)
            opt.step()
        if history is not None:
            history.append(total / len(data))
    return model


def predict(model: SegmentationModel, seq) -> SegmentationResult:
    frames = seq.frames if isinstance(seq, SkeletonSequence) else np.asarray(seq)
    scores = model.proba(frames)
    labels = argmax_labels(scores)
    return SegmentationResult(scores, labels, tuple(extract_segments(labels, scores)))


def clip_as_untrimmed(clip: TrimmedClip) -> UntrimmedSequence:
    """Whole clip as one segment carrying the clip label."""
    return UntrimmedSequence(clip.sequence, (LabeledSegment(0, clip.sequence.length, clip.label),))


def baseline_trimmed_training(model: SegmentationModel, clips, cfg: AdaptConfig = AdaptConfig(),
                              history=None) -> SegmentationModel:
    return train_segmentation(model, [clip_as_untrimmed(c) for c in clips], cfg, history)


def zero_shot_data(batch: Batch, cfg: AdaptConfig):
    """Stitched training sequences from the trimmed source batch."""
    stitched = expand_dataset(batch, cfg.expand_count, cfg.n_min, cfg.n_max, cfg.stitch)
    return [r.sequence for r in stitched]


def adapt(encoder: Encoder, classes: int, cfg: AdaptConfig, source: Batch | None = None,
          target=None, history=None) -> SegmentationModel:
    """Run one adaptation strategy and return the trained model.

    zero_shot trains on sequences stitched from ``source`` and never looks at
    ``target``; supervised trains on the labelled untrimmed ``target`` list.
    """
    model = build_model(encoder, classes, cfg.mode, seed=cfg.seed)
    if cfg.strategy == "zero_shot":
        if source is None or len(source) == 0:
            raise EmptyDataset("zero-shot adaptation needs a trimmed source batch")
        data = zero_shot_data(source, cfg)
    else:
        if not target:
            raise EmptyDataset("supervised adaptation needs labelled target sequences")
        data = list(target)
    return train_segmentation(model, data, cfg, history)


# ---------------------------------------------------------------------------
# prediction files


def write_prediction(path, scores):
    scores = np.asarray(scores)
    lines = ["PRD 1", f"frames {scores.shape[0]}", f"classes {scores.shape[1]}"]
    lines += [" ".join(fmt_float(x) for x in row) for row in scores]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_prediction(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        lines = [l for l in fh.read().splitlines()]
    path = str(path)

    def header(n, key):
        toks = lines[n].split() if n < len(lines) else []
        if len(toks) != 2 or toks[0] != key:
            raise FormatError(f"expected '{key} <int>'", path, n + 1)
        try:
            return int(toks[1])
        except ValueError:
            raise FormatError(f"'{key}' needs an integer", path, n + 1) from None

    if not lines or lines[0].strip() != "PRD 1":
        raise FormatError("expected header 'PRD 1'", path, 1)
    T, K = header(1, "frames"), header(2, "classes")
    rows = lines[3:]
    rows = [r for r in rows if r.strip()]
    if len(rows) != T:
        raise FormatError(f"header declares {T} frames, found {len(rows)}", path, 4)
    out = np.empty((T, K))
    for t, r in enumerate(rows):
        vals = r.split()
        if len(vals) != K:
            raise FormatError(f"expected {K} probabilities", path, 4 + t)
        try:
            out[t] = [float(v) for v in vals]
        except ValueError:
            raise FormatError("probability parse failure", path, 4 + t) from None
    return out
