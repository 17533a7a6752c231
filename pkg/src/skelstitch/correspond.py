"""Frame-correspondence distance and registration over a batch of clips."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Batch, class_subset
from .errors import EmptyCandidateSet, NoValidCorrespondence, TopologyMismatch, ValidationError

ZERO_EPS = 1e-12


@dataclass(frozen=True)
class CorrespondenceConfig:
    d_star: float = math.inf
    beta: float = 4.0

    def __post_init__(self):
        if not self.d_star >= 0:
            raise ValidationError(f"d_star must be >= 0, got {self.d_star}")
        if not self.beta >= 1:
            raise ValidationError(f"beta must be >= 1, got {self.beta}")


@dataclass(frozen=True)
class Match:
    clip_index: int
    frame_index: int
    distance: float


def _check_shapes(p, q):
    if p.shape[-2:] != q.shape[-2:]:
        raise TopologyMismatch(f"frame shapes differ: {p.shape[-2:]} vs {q.shape[-2:]}")


def joint_terms(p, q):
    """Per-joint (squared position difference, orientation term) for V x C frames.

    Broadcasts over leading axes. The orientation term is 0 where either
    joint vector has norm below 1e-12.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    _check_shapes(p, q)
    pos = np.sum((p - q) ** 2, axis=-1)
    np_ = np.linalg.norm(p, axis=-1)
    nq = np.linalg.norm(q, axis=-1)
    ok = (np_ >= ZERO_EPS) & (nq >= ZERO_EPS)
    # 1 - cos(p, q) == |p/|p| - q/|q||^2 / 2; this form is exactly 0 for p == q
    # and exactly symmetric, which the dot-product form is not
    pu = p / np.where(ok, np_, 1.0)[..., None]
    qu = q / np.where(ok, nq, 1.0)[..., None]
    orient = np.where(ok, 0.5 * np.sum((pu - qu) ** 2, axis=-1), 0.0)
    return pos, orient


def frame_distance(p, q) -> float:
    pos, orient = joint_terms(p, q)
    return float(np.sum(pos + orient))


def frame_distances(template, frames) -> np.ndarray:
    """Distance from one V x C template to each frame of a T x V x C block."""
    pos, orient = joint_terms(frames, np.asarray(template)[None])
    return np.sum(pos + orient, axis=-1)


def search_range(clip_length: int, beta: float) -> int:
    return max(1, int(math.floor(clip_length / beta)))


def _candidates(batch: Batch, k: int, exclude) -> list[int]:
    exclude = set(exclude or ())
    cand = [i for i in class_subset(batch, k) if i not in exclude]
    if not cand:
        raise EmptyCandidateSet(f"no clips of class {k} available")
    return cand


def _gate(best: Match, cfg: CorrespondenceConfig) -> Match:
    if best.distance > cfg.d_star:
        raise NoValidCorrespondence(best, cfg.d_star)
    return best


def register(template, batch: Batch, k: int, cfg: CorrespondenceConfig = CorrespondenceConfig(),
             exclude=()) -> Match:
    """Best (clip, frame) of class ``k`` for ``template``; ties go to smallest (i, t)."""
    template = np.asarray(template, dtype=np.float64)
    best = None
    for i in _candidates(batch, k, exclude):
        frames = batch[i].sequence.frames
        _check_shapes(template, frames)
        d = frame_distances(template, frames[:search_range(len(frames), cfg.beta)])
        # argmin returns the first minimum, so earliest t wins within a clip;
        # strict < keeps the earliest clip across clips
        t = int(np.argmin(d))
        if best is None or d[t] < best.distance:
            best = Match(i, t, float(d[t]))
    return _gate(best, cfg)


def register_oracle(template, batch: Batch, k: int, cfg: CorrespondenceConfig = CorrespondenceConfig(),
                    exclude=()) -> Match:
    """Unoptimised double loop over every admissible (i, t); reference for ``register``."""
    exclude = set(exclude or ())
    template = np.asarray(template, dtype=np.float64)
    best = None
    for i in range(len(batch)):
        if batch[i].label != k or i in exclude:
            continue
        frames = batch[i].sequence.frames
        T_star = max(1, int(math.floor(len(frames) / cfg.beta)))
        for t in range(T_star):
            d = 0.0
            for v in range(frames.shape[1]):
                a, b = template[v], frames[t, v]
                if a.shape != b.shape or frames.shape[1] != template.shape[0]:
                    raise TopologyMismatch("frame shapes differ")
                d += float(np.dot(a - b, a - b))
                na, nb = math.sqrt(float(np.dot(a, a))), math.sqrt(float(np.dot(b, b)))
                if na >= ZERO_EPS and nb >= ZERO_EPS:
                    d += max(1.0 - float(np.dot(a, b)) / (na * nb), 0.0)
            if best is None or d < best.distance:
                best = Match(i, t, d)
    if best is None:
        raise EmptyCandidateSet(f"no clips of class {k} available")
    return _gate(best, cfg)
