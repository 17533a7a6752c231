"""Skeleton stitching: build multi-action sequences from trimmed clips.

Each step after the first takes the last frame of the sequence so far as
a template, registers its best correspondence among clips of the next
class, and appends that clip cropped to start at the matched frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (Batch, LabeledSegment, Permutation, SkeletonSequence, UntrimmedSequence,
                   class_subset)
from .correspond import CorrespondenceConfig, frame_distance, register
from .errors import (EmptyCandidateSet, ExhaustedCandidates, ImpossibleConstraint,
                     NoValidCorrespondence, ValidationError)


@dataclass(frozen=True)
class StitchConfig:
    correspondence: CorrespondenceConfig = field(default_factory=CorrespondenceConfig)
    without_replacement: bool = True
    # reuse clips once a class subset is drained instead of raising
    reuse_when_exhausted: bool = False
    rng_seed: int = 0


@dataclass(frozen=True, eq=False)
class StitchResult:
    sequence: UntrimmedSequence
    provenance: tuple[tuple[int, int], ...]  # (source clip, crop start) per segment
    boundary_distances: tuple[float, ...]    # d(template, first appended frame), one per boundary

    @property
    def permutation(self) -> Permutation:
        return self.sequence.permutation


def derive_rng(seed: int, index: int | None = None) -> np.random.Generator:
    entropy = [int(seed)] if index is None else [int(seed), int(index)]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def _check_perm(batch: Batch, perm) -> Permutation:
    perm = perm if isinstance(perm, Permutation) else Permutation(tuple(perm))
    for k in set(perm.labels):
        if not class_subset(batch, k):
            raise EmptyCandidateSet(f"no clips of class {k} in batch")
    return perm


def _pool(batch, k, used, cfg: StitchConfig, step):
    subset = class_subset(batch, k)
    if not cfg.without_replacement:
        return subset, set()
    free = [i for i in subset if i not in used]
    if free:
        return free, used
    if cfg.reuse_when_exhausted:
        return subset, set()
    raise ExhaustedCandidates(f"step {step}: every clip of class {k} is already used")


def _assemble(batch, perm, picks, distances) -> StitchResult:
    parts, segments, start = [], [], 0
    for (i, t), k in zip(picks, perm.labels):
        frames = batch[i].sequence.frames[t:]
        parts.append(frames)
        segments.append(LabeledSegment(start, start + len(frames), k))
        start += len(frames)
    seq = SkeletonSequence(batch.topology, np.concatenate(parts, axis=0))
    return StitchResult(UntrimmedSequence(seq, tuple(segments)), tuple(picks), tuple(distances))


def stitch(batch: Batch, perm, cfg: StitchConfig = StitchConfig(), rng=None) -> StitchResult:
    perm = _check_perm(batch, perm)
    rng = derive_rng(cfg.rng_seed) if rng is None else rng
    used: set[int] = set()

    first = class_subset(batch, perm[0])
    i0 = first[int(rng.integers(len(first)))]
    picks, distances = [(i0, 0)], []
    used.add(i0)
    template = batch[i0].sequence.frames[-1]
    for n in range(1, len(perm)):
        k = perm[n]
        _, exclude = _pool(batch, k, used, cfg, n + 1)
        try:
            m = register(template, batch, k, cfg.correspondence, exclude=exclude)
        except NoValidCorrespondence as e:
            raise NoValidCorrespondence(e.best, e.d_star, step=n + 1) from None
        picks.append((m.clip_index, m.frame_index))
        distances.append(m.distance)
        used.add(m.clip_index)
        template = batch[m.clip_index].sequence.frames[-1]
    return _assemble(batch, perm, picks, distances)


def random_concat(batch: Batch, perm, rng=None, cfg: StitchConfig = StitchConfig()) -> StitchResult:
    """Uniform clip choice per step and no cropping; the no-correspondence control."""
    perm = _check_perm(batch, perm)
    rng = derive_rng(cfg.rng_seed) if rng is None else rng
    used: set[int] = set()
    picks, distances = [], []
    for n, k in enumerate(perm.labels):
        pool, _ = _pool(batch, k, used, cfg, n + 1)
        i = pool[int(rng.integers(len(pool)))]
        if picks:
            prev = batch[picks[-1][0]].sequence.frames[-1]
            distances.append(frame_distance(prev, batch[i].sequence.frames[0]))
        picks.append((i, 0))
        used.add(i)
    return _assemble(batch, perm, picks, distances)


def random_permutation(classes, n_min: int, n_max: int, rng) -> Permutation:
    classes = list(classes)
    if n_min < 1 or n_max < n_min:
        raise ValidationError(f"need 1 <= n_min <= n_max, got {n_min}, {n_max}")
    if not classes:
        raise ImpossibleConstraint("no classes to sample from")
    n = int(rng.integers(n_min, n_max + 1))
    if n > 1 and len(set(classes)) < 2:
        raise ImpossibleConstraint(f"a length-{n} permutation needs at least two classes")
    labels = [classes[int(rng.integers(len(classes)))]]
    for _ in range(n - 1):
        choices = [c for c in classes if c != labels[-1]]
        labels.append(choices[int(rng.integers(len(choices)))])
    return Permutation(tuple(labels))


def expand_dataset(batch: Batch, count: int, n_min: int, n_max: int,
                   cfg: StitchConfig = StitchConfig(), classes=None) -> list[StitchResult]:
    """``count`` stitched sequences; sequence ``s`` uses an RNG derived from (seed, s)."""
    classes = batch.classes if classes is None else list(classes)
    out = []
    for s in range(count):
        rng = derive_rng(cfg.rng_seed, s)
        perm = random_permutation(classes, n_min, n_max, rng)
        out.append(stitch(batch, perm, cfg, rng=rng))
    return out


def manifest_line(filename: str, result: StitchResult) -> str:
    pairs = " ".join(f"{i}:{t}" for i, t in result.provenance)
    return f"{filename} {result.permutation} {pairs}"
