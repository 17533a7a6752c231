"""Domain types and the SKT / SKQ / label-space text formats.

Frame ranges are 0-based half-open ``[start, end)`` everywhere.
"""

from __future__ import annotations

import os
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, TilingViolation, ValidationError, AdjacentDuplicateLabels

# 17 significant digits round-trips any float64 exactly.
FLOAT_FMT = ".17g"


def fmt_float(x: float) -> str:
    return format(float(x), FLOAT_FMT)


@dataclass(frozen=True)
class Bone:
    parent: int
    child: int
    length: float


@dataclass(frozen=True)
class Topology:
    name: str
    joint_count: int
    dims: int
    root: int
    bones: tuple[Bone, ...]

    def __post_init__(self):
        object.__setattr__(self, "bones", tuple(Bone(int(b[0]), int(b[1]), float(b[2]))
                                                if not isinstance(b, Bone) else b
                                                for b in self.bones))
        V = self.joint_count
        if V < 1:
            raise ValidationError("topology needs at least one joint")
        if self.dims not in (2, 3):
            raise ValidationError(f"dims must be 2 or 3, got {self.dims}")
        if not 0 <= self.root < V:
            raise ValidationError(f"root {self.root} out of range for {V} joints")
        if len(self.bones) != V - 1:
            raise ValidationError(f"expected {V - 1} bones, got {len(self.bones)}")
        parents = {}
        for b in self.bones:
            if not (0 <= b.parent < V and 0 <= b.child < V):
                raise ValidationError(f"bone ({b.parent},{b.child}) references a missing joint")
            if not b.length > 0:
                raise ValidationError(f"bone ({b.parent},{b.child}) needs a positive reference length")
            if b.child == self.root:
                raise ValidationError("the root joint cannot be a bone child")
            if b.child in parents:
                raise ValidationError(f"joint {b.child} has more than one parent")
            parents[b.child] = b.parent
        # every joint must reach the root, which also rules out cycles
        if len(self.bone_order()) != V - 1:
            raise ValidationError("bones do not form a spanning tree rooted at the root joint")

    def bone_order(self) -> list[Bone]:
        """Bones in breadth-first order from the root (parents before children)."""
        children: dict[int, list[Bone]] = {}
        for b in self.bones:
            children.setdefault(b.parent, []).append(b)
        order, queue = [], deque([self.root])
        while queue:
            j = queue.popleft()
            for b in children.get(j, []):
                order.append(b)
                queue.append(b.child)
        return order

    @property
    def reference_lengths(self) -> dict[tuple[int, int], float]:
        return {(b.parent, b.child): b.length for b in self.bones}


@dataclass(frozen=True, eq=False)
class SkeletonSequence:
    topology: Topology
    frames: np.ndarray

    def __post_init__(self):
        frames = np.array(self.frames, dtype=np.float64)
        if frames.ndim == 2:
            frames = frames[None]
        top = self.topology
        if frames.ndim != 3 or frames.shape[0] < 1:
            raise ValidationError(f"frames must be T x V x C with T >= 1, got shape {frames.shape}")
        if frames.shape[1:] != (top.joint_count, top.dims):
            raise ValidationError(
                f"frame shape {frames.shape[1:]} does not match topology "
                f"{top.name!r} ({top.joint_count} x {top.dims})")
        if not np.all(np.isfinite(frames)):
            raise ValidationError("non-finite joint coordinate")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    def __len__(self):
        return self.length

    def crop(self, start: int, end: int | None = None) -> "SkeletonSequence":
        return SkeletonSequence(self.topology, self.frames[start:end])

    def with_frames(self, frames) -> "SkeletonSequence":
        return SkeletonSequence(self.topology, frames)


@dataclass(frozen=True, eq=False)
class TrimmedClip:
    sequence: SkeletonSequence
    label: int

    def __post_init__(self):
        if int(self.label) < 0:
            raise ValidationError(f"negative class id {self.label}")
        object.__setattr__(self, "label", int(self.label))

    def __len__(self):
        return self.sequence.length


@dataclass(frozen=True)
class LabeledSegment:
    start: int
    end: int
    label: int

    @property
    def length(self) -> int:
        return self.end - self.start


def check_tiling(segments: Sequence[LabeledSegment], T: int, distinct_neighbours=True):
    """Raise TilingViolation unless ``segments`` tile ``[0, T)`` exactly."""
    if not segments:
        raise TilingViolation("no segments")
    expected = 0
    for n, s in enumerate(segments):
        if s.start != expected:
            kind = "gap" if s.start > expected else "overlap"
            raise TilingViolation(f"{kind} before segment {n}: starts at {s.start}, expected {expected}")
        if s.end <= s.start:
            raise TilingViolation(f"segment {n} is empty or reversed: [{s.start}, {s.end})")
        if distinct_neighbours and n > 0 and segments[n - 1].label == s.label:
            raise TilingViolation(f"segments {n - 1} and {n} share label {s.label}")
        expected = s.end
    if expected != T:
        raise TilingViolation(f"segments end at {expected}, sequence has {T} frames")


@dataclass(frozen=True, eq=False)
class UntrimmedSequence:
    sequence: SkeletonSequence
    segments: tuple[LabeledSegment, ...]

    def __post_init__(self):
        segs = tuple(s if isinstance(s, LabeledSegment) else LabeledSegment(*map(int, s))
                     for s in self.segments)
        check_tiling(segs, self.sequence.length)
        object.__setattr__(self, "segments", segs)

    @property
    def permutation(self) -> "Permutation":
        return Permutation(tuple(s.label for s in self.segments))

    def frame_labels(self) -> np.ndarray:
        return segments_to_labels(self.segments)

    def __len__(self):
        return self.sequence.length


def segments_to_labels(segments: Iterable[LabeledSegment]) -> np.ndarray:
    return np.concatenate([np.full(s.end - s.start, s.label, dtype=np.int64) for s in segments])


def labels_to_segments(labels) -> list[LabeledSegment]:
    """Maximal constant-label runs of a frame-label vector."""
    labels = np.asarray(labels)
    if labels.size == 0:
        return []
    cuts = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    starts = np.concatenate([[0], cuts])
    ends = np.concatenate([cuts, [labels.size]])
    return [LabeledSegment(int(s), int(e), int(labels[s])) for s, e in zip(starts, ends)]


@dataclass(frozen=True)
class Permutation:
    labels: tuple[int, ...]

    def __post_init__(self):
        labels = tuple(int(x) for x in self.labels)
        if not labels:
            raise ValidationError("a permutation needs at least one label")
        for a, b in zip(labels, labels[1:]):
            if a == b:
                raise AdjacentDuplicateLabels(f"adjacent duplicate label {a} in {labels}")
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def __getitem__(self, n):
        return self.labels[n]

    def __str__(self):
        return ",".join(map(str, self.labels))

    @classmethod
    def parse(cls, text: str) -> "Permutation":
        return cls(tuple(int(x) for x in text.split(",") if x.strip()))


class Batch:
    """Indexed collection of labelled trimmed clips."""

    def __init__(self, clips: Iterable[TrimmedClip]):
        self.clips: tuple[TrimmedClip, ...] = tuple(clips)
        tops = {c.sequence.topology for c in self.clips}
        if len(tops) > 1:
            raise ValidationError("all clips in a batch must share one topology")
        self.labels = np.array([c.label for c in self.clips], dtype=np.int64)

    def __len__(self):
        return len(self.clips)

    def __getitem__(self, i) -> TrimmedClip:
        return self.clips[i]

    def __iter__(self):
        return iter(self.clips)

    @property
    def classes(self) -> list[int]:
        return sorted(set(self.labels.tolist()))

    @property
    def topology(self) -> Topology | None:
        return self.clips[0].sequence.topology if self.clips else None


def class_subset(batch: Batch, k: int) -> list[int]:
    """Indices of the clips labelled ``k``, ascending."""
    return [i for i, c in enumerate(batch.clips) if c.label == k]


@dataclass(frozen=True)
class LabelSpace:
    names: tuple[str, ...]
    background: int | None = None

    @property
    def K(self) -> int:
        return len(self.names)

    def __post_init__(self):
        if self.background is not None and not 0 <= self.background < len(self.names):
            raise ValidationError(f"background id {self.background} outside [0, {len(self.names)})")


# ---------------------------------------------------------------------------
# text I/O


class _Lines:
    """Line cursor that reports 1-based line numbers in errors."""

    def __init__(self, path):
        self.path = str(path)
        with open(path, "r", encoding="utf-8") as fh:
            self.lines = fh.read().splitlines()
        self.pos = 0

    def error(self, msg, line=None):
        return FormatError(msg, self.path, self.pos if line is None else line)

    def next(self, what) -> list[str]:
        while self.pos < len(self.lines):
            raw = self.lines[self.pos]
            self.pos += 1
            if raw.strip():
                return raw.split()
        raise FormatError(f"unexpected end of file, expected {what}", self.path, self.pos + 1)

    def keyword(self, key, nvals=1) -> list[str]:
        toks = self.next(key)
        if toks[0] != key or len(toks) != nvals + 1:
            raise self.error(f"expected '{key}' with {nvals} value(s), got {' '.join(toks)!r}")
        return toks[1:]

    def integer(self, key) -> int:
        (v,) = self.keyword(key)
        try:
            return int(v)
        except ValueError:
            raise self.error(f"'{key}' needs an integer, got {v!r}") from None

    def remaining(self) -> list[tuple[int, str]]:
        return [(n + 1, l) for n, l in enumerate(self.lines[self.pos:], start=self.pos) if l.strip()]


def write_topology(top: Topology, path):
    out = ["SKT 1", f"name {top.name}", f"joints {top.joint_count}", f"dims {top.dims}",
           f"root {top.root}", f"bones {len(top.bones)}"]
    out += [f"{b.parent} {b.child} {fmt_float(b.length)}" for b in top.bones]
    _write(path, out)


def read_topology(path) -> Topology:
    r = _Lines(path)
    if r.next("header") != ["SKT", "1"]:
        raise r.error("expected header 'SKT 1'")
    (name,) = r.keyword("name")
    V, C, root, nb = (r.integer(k) for k in ("joints", "dims", "root", "bones"))
    bones = []
    for _ in range(nb):
        toks = r.next("bone")
        try:
            bones.append(Bone(int(toks[0]), int(toks[1]), float(toks[2])))
        except (ValueError, IndexError):
            raise r.error(f"bad bone record {' '.join(toks)!r}") from None
    try:
        return Topology(name, V, C, root, tuple(bones))
    except ValidationError as e:
        raise FormatError(str(e), str(path)) from None


def write_label_space(ls: LabelSpace, path):
    out = ["LBL 1", f"classes {ls.K}",
           f"background {'none' if ls.background is None else ls.background}"]
    out += [f"{k} {name}" for k, name in enumerate(ls.names)]
    _write(path, out)


def read_label_space(path) -> LabelSpace:
    r = _Lines(path)
    if r.next("header") != ["LBL", "1"]:
        raise r.error("expected header 'LBL 1'")
    K = r.integer("classes")
    (bg,) = r.keyword("background")
    names = []
    for k in range(K):
        toks = r.next("class")
        if len(toks) != 2 or toks[0] != str(k):
            raise r.error(f"expected '{k} <name>'")
        names.append(toks[1])
    return LabelSpace(tuple(names), None if bg == "none" else int(bg))


def _frame_rows(frames: np.ndarray) -> list[str]:
    T = frames.shape[0]
    flat = frames.reshape(T, -1)
    return [" ".join(fmt_float(x) for x in row) for row in flat]


def _write(path, lines):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_clip(clip: TrimmedClip, path):
    seq = clip.sequence
    out = ["SKQ 1", f"topology {seq.topology.name}", f"frames {seq.length}", f"label {clip.label}"]
    _write(path, out + _frame_rows(seq.frames))


def write_untrimmed(seq: UntrimmedSequence, path):
    s = seq.sequence
    out = ["SKQ 1", f"topology {s.topology.name}", f"frames {s.length}",
           f"segments {len(seq.segments)}"]
    out += [f"{g.start} {g.end} {g.label}" for g in seq.segments]
    _write(path, out + _frame_rows(s.frames))


def _resolve_topology(r: _Lines, name, topologies) -> Topology:
    if isinstance(topologies, Topology):
        topologies = {topologies.name: topologies}
    try:
        return topologies[name]
    except KeyError:
        raise r.error(f"unknown topology {name!r}") from None


def read_sequence(path, topologies) -> TrimmedClip | UntrimmedSequence:
    """Parse an SKQ file; returns a clip or an untrimmed sequence per its header."""
    r = _Lines(path)
    if r.next("header") != ["SKQ", "1"]:
        raise r.error("expected header 'SKQ 1'")
    (name,) = r.keyword("topology")
    top = _resolve_topology(r, name, topologies)
    T = r.integer("frames")
    if T < 1:
        raise r.error("frame count must be at least 1")
    toks = r.next("'label' or 'segments'")
    label, segments = None, None
    if toks[0] == "label" and len(toks) == 2:
        label = _int(r, toks[1])
    elif toks[0] == "segments" and len(toks) == 2:
        segments = []
        for _ in range(_int(r, toks[1])):
            st = r.next("segment")
            if len(st) != 3:
                raise r.error("segment record needs '<start> <end> <label>'")
            segments.append(LabeledSegment(*(_int(r, x) for x in st)))
    else:
        raise r.error(f"expected 'label <id>' or 'segments <N>', got {' '.join(toks)!r}")

    rows = r.remaining()
    if len(rows) != T:
        # reported at the first line of the frame block
        line = rows[0][0] if rows else r.pos + 1
        raise FormatError(f"header declares {T} frames, found {len(rows)}", r.path, line)
    width = top.joint_count * top.dims
    frames = np.empty((T, width))
    for t, (lineno, text) in enumerate(rows):
        vals = text.split()
        if len(vals) != width:
            raise FormatError(f"expected {width} coordinates, got {len(vals)}", r.path, lineno)
        try:
            frames[t] = [float(v) for v in vals]
        except ValueError:
            raise FormatError("coordinate parse failure", r.path, lineno) from None
        if not np.all(np.isfinite(frames[t])):
            raise FormatError("non-finite coordinate", r.path, lineno)
    seq = SkeletonSequence(top, frames.reshape(T, top.joint_count, top.dims))
    if label is not None:
        return TrimmedClip(seq, label)
    try:
        return UntrimmedSequence(seq, tuple(segments))
    except TilingViolation as e:
        raise TilingViolation(f"{r.path}: {e}") from None


def _int(r, tok):
    try:
        return int(tok)
    except ValueError:
        raise r.error(f"expected an integer, got {tok!r}") from None


def read_clip(path, topologies) -> TrimmedClip:
    obj = read_sequence(path, topologies)
    if not isinstance(obj, TrimmedClip):
        raise FormatError("expected a trimmed clip (label header), found segments", str(path), 4)
    return obj


def read_untrimmed(path, topologies) -> UntrimmedSequence:
    obj = read_sequence(path, topologies)
    if not isinstance(obj, UntrimmedSequence):
        raise FormatError("expected an untrimmed sequence (segments header), found label", str(path), 4)
    return obj


def skq_files(directory) -> list[str]:
    return sorted(os.path.join(directory, f) for f in os.listdir(directory) if f.endswith(".skq"))


def load_batch(directory, topologies) -> Batch:
    """Every trimmed ``*.skq`` clip in a directory, in filename order."""
    return Batch(read_clip(p, topologies) for p in skq_files(directory))
