"""Synthetic skeleton actions: sinusoidal joint motions around one shared rest pose.

Every class moves its own joint group; all classes pass through the rest
pose at phase zero, so cross-class frame correspondences exist.
"""

from __future__ import annotations

import itertools
import os
from dataclasses import dataclass

import numpy as np

from .core import (Batch, Bone, LabelSpace, LabeledSegment, Permutation, SkeletonSequence,
                   Topology, TrimmedClip, UntrimmedSequence, write_clip, write_label_space,
                   write_topology, write_untrimmed)
from .errors import ValidationError
from .stitch import derive_rng

# spine(root), chest, head, l_elbow, l_hand, r_elbow, r_hand, l_foot, r_foot
REST_POSE = np.array([
    [0.0, 0.0, 0.0],
    [0.0, 0.5, 0.0],
    [0.0, 0.85, 0.0],
    [-0.35, 0.3, 0.0],
    [-0.55, -0.05, 0.0],
    [0.35, 0.3, 0.0],
    [0.55, -0.05, 0.0],
    [-0.2, -0.75, 0.0],
    [0.2, -0.75, 0.0],
])
TOY_EDGES = [(0, 1), (1, 2), (1, 3), (3, 4), (1, 5), (5, 6), (0, 7), (0, 8)]
JOINT_GROUPS = [(3, 4), (5, 6), (7, 8), (1, 2)]


def toy_topology(name="toy9") -> Topology:
    bones = tuple(Bone(p, c, float(np.linalg.norm(REST_POSE[c] - REST_POSE[p]))) for p, c in TOY_EDGES)
    return Topology(name, len(REST_POSE), 3, 0, bones)


def mean_bone_lengths(sequences, topology: Topology) -> dict[tuple[int, int], float]:
    """Dataset-mean bone lengths, for authoring reference lengths of a new topology."""
    sums = {(b.parent, b.child): 0.0 for b in topology.bones}
    n = 0
    for s in sequences:
        f = s.frames
        for b in topology.bones:
            sums[(b.parent, b.child)] += float(np.linalg.norm(f[:, b.child] - f[:, b.parent], axis=1).sum())
        n += len(f)
    return {k: v / n for k, v in sums.items()}


@dataclass(frozen=True, eq=False)
class MotionClass:
    class_id: int
    amplitude: np.ndarray  # V x C
    frequency: np.ndarray  # V, radians per frame
    phase: np.ndarray      # V

    def check(self, topology: Topology):
        limit = 0.5 * min(b.length for b in topology.bones)
        if np.max(np.linalg.norm(self.amplitude, axis=1)) >= limit:
            raise ValidationError(f"class {self.class_id}: amplitude must stay below {limit:.4g}")

    def displacement(self, t, start_phase=0.0):
        """Joint offsets from the rest pose at frame times ``t``."""
        t = np.asarray(t, dtype=np.float64)[:, None]
        arg = self.frequency[None] * t + self.phase[None] + start_phase
        return self.amplitude[None] * np.sin(arg)[..., None]


def motion_classes(n_classes, topology: Topology | None = None, seed=0, amplitude=0.8,
                   period=(14.0, 22.0)) -> list[MotionClass]:
    """Class k moves joint group k mod 4; ``amplitude`` is a fraction of the safe bound."""
    topology = topology or toy_topology()
    rng = derive_rng(seed, 10_000)
    limit = 0.5 * min(b.length for b in topology.bones)
    V, C = topology.joint_count, topology.dims
    out = []
    for k in range(n_classes):
        amp = np.zeros((V, C))
        freq = np.zeros(V)
        ph = np.zeros(V)
        group = JOINT_GROUPS[k % len(JOINT_GROUPS)]
        f = 2 * np.pi / rng.uniform(*period)
        for n, j in enumerate(group):
            d = rng.standard_normal(C)
            amp[j] = amplitude * limit * d / np.linalg.norm(d)
            freq[j] = f
            # 0 or pi keeps every joint at rest when the class phase is zero
            ph[j] = 0.0 if n == 0 else np.pi * int(rng.integers(2))
        mc = MotionClass(k, amp, freq, ph)
        mc.check(topology)
        out.append(mc)
    return out


def gen_clip(mc: MotionClass, topology: Topology, T: int, start_phase=0.0, noise_sigma=0.0,
             rng=None) -> TrimmedClip:
    if T < 1:
        raise ValidationError("clip length must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    frames = rest_pose(topology)[None] + mc.displacement(np.arange(T), start_phase)
    if noise_sigma:
        frames = frames + rng.normal(0.0, noise_sigma, frames.shape)
    return TrimmedClip(SkeletonSequence(topology, frames), mc.class_id)


def rest_pose(topology: Topology) -> np.ndarray:
    if topology.joint_count == len(REST_POSE) and topology.dims == 3:
        return REST_POSE
    # generic fallback: place joints along their bone tree
    pose = np.zeros((topology.joint_count, topology.dims))
    for n, b in enumerate(topology.bone_order()):
        d = np.zeros(topology.dims)
        d[n % topology.dims] = 1.0
        pose[b.child] = pose[b.parent] + b.length * d
    return pose


def _global_jitter(frames, rng, scale_range, offset_sigma):
    scale = rng.uniform(*scale_range)
    offset = rng.normal(0.0, offset_sigma, frames.shape[-1])
    return frames * scale + offset


@dataclass(frozen=True)
class SynthConfig:
    n_classes: int = 4
    clips_per_class: int = 20
    t_min: int = 20
    t_max: int = 60
    noise_sigma: float = 0.01
    scale_range: tuple[float, float] = (0.8, 1.2)
    offset_sigma: float = 0.5
    seed: int = 0


def gen_dataset(cfg: SynthConfig = SynthConfig(), out_dir=None, topology=None, classes=None):
    """Trimmed clips with random start phases, per-clip scale and offset.

    Returns ``(topology, label_space, batch)``; writes ``topology.skt``,
    ``labels.lbl`` and one ``clip_XXXX.skq`` per clip when ``out_dir`` is given.
    """
    topology = topology or toy_topology()
    classes = classes or motion_classes(cfg.n_classes, topology, cfg.seed)
    clips = []
    n = 0
    for mc in classes:
        for _ in range(cfg.clips_per_class):
            rng = derive_rng(cfg.seed, n)
            T = int(rng.integers(cfg.t_min, cfg.t_max + 1))
            clip = gen_clip(mc, topology, T, rng.uniform(0, 2 * np.pi), cfg.noise_sigma, rng)
            frames = _global_jitter(clip.sequence.frames, rng, cfg.scale_range, cfg.offset_sigma)
            clips.append(TrimmedClip(clip.sequence.with_frames(frames), mc.class_id))
            n += 1
    labels = LabelSpace(tuple(f"action{k}" for k in range(len(classes))))
    batch = Batch(clips)
    if out_dir is not None:
        write_dataset(out_dir, topology, labels, clips)
    return topology, labels, batch


def write_dataset(out_dir, topology, labels, items, prefix=None):
    os.makedirs(out_dir, exist_ok=True)
    write_topology(topology, os.path.join(out_dir, "topology.skt"))
    write_label_space(labels, os.path.join(out_dir, "labels.lbl"))
    for n, item in enumerate(items):
        if isinstance(item, TrimmedClip):
            write_clip(item, os.path.join(out_dir, f"{prefix or 'clip'}_{n:04d}.skq"))
        else:
            write_untrimmed(item, os.path.join(out_dir, f"{prefix or 'seq'}_{n:04d}.skq"))


def all_permutations(n_classes, length) -> list[Permutation]:
    """Every adjacent-distinct label sequence of the given length, in lexicographic order."""
    out = []
    for labels in itertools.product(range(n_classes), repeat=length):
        if all(a != b for a, b in zip(labels, labels[1:])):
            out.append(Permutation(labels))
    return out


def split_permutations(perms, n_train, n_test, seed=0):
    """Disjoint train / test permutation sets drawn without replacement."""
    if n_train + n_test > len(perms):
        raise ValidationError(f"only {len(perms)} permutations for {n_train}+{n_test} requested")
    order = derive_rng(seed, 20_000).permutation(len(perms))
    return [perms[i] for i in order[:n_train]], [perms[i] for i in order[n_train:n_train + n_test]]


def _half_period_duration(target, freq):
    m = max(1, int(round(target * freq / np.pi)))
    return max(1, int(round(m * np.pi / freq)))


def gen_untrimmed(classes, sequences, n_min=2, n_max=4, seed=0, topology=None,
                  permutations=None, t_min=20, t_max=60, noise_sigma=0.01,
                  scale_range=(0.8, 1.2), offset_sigma=0.5, out_dir=None):
    """Continuous multi-action sequences with exact frame labels.

    Each segment starts at phase zero (the rest pose) and lasts a whole number
    of half periods, so consecutive actions meet near the rest pose. With
    ``permutations`` given, each sequence uses one of them (cycled in order).
    """
    topology = topology or toy_topology()
    K = len(classes)
    out = []
    for s in range(sequences):
        rng = derive_rng(seed, 30_000 + s)
        if permutations:
            perm = permutations[s % len(permutations)]
        else:
            from .stitch import random_permutation
            perm = random_permutation(range(K), n_min, n_max, rng)
        parts, segments, start = [], [], 0
        for k in perm:
            mc = classes[k]
            T = _half_period_duration(rng.uniform(t_min, t_max), mc.frequency.max())
            parts.append(mc.displacement(np.arange(T, dtype=np.float64)))
            segments.append(LabeledSegment(start, start + T, k))
            start += T
        frames = rest_pose(topology)[None] + np.concatenate(parts)
        if noise_sigma:
            frames = frames + rng.normal(0.0, noise_sigma, frames.shape)
        frames = _global_jitter(frames, rng, scale_range, offset_sigma)
        out.append(UntrimmedSequence(SkeletonSequence(topology, frames), tuple(segments)))
    if out_dir is not None:
        labels = LabelSpace(tuple(f"action{k}" for k in range(K)))
        write_dataset(out_dir, topology, labels, out)
    return out


def boundary_jumps(seq: UntrimmedSequence):
    """(max joint jump across segment boundaries, max jump inside segments)."""
    f = seq.sequence.frames
    jumps = np.linalg.norm(np.diff(f, axis=0), axis=-1).max(axis=1)
    cut = np.zeros(len(jumps), dtype=bool)
    for s in seq.segments[1:]:
        cut[s.start - 1] = True
    b = float(jumps[cut].max()) if cut.any() else 0.0
    w = float(jumps[~cut].max()) if (~cut).any() else 0.0
    return b, w
