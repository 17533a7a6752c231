"""View and scale normalisation: spine-centring, then bone-length normalisation."""

import numpy as np

from .core import SkeletonSequence
from .errors import DegenerateBone

DEGENERATE_EPS = 1e-12


def spine_center(seq: SkeletonSequence) -> SkeletonSequence:
    """Subtract the root-joint trajectory from every joint."""
    f = seq.frames
    out = f - f[:, seq.topology.root:seq.topology.root + 1, :]
    out[:, seq.topology.root, :] = 0.0
    return seq.with_frames(out)


def normalize_bones(seq: SkeletonSequence) -> SkeletonSequence:
    """Forward-kinematics rescale so every bone has its reference length.

    Bones are visited parents-first; each child is re-placed at its
    (already re-placed) parent plus the unit bone direction times the
    reference length. Directions are taken from the input pose.
    """
    top = seq.topology
    f = seq.frames
    out = np.zeros_like(f)
    out[:, top.root] = f[:, top.root]
    for b in top.bone_order():
        vec = f[:, b.child] - f[:, b.parent]
        norm = np.linalg.norm(vec, axis=1)
        bad = np.flatnonzero(norm < DEGENERATE_EPS)
        if bad.size:
            raise DegenerateBone(b.parent, b.child, int(bad[0]))
        out[:, b.child] = out[:, b.parent] + vec * (b.length / norm)[:, None]
    return seq.with_frames(out)


def preprocess(seq: SkeletonSequence) -> SkeletonSequence:
    return normalize_bones(spine_center(seq))
