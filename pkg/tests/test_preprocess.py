import numpy as np
import pytest

from skelstitch.core import Bone, SkeletonSequence, Topology
from skelstitch.errors import DegenerateBone
from skelstitch.preprocess import normalize_bones, preprocess, spine_center

from conftest import random_frames


def bone_lengths(frames, topology):
    return np.stack([np.linalg.norm(frames[:, b.child] - frames[:, b.parent], axis=1) for b in topology.bones], 1)


def test_spine_center_example():
    top = Topology("two", 2, 3, 0, (Bone(0, 1, 1.0),))
    out = spine_center(SkeletonSequence(top, [[[1, 2, 3], [4, 2, 3]]]))
    assert np.array_equal(out.frames[0], [[0, 0, 0], [3, 0, 0]])


def test_spine_center_preserves_differences(chain5, rng):
    seq = SkeletonSequence(chain5, random_frames(rng, chain5, 10))
    out = spine_center(seq)
    assert np.all(out.frames[:, 0] == 0.0)
    d_in = seq.frames[:, :, None] - seq.frames[:, None]
    d_out = out.frames[:, :, None] - out.frames[:, None]
    assert np.max(np.abs(d_in - d_out)) < 1e-12
    assert np.array_equal(spine_center(out).frames, out.frames)


def test_normalize_scalar_rescale():
    top = Topology("two", 2, 3, 0, (Bone(0, 1, 1.0),))
    out = normalize_bones(SkeletonSequence(top, [[[0, 0, 0], [3, 0, 0]]]))
    assert np.allclose(out.frames[0, 1], [1, 0, 0], atol=0)


def test_normalize_lengths_and_directions(chain5, rng):
    seq = spine_center(SkeletonSequence(chain5, random_frames(rng, chain5, 7)))
    out = normalize_bones(seq)
    ref = np.array([b.length for b in chain5.bones])
    assert np.max(np.abs(bone_lengths(out.frames, chain5) - ref)) < 1e-9
    for b in chain5.bones:
        u = seq.frames[:, b.child] - seq.frames[:, b.parent]
        v = out.frames[:, b.child] - out.frames[:, b.parent]
        cos = np.sum(u * v, 1) / np.linalg.norm(u, axis=1) / np.linalg.norm(v, axis=1)
        assert np.max(np.abs(cos - 1)) < 1e-9


def test_degenerate_bone(chain5, rng):
    f = random_frames(rng, chain5, 4)
    f[2, 2] = f[2, 1]
    with pytest.raises(DegenerateBone) as e:
        preprocess(SkeletonSequence(chain5, f))
    assert (e.value.parent, e.value.child, e.value.frame) == (1, 2, 2)


def test_translation_invariance_exact(chain5, rng):
    f = random_frames(rng, chain5, 6)
    off = rng.normal(0, 5, (6, 1, 3))
    # power-of-two offsets keep the subtraction exact
    off = np.round(off * 4) / 4
    a = preprocess(SkeletonSequence(chain5, f)).frames
    b = preprocess(SkeletonSequence(chain5, f + off)).frames
    assert np.max(np.abs(a - b)) < 1e-12


@pytest.mark.parametrize("alpha", [0.5, 2.0, 10.0])
def test_scale_invariance(toy, rng, alpha):
    f = random_frames(rng, toy, 8)
    a = preprocess(SkeletonSequence(toy, f)).frames
    b = preprocess(SkeletonSequence(toy, alpha * f)).frames
    assert np.max(np.abs(a - b)) < 1e-9


def test_idempotence(toy, rng):
    once = preprocess(SkeletonSequence(toy, random_frames(rng, toy, 8)))
    twice = preprocess(once)
    assert np.max(np.abs(once.frames - twice.frames)) < 1e-9
