import numpy as np
import pytest

from skelstitch import synth
from skelstitch.core import load_batch, read_label_space, read_topology, read_untrimmed, skq_files
from skelstitch.correspond import frame_distances
from skelstitch.errors import ValidationError
from skelstitch.preprocess import preprocess


def test_zero_amplitude_is_rest_pose(toy):
    mc = synth.MotionClass(0, np.zeros((9, 3)), np.ones(9), np.zeros(9))
    clip = synth.gen_clip(mc, toy, 5)
    assert np.array_equal(clip.sequence.frames, np.repeat(synth.REST_POSE[None], 5, 0))


def test_clip_determinism(toy):
    mc = synth.motion_classes(2, toy, 0)[1]
    a = synth.gen_clip(mc, toy, 12, 0.3, 0.01, np.random.default_rng(4))
    b = synth.gen_clip(mc, toy, 12, 0.3, 0.01, np.random.default_rng(4))
    assert np.array_equal(a.sequence.frames, b.sequence.frames)


def test_amplitude_bound(toy):
    with pytest.raises(ValidationError):
        synth.MotionClass(0, np.full((9, 3), 1.0), np.ones(9), np.zeros(9)).check(toy)
    for mc in synth.motion_classes(8, toy, 3):
        mc.check(toy)


def test_same_class_closer_than_other_class(toy):
    classes = synth.motion_classes(4, toy, 0)

    def min_dist(a, b):
        fa = preprocess(a.sequence).frames
        fb = preprocess(b.sequence).frames
        return min(frame_distances(f, fb).min() for f in fa)

    a1 = synth.gen_clip(classes[0], toy, 30, 0.0)
    a2 = synth.gen_clip(classes[0], toy, 30, 0.7)
    b = synth.gen_clip(classes[1], toy, 30, 0.7)
    assert min_dist(a1, a2) < min_dist(a1, b)


def test_dataset_files(tmp_path):
    cfg = synth.SynthConfig(n_classes=3, clips_per_class=4, t_min=5, t_max=9, seed=2)
    top, labels, batch = synth.gen_dataset(cfg, tmp_path)
    assert len(batch) == 12 and labels.K == 3
    assert all(5 <= len(c) <= 9 for c in batch)
    assert read_topology(tmp_path / "topology.skt") == top
    assert read_label_space(tmp_path / "labels.lbl") == labels
    back = load_batch(tmp_path, top)
    for a, b in zip(batch, back):
        assert a.label == b.label
        assert np.array_equal(a.sequence.frames, b.sequence.frames)
    _, _, again = synth.gen_dataset(cfg)
    assert all(np.array_equal(a.sequence.frames, b.sequence.frames) for a, b in zip(batch, again))


def test_no_degenerate_bones_by_default():
    _, _, batch = synth.gen_dataset(synth.SynthConfig(seed=5))
    for c in batch:
        preprocess(c.sequence)


def test_untrimmed_tiling_and_files(tmp_path, toy):
    classes = synth.motion_classes(4, toy, 0)
    seqs = synth.gen_untrimmed(classes, 6, 2, 4, seed=1, out_dir=tmp_path)
    files = skq_files(tmp_path)
    assert len(files) == 6
    for u, f in zip(seqs, files):
        assert sum(s.length for s in u.segments) == u.sequence.length
        back = read_untrimmed(f, toy)
        assert back.segments == u.segments


def test_permutation_split_disjoint():
    perms = synth.all_permutations(4, 3)
    assert len(perms) == 4 * 3 * 3
    train, test = synth.split_permutations(perms, 15, 11, seed=2)
    assert len(train) == 15 and len(test) == 11
    assert not {p.labels for p in train} & {p.labels for p in test}
    with pytest.raises(ValidationError):
        synth.split_permutations(perms, 30, 10)


def test_held_out_permutations_respected(toy):
    classes = synth.motion_classes(4, toy, 0)
    train, _ = synth.split_permutations(synth.all_permutations(4, 3), 5, 5)
    seqs = synth.gen_untrimmed(classes, 10, seed=3, permutations=train)
    assert {u.permutation.labels for u in seqs} <= {p.labels for p in train}


def test_boundary_discontinuity_small(toy):
    classes = synth.motion_classes(4, toy, 0)
    for u in synth.gen_untrimmed(classes, 10, 2, 5, seed=4, noise_sigma=0.0):
        boundary, within = synth.boundary_jumps(u)
        # phase-continuous switches: a boundary step is at most the tail of
        # one step of the outgoing action plus one step of the incoming one
        assert boundary <= 2 * within


def test_mean_bone_lengths(toy):
    seq = synth.gen_clip(synth.motion_classes(1, toy)[0], toy, 1, 0.0).sequence
    assert synth.mean_bone_lengths([seq], toy) == pytest.approx(toy.reference_lengths)
