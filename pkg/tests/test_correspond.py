import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skelstitch.core import Batch, SkeletonSequence, TrimmedClip
from skelstitch.correspond import (CorrespondenceConfig, frame_distance, joint_terms, register,
                                   register_oracle, search_range)
from skelstitch.errors import EmptyCandidateSet, NoValidCorrespondence, TopologyMismatch, ValidationError
from skelstitch.preprocess import preprocess

from conftest import random_batch, random_frames


def naive_distance(p, q):
    d = 0.0
    for a, b in zip(p, q):
        d += float(np.dot(a - b, a - b))
        na, nb = math.sqrt(np.dot(a, a)), math.sqrt(np.dot(b, b))
        if na >= 1e-12 and nb >= 1e-12:
            d += max(1 - float(np.dot(a, b)) / (na * nb), 0.0)
    return d


def test_distance_examples():
    assert frame_distance([[2.0, 0, 0]], [[1.0, 0, 0]]) == 1.0
    assert frame_distance([[1.0, 0, 0]], [[0, 1.0, 0]]) == pytest.approx(3.0, abs=1e-15)
    p = np.array([[0.0, 0, 0], [0.3, -1.2, 0.5]])
    assert frame_distance(p, p) == 0.0


def test_zero_vector_orientation_guard():
    pos, orient = joint_terms([[0.0, 0, 0]], [[1.0, 0, 0]])
    assert orient[0] == 0.0 and pos[0] == 1.0


def test_distance_matches_naive_form(toy, rng):
    for _ in range(200):
        p = preprocess(SkeletonSequence(toy, random_frames(rng, toy, 1))).frames[0]
        q = preprocess(SkeletonSequence(toy, random_frames(rng, toy, 1))).frames[0]
        assert frame_distance(p, q) == pytest.approx(naive_distance(p, q), rel=1e-12, abs=1e-12)


def test_topology_mismatch():
    with pytest.raises(TopologyMismatch):
        frame_distance(np.zeros((3, 3)), np.zeros((4, 3)))


vec = st.lists(st.floats(-5, 5, allow_nan=False, allow_infinity=False), min_size=3, max_size=3)


@given(st.lists(st.tuples(vec, vec), min_size=1, max_size=6))
@settings(max_examples=200, deadline=None)
def test_metric_properties_property(pairs):
    p = np.array([a for a, _ in pairs])
    q = np.array([b for _, b in pairs])
    assert frame_distance(p, p) == 0.0
    assert frame_distance(p, q) == frame_distance(q, p)
    assert frame_distance(p, q) >= 0.0
    _, orient = joint_terms(p, q)
    assert np.all((orient >= 0) & (orient <= 2))


def test_search_range_examples():
    assert search_range(100, 4) == 25
    assert search_range(3, 4) == 1
    assert search_range(7, 2) == 3
    assert [search_range(n, 3.5) for n in range(1, 40)] == sorted(search_range(n, 3.5) for n in range(1, 40))


def test_config_validation():
    with pytest.raises(ValidationError):
        CorrespondenceConfig(d_star=-1)
    with pytest.raises(ValidationError):
        CorrespondenceConfig(beta=0.5)


def test_forced_choice_and_gate(toy, rng):
    b = random_batch(rng, toy, 2, 2, t_max=3)
    tpl = b[0].sequence.frames[-1]
    m = register(tpl, b, 1, CorrespondenceConfig(beta=4))
    assert (m.clip_index, m.frame_index) == (1, 0)
    with pytest.raises(NoValidCorrespondence) as e:
        register(tpl, b, 1, CorrespondenceConfig(d_star=m.distance / 2, beta=4))
    assert e.value.best == m
    assert register(tpl, b, 1, CorrespondenceConfig(d_star=m.distance, beta=4)) == m


def test_exact_match_dominance(toy, rng):
    b = random_batch(rng, toy, 8, 2, t_min=8, t_max=20)
    tpl = b[5].sequence.frames[1]
    m = register(tpl, b, 1, CorrespondenceConfig(d_star=1.0, beta=2))
    assert (m.clip_index, m.frame_index, m.distance) == (5, 1, 0.0)


def test_tie_break_lexicographic(toy, rng):
    f = preprocess(SkeletonSequence(toy, random_frames(rng, toy, 8))).frames
    g = preprocess(SkeletonSequence(toy, random_frames(rng, toy, 1))).frames
    # clip 1 and clip 2 both contain the best frame twice
    twin = np.concatenate([f[:2], g, g, f[2:]])
    b = Batch([TrimmedClip(SkeletonSequence(toy, f), 0), TrimmedClip(SkeletonSequence(toy, twin), 1),
               TrimmedClip(SkeletonSequence(toy, twin), 1)])
    cfg = CorrespondenceConfig(beta=1)
    assert same_match(register(g[0], b, 1, cfg), register_oracle(g[0], b, 1, cfg))
    assert (register(g[0], b, 1, cfg).clip_index, register(g[0], b, 1, cfg).frame_index) == (1, 2)
    assert register(g[0], b, 1, cfg, exclude={1}).clip_index == 2


def test_empty_candidates(toy, rng):
    b = random_batch(rng, toy, 4, 2)
    tpl = b[0].sequence.frames[0]
    with pytest.raises(EmptyCandidateSet):
        register(tpl, b, 7)
    with pytest.raises(EmptyCandidateSet):
        register(tpl, b, 1, exclude={1, 3})
    with pytest.raises(EmptyCandidateSet):
        register_oracle(tpl, b, 1, exclude={1, 3})


def same_match(a, b):
    return (a.clip_index, a.frame_index) == (b.clip_index, b.frame_index) and abs(a.distance - b.distance) < 1e-12


def test_register_equals_oracle(toy, rng):
    for _ in range(100):
        b = random_batch(rng, toy, int(rng.integers(1, 9)), 2)
        tpl = preprocess(SkeletonSequence(toy, random_frames(rng, toy, 1))).frames[0]
        k = int(b.labels[0])
        cfg = CorrespondenceConfig(beta=float(rng.uniform(1, 6)))
        assert same_match(register(tpl, b, k, cfg), register_oracle(tpl, b, k, cfg))
