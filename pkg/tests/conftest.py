import numpy as np
import pytest

from skelstitch.core import Batch, Bone, SkeletonSequence, Topology, TrimmedClip
from skelstitch.preprocess import preprocess
from skelstitch.synth import toy_topology


def random_frames(rng, topology, T):
    """Random poses with bones of length 0.3..1.5 (never degenerate)."""
    V, C = topology.joint_count, topology.dims
    f = np.zeros((T, V, C))
    f[:, topology.root] = rng.normal(0, 1, (T, C))
    for b in topology.bone_order():
        d = rng.standard_normal((T, C))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        f[:, b.child] = f[:, b.parent] + d * rng.uniform(0.3, 1.5, (T, 1))
    return f


def random_batch(rng, topology, n_clips, n_classes, t_max=20, t_min=1, prep=True):
    clips = []
    for i in range(n_clips):
        T = int(rng.integers(t_min, t_max + 1))
        seq = SkeletonSequence(topology, random_frames(rng, topology, T))
        clips.append(TrimmedClip(preprocess(seq) if prep else seq, i % n_classes))
    return Batch(clips)


@pytest.fixture
def toy():
    return toy_topology()


@pytest.fixture
def chain5():
    # root 0 with a branch: 0-1-2, 0-3-4
    return Topology("chain5", 5, 3, 0, (Bone(0, 1, 1.0), Bone(1, 2, 0.5), Bone(0, 3, 2.0), Bone(3, 4, 0.7)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance results, printed once at the end of the session
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
