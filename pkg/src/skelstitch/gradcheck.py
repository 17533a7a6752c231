"""Finite-difference check of every layer and of both end-to-end losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LabeledSegment, SkeletonSequence, UntrimmedSequence
from .gcl import MemoryBank, gcl_step
from .learner import (Conv1d, Encoder, L2Normalize, Linear, ProjectionHead, ReLU, SegmentationHead,
                      SegmentationModel, Softmax, check_module, cross_entropy, numeric_grad, rel_error)
from .synth import toy_topology

TOLERANCE = 1e-4
MAX_COORDS = 40


@dataclass
class GradReport:
    seed: int
    errors: dict  # "<check>.<tensor>" -> relative error

    @property
    def max_error(self):
        return max(self.errors.values())

    @property
    def passed(self):
        return self.max_error <= TOLERANCE

    def lines(self):
        out = [f"{k} {v:.3e}" for k, v in sorted(self.errors.items())]
        out.append(f"max {self.max_error:.3e} {'PASS' if self.passed else 'FAIL'}")
        return out


def _layers(rng):
    # inputs offset from zero so no ReLU kink lands within h of a sample
    x = rng.standard_normal((11, 5))
    x[np.abs(x) < 1e-2] = 0.5
    return {
        "conv": (Conv1d(5, 4, 3, rng=rng), x),
        "conv_dilated": (Conv1d(5, 4, 3, dilation=2, rng=rng), x),
        "linear": (Linear(5, 3, rng), x),
        "relu": (ReLU(), x),
        "l2norm": (L2Normalize(), x),
        "softmax": (Softmax(), x),
        "encoder": (Encoder(3, 2, hidden=6, out=5, kernel=3, rng=rng), rng.standard_normal((9, 3, 2))),
        "projection": (ProjectionHead(5, 6, 4, rng=rng), x),
        "seg_head_temporal": (SegmentationHead(5, 3, temporal=True, hidden=6, rng=rng), x),
    }


def _toy_sequence(rng, T, labels, topology):
    cuts = np.sort(rng.choice(np.arange(2, T - 1), len(labels) - 1, replace=False)) if len(labels) > 1 else []
    bounds = [0, *map(int, cuts), T]
    segs = tuple(LabeledSegment(a, b, k) for a, b, k in zip(bounds, bounds[1:], labels))
    frames = rng.standard_normal((T, topology.joint_count, topology.dims))
    return UntrimmedSequence(SkeletonSequence(topology, frames), segs)


def _params(*named):
    for n in named:
        yield from n


def check_gcl(rng, h=1e-5, tau=0.5):
    topology = toy_topology()
    seqs = [_toy_sequence(rng, 14, labels, topology) for labels in ([0, 1, 2], [1, 0], [2, 0, 1])]
    enc = Encoder(topology.joint_count, topology.dims, rng=rng)
    proj = ProjectionHead(enc.out_dim, rng=rng)
    bank = MemoryBank(8)
    for _ in range(8):
        v = rng.standard_normal(16)
        bank.push(v / np.linalg.norm(v), int(rng.integers(3)))
    enc.zero_grad()
    proj.zero_grad()
    gcl_step(seqs, enc, proj, bank, tau)

    def f():
        return gcl_step(seqs, enc, proj, bank, tau, backward=False)[0]

    return _param_errors(f, _params(enc.named_parameters("encoder."), proj.named_parameters("proj.")), rng, h)


def check_cross_entropy(rng, h=1e-5):
    topology = toy_topology()
    u = _toy_sequence(rng, 16, [0, 2, 1], topology)
    model = SegmentationModel.create(topology.joint_count, topology.dims, 3, temporal=True,
                                     seed=int(rng.integers(1 << 31)))
    y = u.frame_labels()
    model.zero_grad()
    model.loss_and_backward(u.sequence.frames, y)

    def f():
        return cross_entropy(model.logits(u.sequence.frames), y)[0]

    return _param_errors(f, model.named_parameters(), rng, h)


def _param_errors(f, named, rng, h):
    errors = {}
    for name, p, g in list(named):
        coords = None
        if p.size > MAX_COORDS:
            coords = np.sort(rng.choice(p.size, MAX_COORDS, replace=False))
        num = numeric_grad(f, p, h, coords)
        sel = np.arange(p.size) if coords is None else coords
        errors[name] = rel_error(np.ravel(g)[sel], np.ravel(num)[sel])
    return errors


def gradcheck(seed=1, h=1e-5) -> GradReport:
    rng = np.random.default_rng(seed)
    errors = {}
    for name, (module, x) in _layers(rng).items():
        for k, v in check_module(module, x, rng, h, max_coords=MAX_COORDS).items():
            errors[f"{name}.{k}"] = v
    for k, v in check_gcl(rng, h).items():
        errors[f"gcl_loss.{k}"] = v
    for k, v in check_cross_entropy(rng, h).items():
        errors[f"ce_loss.{k}"] = v
    return GradReport(seed, errors)
