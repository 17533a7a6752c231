"""Granular contrastive learning over stitched sequences.

Every segment of a stitched sequence is mean-pooled into one vector, projected
to the unit sphere, and contrasted against same-class segments of *other*
stitched sequences, with memory-bank entries of other classes as negatives.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core import Batch, check_tiling
from .errors import NonUnitInput, NoPositives, ValidationError
from .learner import SGD, Encoder, ProjectionHead
from .stitch import StitchConfig, derive_rng, random_permutation, stitch

log = logging.getLogger(__name__)

UNIT_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class GranularEncoding:
    vector: np.ndarray
    label: int
    source: tuple[int, int]  # (stitched-sequence id, segment index)


class MemoryBank:
    """Bounded FIFO of (unit projection, label); oldest entries fall out first."""

    def __init__(self, capacity=1024):
        if capacity < 0:
            raise ValidationError("bank capacity must be >= 0")
        self.capacity = capacity
        self._items: deque = deque(maxlen=capacity if capacity > 0 else 0)

    def push(self, z, label):
        z = np.array(z, dtype=np.float64)
        if abs(np.linalg.norm(z) - 1.0) > UNIT_TOL:
            raise NonUnitInput("memory bank entries must be unit vectors")
        z.setflags(write=False)
        if self.capacity:
            self._items.append((z, int(label)))

    def extend(self, zs, labels):
        for z, y in zip(zs, labels):
            self.push(z, y)

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def negatives(self, exclude_label) -> np.ndarray:
        rows = [z for z, y in self._items if y != exclude_label]
        return np.array(rows).reshape(len(rows), -1)

    def arrays(self):
        if not self._items:
            return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
        return (np.array([z for z, _ in self._items]),
                np.array([y for _, y in self._items], dtype=np.int64))


@dataclass(frozen=True)
class GclConfig:
    tau: float = 0.07
    # without a momentum encoder, a large FIFO holds stale negatives and
    # training collapses; 128 entries is roughly the last ten steps
    bank_capacity: int = 128
    stitched_per_step: int = 8
    n_min: int = 2
    n_max: int = 4
    lr: float = 3e-4
    momentum: float = 0.9
    weight_decay: float = 0.0
    seed: int = 0
    stitch: StitchConfig = field(default_factory=StitchConfig)

    def __post_init__(self):
        if not self.tau > 0:
            raise ValidationError(f"tau must be positive, got {self.tau}")


def granular_pool(f, segments) -> list[GranularEncoding]:
    return granular_pool_with_source(f, segments, 0)


def granular_pool_with_source(f, segments, seq_id) -> list[GranularEncoding]:
    f = np.asarray(f, dtype=np.float64)
    check_tiling(list(segments), len(f), distinct_neighbours=False)
    return [GranularEncoding(f[s.start:s.end].mean(0), s.label, (seq_id, n))
            for n, s in enumerate(segments)]


def positive_pairs(encodings) -> dict[int, list[int]]:
    """Class -> indices of encodings usable as positives.

    A class is kept only if it occurs in at least two distinct stitched
    sequences. Positive pairs are the cross-sequence ordered pairs inside a
    kept class (see ``partners``).
    """
    groups: dict[int, list[int]] = {}
    for n, e in enumerate(encodings):
        groups.setdefault(e.label, []).append(n)
    out = {}
    for k in sorted(groups):
        idx = groups[k]
        if len(idx) >= 2 and len({encodings[i].source[0] for i in idx}) >= 2:
            out[k] = idx
    return out


def partners(encodings, members, i) -> list[int]:
    """Members of ``i``'s class that come from a different stitched sequence."""
    src = encodings[i].source[0]
    return [j for j in members if j != i and encodings[j].source[0] != src]


def _check_unit(*vs):
    for v in vs:
        v = np.atleast_2d(v)
        if v.size and np.max(np.abs(np.linalg.norm(v, axis=-1) - 1.0)) > UNIT_TOL:
            raise NonUnitInput("info_nce needs unit-norm inputs")


def info_nce(z_i, z_j, negatives, tau) -> float:
    """-log softmax of the positive logit among [positive, negatives], logits = dot / tau."""
    negatives = np.asarray(negatives, dtype=np.float64).reshape(-1, len(z_i))
    _check_unit(z_i, z_j, negatives)
    if not tau > 0:
        raise ValidationError("tau must be positive")
    loss, _, _ = _info_nce_grad(np.asarray(z_i, float), np.asarray(z_j, float), negatives, tau)
    return loss


def _info_nce_grad(zi, zj, neg, tau):
    logits = np.concatenate([[zi @ zj], neg @ zi]) / tau
    m = logits.max()
    e = np.exp(logits - m)
    p = e / e.sum()
    loss = -(logits[0] - m) + np.log(e.sum())
    # d loss / d logits = p - onehot(0)
    d = p.copy()
    d[0] -= 1.0
    g_i = (d[0] * zj + d[1:] @ neg) / tau
    g_j = d[0] * zi / tau
    return float(loss), g_i, g_j


def contrastive_objective(z, encodings, bank: MemoryBank, tau):
    """Class / anchor / partner triple average of pairwise InfoNCE.

    Returns (loss, dL/dz, number of ordered positive pairs).
    """
    groups = positive_pairs(encodings)
    if not groups:
        raise NoPositives("no class occurs in two different stitched sequences")
    grad = np.zeros_like(z)
    total, pairs = 0.0, 0
    bank_z, bank_y = bank.arrays()
    for k, members in groups.items():
        neg = bank_z[bank_y != k] if len(bank_y) else np.zeros((0, z.shape[1]))
        class_sum = 0.0
        for i in members:
            js = partners(encodings, members, i)
            w = 1.0 / (len(groups) * len(members) * len(js))
            for j in js:
                l, gi, gj = _info_nce_grad(z[i], z[j], neg, tau)
                class_sum += l / len(js)
                grad[i] += w * gi
                grad[j] += w * gj
                pairs += 1
        total += class_sum / len(members)
    return total / len(groups), grad, pairs


def gcl_loss(encodings, bank: MemoryBank, proj: ProjectionHead, cfg: GclConfig | float):
    """Project the encodings and evaluate the averaged contrastive objective.

    Returns ``(loss, dL/dh)``; projection-head gradients are accumulated into
    ``proj.grads``. ``dL/dh`` rows line up with ``encodings``.
    """
    tau = cfg.tau if isinstance(cfg, GclConfig) else float(cfg)
    h = np.array([e.vector for e in encodings])
    z = proj.forward(h)
    loss, gz, _ = contrastive_objective(z, encodings, bank, tau)
    return loss, proj.backward(gz)


def pool_backward(grad_h, segments, T):
    """Spread per-segment gradients back over frames (mean-pool adjoint)."""
    gf = np.zeros((T, grad_h.shape[1]))
    for g, s in zip(grad_h, segments):
        gf[s.start:s.end] = g / (s.end - s.start)
    return gf


def gcl_step(sequences, enc: Encoder, proj: ProjectionHead, bank: MemoryBank, tau,
             backward=True):
    """Loss and gradients for one group of stitched sequences.

    ``sequences`` is a list of UntrimmedSequence. Gradients accumulate into
    ``enc`` and ``proj``. Returns (loss, projections, labels, pairs).
    """
    encodings, feats = [], []
    for s, u in enumerate(sequences):
        f = enc.forward(u.sequence.frames)
        feats.append(f)
        encodings += granular_pool_with_source(f, u.segments, s)
    h = np.array([e.vector for e in encodings])
    z = proj.forward(h)
    loss, gz, pairs = contrastive_objective(z, encodings, bank, tau)
    if backward:
        gh = proj.backward(gz)
        row = 0
        for u in sequences:
            n = len(u.segments)
            gf = pool_backward(gh[row:row + n], u.segments, u.sequence.length)
            row += n
            # the encoder cache holds the last sequence only, so re-run forward
            enc.forward(u.sequence.frames)
            enc.backward(gf)
    return loss, z, [e.label for e in encodings], pairs


def pretrain(batch: Batch, enc: Encoder, proj: ProjectionHead, cfg: GclConfig = GclConfig(),
             steps=300, bank: MemoryBank | None = None, history=None, on_step=None):
    """Contrastive pretraining on freshly stitched sequences; returns the encoder.

    ``history`` (a list) receives ``(step, loss, pairs, bank_size)`` rows;
    steps without positives are logged and skipped.
    """
    if len(batch.classes) < 2:
        raise ValidationError("pretraining needs at least two classes")
    bank = MemoryBank(cfg.bank_capacity) if bank is None else bank
    params = list(enc.named_parameters("encoder.")) + list(proj.named_parameters("proj."))
    opt = SGD(params, lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    def sample(step):
        rng = derive_rng(cfg.seed, step)
        seqs = []
        for _ in range(cfg.stitched_per_step):
            perm = random_permutation(batch.classes, cfg.n_min, cfg.n_max, rng)
            seqs.append(stitch(batch, perm, cfg.stitch, rng=rng).sequence)
        return seqs

    for step in range(steps):
        seqs = sample(step)
        enc.zero_grad()
        proj.zero_grad()
        try:
            loss, z, labels, pairs = gcl_step(seqs, enc, proj, bank, cfg.tau)
        except NoPositives:
            log.warning("step %d: no cross-sequence positives, skipped", step)
            if history is not None:
                history.append((step, float("nan"), 0, len(bank)))
            continue
        opt.step()
        # pushed after the update; stored detached
        bank.extend(z, labels)
        if history is not None:
            history.append((step, loss, pairs, len(bank)))
        if on_step is not None:
            on_step(step, loss)
    return enc


def separation_statistic(enc: Encoder, sequences) -> float:
    """Mean intra-class minus mean inter-class cosine of granular encodings.

    Pairs within the same stitched sequence are skipped.
    """
    vecs, labels, src = [], [], []
    for s, u in enumerate(sequences):
        for e in granular_pool_with_source(enc.forward(u.sequence.frames), u.segments, s):
            vecs.append(e.vector)
            labels.append(e.label)
            src.append(s)
    v = np.array(vecs)
    v = v / np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-12)
    cos = v @ v.T
    labels, src = np.array(labels), np.array(src)
    cross = src[:, None] != src[None, :]
    same = labels[:, None] == labels[None, :]
    return float(cos[cross & same].mean() - cos[cross & ~same].mean())
