"""Scripted toy-scale experiments: every arm of one run shares the same synthetic data."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from .adapt import AdaptConfig, adapt, baseline_trimmed_training, build_model, predict, train_segmentation
from .core import Batch, TrimmedClip, UntrimmedSequence
from .gcl import GclConfig, pretrain
from .learner import Encoder, ProjectionHead
from .metrics import EvalReport, evaluate_arrays
from .preprocess import preprocess
from .stitch import StitchConfig, derive_rng, expand_dataset, random_concat, stitch
from . import synth

EXPERIMENTS = ("zero-shot", "supervised", "ablation-stitch", "cross-seq")


@dataclass(frozen=True)
class ReproConfig:
    seed: int = 7
    n_classes: int = 4
    clips_per_class: int = 20
    t_min: int = 20
    t_max: int = 60
    test_sequences: int = 30
    target_train_sequences: int = 20
    n_min: int = 2
    n_max: int = 5
    pretrain_steps: int = 300
    expand_count: int = 200
    epochs: int = AdaptConfig.epochs
    gcl: GclConfig = field(default_factory=GclConfig)
    # cross-sequence protocol
    perm_length: int = 3
    train_perms: int = 15
    test_perms: int = 11
    sequences_per_perm: int = 2


def preprocess_clips(batch: Batch) -> Batch:
    return Batch(TrimmedClip(preprocess(c.sequence), c.label) for c in batch)


def preprocess_untrimmed(seqs) -> list[UntrimmedSequence]:
    return [UntrimmedSequence(preprocess(u.sequence), u.segments) for u in seqs]


def trim(seqs) -> Batch:
    """Cut labelled untrimmed sequences into one trimmed clip per segment."""
    return Batch(TrimmedClip(u.sequence.crop(s.start, s.end), s.label) for u in seqs for s in u.segments)


def evaluate_model(model, seqs, thresholds=(0.1, 0.5)) -> EvalReport:
    items = [(predict(model, u.sequence).scores, u.frame_labels()) for u in seqs]
    return evaluate_arrays(items, thresholds, K=model.classes)


def fresh_encoder(topology, sequences, seed) -> Encoder:
    rng = np.random.default_rng(seed)
    return Encoder(topology.joint_count, topology.dims, rng=rng).fit_input_stats(sequences)


def pretrained_encoder(batch: Batch, cfg: ReproConfig, seed_offset=0):
    topology = batch.topology
    rng = np.random.default_rng(cfg.seed + seed_offset)
    enc = Encoder(topology.joint_count, topology.dims, rng=rng)
    enc.fit_input_stats([c.sequence for c in batch])
    proj = ProjectionHead(enc.out_dim, rng=rng)
    history = []
    pretrain(batch, enc, proj, replace(cfg.gcl, seed=cfg.seed + seed_offset), cfg.pretrain_steps,
             history=history)
    return enc, history


def make_source(cfg: ReproConfig):
    scfg = synth.SynthConfig(cfg.n_classes, cfg.clips_per_class, cfg.t_min, cfg.t_max, seed=cfg.seed)
    topology = synth.toy_topology()
    classes = synth.motion_classes(cfg.n_classes, topology, cfg.seed)
    _, labels, raw = synth.gen_dataset(scfg, topology=topology, classes=classes)
    return topology, labels, classes, raw


def make_target(cfg: ReproConfig, classes, topology, count, seed, permutations=None):
    return synth.gen_untrimmed(classes, count, cfg.n_min, cfg.n_max, seed=seed, topology=topology,
                               permutations=permutations, t_min=cfg.t_min, t_max=cfg.t_max)


def _adapt_cfg(cfg: ReproConfig, **kw) -> AdaptConfig:
    base = AdaptConfig(epochs=cfg.epochs, seed=cfg.seed, expand_count=cfg.expand_count,
                       n_min=cfg.n_min, n_max=cfg.n_max, stitch=StitchConfig(rng_seed=cfg.seed))
    return replace(base, **kw)


def run_zero_shot(cfg: ReproConfig = ReproConfig()) -> dict[str, EvalReport]:
    """Trimmed source only; test on held-out synthetic untrimmed sequences."""
    topology, _, classes, raw = make_source(cfg)
    source = preprocess_clips(raw)
    test = preprocess_untrimmed(make_target(cfg, classes, topology, cfg.test_sequences, cfg.seed + 1))
    enc, _ = pretrained_encoder(source, cfg)
    K = cfg.n_classes
    reports = {}
    for mode in ("linear", "e2e"):
        model = adapt(enc, K, _adapt_cfg(cfg, mode=mode, strategy="zero_shot"), source=source)
        reports[f"zero_shot_{mode}"] = evaluate_model(model, test)
    base = build_model(fresh_encoder(topology, [c.sequence for c in source], cfg.seed), K, "e2e", cfg.seed)
    baseline_trimmed_training(base, source, _adapt_cfg(cfg, mode="e2e"))
    reports["baseline_e2e"] = evaluate_model(base, test)
    return reports


def run_supervised(cfg: ReproConfig = ReproConfig()) -> dict[str, EvalReport]:
    """Labelled target training sequences, with and without a pretrained encoder."""
    topology, _, classes, raw = make_source(cfg)
    source = preprocess_clips(raw)
    train = preprocess_untrimmed(make_target(cfg, classes, topology, cfg.target_train_sequences, cfg.seed + 2))
    test = preprocess_untrimmed(make_target(cfg, classes, topology, cfg.test_sequences, cfg.seed + 1))
    enc, _ = pretrained_encoder(source, cfg)
    K = cfg.n_classes
    reports = {}
    base = build_model(fresh_encoder(topology, [u.sequence for u in train], cfg.seed), K, "e2e", cfg.seed)
    train_segmentation(base, train, _adapt_cfg(cfg, mode="e2e"))
    reports["baseline_e2e"] = evaluate_model(base, test)
    for mode in ("linear", "e2e"):
        model = adapt(enc, K, _adapt_cfg(cfg, mode=mode, strategy="supervised"), target=train)
        reports[f"supervised_{mode}"] = evaluate_model(model, test)
    return reports


def run_ablation_stitch(cfg: ReproConfig = ReproConfig()) -> dict[str, EvalReport]:
    """Original vs randomly concatenated vs stitched re-assemblies of the same training set."""
    topology, _, classes, _ = make_source(cfg)
    train = preprocess_untrimmed(make_target(cfg, classes, topology, cfg.target_train_sequences, cfg.seed + 2))
    test = preprocess_untrimmed(make_target(cfg, classes, topology, cfg.test_sequences, cfg.seed + 1))
    clips = trim(train)
    perms = [u.permutation for u in train]
    scfg = StitchConfig(rng_seed=cfg.seed)
    dataset_1 = [random_concat(clips, p, derive_rng(cfg.seed, n), scfg).sequence for n, p in enumerate(perms)]
    dataset_2 = [stitch(clips, p, scfg, derive_rng(cfg.seed, n)).sequence for n, p in enumerate(perms)]
    expanded = train + dataset_2
    K = cfg.n_classes
    reports = {}
    for name, data in (("original", train), ("dataset_I", dataset_1), ("dataset_II", dataset_2),
                       ("expanded", expanded)):
        model = build_model(fresh_encoder(topology, [u.sequence for u in data], cfg.seed), K, "e2e", cfg.seed)
        train_segmentation(model, data, _adapt_cfg(cfg, mode="e2e"))
        reports[name] = evaluate_model(model, test)
    return reports


def cross_sequence_gap(cfg: ReproConfig, seed: int):
    """Train/test accuracy of original vs stitch-expanded training, disjoint permutations.

    Returns ``{arm: (train_acc, test_acc)}``; training accuracy is measured on
    each arm's own training set.
    """
    cfg = replace(cfg, seed=seed)
    topology, _, classes, _ = make_source(cfg)
    perms = synth.all_permutations(cfg.n_classes, cfg.perm_length)
    train_p, test_p = synth.split_permutations(perms, cfg.train_perms, cfg.test_perms, seed)
    train = preprocess_untrimmed(make_target(cfg, classes, topology, cfg.train_perms * cfg.sequences_per_perm,
                                             seed + 2, permutations=train_p))
    test = preprocess_untrimmed(make_target(cfg, classes, topology, cfg.test_perms * cfg.sequences_per_perm,
                                            seed + 1, permutations=test_p))
    clips = trim(train)
    stitched = [r.sequence for r in expand_dataset(clips, cfg.expand_count, cfg.n_min, cfg.n_max,
                                                   StitchConfig(rng_seed=seed))]
    K = cfg.n_classes
    out = {}
    for name, data in (("original", train), ("expanded", train + stitched)):
        model = build_model(fresh_encoder(topology, [u.sequence for u in data], seed), K, "e2e", seed)
        train_segmentation(model, data, _adapt_cfg(cfg, mode="e2e", seed=seed))
        out[name] = (evaluate_model(model, data).acc, evaluate_model(model, test).acc)
    return out


def run_cross_seq(cfg: ReproConfig = ReproConfig(), seeds=None) -> dict:
    seeds = seeds or [cfg.seed + n for n in range(3)]
    return {s: cross_sequence_gap(cfg, s) for s in seeds}


def write_repro(experiment, out_dir, cfg: ReproConfig = ReproConfig()):
    """Run one experiment and write ``<arm>.txt`` reports plus ``summary.txt``."""
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    if experiment == "cross-seq":
        res = run_cross_seq(cfg)
        for seed, arms in res.items():
            for arm, (tr, te) in arms.items():
                rows.append(f"seed{seed}.{arm} train_acc {tr:.6f} test_acc {te:.6f} gap {tr - te:.6f}")
        for arm in ("original", "expanded"):
            gap = float(np.mean([res[s][arm][0] - res[s][arm][1] for s in res]))
            rows.append(f"{arm} mean_gap {gap:.6f}")
    else:
        runner = {"zero-shot": run_zero_shot, "supervised": run_supervised,
                  "ablation-stitch": run_ablation_stitch}[experiment]
        reports = runner(cfg)
        for arm, rep in reports.items():
            rep.write(os.path.join(out_dir, f"{arm}.txt"))
            maps = " ".join(f"map@{t:.2f} {v:.6f}" for t, v in sorted(rep.map_at.items()))
            rows.append(f"{arm} acc {rep.acc:.6f} miou {rep.miou:.6f} {maps} map_frame {rep.map_frame:.6f}")
    with open(os.path.join(out_dir, "summary.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(rows) + "\n")
    return rows
