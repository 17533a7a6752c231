"""Command-line entry point: ``skelstitch <subcommand> [flags]``.

Exit codes: 0 success, 1 validation or usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from dataclasses import replace

import numpy as np

from . import synth
from .adapt import AdaptConfig, adapt, predict, write_prediction
from .core import (Batch, Permutation, TrimmedClip, UntrimmedSequence, read_clip,
                   read_sequence, read_topology, read_untrimmed, skq_files, write_clip,
                   write_untrimmed)
from .correspond import CorrespondenceConfig, register
from .errors import SkelStitchError, ValidationError
from .experiments import EXPERIMENTS, ReproConfig, write_repro
from .gcl import GclConfig, MemoryBank, pretrain
from .gradcheck import gradcheck
from .learner import (Encoder, ProjectionHead, load_encoder, load_model, parameter_digest,
                      save_encoder, save_model)
from .metrics import evaluate
from .preprocess import preprocess
from .stitch import StitchConfig, expand_dataset, manifest_line, stitch

log = logging.getLogger("skelstitch")


class Parser(argparse.ArgumentParser):
    """argparse with exit code 1 for usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _floats(text):
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _perm(text):
    try:
        return Permutation.parse(text)
    except (ValueError, SkelStitchError) as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def build_parser() -> Parser:
    def global_flags(suppress):
        # subcommands accept the globals too; SUPPRESS keeps them from
        # overwriting a value given before the subcommand name
        g = Parser(add_help=False)
        kw = {"default": argparse.SUPPRESS} if suppress else {}
        g.add_argument("--seed", type=int, **(kw or {"default": 0}))
        g.add_argument("--threads", type=int, **(kw or {"default": 1}))
        g.add_argument("--verbose", "-v", action="store_true", **kw)
        return g

    common, sub_common = global_flags(False), global_flags(True)

    p = Parser(prog="skelstitch", parents=[common],
               description="Skeleton stitching, contrastive pretraining and action segmentation.")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=Parser)
    sub.required = True

    def add(name, help_):
        return sub.add_parser(name, help=help_, parents=[sub_common])

    s = add("synth", "generate synthetic trimmed clips or untrimmed sequences")
    s.add_argument("kind", choices=("clips", "untrimmed"))
    s.add_argument("--classes", type=int, default=4)
    s.add_argument("--per-class", type=int, default=20)
    s.add_argument("--tmin", type=int, default=20)
    s.add_argument("--tmax", type=int, default=60)
    s.add_argument("--sequences", type=int, default=30, help="untrimmed only")
    s.add_argument("--nmin", type=int, default=2)
    s.add_argument("--nmax", type=int, default=5)
    s.add_argument("--class-seed", type=int, default=None,
                   help="seed of the class definitions (defaults to --seed); share it between "
                        "a clips run and an untrimmed run to get the same classes")
    s.add_argument("--out", required=True)

    s = add("preprocess", "spine-centre and bone-normalise every SKQ file")
    s.add_argument("--topology", required=True)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)

    s = add("match", "find the best frame correspondence for a template frame")
    s.add_argument("--template", required=True, help="<skq>:<frame>")
    s.add_argument("--batch", required=True)
    s.add_argument("--class", dest="klass", type=int, required=True)
    s.add_argument("--beta", type=float, default=4.0)
    s.add_argument("--dstar", type=float, default=math.inf)
    s.add_argument("--topology")

    s = add("stitch", "stitch one sequence for a permutation")
    s.add_argument("--batch", required=True)
    s.add_argument("--perm", type=_perm, required=True)
    s.add_argument("--beta", type=float, default=4.0)
    s.add_argument("--dstar", type=float, default=math.inf)
    s.add_argument("--topology")
    s.add_argument("--out", required=True)

    s = add("expand", "stitch many sequences with random permutations")
    s.add_argument("--batch", required=True)
    s.add_argument("--count", type=int, default=200)
    s.add_argument("--nmin", type=int, default=2)
    s.add_argument("--nmax", type=int, default=5)
    s.add_argument("--beta", type=float, default=4.0)
    s.add_argument("--dstar", type=float, default=math.inf)
    s.add_argument("--topology")
    s.add_argument("--out", required=True)
    s.add_argument("--manifest")

    d = GclConfig()
    s = add("pretrain", "contrastive encoder pretraining on stitched sequences")
    s.add_argument("--batch", required=True)
    s.add_argument("--steps", type=int, default=300)
    s.add_argument("--tau", type=float, default=d.tau)
    s.add_argument("--bank", type=int, default=d.bank_capacity)
    s.add_argument("--g", type=int, default=d.stitched_per_step)
    s.add_argument("--nmin", type=int, default=d.n_min)
    s.add_argument("--nmax", type=int, default=d.n_max)
    s.add_argument("--lr", type=float, default=d.lr)
    s.add_argument("--topology")
    s.add_argument("--out", required=True)
    s.add_argument("--log")

    a = AdaptConfig()
    s = add("adapt", "train a segmentation model (supervised or zero-shot)")
    s.add_argument("--strategy", choices=("zero_shot", "supervised"), required=True)
    s.add_argument("--mode", choices=("linear", "e2e"), default="e2e")
    s.add_argument("--encoder", required=True)
    s.add_argument("--source")
    s.add_argument("--target")
    s.add_argument("--classes", type=int, help="defaults to the label-space file of the data directory")
    s.add_argument("--epochs", type=int, default=a.epochs)
    s.add_argument("--lr", type=float, default=a.lr)
    s.add_argument("--count", type=int, default=a.expand_count, help="zero-shot expansion size")
    s.add_argument("--nmin", type=int, default=a.n_min)
    s.add_argument("--nmax", type=int, default=a.n_max)
    s.add_argument("--topology")
    s.add_argument("--out", required=True)

    s = add("predict", "frame-wise class probabilities for one or more sequences")
    s.add_argument("--model", required=True)
    s.add_argument("--in", dest="inp", required=True, help="SKQ file or directory")
    s.add_argument("--topology")
    s.add_argument("--out", required=True, help="PRD file, or directory when --in is one")

    s = add("eval", "score predictions against ground truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--iou", type=_floats, default=(0.1, 0.5))
    s.add_argument("--topology")
    s.add_argument("--report")

    s = add("gradcheck", "finite-difference check of all gradients")
    s.add_argument("--seeds", type=lambda t: [int(x) for x in t.split(",")], default=None)

    s = add("repro", "scripted toy-scale experiments")
    s.add_argument("experiment", choices=EXPERIMENTS)
    s.add_argument("--out", default=None, help="defaults to repro_<experiment>")
    s.add_argument("--steps", type=int, default=ReproConfig.pretrain_steps)
    s.add_argument("--epochs", type=int, default=ReproConfig.epochs)
    return p


# ---------------------------------------------------------------------------
# helpers


class AccessLog:
    """Records every data file a command reads."""

    def __init__(self):
        self.paths: list[str] = []

    def note(self, path):
        self.paths.append(os.path.abspath(path))
        return path


def _topologies(args, *dirs):
    path = args.topology if getattr(args, "topology", None) else None
    for d in dirs:
        if path is None and d and os.path.isdir(d) and os.path.exists(os.path.join(d, "topology.skt")):
            path = os.path.join(d, "topology.skt")
    if path is None:
        raise ValidationError("no topology: pass --topology or put topology.skt next to the data")
    return read_topology(path)


def _load_batch(directory, topology, audit: AccessLog | None = None) -> Batch:
    if not os.path.isdir(directory):
        raise ValidationError(f"not a directory: {directory}")
    clips = []
    for p in skq_files(directory):
        if audit:
            audit.note(p)
        clips.append(read_clip(p, topology))
    return Batch(clips)


def _load_untrimmed(directory, topology, audit: AccessLog | None = None):
    out = []
    for p in skq_files(directory):
        if audit:
            audit.note(p)
        out.append(read_untrimmed(p, topology))
    if not out:
        raise ValidationError(f"no SKQ files in {directory}")
    return out


def _num_classes(args, directory):
    if args.classes:
        return args.classes
    from .core import read_label_space
    path = os.path.join(directory, "labels.lbl")
    if not os.path.exists(path):
        raise ValidationError("pass --classes or provide labels.lbl next to the data")
    return len(read_label_space(path).names)


def echo_config(args, path):
    """Write the resolved flags as sorted ``key value`` lines."""
    items = sorted((k, v) for k, v in vars(args).items() if not k.startswith("_"))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, v in items:
            fh.write(f"{k} {v}\n")


def _config_path(out):
    return os.path.join(out, "config.txt") if os.path.isdir(out) else out + ".config"


def _stitch_cfg(args):
    return StitchConfig(CorrespondenceConfig(args.dstar, args.beta), rng_seed=args.seed)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args):
    cls_seed = args.seed if args.class_seed is None else args.class_seed
    topology = synth.toy_topology()
    classes = synth.motion_classes(args.classes, topology, cls_seed)
    if args.kind == "clips":
        cfg = synth.SynthConfig(args.classes, args.per_class, args.tmin, args.tmax, seed=args.seed)
        _, _, batch = synth.gen_dataset(cfg, args.out, topology, classes)
        print(f"wrote {len(batch)} clips to {args.out}")
    else:
        seqs = synth.gen_untrimmed(classes, args.sequences, args.nmin, args.nmax, seed=args.seed,
                                   topology=topology, t_min=args.tmin, t_max=args.tmax, out_dir=args.out)
        print(f"wrote {len(seqs)} sequences to {args.out}")
    echo_config(args, _config_path(args.out))


def cmd_preprocess(args):
    topology = read_topology(args.topology)
    os.makedirs(args.out, exist_ok=True)
    files = skq_files(args.inp)
    for p in files:
        item = read_sequence(p, topology)
        out = os.path.join(args.out, os.path.basename(p))
        if isinstance(item, TrimmedClip):
            write_clip(TrimmedClip(preprocess(item.sequence), item.label), out)
        else:
            write_untrimmed(UntrimmedSequence(preprocess(item.sequence), item.segments), out)
    for name in ("topology.skt", "labels.lbl"):
        src = os.path.join(args.inp, name)
        if os.path.exists(src):
            with open(src, encoding="utf-8") as fi, open(os.path.join(args.out, name), "w",
                                                          encoding="utf-8", newline="\n") as fo:
                fo.write(fi.read())
    echo_config(args, _config_path(args.out))
    print(f"preprocessed {len(files)} files into {args.out}")


def cmd_match(args):
    path, _, frame = args.template.rpartition(":")
    if not path or not frame.lstrip("-").isdigit():
        raise ValidationError(f"--template must be <skq>:<frame>, got {args.template!r}")
    topology = _topologies(args, args.batch, os.path.dirname(path) or ".")
    item = read_sequence(path, topology)
    seq = item.sequence
    t = int(frame)
    if not 0 <= t < seq.length:
        raise ValidationError(f"template frame {t} outside [0, {seq.length})")
    batch = _load_batch(args.batch, topology)
    m = register(seq.frames[t], batch, args.klass, CorrespondenceConfig(args.dstar, args.beta))
    print(f"{m.clip_index} {m.frame_index} {m.distance:.17g}")


def cmd_stitch(args):
    topology = _topologies(args, args.batch)
    batch = _load_batch(args.batch, topology)
    res = stitch(batch, args.perm, _stitch_cfg(args))
    write_untrimmed(res.sequence, args.out)
    echo_config(args, _config_path(args.out))
    print(manifest_line(os.path.basename(args.out), res))


def cmd_expand(args):
    topology = _topologies(args, args.batch)
    batch = _load_batch(args.batch, topology)
    results = expand_dataset(batch, args.count, args.nmin, args.nmax, _stitch_cfg(args))
    os.makedirs(args.out, exist_ok=True)
    lines = []
    for n, r in enumerate(results):
        name = f"stitched_{n:04d}.skq"
        write_untrimmed(r.sequence, os.path.join(args.out, name))
        lines.append(manifest_line(name, r))
    for name in ("topology.skt", "labels.lbl"):
        src = os.path.join(args.batch, name)
        if os.path.exists(src):
            with open(src, encoding="utf-8") as fi, open(os.path.join(args.out, name), "w",
                                                          encoding="utf-8", newline="\n") as fo:
                fo.write(fi.read())
    manifest = args.manifest or os.path.join(args.out, "manifest.txt")
    with open(manifest, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    echo_config(args, _config_path(args.out))
    print(f"wrote {len(results)} stitched sequences to {args.out}")


def cmd_pretrain(args):
    topology = _topologies(args, args.batch)
    batch = _load_batch(args.batch, topology)
    cfg = GclConfig(tau=args.tau, bank_capacity=args.bank, stitched_per_step=args.g, n_min=args.nmin,
                    n_max=args.nmax, lr=args.lr, seed=args.seed, stitch=StitchConfig(rng_seed=args.seed))
    rng = np.random.default_rng(args.seed)
    enc = Encoder(topology.joint_count, topology.dims, rng=rng)
    enc.fit_input_stats([c.sequence for c in batch])
    proj = ProjectionHead(enc.out_dim, rng=rng)
    history = []
    pretrain(batch, enc, proj, cfg, args.steps, MemoryBank(cfg.bank_capacity), history,
             on_step=lambda s, l: log.info("step %d loss %.6f", s, l))
    save_encoder(args.out, enc, {"steps": args.steps, "seed": args.seed})
    if args.log:
        with open(args.log, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("step,loss,num_positives,bank_size\n")
            for step, loss, pairs, size in history:
                fh.write(f"{step},{loss:.17g},{pairs},{size}\n")
    echo_config(args, _config_path(args.out))
    last = next((h for h in reversed(history) if not math.isnan(h[1])), None)
    print(f"saved encoder to {args.out}" + (f" (final loss {last[1]:.6f})" if last else ""))


def cmd_adapt(args):
    audit = AccessLog()
    enc = load_encoder(audit.note(args.encoder))
    cfg = AdaptConfig(mode=args.mode, strategy=args.strategy, epochs=args.epochs, lr=args.lr, seed=args.seed,
                      expand_count=args.count, n_min=args.nmin, n_max=args.nmax,
                      stitch=StitchConfig(rng_seed=args.seed))
    if args.strategy == "zero_shot":
        if not args.source:
            raise ValidationError("zero-shot adaptation needs --source")
        if args.target:
            log.warning("zero-shot adaptation ignores --target %s", args.target)
        topology = _topologies(args, args.source)
        source = _load_batch(args.source, topology, audit)
        K = _num_classes(args, args.source)
        model = adapt(enc, K, cfg, source=source)
        if args.target:
            target = os.path.abspath(args.target)
            leaked = [p for p in audit.paths if p.startswith(target + os.sep)]
            if leaked:
                raise RuntimeError(f"zero-shot run read target files: {leaked[:3]}")
    else:
        if not args.target:
            raise ValidationError("supervised adaptation needs --target")
        topology = _topologies(args, args.target)
        target = _load_untrimmed(args.target, topology, audit)
        K = _num_classes(args, args.target)
        model = adapt(enc, K, cfg, target=target)
    save_model(args.out, model, {"strategy": args.strategy, "mode": args.mode})
    with open(args.out + ".access.log", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("".join(p + "\n" for p in audit.paths))
    echo_config(args, _config_path(args.out))
    print(f"saved model to {args.out} (encoder digest "
          f"{parameter_digest(model.encoder.named_parameters('encoder.'))[:12]})")


def cmd_predict(args):
    model = load_model(args.model)
    if os.path.isdir(args.inp):
        topology = _topologies(args, args.inp)
        os.makedirs(args.out, exist_ok=True)
        pairs = [(p, os.path.join(args.out, os.path.basename(p)[:-4] + ".prd")) for p in skq_files(args.inp)]
    else:
        topology = _topologies(args, os.path.dirname(args.inp) or ".")
        pairs = [(args.inp, args.out)]
    for src, dst in pairs:
        item = read_sequence(src, topology)
        seq = item.sequence
        write_prediction(dst, predict(model, seq).scores)
    if os.path.isdir(args.out):
        echo_config(args, _config_path(args.out))
    print(f"wrote {len(pairs)} prediction file(s)")


def cmd_eval(args):
    topology = _topologies(args, args.gt)
    report = evaluate(args.pred, args.gt, args.iou, topology)
    text = "\n".join(report.lines())
    if args.report:
        report.write(args.report)
    print(text)


def cmd_gradcheck(args):
    seeds = args.seeds or [1, 2, 3]
    ok = True
    for s in seeds:
        rep = gradcheck(s)
        if args.verbose:
            for line in rep.lines()[:-1]:
                print(f"seed {s} {line}")
        print(f"seed {s} max_rel_error {rep.max_error:.3e} {'PASS' if rep.passed else 'FAIL'}")
        ok &= rep.passed
    return 0 if ok else 2


def cmd_repro(args):
    out = args.out or f"repro_{args.experiment}"
    cfg = replace(ReproConfig(), seed=args.seed, pretrain_steps=args.steps, epochs=args.epochs)
    rows = write_repro(args.experiment, out, cfg)
    echo_config(args, os.path.join(out, "config.txt"))
    print("\n".join(rows))


COMMANDS = {
    "synth": cmd_synth, "preprocess": cmd_preprocess, "match": cmd_match, "stitch": cmd_stitch,
    "expand": cmd_expand, "pretrain": cmd_pretrain, "adapt": cmd_adapt, "predict": cmd_predict,
    "eval": cmd_eval, "gradcheck": cmd_gradcheck, "repro": cmd_repro,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("skelstitch: error: --threads must be >= 1", file=sys.stderr)
        return 1
    log.info("config: %s", " ".join(f"{k}={v}" for k, v in sorted(vars(args).items())))
    try:
        return COMMANDS[args.command](args) or 0
    except (ValidationError, argparse.ArgumentTypeError) as e:
        print(f"skelstitch: error: {e}", file=sys.stderr)
        return 1
    except (SkelStitchError, OSError, RuntimeError) as e:
        print(f"skelstitch: failed: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
