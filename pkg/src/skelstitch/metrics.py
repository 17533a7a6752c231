"""Frame- and segment-level action segmentation metrics."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidThreshold, LengthMismatch, MissingPrediction


@dataclass(frozen=True)
class Segment:
    start: int
    end: int
    label: int
    confidence: float = 1.0


def _pair(pred, gt):
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise LengthMismatch(f"prediction has {pred.shape[0]} frames, ground truth {gt.shape[0]}")
    if pred.size == 0:
        raise LengthMismatch("empty label sequence")
    return pred, gt


def frame_accuracy(pred, gt) -> float:
    pred, gt = _pair(pred, gt)
    return float(np.mean(pred == gt))


def iou_per_class(pred, gt, K=None) -> dict[int, float]:
    """IoU for every class present in ground truth or prediction."""
    pred, gt = _pair(pred, gt)
    present = sorted(set(np.unique(pred).tolist()) | set(np.unique(gt).tolist()))
    if K is not None:
        present = [k for k in present if 0 <= k < K]
    out = {}
    for k in present:
        p, g = pred == k, gt == k
        out[int(k)] = float(np.sum(p & g) / np.sum(p | g))
    return out


def miou(pred, gt, K=None) -> float:
    per = iou_per_class(pred, gt, K)
    return float(np.mean(list(per.values())))


def extract_segments(labels, scores=None) -> list[Segment]:
    """Maximal constant-label runs; confidence is the mean score of the run's label."""
    labels = np.asarray(labels)
    if labels.size == 0:
        return []
    cuts = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    bounds = zip(np.concatenate([[0], cuts]), np.concatenate([cuts, [labels.size]]))
    out = []
    for s, e in bounds:
        k = int(labels[s])
        conf = 1.0 if scores is None else float(np.mean(np.asarray(scores)[s:e, k]))
        out.append(Segment(int(s), int(e), k, conf))
    return out


def temporal_iou(a: Segment, b: Segment) -> float:
    inter = max(0, min(a.end, b.end) - max(a.start, b.start))
    union = (a.end - a.start) + (b.end - b.start) - inter
    return inter / union if union > 0 else 0.0


def average_precision(tp, n_pos) -> float:
    """All-point interpolated AP from a ranked TP/FP indicator vector."""
    if n_pos == 0:
        return 0.0
    tp = np.asarray(tp, dtype=np.float64)
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, tp.size + 1)
    recall = ctp / n_pos
    # precision envelope, then area under the recall steps
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mrec = np.concatenate([[0.0], recall, [recall[-1]]])
    for i in range(mpre.size - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    idx = np.flatnonzero(mrec[1:] != mrec[:-1]) + 1
    return float(np.sum((mrec[idx] - mrec[idx - 1]) * mpre[idx]))


def _group_key(seg):
    # segments pooled over several sequences carry (seq_id, Segment)
    return seg if isinstance(seg, tuple) else (0, seg)


def ap_per_class_at_iou(pred_segments, gt_segments, theta) -> dict[int, float]:
    """Greedy confidence-ordered matching; one AP per class with ground truth.

    Segments may be plain ``Segment`` objects or ``(sequence_id, Segment)``
    pairs; matching only happens within a sequence.
    """
    if not 0 < theta <= 1:
        raise InvalidThreshold(f"IoU threshold must lie in (0, 1], got {theta}")
    preds = [_group_key(s) for s in pred_segments]
    gts = [_group_key(s) for s in gt_segments]
    out = {}
    for k in sorted({g.label for _, g in gts}):
        gk = [(sid, g) for sid, g in gts if g.label == k]
        pk = [(sid, p) for sid, p in preds if p.label == k]
        pk.sort(key=lambda sp: (-sp[1].confidence, sp[0], sp[1].start))
        used = [False] * len(gk)
        tp = []
        for sid, p in pk:
            best, best_iou = -1, -1.0
            for n, (gsid, g) in enumerate(gk):
                if used[n] or gsid != sid:
                    continue
                iou = temporal_iou(p, g)
                if iou > best_iou:
                    best, best_iou = n, iou
            if best >= 0 and best_iou >= theta:
                used[best] = True
                tp.append(1)
            else:
                tp.append(0)
        out[int(k)] = average_precision(tp, len(gk))
    return out


def map_at_iou(pred_segments, gt_segments, theta) -> float:
    per = ap_per_class_at_iou(pred_segments, gt_segments, theta)
    return float(np.mean(list(per.values()))) if per else 0.0


def frame_ap_per_class(scores, gt, K=None) -> dict[int, float]:
    scores = np.asarray(scores, dtype=np.float64)
    gt = np.asarray(gt)
    if scores.shape[0] != gt.shape[0]:
        raise LengthMismatch(f"scores have {scores.shape[0]} frames, ground truth {gt.shape[0]}")
    K = scores.shape[1] if K is None else K
    out = {}
    for k in range(K):
        rel = gt == k
        if not rel.any():
            continue
        # stable sort on -score keeps earlier frames first among ties
        order = np.argsort(-scores[:, k], kind="stable")
        out[k] = average_precision(rel[order], int(rel.sum()))
    return out


def map_frame(scores, gt, K=None) -> float:
    per = frame_ap_per_class(scores, gt, K)
    return float(np.mean(list(per.values()))) if per else 0.0


@dataclass
class EvalReport:
    acc: float
    miou: float
    map_at: dict[float, float]
    map_frame: float
    iou_class: dict[int, float] = field(default_factory=dict)
    ap_class: dict[float, dict[int, float]] = field(default_factory=dict)
    ap_frame_class: dict[int, float] = field(default_factory=dict)

    def lines(self) -> list[str]:
        out = [f"acc {self.acc:.6f}", f"miou {self.miou:.6f}"]
        out += [f"map@{t:.2f} {v:.6f}" for t, v in sorted(self.map_at.items())]
        out.append(f"map_frame {self.map_frame:.6f}")
        out += [f"iou.class.{k} {v:.6f}" for k, v in sorted(self.iou_class.items())]
        for t, per in sorted(self.ap_class.items()):
            out += [f"ap@{t:.2f}.class.{k} {v:.6f}" for k, v in sorted(per.items())]
        out += [f"ap_frame.class.{k} {v:.6f}" for k, v in sorted(self.ap_frame_class.items())]
        return out

    def write(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(self.lines()) + "\n")


def evaluate_arrays(items, thresholds=(0.1, 0.5), K=None) -> EvalReport:
    """Pool a list of ``(scores T x K, gt labels)`` pairs into one report.

    Frames are pooled for Acc, mIoU and per-frame mAP; segments are pooled
    (matched within their own sequence) for mAP@IoU.
    """
    if not items:
        raise MissingPrediction("nothing to evaluate")
    all_pred, all_gt, all_scores, pseg, gseg = [], [], [], [], []
    for sid, (scores, gt) in enumerate(items):
        scores, gt = np.asarray(scores, dtype=np.float64), np.asarray(gt)
        if scores.shape[0] != gt.shape[0]:
            raise LengthMismatch(f"item {sid}: {scores.shape[0]} scored frames vs {gt.shape[0]} labels")
        pred = argmax_labels(scores)
        all_pred.append(pred)
        all_gt.append(gt)
        all_scores.append(scores)
        pseg += [(sid, s) for s in extract_segments(pred, scores)]
        gseg += [(sid, s) for s in extract_segments(gt)]
    pred, gt, scores = np.concatenate(all_pred), np.concatenate(all_gt), np.concatenate(all_scores)
    K = scores.shape[1] if K is None else K
    ap_class = {float(t): ap_per_class_at_iou(pseg, gseg, t) for t in thresholds}
    frame_ap = frame_ap_per_class(scores, gt, K)
    iou = iou_per_class(pred, gt, K)
    return EvalReport(
        acc=frame_accuracy(pred, gt),
        miou=float(np.mean(list(iou.values()))),
        map_at={t: float(np.mean(list(v.values()))) if v else 0.0 for t, v in ap_class.items()},
        map_frame=float(np.mean(list(frame_ap.values()))) if frame_ap else 0.0,
        iou_class=iou, ap_class=ap_class, ap_frame_class=frame_ap)


def argmax_labels(scores) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the smallest class id on ties
    return np.argmax(np.asarray(scores), axis=1)


def evaluate(pred_dir, gt_dir, thresholds=(0.1, 0.5), topologies=None) -> EvalReport:
    """Evaluate ``<name>.prd`` files against ``<name>.skq`` ground truth."""
    from .adapt import read_prediction
    from .core import read_untrimmed

    gt_files = sorted(f for f in os.listdir(gt_dir) if f.endswith(".skq"))
    items = []
    for f in gt_files:
        stem = f[:-4]
        ppath = os.path.join(pred_dir, stem + ".prd")
        if not os.path.exists(ppath):
            raise MissingPrediction(f"no prediction for {f} (expected {ppath})")
        gt = read_untrimmed(os.path.join(gt_dir, f), topologies).frame_labels()
        scores = read_prediction(ppath)
        if scores.shape[0] != gt.shape[0]:
            raise LengthMismatch(f"{f}: {scores.shape[0]} predicted frames vs {gt.shape[0]}")
        items.append((scores, gt))
    return evaluate_arrays(items, thresholds)
