"""Binary segmentation metrics and per-center evaluation reports.

Per-image scores are computed from pixel confusion counts and averaged per
image (not pooled over pixels). Empty-mask convention: when both prediction
and ground truth are empty every metric is 1; when exactly one is empty IoU
and Dice are 0 and an undefined ratio counts as 0.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .tensor import Tensor

METRIC_NAMES = ("iou", "dsc", "recall", "precision", "f2")
TABLE_COLUMNS = ("mIoU", "mDSC", "Recall", "Precision", "F2")


def binarize(pred, threshold: float = 0.5) -> np.ndarray:
    """``pred >= threshold`` as a uint8 mask."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    arr = pred.data if isinstance(pred, Tensor) else np.asarray(pred)
    return (arr >= threshold).astype(np.uint8)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(pred_mask: np.ndarray, gt_mask: np.ndarray) -> ConfusionCounts:
    pred_mask = np.asarray(pred_mask)
    gt_mask = np.asarray(gt_mask)
    if pred_mask.shape != gt_mask.shape:
        raise ValueError(f"confusion shape mismatch: pred {pred_mask.shape} vs gt {gt_mask.shape}")
    for label, m in (("prediction", pred_mask), ("ground truth", gt_mask)):
        if not np.all((m == 0) | (m == 1)):
            raise ValueError(f"{label} mask is not binary")
    p = pred_mask.astype(bool)
    g = gt_mask.astype(bool)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionCounts(tp, fp, fn, p.size - tp - fp - fn)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def compute_metrics(c: ConfusionCounts) -> Dict[str, float]:
    if c.tp + c.fp + c.fn == 0:
        return {k: 1.0 for k in METRIC_NAMES}
    precision = _ratio(c.tp, c.tp + c.fp)
    recall = _ratio(c.tp, c.tp + c.fn)
    return {
        "iou": _ratio(c.tp, c.tp + c.fp + c.fn),
        "dsc": _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn),
        "recall": recall,
        "precision": precision,
        "f2": _ratio(5 * precision * recall, 4 * precision + recall),
    }


@dataclass
class ImageRecord:
    id: str
    center: Optional[str]
    iou: float
    dsc: float
    recall: float
    precision: float
    f2: float

    def values(self) -> Tuple[float, ...]:
        return tuple(getattr(self, k) for k in METRIC_NAMES)


def _mean(records: Sequence[ImageRecord]) -> Dict[str, float]:
    if not records:
        return {k: float("nan") for k in METRIC_NAMES}
    return {k: float(np.mean([getattr(r, k) for r in records])) for k in METRIC_NAMES}


@dataclass
class MetricsReport:
    records: List[ImageRecord]
    fps: Optional[float] = None
    parameters: Optional[int] = None
    macs: Optional[int] = None

    @property
    def overall(self) -> Dict[str, float]:
        return _mean(self.records)

    @property
    def centers(self) -> List[str]:
        seen: List[str] = []
        for r in self.records:
            c = r.center or "untagged"
            if c not in seen:
                seen.append(c)
        return seen

    def per_center(self) -> Dict[str, Dict[str, float]]:
        return {c: _mean([r for r in self.records if (r.center or "untagged") == c]) for c in self.centers}

    def center_sizes(self) -> Dict[str, int]:
        return {c: sum(1 for r in self.records if (r.center or "untagged") == c) for c in self.centers}

    # serialization ------------------------------------------------------
    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("id", "center") + METRIC_NAMES)
        for r in self.records:
            writer.writerow((r.id, r.center or "") + tuple(repr(v) for v in r.values()))
        return buf.getvalue()

    def write_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())

    def format_table(self, method: str = "TransNetR", dataset: str = "dataset", train_name: Optional[str] = None) -> str:
        """Human-readable, sectioned like the per-center result tables.

        One "(All)" section followed by one section per center when the
        report spans more than one center.
        """
        sections = [("All", self.overall)]
        if len(self.centers) > 1 or self.centers != ["untagged"]:
            sections += list(self.per_center().items())
        lines = []
        for name, agg in sections:
            title = f"Test dataset: {dataset} ({name})"
            if train_name:
                title = f"Training dataset: {train_name} -- {title}"
            lines.append(title)
            lines.append(format_rows([(method, agg)]))
            lines.append("")
        return "\n".join(lines).rstrip() + "\n"


def format_rows(
    rows: Sequence[Tuple[str, Dict[str, float]]],
    columns: Sequence[str] = TABLE_COLUMNS,
    extra: Sequence[Tuple[str, Sequence[str]]] = (),
) -> str:
    """``Method | mIoU | ...`` table with four-decimal scores.

    ``extra`` appends preformatted columns as (header, one value per row).
    """
    key_for = dict(zip(TABLE_COLUMNS, METRIC_NAMES))
    width = max([len("Method")] + [len(label) for label, _ in rows])
    head = " | ".join([f"{'Method':<{width}}"] + [f"{c:>9}" for c in columns] + [f"{h:>10}" for h, _ in extra])
    sep = "-" * len(head)
    body = []
    for i, (label, agg) in enumerate(rows):
        cells = [f"{label:<{width}}"] + [f"{agg[key_for[c]]:>9.4f}" for c in columns]
        cells += [f"{vals[i]:>10}" for _, vals in extra]
        body.append(" | ".join(cells))
    return "\n".join([head, sep] + body)


def records_from_masks(ids: Iterable[str], centers: Iterable[Optional[str]], preds, gts) -> List[ImageRecord]:
    out = []
    for sid, center, p, g in zip(ids, centers, preds, gts):
        m = compute_metrics(confusion(p, g))
        out.append(ImageRecord(sid, center, **m))
    return out


def evaluate(source, dataset, threshold: float = 0.5, resolution: Optional[Tuple[int, int]] = None, batch_size: int = 8) -> MetricsReport:
    """Score a model or a directory of prediction masks against ``dataset``.

    ``source`` is either a model (run in eval mode at ``resolution``, default
    the model's training resolution) or a path holding ``<sample id>.png``
    predictions, in which case scores are recomputed at ground-truth
    resolution.
    """
    from .data import Sample, load_sample, resize_sample

    def _load(r):
        if isinstance(r, Sample):
            return r if r.mask.shape == tuple(res) else resize_sample(r, res)
        return load_sample(r, res)

    if isinstance(source, (str, os.PathLike)):
        return _evaluate_masks(os.fspath(source), dataset, threshold)
    from .infer import predict

    res = resolution or source.config.train_resolution
    records = []
    recs = list(dataset)
    for start in range(0, len(recs), batch_size):
        chunk = [_load(r) for r in recs[start : start + batch_size]]
        probs = predict(source, np.stack([s.image for s in chunk]))
        for s, p in zip(chunk, probs):
            m = compute_metrics(confusion(binarize(p[0], threshold), s.mask))
            records.append(ImageRecord(s.id, s.center, **m))
    return MetricsReport(records)


def prediction_path(pred_dir: str, sample_id: str) -> Optional[str]:
    from .data import IMAGE_EXTENSIONS

    for ext in IMAGE_EXTENSIONS:
        path = os.path.join(pred_dir, sample_id + ext)
        if os.path.exists(path):
            return path
    return None


def _evaluate_masks(pred_dir: str, dataset, threshold: float) -> MetricsReport:
    from PIL import Image

    from .data import load_sample, nearest_resize

    records = []
    for rec in dataset:
        path = prediction_path(pred_dir, rec.id)
        if path is None:
            raise FileNotFoundError(f"missing prediction for sample {rec.id!r} under {pred_dir}")
        s = load_sample(rec)
        with Image.open(path) as im:
            pred = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
        mask = binarize(pred, threshold)
        if mask.shape != s.mask.shape:
            mask = nearest_resize(mask, *s.mask.shape)
        records.append(ImageRecord(s.id, s.center, **compute_metrics(confusion(mask, s.mask))))
    return MetricsReport(records)
