"""Evaluation metrics: DICE overlap and average symmetric surface distance.

Surfaces use the same 4-neighbor boundary convention as the level-set core,
so one boundary definition holds across the whole package. ASD is measured in
millimeters through the mask spacing; an undefined ASD (region present in
exactly one of the two masks) is reported as NaN and excluded from aggregates
with a count, never silently zeroed.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from ._kernels import distance_to_sites
from .errors import NoDefinedSamples, ShapeMismatch
from .levelset import boundary_pixels


@dataclass
class LabelMask:
    """H x W class indices in [0, C) plus the physical pixel size in mm."""

    labels: np.ndarray
    spacing: tuple = (1.0, 1.0)


@dataclass
class SampleMetric:
    sample_id: str
    class_id: int
    dice_pct: float
    asd_mm: float  # NaN when undefined


@dataclass
class MetricReport:
    per_sample: list
    per_class: dict = field(default_factory=dict)
    overall: dict = field(default_factory=dict)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_id", "class_id", "dice_pct", "asd_mm"])
            for row in self.per_sample:
                asd = "" if math.isnan(row.asd_mm) else repr(row.asd_mm)
                w.writerow([row.sample_id, row.class_id, repr(row.dice_pct), asd])

    def format_table(self, label="overall"):
        o = self.overall
        return format_mean_std_table(
            [(label, o["mean_dice"], o["std_dice"], o["mean_asd"], o["std_asd"])]
        )


def _unpack(mask):
    if isinstance(mask, LabelMask):
        return np.asarray(mask.labels), mask.spacing
    return np.asarray(mask), (1.0, 1.0)


def _check_pair(pred, gt):
    p, sp = _unpack(pred)
    g, sg = _unpack(gt)
    if p.shape != g.shape:
        raise ShapeMismatch(f"pred {p.shape} vs gt {g.shape}")
    if tuple(sp) != tuple(sg):
        raise ShapeMismatch(f"pred spacing {sp} vs gt spacing {sg}")
    return p, g, sp


def dice_coefficient(pred, gt, class_id):
    """DICE overlap of one class between two label masks, in percent.

    When the class is absent from both masks the agreement is perfect and
    the result is 100.
    """
    p, g, _ = _check_pair(pred, gt)
    pm = p == class_id
    gm = g == class_id
    np_, ng = int(pm.sum()), int(gm.sum())
    if np_ == 0 and ng == 0:
        return 100.0
    inter = int((pm & gm).sum())
    return 100.0 * 2.0 * inter / (np_ + ng)


def asd(pred, gt, class_id):
    """Average symmetric surface distance for one class, in mm.

    Boundary pixels are extracted with the 4-neighbor rule; distances are
    exact Euclidean between pixel centers, scaled by spacing. Returns 0.0
    when the class is absent from both masks, and NaN (undefined) when it is
    absent from exactly one.
    """
    p, g, spacing = _check_pair(pred, gt)
    pm = p == class_id
    gm = g == class_id
    if not pm.any() and not gm.any():
        return 0.0
    if not pm.any() or not gm.any():
        return float("nan")
    sp = boundary_pixels(pm)
    sg = boundary_pixels(gm)
    dist_to_g = distance_to_sites(sg, spacing)
    dist_to_p = distance_to_sites(sp, spacing)
    total = dist_to_g[sp].sum() + dist_to_p[sg].sum()
    return float(total / (int(sp.sum()) + int(sg.sum())))


def _mean_std(values):
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())  # population std


def aggregate(rows):
    """Aggregate per-sample rows into per-class and overall mean +/- std.

    Undefined ASD rows are excluded from the ASD aggregates and counted.
    The overall figures are means over the per-class aggregates.
    """
    rows = list(rows)
    if not rows:
        raise NoDefinedSamples("no per-sample metric rows to aggregate")
    per_class = {}
    for cid in sorted({r.class_id for r in rows}):
        sub = [r for r in rows if r.class_id == cid]
        dice_m, dice_s = _mean_std([r.dice_pct for r in sub])
        defined = [r.asd_mm for r in sub if not math.isnan(r.asd_mm)]
        und = len(sub) - len(defined)
        if defined:
            asd_m, asd_s = _mean_std(defined)
        else:
            asd_m, asd_s = float("nan"), float("nan")
        per_class[cid] = {
            "mean_dice": dice_m,
            "std_dice": dice_s,
            "mean_asd": asd_m,
            "std_asd": asd_s,
            "n": len(sub),
            "asd_undefined_count": und,
        }
    cls = list(per_class.values())
    overall = {
        "mean_dice": float(np.mean([c["mean_dice"] for c in cls])),
        "std_dice": float(np.mean([c["std_dice"] for c in cls])),
        "mean_asd": float(np.nanmean([c["mean_asd"] for c in cls])),
        "std_asd": float(np.nanmean([c["std_asd"] for c in cls])),
        "asd_undefined_count": int(sum(c["asd_undefined_count"] for c in cls)),
    }
    return MetricReport(per_sample=rows, per_class=per_class, overall=overall)


def format_mean_std_table(rows, headers=("Method", "DICE (%)", "ASD (mm)")):
    """Text table with 'mean +/- std' cells, one row per (label, dm, ds, am, as)."""
    lines = []
    cells = [list(headers)]
    for label, dm, ds, am, asd_s in rows:
        cells.append([str(label), _pm(dm, ds), _pm(am, asd_s)])
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    for i, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("-" * len(lines[0]))
    return "\n".join(lines)


def _pm(mean, std):
    if math.isnan(mean):
        return "undefined"
    return f"{mean:.2f} ± {std:.2f}"
