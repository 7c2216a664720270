"""Evaluation metrics: L1, windowed SSIM, box IoU, character accuracy.

SSIM uses uniform 8x8 windows at stride 4 on the [0,1] remapping of the
inputs, with C1 = 0.01**2 and C2 = 0.03**2 (dynamic range 1). Uniform
windows keep the oracle closed-form; Gaussian weighting is deliberately
out of scope. FID and LPIPS need pretrained feature extractors, so the
report schema reserves their columns but never fills them.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .glyphgen import CharBox

SSIM_WINDOW = 8
SSIM_STRIDE = 4
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def l1(a: np.ndarray, b: np.ndarray) -> float:
    """Mean absolute difference over the [-1, 1] pixel representation."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.abs(a.astype(np.float64) - b.astype(np.float64)).mean())


def _windows(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    rows = range(0, h - SSIM_WINDOW + 1, SSIM_STRIDE)
    cols = range(0, w - SSIM_WINDOW + 1, SSIM_STRIDE)
    return np.stack(
        [img[y : y + SSIM_WINDOW, x : x + SSIM_WINDOW].ravel() for y in rows for x in cols]
    )


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity over uniform windows; symmetric in (a, b)."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"image {a.shape} smaller than {SSIM_WINDOW}x{SSIM_WINDOW} window")
    wa = _windows((a.astype(np.float64) + 1.0) / 2.0)
    wb = _windows((b.astype(np.float64) + 1.0) / 2.0)
    mu_a = wa.mean(axis=1)
    mu_b = wb.mean(axis=1)
    var_a = wa.var(axis=1)
    var_b = wb.var(axis=1)
    cov = (wa * wb).mean(axis=1) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float((num / den).mean())


def box_iou(a: CharBox, b: CharBox) -> float:
    ix = max(0, min(a.x1, b.x1) - max(a.x0, b.x0))
    iy = max(0, min(a.y1, b.y1) - max(a.y0, b.y0))
    inter = ix * iy
    union = a.width * a.height + b.width * b.height - inter
    return inter / union if union else 0.0


def mean_box_iou(pred: list[CharBox], truth: list[CharBox]) -> float:
    """Greedy one-to-one matching by descending IoU; unmatched boxes score 0."""
    if not pred and not truth:
        return 1.0
    if not pred or not truth:
        return 0.0
    iou = np.array([[box_iou(p, t) for t in truth] for p in pred])
    total = 0.0
    for _ in range(min(len(pred), len(truth))):
        i, j = np.unravel_index(np.argmax(iou), iou.shape)
        if iou[i, j] <= 0:
            break
        total += float(iou[i, j])
        iou[i, :] = -1.0
        iou[:, j] = -1.0
    return total / max(len(pred), len(truth))


def char_accuracy(pred: list[int], truth: list[int]) -> tuple[float, float]:
    """(positionwise match fraction, exact-sequence indicator)."""
    if len(pred) != len(truth):
        raise ValueError(f"length mismatch {len(pred)} vs {len(truth)}")
    hits = sum(1 for p, t in zip(pred, truth) if p == t)
    frac = hits / len(truth) if truth else 1.0
    return frac, float(hits == len(truth))


@dataclass
class EvalReport:
    """Per-sample rows plus aggregate means; LPIPS/FID columns stay empty."""

    rows: list[dict]

    FIELDS = ("index", "l1", "ssim", "box_iou", "char_acc", "seq_acc", "lpips", "fid")
    _METRICS = ("l1", "ssim", "box_iou", "char_acc", "seq_acc")

    def aggregate(self) -> dict:
        agg: dict = {"index": "mean"}
        for key in self._METRICS:
            vals = [r[key] for r in self.rows if key in r and r[key] is not None]
            agg[key] = float(np.mean(vals)) if vals else None
        return agg

    def write(self, path: str) -> None:
        def fmt(row: dict) -> str:
            out = []
            for f in self.FIELDS:
                v = row.get(f)
                if v is None:
                    out.append("")
                elif isinstance(v, float):
                    out.append(f"{v:.6f}")
                else:
                    out.append(str(v))
            return ",".join(out)

        lines = [",".join(self.FIELDS)]
        lines += [fmt(r) for r in self.rows]
        lines.append(fmt(self.aggregate()))
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="ascii", newline="") as f:
            f.write("\n".join(lines) + "\n")
        os.replace(tmp, path)
