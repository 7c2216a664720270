"""Procedural pseudo-glyph corpus: alphabet, strip rendering, preprocessing.

A glyph id maps to a fixed stroke program (3-6 line/quadratic strokes on a
7x7 control lattice) derived deterministically from the alphabet seed, so
every render is reproducible and recognition is exactly scorable. Strips
are horizontal: N slots of ``slot_px`` square cells, each holding one
styled glyph; a box map marks the tight per-glyph bounding boxes as filled
rectangles.

The ingestion half mirrors a scan-processing pipeline: group annotated
boxes into columns by x-center, sample a contiguous window, crop with
padding, binarize with automatic polarity detection, and normalize to
foreground = +1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from functools import lru_cache
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy import ndimage

from .errors import BinarizationError, GlyphflowError
from .imageio import blank, resize_nearest, validate_image
from .streams import derive_rng

DEFAULT_GLYPH_SEED = 20108

_PROGRAM_KEY = 101   # sub-stream for stroke programs
_JITTER_KEY = 102    # sub-stream for style jitter offsets


class Polarity(Enum):
    LIGHT_ON_DARK = "light-on-dark"
    DARK_ON_LIGHT = "dark-on-light"


class Source(Enum):
    REAL = "real"
    SYNTHETIC = "synthetic"


# ── Domain types ────────────────────────────────────────────────────────


@dataclass(frozen=True, order=True)
class CharBox:
    """Half-open integer pixel box: [x0, x1) x [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        for v in (self.x0, self.y0, self.x1, self.y1):
            if not isinstance(v, (int, np.integer)):
                raise ValueError(f"box coordinates must be integers, got {v!r}")
        if not (0 <= self.x0 < self.x1 and 0 <= self.y0 < self.y1):
            raise ValueError(f"degenerate box {self}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    def validate_in(self, h: int, w: int) -> None:
        if self.x1 > w or self.y1 > h:
            raise ValueError(f"box {self} exceeds {h}x{w} canvas")

    def shift(self, dx: int, dy: int) -> "CharBox":
        return CharBox(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)

    def transpose(self) -> "CharBox":
        return CharBox(self.y0, self.x0, self.y1, self.x1)


@dataclass(frozen=True)
class StyleParams:
    """Rendering style; style_id 0 with no slant/jitter is canonical."""

    style_id: int
    slant: float = 0.0       # radians, shear about the glyph center
    thickness: float = 2.0   # stroke width in px, >= 1
    jitter: float = 0.0      # control-point displacement bound in px
    ligature: bool = False

    def __post_init__(self):
        if self.thickness < 1:
            raise ValueError(f"thickness {self.thickness} must be >= 1 px")
        if self.jitter < 0:
            raise ValueError(f"jitter {self.jitter} must be >= 0 px")


CANONICAL_STYLE = StyleParams(style_id=0)

_SLANTS = (0.0, 0.12, -0.15, 0.22, 0.0, -0.25, 0.18, -0.08)
_THICKNESS = (2.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0, 2.0)
_JITTERS = (0.0, 0.8, 1.2, 0.6, 1.5, 1.0, 1.3, 0.7)


def style_preset(style_id: int, n_styles: int = 8) -> StyleParams:
    """Deterministic style bank; id 0 is always the canonical style."""
    if not 0 <= style_id < n_styles:
        raise ValueError(f"style_id {style_id} out of range [0, {n_styles})")
    k = style_id % 8
    bump = 0.03 * (style_id // 8)
    return StyleParams(
        style_id=style_id,
        slant=_SLANTS[k] + bump,
        thickness=_THICKNESS[k],
        jitter=_JITTERS[k],
        ligature=False,
    )


@dataclass(frozen=True)
class ConditionVector:
    """Four-part discrete condition: source, polarity, style, script."""

    source: Source
    polarity: Polarity
    style_id: int
    script_id: int


def build_conditions(
    source: Source,
    polarity: Polarity,
    style_id: int,
    script_id: int,
    n_styles: int = 8,
    n_scripts: int = 5,
) -> ConditionVector:
    if not isinstance(source, Source) or not isinstance(polarity, Polarity):
        raise ValueError("source/polarity must be enum members")
    if not 0 <= style_id < n_styles:
        raise ValueError(f"style_id {style_id} out of range [0, {n_styles})")
    if not 0 <= script_id < n_scripts:
        raise ValueError(f"script_id {script_id} out of range [0, {n_scripts})")
    return ConditionVector(source, polarity, style_id, script_id)


@dataclass(frozen=True)
class CorpusConfig:
    """Geometry and vocabulary of the corpus."""

    alphabet_size: int = 64
    n_styles: int = 8
    n_scripts: int = 5
    n_slots: int = 5
    slot_px: int = 32
    glyph_seed: int = DEFAULT_GLYPH_SEED

    @property
    def strip_h(self) -> int:
        return self.slot_px

    @property
    def strip_w(self) -> int:
        return self.n_slots * self.slot_px


@dataclass
class Sample:
    """One training instance: strip + content canvas + box map + metadata."""

    strip: np.ndarray
    content: np.ndarray
    box_map: np.ndarray
    boxes: tuple[CharBox, ...]
    labels: tuple[int, ...] | None
    cond: ConditionVector
    labeled: bool


def validate_sample(s: Sample, n_slots: int | None = None) -> None:
    h, w = s.strip.shape
    for img in (s.strip, s.content, s.box_map):
        validate_image(img)
        if img.shape != (h, w):
            raise ValueError(f"sample images disagree on shape: {img.shape} vs {(h, w)}")
    if s.labeled != (s.labels is not None):
        raise ValueError("labeled flag inconsistent with labels")
    if n_slots is not None and len(s.boxes) != n_slots:
        raise ValueError(f"expected {n_slots} boxes, got {len(s.boxes)}")
    for b in s.boxes:
        b.validate_in(h, w)
    ordered = sorted(s.boxes)
    for a, b in zip(ordered, ordered[1:]):
        if a.x1 > b.x0 and a.x0 < b.x1 and a.y1 > b.y0 and a.y0 < b.y1:
            raise ValueError(f"overlapping boxes {a} and {b}")


# ── Stroke programs and glyph rendering ─────────────────────────────────

_LATTICE = 7  # control lattice is 7x7


def _curve_points(pts: np.ndarray, n: int) -> np.ndarray:
    """Sample a line / quadratic / cubic Bezier given 2-4 control points."""
    t = np.linspace(0.0, 1.0, n)[:, None]
    k = len(pts)
    if k == 2:
        return pts[0] + t * (pts[1] - pts[0])
    if k == 3:
        return ((1 - t) ** 2) * pts[0] + 2 * t * (1 - t) * pts[1] + (t**2) * pts[2]
    if k == 4:
        return (
            ((1 - t) ** 3) * pts[0]
            + 3 * t * ((1 - t) ** 2) * pts[1]
            + 3 * (t**2) * (1 - t) * pts[2]
            + (t**3) * pts[3]
        )
    raise ValueError(f"unsupported control point count {k}")


@lru_cache(maxsize=32)
def _disc_offsets(radius_q: int) -> np.ndarray:
    """Integer offsets within `radius_q / 4` px of the origin (cached)."""
    r = radius_q / 4.0
    m = int(math.ceil(r))
    dy, dx = np.mgrid[-m : m + 1, -m : m + 1]
    keep = dy * dy + dx * dx <= r * r + 1e-9
    return np.stack([dy[keep], dx[keep]], axis=1)


def _stamp(mask: np.ndarray, points: np.ndarray, radius: float) -> None:
    """Mark every pixel within `radius` of any sampled path point."""
    h, w = mask.shape
    ipts = np.rint(points).astype(np.int64)
    offs = _disc_offsets(int(round(radius * 4)))
    px = (ipts[:, None, :] + offs[None, :, :]).reshape(-1, 2)
    ok = (px[:, 0] >= 0) & (px[:, 0] < h) & (px[:, 1] >= 0) & (px[:, 1] < w)
    px = px[ok]
    mask[px[:, 0], px[:, 1]] = True


def _draw_stroke(
    mask: np.ndarray, ctrl_px: np.ndarray, thickness: float, size: int
) -> None:
    # cap the pen so small canvases cannot flood past the coverage bound
    eff = min(float(thickness), max(1.0, size / 5.0))
    span = np.abs(ctrl_px[-1] - ctrl_px[0]).sum() + 1.0
    pts = _curve_points(ctrl_px, n=max(8, int(3 * span)))
    _stamp(mask, pts, radius=eff / 2.0)


FRACTION_LO = 0.05
FRACTION_HI = 0.6


def _render_mask(strokes_px: list[np.ndarray], size: int, radius: float) -> np.ndarray:
    mask = np.zeros((size, size), dtype=bool)
    for px in strokes_px:
        span = np.abs(px[-1] - px[0]).sum() + 1.0
        pts = _curve_points(px, n=max(8, int(3 * span)))
        _stamp(mask, pts, radius)
    return mask


class Alphabet:
    """Seed-deterministic pseudo-glyph alphabet.

    Each id owns a stroke program; rendering a glyph is a pure function of
    (id, style, seed, size). The canonical atlas is cached per size and
    checked for pairwise separability the first time it is built.
    """

    def __init__(self, size: int = 64, seed: int = DEFAULT_GLYPH_SEED):
        if size < 2:
            raise ValueError("alphabet needs at least 2 glyphs")
        self.size = size
        self.seed = seed
        self._programs: dict[int, list[np.ndarray]] = {}
        self._atlases: dict[int, np.ndarray] = {}

    def program(self, gid: int) -> list[np.ndarray]:
        """Stroke program for a glyph: list of lattice control-point arrays."""
        if not 0 <= gid < self.size:
            raise ValueError(f"glyph id {gid} out of range [0, {self.size})")
        cached = self._programs.get(gid)
        if cached is not None:
            return cached
        rng = derive_rng(self.seed, _PROGRAM_KEY, gid)
        strokes: list[np.ndarray] = []
        n_strokes = int(rng.integers(3, 7))
        for k in range(n_strokes):
            if k == 0:
                # anchor stroke spans the lattice so coverage never collapses
                axis = int(rng.integers(0, 2))
                p0 = rng.integers(0, _LATTICE, size=2)
                p1 = rng.integers(0, _LATTICE, size=2)
                p0[axis] = int(rng.integers(0, 2))
                p1[axis] = int(rng.integers(_LATTICE - 2, _LATTICE))
            else:
                while True:
                    p0 = rng.integers(0, _LATTICE, size=2)
                    p1 = rng.integers(0, _LATTICE, size=2)
                    if np.abs(p1 - p0).max() >= 2:
                        break
            if rng.uniform() < 0.5:
                ctrl = rng.integers(0, _LATTICE, size=2)
                strokes.append(np.stack([p0, ctrl, p1]).astype(np.float64))
            else:
                strokes.append(np.stack([p0, p1]).astype(np.float64))
        self._programs[gid] = strokes
        return strokes

    def render_glyph(self, gid: int, style: StyleParams, size: int) -> np.ndarray:
        """Render one glyph into a square [-1, 1] image (ink = +1)."""
        if size < 8:
            raise ValueError(f"glyph size {size} too small (minimum 8)")
        if style.thickness < 1:
            raise ValueError(f"degenerate thickness {style.thickness}")
        if style.thickness >= size / 2:
            raise ValueError(f"thickness {style.thickness} too large for size {size}")
        strokes = self.program(gid)
        margin = size / 8.0
        scale = (size - 1 - 2 * margin) / (_LATTICE - 1)
        jit = None
        if style.jitter > 0:
            jit = derive_rng(self.seed, _JITTER_KEY, gid, style.style_id)
        cy = (size - 1) / 2.0
        shear = math.tan(style.slant)
        strokes_px = []
        for ctrl in strokes:
            px = margin + ctrl * scale  # lattice (y, x) -> pixel coords
            if jit is not None:
                px = px + jit.uniform(-style.jitter, style.jitter, size=px.shape)
            px = px.copy()
            px[:, 1] += shear * (cy - px[:, 0])
            strokes_px.append(px)
        # pen width adapts (deterministically) so ink coverage stays inside
        # [FRACTION_LO, FRACTION_HI] at every size
        radius = min(float(style.thickness), max(1.0, size / 5.0)) / 2.0
        mask = _render_mask(strokes_px, size, radius)
        while mask.mean() < FRACTION_LO and radius < size:
            radius += 0.5
            mask = _render_mask(strokes_px, size, radius)
        while mask.mean() > FRACTION_HI and radius > 0.25:
            radius = max(0.25, radius - 0.25)
            mask = _render_mask(strokes_px, size, radius)
        frac = mask.mean()
        if not FRACTION_LO <= frac <= FRACTION_HI:
            raise GlyphflowError(
                f"glyph {gid} coverage {frac:.3f} escapes "
                f"[{FRACTION_LO}, {FRACTION_HI}] at size {size}"
            )
        return np.where(mask, 1.0, -1.0).astype(np.float32)

    def canonical_atlas(self, size: int) -> np.ndarray:
        """(V, size, size) canonical renders; verifies pairwise separability."""
        atlas = self._atlases.get(size)
        if atlas is None:
            atlas = np.stack(
                [self.render_glyph(g, CANONICAL_STYLE, size) for g in range(self.size)]
            )
            if self.min_pairwise_l1(atlas) <= 0.0:
                raise GlyphflowError(
                    f"alphabet seed {self.seed} yields duplicate glyphs at size {size}"
                )
            self._atlases[size] = atlas
        return atlas

    @staticmethod
    def min_pairwise_l1(atlas: np.ndarray) -> float:
        flat = atlas.reshape(len(atlas), -1)
        best = np.inf
        for i in range(len(flat)):
            d = np.abs(flat[i + 1 :] - flat[i]).mean(axis=1)
            if len(d):
                best = min(best, float(d.min()))
        return best


# ── Strip / canvas / box-map rendering ──────────────────────────────────


def render_content_canvas(
    alphabet: Alphabet, ids: Sequence[int], slot_px: int = 32
) -> np.ndarray:
    """Concatenate canonical renders left-to-right, one slot per id."""
    canvas = blank(slot_px, slot_px * len(ids))
    for k, gid in enumerate(ids):
        canvas[:, k * slot_px : (k + 1) * slot_px] = alphabet.render_glyph(
            gid, CANONICAL_STYLE, slot_px
        )
    return canvas


def render_strip(
    alphabet: Alphabet,
    ids: Sequence[int],
    style: StyleParams,
    rng: np.random.Generator,
    slot_px: int = 32,
) -> tuple[np.ndarray, list[CharBox]]:
    """Render a styled strip plus tight per-glyph boxes.

    Placement jitter (scale and offset) is active only for styles with
    jitter > 0, so the canonical style reproduces the content canvas
    exactly. Boxes are computed before any ligature ink is added: ink may
    connect neighbours, boxes never do.
    """
    n = len(ids)
    h, w = slot_px, slot_px * n
    img = blank(h, w)
    boxes: list[CharBox] = []
    for k, gid in enumerate(ids):
        if style.jitter > 0:
            lo = max(0.82, 8.0 / slot_px)
            gsize = int(round(slot_px * rng.uniform(lo, 1.0)))
            room = slot_px - gsize
            max_off = min(2.0 * style.jitter, max(0.0, room / 2.0 - 1.0))
            oy, ox = rng.uniform(-max_off, max_off, size=2)
        else:
            gsize, room, oy, ox = slot_px, 0, 0.0, 0.0
        glyph = alphabet.render_glyph(gid, style, gsize)
        y0 = int(round(room / 2.0 + oy))
        x0 = k * slot_px + int(round(room / 2.0 + ox))
        y0 = min(max(y0, 0), slot_px - gsize)
        x0 = min(max(x0, k * slot_px), (k + 1) * slot_px - gsize)
        region = img[y0 : y0 + gsize, x0 : x0 + gsize]
        np.maximum(region, glyph, out=region)
        ys, xs = np.nonzero(glyph > 0)
        boxes.append(
            CharBox(
                x0 + int(xs.min()),
                y0 + int(ys.min()),
                x0 + int(xs.max()) + 1,
                y0 + int(ys.max()) + 1,
            )
        )
    if style.ligature:
        for a, b in zip(boxes, boxes[1:]):
            _draw_connector(img, a, b, style.thickness, slot_px)
    return img, boxes


def _draw_connector(
    img: np.ndarray, a: CharBox, b: CharBox, thickness: float, slot_px: int
) -> None:
    """Cubic connector from a's right-center to b's left-center."""
    p0 = np.array([(a.y0 + a.y1) / 2.0, a.x1 - 0.5])
    p3 = np.array([(b.y0 + b.y1) / 2.0, b.x0 - 0.5])
    dx = (p3[1] - p0[1]) / 3.0
    bow = slot_px / 8.0
    p1 = np.array([p0[0] + bow, p0[1] + dx])
    p2 = np.array([p3[0] + bow, p3[1] - dx])
    mask = img > 0
    _draw_stroke(mask, np.stack([p0, p1, p2, p3]), thickness, slot_px)
    np.copyto(img, np.where(mask, 1.0, img).astype(np.float32))


def rasterize_box_map(boxes: Sequence[CharBox], h: int, w: int) -> np.ndarray:
    """Filled-rectangle map: +1 inside any box, -1 outside, no anti-aliasing."""
    img = blank(h, w)
    for b in boxes:
        b.validate_in(h, w)
        img[b.y0 : b.y1, b.x0 : b.x1] = 1.0
    return img


def extract_boxes(box_map: np.ndarray, threshold: float = 0.0) -> list[CharBox]:
    """Boxes of 4-connected foreground components, sorted by (x0, y0)."""
    validate_image(box_map)
    if not -1.0 < threshold < 1.0:
        raise ValueError(f"threshold {threshold} outside (-1, 1)")
    fg = box_map > threshold
    labels, count = ndimage.label(fg)  # default structure = 4-connectivity
    out = []
    for sl_y, sl_x in ndimage.find_objects(labels):
        out.append(CharBox(sl_x.start, sl_y.start, sl_x.stop, sl_y.stop))
    out.sort(key=lambda b: (b.x0, b.y0))
    return out


# ── Column extraction and windowing ─────────────────────────────────────


def cluster_columns(boxes: Sequence[CharBox], gap: float | None = None) -> list[list[int]]:
    """Group box indices into columns by x-center, single-linkage.

    ``gap`` defaults to 0.6x the median box width. Within a column the
    indices are sorted by y0; columns are ordered by mean x-center.
    """
    if not boxes:
        return []
    if gap is None:
        gap = 0.6 * float(np.median([b.width for b in boxes]))
    if gap <= 0:
        raise ValueError(f"gap must be positive, got {gap}")
    centers = np.array([(b.x0 + b.x1) / 2.0 for b in boxes])
    order = np.argsort(centers, kind="stable")
    groups: list[list[int]] = [[int(order[0])]]
    for i in order[1:]:
        prev = groups[-1][-1]
        if centers[i] - centers[prev] <= gap:
            groups[-1].append(int(i))
        else:
            groups.append([int(i)])
    for g in groups:
        g.sort(key=lambda i: (boxes[i].y0, boxes[i].x0))
    return groups


def sample_window(column: Sequence[int], n: int, rng: np.random.Generator) -> list[int]:
    """Uniformly placed contiguous run of n indices from one column."""
    if len(column) < n:
        raise ValueError(f"column of {len(column)} boxes cannot yield a window of {n}")
    start = int(rng.integers(0, len(column) - n + 1))
    return list(column[start : start + n])


def crop_with_padding(
    image: np.ndarray, boxes: Sequence[CharBox], pad: int
) -> tuple[np.ndarray, list[CharBox]]:
    """Crop to the union box expanded by pad (clamped); shift boxes along."""
    if not boxes:
        raise ValueError("need at least one box to crop")
    validate_image(image)
    h, w = image.shape
    x0 = max(0, min(b.x0 for b in boxes) - pad)
    y0 = max(0, min(b.y0 for b in boxes) - pad)
    x1 = min(w, max(b.x1 for b in boxes) + pad)
    y1 = min(h, max(b.y1 for b in boxes) + pad)
    crop = image[y0:y1, x0:x1].copy()
    return crop, [b.shift(-x0, -y0) for b in boxes]


# ── Binarization with polarity detection ────────────────────────────────


def _ratio_score(frac: float) -> float:
    """Peaks at foreground fractions in [0.05, 0.35], 0 at 0 and beyond 0.6."""
    if frac <= 0.0 or frac >= 0.6:
        return 0.0
    if frac < 0.05:
        return frac / 0.05
    if frac <= 0.35:
        return 1.0
    return (0.6 - frac) / 0.25


def binarize_with_polarity(image: np.ndarray) -> tuple[np.ndarray, Polarity]:
    """Choose ink polarity by scoring both threshold candidates.

    Candidates are the pixels strictly above / below the median. Each is
    scored 0.5 * ratio_score + 0.5 * edge_score, where edge_score is the
    fraction of high-gradient pixels (central-difference magnitude above
    its own 90th percentile) falling inside a 1-px dilation of the mask.
    The winner is returned normalized to foreground = +1; the polarity flag
    reports the original image's ink brightness. Ties fall back to the
    smaller mask, then to byte order, which keeps the choice invariant
    under pixel inversion.
    """
    validate_image(image)
    med = float(np.percentile(image, 50))
    if image.max() == image.min():
        raise BinarizationError("constant image: polarity indeterminate")
    cand_above = image > med
    cand_below = image < med
    gy, gx = np.gradient(image.astype(np.float64))
    gmag = np.hypot(gx, gy)
    high = gmag > np.percentile(gmag, 90)
    n_high = int(high.sum())

    def edge_score(mask: np.ndarray) -> float:
        if n_high == 0:
            return 0.0
        dil = ndimage.binary_dilation(mask, structure=np.ones((3, 3), dtype=bool))
        return float((high & dil).sum()) / n_high

    def score(mask: np.ndarray) -> float:
        return 0.5 * _ratio_score(float(mask.mean())) + 0.5 * edge_score(mask)

    s_above, s_below = score(cand_above), score(cand_below)
    if s_above != s_below:
        pick_above = s_above > s_below
    elif cand_above.sum() != cand_below.sum():
        pick_above = cand_above.sum() < cand_below.sum()
    else:
        pick_above = cand_above.tobytes() <= cand_below.tobytes()
    mask = cand_above if pick_above else cand_below
    polarity = Polarity.LIGHT_ON_DARK if pick_above else Polarity.DARK_ON_LIGHT
    return np.where(mask, 1.0, -1.0).astype(np.float32), polarity


# ── Synthesis and source mixing ─────────────────────────────────────────


def synth_sample(
    alphabet: Alphabet,
    rng: np.random.Generator,
    cfg: CorpusConfig,
    ligature_rate: float = 0.0,
    labeled: bool = True,
) -> Sample:
    """Draw a fresh synthetic Sample (ids, style, script, polarity)."""
    ids = tuple(int(g) for g in rng.integers(0, cfg.alphabet_size, size=cfg.n_slots))
    style_id = int(rng.integers(0, cfg.n_styles))
    script_id = int(rng.integers(0, cfg.n_scripts))
    style = style_preset(style_id, cfg.n_styles)
    if rng.uniform() < ligature_rate:
        style = replace(style, ligature=True)
    polarity = Polarity.LIGHT_ON_DARK if rng.uniform() < 0.5 else Polarity.DARK_ON_LIGHT
    strip, boxes = render_strip(alphabet, ids, style, rng, cfg.slot_px)
    if polarity is Polarity.DARK_ON_LIGHT:
        strip = (-strip).astype(np.float32)
    content = render_content_canvas(alphabet, ids, cfg.slot_px)
    box_map = rasterize_box_map(boxes, cfg.strip_h, cfg.strip_w)
    cond = build_conditions(
        Source.SYNTHETIC, polarity, style_id, script_id, cfg.n_styles, cfg.n_scripts
    )
    sample = Sample(
        strip=strip,
        content=content if labeled else blank(cfg.strip_h, cfg.strip_w),
        box_map=box_map,
        boxes=tuple(boxes),
        labels=ids if labeled else None,
        cond=cond,
        labeled=labeled,
    )
    validate_sample(sample, cfg.n_slots)
    return sample


SynthFn = Callable[[np.random.Generator], Sample]


def draw_mixed(
    labeled: Sequence[Sample],
    unlabeled: Sequence[Sample],
    synth: SynthFn | None,
    p_syn: float,
    rng: np.random.Generator,
) -> Sample:
    """One draw of the mixing rule: synth with probability p_syn, else pool.

    Without a synthesizer every draw falls back to the pools; mix_stream
    rejects that combination up front when p_syn > 0.
    """
    if synth is not None and p_syn > 0 and rng.uniform() < p_syn:
        return synth(rng)
    total = len(labeled) + len(unlabeled)
    j = int(rng.integers(0, total))
    return labeled[j] if j < len(labeled) else unlabeled[j - len(labeled)]


def mix_stream(
    labeled: Sequence[Sample],
    unlabeled: Sequence[Sample],
    synth: SynthFn | None,
    p_syn: float,
    rng: np.random.Generator,
) -> Iterator[Sample]:
    """Infinite sample stream mixing pools with fresh synthetic draws."""
    if not 0.0 <= p_syn <= 1.0:
        raise ValueError(f"p_syn {p_syn} outside [0, 1]")
    if p_syn > 0 and synth is None:
        raise GlyphflowError("p_syn > 0 requires a synthetic generator")
    if p_syn < 1 and len(labeled) + len(unlabeled) == 0:
        raise GlyphflowError("all sample sources are empty")
    while True:
        yield draw_mixed(labeled, unlabeled, synth, p_syn, rng)


# ── Page rendering and the ingestion pipeline ───────────────────────────


def render_page(
    alphabet: Alphabet,
    columns: Sequence[Sequence[int]],
    style: StyleParams,
    rng: np.random.Generator,
    slot_px: int = 32,
    col_gap: int = 14,
    margin: int = 10,
) -> tuple[np.ndarray, list[CharBox], list[int]]:
    """Render vertical columns of glyphs onto one tall page.

    Returns the page plus per-glyph tight boxes and labels in a shuffled
    order, so downstream clustering has real work to do.
    """
    rows = max(len(c) for c in columns)
    h = 2 * margin + rows * slot_px
    w = 2 * margin + len(columns) * slot_px + (len(columns) - 1) * col_gap
    page = blank(h, w)
    boxes: list[CharBox] = []
    labels: list[int] = []
    for ci, col in enumerate(columns):
        x = margin + ci * (slot_px + col_gap)
        for ri, gid in enumerate(col):
            y = margin + ri * slot_px
            glyph = alphabet.render_glyph(gid, style, slot_px)
            region = page[y : y + slot_px, x : x + slot_px]
            np.maximum(region, glyph, out=region)
            ys, xs = np.nonzero(glyph > 0)
            boxes.append(
                CharBox(x + int(xs.min()), y + int(ys.min()),
                        x + int(xs.max()) + 1, y + int(ys.max()) + 1)
            )
            labels.append(int(gid))
    perm = rng.permutation(len(boxes))
    return page, [boxes[i] for i in perm], [labels[i] for i in perm]


def ingest_page(
    alphabet: Alphabet,
    page: np.ndarray,
    boxes: Sequence[CharBox],
    labels: Sequence[int] | None,
    cfg: CorpusConfig,
    rng: np.random.Generator,
    style_id: int = 0,
    script_id: int = 0,
    pad: int = 3,
) -> Sample:
    """Appendix-style column ingestion: cluster, window, crop, binarize.

    Vertical crops are transposed to the horizontal strip layout and
    resized to the configured strip geometry; boxes follow the same
    transform. Labels may be None (unlabeled source material).
    """
    groups = cluster_columns(boxes)
    valid = [g for g in groups if len(g) >= cfg.n_slots]
    if not valid:
        raise GlyphflowError(f"no column holds {cfg.n_slots}+ boxes")
    column = valid[int(rng.integers(0, len(valid)))]
    window = sample_window(column, cfg.n_slots, rng)
    sel = [boxes[i] for i in window]
    crop, shifted = crop_with_padding(page, sel, pad)
    mask, polarity = binarize_with_polarity(crop)
    strip_t = np.ascontiguousarray(mask.T)
    boxes_t = [b.transpose() for b in shifted]
    th, tw = cfg.strip_h, cfg.strip_w
    sy = th / strip_t.shape[0]
    sx = tw / strip_t.shape[1]
    strip = resize_nearest(strip_t, th, tw)
    scaled: list[CharBox] = []
    prev_x1 = 0
    for b in sorted(boxes_t, key=lambda b: b.x0):
        x0 = max(int(round(b.x0 * sx)), prev_x1)
        x1 = min(max(int(round(b.x1 * sx)), x0 + 1), tw)
        x0 = min(x0, x1 - 1)
        y0 = min(int(round(b.y0 * sy)), th - 1)
        y1 = min(max(int(round(b.y1 * sy)), y0 + 1), th)
        scaled.append(CharBox(x0, y0, x1, y1))
        prev_x1 = x1
    ordered_labels = None
    if labels is not None:
        ordered_labels = tuple(int(labels[i]) for i in window)
    content = (
        render_content_canvas(alphabet, ordered_labels, cfg.slot_px)
        if ordered_labels is not None
        else blank(th, tw)
    )
    cond = build_conditions(
        Source.REAL, polarity, style_id, script_id, cfg.n_styles, cfg.n_scripts
    )
    sample = Sample(
        strip=strip,
        content=content,
        box_map=rasterize_box_map(scaled, th, tw),
        boxes=tuple(scaled),
        labels=ordered_labels,
        cond=cond,
        labeled=ordered_labels is not None,
    )
    validate_sample(sample, cfg.n_slots)
    return sample
