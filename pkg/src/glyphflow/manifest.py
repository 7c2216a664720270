"""Dataset manifests and on-disk dataset layout.

A manifest is line-oriented text, one tab-separated record per sample:
strip path, slot count, labels (comma-separated ids or "?"), boxes
("x0,y0,x1,y1" joined by ";"), style id, script id, source, polarity.
Content canvases and box maps are not stored in the manifest; they are
reconstructed deterministically from labels and boxes on load, which keeps
the record format small and the round trip exact.

A dataset directory holds the manifest, a corpus config (alphabet size and
geometry, needed to re-render content), and the strip images, plus content
and box-map images for offline inspection.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from .config import read_kv_file, write_kv_file
from .errors import ManifestError
from .glyphgen import (
    Alphabet,
    CharBox,
    CorpusConfig,
    Polarity,
    Sample,
    Source,
    build_conditions,
    rasterize_box_map,
    render_content_canvas,
    validate_sample,
)
from .imageio import blank, read_raster, write_raster

MANIFEST_NAME = "manifest.tsv"
CORPUS_CONFIG_NAME = "corpus.cfg"

_SOURCES = {s.value: s for s in Source}
_POLARITIES = {p.value: p for p in Polarity}


@dataclass(frozen=True)
class ManifestRecord:
    strip_path: str
    n_slots: int
    labels: tuple[int, ...] | None
    boxes: tuple[CharBox, ...]
    style_id: int
    script_id: int
    source: Source
    polarity: Polarity


def format_record(rec: ManifestRecord) -> str:
    labels = "?" if rec.labels is None else ",".join(str(i) for i in rec.labels)
    boxes = ";".join(f"{b.x0},{b.y0},{b.x1},{b.y1}" for b in rec.boxes)
    return "\t".join(
        [
            rec.strip_path,
            str(rec.n_slots),
            labels,
            boxes,
            str(rec.style_id),
            str(rec.script_id),
            rec.source.value,
            rec.polarity.value,
        ]
    )


def parse_record(line: str, lineno: int) -> ManifestRecord:
    fields = line.rstrip("\n").split("\t")
    if len(fields) != 8:
        raise ManifestError(f"line {lineno}: expected 8 tab-separated fields, got {len(fields)}")
    path, n_str, labels_str, boxes_str, style_str, script_str, src_str, pol_str = fields
    try:
        n = int(n_str)
        style_id = int(style_str)
        script_id = int(script_str)
    except ValueError as e:
        raise ManifestError(f"line {lineno}: {e}") from None
    if labels_str == "?":
        labels = None
    else:
        try:
            labels = tuple(int(t) for t in labels_str.split(","))
        except ValueError:
            raise ManifestError(f"line {lineno}: bad labels {labels_str!r}") from None
        if len(labels) != n:
            raise ManifestError(f"line {lineno}: {len(labels)} labels for {n} slots")
    boxes = []
    for part in boxes_str.split(";"):
        try:
            x0, y0, x1, y1 = (int(t) for t in part.split(","))
            boxes.append(CharBox(x0, y0, x1, y1))
        except ValueError as e:
            raise ManifestError(f"line {lineno}: bad box {part!r}: {e}") from None
    if len(boxes) != n:
        raise ManifestError(f"line {lineno}: {len(boxes)} boxes for {n} slots")
    if src_str not in _SOURCES:
        raise ManifestError(f"line {lineno}: unknown source {src_str!r}")
    if pol_str not in _POLARITIES:
        raise ManifestError(f"line {lineno}: unknown polarity {pol_str!r}")
    return ManifestRecord(
        strip_path=path,
        n_slots=n,
        labels=labels,
        boxes=tuple(boxes),
        style_id=style_id,
        script_id=script_id,
        source=_SOURCES[src_str],
        polarity=_POLARITIES[pol_str],
    )


def write_manifest(path: str, records: list[ManifestRecord]) -> None:
    body = "".join(format_record(r) + "\n" for r in records)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="ascii", newline="") as f:
        f.write(body)
    os.replace(tmp, path)


def read_manifest(path: str) -> list[ManifestRecord]:
    with open(path, "r", encoding="ascii") as f:
        return [parse_record(line, i) for i, line in enumerate(f, start=1) if line.strip()]


# ── Corpus config sidecar ───────────────────────────────────────────────

_CORPUS_FIELDS = ("alphabet_size", "n_styles", "n_scripts", "n_slots", "slot_px", "glyph_seed")


def write_corpus_config(path: str, cfg: CorpusConfig) -> None:
    write_kv_file(path, {k: getattr(cfg, k) for k in _CORPUS_FIELDS})


def read_corpus_config(path: str) -> CorpusConfig:
    values = {}
    for lineno, key, val in read_kv_file(path):
        if key not in _CORPUS_FIELDS:
            raise ManifestError(f"{path}:{lineno}: unknown corpus key {key!r}")
        try:
            values[key] = int(val)
        except ValueError:
            raise ManifestError(f"{path}:{lineno}: {key} must be an integer") from None
    return CorpusConfig(**values)


# ── Dataset directory IO ────────────────────────────────────────────────


def write_dataset(out_dir: str, samples: list[Sample], cfg: CorpusConfig) -> str:
    """Write strips + content canvases + box maps + manifest; returns manifest path."""
    for sub in ("strips", "content", "boxmap"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    records = []
    for i, s in enumerate(samples):
        rel = f"strips/{i:05d}.pgm"
        write_raster(os.path.join(out_dir, rel), s.strip)
        write_raster(os.path.join(out_dir, f"content/{i:05d}.pgm"), s.content)
        write_raster(os.path.join(out_dir, f"boxmap/{i:05d}.pgm"), s.box_map)
        records.append(
            ManifestRecord(
                strip_path=rel,
                n_slots=len(s.boxes),
                labels=s.labels,
                boxes=s.boxes,
                style_id=s.cond.style_id,
                script_id=s.cond.script_id,
                source=s.cond.source,
                polarity=s.cond.polarity,
            )
        )
    manifest_path = os.path.join(out_dir, MANIFEST_NAME)
    write_manifest(manifest_path, records)
    write_corpus_config(os.path.join(out_dir, CORPUS_CONFIG_NAME), cfg)
    return manifest_path


def load_dataset(manifest_path: str, alphabet: Alphabet, cfg: CorpusConfig) -> list[Sample]:
    """Materialize Samples: read strips, re-render content, re-rasterize maps."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    samples = []
    for rec in read_manifest(manifest_path):
        strip = read_raster(os.path.join(base, rec.strip_path))
        if rec.n_slots != cfg.n_slots:
            raise ManifestError(
                f"{rec.strip_path}: {rec.n_slots} slots, corpus config says {cfg.n_slots}"
            )
        content = (
            render_content_canvas(alphabet, rec.labels, cfg.slot_px)
            if rec.labels is not None
            else blank(cfg.strip_h, cfg.strip_w)
        )
        sample = Sample(
            strip=strip,
            content=content,
            box_map=rasterize_box_map(rec.boxes, cfg.strip_h, cfg.strip_w),
            boxes=rec.boxes,
            labels=rec.labels,
            cond=build_conditions(
                rec.source, rec.polarity, rec.style_id, rec.script_id,
                cfg.n_styles, cfg.n_scripts,
            ),
            labeled=rec.labels is not None,
        )
        validate_sample(sample, cfg.n_slots)
        samples.append(sample)
    return samples


def split_pools(samples: list[Sample]) -> tuple[list[Sample], list[Sample]]:
    labeled = [s for s in samples if s.labeled]
    unlabeled = [s for s in samples if not s.labeled]
    return labeled, unlabeled
