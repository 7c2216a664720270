"""Command-line operator surface.

Subcommands: synth (corpus synthesis), train, generate, recognize, eval,
gradcheck, selftest. Every command honors --seed and is deterministic
under it. Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np
import torch

from . import codec
from .errors import GlyphflowError
from .evaluation import evaluate
from .flowcore import Mode
from .glyphgen import (
    Alphabet,
    CorpusConfig,
    Polarity,
    Source,
    build_conditions,
    extract_boxes,
    render_content_canvas,
    synth_sample,
)
from .imageio import blank, read_raster, write_raster
from .manifest import CORPUS_CONFIG_NAME, MANIFEST_NAME, load_dataset, write_dataset
from .sampler import SampleRequest, decode_glyphs, generate, recognize
from .selftest import run_gradcheck, run_selftest
from .streams import Tag, derive_rng
from .trainer import fit, load_checkpoint, parse_train_config

GRADCHECK_THRESHOLD = 1e-4


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    p = _Parser(prog="glyphflow", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[], help="write a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--samples", type=int, default=100)
    s.add_argument("--alphabet", type=int, default=64)
    s.add_argument("--styles", type=int, default=8)
    s.add_argument("--scripts", type=int, default=5)
    s.add_argument("--slots", type=int, default=5)
    s.add_argument("--slot-px", type=int, default=32)
    s.add_argument("--glyph-seed", type=int, default=20108)
    s.add_argument("--ligature-rate", type=float, default=0.0)
    s.add_argument("--unlabeled-frac", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="run the training loop")
    t.add_argument("--config", required=True)
    t.add_argument("--data", default=None)
    t.add_argument("--out", required=True)
    t.add_argument("--resume", default=None)
    t.add_argument("--seed", type=int, default=None, help="override the config seed")

    g = sub.add_parser("generate", help="content ids -> strip + box map")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--ids", required=True, help="comma-separated glyph ids")
    g.add_argument("--style", type=int, default=0)
    g.add_argument("--script", type=int, default=0)
    g.add_argument("--source", choices=[s.value for s in Source], default="synthetic")
    g.add_argument("--polarity", choices=[p.value for p in Polarity], default="light-on-dark")
    g.add_argument("--steps", type=int, default=50)
    g.add_argument("--guidance", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    r = sub.add_parser("recognize", help="strip (+ box map) -> content ids")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--strip", required=True)
    r.add_argument("--boxmap", default=None)
    r.add_argument("--style", type=int, default=0)
    r.add_argument("--script", type=int, default=0)
    r.add_argument("--source", choices=[s.value for s in Source], default="synthetic")
    r.add_argument("--polarity", choices=[p.value for p in Polarity], default="light-on-dark")
    r.add_argument("--steps", type=int, default=50)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="score a checkpoint against a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--mode", choices=["generation", "recognition", "both"], default="both")
    e.add_argument("--steps", type=int, default=50)
    e.add_argument("--limit", type=int, default=None)
    e.add_argument("--seed", type=int, default=0)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--per-param", type=int, default=None,
                    help="sample this many elements per parameter instead of all")

    st = sub.add_parser("selftest", help="run all module invariant groups")
    st.add_argument("--seed", type=int, default=0)
    st.add_argument("--inject-fault", choices=["codec"], default=None)
    return p


# ── Command bodies ──────────────────────────────────────────────────────


def _cmd_synth(args) -> int:
    cfg = CorpusConfig(
        alphabet_size=args.alphabet,
        n_styles=args.styles,
        n_scripts=args.scripts,
        n_slots=args.slots,
        slot_px=args.slot_px,
        glyph_seed=args.glyph_seed,
    )
    alphabet = Alphabet(cfg.alphabet_size, cfg.glyph_seed)
    samples = []
    for i in range(args.samples):
        rng = derive_rng(args.seed, Tag.SYNTH, i)
        labeled = bool(rng.uniform() >= args.unlabeled_frac)
        samples.append(synth_sample(alphabet, rng, cfg, args.ligature_rate, labeled=labeled))
    manifest = write_dataset(args.out, samples, cfg)
    print(f"wrote {len(samples)} samples to {args.out} (manifest {manifest})")
    return 0


def _cmd_train(args) -> int:
    cfg, notes = parse_train_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    for note in notes:
        print(note)
    result = fit(cfg, args.data, args.out, resume=args.resume)
    last = result.last
    if last is not None:
        print(
            f"finished step {last.step} ({last.mode.value}): "
            f"l_total {last.l_total:.6f}, grad_norm {last.grad_norm:.6f}"
        )
    print(f"final checkpoint: {result.final_checkpoint}")
    print(f"metrics: {result.metrics_path}")
    return 0


def _load_for_inference(path):
    model, _, _, _, corpus, codec_patch = load_checkpoint(path, None)
    model.eval()
    alphabet = Alphabet(corpus.alphabet_size, corpus.glyph_seed)
    return model, corpus, codec_patch, alphabet


def _cmd_generate(args) -> int:
    model, corpus, p, alphabet = _load_for_inference(args.ckpt)
    ids = [int(t) for t in args.ids.split(",") if t.strip() != ""]
    if len(ids) != corpus.n_slots:
        raise GlyphflowError(f"need exactly {corpus.n_slots} ids, got {len(ids)}")
    for g in ids:
        if not 0 <= g < corpus.alphabet_size:
            raise GlyphflowError(f"id {g} out of range [0, {corpus.alphabet_size})")
    cond = build_conditions(
        Source(args.source), Polarity(args.polarity), args.style, args.script,
        corpus.n_styles, corpus.n_scripts,
    )
    content = render_content_canvas(alphabet, ids, corpus.slot_px)
    req = SampleRequest(
        Mode.GENERATION, cond, steps=args.steps, guidance=args.guidance, seed=args.seed
    )
    z_i, z_m = generate(model, codec.encode(torch.from_numpy(content), p), req)
    strip = codec.decode(z_i, p).numpy().astype(np.float32)
    box_map = codec.decode(z_m, p).numpy().astype(np.float32)
    os.makedirs(args.out, exist_ok=True)
    write_raster(os.path.join(args.out, "strip.pgm"), strip)
    write_raster(os.path.join(args.out, "boxmap.pgm"), box_map)
    boxes = extract_boxes(box_map)
    with open(os.path.join(args.out, "boxes.txt"), "w", encoding="ascii") as f:
        for b in boxes:
            f.write(f"{b.x0},{b.y0},{b.x1},{b.y1}\n")
    print(f"wrote strip, box map, and {len(boxes)} boxes to {args.out}")
    return 0


def _cmd_recognize(args) -> int:
    model, corpus, p, alphabet = _load_for_inference(args.ckpt)
    strip = read_raster(args.strip)
    if strip.shape != (corpus.strip_h, corpus.strip_w):
        raise GlyphflowError(
            f"strip is {strip.shape}, model expects {(corpus.strip_h, corpus.strip_w)}"
        )
    box_free = args.boxmap is None
    box_map = blank(*strip.shape) if box_free else read_raster(args.boxmap)
    if box_map.shape != strip.shape:
        raise GlyphflowError(f"box map {box_map.shape} does not match strip {strip.shape}")
    cond = build_conditions(
        Source(args.source), Polarity(args.polarity), args.style, args.script,
        corpus.n_styles, corpus.n_scripts,
    )
    req = SampleRequest(Mode.RECOGNITION, cond, steps=args.steps, seed=args.seed)
    z_c = recognize(
        model, codec.encode(torch.from_numpy(strip), p),
        codec.encode(torch.from_numpy(box_map), p), req,
    )
    canvas = codec.decode(z_c, p).numpy().astype(np.float32)
    ids = decode_glyphs(canvas, alphabet.canonical_atlas(corpus.slot_px))
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "recognized.txt"), "w", encoding="ascii") as f:
        f.write(f"ids = {','.join(str(i) for i in ids)}\n")
        f.write(f"boxmap = {'absent' if box_free else 'provided'}\n")
    write_raster(os.path.join(args.out, "content.pgm"), canvas)
    print(f"ids: {','.join(str(i) for i in ids)}" + (" (box-free)" if box_free else ""))
    return 0


def _cmd_eval(args) -> int:
    model, corpus, p, alphabet = _load_for_inference(args.ckpt)
    samples = load_dataset(os.path.join(args.data, MANIFEST_NAME), alphabet, corpus)
    if args.limit is not None:
        samples = samples[: args.limit]
    modes = ("generation", "recognition") if args.mode == "both" else (args.mode,)
    if "recognition" in modes:
        samples = [s for s in samples if s.labeled]
    report = evaluate(
        model, samples, alphabet, corpus, p, modes=modes, steps=args.steps, seed=args.seed
    )
    report.write(args.out)
    agg = report.aggregate()
    parts = [f"{k} {v:.4f}" for k, v in agg.items() if isinstance(v, float)]
    print(f"{len(report.rows)} samples: " + ", ".join(parts))
    return 0


def _cmd_gradcheck(args) -> int:
    worst, name, checked = run_gradcheck(seed=args.seed, max_elements_per_param=args.per_param)
    ok = worst <= GRADCHECK_THRESHOLD
    print(
        f"gradcheck: max relative error {worst:.3e} at {name or 'n/a'} "
        f"over {checked} elements (threshold {GRADCHECK_THRESHOLD:.0e}) -> "
        f"{'PASS' if ok else 'FAIL'}"
    )
    return 0 if ok else 2


def _cmd_selftest(args) -> int:
    results = run_selftest(seed=args.seed, fault=args.inject_fault)
    failed = 0
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
        failed += 0 if r.passed else 1
    print(f"{len(results) - failed}/{len(results)} groups passed")
    return 0 if failed == 0 else 2


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "generate": _cmd_generate,
    "recognize": _cmd_recognize,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
    "selftest": _cmd_selftest,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (GlyphflowError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
