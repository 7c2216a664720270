"""Runtime verification: invariant groups and the finite-difference suite.

``run_selftest`` exercises the cheap module invariants end to end and
reports one result per group; ``run_gradcheck`` compares every analytic
gradient of a shrunken double-precision model against central finite
differences. Both are exposed through the CLI so a broken build fails
loudly outside the test suite too.
"""

from __future__ import annotations

import tempfile
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from . import codec
from .duplexdit import DuplexDiT, ModelConfig, TokenGrid, compute_rope, duplicate_rope, rotate_pairs
from .errors import GlyphflowError
from .flowcore import (
    Mode,
    assign_timesteps,
    branch_loss,
    composite_loss,
    noise_latent,
    velocity_target,
)
from .glyphgen import (
    Alphabet,
    CANONICAL_STYLE,
    CharBox,
    ConditionVector,
    CorpusConfig,
    Polarity,
    Source,
    binarize_with_polarity,
    extract_boxes,
    rasterize_box_map,
    render_strip,
    style_preset,
)
from .imageio import from_u8, read_raster, to_u8, write_raster
from .metrics import box_iou
from .sampler import decode_glyphs
from .streams import Tag, derive_rng


@dataclass
class GroupResult:
    name: str
    passed: bool
    detail: str


def _group(name: str, fn: Callable[[], str]) -> GroupResult:
    try:
        detail = fn()
        return GroupResult(name, True, detail)
    except Exception as e:  # report, don't crash
        return GroupResult(name, False, f"{type(e).__name__}: {e}")


def _require(ok: bool, message: str) -> None:
    if not ok:
        raise GlyphflowError(message)


def run_selftest(seed: int = 0, fault: str | None = None) -> list[GroupResult]:
    rng = derive_rng(seed, Tag.EVAL)
    encode = codec.encode
    if fault == "codec":
        def encode(image, p=codec.DEFAULT_PATCH):  # intentionally lossy
            z = codec.encode(image, p)
            z = z.copy()
            z.reshape(-1)[0] += 0.25
            return z
    elif fault is not None:
        raise ValueError(f"unknown fault {fault!r}")

    def raster_io() -> str:
        with tempfile.TemporaryDirectory() as d:
            for k in range(5):
                img = from_u8(rng.integers(0, 256, size=(17, 23)).astype(np.uint8))
                path = f"{d}/img_{k}.pgm"
                write_raster(path, img)
                back = read_raster(path)
                _require(np.array_equal(to_u8(back), to_u8(img)), f"raster mismatch {k}")
        return "5 round trips bit-exact"

    def codec_roundtrip() -> str:
        for k in range(20):
            img = rng.uniform(-1, 1, size=(32, 160)).astype(np.float32)
            back = codec.decode(encode(img), codec.DEFAULT_PATCH)
            _require(np.array_equal(back, img), f"codec round trip failed at image {k}")
        a = rng.uniform(-0.5, 0.5, size=(16, 16)).astype(np.float64)
        b = rng.uniform(-0.5, 0.5, size=(16, 16)).astype(np.float64)
        lin = encode(0.25 * a + 0.5 * b)
        _require(
            np.allclose(lin, 0.25 * encode(a) + 0.5 * encode(b), atol=1e-12),
            "codec not linear",
        )
        return "20 round trips bit-exact, linearity holds"

    def noising() -> str:
        for _ in range(100):
            z = rng.standard_normal((16, 8, 40))
            eps = rng.standard_normal((16, 8, 40))
            _require(np.array_equal(noise_latent(z, 0.0, eps), z), "t=0 endpoint")
            _require(np.array_equal(noise_latent(z, 1.0, eps), eps), "t=1 endpoint")
            t = float(rng.uniform())
            mid = noise_latent(z, t, eps)
            _require(
                np.allclose(mid, z + t * velocity_target(z, eps), atol=1e-12),
                "interpolation identity",
            )
        return "endpoints exact on 100 latents"

    def losses() -> str:
        g = composite_loss(Mode.GENERATION, 1.0, 1.0, 1.0, 0.02)
        r = composite_loss(Mode.RECOGNITION, 1.0, 1.0, 1.0, 0.02)
        _require(g == 2.02, f"generation literal {g} != 2.02")
        _require(r == 1.04, f"recognition literal {r} != 1.04")
        for _ in range(100):
            a, b, c = rng.uniform(0, 5, size=3)
            lam = float(rng.uniform(0, 1))
            total = composite_loss(Mode.GENERATION, a, b, c, lam) + composite_loss(
                Mode.RECOGNITION, a, b, c, lam
            )
            _require(abs(total - (1 + lam) * (a + b + c)) <= 1e-9, "duality identity")
        v = rng.standard_normal((4, 4))
        w = rng.standard_normal((4, 4))
        brute = sum((float(v[i, j]) - float(w[i, j])) ** 2 for i in range(4) for j in range(4)) / 16
        _require(abs(branch_loss(v, w) - brute) <= 1e-7, "branch_loss oracle")
        return "literals, duality, and MSE oracle hold"

    def timesteps() -> str:
        for _ in range(200):
            p = assign_timesteps(Mode.GENERATION, True, 0.0, rng)
            _require(p.t_c == 0.0 and 0.0 <= p.t_i <= 1.0, "generation labeled, p_drop 0")
            p = assign_timesteps(Mode.GENERATION, False, 0.0, rng)
            _require(p.t_c == 1.0, "generation unlabeled pins t_c = 1")
            p = assign_timesteps(Mode.RECOGNITION, True, 0.5, rng)
            _require(p.t_i == 0.0, "recognition pins t_i = 0")
        try:
            assign_timesteps(Mode.RECOGNITION, False, 0.0, rng)
        except GlyphflowError:
            pass
        else:
            raise GlyphflowError("recognition on unlabeled sample did not fail")
        return "mode rules hold on 600 draws"

    def zero_init() -> str:
        model = DuplexDiT(ModelConfig(d_model=32, heads=2, blocks=1), seed=seed)
        cond = ConditionVector(Source.SYNTHETIC, Polarity.LIGHT_ON_DARK, 0, 0)
        for _ in range(5):
            z = torch.from_numpy(rng.standard_normal((1, 16, 8, 40)).astype(np.float32))
            out = model(z, z.clone(), z.clone(), 0.3, 0.8, cond)
            _require(all((v == 0).all().item() for v in out), "fresh model not identically zero")
        return "fresh model emits exact zeros"

    def rope_duplicate() -> str:
        grid = TokenGrid(4, 20)
        base = torch.as_tensor(compute_rope(grid, 16), dtype=torch.float64)
        zero = torch.zeros(2, 8, dtype=torch.float64)
        a_c, a_i, a_m = duplicate_rope(base, zero, zero)
        _require(
            torch.equal(a_c, base[None].expand(2, -1, -1)) and torch.equal(a_m, a_c),
            "E_mod = 0 does not reproduce image angles",
        )
        off = torch.from_numpy(rng.standard_normal((2, 8)))
        a_c, a_i, a_m = duplicate_rope(base, off, off * 2)
        _require(
            torch.equal(a_c, base[None, :, :] + off[:, None, :]),
            "content angles not base + offset",
        )
        _require(torch.equal(a_i, base[None, :, :]), "image angles were modified")
        return "duplication identities hold"

    def rotation() -> str:
        grid = TokenGrid(2, 5)
        ang = torch.as_tensor(compute_rope(grid, 16), dtype=torch.float64)[None]
        x = torch.from_numpy(rng.standard_normal((1, 1, grid.n, 16)))
        r = rotate_pairs(x, ang)
        _require(
            float((r.norm(dim=-1) - x.norm(dim=-1)).abs().max()) <= 1e-6,
            "rotation changes norms",
        )
        ang1d = torch.as_tensor(compute_rope(TokenGrid(1, 8), 16), dtype=torch.float64)
        q = torch.from_numpy(rng.standard_normal(16))
        k = torch.from_numpy(rng.standard_normal(16))

        def logit(i: int, j: int) -> float:
            qi = rotate_pairs(q.view(1, 1, 1, 16), ang1d[None, i : i + 1])
            kj = rotate_pairs(k.view(1, 1, 1, 16), ang1d[None, j : j + 1])
            return float((qi * kj).sum())

        _require(abs(logit(2, 5) - logit(0, 3)) <= 1e-9, "logits not shift-invariant")
        return "norms preserved; logits depend on relative position"

    def binarization() -> str:
        ab = Alphabet(16, seed=20108)
        for k in range(10):
            ids = [int(v) for v in rng.integers(0, 16, size=3)]
            strip, _ = render_strip(ab, ids, style_preset(k % 8), rng, slot_px=16)
            mask, pol = binarize_with_polarity(strip)
            _require(pol is Polarity.LIGHT_ON_DARK, f"strip {k} polarity wrong")
            _require(np.array_equal(mask, strip), f"strip {k} mask not the strokes")
            inv_mask, inv_pol = binarize_with_polarity((-strip).astype(np.float32))
            _require(inv_pol is Polarity.DARK_ON_LIGHT, f"inverted strip {k} polarity")
            _require(np.array_equal(inv_mask, mask), f"strip {k} masks differ under inversion")
        return "10 strips: polarity + inversion symmetry hold"

    def box_roundtrip() -> str:
        for k in range(20):
            boxes = []
            x = 1
            while x + 6 < 158:
                w = int(rng.integers(3, 6))
                y0 = int(rng.integers(1, 12))
                boxes.append(CharBox(x, y0, x + w, y0 + int(rng.integers(3, 18))))
                x += w + int(rng.integers(2, 6))
            img = rasterize_box_map(boxes, 32, 160)
            back = extract_boxes(img)
            _require(len(back) == len(boxes), f"set {k}: count {len(back)} != {len(boxes)}")
            ious = [box_iou(a, b) for a, b in zip(back, sorted(boxes))]
            _require(min(ious) == 1.0, f"set {k}: IoU {min(ious)} < 1")
        return "20 disjoint sets round trip at IoU 1.0"

    def glyph_decode() -> str:
        ab = Alphabet(16, seed=20108)
        cfg = CorpusConfig(alphabet_size=16, n_slots=3, slot_px=16)
        atlas = ab.canonical_atlas(cfg.slot_px)
        for _ in range(10):
            ids = [int(v) for v in rng.integers(0, 16, size=3)]
            canvas = np.concatenate([ab.render_glyph(g, CANONICAL_STYLE, 16) for g in ids], axis=1)
            _require(decode_glyphs(canvas, atlas) == ids, "atlas member not its own neighbour")
        return "10 canvases decode to their own ids"

    groups = [
        ("raster-io", raster_io),
        ("codec-round-trip", codec_roundtrip),
        ("noising", noising),
        ("losses", losses),
        ("timesteps", timesteps),
        ("zero-init", zero_init),
        ("duplicate-rope", rope_duplicate),
        ("rotation", rotation),
        ("binarization", binarization),
        ("box-round-trip", box_roundtrip),
        ("glyph-decode", glyph_decode),
    ]
    return [_group(name, fn) for name, fn in groups]


def run_gradcheck(
    seed: int = 0, step: float = 1e-4, max_elements_per_param: int | None = None
) -> tuple[float, str, int]:
    """Central finite differences vs autograd on a shrunken float64 model.

    Every parameter (including the rotary offsets) is randomized first,
    since the reference initialization zeroes entire arrays. The relative
    error is computed per parameter tensor as ||fd - an|| / max(||fd||,
    ||an||) over the probed coordinates: for an O(1) loss the difference
    quotient at this step carries ~1e-12 of float64 roundoff, so an
    elementwise quotient on a coordinate whose true gradient is below
    ~1e-8 measures that noise rather than gradient correctness. Returns
    (max relative error, worst parameter name, elements checked).
    """
    cfg = ModelConfig(d_model=16, heads=1, blocks=1)
    model = DuplexDiT(cfg, seed=seed).double()
    rng = derive_rng(seed, Tag.EVAL)
    with torch.no_grad():
        for _, p in sorted(model.named_parameters()):
            p.copy_(torch.from_numpy(rng.normal(0.0, 0.05, size=tuple(p.shape))))

    # latent (16, 4, 10) tokenizes to the 2x5 grid
    z = [torch.from_numpy(rng.standard_normal((1, 16, 4, 10))) for _ in range(3)]
    tgt = [torch.from_numpy(rng.standard_normal((1, 16, 4, 10))) for _ in range(3)]
    t_c, t_i = float(rng.uniform(0.1, 0.9)), float(rng.uniform(0.1, 0.9))
    cond = ConditionVector(Source.REAL, Polarity.DARK_ON_LIGHT, 1, 2)

    def loss_value() -> torch.Tensor:
        v_c, v_i, v_m = model(z[0], z[1], z[2], t_c, t_i, cond)
        return composite_loss(
            Mode.GENERATION,
            branch_loss(v_c, tgt[0]),
            branch_loss(v_i, tgt[1]),
            branch_loss(v_m, tgt[2]),
        )

    loss = loss_value()
    grads = torch.autograd.grad(loss, list(model.parameters()))
    named = list(model.named_parameters())

    worst, worst_name, checked = 0.0, "", 0
    with torch.no_grad():
        for (name, p), g in zip(named, grads):
            flat = p.data.view(-1)
            gflat = g.view(-1)
            idxs = range(flat.numel())
            if max_elements_per_param is not None and flat.numel() > max_elements_per_param:
                idxs = rng.choice(flat.numel(), size=max_elements_per_param, replace=False)
            fd_vals, an_vals = [], []
            for i in idxs:
                orig = float(flat[i])
                flat[i] = orig + step
                up = float(loss_value())
                flat[i] = orig - step
                down = float(loss_value())
                flat[i] = orig
                fd_vals.append((up - down) / (2 * step))
                an_vals.append(float(gflat[i]))
                checked += 1
            fd = np.asarray(fd_vals)
            an = np.asarray(an_vals)
            scale = max(float(np.linalg.norm(fd)), float(np.linalg.norm(an)))
            rel = float(np.linalg.norm(fd - an)) / scale if scale > 0.0 else 0.0
            if rel > worst:
                worst, worst_name = rel, name
    return worst, worst_name, checked
