"""Three-modality diffusion transformer with duplicated rotary positions.

One shared bidirectional self-attention trunk processes the concatenated
token sequences of the content canvas, the calligraphy strip, and the box
map (in that order). Each modality has its own input and output linear
projection; the output projections are zero-initialized so a fresh model
predicts exactly zero velocities.

Positions enter through 2D axial rotary embeddings computed once for the
image grid and replicated to the content and box-map branches with a
learnable additive angle offset per modality (``angles_k = angles_i +
E_mod_k``), so aligned tokens across modalities start attention-identical
and learn to diverge.

Timestep and condition signals enter through per-block modulation: a
sinusoidal embedding of the branch's own timestep (t_c for content, t_i
for strip and map) plus four condition embeddings feeds a zero-initialized
MLP producing per-channel scale/shift/gate around each sublayer, so at
initialization every block is the identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .glyphgen import ConditionVector, Polarity, Source
from .streams import Tag, derive_rng

BRANCHES = ("c", "i", "m")

SOURCE_INDEX = {Source.REAL: 0, Source.SYNTHETIC: 1}
POLARITY_INDEX = {Polarity.LIGHT_ON_DARK: 0, Polarity.DARK_ON_LIGHT: 1}


@dataclass(frozen=True)
class ModelConfig:
    token_patch: int = 2
    d_model: int = 64
    heads: int = 4
    blocks: int = 2
    mlp_ratio: int = 4
    vocab: int = 64
    n_styles: int = 8
    n_scripts: int = 5
    rope_base: float = 10000.0
    latent_channels: int = 16

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError(f"d_model {self.d_model} not divisible by {self.heads} heads")
        if self.head_dim % 4:
            raise ValueError(f"head_dim {self.head_dim} not divisible by 4 (2D axial pairs)")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads

    @property
    def patch_dim(self) -> int:
        return self.latent_channels * self.token_patch**2


@dataclass(frozen=True)
class TokenGrid:
    rows: int
    cols: int

    @property
    def n(self) -> int:
        return self.rows * self.cols

    def positions(self) -> np.ndarray:
        """(n, 2) integer (y, x) positions in row-major order."""
        ys, xs = np.mgrid[0 : self.rows, 0 : self.cols]
        return np.stack([ys.ravel(), xs.ravel()], axis=1)


def compute_rope(grid: TokenGrid, head_dim: int, base: float = 10000.0) -> np.ndarray:
    """Axial 2D rotary angles, (n_positions, head_dim/2) in float64.

    The first half of the angle dimensions encodes y, the second half x,
    each with frequencies base**(-2k / (head_dim/2)).
    """
    if head_dim % 4:
        raise ValueError(f"head_dim {head_dim} not divisible by 4")
    per_axis = head_dim // 4
    k = np.arange(per_axis, dtype=np.float64)
    freqs = base ** (-2.0 * k / (head_dim // 2))
    pos = grid.positions().astype(np.float64)
    ang_y = pos[:, 0:1] * freqs[None, :]
    ang_x = pos[:, 1:2] * freqs[None, :]
    return np.concatenate([ang_y, ang_x], axis=1)


def duplicate_rope(angles_i, e_mod_c, e_mod_m):
    """Replicate image angles to the other branches with per-head offsets.

    angles_i: (n, head_dim/2); e_mod_*: (heads, head_dim/2). Returns
    (angles_c, angles_i, angles_m) broadcastable to (heads, n, head_dim/2);
    the image branch is returned unmodified.
    """
    if e_mod_c.shape != e_mod_m.shape:
        raise ValueError(f"offset shapes differ: {e_mod_c.shape} vs {e_mod_m.shape}")
    if e_mod_c.shape[-1] != angles_i.shape[-1]:
        raise ValueError(
            f"angle dim {angles_i.shape[-1]} != offset dim {e_mod_c.shape[-1]}"
        )
    angles_c = angles_i[None, :, :] + e_mod_c[:, None, :]
    angles_m = angles_i[None, :, :] + e_mod_m[:, None, :]
    return angles_c, angles_i[None, :, :], angles_m


def rotate_pairs(x: torch.Tensor, angles: torch.Tensor) -> torch.Tensor:
    """Rotate interleaved (even, odd) feature pairs by per-position angles.

    x: (B, H, n, head_dim); angles: (H or 1, n, head_dim/2).
    """
    cos = torch.cos(angles)[None]
    sin = torch.sin(angles)[None]
    even = x[..., 0::2]
    odd = x[..., 1::2]
    r_even = even * cos - odd * sin
    r_odd = even * sin + odd * cos
    return torch.stack([r_even, r_odd], dim=-1).flatten(-2)


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """(B,) timesteps in [0,1] -> (B, dim) sin/cos features.

    t is scaled by 1000 so the low-frequency channels still discriminate
    within the unit interval.
    """
    half = dim // 2
    k = torch.arange(half, dtype=t.dtype, device=t.device)
    freqs = torch.exp(-math.log(10000.0) * k / half)
    args = t[:, None] * 1000.0 * freqs[None, :]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


def modulate(x: torch.Tensor, scale: torch.Tensor, shift: torch.Tensor) -> torch.Tensor:
    return x * (1.0 + scale) + shift


class Block(nn.Module):
    """Pre-norm attention + MLP with per-token scale/shift/gate modulation."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.d_model
        self.heads = cfg.heads
        self.head_dim = cfg.head_dim
        self.norm1 = nn.LayerNorm(d, elementwise_affine=False, eps=1e-6)
        self.norm2 = nn.LayerNorm(d, elementwise_affine=False, eps=1e-6)
        self.qkv = nn.Linear(d, 3 * d)
        self.attn_out = nn.Linear(d, d)
        self.mlp = nn.Sequential(
            nn.Linear(d, cfg.mlp_ratio * d),
            nn.GELU(),
            nn.Linear(cfg.mlp_ratio * d, d),
        )
        self.mod = nn.Sequential(nn.SiLU(), nn.Linear(d, 6 * d))

    def _attention(self, x: torch.Tensor, angles: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.view(b, n, self.heads, self.head_dim).transpose(1, 2)
        k = k.view(b, n, self.heads, self.head_dim).transpose(1, 2)
        v = v.view(b, n, self.heads, self.head_dim).transpose(1, 2)
        q = rotate_pairs(q, angles)
        k = rotate_pairs(k, angles)
        logits = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        attn = torch.softmax(logits, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, d)
        return self.attn_out(out)

    def forward(self, x: torch.Tensor, c: torch.Tensor, angles: torch.Tensor) -> torch.Tensor:
        """x, c: (B, n, d) tokens and per-token condition; angles as in rotate_pairs."""
        s1, b1, g1, s2, b2, g2 = self.mod(c).chunk(6, dim=-1)
        x = x + g1 * self._attention(modulate(self.norm1(x), s1, b1), angles)
        x = x + g2 * self.mlp(modulate(self.norm2(x), s2, b2))
        return x


class DuplexDiT(nn.Module):
    """The joint generation/recognition velocity network."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_model
        self.in_proj = nn.ModuleDict(
            {m: nn.Linear(cfg.patch_dim, d) for m in BRANCHES}
        )
        self.out_proj = nn.ModuleDict(
            {m: nn.Linear(d, cfg.patch_dim) for m in BRANCHES}
        )
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.blocks))
        self.final_norm = nn.LayerNorm(d, elementwise_affine=False, eps=1e-6)
        self.final_mod = nn.Sequential(nn.SiLU(), nn.Linear(d, 2 * d))
        self.emb_style = nn.Embedding(cfg.n_styles, d)
        self.emb_script = nn.Embedding(cfg.n_scripts, d)
        self.emb_source = nn.Embedding(2, d)
        self.emb_polarity = nn.Embedding(2, d)
        half = cfg.head_dim // 2
        self.e_mod_c = nn.Parameter(torch.zeros(cfg.heads, half))
        self.e_mod_m = nn.Parameter(torch.zeros(cfg.heads, half))
        self._angle_cache: dict[tuple, np.ndarray] = {}
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        """Deterministic init from a seeded stream, in sorted name order.

        Output projections, modulation output layers, rotary offsets, and
        all biases start at zero; everything else is N(0, 0.02).
        """
        rng = derive_rng(seed, Tag.INIT)
        with torch.no_grad():
            for name, p in sorted(self.named_parameters()):
                if (
                    "out_proj" in name
                    or "mod.1" in name
                    or "e_mod" in name
                    or name.endswith(".bias")
                ):
                    p.zero_()
                else:
                    vals = rng.normal(0.0, 0.02, size=tuple(p.shape))
                    p.copy_(torch.from_numpy(vals.astype(np.float32)))

    # -- tokenization ---------------------------------------------------

    def tokenize(self, z: torch.Tensor, modality: str) -> tuple[torch.Tensor, TokenGrid]:
        """(B, C, h, w) latent -> (B, n, d) tokens via the branch's projection."""
        if modality not in BRANCHES:
            raise ValueError(f"unknown modality {modality!r}")
        patches, grid = self._patchify(z)
        return self.in_proj[modality](patches), grid

    def _patchify(self, z: torch.Tensor) -> tuple[torch.Tensor, TokenGrid]:
        p = self.cfg.token_patch
        b, c, h, w = z.shape
        if c != self.cfg.latent_channels:
            raise ValueError(f"latent has {c} channels, config says {self.cfg.latent_channels}")
        if h % p or w % p:
            raise ValueError(f"latent dims {h}x{w} not divisible by token patch {p}")
        grid = TokenGrid(h // p, w // p)
        x = z.reshape(b, c, grid.rows, p, grid.cols, p)
        x = x.permute(0, 2, 4, 1, 3, 5).reshape(b, grid.n, self.cfg.patch_dim)
        return x, grid

    def _unpatchify(self, tokens: torch.Tensor, grid: TokenGrid) -> torch.Tensor:
        p = self.cfg.token_patch
        b = tokens.shape[0]
        c = self.cfg.latent_channels
        x = tokens.reshape(b, grid.rows, grid.cols, c, p, p)
        x = x.permute(0, 3, 1, 4, 2, 5).reshape(b, c, grid.rows * p, grid.cols * p)
        return x

    # -- conditioning ---------------------------------------------------

    def _cond_embedding(self, cond, batch: int, dtype, device) -> torch.Tensor:
        """Sum of the four condition embeddings, (B, d)."""
        if isinstance(cond, ConditionVector):
            idx = (
                torch.full((batch,), SOURCE_INDEX[cond.source], device=device),
                torch.full((batch,), POLARITY_INDEX[cond.polarity], device=device),
                torch.full((batch,), cond.style_id, device=device),
                torch.full((batch,), cond.script_id, device=device),
            )
        else:
            idx = tuple(torch.as_tensor(c, dtype=torch.long, device=device) for c in cond)
        src, pol, sty, scr = idx
        emb = (
            self.emb_source(src)
            + self.emb_polarity(pol)
            + self.emb_style(sty)
            + self.emb_script(scr)
        )
        return emb.to(dtype)

    def _base_angles(self, grid: TokenGrid) -> np.ndarray:
        key = (grid.rows, grid.cols, self.cfg.head_dim, self.cfg.rope_base)
        if key not in self._angle_cache:
            self._angle_cache[key] = compute_rope(grid, self.cfg.head_dim, self.cfg.rope_base)
        return self._angle_cache[key]

    # -- forward --------------------------------------------------------

    def forward(
        self,
        z_c: torch.Tensor | None,
        z_i: torch.Tensor | None,
        z_m: torch.Tensor | None,
        t_c,
        t_i,
        cond,
        branches: Sequence[str] = BRANCHES,
    ):
        """Predict per-branch velocities; inactive branches return None.

        Latents are (B, C, h, w) or unbatched (C, h, w); t_c/t_i are floats
        or (B,) tensors; cond is a ConditionVector or a tuple of four index
        arrays (source, polarity, style, script).
        """
        latents = {"c": z_c, "i": z_i, "m": z_m}
        active = [m for m in BRANCHES if m in branches]
        if not active:
            raise ValueError("no active branches")
        squeeze = False
        for m in active:
            z = latents[m]
            if z is None:
                raise ValueError(f"branch {m!r} active but latent missing")
            if z.dim() == 3:
                latents[m] = z[None]
                squeeze = True
            if not torch.isfinite(latents[m]).all():
                raise ValueError(f"non-finite values in branch {m!r} input")
        ref = latents[active[0]]
        b = ref.shape[0]
        dtype, device = ref.dtype, ref.device

        tokens, grids = {}, {}
        for m in active:
            tokens[m], grids[m] = self.tokenize(latents[m], m)
            if grids[m] != grids[active[0]]:
                raise ValueError("branches disagree on token grid")
        grid = grids[active[0]]

        base = torch.as_tensor(self._base_angles(grid), dtype=dtype, device=device)
        a_c, a_i, a_m = duplicate_rope(base, self.e_mod_c.to(dtype), self.e_mod_m.to(dtype))
        branch_angles = {
            "c": a_c,
            "i": a_i.expand(self.cfg.heads, -1, -1),
            "m": a_m,
        }
        angles = torch.cat([branch_angles[m] for m in active], dim=1)

        t_c_t = self._as_t(t_c, b, dtype, device)
        t_i_t = self._as_t(t_i, b, dtype, device)
        cond_emb = self._cond_embedding(cond, b, dtype, device)
        branch_c = {
            "c": sinusoidal_embedding(t_c_t, self.cfg.d_model) + cond_emb,
            "i": sinusoidal_embedding(t_i_t, self.cfg.d_model) + cond_emb,
            "m": sinusoidal_embedding(t_i_t, self.cfg.d_model) + cond_emb,
        }
        c_tok = torch.cat(
            [branch_c[m][:, None, :].expand(b, grid.n, -1) for m in active], dim=1
        )

        x = torch.cat([tokens[m] for m in active], dim=1)
        for block in self.blocks:
            x = block(x, c_tok, angles)
        # timestep-conditioned scale/shift before the heads: the velocity
        # magnitude depends on t, which the affine-free norm would erase
        s_f, b_f = self.final_mod(c_tok).chunk(2, dim=-1)
        x = modulate(self.final_norm(x), s_f, b_f)

        out = {}
        for j, m in enumerate(active):
            seg = x[:, j * grid.n : (j + 1) * grid.n]
            v = self._unpatchify(self.out_proj[m](seg), grid)
            out[m] = v[0] if squeeze else v
        return tuple(out.get(m) for m in BRANCHES)

    @staticmethod
    def _as_t(t, batch: int, dtype, device) -> torch.Tensor:
        if isinstance(t, (int, float)):
            if not 0.0 <= float(t) <= 1.0:
                raise ValueError(f"timestep {t} outside [0, 1]")
            return torch.full((batch,), float(t), dtype=dtype, device=device)
        t = torch.as_tensor(t, dtype=dtype, device=device)
        if t.dim() == 0:
            t = t[None].expand(batch)
        return t


def build_model(cfg: ModelConfig, seed: int = 0) -> DuplexDiT:
    return DuplexDiT(cfg, seed)
