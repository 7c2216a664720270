"""Deterministic Euler sampling of the learned flow, both directions.

Generation holds the content latent clean (t_c = 0) and integrates the
strip and box-map latents from seeded noise at t = 1 down to t = 0 with
uniform steps ``z <- z - dt * v``. Recognition is the mirror image: strip
and box map stay clean at t_i = 0 while the content latent is integrated.
Conditioned branches are never modified. All randomness comes from the
request seed, so sampling is a pure function of (model, inputs, request).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import SamplingError
from .flowcore import Mode
from .glyphgen import ConditionVector
from .streams import Tag, derive_rng


@dataclass(frozen=True)
class SampleRequest:
    mode: Mode
    cond: ConditionVector
    steps: int = 50
    guidance: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.guidance < 0:
            raise ValueError(f"guidance must be >= 0, got {self.guidance}")


def guided_velocity(v_cond, v_uncond, g: float):
    """Interpolate/extrapolate between unconditional and conditional flows."""
    if v_cond.shape != v_uncond.shape:
        raise ValueError(f"shape mismatch {v_cond.shape} vs {v_uncond.shape}")
    return v_uncond + g * (v_cond - v_uncond)


def _seeded_noise(rng: np.random.Generator, like: torch.Tensor) -> torch.Tensor:
    vals = rng.standard_normal(tuple(like.shape), dtype=np.float32)
    return torch.from_numpy(vals).to(dtype=like.dtype, device=like.device)


def _check_finite(v: torch.Tensor, step: int, branch: str) -> None:
    if not torch.isfinite(v).all():
        raise SamplingError(f"non-finite velocity in branch {branch!r}", step=step)


@torch.no_grad()
def generate(
    model, content: torch.Tensor, req: SampleRequest
) -> tuple[torch.Tensor, torch.Tensor]:
    """Denoise strip + box-map latents given a clean content latent.

    content: (C, h, w) or (B, C, h, w) latent; returns latents of the same
    shape. guidance != 1 adds a second, unconditional pass per step whose
    content input is pure noise at t_c = 1.
    """
    if req.mode is not Mode.GENERATION:
        raise ValueError(f"generate() needs Generation mode, got {req.mode}")
    rng = derive_rng(req.seed, Tag.SAMPLE)
    z_i = _seeded_noise(rng, content)
    z_m = _seeded_noise(rng, content)
    eps_c = _seeded_noise(rng, content) if req.guidance != 1.0 else None
    dt = 1.0 / req.steps
    for k in range(req.steps):
        t = 1.0 - k * dt
        _, v_i, v_m = model(content, z_i, z_m, 0.0, t, req.cond)
        if eps_c is not None:
            _, u_i, u_m = model(eps_c, z_i, z_m, 1.0, t, req.cond)
            v_i = guided_velocity(v_i, u_i, req.guidance)
            v_m = guided_velocity(v_m, u_m, req.guidance)
        _check_finite(v_i, k, "i")
        _check_finite(v_m, k, "m")
        z_i = z_i - dt * v_i
        z_m = z_m - dt * v_m
    return z_i, z_m


@torch.no_grad()
def recognize(
    model, strip: torch.Tensor, box_map: torch.Tensor, req: SampleRequest
) -> torch.Tensor:
    """Denoise the content latent given clean strip + box-map latents."""
    if req.mode is not Mode.RECOGNITION:
        raise ValueError(f"recognize() needs Recognition mode, got {req.mode}")
    if req.guidance != 1.0:
        raise SamplingError("guidance is undefined for recognition (the condition is the strip)")
    rng = derive_rng(req.seed, Tag.SAMPLE)
    z_c = _seeded_noise(rng, strip)
    dt = 1.0 / req.steps
    for k in range(req.steps):
        t = 1.0 - k * dt
        v_c, _, _ = model(z_c, strip, box_map, t, 0.0, req.cond)
        _check_finite(v_c, k, "c")
        z_c = z_c - dt * v_c
    return z_c


def decode_glyphs(content_canvas: np.ndarray, atlas: np.ndarray) -> list[int]:
    """Quantize a content canvas to glyph ids by nearest atlas slot.

    canvas: (H, N*H); atlas: (V, H, H) canonical renders. Per slot, the id
    minimizing mean squared pixel distance wins; ties break to the lowest
    id. A blank slot maps to the least-ink glyph (documented, not an error).
    """
    h, w = content_canvas.shape
    vh = atlas.shape[1]
    if atlas.shape[1] != atlas.shape[2] or vh != h or w % h:
        raise ValueError(f"canvas {h}x{w} incompatible with atlas slots {atlas.shape[1:]}")
    n = w // h
    flat = atlas.reshape(len(atlas), -1).astype(np.float64)
    ids = []
    for k in range(n):
        slot = content_canvas[:, k * h : (k + 1) * h].reshape(-1).astype(np.float64)
        mse = ((flat - slot[None, :]) ** 2).mean(axis=1)
        ids.append(int(np.argmin(mse)))
    return ids
