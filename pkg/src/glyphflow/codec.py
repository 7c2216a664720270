"""Exactly invertible space-to-depth latent codec.

A learned autoencoder would make every downstream test stochastic, so the
latent space here is a fixed pixel rearrangement: each p x p image block
becomes one latent column, ``latent[c, y, x] = image[y*p + c // p,
x*p + c mod p]``. Encoding is linear and lossless; pixel-space and
latent-space distances are therefore exactly commensurable. The interface
is codec-agnostic so a learned codec can be swapped in later.

Functions accept numpy arrays or torch tensors and operate on the trailing
(H, W) / (C, h, w) axes, so batched inputs pass through unchanged.
"""

from __future__ import annotations

import numpy as np

DEFAULT_PATCH = 4


def _permute(a, dims):
    if isinstance(a, np.ndarray):
        return a.transpose(dims)
    return a.permute(dims)


def encode(image, p: int = DEFAULT_PATCH):
    """(..., H, W) image -> (..., p*p, H/p, W/p) latent."""
    h, w = image.shape[-2:]
    if h % p or w % p:
        raise ValueError(f"image dims {h}x{w} not divisible by patch {p}")
    lead = image.shape[:-2]
    n = len(lead)
    x = image.reshape(*lead, h // p, p, w // p, p)
    # (..., h/p, p, w/p, p) -> (..., p, p, h/p, w/p)
    x = _permute(x, tuple(range(n)) + (n + 1, n + 3, n, n + 2))
    return x.reshape(*lead, p * p, h // p, w // p)


def decode(latent, p: int = DEFAULT_PATCH):
    """Exact inverse of encode; output clamped to [-1, 1]."""
    c, h, w = latent.shape[-3:]
    if c != p * p:
        raise ValueError(f"latent has {c} channels, expected {p * p}")
    lead = latent.shape[:-3]
    n = len(lead)
    x = latent.reshape(*lead, p, p, h, w)
    # (..., p, p, h, w) -> (..., h, p, w, p)
    x = _permute(x, tuple(range(n)) + (n + 2, n, n + 3, n + 1))
    x = x.reshape(*lead, h * p, w * p)
    if isinstance(x, np.ndarray):
        return np.clip(x, -1.0, 1.0)
    return x.clamp(-1.0, 1.0)


def latent_shape(h_img: int, w_img: int, p: int = DEFAULT_PATCH) -> tuple[int, int, int]:
    if h_img % p or w_img % p:
        raise ValueError(f"image dims {h_img}x{w_img} not divisible by patch {p}")
    return (p * p, h_img // p, w_img // p)
