"""Flow-matching core: noising, mode-dependent timesteps, composite losses.

Training alternates between two modes of the same network. Generation
noises the strip and box-map latents while the content latent stays clean;
recognition is the mirror image. The shared timestep t_i governs both the
strip and the box map; t_c governs the content branch alone. The
regression target is the constant velocity of the linear path,
``eps - z`` (rectified-flow convention), so the Euler sampler is one line
and the target is independent of t.

Everything here is array-agnostic: numpy arrays and torch tensors both
work, and the torch path stays differentiable.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import GlyphflowError

LAMBDA_DEFAULT = 0.02
P_DROP_DEFAULT = 0.05


class Mode(Enum):
    GENERATION = "generation"
    RECOGNITION = "recognition"


@dataclass(frozen=True)
class TimestepPair:
    """Per-branch noise levels; t_i jointly covers the strip and box map."""

    t_c: float
    t_i: float

    def __post_init__(self):
        for t in (self.t_c, self.t_i):
            if not 0.0 <= t <= 1.0:
                raise ValueError(f"timestep {t} outside [0, 1]")


def noise_latent(z, t, eps):
    """Linear interpolation toward noise: t*eps + (1-t)*z."""
    if z.shape != eps.shape:
        raise ValueError(f"shape mismatch {z.shape} vs {eps.shape}")
    if isinstance(t, float) and not 0.0 <= t <= 1.0:
        raise ValueError(f"timestep {t} outside [0, 1]")
    return t * eps + (1.0 - t) * z


def velocity_target(z, eps):
    """Time derivative of the noising path; constant in t."""
    if z.shape != eps.shape:
        raise ValueError(f"shape mismatch {z.shape} vs {eps.shape}")
    return eps - z


def assign_timesteps(
    mode: Mode,
    labeled: bool,
    p_drop: float = P_DROP_DEFAULT,
    rng: np.random.Generator | None = None,
) -> TimestepPair:
    """Draw the (t_c, t_i) pair for one training sample.

    Generation noises the image side (t_i uniform) and keeps content clean,
    except that the content condition is dropped to pure noise (t_c = 1)
    with probability p_drop, and always for unlabeled samples. Recognition
    is only defined for labeled samples: content noised, image side clean.

    Draw order is fixed (t first, then the dropout coin) so streams align
    across runs.
    """
    if not 0.0 <= p_drop <= 1.0:
        raise ValueError(f"p_drop {p_drop} outside [0, 1]")
    if rng is None:
        raise ValueError("rng is required")
    if mode is Mode.GENERATION:
        t_i = float(rng.uniform())
        if not labeled:
            return TimestepPair(t_c=1.0, t_i=t_i)
        t_c = 1.0 if float(rng.uniform()) < p_drop else 0.0
        return TimestepPair(t_c=t_c, t_i=t_i)
    if mode is Mode.RECOGNITION:
        if not labeled:
            raise GlyphflowError("recognition has no target on unlabeled samples")
        return TimestepPair(t_c=float(rng.uniform()), t_i=0.0)
    raise ValueError(f"unknown mode {mode!r}")


def composite_loss(mode: Mode, l_cond, l_img, l_box, lam: float = LAMBDA_DEFAULT):
    """Mode-weighted total: the reconstructed side at weight 1, the clean
    side at weight lam."""
    for v in (l_cond, l_img, l_box):
        if isinstance(v, (int, float)) and v < 0:
            raise ValueError(f"negative loss {v}")
    if lam < 0:
        raise ValueError(f"negative lambda {lam}")
    if mode is Mode.GENERATION:
        return l_img + l_box + lam * l_cond
    if mode is Mode.RECOGNITION:
        return l_cond + lam * (l_img + l_box)
    raise ValueError(f"unknown mode {mode!r}")


def branch_loss(v_pred, v_target):
    """Mean squared error over all elements of one branch."""
    if v_pred.shape != v_target.shape:
        raise ValueError(f"shape mismatch {v_pred.shape} vs {v_target.shape}")
    d = v_pred - v_target
    return (d * d).mean()
