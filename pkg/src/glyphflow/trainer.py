"""Joint two-mode training: mode draws, source mixing, noising, Adam.

Every random decision at step k comes from a stream keyed by (run seed, k,
purpose), so runs reproduce bitwise regardless of interruption: resuming
from a checkpoint at step k replays steps k+1..n identically to an
unbroken run. Checkpoints carry parameters, Adam moments, and the step
counter; data pools are reloaded from the manifest on resume.

Batches are mode-homogeneous: one mode draw per step applies to the whole
batch, and a batch containing any unlabeled sample is forced to Generation
(unlabeled samples train with the content condition dropped to pure
noise, t_c = 1).
"""

from __future__ import annotations

import dataclasses
import os
import time
from dataclasses import dataclass

import numpy as np
import torch

from . import codec
from .checkpoint import pack_u32, read_entries, unpack_u32, write_entries
from .config import read_kv_file
from .duplexdit import (
    BRANCHES,
    DuplexDiT,
    ModelConfig,
    POLARITY_INDEX,
    SOURCE_INDEX,
)
from .errors import CheckpointError, ConfigError, GlyphflowError, TrainingError
from .flowcore import (
    LAMBDA_DEFAULT,
    Mode,
    assign_timesteps,
    branch_loss,
    composite_loss,
    noise_latent,
    velocity_target,
)
from .glyphgen import Alphabet, CorpusConfig, Sample, draw_mixed, synth_sample
from .manifest import (
    CORPUS_CONFIG_NAME,
    MANIFEST_NAME,
    load_dataset,
    read_corpus_config,
    split_pools,
)
from .streams import Tag, derive_rng

METRICS_HEADER = "step,mode,l_cond,l_img,l_box,l_total,grad_norm,wall_time"


@dataclass
class TrainConfig:
    seed: int = 0
    steps: int = 1000
    batch: int = 8
    p_gen: float = 0.5
    p_drop: float = 0.05
    p_syn: float = 0.2
    lam: float = LAMBDA_DEFAULT
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.99
    adam_eps: float = 1e-8
    ckpt_interval: int = 1000
    log_interval: int = 50
    ligature_rate: float = 0.0
    # model architecture
    d_model: int = 64
    heads: int = 4
    blocks: int = 2
    token_patch: int = 2
    mlp_ratio: int = 4
    rope_base: float = 10000.0
    codec_patch: int = 4
    # corpus fallback for dataset-free (all-synthetic) runs; a dataset's
    # corpus.cfg takes precedence when a data directory is given
    alphabet_size: int = 64
    n_styles: int = 8
    n_scripts: int = 5
    n_slots: int = 5
    slot_px: int = 32
    glyph_seed: int = 20108

    def __post_init__(self):
        for name in ("p_gen", "p_drop", "p_syn", "ligature_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} = {v} outside [0, 1]")
        if self.steps < 1 or self.batch < 1:
            raise ConfigError("steps and batch must be >= 1")
        if self.ckpt_interval < 1 or self.log_interval < 1:
            raise ConfigError("intervals must be >= 1")
        if not 0 <= self.seed < 2**32:
            raise ConfigError(f"seed {self.seed} not a uint32")
        if self.lam < 0:
            raise ConfigError(f"lambda = {self.lam} must be >= 0")


_KEY_ALIASES = {"lambda": "lam", "λ": "lam", "eps": "adam_eps"}


def parse_train_config(path: str) -> tuple[TrainConfig, list[str]]:
    """Read a key = value config; unknown keys are errors with line numbers.

    Returns the config plus notes about defaulted headline values.
    """
    fields = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    values: dict = {}
    for lineno, key, raw in read_kv_file(path):
        key = _KEY_ALIASES.get(key, key)
        if key not in fields:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            if fields[key] == "int" or fields[key] is int:
                values[key] = int(raw)
            else:
                values[key] = float(raw)
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: bad value {raw!r} for {key}") from None
    notes = []
    if "lam" not in values:
        notes.append(f"lambda not set; defaulting to {LAMBDA_DEFAULT}")
    return TrainConfig(**values), notes


@dataclass
class TrainMetrics:
    step: int
    mode: Mode
    l_cond: float
    l_img: float
    l_box: float
    l_total: float
    grad_norm: float
    wall_time: float

    def csv_row(self) -> str:
        return (
            f"{self.step},{self.mode.value},{self.l_cond:.9e},{self.l_img:.9e},"
            f"{self.l_box:.9e},{self.l_total:.9e},{self.grad_norm:.9e},{self.wall_time:.6f}"
        )


def model_config_from(cfg: TrainConfig, corpus: CorpusConfig) -> ModelConfig:
    return ModelConfig(
        token_patch=cfg.token_patch,
        d_model=cfg.d_model,
        heads=cfg.heads,
        blocks=cfg.blocks,
        mlp_ratio=cfg.mlp_ratio,
        vocab=corpus.alphabet_size,
        n_styles=corpus.n_styles,
        n_scripts=corpus.n_scripts,
        rope_base=cfg.rope_base,
        latent_channels=cfg.codec_patch**2,
    )


def corpus_config_from(cfg: TrainConfig) -> CorpusConfig:
    return CorpusConfig(
        alphabet_size=cfg.alphabet_size,
        n_styles=cfg.n_styles,
        n_scripts=cfg.n_scripts,
        n_slots=cfg.n_slots,
        slot_px=cfg.slot_px,
        glyph_seed=cfg.glyph_seed,
    )


def make_optimizer(model: DuplexDiT, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(
        model.parameters(),
        lr=cfg.lr,
        betas=(cfg.beta1, cfg.beta2),
        eps=cfg.adam_eps,
        foreach=False,
    )


# ── Batching ────────────────────────────────────────────────────────────


def cond_arrays(batch: list[Sample]) -> tuple[np.ndarray, ...]:
    src = np.array([SOURCE_INDEX[s.cond.source] for s in batch])
    pol = np.array([POLARITY_INDEX[s.cond.polarity] for s in batch])
    sty = np.array([s.cond.style_id for s in batch])
    scr = np.array([s.cond.script_id for s in batch])
    return src, pol, sty, scr


def build_batch(
    labeled: list[Sample],
    unlabeled: list[Sample],
    synth_fn,
    cfg: TrainConfig,
    step_index: int,
) -> list[Sample]:
    rng = derive_rng(cfg.seed, step_index, Tag.DATA)
    return [
        draw_mixed(labeled, unlabeled, synth_fn, cfg.p_syn, rng)
        for _ in range(cfg.batch)
    ]


def train_step(
    model: DuplexDiT,
    opt: torch.optim.Adam,
    batch: list[Sample],
    step_index: int,
    cfg: TrainConfig,
) -> TrainMetrics:
    """One optimization step; all randomness keyed by (seed, step, purpose)."""
    t_start = time.perf_counter()
    u = float(derive_rng(cfg.seed, step_index, Tag.MODE).uniform())
    mode = Mode.GENERATION if u < cfg.p_gen else Mode.RECOGNITION
    if any(not s.labeled for s in batch):
        mode = Mode.GENERATION

    rng_t = derive_rng(cfg.seed, step_index, Tag.TIMESTEP)
    pairs = [assign_timesteps(mode, s.labeled, cfg.p_drop, rng_t) for s in batch]
    t_c = torch.tensor([p.t_c for p in pairs], dtype=torch.float32)
    t_i = torch.tensor([p.t_i for p in pairs], dtype=torch.float32)

    p = cfg.codec_patch
    z_c = codec.encode(torch.from_numpy(np.stack([s.content for s in batch])), p)
    z_i = codec.encode(torch.from_numpy(np.stack([s.strip for s in batch])), p)
    z_m = codec.encode(torch.from_numpy(np.stack([s.box_map for s in batch])), p)

    rng_n = derive_rng(cfg.seed, step_index, Tag.NOISE)
    eps = torch.from_numpy(
        rng_n.standard_normal((3,) + tuple(z_c.shape), dtype=np.float32)
    )
    eps_c, eps_i, eps_m = eps[0], eps[1], eps[2]

    tc4 = t_c.view(-1, 1, 1, 1)
    ti4 = t_i.view(-1, 1, 1, 1)
    zc_n = noise_latent(z_c, tc4, eps_c)
    zi_n = noise_latent(z_i, ti4, eps_i)
    zm_n = noise_latent(z_m, ti4, eps_m)  # t_i jointly covers strip and map

    cond = cond_arrays(batch)
    v_c, v_i, v_m = model(zc_n, zi_n, zm_n, t_c, t_i, cond)
    l_cond = branch_loss(v_c, velocity_target(z_c, eps_c))
    l_img = branch_loss(v_i, velocity_target(z_i, eps_i))
    l_box = branch_loss(v_m, velocity_target(z_m, eps_m))
    total = composite_loss(mode, l_cond, l_img, l_box, cfg.lam)
    if not torch.isfinite(total):
        raise TrainingError("non-finite loss", step=step_index)

    opt.zero_grad(set_to_none=True)
    total.backward()
    sq = 0.0
    for param in model.parameters():
        if param.grad is not None:
            sq += float(param.grad.detach().pow(2).sum())
    opt.step()

    return TrainMetrics(
        step=step_index,
        mode=mode,
        l_cond=l_cond.item(),
        l_img=l_img.item(),
        l_box=l_box.item(),
        l_total=total.item(),
        grad_norm=float(np.sqrt(sq)),
        wall_time=time.perf_counter() - t_start,
    )


# ── Checkpoint assembly ─────────────────────────────────────────────────

_MODEL_CFG_KEYS = (
    "token_patch", "d_model", "heads", "blocks", "mlp_ratio",
    "vocab", "n_styles", "n_scripts", "rope_base", "latent_channels",
)
_CORPUS_KEYS = ("alphabet_size", "n_styles", "n_scripts", "n_slots", "slot_px")


def save_checkpoint(
    path: str,
    model: DuplexDiT,
    opt: torch.optim.Adam | None,
    step: int,
    run_seed: int,
    corpus: CorpusConfig,
    codec_patch: int,
) -> None:
    entries: dict[str, np.ndarray] = {}
    params = dict(model.named_parameters())
    for name, p in params.items():
        entries[f"param/{name}"] = p.detach().numpy()
    if opt is not None:
        for name, p in params.items():
            state = opt.state.get(p)
            if state:
                entries[f"adam/m/{name}"] = state["exp_avg"].numpy()
                entries[f"adam/v/{name}"] = state["exp_avg_sq"].numpy()
                entries[f"adam/step/{name}"] = np.float32(float(state["step"]))
    entries["meta/step"] = pack_u32(step)
    entries["meta/run_seed"] = pack_u32(run_seed)
    entries["meta/codec_patch"] = np.float32(codec_patch)
    for k in _MODEL_CFG_KEYS:
        entries[f"model/{k}"] = np.float32(getattr(model.cfg, k))
    for k in _CORPUS_KEYS:
        entries[f"corpus/{k}"] = np.float32(getattr(corpus, k))
    entries["corpus/glyph_seed"] = pack_u32(corpus.glyph_seed)
    write_entries(path, entries)


def load_checkpoint(path: str, cfg: TrainConfig | None = None):
    """Restore (model, optimizer, step, corpus, codec_patch) from disk.

    The optimizer is rebuilt only when a TrainConfig is supplied (its
    hyperparameters are not stored in the file); otherwise it is None.
    """
    entries = read_entries(path)

    def need(key: str) -> np.ndarray:
        if key not in entries:
            raise CheckpointError(f"missing entry {key} in {path}")
        return entries[key]

    model_kwargs = {}
    for k in _MODEL_CFG_KEYS:
        v = need(f"model/{k}").item()
        model_kwargs[k] = v if k == "rope_base" else int(v)
    model_cfg = ModelConfig(**model_kwargs)
    corpus = CorpusConfig(
        **{k: int(need(f"corpus/{k}").item()) for k in _CORPUS_KEYS},
        glyph_seed=unpack_u32(need("corpus/glyph_seed")),
    )
    step = unpack_u32(need("meta/step"))
    run_seed = unpack_u32(need("meta/run_seed"))
    codec_patch = int(need("meta/codec_patch").item())

    model = DuplexDiT(model_cfg, seed=0)
    with torch.no_grad():
        for name, p in model.named_parameters():
            arr = need(f"param/{name}")
            if tuple(arr.shape) != tuple(p.shape):
                raise CheckpointError(f"shape mismatch for {name}: {arr.shape} vs {tuple(p.shape)}")
            p.copy_(torch.from_numpy(arr))

    opt = None
    if cfg is not None:
        opt = make_optimizer(model, cfg)
        for name, p in model.named_parameters():
            m_key = f"adam/m/{name}"
            if m_key in entries:
                opt.state[p] = {
                    "step": torch.tensor(need(f"adam/step/{name}").item()),
                    "exp_avg": torch.from_numpy(entries[m_key].copy()),
                    "exp_avg_sq": torch.from_numpy(need(f"adam/v/{name}").copy()),
                }
    return model, opt, step, run_seed, corpus, codec_patch


# ── Full runs ───────────────────────────────────────────────────────────


@dataclass
class FitResult:
    final_checkpoint: str
    metrics_path: str
    steps_run: int
    last: TrainMetrics | None


def fit(
    cfg: TrainConfig,
    data_dir: str | None,
    out_dir: str,
    resume: str | None = None,
) -> FitResult:
    os.makedirs(out_dir, exist_ok=True)
    if data_dir is not None:
        corpus = read_corpus_config(os.path.join(data_dir, CORPUS_CONFIG_NAME))
    else:
        corpus = corpus_config_from(cfg)
    alphabet = Alphabet(corpus.alphabet_size, corpus.glyph_seed)
    if data_dir is not None:
        samples = load_dataset(os.path.join(data_dir, MANIFEST_NAME), alphabet, corpus)
        labeled, unlabeled = split_pools(samples)
    else:
        labeled, unlabeled = [], []
    if cfg.p_syn < 1.0 and not labeled and not unlabeled:
        raise GlyphflowError("no data: empty pools and p_syn < 1")
    synth_fn = None
    if cfg.p_syn > 0:
        synth_fn = lambda rng: synth_sample(alphabet, rng, corpus, cfg.ligature_rate)

    start = 0
    if resume is not None:
        model, opt, start, ckpt_seed, ckpt_corpus, ckpt_p = load_checkpoint(resume, cfg)
        if ckpt_seed != cfg.seed:
            raise CheckpointError(
                f"checkpoint run seed {ckpt_seed} != config seed {cfg.seed}"
            )
        if ckpt_corpus != corpus or ckpt_p != cfg.codec_patch:
            raise CheckpointError("checkpoint corpus/codec settings disagree with run")
    else:
        model = DuplexDiT(model_config_from(cfg, corpus), seed=cfg.seed)
        opt = make_optimizer(model, cfg)

    metrics_path = os.path.join(out_dir, "metrics.csv")
    fresh = not os.path.exists(metrics_path)
    last = None
    with open(metrics_path, "a", encoding="ascii", newline="") as log:
        if fresh:
            log.write(METRICS_HEADER + "\n")
        for step in range(start + 1, cfg.steps + 1):
            batch = build_batch(labeled, unlabeled, synth_fn, cfg, step)
            last = train_step(model, opt, batch, step, cfg)
            if step % cfg.log_interval == 0:
                log.write(last.csv_row() + "\n")
                log.flush()
            if step % cfg.ckpt_interval == 0:
                save_checkpoint(
                    os.path.join(out_dir, f"ckpt_{step:06d}.bin"),
                    model, opt, step, cfg.seed, corpus, cfg.codec_patch,
                )
    final_path = os.path.join(out_dir, "ckpt_final.bin")
    save_checkpoint(final_path, model, opt, cfg.steps, cfg.seed, corpus, cfg.codec_patch)
    return FitResult(final_path, metrics_path, cfg.steps - start, last)
