import math

import numpy as np
import pytest
import torch

from glyphflow.duplexdit import (
    BRANCHES,
    DuplexDiT,
    ModelConfig,
    TokenGrid,
    build_model,
    compute_rope,
    duplicate_rope,
    modulate,
    rotate_pairs,
    sinusoidal_embedding,
)
from glyphflow.glyphgen import ConditionVector, Polarity, Source
from glyphflow.streams import Tag, derive_rng

SMALL = ModelConfig(d_model=16, heads=1, blocks=1)


def _cond(style=0, script=0):
    return ConditionVector(
        source=Source.SYNTHETIC,
        polarity=Polarity.DARK_ON_LIGHT,
        style_id=style,
        script_id=script,
    )


def _randomize(model, rng, std=0.05):
    with torch.no_grad():
        for _, p in sorted(model.named_parameters()):
            vals = rng.normal(0.0, std, size=tuple(p.shape)).astype(np.float32)
            p.copy_(torch.from_numpy(vals))


def _latent(rng, shape=(16, 4, 10)):
    return torch.from_numpy(rng.standard_normal(shape).astype(np.float32))


# ── Config ──────────────────────────────────────────────────────────────


def test_config_rejects_indivisible_heads():
    with pytest.raises(ValueError, match="heads"):
        ModelConfig(d_model=64, heads=3)


def test_config_rejects_head_dim_not_multiple_of_four():
    with pytest.raises(ValueError, match="divisible by 4"):
        ModelConfig(d_model=64, heads=32)


def test_config_derived_dims():
    cfg = ModelConfig()
    assert cfg.head_dim == 16
    assert cfg.patch_dim == 64


def test_token_grid_positions_row_major():
    grid = TokenGrid(2, 3)
    assert grid.n == 6
    expect = [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]
    assert [tuple(p) for p in grid.positions()] == expect


# ── Rotary angles ───────────────────────────────────────────────────────


def test_rope_origin_is_all_zero():
    ang = compute_rope(TokenGrid(3, 4), head_dim=8)
    assert np.all(ang[0] == 0.0)


def test_rope_frequency_formula():
    grid = TokenGrid(3, 5)
    hd, base = 16, 10000.0
    ang = compute_rope(grid, hd, base)
    per_axis = hd // 4
    freqs = base ** (-2.0 * np.arange(per_axis) / (hd // 2))
    for p, (y, x) in enumerate(grid.positions()):
        assert np.allclose(ang[p, :per_axis], y * freqs, atol=0.0)
        assert np.allclose(ang[p, per_axis:], x * freqs, atol=0.0)


def test_rope_axial_separability():
    grid = TokenGrid(4, 6)
    ang = compute_rope(grid, 8)
    per_axis = 2
    for p, (y, x) in enumerate(grid.positions()):
        row = compute_rope(TokenGrid(4, 1), 8)[y]
        col = compute_rope(TokenGrid(1, 6), 8)[x]
        assert np.array_equal(ang[p, :per_axis], row[:per_axis])
        assert np.array_equal(ang[p, per_axis:], col[per_axis:])


def test_rope_rejects_bad_head_dim():
    with pytest.raises(ValueError, match="divisible by 4"):
        compute_rope(TokenGrid(2, 2), head_dim=6)


def test_rotation_preserves_norm(rng):
    grid = TokenGrid(4, 10)
    ang = torch.from_numpy(compute_rope(grid, 16)).float()[None]
    x = torch.from_numpy(rng.standard_normal((2, 1, grid.n, 16)).astype(np.float32))
    r = rotate_pairs(x, ang)
    assert torch.allclose(r.norm(dim=-1), x.norm(dim=-1), atol=1e-5)


def test_rotate_pairs_two_by_two_oracle():
    theta = 0.7
    x = torch.tensor([[[[3.0, -2.0]]]])
    ang = torch.tensor([[[theta]]])
    r = rotate_pairs(x, ang)[0, 0, 0]
    assert math.isclose(float(r[0]), 3.0 * math.cos(theta) + 2.0 * math.sin(theta), rel_tol=1e-6)
    assert math.isclose(float(r[1]), 3.0 * math.sin(theta) - 2.0 * math.cos(theta), rel_tol=1e-6)


def test_rotation_score_depends_only_on_relative_position(rng):
    # 1D grid so shifting position is well defined
    grid = TokenGrid(1, 8)
    ang = torch.from_numpy(compute_rope(grid, 8)).float()[None]
    q = torch.from_numpy(rng.standard_normal((1, 1, 1, 8)).astype(np.float32))
    k = torch.from_numpy(rng.standard_normal((1, 1, 1, 8)).astype(np.float32))

    def score(pq, pk):
        rq = rotate_pairs(q, ang[:, pq : pq + 1])
        rk = rotate_pairs(k, ang[:, pk : pk + 1])
        return float((rq * rk).sum())

    assert math.isclose(score(1, 3), score(4, 6), rel_tol=1e-5)
    assert math.isclose(score(5, 2), score(6, 3), rel_tol=1e-5)


# ── Duplicate rope ──────────────────────────────────────────────────────


def test_duplicate_rope_zero_offsets_bitwise_identical():
    ang = compute_rope(TokenGrid(4, 20), 16)
    zero = np.zeros((4, 8))
    a_c, a_i, a_m = duplicate_rope(ang, zero, zero)
    assert np.array_equal(np.broadcast_to(ang[None], a_c.shape), a_c)
    assert np.array_equal(a_c, np.broadcast_to(a_i, a_c.shape))
    assert np.array_equal(a_c, a_m)


def test_duplicate_rope_offset_is_position_independent():
    # integer base angles and dyadic offsets make float addition exact,
    # so the broadcast contract can be checked bitwise
    grid = TokenGrid(1, 6)
    ang = compute_rope(grid, 4)  # per-axis freq list is [1.0]
    assert np.array_equal(ang, ang.astype(np.int64).astype(np.float64))
    e_c = np.array([[0.5, -0.25]])
    e_m = np.array([[2.0, 0.125]])
    a_c, a_i, a_m = duplicate_rope(ang, e_c, e_m)
    d_c = a_c - np.broadcast_to(a_i, a_c.shape)
    d_m = a_m - np.broadcast_to(a_i, a_m.shape)
    for p in range(grid.n):
        assert np.array_equal(d_c[:, p, :], e_c)
        assert np.array_equal(d_m[:, p, :], e_m)


def test_duplicate_rope_shape_mismatch():
    ang = compute_rope(TokenGrid(2, 2), 8)
    with pytest.raises(ValueError, match="offset"):
        duplicate_rope(ang, np.zeros((2, 4)), np.zeros((1, 4)))
    with pytest.raises(ValueError, match="dim"):
        duplicate_rope(ang, np.zeros((2, 3)), np.zeros((2, 3)))


def test_same_position_cross_branch_score_matches_within_branch(rng):
    # with zero offsets a content/image token pair at one position scores
    # exactly like an image/image pair carrying the same features
    ang = torch.from_numpy(compute_rope(TokenGrid(2, 5), 16)).float()
    zero = torch.zeros(1, 8)
    a_c, a_i, _ = duplicate_rope(ang, zero, zero)
    q = torch.from_numpy(rng.standard_normal((1, 1, 10, 16)).astype(np.float32))
    k = torch.from_numpy(rng.standard_normal((1, 1, 10, 16)).astype(np.float32))
    s_cross = (rotate_pairs(q, a_c) * rotate_pairs(k, a_i.expand(1, -1, -1))).sum(-1)
    s_within = (rotate_pairs(q, a_i.expand(1, -1, -1)) * rotate_pairs(k, a_i.expand(1, -1, -1))).sum(-1)
    assert torch.equal(s_cross, s_within)


# ── Timestep embedding and modulation ───────────────────────────────────


def test_sinusoidal_embedding_formula():
    t = torch.tensor([0.0, 0.37, 1.0])
    dim = 12
    emb = sinusoidal_embedding(t, dim)
    assert emb.shape == (3, dim)
    half = dim // 2
    k = np.arange(half)
    freqs = np.exp(-math.log(10000.0) * k / half)
    for i, tv in enumerate([0.0, 0.37, 1.0]):
        args = tv * 1000.0 * freqs
        assert np.allclose(emb[i, :half].numpy(), np.cos(args), atol=1e-5)
        assert np.allclose(emb[i, half:].numpy(), np.sin(args), atol=1e-5)


def test_sinusoidal_embedding_distinguishes_timesteps():
    emb = sinusoidal_embedding(torch.tensor([0.2, 0.8]), 64)
    assert not torch.allclose(emb[0], emb[1])


def test_modulate_identity_at_zero():
    x = torch.randn(2, 5, 8)
    z = torch.zeros(2, 5, 8)
    assert torch.equal(modulate(x, z, z), x)


def test_modulate_formula():
    x = torch.full((1, 1, 4), 2.0)
    s = torch.full((1, 1, 4), 0.5)
    b = torch.full((1, 1, 4), -1.0)
    assert torch.equal(modulate(x, s, b), torch.full((1, 1, 4), 2.0))


def test_block_is_identity_with_zero_modulation(rng):
    model = DuplexDiT(SMALL, seed=3)
    block = model.blocks[0]
    x = torch.from_numpy(rng.standard_normal((2, 10, 16)).astype(np.float32))
    c = torch.from_numpy(rng.standard_normal((2, 10, 16)).astype(np.float32))
    ang = torch.from_numpy(compute_rope(TokenGrid(1, 10), 16)).float()[None].expand(1, -1, -1)
    assert torch.equal(block(x, c, ang), x)


# ── Tokenization ────────────────────────────────────────────────────────


def test_tokenize_default_grid_is_4x20():
    model = build_model(ModelConfig(), seed=0)
    z = torch.zeros(1, 16, 8, 40)
    tokens, grid = model.tokenize(z, "i")
    assert (grid.rows, grid.cols) == (4, 20)
    assert tokens.shape == (1, 80, 64)


def test_tokenize_zero_latent_gives_identical_rows():
    model = build_model(SMALL, seed=1)
    tokens, _ = model.tokenize(torch.zeros(1, 16, 4, 10), "c")
    assert torch.equal(tokens, tokens[:, :1, :].expand_as(tokens))


def test_tokenize_branches_use_distinct_projections(rng):
    model = build_model(SMALL, seed=1)
    z = _latent(rng)[None]
    t_c, _ = model.tokenize(z, "c")
    t_i, _ = model.tokenize(z, "i")
    assert not torch.allclose(t_c, t_i)


def test_tokenize_rejects_unknown_modality():
    model = build_model(SMALL, seed=0)
    with pytest.raises(ValueError, match="modality"):
        model.tokenize(torch.zeros(1, 16, 4, 10), "x")


def test_patchify_unpatchify_round_trip(rng):
    model = build_model(SMALL, seed=0)
    z = torch.from_numpy(rng.standard_normal((2, 16, 4, 10)).astype(np.float32))
    patches, grid = model._patchify(z)
    assert torch.equal(model._unpatchify(patches, grid), z)


def test_patchify_rejects_bad_dims():
    model = build_model(SMALL, seed=0)
    with pytest.raises(ValueError, match="channels"):
        model._patchify(torch.zeros(1, 8, 4, 10))
    with pytest.raises(ValueError, match="divisible"):
        model._patchify(torch.zeros(1, 16, 5, 10))


# ── Initialization ──────────────────────────────────────────────────────


def test_fresh_model_predicts_exactly_zero(rng):
    model = build_model(SMALL, seed=7)
    for _ in range(5):
        z_c, z_i, z_m = (_latent(rng)[None] for _ in range(3))
        v_c, v_i, v_m = model(z_c, z_i, z_m, 0.3, 0.9, _cond())
        assert torch.count_nonzero(v_c) == 0
        assert torch.count_nonzero(v_i) == 0
        assert torch.count_nonzero(v_m) == 0


def test_init_is_seed_deterministic():
    a = build_model(SMALL, seed=5)
    b = build_model(SMALL, seed=5)
    c = build_model(SMALL, seed=6)
    for (n, pa), (_, pb), (_, pc) in zip(
        sorted(a.named_parameters()),
        sorted(b.named_parameters()),
        sorted(c.named_parameters()),
    ):
        assert torch.equal(pa, pb), n
        if "out_proj" not in n and "mod.1" not in n and "e_mod" not in n and not n.endswith("bias"):
            assert not torch.equal(pa, pc), n


def test_style_rows_differ_after_init():
    model = build_model(SMALL, seed=2)
    emb = model.emb_style.weight
    assert not torch.allclose(emb[0], emb[1])


# ── Forward ─────────────────────────────────────────────────────────────


def test_forward_shapes_batched_and_unbatched(rng):
    model = build_model(SMALL, seed=4)
    _randomize(model, rng)
    z = [_latent(rng) for _ in range(3)]
    v_c, v_i, v_m = model(z[0], z[1], z[2], 0.0, 0.5, _cond())
    assert v_c.shape == v_i.shape == v_m.shape == (16, 4, 10)
    zb = [x[None].repeat(2, 1, 1, 1) for x in z]
    v_c, v_i, v_m = model(zb[0], zb[1], zb[2], 0.0, 0.5, _cond())
    assert v_c.shape == (2, 16, 4, 10)


def test_forward_inactive_branch_returns_none(rng):
    model = build_model(SMALL, seed=4)
    v_c, v_i, v_m = model(None, _latent(rng), _latent(rng), 0.0, 0.5, _cond(), branches=("i", "m"))
    assert v_c is None
    assert v_i is not None and v_m is not None


def test_forward_missing_active_latent_raises(rng):
    model = build_model(SMALL, seed=4)
    with pytest.raises(ValueError, match="missing"):
        model(None, _latent(rng), _latent(rng), 0.0, 0.5, _cond())


def test_forward_rejects_non_finite(rng):
    model = build_model(SMALL, seed=4)
    bad = _latent(rng)
    bad[0, 0, 0] = float("nan")
    with pytest.raises(ValueError, match="finite"):
        model(bad, _latent(rng), _latent(rng), 0.0, 0.5, _cond())


def test_forward_rejects_grid_disagreement(rng):
    model = build_model(SMALL, seed=4)
    with pytest.raises(ValueError, match="grid"):
        model(_latent(rng), _latent(rng, (16, 4, 12)), _latent(rng, (16, 4, 12)), 0.0, 0.5, _cond())


def test_forward_rejects_out_of_range_timestep(rng):
    model = build_model(SMALL, seed=4)
    with pytest.raises(ValueError, match="timestep"):
        model(_latent(rng), _latent(rng), _latent(rng), 0.0, 1.5, _cond())


def test_forward_batch_independence(rng):
    model = build_model(SMALL, seed=4)
    _randomize(model, rng)
    zs = [[_latent(rng) for _ in range(3)] for _ in range(3)]
    batch = [torch.stack([zs[b][m] for b in range(3)]) for m in range(3)]
    vb = model(batch[0], batch[1], batch[2], 0.25, 0.75, _cond())
    for b in range(3):
        vs = model(zs[b][0], zs[b][1], zs[b][2], 0.25, 0.75, _cond())
        for m in range(3):
            assert torch.allclose(vb[m][b], vs[m], atol=1e-5)


def test_forward_output_finite_after_randomization(rng):
    model = build_model(SMALL, seed=4)
    _randomize(model, rng, std=0.2)
    for _ in range(3):
        v = model(_latent(rng), _latent(rng), _latent(rng), 0.1, 0.9, _cond())
        assert all(torch.isfinite(x).all() for x in v)


def test_forward_condition_changes_output(rng):
    model = build_model(SMALL, seed=4)
    _randomize(model, rng)
    z = [_latent(rng) for _ in range(3)]
    va = model(*z, 0.0, 0.5, _cond(style=0))
    vb = model(*z, 0.0, 0.5, _cond(style=1))
    assert not torch.allclose(va[1], vb[1])


def test_forward_timestep_changes_output(rng):
    model = build_model(SMALL, seed=4)
    _randomize(model, rng)
    z = [_latent(rng) for _ in range(3)]
    va = model(*z, 0.0, 0.4, _cond())
    vb = model(*z, 0.0, 0.8, _cond())
    assert not torch.allclose(va[1], vb[1])


def test_gradients_flow_to_rotary_offsets(rng):
    model = build_model(SMALL, seed=4)
    _randomize(model, rng)
    z = [_latent(rng) for _ in range(3)]
    v = model(*z, 0.0, 0.5, _cond())
    loss = sum(x.square().mean() for x in v)
    loss.backward()
    assert model.e_mod_c.grad is not None
    assert float(model.e_mod_c.grad.abs().sum()) > 0.0
    assert float(model.e_mod_m.grad.abs().sum()) > 0.0


def test_loss_scaling_scales_gradients(rng):
    model = build_model(SMALL, seed=4)
    _randomize(model, rng)
    z = [_latent(rng) for _ in range(3)]

    def grad_of(scale):
        model.zero_grad()
        v = model(*z, 0.0, 0.5, _cond())
        (scale * sum(x.square().mean() for x in v)).backward()
        return {n: p.grad.clone() for n, p in model.named_parameters()}

    g1, g2 = grad_of(1.0), grad_of(2.0)
    for n in g1:
        assert torch.allclose(2.0 * g1[n], g2[n], atol=1e-6), n
