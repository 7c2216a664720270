import numpy as np
import pytest
import torch

from glyphflow.duplexdit import ModelConfig, build_model
from glyphflow.errors import SamplingError
from glyphflow.flowcore import Mode
from glyphflow.glyphgen import ConditionVector, Polarity, Source, render_content_canvas
from glyphflow.sampler import (
    SampleRequest,
    decode_glyphs,
    generate,
    guided_velocity,
    recognize,
)
from glyphflow.streams import Tag, derive_rng

SMALL = ModelConfig(d_model=16, heads=1, blocks=1)


def _cond():
    return ConditionVector(
        source=Source.SYNTHETIC,
        polarity=Polarity.DARK_ON_LIGHT,
        style_id=1,
        script_id=2,
    )


def _model(rng, std=0.05):
    model = build_model(SMALL, seed=0)
    with torch.no_grad():
        for _, p in sorted(model.named_parameters()):
            p.copy_(torch.from_numpy(rng.normal(0.0, std, size=tuple(p.shape)).astype(np.float32)))
    return model


def _latent(rng, shape=(16, 4, 10)):
    return torch.from_numpy(rng.standard_normal(shape).astype(np.float32))


# ── Request validation ──────────────────────────────────────────────────


def test_request_rejects_bad_steps_and_guidance():
    with pytest.raises(ValueError, match="steps"):
        SampleRequest(Mode.GENERATION, _cond(), steps=0)
    with pytest.raises(ValueError, match="guidance"):
        SampleRequest(Mode.GENERATION, _cond(), guidance=-0.5)


def test_generate_rejects_recognition_request(rng):
    with pytest.raises(ValueError, match="Generation"):
        generate(_model(rng), _latent(rng), SampleRequest(Mode.RECOGNITION, _cond()))


def test_recognize_rejects_generation_request(rng):
    with pytest.raises(ValueError, match="Recognition"):
        recognize(_model(rng), _latent(rng), _latent(rng), SampleRequest(Mode.GENERATION, _cond()))


# ── Guidance arithmetic ─────────────────────────────────────────────────


def test_guided_velocity_endpoints(rng):
    v_c = torch.from_numpy(rng.standard_normal((4, 4)))
    v_u = torch.from_numpy(rng.standard_normal((4, 4)))
    assert torch.equal(guided_velocity(v_c, v_u, 0.0), v_u)
    assert torch.equal(guided_velocity(v_c, v_u, 1.0), v_u + (v_c - v_u))
    expect = v_u + 2.0 * (v_c - v_u)
    assert torch.allclose(guided_velocity(v_c, v_u, 2.0), expect)


def test_guided_velocity_shape_mismatch(rng):
    with pytest.raises(ValueError, match="shape"):
        guided_velocity(torch.zeros(2, 2), torch.zeros(3, 2), 1.0)


def test_recognition_rejects_guidance(rng):
    req = SampleRequest(Mode.RECOGNITION, _cond(), guidance=2.0)
    with pytest.raises(SamplingError, match="guidance"):
        recognize(_model(rng), _latent(rng), _latent(rng), req)


# ── Euler integration ───────────────────────────────────────────────────


def test_generate_single_step_closed_form(rng):
    model = _model(rng)
    content = _latent(rng)
    req = SampleRequest(Mode.GENERATION, _cond(), steps=1, seed=11)
    z_i, z_m = generate(model, content, req)

    noise_rng = derive_rng(11, Tag.SAMPLE)
    eps_i = torch.from_numpy(noise_rng.standard_normal((16, 4, 10), dtype=np.float32))
    eps_m = torch.from_numpy(noise_rng.standard_normal((16, 4, 10), dtype=np.float32))
    with torch.no_grad():
        _, v_i, v_m = model(content, eps_i, eps_m, 0.0, 1.0, req.cond)
    assert torch.equal(z_i, eps_i - 1.0 * v_i)
    assert torch.equal(z_m, eps_m - 1.0 * v_m)


def test_recognize_single_step_closed_form(rng):
    model = _model(rng)
    strip, box_map = _latent(rng), _latent(rng)
    req = SampleRequest(Mode.RECOGNITION, _cond(), steps=1, seed=3)
    z_c = recognize(model, strip, box_map, req)

    noise_rng = derive_rng(3, Tag.SAMPLE)
    eps_c = torch.from_numpy(noise_rng.standard_normal((16, 4, 10), dtype=np.float32))
    with torch.no_grad():
        v_c, _, _ = model(eps_c, strip, box_map, 1.0, 0.0, req.cond)
    assert torch.equal(z_c, eps_c - 1.0 * v_c)


def test_generate_is_deterministic(rng):
    model = _model(rng)
    content = _latent(rng)
    req = SampleRequest(Mode.GENERATION, _cond(), steps=4, seed=21)
    a = generate(model, content, req)
    b = generate(model, content, req)
    assert torch.equal(a[0], b[0]) and torch.equal(a[1], b[1])


def test_generate_seed_changes_output(rng):
    model = _model(rng)
    content = _latent(rng)
    a = generate(model, content, SampleRequest(Mode.GENERATION, _cond(), steps=4, seed=1))
    b = generate(model, content, SampleRequest(Mode.GENERATION, _cond(), steps=4, seed=2))
    assert not torch.allclose(a[0], b[0])


def test_generate_zero_init_model_returns_noise(rng):
    # zero velocities leave the seeded noise untouched
    model = build_model(SMALL, seed=0)
    content = _latent(rng)
    req = SampleRequest(Mode.GENERATION, _cond(), steps=5, seed=9)
    z_i, z_m = generate(model, content, req)
    noise_rng = derive_rng(9, Tag.SAMPLE)
    eps_i = torch.from_numpy(noise_rng.standard_normal((16, 4, 10), dtype=np.float32))
    eps_m = torch.from_numpy(noise_rng.standard_normal((16, 4, 10), dtype=np.float32))
    assert torch.equal(z_i, eps_i)
    assert torch.equal(z_m, eps_m)


def test_generate_batched_inputs(rng):
    model = _model(rng)
    content = _latent(rng, (2, 16, 4, 10))
    z_i, z_m = generate(model, content, SampleRequest(Mode.GENERATION, _cond(), steps=2, seed=5))
    assert z_i.shape == content.shape and z_m.shape == content.shape


def test_guidance_changes_generation(rng):
    model = _model(rng)
    content = _latent(rng)
    base = generate(model, content, SampleRequest(Mode.GENERATION, _cond(), steps=3, seed=4))
    up = generate(
        model, content, SampleRequest(Mode.GENERATION, _cond(), steps=3, seed=4, guidance=2.0)
    )
    assert not torch.allclose(base[0], up[0])


def test_non_finite_velocity_aborts_with_step_index(rng):
    class Exploder:
        def __call__(self, z_c, z_i, z_m, t_c, t_i, cond):
            return None, torch.full_like(z_i, float("nan")), torch.zeros_like(z_m)

    req = SampleRequest(Mode.GENERATION, _cond(), steps=3, seed=0)
    with pytest.raises(SamplingError, match="step 0") as exc:
        generate(Exploder(), _latent(rng), req)
    assert exc.value.step == 0


# ── Glyph decoding ──────────────────────────────────────────────────────


def test_decode_glyphs_round_trip(small_alphabet, rng):
    atlas = small_alphabet.canonical_atlas(16)
    for _ in range(100):
        ids = [int(i) for i in rng.integers(0, small_alphabet.size, size=3)]
        canvas = render_content_canvas(small_alphabet, ids, 16)
        assert decode_glyphs(canvas, atlas) == ids


def test_decode_glyphs_tolerates_noise(small_alphabet, rng):
    atlas = small_alphabet.canonical_atlas(16)
    ids = [2, 7, 11]
    canvas = render_content_canvas(small_alphabet, ids, 16)
    noisy = np.clip(canvas + rng.normal(0.0, 0.3, canvas.shape).astype(np.float32), -1, 1)
    assert decode_glyphs(noisy, atlas) == ids


def test_decode_glyphs_blank_slot_picks_nearest_to_blank(small_alphabet):
    atlas = small_alphabet.canonical_atlas(16)
    blank = np.full((16, 16), -1.0, dtype=np.float32)
    expect = int(np.argmin(((atlas - blank[None]) ** 2).reshape(len(atlas), -1).mean(axis=1)))
    assert decode_glyphs(blank, atlas) == [expect]


def test_decode_glyphs_shape_validation(small_alphabet):
    atlas = small_alphabet.canonical_atlas(16)
    with pytest.raises(ValueError, match="atlas"):
        decode_glyphs(np.zeros((16, 20), dtype=np.float32), atlas)
    with pytest.raises(ValueError, match="atlas"):
        decode_glyphs(np.zeros((8, 16), dtype=np.float32), atlas)
