import numpy as np
import pytest

from videdit.backbone import (
    ImageEmbedder,
    SceneConditioner,
    TextEmbedder,
    ToyAutoencoder,
    ToyDenoiser,
    downsample_mask,
)
from videdit.types import (
    Conditioning,
    FrameVideo,
    LatentVideo,
    MaskSequence,
    RegionConditioning,
    ValidationError,
)
from videdit.world import SyntheticWorld, UnknownSceneError, default_world


# -- autoencoder --------------------------------------------------------------


def test_identity_autoencoder_is_exact(world, autoencoder):
    video = world.synth_video("square-8", 4)
    lat = autoencoder.encode(video)
    np.testing.assert_array_equal(lat.latents, video.frames)
    out = autoencoder.decode(lat)
    np.testing.assert_array_equal(out.frames, video.frames)


def test_pooling_autoencoder_exact_on_grid_aligned_scenes():
    # dyadic scene values make the 8x8 block means exact in floating point
    w = default_world(image_scale=8)
    video = w.synth_video("pool-8", 3)
    ae = ToyAutoencoder(scale=8)
    lat = ae.encode(video)
    assert lat.latents.shape == (3, 1, 8, 8)
    for n in range(3):
        np.testing.assert_array_equal(lat.latents[n], w.render_latent("pool-8", n))
    out = ae.decode(lat)
    mse = np.mean((out.frames - video.frames) ** 2)
    assert mse == 0.0  # round-trip PSNR is infinite


def test_adapter_scale_contract_768_to_96():
    ae = ToyAutoencoder(scale=8)
    video = FrameVideo(frames=np.full((1, 1, 768, 768), 0.5))
    assert ae.encode(video).latents.shape == (1, 1, 96, 96)


def test_encode_rejects_non_divisible_dims():
    ae = ToyAutoencoder(scale=8)
    with pytest.raises(ValidationError, match="not divisible"):
        ae.encode(FrameVideo(frames=np.zeros((1, 1, 12, 12))))


def test_decode_requires_clean_timestep(autoencoder):
    with pytest.raises(ValidationError, match="timestep 0"):
        autoencoder.decode(LatentVideo(latents=np.zeros((1, 1, 8, 8)), timestep=3))


# -- embedders ----------------------------------------------------------------


def test_text_embedder_deterministic():
    emb = TextEmbedder(dim=16)
    a = emb.embed("a red bus on a road")
    b = emb.embed("a red bus on a road")
    assert a.tobytes() == b.tobytes()
    assert a.shape == (4, 16)
    assert emb.embed("something else").tobytes() != a.tobytes()


def test_empty_prompt_is_null_embedding():
    emb = TextEmbedder(dim=16)
    np.testing.assert_array_equal(emb.embed(""), np.zeros((4, 16)))


def test_image_embedder_identical_frames_cosine_one(world):
    emb = ImageEmbedder()
    v = emb.embed(world.render_frame("square-8", 0))
    assert v.shape == (16,)
    assert np.dot(v, v) == pytest.approx(1.0, abs=1e-12)


def test_image_embedder_negative_frame_cosine_minus_one(world, rng):
    emb = ImageEmbedder()
    img = rng.random((1, 8, 8))
    v1 = emb.embed(img)
    v2 = emb.embed(-img)
    assert np.dot(v1, v2) == pytest.approx(-1.0, abs=1e-12)


def test_image_embedder_stable_under_8bit_round_trip(world):
    emb = ImageEmbedder()
    img = world.render_frame("square-8", 2)
    q = np.round(img * 255.0).astype(np.uint8).astype(np.float64) / 255.0
    assert emb.embed(img).tobytes() == emb.embed(q).tobytes()


# -- scene conditioning -------------------------------------------------------


def test_conditioner_resolves_scene_from_image(world, conditioner):
    cond = conditioner.conditioning_for("square-8", frame=3)
    assert conditioner.resolve(cond, 0) == "square-8"


def test_conditioner_image_takes_precedence_over_text(world, conditioner):
    a = conditioner.conditioning_for("shape-src-a")
    b = conditioner.conditioning_for("shape-trg-a")
    mixed = Conditioning(text=a.text, image=b.image)
    assert conditioner.resolve(mixed, 0) == "shape-trg-a"


def test_conditioner_falls_back_to_text(world, conditioner):
    a = conditioner.conditioning_for("square-8")
    no_image = Conditioning(text=a.text, image=np.zeros(conditioner.dim))
    assert conditioner.resolve(no_image, 0) == "square-8"


def test_conditioner_unknown_conditioning_raises(conditioner, rng):
    cond = Conditioning(text=rng.standard_normal((4, conditioner.dim)),
                        image=rng.standard_normal(conditioner.dim))
    with pytest.raises(UnknownSceneError):
        conditioner.resolve(cond, 0)


def test_per_frame_conditioning_resolves_each_frame(conditioner):
    cond = conditioner.conditioning_for("square-8", num_frames=4)
    assert cond.image.shape == (4, conditioner.dim)
    for n in range(4):
        assert conditioner.resolve(cond, n) == "square-8"


# -- masked injection + toy denoiser ------------------------------------------


def _noisy_latents(world, sched, scene, n_frames, t, rng):
    clean = np.stack([world.render_latent(scene, n) for n in range(n_frames)])
    eta = rng.standard_normal(clean.shape)
    ab = sched.alpha_bar[t]
    z = np.sqrt(ab) * clean + np.sqrt(1.0 - ab) * eta
    return LatentVideo(z, timestep=t), clean, eta


def test_toy_denoiser_recovers_injected_noise(world, conditioner, sched, toy_denoiser, rng):
    for t in (1, 17, 50):
        lat, clean, eta = _noisy_latents(world, sched, "square-8", 4, t, rng)
        cond = RegionConditioning.uniform(conditioner.conditioning_for("square-8", num_frames=4))
        out = toy_denoiser.denoise(lat, t, cond)
        assert np.max(np.abs(out.eps - eta)) <= 1e-12


def test_masked_injection_degenerates_with_equal_conditionings(world, conditioner, sched, toy_denoiser, rng):
    lat, _, _ = _noisy_latents(world, sched, "square-8", 3, 20, rng)
    c = conditioner.conditioning_for("square-8", num_frames=3)
    mask = MaskSequence(masks=(rng.random((3, 8, 8)) > 0.5).astype(float))
    masked = toy_denoiser.denoise(lat, 20, RegionConditioning(foreground=c, background=c, mask=mask))
    unmasked = toy_denoiser.denoise(lat, 20, RegionConditioning.uniform(c))
    assert masked.eps.tobytes() == unmasked.eps.tobytes()


def test_all_ones_mask_equals_foreground_only(world, conditioner, sched, toy_denoiser, rng):
    lat, _, _ = _noisy_latents(world, sched, "shape-src-a", 3, 30, rng)
    fg = conditioner.conditioning_for("shape-trg-a", num_frames=3)
    bg = conditioner.conditioning_for("shape-src-a", num_frames=3)
    ones = MaskSequence.ones(3, 16, 16)
    masked = toy_denoiser.denoise(lat, 30, RegionConditioning(foreground=fg, background=bg, mask=ones))
    fg_only = toy_denoiser.denoise(lat, 30, RegionConditioning.uniform(fg))
    assert masked.eps.tobytes() == fg_only.eps.tobytes()


def test_masked_injection_splits_regions(world, conditioner, sched, toy_denoiser, rng):
    # inside the mask the foreground scene is rendered, outside the background one
    lat, _, _ = _noisy_latents(world, sched, "shape-src-a", 2, 40, rng)
    fg = conditioner.conditioning_for("shape-trg-a", num_frames=2)
    bg = conditioner.conditioning_for("shape-src-a", num_frames=2)
    m = np.zeros((2, 16, 16))
    m[:, :, 8:] = 1.0
    out = toy_denoiser.denoise(lat, 40, RegionConditioning(foreground=fg, background=bg,
                                                           mask=MaskSequence(masks=m)))
    ab = sched.alpha_bar[40]
    for n in range(2):
        r_fg = toy_denoiser.render_for(fg, n)
        r_bg = toy_denoiser.render_for(bg, n)
        recon = lat.latents[n] - np.sqrt(1.0 - ab) * out.eps[n]
        np.testing.assert_allclose(recon[:, :, 8:], np.sqrt(ab) * r_fg[:, :, 8:], atol=1e-12)
        np.testing.assert_allclose(recon[:, :, :8], np.sqrt(ab) * r_bg[:, :, :8], atol=1e-12)


def test_mask_frame_count_mismatch_raises(world, conditioner, sched, toy_denoiser, rng):
    lat, _, _ = _noisy_latents(world, sched, "square-8", 3, 10, rng)
    c = conditioner.conditioning_for("square-8", num_frames=3)
    bad = MaskSequence.zeros(2, 8, 8)
    with pytest.raises(ValidationError, match="mask has 2 frames"):
        toy_denoiser.denoise(lat, 10, RegionConditioning(foreground=c, background=c, mask=bad))


def test_block_features_always_present(world, conditioner, sched, rng):
    den = ToyDenoiser(conditioner, sched, feature_downscale=2)
    lat, _, _ = _noisy_latents(world, sched, "square-8", 2, 10, rng)
    cond = RegionConditioning.uniform(conditioner.conditioning_for("square-8", num_frames=2))
    out = den.denoise(lat, 10, cond)
    assert out.block_features["up2"].shape == (2, 1, 4, 4)
    assert out.block_features["mid"].shape == (2, 1, 2, 2)


def test_toy_render_square8(conditioner, toy_denoiser):
    cond = conditioner.conditioning_for("square-8")
    r = toy_denoiser.render_for(cond, 0)
    expect = np.full((8, 8), 0.2)
    expect[2:5, 1:4] = 0.9
    np.testing.assert_array_equal(r[0], expect)


def test_toy_render_null_conditioning_is_zero(conditioner, toy_denoiser):
    r = toy_denoiser.render_for(conditioner.null_conditioning(), 0)
    assert not r.any()


def test_denoiser_timestep_bounds(world, conditioner, sched, toy_denoiser, rng):
    lat, _, _ = _noisy_latents(world, sched, "square-8", 2, 10, rng)
    cond = RegionConditioning.uniform(conditioner.conditioning_for("square-8", num_frames=2))
    for bad_t in (0, 51):
        with pytest.raises(ValidationError, match="outside"):
            toy_denoiser.denoise(lat, bad_t, cond)


def test_downsample_mask_rebinarizes():
    m = np.zeros((1, 8, 8))
    m[0, 0:4, 0:4] = 1.0
    small = downsample_mask(m, 2)
    assert small.shape == (1, 4, 4)
    assert set(np.unique(small)) <= {0.0, 1.0}
    assert small[0, 0, 0] == 1.0 and small[0, 3, 3] == 0.0
