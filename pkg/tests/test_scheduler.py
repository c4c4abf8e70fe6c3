import numpy as np
import pytest

from videdit.backbone import ToyDenoiser
from videdit.scheduler import (
    DDIMSchedule,
    GuidanceConfig,
    cfg_combine,
    ddim_invert,
    ddim_sample,
    ddim_step,
    make_schedule,
)
from videdit.types import LatentVideo, RegionConditioning, ValidationError


# -- schedule -----------------------------------------------------------------


def test_two_point_schedule():
    s = make_schedule(1)
    assert s.num_steps == 1
    assert s.alpha_bar[0] == 1.0
    assert 0.0 < s.alpha_bar[1] < 1.0


def test_t50_linear_schedule_strictly_decreasing():
    s = make_schedule(50)
    assert s.alpha_bar.shape == (51,)
    assert np.all(np.diff(s.alpha_bar) < 0.0)


def test_cosine_schedule_monotonic_scan():
    s = make_schedule(50, curve="cosine")
    assert s.alpha_bar[0] == 1.0
    assert np.all(np.diff(s.alpha_bar) < 0.0)
    assert 0.0 < s.alpha_bar[-1] < 1.0


def test_schedule_rejects_bad_T():
    with pytest.raises(ValidationError):
        make_schedule(0)


def test_default_band_selects_ten_noisiest_steps():
    s = make_schedule(50)
    assert s.timestep_band == (40, 50)
    assert s.band_steps() == list(range(50, 40, -1))
    assert len(s.band_steps()) == 10


def test_empty_band_raises():
    s = make_schedule(10)
    with pytest.raises(ValidationError, match="empty timestep band"):
        s.band_steps(band=(10, 10))


def test_schedule_invariant_violations_rejected():
    with pytest.raises(ValidationError, match="strictly decreasing"):
        DDIMSchedule(alpha_bar=np.array([1.0, 0.5, 0.5]), timestep_band=(1, 2))
    with pytest.raises(ValidationError, match="must be exactly 1"):
        DDIMSchedule(alpha_bar=np.array([0.99, 0.5, 0.2]), timestep_band=(1, 2))


# -- single step --------------------------------------------------------------


def test_step_with_zero_eps_and_flat_alphas_is_identity(rng):
    # adjacent alpha-bars one ulp apart: their square roots coincide, so the
    # zero-noise update reduces to z / s * s, identity up to one rounding
    ab = np.array([1.0, 0.49, np.nextafter(0.49, 0.0)])
    assert np.sqrt(ab[1]) == np.sqrt(ab[2])
    sched = DDIMSchedule(alpha_bar=ab, timestep_band=(1, 2))
    z = LatentVideo(rng.standard_normal((2, 1, 4, 4)), timestep=2)
    out = ddim_step(z, np.zeros_like(z.latents), 2, sched)
    assert out.timestep == 1
    np.testing.assert_allclose(out.latents, z.latents, rtol=1e-15, atol=0)


def test_step_with_toy_eps_lands_on_render(world, conditioner, sched, toy_denoiser, rng):
    # at t=1 the output *is* the clean estimate, which the toy denoiser pins to R
    clean = np.stack([world.render_latent("square-8", n) for n in range(3)])
    eta = rng.standard_normal(clean.shape)
    ab = sched.alpha_bar[1]
    z = LatentVideo(np.sqrt(ab) * clean + np.sqrt(1 - ab) * eta, timestep=1)
    cond = RegionConditioning.uniform(conditioner.conditioning_for("square-8", num_frames=3))
    eps = toy_denoiser.denoise(z, 1, cond).eps
    out = ddim_step(z, eps, 1, sched)
    assert out.timestep == 0
    np.testing.assert_allclose(out.latents, clean, atol=1e-12)


def test_step_rejects_out_of_range_t(sched, rng):
    z = LatentVideo(rng.standard_normal((1, 1, 4, 4)), timestep=0)
    with pytest.raises(ValidationError):
        ddim_step(z, np.zeros_like(z.latents), 0, sched)
    with pytest.raises(ValidationError):
        ddim_step(z, np.zeros_like(z.latents), 51, sched)


def test_step_is_linear_in_latents_and_eps(sched, rng):
    # superposition: step(a*z1 + b*z2, a*e1 + b*e2) == a*step(z1,e1) + b*step(z2,e2)
    a, b = 0.3, -1.7
    z1, z2 = rng.standard_normal((2, 2, 1, 4, 4))
    e1, e2 = rng.standard_normal((2, 2, 1, 4, 4))
    t = 25
    lhs = ddim_step(LatentVideo(a * z1 + b * z2, t), a * e1 + b * e2, t, sched).latents
    rhs = (a * ddim_step(LatentVideo(z1, t), e1, t, sched).latents
           + b * ddim_step(LatentVideo(z2, t), e2, t, sched).latents)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


# -- inversion ----------------------------------------------------------------


def test_invert_then_sample_round_trip_exact(world, conditioner, sched, toy_denoiser, autoencoder):
    video = world.synth_video("shape-src-a", 8)
    clean = autoencoder.encode(video)
    cond = RegionConditioning.uniform(conditioner.conditioning_for("shape-src-a", num_frames=8))
    z_T = ddim_invert(clean, cond, toy_denoiser, sched)
    assert z_T.timestep == 50
    back = ddim_sample(z_T, cond, toy_denoiser, sched)
    assert back.timestep == 0
    assert np.max(np.abs(back.latents - clean.latents)) <= 1e-12
    out = autoencoder.decode(back)
    assert np.max(np.abs(out.frames - video.frames)) <= 1e-12


def test_inversion_of_zero_video_stays_zero(world, conditioner, sched, toy_denoiser):
    clean = LatentVideo(np.zeros((4, 1, 8, 8)), timestep=0)
    cond = RegionConditioning.uniform(conditioner.conditioning_for("blank-8", num_frames=4))
    z_T = ddim_invert(clean, cond, toy_denoiser, sched)
    assert not z_T.latents.any()


def test_inversion_requires_clean_latents(world, conditioner, sched, toy_denoiser, rng):
    lat = LatentVideo(rng.standard_normal((2, 1, 8, 8)), timestep=5)
    cond = RegionConditioning.uniform(conditioner.conditioning_for("square-8", num_frames=2))
    with pytest.raises(ValidationError, match="clean latents"):
        ddim_invert(lat, cond, toy_denoiser, sched)


class _PerturbedDenoiser:
    """Toy denoiser plus a small deterministic model error, standing in for a
    real float backbone when measuring the adapter round-trip tolerance."""

    def __init__(self, inner, magnitude=1e-6):
        self.inner = inner
        self.magnitude = magnitude
        self.feature_blocks = inner.feature_blocks

    def denoise(self, lat, t, cond):
        out = self.inner.denoise(lat, t, cond)
        wobble = np.sin(lat.latents * 12.9898 + t) * self.magnitude
        return type(out)(eps=out.eps + wobble, block_features=out.block_features)


def test_round_trip_tolerance_for_inexact_backends(world, conditioner, sched, toy_denoiser, autoencoder):
    # documented adapter contract: round trip within 1e-4 for real backbones
    video = world.synth_video("square-8", 4)
    clean = autoencoder.encode(video)
    cond = RegionConditioning.uniform(conditioner.conditioning_for("square-8", num_frames=4))
    den = _PerturbedDenoiser(toy_denoiser)
    back = ddim_sample(ddim_invert(clean, cond, den, sched), cond, den, sched)
    err = np.max(np.abs(back.latents - clean.latents))
    assert 0.0 < err <= 1e-4


def test_inversion_deterministic_across_runs(world, conditioner, sched, toy_denoiser, autoencoder):
    video = world.synth_video("square-8", 4)
    clean = autoencoder.encode(video)
    cond = RegionConditioning.uniform(conditioner.conditioning_for("square-8", num_frames=4))
    a = ddim_invert(clean, cond, toy_denoiser, sched)
    b = ddim_invert(clean, cond, toy_denoiser, sched)
    assert a.latents.tobytes() == b.latents.tobytes()


# -- guidance -----------------------------------------------------------------


def test_cfg_scale_one_returns_conditional(rng):
    u, c = rng.standard_normal((2, 2, 1, 4, 4))
    np.testing.assert_array_equal(cfg_combine(u, c, 1.0), u + 1.0 * (c - u))
    np.testing.assert_allclose(cfg_combine(u, c, 1.0), c, atol=1e-15)


def test_cfg_equal_inputs_any_scale(rng):
    u = rng.standard_normal((2, 1, 4, 4))
    for s in (1.0, 7.5, 12.5):
        np.testing.assert_allclose(cfg_combine(u, u.copy(), s), u, atol=0)


def test_cfg_scales_linearly():
    v = np.full((1, 1, 2, 2), 3.0)
    out = cfg_combine(np.zeros_like(v), v, 12.5)
    np.testing.assert_array_equal(out, 12.5 * v)


def test_cfg_shape_mismatch():
    with pytest.raises(ValidationError):
        cfg_combine(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)), 2.0)


def test_guidance_config_validation():
    GuidanceConfig()  # defaults fine
    with pytest.raises(ValidationError):
        GuidanceConfig(scale=0.5, enabled=True)
