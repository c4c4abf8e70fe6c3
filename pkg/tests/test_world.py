import numpy as np
import pytest

from videdit.types import ValidationError
from videdit.world import (
    SceneSpec,
    SyntheticWorld,
    default_world,
    expected_edit_mask,
    parse_world,
    serialize_world,
    SHAPE_PAIRS,
)


@pytest.fixture()
def world():
    return default_world()


def test_square8_frame0_render(world):
    # registry values: 8x8 grid, background 0.2, 3x3 square at rows 2-4 / cols 1-3, value 0.9
    lat = world.render_latent("square-8", 0)
    assert lat.shape == (1, 8, 8)
    expect = np.full((8, 8), 0.2)
    expect[2:5, 1:4] = 0.9
    np.testing.assert_array_equal(lat[0], expect)


def test_square8_translates_one_column_per_frame(world):
    for k in range(3):
        a = world.render_latent("square-8", k)
        b = world.render_latent("square-8", k + 1)
        np.testing.assert_array_equal(a[0, :, 1 : 4 + k], b[0, :, 2 : 5 + k])
        assert world.footprint("square-8", k + 1).sum() == 9


def test_equal_geometry_different_intensity_differs_only_inside_rect():
    w = SyntheticWorld()
    w.register(SceneSpec("hi", (8, 8), 0.2, 0.9, (2, 1, 3, 3), (0, 1)))
    w.register(SceneSpec("lo", (8, 8), 0.2, 0.6, (2, 1, 3, 3), (0, 1)))
    diff = w.render_latent("hi", 1) != w.render_latent("lo", 1)
    np.testing.assert_array_equal(diff[0], w.footprint("hi", 1))


def test_zero_velocity_scene_is_static_with_zero_flow(world):
    a = world.render_frame("blank-8", 0)
    b = world.render_frame("blank-8", 3)
    np.testing.assert_array_equal(a, b)
    assert not world.flow("blank-8", 0).any()


def test_flow_matches_velocity_inside_footprint(world):
    gt = world.flow("square-8", 2, direction=+1)
    fp = world.footprint("square-8", 2)
    np.testing.assert_array_equal(gt[fp], np.tile([0, 1], (fp.sum(), 1)))
    assert not gt[~fp].any()
    back = world.flow("square-8", 2, direction=-1)
    np.testing.assert_array_equal(back, -gt)


def test_synth_video_velocity_column_advance(world):
    video = world.synth_video("square-8", 4)
    for n in range(4):
        np.testing.assert_array_equal(video.frames[n], world.render_frame("square-8", n))
        assert world.footprint("square-8", n)[2, 1 + n]


def test_texture_moves_rigidly_with_object(world):
    spec = world.get("drift-a")
    a = world.render_latent("drift-a", 0)
    b = world.render_latent("drift-a", 1)
    r0, c0, rh, rw = spec.rect
    dr, dc = spec.velocity
    np.testing.assert_array_equal(a[:, r0 : r0 + rh, c0 : c0 + rw],
                                  b[:, r0 + dr : r0 + rh + dr, c0 + dc : c0 + rw + dc])


def test_registry_round_trip(world):
    text = serialize_world(world)
    again = parse_world(text)
    assert serialize_world(again) == text
    assert set(again.scenes) == set(world.scenes)
    np.testing.assert_array_equal(again.render_latent("drift-b", 2),
                                  world.render_latent("drift-b", 2))


def test_registry_rejects_unknown_fields():
    with pytest.raises(ValidationError, match="unknown fields"):
        parse_world("scene.x.grid = 8,8\nscene.x.background = 0\nscene.x.value = 0.5\n"
                    "scene.x.rect = 1,1,2,2\nscene.x.velocity = 0,0\nscene.x.wat = 1\n")


def test_unknown_scene_errors(world):
    with pytest.raises(KeyError, match="unknown scene"):
        world.render_latent("no-such-scene", 0)


def test_scene_values_must_stay_in_unit_range():
    with pytest.raises(ValidationError, match="values must stay"):
        SceneSpec("bad", (8, 8), 0.2, 0.9, (1, 1, 2, 2), (0, 1), texture_amp=0.5)


def test_shape_pairs_footprint_ratio_and_oracle(world):
    for src, trg in SHAPE_PAIRS:
        for n in range(4):
            fp_s = world.footprint(src, n)
            fp_t = world.footprint(trg, n)
            ratio = fp_t.sum() / fp_s.sum()
            assert 2.0 <= ratio <= 4.0
            assert (fp_s & fp_t).sum() == fp_s.sum()  # containment holds under shared velocity
            oracle = expected_edit_mask(world, src, trg, n)
            np.testing.assert_array_equal(oracle, fp_t)
