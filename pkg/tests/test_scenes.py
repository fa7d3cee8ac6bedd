import numpy as np
import pytest
import torch

from monolf.lightfield import extract_epi
from monolf.metrics import measure_epi_slope
from monolf.scenes import (
    SceneLayer,
    SyntheticSceneSpec,
    generate_scene,
    simulate_lf_video,
    single_plane_scene,
    three_plane_scene,
    two_plane_scene,
)
from monolf.warping import VALIDITY_MARGIN, forward_splat_disparity, inverse_warp, warp_sai_to_center


class TestSpecValidation:
    def test_layers_must_ascend_in_disparity(self):
        with pytest.raises(ValueError):
            SyntheticSceneSpec((SceneLayer(2.0), SceneLayer(0.0)))

    def test_needs_a_layer_and_a_frame(self):
        with pytest.raises(ValueError):
            SyntheticSceneSpec(())
        with pytest.raises(ValueError):
            SyntheticSceneSpec((SceneLayer(0.0),), frames=0)


class TestGenerateScene:
    def test_flat_static_scene_is_constant_over_views_and_frames(self):
        truth = single_plane_scene(disparity=0.0, velocity=(0, 0), size=(16, 16),
                                   angular=(3, 3), frames=3, seed=1)
        base = truth.lf_frames[0].views[0, 0]
        for t in range(3):
            assert torch.equal(truth.center_frames[t], base)
            v = truth.lf_frames[t].views
            assert float((v - base).abs().max()) == 0.0
        assert truth.hole_masks.sum() == 0

    def test_unit_disparity_scene_has_unit_epi_slope(self):
        truth = single_plane_scene(disparity=1.0, size=(48, 48), angular=(5, 5),
                                   frames=1, seed=7)
        slope = measure_epi_slope(extract_epi(truth.lf_frames[0], "horizontal", 24))
        assert abs(slope - 1.0) <= 0.05

    def test_disparity_map_reports_visible_layer(self):
        truth = two_plane_scene(bg_disparity=0.0, fg_disparity=2.0, size=(32, 32),
                                angular=(3, 3), frames=1, seed=0)
        d = truth.disparity[0].numpy()
        assert set(np.unique(d)) == {0.0, 2.0}
        assert d[16, 16] == 2.0  # center of the foreground square
        assert d[2, 2] == 0.0

    def test_hole_band_matches_splat_oracle(self):
        truth = two_plane_scene(bg_disparity=0.0, fg_disparity=2.0, size=(32, 32),
                                angular=(3, 3), frames=1, seed=0)
        iu, iv = 2, 1  # offset (1, 0)
        analytic = truth.hole_masks[0, iu, iv]
        _, splat = forward_splat_disparity(
            truth.center_frames[0], truth.disparity[0], (1, 0))
        np.testing.assert_array_equal(analytic, splat)
        cols = np.where(analytic.any(axis=0))[0]
        assert cols.size > 0 and cols.max() - cols.min() + 1 == 2

    def test_warp_to_center_consistent_on_covisible_pixels(self):
        truth = two_plane_scene(bg_disparity=0.0, fg_disparity=1.6, size=(32, 32),
                                angular=(3, 3), frames=1, seed=3)
        lf = truth.lf_frames[0]
        m = VALIDITY_MARGIN
        for u, v in ((1, 0), (-1, 1), (0, -1)):
            warped = warp_sai_to_center(lf.views, (u, v), truth.disparity[0])
            covis = truth.covisible_with_center(0, u, v)
            diff = (warped - truth.center_frames[0]).abs()[m:-m, m:-m]
            sel = torch.from_numpy(covis[m:-m, m:-m])
            assert float(diff[sel].mean()) <= 2e-2

    def test_oracle_flow_satisfies_brightness_constancy(self):
        truth = two_plane_scene(fg_velocity=(1.0, 0.5), size=(32, 32), angular=(3, 3),
                                frames=3, seed=5)
        flow, covis = truth.flow((0, 0, 0), (1, 0, 0))
        warped = inverse_warp(truth.center_frames[0], flow)
        resid = (warped - truth.center_frames[1]).abs()
        m = VALIDITY_MARGIN
        sel = torch.from_numpy(covis[m:-m, m:-m])
        assert float(resid[m:-m, m:-m][sel].mean()) <= 2e-2

    def test_layer_flow_equals_velocity_on_visible_pixels(self):
        truth = two_plane_scene(fg_velocity=(2.0, 1.0), size=(32, 32), angular=(3, 3),
                                frames=2, seed=6)
        # gather field on frame 1 pointing into frame 0 = -velocity of the layer
        flow, _ = truth.flow((0, 0, 0), (1, 0, 0))
        vis = truth.visible_layer[1, 1, 1]
        fg_flows = flow.numpy()[vis == 1]
        bg_flows = flow.numpy()[vis == 0]
        np.testing.assert_allclose(fg_flows, np.broadcast_to([-2.0, -1.0], fg_flows.shape),
                                   atol=1e-6)
        np.testing.assert_allclose(bg_flows, np.zeros_like(bg_flows), atol=1e-6)

    def test_three_plane_scene_exposes_all_disparities(self):
        truth = three_plane_scene(disparities=(-2.3, 0.4, 1.7), size=(48, 48),
                                  angular=(3, 3), frames=1, seed=0)
        vals = np.unique(truth.disparity[0].numpy())
        np.testing.assert_allclose(sorted(vals), [-2.3, 0.4, 1.7], atol=1e-6)


class TestSimulateLfVideo:
    def test_zero_path_gives_identical_frames(self):
        truth = single_plane_scene(disparity=0.5, size=(40, 40), angular=(3, 3),
                                   frames=1, seed=2)
        video = simulate_lf_video(truth.lf_frames[0], frames=4, crop=(24, 24),
                                  velocity=(0, 0))
        for t in range(1, 4):
            assert torch.equal(video.frames[t], video.frames[0])
            assert torch.equal(video.lf_frames[t].views, video.lf_frames[0].views)

    def test_linear_path_induces_uniform_flow(self):
        truth = single_plane_scene(disparity=0.5, size=(48, 48), angular=(3, 3),
                                   frames=1, seed=2)
        video = simulate_lf_video(truth.lf_frames[0], frames=3, crop=(24, 24),
                                  velocity=(2, 0))
        np.testing.assert_array_equal(np.diff(video.offsets, axis=0),
                                      [[2, 0], [2, 0]])
        # camera pans +2 -> content moves -2 (forward flow), so gathering
        # frame t at p + (2, 0) reproduces frame t+1 exactly away from the border
        warped = inverse_warp(video.frames[0],
                              torch.tensor([2.0, 0.0]).reshape(1, 1, 2))
        assert torch.equal(warped[:, :-2], video.frames[1][:, :-2])

    def test_default_frame_count_is_eight(self):
        truth = single_plane_scene(disparity=0.0, size=(48, 48), angular=(3, 3),
                                   frames=1, seed=2)
        video = simulate_lf_video(truth.lf_frames[0], crop=(16, 16), velocity=(1, 1))
        assert video.frames.shape[0] == 8

    def test_seeded_runs_are_bit_reproducible(self):
        truth = single_plane_scene(disparity=0.5, size=(48, 48), angular=(3, 3),
                                   frames=1, seed=2)
        a = simulate_lf_video(truth.lf_frames[0], frames=5, crop=(24, 24), seed=9)
        b = simulate_lf_video(truth.lf_frames[0], frames=5, crop=(24, 24), seed=9)
        assert torch.equal(a.frames, b.frames)
        np.testing.assert_array_equal(a.offsets, b.offsets)

    def test_path_exiting_bounds_rejected(self):
        truth = single_plane_scene(disparity=0.0, size=(32, 32), angular=(3, 3),
                                   frames=1, seed=2)
        with pytest.raises(ValueError):
            simulate_lf_video(truth.lf_frames[0], frames=8, crop=(28, 28),
                              velocity=(4, 0))
