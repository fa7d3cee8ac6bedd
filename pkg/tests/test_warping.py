import numpy as np
import pytest
import torch

from monolf.scenes import single_plane_scene, two_plane_scene
from monolf.warping import (
    AffineDepthParams,
    VALIDITY_MARGIN,
    batched_bilinear_sample,
    bilinear_sample,
    constant_displacement,
    constant_offset_sample,
    depth_to_disparity,
    disocclusion_masks,
    flow_warp_candidate,
    forward_splat_disparity,
    inverse_warp,
    warp_sai_to_center,
    warp_views_to_center,
)

from oracles import bilinear_point, check_gradient, splat_oracle


class TestDepthToDisparity:
    def test_identity_affine(self, rng):
        z = torch.tensor(rng.uniform(0, 1, (8, 8)), dtype=torch.float32)
        out = depth_to_disparity(z, AffineDepthParams(a=1.0, b=0.0))
        assert torch.equal(out, z)

    def test_constant_map(self):
        z = torch.zeros(6, 6)
        out = depth_to_disparity(z, AffineDepthParams(a=2.0, b=0.3))
        assert torch.allclose(out, torch.full((6, 6), 0.3))

    def test_sampled_affine_values(self):
        # a, b drawn from the training sampling sets
        z = torch.full((4, 4), 0.5)
        out = depth_to_disparity(z, AffineDepthParams(a=1.6, b=0.3))
        assert torch.allclose(out, torch.full((4, 4), 1.1))

    def test_nonpositive_scale_rejected(self):
        with pytest.raises(ValueError):
            AffineDepthParams(a=0.0, b=0.1)


class TestBilinearSample:
    def test_matches_pointwise_reference(self, rng):
        img = torch.tensor(rng.uniform(0, 1, (9, 7, 3)), dtype=torch.float64)
        xs = torch.tensor(rng.uniform(-2, 9, (5, 4)), dtype=torch.float64)
        ys = torch.tensor(rng.uniform(-2, 11, (5, 4)), dtype=torch.float64)
        got = bilinear_sample(img, xs, ys).numpy()
        ref = img.numpy()
        for i in range(5):
            for j in range(4):
                want = bilinear_point(ref, float(xs[i, j]), float(ys[i, j]))
                np.testing.assert_allclose(got[i, j], want, atol=1e-12)

    def test_constant_offset_variant_matches(self, rng):
        img = torch.tensor(rng.uniform(0, 1, (2, 9, 7, 3)), dtype=torch.float64)
        for dx, dy in ((0.0, 0.0), (1.25, -2.5), (-7.0, 3.1), (0.5, 0.0)):
            gy, gx = torch.meshgrid(
                torch.arange(9, dtype=torch.float64),
                torch.arange(7, dtype=torch.float64), indexing="ij")
            want = bilinear_sample(img, gx + dx, gy + dy)
            got = constant_offset_sample(img, torch.tensor(dx, dtype=torch.float64),
                                         torch.tensor(dy, dtype=torch.float64))
            assert torch.allclose(got, want, atol=1e-12)

    def test_constant_offset_integer_shift_exact(self, rng):
        img = torch.tensor(rng.uniform(0, 1, (5, 6, 3)), dtype=torch.float32)
        got = constant_offset_sample(img, torch.tensor(0.0), torch.tensor(0.0))
        assert torch.equal(got, img)


class TestInverseWarp:
    def test_zero_displacement_identity_exact(self, rng):
        img = torch.tensor(rng.uniform(0, 1, (11, 13, 3)), dtype=torch.float32)
        out = inverse_warp(img, torch.zeros(11, 13, 2))
        assert torch.equal(out, img)

    def test_integer_displacement_matches_index_shift(self, rng):
        img = torch.tensor(rng.uniform(0, 1, (10, 10, 3)), dtype=torch.float32)
        out = inverse_warp(img, constant_displacement(3.0, -2.0))
        xs = np.clip(np.arange(10) + 3, 0, 9)
        ys = np.clip(np.arange(10) - 2, 0, 9)
        want = img.numpy()[np.ix_(ys, xs)]
        np.testing.assert_array_equal(out.numpy(), want)

    def test_ramp_closed_form(self):
        w = 16
        ramp = (torch.arange(w, dtype=torch.float32) / w).reshape(1, w, 1).expand(8, w, 3)
        out = inverse_warp(ramp.clone(), constant_displacement(1.0, 0.0))
        want = (torch.arange(1, w + 1, dtype=torch.float32) / w).clamp(max=(w - 1) / w)
        assert torch.allclose(out[:, : w - 1, 0], want[: w - 1].expand(8, w - 1))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            inverse_warp(torch.zeros(4, 4), torch.zeros(4, 4, 2))

    def test_gradients_match_finite_differences(self, rng):
        img64 = torch.tensor(rng.uniform(0, 1, (8, 8, 3)), dtype=torch.float64)
        disp64 = torch.tensor(rng.uniform(-1.5, 1.5, (8, 8, 2)), dtype=torch.float64)
        probe = torch.tensor(rng.uniform(0, 1, (8, 8, 3)), dtype=torch.float64)

        def wrt_img(x):
            return (inverse_warp(x, disp64) * probe).sum()

        def wrt_disp(d):
            return (inverse_warp(img64, d) * probe).sum()

        assert check_gradient(wrt_img, img64, rng=rng) <= 1e-4
        assert check_gradient(wrt_disp, disp64, rng=rng) <= 1e-4


class TestWarpSaiToCenter:
    def test_center_offset_returns_view_unchanged(self, rng):
        views = torch.tensor(rng.uniform(0, 1, (3, 3, 8, 8, 3)), dtype=torch.float32)
        out = warp_sai_to_center(views, (0, 0), torch.tensor(rng.uniform(-1, 1, (8, 8)),
                                                             dtype=torch.float32))
        assert torch.equal(out, views[1, 1])

    def test_zero_disparity_returns_view(self, rng):
        views = torch.tensor(rng.uniform(0, 1, (3, 3, 8, 8, 3)), dtype=torch.float32)
        out = warp_sai_to_center(views, (1, -1), torch.zeros(8, 8))
        assert torch.equal(out, views[2, 0])

    def test_constant_disparity_recovers_center(self):
        truth = single_plane_scene(disparity=0.7, size=(32, 32), angular=(5, 5),
                                   frames=1, seed=1)
        lf = truth.lf_frames[0]
        center = lf.view(0, 0)
        m = VALIDITY_MARGIN
        for offset in ((2, 0), (-1, 1), (0, -2), (2, 2)):
            warped = warp_sai_to_center(lf.views, offset, truth.disparity[0])
            mae = float((warped - center)[m:-m, m:-m].abs().mean())
            assert mae <= 2e-2

    def test_offset_outside_grid_rejected(self, rng):
        views = torch.zeros(3, 3, 4, 4, 3)
        with pytest.raises(ValueError):
            warp_sai_to_center(views, (2, 0), torch.zeros(4, 4))

    def test_batched_matches_per_view_bitwise(self, rng):
        views = torch.tensor(rng.uniform(0, 1, (3, 5, 9, 8, 3)), dtype=torch.float32)
        d = torch.tensor(rng.uniform(-1.2, 1.2, (9, 8)), dtype=torch.float32)
        batched = warp_views_to_center(views, d)
        for iu, u in enumerate((-1, 0, 1)):
            for iv, v in enumerate((-2, -1, 0, 1, 2)):
                single = warp_sai_to_center(views, (u, v), d)
                assert torch.equal(batched[iu, iv], single)


class TestForwardSplat:
    def test_zero_disparity_identity_no_holes(self, rng):
        img = torch.tensor(rng.uniform(0, 1, (8, 8, 3)), dtype=torch.float32)
        out, holes = forward_splat_disparity(img, torch.zeros(8, 8), (1, 0))
        np.testing.assert_allclose(out, img.numpy(), atol=1e-12)
        assert holes.sum() == 0

    def test_foreground_square_leaves_trailing_band(self):
        h = w = 32
        img = np.full((h, w, 3), 0.25)
        d = np.zeros((h, w))
        img[10:22, 10:22] = 0.9
        d[10:22, 10:22] = 2.0
        out, holes = forward_splat_disparity(img, d, (1, 0))
        want_out, want_holes = splat_oracle(img, d, (1, 0))
        np.testing.assert_array_equal(holes, want_holes)
        np.testing.assert_allclose(out, want_out, atol=1e-9)
        # the vacated strip at the square's trailing (left) edge is 2 px wide
        assert holes[10:22, 10:12].all()
        assert holes[10:22, 12:].sum() == 0
        assert holes[:10].sum() == 0 and holes[22:].sum() == 0

    def test_uniform_disparity_hole_only_at_leading_border(self, rng):
        img = np.asarray(rng.uniform(0, 1, (10, 10, 3)))
        d = np.ones((10, 10))
        out, holes = forward_splat_disparity(img, d, (1, 0))
        _, want_holes = splat_oracle(img, d, (1, 0))
        np.testing.assert_array_equal(holes, want_holes)
        assert holes[:, 0].all()
        assert holes[:, 1:].sum() == 0

    def test_random_scene_matches_oracle(self, rng):
        img = np.asarray(rng.uniform(0, 1, (9, 9, 3)))
        d = np.asarray(rng.uniform(-1.5, 2.5, (9, 9)))
        for offset in ((1, 0), (0, -2), (-1, 1)):
            out, holes = forward_splat_disparity(img, d, offset)
            want_out, want_holes = splat_oracle(img, d, offset)
            np.testing.assert_array_equal(holes, want_holes)
            np.testing.assert_allclose(out, want_out, atol=1e-9)

    def test_mask_stack_center_is_hole_free(self, rng):
        img = np.asarray(rng.uniform(0, 1, (8, 8, 3)))
        d = np.asarray(rng.uniform(0, 2, (8, 8)))
        masks = disocclusion_masks(img, d, np.arange(-1, 2), np.arange(-1, 2))
        assert masks.shape == (3, 3, 8, 8)
        assert masks[1, 1].sum() == 0


class TestFlowWarpCandidate:
    def test_zero_flow_identity(self, rng):
        img = torch.tensor(rng.uniform(0, 1, (8, 8, 3)), dtype=torch.float32)
        assert torch.equal(flow_warp_candidate(img, torch.zeros(8, 8, 2)), img)

    def test_static_scene_exact(self, rng):
        img = torch.tensor(rng.uniform(0, 1, (8, 8, 3)), dtype=torch.float32)
        out = flow_warp_candidate(img.clone(), torch.zeros(8, 8, 2))
        assert torch.equal(out, img)

    def test_translating_scene_with_oracle_flow(self):
        truth = two_plane_scene(fg_velocity=(1.5, 0.0), size=(32, 32), angular=(3, 3),
                                frames=3, seed=2)
        t, (u, v) = 1, (1, 0)
        flow, covis = truth.flow((t - 1, 0, 0), (t, u, v))
        target = truth.lf_frames[t].view(u, v)
        cand = flow_warp_candidate(truth.center_frames[t - 1], flow)
        m = VALIDITY_MARGIN
        sel = covis[m:-m, m:-m]
        err = (cand - target)[m:-m, m:-m][torch.from_numpy(sel)].abs()
        assert float(err.mean()) <= 2e-2

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            flow_warp_candidate(torch.zeros(4, 4, 3), torch.zeros(5, 4, 2))


def test_batched_bilinear_matches_broadcast_version(rng):
    imgs = torch.tensor(rng.uniform(0, 1, (4, 7, 6, 3)), dtype=torch.float64)
    x = torch.tensor(rng.uniform(-1, 7, (4, 7, 6)), dtype=torch.float64)
    y = torch.tensor(rng.uniform(-1, 8, (4, 7, 6)), dtype=torch.float64)
    got = batched_bilinear_sample(imgs, x, y)
    for b in range(4):
        want = bilinear_sample(imgs[b], x[b], y[b])
        assert torch.equal(got[b], want)
