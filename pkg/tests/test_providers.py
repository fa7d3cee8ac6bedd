import numpy as np
import pytest
import torch

from monolf.lfio import write_flo, write_pfm
from monolf.providers import (
    FileProvider,
    FileProviderSpec,
    PanningVideoProvider,
    ProviderError,
    SceneOracleProvider,
    normalize_disparity,
)
from monolf.scenes import single_plane_scene, simulate_lf_video, two_plane_scene
from monolf.warping import VALIDITY_MARGIN, inverse_warp


class TestNormalizeDisparity:
    def test_affine_recovery_is_exact(self, rng):
        d = torch.tensor(rng.uniform(-2, 3, (8, 8)), dtype=torch.float32)
        z, params = normalize_disparity(d)
        assert float(z.min()) >= 0.0 and float(z.max()) <= 1.0
        assert torch.allclose(params.a * z + params.b, d, atol=1e-5)

    def test_constant_map(self):
        z, params = normalize_disparity(torch.full((4, 4), 0.7))
        assert torch.allclose(z, torch.full((4, 4), 0.5))
        assert torch.allclose(params.a * z + params.b, torch.full((4, 4), 0.7))


class TestSceneOracleProvider:
    def test_depth_constant_on_single_plane(self):
        truth = single_plane_scene(disparity=0.8, size=(16, 16), angular=(3, 3),
                                   frames=2, seed=0)
        provider = SceneOracleProvider(truth)
        z = provider.depth(0)
        assert float(z.max() - z.min()) == 0.0
        params = provider.depth_params(0)
        d = params.a * z + params.b
        assert torch.allclose(d, truth.disparity[0], atol=1e-6)

    def test_flow_reconstructs_target_view(self):
        truth = two_plane_scene(fg_velocity=(1.0, 0.0), size=(32, 32), angular=(3, 3),
                                frames=3, seed=1)
        provider = SceneOracleProvider(truth)
        t, (u, v) = 1, (-1, 1)
        flow = provider.flow((t - 1, 0, 0), (t, u, v))
        cand = inverse_warp(truth.center_frames[t - 1], flow)
        target = truth.lf_frames[t].view(u, v)
        covis = truth.flow((t - 1, 0, 0), (t, u, v))[1]
        m = VALIDITY_MARGIN
        sel = torch.from_numpy(covis[m:-m, m:-m])
        assert float((cand - target)[m:-m, m:-m][sel].abs().mean()) <= 2e-2


class TestPanningVideoProvider:
    def _make(self):
        truth = single_plane_scene(disparity=0.5, size=(48, 48), angular=(3, 3),
                                   frames=1, seed=3)
        video = simulate_lf_video(truth.lf_frames[0], frames=3, crop=(24, 24),
                                  velocity=(2, 0))
        depth = torch.linspace(0, 1, 48 * 48).reshape(48, 48)
        return video, PanningVideoProvider(video, depth)

    def test_depth_is_cropped_source_depth(self):
        video, provider = self._make()
        z = provider.depth(1)
        ox, oy = video.offsets[1]
        assert z.shape == (24, 24)
        assert float(z[0, 0]) == pytest.approx((oy * 48 + ox) / (48 * 48 - 1))

    def test_center_flow_is_camera_pan(self):
        video, provider = self._make()
        flow = provider.flow((0, 0, 0), (1, 0, 0))
        np.testing.assert_allclose(flow.numpy(),
                                   np.broadcast_to([-2.0, 0.0], (24, 24, 2)), atol=1e-6)

    def test_view_flow_adds_parallax(self):
        video, provider = self._make()
        z = provider.depth(1)
        flow = provider.flow((0, 0, 0), (1, 2, 0))
        want_dx = z * (0 - 2) + (-2.0)
        np.testing.assert_allclose(flow[..., 0].numpy(), want_dx.numpy(), atol=1e-6)
        np.testing.assert_allclose(flow[..., 1].numpy(), 0.0, atol=1e-6)


class TestFileProvider:
    def test_reads_written_truth(self, rng, tmp_path):
        depth = rng.uniform(0, 1, (8, 8)).astype(np.float32)
        flow = rng.normal(0, 1, (8, 8, 2)).astype(np.float32)
        spec = FileProviderSpec(depth_dir=str(tmp_path), flow_dir=str(tmp_path))
        write_pfm(tmp_path / spec.depth_template.format(t=1), depth)
        name = spec.flow_template.format(ts=0, us=0, vs=0, td=1, ud=1, vd=-1)
        write_flo(tmp_path / name, flow)
        provider = FileProvider(spec)
        np.testing.assert_array_equal(provider.depth(1).numpy(), depth)
        np.testing.assert_array_equal(provider.flow((0, 0, 0), (1, 1, -1)).numpy(), flow)

    def test_missing_files_fail_loudly(self, tmp_path):
        provider = FileProvider(FileProviderSpec(depth_dir=str(tmp_path),
                                                 flow_dir=str(tmp_path)))
        with pytest.raises(ProviderError, match="missing depth"):
            provider.depth(0)
        with pytest.raises(ProviderError, match="missing flow"):
            provider.flow((0, 0, 0), (1, 0, 0))

    def test_malformed_file_raises_provider_error(self, tmp_path):
        spec = FileProviderSpec(depth_dir=str(tmp_path), flow_dir=str(tmp_path))
        (tmp_path / spec.depth_template.format(t=0)).write_bytes(b"garbage")
        with pytest.raises(ProviderError):
            FileProvider(spec).depth(0)
