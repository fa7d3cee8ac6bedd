import numpy as np
import pytest
import torch

from monolf.lightfield import LightField, extract_epi
from monolf.metrics import (
    lf_psnr,
    lf_ssim,
    measure_epi_slope,
    psnr,
    ssim,
    temporal_stability,
)
from monolf.scenes import single_plane_scene

from conftest import random_lightfield, replicated_lightfield

_SSIM_C1 = 0.01**2
_SSIM_C2 = 0.03**2


class TestPsnr:
    def test_identical_hits_cap(self, rng):
        img = rng.uniform(0, 1, (8, 8, 3))
        assert psnr(img, img) == 100.0

    def test_known_mse(self):
        a = np.zeros((10, 10))
        b = np.full((10, 10), 0.1)  # MSE = 0.01
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)

    def test_random_pair_matches_formula(self, rng):
        a = rng.uniform(0, 1, (6, 6, 3))
        b = rng.uniform(0, 1, (6, 6, 3))
        want = 10 * np.log10(1.0 / ((a - b) ** 2).mean())
        assert psnr(a, b) == pytest.approx(want, abs=1e-9)
        assert psnr(a, b) == psnr(b, a)

    def test_mask_restricts_support(self, rng):
        a = np.zeros((4, 4))
        b = np.zeros((4, 4))
        b[0, 0] = 0.5
        mask = np.ones((4, 4), dtype=bool)
        mask[0, 0] = False
        assert psnr(a, b, mask=mask) == 100.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((4, 4)), np.zeros((5, 4)))


class TestSsim:
    def test_identical_is_one(self, rng):
        img = rng.uniform(0, 1, (16, 16, 3))
        assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)

    def test_constant_offset_closed_form(self):
        c = 0.4
        a = np.full((24, 24, 3), c)
        b = np.full((24, 24, 3), c + 0.1)
        # constant images: variances and covariance vanish, windows are exact
        want = ((2 * c * (c + 0.1) + _SSIM_C1) * _SSIM_C2) / (
            (c**2 + (c + 0.1) ** 2 + _SSIM_C1) * _SSIM_C2)
        assert ssim(a, b) == pytest.approx(want, abs=1e-9)

    def test_inverted_texture_is_negative(self, rng):
        tex = rng.uniform(0.05, 0.95, (32, 32))
        assert ssim(tex, 1.0 - tex) < 0.0

    def test_window_size_guard(self, rng):
        small = rng.uniform(0, 1, (8, 8))
        with pytest.raises(ValueError, match="window"):
            ssim(small, small)


class TestLfMetrics:
    def test_lf_psnr_excludes_margin_and_mask(self, rng):
        lf = random_lightfield(rng, angular=(3, 3), size=(12, 12))
        other = LightField(lf.views.clone())
        other.views[:, :, 0, 0, :] = 0.0  # inside the excluded border
        assert lf_psnr(other, lf) == 100.0
        exclude = np.zeros((3, 3, 12, 12), dtype=np.uint8)
        exclude[:, :, 5, 5] = 1
        corrupted = LightField(lf.views.clone())
        corrupted.views[:, :, 5, 5, :] = 0.0
        assert lf_psnr(corrupted, lf, exclude=exclude) == 100.0
        assert lf_psnr(corrupted, lf) < 100.0

    def test_lf_ssim_identical(self, rng):
        lf = random_lightfield(rng, angular=(3, 3), size=(16, 16))
        assert lf_ssim(lf, lf) == pytest.approx(1.0, abs=1e-12)


class TestTemporalStability:
    def test_perfect_static_prediction_is_zero(self, rng):
        img = torch.tensor(rng.uniform(0, 1, (12, 12, 3)), dtype=torch.float32)
        lf = replicated_lightfield(img, (3, 3))
        flows = torch.zeros(3, 3, 12, 12, 2)
        assert temporal_stability(lf, lf, flows) == 0.0

    def test_constant_offset_sums_over_views(self, rng):
        base = torch.tensor(rng.uniform(0.0, 0.85, (3, 3, 12, 12, 3)),
                            dtype=torch.float32)
        truth_prev = LightField(base)
        pred = LightField(base + 0.1)
        flows = torch.zeros(3, 3, 12, 12, 2)
        got = temporal_stability(pred, truth_prev, flows)
        assert got == pytest.approx(0.1 * 9, abs=1e-5)

    def test_perfect_prediction_on_translating_scene(self):
        truth = single_plane_scene(disparity=0.8, velocity=(1.0, 0.0), size=(32, 32),
                                   angular=(5, 5), frames=2, seed=1)
        t = 1
        us, vs = truth.offsets_u, truth.offsets_v
        flows = torch.zeros(5, 5, 32, 32, 2)
        for iu, u in enumerate(us):
            for iv, v in enumerate(vs):
                flows[iu, iv] = truth.flow((t, int(u), int(v)), (t - 1, int(u), int(v)))[0]
        e = temporal_stability(truth.lf_frames[t], truth.lf_frames[t - 1], flows)
        assert e <= 3e-2

    def test_flow_shape_guard(self, rng):
        lf = random_lightfield(rng)
        with pytest.raises(ValueError):
            temporal_stability(lf, lf, torch.zeros(3, 3, 5, 5, 2))


class TestEpiSlope:
    @pytest.mark.parametrize("delta", [0.5, 1.0, 2.0, -1.5])
    def test_constructed_slope_recovered(self, delta):
        truth = single_plane_scene(disparity=delta, size=(48, 48), angular=(5, 5),
                                   frames=1, seed=6)
        epi = extract_epi(truth.lf_frames[0], "horizontal", 24)
        got = measure_epi_slope(epi)
        assert got == pytest.approx(delta, abs=max(0.05, 0.05 * abs(delta)))

    def test_flat_epi_rejected(self):
        flat = torch.full((5, 32, 3), 0.5)
        with pytest.raises(ValueError, match="untextured"):
            measure_epi_slope(flat)

    def test_needs_angular_samples(self, rng):
        epi = torch.tensor(rng.uniform(0, 1, (2, 16, 3)), dtype=torch.float32)
        with pytest.raises(ValueError, match="angular"):
            measure_epi_slope(epi)
