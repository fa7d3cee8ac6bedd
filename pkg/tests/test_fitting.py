import numpy as np
import pytest
import torch

from monolf.fitting import FitConfig, FitDivergenceError, direct_fit
from monolf.lightfield import synthesize_views
from monolf.losses import LossWeights
from monolf.metrics import lf_psnr
from monolf.providers import SceneOracleProvider
from monolf.scenes import single_plane_scene, two_plane_scene

PHOTO_GEO = LossWeights(photo=1.0, geo=1.0, temp=0.0, occ=0.0, bins=0.0, tv=0.0)


def test_zero_weights_return_initialization_unchanged():
    truth = single_plane_scene(disparity=0.5, size=(16, 16), angular=(3, 3),
                               frames=1, seed=0)
    zero = LossWeights(photo=0, geo=0, temp=0, occ=0, bins=0, tv=0)
    cfg = FitConfig(iterations=5, rank=2, angular=(3, 3), weights=zero,
                    init_noise=0.0, seed=1)
    res = direct_fit((None, truth.center_frames[0], None), truth.disparity[0], cfg)
    assert torch.equal(res.rep.layers, torch.full((3, 2, 16, 16, 3), 0.5))
    d = truth.disparity[0]
    want = torch.linspace(float(d.min()), float(d.max()), 3)
    assert torch.allclose(res.displacements.values, want)
    assert all(r.total == 0.0 for r in res.trace)


def test_center_broadcast_initialization():
    truth = single_plane_scene(disparity=0.5, size=(12, 12), angular=(3, 3),
                               frames=1, seed=0)
    zero = LossWeights(photo=0, geo=0, temp=0, occ=0, bins=0, tv=0)
    cfg = FitConfig(iterations=1, rank=2, angular=(3, 3), weights=zero,
                    init="center", init_noise=0.0)
    res = direct_fit((None, truth.center_frames[0], None), truth.disparity[0], cfg)
    mid = res.rep.layers[1]
    assert torch.allclose(mid.sum(dim=0), truth.center_frames[0], atol=1e-6)
    assert torch.equal(res.rep.layers[0], torch.ones(2, 12, 12, 3))


def test_convergence_on_single_plane_scene():
    truth = single_plane_scene(disparity=0.8, size=(48, 48), angular=(5, 5),
                               frames=1, seed=0)
    cfg = FitConfig(iterations=500, rank=4, angular=(5, 5), weights=PHOTO_GEO, seed=0)
    res = direct_fit((None, truth.center_frames[0], None), truth.disparity[0], cfg)
    assert res.report.geo <= 1e-2
    fitted = res.synthesize((5, 5))
    assert lf_psnr(fitted, truth.lf_frames[0]) >= 35.0


def test_smoothed_loss_trace_is_monotone():
    truth = single_plane_scene(disparity=0.8, size=(32, 32), angular=(3, 3),
                               frames=1, seed=1)
    cfg = FitConfig(iterations=400, rank=2, angular=(3, 3), weights=PHOTO_GEO, seed=0)
    res = direct_fit((None, truth.center_frames[0], None), truth.disparity[0], cfg)
    totals = np.array([r.total for r in res.trace])
    window = 50
    smoothed = np.convolve(totals, np.ones(window) / window, mode="valid")
    # allow sub-percent wobble, forbid sustained increase
    assert (np.diff(smoothed) <= smoothed[:-1] * 0.01 + 1e-6).all()
    assert smoothed[-1] < smoothed[0]


def test_displacements_returned_sorted_with_layers_permuted():
    truth = single_plane_scene(disparity=0.8, size=(24, 24), angular=(3, 3),
                               frames=1, seed=2)
    cfg = FitConfig(iterations=150, rank=2, angular=(3, 3), weights=PHOTO_GEO, seed=3)
    res = direct_fit((None, truth.center_frames[0], None), truth.disparity[0], cfg)
    assert (res.displacements.values.diff() >= 0).all()
    # sorting permutes layers jointly, so the synthesized LF is unchanged:
    # verify the stored pair is self-consistent with the best reported loss
    from monolf.losses import geometric_loss, photometric_loss
    from monolf.lightfield import LightField

    lf = LightField(synthesize_views(res.rep.layers, res.displacements.values, (3, 3)))
    total = float(photometric_loss(lf, truth.center_frames[0])
                  + geometric_loss(lf, truth.center_frames[0], truth.disparity[0]))
    assert total == pytest.approx(res.report.total, abs=1e-6)


def test_best_iterate_is_returned():
    truth = single_plane_scene(disparity=0.5, size=(16, 16), angular=(3, 3),
                               frames=1, seed=4)
    cfg = FitConfig(iterations=60, rank=2, angular=(3, 3), weights=PHOTO_GEO, seed=0)
    res = direct_fit((None, truth.center_frames[0], None), truth.disparity[0], cfg)
    totals = [r.total for r in res.trace]
    assert res.best_iteration == int(np.argmin(totals))
    assert res.report.total == min(totals)


def test_nan_input_aborts_with_diagnostic():
    truth = single_plane_scene(disparity=0.5, size=(12, 12), angular=(3, 3),
                               frames=1, seed=0)
    poisoned = truth.center_frames[0].clone()
    poisoned[3, 3, 0] = float("nan")
    cfg = FitConfig(iterations=10, rank=2, angular=(3, 3), weights=PHOTO_GEO)
    with pytest.raises(FitDivergenceError, match="iteration 0"):
        direct_fit((None, poisoned, None), truth.disparity[0], cfg)


def test_layers_stay_projected_into_unit_range():
    truth = single_plane_scene(disparity=0.5, size=(16, 16), angular=(3, 3),
                               frames=1, seed=5)
    cfg = FitConfig(iterations=80, lr=0.2, rank=2, angular=(3, 3), weights=PHOTO_GEO)
    res = direct_fit((None, truth.center_frames[0], None), truth.disparity[0], cfg)
    assert float(res.rep.layers.min()) >= 0.0
    assert float(res.rep.layers.max()) <= 1.0


def test_seeded_runs_reproduce_report_stream():
    truth = two_plane_scene(fg_velocity=(1.0, 0.0), size=(24, 24), angular=(3, 3),
                            frames=3, seed=6)
    provider = SceneOracleProvider(truth)
    weights = LossWeights(photo=1.0, geo=1.0, temp=0.5, occ=0.2, bins=0.5, tv=0.05)
    cfg = FitConfig(iterations=40, rank=2, angular=(3, 3), weights=weights, seed=7)
    frames = (truth.center_frames[0], truth.center_frames[1], truth.center_frames[2])
    res_a = direct_fit(frames, truth.disparity[1], cfg, provider, frame_index=1)
    res_b = direct_fit(frames, truth.disparity[1], cfg, provider, frame_index=1)
    assert [r.as_dict() for r in res_a.trace] == [r.as_dict() for r in res_b.trace]
    assert torch.equal(res_a.rep.layers, res_b.rep.layers)


def test_temporal_and_occ_terms_require_provider():
    truth = single_plane_scene(disparity=0.5, size=(16, 16), angular=(3, 3),
                               frames=3, seed=0)
    cfg = FitConfig(iterations=5, rank=2, angular=(3, 3),
                    weights=LossWeights(photo=1, geo=1, temp=0.5, occ=0, bins=0, tv=0))
    with pytest.raises(ValueError, match="provider"):
        direct_fit((None, truth.center_frames[1], truth.center_frames[2]),
                   truth.disparity[1], cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        FitConfig(iterations=0)
    with pytest.raises(ValueError):
        FitConfig(lr=-1.0)
    with pytest.raises(ValueError):
        FitConfig(init="bogus")
