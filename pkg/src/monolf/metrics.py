"""Image quality metrics and the EPI slope estimator.

PSNR assumes a peak value of 1.0 and is capped at 100 dB for identical
inputs. SSIM uses the canonical constants: an 11x11 Gaussian window with
sigma 1.5, C1 = 0.01^2, C2 = 0.03^2, computed per channel and averaged.
Warping-based evaluations exclude the 2-pixel border margin, matching the
loss reductions.
"""

from __future__ import annotations

import numpy as np
import torch
from scipy.ndimage import gaussian_filter
from torch import Tensor

from .lightfield import LightField
from .warping import VALIDITY_MARGIN, inverse_warp

PSNR_CAP = 100.0

_SSIM_SIGMA = 1.5
_SSIM_RADIUS = 5  # 11-tap window
_SSIM_C1 = 0.01**2
_SSIM_C2 = 0.03**2


def _to_array(x) -> np.ndarray:
    if isinstance(x, LightField):
        x = x.views
    if isinstance(x, Tensor):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def psnr(a, b, mask: np.ndarray | None = None) -> float:
    """Peak signal-to-noise ratio in dB between images or light fields.

    Args:
        a, b: arrays/tensors/light fields of identical shape, values in [0, 1].
        mask: optional boolean array matching the leading (non-channel)
            shape; the error is averaged over True pixels only.
    """
    x, y = _to_array(a), _to_array(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    err = (x - y) ** 2
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        err = err[mask]
        if err.size == 0:
            raise ValueError("mask selects no pixels")
    mse = float(err.mean())
    if mse <= 10 ** (-PSNR_CAP / 10.0):
        return PSNR_CAP
    return float(10.0 * np.log10(1.0 / mse))


def _ssim_channel(x: np.ndarray, y: np.ndarray) -> float:
    blur = lambda a: gaussian_filter(a, _SSIM_SIGMA, truncate=_SSIM_RADIUS / _SSIM_SIGMA)
    mu_x = blur(x)
    mu_y = blur(y)
    var_x = blur(x * x) - mu_x**2
    var_y = blur(y * y) - mu_y**2
    cov = blur(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + _SSIM_C1) * (2 * cov + _SSIM_C2)
    den = (mu_x**2 + mu_y**2 + _SSIM_C1) * (var_x + var_y + _SSIM_C2)
    return float((num / den).mean())


def ssim(a, b) -> float:
    """Mean structural similarity between two (H, W, 3) or (H, W) images."""
    x, y = _to_array(a), _to_array(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    if x.shape[0] < 2 * _SSIM_RADIUS + 1 or x.shape[1] < 2 * _SSIM_RADIUS + 1:
        raise ValueError(f"image {x.shape[:2]} smaller than the 11x11 SSIM window")
    return float(np.mean([_ssim_channel(x[..., c], y[..., c]) for c in range(x.shape[2])]))


def lf_psnr(pred: LightField, truth: LightField, margin: int = VALIDITY_MARGIN,
            exclude: np.ndarray | None = None) -> float:
    """PSNR over all views, excluding the border margin and optional masked pixels.

    Args:
        exclude: optional (U, V, H, W) array, nonzero marks pixels to drop
            (e.g. disoccluded ground truth the input never showed).
    """
    nu, nv, h, w, _ = pred.views.shape
    valid = np.ones((nu, nv, h, w), dtype=bool)
    if margin > 0:
        valid[...] = False
        valid[:, :, margin:-margin, margin:-margin] = True
    if exclude is not None:
        valid &= np.asarray(exclude) == 0
    return psnr(pred.views, truth.views, mask=np.broadcast_to(valid[..., None],
                                                              (*valid.shape, 3)))


def lf_ssim(pred: LightField, truth: LightField) -> float:
    """Mean SSIM over all views of two light fields."""
    nu, nv = pred.angular_shape
    vals = [ssim(pred.views[iu, iv], truth.views[iu, iv])
            for iu in range(nu) for iv in range(nv)]
    return float(np.mean(vals))


def temporal_stability(
    pred: LightField,
    truth_prev: LightField,
    flows: Tensor,
    margin: int = VALIDITY_MARGIN,
) -> float:
    """Flicker measure: warp each predicted view onto the previous frame and compare.

    Per view, the prediction is gathered with the true flow into the
    previous ground-truth frame's grid and the root-mean-square error
    against that frame is taken over the interior; the per-view values are
    summed over the angular grid (lower is better, 0 for a perfect static
    prediction).

    Args:
        pred: predicted light field for frame t.
        truth_prev: ground-truth light field for frame t-1.
        flows: ``(U, V, H, W, 2)`` gather fields on frame t-1's grid
            pointing into frame t, one per view.
    """
    nu, nv, h, w, _ = pred.views.shape
    if tuple(flows.shape) != (nu, nv, h, w, 2):
        raise ValueError(f"expected per-view flows {(nu, nv, h, w, 2)}, got {tuple(flows.shape)}")
    total = 0.0
    sl = slice(margin, -margin) if margin > 0 else slice(None)
    for iu in range(nu):
        for iv in range(nv):
            warped = inverse_warp(pred.views[iu, iv], flows[iu, iv])
            diff = (warped - truth_prev.views[iu, iv])[sl, sl]
            total += float(torch.sqrt((diff**2).mean()))
    return total


def measure_epi_slope(
    epi: Tensor | np.ndarray,
    max_slope: float = 4.0,
    coarse_step: float = 0.05,
) -> float:
    """Estimate the dominant line slope of an EPI in pixels per angular step.

    Shears the angular rows by candidate slopes and scores alignment
    against the central row (masked to samples that stay in frame); the
    best candidate is refined by parabolic interpolation. Requires a
    textured EPI; a flat one has no measurable slope.
    """
    e = _to_array(epi)
    if e.ndim == 3:
        e = e.mean(axis=2)
    n_ang, width = e.shape
    if n_ang < 3:
        raise ValueError("EPI needs at least 3 angular samples to measure a slope")
    if float(e.std()) < 1e-3:
        raise ValueError("EPI is untextured; slope is undefined")
    center = (n_ang - 1) // 2
    offsets = np.arange(n_ang) - center
    xs = np.arange(width)

    def score(slope: float) -> float:
        err = 0.0
        count = 0
        for row, off in zip(e, offsets):
            if off == 0:
                continue
            pos = xs + off * slope
            valid = (pos >= 0) & (pos <= width - 1)
            if valid.sum() < 8:
                return np.inf
            sampled = np.interp(pos[valid], xs, row)
            err += float(((sampled - e[center][valid]) ** 2).sum())
            count += int(valid.sum())
        return err / count

    cands = np.arange(-max_slope, max_slope + coarse_step, coarse_step)
    scores = np.array([score(s) for s in cands])
    best = int(np.argmin(scores))
    if 0 < best < len(cands) - 1 and np.isfinite(scores[best - 1 : best + 2]).all():
        s0, s1, s2 = scores[best - 1 : best + 2]
        denom = s0 - 2 * s1 + s2
        if denom > 1e-12:
            return float(cands[best] + 0.5 * coarse_step * (s0 - s2) / denom)
    return float(cands[best])
