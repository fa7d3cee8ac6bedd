"""Self-supervised loss terms and their weighted total.

All L1 terms are reduced as means (not sums) so the default weights are
resolution independent. Warping-based terms (geometric, temporal) compare
offset views only on pixels at least :data:`~monolf.warping.VALIDITY_MARGIN`
pixels away from the frame border, since border clamping corrupts those
samples; the center view needs no warp and is compared over the full frame.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
import torch
from torch import Tensor

from .lightfield import DisplacementVector, LightField, center_view
from .warping import VALIDITY_MARGIN, batched_bilinear_sample, warp_views_to_center

TERM_NAMES = ("photo", "geo", "temp", "occ", "bins", "tv")

# Chamfer pixel budget for the plane-density loss; larger maps are
# subsampled with a fixed-seed permutation for tractability.
_CHAMFER_MAX_PIXELS = 10_000


@dataclass(frozen=True)
class LossWeights:
    """Weights for the six self-supervised terms. Defaults follow the training recipe."""

    photo: float = 1.0
    geo: float = 1.0
    temp: float = 0.5
    occ: float = 0.2
    bins: float = 2.0
    tv: float = 0.1

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"loss weight {f.name} must be nonnegative")

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class LossReport:
    """Per-term breakdown of one weighted total; all values are plain floats."""

    photo: float = 0.0
    geo: float = 0.0
    temp: float = 0.0
    occ: float = 0.0
    bins: float = 0.0
    tv: float = 0.0
    total: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def log_record(self, step: int) -> str:
        """One flat key=value line for the training log."""
        vals = " ".join(f"{k}={v:.8g}" for k, v in self.as_dict().items())
        return f"step={step} {vals}"


def parse_log_record(line: str) -> dict[str, float]:
    """Invert :meth:`LossReport.log_record` into a key -> value dict."""
    out = {}
    for token in line.split():
        key, val = token.split("=", 1)
        out[key] = float(val)
    return out


def weighted_total(terms: dict[str, Tensor | float], weights: LossWeights) -> Tensor | float:
    """The lambda-weighted sum of whatever terms are present (missing = 0)."""
    total = 0.0
    for name in TERM_NAMES:
        if name in terms:
            total = total + getattr(weights, name) * terms[name]
    return total


def total_self_loss(terms: dict[str, Tensor | float], weights: LossWeights) -> LossReport:
    """Combine per-term scalars into a :class:`LossReport` with the weighted total."""
    vals = {k: float(v) for k, v in terms.items()}
    unknown = set(vals) - set(TERM_NAMES)
    if unknown:
        raise ValueError(f"unknown loss terms: {sorted(unknown)}")
    total = float(weighted_total(vals, weights))
    return LossReport(total=total, **vals)


def _check_image(lf: LightField, img: Tensor, name: str) -> None:
    if tuple(img.shape) != (*lf.spatial_shape, 3):
        raise ValueError(
            f"{name} shape {tuple(img.shape)} does not match views {lf.spatial_shape}"
        )


def photometric_loss(lf: LightField, frame: Tensor) -> Tensor:
    """Mean absolute error between the center view and the input frame."""
    _check_image(lf, frame, "frame")
    return (center_view(lf) - frame).abs().mean()


def _warped_stack_mae(warped: Tensor, target: Tensor) -> Tensor:
    """Mean over views of per-view MAE vs the target frame.

    Offset views are reduced over the margin-cropped interior; the center
    view (which needed no disparity warp) over the full frame, which makes
    a 1x1 grid reduce exactly to the photometric comparison.
    """
    nu, nv, h, w, _ = warped.shape
    cu, cv = (nu - 1) // 2, (nv - 1) // 2
    diff = (warped - target).abs()
    center_mae = diff[cu, cv].mean()
    if nu == 1 and nv == 1:
        return center_mae
    m = VALIDITY_MARGIN
    if h <= 2 * m or w <= 2 * m:
        raise ValueError(f"{h}x{w} image too small for the {m}-px validity margin")
    means = diff[:, :, m:-m, m:-m, :].mean(dim=(2, 3, 4))
    return (means.sum() - means[cu, cv] + center_mae) / (nu * nv)


def geometric_loss(lf: LightField, frame: Tensor, disparity: Tensor) -> Tensor:
    """Warp every view to the center with the disparity map and compare to the frame.

    Mean over views of the per-view MAE; reduces exactly to
    :func:`photometric_loss` on a 1x1 angular grid.
    """
    _check_image(lf, frame, "frame")
    return _warped_stack_mae(warp_views_to_center(lf.views, disparity), frame)


def temporal_loss(
    lf: LightField, next_frame: Tensor, disparity: Tensor, flow_to_next: Tensor
) -> Tensor:
    """Chain the center-warp with the frame-to-next flow and compare to the next frame.

    ``flow_to_next`` is the gather field on the next frame's grid pointing
    into the current frame; with zero flow this reduces exactly to
    :func:`geometric_loss` against ``next_frame``.
    """
    _check_image(lf, next_frame, "next_frame")
    warped = warp_views_to_center(lf.views, disparity)
    nu, nv, h, w, c = warped.shape
    flow = torch.broadcast_to(flow_to_next, (h, w, 2))
    gy, gx = torch.meshgrid(
        torch.arange(h, dtype=flow.dtype), torch.arange(w, dtype=flow.dtype), indexing="ij"
    )
    x = (gx + flow[..., 0]).expand(nu * nv, h, w)
    y = (gy + flow[..., 1]).expand(nu * nv, h, w)
    advected = batched_bilinear_sample(warped.reshape(nu * nv, h, w, c), x, y)
    return _warped_stack_mae(advected.reshape(nu, nv, h, w, c), next_frame)


def disocclusion_loss(
    lf: LightField, cand_prev: Tensor, cand_next: Tensor, mask: Tensor | np.ndarray
) -> Tensor:
    """Minimum re-projection error against the two warped neighbors, on holes only.

    Per pixel and view, the smaller of the absolute errors against the
    backward- and forward-frame candidates is averaged over mask-1 pixels;
    an empty mask yields exactly 0. Robust to content visible in only one
    neighbor.

    Args:
        lf: predicted light field.
        cand_prev, cand_next: per-view candidates ``(U, V, H, W, 3)`` warped
            from the previous / next input frame.
        mask: disocclusion mask ``(U, V, H, W)``, 1 marks holes.
    """
    views = lf.views
    if cand_prev.shape != views.shape or cand_next.shape != views.shape:
        raise ValueError("candidate shapes must match the light field")
    m = torch.as_tensor(np.asarray(mask), dtype=views.dtype, device=views.device)
    if tuple(m.shape) != tuple(views.shape[:4]):
        raise ValueError(f"mask shape {tuple(m.shape)} does not match views")
    total = m.sum() * views.shape[-1]
    if float(total) == 0.0:
        return views.sum() * 0.0
    err_prev = (views - cand_prev).abs()
    err_next = (views - cand_next).abs()
    err = torch.minimum(err_prev, err_next) * m.unsqueeze(-1)
    return err.sum() / total


def bin_density_loss(
    displacements: DisplacementVector | Tensor,
    disparity: Tensor,
    max_pixels: int = _CHAMFER_MAX_PIXELS,
    seed: int = 0,
) -> Tensor:
    """Bidirectional chamfer distance between the plane set and the disparity values.

    Pulls each displacement toward some disparity value and each disparity
    value toward some displacement:
    ``mean_p min_n |d(p) - D_n| + mean_n min_p |D_n - d(p)|``.
    Maps larger than ``max_pixels`` are subsampled with a fixed seed.
    """
    d_vals = displacements.values if isinstance(displacements, DisplacementVector) else displacements
    if d_vals.numel() == 0:
        raise ValueError("empty displacement vector")
    flat = disparity.reshape(-1)
    if flat.numel() > max_pixels:
        idx = torch.from_numpy(
            np.random.default_rng(seed).choice(flat.numel(), size=max_pixels, replace=False)
        )
        flat = flat[idx]
    dist = (flat.unsqueeze(0) - d_vals.unsqueeze(1)).abs()  # (N, P)
    return dist.min(dim=0).values.mean() + dist.min(dim=1).values.mean()


def tv_loss(lf: LightField) -> Tensor:
    """Anisotropic total variation over all views: mean |dx| plus mean |dy|."""
    views = lf.views
    dx = (views[..., :, 1:, :] - views[..., :, :-1, :]).abs().mean()
    dy = (views[..., 1:, :, :] - views[..., :-1, :, :]).abs().mean()
    return dx + dy


def refinement_loss(pred: LightField, target: LightField) -> Tensor:
    """Mean absolute error between two light fields over all views."""
    if pred.views.shape != target.views.shape:
        raise ValueError(
            f"shape mismatch: {tuple(pred.views.shape)} vs {tuple(target.views.shape)}"
        )
    return (pred.views - target.views).abs().mean()
