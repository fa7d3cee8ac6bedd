"""Geometric resampling primitives.

All warps gather with bilinear interpolation and border clamping: sample
positions are clamped into the image before interpolation, so out-of-range
reads repeat the border pixel instead of injecting zeros. `inverse_warp`
and everything built on it is differentiable w.r.t. both the image and the
displacement field; `forward_splat_disparity` is mask-building machinery
and intentionally carries no gradient.

Coordinate conventions: arrays are indexed ``[y, x]`` (row, column), a
``FlowField``/displacement array is ``[H, W, 2]`` holding ``(dx, dy)`` in
pixels, and a displacement is added to the output pixel position to find
the source sample, i.e. ``out(p) = img(p + disp(p))``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor

# Pixels closer to the frame border than this are excluded from warping-loss
# reductions (border clamping makes them unreliable).
VALIDITY_MARGIN = 2

# Two splatted surfaces within this disparity gap are treated as one surface
# rather than letting one z-buffer the other away.
_ZBUFFER_TOL = 1e-3


@dataclass(frozen=True)
class AffineDepthParams:
    """Scale/shift relating relative depth to disparity: ``d = a * z + b``."""

    a: float
    b: float

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"affine depth scale must be positive, got a={self.a}")


def depth_to_disparity(z: Tensor, params: AffineDepthParams) -> Tensor:
    """Map a relative depth map to disparity, ``d = a * z + b`` elementwise."""
    return params.a * z + params.b


def bilinear_sample(img: Tensor, x: Tensor, y: Tensor) -> Tensor:
    """Sample ``img`` at real-valued positions with border clamping.

    Args:
        img: ``(..., H, W, C)`` source values.
        x, y: sample positions in pixels, broadcastable to a common shape
            ``S`` (typically ``(H', W')``).

    Returns:
        ``(..., *S, C)`` interpolated values. Differentiable w.r.t. ``img``
        and the positions (the position gradient is zero where the clamp
        is active, i.e. outside the frame).
    """
    h, w = img.shape[-3], img.shape[-2]
    x, y = torch.broadcast_tensors(x, y)
    x = x.clamp(0.0, w - 1.0)
    y = y.clamp(0.0, h - 1.0)
    x0 = x.floor()
    y0 = y.floor()
    wx = (x - x0).unsqueeze(-1)
    wy = (y - y0).unsqueeze(-1)
    x0i = x0.long()
    y0i = y0.long()
    x1i = (x0i + 1).clamp(max=w - 1)
    y1i = (y0i + 1).clamp(max=h - 1)

    v00 = img[..., y0i, x0i, :]
    v01 = img[..., y0i, x1i, :]
    v10 = img[..., y1i, x0i, :]
    v11 = img[..., y1i, x1i, :]
    top = v00 + wx * (v01 - v00)
    bot = v10 + wx * (v11 - v10)
    return top + wy * (bot - top)


def _pixel_grid(h: int, w: int, dtype, device) -> tuple[Tensor, Tensor]:
    ys = torch.arange(h, dtype=dtype, device=device)
    xs = torch.arange(w, dtype=dtype, device=device)
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return gx, gy


def batched_bilinear_sample(imgs: Tensor, x: Tensor, y: Tensor) -> Tensor:
    """Per-batch bilinear sampling: image ``b`` is sampled at positions ``b``.

    Same interpolation and border clamping as :func:`bilinear_sample`, but
    with the batch axis of the positions aligned to the batch axis of the
    images (one flat gather instead of a python loop over views).

    Args:
        imgs: ``(B, H, W, C)``.
        x, y: ``(B, *S)`` sample positions.

    Returns:
        ``(B, *S, C)``.
    """
    b, h, w, c = imgs.shape
    x = x.clamp(0.0, w - 1.0)
    y = y.clamp(0.0, h - 1.0)
    x0 = x.floor()
    y0 = y.floor()
    wx = (x - x0).reshape(b, -1, 1)
    wy = (y - y0).reshape(b, -1, 1)
    x0i = x0.long().reshape(b, -1)
    y0i = y0.long().reshape(b, -1)
    x1i = (x0i + 1).clamp(max=w - 1)
    y1i = (y0i + 1).clamp(max=h - 1)
    flat = imgs.reshape(b, h * w, c)

    def gather(yi, xi):
        return flat.gather(1, (yi * w + xi).unsqueeze(-1).expand(-1, -1, c))

    v00 = gather(y0i, x0i)
    v01 = gather(y0i, x1i)
    v10 = gather(y1i, x0i)
    v11 = gather(y1i, x1i)
    top = v00 + wx * (v01 - v00)
    bot = v10 + wx * (v11 - v10)
    return (top + wy * (bot - top)).reshape(b, *x.shape[1:], c)


def _pad_replicate(x: Tensor, pad: tuple[int, int, int, int]) -> Tensor:
    """Replicate-pad the last two dims of an arbitrarily batched tensor."""
    h, w = x.shape[-2], x.shape[-1]
    flat = x.reshape(-1, 1, h, w)
    padded = torch.nn.functional.pad(flat, pad, mode="replicate")
    return padded.reshape(*x.shape[:-2], h + pad[2] + pad[3], w + pad[0] + pad[1])


def constant_offset_sample(img: Tensor, dx: Tensor, dy: Tensor) -> Tensor:
    """Bilinear-sample an image at ``(x + dx, y + dy)`` for scalar offsets.

    Equivalent to :func:`bilinear_sample` with a constant displacement but
    implemented as four weighted slices of a replicate-padded copy, which
    avoids gather/scatter entirely; this is the hot path of tensor-display
    synthesis. Differentiable w.r.t. ``img`` and both offsets.

    Args:
        img: ``(..., H, W, C)``.
        dx, dy: 0-d tensors.
    """
    h, w = img.shape[-3], img.shape[-2]
    fdx, fdy = float(dx.detach()), float(dy.detach())
    if not (np.isfinite(fdx) and np.isfinite(fdy)):
        raise ValueError(f"non-finite sample offset ({fdx}, {fdy})")
    kx, ky = int(np.floor(fdx)), int(np.floor(fdy))
    fx = dx - kx
    fy = dy - ky
    pl, pr = max(0, -kx), max(0, kx + 1)
    pt, pb = max(0, -ky), max(0, ky + 1)
    padded = _pad_replicate(img.movedim(-1, -3), (pl, pr, pt, pb))
    y0, x0 = pt + ky, pl + kx
    v00 = padded[..., y0:y0 + h, x0:x0 + w]
    v01 = padded[..., y0:y0 + h, x0 + 1:x0 + 1 + w]
    v10 = padded[..., y0 + 1:y0 + 1 + h, x0:x0 + w]
    v11 = padded[..., y0 + 1:y0 + 1 + h, x0 + 1:x0 + 1 + w]
    top = v00 + fx * (v01 - v00)
    bot = v10 + fx * (v11 - v10)
    return (top + fy * (bot - top)).movedim(-3, -1)


def inverse_warp(img: Tensor, displacement: Tensor) -> Tensor:
    """Gather-warp an image: ``out(p) = img(p + displacement(p))``.

    Args:
        img: ``(H, W, C)`` image.
        displacement: ``(H, W, 2)`` per-pixel ``(dx, dy)`` offsets, or any
            shape broadcastable to it (e.g. a constant ``(2,)`` offset).

    Returns:
        ``(H, W, C)`` warped image. Zero displacement is an exact identity.
    """
    if img.ndim != 3:
        raise ValueError(f"expected (H, W, C) image, got shape {tuple(img.shape)}")
    h, w = img.shape[0], img.shape[1]
    displacement = torch.broadcast_to(displacement, (h, w, 2))
    gx, gy = _pixel_grid(h, w, displacement.dtype, img.device)
    return bilinear_sample(img, gx + displacement[..., 0], gy + displacement[..., 1])


def constant_displacement(dx, dy, dtype=torch.float32, device=None) -> Tensor:
    """Pack two scalars (python or 0-d tensors) into a broadcastable field."""
    dx = torch.as_tensor(dx, dtype=dtype, device=device)
    dy = torch.as_tensor(dy, dtype=dtype, device=device)
    return torch.stack([dx, dy]).reshape(1, 1, 2)


def warp_sai_to_center(views: Tensor, offset: tuple[int, int], disparity: Tensor) -> Tensor:
    """Warp one sub-aperture image toward the center view.

    The view at angular offset ``(u, v)`` is gathered with the per-pixel
    displacement ``(u * d, v * d)``; for a geometrically consistent light
    field this reproduces the center view away from occlusions.

    Args:
        views: ``(U, V, H, W, C)`` light-field view stack.
        offset: angular offset pair ``(u, v)`` with ``u, v`` integers in the
            grid (0 is the center).
        disparity: ``(H, W)`` disparity map in pixels per unit offset.

    Returns:
        ``(H, W, C)`` image on the center-view grid.
    """
    u, v = offset
    nu, nv = views.shape[0], views.shape[1]
    if abs(2 * u) > nu - 1 or abs(2 * v) > nv - 1:
        raise ValueError(f"angular offset {offset} outside {nu}x{nv} grid")
    view = views[u + (nu - 1) // 2, v + (nv - 1) // 2]
    if u == 0 and v == 0:
        return view
    disp = torch.stack([u * disparity, v * disparity], dim=-1)
    return inverse_warp(view, disp)


def warp_views_to_center(views: Tensor, disparity: Tensor) -> Tensor:
    """Warp every view of a light field toward the center in one batched gather.

    Equivalent to calling :func:`warp_sai_to_center` per view (bit for bit),
    but batched, which matters inside optimization loops.

    Args:
        views: ``(U, V, H, W, C)``.
        disparity: ``(H, W)``.

    Returns:
        ``(U, V, H, W, C)`` center-grid images.
    """
    from .lightfield import angular_offsets  # local import to avoid a cycle

    nu, nv, h, w, c = views.shape
    us = angular_offsets(nu)
    vs = angular_offsets(nv)
    uu, vv = np.meshgrid(us, vs, indexing="ij")
    off_u = torch.as_tensor(uu.reshape(-1, 1, 1), dtype=disparity.dtype)
    off_v = torch.as_tensor(vv.reshape(-1, 1, 1), dtype=disparity.dtype)
    gx, gy = _pixel_grid(h, w, disparity.dtype, views.device)
    x = gx + off_u * disparity
    y = gy + off_v * disparity
    out = batched_bilinear_sample(views.reshape(nu * nv, h, w, c), x, y)
    return out.reshape(nu, nv, h, w, c)


def flow_warp_candidate(img_adj: Tensor, flow: Tensor) -> Tensor:
    """Warp an adjacent frame into a target view's grid using provided flow.

    ``flow`` must be sampled on the target grid and point into ``img_adj``
    (the gather convention used throughout); the result approximates the
    target view wherever the two are co-visible.
    """
    if img_adj.shape[:2] != flow.shape[:2]:
        raise ValueError(
            f"image {tuple(img_adj.shape)} and flow {tuple(flow.shape)} disagree"
        )
    return inverse_warp(img_adj, flow)


def forward_splat_disparity(
    img: np.ndarray | Tensor,
    disparity: np.ndarray | Tensor,
    offset: tuple[float, float],
) -> tuple[np.ndarray, np.ndarray]:
    """Scatter an image to the view at angular ``offset`` and report holes.

    Each source pixel ``p`` lands at ``p + offset * d(p)`` and distributes
    its value to the four surrounding integer pixels with bilinear weights.
    Where surfaces collide the larger disparity wins (closer occludes
    farther). Target pixels collecting total weight below 0.5 are holes.

    Args:
        img: ``(H, W, C)`` source image.
        disparity: ``(H, W)`` disparity map.
        offset: angular offset pair ``(u, v)``.

    Returns:
        ``(warped, holes)``: the splatted ``(H, W, C)`` float64 image
        (zeros at holes) and a ``(H, W)`` uint8 hole mask (1 = hole).
        No gradients flow through this operation.
    """
    img = np.asarray(img.detach().cpu() if isinstance(img, Tensor) else img, dtype=np.float64)
    d = np.asarray(
        disparity.detach().cpu() if isinstance(disparity, Tensor) else disparity,
        dtype=np.float64,
    )
    if img.shape[:2] != d.shape:
        raise ValueError(f"image {img.shape} and disparity {d.shape} disagree")
    h, w = d.shape
    u, v = offset
    ys, xs = np.mgrid[0:h, 0:w]
    tx = (xs + u * d).ravel()
    ty = (ys + v * d).ravel()
    src_d = d.ravel()
    src_c = img.reshape(h * w, -1)

    x0 = np.floor(tx).astype(np.int64)
    y0 = np.floor(ty).astype(np.int64)
    fx = tx - x0
    fy = ty - y0

    zbuf = np.full((h, w), -np.inf)
    corners = []
    for cy, cx, cw in (
        (y0, x0, (1 - fy) * (1 - fx)),
        (y0, x0 + 1, (1 - fy) * fx),
        (y0 + 1, x0, fy * (1 - fx)),
        (y0 + 1, x0 + 1, fy * fx),
    ):
        keep = (cw > 0) & (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h)
        corners.append((cy[keep], cx[keep], cw[keep], keep))
        np.maximum.at(zbuf, (cy[keep], cx[keep]), src_d[keep])

    weight = np.zeros((h, w))
    color = np.zeros((h, w, src_c.shape[1]))
    for cy, cx, cw, keep in corners:
        win = src_d[keep] >= zbuf[cy, cx] - _ZBUFFER_TOL
        cy, cx, cw = cy[win], cx[win], cw[win]
        np.add.at(weight, (cy, cx), cw)
        vals = src_c[keep][win] * cw[:, None]
        for ch in range(color.shape[2]):
            np.add.at(color[..., ch], (cy, cx), vals[:, ch])

    holes = (weight < 0.5).astype(np.uint8)
    filled = weight > 0
    color[filled] /= weight[filled, None]
    color[holes.astype(bool)] = 0.0
    return color, holes


def disocclusion_masks(
    img: np.ndarray | Tensor,
    disparity: np.ndarray | Tensor,
    offsets_u: np.ndarray,
    offsets_v: np.ndarray,
) -> np.ndarray:
    """Forward-splat ``img`` to every view of an angular grid, keep the holes.

    Returns a ``(U, V, H, W)`` uint8 mask, 1 where the splat left a hole
    (disoccluded in that view). The center view is hole-free by
    construction.
    """
    h, w = np.asarray(disparity).shape if not isinstance(disparity, Tensor) else disparity.shape
    masks = np.zeros((len(offsets_u), len(offsets_v), h, w), dtype=np.uint8)
    for iu, u in enumerate(offsets_u):
        for iv, v in enumerate(offsets_v):
            if u == 0 and v == 0:
                continue
            _, masks[iu, iv] = forward_splat_disparity(img, disparity, (u, v))
    return masks
