"""Light-field containers and the low-rank tensor-display synthesis model.

A light field is stored as a ``(U, V, H, W, 3)`` stack of sub-aperture
views with odd angular sizes, so the center view at angular offset (0, 0)
always exists; storage index ``i`` along an angular axis corresponds to
offset ``i - (U - 1) // 2``. The first angular axis (offset ``u``) pairs
with the horizontal spatial axis ``x`` and the second (``v``) with ``y``.

The tensor-display model represents a light field by ``N`` multiplicative
layers of rank ``R``: view (u, v) is the rank-sum of per-layer samples
taken at spatial positions shifted by ``D_n * (u, v)``, where ``D`` is one
scalar displacement per layer. ``D = (-1, 0, 1)`` recovers the classic
uniformly spaced model; letting ``D`` adapt moves the layers onto the
scene's depth planes. Note the sampling convention: a layer carrying
content at displacement ``D`` renders that content with screen disparity
``-D``, so symmetric displacement sets are sign-agnostic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor

from .warping import _pad_replicate, constant_displacement, inverse_warp


def angular_offsets(n: int) -> np.ndarray:
    """Integer offsets ``-(n-1)/2 ... (n-1)/2`` for an odd angular size."""
    if n < 1 or n % 2 == 0:
        raise ValueError(f"angular size must be odd and positive, got {n}")
    half = (n - 1) // 2
    return np.arange(-half, half + 1)


def _check_unit_range(t: Tensor, name: str) -> None:
    vals = t.detach()
    if not torch.isfinite(vals).all():
        raise ValueError(f"{name} contains non-finite values")
    lo, hi = float(vals.min()), float(vals.max())
    if lo < -1e-6 or hi > 1 + 1e-6:
        raise ValueError(f"{name} values outside [0, 1]: min={lo:.4g} max={hi:.4g}")


@dataclass
class LightField:
    """A 4D light field: ``views[U, V, H, W, 3]`` with values in [0, 1]."""

    views: Tensor

    def __post_init__(self):
        if self.views.ndim != 5 or self.views.shape[-1] != 3:
            raise ValueError(f"expected (U, V, H, W, 3), got {tuple(self.views.shape)}")
        if self.views.shape[0] % 2 == 0 or self.views.shape[1] % 2 == 0:
            raise ValueError("angular sizes must be odd so the center view exists")
        _check_unit_range(self.views, "light field")

    @property
    def angular_shape(self) -> tuple[int, int]:
        return self.views.shape[0], self.views.shape[1]

    @property
    def spatial_shape(self) -> tuple[int, int]:
        return self.views.shape[2], self.views.shape[3]

    @property
    def offsets_u(self) -> np.ndarray:
        return angular_offsets(self.views.shape[0])

    @property
    def offsets_v(self) -> np.ndarray:
        return angular_offsets(self.views.shape[1])

    def view(self, u: int, v: int) -> Tensor:
        """The sub-aperture image at angular offset (u, v)."""
        iu = u + (self.views.shape[0] - 1) // 2
        iv = v + (self.views.shape[1] - 1) // 2
        if not (0 <= iu < self.views.shape[0] and 0 <= iv < self.views.shape[1]):
            raise ValueError(f"angular offset ({u}, {v}) outside grid")
        return self.views[iu, iv]


def center_view(lf: LightField) -> Tensor:
    """The view at angular offset (0, 0), i.e. the monocular frame."""
    return lf.view(0, 0)


@dataclass
class TDRepresentation:
    """Multiplicative layer stack ``layers[N, R, H, W, 3]`` with values in [0, 1].

    Storage index ``i`` along the layer axis corresponds to the conceptual
    symmetric layer index ``i - (N - 1) // 2``.
    """

    layers: Tensor

    def __post_init__(self):
        if self.layers.ndim != 5 or self.layers.shape[-1] != 3:
            raise ValueError(
                f"expected (N, R, H, W, 3), got {tuple(self.layers.shape)}"
            )
        if self.layers.shape[0] < 1 or self.layers.shape[1] < 1:
            raise ValueError("need at least one layer and rank one")
        _check_unit_range(self.layers, "layer stack")

    @property
    def n_layers(self) -> int:
        return self.layers.shape[0]

    @property
    def rank(self) -> int:
        return self.layers.shape[1]


@dataclass
class DisplacementVector:
    """Per-layer displacement scalars, sorted ascending."""

    values: Tensor

    def __post_init__(self):
        if self.values.ndim != 1:
            raise ValueError(f"expected 1D displacements, got {tuple(self.values.shape)}")
        if not torch.isfinite(self.values).all():
            raise ValueError("displacements must be finite")
        if self.values.numel() > 1 and (self.values.diff() < 0).any():
            raise ValueError("displacements must be sorted ascending")


def uniform_displacements(n_layers: int, dtype=torch.float32) -> DisplacementVector:
    """The classic fixed spacing: ``N`` symmetric integer offsets, e.g. (-1, 0, 1)."""
    half = (n_layers - 1) / 2.0
    return DisplacementVector(torch.arange(n_layers, dtype=dtype) - half)


def _as_tensor(x, name: str) -> Tensor:
    if isinstance(x, (TDRepresentation,)):
        return x.layers
    if isinstance(x, DisplacementVector):
        return x.values
    if isinstance(x, Tensor):
        return x
    raise TypeError(f"unsupported type for {name}: {type(x).__name__}")


def _axis_shift_lerp(stack: Tensor, shifts: list[Tensor], origin: int, size: int,
                     axis: int) -> Tensor:
    """Linear interpolation between integer shifts of a padded tensor.

    For each scalar shift ``s`` the tensor is sliced at ``floor(s)`` and
    ``floor(s) + 1`` along ``axis`` (offset by the pad ``origin``) and the
    two slices are blended by the fractional part; results are stacked on
    a new leading axis. Together with replicate padding this reproduces
    border-clamped bilinear sampling one axis at a time.
    """
    out = []
    for s in shifts:
        k = int(np.floor(float(s.detach())))
        f = s - k
        lo = stack.narrow(axis, origin + k, size)
        hi = stack.narrow(axis, origin + k + 1, size)
        out.append(lo + f * (hi - lo))
    return torch.stack(out)


def synthesize_views(layers: Tensor, displacements: Tensor, grid: tuple[int, int]) -> Tensor:
    """Raw tensor-display synthesis; see :func:`td_synthesize`.

    Operates on bare tensors so optimizers can differentiate through it
    without container validation; sampling is exact border-clamped bilinear
    (fractional shifts applied separably on a replicate-padded copy).
    Returns the clipped ``(U, V, H, W, 3)`` view stack.
    """
    nu, nv = grid
    us = angular_offsets(nu)
    vs = angular_offsets(nv)
    n, _, h, w, _ = layers.shape
    if displacements.shape[0] != n:
        raise ValueError(f"{n} layers but {displacements.shape[0]} displacements")
    if not torch.isfinite(displacements).all():
        raise ValueError("displacements must be finite")

    prod = None
    for i in range(n):
        dx = [displacements[i] * float(u) for u in us]
        dy = [displacements[i] * float(v) for v in vs]
        kx = [int(np.floor(float(d.detach()))) for d in dx]
        ky = [int(np.floor(float(d.detach()))) for d in dy]
        pl, pr = max(0, -min(kx)), max(0, max(kx) + 1)
        pt, pb = max(0, -min(ky)), max(0, max(ky) + 1)
        padded = _pad_replicate(layers[i].movedim(-1, -3), (pl, pr, pt, pb))
        by_u = _axis_shift_lerp(padded, dx, pl, w, axis=-1)  # (U, R, 3, Hp, W)
        by_uv = _axis_shift_lerp(by_u, dy, pt, h, axis=-2)  # (V, U, R, 3, H, W)
        sampled = by_uv.movedim(0, 1)
        prod = sampled if prod is None else prod * sampled
    return prod.sum(dim=2).movedim(2, -1).clamp(0.0, 1.0)


def td_synthesize(
    rep: TDRepresentation | Tensor,
    displacements: DisplacementVector | Tensor,
    grid: tuple[int, int],
) -> LightField:
    """Render a light field from a layer stack and per-layer displacements.

    For every spatial position (x, y) and angular offset (u, v) the output
    is ``sum_r prod_n f_n^r(x + D_n u, y + D_n v)`` with bilinear sampling,
    border clamping, and a final clip to [0, 1] (rank sums can exceed 1).

    Args:
        rep: layer stack, ``(N, R, H, W, 3)``.
        displacements: per-layer scalars, length ``N``.
        grid: angular size ``(U, V)``, both odd.

    Returns:
        The synthesized :class:`LightField`.
    """
    layers = _as_tensor(rep, "rep")
    disp = _as_tensor(displacements, "displacements")
    return LightField(synthesize_views(layers, disp, grid))


def extract_epi(lf: LightField, axis: str, index: int) -> Tensor:
    """Slice an epipolar-plane image out of a light field.

    A horizontal EPI fixes a row ``y`` and the central vertical offset
    (v=0), leaving a ``(U, W, 3)`` image; content at constant disparity
    ``d`` traces straight lines of slope ``d`` pixels per angular step.
    A vertical EPI is the transpose case: fixed column, u=0, ``(V, H, 3)``.

    Args:
        lf: source light field.
        axis: ``"horizontal"`` (fix a row) or ``"vertical"`` (fix a column).
        index: row or column index.
    """
    h, w = lf.spatial_shape
    cu = (lf.views.shape[0] - 1) // 2
    cv = (lf.views.shape[1] - 1) // 2
    if axis == "horizontal":
        if not 0 <= index < h:
            raise IndexError(f"row {index} out of range for height {h}")
        return lf.views[:, cv, index, :, :]
    if axis == "vertical":
        if not 0 <= index < w:
            raise IndexError(f"column {index} out of range for width {w}")
        return lf.views[cu, :, :, index, :]
    raise ValueError(f"axis must be 'horizontal' or 'vertical', got {axis!r}")


def refocus(lf: LightField, alpha: float) -> Tensor:
    """Shift-and-add refocusing: average the views refocused at slope ``alpha``.

    Each view is translated by ``-alpha * (u, v)`` (gathered at
    ``p + alpha * (u, v)``) before averaging, so content at disparity
    ``alpha`` aligns across views and appears sharp while everything else
    blurs.

    Returns:
        ``(H, W, 3)`` refocused image.
    """
    if not np.isfinite(alpha):
        raise ValueError(f"alpha must be finite, got {alpha}")
    acc = None
    for iu, u in enumerate(lf.offsets_u):
        for iv, v in enumerate(lf.offsets_v):
            disp = constant_displacement(
                alpha * float(u), alpha * float(v), dtype=lf.views.dtype
            )
            warped = inverse_warp(lf.views[iu, iv], disp)
            acc = warped if acc is None else acc + warped
    return acc / (lf.views.shape[0] * lf.views.shape[1])
