"""Depth and flow providers.

The estimation models the pipeline leans on (monocular depth, optical
flow) live behind this small contract so they can be swapped:

* ``depth(t)`` returns the relative depth map of frame ``t``'s input view,
  values in [0, 1].
* ``flow(src, dst)`` returns a gather field sampled on the destination
  view's grid; adding it to a pixel position gives the matching position
  in the source view, so ``inverse_warp(src_img, flow)`` reconstructs the
  destination wherever the two are co-visible. Views are addressed as
  ``(frame, u, v)`` with ``(u, v) = (0, 0)`` the input frame.

Two implementations ship: an oracle backed by a synthetic scene's exact
geometry, and a file-backed provider reading PFM depth and .flo flow from
directory templates (which fails loudly on missing files). A third,
:class:`PanningVideoProvider`, serves videos simulated by panning a crop
window over a single light field.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import Tensor

from .lfio import read_flo, read_pfm
from .scenes import SceneTruth, SimulatedVideo
from .warping import AffineDepthParams

ViewRef = tuple[int, int, int]  # (frame, u, v)


class ProviderError(RuntimeError):
    """A provider could not produce a requested depth or flow map."""


def normalize_disparity(disparity: Tensor | np.ndarray) -> tuple[Tensor, AffineDepthParams]:
    """Rescale a disparity map to a [0, 1] relative depth plus the exact affine back-map.

    Returns ``(z, params)`` with ``params.a * z + params.b`` recovering the
    input exactly; constant maps get ``z = 0.5`` with a unit scale.
    """
    d = torch.as_tensor(np.asarray(disparity), dtype=torch.float32)
    lo, hi = float(d.min()), float(d.max())
    if hi - lo < 1e-9:
        return torch.full_like(d, 0.5), AffineDepthParams(a=1.0, b=lo - 0.5)
    z = (d - lo) / (hi - lo)
    return z, AffineDepthParams(a=hi - lo, b=lo)


class SceneOracleProvider:
    """Exact depth and flow from a synthetic scene's ground truth."""

    def __init__(self, truth: SceneTruth):
        self.truth = truth
        self._params: dict[int, AffineDepthParams] = {}

    def depth(self, t: int) -> Tensor:
        z, params = normalize_disparity(self.truth.disparity[t])
        self._params[t] = params
        return z

    def depth_params(self, t: int) -> AffineDepthParams:
        """The affine (a, b) that maps frame ``t``'s depth back to true disparity."""
        if t not in self._params:
            self.depth(t)
        return self._params[t]

    def flow(self, src: ViewRef, dst: ViewRef) -> Tensor:
        return self.truth.flow(src, dst)[0]


class PanningVideoProvider:
    """Depth and flow for a video simulated by panning a crop over one LF.

    Needs the source light field's relative depth map (e.g. from a sibling
    PFM). Per-frame depth is the matching crop of it; flow comes from the
    known camera path plus the parallax implied by the cropped disparity.
    """

    def __init__(self, video: SimulatedVideo, source_depth: Tensor | np.ndarray,
                 depth_params: AffineDepthParams | None = None):
        self.video = video
        z = torch.as_tensor(np.asarray(source_depth), dtype=torch.float32)
        self.source_depth = z
        self.params = depth_params or AffineDepthParams(a=1.0, b=0.0)

    def _crop(self, arr: Tensor, t: int) -> Tensor:
        ox, oy = self.video.offsets[t]
        h, w = self.video.frames.shape[1], self.video.frames.shape[2]
        return arr[oy:oy + h, ox:ox + w]

    def depth(self, t: int) -> Tensor:
        return self._crop(self.source_depth, t)

    def flow(self, src: ViewRef, dst: ViewRef) -> Tensor:
        ts, us, vs = src
        td, ud, vd = dst
        off = self.video.offsets
        cam = (off[ts] - off[td]).astype(np.float32)  # gather shift from camera pan
        d = self.params.a * self._crop(self.source_depth, td) + self.params.b
        fx = d * (us - ud) + float(cam[0])
        fy = d * (vs - vd) + float(cam[1])
        return torch.stack([fx, fy], dim=-1)


@dataclass(frozen=True)
class FileProviderSpec:
    """Directory templates for a file-backed provider.

    ``depth_template`` is formatted with ``t``; ``flow_template`` with the
    source and destination refs (``ts, us, vs, td, ud, vd``).
    """

    depth_dir: str
    flow_dir: str
    depth_template: str = "depth_{t:03d}.pfm"
    flow_template: str = "flow_{ts:03d}{us:+d}{vs:+d}_to_{td:03d}{ud:+d}{vd:+d}.flo"


class FileProvider:
    """Reads PFM depth and .flo flow files; missing files raise :class:`ProviderError`."""

    def __init__(self, spec: FileProviderSpec):
        self.spec = spec

    def depth(self, t: int) -> Tensor:
        path = Path(self.spec.depth_dir) / self.spec.depth_template.format(t=t)
        if not path.exists():
            raise ProviderError(f"missing depth file {path}")
        try:
            return torch.from_numpy(read_pfm(path).copy())
        except ValueError as exc:
            raise ProviderError(str(exc)) from exc

    def flow(self, src: ViewRef, dst: ViewRef) -> Tensor:
        ts, us, vs = src
        td, ud, vd = dst
        name = self.spec.flow_template.format(ts=ts, us=us, vs=vs, td=td, ud=ud, vd=vd)
        path = Path(self.spec.flow_dir) / name
        if not path.exists():
            raise ProviderError(f"missing flow file {path}")
        try:
            return torch.from_numpy(read_flo(path))
        except ValueError as exc:
            raise ProviderError(str(exc)) from exc
