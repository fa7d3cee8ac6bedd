"""Synthetic layered scenes with analytically exact ground truth.

A scene is a stack of fronto-parallel layers, each with a constant
disparity, a constant 2D velocity, a silhouette, and a texture defined as
a continuous function of layer coordinates. Because every quantity is
closed-form, any view of any frame can be rendered exactly, and true
disparity, optical flow, covisibility, and disocclusion masks follow
analytically; that makes these scenes usable as independent oracles.

Geometry: a layer point ``s`` (layer coordinates, anchored to the center
view of frame 0) appears in view ``(u, v)`` of frame ``t`` at canvas
position ``s + disparity * (u, v) + velocity * t``. Layers are listed in
ascending disparity and composited back-to-front, so larger disparity
(closer) occludes smaller.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import Tensor

from .lightfield import LightField, angular_offsets


@dataclass(frozen=True)
class SceneLayer:
    """One fronto-parallel plane of a synthetic scene.

    Args:
        disparity: pixels of view-to-view shift per unit angular offset.
        velocity: ``(vx, vy)`` pixels per frame.
        texture: ``"noise"`` (smooth seeded value noise) or ``"constant"``.
        color: RGB triple for the constant texture.
        noise_cells: lattice spacing of the value noise in pixels; larger
            is smoother.
        silhouette: ``"full"``, ``"rect"``, or ``"disc"``.
        rect: ``(x0, y0, x1, y1)`` half-open box in layer coordinates.
        disc: ``(cx, cy, radius)`` in layer coordinates.
    """

    disparity: float
    velocity: tuple[float, float] = (0.0, 0.0)
    texture: str = "noise"
    color: tuple[float, float, float] = (0.5, 0.5, 0.5)
    noise_cells: float = 8.0
    silhouette: str = "full"
    rect: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    disc: tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """Layer stack plus canvas, angular grid, frame count, and seed."""

    layers: tuple[SceneLayer, ...]
    size: tuple[int, int] = (64, 64)
    angular: tuple[int, int] = (5, 5)
    frames: int = 3
    seed: int = 0

    def __post_init__(self):
        if len(self.layers) < 1:
            raise ValueError("need at least one layer")
        deltas = [l.disparity for l in self.layers]
        if any(b < a for a, b in zip(deltas, deltas[1:])):
            raise ValueError("layers must be sorted by ascending disparity")
        if self.frames < 1:
            raise ValueError("need at least one frame")
        angular_offsets(self.angular[0])
        angular_offsets(self.angular[1])


class _ValueNoise:
    """Smooth RGB value noise: bilinear interpolation of a seeded lattice."""

    def __init__(self, rng: np.random.Generator, cells: float, lo: float, hi: float):
        self.cells = cells
        self.lo = lo
        # lattice covers layer coordinates [lo, hi] with one cell of slack
        n = int(np.ceil((hi - lo) / cells)) + 3
        self.lattice = rng.uniform(0.1, 0.9, size=(n, n, 3))

    def __call__(self, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
        gx = (sx - self.lo) / self.cells
        gy = (sy - self.lo) / self.cells
        n = self.lattice.shape[0]
        gx = np.clip(gx, 0, n - 1.001)
        gy = np.clip(gy, 0, n - 1.001)
        x0 = np.floor(gx).astype(int)
        y0 = np.floor(gy).astype(int)
        fx = (gx - x0)[..., None]
        fy = (gy - y0)[..., None]
        v00 = self.lattice[y0, x0]
        v01 = self.lattice[y0, x0 + 1]
        v10 = self.lattice[y0 + 1, x0]
        v11 = self.lattice[y0 + 1, x0 + 1]
        return (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11)


class _LayerEval:
    """Continuous texture/silhouette evaluation for one layer."""

    def __init__(self, layer: SceneLayer, rng: np.random.Generator, lo: float, hi: float):
        self.layer = layer
        if layer.texture == "noise":
            self._tex = _ValueNoise(rng, layer.noise_cells, lo, hi)
        elif layer.texture == "constant":
            color = np.asarray(layer.color, dtype=np.float64)
            self._tex = lambda sx, sy: np.broadcast_to(color, (*sx.shape, 3)).copy()
        else:
            raise ValueError(f"unknown texture kind {layer.texture!r}")

    def texture(self, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
        return self._tex(sx, sy)

    def covers(self, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
        kind = self.layer.silhouette
        if kind == "full":
            return np.ones_like(sx, dtype=bool)
        if kind == "rect":
            x0, y0, x1, y1 = self.layer.rect
            return (sx >= x0) & (sx < x1) & (sy >= y0) & (sy < y1)
        if kind == "disc":
            cx, cy, r = self.layer.disc
            return (sx - cx) ** 2 + (sy - cy) ** 2 <= r * r
        raise ValueError(f"unknown silhouette kind {kind!r}")


@dataclass
class SceneTruth:
    """Rendered light-field video plus exact per-frame geometry.

    ``visible_layer`` holds the index of the topmost layer at every pixel
    of every view (-1 where nothing covers). ``hole_masks`` marks pixels
    that are visible in a view but hidden (or out of frame) in the same
    frame's center view, i.e. the disoccluded pixels.
    """

    spec: SyntheticSceneSpec
    lf_frames: list[LightField]
    center_frames: Tensor  # (T, H, W, 3)
    disparity: Tensor  # (T, H, W) center-view disparity
    hole_masks: np.ndarray  # (T, U, V, H, W) uint8
    visible_layer: np.ndarray  # (T, U, V, H, W) int8
    _layers: list[_LayerEval] = field(repr=False, default_factory=list)

    @property
    def offsets_u(self) -> np.ndarray:
        return angular_offsets(self.spec.angular[0])

    @property
    def offsets_v(self) -> np.ndarray:
        return angular_offsets(self.spec.angular[1])

    def _layer_fields(self, t: int, iu: int, iv: int) -> tuple[np.ndarray, np.ndarray]:
        """Per-pixel (disparity, velocity) of the visible layer in one view."""
        vis = self.visible_layer[t, iu, iv]
        deltas = np.array([l.layer.disparity for l in self._layers] + [0.0])
        velx = np.array([l.layer.velocity[0] for l in self._layers] + [0.0])
        vely = np.array([l.layer.velocity[1] for l in self._layers] + [0.0])
        return deltas[vis], np.stack([velx[vis], vely[vis]], axis=-1)

    def flow(
        self, src: tuple[int, int, int], dst: tuple[int, int, int]
    ) -> tuple[Tensor, np.ndarray]:
        """Exact gather flow between two (frame, u, v) views.

        Returns ``(flow, covisible)``: flow is ``(H, W, 2)`` on the
        destination grid, pointing to the matching position in the source
        view; covisible marks destination pixels whose content is actually
        visible (and in frame) at the source.
        """
        ts, us, vs = src
        td, ud, vd = dst
        h, w = self.spec.size
        iu = ud + (self.spec.angular[0] - 1) // 2
        iv = vd + (self.spec.angular[1] - 1) // 2
        delta, vel = self._layer_fields(td, iu, iv)
        fx = delta * (us - ud) + vel[..., 0] * (ts - td)
        fy = delta * (vs - vd) + vel[..., 1] * (ts - td)
        xs, ys = np.meshgrid(np.arange(w), np.arange(h))
        px, py = xs + fx, ys + fy
        inside = (px >= 0) & (px <= w - 1) & (py >= 0) & (py <= h - 1)
        occluded = np.zeros((h, w), dtype=bool)
        vis = self.visible_layer[td, iu, iv]
        for j, le in enumerate(self._layers):
            sx = px - le.layer.disparity * us - le.layer.velocity[0] * ts
            sy = py - le.layer.disparity * vs - le.layer.velocity[1] * ts
            closer = le.layer.disparity > delta
            occluded |= closer & le.covers(sx, sy)
        covis = inside & ~occluded & (vis >= 0)
        flow = torch.from_numpy(np.stack([fx, fy], axis=-1).astype(np.float32))
        return flow, covis

    def flow_to_next(self, t: int) -> Tensor:
        """Gather field on frame ``t+1``'s center grid pointing into frame ``t``."""
        return self.flow((t, 0, 0), (t + 1, 0, 0))[0]

    def candidate_flow(self, t_adj: int, t: int, u: int, v: int) -> Tensor:
        """Gather field on view ``(u, v)`` of frame ``t`` into the center of ``t_adj``."""
        return self.flow((t_adj, 0, 0), (t, u, v))[0]

    def covisible_with_center(self, t: int, u: int, v: int) -> np.ndarray:
        """Center-grid mask of pixels whose content is also visible in view (u, v)."""
        h, w = self.spec.size
        delta, _ = self._layer_fields(t, (self.spec.angular[0] - 1) // 2,
                                      (self.spec.angular[1] - 1) // 2)
        xs, ys = np.meshgrid(np.arange(w), np.arange(h))
        px, py = xs + delta * u, ys + delta * v
        inside = (px >= 0) & (px <= w - 1) & (py >= 0) & (py <= h - 1)
        occluded = np.zeros((h, w), dtype=bool)
        for le in self._layers:
            sx = px - le.layer.disparity * u - le.layer.velocity[0] * t
            sy = py - le.layer.disparity * v - le.layer.velocity[1] * t
            occluded |= (le.layer.disparity > delta) & le.covers(sx, sy)
        return inside & ~occluded


def generate_scene(spec: SyntheticSceneSpec) -> SceneTruth:
    """Render a scene spec into light fields and exact ground truth."""
    h, w = spec.size
    us = angular_offsets(spec.angular[0])
    vs = angular_offsets(spec.angular[1])
    max_shift = max(
        abs(l.disparity) * max(abs(us).max(), abs(vs).max())
        + max(abs(l.velocity[0]), abs(l.velocity[1])) * (spec.frames - 1)
        for l in spec.layers
    )
    lo = -max_shift - 2
    hi = max(h, w) + max_shift + 2
    rng = np.random.default_rng(spec.seed)
    layers = [_LayerEval(l, np.random.default_rng(rng.integers(2**63)), lo, hi)
              for l in spec.layers]

    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))

    def render(t, u, v):
        img = np.zeros((h, w, 3))
        vis = np.full((h, w), -1, dtype=np.int8)
        for k, le in enumerate(layers):
            sx = xs - le.layer.disparity * u - le.layer.velocity[0] * t
            sy = ys - le.layer.disparity * v - le.layer.velocity[1] * t
            cover = le.covers(sx, sy)
            if cover.any():
                img[cover] = le.texture(sx, sy)[cover]
                vis[cover] = k
        return img, vis

    n_l = len(layers)
    deltas = np.array([l.disparity for l in spec.layers] + [0.0])
    lf_frames = []
    centers = np.zeros((spec.frames, h, w, 3), dtype=np.float32)
    disparity = np.zeros((spec.frames, h, w), dtype=np.float32)
    holes = np.zeros((spec.frames, len(us), len(vs), h, w), dtype=np.uint8)
    vis_all = np.zeros((spec.frames, len(us), len(vs), h, w), dtype=np.int8)

    for t in range(spec.frames):
        views = np.zeros((len(us), len(vs), h, w, 3), dtype=np.float32)
        for iu, u in enumerate(us):
            for iv, v in enumerate(vs):
                img, vis = render(t, u, v)
                views[iu, iv] = img
                vis_all[t, iu, iv] = vis
                if u == 0 and v == 0:
                    centers[t] = img
                    disparity[t] = deltas[vis]
                else:
                    # disoccluded: content's center-view position is either
                    # covered by a closer layer or out of frame
                    delta_pix = deltas[vis]
                    cx = xs - delta_pix * u
                    cy = ys - delta_pix * v
                    outside = (cx < 0) | (cx > w - 1) | (cy < 0) | (cy > h - 1)
                    covered = np.zeros((h, w), dtype=bool)
                    for le in layers:
                        sx = cx - le.layer.velocity[0] * t
                        sy = cy - le.layer.velocity[1] * t
                        covered |= (le.layer.disparity > delta_pix) & le.covers(sx, sy)
                    holes[t, iu, iv] = (outside | covered).astype(np.uint8)
        lf_frames.append(LightField(torch.from_numpy(views).clamp(0.0, 1.0)))

    return SceneTruth(
        spec=spec,
        lf_frames=lf_frames,
        center_frames=torch.from_numpy(centers).clamp(0.0, 1.0),
        disparity=torch.from_numpy(disparity),
        hole_masks=holes,
        visible_layer=vis_all,
        _layers=layers,
    )


def single_plane_scene(
    disparity: float = 0.8,
    velocity: tuple[float, float] = (0.0, 0.0),
    size: tuple[int, int] = (64, 64),
    angular: tuple[int, int] = (5, 5),
    frames: int = 3,
    seed: int = 0,
    noise_cells: float = 8.0,
) -> SceneTruth:
    """One textured plane filling the frame."""
    layer = SceneLayer(disparity=disparity, velocity=velocity, noise_cells=noise_cells)
    return generate_scene(SyntheticSceneSpec((layer,), size, angular, frames, seed))


def two_plane_scene(
    bg_disparity: float = 0.0,
    fg_disparity: float = 2.0,
    fg_velocity: tuple[float, float] = (0.0, 0.0),
    size: tuple[int, int] = (64, 64),
    angular: tuple[int, int] = (5, 5),
    frames: int = 3,
    seed: int = 0,
) -> SceneTruth:
    """A textured foreground square over a textured background plane."""
    h, w = size
    side = min(h, w) // 2
    x0 = (w - side) / 2
    y0 = (h - side) / 2
    bg = SceneLayer(disparity=bg_disparity)
    fg = SceneLayer(
        disparity=fg_disparity,
        velocity=fg_velocity,
        silhouette="rect",
        rect=(x0, y0, x0 + side, y0 + side),
        noise_cells=5.0,
    )
    return generate_scene(SyntheticSceneSpec((bg, fg), size, angular, frames, seed))


def three_plane_scene(
    disparities: tuple[float, float, float] = (-2.3, 0.4, 1.7),
    size: tuple[int, int] = (64, 64),
    angular: tuple[int, int] = (3, 3),
    frames: int = 3,
    seed: int = 0,
) -> SceneTruth:
    """Background plane plus two rectangular planes at distinct disparities."""
    h, w = size
    d0, d1, d2 = sorted(disparities)
    bg = SceneLayer(disparity=d0)
    mid = SceneLayer(
        disparity=d1, silhouette="rect", rect=(w * 0.08, h * 0.15, w * 0.48, h * 0.85),
        noise_cells=6.0,
    )
    top = SceneLayer(
        disparity=d2, silhouette="rect", rect=(w * 0.55, h * 0.25, w * 0.92, h * 0.75),
        noise_cells=5.0,
    )
    return generate_scene(SyntheticSceneSpec((bg, mid, top), size, angular, frames, seed))


@dataclass
class SimulatedVideo:
    """A light-field video simulated by panning a crop window over one LF."""

    lf_frames: list[LightField]
    frames: Tensor  # (T, h, w, 3) center views
    offsets: np.ndarray  # (T, 2) integer crop origins (x, y)
    velocity: tuple[int, int]


def simulate_lf_video(
    lf: LightField,
    frames: int = 8,
    crop: tuple[int, int] | None = None,
    velocity: tuple[int, int] | None = None,
    seed: int = 0,
) -> SimulatedVideo:
    """Turn a single light field into a short video by panning a crop window.

    The crop origin moves along a fixed linear path with an integer
    per-frame step (drawn from the seed when not given), so frames are
    exact crops and the induced camera motion is known exactly.
    """
    h, w = lf.spatial_shape
    if crop is None:
        crop = (h - 2 * (frames - 1) - 2, w - 2 * (frames - 1) - 2)
    ch, cw = crop
    if ch < 1 or cw < 1 or ch > h or cw > w:
        raise ValueError(f"crop {crop} does not fit inside {h}x{w}")
    if velocity is None:
        rng = np.random.default_rng(seed)
        choices = [-2, -1, 1, 2]
        velocity = (int(rng.choice(choices)), int(rng.choice(choices)))
    vx, vy = velocity
    span_x, span_y = vx * (frames - 1), vy * (frames - 1)
    start_x = (w - cw - abs(span_x)) // 2 - min(span_x, 0)
    start_y = (h - ch - abs(span_y)) // 2 - min(span_y, 0)
    if start_x < 0 or start_y < 0:
        raise ValueError("crop path exits the light-field bounds")

    lf_frames = []
    centers = []
    offsets = np.zeros((frames, 2), dtype=np.int64)
    for t in range(frames):
        ox = start_x + vx * t
        oy = start_y + vy * t
        if ox < 0 or oy < 0 or ox + cw > w or oy + ch > h:
            raise ValueError("crop path exits the light-field bounds")
        offsets[t] = (ox, oy)
        views = lf.views[:, :, oy:oy + ch, ox:ox + cw, :].clone()
        frame_lf = LightField(views)
        lf_frames.append(frame_lf)
        centers.append(frame_lf.view(0, 0))
    return SimulatedVideo(
        lf_frames=lf_frames,
        frames=torch.stack(centers),
        offsets=offsets,
        velocity=(vx, vy),
    )
