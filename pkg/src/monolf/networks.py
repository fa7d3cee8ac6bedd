"""Trainable components, sized for desk-scale experiments.

Three blocks mirror the full pipeline:

* :class:`SynthesisNet` -- a recurrent encoder/decoder that maps the
  three stacked input frames plus the disparity map (10 channels) to the
  multiplicative layer stack. The recurrence is a ConvLSTM cell at the
  bottleneck; its state carries appearance across frames of a sequence.
* :class:`DisplacementNet` -- an attention-pooled head that predicts one
  normalized width per layer over the observed disparity range; cumulative
  midpoints of the widths become the per-layer displacements, so they are
  always sorted and stay within the (margin-padded) disparity range.
* :class:`RefinementNet` -- splits every view into non-overlapping patches,
  encodes the co-located patch from all views plus the input frame into
  tokens, runs self-attention across those tokens per patch site, and
  decodes each view's tokens to a residual image and a blend mask.

The encoders are plain strided conv stacks; widths and depths are config
knobs with small defaults.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

from .lightfield import DisplacementVector, LightField, TDRepresentation

DISPLACEMENT_RANGE_MARGIN = 0.5  # px of slack beyond the observed disparity range


@dataclass(frozen=True)
class SynthesisConfig:
    base_channels: int = 16
    stages: int = 4
    n_layers: int = 3
    rank: int = 12
    lstm_channels: int | None = None  # defaults to the deepest encoder width

    @property
    def out_channels(self) -> int:
        return self.n_layers * self.rank * 3

    def __post_init__(self):
        if self.stages < 1:
            raise ValueError("need at least one encoder stage")
        if self.n_layers < 1 or self.rank < 1:
            raise ValueError("n_layers and rank must be positive")


@dataclass
class RecurrentState:
    """ConvLSTM hidden/cell maps at bottleneck resolution."""

    hidden: Tensor
    cell: Tensor

    def detach(self) -> "RecurrentState":
        return RecurrentState(self.hidden.detach(), self.cell.detach())


class ConvLSTMCell(nn.Module):
    def __init__(self, in_channels: int, hidden_channels: int):
        super().__init__()
        self.hidden_channels = hidden_channels
        self.gates = nn.Conv2d(in_channels + hidden_channels, 4 * hidden_channels, 3, padding=1)

    def forward(self, x: Tensor, state: RecurrentState | None) -> tuple[Tensor, RecurrentState]:
        if state is None:
            zeros = x.new_zeros(x.shape[0], self.hidden_channels, x.shape[2], x.shape[3])
            state = RecurrentState(zeros, zeros.clone())
        gates = self.gates(torch.cat([x, state.hidden], dim=1))
        i, f, o, g = gates.chunk(4, dim=1)
        cell = torch.sigmoid(f) * state.cell + torch.sigmoid(i) * torch.tanh(g)
        hidden = torch.sigmoid(o) * torch.tanh(cell)
        return hidden, RecurrentState(hidden, cell)


def _conv_block(cin: int, cout: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class SynthesisNet(nn.Module):
    """Recurrent encoder/decoder producing the layer stack from stacked inputs."""

    def __init__(self, config: SynthesisConfig = SynthesisConfig()):
        super().__init__()
        self.config = config
        widths = [min(config.base_channels * 2**i, config.base_channels * 8)
                  for i in range(config.stages + 1)]
        self.stem = _conv_block(10, widths[0])
        self.encoder = nn.ModuleList(
            _conv_block(widths[i], widths[i + 1], stride=2) for i in range(config.stages)
        )
        lstm_ch = config.lstm_channels or widths[-1]
        self.lstm = ConvLSTMCell(widths[-1], lstm_ch)
        # input to decoder block i is the previous block's output width
        dec_in = [lstm_ch] + [widths[config.stages - i] for i in range(1, config.stages)]
        self.decoder = nn.ModuleList(
            _conv_block(dec_in[i] + widths[config.stages - 1 - i], widths[config.stages - 1 - i])
            for i in range(config.stages)
        )
        self.head = nn.Conv2d(widths[0], config.out_channels, 3, padding=1)

    def forward(self, x: Tensor, state: RecurrentState | None = None
                ) -> tuple[Tensor, RecurrentState]:
        """x: (B, 10, H, W) -> layer maps (B, N*R*3, H, W) in [0, 1], new state."""
        h, w = x.shape[2], x.shape[3]
        mult = 2**self.config.stages
        ph = (mult - h % mult) % mult
        pw = (mult - w % mult) % mult
        if ph or pw:
            x = F.pad(x, (0, pw, 0, ph), mode="replicate")
        feat = self.stem(x)
        skips = [feat]
        for block in self.encoder:
            feat = block(feat)
            skips.append(feat)
        feat, state = self.lstm(feat, state)
        for i, block in enumerate(self.decoder):
            feat = F.interpolate(feat, scale_factor=2, mode="bilinear", align_corners=False)
            feat = block(torch.cat([feat, skips[self.config.stages - 1 - i]], dim=1))
        out = torch.sigmoid(self.head(feat))
        return out[:, :, :h, :w], state


def stack_inputs(prev: Tensor, cur: Tensor, nxt: Tensor, disparity: Tensor) -> Tensor:
    """Stack three (H, W, 3) frames and a (H, W) disparity map into (1, 10, H, W)."""
    imgs = [t.permute(2, 0, 1) for t in (prev, cur, nxt)]
    return torch.cat(imgs + [disparity.unsqueeze(0)], dim=0).unsqueeze(0)


def synth_forward(
    net: SynthesisNet,
    prev: Tensor,
    cur: Tensor,
    nxt: Tensor,
    disparity: Tensor,
    state: RecurrentState | None = None,
) -> tuple[TDRepresentation, RecurrentState]:
    """Run the synthesis network on one frame triple.

    Returns the layer stack as a :class:`TDRepresentation` of shape
    ``(N, R, H, W, 3)`` plus the recurrent state to carry to the next frame
    (pass ``None`` at the start of a sequence).
    """
    cfg = net.config
    maps, new_state = net(stack_inputs(prev, cur, nxt, disparity), state)
    h, w = maps.shape[2], maps.shape[3]
    layers = maps[0].reshape(cfg.n_layers, cfg.rank, 3, h, w).permute(0, 1, 3, 4, 2)
    return TDRepresentation(layers), new_state


def widths_to_displacements(widths: Tensor, lo: float | Tensor, hi: float | Tensor) -> Tensor:
    """Cumulative-midpoint rule: positive normalized widths -> sorted positions.

    Each width claims a slice of ``[lo, hi]``; the displacement for a layer
    is the midpoint of its slice, i.e. ``lo + (cumsum - width/2) * (hi - lo)``.
    """
    if (widths <= 0).any():
        raise ValueError("widths must be positive")
    widths = widths / widths.sum()
    mid = widths.cumsum(0) - 0.5 * widths
    return lo + mid * (hi - lo)


class DisplacementNet(nn.Module):
    """Attention-pooled predictor of per-layer displacement widths."""

    def __init__(self, n_layers: int = 3, channels: int = 32, heads: int = 4):
        super().__init__()
        self.n_layers = n_layers
        self.features = nn.Sequential(
            nn.Conv2d(10, channels, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
        )
        self.query = nn.Parameter(torch.randn(1, 1, channels) * 0.02)
        self.pool = nn.MultiheadAttention(channels, heads, batch_first=True)
        self.mlp = nn.Sequential(
            nn.Linear(channels, channels), nn.ReLU(inplace=True), nn.Linear(channels, n_layers)
        )

    def forward(self, x: Tensor) -> Tensor:
        """x: (1, 10, H, W) -> (N,) positive widths summing to 1."""
        feat = self.features(x)
        tokens = feat.flatten(2).transpose(1, 2)  # (1, H'W', C)
        pooled, _ = self.pool(self.query, tokens, tokens)
        return torch.softmax(self.mlp(pooled)[0, 0], dim=0)


def displacement_forward(
    net: DisplacementNet,
    prev: Tensor,
    cur: Tensor,
    nxt: Tensor,
    disparity: Tensor,
    margin: float = DISPLACEMENT_RANGE_MARGIN,
) -> DisplacementVector:
    """Predict sorted per-layer displacements within the observed disparity range.

    The network outputs normalized widths; cumulative midpoints map them
    into ``[min(d) - margin, max(d) + margin]``.
    """
    widths = net(stack_inputs(prev, cur, nxt, disparity))
    lo = disparity.min().detach() - margin
    hi = disparity.max().detach() + margin
    return DisplacementVector(widths_to_displacements(widths, lo, hi))


@dataclass(frozen=True)
class RefinementConfig:
    patch: int = 32
    angular: tuple[int, int] = (7, 7)
    embed: int = 64
    depth: int = 2
    heads: int = 4

    def __post_init__(self):
        if self.patch % 4 != 0:
            raise ValueError("patch size must be a multiple of 4 (decoder upsamples x4)")
        if self.depth < 1:
            raise ValueError("need at least one attention layer")

    @property
    def n_views(self) -> int:
        return self.angular[0] * self.angular[1]


def count_tokens(config: RefinementConfig, h: int, w: int) -> tuple[int, int]:
    """(patch sites per view, tokens per site) for an image of size (h, w)."""
    p = config.patch
    sites = math.ceil(h / p) * math.ceil(w / p)
    return sites, config.n_views + 1


@dataclass
class RefinementOutput:
    refined: LightField
    residual: Tensor  # (U, V, H, W, 3)
    mask: Tensor  # (U, V, H, W) blend weight for the unrefined prediction


def blend_refinement(views: Tensor, residual: Tensor, mask: Tensor) -> Tensor:
    """Mask-weighted blend: ``mask * views + (1 - mask) * residual`` per pixel."""
    m = mask.unsqueeze(-1)
    return m * views + (1.0 - m) * residual


class RefinementNet(nn.Module):
    """Patch-token angular attention with residual blending."""

    def __init__(self, config: RefinementConfig = RefinementConfig()):
        super().__init__()
        self.config = config
        c = config.embed
        self.patch_encoder = nn.Sequential(
            nn.Conv2d(3, c // 2, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(c // 2, c, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.AdaptiveAvgPool2d(1),
        )
        self.view_embed = nn.Parameter(torch.randn(config.n_views + 1, c) * 0.02)
        self.attention = nn.ModuleList(
            nn.TransformerEncoderLayer(
                c, config.heads, dim_feedforward=2 * c, batch_first=True, dropout=0.0
            )
            for _ in range(config.depth)
        )
        q = config.patch // 4
        self.token_to_map = nn.Linear(c, c // 2 * q * q)
        self.decoder = nn.Sequential(
            nn.Conv2d(c // 2, c // 2, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Upsample(scale_factor=2, mode="bilinear", align_corners=False),
            nn.Conv2d(c // 2, c // 2, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Upsample(scale_factor=2, mode="bilinear", align_corners=False),
            nn.Conv2d(c // 2, 4, 3, padding=1),
        )

    def _encode_patches(self, patches: Tensor) -> Tensor:
        """(B, p, p, 3) -> (B, embed)."""
        return self.patch_encoder(patches.permute(0, 3, 1, 2)).flatten(1)

    def decode_tokens(self, tokens: Tensor, gh: int, gw: int) -> Tensor:
        """Decode each view's token grid independently (shared weights).

        tokens: ``(n_views, gh * gw, embed)`` -> ``(n_views, 4, gh * p, gw * p)``.
        """
        n_views = tokens.shape[0]
        q = self.config.patch // 4
        maps = self.token_to_map(tokens).reshape(n_views, gh, gw, -1, q, q)
        maps = maps.permute(0, 3, 1, 4, 2, 5).reshape(n_views, -1, gh * q, gw * q)
        return torch.sigmoid(self.decoder(maps))

    def forward(self, views: Tensor, frame: Tensor) -> tuple[Tensor, Tensor]:
        """views (U, V, H, W, 3), frame (H, W, 3) -> residual, mask (padded size)."""
        p = self.config.patch
        nu, nv, h, w, _ = views.shape
        if (nu, nv) != self.config.angular:
            raise ValueError(f"expected {self.config.angular} views, got {(nu, nv)}")
        ph = (p - h % p) % p
        pw = (p - w % p) % p
        if ph or pw:
            flat = views.reshape(nu * nv, h, w, 3).permute(0, 3, 1, 2)
            flat = F.pad(flat, (0, pw, 0, ph), mode="replicate")
            views = flat.permute(0, 2, 3, 1).reshape(nu, nv, h + ph, w + pw, 3)
            frame = F.pad(
                frame.permute(2, 0, 1).unsqueeze(0), (0, pw, 0, ph), mode="replicate"
            )[0].permute(1, 2, 0)
        hp, wp = h + ph, w + pw
        gh, gw = hp // p, wp // p
        sites = gh * gw
        n_views = nu * nv

        # (n_views + 1, sites, p, p, 3): co-located patches across views + frame
        stack = torch.cat([views.reshape(n_views, hp, wp, 3), frame.unsqueeze(0)], dim=0)
        patches = stack.reshape(n_views + 1, gh, p, gw, p, 3).permute(0, 1, 3, 2, 4, 5)
        patches = patches.reshape((n_views + 1) * sites, p, p, 3)
        tokens = self._encode_patches(patches).reshape(n_views + 1, sites, -1)
        tokens = tokens + self.view_embed.unsqueeze(1)
        tokens = tokens.permute(1, 0, 2)  # (sites, n_views + 1, embed)
        for layer in self.attention:
            tokens = layer(tokens)
        tokens = tokens[:, :n_views, :].permute(1, 0, 2)  # drop the frame token

        decoded = self.decode_tokens(tokens, gh, gw)[:, :, :h, :w]
        residual = decoded[:, :3].permute(0, 2, 3, 1).reshape(nu, nv, h, w, 3)
        mask = decoded[:, 3].reshape(nu, nv, h, w)
        return residual, mask


def refine(net: RefinementNet, lf: LightField, frame: Tensor) -> RefinementOutput:
    """Refine a predicted light field against its input frame.

    Produces a per-view residual image and blend mask; the refined output
    is ``mask * prediction + (1 - mask) * residual`` elementwise, so a
    saturated mask passes the prediction through untouched.
    """
    if tuple(frame.shape) != (*lf.spatial_shape, 3):
        raise ValueError("frame size must match the light field views")
    residual, mask = net(lf.views, frame)
    blended = blend_refinement(lf.views, residual, mask)
    return RefinementOutput(LightField(blended), residual, mask)
