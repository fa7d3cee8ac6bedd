"""Per-frame direct fit of the layer stack and displacements.

Instead of a trained network, this optimizer descends the self-supervised
objective directly over one frame's layer stack F and displacement vector
D with Adam, projecting F back into [0, 1] after every step. It exercises
exactly the same loss code as network training and is the workhorse for
desk-scale verification experiments (convergence, ablations, baseline
sweeps).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch
from torch import Tensor

from .lightfield import (
    DisplacementVector,
    LightField,
    TDRepresentation,
    angular_offsets,
    synthesize_views,
)
from .losses import (
    LossReport,
    LossWeights,
    bin_density_loss,
    disocclusion_loss,
    geometric_loss,
    photometric_loss,
    temporal_loss,
    total_self_loss,
    tv_loss,
    weighted_total,
)
from .warping import disocclusion_masks, flow_warp_candidate


class FitDivergenceError(RuntimeError):
    """The fit produced a non-finite loss."""


@dataclass(frozen=True)
class FitConfig:
    """Knobs for :func:`direct_fit`."""

    iterations: int = 2000
    lr: float = 0.05
    n_layers: int = 3
    rank: int = 4
    angular: tuple[int, int] = (5, 5)
    init: str = "uniform"  # "uniform" (0.5 everywhere) | "center" (broadcast input frame)
    init_noise: float = 0.02
    fit_displacements: bool = True
    fixed_displacements: tuple[float, ...] | None = None
    weights: LossWeights = field(
        default_factory=lambda: LossWeights(temp=0.0, occ=0.0, bins=0.0)
    )
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iteration budget must be >= 1")
        if self.lr <= 0:
            raise ValueError("step size must be positive")
        if self.init not in ("uniform", "center"):
            raise ValueError(f"unknown init mode {self.init!r}")


@dataclass
class FitResult:
    rep: TDRepresentation
    displacements: DisplacementVector
    report: LossReport
    trace: list[LossReport]
    best_iteration: int

    def synthesize(self, angular: tuple[int, int]) -> LightField:
        return LightField(synthesize_views(self.rep.layers, self.displacements.values, angular))


def _init_layers(config: FitConfig, frame: Tensor, rng: torch.Generator) -> Tensor:
    h, w = frame.shape[0], frame.shape[1]
    shape = (config.n_layers, config.rank, h, w, 3)
    if config.init == "center":
        layers = torch.ones(shape)
        mid = (config.n_layers - 1) // 2
        layers[mid] = (frame / config.rank).expand(config.rank, h, w, 3).clone()
    else:
        layers = torch.full(shape, 0.5)
    if config.init_noise > 0:
        noise = torch.rand(shape, generator=rng) * 2.0 - 1.0
        layers = layers + config.init_noise * noise
    return layers.clamp(0.0, 1.0)


def _init_displacements(config: FitConfig, disparity: Tensor) -> Tensor:
    if config.fixed_displacements is not None:
        vals = torch.tensor(config.fixed_displacements, dtype=torch.float32)
        if vals.numel() != config.n_layers:
            raise ValueError("fixed displacements length must equal n_layers")
        return vals
    lo, hi = float(disparity.min()), float(disparity.max())
    return torch.linspace(lo, hi, config.n_layers)


def direct_fit(
    frames: tuple[Tensor | None, Tensor, Tensor | None],
    disparity: Tensor,
    config: FitConfig,
    provider=None,
    frame_index: int = 1,
) -> FitResult:
    """Fit (F, D) for one frame by minimizing the weighted self-supervised loss.

    Args:
        frames: ``(prev, cur, next)`` images; ``prev``/``next`` may be None
            when the occlusion and temporal weights are zero.
        disparity: ``(H, W)`` disparity map for the current frame.
        config: optimization settings; terms with zero weight are skipped.
        provider: depth/flow provider, required for the temporal and
            occlusion terms (flows are taken between ``frame_index`` and
            its neighbors).
        frame_index: absolute index of ``cur`` in the provider's timeline.

    Returns:
        The best-loss iterate (layers sorted by ascending displacement),
        its report, and the full per-iteration report trace.
    """
    prev, cur, nxt = frames
    weights = config.weights
    us = angular_offsets(config.angular[0])
    vs = angular_offsets(config.angular[1])
    t = frame_index

    flow_to_next = None
    if weights.temp > 0:
        if provider is None or nxt is None:
            raise ValueError("temporal term needs the next frame and a provider")
        flow_to_next = provider.flow((t, 0, 0), (t + 1, 0, 0))

    cand_prev = cand_next = holes = None
    if weights.occ > 0:
        if provider is None or prev is None or nxt is None:
            raise ValueError("occlusion term needs both neighbor frames and a provider")
        holes = disocclusion_masks(cur, disparity, us, vs)
        with torch.no_grad():
            shape = (len(us), len(vs), *cur.shape)
            cand_prev = torch.zeros(shape)
            cand_next = torch.zeros(shape)
            for iu, u in enumerate(us):
                for iv, v in enumerate(vs):
                    cand_prev[iu, iv] = flow_warp_candidate(
                        prev, provider.flow((t - 1, 0, 0), (t, int(u), int(v))))
                    cand_next[iu, iv] = flow_warp_candidate(
                        nxt, provider.flow((t + 1, 0, 0), (t, int(u), int(v))))

    rng = torch.Generator().manual_seed(config.seed)
    layers = _init_layers(config, cur, rng).requires_grad_(True)
    disp = _init_displacements(config, disparity).requires_grad_(config.fit_displacements)
    params = [layers] + ([disp] if config.fit_displacements else [])
    opt = torch.optim.Adam(params, lr=config.lr)

    trace: list[LossReport] = []
    best_loss = float("inf")
    best_iter = 0
    best_layers = layers.detach().clone()
    best_disp = disp.detach().clone()

    for it in range(config.iterations):
        terms: dict[str, Tensor] = {}
        lf = LightField(synthesize_views(layers, disp, config.angular))
        if weights.photo > 0:
            terms["photo"] = photometric_loss(lf, cur)
        if weights.geo > 0:
            terms["geo"] = geometric_loss(lf, cur, disparity)
        if weights.temp > 0:
            terms["temp"] = temporal_loss(lf, nxt, disparity, flow_to_next)
        if weights.occ > 0:
            terms["occ"] = disocclusion_loss(lf, cand_prev, cand_next, holes)
        if weights.bins > 0:
            terms["bins"] = bin_density_loss(disp, disparity)
        if weights.tv > 0:
            terms["tv"] = tv_loss(lf)

        report = total_self_loss({k: float(v.detach()) for k, v in terms.items()}, weights)
        trace.append(report)
        if not np.isfinite(report.total):
            raise FitDivergenceError(
                f"non-finite loss at iteration {it}: {report.as_dict()}"
            )
        if report.total < best_loss:
            best_loss = report.total
            best_iter = it
            best_layers = layers.detach().clone()
            best_disp = disp.detach().clone()
        if not terms:
            continue  # nothing to optimize

        total = weighted_total(terms, weights)
        opt.zero_grad()
        total.backward()
        opt.step()
        with torch.no_grad():
            layers.clamp_(0.0, 1.0)

    order = torch.argsort(best_disp)
    final_report = replace(trace[best_iter]) if trace else LossReport()
    return FitResult(
        rep=TDRepresentation(best_layers[order]),
        displacements=DisplacementVector(best_disp[order]),
        report=final_report,
        trace=trace,
        best_iteration=best_iter,
    )
