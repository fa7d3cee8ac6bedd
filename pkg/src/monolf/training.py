"""Two-phase network training and checkpointing.

Phase one trains the synthesis and displacement networks with the
self-supervised objective on simulated light-field videos (AdamW,
plateau-halving schedule). Phase two freezes those weights and trains only
the refinement block with a supervised L1 loss against ground-truth light
fields, using a fixed depth-to-disparity affine.

Dataset samples come from a manifest of ``lf_path,T,seed`` lines; each
light field needs a sibling ``<stem>.pfm`` file holding the relative depth
map of its center view. Checkpoints are self-describing torch archives
(config echo, weights, optimizer/scheduler state, RNG state, step counter)
written atomically.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import Tensor

from .lfio import read_manifest, read_pfm
from .lightfield import LightField, synthesize_views
from .losses import (
    LossReport,
    LossWeights,
    bin_density_loss,
    disocclusion_loss,
    geometric_loss,
    photometric_loss,
    refinement_loss,
    temporal_loss,
    total_self_loss,
    tv_loss,
    weighted_total,
)
from .networks import (
    DisplacementNet,
    RefinementConfig,
    RefinementNet,
    SynthesisConfig,
    SynthesisNet,
    displacement_forward,
    refine,
    synth_forward,
)
from .providers import PanningVideoProvider
from .scenes import SimulatedVideo, simulate_lf_video
from .warping import AffineDepthParams, disocclusion_masks, flow_warp_candidate
from . import lfio


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for both training phases.

    Self-supervised defaults mirror the full-scale recipe (AdamW, lr 1e-4,
    weight decay 1e-3, 25 epochs, plateau patience 4, a sampled from a
    discrete set and b from an interval); the refinement phase uses lr 1e-3
    and a fixed affine (a, b) = (1.2, 0.3). Desk-scale runs shrink epochs,
    crop, and sequence length, not the structure.
    """

    phase: str = "selfsup"  # "selfsup" | "refine"
    epochs: int = 25
    lr: float = 1e-4
    weight_decay: float = 1e-3
    plateau_patience: int = 4
    plateau_threshold: float = 1e-3
    crop: tuple[int, int] = (176, 264)
    sequence_length: int = 7
    a_choices: tuple[float, ...] = (0.8, 1.6, 2.4, 3.2)
    b_range: tuple[float, float] = (0.2, 0.4)
    fixed_a: float = 1.2
    fixed_b: float = 0.3
    angular: tuple[int, int] = (5, 5)
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0

    def __post_init__(self):
        if self.phase not in ("selfsup", "refine"):
            raise ValueError(f"unknown phase {self.phase!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


CONFIG_KEYS = {
    "n_layers": int, "rank": int, "base_channels": int, "patch_size": int,
    "angular_res": int, "lr": float, "weight_decay": float, "epochs": int,
    "seed": int, "crop_h": int, "crop_w": int, "sequence_length": int,
    "lambda_photo": float, "lambda_geo": float, "lambda_temp": float,
    "lambda_occ": float, "lambda_bins": float, "lambda_tv": float,
    "provider.kind": str, "provider.depth_dir": str, "provider.flow_dir": str,
}


def save_config(path: str | Path, values: dict) -> None:
    """Write a flat key=value config file."""
    lines = [f"{k}={values[k]}" for k in sorted(values)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_config(path: str | Path) -> dict:
    """Read a flat key=value config file, typing known keys."""
    out: dict = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"bad config line {line!r}")
        key, val = line.split("=", 1)
        key, val = key.strip(), val.strip()
        out[key] = CONFIG_KEYS[key](val) if key in CONFIG_KEYS else val
    return out


@dataclass
class TrainState:
    """Everything :func:`train_selfsup` / :func:`train_refinement` checkpoint."""

    synthesis: SynthesisNet
    displacement: DisplacementNet
    refinement: RefinementNet | None = None


def save_checkpoint(path: str | Path, state: TrainState, optimizer, scheduler,
                    config: TrainConfig, step: int, epoch: int,
                    rng: np.random.Generator) -> None:
    """Atomically write a self-describing checkpoint archive."""
    payload = {
        "format": "monolf-checkpoint-v1",
        "config": asdict(config),
        "synthesis_config": asdict(state.synthesis.config),
        "synthesis": state.synthesis.state_dict(),
        "displacement": state.displacement.state_dict(),
        "refinement": state.refinement.state_dict() if state.refinement else None,
        "refinement_config": asdict(state.refinement.config) if state.refinement else None,
        "optimizer": optimizer.state_dict() if optimizer else None,
        "scheduler": scheduler.state_dict() if scheduler else None,
        "step": step,
        "epoch": epoch,
        "rng": rng.bit_generator.state if rng is not None else None,
        "torch_rng": torch.get_rng_state(),
    }
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        torch.save(payload, tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | Path) -> dict:
    payload = torch.load(path, weights_only=False)
    if payload.get("format") != "monolf-checkpoint-v1":
        raise ValueError(f"{path}: not a recognized checkpoint")
    return payload


def restore_networks(payload: dict) -> TrainState:
    """Rebuild networks from a checkpoint payload."""
    synth = SynthesisNet(SynthesisConfig(**payload["synthesis_config"]))
    synth.load_state_dict(payload["synthesis"])
    disp_net = DisplacementNet(n_layers=synth.config.n_layers)
    disp_net.load_state_dict(payload["displacement"])
    refinement = None
    if payload.get("refinement") is not None:
        cfg = payload["refinement_config"]
        cfg["angular"] = tuple(cfg["angular"])
        refinement = RefinementNet(RefinementConfig(**cfg))
        refinement.load_state_dict(payload["refinement"])
    return TrainState(synth, disp_net, refinement)


def _load_sample(entry: tuple[str, int, int], angular: tuple[int, int]):
    """Manifest entry -> (light field, its relative depth map, frames, seed)."""
    lf_path, frames, seed = entry
    depth_path = Path(lf_path).with_suffix(".pfm")
    if not depth_path.exists():
        raise FileNotFoundError(f"missing sibling depth map {depth_path}")
    depth = torch.from_numpy(read_pfm(depth_path).copy())
    lf = lfio.load_lf_grid(lf_path, angular)
    return lf, depth, frames, seed


def _sequence_loss(
    state: TrainState,
    video_frames: Tensor,
    provider: PanningVideoProvider,
    params: AffineDepthParams,
    config: TrainConfig,
) -> tuple[Tensor, LossReport]:
    """Accumulate the weighted self-supervised loss over one frame sequence."""
    weights = config.weights
    total = None
    reports = []
    rec_state = None
    n_frames = video_frames.shape[0]
    if n_frames < 3:
        raise ValueError("self-supervised sequences need at least 3 frames")
    for t in range(1, n_frames - 1):
        prev, cur, nxt = video_frames[t - 1], video_frames[t], video_frames[t + 1]
        disparity = params.a * provider.depth(t) + params.b
        rep, rec_state = synth_forward(state.synthesis, prev, cur, nxt, disparity, rec_state)
        disp_vec = displacement_forward(state.displacement, prev, cur, nxt, disparity)
        lf = LightField(synthesize_views(rep.layers, disp_vec.values, config.angular))

        terms: dict[str, Tensor] = {}
        if weights.photo > 0:
            terms["photo"] = photometric_loss(lf, cur)
        if weights.geo > 0:
            terms["geo"] = geometric_loss(lf, cur, disparity)
        if weights.temp > 0:
            terms["temp"] = temporal_loss(lf, nxt, disparity, provider.flow((t, 0, 0), (t + 1, 0, 0)))
        if weights.occ > 0:
            us, vs = lf.offsets_u, lf.offsets_v
            holes = disocclusion_masks(cur, disparity.detach(), us, vs)
            shape = (len(us), len(vs), *cur.shape)
            cand_prev = torch.zeros(shape)
            cand_next = torch.zeros(shape)
            for iu, u in enumerate(us):
                for iv, v in enumerate(vs):
                    cand_prev[iu, iv] = flow_warp_candidate(
                        prev, provider.flow((t - 1, 0, 0), (t, int(u), int(v))))
                    cand_next[iu, iv] = flow_warp_candidate(
                        nxt, provider.flow((t + 1, 0, 0), (t, int(u), int(v))))
            terms["occ"] = disocclusion_loss(lf, cand_prev, cand_next, holes)
        if weights.bins > 0:
            terms["bins"] = bin_density_loss(disp_vec.values, disparity)
        if weights.tv > 0:
            terms["tv"] = tv_loss(lf)

        frame_total = weighted_total(terms, weights)
        total = frame_total if total is None else total + frame_total
        reports.append(total_self_loss({k: float(v.detach()) for k, v in terms.items()}, weights))

    mean_total = total / max(1, n_frames - 2)
    mean_report = LossReport(**{
        k: float(np.mean([getattr(r, k) for r in reports]))
        for k in ("photo", "geo", "temp", "occ", "bins", "tv", "total")
    })
    return mean_total, mean_report


def _prepare_video(entry, config: TrainConfig, rng: np.random.Generator):
    """Load one manifest sample and cut a random-cropped simulated video from it."""
    lf, depth, frames, seed = _load_sample(entry, config.angular)
    video = simulate_lf_video(lf, frames=min(frames, config.sequence_length), seed=seed)
    h, w = video.frames.shape[1], video.frames.shape[2]
    ch, cw = min(config.crop[0], h), min(config.crop[1], w)
    oy = int(rng.integers(0, h - ch + 1))
    ox = int(rng.integers(0, w - cw + 1))
    cropped = video.frames[:, oy:oy + ch, ox:ox + cw, :]
    offsets = video.offsets.copy()
    offsets[:, 0] += ox
    offsets[:, 1] += oy
    sub = SimulatedVideo(lf_frames=[], frames=cropped, offsets=offsets,
                         velocity=video.velocity)
    return cropped, PanningVideoProvider(sub, depth)


def train_selfsup(
    manifest_path: str | Path,
    config: TrainConfig,
    out_dir: str | Path,
    synthesis_config: SynthesisConfig = SynthesisConfig(),
    resume_from: str | Path | None = None,
) -> Path:
    """Self-supervised training of the synthesis and displacement networks.

    Sequences reset the recurrent state, accumulate the weighted loss over
    their frames, and take one AdamW step each. The last 10% of the
    manifest (at least one sample) is held out as the validation split
    driving the plateau-halving schedule. A checkpoint is written after
    every epoch; the path of the final one is returned.
    """
    entries = read_manifest(manifest_path)
    if not entries:
        raise ValueError(f"empty dataset manifest {manifest_path}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    n_val = max(1, len(entries) // 10) if len(entries) > 1 else 0
    train_entries = entries[:-n_val] if n_val else entries
    val_entries = entries[-n_val:] if n_val else entries

    step = 0
    start_epoch = 0
    if resume_from is not None:
        payload = load_checkpoint(resume_from)
        state = restore_networks(payload)
        rng = np.random.default_rng(config.seed)
        rng.bit_generator.state = payload["rng"]
        torch.set_rng_state(payload["torch_rng"])
        params = list(state.synthesis.parameters()) + list(state.displacement.parameters())
        optimizer = torch.optim.AdamW(params, lr=config.lr, weight_decay=config.weight_decay)
        optimizer.load_state_dict(payload["optimizer"])
        scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
            optimizer, factor=0.5, patience=config.plateau_patience,
            threshold=config.plateau_threshold, threshold_mode="rel")
        scheduler.load_state_dict(payload["scheduler"])
        step = payload["step"]
        start_epoch = payload["epoch"] + 1
    else:
        torch.manual_seed(config.seed)
        state = TrainState(SynthesisNet(synthesis_config),
                           DisplacementNet(n_layers=synthesis_config.n_layers))
        rng = np.random.default_rng(config.seed)
        params = list(state.synthesis.parameters()) + list(state.displacement.parameters())
        optimizer = torch.optim.AdamW(params, lr=config.lr, weight_decay=config.weight_decay)
        scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
            optimizer, factor=0.5, patience=config.plateau_patience,
            threshold=config.plateau_threshold, threshold_mode="rel")

    log_path = out_dir / "train_log.txt"
    ckpt_path = out_dir / "checkpoint_last.pt"
    with open(log_path, "a") as log:
        for epoch in range(start_epoch, config.epochs):
            state.synthesis.train()
            state.displacement.train()
            order = rng.permutation(len(train_entries))
            for idx in order:
                frames, provider = _prepare_video(train_entries[idx], config, rng)
                a = float(rng.choice(config.a_choices))
                b = float(rng.uniform(*config.b_range))
                loss, report = _sequence_loss(state, frames, provider,
                                              AffineDepthParams(a, b), config)
                if not np.isfinite(report.total):
                    raise RuntimeError(f"non-finite training loss at step {step}")
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                log.write(report.log_record(step) + "\n")
                step += 1

            state.synthesis.eval()
            state.displacement.eval()
            with torch.no_grad():
                val_losses = []
                for entry in val_entries:
                    frames, provider = _prepare_video(entry, config,
                                                      np.random.default_rng(entry[2]))
                    _, report = _sequence_loss(
                        state, frames, provider,
                        AffineDepthParams(config.fixed_a, config.fixed_b), config)
                    val_losses.append(report.total)
            scheduler.step(float(np.mean(val_losses)))
            save_checkpoint(ckpt_path, state, optimizer, scheduler, config,
                            step, epoch, rng)
    return ckpt_path


def train_refinement(
    manifest_path: str | Path,
    backbone_checkpoint: str | Path,
    config: TrainConfig,
    out_dir: str | Path,
    refinement_config: RefinementConfig | None = None,
) -> Path:
    """Supervised refinement training with a bit-frozen backbone.

    Every manifest light field provides a supervision pair: the backbone
    synthesizes a prediction from the LF's center view (repeated as the
    three input frames, disparity from the fixed affine), and the
    refinement block is trained with L1 against the ground-truth LF. The
    synthesis and displacement weights are frozen and never stepped.
    """
    entries = read_manifest(manifest_path)
    if not entries:
        raise ValueError(f"empty dataset manifest {manifest_path}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    payload = load_checkpoint(backbone_checkpoint)
    state = restore_networks(payload)
    state.synthesis.eval()
    state.displacement.eval()
    for p in state.synthesis.parameters():
        p.requires_grad_(False)
    for p in state.displacement.parameters():
        p.requires_grad_(False)

    torch.manual_seed(config.seed)
    ref_cfg = refinement_config or RefinementConfig(angular=config.angular)
    refinement = RefinementNet(ref_cfg)
    state.refinement = refinement
    optimizer = torch.optim.AdamW(refinement.parameters(), lr=config.lr,
                                  weight_decay=config.weight_decay)
    scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer, factor=0.5, patience=config.plateau_patience,
        threshold=config.plateau_threshold, threshold_mode="rel")
    rng = np.random.default_rng(config.seed)
    params = AffineDepthParams(config.fixed_a, config.fixed_b)

    step = 0
    log_path = out_dir / "refine_log.txt"
    ckpt_path = out_dir / "checkpoint_refine.pt"
    with open(log_path, "a") as log:
        for epoch in range(config.epochs):
            refinement.train()
            for entry in entries:
                lf_gt, prediction, frame = _backbone_prediction(state, entry, params, config)
                out = refine(refinement, prediction, frame)
                loss = refinement_loss(out.refined, lf_gt)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                log.write(f"step={step} ref={float(loss.detach()):.8g}\n")
                step += 1
            scheduler.step(float(loss.detach()))
            save_checkpoint(ckpt_path, state, optimizer, scheduler, config,
                            step, epoch, rng)
    return ckpt_path


def _backbone_prediction(state: TrainState, entry, params: AffineDepthParams,
                         config: TrainConfig):
    """Frozen-backbone LF prediction for one manifest light field."""
    lf_gt, depth, _, _ = _load_sample(entry, config.angular)
    frame = lf_gt.view(0, 0)
    disparity = params.a * depth + params.b
    with torch.no_grad():
        rep, _ = synth_forward(state.synthesis, frame, frame, frame, disparity, None)
        disp_vec = displacement_forward(state.displacement, frame, frame, frame, disparity)
        views = synthesize_views(rep.layers, disp_vec.values, config.angular)
    return lf_gt, LightField(views), frame
