"""Command-line surface.

Subcommands cover the whole workflow: synthetic scene generation, per-frame
direct fitting, the two training phases, monocular-to-LF synthesis with a
trained checkpoint, evaluation, the ablation ladder, the variable-baseline
sweep, and refocus / EPI renders. All stochastic behavior is fixed by
``--seed``; every run logs its resolved configuration next to its outputs.
The ``MONOLF_OUT_DIR`` environment variable overrides the default output
directory of any subcommand.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from . import lfio
from .experiments import (
    MetricReport,
    emit_report,
    evaluate_against_truth,
    fit_scene_frame,
    run_ablation,
    variable_baseline_experiment,
    write_report_csv,
)
from .fitting import FitConfig, FitDivergenceError
from .lightfield import LightField, extract_epi, refocus, synthesize_views
from .losses import LossWeights
from .metrics import measure_epi_slope
from .networks import displacement_forward, refine, synth_forward
from .providers import (
    FileProvider,
    FileProviderSpec,
    ProviderError,
    SceneOracleProvider,
    normalize_disparity,
)
from .scenes import (
    SceneLayer,
    SceneTruth,
    SyntheticSceneSpec,
    generate_scene,
)
from .training import TrainConfig, load_checkpoint, restore_networks, save_config, train_refinement, train_selfsup

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_MISSING_INPUT = 3
EXIT_PROVIDER = 4

_EPILOG = """exit codes:
  0  success
  1  runtime failure (fit divergence, invalid data)
  2  usage error (unknown flag or subcommand)
  3  missing input file or directory
  4  depth/flow provider failure
"""


def _out_dir(args, default: str) -> Path:
    env = os.environ.get("MONOLF_OUT_DIR")
    base = Path(args.out) if args.out else (Path(env) if env else Path(default))
    base.mkdir(parents=True, exist_ok=True)
    return base


def _seed_everything(seed: int) -> None:
    np.random.seed(seed)
    torch.manual_seed(seed)


def _lambda_weights(args) -> LossWeights:
    return LossWeights(
        photo=args.lambda_photo, geo=args.lambda_geo, temp=args.lambda_temp,
        occ=args.lambda_occ, bins=args.lambda_bins, tv=args.lambda_tv,
    )


def _add_lambda_flags(p: argparse.ArgumentParser, temp=0.5, occ=0.2, bins=0.0, tv=0.0):
    p.add_argument("--lambda-photo", type=float, default=1.0)
    p.add_argument("--lambda-geo", type=float, default=1.0)
    p.add_argument("--lambda-temp", type=float, default=temp)
    p.add_argument("--lambda-occ", type=float, default=occ)
    p.add_argument("--lambda-bins", type=float, default=bins)
    p.add_argument("--lambda-tv", type=float, default=tv)


def _scene_spec_from_args(args) -> SyntheticSceneSpec:
    disparities = [float(x) for x in args.disparity.split(",")]
    if len(disparities) != args.k:
        raise SystemExit(f"--disparity needs {args.k} comma-separated values")
    velocities = [(0.0, 0.0)] * args.k
    if args.velocity:
        parts = [float(x) for x in args.velocity.split(",")]
        if len(parts) != 2 * args.k:
            raise SystemExit("--velocity needs 2 values (vx,vy) per layer")
        velocities = [(parts[2 * i], parts[2 * i + 1]) for i in range(args.k)]
    h = w = args.size
    layers = []
    for i, (delta, vel) in enumerate(zip(sorted(disparities), velocities)):
        if i == 0:
            layers.append(SceneLayer(disparity=delta, velocity=vel))
        else:
            frac = 0.2 + 0.5 * i / args.k
            side = (0.9 - 0.25 * i) * min(h, w) / 2
            cx = w * frac
            cy = h * (1.0 - frac)
            layers.append(SceneLayer(
                disparity=delta, velocity=vel, silhouette="rect",
                rect=(cx - side / 2, cy - side / 2, cx + side / 2, cy + side / 2),
                noise_cells=5.0 + i,
            ))
    return SyntheticSceneSpec(
        layers=tuple(layers), size=(h, w), angular=(args.angular, args.angular),
        frames=args.frames, seed=args.seed,
    )


def _spec_to_config(spec: SyntheticSceneSpec) -> dict:
    cfg = {
        "k": len(spec.layers), "size": spec.size[0], "angular": spec.angular[0],
        "frames": spec.frames, "seed": spec.seed,
    }
    for i, layer in enumerate(spec.layers):
        cfg[f"layer{i}.disparity"] = layer.disparity
        cfg[f"layer{i}.velocity"] = f"{layer.velocity[0]},{layer.velocity[1]}"
        cfg[f"layer{i}.silhouette"] = layer.silhouette
        if layer.silhouette == "rect":
            cfg[f"layer{i}.rect"] = ",".join(f"{v:g}" for v in layer.rect)
        cfg[f"layer{i}.noise_cells"] = layer.noise_cells
    return cfg


def load_scene_spec(path: str | Path) -> SyntheticSceneSpec:
    """Rebuild a scene spec from the config file written by ``gen-scene``."""
    from .training import load_config

    cfg = load_config(path)
    layers = []
    for i in range(int(cfg["k"])):
        vel = tuple(float(x) for x in cfg[f"layer{i}.velocity"].split(","))
        kind = cfg.get(f"layer{i}.silhouette", "full")
        rect = (0.0, 0.0, 0.0, 0.0)
        if kind == "rect":
            rect = tuple(float(x) for x in cfg[f"layer{i}.rect"].split(","))
        layers.append(SceneLayer(
            disparity=float(cfg[f"layer{i}.disparity"]), velocity=vel,
            silhouette=kind, rect=rect,
            noise_cells=float(cfg.get(f"layer{i}.noise_cells", 8.0)),
        ))
    size = int(cfg["size"])
    ang = int(cfg["angular"])
    return SyntheticSceneSpec(
        layers=tuple(layers), size=(size, size), angular=(ang, ang),
        frames=int(cfg["frames"]), seed=int(cfg["seed"]),
    )


def _cmd_gen_scene(args) -> int:
    out = _out_dir(args, "out/scene")
    spec = _scene_spec_from_args(args)
    truth = generate_scene(spec)
    save_config(out / "scene_spec.txt", _spec_to_config(spec))
    us, vs = truth.offsets_u, truth.offsets_v
    for t in range(spec.frames):
        lfio.save_lf_grid(truth.lf_frames[t], out / f"lf_{t:03d}.png")
        lfio.save_image(out / f"center_{t:03d}.png", truth.center_frames[t])
        z, params = normalize_disparity(truth.disparity[t])
        lfio.write_pfm(out / f"depth_{t:03d}.pfm", z)
        save_config(out / f"depth_{t:03d}.affine.txt", {"a": params.a, "b": params.b})
        if t + 1 < spec.frames:
            lfio.write_flo(out / f"flow_{t:03d}+0+0_to_{t + 1:03d}+0+0.flo",
                           truth.flow_to_next(t))
        for t_adj in (t - 1, t + 1):
            if not 0 <= t_adj < spec.frames:
                continue
            for u in us:
                for v in vs:
                    flow = truth.candidate_flow(t_adj, t, int(u), int(v))
                    name = f"flow_{t_adj:03d}+0+0_to_{t:03d}{int(u):+d}{int(v):+d}.flo"
                    lfio.write_flo(out / name, flow)
    print(f"scene written to {out}")
    return EXIT_OK


def _load_scene(args) -> SceneTruth:
    spec_path = Path(args.scene) / "scene_spec.txt"
    if not spec_path.exists():
        raise FileNotFoundError(f"no scene_spec.txt under {args.scene}")
    return generate_scene(load_scene_spec(spec_path))


def _cmd_fit(args) -> int:
    out = _out_dir(args, "out/fit")
    truth = _load_scene(args)
    weights = _lambda_weights(args)
    config = FitConfig(
        iterations=args.iterations, lr=args.lr, rank=args.rank,
        angular=truth.spec.angular, weights=weights, seed=args.seed,
        fit_displacements=not args.fixed_displacements,
    )
    frame = min(1, truth.spec.frames - 1)
    result = fit_scene_frame(truth, config, frame)
    lf = result.synthesize(config.angular)
    lfio.save_lf_grid(lf, out / "fitted_lf.png")
    with open(out / "loss_log.txt", "w") as f:
        for i, rep in enumerate(result.trace):
            f.write(rep.log_record(i) + "\n")
    save_config(out / "fit_config.txt", {
        "iterations": config.iterations, "lr": config.lr, "rank": config.rank,
        "seed": config.seed, **{f"lambda_{k}": v for k, v in weights.as_dict().items()},
        "displacements": ",".join(f"{d:.5g}" for d in result.displacements.values.tolist()),
    })
    report = evaluate_against_truth(lf, truth, frame, "fit", "direct", args.seed)
    write_report_csv(out / "report.csv", [report])
    print(f"fit: PSNR {report.psnr_db:.2f} dB, SSIM {report.ssim:.4f} -> {out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    out = _out_dir(args, "out/train")
    config = TrainConfig(
        phase="selfsup", epochs=args.epochs, lr=args.lr, crop=(args.crop, args.crop),
        sequence_length=args.sequence_length, angular=(args.angular, args.angular),
        weights=_lambda_weights(args), seed=args.seed,
    )
    from .networks import SynthesisConfig

    synth_cfg = SynthesisConfig(base_channels=args.base_channels, rank=args.rank)
    ckpt = train_selfsup(args.manifest, config, out, synth_cfg)
    print(f"checkpoint: {ckpt}")
    return EXIT_OK


def _cmd_train_refine(args) -> int:
    out = _out_dir(args, "out/train_refine")
    config = TrainConfig(
        phase="refine", epochs=args.epochs, lr=args.lr,
        angular=(args.angular, args.angular), seed=args.seed,
    )
    from .networks import RefinementConfig

    ref_cfg = RefinementConfig(patch=args.patch, angular=config.angular,
                               embed=32, depth=1)
    ckpt = train_refinement(args.manifest, args.checkpoint, config, out, ref_cfg)
    print(f"checkpoint: {ckpt}")
    return EXIT_OK


def _cmd_synthesize(args) -> int:
    out = _out_dir(args, "out/synthesize")
    frame_paths = sorted(Path(args.video).glob("*.png"))
    if not frame_paths:
        raise FileNotFoundError(f"no frames (*.png) under {args.video}")
    frames = [lfio.load_image(p) for p in frame_paths]

    if args.provider == "files":
        provider = FileProvider(FileProviderSpec(
            depth_dir=args.depth_dir or args.video,
            flow_dir=args.flow_dir or args.video,
        ))
    else:
        if not args.scene:
            raise SystemExit("--provider oracle needs --scene pointing at a gen-scene dir")
        provider = SceneOracleProvider(generate_scene(
            load_scene_spec(Path(args.scene) / "scene_spec.txt")))

    state = restore_networks(load_checkpoint(args.checkpoint)) if args.checkpoint else None
    if state is None:
        from .networks import DisplacementNet, SynthesisConfig, SynthesisNet

        torch.manual_seed(args.seed)
        cfg = SynthesisConfig(base_channels=8, rank=args.rank)
        state_nets = (SynthesisNet(cfg), DisplacementNet(n_layers=cfg.n_layers))
    else:
        state_nets = (state.synthesis, state.displacement)
    synth_net, disp_net = state_nets
    synth_net.eval()
    disp_net.eval()

    rec_state = None
    angular = (args.angular, args.angular)
    for t in range(1, len(frames) - 1):
        prev, cur, nxt = frames[t - 1], frames[t], frames[t + 1]
        z = provider.depth(t)
        disparity = args.a * z + args.b
        with torch.no_grad():
            rep, rec_state = synth_forward(synth_net, prev, cur, nxt, disparity, rec_state)
            disp_vec = displacement_forward(disp_net, prev, cur, nxt, disparity)
            views = synthesize_views(rep.layers, disp_vec.values, angular)
            lf = LightField(views)
            if state is not None and state.refinement is not None and not args.no_refine:
                lf = refine(state.refinement, lf, cur).refined
        lfio.save_lf_grid(lf, out / f"lf_{t:03d}.png")
    print(f"synthesized {len(frames) - 2} LF frames -> {out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    out = _out_dir(args, "out/eval")
    truth = _load_scene(args)
    angular = truth.spec.angular
    reports = []
    for t in range(truth.spec.frames):
        pred_path = Path(args.pred) / f"lf_{t:03d}.png"
        if not pred_path.exists():
            continue
        pred = lfio.load_lf_grid(pred_path, angular)
        reports.append(evaluate_against_truth(pred, truth, t, "eval", args.tag, args.seed))
    if not reports:
        raise FileNotFoundError(f"no lf_*.png predictions under {args.pred}")
    write_report_csv(out / "report.csv", reports)
    mean_psnr = float(np.mean([r.psnr_db for r in reports]))
    print(f"eval: {len(reports)} frames, mean PSNR {mean_psnr:.2f} dB -> {out}")
    return EXIT_OK


def _cmd_ablate(args) -> int:
    out = _out_dir(args, "out/ablation")
    scenes = []
    for seed in range(args.seeds):
        from .scenes import two_plane_scene

        scenes.append(two_plane_scene(
            fg_velocity=(2.0, 0.0), size=(args.size, args.size),
            angular=(args.angular, args.angular), seed=seed,
        ))
    toggles = tuple(args.toggles.split(",")) if args.toggles else ()
    config = FitConfig(
        iterations=args.iterations, angular=(args.angular, args.angular),
        weights=_lambda_weights(args), seed=args.seed,
    )
    reports = run_ablation(scenes, toggles, config)
    emit_report(reports, out)
    for rep in reports:
        print(f"{rep.scene:24s} {rep.variant:14s} PSNR {rep.psnr_db:6.2f}  SSIM {rep.ssim:.4f}")
    return EXIT_OK


def _cmd_baseline_sweep(args) -> int:
    out = _out_dir(args, "out/baseline")
    scales = tuple(float(s) for s in args.scale.split(","))
    from .scenes import single_plane_scene

    def make_scene(s):
        return single_plane_scene(
            disparity=args.disparity * s, size=(args.size, args.size),
            angular=(args.angular, args.angular), frames=1, seed=args.seed,
        )

    config = FitConfig(
        iterations=args.iterations, angular=(args.angular, args.angular),
        weights=LossWeights(photo=1, geo=1, temp=0, occ=0, bins=0, tv=0),
        seed=args.seed,
    )
    ratios = variable_baseline_experiment(make_scene, scales, config, mode=args.mode)
    with open(out / "slopes.csv", "w") as f:
        f.write("scale,slope_ratio\n")
        for s, r in ratios.items():
            f.write(f"{s},{r:.6g}\n")
    for s, r in ratios.items():
        print(f"scale {s:4.2f}x -> slope ratio {r:.3f}")
    return EXIT_OK


def _cmd_refocus(args) -> int:
    out = _out_dir(args, "out/refocus")
    lf = lfio.load_lf_grid(args.lf, (args.angular, args.angular))
    img = refocus(lf, args.alpha)
    path = out / f"refocus_alpha{args.alpha:+.2f}.png"
    lfio.save_image(path, img.clamp(0.0, 1.0))
    print(f"refocused at alpha={args.alpha} -> {path}")
    return EXIT_OK


def _cmd_epi(args) -> int:
    out = _out_dir(args, "out/epi")
    lf = lfio.load_lf_grid(args.lf, (args.angular, args.angular))
    epi = extract_epi(lf, args.axis, args.row)
    scale = max(1, 96 // epi.shape[0])
    path = out / f"epi_{args.axis}_{args.row:03d}.png"
    lfio.save_image(path, epi.repeat_interleave(scale, dim=0))
    slope = measure_epi_slope(epi)
    print(f"EPI row {args.row}: fitted slope {slope:.3f} -> {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="monolf",
        description="Self-supervised light-field video synthesis, desk scale.",
        epilog=_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", type=str, default=None,
                       help="output directory (default under ./out, or $MONOLF_OUT_DIR)")

    p = sub.add_parser("gen-scene", help="generate a synthetic scene with ground truth")
    common(p)
    p.add_argument("--k", type=int, default=1, help="number of layers")
    p.add_argument("--disparity", type=str, default="0.0",
                   help="comma-separated disparity per layer")
    p.add_argument("--velocity", type=str, default=None,
                   help="comma-separated vx,vy per layer")
    p.add_argument("--frames", type=int, default=3)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--angular", type=int, default=5)
    p.set_defaults(func=_cmd_gen_scene)

    p = sub.add_parser("fit", help="direct-fit one frame of a generated scene")
    common(p)
    p.add_argument("--scene", type=str, required=True, help="gen-scene output dir")
    p.add_argument("--iterations", type=int, default=600)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--rank", type=int, default=4)
    p.add_argument("--fixed-displacements", action="store_true",
                   help="keep the uniform integer layer spacing")
    _add_lambda_flags(p)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("train", help="self-supervised training on a manifest")
    common(p)
    p.add_argument("--manifest", type=str, required=True)
    p.add_argument("--epochs", type=int, default=2)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--crop", type=int, default=48)
    p.add_argument("--sequence-length", type=int, default=4)
    p.add_argument("--angular", type=int, default=3)
    p.add_argument("--base-channels", type=int, default=8)
    p.add_argument("--rank", type=int, default=4)
    _add_lambda_flags(p, bins=2.0, tv=0.1)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("train-refine", help="supervised refinement with frozen backbone")
    common(p)
    p.add_argument("--manifest", type=str, required=True)
    p.add_argument("--checkpoint", type=str, required=True, help="selfsup checkpoint")
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--angular", type=int, default=3)
    p.add_argument("--patch", type=int, default=16)
    p.set_defaults(func=_cmd_train_refine)

    p = sub.add_parser("synthesize", help="monocular video -> LF grid PNG per frame")
    common(p)
    p.add_argument("--video", type=str, required=True, help="directory of frame PNGs")
    p.add_argument("--provider", choices=("oracle", "files"), default="files")
    p.add_argument("--scene", type=str, default=None, help="scene dir for oracle provider")
    p.add_argument("--depth-dir", type=str, default=None)
    p.add_argument("--flow-dir", type=str, default=None)
    p.add_argument("--checkpoint", type=str, default=None)
    p.add_argument("--no-refine", action="store_true")
    p.add_argument("--angular", type=int, default=3)
    p.add_argument("--rank", type=int, default=4)
    p.add_argument("--a", type=float, default=1.2, help="depth-to-disparity scale")
    p.add_argument("--b", type=float, default=0.3, help="depth-to-disparity shift")
    p.set_defaults(func=_cmd_synthesize)

    p = sub.add_parser("eval", help="PSNR/SSIM/E_temp of predictions vs scene truth")
    common(p)
    p.add_argument("--scene", type=str, required=True)
    p.add_argument("--pred", type=str, required=True, help="directory of lf_*.png")
    p.add_argument("--tag", type=str, default="prediction")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="base / +occ / +adpt / proposed ladder")
    common(p)
    p.add_argument("--toggles", type=str, default="occ,adaptive,refine")
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--iterations", type=int, default=300)
    p.add_argument("--size", type=int, default=48)
    p.add_argument("--angular", type=int, default=3)
    _add_lambda_flags(p)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("baseline-sweep", help="EPI slope vs disparity scale")
    common(p)
    p.add_argument("--scale", type=str, default="1,1.5,2,2.5")
    p.add_argument("--disparity", type=float, default=0.8)
    p.add_argument("--iterations", type=int, default=400)
    p.add_argument("--size", type=int, default=48)
    p.add_argument("--angular", type=int, default=5)
    p.add_argument("--mode", choices=("fit", "synthesize"), default="fit")
    p.set_defaults(func=_cmd_baseline_sweep)

    p = sub.add_parser("refocus", help="shift-and-add refocus of an LF grid PNG")
    common(p)
    p.add_argument("--lf", type=str, required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--angular", type=int, default=5)
    p.set_defaults(func=_cmd_refocus)

    p = sub.add_parser("epi", help="extract an EPI strip and fit its slope")
    common(p)
    p.add_argument("--lf", type=str, required=True)
    p.add_argument("--row", type=int, required=True)
    p.add_argument("--axis", choices=("horizontal", "vertical"), default="horizontal")
    p.add_argument("--angular", type=int, default=5)
    p.set_defaults(func=_cmd_epi)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _seed_everything(args.seed)
    try:
        return args.func(args)
    except ProviderError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except (FitDivergenceError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
