"""Command-line interface.

Subcommands cover each stage (scan, ssm, mecm, synth, metrics), the
runtime check suites, and an end-to-end toy demo.  Exit codes: 0 on
success, 1 when a value fails validation or a check suite fails, 2 on
usage or file-format errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .checks import SUITES, run_suites
from .config import RunConfig, load_config
from .errors import FormatError, ValidationError
from .imaging import (basename_pair, blend, load_image, psnr, save_image, ssim,
                      write_metrics_csv)
from .loss import appearance_loss, load_loss, memory_matching_loss, total_loss
from .mecm import (init_expert, init_gate, load_experts, load_gate,
                   mecm_forward, save_experts, save_gate)
from .scan import (ProximityMap, ScanOrder, apply_order, da_gscan, da_rscan,
                   partition_regions, restore_order, reverse_order)
from .ssm import (SsmParams, depth_features_from_proximity, ds_scan,
                  gamma_from_proximity, random_params, realign_pe,
                  spatial_positional_encoding)
from .tensorfile import load_tensor, save_tensor


def _resolve_seed(flag_value, config_payload: dict | None = None) -> int:
    """Seed precedence: --seed flag, config file, DMD_SEED env, then 0."""
    if flag_value is not None:
        return int(flag_value)
    if config_payload and "seed" in config_payload:
        return int(config_payload["seed"])
    env = os.environ.get("DMD_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise FormatError(f"DMD_SEED must be an integer, got {env!r}") from exc
    return 0


def _load_proximity(path) -> ProximityMap:
    values = load_image(path)
    if values.ndim != 2:
        raise ValidationError(f"proximity map must be grayscale (P5), got shape {values.shape}")
    return ProximityMap(values=values, is_constant=bool(values.min() == values.max()))


def _hue_wheel(h: np.ndarray) -> np.ndarray:
    """Fully saturated hue -> RGB, h in [0, 1]."""
    h6 = (h % 1.0) * 6.0
    sector = np.floor(h6).astype(np.int64) % 6
    x = 1.0 - np.abs(h6 % 2.0 - 1.0)
    conds = [sector == s for s in range(6)]
    r = np.select(conds, [np.ones_like(x), x, np.zeros_like(x), np.zeros_like(x), x,
                          np.ones_like(x)])
    g = np.select(conds, [x, np.ones_like(x), np.ones_like(x), x, np.zeros_like(x),
                          np.zeros_like(x)])
    b = np.select(conds, [np.zeros_like(x), np.zeros_like(x), x, np.ones_like(x),
                          np.ones_like(x), x])
    return np.stack([r, g, b], axis=-1)


def order_to_image(order: ScanOrder) -> np.ndarray:
    """Render visit ranks as a red (early) to blue (late) hue ramp."""
    ranks = order.ranks().reshape(order.height, order.width)
    denom = max(len(order) - 1, 1)
    return _hue_wheel((2.0 / 3.0) * ranks / denom)


def _load_order(path, height: int, width: int) -> ScanOrder:
    forward = load_tensor(path)
    if forward.ndim != 1:
        raise ValidationError(f"scan order tensor must be rank 1, got rank {forward.ndim}")
    return ScanOrder(forward=forward.astype(np.int64), height=height, width=width,
                     provenance="loaded")


def _load_params(path) -> SsmParams:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"params file is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise FormatError("params file must hold a JSON object")
    return SsmParams.from_dict(payload)


# ---------------------------------------------------------------------------

def cmd_scan(args) -> int:
    proximity = _load_proximity(args.proximity)
    if args.mode == "rscan":
        regions = partition_regions(proximity, bins=args.bins,
                                    min_area_frac=args.min_area_frac)
        order = da_rscan(proximity, regions)
        if args.regions_out:
            save_tensor(args.regions_out, regions.labels.astype(np.uint32))
    else:
        order = da_gscan(proximity)
    if args.reverse:
        order = reverse_order(order)
    save_tensor(args.out, order.forward.astype(np.uint32))
    if args.viz:
        save_image(order_to_image(order), args.viz)
    print(f"{order.provenance}: {len(order)} pixels "
          f"({order.height}x{order.width}) -> {args.out}")
    return 0


def cmd_ssm(args) -> int:
    features = load_tensor(args.input).astype(np.float64)
    if features.ndim != 3:
        raise ValidationError(f"features tensor must be (C, H, W), got rank {features.ndim}")
    _, height, width = features.shape
    order = _load_order(args.order, height, width)
    params = _load_params(args.params)
    sequence = apply_order(features, order)
    if args.depth is not None:
        depth = load_tensor(args.depth).astype(np.float64)
        if depth.ndim != 3 or depth.shape[1:] != (height, width):
            raise ValidationError(
                f"depth tensor must be (k, {height}, {width}), got {depth.shape}"
            )
        depth_seq = apply_order(depth, order)
    else:
        # No depth input: zero features and zero gamma reduce to the
        # plain content-projection scan.
        depth_seq = np.zeros((len(order), params.depth_dim))
    if args.gamma is not None:
        gamma_map = load_tensor(args.gamma).astype(np.float64)
        if gamma_map.shape != (height, width):
            raise ValidationError(
                f"gamma tensor must be ({height}, {width}), got {gamma_map.shape}"
            )
        if gamma_map.min() < 0.0 or gamma_map.max() > 1.0:
            raise ValidationError("gamma values must lie in [0, 1]")
        gamma = gamma_map.ravel()[order.forward]
    else:
        gamma = np.zeros(len(order))
    out_seq = ds_scan(sequence, depth_seq, gamma, params)
    save_tensor(args.out, restore_order(out_seq, order).astype(np.float32))
    print(f"scanned {len(order)} steps, state {params.state_size}, "
          f"channels {params.inner_dim} -> {args.out}")
    return 0


def cmd_mecm(args) -> int:
    features = load_tensor(args.input).astype(np.float64)
    if features.ndim != 3:
        raise ValidationError(f"features tensor must be (C, H, W), got rank {features.ndim}")
    experts = load_experts(args.experts)
    gate, top_k = load_gate(args.gate)
    result = mecm_forward(features, experts, gate, top_k, evolve=args.evolve)
    save_tensor(args.out, result.output.astype(np.float32))
    if args.evolve:
        save_experts(args.experts, result.experts)
    chosen = ",".join(str(i) for i in result.route.selected.tolist())
    print(f"routed to experts [{chosen}] "
          f"(weights {np.round(result.route.weights, 4).tolist()}) -> {args.out}"
          + ("; banks evolved in place" if args.evolve else ""))
    return 0


def cmd_synth(args) -> int:
    transmission = load_image(args.t)
    reflection = load_image(args.r)
    result = blend(transmission, reflection, args.alpha, args.beta)
    save_image(result.image, args.out)
    print(f"blended alpha={args.alpha} beta={args.beta}, "
          f"{result.clamped_count} pixel(s) clamped -> {args.out}")
    return 0


def cmd_metrics(args) -> int:
    reference = load_image(args.reference)
    test = load_image(args.test)
    pair = basename_pair(args.test, args.reference)
    row = (pair, psnr(reference, test), ssim(reference, test))
    write_metrics_csv(args.out, [row])
    print(f"{pair}: psnr {row[1]:.4f} dB, ssim {row[2]:.6f} -> {args.out}")
    return 0


def cmd_check(args) -> int:
    names = list(SUITES) if args.suite == "all" else [args.suite]
    seed = _resolve_seed(args.seed)
    return 0 if run_suites(names, seed) else 1


# ---------------------------------------------------------------------------

def run_demo(config: RunConfig, t_path, r_path, proximity_path, outdir) -> dict:
    """Deterministic end-to-end toy pipeline; returns the manifest."""
    os.makedirs(outdir, exist_ok=True)
    t_img = load_image(t_path)
    r_img = load_image(r_path)
    proximity = _load_proximity(proximity_path)
    if t_img.ndim != 3 or r_img.ndim != 3:
        raise ValidationError("demo layers must be RGB (P6) images")
    if t_img.shape != r_img.shape or t_img.shape[:2] != proximity.values.shape:
        raise ValidationError(
            f"demo inputs disagree on size: t {t_img.shape}, r {r_img.shape}, "
            f"proximity {proximity.values.shape}"
        )
    height, width = proximity.values.shape
    rng = np.random.default_rng(config.seed)

    # Stage 1: composite the two layers.
    alpha = float(rng.uniform(*config.alpha_range))
    beta = float(rng.uniform(*config.beta_range))
    blended = blend(t_img, r_img, alpha, beta)
    save_image(blended.image, os.path.join(outdir, "blended.ppm"))

    # Stage 2: depth-aware orders, both families plus reversals.
    regions = partition_regions(proximity, bins=config.bins,
                                min_area_frac=config.min_area_frac)
    save_tensor(os.path.join(outdir, "regions.dmdt"), regions.labels.astype(np.uint32))
    rscan = da_rscan(proximity, regions)
    gscan = da_gscan(proximity)
    for name, order in (("rscan", rscan), ("gscan", gscan)):
        save_tensor(os.path.join(outdir, f"order_{name}.dmdt"),
                    order.forward.astype(np.uint32))
        save_image(order_to_image(order), os.path.join(outdir, f"order_{name}.ppm"))

    # Stage 3: lift pixels to inner channels and run the four scans.
    lift = rng.normal(0.0, 1.0 / np.sqrt(3.0), (config.inner_dim, 3))
    features = np.einsum("dc,chw->dhw", lift, blended.image.transpose(2, 0, 1))
    save_tensor(os.path.join(outdir, "features.dmdt"), features.astype(np.float32))
    encoding = spatial_positional_encoding(height, width, config.inner_dim,
                                           base=config.pe_base)
    params = random_params(config.state_size, config.inner_dim, depth_dim=2,
                           seed=rng, spectral_radius=0.9)
    accumulated = np.zeros_like(features)
    for base_order in (rscan, gscan):
        for order in (base_order, reverse_order(base_order)):
            sequence = apply_order(features, order) + realign_pe(encoding, order)
            depth_seq = depth_features_from_proximity(proximity, order)
            gamma = gamma_from_proximity(proximity, order)
            accumulated += restore_order(ds_scan(sequence, depth_seq, gamma, params),
                                         order)
    accumulated /= 4.0
    save_tensor(os.path.join(outdir, "recurrence.dmdt"), accumulated.astype(np.float32))

    # Stage 4: memory-expert compensation with a residual pass-through.
    experts = [init_expert(config.inner_dim, config.memory_items, seed=rng,
                           top_k=config.item_top_k, update_rate=config.update_rate)
               for _ in range(config.num_experts)]
    gate = init_gate(config.num_experts, config.inner_dim, seed=rng)
    compensated = mecm_forward(accumulated, experts, gate, config.expert_top_k)
    corrected = accumulated + compensated.output
    save_tensor(os.path.join(outdir, "compensated.dmdt"), corrected.astype(np.float32))

    # Stage 5: project back to RGB and score the round trip.
    unlift = rng.normal(0.0, 1.0 / np.sqrt(config.inner_dim), (3, config.inner_dim))
    restored = np.clip(np.einsum("cd,dhw->hwc", unlift, corrected), 0.0, 1.0)
    save_image(restored, os.path.join(outdir, "restored.ppm"))

    rows = [
        ("restored_vs_t", psnr(t_img, restored), ssim(t_img, restored)),
        ("restored_vs_r", psnr(r_img, restored), ssim(r_img, restored)),
        ("blended_vs_t", psnr(t_img, blended.image), ssim(t_img, blended.image)),
    ]
    write_metrics_csv(os.path.join(outdir, "metrics.csv"), rows)

    query = corrected.mean(axis=(1, 2))
    losses = {
        "load": load_loss({"T": compensated.route.full_weights},
                          weights=config.loss_weights),
        "memory": memory_matching_loss(query, experts[0].memory,
                                       weights=config.loss_weights, layer="T"),
        "appearance": appearance_loss(restored, t_img, blended.image, r_img,
                                      weights=config.loss_weights),
    }
    losses["total"] = total_loss(losses["load"], losses["memory"], losses["appearance"])

    manifest = {
        "seed": config.seed,
        "alpha": alpha,
        "beta": beta,
        "clamped_pixels": blended.clamped_count,
        "selected_experts": compensated.route.selected.tolist(),
        "losses": losses,
        "metrics": {name: {"psnr_db": p, "ssim": s} for name, p, s in rows},
        "config": config.to_dict(),
    }
    with open(os.path.join(outdir, "run.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def cmd_demo(args) -> int:
    payload = None
    if args.config is not None:
        with open(args.config, "r", encoding="utf-8") as fh:
            try:
                payload = json.load(fh)
            except json.JSONDecodeError as exc:
                raise FormatError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(payload, dict):
            raise FormatError("config file must hold a JSON object")
    seed = _resolve_seed(args.seed, payload)
    config = load_config(args.config, overrides={"seed": seed})
    manifest = run_demo(config, args.t, args.r, args.proximity, args.outdir)
    print(f"demo complete: seed {manifest['seed']}, alpha {manifest['alpha']:.4f}, "
          f"beta {manifest['beta']:.4f}, outputs in {args.outdir}")
    for name, scores in manifest["metrics"].items():
        print(f"  {name}: psnr {scores['psnr_db']:.4f} dB, ssim {scores['ssim']:.6f}")
    return 0


def demo_params_files(outdir, config: RunConfig) -> None:
    """Drop freshly initialized parameter files for CLI experimentation."""
    rng = np.random.default_rng(config.seed)
    params = random_params(config.state_size, config.inner_dim, depth_dim=2, seed=rng)
    with open(os.path.join(outdir, "ssm_params.json"), "w", encoding="utf-8") as fh:
        json.dump(params.to_dict(), fh)
        fh.write("\n")
    experts = [init_expert(config.inner_dim, config.memory_items, seed=rng,
                           top_k=config.item_top_k, update_rate=config.update_rate)
               for _ in range(config.num_experts)]
    save_experts(os.path.join(outdir, "experts.json"), experts)
    save_gate(os.path.join(outdir, "gate.json"),
              init_gate(config.num_experts, config.inner_dim, seed=rng),
              config.expert_top_k)


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dmdkit",
        description="Depth-guided scans, state-space recurrences, memory experts, "
                    "and image metrics at desk scale.",
    )
    parser.add_argument("--version", action="version", version=f"dmdkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scan", help="build a depth-aware scan order from a proximity PGM")
    p.add_argument("--proximity", required=True, help="grayscale proximity map (P5)")
    p.add_argument("--mode", choices=("rscan", "gscan"), default="rscan")
    p.add_argument("--reverse", action="store_true", help="emit the reversed order")
    p.add_argument("--bins", type=int, default=8)
    p.add_argument("--min-area-frac", type=float, default=0.005)
    p.add_argument("--regions-out", help="also write region labels (u32 tensor)")
    p.add_argument("--viz", help="write a hue-ramp PPM of visit ranks")
    p.add_argument("--out", required=True, help="output order tensor (u32)")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("ssm", help="run the depth-synergized recurrence over features")
    p.add_argument("--input", required=True, help="(C, H, W) f32 tensor")
    p.add_argument("--order", required=True, help="scan order tensor from `scan`")
    p.add_argument("--params", required=True, help="recurrence params JSON")
    p.add_argument("--depth", help="(k, H, W) depth-feature tensor; omitted = zeros")
    p.add_argument("--gamma", help="(H, W) blend-weight tensor in [0,1]; omitted = zeros")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ssm)

    p = sub.add_parser("mecm", help="route features through memory experts")
    p.add_argument("--input", required=True, help="(C, H, W) f32 tensor")
    p.add_argument("--experts", required=True, help="expert list JSON")
    p.add_argument("--gate", required=True, help="gate params JSON (with top_k)")
    p.add_argument("--evolve", action="store_true",
                   help="update routed experts' banks in place")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mecm)

    p = sub.add_parser("synth", help="composite transmission and reflection layers")
    p.add_argument("--t", required=True, help="transmission image (PPM/PGM)")
    p.add_argument("--r", required=True, help="reflection image (PPM/PGM)")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("metrics", help="score a test image against a reference")
    p.add_argument("--reference", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True, help="CSV output path")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("check", help="run the invariant self-check suites")
    p.add_argument("--suite", choices=("all",) + tuple(SUITES), default="all")
    p.add_argument("--seed", type=int, default=None,
                   help="override DMD_SEED / default 0")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("demo", help="end-to-end toy pipeline on a small image pair")
    p.add_argument("--t", required=True, help="transmission PPM")
    p.add_argument("--r", required=True, help="reflection PPM")
    p.add_argument("--proximity", required=True, help="proximity PGM")
    p.add_argument("--outdir", required=True)
    p.add_argument("--config", help="RunConfig JSON; flag --seed overrides its seed")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_demo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())
