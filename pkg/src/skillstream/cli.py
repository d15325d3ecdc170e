"""Command-line entry points.

Subcommands: ``train`` (one run), ``eval`` (score a checkpoint on a suite),
``bench`` (methods x seeds comparison, with an acceptance gate mode), and
``bank`` (debug dump of the routing bank).  Configs are JSON files mirroring
RunConfig; any key can be overridden by an environment variable prefixed
SKILLSTREAM_ (e.g. SKILLSTREAM_ITERS_BASE=300).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .training import RunConfig, apply_method

ENV_PREFIX = "SKILLSTREAM_"


def load_config(path: str | None, env=os.environ) -> RunConfig:
    data = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    defaults = RunConfig().to_dict()
    unknown = set(data) - set(defaults)
    if unknown:
        raise SystemExit(f"unknown config keys: {sorted(unknown)}")
    for key, default in defaults.items():
        env_key = ENV_PREFIX + key.upper()
        if env_key in env:
            raw = env[env_key]
            if isinstance(default, bool):
                data[key] = raw.lower() in ("1", "true", "yes")
            elif isinstance(default, int):
                data[key] = int(raw)
            elif isinstance(default, float) or default is None:
                data[key] = float(raw)
            elif isinstance(default, (list, tuple)):
                data[key] = json.loads(raw)
            else:
                data[key] = raw
    merged = {**defaults, **data}
    return RunConfig.from_dict(merged)


def cmd_train(args) -> int:
    from .harness import train_run

    config = load_config(args.config)
    if args.seed is not None:
        config = RunConfig.from_dict({**config.to_dict(), "seed": args.seed})
    config = apply_method(config, args.method)
    report, trainer = train_run(config, out_dir=args.out, method=args.method)
    if args.dump_views:
        _dump_views(trainer, args.out)
    print(f"run complete: report at {os.path.join(args.out, 'report.json')}")
    for key, val in report.summary().items():
        print(f"  {key:>7}: {val:.2f}")
    return 0


def _dump_views(trainer, out_dir):
    """Render the fitted field on one scene and write PPM images."""
    import numpy as np

    from .field import RayBatch, render
    from .policy import deep_volume
    from .raster import write_ppm
    from .autodiff import Tensor

    cfg = trainer.config
    bundle = trainer.store.bundle(0, "train", 0)
    hw = cfg.image_hw
    with Tensor.no_grad():
        volume = deep_volume(bundle.raw_grid, trainer.params, trainer.pc)
        for view in range(cfg.aux_views):
            origins, dirs = bundle.aux_rays[view]
            rays = RayBatch(origins=origins, dirs=dirs,
                            pixel_rgb=bundle.aux_images[view].reshape(-1, 4)[:, :3],
                            semantic_target=bundle.aux_semantic[view].reshape(
                                -1, cfg.semantic_dim),
                            t_near=trainer.fc.t_near, t_far=trainer.fc.t_far,
                            n_samples=cfg.ray_samples)
            t_vals = np.broadcast_to(
                np.linspace(rays.t_near, rays.t_far, cfg.ray_samples),
                (hw * hw, cfg.ray_samples)).copy()
            rgb, _, _, _ = render(trainer.field_params, volume, rays,
                                  bundle.episode.scene.bounds_lo,
                                  bundle.episode.scene.bounds_hi, t_values=t_vals)
            write_ppm(os.path.join(out_dir, f"view{view}_render.ppm"),
                      rgb.data.reshape(hw, hw, 3))
            write_ppm(os.path.join(out_dir, f"view{view}_truth.ppm"),
                      bundle.aux_images[view][:, :, :3])


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .evaluate import evaluate_introduced_skills
    from .suite import Suite

    suite = Suite.load_manifest(args.suite) if args.suite else None
    trainer = load_checkpoint(args.checkpoint, suite=suite)
    scores = evaluate_introduced_skills(trainer, max(trainer.tasks_done, 1))
    payload = {"checkpoint": args.checkpoint,
               "tasks_done": trainer.tasks_done,
               "scores": {str(k): v for k, v in sorted(scores.items())}}
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    print(text)
    return 0


def cmd_bench(args) -> int:
    from .harness import bench_run, gate_checks

    config = load_config(args.config)
    seeds = list(range(args.seeds))
    methods = args.methods.split(",")

    def progress(method, seed, report):
        s = report.summary()
        print(f"[{method} seed {seed}] all={s['all']:.1f} forget={s['forget']:.1f}",
              flush=True)

    comparison = bench_run(config, seeds, methods, out_dir=args.out,
                           progress=progress)
    for method in sorted(comparison["methods"]):
        entry = comparison["methods"][method]
        print(f"{method:>8}: base={entry['base_mean']:.1f} "
              f"novel={entry['novel_mean']:.1f} all={entry['all_mean']:.1f} "
              f"avg={entry['avg_mean']:.1f} forget={entry['forget_mean']:.1f}")
    if args.gate:
        failures = 0
        for name, ok, detail in gate_checks(comparison):
            print(f"gate {'PASS' if ok else 'FAIL'}: {name} ({detail})")
            failures += not ok
        return 1 if failures else 0
    return 0


def cmd_bank(args) -> int:
    from .checkpoint import load_checkpoint

    trainer = load_checkpoint(args.checkpoint)
    bank = trainer.bank
    print(f"occupancy: {bank.occupancy} / {bank.capacity}")
    if bank.occupancy:
        cos = bank.pairwise_cosines()
        print("pairwise row cosines:")
        for i in range(bank.occupancy):
            print("  " + " ".join(f"{cos[i, j]:+.3f}" for j in range(bank.occupancy)))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="skillstream",
                                     description="continual behavior-cloning runs")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one full run")
    p_train.add_argument("--config", default=None, help="JSON config file")
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.add_argument("--method", default="ours",
                         choices=["ours", "er", "ft", "no-sep", "no-srd", "no-ssr"])
    p_train.add_argument("--dump-views", action="store_true",
                         help="write rendered PPM views next to the report")
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="score a checkpoint on held-out episodes")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--suite", default=None, help="suite manifest JSON")
    p_eval.add_argument("--out", default=None)
    p_eval.set_defaults(fn=cmd_eval)

    p_bench = sub.add_parser("bench", help="compare methods across seeds")
    p_bench.add_argument("--config", default=None)
    p_bench.add_argument("--seeds", type=int, default=3)
    p_bench.add_argument("--methods", default="ours,er,ft,no-sep,no-srd,no-ssr")
    p_bench.add_argument("--out", default=None)
    p_bench.add_argument("--gate", action="store_true",
                         help="exit nonzero if any acceptance ordering fails")
    p_bench.set_defaults(fn=cmd_bench)

    p_bank = sub.add_parser("bank", help="print routing-bank occupancy and cosines")
    p_bank.add_argument("--checkpoint", required=True)
    p_bank.set_defaults(fn=cmd_bank)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
