"""Command-line entry point wiring data generation, training, translation,
metrics, gradient checks, and statistics analysis into reproducible runs."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import checkpoint, config, data, gradcheck, metrics
from .model import TranslationModel, translator_param_report
from .training import Trainer


def _cmd_gen_data(args):
    ds = data.generate_dataset(args.seed, args.count)
    data.write_dataset(ds, args.out)
    print(f"wrote {len(ds.images)} samples to {args.out} "
          f"({len(ds.train_indices)} train / {len(ds.test_indices)} test)")
    return 0


def _cmd_dump_config(args):
    cfg = config.apply_overrides(config.RunConfig(), args.set or [])
    config.dump_config(cfg, args.out)
    print(f"wrote defaults to {args.out}")
    return 0


def _cmd_train(args):
    cfg = config.load_config(args.config)
    ds = data.load_dataset(args.data)
    model = TranslationModel(cfg.arch(), seed=cfg.seed)
    structural, total, frac = translator_param_report(model)
    print(f"translator parameters: {total} total, {structural} structural "
          f"({100 * frac:.3f}% overhead)")
    trainer = Trainer(model, ds, cfg.loss_weights(), iterations=cfg.iterations,
                      batch_size=cfg.batch_size, lr=cfg.lr, seed=cfg.seed,
                      log_every=cfg.log_every, checkpoint_every=cfg.checkpoint_every,
                      out_dir=args.out)
    state = trainer.run()
    row = state.metrics
    print(f"finished {state.iteration} iterations; "
          f"d_latent={row['d_latent']:.4f} g_total_latent={row['g_total_latent']:.4f}")
    print(f"checkpoint: {os.path.join(args.out, 'checkpoint_final.ckpt')}")
    return 0


def _parse_style(model, spec, domain, source_count):
    if spec.startswith("latent:"):
        seed = int(spec.split(":", 1)[1])
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((source_count, model.cfg.latent_dim), dtype=np.float32)
        return model.map_latent(z, domain)
    if spec.startswith("ref:"):
        ref = data.load_png(spec.split(":", 1)[1])
        w = model.encode_style(ref, domain)
        return np.repeat(w, source_count, axis=0)
    raise ValueError(f"style must be latent:<seed> or ref:<path>, got {spec!r}")


def _load_sources(path):
    if os.path.isdir(path):
        ds = data.load_dataset(path)
        return ds.images[ds.test_indices[:8]]
    return data.load_png(path)[None]


def _cmd_translate(args):
    model = checkpoint.load_model(args.checkpoint)
    sources = _load_sources(args.source)
    w = _parse_style(model, args.style, args.domain, sources.shape[0])
    outs = model.translate(sources, w)
    grid = np.concatenate([sources, outs], axis=0)
    data.save_grid(grid, args.out, cols=sources.shape[0])
    print(f"wrote {args.out} (top row: sources, bottom row: translations)")
    return 0


def _cmd_eval(args):
    model = checkpoint.load_model(args.checkpoint)
    ds = data.load_dataset(args.data)
    report = metrics.evaluate_model(model, ds, mode=args.mode, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, f"metrics_{args.mode}.csv")
    report.to_csv(csv_path)
    for src in range(model.cfg.num_domains):
        pool = ds.images[ds.test_indices_for(src)][:8]
        dst = (src + 1) % model.cfg.num_domains
        sampler = metrics.style_sampler_for(model, ds, args.mode, dst, args.seed)
        w = sampler(pool.shape[0])
        outs = model.translate(pool, w)
        data.save_grid(np.concatenate([pool, outs], axis=0),
                       os.path.join(args.out, f"grid_src{src}_{args.mode}.png"),
                       cols=pool.shape[0])
    print(f"wrote {csv_path}")
    print(f"diversity (cross-domain mean):       {report.mean('diversity'):.6f}")
    print(f"controllability (cross-domain mean): {report.mean('controllability'):.6f}")
    print(f"fid_proxy (cross-domain mean):       {report.mean('fid_proxy'):.6f}")
    return 0


def _cmd_gradcheck(args):
    names = gradcheck.all_ops() if args.ops == "all" else args.ops.split(",")
    failed = False
    for name in names:
        report = gradcheck.check_layer(name.strip(), seeds=args.seeds,
                                       threshold=args.threshold)
        print(report.line())
        failed = failed or not report.passed
    if failed:
        print("gradient check FAILED", file=sys.stderr)
        return 1
    return 0


def _cmd_analyze_stats(args):
    model = checkpoint.load_model(args.checkpoint)
    ds = data.load_dataset(args.data)
    rng = np.random.default_rng(args.seed)
    idx = ds.test_indices[:args.batch] if len(ds.test_indices) >= args.batch else ds.test_indices
    x = ds.images[idx].astype(model.dtype)
    z = rng.standard_normal((x.shape[0], model.cfg.latent_dim), dtype=np.float32)
    w = model.map_latent(z.astype(model.dtype), args.domain)
    trace = []
    model.translate(x, w, trace=trace)
    with open(args.out, "w") as f:
        f.write("block,channel,mean_slope,neg_mean_ratio,neg_var_ratio\n")
        for block, (pre, slopes) in enumerate(trace):
            for c in range(pre.shape[1]):
                slope = float(np.asarray(slopes)[:, c].mean())
                vals = pre[:, c]
                if (vals < 0).sum() < 2:
                    continue
                mr, vr = metrics.negative_part_stats(vals, slope)
                f.write(f"{block},{c},{slope:.8e},{mr:.8e},{vr:.8e}\n")
    print(f"wrote {args.out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="adastyle",
                                description="Adaptive-rectifier style translation harness")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate the synthetic texture dataset")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--count", type=int, default=512, help="samples per domain")
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_gen_data)

    g = sub.add_parser("dump-config", help="write a config file with defaults")
    g.add_argument("--out", required=True)
    g.add_argument("--set", action="append", metavar="KEY=VALUE")
    g.set_defaults(func=_cmd_dump_config)

    g = sub.add_parser("train", help="train a model")
    g.add_argument("--config", required=True)
    g.add_argument("--data", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_train)

    g = sub.add_parser("translate", help="translate sources with a style")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--source", required=True, help="png file or dataset dir")
    g.add_argument("--style", required=True, help="latent:<seed> or ref:<path>")
    g.add_argument("--domain", type=int, default=1)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_translate)

    g = sub.add_parser("eval", help="compute metrics for a checkpoint")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--data", required=True)
    g.add_argument("--mode", choices=("latent", "ref"), default="latent")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference certification of layers")
    g.add_argument("--ops", default="all", help="'all' or comma-separated op names")
    g.add_argument("--seeds", type=int, default=20)
    g.add_argument("--threshold", type=float, default=1e-5)
    g.set_defaults(func=_cmd_gradcheck)

    g = sub.add_parser("analyze-stats", help="per-layer negative-part statistics")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--data", required=True)
    g.add_argument("--domain", type=int, default=1)
    g.add_argument("--batch", type=int, default=8)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_analyze_stats)

    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
