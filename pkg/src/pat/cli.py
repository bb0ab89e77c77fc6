"""Command-line harness.

Subcommands: gen-data, train, tokenize, reconstruct, segment, eval,
export-config. A JSON config file supplies base values, individual flags
override it, and the PAT_SEED environment variable overrides the seed
last. Exit codes: 0 ok, 2 config error, 3 data error, 4 divergence.
"""

import argparse
import json
import os
import sys

import numpy as np

from .config import CONFIG_SCHEMA, PRESETS, load_config
from .data import generate_dataset, load_image, save_image, save_labels
from .encoder import pyramid_from_fpt1
from .errors import ConfigError, DataError, DivergenceError
from .evaluate import evaluate_model, write_eval_csv
from .feature_io import load_checkpoint, load_manifest, write_fpt1_file
from .model import PatTokenizer
from .train import load_run, run_seeds, train_run

CONFIG_FLAGS = [
    ("--steps", int, "steps"),
    ("--batch-size", int, "batch_size"),
    ("--seed", int, "seed"),
    ("--lr", float, "lr"),
    ("--weight-decay", float, "weight_decay"),
    ("--image-size", int, "image_size"),
    ("--num-classes", int, "num_classes"),
    ("--kappa", float, "kappa"),
    ("--eval-every", int, "eval_every"),
    ("--log-every", int, "log_every"),
]
ABLATION_FLAGS = ["no_vmf", "no_spatial_align", "no_tokenmixer",
                  "no_pixel_residual", "unified_tokens", "separate_decoding"]


def _add_config_args(p):
    p.add_argument("--config", help="JSON config file (schema: export-config --schema)")
    p.add_argument("--preset", choices=sorted(PRESETS), help="named preset base")
    for flag, typ, _ in CONFIG_FLAGS:
        p.add_argument(flag, type=typ)
    for name in ABLATION_FLAGS:
        p.add_argument(f"--{name.replace('_', '-')}", action="store_true", default=None)
    p.add_argument("--fpn-stages", help="comma list from early,mid,late")
    p.add_argument("--scale-schedule", help="comma list like 4,2,1")
    p.add_argument("--feature-source", choices=["stub", "fpt1"])
    p.add_argument("--class-embed-path")


def _config_from_args(args):
    overrides = {}
    for flag, _, key in CONFIG_FLAGS:
        v = getattr(args, key)
        if v is not None:
            overrides[key] = v
    for name in ABLATION_FLAGS:
        if getattr(args, name):
            overrides[name] = True
    if args.fpn_stages is not None:
        overrides["fpn_stages"] = tuple(s for s in args.fpn_stages.split(",") if s)
    if args.scale_schedule is not None:
        overrides["scale_schedule"] = tuple(int(s) for s in args.scale_schedule.split(","))
    if args.feature_source is not None:
        overrides["feature_source"] = args.feature_source
    if args.class_embed_path is not None:
        overrides["class_embed_path"] = args.class_embed_path
    if os.environ.get("PAT_SEED"):
        overrides["seed"] = int(os.environ["PAT_SEED"])
    return load_config(args.config, preset=args.preset, overrides=overrides)


def cmd_gen_data(args):
    manifest = generate_dataset(args.out, args.n, args.image_size,
                                args.num_classes, args.seed)
    print(manifest)
    return 0


def cmd_train(args):
    cfg = _config_from_args(args)
    if args.repeat > 1:
        seeds = [cfg.seed + i for i in range(args.repeat)]
        results = run_seeds(cfg, args.data, args.out, seeds,
                            eval_manifest_path=args.eval_data,
                            log=print if args.verbose else None)
        for seed, res in zip(seeds, results):
            print(f"seed {seed}: final total {res.final_report.get('total'):.4f}")
    else:
        res = train_run(cfg, args.data, args.out, eval_manifest_path=args.eval_data,
                        log=print if args.verbose else None)
        print(f"checkpoint: {res.checkpoint_path}")
        print(f"metrics: {res.metrics_path}")
    return 0


def _tokenizer_from_run(run_dir):
    with open(os.path.join(run_dir, "config.json"), "r", encoding="utf-8") as f:
        from .config import RunConfig
        cfg = RunConfig.from_dict(json.load(f))
    tok = PatTokenizer(cfg)
    params, _ = load_checkpoint(os.path.join(run_dir, "checkpoint.fpt1"))
    tok.load_state(params)
    return cfg, tok


def cmd_tokenize(args):
    cfg, tok = _tokenizer_from_run(args.run)
    image = load_image(args.image)
    pyramid = pyramid_from_fpt1(args.features) if args.features else None
    maps = tok.tokenize(image, pyramid)
    entries = {f"tokens_{name}": m.astype(np.int32) for name, m in maps.items()}
    write_fpt1_file(args.out, entries)
    print(args.out)
    return 0


def cmd_reconstruct(args):
    _, model = load_run(args.run)
    image = load_image(args.image)
    from .tensor import no_grad
    with no_grad():
        out = model.forward(image)
    save_image(args.out, np.clip(out.decode.recon.data, 0.0, 1.0))
    print(args.out)
    return 0


def cmd_segment(args):
    _, model = load_run(args.run)
    image = load_image(args.image)
    from .tensor import no_grad
    with no_grad():
        out = model.forward(image)
    labels = model.label_map(out, (image.shape[1], image.shape[2]))
    save_labels(args.out, labels.astype(np.uint8))
    print(args.out)
    return 0


def cmd_eval(args):
    _, model = load_run(args.run)
    manifest = load_manifest(args.data)
    if args.per_image:
        report, maps = evaluate_model(model, manifest, limit=args.limit,
                                      collect_maps=True)
        dump_dir = args.out + ".maps"
        os.makedirs(dump_dir, exist_ok=True)
        for sample, label_map in zip(manifest.samples, maps):
            save_labels(os.path.join(dump_dir, f"{sample.sample_id}.png"),
                        label_map.astype(np.uint8))
    else:
        report = evaluate_model(model, manifest, limit=args.limit)
    write_eval_csv(report, args.out)
    print(f"miou {report.miou:.4f}  psnr {report.mean_psnr:.2f} dB  "
          f"({report.n_images} images) -> {args.out}")
    return 0


def cmd_export_config(args):
    if args.schema:
        text = json.dumps(CONFIG_SCHEMA, indent=2)
    else:
        text = PRESETS[args.preset]().to_json()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text + "\n")
        print(args.out)
    else:
        print(text)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="pat", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic shapes dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, default=500)
    g.add_argument("--image-size", type=int, default=64)
    g.add_argument("--num-classes", type=int, default=6)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train on a dataset manifest")
    t.add_argument("--data", required=True, help="training manifest")
    t.add_argument("--eval-data", help="evaluation manifest for periodic metrics")
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--repeat", type=int, default=1, help="repeat over N seeds")
    t.add_argument("--verbose", action="store_true")
    _add_config_args(t)
    t.set_defaults(fn=cmd_train)

    tk = sub.add_parser("tokenize", help="emit per-stage token index maps")
    tk.add_argument("--run", required=True)
    tk.add_argument("--image", required=True)
    tk.add_argument("--features", help="optional FPT1 feature pyramid")
    tk.add_argument("--out", required=True)
    tk.set_defaults(fn=cmd_tokenize)

    rc = sub.add_parser("reconstruct", help="reconstruct an image through the model")
    rc.add_argument("--run", required=True)
    rc.add_argument("--image", required=True)
    rc.add_argument("--out", required=True)
    rc.set_defaults(fn=cmd_reconstruct)

    sg = sub.add_parser("segment", help="predict a label map for an image")
    sg.add_argument("--run", required=True)
    sg.add_argument("--image", required=True)
    sg.add_argument("--out", required=True)
    sg.set_defaults(fn=cmd_segment)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    ev.add_argument("--run", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--limit", type=int)
    ev.add_argument("--per-image", action="store_true",
                    help="also dump predicted label maps next to the report")
    ev.set_defaults(fn=cmd_eval)

    ec = sub.add_parser("export-config", help="write a preset config or the schema")
    ec.add_argument("--preset", choices=sorted(PRESETS), default="toy")
    ec.add_argument("--schema", action="store_true")
    ec.add_argument("--out")
    ec.set_defaults(fn=cmd_export_config)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except DivergenceError as e:
        print(f"divergence: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
