"""Command-line entry point: ``uva <command> [flags]``.

Exit codes: 0 success, 2 usage, 3 data error, 4 divergence, 5 I/O.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import torch

from .errors import (CheckpointCorruptError, InvalidArgumentError,
                     TrainingDivergenceError, UnsupportedVersionError)

log = logging.getLogger("uva")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGENCE, EXIT_IO = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


def _age_spec(text):
    from .data import AgeDistributionSpec

    try:
        return AgeDistributionSpec.parse(text)
    except InvalidArgumentError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {text}")
    return v


def _age(text):
    v = float(text)
    if not 0.0 <= v <= 120.0:
        raise argparse.ArgumentTypeError(f"age must lie in [0, 120], got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uva", description="Disentangled variational aging models.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-data", help="render a synthetic glyph dataset")
    s.add_argument("--n", type=_positive_int, required=True)
    s.add_argument("--ages", type=_age_spec, default="uniform:0:100",
                   help="kind:min:max[:exponent], kind in uniform|long-tailed|truncated")
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train a model on an image folder")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--preset", choices=["desk", "paper"], default="desk")
    t.add_argument("--steps", type=_nonneg_int, default=2000)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--beta1", type=float, default=None)
    t.add_argument("--beta2", type=float, default=None)
    t.add_argument("--batch-size", type=_positive_int, default=None)
    for i in range(1, 6):
        t.add_argument(f"--lambda{i}", type=float, default=None)
    t.add_argument("--alpha", type=float, default=None)
    t.add_argument("--margin", type=float, default=None)
    t.add_argument("--alpha-on-generator", action=argparse.BooleanOptionalAction, default=None,
                   help="scale the generator's adversarial term by alpha (desk preset: on)")
    t.add_argument("--latent-dim", type=_positive_int, default=None)
    t.add_argument("--size", type=int, default=None)
    t.add_argument("--base-channels", type=_positive_int, default=None)
    t.add_argument("--max-channels", type=_positive_int, default=None)
    t.add_argument("--age-scale", type=float, default=None)
    t.add_argument("--checkpoint-every", type=_nonneg_int, default=0)
    t.add_argument("--early-stop", action="store_true")
    t.add_argument("--no-adv", action="store_true", help="drop the introspective adversarial terms")
    t.add_argument("--no-age-keep", action="store_true", help="drop the age preserving loss")
    t.add_argument("--no-reg", action="store_true", help="drop the age regularisation term")
    t.add_argument("--log-every", type=_positive_int, default=100)

    tr = sub.add_parser("translate", help="re-render an image at target ages")
    tr.add_argument("--ckpt", required=True)
    tr.add_argument("--in", dest="inp", required=True)
    tr.add_argument("--age", type=_age, action="append", required=True)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--deterministic", action="store_true")
    tr.add_argument("--out", required=True)

    g = sub.add_parser("generate", help="sample images at a target age, or conditioned on an image")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--age", type=_age, default=None)
    g.add_argument("--count", type=_positive_int, default=1)
    g.add_argument("--from", dest="source", default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    e = sub.add_parser("estimate", help="print estimated ages as JSON lines")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--in", dest="inp", action="append", required=True)

    ev = sub.add_parser("eval", help="MAE, CA(n), FID-lite and aging accuracy on a test folder")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--ca", type=float, action="append", default=None)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--out", default=None)
    return p


def _load(ckpt_path):
    from .training import load_checkpoint

    if not Path(ckpt_path).is_file():
        raise UsageError(f"checkpoint not found: {ckpt_path}")
    ckpt = load_checkpoint(ckpt_path)
    ckpt.model.eval()
    return ckpt


def cmd_synth_data(args):
    from .data import export_glyph_dataset, generate_glyph_dataset

    items, ids = generate_glyph_dataset(args.n, args.ages, args.size, args.seed, return_identities=True)
    out = export_glyph_dataset(items, ids, args.out)
    log.info("wrote %d images to %s", len(items), out)
    return out


def train_configs(args):
    from .training import preset

    over = dict(steps=args.steps, seed=args.seed, checkpoint_every=args.checkpoint_every,
                early_stop=args.early_stop)
    for flag, key in (("lr", "learning_rate"), ("beta1", "beta1"), ("beta2", "beta2"),
                      ("batch_size", "batch_size"), ("age_scale", "age_scale"),
                      ("latent_dim", "latent_dim"), ("size", "input_size"),
                      ("base_channels", "base_channels"), ("max_channels", "max_channels")):
        v = getattr(args, flag)
        if v is not None:
            over[key] = v
    weights = {}
    for i in range(1, 6):
        v = getattr(args, f"lambda{i}")
        if v is not None:
            weights[f"lambda{i}"] = v
    if args.alpha is not None:
        weights["alpha"] = args.alpha
    if args.margin is not None:
        weights["margin"] = args.margin
    if args.alpha_on_generator is not None:
        weights["alpha_on_generator"] = args.alpha_on_generator
    # ablations: the real-data KL stays inside the encoder loss, only the
    # introspective hinge and the generator's adversarial term are removed
    if args.no_adv:
        weights.update(alpha=0.0, lambda4=0.0)
    if args.no_age_keep:
        weights["lambda5"] = 0.0
    if args.no_reg:
        weights["lambda3"] = 0.0
    over["weights"] = weights
    return preset(args.preset, **over)


def cmd_train(args):
    from .data import load_image_folder
    from .training import train_loop

    try:
        arch, cfg = train_configs(args)
    except InvalidArgumentError as exc:
        raise UsageError(str(exc))
    if not Path(args.data).is_dir():
        raise UsageError(f"data directory not found: {args.data}")
    dataset = load_image_folder(args.data, size=arch.input_size)

    def progress(step, rep):
        if step % args.log_every == 0:
            log.info("step %d rec=%.3f total_E=%.3f total_G=%.3f", step, rep.rec, rep.total_E, rep.total_G)

    ckpt, _ = train_loop(dataset, cfg, arch, out_dir=args.out, callback=progress)
    log.info("finished at step %d; wrote %s", ckpt.step, Path(args.out) / "ckpt-final.uva")
    return ckpt


def cmd_translate(args):
    from .data import load_image, save_image
    from .inference import age_translate

    ckpt = _load(args.ckpt)
    x = load_image(args.inp, ckpt.arch_config.input_size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.inp).stem
    gen = torch.Generator()
    gen.manual_seed(args.seed)
    paths = []
    for age in args.age:
        img = age_translate(ckpt.model, x, age, gen, deterministic=args.deterministic)
        path = out / f"{stem}_age{int(round(age)):03d}.png"
        save_image(img.numpy(), path)
        paths.append(path)
    return paths


def cmd_generate(args):
    from .data import load_image, save_image
    from .inference import age_generate_conditioned, age_generate_from_noise

    ckpt = _load(args.ckpt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gen = torch.Generator()
    gen.manual_seed(args.seed)
    paths = []
    if args.source is not None:
        x = load_image(args.source, ckpt.arch_config.input_size)
        stem = Path(args.source).stem
        for k in range(args.count):
            path = out / f"{stem}_gen{k:03d}.png"
            save_image(age_generate_conditioned(ckpt.model, x, gen).numpy(), path)
            paths.append(path)
    else:
        if args.age is None:
            raise UsageError("generate needs --age unless --from is given")
        for k in range(args.count):
            path = out / f"gen_age{int(round(args.age)):03d}_{k:03d}.png"
            save_image(age_generate_from_noise(ckpt.model, args.age, gen).numpy(), path)
            paths.append(path)
    return paths


def cmd_estimate(args, stream=None):
    from .data import load_image
    from .inference import age_estimate

    stream = stream or sys.stdout
    ckpt = _load(args.ckpt)
    rows = []
    for f in args.inp:
        age = age_estimate(ckpt.model, load_image(f, ckpt.arch_config.input_size))
        rows.append({"file": f, "age": age})
        stream.write(json.dumps(rows[-1]) + "\n")
    return rows


def cmd_eval(args, stream=None):
    from .data import load_image_folder
    from .metrics import evaluate

    ckpt = _load(args.ckpt)
    test = load_image_folder(args.data, size=ckpt.arch_config.input_size)
    ca = args.ca or [3, 5, 7]
    report = evaluate(ckpt.model, test, ca_ns=ca, seed=args.seed,
                      config={"ckpt": str(args.ckpt), "data": str(args.data),
                              "arch": ckpt.arch_config.to_dict(), "step": ckpt.step})
    report["ca"] = {f"CA({n:g})": v for n, v in zip(ca, report["ca"].values())}
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    else:
        (stream or sys.stdout).write(text + "\n")
    return report


COMMANDS = {
    "synth-data": cmd_synth_data,
    "train": cmd_train,
    "translate": cmd_translate,
    "generate": cmd_generate,
    "estimate": cmd_estimate,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get("UVA_THREADS")
    if threads:
        torch.set_num_threads(max(1, int(threads)))
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"uva {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergenceError as exc:
        print(f"uva: training diverged ({exc.term}): {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (CheckpointCorruptError, UnsupportedVersionError) as exc:
        print(f"uva: corrupt checkpoint: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvalidArgumentError as exc:
        print(f"uva: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"uva: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
