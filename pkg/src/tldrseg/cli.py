"""Command-line entry point: ``tldrseg <subcommand> [options]``.

Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors.
"""

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import subprocess
import sys
import time

import numpy as np

from tldrseg import __version__
from tldrseg.errors import ConfigError, TLDRError

TABLE_PRESETS = {
    4: [
        ("L_orig", dict(use_L_orig=True, use_L_styl=False, use_L_TR=False, use_L_TG=False)),
        ("L_styl", dict(use_L_orig=False, use_L_styl=True, use_L_TR=False, use_L_TG=False)),
        ("L_orig+L_styl", dict(use_L_orig=True, use_L_styl=True, use_L_TR=False, use_L_TG=False)),
        ("L_orig+L_styl+L_TR", dict(use_L_orig=True, use_L_styl=True, use_L_TR=True, use_L_TG=False)),
        ("L_orig+L_styl+L_TG", dict(use_L_orig=True, use_L_styl=True, use_L_TR=False, use_L_TG=True)),
        ("full", dict(use_L_orig=True, use_L_styl=True, use_L_TR=True, use_L_TG=True)),
    ],
    5: [
        ("L_TR raw features", dict(use_L_TR=True, use_L_TG=False, use_TEO=False)),
        ("L_TR gram", dict(use_L_TR=True, use_L_TG=False, use_TEO=True)),
        ("L_TG raw features", dict(use_L_TR=False, use_L_TG=True, use_TEO=False)),
        ("L_TG gram", dict(use_L_TR=False, use_L_TG=True, use_TEO=True)),
        ("both raw features", dict(use_L_TR=True, use_L_TG=True, use_TEO=False)),
        ("both gram", dict(use_L_TR=True, use_L_TG=True, use_TEO=True)),
    ],
    6: [
        ("no mask", dict(use_RSM=False)),
        ("mask tau=0.01", dict(use_RSM=True, tau=0.01)),
        ("mask tau=0.1", dict(use_RSM=True, tau=0.1)),
        ("no decay", dict(use_LDF=False)),
        ("linear decay", dict(use_LDF=True)),
    ],
}


class UsageError(Exception):
    """Raised instead of exiting when argparse rejects the command line."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# run manifest
# ---------------------------------------------------------------------------


def _git_describe():
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                             text=True, timeout=5, cwd=os.path.dirname(__file__))
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


@dataclasses.dataclass
class RunManifest:
    command: str
    config_hash: str
    seeds: list
    version: str = __version__
    outputs: list = dataclasses.field(default_factory=list)
    wall_clock_s: float = None
    git_describe: str = dataclasses.field(default_factory=_git_describe)
    status: str = "running"

    def write(self, out_dir):
        path = os.path.join(out_dir, "manifest.json")
        with open(path, "w") as fh:
            json.dump(dataclasses.asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


def config_hash(config):
    return hashlib.sha256(config.to_json().encode()).hexdigest()[:16]


class _Run:
    """Context manager writing a manifest before work starts and finalizing it after."""

    def __init__(self, out_dir, command, cfg_hash, seeds):
        os.makedirs(out_dir, exist_ok=True)
        self.out_dir = out_dir
        self.manifest = RunManifest(command, cfg_hash, list(seeds))

    def __enter__(self):
        self.start = time.perf_counter()
        self.manifest.write(self.out_dir)
        return self.manifest

    def __exit__(self, exc_type, exc, tb):
        self.manifest.wall_clock_s = round(time.perf_counter() - self.start, 3)
        self.manifest.status = "complete" if exc_type is None else "failed"
        self.manifest.write(self.out_dir)
        return False


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _parse_bool(text):
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


def _toggle(text):
    from tldrseg.train import TOGGLES

    name, sep, value = text.partition("=")
    name = name if name.startswith("use_") else "use_" + name
    if not sep or name not in TOGGLES:
        raise argparse.ArgumentTypeError(f"expected <name>=<bool> with name in {', '.join(TOGGLES)}")
    try:
        return name, _parse_bool(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a boolean: {value!r}") from None


def _domain_list(text):
    return [d for d in text.split(",") if d]


def _seed_list(text):
    return [int(s) for s in text.split(",") if s]


def load_config(args):
    """TrainConfig from ``--config`` with command-line overrides applied."""
    from tldrseg.train import TrainConfig

    config = TrainConfig.from_json(args.config) if getattr(args, "config", None) else TrainConfig()
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "iters", None) is not None:
        config.t_total = args.iters
        config.t_warm = min(config.t_warm, max(args.iters - 1, 0))
    if getattr(args, "domains", None):
        config.domains = args.domains
    for name, value in getattr(args, "toggle", None) or []:
        setattr(config, name, value)
    config.validate()
    return config


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_generate_data(args):
    from tldrseg import imageio
    from tldrseg.synthdata import generate_sample, make_domain_pair, style_pool

    seed = args.seed or 0
    source, targets = make_domain_pair(seed, args.targets, size=args.size)
    by_name = {source.name: source, **{t.name: t for t in targets}}
    names = args.domains or list(by_name)
    unknown = [n for n in names if n not in by_name]
    if unknown:
        raise ConfigError(f"unknown domains {unknown}; available: {sorted(by_name)}")
    ext = "." + args.format
    with _Run(args.out_dir, "generate-data", "n/a", [seed]) as manifest:
        for name in names:
            spec = by_name[name]
            folder = imageio.ensure_dir(os.path.join(args.out_dir, name))
            with open(os.path.join(folder, "domain.json"), "w") as fh:
                json.dump(spec.to_json(), fh, indent=2, sort_keys=True)
            for i in range(args.count):
                sample = generate_sample(spec, i)
                imageio.write_image(os.path.join(folder, f"{i:05d}_image{ext}"), sample.image)
                imageio.write_label(os.path.join(folder, f"{i:05d}_label{'.pgm' if ext == '.ppm' else ext}"),
                                    sample.label)
            manifest.outputs.append(folder)
        if args.styles:
            folder = imageio.ensure_dir(os.path.join(args.out_dir, "styles"))
            for i, style in enumerate(style_pool(args.styles, base_seed=seed, size=args.size)):
                imageio.write_image(os.path.join(folder, f"{i:05d}{ext}"), style.image)
            manifest.outputs.append(folder)
    print(f"wrote {len(names)} domain(s) x {args.count} samples to {args.out_dir}")
    return 0


def cmd_stylize(args):
    from tldrseg import imageio
    from tldrseg.stylize import extract_stats, wct_transfer

    content = imageio.read_image(args.content)
    style = imageio.read_image(args.style)
    out = wct_transfer(content, extract_stats(style, args.epsilon), args.epsilon)
    parent = os.path.dirname(args.output)
    if parent:
        os.makedirs(parent, exist_ok=True)
    imageio.write_image(args.output, out)
    print(f"wrote {args.output}")
    return 0


def cmd_train(args):
    from tldrseg.train import run_training

    config = load_config(args)
    with _Run(args.out_dir, "train", config_hash(config), [config.seed]) as manifest:
        with open(os.path.join(args.out_dir, "config.json"), "w") as fh:
            fh.write(config.to_json())

        def progress(t, b):
            if not args.quiet and (t % max(config.t_total // 10, 1) == 0):
                print(f"t={t} L_orig={b['L_orig']:.4f} L_styl={b['L_styl']:.4f} "
                      f"L_TR={b['L_TR']:.3g} L_TG={b['L_TG']:.3g}", flush=True)

        _, results = run_training(config, args.out_dir, progress=progress)
        manifest.outputs = sorted(os.listdir(args.out_dir))
    for r in results:
        print(f"{r.domain}: mIoU={r.miou:.4f}")
    return 0


def cmd_eval(args):
    from tldrseg.analyze import evaluate, write_confusion_csv, write_metrics_row
    from tldrseg.synthdata import make_domain_pair
    from tldrseg.train import TrainConfig, load_trained, resolve_domains

    encoder, decoder, _, manifest = load_trained(args.checkpoint)
    config = TrainConfig.from_dict(manifest["extra"]["config"])
    train, held_out = resolve_domains(config)
    if args.domains:
        source, targets = make_domain_pair(config.data_seed, config.n_targets, size=config.image_size)
        by_name = {d.name: d for d in [source, *targets]}
        missing = [d for d in args.domains if d not in by_name]
        if missing:
            raise ConfigError(f"unknown domains {missing}; available: {sorted(by_name)}")
        domains = [by_name[d] for d in args.domains]
    else:
        domains = held_out or train
    seed = args.seed or 0
    metrics = os.path.join(args.out_dir, "metrics.csv")
    with _Run(args.out_dir, "eval", config_hash(config), [seed]) as run:
        if os.path.exists(metrics):
            os.remove(metrics)
        for domain in domains:
            result = evaluate(encoder, decoder, domain, args.samples, seed=seed)
            write_metrics_row(metrics, manifest["iteration"], result)
            path = os.path.join(args.out_dir, f"confusion_{domain.name}.csv")
            write_confusion_csv(path, result.confusion)
            run.outputs.append(path)
            print(f"[{domain.name}]")
            print(result.report())
        run.outputs.append(metrics)
    return 0


def cmd_analyze_dims(args):
    from tldrseg.analyze import dimensionality, standard_pair_sets
    from tldrseg.train import TrainConfig, load_trained, resolve_domains

    encoder, _, _, manifest = load_trained(args.checkpoint)
    config = TrainConfig.from_dict(manifest["extra"]["config"])
    seed = args.seed or 0
    (source, *_), _ = resolve_domains(config)
    pairs = standard_pair_sets(source, args.pairs, seed=seed)
    rows = dimensionality(encoder, pairs, seed=seed)
    path = os.path.join(args.out_dir, "dims.csv")
    with _Run(args.out_dir, "analyze-dims", config_hash(config), [seed]) as run:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
        run.outputs.append(path)
    for r in rows:
        print(f"layer {r['layer']}: texture={r['texture']:.2f}% shape={r['shape']:.2f}% "
              f"residual={r['residual']:.2f}%")
    return 0


def cmd_ablate(args):
    from tldrseg.train import TOGGLES, run_training

    base = load_config(args)
    seeds = args.seeds or [base.seed]
    rows = TABLE_PRESETS[args.table]
    path = os.path.join(args.out_dir, f"ablation_table{args.table}.csv")
    with _Run(args.out_dir, f"ablate --table {args.table}", config_hash(base), seeds) as run:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            header_written = False
            for index, (label, overrides) in enumerate(rows, start=1):
                for seed in seeds:
                    config = dataclasses.replace(base, seed=seed, **overrides)
                    config.validate()
                    run_dir = os.path.join(args.out_dir, f"row{index}_seed{seed}")
                    _, results = run_training(config, run_dir)
                    if not header_written:
                        writer.writerow(["table", "row", "label", "seed", *TOGGLES, "tau",
                                         *[f"miou_{r.domain}" for r in results], "miou_mean"])
                        header_written = True
                    mean = float(np.mean([r.miou for r in results])) if results else float("nan")
                    writer.writerow([args.table, index, label, seed,
                                     *[int(getattr(config, k)) for k in TOGGLES], repr(config.tau),
                                     *[repr(r.miou) for r in results], repr(mean)])
                    fh.flush()
                    print(f"row {index} ({label}) seed {seed}: mIoU={mean:.4f}", flush=True)
        run.outputs.append(path)
    return 0


def cmd_grad_check(args):
    from tldrseg.gradcheck import TOLERANCE, run_suite

    start = time.perf_counter()
    worst = run_suite(seeds=range(args.seeds), epsilon=args.epsilon)
    failed = False
    for name, err in worst.items():
        ok = err < TOLERANCE
        failed |= not ok
        print(f"{'ok  ' if ok else 'FAIL'} {name:<24s} worst relative error {err:.3e}")
    print(f"{len(worst)} cases, {args.seeds} seeds, {time.perf_counter() - start:.1f}s")
    return 2 if failed else 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="tldrseg", description="Texture-aware domain randomization for segmentation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    parser.commands = sub.choices

    def common(p, config=True):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out-dir", default="runs/latest")
        if config:
            p.add_argument("--config", default=None, help="JSON training config")
            p.add_argument("--iters", type=int, default=None, help="override t_total")
            p.add_argument("--domains", type=_domain_list, default=None, help="comma-separated domain names")
            p.add_argument("--toggle", type=_toggle, action="append", metavar="NAME=BOOL",
                           help="override a loss/module switch, e.g. --toggle L_TR=false")

    p = sub.add_parser("generate-data", help="render synthetic domains to image files")
    common(p, config=False)
    p.add_argument("--domains", type=_domain_list, default=None)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--targets", type=int, default=3)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--styles", type=int, default=0, help="also write this many random style images")
    p.add_argument("--format", choices=["ppm", "png"], default="ppm")
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("stylize", help="re-color one image with another image's color statistics")
    p.add_argument("--content", required=True)
    p.add_argument("--style", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.set_defaults(func=cmd_stylize)

    p = sub.add_parser("train", help="train a segmentation model")
    common(p)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on held-out domains")
    common(p, config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--domains", type=_domain_list, default=None)
    p.add_argument("--samples", type=int, default=32)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze-dims", help="estimate texture/shape dimensionality per encoder stage")
    common(p, config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pairs", type=int, default=50)
    p.set_defaults(func=cmd_analyze_dims)

    p = sub.add_parser("ablate", help="run a preset ablation table")
    common(p)
    p.add_argument("--table", type=int, choices=sorted(TABLE_PRESETS), required=True)
    p.add_argument("--seeds", type=_seed_list, default=None, help="comma-separated seeds")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("grad-check", help="finite-difference check of every differentiable op")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args, extras = parser.parse_known_args(argv)
        if extras:
            # report against the subcommand so its own help text is shown
            parser.commands[args.command].error(f"unrecognized arguments: {' '.join(extras)}")
    except UsageError as err:
        print(err, file=sys.stderr)
        return 1
    except SystemExit as done:  # --help / --version
        return done.code or 0
    try:
        return args.func(args)
    except (TLDRError, OSError, ValueError, KeyError) as err:
        print(f"tldrseg {args.command}: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
