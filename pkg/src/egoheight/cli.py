"""Command-line entry point: ``egoheight <subcommand> [flags]``.

Every flag may also come from a JSON file given with ``--config``; keys are
flag names with dashes replaced by underscores, and flags given on the
command line take precedence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

log = logging.getLogger("egoheight")

SUBCOMMANDS = ("synth", "preprocess", "train", "eval", "baseline", "robustness", "gradcheck")


def _csv_list(cast=str):
    def parse(text):
        return tuple(cast(t) for t in str(text).split(",") if t.strip())
    return parse


def _common(p: argparse.ArgumentParser, manifest: bool = True) -> None:
    g = p.add_argument_group("global")
    g.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    g.add_argument("--out", default=None, help="output path (directory unless stated)")
    if manifest:
        g.add_argument("--manifest", default=None, help="manifest file written by 'synth'")
    g.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    g.add_argument("--format", choices=("csv", "json"), default="csv", help="report format (default csv)")
    g.add_argument("--config", default=None, help="JSON file of flag values (lower precedence than flags)")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _training(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    g.add_argument("--lr", type=float, default=1e-3, help="learning rate (default 1e-3)")
    g.add_argument("--batch-size", type=int, default=16)
    g.add_argument("--epochs", type=int, default=200, help="maximum epochs (default 200)")
    g.add_argument("--patience", type=int, default=20, help="early-stopping patience in epochs")
    g.add_argument("--val-fraction", type=float, default=0.1)
    g.add_argument("--head-epochs", type=int, default=200, help="epochs for the two-stream fusion head")
    g.add_argument("--fine-tune", action="store_true", help="train two-stream nets end to end")
    g.add_argument("--fixed-label-scale", action="store_true", help="normalize labels over 85-188 cm")
    g.add_argument("--classifier-base", choices=("spatial", "temporal"), default="spatial")
    g.add_argument("--cache-dir", default=None, help="clip cache directory written by 'preprocess'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="egoheight", description="Camera-height estimation from egocentric video.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{" + ",".join(SUBCOMMANDS) + "}")

    p = sub.add_parser("synth", help="render a synthetic cohort (manifest + frame archives)")
    _common(p, manifest=False)
    p.add_argument("--persons", type=int, default=10, help="number of persons (default 10)")
    p.add_argument("--duration", type=float, default=10.0, help="seconds per walk (default 10)")
    p.add_argument("--fps", type=float, default=30.0, help="render frame rate (default 30)")
    p.add_argument("--size", type=int, default=64, help="square render size in pixels (default 64)")
    p.add_argument("--pedestrians", type=int, default=3, help="pedestrians in dynamic walks (default 3)")
    p.add_argument("--backgrounds", type=_csv_list(), default=("static", "dynamic"))

    p = sub.add_parser("preprocess", help="convert archives to clip caches (.egc)")
    _common(p)

    p = sub.add_parser("train", help="train one architecture on a manifest and save a model file")
    _common(p)
    p.add_argument("--arch", default=None,
                   choices=("temporal", "spatial", "twostream1", "twostream50", "classifier3", "classifier5",
                            "classifier11"), help="architecture to train (required)")
    p.add_argument("--background", choices=("static", "dynamic"), default=None, help="train on one setting only")
    _training(p)

    p = sub.add_parser("eval", help="leave-one-person-out or cross-domain evaluation")
    _common(p)
    p.add_argument("--arch", type=_csv_list(), default=(),
                   help="comma-separated archs (required); two-stream runs reuse the single streams of the same fold")
    p.add_argument("--split", choices=("loo", "cross_domain"), default="loo")
    p.add_argument("--background", choices=("static", "dynamic"), default=None, help="LOO on one setting only")
    p.add_argument("--train-domain", choices=("static", "dynamic"), default="static")
    p.add_argument("--test-domain", choices=("static", "dynamic"), default="dynamic")
    _training(p)

    p = sub.add_parser("baseline", help="HOG/raw-pixel linear SVC bin classification")
    _common(p)
    p.add_argument("--scheme", choices=("mount3", "cm5", "cm11"), default="mount3")
    p.add_argument("--descriptor", choices=("hog", "raw"), default="hog")
    p.add_argument("--split", choices=("kfold", "loo", "budget"), default="kfold")
    p.add_argument("--k", type=int, default=3, help="folds for --split kfold (default 3)")
    p.add_argument("--budgets", type=_csv_list(int), default=(1, 5, 20, 50, 75))
    p.add_argument("--budget-seeds", type=_csv_list(int), default=(0, 1, 2))
    p.add_argument("--svc-c", type=float, default=1.0, help="SVC regularization C (default 1)")
    p.add_argument("--svc-iters", type=int, default=2000, help="subgradient iterations (default 2000)")
    p.add_argument("--background", choices=("static", "dynamic"), default=None)

    p = sub.add_parser("robustness", help="train on one background setting, test on the other")
    _common(p)
    p.add_argument("--arch", type=_csv_list(), default=("temporal", "spatial"))
    _training(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer and reduced stream chains")
    _common(p, manifest=False)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--max-entries", type=int, default=12, help="entries checked per array (default 12)")
    parser.subcommand_parsers = sub.choices
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        parser.error(f"cannot read config {args.config}: {exc}")
    if not isinstance(cfg, dict):
        parser.error("config file must hold a JSON object")
    known = set(vars(args)) - {"command", "config"}
    unknown = sorted(set(cfg) - known)
    if unknown:
        parser.error(f"unknown config keys for '{args.command}': {', '.join(unknown)}")
    sub = parser.subcommand_parsers[args.command]
    for action in sub._actions:  # noqa: SLF001
        if action.dest in cfg and action.type is not None and isinstance(cfg[action.dest], str):
            cfg[action.dest] = action.type(cfg[action.dest])
    sub.set_defaults(**{k: tuple(v) if isinstance(v, list) else v for k, v in cfg.items()})
    args = parser.parse_args(argv)
    for action in sub._actions:  # noqa: SLF001
        if action.choices is not None and action.dest in cfg and getattr(args, action.dest) not in action.choices:
            parser.error(f"config: {action.dest}={getattr(args, action.dest)!r} not in {list(action.choices)}")
    return args


def _train_config(args):
    from .models import TrainConfig

    return TrainConfig(
        optimizer=args.optimizer, lr=args.lr, batch_size=args.batch_size, max_epochs=args.epochs,
        patience=args.patience, val_fraction=args.val_fraction, seed=args.seed,
        fixed_label_scale=args.fixed_label_scale, fine_tune=args.fine_tune,
        classifier_base=args.classifier_base, head_epochs=args.head_epochs,
    )


def _out_dir(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(args):
    from .dataset import load_manifest

    if not args.manifest:
        raise ValueError("--manifest is required")
    return load_manifest(args.manifest)


def _bank(args, manifest):
    from .evaluation import load_clips

    return load_clips(manifest, cache_dir=getattr(args, "cache_dir", None))


# -- subcommands -------------------------------------------------------------


def cmd_synth(args) -> int:
    from .dataset import make_cohort, render_synthetic, write_frames, write_manifest

    out = Path(args.out or "synth")
    if out.exists() and any(out.iterdir()) and not args.force:
        raise ValueError(f"{out} is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    items = make_cohort(n_persons=args.persons, seed=args.seed, backgrounds=args.backgrounds,
                        duration_s=args.duration, fps=args.fps, render_size=(args.size, args.size),
                        n_pedestrians=args.pedestrians)
    metas = []
    for it in items:
        frames, meta = render_synthetic(it.cfg, it.video_id, it.person_id, it.mount)
        write_frames(frames, meta, out)
        metas.append(meta)
        log.info("rendered %s (%.1f cm)", meta.video_id, meta.height_cm)
    path = write_manifest(out / "manifest.tsv", metas)
    print(f"wrote {len(metas)} videos and {path}")
    return 0


def cmd_preprocess(args) -> int:
    from .evaluation import load_clips

    manifest = _manifest(args)
    out = _out_dir(args, "clips")
    bank = load_clips(manifest, cache_dir=out)
    n = sum(len(c) for c in bank.clips.values())
    print(f"wrote clip caches for {len(bank.clips)} videos ({n} clips) to {out}")
    return 0


def cmd_train(args) -> int:
    from .models import train_model

    if not args.arch:
        raise ValueError("--arch is required")
    manifest = _manifest(args)
    bank = _bank(args, manifest)
    vids = bank.videos(background=args.background)
    art = train_model(args.arch, bank.gather(vids), _train_config(args))
    out = _out_dir(args, "models")
    path = art.save(out / f"{args.arch}.egm")
    print(f"wrote {path}")
    return 0


def cmd_eval(args) -> int:
    from .baselines import accuracy_row, write_accuracy_csv
    from .evaluation import emit_report, emit_scatter, run_cross_domain, run_loo, run_loo_classifier
    from .models import ARCHS, CLASSIFIER_SCHEMES

    if not args.arch:
        raise ValueError("--arch is required")
    for a in args.arch:
        if a not in ARCHS:
            raise ValueError(f"unknown arch {a!r}; choose from {', '.join(ARCHS)}")
    bank = _bank(args, _manifest(args))
    cfg = _train_config(args)
    out = _out_dir(args, "reports")
    streams: dict = {}
    for arch in args.arch:
        if arch.startswith("classifier"):
            if args.split != "loo":
                raise ValueError("classifier archs support --split loo only")
            bins = int(arch[len("classifier"):])
            res = run_loo_classifier(bank, bins, cfg, background=args.background)
            split = "loo_person" + (f"[{args.background}]" if args.background else "")
            path = out / f"{arch}_{split}_accuracy.csv"
            write_accuracy_csv([accuracy_row(CLASSIFIER_SCHEMES[bins], "cnn", split, res["accuracy"], args.seed,
                                             kernel="softmax")], path)
            print(f"{arch}: video accuracy {res['accuracy']:.3f} (clip {res['clip_accuracy']:.3f}) -> {path}")
            continue
        if args.split == "loo":
            rep = run_loo(bank, arch, cfg, background=args.background, stream_cache=streams)
        else:
            rep = run_cross_domain(bank, arch, args.train_domain, args.test_domain, cfg)
        ext = "json" if args.format == "json" else "csv"
        paths = emit_report(rep, out / f"{rep.experiment_id}.{ext}", args.format)
        emit_scatter(rep, out / f"{rep.experiment_id}_scatter.csv")
        r2 = "undefined" if rep.r2 is None else f"{rep.r2:.3f}"
        print(f"{arch}: MAE {rep.mae_cm:.2f} cm, MSE {rep.mse_cm2:.2f} cm^2, r2 {r2} -> {paths[0]}")
    return 0


def cmd_baseline(args) -> int:
    from .baselines import (FrameVideo, accuracy_row, frame_budget_curve, kfold_cv, loo_accuracy,
                            write_accuracy_csv)
    from .dataset import read_frames

    manifest = _manifest(args)
    entries = [m for m in manifest.entries if args.background is None or m.background == args.background]
    videos = [FrameVideo(read_frames(manifest.archive_path(m)), m) for m in entries]
    kw = {"C": args.svc_c, "n_iter": args.svc_iters}
    if args.split == "kfold":
        res = kfold_cv(videos, args.k, args.scheme, args.descriptor, seed=args.seed, **kw)
        rows = [accuracy_row(args.scheme, args.descriptor, f"kfold{args.k}", res["accuracy"], res["seed"])]
    elif args.split == "loo":
        acc = loo_accuracy(videos, args.scheme, args.descriptor, seed=args.seed, **kw)
        rows = [accuracy_row(args.scheme, args.descriptor, "loo_person", acc, args.seed)]
    else:
        rows = frame_budget_curve(videos, args.budgets, args.scheme, args.descriptor, args.budget_seeds, **kw)
    out = _out_dir(args, "reports")
    path = write_accuracy_csv(rows, out / f"baseline_{args.scheme}_{args.descriptor}_{args.split}.csv")
    for r in rows:
        print(f"{r['scheme']} {r['descriptor']} {r['split']} seed={r['seed']}: {r['accuracy']:.3f}")
    print(f"wrote {path}")
    return 0


def cmd_robustness(args) -> int:
    from .evaluation import dynamic_training_helps, emit_report, emit_table, run_robustness

    bank = _bank(args, _manifest(args))
    reports = run_robustness(bank, args.arch, _train_config(args))
    out = _out_dir(args, "reports")
    ext = "json" if args.format == "json" else "csv"
    for rep in reports:
        emit_report(rep, out / f"{rep.experiment_id}.{ext}", args.format)
        print(f"{rep.arch:<10} train {rep.extra['train_domain']:<8} test {rep.extra['test_domain']:<8} "
              f"MAE {rep.mae_cm:7.2f}  MSE {rep.mse_cm2:9.2f}")
    path = emit_table(reports, out / "robustness_table.csv")
    if "temporal" in args.arch:
        dynamic_training_helps(reports, "temporal")
    print(f"wrote {path}")
    return 0


def cmd_gradcheck(args) -> int:
    from .models import gradcheck_suite

    results = gradcheck_suite(tolerance=args.tolerance, seed=args.seed, max_entries=args.max_entries)
    text = []
    for name, rep in results:
        text.append(f"== {name}: max rel err {rep.max_rel_err:.3e} {'ok' if rep.passed else 'FAIL'}")
        text.append(rep.format_table())
    ok = all(rep.passed for _, rep in results)
    text.append(f"gradcheck {'passed' if ok else 'FAILED'} (tolerance {args.tolerance:g})")
    print("\n".join(text))
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text("\n".join(text) + "\n", encoding="utf-8")
    return 0 if ok else 1


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "eval": cmd_eval,
    "baseline": cmd_baseline,
    "robustness": cmd_robustness,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = _apply_config(parser, argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError) as exc:
        print(f"egoheight {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
