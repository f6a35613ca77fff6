"""Command-line interface.

Subcommands: synth, train, attack, defend, eval, bench, export.
Exit codes: 0 success, 1 usage error (bad flags, missing inputs,
unknown presets), 2 runtime failure.
"""

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .attacks import ATTACK_PRESETS, attack_batch
from .dataset import SYNTH_PRESETS, generate_synthetic, load_bundle, save_bundle
from .defenses import DEFENSE_PRESETS, DefenseConfig, defend_batch
from .evaluate import (PredictionRecord, defense_effect_categories,
                       gzsl_metrics, per_class_top1, transition_cf_fc_ff)
from .harness import (auto_qualitative, config_from_dict, export_qualitative,
                      run_benchmark, write_reports)
from .model import (TrainConfig, load_model, predict, save_model, train_ale)


class UsageError(Exception):
    """Bad invocation: wrong flags, missing files, unknown presets."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; this benchmark reserves 2 for
    # runtime failures, so usage problems surface as exit 1 instead.
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _build_parser():
    parser = _Parser(prog="zslbench",
                     description="Adversarial robustness benchmark for "
                                 "attribute-based zero-shot classifiers")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[], help="generate a synthetic dataset",
                       add_help=True)
    p.add_argument("--preset", required=True, choices=sorted(SYNTH_PRESETS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    p.add_argument("--loss", default=TrainConfig.loss,
                   choices=("weighted_ranking", "structured_hinge",
                            "cross_entropy"))
    p.add_argument("--margin", type=float, default=TrainConfig.margin)
    p.add_argument("--label-smoothing", type=float, default=None)

    p = sub.add_parser("attack", help="attack the test samples of a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--preset", required=True)
    p.add_argument("--mode", choices=("zsl", "gzsl"), default="gzsl")
    p.add_argument("--scope", choices=("all", "only-correct"), default="all")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("defend", help="apply an input-transform defense")
    p.add_argument("--preset", required=True)
    p.add_argument("--images", required=True,
                   help="CSV of sample_id,flattened pixels (attack output)")
    p.add_argument("--data", required=True,
                   help="dataset directory (for image dimensions)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("eval", help="evaluate predictions")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--mode", choices=("zsl", "gzsl", "both"), default="both")
    p.add_argument("--attacked", default=None, help="CSV of attacked images")
    p.add_argument("--defended", default=None, help="CSV of defended images")
    p.add_argument("--out", default=None, help="write JSON here (else stdout)")

    p = sub.add_parser("bench", help="run the full benchmark grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mode", choices=("zsl", "gzsl", "both"), default=None)
    p.add_argument("--scope", choices=("all", "only-correct"), default=None)

    p = sub.add_parser("export", help="export qualitative PPM triples")
    p.add_argument("--config", required=True)
    p.add_argument("--samples", default=None,
                   help="comma-separated sample ids (default: auto-pick)")
    p.add_argument("--attack", default=None)
    p.add_argument("--mode", choices=("zsl", "gzsl"), default=None)
    p.add_argument("--out", required=True)
    return parser


def _require_file(path, what):
    if not os.path.isfile(path):
        raise UsageError(f"{what} not found: {path}")
    return path


def _require_dir(path, what):
    if not os.path.isdir(path):
        raise UsageError(f"{what} not found: {path}")
    return path


def _load_config(args):
    _require_file(args.config, "config file")
    with open(args.config, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"config is not valid JSON: {exc}") from exc
    modes = None
    if getattr(args, "mode", None):
        modes = list(("zsl", "gzsl")) if args.mode == "both" else [args.mode]
    scope = getattr(args, "scope", None)
    if scope:
        scope = scope.replace("-", "_")
    try:
        return config_from_dict(data, out_dir=getattr(args, "out", None),
                                seed=args.seed if hasattr(args, "seed") else None,
                                modes=modes, scope=scope)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad config: {exc}") from exc


def _write_image_csv(path, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sid, pixels in rows:
            fh.write(str(int(sid)))
            for v in np.asarray(pixels).reshape(-1):
                fh.write("," + repr(float(v)))
            fh.write("\n")


def _read_image_csv(path, shape):
    _require_file(path, "image CSV")
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            toks = line.split(",")
            out[int(toks[0])] = np.asarray(
                [float(t) for t in toks[1:]], dtype=np.float64).reshape(shape)
    return out


def _attack_space(bundle, mode):
    sp = bundle.split
    if mode == "zsl":
        return (sorted(int(c) for c in sp.unseen_classes),
                sorted(int(i) for i in sp.test_unseen_indices))
    space = sorted(int(c) for c in
                   list(sp.seen_classes) + list(sp.unseen_classes))
    ids = sorted(int(i) for i in
                 list(sp.test_seen_indices) + list(sp.test_unseen_indices))
    return space, ids


def _cmd_synth(args):
    bundle = generate_synthetic(SYNTH_PRESETS[args.preset], args.seed)
    save_bundle(bundle, args.out)
    print(f"wrote {bundle.n_samples} samples to {args.out}")
    return 0


def _cmd_train(args):
    bundle = load_bundle(_require_dir(args.data, "dataset directory"))
    cfg = TrainConfig(epochs=args.epochs, learning_rate=args.lr,
                      margin=args.margin, loss=args.loss,
                      label_smoothing=args.label_smoothing, seed=args.seed)
    model = train_ale(bundle, cfg)
    save_model(model, args.out)
    print(f"wrote checkpoint {args.out}")
    return 0


def _cmd_attack(args):
    if args.preset not in ATTACK_PRESETS:
        raise UsageError(f"unknown attack preset {args.preset!r}")
    bundle = load_bundle(_require_dir(args.data, "dataset directory"))
    model = load_model(_require_file(args.model, "checkpoint"), bundle)
    space, ids = _attack_space(bundle, args.mode)
    scope = args.scope.replace("-", "_")
    results = attack_batch(bundle, ids, model, space,
                           ATTACK_PRESETS[args.preset], mode=scope)
    os.makedirs(args.out, exist_ok=True)
    _write_image_csv(os.path.join(args.out, "adv_images.csv"),
                     [(sid, res.adv_image) for sid, res in results])
    summary = {
        "preset": args.preset,
        "mode": args.mode,
        "scope": scope,
        "n_samples": len(results),
        "samples": [
            {"sample_id": sid,
             "perturbation_l2": res.perturbation_l2,
             "perturbation_linf": res.perturbation_linf,
             "iterations_used": res.iterations_used,
             "crossed_boundary": res.crossed_boundary}
            for sid, res in results
        ],
    }
    with open(os.path.join(args.out, "adv_summary.json"), "w",
              encoding="utf-8", newline="\n") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"attacked {len(results)} samples, wrote {args.out}")
    return 0


def _cmd_defend(args):
    preset = DEFENSE_PRESETS.get(args.preset)
    if preset is None:
        raise UsageError(f"unknown defense preset {args.preset!r}")
    if not isinstance(preset, DefenseConfig):
        raise UsageError(
            f"{args.preset} is a training-time defense with no input "
            "transform; use bench with it in the defenses list")
    bundle = load_bundle(_require_dir(args.data, "dataset directory"))
    shape = bundle.images.shape[1:]
    images = _read_image_csv(args.images, shape)
    ids = sorted(images)
    cfg = replace(preset, seed=args.seed)
    defended = defend_batch([images[i] for i in ids], cfg, sample_ids=ids)
    os.makedirs(args.out, exist_ok=True)
    _write_image_csv(os.path.join(args.out, "defended_images.csv"),
                     list(zip(ids, defended)))
    print(f"defended {len(ids)} images, wrote {args.out}")
    return 0


def _cmd_eval(args):
    bundle = load_bundle(_require_dir(args.data, "dataset directory"))
    model = load_model(_require_file(args.model, "checkpoint"), bundle)
    shape = bundle.images.shape[1:]
    attacked = _read_image_csv(args.attacked, shape) if args.attacked else None
    defended = _read_image_csv(args.defended, shape) if args.defended else None
    modes = ["zsl", "gzsl"] if args.mode == "both" else [args.mode]
    out = {}
    for mode in modes:
        space, ids = _attack_space(bundle, mode)
        if attacked is not None:
            ids = [i for i in ids if i in attacked]
        records = []
        for i in ids:
            rec = PredictionRecord(
                sample_id=i,
                true_class=int(bundle.labels[i]),
                pred_original=predict(bundle.images[i], model, space),
            )
            if attacked is not None:
                rec.pred_attacked = predict(attacked[i], model, space)
            if defended is not None and i in defended:
                rec.pred_defended = predict(defended[i], model, space)
            records.append(rec)
        which = "defended" if defended is not None else \
            ("attacked" if attacked is not None else "original")
        block = {}
        if mode == "zsl":
            block["acc"] = per_class_top1(
                records, bundle.split.unseen_classes, which)
        else:
            seen = set(int(c) for c in bundle.split.seen_classes)
            rec_seen = [r for r in records if r.true_class in seen]
            rec_unseen = [r for r in records if r.true_class not in seen]
            m = gzsl_metrics(rec_seen, rec_unseen, which)
            block.update({"u": m.u, "s": m.s, "h": m.h})
        if attacked is not None:
            classes = sorted(set(r.true_class for r in records))
            rep = transition_cf_fc_ff(records, classes)
            block["transitions"] = {"cf": rep.cf, "fc": rep.fc, "ff": rep.ff}
        if attacked is not None and defended is not None \
                and all(r.pred_defended is not None for r in records):
            eff = defense_effect_categories(records)
            block["defense_effects"] = {
                "counts": eff.counts,
                "recovery_changed": eff.recovery_changed,
                "recovery_all": eff.recovery_all,
            }
        out[mode] = block
    text = json.dumps(out, sort_keys=True, indent=2) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_bench(args):
    cfg = _load_config(args)
    ledger = run_benchmark(cfg)
    write_reports(ledger, cfg.out_dir)
    auto_qualitative(ledger, os.path.join(cfg.out_dir, "qualitative"))
    print(f"wrote reports to {cfg.out_dir}")
    return 0


def _cmd_export(args):
    cfg = _load_config(args)
    ledger = run_benchmark(cfg)
    if args.samples:
        try:
            ids = [int(tok) for tok in args.samples.split(",") if tok]
        except ValueError as exc:
            raise UsageError(f"bad --samples list: {exc}") from exc
        export_qualitative(ledger, ids, args.out, mode=args.mode,
                           attack=args.attack)
    else:
        auto_qualitative(ledger, args.out)
    print(f"wrote qualitative images to {args.out}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "attack": _cmd_attack,
    "defend": _cmd_defend,
    "eval": _cmd_eval,
    "bench": _cmd_bench,
    "export": _cmd_export,
}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except Exception as exc:  # runtime failure
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
