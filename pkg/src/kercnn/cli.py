"""Batch command-line entry point.

Every command resolves its configuration as flags over config file over
built-in defaults, writes its artifacts into ``--out`` and leaves a
``manifest.json`` next to them. Exit codes: 0 success, 1 invalid input,
2 usage error.
"""
import argparse
from dataclasses import asdict, dataclass, field
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__, ablation, data, gradsuite, knowledge, metrics, train
from .data import Dataset, SynthConfig
from .errors import ConfigError, KercnnError, ParseError
from .head import VARIANTS
from .numerics import container
from .train import TrainConfig

OUTPUT_ROOT_ENV = "KERCNN_OUTPUT_ROOT"
MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1

FORMATS = {
    "dataset": f"{data.FORMAT}/{data.VERSION}",
    "knowledge": f"{knowledge.FORMAT}/{knowledge.VERSION}",
    "checkpoint": f"{train.CHECKPOINT_FORMAT}/{train.CHECKPOINT_VERSION}",
    "tensors": f"{container.FORMAT}/{container.VERSION}",
    "manifest": f"kercnn-manifest/{MANIFEST_VERSION}",
}

log = logging.getLogger("kercnn")


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    formats: dict = field(default_factory=lambda: dict(FORMATS))
    version: str = __version__
    duration_s: float = 0.0

    def write(self, out_dir):
        path = os.path.join(out_dir, MANIFEST_NAME)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=1, sort_keys=True)
            fh.write("\n")
        return path


# -- configuration --------------------------------------------------------------

def default_config(command=None):
    tcfg = TrainConfig(lr=ablation.ABLATION_LR) if command == "ablate" else TrainConfig()
    return {
        "seed": 0,
        "synth": asdict(SynthConfig()),
        "train": tcfg.to_dict(),
        "eval": {"jitter": 0.0, "iou_grid": list(metrics.DEFAULT_GRID),
                 "f1_grid": list(metrics.DEFAULT_GRID)},
    }


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=list))


def _merge(base, override, where):
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"{where}: unknown key {key!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: {key!r} must be an object")
            _merge(base[key], value, f"{where}.{key}")
        else:
            base[key] = value
    return base


def _parse_grid(text):
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("grid is empty")
    return values


def resolve_config(args):
    """Defaults, then the ``--config`` file, then explicit flags."""
    cfg = _jsonable(default_config(args.command))
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{args.config}: {exc.msg}", exc.lineno, exc.colno) from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{args.config}: top level must be an object")
        _merge(cfg, doc, args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfg["train"]["seed"] = cfg["seed"]
    if getattr(args, "variant", None):
        cfg["train"]["variant"] = args.variant
    for name in ("iou_grid", "f1_grid"):
        grid = getattr(args, name, None)
        if grid is not None:
            cfg["eval"][name] = grid
            cfg["train"][name] = grid
    if getattr(args, "jitter", None) is not None:
        cfg["eval"]["jitter"] = args.jitter
    if getattr(args, "gt_boxes", False):
        cfg["eval"]["jitter"] = 0.0
    if getattr(args, "epochs", None) is not None:
        cfg["train"]["epochs"] = args.epochs
    if getattr(args, "lr", None) is not None:
        cfg["train"]["lr"] = args.lr
    # surface bad values now, with the section name, instead of mid-run
    SynthConfig.from_dict(cfg["synth"]).validate()
    TrainConfig.from_dict(cfg["train"]).validate()
    if cfg["eval"]["jitter"] < 0:
        raise ConfigError("eval.jitter must be non-negative")
    return cfg


def output_dir(args):
    root = os.environ.get(OUTPUT_ROOT_ENV, "kercnn-runs")
    out = args.out or args.command
    path = out if os.path.isabs(out) else os.path.join(root, out)
    os.makedirs(path, exist_ok=True)
    return path


# -- commands -------------------------------------------------------------------

def _write(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _dump_json(path, obj):
    _write(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")


def cmd_synth(args, cfg, out, man):
    synth = SynthConfig.from_dict(cfg["synth"])
    splits = ("train", "val") if args.split == "both" else (args.split,)
    for split in splits:
        ds = data.gen_synthetic(synth, cfg["seed"], split)
        path = os.path.join(out, f"{split}.json")
        data.save_dataset(ds, path)
        man.outputs[split] = path
        man.outputs[f"{split}_tensors"] = data._tensor_path(path)
        print(f"{split}: {len(ds.samples)} samples, "
              f"{sum(len(s.parts) for s in ds.samples)} parts -> {path}")


def cmd_build_knowledge(args, cfg, out, man):
    ds = data.load_dataset(args.data)
    man.inputs["data"] = args.data
    kg = knowledge.build_graph(ds)
    path = os.path.join(out, "knowledge.json")
    knowledge.save_graph(kg, path)
    man.outputs["knowledge"] = path
    print(f"knowledge {kg.g.shape[0]}x{kg.g.shape[1]}, "
          f"{int(np.count_nonzero(kg.g))} nonzero entries -> {path}")


def _check_vocab(kg, ds, where):
    if list(kg.part_names) != list(ds.part_names) or list(kg.attribute_names) != list(ds.attribute_names):
        raise ConfigError(f"{where}: vocabulary does not match the training data")


def cmd_train(args, cfg, out, man):
    tcfg = TrainConfig.from_dict(cfg["train"]).validate()
    tr = data.load_dataset(args.data)
    man.inputs["data"] = args.data
    va = None
    if args.val:
        va = data.load_dataset(args.val)
        man.inputs["val"] = args.val
    kg = None
    if args.knowledge:
        kg = knowledge.load_graph(args.knowledge)
        _check_vocab(kg, tr, args.knowledge)
        man.inputs["knowledge"] = args.knowledge
    ckpt = train.fit(tcfg, tr, va, kg)
    path = os.path.join(out, "checkpoint.bin")
    train.save_checkpoint(ckpt, path)
    hist = os.path.join(out, "history.csv")
    _write(hist, train.history_csv(ckpt.history))
    man.outputs.update(checkpoint=path, history=hist)
    last = ckpt.history[-1] if ckpt.history else {}
    print(f"trained {tcfg.variant} for {tcfg.epochs} epochs; final loss "
          f"{last.get('loss', float('nan')):.4f} -> {path}")


def cmd_eval(args, cfg, out, man):
    ev = cfg["eval"]
    ds = data.load_dataset(args.data)
    man.inputs["data"] = args.data
    if args.predictions:
        with open(args.predictions, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{args.predictions}: {exc.msg}", exc.lineno, exc.colno) from None
        man.inputs["predictions"] = args.predictions
        preds = metrics.predictions_from_json(doc)
        report = metrics.ap_iou_f1(preds, train.ground_truth(ds), ev["iou_grid"], ev["f1_grid"])
    else:
        if not args.checkpoint:
            raise ConfigError("eval needs --checkpoint or --predictions")
        ckpt = train.load_checkpoint(args.checkpoint)
        man.inputs["checkpoint"] = args.checkpoint
        report = train.evaluate(ckpt, ds, None, ev["iou_grid"], ev["f1_grid"],
                                jitter=ev["jitter"], seed=cfg["seed"])
    rj, rc = os.path.join(out, "report.json"), os.path.join(out, "report.csv")
    _write(rj, report.to_json())
    _write(rc, report.to_csv())
    man.outputs.update(report=rj, table=rc)
    print(f"ap_all {report.ap_all:.4f}  ap_50_f1 {report.ap_50_f1:.4f}  "
          f"ap_75_f1 {report.ap_75_f1:.4f}  ({report.n_instances} instances)")


def cmd_gradcheck(args, cfg, out, man):
    results, seconds = gradsuite.timed_suite(range(cfg["seed"], cfg["seed"] + args.seeds),
                                             args.tolerance)
    for name, r in results.items():
        status = "ok" if r["passed"] else "FAIL"
        label = "caught" if name == "negative_control" and r["passed"] else status
        print(f"{name:24s} max_rel_error {r['max_rel_error']:.3e}  {label}")
    print(f"{len(results)} checks in {seconds:.1f}s")
    path = os.path.join(out, "gradcheck.json")
    _dump_json(path, {"tolerance": args.tolerance, "seeds": args.seeds, "results": results})
    man.outputs["results"] = path
    return 0 if all(r["passed"] for r in results.values()) else 1


def cmd_ablate(args, cfg, out, man):
    synth = SynthConfig.from_dict(cfg["synth"])
    tcfg = TrainConfig.from_dict(cfg["train"])
    splits = None
    if args.data:
        if not args.val:
            raise ConfigError("--data needs --val for ablation")
        splits = data.load_dataset(args.data), data.load_dataset(args.val)
        man.inputs.update(data=args.data, val=args.val)
    rows, rates = ablation.run(synth, cfg["seed"], tcfg, VARIANTS, splits)
    checks = ablation.checks(rows, rates)
    table = os.path.join(out, "ablation.csv")
    _write(table, ablation.to_csv(rows))
    summary = os.path.join(out, "ablation.json")
    _dump_json(summary, {"rows": rows, "base_rates": rates, "checks": checks})
    man.outputs.update(table=table, summary=summary)
    sys.stdout.write(ablation.to_csv(rows))
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")


def cmd_predict(args, cfg, out, man):
    ckpt = train.load_checkpoint(args.checkpoint)
    ds = data.load_dataset(args.data)
    man.inputs.update(checkpoint=args.checkpoint, data=args.data)
    if not 0 <= args.sample < len(ds.samples):
        raise ConfigError(f"--sample {args.sample} outside 0..{len(ds.samples) - 1}")
    one = Dataset([ds.samples[args.sample]], ds.part_names, ds.attribute_names, ds.split, ds.rules)
    dets = data.detections_from_gt(one, cfg["eval"]["jitter"], cfg["seed"])
    preds, table, probs = train.predict_dataset(ckpt, one, dets)
    parts = []
    for r, p in enumerate(preds):
        parts.append({
            "part": int(table.part_of[r]), "class": p.part_class,
            "class_name": ds.part_names[p.part_class],
            "box": list(p.box.as_tuple()), "score": p.score,
            "probabilities": [float(v) for v in probs[r]],
            "predicted": [ds.attribute_names[a] for a in sorted(p.attributes)],
        })
    path = os.path.join(out, "predictions.json")
    _dump_json(path, {"sample": args.sample, "attribute_names": list(ds.attribute_names),
                      "parts": parts})
    man.outputs["predictions"] = path
    for part in parts:
        print(f"part {part['part']} ({part['class_name']}): {', '.join(part['predicted']) or '-'}")


COMMANDS = {
    "synth": cmd_synth, "build-knowledge": cmd_build_knowledge, "train": cmd_train,
    "eval": cmd_eval, "gradcheck": cmd_gradcheck, "ablate": cmd_ablate, "predict": cmd_predict,
}


# -- parser ---------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="master seed (default 0)")
    common.add_argument("--config", help="JSON file with seed/synth/train/eval sections")
    common.add_argument("--out", help=f"output directory, relative to ${OUTPUT_ROOT_ENV} "
                        "(default: kercnn-runs/<command>)")
    common.add_argument("--print-config", action="store_true",
                        help="print the resolved configuration and exit")
    common.add_argument("-v", "--verbose", action="store_true")

    grids = argparse.ArgumentParser(add_help=False)
    grids.add_argument("--iou-grid", type=_parse_grid, help="comma-separated IoU thresholds")
    grids.add_argument("--f1-grid", type=_parse_grid, help="comma-separated F1 thresholds")

    boxes = argparse.ArgumentParser(add_help=False)
    mode = boxes.add_mutually_exclusive_group()
    mode.add_argument("--gt-boxes", action="store_true", help="use ground-truth boxes (default)")
    mode.add_argument("--jitter", type=float, help="perturb GT boxes by this relative amount")

    variant = argparse.ArgumentParser(add_help=False)
    variant.add_argument("--variant", choices=VARIANTS)

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--epochs", type=int)
    training.add_argument("--lr", type=float)

    parser = argparse.ArgumentParser(prog="kercnn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--split", choices=["train", "val", "both"], default="both")

    p = sub.add_parser("build-knowledge", parents=[common], help="co-occurrence knowledge from a dataset")
    p.add_argument("--data", required=True)

    p = sub.add_parser("train", parents=[common, grids, variant, training], help="train a head")
    p.add_argument("--data", required=True, help="training dataset (.json)")
    p.add_argument("--val", help="validation dataset, for per-epoch F1")
    p.add_argument("--knowledge", help="knowledge file (default: built from --data)")

    p = sub.add_parser("eval", parents=[common, grids, boxes], help="AP and attribute F1 report")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--predictions", help="score a predictions JSON file instead of a checkpoint")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--tolerance", type=float, default=1e-4)

    p = sub.add_parser("ablate", parents=[common, grids, training],
                       help="train all head variants and compare")
    p.add_argument("--data", help="training dataset (default: generated from the synth config)")
    p.add_argument("--val")

    p = sub.add_parser("predict", parents=[common, boxes], help="attribute probabilities for one sample")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--sample", type=int, default=0)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.print_config:
            print(json.dumps(cfg, indent=1, sort_keys=True))
            return 0
        out = output_dir(args)
        man = RunManifest(args.command, cfg, cfg["seed"])
        start = time.perf_counter()
        code = COMMANDS[args.command](args, cfg, out, man) or 0
        man.duration_s = time.perf_counter() - start
        man.write(out)
        return code
    except (KercnnError, OSError, ValueError) as exc:
        print(f"kercnn {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
