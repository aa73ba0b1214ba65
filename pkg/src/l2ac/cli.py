"""Command-line entry point: ``l2ac <command> [flags]``.

Exit status is 0 on success, 1 on usage errors and 2 on runtime errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .embeddings import load_embeddings, save_embeddings
from .errors import L2ACError
from .evaluation import C_REJ, evaluate, summarize
from .meta_classifier import MetaClassifierParams, check_gradients
from .registry import SeenClassSet
from .synthetic import SyntheticSpec, gen_synthetic
from .training import TrainConfig, build_pairs, train

log = logging.getLogger("l2ac")

GRAD_TOL = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _seen_sizes(text):
    try:
        sizes = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not sizes:
        raise argparse.ArgumentTypeError("at least one seen size is required")
    return sizes


def build_parser():
    p = _Parser(prog="l2ac", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-synth", help="write a Gaussian-cluster embedding file")
    g.add_argument("--classes", type=int, required=True)
    g.add_argument("--per-class", type=int, required=True)
    g.add_argument("--dim", type=int, required=True)
    g.add_argument("--sigma", type=float, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="meta-train a model")
    t.add_argument("--meta", required=True, help="embedding file of meta-training classes")
    t.add_argument("--val", required=True, help="embedding file of validation classes")
    t.add_argument("--config", required=True, help="TrainConfig file (key = value lines)")
    t.add_argument("--out", required=True, help="model checkpoint path")
    t.add_argument("--plot", help="write the loss curves to this image file")

    e = sub.add_parser("eval", help="open-world evaluation over growing seen sets")
    e.add_argument("--model", required=True)
    e.add_argument("--registry", required=True)
    e.add_argument("--test", required=True, help="embedding file of held-out test examples")
    e.add_argument("--seen-sizes", type=_seen_sizes, required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--vote", type=int, help="score classes by mean top-N match score")

    c = sub.add_parser("classify", help="classify or reject each input row")
    c.add_argument("--model", required=True)
    c.add_argument("--registry", required=True)
    c.add_argument("--input", required=True)
    c.add_argument("--explain", action="store_true", help="print per-class probabilities")
    c.add_argument("--vote", type=int)

    a = sub.add_parser("registry-add", help="add a class to a registry")
    a.add_argument("--registry", required=True)
    a.add_argument("--label", required=True)
    a.add_argument("--examples", required=True)

    r = sub.add_parser("registry-remove", help="remove a class from a registry")
    r.add_argument("--registry", required=True)
    r.add_argument("--label", required=True)

    k = sub.add_parser("grad-check", help="finite-difference check of the full loss")
    k.add_argument("--dim", type=int, default=8)
    k.add_argument("--k", type=int, default=3)
    k.add_argument("--hidden", type=int, default=16)
    k.add_argument("--seed", type=int, default=0)
    return p


def cmd_gen_synth(args):
    m = gen_synthetic(SyntheticSpec(args.classes, args.per_class, args.dim, args.sigma, args.seed))
    save_embeddings(m, args.out)
    print(f"wrote {len(m)} rows, {len(m.class_labels())} classes, dim {m.dim} to {args.out}")
    return 0


def cmd_train(args):
    cfg = TrainConfig.load(args.config)
    meta = load_embeddings(args.meta)
    val = load_embeddings(args.val)
    data = meta.concat(val)
    val_classes = val.class_labels()
    train_pairs = build_pairs(data, meta.class_labels(), cfg.k, cfg.n)
    val_pairs = build_pairs(data, val_classes, cfg.k, min(cfg.n, len(val_classes) - 1))
    history = []
    params = train(train_pairs, val_pairs, cfg, data, history=history)
    params.save(args.out)
    best = min(history, key=lambda h: h["val_loss"]) if history else None
    print(f"pairs: {len(train_pairs)} train, {len(val_pairs)} validation")
    print(f"epochs run: {len(history)}")
    if best is not None:
        print(f"best validation loss {best['val_loss']!r} at epoch {best['epoch']}")
    print(f"model sha256 {params.digest()}")
    if args.plot and history:
        from .plotting import plot_history

        plot_history(history, args.plot)
    return 0


def _load_registry(path, must_exist=True):
    path = Path(path)
    if not path.exists():
        if must_exist:
            raise FileNotFoundError(f"registry manifest not found: {path}")
        return None
    return SeenClassSet.load(path)


def cmd_eval(args):
    from .plotting import plot_report, plot_seen_sizes

    params = MetaClassifierParams.load(args.model)
    full = _load_registry(args.registry)
    test = load_embeddings(args.test)
    report_path = Path(args.report)
    stem = report_path.with_suffix("") if report_path.suffix else report_path
    texts, flat, reports = [], [], []
    for size in args.seen_sizes:
        if size < 1 or size > len(full.order):
            raise L2ACError(f"seen size {size} outside 1..{len(full.order)}")
        reg = SeenClassSet(full.dim)
        for label in full.order[:size]:
            reg.add_class(label, full.members(label))
        report, _ = evaluate(params, reg, test, vote=args.vote)
        report.meta.update({"seen_size": size, "model_sha256": params.digest()})
        reports.append(report)
        texts.append(report.to_text())
        flat.append(report.to_flat(prefix=f"s{size}."))
        Path(f"{stem}.s{size}.confusion.tsv").write_text(report.confusion_lines(), encoding="utf-8")
        plot_report(report, f"{stem}.s{size}.png", title=f"|S| = {size}")
        print(f"|S|={size}\tweighted_f1={report.weighted_f1:.4f}\tmacro_f1={report.macro_f1:.4f}"
              f"\t{C_REJ} support={report.support[C_REJ]}")
    report_path.write_text("".join(texts), encoding="utf-8")
    Path(f"{stem}.summary.tsv").write_text("".join(flat), encoding="utf-8")
    if len(reports) > 1:
        plot_seen_sizes(summarize(reports), f"{stem}.seen_sizes.png")
    return 0


def cmd_classify(args):
    params = MetaClassifierParams.load(args.model)
    reg = _load_registry(args.registry)
    inputs = load_embeddings(args.input)
    for row in range(len(inputs)):
        pred = reg.classify(inputs.vectors[row], params, vote=args.vote)
        print(f"{inputs.ids[row]}\t{pred.outcome}")
        if args.explain:
            for label, prob in pred.ranked():
                print(f"\t{label}\t{prob!r}")
    return 0


def cmd_registry_add(args):
    examples = load_embeddings(args.examples)
    reg = _load_registry(args.registry, must_exist=False) or SeenClassSet(examples.dim)
    reg.add_class(args.label, examples)
    reg.save(args.registry)
    print(f"added {args.label} ({len(examples)} examples); {len(reg)} classes, generation {reg.generation}")
    return 0


def cmd_registry_remove(args):
    reg = _load_registry(args.registry)
    reg.remove_class(args.label)
    reg.save(args.registry)
    print(f"removed {args.label}; {len(reg)} classes, generation {reg.generation}")
    return 0


def cmd_grad_check(args):
    err = check_gradients(args.dim, args.k, args.hidden, args.seed)
    ok = err < GRAD_TOL
    print(f"max relative error {err:.3e} ({'ok' if ok else 'FAIL'}, tolerance {GRAD_TOL:g})")
    return 0 if ok else 2


COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "classify": cmd_classify,
    "registry-add": cmd_registry_add,
    "registry-remove": cmd_registry_remove,
    "grad-check": cmd_grad_check,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (L2ACError, OSError, ValueError, KeyError) as exc:
        print(f"l2ac {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
