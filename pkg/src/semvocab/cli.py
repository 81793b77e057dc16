"""Command line entry point: extract, synth, vocab, encode, eval, experiment.

Exit status: 0 on success, 2 when some experiment cells failed, 1 on fatal errors.
"""

from __future__ import annotations

import argparse
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import backend_name
from .clustering import KMeansParams
from .core import derive_seed
from .encoding import encode_dataset, read_encoding_csv, write_encoding_csv
from .evaluation import split_classes
from .experiment import (PER_CLASS_FIELDS, RESULT_FIELDS, ConfigError, _write_csv, flatten_scores,
                         load_config, load_experiment_dataset, run_experiment, score_protocol)
from .features import (SamplingConfig, extract_image, list_rasters, read_label_table, read_raster,
                       save_dataset, write_feature_file)
from .filtering import FilterParams, write_filter_report
from .synthgen import SynthConfig, generate, write_ground_truth
from .vocabulary import build_vocabulary, read_vocabulary, write_vocabulary

log = logging.getLogger("semvocab")

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2


class CliError(Exception):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, help="root seed (64-bit unsigned)")
    p.add_argument("--out", help="output path")
    p.add_argument("--strategy", action="append",
                   help="vocabulary strategy; repeat or comma-separate (random, random_km, model, filt_model)")
    p.add_argument("--vocab-size", action="append", help="vocabulary size(s); repeat or comma-separate")
    p.add_argument("--alpha", type=float, help="filtering threshold scale")
    p.add_argument("--max-files", type=int, help="cap on known-positive/negative images")
    p.add_argument("--workers", type=int, help="worker processes for the sweep")
    p.add_argument("--features-dir", help="directory of .boff feature files")
    p.add_argument("--images-dir", help="directory of PGM/PPM images (extracted on load)")
    p.add_argument("--labels", help="image_id,label CSV")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key")


def _overrides(args) -> dict:
    ov = {}
    for item in args.set:
        if "=" not in item:
            raise CliError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        ov[k.strip().replace("-", "_")] = v.strip()
    if args.seed is not None:
        ov["seed"] = str(args.seed)
    if args.out:
        ov["out"] = args.out
    if args.strategy:
        ov["strategies"] = ",".join(args.strategy)
    if args.vocab_size:
        ov["vocab_sizes"] = ",".join(args.vocab_size)
    if args.alpha is not None:
        ov["alpha"] = str(args.alpha)
    if args.max_files is not None:
        ov["max_files"] = str(args.max_files)
    if args.workers is not None:
        ov["workers"] = str(args.workers)
    for key in ("features_dir", "images_dir", "labels"):
        if getattr(args, key, None):
            ov[key] = getattr(args, key)
            ov.setdefault("dataset", "files")
    return ov


def _config(args, **extra):
    ov = _overrides(args)
    ov.update({k: v for k, v in extra.items() if k not in ov})
    return load_config(args.config, ov)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_extract(args) -> int:
    cfg = SamplingConfig(args.grid_step, args.patch_size, args.min_side)
    rasters = list_rasters(args.images_dir)
    if not rasters:
        raise CliError(f"no images found in {args.images_dir}")
    out = Path(args.out or "features")
    fdir = out / "features"
    fdir.mkdir(parents=True, exist_ok=True)
    total = 0
    for n, path in enumerate(rasters, start=1):
        warnings: list = []
        feats = extract_image(path.stem, read_raster(path), cfg, warnings)
        write_feature_file(feats, fdir / f"{path.stem}.boff")
        total += feats.count
        log.info("[%d/%d] %s: %d features%s", n, len(rasters), path.name, feats.count,
                 f" ({'; '.join(warnings)})" if warnings else "")
    if args.labels:
        shutil.copyfile(args.labels, out / "labels.csv")
    log.info("wrote %d feature files (%d features) to %s", len(rasters), total, fdir)
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _config(args, dataset="synth")
    synth = cfg.synth
    if args.seed is not None:
        synth = SynthConfig(**{**synth.__dict__, "seed": args.seed})
    dataset, gt = generate(synth)
    out = Path(args.out or "synth")
    header = f"synth_config={'|'.join(f'{k}:{v}' for k, v in synth.__dict__.items())} root_seed={synth.seed}"
    save_dataset(dataset, out, header)
    write_ground_truth(gt, dataset, out / "ground_truth.csv", header)
    log.info("synthetic dataset: %d images, %d labels -> %s", dataset.n, dataset.k, out)
    return EXIT_OK


def cmd_vocab(args) -> int:
    cfg = _config(args)
    if len(cfg.strategies) != 1 or len(cfg.vocab_sizes) != 1:
        raise CliError("vocab needs exactly one --strategy and one --vocab-size")
    dataset = load_experiment_dataset(cfg)
    strategy, m = cfg.strategies[0], cfg.vocab_sizes[0]
    kparams = KMeansParams(cfg.kmeans_max_iterations, cfg.kmeans_tol, derive_seed(cfg.seed, "vocab"))
    fparams = FilterParams(cfg.alpha, cfg.max_files, derive_seed(cfg.seed, "filter"))
    report: list = []
    vocab = build_vocabulary(strategy, m, dataset, kparams, fparams, report)
    out = Path(args.out or f"vocab_{strategy}_{m}.bofv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_vocabulary(vocab, out)
    if report:
        write_filter_report(report, out.with_suffix(".filter.csv"), cfg.header())
    log.info("%s vocabulary, %d words of dimension %d -> %s", strategy, vocab.m, vocab.h, out)
    return EXIT_OK


def cmd_encode(args) -> int:
    cfg = _config(args)
    vocab = read_vocabulary(args.vocab)
    dataset = load_experiment_dataset(cfg)
    vectors = encode_dataset(dataset, vocab)
    out = Path(args.out or "encoding.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    empty = sum(v.empty for v in vectors)
    if empty:
        log.warning("%d images without features encoded as zero vectors", empty)
    write_encoding_csv(vectors, out,
                       f"{cfg.header()} strategy={vocab.strategy_tag} vocab_size={vocab.m}")
    log.info("encoded %d images against %d words -> %s", len(vectors), vocab.m, out)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    vectors, meta = read_encoding_csv(args.encoding)
    ids = [v.image_id for v in vectors]
    label_vocab, labeled, y = read_label_table(cfg.labels, ids)
    rows_of = {iid: r for r, iid in enumerate(labeled)}
    missing = [i for i in ids if i not in rows_of]
    if missing:
        raise CliError(f"{len(missing)} encoded images have no label, e.g. {missing[0]!r}")
    if (y.sum(axis=1) != 1).any():
        raise CliError("evaluation needs exactly one label per image")
    classes = np.array([int(np.flatnonzero(y[rows_of[i]])[0]) for i in ids])
    x = np.vstack([v.weights for v in vectors])
    pos = {iid: p for p, iid in enumerate(ids)}
    strategy = meta.get("strategy", "external")
    m = int(meta.get("vocab_size", x.shape[1]))
    results, per_class = [], []
    for protocol in cfg.protocols:
        spec = cfg.split_spec(protocol)
        for rep in range(cfg.repetitions):
            split = split_classes(ids, classes, label_vocab.labels, spec, rep)
            li = np.array([pos[i] for i in split.learn])
            ti = np.array([pos[i] for i in split.test])
            lpos = {iid: p for p, iid in enumerate(split.learn)}
            lab_rows = np.array([lpos[i] for i in split.labeled], dtype=np.int64)
            scored = score_protocol(cfg, protocol, rep, x[li], classes[li], lab_rows,
                                    x[ti], classes[ti], label_vocab.labels)
            r, pc = flatten_scores(scored, strategy, m, protocol, rep, label_vocab.labels)
            results += r
            per_class += pc
    out = Path(args.out or "eval")
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "results.csv", cfg.header(), RESULT_FIELDS, results)
    _write_csv(out / "per_class.csv", cfg.header(), PER_CLASS_FIELDS, per_class)
    log.info("wrote %d result rows to %s", len(results), out)
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _config(args)
    log.info("experiment %s, backend %s, %d worker(s)", cfg.fingerprint()[:12], backend_name(), cfg.workers)

    def progress(cell, err):
        log.info("cell %s %s", cell.key, "FAILED: " + err if err else "done")

    outcome = run_experiment(cfg, progress=progress)
    log.info("%d cells computed, %d reused, %d failed; results in %s",
             outcome.cells_run, outcome.cells_reused, len(outcome.failures), outcome.out_dir)
    return EXIT_OK if outcome.ok else EXIT_PARTIAL


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semvocab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="dense-sample and describe a directory of images")
    p.add_argument("images_dir")
    p.add_argument("--out", help="output dataset directory")
    p.add_argument("--labels", help="label CSV to copy next to the features")
    p.add_argument("--grid-step", type=int, default=16)
    p.add_argument("--patch-size", type=int, default=16)
    p.add_argument("--min-side", type=int, default=16)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("synth", help="write a synthetic labeled feature dataset")
    _common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("vocab", help="build one visual vocabulary over all labeled images")
    _common(p)
    p.set_defaults(func=cmd_vocab)

    p = sub.add_parser("encode", help="encode a dataset against a vocabulary file")
    _common(p)
    p.add_argument("--vocab", required=True, help="vocabulary file (.bofv)")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("eval", help="run the classification protocols on an encoding CSV")
    _common(p)
    p.add_argument("--encoding", required=True, help="encoding CSV from 'encode'")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="full strategy x size x repetition sweep")
    _common(p)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, ConfigError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
