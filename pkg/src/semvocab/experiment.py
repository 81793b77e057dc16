"""Experiment configuration and the strategy x size x repetition sweep.

A config file is flat ``key = value`` text; ``#`` starts a comment. Lists
are comma separated, and integer lists also accept ``start:stop:step``
(inclusive). Each sweep cell is persisted under ``<out>/cells`` as soon as
it finishes, so an interrupted sweep resumes where it stopped.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .clustering import KMeansParams
from .core import LabeledDataset, derive_seed
from .encoding import encode_image
from .evaluation import (PROTOCOLS, EvalConfig, LinearParams, SplitSpec, aggregate_over_nc,
                         cluster_classifier_fit, cluster_classifier_predict, compute_metrics,
                         linear_ovr_fit, linear_ovr_predict, make_split, roc_points)
from .features import SamplingConfig, extract_image, list_rasters, load_dataset, read_label_table, read_raster
from .filtering import FilterParams
from .synthgen import SynthConfig, generate
from .vocabulary import STRATEGIES, build_vocabulary, canonical_strategy

log = logging.getLogger(__name__)

RESULT_FIELDS = ["strategy", "vocab_size", "protocol", "repetition", "nc", "macro_precision",
                 "macro_recall", "macro_f", "macro_tpr", "macro_fpr"]
PER_CLASS_FIELDS = ["strategy", "vocab_size", "protocol", "repetition", "nc", "label",
                    "precision", "recall", "f_measure", "tpr", "fpr"]
METRIC_KEYS = RESULT_FIELDS[5:]
CELL_FORMAT = 1


class ConfigError(ValueError):
    pass


def _int_list(text: str) -> tuple:
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            a, b, *step = (int(v) for v in part.split(":"))
            out.extend(range(a, b + 1, step[0] if step else 1))
        else:
            out.append(int(part))
    return tuple(out)


def _float_list(text: str) -> tuple:
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _str_list(text: str) -> tuple:
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


@dataclass(frozen=True)
class ExperimentConfig:
    # dataset: features_dir + labels, images_dir + labels, or dataset = synth
    dataset: str = "files"
    features_dir: str = ""
    images_dir: str = ""
    labels: str = ""
    synth: SynthConfig = field(default_factory=SynthConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)

    strategies: tuple = STRATEGIES
    vocab_sizes: tuple = (100,)
    alpha: float = 1.0
    alpha_sweep: tuple = ()
    max_files: int = 20
    kmeans_max_iterations: int = 100
    kmeans_tol: float | None = None

    protocols: tuple = PROTOCOLS
    learn_fraction: float = 0.67
    labeled_fraction: float = 0.5
    per_class_learn: int = 30
    per_class_labeled: int = 15
    repetitions: int = 3
    nc_values: tuple = tuple(range(10, 101, 10))
    clustering_repeats: int = 25
    svm_lambda: float = 1e-3
    svm_epochs: int = 400

    seed: int = 0
    out: str = "results"
    workers: int = 1

    def __post_init__(self):
        try:
            object.__setattr__(self, "strategies", tuple(canonical_strategy(s) for s in self.strategies))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not self.strategies:
            raise ConfigError("no strategies selected")
        if len(set(self.strategies)) != len(self.strategies):
            raise ConfigError("duplicate strategy")
        sizes = tuple(int(v) for v in self.vocab_sizes)
        if not sizes or any(b <= a for a, b in zip(sizes, sizes[1:])) or sizes[0] < 1:
            raise ConfigError("vocab_sizes must be positive and strictly ascending")
        object.__setattr__(self, "vocab_sizes", sizes)
        bad = [p for p in self.protocols if p not in PROTOCOLS]
        if bad or not self.protocols:
            raise ConfigError(f"unknown protocol(s) {bad}; choose from {PROTOCOLS}")
        if self.dataset not in ("files", "synth"):
            raise ConfigError("dataset must be 'files' or 'synth'")
        if self.dataset == "files":
            if not self.labels:
                raise ConfigError("labels path required")
            if bool(self.features_dir) == bool(self.images_dir):
                raise ConfigError("give exactly one of features_dir or images_dir")
            for p in (self.labels, self.features_dir or self.images_dir):
                if not Path(p).exists():
                    raise ConfigError(f"path does not exist: {p}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        try:
            FilterParams(self.alpha, self.max_files, 0)
            for a in self.alpha_sweep:
                FilterParams(a, self.max_files, 0)
            KMeansParams(self.kmeans_max_iterations, self.kmeans_tol, 0)
            for p in self.protocols:
                self.split_spec(p)
            self.eval_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    # -- derived parameter objects -------------------------------------------------

    def split_spec(self, protocol: str) -> SplitSpec:
        return SplitSpec(protocol, self.learn_fraction, self.labeled_fraction, self.per_class_learn,
                         self.per_class_labeled, self.repetitions,
                         derive_seed(self.seed, "split", PROTOCOLS.index(protocol)))

    def eval_config(self) -> EvalConfig:
        return EvalConfig(self.nc_values, self.clustering_repeats, self.repetitions,
                          LinearParams(self.svm_lambda, self.svm_epochs))

    def fingerprint(self) -> str:
        """sha256 of every setting that can change results (excludes out and workers)."""
        d = asdict(self)
        d.pop("out")
        d.pop("workers")
        blob = json.dumps(d, sort_keys=True, default=str).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def header(self) -> str:
        return f"config_sha256={self.fingerprint()} root_seed={self.seed}"


_SCALARS = {f.name: f for f in fields(ExperimentConfig)}
_LISTS = {"strategies": _str_list, "vocab_sizes": _int_list, "alpha_sweep": _float_list,
          "protocols": _str_list, "nc_values": _int_list}


def _coerce(value: str, fld):
    """Parse a config string according to the dataclass field's annotation."""
    kind = str(fld.type)
    text = value.strip()
    if "None" in kind and text.lower() in ("", "none", "auto"):
        return None
    if kind.startswith("bool"):
        return text.lower() in ("1", "true", "yes", "on")
    if kind.startswith("int"):
        return int(text)
    if kind.startswith("float"):
        return float(text)
    return text


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def build_config(values: dict, base_dir: str | os.PathLike | None = None) -> ExperimentConfig:
    """ExperimentConfig from string key/values; ``synth_*`` and ``sampling_*`` keys are nested."""
    kwargs, synth, sampling = {}, {}, {}
    synth_fields = {f.name: f for f in fields(SynthConfig)}
    sampling_fields = {f.name: f for f in fields(SamplingConfig)}
    for key, value in values.items():
        if value is None:
            continue
        if key.startswith("synth_") and key[6:] in synth_fields:
            synth[key[6:]] = _coerce(str(value), synth_fields[key[6:]])
        elif key.startswith("sampling_") and key[9:] in sampling_fields:
            sampling[key[9:]] = _coerce(str(value), sampling_fields[key[9:]])
        elif key in _LISTS:
            kwargs[key] = _LISTS[key](value) if isinstance(value, str) else tuple(value)
        elif key in _SCALARS and key not in ("synth", "sampling"):
            kwargs[key] = _coerce(value, _SCALARS[key]) if isinstance(value, str) else value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    if base_dir is not None:
        for key in ("features_dir", "images_dir", "labels"):
            if kwargs.get(key) and not os.path.isabs(kwargs[key]):
                kwargs[key] = str(Path(base_dir) / kwargs[key])
    try:
        if synth:
            kwargs["synth"] = SynthConfig(**synth)
        if sampling:
            kwargs["sampling"] = SamplingConfig(**sampling)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return ExperimentConfig(**kwargs)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    values = parse_config_text(Path(path).read_text(encoding="utf-8")) if path else {}
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return build_config(values, Path(path).parent if path else None)


def load_experiment_dataset(cfg: ExperimentConfig) -> LabeledDataset:
    if cfg.dataset == "synth":
        return generate(cfg.synth)[0]
    if cfg.features_dir:
        return load_dataset(cfg.features_dir, cfg.labels)
    images = []
    for p in list_rasters(cfg.images_dir):
        images.append(extract_image(p.stem, read_raster(p), cfg.sampling))
    vocab, labeled, y = read_label_table(cfg.labels, [im.image_id for im in images])
    return LabeledDataset(tuple(images), labeled, y, vocab)


# --------------------------------------------------------------------------
# cells
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Cell:
    strategy: str
    vocab_size: int
    protocol: str
    repetition: int
    alpha: float | None = None

    @property
    def key(self) -> str:
        a = "" if self.alpha is None else f"_a{self.alpha:g}"
        return f"{self.strategy}{a}_m{self.vocab_size}_{self.protocol}_r{self.repetition}"


def plan_cells(cfg: ExperimentConfig) -> tuple[list[Cell], list[Cell]]:
    """Main cells in canonical order, then the extra alpha-sweep cells."""
    main, extra = [], []
    for s in cfg.strategies:
        for m in cfg.vocab_sizes:
            for p in cfg.protocols:
                for r in range(cfg.repetitions):
                    main.append(Cell(s, m, p, r, cfg.alpha if s == "filt_model" else None))
    have = {c.key for c in main}
    for a in cfg.alpha_sweep:
        for m in cfg.vocab_sizes:
            for p in cfg.protocols:
                for r in range(cfg.repetitions):
                    c = Cell("filt_model", m, p, r, float(a))
                    if c.key not in have:
                        extra.append(c)
                        have.add(c.key)
    return main, extra


def _mean_reports(reports):
    macro = {k: float(np.mean([r.macro()[k] for r in reports])) for k in METRIC_KEYS}
    per_class = {name: np.mean([getattr(r, name) for r in reports], axis=0)
                 for name in ("precision", "recall", "f_measure", "tpr", "fpr")}
    present = np.any([r.present for r in reports], axis=0)
    return macro, per_class, present


def score_protocol(cfg: ExperimentConfig, protocol: str, repetition: int, x_learn, y_learn,
                   labeled_rows, x_test, y_test, labels) -> list:
    """Classify one split; returns ``(nc, macro, per_class, present)`` per evaluated row.

    The clustering protocol yields one entry per nc (metrics averaged over
    the clustering repeats); the linear protocol yields a single entry with nc "".
    """
    pidx = PROTOCOLS.index(protocol)
    ecfg = cfg.eval_config()
    out = []
    if protocol == "holdout_clustering":
        lab_cls = np.asarray(y_learn)[labeled_rows]
        for nc in ecfg.nc_values:
            if nc > x_learn.shape[0]:
                raise ValueError(f"nc={nc} exceeds the {x_learn.shape[0]} learn images")
            reports = []
            for r in range(ecfg.clustering_repeats):
                seed = derive_seed(cfg.seed, "cluster-clf", pidx, repetition, nc, r)
                model = cluster_classifier_fit(x_learn, labeled_rows, lab_cls, nc, seed, len(labels),
                                               KMeansParams(cfg.kmeans_max_iterations, cfg.kmeans_tol))
                reports.append(compute_metrics(y_test, cluster_classifier_predict(model, x_test), labels))
            out.append((nc, *_mean_reports(reports)))
    else:
        model = linear_ovr_fit(x_learn, y_learn, ecfg.linear, len(labels))
        out.append(("", *_mean_reports([compute_metrics(y_test, linear_ovr_predict(model, x_test), labels)])))
    return out


def flatten_scores(scored, strategy, vocab_size, protocol, repetition, labels):
    rows, per_class = [], []
    for nc, macro, pc, present in scored:
        base = {"strategy": strategy, "vocab_size": vocab_size, "protocol": protocol,
                "repetition": repetition, "nc": nc}
        rows.append({**base, **macro})
        for c, name in enumerate(labels):
            if present[c]:
                per_class.append({**base, "label": name, **{k: float(v[c]) for k, v in pc.items()}})
    return rows, per_class


def run_cell(cfg: ExperimentConfig, dataset: LabeledDataset, cell: Cell) -> dict:
    """Build the cell's vocabulary on its split, encode, classify, and score."""
    pidx = PROTOCOLS.index(cell.protocol)
    split = make_split(dataset, cfg.split_spec(cell.protocol), cell.repetition)
    work = dataset.restrict(split.learn, split.labeled)
    kparams = KMeansParams(cfg.kmeans_max_iterations, cfg.kmeans_tol,
                           derive_seed(cfg.seed, "vocab", pidx, cell.repetition))
    fparams = FilterParams(cell.alpha if cell.alpha is not None else cfg.alpha, cfg.max_files,
                           derive_seed(cfg.seed, "filter", pidx, cell.repetition))
    filter_rows: list = []
    vocab = build_vocabulary(cell.strategy, cell.vocab_size, work, kparams, fparams, filter_rows)

    # classification always encodes the original, unfiltered features
    x_learn = np.vstack([encode_image(dataset.image(i), vocab).weights for i in split.learn])
    x_test = np.vstack([encode_image(dataset.image(i), vocab).weights for i in split.test])
    y_learn = dataset.class_indices(split.learn)
    y_test = dataset.class_indices(split.test)

    pos = {iid: p for p, iid in enumerate(split.learn)}
    lab_rows = np.array([pos[i] for i in split.labeled], dtype=np.int64)
    scored = score_protocol(cfg, cell.protocol, cell.repetition, x_learn, y_learn, lab_rows,
                            x_test, y_test, dataset.label_vocab.labels)
    rows, per_class = flatten_scores(scored, cell.strategy, cell.vocab_size, cell.protocol,
                                     cell.repetition, dataset.label_vocab.labels)

    return {"format": CELL_FORMAT, "config": cfg.fingerprint(), "key": cell.key,
            "alpha": cell.alpha, "rows": rows, "per_class": per_class,
            "filter_report": [asdict(r) for r in filter_rows],
            "n_learn": len(split.learn), "n_labeled": len(split.labeled), "n_test": len(split.test)}


# worker-process state
_WORKER: dict = {}


def _init_worker(cfg, dataset):
    _WORKER["cfg"], _WORKER["dataset"] = cfg, dataset


def _run_guarded(cell: Cell, cfg=None, dataset=None) -> tuple[Cell, dict | None, str | None]:
    cfg = cfg or _WORKER["cfg"]
    dataset = dataset or _WORKER["dataset"]
    try:
        return cell, run_cell(cfg, dataset, cell), None
    except Exception as exc:  # one failed cell must not stop the sweep
        log.debug("cell %s failed:\n%s", cell.key, traceback.format_exc())
        return cell, None, f"{type(exc).__name__}: {exc}"


# --------------------------------------------------------------------------
# sweep
# --------------------------------------------------------------------------

@dataclass
class SweepOutcome:
    out_dir: Path
    results: list
    failures: list
    cells_run: int
    cells_reused: int

    @property
    def ok(self) -> bool:
        return not self.failures


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".10g")
    return str(v)


def _write_csv(path: Path, header_comment: str, fieldnames, rows) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fieldnames)
        for r in rows:
            w.writerow([_fmt(r[f]) for f in fieldnames])
    os.replace(tmp, path)


def _load_cell(path: Path, cfg: ExperimentConfig) -> dict | None:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError):
        return None
    if data.get("format") != CELL_FORMAT or data.get("config") != cfg.fingerprint():
        return None
    return data


def _save_cell(path: Path, data: dict) -> None:
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(data, sort_keys=True), encoding="utf-8")
    os.replace(tmp, path)


def run_experiment(cfg: ExperimentConfig, dataset: LabeledDataset | None = None,
                   progress=None) -> SweepOutcome:
    out = Path(cfg.out)
    cells_dir = out / "cells"
    cells_dir.mkdir(parents=True, exist_ok=True)
    dataset = dataset if dataset is not None else load_experiment_dataset(cfg)
    main, extra = plan_cells(cfg)
    todo, done = [], {}
    for cell in main + extra:
        data = _load_cell(cells_dir / f"{cell.key}.json", cfg)
        if data is None:
            todo.append(cell)
        else:
            done[cell.key] = data
    reused = len(done)
    failures: dict[str, str] = {}

    def collect(cell, data, err):
        if err is not None:
            failures[cell.key] = err
            log.error("cell %s failed: %s", cell.key, err)
        else:
            _save_cell(cells_dir / f"{cell.key}.json", data)
            done[cell.key] = data
        if progress:
            progress(cell, err)

    if cfg.workers == 1 or len(todo) <= 1:
        for cell in todo:
            collect(*_run_guarded(cell, cfg, dataset))
    else:
        with ProcessPoolExecutor(cfg.workers, initializer=_init_worker,
                                 initargs=(cfg, dataset)) as pool:
            for res in pool.map(_run_guarded, todo):
                collect(*res)

    header = cfg.header()
    results = [row for c in main if c.key in done for row in done[c.key]["rows"]]
    per_class = [row for c in main if c.key in done for row in done[c.key]["per_class"]]
    _write_csv(out / "results.csv", header, RESULT_FIELDS, results)
    _write_csv(out / "per_class.csv", header, PER_CLASS_FIELDS, per_class)
    _write_curves(out, header, cfg, main, done)
    if cfg.alpha_sweep:
        _write_alpha_sweep(out, header, cfg, main + extra, done)
    _write_filter_reports(out, header, main + extra, done)
    fail_rows = [{"cell": k, "error": failures[k]} for k in
                 [c.key for c in main + extra] if k in failures]
    _write_csv(out / "failures.csv", header, ["cell", "error"], fail_rows)
    return SweepOutcome(out, results, fail_rows, len(todo), reused)


def _cell_scores(cell: Cell, data: dict) -> dict:
    """Per-cell summary: aggregated F (clustering) or plain macro values (svm)."""
    rows = data["rows"]
    mean = {k: float(np.mean([r[k] for r in rows])) for k in METRIC_KEYS}
    if cell.protocol == "holdout_clustering":
        mean["aggregated_f"] = aggregate_over_nc([r["macro_f"] for r in rows])
    else:
        mean["aggregated_f"] = rows[0]["macro_f"]
    return mean


def summarize(cfg: ExperimentConfig, cells, done) -> dict:
    """(strategy, alpha, size, protocol) -> scores averaged over construction repetitions."""
    groups: dict = {}
    for c in cells:
        if c.key in done:
            groups.setdefault((c.strategy, c.alpha, c.vocab_size, c.protocol), []).append(
                _cell_scores(c, done[c.key]))
    return {g: {k: float(np.mean([s[k] for s in v])) for k in v[0]} for g, v in groups.items()}


def _write_curves(out: Path, header: str, cfg, main, done) -> None:
    summary = summarize(cfg, main, done)
    f_rows, tpr_rows, roc_rows = [], [], []
    for s in cfg.strategies:
        for p in cfg.protocols:
            by_size = {}
            for m in cfg.vocab_sizes:
                alpha = cfg.alpha if s == "filt_model" else None
                sc = summary.get((s, alpha, m, p))
                if sc is None:
                    continue
                by_size[m] = (sc["macro_fpr"], sc["macro_tpr"])
                if p == "holdout_clustering":
                    f_rows.append({"strategy": s, "vocab_size": m, "aggregated_f": sc["aggregated_f"]})
                else:
                    tpr_rows.append({"strategy": s, "vocab_size": m, "macro_tpr": sc["macro_tpr"]})
            for pt in roc_points(by_size):
                roc_rows.append({"strategy": s, "protocol": p, "vocab_size": pt.vocab_size,
                                 "macro_fpr": pt.fpr, "macro_tpr": pt.tpr, "smallest": int(pt.smallest)})
    _write_csv(out / "curve_clustering_f.csv", header, ["strategy", "vocab_size", "aggregated_f"], f_rows)
    _write_csv(out / "curve_svm_tpr.csv", header, ["strategy", "vocab_size", "macro_tpr"], tpr_rows)
    _write_csv(out / "roc_points.csv", header,
               ["strategy", "protocol", "vocab_size", "macro_fpr", "macro_tpr", "smallest"], roc_rows)


def _write_alpha_sweep(out: Path, header: str, cfg, cells, done) -> None:
    summary = summarize(cfg, cells, done)
    rows = []
    for a in cfg.alpha_sweep:
        for m in cfg.vocab_sizes:
            for p in cfg.protocols:
                sc = summary.get(("filt_model", float(a), m, p))
                if sc is not None:
                    rows.append({"alpha": float(a), "vocab_size": m, "protocol": p,
                                 "aggregated_f": sc["aggregated_f"], "macro_tpr": sc["macro_tpr"]})
    _write_csv(out / "alpha_sweep.csv", header,
               ["alpha", "vocab_size", "protocol", "aggregated_f", "macro_tpr"], rows)


def _write_filter_reports(out: Path, header: str, cells, done) -> None:
    fields_ = ["image_id", "total_features", "kept_features", "kp_size", "kn_size"]
    for c in cells:
        if c.key in done and done[c.key]["filter_report"]:
            d = out / "filter_reports"
            d.mkdir(exist_ok=True)
            _write_csv(d / f"{c.key}.csv", header, fields_, done[c.key]["filter_report"])


def with_overrides(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    return replace(cfg, **changes)
