import csv
import time

import numpy as np
import pytest

from semvocab.cli import main
from semvocab.experiment import (ConfigError, build_config, load_config, parse_config_text, plan_cells,
                                 run_experiment)
from semvocab.features import RasterImage, encode_pgm, read_feature_file

TINY = {
    "dataset": "synth", "synth_k": "3", "synth_images_per_label": "32", "synth_features_per_image": "50",
    "vocab_sizes": "12,24", "repetitions": "2", "nc_values": "5:20:5", "clustering_repeats": "3",
    "svm_epochs": "100", "seed": "11",
}


def tiny(tmp_path, **kw):
    values = dict(TINY, out=str(tmp_path / "run"))
    values.update({k: str(v) for k, v in kw.items()})
    return build_config(values)


def read_rows(path):
    lines = path.read_text().splitlines()
    return lines[0], list(csv.DictReader(lines[1:]))


# -- config -------------------------------------------------------------------

def test_parse_config_text():
    vals = parse_config_text("# comment\nseed = 4\nvocab-sizes = 10, 20  # trailing\n\n")
    assert vals == {"seed": "4", "vocab_sizes": "10, 20"}
    with pytest.raises(ConfigError):
        parse_config_text("no equals sign")


def test_config_lists_nested_and_errors(tmp_path):
    cfg = tiny(tmp_path, synth_part_offset="none", alpha_sweep="0.8,1.5")
    assert cfg.nc_values == (5, 10, 15, 20)
    assert cfg.synth.part_offset is None and cfg.synth.k == 3
    assert cfg.alpha_sweep == (0.8, 1.5)
    with pytest.raises(ConfigError, match="unknown config key"):
        tiny(tmp_path, bogus=1)
    with pytest.raises(ConfigError, match="unknown strategy"):
        tiny(tmp_path, strategies="random,kmeans++")
    with pytest.raises(ConfigError, match="ascending"):
        tiny(tmp_path, vocab_sizes="24,12")
    with pytest.raises(ConfigError, match="labels"):
        build_config({})


def test_fingerprint_ignores_out_and_workers(tmp_path):
    a = tiny(tmp_path)
    assert a.fingerprint() == tiny(tmp_path / "x", workers=3).fingerprint()
    assert a.fingerprint() != tiny(tmp_path, seed=12).fingerprint()


def test_config_file_with_cli_overrides(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("".join(f"{k} = {v}\n" for k, v in TINY.items()))
    cfg = load_config(path, {"seed": "99", "vocab_sizes": "30"})
    assert cfg.seed == 99 and cfg.vocab_sizes == (30,)


# -- experiment sweep ---------------------------------------------------------

def test_tiny_sweep_outputs_and_resume(tmp_path):
    cfg = tiny(tmp_path)
    t = time.perf_counter()
    outcome = run_experiment(cfg)
    assert time.perf_counter() - t < 60
    assert outcome.ok
    out = tmp_path / "run"
    header, rows = read_rows(out / "results.csv")
    assert header == f"# config_sha256={cfg.fingerprint()} root_seed=11"
    # clustering cells give one row per nc, svm cells one row
    assert len(rows) == 4 * 2 * 2 * (4 + 1)
    assert {r["strategy"] for r in rows} == {"random", "random_km", "model", "filt_model"}
    for name in ("per_class.csv", "curve_clustering_f.csv", "curve_svm_tpr.csv", "roc_points.csv",
                 "failures.csv"):
        assert (out / name).read_text().startswith(header + "\n")
    reports = sorted((out / "filter_reports").iterdir())
    assert len(reports) == 2 * 2 * 2 and reports[0].read_text().startswith(header)
    _, roc = read_rows(out / "roc_points.csv")
    assert [r["smallest"] for r in roc if r["strategy"] == "model"] == ["1", "0", "1", "0"]

    snapshot = {p.name: p.read_bytes() for p in out.glob("*.csv")}
    (out / "cells" / "model_m24_holdout_clustering_r1.json").unlink()
    again = run_experiment(cfg)
    assert (again.cells_run, again.cells_reused) == (1, len(plan_cells(cfg)[0]) - 1)
    assert {p.name: p.read_bytes() for p in out.glob("*.csv")} == snapshot


def test_rerun_from_scratch_is_byte_identical(tmp_path):
    a = run_experiment(tiny(tmp_path / "a", strategies="random_km,filt_model", vocab_sizes="12"))
    b = run_experiment(tiny(tmp_path / "b", strategies="random_km,filt_model", vocab_sizes="12"))
    for name in ("results.csv", "per_class.csv"):
        assert (a.out_dir / name).read_bytes() == (b.out_dir / name).read_bytes()


def test_alpha_sweep_writes_separate_table(tmp_path):
    cfg = tiny(tmp_path, strategies="filt_model", vocab_sizes="12", alpha_sweep="0.8,1.0,1.5",
               protocols="holdout_clustering", repetitions=1)
    run_experiment(cfg)
    _, rows = read_rows(tmp_path / "run" / "alpha_sweep.csv")
    assert [float(r["alpha"]) for r in rows] == [0.8, 1.0, 1.5]
    _, main_rows = read_rows(tmp_path / "run" / "results.csv")
    assert len(main_rows) == 4     # the sweep does not leak into the main table


# -- command line -------------------------------------------------------------

def test_cli_unknown_strategy_fails_before_work(tmp_path):
    out = tmp_path / "never"
    code = main(["experiment", "--set", "dataset=synth", "--strategy", "bogus", "--out", str(out)])
    assert code == 1
    assert not out.exists()


def test_cli_partial_failure_exit_code(tmp_path):
    args = ["experiment", "--out", str(tmp_path / "p"), "--strategy", "random", "--vocab-size", "12,100000"]
    for k, v in TINY.items():
        if k not in ("vocab_sizes",):
            args += ["--set", f"{k}={v}"]
    assert main(args) == 2
    _, fails = read_rows(tmp_path / "p" / "failures.csv")
    assert len(fails) == 4 and all("100000" in f["cell"] for f in fails)
    _, rows = read_rows(tmp_path / "p" / "results.csv")
    assert {r["vocab_size"] for r in rows} == {"12"}


def test_cli_extract(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["extract", str(empty), "--out", str(tmp_path / "o")]) == 1
    imgs = tmp_path / "imgs"
    imgs.mkdir()
    px = np.random.default_rng(0).random((32, 64))
    (imgs / "cat.pgm").write_bytes(encode_pgm(RasterImage(px)))
    assert main(["extract", str(imgs), "--out", str(tmp_path / "o")]) == 0
    feats = read_feature_file(tmp_path / "o" / "features" / "cat.boff")
    assert feats.count == 2 * 4 and feats.h == 128


def test_cli_pipeline_synth_vocab_encode_eval(tmp_path):
    d = tmp_path / "ds"
    synth = ["--set", "synth_k=3", "--set", "synth_images_per_label=32", "--set", "synth_features_per_image=40"]
    assert main(["synth", "--out", str(d), "--seed", "5", *synth]) == 0
    assert (d / "ground_truth.csv").exists()
    files = ["--features-dir", str(d / "features"), "--labels", str(d / "labels.csv")]
    vocab = tmp_path / "v.bofv"
    assert main(["vocab", *files, "--strategy", "filt_model", "--vocab-size", "15", "--out", str(vocab)]) == 0
    assert vocab.with_suffix(".filter.csv").exists()
    assert main(["vocab", *files, "--strategy", "model", "--strategy", "random",
                 "--vocab-size", "15", "--out", str(vocab)]) == 1
    enc = tmp_path / "enc.csv"
    assert main(["encode", *files, "--vocab", str(vocab), "--out", str(enc)]) == 0
    assert "strategy=filt_model vocab_size=15" in enc.read_text().splitlines()[0]
    ev = tmp_path / "ev"
    assert main(["eval", *files, "--encoding", str(enc), "--out", str(ev), "--set", "nc_values=5,10",
                 "--set", "clustering_repeats=2", "--set", "repetitions=1"]) == 0
    _, rows = read_rows(ev / "results.csv")
    assert [r["protocol"] for r in rows] == ["holdout_clustering"] * 2 + ["class_balanced_svm"]
    assert all(r["strategy"] == "filt_model" and r["vocab_size"] == "15" for r in rows)


def test_cli_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "semvocab" in capsys.readouterr().out
