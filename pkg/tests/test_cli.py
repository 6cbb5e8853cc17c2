import json

import numpy as np
import pytest

from softact import (build_verb_noun_prior, format_annotations, load_dataset,
                     load_prior, save_dataset)
from softact.cli import main

from conftest import make_annotations


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    """The shared tiny dataset, saved once in CLI bundle form."""
    from conftest import SMALL_PROTOCOL  # noqa: F401  (documents the protocol)
    from softact import GrammarConfig, generate_dataset

    grammar = GrammarConfig(num_verbs=3, num_nouns=3, action_density=1.0,
                            modalities=(("rgb", 6), ("flow", 5)), seed=7)
    dataset = generate_dataset(grammar, SMALL_PROTOCOL, num_videos=24,
                               video_length=10, noise_sigma=0.4, seed=7)
    out = tmp_path_factory.mktemp("data") / "bundle"
    save_dataset(dataset, out)
    return out


FAST_FLAGS = ["--epochs", "2", "--batch-size", "32", "--hidden-size", "8",
              "--trials", "1"]


# ------------------------------------------------------------- exit codes


def test_exit_codes(tmp_path, toy_vocab, capsys):
    assert main(["--help"]) == 0
    capsys.readouterr()
    assert main(["frobnicate"]) == 1
    assert main(["train", "--data", str(tmp_path / "missing"),
                 "--out-dir", str(tmp_path / "out")]) == 2
    vocab_path = tmp_path / "vocab.json"
    vocab_path.write_text(toy_vocab.to_json())
    assert main(["build-prior", "--kind", "glove", "--vocab", str(vocab_path),
                 "--out", str(tmp_path / "p.csv")]) == 1  # missing --embeddings
    assert main(["build-prior", "--kind", "uniform",
                 "--vocab", str(tmp_path / "absent.json"),
                 "--out", str(tmp_path / "p.csv")]) == 2  # unreadable input
    capsys.readouterr()


# ------------------------------------------------------------ build-prior


def test_build_prior_uniform(tmp_path, toy_vocab, capsys):
    vocab_path = tmp_path / "vocab.json"
    vocab_path.write_text(toy_vocab.to_json())
    out = tmp_path / "uniform.csv"
    assert main(["build-prior", "--kind", "uniform", "--vocab",
                 str(vocab_path), "--out", str(out)]) == 0
    assert "uniform" in capsys.readouterr().out
    lines = out.read_text().strip().splitlines()
    assert len(lines) == 4
    for line in lines:
        assert [float(x) for x in line.split(",")] == [0.25] * 4


def test_build_prior_verb_noun(tmp_path, toy_vocab, capsys):
    vocab_path = tmp_path / "vocab.json"
    vocab_path.write_text(toy_vocab.to_json())
    out = tmp_path / "vn.csv"
    assert main(["build-prior", "--kind", "vn", "--vocab", str(vocab_path),
                 "--out", str(out)]) == 0
    capsys.readouterr()
    prior = load_prior(out)
    assert prior.kind == "verb_noun"
    np.testing.assert_array_equal(prior.rows,
                                  build_verb_noun_prior(toy_vocab).rows)


def test_build_prior_temporal(tmp_path, ab_vocab, capsys):
    vocab_path = tmp_path / "vocab.json"
    vocab_path.write_text(ab_vocab.to_json())
    ann_path = tmp_path / "annotations.csv"
    annotations = make_annotations(ab_vocab, [[0, 1, 0, 1]])
    ann_path.write_text(format_annotations(annotations))
    out = tmp_path / "temporal.csv"
    assert main(["build-prior", "--kind", "temporal", "--vocab",
                 str(vocab_path), "--annotations", str(ann_path),
                 "--out", str(out)]) == 0
    capsys.readouterr()
    np.testing.assert_array_equal(load_prior(out).rows, [[0, 1], [1, 0]])
    # temporal without annotations is a usage error
    assert main(["build-prior", "--kind", "temporal", "--vocab",
                 str(vocab_path), "--out", str(out)]) == 1
    capsys.readouterr()


def test_build_prior_glove_and_mix(tmp_path, toy_vocab, capsys):
    vocab_path = tmp_path / "vocab.json"
    vocab_path.write_text(toy_vocab.to_json())
    emb_path = tmp_path / "emb.txt"
    emb_path.write_text("cut 1 0\nwash 0 1\nonion 1 0\ncarrot 0 1\n")
    for kind in ("glove", "mix"):
        out = tmp_path / f"{kind}.csv"
        assert main(["build-prior", "--kind", kind, "--vocab",
                     str(vocab_path), "--embeddings", str(emb_path),
                     "--out", str(out)]) == 0
        prior = load_prior(out)
        assert prior.K == 4
        np.testing.assert_allclose(prior.rows.sum(axis=1), 1.0, atol=1e-12)
    assert load_prior(tmp_path / "mix.csv").kind == "glove+verb_noun"
    capsys.readouterr()


# ------------------------------------------------------------------ synth


def test_synth_writes_loadable_bundle(tmp_path, capsys):
    out = tmp_path / "ds"
    assert main(["synth", "--out-dir", str(out), "--verbs", "3", "--nouns",
                 "3", "--density", "1.0", "--videos", "6", "--video-length",
                 "5", "--modalities", "rgb:4", "--encode-steps", "2",
                 "--decode-steps", "3", "--seed", "1"]) == 0
    assert "K=9" in capsys.readouterr().out
    ds = load_dataset(out)
    assert ds.K == 9
    assert ds.modalities == (("rgb", 4),)
    assert ds.protocol.decode_steps == 3
    total = ds.train.num_samples + ds.val.num_samples + ds.test.num_samples
    assert total == 6 * 4


def test_synth_config_file_with_overrides(tmp_path, capsys):
    config = tmp_path / "synth.json"
    config.write_text(json.dumps({
        "verbs": 3, "nouns": 3, "density": 1.0, "videos": 6,
        "video_length": 5, "modalities": "rgb:4", "encode_steps": 2,
        "decode_steps": 3, "seed": 1,
    }))
    out = tmp_path / "ds"
    assert main(["synth", "--out-dir", str(out), "--config", str(config),
                 "--videos", "8"]) == 0
    capsys.readouterr()
    ds = load_dataset(out)
    total = ds.train.num_samples + ds.val.num_samples + ds.test.num_samples
    assert total == 8 * 4  # the flag overrode the config file


def test_synth_config_errors(tmp_path, capsys):
    bad = tmp_path / "synth.json"
    bad.write_text('{"verbz": 3}')
    assert main(["synth", "--out-dir", str(tmp_path / "ds"),
                 "--config", str(bad)]) == 1
    bad.write_text("{oops")
    assert main(["synth", "--out-dir", str(tmp_path / "ds"),
                 "--config", str(bad)]) == 2
    capsys.readouterr()


# ------------------------------------------------------------------ train


def test_train_writes_artifacts(tmp_path, data_dir, capsys):
    out = tmp_path / "run"
    assert main(["train", "--data", str(data_dir), "--out-dir", str(out),
                 "--method", "vn", *FAST_FLAGS]) == 0
    stdout = capsys.readouterr().out
    assert "verb_noun alpha=0.45" in stdout
    assert (out / "checkpoint.bin").exists()
    assert (out / "metrics.csv").exists()
    log = (out / "train_log.txt").read_text()
    assert log.count("epoch") == 3  # two epochs + the best-epoch line
    assert "best epoch" in log


def test_train_uses_config_file_smoothing(tmp_path, data_dir, capsys):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({
        "smoothing": {"alpha": 0.2, "prior_kind": "uniform"},
        "epochs": 2, "batch_size": 32, "trials": 1, "hidden_size": 8,
    }))
    out = tmp_path / "run"
    assert main(["train", "--data", str(data_dir), "--out-dir", str(out),
                 "--config", str(config)]) == 0
    assert "uniform alpha=0.2" in capsys.readouterr().out


def test_train_flag_overrides_config_alpha(tmp_path, data_dir, capsys):
    out = tmp_path / "run"
    assert main(["train", "--data", str(data_dir), "--out-dir", str(out),
                 "--method", "uniform", "--alpha", "0.3", *FAST_FLAGS]) == 0
    assert "uniform alpha=0.3" in capsys.readouterr().out


# ------------------------------------------------------------ grid-search


def test_grid_search_artifacts(tmp_path, data_dir, capsys):
    out = tmp_path / "grid"
    assert main(["grid-search", "--data", str(data_dir), "--out-dir",
                 str(out), "--method", "vn", "--alpha-start", "0",
                 "--alpha-stop", "0.5", "--alpha-step", "0.25",
                 *FAST_FLAGS]) == 0
    stdout = capsys.readouterr().out
    assert "best alpha for verb_noun" in stdout
    grid_lines = (out / "grid.csv").read_text().strip().splitlines()
    assert grid_lines[0] == "alpha,mean_val_top5,trials"
    assert [line.split(",")[0] for line in grid_lines[1:]] == ["0", "0.25",
                                                               "0.5"]
    best = json.loads((out / "best_alpha.json").read_text())
    assert best["kind"] == "verb_noun"
    assert best["best_alpha"] in (0.0, 0.25, 0.5)


# ---------------------------------------------------------------- compare


def test_compare_and_report_roundtrip(tmp_path, data_dir, capsys):
    out = tmp_path / "cmp"
    assert main(["compare", "--data", str(data_dir), "--out-dir", str(out),
                 "--methods", "onehot,vn", "--set-alpha", "vn=0.3",
                 *FAST_FLAGS]) == 0
    stdout = capsys.readouterr().out
    assert "action_top5" in stdout  # summary table printed
    assert (out / "report.csv").exists()
    methods = json.loads((out / "methods.json").read_text())
    assert [(m["name"], m["alpha"]) for m in methods] == [("onehot", 0.0),
                                                          ("verb_noun", 0.3)]

    assert main(["report", "--runs", str(out), "--format", "csv"]) == 0
    csv_out = capsys.readouterr().out
    assert csv_out.splitlines()[0].startswith("method,")
    assert main(["report", "--runs", str(out / "report.csv"),
                 "--format", "plotdata"]) == 0
    plot_out = capsys.readouterr().out
    assert plot_out.splitlines()[0] == "method,metric,anticipation_time,mean,std"
    saved = tmp_path / "table.txt"
    assert main(["report", "--runs", str(out), "--format", "table",
                 "--out", str(saved)]) == 0
    capsys.readouterr()
    assert "onehot" in saved.read_text()


def test_compare_rejects_unknown_method(tmp_path, data_dir, capsys):
    assert main(["compare", "--data", str(data_dir), "--out-dir",
                 str(tmp_path / "cmp"), "--methods", "onehot,nope",
                 *FAST_FLAGS]) == 1
    assert main(["compare", "--data", str(data_dir), "--out-dir",
                 str(tmp_path / "cmp"), "--set-alpha", "bogus",
                 *FAST_FLAGS]) == 1
    capsys.readouterr()


# ------------------------------------------------------------------- eval


def test_eval_checkpoint(tmp_path, data_dir, capsys):
    run = tmp_path / "run"
    assert main(["train", "--data", str(data_dir), "--out-dir", str(run),
                 "--method", "onehot", *FAST_FLAGS]) == 0
    capsys.readouterr()
    assert main(["eval", "--data", str(data_dir), "--checkpoint",
                 str(run / "checkpoint.bin"), "--split", "val",
                 "--name", "mymodel"]) == 0
    stdout = capsys.readouterr().out
    assert stdout.startswith("method,")
    assert "\nmymodel," in stdout
    out_csv = tmp_path / "eval.csv"
    assert main(["eval", "--data", str(data_dir), "--checkpoint",
                 str(run / "checkpoint.bin"), "--out", str(out_csv)]) == 0
    capsys.readouterr()
    assert out_csv.read_text().startswith("method,")


def test_eval_mismatched_dataset(tmp_path, data_dir, capsys):
    run = tmp_path / "run"
    assert main(["train", "--data", str(data_dir), "--out-dir", str(run),
                 "--method", "onehot", *FAST_FLAGS]) == 0
    other = tmp_path / "other"
    assert main(["synth", "--out-dir", str(other), "--verbs", "2", "--nouns",
                 "2", "--videos", "6", "--video-length", "5", "--modalities",
                 "rgb:4", "--encode-steps", "2", "--decode-steps", "3"]) == 0
    capsys.readouterr()
    assert main(["eval", "--data", str(other), "--checkpoint",
                 str(run / "checkpoint.bin")]) == 1
    capsys.readouterr()


# ----------------------------------------------------------------- report


def test_report_missing_runs(tmp_path, capsys):
    assert main(["report", "--runs", str(tmp_path / "nope")]) == 2
    bad = tmp_path / "report.csv"
    bad.write_text("not,a,report\n")
    assert main(["report", "--runs", str(bad)]) == 2
    capsys.readouterr()
