import json

import pytest

from tdslab import __version__
from tdslab.cli import main
from tdslab.config import KEYS, build_experiment, echo_text, parse_config_text, read_config
from tdslab.errors import ConfigError
from tdslab.trainer import RunLog

TINY = ["--n_users", "20", "--n_items", "15", "--interactions_per_user", "4", "--n_spans", "3",
        "--embed_dim", "4", "--encoder_hidden", "8", "--latent_dim", "4", "--decoder_hidden", "8",
        "--views", "2", "--batch_size", "16"]


def run(*argv):
    return main([str(a) for a in argv])


# -- config files ------------------------------------------------------------------

def test_parse_config_text():
    values = parse_config_text("# comment\n\nrho = 0.9\nmethod=erm\n")
    assert values == {"rho": "0.9", "method": "erm"}
    with pytest.raises(ConfigError, match=":1: unknown key"):
        parse_config_text("bogus=1")
    with pytest.raises(ConfigError, match=":2: expected"):
        parse_config_text("rho=1\nnoequals")
    with pytest.raises(ConfigError):
        read_config("/nonexistent/cfg.txt")


def test_build_experiment_and_echo_roundtrip():
    exp = build_experiment({"rho": "0.9", "views": "3", "encoder_hidden": "16,8", "listwise": "yes",
                            "shock_span": "2", "seed": "4"})
    assert exp.gen.rho == 0.9 and exp.train.augment.J == 3 and exp.train.tower.encoder_hidden == (16, 8)
    assert exp.train.weights.listwise_enabled and exp.gen.shock_span == 2
    assert exp.seed == exp.gen.seed == exp.train.seed == exp.train.augment.seed == 4
    again = build_experiment(dict(exp.echo()))
    assert again == exp
    assert len(exp.echo()) == len(KEYS)
    assert echo_text(exp, [("command", "gen")]).endswith("command=gen\n")


def test_build_experiment_rejects_bad_values():
    with pytest.raises(ConfigError):
        build_experiment({"rho": "high"})
    with pytest.raises(ConfigError):
        build_experiment({"rho": "2"})
    with pytest.raises(ConfigError):
        build_experiment({"method": "sgd"})
    with pytest.raises(ConfigError):
        build_experiment({"listwise": "maybe"})


# -- subcommands ---------------------------------------------------------------------

def test_usage_errors_exit_one(tmp_path, capsys):
    assert run("frobnicate") == 1
    assert run("gen", "--out", tmp_path, "--bogus", "1") == 1
    (tmp_path / "c.txt").write_text("nope=1\n")
    assert run("gen", "--out", tmp_path / "o", "--config", tmp_path / "c.txt") == 1
    err = capsys.readouterr().err
    assert err.strip().splitlines()[-1].startswith("tdslab: usage error")


def test_runtime_errors_exit_two(tmp_path, capsys):
    assert run("train", "--data", tmp_path / "missing", "--out", tmp_path / "o") == 2
    assert len(capsys.readouterr().err.strip().splitlines()) == 1


def test_gen_train_eval_drift(tmp_path, capsys):
    data, out = tmp_path / "data", tmp_path / "run"
    (tmp_path / "c.txt").write_text("method=elbo_tds\nrho=0.5\n")
    assert run("gen", "--out", data, "--config", tmp_path / "c.txt", *TINY) == 0
    assert (data / "manifest.txt").exists() and not (data / "INCOMPLETE").exists()
    echo = dict(line.split("=", 1) for line in (data / "config.echo").read_text().splitlines())
    assert echo["rho"] == "0.5" and echo["tool_version"] == __version__ and echo["schema_hash"]

    assert run("train", "--data", data, "--out", out, "--config", tmp_path / "c.txt", "--rho", "0.5", *TINY) == 0
    log = RunLog.read(out / "runlog.ndjson")
    assert sorted(log.values("auc.task0")) == [1, 2]
    assert all(r["method"] == "elbo_tds" for r in log.records)
    capsys.readouterr()

    assert run("eval", "--checkpoint", out / "final.bin", "--data", data, "--with-collapse") == 0
    rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    metrics = {r["metric"] for r in rows}
    assert {"auc.task0", "gauc.task0", "collapse.view_variance", "collapse.probe_error"} <= metrics
    assert all(r["span"] == 2 and r["trained_spans"] == [0, 1] for r in rows)

    assert run("eval", "--checkpoint", out / "ckpt_span001.bin", "--data", data, "--span", 1) == 0
    assert "not a held-out evaluation" in capsys.readouterr().err
    assert run("eval", "--checkpoint", out / "final.bin", "--data", data, "--span", 7) == 1

    assert run("drift", "--data", data, "--out", tmp_path / "drift") == 0
    rows = [json.loads(line) for line in (tmp_path / "drift" / "drift.ndjson").read_text().splitlines()]
    assert {"cv", "jsd_from_first", "entity_cv_median"} <= {r["stat"] for r in rows}


def test_failed_run_leaves_incomplete_marker(tmp_path):
    data = tmp_path / "data"
    assert run("gen", "--out", data, *TINY) == 0
    (data / "span_002.txt").unlink()
    assert run("train", "--data", data, "--out", tmp_path / "run", *TINY) == 2
    assert (tmp_path / "run" / "INCOMPLETE").exists()


def test_compare_rows(tmp_path, capsys):
    out = tmp_path / "cmp"
    assert run("compare", "--methods", "elbo_tds", "--seeds", 2, "--out", out, *TINY) == 0
    rows = [json.loads(line) for line in (out / "compare.ndjson").read_text().splitlines()]
    # one row per (span, metric): spans 1..2 x {auc, gauc}
    assert sorted((r["span"], r["metric"]) for r in rows) == [(1, "auc.task0"), (1, "gauc.task0"),
                                                              (2, "auc.task0"), (2, "gauc.task0")]
    for r in rows:
        assert r["n_seeds"] == 2 and r["baseline"] == "erm" and r["method"] == "elbo_tds"
        assert r["delta_mean"] == pytest.approx(r["mean"] - r["baseline_mean"], abs=1e-12)
        assert r["delta_std"] >= 0
    assert (out / "runs" / "erm" / "seed1" / "final.bin").exists()
    assert run("compare", "--methods", "sgd", "--out", tmp_path / "x") == 1


def test_reruns_are_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert run("gen", "--out", tmp_path / name / "data", *TINY) == 0
        assert run("train", "--data", tmp_path / name / "data", "--out", tmp_path / name / "run", *TINY) == 0
    for rel in ("data/span_000.txt", "data/span_002.txt", "data/manifest.txt", "run/runlog.ndjson",
                "run/final.bin"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
