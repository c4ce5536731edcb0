import json

import pytest

from followage.cli import main, read_config, UsageError
from followage.model import load_model


@pytest.fixture
def run(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)

    def _run(*argv):
        return main([str(a) for a in argv])
    return _run


def test_extract_demo(run, data_dir, tmp_path):
    assert run("extract", "--corpus", data_dir / "demo_corpus.tsv", "--out", "labels.tsv") == 0
    lines = (tmp_path / "labels.tsv").read_text().splitlines()
    assert "101\tage:22" in lines and "105\tproxy:retired" in lines
    assert (tmp_path / "labels.tsv.report.txt").exists()
    manifest = json.loads((tmp_path / "labels.tsv.manifest.json").read_text())
    assert manifest["command"] == "extract" and len(manifest["outputs"]["out"]["sha256"]) == 64


def test_extract_missing_rules(run, data_dir, capsys):
    assert run("extract", "--corpus", data_dir / "demo_corpus.tsv", "--rules", "no_rules.txt", "--out", "x") == 2
    assert "no_rules.txt" in capsys.readouterr().err


def test_extract_language_subset(run, data_dir, tmp_path):
    assert run("extract", "--corpus", data_dir / "demo_corpus.tsv", "--out", "l.tsv", "--lang", "en,pt") == 0
    report = (tmp_path / "l.tsv.report.txt").read_text().splitlines()
    assert report[0] == "rulesets\ten,pt"
    fired = {ln.split("\t")[1] for ln in report if ln.startswith("lang\t")}
    assert fired <= {"en", "pt"} and fired
    matched = [ln for ln in report if ln.startswith("match\t")]
    assert all("@en:" in ln or "@pt:" in ln for ln in matched)


def test_usage_errors(run):
    assert run("train", "--bogus") == 1
    assert run("simulate", "--users", 10, "--features", 5, "--out", "s") == 1  # no seed
    assert run() == 1


def test_data_error(run, tmp_path):
    (tmp_path / "e.tsv").write_text("x\ty\n")
    (tmp_path / "l.tsv").write_text("1\tage:30\n")
    assert run("train", "--edges", "e.tsv", "--labels", "l.tsv", "--model", "m.bin") == 2


def _pipeline(run, tmp_path, tag):
    assert run("simulate", "--users", 6000, "--features", 80, "--seed", 7, "--out", f"sim{tag}") == 0
    assert run("train", "--edges", f"sim{tag}/edges.tsv", "--labels", f"sim{tag}/labels.tsv", "--metadata",
               f"sim{tag}/metadata.tsv", "--holdout-fraction", 0.1, "--seed", 3, "--min-support", 5,
               "--model", f"m{tag}.bin") == 0
    return tmp_path / f"m{tag}.bin"


def test_full_pipeline(run, tmp_path):
    model_path = _pipeline(run, tmp_path, "a")
    assert run("predict", "--model", model_path, "--edges", "sima/edges.tsv", "--out", "pred.tsv",
               "--chunk-size", 1000) == 0
    first = (tmp_path / "pred.tsv").read_text().splitlines()[0].split("\t")
    assert len(first[2].split(",")) == 10
    assert run("evaluate", "--model", model_path, "--edges", "sima/edges.tsv", "--labels",
               f"{model_path}.test.tsv", "--seed", 1, "--out", "ev") == 0
    assert "micro_f1" in (tmp_path / "ev" / "metrics.tsv").read_text()
    assert (tmp_path / "ev" / "roc.tsv").stat().st_size > 0
    assert run("evaluate", "--model", model_path, "--edges", "sima/edges.tsv", "--labels",
               f"{model_path}.test.tsv", "--seed", 1, "--coarse3", "--out", "ev3") == 0
    header = (tmp_path / "ev3" / "metrics.tsv").read_text().splitlines()[0]
    assert header.split("\t")[1:] == ["<18", "18-44", ">=45"]
    assert run("aggregate", "--predictions", "pred.tsv", "--out", "pop.tsv") == 0
    counts = [int(ln.split("\t")[2]) for ln in (tmp_path / "pop.tsv").read_text().splitlines()]
    assert sum(counts) == len((tmp_path / "pred.tsv").read_text().splitlines())
    assert run("rank-features", "--model", model_path, "--top-k", 3, "--out", "rank.tsv") == 0
    assert len((tmp_path / "rank.tsv").read_text().splitlines()) == 30
    assert run("clean", "--edges", "sima/edges.tsv", "--labels", "sima/labels.tsv", "--metadata",
               "sima/metadata.tsv", "--min-support", 5, "--out", "kept.tsv") == 0
    assert (tmp_path / "kept.tsv.flags.tsv").exists()


def test_rerun_is_byte_identical(run, tmp_path):
    a = _pipeline(run, tmp_path, "a")
    b = _pipeline(run, tmp_path, "b")
    assert a.read_bytes() == b.read_bytes()
    for suffix in (".train.tsv", ".test.tsv"):
        assert (tmp_path / f"ma.bin{suffix}").read_bytes() == (tmp_path / f"mb.bin{suffix}").read_bytes()
    for name in ("edges.tsv", "labels.tsv", "metadata.tsv", "true_mu.tsv"):
        assert (tmp_path / "sima" / name).read_bytes() == (tmp_path / "simb" / name).read_bytes()
    ma = json.loads((tmp_path / "ma.bin.manifest.json").read_text())
    mb = json.loads((tmp_path / "mb.bin.manifest.json").read_text())
    assert ma["outputs"]["model"]["sha256"] == mb["outputs"]["model"]["sha256"]
    assert ma["inputs"]["edges"]["sha256"] == mb["inputs"]["edges"]["sha256"]


def test_manifest_detects_changed_input(run, tmp_path):
    _pipeline(run, tmp_path, "a")
    before = json.loads((tmp_path / "ma.bin.manifest.json").read_text())["inputs"]["labels"]["sha256"]
    with open(tmp_path / "sima" / "labels.tsv", "a") as fh:
        fh.write("999999\tage:30\n")
    _pipeline_train_only = run("train", "--edges", "sima/edges.tsv", "--labels", "sima/labels.tsv",
                               "--holdout-fraction", 0.1, "--seed", 3, "--min-support", 5, "--model", "ma.bin")
    assert _pipeline_train_only == 0
    after = json.loads((tmp_path / "ma.bin.manifest.json").read_text())["inputs"]["labels"]["sha256"]
    assert before != after


def test_config_precedence(run, tmp_path):
    _pipeline(run, tmp_path, "a")
    (tmp_path / "run.cfg").write_text("alpha = 2.5\nmin_support = 5\n# comment\nK = 1e6\n")
    assert run("train", "--config", "run.cfg", "--edges", "sima/edges.tsv", "--labels", "sima/labels.tsv",
               "--alpha", 0.5, "--model", "c.bin") == 0
    hp = load_model(tmp_path / "c.bin").hp
    assert (hp.alpha, hp.K, hp.min_support) == (0.5, 1e6, 5)


def test_config_errors(tmp_path):
    (tmp_path / "bad.cfg").write_text("nonsense = 3\n")
    with pytest.raises(UsageError):
        read_config(tmp_path / "bad.cfg")
    (tmp_path / "bad2.cfg").write_text("alpha = abc\n")
    with pytest.raises(UsageError):
        read_config(tmp_path / "bad2.cfg")


def test_seven_band_taxonomy(run, data_dir, tmp_path):
    assert run("simulate", "--users", 3000, "--features", 40, "--seed", 2, "--taxonomy",
               data_dir / "taxonomy_decades.txt", "--prior", data_dir / "prior_uniform7.txt", "--out", "s7") == 0
    assert run("train", "--edges", "s7/edges.tsv", "--labels", "s7/labels.tsv", "--taxonomy",
               data_dir / "taxonomy_decades.txt", "--prior", data_dir / "prior_uniform7.txt", "--min-support", 3,
               "--model", "m7.bin") == 0
    assert load_model(tmp_path / "m7.bin").n_categories == 7
    assert run("simulate", "--users", 100, "--features", 4, "--seed", 2, "--taxonomy",
               data_dir / "taxonomy_decades.txt", "--out", "s8") == 2  # no prior for a custom taxonomy


def test_internal_error_exit_code(run, monkeypatch):
    import followage.cli as cli

    def boom(settings):
        raise RuntimeError("unexpected")
    monkeypatch.setattr(cli, "cmd_aggregate", boom)
    assert run("aggregate", "--predictions", "p.tsv", "--out", "o.tsv") == 3
