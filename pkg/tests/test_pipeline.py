import json

import pytest

from builders import write_ini
from trafficprofile import pipeline as pl
from trafficprofile.dataset import LABEL_FIELDS, SCHEMA
from trafficprofile.errors import ConfigError, LabelsMissing, StageError


@pytest.fixture(scope="module")
def run(small_corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = pl.PipelineConfig.from_ini(write_ini(out / "cfg.ini", small_corpus, out / "out"))
    return cfg, pl.run_pipeline(cfg)


def _outputs(out_dir):
    files = ["dataset.csv", "sessions.csv", "importance_summary.json", "report.txt"]
    files += [f"reports/{label}.json" for label in LABEL_FIELDS]
    return {f: (out_dir / f).read_bytes() for f in files}


def test_end_to_end_outputs(run):
    cfg, summary = run
    out = cfg.output_dir
    assert sorted(p.stem for p in (out / "reports").glob("*.json")) == sorted(LABEL_FIELDS)
    rows = (out / "dataset.csv").read_text().splitlines()
    assert rows[0].startswith("#schema_version=")
    assert len(rows) == 2 + 20
    assert rows[1].split(",")[1:1 + len(SCHEMA.names)] == list(SCHEMA.names)
    assert summary["total"] == 50 and sum(summary["counts"].values()) == 50
    assert sum(summary["percent"].values()) == pytest.approx(100.0)
    doc = json.loads((out / "reports/gender.json").read_text())
    assert len(doc["grid"]) == 10 and len(doc["top_features"]) == 5
    assert doc["best_wauc"]["pooled_predictions"][0]["subject_id"] == "S001"
    assert "Gender" in (out / "report.txt").read_text()


def test_planted_domain_signal_visible(run):
    cfg, summary = run
    doc = json.loads((cfg.output_dir / "reports/gender.json").read_text())
    assert doc["best_f1"]["accuracy"] >= 0.8
    assert [t["category"] for t in doc["top_features"]].count("domain") >= 3
    assert summary["counts"]["domain"] == max(summary["counts"].values())


def test_rerun_is_byte_identical(run, tmp_path, small_corpus):
    cfg, _ = run
    cfg2 = pl.PipelineConfig.from_ini(write_ini(tmp_path / "c.ini", small_corpus,
                                                tmp_path / "out", n_jobs=3))
    pl.run_pipeline(cfg2)
    assert _outputs(cfg2.output_dir) == _outputs(cfg.output_dir)


def test_missing_labels_aborts_at_aggregate(small_corpus, tmp_path):
    ini = write_ini(tmp_path / "c.ini", small_corpus, tmp_path / "out",
                    labels_to_run="gender")
    cfg = pl.PipelineConfig.from_ini(ini)
    cfg.labels_path = tmp_path / "nope.csv"
    with pytest.raises(StageError) as info:
        pl.run_pipeline(cfg)
    assert info.value.stage == "aggregate"
    assert isinstance(info.value.__cause__, LabelsMissing)
    assert not (tmp_path / "out" / "dataset.csv").exists()


def test_strict_mode_escalates_enrichment(small_corpus, tmp_path):
    domain = next(r["registrable_domain"]
                  for r in map(json.loads, small_corpus.ground_truth.read_text().splitlines())
                  if r.get("category", "UNKNOWN") != "UNKNOWN")
    data = json.loads(small_corpus.fixture_store.read_text())
    data[domain]["categories"] = {"source_a": "no-such-label"}
    store = tmp_path / "store.json"
    store.write_text(json.dumps(data))
    ini = write_ini(tmp_path / "c.ini", small_corpus, tmp_path / "out", strict="yes",
                    fixture_store=store, labels_to_run="gender", k_grid="30",
                    algorithms="ET")
    cfg = pl.PipelineConfig.from_ini(ini)
    assert cfg.strict_mode
    with pytest.raises(StageError) as info:
        pl.run_pipeline(cfg)
    assert info.value.stage == "enrich"
    # the default mode degrades instead
    cfg.strict_mode = False
    pl.run_pipeline(cfg)


def test_ini_parsing(small_corpus, tmp_path):
    ini = write_ini(tmp_path / "c.ini", small_corpus, "rel_out", k_grid="30, 80",
                    algorithms="ET RF", seed=5, labels_to_run="gender smokes",
                    tcp_timeout_s=120)
    cfg = pl.PipelineConfig.from_ini(ini)
    assert cfg.output_dir == tmp_path / "rel_out"
    assert cfg.k_grid == (30, 80) and cfg.algorithms == ("ET", "RF")
    assert cfg.seed == 5 and cfg.labels == ("gender", "smokes")
    assert cfg.tcp_timeout == 120_000_000
    assert len(cfg.capture_paths) == 20


@pytest.mark.parametrize("mutate", [
    lambda c: setattr(c, "capture_paths", []),
    lambda c: setattr(c, "labels", ("height",)),
    lambda c: setattr(c, "algorithms", ("SVM",)),
    lambda c: setattr(c, "k_grid", (0,)),
    lambda c: setattr(c, "fixture_store_path", c.fixture_store_path.with_name("missing.json")),
])
def test_config_validation(small_corpus, tmp_path, mutate):
    cfg = pl.PipelineConfig.from_ini(write_ini(tmp_path / "c.ini", small_corpus, tmp_path))
    mutate(cfg)
    with pytest.raises(ConfigError):
        cfg.validate()
    with pytest.raises(StageError) as info:
        pl.run_pipeline(cfg)
    assert info.value.stage == "config"


def test_bad_ini(tmp_path):
    (tmp_path / "a.ini").write_text("[other]\nx = 1\n")
    with pytest.raises(ConfigError):
        pl.PipelineConfig.from_ini(tmp_path / "a.ini")
    with pytest.raises(ConfigError):
        pl.PipelineConfig.from_ini(tmp_path / "absent.ini")


def test_importance_summary_arithmetic():
    tops = {f"l{i}": [("a", "domain"), ("b", "domain"), ("c", "dpi"), ("d", "statistical"),
                      ("e", "application")] for i in range(10)}
    summary = pl.importance_summary(tops)
    assert summary["counts"] == {"domain": 20, "dpi": 10, "statistical": 10, "application": 10}
    assert summary["total"] == 50 and summary["percent"]["domain"] == 40.0
    named = pl.importance_summary({"x": [SCHEMA.names[0]]})
    assert named["counts"][SCHEMA.category_of(SCHEMA.names[0])] == 1


def test_reference_tallies_share():
    ref = pl.importance_summary({f"l{i}": [] for i in range(10)})
    assert ref["total"] == 0
    total = sum(pl.REFERENCE_TALLIES.values())
    assert total == 50 and pl.REFERENCE_TALLIES["domain"] / total == 0.78
