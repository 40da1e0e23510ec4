from __future__ import annotations

import csv
import json
import shutil

import pytest

from safekv.cli import main
from safekv.config import ConfigError, load_config, parse_config
from safekv.core import PolicyId
from safekv.detection import default_rules_path
from safekv.serving_sim import FORMAT_VERSION

TINY = {
    "name": "tiny",
    "workload": {"n_users": 8, "n_requests": 60, "intra_user_overlap": 0.0, "inter_user_overlap": 0.3},
    "policies": ["GlobalShare", "CachePartition", "SafeKV"],
    "attack": {"n_secrets": 4},
}


@pytest.fixture
def tiny(tmp_path):
    p = tmp_path / "tiny.json"
    p.write_text(json.dumps(TINY))
    return p


# ---------------------------------------------------------------- config
def test_defaults_documented():
    sc = parse_config({})
    assert [r.policy for r in sc.policies] == [PolicyId.GLOBAL_SHARE, PolicyId.CACHE_PARTITION, PolicyId.SAFEKV]
    assert sc.attack is None and sc.seed == 0


def test_config_collects_all_errors():
    with pytest.raises(ConfigError) as exc:
        parse_config({"policies": ["Nope"], "bogus": 1, "detectors": "magic", "cost": {"c_prefill": -1}})
    text = "\n".join(exc.value.diagnostics)
    for needle in ("Nope", "bogus", "magic"):
        assert needle in text
    assert len(exc.value.diagnostics) >= 3


def test_seed_override_reaches_all_streams():
    sc = load_config("multiturn", seed=7)
    assert sc.seed == 7 and sc.workload.seed == 7 and sc.attack.seed == 7
    assert all(s.seed == 7 for run in sc.policies for s in (run.detectors or ()))


def test_load_config_does_not_mutate_file(tiny):
    before = tiny.read_bytes()
    load_config(tiny, seed=3)
    assert tiny.read_bytes() == before


# ------------------------------------------------------------------- run
def test_run_writes_artifacts(tiny, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(tiny), "--output", str(out)]) == 0
    printed = capsys.readouterr().out
    for label in ("GlobalShare", "CachePartition", "SafeKV"):
        assert (out / label / "metrics.json").exists() and label in printed
    summary = json.loads((out / "summary.json").read_text())
    assert [r["label"] for r in summary["runs"]] == ["GlobalShare", "CachePartition", "SafeKV"]
    assert "defense_rate" in printed and "ttft_p99" in printed


def test_run_twice_identical(tiny, tmp_path):
    for d in ("a", "b"):
        assert main(["--quiet", "run", "--config", str(tiny), "--output", str(tmp_path / d), "--seed", "5"]) == 0
    for label in ("GlobalShare", "CachePartition", "SafeKV"):
        for name in ("metrics.json", "requests.csv", "events.log", "attack.json"):
            assert (tmp_path / "a" / label / name).read_bytes() == (tmp_path / "b" / label / name).read_bytes()


def test_run_missing_config(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert main(["run", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_run_invalid_config(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"policies": ["Nope"]}))
    assert main(["run", str(p)]) == 2
    assert "Nope" in capsys.readouterr().err


def test_run_corrupt_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["run", str(p)]) == 2


def test_run_runtime_failure(tiny, tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["run", str(tiny), "--output", str(blocker / "sub")]) == 3
    assert "run failed" in capsys.readouterr().err


def test_bad_pattern_env_is_config_error(tiny, tmp_path, monkeypatch):
    bad = tmp_path / "rules.json"
    bad.write_text("[]")
    monkeypatch.setenv("SAFEKV_SIM_PATTERNS", str(bad))
    assert main(["run", str(tiny), "--output", str(tmp_path / "o")]) == 2


# ----------------------------------------------------------------- rules
def test_rules_test_ssn(capsys):
    assert main(["rules", "test", "123-45-6789"]) == 0
    out = capsys.readouterr().out
    assert "SENSITIVE" in out and "Identity Information" in out


def test_rules_test_clean(capsys):
    assert main(["rules", "test", "the weather is nice"]) == 0
    assert capsys.readouterr().out.startswith("clean")


def test_rules_validate_duplicate(tmp_path, capsys):
    doc = json.loads(default_rules_path().read_text())
    doc["rules"].append(dict(doc["rules"][0]))
    p = tmp_path / "dup.json"
    p.write_text(json.dumps(doc))
    assert main(["rules", "validate", "--path", str(p)]) == 2
    assert doc["rules"][0]["rule_id"] in capsys.readouterr().err


def test_rules_validate_default(capsys):
    assert main(["rules", "validate"]) == 0
    assert "OK" in capsys.readouterr().out


def test_rules_list_after_reload(tmp_path, monkeypatch, capsys):
    from safekv.detection import RuleEngine

    p = tmp_path / "rules.json"
    shutil.copy(default_rules_path(), p)
    monkeypatch.setenv("SAFEKV_SIM_PATTERNS", str(p))
    assert main(["rules", "list"]) == 0
    assert "custom_codename" not in capsys.readouterr().out
    doc = json.loads(p.read_text())
    doc["rules"].append({"rule_id": "custom_codename", "category": "Custom", "kind": "blacklist",
                         "pattern": "bluebird"})
    p.write_text(json.dumps(doc))
    engine = RuleEngine.from_path(default_rules_path())
    engine.reload(p)
    assert main(["rules", "list"]) == 0
    listed = capsys.readouterr().out.splitlines()
    assert len(listed) == len(engine.active) and any(line.startswith("custom_codename") for line in listed)


def test_rules_test_needs_text(capsys):
    assert main(["rules", "test"]) == 2


# ---------------------------------------------------------------- report
@pytest.fixture
def artifacts(tiny, tmp_path):
    out = tmp_path / "runs"
    assert main(["--quiet", "run", str(tiny), "--output", str(out)]) == 0
    return out


def test_report_tables_and_plots(artifacts, tmp_path, capsys):
    rep = tmp_path / "rep"
    assert main(["report", str(artifacts), "--report-dir", str(rep)]) == 0
    out = capsys.readouterr().out
    rows = list(csv.DictReader((rep / "summary.csv").open()))
    assert {r["run"] for r in rows} == {"GlobalShare", "CachePartition", "SafeKV"}
    tiers = list(csv.DictReader((rep / "tier_split.csv").open()))
    assert [t["run"] for t in tiers] == ["SafeKV"] and "tier12_fraction" in out
    for png in ("ttft_distribution.png", "defense_rate.png", "tier_split.png", "throughput.png"):
        assert (rep / png).stat().st_size > 0


def test_report_two_runs_side_by_side(artifacts, tmp_path, capsys):
    assert main(["report", str(artifacts / "GlobalShare"), str(artifacts / "CachePartition"), "--no-plots",
                 "--report-dir", str(tmp_path / "r")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert "ttft_mean" in lines[0] and len(lines) >= 3


def test_report_corrupt_metrics(artifacts, capsys):
    (artifacts / "SafeKV" / "metrics.json").write_text("{oops")
    assert main(["report", str(artifacts)]) == 2


def test_report_incompatible_version(artifacts):
    m = artifacts / "GlobalShare" / "metrics.json"
    doc = json.loads(m.read_text())
    doc["format_version"] = FORMAT_VERSION + 1
    m.write_text(json.dumps(doc))
    assert main(["report", str(artifacts / "GlobalShare")]) == 2


def test_report_missing_dir(tmp_path):
    assert main(["report", str(tmp_path / "none")]) == 2
