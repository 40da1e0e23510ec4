from __future__ import annotations

import pytest

from safekv.config import load_config
from safekv.core import DEFAULT_VOCAB, UserId
from safekv.detection import RuleEngine
from safekv.workload import (PRESET_NAMES, InfeasibleSpec, Request, Scenario, Sensitivity, WorkloadSpec, generate,
                             load_corpus_csv, luhn_valid, measure_reuse, plan_sessions, plant_secrets, tier1_corpus)


def reqs(pairs):
    return [Request(i, UserId(u), tuple(toks), float(i)) for i, (u, toks) in enumerate(pairs)]


def test_identical_requests_one_user():
    n = 10
    r = measure_reuse(reqs([(1, range(50))] * n))
    assert r["intra_reuse"] == pytest.approx((n - 1) / n) and r["inter_reuse"] == 0


def test_identical_requests_distinct_users():
    n = 10
    r = measure_reuse(reqs([(u, range(50)) for u in range(n)]))
    assert r["inter_reuse"] == pytest.approx((n - 1) / n) and r["intra_reuse"] == 0


@pytest.mark.parametrize("intra,inter", [(0.0, 0.631), (0.0706, 0.2549), (0.3147, 0.0945), (0.0, 0.0)])
def test_overlap_targets_recovered(intra, inter):
    spec = WorkloadSpec(n_users=64, n_requests=400, intra_user_overlap=intra, inter_user_overlap=inter, seed=3)
    got = measure_reuse(generate(spec))
    assert abs(got["intra_reuse"] - intra) <= 0.02 and abs(got["inter_reuse"] - inter) <= 0.02


@pytest.mark.parametrize("name", PRESET_NAMES)
def test_preset_overlap_calibration(name):
    spec = load_config(name).workload
    got = measure_reuse(generate(spec))
    assert abs(got["intra_reuse"] - spec.intra_user_overlap) <= 0.02
    assert abs(got["inter_reuse"] - spec.inter_user_overlap) <= 0.02


def test_deterministic_stream():
    spec = WorkloadSpec(seed=11)
    assert generate(spec).stream_bytes() == generate(spec).stream_bytes()
    assert generate(spec).digest() != generate(WorkloadSpec(seed=12)).digest()


def test_zero_density_has_no_truth():
    assert generate(WorkloadSpec(secret_density=0.0)).truth == {}


def test_infeasible_specs():
    with pytest.raises(InfeasibleSpec):
        WorkloadSpec(inter_user_overlap=0.6, intra_user_overlap=0.5).validate()
    with pytest.raises(InfeasibleSpec):
        plan_sessions(WorkloadSpec(n_users=1, inter_user_overlap=0.3))
    with pytest.raises(InfeasibleSpec):
        WorkloadSpec.from_dict({"bogus": 1})


@pytest.mark.parametrize("name", PRESET_NAMES)
def test_ground_truth_consistency(name):
    """Always-sensitive spans flagged tier-1 are caught by a shipped rule; ContextOnly ones are not."""
    engine = RuleEngine()
    wl = generate(load_config(name).workload)
    for r in wl.requests:
        text = DEFAULT_VOCAB.decode(r.tokens)
        offs = DEFAULT_VOCAB.char_offsets(r.tokens)
        for s in r.spans:
            hit = engine.scan_span(text, offs[s.start], offs[s.end]).sensitive
            if s.sensitivity is Sensitivity.ALWAYS and s.tier1:
                assert hit, (name, s.category, text[offs[s.start]:offs[s.end]])
            if s.sensitivity is Sensitivity.CONTEXT_ONLY:
                assert not hit


def test_system_prompt_scenario_shares_prefix():
    spec = load_config("system_prompt").workload
    wl = generate(spec)
    assert spec.scenario is Scenario.SYSTEM_PROMPT
    heads = {r.tokens[:spec.system_prompt_tokens] for r in wl.requests}
    assert len(heads) == 1


def test_tier1_corpus_shape():
    corpus = tier1_corpus(50, seed=1)
    assert len(corpus) == 50
    for text, cat, (a, b) in corpus:
        assert 0 <= a < b <= len(text) and cat


def test_luhn():
    assert luhn_valid("4539 1488 0343 6467")
    assert not luhn_valid("4539 1488 0343 6468")


def test_plant_secrets_layout():
    secrets = plant_secrets(20, seed=1, digits=5, prefix_tokens=32)
    assert len({s.victim for s in secrets}) == 20
    for s in secrets:
        assert len(s.known_prefix) == 32 and len(s.secret) == 5
        assert all(c in s.candidate_sets[i] for i, c in enumerate(s.secret))
        assert s.tokens[s.span.start:s.span.end] == s.secret


def test_load_corpus_csv(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("user_id,turn_index,text,secret_span_start,secret_span_end,category\n"
                 "1,0,hello there,,,\n"
                 "1,1,my ssn is 123-45-6789,10,21,Identity Information\n"
                 "2,0,hello there,,,\n")
    out = load_corpus_csv(p)
    assert [r.user.value for r in out] == [1, 2, 1]
    second = out[2]
    assert second.text == "hello there my ssn is 123-45-6789"
    (span,) = second.spans
    assert second.text[span.start:span.end] == "123-45-6789"


def test_csv_missing_columns(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("user_id,text\n1,hi\n")
    with pytest.raises(InfeasibleSpec):
        load_corpus_csv(p)
