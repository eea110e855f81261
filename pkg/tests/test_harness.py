import json
import logging
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from sade import faultlib as F
from sade import harness as H
from sade.engine import Submission
from sade.faultlib import BENIGN, GroundTruth

from oracles import brute_prf


def _truth(*labels):
    return GroundTruth(True, frozenset(labels), frozenset({"d"}))


def test_exact_match_scores_one():
    r = H.score(Submission(True, frozenset({"bgp_acl_block"}), frozenset({"d"})), _truth("bgp_acl_block"))
    assert r["rca_f1"] == 1.0 and r["detection_correct"] and r["device_match"]


def test_extra_label_halves_precision():
    r = H.score(Submission(True, frozenset({"bgp_acl_block", "ospf_acl_block"}), frozenset({"d"})),
                _truth("bgp_acl_block"))
    assert (r["rca_precision"], r["rca_recall"]) == (0.5, 1.0)
    assert r["rca_f1"] == pytest.approx(2 / 3, abs=0)


def test_missing_submission_scores_zero():
    r = H.score(None, _truth("link_down"))
    assert r["rca_f1"] == 0.0 and not r["detection_correct"]
    assert not H.score(None, BENIGN)["detection_correct"]


_labels = st.frozensets(st.sampled_from(F.LABELS[:8]), max_size=5)


@given(_labels, _labels)
def test_score_agrees_with_counting_oracle(pred, truth):
    p, r, f1 = H.set_prf(pred, truth)
    bp, br, bf1 = brute_prf(set(pred), set(truth))
    assert (p, r) == (float(bp), float(br))
    assert f1 == float(bf1)
    assert 0 <= f1 <= min(1.0, 2 * p)


@given(st.frozensets(st.sampled_from(F.LABELS), min_size=1, max_size=6))
def test_identical_sets_score_one(labels):
    assert H.set_prf(labels, labels) == (1.0, 1.0, 1.0)


def _result(iid, correct=True, calls=10, outcome="submitted", benign=False, family="acl", size="small"):
    truth = BENIGN if benign else _truth("bgp_acl_block")
    if outcome == "no_submission":
        sub = None
    elif benign:
        sub = Submission(not correct)
    else:
        sub = Submission(True, frozenset({"bgp_acl_block" if correct else "link_down"}), frozenset({"d"}))
    return H.IncidentResult(iid, "clos_bgp", size, None if benign else "bgp_acl_block", None if benign else family,
                            truth, sub, **H.score(sub, truth), tool_calls=calls, outcome=outcome)


def test_all_correct_aggregate():
    m = H.aggregate([_result(f"i{k}") for k in range(5)] + [_result("b", benign=True)])
    assert m["detection_accuracy"] == 1.0 and m["mean_rca_f1"] == 1.0 and m["no_submission_rate"] == 0
    assert m["benign_f1"] == 1.0


def test_no_submission_rate_two_of_ten():
    rs = [_result(f"i{k}", outcome="no_submission" if k < 2 else "submitted") for k in range(10)]
    m = H.aggregate(rs)
    assert m["no_submission_rate"] == pytest.approx(0.2)
    assert m["mean_rca_f1"] == pytest.approx(0.8)


def test_calls_per_correct_ratio():
    # 382 correct submissions over 10,393 total calls -> 27.2 calls per correct
    rs = [_result(f"c{k}", calls=27) for k in range(382)] + [_result("x", correct=False, calls=10393 - 27 * 382)]
    m = H.aggregate(rs)
    assert m["correct"] == 382 and m["tool_calls"] == 10393
    assert round(m["tool_calls_per_correct"], 1) == 27.2


def test_zero_correct_reports_null():
    m = H.aggregate([_result("a", correct=False)])
    assert m["tool_calls_per_correct"] is None


_results = st.lists(st.builds(_result, st.text("abc", min_size=1, max_size=4), st.booleans(), st.integers(0, 50),
                              st.sampled_from(["submitted", "no_submission"]), st.booleans(),
                              st.sampled_from(["acl", "link"]), st.sampled_from(["small", "large"])), max_size=20)


@given(_results, _results)
def test_aggregation_is_linear_over_partitions(a, b):
    whole = H.stats_of(a + b).metrics()
    merged = H.stats_of(a).merge(H.stats_of(b)).metrics()
    assert whole.keys() == merged.keys()
    for k, v in whole.items():
        assert v == pytest.approx(merged[k]) if v is not None else merged[k] is None
    for k in ("detection_accuracy", "mean_rca_f1", "no_submission_rate"):
        if whole[k] is not None:
            assert 0 <= whole[k] <= 1


def test_filter_parsing():
    f = H.GridFilter.parse(["family=acl", "size=small,medium"])
    assert f.families == {"acl"} and f.sizes == {"small", "medium"} and not f.benign
    assert H.GridFilter.parse([]).benign
    assert H.GridFilter.parse(["family=acl", "benign=yes"]).benign
    with pytest.raises(ValueError):
        H.GridFilter.parse(["colour=red"])


def test_acl_filter_runs_only_acl_cells():
    cells = H.grid(flt=H.GridFilter.parse(["family=acl", "size=small"]))
    assert cells and all(F.FAMILY_OF[c.label] == "acl" for c in cells)
    run = H.run_grid(cells)
    assert {r.family for r in run.results} == {"acl"}
    assert all(r.correct for r in run.results)


def test_repeat_runs_byte_identical():
    flt = H.GridFilter.parse(["scenario=isp_static", "size=small", "family=link,host_ip,dns", "benign=yes"])
    dump = lambda run: "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in run.results)
    assert dump(H.run_grid(H.grid(flt=flt))) == dump(H.run_grid(H.grid(flt=flt)))


def _broken(t, label, target, seed):
    """Claims the fault but leaves the topology untouched."""
    faulty, truth = F.inject(t, label, target, seed)
    if label == "link_down":
        return F.copy_topology(t), truth
    return faulty, truth


def test_broken_injector_cell_excluded_and_logged(caplog):
    cells = H.grid(flt=H.GridFilter.parse(["scenario=clos_bgp", "size=small", "family=link"]))
    with caplog.at_level(logging.WARNING, logger="sade.harness"):
        run = H.run_grid(cells, injector=_broken)
    assert [c.label for c in run.excluded] == ["link_down"]
    assert run.excluded[0].note == "not_manifest(all links up)"
    assert any("link_down" in rec.getMessage() and "excluded" in rec.getMessage() for rec in caplog.records)
    assert sorted(r.label for r in run.results) == ["link_detach", "link_flap"]


def test_raising_injector_excluded():
    def boom(t, label, target, seed):
        raise RuntimeError("lab unreachable")
    cells = H.grid(flt=H.GridFilter.parse(["scenario=clos_bgp", "size=small", "label=host_crash"]))
    run = H.run_grid(cells, injector=boom)
    assert run.results == [] and "lab unreachable" in run.excluded[0].note


def test_report_files(tmp_path):
    run = H.run_grid(H.grid(flt=H.GridFilter.parse(["scenario=clos_bgp", "size=small", "family=tc", "benign=yes"])))
    m = H.aggregate(run.results)
    paths = H.report(m, run.results, tmp_path)
    assert sorted(p.name for p in paths) == ["breakdown.csv", "metrics.json", "results.jsonl", "summary.txt"]
    lines = (tmp_path / "results.jsonl").read_text().splitlines()
    assert len(lines) == len(run.results)
    assert (tmp_path / "breakdown.csv").read_text().startswith("breakdown,group,incidents,")
    assert json.loads((tmp_path / "metrics.json").read_text())["detection_accuracy"] == 1.0
    with pytest.raises(ValueError):
        H.report(m, run.results, tmp_path, formats=["xml"])


def test_parallel_workers_match_serial():
    flt = H.GridFilter.parse(["scenario=campus_ospf_service", "size=small", "family=dhcp,ospf"])
    serial = [r.to_dict() for r in H.run_grid(H.grid(flt=flt)).results]
    parallel = [r.to_dict() for r in H.run_grid(H.grid(flt=flt), workers=2).results]
    assert serial == parallel
