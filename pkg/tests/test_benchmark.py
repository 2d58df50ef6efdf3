from __future__ import annotations

import json
import math
from fractions import Fraction
from pathlib import Path

import numpy as np
import oracles
import pytest
from conftest import FIXTURES
from hypothesis import given, settings
from hypothesis import strategies as st

from kfl.benchmark import (
    BugReport,
    FLTask,
    betainc,
    dump_tasks,
    evaluate,
    exact_recall,
    format_predictions,
    ground_truth_from_patch,
    load_tasks,
    method_evaluate,
    parse_timestamp,
    read_predictions,
    significance,
    t_two_sided_p,
)
from kfl.errors import DiffParseError, InvariantViolation, LengthMismatch, ParseError, UnknownTaskId
from kfl.retrieval import RankedList

EVAL = FIXTURES / "eval"
SIG = FIXTURES / "significance"
DIFFS = FIXTURES / "diffs"

# hand-computed from the fixture's reciprocal ranks:
# mean(d) = 77/240, s_d^2 = 26047/273600, n = 20, t = mean / sqrt(s_d^2 / n)
SIG_T = (77 / 240) / math.sqrt(26047 / 273600 / 20)
SIG_P = 1.7447e-4  # two-sided, df = 19 (t-table: p < 0.001)


def _rec(tid="A", **over):
    rec = {
        "id": tid,
        "report": {"title": "t", "description": "d", "report_date": "2020-05-01T00:00:00Z"},
        "codebase": "/src",
        "gold_files": ["a.c"],
    }
    rec.update(over)
    return rec


def _write(tmp_path: Path, recs) -> Path:
    p = tmp_path / "tasks.jsonl"
    p.write_text("".join(json.dumps(r) + "\n" for r in recs))
    return p


# --- tasks ------------------------------------------------------------------


def test_load_two_tasks(tmp_path):
    tasks = load_tasks(_write(tmp_path, [_rec("A"), _rec("B")]))
    assert [t.id for t in tasks] == ["A", "B"]
    assert tasks[0].report.report_date == parse_timestamp("2020-05-01T00:00:00+00:00")


def test_two_gold_files_violates(tmp_path):
    with pytest.raises(InvariantViolation) as ei:
        load_tasks(_write(tmp_path, [_rec("A"), _rec("B", gold_files=["a.c", "b.c"])]))
    assert ei.value.task_ids == ["B"]


def test_missing_title_is_parse_error(tmp_path):
    rec = _rec()
    del rec["report"]["title"]
    with pytest.raises(ParseError):
        load_tasks(_write(tmp_path, [rec]))


def test_bad_json_is_parse_error(tmp_path):
    p = tmp_path / "t.jsonl"
    p.write_text("{not json\n")
    with pytest.raises(ParseError) as ei:
        load_tasks(p)
    assert ei.value.line == 1


def test_all_violations_reported(tmp_path):
    recs = [_rec("A", gold_files=[]), _rec("B"), _rec("C", gold_files=["x.c", "y.c"])]
    with pytest.raises(InvariantViolation) as ei:
        load_tasks(_write(tmp_path, recs))
    assert ei.value.task_ids == ["A", "C"]


def test_task_from_patch(tmp_path):
    patch = (DIFFS / "01_single_hunk.diff").read_text()
    rec = _rec(patch=patch)
    del rec["gold_files"]
    (t,) = load_tasks(_write(tmp_path, [rec]))
    assert t.gold_files == ["drivers/acpi/ec.c"] and t.gold_methods == [("drivers/acpi/ec.c", "ec_poll")]


def test_dump_load_roundtrip(tmp_path):
    tasks = load_tasks(EVAL / "tasks.jsonl")
    p = tmp_path / "again.jsonl"
    p.write_text(dump_tasks(tasks))
    again = load_tasks(p)
    assert [t.as_dict() for t in again] == [t.as_dict() for t in tasks]


# --- ground truth -----------------------------------------------------------


def test_ground_truth_example():
    diff = "--- a/drivers/acpi/ec.c\n+++ b/drivers/acpi/ec.c\n@@ -10,6 +10,8 @@ static int ec_poll\n a\n b\n+c\n+d\n e\n f\n g\n h\n"
    assert ground_truth_from_patch(diff) == (["drivers/acpi/ec.c"], [("drivers/acpi/ec.c", "ec_poll")])


def test_ground_truth_makefile_only():
    assert ground_truth_from_patch((DIFFS / "02_makefile_only.diff").read_text()) == ([], [])


def test_ground_truth_three_file_fixture():
    files, methods = ground_truth_from_patch((DIFFS / "03_three_files.diff").read_text())
    assert len(files) == 2 and len(methods) == 3


def test_ground_truth_no_hunk():
    with pytest.raises(DiffParseError):
        ground_truth_from_patch("just some prose\n")


def _diff_cases():
    return sorted(json.loads((DIFFS / "expected.json").read_text()).items())


@pytest.mark.parametrize("name,expected", _diff_cases(), ids=[n for n, _ in _diff_cases()])
def test_ground_truth_fixtures(name, expected):
    sources = {k: (FIXTURES / v).read_text() for k, v in expected.get("sources", {}).items()} or None
    files, methods = ground_truth_from_patch((DIFFS / name).read_text(), sources)
    assert files == expected["files"]
    assert [list(m) for m in methods] == expected["methods"]


# --- evaluation -------------------------------------------------------------


def test_evaluate_three_task_fixture():
    tasks = load_tasks(EVAL / "tasks.jsonl")
    rep = evaluate(read_predictions(EVAL / "predictions.tsv"), tasks, [1, 5, 10])
    assert [rep.per_task[t][0] for t in ("T1", "T2", "T3")] == [1, 4, math.inf]
    assert rep.recall_at[1] == pytest.approx(1 / 3, abs=1e-9)
    assert rep.recall_at[5] == pytest.approx(2 / 3, abs=1e-9)
    assert rep.recall_at[10] == pytest.approx(2 / 3, abs=1e-9)
    assert rep.mrr == pytest.approx((1 + 0.25 + 0) / 3, abs=1e-9)


def _synthetic_tasks(n):
    r = BugReport("t", "d")
    return [FLTask(f"t{i:03d}", r, "", [f"g{i}.c"]) for i in range(n)]


def test_evaluate_all_rank_one():
    tasks = _synthetic_tasks(5)
    rep = evaluate({t.id: [t.gold_files[0]] for t in tasks}, tasks, [1, 5, 10])
    assert all(v == 1.0 for v in rep.recall_at.values()) and rep.mrr == 1.0


def test_evaluate_shape_250_tasks():
    tasks = _synthetic_tasks(250)
    preds = {t.id: [t.gold_files[0]] if i < 42 else ["other.c"] for i, t in enumerate(tasks)}
    rep = evaluate(preds, tasks, [1])
    assert rep.recall_at[1] == pytest.approx(0.168, abs=1e-12)
    assert exact_recall([r for r, _ in rep.per_task.values()], 1) == Fraction(42, 250)


def test_evaluate_unknown_task_id():
    with pytest.raises(UnknownTaskId):
        evaluate({"nope": []}, _synthetic_tasks(1))


def test_evaluate_accepts_ranked_list():
    tasks = _synthetic_tasks(1)
    rep = evaluate({"t000": RankedList.from_paths(["x.c", "g0.c"])}, tasks, [1, 2])
    assert rep.per_task["t000"] == (2, 0.5)


@given(st.lists(st.one_of(st.none(), st.integers(1, 15)), min_size=1, max_size=30))
@settings(max_examples=100, deadline=None)
def test_evaluate_vs_oracle(ranks):
    tasks = _synthetic_tasks(len(ranks))
    preds = {}
    for t, r in zip(tasks, ranks):
        items = [f"x{j}.c" for j in range(15)]
        if r is not None:
            items[r - 1] = t.gold_files[0]
        preds[t.id] = items
    rep = evaluate(preds, tasks, [1, 5, 10])
    want = [oracles.gold_rank(preds[t.id], t.gold_files[0]) for t in tasks]
    for k in (1, 5, 10):
        assert rep.recall_at[k] == pytest.approx(sum(1 for r in want if r <= k) / len(want), abs=1e-12)
    assert rep.mrr == pytest.approx(sum(0 if math.isinf(r) else 1 / r for r in want) / len(want), abs=1e-12)
    assert 0 <= rep.mrr <= 1
    assert rep.recall_at[1] <= rep.recall_at[5] <= rep.recall_at[10]


def _mtask(gold):
    return [FLTask("m", BugReport("t", "d"), "", ["f.c"], gold)]


def test_method_evaluate_rank_two():
    rep = method_evaluate({"m": [("f.c", "bar"), ("f.c", "foo")]}, _mtask([("f.c", "foo")]), [1, 5])
    assert rep.per_task["m"][0] == 2


def test_method_evaluate_file_never_predicted():
    rep = method_evaluate({"m": [("g.c", "foo")]}, _mtask([("f.c", "foo")]), [1])
    assert rep.per_task["m"][0] == math.inf


def test_method_evaluate_best_rank():
    pred = [("f.c", f"x{i}") for i in range(10)]
    pred[2] = ("f.c", "a")
    pred[6] = ("f.c", "b")
    rep = method_evaluate({"m": pred}, _mtask([("f.c", "a"), ("f.c", "b")]), [1, 5])
    assert rep.per_task["m"][0] == 3


# --- prediction files -------------------------------------------------------


def test_predictions_roundtrip(tmp_path):
    preds = {"b": ["x.c", "y.c"], "a": ["z.h"]}
    p = tmp_path / "p.tsv"
    p.write_text(format_predictions(preds))
    assert p.read_text().splitlines()[0] == "a\t1\tz.h"
    assert read_predictions(p) == {"a": ["z.h"], "b": ["x.c", "y.c"]}


def test_method_predictions_roundtrip(tmp_path):
    preds = {"a": [("f.c", "foo"), ("g.c", "bar")]}
    p = tmp_path / "p.tsv"
    p.write_text(format_predictions(preds))
    assert read_predictions(p, methods=True) == preds


def test_predictions_non_contiguous(tmp_path):
    p = tmp_path / "p.tsv"
    p.write_text("a\t1\tx.c\na\t3\ty.c\n")
    with pytest.raises(ParseError):
        read_predictions(p)


# --- significance -----------------------------------------------------------


def _sig_rrs():
    tasks = load_tasks(SIG / "tasks.jsonl")
    ids = [t.id for t in tasks]
    a = evaluate(read_predictions(SIG / "run_a.tsv"), tasks).reciprocal_ranks(ids)
    b = evaluate(read_predictions(SIG / "run_b.tsv"), tasks).reciprocal_ranks(ids)
    return a, b


def test_significance_fixture_matches_hand_computation():
    a, b = _sig_rrs()
    res = significance(a, b)
    assert res.mean_diff == pytest.approx(77 / 240, abs=1e-12)
    assert res.t_stat == pytest.approx(SIG_T, abs=1e-6)
    assert res.p_value == pytest.approx(SIG_P, abs=1e-4)
    t_oracle, _ = oracles.paired_t(a, b)
    assert res.t_stat == pytest.approx(t_oracle, abs=1e-9)
    assert not res.degenerate


def test_significance_matches_scipy():
    stats = pytest.importorskip("scipy.stats")
    a, b = _sig_rrs()
    ref = stats.ttest_rel(a, b)
    res = significance(a, b)
    assert res.t_stat == pytest.approx(ref.statistic, abs=1e-9)
    assert res.p_value == pytest.approx(ref.pvalue, abs=1e-10)


def test_significance_identical():
    a = [1.0, 0.5, 0.0, 0.25]
    res = significance(a, a)
    assert res.mean_diff == 0 and res.p_value == 1.0 and res.degenerate


def test_significance_constant_shift():
    b = [0.1, 0.5, 0.2, 0.3, 0.0]
    res = significance([x + 0.1 for x in b], b)
    assert res.degenerate and res.mean_diff > 0 and res.t_stat == math.inf and res.p_value == 0.0


def test_significance_length_mismatch():
    with pytest.raises(LengthMismatch):
        significance([1.0, 0.5], [1.0])


def test_bootstrap_reproducible():
    a, b = _sig_rrs()
    r1, r2 = significance(a, b, seed=42), significance(a, b, seed=42)
    assert r1.ci_a == r2.ci_a and r1.ci_b == r2.ci_b
    assert r1.ci_a[0] <= r1.mean_a <= r1.ci_a[1]


def test_bootstrap_protocol_independent_reimplementation():
    a, b = _sig_rrs()
    rng = np.random.default_rng(42)
    cis = []
    for arr in (np.asarray(a), np.asarray(b)):
        means = np.array([arr[rng.integers(0, len(arr), len(arr))].mean() for _ in range(1000)])
        cis.append((np.percentile(means, 2.5), np.percentile(means, 97.5)))
    res = significance(a, b, seed=42)
    assert res.ci_a == pytest.approx(cis[0], abs=1e-12)
    assert res.ci_b == pytest.approx(cis[1], abs=1e-12)


@given(st.floats(0.05, 20), st.floats(0.05, 20), st.floats(0.001, 0.999))
@settings(max_examples=200, deadline=None)
def test_betainc_vs_scipy(a, b, x):
    special = pytest.importorskip("scipy.special")
    assert betainc(a, b, x) == pytest.approx(float(special.betainc(a, b, x)), abs=1e-10)


def test_t_p_limits():
    assert t_two_sided_p(0.0, 10) == pytest.approx(1.0)
    assert t_two_sided_p(math.inf, 10) == 0.0
