"""Benchmark tasks with their fix-patch ground truth, plus scoring."""

from __future__ import annotations

import email.utils
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import SourceFile, extract_skeleton, normalize_path
from .errors import DiffParseError, InvariantViolation, LengthMismatch, ParseError, UnknownTaskId
from .patch import context_name, parse_diff

TASK_SCHEMA = "kfl-task-v1"
SOURCE_SUFFIXES = (".c", ".h")
DEFAULT_KS = (1, 5, 10)
BOOTSTRAP_RESAMPLES = 1000


def parse_timestamp(value: str | datetime) -> datetime:
    """ISO-8601 or RFC 2822 timestamp as an aware UTC datetime (naive input is taken as UTC)."""
    if isinstance(value, datetime):
        dt = value
    else:
        text = str(value).strip()
        try:
            dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
        except ValueError:
            try:
                dt = email.utils.parsedate_to_datetime(text)
            except (TypeError, ValueError) as exc:
                raise ValueError(f"unparseable timestamp {value!r}") from exc
            if dt is None:
                raise ValueError(f"unparseable timestamp {value!r}")
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


@dataclass(frozen=True)
class BugReport:
    title: str
    description: str
    product: str = ""
    component: str = ""
    hardware: str = ""
    kernel_version: str = ""
    report_date: datetime = datetime(1970, 1, 1, tzinfo=timezone.utc)

    def as_dict(self) -> dict:
        return {
            "title": self.title,
            "description": self.description,
            "product": self.product,
            "component": self.component,
            "hardware": self.hardware,
            "kernel_version": self.kernel_version,
            "report_date": self.report_date.isoformat(),
        }


@dataclass
class FLTask:
    id: str
    report: BugReport
    codebase_root: str
    gold_files: list[str]
    gold_methods: list[tuple[str, str]] = field(default_factory=list)

    def violations(self) -> list[str]:
        out = []
        if not self.report.title.strip():
            out.append("empty title")
        if not self.report.description.strip():
            out.append("empty description")
        if len(self.gold_files) != 1:
            out.append(f"expected exactly one gold file, got {len(self.gold_files)}")
        for f, _ in self.gold_methods:
            if f not in self.gold_files:
                out.append(f"gold method file {f} not among gold files")
        return out

    def as_dict(self) -> dict:
        return {
            "schema": TASK_SCHEMA,
            "id": self.id,
            "report": self.report.as_dict(),
            "codebase": self.codebase_root,
            "gold_files": self.gold_files,
            "gold_methods": [list(m) for m in self.gold_methods],
        }


def _req(rec: dict, key: str, line: int):
    if key not in rec or rec[key] is None:
        raise ParseError(line, f"missing required field {key!r}")
    return rec[key]


def _task_from_record(rec: dict, line: int) -> FLTask:
    if not isinstance(rec, dict):
        raise ParseError(line, "record is not an object")
    schema = rec.get("schema", TASK_SCHEMA)
    if schema != TASK_SCHEMA:
        raise ParseError(line, f"unsupported schema {schema!r}")
    task_id = str(_req(rec, "id", line))
    r = rec.get("report", rec)
    if not isinstance(r, dict):
        raise ParseError(line, "report is not an object")
    try:
        date = parse_timestamp(_req(r, "report_date", line))
    except ValueError as exc:
        raise ParseError(line, str(exc)) from exc
    report = BugReport(
        title=str(_req(r, "title", line)),
        description=str(_req(r, "description", line)),
        product=str(r.get("product", "")),
        component=str(r.get("component", "")),
        hardware=str(r.get("hardware", "")),
        kernel_version=str(r.get("kernel_version", "")),
        report_date=date,
    )
    gold = rec.get("gold_files", rec.get("paths"))
    methods = rec.get("gold_methods", rec.get("methods"))
    if gold is None and rec.get("patch"):
        try:
            gold, methods = ground_truth_from_patch(rec["patch"])
        except DiffParseError as exc:
            raise ParseError(line, f"patch: {exc}") from exc
    if gold is None:
        raise ParseError(line, "missing required field 'gold_files'")
    if isinstance(gold, str):
        gold = [gold]
    gold_files = [normalize_path(str(g)) or str(g) for g in gold]
    gold_methods = []
    for m in methods or []:
        if isinstance(m, str) and "::" in m:
            f, name = m.rsplit("::", 1)
        elif isinstance(m, (list, tuple)) and len(m) == 2:
            f, name = m
        else:
            raise ParseError(line, f"malformed gold method {m!r}")
        gold_methods.append((normalize_path(str(f)) or str(f), str(name)))
    codebase = str(rec.get("codebase", rec.get("codebase_root", "")))
    return FLTask(task_id, report, codebase, gold_files, gold_methods)


def load_tasks(path: str | Path) -> list[FLTask]:
    """Read a ``kfl-task-v1`` line-delimited task file and validate every task."""
    tasks: list[FLTask] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(line_no, f"invalid JSON: {exc.msg}") from exc
            tasks.append(_task_from_record(rec, line_no))
    bad: dict[str, list[str]] = {}
    seen: set[str] = set()
    for t in tasks:
        problems = t.violations()
        if t.id in seen:
            problems.append("duplicate task id")
        seen.add(t.id)
        if problems:
            bad[t.id] = problems
    if bad:
        reason = "; ".join(f"{tid}: {', '.join(p)}" for tid, p in bad.items())
        raise InvariantViolation(list(bad), reason)
    return tasks


def dump_tasks(tasks: Iterable[FLTask]) -> str:
    return "".join(json.dumps(t.as_dict(), ensure_ascii=False) + "\n" for t in tasks)


def ground_truth_from_patch(
    diff_text: str, sources: Mapping[str, str] | None = None
) -> tuple[list[str], list[tuple[str, str]]]:
    """Buggy files and methods touched by a fix patch.

    Methods come from the hunk headers' function context. When a hunk has
    no context and ``sources`` holds the pre-image text of the file, the
    enclosing skeleton elements of the changed lines are used instead.
    """
    patches = parse_diff(diff_text)
    if not any(fp.hunks for fp in patches):
        raise DiffParseError("no valid hunk found")
    files: dict[str, None] = {}
    methods: dict[tuple[str, str], None] = {}
    for fp in patches:
        path = fp.path
        if not fp.hunks or not path.endswith(SOURCE_SUFFIXES):
            continue
        files.setdefault(path, None)
        skeleton = None
        for hunk in fp.hunks:
            name = context_name(hunk.context)
            if name:
                methods.setdefault((path, name), None)
                continue
            if sources is None or (fp.old_path or path) not in sources:
                continue
            if skeleton is None:
                src = fp.old_path or path
                skeleton = extract_skeleton(SourceFile(src, sources[src]))
            for ln in hunk.changed_old_lines():
                el = skeleton.enclosing(ln)
                if el is not None and el.kind != "other_block":
                    methods.setdefault((path, el.name), None)
    return list(files), list(methods)


@dataclass
class EvalReport:
    per_task: dict[str, tuple[float, float]]
    recall_at: dict[int, float]
    mrr: float
    n_tasks: int

    def as_dict(self) -> dict:
        return {
            "n_tasks": self.n_tasks,
            "recall_at": {str(k): v for k, v in sorted(self.recall_at.items())},
            "mrr": self.mrr,
            "per_task": {
                tid: {"rank": None if math.isinf(r) else int(r), "rr": rr}
                for tid, (r, rr) in sorted(self.per_task.items())
            },
        }

    def reciprocal_ranks(self, ids: Sequence[str]) -> list[float]:
        return [self.per_task[i][1] for i in ids]


def _paths_of(pred) -> list:
    if pred is None:
        return []
    if hasattr(pred, "paths"):
        return list(pred.paths)
    return list(pred)


def _score(ranks: dict[str, float], ks: Sequence[int]) -> EvalReport:
    n = len(ranks)
    per_task = {tid: (r, 0.0 if math.isinf(r) else 1.0 / r) for tid, r in ranks.items()}
    recall = {k: (sum(1 for r in ranks.values() if r <= k) / n if n else 0.0) for k in ks}
    mrr = sum(rr for _, rr in per_task.values()) / n if n else 0.0
    return EvalReport(per_task, recall, mrr, n)


def _check_ids(predictions: Mapping, tasks: Sequence[FLTask]) -> None:
    known = {t.id for t in tasks}
    unknown = sorted(set(predictions) - known)
    if unknown:
        raise UnknownTaskId(", ".join(unknown))


def evaluate(predictions: Mapping[str, object], tasks: Sequence[FLTask], ks: Sequence[int] = DEFAULT_KS) -> EvalReport:
    """File-level recall@k and MRR; a task without a prediction entry counts as a miss."""
    _check_ids(predictions, tasks)
    ranks: dict[str, float] = {}
    for t in tasks:
        paths = _paths_of(predictions.get(t.id))
        gold = t.gold_files[0]
        ranks[t.id] = next((i for i, p in enumerate(paths, start=1) if p == gold), math.inf)
    return _score(ranks, ks)


def method_evaluate(
    predictions: Mapping[str, Sequence[tuple[str, str]]], tasks: Sequence[FLTask], ks: Sequence[int] = DEFAULT_KS
) -> EvalReport:
    """Method-level scoring: a hit needs both file and element name; best gold rank counts."""
    _check_ids(predictions, tasks)
    ranks: dict[str, float] = {}
    for t in tasks:
        gold = set(t.gold_methods)
        ranks[t.id] = next(
            (i for i, pair in enumerate(predictions.get(t.id) or [], start=1) if tuple(pair) in gold), math.inf
        )
    return _score(ranks, ks)


def exact_recall(ranks: Iterable[float], k: int) -> Fraction:
    ranks = list(ranks)
    return Fraction(sum(1 for r in ranks if r <= k), len(ranks))


# --- prediction files -------------------------------------------------------


def format_predictions(predictions: Mapping[str, Sequence]) -> str:
    """``task_id<TAB>rank<TAB>path[<TAB>element]`` lines, tasks in sorted order."""
    lines = []
    for tid in sorted(predictions):
        for rank, item in enumerate(_paths_of(predictions[tid]), start=1):
            if isinstance(item, (tuple, list)):
                lines.append(f"{tid}\t{rank}\t{item[0]}\t{item[1]}")
            else:
                lines.append(f"{tid}\t{rank}\t{item}")
    return "".join(line + "\n" for line in lines)


def read_predictions(path: str | Path, methods: bool = False) -> dict[str, list]:
    out: dict[str, list] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) not in (3, 4):
                raise ParseError(line_no, "expected task_id, rank, path[, element]")
            tid, rank_s, p = parts[0], parts[1], parts[2]
            try:
                rank = int(rank_s)
            except ValueError as exc:
                raise ParseError(line_no, f"bad rank {rank_s!r}") from exc
            items = out.setdefault(tid, [])
            if rank != len(items) + 1:
                raise ParseError(line_no, f"ranks for {tid} must be contiguous from 1")
            if methods:
                if len(parts) != 4:
                    raise ParseError(line_no, "method-level prediction needs an element column")
                items.append((p, parts[3]))
            else:
                items.append(p)
    return out


# --- significance -----------------------------------------------------------


@dataclass
class SignificanceResult:
    mean_a: float
    mean_b: float
    std_a: float
    std_b: float
    mean_diff: float
    t_stat: float
    p_value: float
    ci_a: tuple[float, float]
    ci_b: tuple[float, float]
    degenerate: bool = False

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["ci_a"], d["ci_b"] = list(self.ci_a), list(self.ci_b)
        if math.isinf(self.t_stat):
            d["t_stat"] = "inf" if self.t_stat > 0 else "-inf"
        return d


def _betacf(a: float, b: float, x: float) -> float:
    # modified Lentz evaluation of the incomplete-beta continued fraction
    tiny, eps = 1e-300, 3e-16
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, 1000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            break
    return h


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    if math.isinf(t):
        return 0.0
    return min(1.0, max(0.0, betainc(df / 2.0, 0.5, df / (df + t * t))))


def bootstrap_ci(values: np.ndarray, rng: np.random.Generator, resamples: int = BOOTSTRAP_RESAMPLES, level: float = 0.95):
    n = len(values)
    idx = rng.integers(0, n, size=(resamples, n))
    means = values[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.percentile(means, [100 * alpha, 100 * (1 - alpha)])
    return float(lo), float(hi)


def significance(scores_a: Sequence[float], scores_b: Sequence[float], seed: int = 42) -> SignificanceResult:
    """Paired two-sided t-test plus percentile-bootstrap 95% CIs of each mean.

    When every paired difference is the same the t statistic is undefined:
    the result is flagged ``degenerate`` with p = 1 for a zero difference and
    p = 0 (t = +/-inf) otherwise.
    """
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise LengthMismatch(f"{a.shape} vs {b.shape}")
    n = len(a)
    if n < 2:
        raise LengthMismatch("need at least two paired samples")
    diff = a - b
    mean_diff = float(diff.mean())
    sd = float(diff.std(ddof=1))
    scale = max(1.0, float(np.abs(diff).max()))
    degenerate = sd <= 1e-12 * scale
    if degenerate:
        if abs(mean_diff) <= 1e-12 * scale:
            mean_diff, t, p = 0.0, 0.0, 1.0
        else:
            t, p = math.copysign(math.inf, mean_diff), 0.0
    else:
        t = mean_diff / (sd / math.sqrt(n))
        p = t_two_sided_p(t, n - 1)
    rng = np.random.default_rng(seed)
    ci_a = bootstrap_ci(a, rng)
    ci_b = bootstrap_ci(b, rng)
    return SignificanceResult(
        mean_a=float(a.mean()),
        mean_b=float(b.mean()),
        std_a=float(a.std(ddof=1)),
        std_b=float(b.std(ddof=1)),
        mean_diff=mean_diff,
        t_stat=t,
        p_value=p,
        ci_a=ci_a,
        ci_b=ci_b,
        degenerate=degenerate,
    )
