"""Command-line entry point: ``kfl <command> ...``."""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import random
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .benchmark import (
    DEFAULT_KS,
    evaluate,
    format_predictions,
    load_tasks,
    method_evaluate,
    read_predictions,
    significance,
)
from .corpus import CodebaseIndex, index_codebase
from .errors import KflError
from .io import dumps_jsonl, write_atomic
from .llm import Budgets, Transcript, cost_summary, provider_from_settings
from .mailkb import MailIndex, build_mail_index, ingest_mbox
from .pipeline import AgentPrediction, PipelineConfig, PipelineDeps, localize, method_localize
from .retrieval import Query, bluir_rank, bm25_rank, embed_rank, rvsm_rank

log = logging.getLogger("kfl")

DEFAULT_SEED = 42
_BOOL_TRUE = {"1", "true", "yes", "on"}


def load_config(path: str | None) -> dict[str, str]:
    """Flat ``key = value`` settings; an optional ``[kfl]`` section header is accepted."""
    if not path:
        return {}
    text = Path(path).read_text(encoding="utf-8")
    if not text.lstrip().startswith("["):
        text = "[kfl]\n" + text
    parser = configparser.ConfigParser()
    parser.read_string(text)
    section = parser["kfl"] if parser.has_section("kfl") else parser[parser.sections()[0]]
    return dict(section)


def _setting(args, settings: dict, key: str, default=None):
    value = getattr(args, key, None)
    if value is not None:
        return value
    return settings.get(key, default)


def _flag(settings: dict, key: str, default: bool = True) -> bool:
    if key not in settings:
        return default
    return str(settings[key]).strip().lower() in _BOOL_TRUE


def _require_paths(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).exists():
            raise KflError(f"input path does not exist: {p}")


def _open_index(args):
    """The index for a task: ``--index`` (saved file or source dir) or the task's codebase root.

    A relative codebase root is taken relative to the task file's directory.
    """
    cache: dict[Path, CodebaseIndex] = {}

    def get(p: Path) -> CodebaseIndex:
        if p not in cache:
            cache[p] = index_codebase(p, jobs=args.jobs) if p.is_dir() else CodebaseIndex.load(p)
        return cache[p]

    if args.index:
        idx = get(Path(args.index))
        return lambda task: idx
    base = Path(args.tasks).parent
    return lambda task: get(base / task.codebase_root)


def _print_table(rows: list[tuple[str, str]]) -> None:
    width = max(len(k) for k, _ in rows)
    for k, v in rows:
        print(f"{k.ljust(width)}  {v}")


# --- commands ---------------------------------------------------------------


def cmd_index(args, settings) -> int:
    index = index_codebase(args.root, jobs=args.jobs)
    index.save(args.out)
    _print_table([("files", str(len(index))), ("avg tokens/file", f"{index.avg_doc_length:.1f}"), ("index", args.out)])
    return 0


def cmd_build_mailkb(args, settings) -> int:
    accepted = []
    rejected: dict[str, int] = {}
    for path in args.mbox:
        acc, rej = ingest_mbox(path)
        accepted.extend(acc)
        for k, v in rej.items():
            rejected[k] = rejected.get(k, 0) + v
    index = build_mail_index(accepted)
    index.save(args.out)
    write_atomic(f"{args.out}.rejections.json", json.dumps(rejected, indent=2, sort_keys=True) + "\n")
    rows = [("accepted", str(len(index)))] + [(f"rejected ({k})", str(v)) for k, v in sorted(rejected.items())]
    _print_table(rows)
    return 0


def cmd_baseline(args, settings) -> int:
    tasks = load_tasks(args.tasks)
    index_for = _open_index(args)
    provider = None
    if args.method == "embed":
        if args.offline:
            os.environ.setdefault("HF_HUB_OFFLINE", "1")
        from .retrieval import SentenceTransformerProvider

        provider = SentenceTransformerProvider(_setting(args, settings, "embed_model", "sentence-transformers/all-MiniLM-L6-v2"))
    preds = {}
    failures = {}
    for task in tasks:
        try:
            index = index_for(task)
            query = Query.from_report(task.report)
            if args.method == "bm25":
                ranked = bm25_rank(index, query, args.k)
            elif args.method == "rvsm":
                ranked = rvsm_rank(index, query, args.k)
            elif args.method == "bluir":
                ranked = bluir_rank(index, task.report, args.k)
            else:
                ranked = embed_rank(provider, index, query, args.k)
        except KflError as exc:
            failures[task.id] = str(exc)
            ranked = []
        preds[task.id] = ranked
    write_atomic(args.out, format_predictions(preds))
    _report_failures(failures)
    _print_table([("method", args.method), ("tasks", str(len(tasks))), ("predictions", args.out)])
    return 0


def _report_failures(failures: dict[str, str]) -> None:
    for tid, msg in sorted(failures.items()):
        print(f"task {tid} failed: {msg}", file=sys.stderr)


def _pipeline_config(args, settings) -> PipelineConfig:
    budgets = Budgets(
        description=int(settings.get("description_budget", Budgets.description)),
        mail=int(settings.get("mail_budget", Budgets.mail)),
        request=int(settings.get("request_budget", Budgets.request)),
    )
    return PipelineConfig(
        enable_dir=not args.no_dir and _flag(settings, "enable_dir"),
        enable_direct=not args.no_direct and _flag(settings, "enable_direct"),
        enable_mail=not args.no_mail and _flag(settings, "enable_mail"),
        enable_rerank=not args.no_rerank and _flag(settings, "enable_rerank"),
        k_dir=int(settings.get("k_dir", 10)),
        k_mail=int(settings.get("k_mail", 10)),
        k_hypothesis=int(settings.get("k_hypothesis", 10)),
        k_final=args.k if args.k is not None else int(settings.get("k_final", 10)),
        budgets=budgets,
    )


def _provider(args, settings):
    return provider_from_settings(settings, offline=args.offline, mock_script=args.mock_script)


def _write_cost(args, settings, transcript: Transcript, n_tasks: int) -> None:
    summary = cost_summary(
        transcript,
        n_tasks,
        float(settings.get("price_input_per_1k", 0.0025)),
        float(settings.get("price_output_per_1k", 0.01)),
    )
    write_atomic(f"{args.out}.transcript.jsonl", dumps_jsonl(transcript.to_records()))
    write_atomic(f"{args.out}.cost.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _print_table(
        [
            ("# Tokens (per task)", f"{summary['tokens_per_task']:.1f}"),
            ("$ Cost (per task)", f"{summary['cost_per_task']:.4f}"),
            ("provider calls", str(summary["calls"])),
        ]
    )


def _run_tasks(tasks, fn, jobs: int):
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


def cmd_enhance(args, settings) -> int:
    _require_paths(args.tasks, args.predictions, args.mailkb, args.index)
    tasks = load_tasks(args.tasks)
    agent = read_predictions(args.predictions)
    config = _pipeline_config(args, settings)
    provider = _provider(args, settings)
    mail_index = MailIndex.load(args.mailkb) if args.mailkb else None
    index_for = _open_index(args)

    def one(task):
        tr = Transcript()
        try:
            deps = PipelineDeps(index_for(task), provider, mail_index, tr)
            initial = AgentPrediction(task.id, tuple(agent.get(task.id, [])))
            res = localize(task, initial, config, deps)
            return task.id, res.ranking.paths, res.as_record(task.id), tr, None
        except KflError as exc:
            return task.id, [], {"task_id": task.id, "error": str(exc)}, tr, str(exc)

    results = _run_tasks(tasks, one, args.jobs)
    transcript = Transcript()
    preds, records, failures = {}, [], {}
    for tid, paths, record, tr, err in results:
        preds[tid] = paths
        records.append(record)
        for e in tr.entries:
            e.tag = f"{tid}:{e.tag}"
            transcript.append(e)
        if err:
            failures[tid] = err
    write_atomic(args.out, format_predictions(preds))
    write_atomic(f"{args.out}.provenance.jsonl", dumps_jsonl(records))
    _report_failures(failures)
    _print_table([("tasks", str(len(tasks))), ("failed", str(len(failures))), ("predictions", args.out)])
    _write_cost(args, settings, transcript, len(tasks))
    return 0


def cmd_methods(args, settings) -> int:
    _require_paths(args.tasks, args.predictions, args.index)
    tasks = load_tasks(args.tasks)
    file_preds = read_predictions(args.predictions)
    config = _pipeline_config(args, settings)
    provider = _provider(args, settings)
    index_for = _open_index(args)

    def one(task):
        tr = Transcript()
        try:
            pairs = method_localize(
                task.report, file_preds.get(task.id, []), index_for(task), provider, config.k_methods, tr,
                config.budgets,
            )
            return task.id, pairs, tr, None
        except KflError as exc:
            return task.id, [], tr, str(exc)

    results = _run_tasks(tasks, one, args.jobs)
    transcript = Transcript()
    preds, failures = {}, {}
    for tid, pairs, tr, err in results:
        preds[tid] = pairs
        for e in tr.entries:
            e.tag = f"{tid}:{e.tag}"
            transcript.append(e)
        if err:
            failures[tid] = err
    write_atomic(args.out, format_predictions(preds))
    _report_failures(failures)
    _print_table([("tasks", str(len(tasks))), ("failed", str(len(failures))), ("predictions", args.out)])
    _write_cost(args, settings, transcript, len(tasks))
    return 0


def _parse_ks(text: str) -> list[int]:
    ks = sorted({int(x) for x in text.split(",") if x.strip()})
    if not ks or ks[0] < 1:
        raise argparse.ArgumentTypeError("k values must be positive integers")
    return ks


def cmd_eval(args, settings) -> int:
    _require_paths(args.tasks, args.predictions, args.compare)
    tasks = load_tasks(args.tasks)
    methods = args.level == "method"
    scorer = method_evaluate if methods else evaluate
    ks = args.ks or list(DEFAULT_KS)
    runs = {Path(args.predictions).name: args.predictions}
    if args.compare:
        name_b = Path(args.compare).name
        if name_b in runs:
            name_b = f"{name_b} (2)"
        runs[name_b] = args.compare
    reports = {name: scorer(read_predictions(path, methods=methods), tasks, ks) for name, path in runs.items()}

    out: dict = {"level": args.level, "runs": {name: r.as_dict() for name, r in reports.items()}}
    for name, r in reports.items():
        rows = [(f"recall@{k}", f"{r.recall_at[k]:.3f}") for k in ks] + [("MRR", f"{r.mrr:.4f}"), ("tasks", str(r.n_tasks))]
        print(f"== {name}")
        _print_table(rows)
    if len(reports) == 2:
        (name_a, rep_a), (name_b, rep_b) = reports.items()
        ids = [t.id for t in tasks]
        sig = significance(rep_a.reciprocal_ranks(ids), rep_b.reciprocal_ranks(ids), seed=args.seed)
        out["significance"] = {"a": name_a, "b": name_b, **sig.as_dict()}
        print(f"== {name_a} vs {name_b}")
        _print_table(
            [
                ("mean (a)", f"{sig.mean_a:.3f} ± {sig.std_a:.3f}"),
                ("mean (b)", f"{sig.mean_b:.3f} ± {sig.std_b:.3f}"),
                ("mean diff", f"{sig.mean_diff:.3f}"),
                ("t-stat", f"{sig.t_stat:.3f}"),
                ("p-value", f"{sig.p_value:.4g}"),
                ("CI (a)", f"[{sig.ci_a[0]:.3f}, {sig.ci_a[1]:.3f}]"),
                ("CI (b)", f"[{sig.ci_b[0]:.3f}, {sig.ci_b[1]:.3f}]"),
            ]
        )
    if args.out:
        write_atomic(args.out, json.dumps(out, indent=2, sort_keys=True) + "\n")
    if args.figures:
        from .plotting import plot_metrics, plot_paired_rr

        fig_dir = Path(args.figures)
        plot_metrics(reports, fig_dir / "metrics.png")
        if len(reports) == 2:
            ids = [t.id for t in tasks]
            (name_a, rep_a), (name_b, rep_b) = reports.items()
            plot_paired_rr(rep_a.reciprocal_ranks(ids), rep_b.reciprocal_ranks(ids), (name_a, name_b),
                           fig_dir / "paired_rr.png")
    return 0


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value settings file")
    common.add_argument("--offline", action="store_true", help="forbid network access; requires --mock-script")
    common.add_argument("--mock-script", help="scripted responses for the mock provider")
    common.add_argument("--seed", type=int, default=DEFAULT_SEED)
    common.add_argument("--jobs", type=int, default=1, help="task-level parallelism")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="kfl", description=__doc__)
    parser.add_argument("--version", action="version", version=f"kfl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", parents=[common], help="index a C source tree")
    p.add_argument("root")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("build-mailkb", parents=[common], help="build the patch-mail knowledge base")
    p.add_argument("mbox", nargs="+", help="mbox files or maildir directories")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_mailkb)

    p = sub.add_parser("baseline", parents=[common], help="rank files with an IR baseline")
    p.add_argument("method", choices=["bm25", "rvsm", "bluir", "embed"])
    p.add_argument("--index", help="saved index file or source directory (default: each task's codebase)")
    p.add_argument("--tasks", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--embed-model")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)

    for name, func, helptext in (
        ("enhance", cmd_enhance, "refine agent predictions with expansion and fusion"),
        ("methods", cmd_methods, "method-level localization over file predictions"),
    ):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--index")
        p.add_argument("--tasks", required=True)
        p.add_argument("--predictions", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--k", type=int)
        if name == "enhance":
            p.add_argument("--mailkb")
            p.add_argument("--no-dir", action="store_true")
            p.add_argument("--no-direct", action="store_true")
            p.add_argument("--no-mail", action="store_true")
            p.add_argument("--no-rerank", action="store_true")
        else:
            p.set_defaults(no_dir=False, no_direct=False, no_mail=False, no_rerank=False)
        p.set_defaults(func=func)

    p = sub.add_parser("eval", parents=[common], help="recall@k / MRR, with significance for two runs")
    p.add_argument("--tasks", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--compare", help="second prediction file for a paired comparison")
    p.add_argument("--k", dest="ks", type=_parse_ks, help="comma-separated cutoffs (default 1,5,10)")
    p.add_argument("--level", choices=["file", "method"], default="file")
    p.add_argument("--out", help="JSON report path")
    p.add_argument("--figures", help="directory for PNG figures")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    random.seed(args.seed)
    try:
        settings = load_config(args.config)
        return args.func(args, settings)
    except (KflError, OSError, ValueError) as exc:
        print(f"kfl {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
