"""Expansion-and-fusion refinement of an agent's file predictions.

Each expansion source produces its own ranked file list: re-selection
within the predicted files' directories, and model hypotheses with or
without retrieved patch mails. The lists are fused by summed reciprocal
rank and optionally re-ranked by the model. A method-level step then picks
code elements from skeletons of the top files.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from .corpus import CodebaseIndex, directory_files, extract_skeleton, normalize_path
from .errors import ProviderError
from .llm import (
    Budgets,
    Transcript,
    ask_parsed,
    build_directory_prompt,
    build_hypothesis_prompt,
    build_method_prompt,
    build_rerank_prompt,
    parse_file_list,
    parse_hypotheses,
    parse_method_list,
)
from .mailkb import MailIndex, retrieve_mails, summarize_report
from .retrieval import RankedList

log = logging.getLogger(__name__)

SOURCES = ("dir", "direct", "mail")


@dataclass(frozen=True)
class AgentPrediction:
    task_id: str
    files: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if len(set(self.files)) != len(self.files):
            object.__setattr__(self, "files", tuple(dict.fromkeys(self.files)))


@dataclass(frozen=True)
class PipelineConfig:
    enable_dir: bool = True
    enable_direct: bool = True
    enable_mail: bool = True
    enable_rerank: bool = True
    k_dir: int = 10
    k_mail: int = 10
    k_hypothesis: int = 10
    k_final: int = 10
    k_methods: int = 10
    parallel_expansions: bool = False
    budgets: Budgets = Budgets()

    def __post_init__(self) -> None:
        if not (self.enable_dir or self.enable_direct or self.enable_mail):
            raise ValueError("at least one expansion must be enabled")


@dataclass
class MergedCandidates:
    scored: list[tuple[str, float]]
    provenance: dict[str, dict[str, int]]

    @property
    def paths(self) -> list[str]:
        return [p for p, _ in self.scored]


@dataclass
class PipelineDeps:
    index: CodebaseIndex
    provider: object
    mail_index: MailIndex | None = None
    transcript: Transcript = field(default_factory=Transcript)


def _validated(index: CodebaseIndex, paths: Sequence[str]) -> list[str]:
    out: dict[str, None] = {}
    for raw in paths:
        p = index.resolve(raw)
        if p is None:
            log.debug("discarding invalid predicted file %r", raw)
            continue
        out.setdefault(p, None)
    return list(out)


def directory_expand(index, report, initial: AgentPrediction, provider, k_dir: int = 10,
                     transcript: Transcript | None = None, budgets: Budgets = Budgets()) -> RankedList:
    candidates = directory_files(index, initial.files)
    if not candidates:
        return RankedList([])
    req = build_directory_prompt(report, candidates, budgets)
    picked = ask_parsed(provider, req, parse_file_list, transcript, tag="directory")
    if picked is None:
        return RankedList([])
    allowed = set(candidates)
    return RankedList.from_paths([p for p in _validated(index, picked) if p in allowed], k_dir)


def _hypothesis_files(index, text_parser_result, k: int | None) -> RankedList:
    files = [h.code_file for h in text_parser_result]
    return RankedList.from_paths(_validated(index, files), k)


def direct_hypothesize(report, provider, index, k: int | None = 10,
                       transcript: Transcript | None = None, budgets: Budgets = Budgets()) -> RankedList:
    """Files named by model-generated causes, in cause order. Sees no agent output."""
    req = build_hypothesis_prompt(report, None, budgets)
    hyps = ask_parsed(provider, req, parse_hypotheses, transcript, tag="direct")
    if hyps is None:
        return RankedList([])
    return _hypothesis_files(index, hyps, k)


def mail_hypothesize(report, initial: AgentPrediction, mail_index: MailIndex | None, provider, index,
                     k_mail: int = 10, k: int | None = 10, transcript: Transcript | None = None,
                     budgets: Budgets = Budgets(), info: dict | None = None) -> RankedList:
    query = summarize_report(provider, report, transcript, budgets)
    mails = []
    if mail_index is not None and len(mail_index):
        mails = retrieve_mails(mail_index, list(initial.files), query, before=report.report_date, k=k_mail)
    if info is not None:
        info["mails"] = [m.message_id for m in mails]
        info["mail_section_empty"] = not mails
    req = build_hypothesis_prompt(report, mails, budgets)
    hyps = ask_parsed(provider, req, parse_hypotheses, transcript, tag="mail")
    if hyps is None:
        return RankedList([])
    return _hypothesis_files(index, hyps, k)


def merge_candidates(r_dir: RankedList, r_direct: RankedList, r_mail: RankedList) -> MergedCandidates:
    """Summed reciprocal-rank fusion; a source missing a file contributes nothing."""
    provenance: dict[str, dict[str, int]] = {}
    for source, ranked in zip(SOURCES, (r_dir, r_direct, r_mail)):
        for rank, path in enumerate(ranked.paths, start=1):
            provenance.setdefault(path, {})[source] = rank
    scores = {p: sum(1.0 / r for r in ranks.values()) for p, ranks in provenance.items()}
    scored = sorted(scores.items(), key=lambda ps: (-ps[1], ps[0]))
    return MergedCandidates(scored, provenance)


def rerank(report, merged: MergedCandidates, provider, k_final: int = 10,
           transcript: Transcript | None = None, budgets: Budgets = Budgets()) -> RankedList:
    """Model reordering restricted to merged paths; omitted paths follow in merged order."""
    paths = merged.paths
    if not paths:
        return RankedList([])
    req = build_rerank_prompt(report, paths, budgets)
    order = ask_parsed(provider, req, parse_file_list, transcript, tag="rerank")
    if order is None:
        return RankedList.from_paths(paths, k_final)
    allowed = set(paths)
    chosen = []
    for raw in order:
        p = raw if raw in allowed else normalize_path(raw)
        if p in allowed:
            chosen.append(p)
    chosen = list(dict.fromkeys(chosen))
    taken = set(chosen)
    chosen += [p for p in paths if p not in taken]
    return RankedList.from_paths(chosen, k_final)


@dataclass
class LocalizationResult:
    ranking: RankedList
    provenance: dict

    def as_record(self, task_id: str) -> dict:
        return {"task_id": task_id, **self.provenance}


def localize(task, initial: AgentPrediction, config: PipelineConfig, deps: PipelineDeps) -> LocalizationResult:
    report = task.report
    index, provider, tr = deps.index, deps.provider, deps.transcript
    mail_info: dict = {}

    jobs = {
        "dir": (config.enable_dir, lambda: directory_expand(
            index, report, initial, provider, config.k_dir, tr, config.budgets)),
        "direct": (config.enable_direct, lambda: direct_hypothesize(
            report, provider, index, config.k_hypothesis, tr, config.budgets)),
        "mail": (config.enable_mail, lambda: mail_hypothesize(
            report, initial, deps.mail_index, provider, index, config.k_mail, config.k_hypothesis, tr,
            config.budgets, mail_info)),
    }
    results: dict[str, RankedList] = {}
    errors: dict[str, str] = {}

    def run(name: str) -> RankedList:
        enabled, fn = jobs[name]
        if not enabled:
            return RankedList([])
        try:
            return fn()
        except ProviderError as exc:
            errors[name] = str(exc)
            log.warning("task %s: %s expansion failed: %s", task.id, name, exc)
            return RankedList([])

    if config.parallel_expansions:
        with ThreadPoolExecutor(max_workers=3) as pool:
            futures = {name: pool.submit(run, name) for name in SOURCES}
            results = {name: f.result() for name, f in futures.items()}
    else:
        results = {name: run(name) for name in SOURCES}

    merged = merge_candidates(results["dir"], results["direct"], results["mail"])
    if config.enable_rerank and merged.scored:
        try:
            final = rerank(report, merged, provider, config.k_final, tr, config.budgets)
        except ProviderError as exc:
            errors["rerank"] = str(exc)
            final = RankedList.from_paths(merged.paths, config.k_final)
    else:
        final = RankedList(list(merged.scored[: config.k_final]), config.k_final)

    provenance = {
        "sources": {name: results[name].paths for name in SOURCES},
        "merged": [
            {"path": p, "score": round(s, 12), "ranks": merged.provenance[p]} for p, s in merged.scored
        ],
        "final": final.paths,
        "mail": mail_info,
        "errors": errors,
    }
    return LocalizationResult(final, provenance)


def method_localize(report, files: RankedList | Sequence[str], index: CodebaseIndex, provider,
                    k: int = 10, transcript: Transcript | None = None,
                    budgets: Budgets = Budgets()) -> list[tuple[str, str]]:
    """Top code elements among skeletons of the ranked files."""
    paths = _validated(index, files.paths if isinstance(files, RankedList) else list(files))
    if not paths:
        return []
    skeletons = [extract_skeleton(index.files[p]) for p in paths]
    req = build_method_prompt(report, skeletons, budgets)
    included = {sk.path: {e.name for e in sk.elements} for sk in skeletons
                if f"### File: {sk.path} ###" in req.user_text}
    pairs = ask_parsed(provider, req, parse_method_list, transcript, tag="methods")
    if not pairs:
        return []
    out: list[tuple[str, str]] = []
    for raw_path, name in pairs:
        p = index.resolve(raw_path)
        if p is None or p not in included or name not in included[p]:
            continue
        if (p, name) not in out:
            out.append((p, name))
    return out[:k]
