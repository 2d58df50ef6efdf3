"""Patch-email knowledge base with temporal BM25 retrieval keyed by modified file."""

from __future__ import annotations

import hashlib
import json
import logging
import mailbox
import os
import re
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from email.message import Message
from pathlib import Path
from typing import Iterable, Sequence

from .benchmark import parse_timestamp
from .corpus import normalize_path, tokenize
from .errors import IndexFormatError, MboxParseError, ParseFailure
from .io import write_atomic
from .llm import CompletionRequest, Transcript, ask_parsed, build_summary_prompt, parse_summary
from .patch import modified_files, parse_diff
from .retrieval import Bm25Stats

log = logging.getLogger(__name__)

MAIL_HEADER = "KFLMAIL1"
MAX_FILES = 10
_URL = re.compile(r"https?://", re.I)
_KEYWORD = re.compile(r"bugzilla", re.I)
REJECTION_REASONS = ("duplicate", "malformed", "no_patch", "file_count", "url", "keyword")


@dataclass(frozen=True)
class PatchEmail:
    message_id: str
    date: datetime
    subject: str
    body: str
    diff_text: str
    modified_files: tuple[str, ...]

    def as_dict(self) -> dict:
        return {
            "message_id": self.message_id,
            "date": self.date.isoformat(),
            "subject": self.subject,
            "body": self.body,
            "diff_text": self.diff_text,
            "modified_files": list(self.modified_files),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PatchEmail":
        return cls(
            d["message_id"], parse_timestamp(d["date"]), d["subject"], d["body"], d["diff_text"],
            tuple(d["modified_files"]),
        )


@dataclass(frozen=True)
class ReformulatedQuery:
    bug_behavior: str = ""
    potential_causes: str = ""
    expected_behavior: str = ""
    possible_solutions: str = ""

    def __post_init__(self) -> None:
        if not any((self.bug_behavior, self.potential_causes, self.expected_behavior, self.possible_solutions)):
            raise ValueError("reformulated query needs at least one non-empty field")

    @property
    def text(self) -> str:
        return "\n".join(
            x for x in (self.bug_behavior, self.potential_causes, self.expected_behavior, self.possible_solutions) if x
        )


def extract_diff(body: str) -> tuple[str, list[str]]:
    """The patch portion of a mail body and the files it modifies ('' when no valid hunk)."""
    files = parse_diff(body)
    if not any(fp.hunks for fp in files):
        return "", []
    lines = body.splitlines()
    start = next(
        (i for i, ln in enumerate(lines) if ln.startswith("diff --git ") or ln.startswith("--- ")), 0
    )
    end = len(lines)
    for i in range(len(lines) - 1, start, -1):
        if lines[i] == "-- ":  # format-patch signature separator
            end = i
            break
    diff = "\n".join(lines[start:end]).strip("\n") + "\n"
    paths = [p for p in (normalize_path(x) for x in modified_files(files)) if p]
    return diff, paths


def rejection_reason(body: str, subject: str = "") -> tuple[str | None, str, list[str]]:
    """Apply the collection filters in order; returns (reason or None, diff, files)."""
    diff, files = extract_diff(body)
    if not diff or not files:
        return "no_patch", "", []
    if len(files) > MAX_FILES:
        return "file_count", diff, files
    if _URL.search(body):
        return "url", diff, files
    if _KEYWORD.search(body) or _KEYWORD.search(subject):
        return "keyword", diff, files
    return None, diff, files


def _body_text(msg: Message) -> str:
    parts = []
    for part in msg.walk() if msg.is_multipart() else [msg]:
        if part.is_multipart():
            continue
        ctype = part.get_content_type()
        if not (ctype.startswith("text/") or ctype in ("application/x-patch", "application/octet-stream")):
            continue
        if part.get_content_disposition() == "attachment" and not ctype.startswith("text/") and not (
            (part.get_filename() or "").endswith((".patch", ".diff"))
        ):
            continue
        payload = part.get_payload(decode=True)
        if payload is None:
            payload = str(part.get_payload()).encode("utf-8", "replace")
        charset = part.get_content_charset() or "utf-8"
        try:
            parts.append(payload.decode(charset, errors="replace"))
        except LookupError:
            parts.append(payload.decode("utf-8", errors="replace"))
    return "\n".join(parts)


def _messages(path: Path) -> Iterable[Message]:
    if path.is_dir():
        md = mailbox.Maildir(str(path), factory=None, create=False)
        for key in sorted(md.keys()):
            yield md[key]
        return
    with open(path, "rb") as fh:
        head = fh.read(5)
    if head and head != b"From ":
        raise MboxParseError(0, "file does not start with a 'From ' separator line")
    box = mailbox.mbox(str(path), create=False)
    try:
        for key in box.keys():
            yield box[key]
    finally:
        box.close()


def ingest_messages(messages: Iterable[Message]) -> tuple[list[PatchEmail], dict[str, int]]:
    accepted: list[PatchEmail] = []
    rejected: Counter = Counter()
    seen: set[str] = set()
    for msg in messages:
        subject = str(msg.get("Subject", "") or "").strip()
        body = _body_text(msg)
        mid = str(msg.get("Message-ID", "") or "").strip()
        if not mid:
            mid = "<sha1-" + hashlib.sha1((subject + body).encode("utf-8", "replace")).hexdigest() + ">"
        if mid in seen:
            rejected["duplicate"] += 1
            continue
        seen.add(mid)
        try:
            date = parse_timestamp(str(msg.get("Date", "")))
        except ValueError:
            rejected["malformed"] += 1
            continue
        reason, diff, files = rejection_reason(body, subject)
        if reason:
            rejected[reason] += 1
            continue
        accepted.append(PatchEmail(mid, date, subject, body, diff, tuple(files)))
    return accepted, dict(rejected)


def ingest_mbox(path: str | os.PathLike) -> tuple[list[PatchEmail], dict[str, int]]:
    """Read an mbox file or maildir, keeping only mails that pass every filter.

    Filters run in order: patch present, at most ten modified files, no
    http(s) URL, no "bugzilla" keyword. Duplicate Message-IDs keep the first.
    The second element maps each rejection reason to its count.
    """
    path = Path(path)
    if not path.exists():
        raise MboxParseError(0, f"{path} does not exist")
    return ingest_messages(_messages(path))


def validate_email(mail: PatchEmail) -> str | None:
    reason, _, _ = rejection_reason(mail.body, mail.subject)
    if reason:
        return reason
    if not mail.diff_text or not 1 <= len(mail.modified_files) <= MAX_FILES:
        return "no_patch" if not mail.diff_text else "file_count"
    return None


@dataclass
class MailIndex:
    emails: dict[str, PatchEmail] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.by_file: dict[str, list[str]] = {}
        for mid, m in self.emails.items():
            for f in m.modified_files:
                self.by_file.setdefault(f, []).append(mid)
        self.bm25 = Bm25Stats({mid: tokenize(f"{m.subject}\n{m.body}") for mid, m in self.emails.items()})

    def __eq__(self, other: object) -> bool:
        return isinstance(other, MailIndex) and self.emails == other.emails

    def __len__(self) -> int:
        return len(self.emails)

    def save(self, path: str | os.PathLike) -> None:
        lines = [MAIL_HEADER] + [json.dumps(m.as_dict(), ensure_ascii=False, sort_keys=True) for m in self.emails.values()]
        write_atomic(path, "\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "MailIndex":
        with open(path, encoding="utf-8") as fh:
            if fh.readline().rstrip("\n") != MAIL_HEADER:
                raise IndexFormatError(f"{path}: expected header {MAIL_HEADER!r}")
            mails = []
            for lineno, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                try:
                    mail = PatchEmail.from_dict(json.loads(line))
                except (ValueError, KeyError) as exc:
                    raise IndexFormatError(f"{path}:{lineno}: {exc}") from exc
                reason = validate_email(mail)
                if reason:
                    raise IndexFormatError(f"{path}:{lineno}: stored mail fails {reason} filter")
                mails.append(mail)
        return build_mail_index(mails)


def build_mail_index(emails: Iterable[PatchEmail]) -> MailIndex:
    store: dict[str, PatchEmail] = {}
    for m in emails:
        store.setdefault(m.message_id, m)
    return MailIndex(store)


def retrieve_mails(
    index: MailIndex,
    predicted_files: Sequence[str],
    query: ReformulatedQuery | str,
    before: datetime,
    k: int = 10,
) -> list[PatchEmail]:
    """Top-*k* mails sent before *before* that touch any predicted file.

    With no predicted files every mail before the cutoff is a candidate.
    Candidates are ordered by BM25 of the query against subject and body;
    ties (including zero scores) fall back to Message-ID order.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if predicted_files:
        ids: set[str] = set()
        for f in predicted_files:
            p = normalize_path(f)
            if p:
                ids.update(index.by_file.get(p, ()))
    else:
        ids = set(index.emails)
    candidates = {mid for mid in ids if index.emails[mid].date < before}
    if not candidates:
        return []
    text = query.text if isinstance(query, ReformulatedQuery) else query
    scores = index.bm25.scores(tokenize(text), restrict=candidates)
    ranked = sorted(candidates, key=lambda mid: (-scores.get(mid, 0.0), mid))
    return [index.emails[mid] for mid in ranked[:k]]


def summarize_report(provider, report, transcript: Transcript | None = None, budgets=None) -> ReformulatedQuery:
    """Reformulate a report into four dimensions; falls back to the raw report text."""
    req: CompletionRequest = build_summary_prompt(report, budgets) if budgets else build_summary_prompt(report)
    fields = ask_parsed(provider, req, parse_summary, transcript, tag="summarize")
    if fields is None:
        return ReformulatedQuery(bug_behavior=f"{report.title}\n{report.description}")
    try:
        return ReformulatedQuery(**fields)
    except ValueError as exc:  # pragma: no cover - parse_summary guarantees a non-empty field
        raise ParseFailure(str(exc)) from exc
