"""Text-model providers and the prompts and output parsers built on them."""

from __future__ import annotations

import ast
import json
import logging
import math
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

from .errors import ParseFailure, ProviderError

log = logging.getLogger(__name__)

DESCRIPTION_BUDGET = 8_000
MAIL_BUDGET = 4_000
REQUEST_BUDGET = 100_000
TRUNCATION_MARKER = "\n[... truncated ...]"
FORMAT_REMINDER = (
    "\n\nYour previous answer could not be parsed. "
    "Please format your response strictly according to the format provided above without commentary."
)


@dataclass(frozen=True)
class Budgets:
    description: int = DESCRIPTION_BUDGET
    mail: int = MAIL_BUDGET
    request: int = REQUEST_BUDGET


@dataclass(frozen=True)
class CompletionRequest:
    user_text: str
    system_text: str | None = None
    temperature: float = 0.0
    max_output: int = 2048

    def with_reminder(self) -> "CompletionRequest":
        return CompletionRequest(self.user_text + FORMAT_REMINDER, self.system_text, self.temperature, self.max_output)


@dataclass(frozen=True)
class Completion:
    text: str
    prompt_tokens: int
    completion_tokens: int
    latency: float = 0.0


@dataclass(frozen=True)
class Hypothesis:
    cause: str
    code_file: str
    fix_solution: str


class TextModelProvider(Protocol):
    name: str
    max_prompt_chars: int

    def generate(self, req: CompletionRequest) -> Completion: ...


def estimate_tokens(text: str) -> int:
    return math.ceil(len(text) / 4)


# --- transcript -------------------------------------------------------------


@dataclass
class TranscriptEntry:
    request: CompletionRequest
    response: str | None
    prompt_tokens: int
    completion_tokens: int
    latency: float
    error: str | None = None
    tag: str = ""


class Transcript:
    """Append-only record of provider calls; safe for concurrent appends."""

    def __init__(self) -> None:
        self._entries: list[TranscriptEntry] = []
        self._lock = threading.Lock()

    def append(self, entry: TranscriptEntry) -> None:
        if entry.prompt_tokens < 0 or entry.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")
        with self._lock:
            self._entries.append(entry)

    @property
    def entries(self) -> list[TranscriptEntry]:
        with self._lock:
            return list(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def totals(self) -> tuple[int, int]:
        es = self.entries
        return sum(e.prompt_tokens for e in es), sum(e.completion_tokens for e in es)

    def to_records(self) -> list[dict]:
        return [
            {
                "tag": e.tag,
                "system": e.request.system_text,
                "prompt": e.request.user_text,
                "temperature": e.request.temperature,
                "response": e.response,
                "prompt_tokens": e.prompt_tokens,
                "completion_tokens": e.completion_tokens,
                "latency": round(e.latency, 6),
                "error": e.error,
            }
            for e in self.entries
        ]


def cost_summary(transcript: Transcript, n_tasks: int, price_in: float, price_out: float) -> dict:
    """Per-task token and dollar averages; prices are per 1K tokens."""
    p_in, p_out = transcript.totals()
    total = p_in + p_out
    cost = p_in / 1000 * price_in + p_out / 1000 * price_out
    per = max(n_tasks, 1)
    return {
        "calls": len(transcript),
        "prompt_tokens": p_in,
        "completion_tokens": p_out,
        "tokens_per_task": total / per,
        "cost_per_task": cost / per,
        "total_cost": cost,
    }


# --- providers --------------------------------------------------------------


class MockProvider:
    """Deterministic scripted provider.

    The script is an ordered list of ``(matcher, response)`` pairs. A matcher
    is either an ``int`` (1-based call position) or a ``str`` matched as a
    substring of the request text; ``"A && B"`` requires every part.
    Position matchers take precedence; among substring matchers the first in
    script order wins. Unmatched requests get ``default``.
    """

    name = "mock"

    def __init__(self, script: Sequence[tuple[int | str, str]] = (), default: str = "", max_prompt_chars: int = REQUEST_BUDGET):
        self.script = list(script)
        self.default = default
        self.max_prompt_chars = max_prompt_chars
        self._calls = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path, **kw) -> "MockProvider":
        return cls(*parse_mock_script(Path(path).read_text(encoding="utf-8")), **kw)

    def generate(self, req: CompletionRequest) -> Completion:
        with self._lock:
            self._calls += 1
            position = self._calls
        text = self.respond(req.user_text, position)
        return Completion(text, estimate_tokens((req.system_text or "") + req.user_text), estimate_tokens(text), 0.0)

    def respond(self, user_text: str, position: int) -> str:
        for matcher, response in self.script:
            if isinstance(matcher, int) and matcher == position:
                return response
        for matcher, response in self.script:
            if isinstance(matcher, str) and all(part in user_text for part in matcher.split(" && ")):
                return response
        return self.default


_SCRIPT_HEADER = re.compile(r"^=== (match|call|default)(?::\s?(.*))?$")


def parse_mock_script(text: str) -> tuple[list[tuple[int | str, str]], str]:
    """Parse the block format used by ``--mock-script`` files.

    Each entry starts with a header line ``=== match: <substring>``,
    ``=== call: <n>`` or ``=== default``; the following lines up to the next
    header are the response. Lines starting with ``#`` before the first
    header are comments.
    """
    script: list[tuple[int | str, str]] = []
    default = ""
    cur: tuple[str, str | None] | None = None
    body: list[str] = []

    def flush() -> None:
        nonlocal default
        if cur is None:
            return
        kind, arg = cur
        response = "\n".join(body).strip("\n")
        if kind == "default":
            default = response
        elif kind == "call":
            script.append((int(arg or 0), response))
        else:
            script.append((arg or "", response))

    for line in text.splitlines():
        m = _SCRIPT_HEADER.match(line)
        if m:
            flush()
            cur, body = (m.group(1), m.group(2)), []
        elif cur is not None:
            body.append(line)
        elif line.strip() and not line.startswith("#"):
            raise ValueError(f"mock script text before first header: {line!r}")
    flush()
    return script, default


class OpenAICompatibleProvider:
    """Chat-completions client for any OpenAI-compatible HTTP endpoint."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str | None,
        requests_per_minute: float = 60,
        timeout: float = 120.0,
        max_prompt_chars: int = REQUEST_BUDGET,
    ):
        if not api_key:
            raise ProviderError("auth", "no API credential configured")
        import httpx

        self.name = model
        self.model = model
        self.max_prompt_chars = max_prompt_chars
        self._client = httpx.Client(
            base_url=endpoint.rstrip("/"), timeout=timeout, headers={"Authorization": f"Bearer {api_key}"}
        )
        self._interval = 60.0 / requests_per_minute if requests_per_minute > 0 else 0.0
        self._next_slot = 0.0
        self._lock = threading.Lock()

    def _throttle(self) -> None:
        with self._lock:
            now = time.monotonic()
            wait = self._next_slot - now
            self._next_slot = max(now, self._next_slot) + self._interval
        if wait > 0:
            time.sleep(wait)

    def generate(self, req: CompletionRequest) -> Completion:
        import httpx

        messages = []
        if req.system_text:
            messages.append({"role": "system", "content": req.system_text})
        messages.append({"role": "user", "content": req.user_text})
        payload = {"model": self.model, "messages": messages, "temperature": req.temperature, "max_tokens": req.max_output}
        self._throttle()
        start = time.monotonic()
        try:
            resp = self._client.post("/chat/completions", json=payload)
        except httpx.HTTPError as exc:
            raise ProviderError("transport", str(exc)) from exc
        latency = time.monotonic() - start
        if resp.status_code in (401, 403):
            raise ProviderError("auth", resp.text[:200])
        if resp.status_code == 429:
            raise ProviderError("rate_limit", resp.text[:200])
        if resp.status_code == 400 and "context" in resp.text.lower():
            raise ProviderError("overlong_prompt", resp.text[:200])
        if resp.status_code >= 400:
            raise ProviderError("transport", f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            data = resp.json()
            text = data["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProviderError("transport", f"malformed response: {exc}") from exc
        usage = data.get("usage") or {}
        return Completion(
            text,
            int(usage.get("prompt_tokens", estimate_tokens(req.user_text))),
            int(usage.get("completion_tokens", estimate_tokens(text))),
            latency,
        )


TRANSIENT = ("transport", "rate_limit")


def complete(
    provider: TextModelProvider,
    req: CompletionRequest,
    transcript: Transcript | None = None,
    retries: int = 2,
    backoff: float = 1.0,
    tag: str = "",
    sleep: Callable[[float], None] = time.sleep,
) -> str:
    """Send *req*, retrying transient failures, and record the exchange."""
    size = len(req.user_text) + len(req.system_text or "")
    if size > provider.max_prompt_chars:
        if transcript is not None:
            transcript.append(TranscriptEntry(req, None, 0, 0, 0.0, "overlong_prompt", tag))
        raise ProviderError("overlong_prompt", f"{size} chars exceeds {provider.max_prompt_chars}")
    attempt = 0
    while True:
        try:
            out = provider.generate(req)
        except ProviderError as exc:
            if exc.kind in TRANSIENT and attempt < retries:
                attempt += 1
                log.warning("%s provider error (%s), retry %d/%d", provider.name, exc.kind, attempt, retries)
                sleep(backoff * 2 ** (attempt - 1))
                continue
            if transcript is not None:
                transcript.append(TranscriptEntry(req, None, 0, 0, 0.0, exc.kind, tag))
            raise
        if transcript is not None:
            transcript.append(
                TranscriptEntry(req, out.text, out.prompt_tokens, out.completion_tokens, out.latency, None, tag)
            )
        return out.text


def ask_parsed(provider, req: CompletionRequest, parser, transcript: Transcript | None = None, tag: str = ""):
    """Complete and parse, with one format-reminder retry. Returns None if both parses fail."""
    for attempt, r in enumerate((req, req.with_reminder())):
        text = complete(provider, r, transcript, tag=tag)
        try:
            return parser(text)
        except ParseFailure:
            log.info("%s: unparseable output on attempt %d", tag or "request", attempt + 1)
    return None


# --- prompt rendering -------------------------------------------------------


def truncate(text: str, budget: int) -> str:
    if len(text) <= budget:
        return text
    return text[: max(0, budget - len(TRUNCATION_MARKER))] + TRUNCATION_MARKER


def render_report(report, budgets: Budgets = Budgets()) -> str:
    lines = [f"Title: {report.title}"]
    for label, value in (
        ("Product", report.product),
        ("Component", report.component),
        ("Hardware", report.hardware),
        ("Kernel Version", report.kernel_version),
    ):
        if value:
            lines.append(f"{label}: {value}")
    lines.append("Description:")
    lines.append(truncate(report.description, budgets.description))
    return "\n".join(lines)


def render_path_list(paths: Sequence[str]) -> str:
    return "[" + ", ".join(repr(p) for p in paths) + "]"


DIRECTORY_TEMPLATE = """\
Please look through the following Linux kernel bug report and candidate files, and select a list of files that one would need to edit to fix the bug.

Here is the information about the bug:

### Linux kernel bug report ###

{bug}

###

Based on the bug provided above, I will present a list of candidate files that may be relevant to the bug.

### Candidate files ###

{candidates}

###

Please select files that are most likely to need modification to fix this bug.

Your response should be in the format of a list of file paths, and should be ordered by relevance in descending order.
Please return at most 10 files.

### output example ###

['net/ipv6/proc.c', 'net/ipv6/netfilter/ip6_tables.c']

###

Please format your response strictly according to the format provided above without commentary."""


HYPOTHESIS_HEAD = """\
Please review the following Linux kernel bug report, and then deduce the possible causes of the bug and provide corresponding code files and a potential fix. The bug is known to be related to the kernel code, and the fix should involve modifications to kernel code files.

Here is the information about the bug:

### Linux kernel bug report ###

{bug}

###
"""

MAIL_SECTION = """
To assist in your analysis, here are some emails retrieved using BM25 that may be relevant to the bug. Use them to inspire and identify additional possible causes:

### Mails ###

{mails}

###
"""

HYPOTHESIS_TAIL = """
Based on the bug provided above, please output the possible causes, relevant code files, and solutions. Your response should follow the format below.

### Output example ###

[
    {
        'cause': 'A description of the potential cause of the bug.',
        'code_file': 'Path of the code file that is most likely related to the bug.',
        'fix_solution': 'A short description of the fix solution to apply in the code file.'
    },
    ...
]

###

Please ensure the following:

- List as many causes as possible, ordered by relevance in descending order, with the most likely cause first.

- For each cause, list all relevant code files and their corresponding fixes, but only provide one code file and one fix per entry.

- The relevant code file is not necessarily the one causing the bug but should be a file where the bug can be fixed.

- The code file should be in the format of "net/ipv6/proc.c".

- Format your response strictly according to the format provided above without commentary."""


RERANK_TEMPLATE = """\
Please look through the following Linux kernel bug report and the ranked list of candidate files, and re-rank the files based on the semantic correspondence between their paths and the bug report.

Here is the information about the bug:

### Linux kernel bug report ###

{bug}

###

The candidate files, in their current order:

### Candidate files ###

{candidates}

###

Your response should be a list containing the candidate file paths, ordered by relevance in descending order.

### output example ###

['net/ipv6/proc.c', 'net/ipv6/netfilter/ip6_tables.c']

###

Please format your response strictly according to the format provided above without commentary."""


METHOD_TEMPLATE = """\
Please look through the following Linux kernel bug report and the skeletons of candidate files, and identify the functions, structures or code blocks that one would need to edit to fix the bug.

Here is the information about the bug:

### Linux kernel bug report ###

{bug}

###

Each skeleton keeps only the signatures of functions and structures with their comments.

{skeletons}

Please return at most 10 code elements, ordered by relevance in descending order, each written as "path::name".

### output example ###

['net/ipv6/proc.c::snmp6_seq_show', 'net/ipv6/proc.c::ipv6_proc_init']

###

Please format your response strictly according to the format provided above without commentary."""


SUMMARY_TEMPLATE = """\
Please summarize the following Linux kernel bug report along four dimensions. Answer with exactly these four labeled sections:

Bug Behavior: <the observed faulty behavior>
Potential Causes: <what in the kernel could cause it>
Expected Behavior: <what should happen instead>
Possible Solutions: <how the kernel code could be fixed>

### Linux kernel bug report ###

{bug}

###"""


def build_directory_prompt(report, candidates: Sequence[str], budgets: Budgets = Budgets()) -> CompletionRequest:
    if not candidates:
        raise ValueError("directory prompt needs at least one candidate")
    bug = render_report(report, budgets)
    shell = len(DIRECTORY_TEMPLATE) + len(bug)
    kept: list[str] = []
    used = 0
    for c in dict.fromkeys(candidates):
        if shell + used + len(c) + 1 > budgets.request:
            log.warning("candidate list truncated to %d of %d paths by request budget", len(kept), len(candidates))
            break
        kept.append(c)
        used += len(c) + 1
    return CompletionRequest(DIRECTORY_TEMPLATE.format(bug=bug, candidates="\n".join(kept)))


def render_mail(mail, budget: int) -> str:
    head = f"Subject: {mail.subject}\nDate: {mail.date.isoformat()}\n"
    return head + truncate(mail.body, budget)


def build_hypothesis_prompt(report, mails: Sequence | None = None, budgets: Budgets = Budgets()) -> CompletionRequest:
    bug = render_report(report, budgets)
    head = HYPOTHESIS_HEAD.format(bug=bug)
    if mails is None:
        return CompletionRequest(head + HYPOTHESIS_TAIL)
    rendered: list[str] = []
    size = len(head) + len(HYPOTHESIS_TAIL) + len(MAIL_SECTION)
    for m in mails:
        block = render_mail(m, budgets.mail)
        if size + len(block) + 2 > budgets.request:
            break
        rendered.append(block)
        size += len(block) + 2
    section = MAIL_SECTION.format(mails="\n\n".join(rendered))
    return CompletionRequest(head + section + HYPOTHESIS_TAIL)


def build_rerank_prompt(report, merged_paths: Sequence[str], budgets: Budgets = Budgets()) -> CompletionRequest:
    if not merged_paths:
        raise ValueError("rerank prompt needs at least one candidate")
    listing = "\n".join(f"{i}. {p}" for i, p in enumerate(merged_paths, start=1))
    return CompletionRequest(RERANK_TEMPLATE.format(bug=render_report(report, budgets), candidates=listing))


def render_skeleton(skeleton) -> str:
    return f"### File: {skeleton.path} ###\n{skeleton.render()}\n###"


def build_method_prompt(report, skeletons: Sequence, budgets: Budgets = Budgets()) -> CompletionRequest:
    """Embed skeletons greedily in the given order until the request budget is reached."""
    if not skeletons:
        raise ValueError("method prompt needs at least one skeleton")
    bug = render_report(report, budgets)
    size = len(METHOD_TEMPLATE) + len(bug)
    blocks: list[str] = []
    for sk in skeletons:
        block = render_skeleton(sk)
        if blocks and size + len(block) + 2 > budgets.request:
            break
        blocks.append(block)
        size += len(block) + 2
    return CompletionRequest(METHOD_TEMPLATE.format(bug=bug, skeletons="\n\n".join(blocks)))


def build_summary_prompt(report, budgets: Budgets = Budgets()) -> CompletionRequest:
    return CompletionRequest(SUMMARY_TEMPLATE.format(bug=render_report(report, budgets)))


# --- parsers ----------------------------------------------------------------


def _read_quoted(text: str, i: int) -> tuple[str, int] | None:
    q = text[i]
    out = []
    j = i + 1
    while j < len(text):
        c = text[j]
        if c == "\\" and j + 1 < len(text):
            out.append(text[j + 1])
            j += 2
            continue
        if c == q:
            return "".join(out), j + 1
        if c == "\n":
            return None
        out.append(c)
        j += 1
    return None


def _string_list_at(text: str, i: int) -> list[str] | None:
    # text[i] == "["; accept only a list of quoted strings
    j = i + 1
    items: list[str] = []
    n = len(text)
    expect_item = True
    while j < n:
        c = text[j]
        if c.isspace():
            j += 1
        elif c == "]":
            return items
        elif c in "'\"" and expect_item:
            got = _read_quoted(text, j)
            if got is None:
                return None
            items.append(got[0])
            j = got[1]
            expect_item = False
        elif c == "," and not expect_item:
            expect_item = True
            j += 1
        else:
            return None
    return None


def parse_file_list(text: str) -> list[str]:
    """First bracketed list of quoted strings in *text*, trimmed and deduplicated."""
    for m in re.finditer(r"\[", text):
        items = _string_list_at(text, m.start())
        if items is not None:
            return list(dict.fromkeys(s.strip() for s in items if s.strip()))
    raise ParseFailure("no bracketed list of quoted strings found")


def parse_method_list(text: str) -> list[tuple[str, str]]:
    out: dict[tuple[str, str], None] = {}
    for item in parse_file_list(text):
        if "::" not in item:
            continue
        path, name = item.rsplit("::", 1)
        path, name = path.strip(), name.strip()
        if path and name:
            out.setdefault((path, name), None)
    return list(out)


_FIELDS = ("cause", "code_file", "fix_solution")


def _array_span(text: str) -> str | None:
    for m in re.finditer(r"\[\s*\{", text):
        depth = 0
        quote = None
        i = m.start()
        while i < len(text):
            c = text[i]
            if quote:
                if c == "\\":
                    i += 2
                    continue
                if c == quote or c == "\n":
                    quote = None
            elif c == '"':
                quote = c
            elif c == "[":
                depth += 1
            elif c == "]":
                depth -= 1
                if depth == 0:
                    return text[m.start(): i + 1]
            i += 1
        return text[m.start():]  # unterminated: let the field scanner salvage it
    return None


_OBJ_FIELD = re.compile(
    r"""(['"])(cause|code_file|fix_solution)\1\s*:\s*(['"])(.*?)\3\s*(?=[,}])""", re.S
)


def _objects_by_regex(span: str) -> list[dict]:
    objs: list[dict] = []
    for chunk in re.split(r"\}\s*,?\s*\{", span):
        obj = {m.group(2): m.group(4) for m in _OBJ_FIELD.finditer(chunk + "}")}
        if obj or "{" in chunk or "}" in chunk:
            objs.append(obj)
    return objs


def _decode_array(span: str) -> list:
    for loader in (json.loads, ast.literal_eval):
        try:
            value = loader(span)
        except (ValueError, SyntaxError, TypeError, MemoryError, RecursionError):
            continue
        if isinstance(value, list):
            return value
    return _objects_by_regex(span)


def parse_hypotheses_counted(text: str) -> tuple[list[Hypothesis], int]:
    span = _array_span(text)
    if span is None:
        raise ParseFailure("no array of objects found")
    kept: list[Hypothesis] = []
    dropped = 0
    for obj in _decode_array(span):
        if not isinstance(obj, dict):
            dropped += 1
            continue
        values = [obj.get(k) for k in _FIELDS]
        if not all(isinstance(v, str) and v.strip() for v in values):
            dropped += 1
            continue
        cause, code_file, fix = (v.strip() for v in values)
        kept.append(Hypothesis(cause, code_file.strip("'\"` ").lstrip("./"), fix))
    return kept, dropped


def parse_hypotheses(text: str) -> list[Hypothesis]:
    """Hypotheses from the first array of objects in *text*, in model order.

    Entries lacking any of ``cause``, ``code_file``, ``fix_solution`` are
    dropped. Single-quoted (Python-literal style) output is accepted.
    """
    hyps, dropped = parse_hypotheses_counted(text)
    if dropped:
        log.info("dropped %d incomplete hypothesis entries", dropped)
    return hyps


_SUMMARY_LABELS = {
    "bug behavior": "bug_behavior",
    "bug behaviour": "bug_behavior",
    "potential causes": "potential_causes",
    "potential cause": "potential_causes",
    "expected behavior": "expected_behavior",
    "expected behaviour": "expected_behavior",
    "possible solutions": "possible_solutions",
    "possible solution": "possible_solutions",
}
_LABEL_LINE = re.compile(
    r"^[\s#>*_\-\d.()]*(" + "|".join(sorted(map(re.escape, _SUMMARY_LABELS), key=len, reverse=True)) + r")[\s*_]*:?[\s*_]*(.*)$",
    re.I,
)


def parse_summary(text: str) -> dict[str, str]:
    """Four labeled sections as a dict; raises ParseFailure when no label is present."""
    fields: dict[str, list[str]] = {}
    cur: str | None = None
    for line in text.splitlines():
        m = _LABEL_LINE.match(line)
        if m:
            cur = _SUMMARY_LABELS[m.group(1).lower()]
            fields.setdefault(cur, [])
            if m.group(2).strip():
                fields[cur].append(m.group(2).strip())
        elif cur is not None:
            fields[cur].append(line.strip())
    if not fields:
        raise ParseFailure("no labeled sections found")
    out = {k: "\n".join(x for x in fields.get(k, []) if x).strip() for k in set(_SUMMARY_LABELS.values())}
    if not any(out.values()):
        raise ParseFailure("all labeled sections empty")
    return out


def provider_from_settings(settings: dict, offline: bool, mock_script: str | None = None) -> TextModelProvider:
    if mock_script:
        return MockProvider.from_file(mock_script, max_prompt_chars=int(settings.get("request_budget", REQUEST_BUDGET)))
    if offline:
        raise ProviderError("transport", "offline mode needs --mock-script")
    key_env = settings.get("api_key_env", "KFL_API_KEY")
    return OpenAICompatibleProvider(
        endpoint=settings.get("endpoint", "https://api.openai.com/v1"),
        model=settings.get("model", "gpt-4o-2024-08-06"),
        api_key=os.environ.get(key_env),
        requests_per_minute=float(settings.get("rpm", 60)),
        max_prompt_chars=int(settings.get("request_budget", REQUEST_BUDGET)),
    )
