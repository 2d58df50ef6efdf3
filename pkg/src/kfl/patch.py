"""Unified diff parsing (git-style or plain) for ground truth and mail patches."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .corpus.tokenizer import C_KEYWORDS

_HUNK = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@ ?(.*)$")
_GIT = re.compile(r"^diff --git (\S+) (\S+)\s*$")
_CALLISH = re.compile(r"([A-Za-z_]\w*)\s*\(")
_IDENT = re.compile(r"[A-Za-z_]\w*")
_DEV_NULL = "/dev/null"


@dataclass
class Hunk:
    old_start: int
    old_count: int
    new_start: int
    new_count: int
    context: str
    lines: list[str] = field(default_factory=list)
    complete: bool = True

    def changed_old_lines(self) -> list[int]:
        """Pre-image line numbers touched by the hunk (insertions map to the line they follow)."""
        out = []
        old = self.old_start
        for line in self.lines:
            tag = line[:1]
            if tag == "-":
                out.append(old)
                old += 1
            elif tag == "+":
                out.append(max(old - 1, 1))
            elif tag in (" ", ""):
                old += 1
        return sorted(set(out))


@dataclass
class FilePatch:
    old_path: str | None
    new_path: str | None
    hunks: list[Hunk] = field(default_factory=list)
    rename: bool = False

    @property
    def path(self) -> str:
        """Post-image path; the pre-image path for deletions."""
        return self.new_path or self.old_path or ""


def _strip_header_path(raw: str) -> str | None:
    p = raw.split("\t", 1)[0].strip()
    if p.startswith('"') and p.endswith('"'):
        p = p[1:-1]
    if p == _DEV_NULL:
        return None
    return p


def _strip_prefix(p: str | None, prefix: str) -> str | None:
    if p is not None and p.startswith(prefix):
        return p[len(prefix):]
    return p


def parse_diff(text: str) -> list[FilePatch]:
    """Parse every file section of a unified diff.

    Works on text with surrounding prose (mail bodies, commit messages): lines
    outside file sections are skipped. Hunk bodies are consumed by their
    line counts, so a removed line starting with ``--`` is not mistaken for a
    file header.
    """
    lines = text.splitlines()
    files: list[FilePatch] = []
    cur: FilePatch | None = None
    git_style = False
    i, n = 0, len(lines)
    while i < n:
        line = lines[i]
        m = _GIT.match(line)
        if m:
            git_style = True
            cur = FilePatch(_strip_prefix(m.group(1), "a/"), _strip_prefix(m.group(2), "b/"))
            files.append(cur)
            i += 1
            continue
        if cur is not None and line.startswith("rename from "):
            cur.old_path, cur.rename = line[len("rename from "):].strip(), True
        elif cur is not None and line.startswith("rename to "):
            cur.new_path, cur.rename = line[len("rename to "):].strip(), True
        elif cur is not None and line.startswith("deleted file mode"):
            cur.new_path = None
        elif cur is not None and line.startswith("new file mode"):
            cur.old_path = None
        elif line.startswith("--- ") and i + 1 < n and lines[i + 1].startswith("+++ "):
            old = _strip_header_path(line[4:])
            new = _strip_header_path(lines[i + 1][4:])
            strip = git_style or (
                (old is None or old.startswith("a/")) and (new is None or new.startswith("b/"))
            )
            if strip:
                old, new = _strip_prefix(old, "a/"), _strip_prefix(new, "b/")
            if cur is not None and not cur.hunks and (cur.new_path in (new, None) or cur.old_path in (old, None)):
                cur.old_path, cur.new_path = old, new
            else:
                cur = FilePatch(old, new)
                files.append(cur)
            i += 2
            continue
        elif cur is not None:
            hm = _HUNK.match(line)
            if hm:
                hunk, i = _read_hunk(hm, lines, i + 1)
                cur.hunks.append(hunk)
                continue
        i += 1
    return files


def _read_hunk(hm: re.Match, lines: list[str], i: int) -> tuple[Hunk, int]:
    old_count = int(hm.group(2)) if hm.group(2) is not None else 1
    new_count = int(hm.group(4)) if hm.group(4) is not None else 1
    hunk = Hunk(int(hm.group(1)), old_count, int(hm.group(3)), new_count, hm.group(5).strip())
    old_left, new_left = old_count, new_count
    while i < len(lines) and (old_left > 0 or new_left > 0):
        line = lines[i]
        tag = line[:1]
        if tag == "\\":
            hunk.lines.append(line)
        elif tag == "-" and old_left > 0:
            old_left -= 1
            hunk.lines.append(line)
        elif tag == "+" and new_left > 0:
            new_left -= 1
            hunk.lines.append(line)
        elif (tag == " " or line == "") and old_left > 0 and new_left > 0:
            old_left -= 1
            new_left -= 1
            hunk.lines.append(line)
        else:
            break
        i += 1
    while i < len(lines) and lines[i].startswith("\\"):
        hunk.lines.append(lines[i])
        i += 1
    hunk.complete = old_left == 0 and new_left == 0
    return hunk, i


def context_name(context: str) -> str | None:
    """Element name from a hunk header's function-context field."""
    ctx = context.strip()
    if not ctx:
        return None
    for m in _CALLISH.finditer(ctx):
        if m.group(1) not in C_KEYWORDS:
            return m.group(1)
    words = [w for w in _IDENT.findall(ctx) if w not in C_KEYWORDS]
    if not words:
        return None
    return words[-1]


def modified_files(files: list[FilePatch]) -> list[str]:
    """Paths of file sections carrying at least one hunk, deduplicated in order."""
    out: dict[str, None] = {}
    for fp in files:
        if fp.hunks and fp.path:
            out.setdefault(fp.path, None)
    return list(out)
