"""Heuristic structural scanner for C source.

No preprocessor evaluation and no grammar: comments, string literals and
directives are masked out, then top-level statements are delimited by brace
depth. Malformed input degrades to best-effort results and never raises.
"""

from __future__ import annotations

import bisect
import re
from dataclasses import dataclass, field

from .tokenizer import C_KEYWORDS

_IDENT = re.compile(r"[A-Za-z_]\w*")
_CALL = re.compile(r"([A-Za-z_]\w*)\s*\(")
_DEFINE = re.compile(r"#\s*define\s+([A-Za-z_]\w*)")
_FUNC_PTR_ALIAS = re.compile(r"\(\s*\*\s*([A-Za-z_]\w*)\s*\)")
_WS = re.compile(r"\s+")

# identifiers that take a parenthesised argument list but never name a function
_ATTRIBUTE_CALLS = frozenset(
    {"__attribute__", "__attribute", "__printf", "__scanf", "__acquires", "__releases",
     "__must_hold", "__section", "__aligned", "__alloc_size", "__cond_acquires"}
)
_QUALIFIERS = frozenset({"typedef", "static", "const", "extern", "volatile", "register"})
_AGGREGATE = frozenset({"struct", "union", "enum"})


def normalize_ws(text: str) -> str:
    return _WS.sub(" ", text).strip()


@dataclass
class Comment:
    start_line: int
    end_line: int
    text: str


@dataclass
class Statement:
    kind: str  # function | struct | other
    start: int
    end: int
    start_line: int
    end_line: int
    header: str
    trailer: str = ""
    name: str | None = None
    aliases: list[str] = field(default_factory=list)


@dataclass
class Scan:
    text: str
    code: str
    comments: list[Comment]
    directives: list[tuple[int, int, str]]
    statements: list[Statement]
    line_starts: list[int]

    def line_of(self, offset: int) -> int:
        return bisect.bisect_right(self.line_starts, offset)


def _line_starts(text: str) -> list[int]:
    starts = [0]
    for m in re.finditer("\n", text):
        starts.append(m.end())
    return starts


def _blank(buf: list[str], start: int, end: int) -> None:
    for k in range(start, end):
        if buf[k] != "\n":
            buf[k] = " "


def _directive_end(text: str, i: int) -> int:
    n = len(text)
    while True:
        nl = text.find("\n", i)
        if nl == -1:
            return n
        j = nl - 1
        if j >= 0 and text[j] == "\r":
            j -= 1
        if j >= 0 and text[j] == "\\":
            i = nl + 1
            continue
        return nl


def _mask(text: str, line_of) -> tuple[str, list[Comment], list[tuple[int, int, str]]]:
    buf = list(text)
    comments: list[Comment] = []
    directives: list[tuple[int, int, str]] = []
    n = len(text)
    i = 0
    line_start = True
    while i < n:
        c = text[i]
        if c == "\n":
            line_start = True
            i += 1
            continue
        if line_start and c in " \t\r\f\v":
            i += 1
            continue
        if line_start and c == "#":
            end = _directive_end(text, i)
            body = text[i:end]
            for m in re.finditer(r"/\*.*?(?:\*/|$)|//[^\n]*", body, re.S):
                s = i + m.start()
                comments.append(Comment(line_of(s), line_of(i + m.end() - 1), m.group()))
            directives.append((line_of(i), line_of(max(i, end - 1)), body))
            _blank(buf, i, end)
            i = end
            continue
        line_start = False
        if text.startswith("/*", i):
            end = text.find("*/", i + 2)
            end = n if end == -1 else end + 2
            comments.append(Comment(line_of(i), line_of(end - 1), text[i:end]))
            _blank(buf, i, end)
            i = end
        elif text.startswith("//", i):
            end = text.find("\n", i)
            end = n if end == -1 else end
            comments.append(Comment(line_of(i), line_of(end - 1), text[i:end]))
            _blank(buf, i, end)
            i = end
        elif c == '"' or c == "'":
            j = i + 1
            while j < n and text[j] != c and text[j] != "\n":
                j += 2 if text[j] == "\\" else 1
            end = min(j + 1, n)
            _blank(buf, i, end)
            i = end
        else:
            i += 1
    return "".join(buf), comments, directives


def _classify(header: str) -> str:
    h = normalize_ws(header)
    depth = 0
    for ch in h:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == "=" and depth == 0:
            return "other"
    words = [w for w in _IDENT.findall(h) if w not in _QUALIFIERS and not w.startswith("__")]
    if words and words[0] in _AGGREGATE and "(" not in h:
        return "struct"
    if "(" in h and _strip_attrs(h).endswith(")"):
        return "function"
    return "other"


def _strip_attrs(h: str) -> str:
    # trailing bare attribute words: `__init`, `__must_check`, `ATTR`
    return re.sub(r"(?:\s+(?:__\w+|[A-Z][A-Z0-9_]+))+\s*$", "", h)


def _function_name(header: str) -> str | None:
    for m in _CALL.finditer(header):
        name = m.group(1)
        if name in C_KEYWORDS or name in _ATTRIBUTE_CALLS or name.startswith("__attribute"):
            continue
        return name
    return None


def _aggregate_tag(header: str) -> str | None:
    words = [w for w in _IDENT.findall(header) if w not in _QUALIFIERS and not w.startswith("__")]
    if len(words) >= 2 and words[0] in _AGGREGATE:
        return words[-1]
    return None


def _typedef_alias(text: str) -> str | None:
    m = _FUNC_PTR_ALIAS.search(text)
    if m:
        return m.group(1)
    words = [w for w in _IDENT.findall(text) if not w.startswith("__")]
    return words[-1] if words else None


def _statements(code: str, line_of) -> list[Statement]:
    out: list[Statement] = []
    n = len(code)
    depth = paren = 0
    start = None
    kind = None
    header = ""
    block_close = None
    i = 0

    def emit(end: int) -> None:
        k = kind or "other"
        st = Statement(k, start, end, line_of(start), line_of(max(start, end - 1)), header)
        if block_close is not None:
            st.trailer = code[block_close + 1:end].rstrip(";")
        out.append(st)

    while i < n:
        c = code[i]
        if c.isspace():
            i += 1
            continue
        if start is None:
            start, kind, header, block_close, paren = i, None, "", None, 0
        if depth == 0 and c == "(":
            paren += 1
        elif depth == 0 and c == ")":
            paren = max(0, paren - 1)
        elif c == "{":
            if depth == 0 and kind is None:
                header = code[start:i]
                kind = _classify(header)
                paren = 0
            depth += 1
        elif c == "}":
            if depth == 0:
                i += 1  # stray closer
                continue
            depth -= 1
            if depth == 0:
                block_close = i
                if kind == "function":
                    emit(i + 1)
                    start = None
        elif c == ";" and depth == 0 and paren == 0:
            if kind is None:
                header = code[start:i]
            emit(i + 1)
            start = None
        i += 1
    if start is not None:
        if kind is None:
            header = code[start:]
        emit(n)

    for st in out:
        words = _IDENT.findall(st.header)
        if st.kind == "function":
            st.name = _function_name(st.header)
            if st.name is None:
                st.kind = "other"
        elif st.kind == "struct":
            st.name = _aggregate_tag(st.header)
            if words and words[0] == "typedef":
                alias = _typedef_alias(st.trailer)
                if alias:
                    st.aliases.append(alias)
            if st.name is None:
                st.name = st.aliases[0] if st.aliases else f"anon_{st.start_line}"
        elif words and words[0] == "typedef":
            alias = _typedef_alias(st.header)
            if alias:
                st.aliases.append(alias)
    return out


def scan(text: str) -> Scan:
    starts = _line_starts(text)

    def line_of(offset: int) -> int:
        return bisect.bisect_right(starts, offset)

    code, comments, directives = _mask(text, line_of)
    statements = _statements(code, line_of)
    return Scan(text, code, comments, directives, statements, starts)


def identifiers_of(sc: Scan) -> list[str]:
    seen: dict[str, None] = {}
    for m in _IDENT.finditer(sc.code):
        seen.setdefault(m.group(), None)
    for _, _, body in sc.directives:
        for m in _IDENT.finditer(body):
            seen.setdefault(m.group(), None)
    return [w for w in seen if w.lower() not in C_KEYWORDS]


def macro_names_of(sc: Scan) -> list[str]:
    names: dict[str, None] = {}
    for _, _, body in sc.directives:
        m = _DEFINE.match(body)
        if m:
            names.setdefault(m.group(1), None)
    return list(names)
