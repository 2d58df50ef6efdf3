"""Source-tree indexing with per-file code entities and skeletons."""

from __future__ import annotations

import json
import logging
import os
import posixpath
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable

from ..errors import IndexFormatError, IoError, RootNotFound
from . import cparse
from .tokenizer import tokenize

log = logging.getLogger(__name__)

INDEX_HEADER = "KFLIDX1"
SOURCE_SUFFIXES = (".c", ".h")


def normalize_path(path: str) -> str | None:
    """Return *path* as a repo-relative ``/``-separated path, or None if it escapes the root."""
    p = path.strip().strip("'\"`").replace("\\", "/")
    while p.startswith("./"):
        p = p[2:]
    p = p.lstrip("/")
    if not p:
        return None
    p = posixpath.normpath(p)
    if p == "." or p.startswith("../") or p == "..":
        return None
    return p


@dataclass(frozen=True)
class SourceFile:
    path: str
    content: str

    @property
    def line_count(self) -> int:
        return len(self.content.splitlines())


@dataclass
class CodeEntities:
    function_names: list[str] = field(default_factory=list)
    struct_names: list[str] = field(default_factory=list)
    macro_names: list[str] = field(default_factory=list)
    identifiers: list[str] = field(default_factory=list)
    comments: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class SkeletonElement:
    kind: str  # function | struct | other_block
    name: str
    signature: str
    leading_comment: str | None
    span: tuple[int, int]

    def render(self) -> str:
        head = f"{self.leading_comment}\n" if self.leading_comment else ""
        if self.kind == "function":
            return head + self.signature + " { ... }"
        if self.kind == "struct":
            return head + self.signature + " { ... };"
        multi = self.span[1] > self.span[0]
        return head + self.signature + (" ..." if multi else "")


@dataclass
class Skeleton:
    path: str
    elements: list[SkeletonElement] = field(default_factory=list)

    def render(self) -> str:
        return "\n".join(e.render() for e in self.elements)

    def names(self) -> set[str]:
        return {e.name for e in self.elements if e.kind != "other_block"}

    def enclosing(self, line: int) -> SkeletonElement | None:
        for e in self.elements:
            if e.span[0] <= line <= e.span[1]:
                return e
        return None


def extract_entities(file: SourceFile) -> CodeEntities:
    sc = cparse.scan(file.content)
    functions: dict[str, None] = {}
    structs: dict[str, None] = {}
    for st in sc.statements:
        if st.kind == "function" and st.name:
            functions.setdefault(st.name, None)
        elif st.kind == "struct" and st.name and not st.name.startswith("anon_"):
            structs.setdefault(st.name, None)
        for alias in st.aliases:
            structs.setdefault(alias, None)
    idents = cparse.identifiers_of(sc)
    known = set(idents)
    for name in [*functions, *structs]:
        if name not in known:
            idents.append(name)
            known.add(name)
    return CodeEntities(
        function_names=list(functions),
        struct_names=list(structs),
        macro_names=cparse.macro_names_of(sc),
        identifiers=idents,
        comments=[c.text for c in sc.comments],
    )


def _comment_blocks(comments: list[cparse.Comment]) -> list[cparse.Comment]:
    # adjacent comments (e.g. a run of // lines) merge into one block
    blocks: list[cparse.Comment] = []
    for c in comments:
        if blocks and c.start_line <= blocks[-1].end_line + 1:
            prev = blocks[-1]
            sep = "\n" if c.start_line > prev.end_line else " "
            blocks[-1] = cparse.Comment(prev.start_line, c.end_line, prev.text + sep + c.text)
        else:
            blocks.append(c)
    return blocks


def extract_skeleton(file: SourceFile) -> Skeleton:
    """Reduce a file to function/struct signatures plus their leading comments.

    Top-level code outside any function or struct (includes, globals,
    prototypes, macro invocations) is grouped into ``other_block`` elements,
    one per run of code lines delimited by blank or comment-only lines.
    """
    text = file.content
    if not text.strip():
        return Skeleton(file.path, [])
    sc = cparse.scan(text)
    lines = text.splitlines()
    code_lines = sc.code.splitlines()
    blocks = _comment_blocks(sc.comments)
    comment_by_end = {b.end_line: b for b in blocks}

    named: list[SkeletonElement] = []
    last_end = 0
    for st in sc.statements:
        if st.kind not in ("function", "struct") or not st.name:
            continue
        if st.start_line <= last_end:
            continue  # shares a line with the previous element
        lead = comment_by_end.get(st.start_line - 1)
        if lead is not None and lead.start_line <= last_end:
            lead = None
        named.append(
            SkeletonElement(
                kind=st.kind,
                name=st.name,
                signature=cparse.normalize_ws(st.header),
                leading_comment=lead.text if lead else None,
                span=(st.start_line, st.end_line),
            )
        )
        last_end = st.end_line

    covered = set()
    for e in named:
        covered.update(range(e.span[0], e.span[1] + 1))
    directive_lines = set()
    for start, end, _ in sc.directives:
        directive_lines.update(range(start, end + 1))

    def is_code(ln: int) -> bool:
        if ln in covered:
            return False
        if ln in directive_lines:
            return True
        return ln <= len(code_lines) and code_lines[ln - 1].strip() != ""

    others: list[SkeletonElement] = []
    run: list[int] = []
    for ln in range(1, len(lines) + 2):
        if ln <= len(lines) and is_code(ln):
            run.append(ln)
            continue
        if run:
            first = lines[run[0] - 1]
            if run[0] not in directive_lines:
                first = code_lines[run[0] - 1]
            others.append(
                SkeletonElement(
                    kind="other_block",
                    name=f"block_{run[0]}",
                    signature=cparse.normalize_ws(first),
                    leading_comment=None,
                    span=(run[0], run[-1]),
                )
            )
            run = []

    elements = sorted(named + others, key=lambda e: e.span[0])
    return Skeleton(file.path, elements)


def _analyze(item: tuple[str, str]) -> tuple[str, list[str], CodeEntities]:
    path, content = item
    return path, tokenize(content), extract_entities(SourceFile(path, content))


@dataclass(eq=False)
class CodebaseIndex:
    files: dict[str, SourceFile]
    tokens_by_file: dict[str, list[str]]
    entities_by_file: dict[str, CodeEntities]

    def __post_init__(self) -> None:
        self.files = dict(sorted(self.files.items()))
        self.doc_lengths = {p: len(self.tokens_by_file[p]) for p in self.files}
        total = sum(self.doc_lengths.values())
        self.avg_doc_length = total / len(self.files) if self.files else 0.0
        inverted: dict[str, dict[str, int]] = {}
        for path in self.files:
            for tok, tf in Counter(self.tokens_by_file[path]).items():
                inverted.setdefault(tok, {})[path] = tf
        self.inverted = inverted

    @classmethod
    def from_files(cls, files: Iterable[SourceFile], jobs: int = 1) -> "CodebaseIndex":
        files = sorted(files, key=lambda f: f.path)
        items = [(f.path, f.content) for f in files]
        if jobs > 1 and len(items) > 64:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_analyze, items, chunksize=32))
        else:
            results = [_analyze(it) for it in items]
        return cls(
            files={f.path: f for f in files},
            tokens_by_file={p: toks for p, toks, _ in results},
            entities_by_file={p: ents for p, _, ents in results},
        )

    def __len__(self) -> int:
        return len(self.files)

    def __contains__(self, path: object) -> bool:
        return path in self.files

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CodebaseIndex):
            return NotImplemented
        return (
            self.files == other.files
            and self.tokens_by_file == other.tokens_by_file
            and self.entities_by_file == other.entities_by_file
        )

    @property
    def paths(self) -> list[str]:
        return list(self.files)

    @cached_property
    def by_directory(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        for p in self.files:
            out.setdefault(posixpath.dirname(p), []).append(p)
        return out

    def resolve(self, path: str) -> str | None:
        """Normalize *path* and return it if indexed."""
        p = normalize_path(path)
        return p if p is not None and p in self.files else None

    def save(self, path: str | os.PathLike) -> None:
        from ..io import write_atomic

        lines = [INDEX_HEADER]
        for p, f in self.files.items():
            lines.append(
                json.dumps(
                    {
                        "path": p,
                        "content": f.content,
                        "tokens": self.tokens_by_file[p],
                        "entities": asdict(self.entities_by_file[p]),
                    },
                    ensure_ascii=False,
                )
            )
        write_atomic(path, "\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "CodebaseIndex":
        try:
            with open(path, encoding="utf-8") as fh:
                header = fh.readline().rstrip("\n")
                if header != INDEX_HEADER:
                    raise IndexFormatError(f"{path}: expected header {INDEX_HEADER!r}, got {header[:20]!r}")
                files, tokens, ents = {}, {}, {}
                for lineno, line in enumerate(fh, start=2):
                    if not line.strip():
                        continue
                    try:
                        rec = json.loads(line)
                        p = rec["path"]
                        files[p] = SourceFile(p, rec["content"])
                        tokens[p] = rec["tokens"]
                        ents[p] = CodeEntities(**rec["entities"])
                    except (ValueError, KeyError, TypeError) as exc:
                        raise IndexFormatError(f"{path}:{lineno}: {exc}") from exc
        except OSError as exc:
            raise IoError(path, str(exc)) from exc
        return cls(files, tokens, ents)


def _read_text(path: Path, rel: str) -> str:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoError(rel, str(exc)) from exc
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError:
        log.warning("%s: not valid UTF-8, indexing lossy decoding", rel)
        return raw.decode("utf-8", errors="replace")


def index_codebase(root: str | os.PathLike, jobs: int = 1) -> CodebaseIndex:
    root = Path(root)
    if not root.is_dir():
        raise RootNotFound(str(root))
    files = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames[:] = sorted(d for d in dirnames if d != ".git")
        for name in filenames:
            if not name.endswith(SOURCE_SUFFIXES):
                continue
            full = Path(dirpath) / name
            rel = full.relative_to(root).as_posix()
            files.append(SourceFile(rel, _read_text(full, rel)))
    return CodebaseIndex.from_files(files, jobs=jobs)


def directory_files(index: CodebaseIndex, file_paths: Iterable[str]) -> list[str]:
    """All indexed files sharing a parent directory with any of *file_paths*."""
    out: set[str] = set()
    for raw in file_paths:
        p = normalize_path(raw)
        if p is None:
            continue
        out.update(index.by_directory.get(posixpath.dirname(p), ()))
    return sorted(out)
