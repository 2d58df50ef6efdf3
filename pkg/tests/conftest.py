from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from kfl.corpus import CodebaseIndex, CodeEntities, SourceFile  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


def token_index(docs: dict[str, list[str]], entities: dict[str, CodeEntities] | None = None) -> CodebaseIndex:
    """An index whose token lists are given directly, bypassing the tokenizer."""
    return CodebaseIndex(
        files={p: SourceFile(p, " ".join(t)) for p, t in docs.items()},
        tokens_by_file={p: list(t) for p, t in docs.items()},
        entities_by_file={p: (entities or {}).get(p, CodeEntities()) for p in docs},
    )


def write_tree(root: Path, files: dict[str, str]) -> Path:
    for rel, text in files.items():
        p = root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
    return root


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES


# --- acceptance reporting ---------------------------------------------------

ACCEPTANCE_RESULTS: dict[int, tuple[str, str, float]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        status, title, secs = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status:4s} {title} ({secs:.2f} s)")
