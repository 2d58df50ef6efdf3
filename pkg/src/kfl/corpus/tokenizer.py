"""Shared lexical analysis for code and bug-report text."""

from __future__ import annotations

import re

C_KEYWORDS = frozenset(
    """
    auto break case char const continue default do double else enum extern
    float for goto if inline int long register restrict return short signed
    sizeof static struct switch typedef union unsigned void volatile while
    _bool _complex _imaginary bool true false null define include ifdef ifndef
    endif elif undef pragma
    """.split()
)

ENGLISH_STOPWORDS = frozenset(
    """
    a about above after again against all am an and any are as at be because
    been before being below between both but by can could did do does doing
    down during each few from further had has have having he her here hers
    herself him himself his how i in into is it its itself just me more most
    my myself no nor not now of off on once only or other our ours ourselves
    out over own same she should so some such than that the their theirs them
    themselves then there these they this those through to too under until up
    very was we were what when where which while who whom why will with would
    you your yours yourself yourselves also may might must shall us
    """.split()
)

STOPWORDS = C_KEYWORDS | ENGLISH_STOPWORDS

_WORD = re.compile(r"[A-Za-z0-9_]+")
_CAMEL = re.compile(r"(?<=[a-z])(?=[A-Z])")
_HAS_ALNUM = re.compile(r"[a-z0-9]")


def _keep(token: str) -> bool:
    return len(token) >= 2 and token not in STOPWORDS and _HAS_ALNUM.search(token) is not None


def _expand(word: str) -> list[str]:
    # compound first, then each snake piece (if several), then its camel parts
    out = [word.lower()]
    pieces = [p for p in word.split("_") if p]
    if len(pieces) > 1 or (pieces and pieces[0] != word):
        for piece in pieces:
            out.append(piece.lower())
            camel = _CAMEL.split(piece)
            if len(camel) > 1:
                out.extend(c.lower() for c in camel)
    elif pieces:
        camel = _CAMEL.split(word)
        if len(camel) > 1:
            out.extend(c.lower() for c in camel)
    return out


def tokenize(text: str) -> list[str]:
    """Split *text* into lowercase index terms.

    Identifiers are kept whole and also split on underscores and on
    lower-to-upper camelCase boundaries:

    >>> tokenize("acpi_battery_update")
    ['acpi_battery_update', 'acpi', 'battery', 'update']
    >>> tokenize("readFileSync")
    ['readfilesync', 'read', 'file', 'sync']
    """
    tokens: list[str] = []
    for match in _WORD.finditer(text):
        tokens.extend(t for t in _expand(match.group()) if _keep(t))
    return tokens
