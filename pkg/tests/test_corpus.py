from __future__ import annotations

import re

import pytest
from conftest import FIXTURES, write_tree
from hypothesis import given, settings
from hypothesis import strategies as st

from kfl.corpus import (
    STOPWORDS,
    CodebaseIndex,
    SourceFile,
    directory_files,
    extract_entities,
    extract_skeleton,
    index_codebase,
    normalize_path,
    tokenize,
)
from kfl.errors import IndexFormatError, RootNotFound


# --- tokenizer --------------------------------------------------------------


def test_tokenize_snake_case():
    assert tokenize("acpi_battery_update") == ["acpi_battery_update", "acpi", "battery", "update"]


def test_tokenize_camel_case():
    assert tokenize("readFileSync") == ["readfilesync", "read", "file", "sync"]


def test_tokenize_keywords_and_short_tokens_dropped():
    assert tokenize("if (x) return;") == []


def test_tokenize_prose_drops_english_stopwords():
    assert tokenize("The battery is not charging") == ["battery", "charging"]


def test_tokenize_mixed_snake_and_camel():
    toks = tokenize("usb_hidRead")
    assert toks[0] == "usb_hidread"
    assert {"usb", "hidread", "hid", "read"} <= set(toks)


ident = st.from_regex(r"[A-Za-z][A-Za-z0-9_]{0,15}", fullmatch=True)
text = st.lists(st.one_of(ident, st.sampled_from([" ", "\n", "(", ")", ";", "->", ".", ",", "/*", "*/"])), max_size=30).map(
    "".join
)


@given(text)
@settings(max_examples=300, deadline=None)
def test_tokens_are_normalized(s):
    for t in tokenize(s):
        assert t == t.lower()
        assert len(t) >= 2
        assert t not in STOPWORDS
        assert re.fullmatch(r"[a-z0-9_]+", t)


@given(text)
@settings(max_examples=300, deadline=None)
def test_tokenize_idempotent_on_token_set(s):
    toks = tokenize(s)
    assert set(tokenize(" ".join(toks))) == set(toks)


# --- entities ---------------------------------------------------------------


def _sf(text: str, path: str = "t.c") -> SourceFile:
    return SourceFile(path, text)


def test_minimal_function():
    assert extract_entities(_sf("static int foo(void) { return 0; }")).function_names == ["foo"]


def test_minimal_macro():
    assert extract_entities(_sf("#define MAX_LEN 10\n")).macro_names == ["MAX_LEN"]


def test_ec_excerpt_entities():
    ents = extract_entities(_sf((FIXTURES / "c" / "ec_excerpt.c").read_text(), "drivers/acpi/ec.c"))
    # hand-read: three function definitions and one struct; prototypes and calls are not definitions
    assert sorted(ents.function_names) == ["acpi_ec_read_status", "ec_poll", "ec_read"]
    assert ents.struct_names == ["acpi_ec_query_handler"]
    assert sorted(ents.macro_names) == ["ACPI_EC_DELAY", "ACPI_EC_UDELAY_GLK"]


def test_braces_in_comments_and_strings_ignored():
    src = '/* { */\nconst char *s = "}{";\nint bar(int a)\n{\n\treturn a;\n}\n'
    assert extract_entities(_sf(src)).function_names == ["bar"]


def test_prototype_is_not_definition():
    assert extract_entities(_sf("int foo(void);\nint x = bar(2);\n")).function_names == []


def test_struct_union_enum_names():
    src = "struct a { int x; };\nunion b { int y; };\nenum c { C1, C2 };\ntypedef struct { int z; } d_t;\n"
    assert extract_entities(_sf(src)).struct_names == ["a", "b", "c", "d_t"]


def test_struct_returning_function_is_function():
    src = "static struct foo *make_foo(int n)\n{\n\treturn NULL;\n}\n"
    ents = extract_entities(_sf(src))
    assert ents.function_names == ["make_foo"]
    assert ents.struct_names == []


def test_attribute_annotated_function():
    src = "static int __init acpi_ec_init(void) __cold\n{\n\treturn 0;\n}\n"
    assert extract_entities(_sf(src)).function_names == ["acpi_ec_init"]


def test_comments_collected():
    ents = extract_entities(_sf("// one\nint x; /* two */\n"))
    assert ents.comments == ["// one", "/* two */"]


@given(st.text(alphabet="{}()[];#/*\"'\\\n abcx_0=", max_size=200))
@settings(max_examples=300, deadline=None)
def test_scanner_never_raises(src):
    f = _sf(src)
    extract_entities(f)
    sk = extract_skeleton(f)
    n = max(f.line_count, 1)
    for e in sk.elements:
        assert 1 <= e.span[0] <= e.span[1] <= n


# --- skeleton ---------------------------------------------------------------


def test_skeleton_one_commented_function():
    sk = extract_skeleton(_sf("/* does foo */\nint foo(void)\n{\n\treturn 1;\n}\n"))
    assert len(sk.elements) == 1
    e = sk.elements[0]
    assert (e.kind, e.name, e.leading_comment, e.span) == ("function", "foo", "/* does foo */", (2, 5))


def test_skeleton_includes_only():
    sk = extract_skeleton(_sf("#include <a.h>\n#include <b.h>\n"))
    assert [(e.kind, e.span) for e in sk.elements] == [("other_block", (1, 2))]


def test_skeleton_empty_file():
    assert extract_skeleton(_sf("")).elements == []


def test_skeleton_fixture_hand_annotated():
    sk = extract_skeleton(_sf((FIXTURES / "c" / "skeleton_fixture.c").read_text(), "lib/pool.c"))
    named = [(e.kind, e.name, e.span) for e in sk.elements if e.kind != "other_block"]
    assert named == [
        ("struct", "pool_entry", (7, 10)),
        ("function", "pool_init", (18, 22)),
        ("function", "pool_exit", (24, 27)),
        ("struct", "pool_stats", (29, 32)),
        ("function", "pool_find", (35, 43)),
        ("function", "pool_full", (45, 48)),
        ("function", "pool_add", (50, 58)),
    ]
    others = [e.span for e in sk.elements if e.kind == "other_block"]
    assert others == [(1, 2), (4, 4), (12, 13)]
    by_name = {e.name: e for e in sk.elements}
    assert by_name["pool_init"].leading_comment == "/*\n * Allocate the pool.\n */"
    assert by_name["pool_find"].leading_comment == "/* look up an entry by id */"
    assert by_name["pool_exit"].leading_comment is None
    rendered = sk.render()
    assert "int pool_add(int id, void *data) { ... }" in rendered
    assert "pool_table[pool_count].id = id" not in rendered
    assert sk.enclosing(40).name == "pool_find"
    assert sk.enclosing(23) is None


# --- index ------------------------------------------------------------------


def test_index_only_c_and_h(tmp_path):
    write_tree(tmp_path, {"a.c": "int main_loop;", "b.h": "", "README": "x", "Makefile": "all:"})
    assert index_codebase(tmp_path).paths == ["a.c", "b.h"]


def test_index_empty_dir(tmp_path):
    idx = index_codebase(tmp_path)
    assert len(idx) == 0 and idx.avg_doc_length == 0


def test_index_doc_lengths_keyword_example(tmp_path):
    # `int` is a C keyword and `x` is a single character: both files tokenize to nothing
    write_tree(tmp_path, {"a.c": "int x;", "b.c": "int x; int y;"})
    idx = index_codebase(tmp_path)
    assert idx.doc_lengths == {"a.c": 0, "b.c": 0}
    assert idx.avg_doc_length == 0


def test_index_doc_lengths_counted(tmp_path):
    write_tree(tmp_path, {"a.c": "count total;", "b.c": "count total; count extra;"})
    idx = index_codebase(tmp_path)
    assert idx.doc_lengths == {"a.c": 2, "b.c": 4}
    assert idx.avg_doc_length == 3.0
    assert idx.inverted["count"] == {"a.c": 1, "b.c": 2}


def test_index_root_missing(tmp_path):
    with pytest.raises(RootNotFound):
        index_codebase(tmp_path / "nope")


def test_index_skips_git_and_decodes_lossy(tmp_path, caplog):
    write_tree(tmp_path, {".git/x.c": "int a;", "src/k.c": "int b;"})
    (tmp_path / "src" / "bad.c").write_bytes(b"int \xff\xfe value_name;\n")
    idx = index_codebase(tmp_path)
    assert idx.paths == ["src/bad.c", "src/k.c"]
    assert "value_name" in idx.tokens_by_file["src/bad.c"]
    assert "UTF-8" in caplog.text


def test_index_save_load_roundtrip(tmp_path):
    write_tree(tmp_path / "src", {"drivers/acpi/ec.c": (FIXTURES / "c" / "ec_excerpt.c").read_text(), "x.h": "#define A 1\n"})
    idx = index_codebase(tmp_path / "src", jobs=2)
    idx.save(tmp_path / "idx")
    assert (tmp_path / "idx").read_text().startswith("KFLIDX1\n")
    back = CodebaseIndex.load(tmp_path / "idx")
    assert back == idx
    assert back.doc_lengths == idx.doc_lengths
    assert back.inverted == idx.inverted


def test_index_load_bad_header(tmp_path):
    (tmp_path / "idx").write_text("NOTANINDEX\n")
    with pytest.raises(IndexFormatError):
        CodebaseIndex.load(tmp_path / "idx")


def test_parallel_index_matches_serial(tmp_path):
    files = {f"d{i % 7}/f{i}.c": f"int func_{i}(void) {{ return helper_{i % 3}(); }}\n" for i in range(100)}
    write_tree(tmp_path, files)
    assert index_codebase(tmp_path, jobs=3) == index_codebase(tmp_path, jobs=1)


# --- directory_files --------------------------------------------------------


def _dir_index():
    return CodebaseIndex.from_files(
        SourceFile(p, "")
        for p in ["drivers/acpi/battery.c", "drivers/acpi/ec.c", "drivers/acpi/ec.h", "drivers/usb/core.c", "net/a.c"]
    )


def test_directory_files_siblings():
    assert directory_files(_dir_index(), ["drivers/acpi/battery.c"]) == [
        "drivers/acpi/battery.c",
        "drivers/acpi/ec.c",
        "drivers/acpi/ec.h",
    ]


def test_directory_files_empty():
    assert directory_files(_dir_index(), []) == []


def test_directory_files_no_duplicates():
    out = directory_files(_dir_index(), ["drivers/acpi/ec.c", "drivers/acpi/ec.h", "net/a.c"])
    assert out == ["drivers/acpi/battery.c", "drivers/acpi/ec.c", "drivers/acpi/ec.h", "net/a.c"]


def test_directory_files_unknown_file_in_known_directory():
    assert "drivers/usb/core.c" in directory_files(_dir_index(), ["./drivers/usb/missing.c"])


def test_normalize_path():
    assert normalize_path("./a/b/../c.c") == "a/c.c"
    assert normalize_path("/a/c.c") == "a/c.c"
    assert normalize_path("../etc/passwd") is None
    assert normalize_path("  'x.c' ") == "x.c"
