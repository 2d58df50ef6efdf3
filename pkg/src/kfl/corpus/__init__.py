from .index import (
    CodebaseIndex,
    CodeEntities,
    Skeleton,
    SkeletonElement,
    SourceFile,
    directory_files,
    extract_entities,
    extract_skeleton,
    index_codebase,
    normalize_path,
)
from .tokenizer import STOPWORDS, tokenize

__all__ = [
    "CodebaseIndex",
    "CodeEntities",
    "Skeleton",
    "SkeletonElement",
    "SourceFile",
    "STOPWORDS",
    "directory_files",
    "extract_entities",
    "extract_skeleton",
    "index_codebase",
    "normalize_path",
    "tokenize",
]
