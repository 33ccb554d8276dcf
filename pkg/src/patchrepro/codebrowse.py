"""Bounded, on-demand source inspection: symbol index, queries, snippets.

Indexing is lexical, not a C parse: definition patterns for functions,
struct/union/enum tags, macros, typedefs, and file-scope globals.  All
preprocessor branches are indexed.  Misses are acceptable because callers
can always fall back to line-range reads.
"""

import os
import re
import time
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

from .errors import FileNotIndexed, RootUnreadable, SnippetFileNotFound, StartBeyondEof

DEFAULT_MAX_LINES = 400
DEFAULT_QUERY_LIMIT = 200

_SOURCE_EXTS = (".c", ".h")

# Definition patterns, tried in order per line.  A function definition is an
# identifier followed by a parameter list whose body brace opens on the same
# or a following line; the brace check is handled by the indexer.
_RX_DEFINE = re.compile(r"^\s*#\s*define\s+([A-Za-z_]\w*)")
_RX_TAG = re.compile(r"^\s*(?:typedef\s+)?(struct|union|enum)\s+([A-Za-z_]\w*)\s*(\{|$)")
_RX_TYPEDEF = re.compile(r"^\s*typedef\s+.*?\b([A-Za-z_]\w*)\s*;\s*$")
# Return type (at least one token) then the defining identifier then "(";
# prototypes are excluded by the trailing-";" check in the indexer.
_RX_FUNC = re.compile(r"^[A-Za-z_][\w\s\*]*[\s\*]([A-Za-z_]\w*)\s*\(")
_RX_GLOBAL = re.compile(
    r"^(?:static\s+|const\s+|unsigned\s+|struct\s+\w+\s+|extern\s+)*"
    r"(?:\w[\w\s\*]*?)\b([A-Za-z_]\w*)\s*(=|\[[^\]]*\]\s*=|;)\s*")

_KEYWORDS = {
    "if", "else", "for", "while", "do", "switch", "return", "sizeof",
    "case", "default", "goto", "break", "continue", "typedef", "struct",
    "union", "enum", "static", "const", "extern", "inline", "void",
    "int", "char", "long", "short", "unsigned", "signed", "float", "double",
}


@dataclass(frozen=True)
class SymbolEntry:
    name: str
    kind: str  # function | struct | union | enum | macro | typedef | global
    file: str  # relative path
    line: int  # 1-based, the defining line


@dataclass
class Snippet:
    file: str
    start: int
    end: int
    lines: List[str]
    truncated: bool


@dataclass
class CodeIndex:
    root: str
    entries: Dict[str, List[SymbolEntry]] = field(default_factory=dict)
    by_file: Dict[str, List[SymbolEntry]] = field(default_factory=dict)
    file_count: int = 0
    build_time_ms: int = 0

    def add(self, entry: SymbolEntry):
        self.entries.setdefault(entry.name, []).append(entry)
        self.by_file.setdefault(entry.file, []).append(entry)


def _index_file(relpath: str, lines: List[str], index: CodeIndex):
    brace_depth = 0
    for lineno, line in enumerate(lines, start=1):
        at_top = brace_depth == 0
        m = _RX_DEFINE.match(line)
        if m:
            index.add(SymbolEntry(m.group(1), "macro", relpath, lineno))
        elif at_top:
            m = _RX_TAG.match(line)
            if m and (m.group(3) == "{" or "{" in line):
                index.add(SymbolEntry(m.group(2), m.group(1), relpath, lineno))
            else:
                m = _RX_TYPEDEF.match(line)
                if m and m.group(1) not in _KEYWORDS:
                    index.add(SymbolEntry(m.group(1), "typedef", relpath, lineno))
                else:
                    m = _RX_FUNC.match(line)
                    stripped = line.rstrip()
                    if (m and m.group(1) not in _KEYWORDS
                            and not stripped.endswith(";")
                            and "=" not in line.split("(")[0]):
                        index.add(SymbolEntry(m.group(1), "function", relpath, lineno))
                    else:
                        m = _RX_GLOBAL.match(line)
                        if (m and m.group(1) not in _KEYWORDS
                                and "(" not in line.split(m.group(1))[0]):
                            index.add(SymbolEntry(m.group(1), "global", relpath, lineno))
        # Track nesting outside strings/comments well enough for fixtures.
        brace_depth += line.count("{") - line.count("}")
        brace_depth = max(brace_depth, 0)


def build_index(source_root: str) -> CodeIndex:
    """Walk the tree and index every definition-pattern match.

    Deterministic for a fixed tree: files are visited in sorted order.
    """
    if not os.path.isdir(source_root):
        raise RootUnreadable(source_root)
    started = time.monotonic()
    index = CodeIndex(root=os.path.abspath(source_root))
    for dirpath, dirnames, filenames in os.walk(source_root):
        dirnames.sort()
        if ".git" in dirnames:
            dirnames.remove(".git")
        for fname in sorted(filenames):
            if not fname.endswith(_SOURCE_EXTS):
                continue
            full = os.path.join(dirpath, fname)
            rel = os.path.relpath(full, source_root)
            try:
                with open(full, "r", encoding="utf-8", errors="replace") as fh:
                    lines = fh.read().splitlines()
            except OSError:
                continue
            _index_file(rel, lines, index)
            index.file_count += 1
    index.build_time_ms = int((time.monotonic() - started) * 1000)
    return index


def list_symbols(index: CodeIndex, file: str) -> List[SymbolEntry]:
    """Symbols defined in one indexed file, sorted by line."""
    rel = os.path.normpath(file)
    if rel.startswith("..") or os.path.isabs(rel):
        raise FileNotIndexed(file)
    if not os.path.exists(os.path.join(index.root, rel)):
        raise FileNotIndexed(file)
    return sorted(index.by_file.get(rel, []), key=lambda e: e.line)


def query_symbol(index: CodeIndex, name: str, mode: str = "definitions",
                 limit: int = DEFAULT_QUERY_LIMIT) -> Tuple[List[dict], bool]:
    """Global definition or whole-word reference lookup, capped at ``limit``."""
    if limit < 1:
        raise ValueError("limit must be >= 1")
    if mode == "definitions":
        hits = [{"file": e.file, "line": e.line, "kind": e.kind}
                for e in index.entries.get(name, [])]
        return hits[:limit], len(hits) > limit
    if mode != "references":
        raise ValueError("mode must be definitions or references")

    defining = {(e.file, e.line) for e in index.entries.get(name, [])}
    word = re.compile(r"\b%s\b" % re.escape(name))
    hits = []
    truncated = False
    for dirpath, dirnames, filenames in os.walk(index.root):
        dirnames.sort()
        if ".git" in dirnames:
            dirnames.remove(".git")
        for fname in sorted(filenames):
            if not fname.endswith(_SOURCE_EXTS):
                continue
            rel = os.path.relpath(os.path.join(dirpath, fname), index.root)
            with open(os.path.join(dirpath, fname), "r",
                      encoding="utf-8", errors="replace") as fh:
                for lineno, line in enumerate(fh, start=1):
                    if word.search(line) and (rel, lineno) not in defining:
                        if len(hits) >= limit:
                            truncated = True
                            return hits, truncated
                        hits.append({"file": rel, "line": lineno,
                                     "text": line.rstrip("\n")})
    return hits, truncated


def read_range(source_root: str, file: str, start: int, end: int,
               max_lines: int = DEFAULT_MAX_LINES) -> Snippet:
    """Line-range snippet with true line-number prefixes and clamped bounds."""
    if start < 1:
        raise ValueError("start must be >= 1")
    full = os.path.join(source_root, file)
    if not os.path.isfile(full):
        raise SnippetFileNotFound(file)
    with open(full, "r", encoding="utf-8", errors="replace") as fh:
        all_lines = fh.read().splitlines()
    if start > len(all_lines):
        raise StartBeyondEof("%s has %d lines" % (file, len(all_lines)))
    capped_end = min(end, len(all_lines), start + max_lines - 1)
    truncated = capped_end < min(end, len(all_lines))
    numbered = ["%d\t%s" % (n, all_lines[n - 1])
                for n in range(start, capped_end + 1)]
    return Snippet(file=file, start=start, end=capped_end,
                   lines=numbered, truncated=truncated)


def save_index(index: CodeIndex, path: str):
    """Persist as sorted flat text records: name\\tkind\\tfile\\tline."""
    records = sorted(
        "%s\t%s\t%s\t%d" % (e.name, e.kind, e.file, e.line)
        for entries in index.entries.values() for e in entries)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(records) + ("\n" if records else ""))


def load_index(root: str, path: str) -> CodeIndex:
    index = CodeIndex(root=os.path.abspath(root))
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            name, kind, file, lineno = line.rstrip("\n").split("\t")
            index.add(SymbolEntry(name, kind, file, int(lineno)))
    return index
