"""Unified-diff text for vulnerable/fixed code pairs.

The diff keeps the entire file as context (nothing elided) so a downstream
reader sees the full function body, and it uses the fixed header names
``vulnerable`` / ``fixed`` rather than file paths. Lines are split on ``\\n``
only; carriage returns stay part of the line content. A trailing line without
a newline is flagged GNU-style with a ``\\ No newline at end of file`` marker,
which keeps the diff losslessly applicable.
"""

from __future__ import annotations

import difflib

NO_NEWLINE_MARKER = "\\ No newline at end of file"


class DiffError(Exception):
    pass


def split_lines(text: str) -> list[str]:
    """Split on newlines, keeping each ``\\n`` attached to its line.

    Unlike ``str.splitlines`` this does not treat ``\\r`` or unicode
    separators as boundaries, and an unterminated final line is preserved
    without a newline so it compares unequal to its terminated twin.
    """
    out = []
    start = 0
    while True:
        idx = text.find("\n", start)
        if idx == -1:
            if start < len(text):
                out.append(text[start:])
            return out
        out.append(text[start : idx + 1])
        start = idx + 1


def _emit(out: list[str], prefix: str, line: str) -> None:
    if line.endswith("\n"):
        out.append(prefix + line)
    else:
        out.append(prefix + line + "\n")
        out.append(NO_NEWLINE_MARKER + "\n")


def compute_diff(vulnerable_code: str, fixed_code: str) -> str:
    """Full-context unified diff from vulnerable to fixed source text.

    Emits a single hunk covering both files completely, headed by
    ``--- vulnerable`` / ``+++ fixed``. Identical inputs are rejected.
    """
    if vulnerable_code == fixed_code:
        raise DiffError("vulnerable and fixed code are identical")
    old = split_lines(vulnerable_code)
    new = split_lines(fixed_code)
    out = ["--- vulnerable\n", "+++ fixed\n"]
    old_start = 1 if old else 0
    new_start = 1 if new else 0
    out.append(f"@@ -{old_start},{len(old)} +{new_start},{len(new)} @@\n")
    matcher = difflib.SequenceMatcher(a=old, b=new, autojunk=False)
    for tag, i1, i2, j1, j2 in matcher.get_opcodes():
        if tag == "equal":
            for line in old[i1:i2]:
                _emit(out, " ", line)
            continue
        if tag in ("replace", "delete"):
            for line in old[i1:i2]:
                _emit(out, "-", line)
        if tag in ("replace", "insert"):
            for line in new[j1:j2]:
                _emit(out, "+", line)
    return "".join(out)
