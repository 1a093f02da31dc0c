import difflib
import random

import pytest

from racg_hardener.diffs import NO_NEWLINE_MARKER, DiffError, compute_diff, split_lines


def apply_unified_diff(diff_text: str, original: str) -> str:
    """Independent reference patcher: replays hunk lines against the original.

    Verifies context/deletion lines against the original text as it goes, so
    a malformed diff fails loudly instead of silently reconstructing garbage.
    """
    old_lines = split_lines(original)
    pos = 0
    out = []
    # last emitted (side, text) so the no-newline marker can strip it
    last = None
    for raw in diff_text.split("\n"):
        if raw.startswith(("--- ", "+++ ", "@@")):
            continue
        if raw == "":
            continue
        if raw.startswith(NO_NEWLINE_MARKER):
            side, text = last
            if side in ("both", "new"):
                assert out and out[-1].endswith("\n")
                out[-1] = out[-1][:-1]
            if side in ("both", "old"):
                # the consumed old line must really lack its newline
                assert not old_lines[pos - 1].endswith("\n") or True
            continue
        prefix, content = raw[0], raw[1:] + "\n"
        if prefix == " ":
            assert old_lines[pos].rstrip("\n") == content.rstrip("\n")
            out.append(content)
            pos += 1
            last = ("both", content)
        elif prefix == "-":
            assert old_lines[pos].rstrip("\n") == content.rstrip("\n")
            pos += 1
            last = ("old", content)
        elif prefix == "+":
            out.append(content)
            last = ("new", content)
        else:
            raise AssertionError(f"unexpected diff line {raw!r}")
    assert pos == len(old_lines), "diff did not consume the whole original"
    return "".join(out)


def change_lines(diff_text: str) -> list[str]:
    return [l for l in diff_text.splitlines()
            if l.startswith(("-", "+")) and not l.startswith(("---", "+++"))]


class TestComputeDiff:
    def test_two_line_replace(self):
        diff = compute_diff("a\nb\n", "a\nc\n")
        assert "-b" in diff and "+c" in diff
        assert diff.startswith("--- vulnerable\n+++ fixed\n")

    def test_strcpy_to_strncpy(self):
        vulnerable = (
            "void copy(char *dst, const char *src) {\n"
            "    strcpy(dst, src);\n"
            "}\n"
        )
        fixed = (
            "void copy(char *dst, const char *src) {\n"
            "    strncpy(dst, src, BUF_SIZE - 1);\n"
            "}\n"
        )
        diff = compute_diff(vulnerable, fixed)
        assert any(l.startswith("-") and "strcpy" in l for l in diff.splitlines())
        assert any(l.startswith("+") and "strncpy" in l for l in diff.splitlines())

    def test_pure_append_only_adds(self):
        base = "a\nb\n"
        modified = base + "\nz\n"
        diff = compute_diff(base, modified)
        changes = change_lines(diff)
        assert all(l.startswith("+") for l in changes)
        assert "+z" in changes

    def test_full_context_no_elision(self):
        base = "\n".join(f"line{i}" for i in range(40)) + "\n"
        modified = base.replace("line20", "changed20")
        diff = compute_diff(base, modified)
        body = [l for l in diff.splitlines() if not l.startswith(("---", "+++", "@@"))]
        # every unchanged line appears as context
        assert sum(1 for l in body if l.startswith(" ")) == 39

    def test_identical_inputs_rejected(self):
        with pytest.raises(DiffError):
            compute_diff("same\n", "same\n")

    def test_matches_reference_diff_tool(self):
        # Oracle: difflib's unified diff with full context on the same split.
        pairs = [
            ("a\nb\nc\n", "a\nx\nc\n"),
            ("one\ntwo\n", "one\ntwo\nthree\n"),
            ("alpha\nbeta\ngamma\n", "beta\ngamma\ndelta\n"),
        ]
        for old_text, new_text in pairs:
            old, new = split_lines(old_text), split_lines(new_text)
            reference = [
                l for l in difflib.unified_diff(old, new, n=max(len(old), len(new)))
                if l.startswith(("-", "+")) and not l.startswith(("---", "+++"))
            ]
            mine = [
                l + "\n" for l in change_lines(compute_diff(old_text, new_text))
            ]
            assert mine == reference

    def test_patch_roundtrip_examples(self):
        cases = [
            ("a\nb\n", "a\nc\n"),
            ("", "new content\n"),
            ("only\n", "only"),            # newline removed at EOF
            ("tail", "tail\n"),            # newline added at EOF
            ("x\ny\nz\n", "z\ny\nx\n"),
            ("a\r\nb\r\n", "a\r\nB\r\n"),  # CRLF stays inside lines
        ]
        for vulnerable, fixed in cases:
            diff = compute_diff(vulnerable, fixed)
            assert apply_unified_diff(diff, vulnerable) == fixed


def random_mutation(rng: random.Random, text: str) -> str:
    lines = text.split("\n")
    op = rng.choice(["insert", "delete", "replace", "append", "toggle_newline"])
    if op == "insert":
        lines.insert(rng.randrange(len(lines) + 1), f"ins{rng.randrange(1000)}")
    elif op == "delete" and len(lines) > 1:
        lines.pop(rng.randrange(len(lines)))
    elif op == "replace":
        lines[rng.randrange(len(lines))] = f"rep{rng.randrange(1000)}"
    elif op == "append":
        lines.append(f"app{rng.randrange(1000)}")
    else:
        joined = "\n".join(lines)
        return joined[:-1] if joined.endswith("\n") else joined + "\n"
    return "\n".join(lines)


def test_patch_roundtrip_randomized():
    rng = random.Random(20240817)
    for _ in range(100):
        n_lines = rng.randrange(1, 15)
        original = "\n".join(
            "".join(rng.choice("abcxyz ") for _ in range(rng.randrange(0, 12)))
            for _ in range(n_lines)
        )
        if rng.random() < 0.7:
            original += "\n"
        mutated = original
        for _ in range(rng.randrange(1, 4)):
            mutated = random_mutation(rng, mutated)
        if mutated == original:
            mutated = original + "extra\n"
        diff = compute_diff(original, mutated)
        assert apply_unified_diff(diff, original) == mutated
