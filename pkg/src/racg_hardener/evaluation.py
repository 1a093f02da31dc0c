"""Security and similarity evaluation of generated code.

Security is judged by a line-oriented regex rule engine (bundled rule set,
loadable from a rule file) with an optional hook to an external detector
command; a case is secure iff it has zero findings. Similarity is a token
n-gram score labeled ``sim-bleu-proxy`` in reports: it guards against
functionality drift, it is not a full structural code-similarity metric.
"""

from __future__ import annotations

import math
import os
import re
import subprocess
import tempfile
from dataclasses import dataclass
from importlib import resources
from typing import Mapping, Sequence

from .errors import LoadError
from .models import CaseResult, EvalReport, Finding, normalize_cwe
from . import storage


class EvaluationError(Exception):
    pass


@dataclass(frozen=True)
class DetectorRule:
    """One insecure-pattern rule: a regex scoped to a language (or ``*``)."""

    rule_id: str
    cwe_id: str
    language: str
    pattern: str
    description: str

    def __post_init__(self):
        object.__setattr__(self, "cwe_id", normalize_cwe(self.cwe_id))
        object.__setattr__(self, "language", self.language.strip().lower())
        try:
            object.__setattr__(self, "_compiled", re.compile(self.pattern))
        except re.error as exc:
            raise ValueError(f"rule {self.rule_id}: bad pattern: {exc}") from exc

    @property
    def compiled(self) -> re.Pattern:
        return self._compiled  # type: ignore[attr-defined]

    def applies_to(self, language: str) -> bool:
        return self.language == "*" or self.language == language.strip().lower()


def load_rules(path: str) -> list[DetectorRule]:
    header, rows = storage.read_lines(path, "rules/")
    rules = []
    seen = set()
    for offset, row in enumerate(rows):
        lineno = offset + 2
        try:
            rule = DetectorRule(
                rule_id=str(row["rule_id"]), cwe_id=str(row["cwe_id"]),
                language=str(row["language"]), pattern=str(row["pattern"]),
                description=str(row.get("description", "")))
        except (KeyError, ValueError) as exc:
            raise LoadError(f"{path}: line {lineno}: {exc}") from exc
        if rule.rule_id in seen:
            raise LoadError(f"{path}: line {lineno}: duplicate rule id {rule.rule_id!r}")
        seen.add(rule.rule_id)
        rules.append(rule)
    return rules


def save_rules(rules: Sequence[DetectorRule], path: str) -> None:
    rows = ({"rule_id": r.rule_id, "cwe_id": r.cwe_id, "language": r.language,
             "pattern": r.pattern, "description": r.description} for r in rules)
    storage.write_lines(path, {"schema": "rules/1"}, rows)


def bundled_rules() -> list[DetectorRule]:
    """The rule set shipped with the package (data, not code)."""
    path = resources.files("racg_hardener").joinpath("data/detector_rules.jsonl")
    with resources.as_file(path) as real_path:
        return load_rules(str(real_path))


def detect(code: str, language: str, rules: Sequence[DetectorRule]) -> list[Finding]:
    """Apply every language-matching rule line by line; one finding per match."""
    findings: list[Finding] = []
    applicable = [r for r in rules if r.applies_to(language)]
    for lineno, line in enumerate(code.splitlines(), start=1):
        for rule in applicable:
            for _m in rule.compiled.finditer(line):
                findings.append(Finding(rule_id=rule.rule_id, cwe_id=rule.cwe_id,
                                        line=lineno, excerpt=line.strip()[:160]))
    return findings


def detect_external(code: str, language: str, command_template: str) -> list[Finding]:
    """Run an external detector command and parse its findings.

    The template is split shell-style, then ``{file}`` and ``{language}``
    placeholders are substituted per token. The command must print one
    finding per line as ``rule_id<TAB>cwe<TAB>line``; a nonzero exit or an
    unparsable line raises :class:`EvaluationError` and the case counts as
    unscored, not insecure.
    """
    import shlex

    if not command_template.strip():
        raise EvaluationError("external detector command is empty")
    with tempfile.NamedTemporaryFile("w", suffix=".src", delete=False,
                                     encoding="utf-8") as fh:
        fh.write(code)
        tmp_path = fh.name
    try:
        argv = [token.replace("{file}", tmp_path).replace("{language}", language)
                for token in shlex.split(command_template)]
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=120)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise EvaluationError(f"external detector failed to run: {exc}") from exc
        if proc.returncode != 0:
            raise EvaluationError(
                f"external detector exited {proc.returncode}: {proc.stderr.strip()[:200]}")
        findings = []
        code_lines = code.splitlines()
        for raw in proc.stdout.splitlines():
            if not raw.strip():
                continue
            parts = raw.split("\t")
            if len(parts) != 3:
                raise EvaluationError(f"unparsable detector output line: {raw!r}")
            rule_id, cwe, line_s = parts
            try:
                line_no = int(line_s)
                excerpt = code_lines[line_no - 1].strip()[:160] if 0 < line_no <= len(code_lines) else ""
                findings.append(Finding(rule_id=rule_id.strip(), cwe_id=cwe.strip(),
                                        line=line_no, excerpt=excerpt))
            except ValueError as exc:
                raise EvaluationError(f"unparsable detector output line: {raw!r}") from exc
        return findings
    finally:
        os.unlink(tmp_path)


def security_rate(per_case_findings: Sequence[tuple[str, Sequence[Finding] | None]]) -> float:
    """Percentage of scored cases with zero findings.

    A ``None`` findings list marks an unscored case, which is excluded from
    the denominator; at least one scored case is required.
    """
    scored = [(cid, f) for cid, f in per_case_findings if f is not None]
    if not scored:
        raise EvaluationError("no scored cases")
    clean = sum(1 for _cid, f in scored if len(f) == 0)
    return 100.0 * clean / len(scored)


_SIM_TOKEN_RE = re.compile(r"[A-Za-z_][A-Za-z_0-9]*|\d+(?:\.\d+)?|[^\sA-Za-z_0-9]")


def _sim_tokens(text: str) -> list[str]:
    return _SIM_TOKEN_RE.findall(text)


def _ngram_counts(tokens: list[str], n: int) -> dict[tuple[str, ...], int]:
    counts: dict[tuple[str, ...], int] = {}
    for i in range(len(tokens) - n + 1):
        gram = tuple(tokens[i : i + n])
        counts[gram] = counts.get(gram, 0) + 1
    return counts


def similarity(candidate: str, reference: str) -> float:
    """Token 4-gram similarity in [0, 100] (the ``sim-bleu-proxy`` metric).

    Geometric mean of modified n-gram precisions (n=1..4) with a brevity
    penalty. Orders with zero matches are add-one smoothed, so fully disjoint
    token streams score a small positive floor rather than zero, and an
    identical pair scores exactly 100. Not symmetric.
    """
    ref_tokens = _sim_tokens(reference)
    if not ref_tokens:
        raise EvaluationError("reference must be non-empty")
    cand_tokens = _sim_tokens(candidate)
    if not cand_tokens:
        return 0.0

    log_sum = 0.0
    for n in range(1, 5):
        cand_counts = _ngram_counts(cand_tokens, n)
        ref_counts = _ngram_counts(ref_tokens, n)
        total = sum(cand_counts.values())
        matches = sum(min(count, ref_counts.get(gram, 0))
                      for gram, count in cand_counts.items())
        if matches > 0:
            precision = matches / total
        else:
            precision = (matches + 1) / (total + 1)
        log_sum += math.log(precision)

    geo_mean = math.exp(log_sum / 4.0)
    if len(cand_tokens) >= len(ref_tokens):
        brevity = 1.0
    else:
        brevity = math.exp(1.0 - len(ref_tokens) / len(cand_tokens))
    return 100.0 * brevity * geo_mean


@dataclass(frozen=True)
class SecuredRatio:
    """Share of initially insecure cases that became secure; flagged when
    there was nothing to secure in the first place."""

    value: float
    no_insecure_before: bool = False


def secured_ratio(before: Sequence[tuple[str, bool]], after: Sequence[tuple[str, bool]],
                  ) -> SecuredRatio:
    """100 * |insecure before and secure after| / |insecure before|."""
    before_map = dict(before)
    after_map = dict(after)
    if set(before_map) != set(after_map):
        raise EvaluationError("before/after case id sets differ")
    insecure_before = [cid for cid, secure in before_map.items() if not secure]
    if not insecure_before:
        return SecuredRatio(value=0.0, no_insecure_before=True)
    fixed = sum(1 for cid in insecure_before if after_map[cid])
    return SecuredRatio(value=100.0 * fixed / len(insecure_before))


def build_report(records: Sequence, references: Mapping[str, str],
                 rules: Sequence[DetectorRule],
                 external_command: str | None = None) -> EvalReport:
    """Detect and score every record, then aggregate.

    ``references`` maps case ids to reference code; cases without one get no
    similarity. When an external detector is configured its findings merge
    with the rule engine's; an external failure marks only that case
    unscored.
    """
    if not records:
        raise EvaluationError("no records to evaluate")
    per_case: list[CaseResult] = []
    for record in records:
        findings: list[Finding] | None = detect(record.generated_code, record.language, rules)
        if external_command:
            try:
                findings.extend(detect_external(record.generated_code, record.language,
                                                external_command))
            except EvaluationError:
                findings = None
        sim = None
        reference = references.get(record.case_id)
        if reference:
            sim = similarity(record.generated_code, reference)
        per_case.append(CaseResult(
            case_id=record.case_id,
            secure=None if findings is None else len(findings) == 0,
            similarity=sim,
            findings=tuple(findings or ()),
        ))

    rate = security_rate([(c.case_id, None if c.secure is None else c.findings)
                          for c in per_case])
    sims = [c.similarity for c in per_case if c.similarity is not None]
    return EvalReport(
        total_cases=len(per_case),
        secure_cases=sum(1 for c in per_case if c.secure),
        security_rate=rate,
        mean_similarity=(sum(sims) / len(sims)) if sims else None,
        per_case=tuple(per_case),
    )
