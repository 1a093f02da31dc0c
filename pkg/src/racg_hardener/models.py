"""Shared domain types for the hardening pipeline.

Everything here is an immutable value object: construction validates, and
all behavior lives in the operation modules. Instances are safe to share
across threads.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

_CWE_RE = re.compile(r"^CWE-(\d+)$", re.IGNORECASE)

CWE_UNKNOWN = "CWE-UNKNOWN"


def normalize_cwe(raw: str) -> str:
    """Canonicalize a CWE identifier to ``CWE-<digits>`` (no leading zeros).

    ``cwe-0476`` becomes ``CWE-476``; the sentinel ``CWE-UNKNOWN`` passes
    through. Anything else (``cwe476``, ``476``, empty) is rejected so that
    weight lookups always see one spelling per weakness class.
    """
    candidate = raw.strip()
    if candidate.upper() == CWE_UNKNOWN:
        return CWE_UNKNOWN
    m = _CWE_RE.match(candidate)
    if not m:
        raise ValueError(f"malformed CWE identifier: {raw!r}")
    return f"CWE-{int(m.group(1))}"


@dataclass(frozen=True)
class VulnerabilityRecord:
    """One historical vulnerability: paired vulnerable/fixed source plus metadata."""

    id: str
    vulnerable_code: str
    fixed_code: str
    cve_description: str
    cwe_id: str
    language: str

    def __post_init__(self):
        if not self.id:
            raise ValueError("vulnerability record id must be non-empty")
        if self.vulnerable_code == self.fixed_code:
            raise ValueError(f"record {self.id}: vulnerable and fixed code are identical")
        object.__setattr__(self, "cwe_id", normalize_cwe(self.cwe_id))
        object.__setattr__(self, "language", self.language.strip().lower())


@dataclass(frozen=True)
class SecurityKnowledgeEntry:
    """One retrievable unit of security knowledge.

    The ``functionality`` text is the retrieval key; the root cause explains
    why the weakness occurs (description plus an illustrative snippet) and the
    fixing pattern shows how to avoid it. Multiple entries may originate from
    the same vulnerability.
    """

    id: str
    source_vuln_id: str
    cwe_id: str
    language: str
    functionality: str
    root_cause_desc: str
    root_cause_code: str
    fix_desc: str
    fix_code: str

    def __post_init__(self):
        if not self.id:
            raise ValueError("knowledge entry id must be non-empty")
        for name in ("functionality", "root_cause_desc", "fix_desc"):
            if not getattr(self, name).strip():
                raise ValueError(f"entry {self.id}: {name} must be non-empty")
        object.__setattr__(self, "cwe_id", normalize_cwe(self.cwe_id))
        object.__setattr__(self, "language", self.language.strip().lower())


@dataclass(frozen=True)
class SubTask:
    """One fine-grained semantic unit of a decomposed query."""

    index: int
    description: str

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("sub-task index must be >= 0")
        if not self.description.strip():
            raise ValueError("sub-task description must be non-empty")


def validate_decomposition(sub_tasks: list[SubTask] | tuple[SubTask, ...]) -> None:
    """Check that indices run 0..n-1 with no gaps."""
    indices = [t.index for t in sub_tasks]
    if indices != list(range(len(sub_tasks))):
        raise ValueError(f"sub-task indices must be 0..n-1, got {indices}")


@dataclass(frozen=True)
class CodeExample:
    """Element of a retrievable code corpus.

    ``tainted`` is evaluation bookkeeping set by poisoning attacks; retrieval
    must never read it.
    """

    id: str
    code: str
    summary: str
    language: str
    tainted: bool = False

    def __post_init__(self):
        if not self.id:
            raise ValueError("code example id must be non-empty")
        object.__setattr__(self, "language", self.language.strip().lower())


@dataclass(frozen=True)
class SubTaskRetrieval:
    """Knowledge entries initially retrieved for one sub-task, best first."""

    sub_task: SubTask
    entries: tuple[tuple[str, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple((str(i), float(s)) for i, s in self.entries))
        scores = [s for _, s in self.entries]
        if any(scores[i] < scores[i + 1] for i in range(len(scores) - 1)):
            raise ValueError("retrieval entries must be sorted by score descending")

    @property
    def entry_ids(self) -> tuple[str, ...]:
        return tuple(i for i, _ in self.entries)


@dataclass(frozen=True)
class RankedSubTask:
    """A sub-task retrieval with its aggregated risk weight.

    Carries the resolved knowledge entries alongside the scored ids so that
    prompt rendering is a pure function of the bundle.
    """

    sub_task: SubTask
    retrieval: SubTaskRetrieval
    aggregate_weight: float
    entries: tuple[SecurityKnowledgeEntry, ...] = ()

    def __post_init__(self):
        if self.aggregate_weight < 0:
            raise ValueError("aggregate weight must be >= 0")
        if self.retrieval.sub_task != self.sub_task:
            raise ValueError("retrieval does not belong to this sub-task")
        object.__setattr__(self, "entries", tuple(self.entries))
        if self.entries and tuple(e.id for e in self.entries) != self.retrieval.entry_ids:
            raise ValueError("resolved entries do not match the retrieval's entry ids")


@dataclass(frozen=True)
class SecurityContext:
    """The ordered, filtered security sections injected into a prompt.

    Sections are sorted by aggregate weight descending, ties broken by
    ascending sub-task index, so the ordering is a total order.
    """

    sections: tuple[RankedSubTask, ...]

    def __post_init__(self):
        object.__setattr__(self, "sections", tuple(self.sections))
        keys = [(-s.aggregate_weight, s.sub_task.index) for s in self.sections]
        if keys != sorted(keys):
            raise ValueError("sections must be sorted by (weight desc, index asc)")
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate (weight, index) section keys")

    @property
    def entry_ids(self) -> frozenset[str]:
        """Union of entry ids across all sections."""
        out: set[str] = set()
        for section in self.sections:
            out.update(section.retrieval.entry_ids)
        return frozenset(out)

    def __len__(self) -> int:
        return len(self.sections)


EMPTY_SECURITY_CONTEXT = SecurityContext(sections=())


@dataclass(frozen=True)
class PromptBundle:
    """Everything needed to render one generation prompt.

    With an empty security context the rendering is the plain
    retrieval-augmented prompt; with empty code examples as well it is the
    bare (non-retrieval) prompt.
    """

    query: str
    code_examples: tuple[CodeExample, ...] = ()
    security_context: SecurityContext = EMPTY_SECURITY_CONTEXT

    def __post_init__(self):
        if not self.query.strip():
            raise ValueError("query must be non-empty")
        object.__setattr__(self, "code_examples", tuple(self.code_examples))


@dataclass(frozen=True)
class WeightTable:
    """Per-CWE likelihood weights used to score sub-task risk.

    A weight estimates how often the weakness class shows up in generated
    code; unlisted classes fall back to ``default_weight`` so every retrieved
    entry still contributes.
    """

    entries: dict[str, float] = field(default_factory=dict)
    default_weight: float = 0.01

    def __post_init__(self):
        normalized = {}
        for cwe, w in self.entries.items():
            w = float(w)
            if not 0.0 <= w <= 1.0:
                raise ValueError(f"weight for {cwe} outside [0, 1]: {w}")
            normalized[normalize_cwe(cwe)] = w
        object.__setattr__(self, "entries", normalized)
        if not 0.0 <= self.default_weight <= 1.0:
            raise ValueError(f"default weight outside [0, 1]: {self.default_weight}")

    def lookup(self, cwe_id: str) -> float:
        return self.entries.get(cwe_id, self.default_weight)

    def scaled(self, factor: float) -> "WeightTable":
        """A copy with every weight (including the default) multiplied by ``factor``."""
        return WeightTable(
            entries={c: w * factor for c, w in self.entries.items()},
            default_weight=self.default_weight * factor,
        )


@dataclass(frozen=True)
class HardenerConfig:
    """Online-phase knobs: entries per sub-task (k') and sub-tasks kept (k)."""

    k_prime: int = 2
    k: int = 5
    weight_table: WeightTable = field(default_factory=WeightTable)

    def __post_init__(self):
        if self.k_prime < 1:
            raise ValueError("k_prime must be >= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")


class PoisonMode:
    SCENARIO_I = "scenario1"
    SCENARIO_II = "scenario2"


@dataclass(frozen=True)
class PoisonConfig:
    """Attack parameters: per-query injections (scenario I) or corpus proportion (scenario II)."""

    mode: str = PoisonMode.SCENARIO_I
    m: int = 5
    p_percent: float = 10.0
    cluster_seed: int = 0

    def __post_init__(self):
        if self.mode not in (PoisonMode.SCENARIO_I, PoisonMode.SCENARIO_II):
            raise ValueError(f"unknown poison mode: {self.mode}")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if not 0.0 < self.p_percent <= 100.0:
            raise ValueError("p_percent must be in (0, 100]")


@dataclass(frozen=True)
class Finding:
    """One insecure-pattern hit in a piece of code."""

    rule_id: str
    cwe_id: str
    line: int
    excerpt: str

    def __post_init__(self):
        if self.line < 1:
            raise ValueError("finding line numbers are 1-based")
        object.__setattr__(self, "cwe_id", normalize_cwe(self.cwe_id))


@dataclass(frozen=True)
class CaseResult:
    """Per-case evaluation detail inside an EvalReport.

    ``secure`` is None when the case could not be scored (external detector
    failure); unscored cases are excluded from the security-rate denominator.
    """

    case_id: str
    secure: bool | None
    similarity: float | None
    findings: tuple[Finding, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "findings", tuple(self.findings))


@dataclass(frozen=True)
class EvalReport:
    """Aggregated security and similarity metrics over a batch of cases."""

    total_cases: int
    secure_cases: int
    security_rate: float
    mean_similarity: float | None
    per_case: tuple[CaseResult, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "per_case", tuple(self.per_case))
        if not 0.0 <= self.security_rate <= 100.0:
            raise ValueError("security rate must be in [0, 100]")
        if self.mean_similarity is not None and not 0.0 <= self.mean_similarity <= 100.0:
            raise ValueError("mean similarity must be in [0, 100]")

    @property
    def unscored_cases(self) -> int:
        return sum(1 for c in self.per_case if c.secure is None)
