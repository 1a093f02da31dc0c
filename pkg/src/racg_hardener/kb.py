"""Offline knowledge-base construction.

For every vulnerability record: diff the vulnerable and fixed code, ask the
completion backend to distill (functionality, root cause, fixing pattern)
entries, parse the envelope response, embed each entry's functionality text,
and assemble the searchable base. Records whose responses cannot be parsed
are skipped and logged; one bad record must never sink a large build.
"""

from __future__ import annotations

import hashlib
import logging
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

from .diffs import compute_diff
from .embedding import Embedder, VectorIndex, build_index
from .errors import LoadError
from .gateway import Backend, complete, render_extraction_prompt
from .models import SecurityKnowledgeEntry, VulnerabilityRecord
from . import storage

log = logging.getLogger(__name__)

ENTRY_DELIMITER = "===ENTRY==="

_TEXT_FIELDS = ("FUNCTIONALITY", "ROOT_CAUSE_DESC", "FIX_DESC")
_CODE_FIELDS = ("ROOT_CAUSE_CODE", "FIX_CODE")
_LABEL_RE = re.compile(
    r"^(FUNCTIONALITY|ROOT_CAUSE_DESC|ROOT_CAUSE_CODE|FIX_DESC|FIX_CODE):\s*(.*)$")


class ExtractionError(Exception):
    """The extraction response did not follow the envelope contract."""

    def __init__(self, message: str, raw_response: str = ""):
        super().__init__(message)
        self.raw_response = raw_response


class BuildError(Exception):
    pass


@dataclass(frozen=True)
class KnowledgeBase:
    """Security knowledge entries plus the vector index over their functionality texts."""

    entries: tuple[SecurityKnowledgeEntry, ...]
    index: VectorIndex

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("knowledge entry ids must be unique")
        if tuple(ids) != self.index.ids:
            raise ValueError("index ids do not match entry ids")

    @property
    def index_ref(self) -> str:
        return self.index.name

    def __len__(self) -> int:
        return len(self.entries)

    def entries_by_id(self) -> dict[str, SecurityKnowledgeEntry]:
        return {e.id: e for e in self.entries}

    def cwe_by_entry_id(self) -> dict[str, str]:
        return {e.id: e.cwe_id for e in self.entries}


@dataclass(frozen=True)
class SkipRecord:
    record_id: str
    error_class: str
    response_fingerprint: str


@dataclass(frozen=True)
class BuildResult:
    base: KnowledgeBase
    skips: tuple[SkipRecord, ...]


def parse_extraction_response(response: str) -> list[dict[str, str]]:
    """Parse ``===ENTRY===`` envelopes into field dicts.

    Text fields take the rest of the label line plus continuation lines up to
    the next label or fence; code fields take the fenced block after the
    label. Every envelope must provide non-empty FUNCTIONALITY,
    ROOT_CAUSE_DESC and FIX_DESC.
    """
    blocks: list[list[str]] = []
    current: list[str] | None = None
    for line in response.splitlines():
        if line.strip() == ENTRY_DELIMITER:
            if current is not None:
                blocks.append(current)
            current = []
        elif current is not None:
            current.append(line)
    if current is not None:
        blocks.append(current)
    if not blocks:
        raise ExtractionError("no entry envelopes in response", raw_response=response)
    return [_parse_block(block, response) for block in blocks]


def _parse_block(lines: list[str], raw: str) -> dict[str, str]:
    fields = {name: "" for name in _TEXT_FIELDS + _CODE_FIELDS}
    i = 0
    while i < len(lines):
        m = _LABEL_RE.match(lines[i].strip())
        if not m:
            i += 1
            continue
        name, rest = m.group(1), m.group(2).strip()
        if name in _TEXT_FIELDS:
            parts = [rest] if rest else []
            i += 1
            while i < len(lines):
                stripped = lines[i].strip()
                if _LABEL_RE.match(stripped) or stripped.startswith("```"):
                    break
                if stripped:
                    parts.append(stripped)
                i += 1
            fields[name] = "\n".join(parts).strip()
        else:
            i += 1
            while i < len(lines) and not lines[i].strip().startswith("```"):
                if _LABEL_RE.match(lines[i].strip()):
                    break
                i += 1
            if i < len(lines) and lines[i].strip().startswith("```"):
                i += 1
                code: list[str] = []
                while i < len(lines) and lines[i].strip() != "```":
                    code.append(lines[i])
                    i += 1
                if i >= len(lines):
                    raise ExtractionError(f"unclosed code fence in {name}", raw_response=raw)
                i += 1
                fields[name] = "\n".join(code)
    for name in _TEXT_FIELDS:
        if not fields[name]:
            raise ExtractionError(f"envelope missing {name}", raw_response=raw)
    return fields


def extract_entries(record: VulnerabilityRecord, backend: Backend) -> list[SecurityKnowledgeEntry]:
    """Distill knowledge entries from one vulnerability via the backend.

    Entry ids are ``<record id>#<ordinal>`` with ordinals starting at 1, so a
    record with several root causes yields several entries sharing one
    source_vuln_id.
    """
    diff_text = compute_diff(record.vulnerable_code, record.fixed_code)
    request = render_extraction_prompt(record, diff_text)
    response = complete(request, backend)
    blocks = parse_extraction_response(response)
    entries = []
    for ordinal, block in enumerate(blocks, start=1):
        try:
            entries.append(SecurityKnowledgeEntry(
                id=f"{record.id}#{ordinal}",
                source_vuln_id=record.id,
                cwe_id=record.cwe_id,
                language=record.language,
                functionality=block["FUNCTIONALITY"],
                root_cause_desc=block["ROOT_CAUSE_DESC"],
                root_cause_code=block["ROOT_CAUSE_CODE"],
                fix_desc=block["FIX_DESC"],
                fix_code=block["FIX_CODE"],
            ))
        except ValueError as exc:
            raise ExtractionError(str(exc), raw_response=response) from exc
    return entries


def build_knowledge_base(records: Sequence[VulnerabilityRecord], backend: Backend,
                         embedder: Embedder, index_name: str = "kb",
                         include: Callable[[VulnerabilityRecord], bool] | None = None,
                         ) -> BuildResult:
    """Extract, embed, and assemble the base from a record set.

    ``include`` is an optional leakage/benchmark filter applied before
    extraction. Records that fail extraction are skipped (with a skip record
    naming the record, the error class, and a fingerprint of the bad
    response); a build where every record fails raises :class:`BuildError`.
    """
    if not records:
        raise BuildError("no vulnerability records to build from")
    entries: list[SecurityKnowledgeEntry] = []
    skips: list[SkipRecord] = []
    for record in records:
        if include is not None and not include(record):
            continue
        try:
            entries.extend(extract_entries(record, backend))
        except ExtractionError as exc:
            fp = hashlib.sha256(exc.raw_response.encode("utf-8")).hexdigest()[:16]
            skips.append(SkipRecord(record.id, type(exc).__name__, fp))
            log.warning("skipping %s: %s", record.id, exc)
    if not entries:
        raise BuildError("every extraction failed; nothing to build")
    items = [(e.id, embedder.embed(e.functionality)) for e in entries]
    index = build_index(index_name, items, embedder.identifier, embedder.dimension)
    return BuildResult(base=KnowledgeBase(entries=tuple(entries), index=index),
                       skips=tuple(skips))


def save_base(base: KnowledgeBase, path: str) -> None:
    """Persist entries at ``path`` plus the vector sidecar and manifest next to it."""
    storage.save_knowledge_entries(base.entries, path,
                                   embedder_id=base.index.embedder_id,
                                   index_name=base.index.name)
    vec_path, manifest_path = storage._index_sidecars(path)
    storage.save_index(base.index, vec_path, manifest_path)


def load_base(path: str) -> KnowledgeBase:
    header, entries = storage.load_knowledge_entries(path)
    vec_path, manifest_path = storage._index_sidecars(path)
    index = storage.load_index(vec_path, manifest_path)
    if header.get("embedder") not in (None, index.embedder_id):
        raise LoadError(
            f"{path}: header embedder {header.get('embedder')!r} "
            f"does not match index embedder {index.embedder_id!r}")
    return KnowledgeBase(entries=tuple(entries), index=index)


def load_corpus(path: str, kind: str | None = None):
    return storage.load_corpus(path, kind)


def save_corpus(examples: Iterable, path: str, kind: str = "functional") -> None:
    storage.save_corpus(examples, path, kind)
