"""Line-delimited persistence for every artifact the pipeline produces.

Each file is UTF-8 text: a schema-version header object on line 1, then one
self-describing JSON record per line. Field order is fixed at write time so
identical in-memory state always serializes to identical bytes. Vector
indexes additionally persist a little-endian float32 sidecar next to a JSON
manifest, which reloads bit-exactly.
"""

from __future__ import annotations

import json
import os
from typing import Any, Callable, Iterable

import numpy as np

from .errors import LoadError
from .models import (
    CaseResult,
    CodeExample,
    EvalReport,
    Finding,
    SecurityKnowledgeEntry,
    VulnerabilityRecord,
)
from .embedding import VectorIndex


def _dumps(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"))


def write_lines(path: str, header: dict, rows: Iterable[dict]) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_dumps(header) + "\n")
        for row in rows:
            fh.write(_dumps(row) + "\n")
    os.replace(tmp, path)


def read_lines(path: str, expected_schema: str) -> tuple[dict, list[dict]]:
    """Parse a header + rows file, checking the schema family on line 1."""
    if not os.path.exists(path):
        raise LoadError(f"{path}: no such file")
    rows: list[dict] = []
    header: dict | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.strip()
            if not text:
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise LoadError(f"{path}: line {lineno}: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise LoadError(f"{path}: line {lineno}: expected an object")
            if header is None:
                header = obj
                schema = str(obj.get("schema", ""))
                if not schema.startswith(expected_schema):
                    raise LoadError(
                        f"{path}: line 1: schema {schema!r} does not match {expected_schema!r}")
            else:
                rows.append(obj)
    if header is None:
        raise LoadError(f"{path}: line 1: missing schema header")
    return header, rows


def _row_field(path: str, lineno: int, row: dict, key: str) -> Any:
    if key not in row:
        raise LoadError(f"{path}: line {lineno}: missing field {key!r}")
    return row[key]


def _load_rows(path: str, schema: str, build: Callable[[int, dict], Any]) -> tuple[dict, list]:
    header, rows = read_lines(path, schema)
    out = []
    for offset, row in enumerate(rows):
        lineno = offset + 2  # header occupies line 1
        try:
            out.append(build(lineno, row))
        except LoadError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise LoadError(f"{path}: line {lineno}: {exc}") from exc
    return header, out


# ---------------------------------------------------------------- corpora

def save_corpus(examples: Iterable[CodeExample], path: str, kind: str = "functional") -> None:
    rows = (
        {"id": e.id, "code": e.code, "summary": e.summary,
         "language": e.language, "tainted": e.tainted}
        for e in examples
    )
    write_lines(path, {"schema": "corpus/1", "kind": kind}, rows)


def load_corpus(path: str, kind: str | None = None) -> list[CodeExample]:
    """Load a code corpus; fresh corpora carry no taint marks.

    ``kind`` (``functional`` / ``vulnerable``) is checked against the header
    when both are present.
    """
    def build(lineno: int, row: dict) -> CodeExample:
        return CodeExample(
            id=str(_row_field(path, lineno, row, "id")),
            code=str(_row_field(path, lineno, row, "code")),
            summary=str(_row_field(path, lineno, row, "summary")),
            language=str(_row_field(path, lineno, row, "language")),
            tainted=bool(row.get("tainted", False)),
        )

    header, examples = _load_rows(path, "corpus/", build)
    if kind is not None and header.get("kind") not in (None, kind):
        raise LoadError(f"{path}: line 1: corpus kind {header.get('kind')!r}, expected {kind!r}")
    seen = set()
    for e in examples:
        if e.id in seen:
            raise LoadError(f"{path}: duplicate example id {e.id!r}")
        seen.add(e.id)
    return examples


# ---------------------------------------------------- vulnerability records

def save_vulnerabilities(records: Iterable[VulnerabilityRecord], path: str) -> None:
    rows = (
        {"id": r.id, "vulnerable_code": r.vulnerable_code, "fixed_code": r.fixed_code,
         "cve_description": r.cve_description, "cwe_id": r.cwe_id, "language": r.language}
        for r in records
    )
    write_lines(path, {"schema": "vulns/1"}, rows)


def load_vulnerabilities(path: str) -> list[VulnerabilityRecord]:
    def build(lineno: int, row: dict) -> VulnerabilityRecord:
        return VulnerabilityRecord(
            id=str(_row_field(path, lineno, row, "id")),
            vulnerable_code=str(_row_field(path, lineno, row, "vulnerable_code")),
            fixed_code=str(_row_field(path, lineno, row, "fixed_code")),
            cve_description=str(row.get("cve_description", "")),
            cwe_id=str(_row_field(path, lineno, row, "cwe_id")),
            language=str(_row_field(path, lineno, row, "language")),
        )

    _, records = _load_rows(path, "vulns/", build)
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise LoadError(f"{path}: duplicate vulnerability record ids")
    return records


# ------------------------------------------------------------ vector index

def _index_sidecars(entries_path: str) -> tuple[str, str]:
    stem, _ = os.path.splitext(entries_path)
    return f"{stem}.vec", f"{stem}.manifest.json"


def save_index(index: VectorIndex, vec_path: str, manifest_path: str) -> None:
    data = np.ascontiguousarray(index.matrix, dtype="<f4").tobytes()
    with open(f"{vec_path}.tmp", "wb") as fh:
        fh.write(data)
    os.replace(f"{vec_path}.tmp", vec_path)
    manifest = {
        "schema": "index/1",
        "name": index.name,
        "dimension": index.dimension,
        "count": len(index),
        "embedder": index.embedder_id,
        "ids": list(index.ids),
    }
    with open(f"{manifest_path}.tmp", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(manifest, indent=2) + "\n")
    os.replace(f"{manifest_path}.tmp", manifest_path)


def load_index(vec_path: str, manifest_path: str) -> VectorIndex:
    if not os.path.exists(manifest_path):
        raise LoadError(f"{manifest_path}: no such file")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise LoadError(f"{manifest_path}: {exc.msg}") from exc
    if manifest.get("schema") != "index/1":
        raise LoadError(f"{manifest_path}: unknown schema {manifest.get('schema')!r}")
    dimension = int(manifest["dimension"])
    count = int(manifest["count"])
    ids = [str(i) for i in manifest["ids"]]
    if len(ids) != count:
        raise LoadError(f"{manifest_path}: id list length {len(ids)} != count {count}")
    with open(vec_path, "rb") as fh:
        raw = fh.read()
    expected = count * dimension * 4
    if len(raw) != expected:
        raise LoadError(f"{vec_path}: {len(raw)} bytes, expected {expected}")
    matrix = np.frombuffer(raw, dtype="<f4").reshape(count, dimension)
    return VectorIndex(name=str(manifest["name"]), dimension=dimension,
                       embedder_id=str(manifest["embedder"]), ids=tuple(ids), matrix=matrix)


# ---------------------------------------------------------- knowledge base

_ENTRY_FIELDS = ("id", "source_vuln_id", "cwe_id", "language", "functionality",
                 "root_cause_desc", "root_cause_code", "fix_desc", "fix_code")


def save_knowledge_entries(entries: Iterable[SecurityKnowledgeEntry], path: str,
                           embedder_id: str, index_name: str) -> None:
    header = {"schema": "kb/1", "embedder": embedder_id, "index": index_name}
    rows = ({f: getattr(e, f) for f in _ENTRY_FIELDS} for e in entries)
    write_lines(path, header, rows)


def load_knowledge_entries(path: str) -> tuple[dict, list[SecurityKnowledgeEntry]]:
    def build(lineno: int, row: dict) -> SecurityKnowledgeEntry:
        return SecurityKnowledgeEntry(
            **{f: str(_row_field(path, lineno, row, f)) for f in _ENTRY_FIELDS})

    header, entries = _load_rows(path, "kb/", build)
    ids = [e.id for e in entries]
    if len(set(ids)) != len(ids):
        raise LoadError(f"{path}: duplicate knowledge entry ids")
    return header, entries


# ------------------------------------------------------- generation records

def save_generation_records(records: Iterable, path: str) -> None:
    rows = (
        {"case_id": r.case_id, "query": r.query, "language": r.language,
         "retrieved_example_ids": list(r.retrieved_example_ids),
         "security_entry_ids": list(r.security_entry_ids),
         "rendered_prompt": r.rendered_prompt, "generated_code": r.generated_code,
         "hardened": r.hardened, "error": r.error}
        for r in records
    )
    write_lines(path, {"schema": "records/1"}, rows)


def load_generation_records(path: str) -> list:
    from .pipeline import GenerationRecord

    def build(lineno: int, row: dict) -> GenerationRecord:
        return GenerationRecord(
            case_id=str(_row_field(path, lineno, row, "case_id")),
            query=str(_row_field(path, lineno, row, "query")),
            language=str(row.get("language", "")),
            retrieved_example_ids=tuple(row.get("retrieved_example_ids", ())),
            security_entry_ids=tuple(row.get("security_entry_ids", ())),
            rendered_prompt=str(row.get("rendered_prompt", "")),
            generated_code=str(row.get("generated_code", "")),
            hardened=bool(_row_field(path, lineno, row, "hardened")),
            error=str(row.get("error", "")),
        )

    _, records = _load_rows(path, "records/", build)
    return records


# -------------------------------------------------------------- poison plan

def save_poison_plan(plan, path: str) -> None:
    header = {"schema": "plan/1", "mode": plan.mode, "seed": plan.seed,
              "resulting_corpus_size": plan.resulting_corpus_size}
    rows = ({"vuln_example_id": vid, "trigger": trig} for vid, trig in plan.injections)
    write_lines(path, header, rows)


def load_poison_plan(path: str):
    from .poisoning import PoisonPlan

    header, rows = read_lines(path, "plan/")
    injections = []
    for offset, row in enumerate(rows):
        lineno = offset + 2
        injections.append((str(_row_field(path, lineno, row, "vuln_example_id")),
                           str(_row_field(path, lineno, row, "trigger"))))
    try:
        return PoisonPlan(
            mode=str(header["mode"]),
            seed=header.get("seed"),
            injections=tuple(injections),
            resulting_corpus_size=int(header["resulting_corpus_size"]),
        )
    except (KeyError, ValueError) as exc:
        raise LoadError(f"{path}: line 1: {exc}") from exc


# -------------------------------------------------------------- eval report

def save_report(report: EvalReport, path: str) -> None:
    header = {
        "schema": "report/1",
        "total_cases": report.total_cases,
        "secure_cases": report.secure_cases,
        "security_rate": report.security_rate,
        "mean_similarity": report.mean_similarity,
        "unscored_cases": report.unscored_cases,
        "similarity_metric": "sim-bleu-proxy",
    }
    rows = (
        {"case_id": c.case_id, "secure": c.secure, "similarity": c.similarity,
         "findings": [{"rule_id": f.rule_id, "cwe_id": f.cwe_id,
                       "line": f.line, "excerpt": f.excerpt} for f in c.findings]}
        for c in report.per_case
    )
    write_lines(path, header, rows)


def load_report(path: str) -> EvalReport:
    def build(lineno: int, row: dict) -> CaseResult:
        findings = tuple(
            Finding(rule_id=str(f["rule_id"]), cwe_id=str(f["cwe_id"]),
                    line=int(f["line"]), excerpt=str(f.get("excerpt", "")))
            for f in row.get("findings", ())
        )
        secure = row.get("secure")
        similarity = row.get("similarity")
        return CaseResult(
            case_id=str(_row_field(path, lineno, row, "case_id")),
            secure=None if secure is None else bool(secure),
            similarity=None if similarity is None else float(similarity),
            findings=findings,
        )

    header, per_case = _load_rows(path, "report/", build)
    try:
        mean_similarity = header.get("mean_similarity")
        return EvalReport(
            total_cases=int(header["total_cases"]),
            secure_cases=int(header["secure_cases"]),
            security_rate=float(header["security_rate"]),
            mean_similarity=None if mean_similarity is None else float(mean_similarity),
            per_case=tuple(per_case),
        )
    except (KeyError, ValueError) as exc:
        raise LoadError(f"{path}: line 1: {exc}") from exc


# ------------------------------------------------------------ replay script

def save_replay_script(entries: dict[str, str], path: str, strict: bool = True) -> None:
    header = {"schema": "replay/1", "strict": strict}
    rows = ({"fingerprint": fp, "response": resp} for fp, resp in entries.items())
    write_lines(path, header, rows)


def load_replay_script(path: str):
    """Load a replay script; rows may key responses by fingerprint or by the
    (system_text, user_text) pair, in which case the fingerprint is computed."""
    from .gateway import ReplayScript, fingerprint

    header, rows = read_lines(path, "replay/")
    entries: dict[str, str] = {}
    for offset, row in enumerate(rows):
        lineno = offset + 2
        response = str(_row_field(path, lineno, row, "response"))
        if "fingerprint" in row:
            fp = str(row["fingerprint"])
        elif "system_text" in row and "user_text" in row:
            fp = fingerprint(str(row["system_text"]), str(row["user_text"]))
        else:
            raise LoadError(
                f"{path}: line {lineno}: need fingerprint or system_text+user_text")
        entries[fp] = response
    return ReplayScript(entries=entries, strict=bool(header.get("strict", True)))


# -------------------------------------------------------------- batch cases

def save_cases(cases: Iterable[dict], path: str) -> None:
    write_lines(path, {"schema": "cases/1"}, cases)


def load_cases(path: str) -> list[dict]:
    """Batch input: case_id, query, language, optional reference_code."""
    def build(lineno: int, row: dict) -> dict:
        case = {
            "case_id": str(_row_field(path, lineno, row, "case_id")),
            "query": str(_row_field(path, lineno, row, "query")),
            "language": str(row.get("language", "")),
        }
        if row.get("reference_code") is not None:
            case["reference_code"] = str(row["reference_code"])
        return case

    _, cases = _load_rows(path, "cases/", build)
    return cases


# ----------------------------------------------------------------- skip log

def save_skip_log(skips: Iterable, path: str) -> None:
    rows = ({"record_id": s.record_id, "error_class": s.error_class,
             "response_fingerprint": s.response_fingerprint} for s in skips)
    write_lines(path, {"schema": "skiplog/1"}, rows)
