from __future__ import annotations

import pytest

from racg_hardener.embedding import ReferenceEmbedder, build_index
from racg_hardener.kb import KnowledgeBase
from racg_hardener.models import CodeExample, SecurityKnowledgeEntry


@pytest.fixture(scope="session")
def embedder():
    return ReferenceEmbedder()


def make_entry(entry_id: str, functionality: str, cwe_id: str = "CWE-119",
               language: str = "c", source: str | None = None,
               root_cause_desc: str = "unbounded write into a fixed-size buffer",
               root_cause_code: str = "strcpy(dst, src);",
               fix_desc: str = "bound the copy to the destination size",
               fix_code: str = "strncpy(dst, src, sizeof(dst) - 1);") -> SecurityKnowledgeEntry:
    return SecurityKnowledgeEntry(
        id=entry_id,
        source_vuln_id=source or entry_id.split("#")[0],
        cwe_id=cwe_id,
        language=language,
        functionality=functionality,
        root_cause_desc=root_cause_desc,
        root_cause_code=root_cause_code,
        fix_desc=fix_desc,
        fix_code=fix_code,
    )


def make_base(entries, embedder, name="kb") -> KnowledgeBase:
    items = [(e.id, embedder.embed(e.functionality)) for e in entries]
    index = build_index(name, items, embedder.identifier, embedder.dimension)
    return KnowledgeBase(entries=tuple(entries), index=index)


def make_example(example_id: str, summary: str, code: str = "int main() { return 0; }",
                 language: str = "c", tainted: bool = False) -> CodeExample:
    return CodeExample(id=example_id, code=code, summary=summary,
                       language=language, tainted=tainted)


FUNCTIONALITIES = [
    "copy a string from a source buffer to a destination buffer",
    "allocate memory for a variable sized structure",
    "parse an integer from untrusted user input",
    "open a file and read its contents into memory",
    "format a record into a fixed size text buffer",
    "compute a hash of a password before storage",
    "generate a random session token for a user",
    "execute an external command with user supplied arguments",
    "deserialize configuration data from a byte stream",
    "iterate over a linked list and free each node",
]


@pytest.fixture()
def ten_entry_base(embedder):
    entries = [
        make_entry(f"CVE-TEST-{i:04d}#1", text,
                   cwe_id=["CWE-119", "CWE-476", "CWE-190", "CWE-22", "CWE-119",
                           "CWE-327", "CWE-338", "CWE-78", "CWE-502", "CWE-416"][i])
        for i, text in enumerate(FUNCTIONALITIES)
    ]
    return make_base(entries, embedder)
