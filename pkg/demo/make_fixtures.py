#!/usr/bin/env python3
"""Generate a small offline demo world: corpora, cases, and a replay script.

The replay script contains canned model responses keyed by request
fingerprint, so every CLI command in the README runs without network access.
Request texts (and therefore fingerprints) are computed with the installed
package itself; regenerate the fixtures after changing prompt templates.

Usage: python demo/make_fixtures.py [output_dir]   (default: demo/data)
"""

from __future__ import annotations

import os
import sys

from racg_hardener import storage
from racg_hardener.diffs import compute_diff
from racg_hardener.embedding import ATTACKER_EMBED_SEED, ReferenceEmbedder
from racg_hardener.gateway import (
    CompletionRequest,
    ReplayBackend,
    ReplayScript,
    generation_system_text,
    parse_decomposition,
    render_decomposition_prompt,
    render_extraction_prompt,
)
from racg_hardener.hardening import (
    assemble_prompt,
    filter_top_k,
    load_weight_table,
    retrieve_per_subtask,
    truncate_to_budget,
    weigh_and_rank,
)
from racg_hardener.kb import build_knowledge_base, save_base
from racg_hardener.models import CodeExample, HardenerConfig, PromptBundle, VulnerabilityRecord
from racg_hardener.pipeline import build_code_index, retrieve_examples
from racg_hardener.poisoning import poison_scenario_1, poison_scenario_2

VULNERABILITIES = [
    ("DEMO-0001", "CWE-119",
     "copy a caller supplied string into a fixed destination buffer",
     "char buf[64];\nstrcpy(buf, input);",
     "char buf[64];\nstrncpy(buf, input, sizeof(buf) - 1);\nbuf[63] = '\\0';"),
    ("DEMO-0002", "CWE-119",
     "format a record of name and age into a text buffer",
     'sprintf(out, "%s is %d", name, age);',
     'snprintf(out, cap, "%s is %d", name, age);'),
    ("DEMO-0003", "CWE-476",
     "allocate memory for a node and link it into a list",
     "node *n = malloc(sizeof *n);\nn->next = head;",
     "node *n = malloc(sizeof *n);\nif (!n) return NULL;\nn->next = head;"),
    ("DEMO-0004", "CWE-338",
     "create a numeric session token for a logged in user",
     "int token = rand();",
     "uint64_t token;\ngetrandom(&token, sizeof token, 0);"),
]

ENVELOPE = """===ENTRY===
FUNCTIONALITY: {functionality}
ROOT_CAUSE_DESC: the vulnerable version performs the operation without the guard the fix adds
ROOT_CAUSE_CODE:
```
{bad}
```
FIX_DESC: perform the operation with the bound or check shown below
FIX_CODE:
```
{good}
```
"""

FUNCTIONAL = [
    ("demo-func-00", "sort an array of integers in ascending order",
     "void sorti(int *v, size_t n) { qsort(v, n, sizeof *v, cmp_int); }"),
    ("demo-func-01", "reverse a string in place",
     "void rev(char *s) { for (size_t i = 0, j = strlen(s); i < --j; i++) swap(s+i, s+j); }"),
    ("demo-func-02", "count lines in a text file",
     "size_t lines(FILE *f) { size_t n = 0; int c; while ((c = getc(f)) != EOF) n += c == '\\n'; return n; }"),
    ("demo-func-03", "compute the average of an integer array",
     "double avg(const int *v, size_t n) { double s = 0; for (size_t i = 0; i < n; i++) s += v[i]; return s / n; }"),
    ("demo-func-04", "check whether a string is a palindrome",
     "bool pal(const char *s) { size_t i = 0, j = strlen(s); while (i < j) if (s[i++] != s[--j]) return false; return true; }"),
    ("demo-func-05", "find the maximum element of an array",
     "int maxi(const int *v, size_t n) { int m = v[0]; for (size_t i = 1; i < n; i++) if (v[i] > m) m = v[i]; return m; }"),
    ("demo-func-06", "trim trailing whitespace from a string",
     "void rtrim(char *s) { size_t n = strlen(s); while (n && isspace(s[n-1])) s[--n] = '\\0'; }"),
    ("demo-func-07", "swap two integers through pointers",
     "void swap(int *a, int *b) { int t = *a; *a = *b; *b = t; }"),
]

VULNERABLE = [
    ("demo-vuln-copy", "copy user supplied text into a fixed destination buffer",
     "void cp(char *d, const char *s) {\n    strcpy(d, s);\n}\n"),
    ("demo-vuln-format", "format a user record struct into a text buffer printing every field",
     'void show(struct rec *r, char *out) {\n    sprintf(out, "%s %d", r->name, r->age);\n}\n'),
    ("demo-vuln-token", "create a session identifier for a logged in user",
     "int token(void) {\n    return rand();\n}\n"),
]

CASES = [
    {
        "case_id": "demo-copy",
        "query": "write a C function that copies user supplied text into a fixed destination buffer",
        "language": "c",
        "decomposition": "1. declare the destination buffer\n2. copy the user text into the buffer\n3. terminate the buffer and return it",
        "insecure_code": "char *dup_text(const char *s) {\n    static char buf[64];\n    strcpy(buf, s);\n    return buf;\n}\n",
        "secure_code": "char *dup_text(const char *s) {\n    static char buf[64];\n    strncpy(buf, s, sizeof(buf) - 1);\n    buf[sizeof(buf) - 1] = '\\0';\n    return buf;\n}\n",
    },
    {
        "case_id": "demo-format",
        "query": "write a C function that formats a user record struct into a text buffer and prints every field",
        "language": "c",
        "decomposition": "1. format the record fields into the buffer\n2. print the formatted buffer",
        "insecure_code": 'void show(struct rec *r) {\n    char out[64];\n    sprintf(out, "%s %d", r->name, r->age);\n    puts(out);\n}\n',
        "secure_code": 'void show(struct rec *r) {\n    char out[64];\n    snprintf(out, sizeof(out), "%s %d", r->name, r->age);\n    puts(out);\n}\n',
    },
]


def records():
    return [VulnerabilityRecord(
        id=rid,
        vulnerable_code=f"void demo(void) {{\n{bad}\n}}\n",
        fixed_code=f"void demo(void) {{\n{good}\n}}\n",
        cve_description=f"weakness observed while trying to {functionality}",
        cwe_id=cwe, language="c")
        for rid, cwe, functionality, bad, good in VULNERABILITIES]


def generation_entries(base, corpus, config, embedder):
    entries = {}
    index = build_code_index(corpus, embedder)
    for case in CASES:
        query = case["query"]
        entries[render_decomposition_prompt(query).fingerprint] = case["decomposition"]
        examples = retrieve_examples(query, index, corpus, 1, embedder)

        def fp(prompt):
            return CompletionRequest(system_text=generation_system_text(),
                                     user_text=prompt).fingerprint

        plain = assemble_prompt(PromptBundle(query=query, code_examples=tuple(examples)))
        entries[fp(plain)] = f"```\n{case['insecure_code']}```"

        sub_tasks = parse_decomposition(case["decomposition"])
        retrievals = retrieve_per_subtask(sub_tasks, base, embedder, config.k_prime)
        ranked = weigh_and_rank(retrievals, config.weight_table,
                                base.cwe_by_entry_id(), base.entries_by_id())
        bundle = truncate_to_budget(PromptBundle(
            query=query, code_examples=tuple(examples),
            security_context=filter_top_k(ranked, config.k)), 8192)
        entries[fp(assemble_prompt(bundle))] = f"```\n{case['secure_code']}```"

        # the harden command retrieves no examples by default
        bare = truncate_to_budget(PromptBundle(
            query=query, security_context=filter_top_k(ranked, config.k)), 8192)
        entries[fp(assemble_prompt(bare))] = f"```\n{case['secure_code']}```"
    return entries


def main(out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    embedder = ReferenceEmbedder()

    vulns = records()
    storage.save_vulnerabilities(vulns, os.path.join(out_dir, "vulns.jsonl"))

    script = {}
    for record, (_rid, _cwe, functionality, bad, good) in zip(vulns, VULNERABILITIES):
        request = render_extraction_prompt(
            record, compute_diff(record.vulnerable_code, record.fixed_code))
        script[request.fingerprint] = ENVELOPE.format(
            functionality=functionality, bad=bad, good=good)

    backend = ReplayBackend(ReplayScript(entries=dict(script), strict=True))
    base = build_knowledge_base(vulns, backend, embedder).base
    save_base(base, os.path.join(out_dir, "kb.jsonl"))

    functional = [CodeExample(id=i, code=c, summary=s, language="c")
                  for i, s, c in FUNCTIONAL]
    vulnerable = [CodeExample(id=i, code=c, summary=s, language="c")
                  for i, s, c in VULNERABLE]
    storage.save_corpus(functional, os.path.join(out_dir, "functional.jsonl"),
                        kind="functional")
    storage.save_corpus(vulnerable, os.path.join(out_dir, "vulnerable.jsonl"),
                        kind="vulnerable")
    storage.save_cases(
        [{"case_id": c["case_id"], "query": c["query"], "language": c["language"],
          "reference_code": c["secure_code"]} for c in CASES],
        os.path.join(out_dir, "cases.jsonl"))

    config = HardenerConfig(weight_table=load_weight_table())
    script.update(generation_entries(base, functional, config, embedder))

    attacker = ReferenceEmbedder(seed=ATTACKER_EMBED_SEED)
    queries = [(c["case_id"], c["query"]) for c in CASES]
    poisoned1, _ = poison_scenario_1(queries, functional, vulnerable, 5, attacker)
    script.update(generation_entries(base, poisoned1, config, embedder))
    poisoned2, _ = poison_scenario_2(functional, vulnerable, 10.0, 0, attacker)
    script.update(generation_entries(base, poisoned2, config, embedder))

    storage.save_replay_script(script, os.path.join(out_dir, "replay.jsonl"),
                               strict=True)
    print(f"demo fixtures written to {out_dir}/")
    print(f"  knowledge base entries: {len(base)}")
    print(f"  functional corpus: {len(functional)}, vulnerable corpus: {len(vulnerable)}")
    print(f"  cases: {len(CASES)}, replay entries: {len(script)}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else os.path.join("demo", "data"))
