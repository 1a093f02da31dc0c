"""Uniform interface to text-completion backends, plus all prompt templates.

Two backends implement ``complete(request) -> str``: an HTTP chat-completion
client for live runs and a replay backend that serves canned responses keyed
by a stable request fingerprint. Prompt wording lives in versioned text
assets under ``templates/``; rendering substitutes named placeholders only,
so fixtures keyed by fingerprint survive anything short of an intentional
template re-version.
"""

from __future__ import annotations

import hashlib
import os
import re
import time
from dataclasses import dataclass, field
from importlib import resources
from typing import Protocol

from .errors import ConfigurationError, TransportError
from .models import PromptBundle, SubTask, VulnerabilityRecord, validate_decomposition

TEMPLATE_VERSION = "v1"


class ReplayMissError(ConfigurationError):
    """Strict replay had no entry for the request fingerprint."""


class DecompositionError(Exception):
    """The decomposition response contained no parsable sub-tasks."""


@dataclass(frozen=True)
class CompletionRequest:
    """One chat-completion call: a system text, a user text, and sampling caps."""

    system_text: str
    user_text: str
    temperature: float = 0.0
    max_new_tokens: int = 4096

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.system_text, self.user_text)


def fingerprint(system_text: str, user_text: str) -> str:
    """Stable hex fingerprint of a (system, user) text pair.

    SHA-256 over the UTF-8 texts joined by a NUL byte; equal pairs produce
    equal fingerprints on every platform and run.
    """
    h = hashlib.sha256()
    h.update(system_text.encode("utf-8"))
    h.update(b"\x00")
    h.update(user_text.encode("utf-8"))
    return h.hexdigest()


class Backend(Protocol):
    def complete(self, request: CompletionRequest) -> str: ...


def complete(request: CompletionRequest, backend: Backend) -> str:
    """Run one completion against whichever backend is configured."""
    return backend.complete(request)


@dataclass
class ReplayScript:
    """Canned responses keyed by request fingerprint.

    Strict scripts fail on an unknown fingerprint; lenient ones return an
    empty response and record the miss for post-run inspection.
    """

    entries: dict[str, str] = field(default_factory=dict)
    strict: bool = True
    misses: list[str] = field(default_factory=list)

    def lookup(self, fp: str) -> str:
        if fp in self.entries:
            return self.entries[fp]
        if self.strict:
            raise ReplayMissError(f"unmatched fingerprint {fp}")
        self.misses.append(fp)
        return ""


class ReplayBackend:
    """Deterministic backend that answers from a :class:`ReplayScript`."""

    def __init__(self, script: ReplayScript):
        self.script = script

    def complete(self, request: CompletionRequest) -> str:
        return self.script.lookup(request.fingerprint)


class HttpChatBackend:
    """Chat-completion client for an OpenAI-style JSON endpoint.

    Sends ``{model, messages, temperature, max_tokens}``; endpoint and key
    come from RACG_LLM_URL / RACG_LLM_KEY unless passed explicitly. Transient
    failures are retried with exponential backoff; 4xx responses are not.
    """

    def __init__(self, model: str, url: str | None = None, api_key: str | None = None,
                 max_attempts: int = 3, backoff_s: float = 1.0, timeout_s: float = 120.0):
        self.model = model
        self.url = url or os.environ.get("RACG_LLM_URL", "")
        self.api_key = api_key if api_key is not None else os.environ.get("RACG_LLM_KEY", "")
        self.max_attempts = max_attempts
        self.backoff_s = backoff_s
        self.timeout_s = timeout_s
        if not self.url:
            raise ConfigurationError("no completion endpoint configured (RACG_LLM_URL)")

    def complete(self, request: CompletionRequest) -> str:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_new_tokens,
        }
        last_error = None
        for attempt in range(1, self.max_attempts + 1):
            try:
                resp = requests.post(self.url, json=body, headers=headers, timeout=self.timeout_s)
            except requests.RequestException as exc:
                last_error = exc
            else:
                if 400 <= resp.status_code < 500:
                    raise ConfigurationError(
                        f"completion endpoint rejected request: {resp.status_code} {resp.text[:200]}")
                if resp.status_code == 200:
                    return resp.json()["choices"][0]["message"]["content"]
                last_error = RuntimeError(f"status {resp.status_code}")
            if attempt < self.max_attempts:
                time.sleep(self.backoff_s * (2 ** (attempt - 1)))
        raise TransportError(f"completion request failed: {last_error}", attempts=self.max_attempts)


def load_template(name: str) -> str:
    path = resources.files("racg_hardener").joinpath(f"templates/{name}_{TEMPLATE_VERSION}.txt")
    return path.read_text(encoding="utf-8")


def render_template(template: str, values: dict[str, str]) -> str:
    # Plain placeholder substitution; literal braces elsewhere stay intact.
    out = template
    for key, value in values.items():
        out = out.replace("{" + key + "}", value)
    return out


def render_extraction_prompt(record: VulnerabilityRecord, diff_text: str) -> CompletionRequest:
    """Prompt that asks the model to distill knowledge entries from one fix.

    Embeds the vulnerability description, the weakness class, and the
    full-context diff in labeled blocks, and pins the response to the
    ``===ENTRY===`` envelope format the extraction parser expects.
    """
    user = render_template(load_template("extraction_user"), {
        "cve_description": record.cve_description,
        "cwe_id": record.cwe_id,
        "diff": diff_text,
    })
    return CompletionRequest(system_text=load_template("extraction_system"), user_text=user)


def render_decomposition_prompt(query: str) -> CompletionRequest:
    """Prompt that asks for a numbered list of fine-grained sub-tasks."""
    if not query.strip():
        raise ValueError("query must be non-empty")
    user = render_template(load_template("decomposition_user"), {"query": query})
    return CompletionRequest(system_text=load_template("decomposition_system"), user_text=user)


def generation_system_text() -> str:
    return load_template("generation_system")


def render_generation_prompt(bundle: PromptBundle) -> str:
    """Render the user text for one generation call.

    Order: the task query, then one block per retrieved code example (the
    whole block is omitted when there are none), then one security section
    per kept sub-task, highest aggregate weight first. Knowledge entries
    retrieved under several kept sub-tasks are repeated in each section.
    """
    examples_block = ""
    if bundle.code_examples:
        item_tpl = load_template("generation_example")
        items = [
            render_template(item_tpl, {
                "ordinal": str(i + 1),
                "language": ex.language or "code",
                "code": ex.code,
            })
            for i, ex in enumerate(bundle.code_examples)
        ]
        examples_block = "\nREFERENCE EXAMPLES:\n" + "\n".join(items)

    security_block = ""
    if bundle.security_context.sections:
        section_tpl = load_template("generation_section")
        knowledge_tpl = load_template("generation_knowledge")
        sections = []
        for section in bundle.security_context.sections:
            if not section.entries and section.retrieval.entries:
                raise ValueError(
                    f"section for sub-task {section.sub_task.index} has no resolved entries")
            items = []
            for entry in section.entries:
                items.append(render_template(knowledge_tpl, {
                    "root_cause_desc": entry.root_cause_desc,
                    "root_cause_code": entry.root_cause_code,
                    "fix_desc": entry.fix_desc,
                    "fix_code": entry.fix_code,
                }))
            sections.append(render_template(section_tpl, {
                "description": section.sub_task.description,
                "knowledge_items": "".join(items),
            }))
        security_block = (
            "\nSECURITY GUIDANCE:\n"
            "Apply the guidance below when implementing the matching steps.\n"
            + "\n".join(sections)
        )

    return render_template(load_template("generation_user"), {
        "query": bundle.query,
        "examples_block": examples_block,
        "security_block": security_block,
    })


_LIST_MARKER_RE = re.compile(r"^(?:\d+[.)]|[-*])\s*(.*)$")


def parse_decomposition(response: str) -> list[SubTask]:
    """Split a decomposition response into ordered sub-tasks.

    Strips numbered/bulleted list markers and whitespace, drops empty lines,
    and assigns indices 0..n-1. A response with no parsable sub-task raises
    :class:`DecompositionError`; callers fall back to treating the whole
    query as one sub-task.
    """
    tasks: list[SubTask] = []
    for raw_line in response.splitlines():
        line = raw_line.strip()
        m = _LIST_MARKER_RE.match(line)
        if m:
            line = m.group(1).strip()
        if line:
            tasks.append(SubTask(index=len(tasks), description=line))
    if not tasks:
        raise DecompositionError("no parsable sub-tasks in decomposition response")
    validate_decomposition(tasks)
    return tasks
