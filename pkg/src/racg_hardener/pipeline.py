"""End-to-end retrieval-augmented generation with optional hardening.

One ``generate`` call covers a single case: retrieve code examples from the
functional corpus, optionally run the hardener against the knowledge base,
render the prompt, call the backend, and capture full provenance (which
examples and knowledge entries went in, the exact prompt, the raw code out).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

from .embedding import Embedder, VectorIndex, build_index, check_same_embedder, top_k
from .errors import TransportError
from .gateway import Backend, CompletionRequest, complete, generation_system_text
from .hardening import assemble_prompt, harden, truncate_to_budget
from .kb import KnowledgeBase
from .models import CodeExample, HardenerConfig, PromptBundle

_FENCE_RE = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)

DEFAULT_CONTEXT_BUDGET = 8192


@dataclass(frozen=True)
class GenerationRecord:
    """Provenance for one generated case."""

    case_id: str
    query: str
    language: str
    retrieved_example_ids: tuple[str, ...]
    security_entry_ids: tuple[str, ...]
    rendered_prompt: str
    generated_code: str
    hardened: bool
    error: str = ""

    def __post_init__(self):
        object.__setattr__(self, "retrieved_example_ids", tuple(self.retrieved_example_ids))
        object.__setattr__(self, "security_entry_ids", tuple(self.security_entry_ids))
        if not self.hardened and self.security_entry_ids:
            raise ValueError("unhardened record cannot carry security entry ids")


def build_code_index(corpus: Sequence[CodeExample], embedder: Embedder,
                     name: str = "code") -> VectorIndex:
    """Embed every example's summary; index order follows corpus order."""
    if not corpus:
        raise ValueError("corpus is empty")
    items = []
    for example in corpus:
        try:
            items.append((example.id, embedder.embed(example.summary)))
        except Exception as exc:
            raise type(exc)(f"example {example.id}: {exc}") from exc
    return build_index(name, items, embedder.identifier, embedder.dimension)


def retrieve_examples(query: str, index: VectorIndex, corpus: Sequence[CodeExample],
                      n: int, embedder: Embedder) -> list[CodeExample]:
    """Top-n corpus examples by summary similarity; n=0 means no retrieval."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return []
    check_same_embedder(embedder, index)
    by_id = {e.id: e for e in corpus}
    hits = top_k(embedder.embed(query), index, n)
    return [by_id[item_id] for item_id, _ in hits]


def extract_code_block(response: str) -> str:
    """First fenced code block if present, otherwise the whole response."""
    m = _FENCE_RE.search(response)
    if m:
        return m.group(1)
    return response


def _ordered_entry_ids(bundle: PromptBundle) -> tuple[str, ...]:
    seen: dict[str, None] = {}
    for section in bundle.security_context.sections:
        for entry_id in section.retrieval.entry_ids:
            seen.setdefault(entry_id, None)
    return tuple(seen)


def generate(case_id: str, query: str, base: KnowledgeBase | None, config: HardenerConfig,
             backend: Backend, embedder: Embedder, code_index: VectorIndex | None,
             corpus: Sequence[CodeExample] = (), n_examples: int = 1,
             harden_flag: bool = False, language: str = "",
             temperature: float = 0.0, max_new_tokens: int = 4096,
             context_budget: int = DEFAULT_CONTEXT_BUDGET,
             decompose_query: bool = True) -> GenerationRecord:
    """Run one case end to end and record its provenance.

    Without hardening the knowledge base is never touched. Transport failures
    are captured on the record (empty code, error mark) rather than aborting
    a batch; configuration errors still propagate.
    """
    examples = []
    if code_index is not None and n_examples > 0:
        examples = retrieve_examples(query, code_index, corpus, n_examples, embedder)

    if harden_flag:
        if base is None:
            raise ValueError("hardened generation requires a knowledge base")
        bundle = harden(query, base, config, backend, embedder, examples,
                        decompose_query=decompose_query)
        bundle = truncate_to_budget(bundle, context_budget)
    else:
        bundle = PromptBundle(query=query, code_examples=tuple(examples))

    prompt = assemble_prompt(bundle)
    request = CompletionRequest(system_text=generation_system_text(), user_text=prompt,
                                temperature=temperature, max_new_tokens=max_new_tokens)
    error = ""
    try:
        response = complete(request, backend)
        code = extract_code_block(response)
    except TransportError as exc:
        response, code = "", ""
        error = f"generation failed after {exc.attempts} attempts: {exc}"

    return GenerationRecord(
        case_id=case_id,
        query=query,
        language=language,
        retrieved_example_ids=tuple(e.id for e in examples),
        security_entry_ids=_ordered_entry_ids(bundle) if harden_flag else (),
        rendered_prompt=prompt,
        generated_code=code,
        hardened=harden_flag,
        error=error,
    )
