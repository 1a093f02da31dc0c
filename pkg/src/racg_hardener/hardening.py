"""Online hardening: decompose, retrieve per sub-task, weight, filter, render.

The flow turns one code-generation query into a security-augmented prompt:
the query is decomposed into fine-grained sub-tasks, each sub-task retrieves
its closest knowledge entries, sub-tasks are re-ranked by the summed CWE
prevalence weights of what they retrieved, and only the top-k highest-risk
sub-tasks keep their knowledge in the final prompt.
"""

from __future__ import annotations

import configparser
import logging
from importlib import resources
from typing import Mapping, Sequence

from .embedding import Embedder, EmbeddingError, check_same_embedder, estimate_tokens, top_k
from .gateway import (
    Backend,
    DecompositionError,
    complete,
    parse_decomposition,
    render_decomposition_prompt,
    render_generation_prompt,
)
from .kb import KnowledgeBase
from .models import (
    CodeExample,
    HardenerConfig,
    PromptBundle,
    RankedSubTask,
    SecurityContext,
    SubTask,
    SubTaskRetrieval,
    WeightTable,
)

log = logging.getLogger(__name__)


def load_weight_table(path: str | None = None) -> WeightTable:
    """Load a CWE weight table from an INI file; None loads the bundled table."""
    parser = configparser.ConfigParser()
    if path is None:
        data = resources.files("racg_hardener").joinpath("data/cwe_weights.cfg")
        parser.read_string(data.read_text(encoding="utf-8"))
    else:
        if not parser.read(path):
            raise FileNotFoundError(f"weight table not found: {path}")
    entries = {cwe: float(value) for cwe, value in parser.items("weights")} \
        if parser.has_section("weights") else {}
    default = 0.01
    if parser.has_section("options") and parser.has_option("options", "default_weight"):
        default = parser.getfloat("options", "default_weight")
    return WeightTable(entries=entries, default_weight=default)


def default_config() -> HardenerConfig:
    return HardenerConfig(weight_table=load_weight_table())


def decompose(query: str, backend: Backend) -> list[SubTask]:
    """Split a query into ordered sub-tasks via the completion backend.

    If the response yields nothing parsable the whole query becomes a single
    sub-task, keeping the pipeline total. Transport errors propagate.
    """
    request = render_decomposition_prompt(query)
    response = complete(request, backend)
    try:
        return parse_decomposition(response)
    except DecompositionError:
        log.info("decomposition produced no sub-tasks; falling back to whole query")
        return [SubTask(index=0, description=query.strip())]


def single_subtask(query: str) -> list[SubTask]:
    """The no-decomposition mode: the whole query as one sub-task."""
    return [SubTask(index=0, description=query.strip())]


def retrieve_per_subtask(sub_tasks: Sequence[SubTask], base: KnowledgeBase,
                         embedder: Embedder, k_prime: int) -> list[SubTaskRetrieval]:
    """Retrieve the top-k' knowledge entries for every sub-task, in task order."""
    if len(base) == 0:
        raise ValueError("knowledge base is empty")
    check_same_embedder(embedder, base.index)
    retrievals = []
    for task in sub_tasks:
        try:
            vector = embedder.embed(task.description)
        except EmbeddingError as exc:
            raise EmbeddingError(f"sub-task {task.index}: {exc}") from exc
        entries = top_k(vector, base.index, k_prime)
        retrievals.append(SubTaskRetrieval(sub_task=task, entries=tuple(entries)))
    return retrievals


def weigh_and_rank(retrievals: Sequence[SubTaskRetrieval], table: WeightTable,
                   cwe_by_entry: Mapping[str, str],
                   entries_by_id: Mapping | None = None) -> list[RankedSubTask]:
    """Aggregate per-entry CWE weights into sub-task risk and sort.

    Each retrieved entry contributes the weight of its CWE (unlisted classes
    contribute the table default); a sub-task's aggregate is the plain sum in
    retrieval order. Output is sorted by weight descending, ties broken by
    ascending sub-task index.
    """
    ranked = []
    for retrieval in retrievals:
        weight = 0.0
        for entry_id, _score in retrieval.entries:
            if entry_id not in cwe_by_entry:
                raise KeyError(f"retrieved entry {entry_id!r} has no CWE mapping")
            weight += table.lookup(cwe_by_entry[entry_id])
        resolved = ()
        if entries_by_id is not None:
            resolved = tuple(entries_by_id[eid] for eid in retrieval.entry_ids)
        ranked.append(RankedSubTask(sub_task=retrieval.sub_task, retrieval=retrieval,
                                    aggregate_weight=weight, entries=resolved))
    ranked.sort(key=lambda r: (-r.aggregate_weight, r.sub_task.index))
    return ranked


def filter_top_k(ranked: Sequence[RankedSubTask], k: int) -> SecurityContext:
    """Keep the min(k, n) highest-weight sub-tasks as prompt sections."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return SecurityContext(sections=tuple(ranked[: min(k, len(ranked))]))


def assemble_prompt(bundle: PromptBundle) -> str:
    """Render the final user prompt text for a bundle. Pure."""
    return render_generation_prompt(bundle)


def harden(query: str, base: KnowledgeBase, config: HardenerConfig, backend: Backend,
           embedder: Embedder, examples: Sequence[CodeExample] = (),
           decompose_query: bool = True) -> PromptBundle:
    """Full online flow for one query; returns the bundle, rendering left to callers."""
    sub_tasks = decompose(query, backend) if decompose_query else single_subtask(query)
    retrievals = retrieve_per_subtask(sub_tasks, base, embedder, config.k_prime)
    ranked = weigh_and_rank(retrievals, config.weight_table,
                            base.cwe_by_entry_id(), base.entries_by_id())
    context = filter_top_k(ranked, config.k)
    return PromptBundle(query=query, code_examples=tuple(examples), security_context=context)


def truncate_to_budget(bundle: PromptBundle, budget_tokens: int) -> PromptBundle:
    """Drop lowest-ranked security sections until the rendered prompt fits.

    Only security sections are sacrificed; the query and code examples always
    survive, so a bundle can still exceed the budget once no sections remain.
    """
    current = bundle
    while (current.security_context.sections
           and estimate_tokens(assemble_prompt(current)) > budget_tokens):
        kept = current.security_context.sections[:-1]
        current = PromptBundle(query=current.query, code_examples=current.code_examples,
                               security_context=SecurityContext(sections=kept))
    return current
