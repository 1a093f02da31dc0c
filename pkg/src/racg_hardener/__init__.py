"""Security hardening for retrieval-augmented code generation.

Builds a security knowledge base from historical vulnerabilities, retrieves
risk-weighted knowledge per decomposed query sub-task, assembles
security-augmented prompts, simulates knowledge-base poisoning attacks, and
evaluates generated-code security.
"""

from .models import (
    CaseResult,
    CodeExample,
    EvalReport,
    Finding,
    HardenerConfig,
    PoisonConfig,
    PromptBundle,
    RankedSubTask,
    SecurityContext,
    SecurityKnowledgeEntry,
    SubTask,
    SubTaskRetrieval,
    VulnerabilityRecord,
    WeightTable,
)

__version__ = "0.1.0"

__all__ = [
    "CaseResult",
    "CodeExample",
    "EvalReport",
    "Finding",
    "HardenerConfig",
    "PoisonConfig",
    "PromptBundle",
    "RankedSubTask",
    "SecurityContext",
    "SecurityKnowledgeEntry",
    "SubTask",
    "SubTaskRetrieval",
    "VulnerabilityRecord",
    "WeightTable",
    "__version__",
]
