"""Command-line surface for the hardening pipeline.

Commands: ``build-kb`` (offline knowledge-base construction), ``harden``
(single-query prompt assembly), ``run`` (batch generation over the three
scenarios), ``evaluate`` (security/similarity report plus figures), and
``poison`` (standalone attack-plan generation). Flags override config-file
values, which override built-in defaults. Exit codes: 0 success, 1 pipeline
failure, 2 usage or IO error.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from . import figures as figures_mod
from . import kb as kb_mod
from . import storage
from .embedding import ATTACKER_EMBED_SEED, ReferenceEmbedder
from .errors import ConfigurationError, LoadError, TransportError
from .evaluation import (
    EvaluationError,
    build_report,
    bundled_rules,
    load_rules,
    secured_ratio,
)
from .gateway import HttpChatBackend, ReplayBackend
from .hardening import assemble_prompt, harden, load_weight_table, truncate_to_budget
from .kb import BuildError
from .models import HardenerConfig, PoisonConfig, PoisonMode
from .pipeline import DEFAULT_CONTEXT_BUDGET, build_code_index, generate
from .poisoning import poison_scenario_1, poison_scenario_2

log = logging.getLogger("racg_hardener")

EXIT_OK = 0
EXIT_PIPELINE = 1
EXIT_USAGE = 2

DEFAULTS = {
    "k_prime": 2,
    "k": 5,
    "m": 5,
    "p_percent": 10.0,
    "n_examples": 1,
    "temperature": 0.0,
    "max_new_tokens": 4096,
    "context_budget": DEFAULT_CONTEXT_BUDGET,
    "seed": 0,
    "model": "default-model",
}


class _Settings:
    """Flag > config file > default resolution."""

    def __init__(self, config_path: str | None):
        self.parser = configparser.ConfigParser()
        if config_path:
            if not self.parser.read(config_path):
                raise FileNotFoundError(f"config file not found: {config_path}")

    def get(self, section: str, key: str, flag_value, cast):
        if flag_value is not None:
            return flag_value
        if self.parser.has_option(section, key):
            return cast(self.parser.get(section, key))
        return DEFAULTS[key] if key in DEFAULTS else None


def _make_backend(args, settings: _Settings):
    if args.replay:
        return ReplayBackend(storage.load_replay_script(args.replay))
    model = settings.get("backend", "model", getattr(args, "model", None), str)
    return HttpChatBackend(model=model)


def _make_embedder():
    return ReferenceEmbedder()


def _make_attacker_embedder():
    return ReferenceEmbedder(seed=ATTACKER_EMBED_SEED)


def _hardener_config(args, settings: _Settings) -> HardenerConfig:
    weights_path = getattr(args, "weights", None)
    if weights_path is None and settings.parser.has_option("hardener", "weights"):
        weights_path = settings.parser.get("hardener", "weights")
    return HardenerConfig(
        k_prime=settings.get("hardener", "k_prime", getattr(args, "k_prime", None), int),
        k=settings.get("hardener", "k", getattr(args, "k", None), int),
        weight_table=load_weight_table(weights_path),
    )


# ------------------------------------------------------------------ build-kb

def cmd_build_kb(args, settings: _Settings) -> int:
    records = storage.load_vulnerabilities(args.records)
    backend = _make_backend(args, settings)
    embedder = _make_embedder()
    result = kb_mod.build_knowledge_base(records, backend, embedder)
    kb_mod.save_base(result.base, args.out)
    skip_log = args.skip_log or f"{os.path.splitext(args.out)[0]}.skips.jsonl"
    storage.save_skip_log(result.skips, skip_log)
    print(f"{len(result.base)} entries")
    if result.skips:
        print(f"{len(result.skips)} records skipped (see {skip_log})")
    return EXIT_OK


# -------------------------------------------------------------------- harden

def cmd_harden(args, settings: _Settings) -> int:
    base = kb_mod.load_base(args.kb)
    backend = _make_backend(args, settings)
    embedder = _make_embedder()
    config = _hardener_config(args, settings)

    examples = []
    if args.corpus:
        corpus = storage.load_corpus(args.corpus)
        n = settings.get("run", "n_examples", args.n_examples, int)
        if n > 0:
            index = build_code_index(corpus, embedder)
            from .pipeline import retrieve_examples

            examples = retrieve_examples(args.query, index, corpus, n, embedder)

    bundle = harden(args.query, base, config, backend, embedder, examples,
                    decompose_query=not args.no_decompose)
    budget = settings.get("run", "context_budget", args.context_budget, int)
    bundle = truncate_to_budget(bundle, budget)
    prompt = assemble_prompt(bundle)
    print(prompt)
    if args.dry_run:
        return EXIT_OK
    from .gateway import CompletionRequest, complete, generation_system_text

    request = CompletionRequest(
        system_text=generation_system_text(), user_text=prompt,
        temperature=settings.get("run", "temperature", args.temperature, float),
        max_new_tokens=settings.get("run", "max_new_tokens", args.max_new_tokens, int))
    print("----- generated code -----")
    print(complete(request, backend))
    return EXIT_OK


# ----------------------------------------------------------------------- run

def _poison_config(args, settings, scenario: str) -> PoisonConfig:
    mode = PoisonMode.SCENARIO_I if scenario in ("poison1", "1") else PoisonMode.SCENARIO_II
    return PoisonConfig(
        mode=mode,
        m=settings.get("poison", "m", getattr(args, "m", None), int),
        p_percent=settings.get("poison", "p_percent", getattr(args, "p", None), float),
        cluster_seed=settings.get("run", "seed", args.seed, int),
    )


def _apply_scenario(args, settings, cases, functional, out_dir):
    scenario = args.scenario
    if scenario == "standard":
        return functional, None
    vulnerable = storage.load_corpus(args.vulnerable, kind="vulnerable")
    attacker = _make_attacker_embedder()
    config = _poison_config(args, settings, scenario)
    if config.mode == PoisonMode.SCENARIO_I:
        queries = [(c["case_id"], c["query"]) for c in cases]
        poisoned, plan = poison_scenario_1(queries, functional, vulnerable,
                                           config.m, attacker)
    else:
        poisoned, plan = poison_scenario_2(functional, vulnerable, config.p_percent,
                                           config.cluster_seed, attacker)
    storage.save_corpus(poisoned, os.path.join(out_dir, "corpus_poisoned.jsonl"))
    storage.save_poison_plan(plan, os.path.join(out_dir, "poison_plan.jsonl"))
    return poisoned, plan


def cmd_run(args, settings: _Settings) -> int:
    cases = storage.load_cases(args.cases)
    functional = storage.load_corpus(args.corpus)
    base = kb_mod.load_base(args.kb) if args.kb else None
    backend = _make_backend(args, settings)
    embedder = _make_embedder()
    config = _hardener_config(args, settings)
    os.makedirs(args.out, exist_ok=True)

    working_corpus, _plan = _apply_scenario(args, settings, cases, functional, args.out)
    code_index = build_code_index(working_corpus, embedder)

    n_examples = settings.get("run", "n_examples", args.n_examples, int)
    temperature = settings.get("run", "temperature", args.temperature, float)
    max_new_tokens = settings.get("run", "max_new_tokens", args.max_new_tokens, int)
    context_budget = settings.get("run", "context_budget", args.context_budget, int)

    modes = []
    if args.mode in ("both", "unhardened"):
        modes.append(False)
    if args.mode in ("both", "hardened"):
        modes.append(True)
    if True in modes and base is None:
        raise ConfigurationError("hardened generation requires --kb")

    jobs = args.jobs if args.jobs else (os.cpu_count() or 1)
    if args.replay:
        jobs = 1  # deterministic logs and request ordering under replay

    def run_case(case, harden_flag):
        return generate(
            case_id=case["case_id"], query=case["query"], base=base, config=config,
            backend=backend, embedder=embedder, code_index=code_index,
            corpus=working_corpus, n_examples=n_examples, harden_flag=harden_flag,
            language=case.get("language", ""), temperature=temperature,
            max_new_tokens=max_new_tokens, context_budget=context_budget,
            decompose_query=not args.no_decompose)

    for harden_flag in modes:
        name = "hardened" if harden_flag else "unhardened"
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                records = list(pool.map(lambda c: run_case(c, harden_flag), cases))
        else:
            records = [run_case(c, harden_flag) for c in cases]
        out_path = os.path.join(args.out, f"records_{name}.jsonl")
        storage.save_generation_records(records, out_path)
        failures = sum(1 for r in records if r.error)
        print(f"{name}: {len(records)} records -> {out_path}"
              + (f" ({failures} failed)" if failures else ""))
    return EXIT_OK


# ------------------------------------------------------------------ evaluate

def _references_from_cases(path: str | None) -> dict[str, str]:
    if not path:
        return {}
    return {c["case_id"]: c["reference_code"]
            for c in storage.load_cases(path) if c.get("reference_code")}


def cmd_evaluate(args, settings: _Settings) -> int:
    records = storage.load_generation_records(args.records)
    references = _references_from_cases(args.references)
    if not references:
        print("warning: no references available; Sim omitted", file=sys.stderr)
    rules = load_rules(args.rules) if args.rules else bundled_rules()

    report = build_report(records, references, rules,
                          external_command=args.external_detector)
    print(f"SR={report.security_rate:.2f}")
    if report.mean_similarity is not None:
        print(f"Sim={report.mean_similarity:.2f}")
    if report.unscored_cases:
        print(f"unscored={report.unscored_cases}")

    paired_report = None
    if args.paired_unhardened:
        paired_records = storage.load_generation_records(args.paired_unhardened)
        paired_report = build_report(paired_records, references, rules,
                                     external_command=args.external_detector)
        ratio = secured_ratio(
            [(c.case_id, bool(c.secure)) for c in paired_report.per_case],
            [(c.case_id, bool(c.secure)) for c in report.per_case])
        suffix = " (no insecure cases before)" if ratio.no_insecure_before else ""
        print(f"secured-ratio={ratio.value:.2f}{suffix}")

    if args.out:
        storage.save_report(report, args.out)
        print(f"report -> {args.out}")
        figures_dir = args.figures or os.path.dirname(os.path.abspath(args.out))
    else:
        figures_dir = args.figures
    if figures_dir and not args.no_figures:
        written = figures_mod.render_report_figures(
            report, figures_dir, paired_before=paired_report)
        for path in written:
            print(f"figure -> {path}")
    return EXIT_OK


# -------------------------------------------------------------------- poison

def cmd_poison(args, settings: _Settings) -> int:
    functional = storage.load_corpus(args.corpus)
    vulnerable = storage.load_corpus(args.vulnerable, kind="vulnerable")
    attacker = _make_attacker_embedder()
    config = _poison_config(args, settings, args.mode)
    if config.mode == PoisonMode.SCENARIO_I:
        if not args.queries:
            raise ConfigurationError("scenario 1 requires --queries")
        cases = storage.load_cases(args.queries)
        poisoned, plan = poison_scenario_1(
            [(c["case_id"], c["query"]) for c in cases], functional, vulnerable,
            config.m, attacker)
    else:
        poisoned, plan = poison_scenario_2(functional, vulnerable, config.p_percent,
                                           config.cluster_seed, attacker)
    storage.save_corpus(poisoned, args.out_corpus)
    storage.save_poison_plan(plan, args.out_plan)
    print(f"{len(plan.injections)} injections -> {args.out_corpus}")
    return EXIT_OK


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="racg-harden",
        description="Security-hardened retrieval-augmented code generation pipeline")
    parser.add_argument("--config", help="INI config file; flags override it")
    parser.add_argument("--seed", type=int, default=None, help="seed for clustering/poisoning")
    parser.add_argument("--jobs", type=int, default=None,
                        help="parallel cases (default: CPU count; 1 under --replay)")
    parser.add_argument("--replay", help="replay script path (deterministic backend)")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-kb", help="build the security knowledge base")
    p.add_argument("--records", required=True, help="vulnerability records file")
    p.add_argument("--out", required=True, help="knowledge base output path (.jsonl)")
    p.add_argument("--skip-log", help="skip log path (default: <out>.skips.jsonl)")
    p.add_argument("--model", help="live backend model name")
    p.set_defaults(func=cmd_build_kb)

    p = sub.add_parser("harden", help="print the security-augmented prompt for one query")
    p.add_argument("--query", required=True)
    p.add_argument("--kb", required=True, help="knowledge base path (.jsonl)")
    p.add_argument("--corpus", help="functional corpus for example retrieval")
    p.add_argument("--n-examples", dest="n_examples", type=int, default=None)
    p.add_argument("--k-prime", dest="k_prime", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--weights", help="CWE weight table (INI)")
    p.add_argument("--context-budget", dest="context_budget", type=int, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--max-new-tokens", dest="max_new_tokens", type=int, default=None)
    p.add_argument("--dry-run", action="store_true", help="prompt only, no generation call")
    p.add_argument("--no-decompose", action="store_true",
                   help="treat the whole query as one sub-task")
    p.add_argument("--model", help="live backend model name")
    p.set_defaults(func=cmd_harden)

    p = sub.add_parser("run", help="run a generation batch under a scenario")
    p.add_argument("--cases", required=True, help="batch cases file")
    p.add_argument("--corpus", required=True, help="functional code corpus")
    p.add_argument("--vulnerable", help="vulnerable corpus (poisoning scenarios)")
    p.add_argument("--kb", help="knowledge base path (required for hardened runs)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--scenario", choices=["standard", "poison1", "poison2"],
                   default="standard")
    p.add_argument("--both", dest="mode", action="store_const", const="both",
                   default="both", help="write paired hardened+unhardened records (default)")
    p.add_argument("--hardened", dest="mode", action="store_const", const="hardened")
    p.add_argument("--unhardened", dest="mode", action="store_const", const="unhardened")
    p.add_argument("--n-examples", dest="n_examples", type=int, default=None)
    p.add_argument("--k-prime", dest="k_prime", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--weights", help="CWE weight table (INI)")
    p.add_argument("--m", type=int, default=None, help="scenario 1 injections per query")
    p.add_argument("--p", type=float, default=None, help="scenario 2 poisoning percent")
    p.add_argument("--context-budget", dest="context_budget", type=int, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--max-new-tokens", dest="max_new_tokens", type=int, default=None)
    p.add_argument("--no-decompose", action="store_true")
    p.add_argument("--model", help="live backend model name")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="score generated records and write a report")
    p.add_argument("--records", required=True, help="generation records file")
    p.add_argument("--paired-unhardened", dest="paired_unhardened",
                   help="unhardened records for the secured-ratio")
    p.add_argument("--references", help="cases file providing reference_code")
    p.add_argument("--rules", help="detector rule file (default: bundled rules)")
    p.add_argument("--external-detector", dest="external_detector",
                   help="external detector argv template with {file} and {language}")
    p.add_argument("--out", help="report output path")
    p.add_argument("--figures", help="figures directory (default: next to --out)")
    p.add_argument("--no-figures", dest="no_figures", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("poison", help="generate a poisoning plan and poisoned corpus")
    p.add_argument("--corpus", required=True, help="functional code corpus")
    p.add_argument("--vulnerable", required=True, help="vulnerable corpus")
    p.add_argument("--mode", choices=["1", "2"], required=True)
    p.add_argument("--queries", help="cases file (scenario 1 targets)")
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--p", type=float, default=None)
    p.add_argument("--out-corpus", dest="out_corpus", required=True)
    p.add_argument("--out-plan", dest="out_plan", required=True)
    p.set_defaults(func=cmd_poison)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        settings = _Settings(args.config)
        return args.func(args, settings)
    except (FileNotFoundError, LoadError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BuildError, ConfigurationError, EvaluationError, TransportError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
