import os

import pytest

from racg_hardener import storage
from racg_hardener.cli import main

import scenario_fixture


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    root = tmp_path_factory.mktemp("world")
    return scenario_fixture.build_world(str(root))


def read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


class TestBuildKb:
    def test_builds_and_reports_entry_count(self, world, tmp_path, capsys):
        out = str(tmp_path / "kb.jsonl")
        code = main(["--replay", world["replay"], "build-kb",
                     "--records", world["records"], "--out", out])
        assert code == 0
        assert "10 entries" in capsys.readouterr().out
        assert os.path.exists(out)
        assert os.path.exists(str(tmp_path / "kb.vec"))

    def test_missing_records_file_is_usage_error(self, world, tmp_path, capsys):
        code = main(["--replay", world["replay"], "build-kb",
                     "--records", str(tmp_path / "nope.jsonl"),
                     "--out", str(tmp_path / "kb.jsonl")])
        assert code == 2

    def test_all_failed_extractions_exit_pipeline_error(self, tmp_path, capsys):
        records = scenario_fixture.vulnerability_records()[:2]
        records_path = str(tmp_path / "vulns.jsonl")
        storage.save_vulnerabilities(records, records_path)
        entries = {}
        from racg_hardener.diffs import compute_diff
        from racg_hardener.gateway import render_extraction_prompt

        for rec in records:
            req = render_extraction_prompt(rec, compute_diff(rec.vulnerable_code,
                                                             rec.fixed_code))
            entries[req.fingerprint] = "no envelopes here"
        replay = str(tmp_path / "replay.jsonl")
        storage.save_replay_script(entries, replay, strict=True)
        code = main(["--replay", replay, "build-kb", "--records", records_path,
                     "--out", str(tmp_path / "kb.jsonl")])
        assert code == 1


class TestHarden:
    def test_dry_run_prints_prompt(self, world, capsys):
        query = scenario_fixture.CASES[0]["query"]
        code = main(["--replay", world["replay"], "harden", "--query", query,
                     "--kb", world["kb"], "--dry-run"])
        assert code == 0
        out = capsys.readouterr().out
        assert query in out
        assert "SECURITY GUIDANCE" in out

    def test_dry_run_deterministic(self, world, capsys):
        query = scenario_fixture.CASES[1]["query"]
        outputs = []
        for _ in range(2):
            assert main(["--replay", world["replay"], "harden", "--query", query,
                         "--kb", world["kb"], "--dry-run"]) == 0
            outputs.append(capsys.readouterr().out)
        assert outputs[0] == outputs[1]

    def test_no_decompose_skips_llm(self, world, tmp_path, capsys):
        # empty strict script: any LLM call would fail loudly
        empty = str(tmp_path / "empty.jsonl")
        storage.save_replay_script({}, empty, strict=True)
        code = main(["--replay", empty, "harden", "--query", "copy a string safely",
                     "--kb", world["kb"], "--dry-run", "--no-decompose"])
        assert code == 0
        assert "copy a string safely" in capsys.readouterr().out

    def test_generation_backend_prints_code(self, world, tmp_path, capsys):
        # script the harden command's own requests (no code examples retrieved)
        from racg_hardener.gateway import (
            CompletionRequest,
            generation_system_text,
            parse_decomposition,
            render_decomposition_prompt,
        )
        from racg_hardener.hardening import (
            assemble_prompt,
            filter_top_k,
            load_weight_table,
            retrieve_per_subtask,
            weigh_and_rank,
        )
        from racg_hardener.kb import load_base
        from racg_hardener.models import HardenerConfig, PromptBundle

        query = "copy user text into a buffer"
        decomposition = "1. allocate the buffer\n2. copy the text"
        base = load_base(world["kb"])
        config = HardenerConfig(weight_table=load_weight_table())
        sub_tasks = parse_decomposition(decomposition)
        retrievals = retrieve_per_subtask(sub_tasks, base, scenario_fixture.EMBEDDER,
                                          config.k_prime)
        ranked = weigh_and_rank(retrievals, config.weight_table,
                                base.cwe_by_entry_id(), base.entries_by_id())
        prompt = assemble_prompt(PromptBundle(
            query=query, security_context=filter_top_k(ranked, config.k)))
        entries = {
            render_decomposition_prompt(query).fingerprint: decomposition,
            CompletionRequest(system_text=generation_system_text(),
                              user_text=prompt).fingerprint: "GENERATED-BODY",
        }
        replay = str(tmp_path / "replay.jsonl")
        storage.save_replay_script(entries, replay, strict=True)

        code = main(["--replay", replay, "harden", "--query", query,
                     "--kb", world["kb"]])
        assert code == 0
        out = capsys.readouterr().out
        assert "GENERATED-BODY" in out
        assert "generated code" in out


class TestRun:
    def test_standard_both_writes_paired_records(self, world, tmp_path, capsys):
        out = str(tmp_path / "out")
        code = main(["--replay", world["replay"], "run",
                     "--cases", world["cases"], "--corpus", world["functional"],
                     "--kb", world["kb"], "--out", out, "--scenario", "standard",
                     "--both"])
        assert code == 0
        hardened = storage.load_generation_records(os.path.join(out, "records_hardened.jsonl"))
        unhardened = storage.load_generation_records(os.path.join(out, "records_unhardened.jsonl"))
        assert len(hardened) == len(unhardened) == 3
        assert all(r.hardened for r in hardened)
        assert all(not r.hardened for r in unhardened)
        assert all(r.security_entry_ids for r in hardened)
        assert all(not r.security_entry_ids for r in unhardened)

    def test_replay_runs_are_byte_identical(self, world, tmp_path):
        outs = [str(tmp_path / f"out{i}") for i in (1, 2)]
        for out in outs:
            assert main(["--replay", world["replay"], "run",
                         "--cases", world["cases"], "--corpus", world["functional"],
                         "--kb", world["kb"], "--out", out, "--scenario", "standard",
                         "--both"]) == 0
        for name in ("records_hardened.jsonl", "records_unhardened.jsonl"):
            assert (read_bytes(os.path.join(outs[0], name))
                    == read_bytes(os.path.join(outs[1], name)))

    def test_poison1_writes_plan_and_working_copy(self, world, tmp_path):
        out = str(tmp_path / "out")
        code = main(["--replay", world["replay"], "run",
                     "--cases", world["cases"], "--corpus", world["functional"],
                     "--vulnerable", world["vulnerable"], "--kb", world["kb"],
                     "--out", out, "--scenario", "poison1", "--both"])
        assert code == 0
        plan = storage.load_poison_plan(os.path.join(out, "poison_plan.jsonl"))
        assert plan.mode == "scenario1"
        assert len(plan.injections) == 5
        poisoned = storage.load_corpus(os.path.join(out, "corpus_poisoned.jsonl"))
        assert len(poisoned) == 25
        # the input corpus file was not mutated
        assert len(storage.load_corpus(world["functional"])) == 20

    def test_poison2_scenario_runs(self, world, tmp_path):
        out = str(tmp_path / "out")
        code = main(["--replay", world["replay"], "run",
                     "--cases", world["cases"], "--corpus", world["functional"],
                     "--vulnerable", world["vulnerable"], "--kb", world["kb"],
                     "--out", out, "--scenario", "poison2", "--both"])
        assert code == 0
        plan = storage.load_poison_plan(os.path.join(out, "poison_plan.jsonl"))
        assert plan.mode == "scenario2"
        assert plan.seed == 0
        records = storage.load_generation_records(
            os.path.join(out, "records_hardened.jsonl"))
        assert len(records) == 3

    def test_jobs_forced_to_one_under_replay(self, world, tmp_path):
        outs = [str(tmp_path / f"out{i}") for i in (1, 2)]
        for out in outs:
            assert main(["--replay", world["replay"], "--jobs", "4", "run",
                         "--cases", world["cases"], "--corpus", world["functional"],
                         "--kb", world["kb"], "--out", out,
                         "--scenario", "standard", "--both"]) == 0
        assert (read_bytes(os.path.join(outs[0], "records_hardened.jsonl"))
                == read_bytes(os.path.join(outs[1], "records_hardened.jsonl")))

    def test_hardened_without_kb_fails(self, world, tmp_path):
        code = main(["--replay", world["replay"], "run",
                     "--cases", world["cases"], "--corpus", world["functional"],
                     "--out", str(tmp_path / "o"), "--scenario", "standard",
                     "--hardened"])
        assert code == 1


@pytest.fixture(scope="module")
def run_outputs(world, tmp_path_factory):
    out = str(tmp_path_factory.mktemp("run_out"))
    assert main(["--replay", world["replay"], "run",
                 "--cases", world["cases"], "--corpus", world["functional"],
                 "--kb", world["kb"], "--out", out, "--scenario", "standard",
                 "--both"]) == 0
    return out


class TestEvaluate:
    def test_hardened_report_and_figures(self, world, run_outputs, tmp_path, capsys):
        report_path = str(tmp_path / "report.jsonl")
        code = main(["evaluate",
                     "--records", os.path.join(run_outputs, "records_hardened.jsonl"),
                     "--paired-unhardened",
                     os.path.join(run_outputs, "records_unhardened.jsonl"),
                     "--references", world["cases"],
                     "--out", report_path])
        assert code == 0
        out = capsys.readouterr().out
        assert "SR=100.00" in out
        assert "Sim=100.00" in out
        assert "secured-ratio=100.00" in out
        report = storage.load_report(report_path)
        assert report.security_rate == 100.0
        figures = [f for f in os.listdir(tmp_path) if f.endswith(".png")]
        assert "eval_outcomes.png" in figures
        assert "eval_paired_rate.png" in figures

    def test_unhardened_report_flags_insecure(self, world, run_outputs, capsys):
        code = main(["evaluate",
                     "--records", os.path.join(run_outputs, "records_unhardened.jsonl"),
                     "--references", world["cases"]])
        assert code == 0
        out = capsys.readouterr().out
        assert "SR=33.33" in out

    def test_missing_references_warns(self, run_outputs, capsys):
        code = main(["evaluate",
                     "--records", os.path.join(run_outputs, "records_hardened.jsonl")])
        assert code == 0
        captured = capsys.readouterr()
        assert "Sim" not in captured.out
        assert "no references" in captured.err

    def test_zero_scored_cases_is_pipeline_error(self, run_outputs):
        failing = 'python3 -c "import sys; sys.exit(3)" {file}'
        code = main(["evaluate",
                     "--records", os.path.join(run_outputs, "records_hardened.jsonl"),
                     "--external-detector", failing, "--no-figures"])
        assert code == 1

    def test_four_case_fixture_prints_sr_75(self, tmp_path, capsys):
        from racg_hardener.pipeline import GenerationRecord

        def record(case_id, code):
            return GenerationRecord(case_id=case_id, query="q", language="c",
                                    retrieved_example_ids=(), security_entry_ids=(),
                                    rendered_prompt="p", generated_code=code,
                                    hardened=False)

        records = [record("a", "int x = 1;"), record("b", "int y = 2;"),
                   record("c", "strcpy(d, s);"), record("d", "int z = 3;")]
        path = str(tmp_path / "records.jsonl")
        storage.save_generation_records(records, path)
        assert main(["evaluate", "--records", path, "--no-figures"]) == 0
        assert "SR=75.00" in capsys.readouterr().out


class TestPoisonCommand:
    def test_scenario2_plan_deterministic_with_seed(self, world, tmp_path):
        plans = []
        for i in (1, 2):
            corpus_out = str(tmp_path / f"poisoned{i}.jsonl")
            plan_out = str(tmp_path / f"plan{i}.jsonl")
            code = main(["--seed", "17", "poison", "--corpus", world["functional"],
                         "--vulnerable", world["vulnerable"], "--mode", "2",
                         "--p", "10", "--out-corpus", corpus_out,
                         "--out-plan", plan_out])
            assert code == 0
            plans.append(read_bytes(plan_out))
        assert plans[0] == plans[1]

    def test_scenario1_requires_queries(self, world, tmp_path):
        code = main(["poison", "--corpus", world["functional"],
                     "--vulnerable", world["vulnerable"], "--mode", "1",
                     "--out-corpus", str(tmp_path / "c.jsonl"),
                     "--out-plan", str(tmp_path / "p.jsonl")])
        assert code == 1

    def test_scenario1_plan_written(self, world, tmp_path):
        corpus_out = str(tmp_path / "poisoned.jsonl")
        plan_out = str(tmp_path / "plan.jsonl")
        code = main(["poison", "--corpus", world["functional"],
                     "--vulnerable", world["vulnerable"], "--mode", "1",
                     "--queries", world["cases"], "--m", "2",
                     "--out-corpus", corpus_out, "--out-plan", plan_out])
        assert code == 0
        plan = storage.load_poison_plan(plan_out)
        assert plan.mode == "scenario1"
        assert 2 <= len(plan.injections) <= 6


class TestConfigPrecedence:
    def test_config_file_overrides_defaults_and_flags_override_config(
            self, world, tmp_path, capsys):
        config_path = str(tmp_path / "conf.ini")
        with open(config_path, "w") as fh:
            fh.write("[hardener]\nk = 1\nk_prime = 1\n")
        query = scenario_fixture.CASES[2]["query"]
        # config k=1: exactly one security section
        assert main(["--config", config_path, "--replay", world["replay"],
                     "harden", "--query", query, "--kb", world["kb"],
                     "--dry-run"]) == 0
        with_config = capsys.readouterr().out
        # flag k=2 overrides config
        assert main(["--config", config_path, "--replay", world["replay"],
                     "harden", "--query", query, "--kb", world["kb"],
                     "--dry-run", "--k", "2"]) == 0
        with_flag = capsys.readouterr().out
        assert with_config.count("Step:") == 1
        assert with_flag.count("Step:") == 2
