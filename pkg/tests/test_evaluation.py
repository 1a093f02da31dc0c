import pytest

from racg_hardener.evaluation import (
    DetectorRule,
    EvaluationError,
    build_report,
    bundled_rules,
    detect,
    detect_external,
    load_rules,
    save_rules,
    secured_ratio,
    security_rate,
    similarity,
)
from racg_hardener.models import Finding
from racg_hardener.pipeline import GenerationRecord

SPRINTF_CODE = """#include <stdio.h>
void show(struct rec *r, char *out) {
    sprintf(out, "%s %d", r->name, r->age);
}
"""

SNPRINTF_CODE = SPRINTF_CODE.replace("sprintf(out,", "snprintf(out, OUT_LEN,")


class TestDetect:
    def test_sprintf_flagged_with_buffer_cwe(self):
        findings = detect(SPRINTF_CODE, "c", bundled_rules())
        assert findings, "sprintf should be flagged"
        assert any(f.rule_id == "c-sprintf" for f in findings)
        assert all(f.cwe_id == "CWE-119" for f in findings if f.rule_id == "c-sprintf")
        flagged = [f for f in findings if f.rule_id == "c-sprintf"]
        assert flagged[0].line == 3
        assert "sprintf" in flagged[0].excerpt

    def test_snprintf_not_flagged(self):
        findings = detect(SNPRINTF_CODE, "c", bundled_rules())
        assert not any(f.rule_id == "c-sprintf" for f in findings)

    def test_empty_code_no_findings(self):
        assert detect("", "c", bundled_rules()) == []

    def test_language_scoping(self):
        code = "x = eval(user_input)\n"
        assert any(f.rule_id == "py-eval" for f in detect(code, "python", bundled_rules()))
        assert not any(f.rule_id == "py-eval" for f in detect(code, "c", bundled_rules()))

    def test_wildcard_language_rule(self):
        code = 'password = "hunter2-secret"\n'
        for language in ("c", "python", "go"):
            assert any(f.rule_id == "any-hardcoded-password"
                       for f in detect(code, language, bundled_rules()))

    def test_adding_rules_is_monotone(self):
        rules = bundled_rules()
        base_findings = detect(SPRINTF_CODE, "c", rules)
        extra = DetectorRule(rule_id="extra-include", cwe_id="CWE-1", language="c",
                             pattern=r"#include", description="")
        grown = detect(SPRINTF_CODE, "c", rules + [extra])
        for finding in base_findings:
            assert finding in grown

    def test_one_finding_per_match(self):
        code = "strcpy(a, b); strcpy(c, d);\n"
        hits = [f for f in detect(code, "c", bundled_rules()) if f.rule_id == "c-strcpy"]
        assert len(hits) == 2


class TestRuleFiles:
    def test_bundled_rules_cover_required_sinks(self):
        rules = bundled_rules()
        assert len(rules) >= 12
        ids = {r.rule_id for r in rules}
        for required in ("c-sprintf", "c-strcpy", "c-gets", "c-system-nonliteral",
                         "java-util-random", "py-eval", "js-eval"):
            assert required in ids

    def test_roundtrip(self, tmp_path):
        path = str(tmp_path / "rules.jsonl")
        rules = bundled_rules()
        save_rules(rules, path)
        assert load_rules(path) == rules

    def test_bad_pattern_rejected(self):
        with pytest.raises(ValueError, match="pattern"):
            DetectorRule(rule_id="b", cwe_id="CWE-1", language="*",
                         pattern="(unclosed", description="")


PRINT_STUB = """python3 -c "print('ext-rule\\tCWE-119\\t2')" {file}"""
EMPTY_STUB = 'python3 -c "pass" {file}'
FAILING_STUB = 'python3 -c "import sys; sys.exit(3)" {file}'
GARBAGE_STUB = 'python3 -c "print(\'not findings\')" {file}'


class TestDetectExternal:
    def test_single_finding_parsed(self):
        findings = detect_external("line1\nline2\n", "c", PRINT_STUB)
        assert findings == [Finding(rule_id="ext-rule", cwe_id="CWE-119",
                                    line=2, excerpt="line2")]

    def test_empty_output_is_clean(self):
        assert detect_external("x\n", "c", EMPTY_STUB) == []

    def test_nonzero_exit_marks_unscored(self):
        with pytest.raises(EvaluationError):
            detect_external("x\n", "c", FAILING_STUB)

    def test_unparsable_output_marks_unscored(self):
        with pytest.raises(EvaluationError):
            detect_external("x\n", "c", GARBAGE_STUB)

    def test_placeholders_substituted(self):
        template = ('python3 -c "import sys; '
                    "data = open(sys.argv[1]).read(); "
                    "print('seen\\tCWE-1\\t1') if 'needle' in data else None; "
                    'print(sys.argv[2], file=sys.stderr)" {file} {language}')
        findings = detect_external("has needle inside\n", "rust", template)
        assert [f.rule_id for f in findings] == ["seen"]


class TestSecurityRate:
    def test_three_quarters(self):
        cases = [("a", []), ("b", []), ("c", [Finding("r", "CWE-1", 1, "")]), ("d", [])]
        assert security_rate(cases) == 75.0

    def test_all_clean(self):
        assert security_rate([("a", []), ("b", [])]) == 100.0

    def test_all_flagged(self):
        f = [Finding("r", "CWE-1", 1, "")]
        assert security_rate([("a", f), ("b", f)]) == 0.0

    def test_unscored_excluded_from_denominator(self):
        cases = [("a", []), ("b", None), ("c", [Finding("r", "CWE-1", 1, "")])]
        assert security_rate(cases) == 50.0

    def test_zero_scored_is_error(self):
        with pytest.raises(EvaluationError):
            security_rate([("a", None)])

    def test_order_invariant(self):
        cases = [("a", []), ("b", [Finding("r", "CWE-1", 1, "")]), ("c", [])]
        assert security_rate(cases) == security_rate(list(reversed(cases)))


class TestSimilarity:
    def test_identity_is_100(self):
        for text in ("x = 1", "def f(a):\n  return a + 1\n", "ab"):
            assert similarity(text, text) == 100.0

    def test_hand_computed_fixture(self):
        # Tokens: [x,=,foo,(,a,',',b,)] vs [y,=,foo,(,a,',',b,)]
        # Matches by order: 7/8, 6/7, 5/6, 4/5; product = 1/2; BP = 1.
        expected = 100.0 * (7 / 8 * 6 / 7 * 5 / 6 * 4 / 5) ** 0.25
        assert similarity("x = foo(a, b)", "y = foo(a, b)") == pytest.approx(
            expected, abs=1e-9)
        assert expected == pytest.approx(84.08964152537145, abs=1e-9)

    def test_disjoint_tokens_hit_smoothing_floor(self):
        # Every order smoothed: 1/5, 1/4, 1/3, 1/2 over 4 tokens.
        floor = 100.0 * (1 / 5 * 1 / 4 * 1 / 3 * 1 / 2) ** 0.25
        score = similarity("a b c d", "w x y z")
        assert 0.0 < score <= floor + 1e-12
        assert score == pytest.approx(floor, abs=1e-9)
        # Sharing a 4-gram with the same reference beats the floor.
        assert score < similarity("p w x y z", "w x y z")

    def test_brevity_penalty_punishes_short_candidates(self):
        full = "a b c d e f g h"
        assert similarity("a b c d", full) < similarity(full, full)

    def test_empty_reference_rejected(self):
        with pytest.raises(EvaluationError):
            similarity("code", "   ")

    def test_empty_candidate_scores_zero(self):
        assert similarity("", "x = 1") == 0.0

    def test_not_assumed_symmetric(self):
        a, b = "x = foo(a, b)", "x = foo(a, b); extra(stuff);"
        assert similarity(a, b) != similarity(b, a)


class TestSecuredRatio:
    def test_half_fixed(self):
        before = [("a", False), ("b", False), ("c", True)]
        after = [("a", True), ("b", False), ("c", True)]
        ratio = secured_ratio(before, after)
        assert ratio.value == 50.0
        assert not ratio.no_insecure_before

    def test_nothing_insecure_before_is_flagged_zero(self):
        ratio = secured_ratio([("a", True)], [("a", True)])
        assert ratio.value == 0.0
        assert ratio.no_insecure_before

    def test_all_fixed(self):
        before = [("a", False), ("b", False)]
        after = [("a", True), ("b", True)]
        assert secured_ratio(before, after).value == 100.0

    def test_mismatched_cases_rejected(self):
        with pytest.raises(EvaluationError):
            secured_ratio([("a", False)], [("b", True)])


def _record(case_id, code, language="c"):
    return GenerationRecord(case_id=case_id, query="q", language=language,
                            retrieved_example_ids=(), security_entry_ids=(),
                            rendered_prompt="p", generated_code=code, hardened=False)


class TestBuildReport:
    def test_aggregation_matches_direct_metric_calls(self):
        records = [
            _record("a", SNPRINTF_CODE),
            _record("b", SPRINTF_CODE),
            _record("c", "int x = 0;"),
        ]
        references = {"a": SNPRINTF_CODE, "b": SNPRINTF_CODE}
        rules = bundled_rules()
        report = build_report(records, references, rules)
        assert report.total_cases == 3
        assert report.secure_cases == 2
        expected_rate = security_rate(
            [(r.case_id, detect(r.generated_code, r.language, rules)) for r in records])
        assert report.security_rate == expected_rate
        sims = [similarity(SNPRINTF_CODE, SNPRINTF_CODE),
                similarity(SPRINTF_CODE, SNPRINTF_CODE)]
        assert report.mean_similarity == pytest.approx(sum(sims) / 2)
        assert report.per_case[2].similarity is None

    def test_external_failure_marks_case_unscored(self):
        conditional_stub = ('python3 -c "import sys; '
                            "data = open(sys.argv[1]).read(); "
                            'sys.exit(3 if \'fail-me\' in data else 0)" {file}')
        records = [_record("a", "int x; /* fail-me */"), _record("b", "int y;")]
        report = build_report(records, {}, bundled_rules(), external_command=conditional_stub)
        assert report.unscored_cases == 1
        assert report.per_case[0].secure is None
        assert report.security_rate == 100.0  # only the scored case counts

    def test_all_cases_unscored_is_error(self):
        records = [_record("a", "int x;"), _record("b", "int y;")]
        with pytest.raises(EvaluationError):
            build_report(records, {}, bundled_rules(), external_command=FAILING_STUB)

    def test_empty_records_rejected(self):
        with pytest.raises(EvaluationError):
            build_report([], {}, bundled_rules())
