"""Matplotlib figures rendered next to evaluation reports.

The evaluate command drops these PNGs alongside the delimited report so a
run's security posture can be eyeballed without loading the report into
anything: case outcomes, the similarity distribution, findings by rule, and
(for paired hardened/unhardened runs) the before/after security rate.
"""

from __future__ import annotations

import os
from collections import Counter

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .models import EvalReport

_FIG_SIZE = (6.4, 4.0)
_DPI = 120


def _save(fig, path: str) -> str:
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def outcome_figure(report: EvalReport, path: str) -> str:
    secure = sum(1 for c in report.per_case if c.secure is True)
    insecure = sum(1 for c in report.per_case if c.secure is False)
    unscored = report.unscored_cases
    fig, ax = plt.subplots(figsize=_FIG_SIZE)
    labels = ["secure", "insecure", "unscored"]
    values = [secure, insecure, unscored]
    colors = ["#2a9d8f", "#e76f51", "#8d99ae"]
    ax.bar(labels, values, color=colors)
    for i, v in enumerate(values):
        ax.text(i, v, str(v), ha="center", va="bottom")
    ax.set_ylabel("cases")
    ax.set_title(f"Case outcomes (SR={report.security_rate:.2f}%)")
    return _save(fig, path)


def similarity_figure(report: EvalReport, path: str) -> str | None:
    sims = [c.similarity for c in report.per_case if c.similarity is not None]
    if not sims:
        return None
    fig, ax = plt.subplots(figsize=_FIG_SIZE)
    ax.hist(sims, bins=min(20, max(5, len(sims))), range=(0, 100),
            color="#457b9d", edgecolor="white")
    ax.axvline(sum(sims) / len(sims), color="#e63946", linestyle="--",
               label=f"mean {sum(sims) / len(sims):.1f}")
    ax.set_xlabel("similarity (sim-bleu-proxy)")
    ax.set_ylabel("cases")
    ax.set_title("Similarity to reference code")
    ax.legend()
    return _save(fig, path)


def findings_figure(report: EvalReport, path: str) -> str | None:
    counts = Counter(f.rule_id for c in report.per_case for f in c.findings)
    if not counts:
        return None
    pairs = counts.most_common()
    labels = [rule for rule, _ in pairs][::-1]
    values = [count for _, count in pairs][::-1]
    fig, ax = plt.subplots(figsize=(6.4, max(2.5, 0.35 * len(labels) + 1.2)))
    ax.barh(labels, values, color="#e76f51")
    ax.set_xlabel("findings")
    ax.set_title("Findings by rule")
    return _save(fig, path)


def paired_rate_figure(before: EvalReport, after: EvalReport, path: str) -> str:
    fig, ax = plt.subplots(figsize=_FIG_SIZE)
    labels = ["unhardened", "hardened"]
    values = [before.security_rate, after.security_rate]
    ax.bar(labels, values, color=["#8d99ae", "#2a9d8f"])
    for i, v in enumerate(values):
        ax.text(i, v, f"{v:.1f}%", ha="center", va="bottom")
    ax.set_ylim(0, 105)
    ax.set_ylabel("security rate (%)")
    ax.set_title("Security rate before/after hardening")
    return _save(fig, path)


def render_report_figures(report: EvalReport, out_dir: str, prefix: str = "eval",
                          paired_before: EvalReport | None = None) -> list[str]:
    """Render all applicable figures into ``out_dir``; returns written paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    written.append(outcome_figure(report, os.path.join(out_dir, f"{prefix}_outcomes.png")))
    sim_path = similarity_figure(report, os.path.join(out_dir, f"{prefix}_similarity.png"))
    if sim_path:
        written.append(sim_path)
    find_path = findings_figure(report, os.path.join(out_dir, f"{prefix}_findings.png"))
    if find_path:
        written.append(find_path)
    if paired_before is not None:
        written.append(paired_rate_figure(
            paired_before, report, os.path.join(out_dir, f"{prefix}_paired_rate.png")))
    return written
