"""Corpus-level scoring reports: per-session, per-language, and pooled rates.

Language and corpus aggregates pool raw error counts (or error seconds for
diarization) before dividing; the "average" row is the unweighted mean of
per-language rates. Reports serialize to JSON and render side by side as a
Markdown comparison table with relative improvements against a baseline.
"""

from __future__ import annotations

import concurrent.futures
import json
import math
from dataclasses import dataclass, field

from .align import StmSegment
from .core import SessionTranscript, speaker_key
from .metrics import (
    DerComponents,
    ErrorCounts,
    _rate,
    cpwer_counts,
    der_components,
    edit_align,
    mode_for_language,
    orcwer_counts,
    relative_improvement,
    tcpwer_counts,
    tokenize,
)

METRICS = ("wer", "cpwer", "tcpwer", "orcwer", "der")


@dataclass
class MetricReport:
    """One metric evaluated over a corpus."""

    metric: str
    collar: float | None
    token_mode: dict[str, str] = field(default_factory=dict)
    per_session: dict[str, dict[str, float]] = field(default_factory=dict)
    per_language: dict[str, dict[str, float]] = field(default_factory=dict)
    overall: dict[str, float] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    def rate_key(self) -> str:
        return f"{self.metric}_pct"

    def to_dict(self) -> dict:
        collar = self.collar
        if collar is not None and math.isinf(collar):
            collar = "inf"
        return {
            "metric": self.metric,
            "collar": collar,
            "token_mode": dict(sorted(self.token_mode.items())),
            "per_session": {k: self.per_session[k] for k in sorted(self.per_session)},
            "per_language": {k: self.per_language[k] for k in sorted(self.per_language)},
            "overall": self.overall,
            "flags": list(self.flags),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "MetricReport":
        collar = data.get("collar")
        if collar == "inf":
            collar = math.inf
        return cls(
            metric=data["metric"],
            collar=collar,
            token_mode=dict(data.get("token_mode", {})),
            per_session=dict(data.get("per_session", {})),
            per_language=dict(data.get("per_language", {})),
            overall=dict(data.get("overall", {})),
            flags=list(data.get("flags", [])),
        )

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls.from_dict(json.loads(text))


def _session_counts(
    metric: str,
    ref_turns: list,
    hyp_segments: list[StmSegment],
    collar: float | None,
    mode: str,
) -> ErrorCounts | DerComponents:
    ref_sorted = sorted(ref_turns, key=lambda t: (t.interval.start, t.interval.end))
    hyp_sorted = sorted(hyp_segments, key=lambda s: (s.interval.start, s.interval.end))
    if metric == "wer":
        ref_units = [u for t in ref_sorted for u in tokenize(t.text, mode)]
        hyp_units = [u for s in hyp_sorted for u in tokenize(s.text, mode)]
        return edit_align(ref_units, hyp_units)
    if metric == "cpwer":
        ref_streams: dict[str, list[str]] = {}
        for t in ref_sorted:
            ref_streams.setdefault(speaker_key(t.speaker), []).extend(tokenize(t.text, mode))
        hyp_streams: dict[str, list[str]] = {}
        for s in hyp_sorted:
            hyp_streams.setdefault(speaker_key(s.speaker), []).extend(tokenize(s.text, mode))
        counts, _ = cpwer_counts(ref_streams, hyp_streams, mode)
        return counts
    if metric == "tcpwer":
        counts, _ = tcpwer_counts(ref_sorted, hyp_sorted, collar, mode)
        return counts
    if metric == "orcwer":
        hyp_streams = {}
        for s in hyp_sorted:
            hyp_streams.setdefault(speaker_key(s.speaker), []).extend(tokenize(s.text, mode))
        counts, _ = orcwer_counts([t.text for t in ref_sorted], hyp_streams, mode)
        return counts
    if metric == "der":
        return der_components(ref_sorted, hyp_sorted, collar)
    raise ValueError(f"unknown metric {metric!r}")


def _counts_rate(counts: ErrorCounts | DerComponents) -> float:
    if isinstance(counts, DerComponents):
        return counts.rate_pct()
    return _rate(counts.errors, counts.reference_length)


def score_corpus(
    references: list[SessionTranscript],
    hypothesis: list[StmSegment],
    metric: str,
    *,
    collar: float | None = None,
    mode: str | None = None,
    jobs: int = 1,
) -> MetricReport:
    """Score one metric over a corpus: hypothesis segments are matched to
    reference sessions by file_id == session_id.

    Hypothesis files without a reference session are scored against an empty
    reference (insertions only) and flagged. Sessions without hypothesis
    segments score as pure deletions/missed speech. ``jobs`` parallelizes the
    per-session computation; aggregation order stays deterministic.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
    hyp_by_file: dict[str, list[StmSegment]] = {}
    for seg in hypothesis:
        hyp_by_file.setdefault(seg.file_id, []).append(seg)
    ref_by_id = {t.session_id: t for t in references}

    report = MetricReport(metric=metric, collar=collar)
    zero = DerComponents() if metric == "der" else ErrorCounts()
    by_language: dict[str, ErrorCounts | DerComponents] = {}
    total = zero

    session_ids = sorted(set(ref_by_id) | set(hyp_by_file))

    def one_session(sid: str):
        ref = ref_by_id.get(sid)
        language = (ref.language if ref else "") or "und"
        session_mode = mode_for_language(language, mode)
        counts = _session_counts(
            metric, ref.turns if ref else [], hyp_by_file.get(sid, []), collar, session_mode
        )
        return language, session_mode, counts

    if jobs > 1 and len(session_ids) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            session_results = list(pool.map(one_session, session_ids))
    else:
        session_results = [one_session(sid) for sid in session_ids]

    for sid, (language, session_mode, counts) in zip(session_ids, session_results):
        ref = ref_by_id.get(sid)
        if ref is None:
            report.flags.append(f"hypothesis file {sid!r} has no reference session")
        if not (ref.turns if ref else []):
            report.flags.append(f"session {sid!r}: empty reference; rate counts insertions only")
        report.token_mode.setdefault(language, session_mode)
        report.per_session[sid] = {report.rate_key(): _counts_rate(counts)}
        by_language[language] = by_language.get(language, zero) + counts
        total = total + counts

    for language, counts in by_language.items():
        report.per_language[language] = {report.rate_key(): _counts_rate(counts)}
    if by_language:
        rates = [report.per_language[l][report.rate_key()] for l in sorted(by_language)]
        report.per_language["average"] = {report.rate_key(): sum(rates) / len(rates)}
    report.overall = {report.rate_key(): _counts_rate(total)}
    return report


def _truncate_rate(value: float) -> str:
    """Two decimals, truncated toward zero (matches how published relative
    improvements are typically presented from already-rounded rates)."""
    return f"{math.trunc(value * 100) / 100:.2f}"


def comparison_table(reports: dict[str, MetricReport], baseline: str) -> str:
    """Markdown table of per-language rates for several systems plus their
    overall rates and relative improvement versus the baseline system."""
    if baseline not in reports:
        raise ValueError(f"baseline {baseline!r} not among reports: {sorted(reports)}")
    names = [baseline] + [n for n in sorted(reports) if n != baseline]
    languages = sorted(
        {lang for r in reports.values() for lang in r.per_language if lang != "average"}
    )
    metric = reports[baseline].metric

    lines = [
        "| Language | " + " | ".join(names) + " |",
        "| --- | " + " | ".join("---" for _ in names) + " |",
    ]

    def cell(report: MetricReport, lang: str) -> str:
        entry = report.per_language.get(lang)
        if entry is None:
            return "--"
        return f"{entry[report.rate_key()]:.2f}"

    for lang in languages:
        lines.append(f"| {lang} | " + " | ".join(cell(reports[n], lang) for n in names) + " |")
    avg_cells = [cell(reports[n], "average") for n in names]
    if any(c != "--" for c in avg_cells):
        lines.append("| Average | " + " | ".join(avg_cells) + " |")
    overall = {n: reports[n].overall.get(reports[n].rate_key()) for n in names}
    lines.append(
        "| Overall | "
        + " | ".join("--" if overall[n] is None else f"{overall[n]:.2f}" for n in names)
        + " |"
    )
    base_rate = overall[baseline]
    improvements = []
    for n in names:
        if overall[n] is None or base_rate is None or base_rate <= 0:
            improvements.append("--")
        else:
            improvements.append(_truncate_rate(relative_improvement(base_rate, overall[n])))
    lines.append(f"| Rel. improvement vs {baseline} (%) | " + " | ".join(improvements) + " |")
    header = f"# {metric} comparison\n\n"
    return header + "\n".join(lines) + "\n"
