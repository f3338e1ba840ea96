"""Error-rate metrics for multi-talker transcription and diarization.

Covers plain WER/CER, speaker-attributed rates (cpWER, time-constrained
cpWER, optimal-reference-combination WER), and diarization error rate with a
boundary collar. All rates are percentages of reference length and may exceed
100. Word-timing for time-constrained matching uses pseudo-word intervals:
each segment's span divided equally among its tokens.

Speaker-mapping searches use an optimal assignment solve, which is exact
because total errors decompose per matched stream pair; brute-force
enumeration is then only needed as a test oracle.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import regex as _regex
from scipy.optimize import linear_sum_assignment

from .core import TIME_EPS, TimeInterval, speaker_key

_GRAPHEME = _regex.compile(r"\X")

#: Languages scored on characters (grapheme clusters) instead of words.
CHAR_MODE_LANGUAGES = frozenset({"ja", "jp", "ko", "th"})

WORD_MODE = "word"
CHAR_MODE = "char"


def grapheme_clusters(text: str) -> list[str]:
    """Split into Unicode extended grapheme clusters."""
    return _GRAPHEME.findall(text)


def tokenize(text_or_units: str | Sequence[str], mode: str = WORD_MODE) -> list[str]:
    """Scoring units for a transcript: whitespace-split words, or grapheme
    clusters with all whitespace removed. Pre-tokenized input passes through."""
    if not isinstance(text_or_units, str):
        return list(text_or_units)
    if mode == WORD_MODE:
        return text_or_units.split()
    if mode == CHAR_MODE:
        return grapheme_clusters("".join(text_or_units.split()))
    raise ValueError(f"unknown token mode {mode!r}")


def mode_for_language(language: str, override: str | None = None) -> str:
    if override is not None:
        return override
    return CHAR_MODE if language.lower() in CHAR_MODE_LANGUAGES else WORD_MODE


@dataclass(frozen=True, slots=True)
class WordToken:
    """A scoring unit with its pseudo-word time interval."""

    text: str
    interval: TimeInterval

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("word token text must be non-empty")


@dataclass(frozen=True)
class ErrorCounts:
    """Standard edit-distance decomposition against a reference."""

    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    hits: int = 0
    reference_length: int = 0

    def __post_init__(self) -> None:
        if min(self.substitutions, self.deletions, self.insertions, self.hits) < 0:
            raise ValueError("error counts must be non-negative")
        if self.hits + self.substitutions + self.deletions != self.reference_length:
            raise ValueError(
                f"hits + substitutions + deletions must equal reference length: {self}"
            )

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    def __add__(self, other: "ErrorCounts") -> "ErrorCounts":
        return ErrorCounts(
            self.substitutions + other.substitutions,
            self.deletions + other.deletions,
            self.insertions + other.insertions,
            self.hits + other.hits,
            self.reference_length + other.reference_length,
        )


def _rate(errors: int, reference_length: int) -> float:
    """Percentage convention: errors over reference length; an empty reference
    with a non-empty hypothesis counts insertions over a unit length."""
    if reference_length > 0:
        return 100.0 * errors / reference_length
    return 100.0 * errors


def _word_ids(units: Sequence[str], table: dict[str, int]) -> np.ndarray:
    return np.array([table.setdefault(u, len(table)) for u in units], dtype=np.int64)


def _row_update(prev: np.ndarray, diag_penalty: np.ndarray, row_head: int) -> np.ndarray:
    """One row of the edit DP with the insertion closure vectorized:
    cur[j] = min(prev[j-1] + diag_penalty[j-1], prev[j] + 1, cur[j-1] + 1)."""
    m1 = prev.shape[0]
    idx = np.arange(m1)
    tmp = np.empty(m1, dtype=prev.dtype)
    tmp[0] = row_head
    tmp[1:] = np.minimum(prev[:-1] + diag_penalty, prev[1:] + 1)
    return np.minimum.accumulate(tmp - idx) + idx


def _edit_matrix(rid: list[int], hid: np.ndarray, penalty: np.ndarray | None = None) -> np.ndarray:
    """Full unit-cost edit DP matrix; ``penalty`` overrides the diagonal cost
    (0 match / 1 substitution / large = inadmissible), shape (len(ref), len(hyp))."""
    n, m = len(rid), len(hid)
    cost = np.zeros((n + 1, m + 1), dtype=np.int64)
    cost[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        if penalty is None:
            diag = (hid != rid[i - 1]).astype(np.int64)
        else:
            diag = penalty[i - 1]
        cost[i] = _row_update(cost[i - 1], diag, i)
    return cost


_INADMISSIBLE = np.int64(10**9)


def _traceback(
    cost: np.ndarray, rid: list[int], hid: np.ndarray, penalty: np.ndarray | None = None
) -> ErrorCounts:
    """Deterministic alignment readout preferring match > substitution >
    deletion > insertion on cost ties."""
    i, j = len(rid), len(hid)
    hits = subs = dels = ins = 0
    while i > 0 or j > 0:
        diag = None
        if i > 0 and j > 0:
            diag = penalty[i - 1][j - 1] if penalty is not None else int(hid[j - 1] != rid[i - 1])
        if diag == 0 and cost[i, j] == cost[i - 1, j - 1]:
            hits += 1
            i -= 1
            j -= 1
        elif diag == 1 and cost[i, j] == cost[i - 1, j - 1] + 1:
            subs += 1
            i -= 1
            j -= 1
        elif i > 0 and cost[i, j] == cost[i - 1, j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return ErrorCounts(subs, dels, ins, hits, len(rid))


def _counts_from_ids(rid: list[int], hid: np.ndarray) -> ErrorCounts:
    cost = _edit_matrix(rid, hid)
    return _traceback(cost, rid, hid)


def edit_align(ref: Sequence[str], hyp: Sequence[str]) -> ErrorCounts:
    """Minimal-cost alignment of hypothesis units onto reference units."""
    table: dict[str, int] = {}
    rid = [table.setdefault(u, len(table)) for u in ref]
    hid = _word_ids(hyp, table)
    return _counts_from_ids(rid, hid)


def wer(ref: str | Sequence[str], hyp: str | Sequence[str], mode: str = WORD_MODE) -> float:
    """Plain word (or character) error rate, speaker-agnostic."""
    counts = edit_align(tokenize(ref, mode), tokenize(hyp, mode))
    return _rate(counts.errors, counts.reference_length)


# ---------------------------------------------------------------------------
# Speaker-mapped rates
# ---------------------------------------------------------------------------


def _assignment_minimum(
    ref_names: list[str],
    hyp_names: list[str],
    pair_counts,
) -> tuple[ErrorCounts, dict[str, str]]:
    """Minimize total errors over injective speaker mappings, padding the
    smaller side with empty streams. ``pair_counts(j, i)`` returns the
    ErrorCounts of hyp stream i scored against ref stream j (negative index =
    padded empty stream)."""
    n = max(len(ref_names), len(hyp_names), 1)
    counts_matrix: list[list[ErrorCounts]] = []
    cost = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        row = []
        for j in range(n):
            c = pair_counts(j if j < len(ref_names) else -1, i if i < len(hyp_names) else -1)
            row.append(c)
            cost[i, j] = c.errors
        counts_matrix.append(row)
    rows, cols = linear_sum_assignment(cost)
    total = ErrorCounts()
    mapping: dict[str, str] = {}
    for i, j in zip(rows, cols):
        total = total + counts_matrix[i][j]
        if i < len(hyp_names) and j < len(ref_names):
            mapping[hyp_names[i]] = ref_names[j]
    return total, mapping


def cpwer_counts(
    ref_streams: Mapping[str, str | Sequence[str]],
    hyp_streams: Mapping[str, str | Sequence[str]],
    mode: str = WORD_MODE,
) -> tuple[ErrorCounts, dict[str, str]]:
    """Concatenated minimum-permutation error counts plus the best mapping."""
    ref_names = sorted(ref_streams)
    hyp_names = sorted(hyp_streams)
    refs = {k: tokenize(v, mode) for k, v in ref_streams.items()}
    hyps = {k: tokenize(v, mode) for k, v in hyp_streams.items()}

    def pair(j: int, i: int) -> ErrorCounts:
        r = refs[ref_names[j]] if j >= 0 else []
        h = hyps[hyp_names[i]] if i >= 0 else []
        return edit_align(r, h)

    return _assignment_minimum(ref_names, hyp_names, pair)


def cpwer(
    ref_streams: Mapping[str, str | Sequence[str]],
    hyp_streams: Mapping[str, str | Sequence[str]],
    mode: str = WORD_MODE,
) -> tuple[float, dict[str, str]]:
    """Concatenated minimum-permutation WER: per-speaker streams, error rate
    minimized over injective speaker mappings."""
    counts, mapping = cpwer_counts(ref_streams, hyp_streams, mode)
    return _rate(counts.errors, counts.reference_length), mapping


def pseudo_word_times(segment, mode: str = WORD_MODE) -> list[WordToken]:
    """Divide a segment's interval equally among its scoring units, in order.

    ``segment`` needs ``interval`` and ``text`` attributes; empty text yields
    an empty list.
    """
    units = tokenize(segment.text, mode)
    if not units:
        return []
    s, e = segment.interval.start, segment.interval.end
    span = e - s
    n = len(units)
    return [
        WordToken(u, TimeInterval(s + span * k / n, s + span * (k + 1) / n))
        for k, u in enumerate(units)
    ]


def _timed_counts(
    ref_words: list[WordToken], hyp_words: list[WordToken], collar: float
) -> ErrorCounts:
    """Edit counts where a hypothesis word may match or substitute a reference
    word only if its interval overlaps the reference word's interval extended
    by the collar on both sides; inadmissible pairs fall back to
    deletion + insertion."""
    table: dict[str, int] = {}
    rid = [table.setdefault(w.text, len(table)) for w in ref_words]
    hid = _word_ids([w.text for w in hyp_words], table)
    n, m = len(rid), len(hid)
    if n == 0 or m == 0:
        return ErrorCounts(0, n, m, 0, n)
    rs = np.array([w.interval.start for w in ref_words])
    re_ = np.array([w.interval.end for w in ref_words])
    hs = np.array([w.interval.start for w in hyp_words])
    he = np.array([w.interval.end for w in hyp_words])
    if math.isinf(collar):
        admissible = np.ones((n, m), dtype=bool)
    else:
        admissible = (hs[None, :] <= re_[:, None] + collar + TIME_EPS) & (
            he[None, :] >= rs[:, None] - collar - TIME_EPS
        )
    eq = hid[None, :] == np.array(rid)[:, None]
    penalty = np.where(admissible, np.where(eq, 0, 1), _INADMISSIBLE)
    cost = _edit_matrix(rid, hid, penalty)
    return _traceback(cost, rid, hid, penalty)


def _speaker_words(segments: Iterable, mode: str) -> dict[str, list[WordToken]]:
    ordered = sorted(segments, key=lambda s: (s.interval.start, s.interval.end))
    streams: dict[str, list[WordToken]] = {}
    for seg in ordered:
        streams.setdefault(speaker_key(seg.speaker), []).extend(pseudo_word_times(seg, mode))
    return streams


def tcpwer_counts(
    ref_segments: Iterable,
    hyp_segments: Iterable,
    collar: float,
    mode: str = WORD_MODE,
) -> tuple[ErrorCounts, dict[str, str]]:
    ref_words = _speaker_words(ref_segments, mode)
    hyp_words = _speaker_words(hyp_segments, mode)
    ref_names = sorted(ref_words)
    hyp_names = sorted(hyp_words)

    def pair(j: int, i: int) -> ErrorCounts:
        r = ref_words[ref_names[j]] if j >= 0 else []
        h = hyp_words[hyp_names[i]] if i >= 0 else []
        return _timed_counts(r, h, collar)

    return _assignment_minimum(ref_names, hyp_names, pair)


def tcpwer(
    ref_segments: Iterable,
    hyp_segments: Iterable,
    collar: float,
    mode: str = WORD_MODE,
) -> tuple[float, dict[str, str]]:
    """Time-constrained concatenated minimum-permutation WER (or CER).

    With an infinite collar every pair is admissible and the result equals
    ``cpwer`` on the same streams.
    """
    counts, mapping = tcpwer_counts(ref_segments, hyp_segments, collar, mode)
    return _rate(counts.errors, counts.reference_length), mapping


# ---------------------------------------------------------------------------
# Optimal reference combination
# ---------------------------------------------------------------------------


def _transduce_axis(
    level: np.ndarray, utt_ids: list[int], stream_ids: np.ndarray, axis: int
) -> np.ndarray:
    """min-plus edit transduction along one stream axis:

    out[..., q, ...] = min over p <= q of level[..., p, ...] + ed(utt, stream[p:q]).
    """
    V = np.moveaxis(level, axis, -1)
    size = V.shape[-1]
    idx = np.arange(size)
    R = np.minimum.accumulate(V - idx, axis=-1) + idx
    for wid in utt_ids:
        neq = (stream_ids != wid).astype(R.dtype)
        tmp = R + 1.0
        tmp[..., 1:] = np.minimum(tmp[..., 1:], R[..., :-1] + neq)
        R = np.minimum.accumulate(tmp - idx, axis=-1) + idx
    return np.moveaxis(R, -1, axis)


def _suffix_edit_costs(utt_ids: list[int], prefix_ids: np.ndarray) -> np.ndarray:
    """costs[p] = ed(utt, prefix[p:]) for every start position p."""
    rev = prefix_ids[::-1]
    size = len(rev) + 1
    idx = np.arange(size)
    R = idx.astype(np.float64)
    for wid in reversed(utt_ids):
        neq = (rev != wid).astype(np.float64)
        tmp = R + 1.0
        tmp[1:] = np.minimum(tmp[1:], R[:-1] + neq)
        R = np.minimum.accumulate(tmp - idx) + idx
    return R[::-1]


def orcwer_counts(
    ref_utterances: Sequence[str | Sequence[str]],
    hyp_streams: Mapping[str, str | Sequence[str]],
    mode: str = WORD_MODE,
) -> tuple[ErrorCounts, list[str | None]]:
    """Minimum total error counts over assignments of each reference utterance
    to one hypothesis stream (order preserved within a stream), plus the
    best assignment.

    Exact dynamic program over (utterance index, per-stream consumed-word
    positions); total errors decompose because edit distance against a
    concatenated reference splits at some hypothesis position.
    """
    table: dict[str, int] = {}
    utts = [
        [table.setdefault(u, len(table)) for u in tokenize(raw, mode)] for raw in ref_utterances
    ]
    ref_len = sum(len(u) for u in utts)
    names = sorted(hyp_streams)
    unit_lists = {k: tokenize(hyp_streams[k], mode) for k in names}
    if not names:
        counts = ErrorCounts(0, ref_len, 0, 0, ref_len)
        return counts, [None] * len(utts)
    ids = [np.array([table.setdefault(u, len(table)) for u in unit_lists[k]]) for k in names]
    lengths = [len(a) for a in ids]

    shape = tuple(l + 1 for l in lengths)
    level = np.full(shape, np.inf)
    level[(0,) * len(names)] = 0.0
    levels = [level]
    for utt in utts:
        level = np.min(
            np.stack([_transduce_axis(level, utt, ids[s], axis=s) for s in range(len(names))]),
            axis=0,
        )
        levels.append(level)

    leftover = np.zeros(shape)
    for s, l in enumerate(lengths):
        axis_shape = [1] * len(names)
        axis_shape[s] = l + 1
        leftover = leftover + (l - np.arange(l + 1)).reshape(axis_shape)
    final = levels[-1] + leftover
    best_flat = int(np.argmin(final))
    pos = list(np.unravel_index(best_flat, shape))

    assignment: list[str | None] = [None] * len(utts)
    for k in range(len(utts), 0, -1):
        target = levels[k][tuple(pos)]
        placed = False
        for s in range(len(names)):
            suffix = _suffix_edit_costs(utts[k - 1], ids[s][: pos[s]])
            slicer = list(pos)
            slicer[s] = slice(0, pos[s] + 1)
            candidates = levels[k - 1][tuple(slicer)] + suffix
            j = int(np.argmin(candidates))
            if abs(candidates[j] - target) < 1e-6:
                assignment[k - 1] = names[s]
                pos[s] = j
                placed = True
                break
        if not placed:
            raise RuntimeError("assignment reconstruction failed")

    total = ErrorCounts()
    for s, name in enumerate(names):
        concat = [w for k, utt in enumerate(utts) if assignment[k] == name for w in utt]
        total = total + _counts_from_ids(concat, ids[s])
    return total, assignment


def orcwer(
    ref_utterances: Sequence[str | Sequence[str]],
    hyp_streams: Mapping[str, str | Sequence[str]],
    mode: str = WORD_MODE,
) -> tuple[float, list[str | None]]:
    """Optimal-reference-combination WER: each reference utterance is routed
    to the hypothesis stream that minimizes total errors."""
    counts, assignment = orcwer_counts(ref_utterances, hyp_streams, mode)
    return _rate(counts.errors, counts.reference_length), assignment


# ---------------------------------------------------------------------------
# Diarization error rate
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DerComponents:
    """Time decomposition of diarization errors, in seconds."""

    missed_s: float = 0.0
    false_alarm_s: float = 0.0
    confusion_s: float = 0.0
    scored_speech_s: float = 0.0
    scored_hyp_s: float = 0.0

    @property
    def error_s(self) -> float:
        return self.missed_s + self.false_alarm_s + self.confusion_s

    @property
    def empty_reference(self) -> bool:
        return self.scored_speech_s <= TIME_EPS and self.scored_hyp_s > TIME_EPS

    def rate_pct(self) -> float:
        if self.scored_speech_s > TIME_EPS:
            return 100.0 * self.error_s / self.scored_speech_s
        if self.scored_hyp_s > TIME_EPS:
            return 100.0 * self.false_alarm_s / self.scored_hyp_s
        return 0.0

    def __add__(self, other: "DerComponents") -> "DerComponents":
        return DerComponents(
            self.missed_s + other.missed_s,
            self.false_alarm_s + other.false_alarm_s,
            self.confusion_s + other.confusion_s,
            self.scored_speech_s + other.scored_speech_s,
            self.scored_hyp_s + other.scored_hyp_s,
        )


def _segment_records(segments: Iterable) -> dict[str, list[tuple[str, float, float]]]:
    by_file: dict[str, list[tuple[str, float, float]]] = {}
    for seg in segments:
        file_id = getattr(seg, "file_id", "")
        by_file.setdefault(file_id, []).append(
            (speaker_key(seg.speaker), seg.interval.start, seg.interval.end)
        )
    return by_file


def _merged_zones(bounds: list[float], collar: float) -> list[tuple[float, float]]:
    if collar <= 0 or not bounds:
        return []
    spans = sorted((b - collar, b + collar) for b in bounds)
    merged = [spans[0]]
    for s, e in spans[1:]:
        if s <= merged[-1][1] + TIME_EPS:
            merged[-1] = (merged[-1][0], max(merged[-1][1], e))
        else:
            merged.append((s, e))
    return merged


def _optimal_speaker_map(
    ref: list[tuple[str, float, float]], hyp: list[tuple[str, float, float]]
) -> dict[str, str]:
    """Hypothesis speaker -> reference speaker maximizing total overlap."""
    ref_names = sorted({r[0] for r in ref})
    hyp_names = sorted({h[0] for h in hyp})
    if not ref_names or not hyp_names:
        return {}
    gain = np.zeros((len(hyp_names), len(ref_names)))
    r_index = {n: i for i, n in enumerate(ref_names)}
    h_index = {n: i for i, n in enumerate(hyp_names)}
    for hn, hs, he in hyp:
        for rn, rs, re_ in ref:
            ov = max(0.0, min(he, re_) - max(hs, rs))
            if ov > 0:
                gain[h_index[hn], r_index[rn]] += ov
    rows, cols = linear_sum_assignment(-gain)
    return {
        hyp_names[i]: ref_names[j]
        for i, j in zip(rows, cols)
        if gain[i, j] > TIME_EPS
    }


def _file_der(
    ref: list[tuple[str, float, float]], hyp: list[tuple[str, float, float]], collar: float
) -> DerComponents:
    mapping = _optimal_speaker_map(ref, hyp)
    zones = _merged_zones([t for _, s, e in ref for t in (s, e)], collar)

    events = sorted(
        {t for _, s, e in ref for t in (s, e)}
        | {t for _, s, e in hyp for t in (s, e)}
        | {t for span in zones for t in span}
    )
    missed = fa = conf = scored = scored_hyp = 0.0
    zone_starts = [z[0] for z in zones]
    for t0, t1 in zip(events, events[1:]):
        dur = t1 - t0
        if dur <= TIME_EPS:
            continue
        mid = (t0 + t1) / 2
        zi = bisect.bisect_right(zone_starts, mid) - 1
        if zi >= 0 and mid < zones[zi][1]:
            continue
        r_active = {("ref", n) for n, s, e in ref if s <= mid < e}
        h_active = {
            ("ref", mapping[n]) if n in mapping else ("hyp", n)
            for n, s, e in hyp
            if s <= mid < e
        }
        nr, nh = len(r_active), len(h_active)
        ncorrect = len(r_active & h_active)
        missed += dur * max(0, nr - nh)
        fa += dur * max(0, nh - nr)
        conf += dur * (min(nr, nh) - ncorrect)
        scored += dur * nr
        scored_hyp += dur * nh
    return DerComponents(missed, fa, conf, scored, scored_hyp)


def der_components(ref_segments: Iterable, hyp_segments: Iterable, collar: float) -> DerComponents:
    """Diarization error decomposition with exact interval arithmetic.

    The optimal per-file speaker mapping maximizes total reference overlap;
    time within +/- collar of any reference segment boundary is excluded from
    scoring; overlapping speech is scored with full speaker multiplicity.
    """
    if collar < 0:
        raise ValueError("collar must be >= 0")
    ref_by_file = _segment_records(ref_segments)
    hyp_by_file = _segment_records(hyp_segments)
    total = DerComponents()
    for file_id in sorted(set(ref_by_file) | set(hyp_by_file)):
        total = total + _file_der(
            ref_by_file.get(file_id, []), hyp_by_file.get(file_id, []), collar
        )
    return total


def der(ref_segments: Iterable, hyp_segments: Iterable, collar: float) -> float:
    """Diarization error rate percentage; see ``der_components``."""
    return der_components(ref_segments, hyp_segments, collar).rate_pct()


def relative_improvement(baseline: float, ours: float) -> float:
    """Percentage reduction relative to a positive baseline rate."""
    if not (baseline > 0):
        raise ValueError(f"baseline must be positive, got {baseline}")
    return 100.0 * (baseline - ours) / baseline
