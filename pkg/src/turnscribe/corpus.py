"""Bit-exact interchange formats and training-sample preparation.

Formats:

* STM: one transcribed segment per line,
  ``file_id channel speaker start end transcript...``; times carry exactly
  three decimals, lines are sorted by (file_id, start). Comment lines start
  with ``;;``.
* RTTM: diarization segments,
  ``SPEAKER file channel onset duration <NA> <NA> speaker <NA> <NA>``;
  non-SPEAKER records are ignored.
* Session JSON: ground-truth interchange,
  ``{"session_id", "language", "duration_s"?, "turns": [{"speaker",
  "start_s", "end_s", "text"}]}`` with speakers "SPK0"/"SPK1" for the
  two-speaker local labels, anything else treated as a global identity.
* Training samples: one JSON object per line pairing a prompt bundle with
  its target token stream for one window.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from pathlib import Path

from .align import RttmSegment, StmSegment
from .codec import (
    DEFAULT_SYSTEM_PROMPT,
    build_prompt,
    canonicalize_speakers,
    encode_window,
    render_tokens,
)
from .core import (
    TIME_EPS,
    GlobalSpeaker,
    LocalSpeaker,
    PipelineConfig,
    SessionTranscript,
    SpeakerLabel,
    SpeakerTurn,
    TimeInterval,
    session_duration,
    speaker_key,
    turn_sort_key,
)

COMMENT_PREFIX = ";;"


class CorpusFormatError(ValueError):
    """A parse or schema violation, carrying the offending location."""


def _decode_text(data: str | bytes) -> str:
    if isinstance(data, bytes):
        return data.decode("utf-8")
    return data


def _parse_speaker(token: str) -> SpeakerLabel:
    if token in ("SPK0", "SPK1"):
        return LocalSpeaker(int(token[-1]))
    return GlobalSpeaker(token)


# ---------------------------------------------------------------------------
# STM
# ---------------------------------------------------------------------------


def parse_stm(data: str | bytes) -> list[StmSegment]:
    segments = []
    for lineno, raw in enumerate(_decode_text(data).splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith(COMMENT_PREFIX):
            continue
        fields = line.split(None, 5)
        if len(fields) < 5:
            raise CorpusFormatError(f"line {lineno}: expected at least 5 fields, got {len(fields)}")
        file_id, channel, speaker, start_s, end_s = fields[:5]
        text = fields[5] if len(fields) > 5 else ""
        try:
            start = float(start_s)
            end = float(end_s)
        except ValueError as exc:
            raise CorpusFormatError(f"line {lineno}: bad time field: {exc}") from None
        if start < 0 or end < 0:
            raise CorpusFormatError(f"line {lineno}: negative time")
        if end <= start:
            raise CorpusFormatError(f"line {lineno}: end {end} does not follow start {start}")
        segments.append(
            StmSegment(file_id, channel, _parse_speaker(speaker), TimeInterval(start, end), text)
        )
    return segments


def write_stm(segments: list[StmSegment], header: str | None = None) -> str:
    lines = []
    if header is not None:
        lines.append(f"{COMMENT_PREFIX} {header}")
    ordered = sorted(segments, key=lambda s: (s.file_id, s.interval.start, s.interval.end))
    for seg in ordered:
        lines.append(
            f"{seg.file_id} {seg.channel} {speaker_key(seg.speaker)} "
            f"{seg.interval.start:.3f} {seg.interval.end:.3f} {seg.text}".rstrip()
        )
    return "\n".join(lines) + "\n" if lines else ""


# ---------------------------------------------------------------------------
# RTTM
# ---------------------------------------------------------------------------


def parse_rttm(data: str | bytes) -> list[RttmSegment]:
    segments = []
    for lineno, raw in enumerate(_decode_text(data).splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith(COMMENT_PREFIX):
            continue
        fields = line.split()
        if fields[0] != "SPEAKER":
            continue
        if len(fields) < 8:
            raise CorpusFormatError(f"line {lineno}: expected at least 8 fields, got {len(fields)}")
        file_id, channel, onset_s, duration_s = fields[1], fields[2], fields[3], fields[4]
        speaker = fields[7]
        try:
            onset = float(onset_s)
            duration = float(duration_s)
        except ValueError as exc:
            raise CorpusFormatError(f"line {lineno}: bad time field: {exc}") from None
        if onset < 0:
            raise CorpusFormatError(f"line {lineno}: negative onset")
        if duration <= 0:
            raise CorpusFormatError(f"line {lineno}: duration must be positive, got {duration}")
        segments.append(
            RttmSegment(
                file_id, channel, GlobalSpeaker(speaker), TimeInterval(onset, onset + duration)
            )
        )
    return segments


def write_rttm(segments: list[RttmSegment]) -> str:
    ordered = sorted(
        segments, key=lambda s: (s.file_id, s.interval.start, s.interval.end, s.speaker.name)
    )
    lines = [
        f"SPEAKER {seg.file_id} {seg.channel} {seg.interval.start:.3f} "
        f"{seg.interval.duration:.3f} <NA> <NA> {seg.speaker.name} <NA> <NA>"
        for seg in ordered
    ]
    return "\n".join(lines) + "\n" if lines else ""


# ---------------------------------------------------------------------------
# Session JSON
# ---------------------------------------------------------------------------


def _require(obj: dict, key: str, kind, path: str):
    if key not in obj:
        raise CorpusFormatError(f"{path}.{key}: missing")
    value = obj[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise CorpusFormatError(f"{path}.{key}: expected number, got {type(value).__name__}")
        return float(value)
    if not isinstance(value, kind):
        raise CorpusFormatError(f"{path}.{key}: expected {kind.__name__}, got {type(value).__name__}")
    return value


def parse_session_json(data: str | bytes) -> SessionTranscript:
    try:
        doc = json.loads(_decode_text(data))
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise CorpusFormatError("$: expected object")
    session_id = _require(doc, "session_id", str, "$")
    language = _require(doc, "language", str, "$")
    raw_turns = _require(doc, "turns", list, "$")
    duration = None
    if doc.get("duration_s") is not None:
        duration = _require(doc, "duration_s", float, "$")
    turns = []
    for i, item in enumerate(raw_turns):
        path = f"$.turns[{i}]"
        if not isinstance(item, dict):
            raise CorpusFormatError(f"{path}: expected object")
        speaker = _require(item, "speaker", str, path)
        start = _require(item, "start_s", float, path)
        end = _require(item, "end_s", float, path)
        text = _require(item, "text", str, path)
        try:
            turns.append(
                SpeakerTurn(_parse_speaker(speaker), TimeInterval(start, end), text)
            )
        except ValueError as exc:
            raise CorpusFormatError(f"{path}: {exc}") from None
    try:
        return SessionTranscript(session_id, language, turns, duration)
    except ValueError as exc:
        raise CorpusFormatError(f"$: {exc}") from None


def write_session_json(transcript: SessionTranscript) -> str:
    doc: dict = {
        "session_id": transcript.session_id,
        "language": transcript.language,
    }
    if transcript.duration_s is not None:
        doc["duration_s"] = transcript.duration_s
    doc["turns"] = [
        {
            "speaker": speaker_key(t.speaker),
            "start_s": t.interval.start,
            "end_s": t.interval.end,
            "text": t.text,
        }
        for t in transcript.turns
    ]
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def load_sessions(directory: str | Path) -> list[SessionTranscript]:
    """Parse every ``*.json`` session file in a directory, sorted by name."""
    sessions = []
    for path in sorted(Path(directory).glob("*.json")):
        try:
            sessions.append(parse_session_json(path.read_bytes()))
        except CorpusFormatError as exc:
            raise CorpusFormatError(f"{path.name}: {exc}") from None
    return sessions


# ---------------------------------------------------------------------------
# Training samples
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingSample:
    """One supervised example: a window's prompt bundle and target stream."""

    sample_id: str
    session_id: str
    language: str
    system_prompt: str
    user_prompt: str | None
    speaker_hint: LocalSpeaker | None
    target: str
    window: TimeInterval


def _contained(turns: list[SpeakerTurn], start: float, end: float) -> list[SpeakerTurn]:
    return [
        t
        for t in turns
        if t.interval.start >= start - TIME_EPS and t.interval.end <= end + TIME_EPS
    ]


def prepare_training_samples(
    session: SessionTranscript,
    cfg: PipelineConfig,
    mode: str = "trajectory",
    seed: int = 0,
    count: int | None = None,
    system_prompt: str = DEFAULT_SYSTEM_PROMPT,
) -> list[TrainingSample]:
    """Cut a ground-truth session into per-window training samples.

    Trajectory mode replays the inference windowing on the reference: windows
    start at 0, advance by the second-to-last contained turn's end (single
    turn: its end; empty window: the fallback offset), and each non-empty
    window emits one sample. Random mode draws ``count`` seeded window starts
    uniformly (default: one per chunk of session length).

    The first emitted sample is prompt-free; later samples carry the most
    recent turns as history and the label of the window's first turn as the
    speaker hint, in the label space fixed by the first sample. Empty windows
    emit nothing. Sessions must have at most two (local) speakers.
    """
    turns = sorted(session.turns, key=turn_sort_key)
    for t in turns:
        if not isinstance(t.speaker, LocalSpeaker):
            raise ValueError(f"training preparation requires local labels, got {t.speaker}")
    if len({t.speaker.index for t in turns}) > 2:
        raise ValueError("session has more than two speakers")
    end_of_session = session_duration(session)

    if mode == "trajectory":
        starts = _trajectory_starts(turns, end_of_session, cfg)
    elif mode == "random":
        rng = random.Random(f"{seed}|{session.session_id}")
        n = count if count is not None else max(1, math.ceil(end_of_session / cfg.chunk_duration_s))
        top = max(0.0, end_of_session - cfg.chunk_duration_s)
        starts = sorted(rng.uniform(0.0, top) for _ in range(n))
    else:
        raise ValueError(f"unknown preparation mode {mode!r}")

    samples: list[TrainingSample] = []
    label_map: dict[int, int] | None = None
    for window_start in starts:
        window_end = min(window_start + cfg.chunk_duration_s, max(end_of_session, window_start))
        contained = _contained(turns, window_start, window_end)
        if not contained:
            continue
        if label_map is None:
            first = contained[0].speaker.index
            label_map = {first: 0, 1 - first: 1}
            hint = None
            history: list[SpeakerTurn] = []
        else:
            hint = LocalSpeaker(label_map[contained[0].speaker.index])
            history = [
                SpeakerTurn(
                    LocalSpeaker(label_map[t.speaker.index]), t.interval, t.text
                )
                for t in turns
                if t.interval.end <= window_start + TIME_EPS
            ]
        relabeled = [
            SpeakerTurn(LocalSpeaker(label_map[t.speaker.index]), t.interval, t.text)
            for t in contained
        ]
        bundle = build_prompt(history, hint, cfg, system_prompt)
        target = render_tokens(encode_window(relabeled, window_start, cfg), cfg)
        samples.append(
            TrainingSample(
                sample_id=f"{session.session_id}:{len(samples):04d}",
                session_id=session.session_id,
                language=session.language,
                system_prompt=bundle.system_prompt,
                user_prompt=bundle.user_prompt,
                speaker_hint=bundle.speaker_hint,
                target=target,
                window=TimeInterval(window_start, window_end),
            )
        )
    return samples


def _trajectory_starts(
    turns: list[SpeakerTurn], end_of_session: float, cfg: PipelineConfig
) -> list[float]:
    starts = []
    window_start = 0.0
    limit = int(math.ceil(max(end_of_session, cfg.min_advance_s) / cfg.min_advance_s)) + 1
    while window_start < end_of_session - TIME_EPS and len(starts) < limit:
        starts.append(window_start)
        window_end = window_start + cfg.chunk_duration_s
        contained = _contained(turns, window_start, window_end)
        is_final = window_end >= end_of_session - TIME_EPS
        if len(contained) >= 2 and not is_final:
            computed = contained[-2].interval.end
        elif contained:
            computed = contained[-1].interval.end
        else:
            computed = window_start + cfg.fallback_advance_s
        if computed <= window_start + cfg.min_advance_s - TIME_EPS:
            computed = window_start + cfg.min_advance_s
        window_start = computed
    return starts


def write_training_samples(samples: list[TrainingSample]) -> str:
    lines = []
    for s in samples:
        record = {
            "sample_id": s.sample_id,
            "session_id": s.session_id,
            "language": s.language,
            "system_prompt": s.system_prompt,
            "user_prompt": s.user_prompt,
            "speaker_hint": speaker_key(s.speaker_hint) if s.speaker_hint else None,
            "target": s.target,
            "window_start_s": s.window.start,
            "window_end_s": s.window.end,
        }
        lines.append(json.dumps(record, sort_keys=True, ensure_ascii=False))
    return "\n".join(lines) + "\n" if lines else ""


def parse_training_samples(data: str | bytes) -> list[TrainingSample]:
    samples = []
    for lineno, line in enumerate(_decode_text(data).splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"line {lineno}: invalid JSON: {exc}") from None
        hint = record.get("speaker_hint")
        samples.append(
            TrainingSample(
                sample_id=record["sample_id"],
                session_id=record["session_id"],
                language=record["language"],
                system_prompt=record["system_prompt"],
                user_prompt=record.get("user_prompt"),
                speaker_hint=LocalSpeaker(int(hint[-1])) if hint else None,
                target=record["target"],
                window=TimeInterval(record["window_start_s"], record["window_end_s"]),
            )
        )
    return samples
