"""Core domain types and interval arithmetic for speaker-attributed transcripts.

All times are absolute session seconds stored as floats. Threshold
comparisons (merge epsilon, collars, window containment) share one absolute
tolerance, ``TIME_EPS``, so boundary cases stay deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

TIME_EPS = 1e-9


@dataclass(frozen=True, slots=True)
class TimeInterval:
    """A [start, end] span in seconds. Zero length is allowed."""

    start: float
    end: float

    def __post_init__(self) -> None:
        if not (self.start >= 0.0):
            raise ValueError(f"interval start must be >= 0, got {self.start}")
        if not (self.end >= self.start):
            raise ValueError(f"interval end {self.end} precedes start {self.start}")

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True, slots=True)
class LocalSpeaker:
    """One of the two in-window speaker slots (index 0 or 1)."""

    index: int

    def __post_init__(self) -> None:
        if self.index not in (0, 1):
            raise ValueError(f"local speaker index must be 0 or 1, got {self.index}")

    @property
    def other(self) -> LocalSpeaker:
        return LocalSpeaker(1 - self.index)


@dataclass(frozen=True, slots=True)
class GlobalSpeaker:
    """A session-wide speaker identity, e.g. from an external diarizer."""

    name: str

    def __post_init__(self) -> None:
        if not self.name or any(c.isspace() for c in self.name):
            raise ValueError(f"global speaker name must be non-empty and whitespace-free: {self.name!r}")


SpeakerLabel = LocalSpeaker | GlobalSpeaker


def speaker_key(label: SpeakerLabel) -> str:
    """Stable string key for a speaker label ("SPK0", "SPK1", or the global name)."""
    if isinstance(label, LocalSpeaker):
        return f"SPK{label.index}"
    return label.name


def _speaker_sort_key(label: SpeakerLabel) -> tuple:
    if isinstance(label, LocalSpeaker):
        return (0, label.index, "")
    return (1, 0, label.name)


@dataclass(frozen=True, slots=True)
class SpeakerTurn:
    """One speaker-attributed, time-stamped utterance."""

    speaker: SpeakerLabel
    interval: TimeInterval
    text: str

    def __post_init__(self) -> None:
        if not (self.interval.end > self.interval.start):
            raise ValueError(f"turn must have positive duration: {self.interval}")
        if "\n" in self.text or "\r" in self.text:
            raise ValueError("turn text must not contain newlines")


def turn_sort_key(turn: SpeakerTurn) -> tuple:
    return (turn.interval.start, turn.interval.end, _speaker_sort_key(turn.speaker))


@dataclass(frozen=True)
class SessionTranscript:
    """An ordered collection of turns for one recording session."""

    session_id: str
    language: str
    turns: list[SpeakerTurn] = field(default_factory=list)
    duration_s: float | None = None

    def __post_init__(self) -> None:
        if not self.session_id:
            raise ValueError("session_id must be non-empty")


def session_duration(transcript: SessionTranscript) -> float:
    """Audio length in seconds: explicit duration if present, else last turn end."""
    if transcript.duration_s is not None:
        return transcript.duration_s
    if not transcript.turns:
        return 0.0
    return max(t.interval.end for t in transcript.turns)


@dataclass(frozen=True)
class PipelineConfig:
    """Every tunable constant of the inference and scoring pipeline."""

    chunk_duration_s: float = 24.0
    fallback_advance_s: float = 0.3
    merge_epsilon_s: float = 0.01
    history_turns: int = 4
    tcp_collar_s: float = 5.0
    der_collar_s: float = 0.25
    timestamp_resolution_s: float = 0.02
    timestamp_max_s: float | None = None
    min_advance_s: float = 0.3

    def __post_init__(self) -> None:
        if self.timestamp_max_s is None:
            object.__setattr__(self, "timestamp_max_s", self.chunk_duration_s)
        for name in (
            "chunk_duration_s",
            "fallback_advance_s",
            "merge_epsilon_s",
            "tcp_collar_s",
            "timestamp_resolution_s",
            "timestamp_max_s",
            "min_advance_s",
        ):
            if not (getattr(self, name) > 0):
                raise ValueError(f"{name} must be strictly positive")
        if self.der_collar_s < 0:
            raise ValueError("der_collar_s must be >= 0")
        if self.history_turns < 0:
            raise ValueError("history_turns must be >= 0")
        if self.timestamp_max_s < self.chunk_duration_s - TIME_EPS:
            raise ValueError("timestamp_max_s must cover chunk_duration_s")

    @property
    def max_timestamp_step(self) -> int:
        return int(math.floor(self.timestamp_max_s / self.timestamp_resolution_s + 1e-6))


def overlap(a: TimeInterval, b: TimeInterval) -> float:
    """Length of the intersection of two intervals, 0.0 when disjoint."""
    return max(0.0, min(a.end, b.end) - max(a.start, b.start))


def normalize_transcript(transcript: SessionTranscript) -> SessionTranscript:
    """Sort turns by (start, end, speaker) and drop exact duplicates. Idempotent."""
    seen: set[SpeakerTurn] = set()
    ordered: list[SpeakerTurn] = []
    for turn in sorted(transcript.turns, key=turn_sort_key):
        if turn in seen:
            continue
        seen.add(turn)
        ordered.append(turn)
    return replace(transcript, turns=ordered)
