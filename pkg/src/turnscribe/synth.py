"""Seeded synthetic two-speaker conversations for desk-scale verification.

Generated sessions satisfy the conditions under which windowed inference can
reproduce the reference exactly: every turn is far shorter than the window,
consecutive turns are separated by a real gap (so quantization drift never
swallows a turn), and any two adjacent turns always fit inside one window.
"""

from __future__ import annotations

import random

from .align import RttmSegment
from .core import (
    GlobalSpeaker,
    LocalSpeaker,
    SessionTranscript,
    SpeakerTurn,
    TimeInterval,
)

_WORDS = (
    "okay so anyway the meeting about project update maybe next week we should "
    "review those numbers again before they change something important happens "
    "right now please check with team and send notes later today tomorrow"
).split()

_CHAR_WORDS = "안녕 하세요 네 그래요 좋아요 감사 합니다 오늘 내일 회의 시작 거기 여기서".split()


def make_session(
    session_id: str,
    seed: int,
    *,
    language: str = "en",
    min_turns: int = 10,
    max_turns: int = 40,
    turn_duration_range: tuple[float, float] = (2.0, 8.0),
    gap_range: tuple[float, float] = (0.2, 1.2),
    same_speaker_prob: float = 0.15,
) -> SessionTranscript:
    """One deterministic two-speaker conversation, 60-300 s and 10-40 turns
    with the default ranges."""
    rng = random.Random(f"{seed}|{session_id}")
    turn_target = rng.randint(min_turns, min(max_turns, min_turns + 10))
    duration_target = rng.uniform(70.0, 280.0)
    vocab = _CHAR_WORDS if language in ("ja", "jp", "ko", "th") else _WORDS
    turns: list[SpeakerTurn] = []
    t = round(rng.uniform(0.2, 1.0), 3)
    speaker = 0
    while (len(turns) < turn_target or t < duration_target) and len(turns) < max_turns and t < 280.0:
        duration = rng.uniform(*turn_duration_range)
        n_words = rng.randint(2, 10)
        text = " ".join(rng.choice(vocab) for _ in range(n_words))
        start = round(t, 3)
        end = round(t + duration, 3)
        turns.append(SpeakerTurn(LocalSpeaker(speaker), TimeInterval(start, end), text))
        t = end + rng.uniform(*gap_range)
        if rng.random() >= same_speaker_prob:
            speaker = 1 - speaker
    duration_s = round(turns[-1].interval.end + rng.uniform(0.3, 1.5), 3)
    return SessionTranscript(session_id, language, turns, duration_s)


def make_corpus(
    n_sessions: int,
    seed: int,
    *,
    languages: tuple[str, ...] = ("en",),
    **session_kwargs,
) -> list[SessionTranscript]:
    """A deterministic list of sessions cycling through the given languages."""
    return [
        make_session(
            f"synth{seed:03d}_{i:03d}",
            seed * 1000 + i,
            language=languages[i % len(languages)],
            **session_kwargs,
        )
        for i in range(n_sessions)
    ]


def rttm_from_sessions(sessions: list[SessionTranscript]) -> list[RttmSegment]:
    """Ground-truth diarization: one RTTM segment per turn with per-file
    globally consistent speaker identities."""
    segments = []
    for session in sessions:
        for turn in session.turns:
            assert isinstance(turn.speaker, LocalSpeaker)
            segments.append(
                RttmSegment(
                    file_id=session.session_id,
                    channel="1",
                    speaker=GlobalSpeaker(f"{session.session_id}_spk{turn.speaker.index}"),
                    interval=turn.interval,
                )
            )
    return segments
