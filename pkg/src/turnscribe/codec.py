"""Serialization codec for the interleaved speaker / timestamp / text stream.

One decoding window is rendered as a flat token sequence: each turn
contributes a speaker token, a start timestamp, its text, and an end
timestamp, e.g.::

    <|SPK0|> <|0.50|> hello there <|2.10|> <|SPK1|> <|2.48|> hi <|3.00|>

Timestamps are window-relative and quantized to a fixed grid (0.02 s over
[0, 24] s by default). Decoding accepts arbitrary token sequences: model
output is untrusted, so malformed fragments degrade to fewer valid turns
and a ``had_invalid`` flag rather than an error.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace

from .core import (
    TIME_EPS,
    LocalSpeaker,
    PipelineConfig,
    SpeakerTurn,
    TimeInterval,
)

TOKEN_PATTERN = re.compile(r"<\|([^<|>]*)\|>")
_TIMESTAMP_CONTENT = re.compile(r"^\d+(?:\.\d+)?$")
_SPEAKER_CONTENT = re.compile(r"^SPK([01])$")

DEFAULT_SYSTEM_PROMPT = (
    "Transcribe the conversation in this audio window. Label every utterance "
    "with its speaker token and start and end timestamps."
)


@dataclass(frozen=True, slots=True)
class SpeakerToken:
    index: int

    def __post_init__(self) -> None:
        if self.index not in (0, 1):
            raise ValueError(f"speaker token index must be 0 or 1, got {self.index}")


@dataclass(frozen=True, slots=True)
class TimestampToken:
    step: int

    def __post_init__(self) -> None:
        if self.step < 0:
            raise ValueError(f"timestamp step must be >= 0, got {self.step}")


@dataclass(frozen=True, slots=True)
class TextToken:
    piece: str

    def __post_init__(self) -> None:
        if TOKEN_PATTERN.search(self.piece):
            raise ValueError(f"text piece must not contain token markers: {self.piece!r}")


Token = SpeakerToken | TimestampToken | TextToken


@dataclass(frozen=True)
class PromptBundle:
    """Everything the decoder is conditioned on besides the audio window."""

    system_prompt: str
    user_prompt: str | None = None
    speaker_hint: LocalSpeaker | None = None

    @property
    def is_prompt_free(self) -> bool:
        return self.user_prompt is None and self.speaker_hint is None


def quantize_time(t: float, cfg: PipelineConfig) -> int:
    """Map a window-relative time to its grid step, rounding half away from zero."""
    if t < -TIME_EPS or t > cfg.timestamp_max_s + TIME_EPS:
        raise ValueError(f"time {t} outside [0, {cfg.timestamp_max_s}]")
    t = min(max(t, 0.0), cfg.timestamp_max_s)
    step = int(math.floor(t / cfg.timestamp_resolution_s + 0.5 + TIME_EPS))
    return min(step, cfg.max_timestamp_step)


def dequantize_step(step: int, cfg: PipelineConfig) -> float:
    return step * cfg.timestamp_resolution_s


def render_token(token: Token, cfg: PipelineConfig) -> str:
    if isinstance(token, SpeakerToken):
        return f"<|SPK{token.index}|>"
    if isinstance(token, TimestampToken):
        return f"<|{dequantize_step(token.step, cfg):.2f}|>"
    return token.piece


def render_tokens(tokens: list[Token], cfg: PipelineConfig) -> str:
    """Canonical textual rendering: tokens joined by single spaces."""
    return " ".join(render_token(t, cfg) for t in tokens)


def parse_token_stream(text: str, cfg: PipelineConfig) -> list[Token]:
    """Parse a rendered stream back into tokens.

    Unrecognized ``<|...|>`` markers are dropped; anything between markers
    becomes one text piece with surrounding separator whitespace stripped.
    """
    tokens: list[Token] = []
    pos = 0
    for match in TOKEN_PATTERN.finditer(text):
        gap = text[pos : match.start()].strip()
        if gap:
            tokens.append(TextToken(gap))
        pos = match.end()
        content = match.group(1)
        spk = _SPEAKER_CONTENT.match(content)
        if spk:
            tokens.append(SpeakerToken(int(spk.group(1))))
            continue
        if _TIMESTAMP_CONTENT.match(content):
            step = int(math.floor(float(content) / cfg.timestamp_resolution_s + 0.5 + TIME_EPS))
            if 0 <= step <= cfg.max_timestamp_step:
                tokens.append(TimestampToken(step))
            continue
        # unknown marker: dropped
    tail = text[pos:].strip()
    if tail:
        tokens.append(TextToken(tail))
    return tokens


def encode_window(
    turns: list[SpeakerTurn], window_start: float, cfg: PipelineConfig
) -> list[Token]:
    """Encode turns (absolute times, local labels) as a window-relative token list.

    Every turn must lie inside [window_start, window_start + chunk_duration_s]
    and carry a local speaker label and clean non-empty text.
    """
    window_end = window_start + cfg.chunk_duration_s
    tokens: list[Token] = []
    for turn in turns:
        if not isinstance(turn.speaker, LocalSpeaker):
            raise ValueError(f"encoding requires local speaker labels, got {turn.speaker}")
        if turn.interval.start < window_start - TIME_EPS or turn.interval.end > window_end + TIME_EPS:
            raise ValueError(
                f"turn {turn.interval} outside window [{window_start}, {window_end}]"
            )
        text = turn.text
        if not text or text != text.strip():
            raise ValueError(f"turn text must be non-empty without outer whitespace: {text!r}")
        tokens.append(SpeakerToken(turn.speaker.index))
        tokens.append(TimestampToken(quantize_time(turn.interval.start - window_start, cfg)))
        tokens.append(TextToken(text))
        tokens.append(TimestampToken(quantize_time(turn.interval.end - window_start, cfg)))
    return tokens


def decode_window(
    tokens: list[Token], window_start: float, cfg: PipelineConfig
) -> tuple[list[SpeakerTurn], bool]:
    """Greedily parse speaker/start/text/end quadruples into absolute-time turns.

    Returns the recovered valid turns and a flag set whenever anything had to
    be dropped: a candidate missing its speaker, start, or end timestamp, an
    empty or non-positive-duration turn, or stray tokens outside any turn.
    A new speaker token always starts a new candidate, aborting an unfinished
    one. Never raises on malformed input.
    """
    turns: list[SpeakerTurn] = []
    had_invalid = False
    speaker: int | None = None
    start_step: int | None = None
    pieces: list[str] = []

    for token in tokens:
        if isinstance(token, SpeakerToken):
            if speaker is not None:
                had_invalid = True
            speaker = token.index
            start_step = None
            pieces = []
        elif isinstance(token, TimestampToken):
            if speaker is None:
                had_invalid = True
            elif start_step is None:
                start_step = token.step
            else:
                start = window_start + dequantize_step(start_step, cfg)
                end = window_start + dequantize_step(token.step, cfg)
                text = " ".join(pieces)
                if end - start > TIME_EPS and text:
                    turns.append(
                        SpeakerTurn(LocalSpeaker(speaker), TimeInterval(start, end), text)
                    )
                else:
                    had_invalid = True
                speaker = None
                start_step = None
                pieces = []
        else:
            if speaker is None or start_step is None:
                had_invalid = True
            else:
                pieces.append(token.piece)

    if speaker is not None:
        had_invalid = True
    return turns, had_invalid


def canonicalize_speakers(
    turns: list[SpeakerTurn], hint: LocalSpeaker | None = None
) -> list[SpeakerTurn]:
    """Relabel local speakers consistently: the first turn's speaker becomes
    SPK0 (or the hint), the other underlying speaker gets the remaining token.

    Order, intervals, and text are untouched. Idempotent when no hint is given.
    """
    distinct: list[int] = []
    for turn in turns:
        if not isinstance(turn.speaker, LocalSpeaker):
            raise ValueError(f"canonicalization requires local labels, got {turn.speaker}")
        if turn.speaker.index not in distinct:
            distinct.append(turn.speaker.index)
    if len(distinct) > 2:
        raise ValueError(f"more than two distinct speakers: {distinct}")
    if not turns:
        return []
    target = hint.index if hint is not None else 0
    mapping = {distinct[0]: target}
    if len(distinct) > 1:
        mapping[distinct[1]] = 1 - target
    return [replace(t, speaker=LocalSpeaker(mapping[t.speaker.index])) for t in turns]


def build_prompt(
    history: list[SpeakerTurn],
    hint: LocalSpeaker | None,
    cfg: PipelineConfig,
    system_prompt: str = DEFAULT_SYSTEM_PROMPT,
) -> PromptBundle:
    """Render the most recent history turns as dialogue lines plus the hint.

    The rendered prompt carries speaker tokens and text only; timestamps from
    earlier windows live in a different time base and are omitted. An empty
    history with no hint yields the prompt-free bundle.
    """
    recent = history[-cfg.history_turns :] if cfg.history_turns > 0 else []
    user_prompt: str | None = None
    if recent:
        lines = []
        for turn in recent:
            if not isinstance(turn.speaker, LocalSpeaker):
                raise ValueError(f"history requires local labels, got {turn.speaker}")
            lines.append(f"<|SPK{turn.speaker.index}|> {turn.text}")
        user_prompt = "\n".join(lines)
    return PromptBundle(system_prompt=system_prompt, user_prompt=user_prompt, speaker_hint=hint)
