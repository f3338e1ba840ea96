"""Iterative window-by-window inference over a session with a pluggable decoder.

The loop mirrors how a conversation unfolds: decode one audio window, keep
every turn except the provisional last one, restart the next window at the
second-to-last turn's end so the provisional turn is re-decoded with full
context, and carry recent dialogue history plus the predicted next speaker
forward. Windows with no valid output advance by a small fixed offset so the
loop always terminates, whatever the decoder returns.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol

from .codec import (
    DEFAULT_SYSTEM_PROMPT,
    PromptBundle,
    SpeakerToken,
    TextToken,
    TimestampToken,
    Token,
    build_prompt,
    canonicalize_speakers,
    decode_window,
    encode_window,
    parse_token_stream,
    render_tokens,
)
from .core import (
    TIME_EPS,
    LocalSpeaker,
    PipelineConfig,
    SessionTranscript,
    SpeakerTurn,
    TimeInterval,
    normalize_transcript,
    session_duration,
    turn_sort_key,
)


@dataclass(frozen=True)
class DecoderRequest:
    """One decoding call: an audio window plus its conditioning."""

    session_id: str
    window_start: float
    window_duration: float
    audio_reference: str | None = None
    system_prompt: str = DEFAULT_SYSTEM_PROMPT
    user_prompt: str | None = None
    speaker_hint: LocalSpeaker | None = None


@dataclass(frozen=True)
class DecoderResponse:
    """Raw decoder output: the canonical token-stream rendering. Untrusted."""

    tokens: str


class Decoder(Protocol):
    def decode(self, request: DecoderRequest) -> DecoderResponse: ...


class DecoderTransportError(Exception):
    """The decoder backend could not be reached or failed mid-call."""


class SessionInferenceError(Exception):
    """A session failed partway; carries whatever was committed so far."""

    def __init__(self, message: str, partial: SessionTranscript):
        super().__init__(message)
        self.partial = partial


@dataclass
class OrchestratorState:
    """Per-session inference cursor."""

    window_start: float
    committed: list[SpeakerTurn] = field(default_factory=list)
    history: list[SpeakerTurn] = field(default_factory=list)
    next_hint: LocalSpeaker | None = None
    audio_duration: float = 0.0


def advance_window(
    state: OrchestratorState,
    decoded_turns: list[SpeakerTurn],
    cfg: PipelineConfig,
    is_final_window: bool = False,
) -> float:
    """Next window start per the dynamic advance rule.

    With two or more decoded turns the window restarts at the second-to-last
    turn's end; with exactly one, at that turn's end; with none, a small fixed
    offset is added. After a final window (which commits everything) the
    cursor moves past the last turn instead, so committed audio is never
    re-entered. A minimum-advance guard makes progress unconditional.
    """
    ws = state.window_start
    if not decoded_turns:
        computed = ws + cfg.fallback_advance_s
    elif is_final_window or len(decoded_turns) == 1:
        computed = decoded_turns[-1].interval.end
    else:
        computed = decoded_turns[-2].interval.end
    if computed <= ws + cfg.min_advance_s - TIME_EPS:
        computed = ws + cfg.min_advance_s
    return computed


def commit_turns(
    state: OrchestratorState,
    decoded_turns: list[SpeakerTurn],
    is_final_window: bool,
    cfg: PipelineConfig,
) -> tuple[list[SpeakerTurn], list[SpeakerTurn], LocalSpeaker | None]:
    """Split a window's turns into committed additions, new history, and the
    speaker hint for the next window.

    Non-final windows with two or more turns commit all but the last: the next
    window starts at the second-to-last turn's end, so the last turn is
    provisional and will be re-decoded there. Its speaker label is the
    prediction for the next window's first turn and becomes the hint. Final or
    single-turn windows commit everything; after those there is no reliable
    prediction, so no hint is produced (an empty window keeps the current one).
    """
    if not decoded_turns:
        additions: list[SpeakerTurn] = []
        hint = state.next_hint
    elif is_final_window or len(decoded_turns) == 1:
        additions = list(decoded_turns)
        hint = None
    else:
        additions = decoded_turns[:-1]
        hint = decoded_turns[-1].speaker  # type: ignore[assignment]
    committed = state.committed + additions
    history = committed[-cfg.history_turns :] if cfg.history_turns > 0 else []
    return additions, history, hint


WindowObserver = Callable[[OrchestratorState, DecoderRequest, list[SpeakerTurn], list[SpeakerTurn]], None]


def run_session(
    decoder: Decoder,
    session_id: str,
    audio_duration: float,
    cfg: PipelineConfig,
    *,
    language: str = "und",
    audio_reference: str | None = None,
    system_prompt: str = DEFAULT_SYSTEM_PROMPT,
    on_window: WindowObserver | None = None,
) -> SessionTranscript:
    """Drive the decoder over the whole session and return the transcript.

    The first window (more precisely: while nothing has been committed and no
    hint exists) is prompt-free and its first detected speaker is relabeled
    SPK0. Later windows carry the recent history and, when available, the
    predicted next speaker, against which decoded labels are re-anchored;
    without a hint the decoder's own labels are trusted.

    Raises ``SessionInferenceError`` (carrying the partial transcript) if the
    decoder transport fails. Guaranteed to terminate within
    ceil(audio_duration / min_advance_s) + 1 iterations for any decoder.
    """
    if not (audio_duration > 0):
        raise ValueError(f"audio_duration must be positive, got {audio_duration}")
    state = OrchestratorState(window_start=0.0, audio_duration=audio_duration)
    max_iterations = int(math.ceil(audio_duration / cfg.min_advance_s)) + 1
    iterations = 0

    while state.window_start < audio_duration - TIME_EPS and iterations < max_iterations:
        iterations += 1
        window_duration = min(cfg.chunk_duration_s, audio_duration - state.window_start)
        is_final = state.window_start + cfg.chunk_duration_s >= audio_duration - TIME_EPS

        if not state.committed and state.next_hint is None:
            bundle = build_prompt([], None, cfg, system_prompt)
        else:
            bundle = build_prompt(state.history, state.next_hint, cfg, system_prompt)
        request = DecoderRequest(
            session_id=session_id,
            window_start=state.window_start,
            window_duration=window_duration,
            audio_reference=audio_reference,
            system_prompt=bundle.system_prompt,
            user_prompt=bundle.user_prompt,
            speaker_hint=bundle.speaker_hint,
        )
        try:
            response = decoder.decode(request)
        except DecoderTransportError as exc:
            partial = normalize_transcript(
                SessionTranscript(session_id, language, list(state.committed), audio_duration)
            )
            raise SessionInferenceError(
                f"decoder transport failed at window {state.window_start:.2f}s: {exc}", partial
            ) from exc

        tokens = parse_token_stream(response.tokens, cfg)
        decoded, _ = decode_window(tokens, state.window_start, cfg)
        limit = state.window_start + window_duration + cfg.timestamp_resolution_s / 2 + TIME_EPS
        decoded = [t for t in decoded if t.interval.end <= limit]
        decoded.sort(key=turn_sort_key)
        if decoded:
            if state.next_hint is not None:
                decoded = canonicalize_speakers(decoded, state.next_hint)
            elif not state.committed:
                decoded = canonicalize_speakers(decoded, None)
            # otherwise: trust the decoder's history-conditioned labels

        additions, history, hint = commit_turns(state, decoded, is_final, cfg)
        new_start = advance_window(state, decoded, cfg, is_final_window=is_final)
        if on_window is not None:
            on_window(state, request, decoded, additions)
        state = OrchestratorState(
            window_start=new_start,
            committed=state.committed + additions,
            history=history,
            next_hint=hint,
            audio_duration=audio_duration,
        )

    return normalize_transcript(
        SessionTranscript(session_id, language, state.committed, audio_duration)
    )


@dataclass(frozen=True)
class OracleDecoderConfig:
    """Simulated decoder backed by a reference transcript, with optional
    seeded corruptions standing in for model failure modes."""

    reference: SessionTranscript
    hallucination_prob: float = 0.0
    speaker_flip_prob: float = 0.0
    time_jitter_s: float = 0.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        for name in ("hallucination_prob", "speaker_flip_prob"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.time_jitter_s < 0:
            raise ValueError("time_jitter_s must be >= 0")


def _window_rng(ocfg: OracleDecoderConfig, request: DecoderRequest) -> random.Random:
    return random.Random(f"{ocfg.rng_seed}|{request.session_id}|{request.window_start:.6f}")


def oracle_decode(
    request: DecoderRequest, ocfg: OracleDecoderConfig, cfg: PipelineConfig
) -> DecoderResponse:
    """Emit the encoding of every reference turn fully inside the window.

    Turns spanning the window edge are deferred to a later window, mimicking a
    decoder that cannot transcribe unheard audio. Corruptions are drawn from a
    generator seeded by (seed, session, window start), so identical requests
    always produce identical responses.
    """
    rng = _window_rng(ocfg, request)
    w_start = request.window_start
    w_end = request.window_start + request.window_duration
    contained = [
        t
        for t in ocfg.reference.turns
        if t.interval.start >= w_start - TIME_EPS and t.interval.end <= w_end + TIME_EPS
    ]
    contained.sort(key=turn_sort_key)

    if rng.random() < ocfg.hallucination_prob:
        text = contained[0].text if contained else "hm"
        broken: list[Token] = [SpeakerToken(0), TimestampToken(0), TextToken(text)]
        return DecoderResponse(tokens=render_tokens(broken, cfg))

    if contained and rng.random() < ocfg.speaker_flip_prob:
        victim = rng.randrange(len(contained))
        turn = contained[victim]
        assert isinstance(turn.speaker, LocalSpeaker)
        contained[victim] = replace(turn, speaker=turn.speaker.other)

    if ocfg.time_jitter_s > 0:
        jittered = []
        for turn in contained:
            ds = rng.uniform(-ocfg.time_jitter_s, ocfg.time_jitter_s)
            de = rng.uniform(-ocfg.time_jitter_s, ocfg.time_jitter_s)
            start = min(max(turn.interval.start + ds, w_start), w_end)
            end = min(max(turn.interval.end + de, w_start), w_end)
            if end - start > TIME_EPS:
                jittered.append(replace(turn, interval=TimeInterval(start, end)))
            else:
                jittered.append(turn)
        contained = jittered

    return DecoderResponse(tokens=render_tokens(encode_window(contained, w_start, cfg), cfg))


class OracleDecoder:
    """Decoder backend serving one or more reference transcripts."""

    def __init__(
        self,
        references: SessionTranscript | list[SessionTranscript],
        cfg: PipelineConfig,
        *,
        hallucination_prob: float = 0.0,
        speaker_flip_prob: float = 0.0,
        time_jitter_s: float = 0.0,
        rng_seed: int = 0,
    ):
        if isinstance(references, SessionTranscript):
            references = [references]
        self._cfg = cfg
        self._configs = {
            ref.session_id: OracleDecoderConfig(
                reference=ref,
                hallucination_prob=hallucination_prob,
                speaker_flip_prob=speaker_flip_prob,
                time_jitter_s=time_jitter_s,
                rng_seed=rng_seed,
            )
            for ref in references
        }

    def decode(self, request: DecoderRequest) -> DecoderResponse:
        ocfg = self._configs.get(request.session_id)
        if ocfg is None:
            raise ValueError(f"no reference transcript for session {request.session_id!r}")
        return oracle_decode(request, ocfg, self._cfg)


def infer_session(
    decoder: Decoder, reference: SessionTranscript, cfg: PipelineConfig, **kwargs
) -> SessionTranscript:
    """Convenience wrapper: run a session whose length comes from its reference."""
    return run_session(
        decoder,
        reference.session_id,
        session_duration(reference),
        cfg,
        language=reference.language,
        **kwargs,
    )
