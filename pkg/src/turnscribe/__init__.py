"""Windowed two-speaker transcription toolkit.

A library for the full local-window diarization-and-recognition loop around a
pluggable decoder: the interleaved speaker/timestamp/text token format,
iterative window orchestration, grounding of window-local speaker labels in a
global diarization, interchange formats (STM, RTTM, session JSON, training
JSONL), and a scoring suite (WER/CER, cpWER, time-constrained cpWER/cpCER,
optimal-reference-combination WER, DER).
"""

__version__ = "0.1.0"

from .align import RttmSegment, StmSegment, align_transcript, assign_global_speakers, merge_adjacent
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
    quantize_time,
    render_tokens,
)
from .core import (
    GlobalSpeaker,
    LocalSpeaker,
    PipelineConfig,
    SessionTranscript,
    SpeakerLabel,
    SpeakerTurn,
    TimeInterval,
    normalize_transcript,
    overlap,
    session_duration,
    speaker_key,
)
from .corpus import (
    CorpusFormatError,
    TrainingSample,
    load_sessions,
    parse_rttm,
    parse_session_json,
    parse_stm,
    parse_training_samples,
    prepare_training_samples,
    write_rttm,
    write_session_json,
    write_stm,
    write_training_samples,
)
from .metrics import (
    DerComponents,
    ErrorCounts,
    WordToken,
    cpwer,
    der,
    der_components,
    edit_align,
    orcwer,
    pseudo_word_times,
    relative_improvement,
    tcpwer,
    wer,
)
from .orchestrate import (
    Decoder,
    DecoderRequest,
    DecoderResponse,
    DecoderTransportError,
    OracleDecoder,
    OracleDecoderConfig,
    OrchestratorState,
    SessionInferenceError,
    advance_window,
    commit_turns,
    infer_session,
    oracle_decode,
    run_session,
)
from .report import MetricReport, comparison_table, score_corpus
