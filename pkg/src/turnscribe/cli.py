"""Command-line entry point: infer, align, score, prepare, report.

Typical workflow::

    turnscribe infer   --sessions sessions/ --decoder oracle --out hyp.stm
    turnscribe align   --stm hyp.stm --rttm diarization.rttm --out aligned.stm
    turnscribe score   --ref sessions/ --hyp aligned.stm --metric tcpwer --out report.json
    turnscribe report  --reports base.json ours.json --baseline base --out table.md

Exit codes: 0 success, 1 validation error, 2 I/O or transport error. Every
invocation writes a ``<out>.manifest.json`` run manifest. Identical inputs,
configuration, and seed produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .align import StmSegment, align_transcript
from .core import (
    PipelineConfig,
    SessionTranscript,
    SpeakerTurn,
    session_duration,
)
from .corpus import (
    CorpusFormatError,
    load_sessions,
    parse_rttm,
    parse_session_json,
    parse_stm,
    prepare_training_samples,
    write_stm,
    write_training_samples,
)
from .orchestrate import (
    Decoder,
    DecoderTransportError,
    OracleDecoder,
    SessionInferenceError,
    run_session,
)
from .report import MetricReport, comparison_table, score_corpus
from .wire import WireDecoder, parse_endpoint

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


@dataclass
class RunManifest:
    """Provenance record written next to every command's output."""

    command: str
    config_path: str | None
    inputs: list[str]
    outputs: list[str]
    seed: int | None
    tool_version: str = __version__
    wall_time_s: float = 0.0
    failures: list[str] = field(default_factory=list)

    def write(self, out_path: Path) -> None:
        doc = {
            "command": self.command,
            "config_path": self.config_path,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "seed": self.seed,
            "tool_version": self.tool_version,
            "wall_time_s": round(self.wall_time_s, 6),
            "failures": self.failures,
        }
        path = Path(str(out_path) + ".manifest.json")
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_config(path: str | Path | None) -> PipelineConfig:
    """Read a JSON config whose keys mirror PipelineConfig field names."""
    if path is None:
        return PipelineConfig()
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise CorpusFormatError("config must be a JSON object")
    known = set(PipelineConfig.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise CorpusFormatError(f"unknown config keys: {sorted(unknown)}")
    return PipelineConfig(**raw)


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _parallel_map(items, fn, jobs: int):
    """Apply fn over items, optionally threaded; results keep input order."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# infer
# ---------------------------------------------------------------------------


def _build_decoder(
    spec: str, sessions: list[SessionTranscript], cfg: PipelineConfig, args
) -> Decoder:
    if spec == "oracle":
        return OracleDecoder(
            sessions,
            cfg,
            hallucination_prob=args.hallucination_prob,
            speaker_flip_prob=args.speaker_flip_prob,
            time_jitter_s=args.time_jitter_s,
            rng_seed=args.seed,
        )
    if spec.startswith("wire:"):
        host, port = parse_endpoint(spec[len("wire:") :])
        decoder = WireDecoder(host, port)
        decoder.probe()
        return decoder
    raise CorpusFormatError(f"unknown decoder spec {spec!r}; expected 'oracle' or 'wire:host:port'")


def cmd_infer(args) -> int:
    started = time.monotonic()
    manifest = RunManifest(
        command="infer",
        config_path=args.config,
        inputs=[args.sessions],
        outputs=[args.out],
        seed=args.seed,
    )
    try:
        cfg = load_config(args.config)
        sessions = load_sessions(args.sessions)
    except FileNotFoundError as exc:
        return _fail(str(exc), EXIT_IO)
    except (CorpusFormatError, ValueError) as exc:
        return _fail(str(exc), EXIT_VALIDATION)
    try:
        decoder = _build_decoder(args.decoder, sessions, cfg, args)
    except DecoderTransportError as exc:
        return _fail(str(exc), EXIT_IO)
    except (CorpusFormatError, ValueError) as exc:
        return _fail(str(exc), EXIT_VALIDATION)

    transport_failure = False

    def infer_one(session: SessionTranscript):
        try:
            transcript = run_session(
                decoder,
                session.session_id,
                session_duration(session),
                cfg,
                language=session.language,
            )
            return session.session_id, transcript, None
        except SessionInferenceError as exc:
            return session.session_id, exc.partial, str(exc)

    results = _parallel_map(sorted(sessions, key=lambda s: s.session_id), infer_one, args.jobs)
    segments: list[StmSegment] = []
    for session_id, transcript, failure in results:
        if failure is not None:
            manifest.failures.append(f"{session_id}: {failure}")
            transport_failure = True
        for turn in transcript.turns:
            segments.append(
                StmSegment(
                    file_id=session_id,
                    channel="1",
                    speaker=turn.speaker,
                    interval=turn.interval,
                    text=turn.text,
                )
            )

    header = None
    if not segments:
        header = f"empty: {len(sessions)} sessions, no turns decoded"
    Path(args.out).write_text(write_stm(segments, header=header), encoding="utf-8")
    manifest.wall_time_s = time.monotonic() - started
    manifest.write(Path(args.out))
    if manifest.failures:
        for failure in manifest.failures:
            print(f"warning: partial output: {failure}", file=sys.stderr)
        return EXIT_IO if transport_failure else EXIT_VALIDATION
    return EXIT_OK


# ---------------------------------------------------------------------------
# align
# ---------------------------------------------------------------------------


def cmd_align(args) -> int:
    started = time.monotonic()
    manifest = RunManifest(
        command="align",
        config_path=args.config,
        inputs=[args.stm, args.rttm],
        outputs=[args.out],
        seed=None,
    )
    try:
        cfg = load_config(args.config)
        stm = parse_stm(Path(args.stm).read_bytes())
        rttm = parse_rttm(Path(args.rttm).read_bytes())
    except FileNotFoundError as exc:
        return _fail(str(exc), EXIT_IO)
    except CorpusFormatError as exc:
        return _fail(str(exc), EXIT_VALIDATION)
    epsilon = args.epsilon if args.epsilon is not None else cfg.merge_epsilon_s
    aligned = align_transcript(stm, rttm, epsilon)
    Path(args.out).write_text(write_stm(aligned), encoding="utf-8")
    manifest.wall_time_s = time.monotonic() - started
    manifest.write(Path(args.out))
    return EXIT_OK


# ---------------------------------------------------------------------------
# score
# ---------------------------------------------------------------------------


def _load_reference(path_str: str) -> list[SessionTranscript]:
    path = Path(path_str)
    if path.is_dir():
        return load_sessions(path)
    if path.suffix == ".json":
        return [parse_session_json(path.read_bytes())]
    segments = parse_stm(path.read_bytes())
    by_file: dict[str, list[StmSegment]] = {}
    for seg in segments:
        by_file.setdefault(seg.file_id, []).append(seg)
    return [
        SessionTranscript(
            file_id,
            "und",
            [SpeakerTurn(seg.speaker, seg.interval, seg.text) for seg in by_file[file_id]],
        )
        for file_id in sorted(by_file)
    ]


def cmd_score(args) -> int:
    started = time.monotonic()
    manifest = RunManifest(
        command="score",
        config_path=args.config,
        inputs=[args.ref, args.hyp],
        outputs=[args.out],
        seed=None,
    )
    try:
        cfg = load_config(args.config)
        references = _load_reference(args.ref)
        hypothesis = parse_stm(Path(args.hyp).read_bytes())
    except FileNotFoundError as exc:
        return _fail(str(exc), EXIT_IO)
    except CorpusFormatError as exc:
        return _fail(str(exc), EXIT_VALIDATION)

    collar = None
    if args.metric == "tcpwer":
        collar = cfg.tcp_collar_s
    elif args.metric == "der":
        collar = cfg.der_collar_s
    if args.collar is not None:
        collar = math.inf if args.collar.strip().lower() in ("inf", "infinity") else float(args.collar)
    if args.metric in ("tcpwer", "der") and collar is None:
        return _fail(f"metric {args.metric} requires a collar", EXIT_VALIDATION)

    report = score_corpus(
        references, hypothesis, args.metric, collar=collar, mode=args.mode, jobs=args.jobs
    )
    Path(args.out).write_text(report.to_json(), encoding="utf-8")
    manifest.wall_time_s = time.monotonic() - started
    manifest.write(Path(args.out))
    return EXIT_OK


# ---------------------------------------------------------------------------
# prepare
# ---------------------------------------------------------------------------


def cmd_prepare(args) -> int:
    started = time.monotonic()
    manifest = RunManifest(
        command="prepare",
        config_path=args.config,
        inputs=[args.sessions],
        outputs=[args.out],
        seed=args.seed,
    )
    try:
        cfg = load_config(args.config)
        sessions = load_sessions(args.sessions)
    except FileNotFoundError as exc:
        return _fail(str(exc), EXIT_IO)
    except CorpusFormatError as exc:
        return _fail(str(exc), EXIT_VALIDATION)
    try:
        batches = _parallel_map(
            sorted(sessions, key=lambda s: s.session_id),
            lambda s: prepare_training_samples(s, cfg, mode=args.mode, seed=args.seed),
            args.jobs,
        )
    except ValueError as exc:
        return _fail(str(exc), EXIT_VALIDATION)
    samples = [sample for batch in batches for sample in batch]
    Path(args.out).write_text(write_training_samples(samples), encoding="utf-8")
    manifest.wall_time_s = time.monotonic() - started
    manifest.write(Path(args.out))
    return EXIT_OK


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def cmd_report(args) -> int:
    started = time.monotonic()
    manifest = RunManifest(
        command="report",
        config_path=None,
        inputs=list(args.reports),
        outputs=[args.out],
        seed=None,
    )
    reports: dict[str, MetricReport] = {}
    try:
        for path_str in args.reports:
            path = Path(path_str)
            reports[path.stem] = MetricReport.from_json(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        return _fail(str(exc), EXIT_IO)
    except (json.JSONDecodeError, KeyError) as exc:
        return _fail(f"bad report file: {exc}", EXIT_VALIDATION)
    try:
        table = comparison_table(reports, args.baseline)
    except ValueError as exc:
        return _fail(str(exc), EXIT_VALIDATION)
    Path(args.out).write_text(table, encoding="utf-8")
    manifest.wall_time_s = time.monotonic() - started
    manifest.write(Path(args.out))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="turnscribe",
        description="Windowed two-speaker transcription pipeline and scoring toolkit.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    infer = sub.add_parser("infer", help="run windowed inference over sessions")
    infer.add_argument("--sessions", required=True, help="directory of session JSON files")
    infer.add_argument("--decoder", required=True, help="'oracle' or 'wire:host:port'")
    infer.add_argument("--config", default=None, help="pipeline config JSON")
    infer.add_argument("--out", required=True, help="output STM path")
    infer.add_argument("--seed", type=int, default=0)
    infer.add_argument("--hallucination-prob", type=float, default=0.0)
    infer.add_argument("--speaker-flip-prob", type=float, default=0.0)
    infer.add_argument("--time-jitter-s", type=float, default=0.0)
    infer.add_argument("--jobs", type=int, default=1)
    infer.set_defaults(func=cmd_infer)

    align = sub.add_parser("align", help="ground STM speakers in RTTM diarization")
    align.add_argument("--stm", required=True)
    align.add_argument("--rttm", required=True)
    align.add_argument("--out", required=True)
    align.add_argument("--epsilon", type=float, default=None, help="merge gap in seconds")
    align.add_argument("--config", default=None)
    align.set_defaults(func=cmd_align)

    score = sub.add_parser("score", help="score a hypothesis STM against references")
    score.add_argument("--ref", required=True, help="session JSON dir/file or reference STM")
    score.add_argument("--hyp", required=True, help="hypothesis STM")
    score.add_argument("--metric", required=True, choices=["wer", "cpwer", "tcpwer", "orcwer", "der"])
    score.add_argument("--collar", default=None, help="seconds, or 'inf'")
    score.add_argument("--mode", choices=["word", "char"], default=None)
    score.add_argument("--config", default=None)
    score.add_argument("--out", required=True, help="report JSON path")
    score.add_argument("--jobs", type=int, default=1)
    score.set_defaults(func=cmd_score)

    prepare = sub.add_parser("prepare", help="cut sessions into training samples")
    prepare.add_argument("--sessions", required=True)
    prepare.add_argument("--mode", choices=["trajectory", "random"], default="trajectory")
    prepare.add_argument("--seed", type=int, default=0)
    prepare.add_argument("--out", required=True, help="output JSONL path")
    prepare.add_argument("--config", default=None)
    prepare.add_argument("--jobs", type=int, default=1)
    prepare.set_defaults(func=cmd_prepare)

    report = sub.add_parser("report", help="render a comparison table from score reports")
    report.add_argument("--reports", nargs="+", required=True)
    report.add_argument("--baseline", required=True, help="report name (file stem) to compare against")
    report.add_argument("--out", required=True, help="output Markdown path")
    report.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


def entrypoint() -> None:
    sys.exit(main())
