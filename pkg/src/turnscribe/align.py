"""Ground locally predicted speaker turns in a globally consistent diarization.

Window-local speaker labels are only coherent within their window; an
external diarizer's segments (RTTM) carry identities that are stable across
the whole recording. Each transcribed segment takes the RTTM speaker with the
greatest total temporal overlap; segments nothing overlaps keep their
original label and times. Adjacent segments that ended up with the same
assigned speaker and near-identical boundaries are then merged into single
coherent turns.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .core import (
    TIME_EPS,
    GlobalSpeaker,
    SpeakerLabel,
    TimeInterval,
    overlap,
)


@dataclass(frozen=True)
class StmSegment:
    """One transcribed, speaker-labeled, timed segment of a recording."""

    file_id: str
    channel: str
    speaker: SpeakerLabel
    interval: TimeInterval
    text: str

    def __post_init__(self) -> None:
        if not self.file_id:
            raise ValueError("file_id must be non-empty")
        if not (self.interval.end > self.interval.start):
            raise ValueError(f"segment must have positive duration: {self.interval}")


@dataclass(frozen=True)
class RttmSegment:
    """One diarization segment: who speaks when, no text."""

    file_id: str
    channel: str
    speaker: GlobalSpeaker
    interval: TimeInterval

    def __post_init__(self) -> None:
        if not self.file_id:
            raise ValueError("file_id must be non-empty")
        if not (self.interval.end > self.interval.start):
            raise ValueError(f"segment must have positive duration: {self.interval}")


def assign_global_speakers(
    stm: list[StmSegment],
    rttm: list[RttmSegment],
    *,
    return_assigned: bool = False,
) -> list[StmSegment] | tuple[list[StmSegment], list[bool]]:
    """Replace each segment's speaker with the greatest-total-overlap RTTM speaker.

    Overlap is accumulated over all of a speaker's RTTM segments within the
    same file. Ties go to the speaker whose overlapping segment starts
    earliest, then to the lexicographically smaller name. Segments with no
    overlap keep their original label. Intervals and text never change.

    With ``return_assigned=True`` also returns, per segment, whether an RTTM
    speaker was assigned (False = label retained).
    """
    by_file: dict[str, list[RttmSegment]] = {}
    for seg in rttm:
        by_file.setdefault(seg.file_id, []).append(seg)

    out: list[StmSegment] = []
    assigned_flags: list[bool] = []
    for seg in stm:
        totals: dict[str, float] = {}
        earliest: dict[str, float] = {}
        for cand in by_file.get(seg.file_id, []):
            ov = overlap(seg.interval, cand.interval)
            if ov > TIME_EPS:
                name = cand.speaker.name
                totals[name] = totals.get(name, 0.0) + ov
                start = cand.interval.start
                if name not in earliest or start < earliest[name]:
                    earliest[name] = start
        if totals:
            top = max(totals.values())
            tied = [n for n, v in totals.items() if v >= top - TIME_EPS]
            best = min(tied, key=lambda n: (earliest[n], n))
            out.append(replace(seg, speaker=GlobalSpeaker(best)))
            assigned_flags.append(True)
        else:
            out.append(seg)
            assigned_flags.append(False)
    if return_assigned:
        return out, assigned_flags
    return out


def merge_adjacent(
    stm: list[StmSegment],
    epsilon: float,
    *,
    mergeable: list[bool] | None = None,
) -> list[StmSegment]:
    """Merge consecutive same-speaker segments whose boundary gap is within epsilon.

    The gap test next.start - prev.end <= epsilon also merges overlapping
    boundaries. Merging folds transitively left to right per file; joined text
    is space-separated. Output is sorted by (file_id, start, end) and the
    operation is idempotent. An optional ``mergeable`` mask (parallel to the
    input) restricts merging to flagged segments, e.g. only those that
    received a diarization assignment.
    """
    if mergeable is None:
        mergeable = [True] * len(stm)
    if len(mergeable) != len(stm):
        raise ValueError("mergeable mask length must match segment list")

    tagged = sorted(
        zip(stm, mergeable), key=lambda p: (p[0].file_id, p[0].interval.start, p[0].interval.end)
    )
    out: list[tuple[StmSegment, bool]] = []
    for seg, can in tagged:
        if out:
            prev, prev_can = out[-1]
            gap = seg.interval.start - prev.interval.end
            if (
                can
                and prev_can
                and prev.file_id == seg.file_id
                and prev.speaker == seg.speaker
                and gap <= epsilon + TIME_EPS
            ):
                merged = replace(
                    prev,
                    interval=TimeInterval(
                        prev.interval.start, max(prev.interval.end, seg.interval.end)
                    ),
                    text=" ".join(filter(None, (prev.text, seg.text))),
                )
                out[-1] = (merged, True)
                continue
        out.append((seg, can))
    return [seg for seg, _ in out]


def align_transcript(
    stm: list[StmSegment], rttm: list[RttmSegment], epsilon: float
) -> list[StmSegment]:
    """Full post-processing pass: greatest-overlap assignment, then merging.

    Only segments that actually received an RTTM assignment participate in
    merging; retained segments pass through verbatim, so an empty RTTM leaves
    the input unchanged.
    """
    assigned, flags = assign_global_speakers(stm, rttm, return_assigned=True)
    return merge_adjacent(assigned, epsilon, mergeable=flags)
