"""Diarization error rate with a no-score collar and optimal speaker mapping.

Follows the md-eval conventions: the collar excises ±collar seconds around
every reference segment boundary from scoring, the reference-to-hypothesis
speaker mapping maximizes total (uncollared) overlap duration, and
overlapping speech is scored by counting each active reference speaker
separately. Overlap scoring can be switched off, which drops every region
with more than one active reference speaker.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from scipy.optimize import linear_sum_assignment

from .model import SpeakerId, Utterance, ValidationError


@dataclass(frozen=True)
class SpeakerSegment:
    """A speaker-labeled time interval; text-free view of an utterance."""

    speaker: SpeakerId
    start: float
    end: float

    def __post_init__(self) -> None:
        if not self.speaker:
            raise ValidationError("segment has empty speaker label")
        if self.end <= self.start:
            raise ValidationError(
                f"segment for {self.speaker!r} has end {self.end} <= start {self.start}"
            )


@dataclass
class DerBreakdown:
    """DER components in seconds; `der` is their ratio to scored speech."""

    missed: float = 0.0
    false_alarm: float = 0.0
    confusion: float = 0.0
    scored_speech: float = 0.0

    @property
    def error_time(self) -> float:
        return self.missed + self.false_alarm + self.confusion

    @property
    def der(self) -> float:
        if self.scored_speech == 0.0:
            # no scored reference speech: perfect silence scores 0, any
            # hypothesis activity is an unbounded error rate
            return 0.0 if self.error_time == 0.0 else math.inf
        return self.error_time / self.scored_speech

    def __add__(self, other: "DerBreakdown") -> "DerBreakdown":
        return DerBreakdown(
            missed=self.missed + other.missed,
            false_alarm=self.false_alarm + other.false_alarm,
            confusion=self.confusion + other.confusion,
            scored_speech=self.scored_speech + other.scored_speech,
        )

    def to_dict(self) -> dict:
        return {
            "missed": self.missed,
            "false_alarm": self.false_alarm,
            "confusion": self.confusion,
            "scored_speech": self.scored_speech,
            "der": self.der,
        }


def segments_from_utterances(utterances: Iterable[Utterance]) -> list[SpeakerSegment]:
    """Strip text from utterances; zero-duration entries carry no time and are dropped."""
    return [
        SpeakerSegment(u.speaker, u.start, u.end) for u in utterances if u.end > u.start
    ]


def _merge_intervals(intervals: Iterable[tuple[float, float]]) -> list[tuple[float, float]]:
    """Union of intervals as a sorted list of disjoint half-open spans."""
    merged: list[tuple[float, float]] = []
    for start, end in sorted(intervals):
        if merged and start <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], end))
        else:
            merged.append((start, end))
    return merged


def _by_speaker(segments: Sequence[SpeakerSegment]) -> dict[SpeakerId, list[tuple[float, float]]]:
    grouped: dict[SpeakerId, list[tuple[float, float]]] = {}
    for seg in segments:
        grouped.setdefault(seg.speaker, []).append((seg.start, seg.end))
    return {spk: _merge_intervals(spans) for spk, spans in grouped.items()}


def _overlap(a: list[tuple[float, float]], b: list[tuple[float, float]]) -> float:
    total = 0.0
    for a_start, a_end in a:
        for b_start, b_end in b:
            total += max(0.0, min(a_end, b_end) - max(a_start, b_start))
    return total


def _optimal_mapping(
    refs: dict[SpeakerId, list[tuple[float, float]]],
    hyps: dict[SpeakerId, list[tuple[float, float]]],
) -> dict[SpeakerId, SpeakerId]:
    """Reference→hypothesis speaker assignment maximizing summed overlap."""
    if not refs or not hyps:
        return {}
    ref_labels = sorted(refs)
    hyp_labels = sorted(hyps)
    matrix = [[_overlap(refs[r], hyps[h]) for h in hyp_labels] for r in ref_labels]
    rows, cols = linear_sum_assignment(matrix, maximize=True)
    return {ref_labels[i]: hyp_labels[j] for i, j in zip(rows, cols)}


def compute_der(
    refs: Sequence[SpeakerSegment],
    hyps: Sequence[SpeakerSegment],
    collar: float = 0.25,
    score_overlap: bool = True,
) -> DerBreakdown:
    """Score one recording's hypothesis segments against its reference.

    The time axis is cut at every segment boundary and no-score-zone edge;
    each elementary region is either fully excluded (inside a collar zone
    around a reference boundary, or overlapped reference speech when
    ``score_overlap`` is false) or scored with the standard multi-speaker
    accounting: missed max(0, |R|-|H|), false alarm max(0, |H|-|R|),
    confusion min(|R|, |H|) minus correctly mapped speakers, all times the
    region duration, with |R| counting toward scored speech.
    """
    if collar < 0:
        raise ValidationError(f"collar must be non-negative, got {collar}")

    ref_spans = _by_speaker(refs)
    hyp_spans = _by_speaker(hyps)
    mapping = _optimal_mapping(ref_spans, hyp_spans)

    # collar zones surround the boundaries of the original reference
    # segments, not the per-speaker unions
    zones = _merge_intervals(
        (t - collar, t + collar) for seg in refs for t in (seg.start, seg.end)
    ) if collar > 0 else []

    boundaries: set[float] = set()
    for spans in ref_spans.values():
        boundaries.update(t for span in spans for t in span)
    for spans in hyp_spans.values():
        boundaries.update(t for span in spans for t in span)
    boundaries.update(t for zone in zones for t in zone)
    timeline = sorted(boundaries)

    breakdown = DerBreakdown()
    zone_idx = 0
    for t1, t2 in zip(timeline, timeline[1:]):
        dur = t2 - t1
        if dur <= 0:
            continue
        while zone_idx < len(zones) and zones[zone_idx][1] <= t1:
            zone_idx += 1
        if zone_idx < len(zones) and zones[zone_idx][0] <= t1 < zones[zone_idx][1]:
            continue
        active_ref = {spk for spk, spans in ref_spans.items() if _covers(spans, t1)}
        active_hyp = {spk for spk, spans in hyp_spans.items() if _covers(spans, t1)}
        if not score_overlap and len(active_ref) > 1:
            continue
        n_ref = len(active_ref)
        n_hyp = len(active_hyp)
        n_correct = sum(1 for spk in active_ref if mapping.get(spk) in active_hyp)
        breakdown.missed += max(0, n_ref - n_hyp) * dur
        breakdown.false_alarm += max(0, n_hyp - n_ref) * dur
        breakdown.confusion += (min(n_ref, n_hyp) - n_correct) * dur
        breakdown.scored_speech += n_ref * dur
    return breakdown


def _covers(spans: list[tuple[float, float]], t: float) -> bool:
    # spans are disjoint and sorted; elementary regions never straddle a
    # span edge, so testing the region's left endpoint suffices
    for start, end in spans:
        if start <= t < end:
            return True
        if start > t:
            return False
    return False


def aggregate_der(breakdowns: Iterable[DerBreakdown]) -> DerBreakdown:
    """Time-weighted corpus aggregate: component-wise sum of seconds."""
    total = DerBreakdown()
    for b in breakdowns:
        total = total + b
    return total
