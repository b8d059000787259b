"""Diarization error rate scoring."""

from __future__ import annotations

import json
import math
import random
from pathlib import Path

import pytest

from crosstalk.der import (
    DerBreakdown,
    SpeakerSegment,
    aggregate_der,
    compute_der,
    segments_from_utterances,
)
from crosstalk.model import Utterance, ValidationError
from reference_der import Segment, oracle_der, synthetic_der_session

DATA_DIR = Path(__file__).parent / "data"


def _to_lib(segments: list[Segment]) -> list[SpeakerSegment]:
    return [SpeakerSegment(s.speaker, s.start, s.end) for s in segments]


class TestSpeakerSegment:
    def test_rejects_empty_interval(self):
        with pytest.raises(ValidationError):
            SpeakerSegment("A", 5.0, 5.0)

    def test_rejects_inverted_interval(self):
        with pytest.raises(ValidationError):
            SpeakerSegment("A", 5.0, 4.0)

    def test_rejects_empty_speaker(self):
        with pytest.raises(ValidationError):
            SpeakerSegment("", 0.0, 1.0)


class TestDerBreakdown:
    def test_der_is_error_over_scored(self):
        b = DerBreakdown(missed=1.0, false_alarm=2.0, confusion=3.0, scored_speech=12.0)
        assert b.der == 0.5

    def test_empty_recording_scores_zero(self):
        assert DerBreakdown().der == 0.0

    def test_errors_without_reference_are_unbounded(self):
        assert DerBreakdown(false_alarm=1.0).der == math.inf

    def test_addition(self):
        a = DerBreakdown(1.0, 2.0, 3.0, 10.0)
        b = DerBreakdown(0.5, 0.5, 0.5, 5.0)
        total = a + b
        assert total.missed == 1.5
        assert total.scored_speech == 15.0


class TestCollarExamples:
    def test_perfect_single_speaker(self):
        refs = [SpeakerSegment("A", 0.0, 10.0)]
        out = compute_der(refs, refs)
        assert out.der == 0.0
        assert out.scored_speech == 9.5

    def test_empty_hypothesis_misses_everything(self):
        refs = [SpeakerSegment("A", 0.0, 10.0)]
        out = compute_der(refs, [])
        assert out.missed == 9.5
        assert out.scored_speech == 9.5
        assert out.der == 1.0

    def test_offsets_inside_collar_are_free(self):
        refs = [SpeakerSegment("A", 0.0, 10.0)]
        hyps = [SpeakerSegment("X", 0.2, 10.1)]
        out = compute_der(refs, hyps)
        assert out.der == 0.0
        assert out.scored_speech == 9.5

    def test_zero_collar_scores_full_span(self):
        refs = [SpeakerSegment("A", 0.0, 10.0)]
        out = compute_der(refs, [], collar=0.0)
        assert out.missed == 10.0
        assert out.der == 1.0

    def test_negative_collar_rejected(self):
        refs = [SpeakerSegment("A", 0.0, 10.0)]
        with pytest.raises(ValidationError, match="collar"):
            compute_der(refs, refs, collar=-0.1)


class TestComputeDer:
    def test_empty_both_sides(self):
        out = compute_der([], [])
        assert out.der == 0.0
        assert out.scored_speech == 0.0

    def test_hypothesis_only_is_all_false_alarm(self):
        out = compute_der([], [SpeakerSegment("X", 0.0, 4.0)])
        assert out.false_alarm == 4.0
        assert out.der == math.inf

    def test_same_speaker_hypothesis_segments_merge(self):
        refs = [SpeakerSegment("A", 0.0, 10.0)]
        split = [SpeakerSegment("X", 0.0, 6.0), SpeakerSegment("X", 4.0, 10.0)]
        whole = [SpeakerSegment("X", 0.0, 10.0)]
        assert compute_der(refs, split) == compute_der(refs, whole)

    def test_overlap_scoring_counts_each_reference_speaker(self):
        refs = [SpeakerSegment("A", 0.0, 10.0), SpeakerSegment("B", 5.0, 15.0)]
        hyps = [SpeakerSegment("A", 0.0, 10.0)]
        out = compute_der(refs, hyps)
        # zones: [-.25,.25] [4.75,5.25] [9.75,10.25] [14.75,15.25]
        # scored: [.25,4.75] A ok; [5.25,9.75] A ok + B missed; [10.25,14.75] B missed
        assert out.missed == pytest.approx(4.5 + 4.5)
        assert out.false_alarm == 0.0
        assert out.confusion == 0.0
        assert out.scored_speech == pytest.approx(4.5 + 2 * 4.5 + 4.5)

    def test_overlap_exclusion_drops_multispeaker_regions(self):
        refs = [SpeakerSegment("A", 0.0, 10.0), SpeakerSegment("B", 5.0, 15.0)]
        hyps = [SpeakerSegment("A", 0.0, 10.0)]
        out = compute_der(refs, hyps, score_overlap=False)
        assert out.missed == pytest.approx(4.5)
        assert out.scored_speech == pytest.approx(9.0)
        assert out.der == pytest.approx(0.5)

    def test_mapping_absorbs_swapped_labels(self):
        refs = [SpeakerSegment("A", 0.0, 10.0), SpeakerSegment("B", 20.0, 30.0)]
        # mapping must pick A->Y, B->X (the larger overlaps), leaving the
        # leading 2 s of each hypothesis segment attributed to the wrong talker
        hyps = [
            SpeakerSegment("X", 18.0, 30.0),
            SpeakerSegment("Y", -2.0, 10.0),
        ]
        out = compute_der(refs, hyps, collar=0.0)
        assert out.confusion == 0.0
        assert out.false_alarm == pytest.approx(4.0)
        assert out.missed == 0.0

    def test_relabeling_invariance(self):
        rng = random.Random(321)
        for seed in range(20):
            refs, hyps = synthetic_der_session(seed)
            renamed = {spk: f"z{i}" for i, spk in enumerate(sorted({s.speaker for s in hyps}))}
            relabeled = [Segment(renamed[s.speaker], s.start, s.end) for s in hyps]
            base = compute_der(_to_lib(refs), _to_lib(hyps))
            assert compute_der(_to_lib(refs), _to_lib(relabeled)) == base

    def test_collar_monotonicity(self):
        for seed in range(20):
            refs, hyps = synthetic_der_session(seed)
            errors = [
                compute_der(_to_lib(refs), _to_lib(hyps), collar=c).error_time
                for c in (0.0, 0.1, 0.25, 0.5, 1.0)
            ]
            assert all(a >= b - 1e-12 for a, b in zip(errors, errors[1:]))

    def test_matches_oracle_on_random_sessions(self):
        for seed in range(60):
            refs, hyps = synthetic_der_session(seed)
            out = compute_der(_to_lib(refs), _to_lib(hyps))
            candidates = oracle_der(refs, hyps)
            assert any(
                abs(out.missed - c["missed"]) < 1e-9
                and abs(out.false_alarm - c["false_alarm"]) < 1e-9
                and abs(out.confusion - c["confusion"]) < 1e-9
                and abs(out.scored_speech - c["scored_speech"]) < 1e-9
                for c in candidates
            ), f"seed {seed}: {out} not among {candidates}"

    def test_matches_committed_fixtures(self):
        fixtures = json.loads((DATA_DIR / "der_fixtures.json").read_text())
        for fx in fixtures[:50]:
            refs, hyps = synthetic_der_session(fx["seed"])
            out = compute_der(_to_lib(refs), _to_lib(hyps))
            assert out.der == pytest.approx(fx["der"], rel=1e-6)


class TestSegmentsFromUtterances:
    def test_strips_text_and_drops_empty_intervals(self):
        utts = [
            Utterance("s", "u0", "A", 0.0, 1.0, "text"),
            Utterance("s", "u1", "B", 2.0, 2.0, "zero width"),
        ]
        segments = segments_from_utterances(utts)
        assert segments == [SpeakerSegment("A", 0.0, 1.0)]


class TestAggregateDer:
    def test_sums_components_across_recordings(self):
        parts = [
            DerBreakdown(1.0, 0.0, 0.0, 10.0),
            DerBreakdown(0.0, 2.0, 0.0, 30.0),
        ]
        total = aggregate_der(parts)
        assert total.der == pytest.approx(3.0 / 40.0)

    def test_empty_iterable(self):
        assert aggregate_der([]).der == 0.0
