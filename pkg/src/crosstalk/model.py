"""Domain types and manifest file I/O shared by all toolkit modules.

A manifest is line-delimited JSON, one utterance per line, with fields
``session_id``, ``utterance_id``, ``speaker``, ``start``, ``end``, ``text``.
Times are seconds. All types are treated as immutable value objects after
construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

# Speaker identifiers are opaque strings compared by exact equality.
SpeakerId = str

MANIFEST_FIELDS = ("session_id", "utterance_id", "speaker", "start", "end", "text")


class ValidationError(ValueError):
    """Input data violates a toolkit contract (bad manifest, bad invariant)."""


class ManifestParseError(ValidationError):
    """A manifest line could not be parsed; carries the 1-based line number."""

    def __init__(self, path: str | Path, line_no: int, reason: str):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.path = str(path)
        self.line_no = line_no


@dataclass(frozen=True)
class Utterance:
    """One speaker-attributed, time-stamped text unit inside a session."""

    session_id: str
    utterance_id: str
    speaker: SpeakerId
    start: float
    end: float
    text: str

    def __post_init__(self) -> None:
        if not self.session_id:
            raise ValidationError("utterance has empty session_id")
        if not self.speaker:
            raise ValidationError(
                f"utterance {self.utterance_id!r} has empty speaker label"
            )
        if self.start < 0:
            raise ValidationError(
                f"utterance {self.utterance_id!r} has negative start {self.start}"
            )
        if self.end < self.start:
            raise ValidationError(
                f"utterance {self.utterance_id!r} has end {self.end} < start {self.start}"
            )

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class TimedToken:
    """A single output token with its (proxy or model-based) end time."""

    text: str
    end_time: float
    speaker: SpeakerId

    def __post_init__(self) -> None:
        if self.end_time < 0:
            raise ValidationError(f"token {self.text!r} has negative end_time")
        if not self.speaker:
            raise ValidationError(f"token {self.text!r} has empty speaker label")


def _utterance_key(utt: Utterance) -> tuple[float, str]:
    # Ties in start time break by utterance_id so loading is deterministic.
    return (utt.start, utt.utterance_id)


@dataclass
class MiniSession:
    """Paired reference/hypothesis utterance lists for one evaluation unit.

    Both sides are kept sorted by (start, utterance_id). Instances are not
    mutated after construction.
    """

    id: str
    references: list[Utterance] = field(default_factory=list)
    hypotheses: list[Utterance] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.references = sorted(self.references, key=_utterance_key)
        self.hypotheses = sorted(self.hypotheses, key=_utterance_key)

    def speakers(self, side: str) -> list[SpeakerId]:
        """Distinct speaker labels on one side, in sorted label order."""
        utts = self._side(side)
        return sorted({u.speaker for u in utts})

    def _side(self, side: str) -> list[Utterance]:
        if side == "reference":
            return self.references
        if side == "hypothesis":
            return self.hypotheses
        raise ValueError(f"unknown side {side!r}")


def load_manifest(path: str | Path, allow_empty_text: bool = False) -> list[MiniSession]:
    """Load a JSONL utterance manifest into per-session groups.

    Utterances land on the ``references`` side of each returned session;
    `pair_sessions` decides which file plays which role. Sessions come back
    sorted by session id, utterances sorted by (start, utterance_id).

    ``allow_empty_text`` relaxes the non-empty text check for callers that
    ignore the text field (diarization scoring).
    """
    path = Path(path)
    by_session: dict[str, list[Utterance]] = {}
    seen: set[tuple[str, str]] = set()
    with path.open("r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestParseError(path, line_no, f"malformed JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise ManifestParseError(path, line_no, "expected a JSON object")
            missing = [k for k in MANIFEST_FIELDS if k not in record]
            if missing:
                raise ManifestParseError(path, line_no, f"missing fields {missing}")
            if not isinstance(record["text"], str):
                raise ManifestParseError(path, line_no, "text must be a string")
            if not record["text"] and not allow_empty_text:
                raise ManifestParseError(path, line_no, "text is empty")
            for key in ("start", "end"):
                if not isinstance(record[key], (int, float)) or isinstance(record[key], bool):
                    raise ManifestParseError(path, line_no, f"{key} must be a number")
            try:
                utt = Utterance(
                    session_id=str(record["session_id"]),
                    utterance_id=str(record["utterance_id"]),
                    speaker=str(record["speaker"]),
                    start=float(record["start"]),
                    end=float(record["end"]),
                    text=record["text"],
                )
            except ValidationError as exc:
                raise ManifestParseError(path, line_no, str(exc)) from exc
            key = (utt.session_id, utt.utterance_id)
            if key in seen:
                raise ManifestParseError(
                    path, line_no, f"duplicate utterance id {utt.utterance_id!r} in session {utt.session_id!r}"
                )
            seen.add(key)
            by_session.setdefault(utt.session_id, []).append(utt)
    return [MiniSession(id=sid, references=utts) for sid, utts in sorted(by_session.items())]


def write_manifest(sessions: Iterable[MiniSession], path: str | Path, side: str = "reference") -> None:
    """Write one side of the given sessions as a JSONL manifest.

    Float fields go through ``json.dumps`` (repr round-trip), so
    ``load_manifest(write_manifest(x)) == x`` field-exactly.
    """
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for session in sessions:
            for utt in session._side(side):
                fh.write(utterance_to_json(utt) + "\n")


def utterance_to_json(utt: Utterance) -> str:
    return json.dumps(
        {
            "session_id": utt.session_id,
            "utterance_id": utt.utterance_id,
            "speaker": utt.speaker,
            "start": utt.start,
            "end": utt.end,
            "text": utt.text,
        },
        ensure_ascii=False,
    )


def pair_sessions(refs: list[MiniSession], hyps: list[MiniSession]) -> list[MiniSession]:
    """Match reference and hypothesis sessions by id.

    A reference session with no hypothesis counterpart is paired with an
    empty hypothesis list (scored as a total miss). A hypothesis session
    with no reference counterpart is an error.
    """
    ref_by_id = {s.id: s for s in refs}
    hyp_by_id = {s.id: s for s in hyps}
    unknown = sorted(set(hyp_by_id) - set(ref_by_id))
    if unknown:
        raise ValidationError(f"unknown session {unknown[0]!r}: hypothesis has no reference counterpart")
    paired = []
    for sid in sorted(ref_by_id):
        hyp = hyp_by_id.get(sid)
        paired.append(
            MiniSession(
                id=sid,
                references=ref_by_id[sid].references,
                hypotheses=hyp.references if hyp is not None else [],
            )
        )
    return paired
