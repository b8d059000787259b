"""Token-level serialized output streams for overlapped speech.

Multiple speakers' timed token sequences are merged into one stream ordered
by token end time, with a reserved separator inserted wherever adjacent
tokens belong to different speakers. Deserialization replays the stream
onto two virtual channels, toggling at each separator. Token timing for
text-only inputs comes from linear interpolation across the utterance span;
this is an explicit stand-in for model-based emission times.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .model import SpeakerId, TimedToken, Utterance, ValidationError

# Channel-change marker. Angle brackets are U+27E8/U+27E9, so ordinary
# ASCII transcript text can never collide with it by accident.
SEPARATOR = "⟨cc⟩"

MAX_CHANNELS = 2


@dataclass(frozen=True)
class StreamToken:
    """One element of a serialized stream: a spoken token or the separator.

    ``end_time`` and ``speaker`` are carried when known so that the JSON
    form is lossless; the plain text form drops them.
    """

    text: str
    end_time: float | None = None
    speaker: SpeakerId | None = None

    @property
    def is_separator(self) -> bool:
        return self.text == SEPARATOR


@dataclass
class SerializedStream:
    """A single t-SOT token stream.

    Invariants: never starts with a separator and never contains two
    consecutive separators (a separator marks a change between two spoken
    tokens, so neither situation can arise from serialization).
    """

    entries: list[StreamToken] = field(default_factory=list)

    def __post_init__(self) -> None:
        previous_sep = True  # a separator at position 0 is also invalid
        for entry in self.entries:
            if entry.is_separator and previous_sep:
                raise ValidationError(
                    "stream has a leading separator or two consecutive separators"
                )
            previous_sep = entry.is_separator

    @property
    def separator_count(self) -> int:
        return sum(1 for e in self.entries if e.is_separator)

    def to_text(self) -> str:
        return " ".join(e.text for e in self.entries)

    @classmethod
    def from_text(cls, text: str) -> "SerializedStream":
        return cls([StreamToken(tok) for tok in text.split()])

    def to_records(self) -> list[dict]:
        records = []
        for e in self.entries:
            record: dict = {"text": e.text}
            if e.end_time is not None:
                record["end_time"] = e.end_time
            if e.speaker is not None:
                record["speaker"] = e.speaker
            records.append(record)
        return records

    @classmethod
    def from_records(cls, records: list[dict]) -> "SerializedStream":
        return cls(
            [
                StreamToken(r["text"], r.get("end_time"), r.get("speaker"))
                for r in records
            ]
        )

    def to_json(self) -> str:
        return json.dumps(self.to_records(), ensure_ascii=False)

    @classmethod
    def from_json(cls, payload: str) -> "SerializedStream":
        return cls.from_records(json.loads(payload))


@dataclass
class ChannelStreams:
    """Two virtual output channels produced by deserialization.

    From a well-formed two-speaker source each channel carries exactly one
    speaker with non-decreasing end times; decoded model output may violate
    that, which deserialization reports as a warning rather than an error.
    """

    channels: tuple[list[TimedToken], list[TimedToken]]

    def speaker_streams(self) -> dict[SpeakerId, list[TimedToken]]:
        """Tokens regrouped by speaker label in chronological order.

        A speaker's blocks may be split across both channels (three or more
        speakers taking turns), so the channels are merged by end time
        before grouping; synthetic position times preserve stream order.
        """
        ordered = sorted(
            (
                (token.end_time, channel_idx, position, token)
                for channel_idx, channel in enumerate(self.channels)
                for position, token in enumerate(channel)
            ),
            key=lambda e: e[:3],
        )
        grouped: dict[SpeakerId, list[TimedToken]] = {}
        for _, _, _, token in ordered:
            grouped.setdefault(token.speaker, []).append(token)
        return grouped


def max_concurrency(spans: Iterable[tuple[float, float]]) -> int:
    """Sweep-line maximum of simultaneously active half-open spans."""
    events: list[tuple[float, int]] = []
    for start, end in spans:
        events.append((start, 1))
        events.append((end, -1))
    # at equal times, ends settle before starts: touching spans don't overlap
    events.sort(key=lambda e: (e[0], e[1]))
    active = peak = 0
    for _, delta in events:
        active += delta
        peak = max(peak, active)
    return peak


def validate_concurrency(
    streams: Mapping[SpeakerId, Sequence[TimedToken]],
    utterance_spans: Iterable[tuple[float, float]] | None = None,
) -> int:
    """Maximum concurrent speaker count.

    Uses the true utterance spans when given; otherwise falls back to each
    speaker's token end-time envelope, which under-reports leading overlap
    (token times mark ends, not starts).
    """
    if utterance_spans is not None:
        return max_concurrency(utterance_spans)
    spans = []
    for tokens in streams.values():
        if tokens:
            times = [t.end_time for t in tokens]
            spans.append((min(times), max(times)))
    return max_concurrency(spans)


def serialize(
    streams: Mapping[SpeakerId, Sequence[TimedToken]],
    utterance_spans: Iterable[tuple[float, float]] | None = None,
) -> SerializedStream:
    """Merge per-speaker token streams into one separator-delimited stream.

    Tokens are ordered by (end_time, speaker label, within-speaker index);
    a separator lands exactly between adjacent tokens of different
    speakers. At most two speakers may be active at once.
    """
    for speaker, tokens in streams.items():
        for a, b in zip(tokens, tokens[1:]):
            if b.end_time < a.end_time:
                raise ValidationError(
                    f"tokens for speaker {speaker!r} are not in end-time order"
                )
        for token in tokens:
            if token.text == SEPARATOR:
                raise ValidationError(
                    f"token text {SEPARATOR!r} is reserved for the channel-change marker"
                )

    concurrency = validate_concurrency(streams, utterance_spans)
    if concurrency > MAX_CHANNELS:
        raise ValidationError(
            f"{concurrency} speakers are active at once; at most {MAX_CHANNELS} supported"
        )

    merged: list[tuple[float, SpeakerId, int, TimedToken]] = []
    for speaker, tokens in streams.items():
        for idx, token in enumerate(tokens):
            merged.append((token.end_time, speaker, idx, token))
    merged.sort(key=lambda e: (e[0], e[1], e[2]))

    entries: list[StreamToken] = []
    previous_speaker: SpeakerId | None = None
    for end_time, speaker, _, token in merged:
        if previous_speaker is not None and speaker != previous_speaker:
            entries.append(StreamToken(SEPARATOR))
        entries.append(StreamToken(token.text, end_time, speaker))
        previous_speaker = speaker
    return SerializedStream(entries)


def deserialize(stream: SerializedStream) -> ChannelStreams:
    """Replay a stream onto two virtual channels, toggling at separators.

    Playback starts on channel 0. Entries without a recorded end_time get
    their stream position as a synthetic time and entries without a speaker
    get the active channel's name, so text-only streams still produce
    well-formed tokens. Non-monotone end times within a channel indicate a
    stream that no two-speaker source can produce; that raises a warning,
    not an error, because decoded model output may do this.
    """
    channels: tuple[list[TimedToken], list[TimedToken]] = ([], [])
    active = 0
    for position, entry in enumerate(stream.entries):
        if entry.is_separator:
            active = 1 - active
            continue
        end_time = entry.end_time if entry.end_time is not None else float(position)
        speaker = entry.speaker if entry.speaker is not None else f"ch{active}"
        channels[active].append(TimedToken(entry.text, end_time, speaker))
    for index, channel in enumerate(channels):
        for a, b in zip(channel, channel[1:]):
            if b.end_time < a.end_time:
                warnings.warn(
                    f"channel {index} has decreasing end times; the stream is not "
                    "realizable by two non-overlapping sources",
                    stacklevel=2,
                )
                break
    return ChannelStreams(channels)


def assign_proxy_times(utterance: Utterance, tokens: Sequence[str]) -> list[TimedToken]:
    """Linearly interpolated end times across the utterance span.

    Token k of K ends at start + (k+1)/K of the span. A stand-in for
    model-based emission times, not an alignment.
    """
    total = len(tokens)
    return [
        TimedToken(
            text=tok,
            end_time=utterance.start + (k + 1) / total * (utterance.end - utterance.start),
            speaker=utterance.speaker,
        )
        for k, tok in enumerate(tokens)
    ]


def streams_from_utterances(
    utterances: Sequence[Utterance],
) -> tuple[dict[SpeakerId, list[TimedToken]], list[tuple[float, float]]]:
    """Per-speaker timed token streams plus utterance spans for one session.

    Texts are whitespace-split and given proxy times. Tokens within each
    speaker are sorted by end time (stable), so same-speaker utterances
    that overlap still yield a valid stream.
    """
    streams: dict[SpeakerId, list[TimedToken]] = {}
    spans: list[tuple[float, float]] = []
    for utt in utterances:
        spans.append((utt.start, utt.end))
        streams.setdefault(utt.speaker, []).extend(assign_proxy_times(utt, utt.text.split()))
    for speaker in streams:
        streams[speaker].sort(key=lambda t: t.end_time)
    return streams, spans
