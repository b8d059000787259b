"""Multi-talker mixture instances sampled from a single-talker pool.

Each instance mixes 1 to 5 utterances from distinct speakers by shifting
them to random offsets, subject to never having more than two speakers
active at the same moment. The serialized token target for the mixture is
produced by the stream codec. Everything here is manifest-level; waveform
mixing lives with the dataset preparation tools.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .model import SpeakerId, TimedToken, Utterance, ValidationError
from .tsot import SerializedStream, assign_proxy_times, serialize

MAX_COMPONENTS = 5
MAX_PLACEMENT_RETRIES = 100
MAX_INSTANCE_RESTARTS = 100


@dataclass(frozen=True)
class MixtureComponent:
    """One source utterance inside a mixture, shifted to `offset` seconds."""

    utterance_id: str
    speaker: SpeakerId
    offset: float

    def __post_init__(self) -> None:
        if self.offset < 0:
            raise ValidationError(
                f"component {self.utterance_id!r} has negative offset {self.offset}"
            )


@dataclass
class MixtureInstance:
    instance_id: str
    components: list[MixtureComponent]
    total_span: float
    serialized_target: SerializedStream

    def __post_init__(self) -> None:
        if not 1 <= len(self.components) <= MAX_COMPONENTS:
            raise ValidationError(
                f"instance {self.instance_id!r} has {len(self.components)} components, "
                f"expected 1..{MAX_COMPONENTS}"
            )


def _overlaps(a: tuple[float, float], b: tuple[float, float]) -> bool:
    return a[0] < b[1] and b[0] < a[1]


def _placement_ok(spans: Sequence[tuple[float, float]]) -> bool:
    """No more than two spans active at once.

    Intervals are convex, so three spans share a moment exactly when they
    overlap pairwise; checking every triple avoids a sweep and keeps this
    logically independent from the stream codec's concurrency checker.
    """
    return not any(
        _overlaps(a, b) and _overlaps(b, c) and _overlaps(a, c)
        for a, b, c in itertools.combinations(spans, 3)
    )


def child_seed(rng_seed: int, index: int) -> int:
    """Stable per-index seed: functional in (rng_seed, index) only."""
    digest = hashlib.sha256(f"{rng_seed}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _try_placement(
    by_speaker: dict[SpeakerId, list[Utterance]],
    speakers: list[SpeakerId],
    rng: random.Random,
) -> list[tuple[Utterance, float]] | None:
    """One full draw: component set plus offsets, or None on a dead end."""
    count = min(rng.randint(1, MAX_COMPONENTS), len(speakers))
    chosen = [
        by_speaker[spk][rng.randrange(len(by_speaker[spk]))]
        for spk in rng.sample(speakers, count)
    ]
    placed: list[tuple[Utterance, float]] = [(chosen[0], 0.0)]
    spans: list[tuple[float, float]] = [(0.0, chosen[0].duration)]
    for utt in chosen[1:]:
        for _ in range(MAX_PLACEMENT_RETRIES):
            offset = rng.uniform(0.0, max(end for _, end in spans))
            candidate = (offset, offset + utt.duration)
            if _placement_ok(spans + [candidate]):
                placed.append((utt, offset))
                spans.append(candidate)
                break
        else:
            return None
    return placed


def sample_instance(
    pool: Sequence[Utterance],
    rng_seed: int,
    instance_id: str | None = None,
) -> MixtureInstance:
    """Draw one mixture instance, deterministically in (pool order, seed).

    The component count is uniform on {1..5}, clamped to the number of
    distinct speakers in the pool (components must come from distinct
    speakers, and a smaller pool cannot honor a larger draw). The first
    component sits at offset 0; each later one draws offsets uniformly over
    [0, current span] until the two-active-speaker constraint holds, with a
    bounded per-component retry budget.

    A component can land in a configuration whose remaining valid offsets
    are a sliver of the span (roughly 1% of draws), so exhausting the
    per-component budget restarts the whole instance from a derived seed
    rather than failing; the restart loop itself is bounded, and running
    out of it reports the seed.
    """
    if not pool:
        raise ValidationError("utterance pool is empty")

    by_speaker: dict[SpeakerId, list[Utterance]] = {}
    for utt in pool:
        by_speaker.setdefault(utt.speaker, []).append(utt)
    speakers = sorted(by_speaker)

    placed: list[tuple[Utterance, float]] | None = None
    for attempt in range(MAX_INSTANCE_RESTARTS):
        seed = rng_seed if attempt == 0 else child_seed(rng_seed, -attempt)
        placed = _try_placement(by_speaker, speakers, random.Random(seed))
        if placed is not None:
            break
    if placed is None:
        raise ValidationError(
            f"no valid placement after {MAX_INSTANCE_RESTARTS} instance restarts "
            f"of {MAX_PLACEMENT_RETRIES} offset retries each (seed {rng_seed})"
        )
    spans = [(offset, offset + utt.duration) for utt, offset in placed]

    streams: dict[SpeakerId, list[TimedToken]] = {}
    for utt, offset in placed:
        shifted = [
            TimedToken(t.text, t.end_time - utt.start + offset, t.speaker)
            for t in assign_proxy_times(utt, utt.text.split())
        ]
        streams[utt.speaker] = shifted

    return MixtureInstance(
        instance_id=instance_id if instance_id is not None else f"mix-{rng_seed}",
        components=[
            MixtureComponent(utt.utterance_id, utt.speaker, offset) for utt, offset in placed
        ],
        total_span=max(end for _, end in spans),
        serialized_target=serialize(streams, utterance_spans=spans),
    )


def batch_generate(
    pool: Sequence[Utterance], n_instances: int, rng_seed: int
) -> list[MixtureInstance]:
    """n independent instances; instance i depends only on (rng_seed, i)."""
    if n_instances < 1:
        raise ValidationError(f"n_instances must be >= 1, got {n_instances}")
    return [
        sample_instance(pool, child_seed(rng_seed, i), instance_id=f"mix-{i:06d}")
        for i in range(n_instances)
    ]


def instance_to_json(instance: MixtureInstance) -> str:
    return json.dumps(
        {
            "instance_id": instance.instance_id,
            "components": [
                {"utterance_id": c.utterance_id, "speaker": c.speaker, "offset": c.offset}
                for c in instance.components
            ],
            "total_span": instance.total_span,
            "serialized_target": instance.serialized_target.to_records(),
        },
        ensure_ascii=False,
    )


def write_instances(instances: Iterable[MixtureInstance], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for instance in instances:
            fh.write(instance_to_json(instance) + "\n")


def load_instances(path: str | Path) -> list[MixtureInstance]:
    instances = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            instances.append(
                MixtureInstance(
                    instance_id=record["instance_id"],
                    components=[
                        MixtureComponent(c["utterance_id"], c["speaker"], c["offset"])
                        for c in record["components"]
                    ],
                    total_span=record["total_span"],
                    serialized_target=SerializedStream.from_records(
                        record["serialized_target"]
                    ),
                )
            )
    return instances
