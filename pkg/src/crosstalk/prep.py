"""Corpus preparation: mini-session splitting and audio assembly.

Long recordings are cut into mini-sessions of a few minutes at utterance
boundaries. Audio comes in two flavors built from per-utterance headset
clips: IHM-CAT concatenates clips in start order with a re-timed manifest,
IHM-MIX sums aligned per-speaker tracks sample-wise. Mixture instances from
the simulator render to audio by shifting each component clip to its offset
and mixing.

WAV support is deliberately narrow: canonical RIFF, 16-bit signed PCM, mono.
"""

from __future__ import annotations

import bisect
import warnings
import wave
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .mixture import MixtureInstance
from .model import MiniSession, Utterance, ValidationError

INT16_MIN = -32768
INT16_MAX = 32767


@dataclass
class WavBuffer:
    """Mono 16-bit PCM samples at a fixed rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 1:
            raise ValidationError(
                f"expected mono samples (1-d), got shape {self.samples.shape}"
            )
        if self.samples.dtype != np.int16:
            if self.samples.dtype.kind != "i" and self.samples.size > 0:
                raise ValidationError(f"samples must be integers, got {self.samples.dtype}")
            if self.samples.size and (
                self.samples.min() < INT16_MIN or self.samples.max() > INT16_MAX
            ):
                raise ValidationError("samples do not fit 16-bit signed integers")
            self.samples = self.samples.astype(np.int16)
        if self.sample_rate <= 0:
            raise ValidationError(f"sample rate must be positive, got {self.sample_rate}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def write_wav(buffer: WavBuffer, path: str | Path) -> None:
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(buffer.sample_rate)
        fh.writeframes(buffer.samples.astype("<i2").tobytes())


def read_wav(path: str | Path) -> WavBuffer:
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1:
            raise ValidationError(f"{path}: expected mono audio, got {fh.getnchannels()} channels")
        if fh.getsampwidth() != 2:
            raise ValidationError(
                f"{path}: expected 16-bit samples, got {8 * fh.getsampwidth()}-bit"
            )
        rate = fh.getframerate()
        frames = fh.readframes(fh.getnframes())
    return WavBuffer(np.frombuffer(frames, dtype="<i2").astype(np.int16), rate)


def _span(utterances: Sequence[Utterance]) -> float:
    return max(u.end for u in utterances) - utterances[0].start


def split_minisessions(
    session: MiniSession, min_len: float = 180.0, max_len: float = 360.0
) -> list[MiniSession]:
    """Cut a session into mini-sessions of min_len..max_len seconds.

    Whole utterances accumulate in start order; the group closes at the
    first boundary where its span (first start to last end) reaches
    min_len, and always before a span would exceed max_len when a boundary
    allows. A final group shorter than min_len merges into the previous
    one, which may carry the merged group past max_len. A single utterance
    longer than max_len stays whole as its own mini-session, with a
    warning. Hypothesis utterances route to the mini-session whose time
    range contains their start.
    """
    if min_len >= max_len:
        raise ValidationError(f"min_len {min_len} must be below max_len {max_len}")
    if not session.references:
        return []

    groups: list[list[Utterance]] = []
    current: list[Utterance] = []
    current_end = 0.0
    for utt in session.references:
        if current and max(current_end, utt.end) - current[0].start > max_len:
            groups.append(current)
            current = []
        if not current:
            current = [utt]
            current_end = utt.end
            if utt.duration > max_len:
                warnings.warn(
                    f"utterance {utt.utterance_id!r} spans {utt.duration:.1f} s, "
                    f"longer than max_len {max_len:.1f} s; kept whole",
                    stacklevel=2,
                )
                groups.append(current)
                current = []
            elif _span(current) >= min_len:
                groups.append(current)
                current = []
            continue
        current.append(utt)
        current_end = max(current_end, utt.end)
        if current_end - current[0].start >= min_len:
            groups.append(current)
            current = []
    if current:
        groups.append(current)

    if len(groups) >= 2 and _span(groups[-1]) < min_len:
        groups[-2].extend(groups.pop())

    if len(groups) == 1:
        return [MiniSession(session.id, session.references, session.hypotheses)]

    starts = [group[0].start for group in groups]
    routed: list[list[Utterance]] = [[] for _ in groups]
    for hyp in session.hypotheses:
        index = max(bisect.bisect_right(starts, hyp.start) - 1, 0)
        routed[index].append(hyp)

    width = max(2, len(str(len(groups) - 1)))
    minis = []
    for index, group in enumerate(groups):
        # Utterances adopt the mini-session id so written manifests keep
        # the split instead of regrouping under the source session.
        mini_id = f"{session.id}-{index:0{width}d}"
        minis.append(
            MiniSession(
                mini_id,
                [replace(u, session_id=mini_id) for u in group],
                [replace(u, session_id=mini_id) for u in routed[index]],
            )
        )
    return minis


def _common_rate(buffers: Sequence[WavBuffer]) -> int:
    rates = {buffer.sample_rate for buffer in buffers}
    if len(rates) != 1:
        raise ValidationError(f"mixed sample rates {sorted(rates)}")
    return rates.pop()


def build_ihm_cat(
    pairs: Sequence[tuple[Utterance, WavBuffer]], session_id: str | None = None
) -> tuple[WavBuffer, MiniSession]:
    """Concatenate utterance clips in start order with a re-timed manifest.

    Utterance k of the output spans [cumulative, cumulative + clip_k
    duration); cumulative positions accumulate in samples so the manifest
    stays sample-exact against the audio.
    """
    if not pairs:
        raise ValidationError("cannot concatenate zero utterances")
    rate = _common_rate([buffer for _, buffer in pairs])
    if session_id is None:
        ids = {utt.session_id for utt, _ in pairs}
        if len(ids) != 1:
            raise ValidationError(f"utterances span sessions {sorted(ids)}; pass session_id")
        session_id = ids.pop()

    ordered = sorted(pairs, key=lambda pair: (pair[0].start, pair[0].utterance_id))
    samples = np.concatenate([buffer.samples for _, buffer in ordered])
    retimed: list[Utterance] = []
    cursor = 0
    for utt, buffer in ordered:
        retimed.append(
            replace(
                utt,
                session_id=session_id,
                start=cursor / rate,
                end=(cursor + len(buffer)) / rate,
            )
        )
        cursor += len(buffer)
    return WavBuffer(samples, rate), MiniSession(session_id, retimed)


def build_ihm_mix(buffers: Sequence[WavBuffer]) -> WavBuffer:
    """Sample-wise sum of aligned tracks, saturated to the 16-bit range.

    Shorter inputs count as zero past their end; the output is as long as
    the longest input.
    """
    if not buffers:
        raise ValidationError("cannot mix zero buffers")
    rate = _common_rate(buffers)
    total = np.zeros(max(len(buffer) for buffer in buffers), dtype=np.int64)
    for buffer in buffers:
        total[: len(buffer)] += buffer.samples
    return WavBuffer(np.clip(total, INT16_MIN, INT16_MAX).astype(np.int16), rate)


def render_mixture(
    instance: MixtureInstance, buffers: Mapping[str, WavBuffer]
) -> WavBuffer:
    """Shift each component clip to its offset and mix.

    ``buffers`` maps utterance ids to clips; offsets round to whole
    samples.
    """
    shifted: list[WavBuffer] = []
    for component in instance.components:
        if component.utterance_id not in buffers:
            raise ValidationError(f"no audio for component {component.utterance_id!r}")
        clip = buffers[component.utterance_id]
        pad = round(component.offset * clip.sample_rate)
        shifted.append(
            WavBuffer(
                np.concatenate([np.zeros(pad, dtype=np.int16), clip.samples]),
                clip.sample_rate,
            )
        )
    return build_ihm_mix(shifted)
