"""Speaker-agnostic and speaker-attributed corpus BLEU over paired sessions.

The speaker-agnostic score concatenates every utterance of a session in
start-time order and ignores speaker labels entirely. The speaker-attributed
score concatenates per speaker, pads the smaller speaker inventory with
empty (NULL) entries, picks the per-session speaker bijection that maximizes
that session's BLEU, and pools all resulting pairs into one corpus score.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from .bleu import BleuStats, collect_stats, corpus_bleu, sentence_bleu, tokenize
from .model import MiniSession, SpeakerId, Utterance, ValidationError

# Synthetic labels given to NULL-padded speaker slots; real labels must not
# use this prefix.
PAD_LABEL_PREFIX = "⊥"  # ⊥

# Hard cap for the exhaustive permutation search (12! is already hostile).
MAX_EXHAUSTIVE_SPEAKERS = 12


@dataclass(frozen=True)
class SpeakerWiseText:
    """All of one speaker's utterance texts in a session, space-joined."""

    speaker: SpeakerId
    text: str

    @property
    def is_padding(self) -> bool:
        return self.speaker.startswith(PAD_LABEL_PREFIX)


@dataclass
class SessionPermutation:
    """Chosen bijection from (padded) hypothesis speakers to (padded) reference speakers."""

    session_id: str
    mapping: dict[SpeakerId, SpeakerId]

    def to_dict(self) -> dict:
        return {"session_id": self.session_id, "mapping": dict(self.mapping)}


def concat_session(utterances: list[Utterance]) -> str:
    """Join utterance texts with single spaces (input already start-sorted)."""
    return " ".join(u.text for u in utterances)


def speaker_wise(session: MiniSession, side: str) -> list[SpeakerWiseText]:
    """Per-speaker concatenations for one side, sorted by speaker label."""
    grouped: dict[SpeakerId, list[str]] = {}
    for utt in session._side(side):
        grouped.setdefault(utt.speaker, []).append(utt.text)
    return [SpeakerWiseText(spk, " ".join(texts)) for spk, texts in sorted(grouped.items())]


def pad_null(
    hyp_side: list[SpeakerWiseText], ref_side: list[SpeakerWiseText]
) -> tuple[list[SpeakerWiseText], list[SpeakerWiseText]]:
    """Pad the shorter side with empty-text entries up to max(|S|, |P|)."""
    for entry in itertools.chain(hyp_side, ref_side):
        if entry.speaker.startswith(PAD_LABEL_PREFIX):
            raise ValidationError(
                f"speaker label {entry.speaker!r} uses the reserved padding prefix"
            )
    k = max(len(hyp_side), len(ref_side))
    hyp = list(hyp_side) + [
        SpeakerWiseText(f"{PAD_LABEL_PREFIX}{i}", "") for i in range(k - len(hyp_side))
    ]
    ref = list(ref_side) + [
        SpeakerWiseText(f"{PAD_LABEL_PREFIX}{i}", "") for i in range(k - len(ref_side))
    ]
    return hyp, ref


def _padded_sides(session: MiniSession) -> tuple[list[SpeakerWiseText], list[SpeakerWiseText]]:
    hyp, ref = pad_null(speaker_wise(session, "hypothesis"), speaker_wise(session, "reference"))
    # keep both sides label-sorted so index order equals label order, which
    # makes the permutation tie-break below truly lexicographic
    return sorted(hyp, key=lambda e: e.speaker), sorted(ref, key=lambda e: e.speaker)


def best_permutation(
    session: MiniSession, max_exhaustive: int = MAX_EXHAUSTIVE_SPEAKERS
) -> SessionPermutation:
    """Exhaustively search the speaker bijection maximizing session BLEU.

    The objective is the session-level corpus BLEU over the K (hypothesis
    text, mapped reference text) pairs, brevity penalty included, with
    effective n-gram order so that sessions shorter than four tokens still
    discriminate between bijections (strict 4-gram BLEU scores every
    mapping of such a session as zero). Ties break to the lexicographically
    smallest mapping ordered by hypothesis label.
    """
    hyp, ref = _padded_sides(session)
    k = len(hyp)
    if k > max_exhaustive:
        raise ValidationError(
            f"session {session.id!r} has {k} padded speakers; exhaustive search "
            f"is capped at {max_exhaustive} (use the greedy assignment instead)"
        )
    hyp_tokens = [tokenize(e.text) for e in hyp]
    ref_tokens = [tokenize(e.text) for e in ref]
    pair_stats = [[collect_stats(h, r) for r in ref_tokens] for h in hyp_tokens]

    best_score = -1.0
    best: tuple[int, ...] = tuple(range(k))
    for perm in itertools.permutations(range(k)):
        score = _session_score([pair_stats[i][perm[i]] for i in range(k)])
        if score > best_score:
            best_score = score
            best = perm
    mapping = {hyp[i].speaker: ref[best[i]].speaker for i in range(k)}
    return SessionPermutation(session.id, mapping)


def greedy_permutation(session: MiniSession) -> SessionPermutation:
    """Hungarian assignment on the pairwise sentence-BLEU matrix.

    Scales past the exhaustive cap but does not optimize the true session
    objective; never the default.
    """
    from scipy.optimize import linear_sum_assignment

    hyp, ref = _padded_sides(session)
    if not hyp:
        return SessionPermutation(session.id, {})
    hyp_tokens = [tokenize(e.text) for e in hyp]
    ref_tokens = [tokenize(e.text) for e in ref]
    scores = [[sentence_bleu(h, r) for r in ref_tokens] for h in hyp_tokens]
    rows, cols = linear_sum_assignment([[-s for s in row] for row in scores])
    mapping = {hyp[i].speaker: ref[j].speaker for i, j in zip(rows, cols)}
    return SessionPermutation(session.id, mapping)


def _session_score(stats: list[BleuStats]) -> float:
    if not stats:
        return 0.0
    return corpus_bleu(stats, effective_order=True)


def _session_pairs(
    session: MiniSession, permutation: SessionPermutation
) -> list[tuple[SpeakerId, SpeakerId, BleuStats]]:
    hyp, ref = _padded_sides(session)
    ref_by_label = {e.speaker: e for e in ref}
    pairs = []
    for entry in hyp:
        target = ref_by_label[permutation.mapping[entry.speaker]]
        stats = collect_stats(tokenize(entry.text), tokenize(target.text))
        pairs.append((entry.speaker, target.speaker, stats))
    return pairs


def sagbleu(sessions: list[MiniSession]) -> float:
    """Speaker-agnostic corpus BLEU: one concatenated pair per session."""
    if not sessions:
        raise ValidationError("no sessions to score")
    stats = [
        collect_stats(
            tokenize(concat_session(s.hypotheses)), tokenize(concat_session(s.references))
        )
        for s in sessions
    ]
    return corpus_bleu(stats)


def satbleu(
    sessions: list[MiniSession],
    use_greedy: bool = False,
    max_exhaustive: int = MAX_EXHAUSTIVE_SPEAKERS,
) -> tuple[float, list[SessionPermutation]]:
    """Speaker-attributed corpus BLEU with per-session optimal permutations.

    Every (hypothesis speaker, mapped reference speaker) pair from every
    session, NULL-padded pairs included, enters one corpus-level BLEU.
    Returns the score and the chosen permutations for reporting.
    """
    if not sessions:
        raise ValidationError("no sessions to score")
    if use_greedy:
        find = greedy_permutation
    else:
        def find(session: MiniSession) -> SessionPermutation:
            return best_permutation(session, max_exhaustive)
    all_stats: list[BleuStats] = []
    permutations: list[SessionPermutation] = []
    for session in sorted(sessions, key=lambda s: s.id):
        perm = find(session)
        permutations.append(perm)
        all_stats.extend(stats for _, _, stats in _session_pairs(session, perm))
    if not all_stats:
        raise ValidationError("no speaker pairs to score")
    return corpus_bleu(all_stats), permutations
