"""Command-line front end: scoring, stream codec, simulation, clustering, prep.

Every command prints one RunReport as JSON to stdout (and to ``--report``
when given) and a short human summary to stderr. Exit codes: 0 success,
2 bad input, 1 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from . import __version__, tsot
from .bleu import collect_stats, tokenize
from .clustering import (
    cosine_affinity,
    nme_sc,
    online_cluster,
    read_embeddings,
    write_assignment,
)
from .der import aggregate_der, compute_der, segments_from_utterances
from .metrics import concat_session, sagbleu, satbleu
from .mixture import batch_generate, write_instances
from .model import (
    MiniSession,
    Utterance,
    ValidationError,
    load_manifest,
    pair_sessions,
    write_manifest,
)
from .prep import (
    build_ihm_cat,
    build_ihm_mix,
    read_wav,
    render_mixture,
    split_minisessions,
    write_wav,
)


@dataclass
class RunReport:
    """Machine-readable record of one command run."""

    command: str
    inputs: dict[str, str]
    config: dict
    results: dict
    toolkit_version: str = __version__

    def to_json(self) -> str:
        return json.dumps(
            {
                "command": self.command,
                "inputs": self.inputs,
                "config": self.config,
                "results": self.results,
                "toolkit_version": self.toolkit_version,
            },
            ensure_ascii=False,
        )


Handler = Callable[[argparse.Namespace], tuple[RunReport, str]]


def _resolved(**paths: str | None) -> dict[str, str]:
    """Absolute forms of the given paths, skipping flags left unset."""
    return {
        name: str(Path(value).resolve())
        for name, value in paths.items()
        if value is not None
    }


def _paired(ref_path: str, hyp_path: str, allow_empty_text: bool = False) -> list[MiniSession]:
    refs = load_manifest(ref_path, allow_empty_text)
    hyps = load_manifest(hyp_path, allow_empty_text)
    return pair_sessions(refs, hyps)


def _cmd_sagbleu(args: argparse.Namespace) -> tuple[RunReport, str]:
    sessions = _paired(args.ref, args.hyp)
    score = sagbleu(sessions)
    per_session = []
    for session in sessions:
        stats = collect_stats(
            tokenize(concat_session(session.hypotheses)),
            tokenize(concat_session(session.references)),
        )
        per_session.append({"session_id": session.id, **stats.to_dict()})
    report = RunReport(
        command="sagbleu",
        inputs=_resolved(ref=args.ref, hyp=args.hyp),
        config={},
        results={"score": score, "sessions": per_session},
    )
    return report, f"SAgBLEU {score:.2f} over {len(sessions)} session(s)"


def _cmd_satbleu(args: argparse.Namespace) -> tuple[RunReport, str]:
    sessions = _paired(args.ref, args.hyp)
    score, permutations = satbleu(
        sessions, use_greedy=args.greedy, max_exhaustive=args.max_perm_speakers
    )
    report = RunReport(
        command="satbleu",
        inputs=_resolved(ref=args.ref, hyp=args.hyp),
        config={"max_perm_speakers": args.max_perm_speakers, "greedy": args.greedy},
        results={
            "score": score,
            "permutations": [p.to_dict() for p in permutations],
        },
    )
    return report, f"SAtBLEU {score:.2f} over {len(sessions)} session(s)"


def _cmd_der(args: argparse.Namespace) -> tuple[RunReport, str]:
    sessions = _paired(args.ref, args.hyp, allow_empty_text=True)
    breakdowns = []
    per_session = []
    for session in sessions:
        breakdown = compute_der(
            segments_from_utterances(session.references),
            segments_from_utterances(session.hypotheses),
            collar=args.collar,
        )
        breakdowns.append(breakdown)
        per_session.append({"session_id": session.id, **breakdown.to_dict()})
    total = aggregate_der(breakdowns)
    report = RunReport(
        command="der",
        inputs=_resolved(ref=args.ref, hyp=args.hyp),
        config={"collar": args.collar},
        results={**total.to_dict(), "sessions": per_session},
    )
    summary = (
        f"DER {total.der:.4f} (missed {total.missed:.3f}s, false alarm "
        f"{total.false_alarm:.3f}s, confusion {total.confusion:.3f}s over "
        f"{total.scored_speech:.3f}s scored)"
    )
    return report, summary


def _cmd_tsot_serialize(args: argparse.Namespace) -> tuple[RunReport, str]:
    sessions = load_manifest(args.input)
    separators = 0
    tokens = 0
    with Path(args.out).open("w", encoding="utf-8") as fh:
        for session in sessions:
            streams, spans = tsot.streams_from_utterances(session.references)
            stream = tsot.serialize(streams, utterance_spans=spans)
            separators += sum(1 for e in stream.entries if e.text == tsot.SEPARATOR)
            tokens += sum(1 for e in stream.entries if e.text != tsot.SEPARATOR)
            fh.write(
                json.dumps(
                    {"session_id": session.id, "tokens": stream.to_records()},
                    ensure_ascii=False,
                )
                + "\n"
            )
    report = RunReport(
        command="tsot serialize",
        inputs=_resolved(input=args.input),
        config={"out": str(Path(args.out).resolve())},
        results={
            "sessions": len(sessions),
            "tokens": tokens,
            "separators": separators,
        },
    )
    return report, f"serialized {len(sessions)} session(s) to {args.out}"


def _cmd_tsot_deserialize(args: argparse.Namespace) -> tuple[RunReport, str]:
    count = 0
    with Path(args.input).open("r", encoding="utf-8") as src:
        with Path(args.out).open("w", encoding="utf-8") as dst:
            for line in src:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                if "session_id" not in record or "tokens" not in record:
                    raise ValidationError(
                        "stream records need 'session_id' and 'tokens' fields"
                    )
                stream = tsot.SerializedStream.from_records(record["tokens"])
                grouped = tsot.deserialize(stream).speaker_streams()
                dst.write(
                    json.dumps(
                        {
                            "session_id": record["session_id"],
                            "streams": {
                                speaker: [
                                    {"text": t.text, "end_time": t.end_time}
                                    for t in stream_tokens
                                ]
                                for speaker, stream_tokens in grouped.items()
                            },
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )
                count += 1
    report = RunReport(
        command="tsot deserialize",
        inputs=_resolved(input=args.input),
        config={"out": str(Path(args.out).resolve())},
        results={"sessions": count},
    )
    return report, f"deserialized {count} session(s) to {args.out}"


def _cmd_mix(args: argparse.Namespace) -> tuple[RunReport, str]:
    pool_sessions = load_manifest(args.pool)
    pool: list[Utterance] = [u for s in pool_sessions for u in s.references]
    instances = batch_generate(pool, args.n, args.seed)
    write_instances(instances, args.out)

    if args.render_audio:
        if args.wav_dir is None:
            raise ValidationError("--render-audio requires --wav-dir")
        wav_dir = Path(args.wav_dir)
        for instance in instances:
            buffers = {
                c.utterance_id: read_wav(wav_dir / f"{c.utterance_id}.wav")
                for c in instance.components
            }
            write_wav(render_mixture(instance, buffers), wav_dir / f"{instance.instance_id}.wav")

    counts: dict[str, int] = {}
    for instance in instances:
        key = str(len(instance.components))
        counts[key] = counts.get(key, 0) + 1
    report = RunReport(
        command="mix",
        inputs=_resolved(pool=args.pool, wav_dir=args.wav_dir),
        config={
            "n": args.n,
            "seed": args.seed,
            "out": str(Path(args.out).resolve()),
            "render_audio": args.render_audio,
        },
        results={"instances": len(instances), "component_counts": counts},
    )
    return report, f"wrote {len(instances)} mixture instance(s) to {args.out}"


def _cmd_cluster(args: argparse.Namespace) -> tuple[RunReport, str]:
    sequence = read_embeddings(args.embeddings)
    if args.mode == "nme-sc":
        assignment = nme_sc(cosine_affinity(sequence), max_speakers=args.max_speakers)
    else:
        assignment = online_cluster(
            sequence, args.threshold, max_speakers=args.max_speakers
        )
    if args.out is not None:
        write_assignment(assignment, list(sequence.timestamps), args.out)
    report = RunReport(
        command="cluster",
        inputs=_resolved(embeddings=args.embeddings),
        config={
            "mode": args.mode,
            "max_speakers": args.max_speakers,
            "threshold": args.threshold,
            "out": None if args.out is None else str(Path(args.out).resolve()),
        },
        results={"k": assignment.k, "labels": assignment.labels},
    )
    return report, f"{assignment.k} cluster(s) over {len(sequence)} embedding(s)"


def _cmd_prep_split(args: argparse.Namespace) -> tuple[RunReport, str]:
    if args.hyp is not None and args.hyp_out is None:
        raise ValidationError("--hyp requires --hyp-out")
    refs = load_manifest(args.manifest)
    sessions = pair_sessions(refs, load_manifest(args.hyp)) if args.hyp else refs
    minis = [
        mini
        for session in sessions
        for mini in split_minisessions(session, args.min_len, args.max_len)
    ]
    write_manifest(minis, args.out, side="reference")
    if args.hyp is not None:
        write_manifest(minis, args.hyp_out, side="hypothesis")
    report = RunReport(
        command="prep split",
        inputs=_resolved(manifest=args.manifest, hyp=args.hyp),
        config={
            "min_len": args.min_len,
            "max_len": args.max_len,
            "out": str(Path(args.out).resolve()),
            "hyp_out": None if args.hyp_out is None else str(Path(args.hyp_out).resolve()),
        },
        results={
            "sessions": len(sessions),
            "mini_sessions": len(minis),
            "ids": [mini.id for mini in minis],
        },
    )
    return report, f"split {len(sessions)} session(s) into {len(minis)} mini-session(s)"


def _cmd_prep_ihm_cat(args: argparse.Namespace) -> tuple[RunReport, str]:
    sessions = load_manifest(args.manifest)
    wav_dir = Path(args.wav_dir)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    retimed_sessions = []
    durations = {}
    for session in sessions:
        pairs = [
            (utt, read_wav(wav_dir / f"{utt.utterance_id}.wav"))
            for utt in session.references
        ]
        buffer, retimed = build_ihm_cat(pairs, session_id=session.id)
        write_wav(buffer, out_dir / f"{session.id}.wav")
        retimed_sessions.append(retimed)
        durations[session.id] = buffer.duration
    write_manifest(retimed_sessions, args.out_manifest, side="reference")
    report = RunReport(
        command="prep ihm-cat",
        inputs=_resolved(manifest=args.manifest, wav_dir=args.wav_dir),
        config={
            "out_dir": str(out_dir.resolve()),
            "out_manifest": str(Path(args.out_manifest).resolve()),
        },
        results={"sessions": len(sessions), "durations": durations},
    )
    return report, f"concatenated {len(sessions)} session(s) into {out_dir}"


def _cmd_prep_ihm_mix(args: argparse.Namespace) -> tuple[RunReport, str]:
    buffers = [read_wav(path) for path in args.wavs]
    mixed = build_ihm_mix(buffers)
    write_wav(mixed, args.out)
    report = RunReport(
        command="prep ihm-mix",
        inputs={f"wav_{i}": str(Path(p).resolve()) for i, p in enumerate(args.wavs)},
        config={"out": str(Path(args.out).resolve())},
        results={
            "tracks": len(buffers),
            "samples": len(mixed),
            "sample_rate": mixed.sample_rate,
            "duration": mixed.duration,
        },
    )
    return report, f"mixed {len(buffers)} track(s) into {args.out}"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--report", default=None, help="also write the JSON report to this file"
    )

    parser = argparse.ArgumentParser(
        prog="crosstalk",
        description="Multi-talker translation and diarization evaluation toolkit.",
    )
    parser.add_argument("--version", action="version", version=f"crosstalk {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    sag = commands.add_parser(
        "sagbleu", parents=[common], help="speaker-agnostic corpus BLEU"
    )
    sag.add_argument("--ref", required=True, help="reference utterance manifest (JSONL)")
    sag.add_argument("--hyp", required=True, help="hypothesis utterance manifest (JSONL)")
    sag.set_defaults(handler=_cmd_sagbleu)

    sat = commands.add_parser(
        "satbleu", parents=[common], help="speaker-attributed corpus BLEU"
    )
    sat.add_argument("--ref", required=True, help="reference utterance manifest (JSONL)")
    sat.add_argument("--hyp", required=True, help="hypothesis utterance manifest (JSONL)")
    sat.add_argument(
        "--max-perm-speakers",
        type=int,
        default=12,
        help="largest padded speaker count searched exhaustively (default 12)",
    )
    sat.add_argument(
        "--greedy",
        action="store_true",
        help="use the linear-assignment approximation instead of exhaustive search",
    )
    sat.set_defaults(handler=_cmd_satbleu)

    der = commands.add_parser(
        "der", parents=[common], help="diarization error rate with collar"
    )
    der.add_argument("--ref", required=True, help="reference utterance manifest (JSONL)")
    der.add_argument("--hyp", required=True, help="hypothesis utterance manifest (JSONL)")
    der.add_argument(
        "--collar",
        type=float,
        default=0.25,
        help="no-score zone half-width in seconds around reference boundaries",
    )
    der.set_defaults(handler=_cmd_der)

    tsot_parser = commands.add_parser(
        "tsot", help="serialize or deserialize token-stream targets"
    )
    tsot_commands = tsot_parser.add_subparsers(dest="tsot_command", required=True)
    ser = tsot_commands.add_parser(
        "serialize",
        parents=[common],
        help="utterance manifest to single-stream targets",
    )
    ser.add_argument("--in", dest="input", required=True, help="utterance manifest (JSONL)")
    ser.add_argument("--out", required=True, help="output stream file (JSONL)")
    ser.set_defaults(handler=_cmd_tsot_serialize)
    deser = tsot_commands.add_parser(
        "deserialize",
        parents=[common],
        help="single-stream targets back to per-speaker streams",
    )
    deser.add_argument("--in", dest="input", required=True, help="stream file (JSONL)")
    deser.add_argument("--out", required=True, help="output per-speaker streams (JSONL)")
    deser.set_defaults(handler=_cmd_tsot_deserialize)

    mix = commands.add_parser(
        "mix", parents=[common], help="simulate multi-talker mixtures from a pool"
    )
    mix.add_argument("--pool", required=True, help="pool utterance manifest (JSONL)")
    mix.add_argument("--n", type=int, required=True, help="number of instances")
    mix.add_argument("--seed", type=int, required=True, help="root random seed")
    mix.add_argument("--out", required=True, help="output instance file (JSONL)")
    mix.add_argument(
        "--render-audio",
        action="store_true",
        help="also mix PCM audio for every instance (needs --wav-dir)",
    )
    mix.add_argument(
        "--wav-dir",
        default=None,
        help="directory holding <utterance_id>.wav clips; rendered "
        "<instance_id>.wav files land here too",
    )
    mix.set_defaults(handler=_cmd_mix)

    cluster = commands.add_parser(
        "cluster", parents=[common], help="cluster speaker embeddings"
    )
    cluster.add_argument(
        "--embeddings",
        required=True,
        help="embedding file (.jsonl, or raw float32 with a JSON sidecar)",
    )
    cluster.add_argument("--mode", required=True, choices=["nme-sc", "online"])
    cluster.add_argument("--max-speakers", type=int, default=6)
    cluster.add_argument(
        "--threshold",
        type=float,
        default=0.5,
        help="minimum cosine similarity to join an existing cluster (online mode)",
    )
    cluster.add_argument("--out", default=None, help="per-vector label file (JSONL)")
    cluster.set_defaults(handler=_cmd_cluster)

    prep = commands.add_parser("prep", help="dataset preparation")
    prep_commands = prep.add_subparsers(dest="prep_command", required=True)
    split = prep_commands.add_parser(
        "split", parents=[common], help="cut sessions into bounded mini-sessions"
    )
    split.add_argument("--manifest", required=True, help="reference manifest (JSONL)")
    split.add_argument("--out", required=True, help="mini-session reference manifest")
    split.add_argument("--hyp", default=None, help="hypothesis manifest to route along")
    split.add_argument("--hyp-out", default=None, help="mini-session hypothesis manifest")
    split.add_argument("--min-len", type=float, default=180.0, help="seconds")
    split.add_argument("--max-len", type=float, default=360.0, help="seconds")
    split.set_defaults(handler=_cmd_prep_split)
    cat = prep_commands.add_parser(
        "ihm-cat",
        parents=[common],
        help="concatenate headset clips per session with a re-timed manifest",
    )
    cat.add_argument("--manifest", required=True, help="utterance manifest (JSONL)")
    cat.add_argument("--wav-dir", required=True, help="directory of <utterance_id>.wav clips")
    cat.add_argument("--out-dir", required=True, help="directory for <session_id>.wav outputs")
    cat.add_argument("--out-manifest", required=True, help="re-timed manifest path")
    cat.set_defaults(handler=_cmd_prep_ihm_cat)
    ihm_mix = prep_commands.add_parser(
        "ihm-mix", parents=[common], help="sum aligned tracks into one mixture wav"
    )
    ihm_mix.add_argument("--wavs", nargs="+", required=True, help="input wav paths")
    ihm_mix.add_argument("--out", required=True, help="output wav path")
    ihm_mix.set_defaults(handler=_cmd_prep_ihm_mix)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler: Handler = args.handler
    try:
        report, summary = handler(args)
    except (ValidationError, OSError, wave.Error, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # pragma: no cover - catch-all for the exit contract
        print(f"internal error: {err}", file=sys.stderr)
        return 1
    payload = report.to_json()
    print(payload)
    if args.report is not None:
        Path(args.report).write_text(payload + "\n", encoding="utf-8")
    print(summary, file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
