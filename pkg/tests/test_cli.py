"""Command-line interface: reports, exit codes, and stream hygiene."""

from __future__ import annotations

import json

import numpy as np
import pytest

from crosstalk import __version__
from crosstalk.cli import main
from crosstalk.mixture import load_instances
from crosstalk.prep import WavBuffer, read_wav, write_wav

RATE = 8000


def _row(
    session: str,
    utterance: str,
    speaker: str,
    start: float,
    end: float,
    text: str,
) -> dict:
    return {
        "session_id": session,
        "utterance_id": utterance,
        "speaker": speaker,
        "start": start,
        "end": end,
        "text": text,
    }


def _write_jsonl(path, rows) -> str:
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    return str(path)


def _run(capsys, *argv: str) -> tuple[int, dict | None, str]:
    """Invoke the CLI in process; parse the report when it succeeds."""
    code = main(list(argv))
    captured = capsys.readouterr()
    report = json.loads(captured.out) if code == 0 else None
    return code, report, captured.err


TWO_SPEAKER_ROWS = [
    _row("s1", "u1", "A", 0.0, 2.0, "hello there my friend"),
    _row("s1", "u2", "B", 2.5, 4.0, "good morning to you"),
    _row("s1", "u3", "A", 4.5, 6.0, "see you tomorrow then"),
]


@pytest.fixture
def manifests(tmp_path):
    ref = _write_jsonl(tmp_path / "ref.jsonl", TWO_SPEAKER_ROWS)
    hyp = _write_jsonl(tmp_path / "hyp.jsonl", TWO_SPEAKER_ROWS)
    return ref, hyp


class TestReportPlumbing:
    def test_stdout_is_a_single_json_object(self, manifests, capsys):
        ref, hyp = manifests
        code = main(["sagbleu", "--ref", ref, "--hyp", hyp])
        out = capsys.readouterr().out
        assert code == 0
        report = json.loads(out)
        assert report["command"] == "sagbleu"
        assert report["toolkit_version"] == __version__
        assert set(report) == {"command", "inputs", "config", "results", "toolkit_version"}

    def test_report_file_matches_stdout(self, manifests, tmp_path, capsys):
        ref, hyp = manifests
        report_path = tmp_path / "report.json"
        code = main(["sagbleu", "--ref", ref, "--hyp", hyp, "--report", str(report_path)])
        out = capsys.readouterr().out
        assert code == 0
        assert report_path.read_text(encoding="utf-8") == out

    def test_inputs_are_resolved_paths(self, manifests, capsys):
        ref, hyp = manifests
        _, report, _ = _run(capsys, "sagbleu", "--ref", ref, "--hyp", hyp)
        assert report["inputs"]["ref"].startswith("/")
        assert report["inputs"]["ref"].endswith("ref.jsonl")

    def test_human_summary_goes_to_stderr(self, manifests, capsys):
        ref, hyp = manifests
        code, report, err = _run(capsys, "sagbleu", "--ref", ref, "--hyp", hyp)
        assert code == 0
        assert "SAgBLEU" in err

    def test_missing_subcommand_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_missing_required_flag_exits_2(self, manifests, capsys):
        ref, _ = manifests
        with pytest.raises(SystemExit) as exc:
            main(["sagbleu", "--ref", ref])
        assert exc.value.code == 2


class TestSagbleu:
    def test_perfect_hypothesis_scores_100(self, manifests, capsys):
        ref, hyp = manifests
        code, report, _ = _run(capsys, "sagbleu", "--ref", ref, "--hyp", hyp)
        assert code == 0
        assert report["results"]["score"] == 100.0

    def test_per_session_stats_present(self, manifests, capsys):
        ref, hyp = manifests
        _, report, _ = _run(capsys, "sagbleu", "--ref", ref, "--hyp", hyp)
        (stats,) = report["results"]["sessions"]
        assert stats["session_id"] == "s1"
        assert stats["hyp_len"] == stats["ref_len"] > 0
        assert stats["match_counts"] == stats["total_counts"]

    def test_missing_hyp_file_exits_2(self, manifests, capsys):
        ref, _ = manifests
        code, _, err = _run(capsys, "sagbleu", "--ref", ref, "--hyp", "no/such.jsonl")
        assert code == 2
        assert "error" in err

    def test_malformed_manifest_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"session_id": "s1"}\n', encoding="utf-8")
        code, _, err = _run(capsys, "sagbleu", "--ref", str(bad), "--hyp", str(bad))
        assert code == 2
        assert "missing fields" in err


class TestSatbleu:
    def test_relabeled_perfect_hypothesis_scores_100(self, tmp_path, capsys):
        ref = _write_jsonl(tmp_path / "ref.jsonl", TWO_SPEAKER_ROWS)
        relabeled = [dict(row, speaker={"A": "spkX", "B": "spkY"}[row["speaker"]]) for row in TWO_SPEAKER_ROWS]
        hyp = _write_jsonl(tmp_path / "hyp.jsonl", relabeled)
        code, report, _ = _run(capsys, "satbleu", "--ref", ref, "--hyp", hyp)
        assert code == 0
        assert report["results"]["score"] == 100.0
        (perm,) = report["results"]["permutations"]
        assert perm["mapping"] == {"spkX": "A", "spkY": "B"}

    def test_greedy_flag_recorded_and_scores(self, manifests, capsys):
        ref, hyp = manifests
        code, report, _ = _run(capsys, "satbleu", "--ref", ref, "--hyp", hyp, "--greedy")
        assert code == 0
        assert report["config"]["greedy"] is True
        assert report["results"]["score"] == 100.0

    def test_perm_cap_exceeded_exits_2(self, tmp_path, capsys):
        rows = [
            _row("s1", f"u{i}", f"spk{i}", 10.0 * i, 10.0 * i + 5.0, f"word number {i}")
            for i in range(4)
        ]
        ref = _write_jsonl(tmp_path / "ref.jsonl", rows)
        hyp = _write_jsonl(tmp_path / "hyp.jsonl", rows)
        code, _, err = _run(
            capsys, "satbleu", "--ref", ref, "--hyp", hyp, "--max-perm-speakers", "3"
        )
        assert code == 2
        assert "greedy" in err


class TestDer:
    def test_identical_manifests_score_zero(self, manifests, capsys):
        ref, hyp = manifests
        code, report, _ = _run(capsys, "der", "--ref", ref, "--hyp", hyp)
        assert code == 0
        assert report["results"]["der"] == 0.0
        assert report["config"]["collar"] == 0.25

    def test_empty_hypothesis_scores_one(self, tmp_path, capsys):
        ref = _write_jsonl(tmp_path / "ref.jsonl", TWO_SPEAKER_ROWS)
        hyp = tmp_path / "hyp.jsonl"
        hyp.write_text("", encoding="utf-8")
        code, report, _ = _run(capsys, "der", "--ref", ref, "--hyp", str(hyp))
        assert code == 0
        assert report["results"]["der"] == 1.0
        assert report["results"]["missed"] == report["results"]["scored_speech"] > 0.0

    def test_collar_flag_applies(self, tmp_path, capsys):
        ref = _write_jsonl(tmp_path / "ref.jsonl", [_row("s1", "u1", "A", 0.0, 10.0, "x")])
        hyp = _write_jsonl(tmp_path / "hyp.jsonl", [_row("s1", "u1", "A", 0.2, 10.0, "x")])
        code, loose, _ = _run(capsys, "der", "--ref", ref, "--hyp", str(hyp), "--collar", "0.25")
        assert code == 0
        assert loose["results"]["der"] == 0.0
        code, strict, _ = _run(capsys, "der", "--ref", ref, "--hyp", str(hyp), "--collar", "0.0")
        assert code == 0
        assert strict["results"]["der"] == pytest.approx(0.2 / 10.0)


class TestTsot:
    def test_round_trip_recovers_speaker_streams(self, manifests, tmp_path, capsys):
        ref, _ = manifests
        streams = tmp_path / "streams.jsonl"
        decoded = tmp_path / "decoded.jsonl"
        code, report, _ = _run(capsys, "tsot", "serialize", "--in", ref, "--out", str(streams))
        assert code == 0
        assert report["results"]["separators"] == 2
        code, _, _ = _run(capsys, "tsot", "deserialize", "--in", str(streams), "--out", str(decoded))
        assert code == 0
        record = json.loads(decoded.read_text(encoding="utf-8"))
        texts = {
            speaker: " ".join(t["text"] for t in tokens)
            for speaker, tokens in record["streams"].items()
        }
        assert texts == {
            "A": "hello there my friend see you tomorrow then",
            "B": "good morning to you",
        }

    def test_single_speaker_input_has_zero_separators(self, tmp_path, capsys):
        rows = [
            _row("s1", "u1", "A", 0.0, 2.0, "one two three"),
            _row("s1", "u2", "A", 2.0, 3.0, "four five"),
        ]
        ref = _write_jsonl(tmp_path / "ref.jsonl", rows)
        out = tmp_path / "streams.jsonl"
        code, report, _ = _run(capsys, "tsot", "serialize", "--in", ref, "--out", str(out))
        assert code == 0
        assert report["results"]["separators"] == 0
        assert report["results"]["tokens"] == 5

    def test_triple_overlap_exits_2(self, tmp_path, capsys):
        rows = [
            _row("s1", "u1", "A", 0.0, 5.0, "aaa"),
            _row("s1", "u2", "B", 1.0, 6.0, "bbb"),
            _row("s1", "u3", "C", 2.0, 7.0, "ccc"),
        ]
        ref = _write_jsonl(tmp_path / "ref.jsonl", rows)
        out = tmp_path / "streams.jsonl"
        code, _, err = _run(capsys, "tsot", "serialize", "--in", ref, "--out", str(out))
        assert code == 2
        assert "3 speakers" in err

    def test_deserialize_rejects_missing_fields(self, tmp_path, capsys):
        src = tmp_path / "streams.jsonl"
        src.write_text('{"tokens": []}\n', encoding="utf-8")
        code, _, err = _run(
            capsys, "tsot", "deserialize", "--in", str(src), "--out", str(tmp_path / "d.jsonl")
        )
        assert code == 2
        assert "session_id" in err


class TestMix:
    def _pool(self, tmp_path) -> str:
        rows = [
            _row("pool", f"u{i}", f"spk{i % 4}", 100.0 * i, 100.0 * i + 2.0 + i, f"token{i} babble")
            for i in range(8)
        ]
        return _write_jsonl(tmp_path / "pool.jsonl", rows)

    def test_same_seed_is_byte_identical(self, tmp_path, capsys):
        pool = self._pool(tmp_path)
        first = tmp_path / "a.jsonl"
        second = tmp_path / "b.jsonl"
        for out in (first, second):
            code, _, _ = _run(
                capsys, "mix", "--pool", pool, "--n", "5", "--seed", "11", "--out", str(out)
            )
            assert code == 0
        assert first.read_bytes() == second.read_bytes()

    def test_instances_load_back_with_bounded_counts(self, tmp_path, capsys):
        pool = self._pool(tmp_path)
        out = tmp_path / "inst.jsonl"
        code, report, _ = _run(
            capsys, "mix", "--pool", pool, "--n", "10", "--seed", "3", "--out", str(out)
        )
        assert code == 0
        instances = load_instances(out)
        assert len(instances) == 10
        assert all(1 <= len(inst.components) <= 5 for inst in instances)
        assert sum(report["results"]["component_counts"].values()) == 10

    def test_zero_instances_exits_2(self, tmp_path, capsys):
        pool = self._pool(tmp_path)
        code, _, err = _run(
            capsys, "mix", "--pool", pool, "--n", "0", "--seed", "1", "--out", str(tmp_path / "x")
        )
        assert code == 2
        assert "n_instances" in err

    def test_render_audio_requires_wav_dir(self, tmp_path, capsys):
        pool = self._pool(tmp_path)
        code, _, err = _run(
            capsys,
            "mix", "--pool", pool, "--n", "1", "--seed", "1",
            "--out", str(tmp_path / "x.jsonl"), "--render-audio",
        )
        assert code == 2
        assert "--wav-dir" in err

    def test_render_audio_writes_instance_wavs(self, tmp_path, capsys):
        rows = [
            _row("pool", "u0", "A", 0.0, 1.0, "aa"),
            _row("pool", "u1", "B", 10.0, 11.5, "bb"),
        ]
        pool = _write_jsonl(tmp_path / "pool.jsonl", rows)
        wav_dir = tmp_path / "wavs"
        wav_dir.mkdir()
        write_wav(WavBuffer(np.full(RATE, 100, dtype=np.int16), RATE), wav_dir / "u0.wav")
        write_wav(WavBuffer(np.full(RATE + RATE // 2, -50, dtype=np.int16), RATE), wav_dir / "u1.wav")
        out = tmp_path / "inst.jsonl"
        code, _, _ = _run(
            capsys,
            "mix", "--pool", pool, "--n", "3", "--seed", "5",
            "--out", str(out), "--render-audio", "--wav-dir", str(wav_dir),
        )
        assert code == 0
        for instance in load_instances(out):
            rendered = read_wav(wav_dir / f"{instance.instance_id}.wav")
            assert rendered.sample_rate == RATE
            assert len(rendered) > 0


class TestCluster:
    def _write_embeddings(self, path, vectors, start: float = 0.0) -> str:
        rows = [
            {"vector": list(map(float, v)), "timestamp": start + 0.5 * i}
            for i, v in enumerate(vectors)
        ]
        return _write_jsonl(path, rows)

    def test_single_vector_is_one_cluster(self, tmp_path, capsys):
        emb = self._write_embeddings(tmp_path / "e.jsonl", [[1.0, 0.0, 0.0]])
        code, report, _ = _run(capsys, "cluster", "--embeddings", emb, "--mode", "nme-sc")
        assert code == 0
        assert report["results"]["k"] == 1
        assert report["results"]["labels"] == [0]

    def test_two_bundles_split_in_two(self, tmp_path, capsys):
        rng = np.random.default_rng(4)
        vectors = []
        for i in range(16):
            base = np.zeros(8)
            base[i % 2] = 1.0
            vectors.append(base + 0.02 * rng.standard_normal(8))
        emb = self._write_embeddings(tmp_path / "e.jsonl", vectors)
        out = tmp_path / "labels.jsonl"
        code, report, _ = _run(
            capsys, "cluster", "--embeddings", emb, "--mode", "nme-sc", "--out", str(out)
        )
        assert code == 0
        assert report["results"]["k"] == 2
        labels = report["results"]["labels"]
        assert len(set(labels[0::2])) == 1
        assert len(set(labels[1::2])) == 1
        assert labels[0] != labels[1]
        records = [json.loads(line) for line in out.read_text(encoding="utf-8").splitlines()]
        assert [r["label"] for r in records] == labels
        assert [r["index"] for r in records] == list(range(16))

    def test_online_mode_spawns_on_dissimilarity(self, tmp_path, capsys):
        vectors = [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]
        emb = self._write_embeddings(tmp_path / "e.jsonl", vectors)
        code, report, _ = _run(
            capsys, "cluster", "--embeddings", emb, "--mode", "online", "--threshold", "0.5"
        )
        assert code == 0
        assert report["results"]["labels"] == [0, 0, 1, 1]
        assert report["config"]["threshold"] == 0.5

    def test_unknown_mode_exits_2(self, tmp_path, capsys):
        emb = self._write_embeddings(tmp_path / "e.jsonl", [[1.0, 0.0]])
        with pytest.raises(SystemExit) as exc:
            main(["cluster", "--embeddings", emb, "--mode", "kmeans"])
        assert exc.value.code == 2

    def test_raw_embeddings_with_sidecar(self, tmp_path, capsys):
        vectors = np.asarray(
            [[1.0, 0.0], [1.0, 0.01], [0.0, 1.0], [0.01, 1.0]], dtype=np.float32
        )
        raw = tmp_path / "emb.bin"
        raw.write_bytes(vectors.tobytes())
        (tmp_path / "emb.bin.json").write_text(
            json.dumps({"count": 4, "dim": 2, "timestamps": [0.0, 0.5, 1.0, 1.5]}),
            encoding="utf-8",
        )
        code, report, _ = _run(capsys, "cluster", "--embeddings", str(raw), "--mode", "nme-sc")
        assert code == 0
        assert report["results"]["k"] == 2
        labels = report["results"]["labels"]
        assert labels[0] == labels[1] != labels[2] == labels[3]


class TestPrep:
    def test_split_short_session_stays_whole(self, manifests, tmp_path, capsys):
        ref, _ = manifests
        out = tmp_path / "mini.jsonl"
        code, report, _ = _run(capsys, "prep", "split", "--manifest", ref, "--out", str(out))
        assert code == 0
        assert report["results"]["mini_sessions"] == 1
        assert report["results"]["ids"] == ["s1"]
        assert len(out.read_text(encoding="utf-8").splitlines()) == len(TWO_SPEAKER_ROWS)

    def test_split_long_session_cuts_and_routes_hypotheses(self, tmp_path, capsys):
        ref_rows = [
            _row("m", f"r{i:02d}", "A", 30.0 * i, 30.0 * i + 30.0, f"ref {i}")
            for i in range(20)
        ]
        hyp_rows = [
            _row("m", f"h{i:02d}", "A", 30.0 * i + 1.0, 30.0 * i + 29.0, f"hyp {i}")
            for i in range(20)
        ]
        ref = _write_jsonl(tmp_path / "ref.jsonl", ref_rows)
        hyp = _write_jsonl(tmp_path / "hyp.jsonl", hyp_rows)
        out = tmp_path / "mini_ref.jsonl"
        hyp_out = tmp_path / "mini_hyp.jsonl"
        code, report, _ = _run(
            capsys,
            "prep", "split", "--manifest", ref, "--hyp", hyp,
            "--out", str(out), "--hyp-out", str(hyp_out),
        )
        assert code == 0
        assert report["results"]["mini_sessions"] == 3
        assert report["results"]["ids"] == ["m-00", "m-01", "m-02"]
        ref_lines = [json.loads(l) for l in out.read_text(encoding="utf-8").splitlines()]
        hyp_lines = [json.loads(l) for l in hyp_out.read_text(encoding="utf-8").splitlines()]
        assert len(ref_lines) == len(hyp_lines) == 20
        assert {l["session_id"] for l in ref_lines} == {"m-00", "m-01", "m-02"}
        for r, h in zip(ref_lines, hyp_lines):
            assert r["session_id"] == h["session_id"]

    def test_split_hyp_without_hyp_out_exits_2(self, manifests, tmp_path, capsys):
        ref, hyp = manifests
        code, _, err = _run(
            capsys, "prep", "split", "--manifest", ref, "--hyp", hyp,
            "--out", str(tmp_path / "o.jsonl"),
        )
        assert code == 2
        assert "--hyp-out" in err

    def test_ihm_cat_duration_is_clip_sum(self, tmp_path, capsys):
        rows = [
            _row("s1", "u1", "A", 0.0, 2.0, "first clip"),
            _row("s1", "u2", "B", 5.0, 6.5, "second clip"),
        ]
        manifest = _write_jsonl(tmp_path / "m.jsonl", rows)
        wav_dir = tmp_path / "wavs"
        wav_dir.mkdir()
        write_wav(WavBuffer(np.full(2 * RATE, 10, dtype=np.int16), RATE), wav_dir / "u1.wav")
        write_wav(WavBuffer(np.full(RATE + RATE // 2, 20, dtype=np.int16), RATE), wav_dir / "u2.wav")
        out_dir = tmp_path / "cat"
        out_manifest = tmp_path / "cat.jsonl"
        code, report, _ = _run(
            capsys,
            "prep", "ihm-cat", "--manifest", manifest, "--wav-dir", str(wav_dir),
            "--out-dir", str(out_dir), "--out-manifest", str(out_manifest),
        )
        assert code == 0
        assert report["results"]["durations"] == {"s1": 3.5}
        assert read_wav(out_dir / "s1.wav").duration == 3.5
        lines = [json.loads(l) for l in out_manifest.read_text(encoding="utf-8").splitlines()]
        assert [(l["start"], l["end"]) for l in lines] == [(0.0, 2.0), (2.0, 3.5)]

    def test_ihm_mix_sums_tracks(self, tmp_path, capsys):
        a = tmp_path / "a.wav"
        b = tmp_path / "b.wav"
        write_wav(WavBuffer(np.full(RATE, 1000, dtype=np.int16), RATE), a)
        write_wav(WavBuffer(np.full(RATE // 2, -400, dtype=np.int16), RATE), b)
        out = tmp_path / "mix.wav"
        code, report, _ = _run(
            capsys, "prep", "ihm-mix", "--wavs", str(a), str(b), "--out", str(out)
        )
        assert code == 0
        assert report["results"]["samples"] == RATE
        mixed = read_wav(out)
        assert mixed.samples[0] == 600
        assert mixed.samples[-1] == 1000

    def test_ihm_mix_rate_mismatch_exits_2(self, tmp_path, capsys):
        a = tmp_path / "a.wav"
        b = tmp_path / "b.wav"
        write_wav(WavBuffer(np.full(RATE, 5, dtype=np.int16), RATE), a)
        write_wav(WavBuffer(np.full(RATE, 5, dtype=np.int16), 2 * RATE), b)
        code, _, err = _run(
            capsys, "prep", "ihm-mix", "--wavs", str(a), str(b), "--out", str(tmp_path / "o.wav")
        )
        assert code == 2
        assert "mixed sample rates" in err
