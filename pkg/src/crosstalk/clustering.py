"""Speaker clustering over embedding sequences.

Offline: spectral clustering with the speaker count and the affinity
binarization level auto-tuned by the normalized maximum eigengap statistic.
Online: single-pass leader-follower clustering against running centroids,
strictly causal, for embeddings that arrive token by token.

Embedding extraction is external; sequences arrive as JSONL vectors or raw
float32 blocks with a JSON sidecar and are unit-normalized at ingestion.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from sklearn.cluster import KMeans

from .model import ValidationError

KMEANS_RANDOM_STATE = 0
_EPS = 1e-10


@dataclass
class EmbeddingSequence:
    """Unit-norm embedding vectors with per-vector timestamps.

    Vectors are normalized on construction; a zero vector cannot be
    normalized and is rejected with its index.
    """

    vectors: np.ndarray
    timestamps: list[float]
    tokens: list[str] | None = None

    def __post_init__(self) -> None:
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 and self.vectors.size > 0:
            raise ValidationError(
                f"expected a 2-d vector array, got shape {self.vectors.shape}"
            )
        if self.vectors.size == 0:
            self.vectors = self.vectors.reshape(0, 0)
        if len(self.timestamps) != len(self.vectors):
            raise ValidationError(
                f"{len(self.vectors)} vectors but {len(self.timestamps)} timestamps"
            )
        if self.tokens is not None and len(self.tokens) != len(self.vectors):
            raise ValidationError(
                f"{len(self.vectors)} vectors but {len(self.tokens)} tokens"
            )
        norms = np.linalg.norm(self.vectors, axis=1) if len(self.vectors) else np.array([])
        for index in np.nonzero(norms < _EPS)[0]:
            raise ValidationError(f"vector {index} has zero norm and cannot be normalized")
        if len(self.vectors):
            self.vectors = self.vectors / norms[:, None]

    def __len__(self) -> int:
        return len(self.vectors)


@dataclass
class AffinityMatrix:
    """Symmetric cosine-similarity matrix with a unit diagonal."""

    entries: np.ndarray

    def __post_init__(self) -> None:
        self.entries = np.asarray(self.entries, dtype=np.float64)
        if self.entries.ndim != 2 or self.entries.shape[0] != self.entries.shape[1]:
            raise ValidationError(
                f"affinity matrix has shape {self.entries.shape}, expected square"
            )
        if not np.allclose(self.entries, self.entries.T, atol=1e-8):
            raise ValidationError("affinity matrix is not symmetric")
        if not np.allclose(np.diag(self.entries), 1.0, atol=1e-6):
            raise ValidationError("affinity diagonal must be 1")
        if self.entries.min() < -1 - 1e-9 or self.entries.max() > 1 + 1e-9:
            raise ValidationError("affinity entries must lie in [-1, 1]")

    @property
    def n(self) -> int:
        return len(self.entries)


@dataclass
class ClusterAssignment:
    """Per-vector integer labels plus the inferred cluster count."""

    labels: list[int]
    k: int

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValidationError(f"cluster count must be >= 1, got {self.k}")
        bad = [l for l in self.labels if not 0 <= l < self.k]
        if bad:
            raise ValidationError(f"labels {bad} outside [0, {self.k})")


def cosine_affinity(seq: EmbeddingSequence) -> AffinityMatrix:
    """Pairwise cosine similarity (plain dot products of unit vectors)."""
    if len(seq) < 1:
        raise ValidationError("cannot build an affinity matrix from zero vectors")
    entries = np.clip(seq.vectors @ seq.vectors.T, -1.0, 1.0)
    np.fill_diagonal(entries, 1.0)
    return AffinityMatrix(entries)


def _binarized_graph(entries: np.ndarray, p: int) -> np.ndarray:
    """Keep each row's top-p entries as 1s, then symmetrize by averaging.

    The cut is a per-row threshold at the p-th largest value with ties
    kept: on tie-free similarities this is exactly top-p selection, and on
    exactly tied rows (identical vectors) it keeps the selection symmetric
    instead of letting argsort order pick arbitrary winners.
    """
    n = len(entries)
    kth_largest = np.sort(entries, axis=1)[:, n - p]
    binary = (entries >= kth_largest[:, None]).astype(np.float64)
    return 0.5 * (binary + binary.T)


def _laplacian_eigs(graph: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    adjacency = graph.copy()
    np.fill_diagonal(adjacency, 0.0)
    laplacian = np.diag(adjacency.sum(axis=1)) - adjacency
    eigenvalues, eigenvectors = np.linalg.eigh(laplacian)
    return eigenvalues, eigenvectors


def _max_gap(eigenvalues: np.ndarray, max_speakers: int) -> tuple[int, float]:
    """(argmax index, normalized value) over the first usable eigenvalue gaps.

    The winning gap is divided by the largest eigenvalue so the statistic
    is scale-free: denser graphs inflate every eigenvalue roughly with the
    node degree, and the raw gap with them.
    """
    gaps = np.diff(eigenvalues)[: min(max_speakers, len(eigenvalues) - 1)]
    index = int(np.argmax(gaps))
    return index, float(gaps[index] / (eigenvalues.max() + _EPS))


def _candidate_grid(n: int, limit: int = 100) -> list[int]:
    p_max = math.ceil(n / 2)
    if p_max <= limit:
        return list(range(1, p_max + 1))
    return sorted({int(round(p)) for p in np.linspace(1, p_max, limit)})


def _is_connected(graph: np.ndarray) -> bool:
    count, _ = connected_components(csr_matrix(graph > 0), directed=False)
    return count == 1


def nme_sc(
    affinity: AffinityMatrix | np.ndarray, max_speakers: int = 6
) -> ClusterAssignment:
    """Spectral clustering with eigengap-tuned binarization and cluster count.

    For each candidate row-wise binarization level p, the unnormalized
    Laplacian of the symmetrized p-nearest graph is eigendecomposed; the
    ratio (p / n) / (largest eigengap / largest eigenvalue) ranks the
    candidates and its minimizer (smallest p on ties) is kept. A sparse
    winner can shred a single cluster into accidental islands, so when
    any candidate graph is connected the minimization runs over the
    connected candidates only; when none is (cleanly separated clusters
    stay disconnected at every p) the unrestricted winner stands. The
    gap position gives k; k-means over the row-normalized k smallest
    eigenvectors gives the labels.
    """
    if isinstance(affinity, np.ndarray):
        affinity = AffinityMatrix(affinity)
    if max_speakers < 1:
        raise ValidationError(f"max_speakers must be >= 1, got {max_speakers}")
    n = affinity.n
    if n == 1:
        return ClusterAssignment(labels=[0], k=1)

    candidates = []
    for p in _candidate_grid(n):
        graph = _binarized_graph(affinity.entries, p)
        eigenvalues, _ = _laplacian_eigs(graph)
        gap_index, gap = _max_gap(eigenvalues, max_speakers)
        ratio = (p / n) / (gap + _EPS)
        candidates.append((ratio, p, gap_index + 1, _is_connected(graph)))

    connected = [c for c in candidates if c[3]]
    _, best_p, best_k, _ = min(connected or candidates, key=lambda c: c[0])
    best_graph = _binarized_graph(affinity.entries, best_p)

    k = max(1, min(best_k, max_speakers, n))
    if k == 1:
        return ClusterAssignment(labels=[0] * n, k=1)

    _, eigenvectors = _laplacian_eigs(best_graph)
    embedding = eigenvectors[:, :k]
    norms = np.linalg.norm(embedding, axis=1, keepdims=True)
    embedding = np.where(norms > _EPS, embedding / np.maximum(norms, _EPS), embedding)
    kmeans = KMeans(
        n_clusters=k,
        init="k-means++",
        n_init=10,
        max_iter=300,
        random_state=KMEANS_RANDOM_STATE,
    )
    labels = kmeans.fit_predict(embedding)
    return ClusterAssignment(labels=[int(l) for l in labels], k=k)


def online_cluster(
    stream: EmbeddingSequence, threshold: float, max_speakers: int = 6
) -> ClusterAssignment:
    """Single-pass leader-follower clustering, strictly causal.

    Each vector joins the centroid (running renormalized mean) it is most
    similar to when that similarity reaches the threshold; otherwise it
    founds a new cluster until max_speakers exist, after which it joins the
    nearest centroid regardless. Labels for a prefix of the stream never
    depend on later vectors.
    """
    if not -1.0 < threshold < 1.0:
        raise ValidationError(f"threshold must be inside (-1, 1), got {threshold}")
    sums: list[np.ndarray] = []
    units: list[np.ndarray] = []
    labels: list[int] = []
    for vector in stream.vectors:
        if sums:
            sims = np.array([unit @ vector for unit in units])
            nearest = int(np.argmax(sims))
        if not sums or (sims[nearest] < threshold and len(sums) < max_speakers):
            sums.append(vector.copy())
            units.append(vector.copy())
            labels.append(len(sums) - 1)
            continue
        labels.append(nearest)
        sums[nearest] = sums[nearest] + vector
        norm = np.linalg.norm(sums[nearest])
        units[nearest] = sums[nearest] / norm if norm > _EPS else sums[nearest]
    return ClusterAssignment(labels=labels, k=max(1, len(sums)))


def window_embeddings(
    frame_embeddings: EmbeddingSequence, window: float = 1.2, shift: float = 0.6
) -> EmbeddingSequence:
    """Average frame vectors over a sliding window.

    Windows start at the first timestamp and advance by ``shift``; the
    window count is ceil((span - window) / shift) + 1 with a minimum of
    one, and the final window closes its right edge so the last frame is
    always covered. Each window's mean vector is renormalized and stamped
    with the window center; empty windows are dropped.
    """
    if window <= 0 or shift <= 0:
        raise ValidationError("window and shift must be positive")
    if len(frame_embeddings) == 0:
        return EmbeddingSequence(np.zeros((0, 0)), [])
    times = np.asarray(frame_embeddings.timestamps, dtype=np.float64)
    t0 = float(times.min())
    span = float(times.max()) - t0
    count = max(1, math.ceil((span - window) / shift - 1e-12) + 1)
    vectors = []
    centers = []
    for i in range(count):
        start = t0 + i * shift
        if i == count - 1:
            mask = (times >= start) & (times <= start + window)
        else:
            mask = (times >= start) & (times < start + window)
        if not mask.any():
            continue
        vectors.append(frame_embeddings.vectors[mask].mean(axis=0))
        centers.append(start + window / 2)
    if not vectors:
        return EmbeddingSequence(np.zeros((0, 0)), [])
    return EmbeddingSequence(np.array(vectors), centers)


def read_embeddings(path: str | Path, sidecar: str | Path | None = None) -> EmbeddingSequence:
    """Load embeddings from JSONL or from a raw float32 block plus sidecar.

    JSONL (path ending in .jsonl): one object per line with "vector",
    "timestamp", and optional "token". Raw: little-endian float32 values,
    count x dim, described by a JSON sidecar {"count", "dim", "timestamps",
    optional "tokens"} found at <path>.json unless given explicitly.
    """
    path = Path(path)
    if path.suffix == ".jsonl":
        vectors = []
        timestamps = []
        tokens = []
        with path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                vectors.append(record["vector"])
                timestamps.append(float(record["timestamp"]))
                tokens.append(record.get("token"))
        has_tokens = any(t is not None for t in tokens)
        return EmbeddingSequence(
            np.array(vectors, dtype=np.float64),
            timestamps,
            tokens if has_tokens else None,
        )
    sidecar = Path(sidecar) if sidecar is not None else Path(f"{path}.json")
    meta = json.loads(sidecar.read_text(encoding="utf-8"))
    data = np.fromfile(path, dtype="<f4").astype(np.float64)
    count, dim = int(meta["count"]), int(meta["dim"])
    if data.size != count * dim:
        raise ValidationError(
            f"raw embedding file has {data.size} floats, sidecar says {count}x{dim}"
        )
    return EmbeddingSequence(
        data.reshape(count, dim),
        [float(t) for t in meta["timestamps"]],
        meta.get("tokens"),
    )


def write_embeddings_jsonl(seq: EmbeddingSequence, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for i in range(len(seq)):
            record: dict = {
                "vector": [float(x) for x in seq.vectors[i]],
                "timestamp": seq.timestamps[i],
            }
            if seq.tokens is not None:
                record["token"] = seq.tokens[i]
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def write_assignment(
    assignment: ClusterAssignment, timestamps: Sequence[float], path: str | Path
) -> None:
    """Emit one (index, timestamp, label) JSON object per vector."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for i, (t, label) in enumerate(zip(timestamps, assignment.labels)):
            fh.write(json.dumps({"index": i, "timestamp": t, "label": label}) + "\n")
