"""Row-stochastic prior matrices used to smooth one-hot action labels.

Four builders are provided, all returning a K x K :class:`PriorMatrix`
whose row k is the prior distribution paired with ground-truth class k:

* uniform      -- every entry 1/K;
* verb_noun    -- equal mass on the actions sharing the row's verb or noun;
* glove        -- normalized absolute dot products of word-embedding
                  action representations;
* temporal     -- normalized predecessor counts from consecutive actions
                  observed within videos.

Mixtures are weighted row-wise averages of compatible priors.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError
from .vocab import ActionVocab, AnnotationSet

ROW_SUM_TOL = 1e-12

_WORD_SPLIT = re.compile(r"[^a-zA-Z]+")


@dataclass(frozen=True)
class PriorMatrix:
    """K x K row-stochastic matrix; row k is the prior for class k."""

    rows: np.ndarray
    kind: str = "custom"

    def __post_init__(self):
        rows = np.ascontiguousarray(np.asarray(self.rows, dtype=np.float64))
        if rows.ndim != 2 or rows.shape[0] != rows.shape[1]:
            raise ValueError(f"prior must be square, got shape {rows.shape}")
        if rows.shape[0] < 1:
            raise ValueError("prior needs at least one class")
        if np.any(rows < 0):
            raise ValueError("prior entries must be non-negative")
        sums = rows.sum(axis=1)
        bad = np.abs(sums - 1.0) > ROW_SUM_TOL
        if np.any(bad):
            k = int(np.argmax(bad))
            raise ValueError(f"prior row {k} sums to {sums[k]!r}, not 1")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def K(self) -> int:
        return self.rows.shape[0]

    def row(self, k: int) -> np.ndarray:
        return self.rows[k]


def build_uniform_prior(K: int) -> PriorMatrix:
    """Constant prior: every row is the uniform distribution over K classes."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    return PriorMatrix(np.full((K, K), 1.0 / K), kind="uniform")


def build_verb_noun_prior(vocab: ActionVocab) -> PriorMatrix:
    """Equal mass 1/C_k on every action sharing row k's verb or noun.

    C_k = |verb cohort| + |noun cohort| - 1; the row's own action is the
    single member of both cohorts, so the support size is exactly C_k and
    each row sums to 1 by construction.
    """
    K = vocab.K
    rows = np.zeros((K, K))
    for k, (v, n) in enumerate(vocab.actions):
        support = vocab.verb_cohort(v) | vocab.noun_cohort(n)
        c_k = len(vocab.verb_cohort(v)) + len(vocab.noun_cohort(n)) - 1
        rows[k, sorted(support)] = 1.0 / c_k
    return PriorMatrix(rows, kind="verb_noun")


@dataclass(frozen=True)
class EmbeddingTable:
    """Word -> vector map with a fixed dimension."""

    dimension: int
    vectors: dict[str, np.ndarray]

    def __post_init__(self):
        for word, vec in self.vectors.items():
            if vec.shape != (self.dimension,):
                raise ValueError(
                    f"vector for {word!r} has shape {vec.shape}, "
                    f"expected ({self.dimension},)"
                )

    def __contains__(self, word: str) -> bool:
        return word in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)


def load_embeddings(text: str, dimension: int) -> EmbeddingTable:
    """Parse plain-text embeddings: one ``word v1 ... vd`` line per word.

    Later duplicates overwrite earlier entries. Wrong value count or a
    non-numeric value raises ParseError with the line number.
    """
    if dimension < 1:
        raise ValueError(f"dimension must be >= 1, got {dimension}")
    vectors: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != dimension + 1:
            raise ParseError(
                f"line {lineno}: expected {dimension} values after the word, "
                f"got {len(parts) - 1}"
            )
        try:
            vec = np.array([float(p) for p in parts[1:]], dtype=np.float64)
        except ValueError:
            raise ParseError(f"line {lineno}: non-numeric embedding value") from None
        vectors[parts[0]] = vec
    return EmbeddingTable(dimension, vectors)


@dataclass(frozen=True)
class ActionEmbedding:
    """Concatenated verb and noun embedding of one action (length 2d)."""

    action_id: int
    vector: np.ndarray


def _embed_token(token: str, table: EmbeddingTable) -> np.ndarray:
    """Mean of the embeddings of the token's alphabetic words.

    Multi-word tokens (``pumpkin:seeds``) are split on non-alphabetic
    characters; words missing from the table are skipped; a token with no
    known words maps to the zero vector.
    """
    words = [w for w in _WORD_SPLIT.split(token) if w]
    found = [table.vectors[w] for w in words if w in table.vectors]
    if not found:
        return np.zeros(table.dimension)
    return np.mean(found, axis=0)


def embed_action(vocab: ActionVocab, table: EmbeddingTable,
                 action_id: int) -> ActionEmbedding:
    """Verb embedding concatenated with noun embedding (length 2d)."""
    if not (0 <= action_id < vocab.K):
        raise IndexError(f"action_id {action_id} out of range (K={vocab.K})")
    v, n = vocab.actions[action_id]
    vec = np.concatenate([
        _embed_token(vocab.verbs[v], table),
        _embed_token(vocab.nouns[n], table),
    ])
    return ActionEmbedding(action_id, vec)


def action_embedding_matrix(vocab: ActionVocab, table: EmbeddingTable) -> np.ndarray:
    """(K, 2d) matrix of all action embeddings."""
    return np.stack([embed_action(vocab, table, k).vector for k in range(vocab.K)])


def build_glove_prior(vocab: ActionVocab, table: EmbeddingTable) -> PriorMatrix:
    """Row k entry i = |phi_k . phi_i| / sum_j |phi_k . phi_j|.

    Raw (unnormalized) dot products of the concatenated embeddings; a row
    whose denominator is zero (the action embedded as the zero vector)
    falls back to uniform.
    """
    phi = action_embedding_matrix(vocab, table)
    sims = np.abs(phi @ phi.T)
    return _normalize_rows(sims, vocab.K, kind="glove")


@dataclass(frozen=True)
class TransitionCounts:
    """counts[i, k] = number of observed transitions action i -> action k."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError(f"counts must be square, got shape {counts.shape}")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "counts", counts.astype(np.int64))


def count_transitions(annotations: AnnotationSet, vocab: ActionVocab) -> TransitionCounts:
    """Count consecutive action pairs within each video (never across videos)."""
    counts = np.zeros((vocab.K, vocab.K), dtype=np.int64)
    for video in annotations.videos():
        ids = []
        for inst in video:
            try:
                ids.append(vocab.action_id(inst.verb, inst.noun))
            except KeyError:
                raise ValueError(
                    f"unknown action ({inst.verb!r}, {inst.noun!r}) in video "
                    f"{inst.video_id!r} at t={inst.start_time}"
                ) from None
        for prev, nxt in zip(ids, ids[1:]):
            counts[prev, nxt] += 1
    return TransitionCounts(counts)


def prior_from_transition_counts(counts: TransitionCounts) -> PriorMatrix:
    """Row k entry i = counts[i, k] / sum_j counts[j, k].

    Row k is the predecessor distribution of action k; actions never seen
    as a successor get a uniform row.
    """
    preceder = counts.counts.T.astype(np.float64)
    return _normalize_rows(preceder, preceder.shape[0], kind="temporal")


def build_temporal_prior(annotations: AnnotationSet, vocab: ActionVocab) -> PriorMatrix:
    """Predecessor-frequency prior estimated from consecutive annotations."""
    return prior_from_transition_counts(count_transitions(annotations, vocab))


def _normalize_rows(weights: np.ndarray, K: int, kind: str) -> PriorMatrix:
    rows = np.array(weights, dtype=np.float64)
    denom = rows.sum(axis=1)
    zero = denom == 0.0
    rows[zero] = 1.0 / K
    denom[zero] = 1.0
    rows /= denom[:, None]
    return PriorMatrix(rows, kind=kind)


def mix_priors(priors: list[PriorMatrix], weights: list[float]) -> PriorMatrix:
    """Weighted row-wise average; weights are normalized to sum to 1."""
    if not priors:
        raise ValueError("need at least one prior to mix")
    if len(priors) != len(weights):
        raise ValueError(f"{len(priors)} priors but {len(weights)} weights")
    K = priors[0].K
    for p in priors[1:]:
        if p.K != K:
            raise ValueError(f"mismatched class counts: {K} vs {p.K}")
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    total = w.sum()
    if total <= 0:
        raise ValueError("weights must not all be zero")
    w = w / total
    rows = np.zeros((K, K))
    for weight, p in zip(w, priors):
        rows += weight * p.rows
    kind = "+".join(p.kind for p in priors)
    return PriorMatrix(rows, kind=kind)


def save_prior(prior: PriorMatrix, path: str | Path,
               vocab_hash: str | None = None) -> None:
    """Write the matrix as CSV (17 significant digits) plus a JSON sidecar
    recording the prior kind and the vocab hash it was built against."""
    path = Path(path)
    lines = [",".join(f"{x:.17g}" for x in row) for row in prior.rows]
    path.write_text("\n".join(lines) + "\n")
    sidecar = {"kind": prior.kind, "K": prior.K, "vocab_hash": vocab_hash}
    path.with_suffix(".json").write_text(json.dumps(sidecar))


def load_prior(path: str | Path) -> PriorMatrix:
    """Read a prior CSV written by :func:`save_prior` (sidecar optional)."""
    path = Path(path)
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = [float(x) for x in line.split(",")]
        except ValueError:
            raise ParseError(f"line {lineno}: non-numeric prior entry") from None
        if rows and len(row) != len(rows[0]):
            raise ParseError(
                f"line {lineno}: expected {len(rows[0])} columns, got {len(row)}"
            )
        rows.append(row)
    if not rows or len(rows) != len(rows[0]):
        raise ParseError(
            f"prior CSV is not square: {len(rows)} rows of "
            f"{len(rows[0]) if rows else 0} columns"
        )
    kind = "custom"
    sidecar = path.with_suffix(".json")
    if sidecar.exists():
        kind = json.loads(sidecar.read_text()).get("kind", "custom")
    return PriorMatrix(np.array(rows, dtype=np.float64), kind=kind)
