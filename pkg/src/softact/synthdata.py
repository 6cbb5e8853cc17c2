"""Synthetic verb-noun action grammars and desk-scale datasets.

The generator builds a world in which smoothing priors have something real
to exploit: feature means of actions sharing a verb or noun sit closer
together than unrelated actions (so cohort members are genuinely
confusable), and annotation sequences follow a ground-truth Markov chain
(so predecessor statistics are learnable). Everything is a pure function
of its config and seed.

Token names are letters only ("va", "nb", ...) so that embedding lookups,
which split tokens on non-alphabetic characters, see them unchanged.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .priors import EmbeddingTable
from .seqmodel import ProtocolConfig
from .vocab import ActionInstance, ActionVocab, AnnotationSet

FEATURE_MAGIC = b"FEAT"
FEATURE_VERSION = 1


def _letters(i: int) -> str:
    """0 -> 'a', 25 -> 'z', 26 -> 'aa', ... (letters only)."""
    out = ""
    i += 1
    while i > 0:
        i, r = divmod(i - 1, 26)
        out = chr(ord("a") + r) + out
    return out


@dataclass(frozen=True)
class GrammarConfig:
    """Knobs for the synthetic action world.

    ``sigma_within`` scales per-action jitter, ``sigma_between`` scales the
    shared verb/noun anchors of the class means; keeping within < between
    makes cohort-sharing actions the confusable ones.
    """

    num_verbs: int
    num_nouns: int
    action_density: float = 1.0
    sigma_within: float = 0.25
    sigma_between: float = 1.0
    markov_concentration: float = 1.0
    modalities: tuple[tuple[str, int], ...] = (("rgb", 16), ("flow", 16))
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "modalities",
                           tuple((str(n), int(d)) for n, d in self.modalities))
        if self.num_verbs < 1 or self.num_nouns < 1:
            raise ValueError("need at least one verb and one noun")
        if not (0.0 < self.action_density <= 1.0):
            raise ValueError(f"action_density must be in (0, 1], got {self.action_density}")
        if not (0.0 <= self.sigma_within < self.sigma_between):
            raise ValueError("need 0 <= sigma_within < sigma_between")
        if self.markov_concentration <= 0:
            raise ValueError("markov_concentration must be positive")


@dataclass(frozen=True)
class SyntheticGrammar:
    """Ground truth of a synthetic world: vocabulary, Markov chain over
    actions, and per-modality feature means for every action."""

    config: GrammarConfig
    vocab: ActionVocab
    transition: np.ndarray               # (K, K) row-stochastic
    class_means: tuple[np.ndarray, ...]  # per modality (K, D)

    @property
    def K(self) -> int:
        return self.vocab.K

    def to_json_dict(self) -> dict:
        return {
            "num_verbs": self.config.num_verbs,
            "num_nouns": self.config.num_nouns,
            "action_density": self.config.action_density,
            "sigma_within": self.config.sigma_within,
            "sigma_between": self.config.sigma_between,
            "markov_concentration": self.config.markov_concentration,
            "modalities": [[n, d] for n, d in self.config.modalities],
            "seed": self.config.seed,
            "vocab": json.loads(self.vocab.to_json()),
            "transition": self.transition.tolist(),
            "class_means": [m.tolist() for m in self.class_means],
        }


def grammar_from_json_dict(d: dict) -> SyntheticGrammar:
    """Rebuild a grammar saved via :meth:`SyntheticGrammar.to_json_dict`."""
    config = GrammarConfig(
        num_verbs=d["num_verbs"],
        num_nouns=d["num_nouns"],
        action_density=d["action_density"],
        sigma_within=d["sigma_within"],
        sigma_between=d["sigma_between"],
        markov_concentration=d["markov_concentration"],
        modalities=tuple((n, dim) for n, dim in d["modalities"]),
        seed=d["seed"],
    )
    vocab = ActionVocab.from_json(json.dumps(d["vocab"]))
    return SyntheticGrammar(
        config=config,
        vocab=vocab,
        transition=np.array(d["transition"], dtype=np.float64),
        class_means=tuple(np.array(m, dtype=np.float64)
                          for m in d["class_means"]),
    )


def gen_grammar(config: GrammarConfig) -> SyntheticGrammar:
    """Sample a grammar: which grid cells are actions, their transition
    chain, and their feature means."""
    rng = np.random.default_rng(config.seed)
    V, N = config.num_verbs, config.num_nouns
    count = int(np.ceil(config.action_density * V * N))
    if count < 2:
        raise ValueError(f"realized action count {count} < 2; raise density or grid")
    cells = rng.choice(V * N, size=count, replace=False)

    verb_names: list[str] = []
    noun_names: list[str] = []
    verb_ids: dict[int, int] = {}
    noun_ids: dict[int, int] = {}
    actions: list[tuple[int, int]] = []
    for cell in cells:
        v, n = int(cell) // N, int(cell) % N
        if v not in verb_ids:
            verb_ids[v] = len(verb_names)
            verb_names.append("v" + _letters(v))
        if n not in noun_ids:
            noun_ids[n] = len(noun_names)
            noun_names.append("n" + _letters(n))
        actions.append((verb_ids[v], noun_ids[n]))
    vocab = ActionVocab(tuple(verb_names), tuple(noun_names), tuple(actions))
    K = vocab.K

    transition = rng.dirichlet(np.full(K, config.markov_concentration), size=K)
    transition /= transition.sum(axis=1, keepdims=True)

    # Class mean = shared verb anchor + shared noun anchor + own jitter, so
    # actions sharing a token differ only in one anchor plus jitter and end
    # up closer together than unrelated actions.
    means = []
    for _, dim in config.modalities:
        verb_anchor = rng.normal(size=(len(verb_names), dim)) / np.sqrt(dim)
        noun_anchor = rng.normal(size=(len(noun_names), dim)) / np.sqrt(dim)
        jitter = rng.normal(size=(K, dim)) / np.sqrt(dim)
        mk = np.empty((K, dim))
        for k, (v, n) in enumerate(vocab.actions):
            mk[k] = config.sigma_between * (verb_anchor[v] + noun_anchor[n]) \
                + config.sigma_within * jitter[k]
        means.append(mk)
    return SyntheticGrammar(config=config, vocab=vocab, transition=transition,
                            class_means=tuple(means))


def gen_annotation_sequences(grammar: SyntheticGrammar, num_videos: int,
                             length: int, seed: int) -> AnnotationSet:
    """Markov walks over the grammar's chain; one annotation per second."""
    if length < 1:
        raise ValueError("length must be >= 1")
    rng = np.random.default_rng(seed)
    K = grammar.K
    vocab = grammar.vocab
    instances = []
    for vid in range(num_videos):
        video_id = f"synth{vid:04d}"
        state = int(rng.integers(K))
        for step in range(length):
            v, n = vocab.actions[state]
            instances.append(ActionInstance(video_id, float(step),
                                            vocab.verbs[v], vocab.nouns[n]))
            if step + 1 < length:
                state = int(rng.choice(K, p=grammar.transition[state]))
    return AnnotationSet(tuple(instances))


@dataclass
class FeatureSet:
    """Per-modality feature sequences plus targets for a set of samples.

    ``features[m]`` has shape (num_samples, timesteps, dims[m]), float32.
    The split tag is carried in memory only; the on-disk format does not
    store it.
    """

    dims: tuple[int, ...]
    features: tuple[np.ndarray, ...]
    targets: np.ndarray
    split: str = ""

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.targets = np.asarray(self.targets, dtype=np.int64)
        if len(self.features) != len(self.dims):
            raise ValueError("one feature block per modality required")
        feats = []
        n = self.targets.shape[0]
        for d, x in zip(self.dims, self.features):
            x = np.asarray(x, dtype=np.float32)
            if x.ndim != 3 or x.shape[0] != n or x.shape[2] != d:
                raise ValueError(f"feature block has shape {x.shape}, "
                                 f"expected ({n}, T, {d})")
            feats.append(x)
        if len({x.shape[1] for x in feats}) > 1:
            raise ValueError("all modalities must share the same timestep count")
        self.features = tuple(feats)

    @property
    def num_samples(self) -> int:
        return int(self.targets.shape[0])

    @property
    def timesteps(self) -> int:
        return int(self.features[0].shape[1]) if self.features else 0

    def subset(self, indices, split: str = "") -> "FeatureSet":
        idx = np.asarray(indices, dtype=np.int64)
        return FeatureSet(
            dims=self.dims,
            features=tuple(x[idx] for x in self.features),
            targets=self.targets[idx],
            split=split or self.split,
        )

    def batches(self, order: np.ndarray, batch_size: int):
        """Yield (per-modality arrays, targets) minibatches in the given order."""
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            yield [x[idx] for x in self.features], self.targets[idx]

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureSet):
            return NotImplemented
        return (self.dims == other.dims
                and self.split == other.split
                and np.array_equal(self.targets, other.targets)
                and len(self.features) == len(other.features)
                and all(np.array_equal(a, b)
                        for a, b in zip(self.features, other.features)))


def gen_features(grammar: SyntheticGrammar, annotations: AnnotationSet,
                 protocol: ProtocolConfig, noise_sigma: float,
                 seed: int, split: str = "") -> FeatureSet:
    """One sample per annotated action except each video's first.

    The observed snippet sequence drifts linearly from the previous
    action's mean to the target action's mean (reaching it exactly at the
    last timestep), with Gaussian noise of scale ``noise_sigma``.
    """
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    vocab = grammar.vocab
    T = protocol.total_steps
    lam = np.linspace(0.0, 1.0, T)[:, None]

    pairs = sample_transition_pairs(annotations, vocab)
    targets = np.array([tgt for _, tgt in pairs], dtype=np.int64)
    blocks = []
    for means in grammar.class_means:
        dim = means.shape[1]
        block = np.empty((len(pairs), T, dim), dtype=np.float32)
        for i, (prev, tgt) in enumerate(pairs):
            path = (1.0 - lam) * means[prev] + lam * means[tgt]
            noise = rng.normal(scale=noise_sigma, size=(T, dim)) \
                if noise_sigma > 0 else 0.0
            block[i] = (path + noise).astype(np.float32)
        blocks.append(block)
    return FeatureSet(dims=tuple(d for _, d in grammar.config.modalities),
                      features=tuple(blocks), targets=targets, split=split)


def sample_transition_pairs(annotations: AnnotationSet,
                            vocab: ActionVocab) -> list[tuple[int, int]]:
    """(previous, target) action ids in sample order: per video, every
    instance except the first, videos in annotation order."""
    pairs: list[tuple[int, int]] = []
    for video in annotations.videos():
        ids = [vocab.action_id(i.verb, i.noun) for i in video]
        pairs.extend(zip(ids, ids[1:]))
    return pairs


def gen_synthetic_embeddings(grammar: SyntheticGrammar, d: int,
                             cohort_similarity: float, seed: int) -> EmbeddingTable:
    """Token embeddings with controlled pairwise cosine.

    Within the verb set and within the noun set, pairwise cosine is
    ``cohort_similarity`` (exact when d is large enough for an orthonormal
    construction, approximate otherwise); verb and noun directions are
    unrelated. With similarity 0 and ample d, distinct tokens are
    (near-)orthogonal.
    """
    if not (0.0 <= cohort_similarity <= 1.0):
        raise ValueError("cohort_similarity must be in [0, 1]")
    if d < 1:
        raise ValueError("d must be >= 1")
    rng = np.random.default_rng(seed)
    vocab = grammar.vocab
    needed = len(vocab.verbs) + len(vocab.nouns) + 2
    if d >= needed:
        basis, _ = np.linalg.qr(rng.normal(size=(d, needed)))
        columns = iter(basis.T)
    else:
        raw = rng.normal(size=(needed, d))
        columns = iter(raw / np.linalg.norm(raw, axis=1, keepdims=True))
    vectors: dict[str, np.ndarray] = {}
    s = cohort_similarity
    for tokens in (vocab.verbs, vocab.nouns):
        shared = next(columns)
        for token in tokens:
            own = next(columns)
            vec = np.sqrt(s) * shared + np.sqrt(1.0 - s) * own
            vectors[token] = vec / np.linalg.norm(vec)
    return EmbeddingTable(d, vectors)


def write_features(feature_set: FeatureSet, sink) -> None:
    """Serialize to the binary feature format.

    Layout: magic ``FEAT``, version u32, num_samples u32, num_modalities
    u32, per-modality dims u32, timesteps u32, then per sample a target
    u32 followed by each modality's (T, D) float32 block, little-endian,
    timestep-major.
    """
    close = False
    if isinstance(sink, (str, Path)):
        sink = open(sink, "wb")
        close = True
    try:
        n = feature_set.num_samples
        sink.write(FEATURE_MAGIC)
        sink.write(struct.pack("<I", FEATURE_VERSION))
        sink.write(struct.pack("<I", n))
        sink.write(struct.pack("<I", len(feature_set.dims)))
        for d in feature_set.dims:
            sink.write(struct.pack("<I", d))
        sink.write(struct.pack("<I", feature_set.timesteps))
        for i in range(n):
            target = int(feature_set.targets[i])
            if not (0 <= target <= 0xFFFFFFFF):
                raise ValueError(f"target {target} does not fit in u32")
            sink.write(struct.pack("<I", target))
            for block in feature_set.features:
                sink.write(np.ascontiguousarray(block[i], dtype="<f4").tobytes())
    finally:
        if close:
            sink.close()


def read_features(source, split: str = "") -> FeatureSet:
    """Inverse of :func:`write_features`; the split tag is not stored on
    disk, so pass it back in if you need it."""
    if isinstance(source, (str, Path)):
        data = Path(source).read_bytes()
    else:
        data = source.read()
    if data[:4] != FEATURE_MAGIC:
        raise FormatError(f"bad feature-file magic {data[:4]!r}")
    if len(data) < 16:
        raise FormatError("truncated feature-file header")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FEATURE_VERSION:
        raise FormatError(f"unsupported feature-file version {version}")
    (n,) = struct.unpack_from("<I", data, 8)
    (num_modalities,) = struct.unpack_from("<I", data, 12)
    offset = 16
    if len(data) < offset + 4 * (num_modalities + 1):
        raise FormatError("truncated feature-file header")
    dims = []
    for _ in range(num_modalities):
        (d,) = struct.unpack_from("<I", data, offset)
        dims.append(int(d))
        offset += 4
    (timesteps,) = struct.unpack_from("<I", data, offset)
    offset += 4
    targets = np.empty(n, dtype=np.int64)
    blocks = [np.empty((n, timesteps, d), dtype=np.float32) for d in dims]
    for i in range(n):
        if offset + 4 > len(data):
            raise FormatError(f"truncated feature file at sample {i}")
        (targets[i],) = struct.unpack_from("<I", data, offset)
        offset += 4
        for m, d in enumerate(dims):
            count = timesteps * d
            end = offset + 4 * count
            if end > len(data):
                raise FormatError(f"truncated feature file at sample {i}")
            blocks[m][i] = np.frombuffer(data[offset:end], dtype="<f4") \
                .reshape(timesteps, d)
            offset = end
    if offset != len(data):
        raise FormatError(f"{len(data) - offset} trailing bytes in feature file")
    return FeatureSet(dims=tuple(dims), features=tuple(blocks),
                      targets=targets, split=split)
