"""Training runs, alpha grid search, and multi-method comparisons.

Everything here is deterministic given the dataset and config: trial t of
any method trains with model seed ``config.seed + t``, epoch shuffling is
seeded from the model seed, and artifact files are written in a fixed
order, so a rerun reproduces every CSV byte for byte.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import FormatError, TrainingDiverged
from .metrics import (MetricsReport, build_report, many_shot_from_labels,
                      report_to_csv, topk_accuracy)
from .priors import (EmbeddingTable, PriorMatrix, TransitionCounts,
                     build_glove_prior, build_uniform_prior,
                     build_verb_noun_prior, load_embeddings, mix_priors,
                     prior_from_transition_counts)
from .seqmodel import (ModelConfig, ModelParams, ProtocolConfig, adam_step,
                       forward_batch, init_params, loss_and_gradients_batch,
                       save_checkpoint)
from .smoothing import SmoothingConfig, smooth_label_matrix
from .synthdata import (FeatureSet, GrammarConfig, SyntheticGrammar,
                        gen_annotation_sequences, gen_features, gen_grammar,
                        gen_synthetic_embeddings, grammar_from_json_dict,
                        read_features, sample_transition_pairs, write_features)
from .vocab import (ActionVocab, AnnotationSet, format_annotations,
                    parse_annotations)

DATASET_FORMAT = "softact-dataset"
DATASET_VERSION = 1

# Smoothing strengths that worked best per prior in the reference runs.
DEFAULT_ALPHAS = {
    "onehot": 0.0,
    "uniform": 0.1,
    "verb_noun": 0.45,
    "glove": 0.6,
    "temporal": 0.6,
    "glove+verb_noun": 0.5,
}

METHOD_KINDS = tuple(DEFAULT_ALPHAS)


@dataclass(frozen=True)
class AlphaGrid:
    """Inclusive, evenly spaced alpha values to search over."""

    start: float = 0.0
    stop: float = 1.0
    step: float = 0.05

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("step must be positive")
        if not (0.0 <= self.start <= self.stop <= 1.0):
            raise ValueError("need 0 <= start <= stop <= 1")
        span = (self.stop - self.start) / self.step
        if abs(span - round(span)) > 1e-9:
            raise ValueError(
                f"step {self.step} does not evenly divide "
                f"[{self.start}, {self.stop}]"
            )

    def values(self) -> tuple[float, ...]:
        n = round((self.stop - self.start) / self.step)
        return tuple(round(self.start + i * self.step, 10) for i in range(n + 1))


@dataclass(frozen=True)
class ExperimentConfig:
    """Optimization and trial settings shared by all runs.

    Model selection ("early stopping") is by best validation top-5 at the
    decode step closest to ``early_stop_time`` seconds. ``smoothing`` is
    the default method for single-method commands; comparisons pass their
    own method list.
    """

    smoothing: SmoothingConfig = SmoothingConfig()
    epochs: int = 100
    batch_size: int = 256
    trials: int = 10
    alpha_grid: AlphaGrid = AlphaGrid()
    hidden_size: int = 64
    learning_rate: float = 0.001
    seed: int = 0
    early_stop_time: float = 1.0
    many_shot_threshold: int = 100

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.trials < 1:
            raise ValueError("epochs, batch_size and trials must be >= 1")
        if self.hidden_size < 1:
            raise ValueError("hidden_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.early_stop_time <= 0:
            raise ValueError("early_stop_time must be positive")
        if self.many_shot_threshold < 1:
            raise ValueError("many_shot_threshold must be >= 1")

    def to_json_dict(self) -> dict:
        d = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "smoothing":
                value = {"alpha": value.alpha, "prior_kind": value.prior_kind}
            elif f.name == "alpha_grid":
                value = {"start": value.start, "stop": value.stop,
                         "step": value.step}
            d[f.name] = value
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown experiment config keys: {sorted(unknown)}")
        kwargs = dict(d)
        if "smoothing" in kwargs:
            kwargs["smoothing"] = SmoothingConfig(**kwargs["smoothing"])
        if "alpha_grid" in kwargs:
            kwargs["alpha_grid"] = AlphaGrid(**kwargs["alpha_grid"])
        return cls(**kwargs)


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(d, dict):
        raise FormatError(f"{path}: expected a JSON object")
    try:
        return ExperimentConfig.from_json_dict(d)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from None


def save_experiment_config(config: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_json_dict(), indent=2) + "\n")


# ---------------------------------------------------------------------------
# Dataset bundles


@dataclass
class Dataset:
    """A ready-to-train bundle: splits, vocabulary, and prior inputs.

    ``train_pairs`` holds the (previous, target) action ids of the train
    samples so the transition prior can be estimated without touching
    validation or test data.
    """

    vocab: ActionVocab
    protocol: ProtocolConfig
    modalities: tuple[tuple[str, int], ...]
    train: FeatureSet
    val: FeatureSet
    test: FeatureSet
    train_pairs: tuple[tuple[int, int], ...]
    embeddings: EmbeddingTable | None = None
    grammar: SyntheticGrammar | None = None
    annotations: AnnotationSet | None = None

    @property
    def K(self) -> int:
        return self.vocab.K


def split_dataset(num_samples: int, fractions=(0.7, 0.15, 0.15),
                  seed: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Disjoint train/val/test index arrays from a seeded permutation."""
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ValueError("need three positive split fractions")
    if sum(fractions) > 1.0 + 1e-9:
        raise ValueError(f"split fractions sum to {sum(fractions)} > 1")
    perm = np.random.default_rng(seed).permutation(num_samples)
    n_train = round(fractions[0] * num_samples)
    n_val = round(fractions[1] * num_samples)
    if n_train < 1 or n_val < 1 or n_train + n_val >= num_samples:
        raise ValueError(f"{num_samples} samples are too few for {fractions}")
    return (np.sort(perm[:n_train]),
            np.sort(perm[n_train:n_train + n_val]),
            np.sort(perm[n_train + n_val:]))


def generate_dataset(grammar_config: GrammarConfig,
                     protocol: ProtocolConfig = ProtocolConfig(), *,
                     num_videos: int = 200, video_length: int = 25,
                     noise_sigma: float = 0.25, embed_dim: int | None = None,
                     cohort_similarity: float = 0.6, seed: int = 0,
                     fractions=(0.7, 0.15, 0.15)) -> Dataset:
    """Sample a grammar, roll out videos, featurize, embed, and split."""
    grammar = gen_grammar(grammar_config)
    annotations = gen_annotation_sequences(grammar, num_videos, video_length,
                                           seed=seed + 1)
    full = gen_features(grammar, annotations, protocol, noise_sigma,
                        seed=seed + 2)
    pairs = sample_transition_pairs(annotations, grammar.vocab)
    train_idx, val_idx, test_idx = split_dataset(full.num_samples, fractions,
                                                 seed=seed + 3)
    if embed_dim is None:
        embed_dim = max(8, len(grammar.vocab.verbs) + len(grammar.vocab.nouns) + 2)
    embeddings = gen_synthetic_embeddings(grammar, embed_dim,
                                          cohort_similarity, seed=seed + 4)
    return Dataset(
        vocab=grammar.vocab,
        protocol=protocol,
        modalities=grammar.config.modalities,
        train=full.subset(train_idx, "train"),
        val=full.subset(val_idx, "val"),
        test=full.subset(test_idx, "test"),
        train_pairs=tuple(pairs[i] for i in train_idx),
        embeddings=embeddings,
        grammar=grammar,
        annotations=annotations,
    )


def save_dataset(dataset: Dataset, out_dir: str | Path) -> None:
    """Write the bundle: manifest.json, vocab.json, the three .feat splits,
    plus embeddings.txt, grammar.json and annotations.csv when present."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "vocab.json").write_text(dataset.vocab.to_json() + "\n")
    for split in ("train", "val", "test"):
        write_features(getattr(dataset, split), out / f"{split}.feat")
    if dataset.annotations is not None:
        (out / "annotations.csv").write_text(
            format_annotations(dataset.annotations))
    if dataset.embeddings is not None:
        lines = []
        for token in sorted(dataset.embeddings.vectors):
            vec = dataset.embeddings.vectors[token]
            lines.append(token + " " + " ".join(f"{x:.17g}" for x in vec))
        (out / "embeddings.txt").write_text("\n".join(lines) + "\n")
    if dataset.grammar is not None:
        (out / "grammar.json").write_text(
            json.dumps(dataset.grammar.to_json_dict()) + "\n")
    p = dataset.protocol
    manifest = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "protocol": {
            "snippet_stride": p.snippet_stride,
            "encode_steps": p.encode_steps,
            "decode_steps": p.decode_steps,
            "snippet_len": p.snippet_len,
        },
        "modalities": [[n, d] for n, d in dataset.modalities],
        "vocab_sha256": dataset.vocab.content_hash(),
        "embedding_dimension": (dataset.embeddings.dimension
                                if dataset.embeddings is not None else None),
        "train_pairs": [[int(a), int(b)] for a, b in dataset.train_pairs],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_dataset(in_dir: str | Path) -> Dataset:
    """Inverse of :func:`save_dataset`; validates the manifest and the
    vocabulary hash."""
    root = Path(in_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FormatError(f"{root}: not a dataset directory (no manifest.json)")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: invalid JSON ({exc})") from None
    if manifest.get("format") != DATASET_FORMAT:
        raise FormatError(f"{manifest_path}: unrecognized format "
                          f"{manifest.get('format')!r}")
    if manifest.get("version") != DATASET_VERSION:
        raise FormatError(f"{manifest_path}: unsupported version "
                          f"{manifest.get('version')!r}")
    vocab = ActionVocab.from_json((root / "vocab.json").read_text())
    if vocab.content_hash() != manifest["vocab_sha256"]:
        raise FormatError(f"{root}: vocab.json does not match the manifest hash")
    protocol = ProtocolConfig(**manifest["protocol"])
    splits = {name: read_features(root / f"{name}.feat", split=name)
              for name in ("train", "val", "test")}
    embeddings = None
    if manifest.get("embedding_dimension") is not None:
        embeddings = load_embeddings((root / "embeddings.txt").read_text(),
                                     manifest["embedding_dimension"])
    grammar = None
    grammar_path = root / "grammar.json"
    if grammar_path.exists():
        grammar = grammar_from_json_dict(json.loads(grammar_path.read_text()))
    annotations = None
    annotations_path = root / "annotations.csv"
    if annotations_path.exists():
        annotations = parse_annotations(annotations_path.read_text())
    return Dataset(
        vocab=vocab,
        protocol=protocol,
        modalities=tuple((n, d) for n, d in manifest["modalities"]),
        train=splits["train"],
        val=splits["val"],
        test=splits["test"],
        train_pairs=tuple((a, b) for a, b in manifest["train_pairs"]),
        embeddings=embeddings,
        grammar=grammar,
        annotations=annotations,
    )


# ---------------------------------------------------------------------------
# Priors per method


def transition_counts_from_pairs(pairs, K: int) -> TransitionCounts:
    counts = np.zeros((K, K), dtype=np.int64)
    for prev, tgt in pairs:
        counts[prev, tgt] += 1
    return TransitionCounts(counts)


def method_kind(smoothing: SmoothingConfig) -> str:
    """Map a smoothing prior kind to its method name (the generic
    ``mixture`` means the equal glove+verb_noun blend here)."""
    return "glove+verb_noun" if smoothing.prior_kind == "mixture" \
        else smoothing.prior_kind


def build_prior_for_kind(kind: str, dataset: Dataset) -> PriorMatrix | None:
    """The prior a method name refers to; one-hot has none."""
    if kind == "onehot":
        return None
    if kind == "uniform":
        return build_uniform_prior(dataset.K)
    if kind == "verb_noun":
        return build_verb_noun_prior(dataset.vocab)
    if kind == "glove":
        if dataset.embeddings is None:
            raise ValueError("dataset has no embeddings; cannot build the "
                             "embedding-similarity prior")
        return build_glove_prior(dataset.vocab, dataset.embeddings)
    if kind == "temporal":
        counts = transition_counts_from_pairs(dataset.train_pairs, dataset.K)
        return prior_from_transition_counts(counts)
    if kind == "glove+verb_noun":
        return mix_priors(
            [build_prior_for_kind("glove", dataset),
             build_prior_for_kind("verb_noun", dataset)],
            [0.5, 0.5],
        )
    raise ValueError(f"unknown method kind {kind!r}; "
                     f"expected one of {METHOD_KINDS}")


@dataclass(frozen=True)
class MethodSpec:
    """A named training recipe: which prior and how much smoothing."""

    name: str
    kind: str
    alpha: float

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise ValueError(f"unknown method kind {self.kind!r}")
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.kind == "onehot" and self.alpha != 0.0:
            raise ValueError("onehot runs must use alpha 0")


def default_methods() -> list[MethodSpec]:
    return [MethodSpec(name=k, kind=k, alpha=a) for k, a in DEFAULT_ALPHAS.items()]


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainResult:
    """Best-epoch snapshot of one training run."""

    params: ModelParams
    best_epoch: int
    best_score: float
    history: list[tuple[int, float, float]]  # (epoch, train loss, val score)


def evaluate_model(params: ModelParams, feature_set: FeatureSet,
                   protocol: ProtocolConfig,
                   batch_size: int = 512) -> np.ndarray:
    """Per-step class probabilities, (num_samples, decode_steps, K)."""
    chunks = []
    n = feature_set.num_samples
    for start in range(0, n, batch_size):
        feats = [x[start:start + batch_size] for x in feature_set.features]
        _, probs = forward_batch(params, feats, protocol)
        chunks.append(probs)
    return np.concatenate(chunks, axis=0)


def _val_score(params: ModelParams, val: FeatureSet, protocol: ProtocolConfig,
               early_stop_time: float) -> float:
    probs = evaluate_model(params, val, protocol)
    step = protocol.step_for_time(early_stop_time)
    k = min(5, params.config.num_classes)
    return topk_accuracy(probs[:, step, :], val.targets, k)


def train_model(model_config: ModelConfig, protocol: ProtocolConfig,
                train: FeatureSet, soft_targets: np.ndarray, val: FeatureSet,
                config: ExperimentConfig, log=None) -> TrainResult:
    """Adam training with per-epoch validation selection.

    The returned parameters are the snapshot from the epoch with the best
    validation top-5 at the early-stop anticipation time (ties keep the
    earlier epoch). Non-finite losses raise TrainingDiverged.
    """
    soft_targets = np.asarray(soft_targets, dtype=np.float64)
    if soft_targets.shape != (train.num_samples, model_config.num_classes):
        raise ValueError(
            f"soft_targets shape {soft_targets.shape}, expected "
            f"({train.num_samples}, {model_config.num_classes})"
        )
    params = init_params(model_config)
    shuffle_rng = np.random.default_rng([model_config.seed, 1])
    best = params.copy()
    best_epoch = 0
    best_score = -np.inf
    history: list[tuple[int, float, float]] = []
    n = train.num_samples
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        total_loss = 0.0
        for b, (feats, _) in enumerate(train.batches(order, config.batch_size)):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            try:
                loss, grads = loss_and_gradients_batch(
                    params, feats, soft_targets[idx], protocol)
            except FloatingPointError as exc:
                raise TrainingDiverged(
                    f"epoch {epoch}, batch {b}: {exc}") from exc
            adam_step(params, grads)
            total_loss += loss * len(idx)
        train_loss = total_loss / n
        score = _val_score(params, val, protocol, config.early_stop_time)
        history.append((epoch, train_loss, score))
        if score > best_score:
            best = params.copy()
            best_epoch = epoch
            best_score = score
        if log is not None:
            log(f"epoch {epoch} loss {train_loss:.6f} val_top5 {score:.6f}")
    if log is not None:
        log(f"best epoch {best_epoch} val_top5 {best_score:.6f}")
    return TrainResult(params=best, best_epoch=best_epoch,
                       best_score=best_score, history=history)


def _model_config(dataset: Dataset, config: ExperimentConfig,
                  seed: int) -> ModelConfig:
    return ModelConfig(
        modalities=dataset.modalities,
        num_classes=dataset.K,
        hidden_size=config.hidden_size,
        learning_rate=config.learning_rate,
        seed=seed,
    )


def run_trial(dataset: Dataset, prior: PriorMatrix | None, alpha: float,
              trial: int, config: ExperimentConfig,
              log=None) -> tuple[TrainResult, np.ndarray]:
    """Train one seed and score the test split.

    Returns the train result and the (N, decode_steps, K) test probabilities.
    """
    seed = config.seed + trial
    soft = smooth_label_matrix(dataset.train.targets, prior, alpha,
                               num_classes=dataset.K)
    result = train_model(_model_config(dataset, config, seed),
                         dataset.protocol, dataset.train, soft, dataset.val,
                         config, log=log)
    probs = evaluate_model(result.params, dataset.test, dataset.protocol)
    return result, probs


# ---------------------------------------------------------------------------
# Alpha grid search


@dataclass(frozen=True)
class GridPoint:
    alpha: float
    scores: tuple[float, ...]

    @property
    def mean_score(self) -> float:
        return float(np.mean(self.scores))


@dataclass(frozen=True)
class GridSearchResult:
    kind: str
    points: tuple[GridPoint, ...]

    @property
    def best_alpha(self) -> float:
        """Highest mean validation score; ties go to the smaller alpha."""
        best = self.points[0]
        for point in self.points[1:]:
            if point.mean_score > best.mean_score:
                best = point
        return best.alpha


def grid_to_csv(result: GridSearchResult) -> str:
    lines = ["alpha,mean_val_top5,trials"]
    for point in result.points:
        lines.append(f"{point.alpha:g},{point.mean_score:.6f},"
                     f"{len(point.scores)}")
    return "\n".join(lines) + "\n"


def grid_search_alpha(dataset: Dataset, kind: str, config: ExperimentConfig,
                      grid: AlphaGrid | None = None,
                      prior: PriorMatrix | None = None,
                      log=None) -> GridSearchResult:
    """Train ``config.trials`` seeds at every grid alpha and rank by mean
    validation top-5 at the early-stop time.

    ``prior`` overrides the matrix the method kind would normally build.
    """
    if kind == "onehot":
        raise ValueError("grid search needs a prior; onehot has none")
    if grid is None:
        grid = config.alpha_grid
    if prior is None:
        prior = build_prior_for_kind(kind, dataset)
    points = []
    for alpha in grid.values():
        scores = []
        for trial in range(config.trials):
            result, _ = run_trial(dataset, prior, alpha, trial, config)
            scores.append(result.best_score)
        point = GridPoint(alpha=alpha, scores=tuple(scores))
        points.append(point)
        if log is not None:
            log(f"alpha {alpha:g} mean_val_top5 {point.mean_score:.6f}")
    return GridSearchResult(kind=kind, points=tuple(points))


# ---------------------------------------------------------------------------
# Multi-method comparison


def _comparison_task(args):
    dataset, method, prior, trial, config = args
    lines: list[str] = []
    result, probs = run_trial(dataset, prior, method.alpha, trial, config,
                              log=lines.append)
    return result, probs, lines


def run_comparison(dataset: Dataset, methods: list[MethodSpec],
                   config: ExperimentConfig, out_dir: str | Path | None = None,
                   jobs: int = 1, log=None) -> dict[str, MetricsReport]:
    """Train every method for ``config.trials`` seeds and report test
    metrics. With ``out_dir`` set, writes per-run artifacts under
    ``runs/<method>/alpha_<a>/seed_<s>/`` plus a combined ``report.csv``.
    """
    if not methods:
        raise ValueError("no methods to compare")
    if len({m.name for m in methods}) != len(methods):
        raise ValueError("method names must be unique")
    tasks = []
    for method in methods:
        prior = build_prior_for_kind(method.kind, dataset)
        for trial in range(config.trials):
            tasks.append((dataset, method, prior, trial, config))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_comparison_task, tasks))
    else:
        outcomes = [_comparison_task(t) for t in tasks]

    many_shot = many_shot_from_labels(dataset.train.targets, dataset.vocab,
                                      config.many_shot_threshold)
    out = Path(out_dir) if out_dir is not None else None
    reports: dict[str, MetricsReport] = {}
    for mi, method in enumerate(methods):
        trial_evals = []
        for trial in range(config.trials):
            result, probs, lines = outcomes[mi * config.trials + trial]
            trial_evals.append((probs, dataset.test.targets))
            if out is not None:
                run_dir = (out / "runs" / method.name
                           / f"alpha_{method.alpha:g}"
                           / f"seed_{config.seed + trial}")
                run_dir.mkdir(parents=True, exist_ok=True)
                save_checkpoint(result.params, run_dir / "checkpoint.bin")
                (run_dir / "train_log.txt").write_text("\n".join(lines) + "\n")
                trial_report = build_report([(probs, dataset.test.targets)],
                                            dataset.protocol, dataset.vocab,
                                            many_shot)
                (run_dir / "metrics.csv").write_text(
                    report_to_csv({method.name: trial_report}))
        reports[method.name] = build_report(trial_evals, dataset.protocol,
                                            dataset.vocab, many_shot)
        if log is not None:
            step = dataset.protocol.step_for_time(config.early_stop_time)
            cell = reports[method.name].cell("action_top5", step)
            log(f"{method.name} (alpha {method.alpha:g}): test action_top5@"
                f"{config.early_stop_time:g}s = {cell.mean:.2f} ± {cell.std:.2f}")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(report_to_csv(reports))
        save_experiment_config(config, out / "config.json")
        methods_payload = [{"name": m.name, "kind": m.kind, "alpha": m.alpha}
                           for m in methods]
        (out / "methods.json").write_text(
            json.dumps(methods_payload, indent=2) + "\n")
    return reports
