"""Multi-branch LSTM encoder-decoder with analytic gradients.

One single-layer LSTM per input modality consumes the full snippet
sequence; over the final ``decode_steps`` timesteps the per-modality
hidden states are concatenated (late fusion) and passed through a dense
layer + softmax, giving one class distribution per decode step. The
anticipation time of decode step s counts down as the step approaches the
action: ``(decode_steps - s) * snippet_stride`` seconds.

Everything is float64 numpy. Gradients are exact backpropagation through
time with the fused softmax cross-entropy output gradient ``p - y_soft``;
they are verified against central finite differences in the test suite.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError
from .smoothing import PROB_EPS, SoftLabel, softmax

CHECKPOINT_MAGIC = b"LSAM"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ProtocolConfig:
    """Timing of the encode/decode anticipation protocol."""

    snippet_stride: float = 0.25
    encode_steps: int = 6
    decode_steps: int = 8
    snippet_len: int = 5

    def __post_init__(self):
        if self.encode_steps < 1 or self.decode_steps < 1:
            raise ValueError("encode_steps and decode_steps must be >= 1")
        if self.snippet_stride <= 0:
            raise ValueError("snippet_stride must be positive")
        if self.snippet_len < 1:
            raise ValueError("snippet_len must be >= 1")

    @property
    def total_steps(self) -> int:
        return self.encode_steps + self.decode_steps

    def anticipation_times(self) -> tuple[float, ...]:
        """Seconds before the action start, per decode step (0-based)."""
        return tuple((self.decode_steps - s) * self.snippet_stride
                     for s in range(self.decode_steps))

    def step_for_time(self, tau: float) -> int:
        """Decode step whose anticipation time is closest to ``tau`` seconds."""
        times = self.anticipation_times()
        return min(range(len(times)), key=lambda s: (abs(times[s] - tau), s))


@dataclass(frozen=True)
class ModelConfig:
    """Shapes and optimizer settings for the anticipation model."""

    modalities: tuple[tuple[str, int], ...]
    num_classes: int
    hidden_size: int = 64
    learning_rate: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "modalities",
                           tuple((str(n), int(d)) for n, d in self.modalities))
        if not self.modalities:
            raise ValueError("need at least one modality")
        if any(d < 1 for _, d in self.modalities):
            raise ValueError("feature dims must be >= 1")
        if self.hidden_size < 1:
            raise ValueError("hidden_size must be >= 1")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")

    @property
    def feature_dims(self) -> tuple[int, ...]:
        return tuple(d for _, d in self.modalities)


@dataclass
class ModelParams:
    """All trainable arrays plus Adam state.

    ``weights`` is the declaration-order list: per modality the LSTM gate
    matrix (D+H, 4H) and bias (4H,), then the fusion matrix (M*H, K) and
    bias (K,). Gate columns are packed [input | forget | cell | output].
    """

    config: ModelConfig
    weights: list[np.ndarray]
    adam_m: list[np.ndarray] = field(default_factory=list)
    adam_v: list[np.ndarray] = field(default_factory=list)
    adam_step: int = 0

    def __post_init__(self):
        if not self.adam_m:
            self.adam_m = [np.zeros_like(w) for w in self.weights]
        if not self.adam_v:
            self.adam_v = [np.zeros_like(w) for w in self.weights]

    def lstm_weight(self, m: int) -> np.ndarray:
        return self.weights[2 * m]

    def lstm_bias(self, m: int) -> np.ndarray:
        return self.weights[2 * m + 1]

    @property
    def fusion_weight(self) -> np.ndarray:
        return self.weights[2 * len(self.config.modalities)]

    @property
    def fusion_bias(self) -> np.ndarray:
        return self.weights[2 * len(self.config.modalities) + 1]

    def copy(self) -> "ModelParams":
        return ModelParams(
            config=self.config,
            weights=[w.copy() for w in self.weights],
            adam_m=[m.copy() for m in self.adam_m],
            adam_v=[v.copy() for v in self.adam_v],
            adam_step=self.adam_step,
        )


@dataclass(frozen=True)
class StepPredictions:
    """Per-decode-step logits and probabilities for one sample."""

    logits: np.ndarray  # (decode_steps, K)
    probs: np.ndarray   # (decode_steps, K)


def weight_shapes(config: ModelConfig) -> list[tuple[int, ...]]:
    """Array shapes in declaration order."""
    H = config.hidden_size
    shapes: list[tuple[int, ...]] = []
    for _, dim in config.modalities:
        shapes.append((dim + H, 4 * H))
        shapes.append((4 * H,))
    shapes.append((len(config.modalities) * H, config.num_classes))
    shapes.append((config.num_classes,))
    return shapes


def init_params(config: ModelConfig) -> ModelParams:
    """Seeded uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)].

    Biases start at zero except the forget gates, which start at 1.
    """
    rng = np.random.default_rng(config.seed)
    H = config.hidden_size
    weights: list[np.ndarray] = []
    for _, dim in config.modalities:
        bound = 1.0 / np.sqrt(dim + H)
        weights.append(rng.uniform(-bound, bound, size=(dim + H, 4 * H)))
        bias = np.zeros(4 * H)
        bias[H:2 * H] = 1.0
        weights.append(bias)
    fan_in = len(config.modalities) * H
    bound = 1.0 / np.sqrt(fan_in)
    weights.append(rng.uniform(-bound, bound, size=(fan_in, config.num_classes)))
    weights.append(np.zeros(config.num_classes))
    return ModelParams(config=config, weights=weights)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _check_features(params: ModelParams, features) -> int:
    cfg = params.config
    if len(features) != len(cfg.modalities):
        raise ValueError(
            f"expected {len(cfg.modalities)} modalities, got {len(features)}"
        )
    batch = features[0].shape[0]
    steps = features[0].shape[1]
    for (name, dim), x in zip(cfg.modalities, features):
        if x.ndim != 3 or x.shape[0] != batch or x.shape[1] != steps \
                or x.shape[2] != dim:
            raise ValueError(
                f"modality {name!r}: expected shape ({batch}, {steps}, {dim}), "
                f"got {x.shape}"
            )
    return batch


def _run_lstm(W: np.ndarray, b: np.ndarray, x: np.ndarray, keep_cache: bool):
    """Run one LSTM over (B, T, D) input from zero state.

    Returns the hidden states (B, T, H) and, when requested, the per-step
    cache needed for the backward pass.
    """
    B, T, _ = x.shape
    H = b.shape[0] // 4
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    hs = np.empty((B, T, H))
    cache = [] if keep_cache else None
    for t in range(T):
        xh = np.concatenate([x[:, t, :], h], axis=1)
        z = xh @ W + b
        gi = _sigmoid(z[:, :H])
        gf = _sigmoid(z[:, H:2 * H])
        gg = np.tanh(z[:, 2 * H:3 * H])
        go = _sigmoid(z[:, 3 * H:])
        c_prev = c
        c = gf * c_prev + gi * gg
        tanh_c = np.tanh(c)
        h = go * tanh_c
        hs[:, t, :] = h
        if keep_cache:
            cache.append((xh, gi, gf, gg, go, c_prev, tanh_c))
    return hs, cache


def _forward_full(params: ModelParams, features, protocol: ProtocolConfig,
                  keep_cache: bool):
    B = _check_features(params, features)
    cfg = params.config
    T = features[0].shape[1]
    if T != protocol.total_steps:
        raise ValueError(
            f"expected {protocol.total_steps} timesteps "
            f"({protocol.encode_steps}+{protocol.decode_steps}), got {T}"
        )
    S = protocol.decode_steps
    hs_all, caches = [], []
    for m in range(len(cfg.modalities)):
        hs, cache = _run_lstm(params.lstm_weight(m), params.lstm_bias(m),
                              np.asarray(features[m], dtype=np.float64),
                              keep_cache)
        hs_all.append(hs)
        caches.append(cache)
    hcat = np.concatenate([hs[:, T - S:, :] for hs in hs_all], axis=2)
    logits = hcat @ params.fusion_weight + params.fusion_bias
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite logits in forward pass")
    probs = softmax(logits)
    return logits, probs, hs_all, hcat, caches


def forward_batch(params: ModelParams, features,
                  protocol: ProtocolConfig = ProtocolConfig()):
    """Forward a batch; features is a per-modality list of (B, T, D) arrays.

    Returns (logits, probs), each (B, decode_steps, K).
    """
    logits, probs, _, _, _ = _forward_full(params, features, protocol,
                                           keep_cache=False)
    return logits, probs


def forward(params: ModelParams, features,
            protocol: ProtocolConfig = ProtocolConfig()) -> StepPredictions:
    """Forward one sample; features is a per-modality list of (T, D) arrays."""
    batched = [np.asarray(x)[None, :, :] for x in features]
    logits, probs = forward_batch(params, batched, protocol)
    return StepPredictions(logits=logits[0], probs=probs[0])


def loss_and_gradients_batch(params: ModelParams, features,
                             targets: np.ndarray,
                             protocol: ProtocolConfig = ProtocolConfig()):
    """Mean soft cross-entropy over decode steps and batch, with exact
    BPTT gradients in declaration order.

    ``targets`` is (B, K); the same soft target applies at every decode
    step of a sample.
    """
    logits, probs, hs_all, hcat, caches = _forward_full(params, features,
                                                        protocol, keep_cache=True)
    cfg = params.config
    B, S, K = probs.shape
    T = features[0].shape[1]
    H = cfg.hidden_size
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (B, K):
        raise ValueError(f"targets shape {targets.shape}, expected {(B, K)}")

    loss = float(-(targets[:, None, :]
                   * np.log(np.maximum(probs, PROB_EPS))).sum() / (B * S))
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss")

    # Fused softmax + cross-entropy gradient, averaged over steps and batch.
    dlogits = (probs - targets[:, None, :]) / (B * S)

    grads = [np.zeros_like(w) for w in params.weights]
    M = len(cfg.modalities)
    grads[2 * M] = hcat.reshape(B * S, M * H).T @ dlogits.reshape(B * S, K)
    grads[2 * M + 1] = dlogits.sum(axis=(0, 1))

    dhcat = dlogits @ params.fusion_weight.T  # (B, S, M*H)
    for m in range(M):
        dim = cfg.modalities[m][1]
        W = params.lstm_weight(m)
        dW = grads[2 * m]
        db = grads[2 * m + 1]
        dh_out = dhcat[:, :, m * H:(m + 1) * H]
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        cache = caches[m]
        for t in range(T - 1, -1, -1):
            xh, gi, gf, gg, go, c_prev, tanh_c = cache[t]
            dh = dh_next
            if t >= T - S:
                dh = dh + dh_out[:, t - (T - S), :]
            dc = dc_next + dh * go * (1.0 - tanh_c * tanh_c)
            dz = np.concatenate([
                dc * gg * gi * (1.0 - gi),          # input gate
                dc * c_prev * gf * (1.0 - gf),      # forget gate
                dc * gi * (1.0 - gg * gg),          # cell candidate
                dh * tanh_c * go * (1.0 - go),      # output gate
            ], axis=1)
            dW += xh.T @ dz
            db += dz.sum(axis=0)
            dxh = dz @ W.T
            dh_next = dxh[:, dim:]
            dc_next = dc * gf
    return loss, grads


def loss_and_gradients(params: ModelParams, features, target: SoftLabel,
                       protocol: ProtocolConfig = ProtocolConfig()):
    """Single-sample convenience wrapper around the batch version."""
    batched = [np.asarray(x)[None, :, :] for x in features]
    return loss_and_gradients_batch(params, batched, target.values[None, :],
                                    protocol)


def adam_step(params: ModelParams, grads: list[np.ndarray],
              config: ModelConfig | None = None) -> ModelParams:
    """One in-place Adam update with bias correction."""
    cfg = config if config is not None else params.config
    if len(grads) != len(params.weights):
        raise ValueError("gradient list does not match parameter list")
    params.adam_step += 1
    t = params.adam_step
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    correction1 = 1.0 - b1 ** t
    correction2 = 1.0 - b2 ** t
    for w, g, m, v in zip(params.weights, grads, params.adam_m, params.adam_v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        w -= cfg.learning_rate * (m / correction1) \
            / (np.sqrt(v / correction2) + cfg.adam_eps)
    return params


def topk_ids(probs: np.ndarray, k: int) -> list[int]:
    """Top-k class ids by descending probability, ties to the lower id."""
    p = np.asarray(probs)
    if k > p.shape[0]:
        raise ValueError(f"k={k} exceeds number of classes {p.shape[0]}")
    order = np.lexsort((np.arange(p.shape[0]), -p))
    return [int(i) for i in order[:k]]


def predict_topk(preds: StepPredictions, step: int, k: int) -> list[int]:
    """Top-k predictions at one decode step."""
    if not (0 <= step < preds.probs.shape[0]):
        raise IndexError(f"step {step} out of range")
    return topk_ids(preds.probs[step], k)


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    """Binary checkpoint: magic, version, config JSON, arrays as f64 LE."""
    cfg = params.config
    doc = {
        "modalities": [[n, d] for n, d in cfg.modalities],
        "num_classes": cfg.num_classes,
        "hidden_size": cfg.hidden_size,
        "learning_rate": cfg.learning_rate,
        "adam_beta1": cfg.adam_beta1,
        "adam_beta2": cfg.adam_beta2,
        "adam_eps": cfg.adam_eps,
        "seed": cfg.seed,
        "adam_step": params.adam_step,
    }
    blob = json.dumps(doc).encode()
    parts = [CHECKPOINT_MAGIC,
             struct.pack("<I", CHECKPOINT_VERSION),
             struct.pack("<I", len(blob)),
             blob]
    for group in (params.weights, params.adam_m, params.adam_v):
        for arr in group:
            parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: str | Path) -> ModelParams:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {data[:4]!r}")
    if len(data) < 12:
        raise FormatError("truncated checkpoint header")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (blob_len,) = struct.unpack_from("<I", data, 8)
    if len(data) < 12 + blob_len:
        raise FormatError("truncated checkpoint config")
    try:
        doc = json.loads(data[12:12 + blob_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad checkpoint config: {exc}") from None
    config = ModelConfig(
        modalities=tuple((n, d) for n, d in doc["modalities"]),
        num_classes=doc["num_classes"],
        hidden_size=doc["hidden_size"],
        learning_rate=doc["learning_rate"],
        adam_beta1=doc["adam_beta1"],
        adam_beta2=doc["adam_beta2"],
        adam_eps=doc["adam_eps"],
        seed=doc["seed"],
    )
    offset = 12 + blob_len
    groups = []
    for _ in range(3):
        arrays = []
        for shape in weight_shapes(config):
            n = int(np.prod(shape))
            end = offset + 8 * n
            if end > len(data):
                raise FormatError("truncated checkpoint payload")
            arrays.append(np.frombuffer(data[offset:end], dtype="<f8")
                          .astype(np.float64).reshape(shape))
            offset = end
        groups.append(arrays)
    if offset != len(data):
        raise FormatError(f"{len(data) - offset} trailing bytes in checkpoint")
    return ModelParams(config=config, weights=groups[0], adam_m=groups[1],
                       adam_v=groups[2], adam_step=doc["adam_step"])
