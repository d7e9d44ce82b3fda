"""The toy decoder: embeddings, a stack of pre-norm transformer layers with a
per-layer key/value cache, and one shared classifier used at every exit point.

Positions are 0-based; layers are 1-based throughout the public API (layer 0
is the embedding). Weights are drawn from a seeded numpy PCG64 generator at
scale 1/sqrt(d_model), so the same (config, seed) pair always reproduces the
same parameters bit for bit. Positional information uses a fixed
learned-absolute table added to the embedding at layer 0.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from typing import BinaryIO, Sequence

import numpy as np

from . import tensor
from .errors import (
    CacheGapError,
    CacheOverwriteError,
    CapacityError,
    ConfigError,
    DimensionError,
    WeightFileError,
)
from .tensor import DTYPE

PROVENANCE_EMPTY = 0
PROVENANCE_ATTENTION = 1
PROVENANCE_COPIED = 2

CONFIDENCE_MEASURES = ("max_prob", "gap")

WEIGHT_MAGIC = b"FREEW1"


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters of the toy decoder.

    ``allowed_exit_layers`` restricts where confidence-gated policies may
    exit; ``None`` means every layer. The final layer is always a valid exit
    point regardless of this set.
    """

    num_layers: int
    shallow_depth: int
    d_model: int
    n_heads: int
    d_ff: int
    vocab_size: int
    max_positions: int
    use_cross_attention: bool = False
    allowed_exit_layers: tuple[int, ...] | None = None
    seed: int = 0
    confidence_measure: str = "max_prob"

    def __post_init__(self):
        if not 1 <= self.shallow_depth < self.num_layers:
            raise ConfigError(
                f"shallow_depth must satisfy 1 <= {self.shallow_depth} < {self.num_layers}"
            )
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must be at least 2")
        if self.max_positions < 1 or self.d_ff < 1:
            raise ConfigError("max_positions and d_ff must be positive")
        if self.allowed_exit_layers is not None:
            layers = tuple(self.allowed_exit_layers)
            if any(not 1 <= a <= self.num_layers for a in layers):
                raise ConfigError(f"allowed_exit_layers outside [1, {self.num_layers}]: {layers}")
            if list(layers) != sorted(set(layers)):
                raise ConfigError("allowed_exit_layers must be strictly increasing")
            object.__setattr__(self, "allowed_exit_layers", layers)
        if self.confidence_measure not in CONFIDENCE_MEASURES:
            raise ConfigError(f"unknown confidence measure {self.confidence_measure!r}")

    def exit_layers(self) -> tuple[int, ...]:
        """Exit checkpoints in ascending order; the final layer is always one."""
        if self.allowed_exit_layers is None:
            return tuple(range(1, self.num_layers + 1))
        if self.allowed_exit_layers[-1] == self.num_layers:
            return self.allowed_exit_layers
        return self.allowed_exit_layers + (self.num_layers,)

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def with_shallow_depth(self, depth: int) -> "ModelConfig":
        return replace(self, shallow_depth=depth)


@dataclass
class LayerWeights:
    attn_norm: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    ffn_norm: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    cross_norm: np.ndarray | None = None
    cross_wq: np.ndarray | None = None
    cross_wk: np.ndarray | None = None
    cross_wv: np.ndarray | None = None
    cross_wo: np.ndarray | None = None


class Weights:
    """Parameter set for one model. Immutable by convention after init.

    The classifier is one storage location shared by every exit point; with
    ``tie_classifier_to_embedding`` it is a transposed view of the embedding
    table rather than an independent array.
    """

    def __init__(
        self,
        config: ModelConfig,
        embedding: np.ndarray,
        pos_embedding: np.ndarray,
        layers: list[LayerWeights],
        classifier: np.ndarray | None,
        tie_classifier_to_embedding: bool,
    ):
        self.config = config
        self.embedding = embedding
        self.pos_embedding = pos_embedding
        self.layers = layers
        self.tie_classifier_to_embedding = tie_classifier_to_embedding
        if tie_classifier_to_embedding:
            self.classifier = self.embedding.T
        else:
            if classifier is None:
                raise ConfigError("untied weights require an explicit classifier")
            self.classifier = classifier

    def layer(self, layer_index: int) -> LayerWeights:
        """1-based layer lookup."""
        return self.layers[layer_index - 1]

    def named_tensors(self) -> list[tuple[str, np.ndarray]]:
        """All parameters in serialization order. Tied classifiers are skipped."""
        out = [("embedding", self.embedding), ("pos_embedding", self.pos_embedding)]
        for i, lw in enumerate(self.layers, start=1):
            out.append((f"layer{i}.attn.norm", lw.attn_norm))
            out.append((f"layer{i}.attn.wq", lw.wq))
            out.append((f"layer{i}.attn.wk", lw.wk))
            out.append((f"layer{i}.attn.wv", lw.wv))
            out.append((f"layer{i}.attn.wo", lw.wo))
            if self.config.use_cross_attention:
                out.append((f"layer{i}.cross.norm", lw.cross_norm))
                out.append((f"layer{i}.cross.wq", lw.cross_wq))
                out.append((f"layer{i}.cross.wk", lw.cross_wk))
                out.append((f"layer{i}.cross.wv", lw.cross_wv))
                out.append((f"layer{i}.cross.wo", lw.cross_wo))
            out.append((f"layer{i}.ffn.norm", lw.ffn_norm))
            out.append((f"layer{i}.ffn.w1", lw.w1))
            out.append((f"layer{i}.ffn.w2", lw.w2))
        if not self.tie_classifier_to_embedding:
            out.append(("classifier", self.classifier))
        return out

    def checksum(self) -> int:
        """Order-sensitive hash of all parameter bytes, for determinism tests."""
        import zlib

        crc = 0
        for name, arr in self.named_tensors():
            crc = zlib.crc32(name.encode(), crc)
            crc = zlib.crc32(np.ascontiguousarray(arr, dtype=DTYPE).tobytes(), crc)
        return crc


def init_weights(config: ModelConfig, tie_classifier_to_embedding: bool = False) -> Weights:
    """Draw all parameters from a seeded PCG64 stream at scale 1/sqrt(d_model)."""
    rng = np.random.Generator(np.random.PCG64(config.seed))
    scale = 1.0 / np.sqrt(config.d_model)

    def mat(rows: int, cols: int) -> np.ndarray:
        return rng.normal(0.0, scale, size=(rows, cols)).astype(DTYPE)

    d, ff = config.d_model, config.d_ff
    embedding = mat(config.vocab_size, d)
    pos_embedding = mat(config.max_positions, d)
    layers = []
    for _ in range(config.num_layers):
        lw = LayerWeights(
            attn_norm=np.ones(d, dtype=DTYPE),
            wq=mat(d, d),
            wk=mat(d, d),
            wv=mat(d, d),
            wo=mat(d, d),
            ffn_norm=np.ones(d, dtype=DTYPE),
            w1=mat(d, ff),
            w2=mat(ff, d),
        )
        if config.use_cross_attention:
            lw.cross_norm = np.ones(d, dtype=DTYPE)
            lw.cross_wq = mat(d, d)
            lw.cross_wk = mat(d, d)
            lw.cross_wv = mat(d, d)
            lw.cross_wo = mat(d, d)
        layers.append(lw)
    classifier = None if tie_classifier_to_embedding else mat(d, config.vocab_size)
    return Weights(config, embedding, pos_embedding, layers, classifier, tie_classifier_to_embedding)


class KVCache:
    """Per-layer key/value tensors grown along the position axis.

    Every layer tracks how many leading positions are populated and, per
    position, whether the entry came from a genuine attention pass or from
    state copying. Positions must stay contiguous from 0 at every layer.
    """

    def __init__(self, config: ModelConfig):
        self.config = config
        n, d = config.max_positions, config.d_model
        self._keys = [np.zeros((n, d), dtype=DTYPE) for _ in range(config.num_layers)]
        self._values = [np.zeros((n, d), dtype=DTYPE) for _ in range(config.num_layers)]
        self._prov = [np.zeros(n, dtype=np.uint8) for _ in range(config.num_layers)]
        self._filled = [0] * config.num_layers

    def filled(self, layer: int) -> int:
        return self._filled[layer - 1]

    def keys(self, layer: int) -> np.ndarray:
        return self._keys[layer - 1][: self._filled[layer - 1]]

    def values(self, layer: int) -> np.ndarray:
        return self._values[layer - 1][: self._filled[layer - 1]]

    def provenance(self, layer: int) -> np.ndarray:
        return self._prov[layer - 1][: self._filled[layer - 1]]

    def append(self, layer: int, start: int, k: np.ndarray, v: np.ndarray, provenance: int):
        idx = layer - 1
        if start > self._filled[idx]:
            raise CacheGapError(
                f"layer {layer}: appending at {start} but only {self._filled[idx]} positions filled"
            )
        if start < self._filled[idx]:
            raise CacheOverwriteError(
                f"layer {layer}: positions from {start} already populated"
            )
        stop = start + k.shape[0]
        if stop > self.config.max_positions:
            raise CapacityError(f"position {stop} exceeds max_positions {self.config.max_positions}")
        self._keys[idx][start:stop] = k
        self._values[idx][start:stop] = v
        self._prov[idx][start:stop] = provenance
        self._filled[idx] = stop

    def computed_through(self, position: int) -> int:
        """Highest layer L such that layers 1..L are populated at ``position``."""
        out = 0
        for layer in range(1, self.config.num_layers + 1):
            if self._filled[layer - 1] > position:
                out = layer
            else:
                break
        return out

    def rollback_above(self, position: int, keep_through: int):
        """Drop the entry at ``position`` for every layer deeper than ``keep_through``.

        Only legal when ``position`` is the last filled position of those
        layers, which is the case right after a full forward pass of it.
        """
        for layer in range(keep_through + 1, self.config.num_layers + 1):
            idx = layer - 1
            if self._filled[idx] != position + 1:
                raise CacheGapError(
                    f"layer {layer}: cannot roll back position {position}, filled={self._filled[idx]}"
                )
            self._filled[idx] = position
            self._prov[idx][position] = PROVENANCE_EMPTY

    def copied_count(self) -> int:
        return int(sum(int(np.sum(p == PROVENANCE_COPIED)) for p in self._prov))


class HiddenRecord:
    """Per-position hidden states kept for later passes or analysis."""

    def __init__(self):
        self._states: dict[tuple[int, int], np.ndarray] = {}

    def store(self, position: int, layer: int, h: np.ndarray):
        self._states[(position, layer)] = np.array(h, dtype=DTYPE, copy=True)

    def get(self, position: int, layer: int) -> np.ndarray:
        return self._states[(position, layer)]

    def has(self, position: int, layer: int) -> bool:
        return (position, layer) in self._states

    def layer_states(self, layer: int) -> np.ndarray:
        """All stored states of one layer, stacked in position order."""
        positions = sorted(p for (p, l) in self._states if l == layer)
        if not positions:
            raise DimensionError(f"no hidden states recorded for layer {layer}")
        return np.stack([self._states[(p, layer)] for p in positions])


def _multi_head_attention(
    config: ModelConfig,
    q: np.ndarray,
    keys: np.ndarray,
    values: np.ndarray,
    mask: np.ndarray,
) -> np.ndarray:
    hd = config.head_dim
    out = np.empty_like(q)
    for h in range(config.n_heads):
        s = slice(h * hd, (h + 1) * hd)
        out[:, s] = tensor.attention(q[:, s], keys[:, s], values[:, s], mask)
    return out


def forward_layer(
    weights: Weights,
    layer: int,
    h_in: np.ndarray,
    cache: KVCache,
    positions: Sequence[int],
    memory: np.ndarray | None = None,
) -> np.ndarray:
    """One decoder layer over a batch of consecutive positions.

    Appends this layer's attention-computed key/value rows for every batch
    position, then runs causally masked self-attention (each position sees
    the cached prefix plus earlier batch members plus itself), optional
    cross-attention over ``memory``, and the feed-forward block.
    """
    config = weights.config
    pos = np.asarray(positions, dtype=np.int64)
    if pos.ndim != 1 or pos.size == 0:
        raise DimensionError("positions must be a non-empty 1-D sequence")
    if np.any(np.diff(pos) != 1):
        raise CacheGapError(f"batch positions must be consecutive, got {pos.tolist()}")
    h_in = np.asarray(h_in, dtype=DTYPE)
    if h_in.ndim != 2 or h_in.shape != (pos.size, config.d_model):
        raise DimensionError(f"h_in must be ({pos.size}, {config.d_model}), got {h_in.shape}")
    start = int(pos[0])
    if start > cache.filled(layer):
        raise CacheGapError(
            f"layer {layer}: positions before {start} lack key/value entries"
        )

    lw = weights.layer(layer)
    x = tensor.rms_norm(h_in, lw.attn_norm)
    q = tensor.mm(x, lw.wq)
    k = tensor.mm(x, lw.wk)
    v = tensor.mm(x, lw.wv)
    cache.append(layer, start, k, v, PROVENANCE_ATTENTION)
    mask = pos + 1
    attn = _multi_head_attention(config, q, cache.keys(layer), cache.values(layer), mask)
    h = h_in + tensor.mm(attn, lw.wo)

    if config.use_cross_attention:
        if memory is None:
            raise DimensionError("cross-attention enabled but no encoder memory given")
        xc = tensor.rms_norm(h, lw.cross_norm)
        qc = tensor.mm(xc, lw.cross_wq)
        kc = tensor.mm(memory, lw.cross_wk)
        vc = tensor.mm(memory, lw.cross_wv)
        full = np.full(pos.size, memory.shape[0], dtype=np.int64)
        cross = _multi_head_attention(config, qc, kc, vc, full)
        h = h + tensor.mm(cross, lw.cross_wo)

    xf = tensor.rms_norm(h, lw.ffn_norm)
    ff = tensor.mm(np.maximum(tensor.mm(xf, lw.w1), DTYPE(0.0)), lw.w2)
    return (h + ff).astype(DTYPE)


def embed(weights: Weights, token: int, position: int) -> np.ndarray:
    """Layer-0 hidden state for one token at one position."""
    config = weights.config
    if not 0 <= token < config.vocab_size:
        raise DimensionError(f"token {token} outside vocabulary of {config.vocab_size}")
    if position >= config.max_positions:
        raise CapacityError(f"position {position} exceeds max_positions {config.max_positions}")
    return (weights.embedding[token] + weights.pos_embedding[position]).astype(DTYPE)


def lm_head(weights: Weights, h: np.ndarray) -> np.ndarray:
    """Probabilities over the vocabulary from the shared classifier."""
    h = np.asarray(h, dtype=DTYPE)
    if h.shape != (weights.config.d_model,):
        raise DimensionError(f"lm_head expects ({weights.config.d_model},), got {h.shape}")
    return tensor.softmax_row(tensor.mm(h.reshape(1, -1), weights.classifier)[0])


def confidence(probs: np.ndarray, measure: str = "max_prob") -> float:
    """Exit-confidence score of a probability vector.

    ``max_prob`` is the top probability; ``gap`` is the top-1 minus top-2
    margin.
    """
    p = np.asarray(probs, dtype=DTYPE)
    if measure == "max_prob":
        return float(p.max())
    if measure == "gap":
        if p.size < 2:
            return float(p.max())
        top2 = np.partition(p, -2)[-2:]
        return float(top2[1] - top2[0])
    raise ConfigError(f"unknown confidence measure {measure!r}")


def state_copy(weights: Weights, cache: KVCache, position: int, from_layer: int, hidden: np.ndarray):
    """Fill layers above ``from_layer`` at ``position`` from a duplicated hidden state.

    Each deeper layer's key/value row is that layer's own projection of the
    duplicated hidden (after its input norm), tagged as state-copied. A
    ``from_layer`` equal to the depth is a no-op.
    """
    config = weights.config
    for layer in range(from_layer + 1, config.num_layers + 1):
        filled = cache.filled(layer)
        if filled > position:
            raise CacheOverwriteError(f"layer {layer}: position {position} already populated")
        if filled < position:
            raise CacheGapError(f"layer {layer}: positions before {position} missing")
        lw = weights.layer(layer)
        x = tensor.rms_norm(hidden.reshape(1, -1), lw.attn_norm)
        cache.append(
            layer, position, tensor.mm(x, lw.wk), tensor.mm(x, lw.wv), PROVENANCE_COPIED
        )


def build_encoder_memory(weights: Weights, prompt: Sequence[int]) -> np.ndarray:
    """Run the same stack non-causally over the prompt to build a fixed memory.

    Used only when cross-attention is enabled; every prompt position attends
    to the whole prompt. Returns the final hidden states, one row per prompt
    token.
    """
    config = weights.config
    if len(prompt) > config.max_positions:
        raise CapacityError(f"prompt of {len(prompt)} exceeds max_positions")
    h = np.stack([embed(weights, t, p) for p, t in enumerate(prompt)])
    full = np.full(len(prompt), len(prompt), dtype=np.int64)
    for layer in range(1, config.num_layers + 1):
        lw = weights.layer(layer)
        x = tensor.rms_norm(h, lw.attn_norm)
        attn = _multi_head_attention(
            config, tensor.mm(x, lw.wq), tensor.mm(x, lw.wk), tensor.mm(x, lw.wv), full
        )
        h = h + tensor.mm(attn, lw.wo)
        xf = tensor.rms_norm(h, lw.ffn_norm)
        ff = tensor.mm(np.maximum(tensor.mm(xf, lw.w1), DTYPE(0.0)), lw.w2)
        h = (h + ff).astype(DTYPE)
    return h


def kd_dyna_map(
    shallow_states: Sequence[np.ndarray], deep_states: Sequence[np.ndarray]
) -> tuple[list[int], float]:
    """Monotone layer alignment between shallow and deep hidden states.

    Finds the non-decreasing map from each shallow layer to a deep layer that
    minimizes the total mean-squared error, by dynamic programming over the
    cost grid. Returns the 0-based mapping and the mean per-layer MSE it
    achieves. Ties are broken toward lower deep indices.
    """
    n_s, n_d = len(shallow_states), len(deep_states)
    if n_s == 0 or n_d == 0:
        raise DimensionError("kd_dyna_map requires non-empty state lists")
    shallow = [np.asarray(s, dtype=DTYPE) for s in shallow_states]
    deep = [np.asarray(d, dtype=DTYPE) for d in deep_states]
    for s in shallow:
        for d in deep:
            if s.shape != d.shape:
                raise DimensionError(f"state shape mismatch: {s.shape} vs {d.shape}")

    cost = np.empty((n_s, n_d), dtype=np.float64)
    for i in range(n_s):
        for j in range(n_d):
            cost[i, j] = float(np.mean(np.square(shallow[i] - deep[j], dtype=np.float64)))

    dp = np.empty_like(cost)
    parent = np.zeros((n_s, n_d), dtype=np.int64)
    dp[0] = cost[0]
    for i in range(1, n_s):
        best_j = 0
        for j in range(n_d):
            if dp[i - 1, j] < dp[i - 1, best_j]:
                best_j = j
            dp[i, j] = cost[i, j] + dp[i - 1, best_j]
            parent[i, j] = best_j

    j = int(np.argmin(dp[n_s - 1]))
    mapping = [0] * n_s
    mapping[n_s - 1] = j
    for i in range(n_s - 1, 0, -1):
        j = int(parent[i, j])
        mapping[i - 1] = j
    total = float(sum(cost[i, mapping[i]] for i in range(n_s)) / n_s)
    return mapping, total


# ---------------------------------------------------------------------------
# Weight file format
#
#   magic "FREEW1"
#   u32 x9: num_layers, shallow_depth, d_model, n_heads, d_ff, vocab_size,
#           max_positions, use_cross_attention, confidence_measure code
#   u8: allowed_exit_layers present flag; if 1: u32 count then count x u32
#   u64: seed
#   u8: tie_classifier_to_embedding
#   u32: tensor count
#   per tensor: u32 name length, name bytes (utf-8), u32 rows, u32 cols,
#               rows*cols little-endian float32 values (row-major)
#
# Vectors are stored as 1 x n matrices. A tied classifier is not stored.
# ---------------------------------------------------------------------------


def _write_tensor(fh: BinaryIO, name: str, arr: np.ndarray):
    a = np.ascontiguousarray(arr, dtype=DTYPE)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    raw = name.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<II", a.shape[0], a.shape[1]))
    fh.write(a.astype("<f4").tobytes())


def save_weights(weights: Weights, path: str):
    config = weights.config
    tensors = weights.named_tensors()
    with open(path, "wb") as fh:
        fh.write(WEIGHT_MAGIC)
        fh.write(
            struct.pack(
                "<9I",
                config.num_layers,
                config.shallow_depth,
                config.d_model,
                config.n_heads,
                config.d_ff,
                config.vocab_size,
                config.max_positions,
                int(config.use_cross_attention),
                CONFIDENCE_MEASURES.index(config.confidence_measure),
            )
        )
        if config.allowed_exit_layers is None:
            fh.write(struct.pack("<B", 0))
        else:
            fh.write(struct.pack("<B", 1))
            fh.write(struct.pack("<I", len(config.allowed_exit_layers)))
            for a in config.allowed_exit_layers:
                fh.write(struct.pack("<I", a))
        fh.write(struct.pack("<Q", config.seed))
        fh.write(struct.pack("<B", int(weights.tie_classifier_to_embedding)))
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            _write_tensor(fh, name, arr)


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise WeightFileError(f"unexpected end of file (wanted {n} bytes, got {len(data)})")
    return data


def load_weights(path: str) -> Weights:
    with open(path, "rb") as fh:
        if _read_exact(fh, len(WEIGHT_MAGIC)) != WEIGHT_MAGIC:
            raise WeightFileError("bad magic bytes")
        fields = struct.unpack("<9I", _read_exact(fh, 36))
        (has_allowed,) = struct.unpack("<B", _read_exact(fh, 1))
        allowed = None
        if has_allowed:
            (count,) = struct.unpack("<I", _read_exact(fh, 4))
            allowed = tuple(
                struct.unpack("<I", _read_exact(fh, 4))[0] for _ in range(count)
            )
        (seed,) = struct.unpack("<Q", _read_exact(fh, 8))
        (tied,) = struct.unpack("<B", _read_exact(fh, 1))
        if fields[8] >= len(CONFIDENCE_MEASURES):
            raise WeightFileError(f"unknown confidence measure code {fields[8]}")
        try:
            config = ModelConfig(
                num_layers=fields[0],
                shallow_depth=fields[1],
                d_model=fields[2],
                n_heads=fields[3],
                d_ff=fields[4],
                vocab_size=fields[5],
                max_positions=fields[6],
                use_cross_attention=bool(fields[7]),
                allowed_exit_layers=allowed,
                seed=seed,
                confidence_measure=CONFIDENCE_MEASURES[fields[8]],
            )
        except ConfigError as exc:
            raise WeightFileError(f"stored config invalid: {exc}") from exc

        (n_tensors,) = struct.unpack("<I", _read_exact(fh, 4))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(n_tensors):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4))
            name = _read_exact(fh, name_len).decode("utf-8")
            rows, cols = struct.unpack("<II", _read_exact(fh, 8))
            data = np.frombuffer(_read_exact(fh, rows * cols * 4), dtype="<f4")
            tensors[name] = data.reshape(rows, cols).astype(DTYPE)

    def take(name: str, rows: int, cols: int, vector: bool = False) -> np.ndarray:
        if name not in tensors:
            raise WeightFileError(f"missing tensor {name!r}")
        arr = tensors.pop(name)
        want = (1, cols) if vector else (rows, cols)
        if arr.shape != want:
            raise WeightFileError(f"tensor {name!r} has shape {arr.shape}, expected {want}")
        return arr.reshape(-1) if vector else arr

    d, ff = config.d_model, config.d_ff
    embedding = take("embedding", config.vocab_size, d)
    pos_embedding = take("pos_embedding", config.max_positions, d)
    layers = []
    for i in range(1, config.num_layers + 1):
        lw = LayerWeights(
            attn_norm=take(f"layer{i}.attn.norm", 1, d, vector=True),
            wq=take(f"layer{i}.attn.wq", d, d),
            wk=take(f"layer{i}.attn.wk", d, d),
            wv=take(f"layer{i}.attn.wv", d, d),
            wo=take(f"layer{i}.attn.wo", d, d),
            ffn_norm=take(f"layer{i}.ffn.norm", 1, d, vector=True),
            w1=take(f"layer{i}.ffn.w1", d, ff),
            w2=take(f"layer{i}.ffn.w2", ff, d),
        )
        if config.use_cross_attention:
            lw.cross_norm = take(f"layer{i}.cross.norm", 1, d, vector=True)
            lw.cross_wq = take(f"layer{i}.cross.wq", d, d)
            lw.cross_wk = take(f"layer{i}.cross.wk", d, d)
            lw.cross_wv = take(f"layer{i}.cross.wv", d, d)
            lw.cross_wo = take(f"layer{i}.cross.wo", d, d)
        layers.append(lw)
    classifier = None if tied else take("classifier", d, config.vocab_size)
    if tensors:
        raise WeightFileError(f"unexpected tensors in file: {sorted(tensors)}")
    return Weights(config, embedding, pos_embedding, layers, classifier, bool(tied))
