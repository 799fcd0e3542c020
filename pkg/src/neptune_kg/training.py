"""1-N binary cross-entropy training with Adam.

Each training row is a unique ``(head, relation)`` pair of the reciprocal-
augmented train split; its target is the multi-hot vector of every known
tail. Row losses are summed over all entities and averaged over the batch.
"""

import dataclasses
import json
import logging
import struct
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .data import group_by_query
from .model import ACTIVATIONS, BatchNormState, ModelParams, backward, forward, init_params

log = logging.getLogger(__name__)

_STREAMS = {"init": 0, "shuffle": 1, "dropout": 2}


def rng_stream(seed, name):
    """Independent generator for one named use of the run seed."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_STREAMS[name],)))


class NumericalError(FloatingPointError):
    """Loss or gradients went non-finite."""


@dataclass
class TrainConfig:
    # defaults are TuckER-style starting points, not tuned values
    d: int = 200
    k: int = 200
    lr: float = 5e-4
    lr_decay: float = 1.0
    epochs: int = 1000
    batch_size: int = 128
    dropout_rates: tuple = (0.3, 0.4, 0.5)
    label_smoothing: float = 0.0
    activation: str = "relu"
    batch_norm: bool = True
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_every: int = 0
    keep_best: bool = False

    def __post_init__(self):
        self.dropout_rates = tuple(float(x) for x in self.dropout_rates)
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must be in (0, 1]")
        if len(self.dropout_rates) != 3 or not all(0 <= x < 1 for x in self.dropout_rates):
            raise ValueError("dropout_rates must be three values in [0, 1)")
        if not 0 <= self.label_smoothing < 1:
            raise ValueError("label_smoothing must be in [0, 1)")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if min(self.d, self.k, self.batch_size) < 1 or self.epochs < 0:
            raise ValueError("d, k, batch_size must be positive and epochs >= 0")

    def to_dict(self):
        out = dataclasses.asdict(self)
        out["dropout_rates"] = list(self.dropout_rates)
        return out

    @classmethod
    def from_dict(cls, values):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)


@dataclass
class LossBatch:
    rows: np.ndarray            # (B, 2) of (head, relation)
    targets: list               # per row, int array of true tails

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64).reshape(-1, 2)
        if len(self.targets) != len(self.rows):
            raise ValueError("one target set per row required")
        if any(len(t) == 0 for t in self.targets):
            raise ValueError("every row needs at least one target")


def target_matrix(targets, n_entities, label_smoothing=0.0):
    y = np.zeros((len(targets), n_entities))
    for b, tails in enumerate(targets):
        y[b, np.asarray(list(tails), dtype=np.int64)] = 1.0
    if label_smoothing:
        y = y * (1.0 - label_smoothing) + label_smoothing / n_entities
    return y


def loss_1n(logits, targets, label_smoothing=0.0):
    """Binary cross-entropy of one score vector against its multi-hot targets."""
    logits = np.ascontiguousarray(logits, dtype=np.float64).reshape(1, -1)
    y = target_matrix([targets], logits.shape[1], label_smoothing)
    row_losses, _ = kernels.bce_logits(logits, y, 1.0)
    return float(row_losses[0])


def forward_backward(p, batch, cfg, rng=None, update_stats=True):
    """Batch-mean loss and its gradient for every trainable parameter."""
    n_rows = len(batch.rows)
    y = target_matrix(batch.targets, p.entity_emb.shape[0], cfg.label_smoothing)
    # overflow surfaces as a non-finite loss below
    with np.errstate(over="ignore", invalid="ignore"):
        logits, cache = forward(p, batch.rows[:, 0], batch.rows[:, 1], act=cfg.activation,
                                mode="train", dropout_rates=cfg.dropout_rates, rng=rng,
                                use_bn=cfg.batch_norm, update_stats=update_stats)
        row_losses, dlogits = kernels.bce_logits(np.ascontiguousarray(logits), y, 1.0 / n_rows)
        loss = float(row_losses.sum() / n_rows)
    if not np.isfinite(loss):
        raise NumericalError(f"non-finite loss {loss}; lower the learning rate")
    return loss, backward(p, cache, dlogits)


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, p):
        return cls({n: np.zeros_like(a) for n, a in p.trainable().items()},
                   {n: np.zeros_like(a) for n, a in p.trainable().items()})

    def copy(self):
        return AdamState({n: a.copy() for n, a in self.m.items()},
                         {n: a.copy() for n, a in self.v.items()}, self.step)


def adam_step(p, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam, updating ``p`` and ``state`` in place."""
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, param in p.trainable().items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        param -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


@dataclass
class TrainResult:
    params: ModelParams
    adam: AdamState
    history: list = field(default_factory=list)     # (epoch, mean_loss, valid_mrr or None)
    best_epoch: int = 0


def train(g, cfg, params=None, on_epoch=None):
    """Fit a model to ``g.train``; deterministic for a given config and seed.

    ``on_epoch(epoch, mean_loss, valid_mrr)`` is called after every epoch.
    """
    from .evaluation import evaluate

    if len(g.train) == 0:
        raise ValueError("training split is empty")
    if params is None:
        params = init_params(g.n_entities, g.n_relations, cfg.d, cfg.k,
                             rng_stream(cfg.seed, "init"))
    adam = AdamState.zeros_like(params)
    result = TrainResult(params, adam)
    keys, tails = group_by_query(g.train)
    shuffle_rng = rng_stream(cfg.seed, "shuffle")
    dropout_rng = rng_stream(cfg.seed, "dropout")
    lr = cfg.lr
    best_mrr = -1.0
    best = None
    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        order = shuffle_rng.permutation(len(keys))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = LossBatch(keys[idx], [tails[i] for i in idx])
            loss, grads = forward_backward(params, batch, cfg, dropout_rng)
            adam_step(params, grads, adam, lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            total += loss * len(idx)
        lr *= cfg.lr_decay
        mean_loss = total / len(keys)
        valid_mrr = None
        if cfg.eval_every and epoch % cfg.eval_every == 0 and len(g.valid):
            valid_mrr = evaluate(params, g, "valid", cfg.activation, use_bn=cfg.batch_norm).mrr
            if cfg.keep_best and valid_mrr > best_mrr:
                best_mrr = valid_mrr
                best = (params.copy(), adam.copy(), epoch)
        result.history.append((epoch, mean_loss, valid_mrr))
        log.debug("epoch %d loss %.6f (%.2fs)", epoch, mean_loss, time.perf_counter() - started)
        if on_epoch is not None:
            on_epoch(epoch, mean_loss, valid_mrr)
    if best is not None:
        result.params, result.adam, result.best_epoch = best
    return result


def format_log_line(epoch, mean_loss, valid_mrr=None):
    tail = "" if valid_mrr is None else f"{valid_mrr:.6f}"
    return f"{epoch}\t{mean_loss:.10g}\t{tail}"


# -- checkpoints ----------------------------------------------------------------
#
# little-endian layout:
#   b"NPTN", u16 version
#   header  <IIIIB dddd Q : d, k, |E|, |R|, activation code,
#                           bn_input momentum/eps, bn_hidden momentum/eps, adam step
#   u32 n + n bytes       : config as sorted-key JSON
#   32 + 32 bytes         : sha256 of entity / relation vocab (zeros if unknown)
#   f64 arrays            : entity_emb, relation_emb, core,
#                           bn_input (scale, shift, mean, var), bn_hidden (same),
#                           adam m then adam v, each in trainable() order
#   u32                   : CRC32 of everything above

MAGIC = b"NPTN"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<IIIIBddddQ")


class CheckpointError(Exception):
    pass


class CheckpointFormatError(CheckpointError):
    """Bad magic bytes, bad checksum or malformed content."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointDimensionError(CheckpointError):
    """Checkpoint does not fit the knowledge graph it is used with."""


@dataclass
class Checkpoint:
    params: ModelParams
    adam: AdamState
    config: TrainConfig
    entity_digest: bytes
    relation_digest: bytes

    def check_graph(self, g):
        n_ent, n_rel = self.params.dims[:2]
        if (n_ent, n_rel) != (g.n_entities, g.n_relations):
            raise CheckpointDimensionError(
                f"checkpoint has |E|={n_ent}, |R|={n_rel}; "
                f"dataset has |E|={g.n_entities}, |R|={g.n_relations}")
        zero = bytes(32)
        if self.entity_digest != zero and self.entity_digest != g.entities.digest():
            raise CheckpointDimensionError("entity vocabulary differs from the checkpoint")
        if self.relation_digest != zero and self.relation_digest != g.relations.digest():
            raise CheckpointDimensionError("relation vocabulary differs from the checkpoint")


def _array_layout(n_ent, n_rel, d, k):
    shapes = [(n_ent, d), (n_rel, k), (d, k, d)] + [(d,)] * 8
    trainable = [(n_ent, d), (n_rel, k), (d, k, d)] + [(d,)] * 4
    return shapes + trainable + trainable


def save_checkpoint(path, p, adam, cfg, graph=None):
    n_ent, n_rel, d, k = p.dims
    if adam is None:
        adam = AdamState.zeros_like(p)
    cfg_bytes = json.dumps(cfg.to_dict(), sort_keys=True).encode("utf-8")
    parts = [
        MAGIC,
        struct.pack("<H", FORMAT_VERSION),
        _HEADER.pack(d, k, n_ent, n_rel, ACTIVATIONS.index(cfg.activation),
                     p.bn_input.momentum, p.bn_input.eps,
                     p.bn_hidden.momentum, p.bn_hidden.eps, adam.step),
        struct.pack("<I", len(cfg_bytes)),
        cfg_bytes,
        graph.entities.digest() if graph is not None else bytes(32),
        graph.relations.digest() if graph is not None else bytes(32),
    ]
    arrays = [p.entity_emb, p.relation_emb, p.core]
    for bn in (p.bn_input, p.bn_hidden):
        arrays += [bn.scale, bn.shift, bn.running_mean, bn.running_var]
    names = list(p.trainable())
    arrays += [adam.m[n] for n in names] + [adam.v[n] for n in names]
    parts += [np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays]
    body = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body)))


def load_checkpoint(path, graph=None):
    """Read a checkpoint; with ``graph`` also verify sizes and vocabularies."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 6:
        raise CheckpointTruncatedError(f"{path}: {len(blob)} bytes is too short")
    if blob[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic bytes {blob[:4]!r}")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
    off = 6
    if len(blob) < off + _HEADER.size + 4:
        raise CheckpointTruncatedError(f"{path}: header cut short")
    d, k, n_ent, n_rel, act_code, m_in, eps_in, m_hid, eps_hid, step = \
        _HEADER.unpack_from(blob, off)
    off += _HEADER.size
    (cfg_len,) = struct.unpack_from("<I", blob, off)
    off += 4
    layout = _array_layout(n_ent, n_rel, d, k)
    n_floats = sum(int(np.prod(s)) for s in layout)
    expected = off + cfg_len + 64 + 8 * n_floats + 4
    if len(blob) < expected:
        raise CheckpointTruncatedError(f"{path}: {len(blob)} bytes, expected {expected}")
    if len(blob) > expected:
        raise CheckpointFormatError(f"{path}: {len(blob) - expected} trailing bytes")
    (crc,) = struct.unpack_from("<I", blob, expected - 4)
    if crc != zlib.crc32(blob[:expected - 4]):
        raise CheckpointFormatError(f"{path}: checksum mismatch")
    if act_code >= len(ACTIVATIONS):
        raise CheckpointFormatError(f"{path}: unknown activation code {act_code}")
    try:
        cfg = TrainConfig.from_dict(json.loads(blob[off:off + cfg_len].decode("utf-8")))
    except (ValueError, TypeError) as exc:
        raise CheckpointFormatError(f"{path}: bad config block: {exc}") from exc
    off += cfg_len
    entity_digest, relation_digest = blob[off:off + 32], blob[off + 32:off + 64]
    off += 64
    arrays = []
    for shape in layout:
        n = int(np.prod(shape))
        arrays.append(np.frombuffer(blob, dtype="<f8", count=n, offset=off)
                      .astype(np.float64).reshape(shape))
        off += 8 * n
    bn_in = BatchNormState(*arrays[3:7], momentum=m_in, eps=eps_in)
    bn_hid = BatchNormState(*arrays[7:11], momentum=m_hid, eps=eps_hid)
    params = ModelParams(arrays[0], arrays[1], arrays[2], bn_in, bn_hid)
    names = list(params.trainable())
    adam = AdamState(dict(zip(names, arrays[11:18])), dict(zip(names, arrays[18:25])), step)
    ckpt = Checkpoint(params, adam, cfg, entity_digest, relation_digest)
    if graph is not None:
        ckpt.check_graph(graph)
    return ckpt
