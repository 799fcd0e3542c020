"""NePTuNe / TuckER scoring.

Parameters are an entity matrix ``E`` (|E| x d), a relation matrix ``W``
(|R| x k) and one core tensor shared by all relations, shape (d, k, d) with
modes head / relation / tail.

For a query ``(h, r)`` the full pipeline used in training and evaluation is::

    x  = dropout_in(bn_input(E[h]))
    z  = core x_1 x x_2 W[r]               # d-vector
    a  = act(bn_hidden(dropout_h1(z)))
    b  = dropout_h2(a)
    logits = E @ b                          # one score per candidate tail

With batch norm and dropout disabled and ``act="identity"`` this is the
plain TuckER trilinear score.
"""

from dataclasses import dataclass, field

import numpy as np

from .tensor import DimensionError, matvec_rows, mode_n_vec_product

ACTIVATIONS = ("identity", "relu", "tanh")
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def apply_activation(kind, x):
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "identity":
        return x
    raise ValueError(f"unknown activation {kind!r}; choose from {ACTIVATIONS}")


def activation_grad(kind, pre, post):
    """Elementwise derivative given the pre- and post-activation values."""
    if kind == "relu":
        return (pre > 0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - post * post
    if kind == "identity":
        return np.ones_like(pre)
    raise ValueError(f"unknown activation {kind!r}; choose from {ACTIVATIONS}")


@dataclass
class BatchNormState:
    scale: np.ndarray
    shift: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    @classmethod
    def fresh(cls, n_features, momentum=BN_MOMENTUM, eps=BN_EPS):
        return cls(np.ones(n_features), np.zeros(n_features),
                   np.zeros(n_features), np.ones(n_features), momentum, eps)

    def copy(self):
        return BatchNormState(self.scale.copy(), self.shift.copy(),
                              self.running_mean.copy(), self.running_var.copy(),
                              self.momentum, self.eps)


@dataclass
class ModelParams:
    entity_emb: np.ndarray
    relation_emb: np.ndarray
    core: np.ndarray
    bn_input: BatchNormState = field(default=None)
    bn_hidden: BatchNormState = field(default=None)

    def __post_init__(self):
        d = self.entity_emb.shape[1]
        k = self.relation_emb.shape[1]
        if self.core.shape != (d, k, d):
            raise DimensionError("core shape", (d, k, d), self.core.shape)
        if self.bn_input is None:
            self.bn_input = BatchNormState.fresh(d)
        if self.bn_hidden is None:
            self.bn_hidden = BatchNormState.fresh(d)

    @property
    def dims(self):
        """``(n_entities, n_relations, d, k)``."""
        return (self.entity_emb.shape[0], self.relation_emb.shape[0],
                self.entity_emb.shape[1], self.relation_emb.shape[1])

    def copy(self):
        return ModelParams(self.entity_emb.copy(), self.relation_emb.copy(),
                           self.core.copy(), self.bn_input.copy(), self.bn_hidden.copy())

    def trainable(self):
        """Name -> array for every parameter the optimizer updates."""
        return {
            "entity_emb": self.entity_emb,
            "relation_emb": self.relation_emb,
            "core": self.core,
            "bn_input.scale": self.bn_input.scale,
            "bn_input.shift": self.bn_input.shift,
            "bn_hidden.scale": self.bn_hidden.scale,
            "bn_hidden.shift": self.bn_hidden.shift,
        }


def init_params(n_entities, n_relations, d, k, seed=0):
    """Variance-scaled normal embeddings, uniform(-1, 1) core, neutral BN.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    if min(n_entities, n_relations, d, k) < 1:
        raise ValueError("all dimensions must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    entity_emb = rng.standard_normal((n_entities, d)) / np.sqrt(d)
    relation_emb = rng.standard_normal((n_relations, k)) / np.sqrt(k)
    core = rng.uniform(-1.0, 1.0, size=(d, k, d))
    return ModelParams(entity_emb, relation_emb, core)


def _check_ids(p, h=None, r=None, t=None):
    n_ent, n_rel = p.entity_emb.shape[0], p.relation_emb.shape[0]
    for name, idx, bound in (("head", h, n_ent), ("relation", r, n_rel), ("tail", t, n_ent)):
        if idx is not None and not 0 <= idx < bound:
            raise IndexError(f"{name} id {idx} out of range [0, {bound})")


# -- per-triple scores -------------------------------------------------------

def score_tucker(p, h, r, t):
    """Trilinear TuckER score, no batch norm or dropout."""
    _check_ids(p, h, r, t)
    m = mode_n_vec_product(p.core, p.entity_emb[h], 1)    # (k, d)
    v = matvec_rows(m.T, p.relation_emb[r])                # (d,)
    return float(v @ p.entity_emb[t])


def score_neptune(p, h, r, t, act="relu"):
    """Contract head and relation, apply ``act``, then dot with the tail."""
    _check_ids(p, h, r, t)
    m = mode_n_vec_product(p.core, p.entity_emb[h], 1)
    v = apply_activation(act, m.T @ p.relation_emb[r])
    return float(v @ p.entity_emb[t])


def score_ntn_form(core, w_r, e_h, e_t, act="relu"):
    """NTN-ordered score with a shared core: contract head and tail first.

    The nonlinearity then acts on a k-vector before the relation dot.
    Quadratic in d per candidate, so this is only a reference for tests.
    """
    m = mode_n_vec_product(core, e_h, 1)       # (k, d)
    v = apply_activation(act, matvec_rows(m, e_t))
    if v.shape != np.shape(w_r):
        raise DimensionError("relation vector length", v.shape, np.shape(w_r))
    return float(v @ w_r)


# -- regularizers -------------------------------------------------------------

def batch_norm_forward(state, x, mode="train", update_stats=True):
    """Normalize a batch ``x`` of shape (B, d). Returns ``(out, cache)``.

    Train mode uses the biased batch variance to normalize and folds the
    unbiased one into the running estimate (momentum update).
    """
    if mode == "eval":
        inv_std = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (x - state.running_mean) * inv_std
        return xhat * state.scale + state.shift, None
    if x.shape[0] < 1:
        raise ValueError("batch norm needs a nonempty batch in train mode")
    n = x.shape[0]
    mean = x.mean(axis=0)
    centered = x - mean
    var = (centered * centered).mean(axis=0)
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = centered * inv_std
    if update_stats:
        m = state.momentum
        unbiased = var * n / (n - 1) if n > 1 else var
        state.running_mean[:] = (1.0 - m) * state.running_mean + m * mean
        state.running_var[:] = (1.0 - m) * state.running_var + m * unbiased
    return xhat * state.scale + state.shift, (xhat, inv_std, state.scale)


def batch_norm_backward(dout, cache):
    """Backward through train-mode batch norm, including the batch statistics."""
    xhat, inv_std, scale = cache
    n = dout.shape[0]
    dscale = (dout * xhat).sum(axis=0)
    dshift = dout.sum(axis=0)
    dxhat = dout * scale
    dx = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return dx, dscale, dshift


def dropout_forward(x, rate, mode="train", rng=None):
    """Inverted dropout. Returns ``(out, mask)`` with the scaling folded into mask."""
    if mode == "eval" or rate == 0.0:
        return x, np.ones_like(x)
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"dropout rate must be in [0, 1], got {rate}")
    if rate >= 1.0:
        mask = np.zeros_like(x)
    else:
        mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


# -- 1-N scoring ----------------------------------------------------------------

def relation_matrix(core, w_r):
    """``core x_2 w_r``: the (d, d) head-to-tail map for one relation."""
    return mode_n_vec_product(core, w_r, 2)


def score_all_tails(p, h, r, act="relu", mode="eval", dropout_rates=(0.0, 0.0, 0.0),
                    rng=None, use_bn=True):
    """Scores of every candidate tail for the query ``(h, r)``.

    Follows the cheap contraction order: the relation is contracted into
    the core first, then the head, and only the final d-vector meets E.
    With ``use_bn=False`` and no dropout this equals ``score_neptune`` for
    every tail.
    """
    _check_ids(p, h, r)
    rate_in, rate_h1, rate_h2 = dropout_rates
    a_mat = relation_matrix(p.core, p.relation_emb[r])
    x = p.entity_emb[h][None, :]
    if use_bn:
        x, _ = batch_norm_forward(p.bn_input, x, mode)
    x, _ = dropout_forward(x, rate_in, mode, rng)
    z = x @ a_mat
    z, _ = dropout_forward(z, rate_h1, mode, rng)
    if use_bn:
        z, _ = batch_norm_forward(p.bn_hidden, z, mode)
    b = apply_activation(act, z)
    b, _ = dropout_forward(b, rate_h2, mode, rng)
    return matvec_rows(p.entity_emb, b[0])


def forward(p, heads, rels, act="relu", mode="train", dropout_rates=(0.0, 0.0, 0.0),
            rng=None, use_bn=True, update_stats=True):
    """Batched pipeline for queries ``(heads[b], rels[b])``.

    Returns ``(logits, cache)`` with logits of shape (B, |E|). The head is
    contracted into the core first here: one GEMM for the whole batch and no
    per-row (d, d) matrices.
    """
    d, k = p.entity_emb.shape[1], p.relation_emb.shape[1]
    rate_in, rate_h1, rate_h2 = dropout_rates
    heads = np.asarray(heads)
    rels = np.asarray(rels)
    x0 = p.entity_emb[heads]
    w = p.relation_emb[rels]
    bn_in_cache = bn_hid_cache = None
    x1 = x0
    if use_bn:
        x1, bn_in_cache = batch_norm_forward(p.bn_input, x0, mode, update_stats)
    x2, mask_in = dropout_forward(x1, rate_in, mode, rng)
    proj = (x2 @ p.core.reshape(d, k * d)).reshape(-1, k, d)   # core x_1 x
    z = np.einsum("bjl,bj->bl", proj, w)
    z2, mask_h1 = dropout_forward(z, rate_h1, mode, rng)
    z3 = z2
    if use_bn:
        z3, bn_hid_cache = batch_norm_forward(p.bn_hidden, z2, mode, update_stats)
    a = apply_activation(act, z3)
    b, mask_h2 = dropout_forward(a, rate_h2, mode, rng)
    logits = b @ p.entity_emb.T
    cache = dict(heads=heads, rels=rels, w=w, x2=x2, proj=proj, z3=z3, a=a, b=b,
                 mask_in=mask_in, mask_h1=mask_h1, mask_h2=mask_h2,
                 bn_in=bn_in_cache, bn_hid=bn_hid_cache, act=act)
    return logits, cache


def backward(p, cache, dlogits):
    """Gradients of a scalar loss given ``dlogits`` = dL/dlogits.

    Returns a dict keyed like ``ModelParams.trainable()``. Requires a
    train-mode forward when batch norm is on (the batch statistics are part
    of the graph).
    """
    d, k = p.entity_emb.shape[1], p.relation_emb.shape[1]
    n_batch = dlogits.shape[0]
    grads = {}
    d_entity = dlogits.T @ cache["b"]                        # through E @ b
    db = dlogits @ p.entity_emb
    da = db * cache["mask_h2"]
    dz3 = da * activation_grad(cache["act"], cache["z3"], cache["a"])
    if cache["bn_hid"] is not None:
        dz2, grads["bn_hidden.scale"], grads["bn_hidden.shift"] = \
            batch_norm_backward(dz3, cache["bn_hid"])
    else:
        dz2 = dz3
        grads["bn_hidden.scale"] = np.zeros(d)
        grads["bn_hidden.shift"] = np.zeros(d)
    dz = dz2 * cache["mask_h1"]
    w, x2 = cache["w"], cache["x2"]
    outer = (w[:, :, None] * dz[:, None, :]).reshape(n_batch, k * d)    # w (x) dz
    grads["core"] = (x2.T @ outer).reshape(d, k, d)
    dx2 = outer @ p.core.reshape(d, k * d).T
    dw = np.einsum("bjl,bl->bj", cache["proj"], dz)
    dx1 = dx2 * cache["mask_in"]
    if cache["bn_in"] is not None:
        dx0, grads["bn_input.scale"], grads["bn_input.shift"] = \
            batch_norm_backward(dx1, cache["bn_in"])
    else:
        dx0 = dx1
        grads["bn_input.scale"] = np.zeros(d)
        grads["bn_input.shift"] = np.zeros(d)
    np.add.at(d_entity, cache["heads"], dx0)
    d_relation = np.zeros_like(p.relation_emb)
    np.add.at(d_relation, cache["rels"], dw)
    grads["entity_emb"] = d_entity
    grads["relation_emb"] = d_relation
    return grads
