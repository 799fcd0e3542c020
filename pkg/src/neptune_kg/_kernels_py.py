"""Reference numpy kernels. Same signatures as the compiled ``_kernels``."""

import numpy as np


def bce_logits(logits, targets, scale):
    """Binary cross-entropy on logits, summed per row, plus its gradient.

    Returns ``(row_losses, grad)`` where ``grad = scale * (sigmoid(x) - y)``.
    """
    x = logits
    y = targets
    ax = np.abs(x)
    soft = np.log1p(np.exp(-ax))
    row_losses = (np.maximum(x, 0.0) - x * y + soft).sum(axis=1)
    # sigmoid without overflow: exp(-|x|) never exceeds 1
    z = np.exp(-ax)
    sig = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    grad = scale * (sig - y)
    return row_losses, grad


def filtered_ranks(scores, true_idx, indptr, indices):
    """Pessimistic filtered rank of ``true_idx[b]`` within ``scores[b]``.

    Candidates ``indices[indptr[b]:indptr[b+1]]`` are excluded from the
    competition. Ties with the true entity count against it.
    """
    n_rows = scores.shape[0]
    rows = np.arange(n_rows)
    true_scores = scores[rows, true_idx]
    beats = scores >= true_scores[:, None]
    beats[rows, true_idx] = False
    counts = np.diff(indptr)
    filt_rows = np.repeat(rows, counts)
    beats[filt_rows, indices] = False
    return 1 + beats.sum(axis=1).astype(np.int64)
