"""Dense 3-mode tensor algebra.

Tensors are plain ``numpy`` arrays of shape ``(n1, n2, n3)`` in C order, so
mode 1 is the slowest-varying index and mode 3 the fastest: entry
``(i, j, l)`` lives at flat offset ``(i * n2 + j) * n3 + l``. Matrices are
row-major 2-D arrays and vectors 1-D arrays. Everything is float64.

Mode numbers are 1-based, matching the usual ``x_1 / x_2 / x_3`` notation.
"""

import numpy as np

__all__ = [
    "DimensionError",
    "as_tensor3",
    "mode_n_vec_product",
    "mode_n_mat_product",
    "matvec_rows",
    "dot",
]


class DimensionError(ValueError):
    """Operand shapes do not line up."""

    def __init__(self, what, expected, actual):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected {expected}, got {actual}")


def _check_mode(mode):
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode!r}")


def as_tensor3(data, dims=None):
    """Return ``data`` as a contiguous float64 array of shape ``dims``.

    A flat buffer of length ``n1 * n2 * n3`` is reshaped using the layout
    described in the module docstring.
    """
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if dims is None:
        if arr.ndim != 3:
            raise DimensionError("tensor rank", 3, arr.ndim)
        return arr
    dims = tuple(int(n) for n in dims)
    if len(dims) != 3 or min(dims) < 1:
        raise ValueError(f"dims must be three positive integers, got {dims}")
    size = dims[0] * dims[1] * dims[2]
    if arr.size != size:
        raise DimensionError("tensor data length", size, arr.size)
    return arr.reshape(dims)


def mode_n_vec_product(t, v, mode):
    """Contract ``t`` with vector ``v`` along ``mode``.

    The result keeps the two remaining modes in ascending order, e.g. for
    ``mode=2`` the output is ``M[i, l] = sum_j t[i, j, l] * v[j]``.
    """
    _check_mode(mode)
    t = np.asarray(t, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if t.ndim != 3:
        raise DimensionError("tensor rank", 3, t.ndim)
    if v.ndim != 1 or v.shape[0] != t.shape[mode - 1]:
        raise DimensionError(f"vector length for mode {mode}", t.shape[mode - 1],
                             v.shape[0] if v.ndim == 1 else v.shape)
    if mode == 1:
        # (n1,) @ (n1, n2*n3)
        return (v @ t.reshape(t.shape[0], -1)).reshape(t.shape[1], t.shape[2])
    if mode == 2:
        # batched (n2,) @ (n2, n3) over the n1 slices, no transpose copy
        return np.matmul(v, t)
    return t @ v


def mode_n_mat_product(t, m, mode):
    """n-mode product ``t x_mode m``.

    ``m`` has shape ``(rows, t.shape[mode-1])``; the output replaces that
    mode's extent with ``rows``.
    """
    _check_mode(mode)
    t = np.asarray(t, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if t.ndim != 3:
        raise DimensionError("tensor rank", 3, t.ndim)
    if m.ndim != 2 or m.shape[1] != t.shape[mode - 1]:
        raise DimensionError(f"matrix columns for mode {mode}", t.shape[mode - 1],
                             m.shape[1] if m.ndim == 2 else m.shape)
    if mode == 1:
        out = m @ t.reshape(t.shape[0], -1)
        return out.reshape(m.shape[0], t.shape[1], t.shape[2])
    if mode == 2:
        return np.ascontiguousarray(np.matmul(m, t))
    return t @ m.T


def matvec_rows(m, v):
    """``m @ v``; used to score every entity row against one vector."""
    m = np.asarray(m, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise DimensionError("matvec inner dimension",
                             m.shape[1] if m.ndim == 2 else m.shape, v.shape)
    return m @ v


def dot(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise DimensionError("dot operand lengths", a.shape, b.shape)
    return float(a @ b)
