"""Blocked dense kernels behind a pluggable dispatch point.

When every participating relation stores its annotation in a flat dense
buffer and the query matches a registered pattern (matrix-vector or
matrix-matrix product under (+, *)), execution short-circuits to these
kernels instead of the trie path. An alternative implementation (e.g. a
vendor BLAS) can be registered to replace the defaults.
"""

from __future__ import annotations

import numpy as np

from .errors import ExecutionError

BLOCK = 64


def blocked_matmul(a, b, block=BLOCK):
    """C = A @ B with square blocking, k as the innermost blocked loop."""
    n, k = a.shape
    k2, m = b.shape
    if k != k2:
        raise ExecutionError(f"dimension mismatch: {a.shape} x {b.shape}")
    c = np.zeros((n, m), dtype=np.float64)
    for i0 in range(0, n, block):
        i1 = min(i0 + block, n)
        for j0 in range(0, m, block):
            j1 = min(j0 + block, m)
            acc = np.zeros((i1 - i0, j1 - j0), dtype=np.float64)
            for k0 in range(0, k, block):
                k1 = min(k0 + block, k)
                acc += a[i0:i1, k0:k1] @ b[k0:k1, j0:j1]
            c[i0:i1, j0:j1] = acc
    return c


def blocked_matvec(a, x, block=BLOCK):
    """y = A @ x with the same blocking scheme."""
    n, k = a.shape
    if k != x.shape[0]:
        raise ExecutionError(f"dimension mismatch: {a.shape} x {x.shape}")
    y = np.zeros(n, dtype=np.float64)
    for i0 in range(0, n, block):
        i1 = min(i0 + block, n)
        acc = np.zeros(i1 - i0, dtype=np.float64)
        for k0 in range(0, k, block):
            k1 = min(k0 + block, k)
            acc += a[i0:i1, k0:k1] @ x[k0:k1]
        y[i0:i1] = acc
    return y


_KERNELS = {"mm": blocked_matmul, "mv": blocked_matvec}


def register_dense_kernel(kind, fn):
    """Swap in an alternative dense kernel ('mm' or 'mv'). Returns the old one."""
    if kind not in _KERNELS:
        raise ExecutionError(f"unknown dense kernel kind {kind!r}")
    old = _KERNELS[kind]
    _KERNELS[kind] = fn
    return old


def dense_kernel(kind):
    return _KERNELS[kind]
