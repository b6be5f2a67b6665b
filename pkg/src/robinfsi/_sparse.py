from __future__ import annotations

import numpy as np
import scipy.sparse as sp


class SparseAssembler:
    """Scatter element blocks into a fixed CSR pattern.

    The pattern is computed once from the (row, col) index arrays; each
    assembly is a single ``bincount`` so the summation order, and hence the
    result, is the same on every call.
    """

    def __init__(self, rows, cols, shape):
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        self.shape = shape
        keys = rows * shape[1] + cols
        uniq, self._inv = np.unique(keys, return_inverse=True)
        self._indices = (uniq % shape[1]).astype(np.int32)
        r = uniq // shape[1]
        self._indptr = np.searchsorted(r, np.arange(shape[0] + 1)).astype(np.int32)
        self.nnz = len(uniq)

    def assemble(self, data):
        vals = np.bincount(self._inv, weights=np.asarray(data, dtype=float).ravel(), minlength=self.nnz)
        return sp.csr_matrix((vals, self._indices.copy(), self._indptr.copy()), shape=self.shape)


def element_pairs(dofs):
    """Row/column index arrays for dense element blocks on ``dofs`` (E, n)."""
    n = dofs.shape[1]
    rows = np.repeat(dofs[:, :, None], n, axis=2)
    cols = np.repeat(dofs[:, None, :], n, axis=1)
    return rows, cols
