"""Linear operator wrappers shared by dense, sparse and compressed paths."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


class LinearOperator:
    """Minimal interface: shape and matrix-vector product."""

    shape: tuple[int, int]

    def apply(self, x: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def __matmul__(self, x: np.ndarray) -> np.ndarray:
        return self.apply(x)


class DenseOperator(LinearOperator):
    """Dense complex Galerkin matrix with its space bookkeeping."""

    def __init__(self, matrix: np.ndarray, row_dofmap, col_dofmap, kind: str, kappa: float):
        self.matrix = matrix
        self.row_dofmap = row_dofmap
        self.col_dofmap = col_dofmap
        self.kind = kind
        self.kappa = kappa
        self.shape = matrix.shape

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def to_dense(self) -> np.ndarray:
        return self.matrix


class SparseOperator(LinearOperator):
    """CSR-backed operator (mass matrices and H2 near fields)."""

    def __init__(self, csr: sp.csr_matrix, row_dofmap=None, col_dofmap=None,
                 kind: str = "", kappa: float = 0.0):
        self.csr = csr
        self.row_dofmap = row_dofmap
        self.col_dofmap = col_dofmap
        self.kind = kind
        self.kappa = kappa
        self.shape = csr.shape

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.csr @ x

    def to_dense(self) -> np.ndarray:
        return self.csr.toarray()


class ComposedOperator(LinearOperator):
    """Lazy scalar-weighted sum of operators sharing one space pair.

    apply(x) evaluates sum_i c_i * (A_i x) without materializing the sum.
    """

    def __init__(self, terms: list[tuple[complex, LinearOperator]]):
        if not terms:
            raise ValueError("composed operator needs at least one term")
        shape = terms[0][1].shape
        for _, op in terms:
            if op.shape != shape:
                raise ValueError("composed operator terms have mismatched shapes")
        self.terms = terms
        self.shape = shape

    def apply(self, x: np.ndarray) -> np.ndarray:
        out = None
        for c, op in self.terms:
            y = c * op.apply(x)
            out = y if out is None else out + y
        return out

    def to_dense(self) -> np.ndarray:
        out = None
        for c, op in self.terms:
            y = c * op.to_dense()
            out = y if out is None else out + y
        return out


def coalesce_coo(rows: np.ndarray, cols: np.ndarray, vals: np.ndarray,
                 shape: tuple[int, int]) -> sp.csr_matrix:
    """Deterministic duplicate summation in insertion order, then CSR.

    scipy's own duplicate handling does not guarantee a summation order;
    this keeps accumulation bit-reproducible.
    """
    if rows.size == 0:
        return sp.csr_matrix(shape, dtype=np.complex128)
    key = rows.astype(np.int64) * shape[1] + cols.astype(np.int64)
    order = np.argsort(key, kind="stable")
    key_s = key[order]
    vals_s = vals[order]
    uniq, start = np.unique(key_s, return_index=True)
    sums = np.add.reduceat(vals_s, start)
    return sp.csr_matrix(
        (sums, (uniq // shape[1], uniq % shape[1])), shape=shape, dtype=np.complex128
    )


def dump_matrix(op, path: str) -> None:
    """Row-major text dump: 3-line header (rows, cols, kind), then re im."""
    mat = op.to_dense()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{mat.shape[0]}\n{mat.shape[1]}\n{getattr(op, 'kind', '?')}\n")
        for v in mat.ravel():
            fh.write(f"{v.real:.17g} {v.imag:.17g}\n")


def load_matrix(path: str) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        rows = int(fh.readline())
        cols = int(fh.readline())
        fh.readline()
        data = np.loadtxt(fh)
    return (data[:, 0] + 1j * data[:, 1]).reshape(rows, cols)
