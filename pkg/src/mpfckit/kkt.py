"""Symmetric indefinite factorization of block-tridiagonal KKT matrices.

Ordered stage by stage, the primal-dual matrix of a transcribed OCP is
block tridiagonal. It is factorized by block elimination

    S_0 = A_0,    S_k = A_k - B_k S_{k-1}^{-1} B_k^T

with a dense Bunch-Kaufman factorization of every Schur block ``S_k``. By
Sylvester's law the inertia of the whole matrix is the sum of the block
inertias. A problem without stage information is one dense block.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.linalg.lapack import dsytrf, dsytrs


class FactorizationError(np.linalg.LinAlgError):
    pass


def _pivot_signs(lu, ipiv):
    """One value per eigenvalue of the D factor, carrying that eigenvalue's sign."""
    out = np.diag(lu).copy()
    if ipiv.min() > 0:
        return out
    # 2x2 pivots occupy consecutive pairs of negative ipiv entries
    k = np.flatnonzero(ipiv < 0)[0::2]
    if k.size:
        a, b, c = out[k], lu[k + 1, k], out[k + 1]
        det = a * c - b * b
        tr = a + c
        out[k] = np.where(det < 0, 1.0, tr)
        out[k + 1] = np.where(det < 0, -1.0, np.where(det > 0, tr, 0.0))
    return out


class _DenseBK:
    __slots__ = ("lu", "ipiv")

    def __init__(self, a):
        lu, ipiv, info = dsytrf(a, lower=1)
        if info != 0:
            raise FactorizationError("singular pivot block" if info > 0 else f"dsytrf error {info}")
        self.lu, self.ipiv = lu, ipiv

    def pivot_signs(self):
        return _pivot_signs(self.lu, self.ipiv)

    def solve(self, b):
        x, info = dsytrs(self.lu, self.ipiv, b, lower=1)
        if info != 0:
            raise FactorizationError("dsytrs failed")
        return x


class BlockStructure:
    """Permutation of the KKT index set into consecutive diagonal blocks."""

    def __init__(self, blocks: list[np.ndarray], size: int):
        self.blocks = [np.asarray(b, dtype=np.int64) for b in blocks]
        self.perm = np.concatenate(self.blocks) if self.blocks else np.zeros(0, dtype=np.int64)
        if self.perm.size != size or np.unique(self.perm).size != size:
            raise ValueError("blocks must partition the KKT index set")
        sizes = np.array([b.size for b in self.blocks], dtype=np.int64)
        self.sizes = sizes
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.size = size
        self.block_of = np.empty(size, dtype=np.int64)
        self.local = np.empty(size, dtype=np.int64)
        for i, b in enumerate(self.blocks):
            self.block_of[b] = i
            self.local[b] = np.arange(b.size)

    def scatter_map(self, indptr, indices, smax):
        """Flat positions of CSC entries in the padded diagonal and sub-diagonal block arrays.

        The map is cached for the last sparsity pattern seen.
        """
        cached = getattr(self, "_scatter", None)
        if (cached is not None and cached[0] == smax and np.array_equal(cached[1], indptr)
                and np.array_equal(cached[2], indices)):
            return cached[3]
        col = np.repeat(np.arange(indptr.size - 1), np.diff(indptr))
        br, bc = self.block_of[indices], self.block_of[col]
        lr, lc = self.local[indices], self.local[col]
        on = br == bc
        below = br == bc + 1
        pos_a = (br[on] * smax + lr[on]) * smax + lc[on]
        pos_b = (br[below] * smax + lr[below]) * smax + lc[below]
        result = (on, below, pos_a, pos_b)
        self._scatter = (smax, indptr.copy(), indices.copy(), result)
        return result

    @classmethod
    def single(cls, size: int) -> "BlockStructure":
        return cls([np.arange(size)], size)

    def is_compatible(self, K) -> bool:
        """True if ``K`` is block tridiagonal under this partition."""
        blk = self.block_of
        coo = sp.coo_matrix(K)
        return bool(np.all(np.abs(blk[coo.row] - blk[coo.col]) <= 1))


class BlockTridiagonalLDL:
    """Factorization of a symmetric block-tridiagonal matrix."""

    def __init__(self, K, structure: BlockStructure):
        self.structure = structure
        A, Bs = self._dense_blocks(K, structure)
        sizes = structure.sizes
        nb = len(structure.blocks)
        self.factors = []
        self.coupling = []  # M_k = S_{k-1}^{-1} B_k^T
        self.B = []
        signs = []
        prev = None
        for k in range(nb):
            sk = sizes[k]
            S = A[k, :sk, :sk].copy()
            if k > 0:
                Bk = Bs[k, :sk, :sizes[k - 1]]
                M = prev.solve(np.ascontiguousarray(Bk.T))
                S -= Bk @ M
                S = 0.5 * (S + S.T)
                self.B.append(Bk)
                self.coupling.append(M)
            fac = _DenseBK(S)
            signs.append(fac.pivot_signs())
            self.factors.append(fac)
            prev = fac
        signs = np.concatenate(signs)
        self.inertia = (int(np.sum(signs > 0)), int(np.sum(signs < 0)), int(np.sum(signs == 0)))

    @staticmethod
    def _dense_blocks(K, st):
        """Scatter the diagonal and sub-diagonal blocks into padded dense arrays."""
        K = sp.csc_matrix(K)
        K.sum_duplicates()
        nb, smax = len(st.blocks), int(st.sizes.max())
        on, below, pos_a, pos_b = st.scatter_map(K.indptr, K.indices, smax)
        A = np.zeros(nb * smax * smax)
        B = np.zeros(nb * smax * smax)
        A[pos_a] = K.data[on]
        B[pos_b] = K.data[below]
        return A.reshape(nb, smax, smax), B.reshape(nb, smax, smax)

    def solve(self, rhs):
        st = self.structure
        off = st.offsets
        r = np.asarray(rhs, dtype=float)[st.perm]
        nb = len(self.factors)
        g = [None] * nb
        for k in range(nb):
            gk = r[off[k]:off[k + 1]].copy()
            if k > 0:
                gk -= self.coupling[k - 1].T @ g[k - 1]
            g[k] = gk
        x = [None] * nb
        for k in range(nb - 1, -1, -1):
            rhs_k = g[k]
            if k < nb - 1:
                rhs_k = rhs_k - self.B[k].T @ x[k + 1]
            x[k] = self.factors[k].solve(rhs_k)
        out = np.empty_like(r)
        out[st.perm] = np.concatenate(x)
        return out
