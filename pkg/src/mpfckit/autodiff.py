"""Batched forward-mode derivatives for block-structured NLP callbacks.

A :class:`Jet` carries a value together with its gradient and (optionally)
its Hessian with respect to a small set of local inputs, for a whole batch of
independent evaluation points at once. Model code written with ordinary
arithmetic and ``np.sin``/``np.cos`` runs unchanged on plain float arrays and
on jets, so the same function yields values, Jacobians and Hessians.

:class:`DifferentiableFunction` assembles a vector function
``f(q) = A q - b + sum_blocks scatter(g(q[cols]))`` from a constant linear
part and batched nonlinear blocks. The sparsity pattern is declared by the
block index arrays, never discovered numerically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp


class NonFiniteEvaluationError(FloatingPointError):
    """A callback produced NaN or Inf."""


def _bcast_grad(c):
    c = np.asarray(c, dtype=float)
    return c[..., None] if c.ndim else c


def _bcast_hess(c):
    c = np.asarray(c, dtype=float)
    return c[..., None, None] if c.ndim else c


def _outer(g1, g2):
    return g1[:, :, None] * g2[:, None, :]


class Jet:
    """Value, gradient and Hessian of a scalar quantity over a batch.

    ``val`` has shape ``(B,)``, ``grad`` ``(B, n)`` and ``hess`` ``(B, n, n)``.
    ``hess`` is ``None`` either for first-order jets (``order == 1``) or when
    it is identically zero.
    """

    __slots__ = ("val", "grad", "hess", "order")

    def __init__(self, val, grad, hess=None, order=2):
        self.val = val
        self.grad = grad
        self.hess = hess
        self.order = order

    @classmethod
    def variables(cls, z: np.ndarray, order: int = 2) -> list["Jet"]:
        """Seed one jet per column of ``z`` (shape ``(B, n)``)."""
        z = np.asarray(z, dtype=float)
        batch, n = z.shape
        eye = np.eye(n)
        return [
            cls(z[:, i].copy(), np.broadcast_to(eye[i], (batch, n)), None, order)
            for i in range(n)
        ]

    @property
    def n(self) -> int:
        return self.grad.shape[-1]

    def _hess_or_zero(self):
        if self.hess is None:
            b, n = self.grad.shape
            return np.zeros((b, n, n))
        return self.hess

    # -- core arithmetic ---------------------------------------------------
    def _add(self, other, sign=1.0):
        if isinstance(other, (float, int)):
            return Jet(self.val + sign * other, self.grad, self.hess, self.order)
        if isinstance(other, Jet):
            val = self.val + sign * other.val
            grad = self.grad + sign * other.grad
            hess = None
            if self.order == 2:
                if self.hess is None:
                    hess = None if other.hess is None else sign * other.hess
                elif other.hess is None:
                    hess = self.hess
                else:
                    hess = self.hess + sign * other.hess
            return Jet(val, grad, hess, self.order)
        return Jet(self.val + sign * np.asarray(other, dtype=float), self.grad, self.hess, self.order)

    def _mul(self, other):
        if isinstance(other, (float, int)):
            hess = None if self.hess is None else self.hess * other
            return Jet(self.val * other, self.grad * other, hess, self.order)
        if isinstance(other, Jet):
            val = self.val * other.val
            grad = self.grad * other.val[:, None] + other.grad * self.val[:, None]
            hess = None
            if self.order == 2:
                o = _outer(self.grad, other.grad)
                hess = o + o.transpose(0, 2, 1)
                if self.hess is not None:
                    hess += self.hess * other.val[:, None, None]
                if other.hess is not None:
                    hess += other.hess * self.val[:, None, None]
            return Jet(val, grad, hess, self.order)
        c = np.asarray(other, dtype=float)
        hess = None if self.hess is None else self.hess * _bcast_hess(c)
        return Jet(self.val * c, self.grad * _bcast_grad(c), hess, self.order)

    def _unary(self, f0, f1, f2):
        grad = self.grad * f1[:, None]
        hess = None
        if self.order == 2:
            hess = _outer(self.grad, self.grad) * f2[:, None, None]
            if self.hess is not None:
                hess += self.hess * f1[:, None, None]
        return Jet(f0, grad, hess, self.order)

    def reciprocal(self) -> "Jet":
        inv = 1.0 / self.val
        return self._unary(inv, -inv * inv, 2.0 * inv * inv * inv)

    def sin(self) -> "Jet":
        s, c = np.sin(self.val), np.cos(self.val)
        return self._unary(s, c, -s)

    def cos(self) -> "Jet":
        s, c = np.sin(self.val), np.cos(self.val)
        return self._unary(c, -s, -c)

    def exp(self) -> "Jet":
        e = np.exp(self.val)
        return self._unary(e, e, e)

    def log(self) -> "Jet":
        inv = 1.0 / self.val
        return self._unary(np.log(self.val), inv, -inv * inv)

    def sqrt(self) -> "Jet":
        r = np.sqrt(self.val)
        return self._unary(r, 0.5 / r, -0.25 / (r * self.val))

    def square(self) -> "Jet":
        return self._unary(self.val * self.val, 2.0 * self.val, np.full_like(self.val, 2.0))

    # -- python operators --------------------------------------------------
    def __add__(self, other):
        return self._add(other)

    __radd__ = __add__

    def __sub__(self, other):
        return self._add(other, -1.0)

    def __rsub__(self, other):
        return (-self)._add(other)

    def __neg__(self):
        return Jet(-self.val, -self.grad, None if self.hess is None else -self.hess, self.order)

    def __pos__(self):
        return self

    def __mul__(self, other):
        return self._mul(other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self._mul(other.reciprocal())
        return self._mul(1.0 / np.asarray(other, dtype=float))

    def __rtruediv__(self, other):
        return self.reciprocal()._mul(other)

    def __pow__(self, p):
        if p == 2:
            return self.square()
        if p == 1:
            return self
        raise NotImplementedError("only integer powers 1 and 2 are supported")

    _UFUNCS = {
        np.add: lambda a, b: a + b,
        np.subtract: lambda a, b: a - b,
        np.multiply: lambda a, b: a * b,
        np.true_divide: lambda a, b: a / b,
        np.negative: lambda a: -a,
        np.positive: lambda a: a,
        np.sin: lambda a: a.sin(),
        np.cos: lambda a: a.cos(),
        np.exp: lambda a: a.exp(),
        np.log: lambda a: a.log(),
        np.sqrt: lambda a: a.sqrt(),
        np.square: lambda a: a.square(),
    }

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method != "__call__" or kwargs:
            return NotImplemented
        fn = self._UFUNCS.get(ufunc)
        if fn is None:
            return NotImplemented
        if len(inputs) == 2 and not isinstance(inputs[0], Jet):
            a, b = inputs
            if ufunc is np.add or ufunc is np.multiply:
                return fn(b, a)
            if ufunc is np.subtract:
                return (-b)._add(a)
            return b.__rtruediv__(a)
        return fn(*inputs)

    def __repr__(self):
        return f"Jet(batch={self.val.shape[0]}, n={self.n}, order={self.order})"


def value(x):
    """Numeric value of a jet or a plain number/array."""
    return x.val if isinstance(x, Jet) else x


# ---------------------------------------------------------------------------
# block-structured vector functions
# ---------------------------------------------------------------------------

BlockFn = Callable[[Sequence, np.ndarray | None], Sequence]


@dataclass(frozen=True)
class StageBlock:
    """A nonlinear map applied independently at ``B`` evaluation points.

    ``fn(z, params)`` receives ``n_loc`` input components (each an array or
    jet over the batch) and the ``(B, n_par)`` parameter array, and returns
    ``m_loc`` outputs. Output ``r`` of batch entry ``b`` is added to row
    ``rows[b, r]`` of the function value; its inputs are ``q[cols[b, :]]``.
    """

    fn: BlockFn
    cols: np.ndarray
    rows: np.ndarray
    params: np.ndarray | None = None

    @property
    def batch(self) -> int:
        return self.cols.shape[0]

    def _inputs(self, q, order):
        z = q[self.cols]
        if order == 0:
            return [z[:, i] for i in range(z.shape[1])]
        return Jet.variables(z, order)

    def _outputs(self, q, order):
        out = self.fn(self._inputs(q, order), self.params)
        if len(out) != self.rows.shape[1]:
            raise ValueError(f"block returned {len(out)} outputs, expected {self.rows.shape[1]}")
        return out

    def evaluate(self, q):
        out = self._outputs(q, 0)
        b = self.batch
        return np.column_stack([np.broadcast_to(np.asarray(o, dtype=float), (b,)) for o in out])

    def jacobian_data(self, q):
        """Local Jacobians, shape ``(B, m_loc, n_loc)``."""
        out = self._outputs(q, 1)
        b, n = self.cols.shape
        data = np.zeros((b, len(out), n))
        for r, o in enumerate(out):
            if isinstance(o, Jet):
                data[:, r, :] = o.grad
        return data

    def hessian_data(self, q, weights):
        """Weighted local Hessians ``sum_r w[rows[:, r]] * H_r``, shape ``(B, n_loc, n_loc)``."""
        b, n = self.cols.shape
        acc = np.zeros((b, n, n))
        wr = weights[self.rows]
        if not np.any(wr):
            return acc
        for r, o in enumerate(self._outputs(q, 2)):
            if isinstance(o, Jet) and o.hess is not None:
                acc += o.hess * wr[:, r, None, None]
        return acc


class SparsePattern:
    """Fixed COO pattern with duplicate summation into a canonical CSR layout."""

    def __init__(self, rows, cols, shape):
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        self.shape = shape
        key = rows * shape[1] + cols
        uniq, inv = np.unique(key, return_inverse=True)
        self._inv = inv
        self.rows = uniq // shape[1]
        self.cols = uniq % shape[1]
        self.nnz = uniq.size
        self._indptr = np.searchsorted(self.rows, np.arange(shape[0] + 1)).astype(np.int64)

    def assemble(self, data) -> sp.csr_matrix:
        vals = np.bincount(self._inv, weights=np.asarray(data, dtype=float).ravel(), minlength=self.nnz)
        return sp.csr_matrix((vals, self.cols.copy(), self._indptr.copy()), shape=self.shape)


@dataclass
class DifferentiableFunction:
    """``f(q) = linear @ q - offset + sum of scattered block outputs``.

    Instances are not mutated after construction (pattern caches are filled
    lazily but deterministically), so concurrent evaluation is safe.
    """

    n_in: int
    n_out: int
    blocks: list[StageBlock] = field(default_factory=list)
    linear: sp.spmatrix | None = None
    offset: np.ndarray | None = None

    def __post_init__(self):
        if self.linear is None:
            self.linear = sp.csr_matrix((self.n_out, self.n_in))
        else:
            self.linear = sp.csr_matrix(self.linear)
            if self.linear.shape != (self.n_out, self.n_in):
                raise ValueError("linear part has wrong shape")
        if self.offset is None:
            self.offset = np.zeros(self.n_out)
        self._lin_coo = self.linear.tocoo()
        self._jac_pattern = None
        self._hess_pattern = None

    @classmethod
    def from_callable(cls, fn: Callable[[Sequence], Sequence], n_in: int, n_out: int):
        """Dense single-block function of the whole input vector."""
        block = StageBlock(
            fn=lambda z, p: fn(z),
            cols=np.arange(n_in)[None, :],
            rows=np.arange(n_out)[None, :],
        )
        return cls(n_in, n_out, [block])

    def _check(self, v):
        if not np.all(np.isfinite(v)):
            raise NonFiniteEvaluationError("non-finite value in callback evaluation")
        return v

    def __call__(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        out = self.linear @ q - self.offset
        for blk in self.blocks:
            vals = blk.evaluate(q)
            out += np.bincount(blk.rows.ravel(), weights=vals.ravel(), minlength=self.n_out)
        return self._check(out)

    # -- sparsity ----------------------------------------------------------
    def jacobian_structure(self) -> SparsePattern:
        if self._jac_pattern is None:
            rows = [self._lin_coo.row]
            cols = [self._lin_coo.col]
            for blk in self.blocks:
                r = np.broadcast_to(blk.rows[:, :, None], blk.rows.shape + (blk.cols.shape[1],))
                c = np.broadcast_to(blk.cols[:, None, :], r.shape)
                rows.append(r.ravel())
                cols.append(c.ravel())
            self._jac_pattern = SparsePattern(np.concatenate(rows), np.concatenate(cols), (self.n_out, self.n_in))
        return self._jac_pattern

    def hessian_structure(self) -> SparsePattern:
        if self._hess_pattern is None:
            rows, cols = [np.zeros(0, dtype=np.int64)], [np.zeros(0, dtype=np.int64)]
            for blk in self.blocks:
                n = blk.cols.shape[1]
                rows.append(np.broadcast_to(blk.cols[:, :, None], (blk.batch, n, n)).ravel())
                cols.append(np.broadcast_to(blk.cols[:, None, :], (blk.batch, n, n)).ravel())
            self._hess_pattern = SparsePattern(np.concatenate(rows), np.concatenate(cols), (self.n_in, self.n_in))
        return self._hess_pattern

    def sparsity(self) -> list[tuple[int, int]]:
        """Declared Jacobian sparsity as ``(row, col)`` pairs."""
        p = self.jacobian_structure()
        return list(zip(p.rows.tolist(), p.cols.tolist()))

    # -- derivatives -------------------------------------------------------
    def jacobian(self, q) -> sp.csr_matrix:
        q = np.asarray(q, dtype=float)
        parts = [self._lin_coo.data]
        parts += [blk.jacobian_data(q).ravel() for blk in self.blocks]
        return self.jacobian_structure().assemble(self._check(np.concatenate(parts)))

    def hessian(self, q, weights) -> sp.csr_matrix:
        """Hessian of ``weights @ f(q)`` (full symmetric storage)."""
        q = np.asarray(q, dtype=float)
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (self.n_out,):
            raise ValueError(f"expected {self.n_out} weights, got shape {weights.shape}")
        parts = [np.zeros(0)] + [blk.hessian_data(q, weights).ravel() for blk in self.blocks]
        return self.hessian_structure().assemble(self._check(np.concatenate(parts)))


def jacobian(f: DifferentiableFunction, q) -> sp.csr_matrix:
    """Sparse Jacobian of ``f`` at ``q``."""
    q = np.asarray(q, dtype=float)
    if not np.all(np.isfinite(q)):
        raise NonFiniteEvaluationError("non-finite point")
    return f.jacobian(q)


def hessian_of_lagrangian(phi: DifferentiableFunction, c: DifferentiableFunction | None,
                          lam, sigma: float, q) -> sp.csr_matrix:
    """Hessian of ``sigma * phi(q) + lam @ c(q)``; ``phi`` must be scalar-valued."""
    q = np.asarray(q, dtype=float)
    h = phi.hessian(q, np.array([float(sigma)]))
    if c is not None and c.n_out:
        lam = np.asarray(lam, dtype=float)
        if lam.shape != (c.n_out,):
            raise ValueError("multiplier length does not match constraint dimension")
        h = h + c.hessian(q, lam)
    return h.tocsr()
