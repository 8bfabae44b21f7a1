"""Almost-block-diagonal direct solver for collocation Newton systems.

The Jacobian of the collocation equations is a staircase of dense interval
blocks bordered by dense parameter columns and dense boundary-condition
rows. Because the boundary conditions couple both ends of the interval,
the first node's unknowns are carried through the elimination as extra
border columns alongside the parameters; the factorization is then a
forward block elimination with row pivoting confined to adjacent block
pairs, closed by a dense solve of the bordered (first node, last node,
parameters) system.

Cost is O(N b^3) time and O(N b^2) memory for N intervals of block width b.
"""

from __future__ import annotations

import logging

import numpy as np
import scipy.linalg

from .errors import SingularMatrixError

__all__ = ["AbdMatrix", "AbdFactorization", "factorize", "solve"]

log = logging.getLogger(__name__)

_PIVOT_TOL = 1e-14
_COND_LIMIT = 1e14


class AbdMatrix:
    """Bordered almost-block-diagonal matrix.

    Unknown ordering: [node_0 (k), mid_0 (mz), node_1, ..., mid_{N-1},
    node_N (k), params (n_p)]. Row ordering: N interval blocks of height
    k + mz spanning [node_i, mid_i, node_{i+1}], then mz closing rows on
    node_N, then the dense boundary rows.
    """

    def __init__(self, N, k, mz, n_p):
        if N < 1 or k < 1 or mz < 0 or n_p < 0:
            raise ValueError(f"bad ABD dimensions N={N} k={k} mz={mz} n_p={n_p}")
        self.N = N
        self.k = k
        self.mz = mz
        self.n_p = n_p
        w = k + mz
        self.nb = k - mz + n_p  # boundary row count forced by squareness
        if self.nb < 0:
            raise ValueError("more midpoint than node unknowns per interval")
        self.blocks = np.zeros((N, w, 2 * k + mz))
        self.block_params = np.zeros((N, w, n_p))
        self.last_rows = np.zeros((mz, k))
        self.last_params = np.zeros((mz, n_p))
        self.bc0 = np.zeros((self.nb, k))
        self.bcN = np.zeros((self.nb, k))
        self.bcp = np.zeros((self.nb, n_p))

    @property
    def dim(self):
        return (self.N + 1) * self.k + self.N * self.mz + self.n_p

    def to_dense(self):
        """Expanded dense matrix (oracle/testing and the fallback path)."""
        N, k, mz, n_p = self.N, self.k, self.mz, self.n_p
        dim = self.dim
        A = np.zeros((dim, dim))
        chunk = k + mz
        row = 0
        for i in range(N):
            col = i * chunk
            A[row:row + chunk, col:col + 2 * k + mz] = self.blocks[i]
            if n_p:
                A[row:row + chunk, dim - n_p:] = self.block_params[i]
            row += chunk
        colN = N * chunk
        if mz:
            A[row:row + mz, colN:colN + k] = self.last_rows
            if n_p:
                A[row:row + mz, dim - n_p:] = self.last_params
            row += mz
        A[row:, 0:k] = self.bc0
        A[row:, colN:colN + k] = self.bcN
        if n_p:
            A[row:, dim - n_p:] = self.bcp
        return A

    def to_sparse(self):
        """CSC form of the same matrix, for the unstructured-LU fallback."""
        import scipy.sparse

        N, k, mz, n_p = self.N, self.k, self.mz, self.n_p
        dim = self.dim
        chunk = k + mz
        rows, cols, vals = [], [], []

        def put(block, r0, c0):
            rr, cc = np.nonzero(block)
            rows.append(rr + r0)
            cols.append(cc + c0)
            vals.append(block[rr, cc])

        for i in range(N):
            put(self.blocks[i], i * chunk, i * chunk)
            if n_p:
                put(self.block_params[i], i * chunk, dim - n_p)
        row = N * chunk
        colN = N * chunk
        if mz:
            put(self.last_rows, row, colN)
            if n_p:
                put(self.last_params, row, dim - n_p)
            row += mz
        put(self.bc0, row, 0)
        put(self.bcN, row, colN)
        if n_p:
            put(self.bcp, row, dim - n_p)
        return scipy.sparse.csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(dim, dim))


def _eliminate(M, e, block_index):
    """In-place Gaussian elimination of the first e columns of M.

    Row pivoting is restricted to the rows of M (one adjacent block pair).
    Returns (perm, lfac) for rhs replay. Raises SingularMatrixError when no
    acceptable pivot exists.
    """
    r = M.shape[0]
    perm = np.empty(e, dtype=np.intp)
    lfac = np.zeros((r, e))
    for j in range(e):
        col = np.abs(M[j:, j])
        piv = int(np.argmax(col)) + j
        scale = max(np.max(np.abs(M[piv])), 1.0)
        if np.abs(M[piv, j]) < _PIVOT_TOL * scale:
            raise SingularMatrixError(block_index, f"pivot column {j}")
        perm[j] = piv
        if piv != j:
            M[[j, piv]] = M[[piv, j]]
            lfac[[j, piv]] = lfac[[piv, j]]
        mult = M[j + 1:, j] / M[j, j]
        lfac[j + 1:, j] = mult
        M[j + 1:, j:] -= np.outer(mult, M[j, j:])
    return perm, lfac


def _replay(b, perm, lfac):
    """Apply a recorded elimination to a right-hand-side vector in place."""
    e = perm.size
    for j in range(e):
        piv = perm[j]
        if piv != j:
            b[[j, piv]] = b[[piv, j]]
    for j in range(e):
        b[j + 1:] -= lfac[j + 1:, j] * b[j]
    return b


class AbdFactorization:
    """Handle produced by :func:`factorize`; immutable, reusable for many rhs."""

    def __init__(self, A: AbdMatrix):
        self.A = A
        self.dense_fallback = None
        self.steps = []  # per interval: (perm, lfac, U, trail)
        N, k, mz, n_p = A.N, A.k, A.mz, A.n_p
        kb = k + n_p  # border width: node_0 plus params
        w = k + mz

        carry = None  # (k, k + kb): coefficients on [node_next | node_0 | params]
        for i in range(N):
            if i == 0:
                r = w
                e = mz
                M = np.zeros((r, e + k + kb))
                M[:, :mz] = A.blocks[0][:, k:k + mz]
                M[:, mz:mz + k] = A.blocks[0][:, k + mz:]
                M[:, mz + k:mz + 2 * k] = A.blocks[0][:, :k]
                if n_p:
                    M[:, mz + 2 * k:] = A.block_params[0]
            else:
                r = k + w
                e = k + mz
                M = np.zeros((r, e + k + kb))
                M[:k, :k] = carry[:, :k]
                M[:k, e + k:] = carry[:, k:]
                M[k:, :k + mz] = A.blocks[i][:, :k + mz]
                M[k:, e:e + k] = A.blocks[i][:, k + mz:]
                if n_p:
                    M[k:, e + 2 * k:] = A.block_params[i]
            perm, lfac = _eliminate(M, e, i)
            self.steps.append((perm, lfac, M[:e, :e].copy(), M[:e, e:].copy()))
            carry = M[e:, e:]

        # bordered closing system over [node_N | node_0 | params]
        kf = 2 * k + n_p
        F = np.zeros((kf, kf))
        F[:k, :] = carry
        row = k
        if mz:
            F[row:row + mz, :k] = A.last_rows
            if n_p:
                F[row:row + mz, 2 * k:] = A.last_params
            row += mz
        F[row:, :k] = A.bcN
        F[row:, k:2 * k] = A.bc0
        if n_p:
            F[row:, 2 * k:] = A.bcp
        self.final = F
        cond = np.linalg.cond(F) if kf else 0.0
        if not np.isfinite(cond) or cond > _COND_LIMIT:
            log.warning(
                "bordered closing system ill-conditioned (cond=%.2e); "
                "falling back to dense LU on the expanded matrix", cond)
            dense = A.to_dense()
            try:
                self.dense_fallback = scipy.linalg.lu_factor(dense)
            except scipy.linalg.LinAlgError as exc:
                raise SingularMatrixError(N, str(exc)) from exc
            if np.min(np.abs(np.diag(self.dense_fallback[0]))) < _PIVOT_TOL:
                raise SingularMatrixError(N, "dense fallback singular")
            return
        lu, piv = scipy.linalg.lu_factor(F)
        if np.min(np.abs(np.diag(lu))) < _PIVOT_TOL * max(np.max(np.abs(F)), 1.0):
            raise SingularMatrixError(N, "closing system singular")
        self.final_lu = (lu, piv)

    def solve(self, rhs):
        """Solve A x = rhs by forward replay, dense close, back substitution."""
        A = self.A
        N, k, mz, n_p = A.N, A.k, A.mz, A.n_p
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape != (A.dim,):
            raise ValueError(f"rhs has shape {rhs.shape}, expected ({A.dim},)")
        if self.dense_fallback is not None:
            return scipy.linalg.lu_solve(self.dense_fallback, rhs)
        w = k + mz
        block_rhs = [rhs[i * w:(i + 1) * w] for i in range(N)]
        pos = N * w
        last_rhs = rhs[pos:pos + mz]
        bc_rhs = rhs[pos + mz:]

        tops = []
        carry_rhs = None
        for i in range(N):
            perm, lfac, _, _ = self.steps[i]
            if i == 0:
                b = block_rhs[0].copy()
            else:
                b = np.concatenate([carry_rhs, block_rhs[i]])
            _replay(b, perm, lfac)
            e = perm.size
            tops.append(b[:e].copy())
            carry_rhs = b[e:]

        fb = np.concatenate([carry_rhs, last_rhs, bc_rhs])
        sol_f = scipy.linalg.lu_solve(self.final_lu, fb)
        node = {N: sol_f[:k], 0: sol_f[k:2 * k]}
        params = sol_f[2 * k:]
        border = np.concatenate([node[0], params])

        mids = [None] * N
        for i in range(N - 1, -1, -1):
            _, _, U, trail = self.steps[i]
            e = U.shape[0]
            if e == 0:
                mids[i] = np.zeros(0)
                continue
            b = tops[i] - trail @ np.concatenate([node[i + 1], border])
            sol = scipy.linalg.solve_triangular(U, b)
            if i == 0:
                mids[0] = sol
            else:
                node[i] = sol[:k]
                mids[i] = sol[k:]

        out = np.empty(A.dim)
        for i in range(N):
            out[i * w:i * w + k] = node[i]
            out[i * w + k:(i + 1) * w] = mids[i]
        out[N * w:N * w + k] = node[N]
        if n_p:
            out[N * w + k:] = params
        return out


def factorize(A: AbdMatrix) -> AbdFactorization:
    """Structured LU of an assembled ABD matrix."""
    if not (np.all(np.isfinite(A.blocks)) and np.all(np.isfinite(A.bc0))
            and np.all(np.isfinite(A.bcN)) and np.all(np.isfinite(A.bcp))
            and np.all(np.isfinite(A.last_rows))
            and np.all(np.isfinite(A.block_params))
            and np.all(np.isfinite(A.last_params))):
        raise ValueError("ABD matrix contains non-finite entries")
    return AbdFactorization(A)


def solve(handle: AbdFactorization, rhs):
    """Solve against a previously computed factorization."""
    return handle.solve(rhs)
