"""Envelope Cholesky factorization and decomposed updating reanalysis (DUR).

The factor keeps the natural DOF order so that an unchanged prefix of the
matrix keeps an unchanged prefix of the factor.  Rows are stored in
envelope (profile) form: row ``i`` holds ``L[i, first[i]:i+1]``
contiguously, which is closed under Cholesky fill.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from numba import njit

log = logging.getLogger(__name__)

DELTA_TOL = 1e-12
DEFAULT_THRESHOLD = 5.0
REFINE_STEPS = 3


class NotSPDError(np.linalg.LinAlgError):
    def __init__(self, index: int, pivot: float | None = None):
        super().__init__(f"matrix is not positive definite: pivot {index} is {pivot}")
        self.index = index
        self.pivot = pivot


class RebaseRequired(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def _residual_dot2(indptr, indices, data, u, f):
    """F - K u per CSR row, accumulated in double-double (TwoSum/TwoProduct)."""
    n = indptr.size - 1
    out = np.empty(n)
    for i in range(n):
        s = f[i]
        c = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            a = -data[k]
            b = u[indices[k]]
            p = a * b
            # Dekker split for the exact product error
            t = 134217729.0 * a
            ah = t - (t - a)
            al = a - ah
            t = 134217729.0 * b
            bh = t - (t - b)
            bl = b - bh
            pe = ((ah * bh - p) + ah * bl + al * bh) + al * bl
            x = s + p
            z = x - s
            se = (s - (x - z)) + (p - z)
            s = x
            c += se + pe
        out[i] = s + c
    return out


@njit(cache=True)
def _fill_rows(first, ptr, data, indptr, indices, values, q):
    for i in range(q, first.size):
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j <= i:
                data[ptr[i] + j - first[i]] = values[k]


@njit(cache=True)
def _factor_rows(first, ptr, data, q):
    """Up-looking Cholesky of rows q..N-1; rows < q must already hold L."""
    n = first.size
    for i in range(q, n):
        fi = first[i]
        pi = ptr[i]
        for j in range(fi, i):
            fj = first[j]
            k0 = fi if fi > fj else fj
            pj = ptr[j]
            s = data[pi + j - fi]
            for k in range(k0, j):
                s -= data[pi + k - fi] * data[pj + k - fj]
            data[pi + j - fi] = s / data[pj + j - fj]
        s = data[pi + i - fi]
        for k in range(fi, i):
            v = data[pi + k - fi]
            s -= v * v
        if not s > 0.0:
            return i, s
        data[pi + i - fi] = np.sqrt(s)
    return -1, 0.0


@njit(cache=True)
def _forward(first, ptr, data, Y, r0):
    """In-place solve of L y = b for rows >= r0; Y holds rows r0.. of b (zero above)."""
    n = first.size
    m = Y.shape[1]
    for i in range(r0, n):
        fi = first[i]
        pi = ptr[i]
        lo = fi if fi > r0 else r0
        for j in range(lo, i):
            lij = data[pi + j - fi]
            for c in range(m):
                Y[i - r0, c] -= lij * Y[j - r0, c]
        d = data[pi + i - fi]
        for c in range(m):
            Y[i - r0, c] /= d


@njit(cache=True)
def _backward(first, ptr, data, X):
    """In-place solve of L^T x = y over all rows."""
    n = first.size
    m = X.shape[1]
    for i in range(n - 1, -1, -1):
        fi = first[i]
        pi = ptr[i]
        d = data[pi + i - fi]
        for c in range(m):
            X[i, c] /= d
        for j in range(fi, i):
            lij = data[pi + j - fi]
            for c in range(m):
                X[j, c] -= lij * X[i, c]


@njit(cache=True)
def _forward1(first, ptr, data, y, r0):
    n = first.size
    for i in range(r0, n):
        fi = first[i]
        pi = ptr[i]
        lo = fi if fi > r0 else r0
        s = y[i]
        for j in range(lo, i):
            s -= data[pi + j - fi] * y[j]
        y[i] = s / data[pi + i - fi]


@njit(cache=True)
def _backward1(first, ptr, data, x):
    n = first.size
    for i in range(n - 1, -1, -1):
        fi = first[i]
        pi = ptr[i]
        xi = x[i] / data[pi + i - fi]
        x[i] = xi
        for j in range(fi, i):
            x[j] -= data[pi + j - fi] * xi


# ---------------------------------------------------------------------------
# Factor
# ---------------------------------------------------------------------------


def _as_symmetric_csc(K) -> sp.csc_matrix:
    K = sp.csc_matrix(K)
    K.sort_indices()
    return K


def _envelope(K: sp.csc_matrix) -> np.ndarray:
    n = K.shape[0]
    counts = np.diff(K.indptr)
    if np.any(counts == 0):
        raise NotSPDError(int(np.flatnonzero(counts == 0)[0]), 0.0)
    first = K.indices[K.indptr[:-1]].astype(np.int64)
    first = np.minimum(first, np.arange(n))
    return first


@dataclass
class CholeskyFactor:
    """Lower-triangular envelope factor with L Lᵀ = K in natural order."""

    first: np.ndarray
    ptr: np.ndarray
    data: np.ndarray
    baseline_size: int

    @property
    def n(self) -> int:
        return self.first.size

    @property
    def nnz(self) -> int:
        return self.data.size

    def diagonal(self) -> np.ndarray:
        return self.data[self.ptr[:-1] + np.arange(self.n) - self.first]

    def to_sparse(self) -> sp.csr_matrix:
        lens = np.diff(self.ptr)
        rows = np.repeat(np.arange(self.n), lens)
        cols = np.concatenate([np.arange(f, i + 1) for i, f in enumerate(self.first)]) if self.n else np.zeros(0, int)
        L = sp.csr_matrix((self.data, (rows, cols)), shape=(self.n, self.n))
        L.eliminate_zeros()
        return L

    def solve(self, b: np.ndarray) -> np.ndarray:
        X = np.array(b, dtype=float, copy=True, order="C")
        if X.ndim == 1:
            _forward1(self.first, self.ptr, self.data, X, 0)
            _backward1(self.first, self.ptr, self.data, X)
        else:
            _forward(self.first, self.ptr, self.data, X, 0)
            _backward(self.first, self.ptr, self.data, X)
        return X

    def backward(self, y: np.ndarray) -> np.ndarray:
        """Lᵀ⁻¹ applied to a full-length vector."""
        x = np.array(y, dtype=float, copy=True, order="C")
        if x.ndim == 1:
            _backward1(self.first, self.ptr, self.data, x)
        else:
            _backward(self.first, self.ptr, self.data, x)
        return x

    def forward(self, B: np.ndarray, r0: int = 0) -> np.ndarray:
        """L⁻¹ applied to columns supported on rows >= r0; returns rows r0.. only."""
        Y = np.ascontiguousarray(B, dtype=float)
        _forward(self.first, self.ptr, self.data, Y, r0)
        return Y


@dataclass
class SolverCounters:
    factorizations: int = 0
    rebases: int = 0
    rows_factored: int = 0
    rows_reused: int = 0
    leading_rows_refactored: int = 0
    triangular_solves: int = 0
    schur_sizes: list = field(default_factory=list)
    times: dict = field(default_factory=dict)

    def tick(self, phase: str, dt: float) -> None:
        self.times[phase] = self.times.get(phase, 0.0) + dt


def _factor_from(K: sp.csc_matrix, first, q: int, old: CholeskyFactor | None) -> CholeskyFactor:
    n = K.shape[0]
    lens = np.arange(n) - first + 1
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(lens, out=ptr[1:])
    data = np.zeros(ptr[-1])
    if q > 0:
        data[: ptr[q]] = old.data[: ptr[q]]
    _fill_rows(first, ptr, data, K.indptr.astype(np.int64), K.indices.astype(np.int64), K.data, q)
    bad, piv = _factor_rows(first, ptr, data, q)
    if bad >= 0:
        raise NotSPDError(int(bad), float(piv))
    return CholeskyFactor(first=first, ptr=ptr, data=data, baseline_size=n)


def cholesky(K, counters: SolverCounters | None = None) -> CholeskyFactor:
    """Envelope Cholesky of a symmetric positive definite matrix in natural order."""
    K = _as_symmetric_csc(K)
    first = _envelope(K)
    f = _factor_from(K, first, 0, None)
    if counters is not None:
        counters.factorizations += 1
        counters.rows_factored += f.n
    return f


# ---------------------------------------------------------------------------
# Reanalysis
# ---------------------------------------------------------------------------


def _pad(K: sp.csc_matrix, n: int) -> sp.csc_matrix:
    m = K.shape[0]
    if m == n:
        return K
    indptr = np.concatenate([K.indptr, np.full(n - m, K.indptr[-1])])
    return sp.csc_matrix((K.data, K.indices, indptr), shape=(n, n))


def first_changed_lower_row(K_i: sp.spmatrix, K_ref: sp.spmatrix) -> int:
    """First row whose lower-triangular part differs; factor rows above it stay valid."""
    n = K_i.shape[0]
    D = sp.tril(sp.csr_matrix(K_i) - sp.csr_matrix(_pad(sp.csc_matrix(K_ref), n))).tocsr()
    D.eliminate_zeros()
    rows = np.flatnonzero(np.diff(D.indptr) > 0)
    return int(rows[0]) if rows.size else n


def changed_rows(K_i: sp.spmatrix, K_ref: sp.spmatrix) -> np.ndarray:
    """Rows of K_i that differ in any entry from K_ref (zero-padded)."""
    n = K_i.shape[0]
    D = (sp.csr_matrix(K_i) - sp.csr_matrix(_pad(sp.csc_matrix(K_ref), n))).tocsr()
    D.eliminate_zeros()
    return np.flatnonzero(np.diff(D.indptr) > 0)


def residual_change(K_i, F_i, baseline: "Baseline") -> np.ndarray:
    """(F_i - F_ref) - (K_i - K_ref) U_ref, with zero-padding to the new size.

    Equals delta minus the baseline's own residual.  Rows untouched by the
    update come out exactly zero, so roundoff left in U_ref never counts
    as a change.
    """
    n = K_i.shape[0]
    m = min(baseline.size, n)
    U0 = np.zeros(n)
    U0[:m] = baseline.U_ref[:m]
    dF = np.asarray(F_i, dtype=float).copy()
    dF[:m] -= baseline.F_ref[:m]
    D = sp.csr_matrix(K_i) - sp.csr_matrix(_pad(sp.csc_matrix(baseline.K_ref), n))
    return dF - D @ U0


@dataclass
class Baseline:
    K_ref: sp.csc_matrix
    U_ref: np.ndarray
    F_ref: np.ndarray
    factor: CholeskyFactor
    step_index: int

    @property
    def size(self) -> int:
        return self.K_ref.shape[0]


@dataclass
class Partition:
    balanced: np.ndarray
    unbalanced: np.ndarray
    N: int

    @property
    def n(self) -> int:
        return self.unbalanced.size

    @property
    def m(self) -> int:
        return self.balanced.size

    @property
    def eta(self) -> float:
        return 100.0 * self.n / self.N if self.N else 0.0


def classify_dofs(K_i, K_ref, delta: np.ndarray, structural_changed=(), F_scale: float | None = None,
                  retired=()) -> Partition:
    """Balanced / unbalanced split by row-wise stiffness change and residual screen."""
    N = K_i.shape[0]
    N_ref = K_ref.shape[0]
    un = np.zeros(N, dtype=bool)
    un[changed_rows(K_i, K_ref)] = True
    un[N_ref:] = True
    for j in structural_changed:
        if j < N:
            un[j] = True
    for j in retired:
        if j < N:
            un[j] = True
    scale = F_scale if F_scale is not None else (np.abs(delta).max() if delta.size else 0.0)
    if scale > 0:
        un |= np.abs(delta) > DELTA_TOL * scale
    return Partition(balanced=np.flatnonzero(~un), unbalanced=np.flatnonzero(un), N=N)


def partition_rows(K_i, K_ref, delta, F_scale) -> np.ndarray:
    return classify_dofs(K_i, K_ref, delta, F_scale=F_scale).unbalanced


def _refine(apply_inverse, K: sp.spmatrix, F: np.ndarray, U: np.ndarray, steps: int = REFINE_STEPS) -> np.ndarray:
    Kr = sp.csr_matrix(K)
    F = np.ascontiguousarray(F, dtype=float)

    def residual(x):
        return _residual_dot2(Kr.indptr, Kr.indices, Kr.data, x, F)

    r = residual(U)
    rn = np.linalg.norm(r)
    for _ in range(steps):
        if rn == 0.0:
            break
        dU = apply_inverse(r)
        U_new = U + dU
        r_new = residual(U_new)
        rn_new = np.linalg.norm(r_new)
        if not rn_new < rn:
            break
        U, r, rn = U_new, r_new, rn_new
        if np.linalg.norm(dU) <= 1e-15 * np.linalg.norm(U):
            break
    return U


def direct_solve(K, F, counters: SolverCounters | None = None) -> tuple[np.ndarray, CholeskyFactor]:
    """Fresh factorization + solve, with iterative refinement."""
    t0 = time.perf_counter()
    f = cholesky(K, counters)
    U = f.solve(F)
    U = _refine(f.solve, K, F, U)
    if counters is not None:
        counters.tick("factor_solve", time.perf_counter() - t0)
    return U, f


@dataclass
class _SchurState:
    idx: np.ndarray
    E: np.ndarray
    cz: tuple
    cs: tuple
    ref_pos: np.ndarray
    Yn: np.ndarray  # cached L⁻¹P columns of the unbalanced reference DOFs
    app_pos: np.ndarray
    app_d: np.ndarray


class DURSolver:
    """Reanalysis against a moving baseline.

    With G = blockdiag(K_ref, diag(d)) (d = first-seen diagonal of appended
    DOFs) every balanced row of K_i equals the matching row of G, so
    K_i = G + P E Pᵀ with E supported on the unbalanced block.  The
    correction then needs the Schur complement S = E + (Pᵀ G⁻¹ P)⁻¹, which
    equals K_nn - K_nm K_mm⁻¹ K_mn.  Columns of L⁻¹P are cached between
    steps, so each step only solves for newly unbalanced indices.
    """

    def __init__(self, threshold: float = DEFAULT_THRESHOLD, counters: SolverCounters | None = None):
        self.threshold = threshold
        self.counters = counters or SolverCounters()
        self.baseline: Baseline | None = None
        self.events: list = []
        self._reset_cache()

    def _reset_cache(self):
        self._cols: dict[int, int] = {}  # ref index -> column of Y
        self._Y = np.zeros((0, 0))
        self._R0 = None
        self._Z = np.zeros((0, 0))
        self._d: dict[int, float] = {}

    # -- baseline management ---------------------------------------------------

    def initialize(self, K, F, step: int = 0) -> np.ndarray:
        K = _as_symmetric_csc(K)
        U, f = direct_solve(K, F, self.counters)
        self.baseline = Baseline(K_ref=K, U_ref=U, F_ref=np.array(F, dtype=float), factor=f, step_index=step)
        self._reset_cache()
        self.events.append(("factorize", step, K.shape[0]))
        return U

    def refactor_rebase(self, K_i, F_i, step: int) -> Baseline:
        """Local update: keep the factor rows of the unchanged prefix, refactor the rest."""
        t0 = time.perf_counter()
        K_i = _as_symmetric_csc(K_i)
        old = self.baseline
        N_i, N_ref = K_i.shape[0], old.size
        q = min(first_changed_lower_row(K_i, old.K_ref), N_ref, N_i)
        first = _envelope(K_i)
        try:
            f = _factor_from(K_i, first, q, old.factor)
            self.counters.rows_factored += N_i - q
            self.counters.rows_reused += q
        except NotSPDError:
            log.warning("trailing block not SPD during rebase; refactoring from scratch")
            f = _factor_from(K_i, first, 0, None)
            self.counters.rows_factored += N_i
            self.counters.leading_rows_refactored += q
        self.counters.rebases += 1
        U = f.solve(F_i)
        U = _refine(f.solve, K_i, F_i, U)
        self.baseline = Baseline(K_ref=K_i, U_ref=U, F_ref=np.array(F_i, dtype=float), factor=f, step_index=step)
        self._reset_cache()
        self.events.append(("rebase", step, q))
        self.counters.tick("rebase", time.perf_counter() - t0)
        return self.baseline

    # -- G operations ----------------------------------------------------------

    def _g_solve(self, R: np.ndarray) -> np.ndarray:
        b = self.baseline
        X = np.array(R, dtype=float, copy=True)
        X[: b.size] = b.factor.solve(X[: b.size])
        if X.shape[0] > b.size:
            d = np.array([self._d[k] for k in range(b.size, X.shape[0])])
            X[b.size:] = X[b.size:] / (d if X.ndim == 1 else d[:, None])
        self.counters.triangular_solves += 2 * (1 if X.ndim == 1 else X.shape[1])
        return X

    def _g_entries(self, idx: np.ndarray, N: int) -> np.ndarray:
        b = self.baseline
        Gnn = np.zeros((idx.size, idx.size))
        ref = idx < b.size
        ri = np.flatnonzero(ref)
        if ri.size:
            Gnn[np.ix_(ri, ri)] = b.K_ref[idx[ri]][:, idx[ri]].toarray()
        for a in np.flatnonzero(~ref):
            Gnn[a, a] = self._d[int(idx[a])]
        return Gnn

    def _extend_cache(self, ref_idx: np.ndarray):
        new = np.array([k for k in ref_idx if int(k) not in self._cols], dtype=np.int64)
        if new.size == 0:
            return
        f = self.baseline.factor
        N = f.n
        r0 = int(new.min())
        B = np.zeros((N - r0, new.size))
        B[new - r0, np.arange(new.size)] = 1.0
        Ynew = f.forward(B, r0)
        self.counters.triangular_solves += new.size
        if self._R0 is None:
            self._R0 = r0
            self._Y = np.zeros((N - r0, 0))
        elif r0 < self._R0:
            self._Y = np.vstack([np.zeros((self._R0 - r0, self._Y.shape[1])), self._Y])
            self._R0 = r0
        Ynew = np.vstack([np.zeros((r0 - self._R0, new.size)), Ynew]) if r0 > self._R0 else Ynew
        cross = self._Y.T @ Ynew
        self._Z = np.block([[self._Z, cross], [cross.T, Ynew.T @ Ynew]])
        base = self._Y.shape[1]
        self._Y = np.hstack([self._Y, Ynew])
        for c, k in enumerate(new):
            self._cols[int(k)] = base + c

    def _schur(self, K_i: sp.csc_matrix, idx: np.ndarray):
        b = self.baseline
        N = K_i.shape[0]
        for k in idx[idx >= b.size]:
            if int(k) not in self._d:
                self._d[int(k)] = float(K_i[k, k]) if K_i[k, k] > 0 else 1.0
        ref = idx[idx < b.size]
        self._extend_cache(ref)
        Z = np.zeros((idx.size, idx.size))
        ri = np.flatnonzero(idx < b.size)
        cols = np.array([self._cols[int(k)] for k in ref], dtype=np.int64)
        Z[np.ix_(ri, ri)] = self._Z[np.ix_(cols, cols)]
        for a in np.flatnonzero(idx >= b.size):
            Z[a, a] = 1.0 / self._d[int(idx[a])]
        E = K_i[idx][:, idx].toarray() - self._g_entries(idx, N)
        try:
            cz = sla.cho_factor(Z)
            Zinv = sla.cho_solve(cz, np.eye(idx.size))
            S = E + 0.5 * (Zinv + Zinv.T)
            cs = sla.cho_factor(S)
        except np.linalg.LinAlgError as exc:
            raise RebaseRequired(str(exc)) from exc
        app = np.flatnonzero(idx >= b.size)
        d = np.array([self._d[int(idx[a])] for a in app])
        return _SchurState(idx=idx, E=E, cz=cz, cs=cs, ref_pos=ri, Yn=np.ascontiguousarray(self._Y[:, cols]),
                           app_pos=app, app_d=d)

    def _apply_inverse(self, r, st: "_SchurState"):
        """K_i⁻¹ r = L⁻ᵀ(L⁻¹r + Y c) on the reference block, with (G⁻¹r)_n = Yᵀ L⁻¹r.

        One forward and one backward sweep per application; appended DOFs
        only see the diagonal part of G.
        """
        idx = st.idx
        if idx.size == 0:
            return self._g_solve(r)
        b = self.baseline
        f = b.factor
        Nb = b.size
        y = np.array(r[:Nb], dtype=float, copy=True)
        _forward1(f.first, f.ptr, f.data, y, 0)
        x_app = r[Nb:] / np.array([self._d[k] for k in range(Nb, r.shape[0])]) if r.shape[0] > Nb else r[Nb:]
        gn = np.zeros(idx.size)
        if st.ref_pos.size:
            gn[st.ref_pos] = st.Yn.T @ y[self._R0:]
        if st.app_pos.size:
            gn[st.app_pos] = x_app[idx[st.app_pos] - Nb]
        c = sla.cho_solve(st.cz, sla.cho_solve(st.cs, -(st.E @ gn)))
        if st.ref_pos.size:
            y[self._R0:] += st.Yn @ c[st.ref_pos]
        _backward1(f.first, f.ptr, f.data, y)
        self.counters.triangular_solves += 2
        out = np.concatenate([y, x_app])
        if st.app_pos.size:
            out[idx[st.app_pos]] += c[st.app_pos] / st.app_d
        return out

    # -- step ----------------------------------------------------------------

    def solve(self, K_i, F_i, step: int, structural_changed=(), retired=()):
        """Solve K_i U = F_i against the current baseline; returns (U, Partition, rebased)."""
        if self.baseline is None:
            U = self.initialize(K_i, F_i, step)
            p = Partition(np.arange(K_i.shape[0]), np.zeros(0, dtype=np.int64), K_i.shape[0])
            return U, p, True
        t0 = time.perf_counter()
        K_i = _as_symmetric_csc(K_i)
        F_i = np.asarray(F_i, dtype=float)
        b = self.baseline
        U0 = np.zeros(K_i.shape[0])
        U0[: b.size] = b.U_ref[: min(b.size, K_i.shape[0])]
        delta = F_i - K_i @ U0
        part = classify_dofs(K_i, b.K_ref, residual_change(K_i, F_i, b), structural_changed,
                             F_scale=np.abs(F_i).max(), retired=retired)
        self.counters.tick("classify", time.perf_counter() - t0)
        if part.eta > self.threshold:
            log.info("step %d: eta = %.2f%% exceeds %.2f%%; rebasing", step, part.eta, self.threshold)
            self.events.append(("eta_exceeded", step, part.eta))
            self.refactor_rebase(K_i, F_i, step)
            return self.baseline.U_ref.copy(), part, True
        if part.n == 0:
            # every residual entry is below the screen and counts as zero
            return U0, part, False
        t1 = time.perf_counter()
        idx = part.unbalanced
        try:
            st = self._schur(K_i, idx)
        except RebaseRequired:
            log.warning("step %d: Schur system not SPD; rebasing", step)
            self.events.append(("schur_failed", step, part.eta))
            self.refactor_rebase(K_i, F_i, step)
            return self.baseline.U_ref.copy(), part, True
        self.counters.schur_sizes.append(int(idx.size))

        def inv(r):
            return self._apply_inverse(r, st)

        U = U0 + inv(delta)
        U = _refine(inv, K_i, F_i, U)
        self.counters.tick("dur", time.perf_counter() - t1)
        return U, part, False


def dur_solve(K_i, F_i, baseline: Baseline, partition: Partition | None = None) -> np.ndarray:
    """One-shot DUR solve against ``baseline`` (no cache carried between calls)."""
    s = DURSolver(threshold=100.0)
    s.baseline = baseline
    if partition is None:
        U, _, _ = s.solve(K_i, F_i, baseline.step_index + 1)
        return U
    K_i = _as_symmetric_csc(K_i)
    F_i = np.asarray(F_i, dtype=float)
    U0 = np.zeros(K_i.shape[0])
    U0[: baseline.size] = baseline.U_ref
    delta = F_i - K_i @ U0
    st = s._schur(K_i, partition.unbalanced)

    def inv(r):
        return s._apply_inverse(r, st)

    return _refine(inv, K_i, F_i, U0 + inv(delta))


def refactor_rebase(K_i, F_i, baseline: Baseline, step: int | None = None,
                    counters: SolverCounters | None = None) -> Baseline:
    s = DURSolver(counters=counters)
    s.baseline = baseline
    return s.refactor_rebase(K_i, F_i, baseline.step_index + 1 if step is None else step)
