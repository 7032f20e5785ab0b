"""Direct sparse factorization of the constrained saddle-point systems.

UMFPACK (through cvxopt) with threshold pivoting handles the indefinite zero
pressure block; its symbolic analysis is cached per sparsity pattern, which
pays off in Newton loops and repeated unit-cell solves.  SuperLU is the
fallback when cvxopt is unavailable.  Each solve is followed by iterative
refinement so that the relative residual meets ``REFINE_TOL``.
"""
from collections import OrderedDict
from dataclasses import dataclass
import hashlib
import threading

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import SingularMatrixError

try:
    from cvxopt import matrix as _cvx_matrix, spmatrix as _cvx_spmatrix, umfpack as _umfpack
except ImportError:  # pragma: no cover - exercised only without cvxopt
    _umfpack = None

REFINE_TOL = 1e-12
MAX_REFINE = 3
# relative residual beyond which a solve is declared singular
SINGULAR_TOL = 1e-6
# Dense re-factorization used to locate a zero pivot is limited to this size.
DENSE_DIAGNOSIS_LIMIT = 2000
_SYMBOLIC_CACHE_SIZE = 16

_symbolic_cache = OrderedDict()
_cache_lock = threading.Lock()


@dataclass
class Factorization:
    """Factorized matrix together with the matrix itself for refinement."""

    A: sp.csc_matrix
    lu: object
    backend: str = "superlu"
    _handle: object = None

    @property
    def shape(self):
        return self.A.shape

    def apply_inverse(self, b):
        if self.backend == "umfpack":
            x = _cvx_matrix(np.asarray(b, float).copy())
            _umfpack.solve(self._handle, self.lu, x)
            return np.array(x).ravel()
        return self.lu.solve(b)


def available_backends():
    return ("umfpack", "superlu") if _umfpack is not None else ("superlu",)


def _structural_defect(A):
    A = A.tocsr()
    A.eliminate_zeros()
    rows = np.flatnonzero(np.diff(A.indptr) == 0)
    if len(rows):
        return int(rows[0])
    cols = np.flatnonzero(np.diff(A.tocsc().indptr) == 0)
    if len(cols):
        return int(cols[0])
    return None


def _first_zero_pivot(A):
    if A.shape[0] > DENSE_DIAGNOSIS_LIMIT:
        return None
    _, _, U = la.lu(A.toarray())
    d = np.abs(np.diag(U))
    scale = max(d.max(initial=0.0), 1.0)
    bad = np.flatnonzero(d <= 1e-13 * scale)
    return int(bad[0]) if len(bad) else None


def _singular(A, detail=""):
    dof = _first_zero_pivot(A)
    raise SingularMatrixError(f"numerically singular matrix{detail}; zero pivot at {dof}", dof)


def _umfpack_factor(A):
    A.sort_indices()
    n = A.shape[0]
    cols = np.repeat(np.arange(n), np.diff(A.indptr))
    M = _cvx_spmatrix(A.data, A.indices.astype(int), cols.astype(int), A.shape)
    key = hashlib.sha1(A.indptr.tobytes() + A.indices.tobytes()).hexdigest()
    with _cache_lock:
        sym = _symbolic_cache.get(key)
        if sym is not None:
            _symbolic_cache.move_to_end(key)
    if sym is None:
        sym = _umfpack.symbolic(M)
        with _cache_lock:
            _symbolic_cache[key] = sym
            while len(_symbolic_cache) > _SYMBOLIC_CACHE_SIZE:
                _symbolic_cache.popitem(last=False)
    try:
        num = _umfpack.numeric(M, sym)
    except ArithmeticError as exc:
        _singular(A, f" ({exc})")
    return Factorization(A, num, "umfpack", M)


def factorize(A, backend=None):
    """Factorize a square sparse matrix.

    Parameters
    ----------
    A : sparse matrix
    backend : {'umfpack', 'superlu'}, optional
        Defaults to UMFPACK when available.

    Raises
    ------
    SingularMatrixError
        For a structurally or numerically singular matrix.  ``dof`` holds
        the first empty row/column or the first zero pivot, when found.
    """
    A = sp.csc_matrix(A, dtype=float)
    n, m = A.shape
    if n != m:
        raise ValueError(f"matrix must be square, got {A.shape}")
    backend = backend or available_backends()[0]
    if backend not in available_backends():
        raise ValueError(f"unknown or unavailable backend {backend!r}")
    dof = _structural_defect(A)
    if dof is not None:
        raise SingularMatrixError(f"structurally singular: empty row/column {dof}", dof)
    if backend == "umfpack":
        return _umfpack_factor(A)
    try:
        lu = spla.splu(A, permc_spec="COLAMD")
    except RuntimeError as exc:
        _singular(A, f" ({exc})")
    d = np.abs(lu.U.diagonal())
    if not np.all(np.isfinite(d)) or d.min(initial=1.0) <= 1e-14 * max(d.max(initial=0.0), 1.0):
        _singular(A)
    return Factorization(A, lu)


def solve(F, b):
    """Solve ``A x = b`` with iterative refinement."""
    b = np.asarray(b, float)
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros_like(b)
    x = F.apply_inverse(b)
    r = b - F.A @ x
    for _ in range(MAX_REFINE):
        if np.linalg.norm(r) <= REFINE_TOL * nb:
            break
        x = x + F.apply_inverse(r)
        r = b - F.A @ x
    # near-singular pivots surface here: refinement cannot recover the solution
    if not np.all(np.isfinite(x)) or np.linalg.norm(r) > SINGULAR_TOL * nb:
        _singular(F.A, " (refinement failed)")
    return x


def relative_residual(A, x, b):
    nb = np.linalg.norm(b)
    return np.linalg.norm(A @ x - b) / (nb if nb > 0 else 1.0)


def spsolve(A, b):
    """Factorize and solve in one call."""
    return solve(factorize(A), b)
