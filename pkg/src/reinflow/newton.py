"""Newton's method with a backtracking (Armijo-type) line search."""
from dataclasses import dataclass, field
import time

import numpy as np

from .exceptions import ConvergenceError, LineSearchError
from .linsolve import factorize, solve


@dataclass(frozen=True)
class SolverConfig:
    """Nonlinear solver settings.

    Parameters
    ----------
    tol_rel : float
        Convergence when ``|r| <= tol_rel * |r_ref|``.
    tol_abs : float
        Absolute floor, used for problems whose reference residual vanishes.
    max_newton : int
    sigma : float
        Sufficient-decrease parameter: accept ``|r(x + l dx)| <= (1 - sigma l) |r(x)|``.
    rho : float
        Backtracking factor.
    min_step : float
        Line search fails below this step length.
    """

    tol_rel: float = 1e-8
    tol_abs: float = 1e-12
    max_newton: int = 50
    sigma: float = 1e-4
    rho: float = 0.5
    min_step: float = 2.0**-30

    def __post_init__(self):
        if not (0 < self.sigma < 1 and 0 < self.rho < 1):
            raise ValueError("sigma and rho must lie in (0, 1)")
        if self.max_newton < 1 or self.tol_rel <= 0:
            raise ValueError("invalid tolerance or iteration limit")


@dataclass
class IterationRecord:
    index: int
    residual: float
    step: float
    cell_solves: int = 0

    def line(self):
        return f"{self.index:3d} {self.residual:.6e} {self.step:.6e} {self.cell_solves:d}"


@dataclass
class NewtonResult:
    y: np.ndarray
    history: list = field(default_factory=list)
    converged: bool = False
    wall_time: float = 0.0
    reference: float = 0.0

    @property
    def iterations(self):
        """Number of Newton corrections applied."""
        return max(0, len(self.history) - 1)

    @property
    def residuals(self):
        return np.array([h.residual for h in self.history])


def newton_solve(residual, jacobian, y0, config=SolverConfig(), reference=None,
                 counter=None):
    """Solve ``residual(y) = 0``.

    Parameters
    ----------
    residual : callable
        ``y -> r`` (reduced residual vector).
    jacobian : callable
        ``y -> J`` sparse reduced tangent at ``y``.
    y0 : array
    reference : float, optional
        Residual norm the relative tolerance refers to; defaults to the
        residual norm of ``y0``.
    counter : callable, optional
        Returns a running count of sub-scale solves, reported per iteration.

    Returns
    -------
    NewtonResult
        The first history entry is the initial residual (step 0).

    Raises
    ------
    LineSearchError
        When no step length above ``config.min_step`` gives sufficient decrease.
    ConvergenceError
        When ``config.max_newton`` iterations do not reach the tolerance.
    """
    t0 = time.perf_counter()
    count = counter or (lambda: 0)
    y = np.array(y0, float)
    r = residual(y)
    nr = float(np.linalg.norm(r))
    ref = nr if reference is None else float(reference)
    tol = max(config.tol_rel * ref, config.tol_abs)
    out = NewtonResult(y, [IterationRecord(0, nr, 0.0, count())], reference=ref)
    for k in range(1, config.max_newton + 1):
        if nr <= tol:
            out.converged = True
            break
        dy = solve(factorize(jacobian(y)), -r)
        lam = 1.0
        while True:
            y_try = y + lam * dy
            r_try = residual(y_try)
            n_try = float(np.linalg.norm(r_try))
            if np.isfinite(n_try) and n_try <= (1.0 - config.sigma * lam) * nr:
                break
            lam *= config.rho
            if lam < config.min_step:
                out.wall_time = time.perf_counter() - t0
                raise LineSearchError("line search failed", out.history)
        y, r, nr = y_try, r_try, n_try
        out.history.append(IterationRecord(k, nr, lam, count()))
    else:
        out.converged = nr <= tol
    out.y = y
    out.wall_time = time.perf_counter() - t0
    if not out.converged:
        raise ConvergenceError(
            f"Newton did not converge in {config.max_newton} iterations "
            f"(residual {nr:.3e}, target {tol:.3e})", out.history)
    return out
