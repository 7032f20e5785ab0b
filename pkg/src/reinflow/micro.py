"""Sub-scale problems: the periodic unit-cell Stokes problem that defines the
homogenized (Darcy-type) law, and the boundary-layer problem that gives the
interface friction coefficient.
"""
from dataclasses import dataclass, field
import os
import threading
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .constitutive import Bingham, Newtonian
from .exceptions import ConvergenceError, ReinflowError
from .fem import (ConstraintBuilder, DofMap, StokesOperator, assemble_interface_terms,
                  shape_functions, TRI3)
from .linsolve import factorize, solve
from .mesh import BoundaryTag, Region, generate_boundary_layer_mesh, generate_rve_mesh, write_mesh
from .newton import SolverConfig, newton_solve

CELL_TOL = 1e-10
# default unit-cell element size: about 700 quadratic triangles at xi = 0.125
RVE_H = 0.07


def _p1_integrals(op):
    """``int psi_i dx`` for the pressure basis of a Stokes operator."""
    N, _ = shape_functions("P1", TRI3.points)
    w = np.einsum("tq,qi->ti", op.geom.dx(TRI3), N)
    return np.bincount(op.pdofs.ravel(), weights=w.ravel(), minlength=op.pspace.size)


@dataclass
class CellSolution:
    """Sub-scale fields on the unit cell for one driving force."""

    force: np.ndarray
    u: np.ndarray  # velocity dofs (node-major)
    p: np.ndarray  # zero-mean sub-scale pressure
    flux: np.ndarray  # seepage velocity
    iterations: int = 0
    # factorized Jacobian at this state, kept by tangent() for predictors
    factor: object = field(default=None, repr=False, compare=False)


class RVEProblem:
    """Periodic unit cell with a centered circular obstacle.

    Parameters
    ----------
    xi : float
        Obstacle radius relative to the cell size.
    law : Newtonian or Bingham
    target_h : float
        Mesh size on the unit cell.
    config : SolverConfig, optional
        Settings of the nested Newton iteration (Bingham only).
    mesh : Mesh, optional
        Use this cell mesh instead of generating one.
    """

    def __init__(self, xi, law, target_h=RVE_H, config=None, mesh=None):
        self.xi = float(xi)
        self.law = law
        self.config = config or SolverConfig(tol_rel=CELL_TOL, tol_abs=1e-14)
        self.mesh = generate_rve_mesh(xi, target_h) if mesh is None else mesh
        self.op = StokesOperator(self.mesh, np.arange(self.mesh.n_triangles))
        self.dofmap = DofMap().add("u", self.op.vspace).add("p", self.op.pspace)
        cb = ConstraintBuilder(self.dofmap)
        cb.dirichlet("u", self.mesh.nodes_with(BoundaryTag.OBSTACLE), 0.0)
        pairs = self.mesh.periodic_pairs
        cb.periodic("u", pairs)
        cb.periodic("p", pairs[pairs[:, 0] < self.mesh.n_vertices])
        cb.fix("p", self.op.pspace.nodes[:1], 0.0)
        self.constraints = cb.build()
        self.cell_area = 1.0
        self.fluid_area = self.mesh.area()
        self.nv = self.op.vspace.size
        # unit loads int phi e_k: the seepage velocity is (F_k . u) / |cell|
        self.unit_loads = np.stack([self.op.load((1.0, 0.0)), self.op.load((0.0, 1.0))])
        self._p_weights = _p1_integrals(self.op)
        self._linear = None
        self._loads = None

    @property
    def porosity(self):
        return self.fluid_area / self.cell_area

    @property
    def is_linear(self):
        return isinstance(self.law, Newtonian)

    # ------------------------------------------------------------------
    def _full(self, y):
        return self.constraints.expand(y)

    def _residual(self, y, f):
        x = self._full(y)
        f_tau, _ = self.op.viscous(self.law, x[: self.nv], need_tangent=False)
        r_u = f_tau + self.op.G_p @ x[self.nv:] - f @ self.unit_loads
        return self.constraints.reduce_vector(np.r_[r_u, self.op.G_u @ x[: self.nv]])

    def _jacobian(self, y):
        x = self._full(y)
        _, K = self.op.viscous(self.law, x[: self.nv])
        J = sp.bmat([[K, self.op.G_p], [self.op.G_u, None]], format="csr")
        return self.constraints.reduce_matrix(J)

    def _linear_factor(self):
        if self._linear is None:
            self._linear = factorize(self._jacobian(np.zeros(self.constraints.n_free)))
        return self._linear

    def _reduced_loads(self):
        if self._loads is None:
            z = np.zeros((2, self.dofmap.size))
            z[:, : self.nv] = self.unit_loads
            self._loads = np.stack([self.constraints.reduce_vector(v) for v in z])
        return self._loads

    def _finish(self, f, y, iterations):
        x = self._full(y)
        u, p = x[: self.nv], x[self.nv:].copy()
        p -= (self._p_weights @ p) / self.fluid_area
        flux = self.unit_loads @ u / self.cell_area
        return CellSolution(np.array(f, float), u, p, flux, iterations)

    def solve(self, force, guess=None):
        """Solve the cell problem driven by ``force = rho b - grad p``.

        ``guess`` is a previous :class:`CellSolution` used as warm start.
        """
        f = np.asarray(force, float).reshape(2)
        if self.is_linear:
            loads = self._reduced_loads()
            y = solve(self._linear_factor(), f @ loads)
            return self._finish(f, y, 1)
        if not np.any(f):
            return self._finish(f, np.zeros(self.constraints.n_free), 0)
        ref = float(np.linalg.norm(f @ self._reduced_loads()))
        if guess is None:
            y0 = np.zeros(self.constraints.n_free)
        else:
            y0 = self.constraints.restrict(np.r_[guess.u, guess.p])
            if guess.factor is not None:
                # first-order predictor along the tangent of the previous state
                y0 = y0 + solve(guess.factor, (f - guess.force) @ self._reduced_loads())
        res = newton_solve(lambda y: self._residual(y, f), self._jacobian, y0,
                           self.config, reference=ref)
        return self._finish(f, res.y, res.iterations)

    def tangent(self, solution):
        """Permeability tangent ``K = d flux / d force`` (symmetric, positive).

        Linearizes the cell problem at ``solution`` and solves it for the two
        unit forces.
        """
        if self.is_linear:
            F = self._linear_factor()
        else:
            y = self.constraints.restrict(np.r_[solution.u, solution.p])
            F = factorize(self._jacobian(y))
            solution.factor = F
        loads = self._reduced_loads()
        K = np.empty((2, 2))
        for k in range(2):
            dy = solve(F, loads[k])
            du = self.constraints.P[: self.nv] @ dy
            K[:, k] = self.unit_loads @ du / self.cell_area
        return K

    def divergence_residual(self, solution):
        """Weak divergence ``int q div u`` for every periodic P1 test function."""
        r = np.r_[np.zeros(self.nv), self.op.G_u @ solution.u]
        P = self.constraints.PT[:, self.nv:]
        free_p = np.asarray(abs(P).sum(axis=1)).ravel() > 0
        return (self.constraints.PT @ r)[free_p]

    def dump(self, directory, solution, tag="cell"):
        """Write the cell mesh and fields in the plain-text formats."""
        os.makedirs(directory, exist_ok=True)
        mpath = os.path.join(directory, "rve_mesh.txt")
        if not os.path.exists(mpath):
            write_mesh(self.mesh, mpath)
        u = self.op.vspace.nodal(solution.u)
        p = self.op.pspace.nodal(solution.p)
        with open(os.path.join(directory, f"{tag}.csv"), "w", encoding="ascii") as fh:
            fh.write("id,x,y,u_x,u_y,p\n")
            for i, ((x, yy), (ux, uy), pp) in enumerate(zip(self.mesh.nodes, u, p)):
                fh.write(f"{i},{x:.17g},{yy:.17g},{ux:.17g},{uy:.17g},{pp:.17g}\n")


def solve_cell(rve, g, rhob=(0.0, 0.0), guess=None):
    """Sub-scale velocity and pressure for macro gradient ``g`` and body force ``rhob``."""
    return rve.solve(np.asarray(rhob, float) - np.asarray(g, float), guess)


def seepage_flux(rve, solution):
    """Seepage velocity: fluid-velocity integral over the cell divided by its area."""
    return rve.unit_loads @ solution.u / rve.cell_area


def tangent_permeability(rve, solution=None):
    """``K`` with ``d flux = K d(rho b - g)``; the Jacobian w.r.t. ``g`` is ``-K``."""
    if solution is None:
        if not rve.is_linear:
            raise ValueError("a base state is required for a nonlinear law")
        solution = rve.solve(np.zeros(2))
    return rve.tangent(solution)


# --------------------------------------------------------------------------


def _law_from_params(mu, tau0, m):
    if tau0 is None:
        return Newtonian(mu)
    return Bingham(mu, tau0, m)


class HomogenizedLaw(BaseEstimator):
    """Seepage velocity as a function of the driving force ``rho b - grad p``.

    The map is evaluated by unit-cell solves.  Results are cached per exact
    force value; for a Newtonian fluid the law is linear and reduces to one
    constant permeability computed at :meth:`fit`.

    Parameters
    ----------
    xi : float
        Obstacle radius of the unit cell.
    mu : float
        Viscosity (plastic viscosity for a Bingham fluid).
    tau0, m : float or None
        Yield stress and regularization parameter; ``tau0=None`` selects a
        Newtonian fluid.
    target_h : float
        Unit-cell mesh size.
    cell_tol : float
        Relative tolerance of the nested cell Newton iteration.
    cell_size : float
        Edge length of the physical cell.  A cell of size ``s`` driven by
        ``f`` is the unit cell driven by ``s f`` with velocities scaled by
        ``s``, so the flux is ``s * flux_1(s f)`` and the tangent
        ``s**2 K_1(s f)``.
    n_threads : int
        Concurrent cell solves in :meth:`evaluate`.  Each element warm-starts
        from its own previous state, so results do not depend on the count.
    """

    def __init__(self, xi=0.25, mu=1.0, tau0=None, m=None, target_h=RVE_H, cell_tol=CELL_TOL,
                 cell_size=1.0, n_threads=1):
        self.xi = xi
        self.mu = mu
        self.tau0 = tau0
        self.m = m
        self.target_h = target_h
        self.cell_tol = cell_tol
        self.cell_size = cell_size
        self.n_threads = n_threads

    @classmethod
    def from_law(cls, xi, law, **kw):
        """Build from a :class:`Newtonian` or :class:`Bingham` instance."""
        if isinstance(law, Bingham):
            return cls(xi=xi, mu=law.mu0, tau0=law.tau0, m=law.m, **kw)
        return cls(xi=xi, mu=law.mu, **kw)

    @property
    def law(self):
        return _law_from_params(self.mu, self.tau0, self.m)

    def fit(self, X=None, y=None):
        """Build the unit-cell problem (and the permeability when linear)."""
        cfg = SolverConfig(tol_rel=self.cell_tol, tol_abs=1e-14, max_newton=100)
        self.rve_ = RVEProblem(self.xi, self.law, self.target_h, cfg)
        self.porosity_ = self.rve_.porosity
        self._cache = {}
        self._warm = {}
        self._lock = threading.Lock()
        self.n_cell_solves_ = 0
        self.permeability_ = self.rve_.tangent(None) if self.rve_.is_linear else None
        return self

    def _solve_one(self, f, key=None):
        k = f.tobytes()
        with self._lock:
            hit = self._cache.get(k)
        if hit is not None:
            return hit
        s = float(self.cell_size)
        if self.rve_.is_linear:
            Ks = s * s * self.permeability_
            val = (Ks @ f, Ks)
            with self._lock:
                self._cache[k] = val
            return val
        guess = self._warm.get(key) if key is not None else None
        try:
            sol = self.rve_.solve(s * f, guess)
        except ConvergenceError as exc:
            raise ConvergenceError(f"cell solve failed for element {key}: {exc}", exc.history) from exc
        K = s * s * self.rve_.tangent(sol)
        val = (s * sol.flux, K)
        with self._lock:
            self._cache[k] = val
            self.n_cell_solves_ += 1
            if key is not None:
                self._warm[key] = sol
        return val

    def evaluate(self, forces, keys=None):
        """Seepage velocities (n, 2) and tangents (n, 2, 2) for forces (n, 2).

        ``keys`` (e.g. Darcy element ids) select per-element warm starts.
        """
        check_is_fitted(self, "rve_")
        F = check_array(np.atleast_2d(forces), dtype=float)
        if F.shape[1] != 2:
            raise ValueError("forces must have two columns")
        keys = [None] * len(F) if keys is None else list(keys)
        args = [np.ascontiguousarray(f) for f in F]
        if self.n_threads > 1 and not self.rve_.is_linear:
            with ThreadPoolExecutor(self.n_threads) as pool:
                out = list(pool.map(self._solve_one, args, keys))
        else:
            out = [self._solve_one(f, kk) for f, kk in zip(args, keys)]
        return np.array([o[0] for o in out]), np.array([o[1] for o in out])

    def predict(self, X):
        """Seepage velocities for driving forces ``X`` (n, 2)."""
        return self.evaluate(X)[0]

    def cell_solution(self, force, key=None):
        """Full sub-scale fields for a force (used for pressure reconstruction)."""
        check_is_fitted(self, "rve_")
        s = float(self.cell_size)
        return self.rve_.solve(s * np.asarray(force, float), self._warm.get(key))


def homogenized_flux(hl, g, rhob=(0.0, 0.0)):
    """``(flux, K)`` for a single macro gradient ``g`` and body force ``rhob``."""
    w, K = hl.evaluate(np.asarray(rhob, float) - np.asarray(g, float))
    return w[0], K[0]


# --------------------------------------------------------------------------


@dataclass
class BoundaryLayerResult:
    C_bl: float
    beta: float
    mu: float
    free_cells: int
    trace_x: np.ndarray  # interface abscissae (sorted)
    trace_u: np.ndarray  # tangential velocity along the interface


def friction_coefficient(mu, C_bl):
    """Interface friction ``beta = -mu / C_bl``."""
    if not C_bl < 0:
        raise ReinflowError(f"boundary-layer constant must be negative, got {C_bl}")
    return -mu / C_bl


def solve_boundary_layer(xi, law=None, free_cells=4, target_h=0.05):
    """Boundary-layer constant ``C_bl`` and friction ``beta`` for a cell stack.

    One perforated cell (with a no-slip bottom) lies below ``free_cells``
    obstacle-free cells.  The stack is periodic left/right, the top is a
    free-slip lid (``u_n = 0``, no shear).  The flow is driven by a unit
    jump of tangential traction across the interface line ``y = 0`` and
    ``C_bl`` is the integral of the tangential velocity along that line.
    """
    law = Newtonian(1.0) if law is None else law
    if not isinstance(law, Newtonian):
        raise ValueError("the boundary-layer problem is defined for Newtonian fluids only")
    mesh = generate_boundary_layer_mesh(xi, free_cells, target_h)
    op = StokesOperator(mesh, np.arange(mesh.n_triangles), viscous="gradient")
    dm = DofMap().add("u", op.vspace).add("p", op.pspace)
    cb = ConstraintBuilder(dm)
    cb.dirichlet("u", mesh.nodes_with(BoundaryTag.OBSTACLE, BoundaryTag.BL_BOTTOM), 0.0)
    top = mesh.nodes_with(BoundaryTag.BL_TOP)
    cb.normal("u", top, (0.0, 1.0), 0.0)
    pairs = mesh.periodic_pairs
    cb.periodic("u", pairs)
    cb.periodic("p", pairs[pairs[:, 0] < mesh.n_vertices])
    cb.fix("p", op.pspace.nodes[:1], 0.0)
    C = cb.build()
    gamma = mesh.edges_with(BoundaryTag.INTERFACE)
    normals = np.tile([0.0, 1.0], (len(gamma), 1))
    # unit traction jump: load -int dw_1 ds; tangent t = (-n_y, n_x) = (-1, 0)
    jump = assemble_interface_terms(mesh, gamma, normals, 1.0, op.vspace, op.pspace)
    ones = np.zeros(op.vspace.size)
    ones[0::2] = 1.0
    # M(beta=1) applied to a unit x-velocity gives int phi_i ds in the x rows
    load = -(jump.M @ ones)
    load[1::2] = 0.0
    nv = op.vspace.size
    # the cell problem is purely geometric (unit viscosity); mu enters beta only
    A = sp.bmat([[op.viscous(Newtonian(1.0), np.zeros(nv))[1], op.G_p],
                 [op.G_u, None]], format="csr")
    b = np.r_[load, np.zeros(op.pspace.size)]
    x = C.expand(solve(factorize(C.reduce_matrix(A)), C.reduce_vector(b)))
    u = x[:nv]
    C_bl = float(-load @ u)
    order = np.argsort(mesh.nodes[np.unique(gamma), 0])
    gnodes = np.unique(gamma)[order]
    trace = u[op.vspace.node_dofs(gnodes)].reshape(-1, 2)[:, 0]
    return BoundaryLayerResult(C_bl, friction_coefficient(law.mu, C_bl), law.mu, free_cells,
                               mesh.nodes[gnodes, 0], trace)
