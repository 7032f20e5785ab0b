"""Macro-scale flow problems solved by Newton's method with backtracking.

Two modes share one scenario description:

* ``dns``: Stokes flow on the channel with every bar meshed.
* ``homogenized``: Stokes flow outside the reinforced block coupled to a
  nonlinear Darcy flow inside it.  The seepage law comes from unit-cell
  solves and the interface carries Beavers-Joseph-Saffman friction.
"""
from dataclasses import dataclass, field, replace
import math
import time

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .constitutive import Newtonian
from .exceptions import ConfigError, ReinflowError
from .fem import (ConstraintBuilder, DarcyOperator, DofMap, StokesOperator,
                  assemble_interface_terms, assemble_traction, edge_normals, owned_edges,
                  node_normals, shape_functions)
from .mesh import (BoundaryTag, ObstacleGrid, Region, generate_coupled_mesh,
                   generate_perforated_mesh)
from .micro import HomogenizedLaw, solve_boundary_layer
from .newton import SolverConfig, newton_solve

BETA_FROM_BOUNDARY_LAYER = "boundary-layer"

__all__ = [
    "Scenario", "SolverConfig", "FlowFields", "SolveReport", "solve", "solve_dns",
    "solve_coupled", "newton_solve", "build_mesh", "BETA_FROM_BOUNDARY_LAYER",
]


@dataclass(frozen=True)
class Scenario:
    """Channel flow past a block of bars.

    Parameters
    ----------
    mode : {'dns', 'homogenized'}
    width, height : float
        Outer rectangle ``[0, width] x [0, height]``; the inlet is the left
        side, the outlet the right side, top and bottom are free-slip walls.
    grid : ObstacleGrid
        Bars (DNS) or footprint of the Darcy block (homogenized).
    law : Newtonian or Bingham
    inlet_velocity : float
        Normal inflow speed on the inlet (positive flows into the domain).
    outlet_pressure : float
        Prescribed pressure of the traction (do-nothing) outlet.
    body_force : 2-tuple
        ``rho b``.
    beta : float or ``'boundary-layer'``
        Interface friction; the string computes it from the boundary-layer
        problem (Newtonian laws only).
    mesh_h : float
        Target element size in the open channel.
    cell_h : float
        Element size inside a bar cell (DNS) relative to a unit cell.
    darcy_divisions : int
        Darcy elements per cell side (homogenized).
    rve_h : float
        Unit-cell mesh size of the homogenized law.
    solver : SolverConfig
    threads : int
        Concurrent unit-cell solves (homogenized nonlinear laws).
    """

    mode: str = "dns"
    width: float = 10.0
    height: float = 4.0
    grid: ObstacleGrid = field(default_factory=lambda: ObstacleGrid(4, 4, 1.0, 0.25, (3.0, 0.0)))
    law: object = field(default_factory=lambda: Newtonian(1.0))
    inlet_velocity: float = 1.0
    outlet_pressure: float = 0.0
    body_force: tuple = (0.0, 0.0)
    beta: object = 0.0
    mesh_h: float = 0.2
    cell_h: float = 0.1
    darcy_divisions: int = 2
    rve_h: float = 0.07
    solver: SolverConfig = field(default_factory=SolverConfig)
    threads: int = 1

    def __post_init__(self):
        if self.mode not in ("dns", "homogenized"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if not math.isfinite(self.inlet_velocity):
            raise ConfigError("inlet velocity must be finite")
        if self.beta != BETA_FROM_BOUNDARY_LAYER:
            if not (isinstance(self.beta, (int, float)) and self.beta >= 0):
                raise ConfigError("beta must be a non-negative number or 'boundary-layer'")

    def with_(self, **kw):
        return replace(self, **kw)

    @property
    def xi(self):
        return self.grid.radius / self.grid.cell_size


def build_mesh(scenario):
    box = (0.0, 0.0, scenario.width, scenario.height)
    if scenario.mode == "dns":
        return generate_perforated_mesh(box, scenario.grid, scenario.mesh_h, scenario.cell_h)
    return generate_coupled_mesh(box, scenario.grid, scenario.mesh_h, scenario.darcy_divisions)


def resolve_beta(scenario):
    if scenario.beta != BETA_FROM_BOUNDARY_LAYER:
        return float(scenario.beta)
    if not isinstance(scenario.law, Newtonian):
        raise ConfigError("beta from the boundary-layer problem needs a Newtonian law")
    # the boundary-layer constant is a length: it scales with the cell size
    C_bl = solve_boundary_layer(scenario.xi, scenario.law).C_bl * scenario.grid.cell_size
    return -scenario.law.mu / C_bl


# --------------------------------------------------------------------------
# fields and point evaluation


class PointLocator:
    """Find the triangle containing each query point."""

    def __init__(self, mesh, elements):
        self.mesh = mesh
        self.elements = np.asarray(elements, int)
        v = mesh.nodes[mesh.triangles[self.elements, :3]]
        self.v0 = v[:, 0]
        J = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=-1)
        self.inv = np.linalg.inv(J)
        self.tree = cKDTree(v.mean(axis=1))
        self.radius = float(np.max(np.linalg.norm(v - v.mean(axis=1)[:, None], axis=2)))

    def locate(self, points, tol=1e-10):
        """``(element index into self.elements or -1, reference coords)``."""
        pts = np.atleast_2d(np.asarray(points, float))
        out = np.full(len(pts), -1)
        ref = np.zeros((len(pts), 2))
        cands = self.tree.query_ball_point(pts, self.radius + 1e-12)
        for i, (p, cand) in enumerate(zip(pts, cands)):
            if not cand:
                continue
            cand = np.sort(np.asarray(cand))
            r = np.einsum("kab,kb->ka", self.inv[cand], p - self.v0[cand])
            lam = np.c_[1 - r.sum(1), r]
            ok = np.flatnonzero(lam.min(1) >= -tol)
            if len(ok):
                k = ok[np.argmax(lam[ok].min(1))]
                out[i], ref[i] = cand[k], r[k]
        return out, ref


@dataclass
class FlowFields:
    """Nodal fields on the full mesh (NaN where a field is not defined).

    ``u``/``p`` live on the Stokes region, ``ubar``/``pbar`` on the Darcy
    block.  Pressures are stored at vertices and, for export, at edge
    midpoints (linear interpolation).
    """

    mesh: object
    u: np.ndarray
    p: np.ndarray
    ubar: np.ndarray
    pbar: np.ndarray
    fluid_elements: np.ndarray
    darcy_elements: np.ndarray
    _locators: dict = field(default_factory=dict, repr=False)

    def locator(self, which):
        if which not in self._locators:
            els = self.fluid_elements if which == "fluid" else self.darcy_elements
            self._locators[which] = PointLocator(self.mesh, els) if len(els) else None
        return self._locators[which]

    def _interp(self, which, values, kind, points):
        loc = self.locator(which)
        pts = np.atleast_2d(np.asarray(points, float))
        shape = (len(pts),) + values.shape[1:]
        out = np.full(shape, np.nan)
        if loc is None:
            return out
        idx, ref = loc.locate(pts)
        hit = idx >= 0
        if not np.any(hit):
            return out
        els = loc.elements[idx[hit]]
        n = 6 if kind == "P2" else 3
        conn = self.mesh.triangles[els, :n]
        N, _ = shape_functions(kind, ref[hit])
        out[hit] = np.einsum("qi,qi...->q...", N, values[conn])
        return out

    def velocity(self, points):
        """Stokes velocity where defined, else seepage velocity."""
        v = self._interp("fluid", self.u, "P2", points)
        miss = np.isnan(v[:, 0])
        if np.any(miss) and len(self.darcy_elements):
            v[miss] = self._interp("darcy", self.ubar, "P2", np.atleast_2d(points)[miss])
        return v

    def pressure(self, points):
        """Stokes pressure where defined, else the macro pressure."""
        q = self._interp("fluid", self.p, "P1", points)
        miss = np.isnan(q)
        if np.any(miss) and len(self.darcy_elements):
            q[miss] = self._interp("darcy", self.pbar, "P1", np.atleast_2d(points)[miss])
        return q


def _p1_to_nodes(mesh, space, values):
    """Nodal P1 values plus midpoint interpolation, NaN outside the space."""
    out = np.full(mesh.n_nodes, np.nan)
    out[space.nodes] = values
    if mesh.order == 2:
        t = mesh.triangles[space.elements]
        for mid, (a, b) in zip((3, 4, 5), ((0, 1), (1, 2), (2, 0))):
            out[t[:, mid]] = 0.5 * (out[t[:, a]] + out[t[:, b]])
    return out


@dataclass
class SolveReport:
    """Outcome of a macro solve."""

    scenario: Scenario
    mesh: object
    fields: FlowFields
    history: list
    converged: bool
    wall_time: float
    n_dofs: int
    n_free: int
    cell_solves: int = 0
    beta: float = 0.0
    darcy: dict = field(default_factory=dict)
    x: np.ndarray = None
    y: np.ndarray = None
    problem: object = field(default=None, repr=False)

    @property
    def iterations(self):
        return max(0, len(self.history) - 1)

    @property
    def residuals(self):
        return np.array([h.residual for h in self.history])

    @property
    def steps(self):
        return np.array([h.step for h in self.history[1:]])

    def lines(self):
        """One line per iteration: index, residual, step length, cell solves."""
        head = "# iteration residual step cell_solves"
        return "\n".join([head] + [h.line() for h in self.history])


# --------------------------------------------------------------------------
# boundary conditions


def _boundary_normals(mesh, tag, elements):
    e = owned_edges(mesh, mesh.edges_with(tag), elements)
    if len(e) == 0:
        return e, np.zeros((0, 2)), np.zeros(0, int), np.zeros((0, 2))
    n = edge_normals(mesh, e, elements)
    nodes, nn = node_normals(mesh, e, n)
    return e, n, nodes, nn


def _stokes_constraints(cb, mesh, elements, speed, field_name="u"):
    _, _, inlet, n_in = _boundary_normals(mesh, BoundaryTag.INLET, elements)
    _, _, slip, n_slip = _boundary_normals(mesh, BoundaryTag.SLIP_WALL, elements)
    if len(inlet):
        cb.dirichlet(field_name, inlet, -speed * n_in)
    if len(slip):
        cb.normal(field_name, slip, n_slip, 0.0)
    walls = mesh.nodes_with(BoundaryTag.OBSTACLE, BoundaryTag.WALL)
    if len(walls):
        cb.dirichlet(field_name, walls, 0.0)


class _Problem:
    """Common machinery: unknown layout, constraints, residual, tangent."""

    def residual(self, y):
        return self.C.reduce_vector(self.full_residual(self.C.expand(y)))

    def jacobian(self, y):
        return self.C.reduce_matrix(self.full_jacobian(self.C.expand(y)))

    def initial_guess(self):
        return np.zeros(self.C.n_free)

    def run(self, initial=None):
        t0 = time.perf_counter()
        y0 = self.initial_guess() if initial is None else np.asarray(initial, float)
        if y0.shape != (self.C.n_free,):
            raise ConfigError(f"initial guess must have {self.C.n_free} free unknowns")
        res = newton_solve(self.residual, self.jacobian, y0, self.scenario.solver,
                           counter=self.cell_count)
        x = self.C.expand(res.y)
        return x, res, time.perf_counter() - t0

    def cell_count(self):
        return 0


class DNSProblem(_Problem):
    def __init__(self, scenario, mesh=None):
        self.scenario = scenario
        self.mesh = build_mesh(scenario) if mesh is None else mesh
        els = np.flatnonzero(self.mesh.regions != Region.DARCY)
        self.elements = els
        self.op = StokesOperator(self.mesh, els)
        self.dm = DofMap().add("u", self.op.vspace).add("p", self.op.pspace)
        cb = ConstraintBuilder(self.dm)
        _stokes_constraints(cb, self.mesh, els, scenario.inlet_velocity)
        out_e, out_n, _, _ = _boundary_normals(self.mesh, BoundaryTag.OUTLET, els)
        if len(out_e) == 0:
            cb.fix("p", self.op.pspace.nodes[:1], 0.0)
        self.C = cb.build()
        self.nv = self.op.vspace.size
        self.f_t = assemble_traction(self.mesh, out_e, out_n, scenario.outlet_pressure, self.op.vspace)
        self.f_b = self.op.load(scenario.body_force)

    def full_residual(self, x):
        u, p = x[: self.nv], x[self.nv:]
        f_tau, _ = self.op.viscous(self.scenario.law, u, need_tangent=False)
        return np.r_[f_tau + self.op.G_p @ p - self.f_b + self.f_t, self.op.G_u @ u]

    def full_jacobian(self, x):
        _, K = self.op.viscous(self.scenario.law, x[: self.nv])
        return sp.bmat([[K, self.op.G_p], [self.op.G_u, None]], format="csr")

    def fields(self, x):
        m = self.mesh
        u = self.op.vspace.nodal(x[: self.nv])
        p = _p1_to_nodes(m, self.op.pspace, x[self.nv:])
        nan2 = np.full((m.n_nodes, 2), np.nan)
        return FlowFields(m, u, p, nan2, np.full(m.n_nodes, np.nan), self.elements,
                          np.zeros(0, int))


class CoupledProblem(_Problem):
    def __init__(self, scenario, mesh=None, law=None):
        self.scenario = scenario
        m = self.mesh = build_mesh(scenario) if mesh is None else mesh
        self.fluid = np.flatnonzero(m.regions == Region.FLUID)
        self.darcy = np.flatnonzero(m.regions == Region.DARCY)
        if len(self.darcy) == 0:
            raise ReinflowError("homogenized mode needs a Darcy block")
        self.beta = resolve_beta(scenario)
        self.law = law if law is not None else HomogenizedLaw.from_law(
            scenario.xi, scenario.law, target_h=scenario.rve_h,
            cell_size=scenario.grid.cell_size, n_threads=scenario.threads).fit()
        self.op = StokesOperator(m, self.fluid)
        self.dop = DarcyOperator(m, self.darcy)
        self.dm = (DofMap().add("u", self.op.vspace).add("p", self.op.pspace)
                   .add("ub", self.dop.vspace).add("pb", self.dop.pspace))
        cb = ConstraintBuilder(self.dm)
        _stokes_constraints(cb, m, self.fluid, scenario.inlet_velocity)
        # Darcy block boundary on the outer walls / inlet
        _, _, d_slip, dn_slip = _boundary_normals(m, BoundaryTag.SLIP_WALL, self.darcy)
        if len(d_slip):
            cb.normal("ub", d_slip, dn_slip, 0.0)
        _, _, d_in, dn_in = _boundary_normals(m, BoundaryTag.INLET, self.darcy)
        if len(d_in):
            cb.dirichlet("ub", d_in, -scenario.inlet_velocity * dn_in)
        # interface: seepage velocity equals the normal part of the Stokes velocity
        self.gamma = m.edges_with(BoundaryTag.INTERFACE)
        self.gamma_n = edge_normals(m, self.gamma, self.darcy)
        g_nodes, g_nn = node_normals(m, self.gamma, self.gamma_n)
        cb.tie("ub", "u", g_nodes, np.einsum("ka,kb->kab", g_nn, g_nn))
        self.gamma_nodes, self.gamma_node_normals = g_nodes, g_nn
        out_e, out_n, _, _ = _boundary_normals(m, BoundaryTag.OUTLET, self.fluid)
        if len(out_e) == 0:
            cb.fix("p", self.op.pspace.nodes[:1], 0.0)
        self.C = cb.build()
        self.f_t = assemble_traction(m, out_e, out_n, scenario.outlet_pressure, self.op.vspace)
        d_out_e, d_out_n, _, _ = _boundary_normals(m, BoundaryTag.OUTLET, self.darcy)
        if len(d_out_e):
            raise ReinflowError("the Darcy block must not touch the outlet")
        self.f_b = self.op.load(scenario.body_force)
        self.iface = assemble_interface_terms(m, self.gamma, self.gamma_n, self.beta,
                                              self.op.vspace, self.dop.pspace)
        self.sl = {k: self.dm.slice(k) for k in ("u", "p", "ub", "pb")}
        self.rhob = np.asarray(scenario.body_force, float)
        self._last = None

    def cell_count(self):
        return getattr(self.law, "n_cell_solves_", 0)

    def darcy_state(self, pb):
        """Gradient, driving force, seepage velocity and tangent per Darcy
        element.  The unit cell is aligned with the (possibly rotated) block,
        so forces are rotated into the cell frame and results back."""
        g = self.dop.pressure_gradients(pb)
        f = self.rhob - g
        R = self.scenario.grid.rotation
        w, K = self.law.evaluate(f @ R, keys=self.darcy)
        return g, f, w @ R.T, np.einsum("ab,ebc,dc->ead", R, K, R)

    def _parts(self, x):
        return [x[self.sl[k]] for k in ("u", "p", "ub", "pb")]

    def full_residual(self, x):
        u, p, ub, pb = self._parts(x)
        f_tau, _ = self.op.viscous(self.scenario.law, u, need_tangent=False)
        _, _, w, K = self.darcy_state(pb)
        db = self.dop.blocks(w, -K, ub, pb)
        r_u = f_tau + self.op.G_p @ p - self.f_b + self.f_t + self.iface.M @ u + self.iface.G @ pb
        r_ub, r_pb = db.residual()
        return np.r_[r_u, self.op.G_u @ u, r_ub, r_pb]

    def full_jacobian(self, x):
        u, p, ub, pb = self._parts(x)
        _, Kv = self.op.viscous(self.scenario.law, u)
        _, _, w, K = self.darcy_state(pb)
        db = self.dop.blocks(w, -K, ub, pb)
        return sp.bmat([
            [Kv + self.iface.M, self.op.G_p, None, self.iface.G],
            [self.op.G_u, None, None, None],
            [None, None, db.M, db.K_t],
            [None, None, db.G, None],
        ], format="csr")

    def fields(self, x):
        m = self.mesh
        u, p, ub, pb = self._parts(x)
        return FlowFields(m, self.op.vspace.nodal(u), _p1_to_nodes(m, self.op.pspace, p),
                          self.dop.vspace.nodal(ub), _p1_to_nodes(m, self.dop.pspace, pb),
                          self.fluid, self.darcy)


def _report(problem, x, res, wall, extra=None):
    fields = problem.fields(x)
    rep = SolveReport(problem.scenario, problem.mesh, fields, res.history, res.converged,
                      wall, problem.dm.size, problem.C.n_free,
                      cell_solves=problem.cell_count(), x=x, y=res.y, problem=problem)
    if extra:
        for k, v in extra.items():
            setattr(rep, k, v)
    return rep


def solve_dns(scenario, mesh=None, initial=None):
    """Fully resolved Stokes flow through the bars.

    ``initial`` optionally replaces the zero initial guess (free unknowns,
    as in ``SolveReport.y``).
    """
    if scenario.mode != "dns":
        raise ConfigError("solve_dns needs a scenario in 'dns' mode")
    pb = DNSProblem(scenario, mesh)
    x, res, wall = pb.run(initial)
    return _report(pb, x, res, wall)


def solve_coupled(scenario, mesh=None, law=None, initial=None):
    """Stokes flow coupled to the homogenized Darcy flow in the block.

    ``law`` replaces the unit-cell law (any object with ``evaluate``).
    """
    if scenario.mode != "homogenized":
        raise ConfigError("solve_coupled needs a scenario in 'homogenized' mode")
    pb = CoupledProblem(scenario, mesh, law)
    x, res, wall = pb.run(initial)
    u, p, ub, pb_ = pb._parts(x)
    g, f, w, K = pb.darcy_state(pb_)
    rep = _report(pb, x, res, wall, {"beta": pb.beta})
    rep.darcy = {"elements": pb.darcy, "centroids": pb.dop.centroids, "grad_p": g,
                 "force": f, "flux": w, "K": K}
    return rep


def solve(scenario, mesh=None):
    return solve_dns(scenario, mesh) if scenario.mode == "dns" else solve_coupled(scenario, mesh)
