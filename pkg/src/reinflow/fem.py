"""Taylor-Hood P2/P1 machinery: quadrature, shape functions, vectorized
element kernels for every term of the linearized Stokes-Darcy system, and
elimination of constrained degrees of freedom.

Velocity unknowns are ordered node-major (``[u0x, u0y, u1x, u1y, ...]``).
All kernels work on batches of elements at once.
"""
from collections import defaultdict
from dataclasses import dataclass, field
import numpy as np
import scipy.sparse as sp

from .constitutive import SQRT2, Newtonian, mandel_stress_and_tangent
from .exceptions import AssemblyError, ConstraintError


# --------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class QuadratureRule:
    """Rule on the reference triangle (0,0), (1,0), (0,1)."""

    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def barycentric(self):
        xi, eta = self.points.T
        return np.c_[1 - xi - eta, xi, eta]

    def __len__(self):
        return len(self.weights)


def _tri7_degree5():
    a1, w1 = 0.470142064105115, 0.132394152788506
    a2, w2 = 0.101286507323456, 0.125939180544827
    bary = [(1 / 3, 1 / 3, 1 / 3)]
    w = [0.225]
    for a, wk in ((a1, w1), (a2, w2)):
        b = 1 - 2 * a
        bary += [(b, a, a), (a, b, a), (a, a, b)]
        w += [wk] * 3
    bary = np.array(bary)
    return QuadratureRule(bary[:, 1:].copy(), 0.5 * np.array(w), 5)


TRI3 = QuadratureRule(np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]]),
                      np.full(3, 1 / 6), 2)
TRI7 = _tri7_degree5()


def collapsed_gauss_rule(n):
    """Tensor Gauss-Legendre rule collapsed onto the triangle (degree 2n-2)."""
    x, w = np.polynomial.legendre.leggauss(n)
    x, w = 0.5 * (x + 1), 0.5 * w
    u, v = np.meshgrid(x, x, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    pts = np.c_[u.ravel(), (v * (1 - u)).ravel()]
    return QuadratureRule(pts, (wu * wv * (1 - u)).ravel(), 2 * n - 2)


def gauss_line(n):
    """Gauss-Legendre points and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1), 0.5 * w


# --------------------------------------------------------------------------
# shape functions

_LAMBDA_GRAD = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


def shape_functions(kind, points):
    """Values ``(Q, n)`` and reference gradients ``(Q, n, 2)``.

    ``points`` are reference coordinates ``(xi, eta)``, shape (Q, 2).
    """
    points = np.atleast_2d(np.asarray(points, float))
    xi, eta = points.T
    lam = np.c_[1 - xi - eta, xi, eta]
    G = _LAMBDA_GRAD
    q = len(points)
    if kind == "P1":
        return lam, np.broadcast_to(G, (q, 3, 2)).copy()
    if kind != "P2":
        raise ValueError(f"unknown element kind {kind!r}")
    vals = np.empty((q, 6))
    grads = np.empty((q, 6, 2))
    for i in range(3):
        vals[:, i] = lam[:, i] * (2 * lam[:, i] - 1)
        grads[:, i] = (4 * lam[:, i] - 1)[:, None] * G[i]
    for k, (i, j) in enumerate(((0, 1), (1, 2), (2, 0))):
        vals[:, 3 + k] = 4 * lam[:, i] * lam[:, j]
        grads[:, 3 + k] = 4 * (lam[:, i, None] * G[j] + lam[:, j, None] * G[i])
    return vals, grads


class ElementGeometry:
    """Affine maps of a batch of straight-sided triangles."""

    def __init__(self, nodes, triangles, element_ids=None):
        x = nodes[triangles[:, :3]]
        J = np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]], axis=-1)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        if np.any(det <= 0):
            k = int(np.flatnonzero(det <= 0)[0])
            eid = k if element_ids is None else int(element_ids[k])
            raise AssemblyError(f"element {eid} has non-positive Jacobian {det[k]:.3e}", eid)
        inv = np.empty_like(J)
        inv[:, 0, 0], inv[:, 1, 1] = J[:, 1, 1] / det, J[:, 0, 0] / det
        inv[:, 0, 1], inv[:, 1, 0] = -J[:, 0, 1] / det, -J[:, 1, 0] / det
        self.x0 = x[:, 0]
        self.J, self.det, self.inv = J, det, inv

    def __len__(self):
        return len(self.det)

    @property
    def area(self):
        return 0.5 * self.det

    def physical_gradients(self, ref_grads):
        return np.einsum("qna,tab->tqnb", ref_grads, self.inv)

    def map(self, ref_points):
        return self.x0[:, None, :] + np.einsum("tab,qb->tqa", self.J, ref_points)

    def dx(self, rule):
        return self.det[:, None] * rule.weights[None, :]


# --------------------------------------------------------------------------
# spaces and sparse helpers


class NodalSpace:
    """Field carried by the nodes of a subset of elements."""

    def __init__(self, mesh, elements, kind, ncomp):
        self.mesh, self.kind, self.ncomp = mesh, kind, ncomp
        self.elements = np.asarray(elements, int)
        nloc = 6 if kind == "P2" else 3
        conn = mesh.triangles[self.elements, :nloc]
        self.nodes = np.unique(conn)
        self.local = np.full(mesh.n_nodes, -1)
        self.local[self.nodes] = np.arange(len(self.nodes))
        self.conn = self.local[conn]
        self.size = len(self.nodes) * ncomp

    @property
    def n_nodes(self):
        return len(self.nodes)

    def element_dofs(self):
        c = self.ncomp
        return (self.conn[:, :, None] * c + np.arange(c)).reshape(len(self.conn), -1)

    def node_dofs(self, nodes):
        loc = self.local[np.asarray(nodes, int)]
        if np.any(loc < 0):
            raise KeyError("node not in space")
        return (loc[:, None] * self.ncomp + np.arange(self.ncomp)).ravel()

    def nodal(self, values):
        """Full-mesh nodal array (NaN where the field is absent)."""
        out = np.full((self.mesh.n_nodes, self.ncomp), np.nan)
        out[self.nodes] = np.asarray(values).reshape(-1, self.ncomp)
        return out if self.ncomp > 1 else out[:, 0]


def scatter_matrix(rows, cols, vals, shape):
    """Sum duplicate entries of element matrices into a CSR matrix."""
    r = np.broadcast_to(rows[:, :, None], vals.shape).ravel()
    c = np.broadcast_to(cols[:, None, :], vals.shape).ravel()
    return sp.csr_matrix((vals.ravel(), (r, c)), shape=shape)


def scatter_vector(rows, vals, size):
    return np.bincount(rows.ravel(), weights=vals.ravel(), minlength=size)


# --------------------------------------------------------------------------
# Stokes region


@dataclass
class StokesBlocks:
    K_t: sp.csr_matrix
    G_p: sp.csr_matrix
    G_u: sp.csr_matrix
    f_tau: np.ndarray
    f_p: np.ndarray
    f_q: np.ndarray
    f_b: np.ndarray

    def residual(self):
        """``(R_u, R_p)`` with ``R = f_int - f_ext``."""
        return self.f_tau - self.f_p - self.f_b, self.f_q


class StokesOperator:
    """Precomputed kernels for the Stokes terms on a set of elements.

    ``viscous='symmetric'`` integrates ``grad(dw) : tau(D(u))`` with the fluid
    law; ``viscous='gradient'`` integrates ``mu grad(dw) : grad(u)`` (the
    vector-Laplacian form used by the boundary-layer problem).
    """

    def __init__(self, mesh, elements, viscous="symmetric"):
        if viscous not in ("symmetric", "gradient"):
            raise ValueError(viscous)
        self.form = viscous
        self.mesh = mesh
        self.elements = np.asarray(elements, int)
        self.vspace = NodalSpace(mesh, self.elements, "P2", 2)
        self.pspace = NodalSpace(mesh, self.elements, "P1", 1)
        self.geom = ElementGeometry(mesh.nodes, mesh.triangles[self.elements], self.elements)
        t = len(self.elements)
        # 7-point rule: viscous term and loads
        N7, dN7 = shape_functions("P2", TRI7.points)
        g7 = self.geom.physical_gradients(dN7)  # (T,Q,6,2)
        self.dx7 = self.geom.dx(TRI7)
        self.N7 = N7
        self.x7 = self.geom.map(TRI7.points)
        if viscous == "symmetric":
            B = np.zeros((t, len(TRI7), 3, 12))
            B[:, :, 0, 0::2] = g7[..., 0]
            B[:, :, 1, 1::2] = g7[..., 1]
            B[:, :, 2, 0::2] = g7[..., 1] / SQRT2
            B[:, :, 2, 1::2] = g7[..., 0] / SQRT2
        else:
            B = np.zeros((t, len(TRI7), 4, 12))
            B[:, :, 0, 0::2] = g7[..., 0]
            B[:, :, 1, 0::2] = g7[..., 1]
            B[:, :, 2, 1::2] = g7[..., 0]
            B[:, :, 3, 1::2] = g7[..., 1]
        self.B = B
        # 3-point rule: pressure-velocity coupling (degree 2 integrand)
        N3p, _ = shape_functions("P1", TRI3.points)
        _, dN3 = shape_functions("P2", TRI3.points)
        g3 = self.geom.physical_gradients(dN3)
        div = np.zeros((t, len(TRI3), 12))
        div[:, :, 0::2] = g3[..., 0]
        div[:, :, 1::2] = g3[..., 1]
        Ge = np.einsum("tq,qi,tqj->tij", self.geom.dx(TRI3), N3p, div)
        self.vdofs = self.vspace.element_dofs()
        self.pdofs = self.pspace.element_dofs()
        nv, npr = self.vspace.size, self.pspace.size
        self.Ge = Ge
        self.G_u = scatter_matrix(self.pdofs, self.vdofs, Ge, (npr, nv))
        self.G_p = (-self.G_u.T).tocsr()
        self._K_const = None

    def load(self, body_force):
        """``f_b``: consistent nodal load of a constant vector or a callable."""
        nv = self.vspace.size
        if body_force is None:
            return np.zeros(nv)
        if callable(body_force):
            b = np.asarray(body_force(self.x7.reshape(-1, 2))).reshape(self.x7.shape)
        else:
            b = np.broadcast_to(np.asarray(body_force, float), self.x7.shape)
        fe = np.einsum("tq,qi,tqc->tic", self.dx7, self.N7, b).reshape(len(self.elements), 12)
        return scatter_vector(self.vdofs, fe, nv)

    def element_velocities(self, u):
        return np.asarray(u)[self.vdofs]

    def strain(self, u):
        """Mandel strain-rate (or full gradient) at the 7 quadrature points."""
        return np.einsum("tqkj,tj->tqk", self.B, self.element_velocities(u))

    def viscous(self, law, u, need_tangent=True):
        """Internal force ``f_tau`` and tangent ``K_t``."""
        ue = self.element_velocities(u)
        nv = self.vspace.size
        e = np.einsum("tqkj,tj->tqk", self.B, ue)
        if self.form == "gradient" or isinstance(law, Newtonian):
            mu = law.reference_viscosity
            if self._K_const is None or self._K_const[0] != mu:
                Ke = mu * np.einsum("tq,tqki,tqkj->tij", self.dx7, self.B, self.B)
                self._K_const = (mu, Ke, scatter_matrix(self.vdofs, self.vdofs, Ke, (nv, nv)))
            Ke, K = self._K_const[1], self._K_const[2]
            fe = np.einsum("tij,tj->ti", Ke, ue)
            return scatter_vector(self.vdofs, fe, nv), (K if need_tangent else None)
        stress, C = mandel_stress_and_tangent(law, e)
        fe = np.einsum("tq,tqki,tqk->ti", self.dx7, self.B, stress)
        f = scatter_vector(self.vdofs, fe, nv)
        if not need_tangent:
            return f, None
        Ke = np.einsum("tq,tqki,tqkl,tqlj->tij", self.dx7, self.B, C, self.B, optimize=True)
        return f, scatter_matrix(self.vdofs, self.vdofs, Ke, (nv, nv))

    def blocks(self, law, u, p, body_force=None, need_tangent=True):
        f_tau, K = self.viscous(law, u, need_tangent)
        return StokesBlocks(K, self.G_p, self.G_u, f_tau, self.G_u.T @ p,
                            self.G_u @ u, self.load(body_force))


def assemble_stokes_blocks(mesh, elements, law, u, p, body_force=None):
    """One-shot assembly of ``K_t, G_p, G_u, f_tau, f_p, f_q, f_b``."""
    return StokesOperator(mesh, elements).blocks(law, u, p, body_force)


# --------------------------------------------------------------------------
# Darcy region


@dataclass
class DarcyBlocks:
    M: sp.csr_matrix
    K_t: sp.csr_matrix
    G: sp.csr_matrix
    f_q: np.ndarray
    f_u: np.ndarray
    f_w: np.ndarray

    def residual(self):
        return self.f_u - self.f_w, self.f_q


class DarcyOperator:
    """Mixed seepage-velocity / macro-pressure terms on the Darcy elements.

    The homogenized law is evaluated once per element (the pressure gradient
    of a P1 field is element-wise constant), so the caller supplies
    ``wbar`` (T, 2) and its derivative ``dw_dg`` (T, 2, 2) per element.
    """

    def __init__(self, mesh, elements):
        self.mesh = mesh
        self.elements = np.asarray(elements, int)
        if len(self.elements) == 0:
            raise AssemblyError("no Darcy elements")
        self.vspace = NodalSpace(mesh, self.elements, "P2", 2)
        self.pspace = NodalSpace(mesh, self.elements, "P1", 1)
        geom = ElementGeometry(mesh.nodes, mesh.triangles[self.elements], self.elements)
        self.geom = geom
        t = len(self.elements)
        nv, npr = self.vspace.size, self.pspace.size
        self.vdofs = self.vspace.element_dofs()
        self.pdofs = self.pspace.element_dofs()
        N7, _ = shape_functions("P2", TRI7.points)
        dx7 = geom.dx(TRI7)
        m = np.einsum("tq,qi,qj->tij", dx7, N7, N7)
        Me = np.zeros((t, 12, 12))
        Me[:, 0::2, 0::2] = m
        Me[:, 1::2, 1::2] = m
        self.M = scatter_matrix(self.vdofs, self.vdofs, Me, (nv, nv))
        self.phi_int = np.einsum("tq,qi->ti", dx7, N7)  # (T, 6)
        N3p, dP1 = shape_functions("P1", TRI3.points)
        _, dN3 = shape_functions("P2", TRI3.points)
        g3 = geom.physical_gradients(dN3)
        div = np.zeros((t, len(TRI3), 12))
        div[:, :, 0::2] = g3[..., 0]
        div[:, :, 1::2] = g3[..., 1]
        Ge = np.einsum("tq,qi,tqj->tij", geom.dx(TRI3), N3p, div)
        self.G = scatter_matrix(self.pdofs, self.vdofs, Ge, (npr, nv))
        self.p1_grads = geom.physical_gradients(dP1[:1])[:, 0]  # (T, 3, 2)
        self.centroids = mesh.centroids()[self.elements]

    def pressure_gradients(self, pbar):
        return np.einsum("tia,ti->ta", self.p1_grads, np.asarray(pbar)[self.pdofs])

    def blocks(self, wbar, dw_dg, ubar, pbar=None):
        t = len(self.elements)
        nv, npr = self.vspace.size, self.pspace.size
        fwe = np.einsum("ti,tc->tic", self.phi_int, wbar).reshape(t, 12)
        f_w = scatter_vector(self.vdofs, fwe, nv)
        # -int dw . (dwbar/dg) grad(q)
        Kte = -np.einsum("ti,tab,tjb->tiaj", self.phi_int, dw_dg, self.p1_grads).reshape(t, 12, 3)
        K_t = scatter_matrix(self.vdofs, self.pdofs, Kte, (nv, npr))
        return DarcyBlocks(self.M, K_t, self.G, self.G @ ubar, self.M @ ubar, f_w)


def assemble_darcy_blocks(mesh, elements, homogenized_law, ubar, pbar, body_force=(0.0, 0.0)):
    """One-shot Darcy assembly using ``homogenized_law(f) -> (wbar, K)``.

    ``homogenized_law`` maps driving forces ``rho b - grad pbar`` (T, 2) to
    seepage velocities (T, 2) and permeability tangents (T, 2, 2).
    """
    op = DarcyOperator(mesh, elements)
    g = op.pressure_gradients(pbar)
    f = np.asarray(body_force, float) - g
    if homogenized_law is None:
        raise AssemblyError("missing homogenized law for Darcy elements")
    w, K = homogenized_law(f)
    return op.blocks(w, -np.asarray(K), ubar, pbar)


# --------------------------------------------------------------------------
# edges: normals, interface, traction


def edge_owners(mesh, edges, elements=None, missing="raise"):
    """For each edge, the owning triangle (restricted to ``elements``) and
    the opposite vertex.  With ``missing='mask'`` edges without owner get -1."""
    tris = mesh.triangles[:, :3]
    ids = np.arange(len(tris)) if elements is None else np.asarray(elements)
    t = tris[ids]
    n = mesh.n_nodes
    keys, opp, own = [], [], []
    for a, b, c in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        lo, hi = np.minimum(t[:, a], t[:, b]), np.maximum(t[:, a], t[:, b])
        keys.append(lo.astype(np.int64) * n + hi)
        opp.append(t[:, c])
        own.append(ids)
    keys, opp, own = map(np.concatenate, (keys, opp, own))
    order = np.argsort(keys, kind="stable")
    keys, opp, own = keys[order], opp[order], own[order]
    e = np.asarray(edges)
    q = np.minimum(e[:, 0], e[:, 1]).astype(np.int64) * n + np.maximum(e[:, 0], e[:, 1])
    pos = np.searchsorted(keys, q)
    pos = np.minimum(pos, len(keys) - 1)
    found = keys[pos] == q
    if missing == "raise" and not np.all(found):
        raise AssemblyError("edge not owned by any element of the given set")
    return np.where(found, own[pos], -1), np.where(found, opp[pos], -1)


def owned_edges(mesh, edges, elements):
    """Subset of ``edges`` bounding the given element set."""
    e = np.asarray(edges)
    if len(e) == 0:
        return e
    own, _ = edge_owners(mesh, e, elements, missing="mask")
    return e[own >= 0]


def edge_normals(mesh, edges, elements=None):
    """Unit normals pointing out of the element set that owns each edge."""
    e = np.asarray(edges)
    _, opp = edge_owners(mesh, e, elements)
    a, b = mesh.nodes[e[:, 0]], mesh.nodes[e[:, 1]]
    d = b - a
    n = np.c_[d[:, 1], -d[:, 0]] / np.linalg.norm(d, axis=1)[:, None]
    flip = np.einsum("ij,ij->i", n, mesh.nodes[opp] - a) > 0
    n[flip] *= -1
    return n


def node_normals(mesh, edges, normals):
    """Average edge normals onto the edge nodes (vertices and midpoints)."""
    acc = defaultdict(lambda: np.zeros(2))
    for e, n in zip(np.asarray(edges), normals):
        for v in e:
            acc[int(v)] = acc[int(v)] + n
    nodes = np.array(sorted(acc), dtype=int)
    vec = np.array([acc[k] for k in nodes]).reshape(-1, 2)
    return nodes, vec / np.linalg.norm(vec, axis=1)[:, None]


def _edge_shapes(npts=3):
    t, w = gauss_line(npts)
    N2 = np.c_[(1 - t) * (1 - 2 * t), t * (2 * t - 1), 4 * t * (1 - t)]  # a, b, mid
    N1 = np.c_[1 - t, t]
    return w, N2, N1


@dataclass
class InterfaceBlocks:
    M: sp.csr_matrix
    G: sp.csr_matrix
    f_f: np.ndarray
    f_gamma: np.ndarray


def assemble_interface_terms(mesh, edges, normals, beta, vspace, pspace, u=None, pbar=None):
    """BJS friction ``M_Gamma`` and normal pressure coupling ``G_Gamma``.

    ``normals`` point from the Darcy block into the Stokes region, the edge
    tangent is ``t = (-n_y, n_x)``.  ``vspace`` is the Stokes velocity space,
    ``pspace`` the Darcy pressure space.
    """
    if beta < 0:
        raise ValueError("interface friction beta must be non-negative")
    e = np.asarray(edges)
    ne = len(e)
    nv, npr = vspace.size, pspace.size
    if ne == 0:
        z = sp.csr_matrix((nv, npr))
        return InterfaceBlocks(sp.csr_matrix((nv, nv)), z, np.zeros(nv), np.zeros(nv))
    w, N2, N1 = _edge_shapes(3)
    L = np.linalg.norm(mesh.nodes[e[:, 1]] - mesh.nodes[e[:, 0]], axis=1)
    n = np.asarray(normals, float)
    tvec = np.c_[-n[:, 1], n[:, 0]]
    mass = np.einsum("q,qi,qj->ij", w, N2, N2)[None] * L[:, None, None]
    Me = beta * np.einsum("eij,ea,eb->eiajb", mass, tvec, tvec).reshape(ne, 6, 6)
    vd = vspace.node_dofs(e.ravel()).reshape(ne, 6)
    M = scatter_matrix(vd, vd, Me, (nv, nv))
    cpl = np.einsum("q,qi,qj->ij", w, N2, N1)[None] * L[:, None, None]
    Ge = -np.einsum("eij,ea->eiaj", cpl, n).reshape(ne, 6, 2)
    pd = pspace.node_dofs(e[:, :2].ravel()).reshape(ne, 2)
    G = scatter_matrix(vd, pd, Ge, (nv, npr))
    u = np.zeros(nv) if u is None else u
    pbar = np.zeros(npr) if pbar is None else pbar
    return InterfaceBlocks(M, G, M @ u, -(G @ pbar))


def assemble_traction(mesh, edges, normals, value, vspace):
    """``f_t = int dw . (p_hat n) ds`` over the given boundary edges."""
    e = np.asarray(edges)
    if len(e) == 0:
        return np.zeros(vspace.size)
    w, N2, _ = _edge_shapes(3)
    L = np.linalg.norm(mesh.nodes[e[:, 1]] - mesh.nodes[e[:, 0]], axis=1)
    fe = value * np.einsum("q,qi,e,ea->eia", w, N2, L, np.asarray(normals)).reshape(len(e), 6)
    vd = vspace.node_dofs(e.ravel()).reshape(len(e), 6)
    return scatter_vector(vd, fe, vspace.size)


# --------------------------------------------------------------------------
# degrees of freedom and constraints


class DofMap:
    """Concatenation of field spaces into one global unknown vector."""

    def __init__(self):
        self.fields = {}
        self.size = 0

    def add(self, name, space):
        self.fields[name] = (space, self.size)
        self.size += space.size
        return self

    def space(self, name):
        return self.fields[name][0]

    def slice(self, name):
        space, off = self.fields[name]
        return slice(off, off + space.size)

    def node_dofs(self, name, nodes):
        space, off = self.fields[name]
        return off + space.node_dofs(nodes)

    def split(self, x):
        return {k: x[self.slice(k)] for k in self.fields}


@dataclass
class Constraints:
    """``x = P y + lift``: full unknowns from the reduced (free) ones."""

    P: sp.csr_matrix
    lift: np.ndarray
    PT: sp.csr_matrix = field(init=False, repr=False)

    def __post_init__(self):
        self.PT = self.P.T.tocsr()

    @property
    def n_free(self):
        return self.P.shape[1]

    def expand(self, y):
        return self.P @ y + self.lift

    def reduce_vector(self, r):
        return self.PT @ r

    def reduce_matrix(self, A):
        return (self.PT @ A @ self.P).tocsc()

    def restrict(self, x):
        """Least-squares reduced coordinates of a full vector (P has
        orthonormal columns up to periodic multiplicity)."""
        d = np.asarray(self.PT.multiply(self.PT).sum(axis=1)).ravel()
        return (self.PT @ (x - self.lift)) / np.where(d > 0, d, 1.0)


class ConstraintBuilder:
    """Collects Dirichlet, normal (slip), periodic, tie and pin constraints.

    Velocity constraints are rows ``a . u_node = c``.  Nodes of one periodic
    class share their unknowns.  A *tie* expresses a node of one vector field
    as ``T @ u`` of a node of another field (used for the interface, where
    the seepage velocity equals the normal part of the Stokes velocity).
    """

    def __init__(self, dofmap):
        self.dofmap = dofmap
        self.rows = defaultdict(list)  # (field, node) -> [(a, c)]
        self.fixed = {}  # (field, node) -> value, scalar fields
        self.pairs = defaultdict(list)  # field -> [(master, slave)]
        self.ties = {}  # (dst_field, node) -> (src_field, src_node, T)

    def dirichlet(self, name, nodes, values):
        nodes = np.atleast_1d(np.asarray(nodes, int))
        values = np.broadcast_to(np.asarray(values, float), (len(nodes), 2))
        for k, v in zip(nodes, values):
            self.rows[(name, int(k))] += [(np.array([1.0, 0.0]), v[0]), (np.array([0.0, 1.0]), v[1])]
        return self

    def normal(self, name, nodes, normals, values=0.0):
        nodes = np.atleast_1d(np.asarray(nodes, int))
        normals = np.broadcast_to(np.asarray(normals, float), (len(nodes), 2))
        values = np.broadcast_to(np.asarray(values, float), (len(nodes),))
        for k, n, v in zip(nodes, normals, values):
            self.rows[(name, int(k))].append((np.array(n, float), float(v)))
        return self

    def fix(self, name, nodes, values=0.0):
        nodes = np.atleast_1d(np.asarray(nodes, int))
        values = np.broadcast_to(np.asarray(values, float), (len(nodes),))
        for k, v in zip(nodes, values):
            self.fixed[(name, int(k))] = float(v)
        return self

    def periodic(self, name, pairs):
        self.pairs[name] += [tuple(map(int, p)) for p in np.asarray(pairs).reshape(-1, 2)]
        return self

    def tie(self, dst, src, nodes, matrices):
        nodes = np.atleast_1d(np.asarray(nodes, int))
        for k, T in zip(nodes, np.asarray(matrices, float).reshape(-1, 2, 2)):
            self.ties[(dst, int(k))] = (src, int(k), T)
        return self

    # ------------------------------------------------------------------
    def _classes(self, name, space):
        parent = np.arange(space.n_nodes)

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for a, b in self.pairs.get(name, ()):
            la, lb = space.local[a], space.local[b]
            if la < 0 or lb < 0:
                continue
            ra, rb = find(la), find(lb)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
        return np.array([find(i) for i in range(space.n_nodes)]) if self.pairs.get(name) else parent

    def build(self, tol=1e-12):
        rows, cols, vals = [], [], []
        lift = np.zeros(self.dofmap.size)
        ncol = 0
        node_maps = {}  # (field, node) -> (dof indices (2,), Z cols, Z (2,k), u0)
        deferred = []
        for name, (space, off) in self.dofmap.fields.items():
            rep = self._classes(name, space)
            if space.ncomp == 1:
                col_of, class_fixed = {}, {}
                for li, node in enumerate(space.nodes):
                    v = self.fixed.get((name, int(node)))
                    if v is not None:
                        class_fixed[rep[li]] = v
                for li, node in enumerate(space.nodes):
                    r = rep[li]
                    val = class_fixed.get(r)
                    if val is not None:
                        lift[off + li] = val
                        continue
                    if r not in col_of:
                        col_of[r] = ncol
                        ncol += 1
                    rows.append(off + li)
                    cols.append(col_of[r])
                    vals.append(1.0)
                continue
            # vector field: gather constraint rows per class
            class_rows = defaultdict(list)
            for li, node in enumerate(space.nodes):
                class_rows[rep[li]] += self.rows.get((name, int(node)), [])
            class_basis = {}
            for li, node in enumerate(space.nodes):
                key = (name, int(node))
                if key in self.ties:
                    deferred.append((key, off + 2 * li))
                    continue
                r = rep[li]
                if r not in class_basis:
                    cons = class_rows[r]
                    if not cons:
                        Z, u0 = np.eye(2), np.zeros(2)
                    else:
                        A = np.array([a for a, _ in cons])
                        c = np.array([v for _, v in cons])
                        u0, *_ = np.linalg.lstsq(A, c, rcond=None)
                        if np.linalg.norm(A @ u0 - c) > 1e-9 * (1 + np.linalg.norm(c)):
                            raise ConstraintError(
                                f"over-constrained velocity at node {node} of field {name!r}")
                        _, s, vt = np.linalg.svd(A)
                        rank = int(np.sum(s > 1e-10 * s[0]))
                        Z = vt[rank:].T
                    cols_r = np.arange(ncol, ncol + Z.shape[1])
                    ncol += Z.shape[1]
                    class_basis[r] = (cols_r, Z, u0)
                cols_r, Z, u0 = class_basis[r]
                d = off + 2 * li
                for comp in range(2):
                    for k, cidx in enumerate(cols_r):
                        if Z[comp, k] != 0.0:
                            rows.append(d + comp)
                            cols.append(cidx)
                            vals.append(Z[comp, k])
                    lift[d + comp] = u0[comp]
                node_maps[key] = (cols_r, Z, u0)
        for (key, d) in deferred:
            src_name, src_node, T = self.ties[key]
            if (src_name, src_node) not in node_maps:
                raise ConstraintError(f"tie source {src_name}:{src_node} is not a free node")
            cols_r, Z, u0 = node_maps[(src_name, src_node)]
            TZ, Tu0 = T @ Z, T @ u0
            for a, c in self.rows.get(key, []):
                if np.any(np.abs(a @ TZ) > 1e-9) or abs(a @ Tu0 - c) > 1e-9:
                    raise ConstraintError(f"tied node {key} violates its own constraint")
            for comp in range(2):
                for k, cidx in enumerate(cols_r):
                    if abs(TZ[comp, k]) > tol:
                        rows.append(d + comp)
                        cols.append(cidx)
                        vals.append(TZ[comp, k])
                lift[d + comp] = Tu0[comp]
        P = sp.csr_matrix((vals, (rows, cols)), shape=(self.dofmap.size, ncol))
        return Constraints(P, lift)


def apply_constraints(A, b, constraints):
    """Reduce ``A x = b`` to the free unknowns (Dirichlet lift moved right)."""
    return constraints.reduce_matrix(A), constraints.reduce_vector(b - A @ constraints.lift)


def tangent_of(normal):
    n = np.asarray(normal, float)
    return np.stack([-n[..., 1], n[..., 0]], axis=-1)


__all__ = [
    "QuadratureRule", "TRI3", "TRI7", "collapsed_gauss_rule", "gauss_line",
    "shape_functions", "ElementGeometry", "NodalSpace", "StokesOperator",
    "StokesBlocks", "assemble_stokes_blocks", "DarcyOperator", "DarcyBlocks",
    "assemble_darcy_blocks", "assemble_interface_terms", "assemble_traction",
    "edge_normals", "owned_edges", "node_normals", "DofMap", "Constraints", "ConstraintBuilder",
    "apply_constraints", "tangent_of",
]
