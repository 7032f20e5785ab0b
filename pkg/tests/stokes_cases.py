"""Small Stokes problems with closed-form solutions, shared by the tests."""
import numpy as np
import scipy.sparse as sp
from numpy.polynomial import Polynomial

from reinflow.constitutive import Newtonian
from reinflow.fem import (ConstraintBuilder, DofMap, StokesOperator, collapsed_gauss_rule,
                          shape_functions)
from reinflow.linsolve import factorize, solve
from reinflow.mesh import generate_rectangle_mesh

# stream function psi = a(x) a(y) with a(t) = t^2 (1 - t)^2: divergence free,
# velocity and its normal derivative vanish on the unit square boundary
_A = Polynomial([0, 0, 1]) * Polynomial([1, -1]) ** 2
_DA = [_A.deriv(k) for k in range(4)]


def mms_velocity(x):
    X, Y = x[:, 0], x[:, 1]
    a, da = _DA[0], _DA[1]
    return np.c_[a(X) * da(Y), -da(X) * a(Y)]


def mms_pressure(x):
    return np.cos(np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1])


def mms_force(mu):
    a, d1, d2, d3 = _DA

    def f(x):
        X, Y = x[:, 0], x[:, 1]
        lap_ux = d2(X) * d1(Y) + a(X) * d3(Y)
        lap_uy = -(d3(X) * a(Y) + d1(X) * d2(Y))
        gx = -np.pi * np.sin(np.pi * X) * np.cos(np.pi * Y)
        gy = -np.pi * np.cos(np.pi * X) * np.sin(np.pi * Y)
        return np.c_[-0.5 * mu * lap_ux + gx, -0.5 * mu * lap_uy + gy]

    return f


def solve_linear_stokes(mesh, law, dirichlet, pin_node, pin_value, body_force=None):
    """One linear solve with Dirichlet velocity on the whole boundary."""
    op = StokesOperator(mesh, np.arange(mesh.n_triangles))
    dm = DofMap().add("u", op.vspace).add("p", op.pspace)
    bn = np.unique(mesh.edges.ravel())
    cb = ConstraintBuilder(dm).dirichlet("u", bn, dirichlet(mesh.nodes[bn]))
    cb.fix("p", [pin_node], pin_value)
    C = cb.build()
    nv = op.vspace.size
    x = C.lift.copy()
    b = op.blocks(law, x[:nv], x[nv:], body_force)
    r = np.r_[b.residual()]
    J = sp.bmat([[b.K_t, b.G_p], [b.G_u, None]]).tocsr()
    x = x + C.P @ solve(factorize(C.reduce_matrix(J)), -C.reduce_vector(r))
    return op, op.vspace.nodal(x[:nv]), op.pspace.nodal(x[nv:])


def l2_errors(op, u, p, u_exact, p_exact, n_gauss=6):
    """L2 norms of the velocity and (mean-free) pressure errors."""
    rule = collapsed_gauss_rule(n_gauss)
    mesh = op.mesh
    tri = mesh.triangles
    Nu, _ = shape_functions("P2", rule.points)
    Np, _ = shape_functions("P1", rule.points)
    xq = op.geom.map(rule.points)
    dx = op.geom.dx(rule)
    uh = np.einsum("qi,tic->tqc", Nu, u[tri])
    ph = np.einsum("qi,ti->tq", Np, p[tri[:, :3]])
    ue = u_exact(xq.reshape(-1, 2)).reshape(uh.shape)
    pe = p_exact(xq.reshape(-1, 2)).reshape(ph.shape)
    area = dx.sum()
    ep = ph - pe
    ep = ep - (dx * ep).sum() / area
    return (np.sqrt((dx * ((uh - ue) ** 2).sum(-1)).sum()),
            np.sqrt((dx * ep**2).sum()))


def mms_errors(n, mu=1.0):
    mesh = generate_rectangle_mesh(1.0, 1.0, 1.0 / n)
    law = Newtonian(mu)
    corner = 0
    op, u, p = solve_linear_stokes(mesh, law, mms_velocity, corner,
                                   mms_pressure(mesh.nodes[[corner]])[0], mms_force(mu))
    return l2_errors(op, u, p, mms_velocity, mms_pressure)


def poiseuille(mu=1.0, width=2.0, h=0.2):
    """u = (y (1 - y), 0), p = -mu x in a unit-height channel."""
    mesh = generate_rectangle_mesh(width, 1.0, h)
    law = Newtonian(mu)
    op, u, p = solve_linear_stokes(
        mesh, law, lambda x: np.c_[x[:, 1] * (1 - x[:, 1]), 0 * x[:, 0]],
        0, -mu * mesh.nodes[0, 0])
    return mesh, u, p
