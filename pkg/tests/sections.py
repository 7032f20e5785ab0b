"""Exact line integrals of FE velocity fields across vertical sections."""
import numpy as np

from reinflow.fem import gauss_line


def section_flux(fields, x, y0, y1, n_gauss=4):
    """``int u_x dy`` along ``x = const``, split at every element edge crossing
    so that the integrand is a polynomial on each piece."""
    mesh = fields.mesh
    tri = mesh.triangles[:, :3]
    e = np.vstack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    a, b = mesh.nodes[e[:, 0]], mesh.nodes[e[:, 1]]
    cross = (a[:, 0] - x) * (b[:, 0] - x) <= 0
    a, b = a[cross], b[cross]
    dx = b[:, 0] - a[:, 0]
    t = np.where(np.abs(dx) > 0, (x - a[:, 0]) / np.where(dx == 0, 1, dx), 0.0)
    ys = np.r_[a[:, 1] + t * (b[:, 1] - a[:, 1]), a[dx == 0, 1], b[dx == 0, 1], y0, y1]
    if len(mesh.obstacles):
        c = mesh.obstacles
        hit = np.abs(c[:, 0] - x) < c[:, 2]
        h = np.sqrt(c[hit, 2] ** 2 - (c[hit, 0] - x) ** 2)
        ys = np.r_[ys, c[hit, 1] - h, c[hit, 1] + h]
    ys = np.unique(np.clip(ys, y0, y1))
    s, w = gauss_line(n_gauss)
    lo, hi = ys[:-1], ys[1:]
    pts_y = (lo[:, None] + (hi - lo)[:, None] * s).ravel()
    wts = ((hi - lo)[:, None] * w).ravel()
    v = fields.velocity(np.c_[np.full(len(pts_y), x), pts_y])[:, 0]
    return float(np.dot(wts, np.nan_to_num(v)))


def weak_section_flux(fields, x):
    """Discrete flux ``-int u . grad(phi)`` with ``phi`` the P1 function equal
    to 1 at vertices left of ``x`` and 0 elsewhere.

    The Taylor-Hood divergence equation holds for every P1 test function,
    so this flux is conserved exactly (the pointwise one only to O(h^2)).
    """
    from reinflow.fem import TRI7, ElementGeometry, shape_functions
    mesh = fields.mesh
    phi = (mesh.nodes[:, 0] < x).astype(float)
    total = 0.0
    for els, vel in ((fields.fluid_elements, fields.u), (fields.darcy_elements, fields.ubar)):
        if len(els) == 0:
            continue
        tri = mesh.triangles[els]
        geom = ElementGeometry(mesh.nodes, tri)
        _, dP1 = shape_functions("P1", TRI7.points[:1])
        grad = np.einsum("tia,ti->ta", geom.physical_gradients(dP1)[:, 0], phi[tri[:, :3]])
        N, _ = shape_functions("P2", TRI7.points)
        integ = np.einsum("tq,qi,tic->tc", geom.dx(TRI7), N, vel[tri])
        total -= np.einsum("tc,tc->", integ, grad)
    return float(total)
