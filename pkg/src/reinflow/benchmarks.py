"""Preset scenarios for the two channel benchmarks.

Benchmark 1 forces the whole flow through the bars: a 4 x 4 block of unit
cells fills the channel height.  Benchmark 2 places the block in the middle
of a wider channel so that the fluid can also pass around it; the rotated
variant turns the block by 30 degrees about its center.
"""
import math

from .constitutive import Bingham, Newtonian
from .macro import Scenario
from .mesh import ObstacleGrid

# channel and block placement
BENCH1_BOX = (10.0, 4.0)
BENCH1_ORIGIN = (3.0, 0.0)
BENCH2_BOX = (12.0, 8.0)
BENCH2_ORIGIN = (4.0, 2.0)
ROTATION = math.pi / 6

# discretization: (mesh_h, cell_h or darcy_divisions)
DNS_MESH = {"bench1": (0.2, 0.1), "bench2": (0.15, 0.05)}
HOM_MESH = {"bench1": (0.5, 1), "bench2": (0.82, 1)}


def newtonian(mu=20.0):
    return Newtonian(mu)


def bingham(mu0=20.0, tau0=20.0, m=15.0):
    return Bingham(mu0, tau0, m)


def _discretization(mode, name, mesh_h=None, refine=None):
    if mode == "dns":
        h, ch = DNS_MESH[name]
        return {"mesh_h": mesh_h or h, "cell_h": refine or ch}
    h, dd = HOM_MESH[name]
    return {"mesh_h": mesh_h or h, "darcy_divisions": refine or dd}


def benchmark1(mode="dns", law=None, beta=0.0, mesh_h=None, refine=None, **kw):
    """Unidirectional flow through a 4 x 4 block of bars (radius 0.25)."""
    grid = ObstacleGrid(4, 4, 1.0, 0.25, BENCH1_ORIGIN)
    return Scenario(mode=mode, width=BENCH1_BOX[0], height=BENCH1_BOX[1], grid=grid,
                    law=law or Newtonian(1.0), beta=beta,
                    **_discretization(mode, "bench1", mesh_h, refine), **kw)


def benchmark2(mode="dns", xi=0.125, law=None, beta=0.0, rotated=False, mesh_h=None,
               refine=None, **kw):
    """Flow over (and through) a 4 x 4 block in the middle of the channel."""
    grid = ObstacleGrid(4, 4, 1.0, xi, BENCH2_ORIGIN, ROTATION if rotated else 0.0)
    return Scenario(mode=mode, width=BENCH2_BOX[0], height=BENCH2_BOX[1], grid=grid,
                    law=law or Newtonian(20.0), beta=beta,
                    **_discretization(mode, "bench2", mesh_h, refine), **kw)


def pair(scenario):
    """The DNS and homogenized versions of a preset scenario."""
    name = "bench1" if scenario.height == BENCH1_BOX[1] else "bench2"
    dns = scenario.with_(mode="dns", **_discretization("dns", name))
    hom = scenario.with_(mode="homogenized", **_discretization("homogenized", name))
    return dns, hom
