"""Deviatoric stress laws and their consistent tangents.

Tensors are plain numpy arrays with trailing shape ``(2, 2)``; any leading
batch shape is allowed, so the same functions serve a single state and all
quadrature points of a mesh.  Fourth-order tangents have trailing shape
``(2, 2, 2, 2)``.  Inside the assembly loops the symmetric tensors are
handled in Mandel coordinates ``(a11, a22, sqrt(2) a12)`` where the tangent
is an ordinary symmetric 3x3 matrix.
"""
from dataclasses import dataclass
import math

import numpy as np

# Below this value of sqrt(J2) the apparent viscosity uses its series.
EPS_REG = 1e-12

SQRT2 = math.sqrt(2.0)
_I2 = np.eye(2)


@dataclass(frozen=True)
class Newtonian:
    mu: float

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("viscosity mu must be positive")

    @property
    def reference_viscosity(self):
        return self.mu

    def apparent_viscosity(self, s):
        s = np.asarray(s, float)
        return np.full(s.shape, self.mu), np.zeros(s.shape)


@dataclass(frozen=True)
class Bingham:
    """Papanastasiou-regularized Bingham fluid.

    ``mu0`` plastic viscosity, ``tau0`` yield stress, ``m`` regularization.
    """

    mu0: float
    tau0: float
    m: float

    def __post_init__(self):
        if not self.mu0 > 0:
            raise ValueError("plastic viscosity mu0 must be positive")
        if self.tau0 < 0:
            raise ValueError("yield stress tau0 must be non-negative")
        if not self.m > 0:
            raise ValueError("regularization parameter m must be positive")

    @property
    def reference_viscosity(self):
        return self.mu0

    def apparent_viscosity(self, s):
        """Return ``(mu_app, dmu_app/dJ2)`` as functions of ``s = sqrt(J2)``.

        Both factors stay finite as ``s -> 0``; the second one is only ever
        used multiplied by ``D (x) D`` which is O(s^2).
        """
        s = np.asarray(s, float)
        m, tau0 = self.m, self.tau0
        x = m * s
        small = s < EPS_REG
        ss = np.where(small, 1.0, s)
        # g(s) = (1 - exp(-ms)) / s
        g = np.where(small, m - 0.5 * m * x + m * x * x / 6.0, -np.expm1(-x) / ss)
        # h(x) = (x + 1) exp(-x) - 1, evaluated without cancellation near 0
        hs = -(x**2 / 2 - x**3 / 3 + x**4 / 8 - x**5 / 30 + x**6 / 144)
        h = np.where(x < 1e-2, hs, (x + 1.0) * np.exp(-x) - 1.0)
        # dmu/dJ2 = tau0 h / (2 s^3); series -tau0 m^2 (1/2 - x/3 + x^2/8) / (2 s)
        dmu = np.where(
            small,
            -tau0 * m * m * (0.5 - x / 3.0 + x * x / 8.0) / (2.0 * ss),
            tau0 * h / (2.0 * ss**3),
        )
        dmu = np.where(s == 0.0, 0.0, dmu)
        return self.mu0 + tau0 * g, dmu


def j2(D):
    """Second invariant ``1/2 D:D``."""
    D = np.asarray(D, float)
    return 0.5 * np.einsum("...ij,...ij->...", D, D)


def deviatoric_stress(law, D):
    D = np.asarray(D, float)
    mu, _ = law.apparent_viscosity(np.sqrt(j2(D)))
    return mu[..., None, None] * D


def identity_sym():
    """Fourth-order identity on symmetric tensors (minor and major symmetric)."""
    d = _I2
    return 0.5 * (np.einsum("ik,jl->ijkl", d, d) + np.einsum("il,jk->ijkl", d, d))


def tangent(law, D):
    """``d tau / d D = mu_app I_sym + mu_app' D (x) D``."""
    D = np.asarray(D, float)
    mu, dmu = law.apparent_viscosity(np.sqrt(j2(D)))
    return (mu[..., None, None, None, None] * identity_sym()
            + dmu[..., None, None, None, None] * np.einsum("...ij,...kl->...ijkl", D, D))


def deviatoric_projector():
    """``delta_ik delta_jl - 1/3 delta_ij delta_kl`` in two dimensions."""
    d = _I2
    return np.einsum("ik,jl->ijkl", d, d) - np.einsum("ij,kl->ijkl", d, d) / 3.0


def contract(C, A):
    """``(C : A)_ij = C_ijkl A_kl``."""
    return np.einsum("...ijkl,...kl->...ij", C, A)


def to_mandel(A):
    A = np.asarray(A, float)
    return np.stack([A[..., 0, 0], A[..., 1, 1], SQRT2 * A[..., 0, 1]], axis=-1)


def from_mandel(v):
    v = np.asarray(v, float)
    off = v[..., 2] / SQRT2
    return np.stack([np.stack([v[..., 0], off], -1), np.stack([off, v[..., 1]], -1)], -2)


def mandel_stress_and_tangent(law, e):
    """Stress and tangent for Mandel strain vectors ``e`` of shape (..., 3).

    This is the hot path of assembly.  In Mandel coordinates
    ``J2 = |e|^2 / 2``, ``D (x) D`` becomes ``e e^T`` and the tangent is
    ``mu_app I3 + mu_app' e e^T``.
    """
    s2 = 0.5 * np.einsum("...i,...i->...", e, e)
    mu, dmu = law.apparent_viscosity(np.sqrt(s2))
    stress = mu[..., None] * e
    C = mu[..., None, None] * np.eye(3) + dmu[..., None, None] * e[..., :, None] * e[..., None, :]
    return stress, C
