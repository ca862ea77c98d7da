"""Periodic P1 finite elements for the 1D Poisson problem.

Everything the particle push needs from the grid lives here:

* hat-function evaluation at particle positions (values and derivatives),
* charge deposition with a neutralizing background,
* the singular periodic stiffness matrix together with a zero-mean solve,
* electric energy, per-particle electric field, and the discrete Hamiltonian.

Positions are unbounded reals; all grid lookups wrap periodically. Particle
arrays may be a single column ``(N,)`` or a parameter batch ``(N, p)``; every
routine broadcasts over the trailing parameter axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import ConfigurationError, EvaluationError

__all__ = [
    "PeriodicMesh",
    "ChargeConfig",
    "BasisTable",
    "build_mesh",
    "eval_basis",
    "eval_basis_grad",
    "eval_basis_pair",
    "deposit_charge",
    "PoissonOperator",
    "electric_energy",
    "field_at_particles",
    "hamiltonian",
]


@dataclass(frozen=True)
class PeriodicMesh:
    """Uniform periodic grid on [0, length) with num_cells nodes (= cells)."""

    length: float
    num_cells: int

    def __post_init__(self):
        if not (self.length > 0.0 and np.isfinite(self.length)):
            raise ConfigurationError(f"mesh length must be positive, got {self.length}")
        if self.num_cells < 2:
            raise ConfigurationError(f"need at least 2 cells, got {self.num_cells}")

    @property
    def h(self):
        return self.length / self.num_cells

    @property
    def nodes(self):
        return self.h * np.arange(self.num_cells)


def build_mesh(length, num_cells):
    return PeriodicMesh(float(length), int(num_cells))


@dataclass(frozen=True)
class ChargeConfig:
    """Macro-particle species data.

    The weight makes the total particle charge cancel the constant background
    exactly: q * N * weight + background * length = 0.
    """

    num_particles: int
    length: float
    charge: float = -1.0
    mass: float = 1.0
    background: float = 1.0

    def __post_init__(self):
        if self.num_particles < 1:
            raise ConfigurationError("need at least one particle")
        if self.charge == 0.0 or self.mass <= 0.0:
            raise ConfigurationError("charge must be nonzero and mass positive")

    @property
    def weight(self):
        return -self.background * self.length / (self.charge * self.num_particles)

    @property
    def charge_weight(self):
        """q * weight, the charge carried per macro-particle."""
        return self.charge * self.weight

    @property
    def particle_mass(self):
        """m * weight, the inertia entering the field coefficients."""
        return self.mass * self.weight


def _check_finite(x):
    if np.isfinite(x).all():
        return
    first = tuple(int(i) for i in np.argwhere(~np.isfinite(x))[0])
    raise EvaluationError(f"non-finite particle position at index {first}", index=first)


def _locate(mesh, x):
    """Containing cell (left node id) and in-cell fraction for each position."""
    x = np.asarray(x, dtype=float)
    _check_finite(x)
    s = x / mesh.h
    cell = np.floor(s)
    frac = s - cell
    i0 = cell.astype(np.int64) % mesh.num_cells
    return i0, frac


@dataclass(frozen=True)
class BasisTable:
    """Sparse row table of hat-function data at particle positions.

    Each row holds two entries: (w0 at node i0, w1 at node i0 + 1 mod N_x).
    kind "value" gives the partition-of-unity rows, kind "gradient" the
    derivative rows (constant -1/h, +1/h; on a node the right cell is used).
    """

    mesh: PeriodicMesh
    kind: str
    i0: np.ndarray
    w0: np.ndarray
    w1: np.ndarray

    @property
    def i1(self):
        return (self.i0 + 1) % self.mesh.num_cells

    def matvec(self, phi):
        """Row-wise application: values of sum_i phi_i lambda_i at the particles.

        phi may be (N_x,) against positions of any shape, or (N_x, p) against
        (N, p) positions (columnwise pairing).
        """
        phi = np.asarray(phi, dtype=float)
        if phi.ndim == 1:
            return self.w0 * phi[self.i0] + self.w1 * phi[self.i1]
        a = np.take_along_axis(phi, self.i0, axis=0)
        b = np.take_along_axis(phi, self.i1, axis=0)
        return self.w0 * a + self.w1 * b

    def rmatvec(self, y):
        """Transpose application: accumulate particle values y onto the nodes."""
        y = np.asarray(y, dtype=float)
        nx = self.mesh.num_cells
        if self.i0.ndim == 1:
            out = np.bincount(self.i0, weights=self.w0 * y, minlength=nx)
            out += np.bincount(self.i1, weights=self.w1 * y, minlength=nx)
            return out
        n, p = self.i0.shape
        # one flat bincount across the parameter batch: column j owns [j*nx, (j+1)*nx)
        col = np.broadcast_to(np.arange(p, dtype=np.int64) * nx, (n, p))
        flat0 = (self.i0 + col).ravel()
        flat1 = (self.i1 + col).ravel()
        out = np.bincount(flat0, weights=(self.w0 * y).ravel(), minlength=nx * p)
        out += np.bincount(flat1, weights=(self.w1 * y).ravel(), minlength=nx * p)
        return out.reshape(p, nx).T

    def toarray(self):
        """Dense (N, N_x) matrix; single-column tables only (test helper)."""
        if self.i0.ndim != 1:
            raise ConfigurationError("dense form only supported for 1D position arrays")
        out = np.zeros((self.i0.size, self.mesh.num_cells))
        rows = np.arange(self.i0.size)
        np.add.at(out, (rows, self.i0), self.w0)
        np.add.at(out, (rows, self.i1), self.w1)
        return out


def eval_basis(mesh, x):
    """Hat-function values at positions x: rows sum to one."""
    i0, frac = _locate(mesh, x)
    return BasisTable(mesh, "value", i0, 1.0 - frac, frac)


def eval_basis_grad(mesh, x):
    """Hat-function derivatives at positions x: rows (-1/h, +1/h)."""
    i0, frac = _locate(mesh, x)
    g = 1.0 / mesh.h
    shape = np.shape(frac)
    return BasisTable(mesh, "gradient", i0, np.full(shape, -g), np.full(shape, g))


def eval_basis_pair(mesh, x):
    """Value and gradient tables from a single grid lookup."""
    i0, frac = _locate(mesh, x)
    g = 1.0 / mesh.h
    shape = np.shape(frac)
    value = BasisTable(mesh, "value", i0, 1.0 - frac, frac)
    grad = BasisTable(mesh, "gradient", i0, np.full(shape, -g), np.full(shape, g))
    return value, grad


def deposit_charge(basis, charge):
    """Nodal charge density: basis^T (q w 1) plus the neutralizing background.

    The background contributes background * h per node and cancels the mean of
    the particle term exactly (by the weight normalization), so the result is
    mean-free to round-off.
    """
    if basis.kind != "value":
        raise ConfigurationError("deposition needs a value table, not a gradient table")
    shape = basis.i0.shape
    rho = basis.rmatvec(np.full(shape, charge.charge_weight))
    rho += charge.background * basis.mesh.h
    return rho


class PoissonOperator:
    """Periodic P1 stiffness matrix with a prefactorized zero-mean solver.

    The stiffness matrix is circulant tridiagonal (2/h on the diagonal, -1/h on
    the off-diagonals and corners) and annihilates constants. Solving adds the
    rank-one term ones ones^T / length, which is SPD on the whole space and
    agrees with the stiffness on mean-free vectors; the factorization is done
    once and reused for every right-hand side.
    """

    def __init__(self, mesh):
        self.mesh = mesh
        nx, h = mesh.num_cells, mesh.h
        L = np.zeros((nx, nx))
        idx = np.arange(nx)
        L[idx, idx] = 2.0 / h
        L[idx, (idx + 1) % nx] = -1.0 / h
        L[idx, (idx - 1) % nx] = -1.0 / h
        self.stiffness = L
        self._cho = cho_factor(L + np.ones((nx, nx)) / mesh.length)

    def solve(self, rho):
        """Zero-mean potential solving stiffness @ phi = rho - mean(rho)."""
        rho = np.asarray(rho, dtype=float)
        b = rho - rho.mean(axis=0, keepdims=True)
        phi = cho_solve(self._cho, b)
        return phi - phi.mean(axis=0, keepdims=True)


def electric_energy(poisson, phi, charge):
    """Field energy (1 / (2 m_p)) phi^T L phi, per potential column."""
    phi = np.asarray(phi, dtype=float)
    lphi = poisson.stiffness @ phi
    return 0.5 / charge.particle_mass * np.einsum("i...,i...->...", phi, lphi)


def field_at_particles(grad, phi, charge):
    """Electric force term -(1/m_p) (q w) d/dx sum_i phi_i lambda_i at the particles."""
    return -(charge.charge_weight / charge.particle_mass) * grad.matvec(phi)


def hamiltonian(x, v, poisson, charge):
    """Discrete energy 0.5 v^T v + field energy of the self-consistent potential.

    Returns a scalar for (N,) input, a length-p vector for (N, p) input.
    """
    v = np.asarray(v, dtype=float)
    kinetic = 0.5 * np.einsum("i...,i...->...", v, v)
    rho = deposit_charge(eval_basis(poisson.mesh, x), charge)
    phi = poisson.solve(rho)
    return kinetic + electric_energy(poisson, phi, charge)
