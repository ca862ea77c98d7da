"""Dynamical ortho-symplectic reduced basis for particle ensembles.

The reduced state is a pair (U, Z): U a 2N x n ortho-symplectic basis of
phase space, Z an n x p coefficient matrix over the parameter columns. U is
initialized from a complex SVD of the starting snapshots and evolved along the
manifold with a tangent-space velocity field and a Cayley retraction kept in
low-rank form (never a 2N x 2N matrix). Z follows the reduced Hamiltonian
flow. One time step couples the two with a two-stage partitioned Runge-Kutta
scheme: explicit midpoint for the basis, implicit midpoint for the
coefficients against the frozen half-step basis.

The canonical structure matrices J never appear explicitly; all J products are
block swaps.
"""

from __future__ import annotations

import warnings
from contextlib import nullcontext
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigvalsh, svd

from .errors import ConfigurationError, StepFailureError

__all__ = [
    "jmul",
    "jrmul",
    "complex_svd_basis",
    "reconstruct",
    "orthosymplectic_residuals",
    "SMatrix",
    "select_parameter_subset",
    "basis_velocity",
    "retraction",
    "tangent_velocity",
    "fixed_point",
    "prk2_step",
    "PRKResult",
]


def jmul(m):
    """J @ m for the canonical J = [[0, I], [-I, 0]] of matching even size."""
    half = m.shape[0] // 2
    return np.concatenate([m[half:], -m[:half]], axis=0)


def jrmul(m):
    """m @ J for the canonical J of size m.shape[1]."""
    half = m.shape[1] // 2
    return np.concatenate([-m[:, half:], m[:, :half]], axis=1)


def complex_svd_basis(x, v, n):
    """Ortho-symplectic basis of rank n from snapshots via the complex SVD.

    The leading n/2 left singular vectors of x + i v, split into real and
    imaginary parts (Phi, Psi), give U = [[Phi, -Psi], [Psi, Phi]], which is
    orthonormal and symplectic by construction. Returns (U, Z) with
    Z = U^T [x; v].
    """
    x = np.atleast_2d(np.asarray(x, dtype=float).T).T
    v = np.atleast_2d(np.asarray(v, dtype=float).T).T
    if n % 2 or n < 2:
        raise ConfigurationError(f"basis dimension must be even and >= 2, got {n}")
    half = n // 2
    if half > min(x.shape):
        raise ConfigurationError(f"rank {half} complex basis needs at least {half} snapshots")
    uc, _, _ = svd(x + 1j * v, full_matrices=False)
    phi, psi = uc[:, :half].real, uc[:, :half].imag
    u = np.block([[phi, -psi], [psi, phi]])
    bign = x.shape[0]
    z = u[:bign].T @ x + u[bign:].T @ v
    return u, z


def reconstruct(u, z):
    """Split the reconstruction U Z back into positions and velocities."""
    half = u.shape[0] // 2
    return u[:half] @ z, u[half:] @ z


def orthosymplectic_residuals(u):
    """Frobenius defects (||U^T U - I||, ||U^T J U - J_n||)."""
    n = u.shape[1]
    ortho = np.linalg.norm(u.T @ u - np.eye(n))
    sympl = np.linalg.norm(u.T @ jmul(u) - jmul(np.eye(n)))
    return float(ortho), float(sympl)


class SMatrix:
    """Coefficient Gram matrix Z Z^T + J^T Z Z^T J with a cached factorization."""

    def __init__(self, z, cond_warn=1e12):
        a = z @ z.T
        self.matrix = a - jmul(jrmul(a))
        eigs = eigvalsh(self.matrix)
        self.cond = float(eigs[-1] / max(eigs[0], np.finfo(float).tiny))
        if self.cond > cond_warn:
            warnings.warn(f"coefficient Gram matrix is ill-conditioned (cond ~ {self.cond:.2e})")
        self._cho = cho_factor(self.matrix)

    def solve_right(self, m):
        """m @ S^{-1} (S is symmetric)."""
        return cho_solve(self._cho, m.T).T


def select_parameter_subset(z, count, printed_variant=False):
    """Pick ``count`` well-spread coefficient columns for exact-field sampling.

    Farthest-point greedy: seed with the largest-norm column, then repeatedly
    take the column farthest from the selected set. ``printed_variant`` instead
    scores each candidate by its distance to the nearest column of the whole
    set, which is identically zero (the candidate is in the set); it then
    degenerates to picking the lowest unselected indices and is kept only for
    comparison.
    """
    z = np.asarray(z, dtype=float)
    p = z.shape[1]
    if not 1 <= count <= p:
        raise ConfigurationError(f"subset size must be in [1, {p}], got {count}")
    first = int(np.argmax(np.einsum("ij,ij->j", z, z)))
    sel = [first]
    if printed_variant:
        for j in range(p):
            if len(sel) == count:
                break
            if j not in sel:
                sel.append(j)
        return np.asarray(sel, dtype=int)
    diff = z - z[:, [first]]
    d2 = np.einsum("ij,ij->j", diff, diff)
    while len(sel) < count:
        nxt = int(np.argmax(d2))
        sel.append(nxt)
        diff = z - z[:, [nxt]]
        d2 = np.minimum(d2, np.einsum("ij,ij->j", diff, diff))
    return np.asarray(sel, dtype=int)


def basis_velocity(u, z, g, s=None):
    """Tangent velocity of the basis from full-state gradients g at columns z.

    Computes (I - U U^T)(J G Z^T - G Z^T J_n^T) S^{-1} with
    S = Z Z^T + J_n^T Z Z^T J_n, all products at O(N n^2 + N n p) cost.
    """
    s = s or SMatrix(z)
    gzt = g @ z.T
    m = jmul(gzt) + jrmul(gzt)  # J G Z^T - G Z^T J^T; right J^T flips the sign
    m = s.solve_right(m)
    return m - u @ (u.T @ m)


def retraction(u, xi):
    """Cayley retraction of the tangent step xi at u, in low-rank form.

    Equals cay(W U^T - U W^T) @ u with 2 W = (2 I - U U^T) xi, assembled via
    the 2n x 2n capacitance system so no 2N x 2N matrix is formed.
    """
    n = u.shape[1]
    w = xi - 0.5 * u @ (u.T @ xi)
    a = np.concatenate([w, -u], axis=1)
    b = np.concatenate([u, w], axis=1)
    cap = np.eye(2 * n) - 0.5 * (b.T @ a)
    return u + a @ np.linalg.solve(cap, b.T @ u)


def tangent_velocity(u, xi, r_xi, x_eval):
    """Pull the velocity x_eval at the retracted point back to the anchor u.

    xi is the tangent step that produced r_xi = retraction(u, xi); x_eval is a
    tangent velocity evaluated at r_xi. Output lives in the tangent space at u
    and feeds the second half of the explicit midpoint basis update.
    """
    n = u.shape[1]
    w = xi - 0.5 * u @ (u.T @ xi)
    t = 2.0 * x_eval - (w @ (u.T @ x_eval) - u @ (w.T @ x_eval))
    ups = np.linalg.solve((u.T @ r_xi + np.eye(n)).T, t.T).T
    lead = np.linalg.solve(r_xi.T @ u + np.eye(n), (r_xi + u).T @ ups)
    return -u @ lead + ups - u @ (ups.T @ u)


def fixed_point(map_fn, z0, tol=1e-9, max_iter=100):
    """Iterate z <- map_fn(z) until the relative update norm drops below tol."""
    z = z0
    trace = []
    for it in range(1, max_iter + 1):
        z_new = map_fn(z)
        num = float(np.linalg.norm(z_new - z))
        den = max(float(np.linalg.norm(z_new)), np.finfo(float).tiny)
        trace.append(num / den)
        z = z_new
        if num <= tol * den:
            return z, it, trace
    raise StepFailureError(
        f"implicit coefficient stage did not converge in {max_iter} iterations "
        f"(last relative update {trace[-1]:.3e})",
        iterations=max_iter,
        residual_trace=trace,
    )


@dataclass
class PRKResult:
    u: np.ndarray
    z: np.ndarray
    u_mid: np.ndarray
    z_mid: np.ndarray
    fp_iterations: int
    s_cond: float


class _NullTimers:
    def phase(self, name):
        return nullcontext()


def prk2_step(u, z, dt, sub, grad_sub, g_sub0, coeff_stage, fp_tol=1e-9, fp_max_iter=100,
              timers=None):
    """One partitioned Runge-Kutta step of the coupled (U, Z) system.

    Parameters
    ----------
    u, z : current basis (2N, n) and coefficients (n, p).
    sub : indices of the parameter subsample driving the basis.
    grad_sub : callable (u, z_sub) -> full-state gradients (2N, p*) at the
        reconstructed subsample columns.
    g_sub0 : those gradients already evaluated at (u, z[:, sub]); the caller
        harvests its byproducts, so the step does not recompute them.
    coeff_stage : callable u_mid -> g(z) returning the reduced coefficient
        gradient (n, p) at the half-step basis and stage midpoint time.
    """
    timers = timers or _NullTimers()
    with timers.phase("rom_basis"):
        s0 = SMatrix(z[:, sub])
        xi1 = basis_velocity(u, z[:, sub], g_sub0, s=s0)
        half_step = 0.5 * dt * xi1
        u_mid = retraction(u, half_step)
        # the factory assembles the basis-dependent stage constants, so its
        # O(N n^2) work belongs to the phase that produced u_mid
        g = coeff_stage(u_mid)

    with timers.phase("rom_coeff"):
        k, iterations, _ = fixed_point(
            lambda kk: jmul(g(z + 0.5 * dt * kk)), np.zeros_like(z), fp_tol, fp_max_iter
        )
        z_new = z + dt * k
        z_mid = z + 0.5 * dt * k

    with timers.phase("rom_basis"):
        g_mid = grad_sub(u_mid, z_mid[:, sub])
        xi_mid = basis_velocity(u_mid, z_mid[:, sub], g_mid)
        xi2 = tangent_velocity(u, half_step, u_mid, xi_mid)
        u_new = retraction(u, dt * xi2)

    return PRKResult(u=u_new, z=z_new, u_mid=u_mid, z_mid=z_mid,
                     fp_iterations=iterations, s_cond=s0.cond)
