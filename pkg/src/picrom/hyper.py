"""Data-driven hyper-reduction of the reduced coefficient equation.

Two surrogates make the coefficient stage independent of the particle count:

* a sliding-window DMD of the electric potential, fitted over the last T
  intervals of the exactly solved parameter subsample, extrapolated over the
  current step, and carried to all parameter columns by Gaussian-kernel RBF
  interpolation of the modal coordinates over the parameter plane;
* a DEIM interpolant of the particle-to-grid coupling, built from the window
  of basis-weighted potential samples, with index updates restricted to the
  basis vectors that rotated most between consecutive fits.

Both fits consume only byproducts of the exactly computed subsample gradients,
so hyper-reduction adds no extra Poisson solves.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eig, lstsq, svd

from .errors import ConfigurationError, DegenerateDataError
from .fem import eval_basis_grad

__all__ = [
    "DMDModel",
    "fit_dmd",
    "RBFInterpolant",
    "fit_parametric_dmd",
    "DEIMModel",
    "deim_greedy",
    "fit_deim",
    "hyper_hamiltonian",
    "make_hyper_stage",
]

_MODE_DISCARD_TOL = 1e-12
_IMAG_WARN_TOL = 1e-3


@dataclass
class DMDModel:
    """Continuous-time DMD surrogate phi(t) = Re(Theta (Pi * exp(omega (t - t0))))."""

    modes: np.ndarray        # (N_x, r) complex
    omegas: np.ndarray       # (r,) complex
    eigenvalues: np.ndarray  # (r,) complex, discrete-time
    anchor_time: float
    coords: np.ndarray = None      # (r, p) complex, set once coordinates are known
    pi_sub: np.ndarray = None      # (r, p*) directly projected subsample coordinates
    sub: np.ndarray = None
    interpolant: object = None
    imag_defect: float = field(default=0.0)

    @property
    def rank(self):
        return self.modes.shape[1]

    def ensure_coords(self, params):
        """Interpolate modal coordinates to every parameter column (idempotent).

        Subsample columns keep their directly projected coordinates exactly.
        """
        if self.coords is not None:
            return self.coords
        if self.interpolant is None:
            raise ConfigurationError("DMD model has no coordinate interpolant attached")
        coords = self.interpolant(np.asarray(params, dtype=float)).T
        coords[:, self.sub] = self.pi_sub
        self.coords = coords
        return coords

    def potential(self, t, coords=None):
        """Extrapolated nodal potential at time t, one column per coordinate set."""
        coords = self.coords if coords is None else coords
        if coords is None:
            raise ConfigurationError("DMD model has no modal coordinates attached")
        weights = np.exp(self.omegas * (t - self.anchor_time))
        out = self.modes @ (coords * weights[:, None])
        re_norm = np.linalg.norm(out.real)
        if re_norm > 0.0:
            self.imag_defect = max(self.imag_defect, float(np.linalg.norm(out.imag) / re_norm))
            if self.imag_defect > _IMAG_WARN_TOL and not getattr(self, "_warned", False):
                self._warned = True
                warnings.warn(
                    f"DMD reconstruction has relative imaginary part {self.imag_defect:.2e}"
                )
        return out.real

    def project_coords(self, snapshots):
        """Least-squares modal coordinates of the given potential columns."""
        coords, *_ = lstsq(self.modes, np.asarray(snapshots, dtype=complex))
        return coords


def fit_dmd(y, y_shift, dt, svd_tol=1e-5, anchor_time=0.0):
    """Exact DMD of the snapshot pair (Y, Y') sampled dt apart.

    The SVD of Y is truncated at singular values below svd_tol times the
    largest; modes with negligible discrete eigenvalues are discarded before
    taking the matrix logarithm of the spectrum.
    """
    y = np.asarray(y, dtype=float)
    y_shift = np.asarray(y_shift, dtype=float)
    if y.shape != y_shift.shape:
        raise ConfigurationError("snapshot blocks must have equal shapes")
    if not np.any(y) or not np.any(y_shift):
        raise DegenerateDataError("DMD window is identically zero")
    u, s, vh = svd(y, full_matrices=False)
    keep = s >= svd_tol * s[0]
    u, s, vh = u[:, keep], s[keep], vh[keep]
    proj = y_shift @ (vh.T / s)
    a_low = u.T @ proj
    lam, w = eig(a_low)
    modes = proj @ w
    alive = np.abs(lam) >= _MODE_DISCARD_TOL
    lam, modes = lam[alive], modes[:, alive]
    if lam.size == 0:
        raise DegenerateDataError("all DMD eigenvalues collapsed below the discard threshold")
    omegas = np.log(lam) / dt
    return DMDModel(modes=modes, omegas=omegas, eigenvalues=lam, anchor_time=anchor_time)


class RBFInterpolant:
    """Gaussian-kernel interpolation over scattered parameter points.

    Shape parameter: reciprocal of the median pairwise node distance. With
    enough nodes the kernel is augmented by an affine tail (constant plus
    coordinates) so near-linear maps interpolate without kernel ringing. A
    singular system falls back to the plain kernel, then to
    nearest-neighbor lookup with a warning.
    """

    def __init__(self, nodes, values):
        self.nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
        values = np.asarray(values)
        num, dim = self.nodes.shape
        diff = self.nodes[:, None, :] - self.nodes[None, :, :]
        dist = np.sqrt((diff ** 2).sum(-1))
        tri = dist[np.triu_indices(num, k=1)]
        med = np.median(tri) if tri.size else 1.0
        self.eps = 1.0 / med if med > 0 else 1.0
        kernel = np.exp(-((self.eps * dist) ** 2))
        self.values = values
        self.coeffs = None
        self.poly = None
        self.degenerate = False
        if num > dim + 1:
            tail = np.hstack([np.ones((num, 1)), self.nodes])
            m = tail.shape[1]
            system = np.block([[kernel, tail], [tail.T, np.zeros((m, m))]])
            rhs = np.concatenate([values, np.zeros((m,) + values.shape[1:])])
            try:
                sol = np.linalg.solve(system, rhs)
                self.coeffs, self.poly = sol[:num], sol[num:]
            except np.linalg.LinAlgError:
                pass  # collinear nodes make the tail block rank-deficient
        if self.coeffs is None:
            try:
                self.coeffs = np.linalg.solve(kernel, values)
            except np.linalg.LinAlgError:
                warnings.warn("singular RBF kernel system; falling back to nearest-neighbor lookup")
                self.degenerate = True

    def __call__(self, targets):
        targets = np.atleast_2d(np.asarray(targets, dtype=float))
        diff = targets[:, None, :] - self.nodes[None, :, :]
        dist2 = (diff ** 2).sum(-1)
        if self.degenerate:
            return self.values[np.argmin(dist2, axis=1)]
        out = np.exp(-(self.eps ** 2) * dist2) @ self.coeffs
        if self.poly is not None:
            out = out + np.hstack([np.ones((len(targets), 1)), targets]) @ self.poly
        return out


def fit_parametric_dmd(window, dt, anchor_time, params, sub, svd_tol=1e-5):
    """Fit the sliding-window DMD and prepare per-parameter coordinates.

    window: sequence of T+1 aligned potential samples (N_x, p*), oldest first;
    the first T form the data block, the last T the shifted block, and the
    newest sample anchors the least-squares coordinates. The Gaussian RBF
    system over the subsample nodes is solved here; evaluation at the full
    parameter set is deferred to ensure_coords so it can be timed with the
    coefficient stage. Subsample columns keep their directly projected
    coordinates.
    """
    window = np.stack(window)
    t1, nx, p_star = window.shape
    if t1 < 2:
        raise ConfigurationError("DMD window needs at least two samples")
    y = window[:-1].transpose(1, 2, 0).reshape(nx, -1)
    y_shift = window[1:].transpose(1, 2, 0).reshape(nx, -1)
    model = fit_dmd(y, y_shift, dt, svd_tol=svd_tol, anchor_time=anchor_time)
    model.pi_sub = model.project_coords(window[-1])    # (r, p*)
    model.sub = np.asarray(sub, dtype=int)
    params = np.asarray(params, dtype=float)
    model.interpolant = RBFInterpolant(params[model.sub], model.pi_sub.T)
    return model


@dataclass
class DEIMModel:
    """Empirical interpolation of the grid-coupling term."""

    psi: np.ndarray       # (N, d) left singular vectors
    indices: np.ndarray   # (d,) interpolation particles
    weights: np.ndarray   # (d,) collapsed quadrature weights

    @property
    def dim(self):
        return self.psi.shape[1]


def deim_greedy(psi, keep=None):
    """Greedy interpolation indices for the basis psi.

    keep maps slot -> particle index for slots whose index is pinned; pinned
    slots are processed in order and every currently assigned index is banned
    from the argmax so no two slots collide.
    """
    n, d = psi.shape
    keep = keep or {}
    indices = np.empty(d, dtype=int)
    banned = np.zeros(n, dtype=bool)
    for pin in keep.values():
        banned[pin] = True
    for k in range(d):
        if k in keep:
            indices[k] = keep[k]
            continue
        if k == 0:
            residual = psi[:, 0]
        else:
            rows = indices[:k]
            coeff = np.linalg.solve(psi[rows, :k], psi[rows, k])
            residual = psi[:, k] - psi[:, :k] @ coeff
        score = np.abs(residual)
        score[banned] = -1.0
        pick = int(np.argmax(score))
        indices[k] = pick
        banned[pick] = True
    return indices


def fit_deim(samples, dim, charge, prev=None, full=True, n_update=None,
             printed_ranking=False):
    """DEIM basis, indices, and weights from the window of coupling samples.

    samples: (N, cols) matrix of basis-weighted potential values. When a
    previous model is given and ``full`` is False, only the ``n_update`` slots
    whose basis vectors align least with their predecessors (absolute inner
    product, immune to SVD sign flips) are recomputed; ``printed_ranking``
    switches to refreshing the most aligned slots instead.
    """
    samples = np.asarray(samples, dtype=float)
    if not np.any(samples):
        raise DegenerateDataError("DEIM sample window is identically zero")
    u, s, _ = svd(samples, full_matrices=False)
    rank = int((s >= max(samples.shape) * np.finfo(float).eps * s[0]).sum())
    d_eff = min(int(dim), rank)
    if d_eff < dim:
        warnings.warn(f"DEIM samples have numerical rank {rank} < {dim}; basis reduced to {d_eff}")
    psi = u[:, :d_eff]
    keep = None
    if not full and prev is not None and prev.dim == d_eff and n_update is not None \
            and n_update < d_eff:
        align = np.abs(np.einsum("ik,ik->k", psi, prev.psi))
        order = np.argsort(align)
        refresh = set(int(i) for i in (order[::-1] if printed_ranking else order)[:n_update])
        keep = {k: int(prev.indices[k]) for k in range(d_eff) if k not in refresh}
    indices = deim_greedy(psi, keep=keep)
    weights = np.linalg.solve(psi[indices].T, charge.charge_weight * psi.sum(axis=0))
    return DEIMModel(psi=psi, indices=indices, weights=weights)


def hyper_hamiltonian(dmd, deim, u, z, t, mesh, charge):
    """Surrogate reduced energy 0.5 Z^T (U_V^T U_V) Z + (m_p^{-1}/2) w . (basis phi)|_I.

    Used for the data-driven piece of the energy-error decomposition; note the
    field term carries 1/2, unlike the gradient the dynamics integrate.
    """
    from .fem import eval_basis

    half = u.shape[0] // 2
    ux_d = u[deim.indices, :]
    uv = u[half:]
    q = (uv.T @ uv) @ z
    kin = 0.5 * np.einsum("ij,ij->j", z, q)
    phi = dmd.potential(t)
    lam = eval_basis(mesh, ux_d @ z).matvec(phi)
    fld = (0.5 / charge.particle_mass) * (deim.weights @ lam)
    return kin + fld


def make_hyper_stage(dmd, deim, t_stage, mesh, charge, params=None):
    """Coefficient-gradient factory for one RK stage.

    Returns factory(u_mid) -> g(z) with
    g = (U_V^T U_V) Z + m_p^{-1} U_X[I]^T (dphi|_I * w), where dphi is the
    spatial derivative of the DMD potential at the reconstructed DEIM
    particles. The factory eagerly builds the basis-dependent stage constants
    (so their O(N n^2) cost is charged to the basis phase that produced
    u_mid); the extrapolated potential is coefficient-independent and is
    evaluated lazily, once, on the first gradient call inside the stage.
    """

    def factory(u_mid):
        half = u_mid.shape[0] // 2
        ux_d = u_mid[deim.indices, :]
        uv = u_mid[half:]
        uvtuv = uv.T @ uv
        inv_mp = 1.0 / charge.particle_mass
        w_col = deim.weights[:, None]
        cache = {}

        def g(z):
            phi = cache.get("phi")
            if phi is None:
                if params is not None:
                    dmd.ensure_coords(params)
                phi = cache["phi"] = dmd.potential(t_stage)
            xd = ux_d @ z
            dphi = eval_basis_grad(mesh, xd).matvec(phi)
            return uvtuv @ z + inv_mp * (ux_d.T @ (dphi * w_col))

        return g

    return factory
