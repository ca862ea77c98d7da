"""Quiet-start phase-space loading and parameter sampling.

Initial particle data come from a 2D Hammersley sequence pushed through the
inverse CDFs of the benchmark distributions, so that every parameter column
shares one low-discrepancy point set and differs only through the distribution
parameters (alpha, sigma). All maps are deterministic; no RNG is involved.

Benchmark catalog:

* ``weak_landau`` / ``nonlinear_landau``: density (1 + alpha cos(k x)) on
  [0, 2 pi / k) times a Maxwellian with thermal spread sigma.
* ``two_stream``: same spatial factor times a symmetric two-beam mixture
  0.5 [M(v - v0; sigma) + M(v + v0; sigma)].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf, erfinv

from .errors import ConfigurationError

__all__ = [
    "hammersley",
    "invert_position_cdf",
    "invert_maxwellian",
    "invert_two_stream",
    "sample_parameters",
    "BenchmarkSpec",
    "BENCHMARKS",
    "build_initial_ensemble",
]


def _radical_inverse_base2(idx):
    """Van der Corput bit reversal of each index as a dyadic fraction."""
    idx = np.asarray(idx, dtype=np.uint64).copy()
    out = np.zeros(idx.shape)
    f = 0.5
    while idx.any():
        out += f * (idx & 1)
        idx >>= np.uint64(1)
        f *= 0.5
    return out


def hammersley(count, dims=2, remap_zero=False):
    """First ``count`` points of the Hammersley set in [0, 1)^dims.

    Dimension 0 is the regular lattice l / count, dimension 1 the base-2
    radical inverse. With ``remap_zero`` every exact zero is replaced by
    1 / (2 count) so the points can feed open-interval inverse CDFs.
    """
    if count < 1:
        raise ConfigurationError("need at least one sample point")
    if dims not in (1, 2):
        raise ConfigurationError("only 1 or 2 dimensions are supported")
    pts = np.empty((count, dims))
    pts[:, 0] = np.arange(count) / count
    if dims == 2:
        pts[:, 1] = _radical_inverse_base2(np.arange(count))
    if remap_zero:
        pts[pts == 0.0] = 1.0 / (2.0 * count)
    return pts


def _bisect_newton(fun, dfun, u, lo, hi, bisect_iters=54, newton_iters=2):
    """Vectorized monotone root solve of fun(x) = u on [lo, hi]."""
    u = np.asarray(u, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), u.shape).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), u.shape).copy()
    lo0, hi0 = lo.min(), hi.max()
    for _ in range(bisect_iters):
        mid = 0.5 * (lo + hi)
        below = fun(mid) < u
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    x = 0.5 * (lo + hi)
    for _ in range(newton_iters):
        x = x - (fun(x) - u) / dfun(x)
        x = np.clip(x, lo0, hi0)
    return x


def invert_position_cdf(u, alpha, k):
    """Invert F(x) = (x + (alpha/k) sin(k x)) / length on one period.

    length = 2 pi / k, so the perturbation integrates to zero over the domain.
    Bisection brackets the root, two Newton steps polish to ~1e-15 in F.
    """
    if not (0.0 <= alpha < 1.0):
        raise ConfigurationError(f"perturbation amplitude must be in [0, 1), got {alpha}")
    length = 2.0 * np.pi / k

    def cdf(x):
        return (x + (alpha / k) * np.sin(k * x)) / length

    def pdf(x):
        return (1.0 + alpha * np.cos(k * x)) / length

    return _bisect_newton(cdf, pdf, u, 0.0, length)


def invert_maxwellian(u, sigma):
    """Inverse CDF of the centered Gaussian with standard deviation sigma."""
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0.0) or np.any(u >= 1.0):
        raise ConfigurationError("quantile inputs must lie strictly inside (0, 1)")
    return sigma * np.sqrt(2.0) * erfinv(2.0 * u - 1.0)


def invert_two_stream(u, sigma, v0):
    """Inverse CDF of the symmetric two-beam mixture with centers +-v0."""
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0.0) or np.any(u >= 1.0):
        raise ConfigurationError("quantile inputs must lie strictly inside (0, 1)")
    root2, root2pi = np.sqrt(2.0), np.sqrt(2.0 * np.pi)

    def cdf(v):
        return 0.25 * (2.0 + erf((v - v0) / (root2 * sigma)) + erf((v + v0) / (root2 * sigma)))

    def pdf(v):
        za, zb = (v - v0) / sigma, (v + v0) / sigma
        return (np.exp(-0.5 * za * za) + np.exp(-0.5 * zb * zb)) / (2.0 * sigma * root2pi)

    span = abs(v0) + 14.0 * sigma
    return _bisect_newton(cdf, pdf, u, -span, span)


def sample_parameters(alpha_range, sigma_range, count):
    """Hammersley points mapped affinely into the parameter box.

    Returns a (count, 2) array of (alpha, sigma) rows; the first point is the
    lower-left corner of the box.
    """
    a0, a1 = alpha_range
    s0, s1 = sigma_range
    if not (a1 >= a0 and s1 >= s0):
        raise ConfigurationError("parameter ranges must be ordered (lo, hi)")
    pts = hammersley(count, 2)
    out = np.empty_like(pts)
    out[:, 0] = a0 + (a1 - a0) * pts[:, 0]
    out[:, 1] = s0 + (s1 - s0) * pts[:, 1]
    return out


@dataclass(frozen=True)
class BenchmarkSpec:
    """Benchmark definition: physics plus default discretization numbers."""

    name: str
    wavenumber: float
    velocity_model: str  # "maxwellian" or "two_stream"
    alpha_range: tuple
    sigma_range: tuple
    beam_speed: float = 0.0
    defaults: dict = field(default_factory=dict)

    @property
    def length(self):
        return 2.0 * np.pi / self.wavenumber

    def invert_velocity(self, u, sigma):
        if self.velocity_model == "maxwellian":
            return invert_maxwellian(u, sigma)
        if self.velocity_model == "two_stream":
            return invert_two_stream(u, sigma, self.beam_speed)
        raise ConfigurationError(f"unknown velocity model {self.velocity_model!r}")


BENCHMARKS = {
    "weak_landau": BenchmarkSpec(
        name="weak_landau",
        wavenumber=0.5,
        velocity_model="maxwellian",
        alpha_range=(0.03, 0.06),
        sigma_range=(0.8, 1.0),
        defaults=dict(
            num_particles=50_000, num_cells=32, dt=0.0025, t_final=20.0,
            num_params=300, subsample=12, basis_dim=4, deim_dim=32,
            window=3, deim_period=3, deim_update=12,
        ),
    ),
    "nonlinear_landau": BenchmarkSpec(
        name="nonlinear_landau",
        wavenumber=0.5,
        velocity_model="maxwellian",
        alpha_range=(0.46, 0.5),
        sigma_range=(0.96, 1.0),
        defaults=dict(
            num_particles=100_000, num_cells=64, dt=0.002, t_final=40.0,
            num_params=300, subsample=8, basis_dim=6, deim_dim=32,
            window=3, deim_period=3, deim_update=12,
        ),
    ),
    "two_stream": BenchmarkSpec(
        name="two_stream",
        wavenumber=0.2,
        velocity_model="two_stream",
        beam_speed=3.0,
        alpha_range=(0.009, 0.011),
        sigma_range=(0.98, 1.02),
        defaults=dict(
            num_particles=150_000, num_cells=64, dt=0.0025, t_final=20.0,
            num_params=300, subsample=8, basis_dim=4, deim_dim=32,
            window=3, deim_period=3, deim_update=12,
        ),
    ),
}


def build_initial_ensemble(bench, params, num_particles):
    """Quiet-start state (X0, V0), each (N, p), one Hammersley set shared by all columns.

    params is a (p, 2) array of (alpha, sigma) rows. Positions come from
    dimension 0 through the perturbed-density CDF, velocities from dimension 1
    through the benchmark's velocity CDF.
    """
    params = np.atleast_2d(np.asarray(params, dtype=float))
    if params.shape[1] != 2:
        raise ConfigurationError("params must be (p, 2) rows of (alpha, sigma)")
    pts = hammersley(int(num_particles), 2, remap_zero=True)
    ux, uv = pts[:, 0], pts[:, 1]
    p = params.shape[0]
    x0 = np.empty((int(num_particles), p))
    v0 = np.empty_like(x0)
    for j, (alpha, sigma) in enumerate(params):
        x0[:, j] = invert_position_cdf(ux, alpha, bench.wavenumber)
        v0[:, j] = bench.invert_velocity(uv, sigma)
    return x0, v0
