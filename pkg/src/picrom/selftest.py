"""Oracle battery: fast, deterministic checks of every module's core math.

Each check is a plain function that raises AssertionError on failure so the
test suite can reuse them one-by-one; run_selftest executes all of them and
prints one PASS/FAIL line each.
"""

from __future__ import annotations

import numpy as np

from .fem import (
    ChargeConfig,
    build_mesh,
    deposit_charge,
    electric_energy,
    eval_basis,
    eval_basis_grad,
    eval_basis_pair,
    PoissonOperator,
    hamiltonian,
)
from .fullorder import ParticleEnsemble, VerletStepper, VlasovSystem
from .hyper import DMDModel, fit_deim, fit_dmd, make_hyper_stage
from .reduction import (
    basis_velocity,
    complex_svd_basis,
    jmul,
    orthosymplectic_residuals,
    reconstruct,
    retraction,
    SMatrix,
    tangent_velocity,
)
from .sampling import build_initial_ensemble, BENCHMARKS, hammersley, invert_position_cdf

__all__ = ["CHECKS", "run_selftest"]


def _dense_j(two_n):
    half = two_n // 2
    j = np.zeros((two_n, two_n))
    j[:half, half:] = np.eye(half)
    j[half:, :half] = -np.eye(half)
    return j


def _random_orthosymplectic(rng, big_n, n):
    x = rng.standard_normal((big_n, max(n, 4)))
    v = rng.standard_normal((big_n, max(n, 4)))
    u, _ = complex_svd_basis(x, v, n)
    return u


def check_dmd_synthetic_recovery():
    """DMD on exact linear dynamics: eigenvalues and 3-step extrapolation to 1e-8."""
    rng = np.random.default_rng(7)
    nx, dt = 6, 0.05
    q, _ = np.linalg.qr(rng.standard_normal((nx, nx)))
    a = np.zeros((nx, nx))
    for b, (rho, theta) in enumerate(((0.97, 0.31), (1.01, 0.83), (0.97, 1.7))):
        c, s = rho * np.cos(theta), rho * np.sin(theta)
        a[2 * b:2 * b + 2, 2 * b:2 * b + 2] = [[c, -s], [s, c]]
    a = q @ a @ q.T
    true_eigs = np.linalg.eigvals(a)

    snaps = [rng.standard_normal(nx)]
    for _ in range(10):
        snaps.append(a @ snaps[-1])
    y = np.stack(snaps[:-1], axis=1)
    y_shift = np.stack(snaps[1:], axis=1)
    model = fit_dmd(y, y_shift, dt, svd_tol=1e-12, anchor_time=0.0)

    got = np.sort_complex(model.eigenvalues)
    want = np.sort_complex(true_eigs)
    assert got.shape == want.shape, f"recovered {got.shape[0]} of {want.shape[0]} eigenvalues"
    err = np.abs(got - want).max()
    assert err < 1e-8, f"eigenvalue recovery error {err:.3e}"

    last = snaps[-1]
    model.coords = model.project_coords(last[:, None])
    model.anchor_time = 10 * dt
    truth = np.linalg.matrix_power(a, 3) @ last
    pred = model.potential(13 * dt)[:, 0]
    err = np.abs(pred - truth).max() / np.abs(truth).max()
    assert err < 1e-8, f"3-step extrapolation error {err:.3e}"


def check_deim_span_exactness():
    """DEIM reconstruction is exact (1e-10) for members of the sampled span."""
    rng = np.random.default_rng(11)
    n, d = 60, 6
    base = np.linalg.qr(rng.standard_normal((n, d)))[0]
    samples = base @ rng.standard_normal((d, 15))
    charge = ChargeConfig(num_particles=n, length=2 * np.pi)
    model = fit_deim(samples, d, charge)
    assert model.dim == d, f"DEIM rank {model.dim} != {d}"
    for col in (samples[:, 3], base @ rng.standard_normal(d)):
        coef = np.linalg.solve(model.psi[model.indices, :], col[model.indices])
        err = np.abs(model.psi @ coef - col).max() / np.abs(col).max()
        assert err < 1e-10, f"span member interpolation error {err:.3e}"


def check_csvd_reconstruction():
    """Full-complex-rank cSVD basis reproduces the snapshots to 1e-10."""
    rng = np.random.default_rng(3)
    big_n, p = 24, 8
    x = rng.standard_normal((big_n, p))
    v = rng.standard_normal((big_n, p))
    u, z = complex_svd_basis(x, v, 2 * p)
    ortho, sympl = orthosymplectic_residuals(u)
    assert ortho < 1e-12 and sympl < 1e-12, f"basis residuals {ortho:.2e}, {sympl:.2e}"
    xr, vr = reconstruct(u, z)
    err = max(np.abs(xr - x).max(), np.abs(vr - v).max())
    assert err < 1e-10, f"full-rank reconstruction error {err:.3e}"


def check_dense_formula_equivalence():
    """Low-rank Cayley/velocity/tangent maps match dense formulas to 1e-10."""
    rng = np.random.default_rng(5)
    big_n, n = 14, 4
    two_n = 2 * big_n
    u = _random_orthosymplectic(rng, big_n, n)
    j = _dense_j(two_n)
    jn = _dense_j(n)

    z = rng.standard_normal((n, 9))
    g = rng.standard_normal((two_n, 9))
    s_dense = z @ z.T + jn.T @ z @ z.T @ jn
    xi_dense = (np.eye(two_n) - u @ u.T) @ (j @ g @ z.T - g @ z.T @ jn.T) \
        @ np.linalg.inv(s_dense)
    xi = basis_velocity(u, z, g)
    err = np.abs(xi - xi_dense).max()
    assert err < 1e-10, f"basis-velocity dense mismatch {err:.3e}"

    sm = SMatrix(z)
    err = np.abs(sm.matrix - s_dense).max()
    assert err < 1e-12, f"S assembly mismatch {err:.3e}"

    step = 0.07 * xi
    w = step - 0.5 * u @ (u.T @ step)
    omega = w @ u.T - u @ w.T
    cay = np.linalg.solve(np.eye(two_n) - 0.5 * omega, np.eye(two_n) + 0.5 * omega)
    r_dense = cay @ u
    r = retraction(u, step)
    err = np.abs(r - r_dense).max()
    assert err < 1e-10, f"Cayley retraction dense mismatch {err:.3e}"

    x_eval = basis_velocity(r, z, rng.standard_normal((two_n, 9)))
    t_dense = (2.0 * x_eval - omega @ x_eval) @ np.linalg.inv(u.T @ r_dense + np.eye(n))
    y_dense = -u @ np.linalg.inv(r_dense.T @ u + np.eye(n)) @ (r_dense + u).T @ t_dense \
        + t_dense - u @ t_dense.T @ u
    y = tangent_velocity(u, step, r, x_eval)
    err = np.abs(y - y_dense).max()
    assert err < 1e-10, f"tangent-velocity dense mismatch {err:.3e}"


def _fd_setup(seed=13, big_n=240, nx=16, p=6, n=4):
    rng = np.random.default_rng(seed)
    bench = BENCHMARKS["weak_landau"]
    mesh = build_mesh(bench.length, nx)
    charge = ChargeConfig(num_particles=big_n, length=bench.length)
    params = np.column_stack([np.full(p, 0.05), np.linspace(0.85, 1.0, p)])
    x0, v0 = build_initial_ensemble(bench, params, big_n)
    u, z = complex_svd_basis(x0, v0, n)
    z = z + 0.01 * rng.standard_normal(z.shape)
    return mesh, charge, u, z


def check_reduced_gradient_full():
    """Projected full gradient matches finite differences of the energy (1e-5)."""
    from .driver import exact_gradients

    mesh, charge, u, z = _fd_setup()
    poisson = PoissonOperator(mesh)
    system = VlasovSystem(mesh, charge)

    def energy_sum(zz):
        xr, vr = reconstruct(u, zz)
        return float(np.sum(hamiltonian(xr, vr, poisson, charge)))

    g = u.T @ exact_gradients(system, u, z)[0]
    rng = np.random.default_rng(29)
    eps = 1e-6
    for _ in range(8):
        i = rng.integers(z.shape[0])
        jcol = rng.integers(z.shape[1])
        dz = np.zeros_like(z)
        dz[i, jcol] = eps
        fd = (energy_sum(z + dz) - energy_sum(z - dz)) / (2 * eps)
        denom = max(abs(fd), 1e-8)
        rel = abs(fd - g[i, jcol]) / denom
        assert rel < 1e-5, f"full reduced gradient FD mismatch {rel:.3e} at ({i},{jcol})"


def check_reduced_gradient_hyper():
    """Hyper-reduced gradient matches finite differences of its energy (1e-5)."""
    mesh, charge, u, z = _fd_setup(seed=17)
    poisson = PoissonOperator(mesh)
    rng = np.random.default_rng(31)

    xr, _ = reconstruct(u, z)
    phi = poisson.solve(deposit_charge(eval_basis(mesh, xr), charge))
    nx = mesh.num_cells
    dmd = DMDModel(modes=np.eye(nx, dtype=complex), omegas=np.zeros(nx, dtype=complex),
                   eigenvalues=np.ones(nx, dtype=complex), anchor_time=0.0,
                   coords=phi.astype(complex))

    half = u.shape[0] // 2
    samples = eval_basis(mesh, xr).matvec(phi)
    samples = np.concatenate([samples, samples + 0.01 * rng.standard_normal(samples.shape)], axis=1)
    deim = fit_deim(samples, 8, charge)

    g_fn = make_hyper_stage(dmd, deim, 0.0, mesh, charge)(u)
    g = g_fn(z)

    uxd = u[deim.indices, :]
    uv = u[half:]

    def energy_sum(zz):
        kin = 0.5 * np.einsum("ij,ij->j", uv @ zz, uv @ zz)
        lam = eval_basis(mesh, uxd @ zz).matvec(phi)
        fld = (deim.weights @ lam) / charge.particle_mass
        return float(np.sum(kin + fld))

    eps = 1e-7
    for _ in range(8):
        i = rng.integers(z.shape[0])
        jcol = rng.integers(z.shape[1])
        dz = np.zeros_like(z)
        dz[i, jcol] = eps
        fd = (energy_sum(z + dz) - energy_sum(z - dz)) / (2 * eps)
        denom = max(abs(fd), 1e-8)
        rel = abs(fd - g[i, jcol]) / denom
        assert rel < 1e-5, f"hyper gradient FD mismatch {rel:.3e} at ({i},{jcol})"


def check_deim_degenerate_exact():
    """With d = N and exact potential the hyper gradient equals U^T G to 1e-10."""
    from .driver import exact_gradients

    mesh, charge, u, z = _fd_setup(seed=19, big_n=48, nx=8, p=4, n=4)
    system = VlasovSystem(mesh, charge)
    rng = np.random.default_rng(23)

    g_full, phi, _ = exact_gradients(system, u, z)
    ref = u.T @ g_full

    nx = mesh.num_cells
    dmd = DMDModel(modes=np.eye(nx, dtype=complex), omegas=np.zeros(nx, dtype=complex),
                   eigenvalues=np.ones(nx, dtype=complex), anchor_time=0.0,
                   coords=phi.astype(complex))
    big_n = charge.num_particles
    samples = rng.standard_normal((big_n, big_n + 6))
    deim = fit_deim(samples, big_n, charge)
    assert deim.dim == big_n

    got = make_hyper_stage(dmd, deim, 0.0, mesh, charge)(u)(z)
    err = np.abs(got - ref).max() / max(np.abs(ref).max(), 1e-30)
    assert err < 1e-10, f"degenerate DEIM gradient mismatch {err:.3e}"


def check_fem_basics():
    """Stiffness stencil, partition of unity, neutrality, zero-mean solve."""
    mesh = build_mesh(4.0, 8)
    charge = ChargeConfig(num_particles=500, length=4.0)
    poisson = PoissonOperator(mesh)
    h = mesh.h
    row = poisson.stiffness[0]
    want = np.zeros(8)
    want[0], want[1], want[-1] = 2 / h, -1 / h, -1 / h
    assert np.abs(row - want).max() < 1e-12, "stiffness stencil mismatch"
    assert np.abs(poisson.stiffness.sum(axis=1)).max() < 1e-12, "stiffness must kill constants"

    rng = np.random.default_rng(2)
    x = rng.uniform(0, 4.0, size=500)
    basis = eval_basis(mesh, x)
    ones = basis.matvec(np.ones(8))
    assert np.abs(ones - 1.0).max() < 1e-12, "hat functions must sum to one"

    rho = deposit_charge(basis, charge)
    assert abs(rho.sum()) < 1e-10, "deposited density must be neutral"
    phi = poisson.solve(rho)
    assert abs(phi.mean()) < 1e-12, "potential must be mean-free"
    res = poisson.stiffness @ phi - (rho - rho.mean())
    assert np.abs(res).max() < 1e-10, "Poisson residual too large"
    assert electric_energy(poisson, phi, charge) >= 0.0


def check_field_is_energy_gradient():
    """The particle force equals minus the gradient of the field energy (FD)."""
    mesh = build_mesh(2 * np.pi / 0.5, 8)
    charge = ChargeConfig(num_particles=40, length=mesh.length)
    poisson = PoissonOperator(mesh)
    rng = np.random.default_rng(21)
    x = (np.arange(40) + 0.3 + 0.4 * rng.random(40)) * (mesh.length / 40)

    def field_energy(xx):
        rho = deposit_charge(eval_basis(mesh, xx), charge)
        return float(electric_energy(poisson, poisson.solve(rho), charge))

    basis, grad = eval_basis_pair(mesh, x)
    phi = poisson.solve(deposit_charge(basis, charge))
    force = -(charge.charge_weight / charge.particle_mass) * grad.matvec(phi)

    eps = 1e-6
    for i in (0, 7, 23, 39):
        dx = np.zeros_like(x)
        dx[i] = eps
        fd = (field_energy(x + dx) - field_energy(x - dx)) / (2 * eps)
        denom = max(abs(fd), 1e-10)
        assert abs(fd - (-force[i])) / denom < 1e-5, f"force is not -dE/dx at particle {i}"


def check_verlet_reversibility():
    """One Verlet step backward undoes one step forward to 1e-10."""
    bench = BENCHMARKS["weak_landau"]
    mesh = build_mesh(bench.length, 16)
    charge = ChargeConfig(num_particles=400, length=bench.length)
    system = VlasovSystem(mesh, charge)
    params = np.array([[0.05, 0.9]])
    x0, v0 = build_initial_ensemble(bench, params, 400)
    ens = ParticleEnsemble(x0.copy(), v0.copy(), 0.0)
    stepper = VerletStepper(system)
    stepper.step(ens, 0.01)
    ens.v *= -1.0
    back = VerletStepper(system)
    back.step(ens, 0.01)
    err_x = np.abs((ens.x - x0 + 0.5 * mesh.length) % mesh.length - 0.5 * mesh.length).max()
    err_v = np.abs(-ens.v - v0).max()
    assert err_x < 1e-10 and err_v < 1e-10, \
        f"Verlet not reversible: dx {err_x:.2e}, dv {err_v:.2e}"


def check_quiet_start():
    """Position CDF round trip and low-discrepancy fluctuation advantage."""
    u = hammersley(512, remap_zero=True)[:, 0]
    x = invert_position_cdf(u, 0.4, 0.5)
    length = 2 * np.pi / 0.5
    back = (x + (0.4 / 0.5) * np.sin(0.5 * x)) / length
    assert np.abs(back - u).max() < 1e-10, "position CDF round trip failed"

    mesh = build_mesh(length, 16)
    charge = ChargeConfig(num_particles=4096, length=length)
    xq = invert_position_cdf(hammersley(4096, remap_zero=True)[:, 0], 0.0, 0.5)
    xr = np.random.default_rng(1).uniform(0, length, 4096)
    fq = np.abs(deposit_charge(eval_basis(mesh, xq), charge)).max()
    fr = np.abs(deposit_charge(eval_basis(mesh, xr), charge)).max()
    assert fq * 5.0 <= fr, f"quiet start fluctuation {fq:.2e} not 5x below {fr:.2e}"


CHECKS = [
    ("dmd synthetic recovery", check_dmd_synthetic_recovery),
    ("deim span exactness", check_deim_span_exactness),
    ("csvd full-rank reconstruction", check_csvd_reconstruction),
    ("dense tangent-map equivalence", check_dense_formula_equivalence),
    ("reduced gradient (full) FD", check_reduced_gradient_full),
    ("reduced gradient (hyper) FD", check_reduced_gradient_hyper),
    ("deim degenerate d=N oracle", check_deim_degenerate_exact),
    ("fem stencil and neutrality", check_fem_basics),
    ("force = -grad energy FD", check_field_is_energy_gradient),
    ("verlet reversibility", check_verlet_reversibility),
    ("quiet start", check_quiet_start),
]


def run_selftest(verbose=True) -> int:
    failures = 0
    for name, fn in CHECKS:
        try:
            fn()
        except Exception as err:  # report and keep going
            failures += 1
            print(f"FAIL {name}: {err}")
        else:
            if verbose:
                print(f"PASS {name}")
    if failures:
        print(f"{failures} of {len(CHECKS)} checks failed")
    elif verbose:
        print(f"all {len(CHECKS)} checks passed")
    return 1 if failures else 0
