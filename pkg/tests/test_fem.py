"""Grid, deposition, and Poisson-solve oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from picrom.errors import ConfigurationError, EvaluationError
from picrom.fem import (
    ChargeConfig,
    PoissonOperator,
    build_mesh,
    deposit_charge,
    electric_energy,
    eval_basis,
    eval_basis_grad,
    eval_basis_pair,
    field_at_particles,
    hamiltonian,
)
from picrom import selftest

LENGTH = 4.0
NX = 8


@pytest.fixture(scope="module")
def mesh():
    return build_mesh(LENGTH, NX)


@pytest.fixture(scope="module")
def charge():
    return ChargeConfig(num_particles=200, length=LENGTH)


@pytest.fixture(scope="module")
def poisson(mesh):
    return PoissonOperator(mesh)


def test_stiffness_stencil_frozen(mesh, poisson):
    # circulant rows: 2/h diagonal, -1/h neighbors, cyclic corners
    h = LENGTH / NX
    expected = np.zeros((NX, NX))
    idx = np.arange(NX)
    expected[idx, idx] = 2.0 / h
    expected[idx, (idx + 1) % NX] = -1.0 / h
    expected[idx, (idx - 1) % NX] = -1.0 / h
    np.testing.assert_allclose(poisson.stiffness, expected, atol=1e-14)
    np.testing.assert_allclose(poisson.stiffness @ np.ones(NX), 0.0, atol=1e-12)


def test_weight_neutralizes_background(charge):
    total_particle_charge = charge.charge * charge.num_particles * charge.weight
    assert abs(total_particle_charge + charge.background * charge.length) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(min_value=-10.0, max_value=10.0, allow_nan=False),
                min_size=1, max_size=30))
def test_partition_of_unity(positions):
    mesh = build_mesh(LENGTH, NX)
    table = eval_basis(mesh, np.asarray(positions))
    np.testing.assert_allclose(table.matvec(np.ones(NX)), 1.0, atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 31 - 1))
def test_deposit_adjoint_matches_dense(seed):
    rng = np.random.default_rng(seed)
    mesh = build_mesh(LENGTH, NX)
    x = rng.uniform(-LENGTH, 2 * LENGTH, size=12)
    table = eval_basis(mesh, x)
    dense = table.toarray()
    w = rng.standard_normal(12)
    phi = rng.standard_normal(NX)
    np.testing.assert_allclose(table.matvec(phi), dense @ phi, atol=1e-13)
    np.testing.assert_allclose(table.rmatvec(w), dense.T @ w, atol=1e-13)


def test_gradient_rows(mesh):
    x = np.array([0.1, 1.7, 3.9])
    table = eval_basis_grad(mesh, x)
    dense = table.toarray()
    h = mesh.h
    np.testing.assert_allclose(np.sort(dense[dense != 0.0]),
                               np.sort(np.tile([-1 / h, 1 / h], 3)), atol=1e-13)
    np.testing.assert_allclose(dense.sum(axis=1), 0.0, atol=1e-13)


def test_on_node_gradient_uses_right_cell(mesh):
    table = eval_basis_grad(mesh, np.array([mesh.h]))  # exactly on node 1
    dense = table.toarray()[0]
    assert dense[1] == pytest.approx(-1 / mesh.h)
    assert dense[2] == pytest.approx(1 / mesh.h)


def test_deposit_neutral_and_batched(mesh, charge):
    rng = np.random.default_rng(0)
    x = rng.uniform(0, LENGTH, size=(200, 3))
    rho = deposit_charge(eval_basis(mesh, x), charge)
    assert rho.shape == (NX, 3)
    scale = np.abs(rho).max()
    np.testing.assert_allclose(rho.sum(axis=0), 0.0, atol=1e-12 * max(scale, 1.0))
    # batched columns equal independent 1-D deposits
    for j in range(3):
        rho_j = deposit_charge(eval_basis(mesh, x[:, j]), charge)
        np.testing.assert_allclose(rho[:, j], rho_j, atol=1e-14)


def test_uniform_particles_give_zero_density(mesh):
    charge = ChargeConfig(num_particles=2 * NX, length=LENGTH)
    x = np.arange(2 * NX) * (LENGTH / (2 * NX))
    rho = deposit_charge(eval_basis(mesh, x), charge)
    np.testing.assert_allclose(rho, 0.0, atol=1e-13)


def test_translation_equivariance(mesh, charge):
    rng = np.random.default_rng(5)
    x = rng.uniform(0, LENGTH, size=120)
    charge120 = ChargeConfig(num_particles=120, length=LENGTH)
    poisson = PoissonOperator(mesh)
    rho = deposit_charge(eval_basis(mesh, x), charge120)
    phi = poisson.solve(rho)
    rho_s = deposit_charge(eval_basis(mesh, x + mesh.h), charge120)
    phi_s = poisson.solve(rho_s)
    np.testing.assert_allclose(np.roll(rho, 1), rho_s, atol=1e-12)
    np.testing.assert_allclose(np.roll(phi, 1), phi_s, atol=1e-12)


def test_zero_mean_solve_and_residual(mesh, poisson):
    rng = np.random.default_rng(1)
    rho = rng.standard_normal(NX)
    phi = poisson.solve(rho)
    assert abs(phi.mean()) < 1e-13
    np.testing.assert_allclose(poisson.stiffness @ phi, rho - rho.mean(), atol=1e-10)
    # pseudoinverse reference
    ref = np.linalg.pinv(poisson.stiffness) @ (rho - rho.mean())
    np.testing.assert_allclose(phi, ref - ref.mean(), atol=1e-10)


def test_energy_gauge_invariance(mesh, poisson, charge):
    rng = np.random.default_rng(2)
    phi = rng.standard_normal(NX)
    e0 = electric_energy(poisson, phi, charge)
    e1 = electric_energy(poisson, phi + 3.7, charge)
    assert e0 >= 0.0
    assert e1 == pytest.approx(e0, rel=1e-12)


def test_hamiltonian_independent_evaluation(mesh, poisson):
    # quadratic-form path: 0.5 m_p^-1 q^T L^+ q with q the mean-free deposit
    bench_n = 60
    charge = ChargeConfig(num_particles=bench_n, length=LENGTH)
    rng = np.random.default_rng(3)
    x = rng.uniform(0, LENGTH, size=bench_n)
    v = rng.standard_normal(bench_n)

    h_fast = hamiltonian(x, v, poisson, charge)

    lam = eval_basis(mesh, x).toarray()
    q = lam.T @ np.full(bench_n, charge.charge_weight)
    q = q - q.mean()
    lplus = np.linalg.pinv(poisson.stiffness)
    h_ref = 0.5 * v @ v + 0.5 / charge.particle_mass * q @ lplus @ q
    assert h_fast == pytest.approx(h_ref, rel=1e-12)


def test_hamiltonian_kinetic_scaling(mesh, poisson, charge):
    rng = np.random.default_rng(4)
    x = rng.uniform(0, LENGTH, size=200)
    v = rng.standard_normal(200)
    h1 = hamiltonian(x, v, poisson, charge)
    h2 = hamiltonian(x, 2 * v, poisson, charge)
    field = hamiltonian(x, 0 * v, poisson, charge)
    kinetic = h1 - field
    assert h2 == pytest.approx(field + 4 * kinetic, rel=1e-10)


def test_uniform_zero_velocity_hamiltonian_is_zero(mesh, poisson):
    charge = ChargeConfig(num_particles=4 * NX, length=LENGTH)
    x = np.arange(4 * NX) * (LENGTH / (4 * NX))
    assert abs(hamiltonian(x, np.zeros_like(x), poisson, charge)) < 1e-13


def test_field_is_minus_energy_gradient():
    selftest.check_field_is_energy_gradient()


def test_field_at_particles_shape(mesh, poisson, charge):
    rng = np.random.default_rng(6)
    x = rng.uniform(0, LENGTH, size=(50, 4))
    basis, grad = eval_basis_pair(mesh, x)
    phi = poisson.solve(deposit_charge(basis, charge))
    e = field_at_particles(grad, phi, charge)
    assert e.shape == (50, 4)


def test_nonfinite_position_raises_with_index(mesh):
    x = np.zeros((5, 2))
    x[3, 1] = np.nan
    with pytest.raises(EvaluationError) as err:
        eval_basis(mesh, x)
    assert err.value.index == (3, 1)


def test_mesh_validation():
    with pytest.raises(ConfigurationError):
        build_mesh(-1.0, 8)
    with pytest.raises(ConfigurationError):
        build_mesh(1.0, 1)
