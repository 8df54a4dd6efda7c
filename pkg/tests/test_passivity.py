import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpassivity.dynamics import Trajectory, Unitary, apply_unitary_mixture, lindblad_evolve, pi_pulse, run_protocol
from gpassivity.errors import DomainError, InfiniteDivergenceError, InvariantViolation, PreconditionError
from gpassivity.linalg import (
    SIGMA_MINUS,
    SIGMA_X,
    SIGMA_Z,
    DensityMatrix,
    HermitianOperator,
    embed_local,
    kron,
    partial_trace,
)
from gpassivity.passivity import (
    alpha_gpi_series,
    alpha_power,
    ci_cci_report,
    dephasing_covariance_bounds,
    dephasing_dressing_term,
    ergotropy,
    first_violation,
    hierarchy_check,
    is_passive,
    passive_floor,
    relative_entropy,
    shifted_reference_bound,
    violation_mask,
    von_neumann_entropy,
)
from gpassivity.scenarios import dephasing_setup, exchange_hamiltonian
from gpassivity.states import (
    MICROBATH,
    SYSTEM,
    SetupDescriptor,
    SubsystemSpec,
    b_operator,
    correlated_pair_state,
    coupled_thermal_state,
    effective_system_hamiltonian,
    gibbs_state,
    product_initial_state,
)
from helpers import random_density, random_hermitian, random_unitary


def random_mixture(rng, rho, k=3):
    p = rng.dirichlet(np.ones(k))
    return apply_unitary_mixture(rho, [(float(pi), random_unitary(rng, rho.dim)) for pi in p])


# ---------------------------------------------------------------- passivity


def test_gibbs_is_passive(rng):
    h = random_hermitian(rng, 5)
    assert is_passive(h, gibbs_state(h, 0.7))


def test_passive_example_and_witness():
    assert is_passive(SIGMA_Z, DensityMatrix(np.diag([0.1, 0.9])))
    check = is_passive(SIGMA_Z, DensityMatrix(np.diag([0.9, 0.1])))
    assert not check
    assert check.witness == (0, 1)


def test_non_commuting_is_not_passive():
    check = is_passive(SIGMA_Z, DensityMatrix(np.full((2, 2), 0.5)))
    assert not check.passive and check.witness is None
    assert "commute" in check.reason


def test_degenerate_block_order_is_irrelevant():
    a = np.diag([0.0, 1.0, 1.0, 2.0])
    # inside the degenerate block the smaller population comes first
    assert is_passive(a, DensityMatrix(np.diag([0.4, 0.2, 0.3, 0.1])))
    assert is_passive(np.eye(3), DensityMatrix(np.diag([0.1, 0.6, 0.3])))


def test_passive_floor_matches_permutation_oracle(rng):
    a = np.diag(rng.normal(size=5))
    p = rng.dirichlet(np.ones(5))
    brute = min(float(np.dot(perm, np.diag(a))) for perm in itertools.permutations(p))
    state, floor = passive_floor(DensityMatrix(np.diag(p)), a)
    assert floor == pytest.approx(brute, abs=1e-12)
    assert is_passive(a, state)
    assert ergotropy(DensityMatrix(np.diag(p)), a) >= -1e-12


def test_passive_floor_bounds_unitary_orbit(rng):
    a = random_hermitian(rng, 4)
    rho = random_density(rng, 4)
    _, floor = passive_floor(rho, a)
    for _ in range(50):
        u = random_unitary(rng, 4)
        assert a.expect(DensityMatrix(u @ rho.matrix @ u.conj().T)) >= floor - 1e-12


def test_shifted_reference_bound_sweep(rng):
    rho0 = random_density(rng, 4)
    b = b_operator(rho0)
    # B itself is passive for rho0, so the bound is zero
    assert shifted_reference_bound(rho0, b) == pytest.approx(0.0, abs=1e-12)
    for _ in range(10):
        a = random_hermitian(rng, 4)
        bound = shifted_reference_bound(rho0, a)
        assert bound <= 1e-12
        # the same bound for a shifted operator: shifts drop out of Delta
        assert shifted_reference_bound(rho0, a.shifted(3.0)) == pytest.approx(bound, abs=1e-12)
        for _ in range(5):
            rf = random_mixture(rng, rho0)
            assert a.expect(rf) - a.expect(rho0) >= bound - 1e-12


# ---------------------------------------------------------------- entropies


def test_entropy_examples():
    assert von_neumann_entropy(DensityMatrix(np.diag([1.0, 0.0]))) == pytest.approx(0.0, abs=1e-15)
    assert von_neumann_entropy(DensityMatrix(np.eye(4) / 4)) == pytest.approx(np.log(4))


def test_relative_entropy_examples():
    p, q = np.array([0.3, 0.7]), np.array([0.6, 0.4])
    want = float(np.sum(p * np.log(p / q)))
    assert relative_entropy(DensityMatrix(np.diag(p)), DensityMatrix(np.diag(q))) == pytest.approx(want, abs=1e-14)
    rho = DensityMatrix(np.diag(q))
    assert relative_entropy(rho, rho) == pytest.approx(0.0, abs=1e-14)


def test_relative_entropy_support_violation():
    with pytest.raises(InfiniteDivergenceError):
        relative_entropy(DensityMatrix(np.eye(2) / 2), DensityMatrix(np.diag([1.0, 0.0])))
    # the reverse direction is finite
    assert relative_entropy(DensityMatrix(np.diag([1.0, 0.0])), DensityMatrix(np.eye(2) / 2)) == pytest.approx(np.log(2))


def test_relative_entropy_monotone_under_partial_trace(rng):
    for _ in range(10):
        a = random_density(rng, 8, [2, 2, 2], floor=0.01)
        b = random_density(rng, 8, [2, 2, 2], floor=0.01)
        full = relative_entropy(a, b)
        assert full >= -1e-12
        assert relative_entropy(partial_trace(a, [0, 1]), partial_trace(b, [0, 1])) <= full + 1e-10


# ---------------------------------------------------------------- alpha family


def test_alpha_power_examples(rng):
    rho = random_density(rng, 3, floor=0.05)
    b = b_operator(rho)
    np.testing.assert_allclose(alpha_power(b, 1).matrix, b.matrix)
    np.testing.assert_allclose(alpha_power(b, 2).matrix, b.matrix @ b.matrix, atol=1e-12)
    g = alpha_power(b, 1.0, shift="ground")
    assert g.eigenvalues[0] == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(alpha_power(b, 2, shift=-0.5).matrix, (b.matrix + 0.5 * np.eye(3)) @ (b.matrix + 0.5 * np.eye(3)), atol=1e-12)


def test_alpha_power_domain():
    with pytest.raises(DomainError):
        alpha_power(SIGMA_Z, 0.5)
    with pytest.raises(ValueError):
        alpha_power(SIGMA_Z, 0.0)
    with pytest.raises(ValueError):
        alpha_power(SIGMA_Z, 2.0, shift="top")


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), alpha=st.floats(0.2, 6.0))
def test_global_passivity_under_unitary_mixtures(seed, alpha):
    rng = np.random.default_rng(seed)
    rho0 = random_density(rng, 4, floor=1e-3)
    b = b_operator(rho0)
    rf = random_mixture(rng, rho0)
    traj = Trajectory([0.0, 1.0], [rho0, rf])
    for shift in (None, "ground"):
        d = alpha_gpi_series(b, traj, [alpha], shift)[alpha]
        assert d[0] == 0.0
        assert d[1] >= -1e-10


def test_alpha_series_detects_amplitude_damping():
    rho0 = DensityMatrix(np.diag([0.2, 0.8]))
    b = b_operator(rho0)
    # damping toward |1>: the more populated level, so B decreases
    traj = lindblad_evolve(rho0, np.zeros((2, 2)), [(SIGMA_MINUS, 1.0)], T=1.0, dt=1e-3, times=[0.0, 0.5, 1.0])
    d = alpha_gpi_series(b, traj, [1.0])[1.0]
    assert np.all(d[1:] < 0)
    assert first_violation(traj.times, d) == 0.5


def test_violation_mask_relative_threshold():
    lhs = np.array([0.0, -1e-9, 10.0, -5e-8, -1e-6])
    np.testing.assert_array_equal(violation_mask(lhs), [False, False, False, False, True])
    assert first_violation(np.arange(5.0), lhs) == 4.0
    assert first_violation(np.arange(3.0), np.zeros(3)) is None


def test_hierarchy_under_unitary_mixtures(rng):
    for _ in range(20):
        rho0 = random_density(rng, 4, floor=1e-3)
        b = b_operator(rho0)
        res = hierarchy_check(b, rho0, random_mixture(rng, rho0))
        assert res.holds, res.normalized
        assert np.all(res.normalized >= -1e-12)


def test_hierarchy_reports_nonunital_break():
    rho0 = DensityMatrix(np.diag([0.2, 0.8]))
    rhof = DensityMatrix(np.diag([0.05, 0.95]))
    res = hierarchy_check(b_operator(rho0), rho0, rhof)
    assert not res.holds and res.slack < 0
    with pytest.raises(ValueError):
        hierarchy_check(b_operator(rho0), rho0, rhof, exponents=(2, 1))


# ---------------------------------------------------------------- CI / CCI report


def product_setup():
    subs = [
        SubsystemSpec("s", SIGMA_Z, SYSTEM),
        SubsystemSpec("b0", 0.7 * SIGMA_Z, MICROBATH, 1.0),
        SubsystemSpec("b1", 1.3 * SIGMA_Z, MICROBATH, 0.3),
    ]
    return SetupDescriptor(subs)


def test_report_product_state_random_unitary(rng):
    setup = product_setup()
    rho0 = product_initial_state(setup, random_density(rng, 2, floor=0.1))
    h = random_hermitian(rng, 8)
    traj = run_protocol(setup, rho0, [Unitary(HermitianOperator(h.matrix, setup.dims), 2.0)], grid=np.linspace(0, 2, 9))
    rep = ci_cci_report(setup, rho0, traj, alphas=(1.0, 2.0))
    for key in ("relative_entropy_identity", "observable_only_slack", "product_state_degeneracy"):
        assert key in rep.invariants
    np.testing.assert_allclose(rep.ci_lhs, rep.cci_lhs, atol=1e-9)
    np.testing.assert_allclose(rep.obs_only_lhs - rep.ci_lhs, rep.relative_entropy_sys, atol=1e-9)
    assert np.all(rep.ci_lhs >= -1e-10)
    assert not any(rep.flags.values())
    assert rep.first_violations()["ci"] is None
    # passivity-divergence: Delta<B> >= D(rho_t || rho_0)
    assert np.all(rep.delta_b_tot - rep.relative_entropy_tot >= -1e-10)


def test_report_heat_oracle(rng):
    setup = product_setup()
    rho0 = product_initial_state(setup, random_density(rng, 2, floor=0.1))
    u = random_unitary(rng, 8)
    rf = DensityMatrix(u @ rho0.matrix @ u.conj().T, setup.dims)
    rep = ci_cci_report(setup, rho0, Trajectory([0.0, 1.0], [rho0, rf]))
    hb0 = embed_local(0.7 * SIGMA_Z, 1, setup.dims).matrix
    want = np.trace((rf.matrix - rho0.matrix) @ hb0).real
    assert rep.heat["b0"][1] == pytest.approx(want, abs=1e-12)


def test_report_correlated_start_breaks_ci_only():
    h_loc = 0.5 * SIGMA_Z
    rho0 = correlated_pair_state(1 / 1.5, 1 / 2.5, -0.19, h_cold=h_loc, h_hot=h_loc)
    setup = SetupDescriptor(
        [SubsystemSpec("c", h_loc, SYSTEM), SubsystemSpec("h", h_loc, MICROBATH, 1 / 2.5)],
        explicit_initial_state=rho0,
    )
    h = setup.bare_hamiltonian() + exchange_hamiltonian()
    traj = run_protocol(setup, rho0, [Unitary(h, np.pi)], grid=np.linspace(0, np.pi, 41))
    rep = ci_cci_report(setup, rho0, traj)
    assert "product_state_degeneracy" not in rep.invariants
    assert rep.ci_lhs.min() < -0.05
    assert rep.cci_lhs.min() >= -1e-10
    assert rep.flags["ci"] and not rep.flags["cci"]


def test_report_mean_force_split():
    h_i0 = HermitianOperator(0.4 * (kron(SIGMA_X, SIGMA_X)), [2, 2])
    setup = SetupDescriptor(
        [SubsystemSpec("s", SIGMA_Z, SYSTEM), SubsystemSpec("h", SIGMA_Z, MICROBATH, 0.8)],
        initial_coupling=h_i0,
        coupled_bath="h",
    )
    rho0 = coupled_thermal_state(setup)
    h = setup.bare_hamiltonian() + exchange_hamiltonian(0.5, 0.0)
    traj = run_protocol(setup, rho0, [Unitary(h, 3.0)], grid=np.linspace(0, 3, 13))
    rep = ci_cci_report(setup, rho0, traj)
    assert "mean_force_split" in rep.invariants
    ct = rep.coupled_terms
    np.testing.assert_allclose(
        ct["beta_q_bare"] + ct["beta_h_delta_coupling"] + ct["beta_h_delta_dressing"],
        rep.cci_lhs - (rep.ci_lhs - rep.heat["h"] * 0.8),
        atol=1e-9,
    )
    assert rep.cci_lhs.min() >= -1e-10


def test_report_needs_system():
    setup = SetupDescriptor([SubsystemSpec("b", SIGMA_Z, MICROBATH, 1.0)])
    rho0 = product_initial_state(setup)
    with pytest.raises(PreconditionError):
        ci_cci_report(setup, rho0, Trajectory([0.0], [rho0]))


def test_invariant_violation_is_assertion():
    assert issubclass(InvariantViolation, AssertionError)


# ---------------------------------------------------------------- dephasing bounds


def dephasing_run(beta=1.0, beta_x=0.5, xis=(0.7, 0.5), t_max=6.0, n=31):
    setup, rho0 = dephasing_setup(beta, beta_x, len(xis))
    dims = setup.dims
    sz0 = embed_local(SIGMA_Z, 0, dims).matrix
    h_i = HermitianOperator(sum(x * embed_local(SIGMA_Z, i + 1, dims).matrix @ sz0 for i, x in enumerate(xis)), dims)
    traj = run_protocol(setup, rho0, [Unitary(setup.bare_hamiltonian() + h_i, t_max)], grid=np.linspace(0, t_max, n))
    return setup, rho0, h_i, traj


def test_dephasing_slacks_equal_alpha_deltas():
    beta, beta_x = 1.0, 0.5
    setup, rho0, h_i, traj = dephasing_run(beta, beta_x)
    db = dephasing_covariance_bounds(setup, traj, h_i, beta_x)
    db.check()
    b_tilde = alpha_power(b_operator(rho0), 1.0, shift="ground")
    d2 = alpha_gpi_series(b_tilde, traj, [2.0])[2.0]
    d3 = alpha_gpi_series(b_tilde, traj, [3.0])[3.0]
    np.testing.assert_allclose(db.cov_1 - db.lower_cov_1, d2 / (2 * beta * beta_x), atol=1e-10)
    np.testing.assert_allclose(db.cov_2 - db.lower_cov_2, d3 / (3 * beta_x), atol=1e-10)
    pulsed = Trajectory(traj.times, [pi_pulse(r, 0, "Z") for r in traj.states])
    d2p = alpha_gpi_series(b_tilde, pulsed, [2.0], rho0=rho0)[2.0]
    d3p = alpha_gpi_series(b_tilde, pulsed, [3.0], rho0=rho0)[3.0]
    np.testing.assert_allclose(db.upper_cov_1 - db.cov_1, d2p / (2 * beta * beta_x), atol=1e-10)
    np.testing.assert_allclose(db.upper_cov_2 - db.cov_2, d3p / (3 * beta_x), atol=1e-10)


def test_dephasing_constants():
    beta, beta_x = 1.0, 0.5
    setup, rho0, h_i, traj = dephasing_run(beta, beta_x, xis=(0.7,))
    db = dephasing_covariance_bounds(setup, traj, h_i, beta_x)
    # one bath spin, H~ = sigma_z + 1 takes values 0 (weight e) and 2 (weight e^-1)
    p2 = np.exp(-2 * beta) / (1 + np.exp(-2 * beta))
    h_mean = 2 * p2
    p_mean = p2 * (4 * beta**2 + 4 * beta * beta_x)
    assert db.k1 == pytest.approx(beta_x / beta + h_mean)
    assert db.c0 == pytest.approx(-(4 / 3 * beta_x**2 + p_mean))
    assert db.c0 < 0
    assert abs(db.corr_1[0]) < 1e-12 and db.sx[0] == pytest.approx(-np.tanh(beta_x))


def test_dephasing_rejects_non_commuting_interaction():
    setup, rho0, _, traj = dephasing_run(xis=(0.7,))
    bad = HermitianOperator(kron(SIGMA_X, SIGMA_Z), setup.dims)
    with pytest.raises(PreconditionError, match="commute"):
        dephasing_covariance_bounds(setup, traj, bad, 0.5)


# ---------------------------------------------------------------- dressing term


def spectral_ln_f(hb_factor, hb, beta, x):
    wb, vb = np.linalg.eigh(hb)
    rho_b = (vb * np.exp(-beta * wb)) @ vb.conj().T
    wf, vf = np.linalg.eigh(hb_factor)
    ex = (vf * np.exp(x * wf)) @ vf.conj().T
    return float(np.log(np.trace(rho_b @ ex).real))


@pytest.mark.parametrize("epsilon", [1e-3, 0.05, 0.4, 2.0])
def test_dressing_matches_spectral_oracle(epsilon):
    beta = 0.8
    hb = kron(SIGMA_Z, np.eye(2)) + 0.5 * kron(np.eye(2), SIGMA_Z)
    hbf = kron(SIGMA_Z, SIGMA_Z)
    exact, first = dephasing_dressing_term(SIGMA_Z, hbf, hb, beta, epsilon)
    for k, s in enumerate((1.0, -1.0)):
        idx = 0 if s == 1.0 else 1
        assert exact.matrix[idx, idx].real == pytest.approx(spectral_ln_f(hbf, hb, beta, -beta * epsilon * s), abs=1e-12)
    # beta (H_eff - H_s) = -ln f, checked against the mean-force Hamiltonian
    h_eff = effective_system_hamiltonian(SIGMA_Z, epsilon * kron(SIGMA_Z, hbf), hb, beta).matrix
    np.testing.assert_allclose(beta * (h_eff - SIGMA_Z), -exact.matrix, atol=1e-10)


def test_dressing_first_order_finite_difference():
    beta = 1.1
    hb = SIGMA_Z
    eps = np.array([1e-4, 2e-4, 4e-4])
    err = []
    for e in eps:
        exact, first = dephasing_dressing_term(SIGMA_Z, SIGMA_Z, hb, beta, e)
        err.append(np.max(np.abs(exact.matrix - first.matrix)))
    # the remainder is second order in epsilon
    ratios = np.array(err) / eps**2
    assert np.all(np.isfinite(ratios))
    assert ratios.max() / ratios.min() < 1.01
    assert ratios[0] == pytest.approx(beta**2 * (1 - np.tanh(beta) ** 2) / 2, rel=1e-3)
