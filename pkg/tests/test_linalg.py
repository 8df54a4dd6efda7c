import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpassivity.errors import (
    DimensionError,
    DomainError,
    NonHermitianError,
    NotADensityMatrixError,
    PauliTermError,
    SingularStateError,
)
from gpassivity.linalg import (
    SIGMA_X,
    SIGMA_Z,
    DensityMatrix,
    HermitianOperator,
    PauliTerm,
    build_pauli_operator,
    eig_hermitian,
    embed_local,
    matrix_function,
    operator_norm,
    parse_pauli_term,
    partial_trace,
    unitary_from_hamiltonian,
)
from helpers import random_density, random_hermitian

PAULI_ENTRY = {
    "I": lambda a, b: float(a == b),
    "X": lambda a, b: float(a != b),
    "Z": lambda a, b: float(a == b) * (1 - 2 * a),
}


def pauli_string_oracle(coef, factors, n):
    """Entry-by-entry product over sites; bit 0 of a site is the up state."""
    ops = ["I"] * n
    for s, a in factors:
        ops[s] = a
    d = 2**n
    m = np.zeros((d, d))
    for r in range(d):
        for c in range(d):
            rb = [(r >> (n - 1 - k)) & 1 for k in range(n)]
            cb = [(c >> (n - 1 - k)) & 1 for k in range(n)]
            m[r, c] = coef * np.prod([PAULI_ENTRY[ops[k]](rb[k], cb[k]) for k in range(n)])
    return m


# ---------------------------------------------------------------- construction


def test_single_pauli_z():
    op = build_pauli_operator([PauliTerm(1.0, ((0, "Z"),))], 1)
    np.testing.assert_array_equal(op.matrix, np.diag([1, -1]))


def test_empty_sum_is_zero():
    op = build_pauli_operator([], 2)
    assert op.matrix.shape == (4, 4)
    assert not op.matrix.any()
    assert op.dims == (2, 2)


def test_zz_on_four_sites_matches_index_oracle():
    op = build_pauli_operator([parse_pauli_term(0.7, "Z0 Z3")], 4)
    np.testing.assert_allclose(op.matrix, pauli_string_oracle(0.7, [(0, "Z"), (3, "Z")], 4), atol=0)


def test_mixed_string_matches_index_oracle():
    op = build_pauli_operator([parse_pauli_term(-1.3, "X1 Z2")], 3)
    np.testing.assert_allclose(op.matrix, pauli_string_oracle(-1.3, [(1, "X"), (2, "Z")], 3), atol=0)


def test_identity_term():
    op = build_pauli_operator([parse_pauli_term(2.5, "")], 2)
    np.testing.assert_allclose(op.matrix, 2.5 * np.eye(4))


def test_pauli_site_out_of_range():
    with pytest.raises(PauliTermError, match="Z9"):
        build_pauli_operator([parse_pauli_term(1.0, "Z9")], 4)


def test_pauli_duplicate_site():
    with pytest.raises(PauliTermError, match="duplicate"):
        parse_pauli_term(1.0, "Z1 X1")


def test_pauli_bad_token():
    with pytest.raises(PauliTermError):
        parse_pauli_term(1.0, "Q0")


def test_embed_single_factor():
    np.testing.assert_array_equal(embed_local(SIGMA_X, 0, [2]).matrix, SIGMA_X)


def test_embed_identity():
    np.testing.assert_array_equal(embed_local(np.eye(2), 1, [2, 2]).matrix, np.eye(4))


def test_embed_z_second_site():
    np.testing.assert_array_equal(embed_local(SIGMA_Z, 1, [2, 2]).matrix, np.diag([1, -1, 1, -1]))


def test_embed_qudit_index_oracle():
    rng = np.random.default_rng(1)
    op = rng.normal(size=(3, 3))
    full = embed_local(op, 1, [2, 3, 2])
    full = full.matrix if hasattr(full, "matrix") else full
    for r, c in itertools.product(range(12), repeat=2):
        r0, r1, r2 = r // 6, (r // 2) % 3, r % 2
        c0, c1, c2 = c // 6, (c // 2) % 3, c % 2
        want = op[r1, c1] if (r0 == c0 and r2 == c2) else 0.0
        assert full[r, c] == pytest.approx(want)


def test_embed_dimension_mismatch():
    with pytest.raises(DimensionError):
        embed_local(np.eye(3), 0, [2, 2])


# ---------------------------------------------------------------- spectra


def test_eig_sigma_x():
    w, v = eig_hermitian(HermitianOperator(SIGMA_X))
    np.testing.assert_allclose(w, [-1, 1])
    minus = np.array([1, -1]) / np.sqrt(2)
    plus = np.array([1, 1]) / np.sqrt(2)
    assert abs(abs(np.vdot(minus, v[:, 0])) - 1) < 1e-12
    assert abs(abs(np.vdot(plus, v[:, 1])) - 1) < 1e-12


def test_eig_identity():
    w, v = eig_hermitian(HermitianOperator(np.eye(5)))
    np.testing.assert_allclose(w, np.ones(5))
    np.testing.assert_allclose(v.conj().T @ v, np.eye(5), atol=1e-12)


def test_eig_reconstruction(rng):
    a = random_hermitian(rng, 8)
    w, v = eig_hermitian(a)
    assert np.all(np.diff(w) >= 0)
    np.testing.assert_allclose(v.conj().T @ v, np.eye(8), atol=1e-10)
    rel = np.linalg.norm((v * w) @ v.conj().T - a.matrix) / np.linalg.norm(a.matrix)
    assert rel < 1e-10


def test_non_hermitian_rejected():
    with pytest.raises(NonHermitianError):
        HermitianOperator(np.array([[0, 1], [0, 0]]))


def test_density_checks():
    with pytest.raises(NotADensityMatrixError):
        DensityMatrix(np.eye(2))
    with pytest.raises(NotADensityMatrixError):
        DensityMatrix(np.diag([1.5, -0.5]))
    DensityMatrix(np.diag([1 + 5e-11, -5e-11]))


def test_dims_must_match_size():
    with pytest.raises(DimensionError):
        HermitianOperator(np.eye(4), [2, 3])


# ---------------------------------------------------------------- matrix functions


def test_sqrt_diagonal():
    out = matrix_function(HermitianOperator(np.diag([1.0, 4.0])), np.sqrt, domain="nonnegative")
    np.testing.assert_allclose(out.matrix, np.diag([1, 2]), atol=1e-14)


def test_identity_function(rng):
    a = random_hermitian(rng, 6)
    np.testing.assert_allclose(matrix_function(a, lambda x: x).matrix, a.matrix, atol=1e-12)


def test_minus_log_of_two_level_gibbs():
    z = 2 * np.cosh(1.0)
    rho = HermitianOperator(np.diag(np.exp(-np.array([1.0, -1.0]))) / z)
    out = matrix_function(rho, lambda x: -np.log(x), domain="positive")
    np.testing.assert_allclose(out.matrix, SIGMA_Z + np.log(z) * np.eye(2), atol=1e-14)


def test_log_of_singular_state_errors():
    with pytest.raises(SingularStateError):
        matrix_function(HermitianOperator(np.diag([1.0, 0.0])), np.log, domain="positive")


def test_clipping_and_domain_error():
    tiny = HermitianOperator(np.diag([-5e-11, 1.0]))
    out = matrix_function(tiny, np.sqrt, domain="nonnegative")
    assert out.matrix[0, 0] == 0.0
    with pytest.raises(DomainError):
        matrix_function(HermitianOperator(np.diag([-1e-6, 1.0])), np.sqrt, domain="nonnegative")


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_exp_log_roundtrip(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 7))
    w = rng.uniform(-20, 20, size=d)
    u = np.linalg.qr(rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)))[0]
    a = HermitianOperator((u * w) @ u.conj().T)
    back = matrix_function(matrix_function(a, np.exp), np.log, domain="positive")
    np.testing.assert_allclose(back.matrix, a.matrix, atol=1e-9)


# ---------------------------------------------------------------- unitaries


def test_unitary_zero_time(rng):
    np.testing.assert_allclose(unitary_from_hamiltonian(random_hermitian(rng, 4), 0.0), np.eye(4), atol=1e-14)


def test_unitary_sigma_z():
    u = unitary_from_hamiltonian(HermitianOperator(SIGMA_Z), np.pi / 2)
    np.testing.assert_allclose(u, np.diag([np.exp(-1j * np.pi / 2), np.exp(1j * np.pi / 2)]), atol=1e-14)


def test_unitary_sigma_x():
    u = unitary_from_hamiltonian(HermitianOperator(SIGMA_X), np.pi / 2)
    np.testing.assert_allclose(u, -1j * SIGMA_X, atol=1e-14)
    np.testing.assert_allclose(u @ u.conj().T, np.eye(2), atol=1e-10)
    np.testing.assert_allclose(u @ SIGMA_X @ u.conj().T, SIGMA_X, atol=1e-10)


# ---------------------------------------------------------------- partial trace


def partial_trace_oracle(m, dims, keep):
    """Explicit double-index summation over the traced factors."""
    n = len(dims)
    keep = sorted(keep)
    traced = [i for i in range(n) if i not in keep]
    kd = [dims[i] for i in keep]
    out = np.zeros((int(np.prod(kd)),) * 2, dtype=complex)
    for r_idx in itertools.product(*[range(dims[i]) for i in keep]):
        for c_idx in itertools.product(*[range(dims[i]) for i in keep]):
            total = 0
            for t_idx in itertools.product(*[range(dims[i]) for i in traced]):
                full_r, full_c = [0] * n, [0] * n
                for i, v in zip(keep, r_idx):
                    full_r[i] = v
                for i, v in zip(keep, c_idx):
                    full_c[i] = v
                for i, v in zip(traced, t_idx):
                    full_r[i] = full_c[i] = v
                total += m[np.ravel_multi_index(full_r, dims), np.ravel_multi_index(full_c, dims)]
            out[np.ravel_multi_index(r_idx, kd), np.ravel_multi_index(c_idx, kd)] = total
    return out


def test_partial_trace_product(rng):
    ra, rb = random_density(rng, 2), random_density(rng, 3)
    prod = DensityMatrix(np.kron(ra.matrix, rb.matrix), [2, 3])
    np.testing.assert_allclose(partial_trace(prod, [0]).matrix, ra.matrix, atol=1e-12)
    np.testing.assert_allclose(partial_trace(prod, [1]).matrix, rb.matrix, atol=1e-12)


def test_partial_trace_bell():
    phi = np.array([1, 0, 0, 1]) / np.sqrt(2)
    bell = DensityMatrix(np.outer(phi, phi), [2, 2])
    np.testing.assert_allclose(partial_trace(bell, [0]).matrix, np.eye(2) / 2, atol=1e-14)


def test_partial_trace_three_qubits_oracle(rng):
    rho = random_density(rng, 8, [2, 2, 2])
    got = partial_trace(rho, {0, 2}).matrix
    np.testing.assert_allclose(got, partial_trace_oracle(rho.matrix, [2, 2, 2], [0, 2]), atol=1e-12)


def test_partial_trace_mixed_dims_oracle(rng):
    rho = random_density(rng, 12, [3, 2, 2])
    for keep in ([0], [1], [0, 2], [1, 2]):
        np.testing.assert_allclose(
            partial_trace(rho, keep).matrix, partial_trace_oracle(rho.matrix, [3, 2, 2], keep), atol=1e-12
        )


def test_partial_trace_errors(rng):
    rho = random_density(rng, 4, [2, 2])
    with pytest.raises(DimensionError):
        partial_trace(rho, [])
    with pytest.raises(DimensionError):
        partial_trace(rho, [2])


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_partial_trace_linear_and_trace_preserving(seed, a, b):
    rng = np.random.default_rng(seed)
    m, n = random_hermitian(rng, 8), random_hermitian(rng, 8)
    m, n = HermitianOperator(m.matrix, [2, 2, 2]), HermitianOperator(n.matrix, [2, 2, 2])
    keep = [0, 2]
    lhs = partial_trace(HermitianOperator(a * m.matrix + b * n.matrix, [2, 2, 2]), keep).matrix
    rhs = a * partial_trace(m, keep).matrix + b * partial_trace(n, keep).matrix
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)
    assert abs(np.trace(partial_trace(m, [1]).matrix) - np.trace(m.matrix)) < 1e-12


def test_embed_trace_adjointness(rng):
    dims = [2, 3, 2]
    m = random_hermitian(rng, 12)
    m = HermitianOperator(m.matrix, dims)
    for s in range(3):
        op = random_hermitian(rng, dims[s]).matrix
        e = embed_local(op, s, dims)
        e = e.matrix if hasattr(e, "matrix") else e
        lhs = np.trace(e @ m.matrix)
        rhs = np.trace(op @ partial_trace(m, [s]).matrix)
        assert abs(lhs - rhs) < 1e-12


# ---------------------------------------------------------------- norms


def test_operator_norm_basic():
    assert operator_norm(HermitianOperator(SIGMA_Z)) == 1.0
    assert operator_norm(HermitianOperator(np.zeros((3, 3)))) == 0.0


def test_operator_norm_of_two_qubit_b():
    b1, b2 = 1.0, 0.5
    z = 2 * np.cosh(b1) * 2 * np.cosh(b2)
    b = HermitianOperator(
        b1 * np.kron(SIGMA_Z, np.eye(2)) + b2 * np.kron(np.eye(2), SIGMA_Z) + np.log(z) * np.eye(4)
    )
    levels = [b1 * s1 + b2 * s2 + np.log(z) for s1 in (1, -1) for s2 in (1, -1)]
    assert operator_norm(b) == pytest.approx(max(abs(x) for x in levels), abs=1e-12)
