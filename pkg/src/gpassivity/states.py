"""Initial states of few-spin setups and the B-operators (``-ln rho0``) built from them."""

from __future__ import annotations

from dataclasses import dataclass, field
from math import prod
from typing import Sequence

import numpy as np

from .errors import (
    DimensionError,
    InfeasibleCorrelationError,
    PreconditionError,
    SingularStateError,
)
from .linalg import (
    SIGMA_Z,
    DensityMatrix,
    HermitianOperator,
    as_operator,
    embed_local,
    kron,
    matrix_function,
    partial_trace,
)

FULL_RANK_TOL = 1e-12

SYSTEM = "system"
MICROBATH = "microbath"


@dataclass
class SubsystemSpec:
    """One tensor factor of the setup."""

    name: str
    local_hamiltonian: HermitianOperator
    role: str = MICROBATH
    beta: float | None = None

    def __post_init__(self):
        self.local_hamiltonian = as_operator(self.local_hamiltonian)
        if self.role not in (SYSTEM, MICROBATH):
            raise ValueError(f"role must be 'system' or 'microbath', got {self.role!r}")
        if self.role == MICROBATH:
            if self.beta is None or self.beta < 0:
                raise ValueError(f"microbath {self.name!r} needs an inverse temperature beta >= 0")
            self.beta = float(self.beta)
        elif self.beta is not None:
            raise ValueError(f"system {self.name!r} must not carry a beta")

    @property
    def dim(self) -> int:
        return self.local_hamiltonian.dim


@dataclass
class SetupDescriptor:
    """Subsystems in tensor order plus optional initial coupling and partition.

    ``coupled_bath`` names the microbath that is thermalized jointly with the system
    through ``initial_coupling``. When omitted it is inferred from the coupling's support.
    ``partition`` defaults to (system factors, microbath factors).
    """

    subsystems: list[SubsystemSpec]
    initial_coupling: HermitianOperator | None = None
    coupled_bath: str | None = None
    explicit_initial_state: DensityMatrix | None = None
    partition: tuple[tuple[int, ...], tuple[int, ...]] | None = None

    def __post_init__(self):
        names = [s.name for s in self.subsystems]
        if len(set(names)) != len(names):
            raise ValueError(f"subsystem names must be unique: {names}")
        if self.partition is None:
            sys_idx = tuple(i for i, s in enumerate(self.subsystems) if s.role == SYSTEM)
            env_idx = tuple(i for i, s in enumerate(self.subsystems) if s.role == MICROBATH)
            self.partition = (sys_idx, env_idx)
        else:
            self.partition = (tuple(self.partition[0]), tuple(self.partition[1]))
        covered = sorted(self.partition[0] + self.partition[1])
        if covered != list(range(len(self.subsystems))):
            raise DimensionError(f"partition {self.partition} must cover every factor exactly once")
        if self.initial_coupling is not None:
            self.initial_coupling = as_operator(self.initial_coupling, self.dims)
            if self.initial_coupling.dims != self.dims:
                raise DimensionError("initial coupling must act on the full space")
        if self.explicit_initial_state is not None and self.explicit_initial_state.dims != self.dims:
            raise DimensionError("explicit initial state dims do not match the setup")

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(s.dim for s in self.subsystems)

    @property
    def system_indices(self) -> tuple[int, ...]:
        return self.partition[0]

    @property
    def environment_indices(self) -> tuple[int, ...]:
        return self.partition[1]

    def index(self, name: str) -> int:
        for i, s in enumerate(self.subsystems):
            if s.name == name:
                return i
        raise KeyError(name)

    def microbaths(self) -> list[tuple[int, SubsystemSpec]]:
        return [(i, s) for i, s in enumerate(self.subsystems) if s.role == MICROBATH]

    def local_hamiltonian(self, i: int) -> HermitianOperator:
        """Local Hamiltonian of factor ``i`` embedded in the full space."""
        return embed_local(self.subsystems[i].local_hamiltonian, i, self.dims)

    def bare_hamiltonian(self) -> HermitianOperator:
        dims = self.dims
        total = np.zeros((prod(dims),) * 2, dtype=complex)
        for i in range(len(self.subsystems)):
            total += self.local_hamiltonian(i).matrix
        return HermitianOperator(total, dims, check=False)


@dataclass
class BOperators:
    """``b_tot = -ln rho0`` and its split into marginal and correlation parts.

    ``b_sys``/``b_env`` live on the system/environment factors; ``b_corr`` on the full
    space. ``log_partition`` is the smallest eigenvalue of ``b_tot`` (``ln Z0`` measured
    from the ground level, so ``b_tot - log_partition`` has ground value 0).
    """

    b_tot: HermitianOperator
    b_sys: HermitianOperator | None
    b_env: HermitianOperator | None
    b_corr: HermitianOperator
    log_partition: float
    partition: tuple[tuple[int, ...], tuple[int, ...]] = field(default=((), ()))

    def b_sys_full(self) -> HermitianOperator:
        return _lift(self.b_sys, self.partition[0], self.b_tot.dims)

    def b_env_full(self) -> HermitianOperator:
        return _lift(self.b_env, self.partition[1], self.b_tot.dims)


def gibbs_state(h, beta: float) -> DensityMatrix:
    """``exp(-beta H) / tr exp(-beta H)``, with the spectrum shifted before exponentiating."""
    if beta < 0:
        raise ValueError(f"beta must be non-negative, got {beta}")
    h = as_operator(h)
    w = h.eigenvalues
    shift = w[0] if beta > 0 else 0.0
    unnorm = matrix_function(h, lambda x: np.exp(-beta * (x - shift)))
    m = unnorm.matrix / np.trace(unnorm.matrix).real
    return DensityMatrix(m, h.dims)


def permute_factors(m: np.ndarray, dims: Sequence[int], order: Sequence[int]) -> np.ndarray:
    """Reorder tensor factors: factor ``order[k]`` of the input becomes factor ``k``."""
    dims = list(dims)
    n = len(dims)
    t = m.reshape(dims + dims)
    t = t.transpose(list(order) + [n + o for o in order])
    d = prod(dims)
    return t.reshape(d, d)


def product_initial_state(setup: SetupDescriptor, system_state=None) -> DensityMatrix:
    """Tensor product of the system state and a Gibbs state per microbath.

    ``system_state`` spans all system factors in setup order.

    Raises:
        PreconditionError: the setup carries an initial coupling, or the presence of
            ``system_state`` does not match the presence of system factors.
        SingularStateError: ``system_state`` is rank deficient.
    """
    if setup.initial_coupling is not None:
        raise PreconditionError("setup has an initial coupling; use coupled_thermal_state")
    sys_idx = [i for i, s in enumerate(setup.subsystems) if s.role == SYSTEM]
    if bool(sys_idx) != (system_state is not None):
        raise PreconditionError("system_state must be given exactly when the setup has a system")
    dims = list(setup.dims)
    blocks, order = [], []
    if sys_idx:
        rs = system_state if isinstance(system_state, DensityMatrix) else DensityMatrix(system_state)
        if prod(dims[i] for i in sys_idx) != rs.dim:
            raise DimensionError("system_state dimension does not match the system factors")
        lam = rs.eigenvalues[0]
        if lam <= FULL_RANK_TOL:
            raise SingularStateError(
                f"system state is rank deficient (min eigenvalue {lam:.3e}); B is undefined",
                eigenvalue=float(lam),
            )
        blocks.append(rs.matrix)
        order.extend(sys_idx)
    for i, s in setup.microbaths():
        blocks.append(gibbs_state(s.local_hamiltonian, s.beta).matrix)
        order.append(i)
    m = kron(*blocks) if blocks else np.eye(1)
    # `order[k]` is the setup index of block factor k; invert to setup order
    block_dims = [dims[i] for i in order]
    inv = [order.index(i) for i in range(len(dims))]
    return DensityMatrix(permute_factors(m, block_dims, inv), dims)


def _coupling_support(op: HermitianOperator) -> list[int]:
    """Factors on which ``op`` acts non-trivially."""
    return [i for i in range(len(op.dims)) if not np.allclose(op.matrix, _identity_on(op, i), atol=1e-12)]


def _identity_on(op: HermitianOperator, i: int) -> np.ndarray:
    """Project ``op`` onto operators acting as identity on factor ``i``."""
    dims = list(op.dims)
    red = partial_trace(op, [j for j in range(len(dims)) if j != i]).matrix / dims[i]
    # insert the identity back at position i
    rest = [j for j in range(len(dims)) if j != i]
    full = kron(red, np.eye(dims[i]))
    order = rest + [i]
    block_dims = [dims[j] for j in order]
    inv = [order.index(j) for j in range(len(dims))]
    return permute_factors(full, block_dims, inv)


def coupled_thermal_state(setup: SetupDescriptor) -> DensityMatrix:
    """Joint Gibbs state of system + coupled microbath times Gibbs states of the rest.

    The exponent is ``beta_h (H_s + H_h + H_I0) + sum_k beta_k H_k`` over the remaining
    microbaths; since the blocks commute, this factorizes exactly as
    ``exp(-beta_h(...)) exp(-beta_c H_c) / (Z_hs Z_c)``.

    Raises:
        PreconditionError: no coupling, or the coupling touches factors outside the
            system + coupled-bath block.
    """
    if setup.initial_coupling is None:
        raise PreconditionError("setup has no initial coupling")
    support = _coupling_support(setup.initial_coupling)
    sys_idx = set(i for i, s in enumerate(setup.subsystems) if s.role == SYSTEM)
    if setup.coupled_bath is not None:
        hot = setup.index(setup.coupled_bath)
    else:
        baths = [i for i in support if i not in sys_idx]
        if len(baths) > 1:
            raise PreconditionError(f"coupling acts on several microbaths {baths}")
        if not baths:
            # pure system term, any bath works only if there is exactly one
            mb = setup.microbaths()
            if len(mb) != 1:
                raise PreconditionError("cannot infer the coupled microbath; set coupled_bath")
            baths = [mb[0][0]]
        hot = baths[0]
    if setup.subsystems[hot].role != MICROBATH:
        raise PreconditionError(f"coupled bath {setup.subsystems[hot].name!r} is not a microbath")
    block = sys_idx | {hot}
    outside = [i for i in support if i not in block]
    if outside:
        names = [setup.subsystems[i].name for i in outside]
        raise PreconditionError(f"initial coupling acts on factors outside the coupled block: {names}")
    beta_h = setup.subsystems[hot].beta
    dims = setup.dims
    exponent = beta_h * setup.initial_coupling.matrix
    for i, s in enumerate(setup.subsystems):
        coef = beta_h if i in block else s.beta
        exponent = exponent + coef * setup.local_hamiltonian(i).matrix
    return gibbs_state(HermitianOperator(exponent, dims, check=False), 1.0)


def correlated_pair_state(
    beta_c: float,
    beta_h: float,
    C: float,
    h_cold=None,
    h_hot=None,
) -> DensityMatrix:
    """Two-qubit state ``rho_c (x) rho_h + C(|01><10| + |10><01|)`` (cold qubit first).

    Both marginals are the uncorrelated Gibbs states for any feasible ``C``.

    Raises:
        InfeasibleCorrelationError: ``|C|`` exceeds ``sqrt(p_01 p_10)``; the error carries
            the bound.
    """
    h_cold = HermitianOperator(SIGMA_Z) if h_cold is None else as_operator(h_cold)
    h_hot = HermitianOperator(SIGMA_Z) if h_hot is None else as_operator(h_hot)
    if h_cold.dim != 2 or h_hot.dim != 2:
        raise DimensionError("correlated pair is defined for two qubits")
    rc = gibbs_state(h_cold, beta_c).matrix
    rh = gibbs_state(h_hot, beta_h).matrix
    m = kron(rc, rh)
    bound = float(np.sqrt(m[1, 1].real * m[2, 2].real))
    if abs(C) > bound:
        raise InfeasibleCorrelationError(
            f"correlation C={C} is not PSD-feasible; |C| must be <= {bound:.6f}", bound=bound
        )
    m = m.copy()
    m[1, 2] += C
    m[2, 1] += C
    return DensityMatrix(m, [2, 2])


def correlation_bound(beta_c: float, beta_h: float, h_cold=None, h_hot=None) -> float:
    """Largest ``|C|`` for which :func:`correlated_pair_state` is positive semidefinite."""
    h_cold = HermitianOperator(SIGMA_Z) if h_cold is None else as_operator(h_cold)
    h_hot = HermitianOperator(SIGMA_Z) if h_hot is None else as_operator(h_hot)
    m = kron(gibbs_state(h_cold, beta_c).matrix, gibbs_state(h_hot, beta_h).matrix)
    return float(np.sqrt(m[1, 1].real * m[2, 2].real))


def b_operator(rho0) -> HermitianOperator:
    """``B = -ln rho0`` for a full-rank state.

    Raises:
        SingularStateError: the smallest eigenvalue is ``<= 1e-12``.
    """
    rho0 = as_operator(rho0)
    lam = rho0.eigenvalues[0]
    if lam <= FULL_RANK_TOL:
        raise SingularStateError(
            f"state is not full rank (min eigenvalue {lam:.3e}); -ln rho0 is undefined",
            eigenvalue=float(lam),
        )
    return matrix_function(rho0, lambda x: -np.log(x), domain="positive")


def _lift(op: HermitianOperator | None, factors: Sequence[int], dims: Sequence[int]) -> HermitianOperator:
    """Embed an operator on ``factors`` (ascending) into the full space."""
    dims = list(dims)
    d = prod(dims)
    if op is None or not factors:
        return HermitianOperator(np.zeros((d, d)), dims, check=False)
    factors = list(factors)
    rest = [i for i in range(len(dims)) if i not in factors]
    full = kron(op.matrix, np.eye(prod(dims[i] for i in rest)))
    order = factors + rest
    inv = [order.index(i) for i in range(len(dims))]
    return HermitianOperator(permute_factors(full, [dims[i] for i in order], inv), dims, check=False)


def b_correlation_split(rho0, partition) -> BOperators:
    """``b_corr = b_tot - b_sys (x) I - I (x) b_env`` from the state and its marginals.

    An empty system (or environment) side contributes a zero operator.
    """
    rho0 = as_operator(rho0)
    sys_idx, env_idx = tuple(partition[0]), tuple(partition[1])
    b_tot = b_operator(rho0)
    b_sys = b_operator(partial_trace(rho0, sys_idx)) if sys_idx else None
    b_env = b_operator(partial_trace(rho0, env_idx)) if env_idx else None
    corr = b_tot.matrix - _lift(b_sys, sys_idx, rho0.dims).matrix - _lift(b_env, env_idx, rho0.dims).matrix
    return BOperators(
        b_tot=b_tot,
        b_sys=b_sys,
        b_env=b_env,
        b_corr=HermitianOperator(corr, rho0.dims, check=False),
        log_partition=float(b_tot.eigenvalues[0]),
        partition=(sys_idx, env_idx),
    )


def gell_mann_basis(n: int) -> list[np.ndarray]:
    """Traceless Hermitian generalized Gell-Mann matrices with ``tr(Z_i Z_j) = delta_ij``."""
    basis = []
    for j in range(n):
        for k in range(j + 1, n):
            s = np.zeros((n, n), dtype=complex)
            s[j, k] = s[k, j] = 1
            basis.append(s / np.sqrt(2))
            a = np.zeros((n, n), dtype=complex)
            a[j, k], a[k, j] = -1j, 1j
            basis.append(a / np.sqrt(2))
    for l in range(1, n):
        d = np.zeros((n, n), dtype=complex)
        d[np.arange(l), np.arange(l)] = 1
        d[l, l] = -l
        basis.append(d / np.sqrt(l * (l + 1)))
    return basis


@dataclass
class BDecomposition:
    """Local, local and interaction parts of an operator on ``A (x) B``."""

    b_a: HermitianOperator
    b_b: HermitianOperator
    b_int: HermitianOperator
    identity_part: HermitianOperator
    r_a: np.ndarray
    r_b: np.ndarray
    t: np.ndarray

    def reconstruct(self) -> HermitianOperator:
        return self.b_a + self.b_b + self.b_int + self.identity_part


def b_general_decomposition(b_tot, dims_ab: tuple[int, int]) -> BDecomposition:
    """Expand ``b_tot`` on ``{Z_i (x) I/N_B, I/N_A (x) Z_j, Z_i (x) Z_j}`` plus identity.

    ``r_a[i] = tr[(Z_i (x) I) b]``, ``r_b[j] = tr[(I (x) Z_j) b]`` and
    ``t[i, j] = tr[(Z_i (x) Z_j) b]``; all returned parts act on the full space.
    """
    na, nb = (int(x) for x in dims_ab)
    b = as_operator(b_tot).matrix
    if b.shape != (na * nb, na * nb):
        raise DimensionError(f"operator of size {b.shape[0]} is not on a {na}x{nb} bipartition")
    za, zb = gell_mann_basis(na), gell_mann_basis(nb)
    ia, ib = np.eye(na), np.eye(nb)
    r_a = np.array([np.trace(kron(z, ib) @ b).real for z in za])
    r_b = np.array([np.trace(kron(ia, z) @ b).real for z in zb])
    t = np.array([[np.trace(kron(x, y) @ b).real for y in zb] for x in za]).reshape(len(za), len(zb))
    dims = [na, nb]
    part_a = sum((r * kron(z, ib / nb) for r, z in zip(r_a, za)), np.zeros_like(b))
    part_b = sum((r * kron(ia / na, z) for r, z in zip(r_b, zb)), np.zeros_like(b))
    part_int = np.zeros_like(b)
    for i, x in enumerate(za):
        for j, y in enumerate(zb):
            part_int = part_int + t[i, j] * kron(x, y)
    ident = np.trace(b).real / (na * nb) * np.eye(na * nb)
    return BDecomposition(
        b_a=HermitianOperator(part_a, dims, check=False),
        b_b=HermitianOperator(part_b, dims, check=False),
        b_int=HermitianOperator(part_int, dims, check=False),
        identity_part=HermitianOperator(ident, dims, check=False),
        r_a=r_a,
        r_b=r_b,
        t=t,
    )


def effective_system_hamiltonian(h_s, h_i0, h_h, beta_h: float) -> HermitianOperator:
    """Potential-of-mean-force Hamiltonian ``-(1/beta) ln tr_h exp(-beta(H_s + H_I0 + H_h))``.

    ``h_i0`` acts on ``system (x) bath`` (system factor first).
    """
    if beta_h <= 0:
        raise ValueError("beta_h must be positive")
    h_s, h_h = as_operator(h_s), as_operator(h_h)
    ds, dh = h_s.dim, h_h.dim
    h_i0 = np.zeros((ds * dh,) * 2) if h_i0 is None else as_operator(h_i0).matrix
    total = HermitianOperator(kron(h_s.matrix, np.eye(dh)) + h_i0 + kron(np.eye(ds), h_h.matrix), [ds, dh])
    e0 = total.eigenvalues[0]
    unnorm = matrix_function(total, lambda x: np.exp(-beta_h * (x - e0)))
    red = partial_trace(unnorm, [0])
    log_red = matrix_function(red, np.log, domain="positive")
    return HermitianOperator(-log_red.matrix / beta_h + e0 * np.eye(ds), [ds], check=False)
