"""Passivity tests, entropies and the inequality reports evaluated along trajectories.

Conventions:
    * Entropies and divergences are in nats.
    * ``alpha`` powers are spectral: ``B**alpha = V diag(lambda**alpha) V^dag``.
    * An inequality ``lhs >= 0`` is flagged as violated at a time where
      ``lhs < -1e-8 * max(1, running max |lhs|)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, InfiniteDivergenceError, InvariantViolation, PreconditionError
from .linalg import (
    DensityMatrix,
    HermitianOperator,
    as_operator,
    embed_local,
    matrix_function,
    operator_norm,
    partial_trace,
)
from .states import MICROBATH, _coupling_support, b_correlation_split

VIOLATION_RTOL = 1e-8
IDENTITY_TOL = 1e-9
SUPPORT_TOL = 1e-12


# --------------------------------------------------------------------------- passivity


@dataclass(frozen=True)
class PassivityCheck:
    """Outcome of :func:`is_passive`.

    ``witness`` holds the first pair of positions ``(i, i + 1)`` in ascending-``A`` order
    where the state's population increases. It is ``None`` when the check passes or
    when it fails because the operators do not commute.
    """

    passive: bool
    witness: tuple[int, int] | None = None
    reason: str = ""

    def __bool__(self):
        return self.passive


def _tie_blocks(values: np.ndarray, tol: float) -> list[slice]:
    blocks, start = [], 0
    for i in range(1, len(values) + 1):
        if i == len(values) or values[i] - values[i - 1] > tol:
            blocks.append(slice(start, i))
            start = i
    return blocks


def is_passive(a, rho, tol: float = 1e-9) -> PassivityCheck:
    """Check whether ``rho`` is passive with respect to ``a``.

    The pair must commute, and in a joint eigenbasis sorted by ascending eigenvalue of
    ``a`` the populations of ``rho`` must be non-increasing. Populations inside a block
    of degenerate ``a`` eigenvalues are sorted in descending order first, so the order
    within a degeneracy never matters.

    Args:
        a: Reference operator.
        rho: State.
        tol: Relative tolerance for the commutator, for grouping degenerate eigenvalues
            and for comparing populations.
    """
    a, rho = as_operator(a), as_operator(rho)
    if a.dims != rho.dims and a.dim != rho.dim:
        raise DimensionError(f"dims mismatch: {list(a.dims)} vs {list(rho.dims)}")
    am, rm = a.matrix, rho.matrix
    scale = max(np.linalg.norm(am, 2) * np.linalg.norm(rm, 2), 1e-300)
    comm = np.max(np.abs(am @ rm - rm @ am))
    if comm > tol * scale:
        return PassivityCheck(False, None, f"operators do not commute (|[A, rho]| = {comm:.2e})")
    w, v = a.eig
    r_in_a = v.conj().T @ rm @ v
    pops = np.empty(len(w))
    for blk in _tie_blocks(w, tol * max(1.0, np.max(np.abs(w)))):
        sub = r_in_a[blk, blk]
        pops[blk] = np.sort(np.linalg.eigvalsh(0.5 * (sub + sub.conj().T)))[::-1]
    for i in range(len(pops) - 1):
        if pops[i + 1] > pops[i] + tol:
            return PassivityCheck(False, (i, i + 1), "population increases with the operator's eigenvalue")
    return PassivityCheck(True)


def passive_floor(rho, a) -> tuple[DensityMatrix, float]:
    """Passive state of ``rho`` relative to ``a`` and the value ``<a>`` attains there.

    The largest populations of ``rho`` are placed on the smallest eigenvalues of ``a``;
    this is the lowest ``<a>`` reachable from ``rho`` by any mixture of unitaries.
    """
    rho, a = as_operator(rho), as_operator(a)
    p = np.sort(np.clip(rho.eigenvalues, 0.0, None))[::-1]
    w, v = a.eig
    floor = float(np.dot(p, w))
    m = (v * p) @ v.conj().T
    return DensityMatrix(m, a.dims, check=False), floor


def ergotropy(rho, a) -> float:
    """``tr(rho a)`` minus the passive floor; non-negative."""
    _, floor = passive_floor(rho, a)
    return as_operator(a).expect(rho) - floor


def shifted_reference_bound(rho0, a_tilde) -> float:
    """Lower bound ``<A~>_pass - <A~>_0`` on ``Delta <A~>`` valid for every unitary mixture.

    The value does not depend on the final state.
    """
    a_tilde = as_operator(a_tilde)
    _, floor = passive_floor(rho0, a_tilde)
    return floor - a_tilde.expect(rho0)


# --------------------------------------------------------------------------- entropies


def von_neumann_entropy(rho) -> float:
    """``-tr(rho ln rho)`` in nats, with ``0 ln 0 = 0``."""
    p = as_operator(rho).eigenvalues
    p = p[p > SUPPORT_TOL]
    return float(-np.sum(p * np.log(p)))


def relative_entropy(rho2, rho1) -> float:
    """Quantum relative entropy ``D(rho2 || rho1) = tr rho2 (ln rho2 - ln rho1)``.

    Raises:
        InfiniteDivergenceError: ``rho2`` has weight above 1e-12 on the kernel of
            ``rho1``.
    """
    rho2, rho1 = as_operator(rho2), as_operator(rho1)
    if rho2.dim != rho1.dim:
        raise DimensionError("states must have equal dimension")
    w1, v1 = rho1.eig
    r2_in_1 = v1.conj().T @ rho2.matrix @ v1
    diag = np.real(np.diag(r2_in_1))
    kernel = w1 <= SUPPORT_TOL
    leak = float(np.sum(diag[kernel]))
    if leak > SUPPORT_TOL:
        raise InfiniteDivergenceError(f"support violation: weight {leak:.3e} outside the reference support")
    cross = float(np.dot(diag[~kernel], np.log(w1[~kernel])))
    return -von_neumann_entropy(rho2) - cross


# --------------------------------------------------------------------------- alpha family


def _resolve_shift(b: HermitianOperator, shift) -> float:
    if shift is None:
        return 0.0
    if isinstance(shift, str):
        if shift != "ground":
            raise ValueError(f"shift must be a number, None or 'ground', got {shift!r}")
        return float(b.eigenvalues[0])
    return float(shift)


def alpha_power(b, alpha: float, shift=None) -> HermitianOperator:
    """``(B - shift I)**alpha`` evaluated on the spectrum.

    Args:
        b: Operator, normally ``-ln rho0``.
        alpha: Positive exponent.
        shift: Constant subtracted before the power. ``"ground"`` subtracts the smallest
            eigenvalue, so the operator starts at zero.

    Raises:
        DomainError: an eigenvalue below ``-1e-10`` remains after the shift; shift the
            operator so it is non-negative.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    b = as_operator(b)
    c = _resolve_shift(b, shift)
    shifted = b.shifted(-c) if c else b
    if alpha == 1:
        return shifted
    return matrix_function(shifted, lambda x: np.power(x, alpha), domain="nonnegative")


def alpha_gpi_series(b, trajectory, alphas: Iterable[float], shift=None, rho0=None) -> dict[float, np.ndarray]:
    """``Delta <B**alpha>(t) = tr[(rho_t - rho_0) B**alpha]`` for each ``alpha``.

    For trajectories generated by mixtures of unitaries from ``rho_0`` every value is
    non-negative when ``B = -ln rho_0`` (shifted to be non-negative if needed).
    ``rho0`` defaults to the trajectory's first state.
    """
    b = as_operator(b)
    rho0 = trajectory.states[0].matrix if rho0 is None else as_operator(rho0).matrix
    diffs = np.stack([s.matrix - rho0 for s in trajectory.states])
    out = {}
    for a in alphas:
        ba = alpha_power(b, float(a), shift).matrix
        out[float(a)] = np.real(np.einsum("tij,ji->t", diffs, ba))
    return out


@dataclass
class HierarchyResult:
    exponents: tuple[float, ...]
    normalized: np.ndarray
    holds: bool
    slack: float


def hierarchy_check(b, rho0, rhof, exponents: Sequence[float] = (1, 2, 3, 4, 5), tol: float = 1e-10) -> HierarchyResult:
    """Evaluate ``d_n = Delta<B**n> / (n ||B||**n)`` for increasing exponents.

    Under mixtures of unitaries of ``rho0`` and ``B >= 0`` a function of ``rho0``,
    ``d`` is non-increasing in the exponent and non-negative. ``holds`` reports whether
    that is the case within ``tol``; channels outside that class may break the chain,
    which is reported, not raised.
    """
    b = as_operator(b)
    exps = tuple(float(e) for e in exponents)
    if any(e <= 0 for e in exps) or any(y <= x for x, y in zip(exps, exps[1:])):
        raise ValueError("exponents must be positive and strictly increasing")
    norm = operator_norm(b)
    if norm == 0:
        d = np.zeros(len(exps))
    else:
        x = b * (1.0 / norm)
        diff = as_operator(rhof).matrix - as_operator(rho0).matrix
        d = np.array([np.real(np.trace(diff @ alpha_power(x, e).matrix)) / e for e in exps])
    gaps = np.append(d[:-1] - d[1:], d[-1])
    slack = float(np.min(gaps))
    return HierarchyResult(exps, d, slack >= -tol, slack)


# --------------------------------------------------------------------------- violation bookkeeping


def violation_mask(lhs: np.ndarray, rtol: float = VIOLATION_RTOL) -> np.ndarray:
    """Boolean mask of times where ``lhs >= 0`` counts as violated."""
    lhs = np.asarray(lhs, dtype=float)
    scale = np.maximum(1.0, np.maximum.accumulate(np.abs(lhs)))
    return lhs < -rtol * scale


def first_violation(times: np.ndarray, lhs: np.ndarray, rtol: float = VIOLATION_RTOL) -> float | None:
    mask = violation_mask(lhs, rtol)
    idx = np.flatnonzero(mask)
    return float(times[idx[0]]) if len(idx) else None


# --------------------------------------------------------------------------- CI / CCI report


@dataclass
class InequalityReport:
    """Per-time inequality terms along a trajectory.

    Every array has one entry per trajectory time. ``coupled_terms`` is only filled
    for setups with an initial coupling.
    """

    times: np.ndarray
    ci_lhs: np.ndarray
    obs_only_lhs: np.ndarray
    cci_lhs: np.ndarray
    relative_entropy_tot: np.ndarray
    relative_entropy_sys: np.ndarray
    heat: dict[str, np.ndarray]
    delta_b_tot: np.ndarray
    alpha_deltas: dict[float, np.ndarray] = field(default_factory=dict)
    coupled_terms: dict[str, np.ndarray] = field(default_factory=dict)
    invariants: dict[str, float] = field(default_factory=dict)

    def monitored(self) -> dict[str, np.ndarray]:
        """Left-hand sides that must stay non-negative under unitary mixtures."""
        out = {
            "ci": self.ci_lhs,
            "cci": self.cci_lhs,
            "passivity_divergence": self.delta_b_tot - self.relative_entropy_tot,
        }
        for a, s in self.alpha_deltas.items():
            out[f"alpha={a:g}"] = s
        return out

    @property
    def flags(self) -> dict[str, bool]:
        return {k: bool(violation_mask(v).any()) for k, v in self.monitored().items()}

    def first_violations(self) -> dict[str, float | None]:
        return {k: first_violation(self.times, v) for k, v in self.monitored().items()}


def _assert_small(name: str, residual: float, scale: float, tol: float = IDENTITY_TOL) -> float:
    if residual > tol * max(1.0, scale):
        raise InvariantViolation(f"{name} identity failed: residual {residual:.3e}")
    return residual


def ci_cci_report(
    setup,
    rho0,
    trajectory,
    alphas: Iterable[float] = (),
    b_shift=None,
) -> InequalityReport:
    """Evaluate the Clausius-type inequalities and the alpha family along ``trajectory``.

    ``q_k`` is the change of microbath ``k``'s local energy and ``beta_k`` its inverse
    temperature. For a setup with an initial coupling, the coupled microbath's terms
    are additionally split into bare heat, coupling energy and the change of the
    mean-force dressing.

    Args:
        setup: The :class:`~gpassivity.states.SetupDescriptor` of the run.
        rho0: Initial full state; ``B`` operators are built from it.
        trajectory: States to evaluate; its first state must equal ``rho0``.
        alphas: Exponents for the ``Delta <B**alpha>`` series.
        b_shift: Shift passed to :func:`alpha_power` (``None`` or ``"ground"``).

    Raises:
        SingularStateError: ``rho0`` or its system marginal is not full rank.
        InvariantViolation: a bookkeeping identity fails beyond 1e-9.
    """
    rho0 = as_operator(rho0)
    sys_idx, env_idx = setup.partition
    if not sys_idx:
        raise PreconditionError("ci_cci_report needs at least one system factor")
    bops = b_correlation_split(rho0, setup.partition)
    rho0_sys = partial_trace(rho0, sys_idx)
    b_sys_full = bops.b_sys_full()
    times = trajectory.times
    n = len(trajectory)

    s_sys0 = von_neumann_entropy(rho0_sys)
    s_tot0 = von_neumann_entropy(rho0)
    heat_ops = {}
    for i, s in setup.microbaths():
        heat_ops[s.name] = (s.beta, setup.local_hamiltonian(i))
    heat = {k: np.empty(n) for k in heat_ops}
    beta_q = np.zeros(n)
    d_s_sys = np.empty(n)
    d_b_tot = np.empty(n)
    d_b_sys = np.empty(n)
    d_tot = np.empty(n)
    d_sys = np.empty(n)
    eq17 = 0.0
    for t, rho in enumerate(trajectory.states):
        rs = partial_trace(rho, sys_idx)
        d_s_sys[t] = von_neumann_entropy(rs) - s_sys0
        d_b_tot[t] = bops.b_tot.expect(rho) - bops.b_tot.expect(rho0)
        d_b_sys[t] = b_sys_full.expect(rho) - b_sys_full.expect(rho0)
        d_tot[t] = relative_entropy(rho, rho0)
        d_sys[t] = relative_entropy(rs, rho0_sys)
        for k, (beta, h) in heat_ops.items():
            heat[k][t] = h.expect(rho) - h.expect(rho0)
            beta_q[t] += beta * heat[k][t]
        ds_tot = von_neumann_entropy(rho) - s_tot0
        eq17 = max(eq17, abs(d_b_tot[t] - ds_tot - d_tot[t]))

    ci = d_s_sys + beta_q
    obs = d_b_sys + beta_q
    cci = d_s_sys + d_b_tot - d_b_sys
    scale = float(np.max(np.abs(np.concatenate([d_b_tot, ci, cci])))) if n else 0.0
    inv = {"relative_entropy_identity": _assert_small("relative-entropy", eq17, scale)}
    # obs-only minus CI equals the system divergence, term by term
    inv["observable_only_slack"] = _assert_small(
        "observable-only slack", float(np.max(np.abs(obs - ci - d_sys))) if n else 0.0, scale
    )

    if setup.initial_coupling is None and operator_norm(bops.b_corr) <= 1e-10 and bops.b_env is not None:
        # product state with Gibbs microbaths: the two Clausius forms coincide
        b_env_full = bops.b_env_full().matrix
        gibbs_exp = sum(s.beta * setup.local_hamiltonian(i).matrix for i, s in setup.microbaths())
        resid = b_env_full - gibbs_exp
        resid = resid - np.trace(resid) / resid.shape[0] * np.eye(resid.shape[0])
        if np.max(np.abs(resid)) <= 1e-9:
            inv["product_state_degeneracy"] = _assert_small(
                "CI/CCI degeneracy", float(np.max(np.abs(ci - cci))) if n else 0.0, scale
            )

    coupled = {}
    if setup.initial_coupling is not None:
        coupled = _coupled_terms(setup, rho0, trajectory, heat, b_sys_full)
        recon = d_s_sys + coupled["beta_q_bare"] + coupled["beta_h_delta_coupling"] + coupled["beta_h_delta_dressing"]
        inv["mean_force_split"] = _assert_small("mean-force split", float(np.max(np.abs(recon - cci))), scale)

    report = InequalityReport(
        times=np.asarray(times, dtype=float),
        ci_lhs=ci,
        obs_only_lhs=obs,
        cci_lhs=cci,
        relative_entropy_tot=d_tot,
        relative_entropy_sys=d_sys,
        heat=heat,
        delta_b_tot=d_b_tot,
        coupled_terms=coupled,
        invariants=inv,
    )
    if alphas:
        report.alpha_deltas = alpha_gpi_series(bops.b_tot, trajectory, alphas, shift=b_shift, rho0=rho0)
    return report


def _coupled_terms(setup, rho0, trajectory, heat, b_sys_full) -> dict[str, np.ndarray]:
    """Split of the CCI for a system thermalized jointly with one hot microbath.

    With ``rho0`` the joint Gibbs state of ``beta_h (H_h + H_s + H_I0)`` times the other
    microbaths, ``B_tot`` is that exponent up to a constant and ``B_sys = beta_h H_s^eff``
    up to a constant. Hence ``CCI = dS_sys + sum beta q + beta_h d<H_I0> +
    beta_h d<H_s - H_s^eff>``.
    """
    sys_idx = setup.system_indices
    hot = setup.index(setup.coupled_bath) if setup.coupled_bath else None
    if hot is None:
        support = [i for i, s in enumerate(setup.subsystems) if s.role == MICROBATH]
        cand = [i for i in _coupling_support(setup.initial_coupling) if i in support]
        hot = cand[0] if cand else support[0]
    beta_h = setup.subsystems[hot].beta
    h_i0 = setup.initial_coupling
    h_s = sum((setup.local_hamiltonian(i) for i in sys_idx[1:]), setup.local_hamiltonian(sys_idx[0]))
    n = len(trajectory)
    bq = np.zeros(n)
    for i, s in setup.microbaths():
        bq += s.beta * heat[s.name]
    d_i = np.array([h_i0.expect(r) - h_i0.expect(rho0) for r in trajectory.states])
    d_hs = np.array([h_s.expect(r) - h_s.expect(rho0) for r in trajectory.states])
    d_bs = np.array([b_sys_full.expect(r) - b_sys_full.expect(rho0) for r in trajectory.states])
    return {
        "beta_q_bare": bq,
        "beta_h_delta_coupling": beta_h * d_i,
        "beta_h_delta_dressing": beta_h * d_hs - d_bs,
    }


# --------------------------------------------------------------------------- dephasing bounds


@dataclass
class DephasingBounds:
    """Measured system-environment correlations and their passivity bounds.

    ``cov_1 = cov[H_env, sigma_x]`` and ``cov_2 = cov[P, sigma_x]`` with
    ``P = beta^2 H~^2 + 2 beta beta_x H~``. ``corr_*`` divide the covariances (and their
    bounds) by ``sqrt(Var(op) Var_t(sigma_x))``, which is positive, so the sandwich
    carries over unchanged.
    """

    times: np.ndarray
    sx: np.ndarray
    cov_1: np.ndarray
    lower_cov_1: np.ndarray
    upper_cov_1: np.ndarray
    cov_2: np.ndarray
    lower_cov_2: np.ndarray
    upper_cov_2: np.ndarray
    corr_1: np.ndarray
    lower_1: np.ndarray
    upper_1: np.ndarray
    corr_2: np.ndarray
    lower_2: np.ndarray
    upper_2: np.ndarray
    k1: float
    c0: float
    beta: float
    beta_x: float

    def slacks(self) -> dict[str, np.ndarray]:
        return {
            "lower_1": self.corr_1 - self.lower_1,
            "upper_1": self.upper_1 - self.corr_1,
            "lower_2": self.corr_2 - self.lower_2,
            "upper_2": self.upper_2 - self.corr_2,
        }

    def min_slack(self) -> float:
        return float(min(np.min(v) for v in self.slacks().values()))

    def check(self, tol: float = 1e-9) -> None:
        """Raise :class:`InvariantViolation` if a bound is broken by more than ``tol``."""
        for k, v in self.slacks().items():
            if np.min(v) < -tol:
                i = int(np.argmin(v))
                raise InvariantViolation(f"{k} bound violated at t={self.times[i]:g} by {-v[i]:.3e}")


def _commutator_norm(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a @ b - b @ a)))


def dephasing_covariance_bounds(setup, trajectory, interaction, beta_x: float, tol: float = 1e-10) -> DephasingBounds:
    """Covariance bounds for a system spin dephased by a thermal spin environment.

    The system starts in ``exp(-beta_x sigma_x)/Z`` and every microbath at a common
    ``beta``. With ``H~ = H_env - E_0`` and ``S = I + sigma_x`` (``S^2 = 2S``) the shifted
    operator ``B~ = beta H~ + beta_x S`` is ``-ln rho0`` minus its ground value. For
    dephasing dynamics all moments of ``H_env`` are conserved, and
    ``Delta<B~^2> >= 0``, ``Delta<B~^3> >= 0`` turn into

        cov[H, sx]_t >= -k1 (x_t - x_0),        k1 = beta_x / beta + <H~>
        cov[P, sx]_t >= c0 (x_t - x_0),         c0 = -(4/3 beta_x^2 + <P>)

    Applying the same inequalities to the pi-pulsed final state (``x -> -x``), which is
    reachable by a unitary, gives the upper bounds ``cov_1 <= -k1 (x_t + x_0)`` and
    ``cov_2 <= c0 (x_t + x_0)``.

    Args:
        setup: One qubit system plus microbaths sharing one ``beta``.
        trajectory: States under the dephasing dynamics.
        interaction: ``H_I`` on the full space; must commute with the system and
            environment Hamiltonians.
        beta_x: Inverse temperature of the initial system state along ``sigma_x``.

    Raises:
        PreconditionError: the commutation requirement or the setup shape fails, or an
            environment moment is not conserved.
    """
    sys_idx = setup.system_indices
    if len(sys_idx) != 1 or setup.subsystems[sys_idx[0]].dim != 2:
        raise PreconditionError("dephasing bounds need exactly one qubit system")
    baths = setup.microbaths()
    betas = {s.beta for _, s in baths}
    if len(betas) != 1:
        raise PreconditionError(f"all microbaths must share one beta, got {sorted(betas)}")
    beta = betas.pop()
    if beta <= 0 or beta_x <= 0:
        raise PreconditionError("beta and beta_x must be positive")
    dims = setup.dims
    h_i = as_operator(interaction, dims).matrix
    h_sys = setup.local_hamiltonian(sys_idx[0]).matrix
    h_env = sum(setup.local_hamiltonian(i).matrix for i, _ in baths)
    scale = max(1.0, np.linalg.norm(h_i, 2))
    for name, h in (("system", h_sys), ("environment", h_env)):
        c = _commutator_norm(h_i, h)
        if c > tol * scale * max(1.0, np.linalg.norm(h, 2)):
            raise PreconditionError(f"interaction does not commute with the {name} Hamiltonian (|[H_I, H]| = {c:.2e})")

    e0 = float(np.linalg.eigvalsh(h_env)[0])
    ht = h_env - e0 * np.eye(h_env.shape[0])
    p_op = beta**2 * (ht @ ht) + 2 * beta * beta_x * ht
    sx = embed_local(np.array([[0, 1], [1, 0]], dtype=complex), sys_idx[0], dims)
    sx = sx.matrix if isinstance(sx, HermitianOperator) else sx

    def ev(op, r):
        return float(np.real(np.einsum("ij,ji->", r, op)))

    rho0 = trajectory.states[0].matrix
    h_mean, p_mean = ev(ht, rho0), ev(p_op, rho0)
    var_h = ev(ht @ ht, rho0) - h_mean**2
    var_p = ev(p_op @ p_op, rho0) - p_mean**2
    k1 = beta_x / beta + h_mean
    c0 = -(4.0 / 3.0 * beta_x**2 + p_mean)

    n = len(trajectory)
    x = np.empty(n)
    cov1 = np.empty(n)
    cov2 = np.empty(n)
    for t, rho in enumerate(trajectory.states):
        r = rho.matrix
        for k, op in enumerate((ht, ht @ ht, ht @ ht @ ht)):
            if abs(ev(op, r) - ev(op, rho0)) > 1e-9 * max(1.0, abs(ev(op, rho0))):
                raise PreconditionError(f"environment moment <H^{k + 1}> is not conserved at t={trajectory.times[t]:g}")
        x[t] = ev(sx, r)
        cov1[t] = ev(ht @ sx, r) - ev(ht, r) * x[t]
        cov2[t] = ev(p_op @ sx, r) - ev(p_op, r) * x[t]
    x0 = x[0]
    lo1, up1 = -k1 * (x - x0), -k1 * (x + x0)
    lo2, up2 = c0 * (x - x0), c0 * (x + x0)
    var_x = np.clip(1.0 - x**2, 1e-300, None)
    n1 = np.sqrt(var_h * var_x) if var_h > 0 else np.ones(n)
    n2 = np.sqrt(var_p * var_x) if var_p > 0 else np.ones(n)
    return DephasingBounds(
        times=np.asarray(trajectory.times, dtype=float),
        sx=x,
        cov_1=cov1,
        lower_cov_1=lo1,
        upper_cov_1=up1,
        cov_2=cov2,
        lower_cov_2=lo2,
        upper_cov_2=up2,
        corr_1=cov1 / n1,
        lower_1=lo1 / n1,
        upper_1=up1 / n1,
        corr_2=cov2 / n2,
        lower_2=lo2 / n2,
        upper_2=up2 / n2,
        k1=k1,
        c0=c0,
        beta=beta,
        beta_x=beta_x,
    )


# --------------------------------------------------------------------------- dressing


def dephasing_dressing_term(h_s_factor, h_b_factor, h_b, beta: float, epsilon: float):
    """``ln f(-beta eps H_s)`` for a dephasing coupling ``eps H_s (x) H_b``.

    ``f(x) = tr_b[exp(-beta H_b) exp(x H_b_factor)]`` so that, when ``H_s`` commutes
    with the system's own Hamiltonian, ``beta (H_eff - H_s) = -ln f(-beta eps H_s)``.
    The exact value uses the moment series of ``H_b_factor`` in the bath Gibbs state,
    summed to machine convergence, or the spectral sum when ``|beta eps| ||H|| >= 1``.

    Returns:
        ``(exact, first_order)`` on the system factor, with
        ``first_order = ln Z_b0 - beta eps <H_b_factor>_0 H_s``.
    """
    hs = as_operator(h_s_factor)
    hbf = as_operator(h_b_factor).matrix
    hb = as_operator(h_b).matrix
    if hbf.shape != hb.shape:
        raise DimensionError("bath operators must have the same shape")
    if _commutator_norm(hbf, hb) > 1e-10 * max(1.0, np.linalg.norm(hb, 2) * np.linalg.norm(hbf, 2)):
        raise PreconditionError("the bath coupling factor must commute with the bath Hamiltonian")
    wb = np.linalg.eigvalsh(hb)
    ln_z = float(np.log(np.sum(np.exp(-beta * (wb - wb[0]))))) - beta * wb[0]
    rho_b = matrix_function(HermitianOperator(hb), lambda x: np.exp(-beta * (x - wb[0])))
    rho_b = rho_b.matrix / np.trace(rho_b.matrix).real
    ws, vs = hs.eig
    norm_b = np.linalg.norm(hbf, 2)
    direct = abs(beta * epsilon) * max(np.max(np.abs(ws)), 1e-300) * norm_b >= 1.0
    if direct:
        wf, vf = np.linalg.eigh(hbf)
        pj = np.real(np.einsum("ij,jk,ki->i", vf.conj().T, rho_b, vf))
        vals = np.array([np.log(np.dot(pj, np.exp(-beta * epsilon * s * wf))) for s in ws])
    else:
        moments = [1.0]
        pw = np.eye(hbf.shape[0])
        for _ in range(200):
            pw = pw @ hbf
            moments.append(float(np.real(np.trace(rho_b @ pw))))
        vals = []
        for s in ws:
            xs = -beta * epsilon * s
            total, term_pow, fact = 0.0, 1.0, 1.0
            for k, m in enumerate(moments):
                if k:
                    term_pow *= xs
                    fact *= k
                term = term_pow * m / fact
                total += term
                if k > 2 and abs(term) < 1e-17 * max(abs(total), 1e-300):
                    break
            vals.append(np.log(total))
        vals = np.array(vals)
    exact = HermitianOperator((vs * (vals + ln_z)) @ vs.conj().T, hs.dims, check=False)
    mean_b = float(np.real(np.trace(rho_b @ hbf)))
    first = HermitianOperator(ln_z * np.eye(hs.dim) - beta * epsilon * mean_b * hs.matrix, hs.dims, check=False)
    return exact, first
