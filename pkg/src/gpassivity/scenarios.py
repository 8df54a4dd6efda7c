"""Reproducible builds of the four few-spin experiments.

Each builder takes plain keyword parameters, records every one of them (defaults
included) in ``ScenarioResult.params``, and returns time series plus a detection
record. Re-running a builder with ``**result.params`` reproduces the result exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import pi

import numpy as np

from .dynamics import LazyFeedback, LindbladSegment, Trajectory, Unitary, lazy_feedback_channel, run_protocol
from .errors import InvariantViolation, PreconditionError
from .linalg import (
    SIGMA_MINUS,
    SIGMA_PLUS,
    SIGMA_X,
    SIGMA_Z,
    HermitianOperator,
    embed_local,
    kron,
)
from .passivity import (
    alpha_gpi_series,
    ci_cci_report,
    dephasing_covariance_bounds,
    first_violation,
    violation_mask,
)
from .states import (
    MICROBATH,
    SYSTEM,
    SetupDescriptor,
    SubsystemSpec,
    b_operator,
    correlated_pair_state,
    gibbs_state,
    product_initial_state,
)

HEAT_LEAK_ALPHAS = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0)


@dataclass
class ScenarioResult:
    """Output of one scenario run.

    ``series`` maps column names to arrays aligned with ``index`` (named
    ``index_name``, normally ``"time"``). ``flags`` marks each monitored inequality
    that was violated. ``extra`` holds rich objects (reports, trajectories) that are
    not serialized.
    """

    scenario: str
    params: dict
    index_name: str
    index: np.ndarray
    series: dict[str, np.ndarray]
    detection: dict
    flags: dict[str, bool]
    extra: dict = field(default_factory=dict, repr=False)

    @property
    def violated(self) -> bool:
        return any(self.flags.values())


@dataclass
class DetectionCurve:
    """``chi*(alpha)``: smallest awake probability at which ``Delta<B^alpha>`` turns negative.

    ``nan`` marks an ``alpha`` with no crossing in ``[0, 1]``. ``d0``/``d1`` are the
    values at ``chi = 0`` and ``chi = 1``; the channel is affine in ``chi``.
    """

    alphas: np.ndarray
    chi_star: np.ndarray
    chi_crit: float
    d0: np.ndarray
    d1: np.ndarray

    @property
    def alpha_opt(self) -> float:
        if np.all(np.isnan(self.chi_star)):
            return float("nan")
        return float(self.alphas[np.nanargmin(self.chi_star)])

    @property
    def chi_min(self) -> float:
        return float(np.nanmin(self.chi_star)) if not np.all(np.isnan(self.chi_star)) else float("nan")


def _grid(t_max: float, t_steps: int) -> np.ndarray:
    if t_steps < 1 or t_max <= 0:
        raise ValueError("t_max must be positive and t_steps >= 1")
    return np.linspace(0.0, float(t_max), int(t_steps) + 1)


def _alpha_key(a: float) -> str:
    return f"dB_a{a:g}"


# --------------------------------------------------------------------------- correlated heat flow


def exchange_hamiltonian(coupling: float = 1.0, phase: float = pi / 2) -> HermitianOperator:
    """``g (e^{i phi} s+ (x) s- + e^{-i phi} s- (x) s+)``; conserves ``sz (x) I + I (x) sz``."""
    m = coupling * (np.exp(1j * phase) * kron(SIGMA_PLUS, SIGMA_MINUS))
    return HermitianOperator(m + m.conj().T, [2, 2])


def correlated_heat_flow(
    beta_c: float = 1 / 1.5,
    beta_h: float = 1 / 2.5,
    C: float = -0.19,
    coupling: float = 1.0,
    exchange_phase: float = pi / 2,
    spin_scale: float = 0.5,
    t_max: float = pi,
    t_steps: int = 200,
) -> ScenarioResult:
    """Cold spin (system) and hot spin (microbath) exchanging energy from a correlated start.

    The pair starts in ``rho_c (x) rho_h + C(|01><10| + h.c.)`` with local Hamiltonians
    ``spin_scale * sigma_z`` and evolves under :func:`exchange_hamiltonian`.

    Raises:
        InfeasibleCorrelationError: ``|C|`` too large for a positive state.
    """
    params = dict(
        beta_c=float(beta_c), beta_h=float(beta_h), C=float(C), coupling=float(coupling),
        exchange_phase=float(exchange_phase), spin_scale=float(spin_scale),
        t_max=float(t_max), t_steps=int(t_steps),
    )
    h_loc = spin_scale * SIGMA_Z
    rho0 = correlated_pair_state(beta_c, beta_h, C, h_cold=h_loc, h_hot=h_loc)
    setup = SetupDescriptor(
        [SubsystemSpec("cold", h_loc, SYSTEM), SubsystemSpec("hot", h_loc, MICROBATH, beta_h)],
        explicit_initial_state=rho0,
    )
    h_i = exchange_hamiltonian(coupling, exchange_phase)
    h0 = setup.bare_hamiltonian()
    comm = np.max(np.abs(h_i.matrix @ h0.matrix - h0.matrix @ h_i.matrix))
    if comm > 1e-12:
        raise PreconditionError(f"exchange coupling is not energy conserving (|[H_I, H_0]| = {comm:.2e})")
    times = _grid(t_max, t_steps)
    traj = run_protocol(setup, rho0, [Unitary(h0 + h_i, float(t_max))], grid=times)
    rep = ci_cci_report(setup, rho0, traj)
    q_c = np.array([setup.local_hamiltonian(0).expect(r) for r in traj.states])
    q_c -= q_c[0]
    q_h = rep.heat["hot"]
    energy = np.array([h0.expect(r) for r in traj.states])
    drift = float(np.max(np.abs(energy - energy[0])))
    if drift > 1e-10:
        raise InvariantViolation(f"total local energy drifted by {drift:.2e}")
    series = {
        "ci": rep.ci_lhs,
        "cci": rep.cci_lhs,
        "obs_only": rep.obs_only_lhs,
        "q_c": q_c,
        "q_h": q_h,
        "D_tot": rep.relative_entropy_tot,
    }
    flags = {"ci": bool(violation_mask(rep.ci_lhs).any()), "cci": bool(violation_mask(rep.cci_lhs).any())}
    k = min(5, len(times) - 1)
    detection = {
        "min_ci": float(rep.ci_lhs.min()),
        "min_cci": float(rep.cci_lhs.min()),
        "first_violation_ci": first_violation(times, rep.ci_lhs),
        "first_violation_cci": first_violation(times, rep.cci_lhs),
        "q_c_early": float(q_c[k]),
        "early_time": float(times[k]),
        "energy_drift": drift,
    }
    return ScenarioResult(
        "correlated-heat-flow", params, "time", times, series, detection, flags,
        extra={"report": rep, "trajectory": traj, "setup": setup},
    )


# --------------------------------------------------------------------------- heat leak


def cnot_generator(control: int, target: int, n: int, epsilon: float = 1.0, control_state: int = 1) -> np.ndarray:
    """``eps (pi/2) |c><c|_control (x) (I - sigma_x)_target``; ``exp(-i H / eps)`` is a CNOT up to phase."""
    proj = np.zeros((2, 2), dtype=complex)
    proj[control_state, control_state] = 1.0
    dims = [2] * n
    pc = embed_local(proj, control, dims)
    pt = embed_local(np.eye(2) - SIGMA_X, target, dims)
    pc = pc.matrix if isinstance(pc, HermitianOperator) else pc
    pt = pt.matrix if isinstance(pt, HermitianOperator) else pt
    return epsilon * (pi / 2) * (pc @ pt)


def heat_leak_detection(
    gamma: float = 1e-3,
    betas: tuple = (1.0, 0.5, 0.1),
    alphas: tuple = HEAT_LEAK_ALPHAS,
    epsilon: float = 1.0,
    t_max: float = 10.0,
    t_steps: int = 1000,
    dt: float = 1e-3,
    b_reference: str = "ground",
    spin_scale: float = 1.0,
    cnot_control_state: int = 1,
    control_run: bool = True,
) -> ScenarioResult:
    """Three thermal qubits driven by two simultaneous CNOTs while leaking to zero temperature.

    Records ``Delta<B^alpha>(t)`` for each ``alpha`` and the time each first drops
    below the violation threshold. A ``gamma = 0`` control run must show no violation.
    """
    betas = tuple(float(b) for b in betas)
    alphas = tuple(float(a) for a in alphas)
    params = dict(
        gamma=float(gamma), betas=list(betas), alphas=list(alphas), epsilon=float(epsilon),
        t_max=float(t_max), t_steps=int(t_steps), dt=float(dt), b_reference=str(b_reference),
        spin_scale=float(spin_scale), cnot_control_state=int(cnot_control_state), control_run=bool(control_run),
    )
    n = len(betas)
    if n < 2:
        raise ValueError("heat leak needs at least two qubits")
    h_loc = spin_scale * SIGMA_Z
    setup = SetupDescriptor([SubsystemSpec(f"q{i}", h_loc, MICROBATH, b) for i, b in enumerate(betas)])
    rho0 = product_initial_state(setup)
    h = sum(cnot_generator(i, i + 1, n, epsilon, cnot_control_state) for i in range(n - 1))
    h = HermitianOperator(h, setup.dims)
    shift = None if b_reference == "log-partition" else _check_reference(b_reference)
    b = b_operator(rho0)
    times = _grid(t_max, t_steps)

    def evolve(g):
        jumps = [(embed_local(SIGMA_MINUS, i, setup.dims), g) for i in range(n)]
        traj = run_protocol(setup, rho0, [LindbladSegment(h, jumps, float(t_max), float(dt))], grid=times)
        return traj, alpha_gpi_series(b, traj, alphas, shift)

    traj, dbs = evolve(float(gamma))
    pol_ops = [setup.local_hamiltonian(i) * (1.0 / spin_scale) for i in range(n)]
    pols = [traj.expectation(p) for p in pol_ops]
    series = {_alpha_key(a): dbs[a] for a in alphas}
    for i, p in enumerate(pols):
        series[f"pol_{i}"] = p
    first = {f"{a:g}": first_violation(times, dbs[a]) for a in alphas}
    flags = {f"alpha={a:g}": bool(violation_mask(dbs[a]).any()) for a in alphas}
    detection: dict = {"first_violation": first}

    if control_run:
        ctraj, cdbs = evolve(0.0)
        control_first = {f"{a:g}": first_violation(times, cdbs[a]) for a in alphas}
        if any(v is not None for v in control_first.values()):
            raise InvariantViolation(f"closed-system control run violated global passivity: {control_first}")
        cpols = [ctraj.expectation(p) for p in pol_ops]
        dev = np.max(np.abs(np.array(pols) - np.array(cpols)), axis=0)
        found = [t for t in first.values() if t is not None]
        t_detect = max(found) if found else float(t_max)
        detection["control_first_violation"] = control_first
        detection["detection_window"] = t_detect
        detection["max_polarization_deviation_window"] = float(np.max(dev[times <= t_detect + 1e-12]))
        detection["max_polarization_deviation"] = float(np.max(dev))
    return ScenarioResult(
        "heat-leak", params, "time", times, series, detection, flags,
        extra={"trajectory": traj, "setup": setup, "b": b},
    )


def _check_reference(b_reference: str) -> str:
    if b_reference != "ground":
        raise ValueError(f"b_reference must be 'ground' or 'log-partition', got {b_reference!r}")
    return "ground"


# --------------------------------------------------------------------------- dephasing


def dephasing_setup(beta: float, beta_x: float, n_env: int):
    """System qubit (factor 0, ``H_s = sigma_z``) in ``exp(-beta_x sigma_x)/Z`` plus ``n_env`` spins at ``beta``."""
    subs = [SubsystemSpec("s", SIGMA_Z, SYSTEM)]
    subs += [SubsystemSpec(f"b{i}", SIGMA_Z, MICROBATH, beta) for i in range(n_env)]
    setup = SetupDescriptor(subs)
    rho0 = product_initial_state(setup, gibbs_state(HermitianOperator(SIGMA_X), beta_x))
    return setup, rho0


def dephasing_bounds(
    beta: float = 1.0,
    beta_x: float = 0.5,
    xis: tuple = (0.7, 0.5, 0.3),
    t_max: float = 10.0,
    t_steps: int = 200,
) -> ScenarioResult:
    """System spin dephased by ``H_I = sum_i xi_i sigma_z^(i) sigma_z^sys``; correlation sandwich."""
    xis = tuple(float(x) for x in xis)
    params = dict(beta=float(beta), beta_x=float(beta_x), xis=list(xis), t_max=float(t_max), t_steps=int(t_steps))
    setup, rho0 = dephasing_setup(beta, beta_x, len(xis))
    dims = setup.dims
    sz_s = embed_local(SIGMA_Z, 0, dims).matrix
    h_i = sum(x * (embed_local(SIGMA_Z, i + 1, dims).matrix @ sz_s) for i, x in enumerate(xis))
    h_i = HermitianOperator(h_i if len(xis) else np.zeros_like(sz_s), dims)
    times = _grid(t_max, t_steps)
    traj = run_protocol(setup, rho0, [Unitary(setup.bare_hamiltonian() + h_i, float(t_max))], grid=times)
    db = dephasing_covariance_bounds(setup, traj, h_i, beta_x)
    db.check()
    pops = traj.expectation(HermitianOperator(sz_s, dims))
    drift = float(np.max(np.abs(pops - pops[0])))
    if drift > 1e-10:
        raise InvariantViolation(f"system sigma_z drifted by {drift:.2e} under dephasing")
    series = {
        "sx": db.sx,
        "corr_1": db.corr_1,
        "lower_1": db.lower_1,
        "upper_1": db.upper_1,
        "corr_2": db.corr_2,
        "lower_2": db.lower_2,
        "upper_2": db.upper_2,
    }
    slacks = db.slacks()
    flags = {k: bool(np.min(v) < -1e-9) for k, v in slacks.items()}
    detection = {"min_slack": db.min_slack(), "k1": db.k1, "c0": db.c0, "sz_drift": drift}
    return ScenarioResult(
        "dephasing-bounds", params, "time", times, series, detection, flags,
        extra={"bounds": db, "trajectory": traj, "setup": setup},
    )


# --------------------------------------------------------------------------- lazy demon


def demon_setup(T_c: float, T_h: float, spin_scale: float):
    """Two cold spins (factors 0, 1) and two hot spins (2, 3) with ``H = spin_scale * sigma_z``."""
    h_loc = spin_scale * SIGMA_Z
    subs = [SubsystemSpec(f"c{i}", h_loc, MICROBATH, 1.0 / T_c) for i in range(2)]
    subs += [SubsystemSpec(f"h{i}", h_loc, MICROBATH, 1.0 / T_h) for i in range(2)]
    setup = SetupDescriptor(subs)
    return setup, product_initial_state(setup)


def all_to_all_hopping(n: int, coupling: float = 1.0) -> np.ndarray:
    """``coupling * sum_{i>j} (s+_i s-_j + s-_i s+_j)``."""
    dims = [2] * n
    sp = [embed_local(SIGMA_PLUS, i, dims) for i in range(n)]
    sm = [embed_local(SIGMA_MINUS, i, dims) for i in range(n)]
    out = np.zeros((2**n, 2**n), dtype=complex)
    for i in range(n):
        for j in range(i):
            out += sp[i] @ sm[j] + sm[i] @ sp[j]
    return coupling * out


def demon_feedback(dim: int, source: int, target: int, measurement: str = "two"):
    """Projectors and conditional unitaries for the demon's rule ``|source> -> |target>``.

    ``"two"`` measures ``{P, I - P}`` with ``P = |source><source|``; ``"full"`` measures
    every computational basis state. The conditional unitary swaps the two basis states.
    """
    swap = np.eye(dim, dtype=complex)
    swap[[source, target]] = swap[[target, source]]
    p0 = np.zeros((dim, dim), dtype=complex)
    p0[source, source] = 1.0
    if measurement == "two":
        return [p0, np.eye(dim) - p0], [swap, np.eye(dim, dtype=complex)]
    if measurement == "full":
        projs, unis = [], []
        for k in range(dim):
            p = np.zeros((dim, dim), dtype=complex)
            p[k, k] = 1.0
            projs.append(p)
            unis.append(swap if k == source else np.eye(dim, dtype=complex))
        return projs, unis
    raise ValueError(f"measurement must be 'two' or 'full', got {measurement!r}")


def default_alpha_grid(alpha_min: float = 1.0, alpha_max: float = 6.0, alpha_step: float = 0.1) -> np.ndarray:
    n = int(round((alpha_max - alpha_min) / alpha_step))
    return np.round(alpha_min + alpha_step * np.arange(n + 1), 10)


def solve_chi_star(d0: float, d1: float, rtol: float = 1e-8) -> float:
    """Smallest ``chi`` in ``[0, 1]`` with ``(1 - chi) d0 + chi d1 < 0``; ``nan`` if none."""
    if d0 < -rtol * max(1.0, abs(d0)):
        return 0.0
    if d1 >= 0 or d0 - d1 <= 0:
        return float("nan")
    return float(d0 / (d0 - d1))


def lazy_demon_sweep(
    T_c: float = 1.5,
    T_h: float = 2.5,
    t_evolve: float = 1.0,
    alphas=None,
    coupling: float = 1.0,
    spin_scale: float = 0.5,
    b_reference: str = "ground",
    measurement: str = "two",
    source: int = 3,
    target: int = 12,
) -> DetectionCurve:
    """``chi*(alpha)`` for the lazy demon, solved from the two endpoint channels.

    The joint evolution runs for ``t_evolve`` under ``spin_scale sum sigma_z`` plus
    all-to-all hopping; the demon then acts with probability ``chi``. Because the
    channel is affine in ``chi``, ``Delta<B^alpha>(chi) = (1 - chi) d0 + chi d1``.
    """
    alphas = default_alpha_grid() if alphas is None else np.asarray(alphas, dtype=float)
    d0, d1 = _demon_endpoints(T_c, T_h, t_evolve, alphas, coupling, spin_scale, b_reference, measurement, source, target)
    chi = np.array([solve_chi_star(a, b) for a, b in zip(d0, d1)])
    one = np.flatnonzero(np.isclose(alphas, 1.0))
    if len(one):
        chi_crit = float(chi[one[0]])
    else:
        e0, e1 = _demon_endpoints(T_c, T_h, t_evolve, [1.0], coupling, spin_scale, b_reference, measurement, source, target)
        chi_crit = solve_chi_star(e0[0], e1[0])
    return DetectionCurve(np.asarray(alphas, dtype=float), chi, chi_crit, d0, d1)


def _demon_state_pair(T_c, T_h, t_evolve, coupling, spin_scale, measurement, source, target):
    setup, rho0 = demon_setup(T_c, T_h, spin_scale)
    h = setup.bare_hamiltonian() + HermitianOperator(all_to_all_hopping(4, coupling), setup.dims)
    traj = run_protocol(setup, rho0, [Unitary(h, float(t_evolve))])
    projs, unis = demon_feedback(rho0.dim, source, target, measurement)
    return setup, rho0, traj.final, projs, unis


def _demon_endpoints(T_c, T_h, t_evolve, alphas, coupling, spin_scale, b_reference, measurement, source, target):
    setup, rho0, rho1, projs, unis = _demon_state_pair(T_c, T_h, t_evolve, coupling, spin_scale, measurement, source, target)
    rhof = lazy_feedback_channel(rho1, projs, unis, 1.0)
    shift = None if b_reference == "log-partition" else _check_reference(b_reference)
    b = b_operator(rho0)
    traj = Trajectory([0.0, 1.0, 2.0], [rho0, rho1, rhof])
    dbs = alpha_gpi_series(b, traj, alphas, shift)
    d0 = np.array([dbs[float(a)][1] for a in alphas])
    d1 = np.array([dbs[float(a)][2] for a in alphas])
    return d0, d1


def lazy_demon(
    T_c: float = 1.5,
    T_h: float = 2.5,
    t_evolve: float = 1.0,
    chi: float = 1.0,
    alphas=None,
    coupling: float = 1.0,
    spin_scale: float = 0.5,
    b_reference: str = "ground",
    measurement: str = "two",
    source: int = 3,
    target: int = 12,
) -> ScenarioResult:
    """One lazy-demon run at awake probability ``chi`` plus the full ``chi*(alpha)`` curve.

    The series hold ``Delta<B^alpha>`` at ``t = 0`` and right after the feedback at
    ``t = t_evolve``. Violations at the chosen ``chi`` set the flags.
    """
    alphas = default_alpha_grid() if alphas is None else np.asarray(alphas, dtype=float)
    params = dict(
        T_c=float(T_c), T_h=float(T_h), t_evolve=float(t_evolve), chi=float(chi),
        alphas=[float(a) for a in alphas], coupling=float(coupling), spin_scale=float(spin_scale),
        b_reference=str(b_reference), measurement=str(measurement), source=int(source), target=int(target),
    )
    setup, rho0 = demon_setup(T_c, T_h, spin_scale)
    h = setup.bare_hamiltonian() + HermitianOperator(all_to_all_hopping(4, coupling), setup.dims)
    projs, unis = demon_feedback(rho0.dim, source, target, measurement)
    traj = run_protocol(setup, rho0, [Unitary(h, float(t_evolve)), LazyFeedback(projs, unis, float(chi))])
    shift = None if b_reference == "log-partition" else _check_reference(b_reference)
    dbs = alpha_gpi_series(b_operator(rho0), traj, alphas, shift)
    curve = lazy_demon_sweep(T_c, T_h, t_evolve, alphas, coupling, spin_scale, b_reference, measurement, source, target)
    series = {_alpha_key(a): dbs[float(a)] for a in alphas}
    flags = {f"alpha={a:g}": bool(violation_mask(dbs[float(a)]).any()) for a in alphas}
    detection = {
        "chi_star": {f"{a:g}": (None if np.isnan(c) else float(c)) for a, c in zip(curve.alphas, curve.chi_star)},
        "chi_crit": None if np.isnan(curve.chi_crit) else curve.chi_crit,
        "alpha_opt": None if np.isnan(curve.alpha_opt) else curve.alpha_opt,
        "chi_min": None if np.isnan(curve.chi_min) else curve.chi_min,
    }
    return ScenarioResult(
        "lazy-demon", params, "time", traj.times, series, detection, flags,
        extra={"curve": curve, "trajectory": traj, "setup": setup},
    )


# --------------------------------------------------------------------------- custom setups


def custom_protocol(
    setup: SetupDescriptor,
    rho0,
    steps: list,
    params: dict,
    t_steps: int = 100,
    alphas=(1.0,),
    b_reference: str = "ground",
    reports=("ci", "alpha"),
) -> ScenarioResult:
    """Run a user-described setup and protocol and evaluate the requested inequalities.

    ``reports`` may contain ``"ci"`` (CI, CCI and observable-only forms; needs a system
    factor) and ``"alpha"`` (``Delta<B^alpha>`` for each ``alpha``).
    """
    total = sum(getattr(s, "duration", 0.0) for s in steps)
    times = _grid(total, t_steps) if total > 0 else np.array([0.0])
    traj = run_protocol(setup, rho0, steps, grid=times)
    alphas = tuple(float(a) for a in alphas)
    shift = None if b_reference == "log-partition" else _check_reference(b_reference)
    series: dict[str, np.ndarray] = {}
    flags: dict[str, bool] = {}
    detection: dict = {}
    if "ci" in reports:
        rep = ci_cci_report(setup, rho0, traj)
        series.update(ci=rep.ci_lhs, cci=rep.cci_lhs, obs_only=rep.obs_only_lhs)
        for k, v in rep.coupled_terms.items():
            series[k] = v
        for name in ("ci", "cci"):
            flags[name] = bool(violation_mask(series[name]).any())
            detection[f"first_violation_{name}"] = first_violation(traj.times, series[name])
    if "alpha" in reports:
        dbs = alpha_gpi_series(b_operator(rho0), traj, alphas, shift, rho0=rho0)
        for a in alphas:
            series[_alpha_key(a)] = dbs[a]
            flags[f"alpha={a:g}"] = bool(violation_mask(dbs[a]).any())
        detection["first_violation"] = {f"{a:g}": first_violation(traj.times, dbs[a]) for a in alphas}
    return ScenarioResult("custom", params, "time", traj.times, series, detection, flags, extra={"trajectory": traj})
