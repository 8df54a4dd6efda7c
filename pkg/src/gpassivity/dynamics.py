"""Protocol primitives acting on the full-setup density matrix.

Every channel is evaluated exactly (no sampling). Lindblad segments use fixed-step
classical Runge-Kutta; for the linear, time-independent generator the four RK4 stages
collapse to the degree-4 Taylor polynomial of ``dt * L``, which is what is applied.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil
from typing import Sequence, Union

import numpy as np

from .errors import ChannelError, DimensionError, IntegrationError
from .linalg import (
    DensityMatrix,
    HermitianOperator,
    PAULI,
    as_operator,
    embed_local,
    unitary_from_hamiltonian,
)

UNITARY_TOL = 1e-10
PROJECTOR_TOL = 1e-10
TRACE_DRIFT_TOL = 1e-8
STABILITY_LIMIT = 0.1


@dataclass
class Unitary:
    hamiltonian: HermitianOperator
    duration: float


@dataclass
class MixtureOfUnitaries:
    """Instantaneous channel ``sum_k p_k U_k rho U_k^dag``."""

    components: list[tuple[float, np.ndarray]]


@dataclass
class LindbladSegment:
    hamiltonian: HermitianOperator
    jumps: list[tuple[np.ndarray, float]]
    duration: float
    dt: float = 1e-3


@dataclass
class LazyFeedback:
    projectors: list[np.ndarray]
    unitaries: list[np.ndarray]
    chi: float


ProtocolStep = Union[Unitary, MixtureOfUnitaries, LindbladSegment, LazyFeedback]


@dataclass
class Trajectory:
    times: np.ndarray
    states: list[DensityMatrix]
    setup: object = field(default=None, repr=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) != len(self.states):
            raise ValueError("times and states must have the same length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    def __len__(self):
        return len(self.states)

    @property
    def initial(self) -> DensityMatrix:
        return self.states[0]

    @property
    def final(self) -> DensityMatrix:
        return self.states[-1]

    def expectation(self, op) -> np.ndarray:
        op = as_operator(op)
        return np.array([op.expect(r) for r in self.states])


def _matrix(x) -> np.ndarray:
    return x.matrix if isinstance(x, HermitianOperator) else np.asarray(x, dtype=complex)


def _check_unitary(u: np.ndarray):
    err = np.max(np.abs(u @ u.conj().T - np.eye(u.shape[0])))
    if err > UNITARY_TOL:
        raise ChannelError(f"matrix is not unitary (|U U^dag - I| = {err:.2e})")


def _as_state(m: np.ndarray, dims) -> DensityMatrix:
    return DensityMatrix(m, dims)


def apply_unitary_mixture(rho: DensityMatrix, steps: Sequence[tuple[float, np.ndarray]]) -> DensityMatrix:
    """``sum_k p_k U_k rho U_k^dag``.

    Raises:
        ChannelError: probabilities are negative or do not sum to 1 within 1e-12, or
            a matrix is not unitary within 1e-10.
    """
    probs = np.array([p for p, _ in steps], dtype=float)
    if len(probs) == 0 or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
        raise ChannelError(f"mixture probabilities must be non-negative and sum to 1, got {probs}")
    r = _matrix(rho)
    out = np.zeros_like(r)
    for p, u in steps:
        u = np.asarray(u, dtype=complex)
        if u.shape != r.shape:
            raise DimensionError(f"unitary of shape {u.shape} does not match state {r.shape}")
        _check_unitary(u)
        out += p * (u @ r @ u.conj().T)
    return _as_state(out, rho.dims)


def _jump_list(jumps) -> list[tuple[np.ndarray, float]]:
    out = []
    for op, rate in jumps:
        if rate < 0:
            raise ChannelError(f"jump rate must be non-negative, got {rate}")
        out.append((_matrix(op), float(rate)))
    return out


def lindblad_superoperator(h, jumps) -> np.ndarray:
    """Generator ``L`` acting on row-major ``vec(rho)``:

    ``L rho = -i[H, rho] + sum_j g_j (L_j rho L_j^dag - {L_j^dag L_j, rho}/2)``.
    """
    hm = _matrix(h)
    d = hm.shape[0]
    eye = np.eye(d)
    # row-major vec: vec(A X B) = (A kron B^T) vec(X)
    sup = -1j * (np.kron(hm, eye) - np.kron(eye, hm.T))
    for lop, g in _jump_list(jumps):
        ldl = lop.conj().T @ lop
        sup += g * (np.kron(lop, lop.conj()) - 0.5 * np.kron(ldl, eye) - 0.5 * np.kron(eye, ldl.T))
    return sup


def _stability_number(h, jumps, dt: float) -> float:
    hn = np.linalg.norm(_matrix(h), 2)
    jn = sum(g * np.linalg.norm(l.conj().T @ l, 2) for l, g in _jump_list(jumps))
    return dt * (hn + jn)


def _rk4_propagator(sup: np.ndarray, h: float) -> np.ndarray:
    a = h * sup
    n = a.shape[0]
    out = np.eye(n, dtype=complex)
    term = np.eye(n, dtype=complex)
    for k in range(1, 5):
        term = term @ a / k
        out = out + term
    return out


def lindblad_evolve(
    rho: DensityMatrix,
    h,
    jumps,
    T: float,
    dt: float,
    times: Sequence[float] | None = None,
    setup=None,
) -> Trajectory:
    """Integrate the Lindblad equation with fixed-step RK4 and record ``rho`` on ``times``.

    ``times`` defaults to every step ``0, dt, ..., T``. Between consecutive recorded
    times the interval is split into ``ceil(interval/dt)`` equal steps, so requested
    points are hit exactly.

    Raises:
        IntegrationError: ``dt (||H|| + sum g ||L^dag L||) > 0.1`` or the trace drifts by
            more than 1e-8 (the state is never renormalized).
    """
    if dt <= 0 or T < 0:
        raise ValueError("dt must be positive and T non-negative")
    jumps = _jump_list(jumps)
    stab = _stability_number(h, jumps, dt)
    if stab > STABILITY_LIMIT:
        raise IntegrationError(f"stability guard violated: dt*(|H|+sum g|L^dag L|) = {stab:.3g} > 0.1")
    if times is None:
        n = int(round(T / dt))
        times = np.linspace(0.0, T, n + 1) if abs(n * dt - T) < 1e-12 * max(T, 1) else np.append(np.arange(0, T, dt), T)
    times = np.asarray(times, dtype=float)
    if times[0] < 0 or times[-1] > T * (1 + 1e-12) + 1e-15 or np.any(np.diff(times) <= 0):
        raise ValueError("recording times must be increasing and lie within [0, T]")
    sup = lindblad_superoperator(h, jumps)
    d = rho.dim
    v = rho.matrix.reshape(-1).astype(complex)
    tr0 = np.trace(rho.matrix).real
    cache: dict[float, np.ndarray] = {}
    states, t = [], 0.0
    for target in times:
        interval = target - t
        if interval > 0:
            n = max(1, ceil(interval / dt - 1e-9))
            step = interval / n
            key = round(step, 15)
            if key not in cache:
                cache[key] = _rk4_propagator(sup, step)
            p = cache[key]
            for _ in range(n):
                v = p @ v
            t = target
        m = v.reshape(d, d)
        drift = abs(np.trace(m).real - tr0)
        if drift > TRACE_DRIFT_TOL:
            raise IntegrationError(f"trace drift {drift:.2e} exceeds 1e-8 at t={target}")
        states.append(_as_state(m, rho.dims))
    return Trajectory(times, states, setup)


def _check_projectors(projectors: Sequence[np.ndarray], d: int):
    total = np.zeros((d, d), dtype=complex)
    for p in projectors:
        if p.shape != (d, d):
            raise ChannelError(f"projector of shape {p.shape} does not match dimension {d}")
        if np.max(np.abs(p - p.conj().T)) > PROJECTOR_TOL:
            raise ChannelError("projector is not Hermitian")
        if np.max(np.abs(p @ p - p)) > PROJECTOR_TOL:
            raise ChannelError("projector is not idempotent")
        total += p
    if np.max(np.abs(total - np.eye(d))) > PROJECTOR_TOL:
        raise ChannelError("projectors do not sum to the identity")


def lazy_feedback_channel(rho: DensityMatrix, projectors, unitaries, chi: float) -> DensityMatrix:
    """``(1 - chi) rho + chi sum_k V_k P_k rho P_k V_k^dag``."""
    if not 0.0 <= chi <= 1.0:
        raise ChannelError(f"awake probability chi must lie in [0, 1], got {chi}")
    r = _matrix(rho)
    d = r.shape[0]
    projectors = [_matrix(p) for p in projectors]
    unitaries = [np.asarray(_matrix(u), dtype=complex) for u in unitaries]
    if len(projectors) != len(unitaries):
        raise ChannelError("need exactly one conditional unitary per projector")
    _check_projectors(projectors, d)
    for u in unitaries:
        _check_unitary(u)
    fb = np.zeros_like(r)
    for p, u in zip(projectors, unitaries):
        fb += u @ p @ r @ p @ u.conj().T
    return _as_state((1.0 - chi) * r + chi * fb, rho.dims)


def pi_pulse(rho: DensityMatrix, site: int, axis: str = "Z") -> DensityMatrix:
    """Conjugate by the pi rotation ``exp(-i pi sigma_axis / 2) = -i sigma_axis`` on ``site``.

    A rotation about ``Z`` flips the sign of ``<sigma_x>`` and ``<sigma_y>`` on that qubit.
    """
    axis = axis.upper()
    if axis not in ("X", "Y", "Z"):
        raise ValueError(f"axis must be X, Y or Z, got {axis!r}")
    dims = list(rho.dims)
    if not 0 <= site < len(dims) or dims[site] != 2:
        raise DimensionError(f"site {site} is not a qubit of dims {dims}")
    u = embed_local(PAULI[axis], site, dims)
    u = u.matrix if isinstance(u, HermitianOperator) else u
    return _as_state(u @ rho.matrix @ u.conj().T, dims)


def _step_duration(step) -> float:
    if isinstance(step, (Unitary, LindbladSegment)):
        return float(step.duration)
    return 0.0


def _apply_instant(rho: DensityMatrix, step) -> DensityMatrix:
    if isinstance(step, MixtureOfUnitaries):
        return apply_unitary_mixture(rho, step.components)
    if isinstance(step, LazyFeedback):
        return lazy_feedback_channel(rho, step.projectors, step.unitaries, step.chi)
    raise TypeError(f"unknown protocol step {step!r}")


def run_protocol(setup, rho0: DensityMatrix, steps: Sequence, grid: Sequence[float] | None = None) -> Trajectory:
    """Apply ``steps`` in order and sample the state on ``grid``.

    Instantaneous steps (mixtures, feedback) take zero time; a grid point that coincides
    with one sees the state after it (samples are right-continuous). ``grid`` defaults to
    the distinct step boundaries including ``0``.
    """
    boundaries = [0.0]
    for s in steps:
        boundaries.append(boundaries[-1] + _step_duration(s))
    total = boundaries[-1]
    if grid is None:
        grid = sorted(set(boundaries))
    grid = np.asarray(grid, dtype=float)
    if len(grid) == 0 or np.any(np.diff(grid) <= 0) or grid[0] < 0 or grid[-1] > total + 1e-12:
        raise ValueError(f"grid must be increasing within [0, {total}]")
    rho = rho0
    t = 0.0
    pending = 0
    out_t: list[float] = []
    out_s: list[DensityMatrix] = []

    def flush(upto: float, state: DensityMatrix):
        nonlocal pending
        while pending < len(grid) and grid[pending] <= upto + 1e-12:
            out_t.append(float(grid[pending]))
            out_s.append(state)
            pending += 1

    for step in steps:
        d = _step_duration(step)
        if d == 0.0:
            rho = _apply_instant(rho, step)
            continue
        flush(t, rho)
        inside = [g for g in grid[pending:] if g < t + d - 1e-12]
        if isinstance(step, Unitary):
            h = as_operator(step.hamiltonian)
            for g in inside:
                u = unitary_from_hamiltonian(h, g - t)
                out_t.append(float(g))
                out_s.append(_as_state(u @ rho.matrix @ u.conj().T, rho.dims))
            u = unitary_from_hamiltonian(h, d)
            rho = _as_state(u @ rho.matrix @ u.conj().T, rho.dims)
        else:
            rel = [g - t for g in inside] + [d]
            if rel[0] > 0:
                rel = [0.0] + rel
                drop = 1
            else:
                drop = 0
            traj = lindblad_evolve(rho, step.hamiltonian, step.jumps, d, step.dt, times=rel)
            for g, s in zip(inside, traj.states[drop:-1]):
                out_t.append(float(g))
                out_s.append(s)
            rho = traj.final
        pending += len(inside)
        t += d
    flush(total, rho)
    return Trajectory(np.array(out_t), out_s, setup)
