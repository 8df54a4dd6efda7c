"""Dense tensor-product linear algebra for few-spin setups.

All operators are plain complex numpy arrays wrapped in :class:`HermitianOperator`
together with the list of tensor-factor dimensions. Eigendecompositions are cached
on the instance (``functools.cached_property`` is idempotent, so concurrent readers
at worst compute it twice).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import cached_property, reduce
from math import prod
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    DimensionError,
    DomainError,
    NonHermitianError,
    NotADensityMatrixError,
    PauliTermError,
    SingularStateError,
)

__all__ = [
    "PAULI",
    "PauliTerm",
    "HermitianOperator",
    "DensityMatrix",
    "as_operator",
    "build_pauli_operator",
    "parse_pauli_term",
    "embed_local",
    "eig_hermitian",
    "matrix_function",
    "unitary_from_hamiltonian",
    "partial_trace",
    "operator_norm",
    "expectation",
    "kron",
]

HERMITIAN_RTOL = 1e-12
TRACE_TOL = 1e-10
EIG_CLIP = 1e-10

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
# basis {|up>, |down>}; sigma_plus raises |down> -> |up>
SIGMA_PLUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=complex)

PAULI = {"I": np.eye(2, dtype=complex), "X": SIGMA_X, "Y": SIGMA_Y, "Z": SIGMA_Z}


def kron(*ops: np.ndarray) -> np.ndarray:
    """Kronecker product of any number of matrices, left to right."""
    return reduce(np.kron, ops)


@dataclass(frozen=True)
class PauliTerm:
    """``coefficient * prod_k sigma_{axis_k}^{(site_k)}``; no factors means identity."""

    coefficient: float
    factors: tuple[tuple[int, str], ...] = ()

    def __post_init__(self):
        factors = tuple((int(s), str(a).upper()) for s, a in self.factors)
        object.__setattr__(self, "factors", factors)
        sites = [s for s, _ in factors]
        if len(set(sites)) != len(sites):
            raise PauliTermError(f"duplicate site in Pauli term {self.label()!r}")
        for s, a in factors:
            if a not in ("X", "Y", "Z"):
                raise PauliTermError(f"unknown Pauli axis {a!r} in term {self.label()!r}")
            if s < 0:
                raise PauliTermError(f"negative site index in term {self.label()!r}")

    def label(self) -> str:
        return " ".join(f"{a}{s}" for s, a in self.factors) or "I"


_FACTOR_RE = re.compile(r"^([XYZxyz])(\d+)$")


def parse_pauli_term(coefficient: float, spec: str) -> PauliTerm:
    """Parse ``"Z0 Z3"``-style factor strings. ``""`` or ``"I"`` is the identity."""
    factors = []
    for tok in spec.split():
        if tok.upper() == "I":
            continue
        m = _FACTOR_RE.match(tok)
        if m is None:
            raise PauliTermError(f"cannot parse Pauli factor {tok!r} in term {spec!r}")
        factors.append((int(m.group(2)), m.group(1).upper()))
    return PauliTerm(float(coefficient), tuple(factors))


class HermitianOperator:
    """A dense Hermitian matrix on a tensor product of factors with dimensions ``dims``.

    The matrix is symmetrized on construction after checking that the anti-Hermitian
    part is below ``1e-12`` times the operator norm.
    """

    def __init__(self, matrix, dims: Sequence[int] | None = None, *, check: bool = True):
        m = np.array(matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"operator must be a square matrix, got shape {m.shape}")
        dims = [m.shape[0]] if dims is None else [int(d) for d in dims]
        if any(d <= 0 for d in dims) or prod(dims) != m.shape[0]:
            raise DimensionError(f"dims {dims} incompatible with matrix of size {m.shape[0]}")
        if check:
            scale = np.linalg.norm(m, 2) if m.size else 0.0
            skew = np.max(np.abs(m - m.conj().T)) if m.size else 0.0
            if skew > HERMITIAN_RTOL * max(scale, 1.0):
                raise NonHermitianError(f"operator is not Hermitian (max |M - M^dag| = {skew:.3e})")
        self.matrix = 0.5 * (m + m.conj().T)
        self.dims = tuple(dims)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def eig(self) -> tuple[np.ndarray, np.ndarray]:
        w, v = np.linalg.eigh(self.matrix)
        return w, v

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.eig[0]

    def expect(self, rho: "HermitianOperator | np.ndarray") -> float:
        r = rho.matrix if isinstance(rho, HermitianOperator) else np.asarray(rho)
        return float(np.real(np.einsum("ij,ji->", r, self.matrix)))

    def __add__(self, other):
        if isinstance(other, HermitianOperator):
            _check_same_dims(self, other)
            return HermitianOperator(self.matrix + other.matrix, self.dims, check=False)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, HermitianOperator):
            _check_same_dims(self, other)
            return HermitianOperator(self.matrix - other.matrix, self.dims, check=False)
        return NotImplemented

    def __mul__(self, scalar):
        if np.isscalar(scalar) and np.isreal(scalar):
            return HermitianOperator(float(np.real(scalar)) * self.matrix, self.dims, check=False)
        return NotImplemented

    __rmul__ = __mul__

    def __neg__(self):
        return HermitianOperator(-self.matrix, self.dims, check=False)

    def shifted(self, c: float) -> "HermitianOperator":
        """Return ``self + c * I``."""
        return HermitianOperator(self.matrix + c * np.eye(self.dim), self.dims, check=False)

    def __repr__(self):
        return f"{type(self).__name__}(dims={list(self.dims)})"


class DensityMatrix(HermitianOperator):
    """A Hermitian operator with unit trace and no eigenvalue below ``-1e-10``."""

    def __init__(self, matrix, dims: Sequence[int] | None = None, *, check: bool = True):
        super().__init__(matrix, dims, check=check)
        if check:
            tr = np.trace(self.matrix).real
            if abs(tr - 1.0) > TRACE_TOL:
                raise NotADensityMatrixError(f"trace is {tr!r}, expected 1")
            lam = self.eigenvalues[0] if self.dim else 0.0
            if lam < -EIG_CLIP:
                raise NotADensityMatrixError(f"state has negative eigenvalue {lam:.3e}")

    @classmethod
    def from_operator(cls, op: HermitianOperator) -> "DensityMatrix":
        return cls(op.matrix, op.dims)

    def purity(self) -> float:
        return float(np.real(np.einsum("ij,ji->", self.matrix, self.matrix)))


def _check_same_dims(a: HermitianOperator, b: HermitianOperator):
    if a.dims != b.dims:
        raise DimensionError(f"dims mismatch: {list(a.dims)} vs {list(b.dims)}")


def as_operator(x, dims: Sequence[int] | None = None) -> HermitianOperator:
    """Wrap an array (or pass through an operator) as a :class:`HermitianOperator`."""
    if isinstance(x, HermitianOperator):
        return x
    return HermitianOperator(x, dims)


def build_pauli_operator(terms: Iterable[PauliTerm], num_sites: int) -> HermitianOperator:
    """Sum of Pauli strings on ``num_sites`` qubits, each factor embedded at its site."""
    dims = [2] * num_sites
    out = np.zeros((2**num_sites, 2**num_sites), dtype=complex)
    for term in terms:
        ops = [PAULI["I"]] * num_sites
        for site, axis in term.factors:
            if site >= num_sites:
                raise PauliTermError(
                    f"site {site} out of range for {num_sites} sites in term {term.label()!r}"
                )
            ops[site] = PAULI[axis]
        out += term.coefficient * (kron(*ops) if num_sites else np.eye(1))
    return HermitianOperator(out, dims)


def embed_local(op, site: int, dims: Sequence[int]) -> np.ndarray | HermitianOperator:
    """Place ``op`` at tensor position ``site`` with identities on all other factors.

    Returns a :class:`HermitianOperator` when ``op`` is one (or is Hermitian); non-Hermitian
    inputs such as jump operators come back as plain arrays.
    """
    dims = [int(d) for d in dims]
    if not 0 <= site < len(dims):
        raise DimensionError(f"site {site} out of range for dims {dims}")
    m = op.matrix if isinstance(op, HermitianOperator) else np.asarray(op, dtype=complex)
    if m.shape != (dims[site], dims[site]):
        raise DimensionError(f"operator of shape {m.shape} cannot sit on factor of dim {dims[site]}")
    left = np.eye(prod(dims[:site]), dtype=complex)
    right = np.eye(prod(dims[site + 1 :]), dtype=complex)
    full = kron(left, m, right)
    if isinstance(op, HermitianOperator) or np.allclose(m, m.conj().T, atol=1e-14):
        return HermitianOperator(full, dims, check=False)
    return full


def eig_hermitian(a: HermitianOperator) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues in ascending order and the unitary matrix of eigenvectors (columns)."""
    a = as_operator(a)
    return a.eig


_DOMAINS = (None, "real", "nonnegative", "positive")


def matrix_function(
    a: HermitianOperator,
    f: Callable[[np.ndarray], np.ndarray],
    domain: str | None = None,
) -> HermitianOperator:
    """Spectral matrix function ``V diag(f(lambda)) V^dag``.

    Args:
        a: Hermitian operator.
        f: Vectorized real function applied to the eigenvalues.
        domain: ``None``/``"real"`` (no check), ``"nonnegative"`` or ``"positive"``.
            For the latter two, eigenvalues in ``(-1e-10, 0)`` are clipped to zero first;
            anything more negative raises. ``"positive"`` additionally rejects zeros.

    Raises:
        SingularStateError: zero eigenvalue with ``domain="positive"``.
        DomainError: eigenvalue below ``-1e-10`` with a restricted domain.
    """
    if domain not in _DOMAINS:
        raise ValueError(f"unknown domain {domain!r}")
    a = as_operator(a)
    w, v = a.eig
    if domain in ("nonnegative", "positive"):
        if w.size and w[0] < -EIG_CLIP:
            raise DomainError(f"eigenvalue {w[0]:.3e} outside the non-negative domain")
        w = np.where(w < 0, 0.0, w)
        if domain == "positive" and w.size and w[0] <= 0.0:
            raise SingularStateError("operator has a zero eigenvalue", eigenvalue=float(a.eig[0][0]))
    fw = np.asarray(f(w), dtype=float)
    if not np.all(np.isfinite(fw)):
        raise DomainError("function produced non-finite values on the spectrum")
    out = HermitianOperator((v * fw) @ v.conj().T, a.dims, check=False)
    # the spectral data of f(A) is known exactly; re-diagonalizing would lose the small
    # eigenvalues of badly conditioned results such as exp(A)
    order = np.argsort(fw, kind="stable")
    out.__dict__["eig"] = (fw[order], v[:, order])
    return out


def unitary_from_hamiltonian(h: HermitianOperator, t: float) -> np.ndarray:
    """``exp(-i H t)`` computed from the eigendecomposition of ``H``."""
    h = as_operator(h)
    w, v = h.eig
    return (v * np.exp(-1j * w * t)) @ v.conj().T


def partial_trace(m: HermitianOperator, keep: Iterable[int]) -> HermitianOperator:
    """Reduced operator on the factors in ``keep`` (returned in ascending factor order)."""
    m = as_operator(m)
    dims = list(m.dims)
    n = len(dims)
    keep = sorted(set(int(k) for k in keep))
    if not keep:
        raise DimensionError("keep set must be non-empty")
    if keep[0] < 0 or keep[-1] >= n:
        raise DimensionError(f"keep indices {keep} out of range for {n} factors")
    traced = [i for i in range(n) if i not in keep]
    t = m.matrix.reshape(dims + dims)
    # contract each traced factor's row index with its column index
    letters = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
    rows = [letters[i] for i in range(n)]
    cols = [letters[n + i] if i in keep else letters[i] for i in range(n)]
    out = "".join(rows[i] for i in keep) + "".join(cols[i] for i in keep)
    red = np.einsum("".join(rows) + "".join(cols) + "->" + out, t)
    kd = [dims[i] for i in keep]
    size = prod(kd)
    cls = DensityMatrix if isinstance(m, DensityMatrix) else HermitianOperator
    return cls(red.reshape(size, size), kd, check=False)


def operator_norm(a: HermitianOperator) -> float:
    """Largest absolute eigenvalue."""
    w = as_operator(a).eigenvalues
    return float(np.max(np.abs(w))) if w.size else 0.0


def expectation(op: HermitianOperator, rho) -> float:
    """``tr(rho op)`` as a real number."""
    return as_operator(op).expect(rho)
