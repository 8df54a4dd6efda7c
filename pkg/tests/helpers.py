"""Random-object generators shared by the test modules."""

import numpy as np

from gpassivity.linalg import DensityMatrix, HermitianOperator


def random_hermitian(rng, d, scale=1.0):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return HermitianOperator(scale * (a + a.conj().T) / 2)


def random_unitary(rng, d):
    z = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_density(rng, d, dims=None, rank=None, floor=0.0):
    """Random state; ``floor`` mixes in the maximally mixed state to keep full rank."""
    rank = d if rank is None else rank
    g = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    m = g @ g.conj().T
    m = m / np.trace(m).real
    m = (1 - floor) * m + floor * np.eye(d) / d
    return DensityMatrix(m, dims)


def conj(u, rho):
    m = rho.matrix if hasattr(rho, "matrix") else rho
    return DensityMatrix(u @ m @ u.conj().T, getattr(rho, "dims", None))
