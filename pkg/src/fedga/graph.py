"""Client connection graphs: construction, validation and spectral structure."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: numerical tolerance for row-sum / symmetry checks
_ATOL = 1e-12


class InvalidConnectionError(ValueError):
    """Raised when a candidate mixing matrix violates the synchronization assumptions."""


@dataclass(frozen=True)
class ConnectionMatrix:
    """A K x K symmetric, row-stochastic mixing matrix over the client graph.

    ``lambda2`` is the second-largest eigenvalue modulus (often written rho),
    which measures how fast repeated mixing contracts client disagreement.
    Instances are immutable and safe to share across workers.
    """

    entries: np.ndarray
    lambda2: float

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float).copy()
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def size(self) -> int:
        return self.entries.shape[0]


def _second_eigenvalue_modulus(C: np.ndarray) -> float:
    eigvals = np.linalg.eigvalsh(C)
    idx_top = int(np.argmax(eigvals))
    rest = np.delete(eigvals, idx_top)
    if rest.size == 0:
        return 0.0
    return float(np.max(np.abs(rest)))


def validate_connection(C: np.ndarray) -> ConnectionMatrix:
    """Validate a candidate mixing matrix and compute its spectral gap.

    Raises :class:`InvalidConnectionError` with a specific diagnostic for each
    violated requirement: asymmetry, bad row sums, negative entries, zero
    diagonal, or a unit second eigenvalue (disconnected graph).
    """
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise InvalidConnectionError(f"expected a square matrix, got shape {C.shape}")
    K = C.shape[0]
    if not np.allclose(C, C.T, atol=_ATOL, rtol=0):
        raise InvalidConnectionError("matrix is not symmetric")
    row_sums = C.sum(axis=1)
    if not np.allclose(row_sums, 1.0, atol=1e-10, rtol=0):
        bad = int(np.argmax(np.abs(row_sums - 1.0)))
        raise InvalidConnectionError(f"row {bad} sums to {row_sums[bad]:.6g}, expected 1")
    if np.any(C < -_ATOL):
        raise InvalidConnectionError("matrix has negative entries")
    diag = np.diag(C)
    if np.any(diag <= 0):
        bad = int(np.argmin(diag))
        raise InvalidConnectionError(f"diagonal entry {bad} is not strictly positive")
    rho = _second_eigenvalue_modulus(C)
    if rho >= 1.0 - 1e-10:
        raise InvalidConnectionError(
            f"second eigenvalue modulus is {rho:.6g}; the client graph is disconnected"
        )
    _ = K
    return ConnectionMatrix(entries=C, lambda2=rho)


def banded_connection(K: int, bandwidth: int) -> ConnectionMatrix:
    """Circulant banded mixing: each client averages uniformly with its
    ``bandwidth`` neighbors on each side, under wrap-around indexing.

    Wrap-around keeps every row sum exactly 1 (a plain line graph would have
    deficient boundary rows).
    """
    if K < 2 * bandwidth + 1:
        raise InvalidConnectionError(
            f"K={K} too small for bandwidth={bandwidth}; need K >= {2 * bandwidth + 1}"
        )
    weight = 1.0 / (2 * bandwidth + 1)
    C = np.zeros((K, K))
    for off in range(-bandwidth, bandwidth + 1):
        idx = (np.arange(K) + off) % K
        C[np.arange(K), idx] = weight
    return validate_connection(C)


def rho_mix_connection(K: int, rho: float) -> ConnectionMatrix:
    """Mixing matrix rho*I + (1-rho)/K * ones, whose second eigenvalue is rho."""
    if not 0.0 <= rho < 1.0:
        raise InvalidConnectionError(f"rho={rho} outside [0, 1)")
    C = rho * np.eye(K) + (1.0 - rho) * np.full((K, K), 1.0 / K)
    return validate_connection(C)


def load_connection_csv(path) -> ConnectionMatrix:
    """Load a K x K mixing matrix from a CSV file and validate it."""
    C = np.loadtxt(path, delimiter=",", ndmin=2)
    return validate_connection(C)
