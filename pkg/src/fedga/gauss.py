"""Covariance machinery for the linearized recursion and the three comparison
processes: aggregated Gaussian approximation, client-level Gaussian
approximation, and the i.i.d. partial-sum baseline."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .engine import StepSchedule, Trajectory, _running_mean


class ContractionKernel:
    """Products of the contraction factors (I - eta_j A) for a symmetric
    positive-definite curvature matrix A and a decaying step schedule.

    All products are diagonal in A's eigenbasis, so everything reduces to
    per-eigenvalue scalar recurrences; total cost is O(n d) after one
    eigendecomposition.
    """

    def __init__(self, A: np.ndarray, schedule: StepSchedule, n: int):
        A = np.asarray(A, dtype=float)
        if not np.allclose(A, A.T, atol=1e-10):
            raise ValueError("curvature matrix must be symmetric")
        self.A = A
        self.schedule = schedule
        self.n = int(n)
        self.d = A.shape[0]
        self.evals, self.evecs = np.linalg.eigh(A)
        if self.evals[0] <= 0:
            raise ValueError("curvature matrix must be positive definite")
        self.etas = schedule.etas(self.n)
        if np.any(self.etas[1:] * self.evals[-1] >= 1.0):
            warnings.warn(
                "eta_t * lambda_max(A) >= 1 for some t; products are not contractions",
                stacklevel=2,
            )
        # factors[t, i] = 1 - eta_t * a_i
        self._factors = np.ones((self.n + 1, self.d))
        self._factors[1:] = 1.0 - np.outer(self.etas[1:], self.evals)

    def _tail_products(self, t: int) -> np.ndarray:
        """Eigen-coefficients of the products from s to t for s = 0..t,
        shape (t + 1, d); row s holds prod_{j=s+1}^t (1 - eta_j a)."""
        out = np.empty((t + 1, self.d))
        out[t] = 1.0
        for s in range(t - 1, -1, -1):
            out[s] = self._factors[s + 1] * out[s + 1]
        return out

    # -- helpers -------------------------------------------------------

    def _from_eigvals(self, diag: np.ndarray) -> np.ndarray:
        U = self.evecs
        return (U * diag) @ U.T

    def _to_eigbasis(self, M: np.ndarray) -> np.ndarray:
        U = self.evecs
        return U.T @ M @ U

    def _b_coeffs(self, t: int) -> np.ndarray:
        """Eigen-coefficients of B_{s,t} = sum_{j=s}^t A_s^j for s = 1..t,
        via the backward recurrence B_{s,t} = I + (I - eta_{s+1} A) B_{s+1,t}.
        Returns shape (t, d); row s-1 holds B_{s,t}."""
        b = np.empty((t, self.d))
        b[t - 1] = 1.0
        for s in range(t - 1, 0, -1):
            b[s - 1] = 1.0 + self._factors[s + 1] * b[s]
        return b


def contraction_product(kernel: ContractionKernel, s: int, t: int) -> np.ndarray:
    """Product over j = s+1..t of (I - eta_j A); the identity when s == t."""
    if not 0 <= s <= t <= kernel.n:
        raise ValueError(f"need 0 <= s <= t <= n, got s={s}, t={t}")
    diag = np.prod(kernel._factors[s + 1:t + 1], axis=0)
    return kernel._from_eigvals(diag)


def q_matrix(kernel: ContractionKernel, s: int) -> np.ndarray:
    """Q_s = eta_s * sum_{j=s}^n (product of contractions from s to j)."""
    if not 1 <= s <= kernel.n:
        raise ValueError(f"s={s} outside [1, {kernel.n}]")
    b = kernel._b_coeffs(kernel.n)
    return kernel._from_eigvals(kernel.etas[s] * b[s - 1])


def _q_eig_coeffs(kernel: ContractionKernel) -> np.ndarray:
    """Eigen-coefficients of Q_s for all s = 1..n, shape (n, d)."""
    b = kernel._b_coeffs(kernel.n)
    return kernel.etas[1:, None] * b


def sigma_n(kernel: ContractionKernel, v_K: np.ndarray) -> np.ndarray:
    """Finite-sample covariance (1/n) sum_s Q_s V_K Q_s'."""
    v_K = np.asarray(v_K, dtype=float)
    M = kernel._to_eigbasis(v_K)
    q = _q_eig_coeffs(kernel)
    S = q.T @ q  # sum_s outer(q_s, q_s)
    out = kernel.evecs @ ((M * S) / kernel.n) @ kernel.evecs.T
    return 0.5 * (out + out.T)


def sigma_tilde_n(kernel: ContractionKernel, v_K: np.ndarray) -> np.ndarray:
    """Last-iterate covariance n^beta sum_s eta_s^2 A_s^n V_K (A_s^n)'."""
    v_K = np.asarray(v_K, dtype=float)
    M = kernel._to_eigbasis(v_K)
    tails = kernel._tail_products(kernel.n)[1:]  # (n, d): products from s to n
    c = kernel.etas[1:, None] * tails
    S = c.T @ c
    scale = kernel.n ** kernel.schedule.beta
    out = kernel.evecs @ (scale * M * S) @ kernel.evecs.T
    return 0.5 * (out + out.T)


def sigma_asymptotic(A: np.ndarray, v_K: np.ndarray, K: int) -> np.ndarray:
    """Asymptotic covariance Sigma = A^{-1} (K V_K) A^{-T}.

    Callers divide by K to obtain the CLT scaling of sqrt(n)(Ybar - theta*).
    """
    A = np.asarray(A, dtype=float)
    if abs(np.linalg.det(A)) < 1e-14:
        raise np.linalg.LinAlgError("curvature matrix is singular")
    Ainv = np.linalg.inv(A)
    out = Ainv @ (K * np.asarray(v_K, dtype=float)) @ Ainv.T
    return 0.5 * (out + out.T)


@dataclass(frozen=True)
class CovariancePack:
    sigma_n: np.ndarray
    sigma_tilde_n: np.ndarray
    sigma_asym: np.ndarray
    v_K: np.ndarray


def covariance_pack(kernel: ContractionKernel, v_K: np.ndarray, K: int) -> CovariancePack:
    return CovariancePack(
        sigma_n=sigma_n(kernel, v_K),
        sigma_tilde_n=sigma_tilde_n(kernel, v_K),
        sigma_asym=sigma_asymptotic(kernel.A, v_K, K),
        v_K=np.asarray(v_K, dtype=float),
    )


def omega_stat(kernel: ContractionKernel, t: int) -> float:
    """|B_{1,t}|_F plus the summed Frobenius increments |B_{s,t} - B_{s-1,t}|_F,
    where B_{s,t} = eta_s sum_{j=s}^t (contraction product from s to j) is the
    step-scaled tail sum converging to the inverse curvature."""
    if not 1 <= t <= kernel.n:
        raise ValueError(f"t={t} outside [1, {kernel.n}]")
    b = kernel.etas[1:t + 1, None] * kernel._b_coeffs(t)
    total = float(np.linalg.norm(b[0]))
    if t > 1:
        total += float(np.sum(np.linalg.norm(np.diff(b, axis=0), axis=1)))
    return total


def omega_max(kernel: ContractionKernel, n: int | None = None) -> float:
    """max over t <= n of the accumulated-increment statistic."""
    n = kernel.n if n is None else n
    return max(omega_stat(kernel, t) for t in range(1, n + 1))


# --------------------------------------------------------------------------
# Gaussian comparison processes
# --------------------------------------------------------------------------

def _psd_sqrt(M: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root with small negative eigenvalues clipped."""
    M = np.asarray(M, dtype=float)
    vals, vecs = np.linalg.eigh(0.5 * (M + M.T))
    if vals[0] < -1e-10 * max(1.0, abs(vals[-1])):
        raise np.linalg.LinAlgError("matrix is not positive semi-definite")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def aggr_ga_paths(kernel: ContractionKernel, v_K: np.ndarray, K: int,
                  rng, n_chains: int = 1) -> np.ndarray:
    """Paths of the aggregated Gaussian recursion
    Y_t = (I - eta_t A) Y_{t-1} + eta_t Z_t / sqrt(K),  Z_t ~ N(0, K V_K).

    Returns shape (n, n_chains, d).
    """
    rng = np.random.default_rng(rng)
    n, d = kernel.n, kernel.d
    root = _psd_sqrt(K * np.asarray(v_K, dtype=float))
    ys = np.empty((n, n_chains, d))
    y = np.zeros((n_chains, d))
    inv_sqrt_K = 1.0 / np.sqrt(K)
    A = kernel.A
    for t in range(1, n + 1):
        z = rng.standard_normal((n_chains, d)) @ root.T
        y = y - kernel.etas[t] * (y @ A.T) + (kernel.etas[t] * inv_sqrt_K) * z
        ys[t - 1] = y
    return ys


def simulate_aggr_ga(kernel: ContractionKernel, v_K: np.ndarray, K: int,
                     seed) -> Trajectory:
    ys = aggr_ga_paths(kernel, v_K, K, seed, n_chains=1)[:, 0, :]
    return Trajectory(ys=ys, ybars=_running_mean(ys), theta_star=np.zeros(kernel.d))


def aggr_ga_covariance_recursion(kernel: ContractionKernel, v_K: np.ndarray,
                                 t_grid) -> dict:
    """Deterministic covariance recursion
    V_t = (I - eta_t A) V_{t-1} (I - eta_t A)' + eta_t^2 V_K,
    evaluated at the requested steps (independent oracle for the simulator)."""
    v_K = np.asarray(v_K, dtype=float)
    t_grid = sorted(int(t) for t in t_grid)
    A = kernel.A
    V = np.zeros_like(v_K)
    out = {}
    for t in range(1, max(t_grid) + 1):
        F = np.eye(kernel.d) - kernel.etas[t] * A
        V = F @ V @ F.T + kernel.etas[t] ** 2 * v_K
        if t in t_grid:
            out[t] = V.copy()
    return out


def client_ga_paths(kernel: ContractionKernel, per_client_covs, weights,
                    connection, tau: int, rng, n_chains: int = 1) -> np.ndarray:
    """Paths of the client-level Gaussian recursion: the matrix state follows
    the local SGD communication pattern with per-client Gaussian noise.

    Returns the aggregated paths K^{-1} Theta 1, shape (n, n_chains, d).
    """
    rng = np.random.default_rng(rng)
    n, d = kernel.n, kernel.d
    w = np.asarray(weights, dtype=float)
    K = w.shape[0]
    C = connection.entries
    roots = np.stack([_psd_sqrt(np.asarray(S, dtype=float)) for S in per_client_covs])
    Theta = np.zeros((n_chains, K, d))
    ys = np.empty((n, n_chains, d))
    A = kernel.A
    for t in range(1, n + 1):
        z = np.einsum("kde,rke->rkd", roots, rng.standard_normal((n_chains, K, d)))
        M = (K * w)[None, :, None] * z
        Theta = Theta - kernel.etas[t] * (Theta @ A.T) + kernel.etas[t] * M
        if t % tau == 0:
            Theta = np.einsum("ik,rkd->rid", C, Theta)
        ys[t - 1] = Theta.mean(axis=1)
    return ys


def simulate_client_ga(kernel: ContractionKernel, per_client_covs, weights,
                       connection, tau: int, seed) -> Trajectory:
    ys = client_ga_paths(kernel, per_client_covs, weights, connection, tau,
                         seed, n_chains=1)[:, 0, :]
    return Trajectory(ys=ys, ybars=_running_mean(ys), theta_star=np.zeros(kernel.d))


def fclt_paths(sigma: np.ndarray, n: int, rng, n_chains: int = 1) -> np.ndarray:
    """Partial sums of i.i.d. N(0, Sigma) increments, shape (n, n_chains, d)."""
    rng = np.random.default_rng(rng)
    sigma = np.asarray(sigma, dtype=float)
    d = sigma.shape[0]
    root = _psd_sqrt(sigma)
    z = rng.standard_normal((n, n_chains, d)) @ root.T
    return np.cumsum(z, axis=0)


def simulate_fclt(sigma: np.ndarray, n: int, seed) -> Trajectory:
    paths = fclt_paths(sigma, n, seed, n_chains=1)[:, 0, :]
    # ys here are the partial sums themselves; the max statistic reads them directly
    return Trajectory(ys=paths, ybars=_running_mean(paths),
                      theta_star=np.zeros(paths.shape[1]))
