"""Client-level optimization models: loss oracles, gradient noise, ground truth.

Two model families are provided:

* a federated random-effects linear model, where client k observes
  ``y = x' beta_k + eps`` with ``beta_k ~ N(beta0, gamma I)`` and unit-Gaussian
  features, giving closed forms for the Hessian (identity) and the aggregate
  gradient-noise covariance;
* a synthetic binary logistic model standing in for image classification,
  where poisoned clients can flip labels.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class UnsupportedModeError(ValueError):
    """Requested an analytic quantity the model does not admit."""


def _sigmoid(z):
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class FRandEffPopulation:
    """A fixed draw of client coefficients and noise levels.

    ``betas`` has shape (K, d); ``sigmas2`` and ``weights`` have shape (K,).
    The population is sampled once and then frozen for the lifetime of an
    experiment, so repeated Monte-Carlo chains share the same clients.
    """

    dim: int
    beta0: np.ndarray
    gamma: float
    betas: np.ndarray
    sigmas2: np.ndarray
    weights: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        for name in ("beta0", "betas", "sigmas2", "weights"):
            arr = np.asarray(getattr(self, name), dtype=float).copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("client weights must sum to 1")
        if np.any(self.sigmas2 <= 0):
            raise ValueError("client noise variances must be positive")

    @property
    def n_clients(self) -> int:
        return self.betas.shape[0]

    @property
    def theta_star(self) -> np.ndarray:
        return self.weights @ self.betas

    def to_json(self) -> str:
        return json.dumps(
            {
                "model": "frandeff",
                "dim": self.dim,
                "beta0": self.beta0.tolist(),
                "gamma": self.gamma,
                "betas": self.betas.tolist(),
                "sigmas2": self.sigmas2.tolist(),
                "weights": self.weights.tolist(),
                "seed": self.seed,
            }
        )

    @staticmethod
    def from_json(text: str) -> "FRandEffPopulation":
        doc = json.loads(text)
        if doc.get("model") != "frandeff":
            raise ValueError(f"not a frandeff population document: {doc.get('model')!r}")
        return FRandEffPopulation(
            dim=doc["dim"],
            beta0=np.array(doc["beta0"]),
            gamma=doc["gamma"],
            betas=np.array(doc["betas"]),
            sigmas2=np.array(doc["sigmas2"]),
            weights=np.array(doc["weights"]),
            seed=doc.get("seed"),
        )


def sample_frandeff(
    K: int,
    d: int,
    beta0,
    gamma: float,
    sigma_set,
    seed: int,
    weights=None,
) -> FRandEffPopulation:
    """Draw a random-effects population: beta_k ~ N(beta0, gamma I) and
    sigma_k^2 uniformly from ``sigma_set``, both fixed thereafter."""
    sigma_set = np.asarray(sigma_set, dtype=float)
    if sigma_set.size == 0:
        raise ValueError("sigma_set must be nonempty")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    beta0 = np.asarray(beta0, dtype=float)
    rng = np.random.default_rng(seed)
    betas = beta0[None, :] + np.sqrt(gamma) * rng.standard_normal((K, d))
    sigmas2 = rng.choice(sigma_set, size=K)
    if weights is None:
        weights = np.full(K, 1.0 / K)
    return FRandEffPopulation(
        dim=d, beta0=beta0, gamma=gamma, betas=betas, sigmas2=sigmas2,
        weights=np.asarray(weights, dtype=float), seed=seed,
    )


class FRandEffOracle:
    """Gradient oracle for the random-effects linear model with squared loss /2.

    The noisy gradient is ``x (x'theta - y)`` with ``y = x'beta_k + eps``; the
    exact gradient is ``theta - beta_k`` (unit-covariance features), so the
    Hessian at the optimum is the identity.
    """

    def __init__(self, population: FRandEffPopulation):
        self.population = population

    @property
    def dim(self) -> int:
        return self.population.dim

    @property
    def n_clients(self) -> int:
        return self.population.n_clients

    @property
    def weights(self) -> np.ndarray:
        return self.population.weights

    @property
    def theta_star(self) -> np.ndarray:
        return self.population.theta_star

    # -- sampling ------------------------------------------------------

    def sample_xi(self, k: int, rng: np.random.Generator):
        """One data point (x, eps) for client k."""
        x = rng.standard_normal(self.dim)
        eps = rng.standard_normal() * np.sqrt(self.population.sigmas2[k])
        return x, eps

    def draw_noise_block(self, n: int, generators):
        """Pre-draw n steps of data noise for every client.

        ``generators`` is one Generator per client; each client's stream is
        consumed independently so perturbing one client leaves the others
        untouched. Returns X of shape (n, K, d) and eps of shape (n, K).
        """
        K, d = self.n_clients, self.dim
        X = np.empty((n, K, d))
        eps = np.empty((n, K))
        for k, g in enumerate(generators):
            X[:, k, :] = g.standard_normal((n, d))
            eps[:, k] = g.standard_normal(n) * np.sqrt(self.population.sigmas2[k])
        return X, eps

    # -- gradients -----------------------------------------------------

    def gradient(self, k: int, theta, xi, beta_shift=None) -> np.ndarray:
        """Stochastic gradient at theta for client k given data xi=(x, eps)."""
        x, eps = xi
        beta = self.population.betas[k]
        if beta_shift is not None:
            beta = beta + beta_shift
        y = x @ beta + eps
        return x * (x @ theta - y)

    def noisy_gradient(self, k: int, theta, rng: np.random.Generator) -> np.ndarray:
        return self.gradient(k, np.asarray(theta, dtype=float), self.sample_xi(k, rng))

    def batch_gradients(self, Theta, X_t, eps_t, beta_eff) -> np.ndarray:
        """Per-client gradients for a batch of chains.

        Theta: (R, K, d) iterates; X_t: (R, K, d); eps_t: (R, K);
        beta_eff: (K, d) or (R, K, d) effective client coefficients
        (possibly attack-shifted). Returns gradients of shape (R, K, d).
        """
        y = np.einsum("rkd,...kd->rk", X_t, beta_eff) + eps_t
        resid = np.einsum("rkd,rkd->rk", X_t, Theta) - y
        return X_t * resid[..., None]

    def exact_gradient(self, k: int, theta) -> np.ndarray:
        return np.asarray(theta, dtype=float) - self.population.betas[k]

    def mean_gradient(self, theta) -> np.ndarray:
        """Weighted exact gradient sum_k w_k grad F_k(theta)."""
        return np.asarray(theta, dtype=float) - self.theta_star

    # -- curvature and noise covariance --------------------------------

    def hessian(self) -> np.ndarray:
        return np.eye(self.dim)

    def per_client_noise_covariance(self, k: int) -> np.ndarray:
        """Var(g_k(theta*, xi)) = |delta|^2 I + delta delta' + sigma_k^2 I,
        with delta = theta* - beta_k (Gaussian fourth-moment identity)."""
        delta = self.theta_star - self.population.betas[k]
        d = self.dim
        return (delta @ delta + self.population.sigmas2[k]) * np.eye(d) + np.outer(delta, delta)

    def noise_covariance(self, mode: str = "analytic", n_mc: int = 100_000, rng=None) -> np.ndarray:
        """Aggregate covariance V_K = sum_k w_k^2 Var(g_k(theta*, xi))."""
        w = self.population.weights
        if mode == "analytic":
            V = np.zeros((self.dim, self.dim))
            for k in range(self.n_clients):
                V += w[k] ** 2 * self.per_client_noise_covariance(k)
            return V
        if mode == "monte_carlo":
            return self._noise_covariance_mc(n_mc, rng)
        raise UnsupportedModeError(f"unknown covariance mode {mode!r}")

    def _noise_covariance_mc(self, n_mc: int, rng) -> np.ndarray:
        rng = np.random.default_rng(rng)
        theta = self.theta_star
        w = self.population.weights
        d = self.dim
        acc = np.zeros((d, d))
        mean = np.zeros(d)
        chunk = 100_000
        done = 0
        while done < n_mc:
            m = min(chunk, n_mc - done)
            X = rng.standard_normal((m, self.n_clients, d))
            eps = rng.standard_normal((m, self.n_clients)) * np.sqrt(self.population.sigmas2)
            y = np.einsum("mkd,kd->mk", X, self.population.betas) + eps
            resid = np.einsum("mkd,d->mk", X, theta) - y
            grads = X * resid[..., None]
            # g_k has mean grad F_k(theta*); the weighted sum has mean zero
            s = np.einsum("k,mkd->md", w, grads)
            acc += s.T @ s
            mean += s.sum(axis=0)
            done += m
        mean /= n_mc
        return acc / n_mc - np.outer(mean, mean)


@dataclass(frozen=True)
class LogisticPopulation:
    """Synthetic binary classification population with a shared true separator.

    All benign clients draw features x ~ N(0, I) and labels
    y ~ Bernoulli(sigmoid(x' w)). The label-flip map is the binary inversion
    y -> 1 - y (an involution); poisoned clients apply it after the attack
    onset. With a shared separator the population optimum is the separator
    itself.
    """

    dim: int
    separator: np.ndarray
    weights: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        for name in ("separator", "weights"):
            arr = np.asarray(getattr(self, name), dtype=float).copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_clients(self) -> int:
        return self.weights.shape[0]

    @property
    def theta_star(self) -> np.ndarray:
        return self.separator

    @staticmethod
    def flip_label(y):
        return 1 - y


def sample_logistic(K: int, d: int, seed: int, scale: float = 1.0) -> LogisticPopulation:
    rng = np.random.default_rng(seed)
    separator = scale * rng.standard_normal(d)
    return LogisticPopulation(dim=d, separator=separator, weights=np.full(K, 1.0 / K), seed=seed)


class LogisticOracle:
    """Cross-entropy gradient oracle for the synthetic classification model."""

    def __init__(self, population: LogisticPopulation):
        self.population = population

    @property
    def dim(self) -> int:
        return self.population.dim

    @property
    def n_clients(self) -> int:
        return self.population.n_clients

    @property
    def weights(self) -> np.ndarray:
        return self.population.weights

    @property
    def theta_star(self) -> np.ndarray:
        return self.population.theta_star

    def sample_xi(self, k: int, rng: np.random.Generator):
        x = rng.standard_normal(self.dim)
        u = rng.uniform()
        y = 1.0 if u < _sigmoid(np.atleast_1d(x @ self.population.separator))[0] else 0.0
        return x, y

    def draw_noise_block(self, n: int, generators):
        K, d = self.n_clients, self.dim
        X = np.empty((n, K, d))
        U = np.empty((n, K))
        for k, g in enumerate(generators):
            X[:, k, :] = g.standard_normal((n, d))
            U[:, k] = g.uniform(size=n)
        return X, U

    def gradient(self, k: int, theta, xi, flipped: bool = False) -> np.ndarray:
        x, y = xi
        if flipped:
            y = self.population.flip_label(y)
        p = _sigmoid(np.atleast_1d(x @ np.asarray(theta, dtype=float)))[0]
        return x * (p - y)

    def noisy_gradient(self, k: int, theta, rng: np.random.Generator) -> np.ndarray:
        return self.gradient(k, theta, self.sample_xi(k, rng))

    def batch_gradients(self, Theta, X_t, U_t, flip_mask=None) -> np.ndarray:
        """flip_mask: boolean (K,) of clients whose labels are inverted."""
        p_true = _sigmoid(np.einsum("rkd,d->rk", X_t, self.population.separator))
        y = (U_t < p_true).astype(float)
        if flip_mask is not None:
            y[:, flip_mask] = 1.0 - y[:, flip_mask]
        p = _sigmoid(np.einsum("rkd,rkd->rk", X_t, Theta))
        return X_t * (p - y)[..., None]

    def mean_gradient(self, theta, n_mc: int = 200_000, rng=None) -> np.ndarray:
        rng = np.random.default_rng(rng)
        X = rng.standard_normal((n_mc, self.dim))
        p = _sigmoid(X @ np.asarray(theta, dtype=float))
        p_true = _sigmoid(X @ self.population.separator)
        return (X * (p - p_true)[:, None]).mean(axis=0)

    def hessian(self, n_mc: int = 400_000, rng=None) -> np.ndarray:
        """Monte-Carlo estimate of E[sigmoid'(x'theta*) x x'] at the optimum."""
        rng = np.random.default_rng(rng)
        theta = self.theta_star
        X = rng.standard_normal((n_mc, self.dim))
        p = _sigmoid(X @ theta)
        wgt = p * (1.0 - p)
        H = (X * wgt[:, None]).T @ X / n_mc
        return 0.5 * (H + H.T)

    def noise_covariance(self, mode: str = "monte_carlo", n_mc: int = 200_000, rng=None) -> np.ndarray:
        if mode != "monte_carlo":
            raise UnsupportedModeError("analytic covariance is not available for the logistic model")
        rng = np.random.default_rng(rng)
        w = self.weights
        theta = self.theta_star
        d = self.dim
        acc = np.zeros((d, d))
        mean = np.zeros(d)
        chunk = 50_000
        done = 0
        while done < n_mc:
            m = min(chunk, n_mc - done)
            X = rng.standard_normal((m, self.n_clients, d))
            p_true = _sigmoid(np.einsum("mkd,d->mk", X, self.population.separator))
            y = (rng.uniform(size=(m, self.n_clients)) < p_true).astype(float)
            p = _sigmoid(np.einsum("mkd,d->mk", X, theta))
            grads = X * (p - y)[..., None]
            s = np.einsum("k,mkd->md", w, grads)
            acc += s.T @ s
            mean += s.sum(axis=0)
            done += m
        mean /= n_mc
        return acc / n_mc - np.outer(mean, mean)
