"""Local SGD engine: the synchronized client recursion, trajectory recording,
Polyak-Ruppert averaging, attack injection and the multiplier bootstrap."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import ConnectionMatrix
from .models import FRandEffOracle, LogisticOracle

#: soft cap on pre-drawn noise memory per chunk, in floats
_CHUNK_BUDGET = 16_000_000


@dataclass(frozen=True)
class StepSchedule:
    """Polynomially decaying step size eta_t = eta0 * (t + k0)^(-beta)."""

    eta0: float
    k0: float = 0.0
    beta: float = 0.75

    def __post_init__(self):
        if self.eta0 <= 0:
            raise ValueError("eta0 must be positive")
        if self.k0 < 0:
            raise ValueError("k0 must be nonnegative")
        if not 0.5 < self.beta < 1.0:
            raise ValueError(f"beta={self.beta} outside (1/2, 1)")

    def eta(self, t: int) -> float:
        return self.eta0 * (t + self.k0) ** (-self.beta)

    def etas(self, n: int) -> np.ndarray:
        """Step sizes for t = 1..n (index 0 unused, kept for 1-based access)."""
        t = np.arange(n + 1, dtype=float)
        out = self.eta0 * np.power(np.maximum(t, 1.0) + self.k0, -self.beta)
        out[0] = np.nan
        return out


@dataclass(frozen=True)
class AttackSpec:
    """Model poisoning: after step t0 the listed clients turn malicious.

    ``mean_shift`` adds mu to every coordinate of the poisoned clients'
    coefficients (mu may also be a full vector); ``label_flip`` inverts the
    poisoned clients' labels (logistic model only).
    """

    t0: int
    poisoned: tuple
    kind: str = "mean_shift"
    mu: float | np.ndarray = 1.0

    def __post_init__(self):
        if self.kind not in ("mean_shift", "label_flip"):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if len(self.poisoned) == 0:
            raise ValueError("poisoned client set must be nonempty")
        if self.t0 < 1:
            raise ValueError("attack onset t0 must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    """Everything needed for one (batch of) local SGD run(s)."""

    n: int
    tau: int
    connection: ConnectionMatrix
    schedule: StepSchedule
    oracle: object
    seed: int = 0
    rep: int = 0
    record_clients: bool = False
    theta0: object = "zeros"  # "zeros" | "star" | array of shape (d,) or (K, d)

    def __post_init__(self):
        if self.n < 1 or self.tau < 1:
            raise ValueError("need n >= 1 and tau >= 1")
        if self.connection.size != self.oracle.n_clients:
            raise ValueError(
                f"connection matrix has K={self.connection.size} but oracle has "
                f"K={self.oracle.n_clients} clients"
            )


@dataclass
class Trajectory:
    """Recorded aggregate path Y_1..Y_n with running Polyak-Ruppert averages."""

    ys: np.ndarray            # (n, d)
    ybars: np.ndarray         # (n, d)
    theta_star: np.ndarray    # (d,)
    thetas: np.ndarray | None = None  # (n, K, d) when per-client recording is on

    @property
    def n(self) -> int:
        return self.ys.shape[0]

    def to_csv(self, path):
        n, d = self.ys.shape
        cols = ["t"] + [f"Y_{j}" for j in range(d)] + [f"Ybar_{j}" for j in range(d)]
        body = np.column_stack([np.arange(1, n + 1), self.ys, self.ybars])
        np.savetxt(path, body, delimiter=",", header=",".join(cols), comments="")

    def clients_to_csv(self, path):
        if self.thetas is None:
            raise ValueError("per-client states were not recorded")
        n, K, d = self.thetas.shape
        rows = []
        for t in range(n):
            for k in range(K):
                rows.append(np.concatenate(([t + 1, k], self.thetas[t, k])))
        cols = ["t", "k"] + [f"theta_{j}" for j in range(d)]
        np.savetxt(path, np.array(rows), delimiter=",", header=",".join(cols), comments="")


def polyak_ruppert(traj: Trajectory, t: int) -> np.ndarray:
    """Running average Ybar_t = (1/t) sum_{s<=t} Y_s."""
    if not 1 <= t <= traj.n:
        raise IndexError(f"t={t} outside [1, {traj.n}]")
    return traj.ybars[t - 1]


@dataclass(frozen=True)
class MultiplierLaw:
    """Bounded mean-one multiplier distribution on [low, high].

    ``kind`` is "uniform" (variance (high-low)^2/12) or "two_point" (equal
    mass on {low, high}, variance ((high-low)/2)^2). The bootstrap endpoint
    spread scales with this variance, so a law with variance near 1 (e.g.
    two_point on {0.1, 1.9}) is needed for the bootstrap covariance to track
    the sampling covariance of the averaged iterate directly.
    """

    low: float = 0.5
    high: float = 1.5
    kind: str = "uniform"

    def __post_init__(self):
        if self.low <= 0:
            raise ValueError("multiplier support must be bounded away from 0")
        if self.high < self.low:
            raise ValueError("need low <= high")
        if abs((self.low + self.high) / 2 - 1.0) > 1e-12:
            raise ValueError("multiplier law must have mean 1")
        if self.kind not in ("uniform", "two_point"):
            raise ValueError(f"unknown multiplier law kind {self.kind!r}")

    @property
    def variance(self) -> float:
        if self.kind == "two_point":
            return ((self.high - self.low) / 2) ** 2
        return (self.high - self.low) ** 2 / 12

    def sample(self, shape, rng: np.random.Generator) -> np.ndarray:
        if self.low == self.high:
            return np.full(shape, self.low)
        if self.kind == "two_point":
            picks = rng.integers(0, 2, size=shape)
            return np.where(picks == 0, self.low, self.high)
        return rng.uniform(self.low, self.high, size=shape)


# --------------------------------------------------------------------------
# seeding layout: data noise for replication r comes from SeedSequence
# ([seed, 0, r]) spawned into one stream per client; multiplier streams use
# the disjoint prefix [seed, 1, b] so the bootstrap reuses data noise exactly.
# --------------------------------------------------------------------------

def data_seed_sequence(seed: int, rep: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), 0, int(rep)])


def _client_generators(seed_seq: np.random.SeedSequence, K: int):
    return [np.random.default_rng(s) for s in seed_seq.spawn(K)]


def _initial_theta(config: RunConfig, R: int) -> np.ndarray:
    K, d = config.oracle.n_clients, config.oracle.dim
    if isinstance(config.theta0, str):
        if config.theta0 == "zeros":
            return np.zeros((R, K, d))
        if config.theta0 == "star":
            return np.broadcast_to(config.oracle.theta_star, (R, K, d)).copy()
        raise ValueError(f"unknown theta0 spec {config.theta0!r}")
    arr = np.asarray(config.theta0, dtype=float)
    if arr.shape == (d,):
        return np.broadcast_to(arr, (R, K, d)).copy()
    if arr.shape == (K, d):
        return np.broadcast_to(arr, (R, K, d)).copy()
    raise ValueError(f"theta0 has shape {arr.shape}, expected ({d},) or ({K}, {d})")


def _attack_arrays(config: RunConfig, attack: AttackSpec | None):
    """Precompute per-attack helpers: shifted coefficients or flip mask."""
    oracle = config.oracle
    if attack is None:
        return None
    mask = np.zeros(oracle.n_clients, dtype=bool)
    mask[list(attack.poisoned)] = True
    if attack.kind == "mean_shift":
        if not isinstance(oracle, FRandEffOracle):
            raise ValueError("mean_shift attack requires the random-effects model")
        mu = np.asarray(attack.mu, dtype=float)
        if mu.ndim == 0:
            mu = np.full(oracle.dim, float(mu))
        shifted = oracle.population.betas.copy()
        shifted[mask] += mu
        return {"kind": "mean_shift", "betas": shifted, "t0": attack.t0}
    if not isinstance(oracle, LogisticOracle):
        raise ValueError("label_flip attack requires the logistic model")
    return {"kind": "label_flip", "mask": mask, "t0": attack.t0}


def _run_chunk(config, attack_info, X, E, record_steps=None, multipliers=None):
    """Advance a chunk of independent chains through the full recursion.

    X: (n, R, K, d) features; E: (n, R, K) second noise channel (eps or
    uniforms). Returns ys (n, R, d) and, when requested, per-client snapshots
    {t: (R, K, d)}.
    """
    oracle = config.oracle
    C = config.connection.entries
    n, R, K, d = X.shape
    etas = config.schedule.etas(n)
    w = oracle.weights
    Theta = _initial_theta(config, R)
    ys = np.empty((n, R, d))
    snapshots = {} if record_steps is not None else None
    frandeff = isinstance(oracle, FRandEffOracle)
    base_betas = oracle.population.betas if frandeff else None

    for t in range(1, n + 1):
        attacked = attack_info is not None and t >= attack_info["t0"]
        if frandeff:
            betas = attack_info["betas"] if attacked else base_betas
            grads = oracle.batch_gradients(Theta, X[t - 1], E[t - 1], betas)
        else:
            mask = attack_info["mask"] if attacked else None
            grads = oracle.batch_gradients(Theta, X[t - 1], E[t - 1], mask)
        if multipliers is not None:
            grads = grads * multipliers[t - 1][..., None]
        # G_t = K (w_1 grad_1, ..., w_K grad_K); columns mix through C at sync steps
        Theta = Theta - (etas[t] * K) * w[None, :, None] * grads
        if t % config.tau == 0:
            Theta = np.einsum("ik,rkd->rid", C, Theta)
        ys[t - 1] = Theta.mean(axis=1)
        if snapshots is not None and t in record_steps:
            snapshots[t] = Theta.copy()
    return ys, snapshots


def _running_mean(ys: np.ndarray) -> np.ndarray:
    n = ys.shape[0]
    denom = np.arange(1, n + 1, dtype=float).reshape((n,) + (1,) * (ys.ndim - 1))
    return np.cumsum(ys, axis=0) / denom


def run_local_sgd(config: RunConfig, attack: AttackSpec | None = None) -> Trajectory:
    """One local SGD run (Algorithm-style recursion), fully deterministic in
    (config, seed, attack)."""
    oracle = config.oracle
    gens = _client_generators(
        data_seed_sequence(config.seed, config.rep), oracle.n_clients)
    X, E = oracle.draw_noise_block(config.n, gens)
    Xb = X[:, None, :, :]
    Eb = E[:, None, :]
    record = set(range(1, config.n + 1)) if config.record_clients else None
    attack_info = _attack_arrays(config, attack)
    ys, snaps = _run_chunk(config, attack_info, Xb, Eb, record_steps=record)
    ys = ys[:, 0, :]
    thetas = None
    if snaps is not None:
        thetas = np.stack([snaps[t][0] for t in range(1, config.n + 1)])
    return Trajectory(
        ys=ys, ybars=_running_mean(ys), theta_star=oracle.theta_star, thetas=thetas
    )


def run_paths(config: RunConfig, reps: int, attack: AttackSpec | None = None,
              rep_offset: int = 0) -> np.ndarray:
    """Aggregate paths for ``reps`` independent replications, shape (n, reps, d).

    Replication r uses the same noise stream as ``run_local_sgd`` with
    ``data_seed_sequence(seed, rep_offset + r)``, so results are identical no
    matter how replications are batched or distributed across workers.
    """
    oracle = config.oracle
    n, K, d = config.n, oracle.n_clients, oracle.dim
    attack_info = _attack_arrays(config, attack)
    chunk = max(1, _CHUNK_BUDGET // (n * K * (d + 1)))
    out = np.empty((n, reps, d))
    for start in range(0, reps, chunk):
        stop = min(start + chunk, reps)
        R = stop - start
        X = np.empty((n, R, K, d))
        E = np.empty((n, R, K))
        for i in range(R):
            gens = _client_generators(
                data_seed_sequence(config.seed, config.rep + rep_offset + start + i), K)
            Xi, Ei = oracle.draw_noise_block(n, gens)
            X[:, i] = Xi
            E[:, i] = Ei
        ys, _ = _run_chunk(config, attack_info, X, E)
        out[:, start:stop] = ys
    return out


def run_multiplier_bootstrap(config: RunConfig, B: int,
                             law: MultiplierLaw = MultiplierLaw()) -> np.ndarray:
    """Weighted multiplier bootstrap endpoints.

    Every bootstrap chain replays the base run's data noise exactly and scales
    each client gradient by an independent mean-one multiplier W_{t,k}.
    Returns the B averaged endpoints Ybar_n, shape (B, d).
    """
    oracle = config.oracle
    n, K, d = config.n, oracle.n_clients, oracle.dim
    gens = _client_generators(data_seed_sequence(config.seed, config.rep), K)
    X1, E1 = oracle.draw_noise_block(n, gens)
    attack_info = None
    chunk = max(1, _CHUNK_BUDGET // (2 * n * K * (d + 1)))
    out = np.empty((B, d))
    for start in range(0, B, chunk):
        stop = min(start + chunk, B)
        R = stop - start
        X = np.broadcast_to(X1[:, None], (n, R, K, d))
        E = np.broadcast_to(E1[:, None], (n, R, K))
        W = np.empty((n, R, K))
        for i in range(R):
            mrng = np.random.default_rng(
                np.random.SeedSequence([int(config.seed), 1, start + i]))
            W[:, i] = law.sample((n, K), mrng)
        ys, _ = _run_chunk(config, attack_info, X, E, multipliers=W)
        out[start:stop] = ys.mean(axis=0)  # Ybar_n per chain
    return out


@dataclass
class MomentScalingReport:
    """Empirical moment trajectories and fitted log-log slopes."""

    t_grid: np.ndarray
    dispersion_sq: np.ndarray   # E |Theta_t (I - J)|_F^2
    err_sq: np.ndarray          # E |Y_t - theta*|^2
    err_4th: np.ndarray         # E |Y_t - theta*|^4
    slope_dispersion: float
    slope_err_sq: float
    slope_err_4th: float


def _loglog_slope(t, v):
    mask = v > 0
    if mask.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(t[mask]), np.log(v[mask]), 1)[0])


def moment_scaling_report(config: RunConfig, n_reps: int,
                          t_grid=None) -> MomentScalingReport:
    """Monte-Carlo moments of the client dispersion and the aggregate error,
    with log-log slopes over the grid."""
    oracle = config.oracle
    n, K, d = config.n, oracle.n_clients, oracle.dim
    if t_grid is None:
        t_grid = np.unique(np.geomspace(10, n, 12).astype(int))
    t_grid = np.asarray(sorted(set(int(t) for t in t_grid)))
    record = set(t_grid.tolist())
    theta_star = oracle.theta_star
    J = np.full((K, K), 1.0 / K)
    proj = np.eye(K) - J

    disp = np.zeros(len(t_grid))
    e2 = np.zeros(len(t_grid))
    e4 = np.zeros(len(t_grid))
    chunk = max(1, _CHUNK_BUDGET // (n * K * (d + 1)))
    done = 0
    while done < n_reps:
        R = min(chunk, n_reps - done)
        X = np.empty((n, R, K, d))
        E = np.empty((n, R, K))
        for i in range(R):
            gens = _client_generators(data_seed_sequence(config.seed, done + i), K)
            Xi, Ei = oracle.draw_noise_block(n, gens)
            X[:, i] = Xi
            E[:, i] = Ei
        ys, snaps = _run_chunk(config, None, X, E, record_steps=record)
        for j, t in enumerate(t_grid):
            Theta = snaps[t]  # (R, K, d)
            centered = np.einsum("ik,rkd->rid", proj, Theta)
            disp[j] += np.sum(centered ** 2) / n_reps
            err = ys[t - 1] - theta_star
            sq = np.sum(err ** 2, axis=1)
            e2[j] += sq.sum() / n_reps
            e4[j] += (sq ** 2).sum() / n_reps
        done += R

    return MomentScalingReport(
        t_grid=t_grid, dispersion_sq=disp, err_sq=e2, err_4th=e4,
        slope_dispersion=_loglog_slope(t_grid, disp),
        slope_err_sq=_loglog_slope(t_grid, e2),
        slope_err_4th=_loglog_slope(t_grid, e4),
    )
