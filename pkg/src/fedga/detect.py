"""Sequential attack detection: time-uniform Gaussian bootstrap thresholding
of the CUSUM drift statistic, plus a power/level evaluation harness and
warm-start estimation of the curvature and noise covariance."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .engine import (AttackSpec, RunConfig, StepSchedule, Trajectory,
                     run_local_sgd)
from .gauss import ContractionKernel, aggr_ga_paths


@dataclass(frozen=True)
class DetectorConfig:
    """Settings for the bootstrap CUSUM detector.

    ``test_cadence`` is either "sync" (test only at synchronization steps,
    the cheap default) or "every" (test at every step, as in the published
    power tables).
    """

    A: np.ndarray
    v_K: np.ndarray
    schedule: StepSchedule
    n: int
    K: int
    tau: int = 1
    alpha: float = 0.05
    B: int = 500
    c_thresh: float = 0.1
    test_cadence: str = "sync"

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha={self.alpha} outside (0, 1)")
        if self.B < 100:
            raise ValueError(f"B={self.B} too small; need at least 100 bootstrap chains")
        if self.c_thresh < 0:
            raise ValueError("c_thresh must be nonnegative")
        if self.test_cadence not in ("sync", "every"):
            raise ValueError(f"unknown test cadence {self.test_cadence!r}")
        if self.A is None or self.v_K is None:
            raise ValueError("detector requires both A and v_K")

    def tested_steps(self) -> np.ndarray:
        if self.test_cadence == "every":
            return np.arange(1, self.n + 1)
        return np.arange(self.tau, self.n + 1, self.tau)


@dataclass(frozen=True)
class DetectionReport:
    """Outcome of one sequential detection run.

    ``stopping_time`` is 0 when no test fired (matching the convention of
    reporting T0 * indicator{T0 < n}); ``attack_instance`` is the CUSUM
    argmax step at the stopping time, 0 when undetected.
    """

    detected: bool
    stopping_time: int
    attack_instance: int
    threshold_constant: float
    trace: tuple = field(default_factory=tuple)

    def to_json(self, path) -> None:
        doc = {
            "detected": self.detected,
            "stopping_time": self.stopping_time,
            "attack_instance": self.attack_instance,
            "threshold_constant": self.threshold_constant,
            "trace": [
                {"t": int(t), "R_t": float(r), "q_hat": float(q)}
                for t, r, q in self.trace
            ],
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2)


def _cusum_all(S: np.ndarray, t: int):
    """CUSUM at time t from partial sums S (shape (n, ..., d)): value and
    smallest argmax s, vectorized over any middle axes."""
    s = np.arange(1, t + 1, dtype=float)
    frac = (s / t).reshape((t,) + (1,) * (S.ndim - 1))
    vals = np.linalg.norm(S[:t] - frac * S[t - 1], axis=-1)  # (t, ...)
    idx = np.argmax(vals, axis=0)  # first maximizer = smallest s
    return np.take_along_axis(vals, idx[None, ...], axis=0)[0], idx + 1


def detect(traj: Trajectory, cfg: DetectorConfig, seed) -> DetectionReport:
    """Run the sequential bootstrap test on an observed trajectory.

    B Gaussian comparison chains are simulated from (A, v_K, schedule) alone,
    never from the data, so the bootstrap threshold sequence depends only on
    ``cfg`` and ``seed``. At each tested step t the data statistic R_t is
    compared with the empirical (1 - alpha) quantile of the B chain statistics
    plus c * sqrt(n); the first exceedance stops the run.
    """
    n = cfg.n
    if traj.ys.shape[0] < n:
        raise ValueError(f"trajectory has {traj.ys.shape[0]} steps, config expects {n}")
    kernel = ContractionKernel(np.asarray(cfg.A, dtype=float), cfg.schedule, n)
    ga = aggr_ga_paths(kernel, cfg.v_K, cfg.K, seed, n_chains=cfg.B)  # (n, B, d)
    S_ga = np.cumsum(ga, axis=0)
    S_data = np.cumsum(traj.ys[:n] - traj.theta_star, axis=0)
    slack = cfg.c_thresh * np.sqrt(n)
    trace = []
    for t in cfg.tested_steps():
        t = int(t)
        r_data, s_data = _cusum_all(S_data, t)
        r_ga, _ = _cusum_all(S_ga, t)
        q_hat = float(np.quantile(r_ga, 1.0 - cfg.alpha))
        trace.append((t, float(r_data), q_hat))
        if r_data > q_hat + slack:
            return DetectionReport(
                detected=True,
                stopping_time=t,
                attack_instance=int(s_data),
                threshold_constant=cfg.c_thresh,
                trace=tuple(trace),
            )
    return DetectionReport(
        detected=False,
        stopping_time=0,
        attack_instance=0,
        threshold_constant=cfg.c_thresh,
        trace=tuple(trace),
    )


@dataclass(frozen=True)
class PowerRow:
    mu: float
    detect_prob: float
    s0_mean: float
    s0_lo: float
    s0_hi: float
    T0_mean: float
    T0_lo: float
    T0_hi: float


@dataclass(frozen=True)
class PowerTable:
    rows: tuple
    header_comments: tuple = field(default_factory=tuple)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            for line in self.header_comments:
                fh.write(f"# {line}\n")
            writer = csv.writer(fh)
            writer.writerow(["mu", "detect_prob", "s0_mean", "s0_lo", "s0_hi",
                            "T0_mean", "T0_lo", "T0_hi"])
            for row in self.rows:
                writer.writerow([
                    f"{row.mu:.6g}", f"{row.detect_prob:.6g}",
                    f"{row.s0_mean:.6g}", f"{row.s0_lo:.6g}", f"{row.s0_hi:.6g}",
                    f"{row.T0_mean:.6g}", f"{row.T0_lo:.6g}", f"{row.T0_hi:.6g}",
                ])


def _summary(values: np.ndarray) -> tuple[float, float, float]:
    if values.size == 0:
        return float("nan"), float("nan"), float("nan")
    return (float(values.mean()),
            float(np.quantile(values, 0.025)),
            float(np.quantile(values, 0.975)))


def detection_power_table(mu_grid, reps: int, run_config: RunConfig,
                          detector: DetectorConfig, t0: int,
                          poisoned, kind: str = "mean_shift",
                          header_comments=()) -> PowerTable:
    """Monte Carlo power study over attack magnitudes.

    For each mu, ``reps`` independent runs are attacked at step t0 on the
    given clients, detected, and summarized: detection probability plus the
    mean and central 95% interval of the reported attack instance and
    stopping time among detected runs. mu = 0 rows run without any attack.
    """
    if reps < 100:
        raise ValueError(f"reps={reps} too small; need at least 100")
    rows = []
    for mu in mu_grid:
        mu = float(mu)
        attack = None
        if mu != 0.0:
            attack = AttackSpec(t0=t0, poisoned=tuple(poisoned), kind=kind, mu=mu)
        detected = np.zeros(reps, dtype=bool)
        s0 = np.zeros(reps)
        T0 = np.zeros(reps)
        for r in range(reps):
            cfg_r = replace(run_config, rep=run_config.rep + r)
            traj = run_local_sgd(cfg_r, attack=attack)
            report = detect(traj, detector, seed=np.random.SeedSequence(
                [run_config.seed, 2, run_config.rep + r]))
            detected[r] = report.detected
            s0[r] = report.attack_instance
            T0[r] = report.stopping_time
        hit = detected
        s_mean, s_lo, s_hi = _summary(s0[hit])
        t_mean, t_lo, t_hi = _summary(T0[hit])
        rows.append(PowerRow(
            mu=mu, detect_prob=float(detected.mean()),
            s0_mean=s_mean, s0_lo=s_lo, s0_hi=s_hi,
            T0_mean=t_mean, T0_lo=t_lo, T0_hi=t_hi,
        ))
    return PowerTable(rows=tuple(rows), header_comments=tuple(header_comments))


def warm_start_estimates(traj: Trajectory, oracle, weights, window: int,
                         seed=0, fd_eps: float = 1e-4):
    """Estimate the curvature matrix and aggregate noise covariance at the
    endpoint of a warm-start run.

    The noise covariance is the empirical covariance of the weighted client
    gradients over ``window`` fresh draws at the endpoint; the curvature is a
    central finite difference of the window-averaged gradient using common
    random numbers across the two perturbed evaluations.
    """
    theta = np.asarray(traj.ys[-1], dtype=float)
    d = theta.shape[0]
    w = np.asarray(weights, dtype=float)
    K = w.shape[0]
    if window < 10 * d:
        raise ValueError(f"window={window} too short; need at least {10 * d}")
    seq = np.random.SeedSequence([int(seed), 3])
    gens = [np.random.default_rng(s) for s in seq.spawn(K)]
    xis = [[oracle.sample_xi(k, gens[k]) for _ in range(window)] for k in range(K)]

    def mean_weighted_grad(point):
        acc = np.zeros(d)
        for k in range(K):
            for xi in xis[k]:
                acc += w[k] * oracle.gradient(k, point, xi)
        return acc / window

    agg = np.zeros((window, d))
    for k in range(K):
        for i, xi in enumerate(xis[k]):
            agg[i] += w[k] * oracle.gradient(k, theta, xi)
    V_hat = np.cov(agg, rowvar=False, ddof=1)
    V_hat = np.atleast_2d(V_hat)

    A_hat = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = fd_eps
        A_hat[:, j] = (mean_weighted_grad(theta + e) - mean_weighted_grad(theta - e)) / (2 * fd_eps)
    return A_hat, V_hat
