"""Forward/reverse diffusion math over motion sequences.

The forward chain perturbs a clean sequence x0 with Gaussian noise under a
variance schedule; the reverse steps reconstruct x_{t-1} from the network's
clean-sequence prediction x0_hat. All functions are pure: noise enters only
through explicit arguments, so everything here is safe to call concurrently.

Step indices run t = 1..T. Index t = 0 denotes clean data, and alpha_bar(0)
is defined as 1 so that the final reverse step and direct jumps to t=0 are
well defined.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed beta/alpha tables for a T-step diffusion process.

    Arrays are 0-indexed internally; use the accessors, which take the
    1-based step index.
    """

    T: int
    beta: np.ndarray        # (T,)
    alpha: np.ndarray       # (T,) 1 - beta
    alpha_bar: np.ndarray   # (T,) cumulative product of alpha
    posterior_var: np.ndarray  # (T,) beta_t * (1 - abar_{t-1}) / (1 - abar_t)

    def _check_t(self, t: int) -> int:
        t = int(t)
        if not 1 <= t <= self.T:
            raise ValueError(f"step index {t} outside [1, {self.T}]")
        return t

    def beta_at(self, t: int) -> float:
        return float(self.beta[self._check_t(t) - 1])

    def alpha_at(self, t: int) -> float:
        return float(self.alpha[self._check_t(t) - 1])

    def alpha_bar_at(self, t: int) -> float:
        if t == 0:
            return 1.0
        return float(self.alpha_bar[self._check_t(t) - 1])

    def posterior_var_at(self, t: int) -> float:
        return float(self.posterior_var[self._check_t(t) - 1])


@dataclass
class DiffusionState:
    """A noisy sequence x_t together with its step index t in [0, T]."""

    x_t: np.ndarray
    t: int

    def __post_init__(self):
        self.x_t = np.asarray(self.x_t, dtype=np.float64)
        if self.x_t.ndim != 2:
            raise ValueError(f"x_t must be 2-D, got shape {self.x_t.shape}")
        if not np.all(np.isfinite(self.x_t)):
            raise ValueError("x_t contains non-finite values")
        self.t = int(self.t)
        if self.t < 0:
            raise ValueError(f"step index must be >= 0, got {self.t}")


DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


def build_schedule(T: int, beta_start: float = DEFAULT_BETA_START,
                   beta_end: float = DEFAULT_BETA_END) -> NoiseSchedule:
    """Build a linear variance schedule with T steps.

    beta is linearly interpolated from beta_start to beta_end inclusive.
    """
    T = int(T)
    if T < 2:
        raise ValueError(f"schedule needs at least 2 steps, got {T}")
    for name, v in (("beta_start", beta_start), ("beta_end", beta_end)):
        if not np.isfinite(v):
            raise ValueError(f"{name} must be finite, got {v}")
    if not 0.0 < beta_start < beta_end < 1.0:
        raise ValueError(
            f"need 0 < beta_start < beta_end < 1, got ({beta_start}, {beta_end})"
        )
    beta = np.linspace(beta_start, beta_end, T)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    alpha_bar_prev = np.concatenate([[1.0], alpha_bar[:-1]])
    posterior_var = beta * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar)
    return NoiseSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar,
                         posterior_var=posterior_var)


def _check_shapes(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape {b.shape} does not match {a.shape}")


def forward_sample(x0: np.ndarray, t: int, sched: NoiseSchedule,
                   noise: np.ndarray) -> DiffusionState:
    """Jump directly to x_t: sqrt(abar_t) * x0 + sqrt(1 - abar_t) * noise."""
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    _check_shapes(x0, noise, "forward_sample noise")
    abar = sched.alpha_bar_at(sched._check_t(t))
    x_t = np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * noise
    return DiffusionState(x_t=x_t, t=t)


def forward_step(x_prev: DiffusionState, sched: NoiseSchedule,
                 noise: np.ndarray) -> DiffusionState:
    """One forward Markov step: x_t = sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) noise."""
    if x_prev.t >= sched.T:
        raise ValueError(f"cannot step past T={sched.T} (state at t={x_prev.t})")
    noise = np.asarray(noise, dtype=np.float64)
    _check_shapes(x_prev.x_t, noise, "forward_step noise")
    t = x_prev.t + 1
    beta = sched.beta_at(t)
    x_t = np.sqrt(1.0 - beta) * x_prev.x_t + np.sqrt(beta) * noise
    return DiffusionState(x_t=x_t, t=t)


def derive_epsilon(x_t: DiffusionState, x0_hat: np.ndarray,
                   sched: NoiseSchedule) -> np.ndarray:
    """Recover the implied noise from a clean-sequence prediction.

    eps_hat = (x_t - sqrt(abar_t) * x0_hat) / sqrt(1 - abar_t)
    """
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    _check_shapes(x_t.x_t, x0_hat, "derive_epsilon x0_hat")
    abar = sched.alpha_bar_at(sched._check_t(x_t.t))
    if abar >= 1.0:
        raise ValueError(f"alpha_bar({x_t.t}) = 1: epsilon undefined")
    return (x_t.x_t - np.sqrt(abar) * x0_hat) / np.sqrt(1.0 - abar)


def ancestral_step(x_t: DiffusionState, x0_hat: np.ndarray, sched: NoiseSchedule,
                   gamma: np.ndarray) -> DiffusionState:
    """One reverse step x_t -> x_{t-1} with posterior variance noise.

    The mean is 1/sqrt(alpha_t) * (x_t - (1 - alpha_t)/sqrt(1 - abar_t) * eps_hat)
    with eps_hat derived from x0_hat. sigma_t^2 is the posterior variance
    beta_t (1 - abar_{t-1}) / (1 - abar_t); the t=1 step is deterministic.
    """
    if x_t.t < 1:
        raise ValueError(f"cannot reverse-step from t={x_t.t}")
    gamma = np.asarray(gamma, dtype=np.float64)
    _check_shapes(x_t.x_t, gamma, "ancestral_step gamma")
    t = x_t.t
    eps_hat = derive_epsilon(x_t, x0_hat, sched)
    alpha = sched.alpha_at(t)
    abar = sched.alpha_bar_at(t)
    mean = (x_t.x_t - (1.0 - alpha) / np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(alpha)
    sigma = 0.0 if t == 1 else np.sqrt(sched.posterior_var_at(t))
    return DiffusionState(x_t=mean + sigma * gamma, t=t - 1)


def ddim_step(x_t: DiffusionState, x0_hat: np.ndarray, t_prev: int,
              sched: NoiseSchedule) -> DiffusionState:
    """Deterministic reverse jump x_t -> x_{t_prev} (t_prev < t, may be 0).

    x_{t_prev} = sqrt(abar_{t_prev}) * x0_hat + sqrt(1 - abar_{t_prev}) * eps_hat
    """
    t_prev = int(t_prev)
    if not 0 <= t_prev < x_t.t:
        raise ValueError(f"t_prev={t_prev} must lie in [0, {x_t.t})")
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    if t_prev == 0:
        return DiffusionState(x_t=x0_hat.copy(), t=0)
    eps_hat = derive_epsilon(x_t, x0_hat, sched)
    abar_prev = sched.alpha_bar_at(t_prev)
    x_prev = np.sqrt(abar_prev) * x0_hat + np.sqrt(1.0 - abar_prev) * eps_hat
    return DiffusionState(x_t=x_prev, t=t_prev)


def ddim_timesteps(T: int, n_steps: int) -> list[int]:
    """Uniform-stride descending step list from T down to 0 inclusive.

    With n_steps=25 over T=500 this visits 500, 480, ..., 20, 0.
    """
    n_steps = int(n_steps)
    if not 1 <= n_steps <= T:
        raise ValueError(f"need 1 <= n_steps <= T, got {n_steps} over T={T}")
    ts = np.unique(np.round(np.linspace(0, T, n_steps + 1)).astype(int))
    return list(ts[::-1])
