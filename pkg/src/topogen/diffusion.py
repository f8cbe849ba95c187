"""DDPM machinery: linear noise schedule, forward corruption, the reduced
MSE training objective, and ancestral sampling with optional step striding.

Timesteps are 1-based: t runs over [1, T], and schedule arrays index t-1.
The running product alpha_bar is extended conceptually by alpha_bar[0] = 1,
which the posterior variance at t=1 relies on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadInputError, InvariantError
from .geometry import PointCloud
from .model import ModelConfig, forward
from .rng import make_rng
from . import tensor as T
from .tensor import ParamStore, Tensor

VARIANCE_MODES = ("beta", "posterior")


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def __post_init__(self):
        if not (len(self.beta) == len(self.alpha) == len(self.alpha_bar) == self.T):
            raise BadInputError("schedule arrays must all have length T")
        if np.any(self.beta <= 0) or np.any(self.beta >= 1):
            raise InvariantError("beta must lie strictly inside (0, 1)")
        if self.T > 1 and np.any(np.diff(self.alpha_bar) >= 0):
            raise InvariantError("alpha_bar must be strictly decreasing")

    def abar(self, t: int) -> float:
        """alpha_bar at integer t with the t=0 extension."""
        if t == 0:
            return 1.0
        return float(self.alpha_bar[t - 1])


def linear_schedule(T: int = 1000, beta_start: float = 1e-4,
                    beta_end: float = 0.02) -> NoiseSchedule:
    if T < 1:
        raise BadInputError(f"T must be >= 1, got {T}")
    if not 0 < beta_start < 1 or not 0 < beta_end < 1 or beta_end < beta_start:
        raise BadInputError(f"invalid beta endpoints ({beta_start}, {beta_end})")
    beta = np.linspace(beta_start, beta_end, T)
    alpha = 1.0 - beta
    return NoiseSchedule(T=T, beta=beta, alpha=alpha,
                         alpha_bar=np.cumprod(alpha))


def _check_t(sched: NoiseSchedule, t: int) -> None:
    if not 1 <= t <= sched.T:
        raise BadInputError(f"t={t} outside [1, {sched.T}]")


def q_sample(x0: np.ndarray, t: int, eps: np.ndarray,
             sched: NoiseSchedule) -> np.ndarray:
    """Forward corruption x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    _check_t(sched, t)
    if x0.shape != eps.shape:
        raise BadInputError(f"x0 {x0.shape} vs eps {eps.shape}")
    ab = sched.abar(t)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def training_loss(params: ParamStore, config: ModelConfig, x0: np.ndarray,
                  pi1, pi2, sched: NoiseSchedule, rng: np.random.Generator,
                  ) -> tuple[Tensor, int]:
    """One-term Monte-Carlo estimate of the reduced objective.

    Draws t uniform in [1, T] and eps standard normal, corrupts x0, and
    returns mean((eps_hat - eps)^2) over all N*3 scalars plus the drawn t.
    """
    t = int(rng.integers(1, sched.T + 1))
    eps = rng.standard_normal(x0.shape)
    x_t = q_sample(x0, t, eps, sched)
    eps_hat = forward(params, config, x_t, t, pi1, pi2)
    diff = T.sub(eps_hat, T.constant(eps))
    return T.mean_all(T.mul(diff, diff)), t


def p_sample_step(x_t: np.ndarray, t: int, eps_hat: np.ndarray,
                  sched: NoiseSchedule, variance_mode: str = "posterior",
                  rng: np.random.Generator | None = None,
                  t_prev: int | None = None) -> np.ndarray:
    """One reverse step from t to t_prev (default t-1).

    With t_prev < t-1 the update uses the alpha_bar ratio across the skipped
    span, which collapses to the textbook single-step formula at stride 1.
    No noise is injected on the final step (t_prev = 0).
    """
    _check_t(sched, t)
    if variance_mode not in VARIANCE_MODES:
        raise BadInputError(f"variance_mode {variance_mode!r} not in "
                            f"{VARIANCE_MODES}")
    if t_prev is None:
        t_prev = t - 1
    if not 0 <= t_prev < t:
        raise BadInputError(f"t_prev={t_prev} must lie in [0, {t})")
    ab_t = sched.abar(t)
    ab_prev = sched.abar(t_prev)
    alpha_eff = ab_t / ab_prev
    beta_eff = 1.0 - alpha_eff
    mu = (x_t - beta_eff / np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(alpha_eff)
    if t_prev == 0:
        return mu
    if variance_mode == "beta":
        var = beta_eff
    else:
        var = (1.0 - ab_prev) / (1.0 - ab_t) * beta_eff
    z = rng.standard_normal(x_t.shape) if rng is not None else np.zeros_like(x_t)
    return mu + np.sqrt(var) * z


def sample_steps(T_steps: int, steps_override: int | None) -> list[tuple[int, int]]:
    """(t, t_prev) pairs for a full or strided reverse trajectory."""
    if steps_override is None or steps_override >= T_steps:
        ts = list(range(T_steps, 0, -1))
    else:
        if steps_override < 1:
            raise BadInputError(f"steps must be >= 1, got {steps_override}")
        ts = np.unique(np.linspace(T_steps, 1, steps_override).round()
                       .astype(int))[::-1].tolist()
    return [(t, nxt) for t, nxt in zip(ts, ts[1:] + [0])]


def sample(params: ParamStore, config: ModelConfig, sched: NoiseSchedule,
           pi1, pi2, n_points: int, seed: int = 0,
           steps_override: int | None = None,
           variance_mode: str = "posterior") -> PointCloud:
    """Ancestral sampling from pure noise, conditioned on one PI pair."""
    if n_points < 1:
        raise BadInputError("n_points must be >= 1")
    rng = make_rng(seed, "sample")
    x = rng.standard_normal((n_points, 3))
    for t, t_prev in sample_steps(sched.T, steps_override):
        eps_hat = forward(params, config, x, t, pi1, pi2).data
        x = p_sample_step(x, t, eps_hat, sched, variance_mode, rng, t_prev)
        if not np.all(np.isfinite(x)):
            raise InvariantError(f"sampling diverged at t={t}")
    return PointCloud(x)
