"""Variance schedules and the forward and reverse Gaussian steps.

Timesteps run 1..T. ``alpha_bar(0)`` is 1 by convention so ``forward_jump``
at t = 0 is the identity.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class VarianceSchedule:
    betas: np.ndarray
    alphas: np.ndarray = field(init=False)
    alpha_bars: np.ndarray = field(init=False)

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64)
        object.__setattr__(self, "betas", b)
        object.__setattr__(self, "alphas", 1.0 - b)
        object.__setattr__(self, "alpha_bars", np.cumprod(1.0 - b))

    @property
    def T(self):
        return self.betas.size

    def beta(self, t):
        self._check(t)
        return float(self.betas[t - 1])

    def alpha_bar(self, t):
        if t == 0:
            return 1.0
        self._check(t)
        return float(self.alpha_bars[t - 1])

    def posterior_variance(self, t):
        """beta~_t = beta_t (1 - abar_{t-1}) / (1 - abar_t)."""
        return self.beta(t) * (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t))

    def _check(self, t):
        if not 1 <= t <= self.T:
            raise IndexError(f"timestep {t} outside 1..{self.T}")


def schedule_from_betas(betas, strict=True):
    """Wrap an explicit beta sequence. ``strict=False`` skips the monotonicity check."""
    b = np.asarray(betas, dtype=np.float64).ravel()
    if b.size < 1:
        raise ValueError("empty beta sequence")
    if np.any(b < 0) or np.any(b > 1):
        raise ValueError("betas must lie in [0, 1]")
    if strict:
        if b[0] <= 0 or b[-1] >= 1:
            raise ValueError("betas must lie strictly inside (0, 1)")
        if np.any(np.diff(b) <= 0):
            raise ValueError("betas must be strictly increasing")
    return VarianceSchedule(b)


def make_schedule(T, beta_start, beta_end, kind="linear"):
    if T < 2:
        raise ValueError(f"need T >= 2, got {T}")
    if not 0 < beta_start < beta_end < 1:
        raise ValueError(f"need 0 < beta_start < beta_end < 1, got ({beta_start}, {beta_end})")
    if kind != "linear":
        raise ValueError(f"unknown schedule kind {kind!r}")
    return schedule_from_betas(np.linspace(beta_start, beta_end, T))


def q_step(x_prev, beta, noise):
    """One forward step at variance ``beta`` (any value in [0, 1])."""
    return np.sqrt(1.0 - beta) * x_prev + np.sqrt(beta) * noise


def forward_step(x_prev, t, sched: VarianceSchedule, noise):
    return q_step(np.asarray(x_prev, dtype=np.float64), sched.beta(t), noise)


def forward_jump(x0, t, sched: VarianceSchedule, noise):
    ab = sched.alpha_bar(t)
    return np.sqrt(ab) * np.asarray(x0, dtype=np.float64) + np.sqrt(1.0 - ab) * noise


def predicted_mean(y_t, eps_hat, t, sched: VarianceSchedule):
    beta = sched.beta(t)
    return (y_t - beta / np.sqrt(1.0 - sched.alpha_bar(t)) * eps_hat) / np.sqrt(1.0 - beta)


@dataclass
class DiffusionState:
    y: np.ndarray   # (N, 1, H, W) current noisy estimate
    t: int
    cond: object    # whatever the denoiser needs besides (y, t)


def denoise_step(state: DiffusionState, net, sched: VarianceSchedule, rng) -> DiffusionState:
    """Sample y_{t-1} given y_t. ``net(y, t, cond)`` returns the noise estimate."""
    t = state.t
    if t < 1:
        raise ValueError("denoise_step needs t >= 1")
    eps_hat = np.asarray(net(state.y, t, state.cond), dtype=np.float64)
    if eps_hat.shape != state.y.shape:
        raise ValueError(f"noise estimate shape {eps_hat.shape} != state shape {state.y.shape}")
    y = predicted_mean(state.y, eps_hat, t, sched)
    if t > 1:
        y = y + np.sqrt(sched.posterior_variance(t)) * rng.standard_normal(y.shape)
    return DiffusionState(y, t - 1, state.cond)


def oracle_predictor(x0, sched: VarianceSchedule):
    """Noise predictor that knows the clean sample; used to test the chain."""
    x0 = np.asarray(x0, dtype=np.float64)

    def net(y, t, cond):
        ab = sched.alpha_bar(t)
        return (y - np.sqrt(ab) * x0) / np.sqrt(1.0 - ab)

    return net


def reverse_chain(y_T, net, sched: VarianceSchedule, rng, cond=None, known=None):
    """Run t = T..1 and return y_0.

    ``known`` is an optional ``(values, where)`` pair of clean values and a
    boolean array marking the pixels they hold for. After every step those
    pixels are redrawn from q(y_{t-1} | values), so the network only ever sees
    them at their training distribution.
    """
    state = DiffusionState(np.asarray(y_T, dtype=np.float64), sched.T, cond)
    if known is not None:
        values, where = known
        where = np.broadcast_to(where, state.y.shape)
    while state.t > 0:
        state = denoise_step(state, net, sched, rng)
        if known is not None:
            fixed = forward_jump(values, state.t, sched, rng.standard_normal(state.y.shape))
            state.y = np.where(where, fixed, state.y)
    return state.y
