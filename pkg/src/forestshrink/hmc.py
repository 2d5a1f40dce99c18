"""Static-trajectory Hamiltonian Monte Carlo with warmup adaptation.

Each chain adapts its step size by dual averaging and its diagonal mass
matrix from the draws of the early warmup window.  Trajectory lengths are
jittered around a fixed leapfrog count.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SamplerError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HmcConfig:
    chains: int = 4
    warmup: int = 1000
    draws: int = 1000
    target_accept: float = 0.8
    leapfrog: int = 32
    seed: int = 0
    jitter: float = 0.2
    max_energy_error: float = 1000.0
    min_accept: float = 0.1

    def __post_init__(self):
        if self.chains < 1 or self.draws < 1 or self.warmup < 0 or self.leapfrog < 1:
            raise ConfigError("chains, draws and leapfrog must be positive; warmup nonnegative")
        if not 0 < self.target_accept < 1:
            raise ConfigError("target_accept must lie in (0, 1)")
        if not 0 <= self.jitter < 1:
            raise ConfigError("jitter must lie in [0, 1)")


@dataclass(frozen=True, eq=False)
class PosteriorDraws:
    """Retained draws with shape (chains, draws, dim) and per-chain diagnostics."""

    samples: np.ndarray
    names: tuple[str, ...]
    accept_rate: np.ndarray
    divergences: np.ndarray
    step_size: np.ndarray
    inv_mass: np.ndarray
    config: HmcConfig = field(default_factory=HmcConfig)

    @property
    def flat(self) -> np.ndarray:
        return self.samples.reshape(-1, self.samples.shape[-1])

    @property
    def n_chains(self) -> int:
        return self.samples.shape[0]

    def rhat(self) -> np.ndarray:
        return split_rhat(self.samples)

    def ess(self) -> np.ndarray:
        return effective_sample_size(self.samples)

    def transformed(self, A, names=None) -> "PosteriorDraws":
        """Draws mapped through the linear map ``x -> A @ x``."""
        return PosteriorDraws(self.samples @ np.asarray(A).T, tuple(names or self.names), self.accept_rate,
                              self.divergences, self.step_size, self.inv_mass, self.config)

    def diagnostics(self) -> dict:
        out = {
            "chains": self.n_chains,
            "draws_per_chain": int(self.samples.shape[1]),
            "mean_accept": float(np.mean(self.accept_rate)),
            "divergences": int(np.sum(self.divergences)),
            "step_size": [float(s) for s in self.step_size],
        }
        if self.n_chains >= 2 and self.samples.shape[1] >= 4:
            r = self.rhat()
            out["max_rhat"] = float(np.nanmax(r))
            out["min_ess"] = float(np.nanmin(self.ess()))
        return out


def split_rhat(samples) -> np.ndarray:
    """Split potential scale reduction factor per parameter (chains, draws, dim)."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 2:
        x = x[..., None]
    n = x.shape[1] // 2
    if x.shape[0] < 1 or n < 2:
        raise ValueError("need at least 4 draws per chain")
    halves = np.concatenate([x[:, :n], x[:, x.shape[1] - n :]], axis=0)
    means = halves.mean(axis=1)
    W = halves.var(axis=1, ddof=1).mean(axis=0)
    B = n * means.var(axis=0, ddof=1)
    var_plus = (n - 1) / n * W + B / n
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(var_plus / W)
    return np.where(W > 0, r, np.where(B > 0, np.inf, 1.0))


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.size
    size = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x - x.mean(), size)
    ac = np.fft.irfft(f * np.conj(f), size)[:n]
    return ac / n


def effective_sample_size(samples) -> np.ndarray:
    """Multi-chain ESS with Geyer's initial monotone positive sequence."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 2:
        x = x[..., None]
    m, n, d = x.shape
    out = np.empty(d)
    for j in range(d):
        acov = np.array([_autocov(x[c, :, j]) for c in range(m)])
        chain_var = acov[:, 0] * n / (n - 1.0)
        W = chain_var.mean()
        means = x[:, :, j].mean(axis=1)
        var_plus = W * (n - 1.0) / n + (means.var(ddof=1) if m > 1 else 0.0)
        if var_plus <= 0:
            out[j] = m * n
            continue
        rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
        rho[0] = 1.0
        total = 0.0
        prev = np.inf
        t = 0
        while t + 1 < n:
            pair = rho[t] + rho[t + 1]
            if pair < 0:
                break
            pair = min(pair, prev)
            total += pair
            prev = pair
            t += 2
        tau = -1.0 + 2.0 * total
        out[j] = m * n / max(tau, 1.0 / np.log10(m * n + 10))
    return out


class _DualAveraging:
    def __init__(self, eps0: float, target: float, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = np.log(10.0 * eps0)
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.h_bar = 0.0
        self.log_eps = np.log(eps0)
        self.log_eps_bar = 0.0
        self.m = 0

    def update(self, accept: float) -> float:
        self.m += 1
        m = self.m
        w = 1.0 / (m + self.t0)
        self.h_bar = (1 - w) * self.h_bar + w * (self.target - accept)
        self.log_eps = self.mu - np.sqrt(m) / self.gamma * self.h_bar
        eta = m ** (-self.kappa)
        self.log_eps_bar = eta * self.log_eps + (1 - eta) * self.log_eps_bar
        return float(np.exp(self.log_eps))

    @property
    def final(self) -> float:
        return float(np.exp(self.log_eps_bar))


def _leapfrog(logp, theta, p, grad, eps, inv_mass, steps):
    theta = theta.copy()
    p = p + 0.5 * eps * grad
    lp = -np.inf
    for i in range(steps):
        theta += eps * inv_mass * p
        lp, grad = logp(theta)
        if not np.isfinite(lp):
            return theta, p, lp, grad
        if i < steps - 1:
            p = p + eps * grad
    p = p + 0.5 * eps * grad
    return theta, p, lp, grad


def _initial_step_size(logp, theta, lp, grad, inv_mass, rng) -> float:
    """Double or halve a trial step until one-step acceptance crosses 1/2."""
    eps = 0.1
    p = rng.standard_normal(theta.size) / np.sqrt(inv_mass)
    h0 = lp - 0.5 * np.sum(inv_mass * p * p)

    def log_ratio(e):
        _, p1, lp1, _ = _leapfrog(logp, theta, p, grad, e, inv_mass, 1)
        h1 = lp1 - 0.5 * np.sum(inv_mass * p1 * p1)
        return h1 - h0 if np.isfinite(h1) else -np.inf

    direction = 1.0 if log_ratio(eps) > np.log(0.5) else -1.0
    for _ in range(100):
        eps_new = eps * 2.0**direction
        if (log_ratio(eps_new) > np.log(0.5)) != (direction > 0):
            return eps_new if direction < 0 else eps
        eps = eps_new
        if eps < 1e-10 or eps > 1e5:
            break
    return eps


def _run_chain(logp, init, cfg: HmcConfig, rng: np.random.Generator):
    theta = np.asarray(init, dtype=np.float64).copy()
    d = theta.size
    lp, grad = logp(theta)
    if not np.isfinite(lp):
        raise SamplerError("log density is not finite at the initial point")
    inv_mass = np.ones(d)
    eps = _initial_step_size(logp, theta, lp, grad, inv_mass, rng)
    da = _DualAveraging(eps, cfg.target_accept)
    window = (cfg.warmup // 4, cfg.warmup // 2)
    buffer = []
    out = np.empty((cfg.draws, d))
    accepted_sum = 0.0
    divergences = 0
    total = cfg.warmup + cfg.draws
    for it in range(total):
        warm = it < cfg.warmup
        lo, hi = max(1, int(round(cfg.leapfrog * (1 - cfg.jitter)))), int(round(cfg.leapfrog * (1 + cfg.jitter)))
        steps = int(rng.integers(lo, hi + 1))
        p0 = rng.standard_normal(d) / np.sqrt(inv_mass)
        h0 = lp - 0.5 * np.sum(inv_mass * p0 * p0)
        # a diverging trajectory may overflow; it is then rejected below
        with np.errstate(over="ignore", invalid="ignore"):
            th1, p1, lp1, g1 = _leapfrog(logp, theta, p0, grad, eps, inv_mass, steps)
            h1 = lp1 - 0.5 * np.sum(inv_mass * p1 * p1) if np.isfinite(lp1) else -np.inf
        delta = h1 - h0
        if not np.isfinite(delta) or -delta > cfg.max_energy_error:
            accept = 0.0
            if not warm:
                divergences += 1
        else:
            accept = float(min(1.0, np.exp(delta)))
        if rng.uniform() < accept:
            theta, lp, grad = th1, lp1, g1
        if warm:
            eps = da.update(accept)
            if window[0] <= it < window[1]:
                buffer.append(theta.copy())
            if it == window[1] - 1 and len(buffer) >= 10:
                b = np.array(buffer)
                n = b.shape[0]
                var = b.var(axis=0, ddof=1)
                inv_mass = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
                eps = _initial_step_size(logp, theta, lp, grad, inv_mass, rng)
                da = _DualAveraging(eps, cfg.target_accept)
            if it == cfg.warmup - 1:
                eps = da.final
        else:
            out[it - cfg.warmup] = theta
            accepted_sum += accept
    return out, accepted_sum / cfg.draws, divergences, eps, inv_mass


def hmc_sample(logp, init, config: HmcConfig | None = None, names=None) -> PosteriorDraws:
    """Run ``config.chains`` chains sequentially.

    ``logp(theta)`` returns ``(log density, gradient)``.  ``init`` is either a
    starting vector, a ``(chains, dim)`` array, or a callable taking a
    :class:`numpy.random.Generator` and returning a starting vector.  Chain
    ``c`` draws from the stream seeded by ``(config.seed, c)``.
    """
    cfg = config or HmcConfig()
    samples, acc, div, eps_out, masses = [], [], [], [], []
    for c in range(cfg.chains):
        rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), c]))
        if callable(init):
            start = init(rng)
        else:
            arr = np.asarray(init, dtype=np.float64)
            start = arr[c] if arr.ndim == 2 else arr
        draws, a, dv, e, mass = _run_chain(logp, start, cfg, rng)
        if a < cfg.min_accept:
            raise SamplerError(
                f"chain {c}: post-warmup acceptance {a:.3f} below {cfg.min_accept} "
                f"(step size {e:.3g}, {dv} divergences)"
            )
        if dv:
            log.warning("chain %d: %d divergent transitions", c, dv)
        samples.append(draws)
        acc.append(a)
        div.append(dv)
        eps_out.append(e)
        masses.append(mass)
    samples = np.array(samples)
    names = tuple(names) if names is not None else tuple(f"theta[{j}]" for j in range(samples.shape[-1]))
    return PosteriorDraws(samples, names, np.array(acc), np.array(div), np.array(eps_out),
                          np.array(masses), cfg)
