"""Sequential change detectors over state-action trajectories.

Four statistics are provided: Shiryaev (geometric-prior Bayesian), its
rho = 0 limit Shiryaev-Roberts (SR), a windowed CUSUM, and a windowed GLR
over a grid of candidate post-change kernels. Shiryaev/SR statistics are
kept in log domain so long runs never overflow; CUSUM/GLR statistics are
already sums of log-likelihood ratios.

Thresholds for Shiryaev/SR live in the linear statistic domain and are
compared in logs; CUSUM/GLR thresholds are log-domain reals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from itertools import accumulate

import numpy as np

from .errors import StateError
from .mdp import EPS_PROB

NEG_INF = float("-inf")


def log_ratio_table(kernel1: np.ndarray, kernel0: np.ndarray,
                    eps_prob: float = EPS_PROB) -> np.ndarray:
    """(S, A, S) table of log(max(T1, eps) / max(T0, eps)).

    Computed as a difference of logs; every per-transition log-likelihood
    ratio in the package comes from this same expression so that scalar and
    vectorized paths agree bit for bit.
    """
    k1 = np.asarray(kernel1, dtype=float)
    k0 = np.asarray(kernel0, dtype=float)
    return np.log(np.maximum(k1, eps_prob)) - np.log(np.maximum(k0, eps_prob))


def log_likelihood_ratio(kernel0: np.ndarray, kernel1: np.ndarray,
                         s: int, a: int, s_next: int,
                         eps_prob: float = EPS_PROB) -> float:
    """Per-transition log-likelihood ratio of post- vs pre-change kernel."""
    k0 = np.asarray(kernel0, dtype=float)
    k1 = np.asarray(kernel1, dtype=float)
    n_states, n_actions = k0.shape[0], k0.shape[1]
    if not (0 <= s < n_states and 0 <= s_next < n_states):
        raise ValueError(f"state out of range: {s} -> {s_next}")
    if not 0 <= a < n_actions:
        raise ValueError(f"action {a} out of range")
    t1 = float(np.log(np.maximum(k1[s, a, s_next], eps_prob)))
    t0 = float(np.log(np.maximum(k0[s, a, s_next], eps_prob)))
    return t1 - t0


def shiryaev_log_update(log_stat, log_lr, log_one_minus_rho):
    """One step of the Shiryaev recursion in log domain.

    S_n = ((1 + S_{n-1}) / (1 - rho)) * lr_n, i.e.
    log S_n = logaddexp(0, log S_{n-1}) - log(1 - rho) + log lr_n.
    Works elementwise on arrays; shared by the scalar and batch engines.
    """
    return np.logaddexp(0.0, log_stat) - log_one_minus_rho + log_lr


@dataclass(frozen=True)
class DetectorConfig:
    """Configuration for one sequential detector."""

    kind: str                                   # shiryaev | sr | cusum | glr
    threshold: float                            # A (see module docstring for domains)
    rho: float = 0.0                            # geometric prior parameter (shiryaev)
    window: int = 200                           # m, suffix window for cusum/glr
    theta_grid: tuple[np.ndarray, ...] = ()     # candidate post-change kernels (glr)
    min_separation: float = 1e-6                # required sup-distance of candidates from T0
    eps_prob: float = EPS_PROB

    def __post_init__(self):
        if self.kind not in ("shiryaev", "sr", "cusum", "glr"):
            raise ValueError(f"unknown detector kind {self.kind!r}")
        if self.kind == "shiryaev" and not 0.0 < self.rho < 1.0:
            raise ValueError("shiryaev requires rho in (0, 1); use kind='sr' for rho = 0")
        if self.kind == "sr" and self.rho != 0.0:
            raise ValueError("sr is the rho = 0 Shiryaev statistic")
        if self.kind in ("cusum", "glr") and self.window < 1:
            raise ValueError("window must be >= 1")
        if self.kind == "glr" and len(self.theta_grid) == 0:
            raise ValueError("glr requires a nonempty theta_grid")


@dataclass(frozen=True)
class DetectorState:
    """Value object holding a running statistic.

    `log_stat` is log S_n for shiryaev/sr (so -inf encodes S_n = 0) and the
    statistic itself for cusum/glr. `buffers` holds one tuple of recent
    per-step log-likelihood ratios per candidate (cusum keeps a single row).
    """

    kind: str
    n: int = 0
    log_stat: float = NEG_INF
    stopped_at: int | None = None
    buffers: tuple[tuple[float, ...], ...] = ()
    theta_hat: int | None = None

    @property
    def statistic(self) -> float:
        """Statistic in its natural domain (linear for shiryaev/sr)."""
        if self.kind in ("shiryaev", "sr"):
            return math.exp(self.log_stat) if self.log_stat != NEG_INF else 0.0
        return self.log_stat

    @property
    def stopped(self) -> bool:
        return self.stopped_at is not None


def new_detector_state(kind: str) -> DetectorState:
    if kind in ("cusum", "glr"):
        return DetectorState(kind=kind, buffers=((),))
    return DetectorState(kind=kind)


def shiryaev_step(state: DetectorState, lr: float, rho: float) -> DetectorState:
    """Advance the Shiryaev recursion by one likelihood ratio."""
    if rho >= 1.0 or rho < 0.0:
        raise ValueError(f"rho must be in [0, 1), got {rho}")
    if lr < 0.0:
        raise ValueError(f"likelihood ratio must be non-negative, got {lr}")
    if state.stopped:
        raise StateError("detector already stopped")
    log_lr = float(np.log(lr)) if lr > 0.0 else NEG_INF
    new_log = float(shiryaev_log_update(state.log_stat, log_lr, float(np.log1p(-rho))))
    return replace(state, n=state.n + 1, log_stat=new_log)


def sr_step(state: DetectorState, lr: float) -> DetectorState:
    """Shiryaev-Roberts update: the Shiryaev recursion with rho = 0."""
    return shiryaev_step(state, lr, 0.0)


def _suffix_max(buffer: tuple[float, ...]) -> float:
    # max over sums of the last j entries, j = 1..len(buffer)
    return max(accumulate(reversed(buffer)))


def cusum_step(state: DetectorState, log_lr: float, window: int) -> DetectorState:
    """Windowed CUSUM update: max over suffix sums of the last window+1 ratios."""
    if window < 1:
        raise ValueError("window must be >= 1")
    if state.stopped:
        raise StateError("detector already stopped")
    buf = (state.buffers[0] if state.buffers else ()) + (float(log_lr),)
    buf = buf[-(window + 1):]
    return replace(state, n=state.n + 1, log_stat=float(_suffix_max(buf)), buffers=(buf,))


def glr_step(state: DetectorState, transition: tuple[int, int, int],
             kernel0: np.ndarray, theta_grid: tuple[np.ndarray, ...],
             window: int, eps_prob: float = EPS_PROB) -> DetectorState:
    """Windowed GLR update over a grid of candidate post-change kernels.

    The statistic is the max over suffixes and candidates of the summed
    log-likelihood ratios; `theta_hat` records the maximizing candidate
    (lowest index on ties).
    """
    if len(theta_grid) == 0:
        raise ValueError("theta_grid must be nonempty")
    if state.stopped:
        raise StateError("detector already stopped")
    s, a, s_next = transition
    buffers = state.buffers
    if len(buffers) != len(theta_grid):
        buffers = tuple(() for _ in theta_grid)
    new_buffers = []
    best_stat, best_idx = NEG_INF, 0
    for idx, kernel_theta in enumerate(theta_grid):
        log_lr = log_likelihood_ratio(kernel0, kernel_theta, s, a, s_next, eps_prob)
        buf = buffers[idx] + (log_lr,)
        buf = buf[-(window + 1):]
        new_buffers.append(buf)
        stat = _suffix_max(buf)
        if stat > best_stat:
            best_stat, best_idx = stat, idx
    return replace(state, n=state.n + 1, log_stat=float(best_stat),
                   buffers=tuple(new_buffers), theta_hat=best_idx)


def check_stop(state: DetectorState, threshold: float) -> DetectorState:
    """Record the first time n >= 1 at which the statistic strictly exceeds
    the threshold; idempotent once stopped.

    The threshold is linear-domain for shiryaev/sr and log-domain for
    cusum/glr.
    """
    if state.stopped or state.n == 0:
        return state
    if state.kind in ("shiryaev", "sr"):
        if threshold < 0:
            raise ValueError("threshold must be non-negative for shiryaev/sr")
        log_a = float(np.log(threshold)) if threshold > 0.0 else NEG_INF
    else:
        log_a = threshold
    if state.log_stat > log_a:
        return replace(state, stopped_at=state.n)
    return state


def geometric_prior(rho: float, n: int) -> np.ndarray:
    """phi(k) = rho * (1 - rho)^(k-1) for k = 1..n."""
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must be in (0, 1), got {rho}")
    k = np.arange(1, n + 1)
    return rho * (1.0 - rho) ** (k - 1)


def shiryaev_batch(prior: np.ndarray, log_lrs: np.ndarray) -> float:
    """Batch change statistic sum_k phi(k) * prod_{i=k..n} lr_i.

    Evaluated in log-sum-exp form. This is the reference form; the running
    recursion equals it up to the factor rho * (1-rho)^n when the prior is
    geometric, which tests exploit as an oracle.
    """
    prior = np.asarray(prior, dtype=float)
    log_lrs = np.asarray(log_lrs, dtype=float)
    n = len(log_lrs)
    if len(prior) < n:
        raise ValueError("prior must cover the horizon")
    if np.any(prior < 0) or prior[:n].sum() > 1.0 + 1e-12:
        raise ValueError("prior must be a (sub-)pmf")
    if n == 0:
        return 0.0
    # suffix[k] = sum of log_lrs[k:], k = 0..n-1
    suffix = np.cumsum(log_lrs[::-1])[::-1]
    with np.errstate(divide="ignore"):
        terms = np.log(prior[:n]) + suffix
    finite = terms[np.isfinite(terms)]
    if len(finite) == 0:
        return 0.0
    m = finite.max()
    return float(math.exp(m) * np.sum(np.exp(finite - m)))


def posterior_from_shiryaev(statistic: float, rho: float) -> float:
    """Posterior probability that the change has occurred, from the running
    Shiryaev statistic: p = rho * S / (1 + rho * S)."""
    if statistic < 0:
        raise ValueError("statistic must be non-negative")
    if math.isinf(statistic):
        return 1.0
    return rho * statistic / (1.0 + rho * statistic)


def posterior_from_log_shiryaev(log_stat: float, rho: float) -> float:
    """Overflow-safe posterior from log S_n."""
    if log_stat == NEG_INF:
        return 0.0
    z = math.log(rho) + log_stat
    return float(math.exp(z - np.logaddexp(0.0, z)))


class Detector:
    """Driver feeding (s, a, s') transitions into one configured statistic.

    Holds the pre/post-change kernels, the running DetectorState, and the
    stopping threshold; `update` raises StateError once stopped (callers
    stop feeding a stopped detector).
    """

    def __init__(self, config: DetectorConfig, kernel0: np.ndarray,
                 kernel1: np.ndarray | None = None):
        self.config = config
        self.kernel0 = np.asarray(kernel0, dtype=float)
        if config.kind == "glr":
            for idx, kernel_theta in enumerate(config.theta_grid):
                dist = float(np.max(np.abs(np.asarray(kernel_theta) - self.kernel0)))
                if dist < config.min_separation:
                    raise ValueError(
                        f"glr candidate {idx} is within {dist:.3e} of the "
                        f"pre-change kernel (min separation {config.min_separation})"
                    )
            self.kernel1 = None
            self._log_lr = None
        else:
            if kernel1 is None:
                raise ValueError(f"{config.kind} requires the post-change kernel")
            self.kernel1 = np.asarray(kernel1, dtype=float)
            self._log_lr = log_ratio_table(self.kernel1, self.kernel0, config.eps_prob)
        self._log1m_rho = float(np.log1p(-config.rho))
        self.state = new_detector_state(config.kind)

    def update(self, s: int, a: int, s_next: int) -> DetectorState:
        cfg = self.config
        if self.state.stopped:
            raise StateError("detector already stopped")
        if cfg.kind in ("shiryaev", "sr"):
            log_lr = float(self._log_lr[s, a, s_next])
            new_log = float(shiryaev_log_update(self.state.log_stat, log_lr, self._log1m_rho))
            self.state = replace(self.state, n=self.state.n + 1, log_stat=new_log)
        elif cfg.kind == "cusum":
            self.state = cusum_step(self.state, float(self._log_lr[s, a, s_next]), cfg.window)
        else:
            self.state = glr_step(self.state, (s, a, s_next), self.kernel0,
                                  cfg.theta_grid, cfg.window, cfg.eps_prob)
        self.state = check_stop(self.state, cfg.threshold)
        return self.state

    @property
    def stopped(self) -> bool:
        return self.state.stopped

    @property
    def stopped_at(self) -> int | None:
        return self.state.stopped_at
