"""Vectorized episode simulation.

Episodes are simulated in batches: one numpy-level loop over time steps,
with every per-run quantity (state, statistic, phase, cost) held in arrays
across runs. Demands are exogenous inverse-CDF draws, so runs with the same
seed share demand paths across policies and threshold settings (common
random numbers).

Randomness protocol, fixed per run: seed the generator from
SeedSequence(master_seed, spawn_key=(run_id,)), draw the change point (one
geometric variate, if the change spec is random), then a horizon-length
block of demand uniforms, then a horizon-length block of action uniforms
(consumed only by the random policy but always drawn, so every policy sees
identical demand paths).

A step at 0-indexed time k consumes the transition realized at k-1 (for
k >= 1) before choosing the action, runs under the post-change regime iff
k >= gamma - 1, pays the active regime's exact expected cost, and then
realizes the next transition. Stopping times are transition indices: the
transition realized between times k-1 and k has index k.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .detectors import log_ratio_table, shiryaev_log_update
from .inventory import ChangeSpec, InventoryEnv, demand_from_uniform, sample_change_point
from .mdp import EPS_PROB
from .momdp import MomdpSolution, belief_step

BATCHABLE_KINDS = ("oracle", "random", "loc", "kl", "tt", "momdp")


@dataclass(frozen=True)
class EpisodeSetup:
    """Everything needed to simulate episodes of one policy on one instance."""

    env: InventoryEnv
    policy_kind: str
    change: ChangeSpec
    horizon: int
    beta: float
    pi_pre: np.ndarray | None = None
    pi_probe: np.ndarray | None = None
    pi_post: np.ndarray | None = None
    detector_kind: str = "shiryaev"      # shiryaev | sr | cusum
    detector_rho: float = 0.0
    window: int = 200
    eps_prob: float = EPS_PROB
    threshold_a: float = math.inf
    threshold_b: float = 0.0
    momdp: MomdpSolution | None = None
    initial_state: int = 0

    def __post_init__(self):
        if self.policy_kind not in BATCHABLE_KINDS:
            raise ValueError(f"unsupported policy kind {self.policy_kind!r}")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must be in [0, 1), got {self.beta}")
        if self.policy_kind in ("loc", "kl", "tt"):
            if self.pi_pre is None or self.pi_post is None:
                raise ValueError(f"{self.policy_kind} needs pi_pre and pi_post")
            if self.policy_kind in ("kl", "tt") and self.pi_probe is None:
                raise ValueError(f"{self.policy_kind} needs pi_probe")
            if self.detector_kind not in ("shiryaev", "sr", "cusum"):
                raise ValueError(f"unsupported detector kind {self.detector_kind!r}")
        if self.policy_kind == "oracle" and (self.pi_pre is None or self.pi_post is None):
            raise ValueError("oracle needs pi_pre and pi_post")
        if self.policy_kind == "momdp" and self.momdp is None:
            raise ValueError("momdp needs a solved belief-grid policy")

    def effective_thresholds(self) -> tuple[float, float]:
        """(A, B) after applying the kind's degeneracies."""
        a = self.threshold_a
        if self.policy_kind == "loc":
            return a, a
        if self.policy_kind == "kl":
            return a, 0.0 if self.detector_kind in ("shiryaev", "sr") else -math.inf
        return a, self.threshold_b


@dataclass
class BatchResult:
    """Per-run outcomes of one simulated batch (aligned with run_ids)."""

    run_ids: np.ndarray
    gamma: np.ndarray              # float, inf = never
    tau: np.ndarray                # int, -1 = no switch
    discounted_cost: np.ndarray
    trace: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def premature(self) -> np.ndarray:
        return (self.tau >= 0) & (self.tau < self.gamma)

    @property
    def detection_delay(self) -> np.ndarray:
        """(tau - gamma)^+ where a switch happened and the change is finite;
        NaN elsewhere."""
        delay = np.full(len(self.tau), np.nan)
        ok = (self.tau >= 0) & np.isfinite(self.gamma)
        delay[ok] = np.maximum(0.0, self.tau[ok] - self.gamma[ok])
        return delay


def draw_episode_randomness(change: ChangeSpec, horizon: int, master_seed: int,
                            run_ids: np.ndarray):
    """Per-run change points and uniform blocks under the fixed protocol.

    Draws are cached on (change, horizon, seed, ids) so threshold-grid
    searches reuse the same paths instead of regenerating them per cell;
    callers must treat the returned arrays as read-only.
    """
    key = (change, horizon, int(master_seed), np.asarray(run_ids, dtype=int).tobytes())
    with _CACHE_LOCK:
        cached = _RANDOMNESS_CACHE.get(key)
    if cached is not None:
        return cached
    n = len(run_ids)
    gamma = np.empty(n)
    demand_u = np.empty((n, horizon))
    action_u = np.empty((n, horizon))
    for i, run_id in enumerate(run_ids):
        ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(int(run_id),))
        rng = np.random.default_rng(ss)
        gamma[i] = sample_change_point(change, rng)
        demand_u[i] = rng.random(horizon)
        action_u[i] = rng.random(horizon)
    with _CACHE_LOCK:
        if len(_RANDOMNESS_CACHE) >= 8:
            _RANDOMNESS_CACHE.pop(next(iter(_RANDOMNESS_CACHE)))
        _RANDOMNESS_CACHE[key] = (gamma, demand_u, action_u)
    return gamma, demand_u, action_u


_RANDOMNESS_CACHE: dict = {}
_CACHE_LOCK = threading.Lock()


def _comparison_thresholds(setup: EpisodeSetup) -> tuple[float, float]:
    a, b = setup.effective_thresholds()
    if setup.detector_kind in ("shiryaev", "sr"):
        log_a = float(np.log(a)) if a > 0 else -math.inf
        log_b = float(np.log(b)) if b > 0 else -math.inf
        return log_a, log_b
    return a, b


def simulate_batch(setup: EpisodeSetup, master_seed: int, run_ids,
                   trace: bool = False) -> BatchResult:
    """Simulate one batch of episodes; deterministic in (setup, seed, ids)."""
    run_ids = np.asarray(run_ids, dtype=int)
    n = len(run_ids)
    env, horizon, kind = setup.env, setup.horizon, setup.policy_kind
    gamma, demand_u, action_u = draw_episode_randomness(
        setup.change, horizon, master_seed, run_ids)

    cum_pre = np.cumsum(env.pmf_pre)
    cum_pre[-1] = 1.0
    cum_post = np.cumsum(env.pmf_post)
    cum_post[-1] = 1.0
    c_pre, c_post = env.mdp_pre.cost, env.mdp_post.cost

    uses_detector = kind in ("loc", "kl", "tt")
    uses_belief = kind == "momdp"
    if uses_detector or uses_belief:
        log_lr = log_ratio_table(env.mdp_post.kernel, env.mdp_pre.kernel, setup.eps_prob)
    if uses_detector:
        log_a, log_b = _comparison_thresholds(setup)
        log1m_rho = float(np.log1p(-setup.detector_rho))
        if setup.detector_kind == "cusum":
            window = setup.window
            buf = np.zeros((n, window + 1))
            stat = np.full(n, -math.inf)
        else:
            stat = np.full(n, -math.inf)     # log S_n; S_0 = 0
    if uses_belief:
        lr_lin = np.exp(log_lr)
        belief = np.zeros(n)
        g = setup.momdp.grid_size
        momdp_policy = setup.momdp.policy
    if kind == "random":
        n_states = env.n_states
        for s, acts in enumerate(env.mdp_pre.feasible):
            if tuple(acts) != tuple(range(len(acts))):
                raise ValueError("random policy requires contiguous feasible actions")
        n_feas = np.array([len(acts) for acts in env.mdp_pre.feasible])

    s = np.full(n, setup.initial_state, dtype=int)
    s_prev = np.zeros(n, dtype=int)
    a_prev = np.zeros(n, dtype=int)
    switched = np.zeros(n, dtype=bool)
    tau = np.full(n, -1, dtype=int)
    disc = np.zeros(n)
    beta_pow = 1.0
    traces: dict[str, np.ndarray] = {}
    if trace:
        traces = {name: np.zeros((n, horizon)) for name in
                  ("state", "action", "demand", "statistic", "phase", "cost")}

    for k in range(horizon):
        if k >= 1:
            if uses_detector:
                active = ~switched
                if active.any():
                    step_lr = log_lr[s_prev[active], a_prev[active], s[active]]
                    if setup.detector_kind == "cusum":
                        buf[active, :-1] = buf[active, 1:]
                        buf[active, -1] = step_lr
                        valid = min(k, window + 1)
                        recent = buf[active, window + 1 - valid:][:, ::-1]
                        stat[active] = np.cumsum(recent, axis=1).max(axis=1)
                    else:
                        stat[active] = shiryaev_log_update(stat[active], step_lr, log1m_rho)
                    newly = active & (stat > log_a)
                    tau[newly] = k
                    switched |= newly
            if uses_belief:
                step_lr = lr_lin[s_prev, a_prev, s]
                belief = belief_step(belief, step_lr, setup.momdp.pomdp.rho)

        if kind == "oracle":
            post_now = k >= gamma - 1.0
            a = np.where(post_now, setup.pi_post[s], setup.pi_pre[s])
        elif kind == "random":
            a = (action_u[:, k] * n_feas[s]).astype(int)
        elif kind == "momdp":
            bi = np.rint(belief * (g - 1)).astype(int)
            a = momdp_policy[s, bi]
        else:
            probe = ~switched & (stat > log_b)
            a = np.where(switched, setup.pi_post[s],
                         np.where(probe, setup.pi_probe[s], setup.pi_pre[s]))

        post_regime = k >= gamma - 1.0
        cost = np.where(post_regime, c_post[s, a], c_pre[s, a])
        disc += beta_pow * cost
        beta_pow *= setup.beta

        u = demand_u[:, k]
        w = np.where(post_regime,
                     demand_from_uniform(cum_post, u),
                     demand_from_uniform(cum_pre, u))
        if trace:
            traces["state"][:, k] = s
            traces["action"][:, k] = a
            traces["demand"][:, k] = w
            traces["cost"][:, k] = cost
            if uses_detector:
                traces["statistic"][:, k] = stat
                traces["phase"][:, k] = np.where(
                    switched, 2, (stat > log_b).astype(int))
            elif uses_belief:
                traces["statistic"][:, k] = belief
        s_prev, a_prev = s, a
        s = np.maximum(0, s + a - w).astype(int)

    return BatchResult(run_ids=run_ids, gamma=gamma, tau=tau,
                       discounted_cost=disc, trace=traces)
