"""Shared builders and independent oracles for the test suite.

Oracles here deliberately avoid the package's numerics: plain-Python brute
force (hypothesis enumeration, suffix scans, policy enumeration) so they can
arbitrate the vectorized implementations.
"""

import itertools
import math

import numpy as np

from nsmdp.mdp import TabularMdp

EPS = 1e-12


def random_kernel(n_states, n_actions, rng, min_prob=0.05):
    """Random stochastic kernel with strictly positive entries, so every
    policy induces an irreducible chain."""
    raw = rng.random((n_states, n_actions, n_states)) + min_prob
    return raw / raw.sum(axis=2, keepdims=True)


def random_mdp(n_states, n_actions, rng, min_prob=0.05):
    return TabularMdp(kernel=random_kernel(n_states, n_actions, rng, min_prob),
                      cost=rng.random((n_states, n_actions)))


def enumerate_policies(feasible):
    """All deterministic stationary policies as integer arrays."""
    for combo in itertools.product(*feasible):
        yield np.array(combo, dtype=int)


def kl_oracle(p, q, eps=EPS):
    """Scalar-loop KL with the same flooring rule, for cross-checking."""
    total = 0.0
    for pi, qi in zip(p, q):
        if pi > 0:
            total += pi * (math.log(max(pi, eps)) - math.log(max(qi, eps)))
    return max(total, 0.0)


def info_number_oracle(kernel0, kernel1, policy):
    """Stationary-average KL by brute-force power iteration."""
    n = kernel1.shape[0]
    p = np.array([kernel1[s, policy[s]] for s in range(n)])
    mu = np.full(n, 1.0 / n)
    for _ in range(200_000):
        nxt = mu @ p
        if np.max(np.abs(nxt - mu)) < 1e-14:
            break
        mu = nxt
    return sum(mu[s] * kl_oracle(kernel1[s, policy[s]], kernel0[s, policy[s]])
               for s in range(n))


def suffix_max_oracle(log_lrs, window):
    """Brute-force windowed suffix maximization for CUSUM-style statistics:
    max over k in [n - window, n] of sum(log_lrs[k-1:n])."""
    n = len(log_lrs)
    best = -math.inf
    for k in range(max(1, n - window), n + 1):
        best = max(best, sum(log_lrs[k - 1:n]))
    return best


def bayes_posterior_oracle(log_lrs, rho):
    """Exhaustive change-point-hypothesis posterior.

    Hypotheses: change at transition g in {1..n} with geometric prior
    rho (1-rho)^(g-1), or no change by n with mass (1-rho)^n; per-hypothesis
    likelihood relative to the all-pre path is the product of the post-change
    ratios.
    """
    n = len(log_lrs)
    num = 0.0
    for g in range(1, n + 1):
        weight = rho * (1.0 - rho) ** (g - 1)
        num += weight * math.exp(sum(log_lrs[g - 1:]))
    den = num + (1.0 - rho) ** n
    return num / den


def finite_horizon_policy_value(mdp, policy, beta, horizon, s0):
    """Backward-induction value of a stationary policy over a finite horizon."""
    v = np.zeros(mdp.n_states)
    idx = np.arange(mdp.n_states)
    p = mdp.kernel[idx, policy]
    c = mdp.cost[idx, policy]
    for _ in range(horizon):
        v = c + beta * p @ v
    return float(v[s0])


def is_order_up_to(policy):
    """True when the policy orders up to a fixed level: s + a(s) constant
    while orders are positive, zero orders beyond."""
    levels = [s + a for s, a in enumerate(policy) if a > 0]
    if not levels:
        return True
    target = levels[0]
    for s, a in enumerate(policy):
        expected = max(0, target - s)
        if a != expected:
            return False
    return True
