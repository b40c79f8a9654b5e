"""Runtime switching controllers mapping (state, detector state) to actions.

All controllers share the same phase machine: play the pre-change-optimal
policy while the statistic is at or below B, probe with the information-
maximizing policy while it sits in (B, A], and switch absorbingly to the
post-change-optimal policy once it exceeds A. Degenerate thresholds recover
the named baselines: B = A is the single-threshold switch-on-detection
policy, B at the statistic floor probes from the start.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from .detectors import NEG_INF, Detector, DetectorConfig
from .errors import StateError
from .mdp import EPS_PROB, TabularMdp, kl_per_action, value_iteration

CONTROLLER_KINDS = ("oracle", "loc", "kl", "tt", "random", "glr")


def kl_policy(kernel0: np.ndarray, kernel1: np.ndarray,
              feasible: tuple[tuple[int, ...], ...] | None = None,
              eps_prob: float = EPS_PROB) -> np.ndarray:
    """Per-state action maximizing KL(T1(s,a,.) || T0(s,a,.)).

    Ties break toward the lowest action index, so identical kernels give the
    all-zeros policy.
    """
    kl = kl_per_action(kernel1, kernel0, eps_prob)
    return _masked_argmax(kl, feasible)


def worst_case_kl_policy(kernel0: np.ndarray,
                         theta_grid: tuple[np.ndarray, ...],
                         feasible: tuple[tuple[int, ...], ...] | None = None,
                         eps_prob: float = EPS_PROB) -> np.ndarray:
    """Probing policy for an unknown post-change model: maximize the worst-case
    KL divergence over the candidate grid."""
    if len(theta_grid) == 0:
        raise ValueError("theta_grid must be nonempty")
    worst = None
    for kernel_theta in theta_grid:
        kl = kl_per_action(np.asarray(kernel_theta, dtype=float), kernel0, eps_prob)
        worst = kl if worst is None else np.minimum(worst, kl)
    return _masked_argmax(worst, feasible)


def _masked_argmax(score: np.ndarray, feasible) -> np.ndarray:
    if feasible is not None:
        masked = np.full_like(score, -np.inf)
        for s, acts in enumerate(feasible):
            masked[s, list(acts)] = score[s, list(acts)]
        score = masked
    return np.argmax(score, axis=1).astype(int)


def _comparison_domain(detector_kind: str, threshold: float) -> float:
    """Thresholds compare against log S_n for shiryaev/sr and against the
    statistic itself for cusum/glr."""
    if detector_kind in ("shiryaev", "sr"):
        if threshold < 0:
            raise ValueError("shiryaev/sr thresholds must be non-negative")
        return float(np.log(threshold)) if threshold > 0.0 else NEG_INF
    return float(threshold)


class SwitchController:
    """Per-episode state machine for the oracle, random, single-threshold,
    probe-always and two-threshold policies.

    kind='tt' takes both thresholds; 'loc' forces B = A and 'kl' forces B to
    the statistic floor (0 for shiryaev/sr, -inf for cusum), so the
    reductions hold action-for-action by construction.
    """

    def __init__(self, kind: str, pi_pre: np.ndarray | None = None,
                 pi_probe: np.ndarray | None = None,
                 pi_post: np.ndarray | None = None,
                 detector: Detector | None = None,
                 threshold_a: float = math.inf,
                 threshold_b: float | None = None,
                 oracle_switch_time: float = math.inf,
                 feasible: tuple[tuple[int, ...], ...] | None = None):
        if kind not in ("oracle", "loc", "kl", "tt", "random"):
            raise ValueError(f"unknown controller kind {kind!r}")
        self.kind = kind
        self.pi_pre = None if pi_pre is None else np.asarray(pi_pre, dtype=int)
        self.pi_probe = None if pi_probe is None else np.asarray(pi_probe, dtype=int)
        self.pi_post = None if pi_post is None else np.asarray(pi_post, dtype=int)
        self.detector = detector
        self.oracle_switch_time = oracle_switch_time
        self.feasible = feasible
        self.phase = "pre"
        self.tau_switch: int | None = None

        if kind == "random":
            if feasible is None:
                raise ValueError("random controller needs the feasible action sets")
            return
        if kind == "oracle":
            if self.pi_pre is None or self.pi_post is None:
                raise ValueError("oracle controller needs pi_pre and pi_post")
            return
        if detector is None:
            raise ValueError(f"{kind} controller needs a detector")
        if self.pi_pre is None or self.pi_post is None:
            raise ValueError(f"{kind} controller needs pi_pre and pi_post")
        dkind = detector.config.kind
        floor = 0.0 if dkind in ("shiryaev", "sr") else -math.inf
        if kind == "loc":
            threshold_b = threshold_a
        elif kind == "kl":
            threshold_b = floor
        elif threshold_b is None:
            raise ValueError("tt controller needs threshold_b")
        if threshold_b > threshold_a:
            raise ValueError(f"need B <= A, got B={threshold_b}, A={threshold_a}")
        if kind in ("kl", "tt") and self.pi_probe is None:
            raise ValueError(f"{kind} controller needs pi_probe")
        if self.pi_probe is None:
            self.pi_probe = self.pi_pre  # loc never probes
        self.threshold_a = float(threshold_a)
        self.threshold_b = float(threshold_b)
        self._log_a = _comparison_domain(dkind, self.threshold_a)
        self._log_b = _comparison_domain(dkind, self.threshold_b)
        if detector.config.threshold != self.threshold_a:
            # the detector's stopping threshold is the controller's A
            detector.config = replace(detector.config, threshold=self.threshold_a)

    def step(self, s: int, transition_feedback: tuple[int, int, int] | None,
             now: int, rng: np.random.Generator | None = None) -> int:
        """Consume the just-realized transition, update the phase, and emit
        the action for the current state."""
        if self.kind == "oracle":
            if now >= self.oracle_switch_time:
                self.phase = "post"
                return int(self.pi_post[s])
            return int(self.pi_pre[s])
        if self.kind == "random":
            if rng is None:
                raise ValueError("random controller needs an rng")
            acts = self.feasible[s]
            return int(acts[int(rng.random() * len(acts))])

        if self.threshold_b > self.threshold_a:
            raise StateError("malformed controller: B > A")
        if self.phase != "post":
            if transition_feedback is not None:
                state = self.detector.update(*transition_feedback)
                if state.stopped:
                    self.phase = "post"
                    self.tau_switch = state.stopped_at
            elif now >= 1:
                raise ValueError("transition_feedback required for now >= 1")
            if self.phase != "post":
                self.phase = "probe" if self.detector.state.log_stat > self._log_b else "pre"
        if self.phase == "post":
            return int(self.pi_post[s])
        if self.phase == "probe":
            return int(self.pi_probe[s])
        return int(self.pi_pre[s])


def controller_step(ctrl, s: int, transition_feedback, now: int,
                    rng: np.random.Generator | None = None):
    """Functional wrapper over the controller state machines.

    Returns (action, controller); the controller is advanced in place.
    """
    return ctrl.step(s, transition_feedback, now, rng), ctrl


class GlrController:
    """Two-threshold controller for an unknown post-change model.

    Monitors with a windowed GLR over every candidate model other than the
    current pre-change one, probes with the worst-case-KL policy, and on
    stopping adopts the optimal policy of the maximum-likelihood candidate.
    `glr_reset` re-bases the controller on that candidate so multiple change
    points can be tracked.
    """

    kind = "glr"

    def __init__(self, models: tuple[TabularMdp, ...], pre_index: int,
                 threshold_a: float, threshold_b: float, window: int,
                 beta: float, vi_tol: float = 1e-8,
                 min_separation: float = 1e-6, eps_prob: float = EPS_PROB,
                 _policy_cache: dict | None = None):
        if threshold_b > threshold_a:
            raise ValueError(f"need B <= A, got B={threshold_b}, A={threshold_a}")
        self.models = tuple(models)
        self.pre_index = pre_index
        self.threshold_a = float(threshold_a)
        self.threshold_b = float(threshold_b)
        self.window = window
        self.beta = beta
        self.vi_tol = vi_tol
        self.min_separation = min_separation
        self.eps_prob = eps_prob
        self._policy_cache = {} if _policy_cache is None else _policy_cache
        pre = self.models[pre_index]
        self.candidates = tuple(i for i in range(len(self.models)) if i != pre_index)
        grid = tuple(self.models[i].kernel for i in self.candidates)
        self.detector = Detector(
            DetectorConfig(kind="glr", threshold=self.threshold_a, window=window,
                           theta_grid=grid, min_separation=min_separation,
                           eps_prob=eps_prob),
            pre.kernel)
        self.pi_pre = self._optimal_policy(pre_index)
        self.pi_probe = worst_case_kl_policy(pre.kernel, grid, pre.feasible, eps_prob)
        self.pi_post: np.ndarray | None = None
        self.estimated_index: int | None = None
        self.phase = "pre"
        self.tau_switch: int | None = None

    def _optimal_policy(self, index: int) -> np.ndarray:
        if index not in self._policy_cache:
            self._policy_cache[index] = value_iteration(
                self.models[index], self.beta, self.vi_tol).policy
        return self._policy_cache[index]

    def step(self, s: int, transition_feedback: tuple[int, int, int] | None,
             now: int, rng: np.random.Generator | None = None) -> int:
        if self.phase != "post":
            if transition_feedback is not None:
                state = self.detector.update(*transition_feedback)
                if state.stopped:
                    self.phase = "post"
                    self.tau_switch = state.stopped_at
                    self.estimated_index = self.candidates[state.theta_hat]
                    self.pi_post = self._optimal_policy(self.estimated_index)
            elif now >= 1:
                raise ValueError("transition_feedback required for now >= 1")
            if self.phase != "post":
                self.phase = ("probe" if self.detector.state.log_stat > self.threshold_b
                              else "pre")
        if self.phase == "post":
            return int(self.pi_post[s])
        if self.phase == "probe":
            return int(self.pi_probe[s])
        return int(self.pi_pre[s])


def glr_reset(ctrl: GlrController, theta_hat: int | None = None) -> GlrController:
    """Re-base a stopped GLR controller on its estimated post-change model.

    Returns a fresh controller whose pre-change model is the estimate, with
    a zeroed detector, enabling detection of the next change point.
    """
    if ctrl.phase != "post" or ctrl.estimated_index is None:
        raise StateError("glr_reset requires a stopped controller")
    new_pre = ctrl.estimated_index if theta_hat is None else theta_hat
    return GlrController(ctrl.models, new_pre, ctrl.threshold_a, ctrl.threshold_b,
                         ctrl.window, ctrl.beta, ctrl.vi_tol, ctrl.min_separation,
                         ctrl.eps_prob, _policy_cache=ctrl._policy_cache)
