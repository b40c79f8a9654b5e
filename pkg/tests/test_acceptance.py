"""Acceptance suite: one test per exit criterion, each printing a PASS/FAIL
line (run with -s to stream them).

The heavy criteria (bayes-cost table, non-Bayesian frontier) run the full
protocol: horizon 1000, 1000 runs, thresholds optimized on the same seeds
used for reporting.
"""

import math
from contextlib import contextmanager

import numpy as np
import pytest

from nsmdp.controllers import SwitchController
from nsmdp.detectors import (Detector, DetectorConfig, cusum_step,
                             geometric_prior, glr_step, log_likelihood_ratio,
                             new_detector_state, posterior_from_log_shiryaev,
                             shiryaev_batch, shiryaev_step)
from nsmdp.cli import main as cli_main
from nsmdp.harness import (PolicySet, calibrate_from_grid, default_a_grid,
                           default_b_grid, delay_profile,
                           estimate_nonbayes_grid, make_setup, monte_carlo,
                           optimize_thresholds, solve_policies)
from nsmdp.inventory import ChangeSpec, InventoryParams, build_env
from nsmdp.mdp import (info_number, max_info_number, policy_evaluation,
                       value_iteration)
from nsmdp.momdp import belief_update

from util import (bayes_posterior_oracle, enumerate_policies, random_kernel,
                  random_mdp, suffix_max_oracle)

SEED = 0
PROTOCOL = dict(beta=0.99, horizon=1000, n_runs=1000, rho=0.01)

# reported in the source table for c=1, h=5, beta=0.99, rho=0.01; calibration
# targets only, because the post-change Uniform support is a free parameter
TABLE_TARGETS = {
    (20, 100): (4057, 4980, 4579, 4688, 16489),
    (20, 200): (4229, 5678, 5051, 5144, 27655),
    (20, 300): (4277, 5884, 5238, 5325, 38821),
    (10, 100): (2336, 2619, 2515, 2677, 7861),
    (10, 200): (2445, 2902, 2728, 2876, 13623),
    (10, 300): (2550, 2920, 2813, 3020, 19386),
}
INFO_TARGETS = {20: (8.45, 2.56), 10: (1.72, 1.17)}


@contextmanager
def criterion(number, description):
    try:
        yield
    except Exception:
        print(f"ACCEPTANCE {number} FAIL - {description}")
        raise
    print(f"ACCEPTANCE {number} PASS - {description}")


def test_criterion_1_detector_algebra():
    rng = np.random.default_rng(101)
    with criterion(1, "detector algebra: batch/recursive Shiryaev identity, "
                      "SR = Shiryaev(0), CUSUM = suffix brute force, "
                      "GLR(singleton) = CUSUM"):
        for _ in range(1000):
            n = int(rng.integers(1, 31))
            rho = float(rng.uniform(0.005, 0.3))
            log_lrs = rng.uniform(-1.5, 1.5, n)
            lrs = np.exp(log_lrs)

            shy = new_detector_state("shiryaev")
            sr = new_detector_state("sr")
            for lr in lrs:
                shy = shiryaev_step(shy, lr, rho)
                sr = shiryaev_step(sr, lr, 0.0)
            batch = shiryaev_batch(geometric_prior(rho, n), log_lrs)
            log_expected = math.log(rho) + n * math.log1p(-rho) + shy.log_stat
            assert abs(math.log(batch) - log_expected) <= 1e-9

            sr_direct = new_detector_state("sr")
            for lr in lrs:
                from nsmdp.detectors import sr_step
                sr_direct = sr_step(sr_direct, lr)
            assert sr_direct.log_stat == sr.log_stat

            m = int(rng.integers(1, 8))
            cus = new_detector_state("cusum")
            for i, x in enumerate(log_lrs, start=1):
                cus = cusum_step(cus, x, m)
                assert abs(cus.log_stat - suffix_max_oracle(log_lrs[:i], m)) <= 1e-12

        # GLR over a singleton grid replays the CUSUM path exactly
        k0, k1 = random_kernel(3, 2, rng), random_kernel(3, 2, rng)
        glr = new_detector_state("glr")
        cus = new_detector_state("cusum")
        for _ in range(50):
            tr = (int(rng.integers(3)), int(rng.integers(2)), int(rng.integers(3)))
            glr = glr_step(glr, tr, k0, (k1,), window=6)
            cus = cusum_step(cus, log_likelihood_ratio(k0, k1, *tr), window=6)
            assert abs(glr.log_stat - cus.log_stat) <= 1e-12


def test_criterion_2_bayes_filter_equivalence():
    rng = np.random.default_rng(202)
    rho = 0.02
    with criterion(2, "belief filter and Shiryaev posterior match the "
                      "exhaustive change-point Bayes oracle to 1e-9"):
        for _ in range(100):
            k0, k1 = random_kernel(3, 2, rng), random_kernel(3, 2, rng)
            b = 0.0
            state = new_detector_state("shiryaev")
            log_lrs = []
            for _ in range(15):
                tr = (int(rng.integers(3)), int(rng.integers(2)),
                      int(rng.integers(3)))
                llr = log_likelihood_ratio(k0, k1, *tr)
                log_lrs.append(llr)
                b = belief_update(b, *tr, k0, k1, rho)
                state = shiryaev_step(state, math.exp(llr), rho)
                expected = bayes_posterior_oracle(log_lrs, rho)
                assert abs(b - expected) <= 1e-9
                assert abs(posterior_from_log_shiryaev(state.log_stat, rho)
                           - expected) <= 1e-9


def test_criterion_3_dynamic_programming():
    rng = np.random.default_rng(303)
    with criterion(3, "value iteration residual <= 1e-8; greedy and "
                      "max-information policies match exhaustive enumeration"):
        instances = [random_mdp(int(rng.integers(2, 4)), int(rng.integers(2, 4)), rng)
                     for _ in range(8)]
        params = InventoryParams(capacity=10, order_cost=1.0, holding_cost=5.0,
                                 penalty=100.0, demand_rate=2.0)
        instances.append(build_env(params).mdp_pre)
        for mdp in instances:
            beta = 0.9
            value, policy, _ = value_iteration(mdp, beta, tol=1e-8)
            q = np.where(mdp.feasible_mask(),
                         mdp.cost + beta * mdp.kernel @ value, np.inf)
            assert np.max(np.abs(value - q.min(axis=1))) <= 1e-8
            if mdp.n_states <= 3:
                best = None
                for candidate in enumerate_policies(mdp.feasible):
                    v = policy_evaluation(mdp, candidate, beta)
                    if best is None or v.sum() < best[0] - 1e-10:
                        best = (v.sum(), candidate)
                assert np.array_equal(policy, best[1])

        for _ in range(6):
            n_s, n_a = int(rng.integers(2, 4)), int(rng.integers(2, 4))
            k0, k1 = random_kernel(n_s, n_a, rng), random_kernel(n_s, n_a, rng)
            gain, _ = max_info_number(k0, k1)
            feasible = tuple(tuple(range(n_a)) for _ in range(n_s))
            best = max(info_number(k0, k1, pi) for pi in enumerate_policies(feasible))
            assert abs(gain - best) <= 1e-6


def _lockstep_actions(env, ctrl_a, ctrl_b, seed, horizon=150, beta=0.95):
    """Drive two controllers through one shared demand stream, asserting
    action-for-action agreement."""
    from nsmdp.engine import draw_episode_randomness
    from nsmdp.inventory import demand_from_uniform
    change = ChangeSpec(kind="geometric", rho=0.05)
    gamma, demand_u, _ = draw_episode_randomness(change, horizon, seed,
                                                 np.array([0]))
    cum_pre = np.cumsum(env.pmf_pre)
    cum_pre[-1] = 1.0
    cum_post = np.cumsum(env.pmf_post)
    cum_post[-1] = 1.0
    s = 0
    s_prev = a_prev = 0
    for k in range(horizon):
        feedback = (s_prev, a_prev, s) if k >= 1 else None
        a1 = ctrl_a.step(s, feedback, k)
        a2 = ctrl_b.step(s, feedback, k)
        assert a1 == a2, f"actions diverge at step {k}: {a1} vs {a2}"
        post = k >= gamma[0] - 1.0
        w = int(demand_from_uniform(cum_post if post else cum_pre, demand_u[0, k]))
        s_prev, a_prev = s, a1
        s = max(0, s + a1 - w)


def test_criterion_4_reduction_identities(small_env, small_policies):
    env, ps = small_env, small_policies

    def controller(kind, a, b=0.0):
        det = Detector(DetectorConfig(kind="shiryaev", threshold=a, rho=0.05),
                       env.mdp_pre.kernel, env.mdp_post.kernel)
        return SwitchController(kind, pi_pre=ps.pi_pre, pi_probe=ps.pi_probe,
                                pi_post=ps.pi_post, detector=det,
                                threshold_a=a, threshold_b=b)

    with criterion(4, "two-threshold policy reduces action-for-action to the "
                      "single-threshold policy at A=B and to always-probe at B=0"):
        for seed in range(100):
            _lockstep_actions(env, controller("tt", 40.0, 40.0),
                              controller("loc", 40.0), seed)
        for seed in range(100):
            _lockstep_actions(env, controller("tt", 40.0, 0.0),
                              controller("kl", 40.0), seed)


@pytest.fixture(scope="module", params=[(20, 100), (20, 200), (20, 300),
                                        (10, 100), (10, 200), (10, 300)],
                ids=lambda np_: f"N{np_[0]}-p{np_[1]}")
def table_row(request):
    n_cap, penalty = request.param
    params = InventoryParams(capacity=n_cap, order_cost=1.0, holding_cost=5.0,
                             penalty=float(penalty), demand_rate=2.0)
    env = build_env(params)
    policies = solve_policies(env, PROTOCOL["beta"], momdp_grid=201,
                              momdp_rho=PROTOCOL["rho"], momdp_tol=1e-6)
    return n_cap, penalty, env, policies


def test_criterion_5_bayes_cost_ordering(table_row):
    n_cap, penalty, env, policies = table_row
    change = ChangeSpec(kind="geometric", rho=PROTOCOL["rho"])
    a_grid, b_grid = default_a_grid(), default_b_grid()

    def setup(kind, a=math.inf, b=0.0):
        return make_setup(env, policies, kind, change, PROTOCOL["horizon"],
                          PROTOCOL["beta"], detector_kind="shiryaev",
                          detector_rho=PROTOCOL["rho"], threshold_a=a,
                          threshold_b=b)

    with criterion(5, f"N={n_cap} p={penalty}: oracle < tt* < loc* < random "
                      "with non-overlapping 95% intervals; belief-grid "
                      "baseline lands between oracle and random"):
        oracle = monte_carlo(setup("oracle"), PROTOCOL["n_runs"], SEED)
        rand = monte_carlo(setup("random"), PROTOCOL["n_runs"], SEED)
        momdp = monte_carlo(setup("momdp"), PROTOCOL["n_runs"], SEED)
        loc = optimize_thresholds(setup("loc"), a_grid,
                                  n_runs=PROTOCOL["n_runs"], master_seed=SEED).report
        tt = optimize_thresholds(setup("tt"), a_grid, b_grid,
                                 n_runs=PROTOCOL["n_runs"], master_seed=SEED).report

        targets = TABLE_TARGETS[(n_cap, penalty)]
        print(f"\n  N={n_cap} p={penalty}: "
              f"oracle {oracle.mean_cost:.0f}±{oracle.stderr:.0f} "
              f"tt {tt.mean_cost:.0f}±{tt.stderr:.0f} "
              f"loc {loc.mean_cost:.0f}±{loc.stderr:.0f} "
              f"momdp {momdp.mean_cost:.0f}±{momdp.stderr:.0f} "
              f"random {rand.mean_cost:.0f}±{rand.stderr:.0f} "
              f"(reported targets: oracle {targets[0]}, loc {targets[1]}, "
              f"tt {targets[2]}, momdp {targets[3]}, random {targets[4]})")

        chain = [oracle, tt, loc, rand]
        for low, high in zip(chain, chain[1:]):
            assert low.mean_cost + 1.96 * low.stderr < \
                high.mean_cost - 1.96 * high.stderr, \
                f"{low.policy} vs {high.policy} intervals overlap"
        assert oracle.mean_cost < momdp.mean_cost < rand.mean_cost


def test_criterion_6_information_gap(paper_env, paper_policies):
    with criterion(6, "probing strictly beats the exploit policy in "
                      "information rate on the capacity-20 instance"):
        k0, k1 = paper_env.mdp_pre.kernel, paper_env.mdp_post.kernel
        i_pre = info_number(k0, k1, paper_policies.pi_pre)
        i_probe = info_number(k0, k1, paper_policies.pi_probe)
        i_max, _ = max_info_number(k0, k1, paper_env.mdp_pre.feasible)
        target_max, target_pre = INFO_TARGETS[20]
        print(f"\n  I_pi0={i_pre:.3f} I_probe={i_probe:.3f} I_max={i_max:.3f} "
              f"(reported targets: I_max {target_max}, I_pi0 {target_pre})")
        assert i_pre < i_max
        assert i_probe > i_pre
        assert i_max >= i_probe - 1e-6


def test_criterion_7_frontier_dominance():
    params = InventoryParams(capacity=20, order_cost=1.0, holding_cost=5.0,
                             penalty=200.0, demand_rate=2.0)
    env = build_env(params)
    policies = solve_policies(env, PROTOCOL["beta"])
    change = ChangeSpec(kind="geometric", rho=PROTOCOL["rho"])
    a_grid, b_grid = default_a_grid(), default_b_grid()

    def setup(kind):
        return make_setup(env, policies, kind, change, PROTOCOL["horizon"],
                          PROTOCOL["beta"], detector_kind="sr")

    with criterion(7, "non-Bayesian frontier: two-threshold change-at-1 cost "
                      "within 2 stderr of single-threshold everywhere, "
                      "strictly lower at >= half the constraint levels"):
        grid_loc = estimate_nonbayes_grid(setup("loc"), a_grid,
                                          n_runs=PROTOCOL["n_runs"], master_seed=SEED)
        grid_tt = estimate_nonbayes_grid(setup("tt"), a_grid, b_grid,
                                         n_runs=PROTOCOL["n_runs"], master_seed=SEED)
        einf = sorted(c.einf_cost for c in grid_loc)
        alphas = np.geomspace(einf[0] * 1.001, np.quantile(einf, 0.7), 8)
        strict = 0
        for alpha in alphas:
            loc = calibrate_from_grid("loc", float(alpha), grid_loc)
            tt = calibrate_from_grid("tt", float(alpha), grid_tt)
            assert loc.feasible and tt.feasible
            assert tt.e1_cost <= loc.e1_cost + 2 * (tt.e1_stderr + loc.e1_stderr)
            strict += tt.e1_cost < loc.e1_cost
            print(f"\n  alpha={alpha:.0f}: tt e1={tt.e1_cost:.0f}±{tt.e1_stderr:.0f}"
                  f" loc e1={loc.e1_cost:.0f}±{loc.e1_stderr:.0f}")
        assert strict >= len(alphas) / 2


def test_criterion_8_delay_slope():
    params = InventoryParams(capacity=8, order_cost=1.0, holding_cost=5.0,
                             penalty=100.0, demand_rate=2.0, uniform_max=4)
    env = build_env(params)
    base = solve_policies(env, PROTOCOL["beta"])
    probe = np.array([8 - s for s in range(9)])   # full observation every step
    pinned = PolicySet(pi_pre=probe, pi_post=probe, pi_probe=probe,
                       v_pre=base.v_pre, v_post=base.v_post)
    setup = make_setup(env, pinned, "loc", ChangeSpec(kind="fixed", gamma=1),
                       horizon=2000, beta=PROTOCOL["beta"], detector_kind="sr")
    with criterion(8, "mean SR detection delay grows with log threshold at "
                      "slope 1/I within 25%"):
        rate = info_number(env.mdp_pre.kernel, env.mdp_post.kernel, probe)
        ladder = np.geomspace(1e3, 1e12, 10)
        rows = delay_profile(setup, ladder, n_runs=1500, master_seed=5)
        delays = [r["mean_delay"] for r in rows]
        slope = float(np.polyfit(np.log(ladder), delays, 1)[0])
        print(f"\n  slope={slope:.2f} vs 1/I={1 / rate:.2f}")
        assert abs(slope - 1.0 / rate) <= 0.25 / rate
        # longer ladders never censor: the horizon dwarfs every mean delay
        assert max(delays) < setup.horizon / 4


def test_criterion_9_byte_identical_outputs(tmp_path):
    cfg = tmp_path / "exp.ini"
    cfg.write_text("""
[inventory]
capacity = 5
shortage_penalty = 80.0

[change]
kind = geometric
rho = 0.05

[detector]
kind = shiryaev
rho = 0.05

[run]
beta = 0.95
horizon = 80
n_runs = 600
seed = 123

[policies]
kinds = oracle,loc,tt,random

[thresholds]
a = 40.0
b = 3.0
""")
    out = tmp_path / "out"
    with criterion(9, "reruns with the same config and seed reproduce CSVs "
                      "byte for byte regardless of worker count"):
        assert cli_main(["solve", "--config", str(cfg), "--out-dir", str(out)]) == 0
        assert cli_main(["evaluate", "--config", str(cfg), "--out-dir", str(out),
                         "--workers", "1"]) == 0
        runs1 = (out / "runs.csv").read_bytes()
        summary1 = (out / "summary.csv").read_bytes()
        assert cli_main(["evaluate", "--config", str(cfg), "--out-dir", str(out),
                         "--workers", "4"]) == 0
        assert (out / "runs.csv").read_bytes() == runs1
        assert (out / "summary.csv").read_bytes() == summary1
        assert cli_main(["evaluate", "--config", str(cfg), "--out-dir", str(out),
                         "--workers", "2"]) == 0
        assert (out / "runs.csv").read_bytes() == runs1
