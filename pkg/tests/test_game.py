import math

import numpy as np
import pytest

from lotterydesign import (
    BenefitProfile,
    DesignPoint,
    LotteryInstance,
    best_response_oracle,
    equilibrium_sensitivities,
    foc_residual,
    payoff,
    reward_threshold,
    solve_equilibrium,
)
from lotterydesign.errors import (
    DomainError,
    InfeasibleRegimeError,
    InvariantViolationError,
    SingularPoolError,
    UnsupportedRegimeError,
)

from conftest import random_profile


def _design(reward, c):
    return DesignPoint(reward, np.asarray(c, dtype=float))


def sample_design(rng, profile, allow_perturbation=True):
    """Design points covering the zero-perturbation and all-active regimes."""
    n = profile.n_players
    g_star = profile.socially_optimal_good()
    if not allow_perturbation or rng.random() < 0.5:
        c = np.zeros(n)
        reward = float(rng.uniform(0.05, 100.0))
    else:
        c = rng.uniform(0.0, 1.5 * g_star / n, n)
        if rng.random() < 0.3:  # push the total above the optimum sometimes
            c *= 1.5
        reward = reward_threshold(profile, c) + float(rng.uniform(0.1, 20.0))
    return _design(reward, c)


def cancellation_escape_exists(instance, design, eq):
    """True when some player profits by unilaterally canceling the lottery.

    With perturbations, a player whose equilibrium payoff is negative and
    whose opponents do not cover the reward on their own can drop to zero,
    void the lottery, and collect exactly 0. The first-order-condition
    profile is then not a Nash equilibrium of the literal payoff (the model's
    cancellation branch admits no pure equilibrium at such design points).
    """
    total = float(eq.s_star.sum())
    for i in range(instance.n_players):
        if total - eq.s_star[i] < design.reward - 1e-12:
            if payoff(instance, design, eq.s_star, i) < -1e-6:
                return True
    return False


def sample_sound_pair(rng, profile, instance, max_tries=60):
    """(design, equilibrium) pairs on which the Nash property is well posed.

    Besides keeping the reward above the perturbation total (otherwise a
    unilateral cut can push total investment below sum(c), where the odds term
    blows up), rejects points admitting the cancellation escape described in
    `cancellation_escape_exists`. Zero-perturbation points are never rejected:
    there every payoff is nonnegative and the classic equilibrium is genuine.
    """
    n = profile.n_players
    g_star = profile.socially_optimal_good()
    for _ in range(max_tries):
        if rng.random() < 0.5:
            c = np.zeros(n)
            reward = float(rng.uniform(0.05, 100.0))
        else:
            c = rng.uniform(0.0, 1.2 * g_star / n, n)
            floor = max(reward_threshold(profile, c), float(c.sum()))
            reward = floor + float(rng.uniform(0.1, 20.0))
        d = _design(reward, c)
        eq = solve_equilibrium(instance, d)
        if not cancellation_escape_exists(instance, d, eq):
            return d, eq
    raise AssertionError("could not sample a well-posed design point")


class TestPayoff:
    def test_direct_substitution(self, i2_instance):
        value = payoff(i2_instance, _design(1.0, [0, 0]), [0.75, 0.75], 0)
        expected = 0.75 / 1.5 + math.log(1.5) - 0.75
        assert value == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.155465, abs=1e-6)

    def test_canceled_lottery_pays_zero(self, i2_instance):
        assert payoff(i2_instance, _design(1.0, [0, 0]), [0.2, 0.3], 0) == 0.0

    def test_perturbed_point(self, i2_instance):
        # Share 0.5/1, good G = 2 - 1 = 1, benefit ln(G+1): matches the
        # closed-form equilibrium payoff h_i(G*) - c_i at this design point.
        value = payoff(i2_instance, _design(1.0, [0.5, 0.5]), [1.0, 1.0], 0)
        assert value == pytest.approx(0.5 / 1.0 + math.log(2.0) - 1.0, abs=1e-12)
        assert value == pytest.approx(math.log(2.0) - 0.5, abs=1e-12)

    def test_singular_pool_raises(self, i2_instance):
        with pytest.raises(SingularPoolError):
            payoff(i2_instance, _design(1.0, [1.0, 1.0]), [1.0, 1.0], 0)

    def test_negative_investment_rejected(self, i2_instance):
        with pytest.raises(DomainError):
            payoff(i2_instance, _design(1.0, [0, 0]), [-0.1, 0.5], 0)

    def test_zero_perturbation_reduces_to_classic(self, i2_instance):
        rng = np.random.default_rng(11)
        d = _design(1.0, [0, 0])
        for _ in range(25):
            s = rng.uniform(0.0, 3.0, 2)
            total = s.sum()
            if total >= 1.0:
                classic = s[0] / total * 1.0 + math.log1p(total - 1.0) - s[0]
            else:
                classic = 0.0
            assert payoff(i2_instance, d, s, 0) == classic


class TestFocResidual:
    def test_equilibrium_residual_vanishes(self, i2_instance):
        assert foc_residual(i2_instance, _design(1.0, [0, 0]), [0.75, 0.75], 0) == (
            pytest.approx(0.0, abs=1e-12))

    def test_perturbed_equilibrium_residual(self, i2_instance):
        assert foc_residual(i2_instance, _design(1.0, [0.5, 0.5]), [1.0, 1.0], 0) == (
            pytest.approx(0.0, abs=1e-12))

    def test_overinvestment_is_negative(self, i2_instance):
        value = foc_residual(i2_instance, _design(1.0, [0, 0]), [1.0, 1.0], 0)
        assert value == pytest.approx(0.25 + 0.5 - 1.0, abs=1e-12)

    def test_nonpositive_pool_raises(self, i2_instance):
        with pytest.raises(SingularPoolError):
            foc_residual(i2_instance, _design(1.0, [1.5, 1.5]), [1.0, 1.0], 0)


class TestSolveEquilibrium:
    def test_symmetric_zero_perturbation(self, i2_instance):
        eq = solve_equilibrium(i2_instance, _design(1.0, [0, 0]))
        assert eq.s_star == pytest.approx([0.75, 0.75], abs=1e-9)
        assert eq.G == pytest.approx(0.5, abs=1e-10)
        assert eq.active_set == (0, 1)
        assert eq.max_foc_violation <= 1e-8

    def test_budget_at_optimum_pins_good(self, i2_instance):
        eq = solve_equilibrium(i2_instance, _design(1.0, [0.5, 0.5]))
        assert eq.s_star == pytest.approx([1.0, 1.0], abs=1e-9)
        assert eq.G == pytest.approx(1.0, abs=1e-9)

    def test_asymmetric_budget(self, i2_instance):
        eq = solve_equilibrium(i2_instance, _design(1.0, [1.0, 0.0]))
        assert eq.s_star == pytest.approx([1.5, 0.5], abs=1e-9)
        assert eq.G == pytest.approx(1.0, abs=1e-9)

    def test_drops_weak_player(self):
        inst = LotteryInstance(BenefitProfile.scaled_log([3.0, 0.05]))
        eq = solve_equilibrium(inst, _design(1.0, [0, 0]))
        assert eq.active_set == (0,)
        assert eq.s_star[1] == 0.0
        assert eq.G == pytest.approx(2.0, abs=1e-9)  # 3/(G+1) = 1
        # The inactive player's marginal payoff must not be positive.
        assert foc_residual(inst, _design(1.0, [0, 0]), eq.s_star, 1) <= 1e-8

    def test_single_player(self):
        inst = LotteryInstance(BenefitProfile.scaled_log([5.0]))
        eq = solve_equilibrium(inst, _design(1.0, [0.0]))
        assert eq.G == pytest.approx(4.0, abs=1e-9)
        assert eq.s_star[0] == pytest.approx(5.0, abs=1e-9)

    def test_single_player_infeasible_regime(self):
        inst = LotteryInstance(BenefitProfile.scaled_log([5.0]))
        with pytest.raises(InfeasibleRegimeError):
            solve_equilibrium(inst, _design(1.0, [6.0]))

    def test_wealth_cap_warning(self, i2_profile):
        inst = LotteryInstance(i2_profile, wealth_caps=np.array([0.5, 10.0]))
        with pytest.warns(UserWarning, match="wealth cap"):
            solve_equilibrium(inst, _design(1.0, [0, 0]))

    def test_uniqueness_across_active_set_seeds(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            profile = random_profile(rng)
            inst = LotteryInstance(profile)
            d = sample_design(rng, profile)
            reference = solve_equilibrium(inst, d)
            n = profile.n_players
            for _ in range(5):
                size = int(rng.integers(1, n + 1))
                seed_set = rng.choice(n, size=size, replace=False)
                eq = solve_equilibrium(inst, d, active_init=seed_set)
                assert np.max(np.abs(eq.s_star - reference.s_star)) <= 1e-7

    def test_randomized_foc_and_bracket(self):
        rng = np.random.default_rng(13)
        for _ in range(40):
            profile = random_profile(rng)
            inst = LotteryInstance(profile)
            d = sample_design(rng, profile)
            eq = solve_equilibrium(inst, d)
            assert eq.max_foc_violation <= 1e-8
            g_star = profile.socially_optimal_good()
            lo = min(d.perturbation_total, g_star)
            hi = max(d.perturbation_total, g_star)
            assert lo - 1e-9 <= eq.G <= hi + 1e-9
            if abs(eq.G - g_star) <= 1e-6 and profile.n_players > 1:
                assert d.perturbation_total <= eq.G + d.reward + 1e-9


class TestBestResponseOracle:
    def test_equilibrium_is_a_fixed_point(self, i2_instance):
        d = _design(1.0, [0, 0])
        br = best_response_oracle(i2_instance, d, [0.75], 0)
        assert br == pytest.approx(0.75, abs=1e-5)

    def test_flooded_opponent_forces_zero(self, i2_instance):
        d = _design(1.0, [0, 0])
        br = best_response_oracle(i2_instance, d, [10.0], 0)
        # Marginal payoff at zero is already negative, so the boundary wins.
        assert foc_residual(i2_instance, d, np.array([0.0, 10.0]), 0) < 0.0
        assert br == pytest.approx(0.0, abs=1e-6)

    def test_single_player_matches_foc(self):
        inst = LotteryInstance(BenefitProfile.scaled_log([5.0]))
        br = best_response_oracle(inst, _design(1.0, [0.0]), [], 0)
        assert br == pytest.approx(5.0, abs=1e-5)  # R + G* with h'(G*) = 1

    def test_no_profitable_deviation_randomized(self):
        rng = np.random.default_rng(14)
        for _ in range(15):
            profile = random_profile(rng, n=int(rng.integers(2, 5)))
            inst = LotteryInstance(profile)
            d, eq = sample_sound_pair(rng, profile, inst)
            for i in range(profile.n_players):
                br = best_response_oracle(inst, d, np.delete(eq.s_star, i), i)
                trial = eq.s_star.copy()
                trial[i] = br
                gain = payoff(inst, d, trial, i) - payoff(inst, d, eq.s_star, i)
                assert gain <= 1e-5

    def test_cancellation_escape_is_detected(self):
        # Documented model gap: at some perturbed design points a player with
        # negative payoff can void the lottery by dropping out, so the
        # first-order-condition profile is not a literal Nash equilibrium.
        # The oracle must find that escape rather than smooth it away.
        profile = BenefitProfile.scaled_log(
            [2.527198457618032, 2.21153181508266, 0.9638223231898635,
             0.7285512391693785])
        inst = LotteryInstance(profile)
        d = _design(30.57563285110171,
                    [0.00797228, 0.24058479, 1.58776761, 1.1356116])
        eq = solve_equilibrium(inst, d)
        assert eq.max_foc_violation <= 1e-8
        assert cancellation_escape_exists(inst, d, eq)
        i = 2
        assert payoff(inst, d, eq.s_star, i) < 0.0
        assert eq.s_star.sum() - eq.s_star[i] < d.reward
        br = best_response_oracle(inst, d, np.delete(eq.s_star, i), i)
        trial = eq.s_star.copy()
        trial[i] = br
        assert payoff(inst, d, trial, i) == 0.0  # canceling beats playing on


class TestSensitivities:
    def test_closed_form_values(self, i2_instance):
        d = _design(1.0, [0, 0])
        eq = solve_equilibrium(i2_instance, d)
        dG_dR, dG_dc = equilibrium_sensitivities(i2_instance, d, eq)
        assert dG_dR == pytest.approx(1.0 / 6.0, abs=1e-9)
        assert dG_dc == pytest.approx([1.0 / 3.0] * 2, abs=1e-9)

    def test_zero_reward_sensitivity_at_optimal_budget(self, i2_instance):
        d = _design(1.0, [0.5, 0.5])
        eq = solve_equilibrium(i2_instance, d)
        dG_dR, dG_dc = equilibrium_sensitivities(i2_instance, d, eq)
        assert dG_dR == pytest.approx(0.0, abs=1e-9)
        assert np.all(dG_dc > 0.0)

    def test_requires_all_players_active(self):
        inst = LotteryInstance(BenefitProfile.scaled_log([3.0, 0.05]))
        d = _design(1.0, [0, 0])
        eq = solve_equilibrium(inst, d)
        with pytest.raises(UnsupportedRegimeError):
            equilibrium_sensitivities(inst, d, eq)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(15)
        for _ in range(20):
            profile = random_profile(rng, n=int(rng.integers(2, 6)))
            inst = LotteryInstance(profile)
            g_star = profile.socially_optimal_good()
            c = rng.uniform(0.0, g_star / profile.n_players, profile.n_players)
            reward = reward_threshold(profile, c) + float(rng.uniform(0.2, 10.0))
            d = _design(reward, c)
            eq = solve_equilibrium(inst, d)
            assert len(eq.active_set) == profile.n_players
            dG_dR, dG_dc = equilibrium_sensitivities(inst, d, eq)

            h = 1e-5 * max(1.0, reward)
            g_hi = solve_equilibrium(inst, _design(reward + h, c)).G
            g_lo = solve_equilibrium(inst, _design(reward - h, c)).G
            fd = (g_hi - g_lo) / (2.0 * h)
            assert abs(dG_dR - fd) <= max(1e-6, 1e-4 * abs(dG_dR))

            i = int(rng.integers(0, profile.n_players))
            h = 1e-5 * max(1.0, c[i])
            c_hi, c_lo = c.copy(), c.copy()
            c_hi[i] += h
            c_lo[i] = max(c_lo[i] - h, 0.0)
            g_hi = solve_equilibrium(inst, _design(reward, c_hi)).G
            g_lo = solve_equilibrium(inst, _design(reward, c_lo)).G
            fd = (g_hi - g_lo) / (c_hi[i] - c_lo[i])
            assert abs(dG_dc[i] - fd) <= max(1e-6, 1e-4 * abs(dG_dc[i]))


class TestMonotonicity:
    def test_reward_and_perturbation_raise_the_good(self):
        rng = np.random.default_rng(16)
        for _ in range(15):
            profile = random_profile(rng)
            n = profile.n_players
            inst = LotteryInstance(profile)
            g_star = profile.socially_optimal_good()
            c = rng.uniform(0.0, 0.8 * g_star / n, n)  # keep the total below G*
            reward = reward_threshold(profile, c) + float(rng.uniform(0.2, 10.0))
            d = _design(reward, c)
            eq = solve_equilibrium(inst, d)
            assert len(eq.active_set) == n
            bumped = solve_equilibrium(inst, _design(reward * 1.01, c))
            assert bumped.G >= eq.G - 1e-9
            if abs(d.perturbation_total - g_star) > 1e-9:
                c_up = c.copy()
                c_up[int(rng.integers(0, n))] += 0.01
                assert solve_equilibrium(inst, _design(reward, c_up)).G > eq.G

    def test_investment_floor_above_threshold(self):
        rng = np.random.default_rng(17)
        for _ in range(15):
            profile = random_profile(rng)
            n = profile.n_players
            inst = LotteryInstance(profile)
            g_star = profile.socially_optimal_good()
            c = rng.uniform(0.0, g_star / n, n)
            r_l = reward_threshold(profile, c)
            reward = r_l + float(rng.uniform(0.05, 5.0))
            eq = solve_equilibrium(inst, _design(reward, c))
            g_upper = max(g_star, float(c.sum()))
            base = reward / (reward + g_upper - c.sum())
            for i in range(n):
                floor = c[i] + reward * (base + profile.functions[i].slope(g_upper) - 1.0)
                assert eq.s_star[i] >= floor - 1e-9
