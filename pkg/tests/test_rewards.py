import itertools
import math
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cotforge.errors import ContractError
from cotforge.rewards import (
    RewardConfig,
    accuracy_reward,
    clip,
    format_reward,
    group_advantages,
    pass_at_k,
    reward_cd,
    reward_rv,
    total_reward,
)


class TestClip:
    def test_interior_identity(self):
        assert clip(0.5, 0.3, 0.7) == 0.5

    def test_upper_saturation(self):
        assert clip(0.9, 0.3, 0.7) == 0.7

    def test_lower_saturation(self):
        assert clip(0.1, 0.3, 0.7) == 0.3

    def test_inverted_bounds_rejected(self):
        with pytest.raises(ContractError):
            clip(0.5, 0.7, 0.3)


class TestIntervalPenalties:
    def test_in_interval_zero(self):
        assert reward_rv(0.5, 0.3, 0.7) == 0.0

    def test_above_interval(self):
        assert reward_rv(0.9, 0.3, 0.7) == pytest.approx(-0.2, abs=1e-12)

    def test_below_interval(self):
        assert reward_rv(0.1, 0.3, 0.7) == pytest.approx(-0.2, abs=1e-12)

    def test_cd_full_interval(self):
        assert reward_cd(0.0, 0.0, 1.0) == 0.0

    def test_cd_above(self):
        assert reward_cd(1.0, 0.2, 0.6) == pytest.approx(-0.4, abs=1e-12)

    def test_cd_boundary_is_inside(self):
        assert reward_cd(0.2, 0.2, 0.6) == 0.0

    def test_score_out_of_unit_interval_rejected(self):
        with pytest.raises(ContractError):
            reward_rv(1.5, 0.0, 1.0)

    @given(
        st.floats(0, 1), st.floats(0, 1), st.floats(0, 1)
    )
    @settings(max_examples=300, deadline=None)
    def test_penalty_properties(self, f, a, b):
        lo, hi = min(a, b), max(a, b)
        r = reward_rv(f, lo, hi)
        if lo <= f <= hi:
            assert r == 0.0
        elif f > hi:
            assert r == pytest.approx(-(f - hi), abs=1e-12)
        else:
            assert r == pytest.approx(-(lo - f), abs=1e-12)

    def test_symmetry_about_interval(self):
        lo, hi = 0.3, 0.6
        for d in (0.0, 0.05, 0.1, 0.25, 0.3):
            assert reward_rv(max(lo - d, 0.0), lo, hi) == pytest.approx(
                reward_rv(min(hi + d, 1.0), lo, hi), abs=1e-12
            )


class TestTotalReward:
    def test_all_zero(self):
        cfg = RewardConfig()
        b = total_reward(0.0, 0.0, 0.5, 0.5, cfg)
        assert b.total == 0.0

    def test_substitution_value(self):
        # fmt 1 + acc 1 + rv in-window (0) + cd 0.1 above its upper bound.
        cfg = RewardConfig(lo_rv=0.3, hi_rv=0.7, lo_cd=0.2, hi_cd=0.6,
                           lambda_rv=1.0, lambda_cd=1.0)
        b = total_reward(1.0, 1.0, 0.5, 0.7, cfg)
        assert b.total == pytest.approx(1.9, abs=1e-12)

    def test_vanilla_grpo_reduction(self):
        rng = random.Random(7)
        cfg = RewardConfig(lo_rv=0.3, hi_rv=0.7, lo_cd=0.2, hi_cd=0.6,
                           lambda_rv=0.0, lambda_cd=0.0)
        for _ in range(200):
            r_fmt, r_acc = rng.random(), rng.random()
            b = total_reward(r_fmt, r_acc, rng.random(), rng.random(), cfg)
            assert b.total == r_fmt + r_acc  # bit-for-bit

    def test_breakdown_recomputes(self):
        rng = random.Random(11)
        for _ in range(200):
            a, b_ = sorted((rng.random(), rng.random()))
            c, d = sorted((rng.random(), rng.random()))
            cfg = RewardConfig(lo_rv=a, hi_rv=b_, lo_cd=c, hi_cd=d,
                               lambda_rv=rng.random() * 2, lambda_cd=rng.random() * 2)
            bd = total_reward(rng.random(), rng.random(), rng.random(), rng.random(), cfg)
            recomputed = bd.r_fmt + bd.r_acc + bd.lambda_rv * bd.r_rv + bd.lambda_cd * bd.r_cd
            assert bd.total == pytest.approx(recomputed, abs=1e-12)
            assert -1.0 <= bd.r_rv <= 0.0
            assert -1.0 <= bd.r_cd <= 0.0


class TestGroupAdvantages:
    def test_zero_variance_convention(self):
        assert group_advantages([1.0, 1.0, 1.0]) == [0.0, 0.0, 0.0]

    def test_two_element_group(self):
        assert group_advantages([0.0, 2.0]) == [-1.0, 1.0]

    def test_normalization_identity(self):
        rng = random.Random(3)
        for _ in range(50):
            n = rng.randrange(2, 20)
            rewards = [rng.uniform(-5, 5) for _ in range(n)]
            if len(set(rewards)) < 2:
                continue
            advs = group_advantages(rewards)
            mean = sum(advs) / n
            var = sum((a - mean) ** 2 for a in advs) / n
            assert mean == pytest.approx(0.0, abs=1e-9)
            assert math.sqrt(var) == pytest.approx(1.0, abs=1e-9)

    def test_single_element_rejected(self):
        with pytest.raises(ContractError):
            group_advantages([1.0])


def brute_force_pass_at_k(n: int, c: int, k: int) -> Fraction:
    """Oracle: enumerate all C(n, k) subsets of sample indices and count
    those containing at least one of the first c (correct) indices."""
    total = 0
    hits = 0
    for subset in itertools.combinations(range(n), k):
        total += 1
        if any(i < c for i in subset):
            hits += 1
    return Fraction(hits, total)


class TestPassAtK:
    def test_no_correct_samples(self):
        assert pass_at_k(10, 0, 3) == 0.0

    def test_all_correct(self):
        assert pass_at_k(10, 10, 1) == 1.0

    def test_small_case_against_enumeration(self):
        # n=4, c=2, k=2: of 6 subsets exactly one avoids both correct samples.
        assert pass_at_k(4, 2, 2) == pytest.approx(5 / 6, abs=1e-12)
        assert brute_force_pass_at_k(4, 2, 2) == Fraction(5, 6)

    @pytest.mark.parametrize("n", [1, 2, 3, 5, 8])
    def test_oracle_sweep_small(self, n):
        for c in range(n + 1):
            for k in range(1, n + 1):
                assert pass_at_k(n, c, k) == pytest.approx(
                    float(brute_force_pass_at_k(n, c, k)), abs=1e-12
                )

    def test_monotone_in_k_and_c(self):
        for n in (6, 9):
            for c in range(n + 1):
                vals = [pass_at_k(n, c, k) for k in range(1, n + 1)]
                assert vals == sorted(vals)
            for k in range(1, n + 1):
                vals = [pass_at_k(n, c, k) for c in range(n + 1)]
                assert vals == sorted(vals)

    def test_contract_violations(self):
        with pytest.raises(ContractError):
            pass_at_k(4, 5, 2)
        with pytest.raises(ContractError):
            pass_at_k(4, 2, 0)
        with pytest.raises(ContractError):
            pass_at_k(4, 2, 5)


class TestDefaultRewardHelpers:
    def test_format_reward_boxed(self):
        assert format_reward("thus \\boxed{42}") == 1.0
        assert format_reward("thus 42") == 0.0

    def test_accuracy_reward_normalizes(self):
        assert accuracy_reward("  The Answer ", "the answer") == 1.0
        assert accuracy_reward("41", "42") == 0.0
