"""Delay matrix loading, generation, and inframetric analytics."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dnnsim.delay_space import (
    DelayDataError,
    DelayMatrix,
    alpha_of,
    ball,
    ball_volume,
    delta_ratio,
    exact_nearest,
    gen_synthetic,
    growth_at,
    growth_stats,
    instance_rho,
    load_matrix,
    required_samples,
    rho_of_triple,
    rho_stats,
    ring_occupancy,
    save_matrix,
    search_hop_bound,
    verify_sandwich,
)


def matrix_from(rows):
    return DelayMatrix(np.array(rows, dtype=float))


# ---------------------------------------------------------------------------
# loading / saving
# ---------------------------------------------------------------------------

class TestLoadSave:
    def test_symmetric_flag_set(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text("0 1 2\n1 0 3\n2 3 0\n")
        m = load_matrix(p)
        assert m.n == 3 and m.symmetric

    def test_asymmetric_flag(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text("0 5\n9 0\n")
        m = load_matrix(p)
        assert not m.symmetric

    def test_short_row_rejected(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text("0 1 2\n1 0\n2 3 0\n")
        with pytest.raises(DelayDataError):
            load_matrix(p)

    def test_negative_rejected(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text("0 -3\n5 0\n")
        with pytest.raises(DelayDataError):
            load_matrix(p)

    def test_missing_entries_preserved(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text("0 -1 2\n1 0 3\n2 -1 0\n")
        m = load_matrix(p)
        assert m.delay(0, 1) is None
        assert m.delay(2, 1) is None
        assert m.delay(0, 2) == 2.0

    def test_round_trip_bit_identical(self, tmp_path):
        m = gen_synthetic(20, "euclidean", noise=0.3, seed=5)
        values = m.values.copy()
        values[3, 7] = np.nan
        m = DelayMatrix(values)
        for fmt in ("king-text", "csv"):
            p = tmp_path / f"rt.{fmt}"
            save_matrix(m, p, fmt=fmt)
            back = load_matrix(p, fmt)
            both = ~np.isnan(m.values)
            assert np.array_equal(np.isnan(back.values), np.isnan(m.values))
            assert np.array_equal(back.values[both], m.values[both])

    def test_csv_header_checked(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("0,1\n1,0\n")
        with pytest.raises(DelayDataError):
            load_matrix(p, "csv")


class TestGenSynthetic:
    def test_two_point_euclidean(self):
        m = gen_synthetic(2, "euclidean", noise=0.0, asym_factor=0.0, seed=7)
        assert m.delay(0, 1) == m.delay(1, 0) and m.delay(0, 1) > 0

    def test_metric_space_rho_below_two(self):
        m = gen_synthetic(100, "euclidean", noise=0.0, seed=1)
        stats = rho_stats(m, 20_000, seed=2)
        assert stats.quantiles[100.0] <= 2.0 + 1e-9

    def test_deterministic_in_seed(self):
        a = gen_synthetic(40, "clustered", noise=0.1, seed=9)
        b = gen_synthetic(40, "clustered", noise=0.1, seed=9)
        assert np.array_equal(a.values, b.values)

    def test_asymmetric_not_symmetric(self):
        m = gen_synthetic(30, "asymmetric", asym_factor=0.5, seed=3)
        assert not m.symmetric

    def test_too_small_rejected(self):
        with pytest.raises(DelayDataError):
            gen_synthetic(1, "euclidean")


# ---------------------------------------------------------------------------
# rho
# ---------------------------------------------------------------------------

class TestRho:
    def test_tiv_triple_value(self):
        # symmetric triple with edges 3, 1, 1.8: worst ratio is 3 / 1.8
        m = matrix_from([[0, 3, 1], [3, 0, 1.8], [1, 1.8, 0]])
        assert rho_of_triple(m, 0, 1, 2) == pytest.approx(3 / 1.8)

    def test_equilateral(self):
        m = matrix_from([[0, 1, 1], [1, 0, 1], [1, 1, 0]])
        assert rho_of_triple(m, 0, 1, 2) == pytest.approx(1.0)

    def test_asymmetric_six_ratios(self):
        # d(A,B)=4, d(B,A)=1, the rest 2: the directed pair (A,B) dominates
        m = matrix_from([[0, 4, 2], [1, 0, 2], [2, 2, 0]])
        assert rho_of_triple(m, 0, 1, 2) == pytest.approx(2.0)

    def test_missing_entry_skips(self):
        m = matrix_from([[0, np.nan, 2], [1, 0, 2], [2, 2, 0]])
        assert rho_of_triple(m, 0, 1, 2) is None

    def test_order_invariant(self):
        m = gen_synthetic(10, "euclidean", seed=4)
        assert rho_of_triple(m, 1, 5, 8) == pytest.approx(rho_of_triple(m, 8, 1, 5))

    def test_stats_match_exhaustive_enumeration(self):
        # 5-node handcrafted matrix: sampled quantiles must match brute force
        rng = np.random.default_rng(12)
        vals = rng.uniform(1, 50, (5, 5))
        vals = (vals + vals.T) / 2
        np.fill_diagonal(vals, 0)
        m = DelayMatrix(vals)
        from itertools import combinations

        brute = sorted(rho_of_triple(m, *t) for t in combinations(range(5), 3))
        stats = rho_stats(m, 5000, seed=0, percentiles=(0, 100))
        assert stats.quantiles[0.0] == pytest.approx(brute[0])
        assert stats.quantiles[100.0] == pytest.approx(brute[-1])

    def test_all_equal_matrix(self):
        vals = np.full((6, 6), 7.0)
        np.fill_diagonal(vals, 0)
        stats = rho_stats(DelayMatrix(vals), 500, seed=1)
        assert all(v == pytest.approx(1.0) for v in stats.quantiles.values())

    def test_quantiles_monotone(self):
        m = gen_synthetic(60, "clustered", noise=0.2, seed=8)
        stats = rho_stats(m, 5000, seed=3)
        qs = [stats.quantiles[p] for p in sorted(stats.quantiles)]
        assert qs == sorted(qs)

    def test_instance_rho_exhaustive_matches_sampling_bound(self):
        m = gen_synthetic(30, "clustered", noise=0.3, seed=6)
        exact = instance_rho(m, exhaustive_limit=64)
        sampled = instance_rho(m, exhaustive_limit=0, sample_triples=50_000, seed=1)
        assert sampled <= exact + 1e-9


# ---------------------------------------------------------------------------
# balls / growth / alpha
# ---------------------------------------------------------------------------

FOUR_NODE = [[0, 1, 2, 5], [1, 0, 3, 4], [2, 3, 0, 6], [5, 4, 6, 0]]


class TestBalls:
    def test_zero_radius_is_center_only(self):
        m = matrix_from(FOUR_NODE)
        b = ball(m, 0, 0)
        assert b.members == {0} and ball_volume(m, 0, 0) == 1

    def test_big_radius_counts_all_present(self):
        m = matrix_from(FOUR_NODE)
        assert ball_volume(m, 0, 100) == 4

    def test_documented_example(self):
        m = matrix_from(FOUR_NODE)
        assert ball_volume(m, 0, 2) == 3

    def test_missing_excluded(self):
        m = matrix_from([[0, np.nan, 1], [1, 0, 1], [1, 1, 0]])
        assert ball_volume(m, 0, 10) == 2

    def test_nested(self):
        m = gen_synthetic(50, "euclidean", seed=2)
        for p in (0, 7, 31):
            assert ball(m, p, 40).members <= ball(m, p, 120).members

    def test_growth_example(self):
        m = matrix_from(FOUR_NODE)
        assert growth_at(m, 0, 1.0, 3.0) == pytest.approx(3 / 2)

    def test_growth_saturates_at_one(self):
        m = matrix_from(FOUR_NODE)
        assert growth_at(m, 0, 50.0, 3.0) == pytest.approx(1.0)

    def test_growth_at_least_one(self):
        m = gen_synthetic(80, "clustered", seed=5)
        for r, med, p90 in growth_stats(m, 3.0, [5, 20, 80], seed=1):
            assert med >= 1.0 and p90 >= med

    def test_clustered_growth_declines_with_radius(self):
        m = gen_synthetic(300, "clustered", noise=0.05, seed=11)
        rows = growth_stats(m, 3.0, [4, 16, 64, 256], seed=2)
        medians = [med for _, med, _ in rows]
        assert medians[0] >= medians[-1]

    def test_alpha_of_ratio_one(self):
        m = matrix_from(FOUR_NODE)
        assert alpha_of(m, 0, 50.0, 3.0) == 0.0

    def test_alpha_direct_value(self):
        # |B(xr)| = 9, |B(r)| = 1, x = 3 -> alpha = 2
        vals = np.zeros((9, 9))
        vals[0, 1:] = np.concatenate([[1.5] * 8])
        vals[1:, 0] = vals[0, 1:]
        for i in range(1, 9):
            for j in range(1, 9):
                if i != j:
                    vals[i, j] = 3.0
        m = DelayMatrix(vals)
        assert alpha_of(m, 0, 1.0, 3.0) == pytest.approx(math.log(9, 3))

    def test_alpha_requires_x_above_one(self):
        m = matrix_from(FOUR_NODE)
        with pytest.raises(DelayDataError):
            alpha_of(m, 0, 1.0, 0.9)

    def test_alpha_within_growth_bounds(self):
        # Lemma-style check: alpha at x bounded by twice the log-growth sup
        m = gen_synthetic(120, "euclidean", noise=0.0, seed=13)
        rho = 3.0
        radii = [10, 20, 40, 80]
        gsup = 1.0
        for p in range(m.n):
            for r in radii:
                gsup = max(gsup, growth_at(m, p, r, rho))
        bound = 2 * math.log(gsup, rho) + 1e-9
        for p in range(0, m.n, 7):
            for r in radii:
                a = alpha_of(m, p, r, rho)
                assert a <= bound


class TestSandwich:
    def test_same_center_trivial(self):
        m = matrix_from(FOUR_NODE)
        chk = verify_sandwich(m, 2.0, 0, 0, 1.0)
        assert chk.ok

    def test_holds_at_instance_rho(self):
        m = gen_synthetic(40, "clustered", noise=0.4, seed=9)
        rho = instance_rho(m, exhaustive_limit=64)
        rng = np.random.default_rng(3)
        checked = 0
        for _ in range(300):
            p, q = rng.integers(0, m.n, 2)
            if p == q:
                continue
            d = m.delay(p, q)
            r = d * (1 + rng.random())
            chk = verify_sandwich(m, rho, int(p), int(q), r)
            assert chk.ok, (p, q, r, chk)
            checked += 1
        assert checked > 200

    def test_understated_rho_violates(self):
        # TIV-rich 3-node matrix with edges 3, 1, 1.8 breaks rho = 1.01
        m = matrix_from([[0, 3, 1], [3, 0, 1.8], [1, 1.8, 0]])
        found = False
        for r in (1.0, 1.5, 1.8, 2.0, 3.0):
            for p in range(3):
                for q in range(3):
                    if p == q or m.values[p, q] > r:
                        continue
                    if not verify_sandwich(m, 1.01, p, q, r).ok:
                        found = True
        assert found

    def test_precondition_enforced(self):
        m = matrix_from(FOUR_NODE)
        with pytest.raises(DelayDataError):
            verify_sandwich(m, 3.0, 0, 3, 1.0)  # d(0,3) = 5 > r


# ---------------------------------------------------------------------------
# sample counts, oracle, misc
# ---------------------------------------------------------------------------

class TestRequiredSamples:
    def test_spot_values(self):
        assert required_samples(3, 1, 1) == 27
        assert required_samples(3, 1, 0) == 3
        assert required_samples(3, 0.4, 1) == 68

    def test_rejects_bad_beta(self):
        with pytest.raises(DelayDataError):
            required_samples(3, 0, 1)
        with pytest.raises(DelayDataError):
            required_samples(3, 1.2, 1)

    def test_growth_interval_at_beta_one(self):
        # with alpha inside [log_rho g, 2 log_rho g] the count sits in [3g^2, 3g^4]
        rho, g = 3.0, 2.5
        lo, hi = math.log(g, rho), 2 * math.log(g, rho)
        for alpha in (lo, (lo + hi) / 2, hi):
            n = required_samples(rho, 1.0, alpha)
            assert 3 * g**2 - 1 <= n <= math.ceil(3 * g**4) + 1

    @given(
        rho=st.floats(min_value=1.1, max_value=6),
        beta1=st.floats(min_value=0.05, max_value=1),
        beta2=st.floats(min_value=0.05, max_value=1),
        alpha1=st.floats(min_value=0, max_value=2.5),
        alpha2=st.floats(min_value=0, max_value=2.5),
    )
    @settings(max_examples=200)
    def test_monotonicity(self, rho, beta1, beta2, alpha1, alpha2):
        lo_b, hi_b = sorted((beta1, beta2))
        lo_a, hi_a = sorted((alpha1, alpha2))
        # nonincreasing in beta, nondecreasing in alpha
        assert required_samples(rho, lo_b, lo_a) >= required_samples(rho, hi_b, lo_a)
        assert required_samples(rho, lo_b, hi_a) >= required_samples(rho, lo_b, lo_a)


class TestExactNearest:
    def test_single_server(self):
        m = matrix_from(FOUR_NODE)
        assert exact_nearest(m, [2], 0) == [(2, 2.0)]

    def test_asymmetric_forward_direction(self):
        # server-to-target one-way delays decide: d(B,A)=200 vs d(C,A)=50
        m = matrix_from([[0, 200, 200], [200, 0, 100], [50, 100, 0]])
        assert exact_nearest(m, [1, 2], 0)[0][0] == 2

    def test_full_sort_matches_comparator(self):
        m = gen_synthetic(60, "clustered", noise=0.2, seed=21)
        rng = np.random.default_rng(5)
        for _ in range(1000):
            k = int(rng.integers(1, 10))
            servers = sorted(int(s) for s in rng.choice(60, size=rng.integers(2, 20), replace=False))
            target = int(rng.integers(0, 60))
            got = exact_nearest(m, servers, target, k)
            want = sorted(
                ((float(m.values[s, target]), s) for s in servers if not math.isnan(m.values[s, target]))
            )[:k]
            assert got == [(s, d) for d, s in want]

    def test_all_missing_raises(self):
        m = matrix_from([[0, np.nan], [1, 0]])
        with pytest.raises(DelayDataError):
            exact_nearest(m, [0], 1)

    def test_directions(self):
        m = matrix_from([[0, 10, 3], [2, 0, 9], [8, 1, 0]])
        assert exact_nearest(m, [1, 2], 0, direction="forward")[0][0] == 1
        assert exact_nearest(m, [1, 2], 0, direction="reverse")[0][0] == 2
        assert exact_nearest(m, [1, 2], 0, direction="rtt-average")[0] == (2, 5.5)


class TestDeltaRatio:
    def test_all_equal(self):
        vals = np.full((4, 4), 3.0)
        np.fill_diagonal(vals, 0)
        assert delta_ratio(DelayMatrix(vals)) == pytest.approx(1.0)

    def test_direct_scan(self):
        m = matrix_from([[0, 1, 512], [1, 0, 2], [512, 2, 0]])
        assert delta_ratio(m) == pytest.approx(512.0)

    def test_hop_bound(self):
        assert search_hop_bound(512, 0.5) == pytest.approx(9.0)
        assert math.isinf(search_hop_bound(512, 1.0))


class TestRingOccupancy:
    def test_single_band(self):
        vals = np.array([[0, 3, 3.5], [3, 0, 2.5], [3.5, 2.5, 0]])
        per_node, agg = ring_occupancy(DelayMatrix(vals))
        # all delays in (2, 4] -> everything in ring 2
        assert agg[1] == (2, pytest.approx(1.0))

    def test_manual_binning(self):
        vals = np.zeros((5, 5))
        vals[0, 1:] = [1.5, 3, 3, 7]
        vals[1:, 0] = vals[0, 1:]
        for i in range(1, 5):
            for j in range(1, 5):
                if i != j:
                    vals[i, j] = 3.0
        per_node, _ = ring_occupancy(DelayMatrix(vals))
        assert per_node[0][0] == pytest.approx(0.25)  # ring 1: 1.5 ms
        assert per_node[0][1] == pytest.approx(0.5)   # ring 2: two samples of 3 ms
        assert per_node[0][2] == pytest.approx(0.25)  # ring 3: 7 ms

    def test_fractions_sum_to_one(self):
        m = gen_synthetic(40, "clustered", seed=17)
        per_node, _ = ring_occupancy(m)
        sums = per_node.sum(axis=1)
        assert np.allclose(sums, 1.0, atol=1e-9)

    def test_clustered_aggregate_mid_heavy(self):
        m = gen_synthetic(200, "clustered", noise=0.05, seed=11)
        _, agg = ring_occupancy(m)
        fractions = [f for _, f in agg]
        peak = max(range(len(fractions)), key=lambda i: fractions[i])
        assert 2 <= peak <= 12  # bulk sits in middle rings, not at either edge
