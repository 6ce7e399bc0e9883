import math

import numpy as np
import pytest

from mcmimo.closedform import downlink_lower_bound, downlink_profile, uplink_approximation, uplink_profile
from mcmimo.mcrate import (
    IllConditionedChannelError,
    PowerAllocation,
    RateEstimate,
    downlink_rate_mc,
    trial_rng,
    uplink_rate_mc,
    zf_precoder,
    zf_receiver,
)
from mcmimo.topology import NetworkConfig, build_topology


def unit_gain_cfg(n, m, cells=1, seed=3):
    # pathLossExponent 0 and no shadowing make every link gain exactly 1
    return NetworkConfig(
        users_per_cell=n, bs_antennas=m, cell_count=cells,
        path_loss_exponent=0.0, shadow_std_db=0.0, seed=seed,
    )


class TestPowerAllocation:
    def test_rejects_negative_power(self):
        with pytest.raises(ValueError):
            PowerAllocation(np.array([1.0, -0.1]), "uplink")

    def test_rejects_unknown_direction(self):
        with pytest.raises(ValueError):
            PowerAllocation(np.array([1.0]), "sideways")

    def test_budget_check(self):
        alloc = PowerAllocation(np.array([3.0, 4.0]), "uplink")
        alloc.check_budget(7.0)
        with pytest.raises(ValueError, match="budget"):
            alloc.check_budget(6.9)


class TestZfReceiver:
    def test_scalar_channel(self):
        A = zf_receiver(np.array([[2.0 + 0j]]))
        assert A[0, 0] == pytest.approx(0.5)

    def test_identity_residual(self):
        rng = np.random.default_rng(0)
        G = (rng.standard_normal((8, 3)) + 1j * rng.standard_normal((8, 3))) / np.sqrt(2)
        A = zf_receiver(G)
        assert np.max(np.abs(A.conj().T @ G - np.eye(3))) < 1e-10

    def test_duplicated_column_raises(self):
        rng = np.random.default_rng(1)
        g = rng.standard_normal((6, 1)) + 1j * rng.standard_normal((6, 1))
        with pytest.raises(IllConditionedChannelError):
            zf_receiver(np.hstack([g, g]))

    def test_wide_matrix_rejected(self):
        with pytest.raises(ValueError):
            zf_receiver(np.ones((2, 3), dtype=complex))


class TestZfPrecoder:
    def test_alpha_symmetric_betas(self):
        rng = np.random.default_rng(2)
        G = (rng.standard_normal((20, 5)) + 1j * rng.standard_normal((20, 5))) / np.sqrt(2)
        _, alpha = zf_precoder(G, np.ones(5))
        assert alpha == pytest.approx(math.sqrt(3.0), rel=1e-12)

    def test_alpha_minimal_system(self):
        rng = np.random.default_rng(3)
        G = (rng.standard_normal((2, 1)) + 1j * rng.standard_normal((2, 1))) / np.sqrt(2)
        _, alpha = zf_precoder(G, np.ones(1))
        assert alpha == pytest.approx(1.0)

    def test_precoding_identity(self):
        rng = np.random.default_rng(4)
        beta = np.array([0.5, 2.0, 1.0])
        G = (rng.standard_normal((9, 3)) + 1j * rng.standard_normal((9, 3))) / np.sqrt(2)
        B, alpha = zf_precoder(G, beta)
        assert np.max(np.abs(G.T @ B - alpha * np.eye(3))) < 1e-9 * alpha

    def test_mean_trace_is_unit_power(self):
        # empirical mean of tr(B B^H) over 1e4 draws -> 1 +- 0.02
        rng = np.random.default_rng(5)
        beta = np.array([1.3, 0.4])
        acc = 0.0
        for _ in range(10_000):
            G = (rng.standard_normal((8, 2)) + 1j * rng.standard_normal((8, 2))) / np.sqrt(2)
            G = G * np.sqrt(beta)[None, :]
            B, _ = zf_precoder(G, beta)
            acc += float(np.sum(np.abs(B) ** 2))
        assert acc / 10_000 == pytest.approx(1.0, abs=0.02)

    def test_square_matrix_rejected(self):
        with pytest.raises(ValueError):
            zf_precoder(np.eye(3, dtype=complex), np.ones(3))


def test_inverse_gram_diagonal_statistic():
    # 1 / [(H^H H)^{-1}]_nn has mean M - N + 1
    rng = np.random.default_rng(6)
    m, n = 8, 2
    acc = 0.0
    for _ in range(10_000):
        H = (rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))) / np.sqrt(2)
        inv = np.linalg.inv(H.conj().T @ H)
        acc += 1.0 / inv[0, 0].real
    assert acc / 10_000 == pytest.approx(m - n + 1, rel=0.02)


class TestUplinkRateMC:
    def test_interference_free_oracle(self):
        # exact rate for M=2, N=1, p = beta = 1 is 1/ln 2 (integral of
        # log2(1+z) against the z e^{-z} density)
        top = build_topology(unit_gain_cfg(1, 2))
        est = uplink_rate_mc(top, [PowerAllocation(np.ones(1), "uplink")], 0,
                             trials=30_000, seed=9, confidence=0.99)
        assert abs(est.per_user_rate[0] - 1.0 / math.log(2.0)) <= est.ci_half_width[0]
        assert est.kind == "monteCarlo"
        assert est.trials == 30_000

    def test_zero_power_gives_zero_rate(self):
        cfg = NetworkConfig(users_per_cell=2, bs_antennas=6, cell_count=7, seed=1)
        top = build_topology(cfg)
        allocs = [PowerAllocation(np.zeros(2), "uplink") for _ in range(7)]
        est = uplink_rate_mc(top, allocs, 0, trials=50, seed=0)
        assert np.all(est.per_user_rate == 0.0)

    def test_deterministic_in_seed(self):
        cfg = NetworkConfig(users_per_cell=2, bs_antennas=5, cell_count=7, seed=2)
        top = build_topology(cfg)
        allocs = [PowerAllocation(np.full(2, 3.0), "uplink") for _ in range(7)]
        a = uplink_rate_mc(top, allocs, 0, trials=200, seed=5)
        b = uplink_rate_mc(top, allocs, 0, trials=200, seed=5)
        assert np.array_equal(a.per_user_rate, b.per_user_rate)

    def test_monotone_in_own_power_matched_randomness(self):
        # common random numbers: raising one user's power cannot lower that
        # user's estimated rate
        cfg = NetworkConfig(users_per_cell=3, bs_antennas=8, cell_count=7, seed=3)
        top = build_topology(cfg)
        base = [PowerAllocation(np.full(3, 2.0), "uplink") for _ in range(7)]
        rates = []
        for p0 in (0.5, 1.0, 2.0, 4.0):
            allocs = list(base)
            allocs[0] = PowerAllocation(np.array([p0, 2.0, 2.0]), "uplink")
            rates.append(uplink_rate_mc(top, allocs, 0, trials=150, seed=11).per_user_rate[0])
        assert all(b >= a for a, b in zip(rates, rates[1:]))

    def test_missing_neighbor_allocation_rejected(self):
        cfg = NetworkConfig(users_per_cell=2, bs_antennas=5, cell_count=7, seed=2)
        top = build_topology(cfg)
        allocs = [None] * 7
        allocs[0] = PowerAllocation(np.ones(2), "uplink")
        with pytest.raises(ValueError, match="cell"):
            uplink_rate_mc(top, allocs, 0, trials=10, seed=0)

    def test_approximation_tracks_mc(self):
        # convergence of the mean-ratio approximation as M grows: the per-user
        # gap shrinks and is below 0.5% at M=1024
        cfg = NetworkConfig(users_per_cell=4, bs_antennas=16, cell_count=7, seed=12)
        top = build_topology(cfg)
        allocs = [PowerAllocation(np.full(4, 25.0), "uplink") for _ in range(7)]
        gaps = []
        for m in (16, 64, 256, 1024):
            t = top.with_antennas(m)
            mc = uplink_rate_mc(t, allocs, 0, trials=4000, seed=21)
            prof = uplink_profile(t, allocs, 0)
            ap = uplink_approximation(prof, m, 4, allocs[0].powers)
            gaps.append(float(np.max(np.abs(mc.per_user_rate - ap) / mc.per_user_rate)))
        assert all(b <= a * 1.05 for a, b in zip(gaps, gaps[1:]))  # small MC-noise slack
        assert gaps[-1] < 0.005


class TestDownlinkRateMC:
    def test_interference_free_is_deterministic(self):
        top = build_topology(unit_gain_cfg(1, 2))
        est = downlink_rate_mc(top, [PowerAllocation(np.ones(1), "downlink")], 0,
                               trials=25, seed=4)
        assert est.per_user_rate[0] == pytest.approx(1.0, rel=1e-12)
        assert np.all(est.ci_half_width == 0.0)

    def test_zero_power_gives_zero_rate(self):
        cfg = NetworkConfig(users_per_cell=2, bs_antennas=6, cell_count=7, seed=5)
        top = build_topology(cfg)
        allocs = [PowerAllocation(np.zeros(2), "downlink") for _ in range(7)]
        est = downlink_rate_mc(top, allocs, 0, trials=40, seed=0)
        assert np.all(est.per_user_rate == 0.0)

    def test_mc_stays_above_lower_bound(self):
        cfg = NetworkConfig(users_per_cell=4, bs_antennas=32, seed=6)
        top = build_topology(cfg)
        allocs = [PowerAllocation(np.full(4, 250.0), "downlink") for _ in range(19)]
        est = downlink_rate_mc(top, allocs, 0, trials=2500, seed=7)
        prof = downlink_profile(top, allocs, 0)
        bound = downlink_lower_bound(prof, 32, 4, allocs[0].powers)
        assert np.all(est.per_user_rate >= bound - est.ci_half_width)


class TestRateEstimate:
    def test_csv_serialisation(self, tmp_path):
        est = RateEstimate(np.array([1.5, 0.25]), 100, np.array([0.1, 0.02]), "monteCarlo")
        path = tmp_path / "rates.csv"
        est.write_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "user,rate,ciHalfWidth,trials"
        assert lines[1] == "0,1.5,0.1,100"
        assert len(lines) == 3

    def test_closed_form_constructor(self):
        est = RateEstimate.closed_form(np.array([2.0]))
        assert est.kind == "closedForm"
        assert est.trials == 0
        assert est.ci_half_width[0] == 0.0

    def test_rejects_negative_rate(self):
        with pytest.raises(ValueError):
            RateEstimate(np.array([-1.0]), 10, np.array([0.0]), "monteCarlo")


def test_trial_streams_are_order_independent():
    a = trial_rng(42, 7).standard_normal(5)
    _ = trial_rng(42, 3).standard_normal(100)
    b = trial_rng(42, 7).standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, trial_rng(42, 8).standard_normal(5))
