"""Error-model formulas against arbitrary-precision oracles, threshold logic."""

import math

import numpy as np
import pytest
from mpmath import mp, mpf

from dspas.errors import CalibrationError, ThresholdInfeasibleError
from dspas.preprocess import PreprocessConfig
from dspas.theory import (
    K_TABLE,
    NoiseModel,
    REFERENCE_NOISE_TABLE,
    SystemParams,
    calibrate_noise,
    correlation_stats,
    corruption_threshold_factor,
    fn_probability,
    fp_probability,
    interpolate_k,
    q_function,
    select_threshold_coefficient,
    simulate_false_negative_rate,
    simulate_false_positive_rate,
)

mp.dps = 60
A_EXACT = 2**63 - 1


def q_mp(x):
    return mp.erfc(mpf(x) / mp.sqrt(2)) / 2


def fp_mp(k, big_l, l):
    return 1 - mp.power(1 - q_mp(k), big_l - l + 1)


def fn_mp(k, l, a, s2):
    a, s2, l = mpf(a), mpf(s2), mpf(l)
    num = mpf(k) * a * mp.sqrt(l * a**2 / 9 + l * s2 / 3) - l * a**2 / 3
    den = a * mp.sqrt(s2 * l / 3)
    return 1 - q_mp(num / den)


def stats_mp(l, a, s2):
    a, s2, l = mpf(a), mpf(s2), mpf(l)
    return (
        a * mp.sqrt(l * a**2 / 9 + l * s2 / 3),
        a * mp.sqrt(s2 * l / 3),
        l * a**2 / 3,
    )


def test_q_function_basics():
    assert q_function(0.0) == pytest.approx(0.5, rel=1e-12)
    for x in (0.3, 1.7, 4.2):
        assert q_function(-x) == pytest.approx(1 - q_function(x), rel=1e-12)
    assert q_function(4.2) == pytest.approx(1.335e-5, rel=1e-3)
    assert q_function(4.2) == pytest.approx(float(q_mp(4.2)), rel=1e-12)
    assert q_function(40.0) == 0.0  # underflows double precision


def test_fp_probability_boundaries():
    k = 3.7
    assert fp_probability(k, 1024, 1024) == pytest.approx(q_function(k), rel=1e-12)
    assert fp_probability(40.0, 1024, 37) == 0.0
    with pytest.raises(ValueError):
        fp_probability(3.0, 1024, 1025)
    with pytest.raises(ValueError):
        fp_probability(3.0, 1024, 0)


def test_fp_probability_value_and_oracle():
    got = fp_probability(4.2, 1024, 37)
    assert got == pytest.approx(1.31e-2, rel=2e-2)
    assert got == pytest.approx(float(fp_mp(4.2, 1024, 37)), rel=1e-11)


def test_fp_probability_monotonicity():
    for l in (10, 64, 200):
        vals = [fp_probability(k, 1024, l) for k in (2.0, 3.0, 4.0, 5.0, 6.0)]
        assert all(a > b for a, b in zip(vals, vals[1:]))
    for big_l in (256, 512, 1024, 4096):
        smaller = fp_probability(4.0, big_l, 37)
        larger = fp_probability(4.0, big_l * 2, 37)
        assert larger >= smaller


def test_correlation_stats_noiseless_reduction():
    p = SystemParams(l_words=37)
    sigma_cn, sigma_cz, mu_cz = correlation_stats(p, NoiseModel(0.0))
    a_sq = float(p.amplitude_bound) ** 2
    assert sigma_cz == 0.0
    assert sigma_cn == pytest.approx(a_sq * math.sqrt(37) / 3, rel=1e-12)
    assert mu_cz == pytest.approx(37 * a_sq / 3, rel=1e-12)


def test_correlation_stats_linear_in_l():
    nm = NoiseModel(1e37)
    mus = [correlation_stats(SystemParams(l_words=l), nm)[2] for l in (10, 20, 40)]
    assert mus[1] == pytest.approx(2 * mus[0], rel=1e-12)
    assert mus[2] == pytest.approx(4 * mus[0], rel=1e-12)


def test_correlation_stats_against_bignum_oracle():
    nm = NoiseModel(1.2e38)
    p = SystemParams(l_words=37)
    got = correlation_stats(p, nm)
    want = stats_mp(37, A_EXACT, 1.2e38)
    for g, w in zip(got, want):
        assert g == pytest.approx(float(w), rel=1e-9)


def test_fn_probability_noiseless_limits():
    nm0 = NoiseModel(0.0)
    assert fn_probability(4.0, SystemParams(l_words=37), nm0) == 0.0  # sqrt(37) > 4
    assert fn_probability(7.0, SystemParams(l_words=37), nm0) == 1.0  # sqrt(37) < 7
    assert fn_probability(6.0, SystemParams(l_words=36), nm0) == 0.5


def test_fn_probability_monotone_in_k_and_l():
    nm = NoiseModel(2e37)
    vals = [fn_probability(k, SystemParams(l_words=37), nm) for k in (2, 3, 4, 5, 6)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    by_l = [fn_probability(4.6, SystemParams(l_words=l), nm) for l in (37, 50, 62, 75)]
    assert all(a >= b for a, b in zip(by_l, by_l[1:]))


def test_fn_probability_against_bignum_oracle():
    for k, l, s2 in [(4.2, 37, 1.2e38), (5.2, 75, 1.2e38), (4.2, 37, 9e35), (3.0, 50, 3.5e37)]:
        got = fn_probability(k, SystemParams(l_words=l), NoiseModel(s2))
        want = float(fn_mp(k, l, A_EXACT, s2))
        assert got == pytest.approx(want, rel=1e-9), (k, l, s2)


def test_fn_small_at_calibrated_noise():
    # the operating regime this codebase actually measures (~1e36 at q=4)
    assert fn_probability(4.2, SystemParams(l_words=37), NoiseModel(9e35)) < 1e-3


def test_threshold_table_anchors_and_interpolation():
    p = SystemParams(l_words=50)
    for l_bytes, k in K_TABLE.items():
        assert select_threshold_coefficient(l_bytes, p) == pytest.approx(k)
    assert select_threshold_coefficient(350, p) == pytest.approx(4.4)
    assert select_threshold_coefficient(450, p) == pytest.approx(4.8)
    grid = [interpolate_k(x) for x in range(300, 601, 10)]
    assert all(a <= b for a, b in zip(grid, grid[1:]))  # monotone non-decreasing


def test_threshold_solver_outside_table():
    nm = NoiseModel(9e35)
    p = SystemParams()
    k = select_threshold_coefficient(700, p, nm)
    assert k > 0
    l_words = 700 // 8
    assert fn_probability(k, SystemParams(l_words=l_words), nm) <= 1e-6 * (1 + 1e-9)
    assert fp_probability(k, 1024, l_words) <= 1e-3


def test_threshold_solver_requires_noise_model():
    with pytest.raises(ValueError):
        select_threshold_coefficient(700, SystemParams())


def test_threshold_infeasible_carries_achievable_point():
    nm = NoiseModel(1.2e38)
    with pytest.raises(ThresholdInfeasibleError) as exc:
        select_threshold_coefficient(300, SystemParams(), nm, targets=(1e-9, 1e-9))
    err = exc.value
    assert err.achievable_fn > 1e-9 or err.achievable_fp > 1e-9
    assert 0.0 <= err.k <= 64.0


def test_explicit_targets_use_solver_even_inside_table():
    nm = NoiseModel(9e35)
    k = select_threshold_coefficient(400, SystemParams(), nm, targets=(0.05, 1e-4))
    assert k != pytest.approx(4.6)  # solver, not table


def test_corruption_factor():
    assert corruption_threshold_factor(0.0) == 1.0
    assert corruption_threshold_factor(0.05) == pytest.approx(0.95)
    with pytest.raises(ValueError):
        corruption_threshold_factor(0.3)


def _payloads(total_bytes, seed, piece=50_000):
    rng = np.random.default_rng(seed)
    return [rng.integers(0, 256, piece, dtype=np.uint8).tobytes()
            for _ in range(total_bytes // piece)]


def test_calibration_minimum_corpus_size():
    with pytest.raises(CalibrationError):
        calibrate_noise(_payloads(100_000, 1), PreprocessConfig(), 1024, 4)


def test_calibration_deterministic_and_ordered():
    cfg = PreprocessConfig()
    payloads = _payloads(1_600_000, 2)
    results = {q: calibrate_noise(payloads, cfg, 1024, q, min_words=100_000) for q in (3, 4, 5)}
    again = calibrate_noise(payloads, cfg, 1024, 4, min_words=100_000)
    assert results[4].noise.sigma_n_sq == again.noise.sigma_n_sq
    assert results[3].noise.sigma_n_sq > results[4].noise.sigma_n_sq > results[5].noise.sigma_n_sq
    assert results[4].n_words >= 190_000


def test_reference_noise_table_ordering():
    assert REFERENCE_NOISE_TABLE[3] > REFERENCE_NOISE_TABLE[4] > REFERENCE_NOISE_TABLE[5]


def test_monte_carlo_quick_consistency():
    # fast sanity run; the acceptance suite runs the full 10-point subgrid.
    # The Gaussian tail model inside the closed forms is accurate for long
    # excerpts at moderate K; short-excerpt sharp-threshold points carry a
    # real model error of order He3(K)*phi(K)/(l*Q(K)).
    params = SystemParams(chunk_len=1024, l_words=900)
    nm = NoiseModel(9e35)
    k = 3.5
    rate, se = simulate_false_positive_rate(k, params, nm, trials=20_000, seed=5)
    theory = fp_probability(k, 1024, 900)
    assert abs(rate - theory) <= 4 * max(se, 1e-4)

    nm2 = NoiseModel(1.2e38)
    k2, l2 = 2.5, 37
    rate2, se2 = simulate_false_negative_rate(k2, SystemParams(l_words=l2), nm2, trials=20_000, seed=6)
    theory2 = fn_probability(k2, SystemParams(l_words=l2), nm2)
    assert abs(rate2 - theory2) <= 4 * max(se2, 1e-4)
