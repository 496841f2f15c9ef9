import math
import warnings

import numpy as np
import pytest

from dpsaddle.geometry import DomainError, LpGeometry, ProductGeometry, conjugate_exponent, effective_exponent
from dpsaddle.privacy import (
    OracleCallLog,
    PrivacyBudget,
    calibrate,
    kappa_tilde,
    noise_for_released_iterate,
    private_oracle,
)
from dpsaddle.problems import make_instance, sample_dataset


def euclid(d_w, d_t, radius=1.0):
    return ProductGeometry(LpGeometry(2, d_w, radius), LpGeometry(2, d_t, radius))


def test_budget_validation():
    for eps, delta in [(0, 1e-5), (-1, 1e-5), (math.inf, 1e-5), (1, 0), (1, 1.5)]:
        with pytest.raises(DomainError):
            PrivacyBudget(eps, delta)
    assert PrivacyBudget(1, 1).log_inv_delta == 0


def test_calibrate_worked_example():
    cal = calibrate(PrivacyBudget(1.0, 1e-5), euclid(5, 5), 1.0, 1.0, 1000)
    assert cal.iterations == 1000
    assert cal.batch_size == 32
    assert cal.sigma_w == pytest.approx(0.10730, abs=1e-5)
    assert cal.sigma_theta == pytest.approx(cal.sigma_w)
    assert cal.kappa_tilde == 1 and cal.kappa == 1
    assert cal.accountant_preconditions_met


def test_calibrate_large_epsilon_clamps_to_kappa_n():
    g = euclid(5, 5)
    cals = [calibrate(PrivacyBudget(e, 1e-5), g, 1.0, 1.0, 1000) for e in (10.0, 100.0, 1000.0)]
    assert all(c.iterations == 1000 for c in cals)
    assert cals[0].sigma_w > cals[1].sigma_w > cals[2].sigma_w


def test_calibrate_clamps_tiny_inputs():
    cal = calibrate(PrivacyBudget(1.0, 0.1), euclid(1, 1), 1.0, 1.0, 1)
    assert (cal.iterations, cal.batch_size) == (1, 1)


def test_calibrate_rejects_bad_n():
    with pytest.raises(DomainError):
        calibrate(PrivacyBudget(1.0, 0.1), euclid(1, 1), 1.0, 1.0, 0)


def test_calibrate_formulas_non_euclidean():
    g = ProductGeometry(LpGeometry(1.0, 20, 2.0), LpGeometry(2.0, 4, 0.5))
    budget = PrivacyBudget(0.5, 1e-6)
    n = 5000
    cal = calibrate(budget, g, 3.0, 2.0, n, constant=1.7)
    kt = 1 + math.log(24)
    kappa = 1 / (effective_exponent(1.0, 20) - 1)
    T = max(1, math.ceil(kappa * min(n, n * n * 0.25 / (24 * math.log(1e6) * kt))))
    assert cal.kappa_tilde == pytest.approx(kt)
    assert cal.iterations == T
    assert cal.batch_size == min(n, math.ceil(n * math.sqrt(0.5 / T)))
    pstar = conjugate_exponent(effective_exponent(1.0, 20))
    sw = 1.7 * 2.0 * 3.0 * math.sqrt(T * 20 ** (1 - 2 / pstar) * math.log(1e6)) / (n * 0.5)
    st = 1.7 * 0.5 * 2.0 * math.sqrt(T * math.log(1e6)) / (n * 0.5)
    assert cal.sigma_w == pytest.approx(sw, rel=1e-12)
    assert cal.sigma_theta == pytest.approx(st, rel=1e-12)


def test_kappa_tilde():
    assert kappa_tilde(euclid(3, 3)) == 1
    assert kappa_tilde(ProductGeometry(LpGeometry(1.5, 3), LpGeometry(2, 3))) == pytest.approx(1 + math.log(6))


def random_configs(count, seed):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        d_w, d_t = int(rng.integers(1, 30)), int(rng.integers(1, 30))
        g = ProductGeometry(LpGeometry(float(rng.choice([1.0, 1.3, 2.0])), d_w, rng.uniform(0.2, 3)),
                            LpGeometry(float(rng.choice([1.0, 1.6, 2.0])), d_t, rng.uniform(0.2, 3)))
        budget = PrivacyBudget(float(rng.uniform(0.05, 5)), float(10 ** rng.uniform(-9, -1)))
        yield g, budget, float(rng.uniform(0.1, 10)), float(rng.uniform(0.1, 10)), int(10 ** rng.uniform(1, 5)), \
            float(rng.uniform(0.5, 3))


def test_accountant_preconditions_on_random_grid():
    for g, budget, Lw, Lt, n, c in random_configs(100, 21):
        cal = calibrate(budget, g, Lw, Lt, n, constant=c)
        T, m = cal.iterations, cal.batch_size
        root = math.sqrt(T * budget.log_inv_delta) / (n * budget.epsilon)
        assert cal.sigma_w >= c * g.w_geom.radius * Lw * root * (1 - 1e-12)
        assert cal.sigma_theta >= c * g.theta_geom.radius * Lt * root * (1 - 1e-12)
        assert T * m * m >= n * n * budget.epsilon * (1 - 1e-12)
        assert 1 <= m <= n and T >= 1
        assert cal.accountant_preconditions_met


def test_iterations_raised_to_epsilon_for_small_n():
    # the plain formula gives T = 1 here, and no batch size m <= n could meet T m^2 >= n^2 eps
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        cal = calibrate(PrivacyBudget(50.0, 1e-5), euclid(30, 30), 1.0, 1.0, 3)
    assert cal.iterations == 50
    assert cal.iterations * cal.batch_size**2 >= 9 * 50
    assert cal.accountant_preconditions_met


def test_calibration_monotonicity():
    g = euclid(5, 5)
    budget = PrivacyBudget(1.0, 1e-5)
    sig = [calibrate(budget, g, 1, 1, n).sigma_w for n in (1000, 2000, 4000, 8000)]
    assert all(a > b for a, b in zip(sig, sig[1:]))
    # at T = n the scale is proportional to 1/eps
    low = calibrate(PrivacyBudget(20.0, 1e-5), g, 1, 1, 1000)
    high = calibrate(PrivacyBudget(40.0, 1e-5), g, 1, 1, 1000)
    assert low.iterations == high.iterations
    assert low.sigma_w / high.sigma_w == pytest.approx(2.0)


@pytest.mark.parametrize("d", [10, 100])
def test_dual_norm_variance_factor(d):
    pstar = conjugate_exponent(effective_exponent(1.0, d))
    x = np.random.default_rng(d).standard_normal((50000, d))
    second_moment = np.mean(np.linalg.norm(x, ord=pstar, axis=1) ** 2)
    assert second_moment <= 1.2 * d ** (2 / pstar) * math.log(d)


def test_noise_for_released_iterate():
    b = PrivacyBudget(1.0, 1e-5)
    assert noise_for_released_iterate(0, b) == 0
    assert noise_for_released_iterate(1, b) == pytest.approx(4.8448052626, abs=1e-9)
    assert noise_for_released_iterate(2, PrivacyBudget(2.0, 1e-5)) == pytest.approx(noise_for_released_iterate(1, b))
    with pytest.raises(DomainError):
        noise_for_released_iterate(-1, b)


def test_oracle_noiseless_full_batch_is_exact():
    inst = make_instance("bilinear_ssp", d_w=3)
    data = sample_dataset(inst, 40, 1)
    cal = calibrate(PrivacyBudget(1.0, 1e-5), inst.geometry, inst.lipschitz_w, inst.lipschitz_theta, 40)
    cal = cal.noiseless().full_batch()
    z = inst.constraint.random_point(np.random.default_rng(2))
    exact = np.mean([inst.operator(z, x) for x in data], axis=0)
    out = private_oracle(data, z, cal, inst, np.random.default_rng(3))
    np.testing.assert_allclose(out, exact, atol=1e-14)


def test_oracle_unbiased_linear_vi():
    inst = make_instance("linear_vi")
    data = sample_dataset(inst, 30, 4)
    cal = calibrate(PrivacyBudget(1.0, 1e-5), inst.geometry, inst.lipschitz_w, 0.0, 30)
    assert cal.batch_size < 30 and cal.sigma_w > 0
    rng = np.random.default_rng(5)
    z = np.zeros(2)
    draws = np.array([private_oracle(data, z, cal, inst, rng) for _ in range(100000)])
    se = draws.std(axis=0) / math.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - data.mean(axis=0)) <= 3 * se)


def test_oracle_deterministic_and_logged():
    inst = make_instance("bilinear_ssp", d_w=2)
    data = sample_dataset(inst, 100, 6)
    cal = calibrate(PrivacyBudget(1.0, 1e-5), inst.geometry, inst.lipschitz_w, inst.lipschitz_theta, 100)
    z = np.zeros(4)
    log = OracleCallLog()
    a = private_oracle(data, z, cal, inst, np.random.default_rng(9), log, round_index=1)
    b = private_oracle(data, z, cal, inst, np.random.default_rng(9), log, round_index=2)
    assert a.tobytes() == b.tobytes()
    assert log.calls == {1: 1, 2: 1}
    assert log.total_evaluations == 2 * cal.batch_size


def test_oracle_empty_chunk():
    inst = make_instance("linear_vi")
    cal = calibrate(PrivacyBudget(1.0, 1e-5), inst.geometry, 1.0, 0.0, 10)
    with pytest.raises(DomainError):
        private_oracle(np.zeros((0, 2)), np.zeros(2), cal, inst, np.random.default_rng(0))


def test_log_merge_and_totals():
    a, b = OracleCallLog(), OracleCallLog()
    a.record(0, 5)
    a.record(0, 5)
    b.record(0, 3)
    b.record(1, 7)
    a.merge(b)
    assert a.calls == {0: 3, 1: 1}
    assert a.total_evaluations == 20
    assert a.total_calls == 4


def test_noiseless_twin_shares_batches():
    inst = make_instance("linear_vi")
    data = sample_dataset(inst, 50, 8)
    cal = calibrate(PrivacyBudget(1.0, 1e-5), inst.geometry, inst.lipschitz_w, 0.0, 50)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        noisy = private_oracle(data, np.zeros(2), cal, inst, np.random.default_rng(1))
        quiet = private_oracle(data, np.zeros(2), cal.noiseless(), inst, np.random.default_rng(1))
    rng = np.random.default_rng(1)
    idx = rng.integers(0, 50, size=cal.batch_size)
    np.testing.assert_allclose(quiet, data[idx].mean(axis=0))
    assert not np.allclose(noisy, quiet)
