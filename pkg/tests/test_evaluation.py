import numpy as np
import pytest

from dpsaddle.geometry import DomainError
from dpsaddle.privacy import PrivacyBudget
from dpsaddle.problems import make_instance, sample_dataset
from dpsaddle.solvers import RegularizedProblem, exact_population_solver
from dpsaddle.evaluation import (
    SweepConfig,
    h_diagnostic,
    rate_sweep,
    run_pipeline,
    sp_gap,
    stability_generalization_probe,
    uas_probe,
    vi_gap,
    vi_gap_equals_excess_risk_check,
    vi_gap_grid,
)


def test_scalar_square_gaps():
    inst = make_instance("scalar_square_vi")
    rep = sp_gap(inst, [1.0])
    assert rep.gap_value == 1.0
    assert rep.method == "exact_inner_solve"
    assert vi_gap(inst, [1.0]).gap_value == pytest.approx(0.5, abs=1e-12)
    assert vi_gap(inst, [0.0]).gap_value == pytest.approx(0.0, abs=1e-12)
    # grid oracle: max over z of 2z (1 - z)
    assert vi_gap_grid(inst, [1.0], 1e-3) == pytest.approx(0.5, abs=1e-6)


def test_bilinear_sp_gap_against_grid():
    inst = make_instance("bilinear_ssp", d_w=1, A=[[1.0]], b=[0.3], c=[-0.4], noise=0.1)
    grid = np.linspace(-1, 1, 20001)
    rng = np.random.default_rng(1)
    for _ in range(20):
        w, th = rng.uniform(-1, 1, 2)
        f = lambda ww, tt: ww * tt + 0.3 * ww - 0.4 * tt
        ref = np.max(f(w, grid)) - np.min(f(grid, th))
        assert sp_gap(inst, [w], [th]).gap_value == pytest.approx(ref, abs=1e-9)


def test_quadratic_sp_gap_against_grid_and_zero_at_saddle():
    inst = make_instance("quadratic_scsc_ssp", d_w=1, noise=0.0)
    P, A, Q, b, c = inst.quadratic(inst.mean_sample)
    grid = np.linspace(-1, 1, 200001)
    f = lambda w, t: 0.5 * P[0, 0] * w * w + A[0, 0] * w * t - 0.5 * Q[0, 0] * t * t + b[0] * w + c[0] * t
    rng = np.random.default_rng(2)
    for _ in range(10):
        w, th = rng.uniform(-1, 1, 2)
        ref = np.max(f(w, grid)) - np.min(f(grid, th))
        rep = sp_gap(inst, [w], [th])
        assert rep.method == "exact_inner_solve"
        assert rep.gap_value == pytest.approx(ref, abs=1e-8)
    star = inst.population_truth().point
    assert abs(sp_gap(inst, *inst.split(star)).gap_value) <= 1e-9


@pytest.mark.parametrize("kind", ["affine_monotone_vi", "linear_vi"])
def test_vi_gap_against_grid(kind):
    inst = make_instance(kind, d=2) if kind == "affine_monotone_vi" else make_instance(kind)
    rng = np.random.default_rng(3)
    for _ in range(10):
        z = inst.constraint.random_point(rng)
        exact = vi_gap(inst, z).gap_value
        grid = vi_gap_grid(inst, z, 2e-3)
        assert grid <= exact + 1e-9
        assert exact - grid <= 1e-2


def test_vi_gap_nonnegative_and_zero_at_truth():
    for kind in ["linear_vi", "affine_monotone_vi", "scalar_square_vi", "bilinear_ssp", "group_dro_ssp"]:
        inst = make_instance(kind)
        rng = np.random.default_rng(4)
        for _ in range(20):
            assert vi_gap(inst, inst.constraint.random_point(rng)).gap_value >= -1e-10
        assert abs(vi_gap(inst, inst.population_truth().point).gap_value) <= 1e-9


def test_excess_risk_identity():
    inst = make_instance("linear_vi", noise=0.5)
    rng = np.random.default_rng(5)
    for _ in range(100):
        ok, residual = vi_gap_equals_excess_risk_check(inst, inst.constraint.random_point(rng))
        assert ok and residual <= 1e-9


def test_excess_risk_identity_only_for_linear():
    with pytest.raises(DomainError):
        vi_gap_equals_excess_risk_check(make_instance("scalar_square_vi"), [0.5])


def test_sp_gap_needs_loss_and_feasible_point():
    with pytest.raises(DomainError):
        sp_gap(make_instance("affine_monotone_vi"), np.zeros(3))
    with pytest.raises(DomainError):
        sp_gap(make_instance("bilinear_ssp", d_w=1), [2.0], [0.0])


def test_grid_limited_to_three_dims():
    with pytest.raises(DomainError):
        vi_gap_grid(make_instance("bilinear_ssp", d_w=2), np.zeros(4))


def test_h_diagnostic_zero_at_solution():
    inst = make_instance("bilinear_ssp", d_w=2)
    prob = RegularizedProblem(inst, "ssp").with_term(1.0, np.zeros(4))
    z_star = exact_population_solver(prob, 1e-12)
    hs, hd = h_diagnostic(prob, z_star, z_star)
    assert hs is None and hd == pytest.approx(0.0, abs=1e-12)
    data = sample_dataset(inst, 30, 1)
    hs, hd = h_diagnostic(prob, z_star, np.full(4, 0.1), data)
    assert hs is not None and hd >= 0


def test_h_diagnostic_svi_definition():
    inst = make_instance("affine_monotone_vi")
    prob = RegularizedProblem(inst, "svi")
    z = np.array([0.1, 0.2, -0.1])
    z_star = np.zeros(3)
    _, hd = h_diagnostic(prob, z_star, z)
    assert hd == pytest.approx(inst.population_operator(z) @ z)


def test_uas_probe_small():
    inst = make_instance("linear_vi")
    out = uas_probe(inst, lam=1.0, mu=1.0, n=10, trials=10, seed=0)
    assert out["passed"]
    assert 0 < out["max_distance"] <= out["bound"]
    same = uas_probe(inst, lam=1.0, mu=1.0, n=10, trials=3, seed=0, identical=True)
    assert same["max_distance"] == 0.0


def test_stability_probe_small():
    inst = make_instance("bilinear_ssp", d_w=2)
    out = stability_generalization_probe(inst, lam=1.0, n=20, trials=40, seed=1)
    assert out["passed"]
    assert out["delta"] > 0 and out["stderr"] > 0


def test_run_pipeline_shapes_and_budget():
    inst = make_instance("bilinear_ssp", d_w=2, offset=0.5)
    data = sample_dataset(inst, 512, 3)
    budget = PrivacyBudget(1.0, 1e-5)
    rep, evals, point, detail = run_pipeline(inst, data, budget, 3, lambda_constant=1.0, bound_factor=3.0)
    assert rep.gap_value >= 0
    assert evals > 0
    assert inst.constraint.contains(point, rtol=1e-9)
    assert detail["rounds"] >= 1
    again = run_pipeline(inst, data, budget, 3, lambda_constant=1.0, bound_factor=3.0)
    assert again[2].tobytes() == point.tobytes()
    mp = run_pipeline(inst, data, budget, 3, solver="mirror_prox_only")
    assert mp[3]["iterations"] >= 1
    with pytest.raises(DomainError):
        run_pipeline(inst, data, budget, 3, solver="sgd")


def test_run_pipeline_svi():
    inst = make_instance("affine_monotone_vi")
    data = sample_dataset(inst, 512, 4)
    rep, evals, _, _ = run_pipeline(inst, data, PrivacyBudget(1.0, 1e-5), 4, solver="rr_svi",
                                    lambda_constant=1.0)
    assert rep.method in ("closed_form", "exact_inner_solve")
    assert rep.gap_value >= -1e-10 and evals > 0


def test_rate_sweep_structure():
    cfg = SweepConfig(ns=(64, 128, 256, 512), seeds=2, lambda_constant=1.0, bound_factor=3.0,
                      instance_params={"offset": 0.5}, dims=(2,))
    res = rate_sweep(cfg)
    assert len(res.rows) == 8 and not res.failures
    assert [c["n"] for c in res.cells] == [64, 128, 256, 512]
    for c in res.cells:
        assert 0 <= c["noise_share"] <= 1
        assert c["noiseless_mean_gap"] >= 0
    fit = res.fits[(2, 1.0)]
    if fit["cells_used"] >= 4:
        assert res.slope == fit["slope"]
        assert fit["halfwidth"] > 0
