import numpy as np
import pytest

from dpsaddle.geometry import DomainError
from dpsaddle.problems import (
    INSTANCE_KINDS,
    SSP_KINDS,
    SVI_KINDS,
    load_dataset,
    make_instance,
    per_sample_operator,
    population_truth,
    sample_dataset,
    save_dataset,
)

ALL = [make_instance(k) for k in INSTANCE_KINDS]
IDS = list(INSTANCE_KINDS)


def test_unknown_kind():
    with pytest.raises(DomainError):
        make_instance("nope")


def test_sample_dataset_rejects_empty():
    with pytest.raises(DomainError):
        sample_dataset(ALL[0], 0, 1)


def test_sample_dataset_deterministic():
    inst = make_instance("bilinear_ssp")
    a, b = sample_dataset(inst, 100, 1), sample_dataset(inst, 100, 1)
    assert a.tobytes() == b.tobytes()
    assert sample_dataset(inst, 100, 2).tobytes() != a.tobytes()


def test_linear_vi_atoms_support():
    inst = make_instance("linear_vi", atoms=[[-1.0, 0.0], [1.0, 0.0]])
    data = sample_dataset(inst, 4, 7)
    assert data.shape == (4, 2)
    for row in data:
        assert any(np.array_equal(row, a) for a in ([-1, 0], [1, 0]))


def test_operator_examples():
    one = make_instance("bilinear_ssp", d_w=1, A=[[1.0]], b=[0.0], c=[0.0], noise=0.0)
    np.testing.assert_allclose(per_sample_operator(one, [1.0, 0.5], one.mean_sample), [0.5, -1.0])
    sq = make_instance("scalar_square_vi")
    np.testing.assert_allclose(per_sample_operator(sq, [1.0], sq.mean_sample), [2.0])
    lin = make_instance("linear_vi")
    np.testing.assert_allclose(per_sample_operator(lin, [0.2, 0.1], [0.3, -0.1]), [0.3, -0.1])


def test_operator_rejects_infeasible_point():
    with pytest.raises(DomainError):
        per_sample_operator(make_instance("scalar_square_vi"), [1.5], [0.0])


def test_truth_examples():
    assert population_truth(make_instance("scalar_square_vi")).point == pytest.approx([0.0], abs=1e-12)
    lin = make_instance("linear_vi", mean=[1.0, 0.0])
    np.testing.assert_allclose(population_truth(lin).point, [-1.0, 0.0], atol=1e-12)
    one = make_instance("bilinear_ssp", d_w=1, A=[[1.0]], b=[0.0], c=[0.0])
    np.testing.assert_allclose(population_truth(one).point, [0.0, 0.0], atol=1e-12)


@pytest.mark.parametrize("inst", ALL, ids=IDS)
def test_operator_bounded_by_L(inst):
    rng = np.random.default_rng(1)
    data = sample_dataset(inst, 50, 3)
    for _ in range(1000):
        z = inst.constraint.random_point(rng)
        x = data[rng.integers(len(data))]
        assert inst.geometry.dual_norm(inst.operator(z, x)) <= inst.operator_bound * (1 + 1e-12)


@pytest.mark.parametrize("inst", ALL, ids=IDS)
def test_block_lipschitz_bounds(inst):
    rng = np.random.default_rng(2)
    data = sample_dataset(inst, 50, 4)
    gw = inst.geometry.w_geom
    for _ in range(500):
        z = inst.constraint.random_point(rng)
        g = inst.operator(z, data[rng.integers(len(data))])
        assert np.linalg.norm(g[: inst.d_w], ord=gw.p_star) <= inst.lipschitz_w * (1 + 1e-12)
        if inst.d_theta:
            gt = inst.geometry.theta_geom
            assert np.linalg.norm(g[inst.d_w :], ord=gt.p_star) <= inst.lipschitz_theta * (1 + 1e-12)


@pytest.mark.parametrize("inst", ALL, ids=IDS)
def test_per_sample_monotone(inst):
    rng = np.random.default_rng(3)
    data = sample_dataset(inst, 20, 5)
    for _ in range(300):
        a, b = inst.constraint.random_point(rng), inst.constraint.random_point(rng)
        x = data[rng.integers(len(data))]
        assert (inst.operator(a, x) - inst.operator(b, x)) @ (a - b) >= -1e-10


@pytest.mark.parametrize("inst", ALL, ids=IDS)
def test_operator_lipschitz(inst):
    rng = np.random.default_rng(4)
    data = sample_dataset(inst, 20, 6)
    geom = inst.geometry
    for _ in range(300):
        a, b = inst.constraint.random_point(rng), inst.constraint.random_point(rng)
        x = data[rng.integers(len(data))]
        lhs = geom.dual_norm(inst.operator(a, x) - inst.operator(b, x))
        assert lhs <= inst.operator_lipschitz * geom.norm(a - b) + 1e-10


@pytest.mark.parametrize("inst", [i for i in ALL if i.is_ssp], ids=list(SSP_KINDS))
def test_saddle_operator_is_loss_gradient(inst):
    rng = np.random.default_rng(5)
    x = sample_dataset(inst, 1, 7)[0]
    h = 1e-6
    for _ in range(20):
        z = inst.constraint.random_point(rng)
        fd = np.empty(inst.dim)
        for i in range(inst.dim):
            e = np.zeros(inst.dim)
            e[i] = h
            up, dn = inst.split(z + e), inst.split(z - e)
            fd[i] = (inst.loss(*up, x) - inst.loss(*dn, x)) / (2 * h)
        fd[inst.d_w :] *= -1
        np.testing.assert_allclose(inst.operator(z, x), fd, atol=1e-7)


@pytest.mark.parametrize("inst", [i for i in ALL if i.is_ssp], ids=list(SSP_KINDS))
def test_convex_concave_midpoints(inst):
    rng = np.random.default_rng(6)
    x = sample_dataset(inst, 1, 8)[0]
    for _ in range(500):
        w1, t1 = inst.split(inst.constraint.random_point(rng))
        w2, t2 = inst.split(inst.constraint.random_point(rng))
        assert inst.loss((w1 + w2) / 2, t1, x) <= 0.5 * (inst.loss(w1, t1, x) + inst.loss(w2, t1, x)) + 1e-12
        assert inst.loss(w1, (t1 + t2) / 2, x) >= 0.5 * (inst.loss(w1, t1, x) + inst.loss(w1, t2, x)) - 1e-12


@pytest.mark.parametrize("inst", ALL, ids=IDS)
def test_truth_equilibrium(inst):
    rng = np.random.default_rng(7)
    truth = population_truth(inst)
    g = inst.population_operator(truth.point)
    assert inst.constraint.contains(truth.point, rtol=1e-9)
    for _ in range(1000):
        z = inst.constraint.random_point(rng)
        assert g @ (truth.point - z) <= 1e-9
    # the extreme point in the direction -g is the worst case
    assert g @ truth.point + inst.constraint.support(-g) <= 1e-9


def test_population_operator_uses_analytic_mean():
    inst = make_instance("bilinear_ssp")
    z = inst.constraint.random_point(np.random.default_rng(0))
    M, q = inst.coefficients(np.zeros(inst.sample_dim))
    np.testing.assert_allclose(inst.population_operator(z), M @ z + q)
    big = sample_dataset(inst, 200000, 0)
    np.testing.assert_allclose(inst.mean_operator(z, big), inst.population_operator(z), atol=5e-3)


def test_group_dro_reformulation():
    inst = make_instance("group_dro_ssp")
    rng = np.random.default_rng(8)
    for _ in range(100):
        w = inst.split(inst.constraint.random_point(rng))[0]
        losses = inst.group_losses(w)
        # max over the simplex of a linear function is attained at a vertex
        grid = np.array([[a, b, 1 - a - b] for a in np.linspace(0, 1, 41) for b in np.linspace(0, 1, 41) if a + b <= 1])
        assert np.max(grid @ losses) == pytest.approx(losses.max(), abs=1e-12)
        val, idx = inst.worst_group_risk(w)
        assert val == pytest.approx(losses.max(), abs=1e-12)
        assert inst.population_loss(w, np.eye(3)[idx]) == pytest.approx(val, abs=1e-12)


def test_group_dro_lowest_index_tie():
    inst = make_instance("group_dro_ssp", group_means=[[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    assert inst.worst_group_risk(np.array([1.0, 0.0, 0.0]))[1] == 0


def test_affine_vi_rejects_nonmonotone():
    with pytest.raises(DomainError):
        make_instance("affine_monotone_vi", d=2, M=[[-1.0, 0.0], [0.0, 1.0]])


def test_kind_lists():
    assert set(SSP_KINDS) | set(SVI_KINDS) == set(INSTANCE_KINDS)
    for inst in ALL:
        assert inst.is_ssp == (inst.kind in SSP_KINDS)


def test_dataset_round_trip(tmp_path):
    inst = make_instance("bilinear_ssp", d_w=2)
    data = sample_dataset(inst, 17, 3)
    path = tmp_path / "data.csv"
    save_dataset(path, data, inst, 3)
    back, meta = load_dataset(path)
    assert back.tobytes() == data.tobytes()
    assert meta["kind"] == "bilinear_ssp"
    assert int(meta["n"]) == 17 and int(meta["seed"]) == 3
    assert path.read_text().splitlines()[0].startswith("# kind=bilinear_ssp")
