import math

import numpy as np
import pytest

from elsroc import criteria
from elsroc.criteria import (
    CriterionKind,
    CriterionScore,
    NoSelectableModel,
    aicc_value,
    el_solve,
    gk_penalty,
    hat_trace_vb,
    rank_scores,
    score,
    score_aic,
    score_caic,
    score_el_blup,
    score_el_fix,
    select,
)
from elsroc.model_fit import ModelSpec, _blup_arrays, _build, default_grid, fit, fit_arrays, gls_mean
from elsroc.simulation import generate_study, get_scenario
from elsroc.study_data import Dataset
from elsroc.transforms import TransformPair, t_alpha_inv

from conftest import random_dataset
from oracles import el_dual_root, el_grid_brute_force, el_refine, random_feasible_u

LOGIT = TransformPair(1, 1)


def nd_dataset(seed, n):
    rng = np.random.default_rng(seed)
    return Dataset.from_tables([generate_study(get_scenario("ND"), rng) for _ in range(n)])


def manual_fit(Sigma, D, z=None, spec=ModelSpec(2, LOGIT)):
    D = np.asarray(D, float)
    z = np.random.default_rng(0).normal(size=D.shape) if z is None else np.asarray(z, float)
    Sigma = np.asarray(Sigma, float)
    mu, _ = gls_mean(z, D, Sigma)
    return _build(spec, "REML", z, D, t_alpha_inv(1, z), Sigma, mu, True, 0, np.zeros(3))


def test_kind_parsing():
    assert CriterionKind.parse("EL_blup") is CriterionKind.EL_blup
    assert CriterionKind.parse(" AIC-noJ ") is CriterionKind.AIC_noJ
    assert CriterionKind.cAIC_GK.label == "cAIC-GK"
    with pytest.raises(ValueError):
        CriterionKind.parse("bic")


def test_infeasible_score_is_infinite():
    s = CriterionScore(ModelSpec(1, LOGIT), CriterionKind.AIC, 3.0, feasible=False)
    assert s.value == math.inf


def test_el_zero_vectors():
    s = el_solve(np.zeros((5, 2)))
    assert s.R == 0.0 and s.feasible
    np.testing.assert_array_equal(s.weights, np.full(5, 0.2))
    np.testing.assert_array_equal(s.lam, [0, 0])


def test_el_antipodal():
    s = el_solve([[1, 2], [-1, -2], [3, -0.5], [-3, 0.5]])
    assert s.R == pytest.approx(0, abs=1e-14)
    np.testing.assert_allclose(s.lam, 0, atol=1e-14)


def test_el_separable_is_infeasible():
    s = el_solve([[0.1, 5], [2, -3], [1, 0], [0.01, 0.2]])
    assert not s.feasible and s.R == math.inf


def test_el_origin_on_boundary_not_collinear():
    s = el_solve([[1, 0], [-1, 0], [0, 1], [0.5, 2]])
    assert not s.feasible


def test_el_collinear_through_origin():
    u = np.array([[1, 2], [-1, -2], [2, 4], [-0.5, -1]])
    s = el_solve(u)
    assert s.feasible
    assert s.R == pytest.approx(el_dual_root(u[:, :1]), abs=1e-10)


def test_el_one_dimensional():
    u = np.array([0.3, -1.0, 2.0, 0.1])
    s = el_solve(u)
    assert s.R == pytest.approx(el_dual_root(u[:, None]), abs=1e-10)
    assert not el_solve([1.0, 2.0, 3.0]).feasible


def test_el_non_finite_input():
    assert not el_solve([[0, 1], [np.nan, 0], [1, -1]]).feasible


@pytest.mark.parametrize("seed", range(12))
def test_el_against_grid_oracle(seed):
    rng = np.random.default_rng(seed)
    u = random_feasible_u(rng, 4)
    s = el_solve(u)
    R_grid, w = el_grid_brute_force(u)
    assert R_grid >= s.R - 1e-12
    assert R_grid - s.R < 1e-2
    assert el_refine(u, w) == pytest.approx(s.R, abs=1e-4)
    # coarser grids can only be worse
    assert el_grid_brute_force(u, 100)[0] >= R_grid - 1e-12


@pytest.mark.parametrize("seed", range(30))
def test_el_weight_identities(seed):
    rng = np.random.default_rng(seed)
    u = random_feasible_u(rng, 3 + seed % 8) * 10.0 ** (seed % 5 - 2)
    s = el_solve(u)
    assert abs(s.weights.sum() - 1) <= 1e-10
    assert np.linalg.norm(s.weights @ u) <= 1e-8
    assert s.R == pytest.approx(-2 * np.sum(np.log(len(u) * s.weights)), abs=1e-9)
    assert s.R == pytest.approx(el_dual_root(u), abs=1e-8)


def test_el_fix_minimised_at_sample_mean(dataset10):
    f = fit(dataset10, ModelSpec(1, LOGIT))
    ybar = dataset10.y.mean(axis=0)
    assert el_solve(dataset10.y - ybar).R == pytest.approx(0, abs=1e-12)
    rng = np.random.default_rng(2)
    for _ in range(20):
        assert el_solve(dataset10.y - (ybar + rng.normal(scale=0.02, size=2))).R >= 0
    assert score_el_fix(f).value >= 0


def test_el_fix_outside_hull():
    ds = nd_dataset(1, 5)
    f = manual_fit(np.eye(2), np.ones((5, 2)), z=ds.z(LOGIT))
    object.__setattr__(f.theta, "mu_p", 50.0)
    assert score_el_fix(f).value == math.inf and not score_el_fix(f).feasible


def test_el_fix_second_implementation_nd():
    ds = nd_dataset(3, 5)
    for spec in default_grid()[::5]:
        f = fit(ds, spec)
        target = np.array([t_alpha_inv(spec.pair.alpha_p, f.theta.mu_p), t_alpha_inv(spec.pair.alpha_q, f.theta.mu_q)])
        assert score_el_fix(f).value == pytest.approx(el_dual_root(ds.y - target), abs=1e-6)


def test_el_blup_family1_equals_fix(dataset10):
    for spec in default_grid()[:25]:
        f = fit(dataset10, spec)
        assert score_el_blup(f).value == score_el_fix(f).value


def test_el_blup_total_shrinkage_equals_fix():
    ds = nd_dataset(4, 6)
    z, D = ds.z(LOGIT), ds.d2(LOGIT)
    f = _build(ModelSpec(2, LOGIT), "REML", z, D, np.array(ds.y), np.zeros((2, 2)),
               gls_mean(z, D, np.zeros((2, 2)))[0], True, 0, np.zeros(3))
    assert score_el_blup(f).value == pytest.approx(score_el_fix(f).value, abs=1e-9)


def test_el_blup_mostly_finite_nd():
    rng = np.random.default_rng(77)
    sc = get_scenario("ND")
    finite = 0
    for _ in range(200):
        ds = Dataset.from_tables([generate_study(sc, rng) for _ in range(10)])
        v = score_el_blup(fit(ds, ModelSpec(2, LOGIT))).value
        assert v >= 0
        finite += np.isfinite(v)
    assert finite >= 190


def test_aic_jacobian_identity(dataset10):
    for spec in default_grid()[::3]:
        f = fit(dataset10, spec)
        gap = score_aic(f, True).value - score_aic(f, False).value
        assert gap == pytest.approx(-2 * f.log_jacobian_sum, abs=1e-10)
        assert score_aic(f).value == -2 * f.loglik_y + 10


def test_aicc_same_argmin_and_undefined_case(dataset10):
    fits = [fit(dataset10, s) for s in default_grid()]
    a = [score_aic(f).value for f in fits]
    c = [aicc_value(f) for f in fits]
    assert int(np.argmin(a)) == int(np.argmin(c))
    assert int(np.argmin(a)) == int(np.argmax([f.loglik_y for f in fits]))
    six = fit(random_dataset(np.random.default_rng(1), 6), ModelSpec(1, LOGIT))
    with pytest.raises(ValueError):
        aicc_value(six)


def test_caic_family1_is_aic(dataset10):
    for spec in default_grid()[:25:4]:
        f = fit(dataset10, spec)
        aic = score_aic(f).value
        assert score_caic(f, variant="VB").value == aic
        assert score_caic(f, variant="GK").value == aic


def test_vb_trace_limits():
    n = 6
    assert hat_trace_vb(manual_fit(1e6 * np.eye(2), np.ones((n, 2)))) > 0.9 * 2 * n
    assert hat_trace_vb(manual_fit(np.zeros((2, 2)), np.ones((n, 2)))) == pytest.approx(2, abs=1e-9)


def test_vb_trace_against_explicit_hat_matrix(dataset10):
    f = fit(dataset10, ModelSpec(2, TransformPair(0.6, 1.4)))
    Sigma, D = f.theta.cov, np.array(f.D)

    def predict(z):
        return _blup_arrays(z, D, gls_mean(z, D, Sigma)[0], Sigma).ravel()

    # the map is linear in z, so unit differences give the hat matrix exactly
    z0 = np.array(f.z)
    H = np.column_stack([predict((z0.ravel() + e).reshape(z0.shape)) - predict(z0) for e in np.eye(z0.size)])
    assert hat_trace_vb(f) == pytest.approx(np.trace(H), abs=1e-8)


def test_gk_penalty_against_full_refits(dataset10):
    f = fit(dataset10, ModelSpec(2, LOGIT))
    z0, D = np.array(f.z), np.array(f.D)
    h = 1e-3 * z0.std(axis=0, ddof=1)
    total = 0.0
    for i in range(f.N):
        for c in range(2):
            zhat = []
            for sgn in (1, -1):
                z = z0.copy()
                z[i, c] += sgn * h[c]
                zhat.append(fit_arrays(z, D, "REML").blups[i, c])
            total += (zhat[0] - zhat[1]) / (2 * h[c])
    gk = gk_penalty(f)
    assert gk == pytest.approx(total, abs=2e-3)
    assert gk >= hat_trace_vb(f) - 1e-6


def test_caic_family2_value(dataset10):
    from elsroc.model_fit import conditional_loglik
    f = fit(dataset10, ModelSpec(2, TransformPair(1, 0.6)))
    s = score_caic(f, variant="VB")
    assert s.value == pytest.approx(-2 * conditional_loglik(f, y_scale=True) + 2 * hat_trace_vb(f))


def test_score_dispatch(dataset10):
    f = fit(dataset10, ModelSpec(2, LOGIT))
    for kind in criteria.ALL_KINDS:
        assert score(f, kind.value).kind is kind


def test_rank_ties_use_canonical_order():
    grid = default_grid()
    shuffled = [grid[i] for i in np.random.default_rng(0).permutation(len(grid))]
    ranked = rank_scores([CriterionScore(s, CriterionKind.AIC, 1.0) for s in shuffled])
    assert [r.spec for r in ranked] == grid


def test_select_single_model(dataset10):
    spec = ModelSpec(2, TransformPair(1.4, 1))
    ranked = select(dataset10, [spec], "caic-gk")
    assert len(ranked) == 1 and ranked[0].spec == spec


def test_select_all_infeasible(dataset10, monkeypatch):
    monkeypatch.setattr(criteria, "score", lambda f, k, d=None: CriterionScore(f.spec, k, math.inf, False))
    with pytest.raises(NoSelectableModel):
        select(dataset10, default_grid()[:4], "aic")


def test_select_deterministic_and_sorted(dataset10):
    a = select(dataset10, kind="el-blup")
    b = select(dataset10, kind="el-blup")
    assert [(s.spec, s.value) for s in a] == [(s.spec, s.value) for s in b]
    vals = [s.value for s in a]
    assert vals == sorted(vals) and len(a) == 50
