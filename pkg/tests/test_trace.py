"""Traces, the renormalization operator, eigenvalues and eigenforms."""

import numpy as np
import pytest

from presistance import energy as en
from presistance import structure as st
from presistance import trace as tr


def sg_schur_lambda():
    """Independent p=2 oracle for SG(2,2): eliminate the three midpoints of
    the level-1 graph by a Schur complement and read off the boundary form."""
    s = st.build_sierpinski_gasket(2, 2)
    E0 = tr.symmetric_seed(s, 2.0)
    big = tr.lift(s, E0, tr.WeightVector.constant(1.0, 3), 1, k=0)
    g1 = st.refine(s, 1)
    idx = [big.index(v) for v in g1.boundary]
    n = len(big.vertices)
    L = np.zeros((n, n))
    for (x, y, c) in big.edges:
        i, j = big.index(x), big.index(y)
        L[i, i] += c
        L[j, j] += c
        L[i, j] -= c
        L[j, i] -= c
    rest = [i for i in range(n) if i not in idx]
    S = L[np.ix_(idx, idx)] - L[np.ix_(idx, rest)] @ np.linalg.solve(
        L[np.ix_(rest, rest)], L[np.ix_(rest, idx)]
    )
    # traced energy of the indicator 1_{q0}: quadratic form of S
    u = np.array([1.0, 0.0, 0.0])
    traced = float(u @ S @ u)
    return traced / E0.eval(u)


def test_schur_oracle_is_three_fifths():
    assert sg_schur_lambda() == pytest.approx(0.6, abs=1e-12)


def test_trace_path_single_edge():
    # tracing the unit path of length 2 to its endpoints halves... no:
    # series combination gives R = 2, so E|_{0,2}(1_0) = (1/2)^{p-1}
    for p in (1.5, 2.0, 3.0):
        form = en.path_form(2, p)
        t = tr.trace(form, [0, 2])
        assert t.eval([1.0, 0.0]) == pytest.approx(2.0 ** (1.0 - p), rel=1e-8)


def test_trace_rejects_foreign_vertex():
    form = en.path_form(2, 2.0)
    with pytest.raises((tr.TraceError, en.EnergyError)):
        tr.trace(tr.trace(form, [0, 2]), [0, 7])


def test_lift_edge_count(sg22):
    E0 = tr.symmetric_seed(sg22, 2.0)
    big = tr.lift(sg22, E0, tr.WeightVector.constant(1.0, 3), 1, k=0)
    # 3 cells x 3 edges, no overlaps
    assert len(big.edges) == 9
    assert len(big.vertices) == 6


def test_lift_depth_zero_is_identity(sg22):
    E0 = tr.symmetric_seed(sg22, 3.0)
    assert tr.lift(sg22, E0, tr.WeightVector.constant(1.0, 3), 0) is E0


def test_lift_carries_decomposition_info(sg22):
    E0 = tr.symmetric_seed(sg22, 2.0)
    rho = tr.WeightVector.constant(1.2, 3)
    big = tr.lift(sg22, E0, rho, 2, k=0)
    assert big.lift_info[2] is rho
    assert big.lift_info[3] == 2


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_lift_is_sum_over_cells(sg22, p, rng):
    E0 = tr.symmetric_seed(sg22, p)
    rho = tr.WeightVector((1.0, 2.0, 0.5))
    big = tr.lift(sg22, E0, rho, 1, k=0)
    g1 = st.refine(sg22, 1)
    u = rng.standard_normal(len(g1.vertices))
    total = sum(
        rho.word_weight(w) * E0.eval(st.cell_map(g1, w, u))
        for w in sg22.words(1)
    )
    assert big.eval(u) == pytest.approx(total, rel=1e-12)


def test_sg22_p2_eigenvalue_matches_schur(sg22):
    E0 = tr.symmetric_seed(sg22, 2.0)
    rep = tr.eigenvalue(sg22, E0, tr.WeightVector.constant(1.0, 3))
    assert rep.lambda_ == pytest.approx(0.6, abs=1e-8)


def test_eigenvalue_weight_homogeneity(sg22):
    # lambda(a * rho) = a * lambda(rho)
    E0 = tr.symmetric_seed(sg22, 2.0)
    lam1 = tr.eigenvalue(sg22, E0, tr.WeightVector.constant(1.0, 3)).lambda_
    lam2 = tr.eigenvalue(sg22, E0, tr.WeightVector.constant(2.0, 3)).lambda_
    assert lam2 == pytest.approx(2.0 * lam1, rel=1e-7)


def test_eigenvalue_monotone_in_weights(sg22):
    E0 = tr.symmetric_seed(sg22, 2.0)
    # asymmetric weights settle slowly; a coarse tolerance is plenty here
    lo = tr.eigenvalue(sg22, E0, tr.WeightVector((1.0, 1.0, 1.0))).lambda_
    hi = tr.eigenvalue(sg22, E0, tr.WeightVector((1.0, 1.0, 1.5)), tol=1e-3).lambda_
    assert lo < hi


def test_sg22_sigma_p2(sg22):
    E0 = tr.symmetric_seed(sg22, 2.0)
    out = tr.self_similar_weight(sg22, E0)
    assert out["sigma"] == pytest.approx(5.0 / 3.0, abs=1e-7)


def test_sg23_sigma_p2(sg23):
    # SG(2,3): sigma = 15/7 for the quadratic form
    E0 = tr.symmetric_seed(sg23, 2.0)
    out = tr.self_similar_weight(sg23, E0)
    assert out["sigma"] == pytest.approx(15.0 / 7.0, rel=1e-6)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_eigenform_symmetry_and_residual(sg22, p, sg22_sigma):
    E0 = tr.symmetric_seed(sg22, p)
    sigma = sg22_sigma[p]
    rho = tr.WeightVector.constant(sigma, 3)
    rep = tr.eigenform(sg22, E0, rho=rho, depth=5, lam=1.0)
    if p == 2.0:
        # sigma is exact (5/3) only here; the scaled iterates increase
        assert rep.monotone_ok
    assert rep.fixed_point_residual < 5e-3
    # full symmetry: one indicator per complement class, all agree
    singles = [rep.indicator_table[k] for k in ("011", "010", "001")]
    assert max(singles) - min(singles) < 1e-8 * max(singles)


def test_eigenform_cesaro_agrees_at_p2(sg22):
    E0 = tr.symmetric_seed(sg22, 2.0)
    rho = tr.WeightVector.constant(5.0 / 3.0, 3)
    plain = tr.eigenform(sg22, E0, rho=rho, depth=4, lam=1.0)
    avg = tr.eigenform(sg22, E0, rho=rho, depth=4, lam=1.0, cesaro=True)
    u = np.array([1.0, 0.0, 0.0])
    # p=2 iterates converge geometrically; the average lags but is close
    assert avg.eigenform.eval(u) == pytest.approx(plain.eigenform.eval(u), rel=2e-2)


def test_condA_symmetric_is_one(sg22):
    E0 = tr.symmetric_seed(sg22, 2.0)
    out = tr.condA_check(sg22, E0, tr.WeightVector.constant(5.0 / 3.0, 3), max_depth=3)
    assert out["c_estimate"] == pytest.approx(1.0, abs=1e-9)


def test_condA_asymmetric_in_unit_interval(sg22):
    E0 = tr.symmetric_seed(sg22, 2.0)
    out = tr.condA_check(sg22, E0, tr.WeightVector((1.0, 1.0, 2.0)), max_depth=3)
    assert 0.0 < out["c_estimate"] < 1.0


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_inductive_limit(sg22, p, sg22_sigma):
    E0 = tr.symmetric_seed(sg22, p)
    rho = tr.WeightVector.constant(sg22_sigma[p], 3)
    out = tr.inductive_limit_check(sg22, E0, rho, levels=2, rng=3)
    assert out["compat_ok"], out["compat_worst_rel_error"]
    assert out["monotone_ok"], out["trace_values"]


def test_indicator_norm_matches_bruteforce(sg22):
    E0 = tr.symmetric_seed(sg22, 2.0)
    # symmetric triangle: every nonconstant indicator has energy 2
    assert tr.indicator_norm(E0) == pytest.approx(2.0)


def test_boundary_indicators_count():
    assert len(tr.boundary_indicators(3)) == 3
    assert len(tr.boundary_indicators(4)) == 7


def test_weight_vector_validation():
    with pytest.raises(tr.TraceError):
        tr.WeightVector((1.0, 0.0))
    w = tr.WeightVector((2.0, 3.0))
    assert w.word_weight((0, 1, 1)) == pytest.approx(18.0)
    assert w.regular()
