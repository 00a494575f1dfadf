"""End-to-end acceptance checks: closed-form oracles, inequality suites at
scale, and runtime/determinism requirements."""

import time

import numpy as np
import pytest
from click.testing import CliRunner

from presistance import energy as en
from presistance import homogeneity as hg
from presistance import measures as ms
from presistance import resistance as rs
from presistance import solver as sv
from presistance import structure as st
from presistance import trace as tr
from presistance.cli import main as cli_main


SEED = 20240817


def sg_lift(s, p, sigma, level):
    E0 = tr.symmetric_seed(s, p)
    rho = tr.WeightVector.constant(sigma, s.alphabet_size)
    return tr.lift(s, E0, rho, level, k=0)


# ---------------------------------------------------------------------------
# 1. classical gasket eigenvalue


def test_sg22_p2_eigenvalue_and_sigma(sg22):
    t0 = time.monotonic()
    E0 = tr.symmetric_seed(sg22, 2.0)
    lam = tr.eigenvalue(sg22, E0, tr.WeightVector.constant(1.0, 3)).lambda_

    # independent Schur-complement oracle on the level-1 graph Laplacian
    big = tr.lift(sg22, E0, tr.WeightVector.constant(1.0, 3), 1, k=0)
    n = len(big.vertices)
    L = np.zeros((n, n))
    for (x, y, c) in big.edges:
        i, j = big.index(x), big.index(y)
        L[i, i] += c
        L[j, j] += c
        L[i, j] -= c
        L[j, i] -= c
    bidx = [big.index(v) for v in st.refine(sg22, 0).vertices]
    rest = [i for i in range(n) if i not in bidx]
    S = L[np.ix_(bidx, bidx)] - L[np.ix_(bidx, rest)] @ np.linalg.solve(
        L[np.ix_(rest, rest)], L[np.ix_(rest, bidx)]
    )
    u = np.array([1.0, 0.0, 0.0])
    oracle = float(u @ S @ u) / E0.eval(u)

    assert oracle == pytest.approx(0.6, abs=1e-12)
    assert lam == pytest.approx(oracle, abs=1e-8)
    sigma = tr.self_similar_weight(sg22, E0)["sigma"]
    assert sigma == pytest.approx(5.0 / 3.0, abs=1e-8)
    assert time.monotonic() - t0 < 5.0


# ---------------------------------------------------------------------------
# 2. strict p-walk-dimension inequality


def test_walk_dimension_strictly_exceeds_p(sg22, sg23):
    t0 = time.monotonic()
    for s, depth in ((sg22, 5), (sg23, 3)):
        for p in (1.5, 2.0, 3.0, 4.0):
            out = hg.walkdim_strict_check(s, p, depth=depth)
            assert out["margin"] > 0.01, (s.name, p, out)
            assert out["nonharmonic_residual"] > 1e-3, (s.name, p, out)
            assert out["strict"]
    assert time.monotonic() - t0 < 120.0


# ---------------------------------------------------------------------------
# 3. weight monotonicity


def test_sigma_root_nondecreasing(sg22):
    grid = (1.5, 2.0, 2.5, 3.0, 4.0)
    roots = []
    for p in grid:
        E0 = tr.symmetric_seed(sg22, p)
        sigma = tr.self_similar_weight(sg22, E0)["sigma"]
        roots.append(sigma ** (1.0 / (p - 1.0)))
    assert (np.diff(roots) >= -1e-6).all(), roots


# ---------------------------------------------------------------------------
# 4. metric axioms at level 4 + sharpness of the exponent


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_level4_triangle_inequality(sg22, p, sg22_sigma):
    big = sg_lift(sg22, p, sg22_sigma[p], 4)
    mat = rs.resistance_matrix(big, level=4)
    assert mat.triangle_violation() <= 1e-9


def test_metric_exponent_sharpness():
    w = rs.sharpness_witness(6, 3.0, 1.1 / (3.0 - 1.0))
    assert w is not None and w["violation"] > 0


# ---------------------------------------------------------------------------
# 5. closed-form path resistances


def test_path_resistance_series_law():
    for p in (1.5, 2.0, 3.0):
        for n in range(2, 9):
            r = rs.resistance(en.path_form(n, p), 0, n)
            assert r == pytest.approx(float(n) ** (p - 1.0), rel=1e-10)


# ---------------------------------------------------------------------------
# 6. randomized inequality suites (1000 samples per family)


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_inequality_suites(sg22, p, sg22_sigma):
    t0 = time.monotonic()
    sigma = sg22_sigma[p]
    forms = [sg_lift(sg22, p, sigma, level) for level in (1, 2, 3)]
    traced = tr.trace(forms[2], st.refine(sg22, 1).vertices)
    rng = np.random.default_rng(SEED)
    tol = 1e-9

    # (GC)_p over the full catalog
    for cmap in en.catalog(p):
        for form, n_samp in ((forms[1], 1000), (traced, 60)):
            m = len(form.vertices)
            samples = [rng.standard_normal((cmap.n1, m)) for _ in range(n_samp)]
            rep = en.gc_check(form, cmap, samples, tol=tol)
            assert rep.passed, (cmap.kind, rep.worst_slack)

    # Clarkson (both branches via the p parametrization), improved Clarkson,
    # strong subadditivity, Hoelder bound, derivative linearity/homogeneity
    for i in range(1000):
        form = forms[i % 3]
        m = len(form.vertices)
        f = rng.standard_normal(m)
        g = rng.standard_normal(m)
        h = rng.standard_normal(m)
        rep = en.clarkson_check(form, f, g, tol=tol)
        assert rep.slack >= -tol
        assert rep.improved_slack >= -tol
        ssa = (form.eval(np.minimum(f, g)) + form.eval(np.maximum(f, g))
               - form.eval(f) - form.eval(g))
        assert ssa <= tol * max(1.0, form.eval(f) + form.eval(g))
        assert en.holder_bound_check(form, f, g, tol=tol).passed
        a = float(rng.uniform(-2.0, 2.0))
        lin = form.two_variable(f, a * g + h) - (
            a * form.two_variable(f, g) + form.two_variable(f, h)
        )
        scale = max(1.0, abs(form.two_variable(f, g)), abs(form.two_variable(f, h)))
        assert abs(lin) <= tol * scale
        hom = form.two_variable(a * f, g) - np.sign(a) * abs(a) ** (p - 1.0) \
            * form.two_variable(f, g)
        assert abs(hom) <= tol * scale * (1.0 + abs(a) ** (p - 1.0))

    # the same algebraic families on the traced form (solver-backed evals)
    for _ in range(60):
        m = len(traced.vertices)
        f = rng.standard_normal(m)
        g = rng.standard_normal(m)
        rep = en.clarkson_check(traced, f, g, tol=tol)
        assert rep.slack >= -tol and rep.improved_slack >= -tol
        assert en.holder_bound_check(traced, f, g, tol=tol).passed

    # comparison and maximum principles on the level-2 lift
    form = forms[1]
    b = st.refine(sg22, 0).vertices
    for _ in range(1000):
        lo = rng.uniform(-1.0, 1.0, size=3)
        hi = lo + rng.uniform(0.0, 1.0, size=3)
        hu = sv.harmonic_extension(sv.BoundaryProblem(form, b, lo)).solution
        hv = sv.harmonic_extension(sv.BoundaryProblem(form, b, hi)).solution
        assert (hu <= hv + 1e-9).all()
        assert hu.min() >= lo.min() - 1e-9 and hu.max() <= lo.max() + 1e-9
        assert hv.min() >= hi.min() - 1e-9 and hv.max() <= hi.max() + 1e-9

    # Hoelder regularity of harmonic functions, precomputed resistances
    mat = rs.resistance_matrix(form)
    vidx = {v: i for i, v in enumerate(mat.vertices)}
    RxB = {
        x: rs.point_to_set_resistance(form, x, tuple(v for v in b if v != x))
        if x not in b
        else None
        for x in form.vertices
    }
    expo = 1.0 / (p - 1.0)
    for _ in range(1000):
        vals = rng.uniform(-1.0, 1.0, size=3)
        hsol = sv.harmonic_extension(sv.BoundaryProblem(form, b, vals)).solution
        osc = vals.max() - vals.min()
        for x in form.vertices:
            if x in b:
                continue
            rB = RxB[x]
            for y in form.vertices:
                if y == x:
                    continue
                rhs = (mat.values[vidx[x], vidx[y]] / rB) ** expo * osc
                lhs = abs(hsol[form.index(x)] - hsol[form.index(y)])
                assert lhs <= rhs + 1e-9 * max(1.0, rhs)

    assert time.monotonic() - t0 < 300.0


# ---------------------------------------------------------------------------
# 7. finite-difference consistency of the derivative form


def test_difference_quotient_converges(sg22):
    rng = np.random.default_rng(SEED)
    for p in (2.0, 2.5, 3.0, 4.0):
        form = sg_lift(sg22, p, 1.0, 1)
        m = len(form.vertices)
        errs = {1e-3: [], 1e-4: []}
        for _ in range(100):
            f = rng.standard_normal(m)
            g = rng.standard_normal(m)
            exact = p * form.two_variable(f, g)
            for t in errs:
                fd = (form.eval(f + t * g) - form.eval(f - t * g)) / (2.0 * t)
                errs[t].append(abs(fd - exact))
        coarse = float(np.mean(errs[1e-3]))
        fine = float(np.mean(errs[1e-4]))
        if p == 2.0:
            # the energy is quadratic: both quotients are exact to roundoff
            assert coarse < 1e-8 and fine < 1e-7
        else:
            assert coarse >= 8.0 * fine, (p, coarse, fine)


# ---------------------------------------------------------------------------
# 8. self-similar decomposition and measures


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_compatible_sequence_identity(sg22, p, sg22_sigma):
    E0 = tr.symmetric_seed(sg22, p)
    rho = tr.WeightVector.constant(sg22_sigma[p], 3)
    out = tr.inductive_limit_check(sg22, E0, rho, levels=2, rng=SEED)
    assert out["compat_worst_rel_error"] <= 1e-9


@pytest.mark.parametrize("p", [2.0, 3.0])
def test_measure_mass_additivity_and_cell_bounds(sg22, p, sg22_sigma):
    rng = np.random.default_rng(SEED)
    big = sg_lift(sg22, p, sg22_sigma[p], 4)
    rho = big.lift_info[2]
    f = rng.standard_normal(len(big.vertices))
    total_energy = big.eval(f)
    mu1 = ms.cell_measure(sg22, big, rho, f, 1)
    mu2 = ms.cell_measure(sg22, big, rho, f, 2)
    assert mu1.total == pytest.approx(total_energy, rel=1e-12)
    assert mu2.total == pytest.approx(total_energy, rel=1e-12)
    for w in sg22.words(1):
        kids = sum(mu2.entries[w + (i,)] for i in range(3))
        assert kids == pytest.approx(mu1.entries[w], rel=1e-12, abs=1e-14)
    out = ms.cell_measure_bounds_check(sg22, big, rho, f, 2)
    assert out["passed"], out


# ---------------------------------------------------------------------------
# 9. two-sided cell contraction


@pytest.mark.parametrize("p", [2.0, 3.0])
def test_cell_contraction_stability(sg22, p, sg22_sigma):
    E0 = tr.symmetric_seed(sg22, p)
    rho = tr.WeightVector.constant(sg22_sigma[p], 3)
    out3 = rs.cell_contraction_check(sg22, E0, rho, level=3, rng=SEED,
                                     n_samples=1000)
    out4 = rs.cell_contraction_check(sg22, E0, rho, level=4, rng=SEED,
                                     n_samples=1000)
    for out in (out3, out4):
        assert out["upper_ok"], out
        assert out["c_lower"] >= 1e-3
    ratio = out3["c_lower"] / out4["c_lower"]
    assert 0.5 <= ratio <= 2.0, (out3["c_lower"], out4["c_lower"])


# ---------------------------------------------------------------------------
# 10. carpet conductance scaling


def test_carpet_sigma_scaling():
    t0 = time.monotonic()
    tree = hg.standard_carpet()
    est4 = hg.sigma_estimate(tree, 2.0, k_max=4, M=1)
    est3 = hg.sigma_estimate(tree, 2.0, k_max=3, M=1)
    assert (est4["sigma_seq"] > 0).all()
    assert 1.1 <= est4["sigma"] <= 1.4
    assert abs(est4["sigma"] - est3["sigma"]) <= 0.05 * est3["sigma"]
    assert est4["d_walk"] > 2.0
    assert time.monotonic() - t0 < 600.0


# ---------------------------------------------------------------------------
# 11. determinism of CLI outputs


def test_cli_outputs_byte_identical(tmp_path):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(
        'fractal = "SG(2,2)"\n'
        "p_grid = [1.5, 2.0]\n"
        "levels = [1, 2]\n"
        f"seed = {SEED}\n"
        "[options]\n"
        "samples = 20\n"
    )
    runner = CliRunner()
    outputs = {}
    for tag in ("a", "b"):
        dest = tmp_path / tag
        for cmd in ("walkdim", "props", "eigenform"):
            res = runner.invoke(
                cli_main, [cmd, "--config", str(cfg), "--out", str(dest)]
            )
            assert res.exit_code == 0, (cmd, res.output)
        outputs[tag] = {
            f.name: f.read_bytes() for f in dest.glob("*.csv")
        }
    assert outputs["a"].keys() == outputs["b"].keys()
    assert len(outputs["a"]) >= 3
    for name in outputs["a"]:
        assert outputs["a"][name] == outputs["b"][name], name
