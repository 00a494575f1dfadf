"""Carpet partition trees, capacities, conductance constants, and the
p-walk dimension machinery."""

import numpy as np
import pytest

from presistance import homogeneity as hg


@pytest.fixture(scope="module")
def carpet():
    return hg.standard_carpet()


def test_carpet_has_eight_letters(carpet):
    assert len(carpet.letters) == 8
    assert (1, 1) not in carpet.letters


def test_carpet_touching_pairs(carpet):
    # 8 side contacts + 4 diagonal contacts around the removed center
    edges = carpet.horizontal_edges([(s,) for s in carpet.letters])
    assert len(edges) == 12
    sides = [
        (a, b) for (a, b) in edges
        if np.abs(carpet.position(a) - carpet.position(b)).sum() == 1
    ]
    assert len(sides) == 8


def test_carpet_validate(carpet):
    assert carpet.validate()


def test_validate_rejects_asymmetric():
    # dropping a corner instead of the center breaks octahedral symmetry
    letters = tuple(
        s for s in ((i, j) for i in range(3) for j in range(3)) if s != (0, 0)
    )
    with pytest.raises(hg.HomogeneityError, match="symmetric"):
        hg.PartitionTree(2, 3, letters).validate()


def test_validate_rejects_missing_border():
    # keep only the two diagonals: borders-included fails (or earlier axioms)
    letters = ((0, 0), (1, 1), (2, 2), (0, 2), (2, 0))
    with pytest.raises(hg.HomogeneityError):
        hg.PartitionTree(2, 3, letters).validate()


def test_validate_rejects_disconnected():
    letters = ((0, 0), (2, 2))
    with pytest.raises(hg.HomogeneityError):
        hg.PartitionTree(2, 3, letters).validate()


def test_position_and_touch(carpet):
    assert carpet.touch(((0, 0),), ((0, 1),))
    assert carpet.touch(((0, 0),), ((1, 0),))
    assert not carpet.touch(((0, 0),), ((0, 2),))


def test_neighborhood_of_corner(carpet):
    nb = carpet.neighborhood(((0, 0),), 1)
    # corner cell: itself + 2 side neighbors (the diagonal one is the
    # removed center)
    assert len(nb) == 3


def test_fractal_dimension(carpet):
    assert carpet.fractal_dimension() == pytest.approx(np.log(8) / np.log(3))


def test_canonical_word_collapses_orbits(carpet):
    # the four corner cells form one orbit
    corners = [((0, 0),), ((0, 2),), ((2, 0),), ((2, 2),)]
    reps = {carpet.canonical_word(w) for w in corners}
    assert len(reps) == 1


# ---------------------------------------------------------------------------
# capacity oracles on the interval


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_capacity_two_adjacent_cells(p):
    tree = hg.interval_tree(3)
    A = [(s,) for s in tree.letters]
    # direct contact between the plates: one unit edge, capacity 1
    out = hg.capacity(tree, p, {((0,),)}, {((1,),)}, [((s,),) for s in range(3)])
    assert out["value"] == pytest.approx(1.0)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_capacity_series_cells(p):
    # plates (0) and (2) joined through the free cell (1): two unit edges in
    # series, capacity 2^{1-p}
    tree = hg.interval_tree(3)
    out = hg.capacity(tree, p, {((0,),)}, {((2,),)}, [((s,),) for s in range(3)])
    assert out["value"] == pytest.approx(2.0 ** (1.0 - p), rel=1e-8)


def test_capacity_disconnected_is_zero():
    tree = hg.interval_tree(5)
    cells = [((s,),) for s in range(5)]
    # remove the middle cell from the domain: no path remains
    dom = [c for c in cells if c != ((2,),)]
    out = hg.capacity(tree, 2.0, {((0,),)}, {((4,),)}, dom)
    assert out["value"] == 0.0
    assert out["disconnected"]


def test_capacity_monotone_in_domain():
    tree = hg.standard_carpet()
    cells = [(s,) for s in tree.letters]
    A0 = {((0, 0),)}
    A1 = {((2, 2),)}
    full = hg.capacity(tree, 2.0, A0, A1, cells)["value"]
    smaller = hg.capacity(
        tree, 2.0, A0, A1, [c for c in cells if c != ((1, 0),)]
    )["value"]
    assert smaller <= full + 1e-12


def test_capacity_validates_plates():
    tree = hg.interval_tree(3)
    cells = [((s,),) for s in range(3)]
    with pytest.raises(hg.HomogeneityError):
        hg.capacity(tree, 2.0, set(), {((1,),)}, cells)
    with pytest.raises(hg.HomogeneityError):
        hg.capacity(tree, 2.0, {((0,),)}, {((0,),)}, cells)


# ---------------------------------------------------------------------------
# conductance constants and sigma


def test_interval_sigma_p2():
    # on the interval E_k decays like sigma^{-k} with sigma = l^{p-1} = 3
    tree = hg.interval_tree(3)
    out = hg.sigma_estimate(tree, 2.0, k_max=4)
    assert out["sigma"] == pytest.approx(3.0, rel=5e-2)
    assert out["d_walk"] == pytest.approx(2.0, abs=0.1)


def test_conductance_sequence_positive_sigma_seq_increasing(carpet):
    vals = np.array(
        [hg.conductance_constant(carpet, 2.0, k)["value"] for k in (1, 2, 3)]
    )
    assert (vals > 0).all()
    seq = vals ** (-1.0 / np.arange(1, 4))
    # per-k sigma estimates climb toward the limit
    assert (np.diff(seq) > 0).all()


def test_conductance_determinism(carpet):
    a = hg.conductance_constant(carpet, 2.0, 2)
    b = hg.conductance_constant(carpet, 2.0, 2)
    assert a["value"] == b["value"]


def test_carpet_sigma_p2_in_range(carpet):
    out = hg.sigma_estimate(carpet, 2.0, k_max=3)
    assert 1.1 <= out["sigma"] <= 1.4
    assert out["d_walk"] > 2.0


def test_carpet_dimension_monotonicity(carpet):
    # d_{w,p}/p nonincreasing and sigma^{1/(p-1)} nondecreasing in p
    outs = {p: hg.sigma_estimate(carpet, p, k_max=3) for p in (1.5, 2.0, 3.0)}
    ratios = [outs[p]["d_walk"] / p for p in (1.5, 2.0, 3.0)]
    assert ratios[0] >= ratios[1] - 1e-6 >= ratios[2] - 2e-6
    roots = [outs[p]["sigma"] ** (1.0 / (p - 1.0)) for p in (1.5, 2.0, 3.0)]
    assert roots[0] <= roots[1] + 1e-6 <= roots[2] + 2e-6


def test_sigma_estimate_needs_two_points(carpet):
    with pytest.raises(hg.HomogeneityError):
        hg.sigma_estimate(carpet, 2.0, k_max=1)


# ---------------------------------------------------------------------------
# neighbor disparity


def test_disparity_degenerate_cases(carpet):
    cells = [(s,) for s in carpet.letters]
    assert hg.neighbor_disparity(carpet, 2.0, 0, cells)["degenerate"]
    assert hg.neighbor_disparity(carpet, 2.0, 1, [cells[0]])["value"] == 1.0


def test_disparity_two_cells_p2_oracle():
    # two interval cells, k = 1: the fine family is a 6-path, the coarse
    # numerator is (mean of first triple - mean of second triple)^2, so the
    # value is a' L^+ a for the path Laplacian -- computed independently
    tree = hg.interval_tree(3)
    A = [((0,),), ((1,),)]
    out = hg.neighbor_disparity(tree, 2.0, 1, A)
    assert out["exact"]
    L = np.zeros((6, 6))
    for i in range(5):
        L[i, i] += 1.0
        L[i + 1, i + 1] += 1.0
        L[i, i + 1] -= 1.0
        L[i + 1, i] -= 1.0
    a = np.array([1, 1, 1, -1, -1, -1]) / 3.0
    expected = float(a @ np.linalg.pinv(L) @ a)
    assert out["value"] == pytest.approx(expected, rel=1e-10)


def test_disparity_lower_bound_below_exact():
    tree = hg.interval_tree(3)
    A = [((0,),), ((1,),)]
    exact = hg.neighbor_disparity(tree, 2.0, 1, A)["value"]
    # p -> 2 limit of the multistart bound must not exceed the exact value
    est = hg.neighbor_disparity(tree, 2.0 + 1e-9, 1, A, rng=0)["value"]
    assert est <= exact + 1e-6
    assert est >= 0.5 * exact  # the multistart should find most of it


def test_disparity_carpet_finite_positive(carpet):
    cells = [(s,) for s in carpet.letters]
    out = hg.neighbor_disparity(carpet, 2.0, 1, cells)
    assert out["exact"]
    assert 0.0 < out["value"] < 10.0


# ---------------------------------------------------------------------------
# strict walk-dimension inequality on p.c.f. structures


def test_walkdim_strict_sg22(sg22):
    out = hg.walkdim_strict_check(sg22, 2.0, depth=5)
    assert out["strict"]
    # exact at p = 2: d_{w,2} - 2 = log2 5 - 2
    assert out["margin"] == pytest.approx(np.log2(5.0) - 2.0, abs=1e-6)
    assert out["nonharmonic_residual"] > 1e-3


def test_walkdim_margin_matches_prediction(sg22):
    # sigma is only estimated for p != 2, so the two routes agree to ~1e-3
    out = hg.walkdim_strict_check(sg22, 3.0, depth=5)
    assert out["margin"] == pytest.approx(out["predicted_margin"], abs=1e-3)
    assert out["margin"] > 0.01


def test_structure_tree_interface(sg22):
    tree = hg.StructureTree(sg22)
    cells = tree.cells(1)
    assert len(cells) == 3
    edges = tree.horizontal_edges(cells)
    assert len(edges) == 3  # the three level-1 cells pairwise share midpoints
    assert tree.l == pytest.approx(2.0)
