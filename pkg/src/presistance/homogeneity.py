"""Conductance constants and p-walk dimensions on generalized carpets.

Cells of a generalized Sierpinski carpet GSC(D, l, S) at level n are words
over S; two cells touch iff their integer corner positions differ by at most
one in sup norm.  Discrete capacities between cell families give the
conductance constants E_{M,p,k}, whose geometric decay rate recovers sigma
and the p-walk dimension d_{w,p} = d_f + log sigma / log l.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.sparse
import scipy.sparse.linalg

from . import solver
from .energy import GraphForm


class HomogeneityError(ValueError):
    pass


def _octahedral_group(D: int):
    """Coordinate permutations combined with reflections i -> l-1-i."""
    out = []
    for perm in itertools.permutations(range(D)):
        for signs in itertools.product((False, True), repeat=D):
            out.append((perm, signs))
    return out


@dataclass(frozen=True)
class PartitionTree:
    """GSC(D, l, S): D dimensions, subdivision l, kept letters S (each a
    D-tuple of digits in range(l))."""

    D: int
    l: int
    letters: tuple

    def __post_init__(self):
        seen = set()
        for s in self.letters:
            if len(s) != self.D or any(not (0 <= c < self.l) for c in s):
                raise HomogeneityError(f"bad letter {s!r}")
            if s in seen:
                raise HomogeneityError(f"duplicate letter {s!r}")
            seen.add(s)

    # -- cell geometry ------------------------------------------------------
    def cells(self, n: int):
        return list(itertools.product(self.letters, repeat=n))

    def position(self, w) -> np.ndarray:
        """Integer corner of the cell's cube at scale l^{-|w|}."""
        pos = np.zeros(self.D, dtype=np.int64)
        for s in w:
            pos = pos * self.l + np.asarray(s, dtype=np.int64)
        return pos

    def touch(self, v, w) -> bool:
        if len(v) != len(w):
            raise HomogeneityError("cells must have equal level")
        return bool(np.abs(self.position(v) - self.position(w)).max() <= 1)

    def descendants(self, w, k: int):
        return [w + t for t in itertools.product(self.letters, repeat=k)]

    def neighborhood(self, w, M: int):
        """Gamma_M(w): cells within M touching steps of w at its level."""
        same = self.cells(len(w))
        frontier = {w}
        seen = {w}
        for _ in range(M):
            frontier = {
                v for v in same
                if v not in seen and any(self.touch(v, u) for u in frontier)
            }
            seen |= frontier
        return sorted(seen)

    def adjacency(self, cells) -> dict:
        """cell -> touching cells within the family, by hashing integer
        positions (each cell has at most 3^D - 1 neighbors)."""
        index = {}
        pos = {}
        for w in cells:
            t = tuple(self.position(w).tolist())
            index[t] = w
            pos[w] = t
        offsets = [
            off for off in itertools.product((-1, 0, 1), repeat=self.D)
            if any(off)
        ]
        out = {}
        for w in cells:
            base = pos[w]
            nbrs = []
            for off in offsets:
                v = index.get(tuple(b + o for b, o in zip(base, off)))
                if v is not None:
                    nbrs.append(v)
            out[w] = nbrs
        return out

    def horizontal_edges(self, cells):
        """E_n^* on a family of same-level cells (touching pairs)."""
        adj = self.adjacency(cells)
        out = []
        seen = set()
        for i, w in enumerate(cells):
            seen.add(w)
            for v in adj[w]:
                if v not in seen:
                    out.append((w, v))
        return out

    def measure(self, n: int) -> float:
        """Uniform cell mass at level n."""
        return float(len(self.letters)) ** (-n)

    def fractal_dimension(self) -> float:
        return np.log(len(self.letters)) / np.log(self.l)

    # -- symmetry -----------------------------------------------------------
    def _apply_sym(self, letter, sym):
        perm, signs = sym
        return tuple(
            (self.l - 1 - letter[perm[i]]) if signs[i] else letter[perm[i]]
            for i in range(self.D)
        )

    def symmetries(self):
        """The octahedral symmetries that preserve the letter set."""
        letters = set(self.letters)
        out = []
        for sym in _octahedral_group(self.D):
            if {self._apply_sym(s, sym) for s in letters} == letters:
                out.append(sym)
        return out

    def canonical_letter(self, letter):
        return min(self._apply_sym(letter, sym) for sym in self.symmetries())

    def canonical_word(self, w):
        """Orbit representative of a cell under the carpet's global
        symmetries (which act digitwise on the address)."""
        return min(
            tuple(self._apply_sym(s, sym) for s in w)
            for sym in self.symmetries()
        )

    # -- axioms -------------------------------------------------------------
    def validate(self):
        """Check the carpet axioms: symmetry, connectedness, non-diagonality,
        borders included."""
        letters = set(self.letters)
        if not letters:
            raise HomogeneityError("empty letter set")
        syms = self.symmetries()
        if len(syms) != len(_octahedral_group(self.D)):
            raise HomogeneityError("letter set is not octahedrally symmetric")
        # connectedness through faces at level 1
        cells1 = [(s,) for s in self.letters]
        adj = {c: [] for c in cells1}
        for (a, b) in self.horizontal_edges(cells1):
            if np.abs(self.position(a) - self.position(b)).sum() == 1:
                adj[a].append(b)
                adj[b].append(a)
        stack, seen = [cells1[0]], {cells1[0]}
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        if len(seen) != len(cells1):
            raise HomogeneityError("level-1 cells are not face-connected")
        # non-diagonality: touching cells must be joined by a face chain
        # through common neighbors
        for (a, b) in self.horizontal_edges(cells1):
            if np.abs(self.position(a) - self.position(b)).sum() == 1:
                continue
            mid = [
                c for c in cells1
                if c not in (a, b) and self.touch(c, a) and self.touch(c, b)
            ]
            ok = any(
                np.abs(self.position(c) - self.position(a)).sum() == 1
                and np.abs(self.position(c) - self.position(b)).sum() == 1
                for c in mid
            ) or any(
                np.abs(self.position(c) - self.position(a)).sum() == 1
                and np.abs(self.position(d) - self.position(b)).sum() == 1
                and np.abs(self.position(c) - self.position(d)).sum() == 1
                for c in mid for d in mid if c != d
            )
            if not ok:
                raise HomogeneityError(
                    f"non-diagonality fails for cells {a}, {b}"
                )
        # borders included: the full bottom edge row of letters is present
        for i in range(self.l):
            if (i,) + (0,) * (self.D - 1) not in letters:
                raise HomogeneityError("borders-included axiom fails")
        return True


@dataclass(frozen=True)
class StructureTree:
    """Partition tree of a p.c.f. structure: cells are words, two cells
    touch iff they share a vertex.  Provides the same family interface as
    the carpet tree, so the capacity machinery applies unchanged."""

    structure: object

    def cells(self, n: int):
        return self.structure.words(n)

    def descendants(self, w, k: int):
        letters = range(self.structure.alphabet_size)
        return [tuple(w) + t for t in itertools.product(letters, repeat=k)]

    def adjacency(self, cells) -> dict:
        from . import structure as st

        cells = [tuple(c) for c in cells]
        levels = {len(c) for c in cells}
        if len(levels) != 1:
            raise HomogeneityError("cells must share a level")
        g = st.refine(self.structure, levels.pop())
        by_vertex: dict = {}
        for w in cells:
            for x in g.cells[w]:
                by_vertex.setdefault(x, []).append(w)
        out = {w: set() for w in cells}
        for members in by_vertex.values():
            for w in members:
                out[w].update(v for v in members if v != w)
        return {w: sorted(nbrs) for w, nbrs in out.items()}

    def horizontal_edges(self, cells):
        adj = self.adjacency(cells)
        out = []
        seen = set()
        for w in cells:
            seen.add(tuple(w))
            for v in adj[tuple(w)]:
                if v not in seen:
                    out.append((tuple(w), v))
        return out

    def neighborhood(self, w, M: int):
        w = tuple(w)
        adj = self.adjacency(self.cells(len(w)))
        frontier = {w}
        seen = {w}
        for _ in range(M):
            frontier = {v for u in frontier for v in adj[u] if v not in seen}
            seen |= frontier
        return sorted(seen)

    def measure(self, n: int) -> float:
        return float(self.structure.alphabet_size) ** (-n)

    def fractal_dimension(self) -> float:
        return np.log(self.structure.alphabet_size) / np.log(self.l)

    @property
    def l(self) -> float:
        return 1.0 / self.structure.letter_scale

    def canonical_word(self, w):
        return tuple(w)


def standard_carpet() -> PartitionTree:
    """GSC(2, 3, S) with the center removed."""
    letters = tuple(
        s for s in itertools.product(range(3), repeat=2) if s != (1, 1)
    )
    return PartitionTree(2, 3, letters)


def interval_tree(l: int = 3) -> PartitionTree:
    """GSC(1, l, full): the unit interval, for closed-form capacity oracles."""
    return PartitionTree(1, l, tuple((i,) for i in range(l)))


def capacity(tree: PartitionTree, p: float, A0, A1, A, tol: float = 1e-10) -> dict:
    """cap_p(A0, A1; A) = min E(f) over f on A with f = 0 on A0, 1 on A1,
    unit conductances on the touching-pair edges of A.

    Only edges meeting a free cell matter (plate-plate edges inside one
    family cost nothing), so the graph is pruned to the free cells, their
    plate neighbors, and the direct A0-A1 contacts.

    Returns {"value", "disconnected"}; disconnected means no component of A
    joins A0 to A1 (capacity 0)."""
    A = list(A)
    A0 = set(A0)
    A1 = set(A1)
    if not A0 or not A1:
        raise HomogeneityError("both plate families must be nonempty")
    if A0 & A1:
        raise HomogeneityError("plate families must be disjoint")
    aset = set(A)
    if not (A0 <= aset and A1 <= aset):
        raise HomogeneityError("plates must lie inside the domain family")
    free = [c for c in A if c not in A0 and c not in A1]
    neighbors = tree.adjacency(A)
    # direct contacts between the plate families short the unit difference
    total = 0.0
    connected = False
    for a in A0:
        for b in neighbors[a]:
            if b in A1:
                total += 1.0
                connected = True
    if not free:
        return {"value": total, "disconnected": not connected}
    # connected components of the free family
    parent = {c: c for c in free}

    def find(c):
        while parent[c] != c:
            parent[c] = parent[parent[c]]
            c = parent[c]
        return c

    fset = set(free)
    for c in free:
        for d in neighbors[c]:
            if d in fset:
                ra, rb = find(c), find(d)
                if ra != rb:
                    parent[ra] = rb
    comps = {}
    for c in free:
        comps.setdefault(find(c), []).append(c)
    for comp in comps.values():
        plates0 = set()
        plates1 = set()
        edges = []
        for c in comp:
            for d in neighbors[c]:
                if d in fset:
                    if str(c) < str(d):
                        edges.append((c, d, 1.0))
                elif d in A0:
                    plates0.add(d)
                    edges.append((c, d, 1.0))
                elif d in A1:
                    plates1.add(d)
                    edges.append((c, d, 1.0))
        if not plates0 or not plates1:
            continue
        connected = True
        b0 = sorted(plates0)
        b1 = sorted(plates1)
        form = GraphForm(p, comp + b0 + b1, edges)
        vals = np.concatenate([np.zeros(len(b0)), np.ones(len(b1))])
        rep = solver.harmonic_extension(
            solver.BoundaryProblem(form, tuple(b0 + b1), vals), tol=tol
        )
        total += rep.energy
    return {"value": total, "disconnected": not connected}


def conductance_constant(tree: PartitionTree, p: float, k: int, M: int = 1,
                         words=None, base_levels: int = 1,
                         tol: float = 1e-10) -> dict:
    """E_{M,p,k}: the largest capacity, over base cells w, between the level
    k refinement of w and that of the complement of its M-neighborhood,
    within the refinement of the whole level.

    The sup runs over the cells of levels 1..base_levels, deduplicated by
    the tree's symmetries (one capacity problem per orbit)."""
    if words is None:
        reps = set()
        for n in range(1, base_levels + 1):
            reps.update(tree.canonical_word(w) for w in tree.cells(n))
        words = sorted(reps)
    best = -np.inf
    table = {}
    for w in words:
        n = len(w)
        allc = tree.cells(n)
        gamma = set(tree.neighborhood(w, M))
        far = [v for v in allc if v not in gamma]
        if not far:
            # the M-neighborhood swallows the level (too shallow a base
            # cell); the sup ranges over the remaining words
            continue
        A0 = set(tree.descendants(w, k))
        A1 = set().union(*(set(tree.descendants(v, k)) for v in far))
        A = [c for c in tree.cells(n + k)]
        cap = capacity(tree, p, A0, A1, A, tol=tol)
        table[w] = cap["value"]
        best = max(best, cap["value"])
    if not table:
        raise HomogeneityError(
            f"Gamma_{M} swallows the whole level for every base cell; "
            "use deeper base_levels"
        )
    return {"value": best, "table": table}


def sigma_estimate(tree: PartitionTree, p: float, k_max: int, M: int = 1,
                   base_levels: int = 1, tol: float = 1e-10) -> dict:
    """sigma from the decay E_{M,p,k} ~ C sigma^{-k}: per-k values
    sigmaSeq_k = E_k^{-1/k}, extrapolated by Richardson in h = 1/k on
    log sigmaSeq (polynomial through the last three points evaluated at
    h = 0; under exact geometric decay log sigmaSeq is linear in h and the
    extrapolation is exact).

    Also reports tau = log sigma / log l, d_f, and d_{w,p} = d_f + tau."""
    if k_max < 2:
        raise HomogeneityError("need k_max >= 2")
    Es = []
    for k in range(1, k_max + 1):
        Es.append(
            conductance_constant(
                tree, p, k, M=M, base_levels=base_levels, tol=tol
            )["value"]
        )
    Es = np.array(Es)
    if np.any(Es <= 0):
        raise HomogeneityError(f"conductance sequence not positive: {Es}")
    seq = Es ** (-1.0 / np.arange(1, k_max + 1))
    npts = min(3, k_max)
    h = 1.0 / np.arange(k_max - npts + 1, k_max + 1, dtype=float)
    y = np.log(seq[-npts:])
    coeffs = np.polyfit(h, y, npts - 1)
    sigma = float(np.exp(np.polyval(coeffs, 0.0)))
    tau = np.log(sigma) / np.log(tree.l)
    d_f = tree.fractal_dimension()
    return {
        "E": Es,
        "sigma_seq": seq,
        "sigma": sigma,
        "tau": float(tau),
        "d_f": float(d_f),
        "d_walk": float(d_f + tau),
    }


def _disparity_forms(tree: PartitionTree, p: float, k: int, A):
    """The averaging operator and the two edge sets for the neighbor
    disparity constant on the family A."""
    A = list(A)
    fine = [c for w in A for c in tree.descendants(w, k)]
    fidx = {c: i for i, c in enumerate(fine)}
    nA, nF = len(A), len(fine)
    B = np.zeros((nA, nF))
    for i, w in enumerate(A):
        desc = tree.descendants(w, k)
        for c in desc:
            B[i, fidx[c]] = 1.0 / len(desc)
    coarse_edges = [(A.index(a), A.index(b)) for (a, b) in tree.horizontal_edges(A)]
    fine_edges = [(fidx[a], fidx[b]) for (a, b) in tree.horizontal_edges(fine)]
    return B, coarse_edges, fine_edges


def neighbor_disparity(tree: PartitionTree, p: float, k: int, A,
                       n_restarts: int = 16, rng=None) -> dict:
    """lambda_{p,k}(A) = sup_f E_{p,A}(P f) / E_{p,S^k A}(f) with P the
    cellwise averaging of f against the uniform measure.

    p = 2 is solved exactly as a generalized eigenproblem; p != 2 reports a
    lower bound from multistart maximization."""
    A = list(A)
    if len(A) == 1 or k == 0:
        return {"value": 1.0, "exact": True, "degenerate": True}
    B, ce, fe = _disparity_forms(tree, p, k, A)
    if not ce:
        return {"value": 0.0, "exact": True, "degenerate": True}
    nF = B.shape[1]

    def e_num(f):
        Pf = B @ f
        return sum(abs(Pf[i] - Pf[j]) ** p for (i, j) in ce)

    def e_den(f):
        return sum(abs(f[i] - f[j]) ** p for (i, j) in fe)

    if p == 2:
        num = np.zeros((nF, nF))
        for (i, j) in ce:
            d = B[i] - B[j]
            num += np.outer(d, d)
        den = np.zeros((nF, nF))
        for (i, j) in fe:
            den[i, i] += 1.0
            den[j, j] += 1.0
            den[i, j] -= 1.0
            den[j, i] -= 1.0
        # rank-one shift makes the denominator definite; constants sit in
        # the kernel of the numerator so the top eigenvalue is unaffected
        den = den + np.ones((nF, nF)) / nF
        vals = scipy.linalg.eigh(num, den, eigvals_only=True)
        return {"value": float(vals[-1]), "exact": True, "degenerate": False}

    rng = np.random.default_rng(rng)
    best = 0.0
    for _ in range(n_restarts):
        f0 = rng.standard_normal(nF)

        def neg_log_ratio(f):
            d = e_den(f)
            n = e_num(f)
            if d <= 1e-300 or n <= 1e-300:
                return 50.0
            return -(np.log(n) - np.log(d))

        res = scipy.optimize.minimize(neg_log_ratio, f0, method="Nelder-Mead",
                                      options={"maxiter": 4000, "fatol": 1e-12})
        f = res.x
        d = e_den(f)
        if d > 0:
            best = max(best, e_num(f) / d)
    return {"value": float(best), "exact": False, "degenerate": False}


def walkdim_strict_check(structure, p: float, depth: int = 6,
                         tol: float = 1e-8) -> dict:
    """Strict inequality d_{w,p} > p via the coordinate function.

    With u the first coordinate restricted to V_0 and V_1, the level-1 trace
    of the self-similar energy satisfies E|V1(u) = sigma #S l^{-p} E|V0(u),
    so log_l(E|V1(u)/E|V0(u)) = log_l(sigma #S) - p = d_{w,p} - p (in the
    resistance-scaled clock).  Positivity of the margin plus a
    non-harmonicity witness (u's level-1 restriction is not energy minimal)
    give strictness."""
    from . import structure as st
    from . import trace as tr
    from .energy import TracedForm

    E0 = tr.symmetric_seed(structure, p)
    ss = tr.self_similar_weight(structure, E0)
    sigma = ss["sigma"]
    rho = tr.WeightVector.constant(sigma, structure.alphabet_size)
    L = tr.lift(structure, E0, rho, depth, k=0)
    g = st.refine(structure, depth)
    g0 = st.refine(structure, 0)
    g1 = st.refine(structure, 1)
    u0 = np.array([g0.coords(v)[0] for v in g0.vertices])
    u1 = np.array([g1.coords(v)[0] for v in g1.vertices])
    t0 = TracedForm(L, g0.vertices)
    t1 = TracedForm(L, g1.vertices)
    e0 = t0.eval(u0)
    e1 = t1.eval(u1)
    n_letters = structure.alphabet_size
    scale = structure.letter_scale
    margin = float(np.log(e1 / e0) / np.log(1.0 / scale))
    predicted = float(np.log(sigma * n_letters) / np.log(1.0 / scale) - p)
    # non-harmonicity witness: the level-1 coordinate values are not the
    # energy-minimal extension of the boundary values
    residual = 0.0
    for x in g1.interior():
        ind = np.array([1.0 if v == x else 0.0 for v in g1.vertices])
        residual = max(residual, abs(t1.two_variable(u1, ind)))
    return {
        "margin": margin,
        "predicted_margin": predicted,
        "strict": margin > tol and residual > tol,
        "nonharmonic_residual": float(residual),
        "sigma": sigma,
    }
