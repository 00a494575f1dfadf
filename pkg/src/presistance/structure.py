"""p.c.f. self-similar structures and their level-n vertex graphs.

A structure is described combinatorially: an alphabet S of cell labels, a
boundary vertex list V0, and a gluing table saying which images F_i(q_a),
F_j(q_b) coincide in the level-1 picture.  Level-n vertices are equivalence
classes of (word, boundary-index) pairs under the prefix-propagated gluing
closure; the canonical representative of a class is its lexicographically
least pair, which makes vertex identifiers deterministic and makes the
V_{n-1} -> V_n embedding literal (append the fixing letter).

Convention: boundary vertex with index a is the fixed point of letter a,
i.e. the alphabet must be ordered with the "corner" maps first.  The
builtin builders follow this ordering.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

Word = tuple[int, ...]


class StructureError(ValueError):
    """Raised for invalid structures or refinement requests."""


class _UnionFind:
    def __init__(self):
        self.parent = {}

    def find(self, x):
        parent = self.parent
        root = x
        while parent.setdefault(root, root) != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def union(self, x, y):
        rx, ry = self.find(x), self.find(y)
        if rx != ry:
            # keep the lexicographically least representative as root
            if ry < rx:
                rx, ry = ry, rx
            self.parent[ry] = rx

    def classes(self):
        out = {}
        for x in self.parent:
            out.setdefault(self.find(x), []).append(x)
        return out


@dataclass(frozen=True)
class FractalStructure:
    """A validated p.c.f. self-similar structure (combinatorial data)."""

    alphabet_size: int
    boundary: tuple[str, ...]
    gluings: tuple[tuple[int, int, int, int], ...]
    symmetries: tuple[tuple[tuple[int, ...], tuple[int, ...]], ...] = ()
    contraction_ratio: float | None = None
    refinable: bool = True
    name: str = "custom"
    # optional geometric realization: F_i(x) = scale*x + offsets[i],
    # boundary point a at boundary_coords[a]
    boundary_coords: tuple[tuple[float, ...], ...] | None = None
    letter_offsets: tuple[tuple[float, ...], ...] | None = None
    letter_scale: float | None = None

    @property
    def n_boundary(self) -> int:
        return len(self.boundary)

    def words(self, n: int) -> list[Word]:
        if n == 0:
            return [()]
        return [w for w in itertools.product(range(self.alphabet_size), repeat=n)]

    def word_string(self, w: Word) -> str:
        sep = "" if self.alphabet_size <= 10 else "-"
        return sep.join(str(i) for i in w)

    def coords(self, w: Word, a: int) -> np.ndarray:
        """Geometric position of F_w(q_a); requires a realized structure."""
        if self.boundary_coords is None:
            raise StructureError("structure carries no geometric realization")
        x = np.asarray(self.boundary_coords[a], dtype=float)
        offs = np.asarray(self.letter_offsets, dtype=float)
        for i in reversed(w):
            x = offs[i] + self.letter_scale * x
        return x


@dataclass(frozen=True)
class LevelGraph:
    """Canonical vertex picture of V_n for a structure."""

    structure: FractalStructure
    level: int
    vertices: tuple[str, ...]
    cells: Mapping[Word, tuple[str, ...]]
    boundary: tuple[str, ...]
    # canonical (word, idx) pair behind each vertex id, and the full lookup
    pair_vertex: Mapping[tuple[Word, int], str] = field(repr=False, default=None)

    def index(self, vertex: str) -> int:
        return self._index[vertex]

    def __post_init__(self):
        object.__setattr__(self, "_index", {v: i for i, v in enumerate(self.vertices)})

    def vertex_of(self, w: Word, a: int) -> str:
        return self.pair_vertex[(tuple(w), a)]

    def coords(self, vertex: str) -> np.ndarray:
        w, a = self._canonical_pairs[vertex]
        return self.structure.coords(w, a)

    def interior(self) -> tuple[str, ...]:
        bset = set(self.boundary)
        return tuple(v for v in self.vertices if v not in bset)


_MAX_VERTEX_BUDGET = 2_000_000


def _vertex_id(structure: FractalStructure, w: Word, a: int) -> str:
    # strip trailing copies of the fixing letter so that a vertex first seen
    # at level k keeps the same identifier at every deeper level
    while w and w[-1] == a:
        w = w[:-1]
    if not w:
        return structure.boundary[a]
    return f"{structure.word_string(w)}/{structure.boundary[a]}"


def _level_classes(structure: FractalStructure, n: int) -> dict:
    """(word, idx) -> canonical (word, idx), for all pairs at level n."""
    cache = _CLASS_CACHE.setdefault(structure, {})
    if n in cache:
        return cache[n]
    if n == 0:
        out = {((), a): ((), a) for a in range(structure.n_boundary)}
        cache[0] = out
        return out
    prev = _level_classes(structure, n - 1)
    if (structure.alphabet_size**n) * structure.n_boundary > _MAX_VERTEX_BUDGET:
        raise StructureError(f"level {n} exceeds the vertex budget")
    uf = _UnionFind()
    for a in range(structure.n_boundary):
        for w in structure.words(n):
            uf.find((w, a))
    # new identifications inside each level-(n-1) cell
    for u in structure.words(n - 1):
        for (i, a, j, b) in structure.gluings:
            uf.union((u + (i,), a), (u + (j,), b))
    # identifications inherited from level n-1 via the fixed-point embedding
    groups = {}
    for pair, root in prev.items():
        groups.setdefault(root, []).append(pair)
    for members in groups.values():
        (w0, a0) = members[0]
        for (w, a) in members[1:]:
            uf.union((w0 + (a0,), a0), (w + (a,), a))
    out = {}
    for a in range(structure.n_boundary):
        for w in structure.words(n):
            out[(w, a)] = uf.find((w, a))
    cache[n] = out
    return out


_CLASS_CACHE: dict = {}
_GRAPH_CACHE: dict = {}


def refine(structure: FractalStructure, n: int) -> LevelGraph:
    """Canonical LevelGraph for V_n; identifiers stable across calls."""
    if n < 0:
        raise StructureError("level must be nonnegative")
    if n > 0 and not structure.refinable:
        raise StructureError(f"structure {structure.name!r} is not refinable")
    key = (structure, n)
    if key in _GRAPH_CACHE:
        return _GRAPH_CACHE[key]
    classes = _level_classes(structure, n)
    pair_vertex = {pair: _vertex_id(structure, *root) for pair, root in classes.items()}
    vertices = tuple(sorted(set(pair_vertex.values())))
    cells = {}
    for w in structure.words(n):
        cells[w] = tuple(pair_vertex[(w, a)] for a in range(structure.n_boundary))
    if n == 0:
        cells = {(): tuple(structure.boundary)}
    # boundary of V_n: the embedded V_0, i.e. q_a = F_{a...a}(q_a)
    boundary = tuple(pair_vertex[((a,) * n, a)] for a in range(structure.n_boundary))
    canon = {}
    for pair, root in classes.items():
        canon.setdefault(pair_vertex[pair], root)
    graph = LevelGraph(
        structure=structure,
        level=n,
        vertices=vertices,
        cells=cells,
        boundary=boundary,
        pair_vertex=pair_vertex,
    )
    object.__setattr__(graph, "_canonical_pairs", canon)
    _GRAPH_CACHE[key] = graph
    return graph


def cell_map(graph: LevelGraph, w: Word, u: np.ndarray) -> np.ndarray:
    """Pull back u on V_n to u . F_w on V_{n-|w|} (re-indexing by the cell)."""
    w = tuple(w)
    if len(w) > graph.level:
        raise StructureError("word longer than the graph level")
    u = np.asarray(u, dtype=float)
    if u.shape[0] != len(graph.vertices):
        raise StructureError("vector length does not match the vertex set")
    sub = refine(graph.structure, graph.level - len(w))
    out = np.empty(len(sub.vertices))
    for vertex in sub.vertices:
        v, b = sub._canonical_pairs[vertex]
        out[sub.index(vertex)] = u[graph.index(graph.vertex_of(w + v, b))]
    return out


def symmetry_vertex_map(graph: LevelGraph, g: Sequence[int], tau: Sequence[int]) -> dict:
    """vertex id -> vertex id action of the symmetry (g, tau_g) on V_n."""
    out = {}
    for vertex in graph.vertices:
        w, a = graph._canonical_pairs[vertex]
        wg = tuple(tau[i] for i in w)
        out[vertex] = graph.vertex_of(wg, g[a])
    return out


def validate(structure: FractalStructure, allow_multicell_boundary: bool = False) -> None:
    """Eagerly check all structure invariants; raise StructureError on failure."""
    S, B = structure.alphabet_size, structure.n_boundary
    if structure.refinable:
        if S < 2:
            raise StructureError("alphabet must have at least 2 letters")
        if B < 2:
            raise StructureError("need at least 2 boundary vertices")
        if B > S:
            raise StructureError(
                "boundary index must be a letter (fixed-point convention)"
            )
    if len(set(structure.boundary)) != B:
        raise StructureError("boundary vertex names must be distinct")
    for quad in structure.gluings:
        i, a, j, b = quad
        if not (0 <= i < S and 0 <= j < S and 0 <= a < B and 0 <= b < B):
            raise StructureError(f"gluing {quad} out of range")
        if (i, a) == (j, b):
            raise StructureError(f"gluing {quad} is trivial")
    if not structure.refinable:
        return
    classes = _level_classes(structure, 1)
    # no identification of two distinct V0 points
    roots_of_boundary = {}
    for a in range(B):
        root = classes[((a,), a)]
        if root in roots_of_boundary and roots_of_boundary[root] != a:
            raise StructureError(
                f"gluing closure identifies boundary vertices "
                f"{structure.boundary[roots_of_boundary[root]]} and {structure.boundary[a]}"
            )
        roots_of_boundary[root] = a
    # a V0 point sitting in more than one level-1 cell is suspicious
    if not allow_multicell_boundary:
        for a in range(B):
            root = classes[((a,), a)]
            letters = {w[0] for (w, _), r in classes.items() if r == root}
            if letters != {a}:
                raise StructureError(
                    f"boundary vertex {structure.boundary[a]} lies in cells "
                    f"{sorted(letters)}; pass allow_multicell_boundary=True to accept"
                )
    # level-1 cell graph must be connected
    uf = _UnionFind()
    for i in range(S):
        first = classes[((i,), 0)]
        for a in range(1, B):
            uf.union(first, classes[((i,), a)])
    roots = {uf.find(classes[((i,), a)]) for i in range(S) for a in range(B)}
    if len(roots) != 1:
        raise StructureError("level-1 identification graph is disconnected")
    # symmetry consistency: the induced action must respect the gluing closure
    for (g, tau) in structure.symmetries:
        if sorted(g) != list(range(B)) or sorted(tau) != list(range(S)):
            raise StructureError("symmetry entries must be permutations")
        for (i, a, j, b) in structure.gluings:
            if classes[((tau[i],), g[a])] != classes[((tau[j],), g[b])]:
                raise StructureError(
                    f"symmetry {g} breaks the gluing at cell pair ({i},{j})"
                )
        for a in range(B):
            if classes[((tau[a],), g[a])] != classes[((g[a],), g[a])]:
                raise StructureError(
                    f"symmetry {g} is inconsistent with the fixed point of cell {a}"
                )


# ----------------------------------------------------------------------------
# builders


def _sg_letters(D: int, l: int) -> list[tuple[int, ...]]:
    """Alphabet of SG(D,l): lattice points i with sum <= l-1, corners first."""
    all_pts = [
        pt
        for pt in itertools.product(range(l), repeat=D)
        if sum(pt) <= l - 1
    ]
    corners = [(0,) * D] + [
        tuple((l - 1) if k == j else 0 for k in range(D)) for j in range(D)
    ]
    rest = sorted(pt for pt in all_pts if pt not in corners)
    return corners + rest


def build_sierpinski_gasket(D: int, l: int) -> FractalStructure:
    """D-dimensional level-l gasket; full symmetric group on V0; ratio 1/l."""
    if D < 2 or l < 2:
        raise StructureError("gasket needs D >= 2 and l >= 2")
    letters = _sg_letters(D, l)
    S = len(letters)
    B = D + 1

    # barycentric key of F_s(q_a), exact integers summing to l
    def key(s: tuple[int, ...], a: int) -> tuple[int, ...]:
        bary = [l - 1 - sum(s)] + list(s)
        bary[a] += 1
        return tuple(bary)

    by_point: dict[tuple, list[tuple[int, int]]] = {}
    for si, s in enumerate(letters):
        for a in range(B):
            by_point.setdefault(key(s, a), []).append((si, a))
    gluings = []
    for members in by_point.values():
        first = members[0]
        for other in members[1:]:
            gluings.append((first[0], first[1], other[0], other[1]))
    gluings.sort()

    # full symmetric group on V0, acting on cells through barycentric labels
    bary_of = {
        si: tuple([l - 1 - sum(s)] + list(s)) for si, s in enumerate(letters)
    }
    letter_of_bary = {v: k for k, v in bary_of.items()}
    symmetries = []
    for g in itertools.permutations(range(B)):
        tau = []
        for si in range(S):
            bary = bary_of[si]
            permuted = tuple(bary[g.index(k)] for k in range(B))
            tau.append(letter_of_bary[permuted])
        symmetries.append((g, tuple(tau)))

    # geometric realization: q_0 at the origin, q_1..q_{D-1} in {x_1 = 0},
    # q_D with positive first coordinate (used by the first-coordinate tests)
    q = np.zeros((B, D))
    for k in range(1, D):
        q[k, k] = 1.0
    q[D, 0] = 1.0
    q[D, 1:] = 0.5
    offsets = []
    for s in letters:
        qs = sum(s[k] * q[k + 1] for k in range(D)) / l
        offsets.append(tuple(np.atleast_1d(qs)))

    st = FractalStructure(
        alphabet_size=S,
        boundary=tuple(f"q{a}" for a in range(B)),
        gluings=tuple(gluings),
        symmetries=tuple(symmetries),
        contraction_ratio=1.0 / l,
        name=f"SG({D},{l})",
        boundary_coords=tuple(tuple(row) for row in q),
        letter_offsets=tuple(offsets),
        letter_scale=1.0 / l,
    )
    validate(st)
    return st


def build_path(n: int) -> FractalStructure:
    """Degenerate fixture: a path on n+1 vertices; refinement rejects it."""
    if n < 1:
        raise StructureError("path needs n >= 1 edges")
    return FractalStructure(
        alphabet_size=0,
        boundary=tuple(str(i) for i in range(n + 1)),
        gluings=(),
        refinable=False,
        name=f"path({n})",
    )


def build_builtin(name: str, *params) -> FractalStructure:
    """Builders for the named families: "SG" (D,l) and "path" (n)."""
    if name == "SG":
        return build_sierpinski_gasket(*params)
    if name == "path":
        return build_path(*params)
    raise StructureError(f"unknown builtin {name!r}")


def load_spec(path) -> FractalStructure:
    """Read a fractal-spec TOML file and return the validated structure.

    Fields: alphabet_size (int), boundary (list of strings), gluings (list of
    [i, a, j, b]), symmetries (optional list of tables with vertex_perm and
    letter_perm), contraction_ratio (optional float).
    """
    try:
        import tomllib
    except ImportError:  # Python < 3.11
        import tomli as tomllib

    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise StructureError(f"cannot parse {path}: {exc}") from exc
    try:
        alphabet_size = int(data["alphabet_size"])
        boundary = tuple(str(b) for b in data["boundary"])
        gluings = tuple(tuple(int(x) for x in quad) for quad in data["gluings"])
    except KeyError as exc:
        raise StructureError(f"missing required field {exc}") from exc
    symmetries = tuple(
        (tuple(int(x) for x in s["vertex_perm"]), tuple(int(x) for x in s["letter_perm"]))
        for s in data.get("symmetries", [])
    )
    for quad in gluings:
        if len(quad) != 4:
            raise StructureError(f"gluing {quad} must be a quadruple")
    st = FractalStructure(
        alphabet_size=alphabet_size,
        boundary=boundary,
        gluings=gluings,
        symmetries=symmetries,
        contraction_ratio=data.get("contraction_ratio"),
        name=str(data.get("name", "spec")),
    )
    validate(st)
    return st
