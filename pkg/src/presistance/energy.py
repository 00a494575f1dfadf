"""Discrete p-energy forms on finite vertex sets.

The basic object is E(u) = sum_{xy} c_xy |u(x)-u(y)|^p on a finite connected
weighted graph, together with its two-variable derivative form

    E(f;g) = sum_{xy} c_xy |df|^{p-2} df * dg,   df = f(x)-f(y),

and the catalog of 1-Lipschitz vector contractions T : R^{n1} -> R^{n2}
under which such forms are stable:

    || (E(T_l(u))^{1/p})_l ||_{q2}  <=  || (E(u_k)^{1/p})_k ||_{q1}.

A TracedForm is the restriction of a graph form to a subset by minimal-energy
extension; its evaluation delegates to the solver module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class EnergyError(ValueError):
    pass


class GraphForm:
    """E(u) = sum c_xy |u(x)-u(y)|^p on a finite connected graph."""

    def __init__(self, p: float, vertices: Sequence, edges: Iterable[tuple]):
        if not p > 1:
            raise EnergyError("exponent p must be > 1")
        self.p = float(p)
        self.vertices = tuple(vertices)
        self._index = {v: i for i, v in enumerate(self.vertices)}
        if len(self._index) != len(self.vertices):
            raise EnergyError("duplicate vertex identifiers")
        merged: dict[tuple, float] = {}
        for (x, y, c) in edges:
            if x == y:
                raise EnergyError(f"self-loop at {x!r}")
            c = float(c)
            if c < 0:
                raise EnergyError(f"negative conductance on ({x!r},{y!r})")
            if x not in self._index or y not in self._index:
                raise EnergyError(f"edge ({x!r},{y!r}) uses unknown vertices")
            k = (x, y) if str(x) <= str(y) else (y, x)
            merged[k] = merged.get(k, 0.0) + c
        self.edges = tuple(
            (x, y, merged[(x, y)])
            for (x, y) in sorted(merged, key=lambda k: (str(k[0]), str(k[1])))
            if merged[(x, y)] > 0.0
        )
        self.ei = np.array([self._index[e[0]] for e in self.edges], dtype=np.intp)
        self.ej = np.array([self._index[e[1]] for e in self.edges], dtype=np.intp)
        self.c = np.array([e[2] for e in self.edges], dtype=float)
        self._check_connected()

    def _check_connected(self):
        n = len(self.vertices)
        if n == 0:
            raise EnergyError("empty vertex set")
        seen = np.zeros(n, dtype=bool)
        adj: list[list[int]] = [[] for _ in range(n)]
        for i, j in zip(self.ei, self.ej):
            adj[i].append(j)
            adj[j].append(i)
        stack = [0]
        seen[0] = True
        while stack:
            for j in adj[stack.pop()]:
                if not seen[j]:
                    seen[j] = True
                    stack.append(j)
        if not seen.all():
            raise EnergyError("support graph is disconnected")

    def index(self, v) -> int:
        return self._index[v]

    def vector(self, mapping, default: float = 0.0) -> np.ndarray:
        u = np.full(len(self.vertices), default, dtype=float)
        for v, val in mapping.items():
            u[self._index[v]] = val
        return u

    def indicator(self, vs) -> np.ndarray:
        if not isinstance(vs, (set, frozenset, list, tuple)):
            vs = [vs]
        return self.vector({v: 1.0 for v in vs})

    def _as_array(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (len(self.vertices),):
            raise EnergyError(
                f"vector of length {u.shape} does not match {len(self.vertices)} vertices"
            )
        return u

    def eval(self, u) -> float:
        u = self._as_array(u)
        d = np.abs(u[self.ei] - u[self.ej])
        return float(np.dot(self.c, d**self.p))

    def two_variable(self, f, g) -> float:
        f = self._as_array(f)
        g = self._as_array(g)
        df = f[self.ei] - f[self.ej]
        dg = g[self.ei] - g[self.ej]
        absdf = np.abs(df)
        with np.errstate(divide="ignore", invalid="ignore"):
            w = absdf ** (self.p - 2.0)
        # continuous extension of |t|^{p-2} t at t = 0 (relevant for p < 2)
        w[absdf == 0.0] = 0.0
        return float(np.dot(self.c, w * df * dg))

    def to_text(self) -> str:
        lines = [f"p = {self.p!r}"]
        lines.append(
            "vertices = [" + ", ".join(f'"{v}"' for v in self.vertices) + "]"
        )
        lines.append("edges = [")
        for (x, y, c) in self.edges:
            lines.append(f'    ["{x}", "{y}", {c!r}],')
        lines.append("]")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "GraphForm":
        try:
            import tomllib
        except ImportError:  # Python < 3.11
            import tomli as tomllib

        data = tomllib.loads(text)
        return cls(
            data["p"],
            [str(v) for v in data["vertices"]],
            [(str(x), str(y), float(c)) for (x, y, c) in data["edges"]],
        )


class TracedForm:
    """Trace of a graph form to a boundary subset: E|_A(u) = min over
    extensions of u off A.  Evaluation runs the p-harmonic solver on the
    ambient graph; an optional scalar premultiplies all values."""

    def __init__(self, ambient: GraphForm, boundary: Sequence, scale: float = 1.0):
        boundary = tuple(boundary)
        if len(boundary) < 2:
            raise EnergyError("trace boundary needs at least 2 vertices")
        for v in boundary:
            if v not in ambient._index:
                raise EnergyError(f"boundary vertex {v!r} not in the ambient graph")
        if len(set(boundary)) != len(boundary):
            raise EnergyError("duplicate boundary vertices")
        self.ambient = ambient
        self.boundary = boundary
        self.vertices = boundary
        self.scale = float(scale)
        self.p = ambient.p
        self._index = {v: i for i, v in enumerate(boundary)}

    def index(self, v) -> int:
        return self._index[v]

    def vector(self, mapping, default: float = 0.0) -> np.ndarray:
        u = np.full(len(self.boundary), default, dtype=float)
        for v, val in mapping.items():
            u[self._index[v]] = val
        return u

    def indicator(self, vs) -> np.ndarray:
        if not isinstance(vs, (set, frozenset, list, tuple)):
            vs = [vs]
        return self.vector({v: 1.0 for v in vs})

    def _extend(self, u):
        from . import solver

        u = np.asarray(u, dtype=float)
        if u.shape != (len(self.boundary),):
            raise EnergyError("boundary vector length mismatch")
        problem = solver.BoundaryProblem(self.ambient, self.boundary, u)
        return solver.harmonic_extension(problem)

    def eval(self, u) -> float:
        return self.scale * self._extend(u).energy

    def two_variable(self, f, g) -> float:
        hf = self._extend(f).solution
        hg = self._extend(g).solution
        return self.scale * self.ambient.two_variable(hf, hg)


AnyForm = GraphForm | TracedForm


def path_form(n: int, p: float, conductance: float = 1.0) -> GraphForm:
    """Path 0-1-...-n with constant conductances (the closed-form fixture)."""
    return GraphForm(
        p, list(range(n + 1)), [(i, i + 1, conductance) for i in range(n)]
    )


# ----------------------------------------------------------------------------
# contraction maps


@dataclass(frozen=True)
class ContractionMap:
    """A 1-Lipschitz map T : (R^{n1}, l^{q1}) -> (R^{n2}, l^{q2}), T(0)=0."""

    kind: str
    q1: float
    q2: float
    n1: int
    n2: int
    fn: Callable[[np.ndarray], np.ndarray] = field(compare=False)
    preverified: bool = False

    def apply(self, xs: np.ndarray) -> np.ndarray:
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        if xs.shape[0] != self.n1:
            raise EnergyError(f"map expects {self.n1} inputs, got {xs.shape[0]}")
        out = np.atleast_2d(self.fn(xs))
        if out.shape[0] != self.n2:
            raise EnergyError("map produced wrong output arity")
        return out

    def audit(self, hull: np.ndarray, rng=None, n_pairs: int = 10_000, tol: float = 1e-9):
        """Spot-check T(0)=0 and the Lipschitz bound on random pairs drawn
        from the bounding box of the sampled hull."""
        rng = np.random.default_rng(rng)
        zero = self.apply(np.zeros((self.n1, 1)))
        if np.abs(zero).max() > tol:
            raise EnergyError(f"map {self.kind} does not fix 0")
        lo = hull.min()
        hi = hull.max()
        x = rng.uniform(lo, hi, size=(self.n1, n_pairs))
        y = rng.uniform(lo, hi, size=(self.n1, n_pairs))
        lhs = _lq_norm(np.abs(self.apply(x) - self.apply(y)), self.q2, axis=0)
        rhs = _lq_norm(np.abs(x - y), self.q1, axis=0)
        bad = lhs > rhs + tol * np.maximum(1.0, rhs)
        if bad.any():
            k = int(np.argmax(lhs - rhs))
            raise EnergyError(
                f"map {self.kind} is not 1-Lipschitz: slack {lhs[k]-rhs[k]:.3e}"
            )


def _lq_norm(a: np.ndarray, q: float, axis=0) -> np.ndarray:
    a = np.abs(np.asarray(a, dtype=float))
    if math.isinf(q):
        return a.max(axis=axis)
    return (a**q).sum(axis=axis) ** (1.0 / q)


def sum_map(p: float) -> ContractionMap:
    return ContractionMap(
        "sum", 1.0, p, 2, 1, lambda xs: (xs[0] + xs[1])[None, :], preverified=True
    )


def lipschitz_scalar(p: float, phi: Callable = None, name: str = "lipschitz-scalar") -> ContractionMap:
    """phi must be a normal contraction (1-Lipschitz, phi(0)=0); default x+."""
    if phi is None:
        phi = lambda t: np.maximum(t, 0.0)
    return ContractionMap(name, 1.0, p, 1, 1, lambda xs: phi(xs[0])[None, :])


def unit_contraction(p: float) -> ContractionMap:
    return ContractionMap(
        "unit-contraction",
        p,
        p,
        1,
        1,
        lambda xs: np.minimum(np.maximum(xs[0], 0.0), 1.0)[None, :],
        preverified=True,
    )


def markov_pair(p: float, phi: Callable = None) -> ContractionMap:
    """T(x1,x2) = (x1 - phi(x1-x2), x2 + phi(x1-x2)); phi = positive part by
    default, in which case T(f,g) = (f ^ g, f v g) and the contraction bound
    is strong subadditivity."""
    if phi is None:
        phi = lambda t: np.maximum(t, 0.0)

    def fn(xs):
        d = phi(xs[0] - xs[1])
        return np.stack([xs[0] - d, xs[1] + d])

    return ContractionMap("markov-pair", p, p, 2, 2, fn, preverified=True)


def leibniz(p: float, a1: float, a2: float) -> ContractionMap:
    """Normalized clamp product (x+ ^ a1)(y+ ^ a2)/max(a1,a2)."""
    if a1 <= 0 or a2 <= 0:
        raise EnergyError("clamp levels must be positive")
    s = max(a1, a2)

    def fn(xs):
        u = np.minimum(np.maximum(xs[0], 0.0), a1)
        v = np.minimum(np.maximum(xs[1], 0.0), a2)
        return (u * v / s)[None, :]

    return ContractionMap("leibniz", 1.0, p, 2, 1, fn, preverified=True)


def clarkson_small(p: float) -> ContractionMap:
    """(x1,x2) -> 2^{-(p-1)/p} (x1+x2, x1-x2) as a map l^p -> l^{p'},
    for p in (1,2]; the GC bound is Clarkson's second inequality."""
    if not 1 < p <= 2:
        raise EnergyError("clarkson-small needs p in (1,2]")
    a = 2.0 ** (-(p - 1.0) / p)

    def fn(xs):
        return np.stack([a * (xs[0] + xs[1]), a * (xs[0] - xs[1])])

    return ContractionMap("clarkson-small", p, p / (p - 1.0), 2, 2, fn, preverified=True)


def clarkson_large(p: float) -> ContractionMap:
    """(x1,x2) -> 2^{-(p-1)/p} (x1+x2, x1-x2) as a map l^p -> l^p,
    for p >= 2; the GC bound is Clarkson's first inequality."""
    if p < 2:
        raise EnergyError("clarkson-large needs p >= 2")
    a = 2.0 ** (-(p - 1.0) / p)

    def fn(xs):
        return np.stack([a * (xs[0] + xs[1]), a * (xs[0] - xs[1])])

    return ContractionMap("clarkson-large", p, p, 2, 2, fn, preverified=True)


def custom_matrix(p: float, A: np.ndarray, q1: float, q2: float) -> ContractionMap:
    A = np.asarray(A, dtype=float)
    return ContractionMap(
        "custom-matrix", q1, q2, A.shape[1], A.shape[0], lambda xs: A @ xs
    )


def catalog(p: float) -> list[ContractionMap]:
    """The built-in contraction catalog appropriate for the exponent p."""
    maps = [
        sum_map(p),
        lipschitz_scalar(p),
        unit_contraction(p),
        markov_pair(p),
        leibniz(p, 1.0, 2.0),
    ]
    if p <= 2:
        maps.append(clarkson_small(p))
    if p >= 2:
        maps.append(clarkson_large(p))
    return maps


# ----------------------------------------------------------------------------
# inequality checks


@dataclass
class CheckReport:
    passed: bool
    worst_slack: float
    witness: object = None
    details: dict = field(default_factory=dict)


def gc_check(form: AnyForm, cmap: ContractionMap, samples, tol: float = 1e-9,
             audit_rng=None) -> CheckReport:
    """Verify || (E(T_l u))^{1/p} ||_{q2} <= || (E(u_k))^{1/p} ||_{q1} on the
    given samples (each sample: array of shape (n1, #vertices))."""
    p = form.p
    samples = [np.atleast_2d(np.asarray(s, dtype=float)) for s in samples]
    if not cmap.preverified and samples:
        cmap.audit(np.concatenate([s.ravel() for s in samples]), rng=audit_rng)
    worst = -math.inf
    witness = None
    for s in samples:
        out = cmap.apply(s)
        lhs = _lq_norm(np.array([form.eval(out[l]) ** (1.0 / p) for l in range(cmap.n2)]), cmap.q2)
        rhs = _lq_norm(np.array([form.eval(s[k]) ** (1.0 / p) for k in range(cmap.n1)]), cmap.q1)
        slack = float(lhs - rhs)
        if slack > worst:
            worst, witness = slack, s
    if not samples:
        return CheckReport(True, 0.0)
    return CheckReport(worst <= tol, worst, witness)


def psi(p: float, s) -> np.ndarray:
    """psi_p(s) = (1+s)^{p-1} + sgn(1-s)|1-s|^{p-1} (improved Clarkson weight)."""
    s = np.asarray(s, dtype=float)
    return (1.0 + s) ** (p - 1.0) + np.sign(1.0 - s) * np.abs(1.0 - s) ** (p - 1.0)


@dataclass
class ClarksonReport:
    side: str
    slack: float
    improved_slack: float
    s_best: float


def clarkson_check(form: AnyForm, f, g, tol: float = 1e-9) -> ClarksonReport:
    """Both the classical p-Clarkson inequality (branch by p vs 2) and the
    improved version with the psi_p(s) weights scanned over a log grid."""
    p = form.p
    t = 1.0 / (p - 1.0)
    ef, eg = form.eval(f), form.eval(g)
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    es, ed = form.eval(f + g), form.eval(f - g)
    if p >= 2:
        side = "large"
        slack = 2.0 * (ef**t + eg**t) ** (p - 1.0) - (es + ed)
    else:
        side = "small"
        slack = 2.0 * (ef + eg) ** t - (es**t + ed**t)

    grid = np.concatenate([np.logspace(-4, 4, 64), [1.0]])
    if ef > 0 and eg > 0:
        grid = np.append(grid, (eg / ef) ** t)
    vals = psi(p, grid) * ef + psi(p, 1.0 / grid) * eg
    if p >= 2:
        k = int(np.argmin(vals))
        improved = float(vals[k] - (es + ed))
    else:
        k = int(np.argmax(vals))
        improved = float((es + ed) - vals[k])
    return ClarksonReport(side, float(slack), improved, float(grid[k]))


def holder_bound_check(form: AnyForm, f, g, tol: float = 1e-9) -> CheckReport:
    """|E(f;g)| <= E(f)^{(p-1)/p} E(g)^{1/p}."""
    p = form.p
    lhs = abs(form.two_variable(f, g))
    rhs = form.eval(f) ** ((p - 1.0) / p) * form.eval(g) ** (1.0 / p)
    slack = lhs - rhs
    return CheckReport(slack <= tol * max(1.0, rhs), float(slack), (f, g))


def derivative_continuity_check(form: AnyForm, f1, f2, g, C_p: float = 100.0,
                                tol: float = 1e-9) -> CheckReport:
    """|E(f1;g) - E(f2;g)| against the Hoelder-continuity bound with exponent
    alpha_p = (1/p) ^ ((p-1)/p); C_p is an audit constant (default 100)."""
    p = form.p
    alpha = min(1.0, p - 1.0) / p
    f1 = np.asarray(f1, dtype=float)
    f2 = np.asarray(f2, dtype=float)
    lhs = abs(form.two_variable(f1, g) - form.two_variable(f2, g))
    emax = max(form.eval(f1), form.eval(f2))
    rhs = (
        C_p
        * emax ** ((p - 1.0 - alpha * p) / p)
        * form.eval(f1 - f2) ** (alpha / p)
        * form.eval(g) ** (1.0 / p)
    )
    holder = holder_bound_check(form, f1, g, tol)
    ratio = lhs / rhs if rhs > 0 else (0.0 if lhs <= tol else math.inf)
    return CheckReport(
        lhs <= rhs + tol and holder.passed,
        float(lhs - rhs),
        details={"ratio": ratio, "holder_slack": holder.worst_slack},
    )


def inverse_continuity_check(form: AnyForm, f, g, C_p: float = 100.0,
                             tol: float = 1e-9) -> CheckReport:
    """E(f-g) controlled by the dual gap sup_{E(phi)<=1} |E(f;phi)-E(g;phi)|.

    The sup is lower-estimated over normalized edge-difference directions
    plus the natural candidate (f-g)/E(f-g)^{1/p}."""
    p = form.p
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    n = len(form.vertices)
    gap = 0.0
    directions = []
    for k in range(n):
        for m in range(k + 1, n):
            phi = np.zeros(n)
            phi[k], phi[m] = 1.0, -1.0
            directions.append(phi)
    d = f - g
    if form.eval(d) > 0:
        directions.append(d)
    for phi in directions:
        e = form.eval(phi)
        if e <= 0:
            continue
        phi = phi / e ** (1.0 / p)
        gap = max(gap, abs(form.two_variable(f, phi) - form.two_variable(g, phi)))
    expo = (1.0 + (p - 1.0) * max(2.0 - p, 0.0)) / p
    rhs = C_p * max(form.eval(f), form.eval(g)) ** expo * gap ** (min(p - 1.0, 1.0))
    lhs = form.eval(d)
    return CheckReport(lhs <= rhs + tol, float(lhs - rhs), details={"gap": gap})
