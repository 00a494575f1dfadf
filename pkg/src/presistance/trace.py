"""Traces, the renormalization operator, and eigenforms.

The two operators on forms over a self-similar structure are

    Lambda_rho(E)(u) = sum_i rho_i E(u . F_i)        (weighted lift)
    R_rho(E)         = Lambda_rho(E) | V_k           (lift, then trace back)

and the n-fold composite R^n(E) equals the trace of the depth-n lift, so a
single big constrained solve evaluates it.  The eigenvalue lambda(rho) is the
growth rate of |R^n(E0)| where |E| is the maximum of E over the 2^{#V0}
boundary indicators (the extreme points of the osc<=1 cube), and the
eigenform is the depth-n* iterate lambda^{-n*} R^{n*}(seed).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import structure as st
from .energy import EnergyError, GraphForm, TracedForm


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class WeightVector:
    weights: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if any(w <= 0 for w in self.weights):
            raise TraceError("weights must be positive")

    @classmethod
    def constant(cls, value: float, size: int) -> "WeightVector":
        return cls((float(value),) * size)

    def word_weight(self, w) -> float:
        out = 1.0
        for i in w:
            out *= self.weights[i]
        return out

    def is_symmetric(self, structure: st.FractalStructure) -> bool:
        return all(
            self.weights[i] == self.weights[tau[i]]
            for (_, tau) in structure.symmetries
            for i in range(len(self.weights))
        )

    def regular(self) -> bool:
        """Condition (R): every weight exceeds 1."""
        return min(self.weights) > 1.0


@dataclass
class EigenReport:
    lambda_: float
    lambda_history: list
    eigenform: object = None
    fixed_point_residual: float | None = None
    depth: int = 0
    indicator_table: dict = field(default_factory=dict)
    monotone_ok: bool | None = None

    def to_text(self) -> str:
        lines = [
            f"lambda = {self.lambda_!r}",
            f"depth = {self.depth}",
            f"fixedPointResidual = {self.fixed_point_residual!r}",
            "lambdaHistory = [" + ", ".join(repr(x) for x in self.lambda_history) + "]",
        ]
        if self.indicator_table:
            lines.append("[indicator_table]")
            for key in sorted(self.indicator_table):
                lines.append(f'"{key}" = {self.indicator_table[key]!r}')
        return "\n".join(lines) + "\n"


def _infer_level(structure: st.FractalStructure, form: GraphForm, max_level=12) -> int:
    target = set(form.vertices)
    for k in range(max_level + 1):
        graph = st.refine(structure, k)
        if set(graph.vertices) == target:
            return k
        if len(graph.vertices) > len(target):
            break
    raise TraceError("form vertices do not match any refinement level")


def trace(form: GraphForm | TracedForm, A) -> TracedForm:
    """The form restricted to A by minimal-energy extension."""
    if isinstance(form, TracedForm):
        for v in A:
            if v not in form.boundary:
                raise TraceError(f"{v!r} is not in the traced form's set")
        return TracedForm(form.ambient, tuple(A), scale=form.scale)
    return TracedForm(form, tuple(A))


def lift(structure: st.FractalStructure, base: GraphForm, rho: WeightVector,
         n: int, k: int | None = None) -> GraphForm:
    """Graph form on V_{k+n} evaluating sum_{w in W_n} rho_w base(u . F_w)."""
    if n < 0:
        raise TraceError("lift depth must be nonnegative")
    if not structure.refinable:
        raise st.StructureError(f"{structure.name!r} cannot be refined")
    if n == 0:
        return base
    if k is None:
        k = _infer_level(structure, base)
    gk = st.refine(structure, k)
    gkn = st.refine(structure, k + n)
    pair_of = {v: gk._canonical_pairs[v] for v in base.vertices}
    edges = []
    for w in structure.words(n):
        rw = rho.word_weight(w)
        for (x, y, c) in base.edges:
            vx, ax = pair_of[x]
            vy, ay = pair_of[y]
            edges.append(
                (gkn.vertex_of(w + vx, ax), gkn.vertex_of(w + vy, ay), rw * c)
            )
    out = GraphForm(base.p, gkn.vertices, edges)
    # remember the cell decomposition so measures can regroup terms exactly
    object.__setattr__(out, "lift_info", (structure, base, rho, n, k))
    return out


def renormalize(structure: st.FractalStructure, E: GraphForm, rho: WeightVector,
                n: int, k: int | None = None) -> TracedForm:
    """R_rho^n(E) as a traced form (trace of the depth-n lift back to V_k)."""
    if k is None:
        k = _infer_level(structure, E)
    if n == 0:
        return TracedForm(E, E.vertices)
    ambient = lift(structure, E, rho, n, k=k)
    return TracedForm(ambient, st.refine(structure, k).vertices)


def boundary_indicators(n_boundary: int) -> list[np.ndarray]:
    """Nonconstant 0/1 vectors on V0, one per complement pair (E(u)=E(1-u))."""
    out = []
    for bits in itertools.product((0.0, 1.0), repeat=n_boundary - 1):
        u = np.array((0.0,) + bits)
        if u.any():
            out.append(u)
    return out


def indicator_norm(form) -> float:
    """|E| = max over boundary indicators of E(u) (the osc<=1 sup norm)."""
    if len(form.vertices) > 16:
        raise TraceError("indicator norm limited to #V0 <= 16")
    return max(form.eval(u) for u in boundary_indicators(len(form.vertices)))


def _aitken(seq):
    if len(seq) < 3:
        return seq[-1]
    a0, a1, a2 = seq[-3], seq[-2], seq[-1]
    denom = a2 - 2.0 * a1 + a0
    if abs(denom) < 1e-14 * max(1.0, abs(a2)):
        return a2
    return a0 - (a1 - a0) ** 2 / denom


def eigenvalue(structure: st.FractalStructure, E0: GraphForm, rho: WeightVector,
               max_depth: int = 8, tol: float | None = None) -> EigenReport:
    """lambda(rho) as the limit of |R^n(E0)| / |R^{n-1}(E0)| with Aitken
    acceleration on the ratio sequence.

    The default stopping tolerance is 1e-8 for p = 2 (the iteration is
    exactly geometric) and 1e-5 otherwise (the ratio sequence mixes several
    contraction modes and settles more slowly)."""
    if tol is None:
        tol = 1e-8 if E0.p == 2.0 else 1e-5
    indicators = boundary_indicators(len(E0.vertices))
    norms = [max(E0.eval(u) for u in indicators)]
    ratios: list[float] = []
    accel: list[float] = []
    for n in range(1, max_depth + 1):
        rn = renormalize(structure, E0, rho, n, k=0)
        norms.append(max(rn.eval(u) for u in indicators))
        ratios.append(norms[-1] / norms[-2])
        accel.append(_aitken(ratios))
        if len(accel) >= 2 and abs(accel[-1] - accel[-2]) < tol:
            return EigenReport(accel[-1], ratios, depth=n)
        if len(ratios) >= 2 and abs(ratios[-1] - ratios[-2]) < tol:
            return EigenReport(accel[-1], ratios, depth=n)
    raise TraceError(
        f"eigenvalue ratios did not settle below {tol:.1e} by depth {max_depth}: "
        f"{ratios}"
    )


def self_similar_weight(structure: st.FractalStructure, E0: GraphForm,
                        max_depth: int = 8, tol: float | None = None) -> dict:
    """sigma with lambda(sigma * ones) = 1, i.e. sigma = 1 / lambda(ones)."""
    rho1 = WeightVector.constant(1.0, structure.alphabet_size)
    report = eigenvalue(structure, E0, rho1, max_depth=max_depth, tol=tol)
    sigma = 1.0 / report.lambda_
    return {"sigma": sigma, "report": report}


class AveragedForm:
    """Cesaro average of several traced forms (same boundary set)."""

    def __init__(self, terms):
        self.terms = list(terms)
        self.vertices = self.terms[0].vertices
        self.boundary = self.terms[0].vertices
        self.p = self.terms[0].p

    def eval(self, u) -> float:
        return sum(t.eval(u) for t in self.terms) / len(self.terms)

    def two_variable(self, f, g) -> float:
        return sum(t.two_variable(f, g) for t in self.terms) / len(self.terms)


def symmetric_seed(structure: st.FractalStructure, p: float) -> GraphForm:
    """E0(u) = sum over boundary pairs |u(x)-u(y)|^p (the symmetric seed)."""
    b = structure.boundary
    edges = [(b[i], b[j], 1.0) for i in range(len(b)) for j in range(i + 1, len(b))]
    return GraphForm(p, b, edges)


def eigenform(structure: st.FractalStructure, E0: GraphForm,
              rho: WeightVector | None = None, depth: int = 6,
              cesaro: bool = False, tol: float = 1e-8,
              max_depth: int = 10, lam: float | None = None) -> EigenReport:
    """lambda^{-n*} R^{n*}(E0) as the eigenform approximation at depth n*.

    With cesaro=True the returned form is the Cesaro average of the scaled
    iterates (the subsequential fixed point construction); otherwise the
    plain top iterate.  fixed_point_residual compares depth n* with n*+1 on
    the indicator hypercube, relative to the eigenform's scale.
    """
    depth = min(depth, max_depth)
    if rho is None:
        rho = WeightVector.constant(1.0, structure.alphabet_size)
    if lam is None:
        lam = eigenvalue(structure, E0, rho, max_depth=max_depth, tol=tol).lambda_
    indicators = boundary_indicators(len(E0.vertices))
    iterates = [renormalize(structure, E0, rho, n, k=0) for n in range(depth + 2)]
    tables = []
    for n, it in enumerate(iterates):
        tables.append([it.eval(u) / lam**n for u in indicators])
    # monotone nondecrease of lambda^{-l} R^l(E)(u) per indicator
    arr = np.array(tables)
    scale = arr[depth].max()
    monotone_ok = bool((np.diff(arr[: depth + 1], axis=0) >= -1e-9 * scale).all())
    residual = float(np.abs(arr[depth + 1] - arr[depth]).max() / scale)
    for n, it in enumerate(iterates):
        it.scale = lam ** (-n)
    if cesaro:
        form = AveragedForm(iterates[: depth + 1])
    else:
        form = iterates[depth]
    table = {
        "".join(str(int(x)) for x in u): arr[depth][i]
        for i, u in enumerate(indicators)
    }
    history = [arr[n].max() / arr[n - 1].max() * lam for n in range(1, depth + 2)]
    return EigenReport(
        lambda_=lam,
        lambda_history=history,
        eigenform=form,
        fixed_point_residual=residual,
        depth=depth,
        indicator_table=table,
        monotone_ok=monotone_ok,
    )


def condA_check(structure: st.FractalStructure, E: GraphForm, rho: WeightVector,
                max_depth: int = 4) -> dict:
    """min/max boundary-pair resistance comparability along R^n iterates."""
    b = st.refine(structure, 0).vertices
    history = []
    for n in range(max_depth + 1):
        rn = renormalize(structure, E, rho, n, k=0)
        res = []
        for i in range(len(b)):
            for j in range(i + 1, len(b)):
                tf = TracedForm(rn.ambient, (b[i], b[j]), scale=rn.scale)
                e = tf.eval(np.array([1.0, 0.0]))
                res.append(1.0 / e)
        history.append(min(res) / max(res))
    return {"c_estimate": min(history), "history": history}


def inductive_limit_check(structure: st.FractalStructure, E0: GraphForm,
                          rho: WeightVector, levels: int = 2, extra_depth: int = 1,
                          rng=None, n_samples: int = 3, tol: float = 1e-9) -> dict:
    """(i) compatible-sequence identity E|V_{n+m}(u) = sum_w rho_w E|V_n(u.F_w)
    on random u; (ii) monotone nondecrease of E|V_n(u|V_n) for harmonic u."""
    rng = np.random.default_rng(rng)
    worst = 0.0
    pairs = [(n, m) for n in range(levels) for m in range(1, levels - n + 1)]
    for (n, m) in pairs:
        gnm = st.refine(structure, n + m)
        big = TracedForm(lift(structure, E0, rho, n + m + extra_depth, k=0),
                         gnm.vertices)
        small_ambient = lift(structure, E0, rho, n + extra_depth, k=0)
        small = TracedForm(small_ambient, st.refine(structure, n).vertices)
        for _ in range(n_samples):
            u = rng.standard_normal(len(gnm.vertices))
            lhs = big.eval(u)
            rhs = 0.0
            for w in structure.words(m):
                rhs += rho.word_weight(w) * small.eval(st.cell_map(gnm, w, u))
            worst = max(worst, abs(lhs - rhs) / max(1.0, abs(lhs)))
    # monotone trace values for a harmonic spline
    deep = levels + extra_depth
    gdeep = st.refine(structure, deep)
    big = lift(structure, E0, rho, deep, k=0)
    u0 = np.arange(structure.n_boundary, dtype=float)
    h = TracedForm(big, st.refine(structure, 0).vertices)._extend(u0).solution
    values = []
    for n in range(levels + 1):
        gn = st.refine(structure, n)
        un = np.array([h[big.index(v)] for v in gn.vertices])
        values.append(TracedForm(big, gn.vertices).eval(un))
    increments = np.diff(values)
    monotone = bool((increments >= -tol * max(values)).all())
    return {
        "compat_worst_rel_error": worst,
        "compat_ok": worst <= tol,
        "trace_values": values,
        "monotone_ok": monotone,
    }
