"""p-resistance metrics and regularity checks.

R(x,y) = 1/E(h) where h is the minimal-energy function with h(x)=1, h(y)=0;
R^{1/(p-1)} is a metric.  The module also provides point-to-set resistances,
the Hoelder-regularity bounds for harmonic functions, the two-sided cell
contraction bound along self-similar weights, and a discrete empirical
Harnack statistic.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from . import solver
from . import structure as st
from . import trace as tr
from .energy import GraphForm, TracedForm


class ResistanceError(ValueError):
    pass


@dataclass
class ResistanceMatrix:
    p: float
    vertices: tuple
    values: np.ndarray
    level: int | None = None

    def entry(self, x, y) -> float:
        i = self.vertices.index(x)
        j = self.vertices.index(y)
        return float(self.values[i, j])

    def metric(self) -> np.ndarray:
        """R^{1/(p-1)}, the p-resistance metric."""
        return self.values ** (1.0 / (self.p - 1.0))

    def triangle_violation(self) -> float:
        """Max over triples of d(i,j) - d(i,k) - d(k,j) (<= 0 means metric)."""
        d = self.metric()
        through = (d[:, None, :] + d[None, :, :]).min(axis=2)
        return float((d - through).max())

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("vertex," + ",".join(str(v) for v in self.vertices) + "\r\n")
        for i, v in enumerate(self.vertices):
            row = ",".join(f"{x:.17g}" for x in self.values[i])
            buf.write(f"{v},{row}\r\n")
        return buf.getvalue()


def _ambient_and_scale(form):
    if isinstance(form, TracedForm):
        return form.ambient, form.scale, set(form.boundary)
    return form, 1.0, set(form.vertices)


def resistance(form, x, y, x0=None) -> float:
    """R(x,y) = eval(h_{x,y}[1_x])^{-1}."""
    if x == y:
        raise ResistanceError("resistance needs two distinct vertices")
    ambient, scale, allowed = _ambient_and_scale(form)
    if x not in allowed or y not in allowed:
        raise ResistanceError("vertices outside the form's set")
    problem = solver.BoundaryProblem(ambient, (x, y), np.array([1.0, 0.0]))
    try:
        rep = solver.harmonic_extension(problem, x0=x0)
    except solver.SolverError:
        if x0 is None:
            raise
        rep = solver.harmonic_extension(problem)
    return 1.0 / (scale * rep.energy)


def resistance_matrix(form, subset=None, level: int | None = None) -> ResistanceMatrix:
    """All pairwise resistances over `subset` (default: the full vertex set),
    computed as a warm-started sweep."""
    ambient, scale, allowed = _ambient_and_scale(form)
    vertices = tuple(subset) if subset is not None else tuple(sorted(allowed, key=str))
    n = len(vertices)
    if n < 2:
        raise ResistanceError("need at least two vertices")
    values = np.zeros((n, n))
    for i in range(n):
        x0 = None
        for j in range(i + 1, n):
            problem = solver.BoundaryProblem(
                ambient, (vertices[i], vertices[j]), np.array([1.0, 0.0])
            )
            try:
                rep = solver.harmonic_extension(problem, x0=x0)
            except solver.SolverError:
                rep = solver.harmonic_extension(problem)
            x0 = rep.solution
            r = 1.0 / (scale * rep.energy)
            values[i, j] = values[j, i] = r
    return ResistanceMatrix(form.p, vertices, values, level=level)


def point_to_set_resistance(form, x, B) -> float:
    """R(x,B) = 1/E(h) with h = 1 at x, 0 on B."""
    B = tuple(B)
    if x in B:
        raise ResistanceError("x must lie outside B")
    if not B:
        raise ResistanceError("B must be nonempty")
    ambient, scale, allowed = _ambient_and_scale(form)
    vals = np.zeros(len(B) + 1)
    vals[0] = 1.0
    rep = solver.harmonic_extension(
        solver.BoundaryProblem(ambient, (x,) + B, vals)
    )
    return 1.0 / (scale * rep.energy)


def holder_check(form: GraphForm, B, h, tol: float = 1e-9) -> dict:
    """The two Hoelder-regularity bounds for a function h harmonic off B:

      |h(x)-h(y)| <= (R(x,y)/R(x,B))^{1/(p-1)} osc_B h      for x outside B
      h_{B+{x}}[1_B](y) <= (R(x,y)/R(x,B))^{1/(p-1)}

    Returns the worst LHS/RHS ratio (<= 1 + tol when the bounds hold)."""
    B = tuple(B)
    h = np.asarray(h, dtype=float)
    ht = solver.harmonicity_test(form, B, h, tol=1e-8)
    if not ht["is_harmonic"]:
        raise ResistanceError(
            f"h is not harmonic off B (residual {ht['max_residual']:.3e})"
        )
    p = form.p
    expo = 1.0 / (p - 1.0)
    bvals = np.array([h[form.index(v)] for v in B])
    osc = float(bvals.max() - bvals.min())
    bset = set(B)
    outside = [v for v in form.vertices if v not in bset]
    worst = 0.0
    details = []
    for x in outside:
        RxB = point_to_set_resistance(form, x, B)
        # indicator-of-B extension bound at every vertex
        vals = np.ones(len(B) + 1)
        vals[0] = 0.0
        hb = solver.harmonic_extension(
            solver.BoundaryProblem(form, (x,) + B, vals)
        ).solution
        x0 = None
        for y in form.vertices:
            if y == x:
                continue
            pxy = solver.BoundaryProblem(form, (x, y), np.array([1.0, 0.0]))
            try:
                rep = solver.harmonic_extension(pxy, x0=x0)
            except solver.SolverError:
                rep = solver.harmonic_extension(pxy)
            x0 = rep.solution
            Rxy = 1.0 / rep.energy
            rhs = (Rxy / RxB) ** expo
            lhs1 = abs(h[form.index(x)] - h[form.index(y)]) / osc if osc > 0 else 0.0
            lhs2 = hb[form.index(y)]
            ratio = max(lhs1, lhs2) / rhs if rhs > 0 else 0.0
            if ratio > worst:
                worst = ratio
                details = [x, y, ratio]
    return {"worst_ratio": worst, "passed": worst <= 1.0 + tol, "witness": details}


def sharpness_witness(n: int, p: float, alpha: float) -> dict | None:
    """Search the path fixture for a triple violating the triangle inequality
    for R^alpha; returns a witness or None.  For alpha > 1/(p-1) the triple
    (0, n, midpoint) violates it, showing the metric exponent is sharp."""
    from .energy import path_form

    form = path_form(n, p)
    mat = resistance_matrix(form)
    d = mat.values**alpha
    m = len(mat.vertices)
    for i in range(m):
        for j in range(m):
            for k in range(m):
                if i != j and d[i, j] > d[i, k] + d[k, j] + 1e-12:
                    return {
                        "triple": (mat.vertices[i], mat.vertices[j], mat.vertices[k]),
                        "violation": float(d[i, j] - d[i, k] - d[k, j]),
                    }
    return None


def cell_contraction_check(structure: st.FractalStructure, E0: GraphForm,
                           rho: tr.WeightVector, level: int = 3,
                           max_word: int | None = None, tol: float = 1e-9,
                           rng=None, n_samples: int = 1000) -> dict:
    """Two-sided bound for resistances of cell images along self-similar
    weights: c rho_w^{-1} R(x,y) <= R(F_w x, F_w y) <= rho_w^{-1} R(x,y)
    over sampled (w, x, y) with x, y in V0 and |w| <= level - 2."""
    rng = np.random.default_rng(rng)
    if max_word is None:
        max_word = max(1, level - 2)
    big = tr.lift(structure, E0, rho, level, k=0)
    g = st.refine(structure, level)
    b = st.refine(structure, 0).vertices
    nb = len(b)
    # base resistances at matched depth: R(F_w x, F_w y) at level n compares
    # against R(x, y) at level n - |w| (cell decomposition drops the other
    # cells' energy, which gives the exact upper bound at these depths)
    base_R = {}
    for m in range(1, max_word + 1):
        sub = tr.lift(structure, E0, rho, level - m, k=0)
        for i in range(nb):
            for j in range(i + 1, nb):
                base_R[(m, i, j)] = resistance(sub, b[i], b[j])
    words = [w for m in range(1, max_word + 1) for w in structure.words(m)]
    upper_slack = -np.inf
    c_lower = np.inf
    checked = 0
    witness = None
    img_cache = {}
    for _ in range(n_samples):
        w = words[rng.integers(len(words))]
        i, j = sorted(rng.choice(nb, size=2, replace=False).tolist())
        # F_w(q_i) at the working level: the class of (w + (i,)*rest, i)
        rest = level - len(w)
        fx = g.vertex_of(w + (i,) * rest, i)
        fy = g.vertex_of(w + (j,) * rest, j)
        rw = rho.word_weight(w)
        key = (fx, fy)
        if key not in img_cache:
            img_cache[key] = resistance(big, fx, fy)
        R_img = img_cache[key]
        R0 = base_R[(len(w), i, j)]
        ratio = R_img * rw / R0
        slack = ratio - 1.0
        if slack > upper_slack:
            upper_slack = slack
            witness = (w, b[i], b[j])
        c_lower = min(c_lower, ratio)
        checked += 1
    return {
        "upper_ok": upper_slack <= tol,
        "upper_slack": float(upper_slack),
        "c_lower": float(c_lower),
        "samples": checked,
        "witness": witness,
    }


def harnack_check(form: GraphForm, radius_fractions=(0.2, 0.3), n_samples: int = 20,
                  rng=None, mat: ResistanceMatrix | None = None) -> dict:
    """Empirical Harnack statistic: for sampled centers/radii and nonnegative
    functions harmonic inside the double ball, the max of sup/inf over the
    inner ball.  Informational only."""
    rng = np.random.default_rng(rng)
    if mat is None:
        mat = resistance_matrix(form)
    d = mat.metric()
    diam = d.max()
    n = len(mat.vertices)
    ratios = []
    skipped = 0
    for _ in range(n_samples):
        i = int(rng.integers(n))
        frac = radius_fractions[int(rng.integers(len(radius_fractions)))]
        s = frac * diam
        inner = np.flatnonzero(d[i] <= s)
        outer = np.flatnonzero(d[i] <= 2.0 * s)
        if len(inner) < 2 or len(outer) >= n:
            skipped += 1
            continue
        boundary = [mat.vertices[j] for j in range(n) if j not in set(outer.tolist())]
        vals = rng.uniform(0.1, 1.0, size=len(boundary))
        rep = solver.harmonic_extension(
            solver.BoundaryProblem(form, tuple(boundary), vals)
        )
        u = rep.solution
        inner_vals = np.array(
            [u[form.index(mat.vertices[j])] for j in inner]
        )
        if inner_vals.min() <= 0:
            skipped += 1
            continue
        ratios.append(float(inner_vals.max() / inner_vals.min()))
    return {
        "empirical_constant": max(ratios) if ratios else float("nan"),
        "n_used": len(ratios),
        "n_skipped": skipped,
    }
