"""Self-similar p-energy measures.

A lifted form on V_m decomposes over the level-n cells: regrouping its terms
gives the cylinder measure mu<f>(w) = rho_w E_{m-n}(f . F_w).  The module
computes these cell measures (one- and two-variable), the closed-cell
sandwich bounds, and the locality and two-point estimate checks.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import structure as st
from . import trace as tr
from .energy import GraphForm


class MeasureError(ValueError):
    pass


@dataclass
class CellMeasure:
    p: float
    resolution: int
    entries: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        return float(sum(self.entries.values()))

    def value(self, w) -> float:
        return self.entries[tuple(w)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("word,value\r\n")
        for w in sorted(self.entries):
            name = "-".join(str(i) for i in w) if w else "root"
            buf.write(f"{name},{self.entries[w]:.17g}\r\n")
        return buf.getvalue()


def _lift_info(levelForm: GraphForm):
    info = getattr(levelForm, "lift_info", None)
    if info is None:
        raise MeasureError(
            "cell measures need a lifted form (carrying its cell decomposition)"
        )
    return info


def _check_resolution(info, n: int):
    structure, base, rho, depth, k = info
    if not (0 <= n <= depth):
        raise MeasureError(
            f"resolution {n} out of range for a depth-{depth} lift"
        )
    if k != 0:
        raise MeasureError("cell measures expect a lift based at V0")


def cell_measure(structure: st.FractalStructure, levelForm: GraphForm,
                 rho: tr.WeightVector, f: np.ndarray, n: int) -> CellMeasure:
    """mu<f>(w) = rho_w E_{m-n}(f . F_w) for each w in W_n; the entries
    regroup the terms of levelForm(f) exactly."""
    info = _lift_info(levelForm)
    _check_resolution(info, n)
    _, base, _, depth, _ = info
    f = np.asarray(f, dtype=float)
    g = st.refine(structure, depth)
    if f.shape[0] != len(g.vertices):
        raise MeasureError("vector length does not match the lift's vertex set")
    sub = tr.lift(structure, base, rho, depth - n, k=0)
    out = CellMeasure(levelForm.p, n)
    for w in structure.words(n):
        fw = st.cell_map(g, w, f)
        out.entries[w] = rho.word_weight(w) * sub.eval(fw)
    return out


def two_variable_cell_measure(structure: st.FractalStructure, levelForm: GraphForm,
                              rho: tr.WeightVector, f: np.ndarray, v: np.ndarray,
                              n: int) -> CellMeasure:
    """Signed measures Gamma<f;v>(w), the cellwise two-variable terms."""
    info = _lift_info(levelForm)
    _check_resolution(info, n)
    _, base, _, depth, _ = info
    f = np.asarray(f, dtype=float)
    v = np.asarray(v, dtype=float)
    g = st.refine(structure, depth)
    sub = tr.lift(structure, base, rho, depth - n, k=0)
    out = CellMeasure(levelForm.p, n)
    for w in structure.words(n):
        fw = st.cell_map(g, w, f)
        vw = st.cell_map(g, w, v)
        out.entries[w] = rho.word_weight(w) * sub.two_variable(fw, vw)
    return out


def _touching_cells(structure: st.FractalStructure, n: int) -> dict:
    """For each w in W_n: list of (v, shared boundary indices of v)."""
    g = st.refine(structure, n)
    cells = g.cells
    by_vertex: dict = {}
    for w, verts in cells.items():
        for a, x in enumerate(verts):
            by_vertex.setdefault(x, []).append((w, a))
    out = {w: {} for w in cells}
    for x, members in by_vertex.items():
        for (w, _) in members:
            for (v, a) in members:
                if v != w:
                    out[w].setdefault(v, set()).add(a)
    return out


def cell_measure_bounds_check(structure: st.FractalStructure, levelForm: GraphForm,
                              rho: tr.WeightVector, f: np.ndarray, n: int,
                              tol: float = 1e-12) -> dict:
    """Sandwich for the closed-cell value Gamma(K_w): the open-cell measure
    mu(w) from below, and the sum of mu over K_w's touching cells from above.

    Gamma(K_w) adds to mu(w), for each touching cell v, the edge terms of
    v's sub-energy incident to the shared vertices."""
    info = _lift_info(levelForm)
    _check_resolution(info, n)
    _, base, _, depth, _ = info
    f = np.asarray(f, dtype=float)
    g = st.refine(structure, depth)
    sub = tr.lift(structure, base, rho, depth - n, k=0)
    subg = st.refine(structure, depth - n)
    mu = cell_measure(structure, levelForm, rho, f, n)
    touching = _touching_cells(structure, n)
    p = levelForm.p
    worst_lower = np.inf
    worst_upper = np.inf
    details = {}
    for w in structure.words(n):
        closed = mu.entries[w]
        for v, shared in touching[w].items():
            fv = st.cell_map(g, v, f)
            shared_local = {subg.boundary[a] for a in shared}
            extra = 0.0
            for (x, y, c) in sub.edges:
                if x in shared_local or y in shared_local:
                    d = fv[sub.index(x)] - fv[sub.index(y)]
                    extra += c * abs(d) ** p
            closed += rho.word_weight(v) * extra
        upper = mu.entries[w] + sum(mu.entries[v] for v in touching[w])
        lo_slack = closed - mu.entries[w]
        up_slack = upper - closed
        worst_lower = min(worst_lower, lo_slack)
        worst_upper = min(worst_upper, up_slack)
        details[w] = (mu.entries[w], closed, upper)
    return {
        "passed": worst_lower >= -tol and worst_upper >= -tol,
        "worst_lower_slack": float(worst_lower),
        "worst_upper_slack": float(worst_upper),
        "table": details,
    }


def _cell_vertex_indices(structure, levelForm, n: int) -> dict:
    """w -> indices (into the lift's vertex list) of the cell's vertices."""
    info = _lift_info(levelForm)
    depth = info[3]
    g = st.refine(structure, depth)
    sub = st.refine(structure, depth - n)
    out = {}
    for w in structure.words(n):
        idx = [g.index(g.vertex_of(w + pair[0], pair[1]))
               for pair in (sub._canonical_pairs[x] for x in sub.vertices)]
        out[w] = np.array(sorted(set(idx)))
    return out


def locality_check(structure: st.FractalStructure, levelForm: GraphForm,
                   rho: tr.WeightVector, u: np.ndarray, a: float,
                   n: int) -> dict:
    """Cells contained in u^{-1}(a) carry zero measure."""
    u = np.asarray(u, dtype=float)
    cell_vertices = _cell_vertex_indices(structure, levelForm, n)
    mu = cell_measure(structure, levelForm, rho, u, n)
    worst = 0.0
    n_cells = 0
    for w, idx in cell_vertices.items():
        if np.all(u[idx] == a):
            n_cells += 1
            worst = max(worst, abs(mu.entries[w]))
    return {"passed": worst == 0.0, "worst": worst, "cells_at_value": n_cells}


def locality_suite(structure: st.FractalStructure, levelForm: GraphForm,
                   rho: tr.WeightVector, n: int, rng=None,
                   n_samples: int = 5) -> dict:
    """mu<f>(w) = 0 when f is constant on the cell, and Gamma<u;v>(w) only
    depends on u through its values on the cell (strong locality)."""
    rng = np.random.default_rng(rng)
    info = _lift_info(levelForm)
    _, _, _, depth, _ = info
    g = st.refine(structure, depth)
    m = len(g.vertices)
    cell_vertices = _cell_vertex_indices(structure, levelForm, n)
    worst_null = 0.0
    worst_local = 0.0
    for _ in range(n_samples):
        f = rng.standard_normal(m)
        v = rng.standard_normal(m)
        w = list(structure.words(n))[rng.integers(structure.alphabet_size ** n)]
        idx = cell_vertices[w]
        # flatten f on the cell: measure must vanish there
        f1 = f.copy()
        f1[idx] = 3.25
        mu = cell_measure(structure, levelForm, rho, f1, n)
        worst_null = max(worst_null, abs(mu.entries[w]))
        # perturb f off the cell: Gamma<f;v>(w) must not move
        f2 = f.copy()
        mask = np.ones(m, dtype=bool)
        mask[idx] = False
        f2[mask] += rng.standard_normal(mask.sum())
        g1 = two_variable_cell_measure(structure, levelForm, rho, f, v, n)
        g2 = two_variable_cell_measure(structure, levelForm, rho, f2, v, n)
        worst_local = max(worst_local, abs(g1.entries[w] - g2.entries[w]))
    return {
        "passed": worst_null <= 1e-12 and worst_local <= 1e-12,
        "worst_null": worst_null,
        "worst_locality": worst_local,
    }


def two_point_estimate_check(structure: st.FractalStructure, levelForm: GraphForm,
                             rho: tr.WeightVector, mat, n: int,
                             A_grid=(2.0, 3.0, 4.0), rng=None,
                             n_samples: int = 20) -> dict:
    """Empirical constants for the two-point estimate

      |u(x)-u(y)|^p <= C s^{p-1} Gamma<u>(B(x, A s))

    over sampled centers x, radii s with y in B(x, s), using cell measures
    at resolution n to evaluate Gamma of the enlarged ball.  Informational."""
    rng = np.random.default_rng(rng)
    info = _lift_info(levelForm)
    _, _, _, depth, _ = info
    g = st.refine(structure, depth)
    p = levelForm.p
    d = mat.metric()
    vmap = {v: i for i, v in enumerate(mat.vertices)}
    # cells at resolution n, as index sets into the metric's vertex list
    cell_idx = {}
    sub = st.refine(structure, depth - n)
    for w in structure.words(n):
        idx = [vmap[g.vertex_of(w + pair[0], pair[1])]
               for pair in (sub._canonical_pairs[x] for x in sub.vertices)]
        cell_idx[w] = np.array(sorted(set(idx)))
    diam = d.max()
    best = None
    for A in A_grid:
        worst = 0.0
        for _ in range(n_samples):
            u = rng.standard_normal(len(g.vertices))
            mu = cell_measure(structure, levelForm, rho, u, n)
            i = int(rng.integers(len(mat.vertices)))
            s = float(rng.uniform(0.05, 0.4)) * diam
            ball = np.flatnonzero(d[i] <= s)
            if len(ball) < 2:
                continue
            gamma = sum(
                mu.entries[w]
                for w, idx in cell_idx.items()
                if np.any(d[i][idx] <= A * s)
            )
            if gamma <= 0:
                continue
            ui = u[[g.index(mat.vertices[j]) for j in ball]]
            lhs = float(np.abs(ui[:, None] - ui[None, :]).max()) ** p
            worst = max(worst, lhs / (s ** (p - 1.0) * gamma))
        if best is None or worst < best[1]:
            best = (A, worst)
    return {"A": best[0], "constant": best[1]}
