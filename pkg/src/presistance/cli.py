"""Batch experiment runner.

`presistance <command> --config <path> [--tol --max-iter --seed --out]`

Config files are TOML with the ExperimentConfig fields; outputs are CSV
(RFC-4180, `#`-prefixed comment header) plus a JSON run manifest.  A pinned
seed makes output files byte-identical across runs.
"""

from __future__ import annotations

import hashlib
import json
import re
import sys
import time
try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path

import click
import numpy as np
import scipy

from . import __version__
from . import homogeneity as hg
from . import measures as ms
from . import resistance as rs
from . import solver
from . import structure as st
from . import trace as tr
from .energy import GraphForm, catalog, clarkson_check, derivative_continuity_check, \
    gc_check, holder_bound_check, path_form


@dataclass
class ExperimentConfig:
    fractal: str
    p_grid: list
    levels: list
    seed: int
    output_dir: Path
    options: dict = field(default_factory=dict)
    carpet: dict | None = None

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        p = Path(path)
        if not p.is_file():
            raise click.UsageError(f"config file not found: {path}")
        try:
            raw = tomllib.loads(p.read_text())
        except tomllib.TOMLDecodeError as e:
            raise click.UsageError(f"config parse error: {e}")
        try:
            cfg = cls(
                fractal=raw.get("fractal", "SG(2,2)"),
                p_grid=[float(x) for x in raw.get("p_grid", [2.0])],
                levels=[int(x) for x in raw.get("levels", [2])],
                seed=int(raw.get("seed", 0)),
                output_dir=Path(raw.get("output_dir", "out")),
                options=dict(raw.get("options", {})),
                carpet=raw.get("carpet"),
            )
        except (TypeError, ValueError) as e:
            raise click.UsageError(f"bad config value: {e}")
        for p_ in cfg.p_grid:
            if p_ <= 1.0:
                raise click.UsageError(f"p_grid entries must exceed 1, got {p_}")
        cfg._raw_bytes = p.read_bytes()
        return cfg

    def structure(self) -> st.FractalStructure:
        m = re.fullmatch(r"SG\((\d+),\s*(\d+)\)", self.fractal)
        if m:
            return st.build_sierpinski_gasket(int(m.group(1)), int(m.group(2)))
        m = re.fullmatch(r"path\((\d+)\)", self.fractal)
        if m:
            return st.build_path(int(m.group(1)))
        path = Path(self.fractal)
        if path.is_file():
            return st.load_spec(path)
        raise click.UsageError(f"unknown fractal {self.fractal!r}")

    def carpet_tree(self) -> hg.PartitionTree:
        if self.carpet is None:
            return hg.standard_carpet()
        D = int(self.carpet.get("D", 2))
        l = int(self.carpet.get("l", 3))
        removed = {tuple(c) for c in self.carpet.get("removed", [])}
        letters = tuple(
            s for s in __import__("itertools").product(range(l), repeat=D)
            if s not in removed
        )
        tree = hg.PartitionTree(D, l, letters)
        tree.validate()
        return tree


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def _csv(header_meta: dict, columns, rows) -> str:
    lines = [f"# {k}={_fmt(v)}" for k, v in header_meta.items()]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_fmt(x) for x in row))
    return "\r\n".join(lines) + "\r\n"


def _meta(cfg: ExperimentConfig, **extra) -> dict:
    meta = {
        "version": __version__,
        "fractal": cfg.fractal,
        "p": ";".join(_fmt(p) for p in cfg.p_grid),
        "level": ";".join(str(n) for n in cfg.levels),
        "seed": cfg.seed,
    }
    meta.update(extra)
    return meta


class _Run:
    """Collects output files and writes them only when the command finishes
    (a failed run leaves no partial files)."""

    def __init__(self, command: str, cfg: ExperimentConfig):
        self.command = command
        self.cfg = cfg
        self.files: dict = {}
        self.t0 = time.monotonic()

    def add(self, name: str, content: str):
        self.files[name] = content

    def finish(self) -> Path:
        out = self.cfg.output_dir
        out.mkdir(parents=True, exist_ok=True)
        for name, content in self.files.items():
            (out / name).write_text(content, newline="")
        manifest = {
            "command": self.command,
            "config_hash": hashlib.sha256(self.cfg._raw_bytes).hexdigest(),
            "versions": {
                "presistance": __version__,
                "python": sys.version.split()[0],
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            "wall_time_s": round(time.monotonic() - self.t0, 3),
            "outputs": sorted(self.files),
        }
        (out / f"{self.command}_manifest.json").write_text(
            json.dumps(manifest, indent=2) + "\n"
        )
        return out


def _common(f):
    f = click.option("--config", "config_path", required=True,
                     help="TOML experiment config")(f)
    f = click.option("--tol", type=float, default=None)(f)
    f = click.option("--max-iter", type=int, default=None)(f)
    f = click.option("--seed", type=int, default=None)(f)
    f = click.option("--out", type=str, default=None)(f)
    return f


def _load(config_path, tol, max_iter, seed, out) -> ExperimentConfig:
    cfg = ExperimentConfig.load(config_path)
    if tol is not None:
        cfg.options["tol"] = tol
    if max_iter is not None:
        cfg.options["max_iter"] = max_iter
    if seed is not None:
        cfg.seed = seed
    if out is not None:
        cfg.output_dir = Path(out)
    return cfg


@click.group()
@click.version_option(__version__)
def main():
    """p-energy forms on self-similar fractals: experiment runner."""


@main.command("eigenform")
@_common
def cmd_eigenform(config_path, tol, max_iter, seed, out):
    """Self-similar weights, eigenvalues, and eigenform reports per p."""
    cfg = _load(config_path, tol, max_iter, seed, out)
    run = _Run("eigenform", cfg)
    s = cfg.structure()
    tol_ = float(cfg.options.get("tol", 1e-4))
    depth = int(cfg.options.get("depth", 5))
    rows = []
    ind_rows = []
    hist_rows = []
    worst = 0.0
    for p in cfg.p_grid:
        E0 = tr.symmetric_seed(s, p)
        ss = tr.self_similar_weight(s, E0)
        sigma = ss["sigma"]
        rho = tr.WeightVector.constant(sigma, s.alphabet_size)
        rep = tr.eigenform(s, E0, rho=rho, depth=depth, lam=1.0)
        rows.append((p, 1.0 / sigma, sigma, rep.fixed_point_residual, rep.depth))
        worst = max(worst, rep.fixed_point_residual)
        for key, val in sorted(rep.indicator_table.items()):
            ind_rows.append((p, key, val))
        for n, ratio in enumerate(rep.lambda_history, start=1):
            hist_rows.append((p, n, ratio))
    run.add("eigenform.csv", _csv(
        _meta(cfg), ("p", "lambda", "sigma", "residual", "depth"), rows))
    run.add("eigenform_indicators.csv", _csv(
        _meta(cfg), ("p", "indicator", "value"), ind_rows))
    run.add("eigenform_history.csv", _csv(
        _meta(cfg), ("p", "n", "lambda_ratio"), hist_rows))
    run.finish()
    if worst > tol_:
        click.echo(f"eigenform residual {worst:.3e} above tolerance {tol_:.1e}",
                   err=True)
        sys.exit(1)


@main.command("walkdim")
@_common
def cmd_walkdim(config_path, tol, max_iter, seed, out):
    """p-walk dimensions d_{w,p} with monotonicity flags."""
    cfg = _load(config_path, tol, max_iter, seed, out)
    run = _Run("walkdim", cfg)
    s = cfg.structure()
    if not s.refinable:
        raise click.UsageError("walkdim needs a refinable structure")
    l = 1.0 / s.letter_scale
    d_f = np.log(s.alphabet_size) / np.log(l)
    rows = []
    prev_root = -np.inf
    prev_ratio = np.inf
    for p in cfg.p_grid:
        E0 = tr.symmetric_seed(s, p)
        sigma = tr.self_similar_weight(s, E0)["sigma"]
        tau = np.log(sigma) / np.log(l)
        d_w = d_f + tau
        root = sigma ** (1.0 / (p - 1.0))
        ratio = d_w / p
        rows.append((p, sigma, tau, d_w, d_w - p,
                     root >= prev_root - 1e-9, ratio <= prev_ratio + 1e-9))
        prev_root, prev_ratio = root, ratio
    run.add("walkdim.csv", _csv(
        _meta(cfg),
        ("p", "sigma", "tau", "d_w", "d_w_minus_p",
         "sigma_root_nondecreasing", "dw_over_p_nonincreasing"),
        rows))
    run.finish()


def _level_form(cfg: ExperimentConfig, s: st.FractalStructure, p: float,
                level: int):
    """The working graph form: a path directly, or the sigma-weighted lift
    of the symmetric seed on a refinable structure."""
    if not s.refinable:
        raise click.UsageError(
            f"{cfg.fractal!r} is not refinable; this command needs a "
            "self-similar structure"
        )
    E0 = tr.symmetric_seed(s, p)
    sigma = tr.self_similar_weight(s, E0)["sigma"]
    rho = tr.WeightVector.constant(sigma, s.alphabet_size)
    return tr.lift(s, E0, rho, level, k=0), rho


@main.command("resistance")
@_common
def cmd_resistance(config_path, tol, max_iter, seed, out):
    """Pairwise p-resistance matrices per (p, level)."""
    cfg = _load(config_path, tol, max_iter, seed, out)
    run = _Run("resistance", cfg)
    m = re.fullmatch(r"path\((\d+)\)", cfg.fractal)
    for p in cfg.p_grid:
        for level in cfg.levels:
            if m:
                form = path_form(int(m.group(1)), p)
            else:
                s = cfg.structure()
                form, _ = _level_form(cfg, s, p, level)
            mat = rs.resistance_matrix(form, level=level)
            body = mat.to_csv()
            header = "\r\n".join(
                f"# {k}={_fmt(v)}"
                for k, v in _meta(cfg, this_p=p, this_level=level).items()
            )
            run.add(f"resistance_p{p:g}_level{level}.csv",
                    header + "\r\n" + body)
    run.finish()


@main.command("measure")
@_common
def cmd_measure(config_path, tol, max_iter, seed, out):
    """Self-similar cell-measure tables per (p, resolution)."""
    cfg = _load(config_path, tol, max_iter, seed, out)
    run = _Run("measure", cfg)
    s = cfg.structure()
    fkind = cfg.options.get("function", "harmonic")
    for p in cfg.p_grid:
        for n in cfg.levels:
            depth = max(n + 2, int(cfg.options.get("depth", 0)))
            form, rho = _level_form(cfg, s, p, depth)
            g = st.refine(s, depth)
            if fkind == "constant":
                f = np.ones(len(g.vertices))
            else:
                b = st.refine(s, 0).vertices
                vals = np.zeros(len(b))
                vals[0] = 1.0
                f = solver.harmonic_extension(
                    solver.BoundaryProblem(form, b, vals)).solution
            mu = ms.cell_measure(s, form, rho, f, n)
            header = "\r\n".join(
                f"# {k}={_fmt(v)}"
                for k, v in _meta(cfg, this_p=p, this_level=n).items()
            )
            run.add(f"measure_p{p:g}_res{n}.csv", header + "\r\n" + mu.to_csv())
    run.finish()


@main.command("conductance")
@_common
def cmd_conductance(config_path, tol, max_iter, seed, out):
    """Carpet conductance constants and the sigma extrapolation curve."""
    cfg = _load(config_path, tol, max_iter, seed, out)
    run = _Run("conductance", cfg)
    tree = cfg.carpet_tree()
    k_max = int(cfg.options.get("k_max", 3))
    M = int(cfg.options.get("M", 1))
    for p in cfg.p_grid:
        est = hg.sigma_estimate(tree, p, k_max, M=M)
        rows = [
            (k + 1, est["E"][k], est["sigma_seq"][k]) for k in range(k_max)
        ]
        meta = _meta(cfg, this_p=p, M=M, sigma=est["sigma"], tau=est["tau"],
                     d_f=est["d_f"], d_walk=est["d_walk"])
        meta["fractal"] = f"GSC({tree.D},{tree.l})#{len(tree.letters)}"
        run.add(f"conductance_p{p:g}.csv",
                _csv(meta, ("k", "E_k", "sigma_k"), rows))
    run.finish()


@main.command("props")
@_common
def cmd_props(config_path, tol, max_iter, seed, out):
    """Property suites: inequality checks on seeded random samples."""
    cfg = _load(config_path, tol, max_iter, seed, out)
    run = _Run("props", cfg)
    s = cfg.structure()
    level = max(cfg.levels)
    n_samples = int(cfg.options.get("samples", 200))
    tol_ = float(cfg.options.get("tol", 1e-9))
    rows = []
    all_ok = True
    for p in cfg.p_grid:
        form, _ = _level_form(cfg, s, p, level)
        m = len(form.vertices)
        rng = np.random.default_rng(cfg.seed)
        for cmap in catalog(p):
            samples = [rng.standard_normal((cmap.n1, m)) for _ in range(n_samples)]
            r = gc_check(form, cmap, samples, tol=tol_,
                         audit_rng=np.random.default_rng(cfg.seed))
            rows.append((p, f"gc:{cmap.kind}", r.passed, r.worst_slack))
            all_ok &= bool(r.passed)
        worst_cla = -np.inf
        worst_hb = -np.inf
        worst_dc = -np.inf
        for _ in range(n_samples):
            f = rng.standard_normal(m)
            g = rng.standard_normal(m)
            h = rng.standard_normal(m)
            rep = clarkson_check(form, f, g, tol=tol_)
            # clarkson slacks are margins (positive = holds); flip sign so
            # every suite reports violations as positive
            worst_cla = max(worst_cla, -rep.slack, -rep.improved_slack)
            worst_hb = max(worst_hb, holder_bound_check(form, f, g, tol=tol_).worst_slack)
            worst_dc = max(
                worst_dc,
                derivative_continuity_check(form, f, g, h, tol=tol_).worst_slack,
            )
        for name, worst in (("clarkson", worst_cla), ("holder_bound", worst_hb),
                            ("derivative_continuity", worst_dc)):
            rows.append((p, name, worst <= tol_, worst))
            all_ok &= worst <= tol_
    run.add("props.csv", _csv(
        _meta(cfg), ("p", "suite", "passed", "worst_slack"), rows))
    run.finish()
    if not all_ok:
        click.echo("property suite failures; see props.csv", err=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
