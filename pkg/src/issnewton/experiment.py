"""Experiment configuration, dispatch and output writing.

A configuration is an INI file with an ``[experiment]`` section, an optional
``[sweep]`` section and, for ``problem = inline``, a ``[problem]`` section.
Command-line options override file values.
"""

from __future__ import annotations

import configparser
import csv
import io
import itertools
import json
import logging
import os
import re
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .disturbances import DisturbanceSequence, parse_disturbance
from .errors import ConfigError, InsufficientData
from .geneq import (
    EXACT,
    NOISY,
    GeneralizedEquation,
    Linearization,
    NewtonConfig,
    Trace,
    linearize,
    run_newton,
)
from .iss import check_iss_certificate, estimate_iss_gains, fit_quadratic_rate, observed_rate
from .multistep import Inexactness
from .nlp import (
    AlmConfig,
    NlpProblem,
    SqpConfig,
    kkt_equation,
    run_alm,
    run_sqp,
    run_linearized,
)
from .problems import DEFAULT_STARTS, get_problem, problem_from_config
from .subproblem import estimate_kappa

_log = logging.getLogger(__name__)

ALGORITHMS = ("newton", "quasi-newton", "sqp", "sqp-bfgs", "sqp-dfp", "seq-convex", "pgd",
              "alm", "multistep")
GE_ALGORITHMS = ("newton", "quasi-newton")
TARGETS = ("kkt", "g", "grad_h")
OUTPUT_ENV = "ISSNEWTON_OUTPUT_DIR"
FAILED_STATUSES = ("failed", "singular", "nonunique", "diverged")

SWEEP_COLUMNS = ("rho", "delta", "seed", "status", "n_steps", "final_residual", "final_error",
                 "limsup_error", "alpha", "gamma", "feasible", "observed_rate")


def default_output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "issnewton-out"))


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str = "scalar-eq"
    algorithm: str = "newton"
    disturbance: str = "zero"
    target: str = "kkt"
    tol: float | None = None
    max_iter: int = 50
    rho: float = 10.0
    inner: str | None = None
    alpha: float = 0.1
    x0: tuple | None = None
    y0: tuple | None = None
    oracle: bool = False
    label: str = "run"
    output_dir: str | None = None
    inline: dict = field(default_factory=dict)
    rho_grid: tuple | None = None
    delta_grid: tuple | None = None
    seeds: tuple | None = None
    workers: int = 1

    def validate(self) -> "ExperimentConfig":
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; valid: {', '.join(ALGORITHMS)}")
        if self.target not in TARGETS:
            raise ConfigError(f"unknown disturbance target {self.target!r}; valid: {', '.join(TARGETS)}")
        if self.rho <= 0:
            raise ConfigError("rho must be positive")
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        for name in ("rho_grid", "delta_grid", "seeds"):
            grid = getattr(self, name)
            if grid is not None and len(grid) == 0:
                raise ConfigError(f"sweep grid {name} is empty")
        if self.problem == "inline" and not self.inline:
            raise ConfigError("problem = inline needs a [problem] section")
        parse_disturbance(self.disturbance)
        Inexactness.parse(self.inner or "exact")
        return self

    @property
    def out(self) -> Path:
        return Path(self.output_dir) if self.output_dir else default_output_dir()

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("inline")
        return d


def _grid(text: str, cast=float) -> tuple:
    items = re.split(r"[,;\s]+", str(text).strip())
    items = [t for t in items if t]
    try:
        return tuple(cast(t) for t in items)
    except ValueError as exc:
        raise ConfigError(f"cannot parse grid {text!r}") from exc


def _vec(text) -> tuple | None:
    if text is None:
        return None
    return _grid(text)


_FLOAT_KEYS = ("tol", "rho", "alpha")
_INT_KEYS = ("max_iter", "workers")


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Read an INI file (optional) and apply ``overrides`` (``None`` values ignored)."""
    values: dict = {}
    inline: dict = {}
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
        parser.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if parser.has_section("experiment"):
            values.update(parser["experiment"])
        if parser.has_section("sweep"):
            sw = parser["sweep"]
            for key, name in (("rho", "rho_grid"), ("delta", "delta_grid"), ("seeds", "seeds")):
                if key in sw:
                    values[name] = sw[key]
            if "workers" in sw:
                values["workers"] = sw["workers"]
        if parser.has_section("problem"):
            inline = dict(parser["problem"])
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    known = set(ExperimentConfig.__dataclass_fields__) - {"inline"}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    kw: dict = {}
    try:
        for key, val in values.items():
            if key in _FLOAT_KEYS:
                kw[key] = float(val)
            elif key in _INT_KEYS:
                kw[key] = int(val)
            elif key in ("x0", "y0"):
                kw[key] = _vec(val) if isinstance(val, str) else tuple(val)
            elif key in ("rho_grid", "delta_grid"):
                kw[key] = _grid(val) if isinstance(val, str) else tuple(val)
            elif key == "seeds":
                kw[key] = _grid(val, int) if isinstance(val, str) else tuple(val)
            elif key == "oracle":
                kw[key] = str(val).strip().lower() in ("1", "true", "yes", "on")
            else:
                kw[key] = str(val).strip()
    except ValueError as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
    return ExperimentConfig(inline=inline, **kw).validate()


# --------------------------------------------------------------------------- running


@dataclass
class RunResult:
    config: ExperimentConfig
    trace: Trace
    problem: object
    dim_z: int
    summary: dict = field(default_factory=dict)


def _resolve_problem(cfg: ExperimentConfig):
    if cfg.problem == "inline":
        return problem_from_config(cfg.inline, cfg.target)
    return get_problem(cfg.problem, cfg.target)


def _starts(cfg: ExperimentConfig, prob):
    x0, y0 = DEFAULT_STARTS.get(cfg.problem, (None, None))
    if cfg.problem == "inline":
        x0 = cfg.inline.get("x0", "0 " * prob.n) if isinstance(prob, NlpProblem) else None
        y0 = cfg.inline.get("y0", "0 " * prob.m) if isinstance(prob, NlpProblem) else None
        x0, y0 = _vec(x0), _vec(y0)
    x0 = cfg.x0 if cfg.x0 is not None else x0
    y0 = cfg.y0 if cfg.y0 is not None else y0
    if x0 is None:
        raise ConfigError("no starting point: set x0")
    return np.asarray(x0, dtype=float), np.asarray(y0 if y0 is not None else [], dtype=float)


def run_experiment(cfg: ExperimentConfig) -> RunResult:
    """Run one configured experiment and return its trace."""
    cfg.validate()
    prob = _resolve_problem(cfg)
    x0, y0 = _starts(cfg, prob)
    alg = cfg.algorithm
    if isinstance(prob, GeneralizedEquation):
        if alg not in GE_ALGORITHMS:
            raise ConfigError(f"algorithm {alg!r} needs an optimization problem; "
                              f"{cfg.problem!r} supports {', '.join(GE_ALGORITHMS)}")
        ge, z0 = prob, x0
    else:
        ge, z0 = kkt_equation(prob), np.concatenate([x0, y0])
        if z0.size != ge.dim:
            raise ConfigError(f"start point has {z0.size} entries, expected {ge.dim}")
    matrix = alg == "quasi-newton"
    shape = (ge.dim, ge.dim) if matrix else (ge.dim_v,)
    dist = parse_disturbance(cfg.disturbance, shape)

    if alg in ("newton", "quasi-newton"):
        ncfg = NewtonConfig(tol=cfg.tol or 1e-12, max_iter=cfg.max_iter, enable_oracle=cfg.oracle)
        trace = run_newton(ge, Linearization(NOISY if matrix else EXACT), z0, dist, ncfg)
    elif alg in ("seq-convex", "pgd"):
        ncfg = NewtonConfig(tol=cfg.tol or 1e-12, max_iter=cfg.max_iter, enable_oracle=cfg.oracle)
        trace = run_linearized(prob, alg, x0, y0, dist, ncfg, alpha=cfg.alpha)
    elif alg.startswith("sqp"):
        family = {"sqp": "exact", "sqp-bfgs": "bfgs", "sqp-dfp": "dfp"}[alg]
        scfg = SqpConfig(family=family, tol=cfg.tol or 1e-10, max_iter=cfg.max_iter,
                         enable_oracle=cfg.oracle)
        trace = run_sqp(prob, x0, y0, None, dist, scfg)
    else:
        inner = cfg.inner or ("exact" if alg == "alm" else "newton:1")
        acfg = AlmConfig(rho=cfg.rho, inner=Inexactness.parse(inner), max_outer=cfg.max_iter,
                         tol=cfg.tol or 1e-10)
        trace = run_alm(prob, x0, y0, dist, acfg)
    trace.label = cfg.label
    res = RunResult(cfg, trace, prob, ge.dim)
    res.summary = summarize(res, ge)
    return res


def exit_code(trace: Trace, dist_zero: bool) -> int:
    """1 on a failed step, divergence, or an undisturbed run that did not converge."""
    if trace.status in FAILED_STATUSES or any(s != "ok" for s in trace.step_status):
        return 1
    if dist_zero and trace.status != "converged":
        return 1
    return 0


def _finite(x):
    if x is None:
        return None
    x = float(x)
    return x if np.isfinite(x) else None


def summarize(res: RunResult, ge: GeneralizedEquation) -> dict:
    """JSON-ready summary of a run; fitted quantities are ``None`` when not identifiable."""
    cfg, tr = res.config, res.trace
    dist_zero = parse_disturbance(cfg.disturbance).kind == "zero"
    has_ref = tr.errors_to_zbar is not None
    out = {
        "schema_version": 1,
        "config": cfg.to_dict(),
        "status": tr.status,
        "exit_code": exit_code(tr, dist_zero),
        "n_steps": tr.n_steps,
        "final_residual": _finite(tr.residuals[-1]),
        "final_error": _finite(tr.errors()[-1]) if has_ref else None,
        "limsup_error": _finite(tr.limsup_error()) if has_ref else None,
        "sup_norm": _finite(tr.sup_norm),
        "iss": None,
        "quadratic": None,
        "observed_rate": None,
        "regularity": None,
        "checks": {"converged": tr.converged, "iss_certificate": None, "ball_containment": None,
                   "outer_gap_max": None, "outer_gap_ok": None},
    }
    if has_ref:
        try:
            est = estimate_iss_gains(tr)
            out["iss"] = {"alpha": est.alpha, "gamma": _finite(est.gamma), "feasible": est.feasible,
                          "asymptotic_gain": _finite(est.asymptotic_gain),
                          "violation_witness": list(est.violation_witness) if est.violation_witness else None}
            out["checks"]["iss_certificate"] = check_iss_certificate(tr, est)
            if est.feasible:
                radius = est.asymptotic_gain * tr.sup_norm * 1.1 + max(cfg.tol or 1e-10, 1e-10)
                out["checks"]["ball_containment"] = bool(tr.limsup_error() <= radius)
        except InsufficientData as exc:
            _log.info("no ISS fit: %s", exc)
        try:
            fit = fit_quadratic_rate(tr)
            out["quadratic"] = {"c": fit.c, "quadratic": fit.quadratic, "steps": fit.steps}
        except InsufficientData as exc:
            _log.info("no quadratic fit: %s", exc)
        try:
            out["observed_rate"] = observed_rate(tr.errors(), floor=1e-10)
        except InsufficientData:
            pass
        try:
            avi = linearize(ge, Linearization(EXACT), ge.zbar)
            reg = estimate_kappa(avi, ge.zbar, radius=1e-3, samples=50, seed=0)
            out["regularity"] = {"kappa": reg.kappa, "pattern_bound": _finite(reg.pattern_bound),
                                 "bound": _finite(reg.bound)}
        except Exception as exc:  # regularity is informative only
            _log.info("no regularity estimate: %s", exc)
    gap = tr.extras.get("outer_gap")
    if gap:
        out["checks"]["outer_gap_max"] = float(max(gap))
        out["checks"]["outer_gap_ok"] = bool(max(gap) <= 1e-10)
    return out


# --------------------------------------------------------------------------- output


def _fmt(x) -> str:
    return format(float(x), ".17g")


def trace_csv(trace: Trace, dim_z: int) -> str:
    """Per-iterate CSV: ``k, z_*, v_*, residual, error_to_zbar``.

    Row ``k`` holds ``z_k`` and the disturbance ``v_k`` applied in the step
    that leaves it (blank on the last row). Matrix disturbances are
    flattened row-major.
    """
    dim_v = int(np.asarray(trace.disturbances[0]).size) if trace.disturbances else 0
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", *(f"z_{i}" for i in range(dim_z)), *(f"v_{i}" for i in range(dim_v)),
                "residual", "error_to_zbar"])
    errs = trace.errors_to_zbar
    for k, z in enumerate(trace.iterates):
        v = np.ravel(trace.disturbances[k]) if k < len(trace.disturbances) else None
        vcols = [_fmt(t) for t in v] if v is not None else [""] * dim_v
        w.writerow([k, *(_fmt(t) for t in z), *vcols, _fmt(trace.residuals[k]),
                    _fmt(errs[k]) if errs is not None else ""])
    return buf.getvalue()


def atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def schema() -> dict:
    text = resources.files("issnewton").joinpath("schemas/summary.schema.json").read_text()
    return json.loads(text)


def write_run(res: RunResult, out_dir: Path | None = None) -> tuple[Path, Path]:
    out_dir = Path(out_dir) if out_dir is not None else res.config.out
    csv_path = out_dir / f"{res.config.label}.csv"
    json_path = out_dir / f"{res.config.label}.json"
    atomic_write(csv_path, trace_csv(res.trace, res.dim_z))
    summary = dict(res.summary, trace_file=csv_path.name)
    atomic_write(json_path, json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


# --------------------------------------------------------------------------- sweeps


def sweep_points(cfg: ExperimentConfig) -> list[dict]:
    """Cross product of the configured axes, sorted by ``rho``, ``delta``, then ``seed``."""
    axes = {"rho": cfg.rho_grid, "delta": cfg.delta_grid, "seed": cfg.seeds}
    if all(v is None for v in axes.values()):
        raise ConfigError("sweep needs at least one of rho, delta, seeds")
    names = [k for k, v in axes.items() if v is not None]
    pts = [dict(zip(names, combo)) for combo in itertools.product(*(axes[n] for n in names))]
    key = lambda p: tuple(p.get(n, -np.inf) for n in ("rho", "delta", "seed"))  # noqa: E731
    return sorted(pts, key=key)


def point_config(cfg: ExperimentConfig, pt: dict) -> ExperimentConfig:
    dist = parse_disturbance(cfg.disturbance)
    delta = pt.get("delta")
    seed = pt.get("seed")
    text = cfg.disturbance
    if delta is not None or seed is not None:
        if dist.kind in ("zero", "random"):
            mag = delta if delta is not None else dist.magnitude
            text = f"random:{mag!r}:seed={seed if seed is not None else dist.seed}"
        elif delta is not None:
            kind = "const" if dist.kind == "constant" else "decay"
            text = f"{kind}:{delta!r}" + (f":rate={dist.rate!r}" if kind == "decay" else "")
    tag = "_".join(f"{k}={pt[k]!r}" for k in ("rho", "delta", "seed") if k in pt)
    return replace(cfg, rho=pt.get("rho", cfg.rho), disturbance=text,
                   label=f"{cfg.label}_{tag}", rho_grid=None, delta_grid=None, seeds=None)


def _sweep_row(args) -> dict:
    cfg, pt, out_dir = args
    pcfg = point_config(cfg, pt)
    row = {k: pt.get(k, "") for k in ("rho", "delta", "seed")}
    try:
        res = run_experiment(pcfg)
    except ConfigError:
        raise
    except Exception as exc:  # recorded as a row, the sweep continues
        row.update(status=f"error:{type(exc).__name__}")
        return row
    write_run(res, out_dir)
    s = res.summary
    iss = s["iss"] or {}
    row.update(status=res.trace.status, n_steps=s["n_steps"], final_residual=s["final_residual"],
               final_error=s["final_error"], limsup_error=s["limsup_error"],
               alpha=iss.get("alpha"), gamma=iss.get("gamma"), feasible=iss.get("feasible"),
               observed_rate=s["observed_rate"])
    return row


def _cell(x) -> str:
    if x is None or x == "":
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return _fmt(x)
    return str(x)


def run_sweep(cfg: ExperimentConfig) -> tuple[Path, list[dict]]:
    """Run every sweep point (in parallel for ``workers > 1``) and write the merged CSV."""
    pts = sweep_points(cfg)
    out_dir = cfg.out
    runs_dir = out_dir / f"{cfg.label}_runs"
    jobs = [(cfg, pt, runs_dir) for pt in pts]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(jobs))) as pool:
            rows = list(pool.map(_sweep_row, jobs))
    else:
        rows = [_sweep_row(j) for j in jobs]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for row in rows:
        w.writerow([_cell(row.get(c)) for c in SWEEP_COLUMNS])
    path = out_dir / f"{cfg.label}_sweep.csv"
    atomic_write(path, buf.getvalue())
    return path, rows


def sweep_column(rows: list[dict], name: str) -> list:
    return [r.get(name) for r in rows]


__all__ = [
    "ALGORITHMS", "ExperimentConfig", "RunResult", "load_config", "run_experiment",
    "run_sweep", "write_run", "trace_csv", "schema", "sweep_points", "DisturbanceSequence",
]
