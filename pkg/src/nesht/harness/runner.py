"""Run orchestration, persistence and summary metrics.

Layout of an output directory::

    manifest.json             config, config hash, versions, seeds, wall times
    summary.csv               one SummaryRow per run (recomputed from the files below)
    runs/<tag>/trajectory.csv step, score, proxy, l0, g0 .. gK
    runs/<tag>/theta.csv      final iterate
    theory_check.csv          (theory-check mode)
    variance_probe.csv        (variance-probe mode)

All CSVs use shortest round-trip float formatting and are written to a temp
file then renamed, so identical configs give byte-identical CSVs.  Wall
times live only in the manifest.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import platform
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..core import derive_stream
from ..estimator import EstimatorConfig, sample_estimates
from ..ht import HtConfig, k_from_ratio
from ..optimizer import OptimizerConfig, RunAborted, RunRecord, run
from ..theory import (
    lipschitz_probe,
    measured_variance_bound,
    smoothing_oracle,
    variance_bound,
)
from .config import ExperimentConfig
from .registry import build_problem, true_support

log = logging.getLogger(__name__)

EVAL_NOTE = (
    "score is evaluated after every step on eval_rollouts fresh rollouts at the "
    "current iterate; mean_last10 averages the last 10 of those evaluations"
)


# ---------------------------------------------------------------------------
# Formatting and files
# ---------------------------------------------------------------------------


def fmt(x) -> str:
    """Shortest round-trip text for a number ('.' decimal point, no locale)."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in r])
    return buf.getvalue()


def trajectory_csv(rec: RunRecord) -> str:
    groups = len(rec.group_norms[0]) if rec.group_norms else 0
    header = ["step", "score", "proxy", "l0"] + [f"g{i}" for i in range(groups)]
    rows = []
    for s in range(rec.steps):
        step = rec.start_step + s + 1
        rows.append([step, rec.scores[s], rec.proxies[s], rec.l0[s], *rec.group_norms[s]])
    return _csv_text(header, rows)


def read_trajectory(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = {h: [r[i] for r in body] for i, h in enumerate(header)}
    out = {
        "step": np.array([int(v) for v in cols["step"]], dtype=np.int64),
        "score": np.array([float(v) for v in cols["score"]]),
        "proxy": np.array([float(v) for v in cols["proxy"]]),
        "l0": np.array([int(v) for v in cols["l0"]], dtype=np.int64),
    }
    gcols = [h for h in header if h.startswith("g")]
    out["groups"] = np.array([[float(r[header.index(g)]) for g in gcols] for r in body]).reshape(
        len(body), len(gcols)
    )
    return out


def theta_csv(theta) -> str:
    return _csv_text(["index", "value"], [[i, float(v)] for i, v in enumerate(theta)])


def read_theta(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([float(v) for _, v in rows])


def heatmap_export(rec: RunRecord, group_size: int | None = None) -> str:
    """Steps x feature-groups matrix of L1 group norms as CSV text."""
    recorded = rec.config.get("group_size")
    if group_size is not None and recorded not in (None, group_size):
        raise ValueError(f"run recorded group norms with group_size={recorded}, not {group_size}")
    if not rec.group_norms:
        raise ValueError("run has no group-norm series")
    groups = len(rec.group_norms[0])
    rows = [[rec.start_step + s + 1, *g] for s, g in enumerate(rec.group_norms)]
    return _csv_text(["step"] + [str(i) for i in range(groups)], rows)


def read_heatmap(path_or_text) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`heatmap_export`; returns ``(steps, matrix)``."""
    text = str(path_or_text)
    if "\n" not in text:
        text = Path(text).read_text()
    rows = list(csv.reader(io.StringIO(text)))[1:]
    steps = np.array([int(r[0]) for r in rows], dtype=np.int64)
    mat = np.array([[float(v) for v in r[1:]] for r in rows])
    return steps, mat


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def support_metrics(theta, support) -> tuple[float, float]:
    """``(recall, precision)`` of the nonzero set of ``theta`` against ``support``."""
    S = {int(i) for i in support}
    if not S:
        raise ValueError("true support must be non-empty")
    found = {int(i) for i in np.flatnonzero(np.asarray(theta))}
    hit = len(found & S)
    return hit / len(S), hit / max(1, len(found))


@dataclass
class SummaryRow:
    problem: str
    beta: float | None
    k: int | None
    seed: int
    final_score: float
    mean_last10: float
    recall: float | None
    precision: float | None
    final_proxy: float
    final_distance: float | None
    steps: int
    status: str = "ok"
    wall_time: float = field(default=0.0, compare=False)

    CSV_FIELDS = (
        "problem", "beta", "k", "seed", "final_score", "mean_last10", "recall",
        "precision", "final_proxy", "final_distance", "steps", "status",
    )

    def csv_row(self):
        return ["" if getattr(self, f) is None else getattr(self, f) for f in self.CSV_FIELDS]


def summarize_run(run_dir, problem_name, beta, k, seed, problem, status="ok") -> SummaryRow:
    """Build a SummaryRow purely from the files in ``run_dir``."""
    run_dir = Path(run_dir)
    tr = read_trajectory(run_dir / "trajectory.csv")
    theta = read_theta(run_dir / "theta.csv")
    S = true_support(problem)
    recall = precision = dist = None
    if S is not None and S.size:
        recall, precision = support_metrics(theta, S)
        dist = float(np.linalg.norm(theta - np.asarray(problem.theta_star)))
    nan = float("nan")
    return SummaryRow(
        problem=problem_name,
        beta=beta,
        k=k,
        seed=int(seed),
        final_score=float(tr["score"][-1]) if tr["score"].size else nan,
        mean_last10=float(np.mean(tr["score"][-10:])) if tr["score"].size else nan,
        recall=recall,
        precision=precision,
        final_proxy=float(tr["proxy"][-1]) if tr["proxy"].size else nan,
        final_distance=dist,
        steps=int(tr["step"].size),
        status=status,
    )


def read_summary(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunSpec:
    beta: float | None
    k: int | None
    seed: int

    @property
    def tag(self) -> str:
        if self.k is None:
            return f"vanilla_seed={self.seed}"
        if self.beta is not None:
            return f"beta={fmt(self.beta)}_seed={self.seed}"
        return f"k={self.k}_seed={self.seed}"


def run_specs(cfg: ExperimentConfig, dim: int) -> list[RunSpec]:
    """Expand the config into concrete runs; ``beta = 0`` means vanilla NES."""
    specs = []
    if cfg.mode == "sweep":
        for b in cfg.betas:
            k = None if b == 0 else k_from_ratio(dim, b)
            specs += [RunSpec(b, k, s) for s in cfg.seeds]
    else:
        ht = cfg.ht
        if ht is None:
            beta, k = None, None
        elif "beta" in ht:
            beta = float(ht["beta"])
            k = None if beta == 0 else k_from_ratio(dim, beta)
        else:
            beta, k = None, int(ht["k"])
            if k > dim:
                raise ValueError(f"ht.k={k} exceeds problem dimension {dim}")
        specs = [RunSpec(beta, k, s) for s in cfg.seeds]
    return specs


def optimizer_config(cfg: ExperimentConfig, spec: RunSpec, workers: int = 1) -> OptimizerConfig:
    o = cfg.optimizer
    return OptimizerConfig(
        alpha=float(o["alpha"]),
        T=int(o["T"]),
        estimator=EstimatorConfig(float(o["sigma"]), int(o.get("n", 1)), int(o.get("N", 1))),
        ht=None if spec.k is None else HtConfig(spec.k),
        base_seed=int(spec.seed),
        checkpoint_every=int(o.get("checkpoint_every", 0)),
        eval_rollouts=int(o.get("eval_rollouts", 8)),
        theta0=tuple(o["theta0"]) if "theta0" in o else None,
        workers=workers,
        group_size=cfg.group_size,
    )


@dataclass
class Outcome:
    rows: list
    manifest: dict
    failures: list
    table: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def _versions():
    import scipy

    return {
        "nesht": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def _manifest(cfg: ExperimentConfig, extra: dict) -> dict:
    m = {
        "schema_version": 1,
        "mode": cfg.mode,
        "config_hash": cfg.config_hash(),
        "config": cfg.to_dict(),
        "seeds": list(cfg.seeds),
        "versions": _versions(),
        "eval_cadence": EVAL_NOTE,
    }
    m.update(extra)
    return m


def _one_run(problem, cfg, spec, out_dir, inner_workers):
    ocfg = optimizer_config(cfg, spec, inner_workers)
    run_dir = Path(out_dir) / "runs" / spec.tag
    ckpt = run_dir / "checkpoint.json" if ocfg.checkpoint_every else None
    status, err = "ok", None
    try:
        rec = run(problem, ocfg, checkpoint_path=ckpt)
    except RunAborted as exc:
        rec, status, err = exc.partial, "aborted", str(exc.cause)
    except Exception as exc:  # invalid combination discovered at run time
        rec, status, err = RunRecord(config=ocfg.to_dict(), final_theta=None), "aborted", str(exc)
    if rec.final_theta is None:
        rec.final_theta = np.zeros(problem.dim)
    atomic_write(run_dir / "trajectory.csv", trajectory_csv(rec))
    atomic_write(run_dir / "theta.csv", theta_csv(rec.final_theta))
    return rec, status, err


def execute_runs(cfg: ExperimentConfig, out_dir, workers: int = 1) -> Outcome:
    """Run mode or sweep mode: every (beta, seed) run, then summary and manifest."""
    problem = build_problem(cfg.problem)
    specs = run_specs(cfg, problem.dim)
    workers = max(1, int(workers))
    pool_size = min(workers, len(specs))
    inner = max(1, workers // pool_size)

    def task(spec):
        return _one_run(problem, cfg, spec, out_dir, inner)

    if pool_size > 1:
        with ThreadPoolExecutor(max_workers=pool_size) as pool:
            results = list(pool.map(task, specs))
    else:
        results = [task(s) for s in specs]

    rows, runs, failures = [], [], []
    for spec, (rec, status, err) in zip(specs, results):
        row = summarize_run(
            Path(out_dir) / "runs" / spec.tag, cfg.problem["name"], spec.beta, spec.k,
            spec.seed, problem, status,
        )
        row.wall_time = rec.wall_time
        rows.append(row)
        entry = {"tag": spec.tag, "beta": spec.beta, "k": spec.k, "seed": spec.seed,
                 "status": status, "steps": rec.steps, "wall_time": rec.wall_time}
        if err:
            entry["error"] = err
            failures.append({"run": spec.tag, "error": err})
        runs.append(entry)

    atomic_write(Path(out_dir) / "summary.csv", _csv_text(SummaryRow.CSV_FIELDS, [r.csv_row() for r in rows]))
    manifest = _manifest(cfg, {"dim": problem.dim, "runs": runs, "status": "failed" if failures else "ok"})
    atomic_write(Path(out_dir) / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return Outcome(rows, manifest, failures)


# ---------------------------------------------------------------------------
# Theory checks and variance probes
# ---------------------------------------------------------------------------


@dataclass
class CheckResult:
    check: str
    measured: float | None
    bound: float | None
    se: float | None
    status: str  # pass | fail | skipped
    note: str = ""

    FIELDS = ("check", "measured", "bound", "se", "status", "note")

    def csv_row(self):
        return ["" if getattr(self, f) is None else getattr(self, f) for f in self.FIELDS]


def _probe_theta(problem, section):
    if "theta" in section:
        theta = np.array(section["theta"], dtype=np.float64)
        if theta.shape != (problem.dim,):
            raise ValueError(f"theta has length {theta.size}, problem has dim {problem.dim}")
        return theta
    return np.zeros(problem.dim)


def _reference(problem, theta, sigma, stream, samples):
    exact = problem.exact_smoothed(theta, sigma)
    if exact is not None:
        return exact[1], "closed form"
    ref = smoothing_oracle(problem, theta, sigma, max(1000, samples), stream)
    return ref.grad, f"oracle M={ref.samples}"


def theory_checks(problem, section: dict, seed: int) -> list[CheckResult]:
    """Smoothness, variance envelope, single-estimate second moment and unbiasedness checks."""
    sigma = float(section.get("sigma", 1.0))
    n, N = int(section.get("n", 1)), int(section.get("N", 1))
    reps = int(section.get("reps", 2000))
    pairs = int(section.get("pairs", 200))
    samples = int(section.get("samples", 20000))
    theta = _probe_theta(problem, section)
    root = derive_stream(seed, (0xC4EC,))
    B, d = problem.bound_B, problem.dim
    out = []

    if B is None:
        out.append(CheckResult("smoothness", None, None, None, "skipped", "no bound B"))
    else:
        pr = lipschitz_probe(problem, sigma, pairs, root.child(1), samples=samples)
        ok = pr.max_ratio <= pr.L + 5 * pr.max_ratio_se
        out.append(CheckResult("smoothness", pr.max_ratio, pr.L, pr.max_ratio_se,
                               "pass" if ok else "fail", f"{pairs} pairs, slack 5 SE"))

    ref, how = _reference(problem, theta, sigma, root.child(2), samples)
    cfg = EstimatorConfig(sigma, n, N)
    G = sample_estimates(theta, problem, cfg, root.child(3), reps)
    if B is None:
        out.append(CheckResult("variance_envelope", None, None, None, "skipped", "no bound B"))
    else:
        C = problem.var_bound_C
        note = "C from problem"
        if C is None:
            C = measured_variance_bound(problem, theta, sigma, root.child(4))
            note = "C measured"
        sq = np.einsum("ij,ij->i", G - ref, G - ref)
        mean, se = float(sq.mean()), float(sq.std(ddof=1) / math.sqrt(reps))
        bound = variance_bound(C, B, d, sigma, n, N)
        out.append(CheckResult("variance_envelope", mean, bound, se,
                               "pass" if mean - 3 * se <= bound else "fail",
                               f"{note}; reference {how}; n={n} N={N}; slack 3 SE"))
        G1 = sample_estimates(theta, problem, EstimatorConfig(sigma), root.child(5), reps)
        m2 = np.einsum("ij,ij->i", G1, G1)
        mean, se = float(m2.mean()), float(m2.std(ddof=1) / math.sqrt(reps))
        bound = d * B**2 / sigma**2
        out.append(CheckResult("single_second_moment", mean, bound, se,
                               "pass" if mean - 3 * se <= bound else "fail", "slack 3 SE"))

    mean = G.mean(axis=0)
    se = G.std(axis=0, ddof=1) / math.sqrt(reps)
    z = np.abs(mean - ref) / np.where(se > 0, se, np.inf)
    worst = int(np.argmax(z))
    out.append(CheckResult("unbiasedness", float(z[worst]), 4.0, float(se[worst]),
                           "pass" if z[worst] <= 4 else "fail",
                           f"max |z| over {d} coordinates; reference {how}"))
    return out


def execute_theory_check(cfg: ExperimentConfig, out_dir) -> Outcome:
    problem = build_problem(cfg.problem)
    table = theory_checks(problem, cfg.theory_check, int(cfg.theory_check.get("seed", cfg.seeds[0])))
    atomic_write(Path(out_dir) / "theory_check.csv", _csv_text(CheckResult.FIELDS, [r.csv_row() for r in table]))
    failures = [{"check": r.check, "measured": r.measured, "bound": r.bound} for r in table if r.status == "fail"]
    manifest = _manifest(cfg, {"checks": [r.check for r in table], "status": "failed" if failures else "ok"})
    atomic_write(Path(out_dir) / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return Outcome([], manifest, failures, table)


PROBE_FIELDS = ("n", "N", "sigma", "reps", "empirical", "se", "bound", "C", "status")


def variance_probe(problem, section: dict, seed: int) -> list[list]:
    """Empirical ``E||g - grad F_sigma||^2`` against the variance envelope over a grid."""
    theta = _probe_theta(problem, section)
    reps = int(section.get("reps", 1000))
    root = derive_stream(seed, (0x7A1E,))
    rows = []
    for a, sigma in enumerate(section.get("sigma", [1.0])):
        ref, _ = _reference(problem, theta, sigma, root.child(a, 0), 100000)
        C = section.get("C", problem.var_bound_C)
        if C is None and problem.bound_B is not None:
            C = measured_variance_bound(problem, theta, sigma, root.child(a, 1))
        for n in section.get("n", [1]):
            for N in section.get("N", [1]):
                cfg = EstimatorConfig(float(sigma), int(n), int(N))
                G = sample_estimates(theta, problem, cfg, root.child(a, 2, int(n), int(N)), reps)
                sq = np.einsum("ij,ij->i", G - ref, G - ref)
                mean, se = float(sq.mean()), float(sq.std(ddof=1) / math.sqrt(reps))
                if problem.bound_B is None:
                    bound, status = None, "no-bound"
                else:
                    bound = variance_bound(C, problem.bound_B, problem.dim, sigma, n, N)
                    status = "pass" if mean - 3 * se <= bound else "fail"
                rows.append([n, N, float(sigma), reps, mean, se, bound, C, status])
    return rows


def execute_variance_probe(cfg: ExperimentConfig, out_dir) -> Outcome:
    problem = build_problem(cfg.problem)
    rows = variance_probe(problem, cfg.variance_probe, int(cfg.variance_probe.get("seed", cfg.seeds[0])))
    text = _csv_text(PROBE_FIELDS, [["" if v is None else v for v in r] for r in rows])
    atomic_write(Path(out_dir) / "variance_probe.csv", text)
    failures = [dict(zip(PROBE_FIELDS, r)) for r in rows if r[-1] == "fail"]
    manifest = _manifest(cfg, {"status": "failed" if failures else "ok"})
    atomic_write(Path(out_dir) / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return Outcome([], manifest, failures, rows)


def execute(cfg: ExperimentConfig, out_dir, workers: int = 1) -> Outcome:
    if cfg.mode in ("run", "sweep"):
        return execute_runs(cfg, out_dir, workers)
    if cfg.mode == "theory-check":
        return execute_theory_check(cfg, out_dir)
    return execute_variance_probe(cfg, out_dir)
