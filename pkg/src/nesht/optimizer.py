"""NES gradient ascent with per-step hard thresholding (NESHT).

Each step estimates the smoothed gradient at ``theta_t``, takes the ascent
step ``theta_{t+1/2} = theta_t + alpha * g`` and projects back onto the
k-sparse set with :func:`nesht.ht.trunc`.  Without an ``HtConfig`` the loop is
plain NES.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import FitnessProblem, RngStream, derive_stream, feature_group_norms, l0_norm
from .estimator import EstimatorConfig, averaged_estimate
from .ht import HtConfig, trunc

__all__ = [
    "DivergenceError",
    "OptimizerConfig",
    "OptimizerState",
    "RunAborted",
    "RunRecord",
    "config_hash",
    "evaluate",
    "initial_state",
    "load_checkpoint",
    "run",
    "save_checkpoint",
    "stationarity_proxy",
    "step",
]

log = logging.getLogger(__name__)

#: abort once any coordinate exceeds this magnitude
DIVERGENCE_LIMIT = 1e12


class DivergenceError(RuntimeError):
    """Iterate became non-finite or exceeded :data:`DIVERGENCE_LIMIT`."""

    def __init__(self, message: str, dump: dict):
        super().__init__(message)
        self.dump = dump


class RunAborted(RuntimeError):
    """A run stopped early; ``partial`` holds the steps completed so far."""

    def __init__(self, cause: Exception, partial: "RunRecord"):
        super().__init__(f"run aborted after {partial.steps} steps: {cause}")
        self.cause = cause
        self.partial = partial


@dataclass(frozen=True)
class OptimizerConfig:
    alpha: float
    T: int
    estimator: EstimatorConfig
    ht: HtConfig | None = None
    base_seed: int = 0
    checkpoint_every: int = 0
    eval_rollouts: int = 8
    theta0: tuple[float, ...] | None = None
    #: threads used inside one gradient estimate; never changes results
    workers: int = 1
    #: coordinates per block for the recorded group norms (None = whole vector)
    group_size: int | None = None

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha >= 0):
            raise ValueError(f"alpha must be finite and >= 0, got {self.alpha!r}")
        if int(self.T) != self.T or self.T < 1:
            raise ValueError(f"T must be a positive integer, got {self.T!r}")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")
        if self.eval_rollouts < 0:
            raise ValueError("eval_rollouts must be >= 0")
        if self.theta0 is not None:
            object.__setattr__(self, "theta0", tuple(float(x) for x in self.theta0))

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("workers")  # execution detail, not part of the experiment
        return d


def config_hash(cfg: OptimizerConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class OptimizerState:
    theta: np.ndarray
    t: int
    last_half_step: np.ndarray
    rng: RngStream


@dataclass
class RunRecord:
    scores: list[float] = field(default_factory=list)
    proxies: list[float] = field(default_factory=list)
    l0: list[int] = field(default_factory=list)
    group_norms: list[np.ndarray] = field(default_factory=list)
    final_theta: np.ndarray | None = None
    config: dict = field(default_factory=dict)
    wall_time: float = 0.0
    start_step: int = 0

    @property
    def steps(self) -> int:
        return len(self.scores)


def stationarity_proxy(theta_t, theta_next, alpha: float) -> float:
    """Gradient-mapping norm ``||theta_{t+1} - theta_t|| / alpha``."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha!r}")
    diff = np.asarray(theta_next, dtype=np.float64) - np.asarray(theta_t, dtype=np.float64)
    return float(np.linalg.norm(diff)) / alpha


def initial_state(problem: FitnessProblem, cfg: OptimizerConfig) -> OptimizerState:
    if cfg.theta0 is None:
        theta = np.zeros(problem.dim)
    else:
        theta = np.array(cfg.theta0, dtype=np.float64)
        if theta.shape != (problem.dim,):
            raise ValueError(f"theta0 has length {theta.size}, problem has dim {problem.dim}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta0 contains non-finite entries")
    if cfg.ht is not None:
        theta = trunc(theta, cfg.ht.k)
    return OptimizerState(theta, 0, theta.copy(), derive_stream(cfg.base_seed))


def _guard(theta, t, half):
    if not np.all(np.isfinite(theta)) or np.max(np.abs(theta)) > DIVERGENCE_LIMIT:
        finite = np.isfinite(half)
        dump = {
            "t": t,
            "non_finite": int(np.count_nonzero(~finite)),
            "max_abs": float(np.max(np.abs(half[finite]))) if finite.any() else None,
            "l0": l0_norm(half),
        }
        raise DivergenceError(f"iterate diverged at step {t}: {dump}", dump)


def step(state: OptimizerState, problem: FitnessProblem, cfg: OptimizerConfig) -> OptimizerState:
    """One ascent step at index ``state.t`` followed by truncation."""
    if state.theta.shape != (problem.dim,):
        raise ValueError("state and problem dimensions disagree")
    est = averaged_estimate(
        state.theta, problem, cfg.estimator, state.rng.child(state.t), workers=cfg.workers
    )
    half = state.theta + cfg.alpha * est.g
    _guard(half, state.t, half)
    nxt = half if cfg.ht is None else trunc(half, cfg.ht.k)
    return OptimizerState(nxt, state.t + 1, half, state.rng)


def evaluate(theta, problem: FitnessProblem, cfg: OptimizerConfig, t: int) -> float:
    """Mean return of ``eval_rollouts`` rollouts at ``theta`` on paths ``(t, n, j)``."""
    if cfg.eval_rollouts == 0:
        return float("nan")
    base = derive_stream(cfg.base_seed, (t,))
    i = cfg.estimator.n
    streams = [base.child(i, j) for j in range(1, cfg.eval_rollouts + 1)]
    thetas = np.broadcast_to(np.asarray(theta, dtype=np.float64), (len(streams), problem.dim))
    return float(np.mean(problem.rollout_streams(thetas, streams)))


def run(
    problem: FitnessProblem,
    cfg: OptimizerConfig,
    state: OptimizerState | None = None,
    checkpoint_path: str | os.PathLike | None = None,
) -> RunRecord:
    """Execute steps ``state.t .. cfg.T - 1`` and record per-step metrics.

    Starting from ``state`` (e.g. a loaded checkpoint) continues the exact
    trajectory a single uninterrupted run would produce.  On failure a
    :class:`RunAborted` carrying the partial record is raised.
    """
    if state is None:
        state = initial_state(problem, cfg)
    if cfg.ht is not None and cfg.ht.k > problem.dim:
        raise ValueError(f"k={cfg.ht.k} exceeds problem dimension {problem.dim}")
    gsize = cfg.group_size or problem.dim
    rec = RunRecord(config=cfg.to_dict(), start_step=state.t)
    t0 = time.perf_counter()
    try:
        while state.t < cfg.T:
            nxt = step(state, problem, cfg)
            rec.proxies.append(
                stationarity_proxy(state.theta, nxt.theta, cfg.alpha) if cfg.alpha > 0 else 0.0
            )
            rec.scores.append(evaluate(nxt.theta, problem, cfg, state.t))
            rec.l0.append(l0_norm(nxt.theta))
            rec.group_norms.append(feature_group_norms(nxt.theta, gsize))
            state = nxt
            if checkpoint_path and cfg.checkpoint_every and state.t % cfg.checkpoint_every == 0:
                save_checkpoint(checkpoint_path, state, cfg)
    except Exception as exc:
        rec.final_theta = state.theta.copy()
        rec.wall_time = time.perf_counter() - t0
        log.error("run aborted at step %d: %s", state.t, exc)
        raise RunAborted(exc, rec) from exc
    rec.final_theta = state.theta.copy()
    rec.wall_time = time.perf_counter() - t0
    return rec


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path, state: OptimizerState, cfg: OptimizerConfig) -> None:
    """Write ``state`` as JSON; floats use shortest round-trip repr, so reloads are exact."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "config_hash": config_hash(cfg),
        "t": state.t,
        "base_seed": state.rng.base_seed,
        "rng_path": list(state.rng.path),
        "theta": [repr(float(x)) for x in state.theta],
        "last_half_step": [repr(float(x)) for x in state.last_half_step],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        json.dump(payload, fh, indent=1)
    os.replace(tmp, path)


def load_checkpoint(path, cfg: OptimizerConfig) -> OptimizerState:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')!r}")
    if payload["config_hash"] != config_hash(cfg):
        raise ValueError("checkpoint was written under a different optimizer config")
    theta = np.array([float(x) for x in payload["theta"]])
    half = np.array([float(x) for x in payload["last_half_step"]])
    rng = RngStream(payload["base_seed"], tuple(payload["rng_path"]))
    return OptimizerState(theta, int(payload["t"]), half, rng)


def with_seed(cfg: OptimizerConfig, seed: int) -> OptimizerConfig:
    return replace(cfg, base_seed=int(seed))
