"""Hyperparameter search: univariate TPE sampling with median pruning.

The sampler follows the usual Parzen-estimator recipe. After
``n_startup_trials`` uniform draws, completed trials are ranked by their
final value. The best ``ceil(gamma * n)`` form the "good" group and the rest
form the "bad" group. Each parameter gets a Gaussian mixture per group,
with bandwidth from Scott's rule (floored at 1e-3 of the range). Candidates
come from the good mixture, and the one with the largest good/bad density
ratio wins. Log-scale parameters are modelled in log space.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from palletmap.errors import ConfigError, StudyError

logger = logging.getLogger(__name__)

RUNNING, COMPLETE, PRUNED, FAILED = "running", "complete", "pruned", "failed"


@dataclass(frozen=True)
class ParamRange:
    lower: float
    upper: float
    scale: str = "linear"

    def __post_init__(self) -> None:
        if self.scale not in ("linear", "log"):
            raise ConfigError(f"scale must be 'linear' or 'log', got {self.scale!r}")
        if not self.lower < self.upper:
            raise ConfigError(f"lower bound {self.lower} must be below upper bound {self.upper}")
        if self.scale == "log" and self.lower <= 0:
            raise ConfigError("log-scale parameters need a positive lower bound")

    def to_internal(self, x: float) -> float:
        return math.log(x) if self.scale == "log" else x

    def from_internal(self, u: float) -> float:
        x = math.exp(u) if self.scale == "log" else u
        return min(max(x, self.lower), self.upper)

    @property
    def internal_bounds(self) -> tuple[float, float]:
        return self.to_internal(self.lower), self.to_internal(self.upper)


ParamSpace = Mapping[str, ParamRange]


def load_space(path: Path | str) -> dict[str, ParamRange]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return parse_space(doc)


def parse_space(doc: Mapping[str, Mapping]) -> dict[str, ParamRange]:
    if not doc:
        raise ConfigError("parameter space is empty")
    try:
        return {name: ParamRange(float(s["lower"]), float(s["upper"]), s.get("scale", "linear")) for name, s in doc.items()}
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed parameter space: {exc}") from None


@dataclass
class TrialRecord:
    trial_id: int
    params: dict[str, float]
    intermediate: dict[int, float] = field(default_factory=dict)
    value: float | None = None
    state: str = RUNNING
    error: str | None = None

    def report(self, step: int, value: float) -> None:
        if self.intermediate and step <= max(self.intermediate):
            raise ValueError(f"intermediate steps must strictly increase; got {step} after {max(self.intermediate)}")
        self.intermediate[step] = float(value)

    def to_json(self) -> dict:
        return {
            "trial_id": self.trial_id,
            "params": self.params,
            "intermediate": {str(k): v for k, v in self.intermediate.items()},
            "value": self.value,
            "state": self.state,
            "error": self.error,
        }


@dataclass(frozen=True)
class StudyConfig:
    n_trials: int = 20
    n_startup_trials: int = 5
    gamma: float = 0.25
    n_candidates: int = 24
    warmup_steps: int = 5
    direction: str = "maximize"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trials < 1:
            raise ConfigError("n_trials must be positive")
        if not 0 <= self.n_startup_trials <= self.n_trials:
            raise ConfigError("n_startup_trials must lie in [0, n_trials]")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.n_candidates < 1:
            raise ConfigError("n_candidates must be positive")
        if self.direction != "maximize":
            raise ConfigError("only direction='maximize' is supported")


def scott_bandwidth(xs: np.ndarray, span: float) -> float:
    floor = 1e-3 * span
    if xs.size < 2:
        return floor
    return max(float(np.std(xs, ddof=1)) * xs.size ** (-1 / 5), floor)


def _mixture_logpdf(x: np.ndarray, centers: np.ndarray, bw: float) -> np.ndarray:
    z = (x[:, None] - centers[None, :]) / bw
    log_k = -0.5 * z * z - math.log(bw * math.sqrt(2 * math.pi))
    m = log_k.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(log_k - m).mean(axis=1, keepdims=True)))[:, 0]


def split_good_bad(history: list[TrialRecord], gamma: float) -> tuple[list[TrialRecord], list[TrialRecord]]:
    """Completed trials sorted best-first (ties by id) and cut at ``ceil(gamma * n)``."""
    done = [t for t in history if t.state == COMPLETE and t.value is not None]
    done.sort(key=lambda t: (-t.value, t.trial_id))
    n_good = math.ceil(gamma * len(done))
    return done[:n_good], done[n_good:]


def sample(
    space: ParamSpace, history: list[TrialRecord], cfg: StudyConfig, rng: np.random.Generator
) -> dict[str, float]:
    if not space:
        raise ConfigError("parameter space is empty")
    good, bad = split_good_bad(history, cfg.gamma)
    n_done = len(good) + len(bad)
    out = {}
    for name in sorted(space):
        pr = space[name]
        lo, hi = pr.internal_bounds
        if n_done < cfg.n_startup_trials or not good:
            out[name] = pr.from_internal(rng.uniform(lo, hi))
            continue
        span = hi - lo
        g = np.array([pr.to_internal(t.params[name]) for t in good])
        bw_g = scott_bandwidth(g, span)
        picks = g[rng.integers(0, g.size, size=cfg.n_candidates)]
        cand = np.clip(picks + rng.normal(0.0, bw_g, size=cfg.n_candidates), lo, hi)
        log_l = _mixture_logpdf(cand, g, bw_g)
        if bad:
            b = np.array([pr.to_internal(t.params[name]) for t in bad])
            log_g = _mixture_logpdf(cand, b, scott_bandwidth(b, span))
        else:
            log_g = np.full(cand.size, -math.log(span))
        out[name] = pr.from_internal(float(cand[int(np.argmax(log_l - log_g))]))
    return out


def median(values: list[float]) -> float:
    s = sorted(values)
    n = len(s)
    mid = n // 2
    return s[mid] if n % 2 else (s[mid - 1] + s[mid]) / 2


def should_prune(trial: TrialRecord, peers: list[TrialRecord], step: int, cfg: StudyConfig) -> bool:
    """Median stopping rule.

    Never prunes before ``cfg.warmup_steps``; afterwards prunes when the
    trial's value at ``step`` is strictly below the median of the peers that
    recorded a value at that same step.
    """
    if step not in trial.intermediate:
        raise ValueError(f"trial {trial.trial_id} has no value at step {step}")
    if step < cfg.warmup_steps:
        return False
    others = [p.intermediate[step] for p in peers if p is not trial and step in p.intermediate]
    if not others:
        return False
    return trial.intermediate[step] < median(others)


class TrialPruned(Exception):
    """Raised from ``report`` to stop a trial the pruner rejected."""


Objective = Callable[[dict[str, float], Callable[[int, float], None]], float]


@dataclass
class StudyResult:
    best: TrialRecord
    history: list[TrialRecord]


def run_study(space: ParamSpace, cfg: StudyConfig, objective: Objective) -> StudyResult:
    """Run ``cfg.n_trials`` trials sequentially and return the best completed one.

    The objective receives the sampled parameters and a ``report(step, value)``
    callback; ``report`` raises :class:`TrialPruned` when the median rule fires.
    Exceptions other than pruning mark the trial failed and the study goes on.
    """
    rng = np.random.default_rng(cfg.seed)
    history: list[TrialRecord] = []
    for tid in range(cfg.n_trials):
        trial = TrialRecord(tid, sample(space, history, cfg, rng))
        history.append(trial)

        def report(step: int, value: float, trial: TrialRecord = trial) -> None:
            trial.report(step, value)
            if should_prune(trial, history, step, cfg):
                raise TrialPruned(f"trial {trial.trial_id} pruned at step {step}")

        try:
            value = float(objective(dict(trial.params), report))
        except TrialPruned:
            trial.state = PRUNED
            continue
        except Exception as exc:  # objective bugs must not kill the study
            logger.warning("trial %d failed: %s", tid, exc)
            trial.state, trial.error = FAILED, f"{type(exc).__name__}: {exc}"
            continue
        if not math.isfinite(value):
            trial.state, trial.error = FAILED, f"non-finite objective {value}"
            continue
        trial.value, trial.state = value, COMPLETE

    done = [t for t in history if t.state == COMPLETE]
    if not done:
        raise StudyError("no trial completed")
    best = max(done, key=lambda t: (t.value, -t.trial_id))
    return StudyResult(best, history)
