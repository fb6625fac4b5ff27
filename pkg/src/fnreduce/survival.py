"""Cox proportional-hazards regression and the survival score ``v``.

Each metric record is one sample: its covariates are the single-frame
metrics, its duration the number of frames until the track's last
observation, and the event flag says whether the track ended before the
sequence did (otherwise the sample is censored).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence as Seq

import numpy as np

log = logging.getLogger(__name__)

SURVIVAL_COLUMNS = [
    "S", "S_in", "S_bd", "S_rel", "S_in_rel",
    "D_mean", "D_in", "D_bd", "D_rel", "D_in_rel",
    "center_v", "center_h", "score", "occlusion", "r",
]
MODEL_FORMAT = "fnreduce-cox"
MODEL_VERSION = 1


class ConvergenceError(RuntimeError):
    pass


@dataclass
class SurvivalData:
    covariates: np.ndarray
    durations: np.ndarray
    events: np.ndarray

    def __post_init__(self):
        self.covariates = np.asarray(self.covariates, dtype=float)
        if self.covariates.ndim == 1:
            self.covariates = self.covariates[:, None]
        self.durations = np.asarray(self.durations, dtype=float)
        self.events = np.asarray(self.events, dtype=bool)
        n = len(self.durations)
        if self.covariates.shape[0] != n or self.events.shape != (n,):
            raise ValueError("covariates, durations and events must have equal length")
        if np.any(self.durations < 0):
            raise ValueError("durations must be non-negative")
        if not np.all(np.isfinite(self.covariates)):
            raise ValueError("covariates must be finite")


@dataclass
class CoxModel:
    coef: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    times: np.ndarray
    cumhaz: np.ndarray
    columns: list[str] = field(default_factory=list)
    ridge: float = 1e-4
    iterations: int = 0

    def standardize(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return (x - self.mean) / self.scale

    def linear_predictor(self, x) -> np.ndarray:
        return self.standardize(x) @ self.coef

    @property
    def raw_coef(self) -> np.ndarray:
        """Coefficients on the original covariate scale."""
        return self.coef / self.scale

    def baseline(self, t: float) -> float:
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return float(self.cumhaz[k]) if k >= 0 else 0.0

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "columns": list(self.columns),
            "coef": self.coef.tolist(),
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "times": self.times.tolist(),
            "cumhaz": self.cumhaz.tolist(),
            "ridge": self.ridge,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CoxModel":
        if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
            raise ValueError(f"not a {MODEL_FORMAT} v{MODEL_VERSION} model")
        return cls(
            coef=np.array(d["coef"], dtype=float),
            mean=np.array(d["mean"], dtype=float),
            scale=np.array(d["scale"], dtype=float),
            times=np.array(d["times"], dtype=float),
            cumhaz=np.array(d["cumhaz"], dtype=float),
            columns=list(d["columns"]),
            ridge=float(d["ridge"]),
            iterations=int(d.get("iterations", 0)),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "CoxModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


class _RiskSets:
    """Sorted layout for Breslow sums: risk set of time t is {j : T_j >= t}."""

    def __init__(self, durations: np.ndarray, events: np.ndarray):
        order = np.argsort(-durations, kind="stable")
        self.order = order
        d = durations[order]
        self.events = events[order]
        # last position (in descending order) of each tie group
        last = np.empty(len(d), dtype=int)
        end = len(d) - 1
        for k in range(len(d) - 1, -1, -1):
            if k < len(d) - 1 and d[k] != d[k + 1]:
                end = k
            last[k] = end
        self.group_end = last
        self.sorted_durations = d


def _partial_terms(x: np.ndarray, beta: np.ndarray, rs: _RiskSets, hessian: bool = True):
    """Log partial likelihood, gradient and Hessian (Breslow ties)."""
    xs = x[rs.order]
    eta = xs @ beta
    shift = eta.max() if eta.size else 0.0
    w = np.exp(eta - shift)
    s0 = np.cumsum(w)[rs.group_end]
    s1 = np.cumsum(w[:, None] * xs, axis=0)[rs.group_end]
    ev = rs.events
    loglik = float(np.sum(eta[ev] - shift - np.log(s0[ev])))
    mean_r = s1[ev] / s0[ev][:, None]
    grad = xs[ev].sum(axis=0) - mean_r.sum(axis=0)
    if not hessian:
        return loglik, grad, None
    s2 = np.cumsum(w[:, None, None] * xs[:, :, None] * xs[:, None, :], axis=0)[rs.group_end]
    info = (s2[ev] / s0[ev][:, None, None]).sum(axis=0) - mean_r.T @ mean_r
    return loglik, grad, info


def partial_log_likelihood(x, durations, events, beta) -> float:
    """Unpenalized Breslow log partial likelihood on the given covariate scale."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    rs = _RiskSets(np.asarray(durations, dtype=float), np.asarray(events, dtype=bool))
    return _partial_terms(x, np.atleast_1d(np.asarray(beta, dtype=float)), rs, hessian=False)[0]


def fit_cox(data: SurvivalData, columns: Seq[str] = (), ridge: float = 1e-4,
            tol: float = 1e-8, max_iter: int = 100) -> CoxModel:
    """Newton-Raphson with step halving on the ridge-penalized partial likelihood.

    Covariates are standardized first; constant ones get a zero coefficient.
    """
    x, dur, ev = data.covariates, data.durations, data.events
    n, p = x.shape
    if ev.sum() < 2:
        raise ValueError(f"need at least two events to fit a Cox model, got {int(ev.sum())}")
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    # exact comparison: the std of a constant float column can be a few ulps
    const = np.all(x == x[:1], axis=0) if n else np.ones(p, dtype=bool)
    if const.any():
        names = [columns[k] if k < len(columns) else str(k) for k in np.flatnonzero(const)]
        log.warning("constant covariates get zero coefficients: %s", ", ".join(names))
    scale = np.where(const, 1.0, scale)
    z = (x - mean) / scale
    active = ~const
    za = z[:, active]
    rs = _RiskSets(dur, ev)

    def objective(b):
        ll, g, h = _partial_terms(za, b, rs)
        return ll - 0.5 * ridge * b @ b, g - ridge * b, h + ridge * np.eye(len(b))

    beta = np.zeros(int(active.sum()))
    obj, grad, info = objective(beta)
    it = 0
    while np.max(np.abs(grad), initial=0.0) >= tol:
        if it >= max_iter:
            raise ConvergenceError(
                f"Cox fit did not converge in {max_iter} iterations: "
                f"max|grad|={np.max(np.abs(grad)):.3e}, objective={obj:.6f}"
            )
        step = np.linalg.solve(info, grad)
        t = 1.0
        while True:
            cand = beta + t * step
            c_obj, c_grad, c_info = objective(cand)
            if c_obj >= obj - 1e-12 * abs(obj) or t < 1e-10:
                break
            t *= 0.5
        if np.array_equal(cand, beta):
            # numerically stationary: the step no longer changes beta
            break
        beta, obj, grad, info = cand, c_obj, c_grad, c_info
        it += 1

    coef = np.zeros(p)
    coef[active] = beta
    times, cumhaz = breslow_baseline(z @ coef, dur, ev)
    return CoxModel(coef, mean, scale, times, cumhaz, list(columns), ridge, it)


def breslow_baseline(eta: np.ndarray, durations: np.ndarray, events: np.ndarray):
    """Cumulative baseline hazard at each distinct event time."""
    times = np.unique(durations[events])
    w = np.exp(eta)
    increments = []
    for t in times:
        d = np.sum(events & (durations == t))
        increments.append(d / w[durations >= t].sum())
    return times, np.cumsum(increments)


def survival_score(model: CoxModel | None, covariates, horizon: float = 10.0) -> np.ndarray:
    """Probability of surviving ``horizon`` more frames, S(h | x) = exp(-H0(h) exp(beta.x))."""
    if model is None:
        raise ValueError("survival model is not fitted")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    return np.exp(-model.baseline(horizon) * np.exp(model.linear_predictor(covariates)))


# -- metric records <-> survival samples --------------------------------------


def survival_columns(records) -> list[str]:
    """Covariate columns usable for these records (depth columns need depth)."""
    cols = []
    for c in SURVIVAL_COLUMNS:
        if all(not math.isnan(float(getattr(r, c))) for r in records):
            cols.append(c)
    return cols


def survival_data(records, num_frames: dict[str, int], columns: Seq[str]) -> SurvivalData:
    """Durations and events from track extents; ``num_frames`` per sequence."""
    last = {}
    for r in records:
        k = (r.sequence, r.track_id)
        last[k] = max(last.get(k, r.frame), r.frame)
    x = np.array([[float(getattr(r, c)) for c in columns] for r in records], dtype=float)
    dur = np.array([last[(r.sequence, r.track_id)] - r.frame for r in records], dtype=float)
    ev = np.array([last[(r.sequence, r.track_id)] < num_frames[r.sequence] - 1 for r in records])
    return SurvivalData(x.reshape(len(records), len(columns)), dur, ev)


def null_model(columns: Seq[str]) -> CoxModel:
    """Zero coefficients and zero baseline hazard: every score is 1."""
    p = len(columns)
    return CoxModel(np.zeros(p), np.zeros(p), np.ones(p), np.empty(0), np.empty(0), list(columns))


def fit_records(records, num_frames: dict[str, int], ridge: float = 1e-4) -> CoxModel:
    """Cox fit on metric records; with fewer than two ended tracks there is
    nothing to estimate and the null model is returned instead."""
    cols = survival_columns(records)
    data = survival_data(records, num_frames, cols)
    if data.events.sum() < 2:
        log.warning("only %d ended track observations; survival score fixed at 1", int(data.events.sum()))
        return null_model(cols)
    return fit_cox(data, cols, ridge=ridge)


def attach_survival(records, model: CoxModel, horizon: float = 10.0) -> None:
    """Fill ``v`` of every record in place."""
    if not records:
        return
    x = np.array([[float(getattr(r, c)) for c in model.columns] for r in records], dtype=float)
    v = survival_score(model, x, horizon)
    for r, val in zip(records, v):
        r.v = float(val)
