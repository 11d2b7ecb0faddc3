"""Bound-constrained limited-memory BFGS driver.

Wraps :func:`scipy.optimize.minimize` (method ``L-BFGS-B``) with per-variable
scaling, a relative step-length stopping rule and an iterate trace.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize as _scipy_minimize


@dataclass
class OptimizerConfig:
    memory: int = 10
    max_iters: int = 500
    grad_tol: float = 1e-8
    step_tol: float = 1e-10
    max_evals: int | None = None

    def __post_init__(self):
        if self.memory < 1:
            raise ValueError("memory must be at least 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.grad_tol <= 0 or self.step_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class IterateTrace:
    values: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    step_lengths: list[float] = field(default_factory=list)
    active_bounds: list[int] = field(default_factory=list)
    evaluations: int = 0
    status: str = ""
    message: str = ""

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["iteration", "value", "projected_grad_norm", "step_length", "active_bounds"])
            for k, row in enumerate(zip(self.values, self.grad_norms, self.step_lengths, self.active_bounds)):
                wr.writerow([k, *row])


class CallbackError(RuntimeError):
    """The objective callback raised; ``x`` holds the offending point."""

    def __init__(self, message, x):
        super().__init__(message)
        self.x = x


class _StepStop(Exception):
    pass


def projected_gradient(x, g, lo, hi) -> np.ndarray:
    pg = np.asarray(g, dtype=float).copy()
    pg[(x <= lo) & (pg > 0)] = 0.0
    pg[(x >= hi) & (pg < 0)] = 0.0
    return pg


def minimize(f_and_grad, x0, bounds, cfg: OptimizerConfig | None = None, scale=None):
    """Minimize ``f`` subject to per-entry bounds.

    ``bounds`` is an ``(n, 2)`` array-like of ``(lo, hi)``.  ``scale`` (per
    entry, default 1) defines the internal variable ``y = scale * x``.
    Returns ``(x_best, IterateTrace)``; the best feasible point seen is
    returned even if the line search fails.
    """
    cfg = cfg or OptimizerConfig()
    x0 = np.asarray(x0, dtype=float)
    b = np.asarray(bounds, dtype=float).reshape(-1, 2)
    if b.shape[0] != x0.size:
        raise ValueError("one (lo, hi) pair per variable is required")
    lo, hi = b[:, 0], b[:, 1]
    if np.any(lo >= hi):
        raise ValueError("every lower bound must be below its upper bound")
    if np.any(x0 < lo) or np.any(x0 > hi):
        raise ValueError("x0 violates the bounds")
    s = np.ones_like(x0) if scale is None else np.broadcast_to(np.asarray(scale, dtype=float), x0.shape).copy()
    trace = IterateTrace()
    best = {"x": x0.copy(), "f": np.inf, "g": None}

    def fun(y):
        x = np.clip(y / s, lo, hi)
        try:
            f, g = f_and_grad(x)
        except Exception as exc:  # surfaced with context
            raise CallbackError(f"objective failed at evaluation {trace.evaluations}: {exc}", x) from exc
        trace.evaluations += 1
        f = float(f)
        g = np.asarray(g, dtype=float)
        if f < best["f"]:
            best.update(x=x.copy(), f=f, g=g.copy())
        return f, g / s

    def record(x, f, g, step):
        trace.values.append(f)
        trace.grad_norms.append(float(np.linalg.norm(projected_gradient(x, g, lo, hi))))
        trace.step_lengths.append(step)
        trace.active_bounds.append(int(np.sum((x <= lo) | (x >= hi))))

    f0, _ = fun(s * x0)
    record(x0, f0, best["g"], 0.0)
    prev = {"x": x0.copy()}

    def callback(intermediate_result):
        y = intermediate_result.x
        x = np.clip(y / s, lo, hi)
        step = float(np.linalg.norm(s * (x - prev["x"])))
        rel = step / max(np.linalg.norm(s * prev["x"]), 1e-300)
        prev["x"] = x.copy()
        # best["x"] is the accepted iterate (L-BFGS-B accepts only decreasing points)
        record(x, float(intermediate_result.fun), best["g"], step)
        if rel <= cfg.step_tol:
            raise _StepStop

    options = {
        "maxcor": cfg.memory,
        "maxiter": cfg.max_iters,
        "gtol": cfg.grad_tol,
        "ftol": 1e-15,
        "maxls": 40,
    }
    if cfg.max_evals is not None:
        options["maxfun"] = cfg.max_evals
    try:
        res = _scipy_minimize(
            fun, s * x0, jac=True, method="L-BFGS-B",
            bounds=list(zip(s * lo, s * hi)), options=options, callback=callback,
        )
        trace.message = str(res.message)
        if res.success:
            trace.status = "converged"
        elif res.nit >= cfg.max_iters:
            trace.status = "max_iters"
        else:
            trace.status = "line_search_failed"
    except _StepStop:
        trace.status = "step_tol"
        trace.message = "relative step below step_tol"
    return np.clip(best["x"], lo, hi), trace
