"""Nonlinear least-squares extraction of relaxation times and trap rates.

Four decay models cover the toolkit's observables:

``exp_decay``
    ``a * exp(-2 tau / T)`` -- the echo-decay exponential (the infinite-T_S
    limit of ``echo_cubic``), so the reported constant follows the same
    convention as the coherence time it approximates.
``inversion_recovery``
    ``m_eq * (1 - 2 exp(-tau / T1))``.
``echo_cubic``
    ``a * exp(-2 tau / T2 - 8 tau^3 / T_S^3)``.
``trap_biexp``
    ``-a * (exp(-k_e t) - exp(-k_c t))`` with ``k_c >= k_e`` normalized.

Fitting is derivative-free Nelder-Mead with eight deterministic multi-starts
whose time-constant guesses are decade-spaced across the x range; time
constants and rates are parameterized in log space so positivity needs no
constraints.  Data are normalized to unit peak internally, which makes the
fit exactly scale-equivariant.  1-sigma uncertainties come from the
finite-difference curvature of the residual sum of squares at the optimum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from .trace import SignalTrace

__all__ = [
    "FitResult",
    "ModelComparison",
    "DegenerateDataError",
    "MODEL_IDS",
    "fit",
    "compare_models",
    "model_predict",
]


class DegenerateDataError(ValueError):
    """The trace cannot constrain the model (e.g. constant y)."""


@dataclass(frozen=True)
class FitResult:
    model_id: str
    params: dict
    param_uncertainties: dict
    rss: float
    n_points: int
    converged: bool


@dataclass(frozen=True)
class ModelComparison:
    preferred: str
    delta_criterion: float  # criterion(model_a) - criterion(model_b)
    criterion_a: float
    criterion_b: float


@dataclass(frozen=True)
class _ModelDef:
    param_names: tuple[str, ...]
    param_kinds: tuple[str, ...]  # "scale" (linear, tracks y units) or "log"
    predict: Callable
    starts: Callable  # (x, y_norm) -> list of internal start vectors
    normalize: Callable | None = None  # canonicalize physical params after fit

    @property
    def n_params(self) -> int:
        return len(self.param_names)


def _decade_guesses(x: np.ndarray) -> np.ndarray:
    # Eight guesses, half-decade spaced, bracketing the x span.
    return x[-1] * 10.0 ** np.arange(-3.0, 1.0, 0.5)


def _exp_decay_predict(x, p):
    a, t = p
    return a * np.exp(-2.0 * x / t)


def _exp_decay_starts(x, y):
    return [np.array([y[0] if y[0] != 0 else 1.0, math.log(t)]) for t in _decade_guesses(x)]


def _inversion_predict(x, p):
    m_eq, t1 = p
    return m_eq * (1.0 - 2.0 * np.exp(-x / t1))


def _inversion_starts(x, y):
    m0 = y[-1] if y[-1] != 0 else 1.0
    return [np.array([m0, math.log(t)]) for t in _decade_guesses(x)]


def _echo_cubic_predict(x, p):
    a, t2, t_s = p
    return a * np.exp(-2.0 * x / t2 - 8.0 * x**3 / t_s**3)


def _echo_cubic_starts(x, y):
    a0 = y[0] if y[0] != 0 else 1.0
    return [np.array([a0, math.log(t), math.log(2.0 * t)]) for t in _decade_guesses(x)]


def _trap_biexp_predict(x, p):
    a, k_e, k_c = p
    if math.isclose(k_e, k_c, rel_tol=1e-12):
        return -a * k_c * x * np.exp(-k_c * x)
    return -a * (np.exp(-k_e * x) - np.exp(-k_c * x))


def _trap_biexp_starts(x, y):
    a0 = float(np.max(np.abs(y)))
    if a0 == 0:
        a0 = 1.0
    return [np.array([a0, math.log(1.0 / t), math.log(20.0 / t)]) for t in _decade_guesses(x)]


def _trap_biexp_normalize(p):
    a, k_e, k_c = p
    if k_c < k_e:  # swap symmetry: exchanging rates flips the bracket's sign
        k_e, k_c, a = k_c, k_e, -a
    return a, k_e, k_c


_MODELS: dict[str, _ModelDef] = {
    "exp_decay": _ModelDef(
        param_names=("amplitude", "t2_seconds"),
        param_kinds=("scale", "log"),
        predict=_exp_decay_predict,
        starts=_exp_decay_starts,
    ),
    "inversion_recovery": _ModelDef(
        param_names=("equilibrium_mz", "t1_seconds"),
        param_kinds=("scale", "log"),
        predict=_inversion_predict,
        starts=_inversion_starts,
    ),
    "echo_cubic": _ModelDef(
        param_names=("amplitude", "t2_seconds", "t_s_seconds"),
        param_kinds=("scale", "log", "log"),
        predict=_echo_cubic_predict,
        starts=_echo_cubic_starts,
    ),
    "trap_biexp": _ModelDef(
        param_names=("amplitude", "emission_rate_per_second", "capture_rate_per_second"),
        param_kinds=("scale", "log", "log"),
        predict=_trap_biexp_predict,
        starts=_trap_biexp_starts,
        normalize=_trap_biexp_normalize,
    ),
}

MODEL_IDS = tuple(_MODELS)


def _to_physical(model: _ModelDef, internal: np.ndarray) -> tuple:
    return tuple(
        math.exp(v) if kind == "log" else v for v, kind in zip(internal, model.param_kinds)
    )


def _to_internal(model: _ModelDef, physical: Sequence[float]) -> np.ndarray:
    out = []
    for v, kind in zip(physical, model.param_kinds):
        if kind == "log":
            if v <= 0:
                raise ValueError(f"log-space parameter must be > 0, got {v}")
            out.append(math.log(v))
        else:
            out.append(float(v))
    return np.asarray(out)


def model_predict(model_id: str, x, params: dict) -> np.ndarray:
    """Evaluate a model curve from a fitted (or constructed) parameter dict."""
    model = _get_model(model_id)
    p = tuple(params[name] for name in model.param_names)
    return model.predict(np.asarray(x, dtype=float), p)


def _get_model(model_id: str) -> _ModelDef:
    if model_id not in _MODELS:
        raise ValueError(f"unknown model {model_id!r}; expected one of {MODEL_IDS}")
    return _MODELS[model_id]


def _minimize_single(objective, x0, history_out=None):
    if history_out is not None:
        history_out.append(objective(x0))

        def callback(xk):
            history_out.append(objective(xk))
    else:
        callback = None
    res = minimize(
        objective,
        x0,
        method="Nelder-Mead",
        callback=callback,
        options=dict(xatol=1e-11, fatol=1e-15, maxiter=6000, maxfev=8000),
    )
    return res


def _hessian(objective, x0):
    n = len(x0)
    h = 1e-4 * (1.0 + np.abs(x0))
    hess = np.zeros((n, n))
    f0 = objective(x0)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h[i]
        for j in range(i, n):
            ej = np.zeros(n)
            ej[j] = h[j]
            if i == j:
                val = (objective(x0 + ei) - 2.0 * f0 + objective(x0 - ei)) / h[i] ** 2
            else:
                val = (
                    objective(x0 + ei + ej)
                    - objective(x0 + ei - ej)
                    - objective(x0 - ei + ej)
                    + objective(x0 - ei - ej)
                ) / (4.0 * h[i] * h[j])
            hess[i, j] = hess[j, i] = val
    return hess


def fit(
    model_id: str,
    trace: SignalTrace,
    initial_guess: dict | None = None,
    history_out: list | None = None,
) -> FitResult:
    """Least-squares fit of one model to a trace.

    With ``initial_guess`` (a dict of physical parameter values keyed like
    the result params) the fit runs from that single start instead of the
    eight default multi-starts.  ``history_out``, if given, collects the rss
    after every accepted simplex iteration of the winning start.

    Raises
    ------
    DegenerateDataError
        For constant-y data.
    ValueError
        For too few points or a non-increasing x axis.
    """
    model = _get_model(model_id)
    x = trace.x_array()
    y = trace.y_array()
    n = len(x)
    if n < 2 + model.n_params:
        raise ValueError(f"model {model_id!r} needs >= {2 + model.n_params} points, got {n}")
    if np.any(np.diff(x) <= 0):
        raise ValueError("x must be strictly increasing")
    if np.ptp(y) == 0.0:
        raise DegenerateDataError("constant y data cannot constrain a decay model")

    scale = float(np.max(np.abs(y)))
    y_norm = y / scale

    def objective(theta):
        resid = model.predict(x, _to_physical(model, theta)) - y_norm
        return float(resid @ resid)

    if initial_guess is not None:
        physical = [initial_guess[name] for name in model.param_names]
        # scale-kind entries live in y units; normalize to match y_norm
        physical = [
            v / scale if kind == "scale" else v
            for v, kind in zip(physical, model.param_kinds)
        ]
        starts = [_to_internal(model, physical)]
    else:
        starts = model.starts(x, y_norm)

    best = None
    best_history: list = []
    for x0 in starts:
        hist: list = [] if history_out is not None else None
        res = _minimize_single(objective, x0, hist)
        if best is None or res.fun < best.fun:
            best = res
            if hist is not None:
                best_history = hist
    if history_out is not None:
        history_out.extend(best_history)

    theta = best.x
    physical = _to_physical(model, theta)
    if model.normalize is not None:
        physical = model.normalize(physical)
        theta = _to_internal(model, physical)

    rss_norm = float(best.fun)
    dof = n - model.n_params
    sigmas_internal = np.full(model.n_params, np.inf)
    if dof > 0:
        try:
            hess = _hessian(objective, theta)
            cov = 2.0 * (rss_norm / dof) * np.linalg.pinv(hess)
            sigmas_internal = np.sqrt(np.clip(np.diag(cov), 0.0, np.inf))
        except np.linalg.LinAlgError:
            pass

    params = {}
    uncertainties = {}
    for name, kind, value, sig in zip(model.param_names, model.param_kinds, physical, sigmas_internal):
        if kind == "scale":
            params[name] = value * scale
            uncertainties[name] = sig * scale
        else:
            params[name] = value
            uncertainties[name] = abs(value) * sig  # delta method from log space
    return FitResult(
        model_id=model_id,
        params=params,
        param_uncertainties=uncertainties,
        rss=rss_norm * scale * scale,
        n_points=n,
        converged=bool(best.success),
    )


def _aicc(n: int, k: int, rss: float) -> float:
    # small-sample information criterion; rss floored to keep it finite
    rss = max(rss, n * 1e-280)
    return n * math.log(rss / n) + 2.0 * k * n / (n - k - 1)


def compare_models(trace: SignalTrace, model_a: str, model_b: str) -> ModelComparison:
    """Fit both models and prefer the lower small-sample information criterion.

    ``delta_criterion`` is ``criterion(model_a) - criterion(model_b)``; ties
    prefer ``model_a``.  Raises if either fit fails to converge.
    """
    fit_a = fit(model_a, trace)
    fit_b = fit(model_b, trace)
    for f in (fit_a, fit_b):
        if not f.converged:
            raise RuntimeError(f"fit of {f.model_id!r} did not converge; cannot compare")
    n = len(trace)
    crit_a = _aicc(n, _get_model(model_a).n_params, fit_a.rss)
    crit_b = _aicc(n, _get_model(model_b).n_params, fit_b.rss)
    preferred = model_a if crit_a <= crit_b else model_b
    return ModelComparison(
        preferred=preferred,
        delta_criterion=crit_a - crit_b,
        criterion_a=crit_a,
        criterion_b=crit_b,
    )
