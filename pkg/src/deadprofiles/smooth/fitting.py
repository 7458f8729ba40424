"""Penalised likelihood fitting with GCV smoothing selection."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .basis import SplineBasis
from .design import SmoothBlock, TensorSmoothDesign
from .families import Family, GaussianLog, NegativeBinomialLog, BetaLogit, family_from_kind

LAMBDA_GRID = np.logspace(-6, 6, 30)
LOG_DISPERSION_BOUNDS = {
    NegativeBinomialLog.kind: (-5.0, 10.0),
    BetaLogit.kind: (-5.0, 20.0),
}
MAX_ITER = 100
MAX_HALVINGS = 40


class FitError(RuntimeError):
    """Raised when the penalised Newton iteration fails to converge."""


class GridBoundaryWarning(UserWarning):
    pass


def penalized_objective(beta, X, y, w, family: Family, S) -> float:
    """Negative weighted log-likelihood plus ``beta' S beta / 2``."""
    eta = X @ beta
    return float(-np.sum(w * family.loglik(y, eta)) + 0.5 * beta @ S @ beta)


def penalized_gradient(beta, X, y, w, family: Family, S) -> np.ndarray:
    eta = X @ beta
    return -X.T @ (w * family.dl_deta(y, eta)) + S @ beta


def _cholesky(H):
    try:
        return linalg.cho_factor(H, lower=False, check_finite=False)
    except linalg.LinAlgError:
        jitter = 1e-10 * max(np.trace(H) / H.shape[0], 1e-300)
        for _ in range(12):
            try:
                return linalg.cho_factor(H + jitter * np.eye(H.shape[0]), check_finite=False)
            except linalg.LinAlgError:
                jitter *= 10
        raise FitError("penalised Hessian is not positive definite")


def newton_fit(X, y, w, family: Family, S, beta0, *, max_iter=MAX_ITER, gtol=1e-10):
    """Maximise the penalised log-likelihood from ``beta0``.

    Uses the observed Hessian where it is informative and Fisher weights
    elsewhere, with step halving on the objective.
    """
    beta = np.array(beta0, dtype=float)
    obj = penalized_objective(beta, X, y, w, family, S)
    if not np.isfinite(obj):
        raise FitError("objective is not finite at the starting point")
    for it in range(max_iter):
        eta = X @ beta
        grad = -X.T @ (w * family.dl_deta(y, eta)) + S @ beta
        scale = 1.0 + abs(obj)
        gmax = np.max(np.abs(grad))
        if gmax <= gtol * scale:
            return beta, obj, it
        curv = family.newton_weights(y, eta)
        H = (X * (w * curv)[:, None]).T @ X + S
        step = -linalg.cho_solve(_cholesky(H), grad, check_finite=False)
        predicted = -0.5 * grad @ step
        if predicted <= 1e-15 * scale:
            return beta + step, penalized_objective(beta + step, X, y, w, family, S), it + 1
        slack = 1e-13 * scale
        t = 1.0
        for _ in range(MAX_HALVINGS):
            cand = beta + t * step
            new = penalized_objective(cand, X, y, w, family, S)
            if np.isfinite(new) and new <= obj + slack:
                break
            # the likelihood terms cancel heavily, so below this the objective is roundoff
            if t * predicted <= 1e-10 * scale and np.isfinite(new):
                return beta, obj, it
            t *= 0.5
        else:
            if gmax <= 1e-6 * scale:
                return beta, obj, it
            raise FitError("step halving failed to reduce the penalised objective")
        done = abs(obj - new) <= 1e-14 * scale
        beta, obj = cand, new
        if done:
            return beta, obj, it + 1
    raise FitError(f"no convergence after {max_iter} iterations")


@dataclass
class _FitState:
    beta: np.ndarray
    objective: float
    edf: float
    deviance: float
    loglik: float
    gcv: float


def _evaluate(X, y, w, family, S, beta0) -> _FitState:
    beta, obj, _ = newton_fit(X, y, w, family, S, beta0)
    eta = X @ beta
    A = (X * (w * family.fisher_weight(eta))[:, None]).T @ X
    F = linalg.cho_solve(_cholesky(A + S), A, check_finite=False)
    edf = float(np.trace(F))
    dev = float(np.sum(w * family.unit_deviance(y, eta)))
    ll = float(np.sum(w * family.loglik(y, eta)))
    n = float(np.sum(w))
    gcv = math.inf if edf >= n else n * dev / (n - edf) ** 2
    return _FitState(beta, obj, edf, dev, ll, gcv)


def _golden_section(fun, lo, hi, tol=1e-2):
    """Minimise a unimodal ``fun`` on ``[lo, hi]``."""
    invphi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    return (a + b) / 2


def _update_dispersion(X, y, w, family, S, beta, edf):
    """Re-estimate the dispersion at fixed smoothing parameters."""
    if isinstance(family, GaussianLog):
        mu = family.inverse_link(X @ beta)
        n = np.sum(w)
        rss = np.sum(w * (y - mu) ** 2)
        floor = 1e-12 * np.sum(w * y**2) / n
        return family.with_dispersion(max(rss / max(n - edf, 1.0), floor, 1e-300)), beta

    lo, hi = LOG_DISPERSION_BOUNDS[family.kind]
    warm = {"beta": beta}

    def neg_profile(log_disp):
        fam = family.with_dispersion(math.exp(log_disp))
        try:
            b, obj, _ = newton_fit(X, y, w, fam, S, warm["beta"])
        except FitError:
            return math.inf
        warm["beta"] = b
        return obj

    best = _golden_section(neg_profile, lo, hi)
    fam = family.with_dispersion(math.exp(best))
    b, _, _ = newton_fit(X, y, w, fam, S, warm["beta"])
    return fam, b


def _initial_beta(X, y, family, S):
    eta0 = family.initial_eta(y)
    return linalg.solve(X.T @ X + S + 1e-10 * np.eye(X.shape[1]), X.T @ eta0, assume_a="pos")


def _check_inputs(design, response, weights, family):
    y = np.asarray(response, dtype=float).ravel()
    if y.size != design.n_obs:
        raise ValueError("response length does not match the design")
    family.check_response(y)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float).ravel()
    if w.size != y.size:
        raise ValueError("weights length does not match the response")
    if np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be non-negative and not all zero")
    return y, w


def search_lambdas(design: TensorSmoothDesign, y, w, family: Family, *, grid=LAMBDA_GRID,
                   sweeps: int = 2, start=None, beta0=None):
    """Coordinate-wise GCV minimisation over a log-spaced grid, one block at a time.

    Returns ``(lambdas, state, at_boundary)``.
    """
    X = design.design
    penalties = design.full_penalties()
    m = len(penalties)
    grid = np.asarray(grid, dtype=float)
    if start is None:
        idx = [int(np.argmin(np.abs(np.log(grid))))] * m
    else:
        idx = [int(np.argmin(np.abs(np.log(grid) - math.log(s)))) for s in start]
    cache: dict[tuple, _FitState | None] = {}
    beta = _initial_beta(X, y, family, sum((grid[i] * P for i, P in zip(idx, penalties)),
                                           np.zeros((X.shape[1],) * 2))) if beta0 is None else beta0

    def run(key, warm):
        if key not in cache:
            S = sum(grid[i] * P for i, P in zip(key, penalties))
            try:
                cache[key] = _evaluate(X, y, w, family, S, warm)
            except FitError:
                cache[key] = None
        return cache[key]

    best = run(tuple(idx), beta)
    for _ in range(sweeps):
        changed = False
        for j in range(m):
            warm = best.beta if best is not None else beta
            scores = []
            for gi in range(grid.size):
                key = tuple(idx[:j] + [gi] + idx[j + 1:])
                st = run(key, warm)
                if st is not None:
                    warm = st.beta
                scores.append(math.inf if st is None else st.gcv)
            gi = int(np.argmin(scores))
            if not np.isfinite(scores[gi]):
                raise FitError("every smoothing parameter on the grid failed to fit")
            if gi != idx[j]:
                changed = True
                idx[j] = gi
            best = cache[tuple(idx)]
        if not changed:
            break
    at_boundary = tuple(i in (0, grid.size - 1) for i in idx)
    return grid[idx], best, at_boundary


@dataclass(frozen=True)
class FittedSmoothModel:
    coefficients: np.ndarray
    family: Family
    blocks: tuple[SmoothBlock, ...]
    lambdas: np.ndarray
    edf: float
    gcv_score: float
    log_likelihood: float
    deviance: float
    n_obs: float
    at_boundary: tuple[bool, ...] = field(default=())

    @property
    def bases(self) -> tuple[SplineBasis, ...]:
        return tuple(b for blk in self.blocks for b in blk.bases)

    def model_matrix(self, age, time=None) -> np.ndarray:
        age = np.asarray(age, dtype=float).ravel()
        coords = {"age": age}
        if time is not None:
            coords["time"] = np.broadcast_to(np.asarray(time, dtype=float).ravel(), age.shape)
        return np.hstack([np.ones((age.size, 1))] + [b.evaluate(coords) for b in self.blocks])

    def linear_predictor(self, age, time=None) -> np.ndarray:
        return self.model_matrix(age, time) @ self.coefficients

    def predict(self, age, time=None) -> np.ndarray:
        """Fitted mean (inverse link applied) at the given points."""
        return self.family.inverse_link(self.linear_predictor(age, time))

    def to_dict(self) -> dict:
        return {
            "family": self.family.kind,
            "dispersion": self.family.dispersion,
            "blocks": [
                {
                    "name": b.name,
                    "coords": list(b.coords),
                    "knots": [bs.knots.tolist() for bs in b.bases],
                    "constraints": [Z.tolist() for Z in b.constraints],
                    "penalty": b.penalty.tolist(),
                    "reduction": None if b.reduction is None else b.reduction.tolist(),
                }
                for b in self.blocks
            ],
            "coefficients": self.coefficients.tolist(),
            "lambdas": self.lambdas.tolist(),
            "edf": self.edf,
            "gcv_score": self.gcv_score,
            "log_likelihood": self.log_likelihood,
            "deviance": self.deviance,
            "n_obs": self.n_obs,
            "at_boundary": list(self.at_boundary),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "FittedSmoothModel":
        blocks = tuple(
            SmoothBlock(
                b["name"],
                tuple(SplineBasis.from_knots(k) for k in b["knots"]),
                tuple(b["coords"]),
                tuple(np.asarray(Z, dtype=float).reshape(len(k), -1)
                      for Z, k in zip(b["constraints"], b["knots"])),
                np.asarray(b["penalty"], dtype=float),
                None if b["reduction"] is None else np.asarray(b["reduction"], dtype=float),
            )
            for b in d["blocks"]
        )
        return cls(
            np.asarray(d["coefficients"], dtype=float),
            family_from_kind(d["family"], d["dispersion"]),
            blocks,
            np.asarray(d["lambdas"], dtype=float),
            d["edf"], d["gcv_score"], d["log_likelihood"], d["deviance"], d["n_obs"],
            tuple(d.get("at_boundary", ())),
        )

    @classmethod
    def from_json(cls, text: str) -> "FittedSmoothModel":
        return cls.from_dict(json.loads(text))


def fit(design: TensorSmoothDesign, response, weights=None, family: Family = None, *,
        lambdas=None, grid=LAMBDA_GRID, sweeps: int = 2,
        estimate_dispersion: bool = True) -> FittedSmoothModel:
    """Fit a penalised smooth regression.

    Smoothing parameters are chosen by GCV on ``grid`` unless ``lambdas`` is
    given. With ``estimate_dispersion`` the family's dispersion is
    re-estimated before and after the smoothing search: a moment estimator
    for the Gaussian variance, a golden-section search of the profile
    likelihood for the negative binomial and beta precision parameters.
    """
    if family is None:
        raise ValueError("a response family is required")
    y, w = _check_inputs(design, response, weights, family)
    X = design.design
    penalties = design.full_penalties()
    grid = np.asarray(grid, dtype=float)

    if lambdas is not None:
        lam = np.asarray(lambdas, dtype=float)
        if lam.size != len(penalties) or np.any(lam < 0):
            raise ValueError("need one non-negative smoothing parameter per penalty")
    else:
        lam = np.full(len(penalties), grid[int(np.argmin(np.abs(np.log(grid))))])
    S = design.total_penalty(lam)
    beta = _initial_beta(X, y, family, S)

    if estimate_dispersion:
        state = _evaluate(X, y, w, family, S, beta)
        family, beta = _update_dispersion(X, y, w, family, S, state.beta, state.edf)

    at_boundary: tuple[bool, ...] = ()
    if lambdas is None and penalties:
        lam, state, at_boundary = search_lambdas(design, y, w, family, grid=grid,
                                                 sweeps=sweeps, beta0=beta)
        if any(at_boundary):
            warnings.warn(
                f"GCV minimum on the grid boundary for blocks "
                f"{[b.name for b, hit in zip(design.blocks, at_boundary) if hit]}",
                GridBoundaryWarning,
                stacklevel=2,
            )
        beta = state.beta
        S = design.total_penalty(lam)

    if estimate_dispersion:
        state = _evaluate(X, y, w, family, S, beta)
        family, beta = _update_dispersion(X, y, w, family, S, state.beta, state.edf)
    state = _evaluate(X, y, w, family, S, beta)

    return FittedSmoothModel(
        coefficients=state.beta,
        family=family,
        blocks=tuple(design.blocks),
        lambdas=np.asarray(lam, dtype=float),
        edf=state.edf,
        gcv_score=state.gcv,
        log_likelihood=state.loglik,
        deviance=state.deviance,
        n_obs=float(np.sum(w)),
        at_boundary=at_boundary,
    )


def gcv_score(design: TensorSmoothDesign, response, weights, family: Family, lambdas) -> float:
    """GCV ``n D / (n - edf)^2`` of the penalised fit at fixed smoothing parameters."""
    y, w = _check_inputs(design, response, weights, family)
    S = design.total_penalty(lambdas)
    beta = _initial_beta(design.design, y, family, S)
    return _evaluate(design.design, y, w, family, S, beta).gcv


def aic(model: FittedSmoothModel) -> float:
    return -2.0 * model.log_likelihood + 2.0 * model.edf
