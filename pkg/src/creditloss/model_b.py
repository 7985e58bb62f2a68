"""LGD model with symmetric transformed-beta marginals.

Given default, an instrument's LGD lives on ``[lbar - delta, lbar + delta]``
as a linearly stretched ``Beta(a, a)``; ``a = 2`` (concave density) for
collateralized instruments and ``a = 0.5`` (convex) otherwise.

Coupling to the default driver: with ``U = Phi(G) / p`` the severity rank
of a defaulted firm's standardized return and ``V`` an independent
uniform, the perturbed rank ``H = U * (1 + xi * (V - 1/2))`` is pushed
through its own CDF ``F_H`` (so ``F_H(H)`` is exactly uniform) and then
through the marginal inverse CDF. The perturbation size ``xi`` sets
``Cov(F_H(H), U)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import DomainError, InputValidationError, InsufficientDataError
from .kernel import as_generator, beta_cdf, beta_inverse_cdf, sample_cov, std_normal_cdf, std_normal_quantile
from .portfolio import CellIndex

LAMBDA_MAX = 1.0 / 12.0
LAMBDA_LO = LAMBDA_MAX / 7.0
LAMBDA_HI = 2.0 * LAMBDA_MAX / 3.0
MIN_RECORDS = 10
COLLATERAL_SHAPE = 2.0
UNSECURED_SHAPE = 0.5
COLLATERAL_WIDTH = 0.2


def shape_params(lbar, collateralized):
    """``(shape, delta)`` of the symmetric marginal."""
    if not 0.0 < lbar < 1.0:
        raise DomainError("lbar must lie in (0, 1)")
    half = min(lbar, 1.0 - lbar)
    if collateralized:
        return COLLATERAL_SHAPE, COLLATERAL_WIDTH * half
    return UNSECURED_SHAPE, half


@dataclass(frozen=True)
class ModelBParams:
    lbar: float
    collateralized: bool
    lam: float = LAMBDA_HI
    shape: float = None
    delta: float = None
    xi: float = None

    def __post_init__(self):
        shape, delta = shape_params(self.lbar, self.collateralized)
        if self.shape is None:
            object.__setattr__(self, "shape", shape)
        if self.delta is None:
            object.__setattr__(self, "delta", delta)
        if self.delta < 0 or self.lbar - self.delta < -1e-15 or self.lbar + self.delta > 1 + 1e-15:
            raise DomainError("support [lbar - delta, lbar + delta] must lie in [0, 1]")
        if self.xi is None:
            xi, lam = xi_from_lambda(self.lam)
            object.__setattr__(self, "xi", xi)
            object.__setattr__(self, "lam", lam)
        elif self.xi < 2.0:
            raise DomainError("xi must be >= 2")


def lgd_marginal_cdf(y, params: ModelBParams):
    y = np.asarray(y, dtype=float)
    lo = params.lbar - params.delta
    if params.delta == 0.0:
        out = (y >= params.lbar).astype(float)
    else:
        x = np.clip((y - lo) / (2.0 * params.delta), 0.0, 1.0)
        out = beta_cdf(x, params.shape, params.shape)
    return float(out) if np.ndim(out) == 0 else np.asarray(out)


def lgd_marginal_inverse(u, params: ModelBParams):
    u = np.asarray(u, dtype=float)
    if np.any(~(u >= 0.0)) or np.any(~(u <= 1.0)):
        raise DomainError("u must lie in [0, 1]")
    if params.delta == 0.0:
        out = np.full_like(u, params.lbar)
    else:
        out = params.lbar - params.delta + 2.0 * params.delta * beta_inverse_cdf(
            u, params.shape, params.shape)
    return float(out) if np.ndim(out) == 0 else out


def prior_beta_mode(lbar, kappa):
    """Beta(``(kappa - 1) * lbar``, ``(kappa - 1) * (1 - lbar)``); mean ``lbar``."""
    if not 0.0 < lbar < 1.0:
        raise DomainError("lbar must lie in (0, 1)")
    if not kappa > 1.0:
        raise DomainError("kappa must exceed 1")
    return (kappa - 1.0) * lbar, (kappa - 1.0) * (1.0 - lbar)


def truncated_gaussian_cdf(x, p):
    """CDF of a standard normal conditioned on lying below ``Phi^-1(p)``."""
    if not 0.0 < p < 1.0:
        raise DomainError("p must lie in (0, 1)")
    x = np.asarray(x, dtype=float)
    c = std_normal_quantile(p)
    with np.errstate(invalid="ignore"):
        out = np.where(x < c, std_normal_cdf(np.where(np.isfinite(x), x, -40.0)) / p, 1.0)
    out = np.where(x == -np.inf, 0.0, out)
    return float(out) if out.ndim == 0 else out


def f_h(y, xi):
    """CDF of ``H = U * (1 + xi * (V - 1/2))`` for independent uniforms U, V.

    Support is ``[1 - xi/2, 1 + xi/2]``; at ``y = 0`` both branches tend to
    ``1/2 - 1/xi``.
    """
    if not xi >= 2.0 or not math.isfinite(xi):
        raise DomainError("xi must be finite and >= 2")
    y = np.asarray(y, dtype=float)
    lo, hi = 1.0 - 0.5 * xi, 1.0 + 0.5 * xi
    base = 0.5 - 1.0 / xi
    out = np.full(y.shape, base)
    pos = (y > 0) & (y < hi)
    yp = y[pos]
    out[pos] = base + yp / xi + yp / xi * (math.log(hi) - np.log(yp))
    neg = (y < 0) & (y > lo)
    if np.any(neg):
        yn = y[neg]
        out[neg] = base + yn / xi + yn / xi * (math.log(0.5 * xi - 1.0) - np.log(-yn))
    out[y <= lo] = 0.0
    out[y >= hi] = 1.0
    np.clip(out, 0.0, 1.0, out=out)
    return float(out) if out.ndim == 0 else out


def coupling_covariance(xi):
    """Exact ``Cov(F_H(H), U)`` for perturbation ``xi >= 2``: ``1 / (9 xi)``."""
    if not xi >= 2.0:
        raise DomainError("xi must be >= 2")
    return 1.0 / (9.0 * xi)


def clamp_lambda(lambda_est):
    if not math.isfinite(lambda_est):
        raise DomainError("lambda estimate must be finite")
    if abs(lambda_est) > LAMBDA_MAX + 1e-9:
        raise DomainError(f"lambda estimate {lambda_est} violates |lambda| <= 1/12")
    return min(max(lambda_est, LAMBDA_LO), LAMBDA_HI)


def xi_from_lambda(lambda_est, method="exact"):
    """Perturbation ``xi`` giving ``Cov(F_H(H), U) = lambda``.

    The estimate is first clamped to ``[1/84, 1/18]``. ``method="exact"``
    inverts :func:`coupling_covariance`. ``method="radical"`` applies
    ``(10 + 8 sqrt(1 + 54 lam)) / (288 lam - 3)``, which agrees with the
    exact inverse only at ``lam = 1/18`` and misses the target covariance
    elsewhere (about 7e-4 low at ``lam = 1/24``).

    Returns ``(xi, lambda_clamped)``.
    """
    lam = clamp_lambda(lambda_est)
    if method == "exact":
        xi = 2.0 if lam == LAMBDA_HI else 1.0 / (9.0 * lam)
    elif method == "radical":
        xi = xi_radical(lam)
    else:
        raise ValueError(f"unknown method {method!r}")
    return max(xi, 2.0), lam


def xi_radical(lam):
    """``(10 + 8 sqrt(1 + 54 lam)) / (288 lam - 3)`` for ``lam`` in (1/96, 1/18]."""
    den = 288.0 * lam - 3.0
    if den <= 0.0:
        raise DomainError("formula requires lambda > 1/96")
    return (10.0 + 8.0 * math.sqrt(1.0 + 54.0 * lam)) / den


def perturbed_rank(u, v, xi):
    return np.asarray(u) * (1.0 + xi * (np.asarray(v) - 0.5))


def sample_lgd_b_arrays(g, p, lbar, delta, shape, xi, v):
    """Vectorized LGD draw for defaulted firms.

    All arguments are broadcastable arrays; ``v`` are the independent
    uniforms. ``shape`` holds per-element beta shapes (``2`` or ``0.5``).
    """
    g, p, lbar, delta, shape, xi, v = np.broadcast_arrays(
        *(np.asarray(a, dtype=float) for a in (g, p, lbar, delta, shape, xi, v)))
    u = std_normal_cdf(g) / p
    if np.any(u > 1.0 + 1e-12):
        raise DomainError("sample_lgd_b needs g < Phi^-1(p) (defaulted firms only)")
    u = np.minimum(u, 1.0)
    h = u * (1.0 + xi * (v - 0.5))
    w = np.empty_like(h)
    for x in np.unique(xi):
        sel = xi == x
        w[sel] = f_h(h[sel], float(x))
    out = lbar.copy()
    for a in np.unique(shape):
        sel = (shape == a) & (delta > 0)
        if np.any(sel):
            q = beta_inverse_cdf(w[sel], float(a), float(a))
            out[sel] = lbar[sel] - delta[sel] + 2.0 * delta[sel] * q
    return out


def sample_lgd_b(g, p, params: ModelBParams, rng, size=None):
    """LGD for a defaulted firm with standardized return ``g`` and pd ``p``."""
    if not 0.0 < p < 1.0:
        raise DomainError("p must lie in (0, 1)")
    g = np.asarray(g, dtype=float)
    if np.any(g >= std_normal_quantile(p)):
        raise DomainError("sample_lgd_b needs g < Phi^-1(p) (defaulted firms only)")
    shape = g.shape if size is None else size
    v = as_generator(rng).random(shape)
    out = sample_lgd_b_arrays(g, p, params.lbar, params.delta, params.shape, params.xi, v)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------

def default_record_frame(records) -> pd.DataFrame:
    df = pd.DataFrame(records)
    missing = {"time", "industry", "region", "g", "pd", "lgd"} - set(df.columns)
    if missing:
        raise InputValidationError(f"default records lack columns {sorted(missing)}")
    df = df.copy()
    for col in ("g", "pd", "lgd"):
        df[col] = pd.to_numeric(df[col], errors="coerce")
    for k, rec in enumerate(df.itertuples(index=False), start=1):
        if not (0.0 < rec.pd < 1.0):
            raise InputValidationError(f"pd {rec.pd} outside (0, 1)", row=k)
        if not (0.0 <= rec.lgd <= 1.0):
            raise InputValidationError(f"lgd {rec.lgd} outside [0, 1]", row=k)
        if not math.isfinite(rec.g):
            raise InputValidationError("g is not finite", row=k)
    df["cell"] = [CellIndex(int(i), int(r)) for i, r in zip(df["industry"], df["region"])]
    return df


def _rank_pairs(df, params_by_cell):
    us, ws = [], []
    for rec in df.itertuples(index=False):
        params = params_by_cell[rec.cell]
        c = std_normal_quantile(rec.pd)
        if rec.g >= c:
            warnings.warn(f"record in cell {rec.cell} has g >= Phi^-1(pd); rank set to 1",
                          RuntimeWarning, stacklevel=3)
        us.append(truncated_gaussian_cdf(rec.g, rec.pd))
        ws.append(lgd_marginal_cdf(rec.lgd, params))
    return np.array(us), np.array(ws)


def estimate_lambda(default_records, params_by_cell, min_records=MIN_RECORDS):
    """Raw (unclamped) per-cell coupling covariance.

    Cells with fewer than ``min_records`` records get the pooled estimate
    over all records. Returns ``(per_cell, pooled)``.
    """
    df = default_record_frame(default_records)
    if len(df) < 2:
        raise InsufficientDataError("need at least 2 default records")
    u_all, w_all = _rank_pairs(df, params_by_cell)
    pooled = sample_cov(u_all, w_all)
    out = {}
    for cell, idx in df.groupby("cell", sort=True).indices.items():
        if len(idx) < min_records:
            warnings.warn(f"cell {cell}: {len(idx)} default records; using pooled lambda",
                          RuntimeWarning, stacklevel=2)
            out[cell] = pooled
        else:
            out[cell] = sample_cov(u_all[idx], w_all[idx])
    return out, pooled


def params_from_records(default_records) -> dict:
    """Per-cell marginal parameters: mean record LGD and majority collateral flag."""
    df = default_record_frame(default_records)
    has_flag = "collateralized" in df.columns
    out = {}
    for cell, grp in df.groupby("cell", sort=True):
        lbar = float(np.clip(grp["lgd"].mean(), 1e-4, 1 - 1e-4))
        coll = False
        if has_flag:
            flags = grp["collateralized"].astype(str).str.strip().str.lower().isin(
                {"1", "true", "yes", "y", "t"})
            coll = bool(flags.mean() > 0.5)
        out[cell] = ModelBParams(lbar, coll)
    return out


@dataclass
class ModelBCalibration:
    lambda_raw: dict
    lam: dict
    xi: dict
    pooled_raw: float
    pooled_lam: float
    pooled_xi: float
    complete: bool = True

    def cell_xi(self, cell):
        return self.xi.get(CellIndex(*cell), self.pooled_xi)

    def cell_lambda(self, cell):
        return self.lam.get(CellIndex(*cell), self.pooled_lam)

    def to_dict(self):
        cells = sorted(self.lam)
        return {
            "complete": self.complete,
            "pooled": {"lambda_raw": self.pooled_raw, "lambda": self.pooled_lam,
                       "xi": self.pooled_xi},
            "cells": {str(c): {"lambda_raw": self.lambda_raw[c], "lambda": self.lam[c],
                               "xi": self.xi[c]} for c in cells},
        }

    @classmethod
    def from_dict(cls, d):
        cells = {CellIndex.parse(k): v for k, v in d.get("cells", {}).items()}
        pooled = d.get("pooled") or {}
        return cls(
            {c: v["lambda_raw"] for c, v in cells.items()},
            {c: v["lambda"] for c, v in cells.items()},
            {c: v["xi"] for c, v in cells.items()},
            pooled.get("lambda_raw", LAMBDA_HI), pooled.get("lambda", LAMBDA_HI),
            pooled.get("xi", 2.0), bool(d.get("complete", True)),
        )

    @classmethod
    def incomplete(cls):
        return cls({}, {}, {}, math.nan, math.nan, math.nan, complete=False)


class ModelBLGD(BaseEstimator):
    """Calibrates per-cell coupling ``lambda`` and perturbation ``xi``.

    ``fit(default_records, params_by_cell=None)``: records are a frame with
    columns ``time,industry,region,g,pd,lgd``. Without ``params_by_cell`` the
    marginal of each cell is centred on its mean record LGD.
    """

    def __init__(self, min_records=MIN_RECORDS, xi_method="exact"):
        self.min_records = min_records
        self.xi_method = xi_method

    def fit(self, default_records, params_by_cell=None):
        if params_by_cell is None:
            params_by_cell = params_from_records(default_records)
        raw, pooled = estimate_lambda(default_records, params_by_cell, self.min_records)
        lam, xi = {}, {}
        for cell, est in raw.items():
            xi[cell], lam[cell] = xi_from_lambda(_bounded(est), self.xi_method)
        pooled_xi, pooled_lam = xi_from_lambda(_bounded(pooled), self.xi_method)
        self.lambda_raw_ = raw
        self.lambda_ = lam
        self.xi_ = xi
        self.calibration_ = ModelBCalibration(raw, lam, xi, pooled, pooled_lam, pooled_xi)
        return self

    def params_for(self, lbar, collateralized, cell):
        check_is_fitted(self, "calibration_")
        cal = self.calibration_
        return ModelBParams(lbar, collateralized, lam=cal.cell_lambda(cell), xi=cal.cell_xi(cell))


def _bounded(est):
    # sample covariances of two [0,1] variables can overshoot 1/12 only by sampling noise
    return min(max(est, -LAMBDA_MAX), LAMBDA_MAX)
