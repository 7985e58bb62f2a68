"""LGD model with a Gaussian shape factor.

Each cell carries a Gaussian factor ``Z`` that is jointly normal with the
cell systematic returns ``beta``. A defaulted instrument with expected LGD
``m`` draws its LGD from ``Beta(exp(Z), exp(Z) * (1 - m) / m)``, whose
mean is ``m`` whatever the value of ``Z``.

Calibration: per (cell, time) bucket fit the beta shape by maximum
likelihood with the mean held at the cell's historical mean, take logs to
get the ``Z`` history, then estimate ``Cov(Z, Z)`` (theta) and
``Cov(Z, beta)`` (psi) from the overlapping histories.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .default_model import MIN_HISTORY, beta_panel
from .exceptions import (
    DegenerateDataError,
    DomainError,
    InputValidationError,
    InsufficientDataError,
    MissingCalibrationError,
)
from .kernel import (
    LGD_CLAMP,
    as_generator,
    beta_sample,
    cholesky_psd,
    fit_beta_mu_mle,
    sample_correlated_gaussians,
)
from .portfolio import CellIndex

MIN_BUCKET = 5


def z_from_mu(mu):
    mu = np.asarray(mu, dtype=float)
    if np.any(~(mu > 0)):
        raise DomainError("mu must be positive")
    out = np.log(mu)
    return float(out) if out.ndim == 0 else out


def lgd_params_from_z(z, m):
    """Beta shape pair ``(exp(z), exp(z) * (1 - m) / m)``."""
    m = np.asarray(m, dtype=float)
    if np.any(~(m > 0.0) | ~(m < 1.0)):
        raise DomainError("expected LGD m must lie in (0, 1)")
    mu = np.exp(np.asarray(z, dtype=float))
    nu = mu * (1.0 - m) / m
    if np.ndim(mu) == 0 and np.ndim(nu) == 0:
        return float(mu), float(nu)
    return mu, nu


def sample_lgd_a(z, m, rng, size=None):
    mu, nu = lgd_params_from_z(z, m)
    return beta_sample(mu, nu, rng, size=size)


def lgd_history_frame(history) -> pd.DataFrame:
    """Validate a long ``time,industry,region,lgd`` frame and add a ``cell`` column."""
    df = pd.DataFrame(history)
    missing = {"time", "industry", "region", "lgd"} - set(df.columns)
    if missing:
        raise InputValidationError(f"LGD history lacks columns {sorted(missing)}")
    df = df.copy()
    df["lgd"] = pd.to_numeric(df["lgd"], errors="coerce")
    bad = ~df["lgd"].between(0.0, 1.0)
    if bad.any():
        raise InputValidationError("LGD observation outside [0, 1]", row=int(np.flatnonzero(bad)[0]) + 1)
    df["cell"] = [CellIndex(int(i), int(r)) for i, r in zip(df["industry"], df["region"])]
    return df


@dataclass
class CellMuFit:
    mu_series: pd.DataFrame
    m: dict
    skipped: list


def calibrate_cell_mu(lgd_history, min_bucket=MIN_BUCKET, clamp=LGD_CLAMP) -> CellMuFit:
    """Per-cell mean LGD and per-(cell, time) ML shape estimates.

    Buckets with fewer than ``min_bucket`` observations, or with all
    observations equal, are skipped with a warning and left as NaN.
    """
    df = lgd_history_frame(lgd_history)
    m = {}
    for cell, grp in df.groupby("cell", sort=True):
        m[cell] = float(np.clip(grp["lgd"].clip(clamp, 1.0 - clamp).mean(), clamp, 1.0 - clamp))
    rows, skipped = {}, []
    for (cell, t), grp in df.groupby(["cell", "time"], sort=True):
        try:
            rows[(t, cell)] = fit_beta_mu_mle(grp["lgd"].to_numpy(), m[cell],
                                              clamp=clamp, min_obs=min_bucket)
        except (InsufficientDataError, DegenerateDataError) as exc:
            skipped.append((cell, t))
            warnings.warn(f"cell {cell} time {t}: bucket skipped ({exc})",
                          RuntimeWarning, stacklevel=2)
    series = pd.Series(rows, dtype=float)
    if series.empty:
        mu = pd.DataFrame(dtype=float)
    else:
        series.index = pd.MultiIndex.from_tuples(series.index, names=["time", "cell"])
        mu = series.unstack("cell")
        mu = mu[sorted(mu.columns)]
    return CellMuFit(mu, m, skipped)


def estimate_joint_covariance(z_series, beta_series, min_overlap=MIN_HISTORY,
                              on_insufficient="raise"):
    """Sample covariances ``theta = Cov(Z, Z)`` and ``psi = Cov(Z, beta)``.

    Both inputs are wide (time x cell) frames; every pair uses the times
    where both series are observed. With ``on_insufficient="zero"`` a pair
    with fewer than ``min_overlap`` common points is set to zero (with a
    warning) instead of raising.
    """
    z = pd.DataFrame(z_series).astype(float)
    b = pd.DataFrame(beta_series).astype(float)
    idx = z.index.union(b.index)
    z, b = z.reindex(idx), b.reindex(idx)

    def pair_cov(x, y, label):
        keep = np.isfinite(x) & np.isfinite(y)
        n = int(keep.sum())
        if n < min_overlap:
            if on_insufficient == "raise":
                raise InsufficientDataError(f"{label}: {n} overlapping points, need {min_overlap}")
            warnings.warn(f"{label}: {n} overlapping points; covariance set to 0",
                          RuntimeWarning, stacklevel=3)
            return 0.0
        xa, ya = x[keep], y[keep]
        return float(np.dot(xa - xa.mean(), ya - ya.mean()) / (n - 1))

    zc, bc = list(z.columns), list(b.columns)
    zv, bv = z.to_numpy(), b.to_numpy()
    zl, bl = [_cell_label(c) for c in zc], [_cell_label(c) for c in bc]
    theta = np.zeros((len(zc), len(zc)))
    for i in range(len(zc)):
        for j in range(i, len(zc)):
            theta[i, j] = theta[j, i] = pair_cov(zv[:, i], zv[:, j], f"Z[{zl[i]}] / Z[{zl[j]}]")
    psi = np.zeros((len(zc), len(bc)))
    for i in range(len(zc)):
        for j in range(len(bc)):
            psi[i, j] = pair_cov(zv[:, i], bv[:, j], f"Z[{zl[i]}] / beta[{bl[j]}]")
    return (pd.DataFrame(theta, index=zc, columns=zc),
            pd.DataFrame(psi, index=zc, columns=bc))


def _cell_label(c):
    return str(CellIndex(*c)) if isinstance(c, tuple) and len(c) == 2 else str(c)


def joint_covariance(beta_cov, psi, theta):
    """Stacked covariance of ``[beta, Z]`` (beta first)."""
    beta_cov, psi, theta = (np.asarray(a, dtype=float) for a in (beta_cov, psi, theta))
    return np.block([[beta_cov, psi.T], [psi, theta]])


def simulate_z_with_beta(joint_factor, n_beta, rng, size=None, z_mean=None):
    """Split a joint Gaussian draw into its ``beta`` and ``Z`` parts."""
    draw = sample_correlated_gaussians(joint_factor, rng, size)
    beta, z = draw[..., :n_beta], draw[..., n_beta:]
    if z_mean is not None:
        z = z + np.asarray(z_mean, dtype=float)
    return beta, z


@dataclass
class ZConditional:
    """Sampler for ``Z`` given already drawn ``beta``.

    ``Z = z_mean + A @ beta + L @ e`` with ``A = psi @ pinv(Sigma_beta)`` and
    ``L`` the factor of the (PSD-repaired) conditional covariance. Drawing
    ``beta`` first keeps the default draws identical to those of a run
    without LGD factors.
    """

    z_mean: np.ndarray
    coef: np.ndarray
    cond_factor: np.ndarray

    @classmethod
    def build(cls, z_mean, beta_cov, psi, theta):
        beta_cov, psi, theta = (np.asarray(a, dtype=float) for a in (beta_cov, psi, theta))
        coef = psi @ np.linalg.pinv(beta_cov, hermitian=True)
        cond = theta - coef @ psi.T
        cond = 0.5 * (cond + cond.T)
        return cls(np.asarray(z_mean, dtype=float), coef, cholesky_psd(cond))

    def sample(self, beta, gen):
        n = beta.shape[0]
        e = as_generator(gen).standard_normal((n, self.z_mean.size))
        return self.z_mean + beta @ self.coef.T + e @ self.cond_factor.T


def _frame_to_dict(df):
    return {
        "index": [str(i) for i in df.index],
        "columns": [str(c) for c in df.columns],
        "values": [[None if not np.isfinite(v) else float(v) for v in row] for row in df.to_numpy()],
    }


def _frame_from_dict(d, index_cells=False, time_index=False):
    vals = np.array([[np.nan if v is None else v for v in row] for row in d["values"]],
                    dtype=float).reshape(len(d["index"]), len(d["columns"]))
    cols = [CellIndex.parse(c) for c in d["columns"]]
    if index_cells:
        idx = [CellIndex.parse(i) for i in d["index"]]
    else:
        idx = [_parse_time(i) for i in d["index"]]
    return pd.DataFrame(vals, index=idx, columns=cols)


def _parse_time(text):
    try:
        f = float(text)
    except ValueError:
        return text
    return int(f) if f.is_integer() else f


@dataclass
class ModelACalibration:
    mu_series: pd.DataFrame
    z_series: pd.DataFrame
    m: dict
    z_mean: dict
    theta: pd.DataFrame
    psi: pd.DataFrame
    complete: bool = True

    def aligned(self, cells, beta_cells=None):
        """``(z_mean, theta, psi)`` arrays for ``cells``.

        Cells without an estimated ``Z`` history get an independent factor
        with the pooled mean and average variance of the estimated cells and
        zero ``psi``.
        """
        cells = [CellIndex(*c) for c in cells]
        beta_cells = cells if beta_cells is None else [CellIndex(*c) for c in beta_cells]
        known = [c for c in self.theta.index if c in self.z_mean]
        if not self.complete or not known:
            raise MissingCalibrationError("Model A calibration has no usable Z history")
        pooled_mean = float(np.mean([self.z_mean[c] for c in known]))
        pooled_var = float(np.mean([self.theta.loc[c, c] for c in known]))
        n = len(cells)
        zm, th = np.empty(n), np.zeros((n, n))
        ps = np.zeros((n, len(beta_cells)))
        fallback = [c for c in cells if c not in known]
        if fallback:
            warnings.warn(f"no Z history for cells {fallback}; using an independent "
                          "LGD factor with pooled moments", RuntimeWarning, stacklevel=2)
        for a, c in enumerate(cells):
            if c in known:
                zm[a] = self.z_mean[c]
                for k, d in enumerate(cells):
                    if d in known:
                        th[a, k] = self.theta.loc[c, d]
                for k, d in enumerate(beta_cells):
                    if d in self.psi.columns:
                        ps[a, k] = self.psi.loc[c, d]
            else:
                zm[a] = pooled_mean
                th[a, a] = pooled_var
        return zm, th, ps

    def to_dict(self):
        return {
            "complete": self.complete,
            "m": {str(c): v for c, v in sorted(self.m.items())},
            "z_mean": {str(c): v for c, v in sorted(self.z_mean.items())},
            "mu_series": _frame_to_dict(self.mu_series),
            "z_series": _frame_to_dict(self.z_series),
            "theta": _frame_to_dict(self.theta),
            "psi": _frame_to_dict(self.psi),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            mu_series=_frame_from_dict(d["mu_series"]),
            z_series=_frame_from_dict(d["z_series"]),
            m={CellIndex.parse(k): v for k, v in d["m"].items()},
            z_mean={CellIndex.parse(k): v for k, v in d["z_mean"].items()},
            theta=_frame_from_dict(d["theta"], index_cells=True),
            psi=_frame_from_dict(d["psi"], index_cells=True),
            complete=bool(d.get("complete", True)),
        )

    @classmethod
    def incomplete(cls):
        empty = pd.DataFrame(dtype=float)
        return cls(empty, empty, {}, {}, empty, empty, complete=False)


class ModelALGD(BaseEstimator):
    """Calibrates the shape-factor LGD model.

    ``fit(lgd_history, beta_history)`` takes long frames with columns
    ``time,industry,region,lgd`` and ``time,industry,region,beta``. Cells
    whose ``Z`` history is shorter than ``min_overlap`` keep no ``Z`` row
    and fall back to an independent factor at simulation time.
    """

    def __init__(self, min_bucket=MIN_BUCKET, min_overlap=MIN_HISTORY, clamp=LGD_CLAMP):
        self.min_bucket = min_bucket
        self.min_overlap = min_overlap
        self.clamp = clamp

    def fit(self, lgd_history, beta_history):
        fit = calibrate_cell_mu(lgd_history, self.min_bucket, self.clamp)
        z = np.log(fit.mu_series) if not fit.mu_series.empty else fit.mu_series
        counts = z.notna().sum() if not z.empty else pd.Series(dtype=int)
        usable = [c for c in z.columns if counts[c] >= self.min_overlap]
        for c in z.columns:
            if c not in usable:
                warnings.warn(f"cell {c}: only {counts[c]} Z estimates; excluded from "
                              "covariance estimation", RuntimeWarning, stacklevel=2)
        betas = beta_panel(beta_history)
        theta, psi = estimate_joint_covariance(z[usable], betas, self.min_overlap,
                                               on_insufficient="zero")
        self.mu_series_ = fit.mu_series
        self.z_series_ = z
        self.m_ = fit.m
        self.z_mean_ = {c: float(z[c].mean()) for c in usable}
        self.theta_ = theta
        self.psi_ = psi
        self.skipped_ = fit.skipped
        self.calibration_ = ModelACalibration(
            fit.mu_series, z, fit.m, self.z_mean_, theta, psi, complete=bool(usable))
        return self

    def sample(self, z, m, rng, size=None):
        check_is_fitted(self, "calibration_")
        return sample_lgd_a(z, m, rng, size)


def beta_variance(mu, nu):
    s = mu + nu
    return mu * nu / (s * s * (s + 1.0))


def model_a_lgd_variance(z, m):
    """Conditional LGD variance given ``Z = z`` (closed form)."""
    mu, nu = lgd_params_from_z(z, m)
    return beta_variance(mu, nu)


__all__ = [
    "ModelACalibration", "ModelALGD", "ZConditional", "calibrate_cell_mu",
    "estimate_joint_covariance", "joint_covariance", "lgd_params_from_z",
    "model_a_lgd_variance", "sample_lgd_a", "simulate_z_with_beta", "z_from_mu",
]
