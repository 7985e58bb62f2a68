"""Structural correlated-default model.

Firm equity log-returns split into a drift, a cell-level systematic part
``beta`` and a firm-level idiosyncratic part ``eps``. Within a region the
cell systematic parts load on one region factor ``gamma``::

    beta[(i, r)] = b[(i, r)] * gamma[r] + v[(i, r)],   v ~ N(0, chi[r]**2)

The standardized return ``G = (beta + eps) / sqrt(sigma**2 + tau**2)`` is
standard normal and a firm defaults in a period when ``G < Phi^-1(pd)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import DomainError, InsufficientDataError, InputValidationError
from .kernel import (
    as_generator,
    cholesky_psd,
    repair_psd,
    sample_correlated_gaussians,
    std_normal_cdf,
    std_normal_quantile,
)
from .portfolio import CellIndex

PD_FLOOR = 1e-6
MIN_HISTORY = 12


@dataclass(frozen=True)
class FactorModel:
    """Calibrated default-model parameters.

    ``rho`` is indexed by ``regions`` (in order). ``sigma`` defaults to the
    model-implied cell volatility ``sqrt(rho[r, r] * b**2 + chi[r]**2)``.
    Firms missing from ``tau`` use ``default_tau``.
    """

    b: dict
    chi: dict
    rho: np.ndarray
    regions: tuple
    sigma: dict = None
    tau: dict = field(default_factory=dict)
    default_tau: float = 0.25
    mu_drift: dict = field(default_factory=dict)
    log_equity: dict = field(default_factory=dict)
    firm_cells: dict = field(default_factory=dict)

    def __post_init__(self):
        b = {CellIndex(*c): float(v) for c, v in self.b.items()}
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "chi", {int(r): float(v) for r, v in self.chi.items()})
        object.__setattr__(self, "regions", tuple(int(r) for r in self.regions))
        rho = np.atleast_2d(np.asarray(self.rho, dtype=float))
        if rho.shape != (len(self.regions), len(self.regions)):
            raise DomainError("rho shape does not match regions")
        if len(self.regions) and not np.allclose(np.diag(rho), 1.0, atol=1e-12):
            raise DomainError("rho must have unit diagonal")
        object.__setattr__(self, "rho", repair_psd(rho))
        for c in b:
            if c.region not in self.regions:
                raise DomainError(f"cell {c} refers to unknown region {c.region}")
            if c.region not in self.chi or self.chi[c.region] < 0:
                raise DomainError(f"missing or negative chi for region {c.region}")
        if self.sigma is None:
            sig = {c: float(np.sqrt(self.beta_cov(c, c))) for c in b}
        else:
            sig = {CellIndex(*c): float(v) for c, v in self.sigma.items()}
        object.__setattr__(self, "sigma", sig)
        object.__setattr__(self, "tau", {int(f): float(v) for f, v in self.tau.items()})
        object.__setattr__(self, "firm_cells",
                           {int(f): CellIndex(*c) for f, c in self.firm_cells.items()})
        if self.default_tau < 0 or any(v < 0 for v in self.tau.values()):
            raise DomainError("tau must be non-negative")
        if any(v < 0 for v in sig.values()):
            raise DomainError("sigma must be non-negative")

    @property
    def cells(self):
        return sorted(self.b)

    def _region_pos(self, r):
        return self.regions.index(r)

    def beta_cov(self, c1, c2) -> float:
        c1, c2 = CellIndex(*c1), CellIndex(*c2)
        for c in (c1, c2):
            if c not in self.b:
                raise DomainError(f"unknown cell {c}")
        rho = self.rho[self._region_pos(c1.region), self._region_pos(c2.region)]
        out = rho * self.b[c1] * self.b[c2]
        if c1 == c2:
            out += self.chi[c1.region] ** 2
        return float(out)

    def firm_tau(self, firm) -> float:
        return self.tau.get(int(firm), self.default_tau)

    def total_vol(self, firm) -> float:
        cell = self.firm_cells[int(firm)]
        return float(np.sqrt(self.sigma[cell] ** 2 + self.firm_tau(firm) ** 2))

    def bind(self, portfolio) -> "FactorModel":
        """Attach the portfolio's firm-to-cell map."""
        cells = {f: cell for f, (cell, _) in portfolio.firms().items()}
        unknown = sorted({c for c in cells.values() if c not in self.b})
        if unknown:
            raise DomainError(f"portfolio cells not covered by the factor model: {unknown}")
        return replace(self, firm_cells={**self.firm_cells, **cells})

    def to_dict(self):
        return {
            "regions": list(self.regions),
            "rho": self.rho.tolist(),
            "b": {str(c): v for c, v in sorted(self.b.items())},
            "chi": {str(r): v for r, v in sorted(self.chi.items())},
            "sigma": {str(c): v for c, v in sorted(self.sigma.items())},
            "tau": {str(f): v for f, v in sorted(self.tau.items())},
            "default_tau": self.default_tau,
            "mu_drift": {str(f): v for f, v in sorted(self.mu_drift.items())},
            "log_equity": {str(f): v for f, v in sorted(self.log_equity.items())},
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            b={CellIndex.parse(k): v for k, v in d["b"].items()},
            chi={int(k): v for k, v in d["chi"].items()},
            rho=np.asarray(d["rho"], dtype=float),
            regions=tuple(d["regions"]),
            sigma={CellIndex.parse(k): v for k, v in d["sigma"].items()} if d.get("sigma") else None,
            tau={int(k): v for k, v in d.get("tau", {}).items()},
            default_tau=float(d.get("default_tau", 0.25)),
            mu_drift={int(k): float(v) for k, v in d.get("mu_drift", {}).items()},
            log_equity={int(k): float(v) for k, v in d.get("log_equity", {}).items()},
        )


@dataclass(frozen=True)
class DefaultScenario:
    g: np.ndarray
    indicators: np.ndarray


def beta_cell_covariance(model: FactorModel, cell1, cell2) -> float:
    """``rho[r1, r2] * b1 * b2 + chi[r1]**2 * [cell1 == cell2]``."""
    return model.beta_cov(cell1, cell2)


def beta_covariance_matrix(model: FactorModel, cells) -> np.ndarray:
    cells = [CellIndex(*c) for c in cells]
    bv = np.array([model.b[c] for c in cells]) if cells else np.zeros(0)
    pos = [model._region_pos(c.region) for c in cells]
    cov = model.rho[np.ix_(pos, pos)] * np.outer(bv, bv)
    chi = np.array([model.chi[c.region] for c in cells])
    # the residual term applies to every pair sharing a cell, not only the diagonal
    same = np.array([[a == b for b in cells] for a in cells], dtype=bool).reshape(len(cells), len(cells))
    cov += np.where(same, np.outer(chi, chi), 0.0)
    return cov


def g_correlation(model: FactorModel, f1, f2) -> float:
    if f1 == f2:
        return 1.0
    s1, s2 = model.total_vol(f1), model.total_vol(f2)
    if s1 == 0.0 or s2 == 0.0:
        raise DomainError("zero total volatility")
    return model.beta_cov(model.firm_cells[f1], model.firm_cells[f2]) / (s1 * s2)


def build_g_correlation_matrix(model: FactorModel, portfolio) -> np.ndarray:
    """Correlation matrix of the firms' standardized returns, PSD-repaired."""
    model = model.bind(portfolio)
    firms = list(portfolio.firms())
    cells = [model.firm_cells[f] for f in firms]
    s = np.array([model.total_vol(f) for f in firms])
    if np.any(s == 0.0):
        raise DomainError("zero total volatility")
    corr = beta_covariance_matrix(model, cells) / np.outer(s, s)
    np.fill_diagonal(corr, 1.0)
    return repair_psd(corr)


def default_threshold(pd):
    """Default barrier ``Phi^-1(pd)`` with pd clamped to ``[1e-6, 1 - 1e-6]``."""
    p = np.asarray(pd, dtype=float)
    if np.any(~(p > 0.0) | ~(p < 1.0)):
        raise DomainError("pd must lie in (0, 1)")
    return std_normal_quantile(np.clip(p, PD_FLOOR, 1.0 - PD_FLOOR))


def conditional_pd(model: FactorModel, firm) -> float:
    """One-period default probability implied by the firm's equity level.

    Uses the firm's log-equity and next-period drift; the barrier sits at
    log-equity 0.
    """
    firm = int(firm)
    try:
        log_e = model.log_equity[firm]
    except KeyError:
        raise DomainError(f"no log-equity for firm {firm}") from None
    mu = model.mu_drift.get(firm, 0.0)
    var = model.sigma[model.firm_cells[firm]] ** 2 + model.firm_tau(firm) ** 2
    if var <= 0.0:
        raise DomainError("zero total volatility")
    if np.isinf(log_e):
        return 0.0 if log_e > 0 else 1.0
    return std_normal_cdf((-log_e - mu + 0.5 * var) / np.sqrt(var))


def simulate_defaults(corr_factor, thresholds, rng, size=None) -> DefaultScenario:
    """Draw standardized returns and flag ``g < threshold``."""
    c = np.asarray(thresholds, dtype=float)
    factor = np.asarray(corr_factor, dtype=float)
    if factor.shape[0] != c.shape[0]:
        raise DomainError("factor and thresholds disagree in dimension")
    g = sample_correlated_gaussians(factor, rng, size)
    return DefaultScenario(g, g < c)


# ---------------------------------------------------------------------------
# factor-structured sampling used by the simulation engine
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FirmFactorLayout:
    """Arrays needed to draw G through the cell factors instead of a dense
    firm-by-firm Cholesky factor.

    ``G[f] = beta[cell(f)] / s[f] + idio[f] * e[f]`` reproduces the unit
    diagonal and off-diagonal entries of :func:`build_g_correlation_matrix`.
    """

    firms: tuple
    cells: tuple
    firm_cell: np.ndarray
    loading: np.ndarray
    idio: np.ndarray
    beta_cov: np.ndarray
    beta_factor: np.ndarray


def firm_factor_layout(model: FactorModel, portfolio) -> FirmFactorLayout:
    model = model.bind(portfolio)
    firms = tuple(portfolio.firms())
    cells = tuple(sorted({model.firm_cells[f] for f in firms}))
    pos = {c: k for k, c in enumerate(cells)}
    firm_cell = np.array([pos[model.firm_cells[f]] for f in firms], dtype=np.intp)
    cov = repair_psd(beta_covariance_matrix(model, cells))
    s = np.array([model.total_vol(f) for f in firms])
    if np.any(s == 0.0):
        raise DomainError("zero total volatility")
    share = np.diag(cov)[firm_cell] / s ** 2
    if np.any(share > 1.0 + 1e-9):
        warnings.warn("cell variance exceeds sigma**2 + tau**2 for some firms; "
                      "idiosyncratic part set to zero", RuntimeWarning, stacklevel=2)
    idio = np.sqrt(np.clip(1.0 - share, 0.0, None))
    return FirmFactorLayout(firms, cells, firm_cell, 1.0 / s, idio, cov, cholesky_psd(cov))


def sample_g(layout: FirmFactorLayout, gen, n):
    """Return ``(beta, G)`` with shapes ``(n, cells)`` and ``(n, firms)``."""
    gen = as_generator(gen)
    beta = gen.standard_normal((n, len(layout.cells))) @ layout.beta_factor.T
    eps = gen.standard_normal((n, len(layout.firms)))
    g = beta[:, layout.firm_cell] * layout.loading + eps * layout.idio
    return beta, g


# ---------------------------------------------------------------------------
# calibration of the region factor structure
# ---------------------------------------------------------------------------

def beta_panel(history) -> pd.DataFrame:
    """Wide (time x cell) panel from a long ``time,industry,region,beta`` frame.

    A frame that is already wide (columns are cells) is returned sorted.
    """
    if isinstance(history, pd.DataFrame) and {"time", "industry", "region", "beta"} <= set(history.columns):
        df = history.copy()
        df["cell"] = [CellIndex(int(i), int(r)) for i, r in zip(df["industry"], df["region"])]
        if df.duplicated(["time", "cell"]).any():
            raise InputValidationError("duplicate (time, industry, region) rows in beta history")
        wide = df.pivot(index="time", columns="cell", values="beta")
    else:
        wide = pd.DataFrame(history).copy()
        wide.columns = [CellIndex(*c) for c in wide.columns]
    wide = wide.sort_index()
    return wide[sorted(wide.columns)].astype(float)


@dataclass
class BetaDecomposition:
    b: dict
    chi: dict
    gamma: pd.DataFrame
    rho: np.ndarray
    regions: tuple
    components: dict
    means: dict


def decompose_beta_series(history, min_history=MIN_HISTORY) -> BetaDecomposition:
    """Split cell beta series into region factors, loadings and residual scales.

    Per region the first principal component of the centred cell series
    (times where every cell of the region is observed) is scaled to unit
    sample variance and oriented so the mean loading is positive. Loadings
    are regression slopes on it; ``chi`` is the pooled residual standard
    deviation of the region (divisor ``n_cells * (T - 1)``). ``rho`` is the
    sample correlation of the region factors over common times.
    """
    panel = beta_panel(history)
    regions = tuple(sorted({c.region for c in panel.columns}))
    b, chi, comps, means, gammas = {}, {}, {}, {}, {}
    for r in regions:
        cols = [c for c in panel.columns if c.region == r]
        block = panel[cols].dropna()
        T = len(block)
        if T < min_history:
            raise InsufficientDataError(
                f"region {r}: {T} complete time points, need {min_history}")
        x = block.to_numpy()
        mean = x.mean(axis=0)
        xc = x - mean
        if np.all(np.abs(xc).max(axis=0) == 0.0):
            raise InsufficientDataError(f"region {r}: zero variance beta series")
        _, _, vt = np.linalg.svd(xc, full_matrices=False)
        v = vt[0]
        if v.sum() < 0:
            v = -v
        raw = xc @ v
        scale = raw.std(ddof=1)
        if scale == 0.0:
            raise InsufficientDataError(f"region {r}: zero variance beta series")
        gamma = raw / scale
        load = xc.T @ gamma / (T - 1)
        resid = xc - np.outer(gamma, load)
        chi[r] = float(np.sqrt((resid ** 2).sum() / (len(cols) * (T - 1))))
        for c, l in zip(cols, load):
            b[c] = float(l)
        comps[r] = v / scale
        means[r] = mean
        gammas[r] = pd.Series(gamma, index=block.index)
    gamma_df = pd.DataFrame(gammas)
    R = len(regions)
    rho = np.eye(R)
    for a in range(R):
        for c in range(a + 1, R):
            pair = gamma_df[[regions[a], regions[c]]].dropna()
            if len(pair) < 2:
                raise InsufficientDataError(
                    f"regions {regions[a]} and {regions[c]} share fewer than 2 time points")
            rho[a, c] = rho[c, a] = float(np.corrcoef(pair.to_numpy().T)[0, 1])
    return BetaDecomposition(b, chi, gamma_df, repair_psd(rho), regions, comps, means)


class RegionFactorModel(BaseEstimator):
    """Estimator wrapper around :func:`decompose_beta_series`.

    ``fit`` takes a long ``time,industry,region,beta`` frame (or a wide
    time-by-cell panel). ``transform`` projects a panel onto the fitted
    region factors.
    """

    def __init__(self, min_history=MIN_HISTORY, default_tau=0.25):
        self.min_history = min_history
        self.default_tau = default_tau

    def fit(self, X, y=None):
        dec = decompose_beta_series(X, min_history=self.min_history)
        self.b_ = dec.b
        self.chi_ = dec.chi
        self.rho_ = dec.rho
        self.regions_ = dec.regions
        self.gamma_ = dec.gamma
        self.components_ = dec.components
        self.means_ = dec.means
        self.cells_ = tuple(sorted(dec.b))
        self.beta_panel_ = beta_panel(X)
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        panel = beta_panel(X)
        out = {}
        for r in self.regions_:
            cols = [c for c in self.cells_ if c.region == r]
            missing = [c for c in cols if c not in panel.columns]
            if missing:
                raise InputValidationError(f"panel lacks cells {missing}")
            out[r] = (panel[cols].to_numpy() - self.means_[r]) @ self.components_[r]
        return pd.DataFrame(out, index=panel.index)

    def to_factor_model(self, tau=None, mu_drift=None, log_equity=None) -> FactorModel:
        check_is_fitted(self, "b_")
        return FactorModel(
            b=self.b_, chi=self.chi_, rho=self.rho_, regions=self.regions_,
            tau=tau or {}, default_tau=self.default_tau,
            mu_drift=mu_drift or {}, log_equity=log_equity or {},
        )
