"""Synthetic portfolios and calibration histories with known parameters.

Used by the test suite and the demo fixtures; every generator is seeded.
"""
from __future__ import annotations

import numpy as np
import pandas as pd

from .default_model import FactorModel
from .kernel import RngStream, as_generator, cholesky_psd, std_normal_quantile
from .portfolio import CellIndex, Instrument, Portfolio


def synthetic_factor_model(n_industries=3, n_regions=2, seed=0, b_range=(0.1, 0.3),
                           chi_range=(0.03, 0.08), region_corr=0.4, tau=0.25) -> FactorModel:
    gen = as_generator(RngStream(seed, 0))
    regions = tuple(range(1, n_regions + 1))
    cells = [CellIndex(i, r) for r in regions for i in range(1, n_industries + 1)]
    b = {c: float(gen.uniform(*b_range)) for c in cells}
    chi = {r: float(gen.uniform(*chi_range)) for r in regions}
    rho = np.full((n_regions, n_regions), region_corr)
    np.fill_diagonal(rho, 1.0)
    return FactorModel(b=b, chi=chi, rho=rho, regions=regions, default_tau=tau)


def synthetic_portfolio(n_instruments=1000, model: FactorModel = None, seed=0,
                        pd_range=(5e-4, 0.05), exposure_range=(1.0, 100.0),
                        n_ratings=40, currency="CHF") -> Portfolio:
    """One instrument per firm, cells drawn uniformly from the model's cells."""
    model = model or synthetic_factor_model(seed=seed)
    gen = as_generator(RngStream(seed, 1))
    cells = model.cells
    insts = []
    lo, hi = np.log(pd_range[0]), np.log(pd_range[1])
    for f in range(1, n_instruments + 1):
        cell = cells[int(gen.integers(len(cells)))]
        pd_ = float(np.exp(gen.uniform(lo, hi)))
        rating = int(np.clip(np.ceil((np.log(pd_) - lo) / (hi - lo) * (n_ratings - 1)), 1, n_ratings - 1))
        insts.append(Instrument(
            id=f"I{f:05d}", firm=f, cell=cell, rating=rating, pd=pd_,
            expected_lgd=float(gen.uniform(0.1, 0.9)),
            collateralized=bool(gen.random() < 0.5),
            exposure=float(gen.uniform(*exposure_range)), currency=currency,
        ))
    return Portfolio(tuple(insts), currency=currency, n_ratings=n_ratings)


def synthetic_beta_history(model: FactorModel, n_times=120, seed=0) -> pd.DataFrame:
    """Long ``time,industry,region,beta`` frame drawn from the factor structure."""
    gen = as_generator(RngStream(seed, 2))
    regions = list(model.regions)
    gamma = gen.standard_normal((n_times, len(regions))) @ cholesky_psd(model.rho).T
    rows = []
    for c in model.cells:
        r = regions.index(c.region)
        series = model.b[c] * gamma[:, r] + model.chi[c.region] * gen.standard_normal(n_times)
        rows.extend((t, c.industry, c.region, float(v)) for t, v in enumerate(series, start=1))
    return pd.DataFrame(rows, columns=["time", "industry", "region", "beta"])


def synthetic_lgd_history(beta_history: pd.DataFrame, m=None, z_mean=1.0, z_sd=0.3,
                          beta_coupling=1.0, obs_per_bucket=40, seed=0) -> pd.DataFrame:
    """LGD observations whose per-bucket shape follows ``exp(Z)`` with
    ``Z = z_mean + beta_coupling * beta + noise``."""
    gen = as_generator(RngStream(seed, 3))
    rows = []
    for rec in beta_history.itertuples(index=False):
        cell = CellIndex(int(rec.industry), int(rec.region))
        mean = (m or {}).get(cell, 0.45)
        z = z_mean + beta_coupling * rec.beta + z_sd * gen.standard_normal()
        mu = np.exp(z)
        draws = gen.beta(mu, mu * (1 - mean) / mean, size=obs_per_bucket)
        rows.extend((rec.time, cell.industry, cell.region, float(x)) for x in draws)
    return pd.DataFrame(rows, columns=["time", "industry", "region", "lgd"])


def synthetic_default_records(cells, n_per_cell=200, pd_=0.02, xi=4.0, lbar=0.45,
                              collateralized=False, seed=0) -> pd.DataFrame:
    """Default records generated by the perturbed-rank construction."""
    from .model_b import ModelBParams, sample_lgd_b_arrays

    gen = as_generator(RngStream(seed, 4))
    params = ModelBParams(lbar, collateralized, xi=xi)
    c = std_normal_quantile(pd_)
    rows = []
    for cell in cells:
        u = gen.random(n_per_cell)
        g = std_normal_quantile(np.clip(u * pd_, 1e-300, None))
        g = np.minimum(g, np.nextafter(c, -np.inf))
        v = gen.random(n_per_cell)
        lgd = sample_lgd_b_arrays(g, pd_, params.lbar, params.delta, params.shape, params.xi, v)
        rows.extend((1, cell.industry, cell.region, float(gi), pd_, float(li),
                     str(collateralized).lower()) for gi, li in zip(g, lgd))
    return pd.DataFrame(rows, columns=["time", "industry", "region", "g", "pd", "lgd",
                                       "collateralized"])
