"""Monte Carlo loss simulation and loss statistics.

Scenarios are generated in fixed blocks of ``STREAM_BLOCK`` scenarios. Block
``k`` draws from ``RngStream(master_seed, k)``, split further by period and
purpose (default drivers, Model A factors, Model B uniforms). Work is
scheduled in batches of whole blocks, so neither the batch size nor the
number of worker threads changes any draw.

Default drivers use their own substream, so the three LGD modes see the
same default indicators for the same seed.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .default_model import PD_FLOOR, FactorModel, default_threshold, firm_factor_layout, sample_g
from .exceptions import DomainError, MissingCalibrationError
from .kernel import RngStream
from .model_a import ModelACalibration, ZConditional
from .model_b import ModelBCalibration, shape_params, sample_lgd_b_arrays
from .portfolio import Portfolio

MODES = ("deterministic", "model_a", "model_b")
MODE_LABELS = {"deterministic": "Deterministic LGD", "model_a": "Model A", "model_b": "Model B"}
DEFAULT_LEVELS = (0.90, 0.95, 0.99, 0.9995, 0.9998)
STREAM_BLOCK = 2048

_DEFAULTS, _MODEL_A, _MODEL_B = 0, 1, 2


@dataclass
class SimulationConfig:
    scenarios: int = 100_000
    horizon_periods: int = 1
    lgd_mode: str = "deterministic"
    master_seed: int = 0
    batch_size: int = 16_384
    quantile_levels: tuple = DEFAULT_LEVELS
    threads: int = 1

    def __post_init__(self):
        if int(self.scenarios) < 1:
            raise DomainError("scenarios must be positive")
        if int(self.horizon_periods) < 1:
            raise DomainError("horizon_periods must be positive")
        if self.lgd_mode not in MODES:
            raise DomainError(f"lgd_mode must be one of {MODES}")
        if int(self.batch_size) < 1 or int(self.threads) < 1:
            raise DomainError("batch_size and threads must be positive")
        levels = tuple(float(a) for a in self.quantile_levels)
        if not levels or any(not 0.0 < a < 1.0 for a in levels) or any(
                b <= a for a, b in zip(levels, levels[1:])):
            raise DomainError("quantile levels must be strictly increasing in (0, 1)")
        self.quantile_levels = levels
        self.scenarios = int(self.scenarios)
        self.horizon_periods = int(self.horizon_periods)
        self.batch_size = int(self.batch_size)
        self.threads = int(self.threads)


@dataclass
class LossStatistics:
    el: float
    quantiles: dict
    etls: dict
    scenario_count: int
    seed: int = None
    mode: str = None
    sd: float = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d["quantiles"] = {repr(float(k)): v for k, v in self.quantiles.items()}
        d["etls"] = {repr(float(k)): v for k, v in self.etls.items()}
        extra = d.pop("extra")
        d.update(extra)
        return d


def _order_index(alpha, n):
    return min(max(math.ceil(alpha * n - 1e-9), 1), n)


def _tail_count(alpha, n):
    return max(1, math.floor((1.0 - alpha) * n + 1e-9))


def loss_statistics(losses, levels=DEFAULT_LEVELS, seed=None, mode=None) -> LossStatistics:
    """EL, VaR quantiles and expected tail losses of a loss sample.

    ``sd`` is the sample standard deviation, so ``sd / sqrt(n)`` is the
    standard error of ``el``.

    ``q_alpha`` is the ascending order statistic of rank ``ceil(alpha * n)``;
    ``ETL_alpha`` is the mean of the largest ``max(1, floor((1 - alpha) * n))``
    losses.
    """
    x = np.sort(np.asarray(losses, dtype=float).ravel())
    n = x.size
    if n == 0:
        raise DomainError("empty loss sample")
    q, etl = {}, {}
    for a in levels:
        a = float(a)
        q[a] = float(x[_order_index(a, n) - 1])
        etl[a] = float(x[n - _tail_count(a, n):].mean())
    sd = float(x.std(ddof=1)) if n > 1 else 0.0
    return LossStatistics(float(x.mean()), q, etl, n, seed, mode, sd)


@dataclass
class _Plan:
    layout: object
    firm_threshold: np.ndarray
    firm_pd: np.ndarray
    inst_firm: np.ndarray
    inst_cell: np.ndarray
    m: np.ndarray
    exposure: np.ndarray
    model_a: ZConditional = None
    b_lbar: np.ndarray = None
    b_delta: np.ndarray = None
    b_shape: np.ndarray = None
    b_xi: np.ndarray = None


def _build_plan(portfolio: Portfolio, factor_model: FactorModel, modes,
                model_a: ModelACalibration = None, model_b: ModelBCalibration = None) -> _Plan:
    layout = firm_factor_layout(factor_model, portfolio)
    firm_pos = {f: k for k, f in enumerate(layout.firms)}
    cell_pos = {c: k for k, c in enumerate(layout.cells)}
    firm_pd = np.array([pd_ for (_, pd_) in portfolio.firms().values()])
    active = ~portfolio.is_defaulted()
    insts = [inst for inst, a in zip(portfolio, active) if a]
    exposure = np.array([inst.exposure for inst in insts], dtype=float)
    if not np.all(np.isfinite(exposure)):
        raise DomainError("every simulated instrument needs a finite exposure")
    plan = _Plan(
        layout=layout,
        firm_threshold=np.asarray(default_threshold(firm_pd), dtype=float).reshape(-1),
        firm_pd=np.clip(firm_pd, PD_FLOOR, 1.0 - PD_FLOOR),
        inst_firm=np.array([firm_pos[inst.firm] for inst in insts], dtype=np.intp),
        inst_cell=np.array([cell_pos[inst.cell] for inst in insts], dtype=np.intp),
        m=np.array([inst.expected_lgd for inst in insts], dtype=float),
        exposure=exposure,
    )
    if "model_a" in modes:
        if model_a is None or not model_a.complete:
            raise MissingCalibrationError("model_a mode needs a complete Model A calibration")
        zm, theta, psi = model_a.aligned(layout.cells)
        plan.model_a = ZConditional.build(zm, layout.beta_cov, psi, theta)
    if "model_b" in modes:
        if model_b is None or not model_b.complete:
            raise MissingCalibrationError("model_b mode needs a complete Model B calibration")
        shapes = [shape_params(inst.expected_lgd, inst.collateralized) for inst in insts]
        plan.b_shape = np.array([s for s, _ in shapes])
        plan.b_delta = np.array([d for _, d in shapes])
        plan.b_lbar = plan.m.copy()
        plan.b_xi = np.array([model_b.cell_xi(inst.cell) for inst in insts])
    return plan


def _simulate_block(plan: _Plan, modes, master_seed, block, n, periods):
    """Losses of ``n`` scenarios for each mode, shape ``(len(modes), n)``."""
    stream = RngStream(master_seed, block)
    losses = np.zeros((len(modes), n))
    alive = None
    for t in range(periods):
        beta, g = sample_g(plan.layout, stream.child(t, _DEFAULTS).generator(), n)
        hit = g < plan.firm_threshold
        if alive is not None:
            hit &= alive
            alive &= ~hit
        elif periods > 1:
            alive = ~hit
        s_idx, j_idx = np.nonzero(hit[:, plan.inst_firm])
        if s_idx.size == 0 and "model_a" not in modes:
            continue
        expo = plan.exposure[j_idx]
        for k, mode in enumerate(modes):
            if mode == "deterministic":
                lgd = plan.m[j_idx]
            elif mode == "model_a":
                gen = stream.child(t, _MODEL_A).generator()
                z = plan.model_a.sample(beta, gen)
                mu = np.exp(z[s_idx, plan.inst_cell[j_idx]])
                m = plan.m[j_idx]
                lgd = gen.beta(mu, mu * (1.0 - m) / m) if s_idx.size else np.zeros(0)
            else:
                gen = stream.child(t, _MODEL_B).generator()
                v = gen.random(s_idx.size)
                f = plan.inst_firm[j_idx]
                lgd = sample_lgd_b_arrays(
                    g[s_idx, f], plan.firm_pd[f], plan.b_lbar[j_idx], plan.b_delta[j_idx],
                    plan.b_shape[j_idx], plan.b_xi[j_idx], v)
            losses[k] += np.bincount(s_idx, weights=lgd * expo, minlength=n)
    return losses


def _run(plan, modes, config: SimulationConfig):
    n = config.scenarios
    blocks = [(k, min(STREAM_BLOCK, n - k * STREAM_BLOCK))
              for k in range(-(-n // STREAM_BLOCK))]
    per_task = max(1, -(-config.batch_size // STREAM_BLOCK))
    tasks = [blocks[i:i + per_task] for i in range(0, len(blocks), per_task)]

    def work(task):
        return [_simulate_block(plan, modes, config.master_seed, k, size,
                                config.horizon_periods) for k, size in task]

    if config.threads == 1 or len(tasks) == 1:
        results = [work(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(work, tasks))
    return np.concatenate([blk for res in results for blk in res], axis=1)


def run_simulation(portfolio, factor_model, model_a=None, model_b=None,
                   config: SimulationConfig = None):
    """Per-scenario credit loss ``sum(X * LGD * EXP)`` under ``config.lgd_mode``."""
    config = config or SimulationConfig()
    modes = (config.lgd_mode,)
    plan = _build_plan(portfolio, factor_model, modes, model_a, model_b)
    return _run(plan, modes, config)[0]


def compare_models(portfolio, factor_model, model_a, model_b, config: SimulationConfig = None):
    """Loss statistics of all three LGD modes on common default draws."""
    config = config or SimulationConfig()
    plan = _build_plan(portfolio, factor_model, MODES, model_a, model_b)
    losses = _run(plan, MODES, config)
    return {mode: loss_statistics(losses[k], config.quantile_levels, config.master_seed, mode)
            for k, mode in enumerate(MODES)}


def level_label(alpha):
    return f"{alpha * 100:.10g}"


def comparison_table(stats: dict) -> pd.DataFrame:
    """Rows per LGD mode, columns ``EL, q_<level>..., ETL_<level>...``."""
    rows = []
    for mode in MODES:
        if mode not in stats:
            continue
        s = stats[mode]
        row = {"Model": MODE_LABELS[mode], "EL": s.el}
        row.update({f"q_{level_label(a)}": v for a, v in s.quantiles.items()})
        row.update({f"ETL_{level_label(a)}": v for a, v in s.etls.items()})
        rows.append(row)
    return pd.DataFrame(rows).set_index("Model")


def analytic_expected_loss(portfolio, horizon_periods=1):
    """``sum(p_T * m * EXP)`` over non-defaulted instruments, where ``p_T`` is
    the probability of default within the horizon (pd clamped as in the
    simulation)."""
    active = ~portfolio.is_defaulted()
    p = np.clip(portfolio.pd, PD_FLOOR, 1.0 - PD_FLOOR)
    p_t = 1.0 - (1.0 - p) ** horizon_periods
    return float(np.sum((p_t * portfolio.expected_lgd * portfolio.exposure)[active]))


def potential_loss_breakdown(portfolio, dimension="rating"):
    """Expected potential loss ``pd * m * EXP`` summed by rating, industry or region."""
    key = {
        "rating": lambda inst: inst.rating,
        "industry": lambda inst: inst.cell.industry,
        "region": lambda inst: inst.cell.region,
    }.get(dimension)
    if key is None:
        raise DomainError(f"unknown breakdown dimension {dimension!r}")
    out: dict = {}
    for inst in portfolio:
        out[key(inst)] = out.get(key(inst), 0.0) + inst.pd * inst.expected_lgd * inst.exposure
    return dict(sorted(out.items()))


class CreditLossSimulator(BaseEstimator):
    """Estimator-style front end to the Monte Carlo engine.

    ``fit`` binds a portfolio and calibrations and precomputes factor
    loadings and thresholds; ``simulate`` returns the loss sample and
    ``loss_statistics`` summarises it.
    """

    def __init__(self, scenarios=100_000, horizon_periods=1, lgd_mode="deterministic",
                 master_seed=0, batch_size=16_384, quantile_levels=DEFAULT_LEVELS, threads=1):
        self.scenarios = scenarios
        self.horizon_periods = horizon_periods
        self.lgd_mode = lgd_mode
        self.master_seed = master_seed
        self.batch_size = batch_size
        self.quantile_levels = quantile_levels
        self.threads = threads

    def _config(self):
        return SimulationConfig(self.scenarios, self.horizon_periods, self.lgd_mode,
                                self.master_seed, self.batch_size, self.quantile_levels,
                                self.threads)

    def fit(self, portfolio, factor_model, model_a=None, model_b=None):
        self.config_ = self._config()
        self.plan_ = _build_plan(portfolio, factor_model, (self.lgd_mode,), model_a, model_b)
        self.portfolio_ = portfolio
        return self

    def simulate(self):
        check_is_fitted(self, "plan_")
        self.losses_ = _run(self.plan_, (self.lgd_mode,), self._config())[0]
        return self.losses_

    def loss_statistics(self):
        if not hasattr(self, "losses_"):
            self.simulate()
        return loss_statistics(self.losses_, self.config_.quantile_levels,
                               self.master_seed, self.lgd_mode)
