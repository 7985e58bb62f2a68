"""Credit-portfolio loss simulation with correlated defaults and stochastic LGD."""

__version__ = "0.1.0"

from .default_model import (  # noqa: E402
    FactorModel,
    RegionFactorModel,
    build_g_correlation_matrix,
    conditional_pd,
    default_threshold,
    simulate_defaults,
)
from .model_a import ModelACalibration, ModelALGD  # noqa: E402
from .model_b import ModelBCalibration, ModelBLGD, ModelBParams  # noqa: E402
from .portfolio import CellIndex, Instrument, Portfolio, load_portfolio  # noqa: E402
from .simulation import (  # noqa: E402
    CreditLossSimulator,
    LossStatistics,
    SimulationConfig,
    compare_models,
    loss_statistics,
    run_simulation,
)

__all__ = [
    "CellIndex", "CreditLossSimulator", "FactorModel", "Instrument", "LossStatistics",
    "ModelACalibration", "ModelALGD", "ModelBCalibration", "ModelBLGD", "ModelBParams",
    "Portfolio", "RegionFactorModel", "SimulationConfig", "build_g_correlation_matrix",
    "compare_models", "conditional_pd", "default_threshold", "load_portfolio",
    "loss_statistics", "run_simulation", "simulate_defaults",
]
