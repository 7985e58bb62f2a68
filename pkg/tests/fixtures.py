"""On-disk fixtures: a portfolio plus calibration histories and a manifest."""
import json

from creditloss.portfolio import save_portfolio
from creditloss.synthetic import (
    synthetic_beta_history,
    synthetic_default_records,
    synthetic_factor_model,
    synthetic_lgd_history,
    synthetic_portfolio,
)


def write_fixture(root, n_instruments=3, scenarios=20_000, seed=1, extra_config=None,
                  with_lgd=True):
    model = synthetic_factor_model(n_industries=2, n_regions=2, seed=seed)
    portfolio = synthetic_portfolio(n_instruments, model, seed=seed, pd_range=(0.01, 0.1))
    save_portfolio(portfolio, root / "portfolio.csv")
    betas = synthetic_beta_history(model, n_times=60, seed=seed)
    betas.to_csv(root / "factor_history.csv", index=False)
    manifest = {
        "portfolio": "portfolio.csv",
        "factor_history": "factor_history.csv",
        "default_records": "default_records.csv",
        "output": "out",
        "config": {"scenarios": scenarios, "master_seed": 7, **(extra_config or {})},
    }
    if with_lgd:
        synthetic_lgd_history(betas, obs_per_bucket=30, seed=seed).to_csv(
            root / "lgd_history.csv", index=False)
        manifest["lgd_history"] = "lgd_history.csv"
    synthetic_default_records(model.cells, n_per_cell=300, xi=3.0, seed=seed).to_csv(
        root / "default_records.csv", index=False)
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path, portfolio
