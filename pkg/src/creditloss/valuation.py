"""Present values, exposures, LGD ratios and the portfolio-value identity."""
from __future__ import annotations

import csv
import math
import os
import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError, InputValidationError

GOV_LABEL = "Gov"


@dataclass(frozen=True)
class DiscountCurve:
    """Discount factors by tenor for one rating class (or ``"Gov"``)."""

    label: str
    factors: dict

    def __post_init__(self):
        f = {float(k): float(v) for k, v in self.factors.items()}
        for s, d in f.items():
            if not 0.0 < d <= 1.0:
                raise DomainError(f"curve {self.label}: discount factor {d} at {s} not in (0, 1]")
        items = sorted(f.items())
        vals = [d for _, d in items]
        if any(b > a for a, b in zip(vals, vals[1:])):
            warnings.warn(f"curve {self.label}: discount factors increase with tenor",
                          RuntimeWarning, stacklevel=2)
        object.__setattr__(self, "factors", dict(items))

    def __getitem__(self, tenor):
        try:
            return self.factors[float(tenor)]
        except KeyError:
            raise DomainError(f"curve {self.label} has no tenor {tenor}") from None


@dataclass(frozen=True)
class CashflowStream:
    times: tuple
    amounts: tuple

    def __post_init__(self):
        t = tuple(float(x) for x in self.times)
        a = tuple(float(x) for x in self.amounts)
        if len(t) != len(a):
            raise DomainError("times and amounts differ in length")
        if any(y <= x for x, y in zip(t, t[1:])):
            raise DomainError("cashflow times must be strictly increasing")
        if t and t[0] < 0:
            raise DomainError("cashflow times must not precede the valuation time")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "amounts", a)

    @classmethod
    def empty(cls):
        return cls((), ())


def present_value(stream: CashflowStream, curve: DiscountCurve) -> float:
    return float(sum(curve[s] * c for s, c in zip(stream.times, stream.amounts)))


def exposure(stream: CashflowStream, rating_curve: DiscountCurve) -> float:
    """Present value under the instrument's rating curve; sign is kept."""
    return present_value(stream, rating_curve)


def lgd_ratio(stream, recovery, rating_curve, gov_curve) -> float:
    """``1 - PV(recovery; gov) / PV(stream; rating)``. Not clamped."""
    pv = present_value(stream, rating_curve)
    if pv == 0.0:
        raise DomainError("zero exposure: LGD ratio undefined")
    return 1.0 - present_value(recovery, gov_curve) / pv


def clamp_lgd(value, name=""):
    """Clamp an LGD ratio to [0, 1] before it enters a beta model."""
    if not 0.0 <= value <= 1.0:
        warnings.warn(f"LGD ratio {value:.6g} {name}outside [0, 1]; clamped",
                      RuntimeWarning, stacklevel=2)
    return min(max(value, 0.0), 1.0)


def potential_loss(lgd, exposure_value):
    lgd = np.asarray(lgd, dtype=float)
    if np.any((lgd < 0.0) | (lgd > 1.0)):
        raise DomainError("lgd must lie in [0, 1]")
    out = lgd * exposure_value
    return float(out) if np.ndim(out) == 0 else out


def credit_loss(indicators, lgds, exposures):
    x, l, e = _aligned(indicators, lgds, exposures)
    return float(np.sum(x * l * e))


def portfolio_value(indicators, lgds, exposures):
    """``sum((1 - X * LGD) * EXP)``."""
    x, l, e = _aligned(indicators, lgds, exposures)
    return float(np.sum((1.0 - x * l) * e))


def _aligned(*arrays):
    arrs = [np.asarray(a, dtype=float).ravel() for a in arrays]
    if len({a.size for a in arrs}) != 1:
        raise DomainError("indicator, LGD and exposure vectors differ in length")
    return arrs


# ---------------------------------------------------------------------------
# flat files
# ---------------------------------------------------------------------------

def load_curves(path) -> dict:
    """``label,tenor,discount_factor`` CSV -> {label: DiscountCurve}."""
    raw: dict = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row, rec in enumerate(csv.DictReader(fh), start=1):
            try:
                label = rec["label"].strip()
                tenor = float(rec["tenor"])
                df = float(rec["discount_factor"])
            except (KeyError, TypeError, ValueError, AttributeError):
                raise InputValidationError("malformed curve row", os.fspath(path), row) from None
            if tenor in raw.setdefault(label, {}):
                raise InputValidationError(f"duplicate tenor {tenor} for {label}", os.fspath(path), row)
            raw[label][tenor] = df
    try:
        return {label: DiscountCurve(label, f) for label, f in raw.items()}
    except DomainError as exc:
        raise InputValidationError(str(exc), os.fspath(path)) from None


def load_cashflows(path) -> dict:
    """``id,time,amount,recovery_flag`` CSV -> {id: (stream, recovery_stream)}."""
    flows: dict = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row, rec in enumerate(csv.DictReader(fh), start=1):
            try:
                iid = rec["id"].strip()
                t = float(rec["time"])
                amt = float(rec["amount"])
                flag = rec["recovery_flag"].strip().lower() in {"1", "true", "yes", "y", "t"}
            except (KeyError, TypeError, ValueError, AttributeError):
                raise InputValidationError("malformed cashflow row", os.fspath(path), row) from None
            if not (math.isfinite(t) and math.isfinite(amt)):
                raise InputValidationError("non-finite cashflow", os.fspath(path), row)
            flows.setdefault(iid, ([], []))[1 if flag else 0].append((t, amt))

    def stream(pairs):
        pairs = sorted(pairs)
        return CashflowStream([p[0] for p in pairs], [p[1] for p in pairs])

    try:
        return {iid: (stream(c), stream(r)) for iid, (c, r) in flows.items()}
    except DomainError as exc:
        raise InputValidationError(str(exc), os.fspath(path)) from None


def resolve_exposures(portfolio, cashflows: dict, curves: dict) -> dict:
    """Exposures for instruments that have cashflow streams.

    The curve for an instrument is looked up by its rating class label.
    """
    out = {}
    for inst in portfolio:
        if inst.id not in cashflows:
            continue
        label = str(inst.rating)
        if label not in curves:
            raise DomainError(f"no discount curve for rating {label} (instrument {inst.id})")
        out[inst.id] = exposure(cashflows[inst.id][0], curves[label])
    return out


def resolve_lgd_ratios(portfolio, cashflows: dict, curves: dict) -> dict:
    """LGD ratios for instruments with both a cashflow and a recovery stream."""
    gov = curves.get(GOV_LABEL)
    out = {}
    for inst in portfolio:
        flows = cashflows.get(inst.id)
        if flows is None or not flows[1].times:
            continue
        if gov is None:
            raise DomainError(f"recovery flows need a {GOV_LABEL!r} curve")
        out[inst.id] = lgd_ratio(flows[0], flows[1], curves[str(inst.rating)], gov)
    return out
