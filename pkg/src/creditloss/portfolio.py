"""Portfolio data model: instruments, industry-region cells and CSV I/O."""
from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, NamedTuple

import numpy as np

from .exceptions import InputValidationError

PORTFOLIO_COLUMNS = (
    "id", "firm", "industry", "region", "rating", "pd",
    "expected_lgd", "collateralized", "exposure",
)
DEFAULT_RATING_CLASSES = 40
DEFAULT_CURRENCY = "XXX"

_TRUE = {"1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n"}


class CellIndex(NamedTuple):
    industry: int
    region: int

    def __str__(self):
        return f"{self.industry},{self.region}"

    @classmethod
    def parse(cls, text: str) -> "CellIndex":
        i, r = str(text).split(",")
        return cls(int(i), int(r))


@dataclass(frozen=True)
class Instrument:
    id: str
    firm: int
    cell: CellIndex
    rating: int
    pd: float
    expected_lgd: float
    collateralized: bool
    exposure: float
    currency: str = DEFAULT_CURRENCY


@dataclass(frozen=True)
class Portfolio:
    instruments: tuple
    currency: str = DEFAULT_CURRENCY
    n_ratings: int = DEFAULT_RATING_CLASSES
    cell_registry: frozenset = field(default=frozenset())

    def __post_init__(self):
        if not self.instruments:
            raise InputValidationError("portfolio is empty")
        ids = [inst.id for inst in self.instruments]
        if len(set(ids)) != len(ids):
            raise InputValidationError("instrument ids are not unique")
        cells = frozenset(inst.cell for inst in self.instruments)
        if not self.cell_registry:
            object.__setattr__(self, "cell_registry", cells)
        elif not cells <= self.cell_registry:
            raise InputValidationError("instrument cell missing from cell registry")

    def __len__(self):
        return len(self.instruments)

    def __iter__(self):
        return iter(self.instruments)

    @property
    def ids(self):
        return [inst.id for inst in self.instruments]

    @property
    def pd(self):
        return np.array([inst.pd for inst in self.instruments])

    @property
    def expected_lgd(self):
        return np.array([inst.expected_lgd for inst in self.instruments])

    @property
    def exposure(self):
        return np.array([inst.exposure for inst in self.instruments])

    @property
    def collateralized(self):
        return np.array([inst.collateralized for inst in self.instruments])

    @property
    def cells(self):
        return [inst.cell for inst in self.instruments]

    def firms(self):
        """Sorted firm ids with their (cell, pd)."""
        seen = {}
        for inst in self.instruments:
            seen.setdefault(inst.firm, (inst.cell, inst.pd))
        return dict(sorted(seen.items()))

    def is_defaulted(self):
        """Instruments already in the default rating class."""
        return np.array([inst.rating >= self.n_ratings for inst in self.instruments])

    def with_exposures(self, exposures: Mapping[str, float]) -> "Portfolio":
        insts = tuple(
            replace(inst, exposure=float(exposures[inst.id])) if inst.id in exposures else inst
            for inst in self.instruments
        )
        return replace(self, instruments=insts)


def _parse_bool(text, row, source):
    t = str(text).strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise InputValidationError(f"collateralized must be a boolean, got {text!r}", source, row)


def _parse_number(rec, key, row, source, kind=float, allow_blank=False):
    raw = rec.get(key)
    if raw is None or str(raw).strip() == "":
        if allow_blank:
            return math.nan
        raise InputValidationError(f"missing value for {key!r}", source, row)
    try:
        val = kind(str(raw).strip()) if kind is float else int(str(raw).strip())
    except ValueError:
        raise InputValidationError(f"{key} is not a number: {raw!r}", source, row) from None
    if kind is float and math.isnan(val) and not allow_blank:
        raise InputValidationError(f"{key} is NaN", source, row)
    return val


def parse_instrument(rec: Mapping, row: int, *, source=None, n_industries=None,
                     n_regions=None, n_ratings=DEFAULT_RATING_CLASSES,
                     allow_missing_exposure=False, currency=DEFAULT_CURRENCY) -> Instrument:
    missing = [c for c in PORTFOLIO_COLUMNS if c not in rec]
    if missing:
        raise InputValidationError(f"missing columns {missing}", source, row)
    iid = str(rec["id"]).strip()
    if not iid:
        raise InputValidationError("empty id", source, row)
    firm = _parse_number(rec, "firm", row, source, int)
    industry = _parse_number(rec, "industry", row, source, int)
    region = _parse_number(rec, "region", row, source, int)
    rating = _parse_number(rec, "rating", row, source, int)
    pd = _parse_number(rec, "pd", row, source)
    lgd = _parse_number(rec, "expected_lgd", row, source)
    exposure = _parse_number(rec, "exposure", row, source, allow_blank=allow_missing_exposure)
    coll = _parse_bool(rec["collateralized"], row, source)
    if firm < 1:
        raise InputValidationError(f"firm must be >= 1, got {firm}", source, row)
    if industry < 1 or (n_industries and industry > n_industries):
        raise InputValidationError(f"industry {industry} out of range", source, row)
    if region < 1 or (n_regions and region > n_regions):
        raise InputValidationError(f"region {region} out of range", source, row)
    if rating < 1 or rating > n_ratings:
        raise InputValidationError(f"rating {rating} outside 1..{n_ratings}", source, row)
    if not 0.0 < pd < 1.0:
        raise InputValidationError(f"pd must lie in (0, 1), got {pd}", source, row)
    if not 0.0 < lgd < 1.0:
        raise InputValidationError(f"expected_lgd must lie in (0, 1), got {lgd}", source, row)
    if not math.isnan(exposure) and (not math.isfinite(exposure) or exposure < 0):
        raise InputValidationError(f"exposure must be finite and >= 0, got {exposure}", source, row)
    cur = str(rec.get("currency") or currency).strip() or currency
    return Instrument(iid, firm, CellIndex(industry, region), rating, pd, lgd, coll,
                      exposure, cur)


def load_portfolio(source, *, currency=None, n_industries=None, n_regions=None,
                   n_ratings=DEFAULT_RATING_CLASSES, allow_missing_exposure=False) -> Portfolio:
    """Read and validate a portfolio.

    ``source`` is a CSV path, an open text stream, or an iterable of
    mappings with the portfolio columns. Validation errors carry the data
    row number (1-based, header excluded).
    """
    name = None
    if isinstance(source, (str, os.PathLike)):
        name = os.fspath(source)
        with open(source, newline="", encoding="utf-8") as fh:
            records = list(csv.DictReader(fh))
    elif isinstance(source, io.IOBase) or hasattr(source, "read"):
        records = list(csv.DictReader(source))
    else:
        records = [dict(r) for r in source]
    if not records:
        raise InputValidationError("portfolio is empty", name)

    default_cur = currency or DEFAULT_CURRENCY
    insts, ids, firm_info = [], {}, {}
    for row, rec in enumerate(records, start=1):
        inst = parse_instrument(
            rec, row, source=name, n_industries=n_industries, n_regions=n_regions,
            n_ratings=n_ratings, allow_missing_exposure=allow_missing_exposure,
            currency=default_cur,
        )
        if inst.id in ids:
            raise InputValidationError(
                f"duplicate id {inst.id!r} (first seen in row {ids[inst.id]})", name, row)
        ids[inst.id] = row
        # default is a firm-level event: pd and cell must agree across a firm's instruments
        prev = firm_info.setdefault(inst.firm, (inst.cell, inst.pd, row))
        if prev[0] != inst.cell or prev[1] != inst.pd:
            raise InputValidationError(
                f"firm {inst.firm} has inconsistent cell/pd (see row {prev[2]})", name, row)
        insts.append(inst)

    currencies = {inst.currency for inst in insts}
    if len(currencies) > 1:
        raise InputValidationError(f"multiple currencies in one portfolio: {sorted(currencies)}", name)
    return Portfolio(tuple(insts), currency=currencies.pop(), n_ratings=n_ratings)


def save_portfolio(portfolio: Portfolio, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PORTFOLIO_COLUMNS + ("currency",))
        for inst in portfolio:
            w.writerow([
                inst.id, inst.firm, inst.cell.industry, inst.cell.region, inst.rating,
                repr(inst.pd), repr(inst.expected_lgd), str(inst.collateralized).lower(),
                "" if math.isnan(inst.exposure) else repr(inst.exposure), inst.currency,
            ])


def group_by_cell(portfolio: Iterable[Instrument]) -> dict:
    """Map each occupied cell to the ids of its instruments (input order)."""
    groups: dict = {}
    for inst in portfolio:
        groups.setdefault(inst.cell, []).append(inst.id)
    return {cell: tuple(groups[cell]) for cell in sorted(groups)}
