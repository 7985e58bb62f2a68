import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from creditloss.exceptions import InputValidationError
from creditloss.portfolio import (
    CellIndex,
    Portfolio,
    group_by_cell,
    load_portfolio,
    save_portfolio,
)

from conftest import make_instrument

HEADER = "id,firm,industry,region,rating,pd,expected_lgd,collateralized,exposure\n"


def csv_source(*rows):
    return io.StringIO(HEADER + "".join(r + "\n" for r in rows))


def test_single_row():
    p = load_portfolio(csv_source("A,1,1,1,5,0.01,0.45,true,100"))
    assert len(p) == 1
    inst = p.instruments[0]
    assert inst.cell == CellIndex(1, 1)
    assert inst.collateralized is True
    assert p.currency == "XXX"


def test_bad_pd_names_row():
    src = csv_source("A,1,1,1,5,0.01,0.45,true,100", "B,2,1,1,5,1.5,0.45,true,100")
    with pytest.raises(InputValidationError, match="row 2"):
        load_portfolio(src)


def test_empty_file():
    with pytest.raises(InputValidationError, match="empty"):
        load_portfolio(csv_source())


def test_duplicate_id():
    src = csv_source("A,1,1,1,5,0.01,0.45,true,100", "A,2,1,1,5,0.02,0.45,true,100")
    with pytest.raises(InputValidationError, match="duplicate"):
        load_portfolio(src)


@pytest.mark.parametrize("row,msg", [
    ("A,1,0,1,5,0.01,0.45,true,100", "industry"),
    ("A,1,1,3,5,0.01,0.45,true,100", "region"),
    ("A,1,1,1,41,0.01,0.45,true,100", "rating"),
    ("A,1,1,1,5,0.01,1.0,true,100", "expected_lgd"),
    ("A,1,1,1,5,0.01,0.45,maybe,100", "boolean"),
    ("A,1,1,1,5,0.01,0.45,true,-1", "exposure"),
    ("A,1,1,1,5,0.01,0.45,true,inf", "exposure"),
    ("A,1,1,1,5,abc,0.45,true,100", "not a number"),
    ("A,1,1,1,5,,0.45,true,100", "missing"),
])
def test_row_validation(row, msg):
    with pytest.raises(InputValidationError, match=msg):
        load_portfolio(csv_source(row), n_regions=2)


def test_firm_consistency():
    src = csv_source("A,1,1,1,5,0.01,0.45,true,100", "B,1,2,1,5,0.01,0.3,false,50")
    with pytest.raises(InputValidationError, match="firm 1"):
        load_portfolio(src)


def test_firm_can_hold_several_lgds():
    src = csv_source("A,1,1,1,5,0.01,0.45,true,100", "B,1,1,1,5,0.01,0.3,false,50")
    p = load_portfolio(src)
    assert list(p.firms()) == [1]
    assert np.allclose(p.expected_lgd, [0.45, 0.3])


def test_multi_currency_rejected():
    src = io.StringIO(HEADER.strip() + ",currency\n"
                      "A,1,1,1,5,0.01,0.45,true,100,CHF\nB,2,1,1,5,0.01,0.45,true,100,EUR\n")
    with pytest.raises(InputValidationError, match="currencies"):
        load_portfolio(src)


def test_missing_exposure_allowed_when_flagged():
    p = load_portfolio(csv_source("A,1,1,1,5,0.01,0.45,true,"), allow_missing_exposure=True)
    assert np.isnan(p.exposure[0])
    with pytest.raises(InputValidationError):
        load_portfolio(csv_source("A,1,1,1,5,0.01,0.45,true,"))


def test_defaulted_flag():
    p = Portfolio((make_instrument("A", rating=40), make_instrument("B", firm=2, rating=3)))
    assert p.is_defaulted().tolist() == [True, False]


def test_registry_must_cover_cells():
    with pytest.raises(InputValidationError):
        Portfolio((make_instrument(cell=(2, 2)),), cell_registry=frozenset({CellIndex(1, 1)}))


def test_group_single_cell():
    p = Portfolio((make_instrument("A"), make_instrument("B", firm=2)))
    assert group_by_cell(p) == {CellIndex(1, 1): ("A", "B")}


def test_group_two_by_two():
    p = Portfolio(tuple(
        make_instrument(f"X{k}", firm=k, cell=(1 + k % 2, 1)) for k in range(1, 5)))
    groups = group_by_cell(p)
    assert sorted(len(v) for v in groups.values()) == [2, 2]
    assert CellIndex(2, 2) not in groups


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 3), st.integers(1, 2)), min_size=1, max_size=30))
def test_group_is_partition(cells):
    p = Portfolio(tuple(make_instrument(f"I{k}", firm=k + 1, cell=c) for k, c in enumerate(cells)))
    groups = group_by_cell(p)
    flat = [i for ids in groups.values() for i in ids]
    assert sorted(flat) == sorted(p.ids)
    assert len(flat) == len(set(flat))


def test_round_trip(tmp_path, small_portfolio):
    path = tmp_path / "p.csv"
    save_portfolio(small_portfolio, path)
    again = load_portfolio(path)
    assert again.instruments == small_portfolio.instruments
    assert again.currency == "CHF"


def test_with_exposures(small_portfolio):
    p = small_portfolio.with_exposures({"B": -20.0})
    assert p.exposure.tolist() == [100.0, -20.0, 80.0]
