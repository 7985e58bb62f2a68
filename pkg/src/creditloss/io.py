"""CSV readers for calibration histories and JSON bundle helpers."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from datetime import datetime, timezone

import numpy as np
import pandas as pd

from .exceptions import InputValidationError

FACTOR_HISTORY_COLUMNS = ("time", "industry", "region", "beta")
LGD_HISTORY_COLUMNS = ("time", "industry", "region", "lgd")
DEFAULT_RECORD_COLUMNS = ("time", "industry", "region", "g", "pd", "lgd")
FIRM_PARAM_COLUMNS = ("firm", "tau")


def _time_value(text):
    try:
        f = float(text)
    except ValueError:
        return text.strip()
    return int(f) if f.is_integer() else f


def read_table(path, columns, *, ints=("industry", "region", "firm"), optional=()):
    """Read a headed CSV, checking every row. Returns a DataFrame.

    ``time`` values that parse as numbers are stored as numbers, others as
    strings. Errors name the file and the 1-based data row.
    """
    name = os.fspath(path)
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in columns if c not in header]
        if missing:
            raise InputValidationError(f"missing columns {missing}", name)
        for k, rec in enumerate(reader, start=1):
            out = {}
            for col in columns:
                raw = rec.get(col)
                if raw is None or raw.strip() == "":
                    raise InputValidationError(f"empty {col!r}", name, k)
                if col == "time":
                    out[col] = _time_value(raw)
                    continue
                try:
                    out[col] = int(raw) if col in ints else float(raw)
                except ValueError:
                    raise InputValidationError(f"{col} is not a number: {raw!r}", name, k) from None
                if col not in ints and not math.isfinite(out[col]):
                    raise InputValidationError(f"{col} is not finite", name, k)
            for col in optional:
                if col in header and rec.get(col) not in (None, ""):
                    out[col] = rec[col]
            rows.append(out)
    return pd.DataFrame(rows, columns=list(columns) + [c for c in optional if c in header])


def read_factor_history(path):
    return read_table(path, FACTOR_HISTORY_COLUMNS)


def read_lgd_history(path):
    df = read_table(path, LGD_HISTORY_COLUMNS)
    bad = ~df["lgd"].between(0.0, 1.0) if len(df) else pd.Series(dtype=bool)
    if bad.any():
        raise InputValidationError("lgd outside [0, 1]", os.fspath(path), int(np.flatnonzero(bad)[0]) + 1)
    return df


def read_default_records(path):
    df = read_table(path, DEFAULT_RECORD_COLUMNS, optional=("collateralized",))
    for k, rec in enumerate(df.itertuples(index=False), start=1):
        if not 0.0 < rec.pd < 1.0:
            raise InputValidationError(f"pd {rec.pd} outside (0, 1)", os.fspath(path), k)
        if not 0.0 <= rec.lgd <= 1.0:
            raise InputValidationError(f"lgd {rec.lgd} outside [0, 1]", os.fspath(path), k)
    return df


def read_firm_params(path):
    """``firm,tau[,mu_drift,log_equity]`` -> dicts keyed by firm."""
    df = read_table(path, FIRM_PARAM_COLUMNS, optional=("mu_drift", "log_equity"))
    out = {"tau": {}, "mu_drift": {}, "log_equity": {}}
    for k, rec in enumerate(df.to_dict("records"), start=1):
        if rec["tau"] < 0:
            raise InputValidationError("tau must be non-negative", os.fspath(path), k)
        out["tau"][int(rec["firm"])] = float(rec["tau"])
        for col in ("mu_drift", "log_equity"):
            if col in rec and isinstance(rec[col], str):
                try:
                    out[col][int(rec["firm"])] = float(rec[col])
                except ValueError:
                    raise InputValidationError(f"{col} is not a number", os.fspath(path), k) from None
    return out


def file_provenance(path, label=None):
    st = os.stat(path)
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return {
        "path": label if label is not None else os.fspath(path),
        "sha256": h.hexdigest(),
        "modified": datetime.fromtimestamp(st.st_mtime, tz=timezone.utc).isoformat(),
    }


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(obj))


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def dump_losses(path, losses):
    """Raw little-endian float64 loss sample."""
    np.asarray(losses, dtype="<f8").tofile(path)


def load_losses(path):
    return np.fromfile(path, dtype="<f8")
