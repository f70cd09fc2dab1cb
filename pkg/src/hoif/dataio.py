"""CSV and config-file reading and writing.

Floats are written with 17 significant digits, which round-trips every
IEEE double exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .functional import NuisancePredictions, Units

__all__ = [
    "ROLES",
    "Dataset",
    "fmt_float",
    "read_dataset",
    "write_dataset",
    "read_nuisance",
    "write_nuisance",
    "read_config",
    "write_rows",
]

ROLES = ("est", "train")


def fmt_float(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


@dataclass(frozen=True)
class Dataset:
    """Estimation and training units read from one file."""

    est: Units
    train: Units | None

    @property
    def d(self) -> int:
        return self.est.d


def _float(token: str, path, line: int, column: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise InputError(f"{path}:{line}: column {column!r}: not a number: {token!r}") from None
    if not math.isfinite(value):
        raise InputError(f"{path}:{line}: column {column!r}: non-finite value {token!r}")
    return value


def _open_rows(path):
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    return fh, csv.reader(fh)


def _header_d(header, path) -> int:
    if header[:3] != ["role", "y", "a"] or len(header) < 4:
        raise InputError(f"{path}:1: header must be role,y,a,x1..xd; got {','.join(header)}")
    xs = header[3:]
    expected = [f"x{j}" for j in range(1, len(xs) + 1)]
    if xs != expected:
        raise InputError(f"{path}:1: covariate columns must be {','.join(expected)}")
    return len(xs)


def read_dataset(path, d: int | None = None) -> Dataset:
    """Read ``role,y,a,x1..xd`` rows; ``role`` is ``est`` or ``train`` (case-sensitive)."""
    fh, reader = _open_rows(path)
    with fh:
        header = next(reader, None)
        if header is None:
            raise InputError(f"{path}: empty file")
        width = _header_d(header, path)
        if d is not None and d != width:
            raise InputError(f"{path}:1: expected d={d} covariates, header has {width}")
        cols = ["y", "a"] + header[3:]
        parts = {role: [] for role in ROLES}
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width + 3:
                raise InputError(f"{path}:{line}: expected {width + 3} fields, got {len(row)}")
            role = row[0]
            if role not in ROLES:
                raise InputError(f"{path}:{line}: unknown role {role!r} (use 'est' or 'train')")
            parts[role].append([_float(t, path, line, c) for t, c in zip(row[1:], cols)])
    if not parts["est"]:
        raise InputError(f"{path}: no 'est' rows")

    def units(rows):
        arr = np.array(rows, dtype=float).reshape(-1, width + 2)
        try:
            return Units(arr[:, 0], arr[:, 1], arr[:, 2:])
        except ValueError as exc:
            raise InputError(f"{path}: {exc}") from None

    train = units(parts["train"]) if parts["train"] else None
    return Dataset(units(parts["est"]), train)


def write_dataset(path, est: Units, train: Units | None = None) -> None:
    d = est.d
    if train is not None and train.d != d:
        raise InputError("est and train covariate dimensions differ")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["role", "y", "a"] + [f"x{j}" for j in range(1, d + 1)])
        for role, u in (("est", est), ("train", train)):
            if u is None:
                continue
            for y, a, x in zip(u.y, u.a, u.x):
                w.writerow([role, fmt_float(y), fmt_float(a)] + [fmt_float(v) for v in x])


def read_nuisance(path, n: int | None = None) -> NuisancePredictions:
    """Read ``id,bhat,phat`` rows aligned with the estimation units."""
    fh, reader = _open_rows(path)
    bh, ph = [], []
    with fh:
        header = next(reader, None)
        if header != ["id", "bhat", "phat"]:
            raise InputError(f"{path}:1: header must be id,bhat,phat")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise InputError(f"{path}:{line}: expected 3 fields, got {len(row)}")
            try:
                idx = int(row[0])
            except ValueError:
                raise InputError(f"{path}:{line}: id must be an integer") from None
            if idx != len(bh):
                raise InputError(f"{path}:{line}: id {idx} out of order (expected {len(bh)})")
            bh.append(_float(row[1], path, line, "bhat"))
            ph.append(_float(row[2], path, line, "phat"))
    if n is not None and len(bh) != n:
        raise InputError(f"{path}: {len(bh)} predictions for {n} estimation units")
    return NuisancePredictions(np.array(bh), np.array(ph))


def write_nuisance(path, fit: NuisancePredictions) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "bhat", "phat"])
        for i, (b, p) in enumerate(zip(fit.bhat, fit.phat)):
            w.writerow([i, fmt_float(b), fmt_float(p)])


def read_config(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment. Values stay strings."""
    out = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        for line, raw in enumerate(fh, start=1):
            text = raw.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise InputError(f"{path}:{line}: expected 'key = value'")
            key, value = (t.strip() for t in text.split("=", 1))
            if not key:
                raise InputError(f"{path}:{line}: empty key")
            out[key.replace("-", "_")] = value
    return out


def write_rows(path, fields, rows) -> None:
    """CSV with floats at 17 significant digits and booleans as true/false."""

    def cell(v):
        if isinstance(v, bool) or isinstance(v, np.bool_):
            return "true" if v else "false"
        if isinstance(v, (float, np.floating)):
            return fmt_float(v)
        if v is None:
            return ""
        return str(v)

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            w.writerow([cell(row.get(f)) for f in fields])
