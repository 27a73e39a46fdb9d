"""Quarterly sales series, CSV ingestion/export and moving-average smoothing."""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError, ParseError

_QUARTER_RE = re.compile(r"^\s*(\d{4})\s*[Qq]\s*([1-4])\s*$")


def parse_quarter(text: str) -> int:
    """Return the ordinal (``year * 4 + quarter - 1``) of a ``YYYYQN`` label."""
    match = _QUARTER_RE.match(text)
    if match is None:
        raise ValueError(f"invalid quarter label {text!r}, expected e.g. 2007Q3")
    return int(match.group(1)) * 4 + int(match.group(2)) - 1


def format_quarter(ordinal: int) -> str:
    year, q = divmod(int(ordinal), 4)
    return f"{year}Q{q + 1}"


def quarter_range(start: str, n: int) -> tuple[str, ...]:
    first = parse_quarter(start)
    return tuple(format_quarter(first + i) for i in range(n))


@dataclass(frozen=True)
class SalesSeries:
    """Observed quarterly units for one product.

    ``units[i]`` is the number of units sold during ``quarters[i]``;
    ``cumulative`` is the running sum.
    """

    product_id: str
    quarters: tuple[str, ...]
    units: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        units = np.asarray(self.units, dtype=float).copy()
        units.setflags(write=False)
        object.__setattr__(self, "units", units)
        object.__setattr__(self, "quarters", tuple(self.quarters))
        if units.ndim != 1 or len(units) != len(self.quarters):
            raise InputError(f"{self.product_id}: quarters and units differ in length")
        if len(units) == 0:
            raise InputError(f"{self.product_id}: empty series")
        if not np.all(np.isfinite(units)):
            raise InputError(f"{self.product_id}: non-finite units")
        ordinals = [parse_quarter(q) for q in self.quarters]
        for prev, cur in zip(ordinals, ordinals[1:]):
            if cur != prev + 1:
                raise InputError(
                    f"{self.product_id}: quarters not contiguous between "
                    f"{format_quarter(prev)} and {format_quarter(cur)}"
                )

    def __len__(self) -> int:
        return len(self.units)

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.units)

    @property
    def start(self) -> int:
        """Ordinal of the first observed quarter."""
        return parse_quarter(self.quarters[0])

    def quarter_index(self, origin: int) -> np.ndarray:
        """Quarter indices relative to ``origin`` (the launch quarter ordinal minus one)."""
        return np.arange(len(self)) + (self.start - origin)

    def head(self, n: int) -> SalesSeries:
        return SalesSeries(self.product_id, self.quarters[:n], self.units[:n])

    def with_units(self, units: Sequence[float]) -> SalesSeries:
        return SalesSeries(self.product_id, self.quarters, np.asarray(units, dtype=float))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SalesSeries):
            return NotImplemented
        return (
            self.product_id == other.product_id
            and self.quarters == other.quarters
            and np.array_equal(self.units, other.units)
        )

    __hash__ = None  # type: ignore[assignment]


def load_csv(path: str | Path) -> list[SalesSeries]:
    """Read a ``product,quarter,units`` file into one series per product.

    Products keep the order of their first appearance; rows of one product
    may appear in any order but must cover a contiguous quarter range.
    """
    path = str(path)
    try:
        with open(path, newline="") as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc.strerror}", path) from exc
    return _parse_rows(text, path)


def loads_csv(text: str) -> list[SalesSeries]:
    return _parse_rows(text, "<string>")


def _parse_rows(text: str, path: str) -> list[SalesSeries]:
    reader = csv.reader(io.StringIO(text))
    rows: dict[str, dict[int, tuple[float, int]]] = {}
    header_seen = False
    for lineno, row in enumerate(reader, start=1):
        if not row or all(not cell.strip() for cell in row) or row[0].lstrip().startswith("#"):
            continue
        cells = [c.strip() for c in row]
        if not header_seen:
            header_seen = True
            if [c.lower() for c in cells] != ["product", "quarter", "units"]:
                raise ParseError("header must be 'product,quarter,units'", path, lineno)
            continue
        if len(cells) != 3:
            raise ParseError(f"expected 3 fields, got {len(cells)}", path, lineno)
        product, quarter, units_text = cells
        if not product:
            raise ParseError("empty product id", path, lineno)
        try:
            ordinal = parse_quarter(quarter)
        except ValueError as exc:
            raise ParseError(str(exc), path, lineno) from None
        try:
            units = float(units_text)
        except ValueError:
            raise ParseError(f"units {units_text!r} is not a number", path, lineno) from None
        if not np.isfinite(units):
            raise ParseError(f"units {units_text!r} is not finite", path, lineno)
        if units < 0:
            raise ParseError(f"negative units {units_text} for {product} {quarter}", path, lineno)
        per_product = rows.setdefault(product, {})
        if ordinal in per_product:
            first_line = per_product[ordinal][1]
            raise ParseError(
                f"duplicate row for {product} {format_quarter(ordinal)} (first seen on line {first_line})",
                path,
                lineno,
            )
        per_product[ordinal] = (units, lineno)
    if not header_seen:
        raise ParseError("file is empty", path)
    if not rows:
        raise ParseError("no data rows", path)

    out = []
    for product, per_product in rows.items():
        ordinals = sorted(per_product)
        for prev, cur in zip(ordinals, ordinals[1:]):
            if cur != prev + 1:
                raise ParseError(
                    f"gap in quarters for {product}: {format_quarter(prev)} is followed by "
                    f"{format_quarter(cur)} (missing {format_quarter(prev + 1)})",
                    path,
                    per_product[cur][1],
                )
        out.append(
            SalesSeries(
                product,
                tuple(format_quarter(o) for o in ordinals),
                np.array([per_product[o][0] for o in ordinals]),
            )
        )
    return out


def dumps_csv(series: Iterable[SalesSeries]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["product", "quarter", "units"])
    for s in series:
        for quarter, units in zip(s.quarters, s.units):
            writer.writerow([s.product_id, quarter, repr(float(units))])
    return buf.getvalue()


def write_csv(path: str | Path, series: Iterable[SalesSeries]) -> None:
    Path(path).write_text(dumps_csv(series))


def moving_average(values: Sequence[float] | SalesSeries, window: int = 5):
    """Centered moving average with shrinking symmetric windows at the ends.

    The point ``i`` is averaged over ``min(window // 2, i, n - 1 - i)``
    neighbours on each side, so the first and last values are kept as they are.
    A :class:`SalesSeries` input returns a smoothed series.
    """
    if isinstance(values, SalesSeries):
        return values.with_units(moving_average(values.units, window))
    x = np.asarray(values, dtype=float)
    n = len(x)
    if window < 1 or window % 2 == 0:
        raise InputError(f"window must be a positive odd integer, got {window}")
    if window > n:
        raise InputError(f"window {window} exceeds series length {n}")
    half = window // 2
    csum = np.concatenate([[0.0], np.cumsum(x)])
    out = np.empty(n)
    for i in range(n):
        k = min(half, i, n - 1 - i)
        out[i] = (csum[i + k + 1] - csum[i - k]) / (2 * k + 1)
    return out
