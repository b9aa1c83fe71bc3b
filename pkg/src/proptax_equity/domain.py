"""Record types for sales, assessment ratios and county panels.

Missing feature values are stored as ``None``. Nothing downstream is allowed
to read ``None`` as zero; the preprocessing pipeline turns it into NaN and
imputes it explicitly.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

from .errors import (
    DateOutOfWindow,
    InvalidWeight,
    MixedCounty,
    NonPositivePrice,
    TooFewSales,
    ValidationError,
)

FeatureValue = Union[float, str, None]


@dataclass(frozen=True)
class SaleRecord:
    county_id: str
    block_group_id: str
    sale_date: dt.date
    sale_price: float
    assessed_value: float
    features: Mapping[str, FeatureValue] = field(default_factory=dict)
    sample_weight: Optional[float] = None
    census: Mapping[str, Optional[float]] = field(default_factory=dict)

    @property
    def year(self) -> int:
        return self.sale_date.year

    def check(self, index: int = 0, window: Optional[tuple[int, int]] = None) -> None:
        """Raise the first violated record invariant, if any."""
        if not (_finite(self.sale_price) and self.sale_price > 0):
            raise NonPositivePrice(index, "sale_price")
        if self.assessed_value is None or not (_finite(self.assessed_value) and self.assessed_value > 0):
            raise NonPositivePrice(index, "assessed_value")
        if window is not None and not (window[0] <= self.sale_date.year <= window[1]):
            raise DateOutOfWindow(index, self.sale_date, window)
        if self.sample_weight is not None and not (
            _finite(self.sample_weight) and self.sample_weight > 0
        ):
            raise InvalidWeight(index)


@dataclass(frozen=True)
class RatioObservation:
    assessed: float
    price: float
    weight: Optional[float] = None

    @property
    def ratio(self) -> float:
        return self.assessed / self.price


@dataclass(frozen=True)
class CensusBlockGroupRow:
    block_group_id: str
    attributes: Mapping[str, Optional[float]] = field(default_factory=dict)


@dataclass(frozen=True)
class CountyPanel:
    """All sales of one county, ordered by sale date.

    Records with equal sale dates keep their input order (stable sort).
    """

    county_id: str
    records: tuple[SaleRecord, ...]
    year_range: Optional[tuple[int, int]] = None

    @classmethod
    def from_records(cls, records: Sequence[SaleRecord], county_id: Optional[str] = None,
                     year_range: Optional[tuple[int, int]] = None) -> "CountyPanel":
        records = tuple(sorted(records, key=lambda r: r.sale_date))
        if county_id is None:
            if not records:
                raise ValidationError("cannot infer county_id from an empty record list")
            county_id = records[0].county_id
        if year_range is None and records:
            year_range = (records[0].sale_date.year, records[-1].sale_date.year)
        return cls(county_id=county_id, records=records, year_range=year_range)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def years(self) -> list[int]:
        return sorted({r.sale_date.year for r in self.records})

    def subset(self, indices: Sequence[int]) -> "CountyPanel":
        return CountyPanel(self.county_id, tuple(self.records[i] for i in indices), self.year_range)


def _finite(x) -> bool:
    try:
        return math.isfinite(x)
    except TypeError:
        return False


def validate_panel(panel: CountyPanel, min_sales: int = 100) -> CountyPanel:
    """Return ``panel`` unchanged if it satisfies every invariant, else raise.

    The checks run in a fixed order: record count, then per-record rules
    (positive price and assessment, date window, weight), then ordering and
    county membership.
    """
    n = len(panel.records)
    if n < min_sales:
        raise TooFewSales(n, min_sales)
    for i, rec in enumerate(panel.records):
        rec.check(i, panel.year_range)
        if rec.county_id != panel.county_id:
            raise MixedCounty(f"record {i} belongs to county {rec.county_id}, panel is {panel.county_id}")
        if i and rec.sale_date < panel.records[i - 1].sale_date:
            raise ValidationError(f"record {i} is out of sale_date order")
    return panel


def to_ratio_observations(panel: CountyPanel) -> list[RatioObservation]:
    return [RatioObservation(r.assessed_value, r.sale_price, r.sample_weight) for r in panel.records]
