"""CSV ingestion and emission for sales and census tables.

Sales header contract (in this order, feature columns follow)::

    county_id,block_group_id,sale_date,sale_price,assessed_value[,sample_weight],<features...>

Dates are ISO-8601. An empty cell is a missing value. A feature column is
numeric when every non-empty cell parses as a float, otherwise categorical.
Malformed rows are never dropped silently: each one lands in the rejects
list (and optional rejects file) with a reason.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .domain import CensusBlockGroupRow, CountyPanel, SaleRecord
from .errors import DuplicateBlockGroupRow, MissingColumn

REQUIRED_COLUMNS = ("county_id", "block_group_id", "sale_date", "sale_price", "assessed_value")
WEIGHT_COLUMN = "sample_weight"
DEFAULT_REPORT_ONLY = ("share_black", "median_income")


@dataclass(frozen=True)
class Reject:
    line: int
    reason: str
    row: tuple


@dataclass
class LoadResult:
    panels: dict[str, CountyPanel]
    rejects: list[Reject] = field(default_factory=list)

    @property
    def n_records(self) -> int:
        return sum(len(p) for p in self.panels.values())


def _float_or_none(text: str) -> Optional[float]:
    text = text.strip()
    if text == "":
        return None
    try:
        return float(text)
    except ValueError:
        return None


def _positive(text: str) -> Optional[float]:
    v = _float_or_none(text)
    if v is None or not math.isfinite(v) or v <= 0:
        return None
    return v


def fmt_float(x) -> str:
    """Shortest round-trip representation; empty for missing."""
    if x is None:
        return ""
    if isinstance(x, float) and math.isnan(x):
        return ""
    return repr(float(x)) if isinstance(x, (int, float)) and not isinstance(x, bool) else str(x)


def load_sales_csv(path, *, rejects_path=None,
                   year_window: Optional[tuple[int, int]] = None) -> LoadResult:
    """Parse a sales file into one ``CountyPanel`` per county.

    Counties appear in first-seen order; within a county records are sorted
    by sale date with ties in file order.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingColumn("empty file, no header row") from None
        header = [h.strip() for h in header]
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise MissingColumn(f"missing required columns: {missing}")
        body = [(i + 2, row) for i, row in enumerate(reader)]

    pos = {c: header.index(c) for c in REQUIRED_COLUMNS}
    w_pos = header.index(WEIGHT_COLUMN) if WEIGHT_COLUMN in header else None
    reserved = set(REQUIRED_COLUMNS) | {WEIGHT_COLUMN}
    feature_cols = [(j, h) for j, h in enumerate(header) if h not in reserved]

    good, rejects = [], []
    for line, row in body:
        if len(row) != len(header):
            rejects.append(Reject(line, "MalformedRow", tuple(row)))
            continue
        reason = None
        price = _positive(row[pos["sale_price"]])
        assessed = _positive(row[pos["assessed_value"]])
        try:
            date = dt.date.fromisoformat(row[pos["sale_date"]].strip())
        except ValueError:
            date = None
        weight = None
        if w_pos is not None and row[w_pos].strip() != "":
            weight = _positive(row[w_pos])
            if weight is None:
                reason = "InvalidWeight"
        if price is None:
            reason = "NonPositivePrice"
        elif assessed is None:
            reason = "NonPositiveAssessment"
        elif date is None:
            reason = "UnparseableDate"
        elif year_window is not None and not year_window[0] <= date.year <= year_window[1]:
            reason = "DateOutOfWindow"
        elif not row[pos["county_id"]].strip():
            reason = "MissingCounty"
        if reason:
            rejects.append(Reject(line, reason, tuple(row)))
            continue
        good.append((row, price, assessed, date, weight))

    numeric = {}
    for j, name in feature_cols:
        cells = [r[0][j].strip() for r in good if r[0][j].strip() != ""]
        numeric[name] = all(_float_or_none(c) is not None for c in cells)

    by_county: dict[str, list[SaleRecord]] = {}
    for row, price, assessed, date, weight in good:
        feats = {}
        for j, name in feature_cols:
            cell = row[j].strip()
            if cell == "":
                feats[name] = None
            elif numeric[name]:
                feats[name] = float(cell)
            else:
                feats[name] = cell
        cid = row[pos["county_id"]].strip()
        by_county.setdefault(cid, []).append(SaleRecord(
            county_id=cid,
            block_group_id=row[pos["block_group_id"]].strip(),
            sale_date=date,
            sale_price=price,
            assessed_value=assessed,
            features=feats,
            sample_weight=weight,
        ))

    panels = {cid: CountyPanel.from_records(recs, cid, year_window) for cid, recs in by_county.items()}
    if rejects_path is not None:
        write_rejects(rejects, rejects_path, header)
    return LoadResult(panels, rejects)


def write_rejects(rejects: Sequence[Reject], path, header: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["line", "reason", *header])
        for r in rejects:
            w.writerow([r.line, r.reason, *r.row])


def write_sales_csv(panels: Iterable[CountyPanel], path) -> None:
    panels = list(panels)
    feature_names: list[str] = []
    has_weight = False
    for p in panels:
        for r in p.records:
            for k in r.features:
                if k not in feature_names:
                    feature_names.append(k)
            has_weight |= r.sample_weight is not None
    header = list(REQUIRED_COLUMNS) + ([WEIGHT_COLUMN] if has_weight else []) + feature_names
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for p in panels:
            for r in p.records:
                row = [r.county_id, r.block_group_id, r.sale_date.isoformat(),
                       fmt_float(r.sale_price), fmt_float(r.assessed_value)]
                if has_weight:
                    row.append(fmt_float(r.sample_weight))
                row.extend(fmt_float(r.features.get(k)) for k in feature_names)
                w.writerow(row)


def load_census_csv(path) -> list[CensusBlockGroupRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        if "block_group_id" not in header:
            raise MissingColumn("census file needs a block_group_id column")
        key = header.index("block_group_id")
        rows, seen = [], set()
        for row in reader:
            if not row:
                continue
            gid = row[key].strip()
            if gid in seen:
                raise DuplicateBlockGroupRow(f"block group {gid} appears more than once")
            seen.add(gid)
            attrs = {}
            for j, h in enumerate(header):
                if j == key:
                    continue
                v = _float_or_none(row[j]) if j < len(row) else None
                attrs[h] = v if v is not None and math.isfinite(v) else None
            rows.append(CensusBlockGroupRow(gid, attrs))
    return rows


def write_census_csv(rows: Sequence[CensusBlockGroupRow], path) -> None:
    names: list[str] = []
    for r in rows:
        for k in r.attributes:
            if k not in names:
                names.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["block_group_id", *names])
        for r in rows:
            w.writerow([r.block_group_id, *(fmt_float(r.attributes.get(k)) for k in names)])


@dataclass
class JoinResult:
    panels: dict[str, CountyPanel]
    unmatched: int
    unmatched_block_groups: list[str]
    attribute_names: list[str]
    report_only: frozenset


def join_census(panels: Mapping[str, CountyPanel], census: Sequence[CensusBlockGroupRow],
                report_only: Iterable[str] = DEFAULT_REPORT_ONLY) -> JoinResult:
    """Left-join block-group attributes onto every sale.

    Sales whose block group is absent from the table keep all census fields
    missing and are counted as unmatched. ``report_only`` names are carried
    for reporting but are excluded from model features downstream.
    """
    table = {}
    names: list[str] = []
    for row in census:
        if row.block_group_id in table:
            raise DuplicateBlockGroupRow(f"block group {row.block_group_id} appears more than once")
        table[row.block_group_id] = row.attributes
        for k in row.attributes:
            if k not in names:
                names.append(k)
    empty = {k: None for k in names}
    unmatched = 0
    unmatched_ids: list[str] = []
    out = {}
    for cid, panel in panels.items():
        recs = []
        for r in panel.records:
            attrs = table.get(r.block_group_id)
            if attrs is None:
                unmatched += 1
                if r.block_group_id not in unmatched_ids:
                    unmatched_ids.append(r.block_group_id)
                attrs = empty
            recs.append(replace(r, census={k: attrs.get(k) for k in names}))
        out[cid] = CountyPanel(panel.county_id, tuple(recs), panel.year_range)
    return JoinResult(out, unmatched, unmatched_ids, names, frozenset(report_only))


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
