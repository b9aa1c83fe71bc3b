"""Experiment orchestration: per-county model fits, bootstrap deltas, BH, Pareto tallies, reports.

Four experiment kinds are supported:

``metrics_report``  status quo accuracy/regressivity by county-year plus binscatters.
``ablation``        sparse vs rich property-feature models (LASSO by default).
``census``          status-quo-only vs status-quo + census models (random forest by default).
``synth_validate``  generate synthetic counties, round-trip them through CSV and
                    compare measured regressivity with the closed form.

Every random draw is keyed on the experiment seed and the county id, so a
rerun with the same config and inputs reproduces every output byte for byte.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import hashlib
import json
import logging
import math
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import __version__
from .domain import CountyPanel, validate_panel
from .errors import ConfigError
from .inference import (
    ParetoClass,
    benjamini_hochberg,
    censor_mask,
    group_delta_curve,
    pareto_classify,
    quantile_binscatter,
    quintile_impact,
    ratio_statistic,
    studentized_bootstrap_delta,
)
from .io import DEFAULT_REPORT_ONLY, ensure_dir, join_census, load_census_csv, load_sales_csv
from .io import fmt_float, write_census_csv, write_sales_csv
from .metrics import ACCURACY_METRICS, FAIRNESS_METRICS, KERNELS, RatioData
from .pipeline.models import fit_model, predict_assessments
from .pipeline.preprocess import PipelineConfig, chronological_split, time_features
from .synthetic import (
    AppealAdjusted,
    Capped,
    MarketConfig,
    MeanReverting,
    PowerLaw,
    generate_market,
    generate_neighborhood_effect_market,
    implied_lc,
)

log = logging.getLogger(__name__)

EXPERIMENT_KINDS = ("metrics_report", "ablation", "census", "synth_validate")
ALL_METRICS = ACCURACY_METRICS + FAIRNESS_METRICS
DEFAULT_PAIRS = (("mape", "prd"), ("rmse", "suits"), ("mae", "lc"))

# FIPS state codes of the 17 states with annual assessment caps
CAP_STATE_FIPS = ("01", "04", "05", "06", "12", "13", "15", "19", "22", "24", "26",
                  "35", "36", "40", "41", "45", "48")

OUTPUT_DIR_ENV = "PROPTAX_OUTPUT_DIR"


@dataclass(frozen=True)
class BootstrapConfig:
    b_outer: int = 999
    b_inner: int = 100
    level: float = 0.95
    alpha: float = 0.05


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    seed: int
    output_dir: str = "out"
    sales_path: Optional[str] = None
    census_path: Optional[str] = None
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    bootstrap: BootstrapConfig = field(default_factory=BootstrapConfig)
    min_sales: int = 100
    exclude_cap_states: bool = True
    cap_states: tuple[str, ...] = CAP_STATE_FIPS
    model_kind: Optional[str] = None
    feature_ranking: Optional[tuple[str, ...]] = None
    sparse_k: int = 3
    min_extra_features: int = 1
    metrics: tuple[str, ...] = ALL_METRICS
    pareto_pairs: tuple[tuple[str, str], ...] = DEFAULT_PAIRS
    use_weights: bool = False
    report_only: tuple[str, ...] = DEFAULT_REPORT_ONLY
    binscatter_bins: int = 100
    group_bins: int = 20
    n_jobs: int = 1
    market: Optional[dict] = None
    n_counties: int = 1

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        for m in self.metrics:
            if m not in KERNELS:
                raise ConfigError(f"unknown metric {m!r}")
        for a, f in self.pareto_pairs:
            if a not in self.metrics or f not in self.metrics:
                raise ConfigError(f"pareto pair ({a}, {f}) uses a metric that is not computed")
        if self.kind in ("ablation", "census", "metrics_report") and self.sales_path is None:
            raise ConfigError(f"{self.kind} needs sales_path")
        if self.kind == "census" and self.census_path is None:
            raise ConfigError("census experiment needs census_path")
        if self.kind == "synth_validate" and self.market is None:
            raise ConfigError("synth_validate needs a market block")

    @property
    def resolved_model_kind(self) -> str:
        if self.model_kind:
            return self.model_kind
        return "random_forest" if self.kind == "census" else "lasso"

    def to_dict(self) -> dict:
        return _jsonable(dataclasses.asdict(self))

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("output_dir", None)
        d.pop("n_jobs", None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentConfig":
        d = dict(d)
        if "pipeline" in d and isinstance(d["pipeline"], Mapping):
            d["pipeline"] = PipelineConfig.from_dict(d["pipeline"])
        if "bootstrap" in d and isinstance(d["bootstrap"], Mapping):
            d["bootstrap"] = BootstrapConfig(**d["bootstrap"])
        for key in ("cap_states", "feature_ranking", "metrics", "report_only"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        if "pareto_pairs" in d:
            d["pareto_pairs"] = tuple(tuple(p) for p in d["pareto_pairs"])
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path, **overrides) -> "ExperimentConfig":
        with open(path) as fh:
            d = json.load(fh)
        d.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(d)


# --------------------------------------------------------------------------
# helpers

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, ParetoClass):
        return x.value
    return x


def county_seed(seed: int, county_id: str) -> int:
    return (seed * 1_000_003 + zlib.crc32(county_id.encode())) % (2**31 - 1)


def market_from_dict(d: Mapping, **overrides) -> MarketConfig:
    d = dict(d)
    d.update(overrides)
    d.pop("generator", None)
    if "assessment" in d and isinstance(d["assessment"], Mapping):
        d["assessment"] = rule_from_dict(d["assessment"])
    for key in ("years", "feature_weights"):
        if key in d:
            d[key] = tuple(d[key])
    return MarketConfig(**d)


def rule_from_dict(d: Mapping):
    d = dict(d)
    name = d.pop("rule")
    if "base" in d:
        d["base"] = rule_from_dict(d["base"])
    if "appeal_rates" in d:
        d["appeal_rates"] = tuple(d["appeal_rates"])
    rules = {"power_law": PowerLaw, "mean_reverting": MeanReverting, "capped": Capped,
             "appeal_adjusted": AppealAdjusted}
    if name not in rules:
        raise ConfigError(f"unknown assessment rule {name!r}")
    return rules[name](**d)


def ratio_arrays(panel: CountyPanel):
    a = np.array([r.assessed_value for r in panel.records])
    s = np.array([r.sale_price for r in panel.records])
    return a, s


def status_quo_metrics(a, s, w=None) -> dict:
    return {m: float(KERNELS[m](a, s, w)) for m in ALL_METRICS}


def feature_availability(panels: Sequence[CountyPanel]) -> dict[str, float]:
    seen: dict[str, list[int]] = {}
    total = 0
    for p in panels:
        for r in p.records:
            total += 1
            for k, v in r.features.items():
                c = seen.setdefault(k, [0])
                if v is not None:
                    c[0] += 1
    return {k: v[0] / total for k, v in seen.items()} if total else {}


def rank_features(panels: Sequence[CountyPanel]) -> list[str]:
    """Property features ordered by overall availability, most available first (ties by name)."""
    avail = feature_availability(panels)
    return sorted(avail, key=lambda k: (-avail[k], k))


def model_rows(panel: CountyPanel, *, features: Sequence[str] = (), census: bool = False,
               status_quo: bool = False, report_only: Sequence[str] = ()) -> list[dict]:
    """Dict rows for the feature pipeline: property features, timing, census, status quo."""
    origin = dt.date(panel.years[0], 1, 1) if panel.year_range is None else dt.date(panel.year_range[0], 1, 1)
    times = time_features([r.sale_date for r in panel.records], origin)
    rows = []
    for i, r in enumerate(panel.records):
        row = {k: r.features.get(k) for k in features}
        for name, col in times.items():
            row[name] = float(col[i])
        if census:
            for k, v in r.census.items():
                if k not in report_only:
                    row[f"census_{k}"] = v
        if status_quo:
            row["status_quo_log_assessed"] = math.log(r.assessed_value)
        rows.append(row)
    return rows


# --------------------------------------------------------------------------
# per-county work (top-level so it can run in a worker process)

def _county_ablation(panel: CountyPanel, config: ExperimentConfig, ranking: Sequence[str]) -> dict:
    seed = county_seed(config.seed, panel.county_id)
    thr = config.pipeline.missing_drop_threshold
    avail = feature_availability([panel])
    usable = [f for f in ranking if avail.get(f, 0.0) >= 1.0 - thr and avail.get(f, 0.0) > 0]
    sparse = usable[: config.sparse_k]
    rich = usable
    if len(rich) - len(sparse) < config.min_extra_features:
        raise ConfigError(f"only {len(usable)} usable features; need {config.sparse_k} + "
                          f"{config.min_extra_features}")
    return _fit_pair(panel, config, seed,
                     dict(features=sparse), dict(features=rich),
                     {"sparse_features": sparse, "rich_features": rich})


def _county_census(panel: CountyPanel, config: ExperimentConfig) -> dict:
    seed = county_seed(config.seed, panel.county_id)
    ro = config.report_only
    return _fit_pair(panel, config, seed,
                     dict(status_quo=True, report_only=ro),
                     dict(status_quo=True, census=True, report_only=ro), {})


def _fit_pair(panel, config, seed, base_spec, alt_spec, extra) -> dict:
    split = chronological_split(panel)
    train, test = panel.subset(split.train), panel.subset(split.test)
    a_tr, s_tr = ratio_arrays(train)
    a_te, s_te = ratio_arrays(test)
    w_tr = w_te = None
    if config.use_weights:
        w_tr = np.array([r.sample_weight or 1.0 for r in train.records])
        w_te = np.array([r.sample_weight or 1.0 for r in test.records])
    kind = config.resolved_model_kind
    report_only = [f"census_{k}" for k in config.report_only]
    preds, schemas = [], []
    for spec in (base_spec, alt_spec):
        tr_rows = model_rows(train, **spec)
        te_rows = model_rows(test, **spec)
        model = fit_model(kind, tr_rows, np.log(s_tr), config.pipeline, weights=w_tr,
                          report_only=report_only, seed=seed)
        leaked = set(model.source_columns) & set(report_only)
        if leaked:
            raise AssertionError(f"report-only columns in model schema: {sorted(leaked)}")
        preds.append(predict_assessments(model, te_rows))
        schemas.append({"columns": model.feature_names, "params": model.params})
    base, alt = preds

    deltas = {}
    for k, m in enumerate(config.metrics):
        cols_b = [base, s_te] + ([w_te] if w_te is not None else [])
        cols_a = [alt, s_te] + ([w_te] if w_te is not None else [])
        deltas[m] = studentized_bootstrap_delta(
            ratio_statistic(m), np.column_stack(cols_b), np.column_stack(cols_a), paired=True,
            b_outer=config.bootstrap.b_outer, b_inner=config.bootstrap.b_inner,
            level=config.bootstrap.level, seed=seed + 101 * (k + 1), name=m)

    bg_info = None
    if any(r.census for r in test.records):
        bg_info = {
            "block_group_id": [r.block_group_id for r in test.records],
            "attributes": {k: [r.census.get(k) for r in test.records] for k in config.report_only},
        }
    return {
        "county_id": panel.county_id,
        "seed": seed,
        "n_train": len(train),
        "n_test": len(test),
        "test_year": split.test_year,
        "sale_price": s_te,
        "status_quo": a_te,
        "baseline_pred": base,
        "alt_pred": alt,
        "weights": w_te,
        "baseline_metrics": status_quo_metrics(base, s_te, w_te),
        "alt_metrics": status_quo_metrics(alt, s_te, w_te),
        "status_quo_metrics": status_quo_metrics(a_te, s_te, w_te),
        "deltas": deltas,
        "models": schemas,
        "block_groups": bg_info,
        **extra,
    }


def _run_one(args):
    kind, panel, config, ranking = args
    try:
        validate_panel(panel, config.min_sales)
        if kind == "ablation":
            return ("ok", _county_ablation(panel, config, ranking))
        return ("ok", _county_census(panel, config))
    except Exception as exc:  # per-county failures are recorded, not raised
        return ("fail", {"county_id": panel.county_id, "error": type(exc).__name__, "message": str(exc)})


# --------------------------------------------------------------------------
# report

@dataclass
class ExperimentReport:
    kind: str
    provenance: dict
    counties: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    plots: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    results: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return _jsonable({
            "kind": self.kind,
            "provenance": self.provenance,
            "counties": self.counties,
            "failures": self.failures,
            "aggregates": self.aggregates,
            "plots": self.plots,
            "tables": self.tables,
        })


def _provenance(config: ExperimentConfig) -> dict:
    return {"config_hash": config.config_hash(), "seed": config.seed, "code_version": __version__}


def aggregate_outcomes(rows: Sequence[dict], pair_key: str) -> dict:
    """Counts and shares of Pareto classes for one (accuracy, fairness) pair."""
    classes = [r["pareto"][pair_key]["classification"] for r in rows if pair_key in r.get("pareto", {})]
    n = len(classes)
    counts = {c.value: sum(1 for x in classes if x == c.value) for c in ParetoClass}
    n_sig = n - counts[ParetoClass.MIXED_INSIGNIFICANT.value]
    return {
        "n_counties": n,
        "n_significant": n_sig,
        "n_joint_gain": counts["joint_gain"],
        "n_tradeoff": counts["tradeoff"],
        "n_joint_loss": counts["joint_loss"],
        "n_mixed_insignificant": counts["mixed_insignificant"],
        "share_significant": n_sig / n if n else None,
        "share_joint_gain_of_significant": counts["joint_gain"] / n_sig if n_sig else None,
        "share_tradeoff_of_significant": counts["tradeoff"] / n_sig if n_sig else None,
    }


def _model_comparison_report(kind, config, panels, failures) -> ExperimentReport:
    ranking = list(config.feature_ranking) if config.feature_ranking else rank_features(list(panels.values()))
    jobs = [(kind, panels[cid], config, ranking) for cid in sorted(panels)]
    if config.n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(config.n_jobs) as pool:
            outcomes = list(pool.map(_run_one, jobs))
    else:
        outcomes = [_run_one(j) for j in jobs]
    results = [r for status, r in outcomes if status == "ok"]
    failures = failures + [r for status, r in outcomes if status == "fail"]

    # BH across counties, separately for each metric
    bh = {}
    for m in config.metrics:
        p = [r["deltas"][m].p_value for r in results]
        reject, adjusted = benjamini_hochberg(p, config.bootstrap.alpha)
        bh[m] = (reject, adjusted)

    rows = []
    for i, r in enumerate(results):
        row = {
            "county_id": r["county_id"],
            "n_train": r["n_train"],
            "n_test": r["n_test"],
            "test_year": r["test_year"],
            "baseline_metrics": r["baseline_metrics"],
            "alt_metrics": r["alt_metrics"],
            "status_quo_metrics": r["status_quo_metrics"],
            "deltas": {},
            "pareto": {},
            "models": r["models"],
        }
        for key in ("sparse_features", "rich_features"):
            if key in r:
                row[key] = r[key]
        for m in config.metrics:
            d = r["deltas"][m].to_dict()
            d["bh_reject"] = bool(bh[m][0][i])
            d["p_adjusted"] = float(bh[m][1][i])
            row["deltas"][m] = d
        for acc, fair in config.pareto_pairs:
            out = pareto_classify(r["deltas"][acc], r["deltas"][fair],
                                  (bh[acc][0][i], bh[fair][0][i]), county_id=r["county_id"])
            row["pareto"][f"{acc}_{fair}"] = {
                "classification": out.classification.value,
                "accuracy_improves": out.accuracy_improves,
                "fairness_improves": out.fairness_improves,
                "bh_significant": list(out.bh_significant),
                "crossed_target": out.crossed_target,
            }
        rows.append(row)

    report = ExperimentReport(kind, _provenance(config), rows, failures, results=results)
    for acc, fair in config.pareto_pairs:
        report.aggregates[f"{acc}_{fair}"] = aggregate_outcomes(rows, f"{acc}_{fair}")

    for acc, fair in config.pareto_pairs:
        key = f"{acc}_{fair}"
        pts = [{
            "county_id": row["county_id"],
            "d_accuracy": row["deltas"][acc]["estimate"],
            "d_accuracy_low": row["deltas"][acc]["ci_low"],
            "d_accuracy_high": row["deltas"][acc]["ci_high"],
            "d_fairness": row["deltas"][fair]["estimate"],
            "d_fairness_low": row["deltas"][fair]["ci_low"],
            "d_fairness_high": row["deltas"][fair]["ci_high"],
            "classification": row["pareto"][key]["classification"],
        } for row in rows]
        if pts:
            keep = censor_mask([p["d_accuracy"] for p in pts], [p["d_fairness"] for p in pts])
            pts = [p for p, k in zip(pts, keep) if k]
        report.plots[f"pareto_{key}"] = pts

    if results:
        s = np.concatenate([r["sale_price"] for r in results])
        base = np.concatenate([r["baseline_pred"] for r in results])
        alt = np.concatenate([r["alt_pred"] for r in results])
        groups = np.concatenate([[r["county_id"]] * r["n_test"] for r in results])
        d_mape, d_price = quintile_impact(s, base, alt, groups=groups, b=config.bootstrap.b_outer,
                                          level=config.bootstrap.level, seed=config.seed)
        report.plots["quintile_d_mape"] = d_mape.rows()
        report.plots["quintile_d_price"] = d_price.rows()
        report.tables["quintile_d_mape"] = [float(v) for v in d_mape.mean]
        if kind == "census":
            report.plots.update(_group_curves(results, config))
    return report


def block_group_deltas(results: Sequence[dict], attribute: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per block group: attribute value, mean % change in assessed value, change in MAPE."""
    attr, d_av, d_mape = [], [], []
    for r in results:
        info = r.get("block_groups")
        if not info or attribute not in info["attributes"]:
            continue
        ids = np.array(info["block_group_id"])
        vals = info["attributes"][attribute]
        s, base, alt = r["sale_price"], r["baseline_pred"], r["alt_pred"]
        for g in dict.fromkeys(ids.tolist()):
            mask = ids == g
            v = vals[int(np.flatnonzero(mask)[0])]
            if v is None:
                continue
            attr.append(v)
            d_av.append(100.0 * np.mean((alt[mask] - base[mask]) / base[mask]))
            d_mape.append(100.0 * np.mean((np.abs(alt[mask] - s[mask]) - np.abs(base[mask] - s[mask])) / s[mask]))
    return np.array(attr, float), np.array(d_av, float), np.array(d_mape, float)


def _group_curves(results, config) -> dict:
    plots = {}
    for attribute in config.report_only:
        x, d_av, d_mape = block_group_deltas(results, attribute)
        for name, y in (("d_assessed_pct", d_av), ("d_mape", d_mape)):
            ok = np.isfinite(x) & np.isfinite(y)
            keep = censor_mask(x[ok], y[ok])
            x_c, y_c = x[ok][keep], y[ok][keep]
            plots[f"group_{attribute}_{name}_points"] = [
                {"attribute": float(a), "delta": float(b)} for a, b in zip(x_c, y_c)]
            series = group_delta_curve(x_c, y_c, n_bins=config.group_bins, degree=2)
            rows = series.rows()
            for row in rows:
                row["fit"] = float(series.polyval(row["bin"])) if len(series) else None
            plots[f"group_{attribute}_{name}"] = rows
            plots[f"group_{attribute}_{name}_coef"] = [
                {"power": k, "coef": float(c)} for k, c in enumerate(series.poly_coef)
            ] if series.poly_coef is not None else []
    return plots


def _metrics_report(config, panels, failures) -> ExperimentReport:
    table = []
    for cid in sorted(panels):
        panel = panels[cid]
        try:
            validate_panel(panel, config.min_sales)
        except Exception as exc:
            failures.append({"county_id": cid, "error": type(exc).__name__, "message": str(exc)})
            continue
        years = np.array([r.sale_date.year for r in panel.records])
        a, s = ratio_arrays(panel)
        for y in sorted(set(years.tolist())):
            mask = years == y
            if mask.sum() < 3:
                continue
            row = {"county_id": cid, "year": int(y), "n": int(mask.sum())}
            try:
                row.update(status_quo_metrics(a[mask], s[mask]))
            except Exception as exc:  # degenerate county-year
                failures.append({"county_id": f"{cid}:{y}", "error": type(exc).__name__, "message": str(exc)})
                continue
            table.append(row)
    report = ExperimentReport("metrics_report", _provenance(config), table, failures)
    report.tables["county_year"] = table
    if table:
        mape = np.array([r["mape"] for r in table])
        for m in FAIRNESS_METRICS:
            vals = np.array([r[m] for r in table])
            ok = np.isfinite(vals)
            x, y = mape[ok], vals[ok]
            keep = censor_mask(x, y)
            x, y = x[keep], y[keep]
            series = quantile_binscatter(x, y, n_bins=min(config.binscatter_bins, x.size))
            report.plots[f"binscatter_{m}"] = series.rows()
        lc = np.array([r["lc"] for r in table])
        report.aggregates = {
            "n_county_years": len(table),
            "n_lc_negative": int(np.sum(lc < 0)),
            "share_lc_negative": float(np.mean(lc < 0)),
            "n_prd_above_1_03": int(np.sum(np.array([r["prd"] for r in table]) > 1.03)),
        }
    return report


def _synth_validate(config, out_dir: Path) -> ExperimentReport:
    market = dict(config.market)
    generator = market.get("generator", "market")
    panels, census = [], []
    for i in range(config.n_counties):
        mc = market_from_dict(market, county_id=f"99{i + 1:03d}", seed=config.seed + i)
        if generator == "neighborhood":
            p, c, _ = generate_neighborhood_effect_market(mc)
            census.extend(c)
        else:
            p, _ = generate_market(mc)
        panels.append((p, mc))
    data_dir = ensure_dir(out_dir / "data")
    write_sales_csv([p for p, _ in panels], data_dir / "sales.csv")
    if census:
        write_census_csv(census, data_dir / "census.csv")
    loaded = load_sales_csv(data_dir / "sales.csv").panels

    rows = []
    for p, mc in panels:
        a, s = ratio_arrays(loaded[p.county_id])
        measured = status_quo_metrics(a, s)
        imp = implied_lc(mc.assessment)
        rows.append({
            "county_id": p.county_id,
            "n": len(p),
            "implied_lc": imp,
            "measured_lc": measured["lc"],
            "lc_abs_error": None if imp is None else abs(measured["lc"] - imp),
            **{k: v for k, v in measured.items() if k != "lc"},
        })
    report = ExperimentReport("synth_validate", _provenance(config), rows, [])
    errs = [r["lc_abs_error"] for r in rows if r["lc_abs_error"] is not None]
    report.aggregates = {
        "n_counties": len(rows),
        "max_lc_abs_error": max(errs) if errs else None,
        "mean_measured_lc": float(np.mean([r["measured_lc"] for r in rows])) if rows else None,
    }
    return report


def run_experiment(config: ExperimentConfig, *, write: bool = True) -> ExperimentReport:
    """Run one experiment end to end and (by default) write its artifacts."""
    out_dir = Path(config.output_dir)
    failures: list = []
    if config.kind == "synth_validate":
        report = _synth_validate(config, ensure_dir(out_dir))
    else:
        loaded = load_sales_csv(config.sales_path, rejects_path=None)
        panels = loaded.panels
        failures += [{"county_id": "", "error": r.reason, "message": f"line {r.line}"} for r in loaded.rejects]
        if config.kind == "census":
            join = join_census(panels, load_census_csv(config.census_path), config.report_only)
            panels = join.panels
            if config.exclude_cap_states:
                dropped = [c for c in panels if c[:2] in config.cap_states]
                for c in dropped:
                    failures.append({"county_id": c, "error": "AssessmentCapState",
                                     "message": "county lies in a state with assessment caps"})
                panels = {c: p for c, p in panels.items() if c not in dropped}
        if config.kind == "metrics_report":
            report = _metrics_report(config, panels, failures)
        else:
            report = _model_comparison_report(config.kind, config, panels, failures)
    if write:
        emit_report(report, out_dir)
    return report


# --------------------------------------------------------------------------
# emission

def _csv_value(v):
    if isinstance(v, float) or isinstance(v, np.floating):
        return fmt_float(float(v)) if math.isfinite(v) else ""
    if v is None:
        return ""
    if isinstance(v, (list, tuple)):
        return ";".join(str(x) for x in v)
    return str(v)


def _write_csv(path: Path, rows: Sequence[dict], provenance: dict) -> int:
    keys: list[str] = []
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={provenance['config_hash']} seed={provenance['seed']} "
                 f"code_version={provenance['code_version']}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow([_csv_value(r.get(k)) for k in keys])
    return len(rows)


def _flat_county_row(row: dict) -> dict:
    flat = {k: row[k] for k in ("county_id", "n_train", "n_test", "test_year") if k in row}
    for k, v in row.items():
        if k in ("baseline_metrics", "alt_metrics", "status_quo_metrics"):
            prefix = {"baseline_metrics": "base", "alt_metrics": "alt", "status_quo_metrics": "sq"}[k]
            for m, x in v.items():
                flat[f"{prefix}_{m}"] = x
        elif k == "deltas":
            for m, d in v.items():
                flat[f"d_{m}"] = d["estimate"]
                flat[f"d_{m}_low"] = d["ci_low"]
                flat[f"d_{m}_high"] = d["ci_high"]
                flat[f"p_{m}"] = d["p_value"]
                flat[f"p_adj_{m}"] = d["p_adjusted"]
                flat[f"bh_{m}"] = d["bh_reject"]
        elif k == "pareto":
            for pair, info in v.items():
                flat[f"class_{pair}"] = info["classification"]
        elif k not in flat and not isinstance(v, (dict, list)):
            flat[k] = v
    return flat


def summary_text(report: ExperimentReport) -> str:
    lines = [f"experiment: {report.kind}",
             f"config_hash: {report.provenance['config_hash']}",
             f"seed: {report.provenance['seed']}",
             f"code_version: {report.provenance['code_version']}",
             f"counties reported: {len(report.counties)}",
             f"failures: {len(report.failures)}"]
    for key, agg in sorted(report.aggregates.items()):
        if isinstance(agg, dict):
            lines.append(f"[{key}]")
            for k, v in agg.items():
                lines.append(f"  {k}: {_csv_value(v) if v is not None else 'n/a'}")
        else:
            lines.append(f"{key}: {_csv_value(agg)}")
    return "\n".join(lines) + "\n"


def emit_report(report: ExperimentReport, out_dir) -> dict[str, Path]:
    """Write report.json, county CSV, plot-data CSVs, failures.json and summary.txt.

    Output is byte-stable for identical reports: no timestamps, sorted JSON keys.
    """
    out = ensure_dir(out_dir)
    plots_dir = ensure_dir(out / "plots")
    prov = report.provenance
    files = {}
    data = report.to_dict()
    path = out / "report.json"
    path.write_text(json.dumps(data, sort_keys=True, indent=2, allow_nan=False) + "\n")
    files["report"] = path
    path = out / "county_metrics.csv"
    _write_csv(path, [_flat_county_row(r) for r in data["counties"]], prov)
    files["county_metrics"] = path
    for name in sorted(data["plots"]):
        path = plots_dir / f"{name}.csv"
        _write_csv(path, data["plots"][name], prov)
        files[f"plot_{name}"] = path
    path = out / "failures.json"
    path.write_text(json.dumps({"provenance": data["provenance"], "failures": data["failures"]},
                               sort_keys=True, indent=2) + "\n")
    files["failures"] = path
    path = out / "summary.txt"
    path.write_text(summary_text(report))
    files["summary"] = path
    return files


def default_output_dir() -> str:
    return os.environ.get(OUTPUT_DIR_ENV, "out")
