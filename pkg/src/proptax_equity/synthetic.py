"""Synthetic county markets with known assessment regressivity.

Log market value is linear in latent property features plus block-group
effects and noise. Status quo assessments are then produced by one of a few
rules whose regressivity is known in closed form (power law, mean reversion)
or easy to reason about (caps, appeals).
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .domain import CensusBlockGroupRow, CountyPanel, SaleRecord
from .errors import ValidationError
from .inference import rank_bins


@dataclass(frozen=True)
class PowerLaw:
    """A = c * S**gamma * exp(noise)."""

    c: float = 1.0
    gamma: float = 1.0
    noise_sd: float = 0.0

    def __post_init__(self):
        if self.gamma <= 0 or self.c <= 0:
            raise ValidationError("power law needs c > 0 and gamma > 0")


@dataclass(frozen=True)
class MeanReverting:
    """log A = m + shrink * (log V - m) + noise, m the panel mean of log V.

    V is the market value, or the value net of neighbourhood effects when
    ``sees_neighborhood`` is False (an assessor blind to location).
    """

    shrink: float = 0.8
    noise_sd: float = 0.0
    sees_neighborhood: bool = True

    def __post_init__(self):
        if self.shrink <= 0:
            raise ValidationError("shrink must be positive")


@dataclass(frozen=True)
class Capped:
    base: "Rule" = field(default_factory=PowerLaw)
    cap: float = 0.05

    def __post_init__(self):
        if not 0 < self.cap <= 1:
            raise ValidationError("cap fraction must be in (0, 1]")


@dataclass(frozen=True)
class AppealAdjusted:
    """Owners appeal with a probability set by sale-price quintile.

    An appeal only succeeds against an over-assessment and removes
    ``correction`` of the excess (1.0 resets the assessment to market value).
    """

    base: "Rule" = field(default_factory=PowerLaw)
    appeal_rates: tuple[float, ...] = (0.1, 0.15, 0.2, 0.3, 0.4)
    correction: float = 1.0

    def __post_init__(self):
        if len(self.appeal_rates) != 5 or not all(0 <= r <= 1 for r in self.appeal_rates):
            raise ValidationError("appeal_rates needs five probabilities in [0, 1]")
        if not 0 <= self.correction <= 1:
            raise ValidationError("correction must be in [0, 1]")


Rule = Union[PowerLaw, MeanReverting, Capped, AppealAdjusted]


@dataclass(frozen=True)
class MarketConfig:
    n_properties: int = 1000
    years: tuple[int, int] = (2018, 2023)
    base_log_price: float = 12.0
    feature_weights: tuple[float, ...] = (0.3, 0.2, 0.15)
    noise_sd: float = 0.15
    annual_appreciation: float = 0.0
    value_growth_sd: float = 0.0
    assessment: Rule = field(default_factory=PowerLaw)
    neighborhood_sd: float = 0.0
    n_block_groups: int = 40
    missing_rate: float = 0.0
    ipw: bool = False
    county_id: str = "99001"
    seed: int = 0

    def __post_init__(self):
        if self.n_properties < 1 or self.years[1] < self.years[0]:
            raise ValidationError("need n_properties >= 1 and years[0] <= years[1]")
        if not 0 <= self.missing_rate < 1:
            raise ValidationError("missing_rate must be in [0, 1)")


@dataclass
class GroundTruth:
    implied_lc: Optional[float]
    log_value: np.ndarray
    neighborhood_effect: np.ndarray
    block_group_latent: dict
    pre_appeal: Optional[np.ndarray] = None
    appealed: Optional[np.ndarray] = None
    assessment_history: Optional[np.ndarray] = None
    history_years: Optional[list] = None


def implied_lc(rule: Rule) -> Optional[float]:
    """Log coefficient implied by a noiseless rule, when it has a closed form."""
    if isinstance(rule, PowerLaw):
        return rule.gamma - 1.0
    if isinstance(rule, MeanReverting) and rule.sees_neighborhood:
        return rule.shrink - 1.0
    return None


def _apply_rule(rule, log_v, log_v_blind, rng):
    """Uncapped log assessment for each row of log values (any shape)."""
    if isinstance(rule, PowerLaw):
        noise = rng.normal(0, rule.noise_sd, log_v.shape) if rule.noise_sd else 0.0
        return np.log(rule.c) + rule.gamma * log_v + noise
    if isinstance(rule, MeanReverting):
        v = log_v if rule.sees_neighborhood else log_v_blind
        m = v.mean()
        noise = rng.normal(0, rule.noise_sd, log_v.shape) if rule.noise_sd else 0.0
        return m + rule.shrink * (v - m) + noise
    raise ValidationError(f"{type(rule).__name__} cannot be used as a base rule here")


def _block_group_ids(county_id, k):
    return [f"{county_id}{100 + g // 4:06d}{g % 4 + 1}" for g in range(k)]


def census_attributes(z, rng) -> dict[str, np.ndarray]:
    """Neighbourhood measures driven by the latent block-group factor ``z``."""
    k = z.size

    def logistic(t):
        return 1.0 / (1.0 + np.exp(-t))

    return {
        "snap_share": logistic(-1.0 - 0.9 * z + rng.normal(0, 0.3, k)),
        "college_share": logistic(-0.5 + 0.8 * z + rng.normal(0, 0.3, k)),
        "unemployment_rate": logistic(-2.8 - 0.5 * z + rng.normal(0, 0.3, k)),
        "median_age": 38.0 + 4.0 * z + rng.normal(0, 2.0, k),
        "median_income": 65000.0 * np.exp(0.35 * z + rng.normal(0, 0.1, k)),
        "share_black": logistic(-1.2 - 1.0 * z + rng.normal(0, 0.5, k)),
    }


def _market(config: MarketConfig):
    rng = np.random.default_rng([config.seed, 0])
    n, k = config.n_properties, len(config.feature_weights)
    first, last = config.years
    n_years = last - first + 1

    X = rng.normal(0, 1, (n, k))
    n_bg = max(1, config.n_block_groups)
    z_bg = rng.normal(0, 1, n_bg)
    bg = rng.integers(0, n_bg, n)
    u = config.neighborhood_sd * z_bg[bg]
    eps = rng.normal(0, config.noise_sd, n) if config.noise_sd else np.zeros(n)
    structural = config.base_log_price + X @ np.asarray(config.feature_weights, dtype=float)
    log_v0 = structural + u + eps

    # value path by year, then a sale date inside a random year
    growth = config.annual_appreciation + (
        rng.normal(0, config.value_growth_sd, (n, n_years)) if config.value_growth_sd else 0.0)
    growth = np.broadcast_to(growth, (n, n_years)).copy()
    growth[:, 0] = 0.0
    path = log_v0[:, None] + np.cumsum(growth, axis=1)
    sale_year_idx = rng.integers(0, n_years, n)
    day = rng.integers(0, 365, n)
    dates = [dt.date(first + int(y), 1, 1) + dt.timedelta(days=int(d)) for y, d in zip(sale_year_idx, day)]
    log_s = path[np.arange(n), sale_year_idx]
    blind_path = path - u[:, None]

    rule = config.assessment
    truth = GroundTruth(implied_lc(rule), log_s, u, {"z": z_bg})
    arng = np.random.default_rng([config.seed, 1])
    if isinstance(rule, Capped):
        base_hist = _apply_rule(rule.base, path, blind_path, arng)
        hist = np.empty_like(base_hist)
        hist[:, 0] = base_hist[:, 0]
        step = np.log1p(rule.cap)
        for t in range(1, n_years):
            hist[:, t] = np.minimum(base_hist[:, t], hist[:, t - 1] + step)
        log_a = hist[np.arange(n), sale_year_idx]
        truth.assessment_history = np.exp(hist)
        truth.history_years = list(range(first, last + 1))
        truth.implied_lc = None
    elif isinstance(rule, AppealAdjusted):
        log_pre = _apply_rule(rule.base, log_s, log_s - u, arng)
        q = rank_bins(log_s, 5)
        rates = np.asarray(rule.appeal_rates)[q]
        appeal = arng.random(n) < rates
        pre = np.exp(log_pre)
        s = np.exp(log_s)
        over = pre > s
        post = np.where(appeal & over, pre - rule.correction * (pre - s), pre)
        log_a = np.log(post)
        truth.pre_appeal = pre
        truth.appealed = appeal & over
        truth.implied_lc = None
    else:
        log_a = _apply_rule(rule, log_s, log_s - u, arng)

    return rng, X, bg, z_bg, dates, log_s, log_a, truth


def _records(config, X, bg, dates, log_s, log_a, weights=None):
    bg_ids = _block_group_ids(config.county_id, max(1, config.n_block_groups))
    n, k = X.shape
    mrng = np.random.default_rng([config.seed, 2])
    missing = mrng.random((n, k)) < config.missing_rate if config.missing_rate else np.zeros((n, k), bool)
    recs = []
    for i in range(n):
        feats = {f"f{j + 1}": (None if missing[i, j] else float(X[i, j])) for j in range(k)}
        recs.append(SaleRecord(
            county_id=config.county_id,
            block_group_id=bg_ids[bg[i]],
            sale_date=dates[i],
            sale_price=float(np.exp(log_s[i])),
            assessed_value=float(np.exp(log_a[i])),
            features=feats,
            sample_weight=None if weights is None else float(weights[i]),
        ))
    return recs


def generate_market(config: MarketConfig) -> tuple[CountyPanel, GroundTruth]:
    """One reproducible county panel plus the ground truth behind it.

    Records are returned in sale-date order; ``GroundTruth`` arrays follow
    the panel order.
    """
    rng, X, bg, z, dates, log_s, log_a, truth = _market(config)
    recs = _records(config, X, bg, dates, log_s, log_a)
    panel, order = _to_panel(config, recs)
    return panel, _reorder(truth, order)


def generate_neighborhood_effect_market(config: MarketConfig):
    """Panel, census table and ground truth for a market with block-group price effects.

    The census attributes are noisy functions of the latent block-group factor
    that also shifts log prices by ``neighborhood_sd`` per unit. With
    ``neighborhood_sd=0`` the attributes are pure noise with respect to price.
    With ``ipw`` set, every sale carries an inverse inclusion-probability weight
    derived from a per-block-group sale rate.
    """
    rng, X, bg, z, dates, log_s, log_a, truth = _market(config)
    crng = np.random.default_rng([config.seed, 3])
    attrs = census_attributes(z, crng)
    weights = None
    if config.ipw:
        sale_rate = np.clip(0.03 + 0.02 * z + crng.normal(0, 0.005, z.size), 0.005, 0.2)
        weights = 1.0 / sale_rate[bg]
    recs = _records(config, X, bg, dates, log_s, log_a, weights)
    bg_ids = _block_group_ids(config.county_id, z.size)
    census = [CensusBlockGroupRow(bg_ids[g], {name: float(v[g]) for name, v in attrs.items()})
              for g in range(z.size)]
    panel, order = _to_panel(config, recs)
    return panel, census, _reorder(truth, order)


def _to_panel(config, recs):
    order = sorted(range(len(recs)), key=lambda i: recs[i].sale_date)
    panel = CountyPanel(config.county_id, tuple(recs[i] for i in order), tuple(config.years))
    return panel, np.asarray(order)


def _reorder(truth: GroundTruth, order):
    truth.log_value = truth.log_value[order]
    truth.neighborhood_effect = truth.neighborhood_effect[order]
    for name in ("pre_appeal", "appealed", "assessment_history"):
        val = getattr(truth, name)
        if val is not None:
            setattr(truth, name, val[order])
    return truth
