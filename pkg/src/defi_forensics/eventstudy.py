"""CAPM event study: abnormal returns of a victim token around an incident.

The market model is fitted by OLS on the ``window`` returns immediately before the
event tick, with a zero risk-free rate. Abnormal returns over the event window are
cumulated and the minimum of the running sum is reported as the harm measure.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

ESTIMATION_WINDOW = 144
DEFAULT_EVENT_LENGTH = 144
DEFAULT_GRANULARITY_S = 3600


class TooShort(ValueError):
    pass


class MisalignedTicks(ValueError):
    pass


class DegenerateRegressor(ValueError):
    pass


class EmptySeries(ValueError):
    pass


@dataclass(frozen=True)
class PriceSeries:
    ticks: tuple[int, ...]
    prices: tuple[float, ...]
    granularity: int = DEFAULT_GRANULARITY_S

    def __post_init__(self) -> None:
        if len(self.ticks) != len(self.prices):
            raise ValueError("ticks and prices differ in length")
        if any(b <= a for a, b in zip(self.ticks, self.ticks[1:])):
            raise ValueError("tick indices must be strictly increasing")
        if any(not p > 0 for p in self.prices):
            raise ValueError("prices must be positive")

    def __len__(self) -> int:
        return len(self.ticks)

    @classmethod
    def from_pairs(cls, pairs, granularity: int = DEFAULT_GRANULARITY_S) -> "PriceSeries":
        pairs = list(pairs)
        return cls(tuple(int(t) for t, _ in pairs), tuple(float(p) for _, p in pairs), granularity)

    @classmethod
    def load_csv(cls, path: str | Path, granularity: int = DEFAULT_GRANULARITY_S) -> "PriceSeries":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls.from_pairs(((r["tick"], r["price"]) for r in rows), granularity)


@dataclass(frozen=True)
class CapmFit:
    alpha: float
    beta: float
    window: tuple[int, int]
    residual_variance: float
    n_obs: int


@dataclass(frozen=True)
class CarResult:
    abnormal_returns: tuple[float, ...]
    cumulative: tuple[float, ...]
    car_min: float
    argmin_tick: int
    ticks: tuple[int, ...] = ()


def returns(series: PriceSeries, kind: str = "simple") -> tuple[np.ndarray, np.ndarray]:
    """Per-tick returns, each labelled with the tick at which it is realised.

    ``kind`` is ``"simple"`` (p_t / p_{t-1} - 1) or ``"log"``.
    """
    if len(series) < 2:
        raise TooShort("need at least two ticks to form a return")
    p = np.asarray(series.prices, dtype=float)
    if kind == "simple":
        r = p[1:] / p[:-1] - 1.0
    elif kind == "log":
        r = np.log(p[1:] / p[:-1])
    else:
        raise ValueError(f"unknown return kind {kind!r}")
    return np.asarray(series.ticks[1:]), r


def _check_aligned(a: PriceSeries, b: PriceSeries) -> None:
    if a.ticks != b.ticks:
        raise MisalignedTicks("series do not share tick indices")


def market_proxy(btc: PriceSeries, eth: PriceSeries) -> PriceSeries:
    """Arithmetic mean of the two prices at each tick."""
    _check_aligned(btc, eth)
    prices = tuple((x + y) / 2 for x, y in zip(btc.prices, eth.prices))
    return PriceSeries(btc.ticks, prices, btc.granularity)


def market_proxy_returns(btc: PriceSeries, eth: PriceSeries, kind: str = "simple"):
    """Alternative proxy: mean of the two assets' returns rather than of their prices."""
    _check_aligned(btc, eth)
    ticks, rb = returns(btc, kind)
    _, re = returns(eth, kind)
    return ticks, (rb + re) / 2


def fit_capm(token_returns: Sequence[float], market_returns: Sequence[float],
             risk_free: float = 0.0, window: tuple[int, int] = (0, 0)) -> CapmFit:
    y = np.asarray(token_returns, dtype=float) - risk_free
    x = np.asarray(market_returns, dtype=float) - risk_free
    if y.shape != x.shape:
        raise MisalignedTicks("token and market returns differ in length")
    if len(x) < 2:
        raise TooShort("need at least two return observations")
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx == 0.0 or not np.isfinite(sxx):
        raise DegenerateRegressor("market returns have zero variance in the window")
    beta = float(xc @ (y - y.mean())) / sxx
    alpha = float(y.mean() - beta * x.mean())
    resid = y - alpha - beta * x
    dof = max(len(x) - 2, 1)
    return CapmFit(alpha, beta, window, float(resid @ resid) / dof, len(x))


def abnormal_returns(fit: CapmFit, token_returns: Sequence[float],
                     market_returns: Sequence[float], risk_free: float = 0.0) -> np.ndarray:
    r = np.asarray(token_returns, dtype=float)
    m = np.asarray(market_returns, dtype=float)
    if r.shape != m.shape:
        raise MisalignedTicks("token and market returns differ in length")
    return r - (fit.alpha + fit.beta * (m - risk_free) + risk_free)


def min_car(ars: Sequence[float], ticks: Sequence[int] | None = None) -> CarResult:
    ars = [float(a) for a in ars]
    if not ars:
        raise EmptySeries("no abnormal returns to cumulate")
    cum, total = [], 0.0
    for a in ars:
        total += a
        cum.append(total)
    i = min(range(len(cum)), key=cum.__getitem__)  # first index on ties
    ticks = tuple(range(len(ars))) if ticks is None else tuple(int(t) for t in ticks)
    return CarResult(tuple(ars), tuple(cum), cum[i], ticks[i], ticks)


@dataclass(frozen=True)
class EventStudy:
    fit: CapmFit
    car: CarResult

    def to_dict(self) -> dict:
        return {"alpha": self.fit.alpha, "beta": self.fit.beta,
                "car_min": self.car.car_min, "argmin_tick": self.car.argmin_tick}

    def curve_rows(self):
        return zip(self.car.ticks, self.car.abnormal_returns, self.car.cumulative)


def event_study(token: PriceSeries, market: PriceSeries, event_tick: int,
                window: int = ESTIMATION_WINDOW, event_length: int = DEFAULT_EVENT_LENGTH,
                return_kind: str = "simple", market_returns=None) -> EventStudy:
    """Fit on returns at ticks [event_tick - window, event_tick), score [event_tick, +length).

    ``market_returns`` optionally overrides the returns derived from ``market`` (used
    with :func:`market_proxy_returns`); it must be a ``(ticks, returns)`` pair.
    """
    ticks, r_tok = returns(token, return_kind)
    if market_returns is None:
        _check_aligned(token, market)
        _, r_mkt = returns(market, return_kind)
    else:
        mticks, r_mkt = market_returns
        if not np.array_equal(np.asarray(mticks), ticks):
            raise MisalignedTicks("market returns do not share the token's ticks")
    est = (ticks >= event_tick - window) & (ticks < event_tick)
    evt = (ticks >= event_tick) & (ticks < event_tick + event_length)
    if est.sum() < 2:
        raise TooShort(f"estimation window holds {int(est.sum())} returns, need >= 2")
    if not evt.any():
        raise EmptySeries("no returns inside the event window")
    fit = fit_capm(r_tok[est], r_mkt[est], window=(event_tick - window, event_tick))
    ar = abnormal_returns(fit, r_tok[evt], r_mkt[evt])
    return EventStudy(fit, min_car(ar, ticks[evt]))
