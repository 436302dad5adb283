"""Logit technology competition.

Shares follow the relative-cost (power-law) logit

    s_i = b_i * c_i**g / sum_j b_j * c_j**g,   g < 0

which is invariant to rescaling all costs, so calibration does not depend on
currency units.  Nests are evaluated top-down; a nest presents its parent with
the weighted generalized mean of its children's costs.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .errors import AllWeightsZero, MissingPrice, ZeroObservedCostWithPositiveShare

#: Lower clamp on costs fed to the logit; keeps c**g finite when subsidies
#: (e.g. negative-emission credits) push a levelized cost to or below zero.
COST_FLOOR = 1e-6


def levelized_cost(tech, prices: Mapping[str, float], carbon_price: float = 0.0, *,
                   year: int | None = None, adder: float = 0.0) -> float:
    """Cost per unit of output: non-energy cost + input purchases + carbon charge.

    Storage cost is not a separate term; it arrives through the price of the
    storage-resource input whose intensity equals ``capture_fraction *
    emission_factor``.  Biogenic technologies pay nothing for the carbon they
    emit (it was absorbed while growing), so the capture share earns a credit:
    the carbon term becomes ``-carbon_price * capture_fraction * emission_factor``.

    ``year`` selects the exogenous non-energy cost path; ``adder`` is any extra
    per-unit charge (system integration cost for variable renewables).
    """
    cost = tech.non_energy_cost_at(year) if year is not None else tech.non_energy_cost
    cost += adder
    for commodity, intensity in tech.inputs:
        try:
            price = prices[commodity]
        except KeyError:
            raise MissingPrice(commodity) from None
        cost += price * intensity
    e = tech.emission_factor
    if e:
        cost += carbon_price * (1.0 - tech.capture_fraction) * e
        if tech.biogenic:
            cost -= carbon_price * e
    return cost


def _log_terms(costs, weights, exponent):
    c = np.maximum(np.asarray(costs, dtype=float), COST_FLOOR)
    b = np.asarray(weights, dtype=float)
    if c.shape != b.shape or c.ndim != 1 or c.size == 0:
        raise ValueError("costs and share weights must be non-empty vectors of equal length")
    if np.any(b < 0):
        raise ValueError("share weights must be non-negative")
    live = b > 0
    if not live.any():
        raise AllWeightsZero("every competitor has share weight 0")
    with np.errstate(divide="ignore"):
        logt = np.where(live, np.log(np.where(live, b, 1.0)) + exponent * np.log(c), -np.inf)
    return logt, live


def logit_shares(costs: Sequence[float], share_weights: Sequence[float],
                 exponent: float) -> np.ndarray:
    """Market shares for competing technologies.

    Competitors with share weight 0 get exactly 0.  Costs are clamped below at
    :data:`COST_FLOOR`.
    """
    if not exponent < 0:
        raise ValueError(f"logit exponent must be negative, got {exponent!r}")
    logt, live = _log_terms(costs, share_weights, exponent)
    shares = np.zeros(logt.shape)
    shifted = logt[live] - logt[live].max()
    w = np.exp(shifted)
    shares[live] = w / w.sum()
    return shares


def nest_price(costs: Sequence[float], share_weights: Sequence[float], exponent: float) -> float:
    """Weighted generalized mean ``(sum w c**g / sum w)**(1/g)`` of child costs."""
    logt, live = _log_terms(costs, share_weights, exponent)
    b = np.asarray(share_weights, dtype=float)[live]
    m = logt[live].max()
    log_mean = m + np.log(np.exp(logt[live] - m).sum()) - np.log(b.sum())
    return float(np.exp(log_mean / exponent))


def calibrate_share_weights(observed_shares: Sequence[float], base_costs: Sequence[float],
                            exponent: float) -> np.ndarray:
    """Share weights that make :func:`logit_shares` reproduce ``observed_shares``.

    Weights are ``s_i / c_i**g`` rescaled so the largest is 1.
    """
    s = np.asarray(observed_shares, dtype=float)
    c = np.asarray(base_costs, dtype=float)
    if s.shape != c.shape:
        raise ValueError("observed shares and base costs differ in length")
    if np.any((s > 0) & (c <= 0)):
        raise ZeroObservedCostWithPositiveShare(
            "a technology with positive observed share has non-positive base cost"
        )
    if not np.isclose(s.sum(), 1.0, rtol=0, atol=1e-9):
        raise ValueError(f"observed shares sum to {s.sum()!r}")
    live = s > 0
    logb = np.full(s.shape, -np.inf)
    logb[live] = np.log(s[live]) - exponent * np.log(c[live])
    logb -= logb[live].max()
    return np.exp(logb)


def evaluate_tree(tree: Mapping[str, tuple[float, Sequence[str]]], root: str,
                  leaf_costs: Mapping[str, float], weights: Mapping[str, float]):
    """Nested logit over a tree.

    ``tree`` maps each nest id to ``(exponent, child ids)``; ids absent from
    ``tree`` are leaves.  ``weights`` gives the share weight of every child id
    (missing means 0).  Leaves missing from ``leaf_costs`` are unavailable.

    Returns ``(root price, {leaf: share of root output})``; the price is
    ``inf`` and the share map empty when nothing under ``root`` is available.
    """
    price, local = _nest(tree, root, leaf_costs, weights)
    if not np.isfinite(price):
        return price, {}
    return price, local


def _nest(tree, node, leaf_costs, weights):
    exponent, children = tree[node]
    costs, wts, subs = [], [], []
    for child in children:
        if child in tree:
            p, sub = _nest(tree, child, leaf_costs, weights)
        else:
            p, sub = leaf_costs.get(child, np.inf), None
        w = weights.get(child, 0.0)
        if not np.isfinite(p) or w <= 0:
            continue
        costs.append(p)
        wts.append(w)
        subs.append((child, sub))
    if not costs:
        return np.inf, {}
    shares = logit_shares(costs, wts, exponent)
    out: dict[str, float] = {}
    for (child, sub), s in zip(subs, shares):
        if sub is None:
            out[child] = out.get(child, 0.0) + float(s)
        else:
            for leaf, ls in sub.items():
                out[leaf] = out.get(leaf, 0.0) + float(s) * ls
    return nest_price(costs, wts, exponent), out
