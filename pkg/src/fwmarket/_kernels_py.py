"""Numpy reference kernels for the grouped LMSR cost surface.

Securities are laid out contiguously per variable; ``group_start`` holds the
CSR-style offsets and ``settle`` marks each security as unsettled (-1) or
settled to its payoff bit (0/1).  The compiled module ``_kernels`` exports the
same three functions; either backend must produce bitwise-comparable results
on the same inputs up to the usual non-associativity of float sums, so tests
compare them at 1e-12.

All routines return nan instead of raising when a group is unsatisfiable
(every security settled to 0); callers translate that into an error.
"""

from __future__ import annotations

import numpy as np


def cost_value(theta, b, group_start, settle) -> float:
    """Sum over groups of the settlement-restricted LMSR potential.

    A group with a security settled to 1 contributes that coordinate of theta;
    a group with only 0-settlements contributes b*log(sum over unsettled of
    exp(theta/b)); an untouched group is the plain LMSR term.
    """
    total = 0.0
    n_groups = len(group_start) - 1
    for g in range(n_groups):
        lo, hi = group_start[g], group_start[g + 1]
        seg = settle[lo:hi]
        th = theta[lo:hi]
        won = np.flatnonzero(seg == 1)
        if won.size:
            total += float(th[won[0]])
            if won.size > 1:
                return float("nan")
            continue
        open_ = seg != 0
        if not open_.any():
            return float("nan")
        x = th[open_] / b
        m = float(x.max())
        total += b * (m + np.log(np.exp(x - m).sum()))
    return float(total)


def prices_into(theta, b, group_start, settle, out) -> None:
    """Write the settlement-restricted price vector (gradient of the cost).

    Settled securities price at their bit; unsettled ones split the remaining
    mass of their group by softmax of theta/b over the unsettled entries.
    """
    n_groups = len(group_start) - 1
    for g in range(n_groups):
        lo, hi = group_start[g], group_start[g + 1]
        seg = settle[lo:hi]
        th = theta[lo:hi]
        open_ = seg == -1
        res = out[lo:hi]
        res[~open_] = seg[~open_]
        if not open_.any():
            continue
        mass = 1.0 - float(seg[seg == 1].sum())
        x = th[open_] / b
        m = float(x.max())
        w = np.exp(x - m)
        res[open_] = (mass / w.sum()) * w


def bundle_price_along(theta, direction, eta, b, group_start, settle, groups) -> float:
    """Return direction . price(theta + eta*direction) summed over ``groups``.

    ``direction`` is dense but zero outside the listed groups, so only those
    groups are evaluated.  This is the LCMM line-search objective.
    """
    total = 0.0
    for g in groups:
        lo, hi = group_start[g], group_start[g + 1]
        seg = settle[lo:hi]
        d = direction[lo:hi]
        open_ = seg == -1
        settled = ~open_
        if settled.any():
            total += float(d[settled] @ seg[settled])
        if not open_.any():
            continue
        mass = 1.0 - float(seg[seg == 1].sum())
        x = (theta[lo:hi][open_] + eta * d[open_]) / b
        m = float(x.max())
        w = np.exp(x - m)
        total += mass * float(d[open_] @ w) / float(w.sum())
    return float(total)


def root_bundle_eta(theta, direction, rhs, b, group_start, settle, groups,
                    eta_cap, max_steps, rel_tol) -> float:
    """Largest eta keeping the traded bundle's price at or below rhs.

    The price along the direction is nondecreasing in eta, so the bracket
    doubles from 1 until it crosses rhs (hitting ``eta_cap`` first means the
    direction cannot move the price: return 0), then bisects, returning the
    lower end so the caller never overshoots the bound.
    """

    def f(eta: float) -> float:
        return bundle_price_along(
            theta, direction, eta, b, group_start, settle, groups
        ) - rhs

    hi = 1.0
    while f(hi) < 0.0:
        hi *= 2.0
        if hi > eta_cap:
            return 0.0
    lo = 0.0
    for _ in range(max_steps):
        if hi - lo <= rel_tol * max(1.0, lo):
            break
        mid = 0.5 * (lo + hi)
        if f(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return lo
