"""Sum-of-LMSR cost surface, its conjugate, and the mixed Bregman divergence.

The market maintains one log-sum-exp potential per variable (group of
mutually exclusive securities) with a shared liquidity b:

    C(theta) = b * sum_j log(sum_x exp(theta_{j,x} / b))

Settlement restricts the potential: a group whose winner is known contributes
its theta coordinate linearly, a group with some securities settled to 0
drops them from the log-sum-exp.  Prices are the gradient; settled securities
price exactly at their payoff bit and each partially settled group prices its
unsettled securities at the conditional softmax, scaled by the group's
remaining mass.

The convex conjugate of the restricted cost is the negative-entropy sum
R(mu) = b * sum mu log mu over coherent restricted distributions, extended
with an explicit +inf sentinel off the domain.  Its gradient map inverts the
price map, which is what the projection routines rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import BoundaryError, ConsistencyError

GROUP_SUM_TOL = 1e-9
NEGATIVE_CLAMP = 1e-12


@dataclass(frozen=True)
class MarketState:
    """Liquidity parameter and one theta coordinate per security."""

    theta: np.ndarray
    b: float

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=np.float64))
        if not self.b > 0:
            raise ValueError(f"liquidity must be positive, got {self.b}")

    def with_theta(self, theta: np.ndarray) -> "MarketState":
        return MarketState(theta, self.b)


class PartialOutcome:
    """Per-security settlement status: -1 unsettled, else the payoff bit.

    Instances are immutable; ``settle`` returns a new object.  Consistency
    (existence of a valid payoff vector matching the bits) is the caller's
    invariant, checked against the outcome set where the ops require it.
    """

    __slots__ = ("bits",)

    def __init__(self, bits: np.ndarray):
        bits = np.asarray(bits, dtype=np.int8)
        bits.setflags(write=False)
        self.bits = bits

    @classmethod
    def empty(cls, n_securities: int) -> "PartialOutcome":
        return cls(np.full(n_securities, -1, dtype=np.int8))

    def settle(self, pairs) -> "PartialOutcome":
        """Return a copy with (security, bit) pairs applied.

        Re-settling a security to a different bit is a consistency violation.
        """
        bits = self.bits.copy()
        for i, bit in pairs:
            if bits[i] != -1 and bits[i] != bit:
                raise ConsistencyError(
                    f"security {i} already settled to {bits[i]}, cannot settle to {bit}"
                )
            bits[i] = bit
        return PartialOutcome(bits)

    def is_settled(self, i: int) -> bool:
        return self.bits[i] != -1

    @property
    def unsettled(self) -> np.ndarray:
        return np.flatnonzero(self.bits == -1)

    @property
    def n_settled(self) -> int:
        return int((self.bits != -1).sum())

    def agrees_with(self, z: np.ndarray) -> bool:
        mask = self.bits != -1
        return bool((z[mask] == self.bits[mask]).all())

    def __eq__(self, other):
        return isinstance(other, PartialOutcome) and np.array_equal(self.bits, other.bits)

    def __repr__(self):
        return f"PartialOutcome(settled={self.n_settled}/{len(self.bits)})"


def cost(model, state: MarketState, sigma: PartialOutcome) -> float:
    """Settlement-restricted cost C_sigma(theta)."""
    value = kernels.cost_value(state.theta, state.b, model.group_start, sigma.bits)
    if np.isnan(value):
        raise ConsistencyError("a group has no admissible winner under sigma")
    return value


def price(model, state: MarketState, sigma: PartialOutcome) -> np.ndarray:
    """Instantaneous prices, the gradient of the restricted cost."""
    out = np.empty(model.n_securities, dtype=np.float64)
    kernels.prices_into(state.theta, state.b, model.group_start, sigma.bits, out)
    return out


def trade_cost(model, state: MarketState, sigma: PartialOutcome, delta: np.ndarray) -> float:
    """Amount a trader pays for the bundle delta: C(theta + delta) - C(theta)."""
    after = kernels.cost_value(
        state.theta + delta, state.b, model.group_start, sigma.bits
    )
    before = kernels.cost_value(state.theta, state.b, model.group_start, sigma.bits)
    if np.isnan(after) or np.isnan(before):
        raise ConsistencyError("a group has no admissible winner under sigma")
    return float(after - before)


def conjugate_value(model, mu: np.ndarray, b: float, sigma: PartialOutcome) -> float:
    """Negative entropy b * sum mu log mu, +inf off the restricted domain.

    The domain is the product of group simplices intersected with the settled
    bits: each group must sum to 1 within 1e-9 and settled entries must match
    sigma.  Entries above -1e-12 are clamped to 0 before the check; 0 log 0
    counts as 0.
    """
    mu = np.asarray(mu, dtype=np.float64)
    if (mu < -NEGATIVE_CLAMP).any():
        return float("inf")
    mu = np.maximum(mu, 0.0)
    settled = sigma.bits != -1
    if settled.any() and np.abs(mu[settled] - sigma.bits[settled]).max() > GROUP_SUM_TOL:
        return float("inf")
    total = 0.0
    gs = model.group_start
    for g in range(len(gs) - 1):
        seg = mu[gs[g] : gs[g + 1]]
        if abs(seg.sum() - 1.0) > GROUP_SUM_TOL:
            return float("inf")
        pos = seg[seg > 0.0]
        total += b * float(pos @ np.log(pos))
    return total


def divergence(model, mu: np.ndarray, state: MarketState, sigma: PartialOutcome) -> float:
    """Mixed Bregman divergence D(mu || theta) = R(mu) + C(theta) - theta . mu.

    Nonnegative, zero exactly when mu is the price vector of theta; +inf when
    mu is off the restricted domain.  This is the maximum guaranteed profit of
    a trader who moves the market's prices to mu.
    """
    r = conjugate_value(model, mu, state.b, sigma)
    if np.isinf(r):
        return r
    return r + cost(model, state, sigma) - float(state.theta @ mu)


def conjugate_gradient(model, mu: np.ndarray, b: float, sigma: PartialOutcome) -> np.ndarray:
    """Gradient of the extended conjugate: b*(1 + log mu) unsettled, 0 settled.

    Inverts the price map: price(conjugate_gradient(mu), sigma) == mu for any
    mu in the relative interior of the restricted coherent set.  Raises
    BoundaryError when an unsettled coordinate touches 0 or 1, where the
    gradient diverges.
    """
    mu = np.asarray(mu, dtype=np.float64)
    out = np.zeros(model.n_securities, dtype=np.float64)
    open_ = sigma.bits == -1
    seg = mu[open_]
    if seg.size and (seg.min() <= 0.0 or seg.max() >= 1.0):
        raise BoundaryError("unsettled price coordinate at the simplex boundary")
    out[open_] = b * (1.0 + np.log(seg))
    return out


def state_from_prices(model, prices: np.ndarray, b: float, floor: float = 1e-9) -> MarketState:
    """Build a state whose price vector reproduces ``prices``.

    Coordinates are floored away from 0 and each group renormalized before
    taking theta = b * log(mu), so boundary prices survive the log.
    """
    mu = np.maximum(np.asarray(prices, dtype=np.float64), floor)
    gs = model.group_start
    for g in range(len(gs) - 1):
        seg = mu[gs[g] : gs[g + 1]]
        seg /= seg.sum()
    return MarketState(b * np.log(mu), b)
