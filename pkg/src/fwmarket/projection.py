"""Bregman projection onto the coherent price set by active-set Frank-Wolfe.

Incoherent prices admit arbitrage equal to the divergence from the coherent
polytope.  This module moves the market state to (approximately) the
divergence minimizer mu* over the convex hull of admissible payoff vectors,
capturing at least an alpha fraction of that arbitrage as guaranteed profit:

* ``init_fw`` seeds the active vertex set so every still-unsettled security
  is covered by vertices paying 0 and 1 (securities with only one attainable
  bit are logically settled instead, extending the partial outcome), and
  returns the vertex mean u, an interior anchor.
* ``project_fw`` repeats: fully-corrective solve over the active vertices
  contracted toward u by the current factor eps (contraction keeps iterates
  away from the entropy gradient's boundary blow-up), a conjugate-gradient
  step back to parameter space, and one vertex oracle call that yields both
  the Frank-Wolfe gap certificate and a new active vertex.  The contraction
  factor shrinks only when the measured gap proves it safe, so the procedure
  adapts to the unknown distance of mu* from the boundary.

Stopping follows the three-way rule: gap within (1-alpha) of the objective
(profit guaranteed), objective below eps_d (already coherent), or
interruption (deadline, cancel signal, oracle timeout, iteration cap).  The
reported objective and gap describe the final iterate, which certifies how
tightly the divergence minimum was located.  The applied state comes from
the iterate maximizing the certified profit F - g, and the update is taken
only when that certificate is nonnegative, so an update never loses money.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .costs import MarketState, PartialOutcome, conjugate_gradient, cost
from .errors import ConsistencyError
from .model import MarketModel
from .oracle import ATTAINABLE, FORCED, INFEASIBLE, OPTIMAL, Oracle

log = logging.getLogger(__name__)

PROFIT_GUARANTEED = "profit_guaranteed"
ALREADY_COHERENT = "already_coherent"
INTERRUPTED = "interrupted"
NO_UPDATE = "no_update"

DEFAULT_ALPHA = 0.5
DEFAULT_EPS0 = 0.5
DEFAULT_EPSD = 1e-6
MAX_ITERATIONS = 10_000
INNER_MAX_ITERATIONS = 5_000
STALL_LIMIT = 600  # inner iterations without gap progress before giving up


@dataclass
class InitFwResult:
    sigma: PartialOutcome
    vertices: np.ndarray  # n_vertices x n_securities, float64
    anchor: np.ndarray  # vertex mean u
    oracle_calls: int
    timed_out: bool


@dataclass
class ProjectionResult:
    status: str
    state: MarketState
    sigma: PartialOutcome
    profit_bound: float
    objective: float | None  # F at the final (stopping) iterate
    gap: float | None  # Frank-Wolfe gap at the final iterate
    iterations: int
    oracle_calls: int

    @property
    def updated(self) -> bool:
        return self.status in (PROFIT_GUARANTEED, INTERRUPTED)


def init_fw(model: MarketModel, oracle: Oracle, sigma: PartialOutcome,
            deadline_secs: float | None = None) -> InitFwResult:
    """Seed vertices covering both bits of every unsettled security.

    For each unsettled security and bit not yet covered by a found vertex,
    ask the oracle for a vertex attaining that bit; if none exists the
    opposite bit is logically forced and the partial outcome extends.  The
    forced extensions never shrink the admissible set, so vertices found
    before an extension remain valid.
    """
    until = float("inf") if deadline_secs is None else time.monotonic() + deadline_secs
    bits = sigma.bits.copy()
    n = model.n_securities
    covered = np.zeros((2, n), dtype=bool)
    vertices: list[np.ndarray] = []
    calls = 0
    timed_out = False
    for sec in np.flatnonzero(sigma.bits == -1):
        for bit in (0, 1):
            if bits[sec] != -1 or covered[bit, sec]:
                continue
            remaining = until - time.monotonic()
            if remaining <= 0.0:
                timed_out = True
                break
            calls += 1
            res = oracle.settle_query(
                PartialOutcome(bits), int(sec), bit,
                None if deadline_secs is None else remaining,
            )
            if res.status == ATTAINABLE:
                z = res.vertex
                vertices.append(z.astype(np.float64))
                covered[z.astype(np.int64), np.arange(n)] = True
            elif res.status == FORCED:
                bits = bits.copy()
                bits[sec] = 1 - bit
            else:
                timed_out = True
                break
        if timed_out:
            break
    sigma_hat = PartialOutcome(bits)
    if not vertices:
        if timed_out or (bits == -1).any():
            return InitFwResult(sigma_hat, np.empty((0, n)), np.empty(n), calls, True)
        vertices.append(bits.astype(np.float64))
    mat = np.stack(vertices)
    return InitFwResult(sigma_hat, mat, mat.mean(axis=0), calls, timed_out)


def _project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ks = np.arange(1, len(v) + 1)
    cond = u - css / ks > 0
    rho = int(ks[cond][-1])
    tau = css[rho - 1] / rho
    return np.maximum(v - tau, 0.0)


def inner_solve(
    contracted: np.ndarray,
    theta: np.ndarray,
    b: float,
    sigma_bits: np.ndarray,
    warm: np.ndarray,
    tol: float,
    max_iter: int = INNER_MAX_ITERATIONS,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Minimize the projection objective over the hull of listed vertices.

    Accelerated projected gradient on the simplex of vertex weights with
    backtracking; stops when the subproblem Frank-Wolfe gap over the listed
    vertices drops to ``tol``, keeping and returning the smallest-gap iterate
    seen.  When the optimal weights sit on a face of the simplex the gap
    decays like the square root of the value error, so it can bottom out
    above ``tol`` in float64; a stall counter then ends the loop.  Returns
    (mu, weights, achieved gap).
    """
    m = contracted.shape[0]
    open_ = sigma_bits == -1
    vu = np.ascontiguousarray(contracted[:, open_])
    th = theta[open_]

    def compose(lam: np.ndarray) -> np.ndarray:
        mu = contracted.T @ lam
        mu[~open_] = sigma_bits[~open_]
        return mu

    if m == 1:
        lam = np.ones(1)
        return compose(lam), lam, 0.0

    def value(lam: np.ndarray) -> float:
        mu = vu.T @ lam
        return float(b * (mu @ np.log(mu)) - th @ mu)

    def gradient(lam: np.ndarray) -> np.ndarray:
        mu = vu.T @ lam
        return vu @ (b * (1.0 + np.log(mu)) - th)

    lam = _project_simplex(np.asarray(warm, dtype=np.float64))
    g = gradient(lam)
    gap = float(g @ lam - g.min())
    if gap <= tol:
        return compose(lam), lam, gap
    best_gap, best_lam = gap, lam
    stale = 0
    prev = lam
    t_mom = 1.0
    lip = 1.0
    for _ in range(max_iter):
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_mom * t_mom))
        beta = (t_mom - 1.0) / t_next
        y = _project_simplex(lam + beta * (lam - prev))
        gy = gradient(y)
        if not np.isfinite(gy).all():
            # momentum extrapolated onto a hull face where the entropy
            # gradient diverges; restart from the last accepted point
            y, t_next = lam, 1.0
            gy = gradient(y)
        vy = value(y)
        while True:
            cand = _project_simplex(y - gy / lip)
            step = cand - y
            bound = vy + float(gy @ step) + 0.5 * lip * float(step @ step)
            vc = value(cand)
            if np.isfinite(vc) and vc <= bound + 1e-12:
                break
            if lip > 1e16:
                cand = y
                break
            lip *= 2.0
        prev, lam, t_mom = lam, cand, t_next
        g = gradient(lam)
        gap = float(g @ lam - g.min())
        if gap < best_gap:
            # require real progress to reset the stall counter; sub-0.1%
            # wiggle at the float64 noise floor should still terminate
            stale = 0 if gap < 0.999 * best_gap else stale + 1
            best_gap, best_lam = gap, lam
        else:
            stale += 1
        if best_gap <= tol:
            break
        if stale >= STALL_LIMIT:
            log.debug("inner solve gap stalled at %.3g (tolerance %.3g)", best_gap, tol)
            break
        lip *= 0.7
    else:
        log.debug("inner solve stopped at iteration cap with gap %.3g", best_gap)
    return compose(best_lam), best_lam, best_gap


def fw_gap(model: MarketModel, mu: np.ndarray, state: MarketState,
           sigma: PartialOutcome, vertex: np.ndarray) -> float:
    """Frank-Wolfe gap certificate (grad R(mu) - theta) . (mu - vertex)."""
    grad = conjugate_gradient(model, mu, state.b, sigma) - state.theta
    return float(grad @ (mu - vertex))


def project_fw(
    model: MarketModel,
    state: MarketState,
    sigma: PartialOutcome,
    oracle: Oracle | None = None,
    alpha: float = DEFAULT_ALPHA,
    eps0: float = DEFAULT_EPS0,
    epsd: float = DEFAULT_EPSD,
    deadline_secs: float | None = None,
    cancel=None,
    max_iterations: int = MAX_ITERATIONS,
) -> ProjectionResult:
    """Project the market state onto coherent prices, keeping profit >= 0.

    Returns the extended partial outcome in all cases.  The state update is
    applied only when the best iterate's certified profit F - g is
    nonnegative; statuses: profit_guaranteed (gap within (1-alpha) of the
    objective), already_coherent (objective within eps_d, no update),
    interrupted (budget ran out, best safe iterate applied), no_update
    (nothing certified before interruption).
    """
    if oracle is None:
        oracle = Oracle(model)
    until = float("inf") if deadline_secs is None else time.monotonic() + deadline_secs
    init = init_fw(model, oracle, sigma, deadline_secs)
    calls = init.oracle_calls
    if init.timed_out:
        return ProjectionResult(
            NO_UPDATE, state, init.sigma, 0.0, None, None, 0, calls
        )
    sigma_hat = init.sigma
    raw = init.vertices
    anchor = init.anchor
    theta = state.theta
    b = state.b
    base_cost = cost(model, state, sigma_hat)
    open_ = sigma_hat.bits == -1

    def objective(mu: np.ndarray) -> float:
        seg = mu[open_]
        entropy = float(seg[seg > 0.0] @ np.log(seg[seg > 0.0])) if seg.size else 0.0
        return b * entropy + base_cost - float(theta @ mu)

    weights = np.full(raw.shape[0], 1.0 / raw.shape[0])
    eps = eps0
    inner_tol = min(1e-8, epsd / 10.0)
    best_mu: np.ndarray | None = None
    best_f = best_g = 0.0
    best_score = -np.inf
    prev_gap = np.inf
    status = INTERRUPTED
    final_f = final_gap = None
    iterations = 0
    while iterations < max_iterations:
        if cancel is not None and cancel():
            status = INTERRUPTED
            break
        if time.monotonic() > until:
            status = INTERRUPTED
            break
        iterations += 1
        contracted = raw + eps * (anchor - raw)
        mu, weights, _ = inner_solve(
            contracted, theta, b, sigma_hat.bits, weights, inner_tol
        )
        f_t = objective(mu)
        final_f = f_t
        if f_t <= epsd:
            status = ALREADY_COHERENT
            final_gap = None
            break
        grad_theta = conjugate_gradient(model, mu, b, sigma_hat)
        direction = grad_theta - theta
        remaining = until - time.monotonic()
        if deadline_secs is not None and remaining <= 0.0:
            status = INTERRUPTED
            break
        calls += 1
        res = oracle.minimize(
            direction, sigma_hat, None if deadline_secs is None else remaining
        )
        if res.status != OPTIMAL:
            if res.status == INFEASIBLE:
                raise ConsistencyError("no admissible payoff vector matches sigma")
            status = INTERRUPTED
            break
        z = res.vertex.astype(np.float64)
        g_t = float(direction @ (mu - z))
        final_gap = g_t
        score = f_t - g_t
        if score > best_score:
            best_score, best_mu, best_f, best_g = score, mu, f_t, g_t
        if g_t <= (1.0 - alpha) * f_t:
            status = PROFIT_GUARANTEED
            break
        is_dup = bool((np.abs(raw - z).max(axis=1) < 0.5).any())
        if is_dup:
            if g_t >= prev_gap:
                eps *= 0.5
        else:
            raw = np.vstack([raw, z])
            weights = np.append(weights, 0.0)
        gap_anchor = float(direction @ (mu - anchor))
        if gap_anchor < 0.0:
            ratio = g_t / (-4.0 * gap_anchor)
            if ratio < eps:
                eps = min(ratio, 0.5 * eps)
        prev_gap = g_t
    else:
        status = INTERRUPTED
        log.info("projection hit the %d-iteration cap", max_iterations)

    if status == ALREADY_COHERENT:
        return ProjectionResult(
            ALREADY_COHERENT, state, sigma_hat, 0.0, final_f, final_gap, iterations, calls
        )
    if status == PROFIT_GUARANTEED or (
        status == INTERRUPTED and best_mu is not None and best_g <= best_f
    ):
        theta_hat = conjugate_gradient(model, best_mu, b, sigma_hat)
        return ProjectionResult(
            status, state.with_theta(theta_hat), sigma_hat,
            max(best_score, 0.0), final_f, final_gap, iterations, calls,
        )
    return ProjectionResult(
        NO_UPDATE, state, sigma_hat, 0.0, final_f, final_gap, iterations, calls
    )
