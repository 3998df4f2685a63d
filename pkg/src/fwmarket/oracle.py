"""Vertex queries over the admissible payoff set.

Two interchangeable backends answer ``argmin c . z`` over the payoff vectors
compatible with a partial settlement:

* exhaustive enumeration of the outcome space (exact, lexicographically
  smallest vertex on ties; meant for models whose outcome count fits in
  memory and for certifying the other backend), and
* depth-first branch and bound over securities with integer bound
  propagation on every constraint row (unit propagation on exclusivity rows
  and threshold propagation on the big-M rows fall out of the same rule).

The bound used for pruning is the coordinate-wise relaxation dotted with the
objective through the same reduction as leaf evaluation, so a node is pruned
only when every leaf below it is strictly worse in float arithmetic; both
backends therefore report identical optimal values.

Settlement queries (is bit b attainable for security i?) run as feasibility
dives: fix the bit, propagate, and search for any completing vertex.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .costs import PartialOutcome
from .model import MarketModel

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
TIMED_OUT = "timed_out"

ATTAINABLE = "attainable"
FORCED = "forced"


@dataclass(frozen=True)
class OracleResult:
    status: str
    vertex: np.ndarray | None = None
    value: float | None = None


@dataclass(frozen=True)
class SettleResult:
    status: str
    vertex: np.ndarray | None = None


class _RowSystem:
    """Constraint rows in incremental form for propagation with undo."""

    def __init__(self, model: MarketModel):
        self.n = model.n_securities
        self.members: list[list[tuple[int, int]]] = []
        self.rhs: list[int] = []
        self.is_eq: list[bool] = []
        self.adj: list[list[tuple[int, int]]] = [[] for _ in range(self.n)]
        for row in model.ip_rows:
            rid = len(self.rhs)
            pairs = [(int(i), int(c)) for i, c in zip(row.idx, row.coef)]
            self.members.append(pairs)
            self.rhs.append(int(row.rhs))
            self.is_eq.append(row.sense == "eq")
            for i, c in pairs:
                self.adj[i].append((rid, c))
        self.base_hi = [sum(max(c, 0) for _, c in m) for m in self.members]
        self.base_lo = [sum(min(c, 0) for _, c in m) for m in self.members]

    def fresh_state(self):
        return (
            np.full(self.n, -1, dtype=np.int8),
            list(self.base_hi),
            list(self.base_lo),
            [],  # trail of fixed securities
        )


class _Search:
    """One DFS over free securities with propagation and a trail for undo."""

    def __init__(self, rows: _RowSystem):
        self.rows = rows
        self.fixed, self.hi, self.lo, self.trail = rows.fresh_state()
        # start with every row queued so root-level forcings and conflicts
        # surface before any branching
        self.queue: list[int] = list(range(len(rows.rhs)))

    def fix(self, sec: int, bit: int) -> bool:
        """Fix a security; False on an immediate contradiction."""
        cur = self.fixed[sec]
        if cur != -1:
            return cur == bit
        self.fixed[sec] = bit
        self.trail.append(sec)
        for rid, c in self.rows.adj[sec]:
            # moving sec from free to bit narrows [lo, hi] by the slack it carried
            if c > 0:
                self.hi[rid] -= c * (1 - bit)
                self.lo[rid] += c * bit
            else:
                self.hi[rid] += c * bit
                self.lo[rid] -= c * (1 - bit)
            self.queue.append(rid)
        return True

    def undo_to(self, mark: int) -> None:
        rows = self.rows
        while len(self.trail) > mark:
            sec = self.trail.pop()
            bit = self.fixed[sec]
            self.fixed[sec] = -1
            for rid, c in rows.adj[sec]:
                if c > 0:
                    self.hi[rid] += c * (1 - bit)
                    self.lo[rid] -= c * bit
                else:
                    self.hi[rid] -= c * bit
                    self.lo[rid] += c * (1 - bit)
        self.queue.clear()

    def propagate(self) -> bool:
        """Drain the row queue, forcing implied bits; False on conflict."""
        rows = self.rows
        while self.queue:
            rid = self.queue.pop()
            rhs = rows.rhs[rid]
            slack_hi = self.hi[rid] - rhs
            if slack_hi < 0:
                return False
            if rows.is_eq[rid]:
                slack_lo = rhs - self.lo[rid]
                if slack_lo < 0:
                    return False
            else:
                slack_lo = None
            for sec, c in rows.members[rid]:
                if self.fixed[sec] != -1:
                    continue
                mag = c if c > 0 else -c
                if mag > slack_hi:
                    if not self.fix(sec, 1 if c > 0 else 0):
                        return False
                elif slack_lo is not None and mag > slack_lo:
                    if not self.fix(sec, 1 if c < 0 else 0):
                        return False
        return True

    def seed(self, sigma: PartialOutcome) -> bool:
        for sec in np.flatnonzero(sigma.bits != -1):
            if not self.fix(int(sec), int(sigma.bits[sec])):
                return False
        return self.propagate()


def _deadline_clock(deadline_secs: float | None) -> float:
    return float("inf") if deadline_secs is None else time.monotonic() + deadline_secs


def _minimize_bnb(model: MarketModel, c: np.ndarray, sigma: PartialOutcome,
                  deadline_secs: float | None) -> OracleResult:
    rows = _row_system(model)
    search = _Search(rows)
    if not search.seed(sigma):
        return OracleResult(INFEASIBLE)
    until = _deadline_clock(deadline_secs)
    neg = c < 0.0
    best_val: float | None = None
    best_z: np.ndarray | None = None
    abs_c = np.abs(c)
    # frames: (trail mark before the branch, security, remaining bits to try)
    frames: list[tuple[int, int, list[int]]] = []
    conflict = False
    while True:
        if time.monotonic() > until:
            status = TIMED_OUT
            return OracleResult(status, best_z, best_val)
        if not conflict:
            free = search.fixed == -1
            relaxed = ((search.fixed == 1) | (free & neg)).astype(np.float64)
            bound = float(c @ relaxed)
            if best_val is not None and bound >= best_val:
                conflict = True
            elif not free.any():
                best_val = bound
                best_z = search.fixed.astype(np.int8).copy()
                conflict = True
            else:
                masked = np.where(free, abs_c, -1.0)
                sec = int(masked.argmax())
                first = 1 if c[sec] < 0.0 else 0
                mark = len(search.trail)
                frames.append((mark, sec, [1 - first]))
                conflict = not (search.fix(sec, first) and search.propagate())
        if conflict:
            while frames:
                mark, sec, bits = frames[-1]
                if bits:
                    bit = bits.pop()
                    search.undo_to(mark)
                    conflict = not (search.fix(sec, bit) and search.propagate())
                    break
                frames.pop()
                search.undo_to(mark)
            else:
                break
            if conflict:
                continue
            conflict = False
    if best_z is None:
        return OracleResult(INFEASIBLE)
    return OracleResult(OPTIMAL, best_z, best_val)


def _feasible_dive(model: MarketModel, fixes, sigma: PartialOutcome,
                   deadline_secs: float | None) -> tuple[str, np.ndarray | None]:
    """Find any vertex consistent with sigma plus extra (sec, bit) fixes."""
    rows = _row_system(model)
    search = _Search(rows)
    if not search.seed(sigma):
        return INFEASIBLE, None
    for sec, bit in fixes:
        if not (search.fix(int(sec), int(bit)) and search.propagate()):
            return INFEASIBLE, None
    until = _deadline_clock(deadline_secs)
    frames: list[tuple[int, int, list[int]]] = []
    conflict = False
    while True:
        if time.monotonic() > until:
            return TIMED_OUT, None
        if not conflict:
            free = np.flatnonzero(search.fixed == -1)
            if free.size == 0:
                return OPTIMAL, search.fixed.astype(np.int8).copy()
            sec = int(free[0])
            mark = len(search.trail)
            frames.append((mark, sec, [1]))
            conflict = not (search.fix(sec, 0) and search.propagate())
        if conflict:
            while frames:
                mark, sec, bits = frames[-1]
                if bits:
                    bit = bits.pop()
                    search.undo_to(mark)
                    conflict = not (search.fix(sec, bit) and search.propagate())
                    break
                frames.pop()
                search.undo_to(mark)
            else:
                return INFEASIBLE, None
            if conflict:
                continue
            conflict = False


def enumerate_solutions(model: MarketModel, sigma: PartialOutcome | None = None,
                        limit: int | None = None):
    """Yield every binary solution of the constraint rows, lexicographic order.

    Exhaustive DFS with propagation; used to certify that the integer program
    carves out exactly the simulated outcome set.  ``limit`` caps the number
    of solutions yielded (a guard for accidentally huge models).
    """
    rows = _row_system(model)
    search = _Search(rows)
    if sigma is not None and not search.seed(sigma):
        return
    if not search.propagate():
        return
    produced = 0
    frames: list[tuple[int, int, list[int]]] = []
    conflict = False
    while True:
        if not conflict:
            free = np.flatnonzero(search.fixed == -1)
            if free.size == 0:
                yield search.fixed.astype(np.int8).copy()
                produced += 1
                if limit is not None and produced >= limit:
                    return
                conflict = True
            else:
                sec = int(free[0])
                mark = len(search.trail)
                frames.append((mark, sec, [1]))
                conflict = not (search.fix(sec, 0) and search.propagate())
        if conflict:
            while frames:
                mark, sec, bits = frames[-1]
                if bits:
                    bit = bits.pop()
                    search.undo_to(mark)
                    conflict = not (search.fix(sec, bit) and search.propagate())
                    break
                frames.pop()
                search.undo_to(mark)
            else:
                return
            if conflict:
                continue
            conflict = False


def _minimize_enum(model: MarketModel, c: np.ndarray,
                   sigma: PartialOutcome) -> OracleResult:
    mat = model.payoff_matrix()
    mask = sigma.bits != -1
    if mask.any():
        feasible = (mat[:, mask] == sigma.bits[mask]).all(axis=1)
        mat = mat[feasible]
    if mat.shape[0] == 0:
        return OracleResult(INFEASIBLE)
    rough = mat @ c
    near = np.flatnonzero(rough <= rough.min() + 1e-9)
    best_val = None
    best_z = None
    for i in near:
        z = mat[i]
        v = float(c @ z.astype(np.float64))
        if best_val is None or v < best_val or (v == best_val and z.tobytes() < best_z.tobytes()):
            best_val, best_z = v, z
    return OracleResult(OPTIMAL, best_z.copy(), best_val)


_row_cache: dict[int, tuple[int, _RowSystem]] = {}


def _row_system(model: MarketModel) -> _RowSystem:
    key = id(model)
    n_rows = len(model.ip_rows)
    cached = _row_cache.get(key)
    if cached is not None and cached[0] == n_rows:
        return cached[1]
    system = _RowSystem(model)
    _row_cache[key] = (n_rows, system)
    return system


@dataclass
class Oracle:
    """Vertex-query handle bound to one model.

    ``method`` picks the default backend for ``minimize``: 'bnb' (scales,
    deadline-aware) or 'enum' (exhaustive, lexicographic tie-breaking).
    """

    model: MarketModel
    method: str = "bnb"

    def minimize(self, objective: np.ndarray, sigma: PartialOutcome,
                 deadline_secs: float | None = None,
                 method: str | None = None) -> OracleResult:
        """argmin objective . z over payoff vectors compatible with sigma."""
        c = np.asarray(objective, dtype=np.float64)
        how = method or self.method
        if how == "enum":
            return _minimize_enum(self.model, c, sigma)
        if how == "bnb":
            return _minimize_bnb(self.model, c, sigma, deadline_secs)
        raise ValueError(f"unknown oracle method {how!r}")

    def settle_query(self, sigma: PartialOutcome, sec: int, bit: int,
                     deadline_secs: float | None = None) -> SettleResult:
        """Is there a valid payoff vector with z[sec] == bit under sigma?"""
        status, z = _feasible_dive(self.model, [(sec, bit)], sigma, deadline_secs)
        if status == OPTIMAL:
            return SettleResult(ATTAINABLE, z)
        if status == INFEASIBLE:
            return SettleResult(FORCED)
        return SettleResult(TIMED_OUT)

    def any_vertex(self, sigma: PartialOutcome,
                   deadline_secs: float | None = None) -> SettleResult:
        status, z = _feasible_dive(self.model, [], sigma, deadline_secs)
        if status == OPTIMAL:
            return SettleResult(ATTAINABLE, z)
        if status == INFEASIBLE:
            return SettleResult(FORCED)
        return SettleResult(TIMED_OUT)
