"""Command-line entry points: generate, run, validate, project.

``generate`` writes a seeded synthetic dataset (model, orders, settlements,
outcome), ``run`` replays it under a treatment and writes snapshot CSVs (one
per budget level when ``--budget`` is a comma list), ``validate`` certifies a
model file (outcome-set bijection and relaxed-row soundness when exhaustively
enumerable, smoke checks otherwise), and ``project`` is a one-shot projection
debug aid on jittered prices.

Exit codes: 0 success, 2 consistency violation (including infeasible models),
1 anything else (parse errors carry file and line).  Set FWMM_LOG to ``info``
or ``debug`` for progress logging on stderr.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np

from .costs import PartialOutcome, divergence, price, state_from_prices
from .engine import (
    TREATMENTS,
    RunConfig,
    read_orders_csv,
    read_outcome_csv,
    read_settlements_csv,
    run_market,
    write_snapshots_csv,
)
from .errors import ConsistencyError, FwmarketError, ParseError
from .generator import generate, write_dataset
from .model import MarketModel
from .oracle import ATTAINABLE, FORCED, Oracle, enumerate_solutions
from .projection import project_fw

log = logging.getLogger(__name__)

EXHAUSTIVE_LIMIT = 1 << 16
_CHUNK = 4096


# ------------------------------------------------------------------ validation


@dataclass
class ValidationReport:
    n_securities: int
    n_variables: int
    n_ip_rows: int
    n_lcmm_rows: int
    n_outcomes: int
    feasible: bool
    witness: list
    n_solutions: int | None = None  # exhaustive path only
    bijection_ok: bool | None = None
    lcmm_ok: bool | None = None
    smoke_ok: bool | None = None

    @property
    def ok(self) -> bool:
        return self.feasible and all(
            flag is not False
            for flag in (self.bijection_ok, self.lcmm_ok, self.smoke_ok)
        )


def _row_witness(model: MarketModel) -> list:
    """Rows that are individually unsatisfiable over 0/1 vectors, described."""
    out = []
    for row in model.ip_rows:
        hi = int(np.maximum(row.coef, 0).sum())
        lo = int(np.minimum(row.coef, 0).sum())
        bad = row.rhs > hi or (row.sense == "eq" and row.rhs < lo)
        if bad:
            out.append(f"{row.tag}: coef@{list(row.idx)} {row.sense} {row.rhs}")
    if not out:
        out.append("no single row is unsatisfiable; the conflict is joint")
    return out


def validate_model(model: MarketModel, exhaustive_limit: int = EXHAUSTIVE_LIMIT) -> ValidationReport:
    """Certify a model: outcome bijection and relaxed-row soundness.

    With at most ``exhaustive_limit`` outcomes, streams every solution of the
    constraint rows and checks it maps one-to-one onto the simulated outcome
    payoffs and satisfies every relaxed row.  Larger models get feasibility
    and settle-query smoke checks only.
    """
    report = ValidationReport(
        model.n_securities, len(model.variables), len(model.ip_rows),
        len(model.lcmm_rows), model.n_outcomes, True, [],
    )
    n = model.n_outcomes
    if 0 < n <= exhaustive_limit:
        payoffs = {model.payoff(tok).tobytes() for tok in range(n)}
        dense = np.zeros((len(model.lcmm_rows), model.n_securities), dtype=np.int64)
        rhs = np.empty(len(model.lcmm_rows), dtype=np.int64)
        is_eq = np.zeros(len(model.lcmm_rows), dtype=bool)
        for i, row in enumerate(model.lcmm_rows):
            dense[i, row.idx] = row.coef
            rhs[i] = row.rhs
            is_eq[i] = row.sense == "eq"

        def check_chunk(chunk: list) -> tuple[bool, bool]:
            mat = np.stack(chunk).astype(np.int64)
            seen = all(z.tobytes() in payoffs for z in chunk)
            vals = mat @ dense.T
            sound = bool(
                (vals >= rhs).all() and (vals[:, is_eq] == rhs[is_eq]).all()
            )
            return seen, sound

        count = 0
        matched = True
        sound = True
        chunk: list = []
        for z in enumerate_solutions(model):
            count += 1
            chunk.append(z.astype(np.int8))
            if len(chunk) == _CHUNK:
                a, b = check_chunk(chunk)
                matched &= a
                sound &= b
                chunk = []
        if chunk:
            a, b = check_chunk(chunk)
            matched &= a
            sound &= b
        report.n_solutions = count
        report.feasible = count > 0
        report.bijection_ok = matched and count == n
        report.lcmm_ok = sound
        if not report.feasible:
            report.witness = _row_witness(model)
    else:
        oracle = Oracle(model)
        res = oracle.any_vertex(PartialOutcome.empty(model.n_securities))
        report.feasible = res.status == ATTAINABLE
        if not report.feasible:
            report.witness = _row_witness(model)
        else:
            empty = PartialOutcome.empty(model.n_securities)
            smoke = True
            for sec in (0, model.n_securities - 1):
                for bit in (0, 1):
                    smoke &= oracle.settle_query(empty, sec, bit).status in (
                        ATTAINABLE, FORCED,
                    )
            report.smoke_ok = smoke
    return report


# -------------------------------------------------------------------- commands


def _cmd_generate(args) -> int:
    data = generate(
        args.rounds, args.orders,
        comparison_fraction=args.comparison_fraction,
        seed=args.seed, settle_rounds=args.settle_rounds, budget=args.order_budget,
    )
    os.makedirs(args.out_dir, exist_ok=True)
    paths = {
        name: os.path.join(args.out_dir, f"{name}.{ext}")
        for name, ext in (
            ("model", "jsonl"), ("orders", "csv"),
            ("settlements", "csv"), ("outcome", "csv"),
        )
    }
    write_dataset(data, paths["model"], paths["orders"],
                  paths["settlements"], paths["outcome"])
    print(
        f"wrote k={args.rounds} dataset: {len(data.orders)} orders, "
        f"{len(data.settlements)} settlements -> {args.out_dir}"
    )
    return 0


def _budget_levels(text: str | None) -> list[tuple[str, float | None]]:
    if text is None:
        return [("", None)]
    levels = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        levels.append((token, float(token)))
    if not levels:
        raise ValueError("--budget has no levels")
    return levels


def _snapshot_path(base: str, token: str, multi: bool) -> str:
    if not multi:
        return base
    root, ext = os.path.splitext(base)
    return f"{root}_budget{token}{ext or '.csv'}"


def _cmd_run(args) -> int:
    model = MarketModel.load(args.model)
    orders = read_orders_csv(args.orders, model)
    settlements = read_settlements_csv(args.settlements, model)
    outcome = read_outcome_csv(args.outcome, model)
    levels = _budget_levels(args.budget)
    multi = len(levels) > 1
    for token, level in levels:
        config = RunConfig(
            treatment=args.treatment, liquidity=args.liquidity, budget=level,
            alpha=args.alpha, eps0=args.eps0, epsd=args.epsd,
            projection_cadence=args.cadence, projection_deadline=args.deadline_secs,
            seed=args.seed,
        )
        ledger, snapshots = run_market(model, orders, settlements, outcome, config)
        path = _snapshot_path(args.snapshots, token, multi)
        write_snapshots_csv(path, snapshots)
        label = f" budget={token}" if token else ""
        print(
            f"treatment={args.treatment}{label} orders={len(orders)} "
            f"trades={len(ledger.trades)} revenue={ledger.revenue:.6g} "
            f"payout={ledger.payout_total:.6g} loss={ledger.loss:.6g} "
            f"snapshots={len(snapshots)} -> {path}"
        )
    return 0


def _cmd_validate(args) -> int:
    model = MarketModel.load(args.model)
    report = validate_model(model)
    print(
        f"securities={report.n_securities} variables={report.n_variables} "
        f"ip_rows={report.n_ip_rows} lcmm_rows={report.n_lcmm_rows}"
    )
    if report.n_solutions is not None:
        print(
            f"outcomes={report.n_outcomes} solutions={report.n_solutions} "
            f"bijection={'ok' if report.bijection_ok else 'FAIL'} "
            f"lcmm_soundness={'ok' if report.lcmm_ok else 'FAIL'}"
        )
    else:
        print(
            f"outcomes={report.n_outcomes} (beyond exhaustive limit) "
            f"feasible={'yes' if report.feasible else 'NO'} "
            f"settle_smoke={'ok' if report.smoke_ok else 'FAIL'}"
        )
    if not report.feasible:
        print("infeasible; witness rows:", file=sys.stderr)
        for line in report.witness:
            print(f"  {line}", file=sys.stderr)
        return 2
    return 0 if report.ok else 2


def _cmd_project(args) -> int:
    model = MarketModel.load(args.model)
    rng = np.random.Generator(np.random.Philox(args.seed))
    prices = model.initial_prices.copy()
    if args.jitter > 0.0:
        prices = prices * np.exp(rng.normal(0.0, args.jitter, prices.shape))
    state = state_from_prices(model, prices, args.liquidity)
    sigma = PartialOutcome.empty(model.n_securities)
    before = divergence(model, price(model, state, sigma), state, sigma)
    res = project_fw(
        model, state, sigma, alpha=args.alpha, eps0=args.eps0, epsd=args.epsd,
        deadline_secs=args.deadline_secs,
    )
    print(
        f"status={res.status} iterations={res.iterations} "
        f"oracle_calls={res.oracle_calls} objective={res.objective} "
        f"gap={res.gap} profit_bound={res.profit_bound:.6g} "
        f"divergence_before={before:.6g}"
    )
    return 0


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--treatment", choices=TREATMENTS, default="fwmm")
    p.add_argument("--liquidity", type=float, default=150.0)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--eps0", type=float, default=0.5)
    p.add_argument("--epsd", type=float, default=1e-6)
    p.add_argument("--cadence", type=int, default=100)
    p.add_argument("--deadline-secs", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fwmarket",
        description="Combinatorial prediction market replay and tooling",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a seeded synthetic dataset")
    g.add_argument("--rounds", "-k", type=int, required=True)
    g.add_argument("--orders", type=int, required=True)
    g.add_argument("--comparison-fraction", type=float, default=0.17)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--settle-rounds", type=int, default=None,
                   help="settle only the first N rounds in the stream")
    g.add_argument("--order-budget", type=float, default=1.0,
                   help="budget column value written for every order")
    g.add_argument("--out-dir", default=".")
    g.set_defaults(func=_cmd_generate)

    r = sub.add_parser("run", help="replay a dataset under one treatment")
    r.add_argument("--model", required=True)
    r.add_argument("--orders", required=True)
    r.add_argument("--settlements", required=True)
    r.add_argument("--outcome", required=True)
    r.add_argument("--snapshots", required=True, help="snapshot CSV out path")
    r.add_argument("--budget", default=None,
                   help="override order budgets; comma list runs one sweep per level")
    _add_run_flags(r)
    r.set_defaults(func=_cmd_run)

    v = sub.add_parser("validate", help="certify a model file")
    v.add_argument("--model", required=True)
    v.set_defaults(func=_cmd_validate)

    d = sub.add_parser("project", help="one-shot projection on jittered prices")
    d.add_argument("--model", required=True)
    d.add_argument("--jitter", type=float, default=0.25,
                   help="log-normal price jitter before projecting")
    _add_run_flags(d)
    d.set_defaults(func=_cmd_project)
    return parser


def _configure_logging() -> None:
    level = os.environ.get("FWMM_LOG", "off").lower()
    mapping = {"off": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(
        stream=sys.stderr,
        level=mapping.get(level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ConsistencyError as exc:
        print(f"consistency violation: {exc}", file=sys.stderr)
        return 2
    except (FwmarketError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
