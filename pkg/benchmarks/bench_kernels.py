"""Time the compiled kernels against the numpy fallback.

Runs the four hot kernels (restricted cost, price vector, bundle price
along a trade direction, and the trade line search) on seeded bracket
models of two sizes, checks that both backends agree numerically, and
prints per-call timings with the speedup.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from fwmarket import kernels
from fwmarket import _kernels_py
from fwmarket.costs import PartialOutcome, state_from_prices
from fwmarket.generator import default_model
from fwmarket.lcmm import ETA_CAP, LINE_SEARCH_REL, LINE_SEARCH_STEPS, trade_directions

try:
    from fwmarket import _kernels
except ImportError:
    _kernels = None


def build_case(k: int, seed: int) -> dict:
    """A jittered book plus one tradeable line-search direction."""
    rng = np.random.Generator(np.random.Philox(seed))
    model = default_model(k, np.exp(rng.normal(0.0, 0.6, 2**k)))
    noise = np.exp(rng.normal(0.0, 0.4, model.n_securities))
    state = state_from_prices(model, model.initial_prices * noise, 1.0)
    sigma = PartialOutcome.empty(model.n_securities)
    case = {
        "label": f"k={k} ({model.n_securities} securities, "
                 f"{len(model.group_start) - 1} groups)",
        "model": model,
        "theta": state.theta,
        "b": state.b,
        "bits": sigma.bits,
        "out": np.empty(model.n_securities),
    }
    for d in trade_directions(model):
        start = _kernels_py.bundle_price_along(
            state.theta, d.dense, 0.0, state.b, model.group_start, sigma.bits,
            d.groups,
        )
        root = _kernels_py.root_bundle_eta(
            state.theta, d.dense, start + 0.05, state.b, model.group_start,
            sigma.bits, d.groups, ETA_CAP, LINE_SEARCH_STEPS, LINE_SEARCH_REL,
        )
        if root > 0.0:
            case["direction"] = d
            case["rhs"] = start + 0.05
            break
    else:
        raise RuntimeError("no direction admits a line search")
    return case


def kernel_calls(impl, case) -> dict:
    model, d = case["model"], case["direction"]
    args = (case["theta"], case["b"], model.group_start, case["bits"])
    return {
        "cost_value": lambda: impl.cost_value(*args),
        "prices_into": lambda: impl.prices_into(*args, case["out"]),
        "bundle_price_along": lambda: impl.bundle_price_along(
            case["theta"], d.dense, 0.7, case["b"], model.group_start,
            case["bits"], d.groups,
        ),
        "root_bundle_eta": lambda: impl.root_bundle_eta(
            case["theta"], d.dense, case["rhs"], case["b"], model.group_start,
            case["bits"], d.groups, ETA_CAP, LINE_SEARCH_STEPS, LINE_SEARCH_REL,
        ),
    }


def check_agreement(case) -> float:
    """Largest |compiled - numpy| over every kernel output."""
    worst = 0.0
    fast, slow = kernel_calls(_kernels, case), kernel_calls(_kernels_py, case)
    for name in ("cost_value", "bundle_price_along", "root_bundle_eta"):
        worst = max(worst, abs(fast[name]() - slow[name]()))
    fast["prices_into"]()
    a = case["out"].copy()
    slow["prices_into"]()
    worst = max(worst, float(np.abs(a - case["out"]).max()))
    return worst


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=2000,
                        help="calls per timing sample (default 2000)")
    args = parser.parse_args()

    print(f"active backend: {kernels.BACKEND}")
    if _kernels is None:
        print("compiled extension not built; timing the numpy fallback only")

    for k, seed in ((3, 11), (5, 12)):
        case = build_case(k, seed)
        print(f"\n{case['label']}")
        if _kernels is not None:
            print(f"  max |compiled - numpy|: {check_agreement(case):.3e}")
        header = f"  {'kernel':<20s} {'numpy':>12s}"
        if _kernels is not None:
            header += f" {'compiled':>12s} {'speedup':>9s}"
        print(header)
        slow = kernel_calls(_kernels_py, case)
        fast = kernel_calls(_kernels, case) if _kernels is not None else None
        for name, call in slow.items():
            n = args.repeat if name != "root_bundle_eta" else max(args.repeat // 10, 1)
            t_slow = min(timeit.repeat(call, number=n, repeat=3)) / n
            line = f"  {name:<20s} {t_slow * 1e6:>10.2f}us"
            if fast is not None:
                t_fast = min(timeit.repeat(fast[name], number=n, repeat=3)) / n
                line += f" {t_fast * 1e6:>10.2f}us {t_slow / t_fast:>8.1f}x"
            print(line)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
