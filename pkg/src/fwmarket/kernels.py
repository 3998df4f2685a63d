"""Kernel backend selection: compiled extension if built, numpy otherwise."""

from __future__ import annotations

try:
    from . import _kernels as _impl

    HAVE_COMPILED = True
except ImportError:
    from . import _kernels_py as _impl

    HAVE_COMPILED = False

cost_value = _impl.cost_value
prices_into = _impl.prices_into
bundle_price_along = _impl.bundle_price_along
root_bundle_eta = _impl.root_bundle_eta

BACKEND = "compiled" if HAVE_COMPILED else "numpy"
