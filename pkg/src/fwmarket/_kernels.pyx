# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the grouped LMSR cost surface.

Mirrors _kernels_py exactly; see that module for the contract.
"""

from libc.math cimport exp, log, INFINITY, NAN

import numpy as np
cimport numpy as cnp

cnp.import_array()


def cost_value(const double[::1] theta, double b, const long long[::1] group_start,
               const signed char[::1] settle):
    cdef double total = 0.0
    cdef Py_ssize_t g, i, lo, hi, won
    cdef int n_won, n_open
    cdef double m, s
    cdef Py_ssize_t n_groups = group_start.shape[0] - 1
    for g in range(n_groups):
        lo = group_start[g]
        hi = group_start[g + 1]
        n_won = 0
        won = -1
        for i in range(lo, hi):
            if settle[i] == 1:
                n_won += 1
                won = i
        if n_won > 1:
            return float("nan")
        if n_won == 1:
            total += theta[won]
            continue
        m = -INFINITY
        n_open = 0
        for i in range(lo, hi):
            if settle[i] == -1:
                n_open += 1
                if theta[i] > m:
                    m = theta[i]
        if n_open == 0:
            return float("nan")
        m = m / b
        s = 0.0
        for i in range(lo, hi):
            if settle[i] == -1:
                s += exp(theta[i] / b - m)
        total += b * (m + log(s))
    return total


def prices_into(const double[::1] theta, double b, const long long[::1] group_start,
                const signed char[::1] settle, double[::1] out):
    cdef Py_ssize_t g, i, lo, hi
    cdef double m, s, mass, scale
    cdef Py_ssize_t n_groups = group_start.shape[0] - 1
    for g in range(n_groups):
        lo = group_start[g]
        hi = group_start[g + 1]
        mass = 1.0
        m = -INFINITY
        for i in range(lo, hi):
            if settle[i] == -1:
                if theta[i] > m:
                    m = theta[i]
            else:
                out[i] = settle[i]
                if settle[i] == 1:
                    mass -= 1.0
        if m == -INFINITY:
            continue
        m = m / b
        s = 0.0
        for i in range(lo, hi):
            if settle[i] == -1:
                s += exp(theta[i] / b - m)
        scale = mass / s
        for i in range(lo, hi):
            if settle[i] == -1:
                out[i] = scale * exp(theta[i] / b - m)


cdef double _price_along(const double[::1] theta, const double[::1] direction,
                         double eta, double b, const long long[::1] group_start,
                         const signed char[::1] settle,
                         const long long[::1] groups) noexcept nogil:
    cdef double total = 0.0
    cdef Py_ssize_t k, g, i, lo, hi
    cdef double m, s, num, mass, x
    for k in range(groups.shape[0]):
        g = groups[k]
        lo = group_start[g]
        hi = group_start[g + 1]
        mass = 1.0
        m = -INFINITY
        for i in range(lo, hi):
            if settle[i] == -1:
                x = (theta[i] + eta * direction[i]) / b
                if x > m:
                    m = x
            else:
                total += direction[i] * settle[i]
                if settle[i] == 1:
                    mass -= 1.0
        if m == -INFINITY:
            continue
        s = 0.0
        num = 0.0
        for i in range(lo, hi):
            if settle[i] == -1:
                x = exp((theta[i] + eta * direction[i]) / b - m)
                s += x
                num += direction[i] * x
        total += mass * num / s
    return total


def bundle_price_along(const double[::1] theta, const double[::1] direction, double eta,
                       double b, const long long[::1] group_start,
                       const signed char[::1] settle, const long long[::1] groups):
    return _price_along(theta, direction, eta, b, group_start, settle, groups)


def root_bundle_eta(const double[::1] theta, const double[::1] direction, double rhs,
                    double b, const long long[::1] group_start,
                    const signed char[::1] settle, const long long[::1] groups,
                    double eta_cap, int max_steps, double rel_tol):
    cdef double hi = 1.0
    cdef double lo = 0.0
    cdef double mid, floor
    cdef int step
    while _price_along(theta, direction, hi, b, group_start, settle, groups) < rhs:
        hi *= 2.0
        if hi > eta_cap:
            return 0.0
    for step in range(max_steps):
        floor = lo if lo > 1.0 else 1.0
        if hi - lo <= rel_tol * floor:
            break
        mid = 0.5 * (lo + hi)
        if _price_along(theta, direction, mid, b, group_start, settle, groups) < rhs:
            lo = mid
        else:
            hi = mid
    return lo
