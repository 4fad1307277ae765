# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled numerical core; same contract as :mod:`quantctl._pycore`."""

import numpy as np
from libc.math cimport floor, ceil, fabs, exp, log, round as cround, INFINITY, NAN

from quantctl._pycore import cdf_edges, cdf, quantiles, downsample

STATUS_CONVERGED = 0
STATUS_MAX_ITER = 1
STATUS_EMPTY_CELL = 2


cdef void _stats(const double[::1] v, double lo, double h, const double[::1] b,
                 double[::1] mass, double[::1] mean, double[::1] var) noexcept nogil:
    # two passes per cell: mass and mean, then the variance about that mean
    cdef Py_ssize_t n = v.shape[0]
    cdef Py_ssize_t K = b.shape[0] - 1
    cdef Py_ssize_t k, j, j0
    cdef double hi = lo + n * h
    cdef double a, bb, e0, x0, x1, y0, y1, d, m0, m1, m2, mu
    for k in range(K):
        a = b[k]
        bb = b[k + 1]
        if a < lo:
            a = lo
        if a > hi:
            a = hi
        if bb > hi:
            bb = hi
        m0 = 0.0
        m1 = 0.0
        m2 = 0.0
        j0 = 0
        if bb > a:
            j0 = <Py_ssize_t>floor((a - lo) / h)
            if j0 < 0:
                j0 = 0
            j = j0
            while j < n:
                e0 = lo + j * h
                if e0 >= bb:
                    break
                x0 = e0 if e0 > a else a
                x1 = lo + (j + 1) * h
                if x1 > bb:
                    x1 = bb
                if x1 > x0:
                    d = v[j]
                    y0 = x0 - a
                    y1 = x1 - a
                    m0 += d * (x1 - x0)
                    m1 += d * (y1 * y1 - y0 * y0) * 0.5
                j += 1
        mass[k] = m0
        if m0 > 0.0:
            mu = m1 / m0
            j = j0
            while j < n:
                e0 = lo + j * h
                if e0 >= bb:
                    break
                x0 = e0 if e0 > a else a
                x1 = lo + (j + 1) * h
                if x1 > bb:
                    x1 = bb
                if x1 > x0:
                    y0 = x0 - a - mu
                    y1 = x1 - a - mu
                    m2 += v[j] * (y1 * y1 * y1 - y0 * y0 * y0) / 3.0
                j += 1
            mean[k] = a + mu
            var[k] = m2 / m0
            if var[k] < 0.0:
                var[k] = 0.0
        else:
            mean[k] = NAN
            var[k] = 0.0


def cell_stats(values, double lo, double step, bounds):
    cdef const double[::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef const double[::1] b = np.ascontiguousarray(bounds, dtype=np.float64)
    K = b.shape[0] - 1
    mass = np.empty(K)
    mean = np.empty(K)
    var = np.empty(K)
    _stats(v, lo, step, b, mass, mean, var)
    return mass, mean, var


def lloyd(values, double lo, double step, levels, double tol, Py_ssize_t max_iter, bint record=False):
    cdef const double[::1] v = np.ascontiguousarray(values, dtype=np.float64)
    p_arr = np.array(levels, dtype=np.float64)
    cdef double[::1] p = p_arr
    cdef Py_ssize_t K = p.shape[0] - 1
    mass_arr = np.empty(K)
    mean_arr = np.empty(K)
    var_arr = np.empty(K)
    cdef double[::1] mass = mass_arr
    cdef double[::1] mean = mean_arr
    cdef double[::1] var = var_arr
    cdef double prev = INFINITY
    cdef double D = INFINITY
    cdef Py_ssize_t it = 0, k
    cdef int status = STATUS_MAX_ITER
    cdef Py_ssize_t info = -1
    history = [] if record else None
    while it < max_iter:
        _stats(v, lo, step, p, mass, mean, var)
        for k in range(K):
            if mass[k] <= 0.0:
                info = k
                break
        if info >= 0:
            return p_arr, mean_arr, D, it, STATUS_EMPTY_CELL, info, history
        D = 0.0
        for k in range(K):
            D += mass[k] * var[k]
        it += 1
        if record:
            history.append(D)
        if prev - D < tol:
            status = STATUS_CONVERGED
            break
        prev = D
        for k in range(1, K):
            p[k] = 0.5 * (mean[k - 1] + mean[k])
    return p_arr, mean_arr, D, it, status, info, history


def design(values, double lo, double step, Py_ssize_t cells, double tol, Py_ssize_t max_iter):
    """Lloyd-Max from equal-probability levels; returns ``(levels, points, D, iters, status, info)``."""
    cdef const double[::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t n = v.shape[0], j = 0, k
    cdef double total = 0.0, cum = 0.0, target, cell
    for k in range(n):
        total += v[k] * step
    init_arr = np.empty(cells + 1)
    cdef double[::1] init = init_arr
    init[0] = lo
    init[cells] = lo + n * step
    for k in range(1, cells):
        target = total * k / cells
        while j < n - 1 and cum + v[j] * step < target:
            cum += v[j] * step
            j += 1
        cell = v[j] * step
        if cell > 0.0:
            init[k] = lo + step * (j + min(max((target - cum) / cell, 0.0), 1.0))
        else:
            init[k] = lo + step * j
    if cells == 1:
        mass, mean, var = cell_stats(values, lo, step, init_arr)
        return init_arr, mean, float(mass[0] * var[0]), 0, STATUS_CONVERGED, -1
    return _prefix_lloyd(v, lo, step, init_arr, tol, max_iter)


cdef inline void _moments_at(const double[::1] v, const double[::1] P0, const double[::1] P1,
                             const double[::1] P2, double step, double y,
                             double* m0, double* m1, double* m2) noexcept nogil:
    # cumulative moments of the density over [lo, lo + y], in coordinates relative to lo
    cdef Py_ssize_t n = v.shape[0]
    cdef Py_ssize_t j = <Py_ssize_t>floor(y / step)
    cdef double e, d
    if j < 0:
        m0[0] = 0.0
        m1[0] = 0.0
        m2[0] = 0.0
        return
    if j >= n:
        m0[0] = P0[n]
        m1[0] = P1[n]
        m2[0] = P2[n]
        return
    e = j * step
    d = v[j]
    m0[0] = P0[j] + d * (y - e)
    m1[0] = P1[j] + d * (y * y - e * e) * 0.5
    m2[0] = P2[j] + d * (y * y * y - e * e * e) / 3.0


def _prefix_lloyd(const double[::1] v, double lo, double step, p_arr, double tol, Py_ssize_t max_iter):
    # Lloyd-Max with O(K) cell statistics from prefix moments; used for the
    # many small designs of the Monte Carlo driver
    cdef Py_ssize_t n = v.shape[0], K = p_arr.shape[0] - 1, j, k, it = 0
    cdef double[::1] p = p_arr
    P0a = np.empty(n + 1)
    P1a = np.empty(n + 1)
    P2a = np.empty(n + 1)
    cdef double[::1] P0 = P0a
    cdef double[::1] P1 = P1a
    cdef double[::1] P2 = P2a
    cdef double e0, e1
    P0[0] = 0.0
    P1[0] = 0.0
    P2[0] = 0.0
    for j in range(n):
        e0 = j * step
        e1 = (j + 1) * step
        P0[j + 1] = P0[j] + v[j] * step
        P1[j + 1] = P1[j] + v[j] * (e1 * e1 - e0 * e0) * 0.5
        P2[j + 1] = P2[j] + v[j] * (e1 * e1 * e1 - e0 * e0 * e0) / 3.0
    c_arr = np.empty(K)
    cdef double[::1] c = c_arr
    cdef double a0, a1, a2, b0, b1, b2, m, mu, D = INFINITY, prev = INFINITY, var
    cdef int status = STATUS_MAX_ITER
    while it < max_iter:
        D = 0.0
        _moments_at(v, P0, P1, P2, step, p[0] - lo, &a0, &a1, &a2)
        for k in range(K):
            _moments_at(v, P0, P1, P2, step, p[k + 1] - lo, &b0, &b1, &b2)
            m = b0 - a0
            if m <= 0.0:
                return p_arr, c_arr, D, it, STATUS_EMPTY_CELL, k
            mu = (b1 - a1) / m
            var = (b2 - a2) / m - mu * mu
            if var < 0.0:
                var = 0.0
            c[k] = lo + mu
            D += m * var
            a0 = b0
            a1 = b1
            a2 = b2
        it += 1
        if prev - D < tol:
            status = STATUS_CONVERGED
            break
        prev = D
        for k in range(1, K):
            p[k] = 0.5 * (c[k - 1] + c[k])
    return p_arr, c_arr, D, it, status, -1


cdef double _snap(double r) noexcept nogil:
    cdef double rr = cround(r)
    if fabs(r - rr) < 1e-9:
        return rr
    return r


def truncate(values, double lo, double step, double a, double b):
    cdef const double[::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t n = v.shape[0]
    cdef double ra = _snap((a - lo) / step)
    cdef double rb = _snap((b - lo) / step)
    cdef Py_ssize_t i0, i1, j
    cdef double gamma = 0.0
    ra = min(max(ra, 0.0), <double>n)
    rb = min(max(rb, 0.0), <double>n)
    if rb <= ra:
        return np.empty(0), lo, 0.0
    i0 = <Py_ssize_t>floor(ra)
    i1 = <Py_ssize_t>ceil(rb)
    if i0 > n - 1:
        i0 = n - 1
    out_arr = np.empty(i1 - i0)
    cdef double[::1] out = out_arr
    for j in range(i1 - i0):
        out[j] = v[i0 + j]
    if i1 - i0 == 1:
        out[0] *= rb - ra
    else:
        out[0] *= (i0 + 1) - ra
        out[i1 - i0 - 1] *= rb - (i1 - 1)
    for j in range(i1 - i0):
        gamma += out[j]
    gamma *= step
    if gamma <= 0.0:
        return out_arr, lo + i0 * step, 0.0
    for j in range(i1 - i0):
        out[j] /= gamma
    return out_arr, lo + i0 * step, gamma


cdef Py_ssize_t _rebin(const double[::1] v, double step, double new_step, double[::1] out) noexcept nogil:
    # log-linear interpolation through old midpoints, rescaled to the old mass;
    # out must hold ceil(n*step/new_step) entries; returns the count written
    cdef Py_ssize_t n = v.shape[0]
    cdef Py_ssize_t m = <Py_ssize_t>ceil(n * step / new_step - 1e-9)
    cdef Py_ssize_t i, j, i0 = -1, i1 = -1
    cdef double x, r, f, v0, v1, val, s0, s1, c0, cover, total = 0.0, mass = 0.0
    if m < 1:
        m = 1
    for i in range(n):
        mass += v[i]
        if v[i] > 0:
            if i0 < 0:
                i0 = i
            i1 = i
    for i in range(m):
        out[i] = 0.0
    if i0 < 0:
        return m
    s0 = i0 * step
    s1 = (i1 + 1) * step
    for i in range(m):
        c0 = i * new_step
        cover = min(c0 + new_step, s1) - max(c0, s0)
        if cover <= 0:
            continue
        x = min(max(c0 + 0.5 * new_step, s0), s1)
        if i1 == i0:
            val = v[i0]
        else:
            r = x / step - 0.5
            j = <Py_ssize_t>floor(r)
            if j < i0:
                j = i0
            elif j > i1 - 1:
                j = i1 - 1
            f = r - j
            v0 = v[j]
            v1 = v[j + 1]
            if v0 > 0 and v1 > 0:
                val = exp((1.0 - f) * log(v0) + f * log(v1))
            elif f <= 0.5:
                val = v0
            else:
                val = v1
            if f < 0 and val > v0:
                val = v0
            elif f > 1 and val > v1:
                val = v1
        out[i] = val * min(cover / new_step, 1.0)
    for i in range(m):
        total += out[i]
    total *= new_step
    if total > 0:
        mass = mass * step / total
        for i in range(m):
            out[i] *= mass
    return m


def rebin(values, double lo, double step, double new_step):
    cdef const double[::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t m = <Py_ssize_t>ceil(v.shape[0] * step / new_step - 1e-9)
    if m < 1:
        m = 1
    out = np.empty(m)
    _rebin(v, step, new_step, out)
    return out


cdef void _conv(const double[::1] a, const double[::1] b, double scale, double[::1] out) noexcept nogil:
    cdef Py_ssize_t na = a.shape[0], nb = b.shape[0], i, j
    cdef double ai
    for i in range(na + nb - 1):
        out[i] = 0.0
    for i in range(na):
        ai = a[i] * scale
        if ai == 0.0:
            continue
        for j in range(nb):
            out[i + j] += ai * b[j]


cdef void _clip(const double[::1] v, double step, double tail, Py_ssize_t* i0, Py_ssize_t* i1) noexcept nogil:
    cdef Py_ssize_t n = v.shape[0], j
    cdef double total = 0.0, half, cum
    for j in range(n):
        total += v[j] * step
    half = 0.5 * tail * total
    cum = 0.0
    j = 0
    while j < n and cum + v[j] * step <= half:
        cum += v[j] * step
        j += 1
    if j > n - 1:
        j = n - 1
    i0[0] = j
    cum = 0.0
    j = n
    while j > i0[0] + 1 and cum + v[j - 1] * step <= half:
        cum += v[j - 1] * step
        j -= 1
    i1[0] = j


def clip_tails(values, double step, double tail):
    cdef const double[::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t i0, i1
    _clip(v, step, tail, &i0, &i1)
    return i0, i1


def convolve(v1, double lo1, v2, double lo2, double step, double tail, Py_ssize_t max_points):
    cdef const double[::1] a = np.ascontiguousarray(v1, dtype=np.float64)
    cdef const double[::1] b = np.ascontiguousarray(v2, dtype=np.float64)
    full = np.empty(a.shape[0] + b.shape[0] - 1)
    _conv(a, b, step, full)
    return _finish(full, lo1 + lo2 + 0.5 * step, step, tail, max_points)


cdef tuple _finish(full, double lo, double step, double tail, Py_ssize_t max_points):
    cdef Py_ssize_t i0 = 0, i1 = full.shape[0], factor
    cdef double[::1] fv = full
    if tail > 0:
        _clip(fv, step, tail, &i0, &i1)
    out = full[i0:i1]
    lo = lo + i0 * step
    if max_points > 0 and out.shape[0] > max_points:
        factor = -(-out.shape[0] // max_points)
        out = downsample(out, factor)
        step = step * factor
    cdef double[::1] ov = out
    cdef double s = 0.0
    cdef Py_ssize_t j
    for j in range(ov.shape[0]):
        s += ov[j]
    s *= step
    for j in range(ov.shape[0]):
        ov[j] /= s
    return out, lo, step


def advance(values, double lo, double step, double a, double b, double gain, double shift,
            w_values, double w_lo, double w_step, double tail, Py_ssize_t max_points):
    post_arr, plo, gamma = truncate(values, lo, step, a, b)
    if gamma <= 0.0:
        return post_arr, plo, step, 0.0
    cdef double[::1] post = post_arr
    cdef Py_ssize_t n = post.shape[0], j, m
    cdef double g = fabs(gain)
    cdef double nstep = g * step
    cdef double nlo
    nv_arr = np.empty(n)
    cdef double[::1] nv = nv_arr
    if gain > 0:
        nlo = gain * plo + shift
        for j in range(n):
            nv[j] = post[j] / g
    else:
        nlo = gain * (plo + n * step) + shift
        for j in range(n):
            nv[j] = post[n - 1 - j] / g
    if w_values is None:
        return nv_arr, nlo, nstep, gamma
    if fabs(nstep - w_step) > 1e-12 * w_step:
        m = <Py_ssize_t>ceil(n * nstep / w_step - 1e-9)
        if m < 1:
            m = 1
        rb_arr = np.empty(m)
        _rebin(nv, nstep, w_step, rb_arr)
        nv_arr = rb_arr
    cdef const double[::1] src = nv_arr
    cdef const double[::1] w = np.ascontiguousarray(w_values, dtype=np.float64)
    full = np.empty(src.shape[0] + w.shape[0] - 1)
    _conv(src, w, w_step, full)
    out, olo, ostep = _finish(full, nlo + w_lo + 0.5 * w_step, w_step, tail, max_points)
    return out, olo, ostep, gamma
