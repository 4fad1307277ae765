"""Pure-NumPy numerical core.

Mirrors the compiled ``_core`` extension function for function. Densities are
piecewise constant: ``values[j]`` is the density on
``[lo + j*step, lo + (j+1)*step)``, so every integral below is exact for that
model, including over cells whose bounds do not fall on grid edges.
"""

import numpy as np

STATUS_CONVERGED = 0
STATUS_MAX_ITER = 1
STATUS_EMPTY_CELL = 2


def cell_stats(values, lo, step, bounds):
    """Mass, conditional mean and conditional variance of cells ``[b_k, b_{k+1})``.

    Cells with zero mass get ``nan`` mean and zero variance.
    """
    values = np.asarray(values, dtype=np.float64)
    b = np.asarray(bounds, dtype=np.float64)
    n = values.shape[0]
    K = b.shape[0] - 1
    hi = lo + n * step
    bc = np.clip(b, lo, hi)
    edges = lo + step * np.arange(n + 1)
    pts = np.concatenate([edges, bc])
    pts.sort(kind="mergesort")
    x0 = pts[:-1]
    x1 = pts[1:]
    keep = x1 > x0
    x0 = x0[keep]
    x1 = x1[keep]
    mid = 0.5 * (x0 + x1)
    j = np.clip(np.floor((mid - lo) / step).astype(np.intp), 0, n - 1)
    # a piece belongs to the cell of its left end (robust for pieces narrower than an ulp of mid)
    k = np.searchsorted(bc, x0, side="right") - 1
    inside = (k >= 0) & (k < K)
    k = k[inside]
    j = j[inside]
    x0 = x0[inside]
    x1 = x1[inside]
    dens = values[j]
    y0 = x0 - bc[k]
    y1 = x1 - bc[k]
    m0 = np.bincount(k, dens * (x1 - x0), minlength=K)
    m1 = np.bincount(k, dens * (y1 * y1 - y0 * y0) * 0.5, minlength=K)
    mean = np.full(K, np.nan)
    var = np.zeros(K)
    pos = m0 > 0
    mu = np.zeros(K)
    mu[pos] = m1[pos] / m0[pos]
    # second pass about the cell mean avoids cancellation far from the cell edge
    z0 = y0 - mu[k]
    z1 = y1 - mu[k]
    m2 = np.bincount(k, dens * (z1 * z1 * z1 - z0 * z0 * z0) / 3.0, minlength=K)
    mean[pos] = bc[:-1][pos] + mu[pos]
    var[pos] = np.maximum(m2[pos] / m0[pos], 0.0)
    return m0, mean, var


def lloyd(values, lo, step, levels, tol, max_iter, record=False):
    """Alternate centroid and midpoint steps with the outer levels pinned.

    Returns ``(levels, points, distortion, iterations, status, info, history)``
    where ``info`` is the offending cell index for an empty-cell stop.
    """
    p = np.array(levels, dtype=np.float64)
    history = [] if record else None
    prev = np.inf
    c = None
    D = np.inf
    it = 0
    while it < max_iter:
        mass, mean, var = cell_stats(values, lo, step, p)
        empty = np.flatnonzero(mass <= 0.0)
        if empty.size:
            return p, mean, D, it, STATUS_EMPTY_CELL, int(empty[0]), history
        c = mean
        D = float(np.sum(mass * var))
        it += 1
        if record:
            history.append(D)
        if prev - D < tol:
            return p, c, D, it, STATUS_CONVERGED, -1, history
        prev = D
        p[1:-1] = 0.5 * (c[:-1] + c[1:])
    return p, c, D, it, STATUS_MAX_ITER, -1, history


def design(values, lo, step, cells, tol, max_iter):
    """Lloyd-Max from equal-probability levels; returns ``(levels, points, D, iters, status, info)``."""
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    init = np.empty(cells + 1)
    init[0] = lo
    init[cells] = lo + n * step
    if cells > 1:
        init[1:cells] = quantiles(values, lo, step, np.arange(1, cells) / cells)
    if cells == 1:
        mass, mean, var = cell_stats(values, lo, step, init)
        return init, mean, float(mass[0] * var[0]), 0, STATUS_CONVERGED, -1
    p, c, D, it, status, info, _ = lloyd(values, lo, step, init, tol, max_iter, False)
    return p, c, D, it, status, info


def cdf_edges(values, step):
    out = np.empty(values.shape[0] + 1)
    out[0] = 0.0
    np.cumsum(values * step, out=out[1:])
    return out


def cdf(values, lo, step, x):
    F = cdf_edges(values, step)
    edges = lo + step * np.arange(values.shape[0] + 1)
    return np.interp(x, edges, F)


def quantiles(values, lo, step, probs):
    """Inverse CDF of the piecewise-constant density (linear within a cell)."""
    F = cdf_edges(values, step)
    probs = np.asarray(probs, dtype=np.float64) * F[-1]
    n = values.shape[0]
    idx = np.clip(np.searchsorted(F, probs, side="left") - 1, 0, n - 1)
    dens = values[idx]
    base = lo + step * idx
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(dens > 0, (probs - F[idx]) / (dens * step), 0.0)
    return base + step * np.clip(frac, 0.0, 1.0)


def _snap(r):
    rr = np.round(r)
    return rr if abs(r - rr) < 1e-9 else r


def truncate(values, lo, step, a, b):
    """Restrict to ``[a, b)`` and renormalize; partial edge cells keep their fraction.

    Returns ``(values, lo, gamma)`` with ``gamma`` the pre-normalization mass.
    """
    n = values.shape[0]
    ra = _snap((a - lo) / step)
    rb = _snap((b - lo) / step)
    ra = min(max(ra, 0.0), float(n))
    rb = min(max(rb, 0.0), float(n))
    if rb <= ra:
        return np.empty(0), lo, 0.0
    i0 = int(np.floor(ra))
    i1 = int(np.ceil(rb))
    i0 = min(i0, n - 1)
    out = values[i0:i1].astype(np.float64, copy=True)
    if i1 - i0 == 1:
        out[0] *= rb - ra
    else:
        out[0] *= (i0 + 1) - ra
        out[-1] *= rb - (i1 - 1)
    gamma = float(out.sum() * step)
    if gamma <= 0.0:
        return out, lo + i0 * step, 0.0
    return out / gamma, lo + i0 * step, gamma


def rebin(values, lo, step, new_step):
    """Resample onto spacing ``new_step`` with the same left edge.

    New values are read off the log-linear interpolant through the old cell
    midpoints (nearest value next to a zero) and rescaled to the old mass.
    Sampling a concave log-interpolant keeps discrete log-concavity. Past
    the outer midpoints the interpolant is extended but never above the
    edge value; a new cell that only partly covers the old support is read
    at its nearest covered point and weighted by the covered fraction.
    """
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    m = max(int(np.ceil(n * step / new_step - 1e-9)), 1)
    out = np.zeros(m)
    pos = np.flatnonzero(values > 0)
    if pos.size == 0:
        return out
    i0, i1 = int(pos[0]), int(pos[-1])
    s0, s1 = i0 * step, (i1 + 1) * step
    c0 = np.arange(m) * new_step
    cover = np.minimum(c0 + new_step, s1) - np.maximum(c0, s0)
    hit = np.flatnonzero(cover > 0)
    x = np.clip(c0[hit] + 0.5 * new_step, s0, s1)
    if i1 == i0:
        val = np.full(hit.size, values[i0])
    else:
        r = x / step - 0.5
        j = np.clip(np.floor(r).astype(np.int64), i0, i1 - 1)
        f = r - j
        v0, v1 = values[j], values[j + 1]
        both = (v0 > 0) & (v1 > 0)
        with np.errstate(divide="ignore"):
            geo = np.exp((1.0 - f) * np.log(v0) + f * np.log(v1))
        val = np.where(both, geo, np.where(f <= 0.5, v0, v1))
        val = np.where(f < 0, np.minimum(val, v0), val)
        val = np.where(f > 1, np.minimum(val, v1), val)
    out[hit] = val * np.minimum(cover[hit] / new_step, 1.0)
    total = out.sum() * new_step
    if total > 0:
        out *= values.sum() * step / total
    return out


def downsample(values, factor):
    if factor <= 1:
        return values
    n = values.shape[0]
    m = -(-n // factor)
    pad = np.zeros(m * factor)
    pad[:n] = values
    return pad.reshape(m, factor).sum(axis=1) / factor


def clip_tails(values, step, tail):
    """Index range ``[i0, i1)`` dropping at most ``tail/2`` mass from each side."""
    n = values.shape[0]
    F = cdf_edges(values, step)
    total = F[-1]
    half = 0.5 * tail * total
    i0 = int(np.searchsorted(F, half, side="right")) - 1
    i1 = int(np.searchsorted(F, total - half, side="left"))
    i0 = min(max(i0, 0), n - 1)
    i1 = min(max(i1, i0 + 1), n)
    return i0, i1


def convolve(v1, lo1, v2, lo2, step, tail, max_points):
    """Density of X+Y for two grids sharing ``step``; tail-clipped and capped."""
    out = np.convolve(v1, v2) * step
    lo = lo1 + lo2 + 0.5 * step
    if tail > 0:
        i0, i1 = clip_tails(out, step, tail)
        out = out[i0:i1]
        lo = lo + i0 * step
    if max_points > 0 and out.shape[0] > max_points:
        factor = -(-out.shape[0] // max_points)
        out = downsample(out, factor)
        step = step * factor
    out = out / (out.sum() * step)
    return out, lo, step


def advance(values, lo, step, a, b, gain, shift, w_values, w_lo, w_step, tail, max_points):
    """One belief update: truncate to ``[a, b)``, map ``x -> gain*x + shift``,
    then (if ``w_values`` is given) convolve with the disturbance density.

    Returns ``(values, lo, step, gamma)``.
    """
    post, plo, gamma = truncate(values, lo, step, a, b)
    if gamma <= 0.0:
        return post, plo, step, 0.0
    g = abs(gain)
    nstep = g * step
    if gain > 0:
        nlo = gain * plo + shift
        nvals = post / g
    else:
        nlo = gain * (plo + post.shape[0] * step) + shift
        nvals = post[::-1] / g
    if w_values is None:
        return nvals, nlo, nstep, gamma
    if abs(nstep - w_step) > 1e-12 * w_step:
        nvals = rebin(nvals, nlo, nstep, w_step)
    out, olo, ostep = convolve(nvals, nlo, w_values, w_lo, w_step, tail, max_points)
    return out, olo, ostep, gamma
