"""Hot numeric kernels, each with a numba and a pure-numpy implementation.

Dispatch is decided once at import by :mod:`speccal.backend`. Within one
backend every kernel is deterministic (parallel loops write disjoint
slices; reductions have a fixed order). Across backends results agree to
floating-point summation order; `benchmarks/bench_kernels.py` compares
speed of the two paths.

Shapes follow the NCHW convention; convolutions are 3x3, stride 1,
zero-padded 'same'; pooling is 2x2 non-overlapping.
"""

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .backend import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# numba path


@njit(cache=True)
def _pad1(x):
    N, C, H, W = x.shape
    xp = np.zeros((N, C, H + 2, W + 2))
    xp[:, :, 1 : H + 1, 1 : W + 1] = x
    return xp


@njit(cache=True, fastmath=True)
def _conv2d_fwd_nb(x, w, b):
    # per-tap row updates keep the inner j loop contiguous and SIMD-friendly
    xp = _pad1(x)
    N, C, H, W = x.shape
    F = w.shape[0]
    y = np.empty((N, F, H, W))
    for n in range(N):
        for f in range(F):
            for i in range(H):
                for j in range(W):
                    y[n, f, i, j] = b[f]
            for c in range(C):
                for u in range(3):
                    for v in range(3):
                        wv = w[f, c, u, v]
                        for i in range(H):
                            for j in range(W):
                                y[n, f, i, j] += xp[n, c, i + u, j + v] * wv
    return y


@njit(cache=True, fastmath=True)
def _conv2d_bwd_nb(x, w, gy):
    xp = _pad1(x)
    N, C, H, W = x.shape
    F = w.shape[0]
    gw = np.zeros((F, C, 3, 3))
    gb = np.zeros(F)
    # one pass over (n, i): the 9*C*F row dots all hit L1-resident gw
    for n in range(N):
        for i in range(H):
            for f in range(F):
                s = 0.0
                for j in range(W):
                    s += gy[n, f, i, j]
                gb[f] += s
            for c in range(C):
                for u in range(3):
                    for v in range(3):
                        for f in range(F):
                            s = 0.0
                            for j in range(W):
                                s += xp[n, c, i + u, j + v] * gy[n, f, i, j]
                            gw[f, c, u, v] += s
    gxp = np.zeros((N, C, H + 2, W + 2))
    for n in range(N):
        for f in range(F):
            for c in range(C):
                for u in range(3):
                    for v in range(3):
                        wv = w[f, c, u, v]
                        for i in range(H):
                            for j in range(W):
                                gxp[n, c, i + u, j + v] += gy[n, f, i, j] * wv
    gx = np.ascontiguousarray(gxp[:, :, 1 : H + 1, 1 : W + 1])
    return gx, gw, gb


@njit(cache=True)
def _maxpool2_fwd_nb(x):
    N, C, H, W = x.shape
    Hh, Wh = H // 2, W // 2
    y = np.empty((N, C, Hh, Wh))
    arg = np.empty((N, C, Hh, Wh), dtype=np.int8)
    for n in range(N):
        for c in range(C):
            for i in range(Hh):
                for j in range(Wh):
                    best = x[n, c, 2 * i, 2 * j]
                    a = 0
                    k = 1
                    for u in range(2):
                        for v in range(2):
                            if u == 0 and v == 0:
                                continue
                            val = x[n, c, 2 * i + u, 2 * j + v]
                            idx = 2 * u + v
                            if val > best:
                                best = val
                                a = idx
                            k += 1
                    y[n, c, i, j] = best
                    arg[n, c, i, j] = a
    return y, arg


@njit(cache=True)
def _maxpool2_bwd_nb(gy, arg, H, W):
    N, C, Hh, Wh = gy.shape
    gx = np.zeros((N, C, H, W))
    for n in range(N):
        for c in range(C):
            for i in range(Hh):
                for j in range(Wh):
                    a = arg[n, c, i, j]
                    gx[n, c, 2 * i + a // 2, 2 * j + a % 2] = gy[n, c, i, j]
    return gx


@njit(cache=True)
def _taper_sinc(d, hw):
    if abs(d) >= hw:
        return 0.0
    if d == 0.0:
        s = 1.0
    else:
        s = math.sin(math.pi * d) / (math.pi * d)
    return s * math.cos(math.pi * d / (2.0 * hw))


@njit(cache=True)
def _render_peaks_nb(rbin, abin, power, H, W, halfwidth):
    grid = np.zeros((H, W))
    for s in range(rbin.shape[0]):
        r0 = rbin[s]
        a0 = abin[s]
        p = power[s]
        ilo = max(0, int(math.ceil(r0 - halfwidth)))
        ihi = min(H - 1, int(math.floor(r0 + halfwidth)))
        jlo = max(0, int(math.ceil(a0 - halfwidth)))
        jhi = min(W - 1, int(math.floor(a0 + halfwidth)))
        for i in range(ilo, ihi + 1):
            wr = _taper_sinc(i - r0, halfwidth)
            pr = p * wr * wr
            if pr == 0.0:
                continue
            for j in range(jlo, jhi + 1):
                wa = _taper_sinc(j - a0, halfwidth)
                grid[i, j] += pr * wa * wa
    return grid


@njit(cache=True)
def _imax_apply_nb(z, boundaries, reps):
    n, k = z.shape
    nb = boundaries.shape[1]
    out = np.empty((n, k))
    ok = True
    for i in range(n):
        # two largest logits give max over "all classes but k" in O(K)
        m1 = -np.inf
        m2 = -np.inf
        a1 = 0
        for j in range(k):
            v = z[i, j]
            if not np.isfinite(v):
                ok = False
            if v > m1:
                m2 = m1
                m1 = v
                a1 = j
            elif v > m2:
                m2 = v
        total = 0.0
        for cls in range(k):
            mnk = m2 if cls == a1 else m1
            acc = 0.0
            for j in range(k):
                if j != cls:
                    acc += math.exp(z[i, j] - mnk)
            s = z[i, cls] - (mnk + math.log(acc))
            b = 0
            while b < nb and boundaries[cls, b] < s:
                b += 1
            rep = reps[cls, b]
            out[i, cls] = rep
            total += rep
        for cls in range(k):
            out[i, cls] /= total
    return out, ok


def _imax_apply_np(z, boundaries, reps):
    n, k = z.shape
    ok = bool(np.all(np.isfinite(z)))
    order = np.argsort(z, axis=1)
    m1 = z[np.arange(n), order[:, -1]]
    m2 = z[np.arange(n), order[:, -2]]
    mnk = np.where(np.arange(k)[None, :] == order[:, -1:], m2[:, None], m1[:, None])
    expz = np.exp(z[:, None, :] - mnk[:, :, None])  # (N, cls, j)
    rest = expz.sum(axis=2) - np.take_along_axis(expz, np.arange(k)[None, :, None], axis=2)[:, :, 0]
    s = z - (mnk + np.log(rest))
    out = np.empty_like(z)
    for cls in range(k):
        idx = np.searchsorted(boundaries[cls], s[:, cls], side="left")
        out[:, cls] = reps[cls][idx]
    return out / out.sum(axis=1, keepdims=True), ok


def imax_apply(z, boundaries, reps):
    """Binned-calibration apply: per-class one-vs-rest log-odds -> bin
    representative -> renormalize. boundaries (K, B-1), reps (K, B).
    Returns (probs, all_inputs_finite)."""
    if USE_NUMBA:
        return _imax_apply_nb(_c(z), _c(boundaries), _c(reps))
    return _imax_apply_np(_c(z), _c(boundaries), _c(reps))


@njit(cache=True)
def _binning_dp_nb(cum_tot, cum_pos, num_bins, n, n_pos):
    m = cum_tot.shape[0] - 1
    neg_marg = n - n_pos
    log_n = math.log(n)
    log_pos_m = math.log(n_pos)
    log_neg_m = math.log(neg_marg)

    best = np.full((num_bins + 1, m + 1), -np.inf)
    parent = np.zeros((num_bins + 1, m + 1), dtype=np.int64)
    best[0, 0] = 0.0
    for b in range(1, num_bins + 1):
        j_hi = m - (num_bins - b)
        for j in range(b, j_hi + 1):
            bv = -np.inf
            ba = b - 1
            for a in range(b - 1, j):
                prev = best[b - 1, a]
                if prev == -np.inf:
                    continue
                tot = cum_tot[j] - cum_tot[a]
                pos = cum_pos[j] - cum_pos[a]
                neg = tot - pos
                term = 0.0
                if pos > 0.0:
                    term += (pos / n) * (math.log(pos) - math.log(tot) - log_pos_m + log_n)
                if neg > 0.0:
                    term += (neg / n) * (math.log(neg) - math.log(tot) - log_neg_m + log_n)
                v = prev + term
                if v > bv:
                    bv = v
                    ba = a
            best[b, j] = bv
            parent[b, j] = ba
    cuts = np.empty(num_bins - 1, dtype=np.int64)
    j = m
    for b in range(num_bins, 1, -1):
        j = parent[b, j]
        cuts[b - 2] = j
    return cuts, best[num_bins, m]


def _binning_dp_np(cum_tot, cum_pos, num_bins, n, n_pos):
    m = cum_tot.shape[0] - 1
    neg_marg = n - n_pos
    log_n = math.log(n)

    def terms(a_idx, j):
        tot = cum_tot[j] - cum_tot[a_idx]
        pos = cum_pos[j] - cum_pos[a_idx]
        neg = tot - pos
        out = np.zeros_like(tot, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            mask = pos > 0
            out[mask] += (pos[mask] / n) * (np.log(pos[mask]) - np.log(tot[mask])
                                            - math.log(n_pos) + log_n)
            mask = neg > 0
            out[mask] += (neg[mask] / n) * (np.log(neg[mask]) - np.log(tot[mask])
                                            - math.log(neg_marg) + log_n)
        return out

    best = np.full((num_bins + 1, m + 1), -np.inf)
    parent = np.zeros((num_bins + 1, m + 1), dtype=np.int64)
    best[0, 0] = 0.0
    for b in range(1, num_bins + 1):
        j_hi = m - (num_bins - b)
        for j in range(b, j_hi + 1):
            a_idx = np.arange(b - 1, j)
            vals = best[b - 1, a_idx] + terms(a_idx, j)
            k = int(np.argmax(vals))
            best[b, j] = vals[k]
            parent[b, j] = a_idx[k]
    cuts = np.empty(num_bins - 1, dtype=np.int64)
    j = m
    for b in range(num_bins, 1, -1):
        j = parent[b, j]
        cuts[b - 2] = j
    return cuts, best[num_bins, m]


@njit(cache=True)
def _interp_monotone_nb(t, V, x):
    S, G = V.shape
    M = x.shape[0]
    out = np.empty((S, M))
    for s in range(S):
        for m in range(M):
            xv = x[m]
            if xv <= t[0]:
                out[s, m] = V[s, 0] + (xv - t[0])
            elif xv >= t[G - 1]:
                out[s, m] = V[s, G - 1] + (xv - t[G - 1])
            else:
                lo = 0
                hi = G - 1
                while hi - lo > 1:
                    mid = (lo + hi) // 2
                    if t[mid] <= xv:
                        lo = mid
                    else:
                        hi = mid
                frac = (xv - t[lo]) / (t[hi] - t[lo])
                out[s, m] = V[s, lo] * (1.0 - frac) + V[s, hi] * frac
    return out


# ---------------------------------------------------------------------------
# numpy path


def _conv2d_fwd_np(x, w, b):
    N, C, H, W = x.shape
    F = w.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))
    col = win.transpose(0, 2, 3, 1, 4, 5).reshape(N * H * W, C * 9)
    y = col @ w.reshape(F, C * 9).T + b
    return np.ascontiguousarray(y.reshape(N, H, W, F).transpose(0, 3, 1, 2))


def _conv2d_bwd_np(x, w, gy):
    N, C, H, W = x.shape
    F = w.shape[0]
    gb = gy.sum(axis=(0, 2, 3))
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))
    col = win.transpose(0, 2, 3, 1, 4, 5).reshape(N * H * W, C * 9)
    gym = gy.transpose(0, 2, 3, 1).reshape(N * H * W, F)
    gw = (col.T @ gym).T.reshape(F, C, 3, 3)
    # gradient w.r.t. input = 'same' conv of gy with the flipped, transposed filters
    wt = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    gx = _conv2d_fwd_np(gy, wt, np.zeros(C))
    return gx, gw, gb


def _maxpool2_fwd_np(x):
    N, C, H, W = x.shape
    xr = x.reshape(N, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    flat = xr.reshape(N, C, H // 2, W // 2, 4)
    arg = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return y, arg.astype(np.int8)


def _maxpool2_bwd_np(gy, arg, H, W):
    N, C, Hh, Wh = gy.shape
    gxr = np.zeros((N, C, Hh, Wh, 4))
    np.put_along_axis(gxr, arg[..., None].astype(np.int64), gy[..., None], axis=-1)
    return gxr.reshape(N, C, Hh, Wh, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H, W)


def _taper_sinc_np(d, hw):
    out = np.sinc(d) * np.cos(np.pi * d / (2.0 * hw))
    out[np.abs(d) >= hw] = 0.0
    return out


def _render_peaks_np(rbin, abin, power, H, W, halfwidth):
    wr = _taper_sinc_np(np.arange(H)[None, :] - rbin[:, None], halfwidth)
    wa = _taper_sinc_np(np.arange(W)[None, :] - abin[:, None], halfwidth)
    return np.einsum("sh,sw->hw", power[:, None] * wr * wr, wa * wa)


def _interp_monotone_np(t, V, x):
    out = np.empty((V.shape[0], x.shape[0]))
    for s in range(V.shape[0]):
        out[s] = np.interp(x, t, V[s])
    lo = x < t[0]
    hi = x > t[-1]
    if lo.any():
        out[:, lo] = V[:, :1] + (x[lo] - t[0])
    if hi.any():
        out[:, hi] = V[:, -1:] + (x[hi] - t[-1])
    return out


# ---------------------------------------------------------------------------
# dispatch

_F64 = np.float64


def _c(a):
    return np.ascontiguousarray(a, dtype=_F64)


def conv2d_fwd(x, w, b):
    """3x3 same-padding convolution; x (N,C,H,W), w (F,C,3,3), b (F)."""
    if USE_NUMBA:
        return _conv2d_fwd_nb(_c(x), _c(w), _c(b))
    return _conv2d_fwd_np(_c(x), _c(w), _c(b))


def conv2d_bwd(x, w, gy):
    """Gradients (gx, gw, gb) of conv2d_fwd given upstream gy."""
    if USE_NUMBA:
        return _conv2d_bwd_nb(_c(x), _c(w), _c(gy))
    return _conv2d_bwd_np(_c(x), _c(w), _c(gy))


def maxpool2_fwd(x):
    """2x2 max pooling; returns (pooled, argmax-in-window). Ties pick the
    lowest window index so backprop routing is deterministic."""
    if USE_NUMBA:
        return _maxpool2_fwd_nb(_c(x))
    return _maxpool2_fwd_np(_c(x))


def maxpool2_bwd(gy, arg, H, W):
    if USE_NUMBA:
        return _maxpool2_bwd_nb(_c(gy), np.ascontiguousarray(arg, dtype=np.int8), H, W)
    return _maxpool2_bwd_np(_c(gy), arg, H, W)


def render_peaks(rbin, abin, power, H, W, halfwidth=3.0):
    """Sum of separable tapered-sinc power responses on an HxW grid.

    Each point source s sits at fractional (rbin[s], abin[s]) with linear
    power power[s]; the response is zero beyond `halfwidth` bins.
    """
    if USE_NUMBA:
        return _render_peaks_nb(_c(rbin), _c(abin), _c(power), H, W, float(halfwidth))
    return _render_peaks_np(_c(rbin), _c(abin), _c(power), H, W, float(halfwidth))


def interp_monotone(knots, values, x):
    """Piecewise-linear interpolation of each row of `values` (S,G) at
    points x (M,), with slope-1 affine extension outside the knot span."""
    if USE_NUMBA:
        return _interp_monotone_nb(_c(knots), _c(values), _c(x))
    return _interp_monotone_np(_c(knots), _c(values), _c(x))


def binning_dp(cum_tot, cum_pos, num_bins, n, n_pos):
    """Exact max-MI contiguous binning over distinct-value prefixes.

    `cum_tot`/`cum_pos` are prefix sums (length M+1) of per-distinct-value
    sample and positive counts. Returns (interior cut prefix indices,
    achieved MI in nats)."""
    if USE_NUMBA:
        return _binning_dp_nb(_c(cum_tot), _c(cum_pos), num_bins, float(n), float(n_pos))
    return _binning_dp_np(_c(cum_tot), _c(cum_pos), num_bins, float(n), float(n_pos))
