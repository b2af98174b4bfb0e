"""Post-hoc confidence calibrators: temperature scaling, mutual-information
binning, and a monotone latent-GP scaling map.

All three are fitted on a validation split (enforced: `Env1-Valid` tags
only, so test data can never leak into fitting), leave the classifier
untouched, and serialize to JSON with round-trip-exact floats. Temperature
and GP scaling preserve every argmax; the binning method may change
predictions slightly.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ENV1_VALID, OOD_LABEL, LabeledDataset, dumps_json17, softmax
from .kernels import binning_dp, imax_apply, interp_monotone
from .metrics import compute_nll

LOG_T_LO = math.log(0.05)
LOG_T_HI = math.log(20.0)
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def _validation_arrays(val: LabeledDataset):
    if len(val) == 0:
        raise ValueError("validation set is empty")
    if val.split_tag != ENV1_VALID:
        raise ValueError(f"calibrators fit on {ENV1_VALID} only, got {val.split_tag!r}")
    y = val.labels()
    if np.any(y == OOD_LABEL):
        raise ValueError("validation set contains OOD-sentinel labels")
    return val.logit_matrix(), y


# ---------------------------------------------------------------------------
# temperature scaling


@dataclass(frozen=True)
class TemperatureParam:
    """A single positive temperature dividing all logits before softmax."""

    k: int
    temperature: float
    fit_split: str = ENV1_VALID

    def __post_init__(self):
        if not (self.temperature > 0 and math.isfinite(self.temperature)):
            raise ValueError(f"temperature must be finite and > 0, got {self.temperature}")

    kind = "ts"

    def apply_matrix(self, logits: np.ndarray) -> np.ndarray:
        return softmax(np.asarray(logits, dtype=np.float64) / self.temperature)

    def to_jsonable(self) -> dict:
        return {"kind": "ts", "K": self.k, "temperature": self.temperature, "fit_split": self.fit_split}


def _nll_at_temperature(z: np.ndarray, y: np.ndarray, t: float) -> float:
    return compute_nll(softmax(z / t), y)


def fit_temperature(val: LabeledDataset, tol: float = 1e-4) -> TemperatureParam:
    """Fit T by golden-section search on log T over [log 0.05, log 20],
    minimizing validation NLL. The returned T never does worse than T=1."""
    z, y = _validation_arrays(val)
    if np.unique(y).size < 2:
        raise ValueError("validation set has a single class; NLL is degenerate in T")

    def f(log_t):
        return _nll_at_temperature(z, y, math.exp(log_t))

    a, b = LOG_T_LO, LOG_T_HI
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    t = math.exp(0.5 * (a + b))
    if f(math.log(t)) > f(0.0):
        t = 1.0
    return TemperatureParam(k=z.shape[1], temperature=t, fit_split=val.split_tag)


def apply_temperature(param: TemperatureParam, logits: np.ndarray) -> np.ndarray:
    return param.apply_matrix(logits)


# ---------------------------------------------------------------------------
# mutual-information-maximizing binning


def _logsumexp(a: np.ndarray, axis=None) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(a - m), axis=axis)) + np.squeeze(m, axis=axis)
    return out


def one_vs_rest_log_odds(z: np.ndarray, cls: int) -> np.ndarray:
    """s_i = z_ic - log sum_{j != c} exp(z_ij)."""
    z = np.asarray(z, dtype=np.float64)
    rest = np.delete(z, cls, axis=1)
    return z[:, cls] - _logsumexp(rest, axis=1)


def _bin_mi_terms(pos: np.ndarray, tot: np.ndarray, n_pos: float, n: float) -> np.ndarray:
    """Per-bin contribution to I(bin; t) in nats; additive over bins."""
    out = np.zeros_like(tot, dtype=np.float64)
    for c, marg in ((pos, n_pos), (tot - pos, n - n_pos)):
        mask = c > 0
        if mask.any():
            out[mask] += (c[mask] / n) * (np.log(c[mask]) - np.log(tot[mask]) - math.log(marg) + math.log(n))
    return out


def binned_mutual_information(s: np.ndarray, t: np.ndarray, boundaries: np.ndarray) -> float:
    """Empirical MI between bin(s) and the binary target t, in nats."""
    idx = np.searchsorted(boundaries, s)
    nb = len(boundaries) + 1
    tot = np.bincount(idx, minlength=nb).astype(np.float64)
    pos = np.bincount(idx, weights=t, minlength=nb)
    n_pos = float(t.sum())
    n = float(len(s))
    if n_pos == 0 or n_pos == n:
        return 0.0
    return float(_bin_mi_terms(pos, tot, n_pos, n).sum())


def _init_boundaries(s_sorted: np.ndarray, num_bins: int) -> np.ndarray:
    """Equal-mass quantile boundaries placed at midpoints of adjacent
    distinct values, kept strictly increasing."""
    n = len(s_sorted)
    distinct = np.unique(s_sorted)
    mids = 0.5 * (distinct[:-1] + distinct[1:])
    cum = np.searchsorted(s_sorted, distinct[:-1], side="right")  # samples at/below each midpoint
    picks = []
    last = -1
    for r in range(1, num_bins):
        target = (r * n) // num_bins
        i = int(np.argmin(np.abs(cum - target)))
        i = max(i, last + 1)
        i = min(i, len(mids) - (num_bins - 1 - r) - 1)
        picks.append(i)
        last = i
    return mids[np.array(picks, dtype=np.int64)]


def _coordinate_ascent(s: np.ndarray, t: np.ndarray, num_bins: int,
                       tol: float = 1e-8, max_sweeps: int = 200):
    """Sweep one boundary at a time until a full sweep gains < tol nats.

    A boundary move lifts the cut out of the configuration and re-places it
    at the best distinct-value midpoint anywhere (the cut set stays sorted,
    bins just relabel), so cuts stranded in uninformative regions can jump
    straight to where the mutual information lives. Ties prefer the
    rightmost candidate. Returns (boundaries, mi, sweep_mis)."""
    order = np.argsort(s, kind="stable")
    s_sorted = s[order]
    t_sorted = t[order].astype(np.float64)
    n = float(len(s))
    n_pos = float(t_sorted.sum())
    boundaries = _init_boundaries(s_sorted, num_bins)
    mi = binned_mutual_information(s_sorted, t_sorted, boundaries)
    sweep_mis = [mi]
    if n_pos == 0 or n_pos == n:
        return boundaries, 0.0, [0.0]

    distinct = np.unique(s_sorted)
    mids = 0.5 * (distinct[:-1] + distinct[1:])
    mid_splits = np.searchsorted(s_sorted, mids)  # samples strictly below each midpoint
    cpos = np.concatenate([[0.0], np.cumsum(t_sorted)])

    def cell_terms(lo_idx, hi_idx):
        """MI contribution of cells spanning sorted-sample ranges [lo, hi)."""
        tot = (hi_idx - lo_idx).astype(np.float64)
        pos = cpos[hi_idx] - cpos[lo_idx]
        return _bin_mi_terms(pos, tot, n_pos, n)

    for _ in range(max_sweeps):
        mi_at_sweep_start = mi
        for m in range(num_bins - 2, -1, -1):
            rest = np.delete(boundaries, m)
            rest_splits = np.searchsorted(s_sorted, rest)
            edges = np.concatenate([[0], rest_splits, [len(s_sorted)]]).astype(np.int64)
            rest_terms = cell_terms(edges[:-1], edges[1:])
            mi_rest = float(rest_terms.sum())
            # candidate midpoints distinct from the remaining cuts
            usable = ~np.isin(mids, rest)
            cand = mids[usable]
            if cand.size == 0:
                continue
            csplit = mid_splits[usable]
            host = np.searchsorted(rest, cand)  # which remaining cell each candidate splits
            lo = edges[host]
            hi = edges[host + 1]
            gains = (
                cell_terms(lo, csplit) + cell_terms(csplit, hi) - rest_terms[host]
            )
            best_gain = float(gains.max())
            tied = np.flatnonzero(gains >= best_gain - 1e-12)
            best = int(tied[-1])
            cand_mi = mi_rest + float(gains[best])
            if cand_mi > mi + 1e-12 or (cand_mi >= mi - 1e-12 and cand[best] > boundaries[m]):
                boundaries = np.sort(np.append(rest, cand[best]))
                mi = cand_mi
        # re-evaluate exactly so incremental rounding cannot accumulate
        mi = binned_mutual_information(s_sorted, t_sorted, boundaries)
        sweep_mis.append(mi)
        if mi - mi_at_sweep_start < tol:
            break

    # single-cut sweeps can stall where two cuts must move jointly; an
    # exact dynamic program over the same midpoint candidates finishes the
    # job (the objective is additive over contiguous cells)
    per_val_tot = np.searchsorted(s_sorted, distinct, side="right") \
        - np.searchsorted(s_sorted, distinct, side="left")
    pos_by_val = np.add.reduceat(t_sorted, np.searchsorted(s_sorted, distinct, side="left"))
    cum_tot = np.concatenate([[0.0], np.cumsum(per_val_tot)])
    cum_pos = np.concatenate([[0.0], np.cumsum(pos_by_val)])
    cuts, _ = binning_dp(cum_tot, cum_pos, num_bins, n, n_pos)
    dp_boundaries = mids[np.asarray(cuts, dtype=np.int64) - 1]
    dp_mi = binned_mutual_information(s_sorted, t_sorted, dp_boundaries)
    if dp_mi > mi + 1e-12:
        boundaries = dp_boundaries
        mi = dp_mi
        sweep_mis.append(mi)
    return boundaries, mi, sweep_mis


@dataclass(frozen=True)
class IMaxBins:
    """Per-class one-vs-rest log-odds binnings with MI-optimal boundaries.

    Each class carries strictly increasing boundaries and one calibrated
    probability per bin (Laplace-smoothed positive rate, pooled where
    needed to keep representatives non-decreasing).
    """

    k: int
    num_bins: int
    boundaries: tuple  # per class: tuple of floats, len <= num_bins - 1
    representatives: tuple  # per class: tuple of floats, len == len(boundaries) + 1
    mi: tuple = ()  # per-class achieved MI (diagnostic)
    fit_split: str = ENV1_VALID

    kind = "imax"

    def __post_init__(self):
        for cls, (b, r) in enumerate(zip(self.boundaries, self.representatives)):
            if len(r) != len(b) + 1:
                raise ValueError(f"class {cls}: {len(r)} representatives for {len(b)} boundaries")
            if len(b) > 1 and not np.all(np.diff(b) > 0):
                raise ValueError(f"class {cls}: boundaries not strictly increasing")
            if not all(0.0 < x < 1.0 for x in r):
                raise ValueError(f"class {cls}: representatives must lie in (0, 1)")
            if len(r) > 1 and not np.all(np.diff(r) >= 0):
                raise ValueError(f"class {cls}: representatives not non-decreasing")
        # uniform bin counts take the fast lookup kernel; ragged falls back
        uniform = len({len(b) for b in self.boundaries}) == 1
        object.__setattr__(self, "_b_arr", np.array(self.boundaries) if uniform else None)
        object.__setattr__(self, "_r_arr", np.array(self.representatives) if uniform else None)

    def apply_matrix(self, logits: np.ndarray) -> np.ndarray:
        z = np.asarray(logits, dtype=np.float64)
        if z.ndim == 1:
            z = z[None, :]
        if z.shape[1] != self.k:
            raise ValueError(f"binning fitted for K={self.k}, got K={z.shape[1]}")
        if self._b_arr is not None:
            probs, finite = imax_apply(z, self._b_arr, self._r_arr)
            if not finite:
                bad = int(np.flatnonzero(~np.isfinite(z).all(axis=1))[0])
                raise ValueError(f"non-finite logits at row {bad}")
            return probs
        # ragged per-class bin counts: plain per-class lookup
        out = np.empty_like(z)
        for cls in range(self.k):
            s = one_vs_rest_log_odds(z, cls)
            if not np.all(np.isfinite(s)):
                bad = int(np.flatnonzero(~np.isfinite(s))[0])
                raise ValueError(f"non-finite log-odds for class {cls} at row {bad}")
            idx = np.searchsorted(np.asarray(self.boundaries[cls]), s)
            out[:, cls] = np.asarray(self.representatives[cls])[idx]
        return out / out.sum(axis=1, keepdims=True)

    def to_jsonable(self) -> dict:
        return {
            "kind": "imax",
            "K": self.k,
            "num_bins": self.num_bins,
            "boundaries": [list(b) for b in self.boundaries],
            "representatives": [list(r) for r in self.representatives],
            "mi": list(self.mi),
            "fit_split": self.fit_split,
        }


def _monotone_laplace_rates(pos: np.ndarray, tot: np.ndarray) -> np.ndarray:
    """Laplace-smoothed rates (p+1)/(n+2), made non-decreasing by merging
    the raw counts of adjacent violating cells and re-smoothing.

    Merging raw counts (rather than averaging smoothed rates) keeps one
    +1/+2 pseudo-count per merged cell, so runs of small bins cannot
    inflate the smoothed floor."""
    cells = [(float(p), float(n)) for p, n in zip(pos, tot)]
    sizes = [1] * len(cells)

    def rate(c):
        return (c[0] + 1.0) / (c[1] + 2.0)

    i = 0
    while i < len(cells) - 1:
        if rate(cells[i]) > rate(cells[i + 1]) + 1e-15:
            cells[i] = (cells[i][0] + cells[i + 1][0], cells[i][1] + cells[i + 1][1])
            sizes[i] += sizes[i + 1]
            del cells[i + 1], sizes[i + 1]
            if i > 0:
                i -= 1
        else:
            i += 1
    return np.repeat([rate(c) for c in cells], sizes)


def fit_imax(val: LabeledDataset, num_bins: int = 15) -> IMaxBins:
    """Fit the shared class-wise MI-maximizing binning by coordinate ascent
    from an equal-mass start; MI never decreases across sweeps.

    One-vs-rest (log-odds, indicator) pairs of all K classes are pooled
    into a single binning problem, so every boundary and representative is
    estimated from K times the per-class data; the fitted binning is
    shared across classes."""
    z, y = _validation_arrays(val)
    if num_bins < 2:
        raise ValueError("need at least 2 calibration bins")
    k = z.shape[1]
    s_pool = np.concatenate([one_vs_rest_log_odds(z, cls) for cls in range(k)])
    t_pool = np.concatenate([(y == cls).astype(np.float64) for cls in range(k)])
    b_fit = num_bins
    n_distinct = np.unique(s_pool).size
    if n_distinct < b_fit:
        b_fit = max(1, n_distinct)
        warnings.warn(
            f"only {n_distinct} distinct log-odds values; reducing bins to {b_fit}",
            stacklevel=2,
        )
    boundaries, mi, _ = _coordinate_ascent(s_pool, t_pool, b_fit)
    idx = np.searchsorted(boundaries, s_pool)
    tot = np.bincount(idx, minlength=b_fit).astype(np.float64)
    pos = np.bincount(idx, weights=t_pool, minlength=b_fit)
    rates = _monotone_laplace_rates(pos, tot)
    shared_b = tuple(float(v) for v in boundaries)
    shared_r = tuple(float(v) for v in rates)
    return IMaxBins(
        k=k,
        num_bins=num_bins,
        boundaries=(shared_b,) * k,
        representatives=(shared_r,) * k,
        mi=(float(mi),) * k,
        fit_split=val.split_tag,
    )


def apply_imax(bins: IMaxBins, logits: np.ndarray) -> np.ndarray:
    return bins.apply_matrix(logits)


# ---------------------------------------------------------------------------
# latent-GP monotone scaling


def _rbf_gram(x: np.ndarray, length_scale: float, signal_var: float) -> np.ndarray:
    # jitter keeps the Gram invertible for closely spaced knots
    d = x[:, None] - x[None, :]
    return signal_var * np.exp(-0.5 * (d / length_scale) ** 2) + 1e-6 * np.eye(len(x))


@dataclass(frozen=True)
class GpScalingMap:
    """Monotone scalar map on the standardized logit axis.

    A Gaussian variational posterior over the map's values at fixed knots;
    application draws `num_samples` knot vectors, sorts each (monotone
    projection, which also preserves every argmax), linearly interpolates
    with slope-1 extension beyond the knot span, and averages the softmax
    outputs.
    """

    k: int
    knots: np.ndarray
    mean: np.ndarray
    log_std: np.ndarray
    length_scale: float
    signal_var: float
    num_samples: int
    seed: int
    standardize_mean: float
    standardize_std: float
    fit_split: str = ENV1_VALID
    final_nll: float = field(default=float("nan"), compare=False)

    kind = "gp"

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=np.float64)
        if not np.all(np.diff(knots) > 0):
            raise ValueError("knot locations must be strictly increasing")
        for name in ("knots", "mean", "log_std"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def sample_knot_values(self, rng: np.random.Generator, num_samples: int) -> np.ndarray:
        eps = rng.standard_normal((num_samples, len(self.knots)))
        u = self.mean[None, :] + np.exp(self.log_std)[None, :] * eps
        return np.sort(u, axis=1)

    def apply_matrix(self, logits: np.ndarray, num_samples: int | None = None,
                     seed: int | None = None) -> np.ndarray:
        z = np.asarray(logits, dtype=np.float64)
        if z.ndim == 1:
            z = z[None, :]
        if z.shape[1] != self.k:
            raise ValueError(f"GP map fitted for K={self.k}, got K={z.shape[1]}")
        s = self.num_samples if num_samples is None else num_samples
        rng = np.random.default_rng(self.seed if seed is None else seed)
        v = self.sample_knot_values(rng, s)
        x = ((z - self.standardize_mean) / self.standardize_std).ravel()
        g = interp_monotone(self.knots, v, x).reshape(s, *z.shape)
        p = softmax(g * self.standardize_std + self.standardize_mean)
        return p.mean(axis=0)

    def to_jsonable(self) -> dict:
        return {
            "kind": "gp",
            "K": self.k,
            "knots": self.knots.tolist(),
            "mean": self.mean.tolist(),
            "log_std": self.log_std.tolist(),
            "length_scale": self.length_scale,
            "signal_var": self.signal_var,
            "num_samples": self.num_samples,
            "seed": self.seed,
            "standardize_mean": self.standardize_mean,
            "standardize_std": self.standardize_std,
            "fit_split": self.fit_split,
            "final_nll": self.final_nll,
        }


def _interp_design(knots: np.ndarray, x: np.ndarray):
    """Fixed interpolation design: g = A @ v + offset for knot values v."""
    g_count = len(knots)
    a = np.zeros((len(x), g_count))
    offset = np.zeros(len(x))
    left = x <= knots[0]
    right = x >= knots[-1]
    inner = ~(left | right)
    a[left, 0] = 1.0
    offset[left] = x[left] - knots[0]
    a[right, g_count - 1] = 1.0
    offset[right] = x[right] - knots[-1]
    xi = x[inner]
    lo = np.clip(np.searchsorted(knots, xi) - 1, 0, g_count - 2)
    w = (xi - knots[lo]) / (knots[lo + 1] - knots[lo])
    rows = np.flatnonzero(inner)
    a[rows, lo] = 1.0 - w
    a[rows, lo + 1] = w
    return a, offset


def fit_gp_scaling(
    val: LabeledDataset,
    num_knots: int = 20,
    num_samples: int = 30,
    steps: int = 2000,
    step_size: float = 1e-2,
    seed: int = 0,
    length_scale: float = 0.3,
    signal_var: float = 1.0,
    init: str = "ts",
    init_std: float = 0.02,
) -> GpScalingMap:
    """Fit the variational posterior over knot values by gradient descent
    on MC validation NLL plus the KL to the GP prior (mean = identity).

    `init="ts"` warm-starts the posterior mean at the fitted-temperature
    solution, so the final map is never worse than temperature scaling;
    `init="prior"` starts at the prior mean (the identity map).
    """
    z, y = _validation_arrays(val)
    n, k = z.shape
    mu_z = float(z.mean())
    sigma_z = float(z.std())
    if sigma_z <= 0:
        raise ValueError("validation logits are constant; cannot standardize")
    x_std = (z - mu_z) / sigma_z
    if np.unique(x_std).size < num_knots:
        raise ValueError(f"{num_knots} knots exceed the {np.unique(x_std).size} distinct logit values")
    lo, hi = np.percentile(x_std, [1.0, 99.0])
    knots = np.linspace(lo, hi, num_knots)

    if init == "ts":
        t_fit = fit_temperature(val).temperature
        m = knots / t_fit
    elif init == "prior":
        m = knots.copy()
    else:
        raise ValueError(f"init must be 'ts' or 'prior', got {init!r}")
    log_s = np.full(num_knots, math.log(init_std))

    gram = _rbf_gram(knots, length_scale, signal_var)
    gram_inv = np.linalg.inv(gram)
    a_design, offset = _interp_design(knots, x_std.ravel())

    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((num_samples, num_knots))  # fixed MC noise: deterministic objective
    row = np.arange(n)

    def forward(m_cur, log_s_cur):
        s_cur = np.exp(log_s_cur)
        u = m_cur[None, :] + s_cur[None, :] * eps
        order = np.argsort(u, axis=1)
        v = np.take_along_axis(u, order, axis=1)
        g = v @ a_design.T + offset[None, :]
        logits_new = g.reshape(num_samples, n, k) * sigma_z + mu_z
        p = softmax(logits_new)
        p_mean = p.mean(axis=0)
        nll = -float(np.mean(np.log(np.maximum(p_mean[row, y], 1e-300))))
        return u, order, p, p_mean, nll

    best = (np.inf, m.copy(), log_s.copy())
    nll_trace = []
    for _ in range(steps):
        _, order, p, p_mean, nll = forward(m, log_s)
        s_vec = np.exp(log_s)
        diff = m - knots
        nll_trace.append(nll)
        if nll < best[0]:
            best = (nll, m.copy(), log_s.copy())
        # backprop: d nll / d logits, through the softmax average
        py = p[:, row, y]  # (S, N)
        inv_pmean = 1.0 / np.maximum(p_mean[row, y], 1e-300)  # (N,)
        grad_logits = p * (py * inv_pmean[None, :])[:, :, None]
        grad_logits[:, row, y] -= py * inv_pmean[None, :]
        grad_logits /= n * num_samples
        grad_g = grad_logits.reshape(num_samples, n * k) * sigma_z
        grad_v = grad_g @ a_design
        grad_u = np.empty_like(grad_v)
        np.put_along_axis(grad_u, order, grad_v, axis=1)
        grad_m = grad_u.sum(axis=0) + (gram_inv @ diff) / n
        grad_log_s = (grad_u * eps).sum(axis=0) * s_vec + (np.diag(gram_inv) * s_vec**2 - 1.0) / n
        # fixed-step SGD needs a norm cap to survive occasional steep regions
        gnorm = math.sqrt(float(grad_m @ grad_m) + float(grad_log_s @ grad_log_s))
        if gnorm > 100.0:
            grad_m *= 100.0 / gnorm
            grad_log_s *= 100.0 / gnorm
        m = m - step_size * grad_m
        log_s = log_s - step_size * grad_log_s

    _, _, _, _, nll = forward(m, log_s)
    if nll < best[0]:
        best = (nll, m, log_s)
    if steps >= 20 and nll_trace[-(steps // 10)] - best[0] > 1e-4:
        warnings.warn("GP scaling fit still improving at the iteration budget; returning best iterate",
                      stacklevel=2)

    fitted = GpScalingMap(
        k=k,
        knots=knots,
        mean=best[1],
        log_std=best[2],
        length_scale=length_scale,
        signal_var=signal_var,
        num_samples=num_samples,
        seed=seed,
        standardize_mean=mu_z,
        standardize_std=sigma_z,
        fit_split=val.split_tag,
        final_nll=best[0],
    )
    return fitted


def apply_gp_scaling(gp_map: GpScalingMap, logits: np.ndarray, **kwargs) -> np.ndarray:
    return gp_map.apply_matrix(logits, **kwargs)


# ---------------------------------------------------------------------------
# serialization

Calibrator = TemperatureParam | IMaxBins | GpScalingMap


def save_calibrator(cal: Calibrator, path: Path) -> None:
    Path(path).write_text(dumps_json17(cal.to_jsonable()), encoding="utf-8")


def calibrator_from_jsonable(obj: dict) -> Calibrator:
    kind = obj.get("kind")
    if kind == "ts":
        return TemperatureParam(k=obj["K"], temperature=obj["temperature"], fit_split=obj["fit_split"])
    if kind == "imax":
        return IMaxBins(
            k=obj["K"],
            num_bins=obj["num_bins"],
            boundaries=tuple(tuple(b) for b in obj["boundaries"]),
            representatives=tuple(tuple(r) for r in obj["representatives"]),
            mi=tuple(obj.get("mi", ())),
            fit_split=obj["fit_split"],
        )
    if kind == "gp":
        return GpScalingMap(
            k=obj["K"],
            knots=np.array(obj["knots"]),
            mean=np.array(obj["mean"]),
            log_std=np.array(obj["log_std"]),
            length_scale=obj["length_scale"],
            signal_var=obj["signal_var"],
            num_samples=obj["num_samples"],
            seed=obj["seed"],
            standardize_mean=obj["standardize_mean"],
            standardize_std=obj["standardize_std"],
            fit_split=obj["fit_split"],
            final_nll=obj.get("final_nll", float("nan")),
        )
    raise ValueError(f"unknown calibrator kind {kind!r}")


def load_calibrator(path: Path) -> Calibrator:
    return calibrator_from_jsonable(json.loads(Path(path).read_text(encoding="utf-8")))
