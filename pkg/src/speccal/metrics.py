"""Calibration metrics: equal-mass-bin ECE, MMC, NLL, reliability curves,
confidence histograms, and the per-seed evaluation report.

Equal-mass binning sorts the predicted confidences (stable, so ties keep
input order) and slices bin r at the integer boundaries
``floor(r*N/B)``; bin sizes therefore differ by at most one. The same
binning code feeds both `compute_ece` and `reliability_curve`, so the two
agree exactly by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .core import OOD_LABEL, LabeledDataset, softmax

HIST_BIN_WIDTH = 0.02


def _as_prob_matrix(probs) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim == 1:
        p = p[None, :]
    if p.ndim != 2:
        raise ValueError(f"expected (N, K) probabilities, got shape {p.shape}")
    return p


def _check_in_distribution(labels: np.ndarray) -> None:
    if np.any(labels == OOD_LABEL):
        raise ValueError("OOD-sentinel labels are not valid for accuracy/ECE metrics")


def predictions(probs) -> np.ndarray:
    """Argmax class per row; ties break toward the lowest class index."""
    return np.argmax(_as_prob_matrix(probs), axis=1)


def _binned_stats(probs, labels, num_bins: int):
    """Shared equal-mass binning: per-bin (mean confidence, accuracy, count)."""
    p = _as_prob_matrix(probs)
    y = np.asarray(labels, dtype=np.int64)
    n = p.shape[0]
    if n == 0:
        raise ValueError("cannot bin an empty sample set")
    if y.shape[0] != n:
        raise ValueError(f"{n} probability rows but {y.shape[0]} labels")
    _check_in_distribution(y)
    if num_bins < 1:
        raise ValueError("need at least one bin")
    if num_bins > n:
        raise ValueError(f"B={num_bins} bins undefined for N={n} samples")
    conf = p.max(axis=1)
    correct = (np.argmax(p, axis=1) == y).astype(np.float64)
    order = np.argsort(conf, kind="stable")
    conf_sorted = conf[order]
    correct_sorted = correct[order]
    edges = np.array([(r * n) // num_bins for r in range(num_bins + 1)], dtype=np.int64)
    counts = np.diff(edges).astype(np.float64)
    conf_sums = np.add.reduceat(conf_sorted, edges[:-1])
    acc_sums = np.add.reduceat(correct_sorted, edges[:-1])
    return conf_sums / counts, acc_sums / counts, counts


def compute_ece(probs, labels, num_bins: int = 15) -> float:
    """Weighted average of |accuracy - confidence| over equal-mass bins."""
    mean_conf, acc, counts = _binned_stats(probs, labels, num_bins)
    n = counts.sum()
    return float(np.sum(counts / n * np.abs(acc - mean_conf)))


def compute_mmc(probs) -> float:
    """Mean of the top-class probability across the sample set."""
    p = _as_prob_matrix(probs)
    if p.shape[0] == 0:
        raise ValueError("MMC of an empty sample set is undefined")
    return float(p.max(axis=1).mean())


def compute_nll(probs, labels) -> float:
    """Mean negative log-likelihood of the true class."""
    p = _as_prob_matrix(probs)
    y = np.asarray(labels, dtype=np.int64)
    _check_in_distribution(y)
    if p.shape[0] == 0:
        raise ValueError("NLL of an empty sample set is undefined")
    picked = p[np.arange(p.shape[0]), y]
    return float(-np.mean(np.log(np.maximum(picked, 1e-300))))


def compute_accuracy(probs, labels) -> float:
    y = np.asarray(labels, dtype=np.int64)
    _check_in_distribution(y)
    if y.shape[0] == 0:
        raise ValueError("accuracy of an empty sample set is undefined")
    return float(np.mean(predictions(probs) == y))


class CorrectnessSplit(NamedTuple):
    correct: np.ndarray
    incorrect: np.ndarray
    ood: np.ndarray


def split_by_correctness(labels, probs) -> CorrectnessSplit:
    """Partition sample indices into correct / incorrect / ood subsets.

    The partition is exhaustive and disjoint; OOD-sentinel samples always
    fall into the third subset regardless of prediction.
    """
    y = np.asarray(labels, dtype=np.int64)
    pred = predictions(probs)
    if pred.shape[0] != y.shape[0]:
        raise ValueError("labels and probabilities differ in length")
    idx = np.arange(y.shape[0])
    ood = idx[y == OOD_LABEL]
    in_dist = y != OOD_LABEL
    correct = idx[in_dist & (pred == y)]
    incorrect = idx[in_dist & (pred != y)]
    return CorrectnessSplit(correct, incorrect, ood)


@dataclass(frozen=True)
class ReliabilityCurve:
    """Per-bin mean confidence, empirical accuracy, and sample count."""

    confidence: np.ndarray
    accuracy: np.ndarray
    count: np.ndarray

    def ece(self) -> float:
        n = self.count.sum()
        return float(np.sum(self.count / n * np.abs(self.accuracy - self.confidence)))

    def rows(self):
        for i in range(len(self.count)):
            yield i, float(self.confidence[i]), float(self.accuracy[i]), int(self.count[i])


def reliability_curve(probs, labels, num_bins: int = 15) -> ReliabilityCurve:
    mean_conf, acc, counts = _binned_stats(probs, labels, num_bins)
    return ReliabilityCurve(mean_conf, acc, counts)


@dataclass(frozen=True)
class ConfidenceHistogram:
    """Fixed-width (0.02) confidence histogram on [1/K, 1], split into
    correct and incorrect counts; OOD samples are tallied separately."""

    k: int
    correct: np.ndarray
    incorrect: np.ndarray
    ood: np.ndarray

    @property
    def num_bins(self) -> int:
        return self.correct.shape[0]

    def centers(self) -> np.ndarray:
        lo = 1.0 / self.k
        return lo + HIST_BIN_WIDTH * (np.arange(self.num_bins) + 0.5)


def confidence_histogram(probs, labels, k: int) -> ConfidenceHistogram:
    p = _as_prob_matrix(probs)
    y = np.asarray(labels, dtype=np.int64)
    lo = 1.0 / k
    nb = int(np.ceil((1.0 - lo) / HIST_BIN_WIDTH))
    conf = p.max(axis=1)
    idx = np.clip(((conf - lo) / HIST_BIN_WIDTH).astype(np.int64), 0, nb - 1)
    split = split_by_correctness(y, p)
    out = []
    for subset in split:
        counts = np.zeros(nb, dtype=np.int64)
        np.add.at(counts, idx[subset], 1)
        out.append(counts)
    return ConfidenceHistogram(k, out[0], out[1], out[2])


# ---------------------------------------------------------------------------
# aggregated evaluation


@dataclass(frozen=True)
class AggStat:
    """A scalar metric per seed with its mean and sample (N-1) std."""

    per_seed: tuple
    mean: float
    std: float

    @staticmethod
    def from_values(values: Sequence[float]) -> "AggStat":
        v = np.asarray(values, dtype=np.float64)
        std = float(v.std(ddof=1)) if v.size > 1 else 0.0
        return AggStat(tuple(float(x) for x in v), float(v.mean()), std)


@dataclass(frozen=True)
class EvalReport:
    """Metrics bundle for one dataset under one (optional) calibrator.

    Scalar metrics are computed per seed_id group and aggregated to
    mean +/- sample std; the reliability curve and confidence histogram
    pool the records of all seeds.
    """

    split_tag: str
    method: str
    num_bins: int
    seeds: tuple
    accuracy: AggStat | None
    top1_ece: AggStat | None
    mmc_all: AggStat | None
    mmc_correct: AggStat | None
    mmc_incorrect: AggStat | None
    mmc_ood: AggStat | None
    nll: AggStat | None
    reliability: ReliabilityCurve | None
    histogram: ConfidenceHistogram | None = field(repr=False, default=None)

    def to_jsonable(self) -> dict:
        """Canonically ordered dict with floats rounded to 6 decimals."""

        def r6(x):
            return None if x is None else round(float(x), 6)

        def agg(a: AggStat | None):
            if a is None:
                return None
            return {"mean": r6(a.mean), "std": r6(a.std), "per_seed": [r6(v) for v in a.per_seed]}

        out = {
            "split_tag": self.split_tag,
            "method": self.method,
            "num_bins": self.num_bins,
            "seeds": list(self.seeds),
            "accuracy": agg(self.accuracy),
            "top1_ece": agg(self.top1_ece),
            "mmc_all": agg(self.mmc_all),
            "mmc_correct": agg(self.mmc_correct),
            "mmc_incorrect": agg(self.mmc_incorrect),
            "mmc_ood": agg(self.mmc_ood),
            "nll": agg(self.nll),
        }
        if self.reliability is not None:
            out["reliability"] = {
                "confidence": [r6(v) for v in self.reliability.confidence],
                "accuracy": [r6(v) for v in self.reliability.accuracy],
                "count": [int(v) for v in self.reliability.count],
            }
        if self.histogram is not None:
            out["histogram"] = {
                "bin_width": HIST_BIN_WIDTH,
                "first_edge": r6(1.0 / self.histogram.k),
                "correct": self.histogram.correct.tolist(),
                "incorrect": self.histogram.incorrect.tolist(),
                "ood": self.histogram.ood.tolist(),
            }
        return out

    def table_cells(self) -> tuple[str, str, str]:
        """Acc / ECE / MMC_incorrect cells in the report-table format,
        e.g. ('81.67 ± 0.22', '0.117 ± 0.04', '0.82 ± 0.08')."""
        acc = f"{100 * self.accuracy.mean:.2f} ± {100 * self.accuracy.std:.2f}"
        ece = f"{self.top1_ece.mean:.3f} ± {self.top1_ece.std:.2f}"
        mmc = f"{self.mmc_incorrect.mean:.2f} ± {self.mmc_incorrect.std:.2f}"
        return acc, ece, mmc


def evaluate(
    dataset: LabeledDataset,
    calibrator=None,
    num_bins: int = 15,
    method: str | None = None,
) -> EvalReport:
    """Evaluate a logit dataset, optionally through a fitted calibrator.

    `calibrator` may be a single fitted calibrator or a {seed_id: calibrator}
    mapping (calibrators are fitted per network seed). Per-seed metrics are
    aggregated in sorted seed order; OOD-sentinel records contribute only to
    mmc_ood and the histogram's ood counts.
    """
    if len(dataset) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    k = dataset.k
    z = dataset.logit_matrix()
    y = dataset.labels()
    seeds = dataset.seed_ids()

    def calibrator_for(seed):
        if calibrator is None:
            return None
        if isinstance(calibrator, dict):
            try:
                return calibrator[seed]
            except KeyError:
                raise ValueError(f"no calibrator fitted for seed {seed}") from None
        return calibrator

    unique_seeds = sorted(set(int(s) for s in seeds))
    probs = np.empty_like(z)
    for seed in unique_seeds:
        cal = calibrator_for(seed)
        mask = seeds == seed
        if cal is None:
            probs[mask] = softmax(z[mask])
        else:
            if cal.k != k:
                raise ValueError(f"calibrator fitted for K={cal.k} applied to K={k} logits")
            probs[mask] = cal.apply_matrix(z[mask])

    per = {name: [] for name in ("accuracy", "ece", "mmc_all", "mmc_correct", "mmc_incorrect", "mmc_ood", "nll")}
    for seed in unique_seeds:
        mask = seeds == seed
        ps, ys = probs[mask], y[mask]
        in_dist = ys != OOD_LABEL
        if in_dist.any():
            pid, yid = ps[in_dist], ys[in_dist]
            per["accuracy"].append(compute_accuracy(pid, yid))
            per["ece"].append(compute_ece(pid, yid, min(num_bins, len(yid))))
            per["nll"].append(compute_nll(pid, yid))
            per["mmc_all"].append(compute_mmc(pid))
            split = split_by_correctness(yid, pid)
            if split.correct.size:
                per["mmc_correct"].append(compute_mmc(pid[split.correct]))
            if split.incorrect.size:
                per["mmc_incorrect"].append(compute_mmc(pid[split.incorrect]))
        if (~in_dist).any():
            per["mmc_ood"].append(compute_mmc(ps[~in_dist]))

    def agg(name):
        return AggStat.from_values(per[name]) if per[name] else None

    in_dist_all = y != OOD_LABEL
    curve = None
    if in_dist_all.any():
        nb = min(num_bins, int(in_dist_all.sum()))
        curve = reliability_curve(probs[in_dist_all], y[in_dist_all], nb)
    hist = confidence_histogram(probs, y, k)

    return EvalReport(
        split_tag=dataset.split_tag,
        method=method or ("baseline" if calibrator is None else type(calibrator).__name__),
        num_bins=num_bins,
        seeds=tuple(unique_seeds),
        accuracy=agg("accuracy"),
        top1_ece=agg("ece"),
        mmc_all=agg("mmc_all"),
        mmc_correct=agg("mmc_correct"),
        mmc_incorrect=agg("mmc_incorrect"),
        mmc_ood=agg("mmc_ood"),
        nll=agg("nll"),
        reliability=curve,
        histogram=hist,
    )
