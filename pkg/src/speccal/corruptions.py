"""Graded, seeded corruption operators over ROI spectra, plus the
severity-sweep evaluation.

All operators work in the linear power domain (noise adds in power, not
dB), preserve label, metadata, and shape, and are deterministic given the
spec seed: the per-ROI random stream is derived from the sample_id, so the
same (roi, spec) pair always produces bit-identical output. Severity
parameters dominate component-wise from level 1 to 3.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .core import ENV1_VALID, LabeledDataset, corrupted_tag
from .kernels import render_peaks
from .metrics import compute_accuracy, compute_ece, compute_mmc, split_by_correctness
from .simulate import DB_CEIL, DB_FLOOR, SpectrumROI

KINDS = (
    "additive-noise",
    "speckle",
    "range-smear",
    "azimuth-smear",
    "attenuation",
    "bin-dropout",
    "ghost-target",
)

SEVERITIES = (1, 2, 3)

# per (kind, severity) magnitudes; see corrupt() for their meaning
PARAMS = {
    "additive-noise": ({"frac": 0.5}, {"frac": 2.0}, {"frac": 8.0}),
    "speckle": ({"mix": 0.5}, {"mix": 0.75}, {"mix": 1.0}),
    "range-smear": ({"sigma": 0.6}, {"sigma": 1.2}, {"sigma": 2.4}),
    "azimuth-smear": ({"sigma": 0.6}, {"sigma": 1.2}, {"sigma": 2.4}),
    "attenuation": ({"db": 3.0}, {"db": 6.0}, {"db": 12.0}),
    "bin-dropout": ({"frac": 0.05}, {"frac": 0.15}, {"frac": 0.30}),
    "ghost-target": ({"count": 1, "amp": 0.3}, {"count": 2, "amp": 0.5}, {"count": 3, "amp": 0.8}),
}

_MIN_POWER = 10.0 ** (DB_FLOOR / 10.0)


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown corruption kind {self.kind!r}; choose from {KINDS}")
        if self.severity not in (0,) + SEVERITIES:
            raise ValueError(f"severity must be 0..3, got {self.severity}")

    def params(self) -> dict:
        return PARAMS[self.kind][self.severity - 1]


def _roi_rng(roi: SpectrumROI, spec: CorruptionSpec) -> np.random.Generator:
    digest = hashlib.blake2s(roi.sample_id.encode("utf-8"), digest_size=8).digest()
    ent = int.from_bytes(digest, "little")
    return np.random.default_rng(
        np.random.SeedSequence([ent, spec.seed, KINDS.index(spec.kind), spec.severity])
    )


def _smear_1d(power: np.ndarray, sigma: float, axis: int) -> np.ndarray:
    radius = max(1, int(math.ceil(3.0 * sigma)))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (t / sigma) ** 2)
    kernel /= kernel.sum()
    moved = np.moveaxis(power, axis, -1)
    padded = np.pad(moved, [(0, 0)] * (moved.ndim - 1) + [(radius, radius)], mode="reflect")
    out = np.empty_like(moved)
    for k, shift in enumerate(range(2 * radius + 1)):
        seg = padded[..., shift : shift + moved.shape[-1]]
        if k == 0:
            out[:] = kernel[k] * seg
        else:
            out += kernel[k] * seg
    return np.moveaxis(out, -1, axis)


def corrupt(roi: SpectrumROI, spec: CorruptionSpec) -> SpectrumROI:
    """Apply one corruption; severity 0 returns the input bit-exactly."""
    if spec.severity == 0:
        return roi
    rng = _roi_rng(roi, spec)
    power = 10.0 ** (roi.magnitude.astype(np.float64) / 10.0)
    h, w = power.shape
    p = spec.params()
    if spec.kind == "additive-noise":
        power = power + rng.exponential(p["frac"] * power.mean(), size=power.shape)
    elif spec.kind == "speckle":
        mix = p["mix"]
        power = power * ((1.0 - mix) + mix * rng.exponential(1.0, size=power.shape))
    elif spec.kind == "range-smear":
        power = _smear_1d(power, p["sigma"], axis=0)
    elif spec.kind == "azimuth-smear":
        power = _smear_1d(power, p["sigma"], axis=1)
    elif spec.kind == "attenuation":
        power = power * 10.0 ** (-p["db"] / 10.0)
    elif spec.kind == "bin-dropout":
        # one shared permutation per (roi, seed): higher severity drops a superset
        rng_cells = _roi_rng(roi, CorruptionSpec(spec.kind, 1, spec.seed))
        order = rng_cells.permutation(h * w)
        n_drop = round(p["frac"] * h * w)
        flat = power.ravel()
        flat[order[:n_drop]] = _MIN_POWER
        power = flat.reshape(h, w)
    elif spec.kind == "ghost-target":
        peak = power.max()
        rbin = rng.uniform(2.0, h - 3.0, p["count"])
        abin = rng.uniform(2.0, w - 3.0, p["count"])
        ghost = render_peaks(rbin, abin, np.full(p["count"], p["amp"] * peak), h, w)
        power = power + ghost
    db = 10.0 * np.log10(np.maximum(power, _MIN_POWER))
    db = np.clip(db, DB_FLOOR, DB_CEIL)
    return SpectrumROI(
        sample_id=roi.sample_id,
        label=roi.label,
        magnitude=db.astype(np.float32),
        scene_id=roi.scene_id,
        frame_id=roi.frame_id,
        range_m=roi.range_m,
    )


def corrupt_dataset(dataset: LabeledDataset, spec: CorruptionSpec) -> LabeledDataset:
    tag = corrupted_tag(spec.kind, spec.severity)
    return LabeledDataset(tuple(corrupt(r, spec) for r in dataset.records), tag)


# ---------------------------------------------------------------------------
# severity sweep


@dataclass(frozen=True)
class SweepCell:
    kind: str
    severity: int
    method: str
    accuracy: float
    ece: float
    mmc_incorrect: float


@dataclass(frozen=True)
class SweepReport:
    """Per (kind, severity, method) metrics, seed-averaged; aggregates are
    computed over kinds per severity ('all' rows in the CSV)."""

    cells: tuple

    def value(self, kind: str, severity: int, method: str, metric: str) -> float:
        for c in self.cells:
            if (c.kind, c.severity, c.method) == (kind, severity, method):
                return getattr(c, metric)
        raise KeyError((kind, severity, method))

    def severity_mean(self, severity: int, method: str, metric: str) -> float:
        vals = [getattr(c, metric) for c in self.cells
                if c.severity == severity and c.method == method]
        return float(np.mean(vals))

    def severity_median(self, severity: int, method: str, metric: str) -> float:
        vals = [getattr(c, metric) for c in self.cells
                if c.severity == severity and c.method == method]
        return float(np.median(vals))

    def methods(self) -> list[str]:
        seen = []
        for c in self.cells:
            if c.method not in seen:
                seen.append(c.method)
        return seen

    def csv_rows(self):
        """Rows `kind,severity,method,accuracy,ece,mmc_incorrect`, sorted by
        severity, with kind-averaged 'all' rows appended per severity."""
        yield "kind,severity,method,accuracy,ece,mmc_incorrect"
        for sev in SEVERITIES:
            for kind in KINDS:
                for c in self.cells:
                    if c.severity == sev and c.kind == kind:
                        yield (f"{c.kind},{c.severity},{c.method},"
                               f"{c.accuracy:.6f},{c.ece:.6f},{c.mmc_incorrect:.6f}")
            for method in self.methods():
                acc = self.severity_mean(sev, method, "accuracy")
                ece = self.severity_mean(sev, method, "ece")
                mmc = self.severity_mean(sev, method, "mmc_incorrect")
                yield f"all,{sev},{method},{acc:.6f},{ece:.6f},{mmc:.6f}"


def _sweep_kind_job(kind: str):
    from .parallel import JOB_CTX, limit_blas_in_worker

    limit_blas_in_worker()
    ctx = JOB_CTX
    return sweep_one_kind(
        kind, ctx["models"], ctx["test"], ctx["calibrators"], ctx["num_bins"],
        ctx["corruption_seed"], ctx["predict_fn"],
    )


def sweep_one_kind(kind, models, test, calibrators, num_bins, corruption_seed, predict_fn=None):
    from .core import softmax
    from .network import predict_logits

    predict_fn = predict_fn or predict_logits
    cells = []
    for severity in SEVERITIES:
        spec = CorruptionSpec(kind, severity, corruption_seed)
        corrupted = corrupt_dataset(test, spec)
        per_method: dict[str, dict[str, list]] = {}
        for seed, model in sorted(models.items()):
            logit_ds = predict_fn(model, corrupted)
            z = logit_ds.logit_matrix()
            y = logit_ds.labels()
            for method in ["baseline", *calibrators.keys()]:
                if method == "baseline":
                    probs = softmax(z)
                else:
                    probs = calibrators[method][seed].apply_matrix(z)
                split = split_by_correctness(y, probs)
                mmc_inc = compute_mmc(probs[split.incorrect]) if split.incorrect.size else float("nan")
                rec = per_method.setdefault(method, {"acc": [], "ece": [], "mmc": []})
                rec["acc"].append(compute_accuracy(probs, y))
                rec["ece"].append(compute_ece(probs, y, num_bins))
                rec["mmc"].append(mmc_inc)
        for method, vals in per_method.items():
            cells.append(
                SweepCell(
                    kind=kind,
                    severity=severity,
                    method=method,
                    accuracy=float(np.mean(vals["acc"])),
                    ece=float(np.mean(vals["ece"])),
                    mmc_incorrect=float(np.nanmean(vals["mmc"])),
                )
            )
    return cells


def severity_sweep(
    models: dict,
    test: LabeledDataset,
    calibrators: dict,
    num_bins: int = 15,
    corruption_seed: int = 0,
    kinds: tuple = KINDS,
    predict_fn=None,
    workers: int = 1,
) -> SweepReport:
    """Corrupt the test split at every (kind, severity), push it through
    every trained model, and score each calibration method.

    `models` maps seed -> TrainedModel; `calibrators` maps method name ->
    {seed -> fitted calibrator}; the baseline (plain softmax) is always
    included. Calibrators must have been fitted on clean Env1-Valid data.
    Kinds evaluate independently (optionally in parallel workers); cells
    are assembled in kind order either way.
    """
    from .parallel import map_jobs

    for method, per_seed in calibrators.items():
        for seed, cal in per_seed.items():
            if cal.fit_split != ENV1_VALID:
                raise ValueError(
                    f"{method} calibrator for seed {seed} was fitted on {cal.fit_split!r}; "
                    f"only clean {ENV1_VALID} fits are allowed in the sweep"
                )
    ctx = {"models": models, "test": test, "calibrators": calibrators, "num_bins": num_bins,
           "corruption_seed": corruption_seed, "predict_fn": predict_fn}
    per_kind = map_jobs(_sweep_kind_job, list(kinds), ctx, workers)
    cells = [cell for kind_cells in per_kind for cell in kind_cells]
    return SweepReport(tuple(cells))
