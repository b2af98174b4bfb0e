"""Experiment orchestration: a JSON-serializable config drives generation,
training, calibration, reporting, corruption sweeps, and OOD analysis with
persisted artifacts.

Stage outputs are content-addressed: each stage writes a stamp with the
hash of the config slice it depends on, and reruns with an unchanged slice
skip the work. All report files are byte-deterministic functions of the
config; wall-clock latency measurement is the one exception and can be
switched off (`measure_latency`), which the reproducibility check uses.

Seed-level jobs (training, calibration) run in parallel worker processes
when the platform supports fork; results do not depend on the schedule.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import calibrators as cal_mod
from .core import (
    ENV1_TEST,
    ENV1_TRAIN,
    ENV1_VALID,
    ENV2_TEST,
    OOD,
    LabeledDataset,
    dumps_json17,
    load_logit_dataset,
    save_logit_dataset,
    softmax,
    split_disjointness_check,
)
from .corruptions import severity_sweep
from .parallel import JOB_CTX as _JOB_CTX
from .parallel import limit_blas_in_worker as _limit_blas_in_worker
from .parallel import map_jobs as _map_jobs
from .metrics import EvalReport, compute_mmc, evaluate
from .network import ModelSpec, TrainConfig, load_model, predict_logits, save_model, train_single
from .simulate import (
    default_scene,
    generate_env1_splits,
    generate_ood,
    generate_split,
    load_roi_dataset,
    save_roi_dataset,
)

METHODS = ("baseline", "ts", "imax", "gp")
SPLIT_FILES = {ENV1_TRAIN: "env1-train", ENV1_VALID: "env1-valid", ENV1_TEST: "env1-test",
               ENV2_TEST: "env2-test", OOD: "ood"}
ALL_STAGES = ("gen", "train", "calibrate", "report", "sweep", "ood")


@dataclass(frozen=True)
class DatasetConfig:
    k: int = 7
    grid: tuple[int, int] = (32, 32)
    env1_train: int = 8000
    env1_valid: int = 600
    env1_test: int = 1500
    env2_test: int = 1500
    ood: int = 600
    repetitions: int = 8
    frames_per_repetition: int = 110
    env2_repetitions: int = 2
    noise_floor_db: float = -12.0
    env2_noise_offset_db: float = 3.0


@dataclass(frozen=True)
class CalibrationConfig:
    imax_bins: int = 15
    gp_knots: int = 20
    gp_samples: int = 30
    gp_steps: int = 2000
    gp_step_size: float = 0.01


@dataclass(frozen=True)
class MetricConfig:
    num_bins: int = 15


@dataclass(frozen=True)
class ExperimentConfig:
    master_seed: int = 7
    out_dir: str = "runs/default"
    stages: tuple[str, ...] = ALL_STAGES
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    corruption_seed: int = 0
    measure_latency: bool = True
    workers: int = 0  # 0 = min(2, cpu count)

    def __post_init__(self):
        for stage in self.stages:
            if stage not in ALL_STAGES:
                raise ValueError(f"unknown stage {stage!r}; valid: {ALL_STAGES}")
        if self.model.k != self.dataset.k:
            raise ValueError(f"model K={self.model.k} != dataset K={self.dataset.k}")
        if tuple(self.model.input_hw) != tuple(self.dataset.grid):
            raise ValueError("model input size must match the ROI grid")

    def to_jsonable(self) -> dict:
        def conv(obj):
            if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
                return {f.name: conv(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
            if isinstance(obj, tuple):
                return [conv(v) for v in obj]
            return obj

        return conv(self)

    @staticmethod
    def from_jsonable(obj: dict) -> "ExperimentConfig":
        def build(cls, data):
            names = {f.name for f in dataclasses.fields(cls)}
            unknown = set(data) - names
            if unknown:
                raise ValueError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
            kwargs = {}
            for f in dataclasses.fields(cls):
                if f.name not in data:
                    continue
                v = data[f.name]
                if dataclasses.is_dataclass(f.type) or f.name in ("dataset", "model", "train", "calibration", "metrics"):
                    sub = {"dataset": DatasetConfig, "model": ModelSpec, "train": TrainConfig,
                           "calibration": CalibrationConfig, "metrics": MetricConfig}[f.name]
                    kwargs[f.name] = build(sub, v)
                elif isinstance(v, list):
                    kwargs[f.name] = tuple(tuple(x) if isinstance(x, list) else x for x in v)
                else:
                    kwargs[f.name] = v
            return cls(**kwargs)

        return build(ExperimentConfig, obj)

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_jsonable(), indent=2) + "\n", encoding="utf-8")

    @staticmethod
    def load(path: Path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config not found: {path}")
        return ExperimentConfig.from_jsonable(json.loads(path.read_text(encoding="utf-8")))


def _hash_slice(obj) -> str:
    return hashlib.sha256(dumps_json17(obj).encode("utf-8")).hexdigest()[:16]


class Workspace:
    """Output-directory layout plus stage stamps."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.root = Path(cfg.out_dir)

    def dir(self, name: str) -> Path:
        d = self.root / name
        d.mkdir(parents=True, exist_ok=True)
        return d

    def data_file(self, split: str) -> Path:
        return self.dir("data") / f"{SPLIT_FILES[split]}.rois"

    def logit_file(self, split: str, seed: int) -> Path:
        return self.dir("logits") / f"{SPLIT_FILES[split]}-seed{seed:02d}.csv"

    def checkpoint(self, seed: int) -> Path:
        return self.dir("models") / f"seed{seed:02d}.ckpt"

    def train_log(self, seed: int) -> Path:
        return self.dir("logs") / f"train-seed{seed:02d}.csv"

    def calibrator_file(self, method: str, seed: int) -> Path:
        return self.dir("calibrators") / f"{method}-seed{seed:02d}.json"

    def report_dir(self) -> Path:
        return self.dir("report")

    # -- stage stamps ------------------------------------------------------
    def _stamp_path(self, stage: str) -> Path:
        return self.dir(".stamps") / f"{stage}.json"

    def stage_hash(self, stage: str) -> str:
        c = self.cfg
        slices = {
            "gen": [c.master_seed, c.to_jsonable()["dataset"]],
            "train": [c.master_seed, c.to_jsonable()["dataset"], c.to_jsonable()["model"],
                      c.to_jsonable()["train"]],
        }
        slices["calibrate"] = slices["train"] + [c.to_jsonable()["calibration"]]
        slices["report"] = slices["calibrate"] + [c.to_jsonable()["metrics"], c.measure_latency]
        slices["sweep"] = slices["calibrate"] + [c.to_jsonable()["metrics"], c.corruption_seed]
        slices["ood"] = slices["calibrate"] + [c.to_jsonable()["metrics"]]
        return _hash_slice(slices[stage])

    def is_done(self, stage: str) -> bool:
        p = self._stamp_path(stage)
        if not p.exists():
            return False
        try:
            stamp = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            return False
        if stamp.get("hash") != self.stage_hash(stage):
            return False
        return all((self.root / f).exists() for f in stamp.get("files", []))

    def mark_done(self, stage: str, files: list[Path]) -> None:
        rel = [str(Path(f).relative_to(self.root)) for f in files]
        self._stamp_path(stage).write_text(
            json.dumps({"hash": self.stage_hash(stage), "files": rel}, indent=1), encoding="utf-8"
        )


def _worker_count(cfg: ExperimentConfig) -> int:
    if cfg.workers > 0:
        return cfg.workers
    return min(2, os.cpu_count() or 1)




# ---------------------------------------------------------------------------
# stages


def stage_gen(cfg: ExperimentConfig) -> list[Path]:
    ws = Workspace(cfg)
    if ws.is_done("gen"):
        return []
    d = cfg.dataset
    scene1 = default_scene("Env1", cfg.master_seed, k=d.k, noise_floor_db=d.noise_floor_db,
                           repetitions=d.repetitions, frames_per_repetition=d.frames_per_repetition)
    counts = {ENV1_TRAIN: d.env1_train, ENV1_VALID: d.env1_valid, ENV1_TEST: d.env1_test}
    splits = generate_env1_splits(scene1, counts, grid=d.grid)
    scene2 = default_scene("Env2", cfg.master_seed, k=d.k,
                           noise_floor_db=d.noise_floor_db + d.env2_noise_offset_db,
                           repetitions=d.env2_repetitions,
                           frames_per_repetition=d.frames_per_repetition)
    splits[ENV2_TEST] = generate_split(scene2, ENV2_TEST, d.env2_test,
                                       tuple(range(d.env2_repetitions)), grid=d.grid)
    splits[OOD] = generate_ood(d.ood, cfg.master_seed, noise_floor_db=d.noise_floor_db, grid=d.grid)
    overlap = split_disjointness_check(list(splits.values()))
    if overlap:
        raise RuntimeError(f"generated splits share sample_ids: {sorted(overlap)[:5]}...")
    files = []
    for split, ds in splits.items():
        path = ws.data_file(split)
        save_roi_dataset(ds, path, master_seed=cfg.master_seed)
        files.extend([path, path.with_suffix(".meta.json")])
        print(f"[gen] {split}: {len(ds)} samples -> {path}")
    ws.mark_done("gen", files)
    return files


def _train_seed_job(seed: int):
    _limit_blas_in_worker()
    ctx = _JOB_CTX
    model = train_single(ctx["spec"], ctx["train_cfg"], ctx["train_ds"], ctx["valid_ds"], seed)
    logit_sets = {split: predict_logits(model, ds) for split, ds in ctx["predict_sets"].items()}
    return seed, model, logit_sets


def stage_train(cfg: ExperimentConfig) -> list[Path]:
    ws = Workspace(cfg)
    if ws.is_done("train"):
        return []
    datasets = {}
    for split in (ENV1_TRAIN, ENV1_VALID, ENV1_TEST, ENV2_TEST, OOD):
        path = ws.data_file(split)
        if not path.exists():
            raise FileNotFoundError(f"dataset missing: {path} (run the gen stage first)")
        datasets[split] = load_roi_dataset(path)
    predict_sets = {s: datasets[s] for s in (ENV1_VALID, ENV1_TEST, ENV2_TEST, OOD)}
    ctx = {"spec": cfg.model, "train_cfg": cfg.train, "train_ds": datasets[ENV1_TRAIN],
           "valid_ds": datasets[ENV1_VALID], "predict_sets": predict_sets}
    results = _map_jobs(_train_seed_job, list(cfg.train.seeds), ctx, _worker_count(cfg))
    files = []
    for seed, model, logit_sets in results:
        ckpt = ws.checkpoint(seed)
        save_model(model, ckpt)
        files.append(ckpt)
        log = ws.train_log(seed)
        with open(log, "w", encoding="utf-8") as fh:
            fh.write("epoch,train_loss,valid_acc\n")
            for epoch, loss, acc in model.history:
                loss_txt = "" if not np.isfinite(loss) else f"{loss:.6f}"
                fh.write(f"{epoch},{loss_txt},{acc:.6f}\n")
        files.append(log)
        for split, ds in logit_sets.items():
            path = ws.logit_file(split, seed)
            save_logit_dataset(ds, path, generator_seed=seed)
            files.extend([path, path.with_suffix(".meta.json")])
        best = max(a for _, _, a in model.history)
        print(f"[train] seed {seed}: best valid acc {best:.3f} (epoch {model.best_epoch})")
    ws.mark_done("train", files)
    return files


def _calibrate_seed_job(seed: int):
    _limit_blas_in_worker()
    ctx = _JOB_CTX
    val = ctx["valid_logits"][seed]
    c: CalibrationConfig = ctx["calib_cfg"]
    ts = cal_mod.fit_temperature(val)
    imax = cal_mod.fit_imax(val, num_bins=c.imax_bins)
    gp = cal_mod.fit_gp_scaling(val, num_knots=c.gp_knots, num_samples=c.gp_samples,
                                steps=c.gp_steps, step_size=c.gp_step_size, seed=seed)
    return seed, {"ts": ts, "imax": imax, "gp": gp}


def stage_calibrate(cfg: ExperimentConfig) -> list[Path]:
    ws = Workspace(cfg)
    if ws.is_done("calibrate"):
        return []
    valid_logits = {}
    for seed in cfg.train.seeds:
        path = ws.logit_file(ENV1_VALID, seed)
        if not path.exists():
            raise FileNotFoundError(f"validation logits missing: {path} (run the train stage first)")
        ds = load_logit_dataset(path)
        if ds.split_tag != ENV1_VALID:
            raise ValueError(f"{path}: refusing to calibrate on split {ds.split_tag!r}")
        valid_logits[seed] = ds
    ctx = {"valid_logits": valid_logits, "calib_cfg": cfg.calibration}
    results = _map_jobs(_calibrate_seed_job, list(cfg.train.seeds), ctx, _worker_count(cfg))
    files = []
    fit_rows = []
    for seed, cals in results:
        for method, cal in cals.items():
            path = ws.calibrator_file(method, seed)
            cal_mod.save_calibrator(cal, path)
            files.append(path)
        fit_rows.append(
            f"{seed},{cals['ts'].temperature:.6f},{np.mean(cals['imax'].mi):.6f},{cals['gp'].final_nll:.6f}"
        )
        print(f"[calibrate] seed {seed}: T={cals['ts'].temperature:.3f} "
              f"mean_MI={np.mean(cals['imax'].mi):.4f} gp_nll={cals['gp'].final_nll:.4f}")
    log = ws.dir("calibrators") / "fit-log.csv"
    log.write_text("seed,temperature,imax_mean_mi,gp_final_nll\n" + "\n".join(fit_rows) + "\n",
                   encoding="utf-8")
    files.append(log)
    ws.mark_done("calibrate", files)
    return files


def load_calibrators(ws: Workspace, seeds) -> dict[str, dict[int, object]]:
    out: dict[str, dict[int, object]] = {m: {} for m in METHODS if m != "baseline"}
    for method in out:
        for seed in seeds:
            path = ws.calibrator_file(method, seed)
            if not path.exists():
                raise FileNotFoundError(f"calibrator missing: {path} (run the calibrate stage first)")
            out[method][seed] = cal_mod.load_calibrator(path)
    return out


def _merged_logits(ws: Workspace, split: str, seeds) -> LabeledDataset:
    """Concatenate per-seed logit files into one dataset; sample_ids get a
    seed prefix so records of the same input stay distinguishable."""
    from .core import LogitRecord

    records = []
    for seed in seeds:
        path = ws.logit_file(split, seed)
        if not path.exists():
            raise FileNotFoundError(f"logits missing: {path} (run the train stage first)")
        ds = load_logit_dataset(path)
        for r in ds.records:
            records.append(LogitRecord(f"seed{seed:02d}/{r.sample_id}", r.label, r.logits, r.seed_id))
    return LabeledDataset(tuple(records), split)


def measure_latency(calibrators: dict[str, dict[int, object]], probe: LabeledDataset,
                    warmup: int = 100, applications: int = 1000) -> dict[str, dict[str, float]]:
    """Median/mean microseconds per single-record apply, after warm-up."""
    z = probe.logit_matrix()
    out = {}
    for method, per_seed in calibrators.items():
        cal = per_seed[min(per_seed)]
        rows = [z[i % z.shape[0]][None, :] for i in range(applications)]
        for i in range(warmup):
            cal.apply_matrix(rows[i % len(rows)])
        times = np.empty(applications)
        for i, row in enumerate(rows):
            t0 = time.perf_counter()
            cal.apply_matrix(row)
            times[i] = time.perf_counter() - t0
        out[method] = {"mean_us": float(times.mean() * 1e6), "median_us": float(np.median(times) * 1e6)}
    return out


def _write_report_csvs(report: EvalReport, method: str, split_file: str, rep_dir: Path) -> list[Path]:
    files = []
    if report.reliability is not None:
        p = rep_dir / f"reliability_{method}_{split_file}.csv"
        with open(p, "w", encoding="utf-8") as fh:
            fh.write("bin_index,confidence,accuracy,count\n")
            for i, conf, acc, count in report.reliability.rows():
                fh.write(f"{i},{conf:.6f},{acc:.6f},{count}\n")
        files.append(p)
    hist = report.histogram
    if hist is not None:
        p = rep_dir / f"hist_{method}_{split_file}.csv"
        centers = hist.centers()
        with open(p, "w", encoding="utf-8") as fh:
            fh.write("bin_index,confidence,accuracy,count\n")
            for i in range(hist.num_bins):
                total = int(hist.correct[i] + hist.incorrect[i] + hist.ood[i])
                acc = float(hist.correct[i] / (hist.correct[i] + hist.incorrect[i])) \
                    if (hist.correct[i] + hist.incorrect[i]) > 0 else 0.0
                fh.write(f"{i},{centers[i]:.6f},{acc:.6f},{total}\n")
        files.append(p)
    return files


def stage_report(cfg: ExperimentConfig) -> list[Path]:
    ws = Workspace(cfg)
    if ws.is_done("report"):
        return []
    seeds = cfg.train.seeds
    calibrators = load_calibrators(ws, seeds)
    rep_dir = ws.report_dir()
    files = []
    reports: dict[tuple[str, str], EvalReport] = {}
    for split, split_file in ((ENV1_TEST, "env1-test"), (ENV2_TEST, "env2-test")):
        ds = _merged_logits(ws, split, seeds)
        for method in METHODS:
            cal = None if method == "baseline" else calibrators[method]
            rep = evaluate(ds, cal, num_bins=cfg.metrics.num_bins, method=method)
            reports[(method, split_file)] = rep
            p = rep_dir / f"eval_{method}_{split_file}.json"
            p.write_text(json.dumps(rep.to_jsonable(), indent=2) + "\n", encoding="utf-8")
            files.append(p)
            files.extend(_write_report_csvs(rep, method, split_file, rep_dir))

    # OOD MMC table with the uniform 1/K reference
    ood_ds = _merged_logits(ws, OOD, seeds)
    k = ood_ds.k
    ood_rows = ["method,mmc_ood_mean,mmc_ood_std,uniform_reference"]
    for method in METHODS:
        cal = None if method == "baseline" else calibrators[method]
        rep = evaluate(ood_ds, cal, num_bins=cfg.metrics.num_bins, method=method)
        ood_rows.append(f"{method},{rep.mmc_ood.mean:.6f},{rep.mmc_ood.std:.6f},{1.0 / k:.6f}")
    p = rep_dir / "ood_mmc.csv"
    p.write_text("\n".join(ood_rows) + "\n", encoding="utf-8")
    files.append(p)

    latency = None
    if cfg.measure_latency:
        probe = load_logit_dataset(ws.logit_file(ENV1_TEST, seeds[0]))
        latency = measure_latency(calibrators, probe)
        p = rep_dir / "latency.csv"
        with open(p, "w", encoding="utf-8") as fh:
            fh.write("method,mean_us,median_us\n")
            for method in ("ts", "imax", "gp"):
                fh.write(f"{method},{latency[method]['mean_us']:.3f},{latency[method]['median_us']:.3f}\n")
        files.append(p)

    table = ["method,time_us,env1_acc,env1_ece,env1_mmc_incorrect,env2_acc,env2_ece,env2_mmc_incorrect"]
    for method in METHODS:
        if method == "baseline" or latency is None:
            t = "/"
        else:
            t = f"{latency[method]['median_us']:.2f}"
        c1 = reports[(method, "env1-test")].table_cells()
        c2 = reports[(method, "env2-test")].table_cells()
        table.append(",".join([method, t, *c1, *c2]))
    p = rep_dir / "main_table.csv"
    p.write_text("\n".join(table) + "\n", encoding="utf-8")
    files.append(p)
    print(f"[report] wrote {len(files)} files under {rep_dir}")
    ws.mark_done("report", files)
    return files


def stage_sweep(cfg: ExperimentConfig) -> list[Path]:
    ws = Workspace(cfg)
    if ws.is_done("sweep"):
        return []
    test_path = ws.data_file(ENV1_TEST)
    if not test_path.exists():
        raise FileNotFoundError(f"dataset missing: {test_path} (run the gen stage first)")
    test = load_roi_dataset(test_path)
    models = {}
    for seed in cfg.train.seeds:
        ckpt = ws.checkpoint(seed)
        if not ckpt.exists():
            raise FileNotFoundError(f"checkpoint missing: {ckpt} (run the train stage first)")
        models[seed] = load_model(ckpt)
    calibrators = load_calibrators(ws, cfg.train.seeds)
    report = severity_sweep(models, test, calibrators, num_bins=cfg.metrics.num_bins,
                            corruption_seed=cfg.corruption_seed, workers=_worker_count(cfg))
    p = ws.report_dir() / "corruption_sweep.csv"
    p.write_text("\n".join(report.csv_rows()) + "\n", encoding="utf-8")
    print(f"[sweep] wrote {p}")
    ws.mark_done("sweep", [p])
    return [p]


def stage_ood(cfg: ExperimentConfig) -> list[Path]:
    ws = Workspace(cfg)
    if ws.is_done("ood"):
        return []
    seeds = cfg.train.seeds
    calibrators = load_calibrators(ws, seeds)
    ood_ds = _merged_logits(ws, OOD, seeds)
    z = ood_ds.logit_matrix()
    seed_ids = ood_ds.seed_ids()
    rep_dir = ws.report_dir()
    files = []
    rows = ["method,mmc_ood_mean,mmc_ood_std,uniform_reference"]
    k = ood_ds.k
    for method in METHODS:
        per_seed_mmc = []
        for seed in seeds:
            mask = seed_ids == seed
            if method == "baseline":
                probs = softmax(z[mask])
            else:
                probs = calibrators[method][seed].apply_matrix(z[mask])
            per_seed_mmc.append(compute_mmc(probs))
        mean = float(np.mean(per_seed_mmc))
        std = float(np.std(per_seed_mmc, ddof=1)) if len(per_seed_mmc) > 1 else 0.0
        rows.append(f"{method},{mean:.6f},{std:.6f},{1.0 / k:.6f}")
        rep = evaluate(ood_ds, None if method == "baseline" else calibrators[method],
                       num_bins=cfg.metrics.num_bins, method=method)
        files.extend(_write_report_csvs(rep, method, "ood", rep_dir))
    p = rep_dir / "ood_analysis.csv"
    p.write_text("\n".join(rows) + "\n", encoding="utf-8")
    files.append(p)
    print(f"[ood] wrote {p}")
    ws.mark_done("ood", files)
    return files


STAGE_FNS = {
    "gen": stage_gen,
    "train": stage_train,
    "calibrate": stage_calibrate,
    "report": stage_report,
    "sweep": stage_sweep,
    "ood": stage_ood,
}


def run_pipeline(cfg: ExperimentConfig, stages: tuple[str, ...] | None = None) -> None:
    ws = Workspace(cfg)
    ws.root.mkdir(parents=True, exist_ok=True)
    cfg.save(ws.root / "config.json")
    for stage in stages or cfg.stages:
        t0 = time.time()
        produced = STAGE_FNS[stage](cfg)
        status = "done" if produced else "cached"
        print(f"[{stage}] {status} in {time.time() - t0:.1f}s")
