"""Synthetic range-azimuth ROI generator.

Stands in for a real measurement pipeline: each object is a cloud of point
scatterers with class-specific count, extent, and reflectivity ranges; an
instance seed freezes one concrete object (so "the same bicycle" reappears
across frames), and the sensor drives past on a weaving trajectory, so
range, aspect, and SNR vary per frame. Two scenes provide the domain
shift: Env2 uses different object instances, a different layout and
driving pattern, and a +3 dB noise floor. Five out-of-distribution object
types live in parameter boxes disjoint from every in-distribution class.

ROIs are 2-D dB magnitude maps, clamped to [-60, +40] dB, stored as
float32 so the binary file round-trip is bit exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import (
    ENV1_TEST,
    ENV1_TRAIN,
    ENV1_VALID,
    OOD,
    OOD_LABEL,
    LabeledDataset,
    dumps_json17,
)
from .kernels import render_peaks

DB_FLOOR = -60.0
DB_CEIL = 40.0
MAX_RANGE_M = 30.0
FOV_DEG = 45.0

RANGE_SPAN_M = 12.0  # ROI window extent along range
AZIMUTH_SPAN_DEG = 24.0
REFERENCE_RANGE_M = 15.0  # angular extents are specified at this range

_MIN_POWER = 10.0 ** (DB_FLOOR / 10.0)


@dataclass(frozen=True)
class SpectrumROI:
    """One range-azimuth magnitude patch (dB) with its class metadata."""

    sample_id: str
    label: int
    magnitude: np.ndarray  # (H, W) float32 dB
    scene_id: int
    frame_id: int
    range_m: float

    def __post_init__(self):
        mag = np.asarray(self.magnitude, dtype=np.float32)
        if not np.all(np.isfinite(mag)):
            raise ValueError(f"sample {self.sample_id!r}: non-finite magnitudes")
        if mag.min() < DB_FLOOR - 1e-3 or mag.max() > DB_CEIL + 1e-3:
            raise ValueError(f"sample {self.sample_id!r}: magnitudes outside [{DB_FLOOR}, {DB_CEIL}] dB")
        if not 0.0 < self.range_m <= MAX_RANGE_M:
            raise ValueError(f"sample {self.sample_id!r}: range {self.range_m} m outside (0, {MAX_RANGE_M}]")
        mag.flags.writeable = False
        object.__setattr__(self, "magnitude", mag)
        object.__setattr__(self, "range_m", float(np.float32(self.range_m)))


@dataclass(frozen=True)
class ObjectModel:
    """Parameter ranges for one object type; `instance_seed` freezes one
    concrete instance (scatterer layout and reflectivities) within them."""

    label: int
    name: str
    scatterer_count: tuple[int, int]
    extent_range_m: tuple[float, float]
    extent_az_deg: tuple[float, float]
    reflect_mean_db: tuple[float, float]
    reflect_spread_db: tuple[float, float]
    instance_seed: int = 0

    def __post_init__(self):
        if self.scatterer_count[0] < 1:
            raise ValueError(f"{self.name}: scatterer count must be >= 1")
        for lo, hi in (self.extent_range_m, self.extent_az_deg):
            if lo <= 0 or hi < lo:
                raise ValueError(f"{self.name}: extents must be positive ranges")

    def parameter_box(self) -> dict[str, tuple[float, float]]:
        return {
            "scatterer_count": tuple(map(float, self.scatterer_count)),
            "extent_range_m": self.extent_range_m,
            "extent_az_deg": self.extent_az_deg,
            "reflect_mean_db": self.reflect_mean_db,
            "reflect_spread_db": self.reflect_spread_db,
        }

    def instance(self):
        """Concrete scatterer offsets (m, deg) and base reflectivities (dB)."""
        rng = np.random.default_rng(np.random.SeedSequence([911, self.instance_seed]))
        count = int(rng.integers(self.scatterer_count[0], self.scatterer_count[1] + 1))
        ext_r = rng.uniform(*self.extent_range_m)
        ext_a = rng.uniform(*self.extent_az_deg)
        mean_db = rng.uniform(*self.reflect_mean_db)
        spread = rng.uniform(*self.reflect_spread_db)
        off_r = rng.uniform(-ext_r / 2, ext_r / 2, count)
        off_a = rng.uniform(-ext_a / 2, ext_a / 2, count)
        base_db = rng.normal(mean_db, spread, count)
        return off_r, off_a, base_db


CLASS_NAMES = ("car", "construction-barrier", "motorbike", "baby-carriage", "bicycle", "pedestrian", "stop-sign")

# neighboring classes overlap on purpose; motorbike and bicycle share
# almost the same box, so that pair confuses even a well-trained model
_CLASS_PARAMS = (
    # count        ext_r         ext_az        refl_mean     spread
    ((10, 16), (3.0, 4.6), (7.0, 11.0), (4.0, 10.0), (2.0, 4.0)),
    ((7, 12), (0.6, 1.2), (10.0, 16.0), (1.0, 7.0), (2.0, 4.0)),
    ((4, 8), (1.5, 2.2), (2.2, 4.0), (-1.0, 5.0), (2.0, 4.0)),
    ((3, 6), (0.7, 1.3), (2.0, 3.5), (-5.0, 1.0), (2.0, 4.0)),
    ((4, 8), (1.4, 2.1), (2.0, 3.6), (-1.0, 4.0), (2.0, 4.0)),
    ((2, 4), (0.4, 0.9), (1.3, 2.4), (-8.0, -2.0), (1.0, 3.0)),
    ((1, 3), (0.1, 0.4), (0.9, 1.8), (5.0, 13.0), (1.0, 3.0)),
)

OOD_NAMES = ("corner-reflector", "sandbag", "concrete-block", "wire-fence", "barrel-cluster")

# each box is disjoint from every in-distribution class box in >= 1 dimension
_OOD_PARAMS = (
    ((2, 4), (0.3, 0.6), (1.5, 2.5), (22.0, 30.0), (0.5, 1.5)),   # reflectivity above all classes
    ((3, 6), (0.8, 1.4), (2.0, 3.5), (-20.0, -12.0), (1.0, 2.0)),  # reflectivity below all classes
    ((24, 30), (1.5, 2.5), (3.0, 5.0), (0.0, 6.0), (1.0, 3.0)),    # scatterer count above all classes
    ((6, 10), (0.4, 0.8), (25.0, 32.0), (0.0, 4.0), (1.0, 3.0)),   # azimuth extent above all classes
    ((8, 12), (6.5, 8.5), (4.0, 6.0), (2.0, 8.0), (1.0, 3.0)),     # range extent above all classes
)


def class_models(k: int = 7, instance_salt: int = 0) -> tuple[ObjectModel, ...]:
    if not 2 <= k <= len(_CLASS_PARAMS):
        raise ValueError(f"K must be in [2, {len(_CLASS_PARAMS)}]")
    return tuple(
        ObjectModel(i, CLASS_NAMES[i], *(_CLASS_PARAMS[i]), instance_seed=instance_salt + i)
        for i in range(k)
    )


def ood_models(instance_salt: int = 0) -> tuple[ObjectModel, ...]:
    return tuple(
        ObjectModel(OOD_LABEL, OOD_NAMES[i], *(_OOD_PARAMS[i]), instance_seed=instance_salt + 1000 + i)
        for i in range(len(_OOD_PARAMS))
    )


def parameter_boxes_disjoint(a: ObjectModel, b: ObjectModel) -> bool:
    """True when the two parameter boxes do not intersect (differ in >= 1 dim)."""
    for dim, (lo_a, hi_a) in a.parameter_box().items():
        lo_b, hi_b = b.parameter_box()[dim]
        if hi_a < lo_b or hi_b < lo_a:
            return True
    return False


@dataclass(frozen=True)
class DrivePattern:
    """Sensor trajectory: straight drive along +y with a sinusoidal weave;
    each repetition gets a small seeded pose offset and weave phase."""

    start_y: float = -4.5
    speed_m_per_frame: float = 0.075
    weave_amp_m: float = 1.0
    weave_period_frames: float = 40.0
    rep_jitter_m: float = 0.25  # bounded uniform, so FOV margins stay provable


@dataclass(frozen=True)
class SceneConfig:
    """Static objects plus a driving pattern; Env1 and Env2 configs use
    disjoint instance seeds, layouts, and noise floors."""

    env: str
    scene_id: int
    objects: tuple  # of (ObjectModel, x_m, y_m)
    drive: DrivePattern
    noise_floor_db: float
    repetitions: int
    frames_per_repetition: int
    master_seed: int

    def pose(self, rep: int, frame: int) -> tuple[float, float]:
        rng = np.random.default_rng(np.random.SeedSequence([self.master_seed, self.scene_id, 101, rep]))
        dx0, dy0 = rng.uniform(-self.drive.rep_jitter_m, self.drive.rep_jitter_m, 2)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        d = self.drive
        x = d.weave_amp_m * math.sin(2.0 * math.pi * frame / d.weave_period_frames + phase) + dx0
        y = d.start_y + d.speed_m_per_frame * frame + dy0
        return x, y


def _default_layout(rng: np.random.Generator, n: int) -> list[tuple[float, float]]:
    # box chosen so every drive pose keeps every object within 30 m / +-45 deg
    xs = rng.uniform(-4.0, 4.0, n)
    ys = rng.uniform(10.5, 23.5, n)
    return list(zip(xs.tolist(), ys.tolist()))


def default_scene(env: str, master_seed: int, k: int = 7, noise_floor_db: float = -12.0,
                  repetitions: int = 8, frames_per_repetition: int = 110,
                  instances_per_class: int = 3) -> SceneConfig:
    """Build the Env1 or Env2 scene. Env2 shifts instance seeds, layout,
    driving pattern, and (by convention at the call site) the noise floor."""
    if env not in ("Env1", "Env2"):
        raise ValueError(f"env must be Env1 or Env2, got {env!r}")
    scene_id = 1 if env == "Env1" else 2
    salt1 = master_seed * 10
    salt2 = master_seed * 10 + 5000
    # the second scene swaps object instances for cars, motorbikes,
    # bicycles and pedestrians; the other classes reuse scene-1 instances
    swapped = {0, 2, 4, 5}
    models = []
    for copy in range(instances_per_class):
        for m in class_models(k, instance_salt=salt1):
            salt = salt2 if env == "Env2" and m.label in swapped else salt1
            models.append(replace(m, instance_seed=salt + m.label + 100 * copy))
    rng = np.random.default_rng(np.random.SeedSequence([master_seed, scene_id, 7]))
    layout = _default_layout(rng, len(models))
    drive = DrivePattern() if env == "Env1" else DrivePattern(
        start_y=-4.0, speed_m_per_frame=0.06, weave_amp_m=1.3, weave_period_frames=29.0)
    return SceneConfig(
        env=env,
        scene_id=scene_id,
        objects=tuple((m, x, y) for m, (x, y) in zip(models, layout)),
        drive=drive,
        noise_floor_db=noise_floor_db,
        repetitions=repetitions,
        frames_per_repetition=frames_per_repetition,
        master_seed=master_seed,
    )


def object_geometry(pose: tuple[float, float], placement: tuple[float, float]):
    dx = placement[0] - pose[0]
    dy = placement[1] - pose[1]
    range_m = math.hypot(dx, dy)
    azimuth_deg = math.degrees(math.atan2(dx, dy))
    return range_m, azimuth_deg


def generate_roi(
    model: ObjectModel | None,
    pose: tuple[float, float],
    placement: tuple[float, float],
    noise_floor_db: float,
    rng_seed,
    grid: tuple[int, int] = (32, 32),
    sample_id: str = "roi",
    scene_id: int = 0,
    frame_id: int = 0,
    scint_db: float = 3.0,
    fade_prob: float = 0.3,
    fade_db: tuple[float, float] = (6.0, 14.0),
) -> SpectrumROI:
    """Render one object observation: tapered-sinc power peaks per
    scatterer plus exponential noise at the floor, converted to dB.

    A seeded fraction of frames (`fade_prob`) is rendered with the signal
    faded by a uniform draw from `fade_db` — partially obscured views whose
    label stays unchanged, mirroring how measurement labels ignore SNR.
    `model=None` forces a pure-noise ROI (diagnostics). Deterministic
    given `rng_seed`; raises if the object sits outside the 30 m /
    +-45 deg field of view.
    """
    h, w = grid
    range_m, azimuth_deg = object_geometry(pose, placement)
    if range_m > MAX_RANGE_M or range_m <= 0.0:
        raise ValueError(f"object at {range_m:.1f} m outside (0, {MAX_RANGE_M}] m")
    if abs(azimuth_deg) > FOV_DEG:
        raise ValueError(f"object at {azimuth_deg:.1f} deg outside +-{FOV_DEG} deg field of view")
    rng = np.random.default_rng(rng_seed)
    r_res = RANGE_SPAN_M / h
    a_res = AZIMUTH_SPAN_DEG / w
    power = np.zeros((h, w))
    if model is not None:
        off_r, off_a, base_db = model.instance()
        ang_scale = float(np.clip(REFERENCE_RANGE_M / range_m, 0.4, 3.0))
        scale_r, scale_a = rng.uniform(0.8, 1.2, 2)
        jit_r, jit_a = rng.uniform(-0.5, 0.5, 2)
        scint = rng.normal(0.0, scint_db, len(base_db))
        fade = rng.uniform(*fade_db) if rng.uniform() < fade_prob else 0.0
        rbin = (h - 1) / 2.0 + (off_r * scale_r) / r_res + jit_r
        abin = (w - 1) / 2.0 + (off_a * scale_a * ang_scale) / a_res + jit_a
        gain_db = -20.0 * math.log10(range_m / REFERENCE_RANGE_M)
        p_lin = 10.0 ** ((base_db + scint + gain_db - fade) / 10.0)
        power = render_peaks(rbin, abin, p_lin, h, w)
    noise_power = 10.0 ** (noise_floor_db / 10.0)
    if noise_power > 0.0:
        power = power + rng.exponential(noise_power, size=(h, w))
    db = 10.0 * np.log10(np.maximum(power, _MIN_POWER))
    db = np.clip(db, DB_FLOOR, DB_CEIL)
    return SpectrumROI(
        sample_id=sample_id,
        label=OOD_LABEL if model is None else model.label,
        magnitude=db.astype(np.float32),
        scene_id=scene_id,
        frame_id=frame_id,
        range_m=range_m,
    )


def generate_split(
    scene: SceneConfig,
    split_tag: str,
    count: int,
    reps: tuple[int, ...],
    grid: tuple[int, int] = (32, 32),
) -> LabeledDataset:
    """Materialize `count` samples from the given repetition indices.

    Samples enumerate (repetition, frame, object) in a fixed order, so the
    class balance is uniform up to the trailing partial frame, and frames
    of one repetition never leak into another split.
    """
    if not reps:
        raise ValueError(f"{split_tag}: no repetitions assigned")
    capacity = len(reps) * scene.frames_per_repetition * len(scene.objects)
    if count > capacity:
        raise ValueError(
            f"{split_tag}: requested {count} samples but only {capacity} frames are generated "
            f"({len(reps)} repetitions x {scene.frames_per_repetition} frames x {len(scene.objects)} objects)"
        )
    records = []
    for rep in reps:
        for f in range(scene.frames_per_repetition):
            pose = scene.pose(rep, f)
            frame_id = rep * scene.frames_per_repetition + f
            for oi, (model, x, y) in enumerate(scene.objects):
                if len(records) == count:
                    break
                seed = np.random.SeedSequence([scene.master_seed, scene.scene_id, rep, f, oi])
                records.append(
                    generate_roi(
                        model,
                        pose,
                        (x, y),
                        scene.noise_floor_db,
                        seed,
                        grid=grid,
                        sample_id=f"{split_tag}-s{scene.scene_id}-f{frame_id}-i{len(records)}",
                        scene_id=scene.scene_id,
                        frame_id=frame_id,
                    )
                )
            if len(records) == count:
                break
        if len(records) == count:
            break
    return LabeledDataset(tuple(records), split_tag)


def generate_env1_splits(scene: SceneConfig, counts: dict, grid=(32, 32)) -> dict[str, LabeledDataset]:
    """Split Env1 repetitions: the last two become Valid and Test (one
    each), the rest are Train. Needs at least 3 repetitions."""
    if scene.repetitions < 3:
        raise ValueError(
            f"Env1 needs >= 3 repetitions to carve out validation and test; got {scene.repetitions}"
        )
    reps = tuple(range(scene.repetitions))
    return {
        ENV1_TRAIN: generate_split(scene, ENV1_TRAIN, counts[ENV1_TRAIN], reps[:-2], grid),
        ENV1_VALID: generate_split(scene, ENV1_VALID, counts[ENV1_VALID], (reps[-2],), grid),
        ENV1_TEST: generate_split(scene, ENV1_TEST, counts[ENV1_TEST], (reps[-1],), grid),
    }


def generate_ood(count: int, master_seed: int, noise_floor_db: float = -12.0,
                 frames_per_repetition: int = 130, grid=(32, 32)) -> LabeledDataset:
    """A dataset of the 5 out-of-distribution object types, labelled with
    the sentinel and never mixed into any Env split."""
    models = ood_models(instance_salt=master_seed * 10)
    rng = np.random.default_rng(np.random.SeedSequence([master_seed, 3, 7]))
    layout = _default_layout(rng, len(models))
    scene = SceneConfig(
        env="Env1",
        scene_id=3,
        objects=tuple((m, x, y) for m, (x, y) in zip(models, layout)),
        drive=DrivePattern(),
        noise_floor_db=noise_floor_db,
        repetitions=1,
        frames_per_repetition=frames_per_repetition,
        master_seed=master_seed,
    )
    return generate_split(scene, OOD, count, (0,), grid)


# ---------------------------------------------------------------------------
# binary dataset format

_REC_HEAD = np.dtype([("label", "<i4"), ("scene_id", "<i4"), ("frame_id", "<i4"), ("range_m", "<f4")])


def save_roi_dataset(dataset: LabeledDataset, path: Path, master_seed: int = 0) -> None:
    """Little-endian record stream (label, scene_id, frame_id, range_m,
    H*W float32 grid) plus a JSON sidecar {H, W, count, split_tag,
    master_seed}. sample_ids are positional and reconstructed on load."""
    path = Path(path)
    recs = list(dataset.records)
    if not recs:
        raise ValueError("refusing to write an empty ROI dataset")
    h, w = recs[0].magnitude.shape
    with open(path, "wb") as fh:
        for r in recs:
            head = np.array([(r.label, r.scene_id, r.frame_id, r.range_m)], dtype=_REC_HEAD)
            fh.write(head.tobytes())
            fh.write(np.ascontiguousarray(r.magnitude, dtype="<f4").tobytes())
    meta = {"H": h, "W": w, "count": len(recs), "split_tag": dataset.split_tag, "master_seed": int(master_seed)}
    path.with_suffix(".meta.json").write_text(dumps_json17(meta), encoding="utf-8")


def load_roi_dataset(path: Path) -> LabeledDataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"ROI dataset not found: {path}")
    meta = json.loads(path.with_suffix(".meta.json").read_text(encoding="utf-8"))
    h, w, count, split_tag = meta["H"], meta["W"], meta["count"], meta["split_tag"]
    rec_bytes = _REC_HEAD.itemsize + 4 * h * w
    raw = path.read_bytes()
    if len(raw) != rec_bytes * count:
        raise ValueError(f"{path}: expected {rec_bytes * count} bytes, found {len(raw)}")
    records = []
    for i in range(count):
        chunk = raw[i * rec_bytes : (i + 1) * rec_bytes]
        head = np.frombuffer(chunk[: _REC_HEAD.itemsize], dtype=_REC_HEAD)[0]
        grid = np.frombuffer(chunk[_REC_HEAD.itemsize :], dtype="<f4").reshape(h, w)
        records.append(
            SpectrumROI(
                sample_id=f"{split_tag}-s{int(head['scene_id'])}-f{int(head['frame_id'])}-i{i}",
                label=int(head["label"]),
                magnitude=grid.copy(),
                scene_id=int(head["scene_id"]),
                frame_id=int(head["frame_id"]),
                range_m=float(head["range_m"]),
            )
        )
    return LabeledDataset(tuple(records), split_tag)
