"""Core domain types shared by every other module.

A classifier output for one input is a :class:`LogitRecord`; a split of
records travels as a :class:`LabeledDataset`. Labels are class indices in
``[0, K-1]``; out-of-distribution samples carry the sentinel
:data:`OOD_LABEL` (-1) so that accuracy/ECE code can never include them by
accident. All containers are immutable after construction and safe to share
across threads.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

OOD_LABEL = -1

ENV1_TRAIN = "Env1-Train"
ENV1_VALID = "Env1-Valid"
ENV1_TEST = "Env1-Test"
ENV2_TEST = "Env2-Test"
OOD = "OOD"

_BASE_TAGS = (ENV1_TRAIN, ENV1_VALID, ENV1_TEST, ENV2_TEST, OOD)
_CORRUPTED_RE = re.compile(r"^Corrupted\([a-z][a-z-]*,[0-9]+\)$")


def corrupted_tag(kind: str, severity: int) -> str:
    return f"Corrupted({kind},{severity})"


def is_valid_split_tag(tag: str) -> bool:
    return tag in _BASE_TAGS or bool(_CORRUPTED_RE.match(tag))


@dataclass(frozen=True)
class LogitRecord:
    """Raw classifier outputs for one sample.

    `seed_id` identifies which trained network produced the logits; the
    logit vector has length K and must be finite.
    """

    sample_id: str
    label: int
    logits: np.ndarray
    seed_id: int = 0

    def __post_init__(self):
        z = np.array(self.logits, dtype=np.float64)
        if z.ndim != 1 or z.shape[0] < 2:
            raise ValueError(f"sample {self.sample_id!r}: logits must be a vector of length >= 2")
        if not np.all(np.isfinite(z)):
            raise ValueError(f"sample {self.sample_id!r}: non-finite logits")
        z.flags.writeable = False
        object.__setattr__(self, "logits", z)
        object.__setattr__(self, "label", int(self.label))
        object.__setattr__(self, "seed_id", int(self.seed_id))

    @property
    def k(self) -> int:
        return self.logits.shape[0]


@dataclass(frozen=True)
class LabeledDataset:
    """An immutable, tag-labelled collection of records.

    Records may be LogitRecord or SpectrumROI instances; either way each
    record exposes `sample_id` and `label`, ids are unique within the
    dataset, and for logit records all vectors share one K.
    """

    records: tuple
    split_tag: str

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if not is_valid_split_tag(self.split_tag):
            raise ValueError(f"unknown split tag {self.split_tag!r}")
        seen = set()
        for r in self.records:
            if r.sample_id in seen:
                raise ValueError(f"duplicate sample_id {r.sample_id!r} in {self.split_tag}")
            seen.add(r.sample_id)
        ks = {r.logits.shape[0] for r in self.records if isinstance(r, LogitRecord)}
        if len(ks) > 1:
            raise ValueError(f"mixed logit lengths {sorted(ks)} in {self.split_tag}")
        if ks:
            k = ks.pop()
            for r in self.records:
                if r.label != OOD_LABEL and not 0 <= r.label < k:
                    raise ValueError(f"sample {r.sample_id!r}: label {r.label} outside [0,{k - 1}]")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def k(self) -> int:
        if not self.records:
            raise ValueError("empty dataset has no K")
        return self.records[0].logits.shape[0]

    def sample_ids(self) -> list[str]:
        return [r.sample_id for r in self.records]

    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)

    def seed_ids(self) -> np.ndarray:
        return np.array([r.seed_id for r in self.records], dtype=np.int64)

    def logit_matrix(self) -> np.ndarray:
        return np.stack([r.logits for r in self.records])

    def subset(self, indices: Iterable[int], split_tag: str | None = None) -> "LabeledDataset":
        recs = tuple(self.records[i] for i in indices)
        return LabeledDataset(recs, split_tag or self.split_tag)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-shifted softmax along the last axis; stable for |z| up to ~1e4."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite logits passed to softmax")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def check_prob_matrix(p: np.ndarray, tol: float = 1e-9) -> None:
    """Assert rows of p are valid probability vectors (confidence >= 1/K)."""
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    k = p.shape[-1]
    if np.any(p < -tol) or np.any(p > 1 + tol):
        raise ValueError("probabilities outside [0, 1]")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > tol):
        raise ValueError("probabilities do not sum to 1")
    if np.any(p.max(axis=-1) < 1.0 / k - tol):
        raise ValueError("max probability below 1/K")


def split_disjointness_check(datasets: Sequence[LabeledDataset]) -> set[str]:
    """Return sample_ids appearing in more than one dataset (empty = clean).

    Overlap is reported, never silently fixed.
    """
    if len(datasets) < 2:
        raise ValueError("need at least two datasets to compare")
    counts: dict[str, int] = {}
    for ds in datasets:
        for sid in set(ds.sample_ids()):
            counts[sid] = counts.get(sid, 0) + 1
    return {sid for sid, n in counts.items() if n > 1}


# ---------------------------------------------------------------------------
# serialization helpers

_SIDEcar_FIELDS = ("split_tag", "K", "count", "generator_seed")


def format_float17(x: float) -> str:
    return format(float(x), ".17g")


def dumps_json17(obj) -> str:
    """Canonical JSON with floats at 17 significant digits (round-trip exact)."""
    if isinstance(obj, dict):
        items = ",".join(f"{json.dumps(str(k))}:{dumps_json17(v)}" for k, v in obj.items())
        return "{" + items + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(dumps_json17(v) for v in obj) + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float17(obj)
    if obj is None:
        return "null"
    return json.dumps(obj)


def sidecar_path(path: Path) -> Path:
    return Path(path).with_suffix(".meta.json")


def save_logit_dataset(dataset: LabeledDataset, path: Path, generator_seed: int = 0) -> None:
    """Write the UTF-8 CSV logit format plus its JSON metadata sidecar.

    Header is ``sample_id,label,seed_id,z_0,...,z_{K-1}``; floats carry 17
    significant digits so a round-trip is bit exact; OOD labels are -1.
    """
    path = Path(path)
    k = dataset.k
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "label", "seed_id"] + [f"z_{i}" for i in range(k)])
        for r in dataset.records:
            writer.writerow([r.sample_id, r.label, r.seed_id] + [format_float17(z) for z in r.logits])
    meta = {
        "split_tag": dataset.split_tag,
        "K": k,
        "count": len(dataset),
        "generator_seed": int(generator_seed),
    }
    sidecar_path(path).write_text(dumps_json17(meta), encoding="utf-8")


def load_logit_dataset(path: Path) -> LabeledDataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"logit file not found: {path}")
    meta = json.loads(sidecar_path(path).read_text(encoding="utf-8"))
    for field in _SIDEcar_FIELDS:
        if field not in meta:
            raise ValueError(f"{sidecar_path(path)}: missing sidecar field {field!r}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        k = meta["K"]
        expected = ["sample_id", "label", "seed_id"] + [f"z_{i}" for i in range(k)]
        if header != expected:
            raise ValueError(f"{path}: bad header {header[:4]}...")
        records = []
        for row in reader:
            if len(row) != 3 + k:
                raise ValueError(f"{path}: row for {row[0]!r} has {len(row)} fields, want {3 + k}")
            records.append(
                LogitRecord(
                    sample_id=row[0],
                    label=int(row[1]),
                    logits=np.array([float(v) for v in row[3:]]),
                    seed_id=int(row[2]),
                )
            )
    ds = LabeledDataset(tuple(records), meta["split_tag"])
    if len(ds) != meta["count"]:
        raise ValueError(f"{path}: sidecar count {meta['count']} != {len(ds)} rows")
    return ds
