"""Dataset manifest, taxonomy, per-class splitting, and long-tail bucketing.

A sample is a "scene-in-scene" record: three concentric RGB rasters
(center / surrounding / global, default 256 / 768 / 1280 px at the same
ground resolution) plus a leaf-category label. Manifests are JSON-lines
files: a header object carrying the taxonomy and the concentric sizes,
followed by one object per sample referencing raster files by path.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test", "none")

#: Default concentric raster sizes in pixels (center, surrounding, global).
DEFAULT_SIZES = (256, 768, 1280)

#: Ratio between the three concentric scenes; alternate sizes must keep it.
CONCENTRIC_RATIOS = (1, 3, 5)


class ManifestError(ValueError):
    """Raised when a manifest file fails validation."""


@dataclass(frozen=True)
class SceneSample:
    """One scene-in-scene record; rasters are referenced by path."""

    sample_id: str
    label: int
    center: str
    surrounding: str
    global_: str
    split: str = "none"
    lon: float | None = None
    lat: float | None = None

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ManifestError(f"invalid split tag {self.split!r} for sample {self.sample_id}")


@dataclass(frozen=True)
class CategoryTaxonomy:
    """Two-level category tree: leaves grouped under parent nodes."""

    leaves: tuple[tuple[int, str], ...]
    parents: tuple[tuple[int, str], ...]
    leaf_to_parent: dict[int, int] = field(hash=False)

    def __post_init__(self):
        leaf_ids = [i for i, _ in self.leaves]
        parent_ids = [i for i, _ in self.parents]
        if len(set(leaf_ids)) != len(leaf_ids):
            raise ManifestError("duplicate leaf ids in taxonomy")
        if len(set(parent_ids)) != len(parent_ids):
            raise ManifestError("duplicate parent ids in taxonomy")
        if set(self.leaf_to_parent) != set(leaf_ids):
            raise ManifestError("leaf_to_parent must map every leaf exactly once")
        if not set(self.leaf_to_parent.values()) <= set(parent_ids):
            raise ManifestError("leaf_to_parent targets unknown parent ids")

    @property
    def leaf_ids(self) -> list[int]:
        return [i for i, _ in self.leaves]

    @property
    def num_classes(self) -> int:
        return len(self.leaves)

    def to_dict(self) -> dict:
        return {
            "leaves": [list(p) for p in self.leaves],
            "parents": [list(p) for p in self.parents],
            "leaf_to_parent": {str(k): v for k, v in self.leaf_to_parent.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CategoryTaxonomy":
        return cls(
            leaves=tuple((int(i), str(n)) for i, n in d["leaves"]),
            parents=tuple((int(i), str(n)) for i, n in d["parents"]),
            leaf_to_parent={int(k): int(v) for k, v in d["leaf_to_parent"].items()},
        )

    @classmethod
    def flat(cls, num_classes: int, parent_name: str = "all") -> "CategoryTaxonomy":
        """Trivial taxonomy: ``num_classes`` leaves under one parent."""
        return cls(
            leaves=tuple((i, f"class_{i}") for i in range(num_classes)),
            parents=((0, parent_name),),
            leaf_to_parent={i: 0 for i in range(num_classes)},
        )


@dataclass(frozen=True)
class DatasetManifest:
    """Taxonomy + ordered sample references + concentric sizes."""

    taxonomy: CategoryTaxonomy
    samples: tuple[SceneSample, ...]
    sizes: tuple[int, int, int] = DEFAULT_SIZES
    root: Path | None = None

    def __post_init__(self):
        c, s, g = self.sizes
        if (s, g) != (c * 3, c * 5):
            raise ManifestError(f"sizes {self.sizes} violate the 1:3:5 concentric ratio")
        leaf_ids = set(self.taxonomy.leaf_ids)
        for sm in self.samples:
            if sm.label not in leaf_ids:
                raise ManifestError(f"sample {sm.sample_id}: label {sm.label} not in taxonomy")

    def subset(self, split: str) -> "DatasetManifest":
        return replace(self, samples=tuple(s for s in self.samples if s.split == split))

    def class_counts(self, split: str | None = None) -> dict[int, int]:
        counts = {c: 0 for c in self.taxonomy.leaf_ids}
        for s in self.samples:
            if split is None or s.split == split:
                counts[s.label] += 1
        return counts

    def resolve(self, rel_path: str) -> Path:
        return (self.root / rel_path) if self.root is not None else Path(rel_path)


@dataclass(frozen=True)
class BucketSpec:
    """Ordered half-open count intervals (lo, hi] with bucket names."""

    intervals: tuple[tuple[int, int, str], ...] = (
        (0, 1500, "few"),
        (1500, 10000, "med"),
        (10000, 150000, "many"),
    )

    def __post_init__(self):
        prev_hi = None
        for lo, hi, _name in self.intervals:
            if hi <= lo:
                raise ValueError(f"empty interval ({lo}, {hi}]")
            if prev_hi is not None and lo != prev_hi:
                raise ValueError("bucket intervals must be contiguous and ascending")
            prev_hi = hi

    @property
    def names(self) -> list[str]:
        return [name for _, _, name in self.intervals]

    def bucket_of(self, count: int) -> str | None:
        for lo, hi, name in self.intervals:
            if lo < count <= hi:
                return name
        return None


def _sample_to_obj(s: SceneSample) -> dict:
    obj = {
        "id": s.sample_id,
        "label": s.label,
        "center": s.center,
        "surrounding": s.surrounding,
        "global": s.global_,
    }
    if s.split != "none":
        obj["split"] = s.split
    if s.lon is not None:
        obj["lon"] = s.lon
    if s.lat is not None:
        obj["lat"] = s.lat
    return obj


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Write the JSON-lines manifest: header line, then one line per sample."""
    path = Path(path)
    header = {"taxonomy": manifest.taxonomy.to_dict(), "sizes": list(manifest.sizes)}
    with path.open("w") as fh:
        fh.write(json.dumps(header) + "\n")
        for s in manifest.samples:
            fh.write(json.dumps(_sample_to_obj(s)) + "\n")


def load_manifest(path: str | Path, *, check_files: bool = True, lenient: bool = False) -> DatasetManifest:
    """Load and validate a JSON-lines manifest.

    Raster paths are resolved relative to the manifest's directory. A sample
    whose raster files are missing is an error, unless ``lenient`` is set, in
    which case it is dropped with a warning.
    """
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest file not found: {path}")
    root = path.parent
    samples: list[SceneSample] = []
    taxonomy = None
    sizes = DEFAULT_SIZES
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(f"{path}:{lineno}: invalid JSON: {e}") from e
            if lineno == 1:
                if "taxonomy" not in obj:
                    raise ManifestError(f"{path}:1: missing taxonomy header line")
                taxonomy = CategoryTaxonomy.from_dict(obj["taxonomy"])
                if "sizes" in obj:
                    sizes = tuple(int(v) for v in obj["sizes"])
                continue
            try:
                sample = SceneSample(
                    sample_id=str(obj["id"]),
                    label=int(obj["label"]),
                    center=obj["center"],
                    surrounding=obj["surrounding"],
                    global_=obj["global"],
                    split=obj.get("split", "none"),
                    lon=obj.get("lon"),
                    lat=obj.get("lat"),
                )
            except KeyError as e:
                raise ManifestError(f"{path}:{lineno}: missing field {e}") from e
            if sample.label not in set(taxonomy.leaf_ids):
                raise ManifestError(f"{path}:{lineno}: label {sample.label} not in taxonomy")
            if check_files:
                missing = [p for p in (sample.center, sample.surrounding, sample.global_) if not (root / p).exists()]
                if missing:
                    if lenient:
                        warnings.warn(f"{path}:{lineno}: dropping sample {sample.sample_id}, missing {missing}")
                        continue
                    raise ManifestError(f"{path}:{lineno}: missing raster file(s) {missing}")
            samples.append(sample)
    if taxonomy is None:
        raise ManifestError(f"{path}: empty manifest (no header line)")
    return DatasetManifest(taxonomy=taxonomy, samples=tuple(samples), sizes=sizes, root=root)


def split_counts(n: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    """(train, val, test) counts for a class of size ``n``.

    Val and test get the floor of their share; the remainder goes to train,
    keeping the training split the largest under rounding.
    """
    r_train, r_val, r_test = ratios
    if min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be positive and sum to 1, got {ratios}")
    n_val = int(np.floor(r_val * n))
    n_test = int(np.floor(r_test * n))
    return n - n_val - n_test, n_val, n_test


def split_dataset(
    manifest: DatasetManifest,
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2),
    seed: int = 0,
) -> DatasetManifest:
    """Assign train/val/test tags per class with a seed-determined permutation."""
    split_counts(1, ratios)  # validate ratios up front
    by_class: dict[int, list[int]] = {}
    for idx, s in enumerate(manifest.samples):
        by_class.setdefault(s.label, []).append(idx)
    tags = ["none"] * len(manifest.samples)
    for cls in sorted(set(manifest.taxonomy.leaf_ids)):
        indices = by_class.get(cls, [])
        if not indices:
            log.warning("split_dataset: class %d has no samples, skipped", cls)
            continue
        # Per-class RNG keyed by (seed, class) so the assignment does not
        # depend on which other classes are present.
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(cls,)))
        perm = rng.permutation(len(indices))
        n = len(indices)
        _n_train, n_val, n_test = split_counts(n, ratios)
        for j, p in enumerate(perm):
            if j < n_val:
                tag = "val"
            elif j < n_val + n_test:
                tag = "test"
            else:
                tag = "train"
            tags[indices[p]] = tag
    samples = tuple(replace(s, split=t) for s, t in zip(manifest.samples, tags))
    return replace(manifest, samples=samples)


def bucket_categories(class_counts: dict[int, int], spec: BucketSpec = BucketSpec()) -> dict[int, str]:
    """Assign every category to the long-tail bucket its count falls into."""
    assignment: dict[int, str] = {}
    for cat, count in class_counts.items():
        if count < 1:
            raise ValueError(f"category {cat}: count must be >= 1, got {count}")
        name = spec.bucket_of(count)
        if name is None:
            raise ValueError(f"category {cat}: count {count} outside all bucket intervals")
        assignment[cat] = name
    return assignment
