"""Procedural scene-in-scene dataset generator with a known center-only Bayes bound.

Classes are partitioned into "ambiguity groups": all classes in a group share
one center-scene motif, so a classifier restricted to the center scene cannot
do better than guessing within the group. The context annulus (the part of the
surrounding/global rasters outside the center crop) carries a class-keyed
motif, making every class separable once context is used. The best possible
center-only accuracy is closed-form, which turns every context-fusion claim
into a checkable statement.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from matplotlib.colors import hsv_to_rgb

from .data_model import (
    CategoryTaxonomy,
    DatasetManifest,
    SceneSample,
    save_manifest,
    split_dataset,
)
from .imgio import save_png

# Motif id namespaces: center motifs are keyed by ambiguity group, context
# motifs by class, and the distractor texture is shared by everything.
_CENTER_BASE = 1000
_CONTEXT_BASE = 2000
_DISTRACTOR_ID = 3000
_CLUTTER_BASE = 4000
_NUM_CLUTTER = 16

CONTEXT_MODES = ("class_motif", "class_patch", "neutral", "mosaic")


@dataclass(frozen=True)
class GeneratorSpec:
    num_classes: int
    ambiguity_groups: tuple[tuple[int, ...], ...]
    class_prior: str = "uniform"  # "uniform" or "zipf"
    zipf_exponent: float = 1.0
    motif_noise: float = 0.05
    samples_per_class: int = 100
    image_sizes: tuple[int, int, int] = (32, 96, 160)
    context_mode: str = "class_motif"
    split_ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 0

    def __post_init__(self):
        flat = [c for g in self.ambiguity_groups for c in g]
        if sorted(flat) != list(range(self.num_classes)):
            raise ValueError("ambiguity_groups must partition {0..num_classes-1}")
        c, s, g = self.image_sizes
        if (s, g) != (3 * c, 5 * c):
            raise ValueError(f"image_sizes {self.image_sizes} must keep the 1:3:5 ratio")
        if self.motif_noise < 0:
            raise ValueError("motif_noise must be >= 0")
        if self.class_prior not in ("uniform", "zipf"):
            raise ValueError(f"unknown class_prior {self.class_prior!r}")
        if self.context_mode not in CONTEXT_MODES:
            raise ValueError(f"unknown context_mode {self.context_mode!r}")

    def group_of(self, cls: int) -> int:
        for gi, group in enumerate(self.ambiguity_groups):
            if cls in group:
                return gi
        raise ValueError(f"class {cls} not in any group")

    def priors(self) -> np.ndarray:
        if self.class_prior == "uniform":
            return np.full(self.num_classes, 1.0 / self.num_classes)
        w = 1.0 / np.arange(1, self.num_classes + 1) ** self.zipf_exponent
        return w / w.sum()


@dataclass(frozen=True)
class SampleProvenance:
    """Everything needed to re-render one sample bit-exactly."""

    sample_id: str
    label: int
    group: int
    center_motif: int
    context_motif: int
    noise_seed: int

    def to_dict(self) -> dict:
        return {
            "id": self.sample_id,
            "class": self.label,
            "group": self.group,
            "center_motif": self.center_motif,
            "context_motif": self.context_motif,
            "noise_seed": self.noise_seed,
        }


def bayes_center_accuracy(spec: GeneratorSpec) -> float:
    """Best achievable accuracy from the center scene alone.

    The center scene identifies the ambiguity group; the optimal rule then
    predicts the highest-prior class in the group, so the accuracy is the sum
    over groups of the maximum class prior inside each group.
    """
    priors = spec.priors()
    return float(sum(max(priors[c] for c in group) for group in spec.ambiguity_groups))


def _motif_params(motif_id: int) -> dict:
    rng = np.random.default_rng(np.random.SeedSequence(entropy=9157, spawn_key=(motif_id,)))
    hue = (motif_id * 0.618033988749895) % 1.0
    fg = hsv_to_rgb((hue, 0.85, 0.9))
    bg = hsv_to_rgb(((hue + 0.45) % 1.0, 0.45, 0.35))
    return {
        "family": ("stripes", "checker", "dots")[motif_id % 3],
        "freq": float(rng.uniform(3.0, 7.0)),
        "theta": float(rng.uniform(0.0, np.pi)),
        "fg": fg,
        "bg": bg,
    }


def render_motif(motif_id: int, height: int, width: int) -> np.ndarray:
    """Render a parametric texture as an (H, W, 3) float array in [0, 1].

    Patterns are defined on normalized coordinates, so the same motif id at
    different raster sizes shows the same texture at matching scale.
    """
    p = _motif_params(motif_id)
    yy, xx = np.meshgrid(np.linspace(0, 1, height, endpoint=False), np.linspace(0, 1, width, endpoint=False), indexing="ij")
    if p["family"] == "stripes":
        wave = np.sin(2 * np.pi * p["freq"] * (xx * np.cos(p["theta"]) + yy * np.sin(p["theta"])))
        mask = wave > 0
    elif p["family"] == "checker":
        k = max(2, int(round(p["freq"])))
        mask = (np.floor(xx * k) + np.floor(yy * k)) % 2 == 0
    else:  # dots
        mask = np.sin(2 * np.pi * p["freq"] * xx) * np.sin(2 * np.pi * p["freq"] * yy) > 0.3
    img = np.where(mask[..., None], p["fg"], p["bg"])
    return img.astype(np.float64)


def _ring_cells(n: int) -> list[tuple[int, int]]:
    """Grid cells of an n x n layout excluding the center cell(s)."""
    mid = n // 2
    return [(r, c) for r in range(n) for c in range(n) if not (r == mid and c == mid)]


def render_sample(cls: int, spec: GeneratorSpec, noise_seed: int) -> dict[str, np.ndarray]:
    """Render the three concentric rasters for one sample.

    Returns uint8 arrays under keys "center", "surrounding", "global". The
    central crop of the surrounding and global rasters equals the center
    raster exactly (before independent pixel noise is applied per raster).
    """
    if not 0 <= cls < spec.num_classes:
        raise ValueError(f"class {cls} out of range")
    c, s, g = spec.image_sizes
    group = spec.group_of(cls)
    center = render_motif(_CENTER_BASE + group, c, c)

    rng = np.random.default_rng(noise_seed)
    ctx_id = _CONTEXT_BASE + cls
    if spec.context_mode == "class_motif":
        surrounding = render_motif(ctx_id, s, s)
        global_ = render_motif(ctx_id, g, g)
    elif spec.context_mode == "neutral":
        surrounding = render_motif(_DISTRACTOR_ID, s, s)
        global_ = render_motif(_DISTRACTOR_ID, g, g)
    elif spec.context_mode == "mosaic":
        # Context cells are center motifs of random classes, mimicking the
        # neighborhoods a block-tiled map of same-sized scenes produces.
        surrounding = np.empty((s, s, 3))
        global_ = np.empty((g, g, 3))
        for img, n in ((surrounding, 3), (global_, 5)):
            for r, col in _ring_cells(n):
                neighbor = _CENTER_BASE + spec.group_of(int(rng.integers(spec.num_classes)))
                img[r * c : (r + 1) * c, col * c : (col + 1) * c] = render_motif(neighbor, c, c)
    else:  # class_patch: one class-keyed cue cell among per-sample clutter
        surrounding = np.empty((s, s, 3))
        global_ = np.empty((g, g, 3))
        for img, n in ((surrounding, 3), (global_, 5)):
            cells = _ring_cells(n)
            cue_at = int(rng.integers(len(cells)))
            for i, (r, col) in enumerate(cells):
                if i == cue_at:
                    motif_id = ctx_id
                else:
                    motif_id = _CLUTTER_BASE + int(rng.integers(_NUM_CLUTTER))
                img[r * c : (r + 1) * c, col * c : (col + 1) * c] = render_motif(motif_id, c, c)
    surrounding[c : 2 * c, c : 2 * c] = center
    global_[2 * c : 3 * c, 2 * c : 3 * c] = center
    out = {}
    for key, img in (("center", center), ("surrounding", surrounding), ("global", global_)):
        if spec.motif_noise > 0:
            img = img + rng.normal(0.0, spec.motif_noise, img.shape)
        out[key] = (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    return out


def _class_counts(spec: GeneratorSpec) -> np.ndarray:
    if spec.class_prior == "uniform":
        return np.full(spec.num_classes, spec.samples_per_class, dtype=np.int64)
    total = spec.samples_per_class * spec.num_classes
    rng = np.random.default_rng(np.random.SeedSequence(entropy=spec.seed, spawn_key=(1,)))
    counts = rng.multinomial(total, spec.priors())
    return np.maximum(counts, 1)  # bucketing requires count >= 1


def generate_dataset(spec: GeneratorSpec, out_dir: str | Path) -> tuple[DatasetManifest, list[SampleProvenance]]:
    """Render a full dataset to ``out_dir``.

    Writes rasters under ``images/``, the manifest (with 6:2:2-by-default
    per-class split tags) as ``manifest.jsonl``, and a provenance sidecar as
    ``provenance.jsonl``. Deterministic for a fixed spec.
    """
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    counts = _class_counts(spec)

    samples: list[SceneSample] = []
    provenance: list[SampleProvenance] = []
    index = 0
    for cls in range(spec.num_classes):
        for _ in range(int(counts[cls])):
            sid = f"s{index:06d}"
            # Per-sample seed derives from (dataset seed, sample index) so
            # rendering is schedule-independent if ever parallelized.
            noise_seed = spec.seed * 1_000_003 + index
            rasters = render_sample(cls, spec, noise_seed)
            paths = {}
            for key, suffix in (("center", "c"), ("surrounding", "s"), ("global", "g")):
                rel = f"images/{sid}_{suffix}.png"
                save_png(rasters[key], out_dir / rel)
                paths[key] = rel
            samples.append(
                SceneSample(
                    sample_id=sid,
                    label=cls,
                    center=paths["center"],
                    surrounding=paths["surrounding"],
                    global_=paths["global"],
                )
            )
            provenance.append(
                SampleProvenance(
                    sample_id=sid,
                    label=cls,
                    group=spec.group_of(cls),
                    center_motif=_CENTER_BASE + spec.group_of(cls),
                    context_motif=_CONTEXT_BASE + cls,
                    noise_seed=noise_seed,
                )
            )
            index += 1

    manifest = DatasetManifest(
        taxonomy=CategoryTaxonomy.flat(spec.num_classes),
        samples=tuple(samples),
        sizes=spec.image_sizes,
        root=out_dir,
    )
    manifest = split_dataset(manifest, spec.split_ratios, seed=spec.seed)
    save_manifest(manifest, out_dir / "manifest.jsonl")
    with (out_dir / "provenance.jsonl").open("w") as fh:
        for p in provenance:
            fh.write(json.dumps(p.to_dict()) + "\n")
    return manifest, provenance


def render_mosaic(class_grid: np.ndarray, spec: GeneratorSpec, seed: int = 0) -> np.ndarray:
    """Assemble a large raster whose tiles are center scenes of the given classes.

    ``class_grid`` is a (rows, cols) array of class ids; each tile is the
    center raster of a freshly rendered sample of that class. Used to exercise
    the block-mapping workflow end to end.
    """
    class_grid = np.asarray(class_grid)
    c = spec.image_sizes[0]
    rows, cols = class_grid.shape
    raster = np.zeros((rows * c, cols * c, 3), dtype=np.uint8)
    for r in range(rows):
        for col in range(cols):
            noise_seed = seed * 1_000_003 + r * cols + col
            tile = render_sample(int(class_grid[r, col]), spec, noise_seed)["center"]
            raster[r * c : (r + 1) * c, col * c : (col + 1) * c] = tile
    return raster


def pair_groups(num_classes: int) -> tuple[tuple[int, ...], ...]:
    """Partition classes into consecutive ambiguity pairs (0,1), (2,3), ..."""
    if num_classes % 2 != 0:
        raise ValueError("pair grouping needs an even class count")
    return tuple((i, i + 1) for i in range(0, num_classes, 2))


def singleton_groups(num_classes: int) -> tuple[tuple[int, ...], ...]:
    """Every class its own group: fully identifiable from the center scene."""
    return tuple((i,) for i in range(num_classes))
