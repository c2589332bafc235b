"""Block-tiling land-use mapping: classify every fixed-size block of a raster.

The raster is tiled into non-overlapping block-sized center windows (partial
edge blocks are padded by edge replication, never dropped). Each block gets
concentric 3x and 5x context windows, built from the raster with replicated
edges where they overrun it, and is classified by the trained model. Leaf
predictions are remapped into an application category system (for example the
8-class urban-functional-zone scheme).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .imgio import to_model_input
from .metrics import MetricReport, compute_report
from .model import SceneClassifier, infer


@dataclass(frozen=True)
class RemapTable:
    """Total map from model leaf categories to application categories."""

    mapping: dict[int, int]
    categories: tuple[tuple[int, str], ...]

    def __post_init__(self):
        if not self.categories:
            raise ValueError("target category set must be nonempty")
        valid = {i for i, _ in self.categories}
        bad = {v for v in self.mapping.values()} - valid
        if bad:
            raise ValueError(f"remap targets {sorted(bad)} not in target categories")

    def __call__(self, leaf: int) -> int:
        if leaf not in self.mapping:
            raise KeyError(f"remap table missing leaf category {leaf}")
        return self.mapping[leaf]

    @property
    def num_categories(self) -> int:
        return max(i for i, _ in self.categories) + 1

    @classmethod
    def identity(cls, num_classes: int) -> "RemapTable":
        return cls(
            mapping={i: i for i in range(num_classes)},
            categories=tuple((i, f"class_{i}") for i in range(num_classes)),
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "RemapTable":
        with Path(path).open() as fh:
            obj = json.load(fh)
        return cls(
            mapping={int(k): int(v) for k, v in obj["mapping"].items()},
            categories=tuple((int(i), str(n)) for i, n in obj["categories"]),
        )


#: Default application scheme: 8 urban-functional-zone classes.
UFZ_CATEGORIES = (
    (0, "Residential"),
    (1, "Commercial"),
    (2, "Industrial"),
    (3, "Transportation"),
    (4, "Educational"),
    (5, "Medical"),
    (6, "Sport and cultural"),
    (7, "Park and greenspace"),
)


@dataclass
class BlockMap:
    """Grid of predicted application categories covering a raster."""

    grid: np.ndarray  # (rows, cols) int
    block_size: int
    raster_shape: tuple[int, int]
    origin: tuple[int, int] = (0, 0)
    categories: tuple[tuple[int, str], ...] = field(default_factory=tuple)

    @property
    def rows(self) -> int:
        return self.grid.shape[0]

    @property
    def cols(self) -> int:
        return self.grid.shape[1]

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.tolist(),
            "block_size": self.block_size,
            "raster_shape": list(self.raster_shape),
            "origin": list(self.origin),
            "categories": [list(c) for c in self.categories],
        }

    def save_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def from_json(cls, path: str | Path) -> "BlockMap":
        obj = json.loads(Path(path).read_text())
        return cls(
            grid=np.asarray(obj["grid"], dtype=np.int64),
            block_size=int(obj["block_size"]),
            raster_shape=tuple(obj["raster_shape"]),
            origin=tuple(obj["origin"]),
            categories=tuple((int(i), str(n)) for i, n in obj["categories"]),
        )


@torch.no_grad()
def map_region(
    raster: np.ndarray,
    model: SceneClassifier,
    remap: RemapTable,
    block: int,
    input_resize: int,
    batch_size: int = 64,
) -> BlockMap:
    """Tile, classify, and remap a large RGB raster into a BlockMap."""
    if raster.ndim != 3 or raster.shape[2] != 3:
        raise ValueError("raster must be (H, W, 3)")
    h, w = raster.shape[:2]
    if h < block or w < block:
        raise ValueError(f"raster {h}x{w} smaller than one {block}px block")
    rows = math.ceil(h / block)
    cols = math.ceil(w / block)
    # Pad once: bottom/right out to whole blocks, then a 2-block apron on all
    # sides so every 5x context window is a plain slice.
    padded = np.pad(
        raster,
        ((2 * block, 2 * block + rows * block - h), (2 * block, 2 * block + cols * block - w), (0, 0)),
        mode="edge",
    )
    model.eval()
    windows = []
    for r in range(rows):
        for c in range(cols):
            y = 2 * block + r * block
            x = 2 * block + c * block
            center = padded[y : y + block, x : x + block]
            surrounding = padded[y - block : y + 2 * block, x - block : x + 2 * block]
            global_ = padded[y - 2 * block : y + 3 * block, x - 2 * block : x + 3 * block]
            windows.append(tuple(to_model_input(im, input_resize) for im in (center, surrounding, global_)))

    preds = []
    for start in range(0, len(windows), batch_size):
        chunk = windows[start : start + batch_size]
        c_t = torch.from_numpy(np.stack([wdw[0] for wdw in chunk]))
        s_t = torch.from_numpy(np.stack([wdw[1] for wdw in chunk]))
        g_t = torch.from_numpy(np.stack([wdw[2] for wdw in chunk]))
        out = model(c_t, s_t, g_t) if model.cfg.fusion != "center" else model(c_t)
        preds.extend(infer(out.probs).tolist())

    grid = np.array([remap(p) for p in preds], dtype=np.int64).reshape(rows, cols)
    return BlockMap(
        grid=grid, block_size=block, raster_shape=(h, w), categories=remap.categories
    )


def score_map(block_map: BlockMap, annotations: dict[tuple[int, int], int]) -> MetricReport:
    """OA/BA over the (typically sparse) annotated blocks only."""
    if not annotations:
        raise ValueError("no annotations to score against")
    preds, labels = [], []
    for (r, c), cat in annotations.items():
        if not (0 <= r < block_map.rows and 0 <= c < block_map.cols):
            raise ValueError(f"annotation ({r}, {c}) outside the {block_map.rows}x{block_map.cols} grid")
        preds.append(int(block_map.grid[r, c]))
        labels.append(int(cat))
    num = max(max(preds), max(labels), max(i for i, _ in block_map.categories)) + 1
    return compute_report(preds, labels, num)
