import json

import numpy as np
import pytest
import torch

from catscene.mapping import UFZ_CATEGORIES, BlockMap, RemapTable, map_region, score_map
from catscene.metrics import balanced_accuracy, overall_accuracy
from catscene.model import EncoderConfig, ModelConfig, build_model


def tiny_model(num_classes=3):
    enc = EncoderConfig(input_resize=8, patch_size=4, embed_dim=8, depth=2, num_heads=2, window_size=2)
    return build_model(ModelConfig(num_classes=num_classes, encoder=enc), seed=0)


class TestRemapTable:
    def test_identity(self):
        t = RemapTable.identity(4)
        assert [t(i) for i in range(4)] == [0, 1, 2, 3]

    def test_missing_leaf_raises(self):
        t = RemapTable(mapping={0: 0, 1: 1}, categories=((0, "a"), (1, "b")))
        with pytest.raises(KeyError):
            t(2)

    def test_invalid_target_rejected(self):
        with pytest.raises(ValueError):
            RemapTable(mapping={0: 5}, categories=((0, "a"),))

    def test_from_json(self, tmp_path):
        path = tmp_path / "remap.json"
        path.write_text(json.dumps({
            "mapping": {"0": 1, "1": 1, "2": 0},
            "categories": [[0, "low"], [1, "high"]],
        }))
        t = RemapTable.from_json(path)
        assert (t(0), t(1), t(2)) == (1, 1, 0)
        assert t.num_categories == 2

    def test_ufz_scheme(self):
        assert len(UFZ_CATEGORIES) == 8
        assert [i for i, _ in UFZ_CATEGORIES] == list(range(8))


class TestBlockMap:
    def test_json_round_trip(self, tmp_path):
        bm = BlockMap(
            grid=np.array([[0, 1], [2, 0]]),
            block_size=16,
            raster_shape=(30, 32),
            categories=((0, "a"), (1, "b"), (2, "c")),
        )
        bm.save_json(tmp_path / "map.json")
        back = BlockMap.from_json(tmp_path / "map.json")
        assert np.array_equal(back.grid, bm.grid)
        assert back.block_size == 16
        assert back.raster_shape == (30, 32)
        assert back.categories == bm.categories


class TestMapRegion:
    def test_grid_shape_exact_tiling(self):
        model = tiny_model()
        raster = (np.random.default_rng(0).random((48, 80, 3)) * 255).astype(np.uint8)
        bm = map_region(raster, model, RemapTable.identity(3), block=16, input_resize=8)
        assert bm.grid.shape == (3, 5)
        assert bm.raster_shape == (48, 80)

    def test_partial_edge_blocks_kept(self):
        model = tiny_model()
        raster = (np.random.default_rng(1).random((50, 70, 3)) * 255).astype(np.uint8)
        bm = map_region(raster, model, RemapTable.identity(3), block=16, input_resize=8)
        # ceil(50/16)=4 rows, ceil(70/16)=5 cols: edge remainders get blocks
        assert bm.grid.shape == (4, 5)

    def test_every_block_classified(self):
        model = tiny_model()
        raster = (np.random.default_rng(2).random((32, 32, 3)) * 255).astype(np.uint8)
        bm = map_region(raster, model, RemapTable.identity(3), block=16, input_resize=8)
        assert ((bm.grid >= 0) & (bm.grid < 3)).all()

    def test_remap_applied(self):
        model = tiny_model()
        collapse = RemapTable(mapping={0: 0, 1: 0, 2: 0}, categories=((0, "only"),))
        raster = (np.random.default_rng(3).random((32, 48, 3)) * 255).astype(np.uint8)
        bm = map_region(raster, model, collapse, block=16, input_resize=8)
        assert (bm.grid == 0).all()

    def test_raster_smaller_than_block_rejected(self):
        with pytest.raises(ValueError):
            map_region(
                np.zeros((8, 8, 3), dtype=np.uint8), tiny_model(), RemapTable.identity(3),
                block=16, input_resize=8,
            )
        with pytest.raises(ValueError):
            map_region(
                np.zeros((32, 32), dtype=np.uint8), tiny_model(), RemapTable.identity(3),
                block=16, input_resize=8,
            )

    def test_uniform_raster_uniform_prediction(self):
        """Every block of a constant raster sees identical windows, so the
        map must be a single repeated category."""
        model = tiny_model()
        raster = np.full((64, 64, 3), 128, dtype=np.uint8)
        bm = map_region(raster, model, RemapTable.identity(3), block=16, input_resize=8)
        assert len(np.unique(bm.grid)) == 1

    def test_deterministic(self):
        model = tiny_model()
        raster = (np.random.default_rng(4).random((48, 48, 3)) * 255).astype(np.uint8)
        a = map_region(raster, model, RemapTable.identity(3), block=16, input_resize=8)
        b = map_region(raster, model, RemapTable.identity(3), block=16, input_resize=8)
        assert np.array_equal(a.grid, b.grid)


class TestScoreMap:
    def make_map(self):
        return BlockMap(
            grid=np.array([[0, 1, 2], [1, 1, 0]]),
            block_size=16,
            raster_shape=(32, 48),
            categories=((0, "a"), (1, "b"), (2, "c")),
        )

    def test_against_metrics_oracle(self):
        bm = self.make_map()
        ann = {(0, 0): 0, (0, 1): 1, (0, 2): 0, (1, 0): 1, (1, 2): 2}
        report = score_map(bm, ann)
        preds = [0, 1, 2, 1, 0]
        labels = [0, 1, 0, 1, 2]
        assert report.oa == pytest.approx(overall_accuracy(preds, labels))
        assert report.ba == pytest.approx(balanced_accuracy(preds, labels, range(3)))

    def test_full_annotation_equivalence(self):
        bm = self.make_map()
        ann = {(r, c): int(bm.grid[r, c]) for r in range(2) for c in range(3)}
        report = score_map(bm, ann)
        assert report.oa == 1.0 and report.ba == 1.0

    def test_out_of_grid_annotation(self):
        with pytest.raises(ValueError):
            score_map(self.make_map(), {(5, 0): 1})

    def test_empty_annotations(self):
        with pytest.raises(ValueError):
            score_map(self.make_map(), {})
