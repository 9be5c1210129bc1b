"""Codec round-trips: text, boxes, structs, sudoku, and the toy image codec."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from instrux import errors
from instrux.modality import image as image_mod
from instrux.modality import struct as struct_mod
from instrux.modality import text as text_mod
from instrux.modality.box import BoundingBox, BoxQuantizer
from instrux.vocab import MASK, ByteVocab

VOCAB = ByteVocab()


class TestTextTokenizer:
    def test_empty(self):
        assert VOCAB.tokenize("") == []
        assert VOCAB.detokenize([]) == ""

    def test_simple_round_trip(self):
        ids = VOCAB.tokenize("run and stop")
        assert VOCAB.detokenize(ids) == "run and stop"

    @settings(max_examples=300, deadline=None)
    @given(st.text(max_size=200))
    def test_round_trip_property(self, s):
        assert VOCAB.detokenize(VOCAB.tokenize(s)) == s

    def test_mask_ratio_zero_is_identity(self):
        tokens = VOCAB.tokenize("hello world")
        rng = np.random.default_rng(0)
        assert text_mod.apply_text_mask(tokens, 0.0, rng) == tokens

    def test_mask_ratio_one_masks_everything(self):
        tokens = VOCAB.tokenize("hello world")
        rng = np.random.default_rng(0)
        assert text_mod.apply_text_mask(tokens, 1.0, rng) == [MASK] * len(tokens)

    def test_mask_ratio_binomial_bound(self):
        tokens = list(range(4, 1004))
        rng = np.random.default_rng(0)
        masked = text_mod.apply_text_mask(tokens, 0.3, rng)
        count = sum(1 for t in masked if t == MASK)
        assert 255 <= count <= 345  # 300 +/- 3 sigma

    def test_mask_deterministic_under_seed(self):
        tokens = VOCAB.tokenize("some reasonably long string for masking")
        a = text_mod.apply_text_mask(tokens, 0.5, np.random.default_rng(3))
        b = text_mod.apply_text_mask(tokens, 0.5, np.random.default_rng(3))
        assert a == b

    def test_noise_stays_in_vocab(self):
        tokens = VOCAB.tokenize("abcdefgh" * 10)
        noised = text_mod.apply_text_noise(tokens, 0.5, np.random.default_rng(0), VOCAB)
        assert all(4 <= t < VOCAB.size for t in noised)
        assert len(noised) == len(tokens)


class TestBoxQuantizer:
    def test_full_image_box(self):
        q = BoxQuantizer(640, 480, 1000)
        tokens = q.quantize(BoundingBox(0, 0, 640, 480))
        assert tokens == (0, 0, 999, 999)

    def test_origin_point_box(self):
        q = BoxQuantizer(100, 100, 1000)
        tokens = q.quantize(BoundingBox(0, 0, 0, 0))
        assert tokens == (0, 0, 0, 0)
        back = q.dequantize(tokens)
        assert back.x1 == pytest.approx(0.05)  # half-bin center

    def test_out_of_bounds(self):
        q = BoxQuantizer(100, 100)
        with pytest.raises(errors.OutOfBounds):
            q.quantize(BoundingBox(0, 0, 150, 50))

    def test_degenerate_box_rejected(self):
        with pytest.raises(errors.OutOfBounds):
            BoundingBox(10, 10, 5, 20)

    def test_round_trip_half_bin(self):
        rng = np.random.default_rng(0)
        q = BoxQuantizer(640, 480, 1000)
        worst = 0.0
        for _ in range(10000):
            x = np.sort(rng.uniform(0, 640, size=2))
            y = np.sort(rng.uniform(0, 480, size=2))
            box = BoundingBox(x[0], y[0], x[1], y[1])
            back = q.dequantize(q.quantize(box))
            worst = max(worst,
                        abs(back.x1 - box.x1) / 640, abs(back.x2 - box.x2) / 640,
                        abs(back.y1 - box.y1) / 480, abs(back.y2 - box.y2) / 480)
        assert worst <= 0.5 / 1000 + 1e-12

    def test_text_round_trip(self):
        box = BoundingBox.from_text("1.5, 2.5, 10, 20")
        assert (box.x1, box.y1, box.x2, box.y2) == (1.5, 2.5, 10.0, 20.0)
        assert BoundingBox.from_text("1 2 3 4") == BoundingBox(1, 2, 3, 4)


class TestStruct:
    def test_single_cell(self):
        assert struct_mod.table_to_text([["x"]]) == "x"

    def test_cocum_rows(self):
        rows = [["Cocum", "eatType", "restaurant"], ["Cocum", "food", "English"]]
        assert struct_mod.table_to_text(rows) == \
            "Cocum : eatType : restaurant | Cocum : food : English"

    def test_ragged_rows(self):
        with pytest.raises(errors.RaggedTable):
            struct_mod.table_to_text([["a", "b"], ["c"]])

    def test_empty_table(self):
        with pytest.raises(errors.EmptyStruct):
            struct_mod.table_to_text([])

    def test_database_format(self):
        db = {
            "name": "concert",
            "tables": [
                {"name": "singer", "columns": ["id", "name"],
                 "mentioned_rows": {"name": ["Joe"]}},
                {"name": "stadium", "columns": ["id", "city"]},
            ],
        }
        assert struct_mod.database_to_text(db) == \
            "| concert | singer : id, name ( Joe ) stadium : id, city"


class TestSudoku:
    PAPER_GRID_ROW1 = [0, 8, 5, 2, 3, 0, 0, 7, 0]

    def test_paper_row_rendering(self):
        grid = np.zeros((9, 9), dtype=int)
        grid[0] = self.PAPER_GRID_ROW1
        text = struct_mod.sudoku_to_text(grid)
        assert text.split(" | ")[0] == "0 : 8 : 5 : 2 : 3 : 0 : 0 : 7 : 0"

    def test_all_zero_grid(self):
        text = struct_mod.sudoku_to_text(np.zeros((9, 9), dtype=int))
        rows = text.split(" | ")
        assert len(rows) == 9
        assert all(r == " : ".join(["0"] * 9) for r in rows)

    def test_round_trip_random(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            grid = rng.integers(0, 10, size=(9, 9))
            assert (struct_mod.text_to_sudoku(struct_mod.sudoku_to_text(grid)) == grid).all()

    def test_bad_text(self):
        with pytest.raises(errors.BadSudokuText):
            struct_mod.text_to_sudoku("1 : 2 | 3")


class TestImage:
    def test_ppm_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, size=(17, 23, 3), dtype=np.uint8)
        path = str(tmp_path / "img.ppm")
        image_mod.write_ppm(path, img)
        assert (image_mod.read_ppm(path) == img).all()

    def test_patch_arithmetic(self):
        img = np.zeros((256, 256, 3), dtype=np.uint8)
        feats = image_mod.image_to_patches(img, 16)
        assert feats.shape == (256, 768)

    def test_constant_zero_image(self):
        feats = image_mod.image_to_patches(np.zeros((32, 32, 3), dtype=np.uint8), 8)
        assert np.allclose(feats, -image_mod.PATCH_MEAN / image_mod.PATCH_STD)

    def test_patch_row_major_order(self):
        img = np.zeros((32, 32, 3), dtype=np.uint8)
        img[0:16, 16:32] = 255
        feats = image_mod.image_to_patches(img, 16)
        assert np.allclose(feats[1], (1.0 - image_mod.PATCH_MEAN) / image_mod.PATCH_STD)
        assert np.allclose(feats[0], -image_mod.PATCH_MEAN / image_mod.PATCH_STD)

    def test_indivisible_patch(self):
        with pytest.raises(errors.BadImage):
            image_mod.image_to_patches(np.zeros((30, 30, 3), dtype=np.uint8), 16)

    def test_code_black_white(self):
        black = np.zeros((256, 256, 3), dtype=np.uint8)
        white = np.full((256, 256, 3), 255, dtype=np.uint8)
        assert image_mod.image_code_encode(black) == [0] * 256
        assert image_mod.image_code_encode(white) == [255] * 256

    def test_code_idempotent(self):
        rng = np.random.default_rng(1)
        img = rng.integers(0, 256, size=(256, 256, 3), dtype=np.uint8)
        codes = image_mod.image_code_encode(img)
        once = image_mod.image_code_decode(codes)
        assert image_mod.image_code_encode(once) == codes

    def test_center_mask(self):
        img = np.full((64, 64, 3), 200, dtype=np.uint8)
        masked = image_mod.apply_center_mask(img, 0.5)
        assert (masked[24:40, 24:40] == 0).all()
        assert (masked[0, 0] == 200).all()

    def test_draw_box_edges(self):
        from instrux.modality.image import draw_box
        img = np.zeros((64, 64, 3), dtype=np.uint8)
        out = draw_box(img, BoundingBox(10, 10, 30, 30))
        assert (out[10, 10:31] == [255, 0, 0]).all()
        assert (out[10:31, 30] == [255, 0, 0]).all()
        assert (out[40, 40] == 0).all()
