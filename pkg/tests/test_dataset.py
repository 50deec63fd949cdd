from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cloudseg.dataset import (
    AnnotationError,
    DatasetIndex,
    SubmissionRecord,
    binarize,
    load_annotations,
    masks_from_probs,
    predict_and_encode,
    score_submission,
    split_train_val,
    write_annotations,
)
from cloudseg.model import CLASSES, build_efficientunet
from cloudseg.rle import Rle, parse_rle, rle_decode, rle_encode, rle_text

DATA = Path(__file__).parent / "data"

TWO_IMAGES = """Image_Label,EncodedPixels
img1.jpg_Fish,1 3
img1.jpg_Flower,
img1.jpg_Gravel,5 2 9 1
img1.jpg_Sugar,
img2.jpg_Fish,
img2.jpg_Flower,2 2
img2.jpg_Gravel,
img2.jpg_Sugar,1 16
"""


def head_model(bias):
    """b0 model whose output is fixed by the head bias alone."""
    store = {"head.weight": np.zeros((4, 16, 1, 1), np.float32), "head.bias": np.asarray(bias, np.float32)}
    return build_efficientunet("b0", init="weight-store", store=store, strict=False)


def index_of(n):
    text = "Image_Label,EncodedPixels\n" + "".join(
        f"im{i}.jpg_{c},{i + 1} 1\n" for i in range(n) for c in CLASSES)
    return load_annotations(text)


class TestLoad:
    def test_two_image_fixture(self):
        idx = load_annotations(TWO_IMAGES)
        assert idx.images == ["img1.jpg", "img2.jpg"]
        assert len(idx.annotations) == 8
        assert idx.annotations[("img1.jpg", "Fish")] == Rle.from_pairs([(1, 3)])
        assert len(idx.annotations[("img1.jpg", "Flower")]) == 0

    def test_from_path_and_file(self, tmp_path):
        p = tmp_path / "train.csv"
        p.write_text(TWO_IMAGES)
        assert load_annotations(p).images == load_annotations(open(p)).images == ["img1.jpg", "img2.jpg"]

    def test_missing_classes_filled(self):
        idx = load_annotations("Image_Label,EncodedPixels\nx.jpg_Sugar,4 4\n")
        assert len(idx.annotations) == 4
        assert idx.annotations[("x.jpg", "Fish")] == Rle.empty()

    def test_masks(self):
        idx = load_annotations(TWO_IMAGES)
        m = idx.masks("img2.jpg", (4, 4))
        assert m.shape == (4, 4, 4)
        assert m[3].all() and m[1].sum() == 2

    @pytest.mark.parametrize("text, match", [
        ("Image,Pixels\n", "line 1"),
        ("", "line 1"),
        ("Image_Label,EncodedPixels\nimg1.jpg_Fish,1 3\nimg1.jpg_Fish,\n", "line 3: duplicate.*img1.jpg_Fish"),
        ("Image_Label,EncodedPixels\nimg1.jpg_Cumulus,1 3\n", "line 2: unknown class 'Cumulus'"),
        ("Image_Label,EncodedPixels\nimg1.jpg_Fish,1 3\nimg1.jpg_Sugar,1 x\n", "line 3: token 1"),
        ("Image_Label,EncodedPixels\nimg1.jpg_Fish,1 3,9\n", "line 2: expected 2 columns"),
        ("Image_Label,EncodedPixels\nFish,1 3\n", "line 2"),
    ])
    def test_errors(self, text, match):
        with pytest.raises(AnnotationError, match=match):
            load_annotations(text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_annotations(tmp_path / "nope.csv")

    def test_write_round_trip(self, tmp_path):
        idx = load_annotations(TWO_IMAGES)
        again = load_annotations(write_annotations(idx, tmp_path / "out.csv"))
        assert again.images == idx.images and again.annotations == idx.annotations

    def test_record_fields(self):
        rec = SubmissionRecord("a_b.jpg_Gravel", "1 2")
        assert rec.filename == "a_b.jpg" and rec.class_name == "Gravel"


class TestSplit:
    def test_ten_images(self):
        train, val = split_train_val(index_of(10), seed=0)
        assert len(train) == 8 and len(val) == 2

    def test_deterministic(self):
        a = split_train_val(index_of(25), seed=3)
        b = split_train_val(index_of(25), seed=3)
        assert a[0].images == b[0].images
        assert split_train_val(index_of(25), seed=4)[0].images != a[0].images

    @settings(max_examples=30)
    @given(st.integers(1, 60), st.integers(0, 2**31), st.floats(0.05, 0.95))
    def test_partition(self, n, seed, frac):
        idx = index_of(n)
        train, val = split_train_val(idx, frac, seed)
        assert set(train.images).isdisjoint(val.images)
        assert sorted(train.images + val.images) == sorted(idx.images)
        assert len(train) == int(Fraction(frac) * n + Fraction(1, 2))
        for part in (train, val):
            assert len(part.annotations) == 4 * len(part)
            assert all(name in part.images for name, _ in part.annotations)

    def test_bad_fraction(self):
        with pytest.raises(ValueError):
            split_train_val(index_of(3), 1.0)


class TestMasksFromProbs:
    def test_tie_excluded(self):
        assert not binarize(np.full((2, 2), 0.5)).any()
        assert binarize(np.full((2, 2), np.nextafter(0.5, 1))).all()

    def test_quarter_dims(self):
        probs = np.zeros((4, 1400, 2100))
        assert masks_from_probs(probs).shape == (4, 350, 525)

    def test_orders_differ(self):
        probs = np.zeros((1, 4, 4))
        probs[0, 2, 2] = 1.0  # cell centre hot, cell mean 1/16
        assert masks_from_probs(probs, 0.5, "quarter", "threshold-first").all()
        assert not masks_from_probs(probs, 0.5, "quarter", "scale-first").any()

    def test_native(self):
        probs = np.random.default_rng(0).random((4, 8, 12))
        np.testing.assert_array_equal(masks_from_probs(probs, 0.3, "native"), probs > 0.3)

    def test_bad_options(self):
        with pytest.raises(ValueError):
            masks_from_probs(np.zeros((4, 8, 8)), scale="half")
        with pytest.raises(ValueError):
            masks_from_probs(np.zeros((4, 8, 8)), scale_order="sideways")
        with pytest.raises(ValueError):
            binarize(np.zeros(3), 1.0)


class TestPredict:
    def test_negative_head_gives_empty(self):
        img = np.random.default_rng(0).integers(0, 256, (40, 60, 3), dtype=np.uint8)
        report = predict_and_encode(head_model([-1e4] * 4), [("x.jpg", img)], size=(32, 64), scale="native")
        assert [r.image_label for r in report.records] == [f"x.jpg_{c}" for c in CLASSES]
        assert all(r.encoded_pixels == "" for r in report.records)
        assert report.failures == []

    def test_tie_at_half_excluded(self):
        # two classes share the probability mass exactly
        img = np.zeros((32, 32, 3), np.uint8)
        report = predict_and_encode(head_model([50, 50, -50, -50]), [("t.jpg", img)], size=(32, 32), scale="native")
        assert all(r.encoded_pixels == "" for r in report.records)

    def test_dominant_class_fills(self):
        img = np.zeros((32, 32, 3), np.uint8)
        report = predict_and_encode(head_model([0, 0, 20, 0]), [("t.jpg", img)], size=(32, 32), scale="native")
        texts = {r.class_name: r.encoded_pixels for r in report.records}
        assert texts["Gravel"] == "1 1024" and texts["Fish"] == ""

    def test_quarter_scale_decodes_to_350x525(self):
        img = np.zeros((1400, 2100, 3), np.uint8)
        report = predict_and_encode(head_model([0, 0, 0, 20]), [("big.jpg", img)], size=(64, 96))
        rle = parse_rle(report.records[3].encoded_pixels)
        assert rle_decode(rle, 350, 525).all()
        with pytest.raises(ValueError):
            rle_decode(rle, 350, 524)

    def test_failures_reported(self, tmp_path):
        bad = tmp_path / "broken.jpg"
        bad.write_bytes(b"not an image")
        good = np.zeros((32, 32, 3), np.uint8)
        report = predict_and_encode(head_model([0] * 4), [("broken.jpg", bad), ("ok.jpg", good)],
                                    size=(32, 32), scale="native", threads=2)
        assert [f[0] for f in report.failures] == ["broken.jpg"]
        assert len(report.records) == 4

    def test_threshold_validated(self):
        with pytest.raises(ValueError):
            predict_and_encode(head_model([0] * 4), [], threshold=0.0)


class TestScore:
    def test_hand_fixture(self):
        report = score_submission(DATA / "score_pred.csv", DATA / "score_truth.csv")
        assert report["n_pairs"] == 12
        assert report["mean_dice"] == pytest.approx(23 / 36, abs=1e-12)
        expected = {"Fish": 1 / 2, "Flower": 13 / 18, "Gravel": 1 / 2, "Sugar": 5 / 6}
        for c, v in expected.items():
            assert report["per_class"][c] == pytest.approx(v, abs=1e-12)

    def test_self_score_is_one(self):
        assert score_submission(DATA / "score_truth.csv", DATA / "score_truth.csv")["mean_dice"] == 1.0
        assert score_submission(TWO_IMAGES, TWO_IMAGES)["mean_dice"] == 1.0

    def test_half_empty(self):
        truth = "Image_Label,EncodedPixels\n" + "".join(
            f"i{i}.jpg_{c},{'1 5' if j % 2 else ''}\n" for i in range(3) for j, c in enumerate(CLASSES))
        empty = "Image_Label,EncodedPixels\n" + "".join(
            f"i{i}.jpg_{c},\n" for i in range(3) for c in CLASSES)
        assert score_submission(empty, truth)["mean_dice"] == 0.5

    def test_unknown_prediction_key(self):
        with pytest.raises(AnnotationError, match="zzz.jpg_Fish"):
            score_submission("Image_Label,EncodedPixels\nzzz.jpg_Fish,\n", TWO_IMAGES)

    def test_encode_round_trip_scores_one(self):
        rng = np.random.default_rng(2)
        truth = DatasetIndex()
        pred = []
        for i in range(3):
            name = f"r{i}.jpg"
            truth.images.append(name)
            for c in CLASSES:
                m = rng.random((14, 21)) < 0.3
                truth.annotations[(name, c)] = rle_encode(m)
                pred.append(SubmissionRecord(f"{name}_{c}", rle_text(rle_encode(m))))
        text = "Image_Label,EncodedPixels\n" + "".join(f"{r.image_label},{r.encoded_pixels}\n" for r in pred)
        assert score_submission(text, truth)["mean_dice"] == 1.0
