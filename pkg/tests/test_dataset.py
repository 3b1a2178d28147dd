import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis.extra import numpy as hnp
from hypothesis import strategies as st

from evoattack import fixtures
from evoattack.dataset import filter_correctly_classified, load_dataset, write_labels
from evoattack.errors import ConfigError, DatasetError, FixtureError
from evoattack.fixtures import FixtureSpec, generate_fixtures, random_model, sample_image
from evoattack.oracle import ModelOracle, load_model
from evoattack.ppm import decode_ppm, encode_ppm, quantize, read_ppm, write_ppm
from evoattack.tensors import ImageTensor, argmax


class TestPPM:
    def test_decode_with_comment(self):
        buf = b"P6\n# made by hand\n2 1\n255\n" + bytes([0, 128, 255, 10, 20, 30])
        img = decode_ppm(buf)
        assert img.shape == (1, 2, 3)
        np.testing.assert_allclose(img.data[0, 0], [0, 128 / 255, 1])

    def test_raster_may_start_with_whitespace_byte(self):
        buf = b"P6 1 1 255\n" + bytes([10, 32, 9])
        np.testing.assert_allclose(decode_ppm(buf).data[0, 0] * 255, [10, 32, 9])

    @pytest.mark.parametrize("buf,msg", [
        (b"P3\n1 1\n255\n000", "magic"),
        (b"P6\n1 1\n65535\n" + bytes(6), "maxval"),
        (b"P6\n2 2\n255\n" + bytes(5), "expected 12 raster bytes, found 5"),
        (b"P6\n1", "truncated"),
        (b"P6\nx 1\n255\n" + bytes(3), "non-integer"),
        (b"P6\n0 1\n255\n", "invalid PPM size"),
    ])
    def test_rejects(self, buf, msg):
        with pytest.raises(DatasetError, match=msg):
            decode_ppm(buf)

    def test_quantize_rounds_half_up(self):
        assert quantize([0.5 / 255, 1.5 / 255, 2.49 / 255, 1.2, -0.1]).tolist() == [1, 2, 2, 255, 0]

    @settings(max_examples=50, deadline=None)
    @given(hnp.arrays(np.uint8, st.tuples(st.integers(1, 5), st.integers(1, 5), st.just(3))))
    def test_bytes_round_trip(self, raw):
        img = ImageTensor(raw / 255.0)
        again = decode_ppm(encode_ppm(img))
        np.testing.assert_array_equal(quantize(again.data), raw)

    def test_file_round_trip(self, tmp_path):
        img = ImageTensor(np.arange(12).reshape(2, 2, 3) / 255.0)
        write_ppm(tmp_path / "a.ppm", img)
        assert read_ppm(tmp_path / "a.ppm") == img

    def test_missing_file(self, tmp_path):
        with pytest.raises(DatasetError, match="cannot read"):
            read_ppm(tmp_path / "x.ppm")


def make_dataset(root, rows, header="filename,label,target"):
    for name in {r[0] for r in rows}:
        write_ppm(root / name, ImageTensor(np.full((2, 2, 3), 0.5)))
    lines = [header] + [",".join("" if v is None else str(v) for v in r) for r in rows]
    (root / "labels.csv").write_text("\n".join(lines) + "\n")


class TestDataset:
    def test_load(self, tmp_path):
        make_dataset(tmp_path, [("a.ppm", 1, 2), ("b.ppm", 0, None)])
        ds = load_dataset(tmp_path)
        assert len(ds) == 2 and ds.image_shape == (2, 2, 3) and ds.num_classes == 3
        assert [(e.true_class, e.target_class) for e in ds] == [(1, 2), (0, None)]

    def test_two_column_header(self, tmp_path):
        write_ppm(tmp_path / "a.ppm", ImageTensor(np.zeros((1, 1, 3))))
        (tmp_path / "labels.csv").write_text("filename,label\na.ppm,3\n")
        assert load_dataset(tmp_path, 4).entries[0].true_class == 3

    @pytest.mark.parametrize("rows,msg", [
        ([("a.ppm", "x", "")], ":2: label 'x' is not an integer"),
        ([("a.ppm", 1, 1)], "target equals true label"),
        ([("a.ppm", -1, "")], "negative"),
    ])
    def test_bad_rows(self, tmp_path, rows, msg):
        make_dataset(tmp_path, rows)
        with pytest.raises(DatasetError, match=msg):
            load_dataset(tmp_path)

    def test_missing_image(self, tmp_path):
        (tmp_path / "labels.csv").write_text("filename,label\nghost.ppm,0\n")
        with pytest.raises(DatasetError, match="missing image"):
            load_dataset(tmp_path)

    def test_bad_header(self, tmp_path):
        (tmp_path / "labels.csv").write_text("file,class\n")
        with pytest.raises(DatasetError, match=":1: header"):
            load_dataset(tmp_path)

    def test_mixed_shapes(self, tmp_path):
        write_ppm(tmp_path / "a.ppm", ImageTensor(np.zeros((1, 1, 3))))
        write_ppm(tmp_path / "b.ppm", ImageTensor(np.zeros((2, 1, 3))))
        (tmp_path / "labels.csv").write_text("filename,label\na.ppm,0\nb.ppm,0\n")
        with pytest.raises(DatasetError, match="differs"):
            load_dataset(tmp_path)

    def test_class_range(self, tmp_path):
        make_dataset(tmp_path, [("a.ppm", 1, 5)])
        with pytest.raises(DatasetError, match="target 5 out of range for a 4-class"):
            load_dataset(tmp_path, 4)

    def test_write_labels(self, tmp_path):
        write_labels(tmp_path, [("a.ppm", 0, None), ("b.ppm", 2, 1)])
        assert (tmp_path / "labels.csv").read_text() == "filename,label,target\na.ppm,0,\nb.ppm,2,1\n"


class TestFixtures:
    def test_correct_by_construction(self, fixture_tree):
        model_path, data_dir = fixture_tree
        oracle = ModelOracle(load_model(model_path))
        ds = load_dataset(data_dir, oracle.num_classes)
        assert len(ds) == 20 and ds.image_shape == (16, 16, 3)
        assert len(filter_correctly_classified(ds, oracle)) == 20
        assert sorted({e.true_class for e in ds}) == [0, 1, 2, 3]
        assert all(e.target_class != e.true_class for e in ds)

    def test_reproducible(self, tmp_path):
        spec = FixtureSpec(hw=4, images=4)
        a = generate_fixtures(9, tmp_path / "a", spec)
        b = generate_fixtures(9, tmp_path / "b", spec)
        assert a[0].read_bytes() == b[0].read_bytes()
        for name in ("labels.csv", "img003.ppm"):
            assert (a[1] / name).read_bytes() == (b[1] / name).read_bytes()

    def test_filter_drops_misclassified(self, fixture_tree, tmp_path):
        model_path, data_dir = fixture_tree
        oracle = ModelOracle(load_model(model_path))
        ds = load_dataset(data_dir)
        first = ds.entries[0]
        write_ppm(tmp_path / first.filename, first.image)
        write_labels(tmp_path, [(first.filename, (first.true_class + 1) % 4, None)])
        assert len(filter_correctly_classified(load_dataset(tmp_path, 4), oracle)) == 0

    def test_unreachable_label(self, monkeypatch):
        monkeypatch.setattr(fixtures, "MAX_DRAWS", 50)
        model = random_model(np.random.default_rng(0), FixtureSpec(hw=2, classes=2, hidden=()))
        # a label outside the output range can never be argmax
        with pytest.raises(FixtureError, match="within 50 draws"):
            sample_image(np.random.default_rng(0), model, 7, (2, 2, 3))

    @pytest.mark.parametrize("kw", [dict(classes=1), dict(contrast=0.0), dict(channels=1), dict(images=0)])
    def test_bad_spec(self, kw):
        with pytest.raises(ConfigError):
            FixtureSpec(**kw).validate()

    def test_sampled_image_is_quantized(self):
        spec = FixtureSpec(hw=3)
        rng = np.random.default_rng(1)
        model = random_model(rng, spec)
        label = argmax(model.forward(ImageTensor(np.full((3, 3, 3), 0.5))))
        img = sample_image(rng, model, label, (3, 3, 3))
        np.testing.assert_array_equal(img.data * 255, np.round(img.data * 255))
