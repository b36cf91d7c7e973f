import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from swinsight import datapipe as dp
from swinsight.errors import DataError, InsufficientSamplesError, ManifestError, QuarantineError


def write_manifest(path, rows, header="path,label,dataset,split"):
    path.write_text(header + "\n" + "\n".join(rows) + "\n", encoding="utf-8")
    return path


def synthetic(n_real, n_cgi, dataset="D", split=None):
    samples = [dp.Sample(f"{dataset}/r{i}.png", 0, dataset, split) for i in range(n_real)]
    samples += [dp.Sample(f"{dataset}/c{i}.png", 1, dataset, split) for i in range(n_cgi)]
    return dp.DatasetManifest(samples)


# ---- manifest


def test_load_manifest_valid(tmp_path):
    m = dp.load_manifest(write_manifest(tmp_path / "m.csv", ["# comment", "a.png,real,D1,train", "b.png,cgi,D1,test"]))
    assert len(m) == 2
    assert m.class_counts() == {"real": 1, "cgi": 1}
    assert m.dataset_counts() == {"D1": 2}
    assert m.root == tmp_path
    assert m.samples[1] == dp.Sample("b.png", 1, "D1", "test")


def test_load_manifest_row_addressed_errors(tmp_path):
    with pytest.raises(ManifestError, match="row 3.*synthetic"):
        dp.load_manifest(write_manifest(tmp_path / "a.csv", ["a.png,real,D1,train", "b.png,synthetic,D1,train"]))
    with pytest.raises(ManifestError, match="row 3.*duplicate"):
        dp.load_manifest(write_manifest(tmp_path / "b.csv", ["a.png,real,D1,train", "a.png,cgi,D1,train"]))
    with pytest.raises(ManifestError, match="split"):
        dp.load_manifest(write_manifest(tmp_path / "c.csv", ["a.png,real,D1,holdout"]))
    with pytest.raises(ManifestError, match="header"):
        dp.load_manifest(write_manifest(tmp_path / "d.csv", ["a.png,real,D1,train"], header="file,label,dataset,split"))
    with pytest.raises(ManifestError, match="not found"):
        dp.load_manifest(tmp_path / "missing.csv")


def test_empty_split_means_unassigned(tmp_path):
    m = dp.load_manifest(write_manifest(tmp_path / "m.csv", ["a.png,real,D1,"]))
    assert m.samples[0].split is None


def test_manifest_csv_round_trip(tmp_path):
    m = synthetic(3, 2, split="train")
    m.save(tmp_path / "m.csv")
    assert dp.load_manifest(tmp_path / "m.csv").samples == m.samples


def test_merge_rebases_paths(tmp_path):
    a = dp.DatasetManifest([dp.Sample("x.png", 0, "A")], tmp_path / "a")
    b = dp.DatasetManifest([dp.Sample("x.png", 1, "B")], tmp_path / "b")
    merged = dp.merge_manifests([a, b], tmp_path)
    assert [s.path for s in merged.samples] == ["a/x.png", "b/x.png"]


# ---- pixels


def test_decode_pure_red_and_modes(tmp_path):
    Image.new("RGB", (1, 1), (255, 0, 0)).save(tmp_path / "red.png")
    np.testing.assert_array_equal(dp.decode_image(tmp_path / "red.png"), [[[1.0]], [[0.0]], [[0.0]]])
    Image.new("L", (2, 1), 51).save(tmp_path / "gray.png")
    np.testing.assert_allclose(dp.decode_image(tmp_path / "gray.png"), 0.2)
    Image.new("RGBA", (1, 1), (0, 255, 0, 10)).save(tmp_path / "alpha.png")
    np.testing.assert_array_equal(dp.decode_image(tmp_path / "alpha.png")[:, 0, 0], [0, 1, 0])
    a = dp.decode_image(tmp_path / "red.png")
    np.testing.assert_array_equal(a, dp.decode_image(tmp_path / "red.png"))


def test_decode_truncated_and_missing_quarantine(tmp_path):
    Image.new("RGB", (16, 16), (1, 2, 3)).save(tmp_path / "ok.png")
    raw = (tmp_path / "ok.png").read_bytes()
    (tmp_path / "cut.png").write_bytes(raw[: len(raw) // 2])
    with pytest.raises(QuarantineError) as info:
        dp.decode_image(tmp_path / "cut.png")
    assert info.value.reason.startswith("undecodable")
    with pytest.raises(QuarantineError, match="missing"):
        dp.decode_image(tmp_path / "nope.png")


def test_resize_examples():
    rng = np.random.default_rng(0)
    img = rng.random((3, 5, 5))
    np.testing.assert_allclose(dp.resize_bilinear(img, 5), img, atol=1e-6)
    two = rng.random((3, 2, 2))
    np.testing.assert_allclose(dp.resize_bilinear(two, 1)[:, 0, 0], two.mean(axis=(1, 2)), atol=1e-12)
    const = np.full((3, 7, 3), 0.3)
    for size in (1, 4, 11):
        np.testing.assert_allclose(dp.resize_bilinear(const, size), 0.3, atol=1e-12)


def test_resize_upsample_half_pixel_oracle():
    # 1-D row [0, 1] upsampled to 4: sample centres at -0.25, 0.25, 0.75, 1.25 clamp to [0, 1]
    img = np.tile(np.array([0.0, 1.0]), (3, 2, 1))
    out = dp.resize_bilinear(img, 4)
    np.testing.assert_allclose(out[0, 0], [0.0, 0.25, 0.75, 1.0])


def test_normalize_examples():
    img = np.zeros((3, 1, 1))
    img[0] = 0.485
    img[1] = 0.456 + 0.224
    out = dp.normalize(img)
    assert out[0, 0, 0] == pytest.approx(0.0, abs=1e-15)
    assert out[1, 0, 0] == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_normalize_invertible(seed):
    img = np.random.default_rng(seed).random((3, 4, 4))
    np.testing.assert_allclose(dp.denormalize(dp.normalize(img)), img, atol=1e-6)


# ---- curation


def test_balance_examples():
    m = synthetic(2000, 1800)
    b = dp.balance_classes(m, 1500, seed=1)
    assert b.class_counts() == {"real": 1500, "cgi": 1500}
    assert b.samples == dp.balance_classes(m, 1500, seed=1).samples
    assert b.samples != dp.balance_classes(m, 1500, seed=2).samples
    with pytest.raises(InsufficientSamplesError, match="cgi=1800") as info:
        dp.balance_classes(m, 1900, seed=1)
    assert info.value.available == {"real": 2000, "cgi": 1800}


def test_balance_skips_quarantined():
    m = synthetic(4, 3)
    m.quarantine.append(("D/c0.png", "undecodable"))
    with pytest.raises(InsufficientSamplesError):
        dp.balance_classes(m, 3, 0)
    assert "D/c0.png" not in {s.path for s in dp.balance_classes(m, 2, 0).samples}


def test_split_examples():
    m = dp.build_splits(synthetic(100, 100), (0.7, 0.15, 0.15), seed=0)
    for split, n in (("train", 70), ("val", 15), ("test", 15)):
        assert m.class_counts(split) == {"real": n, "cgi": n}
    allt = dp.build_splits(synthetic(5, 5), (1.0, 0.0, 0.0), seed=0)
    assert {s.split for s in allt.samples} == {"train"}
    with pytest.raises(InsufficientSamplesError, match="label=1"):
        dp.build_splits(synthetic(5, 2), (0.7, 0.15, 0.15), seed=0)
    with pytest.raises(ValueError):
        dp.build_splits(synthetic(5, 5), (0.5, 0.2, 0.2), seed=0)


@settings(max_examples=60, deadline=None)
@given(st.integers(3, 40), st.integers(3, 40), st.integers(3, 20), st.integers(0, 1000))
def test_splits_partition_manifest(n_a, n_b, n_c, seed):
    m = dp.DatasetManifest(synthetic(n_a, n_b, "A").samples + synthetic(n_c, n_c, "B").samples)
    s = dp.build_splits(m, (0.6, 0.2, 0.2), seed)
    parts = [{x.path for x in s.samples if x.split == sp} for sp in dp.SPLITS]
    assert set.union(*parts) == {x.path for x in m.samples}
    assert sum(len(p) for p in parts) == len(m)
    assert [x.path for x in s.samples] == [x.path for x in m.samples]


@settings(max_examples=60, deadline=None)
@given(st.integers(5, 60), st.integers(5, 60), st.integers(3, 5), st.integers(0, 1000))
def test_balance_then_label_split_is_balanced_per_split(n_real, n_cgi, k, seed):
    per = min(n_real, n_cgi, 3 * k)
    b = dp.balance_classes(synthetic(n_real, n_cgi), per, seed)
    s = dp.build_splits(b, (0.7, 0.15, 0.15), seed, stratify=("label",))
    for sp in dp.SPLITS:
        c = s.class_counts(sp)
        assert c["real"] == c["cgi"]


# ---- fixture and batching


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("fx")
    dp.make_synthetic_fixture(out, 10, image_size=16, seed=3)
    return out


def test_fixture_layout_and_determinism(fixture_dir, tmp_path):
    m = dp.load_manifest(fixture_dir / "manifest.csv")
    assert len(list((fixture_dir / "images").glob("*.png"))) == 20
    assert m.class_counts() == {"real": 10, "cgi": 10}
    assert all(s.split is not None for s in m.samples)
    dp.make_synthetic_fixture(tmp_path, 10, image_size=16, seed=3)
    for s in m.samples:
        assert (tmp_path / s.path).read_bytes() == (fixture_dir / s.path).read_bytes()
    assert (tmp_path / "manifest.csv").read_bytes() == (fixture_dir / "manifest.csv").read_bytes()


def test_fixture_classes_differ_in_texture(fixture_dir):
    m = dp.load_manifest(fixture_dir / "manifest.csv")

    def roughness(label):
        vals = []
        for s in m.samples:
            if s.label == label:
                img = dp.decode_image(m.resolve(s))
                vals.append(np.mean(np.abs(np.diff(img, axis=2)) > 0.15))
        return np.mean(vals)

    assert roughness(1) > roughness(0)


def test_batch_iterator_sizes_order_and_quarantine(tmp_path):
    dp.make_synthetic_fixture(tmp_path, 35, image_size=8, seed=0, ratios=(1.0, 0.0, 0.0))
    m = dp.load_manifest(tmp_path / "manifest.csv")
    sizes = [len(b.labels) for b in dp.batch_iterator(m, "train", 32, 8)]
    assert sizes == [32, 32, 6]
    first = next(dp.batch_iterator(m, "train", 70, 8))
    np.testing.assert_array_equal(first.indices, np.arange(70))
    np.testing.assert_array_equal(first.labels, [s.label for s in m.samples])
    assert first.images.shape == (70, 3, 8, 8)
    again = next(dp.batch_iterator(m, "train", 70, 8, shuffle_seed=4))
    same = next(dp.batch_iterator(m, "train", 70, 8, shuffle_seed=4))
    assert again.images.tobytes() == same.images.tobytes()

    (tmp_path / m.samples[3].path).write_bytes(b"not a png")
    q = []
    n = sum(len(b.labels) for b in dp.batch_iterator(m, "train", 32, 8, quarantine=q))
    assert n == 69 and [p for p, _ in q] == [m.samples[3].path]
    assert "path,reason" in dp.quarantine_csv(q)


def test_all_quarantined_is_an_error(tmp_path):
    m = dp.DatasetManifest([dp.Sample("gone.png", 0, "D", "test")], tmp_path)
    with pytest.raises(DataError):
        list(dp.batch_iterator(m, "test", 4, 8))
    with pytest.raises(DataError):
        dp.load_split(m, "train", 8)
