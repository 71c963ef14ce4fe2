import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from textrec import augment as aug
from textrec import imgio
from textrec.errors import ConfigError, ContractError, NumericError
from textrec.training import SynthSpec, render_label

RNG = np.random.default_rng(55)


class TestPgm:
    def test_write_read_roundtrip(self, tmp_path):
        img = RNG.integers(0, 256, size=(7, 11), dtype=np.uint8)
        path = tmp_path / "x.pgm"
        imgio.write_pgm(path, img)
        np.testing.assert_array_equal(imgio.read_pgm(path), img)

    def test_canonical_header(self, tmp_path):
        path = tmp_path / "x.pgm"
        imgio.write_pgm(path, np.zeros((2, 3), dtype=np.uint8))
        assert path.read_bytes() == b"P5\n3 2\n255\n" + b"\x00" * 6

    def test_comments_and_whitespace(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# a comment\n 3\t2 # inline\n255\n" + bytes(range(6)))
        img = imgio.read_pgm(path)
        assert img.shape == (2, 3)

    def test_rejects_wrong_magic(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P2\n1 1\n255\n0")
        with pytest.raises(ConfigError):
            imgio.read_pgm(path)

    def test_rejects_16bit(self, tmp_path):
        path = tmp_path / "deep.pgm"
        path.write_bytes(b"P5\n1 1\n65535\n\x00\x00")
        with pytest.raises(ConfigError):
            imgio.read_pgm(path)

    def test_float_quantization(self, tmp_path):
        path = tmp_path / "f.pgm"
        imgio.write_pgm(path, np.array([[0.0, 0.5, 1.0]]))
        np.testing.assert_array_equal(imgio.read_pgm(path)[0], [0, 128, 255])

    def test_resize_shapes_and_constants(self):
        img = np.full((8, 16), 0.25, dtype=np.float32)
        out = imgio.resize_bilinear(img, 16, 64)
        assert out.shape == (16, 64)
        np.testing.assert_allclose(out, 0.25, atol=1e-6)


class TestFiducials:
    def test_equal_spacing_n4_w100(self):
        spec = aug.make_fiducials(100, 32, 4)
        top = spec.points[:5]
        np.testing.assert_allclose(top[:, 0], [0, 25, 50, 75, 100])
        np.testing.assert_allclose(top[:, 1], 0)
        np.testing.assert_allclose(spec.points[5:, 1], 32)

    def test_point_count(self):
        assert aug.make_fiducials(100, 32, 4).count == 10
        assert aug.make_fiducials(128, 32, 9).count == 20

    def test_pad_width(self):
        spec = aug.make_fiducials(128, 32, 9)
        assert spec.pad == pytest.approx(128 / 36, abs=1e-9)

    def test_zero_n_rejected(self):
        with pytest.raises(ConfigError):
            aug.make_fiducials(100, 32, 0)


class FixedUniform:
    """Stub generator returning a preset uniform draw."""

    def __init__(self, value):
        self.value = value

    def uniform(self, lo, hi):
        assert lo <= self.value <= hi
        return self.value


class TestDisplacement:
    def test_theta_zero_identity(self):
        np.testing.assert_allclose(aug.displace((50, 0), 0.0, "ha"), [50, 0])

    def test_ha_hand_case(self):
        np.testing.assert_allclose(aug.displace((50, 0), -4.0, "ha"), [46, 0])

    def test_ca_hand_case(self):
        np.testing.assert_allclose(aug.displace((50, 32), -4.0, "ca"), [46, 36])

    def test_positive_theta_rejected(self):
        with pytest.raises(ContractError):
            aug.displace((50, 0), 0.5, "ha")

    def test_ca_moves_equally_in_x_and_y(self):
        for theta in (-0.5, -2.0, -7.25):
            moved = aug.displace((40.0, 16.0), theta, "ca")
            dx, dy = moved[0] - 40.0, moved[1] - 16.0
            assert abs(dx) == abs(dy) == abs(theta)

    def test_ha_preserves_y_exactly(self):
        for theta in (-0.5, -2.0, -7.25):
            assert aug.displace((40.0, 16.0), theta, "ha")[1] == 16.0

    def test_theta_mu0_w128_n9_s6(self):
        theta = aug.sample_theta(128, 9, 6, FixedUniform(0.0))
        assert theta == pytest.approx(-(128 / 72) * 6, abs=1e-9)

    def test_theta_mu2_s3(self):
        theta = aug.sample_theta(128, 9, 3, FixedUniform(2.0))
        assert theta == pytest.approx(-4.0, abs=1e-12)

    def test_intensity_out_of_range(self):
        with pytest.raises(ConfigError):
            aug.sample_theta(128, 9, 7, FixedUniform(0.0))
        with pytest.raises(ConfigError):
            aug.sample_theta(128, 9, 0, FixedUniform(0.0))

    @given(st.integers(1, 6), st.floats(0, 128 / 36))
    @settings(max_examples=100, deadline=None)
    def test_theta_never_positive(self, s, mu):
        assert aug.sample_theta(128, 9, s, FixedUniform(mu)) <= 0

    @given(st.floats(0, 128 / 36))
    @settings(max_examples=50, deadline=None)
    def test_magnitude_nondecreasing_in_s(self, mu):
        magnitudes = [abs(aug.sample_theta(128, 9, s, FixedUniform(mu))) for s in range(1, 7)]
        assert all(b >= a for a, b in zip(magnitudes, magnitudes[1:]))


class TestTps:
    def test_identity_solve(self):
        src = RNG.uniform(0, 100, size=(12, 2))
        params = aug.tps_solve(src, src)
        np.testing.assert_allclose(params.weights, 0, atol=1e-9)
        np.testing.assert_allclose(params.affine, [[0, 0], [1, 0], [0, 1]], atol=1e-9)

    def test_translation_solve(self):
        src = RNG.uniform(0, 100, size=(10, 2))
        params = aug.tps_solve(src, src + [3.0, -2.0])
        np.testing.assert_allclose(params.weights, 0, atol=1e-9)
        np.testing.assert_allclose(params.affine, [[3, -2], [1, 0], [0, 1]], atol=1e-8)

    def test_random_20_point_interpolation(self):
        src = RNG.uniform(0, 64, size=(20, 2))
        dst = src + RNG.normal(0, 3, size=(20, 2))
        params = aug.tps_solve(src, dst)
        mapped = aug.tps_map(params, src)
        assert np.abs(mapped - dst).max() < 1e-8

    def test_weight_moments_vanish(self):
        src = RNG.uniform(0, 64, size=(14, 2))
        dst = src + RNG.normal(0, 2, size=(14, 2))
        params = aug.tps_solve(src, dst)
        for col in range(2):
            w = params.weights[:, col]
            assert abs(w.sum()) < 1e-8
            assert abs((w * src[:, 0]).sum()) < 1e-6
            assert abs((w * src[:, 1]).sum()) < 1e-6

    def test_duplicate_points_singular(self):
        src = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [2.0, 0.0]])
        with pytest.raises(NumericError) as exc:
            aug.tps_solve(src, src + 1.0)
        assert "condition" in str(exc.value)

    def test_too_few_points(self):
        with pytest.raises(ConfigError):
            aug.tps_solve(np.zeros((2, 2)), np.ones((2, 2)))


class TestWarp:
    def test_identity_warp_bit_exact(self):
        img8 = RNG.integers(0, 256, size=(16, 24), dtype=np.uint8)
        img = img8.astype(np.float64) / 255.0
        pts = aug.make_fiducials(24, 16, 3).points
        params = aug.tps_solve(pts, pts)
        warped = aug.tps_warp(img, params, out_size=img.shape)
        assert warped.shape == img.shape
        np.testing.assert_array_equal(
            np.rint(warped * 255).astype(np.uint8), img8
        )

    def test_translation_moves_delta(self):
        img = np.zeros((16, 24))
        img[8, 10] = 1.0
        pts = aug.make_fiducials(24, 16, 3).points
        # backward params map output -> source: output x pulls from x-1
        params = aug.tps_solve(pts + [1.0, 0.0], pts)
        warped = aug.tps_warp(img, params, out_size=img.shape)
        assert warped[8, 11] == pytest.approx(1.0, abs=1e-9)
        assert warped[8, 10] == pytest.approx(0.0, abs=1e-9)

    def test_out_size_respected(self):
        img = RNG.random((10, 20))
        pts = aug.make_fiducials(20, 10, 3).points
        params = aug.tps_solve(pts, pts)
        assert aug.tps_warp(img, params, out_size=(5, 30)).shape == (5, 30)


def small_manifest(tmp_path, labels=("ab", "ba", "aab")):
    spec = SynthSpec(charset="ab", canvas_h=16, canvas_w=48, max_len=3, jitter=0)
    entries = []
    for i, label in enumerate(labels):
        name = f"img{i}.pgm"
        imgio.write_pgm(tmp_path / name, render_label(spec, label))
        entries.append((name, label))
    manifest = tmp_path / "manifest.txt"
    aug.write_manifest(manifest, entries)
    return manifest


class TestDatasetBuild:
    def test_labels_pass_through(self, tmp_path):
        manifest = small_manifest(tmp_path)
        out = aug.build_dataset(manifest, tmp_path / "ha3", "ha", 3, seed=5)
        entries = aug.read_manifest(out["manifest"])
        assert [label for _, label in entries] == ["ab", "ba", "aab"]
        assert not out["errors"]

    def test_byte_determinism(self, tmp_path):
        manifest = small_manifest(tmp_path)
        out1 = aug.build_dataset(manifest, tmp_path / "run1", "ca", 4, seed=9)
        out2 = aug.build_dataset(manifest, tmp_path / "run2", "ca", 4, seed=9)
        for name in out1["written"]:
            a = (tmp_path / "run1" / name).read_bytes()
            b = (tmp_path / "run2" / name).read_bytes()
            assert a == b

    def test_different_seed_changes_pixels(self, tmp_path):
        manifest = small_manifest(tmp_path)
        out1 = aug.build_dataset(manifest, tmp_path / "s1", "ha", 6, seed=1)
        out2 = aug.build_dataset(manifest, tmp_path / "s2", "ha", 6, seed=2)
        diff = any(
            (tmp_path / "s1" / n).read_bytes() != (tmp_path / "s2" / n).read_bytes()
            for n in out1["written"]
        )
        assert diff

    def test_theta_ladder_monotone_for_fixed_seed(self, tmp_path):
        img = np.zeros((16, 48), dtype=np.float32)
        ladders = []
        for s in range(1, 7):
            rng = aug._image_rng(3, "img0.pgm")
            _, thetas = aug.warp_image(img, "ha", s, 9, rng)
            ladders.append(np.abs(thetas))
        for prev, cur in zip(ladders, ladders[1:]):
            assert (cur >= prev - 1e-12).all()

    def test_unreadable_entry_recorded_and_build_continues(self, tmp_path):
        manifest = small_manifest(tmp_path)
        with open(manifest, "a", encoding="utf-8") as fh:
            fh.write("missing.pgm\tzz\n")
        out = aug.build_dataset(manifest, tmp_path / "out", "ha", 2, seed=0)
        assert len(out["errors"]) == 1
        assert out["errors"][0][0] == "missing.pgm"
        assert len(out["written"]) == 3

    def test_bad_mode_and_intensity(self, tmp_path):
        manifest = small_manifest(tmp_path)
        with pytest.raises(ConfigError):
            aug.build_dataset(manifest, tmp_path / "x", "diag", 3)
        with pytest.raises(ConfigError):
            aug.build_dataset(manifest, tmp_path / "x", "ha", 9)

    def test_manifest_tab_label_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            aug.write_manifest(tmp_path / "m.txt", [("a.pgm", "bad\tlabel")])

    def test_warped_size_includes_left_pad(self, tmp_path):
        img = np.zeros((16, 48), dtype=np.float32)
        warped, _ = aug.warp_image(img, "ha", 1, 9, np.random.default_rng(0))
        pad = max(1, int(round(48 / 36)))
        assert warped.shape == (16, 48 + pad)
