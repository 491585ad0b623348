from pathlib import Path

import numpy as np
from pytest import approx, mark, param, raises
from ruamel.yaml import YAML

import dataeval
from dataeval import ImageError, PatchPair

_ROOT = Path(__file__).parent


def _random_image(seed: int, height: int = 24, width: int = 20) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, 256, size=(height, width, 3), dtype=np.uint8)


def _reference_ssim(ya: np.ndarray, yb: np.ndarray) -> float:
    coords = np.arange(11) - 5
    g = np.exp(-(coords**2) / (2 * 1.5**2))
    window = np.outer(g, g) / np.outer(g, g).sum()
    c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2
    values = []
    for i in range(ya.shape[0] - 10):
        for j in range(ya.shape[1] - 10):
            mu_a = mu_b = aa = bb = ab = 0.0
            for di in range(11):
                for dj in range(11):
                    w = window[di, dj]
                    a, b = ya[i + di, j + dj], yb[i + di, j + dj]
                    mu_a += w * a
                    mu_b += w * b
                    aa += w * a * a
                    bb += w * b * b
                    ab += w * a * b
            var_a, var_b, cov = aa - mu_a**2, bb - mu_b**2, ab - mu_a * mu_b
            values.append(
                (2 * mu_a * mu_b + c1) * (2 * cov + c2) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
            )
    return sum(values) / len(values)


class Test_cases:
    @staticmethod
    @mark.parametrize(
        "definition",
        [param(d, id=d["id"]) for d in YAML(typ="safe").load_all((_ROOT / "cases.yaml").read_text())],
    )
    def test_case(definition: dict):
        match definition["op"]:
            case "rgb_to_y":
                pixel = np.array(definition["rgb"], dtype=np.uint8).reshape(1, 1, 3)
                assert dataeval.rgb_to_y(pixel)[0, 0] == approx(definition["expected"], abs=1e-6)
            case "catmull_rom":
                assert dataeval.catmull_rom(np.array(definition["x"])) == approx(definition["expected"], abs=1e-12)


class Test_png:
    @staticmethod
    @mark.parametrize("shape", [param((1, 1), id="single_pixel"), param((17, 9), id="odd")])
    def test_round_trip(tmp_path: Path, shape: tuple[int, int]):
        img = _random_image(0, *shape)
        dataeval.save_png(tmp_path / "img.png", img)
        np.testing.assert_array_equal(dataeval.load_png(tmp_path / "img.png"), img)

    @staticmethod
    def test_not_an_image(tmp_path: Path):
        (tmp_path / "img.png").write_text("not a png")
        with raises(ImageError):
            dataeval.load_png(tmp_path / "img.png")

    @staticmethod
    def test_missing(tmp_path: Path):
        with raises(ImageError, match="does not exist"):
            dataeval.load_png(tmp_path / "absent.png")

    @staticmethod
    def test_rejects_float_image(tmp_path: Path):
        with raises(ImageError):
            dataeval.save_png(tmp_path / "img.png", np.zeros((2, 2, 3)))


class Test_bicubic_resize:
    @staticmethod
    def test_same_size_is_identity():
        img = _random_image(1)
        out = dataeval.bicubic_resize(img, *img.shape[:2])
        assert np.abs(out.astype(int) - img.astype(int)).max() <= 1

    @staticmethod
    @mark.parametrize("size", [(12, 10), (48, 40), (7, 31)])
    def test_constant_stays_constant(size: tuple[int, int]):
        img = np.full((24, 20, 3), [37, 128, 250], dtype=np.uint8)
        out = dataeval.bicubic_resize(img, *size)
        assert out.shape == (*size, 3)
        np.testing.assert_array_equal(out, np.broadcast_to(img[0, 0], out.shape))

    @staticmethod
    @mark.parametrize("antialias", [True, False])
    def test_gradient_survives_down_and_up(antialias: bool):
        ramp = np.tile((np.arange(64) * 2).astype(np.uint8)[None, :, None], (32, 1, 3))
        down = dataeval.bicubic_resize(ramp, 16, 32, antialias=antialias)
        up = dataeval.bicubic_resize(down, 32, 64)
        inner = np.s_[8:-8, 8:-8]
        assert np.abs(up[inner].astype(int) - ramp[inner].astype(int)).max() <= 2

    @staticmethod
    def test_clipped():
        img = np.zeros((8, 8, 3), dtype=np.uint8)
        img[::2, ::2] = 255
        out = dataeval.bicubic_resize(img, 19, 19)
        assert out.dtype == np.uint8

    @staticmethod
    def test_rejects_empty_target():
        with raises(ImageError):
            dataeval.bicubic_resize(_random_image(0), 0, 4)


class Test_rgb_to_y:
    @staticmethod
    def test_bounded():
        y = dataeval.rgb_to_y(_random_image(2, 50, 50))
        assert y.min() >= 16
        assert y.max() <= 235

    @staticmethod
    def test_float_input_matches_integer():
        img = _random_image(3)
        np.testing.assert_allclose(dataeval.rgb_to_y(img / 255.0), dataeval.rgb_to_y(img), rtol=0, atol=1e-9)


class Test_psnr:
    @staticmethod
    def test_identical_is_infinite():
        img = _random_image(4)
        assert dataeval.psnr(img, img) == float("inf")

    @staticmethod
    def test_uniform_difference_of_16():
        ya = np.full((10, 10), 100.0)
        assert dataeval.psnr_y(ya, ya + 16) == approx(20 * np.log10(255 / 16), abs=1e-12)
        assert dataeval.psnr_y(ya, ya + 16) == approx(24.0484, abs=1e-4)

    @staticmethod
    @mark.parametrize("seed", range(5))
    def test_matches_scalar_loop(seed: int):
        a, b = _random_image(seed), _random_image(seed + 100)
        ya, yb = dataeval.rgb_to_y(a)[2:-2, 2:-2], dataeval.rgb_to_y(b)[2:-2, 2:-2]
        total = 0.0
        for i in range(ya.shape[0]):
            for j in range(ya.shape[1]):
                total += (ya[i, j] - yb[i, j]) ** 2
        reference = 10 * np.log10(255**2 / (total / ya.size))
        assert dataeval.psnr(a, b, shave=2) == approx(reference, abs=1e-9)

    @staticmethod
    def test_symmetric():
        a, b = _random_image(5), _random_image(6)
        assert dataeval.psnr(a, b, 3) == dataeval.psnr(b, a, 3)

    @staticmethod
    def test_decreases_with_noise():
        rng = np.random.default_rng(7)
        clean = np.full((32, 32, 3), 128, dtype=np.uint8)
        scores = []
        for amplitude in (2, 8, 32):
            noise = rng.integers(-amplitude, amplitude, size=clean.shape, endpoint=True)
            scores.append(dataeval.psnr(clean, np.clip(clean + noise, 0, 255).astype(np.uint8)))
        assert scores[0] > scores[1] > scores[2]

    @staticmethod
    def test_size_mismatch():
        with raises(ImageError):
            dataeval.psnr(_random_image(0, 8, 8), _random_image(0, 8, 9))

    @staticmethod
    def test_shave_too_large():
        with raises(ImageError):
            dataeval.psnr(_random_image(0, 8, 8), _random_image(1, 8, 8), shave=4)


class Test_ssim:
    @staticmethod
    def test_self_is_one():
        img = _random_image(8)
        assert dataeval.ssim(img, img) == 1.0

    @staticmethod
    def test_inverted_is_negative():
        rng = np.random.default_rng(9)
        img = (rng.integers(0, 2, size=(24, 24, 1)) * 255).repeat(3, axis=2).astype(np.uint8)
        assert dataeval.ssim(img, 255 - img) < 0

    @staticmethod
    @mark.parametrize("seed", range(3))
    def test_matches_scalar_loop(seed: int):
        a, b = _random_image(seed, 16, 14), _random_image(seed + 50, 16, 14)
        reference = _reference_ssim(dataeval.rgb_to_y(a), dataeval.rgb_to_y(b))
        assert dataeval.ssim(a, b) == approx(reference, abs=1e-6)

    @staticmethod
    def test_symmetric_and_bounded():
        a, b = _random_image(10), _random_image(11)
        assert dataeval.ssim(a, b, 2) == dataeval.ssim(b, a, 2)
        assert -1 <= dataeval.ssim(a, b) <= 1

    @staticmethod
    def test_too_small():
        with raises(ImageError):
            dataeval.ssim(_random_image(0, 10, 30), _random_image(1, 10, 30))


class Test_sample_patches:
    @staticmethod
    def test_empty():
        assert dataeval.sample_patches(_random_image(0, 64, 64), 2, patch=16, n=0) == []

    @staticmethod
    @mark.parametrize("scale", [2, 4])
    def test_aligned_and_in_bounds(scale: int):
        hr = _random_image(12, 101, 90)
        lr = dataeval.downscale(hr, scale)
        for pair in dataeval.sample_patches(hr, scale, patch=8, n=20, seed=3):
            y, x = pair.origin
            assert 0 <= y <= lr.shape[0] - 8
            assert 0 <= x <= lr.shape[1] - 8
            np.testing.assert_array_equal(pair.lr, lr[y : y + 8, x : x + 8])
            np.testing.assert_array_equal(pair.hr, hr[scale * y : scale * (y + 8), scale * x : scale * (x + 8)])

    @staticmethod
    def test_deterministic():
        hr = _random_image(13, 64, 64)
        first = dataeval.sample_patches(hr, 2, patch=8, n=10, seed=5)
        second = dataeval.sample_patches(hr, 2, patch=8, n=10, seed=5)
        assert [pair.origin for pair in first] == [pair.origin for pair in second]
        assert [pair.origin for pair in first] != [pair.origin for pair in dataeval.sample_patches(hr, 2, 8, 10, 6)]

    @staticmethod
    def test_too_small():
        with raises(ImageError):
            dataeval.sample_patches(_random_image(0, 40, 200), 2, patch=24, n=1)

    @staticmethod
    def test_pair_rejects_misaligned():
        with raises(ImageError):
            PatchPair(lr=_random_image(0, 4, 4), hr=_random_image(0, 8, 9), scale=2)


class Test_corpus:
    @staticmethod
    def test_synthetic_deterministic():
        first = dataeval.synthetic_corpus(3, (40, 30), seed=1)
        second = dataeval.synthetic_corpus(3, (40, 30), seed=1)
        assert list(first) == ["synthetic_000", "synthetic_001", "synthetic_002"]
        for name, img in first.items():
            assert img.shape == (40, 30, 3)
            assert img.dtype == np.uint8
            np.testing.assert_array_equal(img, second[name])

    @staticmethod
    def test_load_skips_unreadable(tmp_path: Path, mocker):
        for name, img in dataeval.synthetic_corpus(2, (12, 12)).items():
            dataeval.save_png(tmp_path / f"{name}.png", img)
        (tmp_path / "broken.png").write_text("not a png")
        logger = mocker.MagicMock()
        corpus = dataeval.load_corpus(tmp_path, logger=logger)
        assert list(corpus) == ["synthetic_000", "synthetic_001"]
        logger.warning.assert_called_once()

    @staticmethod
    def test_load_empty(tmp_path: Path):
        with raises(ImageError):
            dataeval.load_corpus(tmp_path)


class Test_evaluate:
    @staticmethod
    def test_bicubic_matches_baseline(tmp_path: Path):
        images = dataeval.synthetic_corpus(2, (48, 40), seed=2)
        rows = dataeval.evaluate(
            images, lambda lr: dataeval.bicubic_resize(lr, lr.shape[0] * 2, lr.shape[1] * 2), scale=2
        )
        assert [row.image for row in rows] == list(images)
        for row in rows:
            assert row.psnr_db == row.bicubic_psnr_db
            assert row.ssim == row.bicubic_ssim

        dataeval.write_report(rows, tmp_path / "report.csv")
        lines = (tmp_path / "report.csv").read_text().splitlines()
        assert lines[0] == "image,psnr_db,ssim,bicubic_psnr_db,bicubic_ssim"
        assert len(lines) == 4
        assert lines[-1].startswith("mean,")

    @staticmethod
    def test_wrong_output_size():
        with raises(ImageError):
            dataeval.evaluate(dataeval.synthetic_corpus(1, (32, 32)), lambda lr: lr, scale=2)

    @staticmethod
    def test_identity_sr_reports_inf(tmp_path: Path):
        rows = [dataeval.EvalRow(image="a", psnr_db=float("inf"), ssim=1.0, bicubic_psnr_db=30.0, bicubic_ssim=0.9)]
        dataeval.write_report(rows, tmp_path / "report.csv")
        assert (tmp_path / "report.csv").read_text().splitlines()[1] == "a,inf,1.000000,30.000000,0.900000"
