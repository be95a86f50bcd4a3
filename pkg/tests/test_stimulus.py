import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dyncomplex.stimulus import (
    VIDEO_MAGIC,
    GratingSpec,
    VideoSequence,
    drift_texture,
    generate_grating,
    load_image,
    load_video,
    natural_texture,
    save_pgm,
    save_video,
)
from dyncomplex._validation import StimulusError


def _zero_crossings(row):
    v = row - row.mean()
    s = np.sign(v[np.abs(v) > 1e-9])
    return int(np.count_nonzero(s[1:] != s[:-1]))


class TestGratingSpec:
    def test_defaults_valid(self):
        spec = GratingSpec()
        assert spec.period_deg == pytest.approx(36.0)
        assert spec.cycles_per_image == pytest.approx(10.0)

    @pytest.mark.parametrize("kw", [
        {"sf_upc": 0}, {"tf_hz": -1}, {"contrast": 1.2}, {"mean_luminance": 0.0},
        {"direction": 0}, {"fov_deg": 0},
    ])
    def test_invalid_fields(self, kw):
        with pytest.raises(StimulusError):
            GratingSpec(**kw)

    def test_luminance_range_violation(self):
        with pytest.raises(StimulusError, match="luminance range"):
            GratingSpec(contrast=1.0, mean_luminance=0.7)

    def test_fov_maps_cycles_per_image(self):
        assert GratingSpec(sf_upc=36, fov_deg=70).cycles_per_image == pytest.approx(7.0)


class TestGenerateGrating:
    def test_zero_contrast_uniform(self):
        v = generate_grating(GratingSpec(contrast=0.0), 0.5, 100)
        assert np.all(v.frames == np.float32(0.5))

    def test_quarter_cycle_points(self):
        spec = GratingSpec(sf_upc=1, tf_hz=1, contrast=1, mean_luminance=0.5, phase0=0)
        f0 = generate_grating(spec, 0.1, 100, width=100, height=7).frames[0]
        assert f0[:, 25] == pytest.approx(1.0, abs=1e-7)
        assert f0[:, 75] == pytest.approx(0.0, abs=1e-7)

    def test_frame_count_and_shape(self):
        v = generate_grating(GratingSpec(sf_upc=10, tf_hz=5), 2.0, 300)
        assert v.frames.shape == (600, 100, 100)
        assert v.duration == pytest.approx(2.0)

    def test_constant_along_y(self):
        v = generate_grating(GratingSpec(sf_upc=10, tf_hz=5, phase0=0.3), 0.2, 300, 64, 32)
        assert np.all(v.frames == v.frames[:, :1, :])

    def test_nyquist_rejected(self):
        with pytest.raises(StimulusError, match="Nyquist"):
            generate_grating(GratingSpec(tf_hz=200), 1.0, 300)

    def test_nine_stimulus_classes(self):
        for sf in (1, 10, 50):
            for tf in (1, 5, 50):
                v = generate_grating(GratingSpec(sf_upc=sf, tf_hz=tf), 0.05, 300)
                assert v.frames.shape[1:] == (100, 100)

    @pytest.mark.parametrize("contrast", [1.0, 0.4, 0.1])
    def test_michelson_contrast(self, contrast):
        f = generate_grating(GratingSpec(sf_upc=5, contrast=contrast, phase0=np.pi / 2), 0.01, 100,
                             width=100).frames[0].astype(np.float64)
        c = (f.max() - f.min()) / (f.max() + f.min())
        assert c == pytest.approx(contrast, abs=1e-6)

    @pytest.mark.parametrize("sf", [1, 2, 5, 10, 20])
    def test_period_by_zero_crossings(self, sf):
        row = generate_grating(GratingSpec(sf_upc=sf, phase0=0.1), 0.01, 100).frames[0, 0]
        crossings = _zero_crossings(row.astype(np.float64))
        assert abs(crossings - 2 * sf) <= 1

    @pytest.mark.parametrize("tf", [1.0, 3.0, 7.0])
    def test_temporal_frequency_recovery(self, tf):
        duration = 2.0
        v = generate_grating(GratingSpec(sf_upc=5, tf_hz=tf, phase0=0.2), duration, 300)
        series = v.frames[:, 50, 10].astype(np.float64)
        cycles = _zero_crossings(series) / 2.0
        assert abs(cycles / duration - tf) <= 1.0 / duration

    @pytest.mark.parametrize("direction", [1, -1])
    def test_pixel_formula(self, direction):
        spec = GratingSpec(sf_upc=10, tf_hz=5, contrast=0.8, phase0=0.3, direction=direction)
        v = generate_grating(spec, 0.1, 300, width=40, height=3)
        x = np.arange(40)
        for t in (0, 1, 7):
            ref = 0.5 * (1 + 0.8 * np.sin(2 * np.pi * (10 * x / 40 - 5 * t / 300 * direction) + 0.3))
            assert np.allclose(v.frames[t, 1], ref, atol=1e-7)


class TestDriftTexture:
    def test_static(self):
        tex = natural_texture(32, 16, seed=1)
        v = drift_texture(tex, 0.0, 10, 0.2, 100)
        assert np.all(v.frames == v.frames[0])
        assert np.array_equal(v.frames[0], tex.astype(np.float32))

    def test_full_cycle_is_identity(self):
        tex = natural_texture(100, 20, seed=2)
        v = drift_texture(tex, 3.0, 100, 101 / 300, 300)
        assert np.array_equal(v.frames[100], v.frames[0])
        assert not np.array_equal(v.frames[50], v.frames[0])

    def test_empty_rejected(self):
        with pytest.raises(StimulusError):
            drift_texture(np.zeros((0, 5)), 1.0, 5, 1.0, 30)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.0, 10.0), st.integers(1, 64), st.integers(0, 1000))
    def test_multiset_preserved(self, tf, cycle_px, seed):
        tex = natural_texture(24, 8, seed=seed)
        v = drift_texture(tex, tf, cycle_px, 0.1, 60)
        ref = np.sort(tex.astype(np.float32).ravel())
        for f in v.frames:
            assert np.array_equal(np.sort(f.ravel()), ref)


class TestNaturalTexture:
    def test_range_and_determinism(self):
        a = natural_texture(50, 40, seed=9)
        b = natural_texture(50, 40, seed=9)
        assert a.shape == (40, 50)
        assert np.array_equal(a, b)
        assert a.min() >= 0.0 and a.max() <= 1.0
        assert a.std() > 0.01


class TestVideoSequence:
    def test_range_checked(self):
        with pytest.raises(StimulusError):
            VideoSequence(np.full((2, 3, 3), 1.5), 30)

    def test_rate_checked(self):
        with pytest.raises(StimulusError):
            VideoSequence(np.zeros((2, 3, 3)), 0)

    def test_single_frame_promoted(self):
        v = VideoSequence(np.zeros((4, 5)), 10)
        assert len(v) == 1 and v.height == 4 and v.width == 5


class TestFiles:
    def test_video_round_trip_bit_identical(self, tmp_path):
        v = generate_grating(GratingSpec(sf_upc=7, tf_hz=3, contrast=0.37), 0.2, 90, 33, 17)
        p = tmp_path / "g.vid"
        save_video(v, p)
        w = load_video(p)
        assert w.sample_rate == v.sample_rate
        assert w.frames.tobytes() == v.frames.tobytes()
        assert p.read_bytes()[:8] == VIDEO_MAGIC

    def test_video_malformed(self, tmp_path):
        p = tmp_path / "bad.vid"
        p.write_bytes(b"NOTAVIDEO" + b"\0" * 40)
        with pytest.raises(StimulusError):
            load_video(p)
        v = generate_grating(GratingSpec(), 0.05, 100, 8, 8)
        save_video(v, p)
        p.write_bytes(p.read_bytes()[:-3])
        with pytest.raises(StimulusError):
            load_video(p)

    def test_pgm_white_is_one(self, tmp_path):
        p = tmp_path / "w.pgm"
        p.write_bytes(b"P5\n# comment\n3 2\n255\n" + bytes([255] * 6))
        f = load_image(p)
        assert f.shape == (2, 3)
        assert np.all(f == 1.0)

    def test_pgm_round_trip(self, tmp_path):
        frame = np.arange(12, dtype=np.float64).reshape(3, 4) / 11.0
        p = tmp_path / "f.pgm"
        save_pgm(frame, p)
        back = load_image(p)
        assert np.allclose(back, np.rint(frame * 255) / 255)

    def test_ppm_luminance(self, tmp_path):
        rng = np.random.default_rng(0)
        rgb = rng.integers(0, 256, size=(4, 5, 3), dtype=np.uint8)
        p = tmp_path / "c.ppm"
        p.write_bytes(b"P6\n5 4\n255\n" + rgb.tobytes())
        f = load_image(p)
        r, g, b = (rgb[..., i].astype(np.float64) for i in range(3))
        assert np.allclose(f, (0.299 * r + 0.587 * g + 0.114 * b) / 255, atol=1e-12)

    def test_png_via_pillow(self, tmp_path):
        from PIL import Image

        rng = np.random.default_rng(1)
        rgb = rng.integers(0, 256, size=(6, 7, 3), dtype=np.uint8)
        p = tmp_path / "c.png"
        Image.fromarray(rgb, "RGB").save(p)
        f = load_image(p)
        r, g, b = (rgb[..., i].astype(np.float64) for i in range(3))
        assert np.allclose(f, (0.299 * r + 0.587 * g + 0.114 * b) / 255, atol=1e-12)

    def test_missing_and_garbage(self, tmp_path):
        with pytest.raises(StimulusError):
            load_image(tmp_path / "nope.pgm")
        p = tmp_path / "junk.png"
        p.write_bytes(b"garbage")
        with pytest.raises(StimulusError):
            load_image(p)
        p = tmp_path / "trunc.pgm"
        p.write_bytes(b"P5\n4 4\n255\n" + bytes(5))
        with pytest.raises(StimulusError):
            load_image(p)
