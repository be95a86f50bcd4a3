import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from dyncomplex.avdm import (
    AVDM,
    RESPONSE_COLUMNS,
    AngularVelocityDecoder,
    AvdmParams,
    AvdmState,
    decode_angular_velocity,
    fit_params,
    load_params,
    motion_pathway,
    preprocess,
    run_sequence,
    save_params,
    step,
    texture_pathway,
    write_residual_report,
)
from dyncomplex.stimulus import GratingSpec, VideoSequence, generate_grating
from dyncomplex._validation import FitError, ModelError

P = AvdmParams()


def _steady_score(sf, tf, params=P, duration=1.0, rate=300.0, phase0=np.pi / 2, **kw):
    v = generate_grating(GratingSpec(sf_upc=sf, tf_hz=tf, phase0=phase0, **kw), duration, rate)
    out, warm = run_sequence(v, params)
    return out[len(out) // 2 :, 4].mean()


class TestParams:
    @pytest.mark.parametrize("kw", [
        {"tau_lp_ms": 0}, {"tau_hp_ms": -1}, {"emd_offset_px": 0}, {"emd_offset_px": 1.5},
        {"score_gain": 0}, {"a_hat": 0}, {"c_floor": 0}, {"surround_weight": 1.5},
        {"b_hat": float("nan")},
    ])
    def test_invalid(self, kw):
        with pytest.raises(ModelError):
            AvdmParams(**kw)

    def test_file_round_trip(self, tmp_path):
        p = AvdmParams(a_hat=0.123456789, b_hat=-0.5, emd_offset_px=2, score_gain=7.5)
        path = tmp_path / "params.txt"
        save_params(p, path, comment="fitted\nby test")
        assert load_params(path) == p
        assert path.read_text().startswith("# fitted\n# by test\n")

    def test_file_errors(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("a_hat = 1\nbogus = 2\n")
        with pytest.raises(ModelError, match="unknown parameter"):
            load_params(path)
        path.write_text("a_hat 1\n")
        with pytest.raises(ModelError, match="key = value"):
            load_params(path)
        path.write_text("a_hat = one\n")
        with pytest.raises(ModelError, match="cannot parse"):
            load_params(path)

    def test_partial_file_keeps_defaults(self, tmp_path):
        path = tmp_path / "p.txt"
        path.write_text("# only the exponent\nb_hat = 0.9\n")
        p = load_params(path)
        assert p.b_hat == 0.9 and p.a_hat == AvdmParams().a_hat


class TestPreprocess:
    def test_constant_decays_to_zero(self):
        st_ = AvdmState(4, 4, 300)
        for _ in range(400):
            hp = preprocess(np.full((4, 4), 0.7), st_)
        assert np.abs(hp).max() < 1e-12

    def test_step_response_time_constant(self):
        rate, tau = 300.0, AvdmParams().tau_hp_ms / 1000.0
        st_ = AvdmState(2, 2, rate)
        preprocess(np.zeros((2, 2)), st_)
        ys = np.array([preprocess(np.ones((2, 2)), st_)[0, 0] for _ in range(60)])
        t = np.arange(60) / rate
        assert np.allclose(ys / ys[0], np.exp(-t / tau), rtol=1e-12)
        assert 0.9 < ys[0] <= 1.0

    def test_sinusoid_gain_matches_transfer_function(self):
        rate, f = 300.0, 1.0
        tau = AvdmParams().tau_hp_ms / 1000.0
        st_ = AvdmState(1, 1, rate)
        n = int(rate * 6)
        x = 0.5 + 0.4 * np.sin(2 * np.pi * f * np.arange(n) / rate)
        y = np.array([preprocess(np.array([[v]]), st_)[0, 0] for v in x])
        amp = (y[-int(rate * 2):].max() - y[-int(rate * 2):].min()) / 2
        w = 2 * np.pi * f * tau
        assert amp / 0.4 == pytest.approx(w / math.sqrt(1 + w * w), rel=0.02)

    def test_shape_mismatch(self):
        with pytest.raises(ModelError):
            preprocess(np.zeros((3, 3)), AvdmState(4, 4, 30))


class TestMotionPathway:
    def test_first_frames_zero_and_warming(self):
        st_ = AvdmState(8, 8, 100)
        preprocess(np.random.default_rng(0).random((8, 8)), st_)
        r, warm = motion_pathway(st_)
        assert r == 0.0 and warm

    def test_static_scene_zero(self):
        frame = np.random.default_rng(1).random((20, 20))
        v = VideoSequence(np.repeat(frame[None], 50, axis=0), 100)
        out, warm = run_sequence(v)
        assert np.all(out[:, 0] == 0.0)
        assert warm[0] and not warm[-1]

    def test_sf_increases_response(self):
        assert _steady_score(10, 1) > _steady_score(1, 1)

    def test_tf_increases_response(self):
        assert _steady_score(10, 5) > _steady_score(10, 1)

    def test_direction_symmetric(self):
        a = _steady_score(10, 5, direction=1)
        b = _steady_score(10, 5, direction=-1)
        # frames are float32, so the two directions agree to rounding only
        assert a == pytest.approx(b, rel=1e-6)

    def test_luminance_offset_invariance(self):
        spec = GratingSpec(sf_upc=10, tf_hz=5, contrast=0.5, mean_luminance=0.4)
        v = generate_grating(spec, 1.0, 300)
        shifted = VideoSequence(v.frames.astype(np.float64) + 0.1, 300)
        a, warm = run_sequence(v)
        b, _ = run_sequence(shifted)
        assert np.max(np.abs(a[~warm, 0] - b[~warm, 0])) < 1e-6

    def test_static_below_one_percent_of_moving(self):
        static = _steady_score(10, 0.0)
        moving = _steady_score(10, 1.0)
        assert static < 0.01 * moving

    def test_offset_too_large(self):
        st_ = AvdmState(3, 3, 30, AvdmParams(emd_offset_px=2))
        preprocess(np.zeros((3, 3)), st_)
        preprocess(np.ones((3, 3)), st_)
        with pytest.raises(ModelError):
            motion_pathway(st_)


class TestTexturePathway:
    def test_period_sf10(self):
        f = generate_grating(GratingSpec(sf_upc=10, phase0=0.3), 0.01, 100).frames[0]
        assert texture_pathway(f, 360.0).lambda_ == pytest.approx(36.0, rel=0.10)

    @pytest.mark.parametrize("c, tol", [(1.0, 1e-3), (0.4, 1e-2)])
    def test_contrast(self, c, tol):
        # phase pi/2 puts both extremes of the 10 px period on pixel centres
        f = generate_grating(GratingSpec(sf_upc=10, contrast=c, phase0=np.pi / 2), 0.01, 100).frames[0]
        assert texture_pathway(f, 360.0).c_hat == pytest.approx(c, abs=tol)

    def test_uniform_degenerate(self):
        est = texture_pathway(np.full((10, 10), 0.3), 70.0, c_floor=0.05)
        assert est.degenerate and est.c_hat == 0.05 and est.lambda_ == 70.0

    def test_low_contrast_floored(self):
        f = generate_grating(GratingSpec(sf_upc=10, contrast=0.01), 0.01, 100).frames[0]
        est = texture_pathway(f, 360.0, c_floor=0.05)
        assert est.c_hat == 0.05 and est.degenerate


class TestDecode:
    def test_zero_r(self):
        assert decode_angular_velocity(0.0, 12.0, 0.3, P) == 0.0

    def test_closed_form(self):
        p = AvdmParams(a_hat=1.0, b_hat=0.0)
        assert decode_angular_velocity(4.0, 1.0, 1.0, p) == 2.0

    def test_sqrt_homogeneity(self):
        w1 = decode_angular_velocity(0.3, 20.0, 0.5, P)
        w2 = decode_angular_velocity(0.6, 20.0, 0.5, P)
        assert w2 / w1 == pytest.approx(math.sqrt(2), rel=1e-12)

    @pytest.mark.parametrize("args", [(1.0, 1.0, 0.0), (-1.0, 1.0, 0.5), (1.0, 0.0, 0.5)])
    def test_guards(self, args):
        with pytest.raises(ModelError):
            decode_angular_velocity(*args, P)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0, 1e3), st.floats(0.01, 360), st.floats(0.01, 1), st.floats(0.01, 100),
           st.floats(-2, 2))
    def test_formula(self, r, lam, c, a, b):
        p = AvdmParams(a_hat=a, b_hat=b)
        ref = a * lam**b * (1 + c) / (2 * c) * math.sqrt(r)
        assert decode_angular_velocity(r, lam, c, p) == pytest.approx(ref, rel=1e-12, abs=0)


def _inverse_samples(a, b, n=40, seed=0, noise=0.0):
    rng = np.random.default_rng(seed)
    lam = rng.uniform(2, 120, n)
    c = rng.uniform(0.1, 1.0, n)
    omega = rng.uniform(10, 500, n)
    r = (omega * 2 * c / ((1 + c) * a * lam**b)) ** 2
    if noise:
        r = r * (1 + noise * rng.standard_normal(n))
    return np.column_stack([omega, lam, c, r])


class TestFit:
    def test_exact_recovery(self):
        res = fit_params(_inverse_samples(0.7, 0.6))
        assert res.a_hat == pytest.approx(0.7, abs=1e-6)
        assert res.b_hat == pytest.approx(0.6, abs=1e-6)

    def test_null_exponent(self):
        res = fit_params(_inverse_samples(1.0, 0.0, seed=3))
        assert abs(res.b_hat) < 1e-6

    def test_objective_monotone(self):
        res = fit_params(_inverse_samples(2.0, 0.3, seed=5, noise=0.2))
        assert res.objective <= res.init_objective
        assert all(b <= a for a, b in zip(res.history[:-1], res.history[1:]))

    def test_degenerate_lambda(self):
        s = _inverse_samples(0.7, 0.6)
        s[:, 1] = 10.0
        with pytest.raises(FitError, match="unidentifiable"):
            fit_params(s)

    @pytest.mark.parametrize("bad", ["r", "shape", "few", "nan"])
    def test_rejects_bad_input(self, bad):
        s = _inverse_samples(0.7, 0.6)
        if bad == "r":
            s[0, 3] = 0.0
        elif bad == "shape":
            s = s[:, :3]
        elif bad == "few":
            s = s[:1]
        else:
            s[2, 0] = np.nan
        with pytest.raises(FitError):
            fit_params(s)

    def test_residual_report(self, tmp_path):
        s = _inverse_samples(0.7, 0.6, n=5)
        res = fit_params(s)
        path = tmp_path / "res.csv"
        write_residual_report(s, res, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "omega_true,lambda,c_hat,r,omega_fit,residual"
        assert len(lines) == 6
        assert all(float(v) == float(v) for v in lines[1].split(","))

    def test_fitted_params_file_round_trip(self, tmp_path):
        from dataclasses import replace

        res = fit_params(_inverse_samples(0.7, 0.6))
        fitted = replace(P, a_hat=res.a_hat, b_hat=res.b_hat)
        save_params(fitted, tmp_path / "p.txt")
        assert load_params(tmp_path / "p.txt") == fitted


class TestStep:
    def test_bit_identical_repeat(self):
        v = generate_grating(GratingSpec(sf_upc=10, tf_hz=5), 0.5, 300)
        a, _ = run_sequence(v)
        b, _ = run_sequence(v)
        assert a.tobytes() == b.tobytes()

    def test_score_is_gain_times_r(self):
        p = AvdmParams(score_gain=3.0)
        st_ = AvdmState(100, 100, 300, p)
        v = generate_grating(GratingSpec(sf_upc=10, tf_hz=5), 0.1, 300)
        for f in v.frames:
            resp = step(f, st_, p)
            assert resp.score == 3.0 * resp.r
            assert resp.r >= 0 and resp.lambda_ > 0 and 0 < resp.c_hat <= 1


class TestEstimators:
    def test_transformer(self):
        v = generate_grating(GratingSpec(sf_upc=10, tf_hz=5), 0.3, 300)
        est = AVDM().fit(v)
        out = est.transform(v)
        ref, warm = run_sequence(v)
        assert np.array_equal(out, ref)
        assert np.array_equal(est.warmup_mask_, warm)
        assert list(est.get_feature_names_out()) == list(RESPONSE_COLUMNS)

    def test_get_params_clone(self):
        est = AVDM(score_gain=5.0, surround_weight=0.2)
        params = est.get_params()
        assert params["score_gain"] == 5.0 and params["surround_weight"] == 0.2
        assert clone(est).get_params() == params

    def test_bare_array_needs_rate(self):
        arr = np.zeros((3, 4, 4))
        with pytest.raises(ModelError):
            AVDM().fit(arr)
        out = AVDM(sample_rate=30).fit_transform(arr)
        assert out.shape == (3, 5)

    def test_shape_mismatch(self):
        est = AVDM(sample_rate=30).fit(np.zeros((2, 4, 4)))
        with pytest.raises(ModelError):
            est.transform(np.zeros((2, 5, 5)))

    def test_unfitted(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            AVDM().transform(np.zeros((2, 4, 4)))

    def test_decoder_regressor(self):
        s = _inverse_samples(0.7, 0.6)
        X, y = s[:, 1:], s[:, 0]
        dec = AngularVelocityDecoder().fit(X, y)
        assert dec.a_hat_ == pytest.approx(0.7, abs=1e-6)
        assert dec.score(X, y) == pytest.approx(1.0, abs=1e-9)
        p = dec.to_params()
        assert p.b_hat == pytest.approx(0.6, abs=1e-6)
        with pytest.raises(ModelError):
            dec.predict(X[:, :2])
