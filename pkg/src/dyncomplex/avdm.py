"""Two-pathway angular velocity decoding model (AVDM).

Signal flow per frame::

    frame -> preprocess (per-pixel temporal high-pass)
          -> motion pathway  -> R       (transient energy across detector pairs)
          -> texture pathway -> lambda, C_hat (spatial period, Michelson contrast)
          -> decode          -> omega = a * lambda**b * (1 + C)/(2 C) * sqrt(R)

The complexity score reported for a frame is ``score_gain * R``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ._validation import FitError, ModelError, check_frame, check_positive
from .stimulus import VideoSequence

__all__ = [
    "AvdmParams",
    "AvdmResponse",
    "AvdmState",
    "FitResult",
    "TextureEstimate",
    "preprocess",
    "motion_pathway",
    "texture_pathway",
    "decode_angular_velocity",
    "fit_params",
    "step",
    "run_sequence",
    "load_params",
    "save_params",
    "write_residual_report",
    "AVDM",
    "AngularVelocityDecoder",
    "RESPONSE_COLUMNS",
]

RESPONSE_COLUMNS = ("r", "lambda", "c_hat", "omega", "score")


@dataclass(frozen=True)
class AvdmParams:
    """Model constants.

    ``a_hat`` and ``b_hat`` are the decoding coefficient and exponent and can
    be refitted with :func:`fit_params`. ``score_gain`` maps the motion
    response onto the complexity score scale; its units are arbitrary and
    chosen so that a score of 100 separates self-motion flow at the walls from
    flow that also carries wall drift in the default arena.
    """

    a_hat: float = 33.66
    b_hat: float = 1.064
    tau_lp_ms: float = 25.0
    tau_hp_ms: float = 50.0
    emd_offset_px: int = 1
    score_gain: float = 2.5e5
    c_floor: float = 0.05
    surround_weight: float = 0.5

    def __post_init__(self):
        check_positive("a_hat", self.a_hat)
        if not math.isfinite(self.b_hat):
            raise ModelError(f"b_hat must be finite, got {self.b_hat}")
        check_positive("tau_lp_ms", self.tau_lp_ms)
        check_positive("tau_hp_ms", self.tau_hp_ms)
        if int(self.emd_offset_px) != self.emd_offset_px or self.emd_offset_px < 1:
            raise ModelError(f"emd_offset_px must be an integer >= 1, got {self.emd_offset_px}")
        check_positive("score_gain", self.score_gain)
        if not 0.0 <= self.surround_weight <= 1.0:
            raise ModelError(f"surround_weight must lie in [0, 1], got {self.surround_weight}")
        if not 0.0 < self.c_floor <= 1.0:
            raise ModelError(f"c_floor must lie in (0, 1], got {self.c_floor}")

    def warmup_frames(self, sample_rate):
        """Frames needed for the filter transients to settle (three time constants)."""
        tau = max(self.tau_hp_ms, self.tau_lp_ms) / 1000.0
        return int(math.ceil(3.0 * tau * sample_rate))


@dataclass(frozen=True)
class AvdmResponse:
    r: float
    lambda_: float
    c_hat: float
    omega: float
    score: float
    warmup: bool = False
    degenerate: bool = False

    def as_tuple(self):
        return (self.r, self.lambda_, self.c_hat, self.omega, self.score)


@dataclass(frozen=True)
class TextureEstimate:
    lambda_: float
    c_hat: float
    degenerate: bool = False


class AvdmState:
    """Streaming filter state for one video stream.

    Holds the previous input frame, the high-pass output, the low-passed
    motion energy and a frame counter. A fresh state treats the first frame
    it sees as the adapted background, so that frame yields zero response.
    """

    def __init__(self, height, width, sample_rate, params=None):
        if height <= 0 or width <= 0:
            raise ModelError(f"state dimensions must be positive, got {height}x{width}")
        self.sample_rate = check_positive("sample_rate", sample_rate)
        self.shape = (int(height), int(width))
        self.params = params if params is not None else AvdmParams()
        dt = 1.0 / self.sample_rate
        self.hp_decay = math.exp(-dt / (self.params.tau_hp_ms / 1000.0))
        self.hp_gain = 0.5 * (1.0 + self.hp_decay)
        self.lp_decay = math.exp(-dt / (self.params.tau_lp_ms / 1000.0))
        self.reset()

    def reset(self):
        self.prev = None
        self.hp = np.zeros(self.shape)
        self.energy = 0.0
        self.n_seen = 0

    @property
    def warmup_frames(self):
        return self.params.warmup_frames(self.sample_rate)

    @property
    def warming_up(self):
        return self.n_seen <= self.warmup_frames


def preprocess(frame, state):
    """Photoreceptor stage: first-order temporal high-pass of each pixel.

    ``y[n] = a * y[n-1] + g * (x[n] - x[n-1])`` with ``a = exp(-dt / tau_hp)``
    (matched pole, so a step decays exactly as ``exp(-t / tau_hp)``) and
    ``g = (1 + a) / 2``, which sets the gain at the Nyquist frequency to 1.
    Updates ``state`` in place and returns the filtered image.
    """
    frame = check_frame(frame, state.shape)
    if state.prev is None:
        state.prev = frame.copy()
    state.hp = state.hp_decay * state.hp + state.hp_gain * (frame - state.prev)
    state.prev = frame.copy()
    state.n_seen += 1
    return state.hp


def motion_pathway(state, params=None):
    """Motion response ``R`` from the current high-pass image in ``state``.

    Each detector takes the transient signal of one photoreceptor and
    subtracts ``surround_weight`` times the mean transient of its four
    neighbours ``emd_offset_px`` away (lateral inhibition), then squares the
    result. Fine texture defeats the surround, so the response grows with
    spatial frequency as well as with temporal frequency. The detector mean
    is integrated by a first-order low-pass with time constant ``tau_lp``.
    The detector is non-directional, so reversing the drift leaves ``R``
    unchanged, and it is zero for any static scene once the high-pass has
    settled.

    Returns ``(R, warming_up)``; ``R`` is 0 until two frames have been seen.
    """
    params = params if params is not None else state.params
    if state.n_seen < 2:
        return 0.0, True
    d = int(params.emd_offset_px)
    p = state.hp
    if 2 * d >= min(p.shape):
        raise ModelError(f"emd_offset_px={d} too large for frame shape {p.shape}")
    centre = p[d:-d, d:-d]
    surround = 0.25 * (p[:-2 * d, d:-d] + p[2 * d:, d:-d] + p[d:-d, :-2 * d] + p[d:-d, 2 * d:])
    q = centre - params.surround_weight * surround
    e = float(np.mean(q * q))
    state.energy = state.lp_decay * state.energy + (1.0 - state.lp_decay) * e
    return max(state.energy, 0.0), state.warming_up


def _zero_crossings(profile):
    v = profile - profile.mean()
    scale = np.abs(v).max()
    if scale == 0:
        return 0
    s = np.sign(v[np.abs(v) > 1e-9 * scale])
    return int(np.count_nonzero(s[1:] != s[:-1]))


def texture_pathway(frame, fov_deg, c_floor=0.05, smoothing_px=0.5):
    """Spatial pathway: dominant period ``lambda`` (deg/cycle) and contrast.

    ``lambda`` comes from the zero-crossing count of the mean-subtracted
    central-row ensemble of the lightly smoothed frame; ``c_hat`` is the
    Michelson contrast of the frame floored at ``c_floor``. A
    featureless frame returns the whole field of view as its period and is
    flagged degenerate.
    """
    frame = check_frame(frame)
    h, w = frame.shape
    sm = gaussian_filter(frame, smoothing_px, mode="nearest") if smoothing_px > 0 else frame
    # contrast on the raw frame: the blur would attenuate fine gratings
    lo, hi = float(frame.min()), float(frame.max())
    c = (hi - lo) / (hi + lo) if hi + lo > 0 else 0.0
    half = max(1, h // 10)
    mid = h // 2
    profile = sm[max(0, mid - half) : min(h, mid + half + 1)].mean(axis=0)
    n_zc = _zero_crossings(profile)
    degenerate = n_zc == 0 or c <= c_floor
    if n_zc == 0:
        lam = float(fov_deg)
    else:
        lam = 2.0 * w / n_zc * fov_deg / w
    return TextureEstimate(lam, min(1.0, max(c, c_floor)), degenerate)


def decode_angular_velocity(r, lambda_, c_hat, params):
    """``omega = a_hat * lambda**b_hat * (1 + C)/(2 C) * sqrt(r)``."""
    if not c_hat > 0:
        raise ModelError(f"c_hat must be > 0, got {c_hat}")
    if r < 0:
        raise ModelError(f"r must be >= 0, got {r}")
    if not lambda_ > 0:
        raise ModelError(f"lambda must be > 0, got {lambda_}")
    return params.a_hat * lambda_**params.b_hat * (1.0 + c_hat) / (2.0 * c_hat) * math.sqrt(r)


def step(frame, state, params=None, fov_deg=360.0):
    """Run one frame through the full model and advance ``state``."""
    params = params if params is not None else state.params
    frame = check_frame(frame, state.shape)
    preprocess(frame, state)
    r, warm = motion_pathway(state, params)
    tex = texture_pathway(frame, fov_deg, params.c_floor)
    omega = decode_angular_velocity(r, tex.lambda_, tex.c_hat, params)
    return AvdmResponse(r, tex.lambda_, tex.c_hat, omega, params.score_gain * r, warm, tex.degenerate)


def run_sequence(video, params=None, fov_deg=360.0):
    """Process a whole :class:`VideoSequence` from a reset state.

    Returns an ``(n_frames, 5)`` array with columns :data:`RESPONSE_COLUMNS`
    and a boolean warm-up mask.
    """
    params = params if params is not None else AvdmParams()
    state = AvdmState(video.height, video.width, video.sample_rate, params)
    out = np.empty((len(video), len(RESPONSE_COLUMNS)))
    warm = np.empty(len(video), dtype=bool)
    for i, frame in enumerate(video.frames):
        resp = step(frame, state, params, fov_deg)
        out[i] = resp.as_tuple()
        warm[i] = resp.warmup
    return out, warm


# --------------------------------------------------------------------------
# Decoding-parameter fit
# --------------------------------------------------------------------------

@dataclass
class FitResult:
    a_hat: float
    b_hat: float
    objective: float
    init_objective: float
    history: list
    residuals: np.ndarray
    n_iter: int


def _objective(a, b, omega, lam, gain):
    res = omega - a * lam**b * gain
    return float(res @ res), res


def fit_params(samples, max_iter=200, tol=1e-15):
    """Fit ``(a_hat, b_hat)`` to ``(omega_true, lambda, c_hat, r)`` samples.

    The model is linear in log space,
    ``log omega - log((1+C)/(2C) sqrt(r)) = log a + b log lambda``, which
    gives the starting point. A Levenberg-Marquardt refinement then
    minimises the squared residual in the original units; steps that do not
    lower the objective are rejected, so ``history`` never increases.
    """
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise FitError(f"samples must have shape (n, 4), got {arr.shape}")
    if len(arr) < 2:
        raise FitError(f"need at least 2 samples, got {len(arr)}")
    if not np.all(np.isfinite(arr)):
        raise FitError("samples contain non-finite values")
    omega, lam, c, r = arr.T
    if np.any(r <= 0):
        raise FitError("all r must be > 0")
    if np.any(omega <= 0):
        raise FitError("all omega_true must be > 0 for the log-space initialiser")
    if np.any(lam <= 0) or np.any(c <= 0):
        raise FitError("lambda and c_hat must be > 0")
    if np.unique(lam).size < 2:
        raise FitError(
            "degenerate design: all lambda values are equal, so b_hat is unidentifiable"
        )

    gain = (1.0 + c) / (2.0 * c) * np.sqrt(r)
    design = np.column_stack([np.ones_like(lam), np.log(lam)])
    target = np.log(omega) - np.log(gain)
    (log_a, b), *_ = np.linalg.lstsq(design, target, rcond=None)
    a = math.exp(log_a)

    obj, res = _objective(a, b, omega, lam, gain)
    history = [obj]
    init_obj = obj
    mu = 1e-3
    it = 0
    for it in range(1, max_iter + 1):
        pred = a * lam**b * gain
        # d pred / d(log a), d pred / d b
        jac = np.column_stack([pred, pred * np.log(lam)])
        jtj = jac.T @ jac
        jtr = jac.T @ res
        improved = False
        for _ in range(30):
            try:
                delta = np.linalg.solve(jtj + mu * np.diag(np.diag(jtj)), jtr)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            a_new = a * math.exp(delta[0])
            b_new = b + delta[1]
            obj_new, res_new = _objective(a_new, b_new, omega, lam, gain)
            if obj_new < obj:
                improved = True
                break
            mu *= 10.0
        if not improved:
            break
        gain_rel = (obj - obj_new) / max(obj, 1e-300)
        a, b, obj, res = a_new, b_new, obj_new, res_new
        history.append(obj)
        mu = max(mu / 10.0, 1e-12)
        if gain_rel < tol or obj == 0.0:
            break
    return FitResult(float(a), float(b), float(obj), float(init_obj), [float(h) for h in history],
                     res, it)


# --------------------------------------------------------------------------
# Parameter files
# --------------------------------------------------------------------------

def save_params(params, path, comment=None):
    """Write ``key = value`` lines, one per :class:`AvdmParams` field."""
    lines = []
    if comment:
        lines.extend(f"# {ln}" for ln in comment.splitlines())
    for k, v in asdict(params).items():
        lines.append(f"{k} = {int(v) if k == 'emd_offset_px' else float(v)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_params(path, base=None):
    """Read a ``key = value`` parameter file; unspecified keys keep defaults."""
    base = base if base is not None else AvdmParams()
    known = {f.name: f.type for f in fields(AvdmParams)}
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ModelError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ModelError(f"{path}:{lineno}: unknown parameter {key!r}")
        try:
            values[key] = int(val) if key == "emd_offset_px" else float(val)
        except ValueError:
            raise ModelError(f"{path}:{lineno}: cannot parse value {val!r} for {key}") from None
    return replace(base, **values)


def write_residual_report(samples, result, path):
    """CSV of per-sample fit residuals."""
    arr = np.asarray(samples, dtype=np.float64)
    with open(path, "w") as fh:
        fh.write("omega_true,lambda,c_hat,r,omega_fit,residual\n")
        for (w, lam, c, r), res in zip(arr.tolist(), np.asarray(result.residuals).tolist()):
            fh.write(f"{w!r},{lam!r},{c!r},{r!r},{w - res!r},{res!r}\n")


# --------------------------------------------------------------------------
# Estimator API
# --------------------------------------------------------------------------

def _as_video(X, sample_rate):
    if isinstance(X, VideoSequence):
        return X
    if sample_rate is None:
        raise ModelError("sample_rate is required when X is a plain array")
    return VideoSequence(np.asarray(X), sample_rate)


class AVDM(TransformerMixin, BaseEstimator):
    """Frame-wise AVDM responses as a scikit-learn transformer.

    ``transform`` maps a video ``(n_frames, height, width)`` to an array
    ``(n_frames, 5)`` with columns ``r, lambda, c_hat, omega, score``. Each
    call starts from a reset state, so repeated calls are bit-identical.

    Parameters
    ----------
    a_hat, b_hat, tau_lp_ms, tau_hp_ms, emd_offset_px, score_gain, c_floor, surround_weight
        See :class:`AvdmParams`.
    fov_deg : float, default=360.0
        Horizontal field of view of the input frames.
    sample_rate : float or None
        Needed when videos are passed as bare arrays.
    """

    def __init__(
        self,
        a_hat=AvdmParams.a_hat,
        b_hat=AvdmParams.b_hat,
        tau_lp_ms=AvdmParams.tau_lp_ms,
        tau_hp_ms=AvdmParams.tau_hp_ms,
        emd_offset_px=AvdmParams.emd_offset_px,
        score_gain=AvdmParams.score_gain,
        c_floor=AvdmParams.c_floor,
        surround_weight=AvdmParams.surround_weight,
        fov_deg=360.0,
        sample_rate=None,
    ):
        self.a_hat = a_hat
        self.b_hat = b_hat
        self.tau_lp_ms = tau_lp_ms
        self.tau_hp_ms = tau_hp_ms
        self.emd_offset_px = emd_offset_px
        self.score_gain = score_gain
        self.c_floor = c_floor
        self.surround_weight = surround_weight
        self.fov_deg = fov_deg
        self.sample_rate = sample_rate

    def _params(self):
        return AvdmParams(
            self.a_hat, self.b_hat, self.tau_lp_ms, self.tau_hp_ms,
            self.emd_offset_px, self.score_gain, self.c_floor, self.surround_weight,
        )

    def fit(self, X, y=None):
        video = _as_video(X, self.sample_rate)
        self.params_ = self._params()
        self.frame_shape_ = (video.height, video.width)
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        video = _as_video(X, self.sample_rate)
        if (video.height, video.width) != self.frame_shape_:
            raise ModelError(
                f"frame shape {(video.height, video.width)} differs from fitted {self.frame_shape_}"
            )
        out, self.warmup_mask_ = run_sequence(video, self.params_, self.fov_deg)
        return out

    def get_feature_names_out(self, input_features=None):
        return np.asarray(RESPONSE_COLUMNS, dtype=object)


class AngularVelocityDecoder(RegressorMixin, BaseEstimator):
    """Decoding layer as a regressor: ``X = [lambda, c_hat, r]`` -> omega.

    ``fit`` learns ``a_hat_`` and ``b_hat_`` with :func:`fit_params`.
    """

    def __init__(self, max_iter=200):
        self.max_iter = max_iter

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        if X.shape[1] != 3:
            raise ModelError(f"X must have 3 columns (lambda, c_hat, r), got {X.shape[1]}")
        samples = np.column_stack([y, X])
        self.fit_ = fit_params(samples, max_iter=self.max_iter)
        self.a_hat_ = self.fit_.a_hat
        self.b_hat_ = self.fit_.b_hat
        self.n_features_in_ = 3
        return self

    def predict(self, X):
        check_is_fitted(self, ["a_hat_", "b_hat_"])
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != 3:
            raise ModelError(f"X must have 3 columns (lambda, c_hat, r), got {X.shape[1]}")
        lam, c, r = X.T
        if np.any(c <= 0):
            raise ModelError("c_hat must be > 0")
        return self.a_hat_ * lam**self.b_hat_ * (1.0 + c) / (2.0 * c) * np.sqrt(r)

    def to_params(self, base=None):
        check_is_fitted(self, ["a_hat_", "b_hat_"])
        base = base if base is not None else AvdmParams()
        return replace(base, a_hat=self.a_hat_, b_hat=self.b_hat_)
