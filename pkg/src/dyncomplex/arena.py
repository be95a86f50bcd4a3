"""Simulated LED-walled arena with a camera-bearing micro-robot.

World frame: square arena centred on the origin, walls at ``x = +/-side/2``
and ``y = +/-side/2``. Wall textures are one-dimensional along the
perimeter coordinate ``s`` (metres, counter-clockwise from the corner
``(-side/2, -side/2)``) and vertically uniform. The camera is a pinhole
looking along the robot heading.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import avdm as _avdm
from ._validation import ArenaError
from .stimulus import GratingSpec

__all__ = [
    "Camera",
    "GratingWall",
    "NaturalWall",
    "ArenaConfig",
    "RobotState",
    "TrajectorySample",
    "Trajectory",
    "render_view",
    "step_robot",
    "rotate_robot",
    "boundary_turn",
    "draw_turn",
    "ray_to_wall",
    "distance_to_nearest_wall",
    "run_approach",
    "run_navigation",
]

BACKGROUND = 0.5


@dataclass(frozen=True)
class Camera:
    fov_deg: float = 70.0
    width: int = 100
    height: int = 100
    # sub-rays per pixel column; averages the texture over the pixel footprint
    subsamples: int = 4

    def __post_init__(self):
        if not 0 < self.fov_deg < 180:
            raise ArenaError(f"camera fov_deg must lie in (0, 180), got {self.fov_deg}")
        if self.width <= 0 or self.height <= 0 or self.subsamples < 1:
            raise ArenaError("camera width, height and subsamples must be positive")

    @property
    def plane_halfwidth(self):
        return math.tan(math.radians(self.fov_deg) / 2.0)

    def column_offsets(self):
        """Azimuth (rad, left positive) of every sub-ray, shape (subsamples, width)."""
        s = self.subsamples
        pos = np.arange(self.width)[None, :] + (np.arange(s)[:, None] + 0.5) / s
        u = (self.width / 2.0 - pos) / (self.width / 2.0) * self.plane_halfwidth
        return np.arctan(u)

    def row_bounds(self):
        """Image-plane vertical interval (low, high) of every row, top row first."""
        pitch = 2.0 * self.plane_halfwidth / self.width
        top = (self.height / 2.0 - np.arange(self.height)) * pitch
        return top - pitch, top


@dataclass(frozen=True)
class GratingWall:
    """Sine grating running around the perimeter.

    ``spec.sf_upc`` counts cycles over the whole perimeter, i.e. per full
    circuit of the arena. ``spec.fov_deg`` is ignored.
    """

    spec: GratingSpec = field(default_factory=lambda: GratingSpec(sf_upc=50.0, tf_hz=0.0))
    kind: str = "grating"

    @property
    def tf_hz(self):
        return self.spec.tf_hz

    def with_tf(self, tf_hz):
        return replace(self, spec=replace(self.spec, tf_hz=float(tf_hz)))

    def sample(self, s, perimeter, t):
        g = self.spec
        phase = 2.0 * math.pi * (g.sf_upc * s / perimeter - g.tf_hz * t * g.direction) + g.phase0
        return g.mean_luminance * (1.0 + g.contrast * np.sin(phase))


@dataclass(frozen=True)
class NaturalWall:
    """Cluttered 1/f luminance profile around the perimeter.

    One temporal cycle translates the profile by ``cycle_m`` metres along
    the walls.
    """

    tf_hz: float = 0.0
    cycle_m: float = 0.04
    seed: int = 2021
    beta: float = 0.5
    rms_contrast: float = 0.35
    n_samples: int = 8192
    kind: str = "natural"

    def with_tf(self, tf_hz):
        return replace(self, tf_hz=float(tf_hz))

    def profile(self):
        prof = _PROFILE_CACHE.get(self)
        if prof is None:
            rng = np.random.default_rng(self.seed)
            f = np.fft.rfftfreq(self.n_samples, d=1.0 / self.n_samples)
            amp = np.zeros_like(f)
            amp[1:] = f[1:] ** -self.beta
            phase = rng.uniform(0.0, 2.0 * np.pi, size=f.size)
            prof = np.fft.irfft(amp * np.exp(1j * phase), n=self.n_samples)
            prof = np.clip(BACKGROUND * (1.0 + self.rms_contrast * prof / prof.std()), 0.0, 1.0)
            _PROFILE_CACHE[self] = prof
        return prof

    def sample(self, s, perimeter, t):
        prof = self.profile()
        n = prof.size
        pos = ((s - self.tf_hz * t * self.cycle_m) / perimeter % 1.0) * n
        i0 = np.floor(pos).astype(np.int64) % n
        frac = pos - np.floor(pos)
        return prof[i0] * (1.0 - frac) + prof[(i0 + 1) % n] * frac


_PROFILE_CACHE: dict = {}


@dataclass(frozen=True)
class ArenaConfig:
    """World geometry, wall display and robot constants.

    Defaults describe a desktop arena for a micro-robot; none of the sizes
    come from measurements of a physical rig.
    """

    side_m: float = 1.0
    wall_texture: GratingWall | NaturalWall = field(default_factory=GratingWall)
    ring_radius_m: float = 0.42
    wall_clearance_m: float = 0.03
    wall_height_m: float = 0.05
    camera_height_m: float = 0.025
    camera: Camera = field(default_factory=Camera)
    speed_mps: float = 0.08
    sample_rate_hz: float = 33.0
    turn_min_deg: float = 80.0
    turn_max_deg: float = 100.0
    turn_rate_dps: float = 90.0

    def __post_init__(self):
        if not self.side_m > 0:
            raise ArenaError(f"side_m must be > 0, got {self.side_m}")
        if not 0 < self.ring_radius_m < self.side_m / 2:
            raise ArenaError(
                f"ring_radius_m must lie in (0, side_m/2 = {self.side_m / 2}), got {self.ring_radius_m}"
            )
        if not 0 <= self.wall_clearance_m < self.side_m / 2:
            raise ArenaError(f"wall_clearance_m must lie in [0, side_m/2), got {self.wall_clearance_m}")
        if not self.wall_height_m > 0 or not 0 <= self.camera_height_m:
            raise ArenaError("wall_height_m must be > 0 and camera_height_m >= 0")
        if not self.speed_mps > 0 or not self.sample_rate_hz > 0:
            raise ArenaError("speed_mps and sample_rate_hz must be > 0")
        if not 0 <= self.turn_min_deg <= self.turn_max_deg:
            raise ArenaError("need 0 <= turn_min_deg <= turn_max_deg")
        if not self.turn_rate_dps > 0:
            raise ArenaError("turn_rate_dps must be > 0 (use inf for instantaneous turns)")

    @property
    def half(self):
        return self.side_m / 2.0

    @property
    def perimeter(self):
        return 4.0 * self.side_m

    @property
    def dt(self):
        return 1.0 / self.sample_rate_hz

    def with_wall_tf(self, tf_hz):
        return replace(self, wall_texture=self.wall_texture.with_tf(tf_hz))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "camera" in d and isinstance(d["camera"], dict):
            d["camera"] = Camera(**d["camera"])
        wt = d.get("wall_texture")
        if isinstance(wt, dict):
            wt = dict(wt)
            kind = wt.pop("kind", "grating")
            if kind == "grating":
                d["wall_texture"] = GratingWall(spec=GratingSpec(**wt["spec"]))
            elif kind == "natural":
                d["wall_texture"] = NaturalWall(**wt)
            else:
                raise ArenaError(f"unknown wall texture kind {kind!r}")
        return cls(**d)


@dataclass(frozen=True)
class RobotState:
    x: float
    y: float
    heading: float
    speed_mps: float = 0.08
    turn_remaining: float = 0.0
    crashed: bool = False

    @property
    def position(self):
        return (self.x, self.y)


def _inside(config, x, y, eps=1e-9):
    return abs(x) <= config.half + eps and abs(y) <= config.half + eps


def ray_to_wall(config, x, y, angle):
    """Distance along ``angle`` from ``(x, y)`` to the first wall, and the hit's
    perimeter coordinate. Works elementwise on arrays of angles."""
    h = config.half
    c = np.cos(angle)
    s = np.sin(angle)
    with np.errstate(divide="ignore", invalid="ignore"):
        tx = np.where(c > 0, (h - x) / c, np.where(c < 0, (-h - x) / c, np.inf))
        ty = np.where(s > 0, (h - y) / s, np.where(s < 0, (-h - y) / s, np.inf))
    dist = np.minimum(tx, ty)
    hx = np.clip(x + dist * c, -h, h)
    hy = np.clip(y + dist * s, -h, h)
    side = config.side_m
    # perimeter coordinate, counter-clockwise from (-h, -h)
    hit_x_wall = tx < ty
    s_x = np.where(c > 0, side + (hy + h), 3 * side + (h - hy))
    s_y = np.where(s > 0, 2 * side + (h - hx), hx + h)
    perim = np.where(hit_x_wall, s_x, s_y)
    return dist, perim


def distance_to_nearest_wall(config, x, y):
    return config.half - max(abs(x), abs(y))


def render_view(config, state, t):
    """First-person frame of the arena seen from ``state`` at time ``t``.

    Every pixel column casts ``camera.subsamples`` rays across its footprint,
    samples the wall texture at the hit points and averages. A pixel row is
    covered by the wall in proportion to the overlap of its vertical extent
    with the wall's projected extent; the remainder is background grey.
    """
    if not _inside(config, state.x, state.y):
        raise ArenaError(f"robot at ({state.x:.4g}, {state.y:.4g}) is outside the arena")
    cam = config.camera
    offs = cam.column_offsets()
    dist, perim = ray_to_wall(config, state.x, state.y, state.heading + offs)
    depth = np.maximum(dist * np.cos(offs), 1e-6)
    tex = config.wall_texture.sample(perim, config.perimeter, t)

    lo, hi = cam.row_bounds()
    pitch = hi[0] - lo[0]
    v_top = (config.wall_height_m - config.camera_height_m) / depth
    v_bot = -config.camera_height_m / depth
    # (subsamples, 1, width) against (1, height, 1)
    cov = (
        np.minimum(v_top[:, None, :], hi[None, :, None])
        - np.maximum(v_bot[:, None, :], lo[None, :, None])
    ) / pitch
    np.clip(cov, 0.0, 1.0, out=cov)
    frame = BACKGROUND + (cov * (tex - BACKGROUND)[:, None, :]).mean(axis=0)
    return np.clip(frame, 0.0, 1.0, out=frame)


def step_robot(state, dt, config=None):
    """Advance the robot straight ahead by ``speed * dt``.

    With ``config`` given, a step that would take the robot closer than
    ``wall_clearance_m`` to a wall stops at the clearance line and marks the
    state as crashed.
    """
    if not dt > 0:
        raise ArenaError(f"dt must be > 0, got {dt}")
    dx = state.speed_mps * dt * math.cos(state.heading)
    dy = state.speed_mps * dt * math.sin(state.heading)
    x, y = state.x + dx, state.y + dy
    crashed = False
    if config is not None:
        lim = config.half - config.wall_clearance_m
        if abs(x) > lim or abs(y) > lim:
            # fraction of the step that stays inside the clearance box
            frac = 1.0
            for p, d in ((state.x, dx), (state.y, dy)):
                if d > 0 and p + d > lim:
                    frac = min(frac, max(0.0, (lim - p) / d))
                elif d < 0 and p + d < -lim:
                    frac = min(frac, max(0.0, (-lim - p) / d))
            x, y = state.x + frac * dx, state.y + frac * dy
            crashed = True
    return replace(state, x=x, y=y, crashed=crashed)


def rotate_robot(state, dt, config):
    """Execute up to ``turn_rate * dt`` of the pending turn in place."""
    if state.turn_remaining == 0.0:
        return state
    max_step = math.radians(config.turn_rate_dps) * dt
    delta = math.copysign(min(abs(state.turn_remaining), max_step), state.turn_remaining)
    remaining = state.turn_remaining - delta
    if abs(remaining) < 1e-12:
        remaining = 0.0
    return replace(state, heading=_wrap(state.heading + delta), turn_remaining=remaining)


def _wrap(a):
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def draw_turn(rng, config=None):
    """Signed turn angle in radians: magnitude uniform in [80, 100] degrees by
    default, left or right with equal probability."""
    lo = config.turn_min_deg if config is not None else 80.0
    hi = config.turn_max_deg if config is not None else 100.0
    mag = rng.uniform(lo, hi)
    sign = 1.0 if rng.random() < 0.5 else -1.0
    return math.radians(sign * mag)


def boundary_turn(state, rng, config=None):
    """Rotate the heading by a random 80-100 degree turn, position unchanged."""
    return replace(state, heading=_wrap(state.heading + draw_turn(rng, config)), turn_remaining=0.0)


# --------------------------------------------------------------------------
# Trajectories
# --------------------------------------------------------------------------

@dataclass
class TrajectorySample:
    t: float
    x: float
    y: float
    heading: float
    r: float
    lambda_: float
    c_hat: float
    omega: float
    score: float
    warmup: bool = False
    event: str = ""


CSV_COLUMNS = ("t", "x", "y", "heading", "r", "lambda", "c_hat", "omega", "score", "warmup", "event")


class Trajectory:
    """Time-ordered samples of a run with per-sample model output.

    Data live in column arrays; :meth:`samples` gives record views.
    """

    def __init__(self, t, x, y, heading, responses, warmup, events, metadata=None):
        self.t = np.asarray(t, dtype=np.float64)
        self.x = np.asarray(x, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.float64)
        self.heading = np.asarray(heading, dtype=np.float64)
        self.responses = np.asarray(responses, dtype=np.float64).reshape(-1, 5)
        self.warmup = np.asarray(warmup, dtype=bool)
        self.events = list(events)
        self.metadata = dict(metadata or {})

    def __len__(self):
        return self.t.size

    @property
    def score(self):
        return self.responses[:, 4]

    def samples(self):
        for i in range(len(self)):
            r, lam, c, om, sc = self.responses[i]
            yield TrajectorySample(
                float(self.t[i]), float(self.x[i]), float(self.y[i]), float(self.heading[i]),
                float(r), float(lam), float(c), float(om), float(sc),
                bool(self.warmup[i]), self.events[i],
            )

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(",".join(CSV_COLUMNS) + "\n")
            for i in range(len(self)):
                r, lam, c, om, sc = self.responses[i]
                vals = (self.t[i], self.x[i], self.y[i], self.heading[i], r, lam, c, om, sc)
                fh.write(",".join(repr(float(v)) for v in vals))
                fh.write(f",{int(self.warmup[i])},{self.events[i]}\n")

    @classmethod
    def from_csv(cls, path):
        import csv

        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        col = lambda k: [float(r[k]) for r in rows]  # noqa: E731
        resp = np.column_stack([col(k) for k in ("r", "lambda", "c_hat", "omega", "score")]) if rows else np.empty((0, 5))
        return cls(
            col("t"), col("x"), col("y"), col("heading"), resp,
            [bool(int(r["warmup"])) for r in rows], [r["event"] for r in rows],
        )

    def to_json(self, path):
        payload = {
            "metadata": self.metadata,
            "columns": list(CSV_COLUMNS),
            "t": self.t.tolist(),
            "x": self.x.tolist(),
            "y": self.y.tolist(),
            "heading": self.heading.tolist(),
            "responses": self.responses.tolist(),
            "warmup": self.warmup.tolist(),
            "events": self.events,
        }
        with open(path, "w") as fh:
            json.dump(payload, fh)


class _Recorder:
    def __init__(self):
        self.t, self.x, self.y, self.heading = [], [], [], []
        self.resp, self.warm, self.events = [], [], []

    def add(self, t, state, resp, event=""):
        self.t.append(t)
        self.x.append(state.x)
        self.y.append(state.y)
        self.heading.append(state.heading)
        self.resp.append(resp.as_tuple())
        self.warm.append(resp.warmup)
        self.events.append(event)

    def build(self, metadata):
        return Trajectory(self.t, self.x, self.y, self.heading, self.resp, self.warm, self.events, metadata)


def _model_state(config, params):
    cam = config.camera
    return _avdm.AvdmState(cam.height, cam.width, config.sample_rate_hz, params)


def run_approach(config, wall_tf, repeats=10, seed=0, params=None, start_jitter_deg=2.0):
    """Open-loop approach runs towards the wall at ``+x``.

    Each repeat starts at the arena centre with a heading jittered by a
    seeded few degrees, drives straight at constant speed and stops at the
    wall clearance line. Returns one :class:`Trajectory` per repeat.
    """
    params = params if params is not None else _avdm.AvdmParams()
    cfg = config.with_wall_tf(wall_tf)
    rng = np.random.default_rng(seed)
    runs = []
    for k in range(repeats):
        heading = math.radians(rng.uniform(-start_jitter_deg, start_jitter_deg))
        # random wall phase: the display is not synchronised with the robot
        t0 = float(rng.uniform(0.0, 10.0))
        state = RobotState(0.0, 0.0, heading, cfg.speed_mps)
        mstate = _model_state(cfg, params)
        rec = _Recorder()
        i = 0
        while True:
            t = i * cfg.dt
            frame = render_view(cfg, state, t0 + t)
            resp = _avdm.step(frame, mstate, params, cfg.camera.fov_deg)
            nxt = step_robot(state, cfg.dt, cfg)
            rec.add(t, state, resp, "crash" if nxt.crashed else "")
            if nxt.crashed:
                break
            state = nxt
            i += 1
        runs.append(rec.build({"protocol": "approach", "wall_tf": wall_tf, "repeat": k, "seed": seed}))
    return runs


def _outward(state):
    return state.x * math.cos(state.heading) + state.y * math.sin(state.heading) > 0.0


def run_navigation(config, duration_s, controller="wander", seed=0, params=None,
                   collision_params=None, start=None):
    """Closed-loop run at the configured sample rate.

    Per tick: render, model step, controller decision, kinematic step.
    ``controller`` is ``"wander"`` (turn on outward light-ring crossings) or
    ``"collision"`` (turn when the looming detector fires; a crash at the
    clearance line is logged and followed by a turn away from the wall).
    """
    from . import collision as _coll

    if not duration_s > 0:
        raise ArenaError(f"duration_s must be > 0, got {duration_s}")
    if controller not in ("wander", "collision"):
        raise ArenaError(f"unknown controller {controller!r}")
    params = params if params is not None else _avdm.AvdmParams()
    rng = np.random.default_rng(seed)
    if start is None:
        start = RobotState(0.0, 0.0, float(rng.uniform(-math.pi, math.pi)), config.speed_mps)
    state = start
    mstate = _model_state(config, params)
    lgmd = None
    if controller == "collision":
        cp = collision_params if collision_params is not None else _coll.CollisionParams()
        lgmd = _coll.LGMD(config.camera.height, config.camera.width, cp)
    rec = _Recorder()
    n = int(round(duration_s * config.sample_rate_hz))
    for i in range(n):
        t = i * config.dt
        frame = render_view(config, state, t)
        resp = _avdm.step(frame, mstate, params, config.camera.fov_deg)
        event = ""
        turning = state.turn_remaining != 0.0
        if controller == "wander":
            if not turning and math.hypot(state.x, state.y) >= config.ring_radius_m and _outward(state):
                state = replace(state, turn_remaining=draw_turn(rng, config))
                event = "turn"
        else:
            _, spike = lgmd.step(frame)
            if turning:
                lgmd.reset()
            elif spike:
                state = replace(state, turn_remaining=draw_turn(rng, config))
                event = "avoidance"
                lgmd.reset()
        rec.add(t, state, resp, event)
        if state.turn_remaining != 0.0:
            state = rotate_robot(state, config.dt, config)
        else:
            nxt = step_robot(state, config.dt, config)
            if nxt.crashed and controller == "collision":
                rec.events[-1] = "crash"
                nxt = replace(nxt, crashed=False, turn_remaining=_turn_away(nxt, rng, config))
                lgmd.reset()
            elif nxt.crashed:
                # the light ring keeps a wandering robot off the walls; if it
                # still reaches the clearance line, turn back
                nxt = replace(nxt, crashed=False, turn_remaining=_turn_away(nxt, rng, config))
            state = nxt
    meta = {"protocol": "navigation", "controller": controller, "seed": seed, "duration_s": duration_s}
    return rec.build(meta)


def _turn_away(state, rng, config):
    """Random 80-100 degree turn whose final heading points away from the
    nearest wall; falls back to adding a half turn."""
    # inward normal of the nearest wall
    if abs(state.x) >= abs(state.y):
        normal = (-math.copysign(1.0, state.x), 0.0)
    else:
        normal = (0.0, -math.copysign(1.0, state.y))
    turn = draw_turn(rng, config)
    for cand in (turn, -turn):
        hd = state.heading + cand
        if math.cos(hd) * normal[0] + math.sin(hd) * normal[1] > 0.05:
            return cand
    return turn - math.copysign(math.pi, turn)
