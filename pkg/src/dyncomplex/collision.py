"""Looming-sensitive collision detector and the collision case-study runs.

The detector follows the usual LGMD layout: excitation is the absolute
inter-frame luminance change, inhibition is the previous frame's change
blurred over neighbouring cells, and their rectified difference summed
over the image drives a sigmoid membrane.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter

from . import arena as _arena
from ._validation import ArenaError, ModelError, check_frame

__all__ = [
    "CollisionParams",
    "LGMD",
    "collision_model_step",
    "AvoidanceEvent",
    "CaseStudyReport",
    "compute_sr",
    "compute_dtc",
    "events_from_trajectory",
    "run_case_study",
    "render_event_map",
]


@dataclass(frozen=True)
class CollisionParams:
    """Detector constants.

    ``spike_threshold`` applies to the sigmoid membrane potential, whose
    resting value is 0.5. ``potential_gain`` scales the mean rectified
    excitation before the sigmoid; ``membrane_tau_ms`` smooths it.
    """

    spike_threshold: float = 0.7
    n_spikes: int = 4
    inhibition_gain: float = 0.6
    inhibition_radius_px: int = 1
    potential_gain: float = 170.0
    membrane_tau_ms: float = 30.0
    sample_rate_hz: float = 33.0

    def __post_init__(self):
        if not 0.0 < self.spike_threshold < 1.0:
            raise ModelError(f"spike_threshold must lie in (0, 1), got {self.spike_threshold}")
        if int(self.n_spikes) != self.n_spikes or self.n_spikes < 1:
            raise ModelError(f"n_spikes must be an integer >= 1, got {self.n_spikes}")
        if self.inhibition_gain < 0:
            raise ModelError("inhibition_gain must be >= 0")
        if self.inhibition_radius_px < 0:
            raise ModelError("inhibition_radius_px must be >= 0")
        if not self.potential_gain > 0 or not self.membrane_tau_ms >= 0:
            raise ModelError("potential_gain must be > 0 and membrane_tau_ms >= 0")
        if not self.sample_rate_hz > 0:
            raise ModelError("sample_rate_hz must be > 0")


def _sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


class LGMD:
    """Streaming detector; ``step`` returns ``(potential, spike)``."""

    def __init__(self, height, width, params=None):
        self.params = params if params is not None else CollisionParams()
        self.shape = (int(height), int(width))
        tau = self.params.membrane_tau_ms / 1000.0
        self.decay = math.exp(-1.0 / (self.params.sample_rate_hz * tau)) if tau > 0 else 0.0
        self.reset()

    def reset(self):
        self.prev_frame = None
        self.prev_exc = None
        self.membrane = 0.0
        self.run = 0

    def step(self, frame):
        p = self.params
        frame = check_frame(frame, self.shape)
        if self.prev_frame is None:
            self.prev_frame = frame.copy()
            return 0.0, False
        exc = np.abs(frame - self.prev_frame)
        if self.prev_exc is None:
            inh = np.zeros_like(exc)
        else:
            size = 2 * p.inhibition_radius_px + 1
            inh = uniform_filter(self.prev_exc, size=size, mode="nearest")
        s = exc - p.inhibition_gain * inh
        np.maximum(s, 0.0, out=s)
        k = float(s.mean())
        self.membrane = self.decay * self.membrane + (1.0 - self.decay) * k
        potential = _sigmoid(p.potential_gain * self.membrane)
        self.prev_frame = frame.copy()
        self.prev_exc = exc
        if potential > p.spike_threshold:
            self.run += 1
        else:
            self.run = 0
        return potential, self.run >= p.n_spikes


def collision_model_step(frames, params=None):
    """Replay ``frames`` through a fresh detector; return the last output.

    Fewer than two frames give ``(0.0, False)``.
    """
    frames = list(frames)
    if len(frames) < 2:
        return 0.0, False
    first = np.asarray(frames[0])
    det = LGMD(first.shape[0], first.shape[1], params)
    out = (0.0, False)
    for f in frames:
        out = det.step(f)
    return out


def spike_frames(frames, params=None):
    """Indices of frames on which the detector reports a spike."""
    frames = list(frames)
    if not frames:
        return []
    first = np.asarray(frames[0])
    det = LGMD(first.shape[0], first.shape[1], params)
    return [i for i, f in enumerate(frames) if det.step(f)[1]]


@dataclass(frozen=True)
class AvoidanceEvent:
    t: float
    x: float
    y: float
    heading: float
    kind: str
    dtc_m: float = float("nan")

    def __post_init__(self):
        if self.kind not in ("avoidance", "crash"):
            raise ModelError(f"event kind must be 'avoidance' or 'crash', got {self.kind!r}")
        if self.kind == "avoidance" and not self.dtc_m >= 0:
            raise ModelError(f"avoidance events need dtc_m >= 0, got {self.dtc_m}")

    @property
    def position(self):
        return (self.x, self.y)


def compute_sr(events):
    """Success rate ``avoidances / (avoidances + crashes)``; ``None`` when no
    events were recorded."""
    kinds = [e.kind if isinstance(e, AvoidanceEvent) else e for e in events]
    n_av = kinds.count("avoidance")
    n_cr = kinds.count("crash")
    if n_av + n_cr == 0:
        return None
    return n_av / (n_av + n_cr)


def compute_dtc(event, config):
    """Distance from the trigger position along the heading to the nearest wall."""
    x, y = (event.x, event.y) if isinstance(event, AvoidanceEvent) else event[:2]
    heading = event.heading if isinstance(event, AvoidanceEvent) else event[2]
    if abs(x) > config.half + 1e-9 or abs(y) > config.half + 1e-9:
        raise ArenaError(f"position ({x}, {y}) is outside the arena")
    dist, _ = _arena.ray_to_wall(config, x, y, heading)
    return float(dist)


def events_from_trajectory(traj, config):
    out = []
    for i, ev in enumerate(traj.events):
        if ev not in ("avoidance", "crash"):
            continue
        e = AvoidanceEvent(float(traj.t[i]), float(traj.x[i]), float(traj.y[i]),
                           float(traj.heading[i]), ev, 0.0)
        dtc = compute_dtc(e, config) if ev == "avoidance" else float("nan")
        out.append(AvoidanceEvent(e.t, e.x, e.y, e.heading, ev, dtc))
    return out


@dataclass
class CaseStudyReport:
    wall_tf: float
    duration_s: float
    seed: int
    params: CollisionParams
    events: list = field(default_factory=list)
    event_cells: int = 10
    side_m: float = 1.0

    @property
    def n_avoidances(self):
        return sum(e.kind == "avoidance" for e in self.events)

    @property
    def n_crashes(self):
        return sum(e.kind == "crash" for e in self.events)

    @property
    def sr(self):
        return compute_sr(self.events)

    @property
    def dtc(self):
        return np.array([e.dtc_m for e in self.events if e.kind == "avoidance"])

    def dtc_stats(self):
        d = self.dtc
        if d.size == 0:
            return {"n": 0, "mean": None, "median": None, "std": None, "min": None, "max": None}
        return {"n": int(d.size), "mean": float(d.mean()), "median": float(np.median(d)),
                "std": float(d.std()), "min": float(d.min()), "max": float(d.max())}

    def density(self, kind="avoidance"):
        """Event counts on a ``event_cells`` square grid, indexed ``[iy, ix]``."""
        half = self.side_m / 2
        edges = np.linspace(-half, half, self.event_cells + 1)
        pts = [(e.x, e.y) for e in self.events if e.kind == kind]
        if not pts:
            return np.zeros((self.event_cells, self.event_cells), dtype=np.int64)
        xs, ys = np.array(pts).T
        h, _, _ = np.histogram2d(ys, xs, bins=[edges, edges])
        return h.astype(np.int64)

    def summary(self):
        sr = self.sr
        return {
            "wall_tf": self.wall_tf,
            "duration_s": self.duration_s,
            "seed": self.seed,
            "params": asdict(self.params),
            "avoidances": self.n_avoidances,
            "crashes": self.n_crashes,
            "sr": sr,
            "dtc": self.dtc_stats(),
            "avoidance_density": self.density("avoidance").tolist(),
            "crash_density": self.density("crash").tolist(),
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=1)

    def events_to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("t,x,y,heading,kind,dtc_m\n")
            for e in self.events:
                fh.write(f"{e.t!r},{e.x!r},{e.y!r},{e.heading!r},{e.kind},{e.dtc_m!r}\n")


def run_case_study(config, wall_tf, duration_s, params=None, seed=0, avdm_params=None,
                   return_trajectory=False):
    """Collision-driven navigation with walls drifting at ``wall_tf``.

    Detector spikes trigger a random 80-100 degree avoidance turn; reaching
    the wall clearance line without a spike is logged as a crash and the
    robot turns away and carries on.
    """
    params = params if params is not None else CollisionParams(sample_rate_hz=config.sample_rate_hz)
    if params.sample_rate_hz != config.sample_rate_hz:
        raise ModelError("collision params sample_rate_hz must match the arena sample rate")
    cfg = config.with_wall_tf(wall_tf)
    traj = _arena.run_navigation(cfg, duration_s, "collision", seed=seed, params=avdm_params,
                                 collision_params=params)
    report = CaseStudyReport(float(wall_tf), float(duration_s), seed, params,
                             events_from_trajectory(traj, cfg), side_m=cfg.side_m)
    return (report, traj) if return_trajectory else report


def render_event_map(report, path, title=None):
    """Scatter of avoidance (blue) and crash (red) positions in the arena."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 5))
    h = report.side_m / 2
    ax.plot([-h, h, h, -h, -h], [-h, -h, h, h, -h], color="k", lw=1)
    for kind, colour in (("avoidance", "tab:blue"), ("crash", "tab:red")):
        pts = np.array([(e.x, e.y) for e in report.events if e.kind == kind]).reshape(-1, 2)
        ax.scatter(pts[:, 0], pts[:, 1], s=8, color=colour, label=f"{kind} ({len(pts)})")
    ax.set_xlim(-h * 1.05, h * 1.05)
    ax.set_ylim(-h * 1.05, h * 1.05)
    ax.set_aspect("equal")
    ax.legend(loc="upper right", fontsize=8)
    if title:
        ax.set_title(title)
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
