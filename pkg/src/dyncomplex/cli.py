"""Command-line entry point.

Every subcommand resolves its configuration from three layers: built-in
defaults, an optional JSON ``--config`` file, then explicit flags. The
resolved configuration is written as ``config.json`` beside the outputs and
can be passed back through ``--config`` to repeat the run exactly.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from . import arena as _arena
from . import avdm as _avdm
from . import collision as _coll
from . import metric as _metric
from . import profiler as _prof
from . import stimulus as _stim
from ._validation import DyncomplexError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3


class ConfigError(DyncomplexError):
    """Bad flags, config file contents or parameter values."""


# --------------------------------------------------------------------------
# Config resolution
# --------------------------------------------------------------------------

# sections holding dataclass overrides; validated when the objects are built
_SECTIONS = ("avdm", "arena", "collision")


def _load_config_file(path):
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{p}: top level must be an object")
    return data


def resolve_config(args, defaults):
    """Merge defaults, the ``--config`` file and explicit flags (in that order)."""
    cfg = {k: (dict(v) if isinstance(v, dict) else v) for k, v in defaults.items()}
    if getattr(args, "config", None):
        data = _load_config_file(args.config)
        # provenance keys written by _write_config
        command = data.pop("command", None)
        data.pop("version", None)
        if command is not None and command != args.command:
            raise ConfigError(f"config was written by {command!r}, not {args.command!r}")
        unknown = sorted(set(data) - set(defaults))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        for k, v in data.items():
            if k in _SECTIONS and isinstance(cfg.get(k), dict):
                if not isinstance(v, dict):
                    raise ConfigError(f"config section {k!r} must be an object")
                cfg[k].update(v)
            else:
                cfg[k] = v
    for k in defaults:
        v = getattr(args, k, None)
        if v is not None and k not in _SECTIONS:
            cfg[k] = v
    return cfg


def _build(cls, values, what):
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"unknown {what} keys: {', '.join(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {what}: {exc}") from None


def _avdm_params(cfg, args):
    """Defaults, then ``--params`` file, then the ``avdm`` section, then flags."""
    values = {}
    if getattr(args, "params", None):
        p = Path(args.params)
        if not p.is_file():
            raise ConfigError(f"parameter file not found: {p}")
        try:
            values = asdict(_avdm.load_params(p))
        except DyncomplexError as exc:
            raise ConfigError(str(exc)) from None
    values.update(cfg["avdm"])
    if getattr(args, "score_gain", None) is not None:
        values["score_gain"] = args.score_gain
    params = _build(_avdm.AvdmParams, values, "avdm")
    cfg["avdm"] = asdict(params)
    return params


def _wall(cfg):
    kind = cfg["wall"]
    if kind == "grating":
        try:
            spec = _stim.GratingSpec(sf_upc=cfg["wall_sf_upc"], tf_hz=0.0)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return _arena.GratingWall(spec=spec)
    if kind == "natural":
        return _arena.NaturalWall()
    raise ConfigError(f"unknown wall kind {kind!r} (expected grating or natural)")


def _arena_config(cfg):
    values = dict(cfg["arena"])
    values.pop("wall_texture", None)
    if isinstance(values.get("camera"), dict):
        values["camera"] = _build(_arena.Camera, values["camera"], "camera")
    cfg_obj = _build(_arena.ArenaConfig, {**values, "wall_texture": _wall(cfg)}, "arena")
    cfg["arena"] = cfg_obj.to_dict()
    return cfg_obj


def _out_dir(path):
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    return out


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True, allow_nan=True) + "\n")


def _write_config(out, command, cfg):
    _write_json(out / "config.json", {"command": command, "version": __version__, **cfg})


def _diag(msg):
    print(msg, file=sys.stderr)


def _tf_tag(tf):
    return f"{float(tf):g}".replace(".", "p")


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

GEN_DEFAULTS = {
    "kind": "grating", "sf": 10.0, "tf": 1.0, "contrast": 1.0, "mean": 0.5, "phase": 0.0,
    "direction": 1, "fov": 360.0, "duration": 2.0, "rate": 300.0, "width": 100, "height": 100,
    "seed": 0, "beta": 1.0,
}


def cmd_gen_stimulus(args):
    """Generate a grating or drifting-texture video."""
    cfg = resolve_config(args, GEN_DEFAULTS)
    if cfg["rate"] < 2.0 * cfg["tf"]:
        raise ConfigError(
            f"tf={cfg['tf']:g} Hz violates the Nyquist limit at rate={cfg['rate']:g} Hz "
            f"(need rate >= {2 * cfg['tf']:g})"
        )
    out = _out_dir(args.out)
    if cfg["kind"] == "grating":
        try:
            spec = _stim.GratingSpec(cfg["sf"], cfg["tf"], cfg["contrast"], cfg["mean"],
                                     cfg["phase"], cfg["direction"], cfg["fov"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        video = _stim.generate_grating(spec, cfg["duration"], cfg["rate"], cfg["width"],
                                       cfg["height"])
    elif cfg["kind"] == "natural":
        tex = _stim.natural_texture(cfg["width"], cfg["height"], cfg["seed"], cfg["beta"],
                                    cfg["contrast"] * 0.8, cfg["mean"])
        # one temporal cycle moves the texture by 1/sf of the image width
        cycle_px = max(1, int(round(cfg["width"] / max(cfg["sf"], 1e-9))))
        video = _stim.drift_texture(tex, cfg["tf"], cycle_px, cfg["duration"], cfg["rate"])
    else:
        raise ConfigError(f"unknown stimulus kind {cfg['kind']!r}")
    _stim.save_video(video, out / "stimulus.vid")
    _stim.save_pgm(video.frames[0], out / "frame0.pgm")
    _write_config(out, "gen-stimulus", cfg)
    _diag(f"wrote {len(video)} frames ({video.width}x{video.height}) to {out / 'stimulus.vid'}")
    return EXIT_OK


SWEEP_DEFAULTS = {
    "sf": list(_metric.SF_GRID), "tf": list(_metric.TF_GRID), "duration": 2.0, "rate": 300.0,
    "width": 100, "height": 100, "contrast": 1.0, "phase": math.pi / 2, "avdm": {},
}


def cmd_sweep(args):
    """Score an SF x TF grid of drifting gratings and check the orderings."""
    cfg = resolve_config(args, SWEEP_DEFAULTS)
    params = _avdm_params(cfg, args)
    if not cfg["sf"] or not cfg["tf"]:
        raise ConfigError("need at least one SF and one TF value")
    out = _out_dir(args.out)
    _write_config(out, "sweep", cfg)
    grid = _metric.sweep_frequencies(cfg["sf"], cfg["tf"], cfg["duration"], cfg["rate"],
                                     cfg["width"], cfg["height"], params, cfg["contrast"],
                                     phase0=cfg["phase"], jobs=args.jobs)
    grid.to_csv(out / "sweep.csv")
    grid.to_json(out / "sweep.json")
    report = _metric.check_monotonicity(grid)
    report.to_json(out / "monotonicity.json")
    (out / "monotonicity.txt").write_text(report.to_text())
    for n in report.notices:
        _diag(f"notice: {n}")
    skipped = int((~grid.valid).sum())
    if skipped:
        _diag(f"{skipped} cell(s) skipped: TF at or above the Nyquist limit")
    return EXIT_OK


FIT_DEFAULTS = {
    "sf": [2.0, 5.0, 10.0, 20.0], "tf": [1.0, 2.0, 5.0, 10.0], "contrast": [0.5, 1.0],
    "duration": 2.0, "rate": 300.0, "width": 100, "height": 100, "phase": math.pi / 2,
    "max_iter": 200, "avdm": {},
}


def calibration_samples(sf_values, tf_values, contrasts, duration, sample_rate, width, height,
                        params, phase0=math.pi / 2, jobs=1):
    """``(omega_true, lambda, c_hat, r)`` rows from a grating sweep.

    The ground-truth angular velocity of a drifting grating is its period
    times its temporal frequency, ``360 / sf * tf`` degrees per second.
    """
    cells = [(sf, tf, c) for sf in sf_values for tf in tf_values for c in contrasts
             if sample_rate >= 2.0 * tf]
    todo = [(sf, tf, c, duration, sample_rate, width, height, params, phase0) for sf, tf, c in cells]
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_calibration_cell, todo))
    else:
        rows = [_calibration_cell(a) for a in todo]
    return np.array(rows, dtype=np.float64).reshape(-1, 4)


def _calibration_cell(a):
    sf, tf, c, duration, rate, width, height, params, phase0 = a
    spec = _stim.GratingSpec(sf_upc=sf, tf_hz=tf, contrast=c, phase0=phase0)
    video = _stim.generate_grating(spec, duration, rate, width, height)
    prof = _metric.profile_sequence(video, params, spec.fov_deg)
    n_warm = _metric.steady_state_warmup(params, tf, duration, rate)
    r, lam, c_hat = prof.responses[n_warm:, :3].mean(axis=0)
    return (spec.period_deg * tf, lam, c_hat, r)


def _read_samples(path):
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"samples file not found: {p}")
    try:
        arr = np.loadtxt(p, delimiter=",", comments="#", ndmin=2, skiprows=_header_rows(p))
    except ValueError as exc:
        raise ConfigError(f"{p}: cannot parse samples ({exc})") from None
    if arr.shape[1] != 4:
        raise ConfigError(f"{p}: expected 4 columns omega_true,lambda,c_hat,r; got {arr.shape[1]}")
    return arr


def _header_rows(path):
    with open(path) as fh:
        first = fh.readline()
    try:
        [float(v) for v in first.split(",")]
        return 0
    except ValueError:
        return 1


def cmd_fit(args):
    """Fit the decoding coefficients on a calibration sweep or a samples CSV."""
    cfg = resolve_config(args, FIT_DEFAULTS)
    params = _avdm_params(cfg, args)
    if args.samples:
        samples = _read_samples(args.samples)
        cfg["samples"] = str(args.samples)
    else:
        samples = None
    out = _out_dir(args.out)
    _write_config(out, "fit", cfg)
    if samples is None:
        samples = calibration_samples(cfg["sf"], cfg["tf"], cfg["contrast"], cfg["duration"],
                                      cfg["rate"], cfg["width"], cfg["height"], params,
                                      cfg["phase"], jobs=args.jobs)
        with open(out / "samples.csv", "w") as fh:
            fh.write("omega_true,lambda,c_hat,r\n")
            for row in samples:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    result = _avdm.fit_params(samples, max_iter=cfg["max_iter"])
    fitted = _avdm.AvdmParams(**{**asdict(params), "a_hat": result.a_hat, "b_hat": result.b_hat})
    _avdm.save_params(fitted, out / "params.txt", comment="fitted decoding parameters")
    _avdm.write_residual_report(samples, result, out / "residuals.csv")
    _write_json(out / "fit.json", {
        "a_hat": result.a_hat, "b_hat": result.b_hat, "objective": result.objective,
        "init_objective": result.init_objective, "n_iter": result.n_iter,
        "history": list(result.history), "n_samples": int(len(samples)),
    })
    _diag(f"a_hat={result.a_hat:.6g} b_hat={result.b_hat:.6g} objective={result.objective:.6g}")
    return EXIT_OK


_ARENA_FLAGS = {"wall": "grating", "wall_sf_upc": 50.0, "arena": {}, "avdm": {}}

APPROACH_DEFAULTS = {**_ARENA_FLAGS, "tf": [0.0, 1.0, 2.0, 3.0], "repeats": 10, "seed": 0,
                     "final_m": 0.2}


def approach_summary(runs, config, final_m=0.2):
    """Mean post-warm-up score over the final ``final_m`` before the wall."""
    vals = []
    for tr in runs:
        d = config.half - tr.x
        m = (d <= final_m) & ~tr.warmup
        vals.append(float(tr.score[m].mean()) if m.any() else float("nan"))
    return vals


def _approach_job(a):
    config, tf, repeats, seed, params = a
    return _arena.run_approach(config, tf, repeats, seed, params)


def cmd_approach(args):
    """Open-loop straight approaches towards a wall at several wall TFs."""
    cfg = resolve_config(args, APPROACH_DEFAULTS)
    params = _avdm_params(cfg, args)
    config = _arena_config(cfg)
    out = _out_dir(args.out)
    _write_config(out, "approach", cfg)
    jobs = [(config, float(tf), cfg["repeats"], cfg["seed"], params) for tf in cfg["tf"]]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_approach_job, jobs))
    else:
        results = [_approach_job(j) for j in jobs]
    summary = {"final_m": cfg["final_m"], "conditions": []}
    for tf, runs in zip(cfg["tf"], results):
        for k, tr in enumerate(runs):
            tr.to_csv(out / f"approach_tf{_tf_tag(tf)}_rep{k:02d}.csv")
        vals = approach_summary(runs, config.with_wall_tf(tf), cfg["final_m"])
        summary["conditions"].append({"tf": float(tf), "final_means": vals,
                                      "final_mean": float(np.mean(vals))})
    means = [c["final_mean"] for c in summary["conditions"]]
    summary["strictly_ordered"] = bool(all(b > a for a, b in zip(means[:-1], means[1:])))
    _write_json(out / "summary.json", summary)
    return EXIT_OK


NAVIGATE_DEFAULTS = {**_ARENA_FLAGS, "tf": 0.0, "minutes": 30.0, "seed": 0, "threshold": 100.0,
                     "cells": 20, "bin_width": 20.0, "band_m": 0.15}


def cmd_navigate(args):
    """Closed-loop wander run; trajectory, response map and histogram."""
    cfg = resolve_config(args, NAVIGATE_DEFAULTS)
    params = _avdm_params(cfg, args)
    config = _arena_config(cfg).with_wall_tf(cfg["tf"])
    if not cfg["minutes"] > 0:
        raise ConfigError("minutes must be > 0")
    out = _out_dir(args.out)
    _write_config(out, "navigate", cfg)
    traj = _arena.run_navigation(config, cfg["minutes"] * 60.0, "wander", seed=cfg["seed"],
                                 params=params)
    traj.to_csv(out / "trajectory.csv")
    dmap = _prof.build_map(traj, cfg["cells"], config.side_m)
    hist = _prof.build_histogram(traj, cfg["threshold"], bin_width=cfg["bin_width"])
    title = f"{cfg['wall']} wall, TF={cfg['tf']:g} Hz"
    _prof.render_figures(dmap, hist, out, prefix="profile", title=title)
    dmap.to_json(out / "profile_map.json")
    hist.to_json(out / "profile_hist.json")
    near, centre, n_near, n_centre = _prof.region_means(traj, config.side_m, cfg["band_m"])
    valid = traj.score[~traj.warmup]
    _write_json(out / "summary.json", {
        "tf": float(cfg["tf"]), "wall": cfg["wall"], "n_samples": int(valid.size),
        "mean_score": float(valid.mean()), "near_wall_mean": near, "centre_mean": centre,
        "n_near": n_near, "n_centre": n_centre,
        "near_centre_ratio": near / centre if centre > 0 else None,
        "threshold": cfg["threshold"], "above_threshold": int(hist.total),
        "score_units": "arbitrary; score = score_gain * motion response",
    })
    return EXIT_OK


COLLISION_DEFAULTS = {**_ARENA_FLAGS, "tf": 0.0, "minutes": 30.0, "seed": 0, "threshold": None,
                      "collision": {}, "cells": 10}


def _parse_threshold(text, base):
    """Absolute threshold, or ``+d`` / ``-d`` relative to ``base``."""
    if text is None:
        return base
    s = str(text).strip()
    try:
        if s[:1] in "+-":
            return base + float(s)
        return float(s)
    except ValueError:
        raise ConfigError(f"cannot parse threshold {text!r}") from None


def cmd_collision(args):
    """Collision-detector navigation; SR, DTC and event density."""
    cfg = resolve_config(args, COLLISION_DEFAULTS)
    avdm_params = _avdm_params(cfg, args)
    config = _arena_config(cfg)
    cvals = {"sample_rate_hz": config.sample_rate_hz, **cfg["collision"]}
    base = _build(_coll.CollisionParams, cvals, "collision")
    thr = _parse_threshold(cfg["threshold"], base.spike_threshold)
    cparams = _build(_coll.CollisionParams, {**asdict(base), "spike_threshold": thr}, "collision")
    cfg["collision"] = asdict(cparams)
    cfg["threshold"] = thr
    if not cfg["minutes"] > 0:
        raise ConfigError("minutes must be > 0")
    out = _out_dir(args.out)
    _write_config(out, "collision", cfg)
    report, traj = _coll.run_case_study(config, cfg["tf"], cfg["minutes"] * 60.0, cparams,
                                        seed=cfg["seed"], avdm_params=avdm_params,
                                        return_trajectory=True)
    report.event_cells = cfg["cells"]
    report.to_json(out / "report.json")
    report.events_to_csv(out / "events.csv")
    traj.to_csv(out / "trajectory.csv")
    _coll.render_event_map(report, out / "events.png",
                           title=f"TF={cfg['tf']:g} Hz, threshold={thr:g}")
    sr = report.sr
    _diag(f"avoidances={report.n_avoidances} crashes={report.n_crashes} "
          f"sr={'undefined' if sr is None else f'{sr:.3f}'}")
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

def _float_list(text):
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}")


def _common(p, seed=False):
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="JSON config file; flags override its values")
    if seed:
        p.add_argument("--seed", type=int)


def _model_flags(p):
    p.add_argument("--params", help="AVDM parameter file (key = value lines)")
    p.add_argument("--score-gain", type=float, dest="score_gain")


def _arena_flags(p):
    p.add_argument("--wall", choices=["grating", "natural"])
    p.add_argument("--wall-sf", type=float, dest="wall_sf_upc",
                   help="grating cycles per arena perimeter")


def _jobs(p):
    p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")


def build_parser():
    parser = argparse.ArgumentParser(prog="dyncomplex", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-stimulus", help="write a grating or texture video")
    _common(p, seed=True)
    p.add_argument("--kind", choices=["grating", "natural"])
    p.add_argument("--sf", type=float, help="cycles per 360 degrees")
    p.add_argument("--tf", type=float, help="temporal frequency (Hz)")
    p.add_argument("--contrast", type=float)
    p.add_argument("--mean", type=float, help="mean luminance")
    p.add_argument("--phase", type=float, help="phase offset (rad)")
    p.add_argument("--direction", type=int, choices=[-1, 1])
    p.add_argument("--fov", type=float, help="horizontal field of view (deg)")
    p.add_argument("--duration", type=float, help="seconds")
    p.add_argument("--rate", type=float, help="frames per second")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--beta", type=float, help="spectral slope of the natural texture")
    p.set_defaults(func=cmd_gen_stimulus)

    p = sub.add_parser("sweep", help="score an SF x TF grating grid")
    _common(p)
    _model_flags(p)
    _jobs(p)
    p.add_argument("--sf", type=_float_list)
    p.add_argument("--tf", type=_float_list)
    p.add_argument("--duration", type=float)
    p.add_argument("--rate", type=float)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--contrast", type=float)
    p.add_argument("--phase", type=float)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fit", help="fit the decoding coefficients")
    _common(p)
    _model_flags(p)
    _jobs(p)
    p.add_argument("--samples", help="CSV of omega_true,lambda,c_hat,r (skips the sweep)")
    p.add_argument("--sf", type=_float_list)
    p.add_argument("--tf", type=_float_list)
    p.add_argument("--contrast", type=_float_list)
    p.add_argument("--duration", type=float)
    p.add_argument("--rate", type=float)
    p.add_argument("--max-iter", type=int, dest="max_iter")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("approach", help="open-loop wall approaches")
    _common(p, seed=True)
    _model_flags(p)
    _arena_flags(p)
    _jobs(p)
    p.add_argument("--tf", type=_float_list, help="wall TFs (Hz)")
    p.add_argument("--repeats", type=int)
    p.add_argument("--final-m", type=float, dest="final_m")
    p.set_defaults(func=cmd_approach)

    p = sub.add_parser("navigate", help="closed-loop profiling run")
    _common(p, seed=True)
    _model_flags(p)
    _arena_flags(p)
    p.add_argument("--tf", type=float, help="wall TF (Hz)")
    p.add_argument("--minutes", type=float)
    p.add_argument("--threshold", type=float, help="histogram threshold")
    p.add_argument("--cells", type=int, help="map cells per side")
    p.add_argument("--bin-width", type=float, dest="bin_width")
    p.set_defaults(func=cmd_navigate)

    p = sub.add_parser("collision", help="collision-detection case study")
    _common(p, seed=True)
    _model_flags(p)
    _arena_flags(p)
    p.add_argument("--tf", type=float, help="wall TF (Hz)")
    p.add_argument("--minutes", type=float)
    p.add_argument("--threshold", help="spike threshold, absolute or +d/-d from the default")
    p.set_defaults(func=cmd_collision)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    if getattr(args, "jobs", 1) < 1:
        _diag("error: --jobs must be >= 1")
        return EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as exc:
        _diag(f"error: {exc}")
        return EXIT_USAGE
    except (DyncomplexError, ValueError, OSError, FloatingPointError) as exc:
        _diag(f"error: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
