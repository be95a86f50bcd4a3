"""Complexity metric built on AVDM responses: sequence profiles, SF-TF
sweeps and ordering checks."""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import avdm as _avdm
from ._validation import ModelError, StimulusError
from .stimulus import GratingSpec, generate_grating

__all__ = [
    "ComplexityProfile",
    "SweepGrid",
    "MonotonicityReport",
    "profile_sequence",
    "steady_state_warmup",
    "sweep_frequencies",
    "check_monotonicity",
    "rankdata",
    "spearman",
    "FIG3_SF",
    "FIG3_TF",
    "SF_GRID",
    "TF_GRID",
]

# the nine stimulus classes of the off-line grating experiment
FIG3_SF = (1.0, 10.0, 50.0)
FIG3_TF = (1.0, 5.0, 50.0)
# dense grids used for the ordering checks
SF_GRID = (1.0, 2.0, 5.0, 10.0, 20.0, 50.0)
TF_GRID = (0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 150.0)


@dataclass
class ComplexityProfile:
    """Per-frame scores of one sequence."""

    scores: np.ndarray
    responses: np.ndarray
    warmup: np.ndarray
    sample_rate: float

    def __len__(self):
        return self.scores.size

    def steady_mean(self):
        s = self.scores[~self.warmup]
        return float(s.mean()) if s.size else float("nan")


def profile_sequence(video, params=None, fov_deg=360.0):
    """Score every frame of ``video`` from a reset model state."""
    if len(video) == 0:
        raise StimulusError("video has no frames")
    params = params if params is not None else _avdm.AvdmParams()
    out, warm = _avdm.run_sequence(video, params, fov_deg)
    return ComplexityProfile(out[:, 4].copy(), out, warm, video.sample_rate)


def steady_state_warmup(params, tf_hz, duration, sample_rate):
    """Frames excluded before averaging a grating cell.

    The longest of three filter time constants and one temporal cycle of the
    stimulus, capped at half the cell so something is always averaged.
    """
    tau = 3.0 * max(params.tau_lp_ms, params.tau_hp_ms) / 1000.0
    cycle = 1.0 / tf_hz if tf_hz > 0 else 0.0
    n_total = int(round(duration * sample_rate))
    return min(int(math.ceil(max(tau, cycle) * sample_rate)), n_total // 2)


@dataclass
class SweepGrid:
    """Mean steady-state score per (SF, TF) cell; ``nan`` marks invalid cells."""

    sf_values: list
    tf_values: list
    responses: np.ndarray
    warmup_s: np.ndarray
    valid: np.ndarray
    config: dict = field(default_factory=dict)

    def to_csv(self, path):
        """Header row is the TF values; first column the SF values."""
        with open(path, "w") as fh:
            fh.write("sf_upc\\tf_hz," + ",".join(repr(float(t)) for t in self.tf_values) + "\n")
            for sf, row in zip(self.sf_values, self.responses):
                cells = ("nan" if not np.isfinite(v) else repr(float(v)) for v in row)
                fh.write(repr(float(sf)) + "," + ",".join(cells) + "\n")

    @classmethod
    def from_csv(cls, path):
        lines = Path(path).read_text().strip().splitlines()
        tfs = [float(v) for v in lines[0].split(",")[1:]]
        sfs, rows = [], []
        for ln in lines[1:]:
            parts = ln.split(",")
            sfs.append(float(parts[0]))
            rows.append([float(v) for v in parts[1:]])
        resp = np.array(rows, dtype=np.float64).reshape(len(sfs), len(tfs))
        return cls(sfs, tfs, resp, np.zeros_like(resp), np.isfinite(resp))

    def to_dict(self):
        return {
            "sf_values": [float(v) for v in self.sf_values],
            "tf_values": [float(v) for v in self.tf_values],
            "responses": [[None if not np.isfinite(v) else float(v) for v in row]
                          for row in self.responses],
            "warmup_s": self.warmup_s.tolist(),
            "valid": self.valid.tolist(),
            "config": self.config,
        }

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


def _cell(args):
    sf, tf, duration, sample_rate, width, height, stim, params = args
    spec = GratingSpec(sf_upc=sf, tf_hz=tf, **stim)
    video = generate_grating(spec, duration, sample_rate, width, height)
    prof = profile_sequence(video, params, spec.fov_deg)
    n_warm = steady_state_warmup(params, tf, duration, sample_rate)
    return float(prof.scores[n_warm:].mean()), n_warm / sample_rate


def sweep_frequencies(sf_values, tf_values, duration=2.0, sample_rate=300.0, width=100,
                      height=100, params=None, contrast=1.0, mean_luminance=0.5,
                      phase0=math.pi / 2, fov_deg=360.0, jobs=1):
    """Mean post-warm-up score for every grating (sf_i, tf_j).

    Cells whose TF reaches the Nyquist limit are marked invalid (``nan``)
    rather than computed. With ``jobs > 1`` cells run in worker processes;
    each cell owns its model state so the result equals the sequential one.
    """
    params = params if params is not None else _avdm.AvdmParams()
    sfs = [float(v) for v in sf_values]
    tfs = [float(v) for v in tf_values]
    if not sfs or not tfs:
        raise ModelError("sf_values and tf_values must be non-empty")
    stim = {"contrast": contrast, "mean_luminance": mean_luminance, "phase0": phase0,
            "fov_deg": fov_deg}
    resp = np.full((len(sfs), len(tfs)), np.nan)
    warm = np.zeros_like(resp)
    valid = np.zeros(resp.shape, dtype=bool)
    todo = []
    for i, sf in enumerate(sfs):
        for j, tf in enumerate(tfs):
            if sample_rate < 2.0 * tf:
                continue
            valid[i, j] = True
            todo.append(((i, j), (sf, tf, duration, sample_rate, width, height, stim, params)))
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_cell, [a for _, a in todo]))
    else:
        results = [_cell(a) for _, a in todo]
    for ((i, j), _), (mean, w) in zip(todo, results):
        resp[i, j] = mean
        warm[i, j] = w
    config = {"duration": duration, "sample_rate": sample_rate, "width": width,
              "height": height, **stim}
    return SweepGrid(sfs, tfs, resp, warm, valid, config)


# --------------------------------------------------------------------------
# Ordering checks
# --------------------------------------------------------------------------

def rankdata(values):
    """Average ranks (1-based) with ties sharing the mean rank."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="mergesort")
    ranks = np.empty(v.size)
    sv = v[order]
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x, y):
    """Spearman rank correlation; ``nan`` if either input is constant."""
    rx = rankdata(x)
    ry = rankdata(y)
    if rx.size != ry.size:
        raise ModelError("spearman inputs differ in length")
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    den = math.sqrt(float(rx @ rx) * float(ry @ ry))
    return float(rx @ ry) / den if den > 0 else float("nan")


@dataclass
class MonotonicityReport:
    sf_increasing: dict
    tf_spearman: dict
    violations: list
    notices: list

    def to_dict(self):
        return {
            "sf_increasing": {repr(k): v for k, v in self.sf_increasing.items()},
            "tf_spearman": {repr(k): v for k, v in self.tf_spearman.items()},
            "violations": self.violations,
            "notices": self.notices,
        }

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    def to_text(self):
        lines = ["SF ordering (strict increase at fixed TF):"]
        for tf, ok in self.sf_increasing.items():
            lines.append(f"  TF={tf:g} Hz: {'increasing' if ok else 'NOT increasing'}")
        lines.append("TF ordering (Spearman rho at fixed SF):")
        for sf, rho in self.tf_spearman.items():
            lines.append(f"  SF={sf:g} upc: rho={rho:.4f}")
        if self.violations:
            lines.append("Violations:")
            for v in self.violations:
                lines.append(
                    f"  along {v['axis']} at {v['fixed']}={v['fixed_value']:g}: "
                    f"{v['from']:g} -> {v['to']:g} ({v['score_from']:.6g} -> {v['score_to']:.6g})"
                )
        for n in self.notices:
            lines.append(f"Notice: {n}")
        return "\n".join(lines) + "\n"


def check_monotonicity(grid):
    """Strict increase along SF per TF column, Spearman along TF per SF row.

    Every adjacent pair breaking the order is listed: along SF a pair that
    does not strictly increase, along TF a pair that decreases. Invalid
    cells are skipped.
    """
    resp = np.asarray(grid.responses, dtype=np.float64)
    sfs = list(grid.sf_values)
    tfs = list(grid.tf_values)
    sf_flags, tf_rho, violations, notices = {}, {}, [], []
    if len(sfs) < 2:
        notices.append("fewer than 2 SF values; SF ordering skipped")
    else:
        for j, tf in enumerate(tfs):
            col = resp[:, j]
            ok = np.isfinite(col)
            idx = np.flatnonzero(ok)
            if idx.size < 2:
                notices.append(f"TF={tf:g}: fewer than 2 valid cells; skipped")
                continue
            flag = True
            for a, b in zip(idx[:-1], idx[1:]):
                if not col[b] > col[a]:
                    flag = False
                    violations.append({"axis": "sf", "fixed": "tf", "fixed_value": tf,
                                       "from": sfs[a], "to": sfs[b],
                                       "score_from": float(col[a]), "score_to": float(col[b])})
            sf_flags[tf] = flag
    if len(tfs) < 2:
        notices.append("fewer than 2 TF values; TF ordering skipped")
    else:
        for i, sf in enumerate(sfs):
            row = resp[i]
            idx = np.flatnonzero(np.isfinite(row))
            if idx.size < 2:
                notices.append(f"SF={sf:g}: fewer than 2 valid cells; skipped")
                continue
            tf_rho[sf] = spearman([tfs[k] for k in idx], row[idx])
            for a, b in zip(idx[:-1], idx[1:]):
                if row[b] < row[a]:
                    violations.append({"axis": "tf", "fixed": "sf", "fixed_value": sf,
                                       "from": tfs[a], "to": tfs[b],
                                       "score_from": float(row[a]), "score_to": float(row[b])})
    return MonotonicityReport(sf_flags, tf_rho, violations, notices)
