"""Crash indicators: the lane-change ACC/AEB surrogate and analytic scenarios.

The surrogate integrates two-vehicle longitudinal dynamics with an adaptive
cruise controller and an emergency-braking override.  Analytic scenarios
supply monotone indicators with known probabilities for validating the
estimation machinery.
"""

import json
from dataclasses import dataclass, asdict, fields

import numpy as np
from scipy.special import ndtr

from .frontier import DirectionMask
from .gauss import GaussComponent, Rect, rect_prob
from .tgmm import gmm_log_density

# desired standstill gap for the cruise controller, m
STANDSTILL_MARGIN = 2.0


@dataclass(frozen=True)
class LaneChangeEvent:
    v: float      # lead-vehicle speed, m/s
    ttc: float    # time to collision, s
    range: float  # gap to lead vehicle, m

    def __post_init__(self):
        if self.range <= 0 or self.ttc <= 0:
            raise ValueError("range and ttc must be positive (closing events only)")


@dataclass(frozen=True)
class AVConfig:
    acc_time_gap: float = 1.4
    acc_speed_gain: float = 0.4
    acc_spacing_gain: float = 0.1
    aeb_ttc_trigger: float = 1.2
    aeb_decel: float = 6.0
    max_decel: float = 8.0
    reaction_delay: float = 0.2
    dt: float = 0.01
    horizon: float = 15.0
    crash_range: float = 0.1

    def __post_init__(self):
        if self.dt <= 0 or self.horizon < 10 * self.dt:
            raise ValueError("need dt > 0 and horizon >= 10*dt")
        if not 0 < self.aeb_decel <= self.max_decel:
            raise ValueError("need 0 < aeb_decel <= max_decel")
        if self.crash_range < 0:
            raise ValueError("crash_range must be >= 0")

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        names = {f.name for f in fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError("unknown AVConfig fields: %s" % sorted(unknown))
        return cls(**doc)


def ttc_from_range_rate(range_, range_rate):
    """TTC = -range / range_rate for closing encounters."""
    if range_ <= 0:
        raise ValueError("range must be positive")
    if range_rate >= 0:
        raise ValueError("TTC undefined for non-closing encounters (range_rate >= 0)")
    return -range_ / range_rate


def simulate(event, cfg=AVConfig()):
    """Deterministic crash/safe outcome for one lane-change initial condition.

    Lead vehicle holds speed v; the follower starts range behind, closing at
    range/ttc, under ACC with an AEB override that engages reaction_delay
    after instantaneous TTC first drops below the trigger.
    """
    v_lead = event.v
    gap = event.range
    v_f = v_lead + event.range / event.ttc
    cfg_dt = cfg.dt
    n_steps = int(round(cfg.horizon / cfg_dt))
    aeb_at = None
    t = 0.0
    for step in range(n_steps):
        if gap <= cfg.crash_range:
            return 1
        range_rate = v_lead - v_f
        if range_rate < 0:
            ttc_inst = -gap / range_rate
            if ttc_inst < cfg.aeb_ttc_trigger and aeb_at is None:
                aeb_at = t + cfg.reaction_delay
        accel = (cfg.acc_spacing_gain
                 * (gap - v_f * cfg.acc_time_gap - STANDSTILL_MARGIN)
                 + cfg.acc_speed_gain * range_rate)
        accel = min(max(accel, -cfg.max_decel), 2.0)
        if aeb_at is not None and t >= aeb_at:
            accel = -cfg.aeb_decel
        v_f = max(v_f + accel * cfg_dt, 0.0)
        gap += (v_lead - v_f) * cfg_dt
        t += cfg_dt
        if not np.isfinite(gap) or not np.isfinite(v_f):
            raise RuntimeError("non-finite simulator state at step %d" % step)
    return 1 if gap <= cfg.crash_range else 0


def event_to_model(event):
    """Model coordinates (v, 1/ttc, 1/range) for a lane-change event."""
    return np.array([event.v, 1.0 / event.ttc, 1.0 / event.range])


def model_to_event(x):
    return LaneChangeEvent(v=float(x[0]), ttc=1.0 / float(x[1]),
                           range=1.0 / float(x[2]))


def lane_change_mask():
    """Crash set is non-increasing in (v, ttc, range); reciprocals flip the last two."""
    return DirectionMask([-1.0, 1.0, 1.0])


def lane_change_indicator(cfg=AVConfig()):
    """Crash indicator over model coordinates (v, 1/ttc, 1/range)."""
    def indicator(x):
        X = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.array([simulate(model_to_event(row), cfg) for row in X])
        return out if np.asarray(x).ndim > 1 else int(out[0])
    return indicator


def check_monotone(indicator, mask, probes, rng, box, step_frac=0.05):
    """Probe an indicator for monotonicity violations inside a bounded box.

    For each probe, stepping any coordinate deeper into the declared rare
    direction must not leave the rare set, and stepping out must not enter
    it.  Returns a list of (point, coordinate) violations.
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    lo, up = box.lower, box.upper
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(up))):
        raise ValueError("check_monotone needs a bounded probe box")
    span = up - lo
    d = box.dim
    X = lo + rng.random((probes, d)) * span
    from .accel import apply_indicator
    base = apply_indicator(indicator, X)
    violations = []
    for i in range(d):
        delta = mask.signs[i] * step_frac * span[i]
        for direction in (1.0, -1.0):
            Xs = X.copy()
            Xs[:, i] = np.clip(Xs[:, i] + direction * delta, lo[i], up[i])
            stepped = apply_indicator(indicator, Xs)
            if direction > 0:
                bad = (base == 1) & (stepped == 0)
            else:
                bad = (base == 0) & (stepped == 1)
            for j in np.flatnonzero(bad):
                violations.append((X[j].copy(), i))
    return violations


def _mixture_halfspace_tail(gmm, w, gamma):
    w = np.asarray(w, dtype=float)
    total = 0.0
    for eta, c in zip(gmm.weights, gmm.components):
        mu = float(w @ c.mean)
        sd = float(np.sqrt(w @ c.cov @ w))
        total += eta * ndtr(-(gamma - mu) / sd)
    return total


def _grid_truth(gmm, indicator, lo, up, steps=400):
    axes = [np.linspace(lo[i], up[i], steps) for i in range(len(lo))]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    dens = np.exp(gmm_log_density(pts, gmm))
    vol = np.prod([(up[i] - lo[i]) / (steps - 1) for i in range(len(lo))])
    hits = np.asarray(indicator(pts))
    return float(np.sum(dens * hits) * vol)


def analytic_scenario(kind, params):
    """Monotone validation scenarios with exact probability functions.

    Returns (indicator, truth_fn, mask); truth_fn takes a TruncatedGMM.
    Kinds: halfspace (w, gamma; closed form on unbounded supports, dense
    grid at d <= 2 otherwise), orthant (corner; exact via rectangle
    probabilities at any supported d), mixture-tail (gamma; 1-d halfspace).
    """
    if kind == "mixture-tail":
        kind, params = "halfspace", {"w": [1.0], "gamma": params["gamma"]}
    if kind == "halfspace":
        w = np.asarray(params["w"], dtype=float)
        gamma = float(params["gamma"])
        if np.any(w < 0):
            raise ValueError("halfspace weights must be nonnegative (monotone set)")

        def indicator(x):
            X = np.atleast_2d(np.asarray(x, dtype=float))
            out = (X @ w >= gamma).astype(int)
            return out if np.asarray(x).ndim > 1 else int(out[0])

        def truth_fn(gmm):
            if gmm.support.is_unbounded():
                return _mixture_halfspace_tail(gmm, w, gamma)
            if gmm.dim > 2:
                raise ValueError("halfspace truth on truncated supports only at d <= 2")
            lo = np.where(np.isfinite(gmm.support.lower), gmm.support.lower, -12.0)
            up = np.where(np.isfinite(gmm.support.upper), gmm.support.upper, 12.0)
            return _grid_truth(gmm, indicator, lo, up)

        return indicator, truth_fn, DirectionMask(np.where(w > 0, 1.0, 1.0))
    if kind == "orthant":
        corner = np.asarray(params["corner"], dtype=float)

        def indicator(x):
            X = np.atleast_2d(np.asarray(x, dtype=float))
            out = np.all(X >= corner, axis=1).astype(int)
            return out if np.asarray(x).ndim > 1 else int(out[0])

        def truth_fn(gmm):
            total = 0.0
            for eta, c, nc in zip(gmm.weights, gmm.components, gmm.norm_consts):
                lo = np.maximum(corner, gmm.support.lower)
                up = np.array(gmm.support.upper, copy=True)
                if np.any(lo >= up):
                    continue
                total += eta * rect_prob(c, Rect(lo, up)) / nc
            return total

        return indicator, truth_fn, DirectionMask(np.ones(corner.size))
    raise ValueError("unsupported analytic scenario kind %r" % kind)
