"""Numerical flows: piecewise-constant controls, fixed-step RK4
integration, and large-gain realization of jump/drift plans.

A jump of size sigma on channel i is realized by holding the control at
sign(sigma) * gain on that channel for |sigma| / gain time units; the
commanded integrator state moves by exactly sigma while the base states
drift by O(1/gain).  Plans compose jumps with positive-duration drifts,
and ideal_plan_endpoint gives the zero-cost limit the realizations
converge to as the gain grows.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .dsl import ControlSystem
from .expr import Neg, compile_components
from .fields import VectorField
from .transform import ExtensionRecord

BLOWUP_LIMIT = 1e12
DEFAULT_STEP = 1e-3


class BlowUpError(RuntimeError):
    """State left the finite regime during integration."""

    def __init__(self, time: float):
        self.time = time
        super().__init__(f"state blew up at t={time:.6g}")


@dataclass(frozen=True)
class PiecewiseControl:
    """Finitely many constant segments: ((duration, values), ...)."""

    segments: tuple[tuple[float, tuple[float, ...]], ...]

    def __post_init__(self):
        norm = []
        for seg in self.segments:
            duration, values = seg
            duration = float(duration)
            values = tuple(float(v) for v in values)
            if not (duration > 0.0 and math.isfinite(duration)):
                raise ValueError(f"segment duration must be positive and finite, got {duration}")
            if any(not math.isfinite(v) for v in values):
                raise ValueError("control values must be finite")
            norm.append((duration, values))
        object.__setattr__(self, "segments", tuple(norm))
        widths = {len(v) for _, v in norm}
        if len(widths) > 1:
            raise ValueError("all segments must have the same number of channels")

    @property
    def total_duration(self) -> float:
        return sum(d for d, _ in self.segments)

    def reversed(self) -> "PiecewiseControl":
        return PiecewiseControl(tuple(self.segments[::-1]))


def control_to_json(ctrl: PiecewiseControl) -> list:
    return [{"duration": d, "values": list(v)} for d, v in ctrl.segments]


def control_from_json(data) -> PiecewiseControl:
    if not isinstance(data, list):
        raise ValueError("control file must hold a JSON list of segments")
    segments = []
    for i, seg in enumerate(data):
        try:
            segments.append((float(seg["duration"]), tuple(float(v) for v in seg["values"])))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"segment {i} must have 'duration' and 'values': {exc}") from exc
    return PiecewiseControl(tuple(segments))


def save_control(ctrl: PiecewiseControl, path: str):
    with open(path, "w") as fh:
        json.dump(control_to_json(ctrl), fh, indent=2)
        fh.write("\n")


def load_control(path: str) -> PiecewiseControl:
    with open(path) as fh:
        return control_from_json(json.load(fh))


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.times.ndim != 1 or self.states.ndim != 2:
            raise ValueError("trajectory needs 1-d times and 2-d states")
        if len(self.times) != len(self.states):
            raise ValueError("times and states must align")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")

    @property
    def endpoint(self) -> np.ndarray:
        return self.states[-1]


def trajectory_to_csv(traj: Trajectory, state_names) -> str:
    if len(state_names) != traj.states.shape[1]:
        raise ValueError("one column name per state required")
    lines = ["t," + ",".join(state_names)]
    for t, row in zip(traj.times, traj.states):
        lines.append(",".join(f"{v:.17g}" for v in (t, *row)))
    return "\n".join(lines) + "\n"


def save_trajectory_csv(traj: Trajectory, state_names, path: str):
    with open(path, "w") as fh:
        fh.write(trajectory_to_csv(traj, state_names))


def rk4_step(f, x, u, h):
    """One classical step.  Shapes broadcast, so this serves both the
    scalar path and the batched samplers."""
    k1 = f(x, u)
    k2 = f(x + (h / 2.0) * k1, u)
    k3 = f(x + (h / 2.0) * k2, u)
    k4 = f(x + h * k3, u)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def substep_count(duration: float, step: float) -> int:
    if duration <= 0.0:
        return 0
    return max(1, math.ceil(duration / step - 1e-12))


def integrate(sys: ControlSystem, x0, ctrl: PiecewiseControl, step: float = DEFAULT_STEP) -> Trajectory:
    """Fixed-step RK4 through every control segment.  Substeps never
    exceed `step` and each segment boundary is hit exactly."""
    if step <= 0.0:
        raise ValueError("step must be positive")
    x = np.asarray(x0, dtype=float)
    if x.shape != (sys.n,):
        raise ValueError(f"x0 must have {sys.n} entries, got shape {x.shape}")
    for d, values in ctrl.segments:
        if len(values) != sys.m:
            raise ValueError(f"control has {len(values)} channels, system expects {sys.m}")
    f = compile_components(sys.rhs, sys.n, sys.m)
    times = [0.0]
    states = [x.copy()]
    t = 0.0
    for duration, values in ctrl.segments:
        u = np.asarray(values, dtype=float)
        nsub = substep_count(duration, step)
        h = duration / nsub
        seg_start = t
        for s in range(nsub):
            x = rk4_step(f, x, u, h)
            t = seg_start + duration if s == nsub - 1 else seg_start + (s + 1) * h
            if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > BLOWUP_LIMIT:
                raise BlowUpError(t)
            times.append(t)
            states.append(x.copy())
    return Trajectory(np.array(times), np.array(states))


def flow_endpoint(vf: VectorField, x0, t: float, step: float = DEFAULT_STEP) -> np.ndarray:
    """Endpoint of the autonomous flow for a signed time; negative t flows
    the negated field."""
    if vf.parametric:
        raise ValueError("flow_endpoint requires a non-parametric field")
    x = np.asarray(x0, dtype=float)
    if x.shape != (vf.n,):
        raise ValueError(f"x0 must have {vf.n} entries")
    if t == 0.0:
        return x.copy()
    comps = vf.components if t > 0 else tuple(Neg(c) for c in vf.components)
    f = compile_components(comps, vf.n, 0)
    u = np.zeros(0)
    duration = abs(t)
    nsub = substep_count(duration, step)
    h = duration / nsub
    for s in range(nsub):
        x = rk4_step(f, x, u, h)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > BLOWUP_LIMIT:
            raise BlowUpError((s + 1) * h)
    return x


# --- plans and realization -------------------------------------------------

@dataclass(frozen=True)
class Drift:
    """Flow for `duration` along the system field at the declared frozen
    input level."""

    duration: float
    u_frozen: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "u_frozen", tuple(float(v) for v in self.u_frozen))
        if not (self.duration > 0.0 and math.isfinite(self.duration)):
            raise ValueError("drift duration must be positive")


@dataclass(frozen=True)
class Jump:
    """Instantaneous shift of one integrator channel; either sign."""

    channel: int
    displacement: float

    def __post_init__(self):
        if self.channel < 0:
            raise ValueError("channel must be nonnegative")
        if not math.isfinite(self.displacement):
            raise ValueError("displacement must be finite")


@dataclass(frozen=True)
class FlowPlan:
    segments: tuple


def realize_jump(ext: ExtensionRecord, channel: int, displacement: float, gain: float) -> PiecewiseControl:
    """One saturated segment moving integrator `channel` by exactly
    `displacement` in |displacement|/gain time."""
    m = ext.extended.m
    if not (0 <= channel < m):
        raise ValueError(f"channel {channel} out of range for {m} inputs")
    if not (gain > 0.0 and math.isfinite(gain)):
        raise ValueError("gain must be positive")
    if displacement == 0.0:
        return PiecewiseControl(())
    values = [0.0] * m
    values[channel] = math.copysign(gain, displacement)
    return PiecewiseControl(((abs(displacement) / gain, tuple(values)),))


def realize_conjugated_drift(
    ext: ExtensionRecord, beta, channels, sigma: float, gain: float
) -> PiecewiseControl:
    """Jump out along the reversed channel sequence, drift with zero
    control, jump back: the sandwiched drift runs at the displaced
    integrator level."""
    beta = [float(b) for b in beta]
    channels = [int(c) for c in channels]
    if len(beta) != len(channels):
        raise ValueError("beta and channels must have equal length")
    if not (sigma > 0.0 and math.isfinite(sigma)):
        raise ValueError("drift duration sigma must be positive")
    if not (gain > 0.0 and math.isfinite(gain)):
        raise ValueError("gain must be positive")
    m = ext.extended.m
    segments: list[tuple[float, tuple[float, ...]]] = []
    for b, ch in zip(beta[::-1], channels[::-1]):
        segments.extend(realize_jump(ext, ch, -b, gain).segments)
    segments.append((sigma, tuple([0.0] * m)))
    for b, ch in zip(beta, channels):
        segments.extend(realize_jump(ext, ch, b, gain).segments)
    return PiecewiseControl(tuple(segments))


def realize_plan(ext: ExtensionRecord, plan: FlowPlan, gain: float) -> PiecewiseControl:
    """Concatenate jump realizations and plain drifts.  Total duration is
    the drift time plus sum(|displacement|) / gain."""
    if not (gain > 0.0 and math.isfinite(gain)):
        raise ValueError("gain must be positive")
    m = ext.extended.m
    segments: list[tuple[float, tuple[float, ...]]] = []
    for seg in plan.segments:
        if isinstance(seg, Jump):
            segments.extend(realize_jump(ext, seg.channel, seg.displacement, gain).segments)
        elif isinstance(seg, Drift):
            if len(seg.u_frozen) != m:
                raise ValueError(f"drift freezes {len(seg.u_frozen)} inputs, extension has {m}")
            segments.append((seg.duration, tuple([0.0] * m)))
        else:
            raise TypeError(f"not a plan segment: {seg!r}")
    return PiecewiseControl(tuple(segments))


def ideal_plan_endpoint(ext: ExtensionRecord, plan: FlowPlan, p0, step: float = DEFAULT_STEP) -> np.ndarray:
    """Exact-composition endpoint: jumps shift the integrator block
    instantly, drifts flow the base block at the declared frozen input."""
    n, m = ext.original.n, ext.original.m
    p = np.asarray(p0, dtype=float).copy()
    if p.shape != (n + m,):
        raise ValueError(f"extended point needs {n + m} entries")
    for seg in plan.segments:
        if isinstance(seg, Jump):
            if not (0 <= seg.channel < m):
                raise ValueError(f"channel {seg.channel} out of range")
            p[n + seg.channel] += seg.displacement
        elif isinstance(seg, Drift):
            if len(seg.u_frozen) != m:
                raise ValueError(f"drift freezes {len(seg.u_frozen)} inputs, extension has {m}")
            ctrl = PiecewiseControl(((seg.duration, seg.u_frozen),))
            p[:n] = integrate(ext.original, p[:n], ctrl, step).endpoint
        else:
            raise TypeError(f"not a plan segment: {seg!r}")
    return p


def time_reversal(sys: ControlSystem) -> ControlSystem:
    """Negate every equation.  Applying it twice restores the original
    tree exactly (an outer negation is peeled, not re-wrapped)."""
    rhs = tuple(e.arg if isinstance(e, Neg) else Neg(e) for e in sys.rhs)
    name = sys.name[:-4] if sys.name.endswith("_rev") else sys.name + "_rev"
    return ControlSystem(name, sys.states, sys.inputs, rhs)
