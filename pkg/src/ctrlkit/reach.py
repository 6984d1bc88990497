"""Monte-Carlo reachability estimates on a fixed window grid.

Trajectories under random piecewise-constant controls are integrated in
vectorized batches; every substep point marks the grid cell it lands in.
Control draws use one RNG sub-stream per trajectory index, so results are
independent of batch and chunk layout, and bit-identical for a given
seed.  Bitmap merges are plain ORs, hence order-insensitive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .dsl import ControlSystem
from .expr import compile_components
from .flows import BLOWUP_LIMIT, PiecewiseControl, Trajectory, rk4_step
from .transform import ExtensionRecord, extend

CONSISTENCY_THRESHOLD = 0.05
DEFAULT_RATE_BOUND = 10.0
_CHUNK = 2048
_REFINE_BATCH = 64


def _as_box(box) -> tuple[tuple[float, float], ...]:
    out = []
    for pair in box:
        lo, hi = float(pair[0]), float(pair[1])
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise ValueError(f"box axis must satisfy lo < hi, got ({lo}, {hi})")
        out.append((lo, hi))
    return tuple(out)


@dataclass(frozen=True)
class ReachConfig:
    horizon: float
    segments: int
    input_box: tuple[tuple[float, float], ...]
    samples: int
    window: tuple[tuple[float, float], ...]
    resolution: tuple[int, ...]
    seed: int
    step: float = 1e-2

    def __post_init__(self):
        if not (self.horizon > 0.0 and math.isfinite(self.horizon)):
            raise ValueError("horizon must be positive")
        if self.segments < 1:
            raise ValueError("need at least one control segment")
        if self.samples < 1:
            raise ValueError("need at least one sample")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if self.step <= 0.0:
            raise ValueError("step must be positive")
        object.__setattr__(self, "input_box", _as_box(self.input_box))
        object.__setattr__(self, "window", _as_box(self.window))
        res = self.resolution
        if isinstance(res, int):
            res = tuple(res for _ in self.window)
        res = tuple(int(r) for r in res)
        if len(res) != len(self.window):
            raise ValueError("one resolution per window axis required")
        if any(r < 2 for r in res):
            raise ValueError("resolution must be at least 2 per axis")
        object.__setattr__(self, "resolution", res)


@dataclass
class ReachEstimate:
    window: tuple[tuple[float, float], ...]
    resolution: tuple[int, ...]
    bitmap: np.ndarray
    coverage: float
    samples: int
    retained: int
    dropped: int


def estimate_summary(est: ReachEstimate) -> dict:
    return {"coverage": est.coverage, "samples": est.samples, "dropped": est.dropped}


def cells_to_csv(est: ReachEstimate, names) -> str:
    """Centers of visited cells, row per cell in grid order."""
    if len(names) != len(est.resolution):
        raise ValueError("one column name per grid axis required")
    lows = np.array([w[0] for w in est.window])
    highs = np.array([w[1] for w in est.window])
    res = np.array(est.resolution, dtype=float)
    widths = (highs - lows) / res
    lines = [",".join(names)]
    for idx in np.argwhere(est.bitmap):
        center = lows + (idx + 0.5) * widths
        lines.append(",".join(f"{v:.17g}" for v in center))
    return "\n".join(lines) + "\n"


class _Grid:
    """Half-open uniform grid over selected state axes, with a visited
    bitmap."""

    def __init__(self, window, resolution, axes=None):
        self.window = _as_box(window)
        self.resolution = tuple(int(r) for r in resolution)
        self.axes = None if axes is None else tuple(axes)
        self.lows = np.array([w[0] for w in self.window])
        self.highs = np.array([w[1] for w in self.window])
        self.res = np.array(self.resolution, dtype=np.int64)
        self.bitmap = np.zeros(int(np.prod(self.res)), dtype=bool)

    def flat_index(self, x: np.ndarray) -> np.ndarray:
        """Flat cell index per row, -1 for points outside the window."""
        pts = x if self.axes is None else x[:, self.axes]
        w = (pts - self.lows) / (self.highs - self.lows)
        with np.errstate(invalid="ignore"):
            ok = np.all((w >= 0.0) & (w < 1.0), axis=1) & np.all(np.isfinite(w), axis=1)
        cells = np.minimum((w * self.res).astype(np.int64), self.res - 1)
        flat = np.zeros(len(x), dtype=np.int64)
        stride = 1
        for a in range(len(self.res) - 1, -1, -1):
            flat += cells[:, a] * stride
            stride *= int(self.res[a])
        flat[~ok] = -1
        return flat

    def commit(self, stacked: np.ndarray, keep: np.ndarray):
        valid = (stacked >= 0) & keep[None, :]
        self.bitmap[stacked[valid]] = True

    @property
    def coverage(self) -> float:
        return float(self.bitmap.sum()) / self.bitmap.size

    def shaped_bitmap(self) -> np.ndarray:
        return self.bitmap.reshape(self.resolution)


def _draw_controls(seed: int, count: int, segments: int, horizon: float, box):
    """Per-trajectory sub-streams: sample i depends only on (seed, i)."""
    box = np.array(box, dtype=float).reshape(-1, 2)
    m = box.shape[0]
    lows, spans = box[:, 0], box[:, 1] - box[:, 0]
    durations = np.empty((count, segments))
    values = np.empty((count, segments, m))
    ones = np.ones(segments)
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        durations[i] = rng.dirichlet(ones) * horizon
        values[i] = lows + rng.random((segments, m)) * spans
    return durations, values


def _run_batch(f, n: int, x0, durations, values, step: float, grids):
    """Integrate all trajectories; returns (endpoints, dropped).  Cells
    are committed per chunk, and only for trajectories that never blew
    up, so a dropped trajectory leaves no marks at all."""
    total = durations.shape[0]
    endpoints = np.zeros((total, n))
    dropped = np.zeros(total, dtype=bool)
    x0 = np.asarray(x0, dtype=float)
    for start in range(0, total, _CHUNK):
        stop = min(start + _CHUNK, total)
        end, dead = _run_chunk(f, x0, durations[start:stop], values[start:stop], step, grids)
        endpoints[start:stop] = end
        dropped[start:stop] = dead
    return endpoints, dropped


def _run_chunk(f, x0, durations, values, step, grids):
    count, segments = durations.shape
    x = np.tile(x0, (count, 1))
    alive = np.ones(count, dtype=bool)
    buffers: list[list[np.ndarray]] = [[] for _ in grids]
    for grid, buf in zip(grids, buffers):
        buf.append(grid.flat_index(x).astype(np.int32))
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for j in range(segments):
            d = durations[:, j]
            u = values[:, j, :]
            nsub = np.maximum(1, np.ceil(d / step - 1e-12).astype(np.int64))
            h = d / nsub
            for s in range(int(nsub.max())):
                act = alive & (s < nsub)
                if not act.any():
                    break
                xn = rk4_step(f, x, u, h[:, None])
                x = np.where(act[:, None], xn, x)
                bad = act & (
                    ~np.all(np.isfinite(x), axis=1)
                    | (np.max(np.abs(x), axis=1) > BLOWUP_LIMIT)
                )
                if bad.any():
                    alive &= ~bad
                    x[bad] = 0.0
                mark = act & alive
                for grid, buf in zip(grids, buffers):
                    idx = grid.flat_index(x).astype(np.int32)
                    idx[~mark] = -1
                    buf.append(idx)
    for grid, buf in zip(grids, buffers):
        grid.commit(np.vstack(buf), alive)
    endpoints = np.where(alive[:, None], x, 0.0)
    return endpoints, ~alive


def sample_reach(sys: ControlSystem, x0, cfg: ReachConfig) -> ReachEstimate:
    """Coverage of the window grid by random piecewise-constant controls.
    Deterministic for a given config: same seed, same bitmap."""
    n, m = sys.n, sys.m
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (n,):
        raise ValueError(f"x0 needs {n} entries")
    if len(cfg.window) != n:
        raise ValueError(f"window needs {n} axes")
    if len(cfg.input_box) != m:
        raise ValueError(f"input box needs {m} axes")
    f = compile_components(sys.rhs, n, m)
    durations, values = _draw_controls(cfg.seed, cfg.samples, cfg.segments, cfg.horizon, cfg.input_box)
    grid = _Grid(cfg.window, cfg.resolution)
    _, dead = _run_batch(f, n, x0, durations, values, cfg.step, [grid])
    dropped = int(dead.sum())
    return ReachEstimate(
        window=cfg.window,
        resolution=cfg.resolution,
        bitmap=grid.shaped_bitmap(),
        coverage=grid.coverage,
        samples=cfg.samples,
        retained=cfg.samples - dropped,
        dropped=dropped,
    )


def project_x(traj: Trajectory, record: ExtensionRecord) -> Trajectory:
    """Drop the integrator block from an extended trajectory."""
    n_ext = record.extended.n
    if traj.states.shape[1] != n_ext:
        raise ValueError(
            f"trajectory has {traj.states.shape[1]} columns, extension has {n_ext} states"
        )
    return Trajectory(traj.times.copy(), traj.states[:, : record.original.n].copy())


@dataclass
class CompareReport:
    coverage_original: float
    coverage_extended_projected: float
    difference: float
    cell_agreement: float
    threshold: float
    consistent: bool
    samples_original: int
    samples_extended: int
    dropped_original: int
    dropped_extended: int

    @property
    def verdict(self) -> str:
        return "consistent" if self.consistent else "inconsistent"

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "coverage_original": self.coverage_original,
            "coverage_extended_projected": self.coverage_extended_projected,
            "difference": self.difference,
            "cell_agreement": self.cell_agreement,
            "threshold": self.threshold,
            "consistent": self.consistent,
            "samples_original": self.samples_original,
            "samples_extended": self.samples_extended,
            "dropped_original": self.dropped_original,
            "dropped_extended": self.dropped_extended,
        }


def coverage_compare(sys: ControlSystem, x0, cfg: ReachConfig, cfg_ext: ReachConfig) -> CompareReport:
    """Reachable-window coverage of a system against the projection of
    its integrator extension, on the same grid.  The extension starts
    with the integrator block at zero."""
    n, m = sys.n, sys.m
    if m == 0:
        raise ValueError(f"system {sys.name!r} has no inputs, nothing to extend")
    if cfg_ext.window[:n] != cfg.window or cfg_ext.resolution[:n] != cfg.resolution:
        raise ValueError("extended window must extend the original window axes unchanged")
    if len(cfg_ext.window) != n + m:
        raise ValueError(f"extended window needs {n + m} axes")
    if len(cfg_ext.input_box) != m:
        raise ValueError(f"extended input box needs {m} rate axes")
    if cfg_ext.horizon != cfg.horizon:
        raise ValueError("compare runs need a common horizon")

    est = sample_reach(sys, x0, cfg)

    record = extend(sys)
    x0e = np.concatenate([np.asarray(x0, dtype=float), np.zeros(m)])
    f = compile_components(record.extended.rhs, n + m, m)
    durations, values = _draw_controls(
        cfg_ext.seed, cfg_ext.samples, cfg_ext.segments, cfg_ext.horizon, cfg_ext.input_box
    )
    grid_full = _Grid(cfg_ext.window, cfg_ext.resolution)
    grid_proj = _Grid(cfg.window, cfg.resolution, axes=tuple(range(n)))
    _, dead = _run_batch(f, n + m, x0e, durations, values, cfg_ext.step, [grid_full, grid_proj])

    coverage_proj = grid_proj.coverage
    agreement = float(np.mean(est.bitmap == grid_proj.shaped_bitmap()))
    difference = abs(est.coverage - coverage_proj)
    return CompareReport(
        coverage_original=est.coverage,
        coverage_extended_projected=coverage_proj,
        difference=difference,
        cell_agreement=agreement,
        threshold=CONSISTENCY_THRESHOLD,
        consistent=difference < CONSISTENCY_THRESHOLD,
        samples_original=cfg.samples,
        samples_extended=cfg_ext.samples,
        dropped_original=est.dropped,
        dropped_extended=int(dead.sum()),
    )


@dataclass
class BoundedReachReport:
    original: ReachEstimate
    extended_projected: ReachEstimate
    rejected: int


def bounded_reach_check(
    sys: ControlSystem, x0, bound_box, cfg: ReachConfig, rate_box=None
) -> BoundedReachReport:
    """Coverage with inputs confined to a compact box, on the system and
    on its extension with the integrator block confined to the same box.
    Extension controls whose integrator path would leave the box are
    rejected up front (the path is piecewise linear, so checking segment
    endpoints suffices)."""
    n, m = sys.n, sys.m
    if m == 0:
        raise ValueError(f"system {sys.name!r} has no inputs, nothing to extend")
    bound_box = _as_box(bound_box)
    if len(bound_box) != m:
        raise ValueError(f"bound box needs {m} axes")
    est = sample_reach(sys, x0, replace(cfg, input_box=bound_box))

    record = extend(sys)
    if rate_box is None:
        rate_box = tuple((-DEFAULT_RATE_BOUND, DEFAULT_RATE_BOUND) for _ in range(m))
    rate_box = _as_box(rate_box)
    lows = np.array([b[0] for b in bound_box])
    highs = np.array([b[1] for b in bound_box])
    y0 = (lows + highs) / 2.0

    durations, values = _draw_controls(cfg.seed, cfg.samples, cfg.segments, cfg.horizon, rate_box)
    y_path = y0[None, None, :] + np.cumsum(values * durations[:, :, None], axis=1)
    outside = (y_path < lows) | (y_path > highs)
    rejected_mask = outside.any(axis=(1, 2))
    rejected = int(rejected_mask.sum())

    keep = ~rejected_mask
    x0e = np.concatenate([np.asarray(x0, dtype=float), y0])
    f = compile_components(record.extended.rhs, n + m, m)
    grid_proj = _Grid(cfg.window, cfg.resolution, axes=tuple(range(n)))
    if keep.any():
        _, dead = _run_batch(f, n + m, x0e, durations[keep], values[keep], cfg.step, [grid_proj])
        dropped = int(dead.sum())
    else:
        dropped = 0
    est_proj = ReachEstimate(
        window=cfg.window,
        resolution=cfg.resolution,
        bitmap=grid_proj.shaped_bitmap(),
        coverage=grid_proj.coverage,
        samples=cfg.samples,
        retained=int(keep.sum()) - dropped,
        dropped=dropped,
    )
    return BoundedReachReport(original=est, extended_projected=est_proj, rejected=rejected)


@dataclass
class SteerResult:
    success: bool
    control: PiecewiseControl | None
    distance: float
    evaluations: int


def two_point_steer(sys: ControlSystem, x0, x1, cfg: ReachConfig, tol: float) -> SteerResult:
    """Randomized shooting toward a target point: best-of-N random
    controls, then shrinking coordinate perturbations of the best one.
    The total integration budget is cfg.samples."""
    n, m = sys.n, sys.m
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    if x0.shape != (n,) or x1.shape != (n,):
        raise ValueError(f"endpoints need {n} entries")
    start_dist = float(np.linalg.norm(x1 - x0))
    if start_dist <= tol:
        return SteerResult(True, PiecewiseControl(()), start_dist, 0)

    f = compile_components(sys.rhs, n, m)
    box = np.array(cfg.input_box, dtype=float).reshape(-1, 2)
    lows, highs = box[:, 0], box[:, 1]
    budget = cfg.samples

    first = max(1, budget // 2)
    durations, values = _draw_controls(cfg.seed, first, cfg.segments, cfg.horizon, cfg.input_box)
    ends, dead = _run_batch(f, n, x0, durations, values, cfg.step, [])
    dists = np.linalg.norm(ends - x1, axis=1)
    dists[dead] = np.inf
    best = int(np.argmin(dists))
    best_dist = float(dists[best])
    best_durs = durations[best].copy()
    best_vals = values[best].copy()
    evaluations = first

    scale = 0.25
    round_id = 0
    while best_dist > tol and evaluations + _REFINE_BATCH <= budget:
        rng = np.random.default_rng([cfg.seed, 1 << 20, round_id])
        noise = rng.normal(0.0, 1.0, size=(_REFINE_BATCH, cfg.segments, m))
        cand = np.clip(best_vals[None] + noise * scale * (highs - lows), lows, highs)
        durs = np.tile(best_durs, (_REFINE_BATCH, 1))
        ends, dead = _run_batch(f, n, x0, durs, cand, cfg.step, [])
        dists = np.linalg.norm(ends - x1, axis=1)
        dists[dead] = np.inf
        idx = int(np.argmin(dists))
        evaluations += _REFINE_BATCH
        round_id += 1
        if dists[idx] < best_dist:
            best_dist = float(dists[idx])
            best_vals = cand[idx].copy()
        else:
            scale *= 0.6
    control = PiecewiseControl(
        tuple((float(d), tuple(float(v) for v in row)) for d, row in zip(best_durs, best_vals) if d > 0.0)
    )
    return SteerResult(best_dist <= tol, control, best_dist, evaluations)
