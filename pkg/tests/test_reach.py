import numpy as np
import pytest

from ctrlkit.dsl import parse
from ctrlkit.flows import PiecewiseControl, Trajectory, integrate, time_reversal
from ctrlkit.reach import (
    CONSISTENCY_THRESHOLD,
    BoundedReachReport,
    CompareReport,
    ReachConfig,
    ReachEstimate,
    bounded_reach_check,
    cells_to_csv,
    coverage_compare,
    estimate_summary,
    project_x,
    sample_reach,
    two_point_steer,
)
from ctrlkit.transform import extend


def heading_cfg(**overrides):
    base = dict(
        horizon=1.0,
        segments=4,
        input_box=((-6.0, 6.0),),
        samples=500,
        window=((-2.0, 2.0), (-2.0, 2.0)),
        resolution=16,
        seed=5,
        step=1e-2,
    )
    base.update(overrides)
    return ReachConfig(**base)


# --- configuration ----------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        heading_cfg(horizon=0.0)
    with pytest.raises(ValueError):
        heading_cfg(segments=0)
    with pytest.raises(ValueError):
        heading_cfg(samples=0)
    with pytest.raises(ValueError):
        heading_cfg(seed=-1)
    with pytest.raises(ValueError):
        heading_cfg(step=0.0)
    with pytest.raises(ValueError):
        heading_cfg(input_box=((2.0, -2.0),))
    with pytest.raises(ValueError):
        heading_cfg(window=((0.0, 0.0), (-1.0, 1.0)))
    with pytest.raises(ValueError):
        heading_cfg(resolution=(16,))
    with pytest.raises(ValueError):
        heading_cfg(resolution=1)


def test_config_broadcasts_scalar_resolution():
    cfg = heading_cfg(resolution=12)
    assert cfg.resolution == (12, 12)
    assert heading_cfg(resolution=(8, 10)).resolution == (8, 10)


# --- sampling ---------------------------------------------------------------

def test_sample_reach_is_deterministic(heading):
    a = sample_reach(heading, [0.0, 0.0], heading_cfg())
    b = sample_reach(heading, [0.0, 0.0], heading_cfg())
    assert np.array_equal(a.bitmap, b.bitmap)
    assert a.coverage == b.coverage
    assert a.retained == b.retained


def test_sample_prefix_grows_monotonically(heading):
    """Each trajectory draws from its own stream, so the first 500 of a
    1000-sample run are the 500-sample run verbatim."""
    small = sample_reach(heading, [0.0, 0.0], heading_cfg(samples=500))
    large = sample_reach(heading, [0.0, 0.0], heading_cfg(samples=1000))
    assert np.all(~small.bitmap | large.bitmap)
    assert large.bitmap.sum() >= small.bitmap.sum()


def test_coverage_grows_with_horizon(heading):
    short = sample_reach(heading, [0.0, 0.0], heading_cfg(horizon=0.8, samples=2000, resolution=20, seed=3, segments=5, input_box=((-8.0, 8.0),)))
    long = sample_reach(heading, [0.0, 0.0], heading_cfg(horizon=2.0, samples=2000, resolution=20, seed=3, segments=5, input_box=((-8.0, 8.0),)))
    assert long.coverage > short.coverage + 0.2


def test_unit_speed_reach_is_a_disk(heading):
    # speed is identically one, so time T reaches exactly the radius-T disk
    cfg = heading_cfg(horizon=1.5, segments=5, input_box=((-8.0, 8.0),), samples=4000, resolution=20, seed=11)
    est = sample_reach(heading, [0.0, 0.0], cfg)
    lows = np.array([-2.0, -2.0])
    width = 0.2
    for i in range(20):
        for j in range(20):
            center = lows + (np.array([i, j]) + 0.5) * width
            r = np.linalg.norm(center)
            if r <= 1.2:
                assert est.bitmap[i, j], f"inner cell {center} missed"
            if r >= 1.7:
                assert not est.bitmap[i, j], f"outer cell {center} hit"


def test_reversed_system_reaches_back(heading):
    """Duality: a point we can reach is a point whose reversed-time flow
    reaches us."""
    cfg = heading_cfg(horizon=1.5, segments=5, input_box=((-8.0, 8.0),), samples=4000, resolution=20, seed=11)
    rev = time_reversal(heading)
    origin_cell = (9, 9)  # floor((0 - (-2)) / 0.2) on both axes
    for src in ([1.0, 0.0], [0.0, -0.8], [-0.7, 0.7]):
        back = sample_reach(rev, src, cfg)
        assert back.bitmap[origin_cell]
    # too far away in either direction
    far = sample_reach(rev, [1.8, 1.8], cfg)
    assert not far.bitmap[origin_cell]


def test_frozen_dynamics_mark_one_cell():
    still = parse("system still\nstates x1 x2\ninputs u\ndx1 = 0\ndx2 = 0\n")
    est = sample_reach(still, [0.1, 0.1], heading_cfg(samples=50))
    assert est.bitmap.sum() == 1
    assert est.coverage == 1.0 / (16 * 16)
    assert est.dropped == 0
    assert est.retained == 50


def test_states_outside_window_leave_no_mark():
    runaway = parse("system run\nstates x1\ninputs u\ndx1 = 1\n")
    cfg = ReachConfig(
        horizon=1.0, segments=2, input_box=((-1.0, 1.0),), samples=20,
        window=((5.0, 6.0),), resolution=8, seed=0, step=1e-2,
    )
    est = sample_reach(runaway, [0.0], cfg)
    # trajectories run from 0 to 1, never entering [5, 6]
    assert est.bitmap.sum() == 0
    assert est.coverage == 0.0


def test_sample_reach_counts_blowups():
    boom = parse("system boom\nstates x1\ninputs u\ndx1 = x1^2 + u\n")
    cfg = ReachConfig(
        horizon=4.0, segments=2, input_box=((0.5, 1.5),), samples=40,
        window=((-2.0, 2.0),), resolution=8, seed=1, step=1e-2,
    )
    est = sample_reach(boom, [1.0], cfg)
    # x' >= x^2 + 1/2 from 1 escapes well before t = 4
    assert est.dropped == 40
    assert est.retained == 0
    assert est.bitmap.sum() == 0


def test_estimate_summary_and_csv(heading):
    est = sample_reach(heading, [0.0, 0.0], heading_cfg(samples=200))
    summary = estimate_summary(est)
    assert summary == {"coverage": est.coverage, "samples": 200, "dropped": est.dropped}
    text = cells_to_csv(est, ["x1", "x2"])
    lines = text.splitlines()
    assert lines[0] == "x1,x2"
    assert len(lines) == 1 + est.bitmap.sum()
    first = [float(v) for v in lines[1].split(",")]
    # centers of a 16-cell grid over [-2, 2] sit on the 0.125 offsets
    assert all(abs((v + 2.0) / 0.25 - 0.5 - round((v + 2.0) / 0.25 - 0.5)) < 1e-12 for v in first)
    with pytest.raises(ValueError):
        cells_to_csv(est, ["x1"])


# --- projection -------------------------------------------------------------

def test_project_x_drops_integrator_block(cubic):
    record = extend(cubic)
    traj = Trajectory(np.array([0.0, 1.0]), np.arange(8.0).reshape(2, 4))
    proj = project_x(traj, record)
    assert proj.states.shape == (2, 3)
    assert np.array_equal(proj.states, [[0.0, 1.0, 2.0], [4.0, 5.0, 6.0]])
    with pytest.raises(ValueError):
        project_x(proj, record)


def test_projected_integration_matches_original_when_rate_is_zero(cubic):
    # zero rate freezes the integrator, so the base block follows the
    # original system at that constant input
    record = extend(cubic)
    u0 = 0.7
    ctrl = PiecewiseControl(((1.2, (0.0,)),))
    ext_traj = integrate(record.extended, [0.1, 0.2, 0.3, u0], ctrl, step=1e-3)
    proj = project_x(ext_traj, record)
    orig = integrate(cubic, [0.1, 0.2, 0.3], PiecewiseControl(((1.2, (u0,)),)), step=1e-3)
    assert np.allclose(proj.endpoint, orig.endpoint, atol=1e-9)
    assert abs(ext_traj.endpoint[3] - u0) < 1e-15


# --- original vs extension comparison ---------------------------------------

def test_coverage_compare_consistent_on_heading(heading):
    cfg = heading_cfg(horizon=1.5, segments=5, input_box=((-8.0, 8.0),), samples=3000, resolution=20, seed=11)
    cfg_ext = ReachConfig(
        horizon=1.5, segments=5, input_box=((-5.0, 5.0),), samples=3000,
        window=((-2.0, 2.0), (-2.0, 2.0), (-12.0, 12.0)), resolution=(20, 20, 10),
        seed=12, step=1e-2,
    )
    report = coverage_compare(heading, [0.0, 0.0], cfg, cfg_ext)
    assert report.threshold == CONSISTENCY_THRESHOLD
    assert 0.0 <= report.coverage_original <= 1.0
    assert report.difference == pytest.approx(
        abs(report.coverage_original - report.coverage_extended_projected)
    )
    assert 0.0 <= report.cell_agreement <= 1.0
    data = report.to_json()
    assert data["verdict"] == report.verdict
    assert data["consistent"] == report.consistent


def test_coverage_compare_validates_grids(heading):
    cfg = heading_cfg()
    good_ext = ReachConfig(
        horizon=1.0, segments=4, input_box=((-5.0, 5.0),), samples=100,
        window=((-2.0, 2.0), (-2.0, 2.0), (-12.0, 12.0)), resolution=(16, 16, 8),
        seed=1, step=1e-2,
    )
    with pytest.raises(ValueError):
        # window prefix mismatch
        bad = ReachConfig(
            horizon=1.0, segments=4, input_box=((-5.0, 5.0),), samples=100,
            window=((-3.0, 3.0), (-2.0, 2.0), (-12.0, 12.0)), resolution=(16, 16, 8),
            seed=1, step=1e-2,
        )
        coverage_compare(heading, [0.0, 0.0], cfg, bad)
    with pytest.raises(ValueError):
        bad = ReachConfig(
            horizon=1.0, segments=4, input_box=((-5.0, 5.0),), samples=100,
            window=((-2.0, 2.0), (-2.0, 2.0)), resolution=(16, 16), seed=1, step=1e-2,
        )
        coverage_compare(heading, [0.0, 0.0], cfg, bad)
    with pytest.raises(ValueError):
        bad = ReachConfig(
            horizon=2.0, segments=4, input_box=((-5.0, 5.0),), samples=100,
            window=((-2.0, 2.0), (-2.0, 2.0), (-12.0, 12.0)), resolution=(16, 16, 8),
            seed=1, step=1e-2,
        )
        coverage_compare(heading, [0.0, 0.0], cfg, bad)
    no_inputs = parse("system plain\nstates x1\ndx1 = x1\n")
    with pytest.raises(ValueError):
        coverage_compare(no_inputs, [0.0], cfg, good_ext)


# --- input bounds -----------------------------------------------------------

def test_bounded_check_original_leg_equals_plain_run(heading):
    from dataclasses import replace

    cfg = heading_cfg(samples=300)
    bounds = ((-1.0, 1.0),)
    report = bounded_reach_check(heading, [0.0, 0.0], bounds, cfg, rate_box=((-3.0, 3.0),))
    direct = sample_reach(heading, [0.0, 0.0], replace(cfg, input_box=bounds))
    assert np.array_equal(report.original.bitmap, direct.bitmap)
    assert report.original.coverage == direct.coverage


def test_bounded_check_rejects_escaping_integrator_paths(heading):
    cfg = heading_cfg(samples=300)
    # wide rates against tight bounds: most integrator paths leave the box
    report = bounded_reach_check(heading, [0.0, 0.0], ((-0.5, 0.5),), cfg, rate_box=((-6.0, 6.0),))
    assert report.rejected > 150
    assert report.extended_projected.samples == 300
    kept = 300 - report.rejected
    assert report.extended_projected.retained <= kept


def test_bounded_check_validates(heading):
    cfg = heading_cfg()
    with pytest.raises(ValueError):
        bounded_reach_check(heading, [0.0, 0.0], ((-1.0, 1.0), (-1.0, 1.0)), cfg)
    no_inputs = parse("system plain\nstates x1\ndx1 = x1\n")
    with pytest.raises(ValueError):
        bounded_reach_check(no_inputs, [0.0], ((-1.0, 1.0),), cfg)


# --- steering ---------------------------------------------------------------

def test_steer_trivial_when_already_there(heading):
    res = two_point_steer(heading, [0.3, 0.4], [0.3, 0.4], heading_cfg(), 1e-6)
    assert res.success
    assert res.control.segments == ()
    assert res.evaluations == 0


def test_steer_scalar_integrator():
    scalar = parse("system scalar\nstates x\ninputs u\ndx = u\n")
    cfg = ReachConfig(
        horizon=1.5, segments=3, input_box=((-2.0, 2.0),), samples=2000,
        window=((-2.0, 2.0),), resolution=4, seed=9, step=1e-2,
    )
    res = two_point_steer(scalar, [0.0], [1.0], cfg, 1e-3)
    assert res.success
    assert res.distance <= 1e-3
    assert res.evaluations <= 2000
    # reported distance is the replayed endpoint's distance
    end = integrate(scalar, [0.0], res.control, cfg.step).endpoint
    assert abs(abs(end[0] - 1.0) - res.distance) < 1e-9


def test_steer_cubic_between_given_points(cubic):
    cfg = ReachConfig(
        horizon=6.0, segments=6, input_box=((-2.0, 2.0),), samples=4000,
        window=((-2.0, 2.0),) * 3, resolution=4, seed=2026, step=1e-2,
    )
    res = two_point_steer(cubic, [0.0, 0.0, 0.0], [1.0, 1.0, 1.0], cfg, 1e-2)
    assert res.success
    end = integrate(cubic, [0.0, 0.0, 0.0], res.control, cfg.step).endpoint
    assert abs(np.linalg.norm(end - np.array([1.0, 1.0, 1.0])) - res.distance) < 1e-9


def test_steer_validates_endpoint_shapes(heading):
    with pytest.raises(ValueError):
        two_point_steer(heading, [0.0], [1.0, 0.0], heading_cfg(), 1e-3)
