"""Command-line front end.

Every run writes a manifest JSON next to its primary output (or next to
the input when nothing else is written) recording the tool version, the
argv, SHA-256 hashes of the input files, the output paths, and the seed
when one is in play.  Deterministic commands rerun byte-identically from
the same inputs.

Exit codes: 0 success, 1 input error, 2 structured negative verdict
(not controllable, not linear, inconsistent coverage), 3 numerical
blow-up.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .certificates import NotLinearReport, kalman_rank, kalman_reduce_3to2, larc, linear_of
from .dsl import DslError, NotAffineReport, parse, serialize, to_affine
from .flows import (
    DEFAULT_STEP,
    BlowUpError,
    Drift,
    FlowPlan,
    Jump,
    integrate,
    load_control,
    realize_plan,
    ideal_plan_endpoint,
    save_trajectory_csv,
)
from .reach import ReachConfig, cells_to_csv, coverage_compare, estimate_summary, sample_reach
from .transform import extend, extension_to_json, reduce_integrator, save_certificate


class _InputError(ValueError):
    """User-facing problem with arguments or input files."""


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; 2 means a negative
    # verdict here, so remap to the input-error code.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            h.update(block)
    return h.hexdigest()


def _note_input(manifest: dict, path: str):
    manifest["inputs"][path] = _sha256(path)


def _write_text(manifest: dict, path: str, text: str):
    with open(path, "w") as fh:
        fh.write(text)
    manifest["outputs"].append(path)


def _write_json(manifest: dict, path: str, data):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")
    manifest["outputs"].append(path)


def _read_system(args, manifest):
    _note_input(manifest, args.file)
    with open(args.file) as fh:
        return parse(fh.read())


def _parse_floats(text: str, what: str) -> list[float]:
    try:
        return [float(p) for p in text.split(",")]
    except ValueError:
        raise _InputError(f"{what} must be comma-separated numbers, got {text!r}")


def _load_json(manifest: dict, path: str, what: str):
    _note_input(manifest, path)
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise _InputError(f"{what} {path}: not valid JSON ({exc})")


_CONFIG_KEYS = {"horizon", "segments", "input_box", "samples", "window", "resolution", "seed", "step"}


def _reach_config(data, what: str) -> ReachConfig:
    if not isinstance(data, dict):
        raise _InputError(f"{what} must be a JSON object")
    unknown = sorted(set(data) - _CONFIG_KEYS)
    if unknown:
        raise _InputError(f"{what}: unknown keys {unknown}")
    missing = sorted(_CONFIG_KEYS - {"step"} - set(data))
    if missing:
        raise _InputError(f"{what}: missing keys {missing}")
    try:
        return ReachConfig(
            horizon=float(data["horizon"]),
            segments=int(data["segments"]),
            input_box=tuple(tuple(pair) for pair in data["input_box"]),
            samples=int(data["samples"]),
            window=tuple(tuple(pair) for pair in data["window"]),
            resolution=data["resolution"],
            seed=int(data["seed"]),
            step=float(data.get("step", 1e-2)),
        )
    except (TypeError, ValueError, IndexError) as exc:
        raise _InputError(f"{what}: {exc}")


def _plan_from_json(data) -> tuple[np.ndarray, FlowPlan]:
    if not isinstance(data, dict) or "start" not in data or "segments" not in data:
        raise _InputError("plan must be a JSON object with 'start' and 'segments'")
    start = np.array([float(v) for v in data["start"]])
    segments = []
    for i, seg in enumerate(data["segments"]):
        kind = seg.get("kind") if isinstance(seg, dict) else None
        try:
            if kind == "jump":
                segments.append(Jump(int(seg["channel"]), float(seg["displacement"])))
            elif kind == "drift":
                segments.append(Drift(float(seg["duration"]), tuple(seg["values"])))
            else:
                raise _InputError(f"plan segment {i}: kind must be 'jump' or 'drift'")
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, _InputError):
                raise
            raise _InputError(f"plan segment {i}: {exc}")
    return start, FlowPlan(tuple(segments))


def _gain_sweep(text: str) -> list[float]:
    parts = text.split(":")
    if len(parts) != 3:
        raise _InputError(f"gain sweep must be lo:hi:steps, got {text!r}")
    try:
        lo, hi, steps = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise _InputError(f"gain sweep must be lo:hi:steps, got {text!r}")
    if lo <= 0.0 or hi <= 0.0:
        raise _InputError("gains must be positive")
    if hi < lo or steps < 1:
        raise _InputError("gain sweep needs hi >= lo and at least one step")
    if steps == 1:
        return [lo]
    return [float(g) for g in np.geomspace(lo, hi, steps)]


# --- commands --------------------------------------------------------------


def _cmd_parse(args, manifest) -> int:
    sys_ = _read_system(args, manifest)
    print(serialize(sys_), end="")
    return 0


def _cmd_extend(args, manifest) -> int:
    sys_ = _read_system(args, manifest)
    record = extend(sys_)
    _write_text(manifest, args.out, serialize(record.extended))
    cert_path = args.certificate or args.out + ".record.json"
    _write_json(manifest, cert_path, extension_to_json(record))
    print(f"extended {sys_.name!r}: {sys_.n}+{sys_.m} states, inputs {list(record.new_inputs)}")
    return 0


def _cmd_reduce(args, manifest) -> int:
    sys_ = _read_system(args, manifest)
    cert = reduce_integrator(sys_)
    _write_text(manifest, args.out, serialize(cert.reduced))
    cert_path = args.certificate or args.out + ".cert.json"
    save_certificate(cert, cert_path)
    manifest["outputs"].append(cert_path)
    print(f"reduced {sys_.name!r} in {cert.count} steps: {sys_.n} -> {cert.reduced.n} states")
    return 0


def _cmd_check(args, manifest) -> int:
    sys_ = _read_system(args, manifest)
    out = args.out or args.file + ".report.json"
    aff = to_affine(sys_)
    if isinstance(aff, NotAffineReport):
        _write_json(manifest, out, {
            "method": args.method,
            "system": sys_.name,
            "verdict": "not-affine",
            "state": aff.state,
            "input": aff.input,
            "detail": str(aff),
        })
        print(str(aff))
        return 2

    if args.method == "kalman":
        lin = linear_of(aff)
        if isinstance(lin, NotLinearReport):
            _write_json(manifest, out, {
                "method": "kalman",
                "system": sys_.name,
                "verdict": "not-linear",
                "reason": lin.reason,
                "where": lin.where,
                "detail": str(lin),
            })
            print(str(lin))
            return 2
        rank = kalman_rank(lin.a, lin.b)
        controllable = rank == sys_.n
        report = {
            "method": "kalman",
            "system": sys_.name,
            "n": sys_.n,
            "m": sys_.m,
            "rank": rank,
            "controllable": controllable,
        }
        b = lin.b
        if sys_.n == 3 and sys_.m == 1 and abs(b[0, 0]) < 1e-12 and abs(b[1, 0]) < 1e-12 and b[2, 0] != 0.0:
            red = kalman_reduce_3to2(lin.a)
            report["reduction"] = {
                "abar": None if red.abar is None else red.abar.tolist(),
                "criterion": red.controllable,
                "degenerate": red.degenerate,
            }
        _write_json(manifest, out, report)
        print(f"{'controllable' if controllable else 'not controllable'} (rank {rank} of {sys_.n})")
        return 0 if controllable else 2

    point = [0.0] * sys_.n if args.point is None else _parse_floats(args.point, "--point")
    if len(point) != sys_.n:
        raise _InputError(f"--point needs {sys_.n} entries")
    report = larc(aff, point, args.depth)
    data = {"method": "larc", "system": sys_.name}
    data.update(report.to_json())
    _write_json(manifest, out, data)
    state = "full rank" if report.full_rank else "rank deficient"
    print(f"{state}: rank {report.rank} of {sys_.n} at depth {report.depth}")
    return 0 if report.full_rank else 2


def _cmd_simulate(args, manifest) -> int:
    sys_ = _read_system(args, manifest)
    x0 = _parse_floats(args.x0, "--x0")
    if len(x0) != sys_.n:
        raise _InputError(f"--x0 needs {sys_.n} entries")
    _note_input(manifest, args.control)
    ctrl = load_control(args.control)
    traj = integrate(sys_, x0, ctrl, step=args.step)
    save_trajectory_csv(traj, sys_.states, args.out)
    manifest["outputs"].append(args.out)
    end = ", ".join(f"{v:.6g}" for v in traj.endpoint)
    print(f"simulated {traj.times[-1]:.6g}s, {len(traj.times)} points, endpoint ({end})")
    return 0


def _cmd_reach(args, manifest) -> int:
    sys_ = _read_system(args, manifest)
    x0 = _parse_floats(args.x0, "--x0")
    cfg = _reach_config(_load_json(manifest, args.config, "config"), "config")
    manifest["seed"] = cfg.seed
    est = sample_reach(sys_, x0, cfg)
    _write_text(manifest, args.out, cells_to_csv(est, sys_.states))
    summary_path = args.summary or args.out + ".summary.json"
    _write_json(manifest, summary_path, estimate_summary(est))
    print(f"coverage {est.coverage:.4f} ({est.retained} of {est.samples} kept, {est.dropped} dropped)")
    return 0


def _cmd_compare(args, manifest) -> int:
    sys_ = _read_system(args, manifest)
    x0 = _parse_floats(args.x0, "--x0")
    cfg = _reach_config(_load_json(manifest, args.config, "config"), "config")
    cfg_ext = _reach_config(_load_json(manifest, args.config_ext, "extended config"), "extended config")
    manifest["seed"] = cfg.seed
    report = coverage_compare(sys_, x0, cfg, cfg_ext)
    _write_json(manifest, args.out, report.to_json())
    print(
        f"{report.verdict}: coverage {report.coverage_original:.4f} vs "
        f"{report.coverage_extended_projected:.4f} projected (threshold {report.threshold})"
    )
    return 0 if report.consistent else 2


def _cmd_realize(args, manifest) -> int:
    sys_ = _read_system(args, manifest)
    record = extend(sys_)
    start, plan = _plan_from_json(_load_json(manifest, args.plan, "plan"))
    dim = record.extended.n
    if start.shape != (dim,):
        raise _InputError(f"plan start needs {dim} entries (extended state)")
    gains = _gain_sweep(args.gain_sweep)

    lines = ["gain,error"]
    if not plan.segments:
        lines.append(f"{gains[0]:.17g},0")
        _write_text(manifest, args.out, "\n".join(lines) + "\n")
        print("empty plan, nothing to realize (error 0)")
        return 0

    ideal = ideal_plan_endpoint(record, plan, start, step=args.step)
    last = None
    for gain in gains:
        ctrl = realize_plan(record, plan, gain)
        traj = integrate(record.extended, start, ctrl, step=args.step)
        err = float(np.linalg.norm(traj.endpoint - ideal))
        lines.append(f"{gain:.17g},{err:.17g}")
        last = err
    _write_text(manifest, args.out, "\n".join(lines) + "\n")
    print(f"{len(gains)} gains, final error {last:.3e}")
    return 0


# --- wiring ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ctrlkit", description="Control-system toolkit: parse, transform, certify, simulate, explore.")
    parser.add_argument("--version", action="version", version=f"ctrlkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("file", help="system definition file")
        p.add_argument("--manifest", default=None, help="override manifest path")
        p.set_defaults(func=fn)
        return p

    add("parse", _cmd_parse, "validate a system file and echo its normalized form")

    p = add("extend", _cmd_extend, "append one integrator per input channel")
    p.add_argument("--out", required=True, help="output system file")
    p.add_argument("--certificate", default=None, help="extension record JSON path")

    p = add("reduce", _cmd_reduce, "strip pure-integrator states, with a replayable certificate")
    p.add_argument("--out", required=True, help="output system file")
    p.add_argument("--certificate", default=None, help="certificate JSON path")

    p = add("check", _cmd_check, "controllability / accessibility certificates")
    p.add_argument("--method", choices=("kalman", "larc"), required=True)
    p.add_argument("--point", default=None, help="comma-separated evaluation point (larc)")
    p.add_argument("--depth", type=int, default=4, help="bracket depth budget (larc)")
    p.add_argument("--out", default=None, help="report JSON path")

    p = add("simulate", _cmd_simulate, "integrate under a piecewise-constant control")
    p.add_argument("--x0", required=True, help="comma-separated initial state")
    p.add_argument("--control", required=True, help="control JSON file")
    p.add_argument("--step", type=float, default=DEFAULT_STEP)
    p.add_argument("--out", required=True, help="trajectory CSV path")

    p = add("reach", _cmd_reach, "Monte-Carlo reachable-window coverage")
    p.add_argument("--x0", required=True)
    p.add_argument("--config", required=True, help="sampling config JSON")
    p.add_argument("--out", required=True, help="visited-cell CSV path")
    p.add_argument("--summary", default=None, help="summary JSON path")

    p = add("compare", _cmd_compare, "coverage of a system vs its projected extension")
    p.add_argument("--x0", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--config-ext", dest="config_ext", required=True)
    p.add_argument("--out", required=True, help="report JSON path")

    p = add("realize", _cmd_realize, "realize a jump/drift plan on the extension, sweeping gains")
    p.add_argument("--plan", required=True, help="plan JSON file")
    p.add_argument("--gain-sweep", dest="gain_sweep", default="10:80:4", help="lo:hi:steps, geometric")
    p.add_argument("--step", type=float, default=DEFAULT_STEP)
    p.add_argument("--out", required=True, help="convergence table CSV path")
    return parser


def _manifest_path(args, manifest) -> str:
    if getattr(args, "manifest", None):
        return args.manifest
    if manifest["outputs"]:
        return manifest["outputs"][0] + ".manifest.json"
    return args.file + ".manifest.json"


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    started = time.monotonic()
    manifest = {
        "tool": "ctrlkit",
        "version": __version__,
        "command": args.command,
        "argv": list(sys.argv[1:] if argv is None else argv),
        "inputs": {},
        "outputs": [],
        "seed": None,
    }
    try:
        code = args.func(args, manifest)
    except BlowUpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = 3
    except (DslError, _InputError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = 1
    manifest["exit_code"] = code
    manifest["elapsed_seconds"] = time.monotonic() - started
    manifest["timestamp_utc"] = datetime.now(timezone.utc).isoformat()
    try:
        with open(_manifest_path(args, manifest), "w") as fh:
            json.dump(manifest, fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        print(f"warning: could not write manifest: {exc}", file=sys.stderr)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
