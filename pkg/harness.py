#!/usr/bin/env python3
"""
Command-line front end of the OAM ISAC simulator.

    isac run --scenario scenarios/full_pipeline.json --out results [--experiment ID] [--seed N]
    isac validate --scenario scenarios/full_pipeline.json

Scenario files are JSON with the sections system, geometry, scene, waveform,
sensing, link, optimizer and experiments. Anything omitted takes its default
value; angles are given in degrees. Results land in
<out>/<experiment>/<artifact>.csv|json next to a manifest of content hashes.
"""

import os

# BLAS pools must be sized before numpy loads
_THREADS = os.environ.get("ISAC_THREADS", "").strip()
if _THREADS:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _THREADS)

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import sys
import typing
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import scipy

from emusic import unambiguous_range
from experiments import (
    EXPERIMENTS,
    ExperimentSettings,
    LinkBudget,
    ResultBundle,
    Scenario,
    SensingSettings,
    WaveformSettings,
    run_experiment,
)
from geometry_channel import Misalignment, ScatterPoint, ScatterScene, SystemConfig, UcaGeometry, ring_centers
from memory_monitor import ResourceMonitor
from numerics import IsacError
from optimizer import AoConfig
from waveform import partition_capacity

logger = logging.getLogger(__name__)

SECTIONS = ("system", "geometry", "scene", "waveform", "sensing", "link", "optimizer", "experiments")
OPTIMIZER_FIELDS = ("tol", "max_iter", "monotone_tol", "optimize_rx", "optimize_tx", "optimize_power",
                    "use_jamming_csi", "index_term")
MAX_SEED = 2 ** 64


class ScenarioError(IsacError):
    """Scenario file that cannot be parsed or fails validation; carries the JSON field path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


def _join(path: str, key) -> str:
    if isinstance(key, int):
        return f"{path}[{key}]"
    return f"{path}.{key}" if path else str(key)


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(path, f"expected a number, got {value!r}")
    if not math.isfinite(value):
        raise ScenarioError(path, "must be finite")
    return float(value)


def _integer(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScenarioError(path, f"expected an integer, got {value!r}")
    return value


def _flag(value, path: str) -> bool:
    if not isinstance(value, bool):
        raise ScenarioError(path, f"expected true or false, got {value!r}")
    return value


def _text(value, path: str):
    # index bits and keys may also be given as plain integers
    if isinstance(value, bool) or not isinstance(value, (str, int)):
        raise ScenarioError(path, f"expected a string, got {value!r}")
    return value


def _sequence(value, path: str, item) -> tuple:
    if not isinstance(value, list):
        raise ScenarioError(path, f"expected a list, got {value!r}")
    return tuple(item(v, _join(path, i)) for i, v in enumerate(value))


def _converter(annotation):
    if annotation is bool:
        return _flag
    if annotation is int:
        return _integer
    if annotation is float:
        return _number
    if annotation is str:
        return _text
    if typing.get_origin(annotation) is typing.Union:
        inner = [a for a in typing.get_args(annotation) if a is not type(None)]
        if len(inner) == 1:
            convert = _converter(inner[0])
            return lambda value, path: None if value is None else convert(value, path)
    if typing.get_origin(annotation) is tuple:
        item = _converter(typing.get_args(annotation)[0])
        return lambda value, path: _sequence(value, path, item)
    raise TypeError(f"No scenario converter for {annotation!r}")


def _section(raw: Dict[str, Any], path: str) -> Dict[str, Any]:
    value = raw.get(path.rsplit(".", 1)[-1], {})
    if not isinstance(value, dict):
        raise ScenarioError(path, f"expected an object, got {value!r}")
    return value


def _warn_unknown(raw: Dict[str, Any], known, path: str):
    for key in raw:
        if key not in known:
            logger.warning(f"⚠️  Ignoring unknown field '{_join(path, key)}'")


def _from_fields(cls, raw: Dict[str, Any], path: str, only=None, **extra):
    """Build a dataclass from the JSON keys matching its fields."""
    hints = typing.get_type_hints(cls)
    names = [f.name for f in dataclasses.fields(cls) if only is None or f.name in only]
    _warn_unknown(raw, names, path)
    kwargs = {name: _converter(hints[name])(raw[name], _join(path, name)) for name in names if name in raw}
    kwargs.update(extra)
    try:
        return cls(**kwargs)
    except IsacError as e:
        raise ScenarioError(path, str(e)) from e


def _misalignment(raw, path: str) -> Misalignment:
    if not isinstance(raw, dict):
        raise ScenarioError(path, f"expected an object, got {raw!r}")
    _warn_unknown(raw, ("yaw_deg", "pitch_deg", "offset"), path)
    offset = _sequence(raw.get("offset", [0.0, 0.0, 0.0]), _join(path, "offset"), _number)
    if len(offset) != 3:
        raise ScenarioError(_join(path, "offset"), "expected three coordinates")
    return Misalignment(
        yaw=math.radians(_number(raw.get("yaw_deg", 0.0), _join(path, "yaw_deg"))),
        pitch=math.radians(_number(raw.get("pitch_deg", 0.0), _join(path, "pitch_deg"))),
        offset=offset,
    )


def _geometry(raw: Dict[str, Any]) -> UcaGeometry:
    path = "geometry"
    known = ("r_t", "r_r", "user_radii", "user_distance", "user_polar_deg", "user_azimuths_deg",
             "user_centers", "misalignment")
    _warn_unknown(raw, known, path)
    kwargs = {}
    for name in ("r_t", "r_r"):
        if name in raw:
            kwargs[name] = _number(raw[name], _join(path, name))
    if "user_radii" in raw:
        kwargs["user_radii"] = _sequence(raw["user_radii"], _join(path, "user_radii"), _number)

    if "user_centers" in raw:
        centers = _sequence(raw["user_centers"], _join(path, "user_centers"),
                            lambda v, p: _sequence(v, p, _number))
        if any(len(c) != 3 for c in centers):
            raise ScenarioError(_join(path, "user_centers"), "every centre needs three coordinates")
        kwargs["user_centers"] = centers
    elif any(k in raw for k in ("user_distance", "user_polar_deg", "user_azimuths_deg")):
        distance = _number(raw.get("user_distance", 2.5), _join(path, "user_distance"))
        polar = _number(raw.get("user_polar_deg", 45.0), _join(path, "user_polar_deg"))
        azimuths = _sequence(raw.get("user_azimuths_deg", [60.0, 200.0]), _join(path, "user_azimuths_deg"), _number)
        kwargs["user_centers"] = ring_centers(distance, math.radians(polar), [math.radians(a) for a in azimuths])

    if "misalignment" in raw:
        kwargs["misalignment"] = _sequence(raw["misalignment"], _join(path, "misalignment"), _misalignment)
    K = len(kwargs.get("user_radii", kwargs.get("user_centers", ())))
    if K and K != 2 and "misalignment" not in kwargs:
        kwargs["misalignment"] = tuple(Misalignment() for _ in range(K))
    if "misalignment" in kwargs:
        kwargs["user_misalignment"] = kwargs.pop("misalignment")
    try:
        return UcaGeometry(**kwargs)
    except IsacError as e:
        raise ScenarioError(path, str(e)) from e


def _cross_section(value, path: str) -> complex:
    if isinstance(value, list):
        parts = _sequence(value, path, _number)
        if len(parts) != 2:
            raise ScenarioError(path, "complex cross sections are [real, imag]")
        return complex(parts[0], parts[1])
    return complex(_number(value, path))


def _point(raw, path: str) -> ScatterPoint:
    if not isinstance(raw, dict):
        raise ScenarioError(path, f"expected an object, got {raw!r}")
    _warn_unknown(raw, ("R", "theta_deg", "phi_deg", "chi"), path)
    for key in ("R", "theta_deg", "phi_deg"):
        if key not in raw:
            raise ScenarioError(_join(path, key), "required")
    return ScatterPoint(
        R=_number(raw["R"], _join(path, "R")),
        theta=math.radians(_number(raw["theta_deg"], _join(path, "theta_deg"))),
        phi=math.radians(_number(raw["phi_deg"], _join(path, "phi_deg"))),
        chi=_cross_section(raw.get("chi", 1.0), _join(path, "chi")),
    )


def _scene(raw: Dict[str, Any], default: ScatterScene) -> ScatterScene:
    path = "scene"
    _warn_unknown(raw, ("points", "v", "jammer_index", "N_J", "jammer_radius", "rcs_fluctuation"), path)
    points = default.points
    if "points" in raw:
        points = _sequence(raw["points"], _join(path, "points"), _point)
    try:
        return ScatterScene(
            points=points,
            v=_number(raw.get("v", default.v), _join(path, "v")),
            jammer_index=_integer(raw.get("jammer_index", default.jammer_index), _join(path, "jammer_index")),
            N_J=_integer(raw.get("N_J", default.N_J), _join(path, "N_J")),
            jammer_radius=_number(raw.get("jammer_radius", default.jammer_radius), _join(path, "jammer_radius")),
            rcs_fluctuation=_flag(raw.get("rcs_fluctuation", default.rcs_fluctuation), _join(path, "rcs_fluctuation")),
        )
    except IsacError as e:
        raise ScenarioError(path, str(e)) from e


def _system(raw: Dict[str, Any]) -> SystemConfig:
    extra = {}
    if "N_f" in raw and "N_f_prime" not in raw:
        extra["N_f_prime"] = max(_integer(raw["N_f"], "system.N_f"), SystemConfig.N_f_prime)
    return _from_fields(SystemConfig, raw, "system", **extra)


def _validate(scn: Scenario):
    """Cross-section checks the individual constructors cannot see."""
    cfg = scn.system
    try:
        scn.scene.validate_for(cfg, scn.geometry)
    except IsacError as e:
        raise ScenarioError("scene", str(e)) from e
    try:
        partition_capacity(cfg.N_t, scn.waveform.sizes)
        scn.allocation()
    except IsacError as e:
        raise ScenarioError("waveform", str(e)) from e

    s = scn.sensing
    if not 0 < s.rho <= 1:
        raise ScenarioError("sensing.rho", f"must lie in (0, 1], got {s.rho}")
    if not s.nu > 0:
        raise ScenarioError("sensing.nu", f"must be positive, got {s.nu}")
    if not 1 <= s.G_hat < cfg.N_t:
        raise ScenarioError("sensing.G_hat", f"must lie in 1..{cfg.N_t - 1}, got {s.G_hat}")
    if s.frames < 1:
        raise ScenarioError("sensing.frames", "need at least one frame")
    if s.frames == 1:
        logger.warning("⚠️  sensing.frames = 1: velocity will not be estimated")
    if s.R_max >= unambiguous_range(cfg):
        raise ScenarioError("sensing.R_max", f"beyond the unambiguous range {unambiguous_range(cfg):.1f} m")
    if s.R_min <= 0 or s.R_max <= s.R_min:
        raise ScenarioError("sensing", "need 0 < R_min < R_max")
    for name in ("theta_step_deg", "phi_step_deg", "R_step"):
        if getattr(s, name) <= 0:
            raise ScenarioError(f"sensing.{name}", "must be positive")
    try:
        v_axis = s.velocity_axis(cfg)
    except IsacError as e:
        raise ScenarioError("sensing", str(e)) from e
    if max(abs(v_axis.start), abs(v_axis.stop)) >= cfg.velocity_limit():
        raise ScenarioError("sensing.v_max", f"velocity search must stay inside ±{cfg.velocity_limit():.2f} m/s, "
                                             "where the frame-rate Doppler phase wraps")
    if s.n_points is not None and not 1 <= s.n_points < cfg.N_t:
        raise ScenarioError("sensing.n_points", f"must lie in 1..{cfg.N_t - 1}, got {s.n_points}")
    if scn.experiments.resolution_frames < 1:
        raise ScenarioError("experiments.resolution_frames", "need at least one frame")
    if not scn.experiments.N_t_values:
        raise ScenarioError("experiments.N_t_values", "need at least one array size")
    for n in scn.experiments.N_t_values:
        if n < 2 or n % 2:
            raise ScenarioError("experiments.N_t_values", f"array sizes must be even, got {n}")


def parse_scenario(raw: Dict[str, Any]) -> Scenario:
    """Validated Scenario from a decoded JSON object; omitted fields take their defaults."""
    if not isinstance(raw, dict):
        raise ScenarioError("", "scenario must be a JSON object")
    _warn_unknown(raw, SECTIONS + ("experiment", "seed"), "")

    defaults = Scenario()
    system = _system(_section(raw, "system"))
    geometry = _geometry(_section(raw, "geometry"))
    scene = _scene(_section(raw, "scene"), defaults.scene)
    waveform = _from_fields(WaveformSettings, _section(raw, "waveform"), "waveform")
    sensing = _from_fields(SensingSettings, _section(raw, "sensing"), "sensing")
    link = _from_fields(LinkBudget, _section(raw, "link"), "link")
    optimizer = _from_fields(AoConfig, _section(raw, "optimizer"), "optimizer", only=OPTIMIZER_FIELDS)
    experiments = _from_fields(ExperimentSettings, _section(raw, "experiments"), "experiments")

    experiment = raw.get("experiment", defaults.experiment)
    if experiment not in EXPERIMENTS:
        raise ScenarioError("experiment", f"unknown experiment {experiment!r}, expected one of {EXPERIMENTS}")
    seed = _integer(raw.get("seed", defaults.seed), "seed")
    if not 0 <= seed < MAX_SEED:
        raise ScenarioError("seed", "must be an unsigned 64-bit integer")

    try:
        scn = Scenario(system=system, geometry=geometry, scene=scene, waveform=waveform, sensing=sensing,
                       link=link, optimizer=optimizer, experiments=experiments,
                       experiment=experiment, seed=seed)
    except IsacError as e:
        raise ScenarioError("waveform.sizes", str(e)) from e
    _validate(scn)
    return scn


def load_scenario(path) -> Scenario:
    """Read, parse and validate a scenario file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ScenarioError("", f"cannot read {path}: {e}") from e
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError("", f"{path} line {e.lineno}, column {e.colno}: {e.msg}") from e
    scn = parse_scenario(raw)
    logger.info(f"✅ Loaded scenario {path} (experiment '{scn.experiment}', seed {scn.seed})")
    return scn


def _plain(value):
    """JSON-safe copy: numpy types unwrapped, non-finite floats as null."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, complex):
        return [value.real, value.imag]
    return value


def _json_text(data) -> str:
    return json.dumps(_plain(data), sort_keys=True, indent=2, allow_nan=False, ensure_ascii=False) + "\n"


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".12g")
    return str(value)


def _csv_text(header, rows) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow([_cell(h) for h in header])
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buffer.getvalue()


def scenario_digest(scn: Scenario) -> str:
    return hashlib.sha256(repr(scn).encode("utf-8")).hexdigest()


def emit(bundle: ResultBundle, out_dir) -> Dict[str, Any]:
    """Write a bundle as {experiment}/{artifact}.csv|json plus manifest.json; returns the manifest."""
    root = Path(out_dir) / bundle.experiment
    root.mkdir(parents=True, exist_ok=True)
    files: List[Dict[str, Any]] = []

    def write(name: str, text: str, numeric: bool):
        data = text.encode("utf-8")
        (root / name).write_bytes(data)
        files.append({"path": f"{bundle.experiment}/{name}", "sha256": hashlib.sha256(data).hexdigest(),
                      "numeric": numeric})

    for artifact in bundle.artifacts:
        if artifact.kind == "csv":
            write(f"{artifact.name}.csv", _csv_text(*artifact.payload), True)
        else:
            write(f"{artifact.name}.json", _json_text(artifact.payload), True)
    write("metadata.json", _json_text(bundle.metadata), True)
    if bundle.resources:
        write("resources.json", _json_text(bundle.resources), False)

    manifest = {"experiment": bundle.experiment, "files": files}
    (root / "manifest.json").write_text(_json_text(manifest), encoding="utf-8")
    logger.info(f"💾 Wrote {len(files)} files to {root}")
    return manifest


def run(scn: Scenario, out_dir, experiment: Optional[str] = None) -> Dict[str, Any]:
    """Run one experiment, stamp its metadata and emit it."""
    with ResourceMonitor() as monitor:
        bundle = run_experiment(scn, experiment)
    bundle.metadata.update({
        "scenario_sha256": scenario_digest(scn),
        "versions": {"numpy": np.__version__, "scipy": scipy.__version__},
    })
    bundle.resources = monitor.usage.as_dict()
    return emit(bundle, out_dir)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="isac", description="OAM ISAC anti-jamming simulator")
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    parser.add_argument("--quiet", "-q", action="store_true", help="Only warnings and errors")
    commands = parser.add_subparsers(dest="command", required=True)

    run_cmd = commands.add_parser("run", help="Run an experiment and write its results")
    run_cmd.add_argument("--scenario", required=True, help="Scenario JSON file")
    run_cmd.add_argument("--out", required=True, help="Output directory")
    run_cmd.add_argument("--experiment", choices=EXPERIMENTS, help="Override the scenario's experiment")
    run_cmd.add_argument("--seed", type=int, help="Override the scenario's seed (unsigned 64-bit)")

    validate_cmd = commands.add_parser("validate", help="Check a scenario file without running it")
    validate_cmd.add_argument("--scenario", required=True, help="Scenario JSON file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(message)s")

    try:
        scn = load_scenario(args.scenario)
        if args.command == "run" and args.seed is not None:
            if not 0 <= args.seed < MAX_SEED:
                raise ScenarioError("seed", "must be an unsigned 64-bit integer")
            scn = scn.with_overrides(seed=args.seed)
    except ScenarioError as e:
        logger.error(f"❌ Invalid scenario: {e}")
        return 2

    if args.command == "validate":
        logger.info("✅ Scenario is valid")
        return 0

    experiment = args.experiment or scn.experiment
    try:
        run(scn, args.out, experiment)
    except (IsacError, OSError) as e:
        logger.error(f"❌ Experiment '{experiment}' failed: {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
