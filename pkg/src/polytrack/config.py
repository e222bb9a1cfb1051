"""TOML run configuration: loading, validation, normalized emission.

The file has six sections (vehicle, model, mpc, switched, scenario, output)
plus optional named scenario variants under [scenarios.<name>] that inherit
from [scenario].  Validation errors carry the file line of the offending
key where one exists.  Emission writes the fully-normalized config (all
defaults materialized, floats at 17 significant digits) so that
load -> emit is idempotent.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace

import numpy as np

try:
    import tomllib as _toml
except ModuleNotFoundError:  # Python < 3.11
    import tomli as _toml

from .controllers import FrozenLqrController, NominalMpcController
from .mpc import DEFAULT_LAMBDA_GRID, RobustMpcConfig, RobustMpcController
from .paths import ArcSpec, DoubleLaneChangeSpec, SineSpec, StraightSpec
from .sim import (ConstantSpeed, GustDisturbance, NoDisturbance,
                  RandomDisturbance, RampSpeed, Scenario, SineSpeed)
from .switched import (SpeedRegion, SwitchedLpvController, SwitchedSynthConfig,
                       validate_regions)
from .vehicle import VehicleParams, build_polytope

CONTROLLER_NAMES = ("robust-mpc", "switched-lpv", "lqr", "nominal-mpc")


class ConfigError(ValueError):
    """Invalid configuration; message carries file/line anchors when known."""


@dataclass
class RunConfig:
    params: VehicleParams
    v_range: tuple
    Ts: float
    uncertainty: bool
    wind_force: float
    mpc: RobustMpcConfig
    switched: SwitchedSynthConfig
    regions: tuple
    arbitrary_switching: bool
    scenario: Scenario
    scenarios: dict
    output_dir: str
    emit_csv: bool
    lqr_design_speed: float = 15.0

    def scenario_named(self, name):
        if name in self.scenarios:
            return self.scenarios[name]
        raise ConfigError(f"unknown scenario {name!r}; available: "
                          + ", ".join(sorted(self.scenarios)))


_DEFAULTS = {
    "vehicle": {"m": 1500.0, "Iz": 2500.0, "lf": 1.2, "lr": 1.4,
                "Cf": 80000.0, "Cr": 80000.0, "dCf": 0.2, "dCr": 0.2,
                "delta_max": 0.5, "delta_rate_max": 1.0},
    "model": {"v_min": 5.0, "v_max": 25.0, "Ts": 0.01, "uncertainty": True,
              "wind_force": 1500.0},
    "mpc": {"S": [1.0, 0.1, 1.0, 0.1], "R": 10.0, "u_max": 0.5, "w_max": 1.0,
            "lambda_grid": list(DEFAULT_LAMBDA_GRID), "economy": False,
            "rescan_period": 25, "lqr_design_speed": 15.0},
    "switched": {"rho": 0.985, "hysteresis": 1.0,
                 "regions": [[5.0, 12.0], [11.0, 19.0], [18.0, 25.0]],
                 "arbitrary": False},
    "scenario": {"name": "default", "path": "straight", "duration": 20.0,
                 "radius": 500.0, "offset": 3.5, "length": 30.0, "hold": 25.0,
                 "lead_in": 40.0, "amplitude": 2.0, "wavelength": 100.0,
                 "speed": "constant", "v": 15.0, "v0": 5.0, "v1": 25.0,
                 "ramp_duration": 20.0, "v_mean": 15.0, "v_amplitude": 5.0,
                 "v_period": 10.0, "disturbance": "none", "gust_start": 2.0,
                 "gust_duration": 1.0, "gust_fraction": 0.8,
                 "random_fraction": 0.5, "cf_scale": 1.0, "cr_scale": 1.0,
                 "initial_offset": 0.0, "initial_heading_error": 0.0,
                 "mpc_w_max": -1.0},
    "output": {"directory": "out", "emit_csv": True},
}


class _LineIndex:
    """Best-effort mapping from (section, key) to a 1-based file line."""

    def __init__(self, text, path):
        self.path = path
        self.lines = {}
        section = ""
        for lineno, line in enumerate(text.splitlines(), start=1):
            stripped = line.strip()
            m = re.match(r"\[([^\]]+)\]", stripped)
            if m:
                section = m.group(1)
                self.lines[(section, None)] = lineno
                continue
            m = re.match(r"([A-Za-z_][\w-]*)\s*=", stripped)
            if m:
                self.lines[(section, m.group(1))] = lineno

    def anchor(self, section, key=None):
        line = self.lines.get((section, key)) or self.lines.get((section, None))
        if line is None:
            return f"{self.path}"
        return f"{self.path}:{line}"


def _merge(section, table, extra_allowed=()):
    """Fill defaults and reject unknown keys."""
    defaults = _DEFAULTS[section]
    merged = dict(defaults)
    for key, val in table.items():
        if key not in defaults and key not in extra_allowed:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        merged[key] = val
    return merged


def _path_length_needed(scn_table, duration):
    v_top = {
        "constant": scn_table["v"],
        "ramp": max(scn_table["v0"], scn_table["v1"]),
        "sine": scn_table["v_mean"] + abs(scn_table["v_amplitude"]),
    }[scn_table["speed"]]
    return duration * v_top * 1.05 + 60.0


def _build_scenario(table, name):
    duration = float(table["duration"])
    total = _path_length_needed(table, duration)
    kind = table["path"]
    if kind == "straight":
        path = StraightSpec(length=total)
    elif kind == "arc":
        path = ArcSpec(radius=float(table["radius"]), length=total)
    elif kind == "double-lane-change":
        needed = table["lead_in"] + 2.0 * table["length"] + table["hold"] + 50.0
        path = DoubleLaneChangeSpec(
            offset=float(table["offset"]), length=float(table["length"]),
            hold=float(table["hold"]), lead_in=float(table["lead_in"]),
            total_length=max(total, needed))
    elif kind == "sine":
        path = SineSpec(amplitude=float(table["amplitude"]),
                        wavelength=float(table["wavelength"]), length=total)
    else:
        raise ConfigError(f"unknown path type {kind!r}")

    speed_kind = table["speed"]
    if speed_kind == "constant":
        speed = ConstantSpeed(float(table["v"]))
    elif speed_kind == "ramp":
        speed = RampSpeed(float(table["v0"]), float(table["v1"]),
                          float(table["ramp_duration"]))
    elif speed_kind == "sine":
        speed = SineSpeed(float(table["v_mean"]), float(table["v_amplitude"]),
                          float(table["v_period"]))
    else:
        raise ConfigError(f"unknown speed profile {speed_kind!r}")

    dist_kind = table["disturbance"]
    if dist_kind == "none":
        dist = NoDisturbance()
    elif dist_kind == "gust":
        dist = GustDisturbance(float(table["gust_start"]),
                               float(table["gust_duration"]),
                               float(table["gust_fraction"]))
    elif dist_kind == "random":
        dist = RandomDisturbance(float(table["random_fraction"]))
    else:
        raise ConfigError(f"unknown disturbance type {dist_kind!r}")

    return Scenario(path=path, speed=speed, disturbance=dist,
                    cf_scale=float(table["cf_scale"]),
                    cr_scale=float(table["cr_scale"]),
                    duration=duration,
                    initial_offset=float(table["initial_offset"]),
                    initial_heading_error=float(table["initial_heading_error"]),
                    name=name, mpc_w_max=float(table["mpc_w_max"]))


def load_config(path):
    """Parse and validate a run configuration file."""
    with open(path, "rb") as fh:
        raw_bytes = fh.read()
    index = _LineIndex(raw_bytes.decode("utf-8", errors="replace"), path)
    try:
        doc = _toml.loads(raw_bytes.decode("utf-8"))
    except _toml.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return _config_from_doc(doc, index)


def _config_from_doc(doc, index):
    known = {"vehicle", "model", "mpc", "switched", "scenario", "scenarios",
             "output"}
    for section in doc:
        if section not in known:
            raise ConfigError(f"{index.anchor(section)}: unknown section [{section}]")

    try:
        veh = _merge("vehicle", doc.get("vehicle", {}))
        model = _merge("model", doc.get("model", {}))
        mpc_t = _merge("mpc", doc.get("mpc", {}))
        sw = _merge("switched", doc.get("switched", {}))
        scn = _merge("scenario", doc.get("scenario", {}))
        out = _merge("output", doc.get("output", {}))
    except ConfigError as exc:
        raise ConfigError(f"{index.path}: {exc}") from exc

    try:
        params = VehicleParams(**{k: float(v) for k, v in veh.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{index.anchor('vehicle')}: {exc}") from exc

    v_range = (float(model["v_min"]), float(model["v_max"]))
    if not 0.0 < v_range[0] < v_range[1]:
        raise ConfigError(f"{index.anchor('model', 'v_min')}: "
                          f"need 0 < v_min < v_max, got {v_range}")
    Ts = float(model["Ts"])
    if Ts <= 0.0:
        raise ConfigError(f"{index.anchor('model', 'Ts')}: Ts must be positive")

    S_diag = [float(v) for v in mpc_t["S"]]
    if len(S_diag) != 4:
        raise ConfigError(f"{index.anchor('mpc', 'S')}: S must list 4 diagonal "
                          f"weights, got {len(S_diag)}")
    try:
        mpc_cfg = RobustMpcConfig(
            S=np.diag(S_diag), R=float(mpc_t["R"]), u_max=float(mpc_t["u_max"]),
            w_max=float(mpc_t["w_max"]),
            lambda_grid=tuple(float(v) for v in mpc_t["lambda_grid"]),
            economy=bool(mpc_t["economy"]),
            rescan_period=int(mpc_t["rescan_period"]))
    except ValueError as exc:
        raise ConfigError(f"{index.anchor('mpc')}: {exc}") from exc
    if mpc_cfg.u_max > params.delta_max + 1e-12:
        raise ConfigError(f"{index.anchor('mpc', 'u_max')}: u_max "
                          f"{mpc_cfg.u_max} exceeds vehicle delta_max "
                          f"{params.delta_max}")

    hyst = float(sw["hysteresis"])
    try:
        regions = [SpeedRegion(index=i, v_lo=float(lo), v_hi=float(hi),
                               hysteresis=hyst)
                   for i, (lo, hi) in enumerate(sw["regions"])]
        if not regions:
            raise ValueError("at least one region required")
        regions = validate_regions(regions, v_range, hyst)
        sw_cfg = SwitchedSynthConfig(rho=float(sw["rho"]),
                                     u_max=mpc_cfg.u_max, Ts=Ts,
                                     uncertainty=bool(model["uncertainty"]))
    except ValueError as exc:
        raise ConfigError(f"{index.anchor('switched', 'regions')}: {exc}") from exc

    def checked_scenario(table, name, anchor_section):
        scenario = _build_scenario(table, name)
        try:
            scenario.validate(params, v_range)
        except ValueError as exc:
            raise ConfigError(f"{index.anchor(anchor_section)}: {exc}") from exc
        return scenario

    scenario = checked_scenario(scn, scn["name"], "scenario")
    scenarios = {scn["name"]: scenario}
    for name, sub in doc.get("scenarios", {}).items():
        if not isinstance(sub, dict):
            raise ConfigError(f"{index.anchor('scenarios')}: [scenarios.{name}] "
                              "must be a table")
        merged = dict(scn)
        for key, val in sub.items():
            if key not in _DEFAULTS["scenario"]:
                raise ConfigError(f"{index.anchor(f'scenarios.{name}', key)}: "
                                  f"unknown key {key!r}")
            merged[key] = val
        merged["name"] = name
        scenarios[name] = checked_scenario(merged, name, f"scenarios.{name}")

    return RunConfig(
        params=params, v_range=v_range, Ts=Ts,
        uncertainty=bool(model["uncertainty"]),
        wind_force=float(model["wind_force"]),
        mpc=mpc_cfg, switched=sw_cfg, regions=tuple(regions),
        arbitrary_switching=bool(sw["arbitrary"]),
        scenario=scenario, scenarios=scenarios,
        output_dir=str(out["directory"]), emit_csv=bool(out["emit_csv"]),
        lqr_design_speed=float(mpc_t["lqr_design_speed"]),
    )


def build_model(cfg):
    return build_polytope(cfg.params, cfg.v_range, cfg.Ts,
                          uncertainty_enabled=cfg.uncertainty,
                          wind_force=cfg.wind_force)


def make_controller(cfg, name, schedule=None, scenario=None):
    """Instantiate a lateral controller by its CLI name.

    A scenario may pin the MPC disturbance bound for its episodes
    (mpc_w_max >= 0); scenarios without a disturbance channel typically set
    it to zero, which drops the quadratic-boundedness constraints.
    """
    mpc_cfg = cfg.mpc
    if scenario is not None and getattr(scenario, "mpc_w_max", -1.0) >= 0.0:
        mpc_cfg = replace(mpc_cfg, w_max=scenario.mpc_w_max)
    if name == "robust-mpc":
        return RobustMpcController(build_model(cfg), mpc_cfg)
    if name == "nominal-mpc":
        return NominalMpcController(cfg.params, cfg.Ts, mpc_cfg,
                                    v_range=cfg.v_range)
    if name == "lqr":
        return FrozenLqrController(cfg.params, cfg.Ts, cfg.mpc,
                                   v_design=cfg.lqr_design_speed)
    if name == "switched-lpv":
        if schedule is None:
            raise ConfigError("switched-lpv controller requires a synthesized "
                              "gain schedule (run `polytrack synth` first)")
        return SwitchedLpvController(schedule)
    raise ConfigError(f"unknown controller {name!r}; expected one of "
                      + ", ".join(CONTROLLER_NAMES))


# --- normalized emission ----------------------------------------------------

def _fmt_value(val):
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, (int, np.integer)):
        return str(int(val))
    if isinstance(val, (float, np.floating)):
        return f"{float(val):.17g}"
    if isinstance(val, str):
        return '"' + val.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(val, (list, tuple)):
        return "[" + ", ".join(_fmt_value(v) for v in val) + "]"
    raise ConfigError(f"cannot emit value of type {type(val).__name__}")


def _scenario_table(s):
    path_map = {StraightSpec: "straight", ArcSpec: "arc",
                DoubleLaneChangeSpec: "double-lane-change", SineSpec: "sine"}
    t = dict(_DEFAULTS["scenario"])
    t["name"] = s.name
    t["path"] = path_map[type(s.path)]
    t["duration"] = s.duration
    if isinstance(s.path, ArcSpec):
        t["radius"] = s.path.radius
    elif isinstance(s.path, DoubleLaneChangeSpec):
        t.update(offset=s.path.offset, length=s.path.length, hold=s.path.hold,
                 lead_in=s.path.lead_in)
    elif isinstance(s.path, SineSpec):
        t.update(amplitude=s.path.amplitude, wavelength=s.path.wavelength)
    if isinstance(s.speed, ConstantSpeed):
        t.update(speed="constant", v=s.speed.v)
    elif isinstance(s.speed, RampSpeed):
        t.update(speed="ramp", v0=s.speed.v0, v1=s.speed.v1,
                 ramp_duration=s.speed.duration)
    else:
        t.update(speed="sine", v_mean=s.speed.v_mean,
                 v_amplitude=s.speed.amplitude, v_period=s.speed.period)
    if isinstance(s.disturbance, GustDisturbance):
        t.update(disturbance="gust", gust_start=s.disturbance.start,
                 gust_duration=s.disturbance.duration,
                 gust_fraction=s.disturbance.fraction)
    elif isinstance(s.disturbance, RandomDisturbance):
        t.update(disturbance="random", random_fraction=s.disturbance.fraction)
    else:
        t["disturbance"] = "none"
    t.update(cf_scale=s.cf_scale, cr_scale=s.cr_scale,
             initial_offset=s.initial_offset,
             initial_heading_error=s.initial_heading_error,
             mpc_w_max=s.mpc_w_max)
    return t


def emit_config(cfg):
    """Render the normalized configuration as TOML text."""
    p = cfg.params
    sections = []
    sections.append(("vehicle", {
        "m": p.m, "Iz": p.Iz, "lf": p.lf, "lr": p.lr, "Cf": p.Cf, "Cr": p.Cr,
        "dCf": p.dCf, "dCr": p.dCr, "delta_max": p.delta_max,
        "delta_rate_max": p.delta_rate_max}))
    sections.append(("model", {
        "v_min": cfg.v_range[0], "v_max": cfg.v_range[1], "Ts": cfg.Ts,
        "uncertainty": cfg.uncertainty, "wind_force": cfg.wind_force}))
    sections.append(("mpc", {
        "S": [float(v) for v in np.diag(cfg.mpc.S)], "R": cfg.mpc.R,
        "u_max": cfg.mpc.u_max, "w_max": cfg.mpc.w_max,
        "lambda_grid": list(cfg.mpc.lambda_grid), "economy": cfg.mpc.economy,
        "rescan_period": cfg.mpc.rescan_period,
        "lqr_design_speed": cfg.lqr_design_speed}))
    sections.append(("switched", {
        "rho": cfg.switched.rho,
        "hysteresis": cfg.regions[0].hysteresis if cfg.regions else 1.0,
        "regions": [[r.v_lo, r.v_hi] for r in cfg.regions],
        "arbitrary": cfg.arbitrary_switching}))
    sections.append(("scenario", _scenario_table(cfg.scenario)))
    out = []
    for name, table in sections:
        out.append(f"[{name}]")
        for key, val in table.items():
            out.append(f"{key} = {_fmt_value(val)}")
        out.append("")
    for name in sorted(cfg.scenarios):
        if name == cfg.scenario.name:
            continue
        out.append(f"[scenarios.{name}]")
        for key, val in _scenario_table(cfg.scenarios[name]).items():
            out.append(f"{key} = {_fmt_value(val)}")
        out.append("")
    out.append("[output]")
    out.append(f"directory = {_fmt_value(cfg.output_dir)}")
    out.append(f"emit_csv = {_fmt_value(cfg.emit_csv)}")
    out.append("")
    return "\n".join(out)


def default_config():
    """The built-in default configuration (equals configs/default.toml)."""
    index = _LineIndex("", "<defaults>")
    return _config_from_doc({}, index)
