"""INI configuration for the scenario harness.

Grammar: ``[section]`` headers, one ``key = value`` per line, ``#`` or ``;``
comments. Numbers accept an engineering suffix, case-insensitive, SPICE
style: f p n u m k meg g (``m`` is milli, ``meg`` is mega). Letters after the
suffix are ignored, so ``616nH`` and ``40.68megHz`` both parse. Lists are
comma separated. ``auto`` leaves a derived value to the code.

Every key has a default; a file only needs the keys it changes. Unknown
sections or keys are errors.
"""

from __future__ import annotations

import configparser
import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from . import link_model as lm
from .delay_comp import CompensatorState, default_delay_line
from .rectifier_sim import RectifierConfig
from .tx_controller import ControllerConfig

log = logging.getLogger(__name__)

_SUFFIX = {"f": 1e-15, "p": 1e-12, "n": 1e-9, "u": 1e-6, "m": 1e-3,
           "k": 1e3, "meg": 1e6, "g": 1e9}
_NUM = re.compile(r"^\s*([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)(meg|[fpnumkg])?([a-z]*)\s*$",
                  re.IGNORECASE)

AUTO = "auto"


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def parse_number(text: str) -> float:
    m = _NUM.match(text)
    if not m:
        raise ValueError(f"not a number: {text!r}")
    val = float(m.group(1))
    if m.group(2):
        val *= _SUFFIX[m.group(2).lower()]
    return val


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "yes", "true", "on"):
        return True
    if t in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _num_list(text):
    items = [x for x in text.split(",") if x.strip()]
    return tuple(parse_number(x) for x in items)


def _int(text):
    v = parse_number(text)
    if v != int(v):
        raise ValueError(f"not an integer: {text!r}")
    return int(v)


def _opt(conv):
    return lambda t: None if t.strip().lower() == AUTO else conv(t)


_P0 = lm.default_params()

# section -> key -> (parser, default)
SCHEMA = {
    "link": {
        "f0": (parse_number, _P0.f0),
        "l_tx": (parse_number, _P0.L_tx),
        "l_rx": (parse_number, _P0.L_rx),
        "k": (parse_number, _P0.k),
        "r_ltx": (parse_number, _P0.R_ltx),
        "r_rad": (parse_number, _P0.R_rad),
        "r_lrx": (parse_number, _P0.R_lrx),
        "c_tx": (_opt(parse_number), None),
        "c_rx": (_opt(parse_number), None),
        "r_src": (parse_number, _P0.R_src),
        "p_rad_includes_implant": (_bool, False),
        "r_rx_min": (parse_number, 10.0),
        "r_rx_max": (parse_number, 10e3),
        "r_rx_points": (_int, 200),
    },
    "load": {
        "kind": (str, lm.CONSTANT_POWER),
        "value": (parse_number, 1e-3),
        "scpc_ratio": (parse_number, 1.0),
        "ac_mapping_factor": (parse_number, 0.5),
    },
    "rectifier": {
        "v_ac_amp": (parse_number, 2.0),
        "r_src_ac": (parse_number, 5.4),
        "r_on": (parse_number, 1.2),
        "v_diode": (parse_number, 0.6),
        "t_cmp_on": (parse_number, 1e-9),
        "t_cmp_off": (parse_number, 1e-9),
        "c_filter": (parse_number, 0.5e-9),
        "r_load": (parse_number, 700.0),
        "i_aux": (parse_number, 130e-6),
        "dt_max": (_opt(parse_number), None),
    },
    "compensator": {
        "c_s": (parse_number, 200e-15),
        "c_c": (parse_number, 200e-15),
        "i_src": (parse_number, 5e-6),
        "t_zcd": (parse_number, 200e-12),
        "mismatch": (parse_number, 0.0),
        "off_delay_line": (_opt(parse_number), None),
        "reset_threshold_cycles": (_int, 4),
        "rail": (parse_number, 2.0),
        "v_c_on0": (parse_number, 0.0),
        "v_c_off0": (parse_number, 0.0),
        "max_cycles": (_int, 64),
    },
    "controller": {
        "v_tx_min": (parse_number, 0.1),
        "v_tx_max": (parse_number, 1.0),
        "sweep_points": (_int, 64),
        "phase_deadband": (parse_number, 0.01),
        "gain": (_opt(parse_number), None),
        "max_step": (parse_number, 0.05),
        "settle_cycles": (_int, 100),
        "samples_per_cycle": (_int, 256),
        "rail_alarm_steps": (_int, 3),
        "load_step": (parse_number, 2.0),
        "n_steps": (_int, 40),
        "phase_noise": (parse_number, 0.0),
    },
    "sweep": {
        "load_min": (parse_number, 120.0),
        "load_max": (parse_number, 1000.0),
        "load_points": (_int, 10),
        "delays": (_num_list, (0.0, 100e-12, 200e-12, 500e-12, 1e-9, 2e-9)),
        "delays_settle": (_num_list, (0.0, 250e-12, 500e-12, 1e-9, 2e-9)),
        "offsets_on": (_opt(_num_list), None),
        "offsets_off": (_opt(_num_list), None),
    },
    "scenario": {
        "step_from": (parse_number, 600.0),
        "step_to": (parse_number, 300.0),
        "ask_factors": (_num_list, (0.8, 1.2)),
        "pre_cycles": (_int, 20),
        "post_cycles": (_int, 60),
        "n_cycles": (_int, 40),
    },
    "check": {
        "settle_max_cycles": (_int, 8),
        "residual_max": (parse_number, 200e-12),
        "reduction_min": (parse_number, 0.10),
        "optimum_gap_min": (parse_number, 0.05),
        "tau_target": (parse_number, 150e-9),
        "tau_rel_tol": (parse_number, 0.10),
        "resettle_max_cycles": (_int, 1),
        "pre_rel_tol": (parse_number, 0.01),
        "regulate_max_steps": (_int, 20),
        "delay_drop_max": (parse_number, 0.01),
        "vcr_target": (parse_number, 0.939),
        "vcr_tol": (parse_number, 0.02),
        "pce_target": (parse_number, 0.901),
        "pce_tol": (parse_number, 0.03),
    },
}


@dataclass
class ScenarioConfig:
    values: dict
    link: lm.LinkParams | None = None
    load: lm.LoadModel | None = None
    rectifier: RectifierConfig | None = None
    controller: ControllerConfig | None = None
    warnings: list = field(default_factory=list)

    def __getitem__(self, dotted):
        sec, key = dotted.split(".", 1)
        return self.values[sec][key]

    def bank(self) -> dict:
        """Initial compensator bank, one state per gate edge."""
        c = self.values["compensator"]
        common = dict(c_s=c["c_s"], c_c=c["c_c"], i_src=c["i_src"], t_zcd=c["t_zcd"],
                      mismatch=c["mismatch"], reset_threshold_cycles=c["reset_threshold_cycles"],
                      rail=c["rail"])
        dl = c["off_delay_line"]
        if dl is None:
            dl = default_delay_line(self.rectifier.f0, self.rectifier.t_cmp_off)
        on = CompensatorState(edge="on", v_c=c["v_c_on0"], **common)
        off = CompensatorState(edge="off", v_c=c["v_c_off0"], off_delay_line=dl, **common)
        return {"p_on": on, "p_off": off, "n_on": on, "n_off": off}

    def load_grid(self):
        import numpy as np
        s = self.values["sweep"]
        if s["load_points"] <= 1:
            return [s["load_min"]]
        return [float(x) for x in np.geomspace(s["load_min"], s["load_max"], s["load_points"])]

    def echo(self) -> dict:
        """Resolved values, JSON-friendly, for provenance."""
        return {sec: {k: (list(v) if isinstance(v, tuple) else v) for k, v in kv.items()}
                for sec, kv in self.values.items()}

    def to_ini(self) -> str:
        lines = []
        for sec, kv in self.values.items():
            lines.append(f"[{sec}]")
            for k, v in kv.items():
                if v is None:
                    txt = AUTO
                elif isinstance(v, tuple):
                    txt = ", ".join(repr(x) for x in v)
                elif isinstance(v, bool):
                    txt = "true" if v else "false"
                else:
                    txt = repr(v) if isinstance(v, float) else str(v)
                lines.append(f"{k} = {txt}")
            lines.append("")
        return "\n".join(lines)


def default_config_text() -> str:
    return resources.files("wptsim").joinpath("data/default.ini").read_text()


def _read(source) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str.lower
    # INI text always has a newline; a path never does
    if isinstance(source, str) and "\n" in source:
        cp.read_string(source)
    elif isinstance(source, (str, Path)) and Path(source).is_file():
        cp.read_string(Path(source).read_text(), source=str(source))
    else:
        raise ConfigError([f"config file not found: {source}"])
    return cp


def parse_config(source, overrides=()) -> tuple[ScenarioConfig, list]:
    """Parse without raising; returns the config and every error found."""
    errors = []
    try:
        cp = _read(source)
    except configparser.Error as exc:
        return ScenarioConfig({}), [f"syntax: {exc}"]
    raw = {sec: dict(cp[sec]) for sec in cp.sections()}
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            errors.append(f"--set expects section.key=value, got {item!r}")
            continue
        k, v = item.split("=", 1)
        sec, key = k.strip().lower().split(".", 1)
        raw.setdefault(sec, {})[key] = v.strip()

    values = {}
    for sec, keys in SCHEMA.items():
        values[sec] = {}
        for key, (conv, default) in keys.items():
            values[sec][key] = default
    for sec, kv in raw.items():
        if sec not in SCHEMA:
            errors.append(f"unknown section [{sec}]")
            continue
        for key, text in kv.items():
            if key not in SCHEMA[sec]:
                errors.append(f"unknown key {sec}.{key}")
                continue
            try:
                values[sec][key] = SCHEMA[sec][key][0](text)
            except ValueError as exc:
                errors.append(f"{sec}.{key}: {exc}")

    cfg = ScenarioConfig(values)
    _build(cfg, errors)
    return cfg, errors


def _try(errors, label, fn):
    try:
        return fn()
    except (ValueError, TypeError) as exc:
        errors.append(f"{label}: {exc}")
        return None


def _build(cfg: ScenarioConfig, errors: list) -> None:
    v = cfg.values
    L = v["link"]
    if not 0 <= L["k"] < 1:
        errors.append(f"link.k = {L['k']!r} outside the coupling bound 0 <= k < 1")
    else:
        c_tx = L["c_tx"] if L["c_tx"] is not None else _try(
            errors, "link.c_tx", lambda: lm.resonant_cap(L["f0"], L["l_tx"]))
        c_rx = L["c_rx"] if L["c_rx"] is not None else _try(
            errors, "link.c_rx", lambda: lm.resonant_cap(L["f0"], L["l_rx"]))
        if c_tx is not None and c_rx is not None:
            cfg.link = _try(errors, "link", lambda: lm.LinkParams(
                f0=L["f0"], L_tx=L["l_tx"], L_rx=L["l_rx"], k=L["k"], R_ltx=L["r_ltx"],
                R_rad=L["r_rad"], R_lrx=L["r_lrx"], C_tx=c_tx, C_rx=c_rx, R_src=L["r_src"]))
    if cfg.link is not None:
        res_tx, res_rx = cfg.link.resonance_residual()
        for name, res in (("c_tx", res_tx), ("c_rx", res_rx)):
            if res > 0.2:
                cfg.warnings.append(
                    f"link.{name} is off resonance: |w0^2 L C - 1| = {res:.3g}")
    if not 0 < L["r_rx_min"] < L["r_rx_max"]:
        errors.append("link.r_rx_min/r_rx_max must satisfy 0 < min < max")

    ld = v["load"]
    cfg.load = _try(errors, "load", lambda: lm.LoadModel(
        ld["kind"], ld["value"], ld["scpc_ratio"], ld["ac_mapping_factor"]))

    r = v["rectifier"]
    cfg.rectifier = _try(errors, "rectifier", lambda: RectifierConfig(
        v_ac_amp=r["v_ac_amp"], f0=L["f0"], r_src_ac=r["r_src_ac"], r_on=r["r_on"],
        v_diode=r["v_diode"], t_cmp_on=r["t_cmp_on"], t_cmp_off=r["t_cmp_off"],
        c_filter=r["c_filter"], r_load=r["r_load"], i_aux=r["i_aux"], dt_max=r["dt_max"]))

    if cfg.rectifier is not None:
        _try(errors, "compensator", cfg.bank)
    c = v["compensator"]
    if c["max_cycles"] < 1:
        errors.append("compensator.max_cycles must be >= 1")

    ct = v["controller"]
    cfg.controller = _try(errors, "controller", lambda: ControllerConfig(
        v_tx_range=(ct["v_tx_min"], ct["v_tx_max"]), sweep_points=ct["sweep_points"],
        phase_deadband=ct["phase_deadband"], gain=ct["gain"], max_step=ct["max_step"],
        settle_cycles=ct["settle_cycles"], samples_per_cycle=ct["samples_per_cycle"],
        rail_alarm_steps=ct["rail_alarm_steps"]))
    if ct["load_step"] <= 0:
        errors.append("controller.load_step must be positive")

    s = v["sweep"]
    if s["load_points"] < 1:
        errors.append("sweep.load_points must be >= 1")
    if not 0 < s["load_min"] <= s["load_max"]:
        errors.append("sweep.load_min/load_max must satisfy 0 < min <= max")
    if any(d < 0 for d in s["delays"]):
        errors.append("sweep.delays must be non-negative")

    sc = v["scenario"]
    for key in ("step_from", "step_to"):
        if sc[key] <= 0:
            errors.append(f"scenario.{key} must be positive")
    if any(f <= 0 for f in sc["ask_factors"]):
        errors.append("scenario.ask_factors must be positive")
    for key in ("pre_cycles", "post_cycles", "n_cycles"):
        if sc[key] < 5:
            errors.append(f"scenario.{key} must be >= 5")


def validate_config(source, overrides=()) -> list:
    """All errors in ``source``; an empty list means the file is valid."""
    return parse_config(source, overrides)[1]


def load_config(source=None, overrides=()) -> ScenarioConfig:
    if source is None:
        source = default_config_text()
    cfg, errors = parse_config(source, overrides)
    if errors:
        raise ConfigError(errors)
    for w in cfg.warnings:
        log.warning(w)
    return cfg
