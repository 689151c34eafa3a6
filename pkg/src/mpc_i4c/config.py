"""Campaign configuration: YAML file -> validated LoopConfig, SearchSpace and BoConfig.

Every problem is reported as ``file:line: section.key: message`` so a broken
config can be fixed without guessing which entry was meant.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import plant as pl
from .bayesopt import BoConfig, SearchSpace
from .experiment import LoopConfig
from .mpc import MpcWeights


class ConfigError(ValueError):
    pass


# section -> key -> expected kind; "float2" is a [lo, hi] pair, "floats" a list
SCHEMA: dict[str, dict[str, str]] = {
    "campaign": {"label": "str", "output_dir": "str"},
    "plant": {"M": "float", "m": "float", "L": "float", "g_grav": "float", "b": "float", "f_phi": "float"},
    "scenario": {"Ts": "float", "duration": "float", "initial_state": "floats", "force_limits": "float2", "substeps": "int"},
    "noise": {"meas_std_p": "float", "meas_std_phi": "float", "dist_std": "float", "dist_bandwidth": "float", "seed": "int"},
    "mpc": {
        "Q_y": "floats", "Q_u": "float", "Q_du": "float", "Q_eps": "float",
        "V_y": "floats", "V_u": "float", "V_du": "float",
        "p_limits": "float2", "phi_limits": "float2", "du_limits": "float2", "rate_ratio": "int",
    },
    "pid": {"N_d": "float"},
    "reference": {"p": "float", "phi": "float"},
    "guard": {"p_abort": "float", "phi_abort": "float", "screen_unstable": "bool", "cap": "float"},
    "search": {"theta": "float2", "mu": "float2", "Np": "int2", "n_theta": "int", "n_mu": "int"},
    "bo": {
        "n_init": "int", "i_max": "int", "seed": "int", "n_probes": "int", "n_refine": "int",
        "refine_iters": "int", "hyper_starts": "int", "early_stop_window": "int?", "early_stop_tol": "float",
    },
}


@dataclass
class CampaignConfig:
    loop: LoopConfig
    space: SearchSpace
    bo: BoConfig
    label: str = "campaign"
    output_dir: Path = Path("runs/campaign")
    source: str = ""
    path: Path | None = None

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.source.encode()).hexdigest()[:16]


@dataclass
class _Located:
    values: dict
    lines: dict = field(default_factory=dict)
    filename: str = "<config>"

    def where(self, *keys) -> str:
        for n in range(len(keys), 0, -1):
            line = self.lines.get(tuple(keys[:n]))
            if line is not None:
                return f"{self.filename}:{line}"
        return self.filename

    def fail(self, keys, msg):
        raise ConfigError(f"{self.where(*keys)}: {'.'.join(keys)}: {msg}")


def _line_map(node, prefix=(), out=None):
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = prefix + (str(k.value),)
            out[key] = k.start_mark.line + 1
            _line_map(v, key, out)
    return out


def _parse(text: str, filename: str) -> _Located:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        values = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{filename}:{mark.line + 1}" if mark is not None else filename
        raise ConfigError(f"{where}: invalid YAML: {getattr(exc, 'problem', exc)}") from None
    if values is None:
        values = {}
    if not isinstance(values, dict):
        raise ConfigError(f"{filename}:1: top level must be a mapping of sections")
    return _Located(values, _line_map(root) if root is not None else {}, filename)


def _as_float(loc, keys, v):
    if isinstance(v, bool) or not isinstance(v, (int, float, str)):
        loc.fail(keys, f"expected a number, got {v!r}")
    if isinstance(v, str):
        s = v.strip().lower()
        if s in ("inf", "+inf", ".inf"):
            return math.inf
        if s in ("-inf", "-.inf"):
            return -math.inf
        try:
            return float(s)
        except ValueError:
            loc.fail(keys, f"expected a number, got {v!r}")
    out = float(v)
    if math.isnan(out):
        loc.fail(keys, "NaN is not allowed")
    return out


def _convert(loc, keys, kind, v):
    if kind == "str":
        if not isinstance(v, str):
            loc.fail(keys, f"expected a string, got {v!r}")
        return v
    if kind == "bool":
        if not isinstance(v, bool):
            loc.fail(keys, f"expected true/false, got {v!r}")
        return v
    if kind in ("int", "int?"):
        if v is None and kind == "int?":
            return None
        if isinstance(v, bool) or not isinstance(v, int):
            loc.fail(keys, f"expected an integer, got {v!r}")
        return v
    if kind == "float":
        return _as_float(loc, keys, v)
    if kind in ("floats", "float2", "int2"):
        if not isinstance(v, list):
            v = [v] if kind == "floats" else v
        if not isinstance(v, list):
            loc.fail(keys, f"expected a list, got {v!r}")
        if kind == "int2":
            if len(v) != 2 or any(isinstance(x, bool) or not isinstance(x, int) for x in v):
                loc.fail(keys, f"expected [lo, hi] integers, got {v!r}")
            return tuple(v)
        vals = [_as_float(loc, keys, x) for x in v]
        if kind == "float2":
            if len(vals) != 2:
                loc.fail(keys, f"expected [lo, hi], got {v!r}")
            if not vals[0] < vals[1]:
                loc.fail(keys, f"lower bound must be below upper bound, got {v!r}")
            return tuple(vals)
        return vals
    raise AssertionError(kind)


def _sections(loc: _Located) -> dict[str, dict[str, Any]]:
    out: dict[str, dict[str, Any]] = {s: {} for s in SCHEMA}
    for sec, body in loc.values.items():
        if sec not in SCHEMA:
            loc.fail((str(sec),), f"unknown section (expected one of {', '.join(SCHEMA)})")
        if body is None:
            continue
        if not isinstance(body, dict):
            loc.fail((sec,), "section must be a mapping")
        for key, v in body.items():
            if key not in SCHEMA[sec]:
                loc.fail((sec, str(key)), f"unknown key (expected one of {', '.join(SCHEMA[sec])})")
            out[sec][key] = _convert(loc, (sec, key), SCHEMA[sec][key], v)
    return out


def _build(loc: _Located, s: dict[str, dict[str, Any]]):
    def guarded(section, fn):
        try:
            return fn()
        except (ValueError, TypeError) as exc:
            msg = str(exc)
            named = [k for k in SCHEMA[section] if (section, k) in loc.lines and k in msg.split()]
            loc.fail((section, named[0]) if named else (section,), msg)

    params = guarded("plant", lambda: pl.PendulumParams(**s["plant"]))
    sc = dict(s["scenario"])
    if "duration" in sc:
        sc["experiment_duration"] = sc.pop("duration")
    if "initial_state" in sc:
        if len(sc["initial_state"]) != 4:
            loc.fail(("scenario", "initial_state"), "expected 4 entries (p, p_dot, phi, phi_dot)")
        sc["initial_state"] = pl.PlantState(*sc["initial_state"])
    scenario = guarded("scenario", lambda: pl.SimScenario(**sc))
    noise = guarded("noise", lambda: pl.NoiseConfig(**s["noise"]))

    m = dict(s["mpc"])
    limits = {k: m.pop(k) for k in ("p_limits", "phi_limits", "du_limits", "rate_ratio") if k in m}
    for k in ("Q_y", "V_y"):
        if k in m:
            if len(m[k]) not in (1, 2):
                loc.fail(("mpc", k), "expected one value or one per output (p, phi)")
            m[k] = np.array(m[k])
    base = {"Q_y": np.array([0.1, 0.1]), "Q_u": 0.0, "Q_du": 0.1, "Q_eps": 1e5}
    weights = guarded("mpc", lambda: MpcWeights(**{**base, **m}))

    g = s["guard"]
    loop = guarded("guard", lambda: LoopConfig(
        scenario=scenario,
        noise=noise,
        params=params,
        weights=weights,
        N_d=s["pid"].get("N_d", 100.0),
        r_p=s["reference"].get("p", 0.0),
        r_phi=s["reference"].get("phi", 0.0),
        **limits,
        **g,
    ))
    if not loop.N_d > 0:
        loc.fail(("pid", "N_d"), "must be positive")

    sr = s["search"]
    n_theta, n_mu = sr.get("n_theta", 3), sr.get("n_mu", 6)
    if (n_theta, n_mu) != (3, 6):
        loc.fail(("search",), "the cart-pendulum loop needs n_theta = 3 and n_mu = 6")
    th = sr.get("theta", (-500.0, 500.0))
    mu = sr.get("mu", (-500.0, 500.0))
    space = guarded("search", lambda: SearchSpace(
        (th[0],) * n_theta, (th[1],) * n_theta, (mu[0],) * n_mu, (mu[1],) * n_mu, tuple(sr.get("Np", (10, 20)))
    ))
    bo = guarded("bo", lambda: BoConfig(cap=loop.cap, **s["bo"]))
    return loop, space, bo


def loads(text: str, filename: str = "<config>") -> CampaignConfig:
    loc = _parse(text, filename)
    s = _sections(loc)
    loop, space, bo = _build(loc, s)
    c = s["campaign"]
    return CampaignConfig(loop, space, bo, c.get("label", "campaign"), Path(c.get("output_dir", "runs/campaign")), text)


def load(path) -> CampaignConfig:
    path = Path(path)
    cfg = loads(path.read_text(), str(path))
    cfg.path = path
    return cfg
