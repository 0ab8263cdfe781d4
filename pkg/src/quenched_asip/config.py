"""Experiment configuration: JSON loading, validation and object construction."""

import copy
import hashlib
import json
from dataclasses import dataclass

from . import driving as drv
from . import maps as mp
from . import observables as ob

TEMPLATE = {
    "driving": {"kind": "finite-periodic", "alphabet": ["doubling"], "period": 1,
                "master_seed": 0, "rotation_angle": None},
    "maps": {"doubling": {"preset": "doubling"}},
    "observable": [{"type": "cos", "freq": 1}],
    "grid_k": 4096,
    "fiber_index": 0,
    "tolerances": {"density_tol": 1e-10, "density_n_max": 200},
    "decay": {"N": 20, "trials": 32},
    "sigma": {"N_max": 64, "window": 512},
    "blocks": {"beta": 0.625, "eps": 0.05, "N": 11},
    "simulation": {"n_steps": 4096, "n_paths": 2000, "seed": 0, "jitter": None, "grain": 64},
    "rates": {"p": 5.0, "deltas": [0.0, 0.01, 0.05]},
    "output_dir": "out",
}

_OBS_FIELDS = {
    "cos": {"type", "freq"},
    "sin": {"type", "freq"},
    "x": {"type"},
    "indicator": {"type", "a", "b"},
    "coboundary": {"type", "q"},
    "table": {"type", "values"},
}


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = f"line {line}: " if line is not None else ""
        where += f"{field}: " if field else ""
        super().__init__(where + message)


def _fail(field, message):
    raise ConfigError(message, field)


def _number(cfg, path, lo=None, hi=None, integer=False, lo_open=False, hi_open=False):
    node = cfg
    for key in path.split("."):
        node = node[key]
    ok_type = isinstance(node, int) if integer else isinstance(node, (int, float))
    if isinstance(node, bool) or not ok_type:
        _fail(path, f"expected {'an integer' if integer else 'a number'}, got {node!r}")
    if lo is not None and (node < lo or (lo_open and node == lo)):
        _fail(path, f"must be {'>' if lo_open else '>='} {lo} (got {node})")
    if hi is not None and (node > hi or (hi_open and node == hi)):
        _fail(path, f"must be {'<' if hi_open else '<='} {hi} (got {node})")
    return node


def _merge_defaults(user, default, prefix=""):
    if not isinstance(user, dict):
        _fail(prefix.rstrip(".") or "<root>", "expected an object")
    out = copy.deepcopy(default)
    for key, val in user.items():
        if key not in default:
            _fail(prefix + key, "unknown field")
        if isinstance(default[key], dict) and key != "maps":
            out[key] = _merge_defaults(val, default[key], prefix + key + ".")
        else:
            out[key] = val
    return out


def _check_observable(spec, field):
    if not isinstance(spec, dict) or "type" not in spec:
        _fail(field, "observable entries need a 'type'")
    kind = spec["type"]
    if kind not in _OBS_FIELDS:
        _fail(field + ".type", f"unknown observable type {kind!r}; expected one of {sorted(_OBS_FIELDS)}")
    extra = set(spec) - _OBS_FIELDS[kind]
    if extra:
        _fail(f"{field}.{sorted(extra)[0]}", "unknown field")
    if kind == "indicator":
        a, b = spec.get("a"), spec.get("b")
        if not (isinstance(a, (int, float)) and isinstance(b, (int, float)) and 0 <= a < b <= 1):
            _fail(field, "indicator needs 0 <= a < b <= 1")
    if kind == "coboundary":
        if "q" not in spec:
            _fail(field + ".q", "coboundary needs a base observable q")
        _check_observable(spec["q"], field + ".q")
    if kind == "table":
        vals = spec.get("values")
        if not isinstance(vals, list) or len(vals) < 1:
            _fail(field + ".values", "expected a non-empty list")


def validate(raw):
    """Fill defaults and check every field; returns a plain dict."""
    cfg = _merge_defaults(raw, TEMPLATE)
    d = cfg["driving"]
    if d["kind"] not in drv.KINDS:
        _fail("driving.kind", f"expected one of {list(drv.KINDS)}, got {d['kind']!r}")
    if not isinstance(d["alphabet"], list) or not d["alphabet"]:
        _fail("driving.alphabet", "expected a non-empty list of map names")
    if not isinstance(cfg["maps"], dict) or not cfg["maps"]:
        _fail("maps", "expected a non-empty object of map definitions")
    for name in d["alphabet"]:
        if name not in cfg["maps"]:
            _fail("driving.alphabet", f"map {name!r} is not defined under 'maps'")
    if d["kind"] == "finite-periodic" and d["period"] is not None:
        _number(cfg, "driving.period", 1, integer=True)
    if d["kind"] == "irrational-rotation":
        if d["rotation_angle"] is None:
            _fail("driving.rotation_angle", "required for irrational-rotation")
        _number(cfg, "driving.rotation_angle", 0, 1, lo_open=True, hi_open=True)
    _number(cfg, "driving.master_seed", 0, integer=True)
    obs = cfg["observable"]
    obs = obs if isinstance(obs, list) else [obs]
    if not obs:
        _fail("observable", "expected at least one component")
    for j, spec in enumerate(obs):
        _check_observable(spec, f"observable[{j}]")
    cfg["observable"] = obs
    _number(cfg, "grid_k", 2, integer=True)
    _number(cfg, "fiber_index", integer=True)
    _number(cfg, "tolerances.density_tol", 0, lo_open=True)
    _number(cfg, "tolerances.density_n_max", 1, integer=True)
    _number(cfg, "decay.N", 2, integer=True)
    _number(cfg, "decay.trials", 1, integer=True)
    _number(cfg, "sigma.N_max", 1, integer=True)
    _number(cfg, "sigma.window", 1, integer=True)
    _number(cfg, "blocks.beta", 0, 1, lo_open=True, hi_open=True)
    _number(cfg, "blocks.eps", 0, 1 - cfg["blocks"]["beta"], lo_open=True, hi_open=True)
    _number(cfg, "blocks.N", 0, integer=True)
    _number(cfg, "simulation.n_steps", 1, integer=True)
    _number(cfg, "simulation.n_paths", 1, integer=True)
    _number(cfg, "simulation.seed", 0, integer=True)
    _number(cfg, "simulation.grain", 1, integer=True)
    if cfg["simulation"]["jitter"] is not None:
        _number(cfg, "simulation.jitter", 0)
    if cfg["simulation"]["n_steps"] < 2 ** (cfg["blocks"]["N"] + 1):
        _fail("blocks.N", f"levels up to N need simulation.n_steps >= 2^(N+1) = {2 ** (cfg['blocks']['N'] + 1)}")
    _number(cfg, "rates.p", 4, lo_open=True)
    if not isinstance(cfg["rates"]["deltas"], list):
        _fail("rates.deltas", "expected a list")
    for name, spec in cfg["maps"].items():
        try:
            mp.from_dict(spec, name)
        except (KeyError, TypeError, ValueError) as exc:
            _fail(f"maps.{name}", str(exc))
    return cfg


def loads(text):
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON ({exc.msg}, column {exc.colno})", line=exc.lineno) from None
    return validate(raw)


def load(path):
    with open(path) as fh:
        return loads(fh.read())


def config_hash(cfg):
    """First 16 hex digits of the SHA-256 of the canonical config (output directory excluded)."""
    body = {k: v for k, v in cfg.items() if k != "output_dir"}
    canon = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def template_text():
    return json.dumps(TEMPLATE, indent=2) + "\n"


@dataclass
class Experiment:
    family: mp.MapFamily
    system: drv.DrivingSystem
    observable: ob.Observable


def _observable(spec, fam, sys):
    kind = spec["type"]
    if kind == "cos":
        return ob.cosine(spec.get("freq", 1))
    if kind == "sin":
        return ob.sine(spec.get("freq", 1))
    if kind == "x":
        return ob.identity()
    if kind == "indicator":
        return ob.indicator(spec["a"], spec["b"])
    if kind == "table":
        return ob.grid_table(spec["values"])
    return ob.coboundary(_observable(spec["q"], fam, sys), fam, sys)


def build(cfg):
    """Instantiate the map family, driving system and (uncentered) observable."""
    fam = mp.MapFamily({name: mp.from_dict(spec, name) for name, spec in cfg["maps"].items()})
    d = cfg["driving"]
    sys = drv.DrivingSystem(d["kind"], tuple(d["alphabet"]), d["master_seed"], d["rotation_angle"],
                            d["period"] if d["kind"] == "finite-periodic" else None)
    comps = [_observable(s, fam, sys) for s in cfg["observable"]]
    g = comps[0] if len(comps) == 1 else ob.stack(*comps)
    return Experiment(fam, sys, g)
