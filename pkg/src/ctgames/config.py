"""Run configuration: YAML schema, defaults and line-anchored validation.

Top-level keys::

    command: solve | simulate | estimate | identify | mc
    model:            # family plus constructor options
      family: renewal | entry | ladder
    theta: {...}      # parameter values (truth, or start center for estimate)
    seed: 0           # root seed for all randomness
    output: out       # output directory
    threads: 1
    solver:   {tol, max_iter, method}
    simulate: {markets, horizon, max_events, sampling}
    data:     {path, sampling}
    estimate: {n_starts, maxiter, fixed, free, standard_errors, compare, df}
    identify: {player, hazards, psi_constant, lambda_groups, value_pins, value_pairs, delta}
    mc:       {markets, horizon, max_events, schemes, replications, n_starts, max_failure_fraction}

``sampling`` is ``continuous`` or a positive sampling interval.
``identify.hazards`` is ``intensity`` (hazards read off the decomposed
intensity matrix; self-transitions are unobserved) or ``equilibrium``
(every choice hazard, including actions that leave the state unchanged).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError

COMMANDS = ("solve", "simulate", "estimate", "identify", "mc")

MODEL_OPTIONS = {
    "renewal": {"K": 90, "rho": 0.05, "homogeneous": False, "mileage_scale": None},
    "entry": {"rho": 0.05, "lambda_mode": "firm", "flow_payoff_table": None},
    "ladder": {"N": 2, "omega_bar": 7, "omega_star": 5.0, "omega_entry": 4, "omega_high": 4,
               "market_size": None, "cost": 5.0, "scrap": 0.0, "rho": 0.05, "observe_continuation": True},
}

SECTIONS = {
    "solver": {"tol": 1e-13, "max_iter": 100_000, "method": None},
    "simulate": {"markets": 1, "horizon": 120.0, "max_events": None, "sampling": "continuous"},
    "data": {"path": None, "sampling": "continuous"},
    "estimate": {"n_starts": 3, "maxiter": 200, "fixed": {}, "free": None, "standard_errors": True,
                 "compare": None, "df": None},
    "identify": {"player": 1, "hazards": "intensity", "psi_constant": True, "lambda_groups": None,
                 "value_pins": [], "value_pairs": [], "delta": None},
    "mc": {"markets": 200, "horizon": 120.0, "max_events": None, "schemes": ["continuous"],
           "replications": 1, "n_starts": 1, "max_failure_fraction": 0.1},
}

TOP_LEVEL = {"command", "model", "theta", "seed", "output", "threads"} | set(SECTIONS)


@dataclass
class RunConfig:
    """Validated run configuration; states and players in ``identify`` stay 1-based."""

    command: str
    family: str
    model: dict
    theta: dict
    seed: int = 0
    output: str = "out"
    threads: int = 1
    solver: dict = field(default_factory=dict)
    simulate: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)
    estimate: dict = field(default_factory=dict)
    identify: dict = field(default_factory=dict)
    mc: dict = field(default_factory=dict)
    source: str = ""
    digest: str = ""

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("command", "family", "model", "theta", "seed", "output", "threads",
                                              "solver", "simulate", "data", "estimate", "identify", "mc")}


class _Lines:
    """Map from key paths to source line numbers, built from the YAML node tree."""

    def __init__(self, node, source):
        self.source = source
        self.lines = {}
        self._walk(node, ())

    def _walk(self, node, path):
        if node is None:
            return
        self.lines.setdefault(path, node.start_mark.line + 1)
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = k.value
                self.lines[path + (key,)] = k.start_mark.line + 1
                self._walk(v, path + (key,))
        elif isinstance(node, yaml.SequenceNode):
            for n, v in enumerate(node.value):
                self._walk(v, path + (n,))

    def error(self, path, message) -> ConfigError:
        line = None
        p = tuple(path)
        while p and p not in self.lines:
            p = p[:-1]
        line = self.lines.get(p)
        where = f"{self.source}:{line}" if line else self.source
        name = ".".join(str(x) for x in path)
        return ConfigError(f"{where}: {name}: {message}" if name else f"{where}: {message}")


def _number(lines, path, value, *, kind=float, positive=False, nonneg=False, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise lines.error(path, f"must be a number, got {value!r}")
    if kind is int and (float(value) != int(value)):
        raise lines.error(path, f"must be an integer, got {value!r}")
    v = kind(value)
    if kind is float and v != v:
        raise lines.error(path, "must not be NaN")
    if positive and not v > 0:
        raise lines.error(path, f"must be positive, got {value!r}")
    if nonneg and not v >= 0:
        raise lines.error(path, f"must be nonnegative, got {value!r}")
    return v


def _sampling(lines, path, value):
    if value in ("continuous", "ct"):
        return "continuous"
    return _number(lines, path, value, positive=True)


def _section(lines, raw, name):
    given = raw.get(name) or {}
    if not isinstance(given, dict):
        raise lines.error((name,), "must be a mapping")
    defaults = SECTIONS[name]
    unknown = set(given) - set(defaults)
    if unknown:
        key = sorted(unknown)[0]
        raise lines.error((name, key), f"unknown key (allowed: {', '.join(defaults)})")
    out = dict(defaults)
    out.update(given)
    return out


def parse_config(path, overrides: dict | None = None) -> RunConfig:
    """Read and validate a YAML run configuration.

    Raises
    ------
    ConfigError
        With ``file:line`` and the dotted field name for any unknown key,
        missing field or out-of-domain value.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from None
    return parse_config_text(text, str(path), overrides)


def parse_config_text(text: str, source: str = "<config>", overrides: dict | None = None) -> RunConfig:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark else source
        raise ConfigError(f"{where}: invalid YAML: {getattr(exc, 'problem', exc)}") from None
    lines = _Lines(node, source)
    if not isinstance(raw, dict):
        raise lines.error((), "top level must be a mapping")
    raw = dict(raw)
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    unknown = set(raw) - TOP_LEVEL
    if unknown:
        key = sorted(unknown)[0]
        raise lines.error((key,), f"unknown key (allowed: {', '.join(sorted(TOP_LEVEL))})")
    if "command" not in raw:
        raise lines.error((), "missing required key 'command'")
    command = raw["command"]
    if command not in COMMANDS:
        raise lines.error(("command",), f"must be one of {', '.join(COMMANDS)}, got {command!r}")

    model_raw = raw.get("model")
    if not isinstance(model_raw, dict) or "family" not in model_raw:
        raise lines.error(("model",), "must be a mapping with a 'family' key")
    family = model_raw["family"]
    if family not in MODEL_OPTIONS:
        raise lines.error(("model", "family"), f"must be one of {', '.join(MODEL_OPTIONS)}, got {family!r}")
    allowed = MODEL_OPTIONS[family]
    model = {}
    for k, v in model_raw.items():
        if k == "family":
            continue
        if k not in allowed:
            raise lines.error(("model", k), f"unknown option for {family} (allowed: {', '.join(allowed)})")
        model[k] = v
    model = _validate_model(lines, family, model)

    from .models import make_family

    try:
        fam = make_family(family, **model)
    except (ValueError, TypeError) as exc:
        raise lines.error(("model",), str(exc)) from None
    theta_raw = raw.get("theta") or {}
    if not isinstance(theta_raw, dict):
        raise lines.error(("theta",), "must be a mapping of parameter values")
    theta = dict(fam.truth)
    for k, v in theta_raw.items():
        if k not in fam.param_names:
            raise lines.error(("theta", k), f"unknown parameter (allowed: {', '.join(fam.param_names)})")
        val = _number(lines, ("theta", k), v)
        if k in fam.rate_params and not val > 0:
            raise lines.error(("theta", k), f"rate parameter must be positive, got {v!r}")
        theta[k] = val

    seed = _number(lines, ("seed",), raw.get("seed", 0), kind=int, nonneg=True)
    threads = _number(lines, ("threads",), raw.get("threads", 1), kind=int, positive=True)
    output = str(raw.get("output", "out"))

    solver = _section(lines, raw, "solver")
    solver["tol"] = _number(lines, ("solver", "tol"), solver["tol"], positive=True)
    solver["max_iter"] = _number(lines, ("solver", "max_iter"), solver["max_iter"], kind=int, positive=True)
    if solver["method"] not in (None, "vfi", "policy"):
        raise lines.error(("solver", "method"), "must be 'vfi' or 'policy'")

    sim = _section(lines, raw, "simulate")
    sim["markets"] = _number(lines, ("simulate", "markets"), sim["markets"], kind=int, positive=True)
    sim["horizon"] = _number(lines, ("simulate", "horizon"), sim["horizon"], positive=True)
    sim["max_events"] = _number(lines, ("simulate", "max_events"), sim["max_events"], kind=int, positive=True,
                                allow_none=True)
    sim["sampling"] = _sampling(lines, ("simulate", "sampling"), sim["sampling"])

    data = _section(lines, raw, "data")
    data["sampling"] = _sampling(lines, ("data", "sampling"), data["sampling"])
    if command == "estimate" and not data["path"]:
        raise lines.error(("data", "path"), "required for estimate")
    if data["path"]:
        p = Path(data["path"])
        if not p.is_absolute():
            p = Path(source).parent / p
        data["path"] = str(p)

    est = _section(lines, raw, "estimate")
    est["n_starts"] = _number(lines, ("estimate", "n_starts"), est["n_starts"], kind=int, positive=True)
    est["maxiter"] = _number(lines, ("estimate", "maxiter"), est["maxiter"], kind=int, positive=True)
    if not isinstance(est["fixed"], dict):
        raise lines.error(("estimate", "fixed"), "must be a mapping")
    for k, v in est["fixed"].items():
        if k not in fam.param_names:
            raise lines.error(("estimate", "fixed", k), "unknown parameter")
        est["fixed"][k] = _number(lines, ("estimate", "fixed", k), v)
        if k in fam.rate_params and not est["fixed"][k] > 0:
            raise lines.error(("estimate", "fixed", k), "rate parameter must be positive")
    if est["free"] is not None:
        if not isinstance(est["free"], list) or any(k not in fam.param_names for k in est["free"]):
            raise lines.error(("estimate", "free"), "must be a list of parameter names")
    if est["compare"] is not None:
        p = Path(est["compare"])
        est["compare"] = str(p if p.is_absolute() else Path(source).parent / p)
        est["df"] = _number(lines, ("estimate", "df"), est["df"], kind=int, positive=True)

    ident = _section(lines, raw, "identify")
    ident["player"] = _number(lines, ("identify", "player"), ident["player"], kind=int, positive=True)
    if ident["hazards"] not in ("intensity", "equilibrium"):
        raise lines.error(("identify", "hazards"), "must be 'intensity' or 'equilibrium'")
    K = fam.n_states
    for key in ("value_pins",):
        for n, item in enumerate(ident[key]):
            if not isinstance(item, dict) or set(item) != {"state", "value"}:
                raise lines.error(("identify", key, n), "each pin needs 'state' and 'value'")
            _state(lines, ("identify", key, n, "state"), item["state"], K)
            _number(lines, ("identify", key, n, "value"), item["value"])
    for n, item in enumerate(ident["value_pairs"]):
        if not isinstance(item, dict) or set(item) != {"states", "value"} or len(item["states"]) != 2:
            raise lines.error(("identify", "value_pairs", n), "each pair needs 'states: [a, b]' and 'value'")
        for s in item["states"]:
            _state(lines, ("identify", "value_pairs", n, "states"), s, K)
    if ident["lambda_groups"] is not None:
        for n, g in enumerate(ident["lambda_groups"]):
            if not isinstance(g, list) or not g:
                raise lines.error(("identify", "lambda_groups", n), "each group must be a nonempty list of states")
            for s in g:
                _state(lines, ("identify", "lambda_groups", n), s, K)
    ident["delta"] = _number(lines, ("identify", "delta"), ident["delta"], positive=True, allow_none=True)

    mc = _section(lines, raw, "mc")
    mc["markets"] = _number(lines, ("mc", "markets"), mc["markets"], kind=int, positive=True)
    mc["horizon"] = _number(lines, ("mc", "horizon"), mc["horizon"], positive=True)
    mc["max_events"] = _number(lines, ("mc", "max_events"), mc["max_events"], kind=int, positive=True,
                               allow_none=True)
    mc["replications"] = _number(lines, ("mc", "replications"), mc["replications"], kind=int, positive=True)
    mc["n_starts"] = _number(lines, ("mc", "n_starts"), mc["n_starts"], kind=int, positive=True)
    mc["max_failure_fraction"] = _number(lines, ("mc", "max_failure_fraction"), mc["max_failure_fraction"],
                                         nonneg=True)
    if not isinstance(mc["schemes"], list) or not mc["schemes"]:
        raise lines.error(("mc", "schemes"), "must be a nonempty list")
    mc["schemes"] = [_sampling(lines, ("mc", "schemes", n), s) for n, s in enumerate(mc["schemes"])]

    return RunConfig(command=command, family=family, model=model, theta=theta, seed=seed, output=output,
                     threads=threads, solver=solver, simulate=sim, data=data, estimate=est, identify=ident,
                     mc=mc, source=source, digest=hashlib.sha256(text.encode()).hexdigest())


def _state(lines, path, value, K):
    v = _number(lines, path, value, kind=int)
    if not 1 <= v <= K:
        raise lines.error(path, f"state {value} outside 1..{K}")
    return v


def _validate_model(lines, family, model):
    out = dict(model)
    if family == "renewal":
        if "K" in out:
            out["K"] = _number(lines, ("model", "K"), out["K"], kind=int)
            if out["K"] < 2:
                raise lines.error(("model", "K"), "renewal model needs K >= 2")
        if "mileage_scale" in out:
            out["mileage_scale"] = _number(lines, ("model", "mileage_scale"), out["mileage_scale"], positive=True,
                                           allow_none=True)
        if "homogeneous" in out and not isinstance(out["homogeneous"], bool):
            raise lines.error(("model", "homogeneous"), "must be true or false")
    elif family == "entry":
        if "lambda_mode" in out and out["lambda_mode"] not in ("firm", "demand"):
            raise lines.error(("model", "lambda_mode"), "must be 'firm' or 'demand'")
        if out.get("flow_payoff_table") is not None:
            tab = out["flow_payoff_table"]
            if (not isinstance(tab, list) or len(tab) != 2
                    or any(not isinstance(r, list) or len(r) != 8 for r in tab)):
                raise lines.error(("model", "flow_payoff_table"), "must be 2 rows of 8 numbers")
            out["flow_payoff_table"] = [[_number(lines, ("model", "flow_payoff_table", i, j), v)
                                         for j, v in enumerate(r)] for i, r in enumerate(tab)]
    elif family == "ladder":
        ints = ("N", "omega_bar", "omega_entry", "omega_high")
        for k in ints:
            if k in out:
                out[k] = _number(lines, ("model", k), out[k], kind=int, positive=True)
        for k in ("omega_star", "cost", "scrap"):
            if k in out:
                out[k] = _number(lines, ("model", k), out[k], nonneg=(k == "cost"))
        if out.get("market_size") is not None:
            out["market_size"] = _number(lines, ("model", "market_size"), out["market_size"], positive=True)
        else:
            out.pop("market_size", None)
        if "omega_entry" in out and "omega_bar" in out and out["omega_entry"] > out["omega_bar"]:
            raise lines.error(("model", "omega_entry"), "entry rung exceeds omega_bar")
    if "rho" in out:
        out["rho"] = _number(lines, ("model", "rho"), out["rho"], positive=True)
    return out
