"""YAML scenario configuration: schema, defaults, validation and custom-setup parsing.

A config file has three top-level keys::

    scenario: heat-leak            # correlated-heat-flow | heat-leak | dephasing-bounds
                                   # | lazy-demon | custom
    parameters: {gamma: 0.001}     # flat overrides; omitted keys take the defaults
    output: {format: both, path: out, series: [dB_a5, dB_a6]}

Unknown keys anywhere are rejected. A JSON report written by the CLI can be fed
back as a config: its ``config`` entry holds exactly this structure with every
parameter resolved.
"""

from __future__ import annotations

import inspect
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
import yaml

from . import scenarios
from .dynamics import LazyFeedback, LindbladSegment, MixtureOfUnitaries, Unitary
from .errors import PassivityError, PauliTermError
from .linalg import (
    SIGMA_MINUS,
    SIGMA_PLUS,
    PAULI,
    HermitianOperator,
    build_pauli_operator,
    embed_local,
    parse_pauli_term,
    unitary_from_hamiltonian,
)
from .states import (
    MICROBATH,
    SYSTEM,
    SetupDescriptor,
    SubsystemSpec,
    coupled_thermal_state,
    gibbs_state,
    product_initial_state,
)


class ConfigError(PassivityError, ValueError):
    """The configuration does not parse or validate."""


TOP_KEYS = {"scenario", "parameters", "output"}
OUTPUT_KEYS = {"format", "path", "series"}
FORMATS = ("csv", "json", "both")


def _defaults_of(fn: Callable, **overrides) -> dict:
    out = {}
    for name, p in inspect.signature(fn).parameters.items():
        out[name] = p.default
    out.update(overrides)
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in out.items()}


SCENARIO_RUNNERS: dict[str, Callable] = {
    "correlated-heat-flow": scenarios.correlated_heat_flow,
    "heat-leak": scenarios.heat_leak_detection,
    "dephasing-bounds": scenarios.dephasing_bounds,
    "lazy-demon": scenarios.lazy_demon,
}

DEFAULTS: dict[str, dict] = {
    "correlated-heat-flow": _defaults_of(scenarios.correlated_heat_flow),
    "heat-leak": _defaults_of(scenarios.heat_leak_detection),
    "dephasing-bounds": _defaults_of(scenarios.dephasing_bounds),
    "lazy-demon": _defaults_of(scenarios.lazy_demon, alphas=[float(a) for a in scenarios.default_alpha_grid()]),
    "custom": {
        "sites": None,
        "subsystems": None,
        "system_state": None,
        "initial_coupling": None,
        "coupled_bath": None,
        "protocol": [],
        "t_steps": 100,
        "alphas": [1.0],
        "b_reference": "ground",
        "reports": ["ci", "alpha"],
    },
}

# parameters that may be absent (None) after defaults are applied
_NULLABLE = {"system_state", "initial_coupling", "coupled_bath"}


@dataclass
class ScenarioConfig:
    scenario: str
    parameters: dict
    output: dict = field(default_factory=lambda: {"format": "both", "path": ".", "series": None})

    def record(self) -> dict:
        """The resolved config as plain data; re-loading it reproduces the run."""
        return {"scenario": self.scenario, "parameters": _plain(self.parameters)}


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_plain(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def _coerce(key: str, value, default):
    """Check ``value`` against the type of ``default`` and normalize it."""
    if value is None:
        if default is None or key in _NULLABLE:
            return None
        raise ConfigError(f"parameter {key!r} must not be null")
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"parameter {key!r} must be true or false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"parameter {key!r} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"parameter {key!r} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"parameter {key!r} must be a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"parameter {key!r} must be a list, got {value!r}")
        if default and all(isinstance(d, (int, float)) and not isinstance(d, bool) for d in default):
            out = []
            for v in value:
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise ConfigError(f"parameter {key!r} must be a list of numbers, got {value!r}")
                out.append(float(v))
            return out
        return list(value)
    return value


def build_config(data: Any, source: str = "<config>") -> ScenarioConfig:
    """Validate a parsed config mapping (or a CLI JSON report) and apply defaults."""
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    if "config" in data and "series" in data:
        data = data["config"]
    unknown = set(data) - TOP_KEYS
    if unknown:
        raise ConfigError(f"{source}: unknown top-level key(s) {sorted(unknown)}; allowed {sorted(TOP_KEYS)}")
    scenario = data.get("scenario")
    if scenario not in DEFAULTS:
        raise ConfigError(f"{source}: key 'scenario' must be one of {sorted(DEFAULTS)}, got {scenario!r}")
    params_in = data.get("parameters") or {}
    if not isinstance(params_in, dict):
        raise ConfigError(f"{source}: key 'parameters' must be a mapping")
    defaults = DEFAULTS[scenario]
    unknown = set(params_in) - set(defaults)
    if unknown:
        raise ConfigError(
            f"{source}: unknown parameter(s) {sorted(unknown)} for scenario {scenario!r}; allowed {sorted(defaults)}"
        )
    params = {}
    for k, d in defaults.items():
        params[k] = _coerce(k, params_in[k], d) if k in params_in else (list(d) if isinstance(d, list) else d)
    out_in = data.get("output") or {}
    if not isinstance(out_in, dict):
        raise ConfigError(f"{source}: key 'output' must be a mapping")
    unknown = set(out_in) - OUTPUT_KEYS
    if unknown:
        raise ConfigError(f"{source}: unknown output key(s) {sorted(unknown)}; allowed {sorted(OUTPUT_KEYS)}")
    output = {"format": "both", "path": ".", "series": None}
    output.update(out_in)
    if output["format"] not in FORMATS:
        raise ConfigError(f"{source}: output.format must be one of {FORMATS}, got {output['format']!r}")
    cfg = ScenarioConfig(scenario, params, output)
    if scenario == "custom":
        parse_custom(params)
    return cfg


def load_config(path: str | Path) -> ScenarioConfig:
    """Read and validate a YAML (or JSON) config file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"{path}: YAML parse error{where}: {getattr(exc, 'problem', exc)}") from exc
    return build_config(data if data is not None else {}, str(path))


def parse_override(text: str) -> tuple[str, Any]:
    """``key=value`` with the value parsed as YAML (``alphas=[1, 2]``, ``C=-0.1``)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must have the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {text!r}: cannot parse value") from exc
    return key.strip(), value


def run_config(cfg: ScenarioConfig) -> scenarios.ScenarioResult:
    """Execute a validated config."""
    p = dict(cfg.parameters)
    if cfg.scenario == "custom":
        setup, rho0, steps = parse_custom(p)
        return scenarios.custom_protocol(
            setup, rho0, steps, _plain(p), t_steps=p["t_steps"], alphas=p["alphas"],
            b_reference=p["b_reference"], reports=p["reports"],
        )
    return SCENARIO_RUNNERS[cfg.scenario](**p)


# --------------------------------------------------------------------------- custom setups

_JUMP_OPS = {"minus": SIGMA_MINUS, "plus": SIGMA_PLUS, "X": PAULI["X"], "Y": PAULI["Y"], "Z": PAULI["Z"]}


def _terms(raw, where: str, num_sites: int):
    """Parse ``[[coef, "Z0 Z3"], ...]`` into Pauli terms, checking sites."""
    if not isinstance(raw, list):
        raise ConfigError(f"{where}: expected a list of [coefficient, 'X0 Z1'] pairs")
    out = []
    for item in raw:
        if not isinstance(item, (list, tuple)) or len(item) != 2:
            raise ConfigError(f"{where}: term {item!r} must be a [coefficient, factors] pair")
        coef, spec = item
        try:
            term = parse_pauli_term(float(coef), str(spec or ""))
        except (PauliTermError, ValueError) as exc:
            raise ConfigError(f"{where}: malformed Pauli term {spec!r}: {exc}") from exc
        for site, _ in term.factors:
            if site >= num_sites:
                raise ConfigError(f"{where}: Pauli term {spec!r} references site {site} but the setup has {num_sites} sites")
        out.append(term)
    return out


def _operator(raw, where: str, num_sites: int) -> HermitianOperator:
    return build_pauli_operator(_terms(raw, where, num_sites), num_sites)


def _need(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"{where}: missing key {key!r}")
    return d[key]


def _check_keys(d: dict, allowed: set, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a mapping")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}; allowed {sorted(allowed)}")


def parse_custom(p: dict):
    """Turn custom-scenario parameters into ``(setup, rho0, steps)``.

    Subsystems are contiguous site blocks in ascending order; their Hamiltonians use
    global site labels. Sites are qubits.
    """
    n = p.get("sites")
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise ConfigError("custom: 'sites' must be a positive integer")
    blocks = p.get("subsystems")
    if not isinstance(blocks, list) or not blocks:
        raise ConfigError("custom: 'subsystems' must be a non-empty list")
    subs = []
    next_site = 0
    for k, blk in enumerate(blocks):
        where = f"custom.subsystems[{k}]"
        _check_keys(blk, {"name", "sites", "role", "beta", "hamiltonian"}, where)
        sites = list(_need(blk, "sites", where))
        if sites != list(range(next_site, next_site + len(sites))) or not sites:
            raise ConfigError(f"{where}: sites must be a contiguous ascending block starting at {next_site}")
        next_site += len(sites)
        terms = _terms(blk.get("hamiltonian", []), where, n)
        local = []
        for t in terms:
            if any(s not in sites for s, _ in t.factors):
                raise ConfigError(f"{where}: Hamiltonian term {t.label()!r} acts outside sites {sites}")
            local.append(type(t)(t.coefficient, tuple((s - sites[0], a) for s, a in t.factors)))
        h = build_pauli_operator(local, len(sites))
        role = blk.get("role", MICROBATH)
        try:
            subs.append(SubsystemSpec(str(_need(blk, "name", where)), h, role, blk.get("beta")))
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from exc
    if next_site != n:
        raise ConfigError(f"custom: subsystems cover {next_site} sites, expected {n}")
    coupling = p.get("initial_coupling")
    h_i0 = _operator(coupling, "custom.initial_coupling", n) if coupling else None
    try:
        setup = SetupDescriptor(subs, initial_coupling=h_i0, coupled_bath=p.get("coupled_bath"))
    except ValueError as exc:
        raise ConfigError(f"custom: {exc}") from exc
    dims = setup.dims
    if h_i0 is not None:
        h_i0 = HermitianOperator(h_i0.matrix, dims)
        setup.initial_coupling = h_i0
        rho0 = coupled_thermal_state(setup)
    else:
        sys_state = None
        sys_idx = [i for i, s in enumerate(subs) if s.role == SYSTEM]
        if sys_idx:
            spec = p.get("system_state")
            if spec is None:
                raise ConfigError("custom: a system subsystem needs 'system_state' ({beta: ..., hamiltonian: ...})")
            _check_keys(spec, {"beta", "hamiltonian"}, "custom.system_state")
            beta = float(_need(spec, "beta", "custom.system_state"))
            nsys = sum(int(round(np.log2(subs[i].dim))) for i in sys_idx)
            if "hamiltonian" in spec:
                hs = _operator(spec["hamiltonian"], "custom.system_state", nsys)
            else:
                hs = subs[sys_idx[0]].local_hamiltonian
                for i in sys_idx[1:]:
                    hs = HermitianOperator(
                        np.kron(hs.matrix, np.eye(subs[i].dim)) + np.kron(np.eye(hs.dim), subs[i].local_hamiltonian.matrix)
                    )
            sys_state = gibbs_state(hs, beta)
        rho0 = product_initial_state(setup, sys_state)
    steps = [_step(s, k, n, dims) for k, s in enumerate(p.get("protocol") or [])]
    if not isinstance(p.get("t_steps"), int) or p["t_steps"] < 1:
        raise ConfigError("custom: 't_steps' must be a positive integer")
    bad = set(p.get("reports") or []) - {"ci", "alpha"}
    if bad:
        raise ConfigError(f"custom: unknown report kind(s) {sorted(bad)}; allowed ['alpha', 'ci']")
    if "ci" in (p.get("reports") or []) and not setup.system_indices:
        raise ConfigError("custom: report 'ci' needs a subsystem with role 'system'")
    return setup, rho0, steps


def _step(s: dict, k: int, n: int, dims):
    where = f"custom.protocol[{k}]"
    if not isinstance(s, dict) or "type" not in s:
        raise ConfigError(f"{where}: each step needs a 'type'")
    kind = s["type"]
    if kind == "unitary":
        _check_keys(s, {"type", "hamiltonian", "duration"}, where)
        h = HermitianOperator(_operator(_need(s, "hamiltonian", where), where, n).matrix, dims)
        return Unitary(h, float(_need(s, "duration", where)))
    if kind == "lindblad":
        _check_keys(s, {"type", "hamiltonian", "jumps", "duration", "dt"}, where)
        h = HermitianOperator(_operator(s.get("hamiltonian", []), where, n).matrix, dims)
        jumps = []
        for j, jd in enumerate(s.get("jumps", [])):
            jw = f"{where}.jumps[{j}]"
            _check_keys(jd, {"site", "op", "rate"}, jw)
            site, op = int(_need(jd, "site", jw)), str(_need(jd, "op", jw))
            if op not in _JUMP_OPS:
                raise ConfigError(f"{jw}: op must be one of {sorted(_JUMP_OPS)}, got {op!r}")
            if not 0 <= site < n:
                raise ConfigError(f"{jw}: site {site} out of range for {n} sites")
            jumps.append((_embed_site(_JUMP_OPS[op], site, n), float(_need(jd, "rate", jw))))
        return LindbladSegment(h, jumps, float(_need(s, "duration", where)), float(s.get("dt", 1e-3)))
    if kind == "mixture":
        _check_keys(s, {"type", "components"}, where)
        comps = []
        for j, c in enumerate(_need(s, "components", where)):
            cw = f"{where}.components[{j}]"
            _check_keys(c, {"p", "hamiltonian", "duration"}, cw)
            h = _operator(_need(c, "hamiltonian", cw), cw, n)
            comps.append((float(_need(c, "p", cw)), unitary_from_hamiltonian(h, float(_need(c, "duration", cw)))))
        return MixtureOfUnitaries(comps)
    if kind == "feedback":
        _check_keys(s, {"type", "source", "target", "chi", "measurement"}, where)
        dim = 2**n
        src, tgt = int(_need(s, "source", where)), int(_need(s, "target", where))
        if not (0 <= src < dim and 0 <= tgt < dim):
            raise ConfigError(f"{where}: source/target must be basis indices below {dim}")
        projs, unis = scenarios.demon_feedback(dim, src, tgt, s.get("measurement", "two"))
        return LazyFeedback(projs, unis, float(_need(s, "chi", where)))
    raise ConfigError(f"{where}: unknown step type {kind!r}; use unitary, lindblad, mixture or feedback")


def _embed_site(op: np.ndarray, site: int, n: int) -> np.ndarray:
    m = embed_local(op, site, [2] * n)
    return m.matrix if isinstance(m, HermitianOperator) else m


def format_number(x) -> str:
    """Locale-independent full-precision scientific notation."""
    if x is None:
        return "nan"
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, ".16e")
