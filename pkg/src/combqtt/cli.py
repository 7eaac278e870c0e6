"""Batch front end: ``run`` a YAML simulation config, ``verify`` acceptance
suites, ``inspect`` a saved state.

Config errors are reported as ``<file>:<line>: <message>`` and exit with
status 2.  Drive functions are arithmetic expressions in ``t`` evaluated by
a small whitelisted interpreter, never by ``eval``.
"""
from __future__ import annotations

import argparse
import ast
import dataclasses
import math
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import scipy
import yaml

from . import serialize
from .lindblad import LindbladModel, evolve_lindblad
from .models import (
    CatParams,
    KerrParams,
    TransmonParams,
    cat_initial_state,
    cat_model,
    kerr_model,
    semiclassical_kerr,
    transmon_cavity_model,
    transmon_initial_state,
    z_gate_error,
)
from .observables import format_columns, wigner, write_json
from .operators import OperatorSum, ProductTerm, local
from .purified import (
    CompressionBudget,
    ModeLayout,
    PurifiedDensityMatrix,
    from_pure_product,
    load_snapshot,
    reduced_density_matrix,
    save_snapshot,
    telemetry,
)
from .quantics import (
    annihilation_mpo,
    annihilation_power_mpo,
    coherent_state_qtt,
    fock_state_qtt,
    number_mpo,
    number_power_mpo,
)
from .schrodinger import TimeDependentHamiltonian, evolve
from .tt import MatrixProductOperator, TensorTrain, TruncationPolicy, apply_mpo, inner, mpo_linear_combination

__all__ = ["ConfigError", "SimulationConfig", "load_config", "parse_drive", "run", "main"]

SCHRODINGER_METHODS = ("rk4", "cn", "tdvp_plain", "tdvp_magnus")
LINDBLAD_SCHEMES = ("order1", "order2")
MODEL_KINDS = ("kerr", "cat", "transmon", "custom")
PARAM_CLASSES = {"kerr": KerrParams, "cat": CatParams, "transmon": TransmonParams}
OPERATOR_NAMES = ("id", "a", "adag", "n", "n2", "x", "p", "a2", "adag2")
# rates that must be strictly positive / non-negative
POSITIVE = {"g2", "kappa_b", "E_C", "EJ_over_EC", "omega_r"}
NON_NEGATIVE = {"kappa_a", "kappa_phi", "kappa", "g", "eps_d", "alpha2", "charge_cutoff"}


class ConfigError(ValueError):
    def __init__(self, message: str, source: str = "<config>", line: int | None = None):
        self.source, self.line = source, line
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


# ---------------------------------------------------------------- drive expressions

_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide, ast.Pow: np.power}
_FUNCS = {"cos": np.cos, "sin": np.sin, "sqrt": np.sqrt}
_NAMES = {"pi": np.pi}


def parse_drive(text: str) -> Callable[[float], float]:
    """Compile sums of terms like ``A*cos(w*t + phi)`` into a callable.

    Allowed: numbers, ``t``, ``pi``, ``+ - * / **``, ``cos``, ``sin``,
    ``sqrt``.  Anything else raises :class:`ValueError`.
    """
    try:
        tree = ast.parse(str(text), mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"drive expression does not parse: {exc.msg}") from None

    def check(node):
        if isinstance(node, ast.Expression):
            check(node.body)
        elif isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            check(node.left)
            check(node.right)
        elif isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            check(node.operand)
        elif isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
                and not isinstance(node.value, bool):
            pass
        elif isinstance(node, ast.Name) and (node.id == "t" or node.id in _NAMES):
            pass
        elif isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS \
                and len(node.args) == 1 and not node.keywords:
            check(node.args[0])
        else:
            raise ValueError(f"drive expression: {type(node).__name__} not allowed")

    check(tree)

    def value(node, t):
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](value(node.left, t), value(node.right, t))
        if isinstance(node, ast.UnaryOp):
            v = value(node.operand, t)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return t if node.id == "t" else _NAMES[node.id]
        return _FUNCS[node.func.id](value(node.args[0], t))

    body = tree.body

    def f(t: float) -> float:
        return float(value(body, float(t)))

    f(0.0)
    return f


# ---------------------------------------------------------------- YAML with line numbers

def _line_map(node, path=(), out=None) -> dict[tuple, int]:
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = k.value
            out[path + (key,)] = k.start_mark.line + 1
            _line_map(v, path + (key,), out)
            out[path + (key,)] = k.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_map(v, path + (i,), out)
    return out


SCHEMA: dict[str, Any] = {
    "model": {"kind": None, "params": "params", "drive": None, "modes": None, "hamiltonian": None,
              "drive_operator": None, "jumps": None, "initial": None},
    "integrator": {"method": None, "h": None, "t_final": None, "output_every": None},
    "budget": {"tol": None, "cap": None, "tol_e": None, "tol_q": None, "tol_mu": None,
               "chi_e_max": None, "chi_q_max": None, "chi_mu_max": None},
    "observables": None,
    "output": {"directory": None, "snapshots": None, "wigner": {"mode": None, "resolution": None,
                                                                "re_range": None, "im_range": None}},
    "seed": None,
}


@dataclass
class SimulationConfig:
    """Resolved configuration; every default is filled in."""

    kind: str
    params: dict
    method: str
    h: float
    t_final: float
    output_every: int
    budget: dict
    observables: list[str]
    drive: str | None = None
    custom: dict = field(default_factory=dict)
    snapshots: list[float] = field(default_factory=list)
    wigner: dict | None = None
    directory: str | None = None
    seed: int = 0
    source: str = "<config>"

    @property
    def open_system(self) -> bool:
        return self.method in LINDBLAD_SCHEMES

    def resolved(self) -> dict:
        out = dataclasses.asdict(self)
        out.pop("source")
        return out


class _Reader:
    def __init__(self, data, lines: dict, source: str):
        self.data, self.lines, self.source = data, lines, source

    def error(self, message: str, path: tuple = ()) -> ConfigError:
        while path and path not in self.lines:
            path = path[:-1]
        return ConfigError(message, self.source, self.lines.get(path))

    def get(self, path: tuple, default=None):
        node = self.data
        for key in path:
            if isinstance(node, dict) and key in node:
                node = node[key]
            elif isinstance(node, list) and isinstance(key, int) and key < len(node):
                node = node[key]
            else:
                return default
        return node

    def check_keys(self, node, schema, path=()):
        if schema is None or schema == "params":
            return
        if not isinstance(node, dict):
            raise self.error(f"{'.'.join(map(str, path)) or 'config'} must be a mapping", path)
        for key, val in node.items():
            if key not in schema:
                allowed = ", ".join(sorted(schema))
                raise self.error(f"unknown key {key!r} in {'.'.join(map(str, path)) or 'config'} "
                                 f"(allowed: {allowed})", path + (key,))
            self.check_keys(val, schema[key], path + (key,))

    def number(self, path, default=None, positive=False, integer=False):
        val = self.get(path, default)
        if val is None:
            raise self.error(f"missing required key {'.'.join(map(str, path))}", path)
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise self.error(f"{'.'.join(map(str, path))} must be a number, got {val!r}", path)
        if integer and int(val) != val:
            raise self.error(f"{'.'.join(map(str, path))} must be an integer", path)
        if positive and not val > 0:
            raise self.error(f"{'.'.join(map(str, path))} must be positive", path)
        return int(val) if integer else float(val)


def _complex(val) -> complex:
    if isinstance(val, (list, tuple)) and len(val) == 2:
        return complex(float(val[0]), float(val[1]))
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise TypeError(f"expected a number or [re, im], got {val!r}")
    return complex(val)


def _convert_params(reader: _Reader, kind: str) -> dict:
    cls = PARAM_CLASSES[kind]
    raw = reader.get(("model", "params"), {}) or {}
    if not isinstance(raw, dict):
        raise reader.error("model.params must be a mapping", ("model", "params"))
    fields = {f.name: f for f in dataclasses.fields(cls)}
    out = {}
    for key, val in raw.items():
        path = ("model", "params", key)
        if key not in fields:
            raise reader.error(f"unknown parameter {key!r} for {kind} (allowed: {', '.join(fields)})", path)
        default = fields[key].default
        try:
            if val is None:
                conv = None
            elif isinstance(default, tuple):
                conv = tuple(float(v) for v in val)
            elif isinstance(default, complex) or key == "alpha0":
                conv = _complex(val)
            elif isinstance(default, bool):
                conv = bool(val)
            elif isinstance(default, int) and not isinstance(default, bool):
                if isinstance(val, bool) or int(val) != val:
                    raise TypeError(f"expected an integer, got {val!r}")
                conv = int(val)
            else:
                if isinstance(val, bool) or not isinstance(val, (int, float)):
                    raise TypeError(f"expected a number, got {val!r}")
                conv = float(val)
        except (TypeError, ValueError) as exc:
            raise reader.error(f"parameter {key}: {exc}", path) from None
        if key in POSITIVE and not (conv is not None and conv > 0):
            raise reader.error(f"parameter {key} must be positive", path)
        if key in NON_NEGATIVE and conv is not None and conv < 0:
            raise reader.error(f"parameter {key} must be non-negative", path)
        out[key] = conv
    try:
        obj = cls(**out)
    except (TypeError, ValueError) as exc:
        raise reader.error(str(exc), ("model", "params")) from None
    resolved = dataclasses.asdict(obj)
    for k, v in resolved.items():
        if isinstance(v, complex):
            resolved[k] = [v.real, v.imag]
        elif isinstance(v, tuple):
            resolved[k] = list(v)
    return resolved


def _check_terms(reader: _Reader, path: tuple, names: Sequence[str], required: bool) -> list:
    terms = reader.get(path)
    if terms is None:
        if required:
            raise reader.error(f"missing required key {'.'.join(path)}", path)
        return []
    if not isinstance(terms, list):
        raise reader.error(f"{'.'.join(path)} must be a list of terms", path)
    out = []
    for i, term in enumerate(terms):
        p = path + (i,)
        if not isinstance(term, dict) or set(term) - {"coef", "ops"}:
            raise reader.error("a term is a mapping with keys coef and ops", p)
        try:
            coef = _complex(term.get("coef", 1.0))
        except TypeError as exc:
            raise reader.error(str(exc), p + ("coef",)) from None
        ops = term.get("ops", {}) or {}
        if not isinstance(ops, dict):
            raise reader.error("ops must map mode names to operator names", p)
        for mode, op in ops.items():
            if mode not in names:
                raise reader.error(f"unknown mode {mode!r} (modes: {', '.join(names)})", p + ("ops", mode))
            if op not in OPERATOR_NAMES:
                raise reader.error(f"unknown operator {op!r} (allowed: {', '.join(OPERATOR_NAMES)})",
                                   p + ("ops", mode))
        out.append({"coef": [coef.real, coef.imag], "ops": dict(ops)})
    return out


def _custom_section(reader: _Reader) -> dict:
    modes = reader.get(("model", "modes"))
    if not isinstance(modes, list) or not modes:
        raise reader.error("custom model needs a non-empty model.modes list", ("model", "modes"))
    names, bits = [], []
    for i, m in enumerate(modes):
        p = ("model", "modes", i)
        if not isinstance(m, dict) or set(m) - {"name", "bits"} or "name" not in m or "bits" not in m:
            raise reader.error("each mode is a mapping with name and bits", p)
        if m["name"] in names:
            raise reader.error(f"duplicate mode name {m['name']!r}", p)
        b = m["bits"]
        if isinstance(b, bool) or not isinstance(b, int) or not 1 <= b <= 30:
            raise reader.error("bits must be an integer in [1, 30]", p + ("bits",))
        names.append(str(m["name"]))
        bits.append(int(b))
    initial = reader.get(("model", "initial"), {}) or {}
    if not isinstance(initial, dict):
        raise reader.error("model.initial must map mode names to states", ("model", "initial"))
    init = {}
    for name in names:
        spec = initial.get(name, {"fock": 0})
        p = ("model", "initial", name)
        if not isinstance(spec, dict) or len(spec) != 1 or next(iter(spec)) not in ("fock", "coherent"):
            raise reader.error("initial state is {fock: n} or {coherent: [re, im]}", p)
        kind, val = next(iter(spec.items()))
        try:
            init[name] = {kind: int(val) if kind == "fock" else list(np.array([_complex(val)]).view(float))}
        except (TypeError, ValueError) as exc:
            raise reader.error(str(exc), p) from None
    for name in initial:
        if name not in names:
            raise reader.error(f"unknown mode {name!r} in model.initial", ("model", "initial", name))
    return {
        "modes": [{"name": n, "bits": b} for n, b in zip(names, bits)],
        "hamiltonian": _check_terms(reader, ("model", "hamiltonian"), names, True),
        "drive_operator": _check_terms(reader, ("model", "drive_operator"), names, False),
        "jumps": _check_terms(reader, ("model", "jumps"), names, False),
        "initial": init,
    }


def load_config(path: str | Path | None = None, text: str | None = None) -> SimulationConfig:
    """Parse and validate a YAML config; raises :class:`ConfigError`."""
    source = str(path) if path is not None else "<config>"
    if text is None:
        text = Path(path).read_text()
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ConfigError(f"YAML syntax error: {exc.problem}", source, line) from None
    if root is None or not isinstance(data, dict):
        raise ConfigError("config must be a mapping", source, 1)
    reader = _Reader(data, _line_map(root), source)
    reader.check_keys(data, SCHEMA)

    kind = reader.get(("model", "kind"))
    if kind not in MODEL_KINDS:
        raise reader.error(f"model.kind must be one of {', '.join(MODEL_KINDS)}, got {kind!r}", ("model", "kind"))
    params, custom = {}, {}
    if kind == "custom":
        if reader.get(("model", "params")) is not None:
            raise reader.error("custom models take no model.params", ("model", "params"))
        custom = _custom_section(reader)
    else:
        for key in ("modes", "hamiltonian", "drive_operator", "jumps", "initial"):
            if reader.get(("model", key)) is not None:
                raise reader.error(f"model.{key} is only valid for custom models", ("model", key))
        params = _convert_params(reader, kind)

    drive = reader.get(("model", "drive"))
    if drive is not None:
        if kind not in ("kerr", "custom"):
            raise reader.error(f"model.drive is not configurable for {kind}", ("model", "drive"))
        try:
            parse_drive(drive)
        except ValueError as exc:
            raise reader.error(str(exc), ("model", "drive")) from None
        drive = str(drive)

    default_method = {"kerr": "tdvp_magnus", "cat": "order2", "transmon": "order2"}.get(
        kind, "order2" if custom.get("jumps") else "rk4")
    method = reader.get(("integrator", "method"), default_method)
    allowed = LINDBLAD_SCHEMES if kind in ("cat", "transmon") else \
        (SCHRODINGER_METHODS if kind == "kerr" else SCHRODINGER_METHODS + LINDBLAD_SCHEMES)
    if method not in allowed:
        raise reader.error(f"integrator.method for {kind} must be one of {', '.join(allowed)}",
                           ("integrator", "method"))
    if kind == "custom" and method in SCHRODINGER_METHODS:
        if custom["jumps"]:
            raise reader.error("a model with jumps needs a Lindblad scheme (order1 or order2)",
                               ("integrator", "method"))
        if len(custom["modes"]) != 1:
            raise reader.error("closed-system methods support a single mode; use order1/order2",
                               ("integrator", "method"))
    h = reader.number(("integrator", "h"), positive=True)
    t_final = reader.number(("integrator", "t_final"), positive=True)
    every = reader.number(("integrator", "output_every"), 1, positive=True, integer=True)

    budget = reader.get(("budget",), {}) or {}
    res_budget = {}
    for key in SCHEMA["budget"]:
        if key in budget:
            positive = key != "cap"
            val = reader.number(("budget", key), positive=True, integer=key.endswith("_max") or key == "cap")
            res_budget[key] = val if positive or val else None
    if "tol" in res_budget or "cap" in res_budget:
        tol = res_budget.pop("tol", 1e-8)
        cap = res_budget.pop("cap", None)
        res_budget = {"tol_e": tol, "tol_q": tol, "tol_mu": tol, "chi_e_max": cap, "chi_q_max": cap,
                      "chi_mu_max": cap, **res_budget}
    res_budget = dataclasses.asdict(CompressionBudget(**res_budget))

    obs = reader.get(("observables",), None)
    if obs is None:
        obs = []
    if not isinstance(obs, list) or not all(isinstance(o, str) for o in obs):
        raise reader.error("observables must be a list of names", ("observables",))
    mode_names = _mode_names(kind, custom)
    for i, o in enumerate(obs):
        try:
            _split_observable(o, mode_names)
        except ValueError as exc:
            raise reader.error(str(exc), ("observables", i)) from None

    snaps = reader.get(("output", "snapshots"), []) or []
    if not isinstance(snaps, list):
        raise reader.error("output.snapshots must be a list of times", ("output", "snapshots"))
    snapshots = [reader.number(("output", "snapshots", i)) for i in range(len(snaps))]
    wig = reader.get(("output", "wigner"))
    if wig is not None:
        if not isinstance(wig, dict):
            raise reader.error("output.wigner must be a mapping", ("output", "wigner"))
        mode = wig.get("mode", mode_names[-1])
        if mode not in mode_names:
            raise reader.error(f"unknown mode {mode!r} for the Wigner function", ("output", "wigner", "mode"))
        wig = {"mode": mode,
               "resolution": reader.number(("output", "wigner", "resolution"), 101, positive=True, integer=True),
               "re_range": list(map(float, wig.get("re_range", [-13.0, 2.0]))),
               "im_range": list(map(float, wig.get("im_range", [0.0, 15.0])))}
    seed = reader.number(("seed",), 0, integer=True)
    return SimulationConfig(kind, params, method, h, t_final, every, res_budget, list(obs), drive, custom,
                            snapshots, wig, reader.get(("output", "directory")), seed, source)


# ---------------------------------------------------------------- model construction

def _mode_names(kind: str, custom: dict) -> list[str]:
    if kind == "kerr":
        return ["a"]
    if kind == "cat":
        return ["a", "b"]
    if kind == "transmon":
        return ["t", "c"]
    return [m["name"] for m in custom["modes"]]


def _split_observable(name: str, modes: Sequence[str]) -> tuple[str, str]:
    op, sep, mode = name.partition("_")
    if not sep or op not in OPERATOR_NAMES or mode not in modes:
        raise ValueError(f"observable {name!r} is not <op>_<mode> with op in {', '.join(OPERATOR_NAMES)} "
                         f"and mode in {', '.join(modes)}")
    return op, mode


def named_operator(name: str, R: int) -> MatrixProductOperator:
    pol = TruncationPolicy(1e-14)
    if name == "id":
        return MatrixProductOperator.identity((2,) * R)
    if name == "a":
        return annihilation_mpo(R)
    if name == "adag":
        return annihilation_mpo(R).adjoint()
    if name == "n":
        return number_mpo(R)
    if name == "n2":
        return mpo_linear_combination([(1.0, number_power_mpo(R, 2)), (1.0, number_mpo(R))], pol)
    if name == "a2":
        return annihilation_power_mpo(R, 2)
    if name == "adag2":
        return annihilation_power_mpo(R, 2).adjoint()
    a = annihilation_mpo(R)
    if name == "x":
        return mpo_linear_combination([(1.0, a), (1.0, a.adjoint())], pol)
    if name == "p":
        return mpo_linear_combination([(-1j, a), (1j, a.adjoint())], pol)
    raise ValueError(f"unknown operator {name!r}")


def _terms_to_sum(terms: list, names: list[str], bits: list[int]) -> OperatorSum:
    out = []
    for term in terms:
        coef = complex(*term["coef"])
        factors = tuple((names.index(m), named_operator(op, bits[names.index(m)])) for m, op in term["ops"].items())
        out.append(ProductTerm(coef, factors))
    return OperatorSum(out).simplify()


@dataclass
class BuiltModel:
    layout: ModeLayout
    hamiltonian: TimeDependentHamiltonian | None = None
    lindblad: LindbladModel | None = None
    psi0: TensorTrain | None = None
    rho0: PurifiedDensityMatrix | None = None
    info: dict = field(default_factory=dict)


def build(cfg: SimulationConfig) -> BuiltModel:
    if cfg.kind == "kerr":
        p = KerrParams(**{k: (complex(*v) if k == "alpha0" else tuple(v) if isinstance(v, list) else v)
                          for k, v in cfg.params.items()})
        H, psi0 = kerr_model(p)
        if cfg.drive is not None:
            a2 = annihilation_power_mpo(p.R, 2)
            h1 = mpo_linear_combination([(1.0, a2), (1.0, a2.adjoint())], TruncationPolicy(1e-14))
            H = TimeDependentHamiltonian(H.h0, h1, parse_drive(cfg.drive))
        return BuiltModel(ModeLayout((p.R,), names=("a",)), hamiltonian=H, psi0=psi0, info={"params": p})
    if cfg.kind == "cat":
        p = CatParams(**cfg.params)
        model = cat_model(p)
        return BuiltModel(model.layout, lindblad=model, rho0=cat_initial_state(p),
                          info={"params": p, "gate_time": p.gate_time, "adiabatic_ratio": p.adiabatic_ratio})
    if cfg.kind == "transmon":
        p = TransmonParams(**cfg.params)
        model, basis, omega_d = transmon_cavity_model(p)
        return BuiltModel(model.layout, lindblad=model, rho0=transmon_initial_state(p),
                          info={"params": p, "omega_d_ghz": omega_d, "transmon_frequency_ghz": basis.frequency_ghz,
                                "transmon_mpo_ranks": dict(basis.ranks)})
    names = [m["name"] for m in cfg.custom["modes"]]
    bits = [m["bits"] for m in cfg.custom["modes"]]
    layout = ModeLayout(tuple(bits), names=tuple(names))
    h0 = _terms_to_sum(cfg.custom["hamiltonian"], names, bits)
    h1 = _terms_to_sum(cfg.custom["drive_operator"], names, bits) if cfg.custom["drive_operator"] else None
    drive = parse_drive(cfg.drive) if cfg.drive is not None and h1 is not None else None
    states = []
    for name, R in zip(names, bits):
        kind, val = next(iter(cfg.custom["initial"][name].items()))
        states.append(fock_state_qtt(val, R) if kind == "fock" else coherent_state_qtt(complex(*val), R))
    if cfg.open_system:
        jumps = tuple(_terms_to_sum([j], names, bits) for j in cfg.custom["jumps"])
        model = LindbladModel(h0, jumps, layout, h1, drive, name="custom")
        return BuiltModel(layout, lindblad=model, rho0=from_pure_product(states, layout))
    mpo0 = _single_mode_mpo(h0, bits[0])
    mpo1 = _single_mode_mpo(h1, bits[0]) if h1 is not None else None
    H = TimeDependentHamiltonian(mpo0, mpo1 if drive else None, drive)
    return BuiltModel(layout, hamiltonian=H, psi0=states[0])


def _single_mode_mpo(op: OperatorSum, R: int) -> MatrixProductOperator:
    ident = MatrixProductOperator.identity((2,) * R)
    terms = [(t.coef, t.factor(0) if t.factors else ident) for t in op]
    return mpo_linear_combination(terms, TruncationPolicy(1e-14))


# ---------------------------------------------------------------- run

def _versions() -> dict:
    from importlib import metadata

    try:
        own = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"combqtt": own, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "pyyaml": yaml.__version__}


def _output_grid(cfg: SimulationConfig) -> tuple[np.ndarray, int]:
    steps = max(1, int(round(cfg.t_final / cfg.h)))
    every = min(cfg.output_every, steps)
    intervals = int(math.ceil(steps / every))
    h = cfg.t_final / (intervals * every)
    return np.linspace(0.0, intervals * every * h, intervals + 1), every


def run(cfg: SimulationConfig, out_dir: str | Path) -> int:
    """Execute ``cfg`` and write outputs to ``out_dir``; returns an exit status."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.random.seed(cfg.seed)
    start = time.perf_counter()
    built = build(cfg)
    grid, every = _output_grid(cfg)
    names = list(built.layout.names)
    manifest: dict[str, Any] = {"config": cfg.resolved(), "versions": _versions(),
                                "resolved_step": float(grid[1] - grid[0]) / every if len(grid) > 1 else cfg.h,
                                "outputs": {}, "results": {}}
    for key in ("gate_time", "adiabatic_ratio", "omega_d_ghz", "transmon_frequency_ghz", "transmon_mpo_ranks"):
        if key in built.info:
            manifest["results"][key] = built.info[key]
    snaps_dir = out / "snapshots"
    pending = sorted(cfg.snapshots)
    final_state = None
    failed, error = False, None
    if cfg.open_system:
        ops = {o: local(names.index(m), named_operator(op, built.layout.bits[names.index(m)]))
               for o in cfg.observables for op, m in [_split_observable(o, names)]}
        written = []
        last: list[PurifiedDensityMatrix] = []

        def callback(t, state):
            nonlocal pending
            last[:] = [state]
            while pending and pending[0] <= t + 0.5 * cfg.h:
                snaps_dir.mkdir(exist_ok=True)
                path = snaps_dir / f"state_t{t:.6g}.bin"
                save_snapshot(path, state)
                written.append(str(path.relative_to(out)))
                pending = pending[1:]

        traj = evolve_lindblad(built.lindblad, built.rho0, grid, cfg.method,
                               CompressionBudget(**cfg.budget), ops, substeps=every, keep_states=False,
                               callback=callback)
        final_state = last[0] if last else None
        failed, error = traj.failed, traj.error
        columns = traj.columns()
        manifest["outputs"]["snapshots"] = written
        if cfg.kind == "cat" and not failed:
            p = built.info["params"]
            manifest["results"]["p_Z"] = z_gate_error(p, final_state)
            manifest["results"]["p_Z_time"] = float(grid[-1])
            manifest["results"]["p_Z_reference"] = math.pi / (40.0 * p.alpha2**1.5)
    else:
        columns, final_state, failed, error, written = _run_closed(cfg, built, grid, every, snaps_dir, pending)
        manifest["outputs"]["snapshots"] = [str(Path(w).relative_to(out)) for w in written]
    (out / "trajectory.dat").write_text(format_columns(columns))
    manifest["outputs"]["trajectory"] = "trajectory.dat"
    if cfg.wigner and final_state is not None:
        mode = names.index(cfg.wigner["mode"])
        if isinstance(final_state, PurifiedDensityMatrix):
            rho = reduced_density_matrix(final_state, mode)
        else:
            v = final_state.to_dense()
            rho = np.outer(v, v.conj())
        grid_w = wigner(rho / np.trace(rho).real, cfg.wigner["re_range"], cfg.wigner["im_range"],
                        cfg.wigner["resolution"])
        grid_w.write(out / "wigner.dat")
        manifest["outputs"]["wigner"] = "wigner.dat"
    manifest["status"] = "failed" if failed else "ok"
    manifest["error"] = error
    manifest["wall_time"] = time.perf_counter() - start
    write_json(out / "manifest.json", manifest)
    return 1 if failed else 0


def _run_closed(cfg, built, grid, every, snaps_dir, pending):
    H, psi = built.hamiltonian, built.psi0
    R = built.layout.bits[0]
    ops = {o: named_operator(_split_observable(o, ["a"] if cfg.kind == "kerr" else list(built.layout.names))[0], R)
           for o in cfg.observables}
    policy = TruncationPolicy(cfg.budget["tol_q"], cfg.budget["chi_q_max"])
    cols = {"t": [], "norm": [], "max_chi_q": []}
    vals = {o: [] for o in ops}
    written = []
    failed, error = False, None

    def record(t, state):
        nonlocal pending
        cols["t"].append(t)
        cols["norm"].append(float(np.sqrt(abs(_inner(state, state)))))
        cols["max_chi_q"].append(float(state.max_bond))
        for o, op in ops.items():
            vals[o].append(_inner(state, apply_mpo(op, state, "exact")))
        while pending and pending[0] <= t + 0.5 * cfg.h:
            snaps_dir.mkdir(exist_ok=True)
            path = snaps_dir / f"state_t{t:.6g}.bin"
            serialize.save(path, state)
            written.append(str(path))
            pending = pending[1:]

    record(float(grid[0]), psi)
    try:
        for k in range(len(grid) - 1):
            sub = np.linspace(grid[k], grid[k + 1], every + 1)
            traj = evolve(H, psi, sub, cfg.method, policy)
            psi = traj.states[-1]
            record(float(grid[k + 1]), psi)
    except Exception as exc:  # noqa: BLE001 - any integrator failure ends the run with partial output
        failed, error = True, f"{type(exc).__name__}: {exc}"
    columns = [("t", np.array(cols["t"]))]
    for o, v in vals.items():
        v = np.array(v, dtype=complex)
        columns += [(f"re_{o}", v.real), (f"im_{o}", v.imag)]
    if cfg.kind == "kerr" and not failed:
        alpha = semiclassical_kerr(built.info["params"], np.array(cols["t"]))
        columns += [("re_alpha_semiclassical", alpha.real), ("im_alpha_semiclassical", alpha.imag)]
    columns += [("norm", np.array(cols["norm"])), ("max_chi_q", np.array(cols["max_chi_q"]))]
    return columns, psi, failed, error, written


def _inner(a: TensorTrain, b: TensorTrain) -> complex:
    return complex(inner(a, b))


# ---------------------------------------------------------------- verify and inspect

def verify(suite: str) -> int:
    from .acceptance import SUITES, run_suite

    if suite not in SUITES:
        print(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}", file=sys.stderr)
        return 2
    results = run_suite(suite, stream=sys.stdout)
    return 0 if all(r.passed for r in results) else 1


def inspect(path: str | Path) -> int:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        state = load_snapshot(path)
    except (ValueError, KeyError):
        obj = serialize.from_bytes(data)
        kind = "mpo" if isinstance(obj, MatrixProductOperator) else "tensor-train"
        print(f"kind: {kind}")
        print(f"sites: {len(obj.cores)}")
        print(f"max_bond: {obj.max_bond}")
        print(f"elements: {sum(c.size for c in obj.cores)}")
        return 0
    print("kind: purified")
    print(f"modes: {', '.join(f'{n}({b} bits, {basis})' for n, b, basis in zip(state.layout.names, state.layout.bits, state.layout.basis))}")
    for key, val in telemetry(state).items():
        print(f"{key}: {val}")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="combqtt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)
    p_run = sub.add_parser("run", help="run a simulation config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None, help="output directory (default: output.directory or ./out)")
    p_ver = sub.add_parser("verify", help="run an acceptance suite")
    p_ver.add_argument("--suite", required=True)
    p_ins = sub.add_parser("inspect", help="print telemetry of a saved state")
    p_ins.add_argument("--snapshot", required=True)
    args = parser.parse_args(argv)
    if args.verb == "run":
        try:
            cfg = load_config(args.config)
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        try:
            return run(cfg, args.out or cfg.directory or "out")
        except (ValueError, MemoryError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
    if args.verb == "verify":
        return verify(args.suite)
    return inspect(args.snapshot)


if __name__ == "__main__":
    sys.exit(main())
