"""Scenario files: a TOML tree with a default for every key and strict rejection of unknown keys."""

from __future__ import annotations

import copy
import hashlib
import json
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

KINDS = ("noise-stats", "kernel-identity", "fraccalc-roundtrip", "girsanov", "flow", "averaging", "bounds", "lemmas")
DRIFTS = ("zero", "linear", "sign-compact", "gauss-bump", "piecewise")


class ScenarioParseError(ValueError):
    """The file is not valid TOML (exit code 2)."""


class ScenarioValidationError(ValueError):
    """The tree parses but names unknown keys or holds invalid values (exit code 3)."""


BASE = {
    "kind": "noise-stats",
    "seed": 0,
    "noise": {"hurst": [0.1], "lambda": [1.0], "dimension": 1},
    "grid": {"horizon": 1.0, "n_steps": 128},
    "mc": {"paths": 2000, "batch": 1000},
    "drift": {
        "name": "zero",
        "amplitude": 1.0,
        "width": 0.5,
        "radius": 1.0,
        "coef": -1.0,
        "edges": [-1.0, 0.0, 1.0],
        "values": [-1.0, 1.0],
        "mollification": 0,
    },
    "output": {"stem": ""},
}

PARAMS = {
    "noise-stats": {"sampler": "volterra", "times": [0.25, 0.5, 1.0], "n_sigma": 4.0},
    "kernel-identity": {"hurst": [0.05, 0.1, 0.2, 0.3, 0.45], "n_pairs": 20, "layers": 20, "rtol": 1e-3},
    "fraccalc-roundtrip": {"alpha": [0.2, 0.5, 0.8], "hurst": [0.1, 0.3], "sizes": [256, 512, 1024, 2048], "tol": 1e-2, "min_order": 0.9},
    "girsanov": {"level": 0, "method": "product", "x0": 0.0, "write_paths": True},
    "flow": {
        "mode": "probe",
        "levels": [4, 16, 64],
        "x_min": -2.0,
        "x_max": 2.0,
        "dx": 0.01,
        "orders": [1, 2],
        "cap_factor": 10.0,
        "baseline": "gauss-bump",
        "substeps": 0,
        "coefs": [-1.0, -0.5, 0.5, 1.0],
        "t0": 0.25,
        "depth": 6,
        "rtol": 1e-4,
    },
    "averaging": {"t": 1.0, "x_min": -1.0, "x_max": 1.0, "n_x": 41, "z_min": -8.0, "z_max": 8.0, "n_z": 3201, "bandwidth": 0.0, "tol": 2e-2},
    "bounds": {"r0": 0, "r": 0, "alpha": [0], "eps": [0], "factor": "gaussian", "theta": 0.25, "t": 1.0, "gamma": 0.0, "holder_eps": 0.2, "mu": 0.1},
    "lemmas": {"which": ["shuffle", "dirichlet", "iterative", "doubleint", "product-moment", "condvar"], "draws": 50, "product_draws": 100},
}


def _merge(defaults, given, path):
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ScenarioValidationError(f"unknown key '{where}'")
        if isinstance(defaults[key], dict):
            if not isinstance(val, dict):
                raise ScenarioValidationError(f"'{where}' must be a table")
            out[key] = _merge(defaults[key], val, where)
        else:
            out[key] = _coerce(defaults[key], val, where)
    return out


def _coerce(default, val, where):
    if isinstance(default, bool):
        if not isinstance(val, bool):
            raise ScenarioValidationError(f"'{where}' must be a boolean")
        return val
    if isinstance(default, int):
        if isinstance(val, bool) or not isinstance(val, int):
            raise ScenarioValidationError(f"'{where}' must be an integer")
        return val
    if isinstance(default, float):
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ScenarioValidationError(f"'{where}' must be a number")
        return float(val)
    if isinstance(default, str):
        if not isinstance(val, str):
            raise ScenarioValidationError(f"'{where}' must be a string")
        return val
    if isinstance(default, list):
        if not isinstance(val, list):
            raise ScenarioValidationError(f"'{where}' must be an array")
        proto = default[0] if default else None
        if proto is not None:
            return [_coerce(proto, v, f"{where}[{i}]") for i, v in enumerate(val)]
        return list(val)
    raise ScenarioValidationError(f"'{where}' has an unsupported type")  # pragma: no cover


def validate(tree):
    """Fill defaults and check every key; returns a new fully resolved tree."""
    if not isinstance(tree, dict):
        raise ScenarioValidationError("a scenario must be a table")
    kind = tree.get("kind", BASE["kind"])
    if kind not in KINDS:
        raise ScenarioValidationError(f"unknown kind '{kind}'; expected one of {', '.join(KINDS)}")
    defaults = copy.deepcopy(BASE)
    defaults["params"] = copy.deepcopy(PARAMS[kind])
    out = _merge(defaults, tree, "")
    if not 0 <= out["seed"] < 2**64:
        raise ScenarioValidationError("seed must be an unsigned 64-bit integer")
    if out["drift"]["name"] not in DRIFTS:
        raise ScenarioValidationError(f"unknown drift '{out['drift']['name']}'")
    if out["grid"]["n_steps"] < 1 or out["grid"]["horizon"] <= 0:
        raise ScenarioValidationError("grid needs n_steps >= 1 and horizon > 0")
    if out["mc"]["paths"] < 2 or out["mc"]["batch"] < 1:
        raise ScenarioValidationError("mc needs paths >= 2 and batch >= 1")
    return out


def parse(text):
    try:
        tree = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioParseError(str(exc)) from exc
    return validate(tree)


def load(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ScenarioParseError(f"cannot read '{path}': {exc}") from exc
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ScenarioParseError(f"'{path}' is not UTF-8") from exc
    return parse(text)


def scenario_hash(tree):
    blob = json.dumps(tree, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# Built-in templates, one per acceptance criterion
# ---------------------------------------------------------------------------

CATALOG = {
    "kernel-covariance": """\
# Quadrature of int K_H(t,u) K_H(s,u) du against R_H(t,s)
kind = "kernel-identity"
seed = 11
[params]
hurst = [0.05, 0.1, 0.2, 0.3, 0.45]
n_pairs = 20
rtol = 1e-3
""",
    "sampler-stats": """\
# Cholesky moments of fBm at H = 0.1 on 128 steps
kind = "noise-stats"
seed = 12
[noise]
hurst = [0.1]
lambda = [1.0]
[grid]
n_steps = 128
[mc]
paths = 20000
batch = 5000
[params]
sampler = "cholesky"
times = [0.25, 0.5, 1.0]
""",
    "regularizing-variance": """\
# Variance of the six-level regularizing process with lambda_n = 2^-n
kind = "noise-stats"
seed = 13
[noise]
hurst = [0.45, 0.35, 0.25, 0.15, 0.08, 0.04]
lambda = [0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625]
[grid]
n_steps = 128
[mc]
paths = 20000
batch = 5000
[params]
times = [0.25, 0.5, 1.0]
""",
    "fraccalc-roundtrip": """\
# D^a I^a sin and K_H^-1 K_H cos under grid halving
kind = "fraccalc-roundtrip"
[params]
alpha = [0.2, 0.5, 0.8]
hurst = [0.1, 0.3]
sizes = [256, 512, 1024, 2048]
""",
    "girsanov-mean": """\
# Mean of the density for a bounded compactly supported drift
kind = "girsanov"
seed = 15
[noise]
hurst = [0.1]
lambda = [1.0]
[grid]
n_steps = 64
[mc]
paths = 100000
batch = 10000
[drift]
name = "sign-compact"
radius = 1.0
[params]
write_paths = false
""",
    "shuffle-identity": """\
# Shuffle product of simplex integrals and multinomial cardinalities
kind = "lemmas"
[params]
which = ["shuffle"]
""",
    "simplex-formulas": """\
# Dirichlet volume, kernel simplex bound and the kernel double integral
kind = "lemmas"
seed = 17
[params]
which = ["dirichlet", "iterative", "doubleint"]
draws = 50
""",
    "malliavin-picard": """\
# Picard truncations against the propagated linear equations
kind = "flow"
[noise]
hurst = [0.3]
lambda = [1.5]
[grid]
n_steps = 16384
[params]
mode = "picard"
coefs = [-1.0, -0.5, 0.5, 1.0]
t0 = 0.25
""",
    "gaussian-lemmas": """\
# Product-moment bound and the conditional-variance identity
kind = "lemmas"
seed = 19
[mc]
paths = 20000
[params]
which = ["product-moment", "condvar"]
product_draws = 100
""",
    "regularization-probe": """\
# Flow derivatives for the mollified sign drift with and without noise
kind = "flow"
seed = 20
[noise]
hurst = [0.4, 0.2, 0.1, 0.05]
lambda = [1.0, 1.0, 1.0, 1.0]
[grid]
n_steps = 512
[mc]
paths = 200
batch = 50
[drift]
name = "sign-compact"
radius = 1.0
[params]
mode = "probe"
levels = [4, 16, 64]
x_min = -2.0
x_max = 2.0
dx = 0.01
orders = [1, 2]
substeps = 16
""",
    "averaging-duality": """\
# Averaging operator of a step drift against its occupation-density pairing
kind = "averaging"
seed = 21
[noise]
hurst = [0.3]
lambda = [1.0]
[grid]
n_steps = 512
[mc]
paths = 20
[drift]
name = "piecewise"
edges = [0.0, 50.0]
values = [1.0]
""",
    "moment-bound": """\
# Simplex moment bound for one Gaussian factor with a derivative
kind = "bounds"
seed = 22
[noise]
hurst = [0.3, 0.2]
lambda = [1.0, 1.0]
[grid]
n_steps = 256
[mc]
paths = 4000
[drift]
name = "gauss-bump"
[params]
r0 = 0
r = 1
alpha = [1]
eps = [0]
""",
}


# acceptance criterion number -> template that exercises it
CRITERIA = {
    1: "kernel-covariance",
    2: "sampler-stats",
    3: "regularizing-variance",
    4: "fraccalc-roundtrip",
    5: "girsanov-mean",
    6: "shuffle-identity",
    7: "simplex-formulas",
    8: "malliavin-picard",
    9: "gaussian-lemmas",
    10: "regularization-probe",
}


def template(name):
    if name not in CATALOG:
        raise KeyError(f"no template '{name}'; available: {', '.join(sorted(CATALOG))}")
    return CATALOG[name]


def list_scenarios():
    """``(name, kind, first comment line)`` for every template."""
    out = []
    for name, text in CATALOG.items():
        tree = parse(text)
        summary = text.splitlines()[0].lstrip("# ").strip()
        out.append((name, tree["kind"], summary))
    return out
