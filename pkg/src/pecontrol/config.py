"""Experiment configuration: one JSON file per run, parse then validate.

Every validation failure names the offending key by dotted path. All
optional keys have documented defaults (see DEFAULTS); CLI overrides
use the same dotted paths.
"""

import copy
import json
from pathlib import Path

import numpy as np

from . import coefficients as coeff_mod
from . import mesh as mesh_mod
from .coefficients import make_coefficients, make_nonlinear_spec, random_smooth_field
from .stepping import IN_ELLIPTIC, IN_PARABOLIC, time_nodes
from .weights import make_weight_params


class ConfigError(ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


DEFAULTS = {
    "mesh": {"dimension": 1, "extents": [1.0], "counts": [100]},
    "region": {"omega": [[0.2, 0.5]], "omega0": [[0.3, 0.4]], "margin_cells": 1},
    "time": {"T": 0.5, "nt": 200},
    "coefficients": {
        "a": 0.0,              # number, or "random_smooth"
        "a_amplitude": 1.0,    # used when a == "random_smooth"
        "a_seed": 7,
        "b": 1.0, "c": 1.0, "d": 0.0,
        "tag": "HYP_C_CONST",
    },
    "nonlinearity": {
        "F0": "sin", "f0": "linear", "F0_scale": 1.0, "f0_scale": 1.0,
        "b": 1.0, "d": 0.0,
    },
    "weights": {"lambda": 2.0, "sigma": 1.0, "K": 1.0, "k_margin": 0.1,
                "alpha0_exponents": None, "s": None},
    "initial": {"y0": "sin", "y0_amplitude": 1.0, "z0": "sin2", "z0_amplitude": 1.0,
                "seed": 42},
    "hum": {"penalty": 1e-6, "penalty_list": None, "cg_tol": 1e-8,
            "cg_max_iter": 500, "placement": "parabolic", "method": "cg"},
    "fixed_point": {"theta": 1.0, "tol": 1e-6, "max_iter": 30, "variant": "parabolic"},
    "eps_relax": {"eps_list": [1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 1e-4], "penalty": 1e-6,
                  "z_penalty_weight": 1.0, "semilinear": False},
    "observability": {"variant": "phi_observation", "samples": 64},
    "galerkin": {"orders": [4, 8, 16, 32]},
    "seed": 42,
    "output_dir": "out",
}

_INITIAL_KINDS = ("zero", "sin", "sin2", "random", "eigen1")


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(where, "unknown key")
        if isinstance(base[key], dict) and isinstance(val, dict):
            out[key] = _merge(base[key], val, where)
        else:
            out[key] = val
    return out


def load_config(path):
    """Read and validate a JSON config file; returns the merged dict."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(str(path), "config file does not exist")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"not valid JSON ({exc})")
    if not isinstance(raw, dict):
        raise ConfigError(str(path), "top level must be an object")
    cfg = _merge(DEFAULTS, raw)
    validate_config(cfg)
    return cfg


def apply_overrides(cfg, overrides):
    """Apply key=value overrides by dotted path; values parsed as JSON."""
    cfg = copy.deepcopy(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like path.to.key=value")
        key, _, raw = item.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(key, "unknown config section")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(key, "unknown key")
        node[parts[-1]] = value
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    m = cfg["mesh"]
    if m["dimension"] not in (1, 2):
        raise ConfigError("mesh.dimension", "must be 1 or 2")
    if len(m["extents"]) != m["dimension"]:
        raise ConfigError("mesh.extents", "length must match mesh.dimension")
    if len(m["counts"]) != m["dimension"]:
        raise ConfigError("mesh.counts", "length must match mesh.dimension")
    if any(e <= 0 for e in m["extents"]):
        raise ConfigError("mesh.extents", "must be positive")
    if any(c < 3 for c in m["counts"]):
        raise ConfigError("mesh.counts", "need at least 3 interior points per axis")
    r = cfg["region"]
    if len(r["omega"]) != m["dimension"] or len(r["omega0"]) != m["dimension"]:
        raise ConfigError("region.omega", "need one interval per axis")
    tblk = cfg["time"]
    if tblk["T"] <= 0:
        raise ConfigError("time.T", "must be positive")
    if tblk["nt"] < 2:
        raise ConfigError("time.nt", "need at least 2 steps")
    co = cfg["coefficients"]
    if co["tag"] not in (coeff_mod.HYP_C_CONST, coeff_mod.HYP_B_CONST, coeff_mod.GENERAL):
        raise ConfigError("coefficients.tag", f"unknown tag {co['tag']!r}")
    if not (isinstance(co["a"], (int, float)) or co["a"] == "random_smooth"):
        raise ConfigError("coefficients.a", "must be a number or 'random_smooth'")
    wb = cfg["weights"]
    if wb["lambda"] < 0:
        raise ConfigError("weights.lambda", "must be nonnegative")
    if wb["sigma"] <= 0 or wb["K"] <= 0:
        raise ConfigError("weights.sigma", "sigma and K must be positive")
    ib = cfg["initial"]
    for key in ("y0", "z0"):
        if ib[key] not in _INITIAL_KINDS:
            raise ConfigError(f"initial.{key}",
                              f"unknown kind {ib[key]!r}; choose from {_INITIAL_KINDS}")
    hb = cfg["hum"]
    if hb["penalty"] <= 0:
        raise ConfigError("hum.penalty", "must be positive")
    if hb["placement"] not in (IN_PARABOLIC, IN_ELLIPTIC):
        raise ConfigError("hum.placement", "must be 'parabolic' or 'elliptic'")
    if hb["method"] not in ("cg", "direct"):
        raise ConfigError("hum.method", "must be 'cg' or 'direct'")
    if hb["penalty_list"] is not None:
        pl = hb["penalty_list"]
        if not pl or any(e <= 0 for e in pl):
            raise ConfigError("hum.penalty_list", "must be positive values")
        if any(b >= a for a, b in zip(pl, pl[1:])):
            raise ConfigError("hum.penalty_list", "must be strictly decreasing")
    fb = cfg["fixed_point"]
    if not 0 < fb["theta"] <= 1:
        raise ConfigError("fixed_point.theta", "must lie in (0, 1]")
    if fb["variant"] not in (IN_PARABOLIC, IN_ELLIPTIC):
        raise ConfigError("fixed_point.variant", "must be 'parabolic' or 'elliptic'")
    nb = cfg["nonlinearity"]
    for key in ("F0", "f0"):
        if nb[key] not in ("zero", "sin", "arctan", "tanh", "linear"):
            raise ConfigError(f"nonlinearity.{key}", f"unknown nonlinearity {nb[key]!r}")
    eb = cfg["eps_relax"]
    if any(e <= 0 for e in eb["eps_list"]):
        raise ConfigError("eps_relax.eps_list", "must be positive")
    if any(b >= a for a, b in zip(eb["eps_list"], eb["eps_list"][1:])):
        raise ConfigError("eps_relax.eps_list", "must be strictly decreasing")
    ob = cfg["observability"]
    if ob["variant"] not in ("phi_observation", "psi_observation"):
        raise ConfigError("observability.variant",
                          "must be 'phi_observation' or 'psi_observation'")
    if ob["samples"] < 1:
        raise ConfigError("observability.samples", "need at least one sample")
    return cfg


class Experiment:
    """Objects built once from a validated config."""

    def __init__(self, cfg):
        self.cfg = cfg
        m = cfg["mesh"]
        self.mesh = mesh_mod.build_mesh(m["dimension"], m["extents"], m["counts"])
        self.lap = mesh_mod.assemble_laplacian(self.mesh)
        r = cfg["region"]
        self.region = mesh_mod.build_control_region(
            self.mesh, r["omega"], r["omega0"], margin_cells=r["margin_cells"])
        self.t = time_nodes(cfg["time"]["T"], cfg["time"]["nt"])
        wb = cfg["weights"]
        self.params = make_weight_params(
            self.mesh, self.region, cfg["time"]["T"], lam=wb["lambda"],
            sigma=wb["sigma"], K=wb["K"], k_margin=wb["k_margin"],
            shape_exponents=wb["alpha0_exponents"], s=wb["s"])

    @property
    def nt(self):
        return len(self.t) - 1

    def coefficients(self):
        co = self.cfg["coefficients"]
        a = co["a"]
        if a == "random_smooth":
            a = random_smooth_field(self.mesh, self.t, seed=co["a_seed"],
                                    amplitude=co["a_amplitude"])
        return make_coefficients(self.mesh.ndof, self.nt, a=a, b=co["b"], c=co["c"],
                                 d=co["d"], tag=co["tag"])

    def nonlinearity(self):
        nb = self.cfg["nonlinearity"]
        return make_nonlinear_spec(F0=nb["F0"], f0=nb["f0"], b=nb["b"], d=nb["d"],
                                   F0_scale=nb["F0_scale"], f0_scale=nb["f0_scale"])

    def _field(self, kind, amplitude, seed):
        pts = self.mesh.coords()
        if kind == "zero":
            return np.zeros(self.mesh.ndof)
        if kind == "sin":
            out = np.ones(self.mesh.ndof)
            for a in range(self.mesh.dimension):
                out *= np.sin(np.pi * pts[:, a] / self.mesh.extents[a])
            return amplitude * out
        if kind == "sin2":
            out = np.ones(self.mesh.ndof)
            for a in range(self.mesh.dimension):
                out *= np.sin(2 * np.pi * pts[:, a] / self.mesh.extents[a])
            return amplitude * out
        if kind == "eigen1":
            return amplitude * self.lap.first_eigenvector
        if kind == "random":
            rng = np.random.default_rng(seed)
            return amplitude * rng.standard_normal(self.mesh.ndof)
        raise ConfigError("initial", f"unknown kind {kind!r}")

    def initial_y(self):
        ib = self.cfg["initial"]
        return self._field(ib["y0"], ib["y0_amplitude"], ib["seed"])

    def initial_z(self):
        ib = self.cfg["initial"]
        return self._field(ib["z0"], ib["z0_amplitude"], ib["seed"] + 1)
