"""Scenario files: a JSON description of system, task, cost and experiment.

Schema (all intervals are in steps; ``sampling_period`` is metadata only)::

    {
      "name": str,
      "sampling_period": float | null,
      "state_names": [str, ...],              # optional, default x1..xn
      "system": {
        "A": [[...]], "B": [[...]],
        "X": SET, "U": SET, "W": SET,         # W must be a bounded box
        "lipschitz_mode": "lipschitz" | "exact",
        "L": float | null
      },
      "regions": {name: boolean formula text, ...},   # may use earlier names
      "formula": str,
      "cuts": [int, ...],
      "x0": [...],
      "cost": {"rho_weight", "energy_weight", "kind", "energy_segments", "terminal_weight"},
      "disturbance": {"policy": "zero" | "uniform" | "vertex" | "replay",
                      "seeds": [int, ...], "sequence": [[...]] | null},
      "solver": {"max_iter", "eps_rob", "strict_eps", "gap", "node_limit", "time_limit"},
      "outputs": {"dir": str}
    }

SET is either {"lo": [...], "hi": [...]} (a box) or {"A": [[...]], "b": [...]}.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .encode import CegisOptions, CostSpec
from .geometry import HPolytope
from .mpc import make_policy
from .optim import MilpOptions
from .stl import BoolFormula, decompose, parse, parse_bool, to_segments
from .system import L_MODES, LinearSystem


class ScenarioError(ValueError):
    """Validation failure; ``code`` is a stable machine-readable tag."""

    def __init__(self, code, msg):
        super().__init__(f"[{code}] {msg}")
        self.code = code


DEFAULTS = {
    "name": "scenario",
    "sampling_period": None,
    "state_names": None,
    "regions": {},
    "cuts": [],
    "cost": {"rho_weight": 1.0, "energy_weight": 0.0, "kind": "nominal",
             "energy_segments": 8, "terminal_weight": 0.0},
    "disturbance": {"policy": "uniform", "seeds": [0], "sequence": None},
    "solver": {"max_iter": 25, "eps_rob": 0.0, "strict_eps": 0.0, "gap": 1e-6,
               "node_limit": 20000, "time_limit": None},
    "outputs": {"dir": "out"},
}


def _set_from(d, dim, what):
    try:
        if "lo" in d:
            lo = np.asarray(d["lo"], dtype=float)
            hi = np.asarray(d["hi"], dtype=float)
            if lo.shape != (dim,) or hi.shape != (dim,):
                raise ScenarioError("dimension", f"{what} box must have {dim} entries")
            return HPolytope.box(lo, hi)
        A = np.asarray(d["A"], dtype=float).reshape(-1, dim)
        return HPolytope(A, np.asarray(d["b"], dtype=float))
    except (KeyError, TypeError) as exc:
        raise ScenarioError("set", f"bad set for {what}: {exc}") from None


def _set_to(p: HPolytope):
    bb = p.box_bounds()
    if bb is not None and np.all(np.isfinite(bb[0])) and np.all(np.isfinite(bb[1])):
        return {"lo": bb[0].tolist(), "hi": bb[1].tolist()}
    return {"A": p.A.tolist(), "b": p.b.tolist()}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = {**out[k], **v}
        else:
            out[k] = v
    return out


@dataclass
class Scenario:
    raw: dict
    system: LinearSystem
    state_names: list
    regions: dict                # name -> BoolFormula
    formula: object
    cuts: list
    x0: np.ndarray
    cost: CostSpec
    policy: str
    seeds: list
    sequence: object = None
    solver: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)

    @property
    def name(self):
        return self.raw["name"]

    def segments(self):
        return to_segments(self.formula)

    def decomposition(self):
        return decompose(self.segments(), self.cuts)

    def cegis_options(self, **over):
        s = {**self.solver, **{k: v for k, v in over.items() if v is not None}}
        tl = s.get("time_limit")
        milp = MilpOptions(gap=float(s["gap"]), node_limit=int(s["node_limit"]),
                           time_limit=math.inf if tl is None else float(tl))
        return CegisOptions(max_iter=int(s["max_iter"]), eps_rob=float(s["eps_rob"]),
                            strict_eps=float(s["strict_eps"]), milp=milp)

    def make_policy(self, seed):
        return make_policy(self.policy, seed, self.sequence)

    def with_lipschitz_mode(self, mode):
        raw = copy.deepcopy(self.raw)
        raw["system"]["lipschitz_mode"] = mode
        return Scenario.from_dict(raw)

    def to_dict(self):
        """Canonical form (defaults filled in)."""
        return copy.deepcopy(self.raw)

    def dumps(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d) -> "Scenario":
        for key in ("system", "formula", "x0"):
            if key not in d:
                raise ScenarioError("missing", f"scenario lacks '{key}'")
        raw = _merge(DEFAULTS, d)
        sd = raw["system"]
        try:
            A = np.atleast_2d(np.asarray(sd["A"], dtype=float))
            B = np.asarray(sd["B"], dtype=float).reshape(A.shape[0], -1)
        except (KeyError, ValueError) as exc:
            raise ScenarioError("system", f"bad A/B: {exc}") from None
        n, m = B.shape
        mode = sd.get("lipschitz_mode", "lipschitz")
        if mode not in L_MODES:
            raise ScenarioError("lipschitz_mode", f"unknown mode {mode!r}")
        X = _set_from(sd["X"], n, "X")
        U = _set_from(sd["U"], m, "U")
        W = _set_from(sd["W"], n, "W")
        try:
            sys = LinearSystem(A, B, X, U, W, mode, sd.get("L"))
        except ValueError as exc:
            raise ScenarioError("system", str(exc)) from None
        raw["system"] = {"A": A.tolist(), "B": B.tolist(), "X": _set_to(X), "U": _set_to(U),
                         "W": _set_to(W), "lipschitz_mode": mode, "L": sd.get("L")}

        names = raw["state_names"] or [f"x{i + 1}" for i in range(n)]
        if len(names) != n:
            raise ScenarioError("state_names", f"expected {n} state names")
        raw["state_names"] = list(names)
        regions: dict[str, BoolFormula] = {}
        for rname, text in raw["regions"].items():
            try:
                regions[rname] = parse_bool(text, bindings=dict(regions), state_names=names, dim=n)
            except ValueError as exc:
                raise ScenarioError("region", f"region {rname!r}: {exc}") from None
        try:
            f = parse(raw["formula"], bindings=regions, state_names=names, dim=n)
        except ValueError as exc:
            raise ScenarioError("formula", str(exc)) from None
        cuts = [int(c) for c in raw["cuts"]]
        raw["cuts"] = cuts
        try:
            decompose(to_segments(f), cuts)
        except ValueError as exc:
            raise ScenarioError("cuts", str(exc)) from None

        x0 = np.asarray(raw["x0"], dtype=float)
        if x0.shape != (n,):
            raise ScenarioError("x0", f"x0 must have {n} entries")
        raw["x0"] = x0.tolist()
        try:
            cost = CostSpec(**raw["cost"])
        except (TypeError, ValueError) as exc:
            raise ScenarioError("cost", str(exc)) from None
        dist = raw["disturbance"]
        if dist["policy"] not in ("zero", "uniform", "vertex", "replay"):
            raise ScenarioError("policy", f"unknown policy {dist['policy']!r}")
        if dist["policy"] == "replay" and dist.get("sequence") is None:
            raise ScenarioError("policy", "replay policy needs a sequence")
        seeds = [int(s) for s in dist.get("seeds", [0])]
        return cls(raw, sys, list(names), regions, f, cuts, x0, cost, dist["policy"], seeds,
                   dist.get("sequence"), dict(raw["solver"]), dict(raw["outputs"]))

    @classmethod
    def loads(cls, text):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError("json", str(exc)) from None
        return cls.from_dict(d)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())


def robot_scenario() -> dict:
    """The planar double-integrator reach/stay/reach task (0.5 s sampling)."""
    return {
        "name": "robot",
        "sampling_period": 0.5,
        "state_names": ["x", "vx", "y", "vy"],
        "system": {
            "A": [[1, 0.5, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0.5], [0, 0, 0, 1]],
            "B": [[0.125, 0], [0.5, 0], [0, 0.125], [0, 0.5]],
            "X": {"lo": [0, -2.5, 0, -2.5], "hi": [10, 2.5, 10, 2.5]},
            "U": {"lo": [-3, -3], "hi": [3, 3]},
            "W": {"lo": [-0.01] * 4, "hi": [0.01] * 4},
            "lipschitz_mode": "lipschitz",
            "L": None,
        },
        "regions": {
            "A1": "x >= 7.5 & x <= 10 & y >= 7.5 & y <= 10",
            "A2": "x >= 0 & x <= 3 & y >= 0 & y <= 3",
            "A3": "x >= 7.5 & x <= 10 & y >= 0 & y <= 2.5",
        },
        "formula": "F[0,6] A1 & G[14,15] A2 & F[22,25] A3",
        "cuts": [12],
        "x0": [3, 0, 8, 0],
        "cost": {"rho_weight": 1.0, "energy_weight": 0.67e-7, "kind": "nominal",
                 "energy_segments": 8, "terminal_weight": 1e-3},
        "disturbance": {"policy": "uniform", "seeds": list(range(20)), "sequence": None},
        "solver": {"max_iter": 25, "eps_rob": 0.0, "strict_eps": 0.0, "gap": 1e-6,
                   "node_limit": 20000, "time_limit": None},
        "outputs": {"dir": "out"},
    }


BUILTIN = {"robot": robot_scenario}


def load_scenario(spec) -> Scenario:
    """A file path, or ``builtin:NAME``."""
    if isinstance(spec, str) and spec.startswith("builtin:"):
        key = spec.split(":", 1)[1]
        if key not in BUILTIN:
            raise ScenarioError("builtin", f"unknown builtin scenario {key!r}")
        return Scenario.from_dict(BUILTIN[key]())
    return Scenario.load(spec)


__all__ = ["Scenario", "ScenarioError", "robot_scenario", "load_scenario", "BUILTIN"]
