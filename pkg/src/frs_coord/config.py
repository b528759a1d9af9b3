"""YAML scenario configuration.

Units: positions and lengths in m, speeds in m/s, accelerations in m/s^2,
angular rates in rad/s, times in s, mass in kg, inertia in kg m^2,
forces in N. Unknown keys are rejected and every error names the key and
its line.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
import yaml

from .hocbf import CbfGains
from .planner import PAIR_MODELS, REACH_RATES, PlannerParams, Wall
from .sim import (
    AgentSpec,
    Circular,
    Diagonal,
    Fidelity,
    ObstacleSpec,
    Scenario,
    SrbConfig,
    Static,
)
from .srb import MpcWeights, SrbParams

SWEEPABLE = ("frs_horizon_s", "dt_mpc")


class ConfigError(ValueError):
    pass


@dataclass
class OutputSpec:
    dir: str = "out"
    trace: str = "trace.csv"
    summary: str = "summary.txt"
    metrics: str = "metrics.json"


@dataclass
class Config:
    scenario: Scenario
    output: OutputSpec = field(default_factory=OutputSpec)
    sweep: Dict[str, List[float]] = field(default_factory=dict)
    raw: Dict[str, Any] = field(default_factory=dict)


# ------------------------------------------------------------ yaml with lines

def _walk(node, loader, path, lines):
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for knode, vnode in node.value:
            key = loader.construct_object(knode)
            if key in out:
                raise ConfigError(f"{_fmt(path + (key,))}: duplicate key (line {knode.start_mark.line + 1})")
            out[key] = _walk(vnode, loader, path + (key,), lines)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_walk(v, loader, path + (i,), lines) for i, v in enumerate(node.value)]
    return loader.construct_object(node)


def load_yaml(text: str):
    """Parse ``text``; return the document and a map of key path -> line."""
    loader = yaml.SafeLoader(text)
    try:
        node = loader.get_single_node()
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML: {exc}") from None
    finally:
        loader.dispose()
    lines: Dict[tuple, int] = {}
    if node is None:
        return {}, lines
    loader = yaml.SafeLoader("")
    return _walk(node, loader, (), lines), lines


def _fmt(path):
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


class _Ctx:
    def __init__(self, lines):
        self.lines = lines

    def err(self, path, msg):
        line = self.lines.get(tuple(path))
        where = f" (line {line})" if line else ""
        return ConfigError(f"{_fmt(path)}: {msg}{where}")

    def mapping(self, d, path, allowed, required=()):
        if not isinstance(d, dict):
            raise self.err(path, "expected a mapping")
        for k in d:
            if k not in allowed:
                raise self.err(tuple(path) + (k,), f"unknown key (allowed: {', '.join(sorted(allowed))})")
        for k in required:
            if k not in d:
                raise self.err(path, f"missing required key '{k}'")
        return d

    def number(self, d, key, path, default=None, minimum=None, strict=False, integer=False):
        p = tuple(path) + (key,)
        if key not in d:
            if default is None:
                raise self.err(path, f"missing required key '{key}'")
            return default
        v = d[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise self.err(p, f"expected a number, got {v!r}")
        if integer and int(v) != v:
            raise self.err(p, f"expected an integer, got {v!r}")
        if not np.isfinite(v):
            raise self.err(p, "must be finite")
        if minimum is not None and (v <= minimum if strict else v < minimum):
            raise self.err(p, f"must be {'>' if strict else '>='} {minimum}, got {v}")
        return int(v) if integer else float(v)

    def vector(self, d, key, path, size, default=None, nonneg=False):
        p = tuple(path) + (key,)
        if key not in d:
            if default is None:
                raise self.err(path, f"missing required key '{key}'")
            return default
        v = d[key]
        try:
            arr = np.asarray(v, dtype=float)
        except (TypeError, ValueError):
            raise self.err(p, f"expected a list of {size} numbers") from None
        if arr.size != size or not np.all(np.isfinite(arr)):
            raise self.err(p, f"expected {size} finite numbers")
        if nonneg and np.any(arr < 0):
            raise self.err(p, "entries must be >= 0")
        return arr.reshape(-1)


# ---------------------------------------------------------------- sections

def _pattern(ctx, d, path):
    ctx.mapping(d, path, {"circular", "diagonal", "static"})
    if len(d) != 1:
        raise ctx.err(path, "exactly one of circular/diagonal/static is required")
    kind, body = next(iter(d.items()))
    p = tuple(path) + (kind,)
    if kind == "circular":
        ctx.mapping(body, p, {"center", "radius", "angular_rate", "phase"}, ("center", "radius"))
        return Circular(
            tuple(ctx.vector(body, "center", p, 2)),
            ctx.number(body, "radius", p, minimum=0.0, strict=True),
            ctx.number(body, "angular_rate", p, default=0.5),
            ctx.number(body, "phase", p, default=0.0),
        )
    if kind == "diagonal":
        ctx.mapping(body, p, {"p_a", "p_b", "speed"}, ("p_a", "p_b"))
        a = tuple(ctx.vector(body, "p_a", p, 2))
        b = tuple(ctx.vector(body, "p_b", p, 2))
        if np.allclose(a, b):
            raise ctx.err(p + ("p_b",), "must differ from p_a")
        return Diagonal(a, b, ctx.number(body, "speed", p, default=0.5, minimum=0.0))
    ctx.mapping(body, p, {"p"}, ("p",))
    return Static(tuple(ctx.vector(body, "p", p, 2)))


def _gains(ctx, d, path, default):
    if d is None:
        return default
    ctx.mapping(d, path, {"alpha1", "alpha2"})
    return CbfGains(
        ctx.number(d, "alpha1", path, default=default.alpha1, minimum=0.0, strict=True),
        ctx.number(d, "alpha2", path, default=default.alpha2, minimum=0.0, strict=True),
    )


def _planner(ctx, d, path, n_agents):
    d = d or {}
    ctx.mapping(d, path, {"beta1", "beta2", "frs_horizon_s", "Ps", "slack_weight", "object_gains", "wall_gains", "gains", "pair_model", "reach_rate", "max_speed", "kink_depth"})
    base = PlannerParams()
    obj = _gains(ctx, d.get("object_gains"), tuple(path) + ("object_gains",), base.object_gains)
    wall = _gains(ctx, d.get("wall_gains"), tuple(path) + ("wall_gains",), base.wall_gains)
    pairs = {}
    for k, g in enumerate(d.get("gains", []) or []):
        p = tuple(path) + ("gains", k)
        ctx.mapping(g, p, {"agent", "object", "alpha1", "alpha2"}, ("agent", "object", "alpha1", "alpha2"))
        a = ctx.number(g, "agent", p, minimum=0, integer=True)
        if a >= n_agents:
            raise ctx.err(p + ("agent",), f"agent index {a} out of range")
        if not isinstance(g["object"], str):
            raise ctx.err(p + ("object",), "expected a key such as obs0, agent1 or wall0")
        pairs[(a, g["object"])] = CbfGains(
            ctx.number(g, "alpha1", p, minimum=0.0, strict=True), ctx.number(g, "alpha2", p, minimum=0.0, strict=True)
        )
    model = d.get("pair_model", base.pair_model)
    if model not in PAIR_MODELS:
        raise ctx.err(tuple(path) + ("pair_model",), f"expected one of {', '.join(PAIR_MODELS)}, got {model!r}")
    reach = d.get("reach_rate", base.reach_rate)
    if reach not in REACH_RATES:
        raise ctx.err(tuple(path) + ("reach_rate",), f"expected one of {', '.join(REACH_RATES)}, got {reach!r}")
    Ps = None
    if "Ps" in d:
        try:
            Ps = np.asarray(d["Ps"], dtype=float)
            if Ps.ndim == 1:
                Ps = np.diag(Ps)
        except (TypeError, ValueError):
            raise ctx.err(tuple(path) + ("Ps",), "expected a matrix or a diagonal") from None
    try:
        return PlannerParams(
            beta1=ctx.number(d, "beta1", path, default=base.beta1, minimum=0.0, strict=True),
            beta2=ctx.number(d, "beta2", path, default=base.beta2, minimum=0.0, strict=True),
            Ps=Ps,
            object_gains=obj,
            wall_gains=wall,
            gains=pairs,
            frs_horizon_s=ctx.number(d, "frs_horizon_s", path, default=base.frs_horizon_s, minimum=0.0),
            slack_weight=ctx.number(d, "slack_weight", path, default=base.slack_weight, minimum=0.0, strict=True),
            pair_model=model,
            reach_rate=reach,
            max_speed=ctx.number(d, "max_speed", path, minimum=0.0, strict=True) if d.get("max_speed") is not None else None,
            kink_depth=ctx.number(d, "kink_depth", path, default=base.kink_depth, minimum=0.0),
        )
    except ValueError as exc:
        raise ctx.err(tuple(path) + ("Ps",), str(exc)) from None


def _srb(ctx, d, path):
    d = d or {}
    keys = {
        "mass", "inertia", "gravity", "mu", "fz_bounds", "com_height", "hip_offsets", "raibert_gain",
        "horizon", "dt_mpc", "gait", "init_perturbation", "weights",
    }
    ctx.mapping(d, path, keys)
    base = SrbParams()
    inertia = base.inertia
    if "inertia" in d:
        arr = np.asarray(d["inertia"], dtype=float)
        if arr.size == 3:
            arr = np.diag(arr)
        if arr.shape != (3, 3):
            raise ctx.err(tuple(path) + ("inertia",), "expected 3 diagonal entries or a 3x3 matrix")
        if not np.allclose(arr, arr.T) or np.linalg.eigvalsh(arr)[0] <= 0:
            raise ctx.err(tuple(path) + ("inertia",), "must be symmetric positive definite")
        inertia = arr
    fz = ctx.vector(d, "fz_bounds", path, 2, default=np.asarray(base.fz_bounds), nonneg=True)
    if fz[0] > fz[1]:
        raise ctx.err(tuple(path) + ("fz_bounds",), "min must not exceed max")
    params = SrbParams(
        mass=ctx.number(d, "mass", path, default=base.mass, minimum=0.0, strict=True),
        inertia=inertia,
        gravity=ctx.vector(d, "gravity", path, 3, default=base.gravity),
        mu=ctx.number(d, "mu", path, default=base.mu, minimum=0.0, strict=True),
        fz_bounds=tuple(fz),
        com_height=ctx.number(d, "com_height", path, default=base.com_height, minimum=0.0, strict=True),
        hip_offsets=ctx.vector(d, "hip_offsets", path, 8, default=base.hip_offsets.reshape(-1)).reshape(4, 2),
        raibert_gain=ctx.number(d, "raibert_gain", path, default=base.raibert_gain, minimum=0.0),
    )
    w = d.get("weights") or {}
    wp = tuple(path) + ("weights",)
    ctx.mapping(w, wp, {"Q", "P", "R"})
    wb = MpcWeights()
    Q = ctx.vector(w, "Q", wp, 12, default=wb.Q, nonneg=True)
    P = ctx.vector(w, "P", wp, 12, default=0.1 * Q, nonneg=True)
    R = ctx.vector(w, "R", wp, 12, default=wb.R, nonneg=True)
    if np.any(R <= 0):
        raise ctx.err(wp + ("R",), "entries must be > 0")
    gait = d.get("gait", "trot")
    if gait not in ("trot", "standing"):
        raise ctx.err(tuple(path) + ("gait",), f"expected 'trot' or 'standing', got {gait!r}")
    return SrbConfig(
        params=params,
        weights=MpcWeights(Q, P, R),
        horizon=ctx.number(d, "horizon", path, default=5, minimum=1, integer=True),
        dt_mpc=ctx.number(d, "dt_mpc", path, default=0.03, minimum=0.0, strict=True),
        gait=gait,
        init_perturbation=ctx.number(d, "init_perturbation", path, default=0.0, minimum=0.0),
    )


TOP_KEYS = {
    "name", "duration_s", "seed", "fidelity", "dt", "mpc_every",
    "agents", "obstacles", "walls", "planner", "srb", "output", "sweep",
}


def build_config(doc: Dict, lines: Optional[Dict] = None) -> Config:
    ctx = _Ctx(lines or {})
    ctx.mapping(doc, (), TOP_KEYS, ("agents",))
    agents = []
    if not isinstance(doc["agents"], list) or not doc["agents"]:
        raise ctx.err(("agents",), "expected a nonempty list")
    for i, a in enumerate(doc["agents"]):
        p = ("agents", i)
        ctx.mapping(a, p, {"start", "goal", "accel_limit", "body_radius"}, ("start", "goal"))
        goal = a["goal"]
        goal = _pattern(ctx, goal, p + ("goal",)) if isinstance(goal, dict) else tuple(ctx.vector(a, "goal", p, 2))
        agents.append(
            AgentSpec(
                tuple(ctx.vector(a, "start", p, 2)),
                goal,
                ctx.number(a, "accel_limit", p, default=2.0, minimum=0.0, strict=True),
                ctx.number(a, "body_radius", p, default=0.3, minimum=0.0),
            )
        )
    obstacles = []
    for j, o in enumerate(doc.get("obstacles", []) or []):
        p = ("obstacles", j)
        ctx.mapping(o, p, {"pattern", "body_radius"}, ("pattern",))
        obstacles.append(ObstacleSpec(_pattern(ctx, o["pattern"], p + ("pattern",)), ctx.number(o, "body_radius", p, default=0.3, minimum=0.0)))
    walls = []
    for w, wd in enumerate(doc.get("walls", []) or []):
        p = ("walls", w)
        ctx.mapping(wd, p, {"y", "side"}, ("y", "side"))
        side = ctx.number(wd, "side", p, integer=True)
        if side not in (1, -1):
            raise ctx.err(p + ("side",), "must be +1 (keep below) or -1 (keep above)")
        walls.append(Wall(ctx.number(wd, "y", p), side))
    fid = doc.get("fidelity", Fidelity.DOUBLE_INTEGRATOR.value)
    if fid not in [f.value for f in Fidelity]:
        raise ctx.err(("fidelity",), f"expected DoubleIntegrator or SrbClosedLoop, got {fid!r}")
    name = doc.get("name", "scenario")
    if not isinstance(name, str):
        raise ctx.err(("name",), "expected a string")
    try:
        scn = Scenario(
            name=name,
            agents=agents,
            obstacles=obstacles,
            walls=walls,
            planner=_planner(ctx, doc.get("planner"), ("planner",), len(agents)),
            srb=_srb(ctx, doc.get("srb"), ("srb",)),
            duration_s=ctx.number(doc, "duration_s", (), default=30.0, minimum=0.0, strict=True),
            seed=ctx.number(doc, "seed", (), default=0, minimum=0, integer=True),
            fidelity=fid,
            dt=ctx.number(doc, "dt", (), default=0.001, minimum=0.0, strict=True),
            mpc_every=ctx.number(doc, "mpc_every", (), default=2, minimum=1, integer=True),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ctx.err(("agents",), str(exc)) from None

    out = doc.get("output") or {}
    ctx.mapping(out, ("output",), {"dir", "trace", "summary", "metrics"})
    for k, v in out.items():
        if not isinstance(v, str):
            raise ctx.err(("output", k), "expected a path string")
    output = OutputSpec(**out)

    sweep = {}
    sw = doc.get("sweep") or {}
    ctx.mapping(sw, ("sweep",), set(SWEEPABLE))
    for k, vals in sw.items():
        if not isinstance(vals, list) or not vals:
            raise ctx.err(("sweep", k), "expected a nonempty list of numbers")
        sweep[k] = [ctx.number({"v": v}, "v", ("sweep", k, i), minimum=0.0, strict=True) for i, v in enumerate(vals)]
    return Config(scn, output, sweep, copy.deepcopy(doc))


def parse_override(text: str):
    if "=" not in text:
        raise ConfigError(f"override {text!r}: expected key=value")
    key, val = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {text!r}: empty key")
    try:
        value = yaml.safe_load(val)
    except yaml.YAMLError:
        raise ConfigError(f"override {key}: cannot parse value {val!r}") from None
    return key.split("."), value


def apply_overrides(doc: Dict, overrides) -> Dict:
    doc = copy.deepcopy(doc)
    for ov in overrides or ():
        path, value = parse_override(ov) if isinstance(ov, str) else ov
        cur = doc
        for k in path[:-1]:
            if isinstance(cur, list):
                try:
                    cur = cur[int(k)]
                except (ValueError, IndexError):
                    raise ConfigError(f"override {'.'.join(path)}: bad index {k!r}") from None
                continue
            cur = cur.setdefault(k, {})
            if not isinstance(cur, (dict, list)):
                raise ConfigError(f"override {'.'.join(path)}: {k} is not a section")
        last = path[-1]
        if isinstance(cur, list):
            try:
                cur[int(last)] = value
            except (ValueError, IndexError):
                raise ConfigError(f"override {'.'.join(path)}: bad index {last!r}") from None
        else:
            cur[last] = value
    return doc


def load_config(path, overrides=()) -> Config:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    doc, lines = load_yaml(text)
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    if overrides:
        doc = apply_overrides(doc, overrides)
    return build_config(doc, lines)


# ------------------------------------------------------------ serialization

def _pattern_dict(p):
    if isinstance(p, Circular):
        return {"circular": {"center": list(map(float, p.center)), "radius": p.radius,
                             "angular_rate": p.angular_rate, "phase": p.phase}}
    if isinstance(p, Diagonal):
        return {"diagonal": {"p_a": list(map(float, p.p_a)), "p_b": list(map(float, p.p_b)), "speed": p.speed}}
    return {"static": {"p": list(map(float, p.p))}}


def scenario_to_dict(scn: Scenario) -> Dict:
    """Effective configuration; ``build_config`` on it gives an equivalent scenario."""
    pl = scn.planner
    s = scn.srb
    sp = s.params
    d = {
        "name": scn.name,
        "duration_s": scn.duration_s,
        "seed": scn.seed,
        "fidelity": scn.fidelity.value,
        "dt": scn.dt,
        "mpc_every": scn.mpc_every,
        "agents": [
            {
                "start": list(map(float, a.start)),
                "goal": _pattern_dict(a.goal) if isinstance(a.goal, (Circular, Diagonal, Static)) else list(map(float, a.goal)),
                "accel_limit": a.accel_limit,
                "body_radius": a.body_radius,
            }
            for a in scn.agents
        ],
        "obstacles": [{"pattern": _pattern_dict(o.pattern), "body_radius": o.body_radius} for o in scn.obstacles],
        "walls": [{"y": w.y, "side": w.side} for w in scn.walls],
        "planner": {
            "beta1": pl.beta1,
            "beta2": pl.beta2,
            "frs_horizon_s": pl.frs_horizon_s,
            "slack_weight": pl.slack_weight,
            "pair_model": pl.pair_model,
            "reach_rate": pl.reach_rate,
            "max_speed": pl.max_speed,
            "kink_depth": pl.kink_depth,
            "object_gains": {"alpha1": pl.object_gains.alpha1, "alpha2": pl.object_gains.alpha2},
            "wall_gains": {"alpha1": pl.wall_gains.alpha1, "alpha2": pl.wall_gains.alpha2},
            "gains": [
                {"agent": a, "object": k, "alpha1": g.alpha1, "alpha2": g.alpha2}
                for (a, k), g in sorted(pl.gains.items())
            ],
        },
        "srb": {
            "mass": sp.mass,
            "inertia": sp.inertia.tolist(),
            "gravity": sp.gravity.tolist(),
            "mu": sp.mu,
            "fz_bounds": list(sp.fz_bounds),
            "com_height": sp.com_height,
            "hip_offsets": sp.hip_offsets.reshape(-1).tolist(),
            "raibert_gain": sp.raibert_gain,
            "horizon": s.horizon,
            "dt_mpc": s.dt_mpc,
            "gait": s.gait,
            "init_perturbation": s.init_perturbation,
            "weights": {"Q": s.weights.Q.tolist(), "P": s.weights.P.tolist(), "R": s.weights.R.tolist()},
        },
    }
    if pl.Ps is not None:
        d["planner"]["Ps"] = pl.Ps.tolist()
    return d


def with_parameter(scn_doc: Dict, parameter: str, value: float) -> Dict:
    """Copy of a scenario document with one sweepable parameter set."""
    if parameter not in SWEEPABLE:
        raise ConfigError(f"parameter {parameter!r} is not sweepable (choose from {', '.join(SWEEPABLE)})")
    doc = copy.deepcopy(scn_doc)
    section = "planner" if parameter == "frs_horizon_s" else "srb"
    doc.setdefault(section, {})
    doc[section][parameter] = float(value)
    return doc
