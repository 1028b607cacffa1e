"""Scenario configuration, single runs and parameter sweeps.

A scenario is a YAML document; ``basecase`` names the bundled one.  Every
random choice draws from its own substream of the master seed so that
changing one axis (say the grouping) leaves the others (limits, loads,
volume sampling) untouched.  See ``README.md`` for the schema.
"""
from __future__ import annotations

import copy
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import acpf, geometry
from .constraints import build_constraints
from .fairness import FairnessConfig, gini, split_cohort, weight_normalized_allocations
from .feeder import Customer, Feeder, build_sensitivities, load_feeder
from .solver import (DesignError, Partition, SolverOptions, build_problem, fairness_shares,
                     solve)
from .uncertainty import UncertaintyModel

STREAMS = {"grouping": 1, "limits": 2, "loads": 3, "volume": 4, "stress": 5, "weights": 6}


class ConfigError(ValueError):
    pass


def substream(seed: int, purpose: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), STREAMS[purpose]])


def _deep_merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (extra or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


DEFAULTS = {
    "name": "scenario",
    "feeder": "eulv",
    "seed": 0,
    "v_band": [0.95, 1.05],
    "rho": 8,
    "s_base_kva": None,
    "partition": {"coordinated": [], "fraction": None, "trials": 1},
    "limits": {"p_max_kw": 5.0, "q_max_kvar": 2.0, "sample_from": None},
    "fixed_load": {"p_kw": [0.0, 1.0], "q_kvar": None, "power_factor": 0.95, "loading": 1.0},
    "uncertainty": {"eta": 0.0, "gamma": 0.0, "q_deviations": True},
    "fairness": {"sigma_plus": 1.0, "sigma_minus": 1.0, "weights": "limits",
                 "group_weight": None},
    "solver": {"tol": 1e-8, "max_iter": 200, "eps_rel": 1e-7, "backend": "barrier"},
    "stress": {"count": 2000, "q_mode": "setpoint"},
    "volume": {"sample_budget": 100000},
    "sweeps": {},
    "output": "out",
}


@dataclass
class ScenarioConfig:
    """Validated scenario document; ``doc`` keeps the merged raw form."""

    doc: dict
    source: str = "<dict>"
    base_dir: Path = field(default_factory=Path.cwd)

    def __getitem__(self, key):
        return self.doc[key]

    @property
    def seed(self) -> int:
        return int(self.doc["seed"])

    def with_overrides(self, extra: dict) -> "ScenarioConfig":
        return make_config(_deep_merge(self.doc, extra), self.source, self.base_dir)

    def to_document(self) -> dict:
        return copy.deepcopy(self.doc)


def make_config(doc: dict, source: str = "<dict>", base_dir=None) -> ScenarioConfig:
    if not isinstance(doc, dict):
        raise ConfigError("scenario document must be a mapping")
    unknown = set(doc) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
    merged = _deep_merge(DEFAULTS, doc)
    part, lim, load = merged["partition"], merged["limits"], merged["fixed_load"]
    frac = part.get("fraction")
    if frac is not None and not 0.0 <= float(frac) <= 1.0:
        raise ConfigError("partition.fraction must lie in [0, 1]")
    if int(part.get("trials", 1)) < 1:
        raise ConfigError("partition.trials must be at least 1")
    if float(load["loading"]) <= 0:
        raise ConfigError("fixed_load.loading must be positive")
    if lim.get("sample_from") is None and (lim["p_max_kw"] < 0 or lim["q_max_kvar"] < 0):
        raise ConfigError("device limits must be nonnegative")
    fair = merged["fairness"]
    for key in ("sigma_plus", "sigma_minus"):
        if not 0.0 <= float(fair[key]) <= 1.0:
            raise ConfigError(f"fairness.{key} must lie in [0, 1]")
    lo, hi = merged["v_band"]
    if not 0 < lo < 1 < hi:
        raise ConfigError("v_band must bracket 1 pu")
    return ScenarioConfig(merged, source, Path(base_dir) if base_dir else Path.cwd())


def load_config(source) -> ScenarioConfig:
    """Path to a YAML file, the name of a bundled scenario, or a mapping."""
    if isinstance(source, ScenarioConfig):
        return source
    if isinstance(source, dict):
        return make_config(source)
    name = str(source)
    bundled = resources.files("doekit") / "data" / f"{name}.yaml"
    if not Path(name).exists() and bundled.is_file():
        return make_config(yaml.safe_load(bundled.read_text()), name)
    path = Path(name)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read scenario {path}: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return make_config(doc, str(path), path.parent)


# --------------------------------------------------------------------------
# scenario -> design problem


def _feeder_source(cfg: ScenarioConfig):
    name = cfg["feeder"]
    bundled = resources.files("doekit") / "data" / f"{name}_feeder.json"
    if bundled.is_file():
        return bundled.read_text()
    path = Path(name)
    if not path.is_absolute():
        path = cfg.base_dir / path
    return path


def build_feeder(cfg: ScenarioConfig) -> Feeder:
    """Bundled or external feeder with the scenario's limits and fixed loads applied."""
    base = load_feeder(_feeder_source(cfg))
    s_base = cfg["s_base_kva"]
    if s_base is not None and float(s_base) != base.s_base_kva:
        doc = base.to_document()
        scale = base.s_base_kva / float(s_base)
        doc["base"]["s_kva"] = float(s_base)
        for ln in doc["lines"]:
            ln["r_pu"] *= scale
            ln["x_pu"] *= scale
        base = load_feeder(doc)
    s = base.s_base_kva
    n_c = len(base.customers)
    lim, load = cfg["limits"], cfg["fixed_load"]
    if lim.get("sample_from") is not None:
        pool = np.asarray(lim["sample_from"], dtype=float)
        p_max = substream(cfg.seed, "limits").choice(pool, n_c)
    else:
        p_max = np.full(n_c, float(lim["p_max_kw"]))
    q_max = np.full(n_c, float(lim["q_max_kvar"]))
    rng = substream(cfg.seed, "loads")
    p_lo, p_hi = load["p_kw"]
    p_fix = rng.uniform(p_lo, p_hi, n_c)
    if load.get("q_kvar") is not None:
        q_lo, q_hi = load["q_kvar"]
        q_fix = rng.uniform(q_lo, q_hi, n_c)
    else:
        q_fix = p_fix * math.tan(math.acos(float(load["power_factor"])))
    k = float(load["loading"])
    customers = [Customer(c.node, p_max[i] / s, q_max[i] / s, -k * p_fix[i] / s, -k * q_fix[i] / s,
                          c.label)
                 for i, c in enumerate(base.customers)]
    return base.with_customers(customers)


def _resolve_nodes(feeder: Feeder, names) -> list[int]:
    out = []
    for name in names:
        try:
            out.append(feeder.index(feeder.customer_by_label(str(name)).node))
        except KeyError:
            raise ConfigError(f"unknown coordinated customer {name!r}") from None
    return out


def group_size(fraction: float, n_customers: int) -> int:
    return int(round(float(fraction) * n_customers))


def draw_groups(feeder: Feeder, fraction: float, trials: int, seed: int,
                key: int = 0) -> list[list[int]]:
    """``trials`` random cohorts of the given share; identical cohorts are kept once."""
    cust = feeder.customer_index
    k = group_size(fraction, len(cust))
    rng = np.random.default_rng([int(seed), STREAMS["grouping"], int(key)])
    groups, seen = [], set()
    for _ in range(trials):
        g = tuple(sorted(int(i) for i in rng.choice(cust, k, replace=False)))
        if g not in seen:
            seen.add(g)
            groups.append(list(g))
    return groups


def coordinated_nodes(cfg: ScenarioConfig, feeder: Feeder, trial: int = 0) -> list[int]:
    part = cfg["partition"]
    if part.get("fraction") is not None:
        groups = draw_groups(feeder, part["fraction"], int(part.get("trials", 1)), cfg.seed)
        return groups[trial % len(groups)]
    return _resolve_nodes(feeder, part.get("coordinated") or [])


def fairness_config(cfg: ScenarioConfig, feeder: Feeder) -> FairnessConfig:
    fair = cfg["fairness"]
    idx = feeder.customer_index
    grid = fair.get("weights", "limits")
    if grid == "limits":
        w = feeder.p_max[idx] * feeder.s_base_kva
    elif grid == "equal":
        w = np.ones(len(idx))
    elif isinstance(grid, dict) and "sample_from" in grid:
        w = substream(cfg.seed, "weights").choice(np.asarray(grid["sample_from"], float), len(idx))
    else:
        raise ConfigError(f"unsupported fairness.weights {grid!r}")
    omega = {int(i): float(x) for i, x in zip(idx, w)}
    g = fair.get("group_weight")
    return FairnessConfig(float(fair["sigma_plus"]), float(fair["sigma_minus"]), omega, dict(omega),
                          g, g)


@dataclass
class Design:
    feeder: Feeder
    sens: object
    cs: object
    dp: object


def build_design(cfg: ScenarioConfig, coordinated=None, feeder: Feeder | None = None) -> Design:
    feeder = build_feeder(cfg) if feeder is None else feeder
    sens = build_sensitivities(feeder)
    cs = build_constraints(feeder, sens, tuple(cfg["v_band"]), int(cfg["rho"]))
    coordinated = coordinated_nodes(cfg, feeder) if coordinated is None else coordinated
    part = Partition.build(feeder, coordinated)
    unc = cfg["uncertainty"]
    if float(unc["eta"]) > 0 and float(unc["gamma"]) > 0:
        um = UncertaintyModel.proportional(feeder.s_fixed, float(unc["eta"]), float(unc["gamma"]),
                                           bool(unc.get("q_deviations", True)))
    else:
        um = UncertaintyModel.nominal(feeder.s_fixed)
    fc = fairness_config(cfg, feeder)
    so = cfg["solver"]
    opts = SolverOptions(tol=float(so["tol"]), max_iter=int(so["max_iter"]),
                         eps_rel=float(so["eps_rel"]), solver=str(so["backend"]))
    nominal = um.is_nominal and not fc.active
    dp = build_problem(cs, part, um, fc, opts, p_max=feeder.p_max, s_base_kva=feeder.s_base_kva,
                       nominal=nominal)
    return Design(feeder, sens, cs, dp)


# --------------------------------------------------------------------------
# metrics


def envelope_metrics(design: Design, sol, seed: int, sample_budget: int = 100000,
                     volume: bool = True) -> dict:
    """Aggregate range, volumes, geometric-mean size, allocations and Gini."""
    dp = design.dp
    part = dp.partition
    poly = geometry.residual_polytope(dp, sol)
    f_min, f_max = geometry.aggregate_range(poly if part.n_m else None, (sol.p_plus, sol.p_minus))
    out = {"aggregate_range": {"min_kw": f_min, "max_kw": f_max, "span_kw": f_max - f_min}}
    act = part.active
    widths = (sol.p_plus - sol.p_minus)[act]
    vol_n = float(np.prod(widths)) if len(widths) else 1.0
    vols = {"box": vol_n, "ellipsoid": geometry.ellipsoid_volume(sol.W) if part.n_m else 1.0}
    if volume and part.n_m:
        v, se = geometry.volume_estimate(poly, sample_budget, substream(seed, "volume"))
        vols["polytope"], vols["polytope_stderr"] = v, se
    elif not part.n_m:
        vols["polytope"], vols["polytope_stderr"] = 1.0, 0.0
    out["volumes"] = vols

    fc = dp.fairness
    w_plus, w_minus = fc.participant_weights(part.coordinated, part.non_coordinated)
    member_w = np.r_[[fc.omega_plus.get(int(i), 0.0) for i in part.non_coordinated],
                     [fc.omega_plus.get(int(i), 0.0) for i in part.coordinated]]
    active_dims = np.r_[act, np.ones(part.n_m, dtype=bool)]
    n_act = int(np.count_nonzero((member_w > 0) & active_dims))
    if n_act and "polytope" in vols:
        out["size_kw"] = geometry.geometric_mean_size(vols["polytope"], vol_n, n_act)
        out["size_ellipsoid_kw"] = geometry.geometric_mean_size(vols["ellipsoid"], vol_n, n_act)
    out["n_act"] = n_act

    a_plus, a_minus = fairness_shares(dp, sol)
    s = sol.s_base_kva
    pinned = np.r_[~act, np.zeros(len(w_plus) - part.n_n, dtype=bool)]
    wp, wm = np.where(pinned, 0.0, w_plus), np.where(pinned, 0.0, w_minus)
    if wp.sum() > 0 and wm.sum() > 0:
        x, kept = weight_normalized_allocations(a_plus * s, a_minus * s, wp / wp.sum(), wm / wm.sum())
        out["allocations"] = x.tolist()
        out["gini"] = gini(x) if x.mean() > 0 else 0.0
    return out


def _labels(feeder: Feeder, idx) -> list[str]:
    by_node = {c.node: (c.label or c.node) for c in feeder.customers}
    return [by_node[feeder.nodes[i]] for i in idx]


def solution_document(design: Design, sol) -> dict:
    f, part = design.feeder, design.dp.partition
    fc = design.dp.fairness
    cohort_plus = float(sol.pm_plus.sum()) if sol.n_m and len(sol.pm_plus) else 0.0
    w = [fc.omega_plus.get(int(i), 0.0) for i in part.coordinated]
    return {
        "status": sol.status,
        "objective": sol.objective,
        "coordinated": _labels(f, part.coordinated),
        "W_kw": np.asarray(sol.W).tolist(),
        "center_kw": np.asarray(sol.center).tolist(),
        "intervals": [{"customer": lab, "p_minus_kw": float(a), "p_plus_kw": float(b),
                       "pinned": not bool(on)}
                      for lab, a, b, on in zip(_labels(f, part.non_coordinated), sol.p_minus,
                                               sol.p_plus, part.active)],
        "q_kvar": dict(zip(_labels(f, part.customers), map(float, sol.q))),
        "directional_kw": {"plus": np.asarray(sol.pm_plus).tolist(),
                           "minus": np.asarray(sol.pm_minus).tolist()},
        "cohort_split_plus_kw": split_cohort(cohort_plus, w).tolist() if sol.n_m else [],
        "residuals": {k: v for k, v in sol.residuals.items()},
    }


def run_solve(cfg, stress: bool = True, volume: bool = True) -> dict:
    """One scenario end to end; the ``timing`` entry is the only run-dependent part."""
    cfg = load_config(cfg)
    t0 = time.perf_counter()
    design = build_design(cfg)
    dp = design.dp
    sol = solve(dp)
    t_solve = time.perf_counter() - t0
    report = {
        "scenario": cfg["name"],
        "seed": cfg.seed,
        "config": cfg.to_document(),
        "flags": {"nominal_problem": bool(dp.reduces_to_nominal),
                  "homogeneous_limits": cfg["limits"].get("sample_from") is None},
        "feeder": {"name": design.feeder.name, "nodes": design.feeder.n,
                   "customers": len(design.feeder.customers)},
        "census": dp.census(),
        "solution": solution_document(design, sol),
        "polytope": geometry.residual_polytope(dp, sol).to_document() if dp.partition.n_m else None,
        "metrics": envelope_metrics(design, sol, cfg.seed, int(cfg["volume"]["sample_budget"]),
                                    volume),
    }
    timing = {"solve_s": t_solve}
    if stress:
        t1 = time.perf_counter()
        report["stress"] = stress_document(cfg, design, sol)
        timing["stress_s"] = time.perf_counter() - t1
    report["timing"] = timing
    return report


def stress_document(cfg: ScenarioConfig, design: Design, sol) -> dict:
    st = cfg["stress"]
    q_max = design.feeder.q_max if st.get("q_mode") == "corners" else None
    smp = acpf.stress_sample(design.dp, sol, design.sens, seed=substream(cfg.seed, "stress"),
                             count=int(st["count"]), q_mode=st.get("q_mode", "setpoint"),
                             q_max=q_max)
    rep = acpf.stress_report(design.feeder, smp, design.sens, tuple(cfg["v_band"]))
    doc = rep.to_document()
    doc["within_limits"] = rep.within()
    return doc


# --------------------------------------------------------------------------
# sweeps


def _cell(args):
    """One sweep cell; never raises so a failure does not abort the sweep."""
    doc, coordinated, want = args
    cfg = make_config(doc)
    t0 = time.perf_counter()
    try:
        design = build_design(cfg, coordinated)
        sol = solve(design.dp)
        out = {"status": sol.status, "objective": sol.objective,
               "newton_steps": sol.residuals.get("newton_steps")}
        m = envelope_metrics(design, sol, cfg.seed, int(cfg["volume"]["sample_budget"]),
                             volume="volume" in want)
        out.update(span_kw=m["aggregate_range"]["span_kw"], min_kw=m["aggregate_range"]["min_kw"],
                   max_kw=m["aggregate_range"]["max_kw"])
        for key in ("size_kw", "size_ellipsoid_kw", "gini", "n_act"):
            if key in m:
                out[key] = m[key]
    except (DesignError, ValueError, RuntimeError) as exc:
        out = {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}
    out["time_s"] = time.perf_counter() - t0
    return out


def _map(cells, jobs: int):
    if jobs <= 1 or len(cells) <= 1:
        return [_cell(c) for c in cells]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_cell, cells))


def _axis(cfg: ScenarioConfig, name: str) -> tuple[ScenarioConfig, dict]:
    grid = dict(cfg["sweeps"].get(name) or {})
    return cfg.with_overrides(grid.pop("overrides", {})), grid


def sweep_coordination(cfg: ScenarioConfig, jobs: int = 1) -> dict:
    cfg, grid = _axis(cfg, "coordination")
    levels = [float(x) for x in grid.get("levels", [0.1, 0.3, 0.6, 1.0])]
    trials = int(grid.get("trials", 10))
    feeder = build_feeder(cfg)
    doc = cfg.to_document()
    cells, keys = [(doc, [], ("range",))], [("baseline", 0.0, 0)]
    for level in levels:
        for t, g in enumerate(draw_groups(feeder, level, trials, cfg.seed, int(round(1000 * level)))):
            cells.append((doc, g, ("range",)))
            keys.append(("trial", level, t))
    results = _map(cells, jobs)
    base = results[0]
    rows = []
    for (kind, level, t), res in zip(keys, results):
        row = {"level": level, "trial": t, "n_m": 0 if kind == "baseline" else
               group_size(level, len(feeder.customers)), **res}
        if kind != "baseline" and res["status"] != "failed" and base["status"] != "failed":
            row["increase_pct"] = 100.0 * (res["span_kw"] / base["span_kw"] - 1.0)
        rows.append(row)
    summary = []
    for level in levels:
        sel = [r for r in rows[1:] if r["level"] == level and "increase_pct" in r]
        inc = [r["increase_pct"] for r in sel]
        times = [r["time_s"] for r in sel]
        summary.append({"level": level, "n_m": group_size(level, len(feeder.customers)),
                        "trials": len(sel),
                        "mean_increase_pct": float(np.mean(inc)) if inc else None,
                        "min_increase_pct": float(np.min(inc)) if inc else None,
                        "max_increase_pct": float(np.max(inc)) if inc else None,
                        "min_time_s": float(np.min(times)) if times else None,
                        "max_time_s": float(np.max(times)) if times else None})
    return {"axis": "coordination", "baseline_span_kw": base.get("span_kw"), "rows": rows,
            "summary": summary,
            "note": "homogeneous device limits; identical cohorts are evaluated once"}


def sweep_uncertainty(cfg: ScenarioConfig, jobs: int = 1) -> dict:
    cfg, grid = _axis(cfg, "uncertainty")
    etas = [float(x) for x in grid.get("eta", [0.1, 0.2, 0.3])]
    gammas = [float(x) for x in grid.get("gamma", [0, 5, 10, 15, 20])]
    loadings = [float(x) for x in grid.get("loading", [0.5, 1.0, 2.0])]
    cells, keys = [], []
    for k in loadings:
        for eta in etas:
            for g in gammas:
                c = cfg.with_overrides({"fixed_load": {"loading": k},
                                        "uncertainty": {"eta": eta, "gamma": g}})
                feeder = build_feeder(c)
                cells.append((c.to_document(), coordinated_nodes(c, feeder), ("range",)))
                keys.append((k, eta, g))
    results = _map(cells, jobs)
    rows = [{"loading": k, "eta": eta, "gamma": g, **res} for (k, eta, g), res in zip(keys, results)]
    summary = []
    for k in loadings:
        sel = {(r["eta"], r["gamma"]): r.get("span_kw") for r in rows if r["loading"] == k}
        nominal = sel.get((etas[0], gammas[0]))
        worst = sel.get((etas[-1], gammas[-1]))
        red = None
        if nominal and worst is not None:
            red = 100.0 * (1.0 - worst / nominal)
        summary.append({"loading": k, "nominal_span_kw": nominal, "robust_span_kw": worst,
                        "reduction_pct": red})
    return {"axis": "uncertainty", "rows": rows, "summary": summary}


def sweep_fairness(cfg: ScenarioConfig, jobs: int = 1) -> dict:
    cfg, grid = _axis(cfg, "fairness")
    sigmas = [float(x) for x in grid.get("sigma", np.round(np.arange(10, -1, -1) / 10, 1))]
    cells = []
    for sg in sigmas:
        c = cfg.with_overrides({"fairness": {"sigma_plus": sg, "sigma_minus": sg}})
        feeder = build_feeder(c)
        cells.append((c.to_document(), coordinated_nodes(c, feeder), ("range", "volume")))
    results = _map(cells, jobs)
    rows = [{"sigma": sg, **res} for sg, res in zip(sigmas, results)]
    return {"axis": "fairness", "rows": rows,
            "note": "size_kw uses the published polytope volume; size_ellipsoid_kw the design ellipsoid"}


SWEEPS = {"coordination": sweep_coordination, "uncertainty": sweep_uncertainty,
          "fairness": sweep_fairness}


def run_sweep(cfg, axis: str, jobs: int = 1) -> dict:
    cfg = load_config(cfg)
    if axis not in SWEEPS:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {sorted(SWEEPS)}")
    t0 = time.perf_counter()
    out = SWEEPS[axis](cfg, jobs)
    out.update(scenario=cfg["name"], seed=cfg.seed, timing={"total_s": time.perf_counter() - t0})
    return out
