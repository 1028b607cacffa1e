import numpy as np
import pytest

from doekit.constraints import build_constraints
from doekit.feeder import build_sensitivities, load_feeder
from doekit.scenario import build_design, load_config
from doekit.solver import solve

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line[1])


def random_feeder_doc(rng, n_nodes, customer_share=0.7, s_base=10.0, p_max=5.0, q_max=2.0,
                      load_kw=(0.0, 1.0), rating=(20.0, 60.0), impedance=(0.002, 0.02)):
    """Random radial feeder document; node k > 0 hangs off a random earlier node."""
    nodes = [{"id": "s"}] + [{"id": f"n{k}"} for k in range(1, n_nodes + 1)]
    lines, customers = [], []
    for k in range(1, n_nodes + 1):
        up = "s" if k == 1 else rng.choice(["s"] + [f"n{j}" for j in range(1, k)])
        r = rng.uniform(*impedance)
        lines.append({"from": str(up), "to": f"n{k}", "r_pu": r, "x_pu": rng.uniform(0.3, 1.0) * r,
                      "s_max_kva": rng.uniform(*rating)})
        if rng.random() < customer_share or k == n_nodes:
            p = rng.uniform(*load_kw)
            customers.append({"node": f"n{k}", "p_max_kw": p_max, "q_max_kvar": q_max,
                              "p_fixed_kw": p, "q_fixed_kvar": 0.33 * p})
    for nd in nodes:
        nd["customer"] = any(c["node"] == nd["id"] for c in customers)
    return {"base": {"s_kva": s_base, "v_volts": 240.0}, "slack": {"id": "s", "v0_pu2": 1.0},
            "nodes": nodes, "lines": lines, "customers": customers}


@pytest.fixture
def two_node_doc():
    return {
        "base": {"s_kva": 10.0, "v_volts": 240.0},
        "slack": {"id": "s", "v0_pu2": 1.0},
        "nodes": [{"id": "s"}, {"id": "a", "customer": True}],
        "lines": [{"from": "s", "to": "a", "r_pu": 0.1, "x_pu": 0.05, "s_max_kva": 100.0}],
        "customers": [{"node": "a", "p_max_kw": 5.0, "q_max_kvar": 2.0,
                       "p_fixed_kw": 0.0, "q_fixed_kvar": 0.0}],
    }


@pytest.fixture
def small_system():
    """Factory for (feeder, sens, cs) of a random small feeder."""
    def make(seed, n_nodes=6, **kw):
        rng = np.random.default_rng(seed)
        f = load_feeder(random_feeder_doc(rng, n_nodes, **kw))
        s = build_sensitivities(f)
        return f, s, build_constraints(f, s)
    return make


@pytest.fixture(scope="session")
def basecase():
    """Bundled base case: design and its solution (solved once per session)."""
    cfg = load_config("basecase")
    design = build_design(cfg)
    sol = solve(design.dp)
    return cfg, design, sol


def make_problem(feeder, cs, coordinated=(), eta=0.0, gamma=0.0, sigma=1.0, solver="barrier",
                 nominal=None, weights=None):
    """Design problem on a loaded feeder with weights equal to the device limits by default."""
    from doekit.fairness import FairnessConfig
    from doekit.solver import Partition, SolverOptions, build_problem
    from doekit.uncertainty import UncertaintyModel

    part = Partition.build(feeder, coordinated)
    if eta > 0 and gamma > 0:
        um = UncertaintyModel.proportional(feeder.s_fixed, eta, gamma)
    else:
        um = UncertaintyModel.nominal(feeder.s_fixed)
    if weights is None:
        weights = {int(i): float(feeder.p_max[i]) for i in feeder.customer_index}
    fc = FairnessConfig(sigma, sigma, weights, dict(weights))
    if nominal is None:
        nominal = um.is_nominal and not fc.active
    return build_problem(cs, part, um, fc, SolverOptions(solver=solver), p_max=feeder.p_max,
                         s_base_kva=feeder.s_base_kva, nominal=nominal)
