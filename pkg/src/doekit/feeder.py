"""Radial feeder representation and linearized branch-flow sensitivities.

Everything inside :class:`Feeder` is per-unit on the declared base.  The
feeder document (JSON) uses kW / kVAr / kVA; conversion happens in
:func:`load_feeder` and nowhere else.

Sign convention: ``p_hat`` and ``q_hat`` are net *injections*, so exporting
raises voltage.  Customer fixed loads in the document are consumption
(positive = draw) and are negated on ingestion.
"""
from __future__ import annotations

import csv
import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class FeederError(ValueError):
    """Raised for malformed or non-radial feeder documents."""


@dataclass(frozen=True)
class Line:
    from_node: str
    to_node: str
    r: float  # pu
    x: float  # pu
    s_max: float  # pu


@dataclass(frozen=True)
class Customer:
    node: str
    p_max: float
    q_max: float
    p_fixed: float  # injection, pu (negative for consumption)
    q_fixed: float
    label: str = ""


@dataclass(frozen=True)
class Feeder:
    """Validated radial feeder.

    ``nodes`` holds the N non-slack nodes in breadth-first order from the
    slack; ``lines[k]`` is the unique line feeding ``nodes[k]``, so node and
    line indices coincide.  ``parent[k]`` is the index of the upstream node,
    or -1 when the upstream end is the slack.
    """

    slack: str
    nodes: tuple[str, ...]
    lines: tuple[Line, ...]
    parent: tuple[int, ...]
    customers: tuple[Customer, ...]
    v0: float = 1.0
    s_base_kva: float = 1.0
    v_base_volts: float = 240.0
    name: str = ""
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(self.nodes)})

    @property
    def n(self) -> int:
        return len(self.nodes)

    def index(self, node: str) -> int:
        return self._index[node]

    def customer_by_label(self, label: str) -> Customer:
        for c in self.customers:
            if c.label == label or c.node == label:
                return c
        raise KeyError(f"no customer labelled {label!r}")

    @property
    def customer_index(self) -> np.ndarray:
        return np.array([self.index(c.node) for c in self.customers], dtype=int)

    @property
    def has_customer(self) -> np.ndarray:
        mask = np.zeros(self.n, dtype=bool)
        mask[self.customer_index] = True
        return mask

    def _node_vector(self, attr: str) -> np.ndarray:
        out = np.zeros(self.n)
        for c in self.customers:
            out[self.index(c.node)] = getattr(c, attr)
        return out

    @property
    def p_max(self) -> np.ndarray:
        return self._node_vector("p_max")

    @property
    def q_max(self) -> np.ndarray:
        return self._node_vector("q_max")

    @property
    def s_fixed(self) -> np.ndarray:
        """Stacked fixed injections ``[p_fixed; q_fixed]`` (2N, pu)."""
        return np.concatenate([self._node_vector("p_fixed"), self._node_vector("q_fixed")])

    @property
    def r(self) -> np.ndarray:
        return np.array([ln.r for ln in self.lines])

    @property
    def x(self) -> np.ndarray:
        return np.array([ln.x for ln in self.lines])

    @property
    def s_max(self) -> np.ndarray:
        return np.array([ln.s_max for ln in self.lines])

    def to_pu(self, kw) -> np.ndarray:
        return np.asarray(kw, dtype=float) / self.s_base_kva

    def to_kw(self, pu) -> np.ndarray:
        return np.asarray(pu, dtype=float) * self.s_base_kva

    def with_customers(self, customers) -> "Feeder":
        return Feeder(self.slack, self.nodes, self.lines, self.parent, tuple(customers),
                      self.v0, self.s_base_kva, self.v_base_volts, self.name)

    def to_document(self) -> dict:
        """Inverse of :func:`feeder_from_document` (kW units)."""
        s = self.s_base_kva
        cust = {c.node for c in self.customers}
        return {
            "name": self.name,
            "base": {"s_kva": s, "v_volts": self.v_base_volts},
            "slack": {"id": self.slack, "v0_pu2": self.v0},
            "nodes": [{"id": nd, "customer": nd in cust} for nd in self.nodes],
            "lines": [
                {"from": ln.from_node, "to": ln.to_node, "r_pu": ln.r, "x_pu": ln.x,
                 "s_max_kva": ln.s_max * s}
                for ln in self.lines
            ],
            "customers": [
                {"node": c.node, "p_max_kw": c.p_max * s, "q_max_kvar": c.q_max * s,
                 "p_fixed_kw": -c.p_fixed * s, "q_fixed_kvar": -c.q_fixed * s,
                 **({"label": c.label} if c.label else {})}
                for c in self.customers
            ],
        }


@dataclass(frozen=True)
class Sensitivities:
    R: np.ndarray
    X: np.ndarray
    M: np.ndarray
    v0: np.ndarray

    def voltage(self, p_hat, q_hat) -> np.ndarray:
        return self.R @ p_hat + self.X @ q_hat + self.v0

    def flows(self, p_hat, q_hat) -> tuple[np.ndarray, np.ndarray]:
        return self.M @ p_hat, self.M @ q_hat


def _require(doc, key, where="document"):
    if key not in doc:
        raise FeederError(f"{where}: missing key {key!r}")
    return doc[key]


def feeder_from_document(doc: dict) -> Feeder:
    """Validate a feeder document and convert it to per-unit."""
    base = _require(doc, "base")
    s_base = float(_require(base, "s_kva", "base"))
    v_base = float(base.get("v_volts", 240.0))
    slack_doc = _require(doc, "slack")
    v0 = float(_require(slack_doc, "v0_pu2", "slack"))
    if s_base <= 0 or v0 <= 0:
        raise FeederError("base power and slack voltage must be positive")

    node_ids = [str(nd["id"]) for nd in _require(doc, "nodes")]
    slack = str(slack_doc.get("id", "slack"))
    if len(set(node_ids)) != len(node_ids):
        raise FeederError("duplicate node ids")
    non_slack = [nd for nd in node_ids if nd != slack]
    known = set(non_slack) | {slack}

    children: dict[str, list[tuple[str, Line]]] = {nd: [] for nd in known}
    raw_lines = _require(doc, "lines")
    for i, ln in enumerate(raw_lines):
        a, b = str(ln["from"]), str(ln["to"])
        for end in (a, b):
            if end not in known:
                raise FeederError(f"line {i}: dangling endpoint {end!r}")
        r, x, s = float(ln["r_pu"]), float(ln["x_pu"]), float(ln["s_max_kva"])
        if r < 0 or x < 0:
            raise FeederError(f"line {i}: negative impedance")
        if s <= 0:
            raise FeederError(f"line {i}: non-positive rating")
        line = Line(a, b, r, x, s / s_base)
        children[a].append((b, line))
        children[b].append((a, line))

    if len(raw_lines) != len(non_slack):
        raise FeederError(
            f"non-radial topology: {len(raw_lines)} lines for {len(non_slack)} non-slack nodes")

    # N lines + connected over N+1 nodes <=> tree
    order, lines, parent = [], [], []
    pos = {slack: -1}
    queue = deque([slack])
    while queue:
        u = queue.popleft()
        for v, line in children[u]:
            if v in pos:
                continue
            pos[v] = len(order)
            order.append(v)
            parent.append(pos[u])
            lines.append(Line(u, v, line.r, line.x, line.s_max))
            queue.append(v)
    if len(order) != len(non_slack):
        raise FeederError("non-radial topology: cycle or disconnected component")

    customers, seen = [], set()
    flagged = {str(nd["id"]) for nd in doc["nodes"] if nd.get("customer")}
    for c in doc.get("customers", []):
        node = str(c["node"])
        if node not in pos or node == slack:
            raise FeederError(f"customer references unknown node {node!r}")
        if node in seen:
            raise FeederError(f"duplicate customer-node assignment at {node!r}")
        seen.add(node)
        try:
            p_max, q_max = float(c["p_max_kw"]), float(c["q_max_kvar"])
        except KeyError as exc:
            raise FeederError(f"customer {node!r}: missing device limit {exc}") from None
        if p_max < 0 or q_max < 0:
            raise FeederError(f"customer {node!r}: negative device limit")
        customers.append(Customer(
            node, p_max / s_base, q_max / s_base,
            -float(c.get("p_fixed_kw", 0.0)) / s_base,
            -float(c.get("q_fixed_kvar", 0.0)) / s_base, str(c.get("label", ""))))
    missing = flagged - seen
    if missing:
        raise FeederError(f"nodes flagged as customers without limits: {sorted(missing)}")

    return Feeder(slack, tuple(order), tuple(lines), tuple(parent), tuple(customers),
                  v0, s_base, v_base, str(doc.get("name", "")))


def load_feeder(source) -> Feeder:
    """Load a feeder from a JSON path, JSON string or already-parsed dict."""
    if isinstance(source, dict):
        return feeder_from_document(source)
    if isinstance(source, str) and source.lstrip().startswith("{"):
        return feeder_from_document(json.loads(source))
    path = Path(source)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read feeder document {path}: {exc}") from exc
    return feeder_from_document(json.loads(text))


def downstream_matrix(feeder: Feeder) -> np.ndarray:
    """M[l, i] = 1 iff node i is in the subtree fed by line l."""
    n = feeder.n
    M = np.zeros((n, n))
    for i in range(n):
        k = i
        while k >= 0:
            M[k, i] = 1.0
            k = feeder.parent[k]
    return M


def build_sensitivities(feeder: Feeder) -> Sensitivities:
    M = downstream_matrix(feeder)
    R = 2.0 * M.T @ (feeder.r[:, None] * M)
    X = 2.0 * M.T @ (feeder.x[:, None] * M)
    return Sensitivities(R, X, M, np.full(feeder.n, feeder.v0))


# --------------------------------------------------------------------------
# conversion helpers


def reduce_feeder(feeder: Feeder) -> Feeder:
    """Drop customer-free dead ends and merge customer-free series chains.

    Both operations are exact for the linear model and for AC power flow
    without shunt elements: removed leaves carry no current, and a chain of
    series impedances with no injection in between is one impedance whose
    rating is the weakest segment.
    """
    cust = {c.node for c in feeder.customers}
    kids: dict[int, list[int]] = {i: [] for i in range(-1, feeder.n)}
    for i, p in enumerate(feeder.parent):
        kids[p].append(i)
    alive = [True] * feeder.n

    # post-order pruning of dead ends
    for i in reversed(range(feeder.n)):
        if feeder.nodes[i] not in cust and not any(alive[k] for k in kids[i]):
            alive[i] = False

    keep_lines: dict[int, Line] = {}

    def walk(start: int, upstream: str):
        stack = [(start, upstream, 0.0, 0.0, math.inf)]
        while stack:
            i, up, r, x, s = stack.pop()
            ln = feeder.lines[i]
            r, x, s = r + ln.r, x + ln.x, min(s, ln.s_max)
            live = [k for k in kids[i] if alive[k]]
            name = feeder.nodes[i]
            if name not in cust and len(live) == 1:
                stack.append((live[0], up, r, x, s))
                continue
            keep_lines[i] = Line(up, name, r, x, s)
            for k in live:
                stack.append((k, name, 0.0, 0.0, math.inf))

    for k in kids[-1]:
        if alive[k]:
            walk(k, feeder.slack)

    doc = feeder.to_document()
    s_base = feeder.s_base_kva
    doc["nodes"] = [{"id": feeder.nodes[i], "customer": feeder.nodes[i] in cust}
                    for i in sorted(keep_lines)]
    doc["lines"] = [{"from": ln.from_node, "to": ln.to_node, "r_pu": ln.r, "x_pu": ln.x,
                     "s_max_kva": ln.s_max * s_base}
                    for _, ln in sorted(keep_lines.items())]
    return feeder_from_document(doc)


def _read_csv_rows(path: Path) -> list[dict]:
    # the public EU LV files carry a free-text banner line before the header
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if ln.strip()]
    start = next(i for i, ln in enumerate(lines) if "," in ln and not ln.startswith(("#", "=")))
    if lines[start].count(",") < 2 and start + 1 < len(lines):
        start += 1
    return list(csv.DictReader(lines[start:], skipinitialspace=True))


def feeder_from_eulv_csv(directory, *, s_base_kva: float = 1.0, v_phase_volts: float = 416 / math.sqrt(3),
                         ampacity_a: float | dict = 421.0, p_max_kw: float = 5.0,
                         q_max_kvar: float = 2.0, source_line: dict | None = None,
                         reduce: bool = True) -> dict:
    """Convert the public EU LV test feeder CSV files into a feeder document.

    Reads ``Lines.csv``, ``LineCodes.csv`` and ``Loads.csv`` from
    ``directory``.  The network is modeled per phase at ``v_phase_volts``;
    ratings come from ``ampacity_a`` (a scalar or a per-linecode mapping)
    because the CSV files carry none.  ``source_line`` optionally adds an
    upstream impedance ``{"r_ohm", "x_ohm", "s_max_kva"}`` between the slack
    and the first bus (e.g. the distribution transformer).
    """
    directory = Path(directory)
    z_base = v_phase_volts ** 2 / (s_base_kva * 1e3)
    codes = {}
    for row in _read_csv_rows(directory / "LineCodes.csv"):
        units = row.get("Units", "km").strip().lower()
        per_km = {"km": 1.0, "m": 1e3, "kft": 1 / 0.3048, "mi": 1 / 1.609344}.get(units, 1.0)
        codes[row["Name"].strip()] = (float(row["R1"]) * per_km, float(row["X1"]) * per_km)

    lines, buses = [], set()
    for row in _read_csv_rows(directory / "Lines.csv"):
        code = row["LineCode"].strip()
        length = float(row["Length"])
        units = row.get("Units", "m").strip().lower()
        length_km = length * {"m": 1e-3, "km": 1.0, "ft": 3.048e-4}.get(units, 1e-3)
        r_km, x_km = codes[code]
        amps = ampacity_a.get(code, 421.0) if isinstance(ampacity_a, dict) else ampacity_a
        a, b = row["Bus1"].strip(), row["Bus2"].strip()
        buses.update((a, b))
        lines.append({"from": a, "to": b, "r_pu": r_km * length_km / z_base,
                      "x_pu": x_km * length_km / z_base,
                      "s_max_kva": amps * v_phase_volts / 1e3})

    customers = []
    for row in _read_csv_rows(directory / "Loads.csv"):
        kw = float(row.get("kW", 0.0) or 0.0)
        pf = float(row.get("PF", 0.95) or 0.95)
        customers.append({"node": row["Bus"].strip(), "p_max_kw": p_max_kw, "q_max_kvar": q_max_kvar,
                          "p_fixed_kw": kw, "q_fixed_kvar": kw * math.tan(math.acos(pf))})

    # the lowest-numbered bus is the feeder head in the published files
    head = min(buses, key=lambda s: (len(s), s))
    slack = head
    if source_line is not None:
        slack = "source"
        lines.insert(0, {"from": slack, "to": head,
                         "r_pu": source_line["r_ohm"] / z_base, "x_pu": source_line["x_ohm"] / z_base,
                         "s_max_kva": source_line["s_max_kva"]})
        buses.add(slack)
    cust = {c["node"] for c in customers}
    doc = {
        "name": "eulv",
        "base": {"s_kva": s_base_kva, "v_volts": v_phase_volts},
        "slack": {"id": slack, "v0_pu2": 1.0},
        "nodes": [{"id": b, "customer": b in cust} for b in sorted(buses)],
        "lines": lines,
        "customers": customers,
    }
    if reduce:
        doc = reduce_feeder(feeder_from_document(doc)).to_document()
        doc["name"] = "eulv"
    return doc
