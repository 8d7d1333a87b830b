"""Synthetic request-trace generation, trace file I/O, and task segmentation.

A trace is a stream of (timestamp, content_id, node_id) request events over a
fixed catalog, split into days.  The synthetic generator draws each node's
requests from a Zipf popularity ranking; two knobs stress the two workload
properties the simulator cares about:

* ``drift_fraction``  -- fraction of the global ranking re-shuffled between
  consecutive days (popularity dynamics over time),
* ``heterogeneity``   -- fraction of each node's ranking permuted relative to
  the shared global ranking (popularity differences across nodes).

Per-node permutations are drawn once and held fixed across days, so the
similarity structure between nodes is stable even while popularity drifts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class TraceFormatError(ValueError):
    """Raised when a trace file fails to parse or violates its header bounds."""


@dataclass(frozen=True)
class RequestEvent:
    timestamp: int
    content_id: int
    node_id: int


@dataclass(frozen=True)
class SyntheticConfig:
    catalog_size: int
    num_nodes: int
    requests_per_day_per_node: int
    num_days: int
    zipf_exponent: float = 1.0
    drift_fraction: float = 0.0
    heterogeneity: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.catalog_size < 1:
            raise ValueError("catalog_size must be positive")
        if self.num_nodes < 1:
            raise ValueError("num_nodes must be positive")
        if self.requests_per_day_per_node < 1:
            raise ValueError("requests_per_day_per_node must be positive")
        if self.num_days < 1:
            raise ValueError("num_days must be positive")
        if self.zipf_exponent < 0:
            raise ValueError("zipf_exponent must be non-negative")
        if not 0.0 <= self.drift_fraction <= 1.0:
            raise ValueError("drift_fraction must be in [0, 1]")
        if not 0.0 <= self.heterogeneity <= 1.0:
            raise ValueError("heterogeneity must be in [0, 1]")


@dataclass
class Trace:
    """A sorted event stream plus the header that bounds its ids.

    Events are stored as parallel arrays for speed; ``day_length`` is the
    number of ticks per day window (derived on load, exact for generated
    traces).
    """

    num_nodes: int
    catalog_size: int
    num_days: int
    day_length: int
    timestamps: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    contents: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    nodes: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.timestamps)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Trace):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and self.catalog_size == other.catalog_size
            and self.num_days == other.num_days
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.contents, other.contents)
            and np.array_equal(self.nodes, other.nodes)
        )

    def events(self):
        for t, c, n in zip(self.timestamps, self.contents, self.nodes):
            yield RequestEvent(int(t), int(c), int(n))


@dataclass
class Task:
    """One node's contiguous slice of events for one day."""

    day_index: int
    node_id: int
    timestamps: np.ndarray
    contents: np.ndarray

    def __len__(self) -> int:
        return len(self.timestamps)


def zipf_pmf(n: int, s: float) -> np.ndarray:
    """Probability vector with entries proportional to rank**(-s)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    weights = np.arange(1, n + 1, dtype=np.float64) ** (-float(s))
    return weights / weights.sum()


def _node_orders(global_order: np.ndarray, node_sites: list, node_perms: list) -> list:
    orders = []
    for sites, perm in zip(node_sites, node_perms):
        order = global_order.copy()
        if len(sites):
            order[sites] = order[sites][perm]
        orders.append(order)
    return orders


def node_day_pmfs(cfg: SyntheticConfig) -> np.ndarray:
    """Exact per-(day, node) request distributions of the generator.

    Returns an array of shape (num_days, num_nodes, catalog_size).  Uses the
    same seeded draws as :func:`generate_trace`, so the returned pmfs are the
    ones the trace was sampled from.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    pmf = zipf_pmf(cfg.catalog_size, cfg.zipf_exponent)
    global_order = rng.permutation(cfg.catalog_size)

    n_het = int(round(cfg.heterogeneity * cfg.catalog_size))
    node_sites, node_perms = [], []
    for _ in range(cfg.num_nodes):
        sites = rng.choice(cfg.catalog_size, size=n_het, replace=False)
        node_sites.append(sites)
        node_perms.append(rng.permutation(n_het))

    n_drift = int(round(cfg.drift_fraction * cfg.catalog_size))
    out = np.empty((cfg.num_days, cfg.num_nodes, cfg.catalog_size))
    for day in range(cfg.num_days):
        if day > 0 and n_drift:
            sites = rng.choice(cfg.catalog_size, size=n_drift, replace=False)
            global_order[sites] = global_order[sites][rng.permutation(n_drift)]
        for j, order in enumerate(_node_orders(global_order, node_sites, node_perms)):
            p = np.empty(cfg.catalog_size)
            p[order] = pmf
            out[day, j] = p
    return out


def generate_trace(cfg: SyntheticConfig) -> Trace:
    """Sample a deterministic synthetic trace from ``cfg``.

    Identical configs (including seed) produce byte-identical traces.  Day d
    occupies ticks [d*L, (d+1)*L) with L = requests_per_day_per_node.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    pmf = zipf_pmf(cfg.catalog_size, cfg.zipf_exponent)
    global_order = rng.permutation(cfg.catalog_size)

    n_het = int(round(cfg.heterogeneity * cfg.catalog_size))
    node_sites, node_perms = [], []
    for _ in range(cfg.num_nodes):
        sites = rng.choice(cfg.catalog_size, size=n_het, replace=False)
        node_sites.append(sites)
        node_perms.append(rng.permutation(n_het))

    n_drift = int(round(cfg.drift_fraction * cfg.catalog_size))
    L = cfg.requests_per_day_per_node
    R = cfg.requests_per_day_per_node

    ts_parts, ct_parts, nd_parts = [], [], []
    for day in range(cfg.num_days):
        if day > 0 and n_drift:
            sites = rng.choice(cfg.catalog_size, size=n_drift, replace=False)
            global_order[sites] = global_order[sites][rng.permutation(n_drift)]
        day_ts, day_ct, day_nd = [], [], []
        for j, order in enumerate(_node_orders(global_order, node_sites, node_perms)):
            p = np.empty(cfg.catalog_size)
            p[order] = pmf
            contents = rng.choice(cfg.catalog_size, size=R, p=p)
            ticks = np.sort(rng.integers(day * L, (day + 1) * L, size=R))
            day_ts.append(ticks)
            day_ct.append(contents)
            day_nd.append(np.full(R, j, dtype=np.int64))
        ts = np.concatenate(day_ts)
        # stable sort keeps generation order on tick ties
        idx = np.argsort(ts, kind="stable")
        ts_parts.append(ts[idx])
        ct_parts.append(np.concatenate(day_ct)[idx])
        nd_parts.append(np.concatenate(day_nd)[idx])

    return Trace(
        num_nodes=cfg.num_nodes,
        catalog_size=cfg.catalog_size,
        num_days=cfg.num_days,
        day_length=L,
        timestamps=np.concatenate(ts_parts).astype(np.int64),
        contents=np.concatenate(ct_parts).astype(np.int64),
        nodes=np.concatenate(nd_parts).astype(np.int64),
    )


def save_trace(trace: Trace, path) -> None:
    """Write the delimited interchange format (header line, then one event per line)."""
    with open(path, "w", newline="\n") as fh:
        fh.write(f"{trace.num_nodes},{trace.catalog_size},{trace.num_days}\n")
        for t, c, n in zip(trace.timestamps, trace.contents, trace.nodes):
            fh.write(f"{t},{c},{n}\n")


def load_trace(path) -> Trace:
    """Parse a trace file, validating ids against the header and timestamp order."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise TraceFormatError(f"{path}: empty file, expected a header line")
    header = lines[0].split(",")
    if len(header) != 3:
        raise TraceFormatError(f"{path}: line 1: expected 'num_nodes,catalog_size,num_days'")
    try:
        num_nodes, catalog_size, num_days = (int(x) for x in header)
    except ValueError as exc:
        raise TraceFormatError(f"{path}: line 1: {exc}") from None
    if num_nodes < 1 or catalog_size < 1 or num_days < 1:
        raise TraceFormatError(f"{path}: line 1: header counts must be positive")

    n_events = len(lines) - 1
    ts = np.empty(n_events, dtype=np.int64)
    ct = np.empty(n_events, dtype=np.int64)
    nd = np.empty(n_events, dtype=np.int64)
    for i, line in enumerate(lines[1:]):
        lineno = i + 2
        parts = line.split(",")
        if len(parts) != 3:
            raise TraceFormatError(f"{path}: line {lineno}: expected 'timestamp,content_id,node_id'")
        try:
            t, c, n = (int(x) for x in parts)
        except ValueError:
            raise TraceFormatError(f"{path}: line {lineno}: non-integer field") from None
        if not 0 <= c < catalog_size:
            raise TraceFormatError(f"{path}: line {lineno}: content_id {c} out of range [0, {catalog_size})")
        if not 0 <= n < num_nodes:
            raise TraceFormatError(f"{path}: line {lineno}: node_id {n} out of range [0, {num_nodes})")
        if i > 0 and t < ts[i - 1]:
            raise TraceFormatError(
                f"{path}: line {lineno}: timestamp {t} earlier than {ts[i - 1]} on line {lineno - 1}"
            )
        ts[i], ct[i], nd[i] = t, c, n

    if n_events:
        day_length = -(-int(ts[-1] + 1) // num_days)  # ceil division
    else:
        day_length = 1
    return Trace(
        num_nodes=num_nodes,
        catalog_size=catalog_size,
        num_days=num_days,
        day_length=day_length,
        timestamps=ts,
        contents=ct,
        nodes=nd,
    )


def split_tasks(trace: Trace, num_days: int, num_nodes: int) -> list:
    """Partition a trace into per-(day, node) Tasks, ordered by (day, node).

    Every event lands in exactly one task; day windows are
    [d * day_length, (d + 1) * day_length).
    """
    L = trace.day_length
    days = np.minimum(trace.timestamps // L, num_days - 1)
    tasks = []
    for d in range(num_days):
        in_day = days == d
        for j in range(num_nodes):
            sel = in_day & (trace.nodes == j)
            tasks.append(
                Task(
                    day_index=d,
                    node_id=j,
                    timestamps=trace.timestamps[sel],
                    contents=trace.contents[sel],
                )
            )
    return tasks
